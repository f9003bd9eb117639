use std::process::Command;

use voxline_cli::bench::{bench_llm, bench_stt, bench_tts, BenchError, BenchOptions, BenchOutput};
use voxline_clients::llm::LlmConfig;
use voxline_clients::stt::SttSessionConfig;
use voxline_clients::tts::TtsConfig;
use voxline_mocks::{MockSet, Scenario, ScenarioTurn, ScriptStep};

fn voxline(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_voxline")).args(args).output().unwrap()
}

fn opts(iterations: usize, warmup: usize) -> BenchOptions {
    BenchOptions {
        iterations,
        warmup,
        retries: 0,
    }
}

#[tokio::test]
async fn stt_p50_tracks_the_final_delay() {
    let mocks = MockSet::spawn(Scenario::calibrated()).await.unwrap();
    let out = bench_stt(&SttSessionConfig::new(mocks.stt.url()), 1000, &opts(20, 1))
        .await
        .unwrap();
    let r = &out.reports[0];
    assert_eq!(r.iterations, 20);
    assert!((r.p50_ms - 337.0).abs() <= 15.0, "{r:?}");
    mocks.shutdown().await;
}

#[tokio::test]
async fn llm_throughput_is_consistent_with_the_gap() {
    let words: Vec<String> = (0..100).map(|i| format!("w{i} ")).collect();
    let mut turn = ScenarioTurn::simple("hi", "unused.");
    turn.llm_ttft_ms = 50.0;
    turn.llm_inter_token_ms = 34.0;
    turn.llm_script = vec![ScriptStep::Text { tokens: words }];
    let mocks = MockSet::spawn(Scenario::new("throughput", vec![turn])).await.unwrap();
    let config = LlmConfig::new(mocks.llm.url(), "k", "m");
    let out = bench_llm(&config, "hi", &opts(2, 0)).await.unwrap();
    let t = out.throughput.unwrap();
    assert_eq!(t.tokens_per_iteration, [100, 100]);
    assert_eq!(t.gaps, 198);
    assert!((t.tokens_per_second - 1000.0 / t.mean_gap_ms).abs() / t.tokens_per_second < 0.1);
    assert!((t.mean_gap_ms - 34.0).abs() < 5.0, "{t:?}");
    mocks.shutdown().await;
}

#[tokio::test]
async fn single_iteration_collapses_the_stats() {
    let mocks = MockSet::spawn(Scenario::calibrated()).await.unwrap();
    let out = bench_tts(&TtsConfig::new(mocks.tts.url()), "One two three four.", &opts(1, 0))
        .await
        .unwrap();
    let r = &out.reports[0];
    assert_eq!((r.min_ms, r.p50_ms, r.max_ms), (r.p50_ms, r.mean_ms, r.p50_ms));
    assert!(r.p50_ms >= 316.0);
    assert!(out.tts_rtf.unwrap() > 0.0);
    mocks.shutdown().await;
}

#[tokio::test]
async fn unreachable_endpoint_fails_after_retries() {
    let config = SttSessionConfig::new("ws://127.0.0.1:9/v1/listen");
    let err = bench_stt(
        &config,
        200,
        &BenchOptions {
            retries: 2,
            ..opts(1, 0)
        },
    )
    .await
    .unwrap_err();
    match err {
        BenchError::Endpoint { target, message } => {
            assert_eq!(target, "stt");
            assert!(message.contains("3 attempts"), "{message}");
        }
        other => panic!("{other}"),
    }
}

#[test]
fn estimate_prints_and_exports_the_same_numbers() {
    let path = std::env::temp_dir().join(format!("voxline-estimate-{}.json", std::process::id()));
    let out = voxline(&[
        "bench",
        "estimate",
        "--stt",
        "400",
        "--llm",
        "800",
        "--tts",
        "400",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("turn-based: 1600 ms"), "{stdout}");
    assert!(!stdout.contains("streaming"));
    let exported: BenchOutput = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(exported.estimate.unwrap().turn_based_ms, Some(1600.0));
    std::fs::remove_file(path).unwrap();
}

#[test]
fn invalid_input_exits_nonzero() {
    for args in [
        &["bench", "estimate", "--stt", "400"][..],
        &["bench", "estimate", "--stt", "-1", "--llm", "1", "--tts", "1"],
        &["bench", "tts", "--iterations", "0"],
        &["bench", "pipeline", "--scenario", "/nonexistent/scenario.json"],
    ] {
        let out = voxline(args);
        assert!(!out.status.success(), "{args:?} succeeded");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"), "{args:?}");
    }
}

#[test]
fn help_lists_the_bench_targets() {
    let out = voxline(&["bench", "--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["stt", "llm", "tts", "pipeline", "estimate"] {
        assert!(text.contains(sub), "{sub} missing from {text}");
    }
}
