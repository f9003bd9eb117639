use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;
use voxline_cli::bench::{self, BenchOptions, BenchOutput, DEFAULT_LLM_PROMPT, DEFAULT_TTS_TEXT};
use voxline_clients::llm::LlmConfig;
use voxline_clients::stt::SttSessionConfig;
use voxline_clients::tts::TtsConfig;
use voxline_core::LatencyModel;
use voxline_gateway::{serve, GatewayConfig, PipelineConfig};
use voxline_mocks::{MockSet, Scenario};

#[derive(Parser)]
#[command(
    name = "voxline",
    version,
    about = "Realtime voice agent: gateway, mock services and latency benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the WebSocket gateway. Endpoints come from STT_URL, OPENAI_BASE_URL,
    /// TTS_URL and friends unless --mocks is given.
    Serve(ServeArgs),
    /// Run the mock STT, LLM and TTS services until interrupted.
    Mock {
        #[arg(long, default_value = "calibrated")]
        scenario: String,
        /// STT listens here; LLM and TTS take the next two ports.
        #[arg(long, default_value = "127.0.0.1:8101")]
        bind: SocketAddr,
    },
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "BIND_ADDR", default_value = voxline_gateway::server::DEFAULT_BIND)]
    bind: SocketAddr,
    /// Serve a browser client from this directory at `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Mic gain while the agent speaks; 0 mutes the mic and disables barge-in.
    #[arg(long, default_value_t = 0.0)]
    echo_gate: f32,
    /// Spawn mock services on ephemeral ports with this scenario and use them.
    #[arg(long)]
    mocks: Option<String>,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 20)]
    iterations: usize,
    /// Leading iterations measured but excluded from the statistics.
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    /// Connection attempts beyond the first before giving up.
    #[arg(long, default_value_t = 2)]
    retries: usize,
    /// Preset name (calibrated, receptionist) or scenario JSON file for the
    /// auto-spawned mocks.
    #[arg(long, default_value = "calibrated")]
    scenario: String,
    /// Use the endpoints from the environment instead of spawning mocks.
    #[arg(long)]
    external: bool,
    /// Write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn options(&self) -> BenchOptions {
        BenchOptions {
            iterations: self.iterations,
            warmup: self.warmup,
            retries: self.retries,
        }
    }
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Last audio frame to final transcript.
    Stt {
        #[command(flatten)]
        common: Common,
        /// Audio per utterance; defaults to the scenario's first turn.
        #[arg(long)]
        utterance_ms: Option<u32>,
    },
    /// Time to first token, inter-token gap and throughput.
    Llm {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = DEFAULT_LLM_PROMPT)]
        prompt: String,
    },
    /// Time to first audio byte and real-time factor.
    Tts {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = DEFAULT_TTS_TEXT)]
        text: String,
    },
    /// Full turns through a gateway, with the per-turn timeline.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Gateway WebSocket URL; otherwise one is started in-process.
        #[arg(long)]
        gateway: Option<String>,
    },
    /// Analytic time-to-first-audio from given component latencies.
    Estimate {
        #[arg(long)]
        stt: Option<f64>,
        #[arg(long)]
        llm: Option<f64>,
        #[arg(long)]
        tts: Option<f64>,
        #[arg(long)]
        first_sentence: Option<f64>,
        #[arg(long)]
        tts_ttfb: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

type AnyError = Box<dyn std::error::Error + Send + Sync>;

fn load_scenario(name: &str) -> Result<Scenario, AnyError> {
    Ok(match name {
        "calibrated" => Scenario::calibrated(),
        "receptionist" => Scenario::receptionist(),
        path => Scenario::load(path)?,
    })
}

fn pipeline_for(mocks: &MockSet) -> PipelineConfig {
    PipelineConfig::new(
        SttSessionConfig::new(mocks.stt.url()),
        LlmConfig::new(mocks.llm.url(), "not-needed", "mock"),
        TtsConfig::new(mocks.tts.url()),
    )
}

/// Endpoint configuration for a bench run, and the mocks backing it if any.
async fn endpoints(common: &Common) -> Result<(PipelineConfig, Option<MockSet>, Scenario), AnyError> {
    let scenario = load_scenario(&common.scenario)?;
    if common.external {
        return Ok((PipelineConfig::from_env(), None, scenario));
    }
    let mocks = MockSet::spawn(scenario.clone()).await?;
    Ok((pipeline_for(&mocks), Some(mocks), scenario))
}

fn emit(output: &BenchOutput, out: Option<&PathBuf>) -> Result<(), AnyError> {
    print!("{}", output.render());
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_string_pretty(output)?)?;
    }
    Ok(())
}

async fn run_bench(cmd: BenchCommand) -> Result<(), AnyError> {
    let (output, out, mocks) = match cmd {
        BenchCommand::Estimate {
            stt,
            llm,
            tts,
            first_sentence,
            tts_ttfb,
            out,
        } => {
            let model = LatencyModel {
                t_stt_ms: stt,
                t_llm_ms: llm,
                t_tts_ms: tts,
                t_llm_first_sentence_ms: first_sentence,
                t_tts_ttfb_ms: tts_ttfb,
            };
            (bench::estimate(model)?, out, None)
        }
        BenchCommand::Stt { common, utterance_ms } => {
            let (config, mocks, scenario) = endpoints(&common).await?;
            let ms = utterance_ms.unwrap_or(scenario.turn(0).utterance_audio_ms.ceil() as u32);
            let output = bench::bench_stt(&config.stt, ms, &common.options()).await?;
            (output, common.out, mocks)
        }
        BenchCommand::Llm { common, prompt } => {
            let (config, mocks, _) = endpoints(&common).await?;
            let output = bench::bench_llm(&config.agent.llm, &prompt, &common.options()).await?;
            (output, common.out, mocks)
        }
        BenchCommand::Tts { common, text } => {
            let (config, mocks, _) = endpoints(&common).await?;
            let output = bench::bench_tts(&config.tts, &text, &common.options()).await?;
            (output, common.out, mocks)
        }
        BenchCommand::Pipeline { common, gateway } => {
            let scenario = load_scenario(&common.scenario)?;
            let opts = common.options();
            let output = match gateway {
                Some(url) => bench::bench_pipeline(&url, &scenario, &opts).await?,
                None => {
                    let (config, mocks, _) = endpoints(&common).await?;
                    let gw = serve(GatewayConfig::new("127.0.0.1:0".parse()?, config)).await?;
                    let result = bench::bench_pipeline(&gw.ws_url(), &scenario, &opts).await;
                    gw.shutdown().await;
                    if let Some(m) = mocks {
                        m.shutdown().await;
                    }
                    result?
                }
            };
            (output, common.out, None)
        }
    };
    let result = emit(&output, out.as_ref());
    if let Some(m) = mocks {
        m.shutdown().await;
    }
    result
}

async fn run(cli: Cli) -> Result<(), AnyError> {
    match cli.command {
        Command::Serve(args) => {
            let mut mocks = None;
            let mut pipeline = match &args.mocks {
                Some(name) => {
                    let m = MockSet::spawn(load_scenario(name)?).await?;
                    let p = pipeline_for(&m);
                    mocks = Some(m);
                    p
                }
                None => PipelineConfig::from_env(),
            };
            pipeline.echo_gate_attenuation = args.echo_gate;
            let mut config = GatewayConfig::new(args.bind, pipeline);
            config.static_dir = args.static_dir;
            let gateway = serve(config).await?;
            println!("listening on {} (websocket {})", gateway.http_url(), gateway.ws_url());
            tokio::signal::ctrl_c().await?;
            gateway.shutdown().await;
            if let Some(m) = mocks {
                m.shutdown().await;
            }
        }
        Command::Mock { scenario, bind } => {
            let mocks = MockSet::spawn_at(load_scenario(&scenario)?, bind).await?;
            println!("stt {}", mocks.stt.url());
            println!("llm {}", mocks.llm.url());
            println!("tts {}", mocks.tts.url());
            tokio::signal::ctrl_c().await?;
            mocks.shutdown().await;
        }
        Command::Bench(cmd) => run_bench(cmd).await?,
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
