//! Print the seeded fixture store: `cargo run -p voxline-agent --example dump_seed -- 42`.

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(42);
    println!("{}", voxline_agent::seed_store(seed).to_json());
}
