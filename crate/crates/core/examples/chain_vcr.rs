//! Trains the VCR agent on the 8-cell chain and prints the evaluation curve.
//!
//! cargo run --release --example chain_vcr -- [seed]

use std::time::Instant;

use vcr::agent::{run_training, AgentConfig};

fn main() -> vcr::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .map_or(Ok(1), |s| s.parse())
        .expect("seed must be an integer");
    let mut cfg = AgentConfig::for_env("chain")?;
    cfg.seed = seed;
    let start = Instant::now();
    let run = run_training(&cfg, None)?;
    for (e, p) in run.evals.iter().zip(&run.probes) {
        println!(
            "step {:>6}  return {:.3}  q_error {:.4}",
            e.env_step, e.mean_return, p.q_error
        );
    }
    println!(
        "final greedy return {} after {} updates ({:.1}s)",
        run.final_return,
        run.updates,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
