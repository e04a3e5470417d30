//! SAC with VCR on the point-mass task; prints returns, temperature and
//! Q-error per evaluation.
//!
//! cargo run --release --example pointmass_sac -- [seed] [env_steps]

use std::time::Instant;

use vcr::agent::{run_training, AgentConfig};

fn main() -> vcr::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = AgentConfig::for_env("pointmass")?;
    if let Some(s) = args.next() {
        cfg.seed = s.parse().expect("seed must be an integer");
    }
    if let Some(s) = args.next() {
        cfg.total_env_steps = s.parse().expect("env_steps must be an integer");
    }
    let start = Instant::now();
    let run = run_training(&cfg, None)?;
    for (e, p) in run.evals.iter().zip(&run.probes) {
        println!(
            "step {:>6}  return {:8.2}  q_error {:.3}",
            e.env_step, e.mean_return, p.q_error
        );
    }
    println!(
        "final deterministic return {:.2} (alpha {:.4}) in {:.1}s",
        run.final_return,
        run.agent.bundle.alpha()?,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
