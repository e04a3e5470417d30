//! Paired VCR / SPR_only runs on the slippery pixel grid, comparing the
//! imagined-state Q-error over the last 20% of probes.
//!
//! cargo run --release --example pixelgrid_qerror -- [seed] [env_steps]

use vcr::agent::{run_training, AgentConfig};
use vcr::losses::Variant;

fn tail_mean(xs: &[f64]) -> f64 {
    let n = (xs.len() as f64 * 0.2).ceil().max(1.0) as usize;
    xs[xs.len() - n..].iter().sum::<f64>() / n as f64
}

fn main() -> vcr::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed must be an integer"));
    let steps: Option<u64> = args.next().map(|s| s.parse().expect("env_steps must be an integer"));
    for variant in [Variant::Vcr, Variant::SprOnly] {
        let mut cfg = AgentConfig::for_env("pixelgrid")?;
        cfg.seed = seed;
        cfg.variant = variant;
        if let Some(s) = steps {
            cfg.total_env_steps = s;
        }
        let run = run_training(&cfg, None)?;
        let qe: Vec<f64> = run.probes.iter().map(|p| p.q_error).collect();
        let curve: Vec<String> = qe.iter().map(|q| format!("{q:.3}")).collect();
        println!(
            "{variant:>8}: final return {:.3}, tail q_error {:.4}",
            run.final_return,
            tail_mean(&qe)
        );
        println!("          probes {}", curve.join(" "));
    }
    Ok(())
}
