//! Short chain runs of every loss variant, printing the mean of each loss
//! term over the run.
//!
//! cargo run --release --example ablation_variants -- [env_steps]

use vcr::agent::{run_training, AgentConfig};
use vcr::losses::Variant;

fn main() -> vcr::Result<()> {
    let steps: u64 = std::env::args()
        .nth(1)
        .map_or(3000, |s| s.parse().expect("env_steps must be an integer"));
    println!(
        "{:<8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "variant", "return", "rl", "spr", "vcr1", "vcr2"
    );
    for variant in Variant::ALL {
        let mut cfg = AgentConfig::for_env("chain")?;
        cfg.variant = variant;
        cfg.total_env_steps = steps;
        let run = run_training(&cfg, None)?;
        let mut sums = [0.0; 4];
        let mut rows = 0.0f64;
        for line in run.metrics_csv.lines().filter(|l| l.starts_with("train,")) {
            let f: Vec<f64> = line
                .split(',')
                .skip(3)
                .take(4)
                .map(|x| x.parse().unwrap_or(0.0))
                .collect();
            for (s, x) in sums.iter_mut().zip(f) {
                *s += x;
            }
            rows += 1.0;
        }
        let m: Vec<String> = sums.iter().map(|s| format!("{:>8.4}", s / rows.max(1.0))).collect();
        println!("{:<8} {:>8.3} {}", variant.name(), run.final_return, m.join(" "));
    }
    Ok(())
}
