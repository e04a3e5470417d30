//! Trains a few short runs into a directory tree, then prints the aggregate
//! report and the per-step Q-error comparison read back from disk.
//!
//! cargo run --release --example aggregate_metrics -- [out_dir]

use std::path::PathBuf;

use vcr::experiment::{aggregate, emit_qerror_comparison, parse_config_str, run_plan, Executor};

fn main() -> vcr::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "runs/aggregate_example".into());
    let plan = parse_config_str(&format!(
        "env = chain\nvariant = VCR, SPR_only\nseeds = 1, 2, 3\ntotal_env_steps = 2000\neval_interval = 500\noutput_root = {out}\n"
    ))?;
    let outcome = run_plan(&plan, &Executor::InProcess)?;
    println!(
        "{} cells finished, {} failed\n",
        outcome.completed.len(),
        outcome.failed.len()
    );
    let roots = [PathBuf::from(&out)];
    print!("{}", aggregate(&roots)?.to_text());
    println!();
    print!("{}", emit_qerror_comparison(&roots)?.to_csv());
    Ok(())
}
