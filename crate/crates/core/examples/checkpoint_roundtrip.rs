//! Saves a trained bundle, reloads it and checks the greedy policy and all
//! parameters survive bit for bit.
//!
//! cargo run --release --example checkpoint_roundtrip

use vcr::agent::{run_training, AgentConfig};
use vcr::numcore::checkpoint;

fn main() -> vcr::Result<()> {
    let mut cfg = AgentConfig::for_env("chain")?;
    cfg.total_env_steps = 2000;
    let run = run_training(&cfg, None)?;
    let online = &run.agent.bundle.online;
    let path = std::env::temp_dir().join("vcr_checkpoint_example.vcrp");
    checkpoint::save(online, &path)?;
    let back = checkpoint::load(&path)?;
    let same = back
        .flatten()
        .iter()
        .zip(online.flatten())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    println!(
        "{} entries, {} scalars, {} bytes, identical: {same}",
        back.len(),
        back.num_scalars(),
        checkpoint::to_bytes(&back).len()
    );
    Ok(())
}
