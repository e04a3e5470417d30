//! Fills a replay buffer with chain episodes and shows sampled K + n
//! segments with their validity masks and n-step windows.
//!
//! cargo run --release --example replay_segments

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcr::envs::{make_env, Action, EnvParams};
use vcr::losses::nstep_window;
use vcr::replay::{ReplayBuffer, Transition};

fn main() -> vcr::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = EnvParams::named("chain");
    params.chain.max_episode_length = 12;
    let mut env = make_env(&params, 0)?;
    let mut buf = ReplayBuffer::new(60, 10)?;
    let mut obs = env.reset();
    for _ in 0..80 {
        let a = Action::Discrete(rng.random_range(0..2));
        let r = env.step(&a)?;
        let over = r.episode_over();
        buf.push(Transition {
            observation: obs,
            action: a,
            reward: r.reward,
            next_observation: r.observation.clone(),
            done: r.done,
            truncated: r.truncated && !r.done,
        });
        obs = if over { env.reset() } else { r.observation };
    }
    println!(
        "stored {} transitions in {} episodes {:?}",
        buf.len(),
        buf.num_episodes(),
        buf.episode_lengths()
    );
    let (k, n) = (3, 2);
    println!("valid starts for K={k}, n={n}: {}", buf.start_index_count(k, n));
    for seg in buf.sample_segments(4, k, n, &mut rng)? {
        let pos: Vec<String> = seg
            .observations
            .iter()
            .map(|o| {
                o.data()
                    .iter()
                    .position(|&x| x == 1.0)
                    .map_or("-".into(), |i| i.to_string())
            })
            .collect();
        let mask: String = seg.valid_mask.iter().map(|&v| if v { '1' } else { '.' }).collect();
        let g: Vec<String> = (0..=k)
            .map(|j| nstep_window(&seg, j, n, 0.99).map_or("pad".into(), |w| format!("{:.3}", w.reward_sum)))
            .collect();
        println!(
            "cells [{}]  valid {mask}  n-step rewards {}",
            pos.join(" "),
            g.join(" ")
        );
    }
    Ok(())
}
