//! Finite-difference check of the full discrete VCR loss on a small random
//! batch, printed per variant.
//!
//! cargo run --release --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcr::agent::discrete::{discrete_loss, discrete_targets, DiscreteBatch};
use vcr::envs::Action;
use vcr::losses::{LossWeights, Variant};
use vcr::models::{Head, ModelBundle, ModelSpec, Support};
use vcr::numcore::{finite_diff_check, Tensor};
use vcr::replay::{ReplayBuffer, Transition};

fn main() -> vcr::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let spec = ModelSpec {
        obs_dim: 4,
        latent_dim: 3,
        hidden: 6,
        head: Head::Discrete {
            n_actions: 3,
            support: Support::new(-1.0, 1.0, 5)?,
        },
    };
    let mut bundle = ModelBundle::new(spec, &mut rng)?;
    // off-kink biases so central differences see a smooth function
    let names: Vec<String> = bundle
        .online
        .names()
        .filter(|n| n.ends_with(".b"))
        .map(String::from)
        .collect();
    for n in &names {
        bundle
            .online
            .get_mut(n)?
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = rng.random_range(0.05..0.3));
    }

    let mut buf = ReplayBuffer::new(100, 0)?;
    for t in 0..12 {
        let o = |s: usize| Tensor::vector((0..4).map(|i| ((s * 4 + i) as f64 * 0.7).sin().abs()).collect());
        buf.push(Transition {
            observation: o(t)?,
            action: Action::Discrete(rng.random_range(0..3)),
            reward: rng.random_range(-0.5..0.5),
            next_observation: o(t + 1)?,
            done: t == 11,
            truncated: false,
        });
    }
    let (k, n) = (3, 2);
    let segs = buf.sample_segments(4, k, n, &mut rng)?;
    let batch = DiscreteBatch::from_segments::<ChaCha8Rng>(&segs, k, n, 0.9, None)?;
    let targets = discrete_targets(bundle.view(), &batch)?;
    let weights = LossWeights::new(1.0, 1.0)?;
    for variant in Variant::ALL {
        let err = finite_diff_check(
            |tape, p| Ok(discrete_loss(tape, bundle.view_with(p), &batch, &targets, weights, variant)?.total),
            &bundle.online,
            1e-6,
        )?;
        println!("{:<8} max relative error {err:.2e}", variant.name());
    }
    Ok(())
}
