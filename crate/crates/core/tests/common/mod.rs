#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcr::agent::continuous::random_action;
use vcr::envs::Action;
use vcr::models::{Head, ModelBundle, ModelSpec, Support};
use vcr::numcore::Tensor;
use vcr::replay::{ReplayBuffer, TrajectorySegment, Transition};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Upper 99% point of χ² with `df` degrees of freedom (Wilson-Hilferty).
pub fn chi2_99(df: usize) -> f64 {
    let k = df as f64;
    let z = 2.326_347_874;
    let c = 2.0 / (9.0 * k);
    k * (1.0 - c + z * c.sqrt()).powi(3)
}

/// Pearson statistic of `counts` against a uniform expectation.
pub fn chi2_uniform(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let e = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

/// Randomizes every bias into `[0.05, 0.3)` so ReLUs sit away from the kink.
pub fn lift_biases(b: &mut ModelBundle, rng: &mut ChaCha8Rng) {
    for ps in [&mut b.online, &mut b.target] {
        let names: Vec<String> = ps.names().filter(|n| n.ends_with(".b")).map(String::from).collect();
        for n in names {
            ps.get_mut(&n)
                .unwrap()
                .data_mut()
                .iter_mut()
                .for_each(|x| *x = rng.random_range(0.05..0.3));
        }
    }
}

pub fn support() -> Support {
    Support::new(-1.0, 2.0, 4).unwrap()
}

pub fn discrete_bundle(obs: usize) -> ModelBundle {
    let spec = ModelSpec {
        obs_dim: obs,
        latent_dim: 3,
        hidden: 5,
        head: Head::Discrete {
            n_actions: 2,
            support: support(),
        },
    };
    let mut rng = rng(11);
    let mut b = ModelBundle::new(spec, &mut rng).unwrap();
    lift_biases(&mut b, &mut rng);
    b
}

pub fn continuous_bundle() -> ModelBundle {
    let spec = ModelSpec {
        obs_dim: 3,
        latent_dim: 4,
        hidden: 6,
        head: Head::Continuous { action_dim: 2 },
    };
    let mut b = ModelBundle::new(spec, &mut rng(4)).unwrap();
    let names: Vec<String> = b.target.names().map(String::from).collect();
    for n in names {
        b.target
            .get_mut(&n)
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|x| *x *= 0.9);
    }
    b
}

fn toy_obs(s: usize) -> Tensor {
    Tensor::vector(vec![(s as f64 * 0.37).sin(), (s as f64).cos(), 0.5]).unwrap()
}

/// Four discrete segments from two short episodes, some running off the end.
pub fn discrete_segments(window: usize) -> Vec<TrajectorySegment> {
    let mut buf = ReplayBuffer::new(100, 0).unwrap();
    let mut r = rng(5);
    for len in [6, 9] {
        for t in 0..len {
            buf.push(Transition {
                observation: toy_obs(t),
                action: Action::Discrete(r.random_range(0..2)),
                reward: if t + 1 == len { 1.0 } else { 0.0 },
                next_observation: toy_obs(t + 1),
                done: t + 1 == len,
                truncated: false,
            });
        }
    }
    [(0, 0), (0, 3), (1, 1), (1, 7)]
        .iter()
        .map(|&(e, s)| buf.segment_at(e, s, window).unwrap())
        .collect()
}

/// Four continuous segments: one terminal and one truncated episode.
pub fn continuous_segments(window: usize) -> Vec<TrajectorySegment> {
    let mut buf = ReplayBuffer::new(100, 0).unwrap();
    let mut r = rng(8);
    for len in [5, 8] {
        for t in 0..len {
            buf.push(Transition {
                observation: toy_obs(t),
                action: random_action(2, &mut r),
                reward: 0.1 * t as f64,
                next_observation: toy_obs(t + 1),
                done: t + 1 == len && len == 5,
                truncated: t + 1 == len && len == 8,
            });
        }
    }
    [(0, 0), (0, 3), (1, 2), (1, 6)]
        .iter()
        .map(|&(e, s)| buf.segment_at(e, s, window).unwrap())
        .collect()
}
