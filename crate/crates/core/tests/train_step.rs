mod common;

use std::f64::consts::{FRAC_1_SQRT_2, LN_2};

use rand_chacha::ChaCha8Rng;
use vcr::agent::discrete::{discrete_loss, discrete_targets, DiscreteBatch};
use vcr::agent::{Agent, AgentConfig};
use vcr::envs::{make_env, Action};
use vcr::losses::{LossWeights, Variant};
use vcr::models::{Head, ModelBundle, ModelSpec, Support};
use vcr::numcore::{Tape, Tensor};
use vcr::replay::{ReplayBuffer, Transition};

fn set(b: &mut ModelBundle, name: &str, rows: usize, cols: usize, data: &[f64]) {
    let t = Tensor::matrix(rows, cols, data.to_vec()).unwrap();
    *b.online.get_mut(name).unwrap() = t.clone();
    if b.target.contains(name) {
        *b.target.get_mut(name).unwrap() = t;
    }
}

/// Identity encoder and transition, projection = latent, and a Q head that
/// ignores the latent: action 0 puts (1/4, 3/4) on atoms {0, 1}, action 1
/// is uniform.
fn stub_bundle() -> ModelBundle {
    let spec = ModelSpec {
        obs_dim: 2,
        latent_dim: 2,
        hidden: 2,
        head: Head::Discrete {
            n_actions: 2,
            support: Support::new(0.0, 1.0, 2).unwrap(),
        },
    };
    let mut b = ModelBundle::new(spec, &mut common::rng(0)).unwrap();
    let eye = [1.0, 0.0, 0.0, 1.0];
    set(&mut b, "enc.0.w", 2, 2, &eye);
    set(&mut b, "enc.1.w", 2, 2, &eye);
    set(&mut b, "trans.0.w", 4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    set(&mut b, "trans.1.w", 2, 2, &eye);
    set(&mut b, "q.0.w", 2, 2, &eye);
    set(&mut b, "q.1.w", 2, 4, &[0.0; 8]);
    set(&mut b, "q.1.b", 1, 4, &[0.0, 3f64.ln(), 0.0, 0.0]);
    b
}

fn obs(x: f64, y: f64) -> Tensor {
    Tensor::vector(vec![x, y]).unwrap()
}

/// One episode s0=(1,0) -a1,r0-> s1=(1,1) -a0,r1,done-> s2=(0,1); segments
/// start at steps 0 and 1 with K = n = 1.
fn hand_batch() -> DiscreteBatch {
    let mut buf = ReplayBuffer::new(10, 0).unwrap();
    let states = [obs(1.0, 0.0), obs(1.0, 1.0), obs(0.0, 1.0)];
    for (t, (a, r)) in [(1, 0.0), (0, 1.0)].into_iter().enumerate() {
        buf.push(Transition {
            observation: states[t].clone(),
            action: Action::Discrete(a),
            reward: r,
            next_observation: states[t + 1].clone(),
            done: t == 1,
            truncated: false,
        });
    }
    let segs = vec![buf.segment_at(0, 0, 2).unwrap(), buf.segment_at(0, 1, 2).unwrap()];
    DiscreteBatch::from_segments::<ChaCha8Rng>(&segs, 1, 1, 0.5, None).unwrap()
}

#[test]
fn discrete_loss_matches_hand_trace() {
    let b = stub_bundle();
    let batch = hand_batch();
    let targets = discrete_targets(b.view(), &batch).unwrap();
    let w = LossWeights::new(1.0, 0.2).unwrap();
    let mut tape = Tape::new();
    let l = discrete_loss(&mut tape, b.view(), &batch, &targets, w, Variant::Vcr).unwrap();

    // segment 0: RL on action 1 (uniform) against the projected target
    // (0.625, 0.375) gives ln 2; SPR cos((1,0),(1,1)); VCR on action 0
    // against the terminal point mass at 1, other action uniform vs uniform.
    // segment 1: RL on action 0 against the point mass at 1; SPR
    // cos((1,1),(0,1)); its VCR step is padding.
    let ln34 = 0.75f64.ln();
    let rl = (LN_2 - ln34) / 2.0;
    let spr = -FRAC_1_SQRT_2;
    let vcr1 = -ln34 / 2.0;
    let vcr2 = LN_2 / 2.0;
    let total = rl + spr + 0.2 * vcr1 + 0.02 * vcr2;

    assert!((tape.scalar(l.rl) - rl).abs() < 1e-12);
    assert!((tape.scalar(l.spr) - spr).abs() < 1e-12);
    assert!((tape.scalar(l.vcr1.unwrap()) - vcr1).abs() < 1e-12);
    assert!((tape.scalar(l.vcr2.unwrap()) - vcr2).abs() < 1e-12);
    assert!((tape.scalar(l.total) - total).abs() < 1e-12);

    // the categorical bootstrap target of segment 0
    let g0 = &targets.gbar[0];
    assert!((g0.row(0)[0] - 0.625).abs() < 1e-15 && (g0.row(0)[1] - 0.375).abs() < 1e-15);
}

#[test]
fn zero_weights_reduce_to_the_rl_loss() {
    let b = stub_bundle();
    let batch = hand_batch();
    let targets = discrete_targets(b.view(), &batch).unwrap();
    for variant in Variant::ALL {
        let mut tape = Tape::new();
        let l = discrete_loss(
            &mut tape,
            b.view(),
            &batch,
            &targets,
            LossWeights::new(0.0, 0.0).unwrap(),
            variant,
        )
        .unwrap();
        assert_eq!(tape.scalar(l.total), tape.scalar(l.rl), "{variant}");
    }
}

#[test]
fn mse_variant_has_no_second_term() {
    let b = stub_bundle();
    let batch = hand_batch();
    let targets = discrete_targets(b.view(), &batch).unwrap();
    let mut tape = Tape::new();
    let l = discrete_loss(
        &mut tape,
        b.view(),
        &batch,
        &targets,
        LossWeights::new(1.0, 1.0).unwrap(),
        Variant::Mse,
    )
    .unwrap();
    assert!(l.vcr2.map_or(0.0, |v| tape.scalar(v)) == 0.0);
    let mut tape = Tape::new();
    let l = discrete_loss(
        &mut tape,
        b.view(),
        &batch,
        &targets,
        LossWeights::new(1.0, 1.0).unwrap(),
        Variant::SprOnly,
    )
    .unwrap();
    assert!(l.vcr1.is_none() && l.vcr2.is_none());
}

fn short_run(env: &str, seed: u64) -> Vec<f64> {
    let mut c = AgentConfig::for_env(env).unwrap();
    c.seed = seed;
    c.min_fill = 40;
    c.exploration_steps = 40;
    c.batch_size = 8;
    c.vcr_batch_size = 8;
    c.hidden = 16;
    c.latent_dim = 8;
    let mut agent = Agent::new(c.clone()).unwrap();
    let mut env = make_env(&c.env, 3).unwrap();
    let mut o = env.reset();
    let mut losses = Vec::new();
    for _ in 0..120 {
        let a = agent.act(&o).unwrap();
        let r = env.step(&a).unwrap();
        let over = r.episode_over();
        agent.observe(Transition {
            observation: o,
            action: a,
            reward: r.reward,
            next_observation: r.observation.clone(),
            done: r.done,
            truncated: r.truncated && !r.done,
        });
        o = if over { env.reset() } else { r.observation };
        if agent.ready() {
            losses.push(agent.train_step().unwrap().breakdown.total);
        }
    }
    losses.extend(agent.bundle.online.flatten());
    losses
}

#[test]
fn train_steps_are_seed_deterministic() {
    for env in ["chain", "pixelgrid", "pointmass"] {
        let a = short_run(env, 4);
        assert_eq!(a, short_run(env, 4), "{env}");
        assert_ne!(a, short_run(env, 5), "{env}");
    }
}
