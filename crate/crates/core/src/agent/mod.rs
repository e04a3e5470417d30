//! Training loops for the discrete (distributional Q) and continuous (SAC)
//! branches: action selection, augmentation, update scheduling and EMA
//! maintenance.

mod augment;
mod config;
pub mod continuous;
pub mod discrete;
mod runner;

pub use augment::{augment, shift};
pub use config::{AgentConfig, AugmentSpec};
pub use discrete::{act_discrete, greedy_action};
pub use runner::{run_training, EvalRow, ProbeRow, RunArtifacts, METRICS_HEADER, QERROR_HEADER};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envs::{env_spec, Action, ActionSpace, EnvSpec};
use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, LossWeights, Variant};
use crate::models::{Head, ModelBundle, ModelSpec, Support};
use crate::numcore::{AdamConfig, AdamState, Tape, Tensor};
use crate::replay::{ReplayBuffer, Transition};
use continuous::{
    actor_alpha_loss, aux_loss, aux_targets, critic_loss, gaussian_noise, random_action, soft_targets, ContinuousBatch,
};
use discrete::{discrete_loss, discrete_targets, DiscreteBatch};

/// Independent random streams of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Env = 1,
    Explore = 2,
    Replay = 3,
    Augment = 4,
    Policy = 5,
    Vcr = 6,
    EvalEnv = 7,
}

/// `ChaCha8` generator for `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream as u64);
    r
}

/// Network shapes implied by a config and its environment.
pub fn model_spec(cfg: &AgentConfig, env: &EnvSpec) -> Result<ModelSpec> {
    let head = match env.action_space {
        ActionSpace::Discrete(n) => Head::Discrete {
            n_actions: n,
            support: Support::new(cfg.v_min, cfg.v_max, cfg.num_atoms)?,
        },
        ActionSpace::Continuous { dim, .. } => Head::Continuous { action_dim: dim },
    };
    Ok(ModelSpec {
        obs_dim: env.observation_dim,
        latent_dim: cfg.latent_dim,
        hidden: cfg.hidden,
        head,
    })
}

/// Diagnostics of one gradient update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub breakdown: LossBreakdown,
    pub grad_norm: f64,
    pub actor_loss: Option<f64>,
    pub alpha_loss: Option<f64>,
    pub alpha: Option<f64>,
    pub spr_zero_norm: usize,
}

struct Optimizers {
    /// Joint (discrete) or critic + encoder (continuous).
    main: AdamState,
    aux: Option<AdamState>,
    actor: Option<AdamState>,
    alpha: Option<AdamState>,
}

/// Learner state: networks, replay, optimizers and random streams.
pub struct Agent {
    cfg: AgentConfig,
    env: EnvSpec,
    pub bundle: ModelBundle,
    pub replay: ReplayBuffer,
    opt: Optimizers,
    explore_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    augment_rng: ChaCha8Rng,
    policy_rng: ChaCha8Rng,
    vcr_rng: ChaCha8Rng,
    updates: u64,
    env_steps: u64,
}

const AUX_PREFIXES: [&str; 5] = ["enc.", "trans.", "proj.", "critic1.", "critic2."];

impl Agent {
    pub fn new(cfg: AgentConfig) -> Result<Self> {
        cfg.validate()?;
        let env = env_spec(&cfg.env)?;
        let spec = model_spec(&cfg, &env)?;
        let mut bundle = ModelBundle::new(spec, &mut stream_rng(cfg.seed, Stream::Init))?;
        let adam = |lr: f64| AdamConfig {
            lr,
            ..AdamConfig::default()
        };
        let opt = if bundle.is_discrete() {
            Optimizers {
                main: AdamState::new(&bundle.online, adam(cfg.lr))?,
                aux: None,
                actor: None,
                alpha: None,
            }
        } else {
            bundle.online.get_mut("alpha.log")?.data_mut()[0] = cfg.init_temperature.ln();
            Optimizers {
                main: AdamState::for_prefixes(&bundle.online, &["enc.", "critic1.", "critic2."], adam(cfg.lr))?,
                aux: Some(AdamState::for_prefixes(&bundle.online, &AUX_PREFIXES, adam(cfg.lr))?),
                actor: Some(AdamState::for_prefixes(
                    &bundle.online,
                    &["actor."],
                    adam(cfg.actor_lr),
                )?),
                alpha: Some(AdamState::for_prefixes(
                    &bundle.online,
                    &["alpha."],
                    AdamConfig {
                        lr: cfg.alpha_lr,
                        beta1: 0.5,
                        beta2: 0.999,
                        eps: 1e-8,
                    },
                )?),
            }
        };
        let replay = ReplayBuffer::new(cfg.replay_capacity, cfg.min_fill)?;
        let s = cfg.seed;
        Ok(Self {
            env,
            bundle,
            replay,
            opt,
            explore_rng: stream_rng(s, Stream::Explore),
            replay_rng: stream_rng(s, Stream::Replay),
            augment_rng: stream_rng(s, Stream::Augment),
            policy_rng: stream_rng(s, Stream::Policy),
            vcr_rng: stream_rng(s, Stream::Vcr),
            updates: 0,
            env_steps: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn env_spec(&self) -> &EnvSpec {
        &self.env
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Behaviour action at the current env step: ε-greedy (discrete), or
    /// uniform during initial exploration and a policy sample afterwards
    /// (continuous).
    pub fn act(&mut self, obs: &Tensor) -> Result<Action> {
        if self.bundle.is_discrete() {
            let eps = self.cfg.epsilon_at(self.env_steps);
            act_discrete(&self.bundle, obs, eps, &mut self.explore_rng)
        } else {
            let dim = self.bundle.arch().action_dim()?;
            if self.env_steps < self.cfg.exploration_steps as u64 {
                return Ok(random_action(dim, &mut self.explore_rng));
            }
            let z = self.bundle.encode(obs, false)?;
            Ok(Action::Continuous(
                self.bundle.policy_sample(&z, &mut self.explore_rng)?.0,
            ))
        }
    }

    /// Greedy (discrete) or `tanh(mean)` (continuous) action.
    pub fn act_eval(&self, obs: &Tensor) -> Result<Action> {
        if self.bundle.is_discrete() {
            Ok(Action::Discrete(greedy_action(&self.bundle, obs)?))
        } else {
            let z = self.bundle.encode(obs, false)?;
            Ok(Action::Continuous(self.bundle.deterministic_action(&z)?))
        }
    }

    /// Stores a transition and advances the env-step counter.
    pub fn observe(&mut self, t: Transition) {
        self.replay.push(t);
        self.env_steps += 1;
    }

    /// Whether updates may run.
    pub fn ready(&self) -> bool {
        self.replay.ready()
            && self.replay.num_episodes() > 0
            && self.replay.start_index_count(self.cfg.k, self.segment_tail()) > 0
    }

    fn segment_tail(&self) -> usize {
        if self.bundle.is_discrete() {
            self.cfg.n
        } else {
            1
        }
    }

    fn base_weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.cfg.lambda_spr, self.cfg.lambda_vcr)
    }

    /// One gradient update of the configured branch.
    pub fn train_step(&mut self) -> Result<UpdateStats> {
        let stats = if self.bundle.is_discrete() {
            self.train_step_discrete()?
        } else {
            self.train_step_continuous()?
        };
        self.updates += 1;
        Ok(stats)
    }

    fn train_step_discrete(&mut self) -> Result<UpdateStats> {
        let cfg = &self.cfg;
        let segs = self
            .replay
            .sample_segments(cfg.batch_size, cfg.k, cfg.n, &mut self.replay_rng)?;
        let aug = (cfg.augment.enabled && self.env.is_image()).then_some((&cfg.augment, &mut self.augment_rng));
        let batch = DiscreteBatch::from_segments(&segs, cfg.k, cfg.n, cfg.gamma, aug)?;
        let weights = self.base_weights()?.ramped(self.env_steps, cfg.warmup_steps())?;
        let targets = discrete_targets(self.bundle.view(), &batch)?;
        let mut tape = Tape::new();
        let loss = discrete_loss(&mut tape, self.bundle.view(), &batch, &targets, weights, cfg.variant)?;
        let value = |v: Option<_>| v.map_or(0.0, |v| tape.scalar(v));
        let breakdown = LossBreakdown {
            rl_loss: tape.scalar(loss.rl),
            spr_loss: tape.scalar(loss.spr),
            vcr1_loss: value(loss.vcr1),
            vcr2_loss: value(loss.vcr2),
            total: tape.scalar(loss.total),
            weights,
        };
        check_finite(&breakdown, self.updates)?;
        self.bundle.online.zero_grads();
        tape.backward(loss.total, &mut self.bundle.online)?;
        let grad_norm = self.bundle.online.clip_grad_norm(cfg.max_grad_norm);
        self.opt.main.step(&mut self.bundle.online)?;
        self.bundle.ema_update(cfg.tau_encoder, cfg.tau_value)?;
        Ok(UpdateStats {
            breakdown,
            grad_norm,
            actor_loss: None,
            alpha_loss: None,
            alpha: None,
            spr_zero_norm: loss.spr_zero_norm,
        })
    }

    fn train_step_continuous(&mut self) -> Result<UpdateStats> {
        let cfg = self.cfg.clone();
        let dim = self.bundle.arch().action_dim()?;

        // critic
        let segs = self
            .replay
            .sample_segments(cfg.batch_size, 1, 0, &mut self.replay_rng)?;
        let batch = ContinuousBatch::from_segments(&segs)?;
        let eps = gaussian_noise(batch.batch, dim, &mut self.policy_rng);
        let y = soft_targets(
            self.bundle.view(),
            &batch.observations[1],
            &batch.rewards[0],
            &batch.dones[0],
            &batch.valid[0],
            cfg.gamma,
            eps,
        )?;
        let mut tape = Tape::new();
        let l = critic_loss(
            &mut tape,
            self.bundle.view(),
            &batch.observations[0],
            &batch.actions[0],
            &y,
        )?;
        let rl = tape.scalar(l);
        if !rl.is_finite() {
            return Err(Error::NonFinite(format!("critic loss at update {}", self.updates)));
        }
        self.bundle.online.zero_grads();
        tape.backward(l, &mut self.bundle.online)?;
        let grad_norm = self.bundle.online.clip_grad_norm(cfg.max_grad_norm);
        self.opt.main.step(&mut self.bundle.online)?;

        // actor and temperature
        let (mut actor_loss, mut alpha_loss) = (None, None);
        if self.updates.is_multiple_of(cfg.actor_update_freq as u64) {
            let eps = gaussian_noise(batch.batch, dim, &mut self.policy_rng);
            let alpha_now = self.bundle.alpha()?;
            let mut tape = Tape::new();
            let a = actor_alpha_loss(
                &mut tape,
                self.bundle.view(),
                &batch.observations[0],
                eps,
                alpha_now,
                -(dim as f64),
            )?;
            let (al, tl) = (tape.scalar(a.actor), tape.scalar(a.alpha));
            if !al.is_finite() || !tl.is_finite() {
                return Err(Error::NonFinite(format!("actor/alpha loss at update {}", self.updates)));
            }
            let total = tape.add(a.actor, a.alpha)?;
            self.bundle.online.zero_grads();
            tape.backward(total, &mut self.bundle.online)?;
            self.bundle.online.clip_grad_norm(cfg.max_grad_norm);
            step(&mut self.opt.actor, &mut self.bundle)?;
            step(&mut self.opt.alpha, &mut self.bundle)?;
            actor_loss = Some(al);
            alpha_loss = Some(tl);
        }

        // self-predictive and value-consistency terms
        let weights = self.base_weights()?.ramped(self.env_steps, cfg.warmup_steps())?;
        let segs = self
            .replay
            .sample_segments(cfg.vcr_batch_size, cfg.k, 1, &mut self.replay_rng)?;
        let batch = ContinuousBatch::from_segments(&segs)?;
        let samples = if cfg.variant == Variant::SprOnly {
            0
        } else {
            cfg.vcr_samples
        };
        let targets = aux_targets(self.bundle.view(), &batch, cfg.k, cfg.gamma, samples, &mut self.vcr_rng)?;
        let mut tape = Tape::new();
        let aux = aux_loss(
            &mut tape,
            self.bundle.view(),
            &batch,
            &targets,
            cfg.k,
            weights,
            cfg.variant,
        )?;
        let value = |v: Option<_>| v.map_or(0.0, |v| tape.scalar(v));
        let (spr, vcr1, vcr2) = (tape.scalar(aux.spr), value(aux.vcr1), value(aux.vcr2));
        let breakdown = LossBreakdown {
            rl_loss: rl,
            spr_loss: spr,
            vcr1_loss: vcr1,
            vcr2_loss: vcr2,
            total: rl + tape.scalar(aux.total),
            weights,
        };
        check_finite(&breakdown, self.updates)?;
        self.bundle.online.zero_grads();
        tape.backward(aux.total, &mut self.bundle.online)?;
        self.bundle.online.clip_grad_norm(cfg.max_grad_norm);
        step(&mut self.opt.aux, &mut self.bundle)?;

        if self.updates.is_multiple_of(cfg.critic_target_update_freq as u64) {
            self.bundle.ema_update(cfg.tau_encoder, cfg.tau_value)?;
        }
        Ok(UpdateStats {
            breakdown,
            grad_norm,
            actor_loss,
            alpha_loss,
            alpha: Some(self.bundle.alpha()?),
            spr_zero_norm: aux.spr_zero_norm,
        })
    }
}

fn step(opt: &mut Option<AdamState>, bundle: &mut ModelBundle) -> Result<()> {
    opt.as_mut().expect("continuous optimizer").step(&mut bundle.online)
}

fn check_finite(b: &LossBreakdown, update: u64) -> Result<()> {
    let parts = [
        ("rl", b.rl_loss),
        ("spr", b.spr_loss),
        ("vcr1", b.vcr1_loss),
        ("vcr2", b.vcr2_loss),
        ("total", b.total),
    ];
    match parts.iter().find(|(_, v)| !v.is_finite()) {
        Some((name, v)) => Err(Error::NonFinite(format!(
            "{name} loss = {v} at update {update} (rl {}, spr {}, vcr1 {}, vcr2 {})",
            b.rl_loss, b.spr_loss, b.vcr1_loss, b.vcr2_loss
        ))),
        None => Ok(()),
    }
}
