use std::fmt::Display;
use std::str::FromStr;

use crate::envs::{EnvParams, ENV_NAMES};
use crate::error::{Error, Result};
use crate::losses::Variant;

/// Random shift and intensity augmentation for image observations.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSpec {
    pub enabled: bool,
    pub shift_pixels: usize,
    pub intensity_scale: f64,
}

impl AugmentSpec {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            shift_pixels: 0,
            intensity_scale: 0.0,
        }
    }
}

/// Every hyperparameter of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub env: EnvParams,
    pub variant: Variant,
    pub seed: u64,
    /// Prediction steps K.
    pub k: usize,
    /// Multi-step return length (discrete branch).
    pub n: usize,
    pub gamma: f64,
    /// Discrete minibatch, or SAC critic/actor batch.
    pub batch_size: usize,
    /// Batch of the continuous branch's self-predictive update.
    pub vcr_batch_size: usize,
    /// Joint learning rate (discrete) or critic/encoder/model rate (continuous).
    pub lr: f64,
    pub actor_lr: f64,
    pub alpha_lr: f64,
    pub lambda_spr: f64,
    pub lambda_vcr: f64,
    /// Ramp-up length of λ_VCR in env steps; 0 means half the run.
    pub t_warm: u64,
    pub tau_encoder: f64,
    pub tau_value: f64,
    pub updates_per_step: usize,
    pub min_fill: usize,
    pub replay_capacity: usize,
    pub total_env_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Environment steps of greedy trajectories per Q-error probe.
    pub probe_steps: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the run over which ε anneals linearly.
    pub epsilon_fraction: f64,
    pub max_grad_norm: f64,
    pub latent_dim: usize,
    pub hidden: usize,
    pub num_atoms: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub augment: AugmentSpec,
    /// Sampled actions per imagined state (continuous vcr2).
    pub vcr_samples: usize,
    pub actor_update_freq: usize,
    pub critic_target_update_freq: usize,
    pub init_temperature: f64,
    /// Uniform-random actions before the policy takes over (continuous).
    pub exploration_steps: usize,
}

impl AgentConfig {
    /// Desk-scale defaults for `env`.
    pub fn for_env(env: &str) -> Result<Self> {
        if !ENV_NAMES.contains(&env) {
            return Err(Error::invalid(format!(
                "unknown environment `{env}` (expected one of {})",
                ENV_NAMES.join(", ")
            )));
        }
        let discrete = Self {
            env: EnvParams::named(env),
            variant: Variant::Vcr,
            seed: 1,
            k: 5,
            n: 3,
            gamma: 0.99,
            batch_size: 32,
            vcr_batch_size: 32,
            lr: 1e-4,
            actor_lr: 1e-3,
            alpha_lr: 1e-3,
            lambda_spr: 1.0,
            lambda_vcr: 0.2,
            t_warm: 0,
            tau_encoder: 0.0,
            tau_value: 0.0,
            updates_per_step: 2,
            min_fill: 500,
            replay_capacity: 20_000,
            total_env_steps: 20_000,
            eval_interval: 1000,
            eval_episodes: 10,
            probe_steps: 200,
            epsilon_start: 1.0,
            epsilon_end: 0.02,
            epsilon_fraction: 0.1,
            max_grad_norm: 10.0,
            latent_dim: 32,
            hidden: 64,
            num_atoms: 21,
            v_min: -1.0,
            v_max: 2.0,
            augment: AugmentSpec::disabled(),
            vcr_samples: 2,
            actor_update_freq: 2,
            critic_target_update_freq: 2,
            init_temperature: 0.1,
            exploration_steps: 1000,
        };
        Ok(match env {
            "pixelgrid" => Self {
                augment: AugmentSpec {
                    enabled: true,
                    shift_pixels: 1,
                    intensity_scale: 0.05,
                },
                ..discrete
            },
            "pointmass" => Self {
                k: 3,
                n: 1,
                batch_size: 128,
                vcr_batch_size: 32,
                lr: 1e-3,
                lambda_vcr: 1.0,
                tau_encoder: 0.05,
                tau_value: 0.01,
                updates_per_step: 1,
                min_fill: 1000,
                replay_capacity: 50_000,
                total_env_steps: 50_000,
                probe_steps: 1000,
                ..discrete
            },
            _ => discrete,
        })
    }

    pub fn is_continuous(&self) -> bool {
        self.env.name == "pointmass"
    }

    /// Effective λ ramp length.
    pub fn warmup_steps(&self) -> u64 {
        if self.t_warm > 0 {
            self.t_warm
        } else {
            (self.total_env_steps / 2).max(1)
        }
    }

    /// ε at env step `t`: linear from `epsilon_start` to `epsilon_end` over
    /// the first `epsilon_fraction` of the run.
    pub fn epsilon_at(&self, t: u64) -> f64 {
        let horizon = self.epsilon_fraction * self.total_env_steps as f64;
        if horizon <= 0.0 {
            return self.epsilon_end;
        }
        let x = t as f64 / horizon;
        if x >= 1.0 {
            return self.epsilon_end;
        }
        self.epsilon_start + x * (self.epsilon_end - self.epsilon_start)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !ENV_NAMES.contains(&self.env.name.as_str()) {
            return bad(format!("unknown environment `{}`", self.env.name));
        }
        if self.k == 0 || self.n == 0 {
            return bad(format!("K and n must be >= 1 (got K={}, n={})", self.k, self.n));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} outside (0, 1]", self.gamma));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("actor_lr", self.actor_lr),
            ("alpha_lr", self.alpha_lr),
            ("max_grad_norm", self.max_grad_norm),
            ("init_temperature", self.init_temperature),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be > 0 (got {v})"));
            }
        }
        for (name, v) in [("lambda_spr", self.lambda_spr), ("lambda_vcr", self.lambda_vcr)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0 (got {v})"));
            }
        }
        for (name, v) in [("tau_encoder", self.tau_encoder), ("tau_value", self.tau_value)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("vcr_batch_size", self.vcr_batch_size),
            ("updates_per_step", self.updates_per_step),
            ("replay_capacity", self.replay_capacity),
            ("eval_episodes", self.eval_episodes),
            ("latent_dim", self.latent_dim),
            ("hidden", self.hidden),
            ("actor_update_freq", self.actor_update_freq),
            ("critic_target_update_freq", self.critic_target_update_freq),
            ("env.action_repeat", self.env.action_repeat),
            ("env.frame_stack", self.env.frame_stack),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be >= 1".into());
        }
        if self.num_atoms < 2 || !(self.v_max > self.v_min) {
            return bad(format!(
                "support needs num_atoms >= 2 and v_min < v_max (got {} over [{}, {}])",
                self.num_atoms, self.v_min, self.v_max
            ));
        }
        for (name, v) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
            ("epsilon_fraction", self.epsilon_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if !(self.augment.intensity_scale >= 0.0 && self.augment.intensity_scale.is_finite()) {
            return bad("augment.intensity_scale must be >= 0".into());
        }
        if self.env.pixelgrid.p_slip < 0.0 || self.env.pixelgrid.p_slip > 1.0 {
            return bad(format!("pixelgrid.p_slip {} outside [0, 1]", self.env.pixelgrid.p_slip));
        }
        Ok(())
    }

    /// `(key, value)` pairs of every setting, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        Self::KEYS
            .iter()
            .map(|k| (*k, self.get(k).expect("listed key")))
            .collect()
    }
}

fn parse_value<T>(key: &str, value: &str) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::invalid(format!("bad value `{value}` for `{key}`: {e}")))
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+),* $(,)?) => {
        impl AgentConfig {
            /// Every settable key, in serialization order.
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => self.$($field).+ = parse_value(key, value)?,)*
                    _ => return Err(Error::invalid(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $($key => Some(self.$($field).+.to_string()),)*
                    _ => None,
                }
            }
        }
    };
}

config_keys! {
    "env" => env.name,
    "variant" => variant,
    "seed" => seed,
    "k" => k,
    "n" => n,
    "gamma" => gamma,
    "batch_size" => batch_size,
    "vcr_batch_size" => vcr_batch_size,
    "lr" => lr,
    "actor_lr" => actor_lr,
    "alpha_lr" => alpha_lr,
    "lambda_spr" => lambda_spr,
    "lambda_vcr" => lambda_vcr,
    "t_warm" => t_warm,
    "tau_encoder" => tau_encoder,
    "tau_value" => tau_value,
    "updates_per_step" => updates_per_step,
    "min_fill" => min_fill,
    "replay_capacity" => replay_capacity,
    "total_env_steps" => total_env_steps,
    "eval_interval" => eval_interval,
    "eval_episodes" => eval_episodes,
    "probe_steps" => probe_steps,
    "epsilon_start" => epsilon_start,
    "epsilon_end" => epsilon_end,
    "epsilon_fraction" => epsilon_fraction,
    "max_grad_norm" => max_grad_norm,
    "latent_dim" => latent_dim,
    "hidden" => hidden,
    "num_atoms" => num_atoms,
    "v_min" => v_min,
    "v_max" => v_max,
    "augment.enabled" => augment.enabled,
    "augment.shift_pixels" => augment.shift_pixels,
    "augment.intensity_scale" => augment.intensity_scale,
    "vcr_samples" => vcr_samples,
    "actor_update_freq" => actor_update_freq,
    "critic_target_update_freq" => critic_target_update_freq,
    "init_temperature" => init_temperature,
    "exploration_steps" => exploration_steps,
    "env.action_repeat" => env.action_repeat,
    "env.frame_stack" => env.frame_stack,
    "chain.length" => env.chain.length,
    "chain.max_episode_length" => env.chain.max_episode_length,
    "pixelgrid.size" => env.pixelgrid.size,
    "pixelgrid.p_slip" => env.pixelgrid.p_slip,
    "pixelgrid.max_episode_length" => env.pixelgrid.max_episode_length,
    "pointmass.episode_length" => env.pointmass.episode_length,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_round_trip() {
        for env in ENV_NAMES {
            let cfg = AgentConfig::for_env(env).unwrap();
            cfg.validate().unwrap();
            let mut copy = AgentConfig::for_env("chain").unwrap();
            for (k, v) in cfg.entries() {
                copy.set(k, &v).unwrap();
            }
            assert_eq!(copy, cfg);
        }
    }

    #[test]
    fn set_parses_and_rejects() {
        let mut cfg = AgentConfig::for_env("chain").unwrap();
        cfg.set("k", "9").unwrap();
        assert_eq!(cfg.k, 9);
        cfg.set("variant", "MSE_A").unwrap();
        assert_eq!(cfg.variant, Variant::MseA);
        assert!(cfg.set("k", "nine").is_err());
        assert!(cfg.set("nope", "1").is_err());
        cfg.set("gamma", "1.5").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = AgentConfig::for_env("chain").unwrap();
        assert_eq!(cfg.epsilon_at(0), 1.0);
        assert!((cfg.epsilon_at(1000) - 0.51).abs() < 1e-12);
        assert_eq!(cfg.epsilon_at(2000), 0.02);
        assert_eq!(cfg.epsilon_at(15_000), 0.02);
        assert_eq!(cfg.warmup_steps(), 10_000);
    }
}
