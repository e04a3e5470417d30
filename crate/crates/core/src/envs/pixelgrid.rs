use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Action, ActionSpace, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const AGENT_PIXEL: f64 = 1.0;
pub const GOAL_PIXEL: f64 = 0.5;
pub const STEP_PENALTY: f64 = -0.01;
pub const GOAL_REWARD: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PixelGridConfig {
    pub size: usize,
    pub p_slip: f64,
    pub max_episode_length: usize,
}

impl Default for PixelGridConfig {
    fn default() -> Self {
        Self {
            size: 7,
            p_slip: 0.1,
            max_episode_length: 50,
        }
    }
}

/// `G x G` grid rendered as a one-channel image. The goal sits in the
/// bottom-right corner; the agent starts on a uniformly drawn non-goal cell.
/// Actions: 0 up, 1 down, 2 left, 3 right; moves into a wall leave the agent
/// in place. With probability `p_slip` the chosen action is replaced by a
/// uniformly random one.
pub struct PixelGrid {
    config: PixelGridConfig,
    spec: EnvSpec,
    rng: ChaCha8Rng,
    agent: (usize, usize),
    t: usize,
    done: bool,
}

const MOVES: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

fn apply_move(size: usize, (r, c): (usize, usize), a: usize) -> (usize, usize) {
    let (dr, dc) = MOVES[a];
    let nr = (r as isize + dr).clamp(0, size as isize - 1) as usize;
    let nc = (c as isize + dc).clamp(0, size as isize - 1) as usize;
    (nr, nc)
}

impl PixelGrid {
    pub fn new(config: PixelGridConfig, seed: u64) -> Result<Self> {
        if config.size < 2 || !(0.0..=1.0).contains(&config.p_slip) || config.max_episode_length < 1 {
            return Err(Error::Env(format!("bad pixelgrid config {config:?}")));
        }
        let (random_score, optimal_score) = reference_scores(&config);
        let g = config.size;
        let spec = EnvSpec {
            name: "pixelgrid".into(),
            observation_dim: g * g,
            observation_shape: vec![1, g, g],
            action_space: ActionSpace::Discrete(4),
            max_episode_length: config.max_episode_length,
            random_score,
            optimal_score,
        };
        Ok(Self {
            config,
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
            agent: (0, 0),
            t: 0,
            done: true,
        })
    }

    pub fn goal(&self) -> (usize, usize) {
        (self.config.size - 1, self.config.size - 1)
    }

    pub fn agent(&self) -> (usize, usize) {
        self.agent
    }

    /// Places the agent on a given cell and starts an episode there.
    pub fn reset_to(&mut self, cell: (usize, usize)) -> Result<Tensor> {
        let g = self.config.size;
        if cell.0 >= g || cell.1 >= g || cell == self.goal() {
            return Err(Error::Env(format!("pixelgrid: invalid start cell {cell:?}")));
        }
        self.agent = cell;
        self.t = 0;
        self.done = false;
        Ok(self.render())
    }

    pub fn render(&self) -> Tensor {
        let g = self.config.size;
        let mut img = vec![0.0; g * g];
        let goal = self.goal();
        img[goal.0 * g + goal.1] = GOAL_PIXEL;
        img[self.agent.0 * g + self.agent.1] = AGENT_PIXEL;
        Tensor::from_parts(vec![1, g, g], img)
    }
}

/// Exact expected returns of the uniform random policy and of an optimal
/// policy, averaged over the uniform start distribution, by dynamic
/// programming over (cell, steps remaining).
pub(crate) fn reference_scores(config: &PixelGridConfig) -> (f64, f64) {
    let g = config.size;
    let n = g * g;
    let goal = n - 1;
    let p = config.p_slip;
    // probability that executed move equals b when a was chosen
    let exec = |a: usize, b: usize| (if a == b { 1.0 - p } else { 0.0 }) + p / 4.0;
    let next = |s: usize, a: usize| {
        let (r, c) = apply_move(g, (s / g, s % g), a);
        r * g + c
    };

    let mut v_rand = vec![0.0; n];
    let mut v_opt = vec![0.0; n];
    for _ in 0..config.max_episode_length {
        let mut nr = vec![0.0; n];
        let mut no = vec![0.0; n];
        for s in 0..n {
            if s == goal {
                continue;
            }
            let backup = |v: &[f64], b: usize| {
                let s2 = next(s, b);
                if s2 == goal {
                    GOAL_REWARD
                } else {
                    STEP_PENALTY + v[s2]
                }
            };
            nr[s] = (0..4).map(|b| 0.25 * backup(&v_rand, b)).sum();
            no[s] = (0..4)
                .map(|a| (0..4).map(|b| exec(a, b) * backup(&v_opt, b)).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
        }
        v_rand = nr;
        v_opt = no;
    }
    let starts = (n - 1) as f64;
    (
        v_rand[..goal].iter().sum::<f64>() / starts,
        v_opt[..goal].iter().sum::<f64>() / starts,
    )
}

impl Environment for PixelGrid {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Tensor {
        let n = self.config.size * self.config.size;
        let s = self.rng.random_range(0..n - 1);
        self.reset_to((s / self.config.size, s % self.config.size))
            .expect("non-goal start cell")
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::Env("pixelgrid: step after episode end; call reset".into()));
        }
        let mut a = action.discrete()?;
        if a >= 4 {
            return Err(Error::Env(format!("pixelgrid: action {a} out of range")));
        }
        if self.config.p_slip > 0.0 && self.rng.random_bool(self.config.p_slip) {
            a = self.rng.random_range(0..4);
        }
        self.agent = apply_move(self.config.size, self.agent, a);
        self.t += 1;
        let reached = self.agent == self.goal();
        let reward = if reached { GOAL_REWARD } else { STEP_PENALTY };
        self.done = reached || self.t >= self.config.max_episode_length;
        Ok(StepResult {
            observation: self.render(),
            reward,
            done: self.done,
            truncated: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacent_goal_correct_action() {
        let cfg = PixelGridConfig {
            p_slip: 0.0,
            ..Default::default()
        };
        let mut env = PixelGrid::new(cfg, 0).unwrap();
        env.reset_to((6, 5)).unwrap();
        let r = env.step(&Action::Discrete(3)).unwrap();
        assert_eq!(r.reward, 1.0);
        assert!(r.done);
        assert!(env.step(&Action::Discrete(3)).is_err());
    }

    #[test]
    fn render_has_one_agent_and_at_most_one_goal_pixel() {
        let mut env = PixelGrid::new(PixelGridConfig::default(), 3).unwrap();
        let mut obs = env.reset();
        for i in 0..500 {
            let ones = obs.data().iter().filter(|&&x| x == AGENT_PIXEL).count();
            let halves = obs.data().iter().filter(|&&x| x == GOAL_PIXEL).count();
            assert_eq!(ones, 1);
            assert!(halves <= 1);
            let r = env.step(&Action::Discrete(i % 4)).unwrap();
            obs = if r.done { env.reset() } else { r.observation };
        }
    }

    #[test]
    fn optimal_beats_random_and_deterministic_optimum_is_shortest_path() {
        let (rand, opt) = reference_scores(&PixelGridConfig::default());
        assert!(opt > rand);
        // without slip, from (0,0) the optimum is 12 moves: 11 penalties then the goal
        let cfg = PixelGridConfig {
            size: 2,
            p_slip: 0.0,
            max_episode_length: 10,
        };
        let (_, opt2) = reference_scores(&cfg);
        // starts (0,0),(0,1),(1,0): 2, 1, 1 moves
        let expected = ((STEP_PENALTY + 1.0) + 1.0 + 1.0) / 3.0;
        assert!((opt2 - expected).abs() < 1e-12);
    }
}
