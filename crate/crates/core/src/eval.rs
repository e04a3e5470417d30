//! Imagined-state Q-error and aggregate score statistics.

use crate::envs::Action;
use crate::error::{Error, Result};
use crate::models::{ModelBundle, Source};
use crate::numcore::{Tape, Tensor};

/// One evaluation episode. `observations` has one entry per action
/// (`s_0..s_{T-1}`) plus the final observation `s_T`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalTrajectory {
    pub observations: Vec<Tensor>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    /// Value estimate at `s_T` for an episode cut by a time limit.
    pub terminal_bootstrap: Option<f64>,
}

impl EvalTrajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn undiscounted_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    fn validate(&self) -> Result<()> {
        let t = self.actions.len();
        if self.rewards.len() != t || self.observations.len() != t + 1 {
            return Err(Error::shape(
                "trajectory lengths",
                format!("{t} rewards and {} observations", t + 1),
                format!(
                    "{} rewards and {} observations",
                    self.rewards.len(),
                    self.observations.len()
                ),
            ));
        }
        Ok(())
    }
}

/// Discounted returns `G_t = r_t + γ G_{t+1}` with `G_T` the terminal
/// bootstrap (zero for a terminated episode).
pub fn mc_returns(traj: &EvalTrajectory, gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid(format!("gamma {gamma} outside (0, 1]")));
    }
    let mut g = traj.terminal_bootstrap.unwrap_or(0.0);
    let mut out = vec![0.0; traj.rewards.len()];
    for t in (0..traj.rewards.len()).rev() {
        g = traj.rewards[t] + gamma * g;
        out[t] = g;
    }
    Ok(out)
}

/// Accumulated Q-error terms; combine several trajectories with
/// [`QError::merge`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QError {
    /// `Σ_t Σ_k |Q(ẑ_{t+k}, a_{t+k}) − G_{t+k}|` over unmasked pairs.
    pub abs_sum: f64,
    /// `Σ T·K` of the merged trajectories.
    pub normalizer: f64,
    pub valid_pairs: usize,
}

impl QError {
    pub fn merge(self, other: QError) -> QError {
        QError {
            abs_sum: self.abs_sum + other.abs_sum,
            normalizer: self.normalizer + other.normalizer,
            valid_pairs: self.valid_pairs + other.valid_pairs,
        }
    }

    /// Whether every pair was masked.
    pub fn all_masked(&self) -> bool {
        self.valid_pairs == 0
    }

    /// `abs_sum / (T K)`, or 0 when nothing was valid.
    pub fn value(&self) -> f64 {
        if self.all_masked() || self.normalizer == 0.0 {
            0.0
        } else {
            self.abs_sum / self.normalizer
        }
    }
}

/// Masked double sum over `t < T`, `1 ≤ k ≤ K` with `t + k < T`, where
/// `q(t, k)` is the value of the state imagined `k` steps ahead of `t`
/// under action `a_{t+k}`.
pub fn q_error_with(returns: &[f64], k_max: usize, mut q: impl FnMut(usize, usize) -> f64) -> Result<QError> {
    if k_max == 0 {
        return Err(Error::invalid("prediction horizon K must be positive"));
    }
    let t_len = returns.len();
    let mut out = QError {
        normalizer: (t_len * k_max) as f64,
        ..QError::default()
    };
    for t in 0..t_len {
        for k in 1..=k_max {
            if t + k < t_len {
                out.abs_sum += (q(t, k) - returns[t + k]).abs();
                out.valid_pairs += 1;
            }
        }
    }
    Ok(out)
}

/// Q-error of imagined states along `traj`: `ẑ_{t+k}` is rolled out from
/// `f(s_t)` with the trajectory's actions, valued with the mean of the
/// categorical head (discrete) or the smaller online critic (continuous).
pub fn q_error(bundle: &ModelBundle, traj: &EvalTrajectory, k_max: usize, gamma: f64) -> Result<QError> {
    traj.validate()?;
    let returns = mc_returns(traj, gamma)?;
    let t_len = traj.len();
    if t_len == 0 {
        return q_error_with(&returns, k_max, |_, _| 0.0);
    }
    let values = imagined_values(bundle, traj, k_max)?;
    q_error_with(&returns, k_max, |t, k| values[k - 1][t])
}

/// `values[k-1][t] = Q(ẑ_{t+k}, a_{t+k})` for `t + k < T` (0 elsewhere).
fn imagined_values(bundle: &ModelBundle, traj: &EvalTrajectory, k_max: usize) -> Result<Vec<Vec<f64>>> {
    let view = bundle.view();
    let t_len = traj.len();
    let mut tape = Tape::no_grad();
    let obs: Vec<&Tensor> = traj.observations[..t_len].iter().collect();
    let x = tape.constant(view.observation_matrix(&obs)?);
    let mut z = view.encode_var(&mut tape, Source::Online, x)?;
    let mut out = Vec::with_capacity(k_max);
    let clamp = |i: usize| &traj.actions[i.min(t_len - 1)];
    for k in 1..=k_max {
        let acts: Vec<&Action> = (0..t_len).map(|t| clamp(t + k - 1)).collect();
        let a = view.action_input(&mut tape, &acts)?;
        z = view.transit_var(&mut tape, Source::Online, z, a)?;
        let next: Vec<&Action> = (0..t_len).map(|t| clamp(t + k)).collect();
        let mut vals = Vec::with_capacity(t_len);
        if bundle.is_discrete() {
            let (_, support) = bundle.arch().discrete_head()?;
            let m = support.len();
            let (_, logp) = view.q_head_var(&mut tape, Source::Online, z)?;
            for (t, a) in next.iter().enumerate() {
                let i = a.discrete()?;
                let row = &tape.value(logp).row(t)[i * m..(i + 1) * m];
                let probs: Vec<f64> = row.iter().map(|l| l.exp()).collect();
                vals.push(support.mean(&probs));
            }
        } else {
            let a = view.action_input(&mut tape, &next)?;
            let q1 = view.critic_var(&mut tape, Source::Online, 0, z, a)?;
            let q2 = view.critic_var(&mut tape, Source::Online, 1, z, a)?;
            let q = tape.minimum(q1, q2)?;
            vals.extend_from_slice(tape.value(q).data());
        }
        out.push(vals);
    }
    Ok(out)
}

/// `(score − random) / (reference − random)`.
pub fn hns(score: f64, random_score: f64, reference_score: f64) -> Result<f64> {
    if !(reference_score > random_score) {
        return Err(Error::invalid(format!(
            "reference score {reference_score} must exceed random score {random_score}"
        )));
    }
    Ok((score - random_score) / (reference_score - random_score))
}

/// Mean of the scores left after dropping `floor(N/4)` from each end.
pub fn iqm(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("iqm of an empty score list"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("iqm input".into()));
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let cut = s.len() / 4;
    let mid = &s[cut..s.len() - cut];
    Ok(mid.iter().sum::<f64>() / mid.len() as f64)
}

/// Mean of `max(0, 1 − x)` over normalized scores.
pub fn optimality_gap(normalized_scores: &[f64]) -> Result<f64> {
    if normalized_scores.is_empty() {
        return Err(Error::invalid("optimality gap of an empty score list"));
    }
    Ok(normalized_scores.iter().map(|x| (1.0 - x).max(0.0)).sum::<f64>() / normalized_scores.len() as f64)
}

/// Final scores of several runs on one environment.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
    pub random_score: f64,
    pub reference_score: f64,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, random_score: f64, reference_score: f64) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::invalid("score set must be non-empty"));
        }
        hns(random_score, random_score, reference_score)?;
        Ok(Self {
            scores,
            random_score,
            reference_score,
        })
    }

    pub fn normalized(&self) -> Vec<f64> {
        self.scores
            .iter()
            .map(|&s| (s - self.random_score) / (self.reference_score - self.random_score))
            .collect()
    }

    pub fn iqm(&self) -> f64 {
        iqm(&self.normalized()).expect("non-empty finite scores")
    }

    pub fn optimality_gap(&self) -> f64 {
        optimality_gap(&self.normalized()).expect("non-empty scores")
    }

    pub fn median(&self) -> f64 {
        median(&self.scores)
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
