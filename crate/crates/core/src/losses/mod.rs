//! Training objectives: n-step targets, categorical projection,
//! distributional cross-entropy, the self-predictive cosine loss, the
//! value-consistency distances, SAC losses, the λ ramp and the weighted
//! total.
//!
//! Scalar functions operate on plain values and serve as references;
//! `*_var` helpers build the same quantities on a [`Tape`].

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::{CategoricalQ, Support};
use crate::numcore::{cosine, Tape, Tensor, Var};
use crate::replay::TrajectorySegment;

/// Floor applied inside `log` when a target puts mass where the prediction
/// has none.
pub const LOG_FLOOR: f64 = 1e-12;

/// Value-consistency distance used for the imagined Q-values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    /// Mixed target: the taken action against the n-step return, the other
    /// actions against the target network.
    Vcr,
    /// Taken action only, against the target network.
    Mse,
    /// Every action against the target network.
    MseA,
    /// No value-consistency term.
    SprOnly,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Vcr, Variant::Mse, Variant::MseA, Variant::SprOnly];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vcr => "VCR",
            Variant::Mse => "MSE",
            Variant::MseA => "MSE_A",
            Variant::SprOnly => "SPR_only",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}` (expected VCR, MSE, MSE_A or SPR_only)")))
    }
}

// ---- n-step returns ---------------------------------------------------

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("gamma {gamma} outside (0, 1]")))
    }
}

/// `Σ_τ γ^τ r_τ + γ^n · bootstrap`, with the sum and the bootstrap cut at the
/// first terminal flag in `dones`.
pub fn nstep_target_scalar(rewards: &[f64], dones: &[bool], bootstrap: f64, gamma: f64) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::invalid("empty reward window"));
    }
    if dones.len() != rewards.len() {
        return Err(Error::shape("n-step done flags", rewards.len(), dones.len()));
    }
    check_gamma(gamma)?;
    let mut g = 0.0;
    let mut discount = 1.0;
    for (&r, &d) in rewards.iter().zip(dones) {
        g += discount * r;
        discount *= gamma;
        if d {
            return Ok(g);
        }
    }
    Ok(g + discount * bootstrap)
}

/// Reward part and bootstrap of an n-step return read from a segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NStepWindow {
    /// Discounted reward sum over the steps actually taken.
    pub reward_sum: f64,
    /// `γ^m` for a bootstrapped window of `m` steps, 0 after a terminal.
    pub discount: f64,
    /// Observation index to bootstrap from, `None` after a terminal.
    pub bootstrap_obs: Option<usize>,
}

/// The n-step window starting at transition `k`, or `None` if `k` is
/// padding. Stops at a terminal (no bootstrap) or at the end of the stored
/// episode (bootstrap from the last real observation).
pub fn nstep_window(seg: &TrajectorySegment, k: usize, n: usize, gamma: f64) -> Option<NStepWindow> {
    if k >= seg.window() || !seg.valid_mask[k] {
        return None;
    }
    let mut sum = 0.0;
    let mut discount = 1.0;
    let mut m = 0;
    for j in 0..n {
        let t = k + j;
        if t >= seg.window() || !seg.valid_mask[t] {
            break;
        }
        sum += discount * seg.rewards[t];
        discount *= gamma;
        m += 1;
        if seg.done_flags[t] {
            return Some(NStepWindow {
                reward_sum: sum,
                discount: 0.0,
                bootstrap_obs: None,
            });
        }
    }
    Some(NStepWindow {
        reward_sum: sum,
        discount,
        bootstrap_obs: Some(k + m),
    })
}

// ---- categorical projection -------------------------------------------

/// Projects the distribution placing `probs[j]` on `reward + discount·z_j`
/// onto `support`, splitting each mass linearly between neighbouring atoms
/// and clamping to `[v_min, v_max]`.
pub fn categorical_project(support: &Support, reward: f64, discount: f64, probs: &[f64]) -> Vec<f64> {
    let atoms = support.atoms();
    let mut out = vec![0.0; atoms.len()];
    for (&z, &p) in atoms.iter().zip(probs) {
        add_point(support, reward + discount * z, p, &mut out);
    }
    out
}

/// Projection of a point mass at `value`.
pub fn project_value(support: &Support, value: f64) -> Vec<f64> {
    let mut out = vec![0.0; support.len()];
    add_point(support, value, 1.0, &mut out);
    out
}

fn add_point(support: &Support, value: f64, mass: f64, out: &mut [f64]) {
    let last = support.len() - 1;
    let v = value.clamp(support.v_min(), support.v_max());
    let b = ((v - support.v_min()) / support.spacing()).clamp(0.0, last as f64);
    let l = b.floor() as usize;
    let u = (b.ceil() as usize).min(last);
    if l == u {
        out[l] += mass;
    } else {
        out[l] += mass * (u as f64 - b);
        out[u] += mass * (b - l as f64);
    }
}

// ---- cross-entropy ----------------------------------------------------

/// Cross-entropy value with the number of clamped `log(0)` terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrossEntropy {
    pub value: f64,
    pub clamped: usize,
}

/// `-Σ_i target_i · log pred_i`, with `log` floored at `log(1e-12)`.
pub fn dqn_loss(pred: &[f64], target: &[f64]) -> Result<CrossEntropy> {
    if pred.len() != target.len() {
        return Err(Error::shape("dqn_loss", pred.len(), target.len()));
    }
    let mut value = 0.0;
    let mut clamped = 0;
    for (&p, &t) in pred.iter().zip(target) {
        if t == 0.0 {
            continue;
        }
        if p < LOG_FLOOR {
            clamped += 1;
        }
        value -= t * p.max(LOG_FLOOR).ln();
    }
    Ok(CrossEntropy { value, clamped })
}

/// `-Σ targets ⊙ log_probs` over every entry; weights are folded into
/// `targets` by the caller.
pub fn cross_entropy_var(tape: &mut Tape, log_probs: Var, targets: Tensor) -> Result<Var> {
    let t = tape.constant(targets);
    let prod = tape.mul(t, log_probs)?;
    let s = tape.sum(prod);
    Ok(tape.neg(s))
}

// ---- self-predictive loss ---------------------------------------------

/// SPR loss value with the number of zero-norm cosine evaluations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SprValue {
    pub loss: f64,
    pub zero_norm: usize,
}

/// `-Σ_k mask_k · cos(ẑ_k, z̃_k)`; a zero-norm pair contributes 0 and is
/// counted.
pub fn spr_loss(imagined: &[&[f64]], targets: &[&[f64]], mask: &[bool]) -> Result<SprValue> {
    if imagined.len() != targets.len() || imagined.len() != mask.len() {
        return Err(Error::shape(
            "spr_loss steps",
            imagined.len(),
            targets.len().min(mask.len()),
        ));
    }
    let mut out = SprValue {
        loss: 0.0,
        zero_norm: 0,
    };
    for ((a, b), &m) in imagined.iter().zip(targets).zip(mask) {
        if !m {
            continue;
        }
        if a.len() != b.len() {
            return Err(Error::shape("spr_loss latent", a.len(), b.len()));
        }
        if is_zero(a) || is_zero(b) {
            out.zero_norm += 1;
        }
        out.loss -= cosine(a, b);
    }
    Ok(out)
}

fn is_zero(x: &[f64]) -> bool {
    x.iter().all(|&v| v == 0.0)
}

/// Tape form of [`spr_loss`] over stacked rows: `-Σ_r w_r cos(online_r,
/// target_r)`. Rows with zero weight are skipped when counting zero norms.
pub fn spr_loss_var(tape: &mut Tape, online: Var, target: Tensor, weights: &[f64]) -> Result<(Var, usize)> {
    let rows = tape.value(online).rows();
    if weights.len() != rows {
        return Err(Error::shape("spr weights", rows, weights.len()));
    }
    let zero_norm = (0..rows)
        .filter(|&r| weights[r] != 0.0 && (is_zero(tape.value(online).row(r)) || is_zero(target.row(r))))
        .count();
    let t = tape.constant(target);
    let cos = tape.cosine_rows(online, t)?;
    let w = tape.constant(Tensor::matrix(rows, 1, weights.to_vec())?);
    let wc = tape.mul(cos, w)?;
    let s = tape.sum(wc);
    Ok((tape.neg(s), zero_norm))
}

// ---- value consistency, discrete --------------------------------------

/// Mixed per-action target: row `a_t` is the projected n-step return
/// `gbar_row`, every other row is copied from the target network's
/// distributions `q_target` (`|A| x M`).
pub fn vcr_target_discrete(a_t: usize, gbar_row: &[f64], q_target: &Tensor) -> Result<Tensor> {
    let (n, m) = (q_target.rows(), q_target.cols());
    if a_t >= n {
        return Err(Error::invalid(format!("action {a_t} out of range for {n} actions")));
    }
    if gbar_row.len() != m {
        return Err(Error::shape("n-step target distribution", m, gbar_row.len()));
    }
    let mut out = q_target.as_matrix();
    out.data_mut()[a_t * m..(a_t + 1) * m].copy_from_slice(gbar_row);
    Ok(out)
}

/// `(vcr1, vcr2)` for one imagined state: vcr1 is the cross-entropy on the
/// taken action's row, vcr2 the mean cross-entropy over the other rows.
pub fn vcr_loss_discrete(
    imagined: &CategoricalQ,
    a_t: usize,
    gbar_row: &[f64],
    q_target: &Tensor,
    variant: Variant,
) -> Result<(f64, f64)> {
    let n = imagined.n_actions();
    if q_target.rows() != n || q_target.cols() != imagined.support.len() {
        return Err(Error::shape(
            "target distributions",
            format!("{n}x{}", imagined.support.len()),
            format!("{}x{}", q_target.rows(), q_target.cols()),
        ));
    }
    let target = match variant {
        Variant::SprOnly => return Ok((0.0, 0.0)),
        Variant::Vcr => vcr_target_discrete(a_t, gbar_row, q_target)?,
        Variant::Mse | Variant::MseA => {
            if a_t >= n {
                return Err(Error::invalid(format!("action {a_t} out of range for {n} actions")));
            }
            q_target.as_matrix()
        }
    };
    let vcr1 = dqn_loss(imagined.row(a_t), target.row(a_t))?.value;
    if variant == Variant::Mse || n == 1 {
        return Ok((vcr1, 0.0));
    }
    let mut vcr2 = 0.0;
    for a in (0..n).filter(|&a| a != a_t) {
        vcr2 += dqn_loss(imagined.row(a), target.row(a))?.value;
    }
    Ok((vcr1, vcr2 / (n - 1) as f64))
}

/// Weighted target matrices for the batched discrete distance.
///
/// Rows of `q_target` are `|A| * M` wide; `gbar` holds one projected n-step
/// distribution per row. Returns `(t1, t2)` such that
/// `vcr1 = -Σ t1 ⊙ log p` and `vcr2 = -Σ t2 ⊙ log p`; `t2` is `None` when
/// the variant has no second term.
pub fn vcr_weight_matrices(
    actions: &[usize],
    gbar: &Tensor,
    q_target: &Tensor,
    weights: &[f64],
    variant: Variant,
    n_actions: usize,
) -> Result<(Tensor, Option<Tensor>)> {
    let rows = actions.len();
    let m = gbar.cols();
    if q_target.rows() != rows || q_target.cols() != n_actions * m || gbar.rows() != rows || weights.len() != rows {
        return Err(Error::shape(
            "vcr batch",
            format!("{rows} rows of {} atoms", n_actions * m),
            format!("{}x{}", q_target.rows(), q_target.cols()),
        ));
    }
    let width = n_actions * m;
    let mut t1 = vec![0.0; rows * width];
    let with_t2 = matches!(variant, Variant::Vcr | Variant::MseA) && n_actions > 1;
    let mut t2 = if with_t2 { vec![0.0; rows * width] } else { Vec::new() };
    let other = 1.0 / (n_actions.max(2) - 1) as f64;
    for (r, &a) in actions.iter().enumerate() {
        if a >= n_actions {
            return Err(Error::invalid(format!(
                "action {a} out of range for {n_actions} actions"
            )));
        }
        let w = weights[r];
        if w == 0.0 {
            continue;
        }
        let qt = q_target.row(r);
        let own = match variant {
            Variant::Vcr => gbar.row(r),
            _ => &qt[a * m..(a + 1) * m],
        };
        for i in 0..m {
            t1[r * width + a * m + i] = w * own[i];
        }
        if with_t2 {
            for b in (0..n_actions).filter(|&b| b != a) {
                for i in 0..m {
                    t2[r * width + b * m + i] = w * other * qt[b * m + i];
                }
            }
        }
    }
    let t1 = Tensor::matrix(rows, width, t1)?;
    let t2 = if with_t2 {
        Some(Tensor::matrix(rows, width, t2)?)
    } else {
        None
    };
    Ok((t1, t2))
}

// ---- value consistency, continuous ------------------------------------

/// `vcr1 = (Q(ẑ, a_t) − Ḡ)²`, `vcr2 = mean_j (Q(ẑ, a_j) − Q_T(z̃, a_j))²`.
pub fn vcr_loss_continuous(q_taken: f64, gbar: f64, q_sampled: &[f64], q_target_sampled: &[f64]) -> Result<(f64, f64)> {
    if q_sampled.len() != q_target_sampled.len() {
        return Err(Error::shape(
            "sampled action values",
            q_sampled.len(),
            q_target_sampled.len(),
        ));
    }
    let vcr1 = (q_taken - gbar).powi(2);
    let vcr2 = if q_sampled.is_empty() {
        0.0
    } else {
        q_sampled
            .iter()
            .zip(q_target_sampled)
            .map(|(q, t)| (q - t).powi(2))
            .sum::<f64>()
            / q_sampled.len() as f64
    };
    Ok((vcr1, vcr2))
}

// ---- soft actor-critic ------------------------------------------------

/// `y = r + γ (1 − d) (min_i Q_targ,i(s', a') − α log π(a'|s'))`.
pub fn sac_target(reward: f64, done: bool, gamma: f64, min_target_q: f64, alpha: f64, log_prob: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * (min_target_q - alpha * log_prob)
    }
}

/// Batch mean of `Σ_i (Q_i(s, a) − y)²`.
pub fn sac_critic_loss(q1: &[f64], q2: &[f64], y: &[f64]) -> Result<f64> {
    if q1.len() != y.len() || q2.len() != y.len() || y.is_empty() {
        return Err(Error::shape("critic batch", y.len(), q1.len().min(q2.len())));
    }
    let s: f64 = q1
        .iter()
        .zip(q2)
        .zip(y)
        .map(|((a, b), t)| (a - t).powi(2) + (b - t).powi(2))
        .sum();
    Ok(s / y.len() as f64)
}

/// Batch means of `−(min Q − α log π)` and `−α (log π + target_entropy)`.
pub fn sac_actor_and_alpha_loss(
    min_q: &[f64],
    log_prob: &[f64],
    alpha: f64,
    target_entropy: f64,
) -> Result<(f64, f64)> {
    if min_q.len() != log_prob.len() || min_q.is_empty() {
        return Err(Error::shape("actor batch", min_q.len(), log_prob.len()));
    }
    let n = min_q.len() as f64;
    let actor = min_q.iter().zip(log_prob).map(|(q, lp)| -(q - alpha * lp)).sum::<f64>() / n;
    let alpha_loss = log_prob.iter().map(|lp| -alpha * (lp + target_entropy)).sum::<f64>() / n;
    Ok((actor, alpha_loss))
}

// ---- weights and total ------------------------------------------------

/// Gaussian ramp `λ_max · exp(−5 (1 − min(t, T)/T)²)`.
pub fn lambda_rampup(step: u64, t_warm: u64, lambda_max: f64) -> Result<f64> {
    if t_warm == 0 {
        return Err(Error::invalid("ramp-up length must be positive"));
    }
    let x = step.min(t_warm) as f64 / t_warm as f64;
    Ok(lambda_max * (-5.0 * (1.0 - x).powi(2)).exp())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub spr: f64,
    pub vcr: f64,
    pub vcr2: f64,
}

impl LossWeights {
    /// `λ_VCR2 = λ_VCR / 10`.
    pub fn new(spr: f64, vcr: f64) -> Result<Self> {
        Self::with_vcr2(spr, vcr, vcr / 10.0)
    }

    pub fn with_vcr2(spr: f64, vcr: f64, vcr2: f64) -> Result<Self> {
        for (name, w) in [("spr", spr), ("vcr", vcr), ("vcr2", vcr2)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::invalid(format!(
                    "loss weight {name} = {w} must be finite and >= 0"
                )));
            }
        }
        Ok(Self { spr, vcr, vcr2 })
    }

    /// Both value-consistency weights scaled by the ramp at `step`.
    pub fn ramped(&self, step: u64, t_warm: u64) -> Result<Self> {
        let f = lambda_rampup(step, t_warm, 1.0)?;
        Ok(Self {
            spr: self.spr,
            vcr: self.vcr * f,
            vcr2: self.vcr2 * f,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub rl: f64,
    pub spr: f64,
    pub vcr1: f64,
    pub vcr2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub rl_loss: f64,
    pub spr_loss: f64,
    pub vcr1_loss: f64,
    pub vcr2_loss: f64,
    pub total: f64,
    pub weights: LossWeights,
}

/// `rl + λ_SPR·spr + λ_VCR·vcr1 + λ_VCR2·vcr2`.
pub fn total_loss(parts: LossParts, weights: LossWeights) -> Result<LossBreakdown> {
    let w = LossWeights::with_vcr2(weights.spr, weights.vcr, weights.vcr2)?;
    Ok(LossBreakdown {
        rl_loss: parts.rl,
        spr_loss: parts.spr,
        vcr1_loss: parts.vcr1,
        vcr2_loss: parts.vcr2,
        total: parts.rl + w.spr * parts.spr + w.vcr * parts.vcr1 + w.vcr2 * parts.vcr2,
        weights: w,
    })
}

/// Tape form of [`total_loss`]; absent terms count as zero.
pub fn total_loss_var(
    tape: &mut Tape,
    rl: Var,
    spr: Option<Var>,
    vcr1: Option<Var>,
    vcr2: Option<Var>,
    weights: LossWeights,
) -> Result<Var> {
    let mut total = rl;
    for (term, w) in [(spr, weights.spr), (vcr1, weights.vcr), (vcr2, weights.vcr2)] {
        if let Some(v) = term {
            let s = tape.scale(v, w);
            total = tape.add(total, s)?;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    #[test]
    fn nstep_examples() {
        assert_eq!(nstep_target_scalar(&[0.0; 3], &[false; 3], 0.0, 0.9).unwrap(), 0.0);
        assert_eq!(nstep_target_scalar(&[5.0], &[false], 3.0, 1.0).unwrap(), 8.0);
        let g = nstep_target_scalar(&[1.0, 0.0, 1.0], &[false; 3], 2.0, 0.9).unwrap();
        assert!(close(g, 3.268, 1e-12));
        let g = nstep_target_scalar(&[1.0, 1.0, 1.0], &[false, true, false], 100.0, 0.5).unwrap();
        assert!(close(g, 1.5, 1e-15));
        assert!(nstep_target_scalar(&[], &[], 0.0, 0.9).is_err());
    }

    #[test]
    fn projection_examples() {
        let s = Support::new(0.0, 2.0, 3).unwrap();
        assert_eq!(project_value(&s, 1.0), vec![0.0, 1.0, 0.0]);
        assert_eq!(project_value(&s, 0.5), vec![0.5, 0.5, 0.0]);
        assert_eq!(project_value(&s, 5.0), vec![0.0, 0.0, 1.0]);
        assert_eq!(project_value(&s, -3.0), vec![1.0, 0.0, 0.0]);
        let p = categorical_project(&s, 0.5, 0.5, &[0.2, 0.3, 0.5]);
        assert!(close(p.iter().sum::<f64>(), 1.0, 1e-12));
        // points 0.5, 1.0, 1.5
        assert!(close(p[0], 0.1, 1e-12) && close(p[1], 0.1 + 0.3 + 0.25, 1e-12) && close(p[2], 0.25, 1e-12));
    }

    #[test]
    fn dqn_loss_examples() {
        let ce = dqn_loss(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!(close(ce.value, std::f64::consts::LN_2, 1e-12));
        let ce = dqn_loss(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert_eq!(ce.clamped, 1);
        assert!(close(ce.value, -(1e-12f64).ln(), 1e-9));
    }

    #[test]
    fn spr_examples() {
        let a: &[f64] = &[1.0, 0.0];
        let b: &[f64] = &[1.0, 1.0];
        let v = spr_loss(&[a], &[b], &[true]).unwrap();
        assert!(close(v.loss, -std::f64::consts::FRAC_1_SQRT_2, 1e-12));
        let z: &[f64] = &[0.0, 0.0];
        let v = spr_loss(&[a, z], &[a, b], &[true, true]).unwrap();
        assert_eq!((v.loss, v.zero_norm), (-1.0, 1));
        let v = spr_loss(&[a; 5], &[a; 5], &[true; 5]).unwrap();
        assert!(close(v.loss, -5.0, 1e-12));
    }

    #[test]
    fn vcr_discrete_examples() {
        let support = Support::new(0.0, 1.0, 2).unwrap();
        let imagined = CategoricalQ {
            support: support.clone(),
            probs: Tensor::matrix(2, 2, vec![0.5; 4]).unwrap(),
        };
        let qt = Tensor::matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let g = project_value(&support, 0.0);
        let (v1, v2) = vcr_loss_discrete(&imagined, 0, &g, &qt, Variant::Vcr).unwrap();
        assert!(close(v1, std::f64::consts::LN_2, 1e-12) && close(v2, std::f64::consts::LN_2, 1e-12));
        let (_, v2) = vcr_loss_discrete(&imagined, 0, &g, &qt, Variant::Mse).unwrap();
        assert_eq!(v2, 0.0);
        let mixed = vcr_target_discrete(0, &g, &qt).unwrap();
        assert_eq!(mixed.row(0), &[1.0, 0.0]);
        assert_eq!(mixed.row(1), qt.row(1));
    }

    #[test]
    fn vcr_weight_matrices_match_scalar_form() {
        let support = Support::new(0.0, 2.0, 3).unwrap();
        let logits = [0.1, -0.3, 0.7, 1.2, 0.0, -0.4, 0.2, 0.2, 0.9];
        let mut probs = Vec::new();
        for g in logits.chunks(3) {
            let z: f64 = g.iter().map(|x: &f64| x.exp()).sum();
            probs.extend(g.iter().map(|x| x.exp() / z));
        }
        let imagined = CategoricalQ {
            support: support.clone(),
            probs: Tensor::matrix(3, 3, probs.clone()).unwrap(),
        };
        let qt = Tensor::matrix(3, 3, vec![0.2, 0.3, 0.5, 0.1, 0.1, 0.8, 0.6, 0.4, 0.0]).unwrap();
        let g = project_value(&support, 1.3);
        for variant in [Variant::Vcr, Variant::Mse, Variant::MseA] {
            let (v1, v2) = vcr_loss_discrete(&imagined, 1, &g, &qt, variant).unwrap();
            let (t1, t2) = vcr_weight_matrices(
                &[1],
                &Tensor::matrix(1, 3, g.clone()).unwrap(),
                &qt.clone().reshape(vec![1, 9]).unwrap(),
                &[1.0],
                variant,
                3,
            )
            .unwrap();
            let logp: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
            let ce = |t: &Tensor| -t.data().iter().zip(&logp).map(|(a, b)| a * b).sum::<f64>();
            assert!(close(ce(&t1), v1, 1e-12), "{variant}");
            assert!(close(t2.as_ref().map_or(0.0, ce), v2, 1e-12), "{variant}");
        }
    }

    #[test]
    fn continuous_and_sac_examples() {
        assert_eq!(vcr_loss_continuous(1.0, 3.0, &[2.0], &[2.0]).unwrap(), (4.0, 0.0));
        assert_eq!(sac_target(1.0, true, 0.99, 50.0, 0.2, -1.0), 1.0);
        assert!(close(sac_target(1.0, false, 0.99, 2.0, 0.2, -1.0), 3.178, 1e-12));
        assert_eq!(sac_critic_loss(&[3.0], &[3.0], &[3.0]).unwrap(), 0.0);
        let (a, _) = sac_actor_and_alpha_loss(&[2.0], &[-1.0], 0.2, -1.0).unwrap();
        assert!(close(a, -2.2, 1e-12));
        let (a, al) = sac_actor_and_alpha_loss(&[2.0], &[1.0], 0.0, -1.0).unwrap();
        assert_eq!(a, -2.0);
        assert_eq!(al, 0.0);
        let (_, al) = sac_actor_and_alpha_loss(&[2.0], &[1.0], 0.3, -1.0).unwrap();
        assert_eq!(al, 0.0);
    }

    #[test]
    fn ramp_and_total() {
        assert!(close(lambda_rampup(0, 100, 1.0).unwrap(), (-5.0f64).exp(), 1e-15));
        assert_eq!(lambda_rampup(100, 100, 0.2).unwrap(), 0.2);
        assert_eq!(lambda_rampup(200, 100, 0.2).unwrap(), 0.2);
        assert!(lambda_rampup(1, 0, 0.2).is_err());
        let w = LossWeights::new(1.0, 0.2).unwrap();
        let b = total_loss(
            LossParts {
                rl: 1.0,
                spr: 2.0,
                vcr1: 3.0,
                vcr2: 4.0,
            },
            w,
        )
        .unwrap();
        assert!(close(b.total, 3.68, 1e-12));
        assert!(LossWeights::new(-1.0, 0.2).is_err());
        assert_eq!(total_loss(LossParts::default(), w).unwrap().total, 0.0);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("vcr".parse::<Variant>().is_err());
    }
}
