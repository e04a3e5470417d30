use rand::Rng;
use rand_distr::StandardNormal;

use crate::envs::Action;
use crate::error::{Error, Result};
use crate::losses::{total_loss_var, LossWeights, Variant};
use crate::models::{squashed_gaussian, ModelView, Source};
use crate::numcore::{Bind, Tape, Tensor, Var};
use crate::replay::TrajectorySegment;

/// Standard normal noise of shape `rows x cols`.
pub fn gaussian_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).expect("noise shape")
}

/// Time-major arrays of a minibatch of continuous-action segments.
#[derive(Clone, Debug)]
pub struct ContinuousBatch {
    pub batch: usize,
    /// `window + 1` matrices `batch x obs_dim`.
    pub observations: Vec<Tensor>,
    /// `window` matrices `batch x action_dim`.
    pub actions: Vec<Tensor>,
    pub rewards: Vec<Vec<f64>>,
    pub dones: Vec<Vec<bool>>,
    pub valid: Vec<Vec<bool>>,
    pub observation_valid: Vec<Vec<bool>>,
}

impl ContinuousBatch {
    pub fn from_segments(segments: &[TrajectorySegment]) -> Result<Self> {
        let Some(first) = segments.first() else {
            return Err(Error::invalid("empty batch"));
        };
        let w = first.window();
        if let Some(s) = segments.iter().find(|s| s.window() != w) {
            return Err(Error::shape("segment window", w, s.window()));
        }
        let observations = (0..=w)
            .map(|j| Tensor::stack_rows(segments.iter().map(|s| s.observations[j].data())))
            .collect::<Result<Vec<_>>>()?;
        let actions = (0..w)
            .map(|j| {
                let rows = segments
                    .iter()
                    .map(|s| s.actions[j].continuous())
                    .collect::<Result<Vec<_>>>()?;
                Tensor::stack_rows(rows)
            })
            .collect::<Result<Vec<_>>>()?;
        let col = |f: &dyn Fn(&TrajectorySegment, usize) -> bool, len: usize| -> Vec<Vec<bool>> {
            (0..len).map(|j| segments.iter().map(|s| f(s, j)).collect()).collect()
        };
        Ok(Self {
            batch: segments.len(),
            rewards: (0..w)
                .map(|j| segments.iter().map(|s| s.rewards[j]).collect())
                .collect(),
            dones: col(&|s, j| s.done_flags[j], w),
            valid: col(&|s, j| s.valid_mask[j], w),
            observation_valid: col(&|s, j| s.observation_valid(j), w + 1),
            observations,
            actions,
        })
    }

    pub fn window(&self) -> usize {
        self.actions.len()
    }
}

fn column(tape: &mut Tape, values: Vec<f64>) -> Result<Var> {
    let n = values.len();
    Ok(tape.constant(Tensor::matrix(n, 1, values)?))
}

/// Soft one-step targets `r + γ(1 − d)(min_i Q_T,i(f_T(s'), a') − α log π(a'|s'))`
/// with `a' ~ π(f(s'))` drawn from `eps`. Invalid rows get 0.
pub fn soft_targets(
    view: ModelView<'_>,
    next_obs: &Tensor,
    rewards: &[f64],
    dones: &[bool],
    valid: &[bool],
    gamma: f64,
    eps: Tensor,
) -> Result<Vec<f64>> {
    let alpha = view.alpha()?;
    let mut tape = Tape::no_grad();
    let x = tape.constant(next_obs.clone());
    let z = view.encode_var(&mut tape, Source::Online, x)?;
    let (mean, log_std) = view.policy_var(&mut tape, Source::Online, z)?;
    let (a, logp) = squashed_gaussian(&mut tape, mean, log_std, eps)?;
    let zt = view.encode_var(&mut tape, Source::Target, x)?;
    let q1 = view.critic_var(&mut tape, Source::Target, 0, zt, a)?;
    let q2 = view.critic_var(&mut tape, Source::Target, 1, zt, a)?;
    let q = tape.minimum(q1, q2)?;
    let (q, lp) = (tape.value(q).data(), tape.value(logp).data());
    Ok((0..rewards.len())
        .map(|r| match (valid[r], dones[r]) {
            (false, _) => 0.0,
            (true, true) => rewards[r],
            (true, false) => rewards[r] + gamma * (q[r] - alpha * lp[r]),
        })
        .collect())
}

/// Batch mean of `Σ_i (Q_i(f(s), a) − y)²`.
pub fn critic_loss(tape: &mut Tape, view: ModelView<'_>, obs: &Tensor, actions: &Tensor, y: &[f64]) -> Result<Var> {
    let b = y.len();
    let x = tape.constant(obs.clone());
    let z = view.encode_var(tape, Source::Online, x)?;
    let a = tape.constant(actions.clone());
    let yv = column(tape, y.to_vec())?;
    let mut total = None;
    for i in 0..2 {
        let q = view.critic_var(tape, Source::Online, i, z, a)?;
        let d = tape.sub(q, yv)?;
        let sq = tape.square(d);
        let s = tape.sum(sq);
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s)?,
        });
    }
    Ok(tape.scale(total.expect("two critics"), 1.0 / b as f64))
}

#[derive(Clone, Copy, Debug)]
pub struct ActorLoss {
    pub actor: Var,
    pub alpha: Var,
    pub mean_log_prob: f64,
}

/// Policy loss `mean(α log π − min_i Q_i)` on a detached latent with frozen
/// critics and `α = alpha_now` held constant, and temperature loss
/// `mean(−α (log π + H̄))` with `log π` detached.
pub fn actor_alpha_loss(
    tape: &mut Tape,
    view: ModelView<'_>,
    obs: &Tensor,
    eps: Tensor,
    alpha_now: f64,
    target_entropy: f64,
) -> Result<ActorLoss> {
    let b = obs.rows() as f64;
    let x = tape.constant(obs.clone());
    let z = view.encode_var(tape, Source::Frozen, x)?;
    let (mean, log_std) = view.policy_var(tape, Source::Online, z)?;
    let (a, logp) = squashed_gaussian(tape, mean, log_std, eps)?;
    let q1 = view.critic_var(tape, Source::Frozen, 0, z, a)?;
    let q2 = view.critic_var(tape, Source::Frozen, 1, z, a)?;
    let q = tape.minimum(q1, q2)?;
    let al = tape.scale(logp, alpha_now);
    let diff = tape.sub(al, q)?;
    let actor = tape.mean(diff);

    let mean_log_prob = tape.value(logp).sum() / b;
    let log_alpha = tape.param(Bind::Train(view.online()), "alpha.log")?;
    let alpha = tape.exp(log_alpha)?;
    let alpha_loss = tape.scale(alpha, -(mean_log_prob + target_entropy));
    Ok(ActorLoss {
        actor,
        alpha: tape.sum(alpha_loss),
        mean_log_prob,
    })
}

/// Gradient-free quantities of the self-predictive update.
#[derive(Clone, Debug)]
pub struct AuxTargets {
    /// Target projections `proj_T(f_T(s_k))`, `k = 1..=K`, `K·B x D`.
    pub proj_target: Tensor,
    /// Soft one-step targets at `k = 1..=K`, k-major.
    pub y: Vec<f64>,
    /// Target critic values at the taken action, `[critic][row]`.
    pub q_target_taken: [Vec<f64>; 2],
    /// Sampled actions at the target latents, one `K·B x action_dim`
    /// matrix per sample.
    pub sampled_actions: Vec<Tensor>,
    /// `Q_T,i(z̃_k, a_j)`, `[critic][sample][row]`.
    pub q_target_sampled: [Vec<Vec<f64>>; 2],
}

/// Computes [`AuxTargets`] for a batch whose window is `K + 1`.
pub fn aux_targets<R: Rng + ?Sized>(
    view: ModelView<'_>,
    batch: &ContinuousBatch,
    k: usize,
    gamma: f64,
    samples: usize,
    rng: &mut R,
) -> Result<AuxTargets> {
    if batch.window() != k + 1 {
        return Err(Error::shape("aux segment window", k + 1, batch.window()));
    }
    let b = batch.batch;
    let dim = view.arch().action_dim()?;
    let mut y = Vec::with_capacity(k * b);
    for j in 1..=k {
        let eps = gaussian_noise(b, dim, rng);
        y.extend(soft_targets(
            view,
            &batch.observations[j + 1],
            &batch.rewards[j],
            &batch.dones[j],
            &batch.valid[j],
            gamma,
            eps,
        )?);
    }

    let mut tape = Tape::no_grad();
    let obs: Vec<Var> = batch.observations[1..=k]
        .iter()
        .map(|o| tape.constant(o.clone()))
        .collect();
    let x = tape.concat_rows(&obs)?;
    let zt = view.encode_var(&mut tape, Source::Target, x)?;
    let proj = view.project_var(&mut tape, Source::Target, zt)?;
    let proj_target = tape.value(proj).clone();

    let acts: Vec<Var> = batch.actions[1..=k].iter().map(|a| tape.constant(a.clone())).collect();
    let taken = tape.concat_rows(&acts)?;
    let mut q_target_taken: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (i, out) in q_target_taken.iter_mut().enumerate() {
        let q = view.critic_var(&mut tape, Source::Target, i, zt, taken)?;
        *out = tape.value(q).data().to_vec();
    }

    let (mean, log_std) = view.policy_var(&mut tape, Source::Online, zt)?;
    let mut sampled_actions = Vec::with_capacity(samples);
    let mut q_target_sampled: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for _ in 0..samples {
        let eps = gaussian_noise(k * b, dim, rng);
        let (a, _) = squashed_gaussian(&mut tape, mean, log_std, eps)?;
        for (i, out) in q_target_sampled.iter_mut().enumerate() {
            let q = view.critic_var(&mut tape, Source::Target, i, zt, a)?;
            out.push(tape.value(q).data().to_vec());
        }
        sampled_actions.push(tape.value(a).clone());
    }
    Ok(AuxTargets {
        proj_target,
        y,
        q_target_taken,
        sampled_actions,
        q_target_sampled,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct AuxLoss {
    pub total: Var,
    pub spr: Var,
    pub vcr1: Option<Var>,
    pub vcr2: Option<Var>,
    pub spr_zero_norm: usize,
}

/// `Σ_rows w (x − t)²` with `t` and `w` as constants.
fn weighted_sq(tape: &mut Tape, x: Var, target: &[f64], w: &[f64]) -> Result<Var> {
    let t = column(tape, target.to_vec())?;
    let wv = column(tape, w.to_vec())?;
    let d = tape.sub(x, t)?;
    let sq = tape.square(d);
    let ws = tape.mul(sq, wv)?;
    Ok(tape.sum(ws))
}

/// Self-predictive and value-consistency losses on a `K + 1` window:
/// `ẑ_k` is rolled out from `f(s_0)` with `a_0..a_{K-1}`; vcr1 compares
/// `Q_i(ẑ_k, a_k)` with the soft target (or, for the MSE variants, with
/// `Q_T,i(z̃_k, a_k)`), vcr2 compares `Q_i(ẑ_k, a_j)` with `Q_T,i(z̃_k, a_j)`
/// over policy samples `a_j`. Both average the two critics.
pub fn aux_loss(
    tape: &mut Tape,
    view: ModelView<'_>,
    batch: &ContinuousBatch,
    targets: &AuxTargets,
    k: usize,
    weights: LossWeights,
    variant: Variant,
) -> Result<AuxLoss> {
    let b = batch.batch;
    let inv = 1.0 / b as f64;
    let x0 = tape.constant(batch.observations[0].clone());
    let z0 = view.encode_var(tape, Source::Online, x0)?;
    let acts: Vec<Var> = batch.actions[..k].iter().map(|a| tape.constant(a.clone())).collect();
    let imagined = view.rollout_var(tape, Source::Online, z0, &acts)?;
    let zs = tape.concat_rows(&imagined)?;

    let spr_w: Vec<f64> = (1..=k)
        .flat_map(|j| {
            batch.observation_valid[j]
                .iter()
                .map(move |&v| if v { inv } else { 0.0 })
        })
        .collect();
    let p = view.project_var(tape, Source::Online, zs)?;
    let (spr, spr_zero_norm) = crate::losses::spr_loss_var(tape, p, targets.proj_target.clone(), &spr_w)?;

    let (vcr1, vcr2) = if variant == Variant::SprOnly {
        (None, None)
    } else {
        let w: Vec<f64> = (1..=k)
            .flat_map(|j| batch.valid[j].iter().map(move |&v| if v { 0.5 * inv } else { 0.0 }))
            .collect();
        let taken: Vec<Var> = batch.actions[1..=k].iter().map(|a| tape.constant(a.clone())).collect();
        let taken = tape.concat_rows(&taken)?;
        let mut v1 = Vec::new();
        let mut v2 = Vec::new();
        for i in 0..2 {
            let q = view.critic_var(tape, Source::Online, i, zs, taken)?;
            let target = if variant == Variant::Vcr {
                &targets.y
            } else {
                &targets.q_target_taken[i]
            };
            v1.push(weighted_sq(tape, q, target, &w)?);
            if matches!(variant, Variant::Vcr | Variant::MseA) && !targets.sampled_actions.is_empty() {
                let m = targets.sampled_actions.len() as f64;
                let wm: Vec<f64> = w.iter().map(|x| x / m).collect();
                for (j, a) in targets.sampled_actions.iter().enumerate() {
                    let av = tape.constant(a.clone());
                    let q = view.critic_var(tape, Source::Online, i, zs, av)?;
                    v2.push(weighted_sq(tape, q, &targets.q_target_sampled[i][j], &wm)?);
                }
            }
        }
        let sum = |tape: &mut Tape, xs: Vec<Var>| -> Result<Option<Var>> {
            let mut it = xs.into_iter();
            let Some(mut acc) = it.next() else { return Ok(None) };
            for x in it {
                acc = tape.add(acc, x)?;
            }
            Ok(Some(acc))
        };
        (sum(tape, v1)?, sum(tape, v2)?)
    };
    // the RL term lives in the critic update; start the sum from zero
    let zero = tape.constant(Tensor::scalar(0.0).as_matrix());
    let zero = tape.sum(zero);
    let total = total_loss_var(tape, zero, Some(spr), vcr1, vcr2, weights)?;
    Ok(AuxLoss {
        total,
        spr,
        vcr1,
        vcr2,
        spr_zero_norm,
    })
}

/// Uniform random action in `[-1, 1]^dim`.
pub fn random_action<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Action {
    Action::Continuous((0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{sac_actor_and_alpha_loss, sac_critic_loss, vcr_loss_continuous};
    use crate::models::{Critic, Head, ModelBundle, ModelSpec};
    use crate::numcore::{finite_diff_check, finite_diff_check_prefixes};
    use crate::replay::{ReplayBuffer, Transition};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bundle() -> ModelBundle {
        let spec = ModelSpec {
            obs_dim: 3,
            latent_dim: 4,
            hidden: 6,
            head: Head::Continuous { action_dim: 2 },
        };
        let mut b = ModelBundle::new(spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        // decouple target from online so target paths are exercised
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

    fn segments(window: usize) -> Vec<TrajectorySegment> {
        let mut buf = ReplayBuffer::new(100, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let o = |s: usize| Tensor::vector(vec![(s as f64 * 0.41).sin(), (s as f64 * 0.2).cos(), 0.3]).unwrap();
        for len in [5, 8] {
            for t in 0..len {
                buf.push(Transition {
                    observation: o(t),
                    action: random_action(2, &mut rng),
                    reward: 0.1 * t as f64,
                    next_observation: o(t + 1),
                    done: t + 1 == len && len == 5,
                    truncated: t + 1 == len && len == 8,
                });
            }
        }
        vec![
            buf.segment_at(0, 0, window).unwrap(),
            buf.segment_at(0, 3, window).unwrap(),
            buf.segment_at(1, 2, window).unwrap(),
        ]
    }

    #[test]
    fn critic_and_actor_match_scalar_oracles() {
        let bd = bundle();
        let batch = ContinuousBatch::from_segments(&segments(1)).unwrap();
        let eps = gaussian_noise(3, 2, &mut ChaCha8Rng::seed_from_u64(1));
        let y = soft_targets(
            bd.view(),
            &batch.observations[1],
            &batch.rewards[0],
            &batch.dones[0],
            &batch.valid[0],
            0.99,
            eps.clone(),
        )
        .unwrap();
        let mut tape = Tape::new();
        let l = critic_loss(&mut tape, bd.view(), &batch.observations[0], &batch.actions[0], &y).unwrap();
        let (mut q1, mut q2) = (Vec::new(), Vec::new());
        for r in 0..3 {
            let z = bd
                .encode(&Tensor::vector(batch.observations[0].row(r).to_vec()).unwrap(), false)
                .unwrap();
            q1.push(bd.q_continuous(&z, batch.actions[0].row(r), Critic::Critic1).unwrap());
            q2.push(bd.q_continuous(&z, batch.actions[0].row(r), Critic::Critic2).unwrap());
        }
        assert!((tape.scalar(l) - sac_critic_loss(&q1, &q2, &y).unwrap()).abs() < 1e-12);

        let mut tape = Tape::new();
        let a = actor_alpha_loss(
            &mut tape,
            bd.view(),
            &batch.observations[0],
            eps.clone(),
            bd.alpha().unwrap(),
            -2.0,
        )
        .unwrap();
        // reference through the no-grad single-sample path
        let mut t2 = Tape::no_grad();
        let x = t2.constant(batch.observations[0].clone());
        let z = bd.view().encode_var(&mut t2, Source::Online, x).unwrap();
        let (m, s) = bd.view().policy_var(&mut t2, Source::Online, z).unwrap();
        let (act, lp) = squashed_gaussian(&mut t2, m, s, eps.clone()).unwrap();
        let c1 = bd.view().critic_var(&mut t2, Source::Online, 0, z, act).unwrap();
        let c2 = bd.view().critic_var(&mut t2, Source::Online, 1, z, act).unwrap();
        let mq = t2.minimum(c1, c2).unwrap();
        let (actor, alpha) =
            sac_actor_and_alpha_loss(t2.value(mq).data(), t2.value(lp).data(), bd.alpha().unwrap(), -2.0).unwrap();
        assert!((tape.scalar(a.actor) - actor).abs() < 1e-12);
        assert!((tape.scalar(a.alpha) - alpha).abs() < 1e-12);

        let mut ps = bd.online.clone();
        ps.zero_grads();
        let mut tape = Tape::new();
        let a = actor_alpha_loss(
            &mut tape,
            bd.view_with(&ps),
            &batch.observations[0],
            eps.clone(),
            0.1,
            -2.0,
        )
        .unwrap();
        tape.backward(a.alpha, &mut ps).unwrap();
        let g = ps.grad("alpha.log").unwrap().item();
        assert!((g + bd.alpha().unwrap() * (a.mean_log_prob - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn aux_loss_matches_oracle_and_gradients() {
        let bd = bundle();
        let k = 2;
        let batch = ContinuousBatch::from_segments(&segments(k + 1)).unwrap();
        let targets = aux_targets(bd.view(), &batch, k, 0.99, 2, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let w = LossWeights::new(1.0, 1.0).unwrap();
        let mut tape = Tape::new();
        let l = aux_loss(&mut tape, bd.view(), &batch, &targets, k, w, Variant::Vcr).unwrap();

        // oracle over rows via the single-sample API
        let b = batch.batch;
        let (mut v1, mut v2) = (0.0, 0.0);
        for r in 0..b {
            let z0 = bd
                .encode(&Tensor::vector(batch.observations[0].row(r).to_vec()).unwrap(), false)
                .unwrap();
            let acts: Vec<Action> = (0..k)
                .map(|j| Action::Continuous(batch.actions[j].row(r).to_vec()))
                .collect();
            let zs = bd.rollout_imagined(&z0, &acts).unwrap();
            for j in 1..=k {
                if !batch.valid[j][r] {
                    continue;
                }
                let row = (j - 1) * b + r;
                for (i, c) in [Critic::Critic1, Critic::Critic2].into_iter().enumerate() {
                    let qt = bd.q_continuous(&zs[j - 1], batch.actions[j].row(r), c).unwrap();
                    let qs: Vec<f64> = targets
                        .sampled_actions
                        .iter()
                        .map(|a| bd.q_continuous(&zs[j - 1], a.row(row), c).unwrap())
                        .collect();
                    let qts: Vec<f64> = targets.q_target_sampled[i].iter().map(|v| v[row]).collect();
                    let (a1, a2) = vcr_loss_continuous(qt, targets.y[row], &qs, &qts).unwrap();
                    v1 += 0.5 * a1 / b as f64;
                    v2 += 0.5 * a2 / b as f64;
                }
            }
        }
        assert!((tape.scalar(l.vcr1.unwrap()) - v1).abs() < 1e-10);
        assert!((tape.scalar(l.vcr2.unwrap()) - v2).abs() < 1e-10);

        let err = finite_diff_check(
            |tape, p| Ok(aux_loss(tape, bd.view_with(p), &batch, &targets, k, w, Variant::Vcr)?.total),
            &bd.online,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn actor_loss_gradient_is_exact() {
        let bd = bundle();
        let batch = ContinuousBatch::from_segments(&segments(1)).unwrap();
        let eps = gaussian_noise(3, 2, &mut ChaCha8Rng::seed_from_u64(6));
        let err = finite_diff_check_prefixes(
            |tape, p| {
                Ok(actor_alpha_loss(tape, bd.view_with(p), &batch.observations[0], eps.clone(), 0.1, -2.0)?.actor)
            },
            &bd.online,
            1e-6,
            &["actor."],
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
