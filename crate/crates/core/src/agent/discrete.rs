use rand::Rng;

use super::{augment, AugmentSpec};
use crate::envs::Action;
use crate::error::{Error, Result};
use crate::losses::{
    categorical_project, cross_entropy_var, nstep_window, project_value, spr_loss_var, total_loss_var,
    vcr_weight_matrices, LossWeights, NStepWindow, Variant,
};
use crate::models::{argmax, CategoricalQ, ModelBundle, ModelView, Source};
use crate::numcore::{Tape, Tensor, Var};
use crate::replay::TrajectorySegment;

/// ε-greedy over the categorical means; ties go to the lowest index.
pub fn act_discrete<R: Rng + ?Sized>(bundle: &ModelBundle, obs: &Tensor, epsilon: f64, rng: &mut R) -> Result<Action> {
    let (n, _) = bundle.arch().discrete_head()?;
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(Action::Discrete(rng.random_range(0..n)));
    }
    Ok(Action::Discrete(greedy_action(bundle, obs)?))
}

pub fn greedy_action(bundle: &ModelBundle, obs: &Tensor) -> Result<usize> {
    Ok(q_values(bundle, obs)?.greedy())
}

pub fn q_values(bundle: &ModelBundle, obs: &Tensor) -> Result<CategoricalQ> {
    let z = bundle.encode(obs, false)?;
    bundle.q_discrete(&z, false)
}

/// Arrays of one minibatch of segments, laid out time-major.
#[derive(Clone, Debug)]
pub struct DiscreteBatch {
    pub batch: usize,
    pub k: usize,
    pub n: usize,
    pub gamma: f64,
    /// `K + n + 1` matrices of `batch x obs_dim` (augmented).
    pub observations: Vec<Tensor>,
    /// `K + n` rows of `batch` actions.
    pub actions: Vec<Vec<usize>>,
    /// n-step windows for `k = 0..=K`, `None` where the step is padding.
    pub windows: Vec<Vec<Option<NStepWindow>>>,
    /// Per-row weight of the self-predictive term at `k = 1..=K`, k-major.
    pub spr_weights: Vec<f64>,
    /// Per-row weight of the value-consistency term at `k = 1..=K`, k-major.
    pub vcr_weights: Vec<f64>,
}

impl DiscreteBatch {
    /// Builds the batch, augmenting every observation independently when
    /// `augment` is given.
    pub fn from_segments<R: Rng + ?Sized>(
        segments: &[TrajectorySegment],
        k: usize,
        n: usize,
        gamma: f64,
        augment_with: Option<(&AugmentSpec, &mut R)>,
    ) -> Result<Self> {
        let b = segments.len();
        let w = k + n;
        if b == 0 || k == 0 || n == 0 {
            return Err(Error::invalid("batch, K and n must be positive"));
        }
        if let Some(seg) = segments.iter().find(|s| s.window() != w) {
            return Err(Error::shape("segment window", w, seg.window()));
        }
        let mut observations = Vec::with_capacity(w + 1);
        let mut aug = augment_with;
        for j in 0..=w {
            let rows: Vec<Tensor> = segments
                .iter()
                .map(|s| match aug.as_mut() {
                    Some((spec, rng)) => augment(&s.observations[j], spec, *rng),
                    None => s.observations[j].clone(),
                })
                .collect();
            observations.push(Tensor::stack_rows(rows.iter().map(Tensor::data))?);
        }
        let actions = (0..w)
            .map(|j| {
                segments
                    .iter()
                    .map(|s| s.actions[j].discrete())
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let windows = (0..=k)
            .map(|j| segments.iter().map(|s| nstep_window(s, j, n, gamma)).collect())
            .collect();
        let inv = 1.0 / b as f64;
        let mut spr_weights = Vec::with_capacity(k * b);
        let mut vcr_weights = Vec::with_capacity(k * b);
        for j in 1..=k {
            for s in segments {
                spr_weights.push(if s.observation_valid(j) { inv } else { 0.0 });
                vcr_weights.push(if s.valid_mask[j] { inv } else { 0.0 });
            }
        }
        Ok(Self {
            batch: b,
            k,
            n,
            gamma,
            observations,
            actions,
            windows,
            spr_weights,
            vcr_weights,
        })
    }
}

/// Gradient-free quantities computed from the target network.
#[derive(Clone, Debug)]
pub struct DiscreteTargets {
    /// Projected n-step return distributions for `k = 0..=K`, each
    /// `batch x M` (zero rows where the step is padding).
    pub gbar: Vec<Tensor>,
    /// Target distributions `Q_T(z̃_k, ·)` for `k = 1..=K`, `K·batch x |A|·M`.
    pub q_target: Tensor,
    /// Target projections of `z̃_k` for `k = 1..=K`, `K·batch x hidden`.
    pub proj_target: Tensor,
}

/// Runs the target encoder and head over observations `1..=K+n` and forms
/// the n-step distributional targets.
pub fn discrete_targets(view: ModelView<'_>, batch: &DiscreteBatch) -> Result<DiscreteTargets> {
    let (n_actions, support) = view.arch().discrete_head()?;
    let m = support.len();
    let (b, k, w) = (batch.batch, batch.k, batch.k + batch.n);
    let mut tape = Tape::no_grad();
    let parts: Vec<Var> = batch.observations[1..=w]
        .iter()
        .map(|o| tape.constant(o.clone()))
        .collect();
    let obs = tape.concat_rows(&parts)?;
    let z = view.encode_var(&mut tape, Source::Target, obs)?;
    let (proj, logp) = view.q_head_var(&mut tape, Source::Target, z)?;
    let probs = tape.value(logp).map(f64::exp);
    // row of observation j (1-based) for sample r
    let row = |j: usize, r: usize| (j - 1) * b + r;

    let mut gbar = Vec::with_capacity(k + 1);
    for j in 0..=k {
        let mut data = vec![0.0; b * m];
        for r in 0..b {
            let Some(win) = batch.windows[j][r] else { continue };
            let dist = match win.bootstrap_obs {
                None => project_value(support, win.reward_sum),
                Some(t) => {
                    let p = probs.row(row(t, r));
                    let means: Vec<f64> = (0..n_actions).map(|a| support.mean(&p[a * m..(a + 1) * m])).collect();
                    let a = argmax(&means);
                    categorical_project(support, win.reward_sum, win.discount, &p[a * m..(a + 1) * m])
                }
            };
            data[r * m..(r + 1) * m].copy_from_slice(&dist);
        }
        gbar.push(Tensor::matrix(b, m, data)?);
    }
    let width = n_actions * m;
    let q_target = Tensor::matrix(k * b, width, probs.data()[..k * b * width].to_vec())?;
    let pv = tape.value(proj);
    let pw = pv.cols();
    let proj_target = Tensor::matrix(k * b, pw, pv.data()[..k * b * pw].to_vec())?;
    Ok(DiscreteTargets {
        gbar,
        q_target,
        proj_target,
    })
}

/// Loss terms recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct DiscreteLoss {
    pub total: Var,
    pub rl: Var,
    pub spr: Var,
    pub vcr1: Option<Var>,
    pub vcr2: Option<Var>,
    pub spr_zero_norm: usize,
}

/// Builds the joint objective `rl + λ_SPR·spr + λ_VCR·vcr1 + λ_VCR2·vcr2`
/// of one minibatch on `tape`, reading online parameters from `view`.
pub fn discrete_loss(
    tape: &mut Tape,
    view: ModelView<'_>,
    batch: &DiscreteBatch,
    targets: &DiscreteTargets,
    weights: LossWeights,
    variant: Variant,
) -> Result<DiscreteLoss> {
    let (n_actions, support) = view.arch().discrete_head()?;
    let m = support.len();
    let (b, k) = (batch.batch, batch.k);

    let obs0 = tape.constant(batch.observations[0].clone());
    let z0 = view.encode_var(tape, Source::Online, obs0)?;
    let acts = (0..k)
        .map(|j| {
            let a: Vec<Action> = batch.actions[j].iter().map(|&a| Action::Discrete(a)).collect();
            let refs: Vec<&Action> = a.iter().collect();
            view.action_input(tape, &refs)
        })
        .collect::<Result<Vec<_>>>()?;
    let imagined = view.rollout_var(tape, Source::Online, z0, &acts)?;
    let mut all = vec![z0];
    all.extend(&imagined);
    let stacked = tape.concat_rows(&all)?;
    let (proj, logp) = view.q_head_var(tape, Source::Online, stacked)?;

    // distributional n-step loss at the segment head
    let head = tape.slice_rows(logp, 0, b)?;
    let width = n_actions * m;
    let mut t_rl = vec![0.0; b * width];
    let inv = 1.0 / b as f64;
    for r in 0..b {
        let a = batch.actions[0][r];
        let g = batch.windows[0][r].map(|_| targets.gbar[0].row(r));
        if let Some(g) = g {
            for i in 0..m {
                t_rl[r * width + a * m + i] = inv * g[i];
            }
        }
    }
    let rl = cross_entropy_var(tape, head, Tensor::matrix(b, width, t_rl)?)?;

    // self-predictive cosine loss on imagined steps
    let proj_imag = tape.slice_rows(proj, b, k * b)?;
    let (spr, spr_zero_norm) = spr_loss_var(tape, proj_imag, targets.proj_target.clone(), &batch.spr_weights)?;

    let (vcr1, vcr2) = if variant == Variant::SprOnly {
        (None, None)
    } else {
        let imag_logp = tape.slice_rows(logp, b, k * b)?;
        let actions: Vec<usize> = (1..=k).flat_map(|j| batch.actions[j].iter().copied()).collect();
        let gbar_rows: Vec<&[f64]> = (1..=k)
            .flat_map(|j| (0..b).map(move |r| (j, r)))
            .map(|(j, r)| targets.gbar[j].row(r))
            .collect();
        let gbar = Tensor::stack_rows(gbar_rows)?;
        let (t1, t2) = vcr_weight_matrices(
            &actions,
            &gbar,
            &targets.q_target,
            &batch.vcr_weights,
            variant,
            n_actions,
        )?;
        let v1 = cross_entropy_var(tape, imag_logp, t1)?;
        let v2 = match t2 {
            Some(t) => Some(cross_entropy_var(tape, imag_logp, t)?),
            None => None,
        };
        (Some(v1), v2)
    };
    let total = total_loss_var(tape, rl, Some(spr), vcr1, vcr2, weights)?;
    Ok(DiscreteLoss {
        total,
        rl,
        spr,
        vcr1,
        vcr2,
        spr_zero_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{dqn_loss, spr_loss, total_loss, vcr_loss_discrete, LossParts};
    use crate::models::{Head, ModelSpec, Support};
    use crate::numcore::finite_diff_check;
    use crate::replay::{ReplayBuffer, Transition};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bundle(obs: usize) -> ModelBundle {
        let spec = ModelSpec {
            obs_dim: obs,
            latent_dim: 3,
            hidden: 5,
            head: Head::Discrete {
                n_actions: 2,
                support: Support::new(-1.0, 2.0, 4).unwrap(),
            },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut b = ModelBundle::new(spec, &mut rng).unwrap();
        // nonzero biases keep every ReLU away from its kink
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
        b
    }

    fn toy_segments(k: usize, n: usize) -> Vec<TrajectorySegment> {
        let mut buf = ReplayBuffer::new(100, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for len in [6, 9] {
            for t in 0..len {
                let o = |s: usize| Tensor::vector(vec![(s as f64 * 0.37).sin(), (s as f64).cos(), 0.5]).unwrap();
                buf.push(Transition {
                    observation: o(t),
                    action: Action::Discrete(rng.random_range(0..2)),
                    reward: if t + 1 == len { 1.0 } else { 0.0 },
                    next_observation: o(t + 1),
                    done: t + 1 == len,
                    truncated: false,
                });
            }
        }
        vec![
            buf.segment_at(0, 0, k + n).unwrap(),
            buf.segment_at(0, 3, k + n).unwrap(),
            buf.segment_at(1, 1, k + n).unwrap(),
            buf.segment_at(1, 7, k + n).unwrap(),
        ]
    }

    #[test]
    fn total_loss_gradient_is_exact() {
        let b = bundle(3);
        let segs = toy_segments(2, 2);
        let batch = DiscreteBatch::from_segments::<ChaCha8Rng>(&segs, 2, 2, 0.9, None).unwrap();
        let targets = discrete_targets(b.view(), &batch).unwrap();
        let w = LossWeights::new(1.0, 0.2).unwrap();
        for variant in [Variant::Vcr, Variant::MseA] {
            let err = finite_diff_check(
                |tape, p| Ok(discrete_loss(tape, b.view_with(p), &batch, &targets, w, variant)?.total),
                &b.online,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "{variant}: {err}");
        }
    }

    #[test]
    fn batched_loss_matches_per_sample_reference() {
        let b = bundle(3);
        let (k, n, gamma) = (2, 2, 0.9);
        let segs = toy_segments(k, n);
        let batch = DiscreteBatch::from_segments::<ChaCha8Rng>(&segs, k, n, gamma, None).unwrap();
        let targets = discrete_targets(b.view(), &batch).unwrap();
        let w = LossWeights::new(1.0, 0.2).unwrap();
        let mut tape = Tape::new();
        let loss = discrete_loss(&mut tape, b.view(), &batch, &targets, w, Variant::Vcr).unwrap();

        // reference: per sample with the single-sample model API
        let support = Support::new(-1.0, 2.0, 4).unwrap();
        let mut parts = LossParts::default();
        let bn = segs.len() as f64;
        for seg in &segs {
            let acts: Vec<Action> = seg.actions.clone();
            let z0 = b.encode(&seg.observations[0], false).unwrap();
            let imagined = b.rollout_imagined(&z0, &acts[..k]).unwrap();
            let qt_at = |j: usize| {
                b.q_discrete(&b.encode(&seg.observations[j], true).unwrap(), true)
                    .unwrap()
            };
            let gbar = |j: usize| {
                let win = nstep_window(seg, j, n, gamma).unwrap();
                match win.bootstrap_obs {
                    None => project_value(&support, win.reward_sum),
                    Some(t) => {
                        let q = qt_at(t);
                        categorical_project(&support, win.reward_sum, win.discount, q.row(q.greedy()))
                    }
                }
            };
            let q0 = b.q_discrete(&z0, false).unwrap();
            parts.rl += dqn_loss(q0.row(acts[0].discrete().unwrap()), &gbar(0)).unwrap().value / bn;
            for j in 1..=k {
                let proj = |z: &Tensor, target: bool| {
                    let mut t = Tape::no_grad();
                    let v = t.constant(z.clone());
                    let src = if target { Source::Target } else { Source::Online };
                    let p = b.view().project_var(&mut t, src, v).unwrap();
                    t.value(p).data().to_vec()
                };
                let zt = b.encode(&seg.observations[j], true).unwrap();
                let (pi, pt) = (proj(&imagined[j - 1], false), proj(&zt, true));
                let s = spr_loss(&[&pi], &[&pt], &[seg.observation_valid(j)]).unwrap();
                parts.spr += s.loss / bn;
                if seg.valid_mask[j] {
                    let qi = b.q_discrete(&imagined[j - 1], false).unwrap();
                    let (v1, v2) = vcr_loss_discrete(
                        &qi,
                        acts[j].discrete().unwrap(),
                        &gbar(j),
                        &qt_at(j).probs,
                        Variant::Vcr,
                    )
                    .unwrap();
                    parts.vcr1 += v1 / bn;
                    parts.vcr2 += v2 / bn;
                }
            }
        }
        let want = total_loss(parts, w).unwrap();
        let got = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
        assert!((tape.scalar(loss.rl) - want.rl_loss).abs() < 1e-12);
        assert!((tape.scalar(loss.spr) - want.spr_loss).abs() < 1e-12);
        assert!((got(loss.vcr1) - want.vcr1_loss).abs() < 1e-12);
        assert!((got(loss.vcr2) - want.vcr2_loss).abs() < 1e-12);
        assert!((tape.scalar(loss.total) - want.total).abs() < 1e-12);
    }

    #[test]
    fn greedy_and_uniform_exploration() {
        let b = bundle(3);
        let obs = Tensor::vector(vec![0.1, 0.2, 0.3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = greedy_action(&b, &obs).unwrap();
        assert_eq!(act_discrete(&b, &obs, 0.0, &mut rng).unwrap(), Action::Discrete(g));
        assert!(act_discrete(&b, &obs, 1.5, &mut rng).is_err());
    }
}
