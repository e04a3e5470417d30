//! Learnable components: encoder `f`, transition model `h`, value heads,
//! projection, the continuous policy, and EMA target maintenance.
//!
//! Every network is an [`Mlp`] whose parameters live in the bundle's
//! `online` set; `target` holds the EMA copies of the encoder and value
//! heads. Methods ending in `_var` record onto a caller-owned [`Tape`] and
//! are what the losses use; the others are single-sample conveniences that
//! evaluate on a no-grad tape.

mod ema;
mod policy;

pub use ema::{ema_update_params, EmaConvention};
pub use policy::{squash_log_std, squashed_gaussian, LOG_STD_MAX, LOG_STD_MIN};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::envs::Action;
use crate::error::{Error, Result};
use crate::numcore::{Activation, Bind, LayerSpec, Mlp, ParamSet, Tape, Tensor, Var};
use Activation::{Linear, Relu, Tanh};

const LAYER_NORM_EPS: f64 = 1e-5;
/// Initial SAC temperature.
pub const INITIAL_ALPHA: f64 = 0.1;

/// Evenly spaced value atoms `v_min..=v_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct Support {
    atoms: Vec<f64>,
}

impl Support {
    pub fn new(v_min: f64, v_max: f64, num_atoms: usize) -> Result<Self> {
        if num_atoms < 2 || !(v_max > v_min) || !v_min.is_finite() || !v_max.is_finite() {
            return Err(Error::invalid(format!(
                "support needs >= 2 atoms and v_min < v_max, got {num_atoms} atoms over [{v_min}, {v_max}]"
            )));
        }
        let dz = (v_max - v_min) / (num_atoms - 1) as f64;
        let mut atoms: Vec<f64> = (0..num_atoms).map(|i| v_min + dz * i as f64).collect();
        atoms[num_atoms - 1] = v_max;
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn v_min(&self) -> f64 {
        self.atoms[0]
    }

    pub fn v_max(&self) -> f64 {
        self.atoms[self.atoms.len() - 1]
    }

    pub fn spacing(&self) -> f64 {
        (self.v_max() - self.v_min()) / (self.len() - 1) as f64
    }

    /// Expected value of a distribution over the atoms.
    pub fn mean(&self, probs: &[f64]) -> f64 {
        self.atoms.iter().zip(probs).map(|(z, p)| z * p).sum()
    }
}

/// Per-action value distributions over a shared support.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalQ {
    pub support: Support,
    /// `|A| x M`, rows sum to one.
    pub probs: Tensor,
}

impl CategoricalQ {
    pub fn n_actions(&self) -> usize {
        self.probs.rows()
    }

    pub fn row(&self, action: usize) -> &[f64] {
        self.probs.row(action)
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.n_actions()).map(|a| self.support.mean(self.row(a))).collect()
    }

    /// Index of the largest mean; ties go to the lowest index.
    pub fn greedy(&self) -> usize {
        argmax(&self.means())
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Where a forward pass takes its parameters from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    /// Online parameters, differentiable.
    Online,
    /// Online parameters as constants.
    Frozen,
    /// EMA target parameters (always constants).
    Target,
}

/// Selector for the continuous branch's twin critics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Critic {
    Critic1,
    Critic2,
    Target1,
    Target2,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    /// Distributional Q over `n_actions` actions.
    Discrete { n_actions: usize, support: Support },
    /// Soft actor-critic with a `action_dim`-dimensional action in `[-1, 1]`.
    Continuous { action_dim: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub obs_dim: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub head: Head,
}

#[derive(Clone, Debug)]
enum Nets {
    Discrete { q: Mlp },
    Continuous { proj: Mlp, critics: [Mlp; 2], actor: Mlp },
}

/// Network layouts of a bundle (no parameter values).
#[derive(Clone, Debug)]
pub struct Arch {
    spec: ModelSpec,
    enc: Mlp,
    trans: Mlp,
    nets: Nets,
}

/// Online and target parameters plus the network layouts that read them.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    arch: Arch,
    pub online: ParamSet,
    pub target: ParamSet,
}

/// Borrowed parameters and layouts; records forward passes onto a tape.
#[derive(Clone, Copy)]
pub struct ModelView<'a> {
    arch: &'a Arch,
    online: &'a ParamSet,
    target: &'a ParamSet,
}

impl ModelBundle {
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        let (d, h, o) = (spec.latent_dim, spec.hidden, spec.obs_dim);
        if d == 0 || h == 0 || o == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        let mut online = ParamSet::new();
        let (enc, trans, nets) = match &spec.head {
            Head::Discrete { n_actions, support } => {
                let a = *n_actions;
                if a == 0 {
                    return Err(Error::invalid("discrete head needs at least one action"));
                }
                let enc = Mlp::new("enc", vec![LayerSpec::new(o, h, Relu), LayerSpec::new(h, d, Relu)]);
                let trans = Mlp::new(
                    "trans",
                    vec![LayerSpec::new(d + a, h, Relu), LayerSpec::new(h, d, Relu)],
                );
                let q = Mlp::new(
                    "q",
                    vec![LayerSpec::new(d, h, Relu), LayerSpec::new(h, a * support.len(), Linear)],
                );
                (enc, trans, Nets::Discrete { q })
            }
            Head::Continuous { action_dim } => {
                let a = *action_dim;
                if a == 0 {
                    return Err(Error::invalid("continuous head needs a positive action dimension"));
                }
                let enc = Mlp::new("enc", vec![LayerSpec::new(o, h, Relu), LayerSpec::new(h, d, Linear)]);
                let trans = Mlp::new(
                    "trans",
                    vec![LayerSpec::new(d + a, h, Relu), LayerSpec::new(h, d, Tanh)],
                );
                let proj = Mlp::new("proj", vec![LayerSpec::new(d, d, Linear)]);
                let critic = |name: &str| {
                    Mlp::new(
                        name,
                        vec![
                            LayerSpec::new(d + a, h, Relu),
                            LayerSpec::new(h, h, Relu),
                            LayerSpec::new(h, 1, Linear),
                        ],
                    )
                };
                let actor = Mlp::new(
                    "actor",
                    vec![
                        LayerSpec::new(d, h, Relu),
                        LayerSpec::new(h, h, Relu),
                        LayerSpec::new(h, 2 * a, Linear),
                    ],
                );
                (
                    enc,
                    trans,
                    Nets::Continuous {
                        proj,
                        critics: [critic("critic1"), critic("critic2")],
                        actor,
                    },
                )
            }
        };
        enc.init(&mut online, rng)?;
        trans.init(&mut online, rng)?;
        match &nets {
            Nets::Discrete { q } => q.init(&mut online, rng)?,
            Nets::Continuous { proj, critics, actor } => {
                proj.init(&mut online, rng)?;
                critics[0].init(&mut online, rng)?;
                critics[1].init(&mut online, rng)?;
                actor.init(&mut online, rng)?;
                online.insert("alpha.log", Tensor::scalar(INITIAL_ALPHA.ln()))?;
            }
        }
        let arch = Arch { spec, enc, trans, nets };
        let target = online.subset(arch.target_prefixes())?;
        Ok(Self { arch, online, target })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.arch.spec
    }

    pub fn is_discrete(&self) -> bool {
        self.arch.is_discrete()
    }

    pub fn view(&self) -> ModelView<'_> {
        ModelView {
            arch: &self.arch,
            online: &self.online,
            target: &self.target,
        }
    }

    /// View that reads `online` in place of the bundle's online set.
    pub fn view_with<'a>(&'a self, online: &'a ParamSet) -> ModelView<'a> {
        ModelView {
            arch: &self.arch,
            online,
            target: &self.target,
        }
    }
}

impl Arch {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.spec.head, Head::Discrete { .. })
    }

    /// `(n_actions, support)` of a discrete bundle.
    pub fn discrete_head(&self) -> Result<(usize, &Support)> {
        match &self.spec.head {
            Head::Discrete { n_actions, support } => Ok((*n_actions, support)),
            Head::Continuous { .. } => Err(Error::invalid("discrete head requested on a continuous agent")),
        }
    }

    pub fn action_dim(&self) -> Result<usize> {
        match &self.spec.head {
            Head::Continuous { action_dim } => Ok(*action_dim),
            Head::Discrete { .. } => Err(Error::invalid("continuous head requested on a discrete agent")),
        }
    }

    /// Parameter-name prefixes mirrored in the target set.
    pub fn target_prefixes(&self) -> &'static [&'static str] {
        match self.nets {
            Nets::Discrete { .. } => &["enc.", "q."],
            Nets::Continuous { .. } => &["enc.", "proj.", "critic1.", "critic2."],
        }
    }

    /// Target prefixes that follow the encoder rate (the rest follow the
    /// value rate).
    pub fn encoder_prefixes(&self) -> &'static [&'static str] {
        match self.nets {
            Nets::Discrete { .. } => &["enc."],
            Nets::Continuous { .. } => &["enc.", "proj."],
        }
    }

    pub fn value_prefixes(&self) -> &'static [&'static str] {
        match self.nets {
            Nets::Discrete { .. } => &["q."],
            Nets::Continuous { .. } => &["critic1.", "critic2."],
        }
    }
}

impl<'a> ModelView<'a> {
    pub fn arch(&self) -> &'a Arch {
        self.arch
    }

    pub fn online(&self) -> &'a ParamSet {
        self.online
    }

    pub fn bind(&self, source: Source) -> Bind<'a> {
        match source {
            Source::Online => Bind::Train(self.online),
            Source::Frozen => Bind::Frozen(self.online),
            Source::Target => Bind::Frozen(self.target),
        }
    }

    /// Stacks flattened observations into a `batch x obs_dim` matrix.
    pub fn observation_matrix(&self, obs: &[&Tensor]) -> Result<Tensor> {
        for o in obs {
            if o.len() != self.arch.spec.obs_dim {
                return Err(Error::shape("observation", self.arch.spec.obs_dim, o.len()));
            }
        }
        Tensor::stack_rows(obs.iter().map(|o| o.data()))
    }

    // ---- tape-level forward passes ------------------------------------

    /// `z = f(s)` for every row of `obs`.
    pub fn encode_var(&self, tape: &mut Tape, source: Source, obs: Var) -> Result<Var> {
        let bind = self.bind(source);
        match self.arch.nets {
            Nets::Discrete { .. } => self.arch.enc.forward(tape, bind, obs),
            Nets::Continuous { .. } => {
                let h = self.arch.enc.forward(tape, bind, obs)?;
                let h = tape.layer_norm_rows(h, LAYER_NORM_EPS);
                Ok(tape.tanh(h))
            }
        }
    }

    /// Action batch in the layout consumed by the transition model: one-hot
    /// rows for discrete actions, raw values for continuous ones.
    pub fn action_input(&self, tape: &mut Tape, actions: &[&Action]) -> Result<Var> {
        if actions.is_empty() {
            return Err(Error::invalid("empty action batch"));
        }
        let t = match &self.arch.spec.head {
            Head::Discrete { n_actions, .. } => {
                let n = *n_actions;
                let mut data = vec![0.0; actions.len() * n];
                for (r, a) in actions.iter().enumerate() {
                    let i = a.discrete()?;
                    if i >= n {
                        return Err(Error::invalid(format!("action {i} out of range for {n} actions")));
                    }
                    data[r * n + i] = 1.0;
                }
                Tensor::matrix(actions.len(), n, data)?
            }
            Head::Continuous { action_dim } => {
                let mut data = Vec::with_capacity(actions.len() * action_dim);
                for a in actions {
                    let v = a.continuous()?;
                    if v.len() != *action_dim {
                        return Err(Error::shape("continuous action", action_dim, v.len()));
                    }
                    data.extend_from_slice(v);
                }
                Tensor::matrix(actions.len(), *action_dim, data)?
            }
        };
        Ok(tape.constant(t))
    }

    /// `z' = h(z, a)` with `a` from [`ModelBundle::action_input`] (or any
    /// differentiable action batch of the same layout).
    pub fn transit_var(&self, tape: &mut Tape, source: Source, z: Var, a: Var) -> Result<Var> {
        let bind = self.bind(source);
        let x = tape.concat_cols(&[z, a])?;
        match self.arch.nets {
            Nets::Discrete { .. } => self.arch.trans.forward(tape, bind, x),
            Nets::Continuous { .. } => {
                let h = self.arch.trans.affine(tape, bind, 0, x)?;
                let h = tape.layer_norm_rows(h, LAYER_NORM_EPS);
                let h = self.arch.trans.activate(tape, 0, h);
                self.arch.trans.layer(tape, bind, 1, h)
            }
        }
    }

    /// `ẑ_{k+1} = h(ẑ_k, a_k)` applied recursively from `ẑ_0 = z0`; returns
    /// `ẑ_1..ẑ_K`.
    pub fn rollout_var(&self, tape: &mut Tape, source: Source, z0: Var, actions: &[Var]) -> Result<Vec<Var>> {
        if actions.is_empty() {
            return Err(Error::invalid("rollout needs at least one action"));
        }
        let mut out = Vec::with_capacity(actions.len());
        let mut z = z0;
        for &a in actions {
            z = self.transit_var(tape, source, z, a)?;
            out.push(z);
        }
        Ok(out)
    }

    /// Discrete head: returns `(projection, log_probs)` where the projection
    /// is the head's first-layer pre-activation and `log_probs` is
    /// `batch x (|A| * M)` with a log-softmax per action group.
    pub fn q_head_var(&self, tape: &mut Tape, source: Source, z: Var) -> Result<(Var, Var)> {
        let Nets::Discrete { q } = &self.arch.nets else {
            return Err(Error::invalid("discrete Q head requested on a continuous agent"));
        };
        let (_, support) = self.arch.discrete_head()?;
        let bind = self.bind(source);
        let pre = q.affine(tape, bind, 0, z)?;
        let h = q.activate(tape, 0, pre);
        let logits = q.layer(tape, bind, 1, h)?;
        let logp = tape.log_softmax_groups(logits, support.len())?;
        Ok((pre, logp))
    }

    /// Projection used by the self-predictive loss.
    pub fn project_var(&self, tape: &mut Tape, source: Source, z: Var) -> Result<Var> {
        let bind = self.bind(source);
        match &self.arch.nets {
            Nets::Discrete { q } => q.affine(tape, bind, 0, z),
            Nets::Continuous { proj, .. } => proj.forward(tape, bind, z),
        }
    }

    /// Critic `index` (0 or 1) at `(z, a)`: `batch x 1`. `Source::Target`
    /// reads the target critics.
    pub fn critic_var(&self, tape: &mut Tape, source: Source, index: usize, z: Var, a: Var) -> Result<Var> {
        let Nets::Continuous { critics, .. } = &self.arch.nets else {
            return Err(Error::invalid("critic requested on a discrete agent"));
        };
        let net = critics
            .get(index)
            .ok_or_else(|| Error::invalid(format!("critic index {index} out of range")))?;
        let x = tape.concat_cols(&[z, a])?;
        net.forward(tape, self.bind(source), x)
    }

    /// Policy mean and squashed log-std at `z`, each `batch x action_dim`.
    pub fn policy_var(&self, tape: &mut Tape, source: Source, z: Var) -> Result<(Var, Var)> {
        let Nets::Continuous { actor, .. } = &self.arch.nets else {
            return Err(Error::invalid("policy requested on a discrete agent"));
        };
        let a = self.arch.action_dim()?;
        let out = actor.forward(tape, self.bind(source), z)?;
        let mean = tape.slice_cols(out, 0, a)?;
        let raw = tape.slice_cols(out, a, a)?;
        let log_std = squash_log_std(tape, raw);
        if !tape.value(log_std).is_finite() {
            return Err(Error::NonFinite("policy log-std".into()));
        }
        Ok((mean, log_std))
    }

    /// Current SAC temperature `exp(alpha.log)`.
    pub fn alpha(&self) -> Result<f64> {
        Ok(self.online.get("alpha.log")?.item().exp())
    }
}

impl ModelBundle {
    // ---- single-sample conveniences -----------------------------------

    pub fn alpha(&self) -> Result<f64> {
        self.view().alpha()
    }

    /// Encodes one observation into a `1 x D` latent.
    pub fn encode(&self, obs: &Tensor, use_target: bool) -> Result<Tensor> {
        let mut tape = Tape::no_grad();
        let x = tape.constant(self.view().observation_matrix(&[obs])?);
        let src = if use_target { Source::Target } else { Source::Online };
        let z = self.view().encode_var(&mut tape, src, x)?;
        Ok(tape.value(z).clone())
    }

    fn latent_var(&self, tape: &mut Tape, z: &Tensor) -> Result<Var> {
        if z.len() != self.arch.spec.latent_dim {
            return Err(Error::shape("latent", self.arch.spec.latent_dim, z.len()));
        }
        Ok(tape.constant(z.clone().reshape(vec![1, self.arch.spec.latent_dim])?))
    }

    pub fn transit(&self, z: &Tensor, action: &Action) -> Result<Tensor> {
        let mut tape = Tape::no_grad();
        let zv = self.latent_var(&mut tape, z)?;
        let a = self.view().action_input(&mut tape, &[action])?;
        let out = self.view().transit_var(&mut tape, Source::Online, zv, a)?;
        Ok(tape.value(out).clone())
    }

    /// Imagined latents `ẑ_1..ẑ_K` along `actions` from `z`.
    pub fn rollout_imagined(&self, z: &Tensor, actions: &[Action]) -> Result<Vec<Tensor>> {
        if actions.is_empty() {
            return Err(Error::invalid("rollout needs at least one action"));
        }
        let mut tape = Tape::no_grad();
        let z0 = self.latent_var(&mut tape, z)?;
        let acts = actions
            .iter()
            .map(|a| self.view().action_input(&mut tape, &[a]))
            .collect::<Result<Vec<_>>>()?;
        let zs = self.view().rollout_var(&mut tape, Source::Online, z0, &acts)?;
        Ok(zs.into_iter().map(|v| tape.value(v).clone()).collect())
    }

    pub fn q_discrete(&self, z: &Tensor, use_target: bool) -> Result<CategoricalQ> {
        let (n, support) = self.arch.discrete_head()?;
        let mut tape = Tape::no_grad();
        let zv = self.latent_var(&mut tape, z)?;
        let src = if use_target { Source::Target } else { Source::Online };
        let (_, logp) = self.view().q_head_var(&mut tape, src, zv)?;
        let probs = tape.value(logp).map(f64::exp).reshape(vec![n, support.len()])?;
        Ok(CategoricalQ {
            support: support.clone(),
            probs,
        })
    }

    pub fn q_continuous(&self, z: &Tensor, action: &[f64], which: Critic) -> Result<f64> {
        let mut tape = Tape::no_grad();
        let zv = self.latent_var(&mut tape, z)?;
        let a = self
            .view()
            .action_input(&mut tape, &[&Action::Continuous(action.to_vec())])?;
        let (src, i) = match which {
            Critic::Critic1 => (Source::Online, 0),
            Critic::Critic2 => (Source::Online, 1),
            Critic::Target1 => (Source::Target, 0),
            Critic::Target2 => (Source::Target, 1),
        };
        let q = self.view().critic_var(&mut tape, src, i, zv, a)?;
        Ok(tape.scalar(q))
    }

    /// Samples `a = tanh(mean + std * eps)` and its log-density.
    pub fn policy_sample<R: Rng + ?Sized>(&self, z: &Tensor, rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let dim = self.arch.action_dim()?;
        let mut tape = Tape::no_grad();
        let zv = self.latent_var(&mut tape, z)?;
        let (mean, log_std) = self.view().policy_var(&mut tape, Source::Online, zv)?;
        let eps: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let (a, logp) = squashed_gaussian(&mut tape, mean, log_std, Tensor::matrix(1, dim, eps)?)?;
        Ok((tape.value(a).data().to_vec(), tape.scalar(logp)))
    }

    /// `tanh(mean)` of the policy at `z`.
    pub fn deterministic_action(&self, z: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::no_grad();
        let zv = self.latent_var(&mut tape, z)?;
        let (mean, _) = self.view().policy_var(&mut tape, Source::Online, zv)?;
        Ok(tape.value(mean).data().iter().map(|m| m.tanh()).collect())
    }

    pub fn ema_convention(&self) -> EmaConvention {
        if self.is_discrete() {
            EmaConvention::Copy
        } else {
            EmaConvention::Track
        }
    }

    /// Moves the target set toward the online set. The discrete branch uses
    /// `θ_T ← τ θ_T + (1 − τ) θ` (τ = 0 copies); the continuous branch uses
    /// `θ_T ← (1 − τ) θ_T + τ θ` (τ = 0 freezes).
    pub fn ema_update(&mut self, tau_encoder: f64, tau_value: f64) -> Result<()> {
        let conv = self.ema_convention();
        for t in [tau_encoder, tau_value] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::invalid(format!("EMA tau {t} outside [0, 1]")));
            }
        }
        let (enc, val) = (self.arch.encoder_prefixes(), self.arch.value_prefixes());
        ema_update_params(&mut self.target, &self.online, enc, tau_encoder, conv)?;
        ema_update_params(&mut self.target, &self.online, val, tau_value, conv)
    }

    /// Updates only the value-head target (critics or Q head).
    pub fn ema_update_values(&mut self, tau_value: f64) -> Result<()> {
        let conv = self.ema_convention();
        let val = self.arch.value_prefixes();
        ema_update_params(&mut self.target, &self.online, val, tau_value, conv)
    }

    /// Updates only the encoder-side target.
    pub fn ema_update_encoder(&mut self, tau_encoder: f64) -> Result<()> {
        let conv = self.ema_convention();
        let enc = self.arch.encoder_prefixes();
        ema_update_params(&mut self.target, &self.online, enc, tau_encoder, conv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn discrete(obs: usize, d: usize, h: usize, a: usize) -> ModelBundle {
        let spec = ModelSpec {
            obs_dim: obs,
            latent_dim: d,
            hidden: h,
            head: Head::Discrete {
                n_actions: a,
                support: Support::new(-10.0, 10.0, 5).unwrap(),
            },
        };
        ModelBundle::new(spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    fn continuous() -> ModelBundle {
        let spec = ModelSpec {
            obs_dim: 2,
            latent_dim: 4,
            hidden: 8,
            head: Head::Continuous { action_dim: 1 },
        };
        ModelBundle::new(spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
    }

    fn zero_all(p: &mut ParamSet) {
        let names: Vec<String> = p.names().map(String::from).collect();
        for n in names {
            p.get_mut(&n).unwrap().fill(0.0);
        }
    }

    #[test]
    fn support_layout() {
        let s = Support::new(-1.0, 2.0, 4).unwrap();
        assert_eq!(s.atoms(), &[-1.0, 0.0, 1.0, 2.0]);
        assert_eq!(s.spacing(), 1.0);
        assert!(Support::new(1.0, 1.0, 3).is_err());
    }

    #[test]
    fn zero_weights_give_zero_latent_and_uniform_q() {
        let mut b = discrete(3, 4, 6, 2);
        zero_all(&mut b.online);
        let s = Tensor::vector(vec![1.0, -2.0, 0.5]).unwrap();
        let z = b.encode(&s, false).unwrap();
        assert!(z.data().iter().all(|&x| x == 0.0));
        let z2 = b.transit(&z, &Action::Discrete(1)).unwrap();
        assert!(z2.data().iter().all(|&x| x == 0.0));
        let q = b.q_discrete(&z, false).unwrap();
        for a in 0..2 {
            for &p in q.row(a) {
                assert!((p - 0.2).abs() < 1e-15);
            }
        }
        assert!(q.means().iter().all(|m| m.abs() < 1e-12));
        assert_eq!(q.greedy(), 0);
    }

    #[test]
    fn target_copy_matches_online() {
        let b = discrete(3, 4, 6, 2);
        let s = Tensor::vector(vec![0.3, 0.1, -0.7]).unwrap();
        assert_eq!(b.encode(&s, false).unwrap(), b.encode(&s, true).unwrap());
        let z = b.encode(&s, false).unwrap();
        assert_eq!(b.q_discrete(&z, false).unwrap(), b.q_discrete(&z, true).unwrap());
    }

    #[test]
    fn q_rows_are_distributions() {
        let b = discrete(3, 4, 6, 3);
        let z = Tensor::vector(vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        let q = b.q_discrete(&z, false).unwrap();
        for a in 0..3 {
            let s: f64 = q.row(a).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(q.row(a).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn rollout_is_composed_transit() {
        let b = discrete(3, 4, 6, 2);
        let z = b.encode(&Tensor::vector(vec![1.0, 0.0, 1.0]).unwrap(), false).unwrap();
        let acts = [Action::Discrete(1), Action::Discrete(0), Action::Discrete(1)];
        let roll = b.rollout_imagined(&z, &acts).unwrap();
        let mut cur = z;
        for (a, r) in acts.iter().zip(&roll) {
            cur = b.transit(&cur, a).unwrap();
            assert_eq!(&cur, r);
        }
        assert!(b.rollout_imagined(&cur, &[]).is_err());
        assert!(b.transit(&cur, &Action::Discrete(2)).is_err());
    }

    #[test]
    fn wrong_branch_is_rejected() {
        let d = discrete(3, 4, 6, 2);
        let c = continuous();
        let z = Tensor::zeros(&[1, 4]);
        assert!(c.q_discrete(&z, false).is_err());
        assert!(d.q_continuous(&z, &[0.0], Critic::Critic1).is_err());
        assert!(d.deterministic_action(&z).is_err());
    }

    #[test]
    fn continuous_zero_critic_and_target_parity() {
        let mut c = continuous();
        let z = Tensor::vector(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(
            c.q_continuous(&z, &[0.5], Critic::Critic1).unwrap(),
            c.q_continuous(&z, &[0.5], Critic::Target1).unwrap()
        );
        zero_all(&mut c.online);
        assert_eq!(c.q_continuous(&z, &[0.5], Critic::Critic2).unwrap(), 0.0);
    }

    #[test]
    fn policy_actions_are_bounded() {
        let c = continuous();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..200 {
            let z = Tensor::vector(vec![i as f64 * 0.05, -1.0, 2.0, 0.0]).unwrap();
            let (a, lp) = c.policy_sample(&z, &mut rng).unwrap();
            assert!(a[0].abs() <= 1.0);
            assert!(lp.is_finite());
        }
    }

    #[test]
    fn ema_conventions() {
        let mut d = discrete(3, 4, 6, 2);
        *d.online.scalar_mut(0) += 1.0;
        d.ema_update(0.0, 0.0).unwrap();
        assert_eq!(d.target.get("enc.0.w").unwrap(), d.online.get("enc.0.w").unwrap());

        let mut c = continuous();
        let before = c.target.clone();
        *c.online.scalar_mut(0) += 1.0;
        c.ema_update(0.0, 0.0).unwrap();
        assert_eq!(c.target, before);
        c.ema_update(1.0, 1.0).unwrap();
        assert_eq!(c.target.get("enc.0.w").unwrap(), c.online.get("enc.0.w").unwrap());
        assert!(c.ema_update(1.5, 0.0).is_err());
    }

    #[test]
    fn target_set_layout() {
        let d = discrete(3, 4, 6, 2);
        assert!(d.target.names().all(|n| n.starts_with("enc.") || n.starts_with("q.")));
        let c = continuous();
        assert!(c.target.contains("critic2.2.b"));
        assert!(!c.target.contains("actor.0.w"));
        assert!(!c.target.contains("alpha.log"));
        assert!((c.alpha().unwrap() - INITIAL_ALPHA).abs() < 1e-15);
    }
}
