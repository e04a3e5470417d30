use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a (possibly partial) view of a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    slots: Vec<usize>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step_count: u64,
}

impl AdamState {
    /// Tracks every entry of `params`.
    pub fn new(params: &ParamSet, config: AdamConfig) -> Result<Self> {
        Self::for_prefixes(params, &[""], config)
    }

    /// Tracks the entries whose names start with one of `prefixes`.
    pub fn for_prefixes(params: &ParamSet, prefixes: &[&str], config: AdamConfig) -> Result<Self> {
        if !(config.lr > 0.0) || !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(Error::invalid(format!("bad Adam hyperparameters {config:?}")));
        }
        let mut slots = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (i, (name, t)) in params.iter().enumerate() {
            if prefixes.iter().any(|p| name.starts_with(p)) {
                slots.push(i);
                m.push(Tensor::zeros(t.shape()));
                v.push(Tensor::zeros(t.shape()));
            }
        }
        if slots.is_empty() {
            return Err(Error::invalid(format!(
                "Adam over no parameters (prefixes {prefixes:?})"
            )));
        }
        Ok(Self {
            config,
            slots,
            m,
            v,
            step_count: 0,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn num_tracked(&self) -> usize {
        self.slots.len()
    }

    /// One bias-corrected Adam update in place. Gradients are left as they
    /// are; the caller zeroes them.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        self.step_count += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (k, &slot) in self.slots.iter().enumerate() {
            if params.grad_at(slot).shape() != self.m[k].shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{:?}", self.m[k].shape()),
                    format!("{:?}", params.grad_at(slot).shape()),
                ));
            }
            let g = params.grad_at(slot).data().to_vec();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let w = params.value_at_mut(slot).data_mut();
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(state: &mut AdamState, params: &mut ParamSet) -> Result<()> {
    state.step(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(w: f64, g: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::scalar(w)).unwrap();
        ps.grad_at_mut(0).data_mut()[0] = g;
        ps
    }

    #[test]
    fn zero_grad_is_noop() {
        let mut ps = scalar_set(0.25, 0.0);
        let mut s = AdamState::new(&ps, AdamConfig::default()).unwrap();
        s.step(&mut ps).unwrap();
        assert_eq!(ps.get("w").unwrap().item(), 0.25);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamConfig {
            lr: 0.001,
            ..Default::default()
        };
        for g in [1.0, -1.0] {
            let mut ps = scalar_set(0.0, g);
            let mut s = AdamState::new(&ps, cfg).unwrap();
            s.step(&mut ps).unwrap();
            let dw = ps.get("w").unwrap().item();
            let expected = -cfg.lr * g / (g.abs() + cfg.eps);
            assert!((dw - expected).abs() < 1e-9, "g={g}: {dw}");
        }
        // gradients are left untouched
        let mut ps = scalar_set(0.0, 1.0);
        let mut s = AdamState::new(&ps, cfg).unwrap();
        s.step(&mut ps).unwrap();
        assert_eq!(ps.grad("w").unwrap().item(), 1.0);
    }

    #[test]
    fn prefix_subset_only_touches_selected() {
        let mut ps = ParamSet::new();
        ps.insert("a.w", Tensor::scalar(1.0)).unwrap();
        ps.insert("b.w", Tensor::scalar(1.0)).unwrap();
        ps.grad_at_mut(0).data_mut()[0] = 1.0;
        ps.grad_at_mut(1).data_mut()[0] = 1.0;
        let mut s = AdamState::for_prefixes(&ps, &["a."], AdamConfig::default()).unwrap();
        s.step(&mut ps).unwrap();
        assert!(ps.get("a.w").unwrap().item() < 1.0);
        assert_eq!(ps.get("b.w").unwrap().item(), 1.0);
        assert!(AdamState::for_prefixes(&ps, &["z."], AdamConfig::default()).is_err());
    }
}
