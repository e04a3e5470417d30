use rand::Rng;

use super::{Bind, ParamSet, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

/// One dense layer: `in_dim -> out_dim` followed by `activation`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub const fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// A stack of dense layers whose parameters live in a [`ParamSet`] under
/// `{prefix}.{layer}.w` / `{prefix}.{layer}.b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub prefix: String,
    pub layers: Vec<LayerSpec>,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, layers: Vec<LayerSpec>) -> Self {
        Self {
            prefix: prefix.into(),
            layers,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn layer_name(&self, i: usize) -> String {
        format!("{}.{i}", self.prefix)
    }

    /// Registers freshly initialized weights for every layer.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            params.insert_linear(&self.layer_name(i), l.in_dim, l.out_dim, 1.0, rng)?;
        }
        Ok(())
    }

    /// Applies a single layer (affine map plus activation).
    pub fn layer(&self, tape: &mut Tape, bind: Bind<'_>, i: usize, x: Var) -> Result<Var> {
        let h = self.affine(tape, bind, i, x)?;
        Ok(self.activate(tape, i, h))
    }

    /// Activation of layer `i` applied to its pre-activation `h`.
    pub fn activate(&self, tape: &mut Tape, i: usize, h: Var) -> Var {
        match self.layers[i].activation {
            Activation::Linear => h,
            Activation::Relu => tape.relu(h),
            Activation::Tanh => tape.tanh(h),
        }
    }

    /// Pre-activation `x W + b` of layer `i`.
    pub fn affine(&self, tape: &mut Tape, bind: Bind<'_>, i: usize, x: Var) -> Result<Var> {
        let spec = self.layers[i];
        let name = self.layer_name(i);
        let got = tape.value(x).cols();
        if got != spec.in_dim {
            return Err(Error::shape(format!("layer {name} input"), spec.in_dim, got));
        }
        let w = tape.param(bind, &format!("{name}.w"))?;
        let b = tape.param(bind, &format!("{name}.b"))?;
        let (wr, wc) = (tape.value(w).rows(), tape.value(w).cols());
        if (wr, wc) != (spec.in_dim, spec.out_dim) {
            return Err(Error::shape(
                format!("layer {name} weight"),
                format!("{}x{}", spec.in_dim, spec.out_dim),
                format!("{wr}x{wc}"),
            ));
        }
        let h = tape.matmul(x, w)?;
        tape.add_row(h, b)
    }

    pub fn forward(&self, tape: &mut Tape, bind: Bind<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..self.layers.len() {
            h = self.layer(tape, bind, i, h)?;
        }
        Ok(h)
    }
}

/// Evaluates the MLP described by `layer_spec` (parameters named `mlp.{i}.w/b`)
/// on the rows of `x`, recording onto `tape`.
pub fn forward_mlp(tape: &mut Tape, params: Bind<'_>, layer_spec: &[LayerSpec], x: Var) -> Result<Var> {
    if layer_spec.is_empty() {
        return Err(Error::invalid("empty layer spec"));
    }
    Mlp::new("mlp", layer_spec.to_vec()).forward(tape, params, x)
}
