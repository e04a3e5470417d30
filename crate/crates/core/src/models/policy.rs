use std::f64::consts::{LN_2, PI};

use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Var};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Maps an unbounded actor output into `[LOG_STD_MIN, LOG_STD_MAX]`.
pub fn squash_log_std(tape: &mut Tape, raw: Var) -> Var {
    let t = tape.tanh(raw);
    let t = tape.add_scalar(t, 1.0);
    let t = tape.scale(t, 0.5 * (LOG_STD_MAX - LOG_STD_MIN));
    tape.add_scalar(t, LOG_STD_MIN)
}

/// Reparameterized tanh-Gaussian sample `a = tanh(mean + exp(log_std) * eps)`
/// with its log-density including the tanh change of variables.
///
/// `eps` is `batch x dim` standard normal noise; returns `(a, log_prob)` with
/// `log_prob` of shape `batch x 1`.
pub fn squashed_gaussian(tape: &mut Tape, mean: Var, log_std: Var, eps: Tensor) -> Result<(Var, Var)> {
    let (m, n) = (tape.value(mean).rows(), tape.value(mean).cols());
    if (eps.rows(), eps.cols()) != (m, n) {
        return Err(Error::shape(
            "policy noise",
            format!("{m}x{n}"),
            format!("{}x{}", eps.rows(), eps.cols()),
        ));
    }
    if !tape.value(log_std).is_finite() {
        return Err(Error::NonFinite("policy log-std".into()));
    }
    let eps_sq: Vec<f64> = eps
        .data()
        .iter()
        .map(|e| -0.5 * e * e - 0.5 * (2.0 * PI).ln())
        .collect();
    let gauss_const = tape.constant(Tensor::matrix(m, n, eps_sq)?);
    let eps = tape.constant(eps);

    let std = tape.exp(log_std)?;
    let noise = tape.mul(std, eps)?;
    let u = tape.add(mean, noise)?;
    let a = tape.tanh(u);

    // log N(u; mean, std) = -eps^2/2 - log_std - ln(2 pi)/2
    let gauss = tape.sub(gauss_const, log_std)?;
    // log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))
    let neg2u = tape.scale(u, -2.0);
    let sp = tape.softplus(neg2u);
    let t = tape.add(u, sp)?;
    let t = tape.neg(t);
    let t = tape.add_scalar(t, LN_2);
    let jac = tape.scale(t, 2.0);
    let per_dim = tape.sub(gauss, jac)?;
    let logp = tape.sum_cols(per_dim);
    Ok((a, logp))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_prob_matches_closed_form() {
        let mut tape = Tape::new();
        let mean = tape.constant(Tensor::matrix(1, 2, vec![0.3, -0.2]).unwrap());
        let log_std = tape.constant(Tensor::matrix(1, 2, vec![-0.5, 0.1]).unwrap());
        let eps = vec![0.7, -1.2];
        let (a, lp) = squashed_gaussian(&mut tape, mean, log_std, Tensor::matrix(1, 2, eps.clone()).unwrap()).unwrap();
        let mut want = 0.0;
        for (i, (&m, &ls)) in [0.3, -0.2].iter().zip(&[-0.5f64, 0.1]).enumerate() {
            let u = m + ls.exp() * eps[i];
            assert!((tape.value(a).data()[i] - u.tanh()).abs() < 1e-15);
            want += -0.5 * eps[i] * eps[i] - ls - 0.5 * (2.0 * PI).ln() - (1.0 - u.tanh().powi(2)).ln();
        }
        assert!((tape.scalar(lp) - want).abs() < 1e-12);
    }

    #[test]
    fn tiny_std_is_deterministic() {
        let mut tape = Tape::no_grad();
        let mean = tape.constant(Tensor::matrix(1, 1, vec![0.4]).unwrap());
        let log_std = tape.constant(Tensor::matrix(1, 1, vec![-40.0]).unwrap());
        let (a, _) = squashed_gaussian(&mut tape, mean, log_std, Tensor::matrix(1, 1, vec![2.5]).unwrap()).unwrap();
        assert!((tape.value(a).item() - 0.4f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn log_std_range() {
        let mut tape = Tape::no_grad();
        let raw = tape.constant(Tensor::matrix(1, 3, vec![-50.0, 0.0, 50.0]).unwrap());
        let ls = squash_log_std(&mut tape, raw);
        let v = tape.value(ls).data();
        assert!((v[0] - LOG_STD_MIN).abs() < 1e-12);
        assert!((v[1] - 0.5 * (LOG_STD_MIN + LOG_STD_MAX)).abs() < 1e-12);
        assert!((v[2] - LOG_STD_MAX).abs() < 1e-12);
    }
}
