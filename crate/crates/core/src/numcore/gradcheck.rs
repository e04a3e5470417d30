use super::{ParamSet, Tape, Var};
use crate::error::{Error, Result};

/// Gradients smaller than this in both routes are compared absolutely.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// Compares the tape gradient of `func` with central differences on every
/// scalar of `params` and returns the worst relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, GRADCHECK_FLOOR)`.
///
/// `func` must build its loss on the given tape, binding parameters with
/// `Bind::Train(params)`, and must be deterministic.
pub fn finite_diff_check<F>(func: F, params: &ParamSet, epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    finite_diff_check_prefixes(func, params, epsilon, &[""])
}

/// [`finite_diff_check`] restricted to the entries whose names start with
/// one of `prefixes`; the others may sit behind a stop-gradient.
pub fn finite_diff_check_prefixes<F>(func: F, params: &ParamSet, epsilon: f64, prefixes: &[&str]) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside (0, 1e-2]")));
    }
    let mut work = params.clone();
    work.zero_grads();
    let mut tape = Tape::new();
    let loss = func(&mut tape, &work)?;
    if !tape.scalar(loss).is_finite() {
        return Err(Error::NonFinite("finite_diff_check objective".into()));
    }
    tape.backward(loss, &mut work)?;
    let analytic = work.flatten_grads();

    let eval = |ps: &ParamSet| -> Result<f64> {
        let mut t = Tape::no_grad();
        let v = func(&mut t, ps)?;
        let y = t.scalar(v);
        if !y.is_finite() {
            return Err(Error::NonFinite("finite_diff_check objective".into()));
        }
        Ok(y)
    };

    let mut selected = Vec::with_capacity(analytic.len());
    for (name, t) in params.iter() {
        let keep = prefixes.iter().any(|p| name.starts_with(p));
        selected.extend(std::iter::repeat_n(keep, t.len()));
    }
    if !selected.iter().any(|&k| k) {
        return Err(Error::invalid(format!("no parameters match {prefixes:?}")));
    }

    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        if !selected[i] {
            continue;
        }
        let orig = *work.scalar_mut(i);
        *work.scalar_mut(i) = orig + epsilon;
        let up = eval(&work)?;
        *work.scalar_mut(i) = orig - epsilon;
        let down = eval(&work)?;
        *work.scalar_mut(i) = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let denom = a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{Bind, Tensor};

    #[test]
    fn quadratic_is_exact() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::scalar(3.0)).unwrap();
        let err = finite_diff_check(
            |tape, ps| {
                let w = tape.param(Bind::Train(ps), "w")?;
                Ok(tape.square(w))
            },
            &ps,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_objective_has_zero_error() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::scalar(3.0)).unwrap();
        let err = finite_diff_check(
            |tape, ps| {
                let _ = tape.param(Bind::Train(ps), "w")?;
                Ok(tape.constant(Tensor::scalar(1.5)))
            },
            &ps,
            1e-4,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_bad_epsilon() {
        let ps = ParamSet::new();
        let r = finite_diff_check(|t, _| Ok(t.constant(Tensor::scalar(0.0))), &ps, 0.5);
        assert!(r.is_err());
    }
}
