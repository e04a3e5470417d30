use crate::error::{Error, Result};
use crate::numcore::ParamSet;

/// Meaning of τ in an EMA update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmaConvention {
    /// `θ_T ← τ θ_T + (1 − τ) θ`; τ = 0 copies the online values.
    Copy,
    /// `θ_T ← (1 − τ) θ_T + τ θ`; τ = 0 leaves the target unchanged.
    Track,
}

/// Applies an EMA step to every target entry under `prefixes`, reading the
/// same-named online entry. Computed as `θ_T + w (θ − θ_T)` so that a target
/// equal to its online copy is a fixed point for any τ.
pub fn ema_update_params(
    target: &mut ParamSet,
    online: &ParamSet,
    prefixes: &[&str],
    tau: f64,
    convention: EmaConvention,
) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("EMA tau {tau} outside [0, 1]")));
    }
    let w = match convention {
        EmaConvention::Copy => 1.0 - tau,
        EmaConvention::Track => tau,
    };
    if w == 0.0 {
        return Ok(());
    }
    let names: Vec<String> = target
        .names()
        .filter(|n| prefixes.iter().any(|p| n.starts_with(p)))
        .map(String::from)
        .collect();
    for name in names {
        let src = online.get(&name)?;
        let dst = target.get_mut(&name)?;
        if src.shape() != dst.shape() {
            return Err(Error::shape(
                format!("EMA `{name}`"),
                format!("{:?}", dst.shape()),
                format!("{:?}", src.shape()),
            ));
        }
        if w == 1.0 {
            dst.data_mut().copy_from_slice(src.data());
        } else {
            for (t, &o) in dst.data_mut().iter_mut().zip(src.data()) {
                *t += w * (o - *t);
            }
        }
    }
    Ok(())
}
