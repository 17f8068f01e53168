//! Finite-difference validation of analytic gradients.

use crate::error::{Error, Result};
use crate::scalar::{Precision, Scalar};
use crate::tensor::{backward, Tensor};

/// Compare the analytic gradient of a scalar-valued graph against central
/// finite differences, element by element, and return the worst relative
/// error `|analytic - numeric| / max(1e-12, |analytic| + |numeric|)`.
///
/// `build` must rebuild the graph from the current contents of `x`; it is
/// invoked once for the analytic pass and twice per element for the
/// numeric pass. Refuses single precision, where rounding noise swamps the
/// difference quotient.
pub fn grad_check<T, F>(mut build: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Scalar,
    F: FnMut() -> Result<Tensor<T>>,
{
    if T::PRECISION != Precision::Double {
        return Err(Error::Contract(
            "grad_check requires double precision".into(),
        ));
    }
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!(
            "grad_check eps must lie in [1e-7, 1e-3], got {eps}"
        )));
    }

    let was_tracked = x.requires_grad();
    x.set_requires_grad(true);
    x.zero_grad();

    let loss = build()?;
    backward(&loss)?;
    // A disconnected input legitimately has zero gradient everywhere.
    let analytic = x.grad().unwrap_or_else(|| vec![T::zero(); x.numel()]);

    let mut max_rel = 0.0f64;
    for i in 0..x.numel() {
        let orig = x.data()[i];
        x.data_mut()[i] = T::from_f64(orig.to_f64() + eps);
        let plus = build()?.item()?.to_f64();
        x.data_mut()[i] = T::from_f64(orig.to_f64() - eps);
        let minus = build()?.item()?.to_f64();
        x.data_mut()[i] = orig;

        let numeric = (plus - minus) / (2.0 * eps);
        let ana = analytic[i].to_f64();
        let rel = (ana - numeric).abs() / f64::max(1e-12, ana.abs() + numeric.abs());
        if rel > max_rel {
            max_rel = rel;
        }
    }

    x.set_requires_grad(was_tracked);
    Ok(max_rel)
}
