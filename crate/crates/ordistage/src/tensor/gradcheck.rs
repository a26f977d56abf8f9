//! Central-difference gradient verification.

use super::{Tape, Tensor};
use crate::error::{Error, Result};

/// Default step for [`finite_diff_check`].
pub const FD_DEFAULT_H: f64 = 1e-5;

/// Compare the tape gradient of a scalar-valued function against central
/// finite differences, coordinate by coordinate.
///
/// Returns `max_i |analytic_i - fd_i| / (|analytic_i| + 1e-8)`. The function
/// must be deterministic across evaluations (no fresh dropout masks); it is
/// re-run twice per coordinate of `x` with the tape disabled.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tape, &Tensor) -> Result<Tensor>,
{
    if h <= 0.0 {
        return Err(Error::Param(format!("finite_diff_check step must be > 0, got {h}")));
    }
    let was_param = x.requires_grad();
    x.set_requires_grad(true);
    x.zero_grad();

    let tape = Tape::new();
    let loss = f(&tape, x)?;
    if !loss.is_scalar() {
        x.set_requires_grad(was_param);
        return Err(Error::Contract(format!(
            "finite_diff_check requires a scalar-valued function, got shape {:?}",
            loss.shape()
        )));
    }
    tape.backward(&loss)?;
    let analytic = x.grad().unwrap_or_else(|| vec![0.0; x.numel()]);
    drop(tape);

    let mut max_err: f64 = 0.0;
    for i in 0..x.numel() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let f_plus = f(&Tape::no_grad(), x)?.item();
        x.data_mut()[i] = orig - h;
        let f_minus = f(&Tape::no_grad(), x)?.item();
        x.data_mut()[i] = orig;
        let fd = (f_plus - f_minus) / (2.0 * h);
        let err = (analytic[i] - fd).abs() / (analytic[i].abs() + 1e-8);
        max_err = max_err.max(err);
    }
    x.set_requires_grad(was_param);
    Ok(max_err)
}
