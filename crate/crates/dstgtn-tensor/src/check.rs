//! Central finite-difference verification of analytic gradients.

use std::rc::Rc;

use crate::element::Element;
use crate::param::Parameter;
use crate::tensor::Tensor;
use crate::TensorError;

/// Compares the analytic gradient of `f` with central finite differences,
/// coordinate by coordinate, and returns the worst relative error
/// `|analytic − cd| / max(|analytic|, |cd|, 1e-8)`.
///
/// `f` must rebuild the loss from the parameter's current values on every
/// call. Run this at `f64`; `f32` roundoff swamps the difference quotient.
pub fn finite_diff_check<T, F>(f: &F, param: &Rc<Parameter<T>>, step: f64) -> Result<f64, TensorError>
where
    T: Element,
    F: Fn() -> Result<Tensor<T>, TensorError>,
{
    param.zero_grad();
    let loss = f()?;
    loss.backward()?;
    let analytic = param.grad();

    let mut worst = 0.0f64;
    for i in 0..param.len() {
        let original = param.coord(i);
        param.set_coord(i, T::of(original.as_f64() + step));
        let up = f()?.item().as_f64();
        param.set_coord(i, T::of(original.as_f64() - step));
        let down = f()?.item().as_f64();
        param.set_coord(i, original);

        let cd = (up - down) / (2.0 * step);
        let a = analytic[i].as_f64();
        let denom = a.abs().max(cd.abs()).max(1e-8);
        let rel = (a - cd).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

/// Outcome of one named gradient check, for reporting.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}
