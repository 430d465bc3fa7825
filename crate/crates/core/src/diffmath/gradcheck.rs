//! Central finite-difference checks for graph-built functions.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error with a floor on the denominator so exact zeros compare absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between backward gradients and central differences
/// over every entry of every input.
///
/// `f` builds a scalar from input leaves; it is rebuilt for every perturbation,
/// so any randomness inside must be seeded identically per call.
pub fn max_gradient_error(
    inputs: &[Tensor],
    step: f64,
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = xs.iter().map(|t| g.constant(t.clone())).collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let vars = inputs.iter().map(|t| g.constant(t.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut worst = 0.0f64;
    let mut xs = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            xs[k].data_mut()[i] = orig + step;
            let up = eval(&xs)?;
            xs[k].data_mut()[i] = orig - step;
            let down = eval(&xs)?;
            xs[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let e = relative_error(analytic.data()[i], numeric);
            if !e.is_finite() {
                return Err(Error::NonFinite("finite-difference check".into()));
            }
            worst = worst.max(e);
        }
    }
    Ok(worst)
}
