//! Central finite-difference verification of recorded gradients.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Denominator floor for the relative error, so gradients that are zero up
/// to rounding are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.
    pub max_rel_error: f64,
    /// `(input index, element index)` where the maximum occurred.
    pub worst: (usize, usize),
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare `backward` against central differences with step `h` for every
/// element of every input. `f` builds a scalar loss from the bound inputs.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad(v)).collect();

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for k in 0..input.numel() {
            let x0 = input.data()[k];
            probe[i].data_mut()[k] = x0 + h;
            let up = eval(&probe)?;
            probe[i].data_mut()[k] = x0 - h;
            let down = eval(&probe)?;
            probe[i].data_mut()[k] = x0;
            let numeric = (up - down) / (2.0 * h);
            let err = rel_error(analytic[i].data()[k], numeric);
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst = (i, k);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
