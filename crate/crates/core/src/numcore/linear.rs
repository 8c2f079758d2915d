use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{Bound, ParamId, ParamSet};
use crate::error::Result;

/// Affine map `x·W + b` with `W: [input, output]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub input: usize,
    pub output: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        input: usize,
        output: usize,
        params: &mut ParamSet,
        rng: &mut R,
    ) -> Self {
        let w = params.weight(format!("{prefix}.w"), input, output, rng);
        let b = params.bias(format!("{prefix}.b"), input, output, rng);
        Self {
            input,
            output,
            w,
            b,
        }
    }

    pub fn apply(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        let m = g.matmul(x, bound.var(self.w))?;
        g.add(m, bound.var(self.b))
    }
}
