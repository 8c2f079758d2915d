//! Recurrent primitives: LSTM and GRU steps, the stochastic skip recurrence
//! (SRNN) and the dilated recurrence.
//!
//! All steps are batched: states are `[batch, hidden]` and inputs are
//! `[batch, input]`. Gate weights act on the concatenation `[h, x]` and are
//! stored as `[hidden + input, hidden]` so that `[h, x] · W + b` is a plain
//! row-major product.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Bound, Graph, ParamId, ParamSet, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

#[derive(Clone, Debug, PartialEq)]
enum Gates {
    Lstm {
        w_o: ParamId,
        w_f: ParamId,
        w_i: ParamId,
        w_c: ParamId,
        b_o: ParamId,
        b_f: ParamId,
        b_i: ParamId,
        b_c: ParamId,
    },
    Gru {
        w_u: ParamId,
        w_h: ParamId,
        w_r: ParamId,
        b_u: ParamId,
        b_h: ParamId,
        b_r: ParamId,
    },
}

/// One recurrent cell's parameters (held in a [`ParamSet`]).
#[derive(Clone, Debug, PartialEq)]
pub struct CellParams {
    pub kind: CellKind,
    pub hidden: usize,
    pub input: usize,
    /// Emit `o ∘ tanh(c)` instead of `o ∘ c` from LSTM steps.
    pub standard_lstm_output: bool,
    gates: Gates,
}

/// Hidden state, plus the memory cell for LSTM.
#[derive(Clone, Copy, Debug)]
pub struct CellState {
    pub h: Var,
    pub c: Option<Var>,
}

impl CellParams {
    pub fn new<R: Rng + ?Sized>(
        kind: CellKind,
        input: usize,
        hidden: usize,
        prefix: &str,
        params: &mut ParamSet,
        rng: &mut R,
    ) -> Self {
        let fan_in = hidden + input;
        let names: &[&str] = match kind {
            CellKind::Lstm => &["o", "f", "i", "c"],
            CellKind::Gru => &["u", "h", "r"],
        };
        let w: Vec<ParamId> = names
            .iter()
            .map(|n| params.weight(format!("{prefix}.w_{n}"), fan_in, hidden, rng))
            .collect();
        let b: Vec<ParamId> = names
            .iter()
            .map(|n| params.bias(format!("{prefix}.b_{n}"), fan_in, hidden, rng))
            .collect();
        let gates = match kind {
            CellKind::Lstm => Gates::Lstm {
                w_o: w[0],
                w_f: w[1],
                w_i: w[2],
                w_c: w[3],
                b_o: b[0],
                b_f: b[1],
                b_i: b[2],
                b_c: b[3],
            },
            CellKind::Gru => Gates::Gru {
                w_u: w[0],
                w_h: w[1],
                w_r: w[2],
                b_u: b[0],
                b_h: b[1],
                b_r: b[2],
            },
        };
        Self {
            kind,
            hidden,
            input,
            standard_lstm_output: false,
            gates,
        }
    }

    /// Parameter ids in gate order, for tests and inspection.
    pub fn param_ids(&self) -> Vec<ParamId> {
        match &self.gates {
            Gates::Lstm {
                w_o,
                w_f,
                w_i,
                w_c,
                b_o,
                b_f,
                b_i,
                b_c,
            } => vec![*w_o, *w_f, *w_i, *w_c, *b_o, *b_f, *b_i, *b_c],
            Gates::Gru {
                w_u,
                w_h,
                w_r,
                b_u,
                b_h,
                b_r,
            } => vec![*w_u, *w_h, *w_r, *b_u, *b_h, *b_r],
        }
    }

    pub fn zero_state(&self, g: &mut Graph, batch: usize) -> CellState {
        let h = g.constant(Tensor::zeros(&[batch, self.hidden]));
        let c = match self.kind {
            CellKind::Lstm => Some(h),
            CellKind::Gru => None,
        };
        CellState { h, c }
    }

    fn check_dims(&self, g: &Graph, h: Var, x: Var) -> Result<()> {
        let (hs, xs) = (g.value(h).dims2(), g.value(x).dims2());
        if hs.1 != self.hidden || xs.1 != self.input || hs.0 != xs.0 {
            return Err(Error::ShapeMismatch {
                op: "cell step",
                left: g.shape(h).to_vec(),
                right: g.shape(x).to_vec(),
            });
        }
        Ok(())
    }

    /// One step of whichever kind this cell is.
    pub fn step(&self, g: &mut Graph, b: &Bound, state: CellState, x: Var) -> Result<CellState> {
        match self.kind {
            CellKind::Lstm => {
                let c = state.c.ok_or(Error::InvalidShape {
                    op: "lstm_step",
                    reason: "missing memory cell".into(),
                })?;
                let (h, c) = lstm_step(g, b, self, state.h, c, x)?;
                Ok(CellState { h, c: Some(c) })
            }
            CellKind::Gru => Ok(CellState {
                h: gru_step(g, b, self, state.h, x)?,
                c: None,
            }),
        }
    }
}

fn affine(g: &mut Graph, b: &Bound, input: Var, w: ParamId, bias: ParamId) -> Result<Var> {
    let m = g.matmul(input, b.var(w))?;
    g.add(m, b.var(bias))
}

/// LSTM step: `o, f, i = σ([h, x]·W + b)`, `c̃ = tanh(·)`,
/// `c = f∘c_prev + i∘c̃`, `h = o∘c` (or `o∘tanh(c)` when
/// `standard_lstm_output` is set).
pub fn lstm_step(
    g: &mut Graph,
    b: &Bound,
    cell: &CellParams,
    h_prev: Var,
    c_prev: Var,
    x: Var,
) -> Result<(Var, Var)> {
    let Gates::Lstm {
        w_o,
        w_f,
        w_i,
        w_c,
        b_o,
        b_f,
        b_i,
        b_c,
    } = cell.gates
    else {
        return Err(Error::invalid("cell", "lstm_step needs LSTM parameters"));
    };
    cell.check_dims(g, h_prev, x)?;
    let hx = g.concat_cols(&[h_prev, x])?;
    let o = affine(g, b, hx, w_o, b_o)?;
    let o = g.sigmoid(o);
    let f = affine(g, b, hx, w_f, b_f)?;
    let f = g.sigmoid(f);
    let i = affine(g, b, hx, w_i, b_i)?;
    let i = g.sigmoid(i);
    let cand = affine(g, b, hx, w_c, b_c)?;
    let cand = g.tanh(cand);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let out = if cell.standard_lstm_output {
        g.tanh(c)
    } else {
        c
    };
    let h = g.mul(o, out)?;
    Ok((h, c))
}

/// GRU step: `h = (1 - u)∘h_prev + u∘h̃` with
/// `h̃ = tanh([r∘h_prev, x]·W_h + b_h)`.
pub fn gru_step(g: &mut Graph, b: &Bound, cell: &CellParams, h_prev: Var, x: Var) -> Result<Var> {
    let Gates::Gru {
        w_u,
        w_h,
        w_r,
        b_u,
        b_h,
        b_r,
    } = cell.gates
    else {
        return Err(Error::invalid("cell", "gru_step needs GRU parameters"));
    };
    cell.check_dims(g, h_prev, x)?;
    let hx = g.concat_cols(&[h_prev, x])?;
    let u = affine(g, b, hx, w_u, b_u)?;
    let u = g.sigmoid(u);
    let r = affine(g, b, hx, w_r, b_r)?;
    let r = g.sigmoid(r);
    let rh = g.mul(r, h_prev)?;
    let rhx = g.concat_cols(&[rh, x])?;
    let cand = affine(g, b, rhx, w_h, b_h)?;
    let cand = g.tanh(cand);
    // (1 - u)∘h + u∘h̃ == h + u∘(h̃ - h)
    let delta = g.sub(cand, h_prev)?;
    let moved = g.mul(u, delta)?;
    g.add(h_prev, moved)
}

/// Per-step binary path weights `(w1, w2)` and skip length of one SRNN.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrnnMask {
    steps: Vec<(u8, u8)>,
    skip: usize,
}

pub const MAX_SKIP: usize = 3;

impl SrnnMask {
    pub fn new(steps: Vec<(u8, u8)>, skip: usize) -> Result<Self> {
        if !(1..=MAX_SKIP).contains(&skip) {
            return Err(Error::invalid("skip", format!("{skip} not in 1..={MAX_SKIP}")));
        }
        if steps.is_empty() {
            return Err(Error::EmptyInput("srnn mask"));
        }
        for (t, &(w1, w2)) in steps.iter().enumerate() {
            if w1 > 1 || w2 > 1 || w1 + w2 == 0 {
                return Err(Error::invalid(
                    "mask",
                    format!("step {t} has weights ({w1}, {w2}); each must be 0/1, not both 0"),
                ));
            }
        }
        Ok(Self { steps, skip })
    }

    /// Draw each step uniformly from `{(0,1), (1,0), (1,1)}`.
    pub fn sample<R: Rng + ?Sized>(len: usize, skip: usize, rng: &mut R) -> Result<Self> {
        const CHOICES: [(u8, u8); 3] = [(0, 1), (1, 0), (1, 1)];
        let steps = (0..len).map(|_| CHOICES[rng.random_range(0..3)]).collect();
        Self::new(steps, skip)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn skip(&self) -> usize {
        self.skip
    }

    pub fn at(&self, t: usize) -> (u8, u8) {
        self.steps[t]
    }

    pub fn steps(&self) -> &[(u8, u8)] {
        &self.steps
    }
}

/// A recurrent cell plus the linear skip map of the stochastic recurrence.
#[derive(Clone, Debug, PartialEq)]
pub struct SrnnCell {
    pub cell: CellParams,
    pub mask: SrnnMask,
    skip_w: ParamId,
    skip_b: ParamId,
}

impl SrnnCell {
    pub fn new<R: Rng + ?Sized>(
        cell: CellParams,
        mask: SrnnMask,
        prefix: &str,
        params: &mut ParamSet,
        rng: &mut R,
    ) -> Self {
        let fan_in = cell.hidden + cell.input;
        let skip_w = params.weight(format!("{prefix}.w_skip"), fan_in, cell.hidden, rng);
        let skip_b = params.bias(format!("{prefix}.b_skip"), fan_in, cell.hidden, rng);
        Self {
            cell,
            mask,
            skip_w,
            skip_b,
        }
    }

    /// Run over `inputs.len()` steps from a zero state; returns every state.
    pub fn run(&self, g: &mut Graph, b: &Bound, inputs: &[Var]) -> Result<Vec<CellState>> {
        let first = inputs.first().ok_or(Error::EmptyInput("srnn input"))?;
        if inputs.len() > self.mask.len() {
            return Err(Error::LengthMismatch {
                expected: self.mask.len(),
                actual: inputs.len(),
            });
        }
        let batch = g.value(*first).dims2().0;
        let zero = self.cell.zero_state(g, batch);
        let mut states: Vec<CellState> = Vec::with_capacity(inputs.len());
        for (t, &x) in inputs.iter().enumerate() {
            let prev = if t == 0 { zero } else { states[t - 1] };
            let skipped = if t >= self.mask.skip() {
                states[t - self.mask.skip()].h
            } else {
                zero.h
            };
            states.push(srnn_step(g, b, self, prev, skipped, x, t)?);
        }
        Ok(states)
    }
}

/// `h(t) = [w1·f_rnn(h(t-1), x) + w2·f'(h(t-s), x)] / (w1 + w2)` where
/// `f'` is the affine map of `[h(t-s), x]`. The LSTM memory cell advances
/// only on steps where the recurrent path is active.
pub fn srnn_step(
    g: &mut Graph,
    b: &Bound,
    srnn: &SrnnCell,
    prev: CellState,
    h_skip: Var,
    x: Var,
    t: usize,
) -> Result<CellState> {
    if t >= srnn.mask.len() {
        return Err(Error::invalid(
            "t",
            format!("mask defined for {} steps, asked for {t}", srnn.mask.len()),
        ));
    }
    let (w1, w2) = srnn.mask.at(t);
    let recurrent = if w1 == 1 {
        Some(srnn.cell.step(g, b, prev, x)?)
    } else {
        None
    };
    let skip = if w2 == 1 {
        let hx = g.concat_cols(&[h_skip, x])?;
        Some(affine(g, b, hx, srnn.skip_w, srnn.skip_b)?)
    } else {
        None
    };
    match (recurrent, skip) {
        (Some(r), None) => Ok(r),
        (None, Some(s)) => Ok(CellState { h: s, c: prev.c }),
        (Some(r), Some(s)) => {
            let sum = g.add(r.h, s)?;
            Ok(CellState {
                h: g.scale(sum, 0.5),
                c: r.c,
            })
        }
        (None, None) => unreachable!("mask constraint checked at construction"),
    }
}

/// Per-layer dilations of a dilated recurrent stack.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DilationSchedule(Vec<usize>);

impl DilationSchedule {
    /// `d^i = 3^i` for layers `i = 1..=layers`.
    pub fn exponential(layers: usize) -> Self {
        Self((1..=layers as u32).map(|i| 3usize.pow(i)).collect())
    }

    pub fn new(dilations: Vec<usize>) -> Result<Self> {
        if dilations.is_empty() {
            return Err(Error::EmptyInput("dilation schedule"));
        }
        if dilations.contains(&0) {
            return Err(Error::invalid("dilation", "every dilation must be >= 1"));
        }
        Ok(Self(dilations))
    }

    pub fn dilations(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub struct DilatedOutput {
    /// `states[layer][t]`.
    pub states: Vec<Vec<CellState>>,
    /// Last state of every layer.
    pub finals: Vec<Var>,
}

/// `h^i(t) = f(h^{i-1}(t), h^i(t - d^i))` with `h^0(t) = x(t)`; the
/// recurrent state is zero whenever `t - d^i < 0`.
pub fn dilated_forward(
    g: &mut Graph,
    b: &Bound,
    layers: &[CellParams],
    schedule: &DilationSchedule,
    xs: &[Var],
) -> Result<DilatedOutput> {
    if layers.len() != schedule.len() {
        return Err(Error::LengthMismatch {
            expected: layers.len(),
            actual: schedule.len(),
        });
    }
    let first = xs.first().ok_or(Error::EmptyInput("dilated input"))?;
    let batch = g.value(*first).dims2().0;

    let mut below: Vec<Var> = xs.to_vec();
    let mut states = Vec::with_capacity(layers.len());
    let mut finals = Vec::with_capacity(layers.len());
    for (cell, &d) in layers.iter().zip(schedule.dilations()) {
        let zero = cell.zero_state(g, batch);
        let mut layer: Vec<CellState> = Vec::with_capacity(below.len());
        for (t, &input) in below.iter().enumerate() {
            let prev = if t >= d { layer[t - d] } else { zero };
            layer.push(cell.step(g, b, prev, input)?);
        }
        below = layer.iter().map(|s| s.h).collect();
        finals.push(*below.last().expect("nonempty sequence"));
        states.push(layer);
    }
    Ok(DilatedOutput { states, finals })
}
