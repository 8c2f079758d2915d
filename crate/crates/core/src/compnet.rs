//! The two compression networks. Each encodes a batch of series into a
//! compressed latent `z_c`, decodes reconstructions from it, and appends the
//! relative distance and cosine similarity between input and reconstruction
//! to form the extended latent `z = [z_c, d_rel, d_cos]`.
//!
//! Batches are `[batch, len]` tensors. Decoders take `z_c` as their input at
//! every step, start from a zero state, and emit the series back to front
//! through a linear readout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{dilated_forward, CellKind, CellParams, DilationSchedule, SrnnCell, SrnnMask};
use crate::error::{Error, Result};
use crate::numcore::{Bound, Graph, Linear, ParamSet, Tensor, Var};

pub const NORM_EPS: f64 = 1e-12;

/// `‖x − x′‖ / max(‖x‖, 1e-12)`.
pub fn rel_distance(x: &[f64], recon: &[f64]) -> Result<f64> {
    same_len(x, recon)?;
    let diff = x.iter().zip(recon).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(diff / norm(x).max(NORM_EPS))
}

/// `x·x′ / (‖x‖‖x′‖ + ε)` clamped to `[-1, 1]`, or 0 when either norm is
/// below ε.
pub fn cos_similarity(x: &[f64], recon: &[f64]) -> Result<f64> {
    same_len(x, recon)?;
    let (nx, nr) = (norm(x), norm(recon));
    if nx < NORM_EPS || nr < NORM_EPS {
        return Ok(0.0);
    }
    let dot: f64 = x.iter().zip(recon).map(|(a, b)| a * b).sum();
    Ok((dot / (nx * nr + NORM_EPS)).clamp(-1.0, 1.0))
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn same_len(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    Ok(())
}

/// Widths shared by both branches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchShape {
    pub cell: CellKind,
    /// Hidden width `N_N` of every cell.
    pub hidden: usize,
    /// Compressed latent width `L_c`.
    pub latent: usize,
    /// Series length; W-branch masks are drawn for this many steps.
    pub series_len: usize,
    #[serde(default)]
    pub standard_lstm_output: bool,
}

impl BranchShape {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("hidden", self.hidden),
            ("latent", self.latent),
            ("series_len", self.series_len),
        ] {
            if v == 0 {
                return Err(Error::invalid(name, "must be at least 1"));
            }
        }
        Ok(())
    }

    fn cell<R: Rng + ?Sized>(
        &self,
        input: usize,
        prefix: &str,
        params: &mut ParamSet,
        rng: &mut R,
    ) -> CellParams {
        let mut c = CellParams::new(self.cell, input, self.hidden, prefix, params, rng);
        c.standard_lstm_output = self.standard_lstm_output;
        c
    }
}

/// Output of one branch forward pass.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// One `[batch, len]` reconstruction per decoder.
    pub recons: Vec<Var>,
    /// `[batch, L_c]`.
    pub z_c: Var,
    /// `[batch, L_c + 2]`.
    pub z: Var,
    /// Per sample, the decoder indices whose relative distance and cosine
    /// similarity were reported.
    pub picks: Vec<(usize, usize)>,
}

/// W network: `N_E` SRNN encoder/decoder pairs around one shared latent.
#[derive(Clone, Debug, PartialEq)]
pub struct WBranch {
    pub shape: BranchShape,
    encoders: Vec<SrnnCell>,
    decoders: Vec<SrnnCell>,
    readouts: Vec<Linear>,
    combiner: Linear,
}

impl WBranch {
    /// Skip lengths cycle through 1, 2, 3 across the `n_e` pairs.
    pub fn new<R: Rng + ?Sized>(
        shape: BranchShape,
        n_e: usize,
        params: &mut ParamSet,
        rng: &mut R,
    ) -> Result<Self> {
        shape.validate()?;
        if n_e == 0 {
            return Err(Error::invalid("N_E", "must be at least 1"));
        }
        let mut encoders = Vec::with_capacity(n_e);
        let mut decoders = Vec::with_capacity(n_e);
        let mut readouts = Vec::with_capacity(n_e);
        for i in 0..n_e {
            let skip = i % crate::cells::MAX_SKIP + 1;
            let cell = shape.cell(1, &format!("w.enc{i}"), params, rng);
            let mask = SrnnMask::sample(shape.series_len, skip, rng)?;
            encoders.push(SrnnCell::new(cell, mask, &format!("w.enc{i}"), params, rng));

            let cell = shape.cell(shape.latent, &format!("w.dec{i}"), params, rng);
            let mask = SrnnMask::sample(shape.series_len, skip, rng)?;
            decoders.push(SrnnCell::new(cell, mask, &format!("w.dec{i}"), params, rng));
            readouts.push(Linear::new(&format!("w.out{i}"), shape.hidden, 1, params, rng));
        }
        let combiner = Linear::new("w.comb", n_e * shape.hidden, shape.latent, params, rng);
        Ok(Self {
            shape,
            encoders,
            decoders,
            readouts,
            combiner,
        })
    }

    pub fn n_e(&self) -> usize {
        self.encoders.len()
    }

    /// Encoder masks followed by decoder masks.
    pub fn masks(&self) -> Vec<SrnnMask> {
        self.encoders
            .iter()
            .chain(&self.decoders)
            .map(|s| s.mask.clone())
            .collect()
    }

    pub fn set_masks(&mut self, masks: Vec<SrnnMask>) -> Result<()> {
        let n = self.encoders.len();
        if masks.len() != 2 * n {
            return Err(Error::LengthMismatch {
                expected: 2 * n,
                actual: masks.len(),
            });
        }
        for (slot, mask) in self.encoders.iter_mut().chain(&mut self.decoders).zip(masks) {
            if mask.len() != self.shape.series_len {
                return Err(Error::LengthMismatch {
                    expected: self.shape.series_len,
                    actual: mask.len(),
                });
            }
            slot.mask = mask;
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, x: &Tensor) -> Result<Encoded> {
        let (batch, len) = check_batch(x, self.shape.series_len)?;
        let cols = columns(g, x);
        let mut finals = Vec::with_capacity(self.n_e());
        for enc in &self.encoders {
            let states = enc.run(g, b, &cols)?;
            finals.push(states[len - 1].h);
        }
        let joined = g.concat_cols(&finals)?;
        let z_c = self.combiner.apply(g, b, joined)?;

        let drive = vec![z_c; len];
        let mut recons = Vec::with_capacity(self.n_e());
        for (dec, readout) in self.decoders.iter().zip(&self.readouts) {
            let states = dec.run(g, b, &drive)?;
            let hs: Vec<Var> = states.iter().map(|s| s.h).collect();
            recons.push(read_reversed(g, b, readout, &hs)?);
        }

        let xv = g.constant(x.clone());
        let mut rels = Vec::with_capacity(self.n_e());
        let mut coss = Vec::with_capacity(self.n_e());
        for &r in &recons {
            let (rel, cos) = features(g, xv, x, r)?;
            rels.push(rel);
            coss.push(cos);
        }
        let picks: Vec<(usize, usize)> = (0..batch)
            .map(|row| {
                let p = arg_best(rels.iter().map(|&v| g.value(v).data()[row]), |a, b| a < b);
                let q = arg_best(coss.iter().map(|&v| g.value(v).data()[row]), |a, b| a > b);
                (p, q)
            })
            .collect();
        let d_rel = select(g, &rels, picks.iter().map(|p| p.0))?;
        let d_cos = select(g, &coss, picks.iter().map(|p| p.1))?;
        let z = g.concat_cols(&[z_c, d_rel, d_cos])?;
        Ok(Encoded {
            recons,
            z_c,
            z,
            picks,
        })
    }
}

/// D network: stacked dilated encoder and one recurrent decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct DBranch {
    pub shape: BranchShape,
    pub schedule: DilationSchedule,
    layers: Vec<CellParams>,
    decoder: CellParams,
    readout: Linear,
    combiner: Linear,
}

impl DBranch {
    pub fn new<R: Rng + ?Sized>(
        shape: BranchShape,
        schedule: DilationSchedule,
        params: &mut ParamSet,
        rng: &mut R,
    ) -> Result<Self> {
        shape.validate()?;
        let n_l = schedule.len();
        let layers = (0..n_l)
            .map(|i| {
                let input = if i == 0 { 1 } else { shape.hidden };
                shape.cell(input, &format!("d.enc{i}"), params, rng)
            })
            .collect();
        let decoder = shape.cell(shape.latent, "d.dec", params, rng);
        let readout = Linear::new("d.out", shape.hidden, 1, params, rng);
        let combiner = Linear::new("d.comb", n_l * shape.hidden, shape.latent, params, rng);
        Ok(Self {
            shape,
            schedule,
            layers,
            decoder,
            readout,
            combiner,
        })
    }

    pub fn n_l(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[CellParams] {
        &self.layers
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, x: &Tensor) -> Result<Encoded> {
        let (batch, len) = check_batch(x, usize::MAX)?;
        let cols = columns(g, x);
        let enc = dilated_forward(g, b, &self.layers, &self.schedule, &cols)?;
        let joined = g.concat_cols(&enc.finals)?;
        let z_c = self.combiner.apply(g, b, joined)?;

        let mut state = self.decoder.zero_state(g, batch);
        let mut hs = Vec::with_capacity(len);
        for _ in 0..len {
            state = self.decoder.step(g, b, state, z_c)?;
            hs.push(state.h);
        }
        let recon = read_reversed(g, b, &self.readout, &hs)?;

        let xv = g.constant(x.clone());
        let (d_rel, d_cos) = features(g, xv, x, recon)?;
        let z = g.concat_cols(&[z_c, d_rel, d_cos])?;
        Ok(Encoded {
            recons: vec![recon],
            z_c,
            z,
            picks: vec![(0, 0); batch],
        })
    }
}

fn check_batch(x: &Tensor, max_len: usize) -> Result<(usize, usize)> {
    if x.shape().len() != 2 {
        return Err(Error::InvalidShape {
            op: "branch forward",
            reason: format!("expected [batch, len], got {:?}", x.shape()),
        });
    }
    let (batch, len) = x.dims2();
    if batch == 0 || len == 0 {
        return Err(Error::EmptyInput("series batch"));
    }
    if len > max_len {
        return Err(Error::LengthMismatch {
            expected: max_len,
            actual: len,
        });
    }
    Ok((batch, len))
}

/// One `[batch, 1]` constant per time step.
fn columns(g: &mut Graph, x: &Tensor) -> Vec<Var> {
    let (batch, len) = x.dims2();
    (0..len)
        .map(|t| {
            let col = (0..batch).map(|r| x.get2(r, t)).collect();
            g.constant(Tensor::matrix(batch, 1, col).expect("column"))
        })
        .collect()
}

/// Apply the readout to every decoder state; step `k` is position `len-1-k`.
fn read_reversed(g: &mut Graph, b: &Bound, readout: &Linear, hs: &[Var]) -> Result<Var> {
    let mut outs = Vec::with_capacity(hs.len());
    for &h in hs.iter().rev() {
        outs.push(readout.apply(g, b, h)?);
    }
    g.concat_cols(&outs)
}

/// Per-row relative distance and cosine similarity as `[batch, 1]` vars.
fn features(g: &mut Graph, xv: Var, x: &Tensor, recon: Var) -> Result<(Var, Var)> {
    let (batch, _) = x.dims2();
    let x_norms: Vec<f64> = (0..batch).map(|r| norm(x.row(r))).collect();

    let diff = g.sub(xv, recon)?;
    let sq = g.mul(diff, diff)?;
    let ss = g.row_sum(sq);
    let dist = g.sqrt(ss);
    let inv = g.constant(col(x_norms.iter().map(|n| 1.0 / n.max(NORM_EPS))));
    let rel = g.mul(dist, inv)?;

    let prod = g.mul(xv, recon)?;
    let dot = g.row_sum(prod);
    let rsq = g.mul(recon, recon)?;
    let rss = g.row_sum(rsq);
    let rn = g.sqrt(rss);
    let r_norms: Vec<f64> = g.value(rn).data().to_vec();
    let xn = g.constant(col(x_norms.iter().copied()));
    let denom = g.mul(rn, xn)?;
    let eps = g.constant(Tensor::scalar(NORM_EPS));
    let denom = g.add(denom, eps)?;
    let cos = g.div(dot, denom)?;
    let cos = g.clamp(cos, -1.0, 1.0);
    let live = col(
        x_norms
            .iter()
            .zip(&r_norms)
            .map(|(a, b)| if *a < NORM_EPS || *b < NORM_EPS { 0.0 } else { 1.0 }),
    );
    let cos = if live.data().iter().all(|v| *v == 1.0) {
        cos
    } else {
        let live = g.constant(live);
        g.mul(cos, live)?
    };
    Ok((rel, cos))
}

fn col(values: impl Iterator<Item = f64>) -> Tensor {
    let v: Vec<f64> = values.collect();
    Tensor::matrix(v.len(), 1, v).expect("column")
}

/// Index of the best value; the first one wins ties.
fn arg_best(values: impl Iterator<Item = f64>, better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = (0, f64::NAN);
    for (i, v) in values.enumerate() {
        if i == 0 || better(v, best.1) {
            best = (i, v);
        }
    }
    best.0
}

/// Row-wise pick `candidates[choice[row]]` while keeping gradients.
fn select(g: &mut Graph, candidates: &[Var], choice: impl Iterator<Item = usize>) -> Result<Var> {
    if candidates.len() == 1 {
        return Ok(candidates[0]);
    }
    let choice: Vec<usize> = choice.collect();
    let mut acc: Option<Var> = None;
    for (i, &c) in candidates.iter().enumerate() {
        let mask = col(choice.iter().map(|&k| if k == i { 1.0 } else { 0.0 }));
        if mask.data().iter().all(|v| *v == 0.0) {
            continue;
        }
        let mask = g.constant(mask);
        let part = g.mul(c, mask)?;
        acc = Some(match acc {
            Some(a) => g.add(a, part)?,
            None => part,
        });
    }
    Ok(acc.expect("every row picks some candidate"))
}

#[cfg(test)]
mod tests;
