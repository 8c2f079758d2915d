use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{branch_rng, BranchKind, BranchModel, EnergyStats, EtNet, ModelConfig, Scaler};
use crate::compnet::Encoded;
use crate::error::{Error, Result};
use crate::mixture::{GmmState, PHI_FLOOR};
use crate::numcore::{AdamState, Graph, Tensor, Var};
use crate::series::TimeSeries;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// Reconstruction plus λ times energy.
    pub loss: f64,
    pub recon: f64,
    pub energy: f64,
    /// Cross-entropy of γ against the EM posteriors.
    pub membership: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchHistory {
    pub branch: BranchKind,
    pub epochs: Vec<EpochLoss>,
    pub stopped_early: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub w: BranchHistory,
    pub d: BranchHistory,
    /// Distinct training rows actually encoded per epoch.
    pub distinct_rows: usize,
}

/// `mean_i mean_j ‖x_i − x′ʲ_i‖² + λ · mean_i E_i` as a scalar var.
pub fn branch_loss(g: &mut Graph, x: Var, recons: &[Var], energy: Var, lambda: f64) -> Result<Var> {
    let rows = g.value(x).dims2().0;
    let wrow = g.constant(Tensor::full(&[1, rows], 1.0 / rows as f64));
    let (recon, energy) = weighted_terms(g, x, recons, energy, wrow)?;
    let e = g.scale(energy, lambda);
    let total = g.add(recon, e)?;
    Ok(g.sum(total))
}

/// Weighted reconstruction and energy means (`wrow` is `[1, batch]`).
fn weighted_terms(g: &mut Graph, x: Var, recons: &[Var], energy: Var, wrow: Var) -> Result<(Var, Var)> {
    if recons.is_empty() {
        return Err(Error::EmptyInput("reconstructions"));
    }
    let mut per_row: Option<Var> = None;
    for &r in recons {
        let diff = g.sub(x, r)?;
        let sq = g.mul(diff, diff)?;
        let err = g.row_sum(sq);
        per_row = Some(match per_row {
            Some(acc) => g.add(acc, err)?,
            None => err,
        });
    }
    let per_row = g.scale(per_row.expect("nonempty"), 1.0 / recons.len() as f64);
    let recon = g.matmul(wrow, per_row)?;
    let energy = g.matmul(wrow, energy)?;
    Ok((recon, energy))
}

struct Terms {
    recon: Var,
    energy: Var,
    membership: Var,
    total: Var,
}

fn build_terms(
    g: &mut Graph,
    x: &Tensor,
    enc: &Encoded,
    gamma: Var,
    wrow: Var,
    phi: Var,
    gmm: &GmmState,
    target: Tensor,
    cfg: &ModelConfig,
) -> Result<Terms> {
    let xv = g.constant(x.clone());
    let energy_col = gmm.energy_graph(g, enc.z, phi)?;
    let (recon, energy) = weighted_terms(g, xv, &enc.recons, energy_col, wrow)?;

    let resp = g.constant(target);
    let safe = g.clamp(gamma, PHI_FLOOR, 1.0);
    let log_gamma = g.log(safe);
    let agree = g.mul(resp, log_gamma)?;
    let agree = g.row_sum(agree);
    let agree = g.matmul(wrow, agree)?;
    let membership = g.neg(agree);

    let e = g.scale(energy, cfg.lambda);
    let m = g.scale(membership, cfg.membership_weight);
    let total = g.add(recon, e)?;
    let total = g.add(total, m)?;
    Ok(Terms {
        recon,
        energy,
        membership,
        total,
    })
}

fn weighted_phi(gamma: &Tensor, weights: &[f64], n: f64) -> Vec<f64> {
    let k = gamma.dims2().1;
    let mut phi = vec![0.0; k];
    for (i, w) in weights.iter().enumerate() {
        for (p, v) in phi.iter_mut().zip(gamma.row(i)) {
            *p += w * v / n;
        }
    }
    phi
}

fn row_weights(weights: &[f64], n: f64) -> Tensor {
    Tensor::matrix(1, weights.len(), weights.iter().map(|w| w / n).collect()).expect("row")
}

fn slice_rows(x: &Tensor, start: usize, end: usize) -> Tensor {
    let cols = x.dims2().1;
    Tensor::matrix(end - start, cols, x.data()[start * cols..end * cols].to_vec()).expect("rows")
}

struct Step {
    grads: Vec<Tensor>,
    loss: EpochLoss,
}

/// The maintained mixture with φ taken from the batch memberships.
fn with_batch_phi(gmm: &GmmState, gamma: &Tensor, weights: &[f64], n: f64) -> Result<GmmState> {
    let mut state = gmm.clone();
    state.set_phi(weighted_phi(gamma, weights, n))?;
    Ok(state)
}

fn loss_of(g: &Graph, t: &Terms, lambda: f64) -> EpochLoss {
    let recon = g.value(t.recon).item();
    let energy = g.value(t.energy).item();
    EpochLoss {
        loss: recon + lambda * energy,
        recon,
        energy,
        membership: g.value(t.membership).item(),
    }
}

/// Whole batch in one graph; φ is a graph function of γ.
fn step_single(
    branch: &BranchModel,
    x: &Tensor,
    weights: &[f64],
    n: f64,
    refit: Refit<'_>,
    cfg: &ModelConfig,
) -> Result<Step> {
    let mut g = Graph::new();
    let b = branch.params.bind(&mut g);
    let enc = branch.compressor.forward(&mut g, &b, x)?;
    let gamma = branch.membership.forward(&mut g, &b, enc.z)?;
    let z_val = g.value(enc.z).clone();
    let gamma_val = g.value(gamma).clone();
    let fit = refit(&z_val, &gamma_val)?;
    let target = fit.responsibilities(&z_val)?;
    let state = with_batch_phi(&fit, &gamma_val, weights, n)?;

    let wrow = g.constant(row_weights(weights, n));
    let phi = g.matmul(wrow, gamma)?;
    let terms = build_terms(&mut g, x, &enc, gamma, wrow, phi, &state, target, cfg)?;
    let loss = loss_of(&g, &terms, cfg.lambda);
    let total = g.sum(terms.total);
    g.backward(total)?;
    Ok(Step {
        grads: b.grads(&g),
        loss,
    })
}

/// Chunked batch with the same gradient as [`step_single`]. φ couples all
/// rows, so a first pass collects memberships; each chunk then treats φ as
/// a constant and adds `γ · ∂L/∂φ / n` to route the coupling gradient.
fn step_chunked(
    branch: &BranchModel,
    x: &Tensor,
    weights: &[f64],
    n: f64,
    refit: Refit<'_>,
    cfg: &ModelConfig,
) -> Result<Step> {
    let rows = x.dims2().0;
    let (z_val, gamma_val) = branch.encode(x, cfg.chunk_size)?;
    let fit = refit(&z_val, &gamma_val)?;
    let target = fit.responsibilities(&z_val)?;
    let state = with_batch_phi(&fit, &gamma_val, weights, n)?;

    // ∂(λ/n Σ_j w_j E_j)/∂φ_k with ∂E_j/∂φ_k = −r_jk / φ_k.
    let resp = state.responsibilities(&z_val)?;
    let k = state.k;
    let mut dphi = vec![0.0; k];
    for (c, d) in dphi.iter_mut().enumerate() {
        if state.phi[c] < PHI_FLOOR {
            continue;
        }
        let s: f64 = (0..rows).map(|j| weights[j] * resp.get2(j, c)).sum();
        *d = -cfg.lambda * s / (n * state.phi[c]);
    }

    let mut grads: Option<Vec<Tensor>> = None;
    let mut loss = EpochLoss {
        loss: 0.0,
        recon: 0.0,
        energy: 0.0,
        membership: 0.0,
    };
    for start in (0..rows).step_by(cfg.chunk_size) {
        let end = (start + cfg.chunk_size).min(rows);
        let xc = slice_rows(x, start, end);
        let mut g = Graph::new();
        let b = branch.params.bind(&mut g);
        let enc = branch.compressor.forward(&mut g, &b, &xc)?;
        let gamma = branch.membership.forward(&mut g, &b, enc.z)?;
        let wrow = g.constant(row_weights(&weights[start..end], n));
        let phi = g.constant(Tensor::matrix(1, k, state.phi.clone())?);
        let terms = build_terms(&mut g, &xc, &enc, gamma, wrow, phi, &state, slice_rows(&target, start, end), cfg)?;
        let part = loss_of(&g, &terms, cfg.lambda);
        loss.loss += part.loss;
        loss.recon += part.recon;
        loss.energy += part.energy;
        loss.membership += part.membership;

        let mass = g.matmul(wrow, gamma)?;
        let dphi_row = g.constant(Tensor::matrix(1, k, dphi.clone())?);
        let coupling = g.mul(mass, dphi_row)?;
        let coupling = g.sum(coupling);
        let total = g.sum(terms.total);
        let total = g.add(total, coupling)?;
        g.backward(total)?;
        let part_grads = b.grads(&g);
        grads = Some(match grads {
            None => part_grads,
            Some(mut acc) => {
                for (a, p) in acc.iter_mut().zip(&part_grads) {
                    for (x, y) in a.data_mut().iter_mut().zip(p.data()) {
                        *x += y;
                    }
                }
                acc
            }
        });
    }
    Ok(Step {
        grads: grads.expect("at least one chunk"),
        loss,
    })
}

fn train_rng(seed: u64, kind: BranchKind) -> ChaCha8Rng {
    let mut rng = branch_rng(seed, kind);
    rng.set_stream(16 + kind.stream());
    rng
}

/// Called with the batch's current latents and memberships; returns the
/// mixture whose means and covariances the energy uses.
type Refit<'a> = &'a mut dyn FnMut(&Tensor, &Tensor) -> Result<GmmState>;

fn step(branch: &BranchModel, x: &Tensor, weights: &[f64], refit: Refit<'_>, cfg: &ModelConfig) -> Result<Step> {
    let n: f64 = weights.iter().sum();
    if x.dims2().0 <= cfg.chunk_size {
        step_single(branch, x, weights, n, refit, cfg)
    } else {
        step_chunked(branch, x, weights, n, refit, cfg)
    }
}

/// One batch gradient against a fixed mixture, updating nothing (for tests).
#[cfg(test)]
pub(crate) fn batch_gradients(
    branch: &BranchModel,
    x: &Tensor,
    weights: &[f64],
    gmm: &GmmState,
    cfg: &ModelConfig,
) -> Result<(Vec<Tensor>, EpochLoss)> {
    let s = step(branch, x, weights, &mut |_, _| Ok(gmm.clone()), cfg)?;
    Ok((s.grads, s.loss))
}

/// Shuffled minibatches of sample indices (one batch when `batch_size` is 0).
fn batches(samples: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..samples).collect();
    if batch_size == 0 || batch_size >= samples {
        return vec![order];
    }
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Distinct rows of one batch with their multiplicities.
fn gather(unique: &Tensor, index: &[usize], batch: &[usize]) -> (Vec<usize>, Tensor, Vec<f64>) {
    let mut rows: Vec<usize> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for &i in batch {
        let u = index[i];
        let next = rows.len();
        let s = *slot.entry(u).or_insert(next);
        if s == next {
            rows.push(u);
            weights.push(0.0);
        }
        weights[s] += 1.0;
    }
    let cols = unique.dims2().1;
    let mut data = Vec::with_capacity(rows.len() * cols);
    for &u in &rows {
        data.extend_from_slice(unique.row(u));
    }
    let x = Tensor::matrix(rows.len(), cols, data).expect("rows");
    (rows, x, weights)
}

/// Latest latent and membership of every distinct training row, plus the
/// mixing weights EM estimates for itself.
struct Cache {
    z: Tensor,
    gamma: Tensor,
    mix: Vec<f64>,
}

impl Cache {
    fn update(&mut self, rows: &[usize], z: &Tensor, gamma: &Tensor) {
        let (dz, dk) = (self.z.dims2().1, self.gamma.dims2().1);
        for (r, &u) in rows.iter().enumerate() {
            self.z.data_mut()[u * dz..(u + 1) * dz].copy_from_slice(z.row(r));
            self.gamma.data_mut()[u * dk..(u + 1) * dk].copy_from_slice(gamma.row(r));
        }
    }

    /// EM on all rows with its own φ. The returned state carries that φ;
    /// the membership targets come from it.
    fn refit(&mut self, gmm: &GmmState, weights: &[f64], cfg: &ModelConfig) -> Result<GmmState> {
        let mut state = gmm.clone();
        state.set_phi(self.mix.clone())?;
        let state = state.em_fit_weighted(&self.z, weights, cfg.em_iterations)?;
        self.mix = state.phi.clone();
        Ok(state)
    }

    /// Split the widest component into every component whose EM weight is
    /// below half a sample, then refit.
    fn revive(&mut self, gmm: &GmmState, weights: &[f64], cfg: &ModelConfig) -> Result<GmmState> {
        let n: f64 = weights.iter().sum();
        let dead: Vec<usize> = (0..gmm.k).filter(|&c| gmm.phi[c] * n < 0.5).collect();
        if dead.is_empty() {
            return Ok(gmm.clone());
        }
        let mut state = gmm.clone();
        for &c in &dead {
            let spread = |p: usize| state.phi[p] * (0..state.dim).map(|i| state.covs[p][i * state.dim + i]).sum::<f64>();
            let parent = (0..state.k)
                .filter(|p| !dead.contains(p))
                .max_by(|&a, &b| spread(a).total_cmp(&spread(b)))
                .ok_or(Error::invalid("K", "every component is empty"))?;
            state = state.split(parent, c)?;
        }
        tracing::debug!(?dead, "re-seeded empty components");
        self.mix = state.phi.clone();
        self.refit(&state, weights, cfg)
    }

    /// The same state with φ from the cached memberships.
    fn network_phi(&self, gmm: &GmmState, weights: &[f64]) -> Result<GmmState> {
        with_batch_phi(gmm, &self.gamma, weights, weights.iter().sum())
    }
}

fn fit_branch(
    branch: &mut BranchModel,
    unique: &Tensor,
    weights: &[f64],
    index: &[usize],
    cfg: &ModelConfig,
) -> Result<BranchHistory> {
    let kind = branch.kind();
    let mut rng = train_rng(cfg.seed, kind);
    let samples = index.len();
    let mut adam = AdamState::new(cfg.learning_rate);

    let (z, gamma) = branch.encode(unique, cfg.chunk_size)?;
    let mut cache = Cache {
        z,
        gamma,
        mix: vec![1.0 / cfg.k as f64; cfg.k],
    };
    let seeded = GmmState::seeded_weighted(cfg.k, &cache.z, weights, cfg.eps_reg, &mut rng)?;
    let mut gmm = cache.refit(&seeded, weights, cfg)?;

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut stopped_early = false;
    for epoch in 0..cfg.epochs {
        let mut sum = EpochLoss {
            loss: 0.0,
            recon: 0.0,
            energy: 0.0,
            membership: 0.0,
        };
        gmm = cache.revive(&gmm, weights, cfg)?;
        for batch in batches(samples, cfg.batch_size, &mut rng) {
            let (rows, x, w) = gather(unique, index, &batch);
            // Refit on the batch's current latents so the energy pulls them
            // toward their components rather than back to stale positions.
            let mut refit = |z: &Tensor, gamma: &Tensor| {
                if !z.all_finite() || !gamma.all_finite() {
                    return Err(Error::NonFiniteLoss {
                        branch: kind.name(),
                        epoch,
                    });
                }
                cache.update(&rows, z, gamma);
                gmm = cache.refit(&gmm, weights, cfg)?;
                Ok(gmm.clone())
            };
            let s = step(branch, &x, &w, &mut refit, cfg)?;
            let objective = s.loss.loss + cfg.membership_weight * s.loss.membership;
            if !objective.is_finite() || s.grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::NonFiniteLoss {
                    branch: kind.name(),
                    epoch,
                });
            }
            adam.step(branch.params.tensors_mut(), &s.grads)?;

            let share = batch.len() as f64 / samples as f64;
            sum.loss += share * s.loss.loss;
            sum.recon += share * s.loss.recon;
            sum.energy += share * s.loss.energy;
            sum.membership += share * s.loss.membership;
        }
        tracing::debug!(branch = kind.name(), epoch, loss = sum.loss, "epoch");
        let objective = sum.loss + cfg.membership_weight * sum.membership;
        epochs.push(sum);

        if objective < best - cfg.early_stop_tol {
            best = objective;
            stale = 0;
        } else {
            stale += 1;
            if cfg.early_stop_patience > 0 && stale >= cfg.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }

    // Refit the mixture to the final parameters.
    let (z, gamma) = branch.encode(unique, cfg.chunk_size)?;
    cache.z = z;
    cache.gamma = gamma;
    let fit = cache.refit(&gmm, weights, cfg)?;
    branch.gmm = cache.network_phi(&fit, weights)?;
    Ok(BranchHistory {
        branch: kind,
        epochs,
        stopped_early,
    })
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc })
        .0
}

/// Weighted counts of rows whose W argmax is `a` and D argmax is `b`, as `c[a][b]`.
fn agreement(gamma_w: &Tensor, gamma_d: &Tensor, weights: &[f64]) -> Vec<Vec<f64>> {
    let k = gamma_w.dims2().1;
    let mut c = vec![vec![0.0; k]; k];
    for (i, w) in weights.iter().enumerate() {
        c[argmax(gamma_w.row(i))][argmax(gamma_d.row(i))] += w;
    }
    c
}

/// The permutation maximizing `Σ_j c[j][perm[j]]`: exhaustive up to eight
/// components, greedy beyond. Ties keep the identity order.
pub(super) fn best_permutation(c: &[Vec<f64>]) -> Vec<usize> {
    let k = c.len();
    if k > 8 {
        let mut used = vec![false; k];
        return (0..k)
            .map(|j| {
                let p = (0..k)
                    .filter(|&p| !used[p])
                    .fold(None, |best: Option<usize>, p| match best {
                        Some(b) if c[j][b] >= c[j][p] => Some(b),
                        _ => Some(p),
                    })
                    .expect("free component");
                used[p] = true;
                p
            })
            .collect();
    }
    fn search(c: &[Vec<f64>], j: usize, perm: &mut Vec<usize>, used: &mut [bool], score: f64, best: &mut (f64, Vec<usize>)) {
        if j == c.len() {
            if score > best.0 {
                *best = (score, perm.clone());
            }
            return;
        }
        for p in 0..c.len() {
            if !used[p] {
                used[p] = true;
                perm.push(p);
                search(c, j + 1, perm, used, score + c[j][p], best);
                perm.pop();
                used[p] = false;
            }
        }
    }
    let identity: Vec<usize> = (0..k).collect();
    let mut best = ((0..k).map(|j| c[j][j]).sum::<f64>(), identity);
    search(c, 0, &mut Vec::with_capacity(k), &mut vec![false; k], 0.0, &mut best);
    best.1
}

/// Distinct rows in first-seen order, their multiplicities, and the
/// distinct-row index of every input row.
fn dedup(x: &Tensor) -> (Tensor, Vec<f64>, Vec<usize>) {
    let (rows, cols) = x.dims2();
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut data = Vec::new();
    let mut weights = Vec::new();
    let mut index = Vec::with_capacity(rows);
    for r in 0..rows {
        let key: Vec<u64> = x.row(r).iter().map(|v| v.to_bits()).collect();
        let next = weights.len();
        let slot = *seen.entry(key).or_insert(next);
        if slot == next {
            data.extend_from_slice(x.row(r));
            weights.push(0.0);
        }
        weights[slot] += 1.0;
        index.push(slot);
    }
    let unique = Tensor::matrix(weights.len(), cols, data).expect("rows");
    (unique, weights, index)
}

impl EtNet {
    /// Train both branches independently on `data` (labels are ignored).
    pub fn train(config: ModelConfig, data: &[TimeSeries]) -> Result<(EtNet, TrainReport)> {
        config.validate()?;
        let first = data.first().ok_or(Error::EmptyInput("training set"))?;
        let len = first.len();
        if let Some(bad) = data.iter().find(|s| s.len() != len) {
            return Err(Error::LengthMismatch {
                expected: len,
                actual: bad.len(),
            });
        }
        let scaler = Scaler::fit(data.iter().map(|s| s.values.as_slice()))?;
        let mut model = EtNet::build(config, len, scaler)?;
        let x = model.prepare(data)?;
        let (unique, weights, index) = dedup(&x);
        let cfg = model.config.clone();

        let w = fit_branch(&mut model.w, &unique, &weights, &index, &cfg)?;
        let d = fit_branch(&mut model.d, &unique, &weights, &index, &cfg)?;

        let (zw, gw) = model.w.encode(&unique, cfg.chunk_size)?;
        let (_, gd) = model.d.encode(&unique, cfg.chunk_size)?;
        let perm = best_permutation(&agreement(&gw, &gd, &weights));
        model.d.membership.permute(&mut model.d.params, &perm)?;
        model.d.gmm = model.d.gmm.permute(&perm)?;

        let ew = model.w.gmm.energies(&zw)?;
        let ed = model.d.gmm.energies(&model.d.encode(&unique, cfg.chunk_size)?.0)?;
        let per_row = |e: &[f64]| index.iter().map(|&i| e[i]).collect::<Vec<_>>();
        model.w.stats = EnergyStats::of(&per_row(&ew));
        model.d.stats = EnergyStats::of(&per_row(&ed));
        let mut scores: Vec<f64> = index.iter().map(|&i| model.combine(ew[i], ed[i])).collect();
        scores.sort_by(f64::total_cmp);
        model.training_scores = scores;

        let report = TrainReport {
            w,
            d,
            distinct_rows: weights.len(),
        };
        Ok((model, report))
    }
}

#[cfg(test)]
pub(crate) fn dedup_for_tests(x: &Tensor) -> (Tensor, Vec<f64>, Vec<usize>) {
    dedup(x)
}
