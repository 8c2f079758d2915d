//! Estimation network: the membership estimator, mixture weights, EM
//! maintenance of means and covariances, and the sample energy
//! `E(z) = -log Σ_k φ_k N(z; μ_k, Σ_k)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{logsumexp, Bound, Graph, Linear, ParamSet, Tensor, Var};

pub const MEMBERSHIP_HIDDEN: usize = 10;
pub const DEFAULT_EPS_REG: f64 = 1e-6;
/// Floor applied to φ inside `log φ` so an empty component cannot produce
/// `-inf`.
pub const PHI_FLOOR: f64 = 1e-30;

/// `z -> tanh(z·W1 + b1) -> softmax(·W2 + b2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MembershipNet {
    pub input: usize,
    pub k: usize,
    hidden: Linear,
    out: Linear,
}

impl MembershipNet {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        input: usize,
        k: usize,
        params: &mut ParamSet,
        rng: &mut R,
    ) -> Result<Self> {
        if k == 0 || input == 0 {
            return Err(Error::invalid("K", "membership widths must be at least 1"));
        }
        let hidden = Linear::new(&format!("{prefix}.h"), input, MEMBERSHIP_HIDDEN, params, rng);
        let out = Linear::new(&format!("{prefix}.o"), MEMBERSHIP_HIDDEN, k, params, rng);
        Ok(Self {
            input,
            k,
            hidden,
            out,
        })
    }

    /// γ for a `[batch, input]` latent, as `[batch, K]`.
    pub fn forward(&self, g: &mut Graph, b: &Bound, z: Var) -> Result<Var> {
        let cols = g.value(z).dims2().1;
        if cols != self.input {
            return Err(Error::ShapeMismatch {
                op: "membership",
                left: vec![self.input],
                right: g.shape(z).to_vec(),
            });
        }
        let h = self.hidden.apply(g, b, z)?;
        let h = g.tanh(h);
        let logits = self.out.apply(g, b, h)?;
        g.softmax(logits)
    }
}

impl MembershipNet {
    /// Reorder outputs so new component `j` is old component `perm[j]`.
    pub fn permute(&self, params: &mut ParamSet, perm: &[usize]) -> Result<()> {
        check_perm(perm, self.k)?;
        let w = params.get(self.out.w).clone();
        let rows = w.dims2().0;
        let dst = params.get_mut(self.out.w).data_mut();
        for r in 0..rows {
            for (j, &p) in perm.iter().enumerate() {
                dst[r * self.k + j] = w.get2(r, p);
            }
        }
        let b = params.get(self.out.b).clone();
        let dst = params.get_mut(self.out.b).data_mut();
        for (j, &p) in perm.iter().enumerate() {
            dst[j] = b.data()[p];
        }
        Ok(())
    }
}

fn check_perm(perm: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    if perm.len() != k || !perm.iter().all(|&p| p < k && !std::mem::replace(&mut seen[p], true)) {
        return Err(Error::invalid("perm", format!("not a permutation of 0..{k}")));
    }
    Ok(())
}

/// `φ_k = Σ_i γ_ik / M`.
pub fn update_phi(gamma: &Tensor) -> Result<Vec<f64>> {
    let (m, k) = gamma.dims2();
    if m == 0 || gamma.numel() == 0 {
        return Err(Error::EmptyInput("membership batch"));
    }
    let mut phi = vec![0.0; k];
    for r in 0..m {
        for (p, v) in phi.iter_mut().zip(gamma.row(r)) {
            *p += v;
        }
    }
    for p in &mut phi {
        *p /= m as f64;
    }
    Ok(phi)
}

/// Mixture weights, means and (loaded) covariances of one branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmState {
    pub k: usize,
    pub dim: usize,
    pub phi: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major `dim × dim`, already including `eps_reg · I`.
    pub covs: Vec<Vec<f64>>,
    pub eps_reg: f64,
}

/// Cholesky view of one component: `L⁻¹` (row-major) and `log |Σ|`.
#[derive(Clone, Debug)]
pub struct Factor {
    pub l_inv: Vec<f64>,
    pub log_det: f64,
}

impl GmmState {
    /// Uniform φ, identity covariances, zero means.
    pub fn new(k: usize, dim: usize, eps_reg: f64) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(Error::invalid("K", "components and dimension must be at least 1"));
        }
        if !(eps_reg >= 0.0 && eps_reg.is_finite()) {
            return Err(Error::invalid("eps_reg", "must be finite and non-negative"));
        }
        let mut eye = vec![0.0; dim * dim];
        for i in 0..dim {
            eye[i * dim + i] = 1.0;
        }
        Ok(Self {
            k,
            dim,
            phi: vec![1.0 / k as f64; k],
            means: vec![vec![0.0; dim]; k],
            covs: vec![eye; k],
            eps_reg,
        })
    }

    /// Means seeded k-means++ style from the rows of `z`; every covariance is
    /// the batch covariance plus `eps_reg · I`.
    pub fn seeded<R: Rng + ?Sized>(k: usize, z: &Tensor, eps_reg: f64, rng: &mut R) -> Result<Self> {
        Self::seeded_weighted(k, z, &vec![1.0; z.dims2().0], eps_reg, rng)
    }

    /// [`GmmState::seeded`] where row `i` stands for `weights[i]` samples.
    pub fn seeded_weighted<R: Rng + ?Sized>(
        k: usize,
        z: &Tensor,
        weights: &[f64],
        eps_reg: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let (m, dim) = z.dims2();
        if m == 0 {
            return Err(Error::EmptyInput("latent batch"));
        }
        check_weights(weights, m)?;
        let mut state = Self::new(k, dim, eps_reg)?;
        let mut d2 = vec![1.0; m];
        let mut centers: Vec<usize> = Vec::with_capacity(k);
        while centers.len() < k {
            let mass: Vec<f64> = d2.iter().zip(weights).map(|(d, w)| d * w).collect();
            let total: f64 = mass.iter().sum();
            let next = if total > 0.0 {
                let mut target = rng.random_range(0.0..total);
                let mut pick = m - 1;
                for (i, w) in mass.iter().enumerate() {
                    if target < *w {
                        pick = i;
                        break;
                    }
                    target -= w;
                }
                pick
            } else {
                rng.random_range(0..m)
            };
            centers.push(next);
            for (i, d) in d2.iter_mut().enumerate() {
                let fresh = sq_dist(z.row(i), z.row(next));
                *d = if centers.len() == 1 { fresh } else { d.min(fresh) };
            }
        }
        let (_, cov) = weighted_moments(z, weights, eps_reg);
        for (c, &i) in centers.iter().enumerate() {
            state.means[c] = z.row(i).to_vec();
            state.covs[c] = cov.clone();
        }
        state.factor()?;
        Ok(state)
    }

    /// Reorder components so new component `j` is old component `perm[j]`.
    pub fn permute(&self, perm: &[usize]) -> Result<GmmState> {
        check_perm(perm, self.k)?;
        let mut out = self.clone();
        for (j, &p) in perm.iter().enumerate() {
            out.phi[j] = self.phi[p];
            out.means[j] = self.means[p].clone();
            out.covs[j] = self.covs[p].clone();
        }
        Ok(out)
    }

    /// Re-seed component `dead` by splitting `parent` one standard deviation
    /// each way along its principal axis; both halves keep the parent's
    /// covariance and share its weight.
    pub fn split(&self, parent: usize, dead: usize) -> Result<GmmState> {
        if parent >= self.k || dead >= self.k || parent == dead {
            return Err(Error::invalid("split", format!("components {parent} and {dead} of {}", self.k)));
        }
        let d = self.dim;
        let eig = nalgebra::SymmetricEigen::new(DMatrix::from_row_slice(d, d, &self.covs[parent]));
        let top = eig.eigenvalues.imax();
        let scale = eig.eigenvalues[top].max(0.0).sqrt();
        let axis = eig.eigenvectors.column(top);
        let mut out = self.clone();
        for i in 0..d {
            out.means[parent][i] = self.means[parent][i] - scale * axis[i];
            out.means[dead][i] = self.means[parent][i] + scale * axis[i];
        }
        out.covs[dead] = self.covs[parent].clone();
        let share = 0.5 * (self.phi[parent] + self.phi[dead]);
        out.phi[parent] = share;
        out.phi[dead] = share;
        Ok(out)
    }

    pub fn set_phi(&mut self, phi: Vec<f64>) -> Result<()> {
        if phi.len() != self.k {
            return Err(Error::LengthMismatch {
                expected: self.k,
                actual: phi.len(),
            });
        }
        self.phi = phi;
        Ok(())
    }

    pub fn factor(&self) -> Result<Vec<Factor>> {
        let d = self.dim;
        self.covs
            .iter()
            .enumerate()
            .map(|(component, cov)| {
                let m = DMatrix::from_row_slice(d, d, cov);
                let chol = m.cholesky().ok_or(Error::NotPositiveDefinite { component })?;
                let l = chol.l();
                let log_det = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
                let l_inv = l
                    .solve_lower_triangular(&DMatrix::identity(d, d))
                    .ok_or(Error::NotPositiveDefinite { component })?;
                let mut rows = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..d {
                        rows[i * d + j] = l_inv[(i, j)];
                    }
                }
                Ok(Factor {
                    l_inv: rows,
                    log_det,
                })
            })
            .collect()
    }

    fn check_dim(&self, z: &Tensor) -> Result<(usize, usize)> {
        let (m, d) = z.dims2();
        if d != self.dim {
            return Err(Error::ShapeMismatch {
                op: "gmm",
                left: vec![self.dim],
                right: z.shape().to_vec(),
            });
        }
        Ok((m, d))
    }

    /// `log φ_k + log N(z; μ_k, Σ_k)` for every row and component.
    pub fn component_log_densities(&self, z: &Tensor) -> Result<Tensor> {
        let (m, d) = self.check_dim(z)?;
        let factors = self.factor()?;
        let half_log_2pi = 0.5 * d as f64 * (2.0 * PI).ln();
        let mut out = vec![0.0; m * self.k];
        let mut y = vec![0.0; d];
        for i in 0..m {
            let zi = z.row(i);
            for (c, f) in factors.iter().enumerate() {
                let mu = &self.means[c];
                for (r, yr) in y.iter_mut().enumerate() {
                    *yr = (0..=r).map(|j| f.l_inv[r * d + j] * (zi[j] - mu[j])).sum();
                }
                let quad: f64 = y.iter().map(|v| v * v).sum();
                out[i * self.k + c] = self.phi[c].max(PHI_FLOOR).ln()
                    - 0.5 * quad
                    - 0.5 * f.log_det
                    - half_log_2pi;
            }
        }
        Tensor::matrix(m, self.k, out)
    }

    /// Per-row energy `-logsumexp_k(log φ_k + log N_k)`.
    pub fn energies(&self, z: &Tensor) -> Result<Vec<f64>> {
        let dens = self.component_log_densities(z)?;
        let m = dens.dims2().0;
        Ok((0..m).map(|i| -logsumexp(dens.row(i))).collect())
    }

    pub fn energy(&self, z: &[f64]) -> Result<f64> {
        let t = Tensor::matrix(1, z.len(), z.to_vec())?;
        Ok(self.energies(&t)?[0])
    }

    /// Sum of `log Σ_k φ_k N_k(z_i)` over the batch.
    pub fn log_likelihood(&self, z: &Tensor) -> Result<f64> {
        Ok(-self.energies(z)?.iter().sum::<f64>())
    }

    /// Posterior component probabilities `[M, K]` under the current state.
    pub fn responsibilities(&self, z: &Tensor) -> Result<Tensor> {
        let mut dens = self.component_log_densities(z)?;
        let k = self.k;
        for row in dens.data_mut().chunks_mut(k) {
            let lse = logsumexp(row);
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        Ok(dens)
    }

    /// `iterations` EM rounds on `z` with φ held fixed. Components that
    /// receive no responsibility keep their previous mean and covariance.
    pub fn em_update(&self, z: &Tensor, iterations: usize) -> Result<GmmState> {
        self.em_update_weighted(z, &vec![1.0; z.dims2().0], iterations)
    }

    /// [`GmmState::em_update`] where row `i` stands for `weights[i]` samples.
    pub fn em_update_weighted(&self, z: &Tensor, weights: &[f64], iterations: usize) -> Result<GmmState> {
        self.em(z, weights, iterations, false)
    }

    /// Weighted EM that also re-estimates φ as the mean responsibility.
    pub fn em_fit_weighted(&self, z: &Tensor, weights: &[f64], iterations: usize) -> Result<GmmState> {
        self.em(z, weights, iterations, true)
    }

    fn em(&self, z: &Tensor, weights: &[f64], iterations: usize, update_phi: bool) -> Result<GmmState> {
        let (m, _) = self.check_dim(z)?;
        if m == 0 {
            return Err(Error::EmptyInput("latent batch"));
        }
        check_weights(weights, m)?;
        let total: f64 = weights.iter().sum();
        let mut state = self.clone();
        for _ in 0..iterations {
            let resp = state.responsibilities(z)?;
            for c in 0..state.k {
                let w: Vec<f64> = (0..m).map(|i| weights[i] * resp.get2(i, c)).collect();
                let mass = w.iter().sum::<f64>();
                if update_phi {
                    state.phi[c] = mass / total;
                }
                if mass <= f64::MIN_POSITIVE {
                    continue;
                }
                let (mean, cov) = weighted_moments(z, &w, state.eps_reg);
                state.means[c] = mean;
                state.covs[c] = cov;
            }
            state.factor()?;
        }
        Ok(state)
    }

    /// Graph energy of a `[batch, dim]` latent with mixture weights `phi`
    /// (`[1, K]`). Means and covariances enter as constants.
    pub fn energy_graph(&self, g: &mut Graph, z: Var, phi: Var) -> Result<Var> {
        let (_, d) = g.value(z).dims2();
        if d != self.dim || g.value(phi).numel() != self.k {
            return Err(Error::ShapeMismatch {
                op: "energy",
                left: vec![self.k, self.dim],
                right: vec![g.value(phi).numel(), d],
            });
        }
        let factors = self.factor()?;
        let half_log_2pi = 0.5 * d as f64 * (2.0 * PI).ln();
        let phi = g.clamp(phi, PHI_FLOOR, f64::INFINITY);
        let log_phi = g.log(phi);
        let mut logits = Vec::with_capacity(self.k);
        for (c, f) in factors.iter().enumerate() {
            let mu = g.constant(Tensor::matrix(1, d, self.means[c].clone())?);
            let diff = g.sub(z, mu)?;
            // Rows of diff · L⁻ᵀ are L⁻¹(z - μ).
            let mut lt = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    lt[j * d + i] = f.l_inv[i * d + j];
                }
            }
            let lt = g.constant(Tensor::matrix(d, d, lt)?);
            let y = g.matmul(diff, lt)?;
            let y2 = g.mul(y, y)?;
            let quad = g.row_sum(y2);
            let quad = g.scale(quad, -0.5);
            let lp = g.slice_cols(log_phi, c, 1)?;
            let shift = g.constant(Tensor::scalar(-0.5 * f.log_det - half_log_2pi));
            let lp = g.add(lp, shift)?;
            logits.push(g.add(quad, lp)?);
        }
        let all = g.concat_cols(&logits)?;
        let lse = g.logsumexp_rows(all)?;
        Ok(g.neg(lse))
    }
}

fn check_weights(weights: &[f64], rows: usize) -> Result<()> {
    if weights.len() != rows {
        return Err(Error::LengthMismatch {
            expected: rows,
            actual: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::invalid("weights", "must be finite, non-negative and not all zero"));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Weighted mean and `1/Σw`-normalised scatter plus `eps · I`.
fn weighted_moments(z: &Tensor, w: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>) {
    let (m, d) = z.dims2();
    let total: f64 = w.iter().sum();
    let mut mean = vec![0.0; d];
    for i in 0..m {
        for (mu, v) in mean.iter_mut().zip(z.row(i)) {
            *mu += w[i] * v;
        }
    }
    for mu in &mut mean {
        *mu /= total;
    }
    let mut cov = vec![0.0; d * d];
    for i in 0..m {
        let zi = z.row(i);
        for a in 0..d {
            let da = zi[a] - mean[a];
            for b in a..d {
                cov[a * d + b] += w[i] * da * (zi[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / total;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
        cov[a * d + a] += eps;
    }
    (mean, cov)
}
