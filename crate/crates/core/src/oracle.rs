//! Brute-force reference computations on instances small enough to enumerate
//! every tree structure.
//!
//! Kernels are dense matrices built from explicit structure lists, and the
//! regression solutions come from direct factorizations. The verification
//! suite compares boosting against these references.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boosting::{BoostConfig, Booster};
use crate::data::{BinnedDataset, BinnedRows};
use crate::error::{Error, Result};
use crate::rng;
use crate::tree::{
    enumerate_structures, TreeSampler, TreeStructure, DEFAULT_MAX_PERMUTATION_DEPTH,
    DEFAULT_MAX_STRUCTURES,
};

/// Limits on brute-force work. Exceeding either is an error, never a truncation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleCaps {
    pub max_structures: u128,
    pub max_permutation_depth: usize,
}

impl Default for OracleCaps {
    fn default() -> Self {
        OracleCaps {
            max_structures: DEFAULT_MAX_STRUCTURES,
            max_permutation_depth: DEFAULT_MAX_PERMUTATION_DEPTH,
        }
    }
}

/// Kernel values between two point sets, rows indexing the first set.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix(DMatrix<f64>);

impl KernelMatrix {
    pub fn from_matrix(m: DMatrix<f64>) -> Self {
        KernelMatrix(m)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.0.diagonal().iter().copied().collect()
    }

    /// Largest `|K_ij - K_ji|`; infinite for non-square matrices.
    pub fn asymmetry(&self) -> f64 {
        if self.nrows() != self.ncols() {
            return f64::INFINITY;
        }
        let n = self.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                worst = worst.max((self.0[(i, j)] - self.0[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let scale = self.0.amax().max(1.0);
        self.asymmetry() <= tol * scale
    }

    /// Eigenvalues in ascending order of the symmetrized matrix.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        if self.nrows() != self.ncols() {
            return Err(Error::shape(
                "square kernel",
                format!("{}x{}", self.nrows(), self.ncols()),
            ));
        }
        let sym = (&self.0 + self.0.transpose()) * 0.5;
        let mut values: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
        values.sort_by(f64::total_cmp);
        Ok(values)
    }

    /// Symmetric to `1e-12` and no eigenvalue below `-1e-8`.
    pub fn check_psd(&self) -> Result<()> {
        if !self.is_symmetric(1e-12) {
            return Err(Error::Contract(format!(
                "kernel matrix is not symmetric (max deviation {:e})",
                self.asymmetry()
            )));
        }
        let min = self.eigenvalues()?.first().copied().unwrap_or(0.0);
        if min < -1e-8 * self.0.amax().max(1.0) {
            return Err(Error::Numerical(format!(
                "kernel matrix has eigenvalue {min:e}"
            )));
        }
        Ok(())
    }
}

/// `k_v(a, b) = N / max(N_j, 1)` when `a` and `b` fall in the same leaf `j`,
/// else 0, with `N_j` counted on the training rows.
pub fn weak_kernel(
    structure: &TreeStructure,
    data: &BinnedDataset,
    a: &BinnedRows,
    b: &BinnedRows,
) -> KernelMatrix {
    let mut out = DMatrix::zeros(a.n_rows(), b.n_rows());
    add_weak_kernel(&mut out, structure, data, a, b, 1.0);
    KernelMatrix(out)
}

fn add_weak_kernel(
    out: &mut DMatrix<f64>,
    structure: &TreeStructure,
    data: &BinnedDataset,
    a: &BinnedRows,
    b: &BinnedRows,
    weight: f64,
) {
    let n = data.n_rows() as f64;
    let counts = structure.assign(data.rows()).counts;
    let leaves_b: Vec<usize> = b.iter().map(|r| structure.leaf_index(r)).collect();
    for (i, row) in a.iter().enumerate() {
        let leaf = structure.leaf_index(row);
        let w = weight * n / counts[leaf].max(1) as f64;
        for (j, &lb) in leaves_b.iter().enumerate() {
            if lb == leaf {
                out[(i, j)] += w;
            }
        }
    }
}

/// `sum_v weight_v * k_v` accumulated in list order.
pub fn mixture_kernel(
    law: &[(TreeStructure, f64)],
    data: &BinnedDataset,
    a: &BinnedRows,
    b: &BinnedRows,
) -> KernelMatrix {
    let mut out = DMatrix::zeros(a.n_rows(), b.n_rows());
    for (structure, weight) in law {
        add_weak_kernel(&mut out, structure, data, a, b, *weight);
    }
    KernelMatrix(out)
}

/// Every structure of `min(depth, |S|)` splits with weight `1 / count`.
pub fn uniform_law(
    data: &BinnedDataset,
    depth: usize,
    caps: OracleCaps,
) -> Result<Vec<(TreeStructure, f64)>> {
    let structures = enumerate_structures(&data.candidates(), depth, caps.max_structures)?;
    let w = 1.0 / structures.len() as f64;
    Ok(structures.into_iter().map(|s| (s, w)).collect())
}

/// Every structure with its exact sampling probability under `residuals`.
pub fn structure_law(
    data: &BinnedDataset,
    residuals: &[f64],
    beta: f64,
    depth: usize,
    caps: OracleCaps,
) -> Result<Vec<(TreeStructure, f64)>> {
    if residuals.len() != data.n_rows() {
        return Err(Error::shape(data.n_rows(), residuals.len()));
    }
    let structures = enumerate_structures(&data.candidates(), depth, caps.max_structures)?;
    let probabilities: Vec<f64> = structures
        .par_iter()
        .map_init(
            || TreeSampler::new(data).max_permutation_depth(caps.max_permutation_depth),
            |sampler, s| sampler.probability(s, residuals, beta),
        )
        .collect::<Result<_>>()?;
    Ok(structures.into_iter().zip(probabilities).collect())
}

/// Uniform average of weak kernels over all structures.
pub fn stationary_kernel(
    data: &BinnedDataset,
    depth: usize,
    a: &BinnedRows,
    b: &BinnedRows,
    caps: OracleCaps,
) -> Result<KernelMatrix> {
    Ok(mixture_kernel(&uniform_law(data, depth, caps)?, data, a, b))
}

/// Weak kernels weighted by the tree law at residuals `y - f`.
pub fn greedy_kernel(
    data: &BinnedDataset,
    f_values: &[f64],
    beta: f64,
    depth: usize,
    a: &BinnedRows,
    b: &BinnedRows,
    caps: OracleCaps,
) -> Result<KernelMatrix> {
    if f_values.len() != data.n_rows() {
        return Err(Error::shape(data.n_rows(), f_values.len()));
    }
    let residuals: Vec<f64> = data
        .targets()
        .iter()
        .zip(f_values)
        .map(|(y, f)| y - f)
        .collect();
    let law = structure_law(data, &residuals, beta, depth, caps)?;
    Ok(mixture_kernel(&law, data, a, b))
}

enum Inverse {
    Cholesky(Cholesky<f64, Dyn>),
    Pseudo(DMatrix<f64>),
}

/// Kernel regression solution `(K + lambda I)^-1 y` with the scales of the
/// matching Gaussian process (`lambda = delta^2 / sigma^2`).
pub struct GpPosterior {
    weights: DVector<f64>,
    lambda: f64,
    sigma: f64,
    delta: f64,
    train_kernel: KernelMatrix,
    inverse: Inverse,
}

impl std::fmt::Debug for GpPosterior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GpPosterior")
            .field("weights", &self.weights)
            .field("lambda", &self.lambda)
            .field("sigma", &self.sigma)
            .field("delta", &self.delta)
            .finish()
    }
}

fn apply_cholesky(chol: &Cholesky<f64, Dyn>, a: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut x = chol.solve(v);
    // one refinement pass
    let r = v - a * &x;
    x += chol.solve(&r);
    x
}

/// Solve kernel ridge regression. `lambda > 0` uses a Cholesky solve with one
/// refinement pass; `lambda == 0` uses the eigen pseudoinverse with relative
/// cutoff `1e-10`.
pub fn krr_solve(k_train: &KernelMatrix, y: &[f64], lambda: f64) -> Result<GpPosterior> {
    gp_from_parts(k_train, y, lambda, 1.0, lambda.max(0.0).sqrt())
}

/// Gaussian-process posterior with prior scale `sigma` and noise `delta`.
pub fn gp_posterior(
    k_train: &KernelMatrix,
    y: &[f64],
    sigma: f64,
    delta: f64,
) -> Result<GpPosterior> {
    if !(sigma > 0.0 && sigma.is_finite()) || !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "need sigma > 0 and delta >= 0, got sigma = {sigma}, delta = {delta}"
        )));
    }
    gp_from_parts(k_train, y, (delta * delta) / (sigma * sigma), sigma, delta)
}

fn gp_from_parts(
    k_train: &KernelMatrix,
    y: &[f64],
    lambda: f64,
    sigma: f64,
    delta: f64,
) -> Result<GpPosterior> {
    let n = k_train.nrows();
    if k_train.ncols() != n {
        return Err(Error::Contract(format!(
            "training kernel must be square, got {}x{}",
            n,
            k_train.ncols()
        )));
    }
    if !k_train.is_symmetric(1e-12) {
        return Err(Error::Contract(format!(
            "training kernel is not symmetric (max deviation {:e})",
            k_train.asymmetry()
        )));
    }
    if y.len() != n {
        return Err(Error::shape(n, y.len()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let yv = DVector::from_column_slice(y);
    let (weights, inverse) = if lambda > 0.0 {
        let a = k_train.matrix() + DMatrix::identity(n, n) * lambda;
        let chol = Cholesky::new(a.clone())
            .ok_or_else(|| Error::Numerical("K + lambda I is not positive definite".into()))?;
        let w = apply_cholesky(&chol, &a, &yv);
        let residual = (&a * &w - &yv).norm();
        if residual > 1e-8 * yv.norm() {
            return Err(Error::Numerical(format!(
                "linear solve residual {residual:e} exceeds 1e-8 * ||y||"
            )));
        }
        (w, Inverse::Cholesky(chol))
    } else {
        let pinv = pseudo_inverse(k_train.matrix());
        (&pinv * &yv, Inverse::Pseudo(pinv))
    };
    Ok(GpPosterior {
        weights,
        lambda,
        sigma,
        delta,
        train_kernel: k_train.clone(),
        inverse,
    })
}

fn pseudo_inverse(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let sym = (k + k.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = 1e-10 * max;
    let mut out = DMatrix::zeros(n, n);
    for (i, &value) in eig.eigenvalues.iter().enumerate() {
        if value > cutoff {
            let v = eig.eigenvectors.column(i);
            out += (v * v.transpose()) / value;
        }
    }
    out
}

impl GpPosterior {
    pub fn weights(&self) -> &[f64] {
        self.weights.as_slice()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn train_kernel(&self) -> &KernelMatrix {
        &self.train_kernel
    }

    fn apply_inverse(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.inverse {
            Inverse::Cholesky(chol) => {
                let a =
                    self.train_kernel.matrix() + DMatrix::identity(v.len(), v.len()) * self.lambda;
                apply_cholesky(chol, &a, v)
            }
            Inverse::Pseudo(p) => p * v,
        }
    }

    /// Posterior mean `K(q, X) w` given the query-by-train kernel.
    pub fn mean(&self, k_query_train: &KernelMatrix) -> Result<Vec<f64>> {
        if k_query_train.ncols() != self.weights.len() {
            return Err(Error::shape(self.weights.len(), k_query_train.ncols()));
        }
        Ok((k_query_train.matrix() * &self.weights)
            .iter()
            .copied()
            .collect())
    }

    /// Fitted values at the training points.
    pub fn train_fit(&self) -> Vec<f64> {
        (self.train_kernel.matrix() * &self.weights)
            .iter()
            .copied()
            .collect()
    }

    /// Reduced kernel `K(x,x) - k (K + lambda I)^-1 k^T` per query.
    /// Fails when a value is below `-1e-8` (scaled by `max(1, K(x,x))`).
    pub fn reduced_kernel(
        &self,
        k_query_train: &KernelMatrix,
        k_query_diag: &[f64],
    ) -> Result<Vec<f64>> {
        let n = self.weights.len();
        if k_query_train.ncols() != n {
            return Err(Error::shape(n, k_query_train.ncols()));
        }
        if k_query_diag.len() != k_query_train.nrows() {
            return Err(Error::shape(k_query_train.nrows(), k_query_diag.len()));
        }
        let mut out = Vec::with_capacity(k_query_diag.len());
        for (i, &kxx) in k_query_diag.iter().enumerate() {
            let k: DVector<f64> = k_query_train.matrix().row(i).transpose();
            let explained = if n == 0 {
                0.0
            } else {
                k.dot(&self.apply_inverse(&k))
            };
            let value = kxx - explained;
            if value < -1e-8 * kxx.abs().max(1.0) {
                return Err(Error::Numerical(format!(
                    "posterior variance {value:e} at query {i} is negative"
                )));
            }
            out.push(value.max(0.0));
        }
        Ok(out)
    }

    /// `delta^2 + sigma^2 * reduced kernel` per query.
    pub fn variance(&self, k_query_train: &KernelMatrix, k_query_diag: &[f64]) -> Result<Vec<f64>> {
        let d2 = self.delta * self.delta;
        let s2 = self.sigma * self.sigma;
        Ok(self
            .reduced_kernel(k_query_train, k_query_diag)?
            .into_iter()
            .map(|k| d2 + s2 * k)
            .collect())
    }
}

/// Minimum-norm interpolating fit at the training points under the
/// stationary kernel, `K K^+ y`.
pub fn ridgeless_fit(data: &BinnedDataset, depth: usize, caps: OracleCaps) -> Result<Vec<f64>> {
    let k = stationary_kernel(data, depth, data.rows(), data.rows(), caps)?;
    Ok(krr_solve(&k, data.targets(), 0.0)?.train_fit())
}

/// Regularized fit `K (K + lambda I)^-1 y` at the training points; the
/// ridgeless fit when `lambda == 0`.
pub fn krr_fit(
    data: &BinnedDataset,
    depth: usize,
    lambda: f64,
    caps: OracleCaps,
) -> Result<Vec<f64>> {
    let k = stationary_kernel(data, depth, data.rows(), data.rows(), caps)?;
    Ok(krr_solve(&k, data.targets(), lambda)?.train_fit())
}

/// Indicators (over training rows) of every non-empty leaf of every structure.
pub fn indicator_basis(
    data: &BinnedDataset,
    depth: usize,
    caps: OracleCaps,
) -> Result<Vec<Vec<f64>>> {
    let structures = enumerate_structures(&data.candidates(), depth, caps.max_structures)?;
    let mut basis = Vec::new();
    for s in &structures {
        let assignment = s.assign(data.rows());
        for (leaf, &count) in assignment.counts.iter().enumerate() {
            if count > 0 {
                basis.push(
                    assignment
                        .leaf_of
                        .iter()
                        .map(|&l| if l == leaf { 1.0 } else { 0.0 })
                        .collect(),
                );
            }
        }
    }
    Ok(basis)
}

/// Largest `|<y - fit, phi>| / (||y|| ||phi||)` over the indicator basis.
pub fn orthogonality_violation(
    data: &BinnedDataset,
    fit: &[f64],
    depth: usize,
    caps: OracleCaps,
) -> Result<f64> {
    if fit.len() != data.n_rows() {
        return Err(Error::shape(data.n_rows(), fit.len()));
    }
    let y = data.targets();
    let residual: Vec<f64> = y.iter().zip(fit).map(|(a, b)| a - b).collect();
    let y_norm = y
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for phi in indicator_basis(data, depth, caps)? {
        let dot: f64 = residual.iter().zip(&phi).map(|(r, p)| r * p).sum();
        let norm = phi.iter().sum::<f64>().sqrt();
        worst = worst.max(dot.abs() / (y_norm * norm));
    }
    Ok(worst)
}

fn mean_squared_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// One point of the convergence curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    #[serde(rename = "T")]
    pub iterations: usize,
    pub mean_squared_gap: f64,
    pub trials: usize,
}

/// `(1/N) ||f_T - f_lambda||^2` against the number of iterations, averaged over trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub curve: Vec<CurvePoint>,
    /// Gap averaged over the second half of the iterations and over trials.
    pub floor_estimate: f64,
    /// Log-gap slope per iteration while the gap is well above the floor,
    /// or `None` when there is no such stretch.
    pub decay_rate_estimate: Option<f64>,
    /// Per-trial second-half averages.
    pub trial_floors: Vec<f64>,
}

#[derive(Serialize)]
struct ConvergenceSummary {
    floor_estimate: f64,
    decay_rate_estimate: Option<f64>,
}

impl ConvergenceReport {
    pub fn write_curve_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for p in &self.curve {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ConvergenceSummary {
            floor_estimate: self.floor_estimate,
            decay_rate_estimate: self.decay_rate_estimate,
        })?)
    }

    /// Standard error of `floor_estimate` across trials.
    pub fn floor_standard_error(&self) -> f64 {
        let k = self.trial_floors.len();
        if k < 2 {
            return f64::NAN;
        }
        let mean = self.floor_estimate;
        let var = self
            .trial_floors
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / (k - 1) as f64;
        (var / k as f64).sqrt()
    }
}

/// Iteration counts `0, 1, 2, 5, 10, 20, 50, ...` up to and including `t`.
fn checkpoints(t: usize) -> Vec<usize> {
    let mut out = vec![0];
    let mut decade = 1;
    'outer: loop {
        for m in [1, 2, 5] {
            let c = m * decade;
            if c >= t {
                break 'outer;
            }
            out.push(c);
        }
        decade *= 10;
    }
    if t > 0 {
        out.push(t);
    }
    out
}

/// Boost `trials` times (seeds derived from `cfg.seed`) and track the mean
/// squared gap to the kernel ridge solution with `lambda = cfg.l2_regularization`.
pub fn verify_convergence(
    data: &BinnedDataset,
    cfg: &BoostConfig,
    trials: usize,
    caps: OracleCaps,
) -> Result<ConvergenceReport> {
    if trials == 0 {
        return Err(Error::InvalidConfig("need at least one trial".into()));
    }
    cfg.validate(data.n_rows())?;
    let target = krr_fit(data, cfg.depth, cfg.l2_regularization, caps)?;
    let t = cfg.iterations;
    let marks = checkpoints(t);
    let tail_start = t / 2 + 1;
    let runs: Vec<(Vec<f64>, f64)> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let trial_cfg = BoostConfig {
                seed: rng::derive_seed(cfg.seed, trial as u64),
                record_trace: false,
                ..cfg.clone()
            };
            let mut booster = Booster::new(data, &trial_cfg)?.discard_trees();
            let mut gaps = Vec::with_capacity(marks.len());
            let mut tail = 0.0;
            let mut next = 0;
            for tau in 0..=t {
                if tau > 0 {
                    booster.step();
                }
                let needs_tail = t > 0 && tau >= tail_start;
                let at_mark = marks.get(next) == Some(&tau);
                if needs_tail || at_mark {
                    let gap = mean_squared_gap(booster.train_predictions(), &target);
                    if needs_tail {
                        tail += gap;
                    }
                    if at_mark {
                        gaps.push(gap);
                        next += 1;
                    }
                }
            }
            let floor = if t == 0 {
                gaps[0]
            } else {
                tail / (t + 1 - tail_start) as f64
            };
            Ok((gaps, floor))
        })
        .collect::<Result<_>>()?;
    let curve: Vec<CurvePoint> = marks
        .iter()
        .enumerate()
        .map(|(i, &m)| CurvePoint {
            iterations: m,
            mean_squared_gap: runs.iter().map(|r| r.0[i]).sum::<f64>() / trials as f64,
            trials,
        })
        .collect();
    let trial_floors: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let floor = trial_floors.iter().sum::<f64>() / trials as f64;
    let start = curve[0].mean_squared_gap;
    let decay_rate_estimate = curve
        .iter()
        .skip(1)
        .rfind(|p| p.mean_squared_gap > 10.0 * floor)
        .filter(|_| start > 0.0)
        .map(|p| (start.ln() - p.mean_squared_gap.ln()) / p.iterations as f64);
    Ok(ConvergenceReport {
        curve,
        floor_estimate: floor,
        decay_rate_estimate,
        trial_floors,
    })
}

/// Floors at learning rates `lr` and `lr / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct FloorComparison {
    pub full: ConvergenceReport,
    pub halved: ConvergenceReport,
}

impl FloorComparison {
    /// `floor(lr / 2) / floor(lr)`.
    pub fn ratio(&self) -> f64 {
        self.halved.floor_estimate / self.full.floor_estimate
    }
}

/// The halved run takes twice the iterations so both cover the same horizon
/// `lr * iterations`.
pub fn compare_floors(
    data: &BinnedDataset,
    cfg: &BoostConfig,
    trials: usize,
    caps: OracleCaps,
) -> Result<FloorComparison> {
    let full = verify_convergence(data, cfg, trials, caps)?;
    let halved_cfg = BoostConfig {
        learning_rate: cfg.learning_rate / 2.0,
        iterations: cfg.iterations * 2,
        ..cfg.clone()
    };
    let halved = verify_convergence(data, &halved_cfg, trials, caps)?;
    Ok(FloorComparison { full, halved })
}

/// Empirical structure frequencies against the exact law.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeLawComparison {
    pub structures: Vec<TreeStructure>,
    pub probabilities: Vec<f64>,
    pub counts: Vec<u64>,
    pub draws: u64,
}

impl TreeLawComparison {
    /// Largest `|count/draws - p| / sqrt(p (1 - p) / draws)`; infinite when a
    /// structure of probability 0 (or 1) is missed or hit.
    pub fn max_z(&self) -> f64 {
        let n = self.draws as f64;
        self.probabilities
            .iter()
            .zip(&self.counts)
            .map(|(&p, &c)| {
                let diff = (c as f64 / n - p).abs();
                let sd = (p * (1.0 - p) / n).sqrt();
                if sd > 0.0 {
                    diff / sd
                } else if diff > 1e-12 {
                    f64::INFINITY
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn probability_sum(&self) -> f64 {
        self.probabilities.iter().sum()
    }
}

/// Draw `draws` trees for `residuals` and tally them against the exact law.
pub fn compare_tree_law<R: Rng + ?Sized>(
    data: &BinnedDataset,
    residuals: &[f64],
    beta: f64,
    depth: usize,
    draws: u64,
    caps: OracleCaps,
    rng: &mut R,
) -> Result<TreeLawComparison> {
    let law = structure_law(data, residuals, beta, depth, caps)?;
    let index: std::collections::HashMap<TreeStructure, usize> = law
        .iter()
        .enumerate()
        .map(|(i, (s, _))| (s.clone(), i))
        .collect();
    let mut counts = vec![0u64; law.len()];
    let mut sampler = TreeSampler::new(data);
    for _ in 0..draws {
        let s = sampler.sample(residuals, depth, beta, rng);
        let i = index
            .get(&s)
            .ok_or_else(|| Error::Contract("sampled structure is not enumerated".into()))?;
        counts[*i] += 1;
    }
    let (structures, probabilities) = law.into_iter().unzip();
    Ok(TreeLawComparison {
        structures,
        probabilities,
        counts,
        draws,
    })
}
