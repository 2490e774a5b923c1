//! Invariant checks of boosting against the brute-force oracle on one
//! enumerable instance.

use serde::Serialize;

use crate::boosting::{BoostConfig, Booster};
use crate::data::BinnedDataset;
use crate::error::{Error, Result};
use crate::oracle::{
    self, compare_floors, compare_tree_law, greedy_kernel, krr_solve, stationary_kernel,
    structure_law, uniform_law, weak_kernel, FloorComparison, KernelMatrix, OracleCaps,
};
use crate::rng;

const TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    /// Boosting settings used by the dynamic checks; `depth` and
    /// `random_strength` also select the oracle law.
    pub boost: BoostConfig,
    /// Seeds averaged by the convergence check; 0 skips it.
    pub trials: usize,
    /// Trees drawn by the frequency check; 0 skips it.
    pub law_draws: u64,
    pub caps: OracleCaps,
    /// Stored interpolating fit to test orthogonality against, instead of
    /// the freshly computed one.
    pub reference_fit: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Passed,
    Failed,
    Skipped,
    /// Reported property that does not hold on every instance.
    Warning,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
    pub convergence: Option<FloorComparison>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Failed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks
            .iter()
            .filter(|c| c.status == CheckStatus::Failed)
    }
}

struct Checks(Vec<CheckResult>);

impl Checks {
    fn push(&mut self, name: &'static str, ok: bool, detail: String) {
        let status = if ok {
            CheckStatus::Passed
        } else {
            CheckStatus::Failed
        };
        self.0.push(CheckResult {
            name,
            status,
            detail,
        });
    }

    fn warn_unless(&mut self, name: &'static str, ok: bool, detail: String) {
        let status = if ok {
            CheckStatus::Passed
        } else {
            CheckStatus::Warning
        };
        self.0.push(CheckResult {
            name,
            status,
            detail,
        });
    }

    fn skip(&mut self, name: &'static str, why: &str) {
        self.0.push(CheckResult {
            name,
            status: CheckStatus::Skipped,
            detail: why.to_string(),
        });
    }
}

/// Smallest non-zero and largest eigenvalue of `K / N`. Exact zeros come
/// from rows that share a leaf in every structure and are skipped.
pub fn scaled_spectrum_range(k: &KernelMatrix, n: usize) -> Result<(f64, f64)> {
    let n = n as f64;
    let values: Vec<f64> = k.eigenvalues()?.into_iter().map(|v| v / n).collect();
    let top = values.last().copied().unwrap_or(0.0);
    let low = values
        .iter()
        .copied()
        .find(|v| *v > 1e-10 * top.abs().max(1.0))
        .unwrap_or(top);
    Ok((low, top))
}

fn spectrum_checks(
    checks: &mut Checks,
    names: [&'static str; 2],
    k: &KernelMatrix,
    n: usize,
) -> Result<()> {
    let (low, top) = scaled_spectrum_range(k, n)?;
    checks.push(
        names[0],
        top <= 1.0 + TOL,
        format!("largest eigenvalue of K/N: {top:.6}"),
    );
    // the lower bound fails on some instances, so it is reported, not enforced
    checks.warn_unless(
        names[1],
        low >= 1.0 / n as f64 - TOL,
        format!(
            "smallest non-zero eigenvalue of K/N: {low:.6} (1/N = {:.6})",
            1.0 / n as f64
        ),
    );
    Ok(())
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Run every check. Capacity refusals are returned as errors, not failures.
pub fn run(data: &BinnedDataset, options: &VerifyOptions) -> Result<VerificationReport> {
    let cfg = &options.boost;
    cfg.validate(data.n_rows())?;
    let caps = options.caps;
    let depth = cfg.depth;
    let beta = cfg.random_strength;
    let n = data.n_rows();
    let rows = data.rows();
    let y = data.targets();
    let mut checks = Checks(Vec::new());

    let stationary = stationary_kernel(data, depth, rows, rows, caps)?;
    let psd = stationary.check_psd();
    checks.push(
        "kernel_symmetric_psd",
        psd.is_ok(),
        psd.err()
            .map_or_else(|| "symmetric and PSD".into(), |e| e.to_string()),
    );

    let mut worst = 0.0f64;
    for (s, _) in uniform_law(data, depth, caps)? {
        let k = weak_kernel(&s, data, rows, rows);
        let top = k.eigenvalues()?.last().copied().unwrap_or(0.0);
        worst = worst.max((top - n as f64).abs() / n as f64);
    }
    checks.push(
        "weak_kernel_spectral_norm",
        worst <= 1e-6,
        format!("max relative deviation of the top eigenvalue from N: {worst:.3e}"),
    );

    spectrum_checks(
        &mut checks,
        [
            "stationary_eigenvalue_upper_bound",
            "stationary_eigenvalue_lower_bound",
        ],
        &stationary,
        n,
    )?;

    let fstar = krr_solve(&stationary, y, 0.0)?.train_fit();
    let fit = options
        .reference_fit
        .clone()
        .unwrap_or_else(|| fstar.clone());
    if fit.len() != n {
        return Err(Error::shape(n, fit.len()));
    }
    let violation = oracle::orthogonality_violation(data, &fit, depth, caps)?;
    checks.push(
        "ridgeless_orthogonality",
        violation <= TOL,
        format!("max |<y - f, phi>| / (|y| |phi|): {violation:.3e}"),
    );
    if let Some(reference) = &options.reference_fit {
        let diff = max_abs_diff(reference, &fstar);
        let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        checks.push(
            "ridgeless_matches_reference",
            diff <= TOL * scale,
            format!("max |f_ref - f_*|: {diff:.3e}"),
        );
    }

    if beta > 0.0 {
        let law = structure_law(data, y, beta, depth, caps)?;
        let total: f64 = law.iter().map(|(_, p)| p).sum();
        checks.push(
            "tree_law_normalized",
            (total - 1.0).abs() <= TOL,
            format!("sum of structure probabilities: {total}"),
        );
        let zeros = vec![0.0; n];
        let greedy0 = greedy_kernel(data, &zeros, beta, depth, rows, rows, caps)?;
        spectrum_checks(
            &mut checks,
            [
                "greedy_eigenvalue_upper_bound",
                "greedy_eigenvalue_lower_bound",
            ],
            &greedy0,
            n,
        )?;
        let greedy = greedy_kernel(data, &fstar, beta, depth, rows, rows, caps)?;
        let diff = max_abs_diff(greedy.matrix().as_slice(), stationary.matrix().as_slice());
        let scale = stationary.matrix().amax().max(1.0);
        checks.push(
            "greedy_kernel_at_ridgeless_fit",
            diff <= TOL * scale,
            format!("max entry difference from the stationary kernel: {diff:.3e}"),
        );
        if options.law_draws > 0 {
            let mut rng = rng::stream(rng::derive_seed(cfg.seed, u64::MAX), 0);
            let cmp = compare_tree_law(data, y, beta, depth, options.law_draws, caps, &mut rng)?;
            let z = cmp.max_z();
            checks.push(
                "tree_law_frequencies",
                z <= 4.0,
                format!(
                    "max |z| over {} structures and {} draws: {z:.2}",
                    cmp.structures.len(),
                    cmp.draws
                ),
            );
        } else {
            checks.skip("tree_law_frequencies", "no draws requested");
        }
    } else {
        for name in [
            "tree_law_normalized",
            "greedy_eigenvalue_upper_bound",
            "greedy_eigenvalue_lower_bound",
            "greedy_kernel_at_ridgeless_fit",
            "tree_law_frequencies",
        ] {
            checks.skip(name, "random strength is 0, the tree law is degenerate");
        }
    }

    // trajectory checks on one boosting run
    let shrink = cfg.shrinkage(n);
    let fstar_norm = norm(&fstar);
    let mut booster = Booster::new(data, cfg)?.discard_trees();
    let mut contraction = 0.0f64;
    let mut one_step = 0.0f64;
    let mut prev = vec![0.0; n];
    for _ in 0..cfg.iterations {
        booster.step();
        let f = booster.train_predictions();
        let gap: Vec<f64> = f.iter().zip(&fstar).map(|(a, b)| a - b).collect();
        contraction = contraction.max(norm(&gap) - fstar_norm);
        let structure = booster.last_tree().expect("a tree was fitted").structure();
        let k = weak_kernel(structure, data, rows, rows);
        let residual: Vec<f64> = y.iter().zip(&prev).map(|(a, b)| a - b).collect();
        for i in 0..n {
            let kr: f64 = (0..n).map(|j| k.get(i, j) * residual[j]).sum();
            let expected = shrink * prev[i] + cfg.learning_rate / n as f64 * kr;
            one_step = one_step.max((expected - f[i]).abs());
        }
        prev.copy_from_slice(f);
    }
    let scale = fstar_norm.max(1.0);
    checks.push(
        "shrinkage_contraction",
        contraction <= TOL * scale,
        format!("max over iterations of |f_t - f_*| - |f_*|: {contraction:.3e}"),
    );
    checks.push(
        "one_step_kernel_update",
        one_step <= TOL * scale,
        format!("max deviation from the kernel-form update: {one_step:.3e}"),
    );

    let mut convergence = None;
    if options.trials == 0 {
        checks.skip("krr_convergence", "no trials requested");
        checks.skip("floor_shrinks_with_learning_rate", "no trials requested");
    } else if beta == 0.0 && cfg.l2_regularization > 0.0 {
        let why = "the greedy limit with shrinkage depends on the degenerate law";
        checks.skip("krr_convergence", why);
        checks.skip("floor_shrinks_with_learning_rate", why);
    } else {
        let cmp = compare_floors(data, cfg, options.trials, caps)?;
        let bound = 10.0 * cfg.learning_rate * y.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let floor = cmp.full.floor_estimate;
        checks.push(
            "krr_convergence",
            floor <= bound,
            format!("plateau {floor:.3e} against bound {bound:.3e}"),
        );
        let ratio = cmp.ratio();
        checks.push(
            "floor_shrinks_with_learning_rate",
            cmp.halved.floor_estimate < floor || floor <= 1e-20,
            format!("plateau ratio at half the learning rate: {ratio:.3}"),
        );
        convergence = Some(cmp);
    }

    Ok(VerificationReport {
        checks: checks.0,
        convergence,
    })
}
