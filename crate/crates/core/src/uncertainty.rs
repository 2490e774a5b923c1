//! Metrics for judging predictive uncertainty.
//!
//! All rejection-based metrics reject the points with the highest
//! uncertainty first. Points sharing an uncertainty value are treated as an
//! exchangeable group: rejecting part of a group removes the same fraction of
//! the group's total error, which is the expectation under random tie breaking.

use crate::error::{Error, Result};

/// Squared errors `(y - f)^2`.
pub fn squared_errors(targets: &[f64], predictions: &[f64]) -> Result<Vec<f64>> {
    if targets.len() != predictions.len() {
        return Err(Error::shape(targets.len(), predictions.len()));
    }
    Ok(targets
        .iter()
        .zip(predictions)
        .map(|(y, f)| (y - f) * (y - f))
        .collect())
}

pub fn rmse(targets: &[f64], predictions: &[f64]) -> Result<f64> {
    let errors = squared_errors(targets, predictions)?;
    if errors.is_empty() {
        return Err(Error::UndefinedMetric("RMSE of zero points".into()));
    }
    Ok((errors.iter().sum::<f64>() / errors.len() as f64).sqrt())
}

fn check_inputs(errors: &[f64], scores: &[f64]) -> Result<()> {
    if errors.len() != scores.len() {
        return Err(Error::shape(errors.len(), scores.len()));
    }
    if errors.is_empty() {
        return Err(Error::UndefinedMetric("no points".into()));
    }
    if errors.iter().chain(scores).any(|v| !v.is_finite()) {
        return Err(Error::UndefinedMetric("non-finite input".into()));
    }
    Ok(())
}

/// Tie groups of `errors` ordered by decreasing `scores`, as `(size, error sum)`.
fn rejection_groups(errors: &[f64], scores: &[f64]) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..errors.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(usize, f64)> = Vec::new();
    let mut prev: Option<f64> = None;
    for i in order {
        match (prev, groups.last_mut()) {
            (Some(p), Some(g)) if p == scores[i] => {
                g.0 += 1;
                g.1 += errors[i];
            }
            _ => groups.push((1, errors[i])),
        }
        prev = Some(scores[i]);
    }
    groups
}

/// Sum of errors left after rejecting `k = 0..=n` points, for every `k`.
fn retained_sums(errors: &[f64], scores: &[f64]) -> Vec<f64> {
    let groups = rejection_groups(errors, scores);
    let total: f64 = errors.iter().sum();
    let mut sums = Vec::with_capacity(errors.len() + 1);
    sums.push(total);
    let mut removed = 0.0;
    for (size, sum) in groups {
        for j in 1..=size {
            sums.push((total - removed - sum * j as f64 / size as f64).max(0.0));
        }
        removed += sum;
    }
    sums
}

/// Area under the rejection curve: mean over `k = 0..=n` of the retained
/// error sum divided by `n` (rejected points count as zero error).
fn rejection_area(errors: &[f64], scores: &[f64]) -> f64 {
    let n = errors.len() as f64;
    let sums = retained_sums(errors, scores);
    sums.iter().sum::<f64>() / (n * sums.len() as f64)
}

/// Prediction rejection ratio.
///
/// Compares the area gained over random rejection by rejecting on
/// `uncertainty` with the area gained by rejecting on the errors themselves.
/// 1 is oracle ordering, 0 is random, -1 is the reverse of the oracle.
pub fn prr(errors: &[f64], uncertainty: &[f64]) -> Result<f64> {
    check_inputs(errors, uncertainty)?;
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    // random rejection retains (n - k) / n of the mean error on average
    let random = mean / 2.0;
    let oracle = rejection_area(errors, errors);
    let gain_oracle = random - oracle;
    if gain_oracle <= 0.0 {
        return Err(Error::UndefinedMetric(
            "PRR needs at least two distinct errors".into(),
        ));
    }
    Ok((random - rejection_area(errors, uncertainty)) / gain_oracle)
}

/// Area under the ROC curve for separating `positive` points by `scores`,
/// with tied scores counted one half.
pub fn auc_roc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::shape(scores.len(), positive.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::UndefinedMetric("non-finite score".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both positive and negative points".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum keeps average ranks integral
    let mut rank_sum2: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end averaged, times two
        let avg2 = (start + 1 + end) as u128;
        let pos_in_group = order[start..end].iter().filter(|&&i| positive[i]).count() as u128;
        rank_sum2 += avg2 * pos_in_group;
        start = end;
    }
    let (p, q) = (n_pos as u128, n_neg as u128);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * q) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RejectionPoint {
    pub fraction: f64,
    /// Mean squared error of the retained points; 0 when none remain.
    pub mse: f64,
}

/// Evenly spaced rejection fractions `0, 1/(k-1), ..., 1`.
pub fn rejection_grid(k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..k).map(|i| i as f64 / (k - 1) as f64).collect(),
    }
}

/// Retained-point MSE after rejecting fraction `q` of the most uncertain points,
/// keeping `ceil((1 - q) n)` of them.
pub fn rejection_curve(
    errors: &[f64],
    uncertainty: &[f64],
    fractions: &[f64],
) -> Result<Vec<RejectionPoint>> {
    check_inputs(errors, uncertainty)?;
    if let Some(q) = fractions.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(Error::InvalidConfig(format!(
            "rejection fraction {q} outside [0, 1]"
        )));
    }
    let n = errors.len();
    let sums = retained_sums(errors, uncertainty);
    Ok(fractions
        .iter()
        .map(|&q| {
            let keep = (((1.0 - q) * n as f64) - 1e-9).ceil().max(0.0) as usize;
            let keep = keep.min(n);
            let mse = if keep == 0 {
                0.0
            } else {
                sums[n - keep] / keep as f64
            };
            RejectionPoint { fraction: q, mse }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_auc(scores: &[f64], positive: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &pi) in positive.iter().enumerate() {
            if !pi {
                continue;
            }
            for (j, &pj) in positive.iter().enumerate() {
                if pj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn prr_reference_orderings() {
        let errors = [0.1, 4.0, 0.5, 2.0, 0.0, 1.0];
        assert_eq!(prr(&errors, &errors).unwrap(), 1.0);
        let reversed: Vec<f64> = errors.iter().map(|e| -e).collect();
        assert!((prr(&errors, &reversed).unwrap() + 1.0).abs() < 1e-12);
        // a constant uncertainty is one big tie group: same as random
        assert!(prr(&errors, &[3.0; 6]).unwrap().abs() < 1e-12);
        // monotone transforms of the oracle are still the oracle
        let squashed: Vec<f64> = errors.iter().map(|e| (e + 1.0_f64).ln()).collect();
        assert_eq!(prr(&errors, &squashed).unwrap(), 1.0);
    }

    #[test]
    fn prr_undefined_cases() {
        assert!(matches!(
            prr(&[1.0, 1.0], &[0.0, 1.0]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(prr(&[], &[]).is_err());
        assert!(prr(&[1.0], &[1.0, 2.0]).is_err());
        assert!(prr(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn auc_hand_values() {
        assert_eq!(
            auc_roc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(),
            1.0
        );
        assert_eq!(
            auc_roc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]).unwrap(),
            0.0
        );
        assert_eq!(auc_roc(&[1.0, 1.0], &[true, false]).unwrap(), 0.5);
        assert_eq!(
            auc_roc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(),
            0.75
        );
        assert!(matches!(
            auc_roc(&[1.0], &[true]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn auc_matches_pair_count() {
        let mut rng = crate::rng::stream(11, 0);
        use rand::Rng;
        let n = 1000;
        // coarse scores force many ties
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.random::<f64>() * 40.0).floor())
            .collect();
        let positive: Vec<bool> = scores
            .iter()
            .map(|s| rng.random::<f64>() < 0.2 + s / 80.0)
            .collect();
        assert_eq!(
            auc_roc(&scores, &positive).unwrap(),
            brute_auc(&scores, &positive)
        );
    }

    #[test]
    fn rejection_curve_endpoints() {
        let errors = [1.0, 2.0, 3.0, 4.0];
        let unc = [0.4, 0.3, 0.2, 0.1];
        let curve = rejection_curve(&errors, &unc, &rejection_grid(5)).unwrap();
        let mse: Vec<f64> = curve.iter().map(|p| p.mse).collect();
        assert_eq!(mse, vec![2.5, 3.0, 3.5, 4.0, 0.0]);
        assert_eq!(rejection_grid(101).len(), 101);
        // 0.3 of 4 points rejects 1.2, keeping ceil(2.8) = 3
        let curve = rejection_curve(&errors, &unc, &[0.3]).unwrap();
        assert_eq!(curve[0].mse, 3.0);
        assert!(rejection_curve(&errors, &unc, &[1.5]).is_err());
    }

    #[test]
    fn rmse_value() {
        assert_eq!(rmse(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), 1.0);
        assert!(rmse(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn auc_agrees_with_brute_force(
            pairs in prop::collection::vec((0u8..6, any::<bool>()), 2..60)
        ) {
            let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let positive: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(positive.iter().any(|&p| p) && positive.iter().any(|&p| !p));
            prop_assert_eq!(auc_roc(&scores, &positive).unwrap(), brute_auc(&scores, &positive));
        }

        #[test]
        fn prr_is_bounded(
            pairs in prop::collection::vec((0.0f64..10.0, 0.0f64..1.0), 2..50)
        ) {
            let errors: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let unc: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Ok(v) = prr(&errors, &unc) {
                prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&v));
            }
        }

        #[test]
        fn rejection_curve_of_oracle_is_monotone(
            errors in prop::collection::vec(0.0f64..10.0, 1..50)
        ) {
            let curve = rejection_curve(&errors, &errors, &rejection_grid(21)).unwrap();
            // the last point (nothing retained) is 0 by convention
            for w in curve[..curve.len() - 1].windows(2) {
                prop_assert!(w[1].mse <= w[0].mse + 1e-9);
            }
        }
    }
}
