//! The two-dimensional "heart" benchmark: points drawn uniformly from the unit
//! square, with training data restricted to a domain and the target `x + y`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Which form of the quadratic membership test to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainVariant {
    /// `1/10 <= (x - 1/2)^2 - (y - 1/2)^2 <= 1/4`
    #[default]
    Difference,
    /// `1/10 <= (x - 1/2)^2 + (y - 1/2)^2 <= 1/4`
    Sum,
}

impl std::str::FromStr for DomainVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "difference" | "verbatim" => Ok(DomainVariant::Difference),
            "sum" => Ok(DomainVariant::Sum),
            other => Err(Error::InvalidConfig(format!(
                "unknown domain variant {other:?} (expected difference or sum)"
            ))),
        }
    }
}

/// Membership in the training domain. Both variants also cut out the
/// central cross `2/5 < x < 3/5` or `2/5 < y < 3/5`.
pub fn in_domain(x: f64, y: f64, variant: DomainVariant) -> bool {
    let a = (x - 0.5) * (x - 0.5);
    let b = (y - 0.5) * (y - 0.5);
    let q = match variant {
        DomainVariant::Difference => a - b,
        DomainVariant::Sum => a + b,
    };
    (0.1..=0.25).contains(&q) && (x <= 0.4 || x >= 0.6) && (y <= 0.4 || y >= 0.6)
}

pub fn target(x: f64, y: f64) -> f64 {
    x + y
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeartPoint {
    pub x: f64,
    pub y: f64,
    pub target: f64,
    pub in_domain: bool,
}

/// `points` uniform draws from `[0, 1)^2` (x then y from one ChaCha8 stream),
/// labelled with the target and domain membership.
pub fn sample_points(points: usize, seed: u64, variant: DomainVariant) -> Result<Vec<HeartPoint>> {
    let mut rng = rng::stream(seed, 0);
    let out: Vec<HeartPoint> = (0..points)
        .map(|_| {
            let x: f64 = rng.random();
            let y: f64 = rng.random();
            HeartPoint {
                x,
                y,
                target: target(x, y),
                in_domain: in_domain(x, y, variant),
            }
        })
        .collect();
    if !out.iter().any(|p| p.in_domain) {
        return Err(Error::InvalidConfig(format!(
            "none of the {points} sampled points fell inside the domain; sample more points"
        )));
    }
    Ok(out)
}

/// Training subset and the full evaluation sample.
pub fn split(points: &[HeartPoint]) -> (Vec<HeartPoint>, Vec<HeartPoint>) {
    (
        points.iter().copied().filter(|p| p.in_domain).collect(),
        points.to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_is_outside() {
        assert!(!in_domain(0.5, 0.5, DomainVariant::Difference));
        assert!(!in_domain(0.5, 0.5, DomainVariant::Sum));
    }

    #[test]
    fn hand_points() {
        // (x - 1/2)^2 = 0.16, (y - 1/2)^2 = 0.01
        assert!(in_domain(0.1, 0.6, DomainVariant::Difference));
        assert!(in_domain(0.1, 0.6, DomainVariant::Sum));
        // difference 0.0 fails, sum 0.18 passes
        assert!(!in_domain(0.2, 0.2, DomainVariant::Difference));
        assert!(in_domain(0.2, 0.2, DomainVariant::Sum));
        // inside the cross
        assert!(!in_domain(0.5, 0.1, DomainVariant::Sum));
    }

    #[test]
    fn sampling_is_reproducible() {
        let a = sample_points(500, 3, DomainVariant::Difference).unwrap();
        let b = sample_points(500, 3, DomainVariant::Difference).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p.target == p.x + p.y));
        assert!(a
            .iter()
            .all(|p| p.in_domain == in_domain(p.x, p.y, DomainVariant::Difference)));
        let (train, eval) = split(&a);
        assert!(!train.is_empty() && train.len() < eval.len());
    }

    #[test]
    fn empty_domain_sample_is_an_error() {
        assert!(matches!(
            sample_points(0, 1, DomainVariant::Sum),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("sum".parse::<DomainVariant>().unwrap(), DomainVariant::Sum);
        assert_eq!(
            "difference".parse::<DomainVariant>().unwrap(),
            DomainVariant::Difference
        );
        assert!("ring".parse::<DomainVariant>().is_err());
    }
}
