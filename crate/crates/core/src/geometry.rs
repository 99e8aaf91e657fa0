//! Distance measures on the encoding space.
//!
//! Encodings are stored as `f32`; every kernel here accumulates in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms at or below this are treated as zero.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Cosine,
    Euclidean,
}

impl DistanceMetric {
    pub fn distance(self, a: &[f32], b: &[f32]) -> Result<f64> {
        match self {
            Self::Cosine => cosine_distance(a, b),
            Self::Euclidean => euclidean_distance(a, b),
        }
    }

    /// Distance given precomputed Euclidean norms of both inputs.
    ///
    /// The norms must come from [`norm`]; both inputs are assumed to share
    /// a length and, for cosine, to be nonzero.
    #[inline]
    pub(crate) fn distance_prenormed(self, a: &[f32], norm_a: f64, b: &[f32], norm_b: f64) -> f64 {
        match self {
            Self::Cosine => cosine_from_parts(dot(a, b), norm_a, norm_b),
            Self::Euclidean => squared_euclidean(a, b).sqrt(),
        }
    }
}

impl std::str::FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "euclidean" => Ok(Self::Euclidean),
            other => Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }
}

fn check_dims(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

/// `1 - a·b / (‖a‖‖b‖)`, clamped to `[0, 2]`.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    check_dims(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    if na <= MIN_NORM || nb <= MIN_NORM {
        return Err(Error::Degenerate("cosine distance of a zero-norm vector".into()));
    }
    Ok(cosine_from_parts(dot(a, b), na, nb))
}

pub fn euclidean_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    check_dims(a, b)?;
    Ok(squared_euclidean(a, b).sqrt())
}

#[inline]
fn cosine_from_parts(dot: f64, na: f64, nb: f64) -> f64 {
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

const LANES: usize = 8;

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += f64::from(x[l]) * f64::from(y[l]);
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += f64::from(*x) * f64::from(*y);
    }
    acc.iter().sum::<f64>() + tail
}

#[inline]
pub(crate) fn squared_euclidean(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            let d = f64::from(x[l]) - f64::from(y[l]);
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        let d = f64::from(*x) - f64::from(*y);
        tail += d * d;
    }
    acc.iter().sum::<f64>() + tail
}

#[inline]
pub fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        let v = [0.3f32, -1.2, 4.0];
        assert!(cosine_distance(&v, &v).unwrap().abs() < 1e-12);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_distance(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            cosine_distance(&[1.0, 0.0], &[1.0, 0.0, 0.0]),
            Err(Error::Dimension { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn euclidean_examples() {
        let v = [0.5f32, 2.0, -3.0];
        assert_eq!(euclidean_distance(&v, &v).unwrap(), 0.0);
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(euclidean_distance(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!(euclidean_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn long_vectors_use_tail_path() {
        // 19 entries: two full lanes plus a remainder of 3.
        let a: Vec<f32> = (0..19).map(|i| i as f32).collect();
        let b: Vec<f32> = (0..19).map(|i| (i * 2) as f32).collect();
        let expected: f64 = (0..19).map(|i| (i * i * 2) as f64).sum();
        assert_eq!(dot(&a, &b), expected);
    }

    fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(-10.0f32..10.0, d)
    }

    proptest! {
        #[test]
        fn symmetric(a in vec_strategy(13), b in vec_strategy(13)) {
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            prop_assert_eq!(cosine_distance(&a, &b).unwrap(), cosine_distance(&b, &a).unwrap());
            prop_assert_eq!(euclidean_distance(&a, &b).unwrap(), euclidean_distance(&b, &a).unwrap());
        }

        #[test]
        fn cosine_scale_invariant(a in vec_strategy(9), b in vec_strategy(9), alpha in 0.01f32..100.0) {
            prop_assume!(norm(&a) > 1e-2 && norm(&b) > 1e-2);
            let scaled: Vec<f32> = a.iter().map(|x| x * alpha).collect();
            let d0 = cosine_distance(&a, &b).unwrap();
            let d1 = cosine_distance(&scaled, &b).unwrap();
            // f32 rounding of the scaled entries bounds the achievable agreement.
            prop_assert!((d0 - d1).abs() < 1e-6, "{} vs {}", d0, d1);
        }

        #[test]
        fn cosine_scale_invariant_exact_scaling(a in vec_strategy(9), b in vec_strategy(9), exp in -20i32..20) {
            prop_assume!(norm(&a) > 1e-2 && norm(&b) > 1e-2);
            // Power-of-two scaling is exact in f32, isolating the kernel's own error.
            let alpha = 2f32.powi(exp);
            let scaled: Vec<f32> = a.iter().map(|x| x * alpha).collect();
            let d0 = cosine_distance(&a, &b).unwrap();
            let d1 = cosine_distance(&scaled, &b).unwrap();
            prop_assert!((d0 - d1).abs() < 1e-9, "{} vs {}", d0, d1);
        }

        #[test]
        fn euclidean_triangle(a in vec_strategy(7), b in vec_strategy(7), c in vec_strategy(7)) {
            let ab = euclidean_distance(&a, &b).unwrap();
            let bc = euclidean_distance(&b, &c).unwrap();
            let ac = euclidean_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
        }

        #[test]
        fn cosine_in_range(a in vec_strategy(5), b in vec_strategy(5)) {
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            let d = cosine_distance(&a, &b).unwrap();
            prop_assert!((0.0..=2.0).contains(&d));
        }
    }
}
