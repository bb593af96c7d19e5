use crate::error::{bail, Result};

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

pub(crate) fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine from a precomputed dot product and norms. A zero norm yields 0.
pub(crate) fn cosine_from_parts(dot: f64, norm_a: f64, norm_b: f64) -> f64 {
    if norm_a == 0.0 || norm_b == 0.0 {
        return 0.0;
    }
    (dot / (norm_a * norm_b)).clamp(-1.0, 1.0)
}

/// `<a, b> / (|a| |b|)`, accumulated in f64.
///
/// Zero-norm inputs give 0 instead of NaN so degenerate padding rows never
/// poison a ranking.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        bail!(Data, "cosine similarity of vectors with lengths {} and {}", a.len(), b.len());
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        bail!(Data, "cosine similarity of non-finite vector");
    }
    Ok(cosine_from_parts(dot(a, b), norm(a), norm(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    #[test]
    fn reference_values() {
        assert!((cosine_similarity(&[0.3, -1.2, 4.0], &[0.3, -1.2, 4.0]).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // 32 / (sqrt(14) * sqrt(77))
        let expected = 32.0 / (14.0f64.sqrt() * 77.0f64.sqrt());
        let got = cosine_similarity(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.974631).abs() < 1e-6);
    }

    #[test]
    fn zero_norm_is_zero_not_nan() {
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(cosine_similarity(&[f32::NAN, 0.0], &[1.0, 2.0]), Err(Error::Data(_))));
        assert!(matches!(cosine_similarity(&[1.0], &[f32::INFINITY]), Err(Error::Data(_))));
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(v in prop::collection::vec((-10.0f32..10.0, -10.0f32..10.0), 1..32)) {
            let (a, b): (Vec<f32>, Vec<f32>) = v.into_iter().unzip();
            let ab = cosine_similarity(&a, &b).unwrap();
            let ba = cosine_similarity(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
