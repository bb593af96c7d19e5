use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{bail, Result};

/// Point-biserial correlation `(r, p)` of a continuous variable against
/// binary labels, with a two-sided t-test on `n - 2` degrees of freedom.
pub fn point_biserial(similarities: &[f64], labels: &[u8]) -> Result<(f64, f64)> {
    let n = similarities.len();
    if labels.len() != n {
        bail!(Shape, "{} similarities but {} labels", n, labels.len());
    }
    if n < 3 {
        bail!(Data, "point-biserial correlation needs at least 3 observations, got {}", n);
    }
    if labels.iter().any(|&l| l > 1) {
        bail!(Data, "labels must be 0 or 1");
    }
    if similarities.iter().any(|s| !s.is_finite()) {
        bail!(Data, "similarities must be finite");
    }
    let n1 = labels.iter().filter(|&&l| l == 1).count();
    let n0 = n - n1;
    if n1 == 0 || n0 == 0 {
        bail!(Data, "both label classes must be present");
    }
    let nf = n as f64;
    let mean = similarities.iter().sum::<f64>() / nf;
    let sd = (similarities.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / nf).sqrt();
    if sd == 0.0 {
        bail!(Data, "similarities have zero variance");
    }
    let class_mean = |c: u8, count: usize| {
        similarities.iter().zip(labels).filter(|(_, &l)| l == c).map(|(s, _)| s).sum::<f64>() / count as f64
    };
    let (m1, m0) = (class_mean(1, n1), class_mean(0, n0));
    let r = ((m1 - m0) / sd * ((n1 * n0) as f64 / (nf * nf)).sqrt()).clamp(-1.0, 1.0);
    Ok((r, two_sided_p(r, n)))
}

fn two_sided_p(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::Error;

    fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn identical_classes_give_zero() {
        let (r, p) = point_biserial(&[0.3, 0.5, 0.3, 0.5], &[1, 1, 0, 0]).unwrap();
        assert_eq!(r, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_separation() {
        let (r, p) = point_biserial(&[1.0, 1.0, -1.0, -1.0], &[1, 1, 0, 0]).unwrap();
        assert_eq!(r, 1.0);
        assert_eq!(p, 0.0);
        let (r, _) = point_biserial(&[1.0, 1.0, -1.0, -1.0], &[0, 0, 1, 1]).unwrap();
        assert_eq!(r, -1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(point_biserial(&[1.0, 2.0, 3.0], &[1, 1, 1]), Err(Error::Data(_))));
        assert!(matches!(point_biserial(&[1.0, 1.0, 1.0], &[1, 0, 1]), Err(Error::Data(_))));
        assert!(matches!(point_biserial(&[1.0, 2.0], &[1, 0]), Err(Error::Data(_))));
        assert!(matches!(point_biserial(&[1.0, 2.0, 3.0], &[1, 0]), Err(Error::Shape(_))));
    }

    #[test]
    fn known_p_value() {
        // r = 0.5 with n = 10: t = 0.5 * sqrt(8 / 0.75) = 1.63299, two-sided p = 0.1411133 (scipy t.sf).
        let p = two_sided_p(0.5, 10);
        assert!((p - 0.141_113_281_25).abs() < 1e-9, "{p}");
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[0.5, 0.7, 0.6]);
        assert!((m - 0.6).abs() < 1e-15);
        assert!((s - (0.02f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn equals_pearson(
            xs in prop::collection::vec(-10.0f64..10.0, 50),
            ys in prop::collection::vec(0u8..2, 50),
        ) {
            prop_assume!(ys.iter().any(|&y| y == 1) && ys.iter().any(|&y| y == 0));
            let (r, _) = point_biserial(&xs, &ys).unwrap();
            let yf: Vec<f64> = ys.iter().map(|&y| y as f64).collect();
            prop_assert!((r - pearson(&xs, &yf)).abs() < 1e-10);
        }
    }
}
