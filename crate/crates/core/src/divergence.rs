//! Bhattacharyya distance between Gaussian summaries.

use crate::error::{Error, Result};
use crate::gaussian::GaussianSummary;

/// Bhattacharyya distance between two univariate Gaussians:
///
/// ```text
/// D = (mean1 - mean2)^2 / (4 * (var1 + var2))
///   + ln((var1 + var2) / (2 * sd1 * sd2)) / 2
/// ```
///
/// Either variance being zero makes the log term undefined, so degenerate
/// summaries are rejected rather than floored — a silent floor would turn a
/// constant-intensity dataset into an arbitrary similarity score.
///
/// The log argument is `>= 1` by AM-GM, so the distance is non-negative in
/// exact arithmetic; sub-ulp rounding residue is clamped to zero to keep
/// the overlap coefficient inside `(0, 1]`.
pub fn bhattacharyya_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    if a.var == 0.0 {
        return Err(Error::DegenerateDistribution { side: "first" });
    }
    if b.var == 0.0 {
        return Err(Error::DegenerateDistribution { side: "second" });
    }
    let var_sum = a.var + b.var;
    let diff = a.mean - b.mean;
    let mean_term = diff * diff / (4.0 * var_sum);
    // sqrt each factor before multiplying so huge variances cannot overflow
    // the product under the root.
    let log_term = 0.5 * (var_sum / (2.0 * a.var.sqrt() * b.var.sqrt())).ln();
    Ok((mean_term + log_term).max(0.0))
}

/// Overlap coefficient `exp(-D)` of the two densities, in `(0, 1]`.
pub fn bhattacharyya_coefficient(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    Ok((-bhattacharyya_distance(a, b)?).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(mean: f64, var: f64) -> GaussianSummary {
        GaussianSummary::new(1, mean, var).unwrap()
    }

    #[test]
    fn unit_shift_of_standard_normals() {
        let d = bhattacharyya_distance(&summary(0.0, 1.0), &summary(1.0, 1.0)).unwrap();
        assert_eq!(d, 0.125);
    }

    #[test]
    fn identical_summaries_have_zero_distance() {
        let s = summary(42.0, 17.0);
        let d = bhattacharyya_distance(&s, &s).unwrap();
        assert!(d.abs() <= 1e-15, "d = {d}");
    }

    #[test]
    fn distance_is_symmetric_bit_exactly() {
        let a = summary(3.0, 2.5);
        let b = summary(-1.0, 0.75);
        let ab = bhattacharyya_distance(&a, &b).unwrap();
        let ba = bhattacharyya_distance(&b, &a).unwrap();
        assert_eq!(ab.to_bits(), ba.to_bits());
    }

    #[test]
    fn power_of_two_rescaling_is_bit_exact() {
        let a = summary(10.0, 3.0);
        let b = summary(14.0, 7.0);
        let base = bhattacharyya_distance(&a, &b).unwrap();
        for k in [-8i32, -1, 1, 4, 16] {
            let s = (2.0f64).powi(k);
            let sa = summary(a.mean * s, a.var * s * s);
            let sb = summary(b.mean * s, b.var * s * s);
            let scaled = bhattacharyya_distance(&sa, &sb).unwrap();
            assert_eq!(scaled.to_bits(), base.to_bits(), "k = {k}");
        }
    }

    #[test]
    fn zero_variance_is_rejected_with_side() {
        let ok = summary(0.0, 1.0);
        let flat = GaussianSummary::new(1, 0.0, 0.0).unwrap();
        let first = bhattacharyya_distance(&flat, &ok).unwrap_err();
        assert!(matches!(first, Error::DegenerateDistribution { side: "first" }));
        let second = bhattacharyya_distance(&ok, &flat).unwrap_err();
        assert!(matches!(second, Error::DegenerateDistribution { side: "second" }));
    }

    #[test]
    fn coefficient_is_exp_of_negated_distance() {
        let a = summary(0.0, 1.0);
        let b = summary(1.0, 1.0);
        let c = bhattacharyya_coefficient(&a, &b).unwrap();
        assert_eq!(c, (-0.125f64).exp());
        assert!(c > 0.0 && c <= 1.0);
    }

    #[test]
    fn coefficient_decreases_as_means_separate() {
        let base = summary(0.0, 1.0);
        let near = bhattacharyya_coefficient(&base, &summary(0.5, 1.0)).unwrap();
        let far = bhattacharyya_coefficient(&base, &summary(3.0, 1.0)).unwrap();
        assert!(near > far);
    }
}
