//! Gaussian dataset summaries and their exact merge rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImagePixels;

/// A dataset compressed to sample count, mean, and variance.
///
/// `n` counts *images* (one per raster, however many pixels it has), so a
/// vehicle's summary of `k` images carries `n = k`. Mean and variance are
/// taken over raw intensity samples pooled across channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSummary {
    /// Number of images the summary represents.
    pub n: u64,
    /// Mean intensity.
    pub mean: f64,
    /// Intensity variance (unbiased at the image level).
    pub var: f64,
}

impl GaussianSummary {
    /// Builds a summary, validating the fields.
    pub fn new(n: u64, mean: f64, var: f64) -> Result<Self> {
        let s = Self { n, mean, var };
        s.validate()?;
        Ok(s)
    }

    /// Checks deserialized or hand-built fields.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidWeights("summary has n = 0".into()));
        }
        if !self.mean.is_finite() {
            return Err(Error::InvalidWeights(format!("summary mean {} is not finite", self.mean)));
        }
        if !(self.var.is_finite() && self.var >= 0.0) {
            return Err(Error::InvalidWeights(format!(
                "summary variance {} is not finite and non-negative",
                self.var
            )));
        }
        Ok(())
    }

    /// Summarises one image: `n = 1`, sample mean, and unbiased sample
    /// variance over all `channels * width * height` intensities.
    ///
    /// Moments are accumulated in integers, so the result is bit-identical
    /// under any permutation of the samples, and a constant image yields a
    /// variance of exactly `0.0`. Images with fewer than two samples are
    /// rejected — their variance is undefined.
    pub fn from_image(image: &ImagePixels) -> Result<Self> {
        let len = image.sample_count();
        if len < 2 {
            return Err(Error::DegenerateInput { samples: len });
        }
        let mut sum: u64 = 0;
        let mut sum_sq: u64 = 0;
        for &x in image.samples() {
            let x = u64::from(x);
            sum += x;
            sum_sq += x * x;
        }
        let l = len as u64;
        // l*sum_sq - sum^2 = l * sum((x - mean)^2), always >= 0.
        let scaled_moment = u128::from(l) * u128::from(sum_sq) - u128::from(sum) * u128::from(sum);
        let mean = sum as f64 / l as f64;
        let var = scaled_moment as f64 / (l as f64 * (l as f64 - 1.0));
        Ok(Self { n: 1, mean, var })
    }

    /// Merges member summaries into one:
    ///
    /// ```text
    /// n   = sum(n_i)
    /// mean = (1/n)   * sum(n_i   * mean_i)
    /// var  = (1/n^2) * sum(n_i^2 * var_i)
    /// ```
    ///
    /// The rule is associative, so vehicle -> edge -> cloud roll-ups give
    /// the same result as pooling every image at once. Members are absorbed
    /// in the order given; callers keep that order fixed for bit-exact
    /// reproducibility.
    pub fn merge(members: &[GaussianSummary]) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyMerge);
        }
        let mut n: u64 = 0;
        let mut weighted_mean = 0.0;
        let mut weighted_var = 0.0;
        for m in members {
            m.validate()?;
            n += m.n;
            let w = m.n as f64;
            weighted_mean += w * m.mean;
            weighted_var += w * w * m.var;
        }
        let total = n as f64;
        Ok(Self { n, mean: weighted_mean / total, var: weighted_var / (total * total) })
    }
}
