use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::AnalyticsError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationResult {
    pub x_metric: String,
    pub y_metric: String,
    /// Pearson product-moment coefficient, within [-1, 1].
    pub r: f64,
    pub n: usize,
    /// Two-sided p-value from the t distribution with n-2 degrees of freedom;
    /// undefined below three samples.
    pub p: Option<f64>,
}

/// Pearson's r between two equally long samples.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult, AnalyticsError> {
    pearson_named("x", xs, "y", ys)
}

pub fn pearson_named(x_metric: &str, xs: &[f64], y_metric: &str, ys: &[f64]) -> Result<CorrelationResult, AnalyticsError> {
    if xs.len() != ys.len() {
        return Err(AnalyticsError::LengthMismatch { x: xs.len(), y: ys.len() });
    }
    let n = xs.len();
    if n < 2 {
        return Err(AnalyticsError::TooFewSamples { n });
    }
    // Welford-style running co-moments keep large offsets from cancelling.
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let k = (i + 1) as f64;
        let dx = x - mx;
        let dy = y - my;
        mx += dx / k;
        my += dy / k;
        sxx += dx * (x - mx);
        syy += dy * (y - my);
        // Averaging both orderings keeps r(x, y) == r(y, x) bit for bit.
        sxy += 0.5 * (dx * (y - my) + dy * (x - mx));
    }
    if sxx <= 0.0 {
        return Err(AnalyticsError::ZeroVariance { metric: x_metric.to_string() });
    }
    if syy <= 0.0 {
        return Err(AnalyticsError::ZeroVariance { metric: y_metric.to_string() });
    }
    // One square root of the product is exact for exactly linear data; fall
    // back to separate roots if the product leaves the finite range.
    let prod = sxx * syy;
    let denom = if prod.is_normal() { prod.sqrt() } else { sxx.sqrt() * syy.sqrt() };
    let r = (sxy / denom).clamp(-1.0, 1.0);
    Ok(CorrelationResult {
        x_metric: x_metric.to_string(),
        y_metric: y_metric.to_string(),
        r,
        n,
        p: p_value(r, n),
    })
}

fn p_value(r: f64, n: usize) -> Option<f64> {
    if n < 3 {
        return None;
    }
    if r.abs() >= 1.0 {
        return Some(0.0);
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}
