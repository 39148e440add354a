//! Closed-form moments of the single-layer dropout network `f = sum_k d_k w_k`
//! with `d_k ~ Bernoulli(p)`, and an exact enumeration over all `2^K` masks.
//!
//! For equal weights `w`:
//!
//! ```text
//! E[f]            = w K p
//! Var[f]          = w^2 K p (1 - p)
//! E[(f - ȳ)^2]    = w^2 K p (K p - p + 1) - 2 ȳ w K p + ȳ^2
//! d/dw            = 2 w K p (K p - p + 1) - 2 ȳ K p
//! w*              = ȳ / (K p - p + 1)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest unit count the enumeration oracle accepts.
pub const MAX_ENUMERATION_UNITS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleLayerSpec {
    pub units: usize,
    pub p_d: f64,
    pub y_bar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryPrediction {
    pub w_opt: f64,
    pub mean_f: f64,
    pub var_f: f64,
}

impl SingleLayerSpec {
    pub fn new(units: usize, p_d: f64, y_bar: f64) -> Result<Self> {
        let spec = Self { units, p_d, y_bar };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.units == 0 {
            return Err(Error::invalid("unit count", "K must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.p_d) {
            return Err(Error::invalid("dropout rate", format!("p_d = {} is outside [0, 1)", self.p_d)));
        }
        if !self.y_bar.is_finite() {
            return Err(Error::invalid("target mean", "must be finite"));
        }
        Ok(())
    }

    pub fn keep_prob(&self) -> f64 {
        1.0 - self.p_d
    }

    fn k(&self) -> f64 {
        self.units as f64
    }

    /// `K p - p + 1`
    fn denom(&self) -> f64 {
        let p = self.keep_prob();
        self.k() * p - p + 1.0
    }

    /// `E[f]` for equal weights `w`.
    pub fn mean_at(&self, w: f64) -> f64 {
        w * self.k() * self.keep_prob()
    }

    /// `Var[f]` for equal weights `w`.
    pub fn variance_at(&self, w: f64) -> f64 {
        let p = self.keep_prob();
        w * w * self.k() * p * (1.0 - p)
    }
}

/// `w* = ȳ / (K p - p + 1)`.
pub fn optimal_weight(spec: &SingleLayerSpec) -> Result<f64> {
    spec.validate()?;
    Ok(spec.y_bar / spec.denom())
}

/// Mean and variance of the output at the optimal weight.
pub fn predict_moments(spec: &SingleLayerSpec) -> Result<TheoryPrediction> {
    let w = optimal_weight(spec)?;
    Ok(TheoryPrediction {
        w_opt: w,
        mean_f: spec.mean_at(w),
        var_f: spec.variance_at(w),
    })
}

/// Expected squared error `E[(f - ȳ)^2]` at equal weights `w`.
pub fn expected_mse(spec: &SingleLayerSpec, w: f64) -> Result<f64> {
    spec.validate()?;
    let kp = spec.k() * spec.keep_prob();
    Ok(w * w * kp * spec.denom() - 2.0 * spec.y_bar * w * kp + spec.y_bar * spec.y_bar)
}

/// `d/dw E[(f - ȳ)^2]`.
pub fn mse_derivative(spec: &SingleLayerSpec, w: f64) -> Result<f64> {
    spec.validate()?;
    let kp = spec.k() * spec.keep_prob();
    Ok(2.0 * w * kp * spec.denom() - 2.0 * spec.y_bar * kp)
}

/// Exact moments of an enumerated distribution over all masks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnumeratedMoments {
    pub mean: f64,
    pub variance: f64,
    /// `E[(f - ȳ)^2]` when a target was supplied.
    pub mse: Option<f64>,
}

/// Exact `E[f]` and `Var[f]` for arbitrary weights by summing over all `2^K`
/// masks, each weighted by `p^{#kept} (1-p)^{#dropped}`.
pub fn enumerate_moments(p_d: f64, weights: &[f64]) -> Result<(f64, f64)> {
    let m = enumerate_with_target(p_d, weights, None)?;
    Ok((m.mean, m.variance))
}

/// Like [`enumerate_moments`], also averaging `(f - y_bar)^2` when given.
pub fn enumerate_with_target(p_d: f64, weights: &[f64], y_bar: Option<f64>) -> Result<EnumeratedMoments> {
    let k = weights.len();
    if k == 0 {
        return Err(Error::invalid("weights", "at least one weight is required"));
    }
    if k > MAX_ENUMERATION_UNITS {
        return Err(Error::BoundExceeded {
            what: "enumeration units K",
            value: k,
            bound: MAX_ENUMERATION_UNITS,
        });
    }
    if !(0.0..1.0).contains(&p_d) {
        return Err(Error::invalid("dropout rate", format!("p_d = {p_d} is outside [0, 1)")));
    }
    let p = 1.0 - p_d;
    let kept_pow: Vec<f64> = (0..=k).map(|j| p.powi(j as i32) * p_d.powi((k - j) as i32)).collect();

    let outputs = || {
        (0u32..1 << k).map(|mask| {
            let f = compensated_sum(
                weights
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, w)| *w),
            );
            (kept_pow[mask.count_ones() as usize], f)
        })
    };
    let mean = compensated_sum(outputs().map(|(prob, f)| prob * f));
    let variance = compensated_sum(outputs().map(|(prob, f)| prob * (f - mean).powi(2)));
    let mse = y_bar.map(|y| compensated_sum(outputs().map(|(prob, f)| prob * (f - y).powi(2))));
    Ok(EnumeratedMoments { mean, variance, mse })
}

/// Neumaier summation; the enumeration adds up to 2^20 terms.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}
