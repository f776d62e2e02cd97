use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::exposure_index::mean_ranks;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

impl CorrelationMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            CorrelationMethod::Pearson => "pearson",
            CorrelationMethod::Spearman => "spearman",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrelationError {
    #[error("need at least 3 paired observations, got {0}")]
    TooFewPairs(usize),
    #[error("correlation undefined: a series has zero variance")]
    ZeroVariance,
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub coefficient: f64,
    pub p_value: f64,
    pub n: usize,
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64, CorrelationError> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(CorrelationError::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Two-sided p-value of `r` under the null of zero correlation, from the
/// t statistic with n−2 degrees of freedom.
pub fn p_value(r: f64, n: usize) -> f64 {
    let df = n as f64 - 2.0;
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Pairs with a non-finite value on either side are dropped.
pub fn correlate(a: &[f64], b: &[f64], method: CorrelationMethod) -> Result<Correlation, CorrelationError> {
    if a.len() != b.len() {
        return Err(CorrelationError::LengthMismatch(a.len(), b.len()));
    }
    let (xa, xb): (Vec<f64>, Vec<f64>) = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(x, y)| (*x, *y))
        .unzip();
    let n = xa.len();
    if n < 3 {
        return Err(CorrelationError::TooFewPairs(n));
    }
    let coefficient = match method {
        CorrelationMethod::Pearson => pearson(&xa, &xb)?,
        CorrelationMethod::Spearman => pearson(&mean_ranks(&xa), &mean_ranks(&xb))?,
    };
    Ok(Correlation {
        coefficient,
        p_value: p_value(coefficient, n),
        n,
    })
}

/// Aligns two keyed series on their shared keys, in key order.
pub fn pair_by_key<K: Ord + Clone>(a: &BTreeMap<K, f64>, b: &BTreeMap<K, f64>) -> (Vec<K>, Vec<f64>, Vec<f64>) {
    let mut keys = Vec::new();
    let mut xa = Vec::new();
    let mut xb = Vec::new();
    for (k, v) in a {
        if let Some(w) = b.get(k) {
            keys.push(k.clone());
            xa.push(*v);
            xb.push(*w);
        }
    }
    (keys, xa, xb)
}
