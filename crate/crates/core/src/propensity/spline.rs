//! Natural cubic spline basis (truncated-power form, linear beyond the
//! boundary knots), evaluated on the day scale.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How to place interior knots.
#[derive(Debug, Clone, PartialEq)]
pub enum SplineSpec {
    /// `n` interior knots at equally spaced quantiles of the fitting days.
    Quantile(usize),
    /// Explicit interior knots (day units).
    Knots(Vec<f64>),
}

impl Default for SplineSpec {
    fn default() -> Self {
        SplineSpec::Quantile(3)
    }
}

impl fmt::Display for SplineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplineSpec::Quantile(n) => write!(f, "quantile:{n}"),
            SplineSpec::Knots(k) => write!(f, "{k:?}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SplineSpecRepr {
    Text(String),
    Knots(Vec<f64>),
}

impl Serialize for SplineSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SplineSpec::Quantile(n) => SplineSpecRepr::Text(format!("quantile:{n}")),
            SplineSpec::Knots(k) => SplineSpecRepr::Knots(k.clone()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SplineSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match SplineSpecRepr::deserialize(d)? {
            SplineSpecRepr::Knots(k) => Ok(SplineSpec::Knots(k)),
            SplineSpecRepr::Text(t) => t
                .strip_prefix("quantile:")
                .and_then(|n| n.trim().parse().ok())
                .map(SplineSpec::Quantile)
                .ok_or_else(|| {
                    serde::de::Error::custom(format!(
                        "spline knots must be \"quantile:<n>\" or a list of days, got {t:?}"
                    ))
                }),
        }
    }
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    /// Interior knots.
    pub interior: Vec<f64>,
    /// Boundary knots `[lo, hi]`.
    pub boundary: [f64; 2],
}

impl SplineBasis {
    pub fn new(mut interior: Vec<f64>, boundary: [f64; 2]) -> Result<Self> {
        if !boundary.iter().all(|b| b.is_finite()) || boundary[0] >= boundary[1] {
            return Err(Error::Config(format!(
                "invalid boundary knots {boundary:?}"
            )));
        }
        interior.sort_by(f64::total_cmp);
        interior.dedup();
        if interior
            .iter()
            .any(|&k| k <= boundary[0] || k >= boundary[1])
        {
            return Err(Error::Config(format!(
                "interior knots {interior:?} must lie strictly inside {boundary:?}"
            )));
        }
        Ok(Self { interior, boundary })
    }

    /// Builds a basis from the days it will be fitted on. Knots that collapse
    /// onto each other or onto a boundary are dropped, and the number of
    /// columns is capped so that the distinct days give a full-rank design
    /// together with an intercept.
    pub fn from_days(spec: &SplineSpec, days: &[f64], boundary: [f64; 2]) -> Result<Self> {
        let mut sorted: Vec<f64> = days.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut distinct = sorted.clone();
        distinct.dedup();
        let candidates = match spec {
            SplineSpec::Knots(k) => k.clone(),
            SplineSpec::Quantile(n) => {
                if sorted.is_empty() {
                    Vec::new()
                } else {
                    (1..=*n)
                        .map(|i| quantile_sorted(&sorted, i as f64 / (*n + 1) as f64))
                        .collect()
                }
            }
        };
        let mut interior: Vec<f64> = candidates
            .into_iter()
            .filter(|&k| k > boundary[0] && k < boundary[1])
            .collect();
        interior.sort_by(f64::total_cmp);
        interior.dedup();
        // n_basis = interior + 1 must not exceed distinct - 1.
        let max_interior = distinct.len().saturating_sub(2);
        if interior.len() > max_interior {
            if matches!(spec, SplineSpec::Knots(_)) {
                log::warn!(
                    "dropping spline knots: {} distinct days support at most {} interior knots",
                    distinct.len(),
                    max_interior
                );
            }
            interior = thin(&interior, max_interior);
        }
        Self::new(interior, boundary)
    }

    /// Number of basis columns (excluding any intercept).
    pub fn n_basis(&self) -> usize {
        self.interior.len() + 1
    }

    /// True when the fitting data support no time trend at all.
    pub fn is_degenerate_for(days: &[f64]) -> bool {
        let mut d = days.to_vec();
        d.sort_by(f64::total_cmp);
        d.dedup();
        d.len() < 2
    }

    fn scaled_knots(&self) -> Vec<f64> {
        let [lo, hi] = self.boundary;
        std::iter::once(0.0)
            .chain(self.interior.iter().map(|k| (k - lo) / (hi - lo)))
            .chain(std::iter::once(1.0))
            .collect()
    }

    /// Basis values at `x`, appended to `out`.
    pub fn eval_into(&self, x: f64, out: &mut Vec<f64>) {
        let [lo, hi] = self.boundary;
        let t = (x - lo) / (hi - lo);
        let knots = self.scaled_knots();
        let m = knots.len();
        out.push(t);
        let last = knots[m - 1];
        let d = |j: usize| {
            let c = |u: f64| if u > 0.0 { u * u * u } else { 0.0 };
            (c(t - knots[j]) - c(t - last)) / (last - knots[j])
        };
        let d_ref = d(m - 2);
        for j in 0..m - 2 {
            out.push(d(j) - d_ref);
        }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_basis());
        self.eval_into(x, &mut v);
        v
    }
}

/// Keep `n` roughly evenly spread elements.
fn thin(knots: &[f64], n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    (0..n)
        .map(|i| knots[(i * (knots.len() - 1)) / (n.max(2) - 1).max(1)])
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Vec::new(), |mut acc, k| {
            if acc.last() != Some(&k) {
                acc.push(k);
            }
            acc
        })
}
