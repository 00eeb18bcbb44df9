//! Regressor layout shared by the weight-numerator model and the marginal
//! structural models: regime dummies, a time basis, their interactions and
//! baseline covariates.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::propensity::{SplineBasis, SplineSpec};

/// Time trend of a regime-by-time design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeBasis {
    /// Natural cubic spline in the day index.
    Spline(SplineBasis),
    /// One indicator per listed day except the first (the reference).
    PerDay(Vec<u32>),
    /// No time trend.
    Constant,
}

impl TimeBasis {
    /// Builds a basis for the fitting days. `spline = None` requests the
    /// saturated per-day form.
    pub fn for_days(spline: Option<&SplineSpec>, days: &[u32], horizon: u32) -> Result<Self> {
        let mut distinct: Vec<u32> = days.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            return Ok(TimeBasis::Constant);
        }
        match spline {
            None => Ok(TimeBasis::PerDay(distinct)),
            Some(spec) => {
                let d: Vec<f64> = days.iter().map(|&k| f64::from(k)).collect();
                let hi = f64::from(horizon.max(distinct[distinct.len() - 1] + 1));
                Ok(TimeBasis::Spline(SplineBasis::from_days(
                    spec,
                    &d,
                    [0.0, hi],
                )?))
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TimeBasis::Spline(s) => s.n_basis(),
            TimeBasis::PerDay(days) => days.len() - 1,
            TimeBasis::Constant => 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn names(&self) -> Vec<String> {
        match self {
            TimeBasis::Spline(s) => (1..=s.n_basis()).map(|j| format!("s(day){j}")).collect(),
            TimeBasis::PerDay(days) => days[1..].iter().map(|k| format!("day{k}")).collect(),
            TimeBasis::Constant => Vec::new(),
        }
    }

    fn eval_into(&self, k: u32, out: &mut Vec<f64>) {
        match self {
            TimeBasis::Spline(s) => s.eval_into(f64::from(k), out),
            TimeBasis::PerDay(days) => {
                out.extend(days[1..].iter().map(|&d| f64::from(u8::from(d == k))))
            }
            TimeBasis::Constant => {}
        }
    }
}

/// Column layout: intercept, regime dummies (first regime is the reference),
/// time basis, regime-by-time interactions, baseline covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeTimeDesign {
    pub regime_ids: Vec<String>,
    pub time: TimeBasis,
    pub v_columns: Vec<String>,
}

impl RegimeTimeDesign {
    pub fn n_cols(&self) -> usize {
        let r = self.regime_ids.len();
        let t = self.time.len();
        1 + (r - 1) + t + (r - 1) * t + self.v_columns.len()
    }

    pub fn names(&self) -> Vec<String> {
        let mut n = vec!["(Intercept)".to_string()];
        let regs = &self.regime_ids[1..];
        n.extend(regs.iter().map(|r| format!("regime[{r}]")));
        let t = self.time.names();
        n.extend(t.iter().cloned());
        for r in regs {
            n.extend(t.iter().map(|b| format!("regime[{r}]:{b}")));
        }
        n.extend(self.v_columns.iter().cloned());
        n
    }

    pub fn row_into(&self, regime: usize, k: u32, v: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        let r = self.regime_ids.len();
        out.extend((1..r).map(|j| f64::from(u8::from(j == regime))));
        let start = out.len();
        self.time.eval_into(k, out);
        let basis: Vec<f64> = out[start..].to_vec();
        for j in 1..r {
            if j == regime {
                out.extend_from_slice(&basis);
            } else {
                out.extend(std::iter::repeat_n(0.0, basis.len()));
            }
        }
        out.extend_from_slice(v);
    }

    pub fn row(&self, regime: usize, k: u32, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_cols());
        self.row_into(regime, k, v, &mut out);
        out
    }
}
