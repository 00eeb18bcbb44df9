//! Inverse probability of compatibility weights, stabilized weights,
//! truncation and per-day diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{RegimeTimeDesign, TimeBasis};
use crate::error::{Error, Result};
use crate::propensity::spline::quantile_sorted;
use crate::propensity::{
    fit_weighted_logistic, DesignMatrix, LogisticFit, LogisticOptions, SplineSpec,
};
use crate::regimes::{ExtendedDataset, ExtendedRow};

pub const DEFAULT_PS_FLOOR: f64 = 1e-6;

/// Which weight column an estimator reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    #[default]
    Ipcw,
    Stabilized,
    /// Compatibility indicator only (artificial censoring without weighting).
    Unweighted,
}

impl WeightKind {
    pub fn of(self, row: &ExtendedRow) -> Option<f64> {
        match self {
            WeightKind::Ipcw => row.w,
            WeightKind::Stabilized => row.sw,
            WeightKind::Unweighted => Some(f64::from(u8::from(row.compat))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WeightKind::Ipcw => "ipcw",
            WeightKind::Stabilized => "stabilized",
            WeightKind::Unweighted => "unweighted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightSettings {
    pub ps_floor: f64,
    pub stabilized: bool,
    /// Cap weights at this quantile of the positive at-risk weights.
    pub truncate_quantile: Option<f64>,
    /// Time trend of the stabilization numerator model.
    pub numerator_spline: SplineSpec,
}

impl Default for WeightSettings {
    fn default() -> Self {
        Self {
            ps_floor: DEFAULT_PS_FLOOR,
            stabilized: false,
            truncate_quantile: None,
            numerator_spline: SplineSpec::default(),
        }
    }
}

/// Fills `w` from `ps`: the compatibility indicator over the running
/// product of ps, frozen after a terminal event.
pub fn compute_ipcw(ext: &mut ExtendedDataset, ps_floor: f64) -> Result<()> {
    let regime_ids = ext.regime_ids().to_vec();
    let patient_ids = ext.patient_ids().to_vec();
    let errors: Vec<Option<Error>> = ext
        .paths_mut()
        .into_par_iter()
        .map(|path| {
            let mut cum = 1.0;
            let mut prev_compat = true;
            for row in path.iter_mut() {
                row.truncated = false;
                if row.at_risk && prev_compat {
                    let Some(ps) = row.ps else {
                        return Some(Error::Config(format!(
                            "ps missing for patient {} under regime {} at day {}",
                            patient_ids[row.patient], regime_ids[row.regime], row.k
                        )));
                    };
                    if row.compat {
                        if ps.is_nan() || ps < ps_floor {
                            return Some(Error::Positivity {
                                patient: patient_ids[row.patient].clone(),
                                regime: regime_ids[row.regime].clone(),
                                day: row.k,
                                ps,
                                floor: ps_floor,
                            });
                        }
                        cum /= ps;
                    }
                }
                row.w = Some(if row.compat { cum } else { 0.0 });
                prev_compat = row.compat;
            }
            None
        })
        .collect();
    match errors.into_iter().flatten().next() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Pooled logistic model for treatment initiation among untreated patients
/// still following a regime, given only the regime, time and baseline
/// covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumeratorModel {
    pub design: RegimeTimeDesign,
    pub fit: LogisticFit,
}

impl NumeratorModel {
    /// Probability of initiating treatment on day `k`.
    pub fn predict(&self, regime: usize, k: u32, v: &[f64]) -> f64 {
        self.fit.predict(&self.design.row(regime, k, v))
    }

    /// Probability of taking `row.d`, given whether the patient was already
    /// treated before the row.
    pub fn follow_probability(&self, row: &ExtendedRow, treated_before: bool, v: &[f64]) -> f64 {
        if treated_before {
            return 1.0;
        }
        let p = self.predict(row.regime, row.k, v);
        if row.d == 1 {
            p
        } else {
            1.0 - p
        }
    }
}

fn numerator_rows(ext: &ExtendedDataset, mask: Option<&[bool]>) -> Vec<usize> {
    let mut out = Vec::new();
    for r in 0..ext.n_regimes() {
        for p in 0..ext.n_patients() {
            if mask.is_some_and(|m| !m[p]) {
                continue;
            }
            let path = ext.path(r, p);
            let start = ext.path_offset(r, p);
            for (i, row) in path.iter().enumerate() {
                if row.at_risk && (i == 0 || (path[i - 1].compat && path[i - 1].a == 0)) {
                    out.push(start + i);
                }
            }
        }
    }
    out
}

/// Fits the stabilization numerator on at-risk, untreated-so-far rows whose
/// path was compatible through the previous day.
pub fn fit_numerator(
    ext: &ExtendedDataset,
    spline: &SplineSpec,
    options: &LogisticOptions,
    mask: Option<&[bool]>,
) -> Result<NumeratorModel> {
    let idx = numerator_rows(ext, mask);
    if idx.is_empty() {
        return Err(Error::EmptyRiskSet(
            "no rows for the weight numerator model".into(),
        ));
    }
    let rows = ext.rows();
    let days: Vec<u32> = idx.iter().map(|&i| rows[i].k).collect();
    let design = RegimeTimeDesign {
        regime_ids: ext.regime_ids().to_vec(),
        time: TimeBasis::for_days(Some(spline), &days, ext.horizon())?,
        v_columns: ext.v_columns().to_vec(),
    };
    let mut x = DesignMatrix::with_capacity(design.names(), true, idx.len());
    let mut buf = Vec::new();
    for &i in &idx {
        let r = &rows[i];
        design.row_into(r.regime, r.k, ext.v_profile(r.patient), &mut buf);
        x.push_row(&buf);
    }
    let y: Vec<u8> = idx.iter().map(|&i| rows[i].a).collect();
    let fit = fit_weighted_logistic(&x, &y, &vec![1.0; idx.len()], options)?.require_converged()?;
    Ok(NumeratorModel { design, fit })
}

/// Fills `sw = f * w`, with `f` the running product of the numerator
/// model's probability of following the prescription (1 once treated).
pub fn compute_stabilized(ext: &mut ExtendedDataset, numerator: &NumeratorModel) -> Result<()> {
    let profiles: Vec<Vec<f64>> = (0..ext.n_patients())
        .map(|p| ext.v_profile(p).to_vec())
        .collect();
    let missing = ext
        .paths_mut()
        .into_par_iter()
        .map(|path| {
            let mut f = 1.0;
            let mut prev_compat = true;
            let mut treated = false;
            for row in path.iter_mut() {
                let Some(w) = row.w else { return true };
                if row.at_risk && prev_compat {
                    f *= numerator.follow_probability(row, treated, &profiles[row.patient]);
                }
                row.sw = Some(if w == 0.0 { 0.0 } else { f * w });
                prev_compat = row.compat;
                treated |= row.a == 1;
            }
            false
        })
        .collect::<Vec<bool>>();
    if missing.into_iter().any(|m| m) {
        return Err(Error::Config(
            "stabilized weights need unstabilized weights first".into(),
        ));
    }
    Ok(())
}

/// Caps weights of the given kind at the `q` quantile of the positive
/// weights on at-risk rows. Returns the cap.
pub fn truncate_weights(ext: &mut ExtendedDataset, kind: WeightKind, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!(
            "truncation quantile {q} outside [0, 1]"
        )));
    }
    let mut pos: Vec<f64> = ext
        .rows()
        .iter()
        .filter(|r| r.at_risk)
        .filter_map(|r| kind.of(r))
        .filter(|&w| w > 0.0)
        .collect();
    if pos.is_empty() {
        return Err(Error::EmptyRiskSet(
            "no positive weights to truncate".into(),
        ));
    }
    pos.sort_by(f64::total_cmp);
    let cap = quantile_sorted(&pos, q);
    for row in &mut ext.rows {
        let slot = match kind {
            WeightKind::Ipcw => &mut row.w,
            WeightKind::Stabilized => &mut row.sw,
            WeightKind::Unweighted => return Ok(cap),
        };
        if let Some(w) = slot {
            if *w > cap {
                *w = cap;
                row.truncated = true;
            }
        }
    }
    Ok(cap)
}

/// Weight distribution for one (regime, day) over at-risk rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub regime_id: String,
    pub day: u32,
    pub n_at_risk: usize,
    pub n_zero: usize,
    pub n_truncated: usize,
    pub min: Option<f64>,
    pub q25: Option<f64>,
    pub median: Option<f64>,
    pub q75: Option<f64>,
    pub q95: Option<f64>,
    pub max: Option<f64>,
    pub mean: Option<f64>,
}

pub fn weight_diagnostics(ext: &ExtendedDataset, kind: WeightKind) -> Vec<WeightSummary> {
    let k_max = ext.rows().iter().map(|r| r.k).max().unwrap_or(0);
    let mut out = Vec::new();
    for r in 0..ext.n_regimes() {
        let mut by_day: Vec<(usize, usize, usize, Vec<f64>)> =
            vec![(0, 0, 0, Vec::new()); k_max as usize + 1];
        for row in ext.regime_rows(r).iter().filter(|row| row.at_risk) {
            let cell = &mut by_day[row.k as usize];
            cell.0 += 1;
            cell.2 += usize::from(row.truncated);
            match kind.of(row) {
                Some(w) if w > 0.0 => cell.3.push(w),
                _ => cell.1 += 1,
            }
        }
        for (day, (n, zero, trunc, mut w)) in by_day.into_iter().enumerate() {
            if n == 0 {
                continue;
            }
            w.sort_by(f64::total_cmp);
            let q = |p: f64| (!w.is_empty()).then(|| quantile_sorted(&w, p));
            out.push(WeightSummary {
                regime_id: ext.regime_ids()[r].clone(),
                day: day as u32,
                n_at_risk: n,
                n_zero: zero,
                n_truncated: trunc,
                min: w.first().copied(),
                q25: q(0.25),
                median: q(0.5),
                q75: q(0.75),
                q95: q(0.95),
                max: w.last().copied(),
                mean: (!w.is_empty()).then(|| w.iter().sum::<f64>() / w.len() as f64),
            });
        }
    }
    out
}
