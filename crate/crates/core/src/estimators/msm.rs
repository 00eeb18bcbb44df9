use serde::{Deserialize, Serialize};

use super::{cuminc_from_hazards, Estimator, HazardPair, IncidenceCurve};
use crate::design::{RegimeTimeDesign, TimeBasis};
use crate::error::{Error, Result};
use crate::propensity::{
    fit_weighted_logistic, DesignMatrix, LogisticFit, LogisticOptions, SplineSpec,
};
use crate::regimes::ExtendedDataset;
use crate::weights::WeightKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsmSettings {
    pub spline: SplineSpec,
    /// Replace the spline by one indicator per day.
    pub saturated: bool,
    pub ridge: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MsmSettings {
    fn default() -> Self {
        let o = LogisticOptions::default();
        Self {
            spline: SplineSpec::default(),
            saturated: false,
            ridge: 0.0,
            tol: o.tol,
            max_iter: o.max_iter,
        }
    }
}

impl MsmSettings {
    fn options(&self) -> LogisticOptions {
        LogisticOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            ridge: self.ridge,
            ..LogisticOptions::default()
        }
    }
}

/// Weighted pooled logistic models for the two cause-specific hazards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsmFitPair {
    pub event_design: RegimeTimeDesign,
    pub event: LogisticFit,
    pub competing_design: RegimeTimeDesign,
    pub competing: LogisticFit,
    pub weighting: WeightKind,
    pub horizon: u32,
}

/// Population over which to average per-profile curves.
#[derive(Debug, Clone, Copy)]
pub enum Marginalize<'a> {
    Profile(&'a [f64]),
    Cohort {
        ext: &'a ExtendedDataset,
        mask: Option<&'a [bool]>,
    },
}

struct Rows {
    idx: Vec<usize>,
    weights: Vec<f64>,
}

fn collect_rows(
    ext: &ExtendedDataset,
    kind: WeightKind,
    mask: Option<&[bool]>,
    event_model: bool,
) -> Result<Rows> {
    let mut idx = Vec::new();
    let mut weights = Vec::new();
    for (i, row) in ext.rows().iter().enumerate() {
        if !row.at_risk || mask.is_some_and(|m| !m[row.patient]) {
            continue;
        }
        if event_model && row.z == 1 {
            continue;
        }
        let w = kind
            .of(row)
            .ok_or_else(|| Error::Config(format!("{} weights missing", kind.name())))?;
        if w > 0.0 {
            idx.push(i);
            weights.push(w);
        }
    }
    Ok(Rows { idx, weights })
}

fn check_support(ext: &ExtendedDataset, rows: &Rows, time: &TimeBasis, model: &str) -> Result<()> {
    let all = ext.rows();
    for (r, id) in ext.regime_ids().iter().enumerate() {
        let days: Vec<u32> = rows
            .idx
            .iter()
            .filter(|&&i| all[i].regime == r)
            .map(|&i| all[i].k)
            .collect();
        if days.is_empty() {
            return Err(Error::SingularDesign(format!(
                "regime {id} has no rows with positive weight in the {model} model"
            )));
        }
        if let TimeBasis::PerDay(grid) = time {
            if let Some(k) = grid.iter().find(|k| !days.contains(k)) {
                return Err(Error::SingularDesign(format!(
                    "regime {id} has no rows with positive weight on day {k} in the {model} model"
                )));
            }
        }
    }
    Ok(())
}

fn fit_one(
    ext: &ExtendedDataset,
    kind: WeightKind,
    settings: &MsmSettings,
    mask: Option<&[bool]>,
    event_model: bool,
) -> Result<(RegimeTimeDesign, LogisticFit)> {
    let name = if event_model { "event" } else { "competing" };
    let rows = collect_rows(ext, kind, mask, event_model)?;
    let all = ext.rows();
    let days: Vec<u32> = rows.idx.iter().map(|&i| all[i].k).collect();
    let spline = (!settings.saturated).then_some(&settings.spline);
    let time = TimeBasis::for_days(spline, &days, ext.horizon())?;
    check_support(ext, &rows, &time, name)?;
    let design = RegimeTimeDesign {
        regime_ids: ext.regime_ids().to_vec(),
        time,
        v_columns: ext.v_columns().to_vec(),
    };
    let mut x = DesignMatrix::with_capacity(design.names(), true, rows.idx.len());
    let mut buf = Vec::new();
    for &i in &rows.idx {
        let r = &all[i];
        design.row_into(r.regime, r.k, ext.v_profile(r.patient), &mut buf);
        x.push_row(&buf);
    }
    let y: Vec<u8> = rows
        .idx
        .iter()
        .map(|&i| if event_model { all[i].y } else { all[i].z })
        .collect();
    let fit = fit_weighted_logistic(&x, &y, &rows.weights, &settings.options())
        .map_err(|e| match e {
            Error::Separation(m) => Error::Separation(format!("{name} model: {m}")),
            Error::SingularDesign(m) => Error::SingularDesign(format!("{name} model: {m}")),
            e => e,
        })?
        .require_converged()?;
    Ok((design, fit))
}

/// Fits the event-of-interest model on at-risk, compatible rows without a
/// same-day competing event, and the competing-event model on all at-risk
/// compatible rows, each weighted by the chosen weight.
pub fn msm_fit(
    ext: &ExtendedDataset,
    kind: WeightKind,
    settings: &MsmSettings,
    mask: Option<&[bool]>,
) -> Result<MsmFitPair> {
    let (event_design, event) = fit_one(ext, kind, settings, mask, true)?;
    let (competing_design, competing) = fit_one(ext, kind, settings, mask, false)?;
    Ok(MsmFitPair {
        event_design,
        event,
        competing_design,
        competing,
        weighting: kind,
        horizon: ext.horizon(),
    })
}

/// Model-implied hazards for one regime and baseline profile.
pub fn msm_hazards(fits: &MsmFitPair, regime: usize, v: &[f64]) -> HazardPair {
    let k = fits.horizon;
    let h1 = (0..k)
        .map(|d| fits.event.predict(&fits.event_design.row(regime, d, v)))
        .collect();
    let h2 = (0..k)
        .map(|d| {
            fits.competing
                .predict(&fits.competing_design.row(regime, d, v))
        })
        .collect();
    HazardPair {
        regime_id: fits.event_design.regime_ids[regime].clone(),
        h1,
        h2,
        mass: Vec::new(),
        defined: vec![true; k as usize],
    }
}

/// Cumulative incidence under a regime for one profile, or averaged over
/// the baseline profiles of a set of patients.
pub fn msm_cuminc(fits: &MsmFitPair, regime: usize, over: Marginalize<'_>) -> IncidenceCurve {
    let curve = |v: &[f64]| {
        let h = msm_hazards(fits, regime, v);
        cuminc_from_hazards(&h.h1, &h.h2).0
    };
    let (cif, stratum) = match over {
        Marginalize::Profile(v) => {
            let names = &fits.event_design.v_columns;
            let s = (!names.is_empty()).then(|| {
                names
                    .iter()
                    .zip(v)
                    .map(|(n, x)| format!("{n}={x}"))
                    .collect::<Vec<_>>()
                    .join(";")
            });
            (curve(v), s)
        }
        Marginalize::Cohort { ext, mask } => {
            // Distinct profiles in first-seen order, with counts.
            let mut groups: Vec<(&[f64], usize)> = Vec::new();
            for p in (0..ext.n_patients()).filter(|&p| mask.is_none_or(|m| m[p])) {
                let v = ext.v_profile(p);
                match groups.iter_mut().find(|(g, _)| *g == v) {
                    Some(g) => g.1 += 1,
                    None => groups.push((v, 1)),
                }
            }
            let n: usize = groups.iter().map(|g| g.1).sum();
            let mut acc = vec![0.0; fits.horizon as usize + 1];
            for (v, c) in groups {
                for (a, x) in acc.iter_mut().zip(curve(v)) {
                    *a += x * c as f64;
                }
            }
            acc.iter_mut().for_each(|a| *a /= n.max(1) as f64);
            (acc, None)
        }
    };
    IncidenceCurve {
        regime_id: fits.event_design.regime_ids[regime].clone(),
        stratum,
        estimator: Estimator::Msm,
        weighting: fits.weighting,
        cif,
        lower: None,
        upper: None,
    }
}
