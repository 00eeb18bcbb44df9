//! Time-dependent propensity score: pooled logistic model for treatment
//! initiation among untreated at-risk patient-days, and the per-row
//! probability of following the prescribed action.

pub mod logistic;
pub mod spline;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{Cohort, PatientDay};
use crate::error::{Error, Result};
use crate::regimes::ExtendedDataset;

pub use logistic::{expit, fit_weighted_logistic, DesignMatrix, LogisticFit, LogisticOptions};
pub use spline::{SplineBasis, SplineSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsSettings {
    /// Covariates entering the model. `None` uses every cohort covariate.
    pub covariates: Option<Vec<String>>,
    pub spline: SplineSpec,
    pub ridge: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PsSettings {
    fn default() -> Self {
        let o = LogisticOptions::default();
        Self {
            covariates: None,
            spline: SplineSpec::default(),
            ridge: o.ridge,
            tol: o.tol,
            max_iter: o.max_iter,
        }
    }
}

impl PsSettings {
    pub fn options(&self) -> LogisticOptions {
        LogisticOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            ridge: self.ridge,
            ..LogisticOptions::default()
        }
    }
}

/// Fitted treatment-initiation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub spline: Option<SplineBasis>,
    pub covariates: Vec<String>,
    #[serde(skip)]
    covariate_idx: Vec<usize>,
    pub fit: LogisticFit,
    pub n_rows: usize,
    pub n_events: usize,
}

impl PropensityModel {
    fn design_row(
        spline: Option<&SplineBasis>,
        idx: &[usize],
        day: &PatientDay,
        out: &mut Vec<f64>,
    ) {
        out.clear();
        out.push(1.0);
        if let Some(s) = spline {
            s.eval_into(f64::from(day.k), out);
        }
        out.extend(idx.iter().map(|&j| day.x[j]));
    }

    /// Predicted probability of initiating treatment on `day`.
    pub fn predict(&self, day: &PatientDay) -> f64 {
        let mut row = Vec::with_capacity(self.fit.coefficients.len());
        Self::design_row(self.spline.as_ref(), &self.covariate_idx, day, &mut row);
        self.fit.predict(&row)
    }

    /// Rebinds covariate columns to another cohort with the same names.
    pub fn bind(&mut self, cohort: &Cohort) -> Result<()> {
        self.covariate_idx = resolve(cohort, &self.covariates)?;
        Ok(())
    }
}

fn resolve(cohort: &Cohort, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            cohort
                .covariate_index(n)
                .ok_or_else(|| Error::Config(format!("propensity covariate {n:?} not in data")))
        })
        .collect()
}

/// True for rows entering the treatment-initiation model.
fn eligible(days: &[PatientDay], i: usize) -> bool {
    days[i].at_risk && (i == 0 || days[i - 1].a == 0)
}

/// Fits the pooled initiation model on original cohort rows (one per
/// patient-day) that are at risk and untreated so far. `mask` restricts the
/// fit to a subset of patients.
pub fn fit_propensity(
    cohort: &Cohort,
    settings: &PsSettings,
    mask: Option<&[bool]>,
) -> Result<PropensityModel> {
    let covariates = settings
        .covariates
        .clone()
        .unwrap_or_else(|| cohort.covariates().to_vec());
    let idx = resolve(cohort, &covariates)?;
    let rows: Vec<&PatientDay> = cohort
        .patients()
        .iter()
        .enumerate()
        .filter(|(p, _)| mask.is_none_or(|m| m[*p]))
        .flat_map(|(_, pt)| {
            (0..pt.days.len())
                .filter(|&i| eligible(&pt.days, i))
                .map(move |i| &pt.days[i])
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyRiskSet(
            "no untreated at-risk patient-days for the propensity model".into(),
        ));
    }
    let days: Vec<f64> = rows.iter().map(|d| f64::from(d.k)).collect();
    let spline = if SplineBasis::is_degenerate_for(&days) {
        log::warn!("propensity rows cover a single day; dropping the time trend");
        None
    } else {
        let hi = f64::from(cohort.horizon()).max(days.iter().cloned().fold(0.0, f64::max) + 1.0);
        Some(SplineBasis::from_days(&settings.spline, &days, [0.0, hi])?)
    };
    let mut names = vec!["(Intercept)".to_string()];
    if let Some(s) = &spline {
        names.extend((1..=s.n_basis()).map(|j| format!("s(day){j}")));
    }
    names.extend(covariates.iter().cloned());
    let mut design = DesignMatrix::with_capacity(names, true, rows.len());
    let mut buf = Vec::new();
    for d in &rows {
        PropensityModel::design_row(spline.as_ref(), &idx, d, &mut buf);
        design.push_row(&buf);
    }
    let response: Vec<u8> = rows.iter().map(|d| d.a).collect();
    let weights = vec![1.0; rows.len()];
    let fit = fit_weighted_logistic(&design, &response, &weights, &settings.options())?
        .require_converged()?;
    if settings.ridge > 0.0 {
        log::debug!("propensity model fitted with ridge {}", settings.ridge);
    }
    Ok(PropensityModel {
        spline,
        covariates,
        covariate_idx: idx,
        fit,
        n_rows: rows.len(),
        n_events: response.iter().map(|&a| usize::from(a)).sum(),
    })
}

/// Fills `ps` on the extended dataset from a fitted initiation model.
pub fn compatibility_probability(
    ext: &mut ExtendedDataset,
    cohort: &Cohort,
    model: &PropensityModel,
) -> Result<()> {
    let mut model = model.clone();
    model.bind(cohort)?;
    fill_ps(ext, cohort, |_, day| model.predict(day))
}

/// Fills `ps`: the probability of the prescribed action on each at-risk row
/// whose path was compatible up to the previous day, and 1 on rows after a
/// terminal event. `p_treat(patient, day)` gives the probability of
/// starting treatment on a day for a patient untreated so far; patients
/// already on treatment continue with probability 1. Rows past a loss of
/// compatibility are left empty.
pub fn fill_ps(
    ext: &mut ExtendedDataset,
    cohort: &Cohort,
    p_treat: impl Fn(usize, &PatientDay) -> f64 + Sync,
) -> Result<()> {
    if cohort.n_patients() != ext.n_patients() || cohort.n_rows() != ext.block_len() {
        return Err(Error::Config(
            "extended dataset was not built from this cohort".into(),
        ));
    }
    let patients = cohort.patients();
    ext.paths_mut().into_par_iter().for_each(|path| {
        let pi = path[0].patient;
        let days = &patients[pi].days;
        let mut prev_compat = true;
        for (i, row) in path.iter_mut().enumerate() {
            row.ps = if !row.at_risk {
                Some(1.0)
            } else if !prev_compat {
                None
            } else {
                let p = if i == 0 || days[i - 1].a == 0 {
                    p_treat(pi, &days[i])
                } else {
                    1.0
                };
                Some(if row.d == 1 { p } else { 1.0 - p })
            };
            prev_compat = row.compat;
        }
    });
    Ok(())
}
