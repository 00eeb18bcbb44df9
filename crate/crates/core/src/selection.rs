//! Regime values, selection of the optimal regime, cross-validated value of
//! the selection procedure and bootstrap bands.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{Cohort, TerminalEvent};
use crate::error::{Error, Result};
use crate::estimators::{Estimator, IncidenceCurve};
use crate::pipeline::{estimate_curves, prepare, Fitted, PipelineSettings};
use crate::propensity::spline::quantile_sorted;
use crate::regimes::Regime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeValue {
    pub regime_id: String,
    pub value: f64,
}

/// Cumulative incidence at the horizon per regime, in curve order.
pub fn regime_values(curves: &[IncidenceCurve]) -> Result<Vec<RegimeValue>> {
    if let Some(c) = curves.iter().find(|c| c.horizon() != curves[0].horizon()) {
        return Err(Error::Config(format!(
            "curve for {} has horizon {}, expected {}",
            c.regime_id,
            c.horizon(),
            curves[0].horizon()
        )));
    }
    Ok(curves
        .iter()
        .map(|c| RegimeValue {
            regime_id: c.regime_id.clone(),
            value: c.value(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub regime_id: String,
    pub index: usize,
    pub value: f64,
    /// Another regime had the same minimal value.
    pub tie: bool,
}

/// Regime with the smallest value; ties go to the earliest declared.
pub fn select_optimal(values: &[RegimeValue]) -> Result<Selection> {
    if values.is_empty() {
        return Err(Error::Config("no regime values to select from".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.value.is_finite()) {
        return Err(Error::Config(format!(
            "value of {} is not finite",
            v.regime_id
        )));
    }
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if v.value < values[best].value {
            best = i;
        }
    }
    let tie = values
        .iter()
        .enumerate()
        .any(|(i, v)| i != best && v.value == values[best].value);
    if tie {
        log::info!(
            "tie for the optimal regime; keeping {}",
            values[best].regime_id
        );
    }
    Ok(Selection {
        regime_id: values[best].regime_id.clone(),
        index: best,
        value: values[best].value,
        tie,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSettings {
    pub folds: usize,
    pub seed: u64,
    /// Balance folds on terminal event type.
    pub stratify: bool,
    /// Refit propensity and weight models on each training split.
    pub refit_per_fold: bool,
}

impl Default for CvSettings {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 1,
            stratify: true,
            refit_per_fold: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub selected: String,
    pub tie: bool,
    pub train_value: f64,
    /// `None` when the test split has no compatible mass for the selection.
    pub test_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub estimator: Estimator,
    pub folds: usize,
    pub seed: u64,
    pub stratified: bool,
    pub refit_per_fold: bool,
    pub fold_results: Vec<FoldResult>,
    /// Unweighted mean of the defined test values.
    pub cv_value: f64,
    pub n_defined: usize,
    pub in_sample_regime: String,
    pub in_sample_value: f64,
    /// `cv_value - in_sample_value`.
    pub optimism: f64,
}

/// Fold index per patient. Folds differ in size by at most one; when
/// stratified, each terminal-event group is spread evenly across folds.
pub fn assign_folds(
    cohort: &Cohort,
    folds: usize,
    seed: u64,
    stratify: bool,
) -> Result<Vec<usize>> {
    let n = cohort.n_patients();
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    if folds > n {
        return Err(Error::Config(format!("{folds} folds for {n} patients")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = if stratify {
        [
            TerminalEvent::Death,
            TerminalEvent::Discharge,
            TerminalEvent::Neither,
        ]
        .iter()
        .map(|t| {
            (0..n)
                .filter(|&i| cohort.patients()[i].terminal_event().0 == *t)
                .collect()
        })
        .collect()
    } else {
        vec![(0..n).collect()]
    };
    let mut order = Vec::with_capacity(n);
    for mut g in groups {
        g.shuffle(&mut rng);
        order.extend(g);
    }
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    Ok(fold)
}

fn curves_on(
    fitted: &Fitted,
    settings: &PipelineSettings,
    estimator: Estimator,
    mask: &[bool],
) -> Result<Vec<IncidenceCurve>> {
    estimate_curves(
        fitted,
        estimator,
        fitted.weight_kind,
        &settings.msm,
        Some(mask),
    )
}

/// Test-split value of the selected regime; `Ok(None)` when the split
/// carries no compatible mass.
fn test_value(
    fitted: &Fitted,
    settings: &PipelineSettings,
    estimator: Estimator,
    mask: &[bool],
    selected: usize,
) -> Result<(Option<f64>, Option<String>)> {
    match curves_on(fitted, settings, estimator, mask) {
        Ok(curves) => Ok((Some(curves[selected].value()), None)),
        Err(e @ (Error::EmptyRiskSet(_) | Error::SingularDesign(_))) => {
            Ok((None, Some(e.to_string())))
        }
        Err(e) => Err(e),
    }
}

/// J-fold cross-validated value of selecting the regime with the lowest
/// estimated value.
pub fn cross_validate(
    cohort: &Cohort,
    regimes: &[Regime],
    settings: &PipelineSettings,
    estimator: Estimator,
    cv: &CvSettings,
) -> Result<CvReport> {
    let fold = assign_folds(cohort, cv.folds, cv.seed, cv.stratify)?;
    let full = prepare(cohort, regimes, settings, None)?;
    let all = vec![true; cohort.n_patients()];
    let in_sample = select_optimal(&regime_values(&curves_on(
        &full, settings, estimator, &all,
    )?)?)?;

    let results: Vec<Result<FoldResult>> = (0..cv.folds)
        .into_par_iter()
        .map(|j| {
            let train: Vec<bool> = fold.iter().map(|&f| f != j).collect();
            let test: Vec<bool> = fold.iter().map(|&f| f == j).collect();
            let refit;
            let fitted = if cv.refit_per_fold {
                refit = prepare(cohort, regimes, settings, Some(&train))?;
                &refit
            } else {
                &full
            };
            let sel = select_optimal(&regime_values(&curves_on(
                fitted, settings, estimator, &train,
            )?)?)?;
            let (value, note) = test_value(fitted, settings, estimator, &test, sel.index)?;
            if let Some(n) = &note {
                log::warn!("fold {j}: test value undefined ({n})");
            }
            Ok(FoldResult {
                fold: j,
                n_train: train.iter().filter(|&&b| b).count(),
                n_test: test.iter().filter(|&&b| b).count(),
                selected: sel.regime_id,
                tie: sel.tie,
                train_value: sel.value,
                test_value: value,
                note,
            })
        })
        .collect();
    let fold_results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let defined: Vec<f64> = fold_results.iter().filter_map(|f| f.test_value).collect();
    if defined.is_empty() {
        return Err(Error::Fold("no fold has a defined test value".into()));
    }
    let cv_value = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(CvReport {
        estimator,
        folds: cv.folds,
        seed: cv.seed,
        stratified: cv.stratify,
        refit_per_fold: cv.refit_per_fold,
        n_defined: defined.len(),
        fold_results,
        cv_value,
        in_sample_regime: in_sample.regime_id,
        in_sample_value: in_sample.value,
        optimism: cv_value - in_sample.value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSettings {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    /// Largest tolerated share of failed replicates.
    pub max_failure_rate: f64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            replicates: 200,
            level: 0.95,
            seed: 1,
            max_failure_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Full-data curves with percentile bands.
    pub curves: Vec<IncidenceCurve>,
    pub replicates: usize,
    pub failed: usize,
}

/// Patient indices drawn with replacement for replicate `b`.
pub fn resample(n: usize, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    idx.sort_unstable();
    idx
}

/// Percentile bootstrap bands, rerunning the whole pipeline on each
/// patient-level resample.
pub fn bootstrap_bands(
    cohort: &Cohort,
    regimes: &[Regime],
    settings: &PipelineSettings,
    estimator: Estimator,
    boot: &BootstrapSettings,
) -> Result<BootstrapResult> {
    if boot.replicates < 2 {
        return Err(Error::Config(
            "bootstrap needs at least 2 replicates".into(),
        ));
    }
    if !(boot.level > 0.0 && boot.level < 1.0) {
        return Err(Error::Config(format!(
            "band level {} outside (0, 1)",
            boot.level
        )));
    }
    let full = prepare(cohort, regimes, settings, None)?;
    let mut point = estimate_curves(&full, estimator, full.weight_kind, &settings.msm, None)?;

    let reps: Vec<Option<Vec<Vec<f64>>>> = (0..boot.replicates)
        .into_par_iter()
        .map(|b| {
            let sample = cohort.select(&resample(cohort.n_patients(), boot.seed, b));
            let out = prepare(&sample, regimes, settings, None)
                .and_then(|f| estimate_curves(&f, estimator, f.weight_kind, &settings.msm, None));
            match out {
                Ok(c) => Some(c.into_iter().map(|c| c.cif).collect()),
                Err(e) => {
                    log::warn!("bootstrap replicate {b} failed: {e}");
                    None
                }
            }
        })
        .collect();
    let failed = reps.iter().filter(|r| r.is_none()).count();
    if failed as f64 > boot.max_failure_rate * boot.replicates as f64 {
        return Err(Error::Bootstrap(format!(
            "{failed} of {} replicates failed",
            boot.replicates
        )));
    }
    let ok: Vec<Vec<Vec<f64>>> = reps.into_iter().flatten().collect();
    let alpha = (1.0 - boot.level) / 2.0;
    for (r, curve) in point.iter_mut().enumerate() {
        let k = curve.cif.len();
        let mut lower = Vec::with_capacity(k);
        let mut upper = Vec::with_capacity(k);
        for d in 0..k {
            let mut v: Vec<f64> = ok.iter().map(|rep| rep[r][d]).collect();
            v.sort_by(f64::total_cmp);
            lower.push(quantile_sorted(&v, alpha));
            upper.push(quantile_sorted(&v, 1.0 - alpha));
        }
        curve.lower = Some(lower);
        curve.upper = Some(upper);
    }
    Ok(BootstrapResult {
        curves: point,
        replicates: boot.replicates,
        failed,
    })
}
