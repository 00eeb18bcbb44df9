//! End-to-end estimation: propensity fit, weights and per-regime curves.

use serde::{Deserialize, Serialize};

use crate::data_model::Cohort;
use crate::error::{Error, Result};
use crate::estimators::{
    aj_cuminc, aj_hazards, msm_cuminc, msm_fit, Estimator, IncidenceCurve, Marginalize, MsmFitPair,
    MsmSettings,
};
use crate::propensity::{compatibility_probability, fit_propensity, PropensityModel, PsSettings};
use crate::regimes::{build_extended, ExtendedDataset, Regime};
use crate::weights::{
    compute_ipcw, compute_stabilized, fit_numerator, truncate_weights, NumeratorModel, WeightKind,
    WeightSettings,
};

/// Which estimators to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    #[default]
    Aj,
    Msm,
    Both,
}

impl EstimatorChoice {
    pub fn estimators(self) -> Vec<Estimator> {
        match self {
            EstimatorChoice::Aj => vec![Estimator::AalenJohansen],
            EstimatorChoice::Msm => vec![Estimator::Msm],
            EstimatorChoice::Both => vec![Estimator::AalenJohansen, Estimator::Msm],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSettings {
    pub ps: PsSettings,
    pub weights: WeightSettings,
    pub msm: MsmSettings,
}

impl PipelineSettings {
    pub fn weight_kind(&self) -> WeightKind {
        if self.weights.stabilized {
            WeightKind::Stabilized
        } else {
            WeightKind::Ipcw
        }
    }
}

/// Extended dataset with weights, plus the models that produced them.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub ext: ExtendedDataset,
    pub propensity: PropensityModel,
    pub numerator: Option<NumeratorModel>,
    pub truncation_cap: Option<f64>,
    pub weight_kind: WeightKind,
}

/// Builds the extended dataset and fills ps and weights. Models are fitted
/// on the patients selected by `fit_mask` and applied to everyone.
pub fn prepare(
    cohort: &Cohort,
    regimes: &[Regime],
    settings: &PipelineSettings,
    fit_mask: Option<&[bool]>,
) -> Result<Fitted> {
    if cohort.is_empty() {
        return Err(Error::EmptyRiskSet("cohort has no patients".into()));
    }
    let mut ext = build_extended(cohort, regimes)?;
    let propensity = fit_propensity(cohort, &settings.ps, fit_mask)?;
    compatibility_probability(&mut ext, cohort, &propensity)?;
    compute_ipcw(&mut ext, settings.weights.ps_floor)?;
    let numerator = if settings.weights.stabilized {
        let m = fit_numerator(
            &ext,
            &settings.weights.numerator_spline,
            &settings.ps.options(),
            fit_mask,
        )?;
        compute_stabilized(&mut ext, &m)?;
        Some(m)
    } else {
        None
    };
    let weight_kind = settings.weight_kind();
    let truncation_cap = match settings.weights.truncate_quantile {
        Some(q) => Some(truncate_weights(&mut ext, weight_kind, q)?),
        None => None,
    };
    Ok(Fitted {
        ext,
        propensity,
        numerator,
        truncation_cap,
        weight_kind,
    })
}

/// Per-regime curves from one estimator over the patients in `mask`.
pub fn estimate_curves(
    fitted: &Fitted,
    estimator: Estimator,
    kind: WeightKind,
    msm: &MsmSettings,
    mask: Option<&[bool]>,
) -> Result<Vec<IncidenceCurve>> {
    let ext = &fitted.ext;
    match estimator {
        Estimator::AalenJohansen => (0..ext.n_regimes())
            .map(|r| Ok(aj_cuminc(&aj_hazards(ext, r, kind, mask)?, kind)))
            .collect(),
        Estimator::Msm => {
            let fits = msm_fit(ext, kind, msm, mask)?;
            Ok(msm_curves(&fits, ext, mask))
        }
        Estimator::Oracle => Err(Error::Config("the oracle is not an estimator".into())),
    }
}

pub fn msm_curves(
    fits: &MsmFitPair,
    ext: &ExtendedDataset,
    mask: Option<&[bool]>,
) -> Vec<IncidenceCurve> {
    (0..ext.n_regimes())
        .map(|r| msm_cuminc(fits, r, Marginalize::Cohort { ext, mask }))
        .collect()
}

/// Curves for every regime under one estimator, from scratch.
pub fn run(
    cohort: &Cohort,
    regimes: &[Regime],
    settings: &PipelineSettings,
    estimator: Estimator,
) -> Result<Vec<IncidenceCurve>> {
    let fitted = prepare(cohort, regimes, settings, None)?;
    estimate_curves(&fitted, estimator, fitted.weight_kind, &settings.msm, None)
}
