//! Counterfactual cumulative incidence under a regime: weighted
//! Aalen-Johansen and marginal structural model estimators, plus the
//! weighted proportion treated.

mod aalen_johansen;
mod msm;

use serde::{Deserialize, Serialize};

pub use aalen_johansen::{
    aj_cuminc, aj_hazards, observed_cuminc, proportion_treated, stratum_mask,
};
pub use msm::{msm_cuminc, msm_fit, msm_hazards, Marginalize, MsmFitPair, MsmSettings};

use crate::weights::WeightKind;

/// Daily cause-specific hazards; entry `j` is the hazard of day `j + 1`,
/// estimated from rows of day `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardPair {
    pub regime_id: String,
    /// Event of interest.
    pub h1: Vec<f64>,
    /// Competing event.
    pub h2: Vec<f64>,
    /// Weighted risk-set mass.
    pub mass: Vec<f64>,
    /// False where the risk set was empty and the hazard set to 0.
    pub defined: Vec<bool>,
}

impl HazardPair {
    pub fn horizon(&self) -> usize {
        self.h1.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    AalenJohansen,
    Msm,
    /// Forced-regime simulation truth.
    Oracle,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::AalenJohansen => "aalen_johansen",
            Estimator::Msm => "msm",
            Estimator::Oracle => "oracle",
        }
    }
}

/// Cumulative incidence of the event of interest on days `0..=K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidenceCurve {
    pub regime_id: String,
    pub stratum: Option<String>,
    pub estimator: Estimator,
    pub weighting: WeightKind,
    pub cif: Vec<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl IncidenceCurve {
    /// Cumulative incidence at the horizon.
    pub fn value(&self) -> f64 {
        *self.cif.last().expect("curve has day 0")
    }

    pub fn horizon(&self) -> usize {
        self.cif.len() - 1
    }

    /// Label used in output tables.
    pub fn label(&self) -> String {
        match self.weighting {
            WeightKind::Ipcw => self.estimator.name().to_string(),
            w => format!("{}_{}", self.estimator.name(), w.name()),
        }
    }
}

/// Assembles the event-of-interest and competing cumulative incidences
/// from daily hazards.
pub fn cuminc_from_hazards(h1: &[f64], h2: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut cif1 = Vec::with_capacity(h1.len() + 1);
    let mut cif2 = Vec::with_capacity(h1.len() + 1);
    cif1.push(0.0);
    cif2.push(0.0);
    let mut surv = 1.0;
    for (a, b) in h1.iter().zip(h2) {
        // Discharge is resolved before death within a day.
        cif1.push(cif1.last().unwrap() + surv * a * (1.0 - b));
        cif2.push(cif2.last().unwrap() + surv * b);
        surv *= (1.0 - a) * (1.0 - b);
    }
    (cif1, cif2)
}
