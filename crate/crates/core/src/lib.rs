//! Counterfactual cumulative incidence under dynamic treatment regimes with
//! competing events: inverse-probability-of-compatibility weighting,
//! Aalen-Johansen and marginal structural model estimators, and
//! cross-validated regime selection.

pub mod data_model;
pub mod design;
pub mod error;
pub mod estimators;
pub mod pipeline;
pub mod propensity;
pub mod regimes;
pub mod selection;
pub mod simulator;
pub mod weights;

pub use data_model::{ingest, Cohort, ColumnMap, IngestOptions, Patient, PatientDay};
pub use error::{Error, Result};
pub use estimators::{Estimator, HazardPair, IncidenceCurve};
pub use pipeline::{EstimatorChoice, PipelineSettings};
pub use regimes::{build_extended, ExtendedDataset, Regime, RegimeGrid};
pub use selection::{cross_validate, CvReport, CvSettings};
pub use simulator::DgpSpec;
pub use weights::WeightKind;
