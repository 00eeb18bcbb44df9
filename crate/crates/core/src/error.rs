use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("ordering violation for patient {patient} at day {day}: {rule}")]
    Order {
        patient: String,
        day: u32,
        rule: String,
    },

    #[error("non-contiguous days for patient {patient}: {detail}")]
    Gap { patient: String, detail: String },

    #[error("regime {regime}: {detail}")]
    RegimeEval { regime: String, detail: String },

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("separation detected: {0}")]
    Separation(String),

    #[error("empty risk set: {0}")]
    EmptyRiskSet(String),

    #[error("logistic fit did not converge after {iterations} iterations (gradient max-norm {gradient_norm:e})")]
    NotConverged {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error(
        "positivity violation: patient {patient}, regime {regime}, day {day}: probability {ps:e} below floor {floor:e}"
    )]
    Positivity {
        patient: String,
        regime: String,
        day: u32,
        ps: f64,
        floor: f64,
    },

    #[error("cross-validation fold error: {0}")]
    Fold(String),

    #[error("bootstrap failed: {0}")]
    Bootstrap(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerical core (solver, positivity, risk sets).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularDesign(_)
                | Error::Separation(_)
                | Error::EmptyRiskSet(_)
                | Error::NotConverged { .. }
                | Error::Positivity { .. }
                | Error::Fold(_)
                | Error::Bootstrap(_)
        )
    }

    /// True for data validation failures raised at ingest.
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Error::Schema(_) | Error::Order { .. } | Error::Gap { .. } | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
