use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no units")]
    NoUnits,

    #[error("invalid geometry for unit {id}: {reason}")]
    InvalidGeometry { id: String, reason: String },

    #[error("{file}: record {record}: field `{field}`: {message}")]
    Schema {
        file: String,
        record: String,
        field: String,
        message: String,
    },

    #[error("{0}: coordinates are not in a projected metric CRS; reproject the input (e.g. to the local UTM zone) before ingesting")]
    NotProjected(String),

    #[error("invalid configuration: field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("missing upstream artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("design matrix is rank deficient; dependent columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("no positive spatial autocorrelation basis")]
    NoPositiveBasis,

    #[error("{variable}: constant column")]
    ConstantColumn { variable: String },

    #[error("no population")]
    NoPopulation,

    #[error("zero variance")]
    ZeroVariance,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite log density in parameter block `{block}`")]
    NonFinite { block: String },

    #[error("sampler did not converge: R-hat of `{parameter}` is {rhat:.4} (> {threshold})")]
    NotConverged {
        parameter: String,
        rhat: f64,
        threshold: f64,
    },

    #[error("{divergent} of {total} post-warmup transitions diverged (limit {limit:.3}%)")]
    Divergent {
        divergent: usize,
        total: usize,
        limit: f64,
    },

    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),

    #[error("data fingerprint mismatch: {0}")]
    Fingerprint(String),

    #[error("non-finite log-likelihood for unit {unit}")]
    NonFiniteLogLik { unit: usize },

    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: String, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by configuration or input validation rather
    /// than by computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_validation(),
            Error::Config { .. }
            | Error::Schema { .. }
            | Error::NotProjected(_)
            | Error::InvalidGeometry { .. }
            | Error::MissingArtifact(_)
            | Error::FeatureMismatch(_)
            | Error::Fingerprint(_)
            | Error::NoUnits => true,
            _ => false,
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage: stage.into(), source: Box::new(e) },
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn schema(
        file: impl Into<String>,
        record: impl Into<String>,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Schema {
            file: file.into(),
            record: record.into(),
            field: field.into(),
            message: message.into(),
        }
    }
}
