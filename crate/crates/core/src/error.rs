use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column `{column}`: {message}")]
    Parse {
        line: usize,
        column: String,
        message: String,
    },

    #[error("schema mismatch in column `{column}`: {message}")]
    Schema { column: String, message: String },

    #[error("no households")]
    NoHouseholds,

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid heterogeneity specification: {0}")]
    InvalidSpec(String),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("moment generating function evaluated outside its existence region: {0}")]
    ExistenceRegion(String),

    #[error("admission limit exceeded: {admitted} k-tuples (log10 = {log10:.2}) > limit {limit}")]
    BudgetExceeded {
        admitted: String,
        log10: f64,
        limit: u64,
    },

    #[error("cache mismatch: {0}")]
    CacheMismatch(String),

    #[error("cache format version {found} is not supported (expected {expected})")]
    CacheVersion { found: u16, expected: u16 },

    #[error("cache checksum failure: stored {stored:#010x}, computed {computed:#010x}")]
    CacheChecksum { stored: u32, computed: u32 },

    #[error("truncated or malformed cache file: {0}")]
    CacheTruncated(String),

    #[error(
        "truncation failure for household {household}: H = {value:e} is not positive \
         (parity spread {parity_spread:e}); increase the truncation budget"
    )]
    Truncation {
        household: String,
        value: f64,
        parity_spread: f64,
    },

    #[error("singular Hessian (condition estimate {condition:e})")]
    SingularHessian { condition: f64 },

    #[error("every grid point failed to evaluate; first failure: {0}")]
    AllPointsFailed(String),

    #[error("quadrature tolerance not met: achieved {achieved:e}, requested {requested:e}")]
    ToleranceNotMet { achieved: f64, requested: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used in CLI error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Schema { .. } => "schema",
            Error::NoHouseholds => "no_households",
            Error::InvalidData(_) => "invalid_data",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::Domain(_) => "domain",
            Error::ExistenceRegion(_) => "existence_region",
            Error::BudgetExceeded { .. } => "budget_exceeded",
            Error::CacheMismatch(_) => "cache_mismatch",
            Error::CacheVersion { .. } => "cache_version",
            Error::CacheChecksum { .. } => "cache_checksum",
            Error::CacheTruncated(_) => "cache_truncated",
            Error::Truncation { .. } => "truncation_failure",
            Error::SingularHessian { .. } => "singular_hessian",
            Error::AllPointsFailed(_) => "all_points_failed",
            Error::ToleranceNotMet { .. } => "tolerance_not_met",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code: 2 usage/validation, 3 resource limit, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BudgetExceeded { .. } => 3,
            Error::Truncation { .. }
            | Error::SingularHessian { .. }
            | Error::AllPointsFailed(_)
            | Error::ToleranceNotMet { .. }
            | Error::ExistenceRegion(_) => 4,
            _ => 2,
        }
    }
}
