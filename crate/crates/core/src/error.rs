use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fit diverged: {0}")]
    FitDiverged(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate residuals: sd {sd:e} at alpha={alpha}, beta={beta}")]
    DegenerateResiduals { alpha: f64, beta: f64, sd: f64 },

    #[error("no feasible starting point satisfies the ordering constraints")]
    InfeasibleStart,

    #[error("likelihood ratio statistic is not finite")]
    NonFiniteStatistic,

    #[error("bootstrap unstable: {failed} of {total} replicates failed")]
    BootstrapUnstable { failed: usize, total: usize },

    #[error("study unstable: {failed} of {total} replicates failed for {spec}")]
    StudyUnstable { spec: String, failed: usize, total: usize },

    #[error("too few points in tail region: found {found}, need {needed}")]
    TooFewTailPoints { found: usize, needed: usize },

    #[error("dose {0} has no fitted model")]
    UnfittedDose(String),

    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
