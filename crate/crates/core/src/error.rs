use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Arguments violate an operation's preconditions (shapes, bounds, modes).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The input is well-formed but carries no information to work with,
    /// e.g. a zero tensor for a fit ratio.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical failure in sweep {sweep}: {message}")]
    Numerical { sweep: usize, message: String },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("{} timestamp(s) outside the analysis window: {}", .offenders.len(), format_offenders(.offenders))]
    OutOfWindow { offenders: Vec<(String, i64)> },

    #[error("grid point ({p}, {q}, {r}): {source}")]
    GridPoint {
        p: usize,
        q: usize,
        r: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_offenders(offenders: &[(String, i64)]) -> String {
    const SHOWN: usize = 10;
    let mut s = offenders
        .iter()
        .take(SHOWN)
        .map(|(u, t)| format!("{u}@{t}"))
        .collect::<Vec<_>>()
        .join(", ");
    if offenders.len() > SHOWN {
        s.push_str(&format!(", ... ({} more)", offenders.len() - SHOWN));
    }
    s
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
