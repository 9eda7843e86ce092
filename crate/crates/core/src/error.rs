use thiserror::Error;

/// Errors raised by the library.
///
/// Validation problems (bad input, precondition violations) are separated from
/// numerical assertion failures so that drivers can map them to distinct exit
/// codes; see [`Error::is_numerical`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed problem document: {0}")]
    Json(#[from] serde_json::Error),

    #[error("node {node}: {message}")]
    Node { node: usize, message: String },

    #[error("node {node} references node {target}, which is not strictly earlier")]
    ForwardReference { node: usize, target: usize },

    #[error("node {node}: unknown op `{op}`")]
    UnknownOp { node: usize, op: String },

    #[error("node {node}: op `{op}` expects {expected} argument(s), got {got}")]
    Arity {
        node: usize,
        op: String,
        expected: usize,
        got: usize,
    },

    #[error("node {node}: domain violation in `{op}` (argument {value})")]
    Domain {
        node: usize,
        op: &'static str,
        value: f64,
    },

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error(
        "enumeration of {needed} signatures exceeds the cap {cap}; use the sampling oracle instead"
    )]
    CapExceeded { needed: f64, cap: usize },

    #[error("signature does not succeed the base signature at index {index}")]
    Precedence { index: usize },

    #[error("xi[{index}] = {value} is inconsistent with the inactive base signature {sigma}")]
    XiInconsistent { index: usize, value: f64, sigma: i8 },

    #[error("LIKQ does not hold at the base point: {0}")]
    LikqNotVerified(String),

    #[error("central-difference stencil for coordinate {coordinate} crosses a kink")]
    KinkCrossing { coordinate: usize },

    #[error("no differentiable samples were drawn; enlarge the radius or the sample count")]
    NoDifferentiableSamples,

    #[error("empty batch")]
    EmptyBatch,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Divergence { iteration: usize, loss: f64 },

    #[error("numerical assertion failed: {0}")]
    Assertion(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of a numerical self-check rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Assertion(_) | Error::Divergence { .. })
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Json(_) => "json",
            Error::Node { .. } => "node",
            Error::ForwardReference { .. } => "forward_reference",
            Error::UnknownOp { .. } => "unknown_op",
            Error::Arity { .. } => "arity",
            Error::Domain { .. } => "domain",
            Error::Length { .. } => "length",
            Error::Invalid(_) => "invalid",
            Error::CapExceeded { .. } => "cap_exceeded",
            Error::Precedence { .. } => "precedence",
            Error::XiInconsistent { .. } => "xi_inconsistent",
            Error::LikqNotVerified(_) => "likq_not_verified",
            Error::KinkCrossing { .. } => "kink_crossing",
            Error::NoDifferentiableSamples => "no_differentiable_samples",
            Error::EmptyBatch => "empty_batch",
            Error::Dimension(_) => "dimension",
            Error::Divergence { .. } => "divergence",
            Error::Assertion(_) => "assertion",
            Error::Csv(_) => "csv",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Length {
            what,
            expected,
            got,
        })
    }
}
