use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown symbol kind `{0}`")]
    UnknownSymbol(String),
    #[error("user symbol is missing the `{0}` partial")]
    MissingPartial(&'static str),
    #[error("invalid symbol parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("frequency solve did not converge after {iterations} iterations (|D| = {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("degenerate symbol: |dD/dU| = {du:e} below threshold")]
    DegenerateSymbol { du: f64 },
    #[error("marker {index}: {source}")]
    AtMarker {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("labels must be strictly increasing (violated at index {0})")]
    NonMonotoneLabels(usize),
    #[error("invalid chart: {0}")]
    InvalidChart(String),
    #[error("line charts carry no loop class")]
    OpenTopology,
    #[error("gauge map is not orientation preserving")]
    OrientationReversing,
    #[error("gauge map does not match the chart topology")]
    GaugeTopologyMismatch,
    #[error("marker count {count} exceeds cap {cap}")]
    RefinementExplosion { count: usize, cap: usize },
    #[error("invalid evolve settings: {0}")]
    InvalidSettings(String),
    #[error("caustic at query point q = {q}")]
    CausticAtQuery { q: f64 },
    #[error("momentum chart degenerate near q = {q}")]
    UnresolvedCaustic { q: f64 },
    #[error("density weight rho vanishes at marker {0}")]
    ZeroWeight(usize),
    #[error("io: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn at_marker(index: usize, source: Error) -> Error {
        match source {
            e @ Error::AtMarker { .. } => e,
            e => Error::AtMarker {
                index,
                source: Box::new(e),
            },
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnknownSymbol(_) => "UnknownSymbol",
            Error::MissingPartial(_) => "MissingPartial",
            Error::InvalidParameter { .. } => "InvalidParameter",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::DegenerateSymbol { .. } => "DegenerateSymbol",
            Error::AtMarker { source, .. } => source.kind(),
            Error::NonMonotoneLabels(_) => "NonMonotoneLabels",
            Error::InvalidChart(_) => "InvalidChart",
            Error::OpenTopology => "OpenTopology",
            Error::OrientationReversing => "OrientationReversing",
            Error::GaugeTopologyMismatch => "GaugeTopologyMismatch",
            Error::RefinementExplosion { .. } => "RefinementExplosion",
            Error::InvalidSettings(_) => "InvalidSettings",
            Error::CausticAtQuery { .. } => "CausticAtQuery",
            Error::UnresolvedCaustic { .. } => "UnresolvedCaustic",
            Error::ZeroWeight(_) => "ZeroWeight",
            Error::Io(_) => "Io",
            Error::Parse(_) => "Parse",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
