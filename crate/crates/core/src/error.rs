use alloc::string::String;

/// Errors raised by the model, planner and inference routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid stick fractions: {0}")]
    InvalidStick(String),

    #[error("degenerate weights: zero remaining mass before index {index}")]
    DegenerateWeights { index: usize },

    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("error budget infeasible: {0}")]
    BudgetInfeasible(String),

    #[error("numerical degeneracy in {factor} (index {index})")]
    NumericalDegeneracy { factor: &'static str, index: usize },

    #[error("all assignment log-weights are -inf for observation {observation}")]
    DegenerateLikelihood { observation: usize },

    #[error("free stick equal to one in {block} row {row}; concentration rate is infinite")]
    InfiniteRate { block: &'static str, row: usize },

    #[error("prior precision matrix is not positive definite")]
    IllConditionedPrior,

    #[error("gibbs block `{block}` failed: {source}")]
    Block {
        block: &'static str,
        #[source]
        source: alloc::boxed::Box<Error>,
    },

    #[error("empty input")]
    EmptyInput,

    #[error("trace too short: need {needed} values, have {available}")]
    TraceLength { needed: usize, available: usize },
}

impl Error {
    /// True for errors caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NumericalDegeneracy { .. }
            | Error::DegenerateLikelihood { .. }
            | Error::InfiniteRate { .. }
            | Error::IllConditionedPrior => true,
            Error::Block { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn in_block(self, block: &'static str) -> Error {
        Error::Block {
            block,
            source: alloc::boxed::Box::new(self),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
