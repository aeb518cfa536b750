use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("log of non-positive value {value} at index {index}")]
    NonPositiveLog { index: usize, value: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("backward requires a scalar loss of shape [1], got {0:?}")]
    NotScalar(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("no pair of samples with different labels in batch")]
    NoInterPair,

    #[error("no pair of samples sharing a label in batch")]
    NoIntraPair,

    #[error("not in the negative-entropy regime: numerator {numerator}, denominator {denominator}")]
    NotInLemmaRegime { numerator: f64, denominator: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("malformed IDX file {file} at byte {offset}: {detail}")]
    Idx { file: String, offset: usize, detail: String },

    #[error("class {0} already has a prototype")]
    ClassOverlap(usize),

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("class {0} has not been seen by the prototype bank")]
    UnseenClass(usize),

    #[error("encoder parameters changed since classifier replacement")]
    EncoderChanged,

    #[error("not enough classes: need {needed}, have {available}")]
    InsufficientClasses { needed: usize, available: usize },

    #[error("class {class} has {available} training samples, need {needed}")]
    InsufficientSamples { class: usize, needed: usize, available: usize },

    #[error("{stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn at_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
