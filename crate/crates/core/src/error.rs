use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("{name} = {value} is outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("no input node")]
    NoInputNode,

    #[error("more than one input node: {0:?}")]
    MultipleInputs(Vec<String>),

    #[error("duplicate layer name '{0}'")]
    DuplicateName(String),

    #[error("layer '{layer}' references unknown predecessor '{input}'")]
    UnknownPredecessor { layer: String, input: String },

    #[error("cycle detected through layer '{0}'")]
    Cycle(String),

    #[error("stride mismatch at concat '{layer}': inputs have strides {strides:?}")]
    StrideMismatch { layer: String, strides: Vec<u32> },

    #[error("feature size mismatch at concat '{layer}': inputs have sizes {sizes:?}")]
    FeatureSizeMismatch {
        layer: String,
        sizes: Vec<(u32, u32)>,
    },

    #[error("layer '{layer}': {message}")]
    InvalidLayer { layer: String, message: String },

    #[error("unknown layer '{0}'")]
    UnknownLayer(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid prior layout: {0}")]
    InvalidLayout(String),

    #[error("prediction row count {rows} does not match prior count {priors}")]
    RowCountMismatch { rows: usize, priors: usize },

    #[error("unknown state label '{0}'")]
    UnknownState(String),

    #[error("detections from mixed images: '{0}' and '{1}'")]
    MixedImages(String, String),

    #[error("detection references unknown image '{0}'")]
    UnknownImage(String),

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
