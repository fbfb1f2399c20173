use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("index error: index {index:?} out of bounds for shape {dims:?}")]
    Index { index: Vec<usize>, dims: Vec<usize> },

    /// Malformed JSON or CSV text.
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },

    /// A well-formed document that does not match the model schema.
    #[error("schema error{}: field `{field}`: {msg}", layer_suffix(*.layer))]
    Schema {
        layer: Option<usize>,
        field: String,
        msg: String,
    },

    #[error("validation error at layer {layer}: {msg}")]
    Validation { layer: usize, msg: String },

    #[error("format error at record {record}: {msg}")]
    Format { record: usize, msg: String },

    #[error("value error at line {line}: {msg}")]
    Value { line: usize, msg: String },

    #[error("argument error: {0}")]
    Argument(String),

    #[error("plan error at layer {layer}: {msg}")]
    Plan { layer: usize, msg: String },

    #[error("inference error at layer {layer}, step {step}: {msg}")]
    Inference { layer: usize, step: usize, msg: String },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn layer_suffix(layer: Option<usize>) -> String {
    match layer {
        Some(i) => format!(" in layer {i}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn schema(layer: Option<usize>, field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Schema {
            layer,
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn validation(layer: usize, msg: impl Into<String>) -> Self {
        Error::Validation { layer, msg: msg.into() }
    }

    pub(crate) fn from_json(err: &serde_json::Error) -> Self {
        Error::Parse {
            line: err.line(),
            column: err.column(),
            msg: err.to_string(),
        }
    }
}
