use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("tensor of shape {shape:?} cannot hold {len} values")]
    TensorSize { shape: Vec<usize>, len: usize },

    #[error("gradient requested of a non-scalar output with shape {0:?}")]
    NonScalar(Vec<usize>),

    #[error("create_graph requested on a graph built without higher-order retention")]
    NotRetained,

    #[error("unknown graph node {0}")]
    UnknownNode(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate bounding box {w}x{h}")]
    DegenerateBox { w: f64, h: f64 },

    #[error("need {need} positive and {need} negative samples, drew {pos} positive and {neg} negative")]
    InsufficientSamples { pos: usize, neg: usize, need: usize },

    #[error("bounding-box regressor has not been trained")]
    Untrained,

    #[error("singular normal equations in ridge regression")]
    Singular,

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
