use thiserror::Error;

use crate::geometry::GeometryError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("malformed OSM XML: {0}")]
    Xml(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("query outside grid: {0}")]
    OutOfRange(String),
    #[error("elevation grid has no data near ({x:.3}, {y:.3})")]
    NoData { x: f64, y: f64 },
    #[error("prior is empty: no footprints and no usable terrain")]
    EmptyPrior,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("{module}: {source}")]
    Module {
        module: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Tags an error with the pipeline stage that produced it.
    pub fn in_module(self, module: &'static str) -> Error {
        Error::Module {
            module,
            source: Box::new(self),
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn in_module(self, module: &'static str) -> Result<T>;
}

impl<T, E: Into<Error>> ResultExt<T> for std::result::Result<T, E> {
    fn in_module(self, module: &'static str) -> Result<T> {
        self.map_err(|e| e.into().in_module(module))
    }
}
