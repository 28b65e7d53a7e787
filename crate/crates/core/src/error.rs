use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ragged input: row {row} has {len} samples, expected {expected}")]
    Ragged {
        row: usize,
        len: usize,
        expected: usize,
    },

    #[error("angle grid is not uniform (step {found} at index {index}, expected {expected})")]
    NonUniformAngles {
        index: usize,
        found: f64,
        expected: f64,
    },

    #[error("frequency grid is not uniform at index {0}")]
    NonUniformFrequency(usize),

    #[error("threshold {name} = {value} is outside (0, 1]")]
    Threshold { name: &'static str, value: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("path set is empty")]
    EmptyPathSet,

    #[error("log-normal fit needs positive samples, got {0}")]
    NonPositiveSample(f64),

    #[error("pose ({x:.3}, {y:.3}) lies outside the scene extent")]
    PoseOutsideScene { x: f64, y: f64 },

    #[error("parse error in {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("stage `{stage}` failed at scan {scan}: {source}")]
    Stage {
        stage: &'static str,
        scan: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    /// Attribute an error to a pipeline stage and scan index.
    pub fn at_stage(self, stage: &'static str, scan: usize) -> Self {
        Error::Stage {
            stage,
            scan,
            source: Box::new(self),
        }
    }
}

pub(crate) fn check_threshold(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(Error::Threshold { name, value })
    }
}
