use std::io;

use thiserror::Error;

/// Errors raised anywhere in the radiomics / survival pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// The region of interest has no foreground voxels (e.g. a tumour eroded away).
    #[error("empty region of interest{}", context_suffix(.0))]
    EmptyRoi(Option<String>),

    /// No neighbouring voxel pairs exist inside the ROI in any direction.
    #[error("degenerate texture: no in-ROI neighbour pairs{}", context_suffix(.0))]
    DegenerateTexture(Option<String>),

    #[error("no events observed: partial likelihood is empty")]
    NoEvents,

    #[error("concordance index undefined: no comparable pairs")]
    UndefinedCindex,

    #[error("fold error: {0}")]
    Fold(String),

    #[error("cohort error: {0}")]
    Cohort(String),
}

fn context_suffix(ctx: &Option<String>) -> String {
    match ctx {
        Some(c) => format!(" ({c})"),
        None => String::new(),
    }
}

impl Error {
    /// Attach patient/modality context to ROI-level extraction failures.
    pub fn with_context(self, ctx: impl Into<String>) -> Self {
        match self {
            Error::EmptyRoi(_) => Error::EmptyRoi(Some(ctx.into())),
            Error::DegenerateTexture(_) => Error::DegenerateTexture(Some(ctx.into())),
            other => other,
        }
    }

    /// Short machine-friendly tag used in exclusion reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "IOError",
            Error::Format(_) => "FormatError",
            Error::Data(_) => "DataError",
            Error::Argument(_) => "ArgumentError",
            Error::EmptyRoi(_) => "EmptyRoiError",
            Error::DegenerateTexture(_) => "DegenerateTextureError",
            Error::NoEvents => "NoEventsError",
            Error::UndefinedCindex => "UndefinedCindexError",
            Error::Fold(_) => "FoldError",
            Error::Cohort(_) => "CohortError",
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if !e.is_io_error() {
            return Error::Format(format!("csv: {e}"));
        }
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!("checked is_io_error"),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(format!("json: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
