use std::io;

use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported codec: {0}")]
    UnsupportedCodec(String),

    #[error("input too short: {0}")]
    TooShort(String),

    #[error("invalid spec: {0}")]
    Spec(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("state error: {0}")]
    State(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("provenance error: {0}")]
    Provenance(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("degenerate fusion: {0}")]
    DegenerateFusion(String),

    #[error("corrupt file: {0}")]
    Corruption(String),
}

pub type Result<T> = std::result::Result<T, Error>;
