//! Error classification and process exit codes.
//!
//! 0 = success, 3 = I/O failure, 4 = parse/format failure, 5 = validation
//! failure. Code 2 is reserved for clap usage errors.

use rja_core::codec::CodecError;
use rja_core::container::ContainerError;
use rja_core::fitter::FitError;
use rja_core::image::ImageError;
use rja_core::metrics::MetricsError;
use rja_core::transform::TransformError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 3;
pub const EXIT_PARSE: i32 = 4;
pub const EXIT_VALIDATION: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => EXIT_IO,
            CliError::Parse(_) => EXIT_PARSE,
            CliError::Validation(_) => EXIT_VALIDATION,
        }
    }

    pub fn io(e: impl std::fmt::Display) -> CliError {
        CliError::Io(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        match e {
            ImageError::Io(inner) => CliError::Io(inner.to_string()),
            ImageError::BadNormalization => CliError::Validation(e.to_string()),
            other => CliError::Parse(other.to_string()),
        }
    }
}

impl From<ContainerError> for CliError {
    fn from(e: ContainerError) -> Self {
        match e {
            ContainerError::QualityOutOfRange(_)
            | ContainerError::TooLarge { .. }
            | ContainerError::OversizePayload(_) => CliError::Validation(e.to_string()),
            ContainerError::Encode(_) => CliError::Validation(e.to_string()),
            other => CliError::Parse(other.to_string()),
        }
    }
}

impl From<CodecError> for CliError {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::Transform(inner) => CliError::Validation(inner.to_string()),
            CodecError::NonFinite | CodecError::OversizePayload(_) => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Parse(other.to_string()),
        }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::Codec(inner) => inner.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<TransformError> for CliError {
    fn from(e: TransformError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Validation(e.to_string())
    }
}
