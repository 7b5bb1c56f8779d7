use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("non-finite value in {tensor} at flat index {index}")]
    NonFinite { tensor: &'static str, index: usize },
    #[error("insufficient statistics for train-mode batch norm: {count} value(s) per channel")]
    InsufficientStatistics { count: usize },
    #[error("unknown class id {class_id} (class count {num_classes})")]
    UnknownClass { class_id: usize, num_classes: usize },
    #[error("detection score {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },
}

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        expected: impl core::fmt::Debug,
        actual: impl core::fmt::Debug,
    ) -> Self {
        Error::Shape {
            op,
            expected: alloc::format!("{expected:?}"),
            actual: alloc::format!("{actual:?}"),
        }
    }
}
