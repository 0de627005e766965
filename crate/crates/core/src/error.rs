use alloc::string::String;

/// Errors reported by the certificate engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("objective is constant (L_grad_phi = 0), no finite step size")]
    ConstantObjective,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("insufficient moments: E[S^p] with p >= {required} is needed")]
    InsufficientMoments { required: f64 },

    #[error("empty dataset")]
    EmptyDataset,
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::Error::InvalidInput(alloc::format!($($arg)*))
    };
}

macro_rules! shape {
    ($($arg:tt)*) => {
        $crate::Error::ShapeMismatch(alloc::format!($($arg)*))
    };
}

pub(crate) use invalid;
pub(crate) use shape;
