use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("generation {gen} exceeds the supported depth {max}")]
    DepthExceeded { gen: u32, max: u32 },
    #[error("enumeration needs {needed} generations, cap is {cap}")]
    CapExceeded { needed: u32, cap: u32 },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("evaluation outside the upper half-space at height {0}")]
    OutsideDomain(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
