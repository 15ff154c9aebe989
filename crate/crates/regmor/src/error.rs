use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("construction error: {0}")]
    Construction(String),
    #[error("inversion failed: {0}")]
    Inversion(String),
    #[error("mapping error: {0}")]
    Mapping(String),
    #[error("interpolation error: {0}")]
    Interpolation(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),
    #[error("registration failed: {0}")]
    Registration(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Input problems (bad files, bad parameters) as opposed to numerical breakdowns.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Input(_) | Error::Io(_) | Error::Construction(_) | Error::Domain(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
