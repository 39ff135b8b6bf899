use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug)]
pub enum CliError {
    Io { path: PathBuf, source: std::io::Error },
    /// File does not start with the expected magic number.
    BadMagic { path: PathBuf, expected: u32, got: u32 },
    /// File ends before the header-declared payload.
    Truncated { path: PathBuf, needed: usize, got: usize },
    /// Image and label files disagree on the example count.
    CountMismatch { images: usize, labels: usize },
    /// Checkpoint written by an incompatible format version.
    VersionMismatch { expected: u32, got: u32 },
    /// Checkpoint does not carry the expected tensor inventory.
    TensorCountMismatch { expected: usize, got: usize },
    MissingTensor(String),
    Config(String),
    Core(smash_core::Error),
    Other(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::BadMagic { path, expected, got } => {
                write!(f, "{}: bad magic {got:#010x}, expected {expected:#010x}", path.display())
            }
            CliError::Truncated { path, needed, got } => {
                write!(f, "{}: truncated, needed {needed} bytes but only {got} remain", path.display())
            }
            CliError::CountMismatch { images, labels } => {
                write!(f, "{images} images but {labels} labels")
            }
            CliError::VersionMismatch { expected, got } => {
                write!(f, "checkpoint format version {got}, this build reads {expected}")
            }
            CliError::TensorCountMismatch { expected, got } => {
                write!(f, "checkpoint carries {got} tensors, expected {expected}")
            }
            CliError::MissingTensor(name) => write!(f, "checkpoint is missing tensor {name}"),
            CliError::Config(msg) => write!(f, "config: {msg}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Other(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<smash_core::Error> for CliError {
    fn from(e: smash_core::Error) -> Self {
        CliError::Core(e)
    }
}

pub fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
