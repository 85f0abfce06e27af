use thiserror::Error;

pub type Result<T, E = SlsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SlsError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("insufficient data: need more than {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate pilot: smallest Gram eigenvalue {smallest_eigenvalue:e} (largest {largest_eigenvalue:e})")]
    DegeneratePilot {
        smallest_eigenvalue: f64,
        largest_eigenvalue: f64,
    },

    #[error("sampler safeguard abort: block starting at {start} exceeded {max_block_len} buffered samples")]
    SafeguardAbort { start: u64, max_block_len: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl SlsError {
    pub fn config(msg: impl Into<String>) -> Self {
        SlsError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        SlsError::Data(msg.into())
    }

    /// Process exit code for the CLI: 2 configuration, 3 data, 4 safeguard abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            SlsError::Config(_) => 2,
            SlsError::Data(_)
            | SlsError::InsufficientData { .. }
            | SlsError::DegeneratePilot { .. }
            | SlsError::Io(_) => 3,
            SlsError::SafeguardAbort { .. } => 4,
        }
    }

    /// Short machine-readable kind tag.
    pub fn kind(&self) -> &'static str {
        match self {
            SlsError::Config(_) => "config",
            SlsError::Data(_) => "data",
            SlsError::InsufficientData { .. } => "insufficient_data",
            SlsError::DegeneratePilot { .. } => "degenerate_pilot",
            SlsError::SafeguardAbort { .. } => "safeguard_abort",
            SlsError::Io(_) => "io",
        }
    }
}
