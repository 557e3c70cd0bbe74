use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Core(#[from] faircert_core::Error),

    #[error("value {value} does not fit the fixed-point encoding (|v| must stay below 2^{limit_bits})")]
    EncodingOverflow { value: f64, limit_bits: u32 },

    #[error("{0}")]
    Schema(String),

    #[error("prover: {0}")]
    Prover(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<serde_json::Error> for ProtocolError {
    fn from(e: serde_json::Error) -> Self {
        ProtocolError::Schema(format!("line {}, column {}: {e}", e.line(), e.column()))
    }
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

pub(crate) fn read_file(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| ProtocolError::Io(format!("{}: {e}", path.display())))
}

pub(crate) fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| ProtocolError::Io(format!("{}: {e}", path.display())))
}
