use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("column `{0}` not found in header")]
    ColumnMissing(String),
    #[error("cannot parse value at row {row}, column `{column}`")]
    ParseError { row: usize, column: String },
    #[error("no rows left after dropping missing values")]
    EmptyAfterFiltering,
    #[error("panel has a single unit; nothing to absorb")]
    SingleUnit,
    #[error("cannot read id at row {row}, column `{column}`")]
    IdParseError { row: usize, column: String },
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Core(#[from] topeff_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;
