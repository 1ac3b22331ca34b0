use serde::Serialize;
use wassercalc_core::Error as CoreError;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_NOT_STATIONARY: i32 = 4;

/// Diagnostic written to stderr as one JSON object.
#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(skip)]
    pub exit: i32,
}

impl CliError {
    pub fn input(code: &str, field: &str, message: impl Into<String>) -> Self {
        CliError { code: code.into(), message: message.into(), field: Some(field.into()), exit: EXIT_INPUT }
    }

    /// Library error; input-type failures keep exit 2 and name `field`.
    pub fn core(e: CoreError, field: Option<&str>) -> Self {
        let exit = if e.is_input_error() { EXIT_INPUT } else { EXIT_SOLVER };
        CliError { code: e.code().into(), message: e.to_string(), field: field.map(String::from), exit }
    }

    pub fn solver(e: CoreError) -> Self {
        Self::core(e, None)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
