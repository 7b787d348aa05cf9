use serde_json::{json, Value};

#[derive(Debug)]
pub enum CliError {
    /// Malformed document or unknown key.
    Parse {
        message: String,
        line: Option<usize>,
        key: Option<String>,
    },
    /// Well-formed but invalid value.
    Validation {
        field: String,
        message: String,
    },
    Core(kmwave::Error),
    Io(String),
    /// `verify` ran but some property exceeded its tolerance.
    ChecksFailed {
        failed: usize,
        total: usize,
    },
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Parse { message, .. } => write!(f, "parse error: {message}"),
            CliError::Validation { field, message } => write!(f, "invalid `{field}`: {message}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "io: {m}"),
            CliError::ChecksFailed { failed, total } => {
                write!(f, "{failed} of {total} checks out of tolerance")
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<kmwave::Error> for CliError {
    fn from(e: kmwave::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    pub fn validation(field: &str, message: impl Into<String>) -> Self {
        CliError::Validation {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Parse { .. } => "ParseError",
            CliError::Validation { .. } => "ValidationError",
            CliError::Core(e) => e.kind(),
            CliError::Io(_) => "Io",
            CliError::ChecksFailed { .. } => "ChecksFailed",
        }
    }

    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Validation { .. } => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> Value {
        let mut body = json!({ "kind": self.kind(), "message": self.to_string() });
        match self {
            CliError::Parse { line, key, .. } => {
                body["line"] = json!(line);
                body["key"] = json!(key);
            }
            CliError::Validation { field, .. } => body["field"] = json!(field),
            CliError::Core(kmwave::Error::AtMarker { index, .. }) => body["marker"] = json!(index),
            _ => {}
        }
        json!({ "error": body })
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
