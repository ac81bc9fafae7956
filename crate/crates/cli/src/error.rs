use dermcascade::Error;
use serde::Serialize;

/// Failure reported to the user as one JSON object on stderr.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub module: &'static str,
    pub operation: String,
    pub message: String,
    pub hint: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<String>,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            module: "cli",
            operation: "resolve_config".to_owned(),
            message: message.into(),
            hint: "check the flags and the --config file; run with --help for accepted values".to_owned(),
            details: Vec::new(),
        }
    }

    pub fn invalid_config(problems: Vec<String>) -> Self {
        CliError {
            message: format!("{} configuration problem(s)", problems.len()),
            details: problems,
            ..CliError::config("")
        }
    }

    pub fn new(module: &'static str, operation: impl Into<String>, error: Error) -> Self {
        let details = match error.root() {
            Error::Backend { diagnostics, .. } => diagnostics.clone(),
            _ => Vec::new(),
        };
        CliError {
            module,
            operation: operation.into(),
            message: error.to_string(),
            hint: hint(&error).to_owned(),
            details,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.module == "cli" {
            2
        } else {
            1
        }
    }
}

fn hint(error: &Error) -> &'static str {
    match error.root() {
        Error::Schema { .. } => "fix the record named in the message; corpora need id, text and pathology fields",
        Error::Validation(_) => "check the inputs and options named in the message",
        Error::EmptyResult { .. } => "lower --threshold or supply a larger corpus",
        Error::MissingLabels(_) => "add the labels to the relation table (see the `relations` command)",
        Error::MissingTranslation(_) => "add the label to the translation table",
        Error::Backend { .. } => "check that the backend starts and speaks protocol version 1; see details",
        Error::Io { .. } => "check that the path exists and is readable or writable",
        Error::Json(_) | Error::Csv(_) | Error::Toml(_) => "check the file syntax",
        Error::Image(_) => "check that the output directory is writable",
        Error::Context { .. } => unreachable!("root() strips context"),
    }
}

pub trait Ctx<T> {
    fn ctx(self, module: &'static str, operation: &str) -> Result<T, CliError>;
}

impl<T> Ctx<T> for Result<T, Error> {
    fn ctx(self, module: &'static str, operation: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(module, operation, e))
    }
}
