use std::fmt;

/// Failures raised by the driver itself rather than the library.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Process exit code for an error: 2 usage, 3 data, 4 numeric, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Usage(_) => EXIT_USAGE,
                CliError::Data(_) => EXIT_DATA,
            };
        }
        if let Some(e) = cause.downcast_ref::<pstn_core::Error>() {
            use pstn_core::Error as E;
            return match e {
                E::Config(_) | E::State(_) => EXIT_USAGE,
                E::Data(_) | E::ParseAt { .. } | E::ParseLine { .. } | E::Io(_) => EXIT_DATA,
                E::Numeric(_) => EXIT_NUMERIC,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return EXIT_DATA;
        }
    }
    1
}
