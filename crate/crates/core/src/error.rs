use std::path::PathBuf;

/// Errors produced anywhere in the toolkit core.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed JSON. `offset` is the byte offset of the failure in the
    /// input, when it could be determined.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Convert a serde_json error into a `Parse` error with the byte offset
    /// recovered from the error's line/column against the original input.
    pub fn from_json(err: serde_json::Error, input: &str) -> Self {
        let offset = byte_offset(input, err.line(), err.column());
        Error::Parse {
            offset,
            message: err.to_string(),
        }
    }
}

fn byte_offset(input: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut off = 0;
    for (i, l) in input.split('\n').enumerate() {
        if i + 1 == line {
            // serde_json columns are 1-based character counts
            let col_bytes: usize = l
                .chars()
                .take(column.saturating_sub(1))
                .map(|c| c.len_utf8())
                .sum();
            return off + col_bytes;
        }
        off += l.len() + 1;
    }
    input.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_error_reports_byte_offset() {
        let input = "{\"a\": 1,\n  bad}";
        let err = serde_json::from_str::<serde_json::Value>(input).unwrap_err();
        let e = Error::from_json(err, input);
        match e {
            Error::Parse { offset, .. } => {
                assert!(offset > 8, "offset {offset} should point into line 2");
                assert!(offset <= input.len());
            }
            other => panic!("expected Parse, got {other:?}"),
        }
    }
}
