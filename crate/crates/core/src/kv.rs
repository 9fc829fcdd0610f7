//! `key = value` text used by config files and the checkpoint's embedded config.

use std::fmt::Display;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvError {
    pub line: usize,
    pub message: String,
}

impl Display for KvError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Parses lines of `key = value`. Blank lines and lines starting with `#` are skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, KvError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(KvError {
                line: i + 1,
                message: format!("expected `key = value`, got {line:?}"),
            });
        };
        let key = k.trim();
        if key.is_empty() {
            return Err(KvError {
                line: i + 1,
                message: "empty key".into(),
            });
        }
        if out.iter().any(|(existing, _)| existing == key) {
            return Err(KvError {
                line: i + 1,
                message: format!("duplicate key {key}"),
            });
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn line(key: &str, value: impl Display) -> String {
    format!("{key} = {value}\n")
}
