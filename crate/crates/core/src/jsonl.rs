//! Newline-delimited JSON streams, one record per line.
//!
//! Writing uses the compact `serde_json` encoding, so a record written,
//! read back and written again yields identical bytes. Blank lines are
//! ignored on read.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Open { path: String, source: io::Error },
    #[error("read error at line {line}: {source}")]
    Io { line: usize, source: io::Error },
    #[error("line {line}: {message}{}", field.as_ref().map(|f| format!(" (field `{f}`)")).unwrap_or_default())]
    Parse { line: usize, field: Option<String>, message: String },
    #[error("write error: {0}")]
    Write(#[source] io::Error),
}

impl JsonlError {
    pub fn line(&self) -> Option<usize> {
        match self {
            JsonlError::Io { line, .. } | JsonlError::Parse { line, .. } => Some(*line),
            _ => None,
        }
    }

    pub fn field(&self) -> Option<&str> {
        match self {
            JsonlError::Parse { field, .. } => field.as_deref(),
            _ => None,
        }
    }
}

/// Parses one line; `line` is 1-based and only used for error reporting.
pub fn parse_line<T: DeserializeOwned>(text: &str, line: usize) -> Result<T, JsonlError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        let message = inner.to_string();
        let field = missing_field(&message).map(|f| if path == "." { f } else { format!("{path}.{f}") });
        let field = field.or_else(|| (path != ".").then_some(path));
        JsonlError::Parse { line, field, message }
    })
}

fn missing_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next().map(str::to_owned)
}

pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line.map_err(|source| JsonlError::Io { line: line_no, source })?;
        if text.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&text, line_no)?);
    }
    Ok(out)
}

pub fn read_jsonl_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let file = File::open(path).map_err(|source| JsonlError::Open { path: path.display().to_string(), source })?;
    read_jsonl(BufReader::new(file))
}

pub fn write_jsonl<'a, T, W, I>(writer: W, records: I) -> Result<(), JsonlError>
where
    T: Serialize + 'a,
    W: Write,
    I: IntoIterator<Item = &'a T>,
{
    let mut writer = writer;
    for record in records {
        serde_json::to_writer(&mut writer, record).map_err(|e| JsonlError::Write(e.into()))?;
        writer.write_all(b"\n").map_err(JsonlError::Write)?;
    }
    writer.flush().map_err(JsonlError::Write)
}

pub fn write_jsonl_file<'a, T, I>(path: &Path, records: I) -> Result<(), JsonlError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let file = File::create(path).map_err(|source| JsonlError::Open { path: path.display().to_string(), source })?;
    write_jsonl(BufWriter::new(file), records)
}

pub fn to_jsonl_string<'a, T, I>(records: I) -> String
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}
