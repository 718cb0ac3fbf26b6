use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use forge_core::corpus::TokenDoc;
use serde::de::DeserializeOwned;

use crate::error::{CliError, Result};

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(CliError::io(path))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(CliError::io(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::record(path, e.line(), e))
}

/// Parse one JSONL record into a validated document.
pub fn parse_doc(path: &Path, line_no: usize, line: &str) -> Result<TokenDoc> {
    let doc: TokenDoc =
        serde_json::from_str(line).map_err(|e| CliError::record(path, line_no, e))?;
    doc.validate()
        .map_err(|e| CliError::record(path, line_no, e))?;
    Ok(doc)
}

/// Streaming reader over a JSONL document file. Blank lines are skipped;
/// line numbers are 1-based.
pub struct JsonlDocs<R> {
    path: PathBuf,
    reader: R,
    line_no: usize,
    buf: String,
}

impl JsonlDocs<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        Ok(JsonlDocs::new(path, open(path)?))
    }
}

impl<R: BufRead> JsonlDocs<R> {
    pub fn new(path: &Path, reader: R) -> Self {
        JsonlDocs {
            path: path.to_path_buf(),
            reader,
            line_no: 0,
            buf: String::new(),
        }
    }
}

impl<R: BufRead> Iterator for JsonlDocs<R> {
    type Item = Result<(usize, TokenDoc)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            self.line_no += 1;
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) if self.buf.trim().is_empty() => continue,
                Ok(_) => {
                    return Some(
                        parse_doc(&self.path, self.line_no, self.buf.trim_end())
                            .map(|d| (self.line_no, d)),
                    )
                }
                Err(e) if e.kind() == io::ErrorKind::InvalidData => {
                    return Some(Err(CliError::record(
                        &self.path,
                        self.line_no,
                        "invalid UTF-8",
                    )))
                }
                Err(e) => return Some(Err(CliError::io(&self.path)(e))),
            }
        }
    }
}

/// Output files that are deleted again unless the command commits them, so a
/// failed run never leaves partial results behind.
pub struct OutputGuard {
    paths: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    pub fn new() -> Self {
        OutputGuard {
            paths: Vec::new(),
            committed: false,
        }
    }

    pub fn create(&mut self, path: &Path) -> Result<BufWriter<File>> {
        let w = create(path)?;
        self.paths.push(path.to_path_buf());
        Ok(w)
    }

    pub fn track(&mut self, path: &Path) {
        self.paths.push(path.to_path_buf());
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.paths {
                let _ = fs::remove_file(p);
            }
        }
    }
}

pub fn finish(mut w: impl Write, path: &Path) -> Result<()> {
    w.flush().map_err(CliError::io(path))
}

/// Print a JSON value to stdout followed by a newline.
pub fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Io {
        path: "<stdout>".into(),
        source: e.into(),
    })?;
    writeln!(out).map_err(CliError::io("<stdout>"))
}
