//! Line-oriented JSON record streaming.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::records::Record;

/// What to do with a line that fails to parse or validate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OnError {
    #[default]
    FailFast,
    /// Drop the line, count it, and keep its diagnostic.
    Skip,
}

/// Single-pass iterator over validated records; holds one line at a time.
pub struct RecordStream<R, T> {
    reader: BufReader<R>,
    buf: String,
    line: usize,
    policy: OnError,
    skipped: Vec<Error>,
    skipped_total: usize,
    failed: bool,
    _marker: std::marker::PhantomData<T>,
}

const KEPT_DIAGNOSTICS: usize = 100;

impl<R: Read, T: Record> RecordStream<R, T> {
    pub fn new(reader: R, policy: OnError) -> Self {
        RecordStream {
            reader: BufReader::with_capacity(1 << 16, reader),
            buf: String::new(),
            line: 0,
            policy,
            skipped: Vec::new(),
            skipped_total: 0,
            failed: false,
            _marker: std::marker::PhantomData,
        }
    }

    /// Lines dropped under [`OnError::Skip`].
    pub fn skipped_count(&self) -> usize {
        self.skipped_total
    }

    /// The first diagnostics of dropped lines.
    pub fn diagnostics(&self) -> &[Error] {
        &self.skipped
    }

    fn parse_line(&self) -> Result<T> {
        let rec: T = serde_json::from_str(self.buf.trim_end()).map_err(|e| Error::Record {
            line: self.line,
            message: e.to_string(),
        })?;
        rec.check().map_err(|message| Error::Record {
            line: self.line,
            message,
        })?;
        Ok(rec)
    }
}

impl<R: Read, T: Record> Iterator for RecordStream<R, T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e.into()));
                }
            }
            self.line += 1;
            if self.buf.trim().is_empty() {
                continue;
            }
            match self.parse_line() {
                Ok(rec) => return Some(Ok(rec)),
                Err(e) => match self.policy {
                    OnError::FailFast => {
                        self.failed = true;
                        return Some(Err(e));
                    }
                    OnError::Skip => {
                        self.skipped_total += 1;
                        if self.skipped.len() < KEPT_DIAGNOSTICS {
                            self.skipped.push(e);
                        }
                    }
                },
            }
        }
    }
}

/// Opens `path` as a record stream.
pub fn stream_records<T: Record>(
    path: impl AsRef<Path>,
    policy: OnError,
) -> Result<RecordStream<File, T>> {
    Ok(RecordStream::new(File::open(path)?, policy))
}

/// Writes one compact JSON object per line.
pub fn write_jsonl<W: Write, T: Serialize>(
    mut out: W,
    records: impl IntoIterator<Item = T>,
) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, &r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
