//! Append-only segment files and the registry journal.
//!
//! Every data node appends framed records to its own segment. When the store
//! runs with a data directory, the bytes are mirrored to
//! `<dir>/node-<id>.seg`; the registry journal lives in `<dir>/registry.journal`
//! with one line per persisted version:
//!
//! ```text
//! <doc_id>\t<version>\t<kind>\t<partition>\t<fnv1a64 hex>\t<record length>
//! ```

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path as FsPath, PathBuf};

/// An append-only byte log. Existing bytes are never rewritten.
#[derive(Debug, Default)]
pub struct Segment {
    bytes: Vec<u8>,
    file: Option<File>,
}

impl Segment {
    pub fn in_memory() -> Self {
        Segment::default()
    }

    pub fn open(path: &FsPath) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Segment { bytes: Vec::new(), file: Some(file) })
    }

    /// Appends a record and returns its offset.
    pub fn append(&mut self, record: &[u8]) -> io::Result<usize> {
        let offset = self.bytes.len();
        if let Some(file) = &mut self.file {
            file.write_all(record)?;
        }
        self.bytes.extend_from_slice(record);
        Ok(offset)
    }

    pub fn read(&self, offset: usize, len: usize) -> Option<&[u8]> {
        self.bytes.get(offset..offset + len)
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }
}

pub fn segment_path(dir: &FsPath, node: u64) -> PathBuf {
    dir.join(format!("node-{node}.seg"))
}

/// Line-oriented registry journal.
#[derive(Debug, Default)]
pub struct Journal {
    lines: Vec<String>,
    file: Option<File>,
}

impl Journal {
    pub fn in_memory() -> Self {
        Journal::default()
    }

    pub fn open(dir: &FsPath) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(dir.join("registry.journal"))?;
        Ok(Journal { lines: Vec::new(), file: Some(file) })
    }

    pub fn append(&mut self, line: String) -> io::Result<()> {
        if let Some(file) = &mut self.file {
            writeln!(file, "{line}")?;
        }
        self.lines.push(line);
        Ok(())
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }
}
