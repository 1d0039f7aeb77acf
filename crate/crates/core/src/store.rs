//! Append-only JSON Lines journals backing every stateful module.
//!
//! A data directory holds a `FORMAT` tag file plus one journal per module.
//! State is rebuilt on open by replaying each journal front to back.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub const FORMAT_TAG: &str = "agentdns-store/1";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt journal {path} at line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unsupported store format `{found}` in {path} (expected `{FORMAT_TAG}`)")]
    Format { path: PathBuf, found: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Creates the data directory if needed and checks its format tag.
pub fn prepare_data_dir(dir: &Path) -> Result<(), StoreError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tag = dir.join("FORMAT");
    match fs::read_to_string(&tag) {
        Ok(found) => {
            let found = found.trim();
            if found != FORMAT_TAG {
                return Err(StoreError::Format {
                    path: tag,
                    found: found.to_string(),
                });
            }
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            fs::write(&tag, format!("{FORMAT_TAG}\n")).map_err(io_err(&tag))?;
        }
        Err(e) => return Err(io_err(&tag)(e)),
    }
    Ok(())
}

/// One append-only journal of serialized events. `in_memory` journals drop writes.
pub struct Journal<E> {
    path: Option<PathBuf>,
    writer: Mutex<Option<BufWriter<File>>>,
    _event: PhantomData<fn(E)>,
}

impl<E: Serialize + DeserializeOwned> Journal<E> {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            writer: Mutex::new(None),
            _event: PhantomData,
        }
    }

    /// Opens (or creates) `path`, returning the journal and every event already in it.
    ///
    /// A torn final line (crash mid-write) is dropped and truncated away; corruption
    /// anywhere else is an error.
    pub fn open(path: impl Into<PathBuf>) -> Result<(Self, Vec<E>), StoreError> {
        let path = path.into();
        let mut events = Vec::new();
        let mut good_len: u64 = 0;
        if path.exists() {
            let file = File::open(&path).map_err(io_err(&path))?;
            let lines: Vec<String> = BufReader::new(file)
                .split(b'\n')
                .map(|l| l.map(|b| String::from_utf8_lossy(&b).into_owned()))
                .collect::<Result<_, _>>()
                .map_err(io_err(&path))?;
            let n = lines.len();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    good_len += line.len() as u64 + 1;
                    continue;
                }
                match serde_json::from_str::<E>(line) {
                    Ok(ev) => {
                        events.push(ev);
                        good_len += line.len() as u64 + 1;
                    }
                    Err(e) if i + 1 == n => {
                        tracing::warn!(path = %path.display(), error = %e, "dropping torn journal tail");
                    }
                    Err(e) => {
                        return Err(StoreError::Corrupt {
                            path,
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let current = file.metadata().map_err(io_err(&path))?.len();
        if current > good_len {
            file.set_len(good_len).map_err(io_err(&path))?;
        }
        Ok((
            Self {
                writer: Mutex::new(Some(BufWriter::new(file))),
                path: Some(path),
                _event: PhantomData,
            },
            events,
        ))
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Appends one event and flushes it to the OS before returning.
    pub fn append(&self, event: &E) -> Result<(), StoreError> {
        let mut guard = self.writer.lock();
        let Some(w) = guard.as_mut() else {
            return Ok(());
        };
        let path = self.path.as_deref().unwrap_or(Path::new(""));
        let mut line = serde_json::to_vec(event).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        line.push(b'\n');
        w.write_all(&line).map_err(io_err(path))?;
        w.flush().map_err(io_err(path))
    }

    /// Flushes and fsyncs.
    pub fn sync(&self) -> Result<(), StoreError> {
        let mut guard = self.writer.lock();
        if let Some(w) = guard.as_mut() {
            let path = self.path.as_deref().unwrap_or(Path::new(""));
            w.flush().map_err(io_err(path))?;
            w.get_ref().sync_all().map_err(io_err(path))?;
        }
        Ok(())
    }
}
