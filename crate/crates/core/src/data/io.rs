//! JSON-lines dataset files.
//!
//! Line 1 is a [`DatasetHeader`]; every following non-blank line is one
//! [`FeatureRecord`]. Floats are written in shortest round-trip form, so a
//! save/load cycle is bit-exact. Paths ending in `.gz` are gzip-compressed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{DatasetHeader, FeatureRecord};
use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "deepmm-features";
pub const FORMAT_VERSION: u32 = 1;

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn open(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader: Box<dyn Read> = if is_gzip(path) {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    Ok(Box::new(BufReader::new(reader)))
}

/// Streams and validates a dataset file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<FeatureRecord>)> {
    let path = path.as_ref();
    let reader = open(path)?;
    let mut lines = reader.lines().enumerate();

    let header: DatasetHeader = loop {
        match lines.next() {
            None => return Err(Error::Parse { line: 1, message: "missing header line".into() }),
            Some((i, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: format!("bad header: {e}"),
                })?;
            }
        }
    };
    header.validate()?;

    let mut records = Vec::with_capacity(header.records);
    let mut truncated = 0usize;
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: FeatureRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.truncate_to_caps() {
            truncated += 1;
        }
        rec.validate(&header)?;
        records.push(rec);
    }
    if records.len() != header.records {
        return Err(Error::data(
            "<header>",
            format!("header announces {} records, file has {}", header.records, records.len()),
        ));
    }
    if truncated > 0 {
        log::warn!("{truncated} records exceeded the object/word caps and were truncated");
    }
    Ok((header, records))
}

/// Writes `header` (with its record count replaced) and `records` to `out`.
pub fn write_dataset<W: Write>(mut out: W, header: &DatasetHeader, records: &[FeatureRecord]) -> std::io::Result<()> {
    let header = DatasetHeader {
        records: records.len(),
        ..header.clone()
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for rec in records {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_dataset(path: impl AsRef<Path>, header: &DatasetHeader, records: &[FeatureRecord]) -> Result<()> {
    let path = path.as_ref();
    for rec in records {
        rec.validate(header)?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let res = if is_gzip(path) {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        write_dataset(&mut enc, header, records).and_then(|_| enc.finish().map(|_| ()))
    } else {
        write_dataset(BufWriter::new(file), header, records)
    };
    res.map_err(|e| Error::io(path, e))
}
