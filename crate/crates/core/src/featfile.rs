//! Binary feature files.
//!
//! Layout: 8-byte magic `SCATFEAT`, `u32` version, four `u32` dimensions
//! `(count, channels, height, width)`, then `count·channels·height·width`
//! row-major `f32` values. All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{ensure, Error, Result};
use crate::scattering::PathDescriptor;

pub const MAGIC: &[u8; 8] = b"SCATFEAT";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 16;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    /// `(count, channels, height, width)`.
    pub dims: [usize; 4],
    pub data: Vec<f32>,
}

impl FeatureFile {
    pub fn row_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let n = self.row_len();
        &self.data[i * n..(i + 1) * n]
    }
}

/// Streams rows into a feature file whose row count is fixed up front.
pub struct FeatureWriter {
    out: BufWriter<File>,
    path: PathBuf,
    dims: [usize; 4],
    written: usize,
}

impl FeatureWriter {
    pub fn create(path: &Path, dims: [usize; 4]) -> Result<Self> {
        for d in dims {
            ensure!(d <= u32::MAX as usize, "dimension {d} does not fit the header");
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut header = Vec::with_capacity(HEADER_LEN);
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&VERSION.to_le_bytes());
        for d in dims {
            header.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.write_all(&header).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out,
            path: path.to_path_buf(),
            dims,
            written: 0,
        })
    }

    /// Appends one `channels·height·width` row, narrowing to `f32`.
    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        let n = self.dims[1] * self.dims[2] * self.dims[3];
        ensure!(row.len() == n, "row has {} values, expected {n}", row.len());
        ensure!(self.written < self.dims[0], "more than {} rows written", self.dims[0]);
        let mut buf = Vec::with_capacity(4 * n);
        for v in row {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        self.out.write_all(&buf).map_err(|e| Error::io(&self.path, e))?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        ensure!(
            self.written == self.dims[0],
            "feature file declares {} rows but {} were written",
            self.dims[0],
            self.written
        );
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_features(path: &Path, dims: [usize; 4], data: &[f64]) -> Result<()> {
    let n = dims[1] * dims[2] * dims[3];
    ensure!(data.len() == dims[0] * n, "data length {} does not match dims {dims:?}", data.len());
    let mut w = FeatureWriter::create(path, dims)?;
    if n > 0 {
        for row in data.chunks(n) {
            w.push_row(row)?;
        }
    }
    w.finish()
}

pub fn read_features(path: &Path) -> Result<FeatureFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::Format(format!("{} is not a feature file", path.display())));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(8);
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let dims = [word(12), word(16), word(20), word(24)].map(|d| d as usize);
    let count = dims.iter().product::<usize>();
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * count {
        return Err(Error::Format(format!(
            "{}: expected {} data bytes, found {}",
            path.display(),
            4 * count,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(FeatureFile { dims, data })
}

/// Sidecar listing one path descriptor per channel: `plane order j1 t1 j2 t2`.
pub fn write_path_manifest(path: &Path, paths: &[PathDescriptor]) -> Result<()> {
    let mut text = String::from("# channel plane order j1 theta1 j2 theta2\n");
    for (c, p) in paths.iter().enumerate() {
        text.push_str(&format!("{c} {} {}\n", p.plane, p.path));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        let data: Vec<f64> = (0..2 * 3 * 2 * 2).map(|v| v as f64 * 0.5).collect();
        write_features(&p, [2, 3, 2, 2], &data).unwrap();
        let f = read_features(&p).unwrap();
        assert_eq!(f.dims, [2, 3, 2, 2]);
        assert_eq!(f.row(1)[0], 6.0);
        let raw = std::fs::read(&p).unwrap();
        assert_eq!(&raw[..8], b"SCATFEAT");
        assert_eq!(raw.len(), HEADER_LEN + 4 * data.len());
    }

    #[test]
    fn wrong_version_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        write_features(&p, [1, 2, 1, 1], &[1.0, 2.0]).unwrap();
        let mut raw = std::fs::read(&p).unwrap();
        raw.pop();
        std::fs::write(&p, &raw).unwrap();
        assert!(matches!(read_features(&p), Err(Error::Format(_))));
        raw[8] = 9;
        std::fs::write(&p, &raw).unwrap();
        assert!(matches!(read_features(&p), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn writer_counts_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = FeatureWriter::create(&dir.path().join("f.bin"), [2, 1, 1, 1]).unwrap();
        w.push_row(&[1.0]).unwrap();
        assert!(w.finish().is_err());
    }
}
