//! On-disk formats: fvecs/ivecs vector files, local-feature manifests, and
//! packed binary code files.
//!
//! ## fvecs / ivecs
//!
//! Each record is `[dim: i32 LE][payload: dim x 4 bytes LE]`, with `f32`
//! payload for fvecs and `i32` for ivecs. Every record in a file must declare
//! the same dimension, so a well-formed file is exactly
//! `count * (4 + 4 * dim)` bytes long. Vectors are columns of the in-memory
//! matrix, in file order. Disk payloads are 32-bit; everything in memory is
//! `f64`.
//!
//! ## Manifest
//!
//! A plain text file grouping the columns of a backing fvecs file into
//! per-image local-feature sets:
//!
//! ```text
//! D m
//! start n_i     (one line per image, m lines)
//! ```
//!
//! Offsets must start at 0, be contiguous, and cover the backing file
//! exactly; every `n_i` is at least 1.
//!
//! ## Packed code file
//!
//! `[magic "AGH1"][code_length: u32 LE][count: u64 LE][payload]` where each
//! code occupies `ceil(L/8)` bytes. Bit `k` of a code is stored at bit
//! `k mod 8` of byte `k / 8` (LSB first), with `+1 -> 1` and `-1 -> 0`;
//! unused high bits of the final byte are zero.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::codes::BinaryCodes;
use crate::error::{Error, Result};

/// Magic bytes of a packed code file.
pub const CODE_FILE_MAGIC: [u8; 4] = *b"AGH1";

/// Read an fvecs file into a `D x m` matrix (column `j` is vector `j`).
///
/// An empty file yields a 0x0 matrix.
pub fn read_fvecs(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path.as_ref())?;
    let raw = parse_records(&bytes, path.as_ref())?;
    let (dim, count, records) = raw;
    let mut data = Vec::with_capacity(dim * count);
    for rec in records {
        for chunk in rec.chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            data.push(v as f64);
        }
    }
    Ok(DMatrix::from_vec(dim, count, data))
}

/// Write a matrix as fvecs, one record per column.
///
/// Values must be finite and representable as `f32`; overflow to infinity is
/// an error.
pub fn write_fvecs(matrix: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::with_capacity(matrix.ncols() * (4 + 4 * matrix.nrows()));
    let dim = matrix.nrows() as i32;
    for (j, col) in matrix.column_iter().enumerate() {
        bytes.extend_from_slice(&dim.to_le_bytes());
        for (i, &v) in col.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Invalid(format!(
                    "entry ({i}, {j}) is non-finite: {v}"
                )));
            }
            let f = v as f32;
            if !f.is_finite() {
                return Err(Error::Invalid(format!(
                    "entry ({i}, {j}) = {v} is not representable as a 32-bit float"
                )));
            }
            bytes.extend_from_slice(&f.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Read an ivecs file into a `D x m` integer matrix.
pub fn read_ivecs(path: impl AsRef<Path>) -> Result<DMatrix<i32>> {
    let bytes = fs::read(path.as_ref())?;
    let (dim, count, records) = parse_records(&bytes, path.as_ref())?;
    let mut data = Vec::with_capacity(dim * count);
    for rec in records {
        for chunk in rec.chunks_exact(4) {
            data.push(i32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
    }
    Ok(DMatrix::from_vec(dim, count, data))
}

/// Write an integer matrix as ivecs, one record per column.
pub fn write_ivecs(matrix: &DMatrix<i32>, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::with_capacity(matrix.ncols() * (4 + 4 * matrix.nrows()));
    let dim = matrix.nrows() as i32;
    for col in matrix.column_iter() {
        bytes.extend_from_slice(&dim.to_le_bytes());
        for &v in col.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Split a 4-bytes-per-element record stream, validating the shared
/// dimension and overall length.
fn parse_records<'a>(bytes: &'a [u8], path: &Path) -> Result<(usize, usize, Vec<&'a [u8]>)> {
    let name = path.display();
    if bytes.is_empty() {
        return Ok((0, 0, Vec::new()));
    }
    if bytes.len() < 4 {
        return Err(Error::Format(format!("{name}: truncated record header")));
    }
    let dim = i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if dim <= 0 {
        return Err(Error::Format(format!(
            "{name}: declared dimension {dim} is not positive"
        )));
    }
    let dim = dim as usize;
    let record = 4 + 4 * dim;
    if !bytes.len().is_multiple_of(record) {
        return Err(Error::Format(format!(
            "{name}: file length {} is not a multiple of the record size {record}",
            bytes.len()
        )));
    }
    let count = bytes.len() / record;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * record;
        let d = i32::from_le_bytes([
            bytes[start],
            bytes[start + 1],
            bytes[start + 2],
            bytes[start + 3],
        ]);
        if d != dim as i32 {
            return Err(Error::Format(format!(
                "{name}: record {i} declares dimension {d}, expected {dim}"
            )));
        }
        records.push(&bytes[start + 4..start + record]);
    }
    Ok((dim, count, records))
}

/// Bytes per packed code for a given code length.
pub fn packed_code_bytes(code_length: usize) -> usize {
    code_length.div_ceil(8)
}

/// Pack a code matrix into `count * ceil(L/8)` bytes, `+1 -> 1`, LSB first.
pub fn pack_codes(codes: &BinaryCodes) -> Vec<u8> {
    let stride = packed_code_bytes(codes.code_length());
    let mut payload = vec![0u8; stride * codes.count()];
    for (j, col) in codes.as_matrix().column_iter().enumerate() {
        let base = j * stride;
        for (k, &v) in col.iter().enumerate() {
            if v > 0.0 {
                payload[base + k / 8] |= 1 << (k % 8);
            }
        }
    }
    payload
}

/// Inverse of [`pack_codes`].
pub fn unpack_codes(payload: &[u8], code_length: usize, count: usize) -> Result<BinaryCodes> {
    if code_length == 0 {
        return Err(Error::Invalid("code length must be positive".into()));
    }
    let stride = packed_code_bytes(code_length);
    if payload.len() != stride * count {
        return Err(Error::Format(format!(
            "payload is {} bytes, expected {} for {count} codes of length {code_length}",
            payload.len(),
            stride * count
        )));
    }
    // Unused high bits must be clear.
    if !code_length.is_multiple_of(8) {
        let mask = !0u8 << (code_length % 8);
        for j in 0..count {
            let last = payload[j * stride + stride - 1];
            if last & mask != 0 {
                return Err(Error::Format(format!(
                    "code {j} has padding bits set in its final byte"
                )));
            }
        }
    }
    let mat = DMatrix::from_fn(code_length, count, |k, j| {
        if payload[j * stride + k / 8] >> (k % 8) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    });
    BinaryCodes::from_matrix(mat)
}

/// Write codes as a packed code file (header plus payload).
pub fn write_code_file(codes: &BinaryCodes, path: impl AsRef<Path>) -> Result<()> {
    let payload = pack_codes(codes);
    let mut bytes = Vec::with_capacity(16 + payload.len());
    bytes.extend_from_slice(&CODE_FILE_MAGIC);
    bytes.extend_from_slice(&(codes.code_length() as u32).to_le_bytes());
    bytes.extend_from_slice(&(codes.count() as u64).to_le_bytes());
    bytes.extend_from_slice(&payload);
    fs::write(path, bytes)?;
    Ok(())
}

/// Read a packed code file.
pub fn read_code_file(path: impl AsRef<Path>) -> Result<BinaryCodes> {
    let name = path.as_ref().display().to_string();
    let bytes = fs::read(path.as_ref())?;
    if bytes.len() < 16 {
        return Err(Error::Format(format!("{name}: truncated header")));
    }
    if bytes[0..4] != CODE_FILE_MAGIC {
        return Err(Error::Format(format!("{name}: bad magic bytes")));
    }
    let code_length = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    unpack_codes(&bytes[16..], code_length, count)
        .map_err(|e| Error::Format(format!("{name}: {e}")))
}

/// Grouping of a backing fvecs file's columns into per-image feature sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    /// Feature dimension shared by all images.
    pub dim: usize,
    /// `(start_column, column_count)` per image, contiguous from 0.
    pub entries: Vec<(usize, usize)>,
}

impl Manifest {
    /// Build a manifest from per-image counts, laying images out contiguously.
    pub fn from_counts(dim: usize, counts: &[usize]) -> Result<Self> {
        let mut entries = Vec::with_capacity(counts.len());
        let mut start = 0;
        for &n in counts {
            entries.push((start, n));
            start += n;
        }
        let manifest = Self { dim, entries };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Total number of backing vectors the manifest covers.
    pub fn total(&self) -> usize {
        self.entries.iter().map(|&(_, n)| n).sum()
    }

    pub fn image_count(&self) -> usize {
        self.entries.len()
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Format("manifest dimension must be positive".into()));
        }
        if self.entries.is_empty() {
            return Err(Error::Format("manifest lists no images".into()));
        }
        let mut expected = 0;
        for (i, &(start, n)) in self.entries.iter().enumerate() {
            if n == 0 {
                return Err(Error::Format(format!("image {i} has zero local features")));
            }
            if start != expected {
                return Err(Error::Format(format!(
                    "image {i} starts at {start}, expected {expected} (offsets must be contiguous)"
                )));
            }
            expected = start + n;
        }
        Ok(())
    }
}

/// Parse a manifest file.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let name = path.as_ref().display().to_string();
    let text = fs::read_to_string(path.as_ref())?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{name}: empty manifest")))?;
    let mut parts = header.split_whitespace();
    let dim: usize = parse_field(parts.next(), &name, "dimension")?;
    let image_count: usize = parse_field(parts.next(), &name, "image count")?;
    if parts.next().is_some() {
        return Err(Error::Format(format!("{name}: trailing tokens in header")));
    }
    let mut entries = Vec::with_capacity(image_count);
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let start = parse_field(parts.next(), &name, &format!("start of image {i}"))?;
        let n = parse_field(parts.next(), &name, &format!("count of image {i}"))?;
        if parts.next().is_some() {
            return Err(Error::Format(format!(
                "{name}: trailing tokens on line {i}"
            )));
        }
        entries.push((start, n));
    }
    if entries.len() != image_count {
        return Err(Error::Format(format!(
            "{name}: header declares {image_count} images but {} entries follow",
            entries.len()
        )));
    }
    let manifest = Manifest { dim, entries };
    manifest
        .validate()
        .map_err(|e| Error::Format(format!("{name}: {e}")))?;
    Ok(manifest)
}

/// Write a manifest file.
pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    manifest.validate()?;
    let mut text = format!("{} {}\n", manifest.dim, manifest.image_count());
    for &(start, n) in &manifest.entries {
        text.push_str(&format!("{start} {n}\n"));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Load per-image local-feature matrices (`D x n_i`, manifest order) from a
/// manifest and its backing fvecs file.
pub fn load_local_features(
    manifest_path: impl AsRef<Path>,
    features_path: impl AsRef<Path>,
) -> Result<Vec<DMatrix<f64>>> {
    let manifest = read_manifest(manifest_path)?;
    let features = read_fvecs(&features_path)?;
    if features.ncols() != manifest.total() {
        return Err(Error::Format(format!(
            "manifest covers {} vectors but backing file holds {}",
            manifest.total(),
            features.ncols()
        )));
    }
    if features.nrows() != manifest.dim {
        return Err(Error::Format(format!(
            "manifest declares dimension {} but backing file has {}",
            manifest.dim,
            features.nrows()
        )));
    }
    Ok(manifest
        .entries
        .iter()
        .map(|&(start, n)| features.columns(start, n).into_owned())
        .collect())
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, name: &str, what: &str) -> Result<T> {
    tok.ok_or_else(|| Error::Format(format!("{name}: missing {what}")))?
        .parse()
        .map_err(|_| Error::Format(format!("{name}: malformed {what}")))
}
