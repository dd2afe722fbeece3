//! On-disk formats.
//!
//! Volumes use the UXV1 layout: the ASCII line `UXV1`, a one-line JSON
//! header `{"dims":[X,Y,Z],"dtype":"u8"}`, then raw samples first axis
//! fastest (`i16` and `u16` little-endian). Label volumes are `u16` UXV1
//! files with a JSON label table beside them. Images are binary PGM.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, SignedVolume, Volume};
use crate::labels::{LabelTable, LabelVolume};
use crate::sieve::{FilterKind, ScaleSchedule, SieveDecomposition};

const MAGIC: &[u8] = b"UXV1\n";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    I16,
    U16,
}

/// Sample types storable in a UXV1 file.
pub trait Sample: Copy + Sized {
    const DTYPE: Dtype;
    const SIZE: usize;
    fn put(self, out: &mut Vec<u8>);
    fn get(bytes: &[u8]) -> Self;
    /// Rejects values outside the type's documented range.
    fn check(self) -> std::result::Result<(), String> {
        Ok(())
    }
}

impl Sample for u8 {
    const DTYPE: Dtype = Dtype::U8;
    const SIZE: usize = 1;
    fn put(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn get(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

impl Sample for i16 {
    const DTYPE: Dtype = Dtype::I16;
    const SIZE: usize = 2;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(bytes: &[u8]) -> Self {
        i16::from_le_bytes([bytes[0], bytes[1]])
    }
    fn check(self) -> std::result::Result<(), String> {
        if (-255..=255).contains(&self) {
            Ok(())
        } else {
            Err(format!("signed sample {self} outside [-255, 255]"))
        }
    }
}

impl Sample for u16 {
    const DTYPE: Dtype = Dtype::U16;
    const SIZE: usize = 2;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(bytes: &[u8]) -> Self {
        u16::from_le_bytes([bytes[0], bytes[1]])
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    dims: Vec<usize>,
    dtype: Dtype,
}

pub fn encode_grid<T: Sample>(g: &Grid<T>) -> Vec<u8> {
    let header = serde_json::to_string(&Header { dims: g.dims().to_vec(), dtype: T::DTYPE }).expect("header");
    let mut out = Vec::with_capacity(MAGIC.len() + header.len() + 1 + g.len() * T::SIZE);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    for &v in g.data() {
        v.put(&mut out);
    }
    out
}

/// Parses UXV1 bytes; `path` only labels errors.
pub fn decode_grid<T: Sample>(bytes: &[u8], path: &Path) -> Result<Grid<T>> {
    let bad = |offset: usize, msg: String| Error::format(path, offset as u64, msg);
    if !bytes.starts_with(MAGIC) {
        let at = bytes.iter().zip(MAGIC).position(|(a, b)| a != b).unwrap_or(bytes.len());
        return Err(bad(at, "missing UXV1 magic line".into()));
    }
    let start = MAGIC.len();
    let end = bytes[start..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|p| start + p)
        .ok_or_else(|| bad(bytes.len(), "header line is not terminated".into()))?;
    let header: Header = serde_json::from_slice(&bytes[start..end])
        .map_err(|e| bad(start + e.column().saturating_sub(1), format!("bad header: {e}")))?;
    if header.dtype != T::DTYPE {
        return Err(bad(start, format!("dtype {:?}, expected {:?}", header.dtype, T::DTYPE)));
    }
    let n = header
        .dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| bad(start, "dims overflow".into()))?;
    let data_start = end + 1;
    let body = &bytes[data_start..];
    let want = n * T::SIZE;
    if body.len() < want {
        return Err(bad(bytes.len(), format!("truncated data: {} of {want} bytes", body.len())));
    }
    if body.len() > want {
        return Err(bad(data_start + want, format!("{} trailing bytes", body.len() - want)));
    }
    let mut data = Vec::with_capacity(n);
    for (i, chunk) in body.chunks_exact(T::SIZE).enumerate() {
        let v = T::get(chunk);
        v.check().map_err(|m| bad(data_start + i * T::SIZE, m))?;
        data.push(v);
    }
    Grid::new(&header.dims, data).map_err(|e| bad(start, e.to_string()))
}

pub fn write_grid<T: Sample>(path: &Path, g: &Grid<T>) -> Result<()> {
    write_bytes(path, &encode_grid(g))
}

pub fn read_grid<T: Sample>(path: &Path) -> Result<Grid<T>> {
    decode_grid(&read_bytes(path)?, path)
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    read_grid(path)
}

pub fn read_signed(path: &Path) -> Result<SignedVolume> {
    read_grid(path)
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Byte offset of a serde_json error position.
fn json_offset(text: &[u8], e: &serde_json::Error) -> usize {
    if e.line() == 0 {
        return text.len();
    }
    let mut line = 1;
    for (i, &b) in text.iter().enumerate() {
        if line == e.line() {
            return (i + e.column().saturating_sub(1)).min(text.len());
        }
        if b == b'\n' {
            line += 1;
        }
    }
    text.len()
}

pub fn parse_json<T: DeserializeOwned>(bytes: &[u8], path: &Path) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::format(path, json_offset(bytes, &e) as u64, e.to_string()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(&read_bytes(path)?, path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    text.push(b'\n');
    write_bytes(path, &text)
}

/// Reads JSON-lines; blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let bytes = read_bytes(path)?;
    let mut out = Vec::new();
    let mut offset = 0;
    for line in bytes.split(|&b| b == b'\n') {
        if !line.iter().all(u8::is_ascii_whitespace) {
            let item = serde_json::from_slice(line)
                .map_err(|e| Error::format(path, (offset + e.column().saturating_sub(1)) as u64, e.to_string()))?;
            out.push(item);
        }
        offset += line.len() + 1;
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| Error::invalid(e.to_string()))?;
        out.push(b'\n');
    }
    write_bytes(path, &out)
}

pub fn write_labels(volume_path: &Path, table_path: &Path, labels: &LabelVolume) -> Result<()> {
    write_grid(volume_path, &labels.grid)?;
    write_json(table_path, &labels.table)
}

pub fn read_labels(volume_path: &Path, table_path: &Path) -> Result<LabelVolume> {
    let grid: Grid<u16> = read_grid(volume_path)?;
    let table: LabelTable = read_json(table_path)?;
    LabelVolume::new(grid, table).map_err(|e| Error::format(table_path, 0, e.to_string()))
}

/// Binary greyscale PGM, row-major with `width` pixels per row.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel count");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    write_bytes(path, &encode_pgm(width, height, pixels))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionManifest {
    pub scales: ScaleSchedule,
    pub filter: FilterKind,
    /// Paths relative to the manifest directory, except `original` which is
    /// stored as given.
    pub files: BTreeMap<String, PathBuf>,
}

/// Writes low-pass volumes `lowpass_1..N`, signed channels `channel_2..N`
/// and `manifest.json` into `dir`.
pub fn write_decomposition(dir: &Path, original: &Path, d: &SieveDecomposition) -> Result<DecompositionManifest> {
    let mut files = BTreeMap::new();
    files.insert("original".to_string(), original.to_path_buf());
    for (i, lp) in d.lowpass.iter().enumerate() {
        let name = format!("lowpass_{}.uxv", i + 1);
        write_grid(&dir.join(&name), lp)?;
        files.insert(format!("lowpass_{}", i + 1), PathBuf::from(name));
    }
    for (i, ch) in d.channels_signed.iter().enumerate().skip(1) {
        let name = format!("channel_{}.uxv", i + 1);
        write_grid(&dir.join(&name), ch)?;
        files.insert(format!("channel_{}", i + 1), PathBuf::from(name));
    }
    let m = DecompositionManifest { scales: d.schedule.clone(), filter: d.filter, files };
    write_json(&dir.join("manifest.json"), &m)?;
    Ok(m)
}

/// Loads a decomposition and checks every stored channel against the
/// low-pass volumes it was derived from.
pub fn read_decomposition(manifest_path: &Path) -> Result<SieveDecomposition> {
    let m: DecompositionManifest = read_json(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new(""));
    let entry =
        |key: &str| m.files.get(key).ok_or_else(|| Error::format(manifest_path, 0, format!("manifest lacks {key:?}")));
    let original = read_volume(entry("original")?)?;
    let mut lowpass = Vec::with_capacity(m.scales.len());
    for n in 1..=m.scales.len() {
        let lp = read_volume(&dir.join(entry(&format!("lowpass_{n}"))?))?;
        if !lp.same_shape(&original) {
            return Err(Error::DimensionMismatch(format!("lowpass_{n} does not match the original")));
        }
        lowpass.push(lp);
    }
    let mut channels_signed = Vec::with_capacity(lowpass.len());
    for n in 1..=lowpass.len() {
        let prev = if n == 1 { &original } else { &lowpass[n - 2] };
        let data = prev.data().iter().zip(lowpass[n - 1].data()).map(|(&a, &b)| a as i16 - b as i16).collect();
        let ch = SignedVolume::new(prev.dims(), data)?;
        if n >= 2 {
            let path = dir.join(entry(&format!("channel_{n}"))?);
            if read_signed(&path)? != ch {
                return Err(Error::Invariant(format!(
                    "{}: channel {n} differs from the difference of its low-pass volumes",
                    path.display()
                )));
            }
        }
        channels_signed.push(ch);
    }
    Ok(SieveDecomposition { original, lowpass, channels_signed, schedule: m.scales, filter: m.filter })
}
