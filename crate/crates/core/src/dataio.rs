//! Matrix, label and model-archive I/O plus the seeded synthetic generator.
//!
//! Binary matrix layout (`AMX1`), all integers little-endian:
//!
//! | bytes  | content                      |
//! |--------|------------------------------|
//! | 0..4   | magic `AMX1`                 |
//! | 4      | dtype, 0 = f32, 1 = f64      |
//! | 5..8   | zero                         |
//! | 8..16  | rows (u64)                   |
//! | 16..24 | cols (u64)                   |
//! | 24..   | `rows * cols` values, row-major |
//!
//! Model archives (`AMH1`) are the magic, a u32 section count, then for each
//! section a u32 name length, the UTF-8 name and an embedded `AMX1` blob.
//! The final section is `meta`; its payload is a u64 byte length followed by
//! UTF-8 `key=value` lines.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed;

pub const MATRIX_MAGIC: &[u8; 4] = b"AMX1";
pub const ARCHIVE_MAGIC: &[u8; 4] = b"AMH1";
pub const MATRIX_HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// A dense matrix together with the storage dtype it was read from, so that
/// writing it back reproduces the original bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Amx {
    pub dtype: Dtype,
    pub values: DMatrix<f64>,
}

impl Amx {
    pub fn f64(values: DMatrix<f64>) -> Self {
        Amx {
            dtype: Dtype::F64,
            values,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (rows, cols) = self.values.shape();
        let mut out = Vec::with_capacity(MATRIX_HEADER_LEN + rows * cols * self.dtype.width());
        out.extend_from_slice(MATRIX_MAGIC);
        out.extend_from_slice(&[self.dtype.code(), 0, 0, 0]);
        out.extend_from_slice(&(rows as u64).to_le_bytes());
        out.extend_from_slice(&(cols as u64).to_le_bytes());
        for i in 0..rows {
            for j in 0..cols {
                let v = self.values[(i, j)];
                match self.dtype {
                    Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                    Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        out
    }

    /// Parse one blob from the front of `bytes`, returning it and the number
    /// of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < MATRIX_HEADER_LEN {
            return Err(Error::Format(format!(
                "truncated matrix header: {} bytes",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MATRIX_MAGIC {
            return Err(Error::Format("bad matrix magic, expected AMX1".into()));
        }
        let dtype = Dtype::from_code(bytes[4])?;
        if bytes[5..8] != [0, 0, 0] {
            return Err(Error::Format("reserved header bytes 5..8 must be zero".into()));
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let count = rows
            .checked_mul(cols)
            .and_then(|c| usize::try_from(c).ok())
            .ok_or_else(|| Error::Format(format!("matrix size {rows}x{cols} overflows")))?;
        let payload_len = count
            .checked_mul(dtype.width())
            .ok_or_else(|| Error::Format("payload length overflows".into()))?;
        let payload = &bytes[MATRIX_HEADER_LEN..];
        if payload.len() < payload_len {
            return Err(Error::Format(format!(
                "truncated payload: header declares {rows}x{cols} ({count} values) but only {} bytes follow",
                payload.len()
            )));
        }
        let (rows, cols) = (rows as usize, cols as usize);
        let values = match dtype {
            Dtype::F32 => DMatrix::from_row_iterator(
                rows,
                cols,
                payload[..payload_len]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64),
            ),
            Dtype::F64 => DMatrix::from_row_iterator(
                rows,
                cols,
                payload[..payload_len]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap())),
            ),
        };
        Ok((Amx { dtype, values }, MATRIX_HEADER_LEN + payload_len))
    }
}

/// Per-instance feature vectors of one modality, one row per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: DMatrix<f64>,
    modality_id: u8,
    dtype: Dtype,
}

impl FeatureMatrix {
    pub fn new(values: DMatrix<f64>, modality_id: u8) -> Result<Self> {
        check_matrix(&values, "feature matrix")?;
        Ok(FeatureMatrix {
            values,
            modality_id,
            dtype: Dtype::F64,
        })
    }

    pub fn with_dtype(mut self, dtype: Dtype) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn modality_id(&self) -> u8 {
        self.modality_id
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

fn check_matrix(values: &DMatrix<f64>, what: &str) -> Result<()> {
    let (rows, cols) = values.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::Validation(format!(
            "{what} must have at least one row and one column, got {rows}x{cols}"
        )));
    }
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        // column-major storage
        let (i, j) = (pos % rows, pos / rows);
        return Err(Error::Validation(format!(
            "{what} has non-finite entry {} at ({i}, {j})",
            values[(i, j)]
        )));
    }
    Ok(())
}

/// Binary `c x n` label matrix: entry `(k, i)` is 1 when instance `i` carries
/// class `k`. Every instance carries at least one class.
#[derive(Debug, Clone, PartialEq)]
pub struct RawLabelMatrix {
    values: DMatrix<f64>,
}

impl RawLabelMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let (c, n) = values.shape();
        if c == 0 || n == 0 {
            return Err(Error::Validation(format!(
                "label matrix must be non-empty, got {c}x{n}"
            )));
        }
        if let Some(pos) = values.iter().position(|&v| v != 0.0 && v != 1.0) {
            let (i, j) = (pos % c, pos / c);
            return Err(Error::Validation(format!(
                "label entry ({i}, {j}) is {}, expected 0 or 1",
                values[(i, j)]
            )));
        }
        if let Some(j) = values.column_iter().position(|col| col.iter().all(|&v| v == 0.0)) {
            return Err(Error::Validation(format!(
                "unlabeled instance: label column {j} has no positive class"
            )));
        }
        Ok(RawLabelMatrix { values })
    }

    /// Build one-hot labels from class indices.
    pub fn from_classes(classes: &[usize], c: usize) -> Result<Self> {
        let mut values = DMatrix::zeros(c, classes.len());
        for (i, &k) in classes.iter().enumerate() {
            if k >= c {
                return Err(Error::Validation(format!(
                    "class index {k} out of range for {c} classes"
                )));
            }
            values[(k, i)] = 1.0;
        }
        Self::new(values)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn classes(&self) -> usize {
        self.values.nrows()
    }

    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    /// Keep only the listed instance columns.
    pub fn select(&self, columns: &[usize]) -> Self {
        RawLabelMatrix {
            values: self.values.select_columns(columns),
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parse a CSV of reals; each line is one matrix row.
pub fn parse_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|field| {
                field.trim().parse::<f64>().map_err(|_| {
                    Error::Format(format!(
                        "line {}: cannot parse {:?} as a real",
                        lineno + 1,
                        field.trim()
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Format(format!(
                    "line {}: expected {} fields, found {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_row_iterator(n, d, rows.into_iter().flatten()))
}

/// Read an `AMX1` blob or a CSV file.
pub fn read_amx(path: &Path) -> Result<Amx> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(MATRIX_MAGIC) {
        let (amx, used) = Amx::from_bytes(&bytes)?;
        if used != bytes.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes after matrix payload",
                path.display(),
                bytes.len() - used
            )));
        }
        return Ok(amx);
    }
    let text = std::str::from_utf8(&bytes).map_err(|_| {
        Error::Format(format!(
            "{}: neither AMX1 (bad magic) nor UTF-8 CSV",
            path.display()
        ))
    })?;
    Ok(Amx::f64(parse_csv(text)?))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let amx = read_amx(path)?;
    Ok(FeatureMatrix::new(amx.values, 0)?.with_dtype(amx.dtype))
}

pub fn write_matrix(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    check_matrix(&m.values, "feature matrix")?;
    let amx = Amx {
        dtype: m.dtype,
        values: m.values.clone(),
    };
    write_bytes(path.as_ref(), &amx.to_bytes())
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<RawLabelMatrix> {
    RawLabelMatrix::new(read_amx(path.as_ref())?.values)
}

pub fn write_labels(l: &RawLabelMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &Amx::f64(l.values.clone()).to_bytes())
}

/// Parse `key=value` lines. Blank lines and lines starting with `#` are
/// skipped. Keys must be unique.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!("line {}: expected key=value, got {line:?}", lineno + 1))
        })?;
        let key = key.trim().to_string();
        if out.iter().any(|(k, _)| *k == key) {
            return Err(Error::Format(format!("line {}: duplicate key {key:?}", lineno + 1)));
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

pub const META_SECTION: &str = "meta";

/// Named matrix sections plus string metadata.
///
/// Sections keep insertion order so that saving is byte-deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelArchive {
    sections: Vec<(String, Amx)>,
    meta: BTreeMap<String, String>,
}

impl ModelArchive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace a matrix section.
    pub fn insert(&mut self, name: impl Into<String>, values: DMatrix<f64>) {
        let name = name.into();
        let amx = Amx::f64(values);
        match self.sections.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = amx,
            None => self.sections.push((name, amx)),
        }
    }

    pub fn matrix(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, amx)| &amx.values)
            .ok_or_else(|| Error::Format(format!("archive is missing section {name:?}")))
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.insert(key.into(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("archive metadata is missing key {key:?}")))
    }

    pub fn meta_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("metadata {key}={raw:?} is not parseable")))
    }

    pub fn meta_entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.meta.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Names of the sections a trained model must carry.
    pub fn required_sections(modalities: usize) -> Vec<String> {
        let mut names: Vec<String> = ["V", "R", "M", "B"].iter().map(|s| s.to_string()).collect();
        for t in 1..=modalities {
            for prefix in ["P", "Ph", "anchors", "kcenter"] {
                names.push(format!("{prefix}_{t}"));
            }
        }
        names
    }

    pub fn required_meta(modalities: usize) -> Vec<String> {
        let mut keys: Vec<String> = [
            "modalities",
            "r",
            "omega",
            "lambda_h",
            "seed",
            "iterations",
            "objective_history",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for t in 1..=modalities {
            for prefix in ["lambda", "sigma", "k"] {
                keys.push(format!("{prefix}_{t}"));
            }
        }
        keys
    }

    /// Check that the archive has exactly the schema of a trained model.
    pub fn validate(&self) -> Result<()> {
        let modalities: usize = self.meta_parsed("modalities")?;
        let required = Self::required_sections(modalities);
        for (i, (name, amx)) in self.sections.iter().enumerate() {
            if name == META_SECTION {
                return Err(Error::Format("\"meta\" is reserved for metadata".into()));
            }
            if !required.contains(name) {
                return Err(Error::Format(format!("unknown archive section {name:?}")));
            }
            if self.sections[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::Format(format!("duplicate archive section {name:?}")));
            }
            if amx.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("section {name:?} has non-finite entries")));
            }
        }
        for name in &required {
            self.matrix(name)?;
        }
        for key in Self::required_meta(modalities) {
            self.meta(&key)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::new();
        out.extend_from_slice(ARCHIVE_MAGIC);
        out.extend_from_slice(&(self.sections.len() as u32 + 1).to_le_bytes());
        for (name, amx) in &self.sections {
            push_name(&mut out, name);
            out.extend_from_slice(&amx.to_bytes());
        }
        push_name(&mut out, META_SECTION);
        let mut text = String::new();
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Validation(format!("metadata entry {k:?} is not line-safe")));
            }
            text.push_str(k);
            text.push('=');
            text.push_str(v);
            text.push('\n');
        }
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != ARCHIVE_MAGIC {
            if magic.starts_with(b"AMH") {
                return Err(Error::Version {
                    expected: "AMH1".into(),
                    found: String::from_utf8_lossy(magic).into_owned(),
                });
            }
            return Err(Error::Format("bad archive magic, expected AMH1".into()));
        }
        let count = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
        let mut archive = ModelArchive::new();
        let mut saw_meta = false;
        for index in 0..count {
            let len = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::Format("section name is not UTF-8".into()))?
                .to_string();
            if name == META_SECTION {
                if index + 1 != count {
                    return Err(Error::Format("\"meta\" must be the final section".into()));
                }
                let text_len = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
                let text_len = usize::try_from(text_len)
                    .map_err(|_| Error::Format("meta length overflows".into()))?;
                let text = std::str::from_utf8(cur.take(text_len)?)
                    .map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
                for (k, v) in parse_key_values(text)? {
                    archive.meta.insert(k, v);
                }
                saw_meta = true;
            } else {
                if archive.sections.iter().any(|(n, _)| *n == name) {
                    return Err(Error::Format(format!("duplicate archive section {name:?}")));
                }
                let (amx, used) = Amx::from_bytes(&bytes[cur.pos..])?;
                cur.pos += used;
                archive.sections.push((name, amx));
            }
        }
        if !saw_meta {
            return Err(Error::Format("archive has no \"meta\" section".into()));
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after archive",
                bytes.len() - cur.pos
            )));
        }
        archive.validate()?;
        Ok(archive)
    }
}

fn push_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("archive truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

pub fn save_model(m: &ModelArchive, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &m.to_bytes()?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelArchive> {
    ModelArchive::from_bytes(&read_bytes(path.as_ref())?)
}

/// Seeded two-modality dataset with single-label instances.
pub struct SyntheticData {
    pub x1: FeatureMatrix,
    pub x2: FeatureMatrix,
    pub labels: RawLabelMatrix,
}

/// Generate `n` instances over `c` classes. Each modality draws its own class
/// centroids (Gaussian directions, scaled so that every pair is at least 2
/// apart) and adds isotropic Gaussian noise with per-coordinate standard
/// deviation `noise`.
pub fn generate_synthetic(
    n: usize,
    c: usize,
    d1: usize,
    d2: usize,
    noise: f64,
    seed: u64,
) -> Result<SyntheticData> {
    if c < 2 {
        return Err(Error::Validation(format!("need at least 2 classes, got c={c}")));
    }
    if n < c {
        return Err(Error::Validation(format!(
            "need n >= c instances, got n={n} < c={c}"
        )));
    }
    if d1 == 0 || d2 == 0 {
        return Err(Error::Validation("feature dimensions must be >= 1".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Validation(format!("noise must be finite and >= 0, got {noise}")));
    }

    let mut rng = seed::rng(seed, "synth/classes", 0);
    let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let labels = RawLabelMatrix::from_classes(&classes, c)?;

    let modality = |t: u8, d: usize| -> Result<FeatureMatrix> {
        let centroids = class_centroids(c, d, seed::derive(seed, "synth/centroids", t.into()))?;
        let mut rng = seed::rng(seed, "synth/noise", t.into());
        let mut x = DMatrix::zeros(n, d);
        for (i, &k) in classes.iter().enumerate() {
            for j in 0..d {
                let eps: f64 = rng.sample(StandardNormal);
                x[(i, j)] = centroids[(k, j)] + noise * eps;
            }
        }
        FeatureMatrix::new(x, t)
    };

    Ok(SyntheticData {
        x1: modality(1, d1)?,
        x2: modality(2, d2)?,
        labels,
    })
}

fn class_centroids(c: usize, d: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = seed::rng(seed, "centroids", 0);
    for _attempt in 0..64 {
        let mut m = DMatrix::from_fn(c, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        for mut row in m.row_iter_mut() {
            let norm = row.norm();
            row /= norm;
        }
        let mut min_dist = f64::INFINITY;
        for a in 0..c {
            for b in (a + 1)..c {
                min_dist = min_dist.min((m.row(a) - m.row(b)).norm());
            }
        }
        // Coincident directions are possible in d = 1; redraw.
        if min_dist > 1e-3 {
            if min_dist < 2.0 {
                m *= 2.0 / min_dist;
            }
            return Ok(m);
        }
    }
    Err(Error::Validation(format!(
        "cannot place {c} separated centroids in dimension {d}"
    )))
}
