//! Packed binary codes, Hamming ranking and ranking metrics.
//!
//! Code `i` occupies `ceil(r / 64)` words starting at word
//! `i * ceil(r / 64)`; bit `j` lives in word `j / 64` at position `j % 64`
//! and is set when the code value is `+1`. Unused high bits are zero.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;

use crate::dataio::RawLabelMatrix;
use crate::error::{Error, Result};
use crate::seed;

pub const CODES_MAGIC: &[u8; 4] = b"ABC1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSet {
    n: usize,
    bits: usize,
    words: Vec<u64>,
}

#[inline]
pub fn words_per_code(bits: usize) -> usize {
    bits.div_ceil(64)
}

fn tail_mask(bits: usize) -> u64 {
    match bits % 64 {
        0 => u64::MAX,
        rem => (1u64 << rem) - 1,
    }
}

impl CodeSet {
    pub fn from_words(n: usize, bits: usize, words: Vec<u64>) -> Result<Self> {
        if bits == 0 {
            return Err(Error::Validation("code length must be >= 1".into()));
        }
        let w = words_per_code(bits);
        if words.len() != n * w {
            return Err(Error::Validation(format!(
                "{} words for {n} codes of {bits} bits (expected {})",
                words.len(),
                n * w
            )));
        }
        let mask = tail_mask(bits);
        if let Some(i) = (0..n).find(|i| words[i * w + w - 1] & !mask != 0) {
            return Err(Error::Format(format!("code {i} has bits set beyond r={bits}")));
        }
        Ok(CodeSet { n, bits, words })
    }

    /// Pack an `n x r` matrix, one code per row; entries `>= 0` become `+1`.
    pub fn from_signs(codes: &DMatrix<f64>) -> Self {
        let (n, bits) = codes.shape();
        let w = words_per_code(bits);
        let mut words = vec![0u64; n * w];
        for i in 0..n {
            for j in 0..bits {
                if codes[(i, j)] >= 0.0 {
                    words[i * w + j / 64] |= 1 << (j % 64);
                }
            }
        }
        CodeSet { n, bits, words }
    }

    /// Uniformly random codes, used as the chance-level baseline.
    pub fn random(n: usize, bits: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed, "codes/random", 0);
        let w = words_per_code(bits);
        let mask = tail_mask(bits);
        let mut words: Vec<u64> = (0..n * w).map(|_| rng.random()).collect();
        for i in 0..n {
            words[i * w + w - 1] &= mask;
        }
        CodeSet { n, bits, words }
    }

    /// Unpack to an `n x r` matrix of +-1.
    pub fn to_signs(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.bits, |i, j| {
            if self.bit(i, j) {
                1.0
            } else {
                -1.0
            }
        })
    }

    pub fn bit(&self, i: usize, j: usize) -> bool {
        let w = words_per_code(self.bits);
        self.words[i * w + j / 64] >> (j % 64) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn code(&self, i: usize) -> &[u64] {
        let w = words_per_code(self.bits);
        &self.words[i * w..(i + 1) * w]
    }

    /// Distance between code `i` of `self` and code `j` of `other`.
    pub fn hamming(&self, i: usize, other: &CodeSet, j: usize) -> Result<u32> {
        if self.bits != other.bits {
            return Err(bits_mismatch(self.bits, other.bits));
        }
        hamming(self.code(i), other.code(j))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.words.len() * 8);
        out.extend_from_slice(CODES_MAGIC);
        out.extend_from_slice(&(self.n as u64).to_le_bytes());
        out.extend_from_slice(&(self.bits as u32).to_le_bytes());
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != CODES_MAGIC {
            return Err(Error::Format("bad code file magic, expected ABC1".into()));
        }
        let n = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
        let bits = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let n = usize::try_from(n).map_err(|_| Error::Format("code count overflows".into()))?;
        let expected = n
            .checked_mul(words_per_code(bits))
            .and_then(|w| w.checked_mul(8))
            .ok_or_else(|| Error::Format("code payload overflows".into()))?;
        let payload = &bytes[16..];
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "code payload is {} bytes, header declares {n} codes of {bits} bits ({expected} bytes)",
                payload.len()
            )));
        }
        let words = payload
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_words(n, bits, words).map_err(|e| match e {
            Error::Validation(msg) => Error::Format(msg),
            other => other,
        })
    }
}

fn bits_mismatch(a: usize, b: usize) -> Error {
    Error::Validation(format!("code length mismatch: {a} bits vs {b} bits"))
}

pub fn write_codes(codes: &CodeSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, codes.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_codes(path: impl AsRef<Path>) -> Result<CodeSet> {
    let path = path.as_ref();
    CodeSet::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Popcount of the XOR of two packed codes.
pub fn hamming(a: &[u64], b: &[u64]) -> Result<u32> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!(
            "code length mismatch: {} words vs {} words",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum())
}

/// Database indices by ascending distance to `query`; ties keep index order.
pub fn rank_by_hamming(query: &[u64], db: &CodeSet) -> Result<Vec<usize>> {
    if db.is_empty() {
        return Ok(Vec::new());
    }
    if query.len() != words_per_code(db.bits) {
        return Err(Error::Validation(format!(
            "query has {} words, database codes have {}",
            query.len(),
            words_per_code(db.bits)
        )));
    }
    // counting sort over distances 0..=r is stable by construction
    let dists: Vec<u32> = (0..db.n)
        .map(|i| {
            query
                .iter()
                .zip(db.code(i))
                .map(|(x, y)| (x ^ y).count_ones())
                .sum()
        })
        .collect();
    let mut starts = vec![0usize; db.bits + 2];
    for &d in &dists {
        starts[d as usize + 1] += 1;
    }
    for i in 1..starts.len() {
        starts[i] += starts[i - 1];
    }
    let mut out = vec![0usize; db.n];
    for (i, &d) in dists.iter().enumerate() {
        out[starts[d as usize]] = i;
        starts[d as usize] += 1;
    }
    Ok(out)
}

/// Relevance by shared labels: a query and a database item are relevant
/// when they have at least one class in common.
#[derive(Debug, Clone)]
pub struct RelevanceJudge {
    query: Vec<Vec<u64>>,
    db: Vec<Vec<u64>>,
}

fn label_bitsets(labels: &DMatrix<f64>) -> Vec<Vec<u64>> {
    let w = labels.nrows().div_ceil(64);
    labels
        .column_iter()
        .map(|col| {
            let mut set = vec![0u64; w];
            for (k, &v) in col.iter().enumerate() {
                if v != 0.0 {
                    set[k / 64] |= 1 << (k % 64);
                }
            }
            set
        })
        .collect()
}

impl RelevanceJudge {
    pub fn new(query: &RawLabelMatrix, db: &RawLabelMatrix) -> Result<Self> {
        Self::from_matrices(query.values(), db.values())
    }

    /// Both matrices are `c x n` with shared `c`.
    pub fn from_matrices(query: &DMatrix<f64>, db: &DMatrix<f64>) -> Result<Self> {
        if query.nrows() != db.nrows() {
            return Err(Error::Validation(format!(
                "query labels have {} classes, database labels have {}",
                query.nrows(),
                db.nrows()
            )));
        }
        Ok(RelevanceJudge {
            query: label_bitsets(query),
            db: label_bitsets(db),
        })
    }

    pub fn queries(&self) -> usize {
        self.query.len()
    }

    pub fn db_len(&self) -> usize {
        self.db.len()
    }

    pub fn relevant(&self, query: usize, item: usize) -> bool {
        self.query[query]
            .iter()
            .zip(&self.db[item])
            .any(|(a, b)| a & b != 0)
    }

    /// Number of database items relevant to `query`.
    pub fn ground_truth(&self, query: usize) -> usize {
        (0..self.db.len()).filter(|&d| self.relevant(query, d)).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragePrecision {
    pub ap: f64,
    /// Relevant items within the top-R list.
    pub relevant: usize,
}

impl AveragePrecision {
    /// No relevant item within the cutoff.
    pub fn is_empty(&self) -> bool {
        self.relevant == 0
    }
}

/// `AP = (1/L) sum_{i<=R} P_i * rel(i)` where `L` counts relevant items in
/// the top `R`. `AP = 0` when `L = 0`.
pub fn average_precision(
    ranked: &[usize],
    judge: &RelevanceJudge,
    query: usize,
    cutoff: usize,
) -> AveragePrecision {
    let cutoff = cutoff.min(ranked.len());
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, &item) in ranked[..cutoff].iter().enumerate() {
        if judge.relevant(query, item) {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    AveragePrecision {
        ap: if hits == 0 { 0.0 } else { sum / hits as f64 },
        relevant: hits,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapReport {
    pub map: f64,
    /// Queries that entered the mean.
    pub evaluated: usize,
    /// Queries with no relevant item within the cutoff.
    pub empty: usize,
}

fn check_pair(queries: &CodeSet, db: &CodeSet, judge: &RelevanceJudge) -> Result<()> {
    if queries.bits() != db.bits() {
        return Err(bits_mismatch(queries.bits(), db.bits()));
    }
    if judge.queries() != queries.len() || judge.db_len() != db.len() {
        return Err(Error::Validation(format!(
            "labels cover {} queries / {} items but codes cover {} / {}",
            judge.queries(),
            judge.db_len(),
            queries.len(),
            db.len()
        )));
    }
    Ok(())
}

/// Mean AP over all queries. Queries with empty ground truth inside the
/// cutoff are excluded unless `include_empty` is set, in which case they
/// contribute `AP = 0`. `cutoff = None` ranks the whole database.
pub fn mean_average_precision(
    queries: &CodeSet,
    db: &CodeSet,
    judge: &RelevanceJudge,
    cutoff: Option<usize>,
    include_empty: bool,
) -> Result<MapReport> {
    check_pair(queries, db, judge)?;
    let cutoff = cutoff.unwrap_or(db.len());
    if cutoff > db.len() {
        return Err(Error::Validation(format!(
            "cutoff {cutoff} exceeds database size {}",
            db.len()
        )));
    }
    let mut sum = 0.0;
    let mut evaluated = 0;
    let mut empty = 0;
    for q in 0..queries.len() {
        let ranked = rank_by_hamming(queries.code(q), db)?;
        let ap = average_precision(&ranked, judge, q, cutoff);
        if ap.is_empty() {
            empty += 1;
            if !include_empty {
                continue;
            }
        }
        sum += ap.ap;
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(Error::Evaluation(format!(
            "all {} queries have empty ground truth",
            queries.len()
        )));
    }
    Ok(MapReport {
        map: sum / evaluated as f64,
        evaluated,
        empty,
    })
}

/// Mean over queries of the fraction of relevant items among the `N`
/// nearest, for each requested `N`.
pub fn topn_precision_curve(
    queries: &CodeSet,
    db: &CodeSet,
    judge: &RelevanceJudge,
    points: &[usize],
) -> Result<Vec<(usize, f64)>> {
    check_pair(queries, db, judge)?;
    if let Some(&bad) = points.iter().find(|&&p| p == 0 || p > db.len()) {
        return Err(Error::Validation(format!(
            "top-N point {bad} must be within 1..={}",
            db.len()
        )));
    }
    if queries.is_empty() {
        return Err(Error::Evaluation("no queries".into()));
    }
    let mut sums = vec![0.0; points.len()];
    for q in 0..queries.len() {
        let ranked = rank_by_hamming(queries.code(q), db)?;
        for (slot, &n) in sums.iter_mut().zip(points) {
            let hits = ranked[..n].iter().filter(|&&d| judge.relevant(q, d)).count();
            *slot += hits as f64 / n as f64;
        }
    }
    Ok(points
        .iter()
        .zip(sums)
        .map(|(&n, s)| (n, s / queries.len() as f64))
        .collect())
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub task: String,
    pub bits: usize,
    pub value: f64,
}

pub const METRICS_HEADER: &str = "metric,task,bits,value";

/// Header plus one row per metric; values use the shortest round-trip
/// representation.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{},{},{},{:?}", row.metric, row.task, row.bits, row.value);
    }
    out
}
