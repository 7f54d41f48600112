//! Embedding spaces and their on-disk interchange format.
//!
//! A space is stored as two files:
//!
//! * `<name>.emb`: little-endian binary, magic `EMB1`, `u32` row count `N`,
//!   `u32` dimension `d`, then `N·d` `f32` values row-major;
//! * `<name>.vocab.tsv`: exactly `N` newline-terminated UTF-8 labels, line
//!   `i` naming row `i`.
//!
//! Vectors are kept in `f32` exactly as stored; fitting code widens them to
//! `f64` itself.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
const HEADER_LEN: usize = 12;

/// Labeled matrix of row vectors.
#[derive(Debug, Clone)]
pub struct EmbeddingSpace {
    labels: Vec<String>,
    vectors: Matrix<f32>,
    index: HashMap<String, usize>,
}

impl PartialEq for EmbeddingSpace {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels
            && self.vectors.shape() == other.vectors.shape()
            && self
                .vectors
                .as_slice()
                .iter()
                .zip(other.vectors.as_slice())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl EmbeddingSpace {
    /// Validates and wraps `labels` and `vectors`.
    pub fn new(labels: Vec<String>, vectors: Matrix<f32>) -> Result<Self> {
        if vectors.rows() == 0 || vectors.cols() == 0 {
            return Err(Error::Validation(format!(
                "embedding space must be non-empty, got {}x{}",
                vectors.rows(),
                vectors.cols()
            )));
        }
        if labels.len() != vectors.rows() {
            return Err(Error::Consistency(format!(
                "{} labels for {} rows",
                labels.len(),
                vectors.rows()
            )));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if label.is_empty() {
                return Err(Error::Validation(format!("row {i} has an empty label")));
            }
            if index.insert(label.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate label `{label}`")));
            }
        }
        if let Some(pos) = vectors.as_slice().iter().position(|v| !v.is_finite()) {
            let row = pos / vectors.cols();
            return Err(Error::Validation(format!(
                "non-finite value in row {row} (`{}`)",
                labels[row]
            )));
        }
        Ok(EmbeddingSpace {
            labels,
            vectors,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn vectors(&self) -> &Matrix<f32> {
        &self.vectors
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// Row index of `label`, or a lookup error naming it.
    pub fn require(&self, label: &str) -> Result<usize> {
        self.position(label)
            .ok_or_else(|| Error::Lookup(label.to_owned()))
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.vectors.row(i)
    }

    /// Same labels, new vectors (any dimension).
    pub fn with_vectors(&self, vectors: Matrix<f32>) -> Result<Self> {
        EmbeddingSpace::new(self.labels.clone(), vectors)
    }

    /// Sub-space made of the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let labels = rows.iter().map(|&i| self.labels[i].clone()).collect();
        EmbeddingSpace::new(labels, self.vectors.select_rows(rows))
    }

    /// Rows of `self` followed by the rows of `other` whose labels `self`
    /// does not already contain.
    pub fn union(&self, other: &EmbeddingSpace) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "cannot merge spaces of dimension {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        let mut labels = self.labels.clone();
        let mut data = self.vectors.as_slice().to_vec();
        for (i, label) in other.labels.iter().enumerate() {
            if self.position(label).is_none() {
                labels.push(label.clone());
                data.extend_from_slice(other.row(i));
            }
        }
        let rows = labels.len();
        EmbeddingSpace::new(labels, Matrix::new(rows, self.dim(), data)?)
    }
}

/// Path of the label sidecar belonging to an embedding file.
pub fn vocab_path(path: &Path) -> PathBuf {
    path.with_extension("vocab.tsv")
}

pub fn load_space(path: impl AsRef<Path>) -> Result<EmbeddingSpace> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            path,
            format!("file is {} bytes, shorter than the header", bytes.len()),
        ));
    }
    if &bytes[..4] != EMB_MAGIC {
        return Err(Error::format(
            path,
            format!(
                "bad magic {:?}, expected \"EMB1\"",
                String::from_utf8_lossy(&bytes[..4])
            ),
        ));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expected = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::format(path, "header dimensions overflow"))?;
    if payload.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "header promises {n}x{d} floats ({expected} bytes), payload has {}",
                payload.len()
            ),
        ));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let vocab = vocab_path(path);
    let text = fs::read_to_string(&vocab).map_err(|e| Error::io(&vocab, e))?;
    let labels = split_lines(&text);
    if labels.len() != n {
        return Err(Error::Consistency(format!(
            "{} has {} labels but {} declares {n} rows",
            vocab.display(),
            labels.len(),
            path.display()
        )));
    }
    let labels = labels.into_iter().map(str::to_owned).collect();
    EmbeddingSpace::new(labels, Matrix::new(n, d, data)?)
}

fn split_lines(text: &str) -> Vec<&str> {
    if text.is_empty() {
        return Vec::new();
    }
    let body = text.strip_suffix('\n').unwrap_or(text);
    body.split('\n').collect()
}

pub fn save_space(space: &EmbeddingSpace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    for label in space.labels() {
        if label.contains(['\t', '\n', '\r']) {
            return Err(Error::Validation(format!(
                "label {label:?} contains a tab or line break and cannot be written"
            )));
        }
    }
    let n = u32::try_from(space.len())
        .map_err(|_| Error::Validation("row count exceeds u32".into()))?;
    let d = u32::try_from(space.dim())
        .map_err(|_| Error::Validation("dimension exceeds u32".into()))?;

    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        w.write_all(EMB_MAGIC)?;
        w.write_all(&n.to_le_bytes())?;
        w.write_all(&d.to_le_bytes())?;
        for v in space.vectors().as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))?;

    let vocab = vocab_path(path);
    let mut text = String::with_capacity(space.labels().iter().map(|l| l.len() + 1).sum());
    for label in space.labels() {
        text.push_str(label);
        text.push('\n');
    }
    fs::write(&vocab, text).map_err(|e| Error::io(&vocab, e))
}

/// Row normalization applied before alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preprocessing {
    None,
    #[default]
    UnitL2,
    CenterUnitL2,
}

impl Preprocessing {
    /// Two-bit code used in model files.
    pub fn code(self) -> u8 {
        match self {
            Preprocessing::None => 0,
            Preprocessing::UnitL2 => 1,
            Preprocessing::CenterUnitL2 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Preprocessing::None),
            1 => Some(Preprocessing::UnitL2),
            2 => Some(Preprocessing::CenterUnitL2),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preprocessing::None => "none",
            Preprocessing::UnitL2 => "unit",
            Preprocessing::CenterUnitL2 => "center-unit",
        }
    }
}

impl fmt::Display for Preprocessing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preprocessing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Preprocessing::None),
            "unit" | "unit-l2" => Ok(Preprocessing::UnitL2),
            "center-unit" | "center-then-unit-l2" => Ok(Preprocessing::CenterUnitL2),
            other => Err(Error::Parameter(format!(
                "unknown preprocessing `{other}` (expected none, unit or center-unit)"
            ))),
        }
    }
}

/// Applies `mode` to every row. Arithmetic runs in `f64`; the result is
/// rounded back to `f32`.
pub fn preprocess(space: &EmbeddingSpace, mode: Preprocessing) -> Result<EmbeddingSpace> {
    if mode == Preprocessing::None {
        return Ok(space.clone());
    }
    if mode == Preprocessing::UnitL2 {
        let (n, d) = space.vectors().shape();
        let mut out = Vec::with_capacity(n * d);
        for (i, r) in space.vectors().row_iter().enumerate() {
            let norm = r
                .iter()
                .map(|&v| f64::from(v) * f64::from(v))
                .sum::<f64>()
                .sqrt();
            if norm == 0.0 {
                return Err(zero_row(space, i, mode));
            }
            out.extend(r.iter().map(|&v| (f64::from(v) / norm) as f32));
        }
        return space.with_vectors(Matrix::new(n, d, out)?);
    }
    let wide = preprocess_f64(space, mode)?;
    space.with_vectors(wide.cast())
}

fn zero_row(space: &EmbeddingSpace, i: usize, mode: Preprocessing) -> Error {
    Error::Degenerate(format!(
        "row `{}` is the zero vector under {mode} preprocessing",
        space.labels()[i]
    ))
}

/// [`preprocess`] without the final rounding.
pub fn preprocess_f64(space: &EmbeddingSpace, mode: Preprocessing) -> Result<Matrix<f64>> {
    let (n, d) = space.vectors().shape();
    let mut rows: Vec<f64> = space
        .vectors()
        .as_slice()
        .iter()
        .map(|&v| v as f64)
        .collect();
    if mode == Preprocessing::None {
        return Matrix::new(n, d, rows);
    }
    if mode == Preprocessing::CenterUnitL2 {
        let mut mean = vec![0.0f64; d];
        for r in rows.chunks_exact(d) {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        for r in rows.chunks_exact_mut(d) {
            for (v, m) in r.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
    }
    let mut out = Vec::with_capacity(n * d);
    for (i, r) in rows.chunks_exact(d).enumerate() {
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(zero_row(space, i, mode));
        }
        out.extend(r.iter().map(|v| v / norm));
    }
    Matrix::new(n, d, out)
}
