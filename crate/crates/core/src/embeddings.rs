//! Feature matrices on disk (`NFTEMB01`) and the similarity products over them.
//!
//! File layout, all little-endian:
//!
//! ```text
//! b"NFTEMB01" | u32 header length | UTF-8 JSON header | rows*dim f32 payload
//! ```
//!
//! The header is `{"rows":N,"dim":M,"dtype":"f32le","ids":[...]}`. Similarity
//! matrices reuse the layout and append a `col_ids` key.

use std::collections::HashSet;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"NFTEMB01";
pub const DTYPE: &str = "f32le";

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("not an NFTEMB01 file")]
    BadMagic,
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("duplicate row id `{0}`")]
    DuplicateId(String),
    #[error("row `{0}` has zero norm")]
    ZeroRow(String),
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("row count mismatch: {left} vs {right}")]
    RowCountMismatch { left: usize, right: usize },
    #[error("unknown row id `{0}`")]
    UnknownId(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl EmbeddingError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::BadMagic => "embeddings.bad_magic",
            Self::HeaderMismatch(_) => "embeddings.header_mismatch",
            Self::NonFiniteValue { .. } => "embeddings.non_finite_value",
            Self::DuplicateId(_) => "embeddings.duplicate_id",
            Self::ZeroRow(_) => "embeddings.zero_row",
            Self::DimMismatch { .. } => "embeddings.dim_mismatch",
            Self::RowCountMismatch { .. } => "embeddings.row_count_mismatch",
            Self::UnknownId(_) => "embeddings.unknown_id",
            Self::Io(_) => "embeddings.io",
        }
    }
}

/// Row-major `rows x dim` f32 matrix with one unique id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
}

fn check_finite(data: &[f32], width: usize) -> Result<(), EmbeddingError> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(pos) if width > 0 => Err(EmbeddingError::NonFiniteValue {
            row: pos / width,
            col: pos % width,
        }),
        _ => Ok(()),
    }
}

fn check_unique(ids: &[String]) -> Result<(), EmbeddingError> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(EmbeddingError::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self, EmbeddingError> {
        if ids.len() * dim != data.len() {
            return Err(EmbeddingError::HeaderMismatch(format!(
                "{} rows x {dim} dims needs {} values, got {}",
                ids.len(),
                ids.len() * dim,
                data.len()
            )));
        }
        check_unique(&ids)?;
        check_finite(&data, dim)?;
        Ok(Self { ids, dim, data })
    }

    /// Builds from `(id, vector)` rows; every vector must have length `dim`.
    pub fn from_rows<I, S>(dim: usize, rows: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (id, v) in rows {
            let id = id.into();
            if v.len() != dim {
                return Err(EmbeddingError::DimMismatch {
                    left: dim,
                    right: v.len(),
                });
            }
            ids.push(id);
            data.extend(v);
        }
        Self::new(ids, dim, data)
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// New matrix holding the named rows, in the given order.
    pub fn select(&self, ids: &[String]) -> Result<Self, EmbeddingError> {
        let lookup: std::collections::HashMap<&str, usize> =
            self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            let i = *lookup
                .get(id.as_str())
                .ok_or_else(|| EmbeddingError::UnknownId(id.clone()))?;
            data.extend_from_slice(self.row(i));
        }
        Self::new(ids.to_vec(), self.dim, data)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    rows: usize,
    dim: usize,
    dtype: String,
    ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    col_ids: Option<Vec<String>>,
}

fn encode(header: &Header, data: &[f32]) -> Vec<u8> {
    let header_bytes = serde_json::to_vec(header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + header_bytes.len() + data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8]) -> Result<(Header, Vec<f32>), EmbeddingError> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(EmbeddingError::BadMagic);
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12usize
        .checked_add(header_len)
        .filter(|end| *end <= bytes.len())
        .ok_or_else(|| EmbeddingError::HeaderMismatch("header runs past end of file".into()))?;
    let header: Header = serde_json::from_slice(&bytes[12..header_end])
        .map_err(|e| EmbeddingError::HeaderMismatch(format!("unreadable header: {e}")))?;
    if header.dtype != DTYPE {
        return Err(EmbeddingError::HeaderMismatch(format!(
            "unsupported dtype `{}`",
            header.dtype
        )));
    }
    if header.ids.len() != header.rows {
        return Err(EmbeddingError::HeaderMismatch(format!(
            "{} ids for {} rows",
            header.ids.len(),
            header.rows
        )));
    }
    let payload = &bytes[header_end..];
    let expected = header
        .rows
        .checked_mul(header.dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| EmbeddingError::HeaderMismatch("declared size overflows".into()))?;
    if payload.len() != expected {
        return Err(EmbeddingError::HeaderMismatch(format!(
            "header declares {} x {} values ({expected} bytes), payload has {} bytes",
            header.rows,
            header.dim,
            payload.len()
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    check_finite(&data, header.dim)?;
    Ok((header, data))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

pub fn encode_matrix(m: &EmbeddingMatrix) -> Vec<u8> {
    let header = Header {
        rows: m.rows(),
        dim: m.dim,
        dtype: DTYPE.into(),
        ids: m.ids.clone(),
        col_ids: None,
    };
    encode(&header, &m.data)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<EmbeddingMatrix, EmbeddingError> {
    let (header, data) = decode(bytes)?;
    EmbeddingMatrix::new(header.ids, header.dim, data)
}

pub fn write_matrix(m: &EmbeddingMatrix, path: &Path) -> Result<(), EmbeddingError> {
    Ok(write_atomic(path, &encode_matrix(m))?)
}

pub fn read_matrix(path: &Path) -> Result<EmbeddingMatrix, EmbeddingError> {
    decode_matrix(&fs::read(path)?)
}

/// Scales every row to unit Euclidean norm (computed in f64).
pub fn l2_normalize(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix, EmbeddingError> {
    let mut data = m.data.clone();
    if m.dim > 0 {
        for (i, row) in data.chunks_exact_mut(m.dim).enumerate() {
            let norm = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(EmbeddingError::ZeroRow(m.ids[i].clone()));
            }
            for v in row.iter_mut() {
                *v = (f64::from(*v) / norm) as f32;
            }
        }
    }
    EmbeddingMatrix::new(m.ids.clone(), m.dim, data)
}

/// Row-major inner-product matrix between a left and a right matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    left_ids: Vec<String>,
    right_ids: Vec<String>,
    values: Vec<f32>,
}

impl SimilarityMatrix {
    pub fn new(left_ids: Vec<String>, right_ids: Vec<String>, values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if left_ids.len() * right_ids.len() != values.len() {
            return Err(EmbeddingError::HeaderMismatch(format!(
                "{} x {} similarity needs {} values, got {}",
                left_ids.len(),
                right_ids.len(),
                left_ids.len() * right_ids.len(),
                values.len()
            )));
        }
        check_unique(&left_ids)?;
        check_unique(&right_ids)?;
        check_finite(&values, right_ids.len())?;
        Ok(Self {
            left_ids,
            right_ids,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.left_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.right_ids.len()
    }

    pub fn left_ids(&self) -> &[String] {
        &self.left_ids
    }

    pub fn right_ids(&self) -> &[String] {
        &self.right_ids
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let n = self.cols();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.cols() + j]
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut values = vec![0f32; r * c];
        for i in 0..r {
            for j in 0..c {
                values[j * r + i] = self.values[i * c + j];
            }
        }
        Self {
            left_ids: self.right_ids.clone(),
            right_ids: self.left_ids.clone(),
            values,
        }
    }

    /// Sub-matrix over the given row and column indices.
    pub fn restrict(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            let row = self.row(i);
            values.extend(cols.iter().map(|&j| row[j]));
        }
        Self {
            left_ids: rows.iter().map(|&i| self.left_ids[i].clone()).collect(),
            right_ids: cols.iter().map(|&j| self.right_ids[j].clone()).collect(),
            values,
        }
    }
}

/// Row-major dot products in f64, fixed left-to-right order within each
/// entry so the result does not depend on the thread schedule.
pub(crate) fn gram_f64(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Vec<f64> {
    let n = b.rows();
    let mut out = vec![0f64; a.rows() * n];
    if n == 0 {
        return out;
    }
    out.par_chunks_mut(n).enumerate().for_each(|(i, dst)| {
        let left = a.row(i);
        for (j, cell) in dst.iter_mut().enumerate() {
            let right = b.row(j);
            let mut acc = 0f64;
            for k in 0..left.len() {
                acc += f64::from(left[k]) * f64::from(right[k]);
            }
            *cell = acc;
        }
    });
    out
}

/// `values[i][j] = dot(a.row(i), b.row(j))`, f64 accumulation stored as f32.
pub fn similarity(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<SimilarityMatrix, EmbeddingError> {
    if a.dim != b.dim {
        return Err(EmbeddingError::DimMismatch {
            left: a.dim,
            right: b.dim,
        });
    }
    if a.rows() != b.rows() {
        return Err(EmbeddingError::RowCountMismatch {
            left: a.rows(),
            right: b.rows(),
        });
    }
    let values = gram_f64(a, b).into_iter().map(|v| v as f32).collect();
    Ok(SimilarityMatrix {
        left_ids: a.ids.clone(),
        right_ids: b.ids.clone(),
        values,
    })
}

pub fn write_similarity(s: &SimilarityMatrix, path: &Path) -> Result<(), EmbeddingError> {
    let header = Header {
        rows: s.rows(),
        dim: s.cols(),
        dtype: DTYPE.into(),
        ids: s.left_ids.clone(),
        col_ids: Some(s.right_ids.clone()),
    };
    Ok(write_atomic(path, &encode(&header, &s.values))?)
}

/// Reads a similarity file. A plain square matrix file without `col_ids`
/// is accepted and uses the row ids for the columns.
pub fn read_similarity(path: &Path) -> Result<SimilarityMatrix, EmbeddingError> {
    let (header, values) = decode(&fs::read(path)?)?;
    let right = match header.col_ids {
        Some(c) => c,
        None if header.rows == header.dim => header.ids.clone(),
        None => {
            return Err(EmbeddingError::HeaderMismatch(
                "similarity file without col_ids must be square".into(),
            ))
        }
    };
    if right.len() != header.dim {
        return Err(EmbeddingError::HeaderMismatch(format!(
            "{} column ids for {} columns",
            right.len(),
            header.dim
        )));
    }
    SimilarityMatrix::new(header.ids, right, values)
}
