//! Raw tensor directories: a `manifest.json` next to one headerless `.bin`
//! file per tensor, row-major and little-endian.
//!
//! Feature bundles, head decompositions and translators all use this layout;
//! each defines its own manifest struct embedding a list of [`TensorEntry`].

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::to_row_major;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    /// Only used by derived artifacts (decompositions, translators), never by bundles.
    F64,
    I64,
}

impl DType {
    pub fn width(self) -> u64 {
        match self {
            DType::F32 => 4,
            DType::F64 | DType::I64 => 8,
        }
    }
}

/// One tensor as described in a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub file: String,
    pub byte_order: String,
}

impl TensorEntry {
    pub fn new(name: &str, dtype: DType, shape: Vec<usize>) -> Self {
        Self {
            name: name.to_string(),
            dtype,
            file: format!("{name}.bin"),
            shape,
            byte_order: "little".to_string(),
        }
    }

    pub fn element_count(&self) -> u64 {
        self.shape.iter().map(|&d| d as u64).product()
    }

    pub fn byte_len(&self) -> u64 {
        self.element_count() * self.dtype.width()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl TensorData {
    fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::I64(_) => DType::I64,
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            TensorData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorData::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorData::I64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    fn from_le_bytes(dtype: DType, bytes: &[u8]) -> Self {
        match dtype {
            DType::F32 => TensorData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::I64 => TensorData::I64(
                bytes
                    .chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        }
    }
}

/// A named tensor ready to be written.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn matrix_f32(name: &str, m: &DMatrix<f32>) -> Self {
        Self {
            name: name.into(),
            shape: vec![m.nrows(), m.ncols()],
            data: TensorData::F32(to_row_major(m)),
        }
    }

    pub fn matrix_f64(name: &str, m: &DMatrix<f64>) -> Self {
        Self {
            name: name.into(),
            shape: vec![m.nrows(), m.ncols()],
            data: TensorData::F64(to_row_major(m)),
        }
    }

    pub fn vector_f32(name: &str, v: &DVector<f32>) -> Self {
        Self {
            name: name.into(),
            shape: vec![v.len()],
            data: TensorData::F32(v.as_slice().to_vec()),
        }
    }

    pub fn vector_f64(name: &str, v: &DVector<f64>) -> Self {
        Self {
            name: name.into(),
            shape: vec![v.len()],
            data: TensorData::F64(v.as_slice().to_vec()),
        }
    }

    pub fn vector_i64(name: &str, v: &[i64]) -> Self {
        Self {
            name: name.into(),
            shape: vec![v.len()],
            data: TensorData::I64(v.to_vec()),
        }
    }
}

/// Writes each tensor as `<name>.bin` under `dir` and returns the manifest entries.
pub fn write_tensors(dir: &Path, tensors: &[Tensor]) -> Result<Vec<TensorEntry>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for t in tensors {
        if !seen.insert(t.name.as_str()) {
            return Err(Error::schema(&t.name, "duplicate tensor name"));
        }
        let entry = TensorEntry::new(&t.name, t.data.dtype(), t.shape.clone());
        if entry.element_count() != t.data.len() as u64 {
            return Err(Error::schema(
                &t.name,
                format!("shape {:?} does not match {} elements", t.shape, t.data.len()),
            ));
        }
        let path = dir.join(&entry.file);
        fs::write(&path, t.data.to_le_bytes()).map_err(|e| Error::io(&path, e))?;
        entries.push(entry);
    }
    Ok(entries)
}

pub fn write_manifest<M: Serialize>(dir: &Path, manifest: &M) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest<M: for<'de> Deserialize<'de>>(dir: &Path) -> Result<M> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Checks manifest-level entry invariants: unique names, little-endian,
/// files inside the directory.
pub fn check_entries(entries: &[TensorEntry]) -> Result<()> {
    let mut seen = HashSet::new();
    for e in entries {
        if !seen.insert(e.name.as_str()) {
            return Err(Error::schema(&e.name, "duplicate tensor name"));
        }
        if e.byte_order != "little" {
            return Err(Error::schema(
                &e.name,
                format!("byte_order must be \"little\", found {:?}", e.byte_order),
            ));
        }
        let p = Path::new(&e.file);
        if p.is_absolute() || p.components().any(|c| c == std::path::Component::ParentDir) {
            return Err(Error::schema(&e.name, "tensor file must be a relative path"));
        }
    }
    Ok(())
}

pub fn read_tensor(dir: &Path, entry: &TensorEntry) -> Result<TensorData> {
    let path = dir.join(&entry.file);
    let meta = fs::metadata(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingTensor {
            tensor: entry.name.clone(),
            path: path.clone(),
        },
        _ => Error::io(&path, e),
    })?;
    let expected = entry.byte_len();
    if meta.len() != expected {
        return Err(Error::ByteCountMismatch {
            tensor: entry.name.clone(),
            expected,
            actual: meta.len(),
        });
    }
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(TensorData::from_le_bytes(entry.dtype, &bytes))
}

/// Typed access to the tensors of one manifest.
pub struct TensorReader<'a> {
    dir: &'a Path,
    entries: &'a [TensorEntry],
}

impl<'a> TensorReader<'a> {
    pub fn new(dir: &'a Path, entries: &'a [TensorEntry]) -> Result<Self> {
        check_entries(entries)?;
        Ok(Self { dir, entries })
    }

    pub fn entry(&self, name: &str) -> Option<&'a TensorEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn require(&self, name: &str) -> Result<&'a TensorEntry> {
        self.entry(name)
            .ok_or_else(|| Error::schema(name, "tensor not declared in manifest"))
    }

    fn expect_rank(entry: &TensorEntry, rank: usize) -> Result<()> {
        if entry.shape.len() != rank {
            return Err(Error::schema(
                &entry.name,
                format!("expected rank-{rank} shape, found {:?}", entry.shape),
            ));
        }
        Ok(())
    }

    fn wrong_dtype(entry: &TensorEntry, want: DType) -> Error {
        Error::schema(&entry.name, format!("expected dtype {want:?}, found {:?}", entry.dtype))
    }

    pub fn matrix_f32(&self, name: &str) -> Result<DMatrix<f32>> {
        let e = self.require(name)?;
        Self::expect_rank(e, 2)?;
        match read_tensor(self.dir, e)? {
            TensorData::F32(v) => Ok(DMatrix::from_row_slice(e.shape[0], e.shape[1], &v)),
            _ => Err(Self::wrong_dtype(e, DType::F32)),
        }
    }

    pub fn matrix_f64(&self, name: &str) -> Result<DMatrix<f64>> {
        let e = self.require(name)?;
        Self::expect_rank(e, 2)?;
        match read_tensor(self.dir, e)? {
            TensorData::F64(v) => Ok(DMatrix::from_row_slice(e.shape[0], e.shape[1], &v)),
            _ => Err(Self::wrong_dtype(e, DType::F64)),
        }
    }

    pub fn vector_f32(&self, name: &str) -> Result<DVector<f32>> {
        let e = self.require(name)?;
        Self::expect_rank(e, 1)?;
        match read_tensor(self.dir, e)? {
            TensorData::F32(v) => Ok(DVector::from_vec(v)),
            _ => Err(Self::wrong_dtype(e, DType::F32)),
        }
    }

    pub fn vector_f64(&self, name: &str) -> Result<DVector<f64>> {
        let e = self.require(name)?;
        Self::expect_rank(e, 1)?;
        match read_tensor(self.dir, e)? {
            TensorData::F64(v) => Ok(DVector::from_vec(v)),
            _ => Err(Self::wrong_dtype(e, DType::F64)),
        }
    }

    pub fn vector_i64(&self, name: &str) -> Result<Vec<i64>> {
        let e = self.require(name)?;
        Self::expect_rank(e, 1)?;
        match read_tensor(self.dir, e)? {
            TensorData::I64(v) => Ok(v),
            _ => Err(Self::wrong_dtype(e, DType::I64)),
        }
    }
}
