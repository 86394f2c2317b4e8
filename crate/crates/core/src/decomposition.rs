//! SVD of the classifier head and the principal/null projectors.
//!
//! For a head `W` (c x m) with SVD `W = U S V^T`, the right singular vectors
//! split into the principal basis `V_p` (singular values above the rank
//! tolerance) and the null basis `V_n` (the rest, completed to a full
//! orthonormal basis of R^m). Any `v` in span(`V_n`) satisfies `W v = 0`, so
//! `f` and `f + v` have identical logits.
//!
//! `V_n` is not unique (any rotation inside the null space works); the
//! projectors `P_p = V_p V_p^T` and `P_n = V_n V_n^T` are.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::check_len;
use crate::store::{self, Tensor, TensorEntry, TensorReader, FORMAT_VERSION};

/// How the numerical rank of `W` is decided.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum RankTolerance {
    /// `tau = rho * sigma_max`.
    Relative(f64),
    /// Fixed `tau`.
    Absolute(f64),
    /// `tau = max(c, m) * sigma_max * machine epsilon`.
    #[default]
    Machine,
}

impl RankTolerance {
    pub fn threshold(self, rows: usize, cols: usize, sigma_max: f64) -> f64 {
        match self {
            RankTolerance::Relative(rho) => rho * sigma_max,
            RankTolerance::Absolute(tau) => tau,
            RankTolerance::Machine => rows.max(cols) as f64 * sigma_max * f64::EPSILON,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subspace {
    Principal,
    Null,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadDecomposition {
    /// Nonincreasing, length min(c, m).
    pub singular_values: DVector<f64>,
    /// Left singular vectors, c x min(c, m).
    pub left_vectors: DMatrix<f64>,
    /// m x r.
    pub principal_basis: DMatrix<f64>,
    /// m x (m - r).
    pub null_basis: DMatrix<f64>,
    pub proj_principal: DMatrix<f64>,
    pub proj_null: DMatrix<f64>,
    pub rank: usize,
    pub rank_tolerance: f64,
}

impl HeadDecomposition {
    pub fn feature_dim(&self) -> usize {
        self.proj_null.nrows()
    }

    pub fn null_dim(&self) -> usize {
        self.null_basis.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.left_vectors.nrows()
    }

    pub fn projector(&self, subspace: Subspace) -> &DMatrix<f64> {
        match subspace {
            Subspace::Principal => &self.proj_principal,
            Subspace::Null => &self.proj_null,
        }
    }

    pub fn project(&self, f: &DVector<f64>, subspace: Subspace) -> Result<DVector<f64>> {
        check_len("project", self.feature_dim(), f)?;
        Ok(self.projector(subspace) * f)
    }

    /// Top right-singular vector, if the head is nonzero.
    pub fn top_direction(&self) -> Option<DVector<f64>> {
        (self.rank > 0).then(|| self.principal_basis.column(0).into_owned())
    }
}

/// Computes the SVD of `w` and the principal/null split.
///
/// An all-zero head is valid and yields rank 0 with `P_n = I`.
pub fn decompose_head(w: &DMatrix<f64>, tolerance: RankTolerance) -> Result<HeadDecomposition> {
    let (c, m) = w.shape();
    if c == 0 || m == 0 {
        return Err(Error::EmptyInput("head weight matrix"));
    }
    if let Some(index) = w.transpose().iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            tensor: "head_weight".into(),
            index,
        });
    }

    // nalgebra's SVD can return inaccurate singular vectors for rank-deficient
    // inputs; faer's does not.
    let fw = faer::Mat::<f64>::from_fn(c, m, |i, j| w[(i, j)]);
    let svd = fw
        .svd()
        .map_err(|e| Error::Singular(format!("SVD of the head did not converge: {e:?}")))?;
    let (fu, fs, fv) = (svd.U(), svd.S(), svd.V());
    let k = c.min(m);

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| fs[b].total_cmp(&fs[a]));
    let singular_values = DVector::from_iterator(k, order.iter().map(|&i| fs[i]));
    let left_vectors = DMatrix::from_fn(c, k, |i, j| fu[(i, order[j])]);
    // Sorted singular directions first, then the rest of V (already orthogonal).
    let columns: Vec<usize> = order.iter().copied().chain(k..m).collect();
    let v = DMatrix::from_fn(m, m, |i, j| fv[(i, columns[j])]);

    let sigma_max = singular_values.get(0).copied().unwrap_or(0.0);
    let tau = tolerance.threshold(c, m, sigma_max);
    let rank = singular_values.iter().filter(|&&s| s > tau).count();

    let principal_basis = v.columns(0, rank).into_owned();
    let null_basis = v.columns(rank, m - rank).into_owned();

    let proj_principal = &principal_basis * principal_basis.transpose();
    let proj_null = &null_basis * null_basis.transpose();

    Ok(HeadDecomposition {
        singular_values,
        left_vectors,
        principal_basis,
        null_basis,
        proj_principal,
        proj_null,
        rank,
        rank_tolerance: tau,
    })
}

/// `W f + b`.
pub fn logits(w: &DMatrix<f64>, bias: Option<&DVector<f64>>, f: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("logits: feature", w.ncols(), f)?;
    let mut out = w * f;
    if let Some(b) = bias {
        check_len("logits: bias", w.nrows(), b)?;
        out += b;
    }
    Ok(out)
}

/// `||W P_n||_F`, the amount of the head that leaks into the null projector.
pub fn null_residual(w: &DMatrix<f64>, decomp: &HeadDecomposition) -> f64 {
    (w * &decomp.proj_null).norm()
}

#[derive(Debug, Serialize, Deserialize)]
struct DecompositionManifest {
    format_version: u32,
    kind: String,
    rank: usize,
    rank_tolerance: f64,
    feature_dim: usize,
    num_classes: usize,
    tensors: Vec<TensorEntry>,
}

const KIND: &str = "head_decomposition";

pub fn save_decomposition(decomp: &HeadDecomposition, dir: &Path) -> Result<()> {
    let tensors = store::write_tensors(
        dir,
        &[
            Tensor::vector_f64("singular_values", &decomp.singular_values),
            Tensor::matrix_f64("left_vectors", &decomp.left_vectors),
            Tensor::matrix_f64("principal_basis", &decomp.principal_basis),
            Tensor::matrix_f64("null_basis", &decomp.null_basis),
            Tensor::matrix_f64("proj_principal", &decomp.proj_principal),
            Tensor::matrix_f64("proj_null", &decomp.proj_null),
        ],
    )?;
    store::write_manifest(
        dir,
        &DecompositionManifest {
            format_version: FORMAT_VERSION,
            kind: KIND.into(),
            rank: decomp.rank,
            rank_tolerance: decomp.rank_tolerance,
            feature_dim: decomp.feature_dim(),
            num_classes: decomp.num_classes(),
            tensors,
        },
    )
}

pub fn load_decomposition(dir: &Path) -> Result<HeadDecomposition> {
    let manifest: DecompositionManifest = store::read_manifest(dir)?;
    if manifest.kind != KIND {
        return Err(Error::schema(
            "kind",
            format!("expected {KIND}, found {}", manifest.kind),
        ));
    }
    let reader = TensorReader::new(dir, &manifest.tensors)?;
    let decomp = HeadDecomposition {
        singular_values: reader.vector_f64("singular_values")?,
        left_vectors: reader.matrix_f64("left_vectors")?,
        principal_basis: reader.matrix_f64("principal_basis")?,
        null_basis: reader.matrix_f64("null_basis")?,
        proj_principal: reader.matrix_f64("proj_principal")?,
        proj_null: reader.matrix_f64("proj_null")?,
        rank: manifest.rank,
        rank_tolerance: manifest.rank_tolerance,
    };
    let m = manifest.feature_dim;
    let shapes_ok = decomp.principal_basis.shape() == (m, manifest.rank)
        && decomp.null_basis.shape() == (m, m - manifest.rank.min(m))
        && decomp.proj_principal.shape() == (m, m)
        && decomp.proj_null.shape() == (m, m);
    if !shapes_ok {
        return Err(Error::schema(
            "tensors",
            "shapes inconsistent with rank and feature_dim",
        ));
    }
    Ok(decomp)
}
