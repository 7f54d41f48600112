//! Supervised linear alignment: PCA to a common dimension, then orthogonal
//! Procrustes from the source space onto the target space.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::SVD;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::store::{self, EmbeddingSpace, Preprocessing};

pub const MAP_MAGIC: &[u8; 4] = b"MAP1";

/// Top-`k` principal axes of a data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel<T> {
    pub mean: Vec<T>,
    /// `k×d`, orthonormal rows, ordered by explained variance.
    pub components: Matrix<T>,
    /// Variance along each component, `n-1` denominator, non-increasing.
    pub explained_variance: Vec<T>,
}

impl<T: Scalar> PcaModel<T> {
    pub fn input_dim(&self) -> usize {
        self.components.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.components.rows()
    }
}

fn svd<T: Scalar>(m: &Matrix<T>, compute_u: bool) -> Result<SVD<T, nalgebra::Dyn, nalgebra::Dyn>> {
    if m.has_non_finite() {
        return Err(Error::Validation("matrix contains NaN or infinity".into()));
    }
    SVD::try_new(m.to_dmatrix(), compute_u, true, T::EPS, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))
}

/// Fits a `k`-component PCA on the rows of `x`.
///
/// Components are the leading right singular vectors of the centered data.
/// Each component is sign-flipped so that its entry of largest magnitude is
/// non-negative.
pub fn fit_pca<T: Scalar>(x: &Matrix<T>, k: usize) -> Result<PcaModel<T>> {
    let (n, d) = x.shape();
    if k == 0 || n < 2 || k > (n - 1).min(d) {
        return Err(Error::Parameter(format!(
            "cannot extract {k} components from {n} rows of dimension {d} (need 1 <= k <= min(n-1, d))"
        )));
    }
    let mean = x.column_means();
    let centered = x.sub_row_vector(&mean)?;
    let decomposition = svd(&centered, false)?;
    let v_t = decomposition
        .v_t
        .as_ref()
        .ok_or_else(|| Error::Numerical("SVD returned no right singular vectors".into()))?;
    let sv = &decomposition.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap().then(a.cmp(&b)));
    let s_max = sv[order[0]];
    let tol = s_max * T::from_usize(n.max(d)).unwrap() * T::EPS;
    let rank = order.iter().filter(|&&i| sv[i] > tol).count();
    if rank < k {
        return Err(Error::RankDeficient { requested: k, rank });
    }

    let denom = T::from_usize(n - 1).unwrap();
    let mut components = Matrix::zeros(k, d);
    let mut explained_variance = Vec::with_capacity(k);
    for (c, &i) in order.iter().take(k).enumerate() {
        let row: Vec<T> = (0..d).map(|j| v_t[(i, j)]).collect();
        let pivot = row
            .iter()
            .enumerate()
            .fold((0, T::zero()), |best, (j, &v)| {
                if v.abs() > best.1 {
                    (j, v.abs())
                } else {
                    best
                }
            })
            .0;
        let sign = if row[pivot] < T::zero() {
            -T::one()
        } else {
            T::one()
        };
        for (dst, v) in components.row_mut(c).iter_mut().zip(row) {
            *dst = v * sign;
        }
        explained_variance.push(sv[i] * sv[i] / denom);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

/// `(x − mean) · componentsᵀ`.
pub fn apply_pca<T: Scalar>(model: &PcaModel<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    if x.cols() != model.input_dim() {
        return Err(Error::Shape(format!(
            "PCA expects {} columns, got {}",
            model.input_dim(),
            x.cols()
        )));
    }
    x.sub_row_vector(&model.mean)?.matmul_t(&model.components)
}

/// Square orthogonal matrix applied on the right: `mapped = x · omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalMap<T> {
    pub omega: Matrix<T>,
}

impl<T: Scalar> OrthogonalMap<T> {
    pub fn new(omega: Matrix<T>) -> Result<Self> {
        if omega.rows() != omega.cols() {
            return Err(Error::Shape(format!(
                "map must be square, got {:?}",
                omega.shape()
            )));
        }
        Ok(OrthogonalMap { omega })
    }

    pub fn identity(d: usize) -> Self {
        OrthogonalMap {
            omega: Matrix::identity(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.omega.rows()
    }

    pub fn apply(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        x.matmul(&self.omega)
    }

    /// Largest absolute entry of `ΩᵀΩ − I`.
    pub fn orthogonality_error(&self) -> T {
        let gram = self.omega.t_matmul(&self.omega).expect("square");
        let mut worst = T::zero();
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                let target = if i == j { T::one() } else { T::zero() };
                worst = worst.max((gram.get(i, j) - target).abs());
            }
        }
        worst
    }
}

/// Orthogonal `Ω` minimising `‖AΩ − B‖_F`: with `AᵀB = UΣVᵀ`, `Ω = UVᵀ`.
/// Rows of `a` and `b` are paired.
pub fn fit_procrustes<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<OrthogonalMap<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "paired matrices differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::Insufficient(
            "Procrustes needs at least one pair".into(),
        ));
    }
    let cross = a.t_matmul(b)?;
    if cross.has_non_finite() {
        return Err(Error::Validation("AᵀB contains NaN or infinity".into()));
    }
    let decomposition = svd(&cross, true)?;
    let (Some(u), Some(v_t)) = (decomposition.u, decomposition.v_t) else {
        return Err(Error::Numerical("SVD returned no singular vectors".into()));
    };
    OrthogonalMap::new(Matrix::from_dmatrix(&(u * v_t)))
}

/// Which rows the PCA of the larger space is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PcaFit {
    /// Only the rows that appear in training pairs.
    #[default]
    TrainPairs,
    /// Every row of the space.
    AllRows,
}

/// How a source concept with several target aliases enters Procrustes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AliasRows {
    /// One row per pair; the source vector is repeated.
    #[default]
    Repeat,
    /// One row per source label; its aliases' target vectors are averaged.
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AlignOptions {
    pub preprocessing: Preprocessing,
    pub pca_fit: PcaFit,
    pub alias_rows: AliasRows,
    /// Asks for PCA even when dimensions agree. It is ignored (with a
    /// warning) in that case, since only a larger space is ever reduced.
    pub force_pca: bool,
}

/// Fitted source → target pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentModel {
    pub source_pca: Option<PcaModel<f64>>,
    pub target_pca: Option<PcaModel<f64>>,
    pub map: OrthogonalMap<f64>,
    pub preprocessing: Preprocessing,
    pub common_dim: usize,
}

impl AlignmentModel {
    pub fn source_dim(&self) -> usize {
        self.source_pca
            .as_ref()
            .map_or(self.common_dim, |p| p.input_dim())
    }

    pub fn target_dim(&self) -> usize {
        self.target_pca
            .as_ref()
            .map_or(self.common_dim, |p| p.input_dim())
    }

    fn check(&self) -> Result<()> {
        if self.source_pca.is_some() && self.target_pca.is_some() {
            return Err(Error::Validation(
                "only one side of an alignment may be reduced".into(),
            ));
        }
        if self.map.dim() != self.common_dim {
            return Err(Error::Shape(format!(
                "map is {0}x{0} but common dimension is {1}",
                self.map.dim(),
                self.common_dim
            )));
        }
        for pca in self.source_pca.iter().chain(&self.target_pca) {
            if pca.output_dim() != self.common_dim {
                return Err(Error::Shape(format!(
                    "PCA reduces to {} but common dimension is {}",
                    pca.output_dim(),
                    self.common_dim
                )));
            }
        }
        Ok(())
    }
}

fn resolve_pairs(
    source: &EmbeddingSpace,
    target: &EmbeddingSpace,
    pairs: &[(String, String)],
) -> Result<Vec<(usize, usize)>> {
    pairs
        .iter()
        .map(|(s, t)| Ok((source.require(s)?, target.require(t)?)))
        .collect()
}

fn unique_in_order(rows: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut seen = std::collections::HashSet::new();
    rows.filter(|r| seen.insert(*r)).collect()
}

/// Fits preprocessing, PCA (on the larger side, if dimensions differ) and
/// the orthogonal map from `pairs` of (source label, target label).
pub fn fit_alignment(
    source: &EmbeddingSpace,
    target: &EmbeddingSpace,
    pairs: &[(String, String)],
    options: AlignOptions,
) -> Result<AlignmentModel> {
    if pairs.len() < 2 {
        return Err(Error::Insufficient(format!(
            "alignment needs at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    let rows = resolve_pairs(source, target, pairs)?;
    let mut src = store::preprocess_f64(source, options.preprocessing)?;
    let mut tgt = store::preprocess_f64(target, options.preprocessing)?;

    if options.force_pca && source.dim() == target.dim() {
        log::warn!(
            "both spaces have dimension {}; PCA request ignored",
            source.dim()
        );
    }
    let common_dim = source.dim().min(target.dim());
    let fit_rows = |m: &Matrix<f64>, picked: Vec<usize>| match options.pca_fit {
        PcaFit::TrainPairs => m.select_rows(&picked),
        PcaFit::AllRows => m.clone(),
    };
    let mut source_pca = None;
    let mut target_pca = None;
    if source.dim() > target.dim() {
        let train = fit_rows(&src, unique_in_order(rows.iter().map(|r| r.0)));
        let pca = fit_pca(&train, common_dim)?;
        src = apply_pca(&pca, &src)?;
        source_pca = Some(pca);
    } else if target.dim() > source.dim() {
        let train = fit_rows(&tgt, unique_in_order(rows.iter().map(|r| r.1)));
        let pca = fit_pca(&train, common_dim)?;
        tgt = apply_pca(&pca, &tgt)?;
        target_pca = Some(pca);
    }

    let (a, b) = match options.alias_rows {
        AliasRows::Repeat => (
            src.select_rows(&rows.iter().map(|r| r.0).collect::<Vec<_>>()),
            tgt.select_rows(&rows.iter().map(|r| r.1).collect::<Vec<_>>()),
        ),
        AliasRows::Average => {
            let sources = unique_in_order(rows.iter().map(|r| r.0));
            let mut grouped: HashMap<usize, Vec<usize>> = HashMap::new();
            for &(s, t) in &rows {
                grouped.entry(s).or_default().push(t);
            }
            let averaged: Vec<Vec<f64>> = sources
                .iter()
                .map(|s| {
                    let targets = &grouped[s];
                    let mut acc = vec![0.0; common_dim];
                    for &t in targets {
                        for (a, v) in acc.iter_mut().zip(tgt.row(t)) {
                            *a += v;
                        }
                    }
                    acc.iter_mut().for_each(|a| *a /= targets.len() as f64);
                    acc
                })
                .collect();
            (src.select_rows(&sources), Matrix::from_rows(&averaged)?)
        }
    };
    let map = fit_procrustes(&a, &b)?;
    Ok(AlignmentModel {
        source_pca,
        target_pca,
        map,
        preprocessing: options.preprocessing,
        common_dim,
    })
}

/// Preprocessing, source PCA and `Ω` applied to `space`, in `f64`.
pub fn map_source_f64(model: &AlignmentModel, space: &EmbeddingSpace) -> Result<Matrix<f64>> {
    if space.dim() != model.source_dim() {
        return Err(Error::Shape(format!(
            "model expects source dimension {}, space has {}",
            model.source_dim(),
            space.dim()
        )));
    }
    let mut x = store::preprocess_f64(space, model.preprocessing)?;
    if let Some(pca) = &model.source_pca {
        x = apply_pca(pca, &x)?;
    }
    model.map.apply(&x)
}

/// Maps a source-side space into the common space. Labels are unchanged.
pub fn apply_map(model: &AlignmentModel, space: &EmbeddingSpace) -> Result<EmbeddingSpace> {
    space.with_vectors(map_source_f64(model, space)?.cast())
}

/// Brings a target-side space (e.g. the candidate vocabulary) into the
/// common space: the same preprocessing, then the target PCA if any.
pub fn prepare_target(model: &AlignmentModel, space: &EmbeddingSpace) -> Result<EmbeddingSpace> {
    if space.dim() != model.target_dim() {
        return Err(Error::Shape(format!(
            "model expects target dimension {}, space has {}",
            model.target_dim(),
            space.dim()
        )));
    }
    match &model.target_pca {
        Some(pca) => {
            let x = store::preprocess_f64(space, model.preprocessing)?;
            space.with_vectors(apply_pca(pca, &x)?.cast())
        }
        None => store::preprocess(space, model.preprocessing),
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Validation(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a model:
/// `"MAP1"`, `u32` common_dim, `u8` flags (bit 0 source PCA, bit 1 target
/// PCA, bits 2-3 preprocessing code), each present PCA as `u32 k, u32 d`,
/// mean, components and variances, then `Ω`; all floats `f64` LE row-major.
pub fn encode_model(model: &AlignmentModel) -> Result<Vec<u8>> {
    model.check()?;
    let mut out = Vec::new();
    out.extend_from_slice(MAP_MAGIC);
    put_u32(&mut out, model.common_dim)?;
    let flags = u8::from(model.source_pca.is_some())
        | (u8::from(model.target_pca.is_some()) << 1)
        | (model.preprocessing.code() << 2);
    out.push(flags);
    for pca in model.source_pca.iter().chain(&model.target_pca) {
        put_u32(&mut out, pca.output_dim())?;
        put_u32(&mut out, pca.input_dim())?;
        put_f64s(&mut out, &pca.mean);
        put_f64s(&mut out, pca.components.as_slice());
        put_f64s(&mut out, &pca.explained_variance);
    }
    put_f64s(&mut out, model.map.omega.as_slice());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::format(
                    self.path,
                    format!("truncated at byte {} (needed {n} more)", self.pos),
                )
            })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::format(self.path, "size overflow"))?,
        )?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "{} contains NaN or infinity",
                self.path.display()
            )));
        }
        Ok(values)
    }

    fn pca(&mut self) -> Result<PcaModel<f64>> {
        let k = self.u32()?;
        let d = self.u32()?;
        let mean = self.f64s(d)?;
        let components = Matrix::new(k, d, self.f64s(k * d)?)?;
        let explained_variance = self.f64s(k)?;
        Ok(PcaModel {
            mean,
            components,
            explained_variance,
        })
    }
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<AlignmentModel> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != MAP_MAGIC {
        return Err(Error::format(path, "bad magic, expected \"MAP1\""));
    }
    let common_dim = r.u32()?;
    let flags = r.take(1)?[0];
    if flags >> 4 != 0 {
        return Err(Error::format(
            path,
            format!("unknown flag bits in {flags:#010b}"),
        ));
    }
    let preprocessing = Preprocessing::from_code((flags >> 2) & 0b11)
        .ok_or_else(|| Error::format(path, "unknown preprocessing code"))?;
    let source_pca = if flags & 1 != 0 { Some(r.pca()?) } else { None };
    let target_pca = if flags & 2 != 0 { Some(r.pca()?) } else { None };
    let omega = Matrix::new(common_dim, common_dim, r.f64s(common_dim * common_dim)?)?;
    if r.pos != bytes.len() {
        return Err(Error::format(
            path,
            format!("{} trailing bytes", bytes.len() - r.pos),
        ));
    }
    let model = AlignmentModel {
        source_pca,
        target_pca,
        map: OrthogonalMap::new(omega)?,
        preprocessing,
        common_dim,
    };
    model.check()?;
    Ok(model)
}

pub fn save_model(model: &AlignmentModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_model(model)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<AlignmentModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}
