//! Synthetic embedding spaces with known ground truth.
//!
//! All generators are pure functions of their [`SynthConfig`]. Sources are
//! drawn as standard Gaussians rather than uniformly on the sphere; after
//! unit-l2 preprocessing the two coincide in distribution.

use std::fmt;
use std::str::FromStr;

use nalgebra::QR;
use serde::{Deserialize, Serialize};

use crate::align::OrthogonalMap;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{gaussian_vec, stream_rng};
use crate::store::EmbeddingSpace;

const SOURCE_STREAM: u64 = 0;
const ROTATION_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const TARGET_STREAM: u64 = 3;

/// Label of the extra candidate in a hub instance.
pub const HUB_LABEL: &str = "hub";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    /// Target is a rotation of the source (then truncated), plus noise.
    Isomorphic,
    /// Independent Gaussians on both sides.
    Unrelated,
    /// Queries around a common direction, a noisy true partner for each,
    /// and one extra candidate at the query centroid.
    Hubby,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Isomorphic => "isomorphic",
            Relation::Unrelated => "unrelated",
            Relation::Hubby => "hubby",
        })
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isomorphic" => Ok(Relation::Isomorphic),
            "unrelated" => Ok(Relation::Unrelated),
            "hubby" => Ok(Relation::Hubby),
            other => Err(Error::Parameter(format!("unknown relation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub d_source: usize,
    pub d_target: usize,
    /// Standard deviation of the additive Gaussian noise per coordinate.
    pub noise_sigma: f64,
    pub seed: u64,
    pub relation: Relation,
}

impl SynthConfig {
    fn validate(&self, expected: Relation) -> Result<()> {
        if self.relation != expected {
            return Err(Error::Parameter(format!(
                "generator for {expected} spaces called with relation {}",
                self.relation
            )));
        }
        if self.n == 0 || self.d_source == 0 || self.d_target == 0 {
            return Err(Error::Parameter(
                "n and both dimensions must be positive".into(),
            ));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::Parameter(format!(
                "noise sigma {} must be >= 0",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Generated source/target spaces with their ground-truth pairing.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub source: EmbeddingSpace,
    pub target: EmbeddingSpace,
    pub pairs: Vec<(String, String)>,
}

/// Haar-distributed orthogonal matrix: QR of a seeded Gaussian matrix with
/// the signs of `R`'s diagonal folded into `Q`.
pub fn random_orthogonal(d: usize, seed: u64) -> OrthogonalMap<f64> {
    assert!(d >= 1, "dimension must be positive");
    let g = Matrix::new(
        d,
        d,
        gaussian_vec(&mut stream_rng(seed, ROTATION_STREAM), d * d),
    )
    .expect("square");
    let qr = QR::new(g.to_dmatrix());
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    OrthogonalMap {
        omega: Matrix::from_dmatrix(&q),
    }
}

pub fn concept_label(i: usize) -> String {
    format!("c{i:05}")
}

fn labels(n: usize) -> Vec<String> {
    (0..n).map(concept_label).collect()
}

fn identity_pairs(n: usize) -> Vec<(String, String)> {
    labels(n).into_iter().map(|l| (l.clone(), l)).collect()
}

fn gaussian(rows: usize, cols: usize, seed: u64, stream: u64) -> Matrix<f64> {
    Matrix::new(
        rows,
        cols,
        gaussian_vec(&mut stream_rng(seed, stream), rows * cols),
    )
    .expect("sized")
}

/// Isomorphic spaces in `f64` plus the rotation used:
/// `target = (source · Q)[:, ..d_target] + σ·N(0, 1)`.
pub fn paired_matrices(
    config: &SynthConfig,
) -> Result<(Matrix<f64>, Matrix<f64>, OrthogonalMap<f64>)> {
    config.validate(Relation::Isomorphic)?;
    if config.d_target > config.d_source {
        return Err(Error::Parameter(format!(
            "isomorphic target dimension {} exceeds source dimension {}",
            config.d_target, config.d_source
        )));
    }
    let source = gaussian(config.n, config.d_source, config.seed, SOURCE_STREAM);
    let q = random_orthogonal(config.d_source, config.seed);
    let mut target = source.matmul(&q.omega)?;
    if config.d_target < config.d_source {
        target = target.truncate_cols(config.d_target);
    }
    if config.noise_sigma > 0.0 {
        let noise = gaussian(config.n, config.d_target, config.seed, NOISE_STREAM);
        for (t, e) in target.as_mut_slice().iter_mut().zip(noise.as_slice()) {
            *t += config.noise_sigma * e;
        }
    }
    Ok((source, target, q))
}

fn to_space(m: &Matrix<f64>, labels: Vec<String>) -> Result<EmbeddingSpace> {
    EmbeddingSpace::new(labels, m.cast())
}

pub fn gen_paired_spaces(config: &SynthConfig) -> Result<SyntheticPair> {
    let (source, target, _) = paired_matrices(config)?;
    Ok(SyntheticPair {
        source: to_space(&source, labels(config.n))?,
        target: to_space(&target, labels(config.n))?,
        pairs: identity_pairs(config.n),
    })
}

/// Independent Gaussian spaces; the identity pairing carries no signal.
pub fn gen_unrelated_spaces(config: &SynthConfig) -> Result<SyntheticPair> {
    config.validate(Relation::Unrelated)?;
    let source = gaussian(config.n, config.d_source, config.seed, SOURCE_STREAM);
    let target = gaussian(config.n, config.d_target, config.seed, TARGET_STREAM);
    Ok(SyntheticPair {
        source: to_space(&source, labels(config.n))?,
        target: to_space(&target, labels(config.n))?,
        pairs: identity_pairs(config.n),
    })
}

/// Hub instance in a shared space (`d_source == d_target`).
///
/// Query `i` is `m + g_i/√d` for a random unit direction `m`; its true
/// candidate adds `σ·h_i/√d` (σ = `noise_sigma`); the last candidate,
/// labelled [`HUB_LABEL`], is the mean of all queries. For σ above about
/// 1.4 the hub is closer in cosine to most queries than their partners.
pub fn gen_hub_spaces(config: &SynthConfig) -> Result<SyntheticPair> {
    config.validate(Relation::Hubby)?;
    if config.d_source != config.d_target {
        return Err(Error::Parameter(
            "hub instances need equal dimensions".into(),
        ));
    }
    let (n, d) = (config.n, config.d_source);
    let scale = 1.0 / (d as f64).sqrt();
    let direction = gaussian_vec(&mut stream_rng(config.seed, ROTATION_STREAM), d);
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    let spread = gaussian(n, d, config.seed, SOURCE_STREAM);
    let queries = Matrix::from_fn(n, d, |i, j| direction[j] / norm + spread.get(i, j) * scale);
    let noise = gaussian(n, d, config.seed, NOISE_STREAM);
    let centroid = queries.column_means();
    let candidates = Matrix::from_fn(n + 1, d, |i, j| {
        if i == n {
            centroid[j]
        } else {
            queries.get(i, j) + config.noise_sigma * noise.get(i, j) * scale
        }
    });
    let mut target_labels = labels(n);
    target_labels.push(HUB_LABEL.to_owned());
    Ok(SyntheticPair {
        source: to_space(&queries, labels(n))?,
        target: to_space(&candidates, target_labels)?,
        pairs: identity_pairs(n),
    })
}

/// Dispatches on `config.relation`.
pub fn generate(config: &SynthConfig) -> Result<SyntheticPair> {
    match config.relation {
        Relation::Isomorphic => gen_paired_spaces(config),
        Relation::Unrelated => gen_unrelated_spaces(config),
        Relation::Hubby => gen_hub_spaces(config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(relation: Relation) -> SynthConfig {
        SynthConfig {
            n: 50,
            d_source: 8,
            d_target: 8,
            noise_sigma: 0.0,
            seed: 11,
            relation,
        }
    }

    #[test]
    fn one_dimensional_rotation_is_a_sign() {
        for seed in 0..10 {
            let q = random_orthogonal(1, seed);
            assert_eq!(q.omega.get(0, 0).abs(), 1.0);
        }
    }

    #[test]
    fn random_orthogonal_is_deterministic_and_orthogonal() {
        let a = random_orthogonal(16, 5);
        assert_eq!(a, random_orthogonal(16, 5));
        assert_ne!(a, random_orthogonal(16, 6));
        assert!(a.orthogonality_error() < 1e-10);
        let det = a.omega.to_dmatrix().determinant();
        assert!((det.abs() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn noise_free_target_is_the_rotated_source() {
        let cfg = config(Relation::Isomorphic);
        let (s, t, q) = paired_matrices(&cfg).unwrap();
        assert!(
            s.matmul(&q.omega)
                .unwrap()
                .sub(&t)
                .unwrap()
                .frobenius_norm()
                < 1e-12
        );
    }

    #[test]
    fn truncation_and_dimension_checks() {
        let mut cfg = config(Relation::Isomorphic);
        cfg.d_target = 5;
        let pair = gen_paired_spaces(&cfg).unwrap();
        assert_eq!((pair.source.dim(), pair.target.dim()), (8, 5));
        cfg.d_target = 9;
        assert!(gen_paired_spaces(&cfg).is_err());
    }

    #[test]
    fn generators_reject_wrong_relation() {
        assert!(gen_paired_spaces(&config(Relation::Unrelated)).is_err());
        assert!(gen_unrelated_spaces(&config(Relation::Isomorphic)).is_err());
        assert!(gen_hub_spaces(&config(Relation::Unrelated)).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        for relation in [Relation::Isomorphic, Relation::Unrelated, Relation::Hubby] {
            let mut cfg = config(relation);
            cfg.noise_sigma = 0.3;
            let a = generate(&cfg).unwrap();
            let b = generate(&cfg).unwrap();
            assert_eq!(a.source, b.source);
            assert_eq!(a.target, b.target);
            assert_eq!(a.pairs, b.pairs);
        }
    }

    #[test]
    fn hub_is_the_query_centroid() {
        let pair = gen_hub_spaces(&config(Relation::Hubby)).unwrap();
        assert_eq!(pair.target.len(), 51);
        let hub = pair.target.row(pair.target.require(HUB_LABEL).unwrap());
        let mean = pair.source.vectors().column_means();
        for (a, b) in hub.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
