//! Spherical embedding arithmetic: unit-norm vectors, cosine, center of
//! gravity and semantic dispersion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::Similarity;

/// Norm tolerance for the unit-sphere invariant.
pub const UNIT_NORM_TOL: f64 = 1e-9;
/// Below this norm a vector (or a mean of vectors) is considered degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("zero vector: L2 norm {0} is below {DEGENERATE_NORM}")]
    ZeroVector(f64),
    #[error("non-finite component at index {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("degenerate mean: norm {0} is below {DEGENERATE_NORM}")]
    DegenerateMean(f64),
    #[error("empty embedding set")]
    EmptySet,
}

/// A unit vector on the hypersphere. Immutable after construction; every
/// constructor enforces the unit-norm invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// Builds an embedding from a vector that is already unit-norm
    /// (within [`UNIT_NORM_TOL`]).
    pub fn from_unit(values: Vec<f64>) -> Result<Self, GeometryError> {
        check_finite(&values)?;
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(GeometryError::ZeroVector(norm));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn check_finite(values: &[f64]) -> Result<(), GeometryError> {
    if values.is_empty() {
        return Err(GeometryError::ZeroVector(0.0));
    }
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(GeometryError::NonFinite(i)),
        None => Ok(()),
    }
}

fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Projects an arbitrary vector onto the unit sphere, preserving direction.
pub fn normalize(vector: &[f64]) -> Result<Embedding, GeometryError> {
    check_finite(vector)?;
    let norm = l2_norm(vector);
    if norm <= DEGENERATE_NORM {
        return Err(GeometryError::ZeroVector(norm));
    }
    Ok(Embedding {
        values: vector.iter().map(|v| v / norm).collect(),
    })
}

/// Dot product of two unit vectors, clamped to [-1, 1] so that rounding
/// noise cannot escape the calibration map's domain.
pub fn raw_cosine(a: &Embedding, b: &Embedding) -> Result<f64, GeometryError> {
    if a.dim() != b.dim() {
        return Err(GeometryError::DimMismatch(a.dim(), b.dim()));
    }
    let dot: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x * y)
        .sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// L2-normalized arithmetic mean of a non-empty set of embeddings.
///
/// Fails with `DegenerateMean` when the mean vector has (near-)zero norm,
/// e.g. for an antipodal pair.
pub fn center_of_gravity(members: &[Embedding]) -> Result<Embedding, GeometryError> {
    let first = members.first().ok_or(GeometryError::EmptySet)?;
    let dim = first.dim();
    let mut mean = vec![0.0; dim];
    for e in members {
        if e.dim() != dim {
            return Err(GeometryError::DimMismatch(dim, e.dim()));
        }
        for (m, v) in mean.iter_mut().zip(&e.values) {
            *m += v;
        }
    }
    let k = members.len() as f64;
    for m in &mut mean {
        *m /= k;
    }
    let norm = l2_norm(&mean);
    if norm <= DEGENERATE_NORM {
        return Err(GeometryError::DegenerateMean(norm));
    }
    Ok(Embedding {
        values: mean.iter().map(|m| m / norm).collect(),
    })
}

/// Maximum deviation from the center of gravity in similarity space:
/// `max over members of (1 - sim(member, center))`.
pub fn dispersion(members: &[Embedding], sim: &Similarity) -> Result<f64, GeometryError> {
    let center = center_of_gravity(members)?;
    let mut max = 0.0f64;
    for e in members {
        let s = sim.similarity(e, &center)?;
        max = max.max(1.0 - s);
    }
    Ok(max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f64]) -> Embedding {
        normalize(v).unwrap()
    }

    #[test]
    fn normalize_three_four_five() {
        let e = normalize(&[3.0, 4.0]).unwrap();
        assert_eq!(e.values(), &[0.6, 0.8]);
    }

    #[test]
    fn normalize_already_unit() {
        let e = normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(e.values(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_zero_vector_errors() {
        assert!(matches!(
            normalize(&[0.0, 0.0]),
            Err(GeometryError::ZeroVector(_))
        ));
    }

    #[test]
    fn normalize_rejects_nan() {
        assert_eq!(normalize(&[1.0, f64::NAN]), Err(GeometryError::NonFinite(1)));
    }

    #[test]
    fn cosine_self_is_one() {
        let e = emb(&[0.3, -0.2, 0.9]);
        assert!((raw_cosine(&e, &e).unwrap() - 1.0).abs() <= UNIT_NORM_TOL);
    }

    #[test]
    fn cosine_orthogonal_and_antipodal() {
        let a = emb(&[1.0, 0.0]);
        let b = emb(&[0.0, 1.0]);
        assert_eq!(raw_cosine(&a, &b).unwrap(), 0.0);
        let c = emb(&[-1.0, 0.0]);
        assert_eq!(raw_cosine(&a, &c).unwrap(), -1.0);
    }

    #[test]
    fn cosine_dim_mismatch() {
        let a = emb(&[1.0, 0.0]);
        let b = emb(&[1.0, 0.0, 0.0]);
        assert_eq!(raw_cosine(&a, &b), Err(GeometryError::DimMismatch(2, 3)));
    }

    #[test]
    fn cog_singleton_is_identity() {
        let e = emb(&[0.6, 0.8]);
        assert_eq!(center_of_gravity(&[e.clone()]).unwrap(), e);
    }

    #[test]
    fn cog_antipodal_pair_degenerate() {
        let a = emb(&[1.0, 0.0]);
        let b = emb(&[-1.0, 0.0]);
        assert!(matches!(
            center_of_gravity(&[a, b]),
            Err(GeometryError::DegenerateMean(_))
        ));
    }

    #[test]
    fn cog_orthogonal_pair() {
        let a = emb(&[1.0, 0.0]);
        let b = emb(&[0.0, 1.0]);
        let c = center_of_gravity(&[a, b]).unwrap();
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c.values()[0] - inv_sqrt2).abs() < 1e-15);
        assert!((c.values()[1] - inv_sqrt2).abs() < 1e-15);
    }

    #[test]
    fn dispersion_identical_members_is_zero() {
        let e = emb(&[0.0, 1.0]);
        let set = vec![e.clone(), e.clone(), e];
        assert_eq!(dispersion(&set, &Similarity::Identity).unwrap(), 0.0);
    }

    #[test]
    fn dispersion_orthogonal_pair() {
        let set = vec![emb(&[1.0, 0.0]), emb(&[0.0, 1.0])];
        let d = dispersion(&set, &Similarity::Identity).unwrap();
        let expected = 1.0 - (std::f64::consts::FRAC_PI_4).cos();
        assert!((d - expected).abs() < 1e-12, "{d} vs {expected}");
    }

    #[test]
    fn dispersion_propagates_degenerate_mean() {
        let set = vec![emb(&[1.0, 0.0]), emb(&[-1.0, 0.0])];
        assert!(matches!(
            dispersion(&set, &Similarity::Identity),
            Err(GeometryError::DegenerateMean(_))
        ));
    }
}
