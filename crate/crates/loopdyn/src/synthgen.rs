//! Synthetic trajectory generation with known ground-truth regimes.
//!
//! Used to validate detection and classification without any LLM or
//! encoder: contractive pull toward a target, block-wise oscillation among
//! fixed centers, or i.i.d. exploratory directions.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::RegimeLabel;
use crate::geometry::{normalize, Embedding};
use crate::trajectory::{Trajectory, TrajectoryPoint};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SynthRegime {
    /// e_{t+1} = normalize((1-beta) e_t + beta target + sigma gaussian)
    Contractive { beta: f64, sigma: f64 },
    /// Block-wise jitter around centers cycled every `block_len` steps.
    /// Centers are pairwise orthogonal directions drawn from the seed.
    Oscillatory { centers: usize, block_len: usize, sigma: f64 },
    /// i.i.d. normalized Gaussian directions.
    Exploratory,
}

impl SynthRegime {
    pub fn label(&self) -> RegimeLabel {
        match self {
            SynthRegime::Contractive { .. } => RegimeLabel::Contractive,
            SynthRegime::Oscillatory { .. } => RegimeLabel::Oscillatory,
            SynthRegime::Exploratory => RegimeLabel::Exploratory,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub regime: SynthRegime,
    pub dim: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn contractive(dim: usize, horizon: usize, seed: u64) -> Self {
        Self {
            regime: SynthRegime::Contractive { beta: 0.3, sigma: 0.02 },
            dim,
            horizon,
            seed,
        }
    }

    pub fn oscillatory(dim: usize, horizon: usize, seed: u64) -> Self {
        Self {
            regime: SynthRegime::Oscillatory { centers: 2, block_len: 10, sigma: 0.02 },
            dim,
            horizon,
            seed,
        }
    }

    pub fn exploratory(dim: usize, horizon: usize, seed: u64) -> Self {
        Self {
            regime: SynthRegime::Exploratory,
            dim,
            horizon,
            seed,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.dim == 0 {
            return Err(SynthError::InvalidSpec("dim must be >= 1".into()));
        }
        if self.horizon == 0 {
            return Err(SynthError::InvalidSpec("horizon must be >= 1".into()));
        }
        match &self.regime {
            SynthRegime::Contractive { beta, sigma } => {
                if !(*beta > 0.0 && *beta <= 1.0) {
                    return Err(SynthError::InvalidSpec(format!("beta {beta} outside (0,1]")));
                }
                if !(*sigma >= 0.0) {
                    return Err(SynthError::InvalidSpec(format!("sigma {sigma} must be >= 0")));
                }
            }
            SynthRegime::Oscillatory { centers, block_len, sigma } => {
                if *centers < 2 {
                    return Err(SynthError::InvalidSpec("need >= 2 centers".into()));
                }
                if *centers > self.dim {
                    return Err(SynthError::InvalidSpec(
                        "more orthogonal centers than dimensions".into(),
                    ));
                }
                if *block_len == 0 {
                    return Err(SynthError::InvalidSpec("block_len must be >= 1".into()));
                }
                if !(*sigma >= 0.0) {
                    return Err(SynthError::InvalidSpec(format!("sigma {sigma} must be >= 0")));
                }
            }
            SynthRegime::Exploratory => {}
        }
        Ok(())
    }
}

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(e) = normalize(&v) {
            return e;
        }
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: &Embedding, sigma: f64) -> Embedding {
    if sigma == 0.0 {
        return base.clone();
    }
    let v: Vec<f64> = base
        .values()
        .iter()
        .map(|x| x + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    normalize(&v).expect("jittered unit vector stays non-degenerate for small sigma")
}

/// Orthonormalizes random directions with Gram-Schmidt.
fn orthogonal_centers(rng: &mut ChaCha8Rng, dim: usize, count: usize) -> Vec<Embedding> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(count);
    while centers.len() < count {
        let mut v = gaussian_unit(rng, dim).values().to_vec();
        for c in &centers {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            for (vi, ci) in v.iter_mut().zip(c) {
                *vi -= dot * ci;
            }
        }
        if let Ok(e) = normalize(&v) {
            centers.push(e.values().to_vec());
        }
    }
    centers
        .into_iter()
        .map(|v| Embedding::from_unit(v).expect("orthonormalized vector is unit"))
        .collect()
}

/// Generates a trajectory of `horizon + 1` unit embeddings, deterministic
/// in the seed. Texts are placeholders of the form `synthetic:<t>`.
pub fn generate(spec: &SynthSpec) -> Result<Trajectory, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.horizon + 1;
    let mut embeddings: Vec<Embedding> = Vec::with_capacity(n);

    match &spec.regime {
        SynthRegime::Contractive { beta, sigma } => {
            let target = gaussian_unit(&mut rng, spec.dim);
            let mut current = gaussian_unit(&mut rng, spec.dim);
            embeddings.push(current.clone());
            for _ in 0..spec.horizon {
                let mut v: Vec<f64> = current
                    .values()
                    .iter()
                    .zip(target.values())
                    .map(|(e, a)| (1.0 - beta) * e + beta * a)
                    .collect();
                if *sigma > 0.0 {
                    for x in &mut v {
                        *x += sigma * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                current = normalize(&v)
                    .map_err(|e| SynthError::InvalidSpec(format!("degenerate step: {e}")))?;
                embeddings.push(current.clone());
            }
        }
        SynthRegime::Oscillatory { centers, block_len, sigma } => {
            let centers = orthogonal_centers(&mut rng, spec.dim, *centers);
            for t in 0..n {
                let center = &centers[(t / block_len) % centers.len()];
                embeddings.push(jitter(&mut rng, center, *sigma));
            }
        }
        SynthRegime::Exploratory => {
            for _ in 0..n {
                embeddings.push(gaussian_unit(&mut rng, spec.dim));
            }
        }
    }

    let points = embeddings
        .into_iter()
        .enumerate()
        .map(|(t, embedding)| TrajectoryPoint {
            t,
            text: format!("synthetic:{t}"),
            embedding,
        })
        .collect();
    Ok(Trajectory::new(points).expect("generated trajectory is well-formed"))
}
