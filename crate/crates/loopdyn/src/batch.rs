//! Batch analysis over parameter grids and trajectory sets.
//!
//! Detection of a single trajectory is inherently sequential, but grid
//! points and trajectories are independent, so the batch layer fans them
//! out with rayon when the `parallel` feature is enabled. The `_seq`
//! variants always run single-threaded and back both the fallback build and
//! the benchmark baseline.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::calibration::Similarity;
use crate::clustering::{detect_clusters, ClusterParams};
use crate::dynamics::{classify_regime, DynamicsError, RegimeReport, RegimeRules};
use crate::trajectory::Trajectory;

/// Cartesian product of the per-axis threshold lists.
pub fn expand_grid(
    lambdas: &[f64],
    rhos: &[f64],
    kappas: &[usize],
    min_members: usize,
) -> Vec<ClusterParams> {
    let mut grid = Vec::with_capacity(lambdas.len() * rhos.len() * kappas.len());
    for &lambda in lambdas {
        for &rho in rhos {
            for &kappa in kappas {
                grid.push(ClusterParams { lambda, rho, kappa, min_members });
            }
        }
    }
    grid
}

fn analyze_one(
    traj: &Trajectory,
    params: &ClusterParams,
    sim: &Similarity,
) -> Result<RegimeReport, DynamicsError> {
    let clusters = detect_clusters(traj, params, sim)?;
    let rules = RegimeRules::for_params(params);
    classify_regime(traj, &clusters, sim, params, &rules)
}

/// Analyzes one trajectory at every grid point, sequentially.
pub fn analyze_grid_seq(
    traj: &Trajectory,
    grid: &[ClusterParams],
    sim: &Similarity,
) -> Result<Vec<RegimeReport>, DynamicsError> {
    grid.iter().map(|p| analyze_one(traj, p, sim)).collect()
}

/// Analyzes one trajectory at every grid point, fanning grid points out
/// across threads when built with the `parallel` feature.
pub fn analyze_grid(
    traj: &Trajectory,
    grid: &[ClusterParams],
    sim: &Similarity,
) -> Result<Vec<RegimeReport>, DynamicsError> {
    #[cfg(feature = "parallel")]
    {
        grid.par_iter().map(|p| analyze_one(traj, p, sim)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        analyze_grid_seq(traj, grid, sim)
    }
}

/// Classifies a batch of trajectories under one parameter set, sequentially.
pub fn classify_batch_seq(
    trajectories: &[Trajectory],
    params: &ClusterParams,
    sim: &Similarity,
) -> Result<Vec<RegimeReport>, DynamicsError> {
    trajectories.iter().map(|t| analyze_one(t, params, sim)).collect()
}

/// Classifies a batch of trajectories under one parameter set.
pub fn classify_batch(
    trajectories: &[Trajectory],
    params: &ClusterParams,
    sim: &Similarity,
) -> Result<Vec<RegimeReport>, DynamicsError> {
    #[cfg(feature = "parallel")]
    {
        trajectories
            .par_iter()
            .map(|t| analyze_one(t, params, sim))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        classify_batch_seq(trajectories, params, sim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate, SynthSpec};

    #[test]
    fn grid_expansion_is_cartesian() {
        let grid = expand_grid(&[0.8], &[0.1, 0.2, 0.3], &[2], 3);
        assert_eq!(grid.len(), 3);
        assert!(grid.iter().all(|p| p.lambda == 0.8 && p.kappa == 2));
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let traj = generate(&SynthSpec::contractive(64, 50, 17)).unwrap();
        let grid = expand_grid(&[0.8], &[0.1, 0.2, 0.3], &[2], 3);
        let seq = analyze_grid_seq(&traj, &grid, &Similarity::Identity).unwrap();
        let par = analyze_grid(&traj, &grid, &Similarity::Identity).unwrap();
        assert_eq!(seq, par);
    }
}
