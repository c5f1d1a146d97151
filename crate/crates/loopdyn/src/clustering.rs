//! Incremental cluster and attractor detection over a trajectory.
//!
//! A single left-to-right pass maintains a candidate cluster. At each step
//! two constraints are checked: consecutive similarity against the previous
//! trajectory point, and dispersion of the candidate after tentatively
//! adding the point. A bounded run of consecutive violations is tolerated as
//! outliers; exceeding the patience closes the candidate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::Similarity;
use crate::geometry::{center_of_gravity, dispersion, Embedding, GeometryError};
use crate::trajectory::Trajectory;

#[derive(Debug, Error)]
pub enum ClusteringError {
    #[error("invalid params: {0}")]
    InvalidParams(String),
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Detection thresholds: consecutive-similarity floor, dispersion ceiling,
/// violation patience and the minimum member count for an emitted cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub lambda: f64,
    pub rho: f64,
    pub kappa: usize,
    pub min_members: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            lambda: 0.8,
            rho: 0.2,
            kappa: 2,
            min_members: 3,
        }
    }
}

impl ClusterParams {
    pub fn new(lambda: f64, rho: f64, kappa: usize, min_members: usize) -> Result<Self, ClusteringError> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(ClusteringError::InvalidParams(format!("lambda {lambda} outside [0,1]")));
        }
        if !(rho > 0.0) {
            return Err(ClusteringError::InvalidParams(format!("rho {rho} must be > 0")));
        }
        if min_members < 2 {
            return Err(ClusteringError::InvalidParams(format!(
                "min_members {min_members} must be >= 2"
            )));
        }
        Ok(Self { lambda, rho, kappa, min_members })
    }
}

/// A maximal contiguous temporal window with coherent members and a bounded
/// set of outliers. The attractor is the center of gravity of the members
/// only; outliers are excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub start_t: usize,
    pub end_t: usize,
    pub member_ts: Vec<usize>,
    pub outlier_ts: Vec<usize>,
    pub attractor: Embedding,
    pub dispersion_value: f64,
}

impl Cluster {
    pub fn span_len(&self) -> usize {
        self.end_t - self.start_t + 1
    }
}

struct Candidate {
    start_t: usize,
    member_ts: Vec<usize>,
    members: Vec<Embedding>,
    outlier_ts: Vec<usize>,
    attractor: Embedding,
    dispersion_value: f64,
    violations: usize,
}

impl Candidate {
    fn open(t: usize, e: &Embedding) -> Self {
        Self {
            start_t: t,
            member_ts: vec![t],
            members: vec![e.clone()],
            outlier_ts: Vec::new(),
            attractor: e.clone(),
            dispersion_value: 0.0,
            violations: 0,
        }
    }

    /// Trims trailing outliers so the window ends at the last member, then
    /// emits the cluster if it has enough members. Returns the cluster (if
    /// any) and the index at which scanning resumes.
    fn close(self, min_members: usize) -> (Option<Cluster>, usize) {
        let end_t = *self.member_ts.last().expect("candidate has a member");
        let resume = end_t + 1;
        if self.member_ts.len() < min_members {
            return (None, resume);
        }
        let outlier_ts: Vec<usize> = self.outlier_ts.into_iter().filter(|&t| t < end_t).collect();
        (
            Some(Cluster {
                start_t: self.start_t,
                end_t,
                member_ts: self.member_ts,
                outlier_ts,
                attractor: self.attractor,
                dispersion_value: self.dispersion_value,
            }),
            resume,
        )
    }
}

/// Runs the incremental detection pass. Emitted clusters are non-overlapping
/// and ordered by start index.
pub fn detect_clusters(
    traj: &Trajectory,
    params: &ClusterParams,
    sim: &Similarity,
) -> Result<Vec<Cluster>, ClusteringError> {
    if traj.is_empty() {
        return Err(ClusteringError::EmptyTrajectory);
    }
    let mut clusters = Vec::new();
    let mut t = 0usize;
    let n = traj.len();

    while t < n {
        let mut cand = Candidate::open(t, traj.embedding(t));
        let mut cursor = t + 1;

        while cursor < n {
            let e = traj.embedding(cursor);
            // (i) consecutive similarity against the previous trajectory
            // point, member or not
            let consecutive_ok = sim.similarity(traj.embedding(cursor - 1), e)? >= params.lambda;
            // (ii) dispersion of members plus the tentative point; a
            // degenerate mean counts as a violation
            let tentative_ok = if consecutive_ok {
                let mut tentative = cand.members.clone();
                tentative.push(e.clone());
                match tentative_geometry(&tentative, sim) {
                    Ok((attractor, disp)) if disp < params.rho => Some((attractor, disp)),
                    Ok(_) => None,
                    Err(GeometryError::DegenerateMean(_)) => None,
                    Err(err) => return Err(err.into()),
                }
            } else {
                None
            };

            match tentative_ok {
                Some((attractor, disp)) => {
                    cand.member_ts.push(cursor);
                    cand.members.push(e.clone());
                    cand.attractor = attractor;
                    cand.dispersion_value = disp;
                    cand.violations = 0;
                }
                None => {
                    cand.outlier_ts.push(cursor);
                    cand.violations += 1;
                    if cand.violations > params.kappa {
                        break;
                    }
                }
            }
            cursor += 1;
        }

        let (cluster, resume) = cand.close(params.min_members);
        if let Some(c) = cluster {
            clusters.push(c);
        }
        debug_assert!(resume > t, "scan must advance");
        t = resume;
    }

    Ok(clusters)
}

fn tentative_geometry(
    members: &[Embedding],
    sim: &Similarity,
) -> Result<(Embedding, f64), GeometryError> {
    let attractor = center_of_gravity(members)?;
    let disp = dispersion(members, sim)?;
    Ok((attractor, disp))
}

/// Pairwise calibrated similarity between cluster attractors.
pub fn attractor_similarity_matrix(
    clusters: &[Cluster],
    sim: &Similarity,
) -> Result<Vec<Vec<f64>>, ClusteringError> {
    let n = clusters.len();
    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let s = sim.similarity(&clusters[i].attractor, &clusters[j].attractor)?;
            matrix[i][j] = s;
            matrix[j][i] = s;
        }
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::normalize;
    use crate::trajectory::TrajectoryPoint;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    pub(crate) fn traj_from(embeddings: Vec<Embedding>) -> Trajectory {
        let points = embeddings
            .into_iter()
            .enumerate()
            .map(|(t, embedding)| TrajectoryPoint {
                t,
                text: format!("synthetic:{t}"),
                embedding,
            })
            .collect();
        Trajectory::new(points).unwrap()
    }

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        normalize(&v).unwrap()
    }

    #[test]
    fn constant_trajectory_single_cluster() {
        let e = normalize(&[0.2, 0.3, 0.9]).unwrap();
        let traj = traj_from(vec![e; 10]);
        let params = ClusterParams::new(0.8, 0.1, 2, 2).unwrap();
        let clusters = detect_clusters(&traj, &params, &Similarity::Identity).unwrap();
        assert_eq!(clusters.len(), 1);
        let c = &clusters[0];
        assert_eq!((c.start_t, c.end_t), (0, 9));
        assert!(c.outlier_ts.is_empty());
        assert_eq!(c.dispersion_value, 0.0);
        assert_eq!(c.member_ts, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn random_high_dim_trajectory_has_no_clusters() {
        // random cosines in d=256 concentrate near 0, far below lambda
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let traj = traj_from((0..20).map(|_| random_unit(&mut rng, 256)).collect());
        let params = ClusterParams::new(0.8, 0.3, 2, 3).unwrap();
        let clusters = detect_clusters(&traj, &params, &Similarity::Identity).unwrap();
        assert!(clusters.is_empty(), "got {clusters:?}");
    }

    #[test]
    fn detection_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let traj = traj_from((0..30).map(|_| random_unit(&mut rng, 16)).collect());
        let params = ClusterParams::default();
        let a = detect_clusters(&traj, &params, &Similarity::Identity).unwrap();
        let b = detect_clusters(&traj, &params, &Similarity::Identity).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cluster_invariants_hold_on_emitted_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let center = random_unit(&mut rng, 32);
        // tight cluster, then noise, then another tight cluster
        let mut embs = Vec::new();
        for _ in 0..8 {
            let jitter: Vec<f64> = center
                .values()
                .iter()
                .map(|v| v + 0.01 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            embs.push(normalize(&jitter).unwrap());
        }
        for _ in 0..5 {
            embs.push(random_unit(&mut rng, 32));
        }
        let center2 = random_unit(&mut rng, 32);
        for _ in 0..8 {
            let jitter: Vec<f64> = center2
                .values()
                .iter()
                .map(|v| v + 0.01 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            embs.push(normalize(&jitter).unwrap());
        }
        let traj = traj_from(embs);
        let params = ClusterParams::default();
        let sim = Similarity::Identity;
        let clusters = detect_clusters(&traj, &params, &sim).unwrap();
        assert!(!clusters.is_empty());
        for c in &clusters {
            // window partition
            let mut all: Vec<usize> = c.member_ts.iter().chain(&c.outlier_ts).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (c.start_t..=c.end_t).collect::<Vec<_>>());
            assert!(c.member_ts.contains(&c.start_t));
            assert!(c.member_ts.contains(&c.end_t));
            // attractor and dispersion re-derived from members
            let members: Vec<Embedding> = c
                .member_ts
                .iter()
                .map(|&t| traj.embedding(t).clone())
                .collect();
            let cog = center_of_gravity(&members).unwrap();
            assert_eq!(c.attractor, cog);
            let disp = dispersion(&members, &sim).unwrap();
            assert!((c.dispersion_value - disp).abs() < 1e-15);
            assert!(c.dispersion_value < params.rho);
            assert!(c.member_ts.len() >= params.min_members);
        }
        // clusters ordered and non-overlapping
        for w in clusters.windows(2) {
            assert!(w[0].end_t < w[1].start_t);
        }
    }

    #[test]
    fn matrix_single_cluster_identity() {
        let e = normalize(&[1.0, 0.0]).unwrap();
        let traj = traj_from(vec![e; 5]);
        let clusters =
            detect_clusters(&traj, &ClusterParams::default(), &Similarity::Identity).unwrap();
        let m = attractor_similarity_matrix(&clusters, &Similarity::Identity).unwrap();
        assert_eq!(m, vec![vec![1.0]]);
    }

    #[test]
    fn matrix_orthogonal_attractors() {
        let a = Cluster {
            start_t: 0,
            end_t: 4,
            member_ts: (0..5).collect(),
            outlier_ts: vec![],
            attractor: normalize(&[1.0, 0.0]).unwrap(),
            dispersion_value: 0.0,
        };
        let mut b = a.clone();
        b.start_t = 6;
        b.end_t = 10;
        b.attractor = normalize(&[0.0, 1.0]).unwrap();
        let m = attractor_similarity_matrix(&[a, b], &Similarity::Identity).unwrap();
        assert_eq!(m[0][1], 0.0);
        assert_eq!(m[1][0], 0.0);
        assert_eq!(m[0][0], 1.0);
    }

    #[test]
    fn params_validation() {
        assert!(ClusterParams::new(1.2, 0.1, 2, 3).is_err());
        assert!(ClusterParams::new(0.8, 0.0, 2, 3).is_err());
        assert!(ClusterParams::new(0.8, 0.1, 2, 1).is_err());
    }
}
