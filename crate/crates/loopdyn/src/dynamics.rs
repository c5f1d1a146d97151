//! Drift indicator series and regime classification.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::Similarity;
use crate::clustering::{attractor_similarity_matrix, Cluster, ClusterParams, ClusteringError};
use crate::geometry::GeometryError;
use crate::trajectory::Trajectory;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("trajectory too short: drift series needs at least 2 points, got {0}")]
    TooShort(usize),
    #[error("mismatched inputs: {0}")]
    MismatchedInputs(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
}

/// Per-iteration similarity series: `local[t-1] = s(e_t, e_{t-1})` and
/// `global[t-1] = s(e_t, e_0)` for t = 1..=T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSeries {
    pub local: Vec<f64>,
    pub global: Vec<f64>,
}

impl DriftSeries {
    pub fn mean_local(&self) -> f64 {
        self.local.iter().sum::<f64>() / self.local.len() as f64
    }

    pub fn final_global(&self) -> f64 {
        *self.global.last().expect("non-empty series")
    }
}

pub fn drift_series(traj: &Trajectory, sim: &Similarity) -> Result<DriftSeries, DynamicsError> {
    if traj.len() < 2 {
        return Err(DynamicsError::TooShort(traj.len()));
    }
    let mut local = Vec::with_capacity(traj.len() - 1);
    let mut global = Vec::with_capacity(traj.len() - 1);
    for t in 1..traj.len() {
        local.push(sim.similarity(traj.embedding(t), traj.embedding(t - 1))?);
        global.push(sim.similarity(traj.embedding(t), traj.embedding(0))?);
    }
    Ok(DriftSeries { local, global })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeLabel {
    Contractive,
    Oscillatory,
    Exploratory,
    Unclassified,
}

impl std::fmt::Display for RegimeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RegimeLabel::Contractive => "contractive",
            RegimeLabel::Oscillatory => "oscillatory",
            RegimeLabel::Exploratory => "exploratory",
            RegimeLabel::Unclassified => "unclassified",
        };
        f.write_str(s)
    }
}

/// Thresholds for the operational regime rules. The defaults derive from the
/// detection parameters: recurrence threshold equals lambda and tail slack
/// equals kappa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeRules {
    pub recurrence_tau: f64,
    pub tail_slack: usize,
    pub min_terminal_span: usize,
    pub coverage_min: f64,
}

impl RegimeRules {
    pub fn for_params(params: &ClusterParams) -> Self {
        Self {
            recurrence_tau: params.lambda,
            tail_slack: params.kappa,
            min_terminal_span: 10,
            coverage_min: 0.25,
        }
    }
}

/// Evidence backing a regime label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeRationale {
    /// (start, end) of the last detected cluster, if any.
    pub terminal_cluster_span: Option<(usize, usize)>,
    /// Non-adjacent cluster index pairs (0-based) whose attractor similarity
    /// reaches the recurrence threshold, with that similarity.
    pub recurrence_pairs: Vec<(usize, usize, f64)>,
    /// Fraction of iterations covered by cluster members.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub label: RegimeLabel,
    pub clusters: Vec<Cluster>,
    pub drift: DriftSeries,
    pub attractor_matrix: Vec<Vec<f64>>,
    pub params: ClusterParams,
    pub rules: RegimeRules,
    pub rationale: RegimeRationale,
}

/// Applies the regime rules in fixed precedence order: oscillatory
/// (A->B->A recurrence among >= 3 clusters), then contractive (long cluster
/// reaching the end of the horizon), then exploratory (low member
/// coverage), else unclassified.
pub fn classify_regime(
    traj: &Trajectory,
    clusters: &[Cluster],
    sim: &Similarity,
    params: &ClusterParams,
    rules: &RegimeRules,
) -> Result<RegimeReport, DynamicsError> {
    let horizon = traj.horizon();
    if let Some(last) = clusters.last() {
        if last.end_t > horizon {
            return Err(DynamicsError::MismatchedInputs(format!(
                "cluster ends at {} but trajectory horizon is {horizon}",
                last.end_t
            )));
        }
    }

    let drift = drift_series(traj, sim)?;
    let matrix = attractor_similarity_matrix(clusters, sim)?;

    let mut recurrence_pairs = Vec::new();
    for i in 0..clusters.len() {
        for j in (i + 2)..clusters.len() {
            if matrix[i][j] >= rules.recurrence_tau {
                recurrence_pairs.push((i, j, matrix[i][j]));
            }
        }
    }
    let member_count: usize = clusters.iter().map(|c| c.member_ts.len()).sum();
    let coverage = member_count as f64 / (horizon + 1) as f64;
    let terminal_cluster_span = clusters.last().map(|c| (c.start_t, c.end_t));

    let label = if clusters.len() >= 3 && !recurrence_pairs.is_empty() {
        RegimeLabel::Oscillatory
    } else if clusters.last().is_some_and(|c| {
        c.end_t + rules.tail_slack >= horizon && c.span_len() >= rules.min_terminal_span
    }) {
        RegimeLabel::Contractive
    } else if coverage < rules.coverage_min {
        RegimeLabel::Exploratory
    } else {
        RegimeLabel::Unclassified
    };

    Ok(RegimeReport {
        label,
        clusters: clusters.to_vec(),
        drift,
        attractor_matrix: matrix,
        params: *params,
        rules: *rules,
        rationale: RegimeRationale {
            terminal_cluster_span,
            recurrence_pairs,
            coverage,
        },
    })
}

/// One row of the comparative summary: mean local similarity, final global
/// similarity, cluster count and regime label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mean_local: f64,
    pub final_global: f64,
    pub cluster_count: usize,
    pub regime: RegimeLabel,
}

pub fn comparative_summary(reports: &[RegimeReport]) -> Vec<SummaryRow> {
    reports
        .iter()
        .map(|r| SummaryRow {
            mean_local: r.drift.mean_local(),
            final_global: r.drift.final_global(),
            cluster_count: r.clusters.len(),
            regime: r.label,
        })
        .collect()
}
