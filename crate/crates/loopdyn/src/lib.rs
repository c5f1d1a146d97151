//! Geometry-based analysis of iterative LLM loops.
//!
//! The crate runs agentic loops (a prompt template composed with an LLM
//! call, applied recursively), projects each output into a unit-sphere
//! embedding space, and measures the resulting trajectory: calibrated
//! similarity series, incremental cluster/attractor detection, and
//! classification of the dynamical regime (contractive, oscillatory or
//! exploratory). Synthetic generators with known ground truth, SVG
//! timeline/drift figures and JSON/CSV reports round out the pipeline.
//!
//! Build with the default `parallel` feature for rayon-backed grid and
//! batch analysis; without it every code path is single-threaded.

pub mod backends;
pub mod batch;
pub mod calibration;
pub mod clustering;
pub mod dynamics;
pub mod geometry;
pub mod report;
pub mod runner;
pub mod synthgen;
pub mod trajectory;

pub use calibration::{fit_isotonic, hcs_threshold, CalibrationMap, CalibrationPair, Similarity};
pub use clustering::{attractor_similarity_matrix, detect_clusters, Cluster, ClusterParams};
pub use dynamics::{
    classify_regime, comparative_summary, drift_series, DriftSeries, RegimeLabel, RegimeReport,
    RegimeRules,
};
pub use geometry::{center_of_gravity, dispersion, normalize, raw_cosine, Embedding};
pub use runner::{run_loop, LoopConfig, PromptTemplate};
pub use synthgen::{generate, SynthSpec};
pub use trajectory::{Trajectory, TrajectoryRecord};
