//! Cluster-timeline figures, drift-series plots and machine-readable
//! analysis reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::Similarity;
use crate::dynamics::{DriftSeries, DynamicsError, RegimeReport};
use crate::clustering::Cluster;
use crate::geometry::GeometryError;
use crate::trajectory::Trajectory;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("mismatched inputs: {0}")]
    MismatchedInputs(String),
    #[error("invalid plot config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelinePlotConfig {
    /// Vertical scaling of attractor deviations.
    pub alpha: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for TimelinePlotConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            width: 900,
            height: 420,
        }
    }
}

const MEMBER_COLOR: &str = "#2b6cb0"; // blue
const OUTLIER_COLOR: &str = "#c53030"; // red
const BAND_COLOR: &str = "#d9d9d9"; // grey

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointStatus {
    Member,
    Outlier,
}

/// One plotted iteration: `y = i + alpha * (1 - sim(e_t, a_i))` with the
/// cluster index i counted from 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelinePoint {
    pub t: usize,
    pub cluster: usize,
    pub y: f64,
    pub status: PointStatus,
}

/// Grey dispersion band of one cluster: y in [i, i + alpha * rho].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelineBand {
    pub cluster: usize,
    pub start_t: usize,
    pub end_t: usize,
    pub y_base: f64,
    pub y_top: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineLayout {
    pub points: Vec<TimelinePoint>,
    pub bands: Vec<TimelineBand>,
    pub horizon: usize,
    pub alpha: f64,
}

pub fn timeline_layout(
    clusters: &[Cluster],
    traj: &Trajectory,
    sim: &Similarity,
    rho: f64,
    cfg: &TimelinePlotConfig,
) -> Result<TimelineLayout, ReportError> {
    if cfg.alpha <= 0.0 {
        return Err(ReportError::InvalidConfig(format!("alpha {} must be > 0", cfg.alpha)));
    }
    let mut points = Vec::new();
    let mut bands = Vec::new();
    for (idx, cluster) in clusters.iter().enumerate() {
        let i = idx + 1;
        if cluster.end_t > traj.horizon() {
            return Err(ReportError::MismatchedInputs(format!(
                "cluster ends at {} beyond horizon {}",
                cluster.end_t,
                traj.horizon()
            )));
        }
        bands.push(TimelineBand {
            cluster: i,
            start_t: cluster.start_t,
            end_t: cluster.end_t,
            y_base: i as f64,
            y_top: i as f64 + cfg.alpha * rho,
        });
        for t in cluster.start_t..=cluster.end_t {
            let s = sim.similarity(traj.embedding(t), &cluster.attractor)?;
            let status = if cluster.member_ts.contains(&t) {
                PointStatus::Member
            } else {
                PointStatus::Outlier
            };
            points.push(TimelinePoint {
                t,
                cluster: i,
                y: i as f64 + cfg.alpha * (1.0 - s),
                status,
            });
        }
    }
    Ok(TimelineLayout {
        points,
        bands,
        horizon: traj.horizon(),
        alpha: cfg.alpha,
    })
}

fn fmt_f64(v: f64) -> String {
    // shortest round-trip decimal, consistent with the JSON serialization
    let mut buf = String::new();
    write!(buf, "{v}").unwrap();
    buf
}

/// Renders the cluster timeline as SVG 1.1. Output is deterministic: stable
/// element ordering and round-trip-exact decimal attributes.
pub fn emit_timeline_svg(layout: &TimelineLayout, cfg: &TimelinePlotConfig) -> String {
    let margin = 40.0;
    let plot_w = cfg.width as f64 - 2.0 * margin;
    let plot_h = cfg.height as f64 - 2.0 * margin;
    let x_span = layout.horizon.max(1) as f64;
    // y axis spans [0, max cluster baseline + alpha] so outliers above the
    // band remain visible
    let y_max = layout
        .bands
        .iter()
        .map(|b| b.y_base + layout.alpha)
        .fold(1.0 + layout.alpha, f64::max)
        .max(layout.points.iter().map(|p| p.y).fold(0.0, f64::max));
    let x = |t: usize| margin + plot_w * t as f64 / x_span;
    let y = |v: f64| margin + plot_h - plot_h * v / y_max;
    let y_scale = plot_h / y_max;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        cfg.width, cfg.height, cfg.width, cfg.height
    );
    let _ = writeln!(
        svg,
        r#"  <rect width="{}" height="{}" fill="white"/>"#,
        cfg.width, cfg.height
    );
    // axes
    let _ = writeln!(
        svg,
        r#"  <line x1="{m}" y1="{y0}" x2="{xe}" y2="{y0}" stroke="black" stroke-width="1"/>"#,
        m = fmt_f64(margin),
        y0 = fmt_f64(margin + plot_h),
        xe = fmt_f64(margin + plot_w)
    );
    let _ = writeln!(
        svg,
        r#"  <line x1="{m}" y1="{m}" x2="{m}" y2="{y0}" stroke="black" stroke-width="1"/>"#,
        m = fmt_f64(margin),
        y0 = fmt_f64(margin + plot_h)
    );
    for band in &layout.bands {
        let height = (band.y_top - band.y_base) * y_scale;
        let _ = writeln!(
            svg,
            r#"  <rect class="band" x="{x0}" y="{y0}" width="{w}" height="{h}" fill="{BAND_COLOR}" fill-opacity="0.6"/>"#,
            x0 = fmt_f64(x(band.start_t)),
            y0 = fmt_f64(y(band.y_top)),
            w = fmt_f64(x(band.end_t) - x(band.start_t)),
            h = fmt_f64(height),
        );
    }
    for point in &layout.points {
        let color = match point.status {
            PointStatus::Member => MEMBER_COLOR,
            PointStatus::Outlier => OUTLIER_COLOR,
        };
        let _ = writeln!(
            svg,
            r#"  <circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#,
            cx = fmt_f64(x(point.t)),
            cy = fmt_f64(y(point.y)),
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Renders local and global drift series as a simple SVG line plot.
pub fn emit_drift_svg(drift: &DriftSeries, width: u32, height: u32) -> String {
    let margin = 40.0;
    let plot_w = width as f64 - 2.0 * margin;
    let plot_h = height as f64 - 2.0 * margin;
    let n = drift.local.len().max(1) as f64;
    // similarity axis covers [-1, 1] so identity-calibrated series fit
    let y = |v: f64| margin + plot_h - plot_h * (v + 1.0) / 2.0;
    let x = |i: usize| margin + plot_w * i as f64 / (n - 1.0).max(1.0);

    let polyline = |series: &[f64]| -> String {
        series
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{},{}", fmt_f64(x(i)), fmt_f64(y(v))))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"  <rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"  <line x1="{m}" y1="{y0}" x2="{xe}" y2="{y0}" stroke="black" stroke-width="1"/>"#,
        m = fmt_f64(margin),
        y0 = fmt_f64(margin + plot_h),
        xe = fmt_f64(margin + plot_w)
    );
    let _ = writeln!(
        svg,
        r#"  <polyline points="{}" fill="none" stroke="{MEMBER_COLOR}" stroke-width="1.5"/>"#,
        polyline(&drift.local)
    );
    let _ = writeln!(
        svg,
        r#"  <polyline points="{}" fill="none" stroke="{OUTLIER_COLOR}" stroke-width="1.5"/>"#,
        polyline(&drift.global)
    );
    svg.push_str("</svg>\n");
    svg
}

/// Serialized analysis output for one parameter configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub regime: RegimeReport,
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(doc: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(doc)
    }
}

/// Drift series as CSV with header `t,local,global`, t = 1..=T.
pub fn drift_csv(drift: &DriftSeries) -> String {
    let mut out = String::from("t,local,global\n");
    for (i, (l, g)) in drift.local.iter().zip(&drift.global).enumerate() {
        let _ = writeln!(out, "{},{},{}", i + 1, fmt_f64(*l), fmt_f64(*g));
    }
    out
}
