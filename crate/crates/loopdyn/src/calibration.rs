//! Isotonic similarity calibration: fit a monotone map from raw cosine to
//! human-aligned similarity and derive the high-confidence threshold.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{raw_cosine, Embedding, GeometryError};

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("insufficient data: need at least 2 pairs, got {0}")]
    InsufficientData(usize),
    #[error("degenerate abscissa: all raw values are identical")]
    DegenerateAbscissa,
    #[error("no pairs with target >= {0}")]
    NoHighSimilarityPairs(f64),
    #[error("invalid pair at row {row}: {reason}")]
    InvalidPair { row: usize, reason: String },
    #[error("quantile must be in (0, 1), got {0}")]
    InvalidQuantile(f64),
    #[error("dataset parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One calibration observation: raw cosine of a sentence pair and the
/// normalized human similarity judgment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationPair {
    pub raw: f64,
    pub target: f64,
}

impl CalibrationPair {
    pub fn new(raw: f64, target: f64) -> Result<Self, CalibrationError> {
        let check = |ok: bool, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(CalibrationError::InvalidPair {
                    row: 0,
                    reason: reason.to_string(),
                })
            }
        };
        check(raw.is_finite() && (-1.0..=1.0).contains(&raw), "raw outside [-1,1]")?;
        check(target.is_finite() && (0.0..=1.0).contains(&target), "target outside [0,1]")?;
        Ok(Self { raw, target })
    }
}

/// Monotone piecewise-linear map from raw cosine to calibrated similarity.
///
/// Knots are strictly increasing in `raw`, non-decreasing in `calibrated`,
/// with calibrated values in [0, 1]. Outside the knot range the map
/// extrapolates flat, keeping its output bounded and monotone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    pub knots: Vec<Knot>,
    pub tau_hcs: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub raw: f64,
    pub calibrated: f64,
}

impl CalibrationMap {
    pub fn apply(&self, raw: f64) -> f64 {
        let knots = &self.knots;
        let first = knots.first().expect("calibration map has at least one knot");
        let last = knots.last().unwrap();
        if raw <= first.raw {
            return first.calibrated;
        }
        if raw >= last.raw {
            return last.calibrated;
        }
        // raw is strictly inside the knot range; find the bracketing pair.
        let hi = knots.partition_point(|k| k.raw < raw);
        let (a, b) = (knots[hi - 1], knots[hi]);
        if b.raw == raw {
            return b.calibrated;
        }
        let t = (raw - a.raw) / (b.raw - a.raw);
        a.calibrated + t * (b.calibrated - a.calibrated)
    }

    pub fn save(&self, path: &Path) -> Result<(), CalibrationError> {
        let doc = serde_json::to_string_pretty(self).expect("map serializes");
        fs::write(path, doc)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CalibrationError> {
        let doc = fs::read_to_string(path)?;
        serde_json::from_str(&doc).map_err(|e| CalibrationError::Parse {
            line: e.line(),
            reason: e.to_string(),
        })
    }
}

/// Similarity function used throughout the analysis: either raw cosine
/// (identity map) or cosine remapped through a fitted calibration map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Similarity {
    Identity,
    Calibrated(CalibrationMap),
}

impl Similarity {
    pub fn apply(&self, raw: f64) -> f64 {
        match self {
            Similarity::Identity => raw,
            Similarity::Calibrated(map) => map.apply(raw),
        }
    }

    pub fn similarity(&self, a: &Embedding, b: &Embedding) -> Result<f64, GeometryError> {
        Ok(self.apply(raw_cosine(a, b)?))
    }
}

/// Least-squares monotone (non-decreasing) regression of `target` on `raw`
/// via pool-adjacent-violators. Ties in `raw` are pooled by mean before
/// fitting; fitted values are clipped to [0, 1].
pub fn fit_isotonic(pairs: &[CalibrationPair]) -> Result<CalibrationMap, CalibrationError> {
    if pairs.len() < 2 {
        return Err(CalibrationError::InsufficientData(pairs.len()));
    }
    let mut sorted: Vec<_> = pairs.to_vec();
    sorted.sort_by(|a, b| a.raw.partial_cmp(&b.raw).unwrap());

    // Pool exact ties in raw: one abscissa per distinct raw, weighted mean target.
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut ws: Vec<f64> = Vec::new();
    for p in &sorted {
        if xs.last() == Some(&p.raw) {
            let n = xs.len() - 1;
            ys[n] = (ys[n] * ws[n] + p.target) / (ws[n] + 1.0);
            ws[n] += 1.0;
        } else {
            xs.push(p.raw);
            ys.push(p.target);
            ws.push(1.0);
        }
    }
    if xs.len() < 2 {
        return Err(CalibrationError::DegenerateAbscissa);
    }

    // Pool-adjacent-violators: blocks carry (mean, weight); merge while the
    // previous block mean exceeds the current one.
    let mut means: Vec<f64> = Vec::with_capacity(xs.len());
    let mut weights: Vec<f64> = Vec::with_capacity(xs.len());
    let mut sizes: Vec<usize> = Vec::with_capacity(xs.len());
    for (&y, &w) in ys.iter().zip(&ws) {
        means.push(y);
        weights.push(w);
        sizes.push(1);
        while means.len() > 1 && means[means.len() - 2] > means[means.len() - 1] {
            let (m2, w2, s2) = (means.pop().unwrap(), weights.pop().unwrap(), sizes.pop().unwrap());
            let n = means.len() - 1;
            means[n] = (means[n] * weights[n] + m2 * w2) / (weights[n] + w2);
            weights[n] += w2;
            sizes[n] += s2;
        }
    }

    let mut knots = Vec::with_capacity(xs.len());
    let mut idx = 0;
    for (block, &size) in sizes.iter().enumerate() {
        let value = means[block].clamp(0.0, 1.0);
        for _ in 0..size {
            knots.push(Knot {
                raw: xs[idx],
                calibrated: value,
            });
            idx += 1;
        }
    }
    Ok(CalibrationMap { knots, tau_hcs: None })
}

/// The `quantile`-quantile (lower interpolation) of calibrated similarity
/// over pairs whose human target is at least `high_target_cut`.
pub fn hcs_threshold(
    pairs: &[CalibrationPair],
    map: &CalibrationMap,
    high_target_cut: f64,
    quantile: f64,
) -> Result<f64, CalibrationError> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(CalibrationError::InvalidQuantile(quantile));
    }
    let mut values: Vec<f64> = pairs
        .iter()
        .filter(|p| p.target >= high_target_cut)
        .map(|p| map.apply(p.raw))
        .collect();
    if values.is_empty() {
        return Err(CalibrationError::NoHighSimilarityPairs(high_target_cut));
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((quantile * values.len() as f64).floor() as usize).min(values.len() - 1);
    Ok(values[idx])
}

/// A calibration dataset row before raw cosines are available: either a
/// precomputed (raw, score) observation or a sentence pair whose cosine is
/// computed against an embedding backend at fit time.
#[derive(Debug, Clone)]
pub enum DatasetRow {
    Raw { raw: f64, score: f64 },
    Sentences { a: String, b: String, score: f64 },
}

/// Parses a UTF-8 TSV calibration dataset. The header row selects the schema:
/// `raw_cosine<TAB>human_score` or `sentence_a<TAB>sentence_b<TAB>human_score`.
/// Human scores on an arbitrary scale are min-max normalized to [0, 1] by
/// [`normalize_scores`] after ingestion.
pub fn parse_dataset(content: &str) -> Result<Vec<DatasetRow>, CalibrationError> {
    let mut lines = content.lines().enumerate();
    let (_, header) = lines.next().ok_or(CalibrationError::Parse {
        line: 1,
        reason: "empty file; header row required".into(),
    })?;
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    let schema_raw = cols == ["raw_cosine", "human_score"];
    let schema_sentences = cols == ["sentence_a", "sentence_b", "human_score"];
    if !schema_raw && !schema_sentences {
        return Err(CalibrationError::Parse {
            line: 1,
            reason: format!("unrecognized header {cols:?}"),
        });
    }

    let parse_f64 = |s: &str, line: usize| -> Result<f64, CalibrationError> {
        s.trim().parse::<f64>().map_err(|e| CalibrationError::Parse {
            line,
            reason: format!("bad number {s:?}: {e}"),
        })
    };

    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if schema_raw {
            if fields.len() != 2 {
                return Err(CalibrationError::Parse {
                    line: lineno,
                    reason: format!("expected 2 columns, got {}", fields.len()),
                });
            }
            rows.push(DatasetRow::Raw {
                raw: parse_f64(fields[0], lineno)?,
                score: parse_f64(fields[1], lineno)?,
            });
        } else {
            if fields.len() != 3 {
                return Err(CalibrationError::Parse {
                    line: lineno,
                    reason: format!("expected 3 columns, got {}", fields.len()),
                });
            }
            rows.push(DatasetRow::Sentences {
                a: fields[0].to_string(),
                b: fields[1].to_string(),
                score: parse_f64(fields[2], lineno)?,
            });
        }
    }
    Ok(rows)
}

/// Min-max normalizes human scores to [0, 1]. Constant scores map to 0.5.
pub fn normalize_scores(scores: &[f64]) -> Vec<f64> {
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max - min <= f64::EPSILON {
        return vec![0.5; scores.len()];
    }
    scores.iter().map(|s| (s - min) / (max - min)).collect()
}
