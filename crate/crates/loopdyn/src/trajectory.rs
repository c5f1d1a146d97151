//! Trajectory records and the JSONL persistence format.
//!
//! One record per iteration, ordered by `t`, floats serialized with
//! round-trip-exact decimal representation (serde_json's shortest form).

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Embedding, GeometryError};

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("trajectory indices not contiguous from 0: expected {expected}, found {found}")]
    NonContiguous { expected: usize, found: usize },
    #[error("record {t} has no embedding; run `analyze --embedder ...` or embed the trajectory first")]
    MissingEmbedding { t: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One persisted loop iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: usize,
    pub text: String,
    /// Intermediate outputs of each phase for composite loops; the last
    /// entry equals `text`. Empty for the initial record.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phase_texts: Vec<String>,
    pub prompt_id: String,
    pub model: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub timestamp_utc: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    /// Set on the final record of a run that aborted mid-loop.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted_reason: Option<String>,
}

/// In-memory analysis view of a trajectory: iteration index, artifact text
/// and unit embedding. Indices are contiguous from 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    points: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub t: usize,
    pub text: String,
    pub embedding: Embedding,
}

impl Trajectory {
    pub fn new(points: Vec<TrajectoryPoint>) -> Result<Self, TrajectoryError> {
        if points.is_empty() {
            return Err(TrajectoryError::EmptyTrajectory);
        }
        let dim = points[0].embedding.dim();
        for (i, p) in points.iter().enumerate() {
            if p.t != i {
                return Err(TrajectoryError::NonContiguous { expected: i, found: p.t });
            }
            if p.embedding.dim() != dim {
                return Err(GeometryError::DimMismatch(dim, p.embedding.dim()).into());
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[TrajectoryPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Last iteration index T.
    pub fn horizon(&self) -> usize {
        self.points.len() - 1
    }

    pub fn embedding(&self, t: usize) -> &Embedding {
        &self.points[t].embedding
    }

    pub fn dim(&self) -> usize {
        self.points[0].embedding.dim()
    }

    /// Builds the analysis view from persisted records, requiring an
    /// embedding on every record. A trailing aborted marker is dropped.
    pub fn from_records(records: &[TrajectoryRecord]) -> Result<Self, TrajectoryError> {
        let points = records
            .iter()
            .filter(|r| r.aborted_reason.is_none())
            .map(|r| {
                let values = r
                    .embedding
                    .as_ref()
                    .ok_or(TrajectoryError::MissingEmbedding { t: r.t })?;
                Ok(TrajectoryPoint {
                    t: r.t,
                    text: r.text.clone(),
                    embedding: Embedding::from_unit(values.clone())?,
                })
            })
            .collect::<Result<Vec<_>, TrajectoryError>>()?;
        Trajectory::new(points)
    }
}

pub fn read_records(path: &Path) -> Result<Vec<TrajectoryRecord>, TrajectoryError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord =
            serde_json::from_str(&line).map_err(|e| TrajectoryError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(TrajectoryError::EmptyTrajectory);
    }
    Ok(records)
}

pub fn write_records(path: &Path, records: &[TrajectoryRecord]) -> Result<(), TrajectoryError> {
    let mut store = TrajectoryStore::create(path)?;
    for r in records {
        store.append(r)?;
    }
    Ok(())
}

/// Append-only JSONL writer; each record is flushed before the next
/// iteration may start, so a crashed run leaves a valid partial file.
pub struct TrajectoryStore {
    writer: BufWriter<File>,
    next_t: usize,
}

impl TrajectoryStore {
    pub fn create(path: &Path) -> Result<Self, TrajectoryError> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)?;
        Ok(Self {
            writer: BufWriter::new(file),
            next_t: 0,
        })
    }

    pub fn append(&mut self, record: &TrajectoryRecord) -> Result<(), TrajectoryError> {
        if record.t != self.next_t {
            return Err(TrajectoryError::NonContiguous {
                expected: self.next_t,
                found: record.t,
            });
        }
        let line = serde_json::to_string(record).expect("record serializes");
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        self.next_t += 1;
        Ok(())
    }
}
