//! Line-delimited JSON trajectory datasets.
//!
//! The first line is a [`DatasetHeader`]; every following line is one
//! [`TrajectoryRecord`]. Floats are written in shortest round-trip form and
//! parsed exactly, so a reload reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub env: String,
    pub seed: u64,
    pub count: usize,
    /// SHA-256 of the generating policy's checkpoint, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_checksum: Option<String>,
    /// Resolved run configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub costs: Vec<f64>,
    pub gamma: f64,
    pub env_name: String,
    pub seed: u64,
    #[serde(default)]
    pub index: u64,
    #[serde(default)]
    pub live_steps: Option<usize>,
}

impl TrajectoryRecord {
    pub fn new(trajectory: &Trajectory, env_name: &str, seed: u64, index: u64) -> Self {
        Self {
            states: trajectory.states.clone(),
            actions: trajectory.actions.clone(),
            costs: trajectory.costs.clone(),
            gamma: trajectory.gamma,
            env_name: env_name.to_string(),
            seed,
            index,
            live_steps: Some(trajectory.live_steps),
        }
    }

    pub fn to_trajectory(&self) -> Trajectory {
        Trajectory {
            states: self.states.clone(),
            actions: self.actions.clone(),
            costs: self.costs.clone(),
            gamma: self.gamma,
            live_steps: self.live_steps.unwrap_or(self.actions.len()),
        }
    }
}

pub fn write_dataset(path: &Path, header: &DatasetHeader, records: &[TrajectoryRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut line = |value: String| writeln!(out, "{value}").map_err(|e| Error::io(path, e));
    line(serde_json::to_string(header).map_err(|e| format_error(path, e))?)?;
    for record in records {
        if record.states.iter().flatten().chain(&record.costs).any(|x| !x.is_finite()) {
            return Err(Error::Format { path: path.into(), message: "non-finite value in trajectory".into() });
        }
        line(serde_json::to_string(record).map_err(|e| format_error(path, e))?)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<TrajectoryRecord>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header: DatasetHeader = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|source| Error::Parse { path: path.into(), line: 1, source })?
        }
        None => return Err(Error::Format { path: path.into(), message: "empty dataset".into() }),
    };
    if header.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Format {
            path: path.into(),
            message: format!("unsupported dataset format version {}", header.format_version),
        });
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord =
            serde_json::from_str(&line).map_err(|source| Error::Parse { path: path.into(), line: i + 1, source })?;
        record.to_trajectory().validate()?;
        records.push(record);
    }
    Ok((header, records))
}

fn format_error(path: &Path, e: serde_json::Error) -> Error {
    Error::Format { path: path.into(), message: e.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(count: usize) -> DatasetHeader {
        DatasetHeader {
            format_version: DATASET_FORMAT_VERSION,
            env: "test".into(),
            seed: 3,
            count,
            policy_checksum: Some("abc".into()),
            config: None,
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in prop::collection::vec(-1e300f64..1e300, 1..20), gamma in 0.0f64..1.0) {
            let n = values.len();
            let traj = Trajectory {
                states: (0..=n).map(|i| vec![values[i % n], values[(i + 1) % n] * 1e-310]).collect(),
                actions: (0..n).map(|i| i % 3).collect(),
                costs: values.clone(),
                gamma,
                live_steps: n,
            };
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("d.jsonl");
            let record = TrajectoryRecord::new(&traj, "test", 3, 0);
            write_dataset(&path, &header(1), std::slice::from_ref(&record)).unwrap();
            let (h, back) = read_dataset(&path).unwrap();
            prop_assert_eq!(h, header(1));
            let back = back[0].to_trajectory();
            prop_assert_eq!(
                back.states.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>(),
                traj.states.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
            prop_assert_eq!(back.costs.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), traj.costs.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.gamma.to_bits(), gamma.to_bits());
        }
    }

    #[test]
    fn missing_file_reports_path() {
        let err = read_dataset(Path::new("/nonexistent/x.jsonl")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.jsonl"));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let mut h = header(0);
        h.format_version = 99;
        write_dataset(&path, &h, &[]).unwrap();
        assert!(read_dataset(&path).is_err());
    }
}
