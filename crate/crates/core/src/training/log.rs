use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetKind, Initialization, TrainingError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: usize,
    pub dataset: DatasetKind,
    /// 1-based within the stage.
    pub epoch: u32,
    pub steps: usize,
    pub mean_loss: f64,
    pub reconstruction: f64,
    pub type_reconstruction: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub dataset: DatasetKind,
    pub epochs: u32,
    pub wall_seconds: f64,
    pub checkpoint: String,
}

/// One line of `training_log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Run {
        plan: String,
        initialization: Initialization,
        seeds: Vec<u64>,
        stages: usize,
    },
    Epoch(EpochRecord),
    Stage(StageRecord),
}

#[derive(Debug)]
pub struct TrainingLog {
    path: Option<PathBuf>,
    file: Option<File>,
    pub entries: Vec<LogEntry>,
}

impl TrainingLog {
    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> TrainingError + '_ {
        move |source| TrainingError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Truncates `path` and appends every subsequent entry to it.
    pub fn create(path: &Path) -> Result<TrainingLog, TrainingError> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(Self::io(path))?;
        Ok(TrainingLog {
            path: Some(path.to_path_buf()),
            file: Some(file),
            entries: Vec::new(),
        })
    }

    pub fn in_memory() -> TrainingLog {
        TrainingLog {
            path: None,
            file: None,
            entries: Vec::new(),
        }
    }

    pub fn append(&mut self, entry: &LogEntry) -> Result<(), TrainingError> {
        if let (Some(file), Some(path)) = (self.file.as_mut(), self.path.as_deref()) {
            let line = serde_json::to_string(entry).expect("log entry serializes");
            writeln!(file, "{line}").map_err(Self::io(path))?;
            file.flush().map_err(Self::io(path))?;
        }
        self.entries.push(entry.clone());
        Ok(())
    }

    pub fn read(path: &Path) -> Result<TrainingLog, TrainingError> {
        let reader = BufReader::new(fs::File::open(path).map_err(Self::io(path))?);
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(Self::io(path))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(
                serde_json::from_str(&line)
                    .map_err(|e| TrainingError::Config(format!("{} line {}: {e}", path.display(), i + 1)))?,
            );
        }
        Ok(TrainingLog {
            path: Some(path.to_path_buf()),
            file: None,
            entries,
        })
    }

    pub fn epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.entries.iter().filter_map(|e| match e {
            LogEntry::Epoch(r) => Some(r),
            _ => None,
        })
    }

    pub fn epoch_losses(&self) -> Vec<f64> {
        self.epochs().map(|r| r.mean_loss).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut log = TrainingLog::create(&path).unwrap();
        let entries = vec![
            LogEntry::Run {
                plan: "baseline".into(),
                initialization: Initialization::Fresh,
                seeds: vec![1, 1],
                stages: 2,
            },
            LogEntry::Epoch(EpochRecord {
                stage: 0,
                dataset: DatasetKind::Pokemon,
                epoch: 1,
                steps: 3,
                mean_loss: 1234.5,
                reconstruction: 1200.0,
                type_reconstruction: 4.5,
                kl: 30.0,
            }),
            LogEntry::Stage(StageRecord {
                stage: 0,
                dataset: DatasetKind::Pokemon,
                epochs: 1,
                wall_seconds: 0.25,
                checkpoint: "stage01_pokemon.ckpt".into(),
            }),
        ];
        for e in &entries {
            log.append(e).unwrap();
        }
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().next().unwrap().contains("\"kind\":\"run\""));
        let back = TrainingLog::read(&path).unwrap();
        assert_eq!(back.entries, entries);
        assert_eq!(back.epoch_losses(), vec![1234.5]);
    }
}
