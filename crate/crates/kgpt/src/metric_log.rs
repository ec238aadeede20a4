//! Per-epoch learning-curve CSV.

use std::path::Path;

use kgpt_core::training::EpochLog;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub steps: u64,
    pub train_loss: f64,
    pub val_bleu: Option<f64>,
    pub val_ppl: Option<f64>,
}

impl From<&EpochLog> for MetricRow {
    fn from(e: &EpochLog) -> Self {
        Self {
            epoch: e.epoch,
            steps: e.steps,
            train_loss: e.train_loss,
            val_bleu: e.val_bleu,
            val_ppl: e.val_ppl,
        }
    }
}

pub fn render(log: &[EpochLog]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in log {
        w.serialize(MetricRow::from(e)).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

pub fn write(path: &Path, log: &[EpochLog]) -> Result<(), CliError> {
    io::write_atomic(path, &render(log))
}

pub fn read(path: &Path) -> Result<Vec<MetricRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<MetricRow>, _>>()
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    CliError::Parse {
        path: path.into(),
        line,
        msg: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let log = vec![
            EpochLog {
                epoch: 1,
                steps: 4,
                train_loss: 2.5,
                val_bleu: Some(10.25),
                val_ppl: Some(7.0),
            },
            EpochLog {
                epoch: 2,
                steps: 8,
                train_loss: 1.5,
                val_bleu: None,
                val_ppl: None,
            },
        ];
        let text = String::from_utf8(render(&log)).unwrap();
        assert_eq!(
            text.lines().next(),
            Some("epoch,steps,train_loss,val_bleu,val_ppl")
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write(&path, &log).unwrap();
        let back = read(&path).unwrap();
        assert_eq!(back, log.iter().map(MetricRow::from).collect::<Vec<_>>());
    }
}
