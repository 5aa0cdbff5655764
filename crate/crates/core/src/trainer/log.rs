use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Pretrain,
    Imagine,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Imagine => "imagine",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pretrain" => Some(Stage::Pretrain),
            "imagine" => Some(Stage::Imagine),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    /// 1-based within the stage.
    pub epoch: usize,
    pub stage: Stage,
    pub train_loss: f64,
    pub val_loss: f64,
    pub test_mae: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
}

pub const LOG_HEADER: &str = "epoch,stage,train_loss,val_loss,test_mae,lr,seconds";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn push(&mut self, row: LogRow) -> Result<()> {
        if let Some(last) = self.rows.iter().rev().find(|r| r.stage == row.stage) {
            if row.epoch != last.epoch + 1 {
                return Err(Error::contract(format!(
                    "{} log jumps from epoch {} to {}",
                    row.stage.as_str(),
                    last.epoch,
                    row.epoch
                )));
            }
        } else if row.epoch != 1 {
            return Err(Error::contract(format!("{} log starts at epoch {}", row.stage.as_str(), row.epoch)));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn stage(&self, stage: Stage) -> impl Iterator<Item = &LogRow> {
        self.rows.iter().filter(move |r| r.stage == stage)
    }

    /// Equality of everything except wall-clock time.
    pub fn same_run(&self, other: &TrainingLog) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.stage == b.stage
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.val_loss.to_bits() == b.val_loss.to_bits()
                    && a.test_mae.map(f64::to_bits) == b.test_mae.map(f64::to_bits)
                    && a.lr.to_bits() == b.lr.to_bits()
            })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(LOG_HEADER);
        out.push('\n');
        for r in &self.rows {
            let mae = r.test_mae.map(|m| m.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.3}",
                r.epoch,
                r.stage.as_str(),
                r.train_loss,
                r.val_loss,
                mae,
                r.lr,
                r.seconds
            );
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Parse { path: "<training log>".into(), line, msg };
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(LOG_HEADER) {
            return Err(bad(1, format!("expected header `{LOG_HEADER}`")));
        }
        let mut log = TrainingLog::default();
        for (i, l) in lines.enumerate() {
            let line = i + 2;
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(bad(line, format!("expected 7 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(line, e.to_string()));
            log.rows.push(LogRow {
                epoch: f[0].parse().map_err(|e: std::num::ParseIntError| bad(line, e.to_string()))?,
                stage: Stage::parse(f[1]).ok_or_else(|| bad(line, format!("unknown stage `{}`", f[1])))?,
                train_loss: num(f[2])?,
                val_loss: num(f[3])?,
                test_mae: if f[4].is_empty() { None } else { Some(num(f[4])?) },
                lr: num(f[5])?,
                seconds: num(f[6])?,
            });
        }
        Ok(log)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: usize, stage: Stage) -> LogRow {
        LogRow { epoch, stage, train_loss: 1.5, val_loss: -0.25, test_mae: None, lr: 1e-3, seconds: 0.5 }
    }

    #[test]
    fn epochs_must_be_contiguous() {
        let mut log = TrainingLog::default();
        log.push(row(1, Stage::Pretrain)).unwrap();
        log.push(row(2, Stage::Pretrain)).unwrap();
        assert!(log.push(row(4, Stage::Pretrain)).is_err());
        log.push(row(1, Stage::Imagine)).unwrap();
        assert!(log.push(row(1, Stage::Imagine)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut log = TrainingLog::default();
        log.push(row(1, Stage::Pretrain)).unwrap();
        log.push(LogRow { test_mae: Some(0.75), ..row(1, Stage::Imagine) }).unwrap();
        let back = TrainingLog::parse_csv(&log.to_csv()).unwrap();
        assert!(back.same_run(&log));
        assert_eq!(back.to_csv(), log.to_csv());
    }
}
