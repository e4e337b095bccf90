//! Per-run training and validation records.

use std::fmt::Write as _;

use aot_core::Direction;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub step: usize,
    pub lr: f64,
    pub split: Split,
    pub loss: f64,
    /// Mean loss at each sentence position in natural order.
    pub per_position: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub direction: Direction,
    pub seed: u64,
    pub config_hash: String,
    records: Vec<Record>,
}

impl RunLog {
    pub fn new(direction: Direction, seed: u64, config_hash: impl Into<String>) -> Self {
        Self { direction, seed, config_hash: config_hash.into(), records: Vec::new() }
    }

    /// Appends a record; steps must not decrease.
    pub fn push(&mut self, record: Record) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step < last.step {
                return Err(TrainError::Consistency(format!("log step {} after step {}", record.step, last.step)));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn validation(&self) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(|r| r.split == Split::Val)
    }

    pub fn final_validation(&self) -> Option<&Record> {
        self.validation().last()
    }

    /// `step,lr,split,loss[,pos_0..pos_{n-1}]`; training rows leave the
    /// position columns empty.
    pub fn to_csv(&self) -> String {
        let width = self.records.iter().filter_map(|r| r.per_position.as_ref().map(Vec::len)).max().unwrap_or(0);
        let mut out = String::from("step,lr,split,loss");
        for i in 0..width {
            write!(out, ",pos_{i}").unwrap();
        }
        out.push('\n');
        for r in &self.records {
            write!(out, "{},{:.9e},{},{:.6}", r.step, r.lr, r.split.as_str(), r.loss).unwrap();
            let pos = r.per_position.as_deref().unwrap_or(&[]);
            for i in 0..width {
                match pos.get(i) {
                    Some(v) => write!(out, ",{v:.6}").unwrap(),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}
