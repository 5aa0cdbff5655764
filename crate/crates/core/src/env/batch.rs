use rand::Rng;

use super::trajectory::TrajectoryRecord;
use crate::error::{Error, Result};

/// `B` equal-length windows cut from the source records.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub sequences: Vec<TrajectoryRecord>,
    /// `(record index, 0-based start step)` of each window.
    pub origins: Vec<(usize, usize)>,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.sequences.first().map(|s| s.len()).unwrap_or(0)
    }
}

/// Endless stream of batches of windows sampled uniformly (with
/// replacement) among all length-`seq_len` windows of the records.
#[derive(Debug, Clone)]
pub struct Batcher<'a> {
    records: &'a [TrajectoryRecord],
    eligible: Vec<usize>,
    cumulative: Vec<usize>,
    batch_size: usize,
    seq_len: usize,
    skipped: usize,
}

impl<'a> Batcher<'a> {
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn total_windows(&self) -> usize {
        self.cumulative.last().copied().unwrap_or(0)
    }

    pub fn next_batch(&self, rng: &mut impl Rng) -> SequenceBatch {
        let total = self.total_windows();
        let mut sequences = Vec::with_capacity(self.batch_size);
        let mut origins = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            let u = rng.random_range(0..total);
            let k = self.cumulative.partition_point(|&c| c <= u);
            let before = if k == 0 { 0 } else { self.cumulative[k - 1] };
            let rec = self.eligible[k];
            let start = u - before;
            sequences.push(self.records[rec].window(start, self.seq_len));
            origins.push((rec, start));
        }
        SequenceBatch { sequences, origins }
    }
}

pub fn make_batches(records: &[TrajectoryRecord], batch_size: usize, seq_len: usize) -> Result<Batcher<'_>> {
    if batch_size == 0 || seq_len == 0 {
        return Err(Error::contract("batch size and sequence length must be positive"));
    }
    let mut eligible = Vec::new();
    let mut cumulative = Vec::new();
    let mut skipped = 0;
    let mut acc = 0;
    for (i, r) in records.iter().enumerate() {
        if r.len() < seq_len {
            skipped += 1;
            continue;
        }
        acc += r.len() - seq_len + 1;
        eligible.push(i);
        cumulative.push(acc);
    }
    if skipped > 0 {
        log::warn!("{skipped} record(s) shorter than {seq_len} steps skipped");
    }
    if eligible.is_empty() {
        return Err(Error::contract(format!("no record has at least {seq_len} steps")));
    }
    Ok(Batcher { records, eligible, cumulative, batch_size, seq_len, skipped })
}
