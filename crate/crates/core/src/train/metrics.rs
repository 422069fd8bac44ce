//! Per-epoch metrics and their CSV/JSON files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{cell_l1, Split};

/// One evaluation of one split. `wall_time` (seconds since training
/// started) is kept out of the metrics files so they stay reproducible;
/// it is written to `timing.csv` instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: Split,
    pub lr: f32,
    pub top1: f64,
    pub top5: f64,
    pub loss: f64,
    pub l1: f64,
    #[serde(skip)]
    pub wall_time: f64,
}

/// Running sums for top-1, top-5, loss and grid L1.
#[derive(Debug, Clone, Default)]
pub struct Accumulator {
    n: usize,
    top1: usize,
    top5: usize,
    loss: f64,
    l1: usize,
}

/// Rank of the true class among `scores`; ties go to the lower index, so
/// rank 0 coincides with the lowest-index argmax.
pub fn rank_of(scores: &[f64], label: usize) -> usize {
    let s = scores[label];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < label))
        .count()
}

/// Lowest-index maximum.
pub fn argmax(scores: &[f64]) -> usize {
    scores
        .iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            },
        )
        .0
}

impl Accumulator {
    /// Add one sample: class probabilities (or any monotone scores), its
    /// loss and the true label.
    pub fn add(&mut self, scores: &[f64], loss: f64, label: usize, grid: usize) {
        let rank = rank_of(scores, label);
        self.n += 1;
        self.top1 += usize::from(rank == 0);
        self.top5 += usize::from(rank < 5);
        self.loss += loss;
        self.l1 += cell_l1(argmax(scores), label, grid);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn row(&self, epoch: usize, split: Split, lr: f32, wall_time: f64) -> MetricsRow {
        let n = self.n.max(1) as f64;
        MetricsRow {
            epoch,
            split,
            lr,
            top1: self.top1 as f64 / n,
            top5: self.top5 as f64 / n,
            loss: self.loss / n,
            l1: self.l1 as f64 / n,
            wall_time,
        }
    }
}

pub const CSV_HEADER: &str = "epoch,split,lr,top1,top5,loss,l1";

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch, r.split, r.lr, r.top1, r.top5, r.loss, r.l1
        ));
    }
    s
}

/// Write `metrics.csv`, `metrics.json` and `timing.csv` into `dir`.
pub fn write_metrics(dir: &Path, rows: &[MetricsRow]) -> Result<()> {
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    write("metrics.csv", to_csv(rows))?;
    write(
        "metrics.json",
        serde_json::to_string_pretty(rows).expect("rows serialize") + "\n",
    )?;
    let mut timing = String::from("epoch,split,wall_time\n");
    for r in rows {
        timing.push_str(&format!("{},{},{:.3}\n", r.epoch, r.split, r.wall_time));
    }
    write("timing.csv", timing)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_resolve_to_the_lower_index() {
        assert_eq!(rank_of(&[0.5; 4], 0), 0);
        assert_eq!(rank_of(&[0.5; 4], 3), 3);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn accumulator_reports_rates_and_grid_distance() {
        let mut acc = Accumulator::default();
        let mut scores = vec![0.0; 16];
        scores[5] = 1.0;
        acc.add(&scores, 0.2, 5, 4);
        acc.add(&scores, 0.6, 15, 4);
        let row = acc.row(0, Split::Val, 0.01, 0.0);
        assert_eq!((row.top1, row.top5), (0.5, 0.5));
        assert!((row.loss - 0.4).abs() < 1e-12);
        // Cell 5 is (1, 1), cell 15 is (3, 3).
        assert_eq!(row.l1, 2.0);
        assert!(row.top1 <= row.top5 && row.top5 <= 1.0);
    }

    #[test]
    fn csv_has_a_header_and_one_line_per_row() {
        let rows = vec![Accumulator::default().row(0, Split::Train, 0.01, 1.5); 2];
        let csv = to_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with(CSV_HEADER));
        assert!(!serde_json::to_string(&rows).unwrap().contains("wall_time"));
    }
}
