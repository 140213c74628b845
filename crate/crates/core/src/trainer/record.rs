use serde::{Deserialize, Serialize};

use crate::loss::LossMode;

/// One evaluation of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub epoch: usize,
    pub wall_time_s: f64,
    /// Mean training loss of the most recent step; NaN before the first step.
    pub train_loss: f64,
    pub test_rel_l2: f64,
    pub mode: LossMode,
    pub learning_rate: f64,
}

/// Convergence telemetry of a single seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub rows: Vec<RecordRow>,
    /// `(epoch, new mode)` for every mode switch.
    pub transitions: Vec<(usize, LossMode)>,
    /// Test error of the last evaluation.
    pub final_error: f64,
}

impl RunRecord {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rows: Vec::new(),
            transitions: Vec::new(),
            final_error: f64::NAN,
        }
    }

    pub fn push(&mut self, row: RecordRow) {
        debug_assert!(self.rows.last().is_none_or(|r| r.epoch < row.epoch));
        self.final_error = row.test_rel_l2;
        self.rows.push(row);
    }

    /// Mode active at `epoch`, reconstructed from the transitions.
    pub fn mode_at(&self, epoch: usize, initial: LossMode) -> LossMode {
        self.transitions
            .iter()
            .take_while(|(e, _)| *e <= epoch)
            .last()
            .map_or(initial, |(_, m)| *m)
    }

    /// Equality ignoring wall-clock timings.
    pub fn same_trajectory(&self, other: &RunRecord) -> bool {
        let strip = |r: &RunRecord| -> Vec<(usize, u64, u64, LossMode, u64)> {
            r.rows
                .iter()
                .map(|row| {
                    (
                        row.epoch,
                        row.train_loss.to_bits(),
                        row.test_rel_l2.to_bits(),
                        row.mode,
                        row.learning_rate.to_bits(),
                    )
                })
                .collect()
        };
        self.seed == other.seed
            && self.transitions == other.transitions
            && strip(self) == strip(other)
    }
}
