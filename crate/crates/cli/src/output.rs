use std::fs::File;
use std::io;
use std::path::Path;

use rspinn::trainer::RecordRow;

pub const RUN_HEADER: [&str; 5] = ["epoch", "wall_time_s", "train_loss", "test_rel_l2", "mode"];
pub const SUMMARY_HEADER: [&str; 4] = ["seed", "final_test_rel_l2", "wall_time_s", "status"];

/// 17 significant digits, enough to round-trip an `f64`.
pub fn float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Per-seed record, flushed row by row so a crash leaves a partial file.
pub struct RunWriter {
    inner: csv::Writer<File>,
}

impl RunWriter {
    pub fn create(path: &Path) -> io::Result<Self> {
        let mut inner = csv::Writer::from_path(path)?;
        inner.write_record(RUN_HEADER)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &RecordRow) -> io::Result<()> {
        self.inner.write_record([
            row.epoch.to_string(),
            float(row.wall_time_s),
            float(row.train_loss),
            float(row.test_rel_l2),
            row.mode.to_string(),
        ])?;
        self.inner.flush()
    }
}

pub struct SummaryRow {
    pub seed: String,
    pub final_error: f64,
    pub wall_time_s: f64,
    pub status: String,
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([r.seed.clone(), float(r.final_error), float(r.wall_time_s), r.status.clone()])?;
    }
    w.flush()
}
