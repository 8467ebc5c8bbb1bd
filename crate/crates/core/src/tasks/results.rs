//! The shared results table.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const RESULT_COLUMNS: [&str; 7] = [
    "task", "policy", "capacity", "eta", "metric", "value", "seed",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task: String,
    pub policy: String,
    pub capacity: usize,
    pub eta: f64,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

pub fn write_results(rows: &[ResultRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.task.clone(),
            r.policy.clone(),
            r.capacity.to_string(),
            format!("{}", r.eta),
            r.metric.clone(),
            format!("{:.6}", r.value),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
