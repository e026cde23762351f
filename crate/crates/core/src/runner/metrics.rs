//! Per-epoch metrics rows and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use crate::binio;
use crate::Result;

pub const METRICS_HEADER: &str =
    "phase,epoch,train_loss,train_acc,test_loss,test_acc,wall_ms,alpha,backtracks,skipped_updates";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Baseline,
    Projected,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Baseline => "baseline",
            Phase::Projected => "projected",
        }
    }
}

/// One epoch of training. Epoch 0 is the evaluation before the first step.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub phase: Phase,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub wall_ms: u64,
    /// P-BFGS only: mean accepted step length over the epoch.
    pub alpha: Option<f64>,
    /// P-BFGS only: backtracks taken during the epoch.
    pub backtracks: Option<usize>,
    /// P-BFGS only: skipped inverse-Hessian updates so far.
    pub skipped_updates: Option<usize>,
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV text: the fixed header then one LF-terminated line per row. Floats use
/// the shortest representation that round-trips.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.phase.as_str(),
            r.epoch,
            r.train_loss,
            r.train_acc,
            r.test_loss,
            r.test_acc,
            r.wall_ms,
            opt(r.alpha),
            opt(r.backtracks),
            opt(r.skipped_updates)
        )
        .unwrap();
    }
    out
}

pub fn emit_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    binio::write_atomic(path, metrics_csv(rows).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> MetricsRow {
        MetricsRow {
            phase: Phase::Baseline,
            epoch: 3,
            train_loss: 0.25,
            train_acc: 0.875,
            test_loss: 0.1 + 0.2,
            test_acc: 1.0,
            wall_ms: 12,
            alpha: None,
            backtracks: None,
            skipped_updates: None,
        }
    }

    #[test]
    fn header_only_for_no_rows() {
        assert_eq!(metrics_csv(&[]), format!("{METRICS_HEADER}\n"));
    }

    #[test]
    fn one_row_gives_two_lines() {
        let text = metrics_csv(&[row()]);
        assert_eq!(text, format!("{METRICS_HEADER}\nbaseline,3,0.25,0.875,0.30000000000000004,1,12,,,\n"));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn projected_extras_are_filled() {
        let mut r = row();
        r.phase = Phase::Projected;
        r.alpha = Some(0.55);
        r.backtracks = Some(4);
        r.skipped_updates = Some(0);
        assert!(metrics_csv(&[r]).ends_with("projected,3,0.25,0.875,0.30000000000000004,1,12,0.55,4,0\n"));
    }

    #[test]
    fn written_file_matches_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        emit_metrics(&path, &[row(), row()]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), metrics_csv(&[row(), row()]));
    }
}
