use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const CSV_HEADER: &str = "phase,epoch,sup_loss,d_loss,g_loss,d_acc,seconds";

/// One epoch of one phase. Losses that a phase does not compute are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub phase: String,
    pub epoch: usize,
    pub sup_loss: Option<f64>,
    pub d_loss: Option<f64>,
    pub g_loss: Option<f64>,
    pub d_acc: Option<f64>,
    pub seconds: f64,
}

impl ReportRow {
    pub fn new(phase: &str, epoch: usize) -> Self {
        ReportRow { phase: phase.to_string(), epoch, sup_loss: None, d_loss: None, g_loss: None, d_acc: None, seconds: 0.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub rows: Vec<ReportRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl PhaseReport {
    pub fn push(&mut self, row: ReportRow) {
        log::info!(
            "{} epoch {}: sup={} d={} g={} acc={}",
            row.phase,
            row.epoch,
            cell(row.sup_loss),
            cell(row.d_loss),
            cell(row.g_loss),
            cell(row.d_acc)
        );
        self.rows.push(row);
    }

    pub fn phase(&self, phase: &str) -> impl Iterator<Item = &ReportRow> {
        let phase = phase.to_string();
        self.rows.iter().filter(move |r| r.phase == phase)
    }

    pub fn extend(&mut self, other: PhaseReport) {
        self.rows.extend(other.rows);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.phase,
                r.epoch,
                cell(r.sup_loss),
                cell(r.d_loss),
                cell(r.g_loss),
                cell(r.d_acc),
                r.seconds
            );
        }
        out
    }
}
