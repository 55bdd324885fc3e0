//! Machine-readable run reports. Field order, map ordering and float
//! formatting are all deterministic, so identical scenarios and seeds
//! produce byte-identical files.

use defrisk::replication::{JumpResidual, TraceRow};
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Serialize)]
pub struct EngineResult {
    pub engine: String,
    pub price: f64,
    pub std_error: Option<f64>,
    pub tolerance: f64,
    /// Whether this result participates in pairwise cross-checks.
    pub in_cross_checks: bool,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossCheck {
    pub a: String,
    pub b: String,
    pub diff: f64,
    pub combined_tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimSection {
    pub mean_drift: f64,
    pub drift_std_error: f64,
    pub predicted_drift: f64,
    pub money_account_spread: f64,
    pub verdict: String,
    pub arbitrage_flag: bool,
    pub n_paths: usize,
    pub n_default_paths: usize,
    pub jump_residuals: Vec<JumpResidual>,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub scenario_id: String,
    pub scenario_hash: String,
    pub engine_versions: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub engines: Vec<EngineResult>,
    pub cross_checks: Vec<CrossCheck>,
    pub notes: Vec<String>,
    pub sim: Option<SimSection>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Flat CSV form: one row per engine result and per cross-check.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,a,b,price,std_error,tolerance,diff,pass\n");
        for e in &self.engines {
            out.push_str(&format!(
                "engine,{},,{},{},{},,\n",
                e.engine,
                e.price,
                e.std_error.map(|s| s.to_string()).unwrap_or_default(),
                e.tolerance
            ));
        }
        for c in &self.cross_checks {
            out.push_str(&format!(
                "cross_check,{},{},,,{},{},{}\n",
                c.a, c.b, c.combined_tolerance, c.diff, c.pass
            ));
        }
        if let Some(sim) = &self.sim {
            out.push_str(&format!(
                "sim,,,{},{},,,{}\n",
                sim.mean_drift, sim.drift_std_error, sim.verdict
            ));
        }
        out
    }
}
