use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PolicyRole, RepOutcome, ScenarioResult};
use crate::error::{Error, Result};
use crate::metrics::MetricSummary;

pub const RESULTS_HEADER: &str = "scenario_id,effect1,effect2,gap,k,phase_in,ordering,model,spec,policy,n_reps,bias,std_bias,rel_bias_pct,var_model,var_empirical,rmse,type1,typeS,coverage,fail_rate,master_seed";

/// One row of the long-format results table: one scenario, one policy coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario_id: String,
    pub effect1: f64,
    pub effect2: f64,
    pub gap: String,
    pub k: usize,
    pub phase_in: String,
    pub ordering: String,
    pub model: String,
    pub spec: String,
    pub policy: String,
    pub n_reps: usize,
    pub bias: f64,
    pub std_bias: Option<f64>,
    pub rel_bias_pct: Option<f64>,
    pub var_model: f64,
    pub var_empirical: f64,
    pub rmse: f64,
    pub type1: Option<f64>,
    #[serde(rename = "typeS")]
    pub type_s: Option<f64>,
    pub coverage: f64,
    pub fail_rate: f64,
    pub master_seed: u64,
}

impl ResultRow {
    fn new(r: &ScenarioResult, role: PolicyRole, m: &MetricSummary) -> Self {
        let s = &r.scenario;
        ResultRow {
            scenario_id: r.scenario_id.clone(),
            effect1: s.cell.effects.pct_primary,
            effect2: s.cell.effects.pct_secondary,
            gap: s.cell.gap.to_string(),
            k: s.cell.n_treated,
            phase_in: s.cell.phase_in.to_string(),
            ordering: s.cell.ordering.to_string(),
            model: s.model.model_class.to_string(),
            spec: s.model.specification.to_string(),
            policy: role.to_string(),
            n_reps: m.n_reps,
            bias: m.bias,
            std_bias: m.std_bias,
            rel_bias_pct: m.rel_bias_pct,
            var_model: m.var_model,
            var_empirical: m.var_empirical,
            rmse: m.rmse,
            type1: m.type1_rate,
            type_s: m.type_s_rate,
            coverage: m.coverage,
            fail_rate: r.fail_rate,
            master_seed: s.master_seed,
        }
    }
}

/// Flattens scenario results into table rows (primary first, then secondary).
pub fn results_csv(results: &[ScenarioResult]) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for r in results {
        rows.push(ResultRow::new(r, PolicyRole::Primary, &r.primary));
        if let Some(s) = &r.secondary {
            rows.push(ResultRow::new(r, PolicyRole::Secondary, s));
        }
    }
    rows
}

pub fn write_results_csv<W: Write>(results: &[ScenarioResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let rows = results_csv(results);
    if rows.is_empty() {
        w.write_record(RESULTS_HEADER.split(','))?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

pub fn read_results_csv<R: Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != RESULTS_HEADER {
        return Err(Error::Parse("results file header does not match the results schema".into()));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Per-replication records of every scenario that retained them.
pub fn replication_csv<W: Write>(results: &[ScenarioResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "scenario_id", "rep", "policy", "estimate", "se", "ci_low", "ci_high", "p_value", "truth", "error",
    ])?;
    for r in results {
        let Some(records) = &r.records else { continue };
        for (rep, o) in records.iter().enumerate() {
            match o {
                RepOutcome::Fit { primary, secondary } => {
                    let roles = [(PolicyRole::Primary, Some(primary)), (PolicyRole::Secondary, secondary.as_ref())];
                    for (role, rec) in roles {
                        let Some(rec) = rec else { continue };
                        w.write_record([
                            r.scenario_id.clone(),
                            rep.to_string(),
                            role.to_string(),
                            rec.estimate.to_string(),
                            rec.se.to_string(),
                            rec.ci_low.to_string(),
                            rec.ci_high.to_string(),
                            rec.p_value.to_string(),
                            rec.truth.to_string(),
                            String::new(),
                        ])?;
                    }
                }
                RepOutcome::Failed(e) => {
                    let mut rec = vec![r.scenario_id.clone(), rep.to_string()];
                    rec.extend(std::iter::repeat_n(String::new(), 7));
                    rec.push(e.clone());
                    w.write_record(rec)?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

/// Machine-readable description of a run, written next to its results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact: String,
    pub version: String,
    pub master_seed: u64,
    pub panel_digest: String,
    pub n_cells: usize,
    pub n_scenarios: usize,
    pub results_file: String,
    pub replications_file: Option<String>,
    /// Null-setting bias is divided by this outcome SD.
    pub std_bias_scale: f64,
    /// Effective configuration after command-line overrides.
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
