//! Tidy, plot-ready tables for the standard figure layouts.
//!
//! Each figure is six metric panels. A panel is a long table with one row
//! per (facet, x, policy); any plotting tool can draw it directly.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::DEFAULT_EFFECTS;
use crate::error::{Error, Result};
use crate::policy::GapCondition;
use crate::runner::ResultRow;

/// Panel names, in display order.
pub const METRIC_PANELS: [&str; 6] = ["bias", "variance", "rmse", "type1", "typeS", "coverage"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FigureId {
    /// Correct AR model across gap conditions.
    F1,
    /// Misspecified AR model across gap conditions.
    F2,
    /// Correct AR model at the 0-1 year gap, by effect pair and ordering.
    F3,
    /// Correct DID model across gap conditions.
    A1,
    /// Misspecified DID model across gap conditions.
    A2,
}

impl FigureId {
    pub const ALL: [FigureId; 5] = [FigureId::F1, FigureId::F2, FigureId::F3, FigureId::A1, FigureId::A2];
}

impl fmt::Display for FigureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FigureId::F1 => "1",
            FigureId::F2 => "2",
            FigureId::F3 => "3",
            FigureId::A1 => "A1",
            FigureId::A2 => "A2",
        })
    }
}

impl FromStr for FigureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "1" => Ok(FigureId::F1),
            "2" => Ok(FigureId::F2),
            "3" => Ok(FigureId::F3),
            "A1" => Ok(FigureId::A1),
            "A2" => Ok(FigureId::A2),
            _ => Err(Error::UnknownFigure(s.to_string())),
        }
    }
}

/// One point of one metric panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TidyRow {
    pub figure: String,
    pub metric: String,
    /// Facet label (ordering for figure 3, empty otherwise).
    pub facet: String,
    /// Gap condition or effect pair.
    pub x: String,
    pub policy: String,
    /// Empty when the metric does not apply (e.g. Type I outside the null).
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigurePanel {
    pub metric: &'static str,
    pub rows: Vec<TidyRow>,
}

/// Value of a named panel metric for one results row.
///
/// The bias panel shows relative bias (percent) in non-null settings and
/// standardized bias in null ones; the variance panel shows the mean squared
/// standard error.
pub fn metric_value(row: &ResultRow, metric: &str) -> Option<f64> {
    match metric {
        "bias" => row.rel_bias_pct.or(row.std_bias),
        "variance" => Some(row.var_model),
        "rmse" => Some(row.rmse),
        "type1" => row.type1,
        "typeS" => row.type_s,
        "coverage" => Some(row.coverage),
        _ => None,
    }
}

/// Selector for one required scenario cell.
struct Cell {
    effects: (f64, f64),
    gap: String,
    ordering: &'static str,
    model: &'static str,
    spec: &'static str,
    facet: String,
    x: String,
}

impl Cell {
    fn matches(&self, r: &ResultRow) -> bool {
        const TOL: f64 = 1e-9;
        (r.effect1 - self.effects.0).abs() < TOL
            && (r.effect2 - self.effects.1).abs() < TOL
            && r.gap == self.gap
            && r.k == 30
            && r.phase_in == "instantaneous"
            && r.ordering == self.ordering
            && r.model == self.model
            && r.spec == self.spec
    }

    fn describe(&self) -> String {
        format!(
            "effects=({}, {}) gap={} k=30 phase_in=instantaneous ordering={} model={} spec={}",
            self.effects.0, self.effects.1, self.gap, self.ordering, self.model, self.spec
        )
    }
}

fn pct_label((a, b): (f64, f64)) -> String {
    format!("{}%/{}%", (a * 100.0).round(), (b * 100.0).round())
}

fn required_cells(id: FigureId) -> Vec<Cell> {
    let by_gap = |model, spec| {
        GapCondition::ALL
            .iter()
            .map(|g| Cell {
                effects: (-0.10, -0.10),
                gap: g.to_string(),
                ordering: "random",
                model,
                spec,
                facet: String::new(),
                x: g.to_string(),
            })
            .collect()
    };
    match id {
        FigureId::F1 => by_gap("AR", "correct"),
        FigureId::F2 => by_gap("AR", "misspecified"),
        FigureId::A1 => by_gap("DID", "correct"),
        FigureId::A2 => by_gap("DID", "misspecified"),
        FigureId::F3 => ["random", "primary_first"]
            .into_iter()
            .flat_map(|ordering| {
                DEFAULT_EFFECTS
                    .iter()
                    .filter(|&&(a, b)| a != 0.0 || b != 0.0)
                    .map(move |&effects| Cell {
                        effects,
                        gap: GapCondition::C1.to_string(),
                        ordering,
                        model: "AR",
                        spec: "correct",
                        facet: ordering.to_string(),
                        x: pct_label(effects),
                    })
            })
            .collect(),
    }
}

/// Builds the six metric panels of figure `id` from a results table.
///
/// Fails with [`Error::MissingCells`] listing every required scenario cell
/// absent from `rows`.
pub fn figure_panels(rows: &[ResultRow], id: FigureId) -> Result<Vec<FigurePanel>> {
    let cells = required_cells(id);
    let mut missing = Vec::new();
    let mut selected: Vec<(&Cell, Vec<&ResultRow>)> = Vec::new();
    for cell in &cells {
        let hits: Vec<&ResultRow> = rows.iter().filter(|r| cell.matches(r)).collect();
        if hits.is_empty() {
            missing.push(cell.describe());
            continue;
        }
        // First occurrence of each policy, in file order.
        let mut policies: Vec<&ResultRow> = Vec::new();
        for r in hits {
            if !policies.iter().any(|p| p.policy == r.policy) {
                policies.push(r);
            }
        }
        selected.push((cell, policies));
    }
    if !missing.is_empty() {
        return Err(Error::MissingCells(missing));
    }

    Ok(METRIC_PANELS
        .iter()
        .map(|&metric| FigurePanel {
            metric,
            rows: selected
                .iter()
                .flat_map(|(cell, policies)| {
                    policies.iter().map(move |r| TidyRow {
                        figure: id.to_string(),
                        metric: metric.to_string(),
                        facet: cell.facet.clone(),
                        x: cell.x.clone(),
                        policy: r.policy.clone(),
                        value: metric_value(r, metric),
                    })
                })
                .collect(),
        })
        .collect())
}

/// Writes one CSV per panel as `figure<id>_<metric>.csv` and returns the paths.
pub fn write_figure(rows: &[ResultRow], id: FigureId, dir: &Path) -> Result<Vec<PathBuf>> {
    let panels = figure_panels(rows, id)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for panel in panels {
        let path = dir.join(format!("figure{id}_{}.csv", panel.metric));
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for row in &panel.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(gap: &str, model: &str, spec: &str, policy: &str, ordering: &str, effects: (f64, f64)) -> ResultRow {
        ResultRow {
            scenario_id: format!("{gap}-{model}-{spec}"),
            effect1: effects.0,
            effect2: effects.1,
            gap: gap.into(),
            k: 30,
            phase_in: "instantaneous".into(),
            ordering: ordering.into(),
            model: model.into(),
            spec: spec.into(),
            policy: policy.into(),
            n_reps: 10,
            bias: 0.1,
            std_bias: None,
            rel_bias_pct: Some(3.0),
            var_model: 0.2,
            var_empirical: 0.25,
            rmse: 0.5,
            type1: None,
            type_s: Some(0.0),
            coverage: 0.9,
            fail_rate: 0.0,
            master_seed: 1,
        }
    }

    fn figure1_rows() -> Vec<ResultRow> {
        let mut rows = Vec::new();
        for g in ["C1", "C2", "C3", "C4"] {
            for p in ["primary", "secondary"] {
                rows.push(row(g, "AR", "correct", p, "random", (-0.1, -0.1)));
            }
        }
        rows
    }

    #[test]
    fn figure_ids() {
        assert_eq!("a1".parse::<FigureId>().unwrap(), FigureId::A1);
        assert!(matches!("9".parse::<FigureId>(), Err(Error::UnknownFigure(s)) if s == "9"));
    }

    #[test]
    fn figure1_six_panels_four_gaps() {
        let panels = figure_panels(&figure1_rows(), FigureId::F1).unwrap();
        assert_eq!(panels.len(), 6);
        for p in &panels {
            assert_eq!(p.rows.len(), 8);
            let xs: Vec<&str> = p.rows.iter().step_by(2).map(|r| r.x.as_str()).collect();
            assert_eq!(xs, ["C1", "C2", "C3", "C4"]);
        }
        assert_eq!(panels[0].rows[0].value, Some(3.0));
        assert_eq!(panels[3].rows[0].value, None);
    }

    #[test]
    fn missing_cells_listed() {
        let mut rows = figure1_rows();
        rows.retain(|r| r.gap != "C3");
        match figure_panels(&rows, FigureId::F1) {
            Err(Error::MissingCells(cells)) => {
                assert_eq!(cells.len(), 1);
                assert!(cells[0].contains("gap=C3"));
            }
            other => panic!("{other:?}"),
        }
        let Err(Error::MissingCells(cells)) = figure_panels(&rows, FigureId::F3) else { panic!() };
        assert_eq!(cells.len(), 13);
    }

    #[test]
    fn figure3_facets() {
        let mut rows = Vec::new();
        for ordering in ["random", "primary_first"] {
            for &e in DEFAULT_EFFECTS.iter().skip(1) {
                rows.push(row("C1", "AR", "correct", "primary", ordering, e));
            }
        }
        let panels = figure_panels(&rows, FigureId::F3).unwrap();
        assert_eq!(panels[0].rows.len(), 14);
        assert_eq!(panels[0].rows[0].facet, "random");
        assert_eq!(panels[0].rows[0].x, "0%/-15%");
        assert_eq!(panels[0].rows[7].facet, "primary_first");
    }

    #[test]
    fn writes_csvs() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_figure(&figure1_rows(), FigureId::F1, dir.path()).unwrap();
        assert_eq!(paths.len(), 6);
        let text = std::fs::read_to_string(&paths[3]).unwrap();
        assert!(text.starts_with("figure,metric,facet,x,policy,value\n1,type1,,C1,primary,\n"), "{text}");
    }
}
