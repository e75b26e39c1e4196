//! Balanced unit-by-year panels: CSV ingestion, synthesis, and summaries.
//!
//! A [`Panel`] holds one row per (unit, year) for every unit and every year
//! in its range, sorted by unit then year. Everything downstream relies on
//! that layout (row index = `unit * n_years + year offset`) and does not
//! re-check it.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One observation of a unit in a calendar year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitYearRow {
    pub unit_id: String,
    pub year: i32,
    /// Deaths per 100,000 residents.
    pub outcome_rate: f64,
    /// Unemployment rate in percent.
    pub covariate: f64,
    /// Resident count, used as the analytic weight.
    pub population: f64,
}

/// A validated, balanced panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    rows: Vec<UnitYearRow>,
    units: Vec<String>,
    first_year: i32,
    last_year: i32,
}

impl Panel {
    /// Validates and sorts `rows` into a balanced panel.
    pub fn from_rows(mut rows: Vec<UnitYearRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Parse("panel has no rows".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            check_row(i, r)?;
        }
        rows.sort_by(|a, b| a.unit_id.cmp(&b.unit_id).then(a.year.cmp(&b.year)));
        for w in rows.windows(2) {
            if w[0].unit_id == w[1].unit_id && w[0].year == w[1].year {
                return Err(Error::InvalidValue {
                    row: 0,
                    message: format!("duplicate row for unit={} year={}", w[0].unit_id, w[0].year),
                });
            }
        }

        let first_year = rows.iter().map(|r| r.year).min().unwrap();
        let last_year = rows.iter().map(|r| r.year).max().unwrap();
        let mut by_unit: BTreeMap<&str, BTreeSet<i32>> = BTreeMap::new();
        for r in &rows {
            by_unit.entry(&r.unit_id).or_default().insert(r.year);
        }
        let mut missing = Vec::new();
        for (unit, years) in &by_unit {
            for y in first_year..=last_year {
                if !years.contains(&y) {
                    missing.push((unit.to_string(), y));
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::UnbalancedPanel { missing });
        }
        let units = by_unit.keys().map(|u| u.to_string()).collect();
        Ok(Panel {
            rows,
            units,
            first_year,
            last_year,
        })
    }

    pub fn rows(&self) -> &[UnitYearRow] {
        &self.rows
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_years(&self) -> usize {
        (self.last_year - self.first_year + 1) as usize
    }

    pub fn first_year(&self) -> i32 {
        self.first_year
    }

    pub fn last_year(&self) -> i32 {
        self.last_year
    }

    pub fn years(&self) -> Vec<i32> {
        (self.first_year..=self.last_year).collect()
    }

    /// Row for unit index `unit` and year offset `t` (0-based).
    #[inline]
    pub fn row(&self, unit: usize, t: usize) -> &UnitYearRow {
        &self.rows[unit * self.n_years() + t]
    }

    /// Outcome column in row order.
    pub fn outcomes(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.outcome_rate).collect()
    }

    /// Writes the panel as CSV with the canonical header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["unit", "year", "outcome_rate", "covariate", "population"])?;
        for r in &self.rows {
            w.write_record([
                r.unit_id.clone(),
                r.year.to_string(),
                r.outcome_rate.to_string(),
                r.covariate.to_string(),
                r.population.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of the canonical CSV encoding, hex encoded.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        hex::encode(Sha256::digest(&buf))
    }
}

fn check_row(i: usize, r: &UnitYearRow) -> Result<()> {
    let bad = |message: String| Err(Error::InvalidValue { row: i, message });
    if !r.outcome_rate.is_finite() || r.outcome_rate < 0.0 {
        return bad(format!("outcome_rate must be a nonnegative number, got {}", r.outcome_rate));
    }
    if !r.population.is_finite() || r.population <= 0.0 {
        return bad(format!("population must be positive, got {}", r.population));
    }
    if !r.covariate.is_finite() {
        return bad(format!("covariate must be finite, got {}", r.covariate));
    }
    Ok(())
}

/// Maps the panel's logical fields onto CSV header names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub unit: String,
    pub year: String,
    pub outcome_rate: String,
    pub covariate: String,
    pub population: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            unit: "unit".into(),
            year: "year".into(),
            outcome_rate: "outcome_rate".into(),
            covariate: "covariate".into(),
            population: "population".into(),
        }
    }
}

/// Reads and validates a panel CSV.
pub fn load_panel(path: &Path, schema: &ColumnMap) -> Result<Panel> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_panel(file, schema)
}

/// Reads and validates a panel from any CSV source.
pub fn read_panel<R: Read>(reader: R, schema: &ColumnMap) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::Parse("empty file: header row required".into()));
    }
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("missing column `{name}`")))
    };
    let (iu, iy, io, ic, ip) = (
        col(&schema.unit)?,
        col(&schema.year)?,
        col(&schema.outcome_rate)?,
        col(&schema.covariate)?,
        col(&schema.population)?,
    );

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |idx: usize| rec.get(idx).unwrap_or("");
        let num = |idx: usize, what: &str| -> Result<f64> {
            field(idx)
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {line}: bad {what} `{}`", field(idx))))
        };
        let year_str = field(iy);
        if year_str.len() != 4 {
            return Err(Error::Parse(format!("line {line}: year must have 4 digits, got `{year_str}`")));
        }
        let year = year_str
            .parse::<i32>()
            .map_err(|_| Error::Parse(format!("line {line}: bad year `{year_str}`")))?;
        rows.push(UnitYearRow {
            unit_id: field(iu).to_string(),
            year,
            outcome_rate: num(io, "outcome_rate")?,
            covariate: num(ic, "covariate")?,
            population: num(ip, "population")?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Parse("no data rows".into()));
    }
    Panel::from_rows(rows)
}

/// Writes `panel` to `path` with the canonical header.
pub fn write_panel(panel: &Panel, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    panel.write_csv(std::io::BufWriter::new(file))
}

/// Parameters of the synthetic null-condition panel.
///
/// Outcomes follow `base_rate + offset_i + trend_per_year * t + u_it`, with
/// `offset_i ~ N(0, unit_sd²)` and `u_it` a stationary AR(1) process with
/// innovation SD `noise_sd`, truncated at zero. Defaults are calibrated to
/// the scale of U.S. state opioid mortality, 1999-2016.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_units: usize,
    pub n_years: usize,
    pub first_year: i32,
    pub base_rate: f64,
    pub trend_per_year: f64,
    pub unit_sd: f64,
    pub ar1_coef: f64,
    pub noise_sd: f64,
    pub covariate_mean: f64,
    pub covariate_sd: f64,
    pub population_log_mean: f64,
    pub population_log_sd: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_units: 50,
            n_years: 18,
            first_year: 1999,
            base_rate: 5.0,
            trend_per_year: 0.5,
            unit_sd: 2.0,
            ar1_coef: 0.8,
            noise_sd: 1.0,
            covariate_mean: 5.8,
            covariate_sd: 1.8,
            population_log_mean: 15.1,
            population_log_sd: 0.3,
            seed: 20_211_001,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_units < 2 {
            return bad("synth.n_units must be at least 2");
        }
        if self.n_years < 4 {
            return bad("synth.n_years must be at least 4");
        }
        if !(self.base_rate > 0.0 && self.base_rate.is_finite()) {
            return bad("synth.base_rate must be positive");
        }
        if !(self.ar1_coef > -1.0 && self.ar1_coef < 1.0) {
            return bad("synth.ar1_coef must lie in (-1, 1)");
        }
        if !(self.noise_sd >= 0.0 && self.unit_sd >= 0.0 && self.covariate_sd >= 0.0 && self.population_log_sd >= 0.0) {
            return bad("synth standard deviations must be nonnegative");
        }
        let finite = [self.trend_per_year, self.covariate_mean, self.population_log_mean];
        if finite.iter().any(|v| !v.is_finite()) || !self.noise_sd.is_finite() || !self.unit_sd.is_finite() {
            return bad("synth parameters must be finite");
        }
        Ok(())
    }

    /// Untruncated mean outcome at year offset `t`.
    pub fn analytic_mean(&self, t: usize) -> f64 {
        self.base_rate + self.trend_per_year * t as f64
    }
}

/// Generates a synthetic null-condition panel; a pure function of `config`.
pub fn synth_panel(config: &SynthConfig) -> Result<Panel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut z = move || -> f64 { StandardNormal.sample(&mut rng) };

    let year_shocks: Vec<f64> = (0..config.n_years).map(|_| z()).collect();
    let stationary_sd = config.noise_sd / (1.0 - config.ar1_coef * config.ar1_coef).sqrt();
    let width = config.n_units.to_string().len().max(2);

    let mut rows = Vec::with_capacity(config.n_units * config.n_years);
    for i in 0..config.n_units {
        let unit_id = format!("U{:0width$}", i + 1);
        let offset = config.unit_sd * z();
        let population = (config.population_log_mean + config.population_log_sd * z()).exp();
        let unit_cov = z();
        let mut u = stationary_sd * z();
        for (t, shock) in year_shocks.iter().enumerate() {
            if t > 0 {
                u = config.ar1_coef * u + config.noise_sd * z();
            }
            let level = config.analytic_mean(t) + offset + u;
            let covariate = config.covariate_mean
                + config.covariate_sd * (0.4_f64.sqrt() * shock + 0.25_f64.sqrt() * unit_cov + 0.35_f64.sqrt() * z());
            rows.push(UnitYearRow {
                unit_id: unit_id.clone(),
                year: config.first_year + t as i32,
                outcome_rate: level.max(0.0),
                covariate,
                population,
            });
        }
    }
    Panel::from_rows(rows)
}

/// Per-unit and pooled outcome summaries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelSummary {
    pub unit_means: Vec<f64>,
    pub grand_mean: f64,
    /// Sample SD over all unit-years.
    pub outcome_sd: f64,
}

pub fn panel_summary(panel: &Panel) -> PanelSummary {
    let ny = panel.n_years();
    let unit_means = panel
        .rows()
        .chunks(ny)
        .map(|c| c.iter().map(|r| r.outcome_rate).sum::<f64>() / ny as f64)
        .collect();
    let n = panel.rows().len() as f64;
    let grand_mean = panel.rows().iter().map(|r| r.outcome_rate).sum::<f64>() / n;
    let ss: f64 = panel.rows().iter().map(|r| (r.outcome_rate - grand_mean).powi(2)).sum();
    let outcome_sd = if n > 1.0 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
    PanelSummary {
        unit_means,
        grand_mean,
        outcome_sd,
    }
}
