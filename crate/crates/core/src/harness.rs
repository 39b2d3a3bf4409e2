//! Monte Carlo sweep harness: experiment plans, deterministic result tables,
//! CSV persistence and per-sweep summaries.
//!
//! A plan sweeps one axis (satellite altitude or BS transmit power) for a set
//! of schemes, CSIT error levels and trials. Every (error level, trial) pair
//! is an independent work unit: within it the axis is walked in ascending
//! order so each solve warm starts from the previous point, and all schemes
//! see the same channel realization (common random numbers). Work units run
//! in parallel with rayon when the `parallel` feature is on; the sequential
//! path produces identical rows.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel;
use crate::sca::{ScaError, ScaOptions};
use crate::scenario::{ScenarioConfig, ScenarioError};
use crate::schemes::{self, SchemeId, SchemeSpec, WarmState};

/// Which scenario parameter the sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    AltitudeM,
    BsPowerDbm,
}

impl SweepAxis {
    pub fn label(&self) -> &'static str {
        match self {
            SweepAxis::AltitudeM => "altitude_m",
            SweepAxis::BsPowerDbm => "bs_power_dbm",
        }
    }

    /// Applies one axis value to a scenario configuration.
    pub fn apply(&self, cfg: &mut ScenarioConfig, value: f64) {
        match self {
            SweepAxis::AltitudeM => cfg.sat_altitude_m = value,
            SweepAxis::BsPowerDbm => cfg.p_bs_watt = 10f64.powf((value - 30.0) / 10.0),
        }
    }

    /// Whether the channel realization changes along the axis.
    fn changes_channel(&self) -> bool {
        matches!(self, SweepAxis::AltitudeM)
    }
}

fn default_error_levels() -> Vec<f64> {
    vec![0.0]
}
fn default_trials() -> u64 {
    1
}
fn default_sca_max_iters() -> usize {
    ScaOptions::default().max_iters
}
fn default_sca_tol() -> f64 {
    ScaOptions::default().tol
}

/// A full sweep experiment, loadable from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    /// Scenario defaults; the axis value and error level override it per cell.
    #[serde(default)]
    pub base: ScenarioConfig,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    #[serde(default = "default_error_levels")]
    pub csit_error_levels: Vec<f64>,
    /// Scheme labels, e.g. "sRSMA-ISTN".
    pub schemes: Vec<String>,
    #[serde(default = "default_trials")]
    pub n_trials: u64,
    #[serde(default = "default_sca_max_iters")]
    pub sca_max_iters: usize,
    #[serde(default = "default_sca_tol")]
    pub sca_tol: f64,
}

impl ExperimentPlan {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        let plan: ExperimentPlan = toml::from_str(s).map_err(|e| HarnessError::Parse(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.values.is_empty() || self.schemes.is_empty() || self.n_trials == 0 {
            return Err(HarnessError::Parse("empty sweep axis, scheme list or trial count".into()));
        }
        self.scheme_specs()?;
        self.base.validate().map_err(HarnessError::Scenario)?;
        Ok(())
    }

    pub fn scheme_specs(&self) -> Result<Vec<SchemeSpec>, HarnessError> {
        self.schemes
            .iter()
            .map(|s| {
                s.parse::<SchemeId>()
                    .map(SchemeSpec::new)
                    .map_err(|e| HarnessError::Parse(e.to_string()))
            })
            .collect()
    }

    pub fn sca_options(&self) -> ScaOptions {
        ScaOptions { max_iters: self.sca_max_iters, tol: self.sca_tol, ..Default::default() }
    }

    pub fn expected_rows(&self) -> usize {
        self.schemes.len() * self.values.len() * self.csit_error_levels.len() * self.n_trials as usize
    }
}

/// One evaluated (scheme, axis value, error level, trial) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scheme: SchemeId,
    pub axis_value: f64,
    pub csit_error_var: f64,
    pub trial: u64,
    pub mmf: f64,
    pub spc_fraction: f64,
    pub beta: Option<f64>,
    pub converged: bool,
    pub solver_ok: bool,
    pub sca_iters: usize,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("plan error: {0}")]
    Parse(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sca(#[from] ScaError),
}

/// Runs one (error level, trial) work unit over the whole axis.
fn run_cell(plan: &ExperimentPlan, sigma: f64, trial: u64) -> Result<Vec<ResultRow>, HarnessError> {
    let specs = plan.scheme_specs()?;
    let opts = plan.sca_options();
    let mut rows = Vec::with_capacity(specs.len() * plan.values.len());
    let mut warm = WarmState::default();

    // ascending axis order maximizes warm-start validity (growing BS budget)
    let mut values = plan.values.clone();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut realized: Option<(ScenarioConfig, crate::scenario::Geometry, crate::channel::ChannelRealization)> = None;
    for &value in &values {
        let mut cfg = plan.base.clone();
        cfg.csit_error_var = sigma;
        plan.axis.apply(&mut cfg, value);

        let needs_channel = match &realized {
            Some((prev_cfg, _, _)) => plan.axis.changes_channel() || prev_cfg.csit_error_var != sigma,
            None => true,
        };
        if needs_channel {
            let (geom, ch) = channel::realize_trial(&cfg, trial)?;
            if realized.is_some() {
                warm.invalidate_results();
            }
            realized = Some((cfg.clone(), geom, ch));
        } else {
            realized.as_mut().unwrap().0 = cfg.clone();
        }
        let (_, geom, ch) = realized.as_ref().unwrap();

        let results = schemes::evaluate_all(&specs, ch, &geom.su_beam, &cfg, &opts, &mut warm)?;
        for r in results {
            rows.push(ResultRow {
                scheme: r.scheme,
                axis_value: value,
                csit_error_var: sigma,
                trial,
                mmf: r.mmf,
                spc_fraction: r.spc_fraction,
                beta: r.beta,
                converged: r.converged,
                solver_ok: r.solver_ok,
                sca_iters: r.sca_iters,
            });
        }
    }
    Ok(rows)
}

fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        a.scheme
            .label()
            .cmp(b.scheme.label())
            .then(a.axis_value.partial_cmp(&b.axis_value).unwrap())
            .then(a.csit_error_var.partial_cmp(&b.csit_error_var).unwrap())
            .then(a.trial.cmp(&b.trial))
    });
}

fn cells(plan: &ExperimentPlan) -> Vec<(f64, u64)> {
    let mut v = Vec::new();
    for &sigma in &plan.csit_error_levels {
        for trial in 0..plan.n_trials {
            v.push((sigma, trial));
        }
    }
    v
}

/// Runs the plan sequentially. Produces exactly the same rows as [`run_plan`].
pub fn run_plan_sequential(plan: &ExperimentPlan) -> Result<Vec<ResultRow>, HarnessError> {
    plan.validate()?;
    let mut rows = Vec::with_capacity(plan.expected_rows());
    for (sigma, trial) in cells(plan) {
        rows.extend(run_cell(plan, sigma, trial)?);
    }
    sort_rows(&mut rows);
    Ok(rows)
}

/// Runs the plan, using one rayon task per (error level, trial) pair when the
/// `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn run_plan(plan: &ExperimentPlan) -> Result<Vec<ResultRow>, HarnessError> {
    use rayon::prelude::*;
    plan.validate()?;
    let results: Result<Vec<Vec<ResultRow>>, HarnessError> = cells(plan)
        .into_par_iter()
        .map(|(sigma, trial)| run_cell(plan, sigma, trial))
        .collect();
    let mut rows: Vec<ResultRow> = results?.into_iter().flatten().collect();
    sort_rows(&mut rows);
    Ok(rows)
}

#[cfg(not(feature = "parallel"))]
pub fn run_plan(plan: &ExperimentPlan) -> Result<Vec<ResultRow>, HarnessError> {
    run_plan_sequential(plan)
}

// ---------------------------------------------------------------------------
// persistence

const CSV_HEADER: &str = "format,axis,scheme,axis_value,csit_error_var,trial,mmf,spc_fraction,beta,converged,solver_ok,sca_iters";
const CSV_FORMAT: &str = "v1";

/// Writes rows as deterministic CSV: fixed header, fixed float formatting,
/// rows pre-sorted, no timing or host information.
pub fn write_csv(axis: SweepAxis, rows: &[ResultRow], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        let beta = r.beta.map(|b| format!("{b:.4}")).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{:.6e},{:.6e},{},{:.12e},{:.12e},{},{},{},{}",
            CSV_FORMAT,
            axis.label(),
            r.scheme.label(),
            r.axis_value,
            r.csit_error_var,
            r.trial,
            r.mmf,
            r.spc_fraction,
            beta,
            r.converged,
            r.solver_ok,
            r.sca_iters,
        )?;
    }
    Ok(())
}

/// Reads a CSV produced by [`write_csv`]. Returns the axis and the rows.
pub fn read_csv(r: &mut impl BufRead) -> Result<(SweepAxis, Vec<ResultRow>), HarnessError> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header != CSV_HEADER {
        return Err(HarnessError::Parse(format!("unexpected CSV header: {header}")));
    }
    let mut axis = None;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 || fields[0] != CSV_FORMAT {
            return Err(HarnessError::Parse(format!("bad row {}: {line}", i + 2)));
        }
        let row_axis = match fields[1] {
            "altitude_m" => SweepAxis::AltitudeM,
            "bs_power_dbm" => SweepAxis::BsPowerDbm,
            other => return Err(HarnessError::Parse(format!("unknown axis {other}"))),
        };
        match axis {
            None => axis = Some(row_axis),
            Some(a) if a != row_axis => {
                return Err(HarnessError::Parse("mixed axes in one file".into()))
            }
            _ => {}
        }
        let parse_f = |s: &str| s.parse::<f64>().map_err(|e| HarnessError::Parse(e.to_string()));
        rows.push(ResultRow {
            scheme: fields[2].parse().map_err(|e: schemes::UnknownScheme| HarnessError::Parse(e.to_string()))?,
            axis_value: parse_f(fields[3])?,
            csit_error_var: parse_f(fields[4])?,
            trial: fields[5].parse().map_err(|e: std::num::ParseIntError| HarnessError::Parse(e.to_string()))?,
            mmf: parse_f(fields[6])?,
            spc_fraction: parse_f(fields[7])?,
            beta: if fields[8].is_empty() { None } else { Some(parse_f(fields[8])?) },
            converged: fields[9].parse().map_err(|_| HarnessError::Parse("bad bool".into()))?,
            solver_ok: fields[10].parse().map_err(|_| HarnessError::Parse("bad bool".into()))?,
            sca_iters: fields[11].parse().map_err(|e: std::num::ParseIntError| HarnessError::Parse(e.to_string()))?,
        });
    }
    let axis = axis.ok_or_else(|| HarnessError::Parse("no data rows".into()))?;
    Ok((axis, rows))
}

// ---------------------------------------------------------------------------
// summaries

/// Per-(scheme, axis value, error level) aggregate of a result table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: SchemeId,
    pub axis_value: f64,
    pub csit_error_var: f64,
    pub n: usize,
    pub mean_mmf: f64,
    pub mean_spc_fraction: f64,
    /// Mean optimized band split, where the scheme has one.
    pub mean_beta: Option<f64>,
    pub all_solver_ok: bool,
}

/// Averages rows over trials.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    // key: (scheme label, axis value bits, sigma bits) for a stable order
    let mut groups: BTreeMap<(&'static str, u64, u64), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.scheme.label(), r.axis_value.to_bits(), r.csit_error_var.to_bits()))
            .or_default()
            .push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let n = g.len();
            let mean = |f: &dyn Fn(&ResultRow) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / n as f64;
            let betas: Vec<f64> = g.iter().filter_map(|r| r.beta).collect();
            SummaryRow {
                scheme: g[0].scheme,
                axis_value: g[0].axis_value,
                csit_error_var: g[0].csit_error_var,
                n,
                mean_mmf: mean(&|r| r.mmf),
                mean_spc_fraction: mean(&|r| r.spc_fraction),
                mean_beta: if betas.is_empty() {
                    None
                } else {
                    Some(betas.iter().sum::<f64>() / betas.len() as f64)
                },
                all_solver_ok: g.iter().all(|r| r.solver_ok),
            }
        })
        .collect()
}

/// Renders summaries as an aligned text table.
pub fn write_report(axis: SweepAxis, summaries: &[SummaryRow], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "{:<16} {:>12} {:>10} {:>4} {:>10} {:>8} {:>6} {:>3}",
        "scheme",
        axis.label(),
        "csit_err",
        "n",
        "mean_mmf",
        "spc_frac",
        "beta",
        "ok"
    )?;
    for s in summaries {
        writeln!(
            w,
            "{:<16} {:>12.1} {:>10.4} {:>4} {:>10.4} {:>8.4} {:>6} {:>3}",
            s.scheme.label(),
            s.axis_value,
            s.csit_error_var,
            s.n,
            s.mean_mmf,
            s.mean_spc_fraction,
            s.mean_beta.map(|b| format!("{b:.2}")).unwrap_or_else(|| "-".into()),
            if s.all_solver_ok { "y" } else { "N" },
        )?;
    }
    Ok(())
}
