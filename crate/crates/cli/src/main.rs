//! Command-line frontend: single-scenario solves, Monte Carlo sweeps and
//! summaries of sweep result files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use rsma_istn::channel;
use rsma_istn::harness::{self, ExperimentPlan, SweepAxis};
use rsma_istn::rates::{self, ChannelView, EvalModel};
use rsma_istn::sca::ScaOptions;
use rsma_istn::scenario::ScenarioConfig;
use rsma_istn::schemes::{self, SchemeId, SchemeSpec, WarmState};

#[derive(Parser)]
#[command(name = "rsma-istn", version, about = "Max-min-fair RSMA beamforming for integrated satellite-terrestrial networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one scheme on one channel realization and print the rates.
    Solve(SolveArgs),
    /// Run a sweep plan and write the result table as CSV.
    Sweep(SweepArgs),
    /// Summarize a sweep CSV as an aligned text table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Scenario configuration TOML; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scheme label, e.g. "sRSMA-ISTN" or "Adapt RSMA-OMA".
    #[arg(long, default_value = "sRSMA-ISTN")]
    scheme: String,
    /// Satellite altitude in km (overrides the config).
    #[arg(long)]
    altitude_km: Option<f64>,
    /// BS transmit power in dBm (overrides the config).
    #[arg(long)]
    bs_power_dbm: Option<f64>,
    /// Relative CSIT error variance (overrides the config).
    #[arg(long)]
    csit_error: Option<f64>,
    /// Monte Carlo trial index.
    #[arg(long, default_value_t = 0)]
    trial: u64,
    #[arg(long, default_value_t = ScaOptions::default().max_iters)]
    max_iters: usize,
    #[arg(long, default_value_t = ScaOptions::default().tol)]
    tol: f64,
    /// Write the channel realization as text to this file.
    #[arg(long)]
    dump_channel: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep plan TOML.
    #[arg(long)]
    plan: PathBuf,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Sweep CSV produced by the sweep subcommand.
    #[arg(long)]
    input: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let clean = match cli.command {
        Command::Solve(args) => solve(args)?,
        Command::Sweep(args) => sweep(args)?,
        Command::Report(args) => report(args)?,
    };
    if !clean {
        std::process::exit(2);
    }
    Ok(())
}

fn solve(args: SolveArgs) -> Result<bool> {
    let mut cfg = match &args.config {
        Some(p) => ScenarioConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ScenarioConfig::default(),
    };
    if let Some(km) = args.altitude_km {
        SweepAxis::AltitudeM.apply(&mut cfg, km * 1e3);
    }
    if let Some(dbm) = args.bs_power_dbm {
        SweepAxis::BsPowerDbm.apply(&mut cfg, dbm);
    }
    if let Some(s) = args.csit_error {
        cfg.csit_error_var = s;
    }
    cfg.validate()?;

    let scheme: SchemeId = args.scheme.parse()?;
    let (geom, ch) = channel::realize_trial(&cfg, args.trial)?;
    if let Some(path) = &args.dump_channel {
        let mut f = BufWriter::new(File::create(path)?);
        ch.dump_text(&mut f)?;
    }

    let opts = ScaOptions { max_iters: args.max_iters, tol: args.tol, ..Default::default() };
    let mut warm = WarmState::default();
    let res = schemes::evaluate_scheme(&SchemeSpec::new(scheme), &ch, &geom.su_beam, &cfg, &opts, &mut warm)?;

    let out = std::io::stdout();
    let mut out = out.lock();
    writeln!(out, "scheme {}", res.scheme.label())?;
    writeln!(out, "mmf {:.6}", res.mmf)?;
    writeln!(out, "spc_power_fraction {:.6}", res.spc_fraction)?;
    if let Some(beta) = res.beta {
        writeln!(out, "beta {beta:.2}")?;
    }
    writeln!(out, "converged {}", res.converged)?;
    writeln!(out, "solver_ok {}", res.solver_ok)?;
    writeln!(out, "sca_iterations {}", res.sca_iters)?;
    if let Some(joint) = &res.joint {
        let model = EvalModel::full_reuse(scheme.joint_mask().expect("coordinated"));
        let rep = rates::evaluate(&ch, &geom.su_beam, &joint.prec, &joint.alloc, &model, ChannelView::Estimate)?;
        rep.write_summary(&mut out)?;
    }
    Ok(res.solver_ok)
}

fn sweep(args: SweepArgs) -> Result<bool> {
    let plan = ExperimentPlan::load(&args.plan).with_context(|| format!("loading {}", args.plan.display()))?;
    let rows = harness::run_plan(&plan)?;
    match &args.output {
        Some(p) => {
            let mut f = BufWriter::new(File::create(p)?);
            harness::write_csv(plan.axis, &rows, &mut f)?;
            f.flush()?;
            eprintln!("wrote {} rows to {}", rows.len(), p.display());
        }
        None => {
            let out = std::io::stdout();
            harness::write_csv(plan.axis, &rows, &mut out.lock())?;
        }
    }
    Ok(rows.iter().all(|r| r.solver_ok))
}

fn report(args: ReportArgs) -> Result<bool> {
    let mut f = BufReader::new(File::open(&args.input)?);
    let (axis, rows) = harness::read_csv(&mut f)?;
    let summaries = harness::summarize(&rows);
    let out = std::io::stdout();
    harness::write_report(axis, &summaries, &mut out.lock())?;
    Ok(summaries.iter().all(|s| s.all_solver_ok))
}
