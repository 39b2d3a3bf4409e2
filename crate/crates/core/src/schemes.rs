//! The seven evaluated multiple-access schemes.
//!
//! Three schemes share the full band between the satellite and the BS
//! (coordinated, jointly optimized) and four split the spectrum so each
//! network optimizes alone:
//!
//! - `sRSMA-ISTN` — rate-splitting on both sides plus the super-common stream
//! - `RSMA-ISTN` — rate-splitting on both sides, no super-common stream
//! - `SDMA-ISTN` — private streams only, full reuse
//! - `Adapt RSMA-OMA` — band fraction beta to the satellite, optimized
//! - `RSMA-OMA` — fixed even split, rate-splitting within each network
//! - `SDMA-OMA` — fixed even split, private streams only
//! - `4-Color-OMA` — one quarter band per beam and one for the cell
//!
//! Within one channel realization the coordinated schemes are solved as a
//! warm-start chain (SDMA -> RSMA -> sRSMA): the richer scheme starts from
//! the poorer scheme's solution with the extra streams at epsilon power, so
//! each optimized value can only improve on its predecessor.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::channel::ChannelRealization;
use crate::rates::{self, ChannelView, EvalModel, SpectrumModel, StreamMask};
use crate::sca::{self, ScaError, ScaIterate, ScaOptions, ScaOutcome};
use crate::scenario::ScenarioConfig;

/// Power fraction given to newly enabled streams in a warm-start chain.
const WARM_DELTA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeId {
    SRsmaIstn,
    RsmaIstn,
    SdmaIstn,
    AdaptRsmaOma,
    RsmaOma,
    SdmaOma,
    FourColorOma,
}

impl SchemeId {
    pub const ALL: [SchemeId; 7] = [
        SchemeId::SRsmaIstn,
        SchemeId::RsmaIstn,
        SchemeId::SdmaIstn,
        SchemeId::AdaptRsmaOma,
        SchemeId::RsmaOma,
        SchemeId::SdmaOma,
        SchemeId::FourColorOma,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            SchemeId::SRsmaIstn => "sRSMA-ISTN",
            SchemeId::RsmaIstn => "RSMA-ISTN",
            SchemeId::SdmaIstn => "SDMA-ISTN",
            SchemeId::AdaptRsmaOma => "Adapt RSMA-OMA",
            SchemeId::RsmaOma => "RSMA-OMA",
            SchemeId::SdmaOma => "SDMA-OMA",
            SchemeId::FourColorOma => "4-Color-OMA",
        }
    }

    /// Whether both networks share the full band and are optimized jointly.
    pub fn is_coordinated(&self) -> bool {
        matches!(self, SchemeId::SRsmaIstn | SchemeId::RsmaIstn | SchemeId::SdmaIstn)
    }

    /// Stream mask of the joint problem (coordinated schemes only).
    pub fn joint_mask(&self) -> Option<StreamMask> {
        match self {
            SchemeId::SRsmaIstn => Some(StreamMask::istn_srsma()),
            SchemeId::RsmaIstn => Some(StreamMask::istn_rsma()),
            SchemeId::SdmaIstn => Some(StreamMask::istn_sdma()),
            _ => None,
        }
    }

    /// Whether the per-network problems use intra-network rate splitting
    /// (orthogonal schemes only).
    fn oma_common(&self) -> bool {
        matches!(self, SchemeId::AdaptRsmaOma | SchemeId::RsmaOma)
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownScheme(pub String);

impl fmt::Display for UnknownScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown scheme '{}'", self.0)
    }
}
impl std::error::Error for UnknownScheme {}

impl FromStr for SchemeId {
    type Err = UnknownScheme;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemeId::ALL
            .iter()
            .copied()
            .find(|id| id.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownScheme(s.to_string()))
    }
}

/// A scheme to evaluate, with its fixed band split where applicable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeSpec {
    pub id: SchemeId,
    /// Band fraction for the satellite in the fixed-split schemes (0.5 by
    /// default); ignored by the coordinated and four-color schemes.
    pub fixed_beta: f64,
}

impl SchemeSpec {
    pub fn new(id: SchemeId) -> Self {
        Self { id, fixed_beta: 0.5 }
    }
}

/// Evaluated performance of one scheme on one channel realization.
#[derive(Debug, Clone)]
pub struct SchemeResult {
    pub scheme: SchemeId,
    /// Max-min fairness rate, bits/s/Hz.
    pub mmf: f64,
    /// Super-common power fraction ||w_spc||^2 / P_s (0 unless sRSMA).
    pub spc_fraction: f64,
    /// Band fraction used by the satellite (None for coordinated schemes).
    pub beta: Option<f64>,
    pub converged: bool,
    pub solver_ok: bool,
    pub sca_iters: usize,
    /// Final iterate of the joint problem (coordinated schemes).
    pub joint: Option<ScaIterate>,
}

/// Key of one per-network orthogonal subsolve: (rate splitting on, four-color
/// reuse, round(beta * 1000)).
type SideKey = (bool, bool, u32);

fn beta_key(beta: f64) -> u32 {
    (beta * 1000.0).round() as u32
}

/// Warm-start state carried across schemes and across ascending BS power
/// levels within one channel realization.
///
/// Satellite-side orthogonal solves do not depend on the BS power at all, so
/// their full outcome (iterate and MMF value) is cached and reused; all other
/// entries only seed the next solve.
#[derive(Default)]
pub struct WarmState {
    /// Joint-problem iterates per coordinated scheme, with their q values.
    pub joint: HashMap<SchemeId, ScaIterate>,
    /// Satellite-side solves: iterate plus the achieved MMF when the stored
    /// result is still valid for the current channel (None = seed only).
    pub sat_side: BTreeMap<SideKey, (ScaIterate, Option<f64>)>,
    /// Cell-side iterates for warm starting.
    pub cell_side: BTreeMap<SideKey, ScaIterate>,
}

impl WarmState {
    /// Demotes every cached result to a warm-start seed. Call when the
    /// channel realization changes (e.g. between altitude sweep points).
    pub fn invalidate_results(&mut self) {
        for (_, mmf) in self.sat_side.values_mut() {
            *mmf = None;
        }
    }

    fn nearest_sat(&self, common: bool, four_color: bool, bk: u32) -> Option<&(ScaIterate, Option<f64>)> {
        self.sat_side
            .iter()
            .filter(|((c, f, _), _)| *c == common && *f == four_color)
            .min_by_key(|((_, _, k), _)| k.abs_diff(bk))
            .map(|(_, v)| v)
    }

    fn nearest_cell(&self, common: bool, four_color: bool, bk: u32) -> Option<&ScaIterate> {
        self.cell_side
            .iter()
            .filter(|((c, f, _), _)| *c == common && *f == four_color)
            .min_by_key(|((_, _, k), _)| k.abs_diff(bk))
            .map(|(_, v)| v)
    }
}

/// Solves one joint or per-network problem, choosing the better of the fresh
/// matched-filter start and the supplied warm start.
fn solve_model(
    model: &EvalModel,
    warm: Option<ScaIterate>,
    ch: &ChannelRealization,
    su_beam: &[usize],
    cfg: &ScenarioConfig,
    opts: &ScaOptions,
) -> Result<ScaOutcome, ScaError> {
    let fresh = sca::initialize(ch, su_beam, cfg, model, opts)?;
    let mut best = sca::sca_solve(fresh, ch, su_beam, cfg, model, opts)?;
    // A warm start can converge to a different basin than the cold start;
    // neither dominates, so run both and keep the better final point.
    if let Some(w) = warm {
        let from_warm = sca::sca_solve(w, ch, su_beam, cfg, model, opts)?;
        if from_warm.report.mmf > best.report.mmf {
            best = from_warm;
        }
    }
    Ok(best)
}

/// Warm iterate for `mask` built from another scheme's precoders (extra
/// streams lifted to epsilon power).
fn warm_from(
    source: &ScaIterate,
    mask: &StreamMask,
    model: &EvalModel,
    ch: &ChannelRealization,
    su_beam: &[usize],
    cfg: &ScenarioConfig,
    opts: &ScaOptions,
) -> Option<ScaIterate> {
    let mut prec = source.prec.clone();
    sca::enable_streams_for_warm_start(&mut prec, mask, ch, cfg, WARM_DELTA);
    sca::iterate_from_precoders(prec, Some(source.alloc.clone()), ch, su_beam, model, opts).ok()
}

fn solve_joint(
    id: SchemeId,
    ch: &ChannelRealization,
    su_beam: &[usize],
    cfg: &ScenarioConfig,
    opts: &ScaOptions,
    warm: &mut WarmState,
) -> Result<SchemeResult, ScaError> {
    let mask = id.joint_mask().expect("coordinated scheme");
    let model = EvalModel::full_reuse(mask);

    // candidate warm starts: same scheme at a lower BS power, or the
    // predecessor scheme in the SDMA -> RSMA -> sRSMA chain
    let chain_pred = match id {
        SchemeId::SRsmaIstn => Some(SchemeId::RsmaIstn),
        SchemeId::RsmaIstn => Some(SchemeId::SdmaIstn),
        _ => None,
    };
    let mut best_warm: Option<ScaIterate> = None;
    for source in [warm.joint.get(&id), chain_pred.and_then(|p| warm.joint.get(&p))]
        .into_iter()
        .flatten()
    {
        if let Some(cand) = warm_from(source, &mask, &model, ch, su_beam, cfg, opts) {
            if best_warm.as_ref().map_or(true, |b| cand.q > b.q) {
                best_warm = Some(cand);
            }
        }
    }

    let mut out = solve_model(&model, best_warm, ch, su_beam, cfg, opts)?;

    // The richer scheme's feasible set contains the predecessor's solution
    // (extra streams at zero power), but SCA only finds a stationary point
    // and can land marginally below it, or fail outright on the badly scaled
    // lifted start. Inheriting the predecessor's point keeps the chain
    // ordering exact in that case.
    if let Some(pred) = chain_pred.and_then(|p| warm.joint.get(&p)) {
        if let Ok(inherited) = sca::iterate_from_precoders(
            pred.prec.clone(),
            Some(pred.alloc.clone()),
            ch,
            su_beam,
            &model,
            opts,
        ) {
            if let Ok(report) = rates::evaluate(
                ch,
                su_beam,
                &inherited.prec,
                &inherited.alloc,
                &model,
                ChannelView::Estimate,
            ) {
                if report.mmf > out.report.mmf {
                    out = ScaOutcome {
                        iterate: inherited,
                        report,
                        q_trace: out.q_trace,
                        converged: true,
                        solver_ok: true,
                    };
                }
            }
        }
    }

    let spc = out.iterate.prec.spc_power_fraction(cfg);
    warm.joint.insert(id, out.iterate.clone());
    Ok(SchemeResult {
        scheme: id,
        mmf: out.report.mmf,
        spc_fraction: spc,
        beta: None,
        converged: out.converged,
        solver_ok: out.solver_ok,
        sca_iters: out.q_trace.len(),
        joint: Some(out.iterate),
    })
}

/// Solves the two per-network problems of an orthogonal split and returns
/// (overall MMF, satellite MMF, cell MMF, converged, solver_ok, iters).
fn solve_split(
    common: bool,
    four_color: bool,
    beta: f64,
    ch: &ChannelRealization,
    su_beam: &[usize],
    cfg: &ScenarioConfig,
    opts: &ScaOptions,
    warm: &mut WarmState,
) -> Result<(f64, bool, bool, usize), ScaError> {
    let bk = beta_key(beta);
    let key: SideKey = (common, four_color, bk);

    // satellite side: independent of the BS power, reuse outright if cached
    let (sat_mmf, sat_conv, sat_ok, sat_iters) = if let Some((_, Some(mmf))) = warm.sat_side.get(&key) {
        (*mmf, true, true, 0)
    } else {
        let spectrum = if four_color { SpectrumModel::four_color_sat() } else { SpectrumModel::split_sat(beta) };
        let model = EvalModel { mask: StreamMask::sat_only(common), spectrum };
        let warm_it = warm
            .nearest_sat(common, four_color, bk)
            .map(|(it, _)| it.clone())
            .and_then(|it| sca::iterate_from_precoders(it.prec, Some(it.alloc), ch, su_beam, &model, opts).ok());
        let out = solve_model(&model, warm_it, ch, su_beam, cfg, opts)?;
        let res = (out.report.mmf, out.converged, out.solver_ok, out.q_trace.len());
        warm.sat_side.insert(key, (out.iterate, Some(out.report.mmf)));
        res
    };

    // cell side
    let spectrum = if four_color { SpectrumModel::four_color_cell() } else { SpectrumModel::split_cell(beta) };
    let model = EvalModel { mask: StreamMask::cell_only(common), spectrum };
    let warm_it = warm
        .nearest_cell(common, four_color, bk)
        .cloned()
        .and_then(|it| sca::iterate_from_precoders(it.prec, Some(it.alloc), ch, su_beam, &model, opts).ok());
    let out = solve_model(&model, warm_it, ch, su_beam, cfg, opts)?;
    let cell_mmf = out.report.mmf;
    let conv = sat_conv && out.converged;
    let ok = sat_ok && out.solver_ok;
    let iters = sat_iters + out.q_trace.len();
    warm.cell_side.insert(key, out.iterate);

    Ok((sat_mmf.min(cell_mmf), conv, ok, iters))
}

/// Grid search for the best satellite band fraction: bisection on the 0.05
/// grid (the satellite MMF grows with beta while the cell MMF shrinks, so
/// their minimum peaks where they cross), then a 0.01 refinement pass around
/// the best coarse point.
fn adaptive_beta(
    common: bool,
    ch: &ChannelRealization,
    su_beam: &[usize],
    cfg: &ScenarioConfig,
    opts: &ScaOptions,
    warm: &mut WarmState,
) -> Result<(f64, f64, bool, bool, usize), ScaError> {
    let mut evaluated: HashMap<u32, (f64, bool, bool)> = HashMap::new();
    let mut total_iters = 0usize;

    type EvalMap = HashMap<u32, (f64, bool, bool)>;
    let eval = |beta: f64,
                evaluated: &mut EvalMap,
                warm: &mut WarmState,
                iters: &mut usize|
     -> Result<f64, ScaError> {
        let bk = beta_key(beta);
        if let Some(&(v, _, _)) = evaluated.get(&bk) {
            return Ok(v);
        }
        let (v, conv, ok, it) = solve_split(common, false, beta, ch, su_beam, cfg, opts, warm)?;
        *iters += it;
        evaluated.insert(bk, (v, conv, ok));
        Ok(v)
    };

    // coarse bisection on the 0.05 grid using the sat-vs-cell balance
    let mut lo = 1usize; // grid index: beta = i * 0.05
    let mut hi = 19usize;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let beta = mid as f64 * 0.05;
        eval(beta, &mut evaluated, warm, &mut total_iters)?;
        let bk = beta_key(beta);
        let sat_mmf = warm.sat_side.get(&(common, false, bk)).and_then(|&(_, m)| m).unwrap_or(0.0);
        let cell_mmf = evaluated.get(&bk).map(|&(v, _, _)| v).unwrap_or(0.0);
        // v = min(sat, cell); sat side short => push beta up
        if sat_mmf <= cell_mmf + 1e-12 && (sat_mmf - cell_mmf).abs() > 1e-12 {
            lo = mid;
        } else if (sat_mmf - cell_mmf).abs() <= 1e-12 {
            lo = mid;
            hi = mid + 1;
        } else {
            hi = mid;
        }
    }
    for i in [lo, hi] {
        eval(i as f64 * 0.05, &mut evaluated, warm, &mut total_iters)?;
    }

    // 0.01 refinement around the best coarse point
    let (&best_bk, _) = evaluated
        .iter()
        .max_by(|a, b| a.1 .0.partial_cmp(&b.1 .0).unwrap())
        .expect("grid evaluated");
    let center = best_bk as f64 / 1000.0;
    let mut beta = (center - 0.04).max(0.01);
    while beta <= center + 0.04 + 1e-9 {
        if beta < 0.999 {
            eval(beta, &mut evaluated, warm, &mut total_iters)?;
        }
        beta += 0.01;
    }

    let (&bk, &(mmf, conv, ok)) = evaluated
        .iter()
        .max_by(|a, b| a.1 .0.partial_cmp(&b.1 .0).unwrap())
        .expect("grid evaluated");
    Ok((bk as f64 / 1000.0, mmf, conv, ok, total_iters))
}

/// Evaluates one scheme on one channel realization, using and updating the
/// warm-start state.
pub fn evaluate_scheme(
    spec: &SchemeSpec,
    ch: &ChannelRealization,
    su_beam: &[usize],
    cfg: &ScenarioConfig,
    opts: &ScaOptions,
    warm: &mut WarmState,
) -> Result<SchemeResult, ScaError> {
    match spec.id {
        SchemeId::SRsmaIstn | SchemeId::RsmaIstn | SchemeId::SdmaIstn => {
            solve_joint(spec.id, ch, su_beam, cfg, opts, warm)
        }
        SchemeId::AdaptRsmaOma => {
            let (beta, mmf, conv, ok, iters) = adaptive_beta(true, ch, su_beam, cfg, opts, warm)?;
            Ok(SchemeResult {
                scheme: spec.id,
                mmf,
                spc_fraction: 0.0,
                beta: Some(beta),
                converged: conv,
                solver_ok: ok,
                sca_iters: iters,
                joint: None,
            })
        }
        SchemeId::RsmaOma | SchemeId::SdmaOma | SchemeId::FourColorOma => {
            let common = spec.id.oma_common();
            let four_color = spec.id == SchemeId::FourColorOma;
            let beta = if four_color { 0.25 } else { spec.fixed_beta };
            let (mmf, conv, ok, iters) = solve_split(common, four_color, beta, ch, su_beam, cfg, opts, warm)?;
            Ok(SchemeResult {
                scheme: spec.id,
                mmf,
                spc_fraction: 0.0,
                beta: Some(beta),
                converged: conv,
                solver_ok: ok,
                sca_iters: iters,
                joint: None,
            })
        }
    }
}

/// Evaluates several schemes on one realization in an order that maximizes
/// warm-start reuse (coordinated chain first, poorest scheme first).
pub fn evaluate_all(
    specs: &[SchemeSpec],
    ch: &ChannelRealization,
    su_beam: &[usize],
    cfg: &ScenarioConfig,
    opts: &ScaOptions,
    warm: &mut WarmState,
) -> Result<Vec<SchemeResult>, ScaError> {
    let mut order: Vec<SchemeSpec> = specs.to_vec();
    order.sort_by_key(|s| match s.id {
        SchemeId::SdmaIstn => 0,
        SchemeId::RsmaIstn => 1,
        SchemeId::SRsmaIstn => 2,
        SchemeId::SdmaOma => 3,
        SchemeId::RsmaOma => 4,
        SchemeId::AdaptRsmaOma => 5,
        SchemeId::FourColorOma => 6,
    });
    let mut results = Vec::with_capacity(order.len());
    for spec in &order {
        results.push(evaluate_scheme(spec, ch, su_beam, cfg, opts, warm)?);
    }
    // report in the caller's order
    results.sort_by_key(|r| specs.iter().position(|s| s.id == r.scheme).unwrap_or(usize::MAX));
    Ok(results)
}
