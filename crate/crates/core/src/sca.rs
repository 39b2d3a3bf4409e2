//! Successive convex approximation (SCA) for the max-min fairness precoding
//! problem.
//!
//! Each outer iteration linearizes the nonconvex SINR constraints around the
//! previous iterate — quadratic-over-linear Taylor minorants for the signal
//! terms and hyperbolic tangent minorants of `ln(1+t)` in SOC form for the
//! rate terms — and solves the resulting second-order cone program for the
//! precoders, common-rate portions, the SINR auxiliaries and the MMF bound
//! `q`. Because every minorant is tight at the expansion point, the previous
//! iterate stays feasible and the `q` trace is nondecreasing up to solver
//! tolerance.

use nalgebra::{DVector, DVectorView};
use num_complex::Complex64;
use thiserror::Error;

use crate::channel::ChannelRealization;
use crate::conic::{ConicProgram, ConicError, LinExpr, SolveResult};
use crate::rates::{self, ChannelView, EvalModel, PrecoderSet, RateAllocation, RateError, RateReport, SinrTable};
use crate::scenario::ScenarioConfig;

/// SINR auxiliary variables of the subproblem, one value per user and stream.
#[derive(Debug, Clone, Default)]
pub struct AuxVars {
    /// SU private SINRs.
    pub b: Vec<f64>,
    /// SU super-common SINRs.
    pub b_spc: Vec<f64>,
    /// SU satellite-common SINRs.
    pub b_sc: Vec<f64>,
    /// CU private SINRs.
    pub a: Vec<f64>,
    /// CU super-common SINRs.
    pub a_spc: Vec<f64>,
    /// CU cellular-common SINRs.
    pub a_c: Vec<f64>,
}

impl AuxVars {
    fn from_sinrs(t: &SinrTable, floor: f64) -> Self {
        let fl = |v: &[f64]| v.iter().map(|&x| x.max(floor)).collect();
        Self {
            b: fl(&t.private_su),
            b_spc: fl(&t.spc_su),
            b_sc: fl(&t.sc_su),
            a: fl(&t.private_cu),
            a_spc: fl(&t.spc_cu),
            a_c: fl(&t.c_cu),
        }
    }
}

/// One SCA iterate: the expansion point for the next subproblem.
#[derive(Debug, Clone)]
pub struct ScaIterate {
    pub prec: PrecoderSet,
    pub alloc: RateAllocation,
    pub aux: AuxVars,
    /// MMF bound achieved by this iterate.
    pub q: f64,
}

/// SCA loop controls.
#[derive(Debug, Clone)]
pub struct ScaOptions {
    pub max_iters: usize,
    /// Stop when |q_n - q_{n-1}| falls below this.
    pub tol: f64,
    /// Lower floor applied to all SINR auxiliaries.
    pub aux_floor: f64,
}

impl Default for ScaOptions {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-4, aux_floor: 1e-9 }
    }
}

/// Result of a full SCA run.
#[derive(Debug, Clone)]
pub struct ScaOutcome {
    pub iterate: ScaIterate,
    /// Exact rate evaluation at the final iterate.
    pub report: RateReport,
    /// Objective value after each subproblem solve.
    pub q_trace: Vec<f64>,
    /// Whether the stopping tolerance was met before the iteration cap.
    pub converged: bool,
    /// False when the final subproblem ended in numerical trouble.
    pub solver_ok: bool,
}

#[derive(Debug, Error)]
pub enum ScaError {
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error("initial point is infeasible: {0}")]
    BadInit(String),
}

// ---------------------------------------------------------------------------
// minorants

/// Value of the quadratic-over-linear Taylor minorant of `|c^H w|^2 / t`
/// around `(w0, t0)`, for oracle tests.
pub fn qol_minorant_value(
    c: &DVector<Complex64>,
    w0: &DVector<Complex64>,
    t0: f64,
    w: &DVector<Complex64>,
    t: f64,
) -> f64 {
    let s0: Complex64 = c.iter().zip(w0.iter()).map(|(x, y)| x.conj() * y).sum();
    let s: Complex64 = c.iter().zip(w.iter()).map(|(x, y)| x.conj() * y).sum();
    2.0 * (s0.conj() * s).re / t0 - s0.norm_sqr() / (t0 * t0) * t
}

/// Parameters (u, v) of the hyperbolic minorant `v - u/t <= ln(1+t)` tight at
/// `t0`: matching value and slope of `ln(1+t)` there.
pub fn log_minorant_params(t0: f64) -> (f64, f64) {
    let u = t0 * t0 / (1.0 + t0);
    let v = t0 / (1.0 + t0) + (1.0 + t0).ln();
    (u, v)
}

// ---------------------------------------------------------------------------
// complex variable bookkeeping

/// A complex vector of decision variables, stored as (re, im) id pairs.
#[derive(Debug, Clone)]
struct ComplexVec {
    vars: Vec<(usize, usize)>,
}

impl ComplexVec {
    fn add(prog: &mut ConicProgram, prefix: &str, dim: usize) -> Self {
        let vars = (0..dim)
            .map(|i| {
                let re = prog.add_var(format!("{prefix}_{i}_re"));
                let im = prog.add_var(format!("{prefix}_{i}_im"));
                (re, im)
            })
            .collect();
        Self { vars }
    }

    /// Affine real/imag parts of `c^H w`.
    fn herm_inner(&self, c: DVectorView<Complex64>) -> (LinExpr, LinExpr) {
        let mut re = LinExpr::zero();
        let mut im = LinExpr::zero();
        for (n, &(vr, vi)) in self.vars.iter().enumerate() {
            let (cr, ci) = (c[n].re, c[n].im);
            re.push(vr, cr);
            re.push(vi, ci);
            im.push(vi, cr);
            im.push(vr, -ci);
        }
        (re, im)
    }

    /// Pushes the two inner-product rows of `|c^H w|^2` onto `rows`.
    fn push_inner_rows(&self, c: DVectorView<Complex64>, rows: &mut Vec<LinExpr>) {
        let (re, im) = self.herm_inner(c);
        rows.push(re);
        rows.push(im);
    }

    /// Pushes `scale * entry` rows for every real component, for isotropic
    /// error-power and transmit-power terms.
    fn push_entry_rows(&self, scale: f64, rows: &mut Vec<LinExpr>) {
        for &(vr, vi) in &self.vars {
            rows.push(LinExpr::term(vr, scale));
            rows.push(LinExpr::term(vi, scale));
        }
    }

    fn extract(&self, x: &[f64]) -> DVector<Complex64> {
        DVector::from_iterator(
            self.vars.len(),
            self.vars.iter().map(|&(vr, vi)| Complex64::new(x[vr], x[vi])),
        )
    }
}

/// Variable ids of one subproblem, for warm extraction.
pub struct VarMap {
    w_spc: Option<ComplexVec>,
    w_sc: Option<ComplexVec>,
    w_private: Vec<ComplexVec>,
    p_c: Option<ComplexVec>,
    p_private: Vec<ComplexVec>,
    c_spc: Vec<usize>,
    c_sc: Vec<usize>,
    c_bs: Vec<usize>,
    q: usize,
    b: Vec<usize>,
    b_spc: Vec<usize>,
    b_sc: Vec<usize>,
    a: Vec<usize>,
    a_spc: Vec<usize>,
    a_c: Vec<usize>,
    n_feeds: usize,
    n_beams: usize,
    n_bs_antennas: usize,
    n_cus: usize,
}

impl VarMap {
    /// Reassembles an SCA iterate from a subproblem solution.
    pub fn extract(&self, sol: &SolveResult, floor: f64) -> ScaIterate {
        let x = &sol.x;
        let cvec = |o: &Option<ComplexVec>, dim: usize| match o {
            Some(v) => v.extract(x),
            None => DVector::zeros(dim),
        };
        let prec = PrecoderSet {
            w_spc: cvec(&self.w_spc, self.n_feeds),
            w_sc: cvec(&self.w_sc, self.n_feeds),
            w_private: if self.w_private.is_empty() {
                (0..self.n_beams).map(|_| DVector::zeros(self.n_feeds)).collect()
            } else {
                self.w_private.iter().map(|v| v.extract(x)).collect()
            },
            p_c: cvec(&self.p_c, self.n_bs_antennas),
            p_private: if self.p_private.is_empty() {
                (0..self.n_cus).map(|_| DVector::zeros(self.n_bs_antennas)).collect()
            } else {
                self.p_private.iter().map(|v| v.extract(x)).collect()
            },
        };
        let vals = |ids: &[usize], len: usize| -> Vec<f64> {
            if ids.is_empty() {
                vec![0.0; len]
            } else {
                ids.iter().map(|&v| x[v].max(0.0)).collect()
            }
        };
        let alloc = RateAllocation {
            c_spc: vals(&self.c_spc, self.n_beams),
            c_sc: vals(&self.c_sc, self.n_beams),
            c_bs: vals(&self.c_bs, self.n_cus),
        };
        let auxv = |ids: &[usize]| -> Vec<f64> { ids.iter().map(|&v| x[v].max(floor)).collect() };
        let aux = AuxVars {
            b: auxv(&self.b),
            b_spc: auxv(&self.b_spc),
            b_sc: auxv(&self.b_sc),
            a: auxv(&self.a),
            a_spc: auxv(&self.a_spc),
            a_c: auxv(&self.a_c),
        };
        ScaIterate { prec, alloc, aux, q: x[self.q] }
    }
}

// ---------------------------------------------------------------------------
// subproblem assembly

fn sum_vars(ids: &[usize]) -> LinExpr {
    let mut e = LinExpr::zero();
    for &v in ids {
        e.push(v, 1.0);
    }
    e
}

/// Adds `s_bits <= prelog * log2(1 + t)` as the SOC row of the hyperbolic log
/// minorant expanded at `t0`.
fn add_rate_log_row(
    prog: &mut ConicProgram,
    s_bits: LinExpr,
    prelog: f64,
    t_var: usize,
    t0: f64,
    name: &str,
) {
    let (u, v) = log_minorant_params(t0);
    // in nats, normalized by the prelog: s' <= v - u/t
    let s_nat = s_bits * (std::f64::consts::LN_2 / prelog);
    let t = LinExpr::var(t_var);
    let rows = vec![
        t.clone() + s_nat.clone() - LinExpr::constant(v),
        LinExpr::constant(2.0 * u.sqrt()),
    ];
    prog.add_soc(rows, t - s_nat + LinExpr::constant(v), name.to_string());
}

/// Affine quadratic-over-linear minorant of `|c^H w|^2 / t` around the
/// previous iterate's `(w0, t0)`.
fn qol_minorant_expr(
    c: DVectorView<Complex64>,
    vec: &ComplexVec,
    w0: &DVector<Complex64>,
    t_var: usize,
    t0: f64,
) -> LinExpr {
    let s0: Complex64 = c.iter().zip(w0.iter()).map(|(x, y)| x.conj() * y).sum();
    let (re, im) = vec.herm_inner(c);
    re * (2.0 * s0.re / t0) + im * (2.0 * s0.im / t0) + LinExpr::term(t_var, -s0.norm_sqr() / (t0 * t0))
}

/// Builds the convex subproblem around `prev`. Returns the program and the
/// variable map for solution extraction.
pub fn build_subproblem(
    prev: &ScaIterate,
    ch: &ChannelRealization,
    su_beam: &[usize],
    cfg: &ScenarioConfig,
    model: &EvalModel,
) -> (ConicProgram, VarMap) {
    let mask = &model.mask;
    let sp = &model.spectrum;
    let n_feeds = cfg.n_sat_feeds;
    let n_beams = cfg.n_sat_feeds;
    let n_sus = if mask.include_sat { ch.n_sus() } else { 0 };
    let n_cus = if mask.include_cell { ch.n_cus() } else { 0 };

    let mut prog = ConicProgram::new();

    // precoder variables
    let w_spc = (mask.include_sat && mask.super_common).then(|| ComplexVec::add(&mut prog, "w_spc", n_feeds));
    let w_sc = (mask.include_sat && mask.sat_common).then(|| ComplexVec::add(&mut prog, "w_sc", n_feeds));
    let w_private: Vec<ComplexVec> = if mask.include_sat {
        (0..n_beams).map(|n| ComplexVec::add(&mut prog, &format!("w_{n}"), n_feeds)).collect()
    } else {
        Vec::new()
    };
    let p_c = (mask.include_cell && mask.cell_common).then(|| ComplexVec::add(&mut prog, "p_c", cfg.n_bs_antennas));
    let p_private: Vec<ComplexVec> = if mask.include_cell {
        (0..cfg.n_cus).map(|k| ComplexVec::add(&mut prog, &format!("p_{k}"), cfg.n_bs_antennas)).collect()
    } else {
        Vec::new()
    };

    // rate-portion, objective and rate variables
    let c_spc = if mask.super_common { prog.add_vars("c_spc", n_beams) } else { Vec::new() };
    let c_sc = if mask.include_sat && mask.sat_common { prog.add_vars("c_sc", n_beams) } else { Vec::new() };
    let c_bs = if mask.include_cell && mask.cell_common { prog.add_vars("c_bs", cfg.n_cus) } else { Vec::new() };
    let q = prog.add_var("q");
    let alpha = if mask.include_sat { prog.add_vars("alpha", n_beams) } else { Vec::new() };
    let r_su = if mask.include_sat { prog.add_vars("r_su", n_sus) } else { Vec::new() };

    // SINR auxiliaries
    let b = prog.add_vars("b", n_sus);
    let b_spc = if mask.super_common { prog.add_vars("b_spc", n_sus) } else { Vec::new() };
    let b_sc = if mask.include_sat && mask.sat_common { prog.add_vars("b_sc", n_sus) } else { Vec::new() };
    let a = prog.add_vars("a", n_cus);
    let a_spc = if mask.super_common { prog.add_vars("a_spc", n_cus) } else { Vec::new() };
    let a_c = if mask.include_cell && mask.cell_common { prog.add_vars("a_c", n_cus) } else { Vec::new() };

    prog.maximize(LinExpr::var(q));
    prog.add_ge(LinExpr::var(q), 0.0, "q_nonneg");
    for &v in c_spc.iter().chain(&c_sc).chain(&c_bs).chain(&alpha).chain(&r_su) {
        prog.add_ge(LinExpr::var(v), 0.0, format!("nonneg_{}", prog.var_name(v)));
    }
    for &v in b.iter().chain(&b_spc).chain(&b_sc).chain(&a).chain(&a_spc).chain(&a_c) {
        prog.add_ge(LinExpr::var(v), 0.0, format!("nonneg_{}", prog.var_name(v)));
    }

    // satellite-side SINR and rate rows
    for k in 0..n_sus {
        let f = ch.f_hat.column(k);
        let own = su_beam[k];
        let sigma = ch.err_var_su[k];

        // interference rows shared by the three sat-side SINR families:
        // in-band private streams (minus the signal one where applicable),
        // the isotropic CSIT-error power and the sub-band noise
        let base_rows = |skip_own: bool| -> Vec<LinExpr> {
            let mut rows = Vec::new();
            for (i, wv) in w_private.iter().enumerate() {
                if !sp.inter_beam && i != own {
                    continue;
                }
                if skip_own && i == own {
                    continue;
                }
                wv.push_inner_rows(f, &mut rows);
            }
            // error power of the private streams only: the common streams are
            // decoded and cancelled with receiver-side CSI before the private
            // stage, so their error rows are added per earlier stage below
            if sigma > 0.0 {
                let s = sigma.sqrt();
                if sp.inter_beam {
                    for wv in &w_private {
                        wv.push_entry_rows(s, &mut rows);
                    }
                } else {
                    w_private[own].push_entry_rows(s, &mut rows);
                }
            }
            rows.push(LinExpr::constant(sp.noise_sat.sqrt()));
            rows
        };

        // private stream: interference excludes the own-beam signal
        let rhs = qol_minorant_expr(f, &w_private[own], &prev.prec.w_private[own], b[k], prev.aux.b[k]);
        prog.add_sum_squares_le(&base_rows(true), rhs, format!("sinr_su_priv_{k}"));

        if let Some(wv) = &w_sc {
            let mut rows = base_rows(false);
            if sigma > 0.0 {
                wv.push_entry_rows(sigma.sqrt(), &mut rows);
            }
            let rhs = qol_minorant_expr(f, wv, &prev.prec.w_sc, b_sc[k], prev.aux.b_sc[k]);
            prog.add_sum_squares_le(&rows, rhs, format!("sinr_su_sc_{k}"));
        }
        if let Some(wv) = &w_spc {
            let mut rows = base_rows(false);
            if let Some(sc) = &w_sc {
                sc.push_inner_rows(f, &mut rows);
                if sigma > 0.0 {
                    sc.push_entry_rows(sigma.sqrt(), &mut rows);
                }
            }
            if sigma > 0.0 {
                wv.push_entry_rows(sigma.sqrt(), &mut rows);
            }
            let rhs = qol_minorant_expr(f, wv, &prev.prec.w_spc, b_spc[k], prev.aux.b_spc[k]);
            prog.add_sum_squares_le(&rows, rhs, format!("sinr_su_spc_{k}"));
        }

        add_rate_log_row(&mut prog, LinExpr::var(r_su[k]), sp.prelog_sat, b[k], prev.aux.b[k], &format!("rate_su_priv_{k}"));
        prog.add_le(LinExpr::var(alpha[own]), LinExpr::var(r_su[k]), format!("alpha_le_r_{k}"));
        if !c_sc.is_empty() {
            add_rate_log_row(&mut prog, sum_vars(&c_sc), sp.prelog_sat, b_sc[k], prev.aux.b_sc[k], &format!("rate_su_sc_{k}"));
        }
        if !c_spc.is_empty() {
            add_rate_log_row(&mut prog, sum_vars(&c_spc), sp.prelog_sat, b_spc[k], prev.aux.b_spc[k], &format!("rate_su_spc_{k}"));
        }
    }

    // per-beam totals
    if mask.include_sat {
        for n in 0..n_beams {
            let mut total = LinExpr::var(alpha[n]);
            if !c_spc.is_empty() {
                total += LinExpr::var(c_spc[n]);
            }
            if !c_sc.is_empty() {
                total += LinExpr::var(c_sc[n]);
            }
            prog.add_le(LinExpr::var(q), total, format!("mmf_beam_{n}"));
        }
    }

    // cellular-side SINR and rate rows
    for k in 0..n_cus {
        let h = ch.h.column(k);
        let z = ch.z_hat.column(k);
        let sigma = ch.err_var_cu[k];

        let base_rows = |skip_own: Option<usize>| -> Vec<LinExpr> {
            let mut rows = Vec::new();
            for (j, pv) in p_private.iter().enumerate() {
                if skip_own == Some(j) {
                    continue;
                }
                pv.push_inner_rows(h, &mut rows);
            }
            if sp.inter_network {
                if let Some(v) = &w_sc {
                    v.push_inner_rows(z, &mut rows);
                }
                for wv in &w_private {
                    wv.push_inner_rows(z, &mut rows);
                }
                // the super-common stream is cancelled before anything else
                // is decoded at a CU, so its error rows only appear in its
                // own decoding constraint below
                if sigma > 0.0 {
                    let s = sigma.sqrt();
                    if let Some(v) = &w_sc {
                        v.push_entry_rows(s, &mut rows);
                    }
                    for wv in &w_private {
                        wv.push_entry_rows(s, &mut rows);
                    }
                }
            }
            rows.push(LinExpr::constant(sp.noise_cell.sqrt()));
            rows
        };

        let rhs = qol_minorant_expr(h, &p_private[k], &prev.prec.p_private[k], a[k], prev.aux.a[k]);
        prog.add_sum_squares_le(&base_rows(Some(k)), rhs, format!("sinr_cu_priv_{k}"));

        if let Some(pv) = &p_c {
            let rhs = qol_minorant_expr(h, pv, &prev.prec.p_c, a_c[k], prev.aux.a_c[k]);
            prog.add_sum_squares_le(&base_rows(None), rhs, format!("sinr_cu_c_{k}"));
        }
        if let Some(wv) = &w_spc {
            let mut rows = base_rows(None);
            if let Some(pv) = &p_c {
                pv.push_inner_rows(h, &mut rows);
            }
            if sp.inter_network && sigma > 0.0 {
                wv.push_entry_rows(sigma.sqrt(), &mut rows);
            }
            let rhs = qol_minorant_expr(z, wv, &prev.prec.w_spc, a_spc[k], prev.aux.a_spc[k]);
            prog.add_sum_squares_le(&rows, rhs, format!("sinr_cu_spc_{k}"));
        }

        // CU total: q - c_bs_k <= prelog * log2(1 + a_k)
        let mut s = LinExpr::var(q);
        if !c_bs.is_empty() {
            s += LinExpr::term(c_bs[k], -1.0);
        }
        add_rate_log_row(&mut prog, s, sp.prelog_cell, a[k], prev.aux.a[k], &format!("mmf_cu_{k}"));
        if !c_bs.is_empty() {
            add_rate_log_row(&mut prog, sum_vars(&c_bs), sp.prelog_cell, a_c[k], prev.aux.a_c[k], &format!("rate_cu_c_{k}"));
        }
        if !c_spc.is_empty() {
            add_rate_log_row(&mut prog, sum_vars(&c_spc), sp.prelog_cell, a_spc[k], prev.aux.a_spc[k], &format!("rate_cu_spc_{k}"));
        }
    }

    // transmit power budgets
    if mask.include_sat {
        let cap = cfg.per_feed_power();
        for n in 0..n_feeds {
            let mut rows = Vec::new();
            for vec in w_spc.iter().chain(&w_sc).chain(&w_private) {
                let (vr, vi) = vec.vars[n];
                rows.push(LinExpr::var(vr));
                rows.push(LinExpr::var(vi));
            }
            prog.add_sum_squares_le(&rows, LinExpr::constant(cap), format!("power_feed_{n}"));
        }
    }
    if mask.include_cell {
        let mut rows = Vec::new();
        for vec in p_c.iter().chain(&p_private) {
            vec.push_entry_rows(1.0, &mut rows);
        }
        prog.add_sum_squares_le(&rows, LinExpr::constant(cfg.p_bs_watt), "power_bs");
    }

    let map = VarMap {
        w_spc,
        w_sc,
        w_private,
        p_c,
        p_private,
        c_spc,
        c_sc,
        c_bs,
        q,
        b,
        b_spc,
        b_sc,
        a,
        a_spc,
        a_c,
        n_feeds,
        n_beams,
        n_bs_antennas: cfg.n_bs_antennas,
        n_cus: cfg.n_cus,
    };
    (prog, map)
}

// ---------------------------------------------------------------------------
// starting points

fn matched_column(cols: &[DVector<Complex64>]) -> DVector<Complex64> {
    let mut v = cols[0].clone();
    for c in &cols[1..] {
        v += c;
    }
    let n = v.norm();
    if n > 0.0 {
        v /= Complex64::new(n, 0.0);
    }
    v
}

/// Matched-filter starting point: beam/user matched directions with a fixed
/// power split over the enabled streams, scaled to meet the power budgets
/// with equality on the tightest feed.
pub fn initialize(
    ch: &ChannelRealization,
    su_beam: &[usize],
    cfg: &ScenarioConfig,
    model: &EvalModel,
    opts: &ScaOptions,
) -> Result<ScaIterate, ScaError> {
    let mask = &model.mask;
    let n_beams = cfg.n_sat_feeds;
    let mut prec = PrecoderSet::zeros(cfg.n_sat_feeds, n_beams, cfg.n_bs_antennas, cfg.n_cus);

    if mask.include_sat {
        // stream power weights: private 0.5, common 0.3, super-common 0.2,
        // renormalized over the streams that exist
        let mut weights = vec![("priv", 0.5)];
        if mask.sat_common {
            weights.push(("sc", 0.3));
        }
        if mask.super_common {
            weights.push(("spc", 0.2));
        }
        let total: f64 = weights.iter().map(|&(_, w)| w).sum();

        let all_cols: Vec<DVector<Complex64>> = (0..ch.n_sus()).map(|k| ch.f_hat.column(k).into_owned()).collect();
        for n in 0..n_beams {
            let members: Vec<DVector<Complex64>> = su_beam
                .iter()
                .enumerate()
                .filter(|&(_, &bn)| bn == n)
                .map(|(k, _)| all_cols[k].clone())
                .collect();
            let dir = matched_column(&members);
            let p = 0.5 / total * cfg.p_sat_watt / n_beams as f64;
            prec.w_private[n] = dir * Complex64::new(p.sqrt(), 0.0);
        }
        let broad = matched_column(&all_cols);
        if mask.sat_common {
            let p = 0.3 / total * cfg.p_sat_watt;
            prec.w_sc = broad.clone() * Complex64::new(p.sqrt(), 0.0);
        }
        if mask.super_common {
            let p = 0.2 / total * cfg.p_sat_watt;
            prec.w_spc = broad * Complex64::new(p.sqrt(), 0.0);
        }
        // scale so the hottest feed meets its cap with equality
        let cap = cfg.per_feed_power();
        let max_feed = (0..cfg.n_sat_feeds).map(|n| prec.sat_feed_power(n)).fold(0.0f64, f64::max);
        if max_feed > 0.0 {
            let s = Complex64::new((cap / max_feed).sqrt(), 0.0);
            prec.w_spc *= s;
            prec.w_sc *= s;
            for w in &mut prec.w_private {
                *w *= s;
            }
        }
    }

    if mask.include_cell {
        let common_w = if mask.cell_common { 0.3 } else { 0.0 };
        let per_user = (1.0 - common_w) / cfg.n_cus as f64;
        for k in 0..cfg.n_cus {
            let h = ch.h.column(k).into_owned();
            let n = h.norm();
            if n > 0.0 {
                prec.p_private[k] = h * Complex64::new((per_user * cfg.p_bs_watt).sqrt() / n, 0.0);
            }
        }
        if mask.cell_common {
            let cols: Vec<DVector<Complex64>> = (0..ch.n_cus()).map(|k| ch.h.column(k).into_owned()).collect();
            prec.p_c = matched_column(&cols) * Complex64::new((common_w * cfg.p_bs_watt).sqrt(), 0.0);
        }
    }

    iterate_from_precoders(prec, None, ch, su_beam, model, opts)
}

/// Evaluates fixed precoders into a feasible SCA iterate: SINR auxiliaries at
/// the achieved values (floored), common-rate portions scaled down if they
/// over-claim a common stream, and `q` at the achieved MMF rate.
pub fn iterate_from_precoders(
    prec: PrecoderSet,
    alloc: Option<RateAllocation>,
    ch: &ChannelRealization,
    su_beam: &[usize],
    model: &EvalModel,
    opts: &ScaOptions,
) -> Result<ScaIterate, ScaError> {
    let table = rates::sinr_all(ch, su_beam, &prec, model, ChannelView::Estimate)?;
    let n_beams = prec.w_private.len();
    let n_cus = prec.p_private.len();
    let probe = rates::aggregate(&table, &RateAllocation::zeros(n_beams, n_cus), su_beam, model);

    let shrink = |vals: &[f64], cap: f64| -> Vec<f64> {
        let sum: f64 = vals.iter().sum();
        if sum > cap && sum > 0.0 {
            vals.iter().map(|&v| v * cap / sum).collect()
        } else {
            vals.to_vec()
        }
    };
    let alloc = match alloc {
        Some(al) => RateAllocation {
            c_spc: shrink(&al.c_spc, probe.r_spc),
            c_sc: shrink(&al.c_sc, probe.r_sc_sat),
            c_bs: shrink(&al.c_bs, probe.r_c_bs),
        },
        None => {
            // even split of the achieved common rates
            let even = |r: f64, n: usize| vec![r / n as f64; n];
            RateAllocation {
                c_spc: even(probe.r_spc, n_beams),
                c_sc: even(probe.r_sc_sat, n_beams),
                c_bs: even(probe.r_c_bs, n_cus),
            }
        }
    };
    let report = rates::aggregate(&table, &alloc, su_beam, model);
    let aux = AuxVars::from_sinrs(&table, opts.aux_floor);
    Ok(ScaIterate { prec, alloc, aux, q: report.mmf.max(0.0) })
}

/// Warm start across nested stream masks: gives each newly enabled stream a
/// tiny fraction `delta` of the power budget along a matched direction and
/// shrinks the existing precoders by `sqrt(1 - delta)` so all budgets stay
/// met. The resulting iterate loses at most O(delta) of the source MMF rate.
pub fn enable_streams_for_warm_start(
    prec: &mut PrecoderSet,
    mask: &crate::rates::StreamMask,
    ch: &ChannelRealization,
    cfg: &ScenarioConfig,
    delta: f64,
) {
    let shrink = Complex64::new((1.0 - delta).sqrt(), 0.0);
    let new_sat = |ch: &ChannelRealization| {
        let cols: Vec<DVector<Complex64>> = (0..ch.n_sus()).map(|k| ch.f_hat.column(k).into_owned()).collect();
        let dir = matched_column(&cols);
        // cap the per-feed contribution at 0.9 * delta * per-feed budget
        let max_e = dir.iter().map(|c| c.norm_sqr()).fold(0.0f64, f64::max);
        let scale = if max_e > 0.0 { (0.9 * delta * cfg.per_feed_power() / max_e).sqrt() } else { 0.0 };
        dir * Complex64::new(scale, 0.0)
    };
    let sat_grow = (mask.super_common && prec.w_spc.norm_squared() == 0.0)
        || (mask.sat_common && prec.w_sc.norm_squared() == 0.0);
    if sat_grow {
        prec.w_spc *= shrink;
        prec.w_sc *= shrink;
        for w in &mut prec.w_private {
            *w *= shrink;
        }
        if mask.super_common && prec.w_spc.norm_squared() == 0.0 {
            prec.w_spc = new_sat(ch);
        }
        if mask.sat_common && prec.w_sc.norm_squared() == 0.0 {
            prec.w_sc = new_sat(ch);
        }
    }
    if mask.cell_common && prec.p_c.norm_squared() == 0.0 {
        prec.p_c *= shrink;
        for p in &mut prec.p_private {
            *p *= shrink;
        }
        let cols: Vec<DVector<Complex64>> = (0..ch.n_cus()).map(|k| ch.h.column(k).into_owned()).collect();
        prec.p_c = matched_column(&cols) * Complex64::new((0.9 * delta * cfg.p_bs_watt).sqrt(), 0.0);
    }
}

// ---------------------------------------------------------------------------
// the outer loop

/// Runs the SCA loop from `init` until the `q` improvement falls below the
/// tolerance or the iteration cap is hit. A solve that ends in numerical
/// trouble is still accepted when the independent constraint evaluator
/// certifies the returned point (violation within `ACCEPT_VIOLATION`);
/// otherwise it is retried once with the SINR auxiliaries floored higher,
/// and if that also fails the last good iterate is returned with
/// `solver_ok = false`.
pub fn sca_solve(
    init: ScaIterate,
    ch: &ChannelRealization,
    su_beam: &[usize],
    cfg: &ScenarioConfig,
    model: &EvalModel,
    opts: &ScaOptions,
) -> Result<ScaOutcome, ScaError> {
    /// A flagged solve whose point passes the independent evaluator at this
    /// violation level is kept; the status label alone is not trusted.
    const ACCEPT_VIOLATION: f64 = 1e-6;
    let acceptable = |s: &SolveResult| s.status.is_usable() || s.max_violation <= ACCEPT_VIOLATION;

    let mut cur = init;
    let mut q_trace = Vec::new();
    let mut converged = false;
    let mut solver_ok = true;

    for _ in 0..opts.max_iters {
        let (prog, map) = build_subproblem(&cur, ch, su_beam, cfg, model);
        let mut sol = prog.solve()?;
        if !acceptable(&sol) {
            // the expansion point itself is feasible, so failures here are
            // numerical; retry once from better-conditioned auxiliaries
            let mut retry = cur.clone();
            let lift = |v: &mut Vec<f64>| {
                for x in v.iter_mut() {
                    *x = x.max(1e-6);
                }
            };
            lift(&mut retry.aux.b);
            lift(&mut retry.aux.b_spc);
            lift(&mut retry.aux.b_sc);
            lift(&mut retry.aux.a);
            lift(&mut retry.aux.a_spc);
            lift(&mut retry.aux.a_c);
            let (prog2, map2) = build_subproblem(&retry, ch, su_beam, cfg, model);
            let sol2 = prog2.solve()?;
            if !acceptable(&sol2) {
                solver_ok = false;
                break;
            }
            cur = map2.extract(&sol2, opts.aux_floor);
            q_trace.push(cur.q);
            continue;
        }
        let prev_q = cur.q;
        cur = map.extract(&sol, opts.aux_floor);
        q_trace.push(cur.q);
        sol.x.clear();
        if (cur.q - prev_q).abs() < opts.tol {
            converged = true;
            break;
        }
    }

    let report = rates::evaluate(ch, su_beam, &cur.prec, &cur.alloc, model, ChannelView::Estimate)?;
    Ok(ScaOutcome { iterate: cur, report, q_trace, converged, solver_ok })
}

/// Post-solve audit: worst power-budget violation, worst over-claim of a
/// common rate by the allocation, and the gap between the solver bound `q`
/// and the exactly re-evaluated MMF rate.
#[derive(Debug, Clone, Copy)]
pub struct AuditReport {
    pub power_violation: f64,
    pub alloc_violation: f64,
    /// `q - mmf`; positive values beyond tolerance mean the bound over-claims.
    pub q_gap: f64,
}

pub fn audit(outcome: &ScaOutcome, cfg: &ScenarioConfig) -> AuditReport {
    AuditReport {
        power_violation: outcome.iterate.prec.power_violation(cfg),
        alloc_violation: outcome.report.alloc_violation(),
        q_gap: outcome.iterate.q - outcome.report.mmf,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use crate::rates::StreamMask;

    fn small_cfg() -> ScenarioConfig {
        ScenarioConfig { n_bs_antennas: 4, ..Default::default() }
    }

    #[test]
    fn qol_minorant_tight_at_expansion_point() {
        let c = DVector::from_vec(vec![Complex64::new(1.0, 0.5), Complex64::new(-0.3, 2.0)]);
        let w0 = DVector::from_vec(vec![Complex64::new(0.2, -1.0), Complex64::new(1.5, 0.1)]);
        let t0 = 0.7;
        let s0: Complex64 = c.iter().zip(w0.iter()).map(|(x, y)| x.conj() * y).sum();
        let exact = s0.norm_sqr() / t0;
        assert_relative_eq!(qol_minorant_value(&c, &w0, t0, &w0, t0), exact, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn qol_minorant_never_exceeds_exact(seed in 0u64..200) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dim = 3;
            let cv = |r: &mut rand_chacha::ChaCha8Rng| {
                DVector::from_iterator(dim, (0..dim).map(|_| {
                    Complex64::new(r.random::<f64>() * 2.0 - 1.0, r.random::<f64>() * 2.0 - 1.0)
                }))
            };
            let c = cv(&mut rng);
            let w0 = cv(&mut rng);
            let w = cv(&mut rng);
            let t0 = 0.1 + rng.random::<f64>() * 3.0;
            let t = 0.1 + rng.random::<f64>() * 3.0;
            let s: Complex64 = c.iter().zip(w.iter()).map(|(x, y)| x.conj() * y).sum();
            let exact = s.norm_sqr() / t;
            prop_assert!(qol_minorant_value(&c, &w0, t0, &w, t) <= exact + 1e-10);
        }

        #[test]
        fn log_minorant_below_log(t0 in 0.01f64..50.0, t in 0.01f64..50.0) {
            let (u, v) = log_minorant_params(t0);
            prop_assert!(v - u / t <= (1.0 + t).ln() + 1e-12);
        }
    }

    #[test]
    fn log_minorant_tight_at_expansion_point() {
        for &t0 in &[0.5, 1.0, 10.0] {
            let (u, v) = log_minorant_params(t0);
            assert_relative_eq!(v - u / t0, (1.0 + t0).ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn rate_log_row_reaches_log_value() {
        // max S subject to S <= prelog*log2(1+t), t fixed at t0: tight there
        for &(t0, prelog) in &[(3.0, 1.0), (0.8, 0.4)] {
            let mut prog = ConicProgram::new();
            let s = prog.add_var("s");
            let t = prog.add_var("t");
            prog.maximize(LinExpr::var(s));
            prog.add_le(LinExpr::var(t), LinExpr::constant(t0), "t_ub");
            prog.add_ge(LinExpr::var(t), t0, "t_lb");
            add_rate_log_row(&mut prog, LinExpr::var(s), prelog, t, t0, "log");
            let sol = prog.solve().unwrap();
            assert_relative_eq!(sol.value(s), prelog * (1.0 + t0).log2(), epsilon = 1e-6);
        }
    }

    #[test]
    fn qol_expr_matches_value_form() {
        let mut prog = ConicProgram::new();
        let vec = ComplexVec::add(&mut prog, "w", 2);
        let t = prog.add_var("t");
        let c = DVector::from_vec(vec![Complex64::new(0.7, -0.2), Complex64::new(1.1, 0.9)]);
        let w0 = DVector::from_vec(vec![Complex64::new(-0.4, 0.3), Complex64::new(0.6, -1.2)]);
        let t0 = 1.3;
        let expr = qol_minorant_expr(c.column(0).into(), &vec, &w0, t, t0);
        let w = DVector::from_vec(vec![Complex64::new(0.9, 0.1), Complex64::new(-0.5, 0.4)]);
        let x = vec![w[0].re, w[0].im, w[1].re, w[1].im, 2.2];
        assert_relative_eq!(expr.eval(&x), qol_minorant_value(&c, &w0, t0, &w, 2.2), epsilon = 1e-12);
    }

    #[test]
    fn full_subproblem_variable_count() {
        let cfg = ScenarioConfig::default();
        let (geom, ch) = crate::channel::realize_trial(&cfg, 0).unwrap();
        let model = EvalModel::full_reuse(StreamMask::istn_srsma());
        let opts = ScaOptions::default();
        let init = initialize(&ch, &geom.su_beam, &cfg, &model, &opts).unwrap();
        let (prog, _) = build_subproblem(&init, &ch, &geom.su_beam, &cfg, &model);
        // 30 satellite precoder reals + 128 BS precoder reals + 9 rate
        // portions + q + 3 alpha + 6 r + 27 SINR auxiliaries
        assert_eq!(prog.n_vars(), 204);
    }

    #[test]
    fn initial_iterate_is_feasible_and_subproblem_improves() {
        let cfg = small_cfg();
        let (geom, ch) = crate::channel::realize_trial(&cfg, 3).unwrap();
        let model = EvalModel::full_reuse(StreamMask::istn_srsma());
        let opts = ScaOptions::default();
        let init = initialize(&ch, &geom.su_beam, &cfg, &model, &opts).unwrap();
        assert!(init.prec.power_violation(&cfg) < 1e-9);
        assert!(init.q >= 0.0);
        let (prog, map) = build_subproblem(&init, &ch, &geom.su_beam, &cfg, &model);
        let sol = prog.solve().unwrap();
        assert!(sol.status.is_usable(), "status {:?}", sol.status);
        assert!(sol.max_violation < 1e-6);
        let next = map.extract(&sol, opts.aux_floor);
        assert!(next.q >= init.q - 1e-6, "q fell from {} to {}", init.q, next.q);
    }

    #[test]
    fn sca_trace_is_monotone_and_audited() {
        let cfg = small_cfg();
        let (geom, ch) = crate::channel::realize_trial(&cfg, 1).unwrap();
        let model = EvalModel::full_reuse(StreamMask::istn_srsma());
        let opts = ScaOptions { max_iters: 15, ..Default::default() };
        let init = initialize(&ch, &geom.su_beam, &cfg, &model, &opts).unwrap();
        let out = sca_solve(init, &ch, &geom.su_beam, &cfg, &model, &opts).unwrap();
        assert!(out.solver_ok);
        assert!(out.report.mmf > 0.0);
        for w in out.q_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-6, "trace dipped: {:?}", out.q_trace);
        }
        let audit = audit(&out, &cfg);
        assert!(audit.power_violation < 1e-5, "power violation {}", audit.power_violation);
        assert!(audit.alloc_violation < 1e-4, "alloc violation {}", audit.alloc_violation);
        assert!(audit.q_gap < 1e-3, "q gap {}", audit.q_gap);
    }

    #[test]
    fn warm_start_stream_lift_keeps_budgets_and_rate() {
        let cfg = small_cfg();
        let (geom, ch) = crate::channel::realize_trial(&cfg, 2).unwrap();
        let sdma = EvalModel::full_reuse(StreamMask::istn_sdma());
        let opts = ScaOptions { max_iters: 10, ..Default::default() };
        let init = initialize(&ch, &geom.su_beam, &cfg, &sdma, &opts).unwrap();
        let out = sca_solve(init, &ch, &geom.su_beam, &cfg, &sdma, &opts).unwrap();

        let rsma = EvalModel::full_reuse(StreamMask::istn_rsma());
        let mut prec = out.iterate.prec.clone();
        enable_streams_for_warm_start(&mut prec, &rsma.mask, &ch, &cfg, 1e-6);
        assert!(prec.power_violation(&cfg) < 1e-9);
        assert!(prec.w_sc.norm_squared() > 0.0);
        let warm = iterate_from_precoders(prec, Some(out.iterate.alloc.clone()), &ch, &geom.su_beam, &rsma, &opts)
            .unwrap();
        assert!(warm.q >= out.iterate.q - 1e-3, "warm {} vs source {}", warm.q, out.iterate.q);
    }
}
