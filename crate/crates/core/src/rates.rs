//! SINRs, GMI rate lower bounds, rate aggregation and the max-min fairness
//! metric for a given precoder set and common-rate allocation.
//!
//! Rates are always computed from the channel estimates plus the closed-form
//! CSIT-error expectation terms (the achievable-rate lower bound), never from
//! sampled true channels, so every figure is deterministic per realization.
//! An evaluation view on the true channels exists for sanity checks only.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelRealization;
use crate::scenario::ScenarioConfig;

/// Which streams exist for a scheme, and which network sides take part in the
/// optimization at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamMask {
    pub super_common: bool,
    pub sat_common: bool,
    pub cell_common: bool,
    pub include_sat: bool,
    pub include_cell: bool,
}

impl StreamMask {
    pub fn istn_srsma() -> Self {
        Self { super_common: true, sat_common: true, cell_common: true, include_sat: true, include_cell: true }
    }
    pub fn istn_rsma() -> Self {
        Self { super_common: false, ..Self::istn_srsma() }
    }
    pub fn istn_sdma() -> Self {
        Self { super_common: false, sat_common: false, cell_common: false, include_sat: true, include_cell: true }
    }
    pub fn sat_only(common: bool) -> Self {
        Self { super_common: false, sat_common: common, cell_common: false, include_sat: true, include_cell: false }
    }
    pub fn cell_only(common: bool) -> Self {
        Self { super_common: false, sat_common: false, cell_common: common, include_sat: false, include_cell: true }
    }
}

/// Spectrum usage: bandwidth prelog factors, in-band noise power (the full
/// band is normalized to unit noise, so a sub-band of fraction beta sees noise
/// beta), and which interference terms are in-band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumModel {
    pub prelog_sat: f64,
    pub prelog_cell: f64,
    pub noise_sat: f64,
    pub noise_cell: f64,
    pub inter_beam: bool,
    pub inter_network: bool,
}

impl SpectrumModel {
    pub fn full_reuse() -> Self {
        Self { prelog_sat: 1.0, prelog_cell: 1.0, noise_sat: 1.0, noise_cell: 1.0, inter_beam: true, inter_network: true }
    }
    /// Satellite side of a two-way band split with fraction `beta`.
    pub fn split_sat(beta: f64) -> Self {
        Self { prelog_sat: beta, noise_sat: beta, inter_network: false, ..Self::full_reuse() }
    }
    /// Cellular side of a two-way band split with fraction `1 - beta`.
    pub fn split_cell(beta: f64) -> Self {
        Self { prelog_cell: 1.0 - beta, noise_cell: 1.0 - beta, inter_network: false, ..Self::full_reuse() }
    }
    /// Satellite side of the four-color reuse: quarter band per beam, no
    /// inter-beam and no inter-network interference.
    pub fn four_color_sat() -> Self {
        Self { prelog_sat: 0.25, noise_sat: 0.25, inter_beam: false, inter_network: false, ..Self::full_reuse() }
    }
    /// Cellular side of the four-color reuse: its own quarter band.
    pub fn four_color_cell() -> Self {
        Self { prelog_cell: 0.25, noise_cell: 0.25, inter_network: false, ..Self::full_reuse() }
    }
}

/// Stream mask plus spectrum model: everything the rate evaluator needs to
/// know about a scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalModel {
    pub mask: StreamMask,
    pub spectrum: SpectrumModel,
}

impl EvalModel {
    pub fn full_reuse(mask: StreamMask) -> Self {
        Self { mask, spectrum: SpectrumModel::full_reuse() }
    }
}

/// Whether rates are evaluated on channel estimates (the GMI lower bound used
/// everywhere) or on the sampled true channels (sanity only).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelView {
    Estimate,
    True,
}

/// Satellite beamforming matrix W = [w_spc, w_sc, w_1..w_Ns] and BS
/// beamforming matrix P = [p_c, p_1..p_Kt]. Disabled streams are zero vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    pub w_spc: DVector<Complex64>,
    pub w_sc: DVector<Complex64>,
    pub w_private: Vec<DVector<Complex64>>,
    pub p_c: DVector<Complex64>,
    pub p_private: Vec<DVector<Complex64>>,
}

impl PrecoderSet {
    pub fn zeros(n_feeds: usize, n_beams: usize, n_bs_antennas: usize, n_cus: usize) -> Self {
        Self {
            w_spc: DVector::zeros(n_feeds),
            w_sc: DVector::zeros(n_feeds),
            w_private: (0..n_beams).map(|_| DVector::zeros(n_feeds)).collect(),
            p_c: DVector::zeros(n_bs_antennas),
            p_private: (0..n_cus).map(|_| DVector::zeros(n_bs_antennas)).collect(),
        }
    }

    /// Total satellite transmit power carried by feed `n`: (W W^H)_{n,n}.
    pub fn sat_feed_power(&self, n: usize) -> f64 {
        let mut p = self.w_spc[n].norm_sqr() + self.w_sc[n].norm_sqr();
        for w in &self.w_private {
            p += w[n].norm_sqr();
        }
        p
    }

    /// Total satellite power over all feeds.
    pub fn sat_total_power(&self) -> f64 {
        (0..self.w_spc.len()).map(|n| self.sat_feed_power(n)).sum()
    }

    /// BS sum power tr(P P^H).
    pub fn bs_power(&self) -> f64 {
        self.p_c.norm_squared() + self.p_private.iter().map(|p| p.norm_squared()).sum::<f64>()
    }

    /// Super-common power fraction ||w_spc||^2 * N_s / P_s.
    pub fn spc_power_fraction(&self, cfg: &ScenarioConfig) -> f64 {
        self.w_spc.norm_squared() / cfg.p_sat_watt
    }

    /// Relative violation of the per-feed and BS power budgets.
    pub fn power_violation(&self, cfg: &ScenarioConfig) -> f64 {
        let cap = cfg.per_feed_power();
        let mut v: f64 = 0.0;
        for n in 0..self.w_spc.len() {
            v = v.max((self.sat_feed_power(n) - cap) / cap);
        }
        v.max((self.bs_power() - cfg.p_bs_watt) / cfg.p_bs_watt)
    }

    /// Sum of the squared norms of every satellite stream (for the CSIT error
    /// expectation terms).
    pub fn sat_streams_norm_sq(&self) -> f64 {
        self.w_spc.norm_squared()
            + self.w_sc.norm_squared()
            + self.w_private.iter().map(|w| w.norm_squared()).sum::<f64>()
    }
}

/// Common-rate portion vectors, bits/s/Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateAllocation {
    /// Per-beam portions of the super-common rate, C^spc_n.
    pub c_spc: Vec<f64>,
    /// Per-beam portions of the satellite-common rate, C^sat_{sc,n}.
    pub c_sc: Vec<f64>,
    /// Per-CU portions of the cellular-common rate, C^bs_k.
    pub c_bs: Vec<f64>,
}

impl RateAllocation {
    pub fn zeros(n_beams: usize, n_cus: usize) -> Self {
        Self { c_spc: vec![0.0; n_beams], c_sc: vec![0.0; n_beams], c_bs: vec![0.0; n_cus] }
    }
    pub fn min_entry(&self) -> f64 {
        self.c_spc
            .iter()
            .chain(&self.c_sc)
            .chain(&self.c_bs)
            .fold(f64::INFINITY, |m, &v| m.min(v))
            .min(0.0f64.max(f64::NEG_INFINITY))
    }
}

/// Per-user SINRs for every stream each user decodes.
#[derive(Debug, Clone, Default)]
pub struct SinrTable {
    pub spc_su: Vec<f64>,
    pub spc_cu: Vec<f64>,
    pub sc_su: Vec<f64>,
    pub c_cu: Vec<f64>,
    pub private_su: Vec<f64>,
    pub private_cu: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum RateError {
    #[error("inconsistent effective noise: g - |f^H w|^2 = {0} <= 0 for SU {1}")]
    InconsistentSatNoise(f64, usize),
    #[error("inconsistent effective noise: l - |h^H p|^2 = {0} <= 0 for CU {1}")]
    InconsistentCellNoise(f64, usize),
}

/// Rates, totals and the MMF value for one precoder/allocation pair.
#[derive(Debug, Clone)]
pub struct RateReport {
    pub sinr: SinrTable,
    /// Achievable super-common rate (min over all decoding users).
    pub r_spc: f64,
    /// Achievable satellite-common rate.
    pub r_sc_sat: f64,
    /// Achievable cellular-common rate.
    pub r_c_bs: f64,
    pub su_private_rates: Vec<f64>,
    pub cu_private_rates: Vec<f64>,
    /// Total achievable rate per beam.
    pub beam_totals: Vec<f64>,
    /// Total achievable rate per CU.
    pub cu_totals: Vec<f64>,
    /// Minimum over all beam and CU totals.
    pub mmf: f64,
    /// Slack of the common-rate caps: [R_spc - sum c_spc,
    /// R_sc - sum c_sc, R_c - sum c_bs]. Negative entries mean the
    /// allocation over-claims a common stream.
    pub margins: [f64; 3],
}

impl RateReport {
    /// Worst constraint violation of the allocation against the achieved
    /// common rates (0 when feasible).
    pub fn alloc_violation(&self) -> f64 {
        self.margins.iter().fold(0.0f64, |v, &m| v.max(-m))
    }

    /// Flat text record: one `key value` row per figure, for the harness CSV
    /// and the CLI.
    pub fn write_summary(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "mmf {:.6}", self.mmf)?;
        writeln!(w, "r_spc {:.6}", self.r_spc)?;
        writeln!(w, "r_sc_sat {:.6}", self.r_sc_sat)?;
        writeln!(w, "r_c_bs {:.6}", self.r_c_bs)?;
        for (n, t) in self.beam_totals.iter().enumerate() {
            writeln!(w, "beam_total_{n} {t:.6}")?;
        }
        for (k, t) in self.cu_totals.iter().enumerate() {
            writeln!(w, "cu_total_{k} {t:.6}")?;
        }
        for (k, r) in self.su_private_rates.iter().enumerate() {
            writeln!(w, "su_private_rate_{k} {r:.6}")?;
        }
        for (k, r) in self.cu_private_rates.iter().enumerate() {
            writeln!(w, "cu_private_rate_{k} {r:.6}")?;
        }
        Ok(())
    }
}

fn dotc(a: nalgebra::DVectorView<Complex64>, b: &DVector<Complex64>) -> Complex64 {
    // a^H b
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

fn channel_column<'a>(
    ch: &'a ChannelRealization,
    view: ChannelView,
    su: bool,
    k: usize,
) -> nalgebra::DVectorView<'a, Complex64> {
    match (view, su) {
        (ChannelView::Estimate, true) => ch.f_hat.column(k),
        (ChannelView::True, true) => ch.f_true.column(k),
        (ChannelView::Estimate, false) => ch.z_hat.column(k),
        (ChannelView::True, false) => ch.z_true.column(k),
    }
}

/// Effective noise g for SU `k`: in-band private interference, the closed-form
/// CSIT error expectation and the (sub-band) noise power.
pub fn effective_noise_g(
    k: usize,
    ch: &ChannelRealization,
    su_beam: &[usize],
    prec: &PrecoderSet,
    model: &EvalModel,
    view: ChannelView,
) -> f64 {
    let f = channel_column(ch, view, true, k);
    let mut g = model.spectrum.noise_sat;
    let own = su_beam[k];
    for (i, w) in prec.w_private.iter().enumerate() {
        if model.spectrum.inter_beam || i == own {
            g += dotc(f, w).norm_sqr();
        }
    }
    if view == ChannelView::Estimate {
        // precoder-misalignment power of the streams still in the air at the
        // last SIC stage; decoded streams are cancelled with receiver-side
        // CSI and leave no residual
        let err_power = if model.spectrum.inter_beam {
            prec.w_private.iter().map(|w| w.norm_squared()).sum::<f64>()
        } else {
            prec.w_private[own].norm_squared()
        };
        g += ch.err_var_su[k] * err_power;
    }
    g
}

/// Effective noise l for CU `k`: intra-cell private interference, in-band
/// satellite interference (estimates and error expectation) and noise.
pub fn effective_noise_l(
    k: usize,
    ch: &ChannelRealization,
    prec: &PrecoderSet,
    model: &EvalModel,
    view: ChannelView,
) -> f64 {
    let h = ch.h.column(k);
    let mut l = model.spectrum.noise_cell;
    for p in &prec.p_private {
        l += dotc(h, p).norm_sqr();
    }
    if model.spectrum.inter_network {
        let z = channel_column(ch, view, false, k);
        l += dotc(z, &prec.w_sc).norm_sqr();
        for w in &prec.w_private {
            l += dotc(z, w).norm_sqr();
        }
        if view == ChannelView::Estimate {
            // the super-common stream is cancelled with receiver-side CSI
            // before anything else is decoded, so it carries no error power
            let undecoded =
                prec.w_sc.norm_squared() + prec.w_private.iter().map(|w| w.norm_squared()).sum::<f64>();
            l += ch.err_var_cu[k] * undecoded;
        }
    }
    l
}

/// All six SINR families for every user.
pub fn sinr_all(
    ch: &ChannelRealization,
    su_beam: &[usize],
    prec: &PrecoderSet,
    model: &EvalModel,
    view: ChannelView,
) -> Result<SinrTable, RateError> {
    let mut t = SinrTable::default();
    if model.mask.include_sat {
        for k in 0..ch.n_sus() {
            let f = channel_column(ch, view, true, k);
            let g = effective_noise_g(k, ch, su_beam, prec, model, view);
            let sc_pow = dotc(f, &prec.w_sc).norm_sqr();
            let spc_pow = dotc(f, &prec.w_spc).norm_sqr();
            let own = dotc(f, &prec.w_private[su_beam[k]]).norm_sqr();
            let denom = g - own;
            if denom <= 0.0 {
                return Err(RateError::InconsistentSatNoise(denom, k));
            }
            // earlier SIC stages still see the error power of the streams
            // they have not cancelled yet
            let (err_sc, err_spc) = if view == ChannelView::Estimate {
                let e = ch.err_var_su[k];
                (e * prec.w_sc.norm_squared(), e * (prec.w_sc.norm_squared() + prec.w_spc.norm_squared()))
            } else {
                (0.0, 0.0)
            };
            t.spc_su.push(spc_pow / (sc_pow + g + err_spc));
            t.sc_su.push(sc_pow / (g + err_sc));
            t.private_su.push(own / denom);
        }
    }
    if model.mask.include_cell {
        for k in 0..ch.n_cus() {
            let h = ch.h.column(k);
            let l = effective_noise_l(k, ch, prec, model, view);
            let c_pow = dotc(h, &prec.p_c).norm_sqr();
            let own = dotc(h, &prec.p_private[k]).norm_sqr();
            let spc_pow = if model.spectrum.inter_network {
                dotc(channel_column(ch, view, false, k), &prec.w_spc).norm_sqr()
            } else {
                0.0
            };
            let denom = l - own;
            if denom <= 0.0 {
                return Err(RateError::InconsistentCellNoise(denom, k));
            }
            let err_spc = if model.spectrum.inter_network && view == ChannelView::Estimate {
                ch.err_var_cu[k] * prec.w_spc.norm_squared()
            } else {
                0.0
            };
            t.spc_cu.push(spc_pow / (c_pow + l + err_spc));
            t.c_cu.push(c_pow / l);
            t.private_cu.push(own / denom);
        }
    }
    Ok(t)
}

fn rate(prelog: f64, gamma: f64) -> f64 {
    prelog * (1.0 + gamma).log2()
}

fn min_or_inf(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(f64::INFINITY, f64::min)
}

/// Min-rate aggregation and totals for a SINR table plus an allocation.
pub fn aggregate(
    table: &SinrTable,
    alloc: &RateAllocation,
    su_beam: &[usize],
    model: &EvalModel,
) -> RateReport {
    let sp = &model.spectrum;
    let su_private_rates: Vec<f64> = table.private_su.iter().map(|&g| rate(sp.prelog_sat, g)).collect();
    let cu_private_rates: Vec<f64> = table.private_cu.iter().map(|&g| rate(sp.prelog_cell, g)).collect();

    let r_spc = if model.mask.super_common {
        min_or_inf(
            table
                .spc_su
                .iter()
                .map(|&g| rate(sp.prelog_sat, g))
                .chain(table.spc_cu.iter().map(|&g| rate(sp.prelog_cell, g))),
        )
        .min(f64::INFINITY)
    } else {
        0.0
    };
    let r_sc_sat = if model.mask.sat_common {
        min_or_inf(table.sc_su.iter().map(|&g| rate(sp.prelog_sat, g)))
    } else {
        0.0
    };
    let r_c_bs = if model.mask.cell_common {
        min_or_inf(table.c_cu.iter().map(|&g| rate(sp.prelog_cell, g)))
    } else {
        0.0
    };

    let n_beams = alloc.c_spc.len();
    let mut beam_totals = Vec::new();
    if model.mask.include_sat {
        for n in 0..n_beams {
            let members_min = min_or_inf(
                su_beam
                    .iter()
                    .enumerate()
                    .filter(|&(_, &b)| b == n)
                    .map(|(k, _)| su_private_rates[k]),
            );
            beam_totals.push(alloc.c_spc[n] + alloc.c_sc[n] + members_min);
        }
    }
    let mut cu_totals = Vec::new();
    if model.mask.include_cell {
        for (k, &r) in cu_private_rates.iter().enumerate() {
            cu_totals.push(alloc.c_bs[k] + r);
        }
    }

    let margins = [
        r_spc - alloc.c_spc.iter().sum::<f64>(),
        r_sc_sat - alloc.c_sc.iter().sum::<f64>(),
        r_c_bs - alloc.c_bs.iter().sum::<f64>(),
    ];
    let mmf = min_or_inf(beam_totals.iter().chain(cu_totals.iter()).copied());

    RateReport {
        sinr: table.clone(),
        r_spc,
        r_sc_sat,
        r_c_bs,
        su_private_rates,
        cu_private_rates,
        beam_totals,
        cu_totals,
        mmf,
        margins,
    }
}

/// SINR evaluation plus aggregation in one call.
pub fn evaluate(
    ch: &ChannelRealization,
    su_beam: &[usize],
    prec: &PrecoderSet,
    alloc: &RateAllocation,
    model: &EvalModel,
    view: ChannelView,
) -> Result<RateReport, RateError> {
    let table = sinr_all(ch, su_beam, prec, model, view)?;
    Ok(aggregate(&table, alloc, su_beam, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn toy_channel(n_s: usize, k_s: usize, n_t: usize, k_t: usize) -> ChannelRealization {
        ChannelRealization {
            f_hat: DMatrix::zeros(n_s, k_s),
            z_hat: DMatrix::zeros(n_s, k_t),
            h: DMatrix::zeros(n_t, k_t),
            f_true: DMatrix::zeros(n_s, k_s),
            z_true: DMatrix::zeros(n_s, k_t),
            err_var_su: vec![0.0; k_s],
            err_var_cu: vec![0.0; k_t],
            csit_error_var: 0.0,
        }
    }

    fn full_model() -> EvalModel {
        EvalModel::full_reuse(StreamMask::istn_srsma())
    }

    #[test]
    fn zero_precoders_give_unit_noise() {
        let ch = toy_channel(2, 2, 2, 1);
        let prec = PrecoderSet::zeros(2, 2, 2, 1);
        let model = full_model();
        let su_beam = [0, 1];
        assert_relative_eq!(effective_noise_g(0, &ch, &su_beam, &prec, &model, ChannelView::Estimate), 1.0);
        assert_relative_eq!(effective_noise_l(0, &ch, &prec, &model, ChannelView::Estimate), 1.0);
    }

    #[test]
    fn error_expectation_term_is_isotropic() {
        // sigma_e^2 = 0.1 (absolute), single unit-norm private precoder: the
        // error power depends only on the norm, not the direction, and a
        // cancelled stream (w_spc) contributes nothing
        let mut ch = toy_channel(2, 1, 2, 1);
        ch.err_var_su = vec![0.1];
        let mut prec = PrecoderSet::zeros(2, 1, 2, 1);
        prec.w_private[0] = DVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        let g = effective_noise_g(0, &ch, &[0], &prec, &full_model(), ChannelView::Estimate);
        assert_relative_eq!(g, 1.1, epsilon = 1e-12);

        prec.w_private[0] = DVector::from_vec(vec![
            Complex64::new(0.6, 0.0),
            Complex64::new(0.0, 0.8),
        ]);
        prec.w_spc = DVector::from_vec(vec![Complex64::new(3.0, 0.0), Complex64::new(0.0, 0.0)]);
        let g = effective_noise_g(0, &ch, &[0], &prec, &full_model(), ChannelView::Estimate);
        assert_relative_eq!(g, 1.1, epsilon = 1e-12);
    }

    #[test]
    fn zero_spc_precoder_means_zero_spc_rate() {
        let mut ch = toy_channel(2, 2, 2, 1);
        ch.f_hat[(0, 0)] = Complex64::new(1.0, 0.0);
        ch.f_hat[(1, 1)] = Complex64::new(1.0, 0.0);
        ch.h[(0, 0)] = Complex64::new(1.0, 0.0);
        let prec = PrecoderSet::zeros(2, 2, 2, 1);
        let model = full_model();
        let t = sinr_all(&ch, &[0, 1], &prec, &model, ChannelView::Estimate).unwrap();
        let rep = aggregate(&t, &RateAllocation::zeros(2, 1), &[0, 1], &model);
        assert_eq!(rep.r_spc, 0.0);
    }

    #[test]
    fn orthogonal_channels_no_interference() {
        let mut ch = toy_channel(2, 2, 2, 1);
        ch.f_hat[(0, 0)] = Complex64::new(1.0, 0.0);
        ch.f_hat[(1, 1)] = Complex64::new(1.0, 0.0);
        let mut prec = PrecoderSet::zeros(2, 2, 2, 1);
        let a = 3.0;
        prec.w_private[0][0] = Complex64::new(a, 0.0);
        prec.w_private[1][1] = Complex64::new(a, 0.0);
        let t = sinr_all(&ch, &[0, 1], &prec, &full_model(), ChannelView::Estimate).unwrap();
        assert_relative_eq!(t.private_su[0], a * a, epsilon = 1e-12);
        assert_relative_eq!(t.private_su[1], a * a, epsilon = 1e-12);
    }

    /// Brute-force scalar recomputation of the full SINR table on a hand-set
    /// two-feed instance, written with explicit loops as an independent route.
    #[test]
    fn toy_instance_matches_scalar_oracle() {
        let n_s = 2;
        let mut ch = toy_channel(n_s, 2, 3, 2);
        let vals = |seed: u64, len: usize| -> Vec<Complex64> {
            // deterministic pseudo-values, no rng dependency
            (0..len)
                .map(|i| {
                    let x = ((seed * 37 + i as u64 * 17) % 23) as f64 / 7.0 - 1.0;
                    let y = ((seed * 13 + i as u64 * 29) % 19) as f64 / 5.0 - 1.5;
                    Complex64::new(x, y)
                })
                .collect()
        };
        for (k, col) in [vals(1, n_s), vals(2, n_s)].iter().enumerate() {
            for n in 0..n_s {
                ch.f_hat[(n, k)] = col[n];
            }
        }
        for (k, col) in [vals(3, n_s), vals(4, n_s)].iter().enumerate() {
            for n in 0..n_s {
                ch.z_hat[(n, k)] = col[n];
            }
        }
        for (k, col) in [vals(5, 3), vals(6, 3)].iter().enumerate() {
            for n in 0..3 {
                ch.h[(n, k)] = col[n];
            }
        }
        ch.err_var_su = vec![0.03, 0.05];
        ch.err_var_cu = vec![0.02, 0.01];

        let mut prec = PrecoderSet::zeros(n_s, n_s, 3, 2);
        prec.w_spc = DVector::from_vec(vals(7, n_s));
        prec.w_sc = DVector::from_vec(vals(8, n_s));
        prec.w_private = vec![DVector::from_vec(vals(9, n_s)), DVector::from_vec(vals(10, n_s))];
        prec.p_c = DVector::from_vec(vals(11, 3));
        prec.p_private = vec![DVector::from_vec(vals(12, 3)), DVector::from_vec(vals(13, 3))];

        let su_beam = [0usize, 1usize];
        let model = full_model();
        let t = sinr_all(&ch, &su_beam, &prec, &model, ChannelView::Estimate).unwrap();

        // oracle: plain scalar arithmetic
        let ip = |col: &[Complex64], v: &DVector<Complex64>| -> Complex64 {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..col.len() {
                acc += col[i].conj() * v[i];
            }
            acc
        };
        for k in 0..2 {
            let f: Vec<Complex64> = (0..n_s).map(|n| ch.f_hat[(n, k)]).collect();
            let priv_norms = prec.w_private[0].norm_squared() + prec.w_private[1].norm_squared();
            // decoded streams are cancelled with receiver CSI, so each SIC
            // stage only carries the error power of the streams still in the air
            let mut g = 1.0 + ch.err_var_su[k] * priv_norms;
            for i in 0..2 {
                g += ip(&f, &prec.w_private[i]).norm_sqr();
            }
            let own = ip(&f, &prec.w_private[su_beam[k]]).norm_sqr();
            let sc = ip(&f, &prec.w_sc).norm_sqr();
            let spc = ip(&f, &prec.w_spc).norm_sqr();
            let err_sc = ch.err_var_su[k] * prec.w_sc.norm_squared();
            let err_spc = err_sc + ch.err_var_su[k] * prec.w_spc.norm_squared();
            assert_relative_eq!(t.spc_su[k], spc / (sc + g + err_spc), epsilon = 1e-12);
            assert_relative_eq!(t.sc_su[k], sc / (g + err_sc), epsilon = 1e-12);
            assert_relative_eq!(t.private_su[k], own / (g - own), epsilon = 1e-12);
        }
        for k in 0..2 {
            let h: Vec<Complex64> = (0..3).map(|n| ch.h[(n, k)]).collect();
            let z: Vec<Complex64> = (0..n_s).map(|n| ch.z_hat[(n, k)]).collect();
            let undecoded = prec.w_sc.norm_squared()
                + prec.w_private[0].norm_squared()
                + prec.w_private[1].norm_squared();
            let mut l = 1.0 + ch.err_var_cu[k] * undecoded + ip(&z, &prec.w_sc).norm_sqr();
            for j in 0..2 {
                l += ip(&h, &prec.p_private[j]).norm_sqr();
            }
            for i in 0..2 {
                l += ip(&z, &prec.w_private[i]).norm_sqr();
            }
            let own = ip(&h, &prec.p_private[k]).norm_sqr();
            let c = ip(&h, &prec.p_c).norm_sqr();
            let spc = ip(&z, &prec.w_spc).norm_sqr();
            let err_spc = ch.err_var_cu[k] * prec.w_spc.norm_squared();
            assert_relative_eq!(t.spc_cu[k], spc / (c + l + err_spc), epsilon = 1e-12);
            assert_relative_eq!(t.c_cu[k], c / l, epsilon = 1e-12);
            assert_relative_eq!(t.private_cu[k], own / (l - own), epsilon = 1e-12);
        }
    }

    #[test]
    fn aggregate_zero_alloc_reduces_to_private_minima() {
        let mut ch = toy_channel(2, 2, 2, 1);
        ch.f_hat[(0, 0)] = Complex64::new(1.0, 0.0);
        ch.f_hat[(1, 1)] = Complex64::new(0.5, 0.0);
        ch.h[(0, 0)] = Complex64::new(1.0, 0.0);
        let mut prec = PrecoderSet::zeros(2, 2, 2, 1);
        prec.w_private[0][0] = Complex64::new(2.0, 0.0);
        prec.w_private[1][1] = Complex64::new(2.0, 0.0);
        prec.p_private[0][0] = Complex64::new(1.0, 0.0);
        let model = full_model();
        let su_beam = [0, 1];
        let rep = evaluate(&ch, &su_beam, &prec, &RateAllocation::zeros(2, 1), &model, ChannelView::Estimate)
            .unwrap();
        assert_relative_eq!(rep.beam_totals[0], rep.su_private_rates[0], epsilon = 1e-12);
        assert_relative_eq!(rep.beam_totals[1], rep.su_private_rates[1], epsilon = 1e-12);
        assert_relative_eq!(rep.cu_totals[0], rep.cu_private_rates[0], epsilon = 1e-12);
        assert!(rep.mmf <= rep.beam_totals[1] && rep.mmf <= rep.cu_totals[0]);
    }

    #[test]
    fn spc_rate_is_min_over_all_users() {
        let mut ch = toy_channel(2, 2, 2, 1);
        ch.f_hat[(0, 0)] = Complex64::new(1.0, 0.0);
        ch.f_hat[(0, 1)] = Complex64::new(0.2, 0.0); // strictly weakest spc user
        ch.z_hat[(0, 0)] = Complex64::new(0.8, 0.0);
        ch.h[(0, 0)] = Complex64::new(1.0, 0.0);
        let mut prec = PrecoderSet::zeros(2, 2, 2, 1);
        prec.w_spc[0] = Complex64::new(1.0, 0.0);
        let model = full_model();
        let su_beam = [0, 1];
        let t = sinr_all(&ch, &su_beam, &prec, &model, ChannelView::Estimate).unwrap();
        let rep = aggregate(&t, &RateAllocation::zeros(2, 1), &su_beam, &model);
        let brute = t
            .spc_su
            .iter()
            .chain(t.spc_cu.iter())
            .map(|&g| (1.0 + g).log2())
            .fold(f64::INFINITY, f64::min);
        assert_relative_eq!(rep.r_spc, brute, epsilon = 1e-15);
        assert_relative_eq!(rep.r_spc, (1.0 + t.spc_su[1]).log2(), epsilon = 1e-15);
    }

    #[test]
    fn true_view_equals_estimate_view_without_errors() {
        let cfg = ScenarioConfig::default();
        let (geom, ch) = crate::channel::realize_trial(&cfg, 1).unwrap();
        let mut prec = PrecoderSet::zeros(3, 3, 16, 3);
        for i in 0..3 {
            prec.w_private[i][i] = Complex64::new(2.0, 0.5);
            prec.p_private[i][i] = Complex64::new(0.4, -0.1);
        }
        prec.w_spc[0] = Complex64::new(1.0, 1.0);
        prec.p_c[1] = Complex64::new(0.3, 0.0);
        let model = full_model();
        let a = sinr_all(&ch, &geom.su_beam, &prec, &model, ChannelView::Estimate).unwrap();
        let b = sinr_all(&ch, &geom.su_beam, &prec, &model, ChannelView::True).unwrap();
        for (x, y) in a.private_su.iter().zip(&b.private_su) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
        for (x, y) in a.spc_cu.iter().zip(&b.spc_cu) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    proptest! {
        // scaling any interfering precoder up never increases a victim's SINR
        #[test]
        fn interference_scaling_monotonicity(scale in 1.0f64..5.0, seed in 0u64..50) {
            let cfg = ScenarioConfig { rng_seed: seed, ..Default::default() };
            let (geom, ch) = crate::channel::realize_trial(&cfg, 0).unwrap();
            let mut prec = PrecoderSet::zeros(3, 3, 16, 3);
            for i in 0..3 {
                prec.w_private[i] = ch.f_hat.column(2 * i).into_owned() * Complex64::new(1e-3, 0.0);
                prec.p_private[i] = ch.h.column(i).into_owned() * Complex64::new(0.1, 0.0);
            }
            let model = full_model();
            let before = sinr_all(&ch, &geom.su_beam, &prec, &model, ChannelView::Estimate).unwrap();
            let mut scaled = prec.clone();
            scaled.w_private[1] *= Complex64::new(scale, 0.0);
            let after = sinr_all(&ch, &geom.su_beam, &scaled, &model, ChannelView::Estimate).unwrap();
            // victims: SUs of other beams and all CUs
            for k in 0..6 {
                if geom.su_beam[k] != 1 {
                    prop_assert!(after.private_su[k] <= before.private_su[k] * (1.0 + 1e-12));
                }
            }
            for k in 0..3 {
                prop_assert!(after.private_cu[k] <= before.private_cu[k] * (1.0 + 1e-12));
            }
        }
    }
}
