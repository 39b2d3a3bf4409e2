//! Channel synthesis: satellite links with Bessel beam pattern, log-normal
//! rain fading and uniform phase; satellite-to-cellular interference links;
//! Rayleigh terrestrial links; Gaussian CSIT errors.
//!
//! Amplitudes are normalized by sqrt(kappa * T_sys * B_w), so every receiver's
//! noise variance downstream is exactly one.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scenario::{
    build_geometry, slant_angles_and_distances, Geometry, ScenarioConfig, ScenarioError,
    SlantGeometry,
};

/// Bessel function of the first kind J1 by its ascending power series.
///
/// The in-footprint argument range is u <= ~10 where the series converges
/// quickly; terms are added until they stop contributing at f64 precision.
pub fn bessel_j1(x: f64) -> f64 {
    bessel_jn_series(1, x)
}

/// Bessel function of the first kind J3 by its ascending power series.
pub fn bessel_j3(x: f64) -> f64 {
    bessel_jn_series(3, x)
}

fn bessel_jn_series(n: u32, x: f64) -> f64 {
    let t = x / 2.0;
    let t2 = t * t;
    // first term: t^n / n!
    let mut term = t.powi(n as i32) / (1..=n as u64).product::<u64>() as f64;
    let mut sum = term;
    for m in 1..60u64 {
        term *= -t2 / (m as f64 * (m + n as u64) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// Beam radiation pattern gain (linear scale) at off-axis angle `theta_rad`.
///
/// G = G_max * [J1(u)/(2u) + 36 J3(u)/u^3]^2 with
/// u = 2.07123 sin(theta)/sin(theta_3dB). The u -> 0 limit is handled by the
/// series limits J1(u)/(2u) -> 1/4 and J3(u)/u^3 -> 1/48, which make the
/// bracket equal to one at the beam center.
pub fn beam_gain(theta_rad: f64, cfg: &ScenarioConfig) -> f64 {
    let g_max = 10f64.powf(cfg.g_max_db / 10.0);
    let u = 2.07123 * theta_rad.sin() / cfg.theta_3db_rad.sin();
    let pattern = if u.abs() < 1e-5 {
        0.25 + 36.0 / 48.0
    } else {
        bessel_j1(u) / (2.0 * u) + 36.0 * bessel_j3(u) / u.powi(3)
    };
    g_max * pattern * pattern
}

/// Which side of the network a satellite channel vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UserKind {
    /// Satellite user: full terminal gain G_R.
    Su,
    /// Cellular user: G_R backed off by `cu_rx_backoff_db`.
    Cu,
}

/// Deterministic free-space amplitude of one satellite channel element:
/// sqrt(G_rx * G(theta)) / (4 pi d / lambda * sqrt(kappa T_sys B_w)).
pub fn freespace_amplitude(theta_rad: f64, distance_m: f64, kind: UserKind, cfg: &ScenarioConfig) -> f64 {
    let backoff = match kind {
        UserKind::Su => 0.0,
        UserKind::Cu => cfg.cu_rx_backoff_db,
    };
    let g_rx = 10f64.powf((cfg.g_rx_db - backoff) / 10.0);
    let g_beam = beam_gain(theta_rad, cfg);
    let noise = (cfg.boltzmann * cfg.system_noise_temp_k * cfg.bandwidth_hz).sqrt();
    (g_rx * g_beam).sqrt() / (4.0 * std::f64::consts::PI * (distance_m / cfg.wavelength_m()) * noise)
}

/// One user's satellite channel estimate: element n is b_{k,n} * q_{k,n} with
/// rain gain chi^{-1/2} (chi_dB ~ Normal(mu, sigma^2)) and an independent
/// uniform phase, both drawn per (user, feed).
pub fn build_satellite_vector(
    angles: &[f64],
    distance_m: f64,
    kind: UserKind,
    cfg: &ScenarioConfig,
    rng: &mut impl Rng,
) -> DVector<Complex64> {
    DVector::from_iterator(
        angles.len(),
        angles.iter().map(|&theta| {
            let amp = freespace_amplitude(theta, distance_m, kind, cfg);
            let std_normal: f64 = StandardNormal.sample(rng);
            let chi_db = cfg.rain_mu_db + cfg.rain_sigma_db * std_normal;
            let rain = 10f64.powf(-chi_db / 20.0);
            let phase: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            Complex64::from_polar(amp * rain, -phase)
        }),
    )
}

/// Terrestrial Rayleigh channel: i.i.d. circularly-symmetric complex Gaussian
/// entries with unit variance. Pathloss is folded into the unit variance, so
/// the BS power budget directly sets the cellular SNR.
pub fn build_terrestrial_matrix(cfg: &ScenarioConfig, rng: &mut impl Rng) -> DMatrix<Complex64> {
    let scale = 0.5f64.sqrt();
    DMatrix::from_fn(cfg.n_bs_antennas, cfg.n_cus, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re * scale, im * scale)
    })
}

/// i.i.d. complex Gaussian error vector with per-element variance `sigma_e2`.
pub fn draw_csit_error(dim: usize, sigma_e2: f64, rng: &mut impl Rng) -> DVector<Complex64> {
    let scale = (sigma_e2 / 2.0).sqrt();
    DVector::from_fn(dim, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re * scale, im * scale)
    })
}

/// Estimated and true channel matrices for one Monte Carlo trial.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    /// Satellite channel estimate F_hat, N_s x K_s.
    pub f_hat: DMatrix<Complex64>,
    /// Satellite-to-CU interference estimate Z_hat, N_s x K_t.
    pub z_hat: DMatrix<Complex64>,
    /// Terrestrial channel H, N_t x K_t, assumed perfectly known.
    pub h: DMatrix<Complex64>,
    /// Estimate plus drawn error, for evaluation only.
    pub f_true: DMatrix<Complex64>,
    /// Estimate plus drawn error, for evaluation only.
    pub z_true: DMatrix<Complex64>,
    /// Absolute per-element error variance for each SU channel.
    pub err_var_su: Vec<f64>,
    /// Absolute per-element error variance for each CU interference channel.
    pub err_var_cu: Vec<f64>,
    /// The configured relative error level sigma_e^2.
    pub csit_error_var: f64,
}

impl ChannelRealization {
    pub fn n_feeds(&self) -> usize {
        self.f_hat.nrows()
    }
    pub fn n_sus(&self) -> usize {
        self.f_hat.ncols()
    }
    pub fn n_cus(&self) -> usize {
        self.z_hat.ncols()
    }

    /// Write all matrices as self-describing text (name, dims, then row-major
    /// "re im" pairs), for regression comparisons.
    pub fn dump_text(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        for (name, m) in [
            ("f_hat", &self.f_hat),
            ("z_hat", &self.z_hat),
            ("h", &self.h),
            ("f_true", &self.f_true),
            ("z_true", &self.z_true),
        ] {
            writeln!(w, "{} {} {}", name, m.nrows(), m.ncols())?;
            for r in 0..m.nrows() {
                let row: Vec<String> =
                    (0..m.ncols()).map(|c| format!("{:.17e} {:.17e}", m[(r, c)].re, m[(r, c)].im)).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
        }
        Ok(())
    }
}

/// Synthesize the full channel realization for a scenario.
///
/// The CSIT error level is interpreted relative to each user's mean per-element
/// channel power: the absolute per-element error variance for user k is
/// sigma_e^2 * ||f_hat_k||^2 / N_s, so one error level means the same estimate
/// quality across altitudes and link geometries.
pub fn build_realization(
    cfg: &ScenarioConfig,
    geom: &Geometry,
    rng: &mut impl Rng,
) -> ChannelRealization {
    let n_s = cfg.n_sat_feeds;
    let su_slant: SlantGeometry = slant_angles_and_distances(&geom.su_positions, geom);
    let cu_slant: SlantGeometry = slant_angles_and_distances(&geom.cu_positions, geom);

    let mut f_hat = DMatrix::zeros(n_s, cfg.n_sus());
    for k in 0..cfg.n_sus() {
        f_hat.set_column(
            k,
            &build_satellite_vector(&su_slant.angles[k], su_slant.distances[k], UserKind::Su, cfg, rng),
        );
    }
    let mut z_hat = DMatrix::zeros(n_s, cfg.n_cus);
    for k in 0..cfg.n_cus {
        z_hat.set_column(
            k,
            &build_satellite_vector(&cu_slant.angles[k], cu_slant.distances[k], UserKind::Cu, cfg, rng),
        );
    }
    let h = build_terrestrial_matrix(cfg, rng);

    let err_var_su: Vec<f64> = (0..cfg.n_sus())
        .map(|k| cfg.csit_error_var * f_hat.column(k).norm_squared() / n_s as f64)
        .collect();
    let err_var_cu: Vec<f64> = (0..cfg.n_cus)
        .map(|k| cfg.csit_error_var * z_hat.column(k).norm_squared() / n_s as f64)
        .collect();

    let mut f_true = f_hat.clone();
    for k in 0..cfg.n_sus() {
        let e = draw_csit_error(n_s, err_var_su[k], rng);
        f_true.set_column(k, &(f_hat.column(k) + e));
    }
    let mut z_true = z_hat.clone();
    for k in 0..cfg.n_cus {
        let e = draw_csit_error(n_s, err_var_cu[k], rng);
        z_true.set_column(k, &(z_hat.column(k) + e));
    }

    ChannelRealization {
        f_hat,
        z_hat,
        h,
        f_true,
        z_true,
        err_var_su,
        err_var_cu,
        csit_error_var: cfg.csit_error_var,
    }
}

/// Geometry plus channel draw for one (scenario, trial) pair. Each trial owns
/// a child RNG derived from the scenario seed and the trial index, so trials
/// are independent and parallelize without coordination.
pub fn realize_trial(cfg: &ScenarioConfig, trial: u64) -> Result<(Geometry, ChannelRealization), ScenarioError> {
    let geom = build_geometry(cfg)?;
    let mut rng = crate::scenario::substream_rng(cfg.rng_seed, "channel-trial", trial);
    let ch = build_realization(cfg, &geom, &mut rng);
    Ok((geom, ch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::substream_rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Independent oracle: J_n(x) = (1/pi) * Int_0^pi cos(n tau - x sin tau) dtau,
    /// evaluated by Simpson's rule. Deliberately a different route than the
    /// power series used by the implementation.
    fn bessel_jn_quadrature(n: u32, x: f64) -> f64 {
        let steps = 20_000;
        let h = std::f64::consts::PI / steps as f64;
        let f = |tau: f64| (n as f64 * tau - x * tau.sin()).cos();
        let mut acc = f(0.0) + f(std::f64::consts::PI);
        for i in 1..steps {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(i as f64 * h);
        }
        acc * h / (3.0 * std::f64::consts::PI)
    }

    #[test]
    fn bessel_series_matches_quadrature_oracle() {
        for &x in &[0.1, 0.5, 1.0, 2.07123, 3.3, 4.9, 7.0, 10.0] {
            assert_relative_eq!(bessel_j1(x), bessel_jn_quadrature(1, x), epsilon = 1e-10);
            assert_relative_eq!(bessel_j3(x), bessel_jn_quadrature(3, x), epsilon = 1e-10);
        }
    }

    #[test]
    fn beam_gain_at_center_is_g_max() {
        let cfg = ScenarioConfig::default();
        assert_relative_eq!(beam_gain(0.0, &cfg), 10f64.powf(5.2), epsilon = 1e-9);
    }

    #[test]
    fn beam_gain_at_theta_3db_is_half_power() {
        // Frozen from the quadrature oracle at u = 2.07123:
        // J1 = 0.5711229727, J3 = 0.1404961130, bracket^2 = 0.5000002...
        let cfg = ScenarioConfig::default();
        let ratio = beam_gain(cfg.theta_3db_rad, &cfg) / 10f64.powf(cfg.g_max_db / 10.0);
        let db = 10.0 * ratio.log10();
        assert!((db + 3.0103).abs() < 0.2, "pattern at theta_3dB is {db} dB");
        assert_relative_eq!(ratio, 0.5, epsilon = 1e-4);
    }

    #[test]
    fn beam_gain_depends_only_on_angle_ratio() {
        let cfg = ScenarioConfig::default();
        let wide = ScenarioConfig { theta_3db_rad: 2.0 * cfg.theta_3db_rad, ..cfg.clone() };
        assert_relative_eq!(
            beam_gain(cfg.theta_3db_rad, &cfg),
            beam_gain(wide.theta_3db_rad, &wide),
            epsilon = 1e-9
        );
    }

    #[test]
    fn degenerate_rain_gives_pure_freespace_magnitude() {
        let cfg = ScenarioConfig { rain_mu_db: 0.0, rain_sigma_db: 0.0, ..Default::default() };
        let mut rng = substream_rng(3, "t", 0);
        let angles = [0.0, 0.01, 0.02];
        let v = build_satellite_vector(&angles, 500e3, UserKind::Su, &cfg, &mut rng);
        for (n, &theta) in angles.iter().enumerate() {
            // phase is random but |element| must equal the free-space amplitude
            assert_relative_eq!(v[n].norm(), freespace_amplitude(theta, 500e3, UserKind::Su, &cfg), epsilon = 1e-12);
        }
    }

    #[test]
    fn doubling_distance_halves_amplitude() {
        let cfg = ScenarioConfig::default();
        let a1 = freespace_amplitude(0.002, 400e3, UserKind::Su, &cfg);
        let a2 = freespace_amplitude(0.002, 800e3, UserKind::Su, &cfg);
        assert_relative_eq!(a1, 2.0 * a2, epsilon = 1e-12);
    }

    #[test]
    fn rayleigh_mean_power_near_unity() {
        let cfg = ScenarioConfig { n_bs_antennas: 500, n_cus: 200, ..Default::default() };
        let mut rng = substream_rng(11, "t", 0);
        let h = build_terrestrial_matrix(&cfg, &mut rng);
        let mean_power = h.iter().map(|c| c.norm_sqr()).sum::<f64>() / (500.0 * 200.0);
        assert!((0.99..=1.01).contains(&mean_power), "mean power {mean_power}");
    }

    #[test]
    fn rayleigh_columns_uncorrelated() {
        let cfg = ScenarioConfig { n_bs_antennas: 4000, n_cus: 2, ..Default::default() };
        let mut rng = substream_rng(12, "t", 0);
        let h = build_terrestrial_matrix(&cfg, &mut rng);
        let cross: Complex64 = h.column(0).dotc(&h.column(1));
        assert!(cross.norm() / 4000.0 < 0.05);
    }

    #[test]
    fn csit_error_zero_variance_is_zero_vector() {
        let mut rng = substream_rng(1, "t", 0);
        let e = draw_csit_error(8, 0.0, &mut rng);
        assert!(e.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn csit_error_empirical_variance() {
        let mut rng = substream_rng(5, "t", 0);
        let n = 100_000;
        let sigma2 = 0.37;
        let mut acc = 0.0;
        for _ in 0..n {
            acc += draw_csit_error(1, sigma2, &mut rng)[0].norm_sqr();
        }
        let emp = acc / n as f64;
        assert!((emp / sigma2 - 1.0).abs() < 0.02, "empirical {emp}");
    }

    #[test]
    fn rain_statistics_match_lognormal_parameters() {
        let cfg = ScenarioConfig::default();
        let mut rng = substream_rng(9, "t", 0);
        let n = 100_000;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let v = build_satellite_vector(&[0.0], 500e3, UserKind::Su, &cfg, &mut rng);
            let amp = freespace_amplitude(0.0, 500e3, UserKind::Su, &cfg);
            // invert |element| = amp * 10^(-chi_dB/20)
            let chi_db = -20.0 * (v[0].norm() / amp).log10();
            samples.push(chi_db);
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean / -3.125 - 1.0).abs() < 0.02, "rain mean {mean}");
        assert!((var.sqrt() / 1.591 - 1.0).abs() < 0.02, "rain std {}", var.sqrt());
    }

    #[test]
    fn realization_dimensions_and_zero_error_consistency() {
        let cfg = ScenarioConfig::default();
        let (_, ch) = realize_trial(&cfg, 0).unwrap();
        assert_eq!(ch.f_hat.shape(), (3, 6));
        assert_eq!(ch.z_hat.shape(), (3, 3));
        assert_eq!(ch.h.shape(), (16, 3));
        assert_eq!(ch.f_hat, ch.f_true); // sigma_e^2 = 0
        assert!(ch.f_hat.iter().all(|c| c.norm().is_finite() && c.norm() > 0.0));
    }

    #[test]
    fn same_trial_seed_is_identical() {
        let cfg = ScenarioConfig { csit_error_var: 0.05, ..Default::default() };
        let (_, a) = realize_trial(&cfg, 3).unwrap();
        let (_, b) = realize_trial(&cfg, 3).unwrap();
        assert_eq!(a.f_hat, b.f_hat);
        assert_eq!(a.f_true, b.f_true);
        assert_eq!(a.h, b.h);
    }

    proptest! {
        // main-lobe monotonicity: nonincreasing on [0, theta_3dB]
        #[test]
        fn beam_gain_nonincreasing_in_main_lobe(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let cfg = ScenarioConfig::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let g_lo = beam_gain(lo * cfg.theta_3db_rad, &cfg);
            let g_hi = beam_gain(hi * cfg.theta_3db_rad, &cfg);
            prop_assert!(g_hi <= g_lo * (1.0 + 1e-12));
        }
    }
}
