//! Scenario configuration and network geometry.
//!
//! Owns every physical/system constant, the beam lattice, user drops and the
//! user-to-beam mapping. All randomness is seeded through the config so a
//! scenario regenerates bit-identically.
//!
//! Geometry uses a flat-Earth local tangent plane: at footprint scales of tens
//! of kilometres against altitudes of 300 km and above, Earth curvature is
//! negligible and the slant angle/distance formulas stay closed-form.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Ground coordinate on the local tangent plane, metres.
pub type GroundPos = [f64; 2];

/// All scenario constants. Field defaults follow the reference system
/// parameters (Ka band, 3-feed satellite, 16-antenna BS).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Carrier frequency f_c, Hz.
    pub carrier_frequency_hz: f64,
    /// Bandwidth B_w, Hz.
    pub bandwidth_hz: f64,
    /// 3 dB loss angle of a beam, radians.
    pub theta_3db_rad: f64,
    /// Maximum beam gain at each beam center, dBi.
    pub g_max_db: f64,
    /// Satellite-user terminal receive gain G_R, dBi.
    pub g_rx_db: f64,
    /// Back-off applied to G_R for the cellular users' receive gain toward the
    /// satellite, dB. The CU terminal is not a satellite dish; this knob sets
    /// how far below G_R its effective gain sits and thereby the level of
    /// satellite-to-cellular interference.
    pub cu_rx_backoff_db: f64,
    /// Rain attenuation log-normal mean, dB.
    pub rain_mu_db: f64,
    /// Rain attenuation log-normal standard deviation, dB.
    pub rain_sigma_db: f64,
    /// Number of satellite antenna feeds / beams N_s.
    pub n_sat_feeds: usize,
    /// Satellite users per beam, rho.
    pub users_per_beam: usize,
    /// BS antenna count N_t.
    pub n_bs_antennas: usize,
    /// Cellular user count K_t.
    pub n_cus: usize,
    /// Satellite power budget P_s, watts.
    pub p_sat_watt: f64,
    /// BS power budget P_t, watts (sweep variable).
    pub p_bs_watt: f64,
    /// Satellite altitude h_sat, metres (sweep variable).
    pub sat_altitude_m: f64,
    /// Satellite CSIT error level sigma_e^2, relative to the per-element mean
    /// channel power of each user (normalized mean-square error). Zero means
    /// perfect CSIT.
    pub csit_error_var: f64,
    /// Boltzmann constant, J/K.
    pub boltzmann: f64,
    /// Receiving system noise temperature T_sys, kelvin.
    pub system_noise_temp_k: f64,
    /// BS offset from the beam-1 center, in units of the beam 3 dB footprint
    /// radius. Scaling with the footprint keeps the BS/beam relative geometry
    /// (and hence the sidelobe level toward the CUs) identical across
    /// altitudes.
    pub bs_offset_footprints: f64,
    /// Radius of the disc around the BS within which CUs are dropped, metres.
    pub cu_disc_radius_m: f64,
    /// Reject CU drops that land inside any beam's 3 dB footprint.
    pub enforce_cu_outside_footprints: bool,
    /// Master RNG seed.
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            carrier_frequency_hz: 28e9,
            bandwidth_hz: 500e6,
            theta_3db_rad: 0.4_f64.to_radians(),
            g_max_db: 52.0,
            g_rx_db: 7.0,
            cu_rx_backoff_db: 0.0,
            rain_mu_db: -3.125,
            rain_sigma_db: 1.591,
            n_sat_feeds: 3,
            users_per_beam: 2,
            n_bs_antennas: 16,
            n_cus: 3,
            p_sat_watt: 50.0,
            p_bs_watt: 1.0,
            sat_altitude_m: 500e3,
            csit_error_var: 0.0,
            boltzmann: BOLTZMANN,
            system_noise_temp_k: 517.0,
            bs_offset_footprints: 1.5,
            cu_disc_radius_m: 500.0,
            enforce_cu_outside_footprints: true,
            rng_seed: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("could not place SU outside the BS service disc after {0} redraws")]
    SuPlacement(usize),
    #[error("could not place CU outside all beam footprints after {0} redraws")]
    CuPlacement(usize),
    #[error("failed to read configuration: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse configuration: {0}")]
    Parse(#[from] toml::de::Error),
}

impl ScenarioConfig {
    /// Total number of satellite users K_s = rho * N_s.
    pub fn n_sus(&self) -> usize {
        self.users_per_beam * self.n_sat_feeds
    }

    /// Carrier wavelength lambda = c / f_c, metres.
    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency_hz
    }

    /// Per-feed satellite power cap P_s / N_s, watts.
    pub fn per_feed_power(&self) -> f64 {
        self.p_sat_watt / self.n_sat_feeds as f64
    }

    /// BS power budget in dBm.
    pub fn p_bs_dbm(&self) -> f64 {
        10.0 * (self.p_bs_watt * 1e3).log10()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let err = |m: &str| Err(ScenarioError::InvalidConfig(m.to_string()));
        if self.n_sat_feeds < 1 || self.users_per_beam < 1 || self.n_bs_antennas < 1 || self.n_cus < 1 {
            return err("all counts must be >= 1");
        }
        if self.n_cus > self.n_bs_antennas {
            return err("K_t must not exceed N_t");
        }
        if !(self.theta_3db_rad > 0.0) {
            return err("theta_3db_rad must be positive");
        }
        for (name, v) in [
            ("carrier_frequency_hz", self.carrier_frequency_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("p_sat_watt", self.p_sat_watt),
            ("p_bs_watt", self.p_bs_watt),
            ("sat_altitude_m", self.sat_altitude_m),
            ("system_noise_temp_k", self.system_noise_temp_k),
            ("boltzmann", self.boltzmann),
        ] {
            if !(v > 0.0) {
                return err(&format!("{name} must be positive"));
            }
        }
        if self.csit_error_var < 0.0 || self.rain_sigma_db < 0.0 || self.cu_disc_radius_m < 0.0 {
            return err("variances and radii must be non-negative");
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ScenarioError> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Beam centers, user drops and the user-to-beam mapping for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub beam_centers: Vec<GroundPos>,
    pub su_positions: Vec<GroundPos>,
    /// `su_beam[k]` is the beam serving SU k (the mapping mu).
    pub su_beam: Vec<usize>,
    pub cu_positions: Vec<GroundPos>,
    pub bs_position: GroundPos,
    pub sat_nadir: GroundPos,
    pub sat_altitude_m: f64,
}

impl Geometry {
    /// Indices of the SUs served by `beam`.
    pub fn beam_members(&self, beam: usize) -> Vec<usize> {
        (0..self.su_beam.len()).filter(|&k| self.su_beam[k] == beam).collect()
    }

    /// 3 dB footprint radius on the ground, metres.
    pub fn footprint_radius(&self, theta_3db_rad: f64) -> f64 {
        self.sat_altitude_m * theta_3db_rad.tan()
    }
}

/// Slant angles and distances from the satellite to a set of ground users.
#[derive(Debug, Clone)]
pub struct SlantGeometry {
    /// `angles[k][n]` is the angle at the satellite between the ray to beam
    /// n's center and the ray to user k, radians.
    pub angles: Vec<Vec<f64>>,
    /// Euclidean satellite-to-user distance, metres.
    pub distances: Vec<f64>,
}

fn hex_lattice(n: usize) -> Vec<GroundPos> {
    // Unit-spacing triangular lattice walked outward ring by ring.
    let mut pts: Vec<GroundPos> = vec![[0.0, 0.0]];
    let mut ring = 1usize;
    while pts.len() < n {
        // six ring corners, then interpolate along the edges
        let corners: Vec<GroundPos> = (0..6)
            .map(|i| {
                let ang = std::f64::consts::FRAC_PI_3 * i as f64;
                [ring as f64 * ang.cos(), ring as f64 * ang.sin()]
            })
            .collect();
        for i in 0..6 {
            let a = corners[i];
            let b = corners[(i + 1) % 6];
            for step in 0..ring {
                let t = step as f64 / ring as f64;
                pts.push([a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]);
                if pts.len() == n {
                    return pts;
                }
            }
        }
        ring += 1;
    }
    pts
}

fn uniform_in_disc(center: GroundPos, radius: f64, rng: &mut impl Rng) -> GroundPos {
    let r = radius * rng.random::<f64>().sqrt();
    let phi = rng.random::<f64>() * std::f64::consts::TAU;
    [center[0] + r * phi.cos(), center[1] + r * phi.sin()]
}

fn dist2(a: GroundPos, b: GroundPos) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Deterministic RNG for a named sub-stream of the scenario seed.
pub fn substream_rng(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    // FNV-1a over the label keeps sub-streams decorrelated without any
    // coordination between callers.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

const MAX_REDRAWS: usize = 200;

/// Build beam centers on a triangular lattice (inter-center angular spacing
/// 2*theta_3dB as seen from the satellite), drop SUs uniformly in their beam's
/// 3 dB footprint and CUs uniformly in a disc around the BS.
pub fn build_geometry(cfg: &ScenarioConfig) -> Result<Geometry, ScenarioError> {
    cfg.validate()?;
    let mut rng = substream_rng(cfg.rng_seed, "geometry", 0);

    let h = cfg.sat_altitude_m;
    let spacing = h * (2.0 * cfg.theta_3db_rad).tan();
    let footprint = h * cfg.theta_3db_rad.tan();

    let raw = hex_lattice(cfg.n_sat_feeds);
    let cx = raw.iter().map(|p| p[0]).sum::<f64>() / raw.len() as f64;
    let cy = raw.iter().map(|p| p[1]).sum::<f64>() / raw.len() as f64;
    // satellite nadir at the lattice centroid = origin
    let beam_centers: Vec<GroundPos> = raw
        .iter()
        .map(|p| [(p[0] - cx) * spacing, (p[1] - cy) * spacing])
        .collect();

    // BS offset from beam 1, pointing away from the lattice centroid so the
    // cellular cell sits outside the beam footprints.
    let b0 = beam_centers[0];
    let norm = (b0[0] * b0[0] + b0[1] * b0[1]).sqrt();
    let dir = if norm > 1e-9 { [b0[0] / norm, b0[1] / norm] } else { [1.0, 0.0] };
    let off = cfg.bs_offset_footprints * footprint;
    let bs_position = [b0[0] + dir[0] * off, b0[1] + dir[1] * off];

    let service_r2 = cfg.cu_disc_radius_m * cfg.cu_disc_radius_m;
    let mut su_positions = Vec::with_capacity(cfg.n_sus());
    let mut su_beam = Vec::with_capacity(cfg.n_sus());
    for beam in 0..cfg.n_sat_feeds {
        for _ in 0..cfg.users_per_beam {
            let mut placed = None;
            for _ in 0..MAX_REDRAWS {
                let p = uniform_in_disc(beam_centers[beam], footprint, &mut rng);
                if dist2(p, bs_position) > service_r2 {
                    placed = Some(p);
                    break;
                }
            }
            su_positions.push(placed.ok_or(ScenarioError::SuPlacement(MAX_REDRAWS))?);
            su_beam.push(beam);
        }
    }

    let mut cu_positions = Vec::with_capacity(cfg.n_cus);
    for _ in 0..cfg.n_cus {
        let mut placed = None;
        for _ in 0..MAX_REDRAWS {
            let p = uniform_in_disc(bs_position, cfg.cu_disc_radius_m, &mut rng);
            let inside_beam = beam_centers.iter().any(|&c| dist2(p, c) < footprint * footprint);
            if !cfg.enforce_cu_outside_footprints || !inside_beam {
                placed = Some(p);
                break;
            }
        }
        cu_positions.push(placed.ok_or(ScenarioError::CuPlacement(MAX_REDRAWS))?);
    }

    Ok(Geometry {
        beam_centers,
        su_positions,
        su_beam,
        cu_positions,
        bs_position,
        sat_nadir: [0.0, 0.0],
        sat_altitude_m: h,
    })
}

/// Angles theta_{k,n} between the beam-center rays and the user ray, plus the
/// satellite-to-user distances, for an arbitrary set of ground positions.
pub fn slant_angles_and_distances(positions: &[GroundPos], geom: &Geometry) -> SlantGeometry {
    let sat = [geom.sat_nadir[0], geom.sat_nadir[1], geom.sat_altitude_m];
    let ray = |p: GroundPos| [p[0] - sat[0], p[1] - sat[1], -sat[2]];
    let center_rays: Vec<[f64; 3]> = geom.beam_centers.iter().map(|&c| ray(c)).collect();

    let mut angles = Vec::with_capacity(positions.len());
    let mut distances = Vec::with_capacity(positions.len());
    for &p in positions {
        let u = ray(p);
        let un = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        distances.push(un);
        angles.push(
            center_rays
                .iter()
                .map(|c| {
                    let cn = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
                    let cosang = (u[0] * c[0] + u[1] * c[1] + u[2] * c[2]) / (un * cn);
                    cosang.clamp(-1.0, 1.0).acos()
                })
                .collect(),
        );
    }
    SlantGeometry { angles, distances }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn su_counts_and_mapping() {
        let cfg = ScenarioConfig::default();
        let geom = build_geometry(&cfg).unwrap();
        assert_eq!(geom.su_positions.len(), 6);
        for beam in 0..3 {
            assert_eq!(geom.beam_members(beam).len(), 2);
        }
        // SU sets of distinct beams are disjoint by construction of su_beam
        let mut seen = vec![false; 6];
        for beam in 0..3 {
            for k in geom.beam_members(beam) {
                assert!(!seen[k]);
                seen[k] = true;
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = ScenarioConfig::default();
        let a = build_geometry(&cfg).unwrap();
        let b = build_geometry(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_cu_radius_collapses_to_bs() {
        let cfg = ScenarioConfig { cu_disc_radius_m: 0.0, ..Default::default() };
        let geom = build_geometry(&cfg).unwrap();
        for p in &geom.cu_positions {
            assert_relative_eq!(p[0], geom.bs_position[0], epsilon = 1e-9);
            assert_relative_eq!(p[1], geom.bs_position[1], epsilon = 1e-9);
        }
    }

    #[test]
    fn slant_angle_zero_at_beam_center() {
        let cfg = ScenarioConfig::default();
        let geom = build_geometry(&cfg).unwrap();
        let s = slant_angles_and_distances(&[geom.beam_centers[1]], &geom);
        // acos is ill-conditioned near 1, so allow a few nanoradians
        assert!(s.angles[0][1].abs() < 1e-6);
    }

    #[test]
    fn nadir_distance_is_altitude() {
        let cfg = ScenarioConfig { sat_altitude_m: 500e3, ..Default::default() };
        let geom = build_geometry(&cfg).unwrap();
        let s = slant_angles_and_distances(&[geom.sat_nadir], &geom);
        assert_relative_eq!(s.distances[0], 500e3, epsilon = 1e-6);
    }

    #[test]
    fn offset_distance_is_pythagorean() {
        let cfg = ScenarioConfig { sat_altitude_m: 300e3, ..Default::default() };
        let geom = build_geometry(&cfg).unwrap();
        let r = 40e3;
        let s = slant_angles_and_distances(&[[r, 0.0]], &geom);
        assert_relative_eq!(s.distances[0], (300e3f64.powi(2) + r * r).sqrt(), epsilon = 1e-6);
    }

    #[test]
    fn distances_bounded_below_by_altitude() {
        let cfg = ScenarioConfig::default();
        let geom = build_geometry(&cfg).unwrap();
        let all: Vec<GroundPos> =
            geom.su_positions.iter().chain(geom.cu_positions.iter()).copied().collect();
        let s = slant_angles_and_distances(&all, &geom);
        for (d, angs) in s.distances.iter().zip(&s.angles) {
            assert!(*d >= cfg.sat_altitude_m);
            assert!(angs.iter().all(|&a| a >= 0.0));
        }
    }

    #[test]
    fn rejects_bad_counts() {
        let cfg = ScenarioConfig { n_cus: 20, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(ScenarioError::InvalidConfig(_))));
    }

    #[test]
    fn toml_roundtrip_with_overrides() {
        let cfg = ScenarioConfig::from_toml_str(
            "sat_altitude_m = 300e3\np_bs_watt = 10.0\nrng_seed = 7\n",
        )
        .unwrap();
        assert_eq!(cfg.sat_altitude_m, 300e3);
        assert_eq!(cfg.rng_seed, 7);
        assert_eq!(cfg.n_sat_feeds, 3); // defaults fill the rest
    }
}
