//! Scenario description, array geometry and random channel generation.
//!
//! All powers inside [`SystemConfig`] are in watts and all angles in radians.
//! The JSON scenario format ([`Scenario`]) carries explicit unit suffixes and
//! is converted on load.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{HrisError, Result};

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn dbm_to_watts(x: f64) -> f64 {
    10f64.powf((x - 30.0) / 10.0)
}

pub fn watts_to_dbm(p: f64) -> f64 {
    10.0 * p.log10() + 30.0
}

pub fn db_to_linear(x: f64) -> f64 {
    10f64.powf(x / 10.0)
}

/// Maps any finite angle to `(0, 2π]`.
pub fn wrap_phase(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t == 0.0 {
        2.0 * PI
    } else {
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pathloss {
    /// Reference gain at `d0` (linear).
    pub k0: f64,
    pub d0: f64,
    pub alpha_ris_cu: f64,
    pub alpha_bs_ris: f64,
    pub alpha_bs_cu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// BS antenna count.
    pub m: usize,
    pub nx: usize,
    pub ny: usize,
    pub p0: f64,
    pub p_ris_max: f64,
    pub xi_ris_max: f64,
    pub sigma2_ris: f64,
    /// Per-CU receiver noise power; its length fixes `K`.
    pub sigma2_cu: Vec<f64>,
    /// Per-CU SINR threshold (linear). Zero disables the constraint.
    pub gamma: Vec<f64>,
    pub beta_max: f64,
    pub wavelength: f64,
    pub dx: f64,
    pub dy: f64,
    pub bs_pos: [f64; 3],
    pub ris_pos: [f64; 3],
    pub cu_pos: Vec<[f64; 3]>,
    /// `(theta, phi)` per target; its length fixes `L`.
    pub target_angles: Vec<(f64, f64)>,
    pub rician_factor: f64,
    pub pathloss: Pathloss,
}

impl SystemConfig {
    /// Element count `N = Nx * Ny`.
    pub fn n(&self) -> usize {
        self.nx * self.ny
    }

    pub fn k(&self) -> usize {
        self.sigma2_cu.len()
    }

    pub fn l(&self) -> usize {
        self.target_angles.len()
    }

    /// Default CU placement: CU `k` (1-based) at `(25, 5k, 1.5)` m.
    pub fn default_cu_positions(k: usize) -> Vec<[f64; 3]> {
        (1..=k).map(|i| [25.0, 5.0 * i as f64, 1.5]).collect()
    }

    /// Evaluation scenario: M = 8, 8 x 8 RIS, two CUs, two targets.
    pub fn reference_default() -> Self {
        let wavelength = SPEED_OF_LIGHT / 3.5e9;
        let deg = PI / 180.0;
        SystemConfig {
            m: 8,
            nx: 8,
            ny: 8,
            p0: 0.3,
            p_ris_max: dbm_to_watts(-3.0),
            xi_ris_max: dbm_to_watts(-10.0),
            sigma2_ris: dbm_to_watts(-70.0),
            sigma2_cu: vec![dbm_to_watts(-80.0); 2],
            gamma: vec![db_to_linear(5.0); 2],
            beta_max: 10.0,
            wavelength,
            dx: wavelength / 2.0,
            dy: wavelength / 2.0,
            bs_pos: [0.0, 0.0, 2.5],
            ris_pos: [20.0, 5.0, 2.5],
            cu_pos: Self::default_cu_positions(2),
            target_angles: vec![(-60.0 * deg, 60.0 * deg), (-30.0 * deg, 30.0 * deg)],
            rician_factor: 0.5,
            pathloss: Pathloss {
                k0: db_to_linear(-30.0),
                d0: 1.0,
                alpha_ris_cu: 2.5,
                alpha_bs_ris: 2.5,
                alpha_bs_cu: 2.2,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(HrisError::InvalidConfig(msg.to_string()));
        if self.m == 0 || self.n() == 0 || self.k() == 0 || self.l() == 0 {
            return bad("M, N, K and L must all be at least 1");
        }
        if self.gamma.len() != self.k() || self.cu_pos.len() != self.k() {
            return bad("sigma2_cu, gamma and cu_pos must have one entry per CU");
        }
        let powers = [self.p0, self.p_ris_max, self.xi_ris_max, self.sigma2_ris];
        if powers.iter().chain(&self.sigma2_cu).any(|&p| !(p > 0.0 && p.is_finite())) {
            return bad("all powers must be positive and finite");
        }
        if self.gamma.iter().any(|&g| !(g >= 0.0 && g.is_finite())) {
            return bad("SINR thresholds must be nonnegative and finite");
        }
        if !(self.beta_max > 1.0 && self.beta_max.is_finite()) {
            return bad("beta_max must exceed 1");
        }
        if !(self.wavelength > 0.0 && self.dx > 0.0 && self.dy > 0.0) {
            return bad("wavelength and element spacings must be positive");
        }
        if !(self.rician_factor >= 0.0 && self.rician_factor.is_finite()) {
            return bad("rician_factor must be nonnegative");
        }
        let pl = &self.pathloss;
        if !(pl.k0 > 0.0 && pl.d0 > 0.0) {
            return bad("pathloss K0 and d0 must be positive");
        }
        let all_pos = self.cu_pos.iter().chain([&self.bs_pos, &self.ris_pos]);
        if all_pos.flatten().any(|v| !v.is_finite()) {
            return bad("positions must be finite");
        }
        if self
            .target_angles
            .iter()
            .any(|&(t, p)| !(t.is_finite() && p.is_finite()))
        {
            return bad("target angles must be finite");
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, used as run provenance.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Pathloss configuration in the scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathlossSpec {
    pub k0_db: f64,
    pub d0_m: f64,
    pub alpha_ris_cu: f64,
    pub alpha_bs_ris: f64,
    pub alpha_bs_cu: f64,
}

/// JSON scenario with unit-suffixed keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub bs_antennas: usize,
    pub ris_nx: usize,
    pub ris_ny: usize,
    pub p0_w: f64,
    pub p_ris_max_dbm: f64,
    pub xi_ris_max_dbm: f64,
    pub sigma2_ris_dbm: f64,
    pub sigma2_cu_dbm: Vec<f64>,
    pub gamma_db: Vec<f64>,
    pub beta_max: f64,
    pub carrier_hz: f64,
    /// Element spacing along both RIS axes, in wavelengths.
    pub spacing_wavelengths: f64,
    pub bs_pos_m: [f64; 3],
    pub ris_pos_m: [f64; 3],
    pub cu_pos_m: Vec<[f64; 3]>,
    /// `[azimuth, elevation]` per target.
    pub targets_deg: Vec<[f64; 2]>,
    pub rician_factor: f64,
    pub pathloss: PathlossSpec,
}

impl Scenario {
    pub fn reference_default() -> Self {
        Scenario {
            bs_antennas: 8,
            ris_nx: 8,
            ris_ny: 8,
            p0_w: 0.3,
            p_ris_max_dbm: -3.0,
            xi_ris_max_dbm: -10.0,
            sigma2_ris_dbm: -70.0,
            sigma2_cu_dbm: vec![-80.0; 2],
            gamma_db: vec![5.0; 2],
            beta_max: 10.0,
            carrier_hz: 3.5e9,
            spacing_wavelengths: 0.5,
            bs_pos_m: [0.0, 0.0, 2.5],
            ris_pos_m: [20.0, 5.0, 2.5],
            cu_pos_m: SystemConfig::default_cu_positions(2),
            targets_deg: vec![[-60.0, 60.0], [-30.0, 30.0]],
            rician_factor: 0.5,
            pathloss: PathlossSpec {
                k0_db: -30.0,
                d0_m: 1.0,
                alpha_ris_cu: 2.5,
                alpha_bs_ris: 2.5,
                alpha_bs_cu: 2.2,
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// A gamma of `-inf` dB (JSON `null` is not accepted) is not representable;
    /// use a very negative value to approximate an unconstrained CU.
    pub fn to_config(&self) -> Result<SystemConfig> {
        let wavelength = SPEED_OF_LIGHT / self.carrier_hz;
        let deg = PI / 180.0;
        let cfg = SystemConfig {
            m: self.bs_antennas,
            nx: self.ris_nx,
            ny: self.ris_ny,
            p0: self.p0_w,
            p_ris_max: dbm_to_watts(self.p_ris_max_dbm),
            xi_ris_max: dbm_to_watts(self.xi_ris_max_dbm),
            sigma2_ris: dbm_to_watts(self.sigma2_ris_dbm),
            sigma2_cu: self.sigma2_cu_dbm.iter().map(|&x| dbm_to_watts(x)).collect(),
            gamma: self.gamma_db.iter().map(|&x| db_to_linear(x)).collect(),
            beta_max: self.beta_max,
            wavelength,
            dx: self.spacing_wavelengths * wavelength,
            dy: self.spacing_wavelengths * wavelength,
            bs_pos: self.bs_pos_m,
            ris_pos: self.ris_pos_m,
            cu_pos: self.cu_pos_m.clone(),
            target_angles: self.targets_deg.iter().map(|&[t, p]| (t * deg, p * deg)).collect(),
            rician_factor: self.rician_factor,
            pathloss: Pathloss {
                k0: db_to_linear(self.pathloss.k0_db),
                d0: self.pathloss.d0_m,
                alpha_ris_cu: self.pathloss.alpha_ris_cu,
                alpha_bs_ris: self.pathloss.alpha_bs_ris,
                alpha_bs_cu: self.pathloss.alpha_bs_cu,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One realization of every channel plus the target steering vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    /// BS-to-RIS channel, `N x M`: `G x` is the signal incident on the RIS.
    pub g: CMatrix,
    pub h_bu: Vec<CVector>,
    pub h_iu: Vec<CVector>,
    pub a_tar: Vec<CVector>,
    pub seed: u64,
}

/// UPA response for direction cosines `(ux, uy)` along the array axes.
pub fn upa_response(ux: f64, uy: f64, cfg: &SystemConfig) -> CVector {
    let kx = 2.0 * PI * cfg.dx * ux / cfg.wavelength;
    let ky = 2.0 * PI * cfg.dy * uy / cfg.wavelength;
    DVector::from_fn(cfg.n(), |n, _| {
        let (ix, iy) = (n / cfg.ny, n % cfg.ny);
        Complex64::from_polar(1.0, kx * ix as f64 + ky * iy as f64)
    })
}

/// RIS array response toward `(theta, phi)`: x-part ⊗ y-part, index `ix * Ny + iy`.
pub fn steering_vector(theta: f64, phi: f64, cfg: &SystemConfig) -> CVector {
    upa_response(theta.sin() * phi.cos(), theta.sin() * phi.sin(), cfg)
}

/// Half-wavelength ULA along the x-axis.
fn ula_response(ux: f64, m: usize) -> CVector {
    DVector::from_fn(m, |i, _| Complex64::from_polar(1.0, PI * i as f64 * ux))
}

pub fn pathloss_gain(d: f64, alpha: f64, cfg: &SystemConfig) -> Result<f64> {
    if !(d > 0.0) {
        return Err(HrisError::Domain(format!("distance must be positive, got {d}")));
    }
    Ok(cfg.pathloss.k0 * (d / cfg.pathloss.d0).powf(-alpha))
}

fn direction(from: [f64; 3], to: [f64; 3]) -> ([f64; 3], f64) {
    let d = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    ([d[0] / r, d[1] / r, d[2] / r], r)
}

fn cn(rng: &mut ChaCha8Rng) -> Complex64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Line-of-sight components used by [`generate_channels`]: `(G_los, h_iu_los[k])`.
pub fn los_components(cfg: &SystemConfig) -> (CMatrix, Vec<CVector>) {
    let (u_ris_bs, _) = direction(cfg.ris_pos, cfg.bs_pos);
    let (u_bs_ris, _) = direction(cfg.bs_pos, cfg.ris_pos);
    let a_ris = upa_response(u_ris_bs[0], u_ris_bs[1], cfg);
    let a_bs = ula_response(u_bs_ris[0], cfg.m);
    let g = &a_ris * a_bs.adjoint();
    let h = cfg
        .cu_pos
        .iter()
        .map(|&p| {
            let (u, _) = direction(cfg.ris_pos, p);
            upa_response(u[0], u[1], cfg)
        })
        .collect();
    (g, h)
}

/// Draws all channels for `seed`. G and h_iu are Rician, h_bu is Rayleigh,
/// each scaled by the square root of its link pathloss.
pub fn generate_channels(cfg: &SystemConfig, seed: u64) -> Result<ChannelSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kappa = cfg.rician_factor;
    let w_los = (kappa / (1.0 + kappa)).sqrt();
    let w_nlos = (1.0 / (1.0 + kappa)).sqrt();
    let (g_los, h_los) = los_components(cfg);
    let pl = &cfg.pathloss;

    let (_, d_bs_ris) = direction(cfg.bs_pos, cfg.ris_pos);
    let amp = pathloss_gain(d_bs_ris, pl.alpha_bs_ris, cfg)?.sqrt();
    let g = DMatrix::from_fn(cfg.n(), cfg.m, |i, j| {
        (g_los[(i, j)] * w_los + cn(&mut rng) * w_nlos) * amp
    });

    let mut h_iu = Vec::with_capacity(cfg.k());
    for (k, &p) in cfg.cu_pos.iter().enumerate() {
        let (_, d) = direction(cfg.ris_pos, p);
        let amp = pathloss_gain(d, pl.alpha_ris_cu, cfg)?.sqrt();
        h_iu.push(DVector::from_fn(cfg.n(), |n, _| {
            (h_los[k][n] * w_los + cn(&mut rng) * w_nlos) * amp
        }));
    }
    let mut h_bu = Vec::with_capacity(cfg.k());
    for &p in &cfg.cu_pos {
        let (_, d) = direction(cfg.bs_pos, p);
        let amp = pathloss_gain(d, pl.alpha_bs_cu, cfg)?.sqrt();
        h_bu.push(DVector::from_fn(cfg.m, |_, _| cn(&mut rng) * amp));
    }
    let a_tar = cfg
        .target_angles
        .iter()
        .map(|&(t, p)| steering_vector(t, p, cfg))
        .collect();
    Ok(ChannelSet { g, h_bu, h_iu, a_tar, seed })
}

/// Per-element mode (`q[n] = true` means active), amplitude and phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RisConfiguration {
    pub q: Vec<bool>,
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
}

impl RisConfiguration {
    pub fn passive(theta: Vec<f64>) -> Self {
        let n = theta.len();
        RisConfiguration { q: vec![false; n], beta: vec![1.0; n], theta }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn active_count(&self) -> usize {
        self.q.iter().filter(|&&a| a).count()
    }

    /// Reflection coefficients `beta_n e^{j theta_n}`.
    pub fn phi(&self) -> CVector {
        DVector::from_fn(self.n(), |n, _| Complex64::from_polar(self.beta[n], self.theta[n]))
    }

    /// Checks lengths, passive amplitude 1, active amplitude in `[0, beta_max]`
    /// (upper bound only when `beta_max` is given) and finite phases.
    pub fn validate(&self, beta_max: Option<f64>) -> Result<()> {
        let n = self.q.len();
        if self.beta.len() != n || self.theta.len() != n {
            return Err(HrisError::Validation("q, beta and theta lengths differ".into()));
        }
        for i in 0..n {
            let (b, t) = (self.beta[i], self.theta[i]);
            if !b.is_finite() || !t.is_finite() {
                return Err(HrisError::Validation(format!("element {i}: non-finite value")));
            }
            if self.q[i] {
                if b < 0.0 || beta_max.is_some_and(|m| b > m) {
                    return Err(HrisError::Validation(format!(
                        "element {i}: active amplitude {b} out of range"
                    )));
                }
            } else if (b - 1.0).abs() > 1e-12 {
                return Err(HrisError::Validation(format!(
                    "element {i}: passive amplitude must be 1, got {b}"
                )));
            }
        }
        Ok(())
    }
}

/// `(Phi, Q)` as diagonal matrices.
pub fn reflection_matrices(ris: &RisConfiguration) -> Result<(CMatrix, DMatrix<f64>)> {
    ris.validate(None)?;
    let phi = DMatrix::from_diagonal(&ris.phi());
    let q = DMatrix::from_diagonal(&DVector::from_iterator(
        ris.n(),
        ris.q.iter().map(|&a| if a { 1.0 } else { 0.0 }),
    ));
    Ok((phi, q))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn steering_examples() {
        let cfg = SystemConfig::reference_default();
        let a = steering_vector(0.0, 0.0, &cfg);
        assert!(a.iter().all(|z| (z - c(1.0, 0.0)).norm() < 1e-15));

        let mut one = cfg.clone();
        one.nx = 1;
        one.ny = 1;
        assert_eq!(steering_vector(0.7, -0.3, &one).as_slice(), &[c(1.0, 0.0)]);

        let mut two = cfg.clone();
        two.nx = 2;
        two.ny = 1;
        let a = steering_vector(PI / 2.0, 0.0, &two);
        assert!((a[0] - c(1.0, 0.0)).norm() < 1e-12);
        assert!((a[1] - c(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn pathloss_examples() {
        let mut cfg = SystemConfig::reference_default();
        assert!((pathloss_gain(1.0, 2.5, &cfg).unwrap() - 1e-3).abs() < 1e-15);
        assert!((pathloss_gain(1.0, 7.0, &cfg).unwrap() - cfg.pathloss.k0).abs() < 1e-18);
        cfg.pathloss.k0 = 1.0;
        assert!((pathloss_gain(10.0, 2.0, &cfg).unwrap() - 0.01).abs() < 1e-15);
        assert!(matches!(pathloss_gain(0.0, 2.0, &cfg), Err(HrisError::Domain(_))));
        assert!(matches!(pathloss_gain(-1.0, 2.0, &cfg), Err(HrisError::Domain(_))));
    }

    #[test]
    fn unit_conversions() {
        assert!((dbm_to_watts(-3.0) - 5.0119e-4).abs() < 1e-8);
        assert!((dbm_to_watts(0.0) - 1e-3).abs() < 1e-18);
        assert!((db_to_linear(5.0) - 3.1623).abs() < 1e-4);
        assert!((watts_to_dbm(dbm_to_watts(-17.5)) + 17.5).abs() < 1e-12);
    }

    #[test]
    fn reflection_examples() {
        let ris = RisConfiguration { q: vec![false; 3], beta: vec![1.0; 3], theta: vec![PI; 3] };
        let (phi, q) = reflection_matrices(&ris).unwrap();
        assert!((phi + CMatrix::identity(3, 3)).norm() < 1e-15);
        assert_eq!(q, DMatrix::zeros(3, 3));

        let ris = RisConfiguration { q: vec![true, false], beta: vec![2.0, 1.0], theta: vec![0.0, 0.0] };
        let (phi, q) = reflection_matrices(&ris).unwrap();
        assert_eq!(phi, CMatrix::from_diagonal(&DVector::from_vec(vec![c(2.0, 0.0), c(1.0, 0.0)])));
        assert_eq!(q, DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])));

        let ris = RisConfiguration { q: vec![true], beta: vec![0.0], theta: vec![1.0] };
        assert_eq!(reflection_matrices(&ris).unwrap().0[(0, 0)], c(0.0, 0.0));

        let bad = RisConfiguration { q: vec![false], beta: vec![2.0], theta: vec![1.0] };
        assert!(matches!(reflection_matrices(&bad), Err(HrisError::Validation(_))));
    }

    #[test]
    fn wrap_phase_range() {
        assert_eq!(wrap_phase(0.0), 2.0 * PI);
        assert!((wrap_phase(-PI / 2.0) - 1.5 * PI).abs() < 1e-15);
        assert!((wrap_phase(5.0 * PI) - PI).abs() < 1e-12);
    }

    #[test]
    fn channels_deterministic_and_shaped() {
        let cfg = SystemConfig::reference_default();
        let a = generate_channels(&cfg, 11).unwrap();
        let b = generate_channels(&cfg, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.g, generate_channels(&cfg, 12).unwrap().g);
        assert_eq!(a.g.shape(), (64, 8));
        assert_eq!(a.h_bu.len(), 2);
        assert_eq!(a.h_iu[1].len(), 64);
        for t in &a.a_tar {
            assert!((t.norm_squared() - 64.0).abs() < 1e-9);
        }
    }

    #[test]
    fn scenario_round_trip() {
        let s = Scenario::reference_default();
        let cfg = s.to_config().unwrap();
        let d = SystemConfig::reference_default();
        assert_eq!(cfg.m, d.m);
        assert!((cfg.p_ris_max - d.p_ris_max).abs() < 1e-18);
        assert!((cfg.target_angles[0].0 - d.target_angles[0].0).abs() < 1e-15);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(Scenario::from_json(&text).unwrap(), s);
        assert!(Scenario::from_json(r#"{"bs_antennas": 8}"#).is_err());
    }
}
