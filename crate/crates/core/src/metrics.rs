//! Exact evaluation of every physical quantity and constraint of the joint
//! design problem. Nothing here touches solver output other than through
//! [`BeamformingSolution`] and [`RisConfiguration`].

use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::model::{CMatrix, CVector, ChannelSet, RisConfiguration, SystemConfig};
use crate::{HrisError, Result};

pub const DEFAULT_TOL_FEAS: f64 = 1e-5;

/// Per-CU beamformers and the dedicated sensing covariance, in watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamformingSolution {
    pub w: Vec<CVector>,
    pub r0: CMatrix,
}

impl BeamformingSolution {
    pub fn zeros(m: usize, k: usize) -> Self {
        BeamformingSolution { w: vec![DVector::zeros(m); k], r0: CMatrix::zeros(m, m) }
    }

    /// `R = R0 + sum_k w_k w_k^H`.
    pub fn total_covariance(&self) -> CMatrix {
        let mut r = self.r0.clone();
        for w in &self.w {
            r += w * w.adjoint();
        }
        r
    }

    pub fn transmit_power(&self) -> f64 {
        self.r0.trace().re + self.w.iter().map(|w| w.norm_squared()).sum::<f64>()
    }
}

/// Cascaded BS-to-target channel `h_l = G^H Phi^H a_l`.
pub fn cascaded_target_channel(ch: &ChannelSet, ris: &RisConfiguration, l: usize) -> CVector {
    let phi = ris.phi();
    let x = ch.a_tar[l].zip_map(&phi, |a, p| p.conj() * a);
    ch.g.ad_mul(&x)
}

/// Equivalent BS-to-CU channel `h_CU,k = G^H Phi h_iu,k + h_bu,k`.
pub fn equivalent_cu_channel(ch: &ChannelSet, ris: &RisConfiguration, k: usize) -> CVector {
    let phi = ris.phi();
    let x = ch.h_iu[k].component_mul(&phi);
    ch.g.ad_mul(&x) + &ch.h_bu[k]
}

fn quad(h: &CVector, r: &CMatrix) -> f64 {
    h.dotc(&(r * h)).re
}

pub fn beampattern_gain(
    ch: &ChannelSet,
    ris: &RisConfiguration,
    bf: &BeamformingSolution,
    l: usize,
) -> f64 {
    let h = cascaded_target_channel(ch, ris, l);
    quad(&h, &bf.total_covariance()).max(0.0)
}

/// Beampattern gain toward an arbitrary RIS steering vector `a`, given the
/// total covariance `r`.
pub fn gain_toward(ch: &ChannelSet, ris: &RisConfiguration, r: &CMatrix, a: &CVector) -> f64 {
    let x = a.zip_map(&ris.phi(), |a, p| p.conj() * a);
    quad(&ch.g.ad_mul(&x), r).max(0.0)
}

/// `sigma2_ris * sum_n q_n beta_n^2 |x_n|^2`: active-element noise seen through `x`.
fn ris_noise_through(cfg: &SystemConfig, ris: &RisConfiguration, x: &CVector) -> f64 {
    let s: f64 = (0..ris.n())
        .filter(|&n| ris.q[n])
        .map(|n| ris.beta[n].powi(2) * x[n].norm_sqr())
        .sum();
    cfg.sigma2_ris * s
}

pub fn cu_sinr(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    ris: &RisConfiguration,
    bf: &BeamformingSolution,
    k: usize,
) -> f64 {
    let h = equivalent_cu_channel(ch, ris, k);
    let num = h.dotc(&bf.w[k]).norm_sqr();
    let interf: f64 = (0..bf.w.len())
        .filter(|&j| j != k)
        .map(|j| h.dotc(&bf.w[j]).norm_sqr())
        .sum();
    num / (interf + ris_noise_through(cfg, ris, &ch.h_iu[k]) + cfg.sigma2_cu[k])
}

/// `tr(Phi Q G R G^H Q^H Phi^H) + ||Phi Q||_F^2 sigma2_ris`.
pub fn ris_output_power(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    ris: &RisConfiguration,
    bf: &BeamformingSolution,
) -> f64 {
    let incident = incident_power(ch, &bf.total_covariance());
    (0..ris.n())
        .filter(|&n| ris.q[n])
        .map(|n| ris.beta[n].powi(2) * (incident[n] + cfg.sigma2_ris))
        .sum()
}

/// Diagonal of `G R G^H`: signal power incident on each element.
pub fn incident_power(ch: &ChannelSet, r: &CMatrix) -> DVector<f64> {
    let gr = &ch.g * r;
    DVector::from_fn(ch.g.nrows(), |n, _| {
        (0..ch.g.ncols()).map(|m| (gr[(n, m)] * ch.g[(n, m)].conj()).re).sum()
    })
}

pub fn ris_noise_at_target(
    cfg: &SystemConfig,
    ris: &RisConfiguration,
    ch: &ChannelSet,
    l: usize,
) -> f64 {
    ris_noise_through(cfg, ris, &ch.a_tar[l])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRecord {
    pub name: String,
    pub relation: Relation,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs` for `Le`, `lhs - rhs` for `Ge`, `-|lhs - rhs|` for `Eq`.
    pub slack: f64,
    pub satisfied: bool,
}

impl ConstraintRecord {
    fn new(name: String, relation: Relation, lhs: f64, rhs: f64, tol: f64) -> Self {
        let slack = match relation {
            Relation::Le => rhs - lhs,
            Relation::Ge => lhs - rhs,
            Relation::Eq => -(lhs - rhs).abs(),
        };
        let allowed = if rhs == 0.0 { tol } else { tol * rhs.abs() };
        let satisfied = lhs.is_finite() && slack >= -allowed;
        ConstraintRecord { name, relation, lhs, rhs, slack, satisfied }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub records: Vec<ConstraintRecord>,
    /// Minimum beampattern gain over the targets (W).
    pub objective: f64,
    pub tol_feas: f64,
}

impl ConstraintReport {
    pub fn all_satisfied(&self) -> bool {
        self.records.iter().all(|r| r.satisfied)
    }

    pub fn violations(&self) -> impl Iterator<Item = &ConstraintRecord> {
        self.records.iter().filter(|r| !r.satisfied)
    }

    pub fn get(&self, name: &str) -> Option<&ConstraintRecord> {
        self.records.iter().find(|r| r.name == name)
    }
}

fn check_dims(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    ris: &RisConfiguration,
    bf: &BeamformingSolution,
) -> Result<()> {
    let (m, n, k, l) = (cfg.m, cfg.n(), cfg.k(), cfg.l());
    let ok = ch.g.shape() == (n, m)
        && ch.h_bu.len() == k
        && ch.h_iu.len() == k
        && ch.a_tar.len() == l
        && ch.h_bu.iter().all(|h| h.len() == m)
        && ch.h_iu.iter().all(|h| h.len() == n)
        && ch.a_tar.iter().all(|a| a.len() == n)
        && ris.q.len() == n
        && ris.beta.len() == n
        && ris.theta.len() == n
        && bf.w.len() == k
        && bf.w.iter().all(|w| w.len() == m)
        && bf.r0.shape() == (m, m);
    if ok {
        Ok(())
    } else {
        Err(HrisError::Validation("dimension mismatch between config, channels and solution".into()))
    }
}

/// Evaluates every constraint of the joint problem. `tol_feas` is relative
/// to `|rhs|`, absolute when the rhs is zero.
pub fn audit(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    ris: &RisConfiguration,
    bf: &BeamformingSolution,
    tol_feas: f64,
) -> Result<ConstraintReport> {
    check_dims(cfg, ch, ris, bf)?;
    let mut rec = Vec::new();
    let mut push = |name: String, rel, lhs, rhs| {
        rec.push(ConstraintRecord::new(name, rel, lhs, rhs, tol_feas));
    };

    push("bs_power".into(), Relation::Le, bf.transmit_power(), cfg.p0);
    let r0_min = bf.r0.clone().symmetric_eigenvalues().min();
    let scale = bf.r0.trace().re.abs().max(1e-300);
    push("r0_psd".into(), Relation::Ge, r0_min / scale, -1e-8);
    for k in 0..cfg.k() {
        if cfg.gamma[k] > 0.0 {
            push(format!("sinr[{k}]"), Relation::Ge, cu_sinr(cfg, ch, ris, bf, k), cfg.gamma[k]);
        }
    }
    push("ris_power".into(), Relation::Le, ris_output_power(cfg, ch, ris, bf), cfg.p_ris_max);
    for l in 0..cfg.l() {
        push(
            format!("ris_noise[{l}]"),
            Relation::Le,
            ris_noise_at_target(cfg, ris, ch, l),
            cfg.xi_ris_max,
        );
    }
    for n in 0..ris.n() {
        let t = ris.theta[n];
        push(format!("phase_lo[{n}]"), Relation::Ge, t, 0.0);
        push(format!("phase_hi[{n}]"), Relation::Le, t, 2.0 * PI);
        if ris.q[n] {
            push(format!("amp_lo[{n}]"), Relation::Ge, ris.beta[n], 0.0);
            push(format!("amp_hi[{n}]"), Relation::Le, ris.beta[n], cfg.beta_max);
        } else {
            push(format!("amp_passive[{n}]"), Relation::Eq, ris.beta[n], 1.0);
        }
        // q is stored as bool, so q(1 - q) = 0 by construction; kept for a complete report.
        let qf = if ris.q[n] { 1.0 } else { 0.0 };
        push(format!("binary[{n}]"), Relation::Eq, qf * (1.0 - qf), 0.0);
    }
    // An open lower phase bound cannot be audited with a tolerance; theta = 0 is
    // flagged separately since it is outside (0, 2pi].
    for r in rec.iter_mut().filter(|r| r.name.starts_with("phase_lo")) {
        r.satisfied = r.lhs > 0.0;
    }

    let objective = (0..cfg.l())
        .map(|l| beampattern_gain(ch, ris, bf, l))
        .fold(f64::INFINITY, f64::min);
    Ok(ConstraintReport { records: rec, objective, tol_feas })
}

/// Fast evaluation of candidate reflection vectors under fixed beamformers.
///
/// Precomputes `B_l = G^H diag(a_l)` and `C_k = G^H diag(h_iu,k)` so each
/// candidate costs a handful of `M x N` products.
#[derive(Debug, Clone)]
pub struct Evaluator {
    b_tar: Vec<CMatrix>,
    c_cu: Vec<CMatrix>,
    h_bu: Vec<CVector>,
    w: Vec<CVector>,
    r: CMatrix,
    /// `(G R G^H)_nn + sigma2_ris`.
    power_weight: DVector<f64>,
    /// `sigma2_ris |h_iu,k,n|^2`.
    noise_weight: Vec<DVector<f64>>,
    sigma2_cu: Vec<f64>,
    sigma2_ris: f64,
}

/// Per-candidate quantities in watts.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub gains: Vec<f64>,
    pub sinr: Vec<f64>,
    pub ris_power: f64,
    /// Equal for every target because steering entries are unit-modulus.
    pub target_noise: f64,
}

impl Evaluation {
    pub fn min_gain(&self) -> f64 {
        self.gains.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Same tolerance semantics as [`audit`], restricted to the RIS-dependent rows.
    pub fn feasible(&self, cfg: &SystemConfig, tol: f64) -> bool {
        let sinr_ok = self
            .sinr
            .iter()
            .zip(&cfg.gamma)
            .all(|(&s, &g)| g <= 0.0 || s >= g * (1.0 - tol));
        sinr_ok
            && self.ris_power <= cfg.p_ris_max * (1.0 + tol)
            && self.target_noise <= cfg.xi_ris_max * (1.0 + tol)
    }
}

impl Evaluator {
    pub fn new(cfg: &SystemConfig, ch: &ChannelSet, bf: &BeamformingSolution) -> Self {
        let scale_cols = |d: &CVector| {
            let mut m = ch.g.adjoint();
            for (j, mut col) in m.column_iter_mut().enumerate() {
                col *= d[j];
            }
            m
        };
        let r = bf.total_covariance();
        Evaluator {
            b_tar: ch.a_tar.iter().map(scale_cols).collect(),
            c_cu: ch.h_iu.iter().map(scale_cols).collect(),
            h_bu: ch.h_bu.clone(),
            w: bf.w.clone(),
            power_weight: incident_power(ch, &r).add_scalar(cfg.sigma2_ris),
            r,
            noise_weight: ch
                .h_iu
                .iter()
                .map(|h| h.map(|x| cfg.sigma2_ris * x.norm_sqr()))
                .collect(),
            sigma2_cu: cfg.sigma2_cu.clone(),
            sigma2_ris: cfg.sigma2_ris,
        }
    }

    /// `phi[n] = beta_n e^{j theta_n}`; `q` selects the active elements.
    pub fn evaluate(&self, phi: &CVector, q: &[bool]) -> Evaluation {
        let phi_c = phi.map(|p| p.conj());
        let gains = self
            .b_tar
            .iter()
            .map(|b| quad(&(b * &phi_c), &self.r).max(0.0))
            .collect();
        let amp2: Vec<f64> = phi.iter().map(|p| p.norm_sqr()).collect();
        let active = |v: &DVector<f64>| -> f64 {
            (0..q.len()).filter(|&n| q[n]).map(|n| amp2[n] * v[n]).sum()
        };
        let sinr = (0..self.c_cu.len())
            .map(|k| {
                let h = &self.c_cu[k] * phi + &self.h_bu[k];
                let mut num = 0.0;
                let mut den = self.sigma2_cu[k] + active(&self.noise_weight[k]);
                for (j, w) in self.w.iter().enumerate() {
                    let p = h.dotc(w).norm_sqr();
                    if j == k {
                        num = p;
                    } else {
                        den += p;
                    }
                }
                num / den
            })
            .collect();
        let target_noise = self.sigma2_ris
            * (0..q.len()).filter(|&n| q[n]).map(|n| amp2[n]).sum::<f64>();
        Evaluation { gains, sinr, ris_power: active(&self.power_weight), target_noise }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_channels, SystemConfig};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> SystemConfig {
        let mut cfg = SystemConfig::reference_default();
        cfg.m = 4;
        cfg.nx = 3;
        cfg.ny = 2;
        cfg
    }

    fn random_bf(cfg: &SystemConfig, seed: u64) -> BeamformingSolution {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = || Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        let w = (0..cfg.k()).map(|_| DVector::from_fn(cfg.m, |_, _| c() * 0.1)).collect();
        let a = CMatrix::from_fn(cfg.m, cfg.m, |_, _| c() * 0.1);
        BeamformingSolution { w, r0: &a * a.adjoint() }
    }

    fn random_ris(n: usize, seed: u64, beta_max: f64) -> RisConfiguration {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let beta = q.iter().map(|&a| if a { rng.random::<f64>() * beta_max } else { 1.0 }).collect();
        let theta = (0..n).map(|_| rng.random::<f64>() * 2.0 * PI + 1e-9).collect();
        RisConfiguration { q, beta, theta }
    }

    #[test]
    fn beampattern_examples() {
        let cfg = small_cfg();
        let ch = generate_channels(&cfg, 3).unwrap();
        let ris = RisConfiguration::passive(vec![1.0; cfg.n()]);
        let h = cascaded_target_channel(&ch, &ris, 0);

        // Isotropic covariance.
        let mut bf = BeamformingSolution::zeros(cfg.m, cfg.k());
        bf.r0 = CMatrix::identity(cfg.m, cfg.m) * Complex64::from(cfg.p0 / cfg.m as f64);
        let g = beampattern_gain(&ch, &ris, &bf, 0);
        let expect = cfg.p0 / cfg.m as f64 * h.norm_squared();
        assert!((g - expect).abs() <= 1e-12 * expect);

        // Orthogonal beamformer.
        let mut bf = BeamformingSolution::zeros(cfg.m, 1);
        let mut w = DVector::from_element(cfg.m, Complex64::from(1.0));
        w -= &h * (h.dotc(&w) / h.norm_squared());
        bf.w[0] = w;
        assert!(beampattern_gain(&ch, &ris, &bf, 0) < 1e-12 * h.norm_squared());
    }

    #[test]
    fn beampattern_term_by_term() {
        let cfg = small_cfg();
        let ch = generate_channels(&cfg, 9).unwrap();
        let ris = random_ris(cfg.n(), 2, cfg.beta_max);
        let bf = random_bf(&cfg, 4);
        for l in 0..cfg.l() {
            // Entry-wise h_l, independent of the matrix helpers.
            let h = DVector::from_fn(cfg.m, |m, _| {
                (0..cfg.n())
                    .map(|n| {
                        ch.g[(n, m)].conj()
                            * Complex64::from_polar(ris.beta[n], -ris.theta[n])
                            * ch.a_tar[l][n]
                    })
                    .sum::<Complex64>()
            });
            let mut expect = h.dotc(&(&bf.r0 * &h)).re;
            for w in &bf.w {
                expect += h.dotc(w).norm_sqr();
            }
            let got = beampattern_gain(&ch, &ris, &bf, l);
            assert!((got - expect).abs() <= 1e-12 * expect);
        }
    }

    #[test]
    fn sinr_examples() {
        let mut cfg = small_cfg();
        cfg.sigma2_cu.truncate(1);
        cfg.gamma.truncate(1);
        cfg.cu_pos.truncate(1);
        let ch = generate_channels(&cfg, 5).unwrap();
        let ris = RisConfiguration::passive(vec![0.4; cfg.n()]);
        let bf = random_bf(&cfg, 1);
        let h = equivalent_cu_channel(&ch, &ris, 0);
        let expect = h.dotc(&bf.w[0]).norm_sqr() / cfg.sigma2_cu[0];
        assert!((cu_sinr(&cfg, &ch, &ris, &bf, 0) - expect).abs() <= 1e-12 * expect);
        let zero_bf = BeamformingSolution::zeros(cfg.m, 1);
        assert_eq!(cu_sinr(&cfg, &ch, &ris, &zero_bf, 0), 0.0);
    }

    #[test]
    fn sinr_ris_noise_term_entrywise() {
        let cfg = small_cfg();
        let ch = generate_channels(&cfg, 8).unwrap();
        let mut ris = random_ris(cfg.n(), 3, cfg.beta_max);
        ris.q = vec![true; cfg.n()];
        let mut bf = random_bf(&cfg, 2);
        bf.w[1] = DVector::zeros(cfg.m);
        let k = 0;
        let h = equivalent_cu_channel(&ch, &ris, k);
        let sinr = cu_sinr(&cfg, &ch, &ris, &bf, k);
        let den = h.dotc(&bf.w[k]).norm_sqr() / sinr - cfg.sigma2_cu[k];
        let expect: f64 = cfg.sigma2_ris
            * (0..cfg.n()).map(|n| ch.h_iu[k][n].norm_sqr() * ris.beta[n].powi(2)).sum::<f64>();
        assert!((den - expect).abs() <= 1e-9 * expect, "{den} vs {expect}");
    }

    #[test]
    fn ris_power_examples() {
        let cfg = small_cfg();
        let ch = generate_channels(&cfg, 1).unwrap();
        let bf = random_bf(&cfg, 3);
        let passive = RisConfiguration::passive(vec![2.0; cfg.n()]);
        assert_eq!(ris_output_power(&cfg, &ch, &passive, &bf), 0.0);
        let active = RisConfiguration {
            q: vec![true; cfg.n()],
            beta: vec![2.0; cfg.n()],
            theta: vec![1.0; cfg.n()],
        };
        let zero = BeamformingSolution::zeros(cfg.m, cfg.k());
        let p = ris_output_power(&cfg, &ch, &active, &zero);
        let expect = 4.0 * cfg.n() as f64 * cfg.sigma2_ris;
        assert!((p - expect).abs() <= 1e-15 * expect);
    }

    #[test]
    fn ris_power_matches_trace_form() {
        let cfg = small_cfg();
        let ch = generate_channels(&cfg, 6).unwrap();
        let ris = random_ris(cfg.n(), 6, cfg.beta_max);
        let bf = random_bf(&cfg, 6);
        let (phi, q) = crate::model::reflection_matrices(&ris).unwrap();
        let pq = phi * q.map(Complex64::from);
        let r = bf.total_covariance();
        let t = (&pq * &ch.g * r * ch.g.adjoint() * pq.adjoint()).trace().re
            + pq.norm_squared() * cfg.sigma2_ris;
        let got = ris_output_power(&cfg, &ch, &ris, &bf);
        assert!((got - t).abs() <= 1e-12 * t);
    }

    #[test]
    fn target_noise_examples() {
        let cfg = small_cfg();
        let ch = generate_channels(&cfg, 1).unwrap();
        let n = cfg.n();
        let passive = RisConfiguration::passive(vec![1.0; n]);
        assert_eq!(ris_noise_at_target(&cfg, &passive, &ch, 0), 0.0);
        let all = RisConfiguration { q: vec![true; n], beta: vec![1.0; n], theta: vec![1.0; n] };
        let v = ris_noise_at_target(&cfg, &all, &ch, 1);
        assert!((v - n as f64 * cfg.sigma2_ris).abs() <= 1e-12 * v);
        let mut one = passive.clone();
        one.q[0] = true;
        one.beta[0] = 3.0;
        let v = ris_noise_at_target(&cfg, &one, &ch, 0);
        assert!((v - 9.0 * cfg.sigma2_ris).abs() <= 1e-12 * v);
    }

    #[test]
    fn audit_examples() {
        let cfg = SystemConfig::reference_default();
        let ch = generate_channels(&cfg, 2).unwrap();
        let ris = RisConfiguration::passive(vec![1.0; cfg.n()]);
        let zero = BeamformingSolution::zeros(cfg.m, cfg.k());
        let rep = audit(&cfg, &ch, &ris, &zero, DEFAULT_TOL_FEAS).unwrap();
        assert!(!rep.get("sinr[0]").unwrap().satisfied);
        assert!(rep.get("bs_power").unwrap().satisfied);
        assert!(rep.get("ris_power").unwrap().satisfied);
        assert_eq!(rep.get("ris_power").unwrap().lhs, 0.0);
        assert_eq!(rep.get("ris_noise[1]").unwrap().lhs, 0.0);

        let mut big = random_bf(&cfg, 1);
        for w in &mut big.w {
            *w *= Complex64::from(100.0);
        }
        let rep = audit(&cfg, &ch, &ris, &big, DEFAULT_TOL_FEAS).unwrap();
        assert!(!rep.get("bs_power").unwrap().satisfied);

        let bad = BeamformingSolution::zeros(cfg.m + 1, cfg.k());
        assert!(matches!(audit(&cfg, &ch, &ris, &bad, 1e-5), Err(HrisError::Validation(_))));

        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"name\":\"bs_power\""));
    }

    #[test]
    fn evaluator_agrees_with_exact_path() {
        let cfg = small_cfg();
        let ch = generate_channels(&cfg, 12).unwrap();
        let bf = random_bf(&cfg, 12);
        let ev = Evaluator::new(&cfg, &ch, &bf);
        for s in 0..5 {
            let ris = random_ris(cfg.n(), 100 + s, cfg.beta_max);
            let e = ev.evaluate(&ris.phi(), &ris.q);
            for l in 0..cfg.l() {
                let g = beampattern_gain(&ch, &ris, &bf, l);
                assert!((e.gains[l] - g).abs() <= 1e-10 * g);
                let nz = ris_noise_at_target(&cfg, &ris, &ch, l);
                assert!((e.target_noise - nz).abs() <= 1e-12 * nz.max(1e-300));
            }
            for k in 0..cfg.k() {
                let s = cu_sinr(&cfg, &ch, &ris, &bf, k);
                assert!((e.sinr[k] - s).abs() <= 1e-10 * s);
            }
            let p = ris_output_power(&cfg, &ch, &ris, &bf);
            assert!((e.ris_power - p).abs() <= 1e-10 * p.max(1e-300));
        }
    }
}
