//! RIS subproblem under fixed beamformers: lifted reflection matrix `V`,
//! relaxed mode vector `q`, big-M coupling, SCA binarity penalty, rounding
//! and Gaussian randomization.
//!
//! The lifted vector is `v = [phi; 1]` with `phi[n] = beta_n e^{j theta_n}`.
//! The coupling matrix is eliminated through `Z_nn = V_nn - 1 + q_n`, which
//! is exact for every row that references `Z` because those rows only touch
//! its diagonal. [`build_p12_full`] keeps the explicit big-M family for
//! small cross-checks.

use std::ops::Range;

use hris_conic::embed::{entry_im, entry_re};
use hris_conic::{herm_terms, real_to_herm, solve_sdp, SdpProblem, Sense, SolveOptions, Status, Var};
use nalgebra::{DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bs_stage::MW;
use crate::metrics::{BeamformingSolution, Evaluator};
use crate::model::{wrap_phase, CMatrix, CVector, ChannelSet, RisConfiguration, SystemConfig};
use crate::Result;

/// Quadratic forms of the RIS subproblem, in watts.
#[derive(Debug, Clone)]
pub struct P12Matrices {
    /// `v^H rbar_tar[l] v` is the beampattern gain toward target `l`.
    pub rbar_tar: Vec<CMatrix>,
    /// `v^H rbar_cu[k][j] v + |h_bu,k^H w_j|^2 = |h_CU,k^H w_j|^2`.
    pub rbar_cu: Vec<Vec<CMatrix>>,
    /// `G R G^H + sigma2_ris I`.
    pub p_ris: CMatrix,
    /// Diagonal of `sigma2_ris diag(h_iu,k)^H diag(h_iu,k)`.
    pub sigma_ris: Vec<DVector<f64>>,
    /// Diagonal of `sigma2_ris diag(a_l)^H diag(a_l)`; equals `sigma2_ris` everywhere.
    pub p_tar: Vec<DVector<f64>>,
    /// Direct-path constant of each SINR row.
    pub c: Vec<f64>,
}

impl P12Matrices {
    pub fn n(&self) -> usize {
        self.p_ris.nrows()
    }

    /// Diagonal of `p_ris`: per-element output power per unit `beta^2`.
    pub fn power_weight(&self) -> DVector<f64> {
        self.p_ris.diagonal().map(|z| z.re)
    }

    /// `Rbar_cu[k][k] / Gamma_k - sum_{j != k} Rbar_cu[k][j]`.
    pub fn sinr_form(&self, k: usize, gamma: f64) -> CMatrix {
        let mut c = &self.rbar_cu[k][k] * Complex64::from(1.0 / gamma);
        for (j, r) in self.rbar_cu[k].iter().enumerate() {
            if j != k {
                c -= r;
            }
        }
        c
    }
}

fn bordered(r: &CMatrix, b: Option<&CVector>) -> CMatrix {
    let n = r.nrows();
    let mut out = CMatrix::zeros(n + 1, n + 1);
    out.view_mut((0, 0), (n, n)).copy_from(r);
    if let Some(b) = b {
        for i in 0..n {
            out[(i, n)] = b[i];
            out[(n, i)] = b[i].conj();
        }
    }
    out
}

pub fn build_p12_matrices(cfg: &SystemConfig, ch: &ChannelSet, bf: &BeamformingSolution) -> P12Matrices {
    let n = cfg.n();
    let r = bf.total_covariance();
    let grg = &ch.g * &r * ch.g.adjoint();
    // conj(diag(a)^H G R G^H diag(a)) so that v = [phi; 1] rather than its conjugate.
    let rbar_tar = ch
        .a_tar
        .iter()
        .map(|a| {
            let t = CMatrix::from_fn(n, n, |i, j| (a[i].conj() * grg[(i, j)] * a[j]).conj());
            bordered(&t, None)
        })
        .collect();
    let rbar_cu = (0..cfg.k())
        .map(|k| {
            let h = &ch.h_iu[k];
            bf.w
                .iter()
                .map(|w| {
                    let gw = &ch.g * w;
                    let a = DVector::from_fn(n, |i, _| h[i].conj() * gw[i]);
                    let d = ch.h_bu[k].dotc(w);
                    bordered(&(&a * a.adjoint()), Some(&(&a * d.conj())))
                })
                .collect()
        })
        .collect();
    let mut p_ris = grg;
    for i in 0..n {
        p_ris[(i, i)] += Complex64::from(cfg.sigma2_ris);
    }
    let sigma_ris = ch.h_iu.iter().map(|h| h.map(|x| cfg.sigma2_ris * x.norm_sqr())).collect();
    let p_tar = ch.a_tar.iter().map(|a| a.map(|x| cfg.sigma2_ris * x.norm_sqr())).collect();
    let c = (0..cfg.k())
        .map(|k| {
            let direct: Vec<f64> = bf.w.iter().map(|w| ch.h_bu[k].dotc(w).norm_sqr()).collect();
            let interf: f64 = (0..bf.w.len()).filter(|&j| j != k).map(|j| direct[j]).sum();
            let own = if cfg.gamma[k] > 0.0 { direct[k] / cfg.gamma[k] } else { 0.0 };
            interf - own + cfg.sigma2_cu[k]
        })
        .collect();
    P12Matrices { rbar_tar, rbar_cu, p_ris, sigma_ris, p_tar, c }
}

/// How the mode vector enters the subproblem.
#[derive(Debug, Clone, PartialEq)]
pub enum Modes {
    /// `q` relaxed to `[0, 1]^N` with SCA penalty weight `mu` (watts) linearized at `q_prev`.
    Relaxed { q_prev: Vec<f64>, mu: f64 },
    /// `q` fixed; penalty and box dropped.
    Frozen(Vec<bool>),
}

/// Variable layout of a built subproblem.
#[derive(Debug, Clone)]
pub struct P12Layout {
    pub n: usize,
    pub v_block: usize,
    pub q_vars: Option<Range<usize>>,
    pub rho: Var,
    /// `c~`: the stored mode variables are `c~ q_n`.
    pub q_scale: f64,
    /// Gain rows carry `gain_scale * MW`; `rho` is in those units.
    pub gain_scale: f64,
    /// Explicit `Z` entries when built by [`build_p12_full`]: `(re, im)` free indices per `i <= j`.
    pub z_vars: Option<Vec<Vec<(usize, Option<usize>)>>>,
}

/// `c~ = beta_max^2`: `|V_ij| <= beta_max^2` for every feasible `V`.
pub fn big_m(cfg: &SystemConfig) -> f64 {
    cfg.beta_max * cfg.beta_max
}

fn vdiag(vb: usize, n1: usize, n: usize, a: f64) -> impl Iterator<Item = (Var, f64)> {
    entry_re(vb, n1, n, n).into_iter().map(move |(v, c)| (v, c * a))
}

fn scaled(terms: Vec<(Var, f64)>, s: f64) -> impl Iterator<Item = (Var, f64)> {
    terms.into_iter().map(move |(v, c)| (v, c * s))
}

fn gain_scale(mats: &P12Matrices) -> f64 {
    let t = mats.rbar_tar.iter().map(|r| r.trace().re).fold(0.0, f64::max) * MW;
    if t > 0.0 {
        1.0 / t
    } else {
        1.0
    }
}

/// Rows common to both builders: objective, gain rows and the corner entry.
fn start(mats: &P12Matrices) -> (SdpProblem, P12Layout) {
    let n = mats.n();
    let mut p = SdpProblem::new();
    let vb = p.add_psd_block(2 * (n + 1));
    let rho = Var::Free(p.add_free(1).start);
    let gs = gain_scale(mats);
    p.maximize([(rho, 1.0)]);
    for r in &mats.rbar_tar {
        let mut terms = herm_terms(vb, &(r * Complex64::from(gs * MW)));
        terms.push((rho, -1.0));
        p.add_constraint(terms, Sense::Ge, 0.0);
    }
    p.add_constraint(entry_re(vb, n + 1, n, n), Sense::Eq, 1.0);
    let layout = P12Layout { n, v_block: vb, q_vars: None, q_scale: 1.0, rho, gain_scale: gs, z_vars: None };
    (p, layout)
}

/// Penalized relaxed subproblem with `Z` eliminated.
pub fn build_p12(cfg: &SystemConfig, mats: &P12Matrices, q_prev: &[f64], mu: f64) -> (SdpProblem, P12Layout) {
    build_p12_modes(cfg, mats, &Modes::Relaxed { q_prev: q_prev.to_vec(), mu })
}

pub fn build_p12_modes(cfg: &SystemConfig, mats: &P12Matrices, modes: &Modes) -> (SdpProblem, P12Layout) {
    let n = mats.n();
    let n1 = n + 1;
    let cm = big_m(cfg);
    let (mut p, mut lay) = start(mats);
    let vb = lay.v_block;
    let pw = mats.power_weight() * MW;

    // Per-element affine forms in (V_nn, q_n): `Z_nn = V_nn - 1 + q_n` when
    // relaxed, `Z_nn = q_n V_nn` when frozen.
    let q_range = match modes {
        Modes::Relaxed { .. } => Some(p.add_nonneg(n)),
        Modes::Frozen(_) => None,
    };
    lay.q_vars = q_range.clone();
    lay.q_scale = cm;
    // The stored variable is `c~ q_n`, which keeps the big-M rows well scaled.
    let qt = |i: usize, a: f64| (Var::Nonneg(q_range.as_ref().unwrap().start + i), a / cm);

    // sum_n w_n Z_nn as (terms, constant).
    let z_sum = |w: &dyn Fn(usize) -> f64| -> (Vec<(Var, f64)>, f64) {
        let mut terms = Vec::new();
        let mut constant = 0.0;
        for i in 0..n {
            let wi = w(i);
            if wi == 0.0 {
                continue;
            }
            match modes {
                Modes::Relaxed { .. } => {
                    terms.extend(vdiag(vb, n1, i, wi));
                    terms.push(qt(i, wi));
                    constant -= wi;
                }
                Modes::Frozen(q) => {
                    if q[i] {
                        terms.extend(vdiag(vb, n1, i, wi));
                    }
                }
            }
        }
        (terms, constant)
    };

    for k in 0..cfg.k() {
        let gamma = cfg.gamma[k];
        if gamma <= 0.0 {
            continue;
        }
        let s = 1.0 / (cfg.sigma2_cu[k] * MW);
        let mut terms = herm_terms(vb, &(mats.sinr_form(k, gamma) * Complex64::from(MW * s)));
        let (zt, zc) = z_sum(&|i| mats.sigma_ris[k][i] * MW * s);
        terms.extend(scaled(zt, -1.0));
        p.add_constraint(terms, Sense::Ge, mats.c[k] * MW * s + zc);
    }
    let ps = 1.0 / (cfg.p_ris_max * MW);
    let (zt, zc) = z_sum(&|i| pw[i] * ps);
    p.add_constraint(zt, Sense::Le, 1.0 - zc);
    for l in 0..cfg.l() {
        let xs = 1.0 / (cfg.xi_ris_max * MW);
        let (zt, zc) = z_sum(&|i| mats.p_tar[l][i] * MW * xs);
        p.add_constraint(zt, Sense::Le, 1.0 - zc);
    }

    match modes {
        Modes::Relaxed { q_prev, mu } => {
            for i in 0..n {
                let vi: Vec<_> = vdiag(vb, n1, i, 1.0).collect();
                // |Z_nn| <= q_n c~
                let mut up = vi.clone();
                up.push(qt(i, 1.0 - cm));
                p.add_constraint(up, Sense::Le, 1.0);
                let mut lo = vi.clone();
                lo.push(qt(i, 1.0 + cm));
                p.add_constraint(lo, Sense::Ge, 1.0);
                p.add_constraint(vi, Sense::Le, cm);
                p.add_constraint([qt(i, 1.0)], Sense::Le, 1.0);
            }
            let w = mu * MW * lay.gain_scale;
            if w != 0.0 {
                p.maximize((0..n).map(|i| qt(i, -w * (1.0 - 2.0 * q_prev[i]))));
            }
        }
        Modes::Frozen(q) => {
            for i in 0..n {
                let vi: Vec<_> = vdiag(vb, n1, i, 1.0).collect();
                if q[i] {
                    p.add_constraint(vi, Sense::Le, cm);
                } else {
                    p.add_constraint(vi, Sense::Eq, 1.0);
                }
            }
        }
    }
    (p, lay)
}

/// Which right-hand side to use in the `V`-to-`Z` coupling rows of the explicit family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingSlack {
    /// `(1 - q_i) c~`: forces `V_ij = 0` whenever exactly one of `i`, `j` is active.
    AsWritten,
    /// `(2 - q_i - q_j) c~`: exact for `Z = Q V Q` at binary `q`.
    Corrected,
}

/// Explicit big-M family with `Z` as free variables, for `N <= 3` cross-checks.
pub fn build_p12_full(
    cfg: &SystemConfig,
    mats: &P12Matrices,
    q_prev: &[f64],
    mu: f64,
    slack: CouplingSlack,
) -> (SdpProblem, P12Layout) {
    let n = mats.n();
    assert!(n <= 3, "explicit big-M family is only meant for tiny instances");
    let n1 = n + 1;
    let cm = big_m(cfg);
    let (mut p, mut lay) = start(mats);
    let vb = lay.v_block;
    let qr = p.add_nonneg(n);
    let qt = |i: usize, a: f64| (Var::Nonneg(qr.start + i), a / cm);
    let mut z: Vec<Vec<(usize, Option<usize>)>> = vec![vec![(0, None); n]; n];
    for i in 0..n {
        for j in i..n {
            let re = p.add_free(1).start;
            let im = if i != j { Some(p.add_free(1).start) } else { None };
            z[i][j] = (re, im);
        }
    }
    let z_re = |i: usize| Var::Free(z[i][i].0);

    // Over ordered pairs, the row and column big-M bounds cap |Re Z_ij| and
    // |Im Z_ij| by both q_i c~ and q_j c~, and the V - Z coupling is symmetric
    // under (i, j) -> (j, i) up to conjugation, so unordered pairs suffice.
    for i in 0..n {
        for j in i..n {
            let (re, im) = z[i][j];
            let mut parts = vec![(Var::Free(re), entry_re(vb, n1, i, j))];
            if let Some(im) = im {
                parts.push((Var::Free(im), entry_im(vb, n1, i, j)));
            }
            let slacks: Vec<Vec<(usize, f64)>> = match slack {
                CouplingSlack::AsWritten => vec![vec![(i, 1.0)], vec![(j, 1.0)]],
                CouplingSlack::Corrected => vec![vec![(i, 1.0), (j, 1.0)]],
            };
            for (zv, vt) in parts {
                for g in [i, j] {
                    p.add_constraint([(zv, 1.0), qt(g, -cm)], Sense::Le, 0.0);
                    p.add_constraint([(zv, 1.0), qt(g, cm)], Sense::Ge, 0.0);
                }
                for sl in &slacks {
                    // |Z - V| <= (len(sl) - sum q) c~
                    let base = sl.len() as f64 * cm;
                    let diff: Vec<(Var, f64)> =
                        std::iter::once((zv, 1.0)).chain(vt.iter().map(|&(v, c)| (v, -c))).collect();
                    let mut up = diff.clone();
                    up.extend(sl.iter().map(|&(g, _)| qt(g, cm)));
                    p.add_constraint(up, Sense::Le, base);
                    let mut lo = diff;
                    lo.extend(sl.iter().map(|&(g, _)| qt(g, -cm)));
                    p.add_constraint(lo, Sense::Ge, -base);
                }
            }
        }
    }
    let pw = mats.power_weight() * MW;
    for i in 0..n {
        let vi = entry_re(vb, n1, i, i);
        p.add_constraint(vi.clone(), Sense::Le, cm);
        let mut amp = vi;
        amp.push((z_re(i), -1.0));
        amp.push(qt(i, 1.0));
        p.add_constraint(amp, Sense::Eq, 1.0);
        p.add_constraint([qt(i, 1.0)], Sense::Le, 1.0);
    }
    for k in 0..cfg.k() {
        let gamma = cfg.gamma[k];
        if gamma <= 0.0 {
            continue;
        }
        let s = 1.0 / (cfg.sigma2_cu[k] * MW);
        let mut terms = herm_terms(vb, &(mats.sinr_form(k, gamma) * Complex64::from(MW * s)));
        terms.extend((0..n).map(|i| (z_re(i), -mats.sigma_ris[k][i] * MW * s)));
        p.add_constraint(terms, Sense::Ge, mats.c[k] * MW * s);
    }
    let ps = 1.0 / (cfg.p_ris_max * MW);
    p.add_constraint((0..n).map(|i| (z_re(i), pw[i] * ps)), Sense::Le, 1.0);
    for l in 0..cfg.l() {
        let xs = 1.0 / (cfg.xi_ris_max * MW);
        p.add_constraint((0..n).map(|i| (z_re(i), mats.p_tar[l][i] * MW * xs)), Sense::Le, 1.0);
    }
    let w = mu * MW * lay.gain_scale;
    if w != 0.0 {
        p.maximize((0..n).map(|i| qt(i, -w * (1.0 - 2.0 * q_prev[i]))));
    }
    lay.q_vars = Some(qr);
    lay.q_scale = cm;
    lay.z_vars = Some(z);
    (p, lay)
}

/// Relaxed solution of the RIS subproblem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct P12Solution {
    /// `min_l v^H Rbar_tar[l] v` over the lifted `V` (W).
    pub rho_dd: f64,
    pub v: CMatrix,
    pub z: CMatrix,
    pub q: Vec<f64>,
    /// Penalized objective `rho'' - mu * penalty` (W), constant terms included.
    pub objective: f64,
    pub optimal: bool,
    pub iterations: usize,
}

/// Convex upper bound of `sum_n q_n (1 - q_n)` tangent at `q_prev`.
pub fn penalty_linearized(q: &[f64], q_prev: &[f64]) -> f64 {
    q.iter()
        .zip(q_prev)
        .map(|(&x, &p)| x - p * p - 2.0 * p * (x - p))
        .sum()
}

pub fn penalty(q: &[f64]) -> f64 {
    q.iter().map(|&x| x - x * x).sum()
}

fn extract(
    mats: &P12Matrices,
    lay: &P12Layout,
    sol: &hris_conic::SdpSolution,
    modes: &Modes,
) -> P12Solution {
    let n = lay.n;
    let v = real_to_herm(&sol.psd[lay.v_block]);
    let q: Vec<f64> = match modes {
        Modes::Relaxed { .. } => {
            let r = lay.q_vars.clone().unwrap();
            r.map(|i| (sol.nonneg[i] / lay.q_scale).clamp(0.0, 1.0)).collect()
        }
        Modes::Frozen(q) => q.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect(),
    };
    let z = match &lay.z_vars {
        Some(zv) => CMatrix::from_fn(n, n, |i, j| {
            let (a, b) = (i.min(j), i.max(j));
            let (re, im) = zv[a][b];
            let im = im.map_or(0.0, |k| sol.free[k]);
            Complex64::new(sol.free[re], if i <= j { im } else { -im })
        }),
        None => CMatrix::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::from(v[(i, i)].re - 1.0 + q[i])
            } else {
                v[(i, j)] * (q[i] * q[j])
            }
        }),
    };
    let rho_dd = mats
        .rbar_tar
        .iter()
        .map(|r| (r * &v).trace().re)
        .fold(f64::INFINITY, f64::min);
    let objective = match modes {
        Modes::Relaxed { q_prev, mu } => rho_dd - mu * penalty_linearized(&q, q_prev),
        Modes::Frozen(_) => rho_dd,
    };
    P12Solution { rho_dd, v, z, q, objective, optimal: sol.status == Status::Optimal, iterations: sol.iterations }
}

/// Outcome of one subproblem solve; `None` when the solver reports infeasible,
/// unbounded or a numerical failure.
pub fn solve_p12_modes(
    cfg: &SystemConfig,
    mats: &P12Matrices,
    modes: &Modes,
    opts: &SolveOptions,
) -> Result<(Status, Option<P12Solution>)> {
    let (p, lay) = build_p12_modes(cfg, mats, modes);
    let sol = solve_sdp(&p, opts)?;
    if sol.status != Status::Optimal {
        return Ok((sol.status, None));
    }
    Ok((sol.status, Some(extract(mats, &lay, &sol, modes))))
}

pub fn solve_p12(
    cfg: &SystemConfig,
    mats: &P12Matrices,
    q_prev: &[f64],
    mu: f64,
    opts: &SolveOptions,
) -> Result<(Status, Option<P12Solution>)> {
    solve_p12_modes(cfg, mats, &Modes::Relaxed { q_prev: q_prev.to_vec(), mu }, opts)
}

pub fn solve_p12_full(
    cfg: &SystemConfig,
    mats: &P12Matrices,
    q_prev: &[f64],
    mu: f64,
    slack: CouplingSlack,
    opts: &SolveOptions,
) -> Result<(Status, Option<P12Solution>)> {
    let (p, lay) = build_p12_full(cfg, mats, q_prev, mu, slack);
    let sol = solve_sdp(&p, opts)?;
    if sol.status != Status::Optimal {
        return Ok((sol.status, None));
    }
    let modes = Modes::Relaxed { q_prev: q_prev.to_vec(), mu };
    Ok((sol.status, Some(extract(mats, &lay, &sol, &modes))))
}

/// `q_n >= 0.5` rounds to active. Returns the modes and `max_n min(q_n, 1 - q_n)`.
pub fn round_modes(q: &[f64]) -> (Vec<bool>, f64) {
    let gap = binarity_gap(q);
    (q.iter().map(|&x| x >= 0.5).collect(), gap)
}

/// Deviation of `V_nn` from 1 above which [`amplitude_modes`] calls an element active.
pub const AMPLITUDE_MODE_TOL: f64 = 1e-2;

/// Smallest binary modes under which the lifted diagonal is attainable:
/// passive elements need `V_nn = 1`, so any element whose relaxed squared
/// amplitude departs from 1 by more than `tol` must be active. In the relaxed
/// problem `V_nn <= 1 + q_n (c~ - 1)`, so a small `q_n` can still carry a
/// large amplitude that threshold rounding would discard.
pub fn amplitude_modes(v: &CMatrix, tol: f64) -> Vec<bool> {
    let n = v.nrows().saturating_sub(1);
    (0..n).map(|i| (v[(i, i)].re - 1.0).abs() > tol).collect()
}

pub fn binarity_gap(q: &[f64]) -> f64 {
    q.iter().map(|&x| x.min(1.0 - x)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaOptions {
    pub gap_tol: f64,
    pub max_inner: usize,
    /// First penalty weight relative to the unpenalized `rho''`.
    pub mu_init_rel: f64,
    pub mu_growth: f64,
    /// Cap on `mu` relative to its first value.
    pub mu_cap_rel: f64,
}

impl Default for ScaOptions {
    fn default() -> Self {
        ScaOptions { gap_tol: 0.01, max_inner: 20, mu_init_rel: 1e-2, mu_growth: 10.0, mu_cap_rel: 1e6 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaOutcome {
    pub solution: P12Solution,
    pub inner_iterations: usize,
    pub mu: f64,
    pub gap: f64,
    /// Relaxed `rho''` of the unpenalized first solve (W).
    pub rho_unpenalized: f64,
    /// Modes implied by the unpenalized solve's diagonal; see [`amplitude_modes`].
    pub unpenalized_modes: Vec<bool>,
}

/// Penalized SCA loop: an unpenalized solve, then repeated solves linearized
/// at the previous `q` with `mu` escalating while the binarity gap exceeds
/// `gap_tol`. Returns `None` if the first solve is not optimal.
pub fn sca_solve(
    cfg: &SystemConfig,
    mats: &P12Matrices,
    sca: &ScaOptions,
    opts: &SolveOptions,
) -> Result<Option<ScaOutcome>> {
    let n = mats.n();
    let (_, first) = solve_p12(cfg, mats, &vec![0.0; n], 0.0, opts)?;
    let Some(mut best) = first else { return Ok(None) };
    let rho0 = best.rho_dd;
    let unpenalized_modes = amplitude_modes(&best.v, AMPLITUDE_MODE_TOL);
    let mu0 = sca.mu_init_rel * rho0.abs().max(f64::MIN_POSITIVE);
    let mut mu = 0.0;
    let mut iters = 1;
    while binarity_gap(&best.q) > sca.gap_tol && iters < sca.max_inner {
        mu = if mu == 0.0 { mu0 } else { (mu * sca.mu_growth).min(mu0 * sca.mu_cap_rel) };
        let (_, next) = solve_p12(cfg, mats, &best.q, mu, opts)?;
        iters += 1;
        match next {
            Some(s) => best = s,
            None => break,
        }
    }
    let gap = binarity_gap(&best.q);
    Ok(Some(ScaOutcome { solution: best, inner_iterations: iters, mu, gap, rho_unpenalized: rho0, unpenalized_modes }))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RandomizationDiagnostics {
    /// Eigenvalues of `V*` above `1e-7 lambda_max`.
    pub rank: usize,
    pub eigenvector_shortcut: bool,
    pub samples: usize,
    pub discarded: usize,
    pub feasible: usize,
    pub selected_objective: Option<f64>,
    pub selected_index: Option<usize>,
}

/// Maps a lifted vector (last entry already 1) to a configuration with modes `q`.
pub fn project(v: &CVector, q: &[bool], beta_max: f64) -> RisConfiguration {
    let n = q.len();
    let mut beta = Vec::with_capacity(n);
    let mut theta = Vec::with_capacity(n);
    for i in 0..n {
        theta.push(wrap_phase(v[i].arg()));
        beta.push(if q[i] { v[i].norm().min(beta_max) } else { 1.0 });
    }
    RisConfiguration { q: q.to_vec(), beta, theta }
}

/// Gaussian randomization around `V*` restricted to the modes `q_hat`.
///
/// Candidates are audited with `ev` at relative tolerance `tol`; the feasible
/// candidate with the largest minimum gain wins, ties going to the lowest
/// index. Index 0 is the leading eigenvector; sampled candidates follow.
pub fn gaussian_randomize(
    v_star: &CMatrix,
    q_hat: &[bool],
    ev: &Evaluator,
    cfg: &SystemConfig,
    l_gau: usize,
    seed: u64,
    tol: f64,
) -> (Option<RisConfiguration>, RandomizationDiagnostics) {
    let n = q_hat.len();
    let herm = (v_star + v_star.adjoint()) * Complex64::from(0.5);
    let eig = SymmetricEigen::new(herm);
    let lmax = eig.eigenvalues.max();
    let mut order: Vec<usize> = (0..=n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut diag = RandomizationDiagnostics {
        rank: eig.eigenvalues.iter().filter(|&&x| x > 1e-7 * lmax).count(),
        ..Default::default()
    };
    if !(lmax > 0.0) {
        return (None, diag);
    }

    let mut best: Option<(f64, usize, RisConfiguration)> = None;
    let mut consider = |idx: usize, mut v: CVector, diag: &mut RandomizationDiagnostics| {
        let last = v[n];
        if last.norm() < 1e-9 {
            diag.discarded += 1;
            return;
        }
        v /= last;
        let ris = project(&v, q_hat, cfg.beta_max);
        let e = ev.evaluate(&ris.phi(), q_hat);
        if !e.feasible(cfg, tol) {
            return;
        }
        diag.feasible += 1;
        let g = e.min_gain();
        if best.as_ref().is_none_or(|(bg, _, _)| g > *bg) {
            best = Some((g, idx, ris));
        }
    };

    let lead = eig.eigenvectors.column(order[0]).into_owned();
    consider(0, lead, &mut diag);
    let second = if n > 0 { eig.eigenvalues[order[1]] } else { 0.0 };
    if second <= 1e-7 * lmax {
        diag.eigenvector_shortcut = true;
    } else {
        // v = U Lambda^{1/2} xi over the numerically nonzero eigenpairs.
        let keep: Vec<usize> = order.iter().copied().filter(|&i| eig.eigenvalues[i] > 1e-12 * lmax).collect();
        let mut basis = CMatrix::zeros(n + 1, keep.len());
        for (c, &i) in keep.iter().enumerate() {
            let s = eig.eigenvalues[i].sqrt();
            basis.set_column(c, &(eig.eigenvectors.column(i) * Complex64::from(s)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for s in 0..l_gau {
            let xi = DVector::from_fn(keep.len(), |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(h * re, h * im)
            });
            consider(s + 1, &basis * xi, &mut diag);
        }
        diag.samples = l_gau;
    }
    match best {
        Some((g, idx, ris)) => {
            diag.selected_objective = Some(g);
            diag.selected_index = Some(idx);
            (Some(ris), diag)
        }
        None => (None, diag),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bs_stage::{construct_beamformers, solve_p11};
    use crate::metrics::equivalent_cu_channel;
    use crate::model::generate_channels;
    use proptest::prelude::*;
    use rand::Rng;

    fn tiny() -> SystemConfig {
        let mut cfg = SystemConfig::reference_default();
        cfg.m = 2;
        cfg.nx = 2;
        cfg.ny = 1;
        cfg.cu_pos.truncate(1);
        cfg.sigma2_cu.truncate(1);
        cfg.gamma.truncate(1);
        cfg.target_angles.truncate(1);
        cfg
    }

    fn instance(cfg: &SystemConfig, seed: u64) -> (ChannelSet, BeamformingSolution, RisConfiguration) {
        let ch = generate_channels(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ris = RisConfiguration::passive((0..cfg.n()).map(|_| rng.random::<f64>() * 6.0 + 0.1).collect());
        let (sol, ctx) = solve_p11(cfg, &ch, &ris, &SolveOptions::default()).unwrap();
        assert!(sol.is_optimal());
        let bf = construct_beamformers(cfg, &sol, &ctx).unwrap();
        (ch, bf, ris)
    }

    fn lifted(phi: &CVector) -> CVector {
        let n = phi.len();
        CVector::from_fn(n + 1, |i, _| if i < n { phi[i] } else { Complex64::from(1.0) })
    }

    fn form(m: &CMatrix, v: &CVector) -> f64 {
        v.dotc(&(m * v)).re
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn lifted_forms_reproduce_direct_metrics() {
        let mut cfg = SystemConfig::reference_default();
        cfg.nx = 3;
        cfg.ny = 2;
        let (ch, bf, _) = instance(&cfg, 3);
        let mats = build_p12_matrices(&cfg, &ch, &bf);
        let ev = Evaluator::new(&cfg, &ch, &bf);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = cfg.n();
        let ris = RisConfiguration {
            q: (0..n).map(|i| i % 2 == 0).collect(),
            beta: (0..n).map(|i| if i % 2 == 0 { rng.random::<f64>() * 5.0 } else { 1.0 }).collect(),
            theta: (0..n).map(|_| rng.random::<f64>() * 6.0).collect(),
        };
        let v = lifted(&ris.phi());
        let e = ev.evaluate(&ris.phi(), &ris.q);
        for l in 0..cfg.l() {
            assert!(rel(form(&mats.rbar_tar[l], &v), e.gains[l]) < 1e-10);
        }
        for k in 0..cfg.k() {
            let h = equivalent_cu_channel(&ch, &ris, k);
            for (j, w) in bf.w.iter().enumerate() {
                // The direct-path power is carried by the constant `c`.
                let lhs = form(&mats.rbar_cu[k][j], &v) + ch.h_bu[k].dotc(w).norm_sqr();
                assert!(rel(lhs, h.dotc(w).norm_sqr()) < 1e-10);
            }
        }
        let pw = mats.power_weight();
        let lhs: f64 = (0..n).filter(|&i| ris.q[i]).map(|i| ris.beta[i].powi(2) * pw[i]).sum();
        assert!(rel(lhs, e.ris_power) < 1e-12);
    }

    #[test]
    fn target_noise_weights_are_sigma2() {
        let cfg = tiny();
        let (ch, bf, _) = instance(&cfg, 1);
        let mats = build_p12_matrices(&cfg, &ch, &bf);
        for p in &mats.p_tar {
            assert!(p.iter().all(|&x| rel(x, cfg.sigma2_ris) < 1e-12));
        }
    }

    #[test]
    fn zero_reflect_channel_gives_zero_target_forms() {
        let cfg = tiny();
        let (mut ch, bf, _) = instance(&cfg, 1);
        ch.g.fill(Complex64::from(0.0));
        let mats = build_p12_matrices(&cfg, &ch, &bf);
        assert!(mats.rbar_tar.iter().all(|r| r.norm() == 0.0));
        for i in 0..cfg.n() {
            assert_eq!(mats.power_weight()[i], cfg.sigma2_ris);
        }
    }

    /// Passive-only SDP written without any mode or coupling machinery.
    fn passive_sdp(cfg: &SystemConfig, mats: &P12Matrices) -> f64 {
        let n = mats.n();
        let mut p = SdpProblem::new();
        let vb = p.add_psd_block(2 * (n + 1));
        let t = Var::Free(p.add_free(1).start);
        p.maximize([(t, 1.0)]);
        for r in &mats.rbar_tar {
            let mut terms = herm_terms(vb, &(r * Complex64::from(1e9)));
            terms.push((t, -1.0));
            p.add_constraint(terms, Sense::Ge, 0.0);
        }
        for i in 0..=n {
            p.add_constraint(entry_re(vb, n + 1, i, i), Sense::Eq, 1.0);
        }
        for k in 0..cfg.k() {
            let s = 1.0 / cfg.sigma2_cu[k];
            let terms = herm_terms(vb, &(mats.sinr_form(k, cfg.gamma[k]) * Complex64::from(s)));
            p.add_constraint(terms, Sense::Ge, mats.c[k] * s);
        }
        let sol = solve_sdp(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        sol.value(t) / 1e9
    }

    #[test]
    fn frozen_passive_matches_independent_sdp() {
        let mut cfg = SystemConfig::reference_default();
        cfg.nx = 2;
        cfg.ny = 2;
        let (ch, bf, _) = instance(&cfg, 2);
        let mats = build_p12_matrices(&cfg, &ch, &bf);
        let (st, sol) =
            solve_p12_modes(&cfg, &mats, &Modes::Frozen(vec![false; 4]), &SolveOptions::default()).unwrap();
        assert_eq!(st, Status::Optimal);
        let sol = sol.unwrap();
        assert!(rel(sol.rho_dd, passive_sdp(&cfg, &mats)) < 1e-6);
        for i in 0..4 {
            assert!((sol.v[(i, i)].re - 1.0).abs() < 1e-6);
            assert_eq!(sol.z[(i, i)].re, sol.v[(i, i)].re - 1.0);
        }
    }

    #[test]
    fn explicit_coupling_family_matches_reduced_form() {
        let cfg = tiny();
        let opts = SolveOptions::default();
        for seed in 1..=3 {
            let (ch, bf, _) = instance(&cfg, seed);
            let mats = build_p12_matrices(&cfg, &ch, &bf);
            for (q_prev, mu_rel) in [(vec![0.0, 0.0], 0.0), (vec![0.3, 0.8], 1e-2)] {
                let (_, base) = solve_p12(&cfg, &mats, &q_prev, 0.0, &opts).unwrap();
                let mu = mu_rel * base.unwrap().rho_dd;
                let (_, red) = solve_p12(&cfg, &mats, &q_prev, mu, &opts).unwrap();
                let (_, cor) = solve_p12_full(&cfg, &mats, &q_prev, mu, CouplingSlack::Corrected, &opts).unwrap();
                let (_, asw) = solve_p12_full(&cfg, &mats, &q_prev, mu, CouplingSlack::AsWritten, &opts).unwrap();
                let (red, cor) = (red.unwrap(), cor.unwrap());
                let scale = red.rho_dd.abs();
                assert!((red.objective - cor.objective).abs() < 1e-6 * scale, "seed {seed}");
                if let Some(a) = asw {
                    assert!(a.objective <= red.objective + 1e-6 * scale);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn linearized_penalty_majorizes(pairs in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..16)) {
            let (q, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assert!(penalty_linearized(&q, &p) >= penalty(&q) - 1e-12);
            prop_assert!((penalty_linearized(&p, &p) - penalty(&p)).abs() < 1e-12);
        }

        #[test]
        fn rounding_moves_each_entry_at_most_the_gap(q in prop::collection::vec(0.0f64..=1.0, 1..16)) {
            let (modes, gap) = round_modes(&q);
            for (x, m) in q.iter().zip(&modes) {
                let b = if *m { 1.0 } else { 0.0 };
                prop_assert!((x - b).abs() <= gap + 1e-15);
            }
        }
    }

    #[test]
    fn rounding_examples() {
        let (m, gap) = round_modes(&[0.98, 0.02]);
        assert_eq!(m, vec![true, false]);
        assert!((gap - 0.02).abs() < 1e-15);
        assert_eq!(round_modes(&[0.5]).0, vec![true]);
        assert_eq!(binarity_gap(&[0.0, 1.0]), 0.0);
    }

    #[test]
    fn amplitude_modes_flag_non_unit_diagonal() {
        let v = CMatrix::from_diagonal(&CVector::from_vec(
            [1.0, 1.005, 40.0, 0.2, 1.0].map(Complex64::from).to_vec(),
        ));
        assert_eq!(amplitude_modes(&v, AMPLITUDE_MODE_TOL), vec![false, false, true, true]);
    }

    #[test]
    fn rank_one_input_takes_eigenvector_shortcut() {
        let cfg = tiny();
        let (ch, bf, ris) = instance(&cfg, 1);
        let mats = build_p12_matrices(&cfg, &ch, &bf);
        let ev = Evaluator::new(&cfg, &ch, &bf);
        let v = lifted(&ris.phi());
        let vv = &v * v.adjoint();
        let (out, diag) = gaussian_randomize(&vv, &[false, false], &ev, &cfg, 100, 1, 1e-6);
        assert!(diag.eigenvector_shortcut);
        assert_eq!(diag.samples, 0);
        let out = out.unwrap();
        let got = ev.evaluate(&out.phi(), &out.q).min_gain();
        assert!(rel(got, form(&mats.rbar_tar[0], &v)) < 1e-6);
    }

    #[test]
    fn zero_corner_discards_every_candidate() {
        let cfg = tiny();
        let (ch, bf, _) = instance(&cfg, 1);
        let ev = Evaluator::new(&cfg, &ch, &bf);
        let mut vv = CMatrix::identity(3, 3);
        vv[(2, 2)] = Complex64::from(0.0);
        vv[(0, 1)] = Complex64::new(0.2, 0.1);
        vv[(1, 0)] = Complex64::new(0.2, -0.1);
        let (out, diag) = gaussian_randomize(&vv, &[false, false], &ev, &cfg, 50, 1, 1e-6);
        assert!(out.is_none());
        assert_eq!(diag.discarded, 51);
        assert_eq!(diag.feasible, 0);
    }

    #[test]
    fn relaxation_upper_bounds_grid_search() {
        let cfg = tiny();
        let (ch, bf, _) = instance(&cfg, 5);
        let mats = build_p12_matrices(&cfg, &ch, &bf);
        let ev = Evaluator::new(&cfg, &ch, &bf);
        let (_, relaxed) = solve_p12(&cfg, &mats, &[0.0, 0.0], 0.0, &SolveOptions::default()).unwrap();
        let bound = relaxed.unwrap().rho_dd;
        // Each element: passive on 32 phases, or active on 32 phases x 8 amplitudes.
        let mut options = Vec::new();
        for p in 0..32 {
            let th = 2.0 * std::f64::consts::PI * p as f64 / 32.0;
            options.push((false, Complex64::from_polar(1.0, th)));
            for b in 1..=8 {
                options.push((true, Complex64::from_polar(cfg.beta_max * b as f64 / 8.0, th)));
            }
        }
        let mut best = 0.0f64;
        for &(q0, p0) in &options {
            for &(q1, p1) in &options {
                let e = ev.evaluate(&CVector::from_vec(vec![p0, p1]), &[q0, q1]);
                if e.feasible(&cfg, 0.0) {
                    best = best.max(e.min_gain());
                }
            }
        }
        assert!(best > 0.0);
        assert!(bound >= best * (1.0 - 1e-6), "relaxed {bound} below grid {best}");
    }

    #[test]
    fn unreachable_sinr_is_reported_infeasible() {
        let cfg = tiny();
        let (ch, bf, _) = instance(&cfg, 1);
        let mut hard = cfg.clone();
        hard.gamma = vec![1e6];
        let mats = build_p12_matrices(&hard, &ch, &bf);
        let (st, sol) = solve_p12(&hard, &mats, &[0.0, 0.0], 0.0, &SolveOptions::default()).unwrap();
        assert_ne!(st, Status::Optimal);
        assert!(sol.is_none());
    }
}
