//! BS beamforming subproblem under a fixed RIS state: semidefinite relaxation
//! followed by an exactly rank-one construction.
//!
//! SDP data is assembled in milliwatts; everything returned is in watts.

use hris_conic::{herm_terms, real_to_herm, solve_sdp, SdpProblem, Sense, SolveOptions, Status, Var};
use num_complex::Complex64;

use crate::metrics::{cascaded_target_channel, equivalent_cu_channel, BeamformingSolution};
use crate::model::{CMatrix, CVector, ChannelSet, RisConfiguration, SystemConfig};
use crate::{HrisError, Result};

/// Watts to milliwatts.
pub(crate) const MW: f64 = 1e3;

/// Per-RIS-state data of the BS subproblem, in watts.
#[derive(Debug, Clone)]
pub struct P11Context {
    pub h_cu: Vec<CVector>,
    pub h_tar: Vec<CVector>,
    /// RIS-noise-plus-receiver-noise power at each CU; `b[k] >= sigma2_cu[k]`.
    pub b: Vec<f64>,
    /// `C` with `tr(C R) = tr(Phi Q G R G^H Q^H Phi^H)`.
    pub ris_power_map: CMatrix,
    pub frob_const: f64,
    /// PSD block index of each `W_k`, then of `R0`.
    pub w_blocks: Vec<usize>,
    pub r0_block: usize,
    pub rho_var: Var,
    /// Factor applied to the gain rows; `rho_var` holds `gain_scale * rho` in mW.
    pub gain_scale: f64,
}

pub fn build_context(cfg: &SystemConfig, ch: &ChannelSet, ris: &RisConfiguration) -> Result<P11Context> {
    ris.validate(None)?;
    let n = cfg.n();
    let h_cu = (0..cfg.k()).map(|k| equivalent_cu_channel(ch, ris, k)).collect();
    let h_tar = (0..cfg.l()).map(|l| cascaded_target_channel(ch, ris, l)).collect();
    let act = |i: usize| if ris.q[i] { ris.beta[i].powi(2) } else { 0.0 };
    let b = (0..cfg.k())
        .map(|k| {
            let s: f64 = (0..n).map(|i| act(i) * ch.h_iu[k][i].norm_sqr()).sum();
            s * cfg.sigma2_ris + cfg.sigma2_cu[k]
        })
        .collect();
    // G^H D G with D = diag(q beta^2).
    let mut dg = ch.g.clone();
    for (i, mut row) in dg.row_iter_mut().enumerate() {
        row *= Complex64::from(act(i));
    }
    let ris_power_map = ch.g.ad_mul(&dg);
    let frob_const = cfg.sigma2_ris * (0..n).map(act).sum::<f64>();
    Ok(P11Context {
        h_cu,
        h_tar,
        b,
        ris_power_map,
        frob_const,
        w_blocks: Vec::new(),
        r0_block: 0,
        rho_var: Var::Free(0),
        gain_scale: 1.0,
    })
}

fn outer(h: &CVector) -> CMatrix {
    h * h.adjoint()
}

/// Relaxed BS subproblem. Rows: BS power, RIS power, one SINR row per CU with
/// a positive threshold, one gain row per target.
pub fn build_p11(cfg: &SystemConfig, ch: &ChannelSet, ris: &RisConfiguration) -> Result<(SdpProblem, P11Context)> {
    let mut ctx = build_context(cfg, ch, ris)?;
    let m = cfg.m;
    let mut p = SdpProblem::new();
    ctx.w_blocks = (0..cfg.k()).map(|_| p.add_psd_block(2 * m)).collect();
    ctx.r0_block = p.add_psd_block(2 * m);
    let rho = Var::Free(p.add_free(1).start);
    ctx.rho_var = rho;
    let all_blocks: Vec<usize> = ctx.w_blocks.iter().copied().chain([ctx.r0_block]).collect();
    let over_all = |c: &CMatrix| -> Vec<(Var, f64)> {
        all_blocks.iter().flat_map(|&b| herm_terms(b, c)).collect()
    };
    let eye = CMatrix::identity(m, m);

    p.maximize([(rho, 1.0)]);
    p.add_constraint(over_all(&eye), Sense::Le, cfg.p0 * MW);
    // Relative to the budget, which can be many orders below P0.
    let ps = 1.0 / (cfg.p_ris_max * MW);
    p.add_constraint(
        over_all(&(&ctx.ris_power_map * Complex64::from(ps))),
        Sense::Le,
        (cfg.p_ris_max - ctx.frob_const) / cfg.p_ris_max,
    );
    for k in 0..cfg.k() {
        let gamma = cfg.gamma[k];
        if gamma <= 0.0 {
            continue;
        }
        // Scaled by 1/sigma2_k so the row is O(SINR).
        let s = 1.0 / (cfg.sigma2_cu[k] * MW);
        let hk = outer(&ctx.h_cu[k]) * Complex64::from(s);
        let mut terms = Vec::new();
        for (j, &blk) in ctx.w_blocks.iter().enumerate() {
            let coef = if j == k { 1.0 / gamma } else { -1.0 };
            terms.extend(herm_terms(blk, &(&hk * Complex64::from(coef))));
        }
        p.add_constraint(terms, Sense::Ge, ctx.b[k] * MW * s);
    }
    // Gain rows in units of the single-target optimum so the optimal rho is O(1).
    ctx.gain_scale = 1.0 / (cfg.p0 * MW * ctx.h_tar.iter().map(|h| h.norm_squared()).fold(0.0, f64::max)).max(1e-300);
    for h in &ctx.h_tar {
        let mut terms = over_all(&(outer(h) * Complex64::from(ctx.gain_scale)));
        terms.push((rho, -1.0));
        p.add_constraint(terms, Sense::Ge, 0.0);
    }
    Ok((p, ctx))
}

#[derive(Debug, Clone)]
pub struct P11Solution {
    pub status: Status,
    /// Relaxed per-CU covariances (W).
    pub w_star: Vec<CMatrix>,
    pub r0_star: CMatrix,
    /// `min_l h_l^H R h_l` at the relaxed solution (W).
    pub rho_prime: f64,
    pub iterations: usize,
}

impl P11Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

pub fn solve_p11(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    ris: &RisConfiguration,
    opts: &SolveOptions,
) -> Result<(P11Solution, P11Context)> {
    let (p, ctx) = build_p11(cfg, ch, ris)?;
    let sol = solve_sdp(&p, opts)?;
    let m = cfg.m;
    if !sol.is_optimal() {
        let zero = CMatrix::zeros(m, m);
        let out = P11Solution {
            status: sol.status,
            w_star: vec![zero.clone(); cfg.k()],
            r0_star: zero,
            rho_prime: f64::NAN,
            iterations: sol.iterations,
        };
        return Ok((out, ctx));
    }
    let extract = |b: usize| real_to_herm(&sol.psd[b]) * Complex64::from(1.0 / MW);
    let w_star: Vec<CMatrix> = ctx.w_blocks.iter().map(|&b| extract(b)).collect();
    let r0_star = extract(ctx.r0_block);
    let mut r = r0_star.clone();
    for w in &w_star {
        r += w;
    }
    let rho_prime = ctx
        .h_tar
        .iter()
        .map(|h| h.dotc(&(&r * h)).re)
        .fold(f64::INFINITY, f64::min);
    let out = P11Solution { status: sol.status, w_star, r0_star, rho_prime, iterations: sol.iterations };
    Ok((out, ctx))
}

/// `w_k = W_k h_k / sqrt(h_k^H W_k h_k)`, `R0 = R0* + sum W_k - sum w_k w_k^H`.
///
/// Preserves the total covariance and every SINR numerator. Fails with
/// [`HrisError::DegenerateCu`] when some `h_k^H W_k h_k` is not positive
/// relative to `tr(W_k) |h_k|^2`.
pub fn rank_one_construct(
    w_star: &[CMatrix],
    r0_star: &CMatrix,
    h_cu: &[CVector],
) -> Result<BeamformingSolution> {
    let mut r0 = r0_star.clone();
    let mut w = Vec::with_capacity(w_star.len());
    for (k, (wk, h)) in w_star.iter().zip(h_cu).enumerate() {
        let wh = wk * h;
        let e = h.dotc(&wh).re;
        let scale = wk.trace().re.abs() * h.norm_squared();
        if !(e > 1e-14 * scale) || !(scale > 0.0) {
            return Err(HrisError::DegenerateCu(k));
        }
        let v = wh / Complex64::from(e.sqrt());
        r0 += wk - &v * v.adjoint();
        w.push(v);
    }
    let r0_h = r0.adjoint();
    let r0 = (r0 + r0_h) * Complex64::from(0.5);
    Ok(BeamformingSolution { w, r0 })
}

/// Rank-one construction that tolerates unconstrained CUs: a CU with zero
/// threshold whose relaxed covariance is degenerate gets `w_k = 0` and its
/// covariance is folded into `R0`.
pub fn construct_beamformers(
    cfg: &SystemConfig,
    sol: &P11Solution,
    ctx: &P11Context,
) -> Result<BeamformingSolution> {
    let m = cfg.m;
    let mut r0 = sol.r0_star.clone();
    let mut ws = Vec::new();
    let mut hs = Vec::new();
    let mut idx = Vec::new();
    for k in 0..cfg.k() {
        let e = ctx.h_cu[k].dotc(&(&sol.w_star[k] * &ctx.h_cu[k])).re;
        let scale = sol.w_star[k].trace().re.abs() * ctx.h_cu[k].norm_squared();
        if cfg.gamma[k] <= 0.0 && !(e > 1e-14 * scale && scale > 0.0) {
            r0 += &sol.w_star[k];
        } else {
            ws.push(sol.w_star[k].clone());
            hs.push(ctx.h_cu[k].clone());
            idx.push(k);
        }
    }
    let part = rank_one_construct(&ws, &r0, &hs).map_err(|e| match e {
        HrisError::DegenerateCu(i) => HrisError::DegenerateCu(idx[i]),
        other => other,
    })?;
    let mut w = vec![CVector::zeros(m); cfg.k()];
    for (i, &k) in idx.iter().enumerate() {
        w[k] = part.w[i].clone();
    }
    Ok(BeamformingSolution { w, r0: part.r0 })
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(h: &CMatrix) -> f64 {
    let e = hris_conic::herm_to_real(&((h + h.adjoint()) * Complex64::from(0.5)))
        .expect("hermitized input");
    e.symmetric_eigenvalues().min()
}

/// Number of eigenvalues above `rel * lambda_max`.
pub fn numerical_rank(h: &CMatrix, rel: f64) -> usize {
    let e = hris_conic::herm_to_real(&((h + h.adjoint()) * Complex64::from(0.5)))
        .expect("hermitized input");
    let ev = e.symmetric_eigenvalues();
    let max = ev.max();
    // Each complex eigenvalue appears twice in the real embedding.
    ev.iter().filter(|&&x| x > rel * max && max > 0.0).count() / 2
}
