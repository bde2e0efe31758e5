//! Homogeneous self-dual interior-point method.
//!
//! Embedding (internal minimization form, `z_f = 0` for free variables):
//!
//! ```text
//!  A x - b tau          = 0
//! -A'y - z + c tau      = 0
//!  b'y - c'x - kappa    = 0,   x, z in K,  tau, kappa >= 0
//! ```
//!
//! Each iteration forms the Schur complement `M = A_K D A_K'` of the cone
//! variables, eliminates the free variables through `S = A_f' M^-1 A_f`, and
//! takes a Mehrotra predictor-corrector step in Nesterov-Todd scaling.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

use crate::cones::{jordan, lin_max_step, psd_max_step, psd_rs, PsdScaling};
use crate::kkt::residuals_of;
use crate::stdform::{Point, StdForm};
use crate::{Residuals, Result, SdpProblem, SdpSolution, Status};

/// Entries with at most this many upper-triangle coefficients use the
/// pairwise Schur-complement formula; larger ones go through `G A G`.
const SPARSE_ROW_NNZ: usize = 16;
const STEP_FRACTION: f64 = 0.99;

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Relative tolerance on primal feasibility, dual feasibility and gap.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-7, max_iter: 200 }
    }
}

const REFINE_STEPS: usize = 4;
/// Iterations without a new best residual before giving up.
const STALL_ITERS: usize = 15;

#[derive(Clone)]
struct State {
    x: Point,
    z: Point,
    y: DVector<f64>,
    tau: f64,
    kappa: f64,
}

struct Dir {
    dx: Point,
    dz: Point,
    dy: DVector<f64>,
    dtau: f64,
    dkappa: f64,
}

/// Factorization of a symmetric matrix after Jacobi equilibration, so the
/// regularization floor is relative to each row rather than the largest one.
struct SchurFactor {
    s: DVector<f64>,
    kind: FactorKind,
}

enum FactorKind {
    Chol(Cholesky<f64, Dyn>),
    Lu(LU<f64, Dyn, Dyn>),
}

impl SchurFactor {
    fn new(m: DMatrix<f64>) -> Option<Self> {
        let n = m.nrows();
        let s = DVector::from_iterator(
            n,
            (0..n).map(|i| {
                let d = m[(i, i)].abs();
                if d > 0.0 && d.is_finite() { 1.0 / d.sqrt() } else { 1.0 }
            }),
        );
        let mut ms = m;
        for j in 0..n {
            for i in 0..n {
                ms[(i, j)] *= s[i] * s[j];
            }
        }
        let mut reg = 1e-14;
        for _ in 0..6 {
            let mut mm = ms.clone();
            for i in 0..n {
                mm[(i, i)] += reg;
            }
            if let Some(c) = mm.cholesky() {
                return Some(SchurFactor { s, kind: FactorKind::Chol(c) });
            }
            reg *= 100.0;
        }
        let lu = ms.lu();
        if lu.is_invertible() {
            Some(SchurFactor { s, kind: FactorKind::Lu(lu) })
        } else {
            None
        }
    }

    fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut bs = b.clone();
        for mut col in bs.column_iter_mut() {
            col.component_mul_assign(&self.s);
        }
        let mut x = match &self.kind {
            FactorKind::Chol(c) => c.solve(&bs),
            FactorKind::Lu(l) => l.solve(&bs).unwrap_or_else(|| DMatrix::zeros(b.nrows(), b.ncols())),
        };
        for mut col in x.column_iter_mut() {
            col.component_mul_assign(&self.s);
        }
        x
    }

    fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let bs = b.component_mul(&self.s);
        let x = match &self.kind {
            FactorKind::Chol(c) => c.solve(&bs),
            FactorKind::Lu(l) => l.solve(&bs).unwrap_or_else(|| DVector::zeros(b.len())),
        };
        x.component_mul(&self.s)
    }
}

/// Scaling and factorizations shared by the predictor and corrector solves.
struct Newton<'a> {
    sf: &'a StdForm,
    d_lin: DVector<f64>,
    w_lin: DVector<f64>,
    lam_lin: DVector<f64>,
    psd: Vec<PsdScaling>,
    m: DMatrix<f64>,
    mfac: SchurFactor,
    af: DMatrix<f64>,
    minv_af: DMatrix<f64>,
    sfac: Option<SchurFactor>,
    // sigma-independent second system
    t2: Point,
    a_t2: DVector<f64>,
    dy2: DVector<f64>,
    dxf2: DVector<f64>,
}

impl<'a> Newton<'a> {
    fn new(sf: &'a StdForm, st: &State) -> Option<Self> {
        let d_lin = st.x.lin.component_div(&st.z.lin);
        let w_lin = d_lin.map(f64::sqrt);
        let lam_lin = st.x.lin.component_mul(&st.z.lin).map(f64::sqrt);
        let psd = st
            .x
            .psd
            .iter()
            .zip(&st.z.psd)
            .map(|(x, z)| PsdScaling::new(x, z))
            .collect::<Option<Vec<_>>>()?;

        let m = schur_matrix(sf, &d_lin, &psd);
        let mfac = SchurFactor::new(m.clone())?;
        let af = sf.free_matrix();
        let (minv_af, sfac) = if sf.nf > 0 {
            let minv_af = mfac.solve(&af);
            let s = af.transpose() * &minv_af;
            let s = (&s + s.transpose()) * 0.5;
            (minv_af, Some(SchurFactor::new(s)?))
        } else {
            (DMatrix::zeros(sf.m, 0), None)
        };

        let mut t2 = Point::zeros(sf.nf, sf.nl, &sf.orders);
        t2.lin = -d_lin.component_mul(&sf.c.lin);
        for (i, sc) in psd.iter().enumerate() {
            t2.psd[i] = -sc.apply_d(&sf.c.psd[i]);
        }
        let mut a_t2 = DVector::zeros(sf.m);
        sf.a_mul_cone_into(&t2, &mut a_t2);

        let mut nt = Newton {
            sf,
            d_lin,
            w_lin,
            lam_lin,
            psd,
            m,
            mfac,
            af,
            minv_af,
            sfac,
            t2,
            a_t2,
            dy2: DVector::zeros(0),
            dxf2: DVector::zeros(0),
        };
        let p2 = &sf.b - &nt.a_t2;
        let (dy2, dxf2) = nt.saddle(&p2, &sf.c.free);
        nt.dy2 = dy2;
        nt.dxf2 = dxf2;
        Some(nt)
    }

    fn saddle_once(&self, r1: &DVector<f64>, r2: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let my = self.mfac.solve_vec(r1);
        match &self.sfac {
            None => (my, DVector::zeros(0)),
            Some(sfac) => {
                let rhs = self.af.transpose() * &my - r2;
                let dxf = sfac.solve_vec(&rhs);
                let dy = my - &self.minv_af * &dxf;
                (dy, dxf)
            }
        }
    }

    /// Solves `[M A_f; A_f' 0] [dy; dxf] = [r1; r2]`, refining while the
    /// residual keeps shrinking.
    fn saddle(&self, r1: &DVector<f64>, r2: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (mut dy, mut dxf) = self.saddle_once(r1, r2);
        let mut prev = f64::INFINITY;
        for _ in 0..REFINE_STEPS {
            let res1 = r1 - (&self.m * &dy + &self.af * &dxf);
            let res2 = r2 - self.af.transpose() * &dy;
            let norm = res1.norm() + res2.norm();
            if norm >= 0.5 * prev || norm == 0.0 {
                break;
            }
            prev = norm;
            let (cy, cf) = self.saddle_once(&res1, &res2);
            dy += cy;
            dxf += cf;
        }
        (dy, dxf)
    }

    /// Scaled directions `(W^-1 dx, W^T dz)` per cone.
    fn scaled(&self, d: &Dir) -> (DVector<f64>, DVector<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let sx_lin = d.dx.lin.component_div(&self.w_lin);
        let sz_lin = d.dz.lin.component_mul(&self.w_lin);
        let sx_psd = self.psd.iter().zip(&d.dx.psd).map(|(s, m)| s.scale_primal(m)).collect();
        let sz_psd = self.psd.iter().zip(&d.dz.psd).map(|(s, m)| s.scale_dual(m)).collect();
        (sx_lin, sz_lin, sx_psd, sz_psd)
    }

    fn max_step(&self, st: &State, d: &Dir) -> (f64, Corr) {
        let (sx_lin, sz_lin, sx_psd, sz_psd) = self.scaled(d);
        let mut a = lin_max_step(&self.lam_lin, &sx_lin).min(lin_max_step(&self.lam_lin, &sz_lin));
        for (i, sc) in self.psd.iter().enumerate() {
            a = a.min(psd_max_step(&sc.lambda, &sx_psd[i]));
            a = a.min(psd_max_step(&sc.lambda, &sz_psd[i]));
        }
        if d.dtau < 0.0 {
            a = a.min(-st.tau / d.dtau);
        }
        if d.dkappa < 0.0 {
            a = a.min(-st.kappa / d.dkappa);
        }
        let corr = Corr {
            lin: sx_lin.component_mul(&sz_lin),
            psd: sx_psd.iter().zip(&sz_psd).map(|(a, b)| jordan(a, b)).collect(),
            tau: d.dtau * d.dkappa,
        };
        (a, corr)
    }

    fn direction(&self, st: &State, res: &Resid, mu: f64, sigma: f64, corr: Option<&Corr>) -> Dir {
        let sf = self.sf;
        let smu = sigma * mu;
        let om = 1.0 - sigma;

        // t1 = W r_s - (1 - sigma) D r_d
        let mut t1 = Point::zeros(sf.nf, sf.nl, &sf.orders);
        for j in 0..sf.nl {
            let l = self.lam_lin[j];
            let e = corr.map_or(0.0, |c| c.lin[j]);
            let rs = (smu - l * l - e) / l;
            t1.lin[j] = self.w_lin[j] * rs - om * self.d_lin[j] * res.d.lin[j];
        }
        for (i, sc) in self.psd.iter().enumerate() {
            let rs = psd_rs(&sc.lambda, smu, corr.map(|c| &c.psd[i]));
            t1.psd[i] = sc.unscale_primal(&rs) - sc.apply_d(&res.d.psd[i]) * om;
        }
        let mut a_t1 = DVector::zeros(sf.m);
        sf.a_mul_cone_into(&t1, &mut a_t1);
        let p1 = &res.p * om - &a_t1;
        let (dy1, dxf1) = self.saddle(&p1, &(&res.d.free * om));

        let c = &sf.c;
        let cdx1 = c.cone_dot(&t1) - self.a_t2.dot(&dy1) + c.free.dot(&dxf1);
        let cdx2 = c.cone_dot(&self.t2) - self.a_t2.dot(&self.dy2) + c.free.dot(&self.dxf2);
        let e_tau = corr.map_or(0.0, |c| c.tau);
        let comp = smu - st.tau * st.kappa - e_tau;
        let num = -om * res.g - comp / st.tau + sf.b.dot(&dy1) - cdx1;
        let den = -st.kappa / st.tau - sf.b.dot(&self.dy2) + cdx2;
        let dtau = num / den;

        let dy = dy1 + &self.dy2 * dtau;
        let aty = sf.at_mul(&dy);
        let mut dx = t1;
        dx.axpy(dtau, &self.t2);
        dx.free = dxf1 + &self.dxf2 * dtau;
        dx.lin += self.d_lin.component_mul(&aty.lin);
        for (i, sc) in self.psd.iter().enumerate() {
            dx.psd[i] += sc.apply_d(&aty.psd[i]);
        }
        let mut dz = Point::zeros(0, sf.nl, &sf.orders);
        dz.lin = &res.d.lin * om + &c.lin * dtau - &aty.lin;
        for i in 0..sf.orders.len() {
            dz.psd[i] = &res.d.psd[i] * om + &c.psd[i] * dtau - &aty.psd[i];
        }
        let dkappa = (comp - st.kappa * dtau) / st.tau;
        Dir { dx, dz, dy, dtau, dkappa }
    }
}

struct Corr {
    lin: DVector<f64>,
    psd: Vec<DMatrix<f64>>,
    tau: f64,
}

struct Resid {
    p: DVector<f64>,
    d: Point,
    g: f64,
}

fn schur_matrix(sf: &StdForm, d_lin: &DVector<f64>, psd: &[PsdScaling]) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::zeros(sf.m, sf.m);
    for (j, col) in sf.lin_cols.iter().enumerate() {
        let dj = d_lin[j];
        for &(r1, a1) in col {
            for &(r2, a2) in col {
                m[(r1, r2)] += a1 * a2 * dj;
            }
        }
    }
    for (bi, rows) in sf.blocks.iter().enumerate() {
        let g = &psd[bi].g;
        let n = g.nrows();
        let is_sparse: Vec<bool> = rows.iter().map(|r| r.entries.len() <= SPARSE_ROW_NNZ).collect();
        // Sparse-sparse pairs: <A_i, G A_k G> over expanded entries.
        let full: Vec<Vec<(usize, usize, f64)>> = rows
            .iter()
            .map(|r| {
                let mut f = Vec::with_capacity(2 * r.entries.len());
                for &(p, q, v) in &r.entries {
                    f.push((p, q, v));
                    if p != q {
                        f.push((q, p, v));
                    }
                }
                f
            })
            .collect();
        for a in 0..rows.len() {
            if !is_sparse[a] {
                continue;
            }
            for c in a..rows.len() {
                if !is_sparse[c] {
                    continue;
                }
                let mut s = 0.0;
                for &(p, q, v) in &full[a] {
                    for &(r, t, w) in &full[c] {
                        s += v * w * g[(q, r)] * g[(t, p)];
                    }
                }
                let (r1, r2) = (rows[a].row, rows[c].row);
                m[(r1, r2)] += s;
                if r1 != r2 {
                    m[(r2, r1)] += s;
                }
            }
        }
        // Rows with many entries: T = G A G, then <A_k, T> for every k.
        for a in 0..rows.len() {
            if is_sparse[a] {
                continue;
            }
            let amat = match &rows[a].dense {
                Some(d) => d.clone(),
                None => {
                    let mut d = DMatrix::zeros(n, n);
                    rows[a].add_to(&mut d, 1.0);
                    d
                }
            };
            let t = g * amat * g;
            for c in 0..rows.len() {
                if !is_sparse[c] && c < a {
                    continue;
                }
                let s = rows[c].inner(&t);
                let (r1, r2) = (rows[a].row, rows[c].row);
                m[(r1, r2)] += s;
                if r1 != r2 {
                    m[(r2, r1)] += s;
                }
            }
        }
    }
    m
}

fn residuals(sf: &StdForm, st: &State) -> Resid {
    let ax = sf.a_mul(&st.x);
    let p = &sf.b * st.tau - ax;
    let aty = sf.at_mul(&st.y);
    let mut d = sf.c.clone();
    d.scale(st.tau);
    d.axpy(-1.0, &aty);
    d.lin -= &st.z.lin;
    for (di, zi) in d.psd.iter_mut().zip(&st.z.psd) {
        *di -= zi;
    }
    let g = st.kappa - sf.b.dot(&st.y) + sf.c.dot(&st.x);
    Resid { p, d, g }
}

struct Measures {
    pres: f64,
    dres: f64,
    gap: f64,
}

impl Measures {
    fn max(&self) -> f64 {
        self.pres.max(self.dres).max(self.gap)
    }
}

fn measures(sf: &StdForm, st: &State, res: &Resid) -> Measures {
    let pcost = sf.c.dot(&st.x) / st.tau;
    let dcost = sf.b.dot(&st.y) / st.tau;
    Measures {
        pres: res.p.norm() / st.tau / (1.0 + sf.b.norm()),
        dres: res.d.norm() / st.tau / (1.0 + sf.c.norm()),
        gap: (pcost - dcost).abs() / 1f64.max(pcost.abs()).max(dcost.abs()),
    }
}

fn extract(p: &SdpProblem, sf: &StdForm, st: &State, status: Status, iterations: usize) -> SdpSolution {
    let inv = 1.0 / st.tau;
    let psd: Vec<DMatrix<f64>> = st
        .x
        .psd
        .iter()
        .map(|x| (x + x.transpose()) * (0.5 * inv))
        .collect();
    let nonneg = st.x.lin.rows(0, sf.n_user_nonneg) * inv;
    let free = &st.x.free * inv;
    let duals = sf.recover_duals(&(&st.y * inv));
    let objective = SdpProblem::eval_terms(p.objective(), &psd, &nonneg, &free);
    let dual_objective = p.constraints().iter().zip(&duals).map(|(c, u)| c.rhs * u).sum();
    let residuals = residuals_of(p, &psd, &nonneg, &free, &duals);
    SdpSolution {
        status,
        psd,
        nonneg,
        free,
        duals,
        objective,
        dual_objective,
        residuals,
        iterations,
    }
}

fn infeasibility(sf: &StdForm, st: &State, tol: f64) -> Option<Status> {
    let by = sf.b.dot(&st.y);
    if by > 0.0 {
        let mut r = sf.at_mul(&st.y);
        r.lin += &st.z.lin;
        for (ri, zi) in r.psd.iter_mut().zip(&st.z.psd) {
            *ri += zi;
        }
        if r.norm() / by <= tol {
            return Some(Status::Infeasible);
        }
    }
    let cx = sf.c.dot(&st.x);
    if cx < 0.0 && sf.a_mul(&st.x).norm() / (-cx) <= tol {
        return Some(Status::Unbounded);
    }
    None
}

/// Solves `p` to relative tolerance `opts.tol`.
///
/// Returns `Err` only for malformed problems. Infeasibility, unboundedness
/// and iteration-cap exits are reported through [`SdpSolution::status`]; in
/// the last case the iterate with the smallest residual is attached.
pub fn solve_sdp(p: &SdpProblem, opts: &SolveOptions) -> Result<SdpSolution> {
    p.validate()?;
    let sf = StdForm::from_problem(p);
    let nu = sf.cone_dim() as f64;

    let mut x = Point::zeros(sf.nf, sf.nl, &sf.orders);
    x.lin.fill(1.0);
    for (xi, &n) in x.psd.iter_mut().zip(&sf.orders) {
        *xi = DMatrix::identity(n, n);
    }
    let mut z = x.clone();
    z.free = DVector::zeros(0);
    let mut st = State { x, z, y: DVector::zeros(sf.m), tau: 1.0, kappa: 1.0 };

    let mut best: Option<(f64, State, usize)> = None;
    let mut stalls = 0;
    for it in 0..opts.max_iter {
        let res = residuals(&sf, &st);
        let meas = measures(&sf, &st, &res);
        if meas.max() <= opts.tol {
            let sol = extract(p, &sf, &st, Status::Optimal, it);
            if sol.residuals.max() <= opts.tol {
                return Ok(sol);
            }
        }
        if best.as_ref().is_none_or(|b| meas.max() < b.0) {
            best = Some((meas.max(), st.clone(), it));
        } else if best.as_ref().is_some_and(|b| it - b.2 >= STALL_ITERS) {
            break;
        }
        if let Some(status) = infeasibility(&sf, &st, opts.tol) {
            return Ok(extract(p, &sf, &st, status, it));
        }

        let mu = (st.x.cone_dot(&st.z) + st.tau * st.kappa) / (nu + 1.0);
        let Some(nt) = Newton::new(&sf, &st) else {
            break;
        };
        let aff = nt.direction(&st, &res, mu, 0.0, None);
        let (a_aff, corr) = nt.max_step(&st, &aff);
        let sigma = (1.0 - a_aff.min(1.0)).powi(3);
        let dir = nt.direction(&st, &res, mu, sigma, Some(&corr));
        let (a_max, _) = nt.max_step(&st, &dir);
        let mut alpha = (STEP_FRACTION * a_max).min(1.0);
        if !alpha.is_finite() || alpha <= 0.0 {
            break;
        }

        let mut accepted = false;
        for _ in 0..8 {
            let mut cand = st.clone();
            cand.x.axpy(alpha, &dir.dx);
            cand.z.lin.axpy(alpha, &dir.dz.lin, 1.0);
            for (zi, dzi) in cand.z.psd.iter_mut().zip(&dir.dz.psd) {
                *zi += dzi * alpha;
            }
            for m in cand.x.psd.iter_mut().chain(cand.z.psd.iter_mut()) {
                *m = (&*m + m.transpose()) * 0.5;
            }
            cand.y.axpy(alpha, &dir.dy, 1.0);
            cand.tau += alpha * dir.dtau;
            cand.kappa += alpha * dir.dkappa;
            let interior = cand.tau > 0.0
                && cand.kappa > 0.0
                && cand.x.lin.iter().chain(cand.z.lin.iter()).all(|&v| v > 0.0)
                && cand
                    .x
                    .psd
                    .iter()
                    .chain(cand.z.psd.iter())
                    .all(|m| m.clone().cholesky().is_some());
            if interior {
                st = cand;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        stalls = if alpha < 1e-8 { stalls + 1 } else { 0 };
        if stalls >= 5 {
            break;
        }
    }

    let (_, st, it) = best.expect("at least one iteration recorded");
    let mut sol = extract(p, &sf, &st, Status::NumericalFailure, it);
    if sol.residuals.max() <= opts.tol {
        sol.status = Status::Optimal;
    }
    Ok(sol)
}

impl SdpSolution {
    /// Residuals recomputed from `p` rather than the stored copy.
    pub fn recheck(&self, p: &SdpProblem) -> Residuals {
        residuals_of(p, &self.psd, &self.nonneg, &self.free, &self.duals)
    }
}
