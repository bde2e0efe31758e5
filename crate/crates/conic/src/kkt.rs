//! Optimality certificate check, assembled from the raw problem data only.

use nalgebra::{DMatrix, DVector};

use crate::{ConicError, Result, SdpProblem, SdpSolution, Sense, Status, Var};

/// Relative residuals of a primal/dual pair; all are `>= 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Residuals {
    pub primal_feas: f64,
    pub dual_feas: f64,
    pub gap: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.primal_feas.max(self.dual_feas).max(self.gap)
    }
}

/// Recomputes residuals of `sol` against `p`.
///
/// Rejects solutions that carry an infeasibility or unboundedness status,
/// since those hold a certificate rather than a primal/dual pair.
pub fn kkt_residuals(p: &SdpProblem, sol: &SdpSolution) -> Result<Residuals> {
    if matches!(sol.status, Status::Infeasible | Status::Unbounded) {
        return Err(ConicError::NotOptimal(sol.status));
    }
    check_layout(p, sol)?;
    Ok(residuals_of(p, &sol.psd, &sol.nonneg, &sol.free, &sol.duals))
}

fn check_layout(p: &SdpProblem, sol: &SdpSolution) -> Result<()> {
    let orders_ok = sol.psd.len() == p.psd_orders().len()
        && sol
            .psd
            .iter()
            .zip(p.psd_orders())
            .all(|(x, &n)| x.nrows() == n && x.ncols() == n);
    if !orders_ok
        || sol.nonneg.len() != p.n_nonneg()
        || sol.free.len() != p.n_free()
        || sol.duals.len() != p.n_constraints()
    {
        return Err(ConicError::LayoutMismatch(
            "block orders, vector lengths or dual count differ".into(),
        ));
    }
    Ok(())
}

fn min_eig(x: &DMatrix<f64>) -> (f64, f64) {
    let s = (x + x.transpose()) * 0.5;
    let ev = s.symmetric_eigenvalues();
    (ev.min(), ev.amax())
}

fn add_sym(m: &mut DMatrix<f64>, row: usize, col: usize, a: f64) {
    if row == col {
        m[(row, row)] += a;
    } else {
        m[(row, col)] += 0.5 * a;
        m[(col, row)] += 0.5 * a;
    }
}

pub(crate) fn residuals_of(
    p: &SdpProblem,
    psd: &[DMatrix<f64>],
    nonneg: &DVector<f64>,
    free: &DVector<f64>,
    u: &[f64],
) -> Residuals {
    let value = |v: Var| match v {
        Var::Psd { block, row, col } => psd[block][(row, col)],
        Var::Nonneg(i) => nonneg[i],
        Var::Free(i) => free[i],
    };

    let mut primal = 0.0_f64;
    for con in p.constraints() {
        let mut lhs = 0.0;
        let mut mag = 0.0;
        for &(v, a) in &con.terms {
            let t = a * value(v);
            lhs += t;
            mag += t.abs();
        }
        let viol = match con.sense {
            Sense::Eq => (lhs - con.rhs).abs(),
            Sense::Le => (lhs - con.rhs).max(0.0),
            Sense::Ge => (con.rhs - lhs).max(0.0),
        };
        primal = primal.max(viol / (1.0 + con.rhs.abs() + mag));
    }
    let xmax = nonneg.amax();
    for &x in nonneg.iter() {
        primal = primal.max((-x).max(0.0) / (1.0 + xmax));
    }
    for x in psd {
        let (lo, hi) = min_eig(x);
        primal = primal.max((-lo).max(0.0) / (1.0 + hi));
    }

    // Dual slack s = sum_i u_i a_i - c, with magnitudes for relative scaling.
    let orders = p.psd_orders();
    let mut s_psd: Vec<DMatrix<f64>> = orders.iter().map(|&n| DMatrix::zeros(n, n)).collect();
    let mut mag_psd = vec![0.0_f64; orders.len()];
    let mut s_lin = DVector::<f64>::zeros(p.n_nonneg());
    let mut mag_lin = DVector::<f64>::zeros(p.n_nonneg());
    let mut s_free = DVector::<f64>::zeros(p.n_free());
    let mut mag_free = DVector::<f64>::zeros(p.n_free());
    let mut accumulate = |v: Var, a: f64| match v {
        Var::Psd { block, row, col } => {
            add_sym(&mut s_psd[block], row, col, a);
            mag_psd[block] += a.abs();
        }
        Var::Nonneg(i) => {
            s_lin[i] += a;
            mag_lin[i] += a.abs();
        }
        Var::Free(i) => {
            s_free[i] += a;
            mag_free[i] += a.abs();
        }
    };
    for &(v, a) in p.objective() {
        accumulate(v, -a);
    }
    let umax = u.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let mut dual = 0.0_f64;
    for (con, &ui) in p.constraints().iter().zip(u) {
        let wrong_sign = match con.sense {
            Sense::Le => (-ui).max(0.0),
            Sense::Ge => ui.max(0.0),
            Sense::Eq => 0.0,
        };
        dual = dual.max(wrong_sign / (1.0 + umax));
        if ui != 0.0 {
            for &(v, a) in &con.terms {
                accumulate(v, ui * a);
            }
        }
    }
    for i in 0..s_free.len() {
        dual = dual.max(s_free[i].abs() / (1.0 + mag_free[i]));
    }
    for i in 0..s_lin.len() {
        dual = dual.max((-s_lin[i]).max(0.0) / (1.0 + mag_lin[i]));
    }
    for (s, mag) in s_psd.iter().zip(&mag_psd) {
        let (lo, _) = min_eig(s);
        dual = dual.max((-lo).max(0.0) / (1.0 + mag));
    }

    let pobj = SdpProblem::eval_terms(p.objective(), psd, nonneg, free);
    let dobj: f64 = p.constraints().iter().zip(u).map(|(c, &ui)| c.rhs * ui).sum();
    let gap = (pobj - dobj).abs() / 1f64.max(pobj.abs()).max(dobj.abs());

    Residuals { primal_feas: primal, dual_feas: dual, gap }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `max -t  s.t.  [[t, 1], [1, t]] ⪰ 0` stated with `X_01 = 1`, `X_00 - X_11 = 0`.
    fn t_problem() -> SdpProblem {
        let mut p = SdpProblem::new();
        let b = p.add_psd_block(2);
        p.maximize([(Var::psd(b, 0, 0), -1.0)]);
        p.add_constraint([(Var::psd(b, 0, 1), 1.0)], Sense::Eq, 1.0);
        p.add_constraint([(Var::psd(b, 0, 0), 1.0), (Var::psd(b, 1, 1), -1.0)], Sense::Eq, 0.0);
        p
    }

    fn sol_at(t: f64) -> SdpSolution {
        SdpSolution {
            status: Status::Optimal,
            psd: vec![DMatrix::from_row_slice(2, 2, &[t, 1.0, 1.0, t])],
            nonneg: DVector::zeros(0),
            free: DVector::zeros(0),
            duals: vec![-1.0, -0.5],
            objective: -t,
            dual_objective: -1.0,
            residuals: Residuals::default(),
            iterations: 0,
        }
    }

    #[test]
    fn analytic_pair_has_zero_residuals() {
        let r = kkt_residuals(&t_problem(), &sol_at(1.0)).unwrap();
        assert!(r.max() <= 1e-12, "{r:?}");
    }

    #[test]
    fn perturbed_primal_shows_gap() {
        let r = kkt_residuals(&t_problem(), &sol_at(1.1)).unwrap();
        assert!(r.primal_feas <= 1e-12);
        assert!((r.gap - 0.1 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn rejects_infeasible_status() {
        let mut s = sol_at(1.0);
        s.status = Status::Infeasible;
        assert!(matches!(
            kkt_residuals(&t_problem(), &s),
            Err(ConicError::NotOptimal(Status::Infeasible))
        ));
    }
}
