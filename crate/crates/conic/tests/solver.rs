use hris_conic::{
    herm_terms, herm_to_real, kkt_residuals, real_to_herm, solve_sdp, SdpProblem, Sense,
    SolveOptions, Status, Var,
};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn opts() -> SolveOptions {
    SolveOptions::default()
}

fn sym_terms(block: usize, c: &DMatrix<f64>) -> Vec<(Var, f64)> {
    let n = c.nrows();
    let mut t = Vec::new();
    for i in 0..n {
        t.push((Var::psd(block, i, i), c[(i, i)]));
        for j in i + 1..n {
            t.push((Var::psd(block, i, j), 2.0 * c[(i, j)]));
        }
    }
    t
}

fn trace_terms(block: usize, n: usize) -> Vec<(Var, f64)> {
    (0..n).map(|i| (Var::psd(block, i, i), 1.0)).collect()
}

fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&a + a.transpose()) * 0.5
}

fn assert_close(got: f64, want: f64, tol: f64) {
    let rel = (got - want).abs() / 1f64.max(want.abs());
    assert!(rel <= tol, "got {got}, want {want}, rel {rel:e}");
}

#[test]
fn min_t_two_by_two() {
    let mut p = SdpProblem::new();
    let b = p.add_psd_block(2);
    p.maximize([(Var::psd(b, 0, 0), -1.0)]);
    p.add_constraint([(Var::psd(b, 0, 1), 1.0)], Sense::Eq, 1.0);
    p.add_constraint([(Var::psd(b, 0, 0), 1.0), (Var::psd(b, 1, 1), -1.0)], Sense::Eq, 0.0);
    let s = solve_sdp(&p, &opts()).unwrap();
    assert_eq!(s.status, Status::Optimal);
    assert_close(-s.objective, 1.0, 1e-6);
    assert!(kkt_residuals(&p, &s).unwrap().max() <= 1e-7);
}

#[test]
fn trace_cap() {
    let c = 3.5;
    let mut p = SdpProblem::new();
    let b = p.add_psd_block(4);
    p.maximize(trace_terms(b, 4));
    p.add_constraint(trace_terms(b, 4), Sense::Le, c);
    let s = solve_sdp(&p, &opts()).unwrap();
    assert_eq!(s.status, Status::Optimal);
    assert_close(s.objective, c, 1e-6);
}

#[test]
fn contradictory_bounds_are_infeasible() {
    let mut p = SdpProblem::new();
    let x = p.add_free(1).start;
    p.maximize([(Var::Free(x), 1.0)]);
    p.add_constraint([(Var::Free(x), 1.0)], Sense::Ge, 1.0);
    p.add_constraint([(Var::Free(x), 1.0)], Sense::Le, 0.0);
    let s = solve_sdp(&p, &opts()).unwrap();
    assert_eq!(s.status, Status::Infeasible);
    assert!(kkt_residuals(&p, &s).is_err());
}

#[test]
fn unbounded_ray_detected() {
    let mut p = SdpProblem::new();
    let b = p.add_psd_block(2);
    p.maximize([(Var::psd(b, 0, 0), 1.0)]);
    p.add_constraint([(Var::psd(b, 1, 1), 1.0)], Sense::Le, 1.0);
    let s = solve_sdp(&p, &opts()).unwrap();
    assert_eq!(s.status, Status::Unbounded);
}

#[test]
fn hermitian_round_trip_through_solver() {
    // max Re tr(C V) s.t. tr V = 1, V ⪰ 0  ->  lambda_max(C).
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 4;
    let a = DMatrix::from_fn(n, n, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let c = (&a + a.adjoint()) * Complex64::new(0.5, 0.0);
    let mut p = SdpProblem::new();
    let b = p.add_psd_block(2 * n);
    p.maximize(herm_terms(b, &c));
    p.add_constraint(
        herm_terms(b, &DMatrix::<Complex64>::identity(n, n)),
        Sense::Eq,
        1.0,
    );
    let s = solve_sdp(&p, &opts()).unwrap();
    assert_eq!(s.status, Status::Optimal);
    let lmax = c.clone().symmetric_eigenvalues().max();
    assert_close(s.objective, lmax, 1e-6);
    let x = &s.psd[0];
    for i in 0..n {
        for j in 0..n {
            assert!((x[(i, j)] - x[(n + i, n + j)]).abs() < 1e-6);
            assert!((x[(i, n + j)] + x[(n + i, j)]).abs() < 1e-6);
        }
    }
    let v = real_to_herm(x);
    assert!((herm_to_real(&v).unwrap() - x).norm() < 1e-6);
}

/// Random problems whose optimum follows from an eigendecomposition or is trivial.
#[test]
fn random_suite_with_known_optima() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50 {
        let n = rng.random_range(2..7);
        let c = random_sym(&mut rng, n);
        let eig = SymmetricEigen::new(c.clone()).eigenvalues;
        let mut p = SdpProblem::new();
        let b = p.add_psd_block(n);
        let want = match case % 5 {
            // max <C, X>, tr X = 1
            0 => {
                p.maximize(sym_terms(b, &c));
                p.add_constraint(trace_terms(b, n), Sense::Eq, 1.0);
                eig.max()
            }
            // max <C, X>, X ⪯ I via a slack block
            1 => {
                let s = p.add_psd_block(n);
                p.maximize(sym_terms(b, &c));
                for i in 0..n {
                    for j in i..n {
                        let rhs = if i == j { 1.0 } else { 0.0 };
                        p.add_constraint(
                            [(Var::psd(b, i, j), 1.0), (Var::psd(s, i, j), 1.0)],
                            Sense::Eq,
                            rhs,
                        );
                    }
                }
                eig.iter().filter(|&&v| v > 0.0).sum()
            }
            // max t, <C + shift I, X> >= t, tr X <= 2 (free epigraph variable)
            2 => {
                let t = p.add_free(1).start;
                let shift = 1.0 - eig.min();
                let cs = &c + DMatrix::identity(n, n) * shift;
                p.maximize([(Var::Free(t), 1.0)]);
                let mut terms = sym_terms(b, &cs);
                terms.push((Var::Free(t), -1.0));
                p.add_constraint(terms, Sense::Ge, 0.0);
                p.add_constraint(trace_terms(b, n), Sense::Le, 2.0);
                2.0 * (eig.max() + shift)
            }
            // LP: max c'x, x >= 0, sum x <= 1
            3 => {
                let xs = p.add_nonneg(n);
                let cv: Vec<f64> = (0..n).map(|i| c[(i, 0)]).collect();
                p.maximize(xs.clone().map(|i| (Var::Nonneg(i), cv[i])));
                p.add_constraint(xs.map(|i| (Var::Nonneg(i), 1.0)), Sense::Le, 1.0);
                p.add_constraint(trace_terms(b, n), Sense::Eq, 1.0);
                cv.iter().cloned().fold(0.0, f64::max)
            }
            // min <C, X>, tr X = 3 stated as max of -<C, X>
            _ => {
                p.maximize(sym_terms(b, &(-&c)));
                p.add_constraint(trace_terms(b, n), Sense::Eq, 3.0);
                -3.0 * eig.min()
            }
        };
        let s = solve_sdp(&p, &opts()).unwrap();
        assert_eq!(s.status, Status::Optimal, "case {case}");
        assert_close(s.objective, want, 1e-6);
        let r = kkt_residuals(&p, &s).unwrap();
        assert!(r.max() <= 1e-6, "case {case}: {r:?}");
        // Weak duality for the maximization.
        assert!(s.objective <= s.dual_objective + 1e-6 * 1f64.max(s.objective.abs()));
    }
}
