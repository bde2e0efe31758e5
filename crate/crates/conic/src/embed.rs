//! Real embedding of complex Hermitian matrices.
//!
//! `emb(H) = [[Re H, -Im H], [Im H, Re H]]`. `H ⪰ 0` iff `emb(H) ⪰ 0`, and
//! `tr(C V) = ½⟨emb(C), emb(V)⟩` for Hermitian `C`, `V`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::{ConicError, Result, Var};

/// Maximum `|H_ij - conj(H_ji)|`.
pub fn hermitian_defect(h: &DMatrix<Complex64>) -> f64 {
    let n = h.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((h[(i, j)] - h[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Embeds a Hermitian matrix; rejects input whose defect exceeds `1e-10 * (1 + max|H_ij|)`.
pub fn herm_to_real(h: &DMatrix<Complex64>) -> Result<DMatrix<f64>> {
    if h.nrows() != h.ncols() {
        return Err(ConicError::InvalidProblem(format!(
            "expected a square matrix, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    let scale = h.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
    let defect = hermitian_defect(h);
    if defect > 1e-10 * (1.0 + scale) {
        return Err(ConicError::NotHermitian(defect));
    }
    Ok(embed_unchecked(h))
}

fn embed_unchecked(h: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = h.nrows();
    let mut x = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            x[(i, j)] = z.re;
            x[(n + i, n + j)] = z.re;
            x[(i, n + j)] = -z.im;
            x[(n + i, j)] = z.im;
        }
    }
    x
}

/// Recovers the complex matrix from a real `2n x 2n` block, Hermitized.
///
/// Uses the averaged quadrants so that a block which is only approximately
/// of embedding form maps to the nearest Hermitian matrix.
pub fn real_to_herm(x: &DMatrix<f64>) -> DMatrix<Complex64> {
    let n = x.nrows() / 2;
    let mut h = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for i in 0..n {
        for j in 0..n {
            let re = 0.5 * (x[(i, j)] + x[(n + i, n + j)]);
            let im = 0.5 * (x[(n + i, j)] - x[(i, n + j)]);
            h[(i, j)] = Complex64::new(re, im);
        }
    }
    let ht = h.adjoint();
    (h + ht) * Complex64::new(0.5, 0.0)
}

/// Linear terms over real block `block` (order `2n`) whose value equals
/// `Re tr(C V)` where `V = real_to_herm(X)` and `C` is `n x n`.
///
/// `C` need not be Hermitian; only its Hermitian part contributes.
pub fn herm_terms(block: usize, c: &DMatrix<Complex64>) -> Vec<(Var, f64)> {
    let n = c.nrows();
    let ch = (c + c.adjoint()) * Complex64::new(0.5, 0.0);
    let e = embed_unchecked(&ch);
    let mut terms = Vec::new();
    for i in 0..2 * n {
        let d = 0.5 * e[(i, i)];
        if d != 0.0 {
            terms.push((Var::Psd { block, row: i, col: i }, d));
        }
        for j in i + 1..2 * n {
            let v = e[(i, j)];
            if v != 0.0 {
                terms.push((Var::Psd { block, row: i, col: j }, v));
            }
        }
    }
    terms
}

/// Terms for `Re V_ij` of the complex matrix of order `n` stored in `block`.
pub fn entry_re(block: usize, n: usize, i: usize, j: usize) -> Vec<(Var, f64)> {
    if i == j {
        vec![
            (Var::psd(block, i, i), 0.5),
            (Var::psd(block, n + i, n + i), 0.5),
        ]
    } else {
        vec![
            (Var::psd(block, i, j), 0.5),
            (Var::psd(block, n + i, n + j), 0.5),
        ]
    }
}

/// Terms for `Im V_ij` (`i != j`) of the complex matrix of order `n` stored in `block`.
pub fn entry_im(block: usize, n: usize, i: usize, j: usize) -> Vec<(Var, f64)> {
    debug_assert_ne!(i, j);
    vec![
        (Var::psd(block, n + i, j), 0.5),
        (Var::psd(block, i, n + j), -0.5),
    ]
}
