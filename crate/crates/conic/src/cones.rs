//! Nesterov-Todd scaling and Jordan-algebra helpers for the orthant and PSD cones.
//!
//! For a PSD pair `(X, Z)` the scaling matrix `R` satisfies
//! `R^-1 X R^-T = R^T Z R = diag(lambda)`. Scaled directions live in the
//! space where the current iterate is the diagonal matrix `diag(lambda)`.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub(crate) struct PsdScaling {
    pub r: DMatrix<f64>,
    pub rinv: DMatrix<f64>,
    /// `R R^T`; the operator `D(U) = G U G` equals `W W^T`.
    pub g: DMatrix<f64>,
    pub lambda: DVector<f64>,
}

impl PsdScaling {
    /// `None` if either matrix is not numerically positive definite.
    pub fn new(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<Self> {
        let lx = x.clone().cholesky()?.unpack();
        let lz = z.clone().cholesky()?.unpack();
        let svd = (lz.transpose() * &lx).svd(true, true);
        let u = svd.u?;
        let vt = svd.v_t?;
        let s = svd.singular_values;
        if s.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return None;
        }
        let isq = s.map(|v| 1.0 / v.sqrt());
        let mut r = lx * vt.transpose();
        for (j, mut col) in r.column_iter_mut().enumerate() {
            col *= isq[j];
        }
        let mut rinv = u.transpose() * lz.transpose();
        for (i, mut row) in rinv.row_iter_mut().enumerate() {
            row *= isq[i];
        }
        let g = &r * r.transpose();
        Some(PsdScaling { r, rinv, g, lambda: s })
    }

    /// `W^-1 dX = R^-1 dX R^-T`.
    pub fn scale_primal(&self, dx: &DMatrix<f64>) -> DMatrix<f64> {
        &self.rinv * dx * self.rinv.transpose()
    }

    /// `W^T dZ = R^T dZ R`.
    pub fn scale_dual(&self, dz: &DMatrix<f64>) -> DMatrix<f64> {
        self.r.transpose() * dz * &self.r
    }

    /// `W U = R U R^T`.
    pub fn unscale_primal(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        &self.r * u * self.r.transpose()
    }

    /// `D U = G U G`.
    pub fn apply_d(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        &self.g * u * &self.g
    }
}

/// `lambda \ (sigma_mu I - Lambda^2 - corr)` for diagonal `lambda`.
pub(crate) fn psd_rs(lambda: &DVector<f64>, sigma_mu: f64, corr: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    let n = lambda.len();
    let mut out = match corr {
        Some(c) => -c.clone(),
        None => DMatrix::zeros(n, n),
    };
    for i in 0..n {
        out[(i, i)] += sigma_mu - lambda[i] * lambda[i];
    }
    for j in 0..n {
        for i in 0..n {
            out[(i, j)] *= 2.0 / (lambda[i] + lambda[j]);
        }
    }
    out
}

/// Symmetrized product `(A B + B A) / 2`.
pub(crate) fn jordan(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let ab = a * b;
    (&ab + ab.transpose()) * 0.5
}

/// Largest `alpha` with `diag(lambda) + alpha * d ⪰ 0` (infinite if unbounded).
pub(crate) fn psd_max_step(lambda: &DVector<f64>, d: &DMatrix<f64>) -> f64 {
    let n = lambda.len();
    let isq = lambda.map(|v| 1.0 / v.sqrt());
    let mut t = d.clone();
    for j in 0..n {
        for i in 0..n {
            t[(i, j)] *= isq[i] * isq[j];
        }
    }
    let t = (&t + t.transpose()) * 0.5;
    let emin = t.symmetric_eigenvalues().min();
    if emin < 0.0 {
        -1.0 / emin
    } else {
        f64::INFINITY
    }
}

/// Largest `alpha` with `lambda + alpha * d >= 0` componentwise.
pub(crate) fn lin_max_step(lambda: &DVector<f64>, d: &DVector<f64>) -> f64 {
    lambda
        .iter()
        .zip(d.iter())
        .filter(|(_, &di)| di < 0.0)
        .map(|(&l, &di)| -l / di)
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut s = seed;
        let a = DMatrix::from_fn(n, n, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        });
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn nt_scaling_maps_both_to_lambda() {
        let x = spd(5, 1);
        let z = spd(5, 2);
        let sc = PsdScaling::new(&x, &z).unwrap();
        let lam = DMatrix::from_diagonal(&sc.lambda);
        assert!((sc.scale_primal(&x) - &lam).norm() < 1e-10);
        assert!((sc.scale_dual(&z) - &lam).norm() < 1e-10);
        // D maps Z to X.
        assert!((sc.apply_d(&z) - &x).norm() < 1e-10);
    }

    #[test]
    fn max_step_hits_boundary() {
        let lam = DVector::from_vec(vec![1.0, 2.0]);
        let d = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0]);
        assert!((psd_max_step(&lam, &d) - 1.0).abs() < 1e-12);
        assert_eq!(lin_max_step(&lam, &DVector::from_vec(vec![1.0, -4.0])), 0.5);
    }
}
