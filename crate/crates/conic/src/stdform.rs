//! Internal standard form: `min c'x  s.t.  A x = b,  x in R^f x R^l_+ x S_+...`.
//!
//! Inequality rows receive one orthant slack each. Rows are scaled to unit
//! norm and the objective to unit norm; [`StdForm::recover_duals`] undoes both.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::{Sense, SdpProblem, Var};

/// Entries `(p, q, v)` with `p <= q` of a symmetric matrix; `v` sits at both
/// `(p, q)` and `(q, p)`.
#[derive(Debug, Clone)]
pub(crate) struct BlockCoef {
    pub row: usize,
    pub entries: Vec<(usize, usize, f64)>,
    pub dense: Option<DMatrix<f64>>,
}

impl BlockCoef {
    /// `<A, X>` for symmetric `X`.
    pub fn inner(&self, x: &DMatrix<f64>) -> f64 {
        if let Some(d) = &self.dense {
            return d.dot(x);
        }
        self.entries
            .iter()
            .map(|&(p, q, v)| if p == q { v * x[(p, p)] } else { 2.0 * v * x[(p, q)] })
            .sum()
    }

    /// `out += s * A`.
    pub fn add_to(&self, out: &mut DMatrix<f64>, s: f64) {
        for &(p, q, v) in &self.entries {
            out[(p, q)] += s * v;
            if p != q {
                out[(q, p)] += s * v;
            }
        }
    }

    pub fn frob_sq(&self) -> f64 {
        self.entries
            .iter()
            .map(|&(p, q, v)| if p == q { v * v } else { 2.0 * v * v })
            .sum()
    }
}

/// Primal or dual point in the standard-form space.
#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub free: DVector<f64>,
    pub lin: DVector<f64>,
    pub psd: Vec<DMatrix<f64>>,
}

impl Point {
    pub fn zeros(nf: usize, nl: usize, orders: &[usize]) -> Self {
        Point {
            free: DVector::zeros(nf),
            lin: DVector::zeros(nl),
            psd: orders.iter().map(|&n| DMatrix::zeros(n, n)).collect(),
        }
    }

    /// Cone part only (free part ignored).
    pub fn cone_dot(&self, other: &Point) -> f64 {
        self.lin.dot(&other.lin)
            + self.psd.iter().zip(&other.psd).map(|(a, b)| a.dot(b)).sum::<f64>()
    }

    pub fn dot(&self, other: &Point) -> f64 {
        self.free.dot(&other.free) + self.cone_dot(other)
    }

    pub fn axpy(&mut self, a: f64, other: &Point) {
        self.free.axpy(a, &other.free, 1.0);
        self.lin.axpy(a, &other.lin, 1.0);
        for (s, o) in self.psd.iter_mut().zip(&other.psd) {
            *s += o * a;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.free *= a;
        self.lin *= a;
        for s in &mut self.psd {
            *s *= a;
        }
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct StdForm {
    pub m: usize,
    pub nf: usize,
    pub nl: usize,
    pub orders: Vec<usize>,
    /// Per free variable: `(row, coefficient)`.
    pub free_cols: Vec<Vec<(usize, f64)>>,
    /// Per orthant variable: `(row, coefficient)`.
    pub lin_cols: Vec<Vec<(usize, f64)>>,
    /// Per PSD block: the rows touching it.
    pub blocks: Vec<Vec<BlockCoef>>,
    pub b: DVector<f64>,
    pub c: Point,
    pub row_scale: DVector<f64>,
    pub obj_scale: f64,
    pub n_user_nonneg: usize,
}

impl StdForm {
    pub fn from_problem(p: &SdpProblem) -> Self {
        let m = p.n_constraints();
        let nf = p.n_free();
        let orders = p.psd_orders().to_vec();
        let n_slack = p.constraints().iter().filter(|c| c.sense != Sense::Eq).count();
        let nl = p.n_nonneg() + n_slack;

        let mut free_cols: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); nf];
        let mut lin_cols: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); nl];
        let mut block_rows: Vec<BTreeMap<usize, BTreeMap<(usize, usize), f64>>> =
            vec![BTreeMap::new(); orders.len()];
        let mut b = DVector::zeros(m);

        let mut slack = p.n_nonneg();
        for (i, con) in p.constraints().iter().enumerate() {
            b[i] = con.rhs;
            for &(v, a) in &con.terms {
                match v {
                    Var::Free(j) => *free_cols[j].entry(i).or_default() += a,
                    Var::Nonneg(j) => *lin_cols[j].entry(i).or_default() += a,
                    Var::Psd { block, row, col } => {
                        let val = if row == col { a } else { 0.5 * a };
                        *block_rows[block]
                            .entry(i)
                            .or_default()
                            .entry((row, col))
                            .or_default() += val;
                    }
                }
            }
            match con.sense {
                Sense::Le => {
                    lin_cols[slack].insert(i, 1.0);
                    slack += 1;
                }
                Sense::Ge => {
                    lin_cols[slack].insert(i, -1.0);
                    slack += 1;
                }
                Sense::Eq => {}
            }
        }

        let mut c = Point::zeros(nf, nl, &orders);
        for &(v, a) in p.objective() {
            // Maximization turned into minimization.
            match v {
                Var::Free(j) => c.free[j] -= a,
                Var::Nonneg(j) => c.lin[j] -= a,
                Var::Psd { block, row, col } => {
                    if row == col {
                        c.psd[block][(row, row)] -= a;
                    } else {
                        c.psd[block][(row, col)] -= 0.5 * a;
                        c.psd[block][(col, row)] -= 0.5 * a;
                    }
                }
            }
        }

        let strip = |m: BTreeMap<usize, f64>| -> Vec<(usize, f64)> {
            m.into_iter().filter(|&(_, a)| a != 0.0).collect()
        };
        let mut sf = StdForm {
            m,
            nf,
            nl,
            free_cols: free_cols.into_iter().map(strip).collect(),
            lin_cols: lin_cols.into_iter().map(strip).collect(),
            blocks: block_rows
                .into_iter()
                .enumerate()
                .map(|(bi, rows)| {
                    let n = orders[bi];
                    rows.into_iter()
                        .filter_map(|(row, ents)| {
                            let entries: Vec<_> = ents
                                .into_iter()
                                .filter(|&(_, v)| v != 0.0)
                                .map(|((p, q), v)| (p, q, v))
                                .collect();
                            if entries.is_empty() {
                                return None;
                            }
                            Some(BlockCoef { row, entries, dense: None }).map(|mut bc| {
                                if bc.entries.len() > n {
                                    let mut d = DMatrix::zeros(n, n);
                                    bc.add_to(&mut d, 1.0);
                                    bc.dense = Some(d);
                                }
                                bc
                            })
                        })
                        .collect()
                })
                .collect(),
            orders,
            b,
            c,
            row_scale: DVector::from_element(m, 1.0),
            obj_scale: 1.0,
            n_user_nonneg: p.n_nonneg(),
        };
        sf.equilibrate();
        sf
    }

    fn equilibrate(&mut self) {
        let mut nrm = DVector::<f64>::zeros(self.m);
        for col in self.free_cols.iter().chain(&self.lin_cols) {
            for &(i, a) in col {
                nrm[i] += a * a;
            }
        }
        for rows in &self.blocks {
            for bc in rows {
                nrm[bc.row] += bc.frob_sq();
            }
        }
        for i in 0..self.m {
            self.row_scale[i] = if nrm[i] > 0.0 { 1.0 / nrm[i].sqrt() } else { 1.0 };
        }
        let s = &self.row_scale;
        for col in self.free_cols.iter_mut().chain(self.lin_cols.iter_mut()) {
            for (i, a) in col.iter_mut() {
                *a *= s[*i];
            }
        }
        for rows in &mut self.blocks {
            for bc in rows.iter_mut() {
                let f = s[bc.row];
                for e in &mut bc.entries {
                    e.2 *= f;
                }
                if let Some(d) = &mut bc.dense {
                    *d *= f;
                }
            }
        }
        self.b.component_mul_assign(s);
        let cn = self.c.norm();
        if cn > 0.0 {
            self.obj_scale = cn;
            self.c.scale(1.0 / cn);
        }
    }

    pub fn cone_dim(&self) -> usize {
        self.nl + self.orders.iter().sum::<usize>()
    }

    /// `A x`.
    pub fn a_mul(&self, x: &Point) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        self.a_mul_cone_into(x, &mut out);
        for (j, col) in self.free_cols.iter().enumerate() {
            for &(i, a) in col {
                out[i] += a * x.free[j];
            }
        }
        out
    }

    /// `out += A_K x_K`.
    pub fn a_mul_cone_into(&self, x: &Point, out: &mut DVector<f64>) {
        for (j, col) in self.lin_cols.iter().enumerate() {
            for &(i, a) in col {
                out[i] += a * x.lin[j];
            }
        }
        for (bi, rows) in self.blocks.iter().enumerate() {
            for bc in rows {
                out[bc.row] += bc.inner(&x.psd[bi]);
            }
        }
    }

    /// `A^T y`, all parts.
    pub fn at_mul(&self, y: &DVector<f64>) -> Point {
        let mut out = Point::zeros(self.nf, self.nl, &self.orders);
        for (j, col) in self.free_cols.iter().enumerate() {
            out.free[j] = col.iter().map(|&(i, a)| a * y[i]).sum();
        }
        for (j, col) in self.lin_cols.iter().enumerate() {
            out.lin[j] = col.iter().map(|&(i, a)| a * y[i]).sum();
        }
        for (bi, rows) in self.blocks.iter().enumerate() {
            for bc in rows {
                if y[bc.row] != 0.0 {
                    bc.add_to(&mut out.psd[bi], y[bc.row]);
                }
            }
        }
        out
    }

    /// Dense `m x nf` matrix of free-variable columns.
    pub fn free_matrix(&self) -> DMatrix<f64> {
        let mut af = DMatrix::zeros(self.m, self.nf);
        for (j, col) in self.free_cols.iter().enumerate() {
            for &(i, a) in col {
                af[(i, j)] = a;
            }
        }
        af
    }

    /// Maps internal `y` back to user multipliers (`u = -y` in unscaled units).
    pub fn recover_duals(&self, y: &DVector<f64>) -> Vec<f64> {
        (0..self.m)
            .map(|i| -self.obj_scale * self.row_scale[i] * y[i])
            .collect()
    }
}
