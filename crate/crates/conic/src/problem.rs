use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::{ConicError, Residuals, Result};

/// Reference to one scalar entry of the decision variables.
///
/// PSD entries address the upper triangle only (`row <= col`). A term
/// `(Var::Psd { block, row, col }, c)` contributes `c * X[row, col]`; for
/// off-diagonal entries the symmetric partner is not counted again.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    Psd { block: usize, row: usize, col: usize },
    Nonneg(usize),
    Free(usize),
}

impl Var {
    pub fn psd(block: usize, row: usize, col: usize) -> Self {
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        Var::Psd { block, row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `lhs <= rhs`
    Le,
    /// `lhs >= rhs`
    Ge,
    /// `lhs == rhs`
    Eq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub terms: Vec<(Var, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Maximize a linear functional over PSD blocks, a nonnegative vector and a
/// free vector, subject to linear constraints.
#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    psd_orders: Vec<usize>,
    n_nonneg: usize,
    n_free: usize,
    objective: Vec<(Var, f64)>,
    constraints: Vec<Constraint>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a new symmetric PSD block of the given order and returns its index.
    pub fn add_psd_block(&mut self, order: usize) -> usize {
        self.psd_orders.push(order);
        self.psd_orders.len() - 1
    }

    /// Appends `count` nonnegative scalars; returns their index range.
    pub fn add_nonneg(&mut self, count: usize) -> Range<usize> {
        let start = self.n_nonneg;
        self.n_nonneg += count;
        start..self.n_nonneg
    }

    /// Appends `count` free scalars; returns their index range.
    pub fn add_free(&mut self, count: usize) -> Range<usize> {
        let start = self.n_free;
        self.n_free += count;
        start..self.n_free
    }

    /// Adds terms to the (maximized) objective.
    pub fn maximize<I: IntoIterator<Item = (Var, f64)>>(&mut self, terms: I) {
        self.objective.extend(terms);
    }

    pub fn add_constraint<I: IntoIterator<Item = (Var, f64)>>(
        &mut self,
        terms: I,
        sense: Sense,
        rhs: f64,
    ) -> usize {
        self.constraints.push(Constraint {
            terms: terms.into_iter().collect(),
            sense,
            rhs,
        });
        self.constraints.len() - 1
    }

    pub fn psd_orders(&self) -> &[usize] {
        &self.psd_orders
    }

    pub fn n_nonneg(&self) -> usize {
        self.n_nonneg
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn objective(&self) -> &[(Var, f64)] {
        &self.objective
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    fn check_var(&self, v: Var) -> Result<()> {
        match v {
            Var::Psd { block, row, col } => {
                let order = *self.psd_orders.get(block).ok_or_else(|| {
                    ConicError::InvalidProblem(format!("PSD block {block} not declared"))
                })?;
                if row > col {
                    return Err(ConicError::InvalidProblem(format!(
                        "PSD entry ({row},{col}) of block {block} is below the diagonal"
                    )));
                }
                if col >= order {
                    return Err(ConicError::InvalidProblem(format!(
                        "PSD entry ({row},{col}) out of range for block {block} of order {order}"
                    )));
                }
            }
            Var::Nonneg(i) if i >= self.n_nonneg => {
                return Err(ConicError::InvalidProblem(format!(
                    "nonnegative index {i} out of range ({})",
                    self.n_nonneg
                )))
            }
            Var::Free(i) if i >= self.n_free => {
                return Err(ConicError::InvalidProblem(format!(
                    "free index {i} out of range ({})",
                    self.n_free
                )))
            }
            _ => {}
        }
        Ok(())
    }

    /// Checks that every referenced entry is declared and all data is finite.
    pub fn validate(&self) -> Result<()> {
        if self.psd_orders.iter().any(|&n| n == 0) {
            return Err(ConicError::InvalidProblem("PSD block of order 0".into()));
        }
        for &(v, c) in &self.objective {
            self.check_var(v)?;
            if !c.is_finite() {
                return Err(ConicError::InvalidProblem("non-finite objective coefficient".into()));
            }
        }
        for (i, con) in self.constraints.iter().enumerate() {
            if !con.rhs.is_finite() {
                return Err(ConicError::InvalidProblem(format!("constraint {i}: non-finite rhs")));
            }
            for &(v, c) in &con.terms {
                self.check_var(v)?;
                if !c.is_finite() {
                    return Err(ConicError::InvalidProblem(format!(
                        "constraint {i}: non-finite coefficient"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Value of `terms` at a point given as (PSD blocks, nonneg, free).
    pub fn eval_terms(
        terms: &[(Var, f64)],
        psd: &[DMatrix<f64>],
        nonneg: &DVector<f64>,
        free: &DVector<f64>,
    ) -> f64 {
        terms
            .iter()
            .map(|&(v, c)| {
                c * match v {
                    Var::Psd { block, row, col } => psd[block][(row, col)],
                    Var::Nonneg(i) => nonneg[i],
                    Var::Free(i) => free[i],
                }
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

/// Primal/dual result of [`crate::solve_sdp`].
///
/// `duals[i]` is the multiplier of constraint `i` in the dual of the
/// maximization problem: nonnegative for `<=` rows, nonpositive for `>=`
/// rows, free for equalities. At optimality
/// `sum_i duals[i] * a_i - c` lies in the dual cone.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: Status,
    pub psd: Vec<DMatrix<f64>>,
    pub nonneg: DVector<f64>,
    pub free: DVector<f64>,
    pub duals: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub residuals: Residuals,
    pub iterations: usize,
}

impl SdpSolution {
    pub fn value(&self, v: Var) -> f64 {
        match v {
            Var::Psd { block, row, col } => self.psd[block][(row, col)],
            Var::Nonneg(i) => self.nonneg[i],
            Var::Free(i) => self.free[i],
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}
