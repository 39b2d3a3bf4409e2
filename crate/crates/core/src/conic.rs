//! Conic program model and the interior-point solve contract.
//!
//! The optimizer layers build each subproblem as a linear objective over
//! affine inequalities and second-order cone (SOC) rows, expressed with
//! [`LinExpr`] so the modeling code reads like the math. Solving is delegated
//! to the Clarabel interior-point solver; constraint satisfaction at the
//! returned point is re-checked by an evaluator that is independent of the
//! solver's own residuals.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use thiserror::Error;

/// Affine expression `sum_i coeff_i * x_i + constant` over program variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }
    pub fn var(v: usize) -> Self {
        Self { terms: vec![(v, 1.0)], constant: 0.0 }
    }
    pub fn term(v: usize, coeff: f64) -> Self {
        Self { terms: vec![(v, coeff)], constant: 0.0 }
    }

    pub fn push(&mut self, v: usize, coeff: f64) {
        self.terms.push((v, coeff));
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>() + self.constant
    }

    /// Coefficients merged per variable, zero-coefficient entries dropped.
    pub fn compressed(&self) -> Self {
        let mut terms = self.terms.clone();
        terms.sort_by_key(|&(v, _)| v);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            match merged.last_mut() {
                Some((lv, lc)) if *lv == v => *lc += c,
                _ => merged.push((v, c)),
            }
        }
        merged.retain(|&(_, c)| c != 0.0);
        Self { terms: merged, constant: self.constant }
    }
}

impl std::ops::Add for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
        self
    }
}

impl std::ops::Sub for LinExpr {
    type Output = LinExpr;
    fn sub(self, rhs: LinExpr) -> LinExpr {
        self + (-rhs)
    }
}

impl std::ops::Neg for LinExpr {
    type Output = LinExpr;
    fn neg(mut self) -> LinExpr {
        for (_, c) in &mut self.terms {
            *c = -*c;
        }
        self.constant = -self.constant;
        self
    }
}

impl std::ops::Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(mut self, s: f64) -> LinExpr {
        for (_, c) in &mut self.terms {
            *c *= s;
        }
        self.constant *= s;
        self
    }
}

impl std::ops::AddAssign for LinExpr {
    fn add_assign(&mut self, rhs: LinExpr) {
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
    }
}

/// One second-order cone row set: `|| rows ||_2 <= rhs`.
#[derive(Debug, Clone)]
struct SocConstraint {
    rows: Vec<LinExpr>,
    rhs: LinExpr,
    name: String,
}

/// A maximize-objective conic program over affine-inequality and SOC rows.
#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    var_names: Vec<String>,
    objective: LinExpr,
    /// Each entry is `expr <= 0`.
    affine_le: Vec<(LinExpr, String)>,
    socs: Vec<SocConstraint>,
}

/// Outcome classification of one interior-point solve.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    AlmostOptimal,
    Infeasible,
    Unbounded,
    NumericalTrouble(String),
}

impl SolveStatus {
    /// Whether the primal point is trustworthy enough to keep iterating from.
    pub fn is_usable(&self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::AlmostOptimal)
    }
}

/// Primal solution of one subproblem.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x: Vec<f64>,
    pub status: SolveStatus,
    /// Objective value of the *maximize* program, recomputed from `x`.
    pub objective: f64,
    pub iterations: u32,
    /// Worst constraint violation at `x`, from the independent evaluator.
    pub max_violation: f64,
}

impl SolveResult {
    pub fn value(&self, var: usize) -> f64 {
        self.x[var]
    }
}

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("solver setup failed: {0}")]
    Setup(String),
    #[error("program has no variables")]
    Empty,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> usize {
        self.var_names.push(name.into());
        self.var_names.len() - 1
    }

    /// Adds `n` variables named `prefix_0 .. prefix_{n-1}`, returning their ids.
    pub fn add_vars(&mut self, prefix: &str, n: usize) -> Vec<usize> {
        (0..n).map(|i| self.add_var(format!("{prefix}_{i}"))).collect()
    }

    pub fn var_name(&self, v: usize) -> &str {
        &self.var_names[v]
    }

    /// Sets the expression to maximize.
    pub fn maximize(&mut self, obj: LinExpr) {
        self.objective = obj;
    }

    /// Adds `lhs <= rhs`.
    pub fn add_le(&mut self, lhs: LinExpr, rhs: LinExpr, name: impl Into<String>) {
        self.affine_le.push((lhs - rhs, name.into()));
    }

    /// Adds `expr >= lb`.
    pub fn add_ge(&mut self, expr: LinExpr, lb: f64, name: impl Into<String>) {
        self.affine_le.push((LinExpr::constant(lb) - expr, name.into()));
    }

    /// Adds `|| rows ||_2 <= rhs`.
    pub fn add_soc(&mut self, rows: Vec<LinExpr>, rhs: LinExpr, name: impl Into<String>) {
        self.socs.push(SocConstraint { rows, rhs, name: name.into() });
    }

    /// Adds `sum_i rows_i^2 <= rhs` for an affine `rhs` via the rotated-cone
    /// embedding `|| [2*rows; rhs - 1] ||_2 <= rhs + 1` (which also implies
    /// `rhs >= 0`).
    pub fn add_sum_squares_le(&mut self, rows: &[LinExpr], rhs: LinExpr, name: impl Into<String>) {
        let mut soc_rows: Vec<LinExpr> = rows.iter().map(|r| r.clone() * 2.0).collect();
        soc_rows.push(rhs.clone() - LinExpr::constant(1.0));
        self.add_soc(soc_rows, rhs + LinExpr::constant(1.0), name);
    }

    /// Worst constraint violation at `x` (0 when feasible), computed with
    /// plain expression evaluation, independent of the solver.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for (expr, _) in &self.affine_le {
            v = v.max(expr.eval(x));
        }
        for soc in &self.socs {
            let norm = soc.rows.iter().map(|r| r.eval(x).powi(2)).sum::<f64>().sqrt();
            v = v.max(norm - soc.rhs.eval(x));
        }
        v
    }

    /// Human-readable listing of the whole program, for debugging dumps.
    pub fn dump(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        let fmt = |e: &LinExpr| -> String {
            let e = e.compressed();
            let mut s = String::new();
            for (v, c) in &e.terms {
                s.push_str(&format!("{c:+.6}*{} ", self.var_names[*v]));
            }
            s.push_str(&format!("{:+.6}", e.constant));
            s
        };
        writeln!(w, "maximize {}", fmt(&self.objective))?;
        for (expr, name) in &self.affine_le {
            writeln!(w, "[{name}] {} <= 0", fmt(expr))?;
        }
        for soc in &self.socs {
            writeln!(w, "[{}] norm of {} rows <= {}", soc.name, soc.rows.len(), fmt(&soc.rhs))?;
            for r in &soc.rows {
                writeln!(w, "    {}", fmt(r))?;
            }
        }
        Ok(())
    }

    /// Solves the program with Clarabel and re-checks the returned point.
    pub fn solve(&self) -> Result<SolveResult, ConicError> {
        let n = self.n_vars();
        if n == 0 {
            return Err(ConicError::Empty);
        }

        // Clarabel form: minimize q'x subject to Ax + s = b, s in K.
        let mut q = vec![0.0; n];
        for &(v, c) in &self.objective.compressed().terms {
            q[v] = -c;
        }

        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        let mut b: Vec<f64> = Vec::new();
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        let mut row = 0usize;
        // nonnegative cone: expr <= 0  <=>  s = -expr >= 0, so A row holds the
        // expression coefficients and b holds minus its constant
        if !self.affine_le.is_empty() {
            for (expr, _) in &self.affine_le {
                let e = expr.compressed();
                for (v, c) in e.terms {
                    triplets.push((row, v, c));
                }
                b.push(-e.constant);
                row += 1;
            }
            cones.push(SupportedConeT::NonnegativeConeT(self.affine_le.len()));
        }
        // SOC: s0 = rhs, s_i = row_i  with s = b - Ax
        for soc in &self.socs {
            for expr in std::iter::once(&soc.rhs).chain(&soc.rows) {
                let e = expr.compressed();
                for (v, c) in e.terms {
                    triplets.push((row, v, -c));
                }
                b.push(e.constant);
                row += 1;
            }
            cones.push(SupportedConeT::SecondOrderConeT(soc.rows.len() + 1));
        }

        let a = csc_from_triplets(row, n, &mut triplets);
        let p = csc_from_triplets(n, n, &mut Vec::new());
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(200)
            .tol_feas(1e-7)
            .tol_gap_abs(1e-7)
            .tol_gap_rel(1e-7)
            .build()
            .map_err(|e| ConicError::Setup(e.to_string()))?;
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings);
        solver.solve();

        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::AlmostSolved => SolveStatus::AlmostOptimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SolveStatus::Infeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                SolveStatus::Unbounded
            }
            other => SolveStatus::NumericalTrouble(format!("{other:?}")),
        };
        let x = sol.x.clone();
        let objective = self.objective.eval(&x);
        let max_violation = self.max_violation(&x);
        Ok(SolveResult { x, status, objective, iterations: sol.iterations, max_violation })
    }
}

/// Builds a CSC matrix from (row, col, value) triplets, summing duplicates.
fn csc_from_triplets(m: usize, n: usize, triplets: &mut Vec<(usize, usize, f64)>) -> CscMatrix<f64> {
    triplets.sort_by_key(|&(r, c, _)| (c, r));
    let mut colptr = vec![0usize; n + 1];
    let mut rowval: Vec<usize> = Vec::with_capacity(triplets.len());
    let mut nzval: Vec<f64> = Vec::with_capacity(triplets.len());
    for &(r, c, v) in triplets.iter() {
        // sorted input: a duplicate (row, col) pair is always the last entry
        if colptr[c + 1] > 0 && rowval.last() == Some(&r) {
            *nzval.last_mut().unwrap() += v;
        } else {
            colptr[c + 1] += 1;
            rowval.push(r);
            nzval.push(v);
        }
    }
    for c in 0..n {
        colptr[c + 1] += colptr[c];
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}
