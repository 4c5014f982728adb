//! Independent optimality check of a candidate point in log coordinates.

use nalgebra::{DMatrix, DVector};

use super::logfn::LogSumExp;
use super::{GpProblem, Monomial, Posynomial};

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// Largest constraint violation (see [`GpProblem::max_violation`]).
    pub primal_residual: f64,
    /// Infinity norm of the log-domain Lagrangian gradient.
    pub stationarity: f64,
    /// Largest `|lambda_i * f_i(y)|`.
    pub complementarity: f64,
    /// Multipliers of the inequalities followed by the finite bounds.
    pub multipliers: Vec<f64>,
    pub eq_multipliers: Vec<f64>,
}

impl KktReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.primal_residual <= tol && self.stationarity <= tol && self.complementarity <= tol
    }
}

/// Estimates multipliers at `x` by nonnegative least squares on the
/// stationarity and complementarity conditions and reports the residuals.
pub fn verify_kkt(problem: &GpProblem, x: &[f64], _tol: f64) -> KktReport {
    let n = problem.num_vars();
    let y: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let mut cons: Vec<LogSumExp> = problem
        .inequalities()
        .iter()
        .map(|p| LogSumExp::from_posynomial(p, n))
        .collect();
    for v in 0..n {
        let (lo, hi) = problem.bounds(v);
        if let Some(lo) = lo {
            cons.push(LogSumExp::from_posynomial(&Posynomial::from(Monomial::new(lo, [(v, -1.0)])), n));
        }
        if let Some(hi) = hi {
            cons.push(LogSumExp::from_posynomial(&Posynomial::from(Monomial::new(1.0 / hi, [(v, 1.0)])), n));
        }
    }
    let m = cons.len();
    let p = problem.equalities().len();
    let f: Vec<f64> = cons.iter().map(|c| c.value(&y)).collect();
    let g0 = LogSumExp::from_posynomial(problem.objective(), n).gradient(&y);
    let mut cols = DMatrix::zeros(n, m + p);
    for (i, c) in cons.iter().enumerate() {
        cols.set_column(i, &c.gradient(&y));
    }
    for (j, e) in problem.equalities().iter().enumerate() {
        for &(v, a) in e.exps() {
            cols[(v, m + j)] += a;
        }
    }

    let mut active: Vec<bool> = vec![true; m + p];
    let mut mult = DVector::zeros(m + p);
    for _ in 0..=m {
        let idx: Vec<usize> = (0..m + p).filter(|&k| active[k]).collect();
        let mut a = DMatrix::zeros(n + m, idx.len());
        for (c, &k) in idx.iter().enumerate() {
            a.view_mut((0, c), (n, 1)).copy_from(&cols.column(k));
            if k < m {
                a[(n + k, c)] = f[k];
            }
        }
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-&g0));
        mult = DVector::zeros(m + p);
        if !idx.is_empty() {
            let sol = a
                .svd(true, true)
                .solve(&rhs, 1e-13)
                .unwrap_or_else(|_| DVector::zeros(idx.len()));
            for (c, &k) in idx.iter().enumerate() {
                mult[k] = sol[c];
            }
        }
        let negative: Vec<usize> = (0..m).filter(|&k| active[k] && mult[k] < 0.0).collect();
        if negative.is_empty() {
            break;
        }
        for k in negative {
            active[k] = false;
            mult[k] = 0.0;
        }
    }

    let resid = &g0 + &cols * &mult;
    let complementarity = (0..m).map(|k| (mult[k] * f[k]).abs()).fold(0.0, f64::max);
    KktReport {
        primal_residual: problem.max_violation(x),
        stationarity: resid.amax(),
        complementarity,
        multipliers: mult.rows(0, m).iter().copied().collect(),
        eq_multipliers: mult.rows(m, p).iter().copied().collect(),
    }
}
