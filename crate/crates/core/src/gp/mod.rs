//! Geometric programs in standard form and an interior-point solver working
//! on the log-transformed convex problem.
//!
//! A problem minimizes a posynomial subject to posynomial constraints `<= 1`,
//! monomial equalities `= 1` and optional positive variable bounds.

mod kkt;
mod logfn;
mod solver;
mod text;

pub use kkt::{verify_kkt, KktReport};
pub use logfn::{log_sum_exp_eval, LogSumExp};
pub use solver::{solve_gp, GpSolution, GpSolver, SolverOptions};
pub use text::{parse_gp, write_gp};

use thiserror::Error;

pub type VarId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("problem is infeasible (minimum phase-I slack {slack:.3e})")]
    Infeasible { slack: f64 },
    #[error("objective is unbounded below along variable `{var}`")]
    Unbounded { var: String },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// `coeff * prod_j x_j^{e_j}`. Exponents are kept sorted by variable with
/// duplicates merged and zeros dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    coeff: f64,
    exps: Vec<(VarId, f64)>,
}

impl Monomial {
    pub fn new<I>(coeff: f64, exps: I) -> Self
    where
        I: IntoIterator<Item = (VarId, f64)>,
    {
        let mut raw: Vec<(VarId, f64)> = exps.into_iter().collect();
        raw.sort_by_key(|e| e.0);
        let mut merged: Vec<(VarId, f64)> = Vec::with_capacity(raw.len());
        for (v, e) in raw {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += e,
                _ => merged.push((v, e)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        Monomial { coeff, exps: merged }
    }

    pub fn constant(coeff: f64) -> Self {
        Monomial { coeff, exps: Vec::new() }
    }

    pub fn var(id: VarId) -> Self {
        Monomial {
            coeff: 1.0,
            exps: vec![(id, 1.0)],
        }
    }

    pub fn coeff(&self) -> f64 {
        self.coeff
    }

    pub fn exps(&self) -> &[(VarId, f64)] {
        &self.exps
    }

    pub fn exponent(&self, var: VarId) -> f64 {
        self.exps
            .binary_search_by_key(&var, |e| e.0)
            .map(|i| self.exps[i].1)
            .unwrap_or(0.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.exps
            .iter()
            .fold(self.coeff, |acc, &(v, e)| acc * x[v].powf(e))
    }

    /// `ln` of the monomial at `x = exp(y)`.
    pub fn log_eval(&self, y: &[f64]) -> f64 {
        self.coeff.ln() + self.exps.iter().map(|&(v, e)| e * y[v]).sum::<f64>()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        Monomial::new(
            self.coeff * other.coeff,
            self.exps.iter().chain(other.exps.iter()).copied(),
        )
    }

    pub fn powf(&self, e: f64) -> Monomial {
        Monomial::new(
            self.coeff.powf(e),
            self.exps.iter().map(|&(v, x)| (v, x * e)),
        )
    }

    pub fn recip(&self) -> Monomial {
        self.powf(-1.0)
    }

    pub fn scale(&self, k: f64) -> Monomial {
        Monomial {
            coeff: self.coeff * k,
            exps: self.exps.clone(),
        }
    }
}

/// Sum of monomials.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Posynomial {
    terms: Vec<Monomial>,
}

impl Posynomial {
    pub fn new(terms: Vec<Monomial>) -> Self {
        Posynomial { terms }
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn push(&mut self, term: Monomial) {
        self.terms.push(term);
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.eval(x)).sum()
    }

    pub fn scale(&self, k: f64) -> Posynomial {
        Posynomial::new(self.terms.iter().map(|t| t.scale(k)).collect())
    }

    pub fn mul_monomial(&self, m: &Monomial) -> Posynomial {
        Posynomial::new(self.terms.iter().map(|t| t.mul(m)).collect())
    }

    /// Expanded product; every pair of terms gives one monomial.
    pub fn mul(&self, other: &Posynomial) -> Posynomial {
        let mut out = Vec::with_capacity(self.len() * other.len());
        for a in &self.terms {
            for b in &other.terms {
                out.push(a.mul(b));
            }
        }
        Posynomial::new(out)
    }

    pub fn add(&self, other: &Posynomial) -> Posynomial {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Posynomial::new(terms)
    }
}

impl From<Monomial> for Posynomial {
    fn from(m: Monomial) -> Self {
        Posynomial::new(vec![m])
    }
}

/// Positive box on one variable; `None` leaves that side open.
pub type Bounds = (Option<f64>, Option<f64>);

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GpProblem {
    names: Vec<String>,
    objective: Posynomial,
    inequalities: Vec<Posynomial>,
    equalities: Vec<Monomial>,
    bounds: Vec<Bounds>,
}

impl GpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> VarId {
        self.names.push(name.into());
        self.bounds.push((None, None));
        self.names.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn var_name(&self, id: VarId) -> &str {
        &self.names[id]
    }

    pub fn var_names(&self) -> &[String] {
        &self.names
    }

    pub fn var_id(&self, name: &str) -> Option<VarId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn set_objective(&mut self, objective: impl Into<Posynomial>) {
        self.objective = objective.into();
    }

    pub fn objective(&self) -> &Posynomial {
        &self.objective
    }

    /// Adds `p <= 1` and returns its index.
    pub fn add_inequality(&mut self, p: impl Into<Posynomial>) -> usize {
        self.inequalities.push(p.into());
        self.inequalities.len() - 1
    }

    pub fn inequalities(&self) -> &[Posynomial] {
        &self.inequalities
    }

    /// Adds `m = 1` and returns its index.
    pub fn add_equality(&mut self, m: Monomial) -> usize {
        self.equalities.push(m);
        self.equalities.len() - 1
    }

    pub fn equalities(&self) -> &[Monomial] {
        &self.equalities
    }

    pub fn set_bounds(&mut self, id: VarId, lower: Option<f64>, upper: Option<f64>) {
        self.bounds[id] = (lower, upper);
    }

    pub fn bounds(&self, id: VarId) -> Bounds {
        self.bounds[id]
    }

    /// Number of constraints, counting each finite bound as one.
    pub fn num_constraints(&self) -> usize {
        self.inequalities.len()
            + self.equalities.len()
            + self
                .bounds
                .iter()
                .map(|b| b.0.is_some() as usize + b.1.is_some() as usize)
                .sum::<usize>()
    }

    pub fn validate(&self) -> Result<(), GpError> {
        let n = self.num_vars();
        if n == 0 {
            return Err(GpError::Invalid("no variables declared".into()));
        }
        if self.objective.is_empty() {
            return Err(GpError::Invalid("objective has no terms".into()));
        }
        let check_mono = |m: &Monomial, what: &str| -> Result<(), GpError> {
            if !(m.coeff > 0.0 && m.coeff.is_finite()) {
                return Err(GpError::Invalid(format!(
                    "{what}: coefficient {} is not a positive finite number",
                    m.coeff
                )));
            }
            for &(v, e) in &m.exps {
                if v >= n {
                    return Err(GpError::Invalid(format!("{what}: unknown variable id {v}")));
                }
                if !e.is_finite() {
                    return Err(GpError::Invalid(format!("{what}: non-finite exponent")));
                }
            }
            Ok(())
        };
        for t in self.objective.terms() {
            check_mono(t, "objective")?;
        }
        for (i, p) in self.inequalities.iter().enumerate() {
            if p.is_empty() {
                return Err(GpError::Invalid(format!("inequality {i} has no terms")));
            }
            for t in p.terms() {
                check_mono(t, &format!("inequality {i}"))?;
            }
        }
        for (i, m) in self.equalities.iter().enumerate() {
            check_mono(m, &format!("equality {i}"))?;
        }
        for (v, &(lo, hi)) in self.bounds.iter().enumerate() {
            for b in [lo, hi].into_iter().flatten() {
                if !(b > 0.0 && b.is_finite()) {
                    return Err(GpError::Invalid(format!(
                        "bound {b} on `{}` is not a positive finite number",
                        self.names[v]
                    )));
                }
            }
            if let (Some(lo), Some(hi)) = (lo, hi) {
                if lo > hi {
                    return Err(GpError::Invalid(format!("empty bounds on `{}`", self.names[v])));
                }
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
    }

    /// Largest constraint violation at `x`: posynomial excess over 1, log
    /// residual of equalities, and relative bound violation.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let ineq = self
            .inequalities
            .iter()
            .map(|p| p.eval(x) - 1.0)
            .fold(0.0f64, f64::max);
        let eq = self
            .equalities
            .iter()
            .map(|m| m.eval(x).ln().abs())
            .fold(0.0f64, f64::max);
        let bounds = self
            .bounds
            .iter()
            .zip(x)
            .map(|(&(lo, hi), &xi)| {
                let below = lo.map_or(0.0, |l| (l - xi) / l);
                let above = hi.map_or(0.0, |h| (xi - h) / h);
                below.max(above)
            })
            .fold(0.0f64, f64::max);
        ineq.max(eq).max(bounds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_merges_and_drops() {
        let m = Monomial::new(2.0, [(1, 0.5), (0, 1.0), (1, 0.5), (2, 0.0)]);
        assert_eq!(m.exps(), &[(0, 1.0), (1, 1.0)]);
        assert_eq!(m.eval(&[2.0, 3.0, 7.0]), 12.0);
        assert_eq!(m.exponent(2), 0.0);
        let r = m.recip();
        assert!((r.eval(&[2.0, 3.0, 7.0]) - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn square_of_two_root_terms_expands_to_three_patterns() {
        let root = |v: VarId| Monomial::new(1.0, [(v, 0.5)]);
        let s = Posynomial::new(vec![root(0), root(1)]);
        let sq = s.mul(&s);
        let mut patterns: Vec<(f64, f64)> = sq
            .terms()
            .iter()
            .map(|t| (t.exponent(0), t.exponent(1)))
            .collect();
        patterns.sort_by(|a, b| a.partial_cmp(b).unwrap());
        patterns.dedup();
        assert_eq!(patterns, vec![(0.0, 1.0), (0.5, 0.5), (1.0, 0.0)]);
        let x = [4.0, 9.0];
        assert!((sq.eval(&x) - 25.0).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_malformed() {
        let mut p = GpProblem::new();
        assert!(p.validate().is_err());
        let x = p.add_var("x");
        assert!(p.validate().is_err());
        p.set_objective(Monomial::var(x));
        p.validate().unwrap();
        p.add_inequality(Monomial::new(-1.0, [(x, 1.0)]));
        assert!(p.validate().is_err());
        let mut q = GpProblem::new();
        let x = q.add_var("x");
        q.set_objective(Monomial::new(1.0, [(x + 3, 1.0)]));
        assert!(q.validate().is_err());
        let mut r = GpProblem::new();
        let x = r.add_var("x");
        r.set_objective(Monomial::var(x));
        r.set_bounds(x, Some(2.0), Some(1.0));
        assert!(r.validate().is_err());
    }
}
