//! Phase-I feasibility search followed by a primal log-barrier method with
//! damped Newton steps, all in log coordinates `y = ln x`.

use log::{debug, trace};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::logfn::{Compiled, FnEval, HessianAcc, LogSumExp, Scatter, Slot};
use super::{GpError, GpProblem};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Target duality measure (barrier parameter times constraint count).
    pub tol: f64,
    /// Guard box `|ln x| <= box_limit` on every variable.
    pub box_limit: f64,
    pub mu0: f64,
    pub mu_factor: f64,
    pub max_newton_per_center: usize,
    pub max_newton_total: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            box_limit: 40.0,
            mu0: 1.0,
            mu_factor: 10.0,
            max_newton_per_center: 200,
            max_newton_total: 6000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub newton_steps: usize,
    pub phase1_steps: usize,
}

/// Solves `problem` with default options and the given tolerance.
pub fn solve_gp(problem: &GpProblem, tol: f64) -> Result<GpSolution, GpError> {
    GpSolver::new(SolverOptions {
        tol,
        ..SolverOptions::default()
    })
    .solve(problem)
}

#[derive(Debug, Clone, Default)]
pub struct GpSolver {
    pub options: SolverOptions,
}

/// Convex program `min f0(y) s.t. f_i(y) <= 0, A y = b` in the free variables.
struct Program {
    n: usize,
    objective: LogSumExp,
    ineqs: Vec<LogSumExp>,
    eq_a: DMatrix<f64>,
    eq_b: DVector<f64>,
}

struct Presolved {
    slots: Vec<Slot>,
    program: Program,
    /// Index of the first guard-box constraint in `program.ineqs`.
    guard_start: usize,
    free_vars: Vec<usize>,
}

struct BarrierRun {
    y: DVector<f64>,
    steps: usize,
}

impl GpSolver {
    pub fn new(options: SolverOptions) -> Self {
        GpSolver { options }
    }

    pub fn solve(&self, problem: &GpProblem) -> Result<GpSolution, GpError> {
        self.solve_inner(problem, None)
    }

    /// Like [`GpSolver::solve`] but starts the feasibility search at `x0`.
    pub fn solve_from(&self, problem: &GpProblem, x0: &[f64]) -> Result<GpSolution, GpError> {
        if x0.len() != problem.num_vars() || x0.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(GpError::Invalid("starting point must be positive".into()));
        }
        self.solve_inner(problem, Some(x0))
    }

    fn solve_inner(&self, problem: &GpProblem, x0: Option<&[f64]>) -> Result<GpSolution, GpError> {
        problem.validate()?;
        let pre = self.presolve(problem)?;
        let prog = &pre.program;
        let n = prog.n;

        let (y, phase1_steps, newton_steps) = if n == 0 {
            (DVector::zeros(0), 0, 0)
        } else {
            let mut y0 = DVector::zeros(n);
            if let Some(x0) = x0 {
                for (k, &v) in pre.free_vars.iter().enumerate() {
                    y0[k] = x0[v].ln();
                }
            }
            let lim = self.options.box_limit - 1.0;
            y0.iter_mut().for_each(|v| *v = v.clamp(-lim, lim));
            let y0 = project_equalities(prog, y0)?;
            let (y_feas, p1) = self.phase_one(prog, y0)?;
            // A small starting mu only pays off next to the optimum; after a
            // feasibility search the point can be far from it.
            let mu0 = if p1 > 0 { self.options.mu0.max(1.0) } else { self.options.mu0 };
            let run = match self.barrier(prog, y_feas.clone(), mu0, None) {
                // A warm start that is far from the central path can stall;
                // the conservative schedule is slower but reliable.
                Err(GpError::NumericalFailure(msg)) if mu0 < 1.0 => {
                    debug!("warm barrier start failed ({msg}); restarting at mu 1");
                    self.barrier(prog, y_feas, 1.0, None)?
                }
                other => other?,
            };
            (run.y, p1, run.steps)
        };

        for (k, f) in prog.ineqs[pre.guard_start..].iter().enumerate() {
            if f.value(y.as_slice()) > -1e-6 {
                let var = pre.free_vars[k / 2];
                return Err(GpError::Unbounded {
                    var: problem.var_name(var).to_string(),
                });
            }
        }

        let x: Vec<f64> = pre
            .slots
            .iter()
            .map(|s| match *s {
                Slot::Free(i) => y[i].exp(),
                Slot::Fixed(v) => v.exp(),
            })
            .collect();
        let objective = problem.objective_value(&x);
        debug!(
            "gp solved: {} vars, {} constraints, objective {objective:.6e}, {phase1_steps}+{newton_steps} Newton steps",
            problem.num_vars(),
            problem.num_constraints()
        );
        Ok(GpSolution {
            x,
            objective,
            newton_steps,
            phase1_steps,
        })
    }

    /// Eliminates variables pinned by single-variable equalities and
    /// compiles everything else to log form.
    fn presolve(&self, problem: &GpProblem) -> Result<Presolved, GpError> {
        let nv = problem.num_vars();
        let mut fixed: Vec<Option<f64>> = vec![None; nv];
        let mut multi = Vec::new();
        for m in problem.equalities() {
            match m.exps() {
                [] => {
                    let r = m.coeff().ln().abs();
                    if r > self.options.tol {
                        return Err(GpError::Infeasible { slack: r });
                    }
                }
                [(v, e)] => {
                    let val = -m.coeff().ln() / e;
                    match fixed[*v] {
                        Some(prev) if (prev - val).abs() > self.options.tol => {
                            return Err(GpError::Infeasible {
                                slack: (prev - val).abs(),
                            })
                        }
                        _ => fixed[*v] = Some(val),
                    }
                }
                _ => multi.push(m),
            }
        }
        let mut slots = Vec::with_capacity(nv);
        let mut free_vars = Vec::new();
        for (v, f) in fixed.iter().enumerate() {
            match f {
                Some(val) => slots.push(Slot::Fixed(*val)),
                None => {
                    slots.push(Slot::Free(free_vars.len()));
                    free_vars.push(v);
                }
            }
        }
        let n = free_vars.len();

        let objective = match LogSumExp::compile(problem.objective().terms(), &slots, n) {
            Compiled::Function(f) => f,
            Compiled::Constant(c) => LogSumExp {
                n,
                shift: c,
                lin: Vec::new(),
                terms: Vec::new(),
            },
        };
        let mut ineqs = Vec::new();
        let mut add_constraint = |c: Compiled| -> Result<(), GpError> {
            match c {
                Compiled::Function(f) => ineqs.push(f),
                Compiled::Constant(v) if v > self.options.tol => {
                    return Err(GpError::Infeasible { slack: v })
                }
                Compiled::Constant(_) => {}
            }
            Ok(())
        };
        for p in problem.inequalities() {
            add_constraint(LogSumExp::compile(p.terms(), &slots, n))?;
        }
        for v in 0..nv {
            let (lo, hi) = problem.bounds(v);
            let affine = |sign: f64, bound: f64| -> Compiled {
                match slots[v] {
                    Slot::Free(i) => Compiled::Function(LogSumExp {
                        n,
                        shift: -sign * bound.ln(),
                        lin: vec![(i, sign)],
                        terms: Vec::new(),
                    }),
                    Slot::Fixed(y) => Compiled::Constant(sign * (y - bound.ln())),
                }
            };
            if let Some(lo) = lo {
                add_constraint(affine(-1.0, lo))?;
            }
            if let Some(hi) = hi {
                add_constraint(affine(1.0, hi))?;
            }
        }
        let guard_start = ineqs.len();
        let lim = self.options.box_limit;
        for i in 0..n {
            for sign in [1.0, -1.0] {
                ineqs.push(LogSumExp {
                    n,
                    shift: -lim,
                    lin: vec![(i, sign)],
                    terms: Vec::new(),
                });
            }
        }

        let mut eq_a = DMatrix::zeros(0, n);
        let mut eq_b = DVector::zeros(0);
        if !multi.is_empty() {
            let mut rows = Vec::new();
            let mut rhs = Vec::new();
            for m in multi {
                let mut row = vec![0.0; n];
                let mut b = -m.coeff().ln();
                for &(v, e) in m.exps() {
                    match slots[v] {
                        Slot::Free(i) => row[i] += e,
                        Slot::Fixed(y) => b -= e * y,
                    }
                }
                if row.iter().all(|&a| a == 0.0) {
                    if b.abs() > self.options.tol {
                        return Err(GpError::Infeasible { slack: b.abs() });
                    }
                    continue;
                }
                rows.push(row);
                rhs.push(b);
            }
            eq_a = DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]);
            eq_b = DVector::from_vec(rhs);
        }

        Ok(Presolved {
            slots,
            program: Program {
                n,
                objective,
                ineqs,
                eq_a,
                eq_b,
            },
            guard_start,
            free_vars,
        })
    }

    /// Finds a strictly feasible point by minimizing a shared slack `s`
    /// subject to `f_i(y) <= s`.
    fn phase_one(&self, prog: &Program, y0: DVector<f64>) -> Result<(DVector<f64>, usize), GpError> {
        let worst = prog
            .ineqs
            .iter()
            .map(|f| f.value(y0.as_slice()))
            .fold(f64::NEG_INFINITY, f64::max);
        if worst < -1e-9 {
            return Ok((y0, 0));
        }
        let n = prog.n;
        let s_idx = n;
        let ineqs: Vec<LogSumExp> = prog.ineqs.iter().map(|f| f.with_slack(s_idx, n + 1)).collect();
        let aux = Program {
            n: n + 1,
            objective: LogSumExp {
                n: n + 1,
                shift: 0.0,
                lin: vec![(s_idx, 1.0)],
                terms: Vec::new(),
            },
            ineqs,
            eq_a: prog.eq_a.clone().insert_column(n, 0.0),
            eq_b: prog.eq_b.clone(),
        };
        let mut start = y0.clone().insert_row(n, 0.0);
        start[n] = worst + 1.0;
        let stop = |y: &DVector<f64>| y[s_idx] < -1e-2;
        let run = self.barrier(&aux, start, self.options.mu0.max(1.0), Some(&stop))?;
        let slack = run.y[s_idx];
        trace!("phase I: slack {slack:.3e} after {} steps", run.steps);
        let y = run.y.rows(0, n).into_owned();
        // Slack measured on the original constraints at the returned point.
        let actual = prog
            .ineqs
            .iter()
            .map(|f| f.value(y.as_slice()))
            .fold(f64::NEG_INFINITY, f64::max);
        if actual < 0.0 {
            return Ok((y, run.steps));
        }
        if slack > self.options.tol {
            Err(GpError::Infeasible { slack })
        } else {
            Err(GpError::NumericalFailure(format!(
                "feasible set has no strictly feasible point (phase-I slack {slack:.3e})"
            )))
        }
    }

    fn barrier(
        &self,
        prog: &Program,
        mut y: DVector<f64>,
        mu0: f64,
        early_stop: Option<&dyn Fn(&DVector<f64>) -> bool>,
    ) -> Result<BarrierRun, GpError> {
        let m = prog.ineqs.len().max(1) as f64;
        let mut mu = mu0;
        let mut steps = 0;
        let mut sc = Scatter::new(prog.n);
        loop {
            // Intermediate centers only seed the next stage; the last one
            // decides the accuracy.
            let last = m * mu < self.options.tol;
            // Below ~1e-9 the decrement is dominated by rounding in the slacks.
            let dec_tol = if last { 1e-8 } else { 1e-5 };
            let (stopped, used) = self.center(prog, &mut y, mu, dec_tol, &mut sc, steps, early_stop)?;
            steps += used;
            if stopped || last {
                return Ok(BarrierRun { y, steps });
            }
            mu /= self.options.mu_factor;
        }
    }

    /// Newton centering on `f0 + mu * sum -ln(-f_i)`. Returns whether the
    /// early-stop predicate fired and the number of steps taken.
    fn center(
        &self,
        prog: &Program,
        y: &mut DVector<f64>,
        mu: f64,
        dec_tol: f64,
        sc: &mut Scatter,
        steps_so_far: usize,
        early_stop: Option<&dyn Fn(&DVector<f64>) -> bool>,
    ) -> Result<(bool, usize), GpError> {
        let n = prog.n;
        let mut used = 0;
        let mut acc = HessianAcc::new(n);
        loop {
            if let Some(stop) = early_stop {
                if stop(y) {
                    return Ok((true, used));
                }
            }
            if steps_so_far + used >= self.options.max_newton_total {
                return Err(GpError::NumericalFailure(format!(
                    "Newton iteration limit {} reached",
                    self.options.max_newton_total
                )));
            }
            let ys = y.as_slice();
            let ev0 = prog.objective.eval(ys, sc);
            let mut g = DVector::zeros(n);
            acc.reset();
            for &(i, v) in &ev0.grad {
                g[i] += v;
            }
            prog.objective.add_hessian(&ev0, 1.0, 0.0, &mut acc);
            for f in &prog.ineqs {
                let ev: FnEval = f.eval(ys, sc);
                let slack = -ev.value;
                if slack <= 0.0 {
                    return Err(GpError::NumericalFailure("iterate left the feasible set".into()));
                }
                for &(i, v) in &ev.grad {
                    g[i] += mu * v / slack;
                }
                f.add_hessian(&ev, mu / slack, mu / (slack * slack), &mut acc);
            }
            acc.finish();
            let h = &acc.h;
            let dy = newton_direction(h, &g, prog, y)?;
            let hd = h * &dy;
            let dec = dy.dot(&hd).max(0.0);
            // Affine-invariant decrement of the t = 1/mu scaled problem.
            let lambda2 = dec / mu;
            if lambda2 / 2.0 <= dec_tol || !lambda2.is_finite() {
                if !lambda2.is_finite() {
                    return Err(GpError::NumericalFailure("non-finite Newton decrement".into()));
                }
                return Ok((false, used));
            }
            used += 1;

            let f_cur = barrier_value(prog, ys, mu).expect("current iterate is strictly feasible");
            let slope = g.dot(&dy);
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial = &*y + &dy * alpha;
                if let Some(f_new) = barrier_value(prog, trial.as_slice(), mu) {
                    if lambda2.sqrt() < 0.2 || f_new <= f_cur + 0.01 * alpha * slope {
                        *y = trial;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                if lambda2 < 1e-6 {
                    return Ok((false, used));
                }
                return Err(GpError::NumericalFailure(format!(
                    "line search failed (Newton decrement {lambda2:.3e}, mu {mu:.3e})"
                )));
            }
            if used >= self.options.max_newton_per_center || (used >= 20 && lambda2 < 1e-6) {
                if lambda2 < 1e-4 {
                    return Ok((false, used));
                }
                return Err(GpError::NumericalFailure(format!(
                    "centering did not converge at mu {mu:.3e} (decrement {lambda2:.3e})"
                )));
            }
        }
    }
}

fn barrier_value(prog: &Program, y: &[f64], mu: f64) -> Option<f64> {
    let mut total = prog.objective.value(y);
    for f in &prog.ineqs {
        let v = f.value(y);
        if !(v < 0.0) {
            return None;
        }
        total -= mu * (-v).ln();
    }
    total.is_finite().then_some(total)
}

/// Least-squares correction of `y` onto `A y = b`.
fn project_equalities(prog: &Program, y: DVector<f64>) -> Result<DVector<f64>, GpError> {
    if prog.eq_a.nrows() == 0 {
        return Ok(y);
    }
    let r = &prog.eq_b - &prog.eq_a * &y;
    let svd = prog.eq_a.clone().svd(true, true);
    let dy = svd
        .solve(&r, 1e-12)
        .map_err(|e| GpError::NumericalFailure(format!("equality projection: {e}")))?;
    let y = y + dy;
    let resid = (&prog.eq_a * &y - &prog.eq_b).amax();
    if resid > 1e-8 {
        return Err(GpError::Infeasible { slack: resid });
    }
    Ok(y)
}

/// Cholesky factorization with a growing diagonal shift as a fallback for
/// nearly singular barrier Hessians.
pub(crate) fn factor_pd(h: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, GpError> {
    if let Some(c) = blocked_cholesky(h.clone()) {
        return Ok(c);
    }
    let scale = h.diagonal().amax().max(1e-300);
    let mut delta = 1e-14 * scale;
    while delta <= 1e-2 * scale {
        let mut shifted = h.clone();
        for i in 0..h.nrows() {
            shifted[(i, i)] += delta;
        }
        if let Some(c) = blocked_cholesky(shifted) {
            return Ok(c);
        }
        delta *= 100.0;
    }
    Err(GpError::NumericalFailure("Hessian is not positive definite".into()))
}

const CHOLESKY_BLOCK: usize = 48;

/// Right-looking blocked Cholesky; the trailing updates go through the
/// blocked matrix product. Only the lower triangle of the result is used.
fn blocked_cholesky(mut a: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let n = a.nrows();
    let mut k = 0;
    while k < n {
        let kb = CHOLESKY_BLOCK.min(n - k);
        // Left-looking within the block column, on contiguous column slices.
        {
            let data = a.as_mut_slice();
            for j in k..k + kb {
                for l in k..j {
                    let ajl = data[l * n + j];
                    if ajl == 0.0 {
                        continue;
                    }
                    let (left, right) = data.split_at_mut(j * n);
                    let src = &left[l * n + j..l * n + n];
                    let dst = &mut right[j..n];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d -= ajl * s;
                    }
                }
                let d = data[j * n + j];
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                let d = d.sqrt();
                for v in &mut data[j * n + j..j * n + n] {
                    *v /= d;
                }
            }
        }
        let rest = n - k - kb;
        if rest > 0 {
            let panel = a.view((k + kb, k), (rest, kb)).into_owned();
            let panel_t = panel.transpose();
            a.view_mut((k + kb, k + kb), (rest, rest))
                .gemm(-1.0, &panel, &panel_t, 1.0);
        }
        k += kb;
    }
    Some(Cholesky::pack_dirty(a))
}

/// Solves the (equality-constrained) Newton system; also removes any drift
/// from `A y = b`.
fn newton_direction(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    prog: &Program,
    y: &DVector<f64>,
) -> Result<DVector<f64>, GpError> {
    if prog.eq_a.nrows() == 0 {
        return Ok(-factor_pd(h)?.solve(g));
    }
    // The objective can be flat along directions that only the equalities
    // pin down, so solve with the augmented Hessian H + rho A^T A; the step
    // is unchanged because A dy is prescribed.
    let a = &prog.eq_a;
    let rho = h.diagonal().amax().max(1.0);
    let ha = h + a.transpose() * a * rho;
    let chol = factor_pd(&ha)?;
    let drift = a * y - &prog.eq_b;
    let g_aug = g - a.transpose() * &drift * rho;
    let u = chol.solve(&g_aug);
    let x = chol.solve(&a.transpose());
    let s = a * &x;
    let rhs = -drift - a * &u;
    let nu = factor_pd(&s)?.solve(&rhs);
    Ok(-u - x * nu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{Monomial, Posynomial};

    fn mono(c: f64, e: &[(usize, f64)]) -> Monomial {
        Monomial::new(c, e.iter().copied())
    }

    #[test]
    fn active_reciprocal_constraint() {
        let mut p = GpProblem::new();
        let x = p.add_var("x");
        p.set_objective(Monomial::var(x));
        p.add_inequality(mono(1.0, &[(x, -1.0)]));
        let s = solve_gp(&p, 1e-8).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-6);
        assert!((s.objective - 1.0).abs() < 1e-6);
    }

    #[test]
    fn am_gm_instance() {
        let mut p = GpProblem::new();
        let x = p.add_var("x");
        let y = p.add_var("y");
        p.set_objective(Posynomial::new(vec![Monomial::var(x), Monomial::var(y)]));
        p.add_inequality(mono(1.0, &[(x, -1.0), (y, -1.0)]));
        let s = solve_gp(&p, 1e-8).unwrap();
        assert!((s.objective - 2.0).abs() < 1e-6);
        assert!((s.x[0] - 1.0).abs() < 1e-6 && (s.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn monotone_objective_hits_box() {
        let mut p = GpProblem::new();
        let x = p.add_var("x");
        let y = p.add_var("y");
        p.set_objective(mono(1.0, &[(x, -1.0), (y, -1.0)]));
        p.add_inequality(Monomial::var(x));
        p.add_inequality(Monomial::var(y));
        let s = solve_gp(&p, 1e-8).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-6 && (s.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_detected() {
        let mut p = GpProblem::new();
        let x = p.add_var("x");
        p.set_objective(Monomial::var(x));
        p.add_inequality(mono(2.0, &[(x, 1.0)]));
        p.add_inequality(mono(2.0, &[(x, -1.0)]));
        assert!(matches!(solve_gp(&p, 1e-8), Err(GpError::Infeasible { .. })));
    }

    #[test]
    fn unbounded_detected() {
        let mut p = GpProblem::new();
        let x = p.add_var("x");
        p.set_objective(Monomial::var(x));
        assert!(matches!(solve_gp(&p, 1e-8), Err(GpError::Unbounded { .. })));
    }

    #[test]
    fn fixed_variable_equality() {
        // min x + y, x = 4, x*y >= 1 -> y = 1/4.
        let mut p = GpProblem::new();
        let x = p.add_var("x");
        let y = p.add_var("y");
        p.set_objective(Posynomial::new(vec![Monomial::var(x), Monomial::var(y)]));
        p.add_equality(mono(0.25, &[(x, 1.0)]));
        p.add_inequality(mono(1.0, &[(x, -1.0), (y, -1.0)]));
        let s = solve_gp(&p, 1e-8).unwrap();
        assert!((s.x[0] - 4.0).abs() < 1e-9);
        assert!((s.x[1] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn coupled_equality() {
        // min x + y + z with x*y*z = 8 -> all 2.
        let mut p = GpProblem::new();
        let v: Vec<_> = (0..3).map(|i| p.add_var(format!("v{i}"))).collect();
        p.set_objective(Posynomial::new(v.iter().map(|&i| Monomial::var(i)).collect()));
        p.add_equality(mono(0.125, &[(v[0], 1.0), (v[1], 1.0), (v[2], 1.0)]));
        let s = solve_gp(&p, 1e-8).unwrap();
        for xi in &s.x {
            assert!((xi - 2.0).abs() < 1e-6, "{:?}", s.x);
        }
    }

    #[test]
    fn bounds_are_respected() {
        let mut p = GpProblem::new();
        let x = p.add_var("x");
        p.set_objective(Monomial::var(x));
        p.set_bounds(x, Some(3.0), Some(10.0));
        let s = solve_gp(&p, 1e-8).unwrap();
        assert!((s.x[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn warm_start_matches_cold_start() {
        let mut p = GpProblem::new();
        let x = p.add_var("x");
        let y = p.add_var("y");
        p.set_objective(Posynomial::new(vec![mono(1.0, &[(x, 1.0)]), mono(2.0, &[(y, 1.0)])]));
        p.add_inequality(mono(3.0, &[(x, -1.0), (y, -0.5)]));
        let cold = solve_gp(&p, 1e-8).unwrap();
        let warm = GpSolver::default().solve_from(&p, &[5.0, 5.0]).unwrap();
        assert!((cold.objective - warm.objective).abs() < 1e-7);
    }
}
