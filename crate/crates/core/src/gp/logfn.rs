//! Posynomials in log-log coordinates: `f(y) = ln sum_k exp(b_k + a_k . y)`.

use nalgebra::{DMatrix, DVector};

use super::{Monomial, Posynomial};

/// How an original variable appears in a compiled program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Slot {
    Free(usize),
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LogTerm {
    pub b: f64,
    pub a: Vec<(usize, f64)>,
}

/// Convex function `shift + lin . y + ln sum_k exp(b_k + a_k . y)`; with no
/// terms it is affine. Each variable's most common exponent is moved to
/// `lin`, which keeps the curvature part sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSumExp {
    pub(crate) n: usize,
    pub(crate) shift: f64,
    pub(crate) lin: Vec<(usize, f64)>,
    pub(crate) terms: Vec<LogTerm>,
}

/// Value plus first-order data at one point.
#[derive(Debug, Clone, Default)]
pub(crate) struct FnEval {
    pub value: f64,
    pub weights: Vec<f64>,
    /// Softmax-weighted exponent average over the curved terms.
    pub gbar: Vec<(usize, f64)>,
    pub grad: Vec<(usize, f64)>,
}

/// Sparse accumulator over `n` slots.
#[derive(Debug, Clone)]
pub(crate) struct Scatter {
    vals: Vec<f64>,
    used: Vec<bool>,
    idx: Vec<usize>,
}

impl Scatter {
    pub fn new(n: usize) -> Self {
        Scatter {
            vals: vec![0.0; n],
            used: vec![false; n],
            idx: Vec::new(),
        }
    }

    pub fn add(&mut self, i: usize, v: f64) {
        if !self.used[i] {
            self.used[i] = true;
            self.idx.push(i);
        }
        self.vals[i] += v;
    }

    pub fn take(&mut self) -> Vec<(usize, f64)> {
        self.idx.sort_unstable();
        let out = self.idx.iter().map(|&i| (i, self.vals[i])).collect();
        for &i in &self.idx {
            self.vals[i] = 0.0;
            self.used[i] = false;
        }
        self.idx.clear();
        out
    }
}

/// Result of compiling a posynomial whose variables may all be fixed.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Compiled {
    Constant(f64),
    Function(LogSumExp),
}

impl LogSumExp {
    /// Log-domain form of `p` over `n` variables.
    pub fn from_posynomial(p: &Posynomial, n: usize) -> Self {
        let map: Vec<Slot> = (0..n).map(Slot::Free).collect();
        match Self::compile(p.terms(), &map, n) {
            Compiled::Function(f) => f,
            Compiled::Constant(c) => LogSumExp {
                n,
                shift: c,
                lin: Vec::new(),
                terms: Vec::new(),
            },
        }
    }

    pub(crate) fn compile(terms: &[Monomial], map: &[Slot], n: usize) -> Compiled {
        let mut logs: Vec<LogTerm> = terms
            .iter()
            .map(|t| {
                let mut b = t.coeff().ln();
                let mut a = Vec::with_capacity(t.exps().len());
                for &(v, e) in t.exps() {
                    match map[v] {
                        Slot::Free(i) => a.push((i, e)),
                        Slot::Fixed(y) => b += e * y,
                    }
                }
                a.sort_by_key(|x| x.0);
                LogTerm { b, a }
            })
            .collect();
        if logs.iter().all(|t| t.a.is_empty()) {
            let zmax = logs.iter().map(|t| t.b).fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = logs.iter().map(|t| (t.b - zmax).exp()).sum();
            return Compiled::Constant(zmax + s.ln());
        }
        if logs.len() == 1 {
            let t = logs.pop().unwrap();
            return Compiled::Function(LogSumExp {
                n,
                shift: t.b,
                lin: t.a,
                terms: Vec::new(),
            });
        }
        // Per variable, move the most frequent exponent (absent counts as 0)
        // into the affine part. The softmax is invariant to this, and the
        // remaining terms become sparse: an interference sum times a
        // monomial keeps only the few exponents that differ.
        let lin = mode_exponents(&logs);
        if !lin.is_empty() {
            for t in &mut logs {
                let mut merged = Vec::with_capacity(t.a.len() + lin.len());
                let (mut i, mut j) = (0, 0);
                while i < t.a.len() || j < lin.len() {
                    let take_t = j >= lin.len() || (i < t.a.len() && t.a[i].0 <= lin[j].0);
                    let take_l = i >= t.a.len() || (j < lin.len() && lin[j].0 <= t.a[i].0);
                    let (v, e) = match (take_t, take_l) {
                        (true, true) => {
                            let r = (t.a[i].0, t.a[i].1 - lin[j].1);
                            i += 1;
                            j += 1;
                            r
                        }
                        (true, false) => {
                            i += 1;
                            t.a[i - 1]
                        }
                        _ => {
                            j += 1;
                            (lin[j - 1].0, -lin[j - 1].1)
                        }
                    };
                    if e != 0.0 {
                        merged.push((v, e));
                    }
                }
                t.a = merged;
            }
        }
        Compiled::Function(LogSumExp {
            n,
            shift: 0.0,
            lin,
            terms: logs,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn is_affine(&self) -> bool {
        self.terms.is_empty()
    }

    /// Subtracts `y[var]` from the function (phase-I slack).
    pub(crate) fn with_slack(&self, var: usize, n: usize) -> LogSumExp {
        let mut f = self.clone();
        f.n = n;
        f.lin.push((var, -1.0));
        f
    }

    fn linear_part(&self, y: &[f64]) -> f64 {
        self.shift + self.lin.iter().map(|&(i, a)| a * y[i]).sum::<f64>()
    }

    fn exponents(&self, y: &[f64]) -> Vec<f64> {
        self.terms
            .iter()
            .map(|t| t.b + t.a.iter().map(|&(i, a)| a * y[i]).sum::<f64>())
            .collect()
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        let base = self.linear_part(y);
        if self.terms.is_empty() {
            return base;
        }
        let z = self.exponents(y);
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = z.iter().map(|&zk| (zk - zmax).exp()).sum();
        base + zmax + s.ln()
    }

    pub(crate) fn eval(&self, y: &[f64], sc: &mut Scatter) -> FnEval {
        let base = self.linear_part(y);
        if self.terms.is_empty() {
            return FnEval {
                value: base,
                weights: Vec::new(),
                gbar: Vec::new(),
                grad: self.lin.clone(),
            };
        }
        let z = self.exponents(y);
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = z.iter().map(|&zk| (zk - zmax).exp()).collect();
        let s: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= s;
        }
        for (t, &w) in self.terms.iter().zip(&weights) {
            for &(i, a) in &t.a {
                sc.add(i, w * a);
            }
        }
        let gbar = sc.take();
        for &(i, g) in gbar.iter().chain(self.lin.iter()) {
            sc.add(i, g);
        }
        let grad = sc.take();
        FnEval {
            value: base + zmax + s.ln(),
            weights,
            gbar,
            grad,
        }
    }

    /// Adds `coef_h * hess f + coef_gg * grad f grad f^T` to `acc`.
    pub(crate) fn add_hessian(&self, ev: &FnEval, coef_h: f64, coef_gg: f64, acc: &mut HessianAcc) {
        if coef_h != 0.0 && !self.terms.is_empty() {
            let h = &mut acc.h;
            for (t, &w) in self.terms.iter().zip(&ev.weights) {
                let cw = coef_h * w;
                if cw == 0.0 {
                    continue;
                }
                for &(i, ai) in &t.a {
                    for &(j, aj) in &t.a {
                        h[(i, j)] += cw * ai * aj;
                    }
                }
            }
            acc.rank_one(-coef_h, &ev.gbar);
        }
        if coef_gg != 0.0 {
            acc.rank_one(coef_gg, &ev.grad);
        }
    }

    pub fn gradient(&self, y: &[f64]) -> DVector<f64> {
        let mut sc = Scatter::new(self.n);
        let ev = self.eval(y, &mut sc);
        let mut g = DVector::zeros(self.n);
        for (i, v) in ev.grad {
            g[i] += v;
        }
        g
    }

    pub fn hessian(&self, y: &[f64]) -> DMatrix<f64> {
        let mut sc = Scatter::new(self.n);
        let ev = self.eval(y, &mut sc);
        let mut acc = HessianAcc::new(self.n);
        self.add_hessian(&ev, 1.0, 0.0, &mut acc);
        acc.finish();
        acc.h
    }
}

/// Dense Hessian under assembly. Long rank-one updates are batched and
/// applied as one matrix product, which is far faster than scattering each
/// outer product entry by entry.
pub(crate) struct HessianAcc {
    pub h: DMatrix<f64>,
    plus: Vec<Vec<(usize, f64)>>,
    minus: Vec<Vec<(usize, f64)>>,
}

const DIRECT_RANK_ONE: usize = 12;

impl HessianAcc {
    pub fn new(n: usize) -> Self {
        HessianAcc {
            h: DMatrix::zeros(n, n),
            plus: Vec::new(),
            minus: Vec::new(),
        }
    }

    pub fn reset(&mut self) {
        self.h.fill(0.0);
        self.plus.clear();
        self.minus.clear();
    }

    /// Adds `coef * v v^T` for a sparse `v`.
    pub fn rank_one(&mut self, coef: f64, v: &[(usize, f64)]) {
        if coef == 0.0 || v.is_empty() {
            return;
        }
        if v.len() <= DIRECT_RANK_ONE {
            for &(i, vi) in v {
                for &(j, vj) in v {
                    self.h[(i, j)] += coef * vi * vj;
                }
            }
            return;
        }
        let s = coef.abs().sqrt();
        let scaled = v.iter().map(|&(i, x)| (i, s * x)).collect();
        if coef > 0.0 {
            self.plus.push(scaled);
        } else {
            self.minus.push(scaled);
        }
    }

    pub fn finish(&mut self) {
        let n = self.h.nrows();
        for (list, sign) in [(&mut self.plus, 1.0), (&mut self.minus, -1.0)] {
            if list.is_empty() {
                continue;
            }
            let mut cols = DMatrix::zeros(n, list.len());
            for (c, v) in list.iter().enumerate() {
                for &(i, x) in v {
                    cols[(i, c)] += x;
                }
            }
            // `gemm` goes through the blocked kernel; `gemm_tr` does not.
            let rows = cols.transpose();
            self.h.gemm(sign, &cols, &rows, 1.0);
            list.clear();
        }
    }
}

/// Most frequent nonzero exponent per variable, counting absent entries as
/// zero. Ties go to zero, then to the smaller exponent.
fn mode_exponents(logs: &[LogTerm]) -> Vec<(usize, f64)> {
    let mut seen: Vec<(usize, f64)> = logs.iter().flat_map(|t| t.a.iter().copied()).collect();
    seen.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let total = logs.len();
    let mut out = Vec::new();
    let mut k = 0;
    while k < seen.len() {
        let var = seen[k].0;
        let mut present = 0;
        let mut best: Option<(f64, usize)> = None;
        while k < seen.len() && seen[k].0 == var {
            let e = seen[k].1;
            let mut run = 0;
            while k < seen.len() && seen[k].0 == var && seen[k].1 == e {
                run += 1;
                k += 1;
            }
            present += run;
            if e != 0.0 && best.map_or(true, |(_, c)| run > c) {
                best = Some((e, run));
            }
        }
        let zeros = total - present;
        if let Some((e, c)) = best {
            if c > zeros {
                out.push((var, e));
            }
        }
    }
    out
}

/// `ln sum_k exp(z_k)` with max-subtraction.
pub fn log_sum_exp_eval(z: &[f64]) -> f64 {
    let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if zmax == f64::NEG_INFINITY {
        return zmax;
    }
    zmax + z.iter().map(|&v| (v - zmax).exp()).sum::<f64>().ln()
}
