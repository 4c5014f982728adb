//! Power allocation for a fixed clustering by successive convex
//! approximation: each step replaces the rate objective with a tangent
//! lower bound and the SINR expressions with monomial inner
//! approximations, which yields a geometric program.

use std::f64::consts::LN_2;

use log::{debug, warn};
use nalgebra::DMatrix;
use thiserror::Error;

use crate::config::SystemConfig;
use crate::gp::{GpError, GpProblem, GpSolver, Monomial, Posynomial, SolverOptions, VarId};
use crate::model::{ClusterStats, Deployment, NetworkState};
use crate::rate::{rate_inverse, rate_nats, RateError, RateModel, RateParams};

/// Lower power floor inside the GP, relative to the per-AP budget.
pub const POWER_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerError {
    #[error("expansion point {0} must be positive")]
    Domain(f64),
    #[error("monomial approximation is degenerate: every power/estimate product is zero")]
    Degenerate,
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error("QoS targets cannot be met: {0}")]
    Infeasible(InfeasibilityReport),
}

/// Downlink power `p[m, n]` from AP `m` to UE `n` (noise-normalized).
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMatrix {
    p: DMatrix<f64>,
}

impl PowerMatrix {
    pub fn new(p: DMatrix<f64>) -> Self {
        PowerMatrix { p }
    }

    pub fn zeros(num_aps: usize, num_ues: usize) -> Self {
        Self::new(DMatrix::zeros(num_aps, num_ues))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.p
    }

    pub fn num_aps(&self) -> usize {
        self.p.nrows()
    }

    pub fn num_ues(&self) -> usize {
        self.p.ncols()
    }

    pub fn get(&self, ap: usize, ue: usize) -> f64 {
        self.p[(ap, ue)]
    }

    /// Total transmit power of every AP.
    pub fn ap_loads(&self) -> Vec<f64> {
        self.p.row_iter().map(|r| r.sum()).collect()
    }

    /// Checks the per-AP budget and the SIC power ordering (earlier-decoded
    /// UEs never get more power at any AP), both with relative slack `tol`.
    pub fn check_invariants(&self, net: &NetworkState, p_max: f64, tol: f64) -> Result<(), String> {
        if self.p.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err("negative or non-finite power".into());
        }
        for (m, load) in self.ap_loads().into_iter().enumerate() {
            if load > p_max * (1.0 + tol) {
                return Err(format!("AP {m} transmits {load:.6e} > {p_max:.6e}"));
            }
        }
        for stats in &net.clusters {
            for w in stats.members.windows(2) {
                for m in 0..self.num_aps() {
                    let (a, b) = (self.p[(m, w[0])], self.p[(m, w[1])]);
                    if a > b * (1.0 + tol) + p_max * POWER_FLOOR {
                        return Err(format!(
                            "AP {m}: UE {} decoded before UE {} but gets more power ({a:.3e} > {b:.3e})",
                            w[0], w[1]
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Per AP and cluster, hands the cluster's power values to its members
    /// in ascending order along the decoding order. Keeps every AP total.
    pub fn sorted_for_sic(&self, net: &NetworkState) -> PowerMatrix {
        let mut p = self.p.clone();
        for stats in &net.clusters {
            for m in 0..p.nrows() {
                let mut vals: Vec<f64> = stats.members.iter().map(|&n| p[(m, n)]).collect();
                vals.sort_by(f64::total_cmp);
                for (&n, v) in stats.members.iter().zip(vals) {
                    p[(m, n)] = v;
                }
            }
        }
        PowerMatrix::new(p)
    }

    fn floored(&self, p_max: f64) -> PowerMatrix {
        PowerMatrix::new(self.p.map(|v| v.max(p_max * POWER_FLOOR)))
    }
}

/// Tangent coefficients of the rate objective in `ln kappa` at `kappa_bar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCoeffs {
    pub rho: f64,
    pub chi: f64,
    pub rho_hat: f64,
    pub chi_hat: f64,
    /// Weight of `ln kappa` in the surrogate, bits per channel use.
    pub weight: f64,
}

impl BoundCoeffs {
    /// Surrogate rate (bits per channel use) at SINR `kappa`.
    pub fn surrogate(&self, kappa: f64, params: &RateParams) -> f64 {
        let a = params.penalty_coeff();
        params.bits_scale() * ((self.rho - a * self.rho_hat) * kappa.ln() + self.chi - a * self.chi_hat)
    }
}

/// `ln(1 + k) >= rho ln k + chi` and `sqrt(V(k)) <= rho_hat ln k + chi_hat`,
/// both tight at `kappa_bar`.
pub fn bound_coeffs(kappa_bar: f64, params: &RateParams) -> Result<BoundCoeffs, PowerError> {
    if !(kappa_bar > 0.0 && kappa_bar.is_finite()) {
        return Err(PowerError::Domain(kappa_bar));
    }
    let k = kappa_bar;
    let rho = k / (1.0 + k);
    let chi = k.ln_1p() - rho * k.ln();
    let root = (k * k + 2.0 * k).sqrt();
    let rho_hat = k / root - k * root / ((1.0 + k) * (1.0 + k));
    let chi_hat = (1.0 - 1.0 / ((1.0 + k) * (1.0 + k))).sqrt() - rho_hat * k.ln();
    let weight = params.eta / LN_2 * (rho - params.penalty_coeff() * rho_hat);
    Ok(BoundCoeffs {
        rho,
        chi,
        rho_hat,
        chi_hat,
        weight,
    })
}

/// `sum_m sqrt(L p_m theta_m) >= coeff * prod_m (L p_m theta_m)^{exponents_m}`,
/// tight at the expansion point.
#[derive(Debug, Clone, PartialEq)]
pub struct MonomialApprox {
    pub coeff: f64,
    pub exponents: Vec<f64>,
}

impl MonomialApprox {
    pub fn eval(&self, p: &[f64], theta: &[f64], antennas: f64) -> f64 {
        self.exponents
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > 0.0)
            .fold(self.coeff, |acc, (m, &a)| acc * (antennas * p[m] * theta[m]).powf(a))
    }
}

/// Weighted AM-GM lower bound of `sum_m sqrt(L p_m theta_m)` around `p_bar`.
pub fn monomial_approx(p_bar: &[f64], theta: &[f64], antennas: usize) -> Result<MonomialApprox, PowerError> {
    let l = antennas as f64;
    let roots: Vec<f64> = p_bar
        .iter()
        .zip(theta)
        .map(|(&p, &t)| (l * p * t).max(0.0).sqrt())
        .collect();
    let zeta: f64 = roots.iter().sum();
    if !(zeta > 0.0) {
        return Err(PowerError::Degenerate);
    }
    let exponents: Vec<f64> = roots.iter().map(|r| r / (2.0 * zeta)).collect();
    let log_c = zeta.ln()
        - exponents
            .iter()
            .zip(&roots)
            .filter(|(&a, _)| a > 0.0)
            .map(|(&a, &r)| a * 2.0 * r.ln())
            .sum::<f64>();
    Ok(MonomialApprox {
        coeff: log_c.exp(),
        exponents,
    })
}

/// Monomial approximation for one (signal, observer) pair of a cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct PairApprox {
    pub cluster: usize,
    /// Positions in the cluster's decoding order; `observer <= signal`.
    pub signal: usize,
    pub observer: usize,
    pub approx: MonomialApprox,
}

/// Expansion point of one SCA step.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaState {
    pub power: PowerMatrix,
    /// Expansion SINRs, one per UE (the effective lower-bound SINR at `power`).
    pub kappa: Vec<f64>,
    pub coeffs: Vec<BoundCoeffs>,
    pub pairs: Vec<PairApprox>,
    pub iteration: usize,
    pub history: Vec<f64>,
}

impl ScaState {
    pub fn at(
        power: &PowerMatrix,
        deployment: &Deployment,
        net: &NetworkState,
        config: &SystemConfig,
    ) -> Result<ScaState, PowerError> {
        let power = power.floored(config.max_dl_power);
        let model = RateModel::new(config, deployment, &power)?;
        let kappa = model.all_sinrs(net);
        let params = *model.params();
        let coeffs = kappa
            .iter()
            .map(|&k| bound_coeffs(k, &params))
            .collect::<Result<Vec<_>, _>>()?;
        let mut pairs = Vec::new();
        for (g, stats) in net.clusters.iter().enumerate() {
            for i in 0..stats.len() {
                let n = stats.members[i];
                let column: Vec<f64> = power.matrix().column(n).iter().copied().collect();
                for j in 0..=i {
                    pairs.push(PairApprox {
                        cluster: g,
                        signal: i,
                        observer: j,
                        approx: monomial_approx(&column, &stats.theta[j], config.antennas_per_ap)?,
                    });
                }
            }
        }
        Ok(ScaState {
            power,
            kappa,
            coeffs,
            pairs,
            iteration: 0,
            history: Vec::new(),
        })
    }
}

/// Variable indices of the power-allocation GP. Power variables are
/// normalized by the per-AP budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarLayout {
    pub num_aps: usize,
    pub num_ues: usize,
    pub has_slack: bool,
}

impl VarLayout {
    pub fn power(&self, m: usize, n: usize) -> VarId {
        m * self.num_ues + n
    }

    pub fn kappa(&self, n: usize) -> VarId {
        self.num_aps * self.num_ues + n
    }

    pub fn slack(&self) -> Option<VarId> {
        self.has_slack.then_some(self.num_aps * self.num_ues + self.num_ues)
    }

    pub fn num_vars(&self) -> usize {
        self.num_aps * self.num_ues + self.num_ues + self.has_slack as usize
    }

    pub fn power_from(&self, x: &[f64], p_max: f64) -> PowerMatrix {
        PowerMatrix::new(DMatrix::from_fn(self.num_aps, self.num_ues, |m, n| {
            x[self.power(m, n)] * p_max
        }))
    }

    fn point(&self, power: &PowerMatrix, kappa: &[f64], p_max: f64, slack: f64) -> Vec<f64> {
        let mut x = vec![0.0; self.num_vars()];
        for m in 0..self.num_aps {
            for n in 0..self.num_ues {
                // Pulled slightly inside the budget so the point is strictly feasible.
                x[self.power(m, n)] = (power.get(m, n) / p_max * (1.0 - 1e-7)).max(POWER_FLOOR * 1.01);
            }
        }
        for (n, &k) in kappa.iter().enumerate() {
            x[self.kappa(n)] = k.max(1e-12);
        }
        if let Some(s) = self.slack() {
            x[s] = slack;
        }
        x
    }
}

/// Number of constraints of each family in a built subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConstraintCounts {
    pub sinr: usize,
    pub qos: usize,
    pub ap_power: usize,
    pub sic_order: usize,
    pub frozen: usize,
}

impl ConstraintCounts {
    pub fn total(&self) -> usize {
        self.sinr + self.qos + self.ap_power + self.sic_order + self.frozen
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subproblem {
    pub problem: GpProblem,
    pub layout: VarLayout,
    pub counts: ConstraintCounts,
}

/// What the subproblem optimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SubproblemGoal {
    /// Tangent surrogate of the sum rate.
    SumRate,
    /// Smallest factor `s >= floor` by which every QoS target must be
    /// divided to become achievable.
    QosSlack { floor: f64 },
}

/// Interference-plus-noise term of the lower-bound SINR for member
/// `signal` seen by member `observer` (positions in `stats`), as a
/// posynomial in the normalized power variables.
pub fn interference_posynomial(
    layout: &VarLayout,
    stats: &ClusterStats,
    signal: usize,
    observer: usize,
    deployment: &Deployment,
    config: &SystemConfig,
) -> Posynomial {
    let p_max = config.max_dl_power;
    let l = config.antennas_per_ap as f64;
    let beta = &deployment.beta;
    let u = stats.members[observer];
    let theta = &stats.theta[observer];
    let mut terms = Vec::new();
    for m in 0..layout.num_aps {
        let b = beta[(m, u)];
        if b <= 0.0 {
            continue;
        }
        for n in 0..layout.num_ues {
            terms.push(Monomial::new(p_max * b, [(layout.power(m, n), 1.0)]));
        }
    }
    let residual = 2.0 - 2.0 * config.sic_coeff;
    for (k, &ue) in stats.members.iter().enumerate() {
        let factor = match k.cmp(&signal) {
            std::cmp::Ordering::Less => l,
            std::cmp::Ordering::Greater => l * residual,
            std::cmp::Ordering::Equal => continue,
        };
        if factor <= 0.0 {
            continue;
        }
        for m in 0..layout.num_aps {
            if theta[m] <= 0.0 {
                continue;
            }
            terms.push(Monomial::new(factor * p_max * theta[m], [(layout.power(m, ue), 1.0)]));
            for m2 in m + 1..layout.num_aps {
                if theta[m2] <= 0.0 {
                    continue;
                }
                terms.push(Monomial::new(
                    2.0 * factor * p_max * (theta[m] * theta[m2]).sqrt(),
                    [(layout.power(m, ue), 0.5), (layout.power(m2, ue), 0.5)],
                ));
            }
        }
    }
    terms.push(Monomial::constant(1.0));
    Posynomial::new(terms)
}

/// Minimum SINR per UE that meets the rate requirement.
pub fn qos_targets(config: &SystemConfig) -> Result<Vec<f64>, RateError> {
    let params = RateParams::from_config(config)?;
    let target = rate_inverse(config.min_rate_per_channel_use(), &params)?;
    Ok(vec![target; config.num_ues])
}

/// Builds the geometric program of one SCA step around `state`.
pub fn build_gp_subproblem(
    state: &ScaState,
    net: &NetworkState,
    deployment: &Deployment,
    config: &SystemConfig,
    qos: &[f64],
    goal: SubproblemGoal,
) -> Subproblem {
    let layout = VarLayout {
        num_aps: deployment.num_aps(),
        num_ues: deployment.num_ues(),
        has_slack: matches!(goal, SubproblemGoal::QosSlack { .. }),
    };
    let p_max = config.max_dl_power;
    let l = config.antennas_per_ap as f64;
    let mut problem = GpProblem::new();
    for m in 0..layout.num_aps {
        for n in 0..layout.num_ues {
            problem.add_var(format!("p_{m}_{n}"));
        }
    }
    for n in 0..layout.num_ues {
        problem.add_var(format!("kappa_{n}"));
    }
    if layout.has_slack {
        problem.add_var("slack");
    }
    let mut counts = ConstraintCounts::default();

    match goal {
        SubproblemGoal::SumRate => {
            let mut objective = Monomial::constant(1.0);
            for n in 0..layout.num_ues {
                let w = state.coeffs[n].weight;
                if w > 0.0 {
                    objective = objective.mul(&Monomial::new(1.0, [(layout.kappa(n), -w)]));
                } else {
                    // No reward for raising this SINR: pin it for this step.
                    let pinned = state.kappa[n].max(qos[n]);
                    problem.add_equality(Monomial::new(1.0 / pinned, [(layout.kappa(n), 1.0)]));
                    counts.frozen += 1;
                }
            }
            problem.set_objective(objective);
        }
        SubproblemGoal::QosSlack { floor } => {
            let s = layout.slack().expect("slack variable");
            problem.set_objective(Monomial::var(s));
            problem.set_bounds(s, Some(floor), None);
        }
    }

    for pair in &state.pairs {
        let stats = net.cluster(pair.cluster);
        let n = stats.members[pair.signal];
        let theta = &stats.theta[pair.observer];
        let mut lower = Monomial::new(pair.approx.coeff * pair.approx.coeff, []);
        for (m, &a) in pair.approx.exponents.iter().enumerate() {
            if a > 0.0 {
                lower = lower.mul(&Monomial::new(
                    (l * p_max * theta[m]).powf(2.0 * a),
                    [(layout.power(m, n), 2.0 * a)],
                ));
            }
        }
        let scale = Monomial::new(1.0, [(layout.kappa(n), 1.0)]).mul(&lower.recip());
        let denom = interference_posynomial(&layout, stats, pair.signal, pair.observer, deployment, config);
        problem.add_inequality(denom.mul_monomial(&scale));
        counts.sinr += 1;
    }

    for n in 0..layout.num_ues {
        let mut m = Monomial::new(qos[n], [(layout.kappa(n), -1.0)]);
        if let Some(s) = layout.slack() {
            m = m.mul(&Monomial::new(1.0, [(s, -1.0)]));
        }
        problem.add_inequality(m);
        counts.qos += 1;
    }

    for m in 0..layout.num_aps {
        let row: Vec<Monomial> = (0..layout.num_ues).map(|n| Monomial::var(layout.power(m, n))).collect();
        problem.add_inequality(Posynomial::new(row));
        counts.ap_power += 1;
    }

    for stats in &net.clusters {
        for w in stats.members.windows(2) {
            for m in 0..layout.num_aps {
                problem.add_inequality(Monomial::new(
                    1.0,
                    [(layout.power(m, w[0]), 1.0), (layout.power(m, w[1]), -1.0)],
                ));
                counts.sic_order += 1;
            }
        }
    }

    for m in 0..layout.num_aps {
        for n in 0..layout.num_ues {
            problem.set_bounds(layout.power(m, n), Some(POWER_FLOOR), None);
        }
    }

    Subproblem {
        problem,
        layout,
        counts,
    }
}

/// Starting allocation: at every AP the budget is split in proportion to
/// each UE's 1-based position in its cluster's decoding order.
pub fn initial_power(net: &NetworkState, config: &SystemConfig) -> PowerMatrix {
    let n_count = config.num_ues;
    let mut rank = vec![0.0; n_count];
    for stats in &net.clusters {
        for (k, &n) in stats.members.iter().enumerate() {
            rank[n] = (k + 1) as f64;
        }
    }
    let total: f64 = rank.iter().sum();
    PowerMatrix::new(DMatrix::from_fn(config.num_aps, n_count, |_, n| {
        config.max_dl_power * rank[n] / total
    }))
}

/// Sum of clamped lower-bound rates, bits per channel use.
pub fn true_objective(
    power: &PowerMatrix,
    deployment: &Deployment,
    net: &NetworkState,
    config: &SystemConfig,
) -> Result<f64, PowerError> {
    let model = RateModel::new(config, deployment, power)?;
    let params = *model.params();
    Ok(model
        .all_sinrs(net)
        .into_iter()
        .map(|g| params.bits_scale() * rate_nats(g, &params).max(0.0))
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaOptions {
    /// Relative objective change that ends the loop.
    pub tol: f64,
    pub max_iter: usize,
    pub solver: SolverOptions,
}

impl Default for SpaOptions {
    fn default() -> Self {
        SpaOptions {
            tol: 1e-3,
            max_iter: 20,
            // Each subproblem starts next to the previous optimum, so the
            // central path is entered late. A surrogate optimum only needs
            // to beat the expansion point, so the gap target is loose.
            solver: SolverOptions {
                tol: 1e-6,
                mu0: 1e-3,
                mu_factor: 50.0,
                ..SolverOptions::default()
            },
        }
    }
}

/// Per-iteration record of the SCA loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaIteration {
    /// True objective at the expansion point.
    pub objective_before: f64,
    /// True objective at the subproblem solution.
    pub objective_after: f64,
    /// Surrogate at the expansion point (equals the unclamped true sum rate).
    pub surrogate_at_expansion: f64,
    pub unclamped_at_expansion: f64,
    /// Surrogate at the solution's auxiliary SINRs.
    pub surrogate_at_solution: f64,
    pub unclamped_at_solution: f64,
    pub accepted: bool,
    pub newton_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaResult {
    pub power: PowerMatrix,
    /// Effective lower-bound SINR per UE at `power`.
    pub kappa: Vec<f64>,
    /// True objective after each accepted iterate, starting with the input.
    pub history: Vec<f64>,
    pub iterations: Vec<SpaIteration>,
}

impl SpaResult {
    pub fn objective(&self) -> f64 {
        *self.history.last().expect("history is never empty")
    }
}

/// Successive convex approximation power allocation from `p0`.
pub fn spa(
    p0: &PowerMatrix,
    deployment: &Deployment,
    net: &NetworkState,
    config: &SystemConfig,
    options: &SpaOptions,
) -> Result<SpaResult, PowerError> {
    let qos = qos_targets(config)?;
    match spa_loop(p0, deployment, net, config, options, &qos) {
        Err(PowerError::Gp(GpError::Infeasible { .. })) => {
            warn!("power subproblem infeasible; running the feasibility phase");
            match feasibility_phase(deployment, net, config, &options.solver)? {
                Feasibility::Feasible { power, .. } => spa_loop(&power, deployment, net, config, options, &qos),
                Feasibility::Infeasible(report) => Err(PowerError::Infeasible(report)),
            }
        }
        other => other,
    }
}

fn spa_loop(
    p0: &PowerMatrix,
    deployment: &Deployment,
    net: &NetworkState,
    config: &SystemConfig,
    options: &SpaOptions,
    qos: &[f64],
) -> Result<SpaResult, PowerError> {
    let params = RateParams::from_config(config)?;
    let solver = GpSolver::new(options.solver.clone());
    let p_max = config.max_dl_power;
    let mut power = p0.floored(p_max);
    let mut objective = true_objective(&power, deployment, net, config)?;
    let mut history = vec![objective];
    let mut iterations = Vec::new();

    for it in 0..options.max_iter {
        let mut state = ScaState::at(&power, deployment, net, config)?;
        state.iteration = it;
        let sub = build_gp_subproblem(&state, net, deployment, config, qos, SubproblemGoal::SumRate);
        let start: Vec<f64> = state.kappa.iter().map(|k| k * (1.0 - 1e-6)).collect();
        let x0 = sub.layout.point(&state.power, &start, p_max, 1.0);
        let sol = solver.solve_from(&sub.problem, &x0)?;
        let candidate = sub.layout.power_from(&sol.x, p_max);
        let cand_obj = true_objective(&candidate, deployment, net, config)?;
        let cand_sinr = RateModel::new(config, deployment, &candidate)?.all_sinrs(net);
        let unclamped = |kappa: &[f64]| -> f64 {
            kappa
                .iter()
                .map(|&k| params.bits_scale() * rate_nats(k, &params))
                .sum()
        };

        let surrogate_at = |kappa: &[f64]| -> f64 {
            state
                .coeffs
                .iter()
                .zip(kappa)
                .map(|(c, &k)| c.surrogate(k, &params))
                .sum()
        };
        let kappa_sol: Vec<f64> = (0..sub.layout.num_ues).map(|n| sol.x[sub.layout.kappa(n)]).collect();
        let record = SpaIteration {
            objective_before: objective,
            objective_after: cand_obj,
            surrogate_at_expansion: surrogate_at(&state.kappa),
            unclamped_at_expansion: unclamped(&state.kappa),
            surrogate_at_solution: surrogate_at(&kappa_sol),
            unclamped_at_solution: unclamped(&cand_sinr),
            accepted: cand_obj >= objective,
            newton_steps: sol.newton_steps + sol.phase1_steps,
        };
        debug!(
            "SPA iteration {it}: objective {objective:.6} -> {cand_obj:.6} ({} Newton steps)",
            record.newton_steps
        );
        let accepted = record.accepted;
        iterations.push(record);
        if !accepted {
            break;
        }
        let change = (cand_obj - objective).abs() / objective.abs().max(f64::MIN_POSITIVE);
        power = candidate;
        objective = cand_obj;
        history.push(objective);
        if change < options.tol {
            break;
        }
    }

    let model = RateModel::new(config, deployment, &power)?;
    let kappa = model.all_sinrs(net);
    Ok(SpaResult {
        power,
        kappa,
        history,
        iterations,
    })
}

/// Why no power allocation meets every QoS target.
#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibilityReport {
    /// Smallest achievable division factor of the SINR targets.
    pub slack: f64,
    /// `(UE, required SINR / achieved SINR)` for every UE that falls short.
    pub shortfall: Vec<(usize, f64)>,
    pub best_power: Option<PowerMatrix>,
}

impl std::fmt::Display for InfeasibilityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "slack {:.4}; short UEs:", self.slack)?;
        for (n, r) in &self.shortfall {
            write!(f, " {n} (x{r:.3})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Feasible { power: PowerMatrix, slack: f64 },
    Infeasible(InfeasibilityReport),
}

/// Relative margin kept below the QoS targets during the feasibility phase,
/// so the returned point is strictly feasible for the next subproblem.
const FEASIBILITY_MARGIN: f64 = 0.05;

/// Looks for a power allocation meeting every QoS target by SCA on the
/// smallest target-division factor `s`.
pub fn feasibility_phase(
    deployment: &Deployment,
    net: &NetworkState,
    config: &SystemConfig,
    solver_options: &SolverOptions,
) -> Result<Feasibility, PowerError> {
    let n_count = config.num_ues;
    let qos = match qos_targets(config) {
        Ok(q) => q,
        Err(RateError::Unreachable { .. }) => {
            return Ok(Feasibility::Infeasible(InfeasibilityReport {
                slack: f64::INFINITY,
                shortfall: (0..n_count).map(|n| (n, f64::INFINITY)).collect(),
                best_power: None,
            }))
        }
        Err(e) => return Err(e.into()),
    };
    let p_max = config.max_dl_power;
    let solver = GpSolver::new(solver_options.clone());
    let shortfall_of = |power: &PowerMatrix| -> Result<Vec<(usize, f64)>, PowerError> {
        let model = RateModel::new(config, deployment, power)?;
        Ok(model
            .all_sinrs(net)
            .into_iter()
            .enumerate()
            .filter(|&(n, g)| g < qos[n] * (1.0 - 1e-9))
            .map(|(n, g)| (n, qos[n] / g))
            .collect())
    };

    let mut power = initial_power(net, config);
    if shortfall_of(&power)?.is_empty() {
        return Ok(Feasibility::Feasible { power, slack: 1.0 });
    }
    let mut slack = f64::INFINITY;
    for _ in 0..40 {
        let state = ScaState::at(&power, deployment, net, config)?;
        let sub = build_gp_subproblem(
            &state,
            net,
            deployment,
            config,
            &qos,
            SubproblemGoal::QosSlack {
                floor: 1.0 - FEASIBILITY_MARGIN,
            },
        );
        let worst = state
            .kappa
            .iter()
            .zip(&qos)
            .map(|(k, q)| q / k)
            .fold(0.0f64, f64::max);
        let start: Vec<f64> = state.kappa.iter().map(|k| k * (1.0 - 1e-6)).collect();
        let x0 = sub.layout.point(&state.power, &start, p_max, worst * (1.0 + 1e-6) + 1e-9);
        let sol = solver.solve_from(&sub.problem, &x0)?;
        let s = sol.x[sub.layout.slack().expect("slack variable")];
        power = sub.layout.power_from(&sol.x, p_max);
        debug!("feasibility phase: slack {s:.6}");
        let done = s <= 1.0 || (slack - s) <= 1e-6 * slack;
        slack = s;
        if done {
            break;
        }
    }
    let shortfall = shortfall_of(&power)?;
    if shortfall.is_empty() {
        Ok(Feasibility::Feasible {
            power,
            slack: slack.max(1.0),
        })
    } else {
        Ok(Feasibility::Infeasible(InfeasibilityReport {
            slack,
            shortfall,
            best_power: Some(power),
        }))
    }
}
