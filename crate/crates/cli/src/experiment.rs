//! Sweep and lower-bound experiments over seeded deployments.

use std::io::Write;

use cfnoma::clustering::Detector;
use cfnoma::config::SystemConfig;
use cfnoma::model::{generate_deployment, Deployment};
use cfnoma::montecarlo::{check_lower_bound, LbReport};
use cfnoma::optimizer::{
    brpa_clustering, gale_shapley_clustering, optimize, optimize_power_only, OptimizationResult, OptimizeError,
};
use cfnoma::power::PowerError;
use cfnoma::rate::RateError;
use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{Algorithm, ConfigError, ExperimentConfig};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("output failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Runs one algorithm on one deployment. `seed` drives the random
/// baseline clustering and the random optimizer start.
pub fn run_algorithm(
    algorithm: Algorithm,
    deployment: &Deployment,
    system: &SystemConfig,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<OptimizationResult, OptimizeError> {
    match algorithm {
        Algorithm::SEbfa => optimize(deployment, system, &config.optimize_options(Detector::Ebfa, seed)),
        Algorithm::SGsa => optimize(deployment, system, &config.optimize_options(Detector::Gsa, seed)),
        Algorithm::GaleShapley => {
            let x = gale_shapley_clustering(deployment, system);
            optimize_power_only(&x, deployment, system, &config.spa_options())
        }
        Algorithm::Brpa => {
            let x = brpa_clustering(system.num_ues, system.num_clusters, seed);
            optimize_power_only(&x, deployment, system, &config.spa_options())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub asr_bps: f64,
    pub asr_norm: f64,
    pub iterations: usize,
    pub wall_ms: f64,
    pub asr_trace: Vec<f64>,
}

/// One (sweep value, seed, algorithm) run. `outcome` is `None` when the
/// instance could not be solved (QoS infeasible or a solver failure).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub value: f64,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub var: &'static str,
    pub records: Vec<SweepRecord>,
}

impl SweepResult {
    pub fn outcome(&self, value: f64, seed: u64, algorithm: Algorithm) -> Option<&Outcome> {
        self.records
            .iter()
            .find(|r| r.value == value && r.seed == seed && r.algorithm == algorithm)
            .and_then(|r| r.outcome.as_ref())
    }

    /// Mean normalized sum rate of `algorithm` at `value` over solved
    /// instances.
    pub fn mean_asr(&self, value: f64, algorithm: Algorithm) -> Option<f64> {
        let v: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.value == value && r.algorithm == algorithm)
            .filter_map(|r| r.outcome.as_ref().map(|o| o.asr_norm))
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn all_feasible(&self) -> bool {
        self.records.iter().all(|r| r.outcome.is_some())
    }

    /// Data rows plus one aggregate row per (value, algorithm).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        let mut values: Vec<f64> = self.records.iter().map(|r| r.value).collect();
        values.dedup();
        let mut algorithms: Vec<Algorithm> = Vec::new();
        for r in &self.records {
            if !algorithms.contains(&r.algorithm) {
                algorithms.push(r.algorithm);
            }
        }
        for &value in &values {
            for &algorithm in &algorithms {
                let group: Vec<&SweepRecord> = self
                    .records
                    .iter()
                    .filter(|r| r.value == value && r.algorithm == algorithm)
                    .collect();
                for r in &group {
                    let base = [self.var.to_string(), fmt(value), algorithm.to_string(), r.seed.to_string()];
                    let rest = match &r.outcome {
                        Some(o) => [
                            fmt(o.asr_bps),
                            fmt(o.asr_norm),
                            o.iterations.to_string(),
                            fmt(o.wall_ms),
                            "true".into(),
                        ],
                        None => [String::new(), String::new(), String::new(), String::new(), "false".into()],
                    };
                    w.write_record(base.iter().chain(&rest).chain(&[String::new(), String::new()]))?;
                }
                let solved: Vec<&Outcome> = group.iter().filter_map(|r| r.outcome.as_ref()).collect();
                let stat = |f: &dyn Fn(&Outcome) -> f64| -> (String, String) {
                    if solved.is_empty() {
                        return (String::new(), String::new());
                    }
                    let (mean, std) = mean_std(solved.iter().map(|o| f(o)));
                    (fmt(mean), fmt(std))
                };
                let (bps, bps_std) = stat(&|o| o.asr_bps);
                let (norm, norm_std) = stat(&|o| o.asr_norm);
                let (iters, _) = stat(&|o| o.iterations as f64);
                let (wall, _) = stat(&|o| o.wall_ms);
                w.write_record([
                    self.var.to_string(),
                    fmt(value),
                    algorithm.to_string(),
                    "mean".into(),
                    bps,
                    norm,
                    iters,
                    wall,
                    format!("{}/{}", solved.len(), group.len()),
                    bps_std,
                    norm_std,
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub const CSV_HEADER: [&str; 11] = [
    "sweep_var",
    "value",
    "algorithm",
    "seed",
    "asr_bps",
    "asr_norm",
    "iters",
    "wall_ms",
    "feasible",
    "asr_bps_std",
    "asr_norm_std",
];

fn fmt(x: f64) -> String {
    format!("{x}")
}

/// Mean and sample standard deviation (zero for a single sample).
pub fn mean_std(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = xs.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every (value, seed, algorithm) of the sweep on the current rayon
/// pool. Records come back in sweep order regardless of scheduling.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult, ExperimentError> {
    config.validate()?;
    let sw = &config.sweep;
    let mut tasks = Vec::new();
    for &value in &sw.values {
        for &seed in &sw.seeds {
            for &algorithm in &sw.algorithms {
                tasks.push((value, seed, algorithm));
            }
        }
    }
    let records = tasks
        .into_par_iter()
        .map(|(value, seed, algorithm)| -> Result<SweepRecord, ExperimentError> {
            let system = config.system_at(value)?;
            let deployment = generate_deployment(&system, seed);
            let outcome = match run_algorithm(algorithm, &deployment, &system, config, seed) {
                Ok(res) => Some(Outcome {
                    asr_bps: res.asr_bps(),
                    asr_norm: res.asr(),
                    iterations: res.iterations,
                    wall_ms: if sw.record_timing {
                        res.wall_time.as_secs_f64() * 1e3
                    } else {
                        0.0
                    },
                    asr_trace: res.asr_trace,
                }),
                Err(OptimizeError::Power(PowerError::Infeasible(report))) => {
                    warn!("{} = {value}, seed {seed}, {algorithm}: infeasible ({report})", sw.var.name());
                    None
                }
                Err(e) => {
                    warn!("{} = {value}, seed {seed}, {algorithm}: {e}", sw.var.name());
                    None
                }
            };
            Ok(SweepRecord {
                value,
                seed,
                algorithm,
                outcome,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepResult {
        var: sw.var.name(),
        records,
    })
}

/// Lower-bound check at one sweep point and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct LbCase {
    pub value: f64,
    pub seed: u64,
    pub clusters: Vec<usize>,
    pub report: LbReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbSummary {
    pub cases: Vec<LbCase>,
    pub tightness_limit: f64,
}

impl LbSummary {
    pub fn all_valid(&self) -> bool {
        self.cases.iter().all(|c| c.report.all_valid)
    }

    pub fn all_own_valid(&self) -> bool {
        self.cases.iter().all(|c| c.report.all_own_valid)
    }

    pub fn worst_mean_gap(&self) -> f64 {
        self.cases
            .iter()
            .map(|c| c.report.mean_relative_gap)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn tight(&self) -> bool {
        self.worst_mean_gap() <= self.tightness_limit
    }

    pub fn write_csv<W: Write>(&self, var: &str, out: W) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "sweep_var",
            "value",
            "seed",
            "ue",
            "cluster",
            "lower_bound",
            "empirical",
            "ci_half_width",
            "relative_gap",
            "valid",
            "own_bound",
            "own_empirical",
            "own_ci_half_width",
            "own_valid",
        ])?;
        for c in &self.cases {
            for r in &c.report.rows {
                w.write_record([
                    var.to_string(),
                    fmt(c.value),
                    c.seed.to_string(),
                    r.ue.to_string(),
                    c.clusters[r.ue].to_string(),
                    fmt(r.lower_bound),
                    fmt(r.empirical.mean),
                    fmt(r.empirical.ci_half_width),
                    fmt(r.relative_gap),
                    r.valid.to_string(),
                    fmt(r.own_bound),
                    fmt(r.own_empirical.mean),
                    fmt(r.own_empirical.ci_half_width),
                    r.own_valid.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Human-readable per-case lines plus the overall verdicts.
    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        for c in &self.cases {
            out.push_str(&format!(
                "value {} seed {}: mean gap {:.4}, valid {}, own-observer valid {}\n",
                c.value, c.seed, c.report.mean_relative_gap, c.report.all_valid, c.report.all_own_valid
            ));
        }
        let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
        out.push_str(&format!("lb validity: {}\n", verdict(self.all_valid())));
        out.push_str(&format!("own-observer validity: {}\n", verdict(self.all_own_valid())));
        out.push_str(&format!(
            "tightness (worst mean gap {:.4} <= {}): {}\n",
            self.worst_mean_gap(),
            self.tightness_limit,
            verdict(self.tight())
        ));
        out
    }
}

/// Relative-gap ceiling of the tightness guard.
pub const LB_TIGHTNESS: f64 = 0.10;

/// Optimizes each (value, seed) instance with `algorithm`, then compares
/// the closed-form rates with simulated ergodic rates.
pub fn validate_lb(config: &ExperimentConfig, algorithm: Algorithm) -> Result<LbSummary, ExperimentError> {
    config.validate()?;
    let sw = &config.sweep;
    let mut tasks = Vec::new();
    for &value in &sw.values {
        for &seed in &sw.seeds {
            tasks.push((value, seed));
        }
    }
    let cases = tasks
        .into_iter()
        .map(|(value, seed)| -> Result<LbCase, ExperimentError> {
            let system = config.system_at(value)?;
            let deployment = generate_deployment(&system, seed);
            let res = run_algorithm(algorithm, &deployment, &system, config, seed)?;
            let report = check_lower_bound(
                &deployment,
                &res.clustering,
                &res.power,
                &system,
                config.montecarlo.trials,
                seed,
                config.montecarlo.mode.into(),
            )?;
            Ok(LbCase {
                value,
                seed,
                clusters: res.clustering.pi().to_vec(),
                report,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LbSummary {
        cases,
        tightness_limit: LB_TIGHTNESS,
    })
}
