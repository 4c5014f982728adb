//! Alternating power/clustering optimization and the baseline clusterings.

use std::time::{Duration, Instant};

use log::info;
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::clustering::{clustering_design, ClusteringError, ClusteringOptions, Detector, PowerPolicy};
use crate::config::SystemConfig;
use crate::model::{ClusteringState, Deployment, NetworkState};
use crate::power::{initial_power, spa, PowerError, PowerMatrix, SpaOptions};
use crate::rate::{lb_rates, RateError, RateModel};
use crate::rng::{substream, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error(transparent)]
    Power(#[from] PowerError),
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error(transparent)]
    Rate(#[from] RateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartClustering {
    GaleShapley,
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOptions {
    pub detector: Detector,
    pub alpha: f64,
    /// Absolute sum-rate change (bits per channel use) that ends the loop.
    pub tol: f64,
    pub max_iter: usize,
    pub start: StartClustering,
    pub spa: SpaOptions,
    pub persist_rejected: bool,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            detector: Detector::Ebfa,
            alpha: 2.0,
            tol: 1e-3,
            max_iter: 20,
            start: StartClustering::GaleShapley,
            spa: SpaOptions::default(),
            persist_rejected: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub power: PowerMatrix,
    pub clustering: ClusteringState,
    /// Sum rate (bits per channel use) after every half-step, starting with
    /// the first power allocation.
    pub asr_trace: Vec<f64>,
    pub asr_trace_bps: Vec<f64>,
    /// Per-UE lower-bound rate (bits per channel use) and effective SINR.
    pub rates: Vec<f64>,
    pub sinrs: Vec<f64>,
    pub iterations: usize,
    pub wall_time: Duration,
    pub detector: Option<Detector>,
    pub termination: Termination,
}

impl OptimizationResult {
    pub fn asr(&self) -> f64 {
        *self.asr_trace.last().expect("trace is never empty")
    }

    pub fn asr_bps(&self) -> f64 {
        *self.asr_trace_bps.last().expect("trace is never empty")
    }
}

fn finish(
    power: PowerMatrix,
    clustering: ClusteringState,
    trace: Vec<f64>,
    iterations: usize,
    started: Instant,
    detector: Option<Detector>,
    termination: Termination,
    deployment: &Deployment,
    config: &SystemConfig,
) -> Result<OptimizationResult, OptimizeError> {
    let net = NetworkState::new(deployment, &clustering, config);
    let rates = lb_rates(&power, &net, deployment, config)?;
    let sinrs = RateModel::new(config, deployment, &power)?.all_sinrs(&net);
    Ok(OptimizationResult {
        asr_trace_bps: trace.iter().map(|r| r * config.bandwidth).collect(),
        power,
        clustering,
        asr_trace: trace,
        rates,
        sinrs,
        iterations,
        wall_time: started.elapsed(),
        detector,
        termination,
    })
}

/// Alternates power allocation (fixed clustering) and clustering design
/// (fixed power) until the sum rate settles.
pub fn optimize(
    deployment: &Deployment,
    config: &SystemConfig,
    options: &OptimizeOptions,
) -> Result<OptimizationResult, OptimizeError> {
    let started = Instant::now();
    let mut clustering = match options.start {
        StartClustering::GaleShapley => gale_shapley_clustering(deployment, config),
        StartClustering::Random { seed } => brpa_clustering(config.num_ues, config.num_clusters, seed),
    };
    let net = NetworkState::new(deployment, &clustering, config);
    let mut power = initial_power(&net, config);
    let clustering_options = ClusteringOptions {
        detector: options.detector,
        alpha: options.alpha,
        persist_rejected: options.persist_rejected,
        power_policy: PowerPolicy::SortForSic,
        ..ClusteringOptions::default()
    };
    let min_rate = config.min_rate_per_channel_use();
    let mut trace: Vec<f64> = Vec::new();
    let mut previous: Option<f64> = None;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    for t in 1..=options.max_iter {
        iterations = t;
        let net = NetworkState::new(deployment, &clustering, config);
        let res = spa(&power, deployment, &net, config, &options.spa)?;
        power = res.power;
        trace.push(res.history.last().copied().expect("history is never empty"));

        let out = clustering_design(&clustering, &power, deployment, config, min_rate, &clustering_options)?;
        clustering = out.clustering;
        power = out.power;
        let objective = *out.asr_trace.last().expect("trace is never empty");
        trace.push(objective);
        info!("outer iteration {t}: sum rate {objective:.6} ({} loops applied)", out.applied.len());

        if previous.is_some_and(|p| (objective - p).abs() <= options.tol) {
            termination = Termination::Converged;
            break;
        }
        previous = Some(objective);
    }
    finish(
        power,
        clustering,
        trace,
        iterations,
        started,
        Some(options.detector),
        termination,
        deployment,
        config,
    )
}

/// Runs power allocation only, on a given clustering.
pub fn optimize_power_only(
    clustering: &ClusteringState,
    deployment: &Deployment,
    config: &SystemConfig,
    options: &SpaOptions,
) -> Result<OptimizationResult, OptimizeError> {
    let started = Instant::now();
    let net = NetworkState::new(deployment, clustering, config);
    let res = spa(&initial_power(&net, config), deployment, &net, config, options)?;
    let iterations = res.iterations.len();
    finish(
        res.power,
        clustering.clone(),
        vec![*res.history.last().expect("history is never empty")],
        iterations,
        started,
        None,
        Termination::Converged,
        deployment,
        config,
    )
}

/// Deferred acceptance with cluster capacity `ceil(N / G)`. UEs propose to
/// the cluster with the least total large-scale fading of its tentative
/// members; clusters keep the proposers with the smallest total fading.
pub fn gale_shapley_clustering(deployment: &Deployment, config: &SystemConfig) -> ClusteringState {
    let n_count = deployment.num_ues();
    let g_count = config.num_clusters;
    let capacity = n_count.div_ceil(g_count);
    let strength: Vec<f64> = (0..n_count).map(|n| deployment.beta.column(n).sum()).collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); g_count];
    let mut proposed = vec![vec![false; g_count]; n_count];
    let mut free: Vec<usize> = (0..n_count).collect();

    while !free.is_empty() {
        let load: Vec<f64> = members
            .iter()
            .map(|m| m.iter().map(|&n| strength[n]).sum())
            .collect();
        let mut offers: Vec<Vec<usize>> = vec![Vec::new(); g_count];
        for &n in &free {
            let target = (0..g_count)
                .filter(|&g| !proposed[n][g])
                .min_by(|&a, &b| load[a].total_cmp(&load[b]).then(a.cmp(&b)))
                .expect("total capacity covers every UE");
            proposed[n][target] = true;
            offers[target].push(n);
        }
        free.clear();
        for (g, offer) in offers.into_iter().enumerate() {
            if offer.is_empty() {
                continue;
            }
            let mut pool = std::mem::take(&mut members[g]);
            pool.extend(offer);
            pool.sort_by(|&a, &b| strength[a].total_cmp(&strength[b]).then(a.cmp(&b)));
            free.extend(pool.drain(capacity.min(pool.len())..));
            members[g] = pool;
        }
        free.sort_unstable();
    }
    let mut assignment = vec![0; n_count];
    for (g, m) in members.iter().enumerate() {
        for &n in m {
            assignment[n] = g;
        }
    }
    ClusteringState::new(assignment, g_count).expect("cluster indices are in range")
}

/// Uniformly random balanced assignment: cluster sizes differ by at most one.
pub fn brpa_clustering(num_ues: usize, num_clusters: usize, seed: u64) -> ClusteringState {
    let mut rng = substream(seed, Stream::ClusteringBaseline, 0);
    let mut ues: Vec<usize> = (0..num_ues).collect();
    ues.shuffle(&mut rng);
    let mut labels: Vec<usize> = (0..num_clusters).collect();
    labels.shuffle(&mut rng);
    let mut assignment = vec![0; num_ues];
    for (k, &n) in ues.iter().enumerate() {
        assignment[n] = labels[k % num_clusters];
    }
    ClusteringState::new(assignment, num_clusters).expect("cluster indices are in range")
}
