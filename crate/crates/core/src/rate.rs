//! Finite-blocklength rate model and the closed-form lower bound on the
//! ergodic rate of every UE.
//!
//! Rates are expressed in bits per channel use of the whole coherence block
//! (the pre-log `eta = tau_d / tau_c` is included); multiply by the bandwidth
//! for bits/s.

use std::f64::consts::{LN_2, SQRT_2};

use nalgebra::DMatrix;
use statrs::function::erf::{erfc, erfc_inv};
use thiserror::Error;

use crate::config::SystemConfig;
use crate::model::{ClusterStats, ClusteringState, Deployment, NetworkState};
use crate::power::PowerMatrix;

/// SINR at which the rate inversion gives up.
pub const DEFAULT_SINR_CAP: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("probability {0} is outside (0, 1)")]
    Domain(f64),
    #[error("rate {target} exceeds the rate {max} reachable at the SINR cap")]
    Unreachable { target: f64, max: f64 },
    #[error("observer UE {observer} is decoded after signal UE {signal}")]
    OrderingViolation { signal: usize, observer: usize },
    #[error("UEs {0} and {1} are not in the same cluster")]
    NotSameCluster(usize, usize),
}

/// Gaussian tail probability `Q(x) = erfc(x / sqrt 2) / 2`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Inverse of the Gaussian Q-function.
pub fn q_inverse(epsilon: f64) -> Result<f64, RateError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(RateError::Domain(epsilon));
    }
    if epsilon == 0.5 {
        return Ok(0.0);
    }
    if epsilon > 0.5 {
        return q_inverse(1.0 - epsilon).map(|x| -x);
    }
    let mut x = SQRT_2 * erfc_inv(2.0 * epsilon);
    // Newton on ln Q(x) = ln eps polishes the tail to full relative accuracy.
    for _ in 0..4 {
        let q = q_function(x);
        let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if q <= 0.0 || pdf <= 0.0 {
            break;
        }
        x += (q.ln() - epsilon.ln()) * q / pdf;
    }
    Ok(x)
}

/// Channel dispersion `V(gamma) = 1 - (1 + gamma)^-2`.
pub fn dispersion(gamma: f64) -> f64 {
    let g = gamma.max(0.0);
    1.0 - 1.0 / ((1.0 + g) * (1.0 + g))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateParams {
    pub eta: f64,
    pub tau_d: f64,
    pub epsilon: f64,
    pub qinv: f64,
}

impl RateParams {
    pub fn new(eta: f64, tau_d: f64, epsilon: f64) -> Result<Self, RateError> {
        Ok(RateParams {
            eta,
            tau_d,
            epsilon,
            qinv: q_inverse(epsilon)?,
        })
    }

    pub fn from_config(config: &SystemConfig) -> Result<Self, RateError> {
        Self::new(config.eta(), config.data_len() as f64, config.epsilon)
    }

    /// `a = Q^-1(eps) / sqrt(eta tau_d)`, the dispersion weight in the
    /// nats-domain rate `ln(1 + gamma) - a sqrt(V(gamma))`.
    pub fn penalty_coeff(&self) -> f64 {
        self.qinv / (self.eta * self.tau_d).sqrt()
    }

    /// Conversion from the nats-domain objective to bits per channel use.
    pub fn bits_scale(&self) -> f64 {
        self.eta / LN_2
    }
}

/// `ln(1 + gamma) - a sqrt(V(gamma))`, not clamped.
pub fn rate_nats(gamma: f64, params: &RateParams) -> f64 {
    let g = gamma.max(0.0);
    g.ln_1p() - params.penalty_coeff() * dispersion(g).sqrt()
}

/// Normal-approximation rate without the clamp at zero.
pub fn fbc_rate_unclamped(gamma: f64, params: &RateParams) -> f64 {
    params.bits_scale() * rate_nats(gamma, params)
}

/// Normal-approximation rate, clamped at zero.
pub fn fbc_rate(gamma: f64, params: &RateParams) -> f64 {
    fbc_rate_unclamped(gamma, params).max(0.0)
}

/// SINR where the unclamped rate crosses zero.
pub fn zero_rate_sinr(params: &RateParams) -> f64 {
    if params.qinv <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (1e-12_f64, 1e12_f64);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if fbc_rate_unclamped(mid, params) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    hi
}

/// Smallest SINR achieving `target` bits per channel use.
pub fn rate_inverse(target: f64, params: &RateParams) -> Result<f64, RateError> {
    rate_inverse_capped(target, params, DEFAULT_SINR_CAP)
}

pub fn rate_inverse_capped(target: f64, params: &RateParams, cap: f64) -> Result<f64, RateError> {
    let floor = zero_rate_sinr(params);
    if target <= 0.0 {
        return Ok(floor);
    }
    let max = fbc_rate(cap, params);
    if max < target {
        return Err(RateError::Unreachable { target, max });
    }
    let (mut lo, mut hi) = (floor, cap);
    for _ in 0..400 {
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        let mid = if mid <= lo || mid >= hi { 0.5 * (lo + hi) } else { mid };
        if fbc_rate_unclamped(mid, params) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(hi)
}

/// Terms of the lower-bound SINR seen by one observer decoding one signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinrBreakdown {
    pub desired: f64,
    pub inter_cluster: f64,
    pub intra_pre_sic: f64,
    pub residual_sic: f64,
    pub beamform_uncertainty: f64,
    pub noise: f64,
}

impl SinrBreakdown {
    pub fn interference(&self) -> f64 {
        self.inter_cluster + self.intra_pre_sic + self.residual_sic + self.beamform_uncertainty + self.noise
    }

    pub fn sinr(&self) -> f64 {
        self.desired / self.interference()
    }
}

/// Evaluates lower-bound SINRs for a fixed power allocation. The
/// all-UE interference term only depends on per-AP total power, so one model
/// serves any hypothetical clustering.
#[derive(Debug, Clone)]
pub struct RateModel<'a> {
    beta: &'a DMatrix<f64>,
    power: &'a PowerMatrix,
    ap_load: Vec<f64>,
    antennas: f64,
    residual_factor: f64,
    params: RateParams,
}

impl<'a> RateModel<'a> {
    pub fn new(
        config: &SystemConfig,
        deployment: &'a Deployment,
        power: &'a PowerMatrix,
    ) -> Result<Self, RateError> {
        Ok(Self::with_params(config, deployment, power, RateParams::from_config(config)?))
    }

    pub fn with_params(
        config: &SystemConfig,
        deployment: &'a Deployment,
        power: &'a PowerMatrix,
        params: RateParams,
    ) -> Self {
        RateModel {
            beta: &deployment.beta,
            power,
            ap_load: power.ap_loads(),
            antennas: config.antennas_per_ap as f64,
            residual_factor: 2.0 - 2.0 * config.sic_coeff,
            params,
        }
    }

    pub fn params(&self) -> &RateParams {
        &self.params
    }

    /// `sum_m sqrt(p_{m,signal} theta_{m,observer})` for every pair of members.
    fn cross_sums(&self, stats: &ClusterStats) -> Vec<Vec<f64>> {
        let p = self.power.matrix();
        stats
            .members
            .iter()
            .map(|&n| {
                stats
                    .theta
                    .iter()
                    .map(|th| {
                        th.iter()
                            .enumerate()
                            .map(|(m, &t)| (p[(m, n)] * t).sqrt())
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    /// `sum_m p_{m,ue} beta_{m,observer}`.
    fn own_variance(&self, ue: usize, observer: usize) -> f64 {
        let p = self.power.matrix();
        (0..self.beta.nrows())
            .map(|m| p[(m, ue)] * self.beta[(m, observer)])
            .sum()
    }

    fn total_variance(&self, observer: usize) -> f64 {
        self.ap_load
            .iter()
            .enumerate()
            .map(|(m, &load)| load * self.beta[(m, observer)])
            .sum()
    }

    fn breakdown_from(
        &self,
        stats: &ClusterStats,
        cross: &[Vec<f64>],
        signal: usize,
        observer: usize,
    ) -> SinrBreakdown {
        let obs_ue = stats.members[observer];
        let variances: Vec<f64> = stats
            .members
            .iter()
            .map(|&n| self.own_variance(n, obs_ue))
            .collect();
        let total = self.total_variance(obs_ue);
        let cluster_var: f64 = variances.iter().sum();
        let l = self.antennas;
        let mut intra = 0.0;
        let mut residual = 0.0;
        for k in 0..stats.len() {
            let s = cross[k][observer];
            if k < signal {
                intra += variances[k] + l * s * s;
            } else if k > signal {
                residual += variances[k] + l * self.residual_factor * s * s;
            }
        }
        let s = cross[signal][observer];
        SinrBreakdown {
            desired: l * s * s,
            inter_cluster: (total - cluster_var).max(0.0),
            intra_pre_sic: intra,
            residual_sic: residual,
            beamform_uncertainty: variances[signal],
            noise: 1.0,
        }
    }

    /// SINR terms for member `signal` decoded by member `observer`
    /// (positions in the cluster's decoding order).
    pub fn breakdown(&self, stats: &ClusterStats, signal: usize, observer: usize) -> SinrBreakdown {
        let cross = self.cross_sums(stats);
        self.breakdown_from(stats, &cross, signal, observer)
    }

    /// Effective lower-bound SINR of every member, in decoding order: the
    /// minimum over the member itself and every earlier-decoded member.
    pub fn cluster_sinrs(&self, stats: &ClusterStats) -> Vec<f64> {
        if stats.is_empty() {
            return Vec::new();
        }
        let cross = self.cross_sums(stats);
        let k_count = stats.len();
        // Every UE's variance term is folded into the per-AP load.
        let totals: Vec<f64> = stats.members.iter().map(|&u| self.total_variance(u)).collect();
        let l = self.antennas;
        (0..k_count)
            .map(|i| {
                (0..=i)
                    .map(|j| {
                        let mut den = totals[j] + 1.0;
                        for k in 0..k_count {
                            let s = cross[k][j];
                            if k < i {
                                den += l * s * s;
                            } else if k > i {
                                den += l * self.residual_factor * s * s;
                            }
                        }
                        let s = cross[i][j];
                        l * s * s / den
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    /// Cluster rate variable in nats: sum over members of the clamped
    /// `ln(1 + gamma) - a sqrt(V(gamma))`.
    pub fn cluster_rate_nats(&self, stats: &ClusterStats) -> f64 {
        self.cluster_sinrs(stats)
            .into_iter()
            .map(|g| rate_nats(g, &self.params).max(0.0))
            .sum()
    }

    /// Effective SINR for every UE, indexed by UE.
    pub fn all_sinrs(&self, net: &NetworkState) -> Vec<f64> {
        let mut out = vec![0.0; self.beta.ncols()];
        for stats in &net.clusters {
            for (k, g) in self.cluster_sinrs(stats).into_iter().enumerate() {
                out[stats.members[k]] = g;
            }
        }
        out
    }
}

fn locate(
    net: &NetworkState,
    clustering: &ClusteringState,
    signal: usize,
    observer: usize,
) -> Result<(usize, usize, usize), RateError> {
    let g = clustering.cluster_of(signal);
    if clustering.cluster_of(observer) != g {
        return Err(RateError::NotSameCluster(signal, observer));
    }
    let stats = net.cluster(g);
    let si = stats.position(signal).expect("signal UE in its cluster");
    let oi = stats.position(observer).expect("observer UE in its cluster");
    if oi > si {
        return Err(RateError::OrderingViolation { signal, observer });
    }
    Ok((g, si, oi))
}

/// Lower-bound SINR terms for UE `observer` decoding the signal of UE `signal`.
pub fn sinr_breakdown(
    signal: usize,
    observer: usize,
    power: &PowerMatrix,
    clustering: &ClusteringState,
    net: &NetworkState,
    deployment: &Deployment,
    config: &SystemConfig,
) -> Result<SinrBreakdown, RateError> {
    let (g, si, oi) = locate(net, clustering, signal, observer)?;
    let model = RateModel::new(config, deployment, power)?;
    Ok(model.breakdown(net.cluster(g), si, oi))
}

/// Lower-bound SINR `gamma_bar^observer_signal`.
pub fn pairwise_sinr_lb(
    signal: usize,
    observer: usize,
    power: &PowerMatrix,
    clustering: &ClusteringState,
    net: &NetworkState,
    deployment: &Deployment,
    config: &SystemConfig,
) -> Result<f64, RateError> {
    sinr_breakdown(signal, observer, power, clustering, net, deployment, config).map(|b| b.sinr())
}

/// Effective SINR of UE `n`: minimum over itself and every co-cluster UE
/// decoded before it.
pub fn effective_sinr_lb(
    n: usize,
    power: &PowerMatrix,
    clustering: &ClusteringState,
    net: &NetworkState,
    deployment: &Deployment,
    config: &SystemConfig,
) -> Result<f64, RateError> {
    let g = clustering.cluster_of(n);
    let stats = net.cluster(g);
    let pos = stats.position(n).expect("UE in its cluster");
    let model = RateModel::new(config, deployment, power)?;
    Ok(model.cluster_sinrs(stats)[pos])
}

/// Lower bound on the ergodic rate of UE `n`, bits per channel use.
pub fn lb_rate(
    n: usize,
    power: &PowerMatrix,
    clustering: &ClusteringState,
    net: &NetworkState,
    deployment: &Deployment,
    config: &SystemConfig,
) -> Result<f64, RateError> {
    let params = RateParams::from_config(config)?;
    effective_sinr_lb(n, power, clustering, net, deployment, config).map(|g| fbc_rate(g, &params))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SumRate {
    /// Bits per channel use.
    pub normalized: f64,
    pub bps: f64,
}

/// Per-UE lower-bound rates (bits per channel use), indexed by UE.
pub fn lb_rates(
    power: &PowerMatrix,
    net: &NetworkState,
    deployment: &Deployment,
    config: &SystemConfig,
) -> Result<Vec<f64>, RateError> {
    let model = RateModel::new(config, deployment, power)?;
    let params = *model.params();
    Ok(model
        .all_sinrs(net)
        .into_iter()
        .map(|g| fbc_rate(g, &params))
        .collect())
}

/// Achievable sum rate over the real UEs.
pub fn asr(
    power: &PowerMatrix,
    net: &NetworkState,
    deployment: &Deployment,
    config: &SystemConfig,
) -> Result<SumRate, RateError> {
    let normalized: f64 = lb_rates(power, net, deployment, config)?.iter().sum();
    Ok(SumRate {
        normalized,
        bps: normalized * config.bandwidth,
    })
}
