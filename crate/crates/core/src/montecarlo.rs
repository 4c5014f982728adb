//! Small-scale fading simulation of the downlink, used to check the
//! closed-form rate lower bound against empirical ergodic rates.
//!
//! Each AP precodes with the unit-power direction `nu / sqrt(L)` of its
//! channel estimate. Symbol expectations (data, SIC estimate, decoding
//! error) are taken analytically inside every channel draw.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::config::SystemConfig;
use crate::model::{ClusteringState, Deployment, NetworkState};
use crate::power::PowerMatrix;
use crate::rate::{fbc_rate, RateError, RateModel, RateParams};
use crate::rng::{substream, Stream};

/// How channel estimates are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EstimateMode {
    /// Estimates drawn directly from their statistics.
    #[default]
    Statistical,
    /// Pilot transmission and MMSE estimation simulated explicitly.
    PilotSimulation,
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

fn complex_vector<R: Rng + ?Sized>(rng: &mut R, len: usize, variance: f64) -> DVector<Complex64> {
    DVector::from_fn(len, |_, _| complex_normal(rng, variance))
}

/// One small-scale fading draw.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    num_ues: usize,
    num_clusters: usize,
    antennas: usize,
    /// Estimate directions, `nu[m * G + g]`, shared by a cluster at an AP.
    nu: Vec<DVector<Complex64>>,
    /// `h_hat[m * N + n]`.
    h_hat: Vec<DVector<Complex64>>,
    /// Estimation error `h - h_hat`, same layout.
    error: Vec<DVector<Complex64>>,
}

impl ChannelRealization {
    pub fn nu(&self, ap: usize, cluster: usize) -> &DVector<Complex64> {
        &self.nu[ap * self.num_clusters + cluster]
    }

    pub fn estimate(&self, ap: usize, ue: usize) -> &DVector<Complex64> {
        &self.h_hat[ap * self.num_ues + ue]
    }

    pub fn error(&self, ap: usize, ue: usize) -> &DVector<Complex64> {
        &self.error[ap * self.num_ues + ue]
    }

    pub fn channel(&self, ap: usize, ue: usize) -> DVector<Complex64> {
        self.estimate(ap, ue) + self.error(ap, ue)
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    /// `iota[m]` for observer `ue` and the precoder of `cluster`:
    /// `h_{m,ue}^H nu_{m,cluster} / sqrt(L)`.
    fn iota(&self, ue: usize, cluster: usize, num_aps: usize) -> Vec<Complex64> {
        let scale = 1.0 / (self.antennas as f64).sqrt();
        (0..num_aps)
            .map(|m| self.channel(m, ue).dotc(self.nu(m, cluster)) * scale)
            .collect()
    }
}

/// Draws channels and estimates for every AP/UE link from the trial's own
/// random stream.
pub fn draw_channels(
    deployment: &Deployment,
    net: &NetworkState,
    clustering: &ClusteringState,
    config: &SystemConfig,
    trial_seed: u64,
    trial: u64,
    mode: EstimateMode,
) -> ChannelRealization {
    let mut rng = substream(trial_seed, Stream::MonteCarlo, trial);
    let m_count = deployment.num_aps();
    let n_count = deployment.num_ues();
    let g_count = clustering.num_clusters();
    let l = config.antennas_per_ap;
    let beta = &deployment.beta;
    let mut nu = Vec::with_capacity(m_count * g_count);
    let mut h_hat = Vec::with_capacity(m_count * n_count);
    let mut error = Vec::with_capacity(m_count * n_count);
    match mode {
        EstimateMode::Statistical => {
            for _ in 0..m_count * g_count {
                nu.push(complex_vector(&mut rng, l, 1.0));
            }
            for m in 0..m_count {
                for n in 0..n_count {
                    let theta = net.theta[(m, n)];
                    h_hat.push(nu[m * g_count + clustering.cluster_of(n)].map(|v| v * theta.sqrt()));
                    error.push(complex_vector(&mut rng, l, (beta[(m, n)] - theta).max(0.0)));
                }
            }
        }
        EstimateMode::PilotSimulation => {
            let gp = g_count as f64 * config.pilot_power;
            for m in 0..m_count {
                let h: Vec<DVector<Complex64>> = (0..n_count)
                    .map(|n| complex_vector(&mut rng, l, beta[(m, n)]))
                    .collect();
                // Projection of the received pilot block onto each cluster's
                // pilot, whitened to unit variance.
                let mut dirs = Vec::with_capacity(g_count);
                for g in 0..g_count {
                    let mut y = complex_vector(&mut rng, l, 1.0);
                    let mut load = 0.0;
                    for n in clustering.members(g) {
                        y += &h[n] * Complex64::from(gp.sqrt());
                        load += beta[(m, n)];
                    }
                    dirs.push(y / Complex64::from((gp * load + 1.0).sqrt()));
                }
                for (n, hn) in h.into_iter().enumerate() {
                    let est = dirs[clustering.cluster_of(n)].map(|v| v * net.theta[(m, n)].sqrt());
                    error.push(hn - &est);
                    h_hat.push(est);
                }
                nu.extend(dirs);
            }
        }
    }
    ChannelRealization {
        num_ues: n_count,
        num_clusters: g_count,
        antennas: l,
        nu,
        h_hat,
        error,
    }
}

/// Per-draw powers of the received-signal components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermPowers {
    pub desired: f64,
    pub beamform_uncertainty: f64,
    pub inter_cluster: f64,
    pub intra_pre_sic: f64,
    pub residual_sic: f64,
    pub noise: f64,
}

impl TermPowers {
    pub fn interference(&self) -> f64 {
        self.beamform_uncertainty + self.inter_cluster + self.intra_pre_sic + self.residual_sic + self.noise
    }

    pub fn sinr(&self) -> f64 {
        self.desired / self.interference()
    }
}

/// Shared per-observer data for evaluating many signals in one draw.
struct ObserverView {
    /// `iota[g][m]` toward every cluster's precoder.
    iota: Vec<Vec<Complex64>>,
    /// `E{iota_m} = sqrt(L theta_{m,observer})` toward the own cluster.
    mean: Vec<f64>,
}

fn observer_view(
    real: &ChannelRealization,
    net: &NetworkState,
    clustering: &ClusteringState,
    observer: usize,
    num_aps: usize,
) -> ObserverView {
    let l = real.antennas() as f64;
    ObserverView {
        iota: (0..clustering.num_clusters())
            .map(|g| real.iota(observer, g, num_aps))
            .collect(),
        mean: (0..num_aps).map(|m| (l * net.theta[(m, observer)]).sqrt()).collect(),
    }
}

fn terms_from_view(
    view: &ObserverView,
    power: &PowerMatrix,
    clustering: &ClusteringState,
    net: &NetworkState,
    config: &SystemConfig,
    signal: usize,
    observer: usize,
) -> TermPowers {
    let g = clustering.cluster_of(observer);
    let stats = net.cluster(g);
    let signal_pos = stats.position(signal).expect("signal UE is in the observer's cluster");
    let p = power.matrix();
    let m_count = p.nrows();
    let beam = |ue: usize, cluster: usize| -> Complex64 {
        (0..m_count)
            .map(|m| view.iota[cluster][m] * p[(m, ue)].sqrt())
            .sum()
    };
    let mean_beam = |ue: usize| -> f64 { (0..m_count).map(|m| view.mean[m] * p[(m, ue)].sqrt()).sum() };

    let own = beam(signal, g);
    let own_mean = mean_beam(signal);
    let mut t = TermPowers {
        desired: own_mean * own_mean,
        beamform_uncertainty: (own - own_mean).norm_sqr(),
        inter_cluster: 0.0,
        intra_pre_sic: 0.0,
        residual_sic: 0.0,
        noise: 1.0,
    };
    for n in 0..p.ncols() {
        let gn = clustering.cluster_of(n);
        if gn != g {
            t.inter_cluster += beam(n, gn).norm_sqr();
        }
    }
    let c = config.sic_coeff;
    for (k, &n) in stats.members.iter().enumerate() {
        if k == signal_pos {
            continue;
        }
        let a = beam(n, g);
        if k < signal_pos {
            t.intra_pre_sic += a.norm_sqr();
        } else {
            let b = mean_beam(n);
            t.residual_sic += a.norm_sqr() + b * b - 2.0 * c * (a.re * b);
        }
    }
    t
}

/// Component powers when UE `observer` decodes the signal of UE `signal`
/// (same cluster, observer decoded at or before the signal).
pub fn instantaneous_terms(
    real: &ChannelRealization,
    power: &PowerMatrix,
    clustering: &ClusteringState,
    net: &NetworkState,
    config: &SystemConfig,
    signal: usize,
    observer: usize,
) -> Result<TermPowers, RateError> {
    let g = clustering.cluster_of(signal);
    if clustering.cluster_of(observer) != g {
        return Err(RateError::NotSameCluster(signal, observer));
    }
    let stats = net.cluster(g);
    let (si, oi) = (
        stats.position(signal).expect("member"),
        stats.position(observer).expect("member"),
    );
    if oi > si {
        return Err(RateError::OrderingViolation { signal, observer });
    }
    let view = observer_view(real, net, clustering, observer, power.num_aps());
    Ok(terms_from_view(&view, power, clustering, net, config, signal, observer))
}

pub fn instantaneous_sinr(
    real: &ChannelRealization,
    power: &PowerMatrix,
    clustering: &ClusteringState,
    net: &NetworkState,
    config: &SystemConfig,
    signal: usize,
    observer: usize,
) -> Result<f64, RateError> {
    instantaneous_terms(real, power, clustering, net, config, signal, observer).map(|t| t.sinr())
}

/// SINRs of every UE in one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSinrs {
    /// Minimum over the UE itself and the co-cluster UEs decoded before it.
    pub effective: Vec<f64>,
    /// The UE decoding its own signal.
    pub own: Vec<f64>,
}

pub fn trial_sinrs(
    real: &ChannelRealization,
    power: &PowerMatrix,
    clustering: &ClusteringState,
    net: &NetworkState,
    config: &SystemConfig,
) -> TrialSinrs {
    let mut effective = vec![f64::INFINITY; power.num_ues()];
    let mut own = vec![f64::INFINITY; power.num_ues()];
    for stats in &net.clusters {
        for (j, &obs) in stats.members.iter().enumerate() {
            let view = observer_view(real, net, clustering, obs, power.num_aps());
            for &sig in &stats.members[j..] {
                let s = terms_from_view(&view, power, clustering, net, config, sig, obs).sinr();
                effective[sig] = effective[sig].min(s);
                if sig == obs {
                    own[sig] = s;
                }
            }
        }
    }
    TrialSinrs { effective, own }
}

/// Pairwise summation, so the result does not depend on chunking.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Sample mean with a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub ci_half_width: f64,
}

impl Estimate {
    pub fn from_samples(v: &[f64]) -> Estimate {
        let n = v.len() as f64;
        let mean = pairwise_sum(v) / n;
        let dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = if v.len() > 1 { pairwise_sum(&dev) / (n - 1.0) } else { 0.0 };
        Estimate {
            mean,
            ci_half_width: 1.96 * (var / n).sqrt(),
        }
    }
}

fn harmonic_mean(v: impl Iterator<Item = f64>) -> f64 {
    let inv: Vec<f64> = v.map(|s| 1.0 / s).collect();
    inv.len() as f64 / pairwise_sum(&inv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimate {
    /// Per UE, bits per channel use, from the effective SINR.
    pub rates: Vec<Estimate>,
    /// Per UE, `1 / E{1 / gamma}` of the effective SINR.
    pub harmonic_sinr: Vec<f64>,
    /// Same two quantities when each UE only decodes its own signal.
    pub own_rates: Vec<Estimate>,
    pub own_harmonic_sinr: Vec<f64>,
    pub trials: usize,
}

/// Empirical ergodic rate `E{max(R(gamma), 0)}` of every UE over `trials`
/// independent draws.
#[allow(clippy::too_many_arguments)]
pub fn empirical_ergodic_rate(
    deployment: &Deployment,
    net: &NetworkState,
    clustering: &ClusteringState,
    power: &PowerMatrix,
    config: &SystemConfig,
    trials: usize,
    seed: u64,
    mode: EstimateMode,
) -> Result<RateEstimate, RateError> {
    let params = RateParams::from_config(config)?;
    let n_count = power.num_ues();
    let draws: Vec<TrialSinrs> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let real = draw_channels(deployment, net, clustering, config, seed, t, mode);
            trial_sinrs(&real, power, clustering, net, config)
        })
        .collect();
    let rate_of = |pick: &dyn Fn(&TrialSinrs) -> f64| {
        let r: Vec<f64> = draws.iter().map(|d| fbc_rate(pick(d), &params)).collect();
        Estimate::from_samples(&r)
    };
    let mut out = RateEstimate {
        rates: Vec::with_capacity(n_count),
        harmonic_sinr: Vec::with_capacity(n_count),
        own_rates: Vec::with_capacity(n_count),
        own_harmonic_sinr: Vec::with_capacity(n_count),
        trials,
    };
    for n in 0..n_count {
        out.rates.push(rate_of(&|d| d.effective[n]));
        out.harmonic_sinr.push(harmonic_mean(draws.iter().map(|d| d.effective[n])));
        out.own_rates.push(rate_of(&|d| d.own[n]));
        out.own_harmonic_sinr.push(harmonic_mean(draws.iter().map(|d| d.own[n])));
    }
    Ok(out)
}

/// `1 / E{1 / gamma}` for one (signal, observer) pair.
#[allow(clippy::too_many_arguments)]
pub fn pairwise_harmonic_sinr(
    deployment: &Deployment,
    net: &NetworkState,
    clustering: &ClusteringState,
    power: &PowerMatrix,
    config: &SystemConfig,
    signal: usize,
    observer: usize,
    trials: usize,
    seed: u64,
) -> Result<f64, RateError> {
    let sinrs: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let real = draw_channels(deployment, net, clustering, config, seed, t, EstimateMode::Statistical);
            instantaneous_sinr(&real, power, clustering, net, config, signal, observer)
        })
        .collect::<Result<_, _>>()?;
    Ok(harmonic_mean(sinrs.into_iter()))
}

/// One UE's row of a lower-bound check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbRow {
    pub ue: usize,
    pub lower_bound: f64,
    pub empirical: Estimate,
    /// `(empirical - bound) / empirical`; zero when the empirical rate is zero.
    pub relative_gap: f64,
    /// `bound <= empirical + 3 * ci`.
    pub valid: bool,
    /// Bound and empirical rate of the UE decoding only its own signal. The
    /// per-draw minimum over SIC observers is left out, so this pair is a
    /// plain Jensen comparison.
    pub own_bound: f64,
    pub own_empirical: Estimate,
    pub own_valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbReport {
    pub rows: Vec<LbRow>,
    pub mean_relative_gap: f64,
    pub all_valid: bool,
    pub all_own_valid: bool,
    pub trials: usize,
}

/// Compares the closed-form lower bound with the empirical ergodic rate.
#[allow(clippy::too_many_arguments)]
pub fn check_lower_bound(
    deployment: &Deployment,
    clustering: &ClusteringState,
    power: &PowerMatrix,
    config: &SystemConfig,
    trials: usize,
    seed: u64,
    mode: EstimateMode,
) -> Result<LbReport, RateError> {
    let net = NetworkState::new(deployment, clustering, config);
    let model = RateModel::new(config, deployment, power)?;
    let params = *model.params();
    let bounds: Vec<f64> = model
        .all_sinrs(&net)
        .into_iter()
        .map(|g| fbc_rate(g, &params))
        .collect();
    let mut own_bounds = vec![0.0; power.num_ues()];
    for stats in &net.clusters {
        for k in 0..stats.len() {
            own_bounds[stats.members[k]] = fbc_rate(model.breakdown(stats, k, k).sinr(), &params);
        }
    }
    let est = empirical_ergodic_rate(deployment, &net, clustering, power, config, trials, seed, mode)?;
    let holds = |lb: f64, e: &Estimate| lb <= e.mean + 3.0 * e.ci_half_width;
    let rows: Vec<LbRow> = (0..power.num_ues())
        .map(|ue| {
            let (lb, e) = (bounds[ue], est.rates[ue]);
            LbRow {
                ue,
                lower_bound: lb,
                empirical: e,
                relative_gap: if e.mean > 0.0 { (e.mean - lb) / e.mean } else { 0.0 },
                valid: holds(lb, &e),
                own_bound: own_bounds[ue],
                own_empirical: est.own_rates[ue],
                own_valid: holds(own_bounds[ue], &est.own_rates[ue]),
            }
        })
        .collect();
    let mean_relative_gap = rows.iter().map(|r| r.relative_gap).sum::<f64>() / rows.len().max(1) as f64;
    Ok(LbReport {
        all_valid: rows.iter().all(|r| r.valid),
        all_own_valid: rows.iter().all(|r| r.own_valid),
        mean_relative_gap,
        rows,
        trials,
    })
}
