use cfnoma::config::SystemConfig;
use cfnoma::model::{generate_deployment, ClusteringState, Deployment, NetworkState};
use cfnoma::montecarlo::{
    check_lower_bound, draw_channels, empirical_ergodic_rate, instantaneous_terms, pairwise_harmonic_sinr,
    EstimateMode,
};
use cfnoma::optimizer::{gale_shapley_clustering, optimize_power_only};
use cfnoma::power::{initial_power, PowerMatrix, SpaOptions};
use cfnoma::rate::{fbc_rate, sinr_breakdown, RateParams};
use nalgebra::DMatrix;

fn small() -> (SystemConfig, Deployment, ClusteringState, NetworkState) {
    let cfg = SystemConfig {
        num_aps: 3,
        num_ues: 4,
        num_clusters: 2,
        antennas_per_ap: 3,
        ..SystemConfig::desk()
    };
    let dep = generate_deployment(&cfg, 5);
    let x = ClusteringState::new(vec![0, 0, 1, 1], 2).unwrap();
    let net = NetworkState::new(&dep, &x, &cfg);
    (cfg, dep, x, net)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn estimate_and_error_variances_match_statistics() {
    let (cfg, dep, x, net) = small();
    for mode in [EstimateMode::Statistical, EstimateMode::PilotSimulation] {
        let trials = 40_000;
        let (m, n) = (1, 2);
        let mut est = 0.0;
        let mut err = 0.0;
        let mut cross = num_complex::Complex64::new(0.0, 0.0);
        for t in 0..trials {
            let r = draw_channels(&dep, &net, &x, &cfg, 9, t, mode);
            est += r.estimate(m, n).norm_squared();
            err += r.error(m, n).norm_squared();
            cross += r.estimate(m, n).dotc(r.error(m, n));
        }
        let samples = (trials as usize * cfg.antennas_per_ap) as f64;
        let theta = net.theta[(m, n)];
        let beta = dep.beta[(m, n)];
        assert!(rel(est / samples, theta) < 0.02, "{mode:?}: {} vs {theta}", est / samples);
        assert!(rel(err / samples, beta - theta) < 0.02, "{mode:?}");
        // Estimate and error are uncorrelated.
        assert!(cross.norm() / samples < 0.02 * (theta * (beta - theta)).sqrt(), "{mode:?}");
    }
}

#[test]
fn effective_gain_matches_simulated_second_moment() {
    let (cfg, dep, x, net) = small();
    let l = cfg.antennas_per_ap as f64;
    let n = 1;
    let trials = 100_000;
    let mut acc = 0.0;
    for t in 0..trials {
        let r = draw_channels(&dep, &net, &x, &cfg, 3, t, EstimateMode::Statistical);
        let s: num_complex::Complex64 = (0..cfg.num_aps)
            .map(|m| r.nu(m, x.cluster_of(n)).dotc(r.estimate(m, n)))
            .sum();
        acc += s.norm_sqr();
    }
    let sum_sqrt: f64 = (0..cfg.num_aps).map(|m| net.theta[(m, n)].sqrt()).sum();
    let sum: f64 = (0..cfg.num_aps).map(|m| net.theta[(m, n)]).sum();
    let closed = l * l * sum_sqrt * sum_sqrt + l * sum;
    assert!(rel(acc / trials as f64, closed) < 0.02, "{} vs {closed}", acc / trials as f64);
    assert!((net.omega[n] - closed).abs() < 1e-12 * closed);
}

#[test]
fn single_link_sinr_expands_by_hand() {
    let cfg = SystemConfig {
        num_aps: 1,
        num_ues: 2,
        num_clusters: 2,
        antennas_per_ap: 1,
        ..SystemConfig::desk()
    };
    let dep = Deployment::from_beta(DMatrix::from_row_slice(1, 2, &[2e-11, 5e-12]));
    let x = ClusteringState::new(vec![0, 1], 2).unwrap();
    let net = NetworkState::new(&dep, &x, &cfg);
    let p = 0.7 * cfg.max_dl_power;
    let power = PowerMatrix::new(DMatrix::from_row_slice(1, 2, &[p, 0.0]));
    for t in 0..20 {
        let r = draw_channels(&dep, &net, &x, &cfg, 4, t, EstimateMode::Statistical);
        let theta = net.theta[(0, 0)];
        let iota = r.channel(0, 0)[0].conj() * r.nu(0, 0)[0];
        let mean = theta.sqrt();
        let manual = p * mean * mean / (p * (iota - mean).norm_sqr() + 1.0);
        let terms = instantaneous_terms(&r, &power, &x, &net, &cfg, 0, 0).unwrap();
        assert!(rel(terms.sinr(), manual) < 1e-12);
        assert_eq!(terms.inter_cluster, 0.0);
    }
}

#[test]
fn harmonic_sinr_reproduces_pairwise_bound() {
    let (cfg, dep, x, net) = small();
    let power = initial_power(&net, &cfg);
    for stats in &net.clusters {
        let (strong, weak) = (stats.members[0], stats.members[1]);
        for (signal, observer) in [(strong, strong), (weak, strong), (weak, weak)] {
            let lb = sinr_breakdown(signal, observer, &power, &x, &net, &dep, &cfg).unwrap().sinr();
            let mc = pairwise_harmonic_sinr(&dep, &net, &x, &power, &cfg, signal, observer, 100_000, 11).unwrap();
            assert!(rel(mc, lb) < 0.05, "({signal},{observer}): {mc} vs {lb}");
        }
    }
}

#[test]
fn perfect_sic_zeroes_residual_in_expectation() {
    let (mut cfg, dep, x, net) = small();
    cfg.sic_coeff = 1.0;
    let power = initial_power(&net, &cfg);
    let stats = net.cluster(0);
    let (strong, weak) = (stats.members[0], stats.members[1]);
    let trials = 20_000;
    let mut residual = 0.0;
    let mut weak_var = 0.0;
    for t in 0..trials {
        let r = draw_channels(&dep, &net, &x, &cfg, 6, t, EstimateMode::Statistical);
        let terms = instantaneous_terms(&r, &power, &x, &net, &cfg, strong, strong).unwrap();
        residual += terms.residual_sic;
        weak_var += (0..cfg.num_aps)
            .map(|m| power.get(m, weak) * dep.beta[(m, strong)])
            .sum::<f64>();
    }
    // Only the fluctuation around the mean survives.
    assert!(rel(residual, weak_var) < 0.03, "{residual} vs {weak_var}");
}

#[test]
fn zero_error_probability_penalty_gives_shannon_rates() {
    let (mut cfg, dep, x, net) = small();
    cfg.epsilon = 0.5;
    let power = initial_power(&net, &cfg);
    let est = empirical_ergodic_rate(&dep, &net, &x, &power, &cfg, 2_000, 1, EstimateMode::Statistical).unwrap();
    let params = RateParams::from_config(&cfg).unwrap();
    assert!(params.penalty_coeff().abs() < 1e-12);
    for (n, e) in est.rates.iter().enumerate() {
        let shannon = params.bits_scale() * (1.0 + est.harmonic_sinr[n]).ln();
        assert!(e.mean >= shannon - 1e-12, "Jensen: {} < {shannon}", e.mean);
        assert!(fbc_rate(est.harmonic_sinr[n], &params) > 0.0);
    }
}

#[test]
fn confidence_interval_shrinks_with_trials() {
    let (cfg, dep, x, net) = small();
    let power = initial_power(&net, &cfg);
    let a = empirical_ergodic_rate(&dep, &net, &x, &power, &cfg, 4_000, 2, EstimateMode::Statistical).unwrap();
    let b = empirical_ergodic_rate(&dep, &net, &x, &power, &cfg, 8_000, 2, EstimateMode::Statistical).unwrap();
    for (ra, rb) in a.rates.iter().zip(&b.rates) {
        if ra.ci_half_width > 0.0 {
            let ratio = rb.ci_half_width / ra.ci_half_width;
            assert!((ratio - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.1, "{ratio}");
        }
    }
    // Same seed, same trials: identical aggregate.
    let c = empirical_ergodic_rate(&dep, &net, &x, &power, &cfg, 4_000, 2, EstimateMode::Statistical).unwrap();
    assert_eq!(a, c);
}

#[test]
fn jensen_bound_holds_at_desk_scale() {
    let cfg = SystemConfig::desk();
    for seed in 0..2 {
        let dep = generate_deployment(&cfg, seed);
        let x = gale_shapley_clustering(&dep, &cfg);
        let net = NetworkState::new(&dep, &x, &cfg);
        let res = optimize_power_only(&x, &dep, &cfg, &SpaOptions::default()).unwrap();
        let report = check_lower_bound(&dep, &x, &res.power, &cfg, 10_000, seed, EstimateMode::Statistical).unwrap();
        for row in &report.rows {
            eprintln!(
                "seed {seed} ue {}: lb {:.4} mc {:.4} +- {:.4} | own lb {:.4} mc {:.4}",
                row.ue,
                row.lower_bound,
                row.empirical.mean,
                row.empirical.ci_half_width,
                row.own_bound,
                row.own_empirical.mean
            );
        }
        assert!(report.all_own_valid);
        // First-decoded UEs have no other observer, so both checks coincide.
        for stats in &net.clusters {
            let row = &report.rows[stats.members[0]];
            assert!(row.valid);
            assert!((row.lower_bound - row.own_bound).abs() < 1e-12);
        }
    }
}
