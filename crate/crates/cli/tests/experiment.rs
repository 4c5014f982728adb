use cfnoma::model::generate_deployment;
use cfnoma_cli::config::{parse_config, Algorithm, ExperimentConfig};
use cfnoma_cli::experiment::{mean_std, run_algorithm, run_sweep, validate_lb};

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::resolve(&parse_config(text).unwrap()).unwrap()
}

#[test]
fn sweep_records_come_back_in_sweep_order() {
    let cfg = config("[scenario]\nnum_aps = 12\n[sweep]\nvar = \"num_ues\"\nvalues = [4, 6]\nseeds = [3, 1]\nalgorithms = [\"brpa\", \"gale-shapley\"]\n");
    let res = run_sweep(&cfg).unwrap();
    let keys: Vec<(f64, u64, Algorithm)> = res.records.iter().map(|r| (r.value, r.seed, r.algorithm)).collect();
    let mut expect = Vec::new();
    for v in [4.0, 6.0] {
        for s in [3, 1] {
            for a in [Algorithm::Brpa, Algorithm::GaleShapley] {
                expect.push((v, s, a));
            }
        }
    }
    assert_eq!(keys, expect);
    // Each record reproduces a direct run on the same deployment.
    let sys = cfg.system_at(6.0).unwrap();
    let dep = generate_deployment(&sys, 1);
    let direct = run_algorithm(Algorithm::Brpa, &dep, &sys, &cfg, 1).unwrap();
    assert_eq!(res.outcome(6.0, 1, Algorithm::Brpa).unwrap().asr_norm, direct.asr());
}

#[test]
fn mean_and_sample_deviation() {
    let (m, s) = mean_std([2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0].into_iter());
    assert!((m - 5.0).abs() < 1e-12);
    assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    assert_eq!(mean_std([3.0].into_iter()), (3.0, 0.0));
}

#[test]
fn lower_bound_report_matches_the_optimized_rates() {
    let cfg = config("[montecarlo]\ntrials = 2000\n");
    let summary = validate_lb(&cfg, Algorithm::GaleShapley).unwrap();
    let sys = cfg.system().unwrap();
    let dep = generate_deployment(&sys, 0);
    let res = run_algorithm(Algorithm::GaleShapley, &dep, &sys, &cfg, 0).unwrap();
    let case = &summary.cases[0];
    for row in &case.report.rows {
        assert!((row.lower_bound - res.rates[row.ue]).abs() < 1e-9 * res.rates[row.ue].max(1.0));
    }
    assert!(summary.all_own_valid());
    let mut csv = Vec::new();
    summary.write_csv("num_ues", &mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + sys.num_ues);
}

#[test]
fn without_the_finite_blocklength_penalty_only_the_jensen_gap_remains() {
    let cfg = config("[scenario]\nepsilon = 0.5\n[montecarlo]\ntrials = 2000\n");
    let summary = validate_lb(&cfg, Algorithm::GaleShapley).unwrap();
    for row in &summary.cases[0].report.rows {
        // ln(1 + x) is concave in x but convex in 1/x, so the harmonic-mean
        // rate sits below the ergodic one.
        assert!(row.own_empirical.mean >= row.own_bound, "{row:?}");
    }
}
