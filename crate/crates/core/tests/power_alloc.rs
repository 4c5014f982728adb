use cfnoma::config::SystemConfig;
use cfnoma::model::{generate_deployment, ClusteringState, NetworkState};
use cfnoma::power::{feasibility_phase, initial_power, spa, true_objective, Feasibility, SpaOptions};

fn desk_pairs(seed: u64) -> (SystemConfig, cfnoma::model::Deployment, NetworkState) {
    let cfg = SystemConfig::desk();
    let dep = generate_deployment(&cfg, seed);
    let x = ClusteringState::new((0..cfg.num_ues).map(|n| n / 2).collect(), cfg.num_clusters).unwrap();
    let net = NetworkState::new(&dep, &x, &cfg);
    (cfg, dep, net)
}

#[test]
fn spa_history_is_monotone_and_respects_invariants() {
    for seed in 0..3 {
        let (cfg, dep, net) = desk_pairs(seed);
        let p0 = initial_power(&net, &cfg);
        let t = std::time::Instant::now();
        let res = spa(&p0, &dep, &net, &cfg, &SpaOptions::default()).unwrap();
        eprintln!("seed {seed}: {:?} in {:?} steps {:?}", res.history, t.elapsed(), res.iterations.iter().map(|i| i.newton_steps).collect::<Vec<_>>());
        for it in &res.iterations {
            let scale = it.unclamped_at_expansion.abs().max(1.0);
            assert!((it.surrogate_at_expansion - it.unclamped_at_expansion).abs() < 1e-9 * scale);
            assert!(it.surrogate_at_solution <= it.unclamped_at_solution + 1e-9 * scale);
        }
        for w in res.history.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
        res.power.check_invariants(&net, cfg.max_dl_power, 1e-6).unwrap();
        let direct = true_objective(&res.power, &dep, &net, &cfg).unwrap();
        assert!((direct - res.objective()).abs() < 1e-9 * direct.max(1.0));
    }
}

#[test]
fn feasibility_phase_on_desk() {
    let (cfg, dep, net) = desk_pairs(1);
    match feasibility_phase(&dep, &net, &cfg, &Default::default()).unwrap() {
        Feasibility::Feasible { slack, .. } => assert!(slack >= 1.0),
        Feasibility::Infeasible(r) => eprintln!("infeasible: {r}"),
    }
}
