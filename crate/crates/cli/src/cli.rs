//! Command-line front end.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cfnoma::clustering::build_graph;
use cfnoma::gp::{parse_gp, verify_kkt, GpSolver, SolverOptions};
use cfnoma::model::generate_deployment;
use clap::{Args, Parser, Subcommand};

use crate::config::{parse_config, Algorithm, ConfigFile, DetectorName, ExperimentConfig, Profile};
use crate::experiment::{run_algorithm, run_sweep, validate_lb};

#[derive(Debug, Parser)]
#[command(name = "cfnoma", version, about = "Cell-free NOMA sum-rate experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file; missing keys fall back to the profile.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base parameter set (overrides the file's `profile`).
    #[arg(long, global = true)]
    pub profile: Option<Profile>,
    /// Deployment seed (a sweep then runs this seed only).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma-separated algorithms: s-ebfa, s-gsa, gale-shapley, brpa.
    #[arg(long, global = true, value_delimiter = ',')]
    pub algo: Option<Vec<Algorithm>>,
    #[arg(long, global = true)]
    pub detector: Option<DetectorName>,
    /// Expansion budget factor of the greedy detector.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Monte Carlo trials.
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Output file (CSV); a `.meta.toml` sidecar holds the resolved config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Write zero wall times so repeated runs give identical files.
    #[arg(long, global = true)]
    pub no_timing: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize one deployment and print the result.
    Optimize {
        /// Write the final move graph in DOT format.
        #[arg(long)]
        dump_graph: Option<PathBuf>,
    },
    /// Run the configured sweep and write one CSV row per run.
    Sweep,
    /// Compare closed-form rates with simulated ergodic rates.
    ValidateLb,
    /// Solve a geometric program given in the plain-text format.
    GpSolve {
        file: PathBuf,
        /// Target duality measure.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
}

/// Reads the config file (if any) and applies the command-line overrides.
pub fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut file = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_config(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => ConfigFile::default(),
    };
    if let Some(p) = common.profile {
        file.profile = Some(p);
    }
    if let Some(seed) = common.seed {
        file.sweep.seeds = Some(vec![seed]);
    }
    if let Some(algo) = &common.algo {
        file.sweep.algorithms = Some(algo.clone());
    }
    if let Some(d) = common.detector {
        file.clustering.detector = Some(d);
    }
    if let Some(a) = common.alpha {
        file.clustering.alpha = Some(a);
    }
    if let Some(t) = common.trials {
        file.montecarlo.trials = Some(t);
    }
    if common.no_timing {
        file.sweep.record_timing = Some(false);
    }
    Ok(ExperimentConfig::resolve(&file)?)
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.toml");
    out.with_file_name(name)
}

fn open_out(out: &Option<PathBuf>, config: &ExperimentConfig) -> Result<Box<dyn Write>> {
    match out {
        Some(path) => {
            fs::write(sidecar_path(path), config.to_toml())
                .with_context(|| format!("writing the sidecar of {}", path.display()))?;
            let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            Ok(Box::new(io::BufWriter::new(f)))
        }
        None => Ok(Box::new(io::stdout())),
    }
}

/// Runs a parsed command line. Returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    if let Some(jobs) = cli.common.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        // Fails only if a global pool already exists, in which case it is
        // reused as is.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match &cli.command {
        Command::GpSolve { file, tol } => gp_solve(file, *tol),
        Command::Optimize { dump_graph } => {
            let config = load_config(&cli.common)?;
            optimize_one(&config, &cli.common, dump_graph.as_deref())
        }
        Command::Sweep => {
            let config = load_config(&cli.common)?;
            let result = run_sweep(&config)?;
            result.write_csv(open_out(&cli.common.out, &config)?)?;
            if result.all_feasible() {
                Ok(0)
            } else {
                eprintln!("some instances could not be solved (rows marked feasible=false)");
                Ok(2)
            }
        }
        Command::ValidateLb => {
            let config = load_config(&cli.common)?;
            let algorithm = config.sweep.algorithms[0];
            let algorithm = if cli.common.algo.is_some() { algorithm } else { Algorithm::SGsa };
            let summary = validate_lb(&config, algorithm)?;
            summary.write_csv(config.sweep.var.name(), open_out(&cli.common.out, &config)?)?;
            eprint!("{}", summary.summary_text());
            Ok(0)
        }
    }
}

fn optimize_one(config: &ExperimentConfig, common: &Common, dump_graph: Option<&Path>) -> Result<i32> {
    let algorithm = match &common.algo {
        Some(list) if list.len() == 1 => list[0],
        Some(_) => bail!("optimize takes exactly one algorithm"),
        None => match config.clustering.detector {
            DetectorName::Ebfa => Algorithm::SEbfa,
            DetectorName::Gsa => Algorithm::SGsa,
        },
    };
    let seed = config.sweep.seeds[0];
    let system = config.system()?;
    let deployment = generate_deployment(&system, seed);
    let res = run_algorithm(algorithm, &deployment, &system, config, seed)?;
    let stdout = io::stdout();
    let mut so = stdout.lock();
    writeln!(so, "algorithm: {algorithm}")?;
    writeln!(so, "seed: {seed}")?;
    writeln!(so, "sum rate: {:.6} Mbps ({:.6} bits/use)", res.asr_bps() / 1e6, res.asr())?;
    writeln!(so, "iterations: {} ({:?})", res.iterations, res.termination)?;
    writeln!(so, "trace: {:?}", res.asr_trace)?;
    writeln!(so, "clusters: {:?}", res.clustering.pi())?;
    if let Some(path) = &common.out {
        let out = open_out(&common.out, config)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["ue", "cluster", "rate_norm", "rate_bps", "sinr", "total_power"])?;
        for n in 0..system.num_ues {
            let total: f64 = (0..system.num_aps).map(|m| res.power.get(m, n)).sum();
            w.write_record([
                n.to_string(),
                res.clustering.cluster_of(n).to_string(),
                format!("{}", res.rates[n]),
                format!("{}", res.rates[n] * system.bandwidth),
                format!("{}", res.sinrs[n]),
                format!("{total}"),
            ])?;
        }
        w.flush()?;
        writeln!(so, "per-UE results: {}", path.display())?;
    }
    if let Some(path) = dump_graph {
        let graph = build_graph(&res.clustering, &res.power, &deployment, &system)?;
        fs::write(path, graph.to_dot()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(0)
}

fn gp_solve(file: &Path, tol: f64) -> Result<i32> {
    let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let problem = parse_gp(&text)?;
    let solver = GpSolver::new(SolverOptions {
        tol,
        ..SolverOptions::default()
    });
    let sol = solver.solve(&problem)?;
    let kkt = verify_kkt(&problem, &sol.x, tol);
    let stdout = io::stdout();
    let mut so = stdout.lock();
    writeln!(so, "objective = {}", sol.objective)?;
    for (name, v) in problem.var_names().iter().zip(&sol.x) {
        writeln!(so, "{name} = {v}")?;
    }
    writeln!(so, "max violation = {:e}", problem.max_violation(&sol.x))?;
    writeln!(so, "kkt: {kkt:?}")?;
    Ok(0)
}
