use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ptomo_cli::config::{read_text, FamilySource, Flips, MetricKind, NoiseSpec, PlanSpec, StateSpec, TreeSource};
use ptomo_cli::pipeline::{
    build_plan, compute_metrics, fit, to_csv, write_output, Acquisition, Method, StateFile,
};
use ptomo_cli::{run_budget_sweep, run_holdout_validation, run_tomography, CliError, ExperimentConfig, SeedTree};
use ptomo_core::hashfam::{solve_cover_budgeted, Budget, MeasurementPlan, PlanKind, SolveMode, DEFAULT_NODE_BUDGET};
use ptomo_core::lps::{lps_to_dense, LpsState, Loss, TrainConfig};
use ptomo_core::sampler::{read_records, write_records, Allocation};

#[derive(Parser)]
#[command(name = "ptomo", version, about = "Parallel-measurement quantum state tomography")]
struct Cli {
    /// Root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Greedy,
    Exact,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Fqst,
    Lqst,
    Pqst,
}

#[derive(Clone, Copy, ValueEnum)]
enum StateKind {
    W,
    Ground,
    Random,
    Dynamic,
    Mixed,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a perfect hash family.
    Hashgen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum, default_value = "exact")]
        mode: Mode,
        /// Search-node budget for exact mode.
        #[arg(long, default_value_t = DEFAULT_NODE_BUDGET)]
        budget: u64,
    },
    /// Build a measurement plan.
    Plan {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: Option<usize>,
        /// `exact`, `greedy`, `published`, or a family file.
        #[arg(long, default_value = "exact")]
        family: String,
    },
    /// Describe a target state (and its circuit, if any).
    Prep {
        #[arg(long, value_enum)]
        state: StateKind,
        #[arg(long)]
        n: usize,
        /// Tree file or one of chain, chip_9, chip_12, example_6.
        #[arg(long)]
        tree: Option<String>,
        /// Evolution time for dynamic states.
        #[arg(long, default_value_t = 0.1)]
        t: f64,
        /// Layer count for random circuits.
        #[arg(long, default_value_t = 4)]
        depth: usize,
        /// Prepare ground states with this many VQE layers.
        #[arg(long)]
        vqe_layers: Option<usize>,
    },
    /// Sample a plan on a prepared state.
    Sample {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        shots: u64,
        #[arg(long, default_value = "random")]
        allocation: Allocation,
        /// Symmetric readout flip probability.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        mitigate: bool,
    },
    /// Train an LPS on shot records.
    Reconstruct {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "mle")]
        loss: Loss,
        /// Locality of the MSE table.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 18)]
        chi: usize,
        #[arg(long, default_value_t = 2)]
        mu: usize,
        #[arg(long, default_value_t = 100)]
        iterations: usize,
    },
    /// Compare a trained LPS with a prepared state.
    Metrics {
        #[arg(long)]
        lps: PathBuf,
        #[arg(long)]
        state: PathBuf,
        /// Records for data-side correlator estimates.
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        negativity: bool,
        #[arg(long)]
        correlators: bool,
    },
    /// Fidelity versus shot budget (needs --config).
    Sweep {
        /// Comma-separated budgets; defaults to the config's.
        #[arg(long, value_delimiter = ',')]
        budgets: Vec<f64>,
        /// Comma-separated subset of LQST, PQST-MSE, PQST-MLE.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Cosine similarity on observables outside the plan (needs --config).
    Holdout {
        #[arg(long, default_value_t = 200)]
        count: usize,
    },
    /// Full tomography run from a config (needs --config).
    Run,
}

fn out_dir(cli: &Cli) -> Result<PathBuf, CliError> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
    Ok(dir)
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli.config.as_deref().ok_or_else(|| CliError::config("--config", "this command needs a config file"))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output = Some(out.clone());
    }
    Ok(config)
}

fn load_plan(path: &Path) -> Result<MeasurementPlan, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::config("plan file", e))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Hashgen { n, k, mode, budget } => {
            let mode = match mode {
                Mode::Greedy => SolveMode::Greedy,
                Mode::Exact => SolveMode::Exact,
            };
            let report = solve_cover_budgeted(*n, *k, mode, &Budget::new(*budget)).map_err(CliError::stage("hashgen"))?;
            print!("{}", report.family);
            eprintln!(
                "{} rows, lower bound {}, {}",
                report.family.len(),
                report.lower_bound,
                if report.proven_minimal { "minimal" } else { "not proven minimal" }
            );
            if let Some(dir) = &cli.out {
                std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
                write_output(dir, "family.txt", &report.family.to_string())?;
            }
        }
        Command::Plan { kind, n, k, family } => {
            let kind = match kind {
                Kind::Fqst => PlanKind::Fqst,
                Kind::Lqst => PlanKind::Lqst,
                Kind::Pqst => PlanKind::Pqst,
            };
            let family = match family.as_str() {
                "exact" => FamilySource::Exact,
                "greedy" => FamilySource::Greedy,
                "published" => FamilySource::Published,
                path => FamilySource::File(PathBuf::from(path)),
            };
            let plan = build_plan(&PlanSpec { kind, k: *k, family }, *n)?;
            eprintln!("{} observables", plan.len());
            write_output(&out_dir(cli)?, "plan.json", &serde_json::to_string_pretty(&plan).expect("plan serialises"))?;
        }
        Command::Prep { state, n, tree, t, depth, vqe_layers } => {
            let n = *n;
            let tree = tree.clone().map(TreeSource::Named);
            let spec = match state {
                StateKind::W => StateSpec::W { n, tree },
                StateKind::Ground => StateSpec::Ground { n, hamiltonian: None, vqe_layers: *vqe_layers },
                StateKind::Random => StateSpec::Random { n, depth: *depth, tree },
                StateKind::Dynamic => StateSpec::Dynamic { n, t: *t, hamiltonian: None },
                StateKind::Mixed => StateSpec::MaximallyMixed { n },
            };
            let file = StateFile { spec, seed: SeedTree::new(seed).state() };
            let prepared = file.prepare()?;
            let dir = out_dir(cli)?;
            write_output(&dir, "state.json", &serde_json::to_string_pretty(&file).expect("state serialises"))?;
            if let Some(c) = &prepared.circuit {
                write_output(&dir, "circuit.json", &c.to_json())?;
            }
        }
        Command::Sample { plan, state, shots, allocation, noise, mitigate } => {
            let plan = load_plan(plan)?;
            let target = StateFile::load(state)?.prepare()?.state;
            let acquisition = Acquisition {
                allocation: *allocation,
                noise: noise.map(|p| NoiseSpec { p01: Flips::Uniform(p), p10: Flips::Uniform(p) }),
                mitigate: *mitigate,
            };
            let records = acquisition.acquire(&target, &plan.observables, *shots, &SeedTree::new(seed))?;
            write_output(&out_dir(cli)?, "records.jsonl", &write_records(&records))?;
        }
        Command::Reconstruct { records, loss, k, chi, mu, iterations } => {
            let records = read_records(&read_text(records)?).map_err(CliError::stage("reconstruct"))?;
            let k = match (loss, k) {
                (Loss::Mse, None) => return Err(CliError::config("--k", "the MSE loss needs the table locality")),
                (_, k) => k.unwrap_or(1),
            };
            let train = TrainConfig { chi: *chi, mu: *mu, max_iterations: *iterations, loss: *loss, ..Default::default() };
            let result = fit(&records, k, &train, SeedTree::new(seed).init())?;
            let dir = out_dir(cli)?;
            write_output(&dir, "lps.json", &result.state.to_checkpoint())?;
            write_output(&dir, "trace.csv", &result.trace_csv())?;
        }
        Command::Metrics { lps, state, records, negativity, correlators } => {
            let lps = LpsState::from_checkpoint(&read_text(lps)?).map_err(CliError::stage("metrics"))?;
            let rho = lps_to_dense(&lps).map_err(CliError::stage("metrics"))?;
            let target = StateFile::load(state)?.prepare()?.state;
            let records = match records {
                Some(p) => Some(read_records(&read_text(p)?).map_err(CliError::stage("metrics"))?),
                None => None,
            };
            let mut kinds = vec![MetricKind::Fidelity];
            if *negativity {
                kinds.push(MetricKind::Negativity);
            }
            if *correlators {
                kinds.push(MetricKind::Correlators);
            }
            let rows = compute_metrics(&kinds, &target, &rho, records.as_deref())?;
            let csv = to_csv(&rows);
            print!("{csv}");
            write_output(&out_dir(cli)?, "metrics.csv", &csv)?;
        }
        Command::Sweep { budgets, methods, repeats } => {
            let mut config = load_config(cli)?;
            if let Some(r) = repeats {
                config.repeats = *r;
            }
            let budgets: Vec<u64> = if budgets.is_empty() { config.budgets.clone() } else { budgets.iter().map(|&b| b as u64).collect() };
            let methods = if methods.is_empty() { Method::ALL.to_vec() } else { methods.clone() };
            let report = run_budget_sweep(&config, &budgets, &methods)?;
            let dir = out_dir(cli)?;
            let csv = to_csv(&report.rows);
            print!("{csv}");
            write_output(&dir, "sweep.csv", &csv)?;
            write_output(&dir, "sweep_samples.csv", &to_csv(&report.samples))?;
        }
        Command::Holdout { count } => {
            let mut config = load_config(cli)?;
            if config.output.is_none() {
                config.output = Some(out_dir(cli)?);
            }
            let report = run_holdout_validation(&config, *count, seed)?;
            println!("mean cosine similarity {:.6}", report.mean);
        }
        Command::Run => {
            let mut config = load_config(cli)?;
            if config.output.is_none() {
                config.output = Some(out_dir(cli)?);
            }
            let report = run_tomography(&config)?;
            print!("{}", to_csv(&report.metrics));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
