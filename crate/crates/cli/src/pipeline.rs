//! End-to-end runs: single tomography experiments, shot-budget sweeps and
//! holdout-observable validation.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ptomo_core::circuits::{ansatz_cz_pattern_6, design_w_circuit, random_circuit, vqe_ansatz, Circuit, ConnectivityTree};
use ptomo_core::hashfam::{
    plan_fqst, plan_from_family, plan_lqst, plan_pqst, published_9_3_family, solve_cover, HashFamily, MeasurementPlan,
    PlanKind, SolveMode,
};
use ptomo_core::lps::{lps_distribution, lps_to_dense, reconstruct, LpsState, Loss, TrainConfig, TrainResult, TrainingData};
use ptomo_core::metrics::{
    connected_correlator, connected_correlator_table, contiguous_subsystems, cosine_similarity, fidelity, negativity_sweep,
    MetricRow, ProjectionVector,
};
use ptomo_core::pauli::{Pauli, PauliString};
use ptomo_core::sampler::{aggregate, apply_readout_noise, mitigate, sample, Allocation, ReadoutModel, ShotRecord};
use ptomo_core::simstate::{
    evolve, ground_state, simulate, vqe_optimize, w_state, DenseState, HamiltonianSpec, MAX_DENSE_QUBITS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{read_text, ExperimentConfig, FamilySource, MetricKind, NoiseSpec, PlanSpec, StateSpec};
use crate::error::CliError;
use crate::seeds::SeedTree;

const VQE_RESTARTS: usize = 10;
const VQE_ITERATIONS: usize = 300;

/// A prepared target state and, when one exists, the circuit that makes it.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub state: DenseState,
    pub circuit: Option<Circuit>,
}

fn simulated(circuit: Circuit) -> Result<Prepared, CliError> {
    let state = simulate(&circuit).map_err(CliError::stage("prep"))?;
    Ok(Prepared { state, circuit: Some(circuit) })
}

pub fn prepare_state(spec: &StateSpec, seed: u64) -> Result<Prepared, CliError> {
    let n = spec.n();
    let hamiltonian = |h: &Option<HamiltonianSpec>| h.clone().unwrap_or_else(|| HamiltonianSpec::random(n, seed));
    match spec {
        StateSpec::W { tree: None, .. } => Ok(Prepared { state: w_state(n), circuit: None }),
        StateSpec::W { tree: Some(t), .. } => {
            let (circuit, _) = design_w_circuit(&t.resolve(n)?, 0).map_err(CliError::stage("prep"))?;
            simulated(circuit)
        }
        StateSpec::Ground { hamiltonian: h, vqe_layers: None, .. } => {
            let ground = ground_state(&hamiltonian(h)).map_err(CliError::stage("prep"))?;
            Ok(Prepared { state: ground.state, circuit: None })
        }
        StateSpec::Ground { hamiltonian: h, vqe_layers: Some(layers), .. } => {
            let pattern = if n == 6 { ansatz_cz_pattern_6() } else { ConnectivityTree::chain(n).edges().to_vec() };
            let res = vqe_optimize(&hamiltonian(h), *layers, &pattern, seed, VQE_RESTARTS, VQE_ITERATIONS)
                .map_err(CliError::stage("prep"))?;
            simulated(vqe_ansatz(n, *layers, &res.theta, &pattern).map_err(CliError::stage("prep"))?)
        }
        StateSpec::Random { depth, tree, .. } => {
            let tree = match tree {
                Some(t) => t.resolve(n)?,
                None => ConnectivityTree::chain(n),
            };
            simulated(random_circuit(n, *depth, seed, tree.edges()).map_err(CliError::stage("prep"))?)
        }
        StateSpec::Dynamic { t, hamiltonian: h, .. } => {
            let state = evolve(&hamiltonian(h), *t, &DenseState::basis(n, 0)).map_err(CliError::stage("prep"))?;
            Ok(Prepared { state, circuit: None })
        }
        StateSpec::MaximallyMixed { .. } => Ok(Prepared { state: DenseState::maximally_mixed(n), circuit: None }),
    }
}

/// A state description plus the seed that realises it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateFile {
    pub spec: StateSpec,
    pub seed: u64,
}

impl StateFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        serde_json::from_str(&read_text(path)?).map_err(|e| CliError::config("state file", e))
    }

    pub fn prepare(&self) -> Result<Prepared, CliError> {
        prepare_state(&self.spec, self.seed)
    }
}

pub fn build_plan(spec: &PlanSpec, n: usize) -> Result<MeasurementPlan, CliError> {
    let need_k = || spec.k.ok_or_else(|| CliError::config("plan.k", "required for lqst and pqst"));
    let plan = match spec.kind {
        PlanKind::Fqst => plan_fqst(n, false),
        PlanKind::Lqst => plan_lqst(n, need_k()?),
        PlanKind::Pqst => {
            let k = need_k()?;
            let family = match &spec.family {
                FamilySource::Exact => return plan_pqst(n, k).map_err(CliError::stage("plan")),
                FamilySource::Greedy => solve_cover(n, k, SolveMode::Greedy),
                FamilySource::Published => {
                    if (n, k) != (9, 3) {
                        return Err(CliError::config("plan.family", "the published family is (9, 3)"));
                    }
                    Ok(published_9_3_family())
                }
                FamilySource::File(path) => HashFamily::parse(&read_text(path)?, k),
                FamilySource::Rows(rows) => HashFamily::new(n, k, rows.clone()),
            }
            .map_err(CliError::stage("plan"))?;
            if family.n() != n {
                return Err(CliError::config("plan.family", format!("family has {} columns, state has {n}", family.n())));
            }
            plan_from_family(&family)
        }
    };
    plan.map_err(CliError::stage("plan"))
}

/// How shots are taken and post-processed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Acquisition {
    pub allocation: Allocation,
    pub noise: Option<NoiseSpec>,
    pub mitigate: bool,
}

impl Acquisition {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        Self { allocation: config.allocation, noise: config.noise.clone(), mitigate: config.mitigate }
    }

    /// Samples `shots` over the observables, then applies readout noise
    /// (record `j` uses seed `noise + j`) and, if requested, mitigation.
    pub fn acquire(
        &self,
        target: &DenseState,
        observables: &[PauliString],
        shots: u64,
        seeds: &SeedTree,
    ) -> Result<Vec<ShotRecord>, CliError> {
        let records =
            sample(target, observables, shots, self.allocation, seeds.sampling()).map_err(CliError::stage("sample"))?;
        let Some(noise) = &self.noise else {
            return Ok(records);
        };
        let n = target.n_qubits();
        let model = ReadoutModel::from_flips(&noise.p01.expand(n), &noise.p10.expand(n)).map_err(CliError::stage("noise"))?;
        let noisy: Vec<ShotRecord> = records
            .par_iter()
            .enumerate()
            .map(|(j, r)| apply_readout_noise(r, &model, seeds.noise().wrapping_add(j as u64)))
            .collect::<Result<_, _>>()
            .map_err(CliError::stage("noise"))?;
        if !self.mitigate {
            return Ok(noisy);
        }
        noisy.par_iter().map(|r| mitigate(r, &model)).collect::<Result<_, _>>().map_err(CliError::stage("mitigate"))
    }
}

/// Trains an LPS: MSE on the weight-`1..=k` table, MLE on the raw records.
pub fn fit(records: &[ShotRecord], k: usize, train: &TrainConfig, init_seed: u64) -> Result<TrainResult, CliError> {
    let config = TrainConfig { seed: init_seed, ..train.clone() };
    match config.loss {
        Loss::Mse => {
            let table = aggregate(records, k).map_err(CliError::stage("aggregate"))?;
            reconstruct(TrainingData::Table(&table), &config)
        }
        Loss::Mle => reconstruct(TrainingData::Records(records), &config),
    }
    .map_err(CliError::stage("reconstruct"))
}

fn subsystem_label(a: &[usize]) -> String {
    match (a.first(), a.last()) {
        (Some(lo), Some(hi)) if lo == hi => format!("A={lo}"),
        (Some(lo), Some(hi)) => format!("A={lo}-{hi}"),
        _ => "A=".into(),
    }
}

/// Metric rows comparing the reconstruction with the target. Correlators
/// are also estimated straight from the records when those are given.
pub fn compute_metrics(
    kinds: &[MetricKind],
    target: &DenseState,
    reconstructed: &DenseState,
    records: Option<&[ShotRecord]>,
) -> Result<Vec<MetricRow>, CliError> {
    let stage = CliError::stage::<ptomo_core::metrics::MetricError>;
    let n = target.n_qubits();
    let mut rows = Vec::new();
    let kinds: BTreeSet<MetricKind> = kinds.iter().copied().collect();
    if kinds.contains(&MetricKind::Fidelity) {
        let value = fidelity(reconstructed, target).map_err(stage("metrics"))?;
        rows.push(MetricRow { metric: "fidelity".into(), args: "reconstructed,target".into(), value, stderr: None });
    }
    if kinds.contains(&MetricKind::Negativity) {
        let subsystems = contiguous_subsystems(n);
        for (source, state) in [("target", target), ("reconstructed", reconstructed)] {
            let values = negativity_sweep(state, &subsystems).map_err(stage("metrics"))?;
            for (a, value) in subsystems.iter().zip(values) {
                let args = format!("{},{source}", subsystem_label(a));
                rows.push(MetricRow { metric: "log_negativity".into(), args, value, stderr: None });
            }
        }
    }
    if kinds.contains(&MetricKind::Correlators) {
        let table = match records {
            Some(r) => Some(aggregate(r, 2).map_err(CliError::stage("aggregate"))?),
            None => None,
        };
        for letter in Pauli::NON_IDENTITY {
            for i in 0..n {
                for j in i + 1..n {
                    for (source, state) in [("target", target), ("reconstructed", reconstructed)] {
                        let value = connected_correlator(state, i, j, letter).map_err(stage("metrics"))?;
                        let args = format!("{i},{j},{},{source}", letter.as_char());
                        rows.push(MetricRow { metric: "connected_correlator".into(), args, value, stderr: None });
                    }
                    if let Some(t) = &table {
                        if let Ok((value, err)) = connected_correlator_table(t, n, i, j, letter) {
                            let args = format!("{i},{j},{},records", letter.as_char());
                            rows.push(MetricRow { metric: "connected_correlator".into(), args, value, stderr: Some(err) });
                        }
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Everything one tomography run produces.
#[derive(Clone, Debug)]
pub struct TomographyReport {
    pub plan: MeasurementPlan,
    pub target: DenseState,
    pub records: Vec<ShotRecord>,
    /// `Σ_j M_j` over the records.
    pub total_shots: f64,
    pub result: TrainResult,
    /// Dense reconstruction, when the size allows one.
    pub reconstructed: Option<DenseState>,
    pub metrics: Vec<MetricRow>,
}

/// Serialises rows as CSV with a header line.
pub fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("in-memory CSV");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV is UTF-8")
}

pub fn write_output(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| CliError::Io { path, source })
}

/// Prepares the state, samples the plan, trains the LPS and evaluates the
/// configured metrics. With an output directory, each artefact is written
/// as soon as it exists, so a failing stage leaves the earlier ones behind.
pub fn run_tomography(config: &ExperimentConfig) -> Result<TomographyReport, CliError> {
    config.validate()?;
    let n = config.state.n();
    if !config.metrics.is_empty() && n > MAX_DENSE_QUBITS {
        return Err(CliError::config("metrics", format!("dense metrics need n <= {MAX_DENSE_QUBITS}")));
    }
    let out = config.output.as_deref();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
        write_output(dir, "config.json", &config.to_json())?;
    }
    let seeds = SeedTree::new(config.seed);
    let prepared = prepare_state(&config.state, seeds.state())?;
    let plan = build_plan(&config.plan, n)?;
    if let Some(dir) = out {
        write_output(dir, "plan.json", &serde_json::to_string_pretty(&plan).expect("plan serialises"))?;
        if let Some(c) = &prepared.circuit {
            write_output(dir, "circuit.json", &c.to_json())?;
        }
    }
    let records = Acquisition::from_config(config).acquire(&prepared.state, &plan.observables, config.shots, &seeds)?;
    if let Some(dir) = out {
        write_output(dir, "records.jsonl", &ptomo_core::sampler::write_records(&records))?;
    }
    let result = fit(&records, plan.k, &config.train, seeds.init())?;
    if let Some(dir) = out {
        write_output(dir, "lps.json", &result.state.to_checkpoint())?;
        write_output(dir, "trace.csv", &result.trace_csv())?;
    }
    let reconstructed = if n <= MAX_DENSE_QUBITS {
        Some(lps_to_dense(&result.state).map_err(CliError::stage("reconstruct"))?)
    } else {
        None
    };
    let metrics = match &reconstructed {
        Some(rho) => compute_metrics(&config.metrics, &prepared.state, rho, Some(&records))?,
        None => Vec::new(),
    };
    if let Some(dir) = out {
        write_output(dir, "metrics.csv", &to_csv(&metrics))?;
        write_output(dir, "metrics.json", &serde_json::to_string_pretty(&metrics).expect("rows serialise"))?;
    }
    let total_shots = records.iter().map(ShotRecord::shots).sum();
    Ok(TomographyReport { plan, target: prepared.state, records, total_shots, result, reconstructed, metrics })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "LQST")]
    Lqst,
    #[serde(rename = "PQST-MSE")]
    PqstMse,
    #[serde(rename = "PQST-MLE")]
    PqstMle,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Lqst, Method::PqstMse, Method::PqstMle];

    fn loss(self) -> Loss {
        match self {
            Method::Lqst | Method::PqstMse => Loss::Mse,
            Method::PqstMle => Loss::Mle,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Lqst => "LQST",
            Method::PqstMse => "PQST-MSE",
            Method::PqstMle => "PQST-MLE",
        })
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget: u64,
    pub method: Method,
    /// Mean over repeats.
    pub fidelity: f64,
    /// Standard error of the mean.
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSample {
    pub budget: u64,
    pub method: Method,
    pub repeat: usize,
    pub fidelity: f64,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Individual runs sorted by `(budget, method, repeat)`.
    pub samples: Vec<SweepSample>,
}

/// Fidelity against the target for every budget, method and repeat.
///
/// LQST uses `plan_lqst(n, k)`, the PQST methods use the configured family;
/// `k` is `config.plan.k`. Repeat `r` draws its sampling and init seeds from
/// `SeedTree::new(config.seed).repeat(r)`.
pub fn run_budget_sweep(config: &ExperimentConfig, budgets: &[u64], methods: &[Method]) -> Result<SweepReport, CliError> {
    config.validate()?;
    if budgets.len() < 2 {
        return Err(CliError::config("budgets", "a sweep needs at least two budgets"));
    }
    if budgets.contains(&0) {
        return Err(CliError::config("budgets", "must be positive"));
    }
    if methods.is_empty() {
        return Err(CliError::config("methods", "no method selected"));
    }
    let n = config.state.n();
    if n > MAX_DENSE_QUBITS {
        return Err(CliError::config("state.n", format!("sweeps compute fidelities, which need n <= {MAX_DENSE_QUBITS}")));
    }
    let k = config.plan.k.ok_or_else(|| CliError::config("plan.k", "required for sweeps"))?;
    let root = SeedTree::new(config.seed);
    let target = prepare_state(&config.state, root.state())?.state;
    let pqst = build_plan(&PlanSpec { kind: PlanKind::Pqst, k: Some(k), family: config.plan.family.clone() }, n)?;
    let lqst = if methods.contains(&Method::Lqst) { Some(plan_lqst(n, k).map_err(CliError::stage("plan"))?) } else { None };
    let acquisition = Acquisition::from_config(config);
    let mut jobs = Vec::new();
    for &budget in budgets {
        for &method in methods {
            for repeat in 0..config.repeats {
                jobs.push((budget, method, repeat));
            }
        }
    }
    let mut samples: Vec<SweepSample> = jobs
        .par_iter()
        .map(|&(budget, method, repeat)| {
            let seeds = root.repeat(repeat);
            let plan = if method == Method::Lqst { lqst.as_ref().expect("built above") } else { &pqst };
            let records = acquisition.acquire(&target, &plan.observables, budget, &seeds)?;
            let train = TrainConfig { loss: method.loss(), ..config.train.clone() };
            let result = fit(&records, k, &train, seeds.init())?;
            let rho = lps_to_dense(&result.state).map_err(CliError::stage("reconstruct"))?;
            let fidelity = fidelity(&rho, &target).map_err(CliError::stage("metrics"))?;
            Ok(SweepSample { budget, method, repeat, fidelity })
        })
        .collect::<Result<_, CliError>>()?;
    samples.sort_by(|a, b| (a.budget, a.method, a.repeat).cmp(&(b.budget, b.method, b.repeat)));
    let mut rows = Vec::new();
    for chunk in samples.chunk_by(|a, b| (a.budget, a.method) == (b.budget, b.method)) {
        let values: Vec<f64> = chunk.iter().map(|s| s.fidelity).collect();
        let (mean, stderr) = mean_stderr(&values);
        rows.push(SweepRow { budget: chunk[0].budget, method: chunk[0].method, fidelity: mean, stderr });
    }
    Ok(SweepReport { rows, samples })
}

/// Mean and standard error of the mean (0 for a single value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let len = values.len() as f64;
    let mean = values.iter().sum::<f64>() / len;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (len - 1.0);
    (mean, (var / len).sqrt())
}

/// Distinct identity-free observables outside the plan, drawn uniformly.
pub fn draw_holdouts(plan: &MeasurementPlan, count: usize, seed: u64) -> Result<Vec<PauliString>, CliError> {
    let n = plan.n;
    let taken: BTreeSet<&PauliString> = plan.observables.iter().filter(|p| p.is_parallel()).collect();
    let available = 3usize.pow(n as u32) - taken.len();
    if count > available {
        return Err(CliError::config("holdout", format!("only {available} observables lie outside the plan")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let letters = (0..n).map(|_| Pauli::NON_IDENTITY[rng.random_range(0..3)]).collect();
        let p = PauliString::new(letters).expect("n >= 2");
        if !taken.contains(&p) && chosen.insert(p.clone()) {
            out.push(p);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutRow {
    pub observable: String,
    pub cosine: f64,
}

#[derive(Clone, Debug)]
pub struct HoldoutReport {
    pub rows: Vec<HoldoutRow>,
    pub mean: f64,
}

impl HoldoutReport {
    /// Per-observable rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut rows = self.rows.clone();
        rows.push(HoldoutRow { observable: "mean".into(), cosine: self.mean });
        to_csv(&rows)
    }
}

/// Measures each holdout with `shots_each` shots and compares the sampled
/// outcome distribution with the one the LPS predicts.
pub fn validate_holdouts(
    plan: &MeasurementPlan,
    target: &DenseState,
    lps: &LpsState,
    holdouts: &[PauliString],
    shots_each: u64,
    seed: u64,
) -> Result<HoldoutReport, CliError> {
    if holdouts.is_empty() {
        return Err(CliError::config("holdout", "no holdout observables"));
    }
    let in_plan: BTreeSet<&PauliString> = plan.observables.iter().collect();
    if let Some(p) = holdouts.iter().find(|p| in_plan.contains(p)) {
        return Err(CliError::config("holdout", format!("{p} is part of the plan")));
    }
    let total = shots_each * holdouts.len() as u64;
    let records = sample(target, holdouts, total, Allocation::RoundRobin, SeedTree::new(seed).sampling())
        .map_err(CliError::stage("holdout"))?;
    let rows: Vec<HoldoutRow> = records
        .par_iter()
        .map(|rec| {
            let measured = ProjectionVector::from_record(rec).map_err(CliError::stage("holdout"))?;
            let predicted = ProjectionVector {
                observable: rec.observable.clone(),
                probabilities: lps_distribution(lps, &rec.observable).map_err(CliError::stage("holdout"))?,
            };
            let cosine = cosine_similarity(&measured, &predicted).map_err(CliError::stage("holdout"))?;
            Ok(HoldoutRow { observable: rec.observable.to_string(), cosine })
        })
        .collect::<Result<_, CliError>>()?;
    let mean = rows.iter().map(|r| r.cosine).sum::<f64>() / rows.len() as f64;
    Ok(HoldoutReport { rows, mean })
}

/// Runs the configured tomography, then validates on `n_extra` random
/// observables outside the plan. `seed` fixes the holdout set and its shots.
pub fn run_holdout_validation(config: &ExperimentConfig, n_extra: usize, seed: u64) -> Result<HoldoutReport, CliError> {
    let mut quiet = config.clone();
    quiet.metrics.clear();
    let report = run_tomography(&quiet)?;
    let seeds = SeedTree::new(seed);
    let holdouts = draw_holdouts(&report.plan, n_extra, seeds.holdout())?;
    let result = validate_holdouts(&report.plan, &report.target, &report.result.state, &holdouts, config.holdout_shots, seed)?;
    if let Some(dir) = config.output.as_deref() {
        write_output(dir, "holdout.csv", &result.to_csv())?;
    }
    Ok(result)
}
