//! Declarative experiment configuration, read from JSON.

use std::path::{Path, PathBuf};

use ptomo_core::circuits::{chip_tree_12, chip_tree_9, w_example_tree_6, ConnectivityTree};
use ptomo_core::hashfam::PlanKind;
use ptomo_core::lps::TrainConfig;
use ptomo_core::sampler::Allocation;
use ptomo_core::simstate::HamiltonianSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// A connectivity tree given inline, by name, or as a file of `a b` edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeSource {
    Edges(Vec<(usize, usize)>),
    /// `chain`, `chip_9`, `chip_12`, `example_6`, or a path.
    Named(String),
}

impl TreeSource {
    pub fn resolve(&self, n: usize) -> Result<ConnectivityTree, CliError> {
        let tree = match self {
            TreeSource::Edges(edges) => {
                ConnectivityTree::new(n, edges.clone()).map_err(|e| CliError::config("state.tree", e))?
            }
            TreeSource::Named(name) => match name.as_str() {
                "chain" => ConnectivityTree::chain(n),
                "chip_9" => chip_tree_9(),
                "chip_12" => chip_tree_12(),
                "example_6" => w_example_tree_6(),
                path => {
                    let text = read_text(Path::new(path))?;
                    ConnectivityTree::parse(&text).map_err(|e| CliError::config("state.tree", e))?
                }
            },
        };
        if tree.n() != n {
            return Err(CliError::config("state.tree", format!("tree has {} qubits, state has {n}", tree.n())));
        }
        Ok(tree)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateSpec {
    /// W state; synthesised from the tree's circuit when a tree is given.
    W {
        n: usize,
        #[serde(default)]
        tree: Option<TreeSource>,
    },
    /// Ground state of a fully connected Hamiltonian, random unless given.
    Ground {
        n: usize,
        #[serde(default)]
        hamiltonian: Option<HamiltonianSpec>,
        /// Prepare with the layered VQE ansatz instead of exact diagonalisation.
        #[serde(default)]
        vqe_layers: Option<usize>,
    },
    /// Random CZ + rotation circuit over the tree (a chain by default).
    Random {
        n: usize,
        depth: usize,
        #[serde(default)]
        tree: Option<TreeSource>,
    },
    /// `e^{-iHt}|0…0⟩`.
    Dynamic {
        n: usize,
        t: f64,
        #[serde(default)]
        hamiltonian: Option<HamiltonianSpec>,
    },
    MaximallyMixed {
        n: usize,
    },
}

impl StateSpec {
    pub fn n(&self) -> usize {
        match *self {
            StateSpec::W { n, .. }
            | StateSpec::Ground { n, .. }
            | StateSpec::Random { n, .. }
            | StateSpec::Dynamic { n, .. }
            | StateSpec::MaximallyMixed { n } => n,
        }
    }
}

/// Where a PQST plan's hash family comes from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilySource {
    /// Budgeted exact solver (binary expansion for `k = 2`).
    #[default]
    Exact,
    Greedy,
    /// The printed `(9, 3)` family.
    Published,
    /// One row of digits per line.
    File(PathBuf),
    Rows(Vec<Vec<u8>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub kind: PlanKind,
    /// Locality; ignored for FQST.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub family: FamilySource,
}

/// Per-qubit readout flip probabilities; a single value applies to all qubits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Flips {
    Uniform(f64),
    PerQubit(Vec<f64>),
}

impl Flips {
    pub fn expand(&self, n: usize) -> Vec<f64> {
        match self {
            Flips::Uniform(p) => vec![*p; n],
            Flips::PerQubit(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Probability of reading 0 as 1.
    pub p01: Flips,
    /// Probability of reading 1 as 0.
    pub p10: Flips,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Fidelity,
    Negativity,
    Correlators,
}

fn default_metrics() -> Vec<MetricKind> {
    vec![MetricKind::Fidelity]
}

fn default_repeats() -> usize {
    10
}

fn default_holdout_shots() -> u64 {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub state: StateSpec,
    pub plan: PlanSpec,
    /// Total shot budget `M_tot`.
    pub shots: u64,
    #[serde(default)]
    pub allocation: Allocation,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub mitigate: bool,
    /// Training hyper-parameters. Its `seed` is replaced by the derived init seed.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricKind>,
    /// Root of every random choice in the run.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Repeat seeds per sweep point.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub budgets: Vec<u64>,
    /// Shots per holdout observable.
    #[serde(default = "default_holdout_shots")]
    pub holdout_shots: u64,
}

impl ExperimentConfig {
    pub fn new(state: StateSpec, plan: PlanSpec, shots: u64) -> Self {
        Self {
            state,
            plan,
            shots,
            allocation: Allocation::default(),
            noise: None,
            mitigate: false,
            train: TrainConfig::default(),
            metrics: default_metrics(),
            seed: 0,
            output: None,
            repeats: default_repeats(),
            budgets: Vec::new(),
            holdout_shots: default_holdout_shots(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: Self = serde_json::from_str(text).map_err(|e| CliError::config("config", e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_json(&read_text(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Checks budgets, sizes and that every referenced file or tree resolves.
    pub fn validate(&self) -> Result<(), CliError> {
        let n = self.state.n();
        if !(2..=12).contains(&n) {
            return Err(CliError::config("state.n", format!("{n} outside 2..=12")));
        }
        if self.shots == 0 {
            return Err(CliError::config("shots", "must be positive"));
        }
        if self.budgets.contains(&0) {
            return Err(CliError::config("budgets", "must be positive"));
        }
        if self.repeats == 0 {
            return Err(CliError::config("repeats", "must be positive"));
        }
        if self.holdout_shots == 0 {
            return Err(CliError::config("holdout_shots", "must be positive"));
        }
        if self.train.chi == 0 || self.train.mu == 0 {
            return Err(CliError::config("train", "chi and mu must be positive"));
        }
        match &self.state {
            StateSpec::W { tree: Some(t), .. } | StateSpec::Random { tree: Some(t), .. } => {
                t.resolve(n)?;
            }
            StateSpec::Ground { hamiltonian: Some(h), .. } | StateSpec::Dynamic { hamiltonian: Some(h), .. } if h.n != n => {
                return Err(CliError::config("state.hamiltonian", format!("acts on {} qubits, state has {n}", h.n)));
            }
            StateSpec::Dynamic { t, .. } if !t.is_finite() => {
                return Err(CliError::config("state.t", "must be finite"));
            }
            _ => {}
        }
        if self.plan.kind != PlanKind::Fqst {
            match self.plan.k {
                None => return Err(CliError::config("plan.k", "required for lqst and pqst")),
                Some(k) if k < 2 || k > n => return Err(CliError::config("plan.k", format!("{k} outside 2..={n}"))),
                _ => {}
            }
        }
        if let FamilySource::File(path) = &self.plan.family {
            if !path.is_file() {
                return Err(CliError::config("plan.family", format!("{} does not exist", path.display())));
            }
        }
        if let Some(noise) = &self.noise {
            for (field, flips) in [("noise.p01", &noise.p01), ("noise.p10", &noise.p10)] {
                let v = flips.expand(n);
                if v.len() != n || v.iter().any(|p| !(0.0..=0.5).contains(p)) {
                    return Err(CliError::config(field, format!("need {n} probabilities in [0, 0.5]")));
                }
            }
        }
        Ok(())
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}
