//! Gate-level preparation programs for the target states.
//!
//! Circuits here are plain descriptions; [`crate::simstate::simulate`] runs
//! them. Qubit indices are 0-based.

use std::collections::BTreeSet;

use num_complex::Complex64 as C64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("qubit {q} out of range for {n} qubits")]
    QubitOutOfRange { q: usize, n: usize },
    #[error("two-qubit gate on identical qubits {0}")]
    SameQubit(usize),
    #[error("tree needs {expected} edges for {n} qubits, got {got}")]
    EdgeCount { n: usize, expected: usize, got: usize },
    #[error("connectivity graph is not a connected tree (qubit {0} unreachable)")]
    Disconnected(usize),
    #[error("B gate parameter {0} outside [0, 1]")]
    ParameterRange(f64),
    #[error("expected {expected} parameters, got {got}")]
    ParameterCount { expected: usize, got: usize },
    #[error("invalid tree text at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unknown gate {0:?}")]
    UnknownGate(String),
}

/// Undirected tree over `n` qubits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectivityTree {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl ConnectivityTree {
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Result<Self, CircuitError> {
        if n == 0 || edges.len() != n - 1 {
            return Err(CircuitError::EdgeCount { n, expected: n.saturating_sub(1), got: edges.len() });
        }
        for &(a, b) in &edges {
            for q in [a, b] {
                if q >= n {
                    return Err(CircuitError::QubitOutOfRange { q, n });
                }
            }
            if a == b {
                return Err(CircuitError::SameQubit(a));
            }
        }
        let tree = Self { n, edges };
        // n-1 edges plus connectivity implies acyclic.
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in tree.neighbours(u) {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        if let Some(q) = seen.iter().position(|s| !s) {
            return Err(CircuitError::Disconnected(q));
        }
        Ok(tree)
    }

    /// Parses one `a b` edge per line (0-based); `#` starts a comment. The
    /// qubit count is one more than the number of edges.
    pub fn parse(text: &str) -> Result<Self, CircuitError> {
        let mut edges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let nums: Vec<usize> = line
                .split(|c: char| c.is_whitespace() || c == ',' || c == '-')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| CircuitError::Parse { line: i + 1, reason: e.to_string() })?;
            if nums.len() != 2 {
                return Err(CircuitError::Parse { line: i + 1, reason: "expected two qubit indices".into() });
            }
            edges.push((nums[0], nums[1]));
        }
        Self::new(edges.len() + 1, edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbours(&self, q: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| if a == q { Some(b) } else if b == q { Some(a) } else { None })
            .collect();
        out.sort_unstable();
        out
    }

    /// Linear chain `0 - 1 - … - (n-1)`.
    pub fn chain(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (i - 1, i)).collect()).expect("chain is a tree")
    }

    /// Uniformly random labelled tree (random Prüfer sequence).
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        if n <= 2 {
            return Self::chain(n);
        }
        let prufer: Vec<usize> = (0..n - 2).map(|_| rng.random_range(0..n)).collect();
        let mut degree = vec![1usize; n];
        for &v in &prufer {
            degree[v] += 1;
        }
        let mut edges = Vec::with_capacity(n - 1);
        for &v in &prufer {
            let leaf = (0..n).find(|&u| degree[u] == 1).expect("a leaf exists");
            edges.push((leaf, v));
            degree[leaf] -= 1;
            degree[v] -= 1;
        }
        let rest: Vec<usize> = (0..n).filter(|&u| degree[u] == 1).collect();
        edges.push((rest[0], rest[1]));
        Self::new(n, edges).expect("Prüfer decoding yields a tree")
    }
}

/// Couplers of the 12-qubit tree-shaped chip (0-based).
pub fn chip_tree_12() -> ConnectivityTree {
    let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (6, 8), (8, 9), (9, 10), (9, 11)];
    ConnectivityTree::new(12, edges.to_vec()).expect("static tree")
}

/// First nine qubits of the 12-qubit chip.
pub fn chip_tree_9() -> ConnectivityTree {
    let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (6, 8)];
    ConnectivityTree::new(9, edges.to_vec()).expect("static tree")
}

/// Six-qubit tree of the worked W-circuit example: Q4 has branches to Q3
/// (which holds leaves Q1, Q2) and to the Q5-Q6 pair. Root it at index 3.
pub fn w_example_tree_6() -> ConnectivityTree {
    let edges = [(3, 2), (2, 1), (2, 0), (3, 4), (4, 5)];
    ConnectivityTree::new(6, edges.to_vec()).expect("static tree")
}

#[derive(Clone, Debug, PartialEq)]
pub enum Gate {
    X(usize),
    Rx(usize, f64),
    Ry(usize, f64),
    Rz(usize, f64),
    Cz(usize, usize),
    /// Weight-redistribution block on `(control, target)` with parameter `p`.
    B(usize, usize, f64),
}

impl Gate {
    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            Gate::X(q) | Gate::Rx(q, _) | Gate::Ry(q, _) | Gate::Rz(q, _) => vec![q],
            Gate::Cz(a, b) | Gate::B(a, b, _) => vec![a, b],
        }
    }

    pub fn is_two_qubit(&self) -> bool {
        matches!(self, Gate::Cz(..) | Gate::B(..))
    }
}

/// JSON record `{op, qubits, params}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub op: String,
    pub qubits: Vec<usize>,
    #[serde(default)]
    pub params: Vec<f64>,
}

impl From<&Gate> for GateRecord {
    fn from(g: &Gate) -> Self {
        let (op, params) = match *g {
            Gate::X(_) => ("X", vec![]),
            Gate::Rx(_, t) => ("RX", vec![t]),
            Gate::Ry(_, t) => ("RY", vec![t]),
            Gate::Rz(_, t) => ("RZ", vec![t]),
            Gate::Cz(..) => ("CZ", vec![]),
            Gate::B(_, _, p) => ("B", vec![p]),
        };
        GateRecord { op: op.to_string(), qubits: g.qubits(), params }
    }
}

impl TryFrom<&GateRecord> for Gate {
    type Error = CircuitError;

    fn try_from(r: &GateRecord) -> Result<Self, Self::Error> {
        let q = |i: usize| r.qubits.get(i).copied().ok_or(CircuitError::ParameterCount { expected: i + 1, got: r.qubits.len() });
        let p = |i: usize| r.params.get(i).copied().ok_or(CircuitError::ParameterCount { expected: i + 1, got: r.params.len() });
        Ok(match r.op.as_str() {
            "X" => Gate::X(q(0)?),
            "RX" => Gate::Rx(q(0)?, p(0)?),
            "RY" => Gate::Ry(q(0)?, p(0)?),
            "RZ" => Gate::Rz(q(0)?, p(0)?),
            "CZ" => Gate::Cz(q(0)?, q(1)?),
            "B" => Gate::B(q(0)?, q(1)?, p(0)?),
            other => return Err(CircuitError::UnknownGate(other.to_string())),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    n: usize,
    gates: Vec<Gate>,
}

#[derive(Serialize, Deserialize)]
struct CircuitJson {
    n: usize,
    gates: Vec<GateRecord>,
}

impl Circuit {
    pub fn new(n: usize, gates: Vec<Gate>) -> Result<Self, CircuitError> {
        for g in &gates {
            let qs = g.qubits();
            for &q in &qs {
                if q >= n {
                    return Err(CircuitError::QubitOutOfRange { q, n });
                }
            }
            if qs.len() == 2 && qs[0] == qs[1] {
                return Err(CircuitError::SameQubit(qs[0]));
            }
            if let Gate::B(_, _, p) = *g {
                if !(0.0..=1.0).contains(&p) {
                    return Err(CircuitError::ParameterRange(p));
                }
            }
        }
        Ok(Self { n, gates })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn to_json(&self) -> String {
        let json = CircuitJson { n: self.n, gates: self.gates.iter().map(GateRecord::from).collect() };
        serde_json::to_string_pretty(&json).expect("circuit serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CircuitError> {
        let json: CircuitJson =
            serde_json::from_str(text).map_err(|e| CircuitError::Parse { line: e.line(), reason: e.to_string() })?;
        let gates = json.gates.iter().map(Gate::try_from).collect::<Result<Vec<_>, _>>()?;
        Self::new(json.n, gates)
    }
}

/// The 4x4 matrix of `B(p)` in the basis `|00⟩, |01⟩, |10⟩, |11⟩` with the
/// control as the left qubit. Sends `|00⟩ → |00⟩` and
/// `|10⟩ → √p|10⟩ + √(1-p)|01⟩`.
pub fn b_gate_unitary(p: f64) -> Result<[[C64; 4]; 4], CircuitError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(CircuitError::ParameterRange(p));
    }
    let s = p.sqrt();
    let c = (1.0 - p).sqrt();
    let r = |x: f64| C64::new(x, 0.0);
    Ok([
        [r(1.0), r(0.0), r(0.0), r(0.0)],
        [r(0.0), r(0.0), r(c), r(s)],
        [r(0.0), r(0.0), r(s), r(-c)],
        [r(0.0), r(1.0), r(0.0), r(0.0)],
    ])
}

/// One `B(p)` block emitted by the W-state walk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BGateParam {
    pub control: usize,
    pub target: usize,
    pub p: f64,
}

/// W-state preparation on a tree: `X` on the root, then a depth-first walk
/// that hands each branch its share of the excitation.
///
/// At a node with `c` qubits still unserved in its subtree (itself
/// included), the branch to a child with `c'` qubits gets
/// `B((c - c') / c)`, after which the node keeps `c - c'`. Children are
/// visited in ascending index order.
pub fn design_w_circuit(tree: &ConnectivityTree, root: usize) -> Result<(Circuit, Vec<BGateParam>), CircuitError> {
    let n = tree.n();
    if root >= n {
        return Err(CircuitError::QubitOutOfRange { q: root, n });
    }
    let adjacency: Vec<Vec<usize>> = (0..n).map(|q| tree.neighbours(q)).collect();

    // Parent pointers and a post-order for subtree sizes.
    let mut parent = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![root];
    let mut seen = vec![false; n];
    seen[root] = true;
    while let Some(u) = stack.pop() {
        order.push(u);
        for &v in &adjacency[u] {
            if !seen[v] {
                seen[v] = true;
                parent[v] = u;
                stack.push(v);
            }
        }
    }
    if order.len() != n {
        let missing = seen.iter().position(|s| !s).unwrap_or(0);
        return Err(CircuitError::Disconnected(missing));
    }
    let mut size = vec![1usize; n];
    for &u in order.iter().rev() {
        if parent[u] != usize::MAX {
            size[parent[u]] += size[u];
        }
    }

    let mut gates = vec![Gate::X(root)];
    let mut params = Vec::with_capacity(n - 1);
    // Explicit stack of (node, remaining count, next child cursor).
    let children: Vec<Vec<usize>> =
        (0..n).map(|u| adjacency[u].iter().copied().filter(|&v| parent[v] == u).collect()).collect();
    let mut walk = vec![(root, size[root], 0usize)];
    while let Some(top) = walk.last_mut() {
        let (node, remaining, cursor) = *top;
        if cursor == children[node].len() {
            walk.pop();
            continue;
        }
        let child = children[node][cursor];
        let p = (remaining - size[child]) as f64 / remaining as f64;
        gates.push(Gate::B(node, child, p));
        params.push(BGateParam { control: node, target: child, p });
        top.1 = remaining - size[child];
        top.2 = cursor + 1;
        walk.push((child, size[child], 0));
    }
    Ok((Circuit::new(n, gates)?, params))
}

/// Hardware-efficient layered ansatz. Each layer applies an `RX` on every
/// qubit, then `CZ` on `cz_pattern`, then an `RY` on every qubit.
///
/// `theta` holds `2·n` angles per layer: the `n` RY angles followed by the
/// `n` RX angles; layer 1 acts first.
pub fn vqe_ansatz(n: usize, layers: usize, theta: &[f64], cz_pattern: &[(usize, usize)]) -> Result<Circuit, CircuitError> {
    let expected = 2 * n * layers;
    if theta.len() != expected {
        return Err(CircuitError::ParameterCount { expected, got: theta.len() });
    }
    let mut gates = Vec::with_capacity(layers * (2 * n + cz_pattern.len()));
    for layer in theta.chunks(2 * n) {
        let (ry, rx) = layer.split_at(n);
        gates.extend(rx.iter().enumerate().map(|(q, &t)| Gate::Rx(q, t)));
        gates.extend(cz_pattern.iter().map(|&(a, b)| Gate::Cz(a, b)));
        gates.extend(ry.iter().enumerate().map(|(q, &t)| Gate::Ry(q, t)));
    }
    Circuit::new(n, gates)
}

/// CZ layer of the six-qubit ansatz, in application order.
pub fn ansatz_cz_pattern_6() -> Vec<(usize, usize)> {
    vec![(0, 1), (2, 3), (1, 2), (3, 4), (3, 5)]
}

/// Seeded random circuit: `depth` layers of random `RY·RZ` rotations on
/// every qubit followed by a `CZ` on every edge (shuffled order), closed by a
/// final rotation layer. Angles are uniform in `[0, 2π)`.
pub fn random_circuit(n: usize, depth: usize, seed: u64, connectivity: &[(usize, usize)]) -> Result<Circuit, CircuitError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = std::f64::consts::TAU;
    let mut gates = Vec::new();
    let rotations = |gates: &mut Vec<Gate>, rng: &mut ChaCha8Rng| {
        for q in 0..n {
            gates.push(Gate::Rz(q, rng.random_range(0.0..tau)));
            gates.push(Gate::Ry(q, rng.random_range(0.0..tau)));
        }
    };
    let mut edges = connectivity.to_vec();
    for _ in 0..depth {
        rotations(&mut gates, &mut rng);
        edges.shuffle(&mut rng);
        gates.extend(edges.iter().map(|&(a, b)| Gate::Cz(a, b)));
    }
    rotations(&mut gates, &mut rng);
    Circuit::new(n, gates)
}

/// Edges touched by at least one `CZ`, normalised to `(min, max)`.
pub fn cz_edges(circuit: &Circuit) -> BTreeSet<(usize, usize)> {
    circuit
        .gates()
        .iter()
        .filter_map(|g| match *g {
            Gate::Cz(a, b) => Some((a.min(b), a.max(b))),
            _ => None,
        })
        .collect()
}
