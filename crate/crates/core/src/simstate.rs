//! Exact dense backends: statevector simulation, Hamiltonians, ground
//! states, VQE and unitary time evolution.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuits::{self, Circuit, Gate};
use crate::optim::{self, DescentConfig};
use crate::pauli::{Pauli, PauliString};

/// Largest register handled with dense matrices.
pub const MAX_DENSE_QUBITS: usize = 10;
/// Largest register handled as a statevector.
pub const MAX_SIM_QUBITS: usize = 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("{n} qubits exceeds the limit of {max}")]
    TooLarge { n: usize, max: usize },
    #[error("dimension mismatch: expected {expected} qubits, got {got}")]
    Mismatch { expected: usize, got: usize },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid Hamiltonian term: {0}")]
    InvalidTerm(String),
    #[error("eigendecomposition produced non-finite values")]
    NonFinite,
    #[error(transparent)]
    Circuit(#[from] circuits::CircuitError),
}

/// Either a unit statevector or a unit-trace density matrix over `n` qubits.
#[derive(Clone, Debug, PartialEq)]
pub enum DenseState {
    Pure(DVector<C64>),
    Mixed(DMatrix<C64>),
}

fn qubits_for_dim(dim: usize) -> Option<usize> {
    (dim.is_power_of_two() && dim > 0).then(|| dim.trailing_zeros() as usize)
}

impl DenseState {
    pub fn pure(v: DVector<C64>) -> Result<Self, SimError> {
        qubits_for_dim(v.len()).ok_or_else(|| SimError::InvalidState("length is not a power of two".into()))?;
        let norm = v.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(SimError::InvalidState(format!("norm {norm}")));
        }
        Ok(DenseState::Pure(v))
    }

    pub fn mixed(rho: DMatrix<C64>) -> Result<Self, SimError> {
        let dim = rho.nrows();
        if rho.ncols() != dim || qubits_for_dim(dim).is_none() {
            return Err(SimError::InvalidState("not a square power-of-two matrix".into()));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
            return Err(SimError::InvalidState(format!("trace {tr}")));
        }
        let herm = (&rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > 1e-10 {
            return Err(SimError::InvalidState(format!("non-Hermitian by {herm}")));
        }
        Ok(DenseState::Mixed(rho))
    }

    /// `𝟙 / 2^n`.
    pub fn maximally_mixed(n: usize) -> Self {
        let dim = 1usize << n;
        DenseState::Mixed(DMatrix::identity(dim, dim) * C64::new(1.0 / dim as f64, 0.0))
    }

    pub fn basis(n: usize, index: usize) -> Self {
        let mut v = DVector::zeros(1 << n);
        v[index] = C64::new(1.0, 0.0);
        DenseState::Pure(v)
    }

    pub fn dim(&self) -> usize {
        match self {
            DenseState::Pure(v) => v.len(),
            DenseState::Mixed(m) => m.nrows(),
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    pub fn density(&self) -> DMatrix<C64> {
        match self {
            DenseState::Pure(v) => v * v.adjoint(),
            DenseState::Mixed(m) => m.clone(),
        }
    }

    /// Diagonal of the density matrix: computational-basis probabilities.
    pub fn probabilities(&self) -> Vec<f64> {
        match self {
            DenseState::Pure(v) => v.iter().map(|z| z.norm_sqr()).collect(),
            DenseState::Mixed(m) => (0..m.nrows()).map(|i| m[(i, i)].re.max(0.0)).collect(),
        }
    }

    /// Applies one single-qubit unitary to every copy of qubit `q`
    /// (`ρ → UρU†` for mixed states).
    pub fn apply_single(&mut self, q: usize, u: &[[C64; 2]; 2]) {
        let n = self.n_qubits();
        match self {
            DenseState::Pure(v) => apply_1q(v.as_mut_slice(), n, q, u),
            DenseState::Mixed(m) => {
                let dim = m.nrows();
                for c in 0..dim {
                    let mut col: Vec<C64> = m.column(c).iter().copied().collect();
                    apply_1q(&mut col, n, q, u);
                    m.column_mut(c).copy_from_slice(&col);
                }
                let uc = [[u[0][0].conj(), u[0][1].conj()], [u[1][0].conj(), u[1][1].conj()]];
                for r in 0..dim {
                    let mut row: Vec<C64> = m.row(r).iter().copied().collect();
                    apply_1q(&mut row, n, q, &uc);
                    for (c, z) in row.into_iter().enumerate() {
                        m[(r, c)] = z;
                    }
                }
            }
        }
    }
}

/// Closed-form `|W_n⟩`.
pub fn w_state(n: usize) -> DenseState {
    let mut v = DVector::zeros(1 << n);
    let amp = C64::new(1.0 / (n as f64).sqrt(), 0.0);
    for q in 0..n {
        v[1 << (n - 1 - q)] = amp;
    }
    DenseState::Pure(v)
}

fn apply_1q(v: &mut [C64], n: usize, q: usize, u: &[[C64; 2]; 2]) {
    let stride = 1usize << (n - 1 - q);
    for base in 0..v.len() {
        if base & stride != 0 {
            continue;
        }
        let a = v[base];
        let b = v[base | stride];
        v[base] = u[0][0] * a + u[0][1] * b;
        v[base | stride] = u[1][0] * a + u[1][1] * b;
    }
}

fn apply_2q(v: &mut [C64], n: usize, q1: usize, q2: usize, u: &[[C64; 4]; 4]) {
    let s1 = 1usize << (n - 1 - q1);
    let s2 = 1usize << (n - 1 - q2);
    for base in 0..v.len() {
        if base & (s1 | s2) != 0 {
            continue;
        }
        let idx = [base, base | s2, base | s1, base | s1 | s2];
        let old = idx.map(|i| v[i]);
        for r in 0..4 {
            v[idx[r]] = (0..4).map(|c| u[r][c] * old[c]).sum();
        }
    }
}

pub fn rx(theta: f64) -> [[C64; 2]; 2] {
    let (s, c) = (theta / 2.0).sin_cos();
    [[C64::new(c, 0.0), C64::new(0.0, -s)], [C64::new(0.0, -s), C64::new(c, 0.0)]]
}

pub fn ry(theta: f64) -> [[C64; 2]; 2] {
    let (s, c) = (theta / 2.0).sin_cos();
    [[C64::new(c, 0.0), C64::new(-s, 0.0)], [C64::new(s, 0.0), C64::new(c, 0.0)]]
}

pub fn rz(theta: f64) -> [[C64; 2]; 2] {
    [[C64::from_polar(1.0, -theta / 2.0), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::from_polar(1.0, theta / 2.0)]]
}

fn apply_gate(v: &mut [C64], n: usize, gate: &Gate) {
    match *gate {
        Gate::X(q) => apply_1q(v, n, q, &Pauli::X.matrix()),
        Gate::Rx(q, t) => apply_1q(v, n, q, &rx(t)),
        Gate::Ry(q, t) => apply_1q(v, n, q, &ry(t)),
        Gate::Rz(q, t) => apply_1q(v, n, q, &rz(t)),
        Gate::Cz(a, b) => {
            let mask = (1usize << (n - 1 - a)) | (1usize << (n - 1 - b));
            for (i, z) in v.iter_mut().enumerate() {
                if i & mask == mask {
                    *z = -*z;
                }
            }
        }
        Gate::B(a, b, p) => {
            let u = circuits::b_gate_unitary(p).expect("validated by Circuit::new");
            apply_2q(v, n, a, b, &u);
        }
    }
}

/// Runs `circuit` on `|0…0⟩`.
pub fn simulate(circuit: &Circuit) -> Result<DenseState, SimError> {
    let n = circuit.n();
    if n > MAX_SIM_QUBITS {
        return Err(SimError::TooLarge { n, max: MAX_SIM_QUBITS });
    }
    let mut v = vec![C64::new(0.0, 0.0); 1 << n];
    v[0] = C64::new(1.0, 0.0);
    for g in circuit.gates() {
        apply_gate(&mut v, n, g);
    }
    Ok(DenseState::Pure(DVector::from_vec(v)))
}

/// `J σ_a^(i) σ_b^(j)` with `a, b ∈ 0..4` (0 = identity) and `i < j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoBodyTerm {
    pub i: usize,
    pub j: usize,
    pub a: u8,
    pub b: u8,
    #[serde(rename = "J")]
    pub coupling: f64,
}

/// `w σ_l^(k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneBodyTerm {
    pub k: usize,
    pub l: u8,
    pub w: f64,
}

/// Fully connected two-body Hamiltonian over Pauli words.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianSpec {
    pub n: usize,
    #[serde(default)]
    pub two_body: Vec<TwoBodyTerm>,
    #[serde(default)]
    pub one_body: Vec<OneBodyTerm>,
}

fn letter(idx: u8) -> Result<Pauli, SimError> {
    match idx {
        0 => Ok(Pauli::I),
        1 => Ok(Pauli::X),
        2 => Ok(Pauli::Y),
        3 => Ok(Pauli::Z),
        _ => Err(SimError::InvalidTerm(format!("Pauli index {idx}"))),
    }
}

impl HamiltonianSpec {
    /// Every coupling `J^{(i,j)}_{a,b}` and field `w^{(k)}_l` drawn i.i.d.
    /// uniform in `[-1, 1]`.
    pub fn random(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut two_body = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                for a in 0..4 {
                    for b in 0..4 {
                        two_body.push(TwoBodyTerm { i, j, a, b, coupling: rng.random_range(-1.0..=1.0) });
                    }
                }
            }
        }
        let one_body = (0..n)
            .flat_map(|k| (0..4).map(move |l| (k, l)))
            .map(|(k, l)| OneBodyTerm { k, l, w: rng.random_range(-1.0..=1.0) })
            .collect();
        Self { n, two_body, one_body }
    }

    /// Pauli words with real coefficients.
    pub fn terms(&self) -> Result<Vec<(PauliString, f64)>, SimError> {
        let mut out = Vec::with_capacity(self.two_body.len() + self.one_body.len());
        for t in &self.two_body {
            if t.i >= t.j || t.j >= self.n {
                return Err(SimError::InvalidTerm(format!("pair ({}, {})", t.i, t.j)));
            }
            let mut letters = vec![Pauli::I; self.n];
            letters[t.i] = letter(t.a)?;
            letters[t.j] = letter(t.b)?;
            out.push((PauliString::new(letters).expect("n >= 2"), t.coupling));
        }
        for t in &self.one_body {
            if t.k >= self.n {
                return Err(SimError::InvalidTerm(format!("site {}", t.k)));
            }
            let mut letters = vec![Pauli::I; self.n];
            letters[t.k] = letter(t.l)?;
            out.push((PauliString::new(letters).expect("n >= 1"), t.w));
        }
        Ok(out)
    }
}

pub fn build_hamiltonian(spec: &HamiltonianSpec) -> Result<DMatrix<C64>, SimError> {
    if spec.n > MAX_DENSE_QUBITS {
        return Err(SimError::TooLarge { n: spec.n, max: MAX_DENSE_QUBITS });
    }
    let dim = 1usize << spec.n;
    let mut h = DMatrix::zeros(dim, dim);
    for (p, coef) in spec.terms()? {
        for col in 0..dim {
            let (row, phase) = p.apply_to_basis(col);
            h[(row, col)] += phase * coef;
        }
    }
    Ok(h)
}

/// Eigen-decomposition with eigenvalues sorted ascending.
fn sorted_eigh(h: DMatrix<C64>) -> Result<(Vec<f64>, DMatrix<C64>), SimError> {
    let eig = SymmetricEigen::new(h);
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite);
    }
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

#[derive(Clone, Debug)]
pub struct GroundState {
    pub state: DenseState,
    pub energy: f64,
    /// Dimension of the lowest eigenspace (within 1e-8); > 1 flags degeneracy.
    pub degeneracy: usize,
    /// Orthonormal basis of the lowest eigenspace, as columns.
    pub subspace: DMatrix<C64>,
}

impl GroundState {
    /// `⟨ψ|P_ground|ψ⟩`, which reduces to `|⟨g|ψ⟩|²` without degeneracy.
    pub fn fidelity(&self, psi: &DVector<C64>) -> f64 {
        (self.subspace.adjoint() * psi).norm_squared()
    }
}

pub const DEGENERACY_TOLERANCE: f64 = 1e-8;

pub fn ground_state(spec: &HamiltonianSpec) -> Result<GroundState, SimError> {
    let h = build_hamiltonian(spec)?;
    let (values, vectors) = sorted_eigh(h)?;
    let energy = values[0];
    let degeneracy = values.iter().take_while(|&&v| v - energy < DEGENERACY_TOLERANCE).count();
    let subspace = vectors.columns(0, degeneracy).into_owned();
    let state = DenseState::Pure(vectors.column(0).into_owned());
    Ok(GroundState { state, energy, degeneracy, subspace })
}

#[derive(Clone, Debug)]
pub struct VqeResult {
    pub theta: Vec<f64>,
    pub energy: f64,
    pub fidelity: f64,
    pub degenerate: bool,
    /// `(energy, fidelity)` at the end of every restart.
    pub restarts: Vec<(f64, f64)>,
}

/// Variational ground-state search with the layered ansatz.
///
/// Each restart draws `θ` uniformly in `[0, 2π)` and descends on
/// `⟨ψ(θ)|H|ψ(θ)⟩` with central-difference gradients (step 1e-4). The best
/// restart by energy is returned together with its fidelity against the
/// exact ground space.
pub fn vqe_optimize(
    spec: &HamiltonianSpec,
    layers: usize,
    cz_pattern: &[(usize, usize)],
    seed: u64,
    restarts: usize,
    max_iterations: usize,
) -> Result<VqeResult, SimError> {
    let n = spec.n;
    let h = build_hamiltonian(spec)?;
    let ground = ground_state(spec)?;
    let energy_of = |theta: &[f64]| -> f64 {
        let circuit = circuits::vqe_ansatz(n, layers, theta, cz_pattern).expect("parameter count fixed");
        let DenseState::Pure(psi) = simulate(&circuit).expect("size checked") else { unreachable!() };
        (psi.adjoint() * (&h * &psi))[(0, 0)].re
    };
    let cfg = DescentConfig {
        max_iterations,
        plateau_tolerance: 1e-10,
        gradient_tolerance: 1e-8,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<VqeResult> = None;
    let mut summary = Vec::with_capacity(restarts);
    for _ in 0..restarts.max(1) {
        let start: Vec<f64> = (0..2 * n * layers).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        let res = optim::minimize(start, &cfg, |theta| {
            (energy_of(theta), optim::central_difference(theta, 1e-4, energy_of))
        });
        let circuit = circuits::vqe_ansatz(n, layers, &res.params, cz_pattern)?;
        let DenseState::Pure(psi) = simulate(&circuit)? else { unreachable!() };
        let fidelity = ground.fidelity(&psi);
        summary.push((res.value, fidelity));
        if best.as_ref().is_none_or(|b| res.value < b.energy) {
            best = Some(VqeResult {
                theta: res.params,
                energy: res.value,
                fidelity,
                degenerate: ground.degeneracy > 1,
                restarts: Vec::new(),
            });
        }
    }
    let mut best = best.expect("at least one restart");
    best.restarts = summary;
    Ok(best)
}

/// `e^{-iHt}` applied through the eigen-decomposition of `H`.
pub fn evolve(spec: &HamiltonianSpec, t: f64, state: &DenseState) -> Result<DenseState, SimError> {
    if state.n_qubits() != spec.n {
        return Err(SimError::Mismatch { expected: spec.n, got: state.n_qubits() });
    }
    let h = build_hamiltonian(spec)?;
    let (values, vectors) = sorted_eigh(h)?;
    let phases = DVector::from_iterator(values.len(), values.iter().map(|&e| C64::from_polar(1.0, -e * t)));
    match state {
        DenseState::Pure(psi) => {
            let mut coeffs = vectors.adjoint() * psi;
            coeffs.component_mul_assign(&phases);
            Ok(DenseState::Pure(&vectors * coeffs))
        }
        DenseState::Mixed(rho) => {
            let u = &vectors * DMatrix::from_diagonal(&phases) * vectors.adjoint();
            Ok(DenseState::Mixed(&u * rho * u.adjoint()))
        }
    }
}

/// `tr(P ρ)` or `⟨ψ|P|ψ⟩`.
pub fn exact_expectation(state: &DenseState, obs: &PauliString) -> Result<f64, SimError> {
    let n = state.n_qubits();
    if obs.n_qubits() != n {
        return Err(SimError::Mismatch { expected: n, got: obs.n_qubits() });
    }
    let dim = state.dim();
    let mut acc = C64::new(0.0, 0.0);
    match state {
        DenseState::Pure(psi) => {
            for col in 0..dim {
                let (row, phase) = obs.apply_to_basis(col);
                acc += psi[row].conj() * phase * psi[col];
            }
        }
        DenseState::Mixed(rho) => {
            for col in 0..dim {
                let (row, phase) = obs.apply_to_basis(col);
                acc += phase * rho[(col, row)];
            }
        }
    }
    Ok(acc.re)
}

/// Rotates every qubit into the eigenbasis of its letter so that a
/// computational-basis readout measures `obs`; returns outcome probabilities.
pub fn measurement_distribution(state: &DenseState, obs: &PauliString) -> Result<Vec<f64>, SimError> {
    let n = state.n_qubits();
    if obs.n_qubits() != n {
        return Err(SimError::Mismatch { expected: n, got: obs.n_qubits() });
    }
    let mut rotated = state.clone();
    for (q, &p) in obs.letters().iter().enumerate() {
        if let Some(u) = basis_change(p) {
            rotated.apply_single(q, &u);
        }
    }
    Ok(rotated.probabilities())
}

/// Unitary whose rows are the `(-1)^0` and `(-1)^1` eigenvectors (conjugated)
/// of `p`; `None` for Z and I.
pub fn basis_change(p: Pauli) -> Option<[[C64; 2]; 2]> {
    match p {
        Pauli::I | Pauli::Z => None,
        _ => {
            let e0 = p.eigenvector(0);
            let e1 = p.eigenvector(1);
            Some([[e0[0].conj(), e0[1].conj()], [e1[0].conj(), e1[1].conj()]])
        }
    }
}
