//! Locally purified states: `ρ = Σ A Ā` over a tensor train with one
//! purification leg per site, contracted without forming `2^N` objects, and
//! trained against measured data.
//!
//! Every loss term is a product operator `⊗ o_n`, and every site operator is
//! stored as a signed sum of rank-one projectors `Σ_r s_r |v_r⟩⟨v_r|`. With
//! `M_{rμ} = Σ_τ v̄_{rτ} A[τ, :, :, μ]` one site acts on a left environment as
//! `L ↦ Σ_{r,μ} s_r M_{rμ}ᵀ L M̄_{rμ}`. Terms are sorted so that shared
//! prefixes are contracted once; gradients come from reverse accumulation
//! over the same prefix tree.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::{self, DescentConfig, StopReason};
use crate::pauli::{Pauli, PauliString};
use crate::sampler::{ExpectationTable, ShotRecord};
use crate::simstate::{DenseState, MAX_DENSE_QUBITS};

#[derive(Debug, Error)]
pub enum LpsError {
    #[error("length mismatch: state has {expected} sites, input has {got}")]
    Mismatch { expected: usize, got: usize },
    #[error("bond and purification dimensions must be at least 1")]
    BadDimension,
    #[error("no training data")]
    Empty,
    #[error("{n} sites exceeds the dense limit of {max}")]
    TooLarge { n: usize, max: usize },
    #[error("loss became non-finite at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error("trace of the state vanished")]
    ZeroTrace,
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

type Mat = DMatrix<C64>;

/// Tensor train with tensors `A^[n][τ][μ]`, each a `χ_{n-1} × χ_n` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LpsState {
    tensors: Vec<Vec<Vec<Mat>>>,
}

/// Bond dimensions `χ_0 … χ_N` with unit boundaries and the cap
/// `min(χ, (2μ)^n, (2μ)^{N−n})`.
pub fn bond_dims(n: usize, chi: usize, mu: usize) -> Vec<usize> {
    let local = 2 * mu;
    let cap = |sites: usize| -> usize {
        let mut v = 1usize;
        for _ in 0..sites {
            v = v.saturating_mul(local);
            if v >= chi {
                return chi;
            }
        }
        v
    };
    (0..=n).map(|b| cap(b).min(cap(n - b)).min(chi)).collect()
}

impl LpsState {
    pub fn from_tensors(tensors: Vec<Vec<Vec<Mat>>>) -> Result<Self, LpsError> {
        if tensors.is_empty() {
            return Err(LpsError::BadDimension);
        }
        let mut left = 1;
        for (i, site) in tensors.iter().enumerate() {
            if site.len() != 2 || site[0].is_empty() || site[1].len() != site[0].len() {
                return Err(LpsError::BadDimension);
            }
            let right = site[0][0].ncols();
            if site.iter().flatten().any(|m| m.nrows() != left || m.ncols() != right) {
                return Err(LpsError::BadDimension);
            }
            if i + 1 == tensors.len() && right != 1 {
                return Err(LpsError::BadDimension);
            }
            left = right;
        }
        Ok(Self { tensors })
    }

    /// Complex Gaussian entries scaled by `1/√(χμ)` plus a unit bias on
    /// `A[τ, 0, 0, μ=τ]`, which starts training near the maximally mixed state
    /// (near `|0…0⟩` when `μ = 1`).
    pub fn random(n: usize, chi: usize, mu: usize, seed: u64) -> Result<Self, LpsError> {
        if n == 0 || chi == 0 || mu == 0 {
            return Err(LpsError::BadDimension);
        }
        let dims = bond_dims(n, chi, mu);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / ((chi * mu) as f64).sqrt();
        let tensors = (0..n)
            .map(|s| {
                (0..2)
                    .map(|tau| {
                        (0..mu)
                            .map(|m| {
                                let mut mat = Mat::from_fn(dims[s], dims[s + 1], |_, _| {
                                    let re: f64 = StandardNormal.sample(&mut rng);
                                    let im: f64 = StandardNormal.sample(&mut rng);
                                    C64::new(re, im) * scale
                                });
                                if m == tau.min(mu - 1) && (mu > 1 || tau == 0) {
                                    mat[(0, 0)] += C64::new(1.0, 0.0);
                                }
                                mat
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { tensors })
    }

    /// Exact product state `⊗|ψ_q⟩` with `χ = μ = 1`.
    pub fn product(sites: &[[C64; 2]]) -> Self {
        let tensors = sites
            .iter()
            .map(|psi| (0..2).map(|t| vec![Mat::from_element(1, 1, psi[t])]).collect())
            .collect();
        Self { tensors }
    }

    pub fn n_sites(&self) -> usize {
        self.tensors.len()
    }

    pub fn mu(&self, site: usize) -> usize {
        self.tensors[site][0].len()
    }

    pub fn bonds(&self) -> Vec<usize> {
        let mut b = vec![1];
        b.extend(self.tensors.iter().map(|s| s[0][0].ncols()));
        b
    }

    pub fn tensor(&self, site: usize, tau: usize, m: usize) -> &Mat {
        &self.tensors[site][tau][m]
    }

    pub fn n_params(&self) -> usize {
        2 * self.tensors.iter().flatten().flatten().map(|m| m.len()).sum::<usize>()
    }

    /// Real parameter vector: interleaved real and imaginary parts, ordered
    /// by site, `τ`, `μ`, then column-major matrix entries.
    pub fn params(&self) -> Vec<f64> {
        self.tensors.iter().flatten().flatten().flat_map(|m| m.iter().flat_map(|z| [z.re, z.im])).collect()
    }

    pub fn set_params(&mut self, x: &[f64]) {
        let mut it = x.chunks_exact(2);
        for m in self.tensors.iter_mut().flatten().flatten() {
            for z in m.iter_mut() {
                let c = it.next().expect("parameter length");
                *z = C64::new(c[0], c[1]);
            }
        }
    }

    /// `tr ρ`.
    pub fn trace(&self) -> f64 {
        let net = Network::single(vec![OP_I; self.n_sites()]);
        net.values(self)[0]
    }

    /// JSON checkpoint: sites, bond dims, purification dims and tensors as
    /// `[re, im]` pairs in parameter order.
    pub fn to_checkpoint(&self) -> String {
        let ck = Checkpoint {
            n: self.n_sites(),
            chi: self.bonds(),
            mu: (0..self.n_sites()).map(|s| self.mu(s)).collect(),
            params: self.params(),
        };
        serde_json::to_string(&ck).expect("plain data")
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, LpsError> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| LpsError::Checkpoint(e.to_string()))?;
        if ck.chi.len() != ck.n + 1 || ck.mu.len() != ck.n || ck.chi[0] != 1 || ck.chi[ck.n] != 1 {
            return Err(LpsError::Checkpoint("inconsistent header".into()));
        }
        let tensors: Vec<Vec<Vec<Mat>>> = (0..ck.n)
            .map(|s| (0..2).map(|_| (0..ck.mu[s]).map(|_| Mat::zeros(ck.chi[s], ck.chi[s + 1])).collect()).collect())
            .collect();
        let mut state = Self { tensors };
        if state.n_params() != ck.params.len() {
            return Err(LpsError::Checkpoint(format!("expected {} parameters, got {}", state.n_params(), ck.params.len())));
        }
        state.set_params(&ck.params);
        Ok(state)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    n: usize,
    chi: Vec<usize>,
    mu: Vec<usize>,
    params: Vec<f64>,
}

const OP_I: u8 = 0;

/// Site operator table: 0 = I, 1..=3 = X, Y, Z, then the projectors onto the
/// `b`-eigenvector of X, Y, Z at `4 + 2·(letter−1) + b`.
fn op_terms(op: u8) -> Vec<(f64, [C64; 2])> {
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    let letter = |i: u8| [Pauli::X, Pauli::Y, Pauli::Z][i as usize];
    match op {
        0 => vec![(1.0, [one, zero]), (1.0, [zero, one])],
        1..=3 => {
            let p = letter(op - 1);
            vec![(1.0, p.eigenvector(0)), (-1.0, p.eigenvector(1))]
        }
        _ => {
            let idx = op - 4;
            vec![(1.0, letter(idx / 2).eigenvector(idx % 2))]
        }
    }
}

fn pauli_op(p: Pauli) -> u8 {
    match p {
        Pauli::I => 0,
        Pauli::X => 1,
        Pauli::Y => 2,
        Pauli::Z => 3,
    }
}

fn projector_op(p: Pauli, bit: u8) -> u8 {
    match p {
        Pauli::I => OP_I,
        _ => 4 + 2 * (pauli_op(p) - 1) + bit,
    }
}

const N_OPS: usize = 10;

/// Sorted, deduplicated product-operator terms.
struct Network {
    seqs: Vec<Vec<u8>>,
}

/// `M_{rμ}` for every site, operator and projector of the operator.
struct SiteMaps {
    maps: Vec<Vec<Vec<(f64, [C64; 2], Vec<Mat>)>>>,
}

impl SiteMaps {
    fn build(state: &LpsState, used: &[[bool; N_OPS]]) -> Self {
        let maps = state
            .tensors
            .iter()
            .zip(used)
            .map(|(site, used)| {
                (0..N_OPS as u8)
                    .map(|op| {
                        if !used[op as usize] {
                            return Vec::new();
                        }
                        op_terms(op)
                            .into_iter()
                            .map(|(s, v)| {
                                let ms = (0..site[0].len())
                                    .map(|m| &site[0][m] * v[0].conj() + &site[1][m] * v[1].conj())
                                    .collect();
                                (s, v, ms)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { maps }
    }
}

impl Network {
    fn new(mut seqs: Vec<Vec<u8>>) -> Self {
        seqs.sort();
        seqs.dedup();
        Self { seqs }
    }

    fn single(seq: Vec<u8>) -> Self {
        Self { seqs: vec![seq] }
    }

    fn index_of(&self, seq: &[u8]) -> usize {
        self.seqs.binary_search_by(|s| s.as_slice().cmp(seq)).expect("term registered")
    }

    fn used_ops(&self, n: usize) -> Vec<[bool; N_OPS]> {
        let mut used = vec![[false; N_OPS]; n];
        for s in &self.seqs {
            for (site, &op) in s.iter().enumerate() {
                used[site][op as usize] = true;
            }
        }
        used
    }

    /// Groups `seqs[lo..hi]` by their operator at `depth`.
    fn groups(&self, depth: usize, lo: usize, hi: usize) -> Vec<(u8, usize, usize)> {
        let mut out = Vec::new();
        let mut start = lo;
        while start < hi {
            let op = self.seqs[start][depth];
            let mut end = start + 1;
            while end < hi && self.seqs[end][depth] == op {
                end += 1;
            }
            out.push((op, start, end));
            start = end;
        }
        out
    }

    /// `tr(O_t ρ)` for every term (unnormalised).
    fn values(&self, state: &LpsState) -> Vec<f64> {
        let n = state.n_sites();
        let maps = SiteMaps::build(state, &self.used_ops(n));
        let mut out = vec![0.0; self.seqs.len()];
        let root = Mat::from_element(1, 1, C64::new(1.0, 0.0));
        self.forward_rec(&maps, 0, 0, self.seqs.len(), &root, &mut out);
        out
    }

    fn forward_rec(&self, maps: &SiteMaps, depth: usize, lo: usize, hi: usize, env: &Mat, out: &mut [f64]) {
        if depth == maps.maps.len() {
            for v in &mut out[lo..hi] {
                *v = env[(0, 0)].re;
            }
            return;
        }
        for (op, a, b) in self.groups(depth, lo, hi) {
            let next = transfer(&maps.maps[depth][op as usize], env);
            self.forward_rec(maps, depth + 1, a, b, &next, out);
        }
    }

    /// Returns `G = 2 ∂f/∂Ā` given `g_t = ∂f/∂v_t`, laid out like the tensors.
    fn gradient(&self, state: &LpsState, weights: &[f64]) -> Vec<Vec<Vec<Mat>>> {
        let n = state.n_sites();
        let maps = SiteMaps::build(state, &self.used_ops(n));
        let mut grad: Vec<Vec<Vec<Mat>>> = state
            .tensors
            .iter()
            .map(|site| site.iter().map(|ms| ms.iter().map(|m| Mat::zeros(m.nrows(), m.ncols())).collect()).collect())
            .collect();
        let root = Mat::from_element(1, 1, C64::new(1.0, 0.0));
        self.backward_rec(&maps, 0, 0, self.seqs.len(), &root, weights, &mut grad);
        for m in grad.iter_mut().flatten().flatten() {
            *m *= C64::new(2.0, 0.0);
        }
        grad
    }

    /// Returns the adjoint `W` of `env`; accumulates `∂f/∂Ā` into `grad`.
    fn backward_rec(
        &self,
        maps: &SiteMaps,
        depth: usize,
        lo: usize,
        hi: usize,
        env: &Mat,
        weights: &[f64],
        grad: &mut [Vec<Vec<Mat>>],
    ) -> Mat {
        if depth == maps.maps.len() {
            let g: f64 = weights[lo..hi].iter().sum();
            return Mat::from_element(1, 1, C64::new(g, 0.0));
        }
        let mut w_parent = Mat::zeros(env.nrows(), env.ncols());
        let env_t = env.transpose();
        for (op, a, b) in self.groups(depth, lo, hi) {
            let terms = &maps.maps[depth][op as usize];
            let next = transfer(terms, env);
            let w = self.backward_rec(maps, depth + 1, a, b, &next, weights, grad);
            for (s, v, ms) in terms {
                for (m, mat) in ms.iter().enumerate() {
                    // Adjoint: W_p += s M W M†.
                    w_parent += (mat * &w * mat.adjoint()) * C64::new(*s, 0.0);
                    // ∂/∂Ā[τ] += s v_τ Lᵀ M W.
                    let core = &env_t * mat * &w;
                    for tau in 0..2 {
                        grad[depth][tau][m] += &core * (v[tau] * *s);
                    }
                }
            }
        }
        w_parent
    }
}

fn transfer(terms: &[(f64, [C64; 2], Vec<Mat>)], env: &Mat) -> Mat {
    let cols = terms[0].2[0].ncols();
    let mut out = Mat::zeros(cols, cols);
    for (s, _, ms) in terms {
        for mat in ms {
            out += (mat.transpose() * env * mat.map(|z| z.conj())) * C64::new(*s, 0.0);
        }
    }
    out
}

fn pauli_seq(p: &PauliString) -> Vec<u8> {
    p.letters().iter().map(|&l| pauli_op(l)).collect()
}

/// `tr(Pρ)/tr(ρ)`.
pub fn lps_expectation(state: &LpsState, obs: &PauliString) -> Result<f64, LpsError> {
    if obs.n_qubits() != state.n_sites() {
        return Err(LpsError::Mismatch { expected: state.n_sites(), got: obs.n_qubits() });
    }
    let net = Network::new(vec![pauli_seq(obs), vec![OP_I; state.n_sites()]]);
    let vals = net.values(state);
    let z = vals[net.index_of(&vec![OP_I; state.n_sites()])];
    if z <= 0.0 {
        return Err(LpsError::ZeroTrace);
    }
    Ok(vals[net.index_of(&pauli_seq(obs))] / z)
}

/// Expectations of many observables sharing one contraction pass.
pub fn lps_expectations(state: &LpsState, observables: &[PauliString]) -> Result<Vec<f64>, LpsError> {
    let n = state.n_sites();
    if let Some(p) = observables.iter().find(|p| p.n_qubits() != n) {
        return Err(LpsError::Mismatch { expected: n, got: p.n_qubits() });
    }
    let mut seqs: Vec<Vec<u8>> = observables.iter().map(pauli_seq).collect();
    seqs.push(vec![OP_I; n]);
    let net = Network::new(seqs);
    let vals = net.values(state);
    let z = vals[net.index_of(&vec![OP_I; n])];
    if z <= 0.0 {
        return Err(LpsError::ZeroTrace);
    }
    Ok(observables.iter().map(|p| vals[net.index_of(&pauli_seq(p))] / z).collect())
}

/// Outcome probabilities of measuring `obs`, indexed like
/// [`measurement_distribution`](crate::simstate::measurement_distribution):
/// identity positions are read out in the Z basis.
pub fn lps_distribution(state: &LpsState, obs: &PauliString) -> Result<Vec<f64>, LpsError> {
    let n = state.n_sites();
    if obs.n_qubits() != n {
        return Err(LpsError::Mismatch { expected: n, got: obs.n_qubits() });
    }
    let letters: Vec<Pauli> = obs.letters().iter().map(|&l| if l.is_identity() { Pauli::Z } else { l }).collect();
    let seq_of = |b: usize| -> Vec<u8> {
        letters.iter().enumerate().map(|(q, &l)| projector_op(l, ((b >> (n - 1 - q)) & 1) as u8)).collect()
    };
    let mut seqs: Vec<Vec<u8>> = (0..1usize << n).map(seq_of).collect();
    seqs.push(vec![OP_I; n]);
    let net = Network::new(seqs);
    let vals = net.values(state);
    let z = vals[net.index_of(&vec![OP_I; n])];
    if z <= 0.0 {
        return Err(LpsError::ZeroTrace);
    }
    Ok((0..1usize << n).map(|b| (vals[net.index_of(&seq_of(b))] / z).max(0.0)).collect())
}

/// Full contraction to a normalised density matrix.
pub fn lps_to_dense(state: &LpsState) -> Result<DenseState, LpsError> {
    let n = state.n_sites();
    if n > MAX_DENSE_QUBITS {
        return Err(LpsError::TooLarge { n, max: MAX_DENSE_QUBITS });
    }
    // rows: (physical, purification) multi-index; entries: right bond vector.
    let mut psi: Vec<Vec<C64>> = vec![vec![C64::new(1.0, 0.0)]];
    let mut pur_dim = 1usize;
    for site in &state.tensors {
        let mu = site[0].len();
        let right = site[0][0].ncols();
        let phys_dim = psi.len() / pur_dim;
        let mut next = vec![vec![C64::new(0.0, 0.0); right]; psi.len() * 2 * mu];
        for p in 0..phys_dim {
            for q in 0..pur_dim {
                let row = &psi[p * pur_dim + q];
                for (tau, per_tau) in site.iter().enumerate() {
                    for (m, mat) in per_tau.iter().enumerate() {
                        let target = &mut next[(p * 2 + tau) * pur_dim * mu + q * mu + m];
                        for (a, &x) in row.iter().enumerate() {
                            if x == C64::new(0.0, 0.0) {
                                continue;
                            }
                            for (b, t) in target.iter_mut().enumerate() {
                                *t += x * mat[(a, b)];
                            }
                        }
                    }
                }
            }
        }
        psi = next;
        pur_dim *= mu;
    }
    let dim = 1usize << n;
    let psi_mat = Mat::from_fn(dim, pur_dim, |p, q| psi[p * pur_dim + q][0]);
    let rho = &psi_mat * psi_mat.adjoint();
    let tr = rho.trace().re;
    if tr <= 0.0 {
        return Err(LpsError::ZeroTrace);
    }
    Ok(DenseState::Mixed(rho / C64::new(tr, 0.0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Mse,
    Mle,
}

impl std::str::FromStr for Loss {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(Loss::Mse),
            "mle" => Ok(Loss::Mle),
            other => Err(format!("unknown loss {other:?}")),
        }
    }
}

pub const MLE_CLIP: f64 = 1e-12;

/// Training input, compiled to product-operator terms.
pub struct Objective {
    n: usize,
    loss: Loss,
    net: Network,
    z_index: usize,
    /// `(term index, target η)` for MSE; `(term index, count)` for MLE.
    terms: Vec<(usize, f64)>,
}

impl Objective {
    /// `f_MSE = Σ_i (tr(L_i ρ)/tr ρ − η_i)² / S` over every table entry.
    pub fn mse(n: usize, table: &ExpectationTable) -> Result<Self, LpsError> {
        if table.is_empty() {
            return Err(LpsError::Empty);
        }
        let mut seqs = vec![vec![OP_I; n]];
        let mut pending = Vec::with_capacity(table.len());
        for (p, e) in &table.entries {
            if p.n_qubits() != n {
                return Err(LpsError::Mismatch { expected: n, got: p.n_qubits() });
            }
            let s = pauli_seq(p);
            seqs.push(s.clone());
            pending.push((s, e.value));
        }
        let net = Network::new(seqs);
        let terms = pending.iter().map(|(s, eta)| (net.index_of(s), *eta)).collect();
        let z_index = net.index_of(&vec![OP_I; n]);
        Ok(Self { n, loss: Loss::Mse, net, z_index, terms })
    }

    /// `f_MLE = −Σ_j Σ_s c_s log₂ p_s` with `p_s` the normalised outcome
    /// probability, clipped below at `MLE_CLIP`. Identity positions of a
    /// record's observable are traced out.
    pub fn mle(n: usize, records: &[ShotRecord]) -> Result<Self, LpsError> {
        let mut weights: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
        for rec in records {
            if rec.n_qubits() != n {
                return Err(LpsError::Mismatch { expected: n, got: rec.n_qubits() });
            }
            for (&b, &c) in rec.counts() {
                if c <= 0.0 {
                    continue;
                }
                let seq: Vec<u8> = rec
                    .observable
                    .letters()
                    .iter()
                    .enumerate()
                    .map(|(q, &l)| projector_op(l, ((b >> (n - 1 - q)) & 1) as u8))
                    .collect();
                *weights.entry(seq).or_insert(0.0) += c;
            }
        }
        if weights.is_empty() {
            return Err(LpsError::Empty);
        }
        let mut seqs: Vec<Vec<u8>> = weights.keys().cloned().collect();
        seqs.push(vec![OP_I; n]);
        let net = Network::new(seqs);
        let terms = weights.iter().map(|(s, &c)| (net.index_of(s), c)).collect();
        let z_index = net.index_of(&vec![OP_I; n]);
        Ok(Self { n, loss: Loss::Mle, net, z_index, terms })
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    fn loss_and_weights(&self, vals: &[f64]) -> (f64, Vec<f64>) {
        let z = vals[self.z_index];
        let mut g = vec![0.0; vals.len()];
        if !(z.is_finite() && z > 0.0) {
            return (f64::NAN, g);
        }
        let mut loss = 0.0;
        let mut gz = 0.0;
        match self.loss {
            Loss::Mse => {
                let s = self.terms.len() as f64;
                for &(t, eta) in &self.terms {
                    let r = vals[t] / z - eta;
                    loss += r * r / s;
                    let d = 2.0 * r / s;
                    g[t] += d / z;
                    gz -= d * vals[t] / (z * z);
                }
            }
            Loss::Mle => {
                let ln2 = std::f64::consts::LN_2;
                for &(t, c) in &self.terms {
                    let p = vals[t] / z;
                    if p > MLE_CLIP {
                        loss -= c * p.log2();
                        g[t] -= c / (ln2 * vals[t]);
                        gz += c / (ln2 * z);
                    } else {
                        loss -= c * MLE_CLIP.log2();
                    }
                }
            }
        }
        g[self.z_index] += gz;
        (loss, g)
    }

    pub fn loss(&self, state: &LpsState) -> Result<f64, LpsError> {
        if state.n_sites() != self.n {
            return Err(LpsError::Mismatch { expected: self.n, got: state.n_sites() });
        }
        Ok(self.loss_and_weights(&self.net.values(state)).0)
    }

    /// Loss and its gradient with respect to [`LpsState::params`].
    pub fn loss_and_gradient(&self, state: &LpsState) -> Result<(f64, Vec<f64>), LpsError> {
        if state.n_sites() != self.n {
            return Err(LpsError::Mismatch { expected: self.n, got: state.n_sites() });
        }
        let vals = self.net.values(state);
        let (loss, weights) = self.loss_and_weights(&vals);
        if !loss.is_finite() {
            return Ok((loss, vec![0.0; state.n_params()]));
        }
        let grad = self.net.gradient(state, &weights);
        let flat = grad.iter().flatten().flatten().flat_map(|m| m.iter().flat_map(|z| [z.re, z.im])).collect();
        Ok((loss, flat))
    }
}

pub fn loss_mse(state: &LpsState, table: &ExpectationTable) -> Result<f64, LpsError> {
    Objective::mse(state.n_sites(), table)?.loss(state)
}

pub fn loss_mle(state: &LpsState, records: &[ShotRecord]) -> Result<f64, LpsError> {
    Objective::mle(state.n_sites(), records)?.loss(state)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub chi: usize,
    pub mu: usize,
    pub max_iterations: usize,
    pub loss: Loss,
    pub seed: u64,
    /// Relative loss change treated as a plateau.
    pub tolerance: f64,
    pub plateau_window: usize,
    /// L-BFGS history; 0 gives steepest descent with backtracking.
    pub memory: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { chi: 18, mu: 2, max_iterations: 100, loss: Loss::Mle, seed: 0, tolerance: 1e-7, plateau_window: 5, memory: 10 }
    }
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub state: LpsState,
    /// Loss before the first step and after every accepted step.
    pub trace: Vec<f64>,
    pub stop: StopReason,
}

impl TrainResult {
    /// `iteration,loss` lines with a header.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,loss\n");
        for (i, v) in self.trace.iter().enumerate() {
            let _ = writeln!(out, "{i},{v}");
        }
        out
    }
}

pub enum TrainingData<'a> {
    Table(&'a ExpectationTable),
    Records(&'a [ShotRecord]),
}

impl TrainingData<'_> {
    fn n_qubits(&self) -> Result<usize, LpsError> {
        match self {
            TrainingData::Table(t) => t.entries.keys().next().map(PauliString::n_qubits).ok_or(LpsError::Empty),
            TrainingData::Records(r) => r.first().map(ShotRecord::n_qubits).ok_or(LpsError::Empty),
        }
    }
}

/// Fits an LPS to the data. MSE needs a table, MLE needs records; when the
/// configured loss does not match the data, the data decides.
pub fn reconstruct(data: TrainingData<'_>, config: &TrainConfig) -> Result<TrainResult, LpsError> {
    let n = data.n_qubits()?;
    let objective = match data {
        TrainingData::Table(t) => Objective::mse(n, t)?,
        TrainingData::Records(r) => Objective::mle(n, r)?,
    };
    train(&objective, LpsState::random(n, config.chi, config.mu, config.seed)?, config)
}

/// Runs the descent from a given starting state.
pub fn train(objective: &Objective, start: LpsState, config: &TrainConfig) -> Result<TrainResult, LpsError> {
    let descent = DescentConfig {
        max_iterations: config.max_iterations,
        memory: config.memory,
        plateau_tolerance: config.tolerance,
        plateau_window: config.plateau_window,
        ..Default::default()
    };
    let mut work = start.clone();
    let res = optim::minimize(start.params(), &descent, |x| {
        work.set_params(x);
        objective.loss_and_gradient(&work).unwrap_or((f64::NAN, vec![0.0; x.len()]))
    });
    if let StopReason::NonFinite { iteration } = res.stop {
        return Err(LpsError::Divergence { iteration });
    }
    let mut state = start;
    state.set_params(&res.params);
    Ok(TrainResult { state, trace: res.trace, stop: res.stop })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::{all_pauli_strings, parse_pauli};
    use crate::sampler::{aggregate, exact_records, Estimate};
    use crate::simstate::{exact_expectation, w_state};
    use nalgebra::SymmetricEigen;
    use rand::Rng;

    fn dense_expectation(rho: &DenseState, p: &PauliString) -> f64 {
        exact_expectation(rho, p).unwrap()
    }

    #[test]
    fn bond_caps() {
        assert_eq!(bond_dims(6, 18, 2), vec![1, 4, 16, 18, 16, 4, 1]);
        assert_eq!(bond_dims(3, 2, 1), vec![1, 2, 2, 1]);
    }

    #[test]
    fn identity_and_zero_state() {
        let s = LpsState::random(4, 3, 2, 1).unwrap();
        assert!((lps_expectation(&s, &PauliString::identity(4)).unwrap() - 1.0).abs() < 1e-12);
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let z = LpsState::product(&[[one, zero]; 3]);
        assert!((lps_expectation(&z, &parse_pauli("ZZZ").unwrap()).unwrap() - 1.0).abs() < 1e-15);
        assert!(lps_expectation(&z, &parse_pauli("ZZ").unwrap()).is_err());
    }

    #[test]
    fn expectation_matches_dense_oracle() {
        let s = LpsState::random(5, 4, 2, 7).unwrap();
        let rho = lps_to_dense(&s).unwrap();
        let all: Vec<PauliString> = all_pauli_strings(5).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let picks: Vec<PauliString> = (0..200).map(|_| all[rng.random_range(0..all.len())].clone()).collect();
        let batch = lps_expectations(&s, &picks).unwrap();
        for (p, b) in picks.iter().zip(&batch) {
            let single = lps_expectation(&s, p).unwrap();
            let dense = dense_expectation(&rho, p);
            assert!((single - dense).abs() < 1e-10, "{p}");
            assert!((b - dense).abs() < 1e-10, "{p}");
        }
    }

    #[test]
    fn distribution_matches_dense_oracle() {
        let state = LpsState::random(4, 4, 2, 11).unwrap();
        let dense = lps_to_dense(&state).unwrap();
        for text in ["XYZX", "ZZIY", "IIII"] {
            let p = parse_pauli(text).unwrap();
            let got = lps_distribution(&state, &p).unwrap();
            let want = crate::simstate::measurement_distribution(&dense, &p).unwrap();
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10, "{text}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn dense_is_hermitian_psd() {
        for seed in 0..3 {
            let s = LpsState::random(4, 5, 2, seed).unwrap();
            let DenseState::Mixed(rho) = lps_to_dense(&s).unwrap() else { panic!() };
            assert!((&rho - rho.adjoint()).iter().all(|z| z.norm() < 1e-12));
            let eig = SymmetricEigen::new(rho.clone());
            assert!(eig.eigenvalues.iter().all(|&l| l > -1e-10));
            assert!((rho.trace().re - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn product_state_is_rank_one() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = LpsState::product(&[[C64::new(h, 0.0), C64::new(0.0, h)], [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]]);
        let DenseState::Mixed(rho) = lps_to_dense(&s).unwrap() else { panic!() };
        let purity = (&rho * &rho).trace().re;
        assert!((purity - 1.0).abs() < 1e-12);
        assert!((lps_expectation(&s, &parse_pauli("YZ").unwrap()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let s = LpsState::random(3, 3, 2, 4).unwrap();
        let back = LpsState::from_checkpoint(&s.to_checkpoint()).unwrap();
        assert_eq!(back, s);
        assert!(LpsState::from_checkpoint("{\"n\":1}").is_err());
    }

    fn fd_check(objective: &Objective, state: &LpsState) {
        let (_, grad) = objective.loss_and_gradient(state).unwrap();
        let x = state.params();
        let mut work = state.clone();
        let h = 1e-5;
        let mut num = vec![0.0; x.len()];
        for i in 0..x.len() {
            let mut y = x.clone();
            y[i] = x[i] + h;
            work.set_params(&y);
            let up = objective.loss(&work).unwrap();
            y[i] = x[i] - h;
            work.set_params(&y);
            let down = objective.loss(&work).unwrap();
            num[i] = (up - down) / (2.0 * h);
        }
        let diff: f64 = grad.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(diff / norm < 1e-4, "relative error {}", diff / norm);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let w3 = w_state(3);
        let obs: Vec<_> = ["XXX", "YZX", "ZZZ", "XIY"].iter().map(|s| parse_pauli(s).unwrap()).collect();
        let records = exact_records(&w3, &obs, 100.0).unwrap();
        let table = aggregate(&records, 3).unwrap();
        for seed in 0..3 {
            let s = LpsState::random(3, 3, 2, seed).unwrap();
            fd_check(&Objective::mse(3, &table).unwrap(), &s);
            fd_check(&Objective::mle(3, &records).unwrap(), &s);
        }
    }

    #[test]
    fn loss_examples() {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let s = LpsState::product(&[[one, zero]]);
        let rec = ShotRecord::new(parse_pauli("Z").unwrap(), BTreeMap::from([(0, 500.0)])).unwrap();
        assert_eq!(loss_mle(&s, &[rec]).unwrap(), 0.0);

        let mut table = ExpectationTable::default();
        table.entries.insert(parse_pauli("Z").unwrap(), Estimate { value: 1.0, shots: 1.0, stderr: 0.0 });
        table.entries.insert(parse_pauli("X").unwrap(), Estimate { value: 0.0, shots: 1.0, stderr: 0.0 });
        assert!(loss_mse(&s, &table).unwrap().abs() < 1e-15);
        assert!(loss_mse(&s, &ExpectationTable::default()).is_err());
        assert!(loss_mle(&s, &[]).is_err());
    }

    #[test]
    fn mse_reconstructs_maximally_mixed_state() {
        let mm = DenseState::maximally_mixed(3);
        let obs: Vec<PauliString> = all_pauli_strings(3).filter(|p| p.is_parallel()).collect();
        let table = aggregate(&exact_records(&mm, &obs, 1.0).unwrap(), 3).unwrap();
        let cfg = TrainConfig { chi: 4, max_iterations: 60, seed: 1, ..Default::default() };
        let res = reconstruct(TrainingData::Table(&table), &cfg).unwrap();
        assert!(res.trace.windows(2).all(|w| w[1] <= w[0]));
        let f = crate::metrics::fidelity(&lps_to_dense(&res.state).unwrap(), &mm).unwrap();
        assert!(f > 0.99, "{f}");
    }
}
