//! Comparison metrics: normalised Hilbert–Schmidt fidelity, cosine
//! similarity of outcome distributions, connected correlators and
//! logarithmic negativity.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pauli::{Pauli, PauliString};
use crate::sampler::{ExpectationTable, ShotRecord};
use crate::simstate::{self, DenseState, SimError, MAX_DENSE_QUBITS};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("input has zero purity or norm")]
    Degenerate,
    #[error("qubits must be distinct and in range, got ({0}, {1})")]
    BadPair(usize, usize),
    #[error("missing local observable {0}")]
    Missing(String),
    #[error("projection vectors belong to different observables ({0} vs {1})")]
    ObservableMismatch(String, String),
    #[error("subsystem qubit {0} out of range")]
    BadSubsystem(usize),
    #[error("trace norm is not finite")]
    NonFinite,
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn tr_product(a: &DenseState, b: &DenseState) -> f64 {
    match (a, b) {
        (DenseState::Pure(u), DenseState::Pure(v)) => (u.adjoint() * v)[(0, 0)].norm_sqr(),
        (DenseState::Pure(u), DenseState::Mixed(m)) | (DenseState::Mixed(m), DenseState::Pure(u)) => {
            (u.adjoint() * (m * u))[(0, 0)].re
        }
        (DenseState::Mixed(x), DenseState::Mixed(y)) => x.iter().zip(y.transpose().iter()).map(|(p, q)| p * q).sum::<C64>().re,
    }
}

/// `tr(ab) / √(tr(a²) tr(b²))`, the normalised Hilbert–Schmidt overlap.
/// Inputs need not be normalised.
pub fn fidelity(a: &DenseState, b: &DenseState) -> Result<f64, MetricError> {
    if a.dim() != b.dim() {
        return Err(MetricError::Dimension(a.dim(), b.dim()));
    }
    let (aa, bb) = (tr_product(a, a), tr_product(b, b));
    if aa <= 0.0 || bb <= 0.0 {
        return Err(MetricError::Degenerate);
    }
    Ok((tr_product(a, b) / (aa * bb).sqrt()).clamp(0.0, 1.0))
}

/// Outcome distribution of one observable, in its eigenbasis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionVector {
    pub observable: PauliString,
    pub probabilities: Vec<f64>,
}

impl ProjectionVector {
    pub fn from_state(state: &DenseState, observable: &PauliString) -> Result<Self, MetricError> {
        Ok(Self { observable: observable.clone(), probabilities: simstate::measurement_distribution(state, observable)? })
    }

    pub fn from_record(record: &ShotRecord) -> Result<Self, MetricError> {
        let total = record.shots();
        if total <= 0.0 {
            return Err(MetricError::Degenerate);
        }
        let mut probabilities = vec![0.0; 1 << record.n_qubits()];
        for (&b, &c) in record.counts() {
            probabilities[b as usize] = c / total;
        }
        Ok(Self { observable: record.observable.clone(), probabilities })
    }
}

/// `|a·b| / (|a| |b|)`.
pub fn cosine_similarity(a: &ProjectionVector, b: &ProjectionVector) -> Result<f64, MetricError> {
    if a.observable != b.observable {
        return Err(MetricError::ObservableMismatch(a.observable.to_string(), b.observable.to_string()));
    }
    if a.probabilities.len() != b.probabilities.len() {
        return Err(MetricError::Dimension(a.probabilities.len(), b.probabilities.len()));
    }
    let dot: f64 = a.probabilities.iter().zip(&b.probabilities).map(|(x, y)| x * y).sum();
    let na = a.probabilities.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.probabilities.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::Degenerate);
    }
    Ok((dot.abs() / (na * nb)).min(1.0))
}

fn pair_strings(n: usize, i: usize, j: usize, letter: Pauli) -> (PauliString, PauliString, PauliString) {
    let mut a = vec![Pauli::I; n];
    a[i] = letter;
    let mut b = vec![Pauli::I; n];
    b[j] = letter;
    let mut ab = a.clone();
    ab[j] = letter;
    let mk = |v| PauliString::new(v).expect("n >= 2");
    (mk(ab), mk(a), mk(b))
}

/// `⟨σ_i σ_j⟩ − ⟨σ_i⟩⟨σ_j⟩` computed exactly.
pub fn connected_correlator(state: &DenseState, i: usize, j: usize, letter: Pauli) -> Result<f64, MetricError> {
    let n = state.n_qubits();
    if i == j || i >= n || j >= n {
        return Err(MetricError::BadPair(i, j));
    }
    let (ab, a, b) = pair_strings(n, i, j, letter);
    let e = |p: &PauliString| simstate::exact_expectation(state, p);
    Ok(e(&ab)? - e(&a)? * e(&b)?)
}

/// Correlator from estimated expectations, with first-order error
/// propagation treating the three estimates as independent.
pub fn connected_correlator_table(
    table: &ExpectationTable,
    n: usize,
    i: usize,
    j: usize,
    letter: Pauli,
) -> Result<(f64, f64), MetricError> {
    if i == j || i >= n || j >= n {
        return Err(MetricError::BadPair(i, j));
    }
    let (ab, a, b) = pair_strings(n, i, j, letter);
    let get = |p: &PauliString| table.get(p).copied().ok_or_else(|| MetricError::Missing(p.to_string()));
    let (eab, ea, eb) = (get(&ab)?, get(&a)?, get(&b)?);
    let value = eab.value - ea.value * eb.value;
    let var = eab.stderr.powi(2) + (eb.value * ea.stderr).powi(2) + (ea.value * eb.stderr).powi(2);
    Ok((value, var.sqrt()))
}

/// Partial transpose of `rho` on the qubits in `subsystem`.
pub fn partial_transpose(rho: &DMatrix<C64>, n: usize, subsystem: &[usize]) -> DMatrix<C64> {
    let mask = subsystem.iter().fold(0usize, |m, &q| m | (1 << (n - 1 - q)));
    let dim = rho.nrows();
    DMatrix::from_fn(dim, dim, |r, c| {
        let swap = (r ^ c) & mask;
        rho[(r ^ swap, c ^ swap)]
    })
}

/// `log₂ ‖ρ^{Γ_A}‖₁`.
pub fn log_negativity(state: &DenseState, subsystem: &[usize]) -> Result<f64, MetricError> {
    let n = state.n_qubits();
    if n > MAX_DENSE_QUBITS {
        return Err(SimError::TooLarge { n, max: MAX_DENSE_QUBITS }.into());
    }
    if let Some(&q) = subsystem.iter().find(|&&q| q >= n) {
        return Err(MetricError::BadSubsystem(q));
    }
    let rho = state.density();
    let tr = rho.trace().re;
    if tr <= 0.0 {
        return Err(MetricError::Degenerate);
    }
    let pt = partial_transpose(&(rho / C64::new(tr, 0.0)), n, subsystem);
    let norm: f64 = pt.singular_values().iter().sum();
    if !norm.is_finite() {
        return Err(MetricError::NonFinite);
    }
    Ok(norm.log2().max(0.0))
}

/// Contiguous chain blocks `{s, …, s+m−1}` for every `m` in `1..n` and start `s`.
pub fn contiguous_subsystems(n: usize) -> Vec<Vec<usize>> {
    (1..n).flat_map(|m| (0..=n - m).map(move |s| (s..s + m).collect())).collect()
}

/// Logarithmic negativity for each subsystem, computed in parallel.
pub fn negativity_sweep(state: &DenseState, subsystems: &[Vec<usize>]) -> Result<Vec<f64>, MetricError> {
    subsystems.par_iter().map(|a| log_negativity(state, a)).collect()
}

/// One line of a metrics report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub args: String,
    pub value: f64,
    pub stderr: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::parse_pauli;
    use crate::sampler::{aggregate, exact_records, sample, Allocation};
    use crate::simstate::w_state;
    use nalgebra::DVector;

    fn bell() -> DenseState {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        DenseState::Pure(DVector::from_vec(vec![C64::new(h, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(h, 0.0)]))
    }

    #[test]
    fn fidelity_examples() {
        let w = w_state(6);
        assert!((fidelity(&w, &w).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(fidelity(&DenseState::basis(2, 0), &DenseState::basis(2, 3)).unwrap(), 0.0);
        let f = fidelity(&w, &DenseState::maximally_mixed(6)).unwrap();
        assert!((f - 0.125).abs() < 1e-14);
        let scaled = DenseState::Mixed(w.density() * C64::new(3.5, 0.0));
        assert!((fidelity(&scaled, &DenseState::maximally_mixed(6)).unwrap() - 0.125).abs() < 1e-14);
        assert!(fidelity(&w, &DenseState::basis(2, 0)).is_err());
    }

    #[test]
    fn fidelity_symmetric_and_mixed_paths_agree() {
        let a = w_state(3);
        let b = DenseState::Mixed(DenseState::basis(3, 1).density() * C64::new(0.5, 0.0) + DenseState::maximally_mixed(3).density() * C64::new(0.5, 0.0));
        let ab = fidelity(&a, &b).unwrap();
        assert!((ab - fidelity(&b, &a).unwrap()).abs() < 1e-15);
        let am = DenseState::Mixed(a.density());
        assert!((ab - fidelity(&am, &b).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn cosine_examples() {
        let obs = parse_pauli("ZZ").unwrap();
        let a = ProjectionVector { observable: obs.clone(), probabilities: vec![0.5, 0.5, 0.0, 0.0] };
        let b = ProjectionVector { observable: obs.clone(), probabilities: vec![0.0, 0.0, 0.3, 0.7] };
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 0.0);
        let scaled = ProjectionVector { observable: obs, probabilities: vec![2.0, 2.0, 0.0, 0.0] };
        assert!((cosine_similarity(&a, &scaled).unwrap() - 1.0).abs() < 1e-15);

        let xxx = parse_pauli("XXX").unwrap();
        let w3 = w_state(3);
        let rec = sample(&w3, std::slice::from_ref(&xxx), 10_000, Allocation::Random, 1).unwrap();
        let c = cosine_similarity(&ProjectionVector::from_state(&w3, &xxx).unwrap(), &ProjectionVector::from_record(&rec[0]).unwrap()).unwrap();
        assert!(c > 0.99);
    }

    #[test]
    fn correlator_examples() {
        let product = DenseState::basis(2, 1);
        assert!(connected_correlator(&product, 0, 1, Pauli::Z).unwrap().abs() < 1e-15);
        assert!((connected_correlator(&bell(), 0, 1, Pauli::Z).unwrap() - 1.0).abs() < 1e-14);
        assert!(connected_correlator(&bell(), 1, 1, Pauli::Z).is_err());
    }

    #[test]
    fn table_correlator_matches_exact_in_infinite_shot_limit() {
        let w = w_state(4);
        let obs: Vec<_> = ["YYYY", "ZZZZ"].iter().map(|s| parse_pauli(s).unwrap()).collect();
        let table = aggregate(&exact_records(&w, &obs, 1e6).unwrap(), 2).unwrap();
        for (i, j) in [(0, 1), (1, 3), (2, 3)] {
            for letter in [Pauli::Y, Pauli::Z] {
                let (v, _) = connected_correlator_table(&table, 4, i, j, letter).unwrap();
                assert!((v - connected_correlator(&w, i, j, letter).unwrap()).abs() < 1e-12);
            }
        }
        assert!(matches!(connected_correlator_table(&table, 4, 0, 1, Pauli::X), Err(MetricError::Missing(_))));
    }

    #[test]
    fn negativity_examples() {
        assert!(log_negativity(&DenseState::basis(3, 5), &[0]).unwrap().abs() < 1e-12);
        assert!((log_negativity(&bell(), &[0]).unwrap() - 1.0).abs() < 1e-12);
        // W_n across one qubit: ‖ρ^Γ‖₁ = 1 + 2√(n−1)/n.
        let n = 5;
        let expect = (1.0 + 2.0 * ((n - 1) as f64).sqrt() / n as f64).log2();
        assert!((log_negativity(&w_state(n), &[2]).unwrap() - expect).abs() < 1e-12);
        let w6 = w_state(6);
        for a in contiguous_subsystems(6) {
            let comp: Vec<usize> = (0..6).filter(|q| !a.contains(q)).collect();
            let x = log_negativity(&w6, &a).unwrap();
            assert!((x - log_negativity(&w6, &comp).unwrap()).abs() < 1e-10);
        }
        assert!(log_negativity(&w6, &[6]).is_err());
    }

    #[test]
    fn w9_block_negativities() {
        // W_n across a block of m qubits: ‖ρ^Γ‖₁ = 1 + 2√(m(n−m))/n.
        let n = 9;
        let w = w_state(n);
        for a in contiguous_subsystems(n) {
            let m = a.len() as f64;
            let expect = (1.0 + 2.0 * (m * (n as f64 - m)).sqrt() / n as f64).log2();
            let got = log_negativity(&w, &a).unwrap();
            assert!((got - expect).abs() < 1e-10, "{a:?}: {got} vs {expect}");
        }
    }

    #[test]
    fn contiguous_counts() {
        assert_eq!(contiguous_subsystems(9).len(), (1..9).map(|m| 10 - m).sum::<usize>());
    }
}
