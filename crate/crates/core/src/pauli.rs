//! Pauli strings, outcome strings and Pauli-expansion bookkeeping.
//!
//! Qubits are numbered left to right: the first letter of a string acts on
//! qubit 0, and qubit 0 is the most significant bit of every outcome index
//! and of every computational-basis index of a dense state.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simstate::MAX_DENSE_QUBITS;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PauliError {
    #[error("empty Pauli string")]
    Empty,
    #[error("invalid character {ch:?} at position {pos}")]
    InvalidChar { ch: char, pos: usize },
    #[error("length mismatch: expected {expected} qubits, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("observable {0} contains identity letters")]
    NotParallel(String),
    #[error("{n} qubits exceeds the dense limit of {max}")]
    TooLarge { n: usize, max: usize },
    #[error("invalid outcome string {0:?}")]
    InvalidOutcome(String),
}

/// Single-qubit Pauli letter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const NON_IDENTITY: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];

    pub fn from_char(ch: char) -> Option<Self> {
        match ch {
            'I' => Some(Pauli::I),
            'X' => Some(Pauli::X),
            'Y' => Some(Pauli::Y),
            'Z' => Some(Pauli::Z),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    pub fn is_identity(self) -> bool {
        self == Pauli::I
    }

    /// Row-major 2x2 matrix `[[m00, m01], [m10, m11]]`.
    pub fn matrix(self) -> [[C64; 2]; 2] {
        let o = C64::new(0.0, 0.0);
        let l = C64::new(1.0, 0.0);
        let i = C64::new(0.0, 1.0);
        match self {
            Pauli::I => [[l, o], [o, l]],
            Pauli::X => [[o, l], [l, o]],
            Pauli::Y => [[o, -i], [i, o]],
            Pauli::Z => [[l, o], [o, -l]],
        }
    }

    /// Eigenvector for eigenvalue `(-1)^bit` in the computational basis.
    pub fn eigenvector(self, bit: u8) -> [C64; 2] {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let (a, b) = match (self, bit) {
            (Pauli::X, 0) => (C64::new(h, 0.0), C64::new(h, 0.0)),
            (Pauli::X, _) => (C64::new(h, 0.0), C64::new(-h, 0.0)),
            (Pauli::Y, 0) => (C64::new(h, 0.0), C64::new(0.0, h)),
            (Pauli::Y, _) => (C64::new(h, 0.0), C64::new(0.0, -h)),
            (_, 0) => (C64::new(1.0, 0.0), C64::new(0.0, 0.0)),
            (_, _) => (C64::new(0.0, 0.0), C64::new(1.0, 0.0)),
        };
        [a, b]
    }
}

/// A word over {I, X, Y, Z}, one letter per qubit.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliString {
    letters: Vec<Pauli>,
}

impl PauliString {
    pub fn new(letters: Vec<Pauli>) -> Result<Self, PauliError> {
        if letters.is_empty() {
            return Err(PauliError::Empty);
        }
        Ok(Self { letters })
    }

    pub fn identity(n: usize) -> Self {
        Self { letters: vec![Pauli::I; n.max(1)] }
    }

    /// Uniform string `letter^n`.
    pub fn uniform(letter: Pauli, n: usize) -> Self {
        Self { letters: vec![letter; n.max(1)] }
    }

    pub fn n_qubits(&self) -> usize {
        self.letters.len()
    }

    pub fn letters(&self) -> &[Pauli] {
        &self.letters
    }

    pub fn get(&self, q: usize) -> Pauli {
        self.letters[q]
    }

    /// True when the string has no identity letter (a parallel observable).
    pub fn is_parallel(&self) -> bool {
        self.letters.iter().all(|p| !p.is_identity())
    }

    /// Number of non-identity letters.
    pub fn weight(&self) -> usize {
        self.letters.iter().filter(|p| !p.is_identity()).count()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.letters.len()).filter(|&q| !self.letters[q].is_identity()).collect()
    }

    /// Keeps the letters on `qubits` and replaces the rest by identity.
    pub fn restrict(&self, qubits: &[usize]) -> PauliString {
        let mut letters = vec![Pauli::I; self.letters.len()];
        for &q in qubits {
            letters[q] = self.letters[q];
        }
        PauliString { letters }
    }

    /// True when `self` agrees with `parent` on every non-identity position.
    pub fn is_restriction_of(&self, parent: &PauliString) -> bool {
        self.letters.len() == parent.letters.len()
            && self
                .letters
                .iter()
                .zip(&parent.letters)
                .all(|(l, p)| l.is_identity() || l == p)
    }

    /// Bit mask over outcome indices of the non-identity positions.
    pub fn support_mask(&self) -> u64 {
        let n = self.letters.len();
        self.letters
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.is_identity())
            .fold(0u64, |m, (q, _)| m | (1u64 << (n - 1 - q)))
    }

    /// Dense 2^N x 2^N matrix of the operator.
    pub fn to_matrix(&self) -> DMatrix<C64> {
        let n = self.n_qubits();
        let dim = 1usize << n;
        let mut m = DMatrix::zeros(dim, dim);
        for col in 0..dim {
            let (row, phase) = self.apply_to_basis(col);
            m[(row, col)] = phase;
        }
        m
    }

    /// `P |col⟩ = phase |row⟩`; returns `(row, phase)`.
    pub fn apply_to_basis(&self, col: usize) -> (usize, C64) {
        let n = self.n_qubits();
        let mut row = col;
        let mut phase = C64::new(1.0, 0.0);
        for (q, &p) in self.letters.iter().enumerate() {
            let shift = n - 1 - q;
            let bit = (col >> shift) & 1;
            match p {
                Pauli::I => {}
                Pauli::X => row ^= 1 << shift,
                Pauli::Y => {
                    row ^= 1 << shift;
                    phase *= if bit == 0 { C64::new(0.0, 1.0) } else { C64::new(0.0, -1.0) };
                }
                Pauli::Z => {
                    if bit == 1 {
                        phase = -phase;
                    }
                }
            }
        }
        (row, phase)
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.letters {
            write!(f, "{}", p.as_char())?;
        }
        Ok(())
    }
}

impl fmt::Debug for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PauliString({self})")
    }
}

impl FromStr for PauliString {
    type Err = PauliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_pauli(s)
    }
}

impl Serialize for PauliString {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PauliString {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_pauli(&s).map_err(serde::de::Error::custom)
    }
}

pub fn parse_pauli(text: &str) -> Result<PauliString, PauliError> {
    if text.is_empty() {
        return Err(PauliError::Empty);
    }
    let letters = text
        .chars()
        .enumerate()
        .map(|(pos, ch)| Pauli::from_char(ch).ok_or(PauliError::InvalidChar { ch, pos }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PauliString { letters })
}

/// Parses the line-oriented observable format; blank lines are skipped.
pub fn parse_pauli_list(text: &str) -> Result<Vec<PauliString>, PauliError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(parse_pauli)
        .collect()
}

pub fn format_pauli_list(list: &[PauliString]) -> String {
    let mut out = String::new();
    for p in list {
        out.push_str(&p.to_string());
        out.push('\n');
    }
    out
}

/// An N-bit measurement outcome. Bit `q` set means eigenvalue -1 on qubit `q`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OutcomeString {
    bits: u64,
    n_qubits: usize,
}

impl OutcomeString {
    pub fn from_index(bits: u64, n_qubits: usize) -> Self {
        debug_assert!(n_qubits <= 64);
        Self { bits, n_qubits }
    }

    pub fn parse(text: &str) -> Result<Self, PauliError> {
        if text.is_empty() || text.len() > 64 {
            return Err(PauliError::InvalidOutcome(text.to_string()));
        }
        let mut bits = 0u64;
        for ch in text.chars() {
            bits <<= 1;
            match ch {
                '0' => {}
                '1' => bits |= 1,
                _ => return Err(PauliError::InvalidOutcome(text.to_string())),
            }
        }
        Ok(Self { bits, n_qubits: text.len() })
    }

    pub fn index(&self) -> u64 {
        self.bits
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn bit(&self, q: usize) -> u8 {
        ((self.bits >> (self.n_qubits - 1 - q)) & 1) as u8
    }
}

impl fmt::Display for OutcomeString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for q in 0..self.n_qubits {
            write!(f, "{}", self.bit(q))?;
        }
        Ok(())
    }
}

impl fmt::Debug for OutcomeString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "OutcomeString({self})")
    }
}

fn parity(x: u64) -> i32 {
    if x.count_ones() % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Eigenvalue of a parallel observable on a measured outcome: `Π (-1)^bit`.
pub fn eigenvalue(obs: &PauliString, outcome: &OutcomeString) -> Result<i32, PauliError> {
    if obs.n_qubits() != outcome.n_qubits() {
        return Err(PauliError::LengthMismatch { expected: obs.n_qubits(), got: outcome.n_qubits() });
    }
    if !obs.is_parallel() {
        return Err(PauliError::NotParallel(obs.to_string()));
    }
    Ok(parity(outcome.index()))
}

/// Eigenvalue of `local` read off an outcome of `parent`, tracing out the
/// identity positions. `Ok(None)` when `local` is not a restriction of `parent`.
pub fn marginal_eigenvalue(
    local: &PauliString,
    parent: &PauliString,
    outcome: &OutcomeString,
) -> Result<Option<i32>, PauliError> {
    let n = parent.n_qubits();
    if local.n_qubits() != n {
        return Err(PauliError::LengthMismatch { expected: n, got: local.n_qubits() });
    }
    if outcome.n_qubits() != n {
        return Err(PauliError::LengthMismatch { expected: n, got: outcome.n_qubits() });
    }
    if !local.is_restriction_of(parent) {
        return Ok(None);
    }
    Ok(Some(parity(outcome.index() & local.support_mask())))
}

/// Sparse Pauli expansion `ρ = 2^-N Σ π_P P`.
#[derive(Clone, Debug, PartialEq)]
pub struct PauliExpansion {
    n_qubits: usize,
    coefficients: BTreeMap<PauliString, f64>,
}

impl PauliExpansion {
    /// Creates an expansion holding only the unit-trace identity term.
    pub fn new(n_qubits: usize) -> Self {
        let mut coefficients = BTreeMap::new();
        coefficients.insert(PauliString::identity(n_qubits), 1.0);
        Self { n_qubits, coefficients }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    /// Sets `π_P`. The identity coefficient is pinned to 1.
    pub fn set(&mut self, p: PauliString, value: f64) -> Result<(), PauliError> {
        if p.n_qubits() != self.n_qubits {
            return Err(PauliError::LengthMismatch { expected: self.n_qubits, got: p.n_qubits() });
        }
        if p.weight() == 0 {
            return Ok(());
        }
        self.coefficients.insert(p, value);
        Ok(())
    }

    pub fn get(&self, p: &PauliString) -> f64 {
        self.coefficients.get(p).copied().unwrap_or(0.0)
    }

    pub fn coefficients(&self) -> &BTreeMap<PauliString, f64> {
        &self.coefficients
    }

    /// Extracts `π_P = tr(Pρ)` for every one of the 4^N strings.
    pub fn from_density(rho: &DMatrix<C64>) -> Result<Self, PauliError> {
        let dim = rho.nrows();
        let n = dim.trailing_zeros() as usize;
        if n > MAX_DENSE_QUBITS {
            return Err(PauliError::TooLarge { n, max: MAX_DENSE_QUBITS });
        }
        let mut exp = Self::new(n);
        for p in all_pauli_strings(n) {
            if p.weight() == 0 {
                continue;
            }
            let mut acc = C64::new(0.0, 0.0);
            for col in 0..dim {
                let (row, phase) = p.apply_to_basis(col);
                // tr(Pρ) = Σ_col ⟨col|Pρ... = Σ_col Σ_row P[row,col] ρ[col,row]
                acc += phase * rho[(col, row)];
            }
            if acc.re.abs() > 0.0 {
                exp.coefficients.insert(p, acc.re);
            }
        }
        Ok(exp)
    }
}

/// Every string over {I,X,Y,Z}^n in lexicographic order.
pub fn all_pauli_strings(n: usize) -> impl Iterator<Item = PauliString> {
    const L: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];
    (0..4usize.pow(n as u32)).map(move |mut idx| {
        let mut letters = vec![Pauli::I; n];
        for q in (0..n).rev() {
            letters[q] = L[idx % 4];
            idx /= 4;
        }
        PauliString { letters }
    })
}

pub fn expansion_to_dense(exp: &PauliExpansion) -> Result<DMatrix<C64>, PauliError> {
    let n = exp.n_qubits;
    if n > MAX_DENSE_QUBITS {
        return Err(PauliError::TooLarge { n, max: MAX_DENSE_QUBITS });
    }
    let dim = 1usize << n;
    let scale = 1.0 / dim as f64;
    let mut rho = DMatrix::zeros(dim, dim);
    for (p, &coef) in &exp.coefficients {
        if coef == 0.0 {
            continue;
        }
        for col in 0..dim {
            let (row, phase) = p.apply_to_basis(col);
            rho[(row, col)] += phase * (coef * scale);
        }
    }
    Ok(rho)
}
