//! Projective measurement sampling, readout noise and mitigation, and the
//! marginal estimator for local Pauli expectations.

use std::collections::BTreeMap;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};
use thiserror::Error;

use crate::pauli::{OutcomeString, PauliError, PauliString};
use crate::simstate::{self, DenseState, SimError};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("total shot budget must be positive")]
    NoShots,
    #[error("no observables to measure")]
    EmptyPlan,
    #[error("no records to aggregate")]
    NoRecords,
    #[error("outcome {outcome} has {got} bits, observable has {expected}")]
    OutcomeLength { outcome: String, expected: usize, got: usize },
    #[error("negative or non-finite count {0}")]
    BadCount(f64),
    #[error("response matrix for qubit {qubit} is not column-stochastic")]
    NotStochastic { qubit: usize },
    #[error("readout model covers {model} qubits, record has {record}")]
    ModelSize { model: usize, record: usize },
    #[error("record has no observed outcomes")]
    EmptySupport,
    #[error("local observable {0} has no contributing shots")]
    ZeroShots(String),
    #[error("malformed shot record: {0}")]
    Format(String),
    #[error(transparent)]
    Pauli(#[from] PauliError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Outcome counts for one measured observable. Counts are real so that
/// mitigated records and exact-probability pseudo-records share the type.
#[derive(Clone, Debug, PartialEq)]
pub struct ShotRecord {
    pub observable: PauliString,
    counts: BTreeMap<u64, f64>,
}

impl ShotRecord {
    pub fn new(observable: PauliString, counts: BTreeMap<u64, f64>) -> Result<Self, SamplerError> {
        let n = observable.n_qubits();
        for (&b, &c) in &counts {
            if !(c.is_finite() && c >= 0.0) {
                return Err(SamplerError::BadCount(c));
            }
            if n < 64 && b >> n != 0 {
                return Err(SamplerError::OutcomeLength {
                    outcome: format!("{b:b}"),
                    expected: n,
                    got: 64 - b.leading_zeros() as usize,
                });
            }
        }
        Ok(Self { observable, counts })
    }

    /// Outcome index → weight; index bit `n-1-q` is qubit `q`.
    pub fn counts(&self) -> &BTreeMap<u64, f64> {
        &self.counts
    }

    pub fn shots(&self) -> f64 {
        self.counts.values().sum()
    }

    pub fn n_qubits(&self) -> usize {
        self.observable.n_qubits()
    }

    /// `{"obs": "...", "counts": {"0101": n}}`; integral weights are written
    /// as integers.
    pub fn to_json_line(&self) -> String {
        let n = self.n_qubits();
        let mut counts = Map::new();
        for (&b, &c) in &self.counts {
            let value = if c.fract() == 0.0 && c < 9.0e15 {
                Value::Number(Number::from(c as u64))
            } else {
                Number::from_f64(c).map(Value::Number).unwrap_or(Value::Null)
            };
            counts.insert(OutcomeString::from_index(b, n).to_string(), value);
        }
        let mut obj = Map::new();
        obj.insert("obs".into(), Value::String(self.observable.to_string()));
        obj.insert("counts".into(), Value::Object(counts));
        Value::Object(obj).to_string()
    }

    pub fn from_json_line(line: &str) -> Result<Self, SamplerError> {
        let value: Value = serde_json::from_str(line).map_err(|e| SamplerError::Format(e.to_string()))?;
        let obs = value
            .get("obs")
            .and_then(Value::as_str)
            .ok_or_else(|| SamplerError::Format("missing \"obs\"".into()))?;
        let observable: PauliString = obs.parse()?;
        let raw = value
            .get("counts")
            .and_then(Value::as_object)
            .ok_or_else(|| SamplerError::Format("missing \"counts\"".into()))?;
        let mut counts = BTreeMap::new();
        for (key, c) in raw {
            let outcome = OutcomeString::parse(key)?;
            if outcome.n_qubits() != observable.n_qubits() {
                return Err(SamplerError::OutcomeLength {
                    outcome: key.clone(),
                    expected: observable.n_qubits(),
                    got: outcome.n_qubits(),
                });
            }
            let c = c.as_f64().ok_or_else(|| SamplerError::Format(format!("count for {key} is not a number")))?;
            *counts.entry(outcome.index()).or_insert(0.0) += c;
        }
        Self::new(observable, counts)
    }
}

pub fn write_records(records: &[ShotRecord]) -> String {
    records.iter().map(|r| r.to_json_line() + "\n").collect()
}

pub fn read_records(text: &str) -> Result<Vec<ShotRecord>, SamplerError> {
    text.lines().filter(|l| !l.trim().is_empty()).map(ShotRecord::from_json_line).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    /// Every shot picks an observable uniformly at random.
    #[default]
    Random,
    /// `⌊M/L⌋` shots each, the remainder going to the first observables.
    RoundRobin,
}

impl std::str::FromStr for Allocation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(Allocation::Random),
            "round_robin" | "round-robin" => Ok(Allocation::RoundRobin),
            other => Err(format!("unknown allocation {other:?}")),
        }
    }
}

/// Per-observable shot numbers summing to `total`.
pub fn allocate(n_obs: usize, total: u64, allocation: Allocation, seed: u64) -> Vec<u64> {
    match allocation {
        Allocation::RoundRobin => {
            let base = total / n_obs as u64;
            let extra = (total % n_obs as u64) as usize;
            (0..n_obs).map(|i| base + u64::from(i < extra)).collect()
        }
        Allocation::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u64::MAX);
            multinomial(&mut rng, total, &vec![1.0 / n_obs as f64; n_obs])
        }
    }
}

/// Multinomial draw by sequential conditional binomials.
pub fn multinomial(rng: &mut impl Rng, trials: u64, probs: &[f64]) -> Vec<u64> {
    let mut out = vec![0u64; probs.len()];
    let mut left = trials;
    let mut mass: f64 = probs.iter().map(|p| p.max(0.0)).sum();
    for (i, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        let p = p.max(0.0);
        if i + 1 == probs.len() {
            out[i] = left;
            break;
        }
        let frac = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let c = Binomial::new(left, frac).expect("probability clamped").sample(rng);
        out[i] = c;
        left -= c;
        mass -= p;
    }
    out
}

fn counts_from_draw(draw: Vec<u64>) -> BTreeMap<u64, f64> {
    draw.into_iter().enumerate().filter(|&(_, c)| c > 0).map(|(b, c)| (b as u64, c as f64)).collect()
}

/// Measures `total_shots` projective shots spread over `observables`.
///
/// Observable `j` draws its outcomes from its own RNG stream `(seed, j)`, so
/// results do not depend on thread scheduling. Observables that receive no
/// shots produce no record.
pub fn sample(
    state: &DenseState,
    observables: &[PauliString],
    total_shots: u64,
    allocation: Allocation,
    seed: u64,
) -> Result<Vec<ShotRecord>, SamplerError> {
    if total_shots == 0 {
        return Err(SamplerError::NoShots);
    }
    if observables.is_empty() {
        return Err(SamplerError::EmptyPlan);
    }
    let shots = allocate(observables.len(), total_shots, allocation, seed);
    let records: Result<Vec<Option<ShotRecord>>, SamplerError> = observables
        .par_iter()
        .zip(shots.par_iter())
        .enumerate()
        .map(|(j, (obs, &m))| {
            if m == 0 {
                return Ok(None);
            }
            let probs = simstate::measurement_distribution(state, obs)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let counts = counts_from_draw(multinomial(&mut rng, m, &probs));
            Ok(Some(ShotRecord::new(obs.clone(), counts)?))
        })
        .collect();
    Ok(records?.into_iter().flatten().collect())
}

/// Records carrying the exact Born weights `M · p(b)` instead of samples.
pub fn exact_records(state: &DenseState, observables: &[PauliString], shots_each: f64) -> Result<Vec<ShotRecord>, SamplerError> {
    observables
        .par_iter()
        .map(|obs| {
            let probs = simstate::measurement_distribution(state, obs)?;
            let counts = probs
                .into_iter()
                .enumerate()
                .filter(|&(_, p)| p > 0.0)
                .map(|(b, p)| (b as u64, p * shots_each))
                .collect();
            ShotRecord::new(obs.clone(), counts)
        })
        .collect()
}

/// Tensor-product readout response. `matrices[q][r][t]` is the probability
/// of reading `r` when qubit `q` is in `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutModel {
    matrices: Vec<[[f64; 2]; 2]>,
}

impl ReadoutModel {
    pub fn new(matrices: Vec<[[f64; 2]; 2]>) -> Result<Self, SamplerError> {
        for (q, m) in matrices.iter().enumerate() {
            let ok = (0..2).all(|t| {
                (0..2).all(|r| (0.0..=1.0).contains(&m[r][t])) && (m[0][t] + m[1][t] - 1.0).abs() < 1e-12
            });
            if !ok {
                return Err(SamplerError::NotStochastic { qubit: q });
            }
        }
        Ok(Self { matrices })
    }

    pub fn identity(n: usize) -> Self {
        Self { matrices: vec![[[1.0, 0.0], [0.0, 1.0]]; n] }
    }

    /// `p01[q]` = P(read 1 | 0), `p10[q]` = P(read 0 | 1).
    pub fn from_flips(p01: &[f64], p10: &[f64]) -> Result<Self, SamplerError> {
        Self::new(p01.iter().zip(p10).map(|(&a, &b)| [[1.0 - a, b], [a, 1.0 - b]]).collect())
    }

    pub fn n_qubits(&self) -> usize {
        self.matrices.len()
    }

    pub fn matrices(&self) -> &[[[f64; 2]; 2]] {
        &self.matrices
    }

    /// `E[read][truth]` for whole outcome indices.
    pub fn response(&self, read: u64, truth: u64) -> f64 {
        let n = self.matrices.len();
        self.matrices
            .iter()
            .enumerate()
            .map(|(q, m)| {
                let shift = n - 1 - q;
                m[((read >> shift) & 1) as usize][((truth >> shift) & 1) as usize]
            })
            .product()
    }
}

/// Flips every recorded bit independently according to the model.
pub fn apply_readout_noise(record: &ShotRecord, model: &ReadoutModel, seed: u64) -> Result<ShotRecord, SamplerError> {
    let n = record.n_qubits();
    if model.n_qubits() != n {
        return Err(SamplerError::ModelSize { model: model.n_qubits(), record: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: BTreeMap<u64, f64> = BTreeMap::new();
    for (&truth, &c) in record.counts() {
        if c.fract() != 0.0 {
            return Err(SamplerError::BadCount(c));
        }
        for _ in 0..c as u64 {
            let mut read = 0u64;
            for (q, m) in model.matrices.iter().enumerate() {
                let shift = n - 1 - q;
                let t = ((truth >> shift) & 1) as usize;
                let one = rng.random::<f64>() < m[1][t];
                read |= u64::from(one) << shift;
            }
            *out.entry(read).or_insert(0.0) += 1.0;
        }
    }
    ShotRecord::new(record.observable.clone(), out)
}

/// Euclidean projection onto `{x ≥ 0, Σx = 1}`.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Inverts the readout response on the observed outcomes only.
///
/// The response is restricted to the observed bit strings, its columns are
/// renormalised, the linear system is solved (least squares if singular) and
/// the solution is projected onto the probability simplex. The returned
/// record keeps the original shot total.
pub fn mitigate(record: &ShotRecord, model: &ReadoutModel) -> Result<ShotRecord, SamplerError> {
    let n = record.n_qubits();
    if model.n_qubits() != n {
        return Err(SamplerError::ModelSize { model: model.n_qubits(), record: n });
    }
    let support: Vec<u64> = record.counts().iter().filter(|(_, &c)| c > 0.0).map(|(&b, _)| b).collect();
    if support.is_empty() {
        return Err(SamplerError::EmptySupport);
    }
    let total = record.shots();
    let s = support.len();
    let mut e = DMatrix::from_fn(s, s, |r, c| model.response(support[r], support[c]));
    for c in 0..s {
        let col_sum: f64 = e.column(c).sum();
        if col_sum > 0.0 {
            e.column_mut(c).unscale_mut(col_sum);
        }
    }
    let noisy = DVector::from_iterator(s, support.iter().map(|b| record.counts()[b] / total));
    let solved = match e.clone().lu().solve(&noisy) {
        Some(x) if x.iter().all(|v| v.is_finite()) => x,
        _ => e.svd(true, true).solve(&noisy, 1e-12).map_err(|e| SamplerError::Format(e.to_string()))?,
    };
    let projected = project_to_simplex(solved.as_slice());
    let counts = support.iter().zip(projected).filter(|&(_, p)| p > 0.0).map(|(&b, p)| (b, p * total)).collect();
    ShotRecord::new(record.observable.clone(), counts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Total weight of the records that contributed.
    pub shots: f64,
    pub stderr: f64,
}

/// Local Pauli expectations estimated from measured records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExpectationTable {
    pub entries: BTreeMap<PauliString, Estimate>,
}

impl ExpectationTable {
    pub fn get(&self, p: &PauliString) -> Option<&Estimate> {
        self.entries.get(p)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries whose observable has exactly `weight` non-identity letters.
    pub fn of_weight(&self, weight: usize) -> impl Iterator<Item = (&PauliString, &Estimate)> {
        self.entries.iter().filter(move |(p, _)| p.weight() == weight)
    }
}

/// Binomial standard error `√((1 − η²)/M)`.
pub fn binomial_stderr(eta: f64, shots: f64) -> f64 {
    if shots <= 0.0 {
        return f64::INFINITY;
    }
    ((1.0 - eta * eta).max(0.0) / shots).sqrt()
}

/// Estimates every local observable of weight `1..=k` that is a restriction
/// of some record's observable, pooling all compatible records:
/// `η̂ = Σ_records Σ_b c_b (−1)^{|b ∧ S|} / Σ_records M`.
pub fn aggregate(records: &[ShotRecord], k: usize) -> Result<ExpectationTable, SamplerError> {
    if records.is_empty() {
        return Err(SamplerError::NoRecords);
    }
    let mut acc: BTreeMap<PauliString, (f64, f64)> = BTreeMap::new();
    for rec in records {
        let n = rec.n_qubits();
        let support = rec.observable.support();
        let shots = rec.shots();
        for w in 1..=k.min(support.len()) {
            for subset in support.iter().copied().combinations(w) {
                let mask = subset.iter().fold(0u64, |m, &q| m | (1u64 << (n - 1 - q)));
                let signed: f64 = rec
                    .counts()
                    .iter()
                    .map(|(&b, &c)| if (b & mask).count_ones() % 2 == 0 { c } else { -c })
                    .sum();
                let entry = acc.entry(rec.observable.restrict(&subset)).or_insert((0.0, 0.0));
                entry.0 += signed;
                entry.1 += shots;
            }
        }
    }
    let mut entries = BTreeMap::new();
    for (p, (signed, shots)) in acc {
        if shots <= 0.0 {
            return Err(SamplerError::ZeroShots(p.to_string()));
        }
        let value = (signed / shots).clamp(-1.0, 1.0);
        entries.insert(p, Estimate { value, shots, stderr: binomial_stderr(value, shots) });
    }
    Ok(ExpectationTable { entries })
}

/// Replaces the binomial errors with the spread of `resamples` bootstrap
/// replicates, each record redrawn multinomially from its own frequencies.
pub fn bootstrap_stderr(records: &[ShotRecord], k: usize, resamples: usize, seed: u64) -> Result<ExpectationTable, SamplerError> {
    let mut table = aggregate(records, k)?;
    let mut sums: BTreeMap<PauliString, (f64, f64)> = BTreeMap::new();
    for r in 0..resamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let replicate: Vec<ShotRecord> = records
            .iter()
            .map(|rec| {
                let outcomes: Vec<u64> = rec.counts().keys().copied().collect();
                let total = rec.shots();
                let probs: Vec<f64> = rec.counts().values().map(|c| c / total).collect();
                let draw = multinomial(&mut rng, total.round() as u64, &probs);
                let counts = outcomes.into_iter().zip(draw).filter(|&(_, c)| c > 0).map(|(b, c)| (b, c as f64)).collect();
                ShotRecord { observable: rec.observable.clone(), counts }
            })
            .collect();
        let est = aggregate(&replicate, k)?;
        for (p, e) in est.entries {
            let s = sums.entry(p).or_insert((0.0, 0.0));
            s.0 += e.value;
            s.1 += e.value * e.value;
        }
    }
    let r = resamples as f64;
    for (p, e) in table.entries.iter_mut() {
        let (s1, s2) = sums.get(p).copied().unwrap_or((0.0, 0.0));
        let mean = s1 / r;
        e.stderr = if resamples > 1 { ((s2 / r - mean * mean).max(0.0) * r / (r - 1.0)).sqrt() } else { 0.0 };
    }
    Ok(table)
}

/// Chi-square statistic and upper-tail degrees of freedom of observed counts
/// against expected probabilities (bins with zero expectation must be empty).
pub fn chi_square(counts: &BTreeMap<u64, f64>, probs: &[f64]) -> (f64, usize) {
    let total: f64 = counts.values().sum();
    let mut stat = 0.0;
    let mut bins = 0usize;
    for (b, &p) in probs.iter().enumerate() {
        let observed = counts.get(&(b as u64)).copied().unwrap_or(0.0);
        if p <= 0.0 {
            if observed > 0.0 {
                return (f64::INFINITY, 0);
            }
            continue;
        }
        let expected = p * total;
        stat += (observed - expected).powi(2) / expected;
        bins += 1;
    }
    (stat, bins.saturating_sub(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::parse_pauli;
    use crate::simstate::w_state;
    use nalgebra::DVector;
    use num_complex::Complex64 as C64;

    fn plus() -> DenseState {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        DenseState::Pure(DVector::from_vec(vec![C64::new(h, 0.0), C64::new(h, 0.0)]))
    }

    #[test]
    fn eigenstate_gives_single_outcome() {
        let recs = sample(&DenseState::basis(1, 0), &[parse_pauli("Z").unwrap()], 100, Allocation::Random, 1).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].counts().get(&0), Some(&100.0));
    }

    #[test]
    fn plus_state_is_fair_coin() {
        let m = 100_000u64;
        let recs = sample(&plus(), &[parse_pauli("Z").unwrap()], m, Allocation::Random, 7).unwrap();
        let zeros = recs[0].counts().get(&0).copied().unwrap_or(0.0);
        let sigma = (m as f64 * 0.25).sqrt();
        assert!((zeros - m as f64 / 2.0).abs() < 5.0 * sigma);
        let x = sample(&plus(), &[parse_pauli("X").unwrap()], 50, Allocation::Random, 7).unwrap();
        assert_eq!(x[0].counts().get(&0), Some(&50.0));
    }

    #[test]
    fn allocation_arithmetic() {
        let rr = allocate(21, 50_000, Allocation::RoundRobin, 0);
        assert_eq!(rr.iter().sum::<u64>(), 50_000);
        assert!(rr.iter().all(|&m| m == 2380 || m == 2381));
        assert_eq!(rr.iter().filter(|&&m| m == 2381).count(), 50_000 % 21);
        let rand = allocate(21, 50_000, Allocation::Random, 5);
        assert_eq!(rand.iter().sum::<u64>(), 50_000);
        assert_eq!(rand, allocate(21, 50_000, Allocation::Random, 5));
    }

    #[test]
    fn sampling_is_deterministic_and_budgeted() {
        let obs: Vec<_> = ["XXX", "ZZZ", "XYZ"].iter().map(|s| parse_pauli(s).unwrap()).collect();
        let a = sample(&w_state(3), &obs, 999, Allocation::Random, 11).unwrap();
        let b = sample(&w_state(3), &obs, 999, Allocation::Random, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().map(ShotRecord::shots).sum::<f64>(), 999.0);
    }

    #[test]
    fn json_round_trip() {
        let rec = ShotRecord::new(parse_pauli("XZ").unwrap(), BTreeMap::from([(0b01, 3.0), (0b10, 1.5)])).unwrap();
        let line = rec.to_json_line();
        assert!(line.contains("\"01\":3") && line.contains("\"obs\":\"XZ\""));
        assert_eq!(ShotRecord::from_json_line(&line).unwrap(), rec);
        assert!(ShotRecord::from_json_line(r#"{"obs":"XZ","counts":{"011":1}}"#).is_err());
        assert!(ShotRecord::from_json_line(r#"{"obs":"XZ","counts":{"01":-1}}"#).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let zzz = ShotRecord::new(parse_pauli("ZZZ").unwrap(), BTreeMap::from([(0, 50.0)])).unwrap();
        let t = aggregate(&[zzz], 2).unwrap();
        assert_eq!(t.get(&parse_pauli("ZZI").unwrap()).unwrap().value, 1.0);
        assert_eq!(t.len(), 6);

        let uniform = ShotRecord::new(parse_pauli("XYZ").unwrap(), (0..8).map(|b| (b, 1000.0)).collect()).unwrap();
        let t = aggregate(&[uniform], 3).unwrap();
        assert!(t.entries.values().all(|e| e.value == 0.0));

        let obs: Vec<_> = ["XXX", "YYY", "ZZZ", "XYZ", "ZXY"].iter().map(|s| parse_pauli(s).unwrap()).collect();
        let w3 = w_state(3);
        let t = aggregate(&exact_records(&w3, &obs, 1.0).unwrap(), 3).unwrap();
        for (p, e) in &t.entries {
            assert!((e.value - simstate::exact_expectation(&w3, p).unwrap()).abs() < 1e-12, "{p}");
        }
        assert!(aggregate(&[], 2).is_err());
    }

    #[test]
    fn zero_shot_local_is_reported() {
        let empty = ShotRecord::new(parse_pauli("XX").unwrap(), BTreeMap::new()).unwrap();
        assert!(matches!(aggregate(&[empty], 2), Err(SamplerError::ZeroShots(_))));
    }

    #[test]
    fn readout_noise_rate() {
        let model = ReadoutModel::from_flips(&[0.05], &[0.0]).unwrap();
        let rec = ShotRecord::new(parse_pauli("Z").unwrap(), BTreeMap::from([(0, 100_000.0)])).unwrap();
        let noisy = apply_readout_noise(&rec, &model, 3).unwrap();
        let ones = noisy.counts().get(&1).copied().unwrap_or(0.0);
        let sigma = (100_000.0f64 * 0.05 * 0.95).sqrt();
        assert!((ones - 5000.0).abs() < 5.0 * sigma);
        assert_eq!(apply_readout_noise(&rec, &ReadoutModel::identity(1), 3).unwrap(), rec);
        assert!(ReadoutModel::new(vec![[[0.9, 0.0], [0.2, 1.0]]]).is_err());
    }

    #[test]
    fn mitigation_examples() {
        let rec = ShotRecord::new(parse_pauli("ZZ").unwrap(), BTreeMap::from([(0, 70.0), (3, 30.0)])).unwrap();
        assert_eq!(mitigate(&rec, &ReadoutModel::identity(2)).unwrap(), rec);

        let m = 100_000.0;
        let model = ReadoutModel::from_flips(&[0.05], &[0.05]).unwrap();
        let clean = ShotRecord::new(parse_pauli("Z").unwrap(), BTreeMap::from([(0, m)])).unwrap();
        // Analytic inverse of [[0.95, 0.05], [0.05, 0.95]] applied to the
        // binomial noise has standard deviation √(0.05·0.95/M)/0.9.
        let sigma = (0.05 * 0.95 / m).sqrt() / 0.9;
        let mut within = 0;
        for seed in 0..20 {
            let noisy = apply_readout_noise(&clean, &model, seed).unwrap();
            let fixed = mitigate(&noisy, &model).unwrap();
            let p0 = fixed.counts().get(&0).copied().unwrap_or(0.0) / m;
            within += usize::from((p0 - 1.0).abs() <= 2.0 * sigma);
            assert!((fixed.shots() - m).abs() < 1e-6);
            assert!(fixed.counts().values().all(|&c| c >= 0.0));
        }
        // 2σ coverage is 95%; 16 of 20 fails with probability below 2%.
        assert!(within >= 16, "{within}");
    }

    #[test]
    fn simplex_projection() {
        let p = project_to_simplex(&[1.2, -0.1, -0.1]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15 && p.iter().all(|&x| x >= 0.0));
        assert_eq!(project_to_simplex(&[0.25, 0.75]), vec![0.25, 0.75]);
    }

    #[test]
    fn bootstrap_close_to_binomial() {
        let recs = sample(&w_state(3), &[parse_pauli("XXX").unwrap()], 20_000, Allocation::Random, 2).unwrap();
        let t = bootstrap_stderr(&recs, 1, 200, 4).unwrap();
        for e in t.entries.values() {
            let b = binomial_stderr(e.value, e.shots);
            assert!(e.stderr > 0.5 * b && e.stderr < 1.5 * b);
        }
    }
}
