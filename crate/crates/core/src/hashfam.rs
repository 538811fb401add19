//! Perfect hash families and the measurement schedules built from them.
//!
//! An `(n, k)` family is a list of colourings of `n` qubits with `k` colours
//! such that every `k`-subset of qubits receives `k` distinct colours in at
//! least one row. Each row turns into parallel Pauli observables by giving
//! every colour class one basis letter.

use std::cell::Cell;
use std::collections::BTreeSet;
use std::fmt;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pauli::{Pauli, PauliString};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HashError {
    #[error("need at least {min} qubits, got {n}")]
    TooFewQubits { n: usize, min: usize },
    #[error("unsupported size (n={n}, k={k}): need 2 <= k <= 4 and k <= n <= 12")]
    SizeBounds { n: usize, k: usize },
    #[error("row {row} has {got} entries, expected {expected}")]
    RaggedRow { row: usize, expected: usize, got: usize },
    #[error("entry {value} at row {row}, column {col} is outside 0..{k}")]
    EntryOutOfRange { row: usize, col: usize, value: u8, k: usize },
    #[error("family is not perfect: subset {0:?} is never separated")]
    NotPerfect(Vec<usize>),
    #[error("invalid family text at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("FQST on {n} qubits exceeds the budget guard of {max} qubits")]
    BudgetGuard { n: usize, max: usize },
}

/// `l x n` matrix over `0..k`; row `i` is the hash function `h_i`.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashFamily {
    n: usize,
    k: usize,
    rows: Vec<Vec<u8>>,
}

impl HashFamily {
    pub fn new(n: usize, k: usize, rows: Vec<Vec<u8>>) -> Result<Self, HashError> {
        if k < 2 || n < k {
            return Err(HashError::SizeBounds { n, k });
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(HashError::RaggedRow { row: r, expected: n, got: row.len() });
            }
            if let Some((c, &v)) = row.iter().enumerate().find(|(_, &v)| v as usize >= k) {
                return Err(HashError::EntryOutOfRange { row: r, col: c, value: v, k });
            }
        }
        Ok(Self { n, k, rows })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Reads one row per line, digits without separators.
    pub fn parse(text: &str, k: usize) -> Result<Self, HashError> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .chars()
                .map(|c| {
                    c.to_digit(10).map(|d| d as u8).ok_or_else(|| HashError::Parse {
                        line: i + 1,
                        reason: format!("unexpected character {c:?}"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        let n = rows.first().map(Vec::len).ok_or(HashError::Parse { line: 0, reason: "no rows".into() })?;
        Self::new(n, k, rows)
    }
}

impl fmt::Display for HashFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.rows {
            for v in row {
                write!(f, "{v}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl fmt::Debug for HashFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HashFamily(n={}, k={}, rows={:?})", self.n, self.k, self.rows)
    }
}

/// The printed `(9, 3)` family used for the 9-qubit experiments.
pub fn published_9_3_family() -> HashFamily {
    let rows = [
        [0, 1, 0, 2, 0, 2, 2, 1, 1],
        [0, 1, 1, 0, 2, 2, 1, 2, 0],
        [2, 0, 1, 0, 0, 1, 2, 2, 1],
        [2, 2, 0, 0, 1, 2, 1, 0, 1],
    ];
    HashFamily::new(9, 3, rows.iter().map(|r| r.to_vec()).collect()).expect("static family")
}

fn ceil_log2(n: usize) -> usize {
    let mut q = 0;
    while (1usize << q) < n {
        q += 1;
    }
    q
}

/// `k = 2` family from the binary digits of the 0-based qubit index.
///
/// Row `i` holds digit `i` of the `⌈log₂ n⌉`-bit expansion, most significant
/// digit first.
pub fn binary_expansion_family(n: usize) -> Result<HashFamily, HashError> {
    if n < 2 {
        return Err(HashError::TooFewQubits { n, min: 2 });
    }
    let q = ceil_log2(n);
    let rows = (0..q)
        .map(|i| (0..n).map(|j| ((j >> (q - 1 - i)) & 1) as u8).collect())
        .collect();
    HashFamily::new(n, 2, rows)
}

fn separates(row: &[u8], subset: &[usize]) -> bool {
    let mut seen = 0u32;
    for &q in subset {
        let bit = 1u32 << row[q];
        if seen & bit != 0 {
            return false;
        }
        seen |= bit;
    }
    true
}

/// `Ok(())` when every `k`-subset is separated by some row, otherwise the
/// lexicographically first unseparated subset.
pub fn is_perfect(fam: &HashFamily) -> Result<(), Vec<usize>> {
    match (0..fam.n)
        .combinations(fam.k)
        .find(|s| !fam.rows.iter().any(|row| separates(row, s)))
    {
        Some(witness) => Err(witness),
        None => Ok(()),
    }
}

#[derive(Clone, Debug)]
struct BitSet {
    words: Vec<u64>,
}

impl BitSet {
    fn zeros(len: usize) -> Self {
        Self { words: vec![0; len.div_ceil(64)] }
    }

    fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    fn get(&self, i: usize) -> bool {
        self.words[i / 64] & (1 << (i % 64)) != 0
    }

    fn count_and(&self, other: &BitSet) -> u32 {
        self.words.iter().zip(&other.words).map(|(a, b)| (a & b).count_ones()).sum()
    }

    fn subtract(&mut self, other: &BitSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= !b;
        }
    }

    fn for_each_and(&self, other: &BitSet, mut f: impl FnMut(usize)) {
        for (i, (a, b)) in self.words.iter().zip(&other.words).enumerate() {
            let mut w = a & b;
            while w != 0 {
                f(i * 64 + w.trailing_zeros() as usize);
                w &= w - 1;
            }
        }
    }

    fn count(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    fn first(&self) -> Option<usize> {
        self.words
            .iter()
            .enumerate()
            .find(|(_, w)| **w != 0)
            .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
    }
}

/// Set-cover formulation: candidate hash rows against all `k`-subsets.
///
/// `relation[f]` is row `f` of the relation matrix Λ as a bit set over
/// targets: bit `s` is set iff candidate `f` is injective on subset `s`.
pub struct CoverageProblem {
    pub n: usize,
    pub k: usize,
    pub candidates: Vec<Vec<u8>>,
    pub targets: Vec<Vec<usize>>,
    relation: Vec<BitSet>,
}

/// All surjective maps `0..n -> 0..k` in first-occurrence canonical form
/// (restricted growth strings), in lexicographic order. Colour-permuted
/// duplicates and non-surjective rows never appear.
pub fn canonical_candidates(n: usize, k: usize) -> Vec<Vec<u8>> {
    fn rec(row: &mut Vec<u8>, used: u8, n: usize, k: u8, out: &mut Vec<Vec<u8>>) {
        let pos = row.len();
        if pos == n {
            if used == k {
                out.push(row.clone());
            }
            return;
        }
        // Remaining positions must still be able to introduce the unused colours.
        if (k - used) as usize > n - pos {
            return;
        }
        let limit = if used < k { used + 1 } else { k };
        for v in 0..limit {
            row.push(v);
            rec(row, used.max(v + 1), n, k, out);
            row.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 && k > 0 && k <= n {
        rec(&mut Vec::with_capacity(n), 0, n, k as u8, &mut out);
    }
    out
}

impl CoverageProblem {
    pub fn build(n: usize, k: usize) -> Self {
        let candidates = canonical_candidates(n, k);
        let targets: Vec<Vec<usize>> = (0..n).combinations(k).collect();
        let relation = candidates
            .par_iter()
            .map(|row| {
                let mut bits = BitSet::zeros(targets.len());
                for (s, subset) in targets.iter().enumerate() {
                    if separates(row, subset) {
                        bits.set(s);
                    }
                }
                bits
            })
            .collect();
        Self { n, k, candidates, targets, relation }
    }

    /// `Λ[f][s]`.
    pub fn relation(&self, candidate: usize, target: usize) -> bool {
        self.relation[candidate].get(target)
    }

    /// True iff `Λᵀ x ≥ 1` for the selection given by candidate indices.
    pub fn is_feasible(&self, selection: &[usize]) -> bool {
        let mut uncovered = self.full_targets();
        for &c in selection {
            uncovered.subtract(&self.relation[c]);
        }
        uncovered.count() == 0
    }

    fn full_targets(&self) -> BitSet {
        let mut all = BitSet::zeros(self.targets.len());
        for s in 0..self.targets.len() {
            all.set(s);
        }
        all
    }

    /// Greedy max-coverage selection; ties go to the lexicographically
    /// smallest candidate.
    pub fn greedy(&self) -> Vec<usize> {
        let mut uncovered = self.full_targets();
        let mut chosen = Vec::new();
        while uncovered.count() > 0 {
            let (best, gain) = self
                .relation
                .par_iter()
                .enumerate()
                .map(|(i, r)| (i, r.count_and(&uncovered)))
                .reduce(|| (usize::MAX, 0), |a, b| {
                    if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                        b
                    } else {
                        a
                    }
                });
            if gain == 0 {
                break;
            }
            uncovered.subtract(&self.relation[best]);
            chosen.push(best);
        }
        chosen
    }

    /// Minimum-cardinality cover by depth-first branch and bound.
    ///
    /// Branches on the uncovered target with the fewest covering candidates;
    /// prunes with `⌈uncovered / max gain⌉`. Exponential in the worst case,
    /// intended for small instances.
    pub fn branch_and_bound(&self) -> Vec<usize> {
        let mut best = self.greedy();
        let mut current = Vec::new();
        let covering: Vec<Vec<usize>> = (0..self.targets.len())
            .map(|s| (0..self.candidates.len()).filter(|&c| self.relation[c].get(s)).collect())
            .collect();
        self.bb_rec(&self.full_targets(), &covering, &mut current, &mut best);
        best
    }

    fn bb_rec(&self, uncovered: &BitSet, covering: &[Vec<usize>], current: &mut Vec<usize>, best: &mut Vec<usize>) {
        let remaining = uncovered.count() as usize;
        if remaining == 0 {
            if current.len() < best.len() {
                *best = current.clone();
            }
            return;
        }
        if current.len() + 1 >= best.len() {
            return;
        }
        let max_gain = self.relation.iter().map(|r| r.count_and(uncovered)).max().unwrap_or(0) as usize;
        if max_gain == 0 || current.len() + remaining.div_ceil(max_gain) >= best.len() {
            return;
        }
        let mut pivot = uncovered.first().expect("nonempty");
        let mut fewest = usize::MAX;
        for s in 0..self.targets.len() {
            if uncovered.get(s) && covering[s].len() < fewest {
                fewest = covering[s].len();
                pivot = s;
            }
        }
        let mut options: Vec<(usize, u32)> =
            covering[pivot].iter().map(|&c| (c, self.relation[c].count_and(uncovered))).collect();
        options.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        for (c, _) in options {
            let mut next = uncovered.clone();
            next.subtract(&self.relation[c]);
            current.push(c);
            self.bb_rec(&next, covering, current, best);
            current.pop();
            if current.len() + 1 >= best.len() {
                return;
            }
        }
    }

    /// Decides whether `rows` candidates cover every target, returning one
    /// such selection.
    ///
    /// The first row is fixed to one representative per block-size type
    /// (qubit relabelling maps any row onto one of these). Deeper levels
    /// branch on the uncovered target with the fewest admissible coverers;
    /// options already tried at a sibling are forbidden below it. A branch is
    /// cut when the `r` largest remaining gains cannot reach the uncovered
    /// count.
    pub fn cover_with_rows(&self, rows: usize) -> Option<Vec<usize>> {
        match self.decide_rows(rows, &Budget::unlimited()) {
            Decision::Found(sel) => Some(sel),
            _ => None,
        }
    }

    /// [`cover_with_rows`](Self::cover_with_rows) under a node budget.
    pub fn decide_rows(&self, rows: usize, budget: &Budget) -> Decision<Vec<usize>> {
        if rows == 0 {
            return Decision::Infeasible;
        }
        let mut forbidden = BitSet::zeros(self.candidates.len());
        for rep in self.type_representatives() {
            let mut uncovered = self.full_targets();
            uncovered.subtract(&self.relation[rep]);
            let mut current = vec![rep];
            match self.decide_rec(&uncovered, rows - 1, &forbidden, &mut current, budget) {
                Step::Found => return Decision::Found(current),
                Step::Exhausted => return Decision::Exhausted,
                Step::Fail => {}
            }
            forbidden.set(rep);
        }
        Decision::Infeasible
    }

    fn type_representatives(&self) -> Vec<usize> {
        let mut reps = Vec::new();
        // Block sizes in non-increasing order, laid out consecutively.
        fn partitions(left: usize, parts: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if parts == 0 {
                if left == 0 {
                    out.push(cur.clone());
                }
                return;
            }
            for size in (1..=max.min(left)).rev() {
                if size * parts < left {
                    break;
                }
                cur.push(size);
                partitions(left - size, parts - 1, size, cur, out);
                cur.pop();
            }
        }
        let mut shapes = Vec::new();
        partitions(self.n, self.k, self.n, &mut Vec::new(), &mut shapes);
        for shape in shapes {
            let row: Vec<u8> = shape.iter().enumerate().flat_map(|(c, &s)| std::iter::repeat_n(c as u8, s)).collect();
            let idx = self.candidates.binary_search(&row).expect("canonical rows are sorted");
            reps.push(idx);
        }
        reps
    }

    fn decide_rec(
        &self,
        uncovered: &BitSet,
        rows: usize,
        forbidden: &BitSet,
        current: &mut Vec<usize>,
        budget: &Budget,
    ) -> Step {
        let remaining = uncovered.count() as usize;
        if remaining == 0 {
            return Step::Found;
        }
        if rows == 0 {
            return Step::Fail;
        }
        if !budget.tick() {
            return Step::Exhausted;
        }
        let gains: Vec<u32> = self
            .relation
            .par_iter()
            .enumerate()
            .map(|(c, r)| if forbidden.get(c) { 0 } else { r.count_and(uncovered) })
            .collect();
        let mut top: Vec<u32> = gains.iter().copied().filter(|&g| g > 0).collect();
        if top.len() > rows {
            top.select_nth_unstable_by(rows - 1, |a, b| b.cmp(a));
            top.truncate(rows);
        }
        if (top.iter().sum::<u32>() as usize) < remaining {
            return Step::Fail;
        }
        if rows == 1 {
            return match gains.iter().position(|&g| g as usize == remaining) {
                Some(c) => {
                    current.push(c);
                    Step::Found
                }
                None => Step::Fail,
            };
        }
        // Pivot: uncovered target with fewest admissible coverers.
        let mut coverers = vec![0u32; self.targets.len()];
        for (c, r) in self.relation.iter().enumerate() {
            if gains[c] > 0 {
                r.for_each_and(uncovered, |s| coverers[s] += 1);
            }
        }
        let mut pivot = None;
        let mut fewest = u32::MAX;
        for s in 0..self.targets.len() {
            if uncovered.get(s) && coverers[s] < fewest {
                fewest = coverers[s];
                pivot = Some(s);
            }
        }
        if fewest == 0 {
            return Step::Fail;
        }
        let pivot = pivot.expect("nonempty");
        let mut options: Vec<usize> =
            (0..self.candidates.len()).filter(|&c| gains[c] > 0 && self.relation[c].get(pivot)).collect();
        options.sort_by(|&a, &b| gains[b].cmp(&gains[a]).then(a.cmp(&b)));
        let mut local = forbidden.clone();
        for c in options {
            let mut next = uncovered.clone();
            next.subtract(&self.relation[c]);
            current.push(c);
            match self.decide_rec(&next, rows - 1, &local, current, budget) {
                Step::Fail => {}
                other => return other,
            }
            current.pop();
            local.set(c);
        }
        Step::Fail
    }

    pub fn family(&self, selection: &[usize]) -> HashFamily {
        let mut rows: Vec<Vec<u8>> = selection.iter().map(|&c| self.candidates[c].clone()).collect();
        rows.sort();
        HashFamily::new(self.n, self.k, rows).expect("candidates are in range")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMode {
    Greedy,
    Exact,
}

/// Outcome of a budgeted decision search.
#[derive(Clone, Debug, PartialEq)]
pub enum Decision<T> {
    Found(T),
    Infeasible,
    /// The node budget ran out before the search finished.
    Exhausted,
}

enum Step {
    Found,
    Fail,
    Exhausted,
}

/// Search-node allowance shared by one solver run.
pub struct Budget {
    left: Cell<u64>,
}

impl Budget {
    pub fn new(nodes: u64) -> Self {
        Self { left: Cell::new(nodes) }
    }

    pub fn unlimited() -> Self {
        Self::new(u64::MAX)
    }

    /// Nodes not yet spent.
    pub fn remaining(&self) -> u64 {
        self.left.get()
    }

    fn tick(&self) -> bool {
        let left = self.left.get();
        if left == 0 {
            return false;
        }
        self.left.set(left - 1);
        true
    }
}

/// Node budget of the command-line solver.
pub const DEFAULT_NODE_BUDGET: u64 = 1_000_000;

/// Node budget [`plan_pqst`] spends on proving its family minimal.
pub const PLAN_NODE_BUDGET: u64 = 100_000;

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub family: HashFamily,
    /// Largest row count shown infeasible, plus one.
    pub lower_bound: usize,
    /// True when `family.len() == lower_bound`.
    pub proven_minimal: bool,
}

/// Finds a perfect `(n, k)` family.
///
/// Greedy mode runs max-coverage set cover over the canonical candidate rows.
/// Exact mode returns a family with the minimum possible number of rows.
/// Starting from the greedy family it tries ever smaller row counts `r`,
/// first with [`local_search`], then with a complete search that either
/// finds a family or proves `r` infeasible: for `k = 3` it looks for `n`
/// column vectors in `[k]^r` whose every `k`-subset is rainbow in some
/// coordinate, for `k = 4` it runs [`CoverageProblem::decide_rows`].
pub fn solve_cover(n: usize, k: usize, mode: SolveMode) -> Result<HashFamily, HashError> {
    Ok(solve_cover_budgeted(n, k, mode, &Budget::unlimited())?.family)
}

/// [`solve_cover`] with a node budget. If the budget runs out, the smallest
/// family found so far is returned with `proven_minimal == false`.
pub fn solve_cover_budgeted(n: usize, k: usize, mode: SolveMode, budget: &Budget) -> Result<SolveReport, HashError> {
    if !(2..=4).contains(&k) || n < k || n > 12 {
        return Err(HashError::SizeBounds { n, k });
    }
    let mut lower = 1;
    while k.pow(lower as u32) < n {
        lower += 1;
    }
    if k == 2 && mode == SolveMode::Exact {
        // Two colours separate a pair iff the columns differ, so ⌈log₂ n⌉ is optimal.
        let family = binary_expansion_family(n)?;
        return Ok(SolveReport { proven_minimal: family.len() == lower, lower_bound: lower, family });
    }
    let problem = CoverageProblem::build(n, k);
    let mut best = problem.family(&problem.greedy());
    if mode == SolveMode::Exact {
        while best.len() > lower {
            let rows = best.len() - 1;
            if let Some(fam) = local_search(n, k, rows, rows as u64, LOCAL_SEARCH_STEPS) {
                best = fam;
                continue;
            }
            let decision = if k == 3 {
                ColumnSearch::new(n, k, rows).run(budget)
            } else {
                match problem.decide_rows(rows, budget) {
                    Decision::Found(sel) => Decision::Found(problem.family(&sel)),
                    Decision::Infeasible => Decision::Infeasible,
                    Decision::Exhausted => Decision::Exhausted,
                }
            };
            match decision {
                Decision::Found(fam) => best = fam,
                Decision::Infeasible => {
                    lower = rows + 1;
                    break;
                }
                Decision::Exhausted => break,
            }
        }
    }
    Ok(SolveReport { proven_minimal: best.len() == lower, lower_bound: lower, family: best })
}

/// Steps per local-search attempt in exact mode.
pub const LOCAL_SEARCH_STEPS: usize = 200_000;

/// Seeded stochastic local search for a perfect family with `rows` rows.
///
/// Each step picks an uncovered subset and recolours one of its qubits in
/// one row, taking the move that most reduces the uncovered count (a random
/// move with probability 0.1). Returns `None` after `max_steps` steps.
pub fn local_search(n: usize, k: usize, rows: usize, seed: u64, max_steps: usize) -> Option<HashFamily> {
    if rows == 0 || n < k || k < 2 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subsets: Vec<Vec<usize>> = (0..n).combinations(k).collect();
    let mut by_qubit = vec![Vec::new(); n];
    for (s, sub) in subsets.iter().enumerate() {
        for &q in sub {
            by_qubit[q].push(s);
        }
    }
    let mut fam: Vec<Vec<u8>> = (0..rows).map(|_| (0..n).map(|_| rng.random_range(0..k as u8)).collect()).collect();
    let mut rainbow: Vec<Vec<bool>> = fam.iter().map(|row| subsets.iter().map(|sub| separates(row, sub)).collect()).collect();
    let mut cover: Vec<usize> = (0..subsets.len()).map(|s| rainbow.iter().filter(|r| r[s]).count()).collect();
    for _ in 0..max_steps {
        let uncovered: Vec<usize> = (0..subsets.len()).filter(|&s| cover[s] == 0).collect();
        if uncovered.is_empty() {
            return HashFamily::new(n, k, fam).ok();
        }
        let target = &subsets[uncovered[rng.random_range(0..uncovered.len())]];
        let mut moves = Vec::new();
        for i in 0..rows {
            for &q in target {
                for c in 0..k as u8 {
                    if c != fam[i][q] {
                        moves.push((i, q, c));
                    }
                }
            }
        }
        let delta = |fam: &mut Vec<Vec<u8>>, (i, q, c): (usize, usize, u8)| -> i64 {
            let old = fam[i][q];
            fam[i][q] = c;
            let mut d = 0i64;
            for &s in &by_qubit[q] {
                let now = separates(&fam[i], &subsets[s]);
                if rainbow[i][s] && !now && cover[s] == 1 {
                    d += 1;
                } else if !rainbow[i][s] && now && cover[s] == 0 {
                    d -= 1;
                }
            }
            fam[i][q] = old;
            d
        };
        let chosen = if rng.random::<f64>() < 0.1 {
            moves[rng.random_range(0..moves.len())]
        } else {
            let scored: Vec<(i64, (usize, usize, u8))> = moves.iter().map(|&m| (delta(&mut fam, m), m)).collect();
            let best = scored.iter().map(|&(d, _)| d).min().expect("moves exist");
            let ties: Vec<_> = scored.iter().filter(|&&(d, _)| d == best).collect();
            ties[rng.random_range(0..ties.len())].1
        };
        let (i, q, c) = chosen;
        fam[i][q] = c;
        for &s in &by_qubit[q] {
            let now = separates(&fam[i], &subsets[s]);
            if now != rainbow[i][s] {
                if now {
                    cover[s] += 1;
                } else {
                    cover[s] -= 1;
                }
                rainbow[i][s] = now;
            }
        }
    }
    None
}

/// Decision search: do `n` columns in `[k]^rows` exist with every `k`-subset
/// rainbow in some row?
///
/// Symmetry breaking: the first column is all zeros (per-row colour
/// relabelling) and the second is `0…01…1` (relabelling fixing 0, then a row
/// permutation); the rest are enumerated in increasing index order.
struct ColumnSearch {
    n: usize,
    k: usize,
    rows: usize,
    digits: Vec<Vec<u8>>,
}

impl ColumnSearch {
    fn new(n: usize, k: usize, rows: usize) -> Self {
        let total = k.pow(rows as u32);
        let digits = (0..total)
            .map(|mut v| {
                let mut d = vec![0u8; rows];
                for slot in d.iter_mut().rev() {
                    *slot = (v % k) as u8;
                    v /= k;
                }
                d
            })
            .collect();
        Self { n, k, rows, digits }
    }

    fn index_of(&self, d: &[u8]) -> usize {
        d.iter().fold(0, |acc, &x| acc * self.k + x as usize)
    }

    fn run(&self, budget: &Budget) -> Decision<HashFamily> {
        let first = 0usize;
        for ones in 1..=self.rows {
            let mut d = vec![0u8; self.rows];
            for slot in d.iter_mut().skip(self.rows - ones) {
                *slot = 1;
            }
            let second = self.index_of(&d);
            let mut chosen = vec![first, second];
            let mut candidates: Vec<usize> =
                (1..self.digits.len()).filter(|&v| v != second).collect();
            if self.k >= 3 {
                // Every (k-1)-subset of chosen must extend; for k = 3 that is the pair {first, second}.
                for subset in self.pending_subsets(&chosen[..1], second) {
                    candidates.retain(|&w| self.extends(&subset, w));
                }
            }
            match self.extend(&mut chosen, candidates, 0, budget) {
                Ok(Some(cols)) => return Decision::Found(self.to_family(&cols)),
                Ok(None) => {}
                Err(()) => return Decision::Exhausted,
            }
        }
        Decision::Infeasible
    }

    /// (k-1)-subsets of `prior ∪ {added}` that contain `added`.
    fn pending_subsets(&self, prior: &[usize], added: usize) -> Vec<Vec<usize>> {
        prior
            .iter()
            .copied()
            .combinations(self.k - 2)
            .map(|mut s| {
                s.push(added);
                s
            })
            .collect()
    }

    /// True if `w` makes `subset ∪ {w}` rainbow in some row.
    fn extends(&self, subset: &[usize], w: usize) -> bool {
        let dw = &self.digits[w];
        (0..self.rows).any(|r| {
            let mut seen = 1u32 << dw[r];
            subset.iter().all(|&c| {
                let bit = 1u32 << self.digits[c][r];
                let fresh = seen & bit == 0;
                seen |= bit;
                fresh
            })
        })
    }

    /// `free` holds the columns still allowed; the tail beyond the fixed
    /// pair is kept in increasing order via `min_index`. `Err` means the
    /// budget ran out.
    fn extend(
        &self,
        chosen: &mut Vec<usize>,
        free: Vec<usize>,
        min_index: usize,
        budget: &Budget,
    ) -> Result<Option<Vec<usize>>, ()> {
        if chosen.len() == self.n {
            return Ok(Some(chosen.clone()));
        }
        if !budget.tick() {
            return Err(());
        }
        let need = self.n - chosen.len();
        let pool: Vec<usize> = free.into_iter().filter(|&v| v >= min_index).collect();
        if pool.len() < need {
            return Ok(None);
        }
        for (i, &v) in pool.iter().enumerate() {
            if pool.len() - i < need {
                break;
            }
            let prior = chosen.clone();
            chosen.push(v);
            let mut next: Vec<usize> = pool[i + 1..].to_vec();
            for subset in self.pending_subsets(&prior, v) {
                next.retain(|&w| self.extends(&subset, w));
                if next.len() + 1 < need {
                    break;
                }
            }
            if next.len() + 1 >= need {
                if let Some(found) = self.extend(chosen, next, v + 1, budget)? {
                    return Ok(Some(found));
                }
            }
            chosen.pop();
        }
        Ok(None)
    }

    fn to_family(&self, cols: &[usize]) -> HashFamily {
        let mut cols = cols.to_vec();
        cols.sort();
        let rows = (0..self.rows)
            .map(|r| cols.iter().map(|&c| self.digits[c][r]).collect())
            .collect();
        HashFamily::new(self.n, self.k, rows).expect("digits are in range")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanKind {
    Fqst,
    Lqst,
    Pqst,
}

impl fmt::Display for PlanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanKind::Fqst => "fqst",
            PlanKind::Lqst => "lqst",
            PlanKind::Pqst => "pqst",
        })
    }
}

/// A list of observables to measure, with where it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPlan {
    pub kind: PlanKind,
    pub n: usize,
    pub k: usize,
    pub observables: Vec<PauliString>,
    pub family: Option<HashFamily>,
}

impl MeasurementPlan {
    pub fn len(&self) -> usize {
        self.observables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observables.is_empty()
    }
}

fn letter_assignments(k: usize) -> impl Iterator<Item = Vec<Pauli>> {
    (0..k).map(|_| Pauli::NON_IDENTITY).multi_cartesian_product()
}

/// PQST schedule: every row contributes all `3^k` colour-to-letter
/// assignments; repeats across rows are removed. Sorted lexicographically.
pub fn plan_from_family(fam: &HashFamily) -> Result<MeasurementPlan, HashError> {
    is_perfect(fam).map_err(HashError::NotPerfect)?;
    let mut set = BTreeSet::new();
    for row in fam.rows() {
        for assign in letter_assignments(fam.k) {
            let letters = row.iter().map(|&c| assign[c as usize]).collect();
            set.insert(PauliString::new(letters).expect("n >= 2"));
        }
    }
    Ok(MeasurementPlan {
        kind: PlanKind::Pqst,
        n: fam.n,
        k: fam.k,
        observables: set.into_iter().collect(),
        family: Some(fam.clone()),
    })
}

/// Every `k`-subset (lexicographic) times every non-identity letter
/// assignment on it, identity elsewhere.
pub fn plan_lqst(n: usize, k: usize) -> Result<MeasurementPlan, HashError> {
    if k == 0 || n < k {
        return Err(HashError::SizeBounds { n, k });
    }
    let mut observables = Vec::new();
    for subset in (0..n).combinations(k) {
        for assign in letter_assignments(k) {
            let mut letters = vec![Pauli::I; n];
            for (&q, &p) in subset.iter().zip(&assign) {
                letters[q] = p;
            }
            observables.push(PauliString::new(letters).expect("n >= 1"));
        }
    }
    Ok(MeasurementPlan { kind: PlanKind::Lqst, n, k, observables, family: None })
}

pub const FQST_GUARD_QUBITS: usize = 9;

/// All `3^n` identity-free strings. Refuses `n > 9` unless `override_guard`.
pub fn plan_fqst(n: usize, override_guard: bool) -> Result<MeasurementPlan, HashError> {
    if n == 0 {
        return Err(HashError::TooFewQubits { n, min: 1 });
    }
    if n > FQST_GUARD_QUBITS && !override_guard {
        return Err(HashError::BudgetGuard { n, max: FQST_GUARD_QUBITS });
    }
    let observables = letter_assignments(n)
        .map(|letters| PauliString::new(letters).expect("n >= 1"))
        .collect();
    Ok(MeasurementPlan { kind: PlanKind::Fqst, n, k: n, observables, family: None })
}

/// PQST plan for `(n, k)`: the binary-expansion family for `k = 2`, the
/// budgeted exact solver otherwise.
pub fn plan_pqst(n: usize, k: usize) -> Result<MeasurementPlan, HashError> {
    let fam = if k == 2 {
        binary_expansion_family(n)?
    } else {
        solve_cover_budgeted(n, k, SolveMode::Exact, &Budget::new(PLAN_NODE_BUDGET))?.family
    };
    plan_from_family(&fam)
}

/// Weight-`k` strings that are restrictions of at least one plan observable.
pub fn covered_locals(plan: &MeasurementPlan, k: usize) -> Vec<PauliString> {
    let mut set = BTreeSet::new();
    for obs in &plan.observables {
        let support = obs.support();
        if support.len() < k {
            continue;
        }
        for subset in support.into_iter().combinations(k) {
            set.insert(obs.restrict(&subset));
        }
    }
    set.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_family_shapes() {
        let f3 = binary_expansion_family(3).unwrap();
        assert_eq!(f3.rows(), &[vec![0, 0, 1], vec![0, 1, 0]]);
        assert!(is_perfect(&f3).is_ok());
        assert_eq!(binary_expansion_family(6).unwrap().len(), 3);
        assert_eq!(binary_expansion_family(12).unwrap().len(), 4);
        assert_eq!(binary_expansion_family(2).unwrap().len(), 1);
        assert!(matches!(binary_expansion_family(1), Err(HashError::TooFewQubits { .. })));
    }

    #[test]
    fn printed_3_2_matrix_is_also_perfect() {
        let fam = HashFamily::new(3, 2, vec![vec![0, 0, 1], vec![0, 1, 1]]).unwrap();
        assert!(is_perfect(&fam).is_ok());
    }

    #[test]
    fn binary_family_8_exhaustive() {
        let fam = binary_expansion_family(8).unwrap();
        let mut separated = 0;
        for a in 0..8 {
            for b in a + 1..8 {
                if fam.rows().iter().any(|r| r[a] != r[b]) {
                    separated += 1;
                }
            }
        }
        assert_eq!(separated, 28);
        assert!(is_perfect(&fam).is_ok());
    }

    #[test]
    fn imperfect_witness() {
        let fam = HashFamily::new(3, 2, vec![vec![0, 0, 0]]).unwrap();
        assert_eq!(is_perfect(&fam), Err(vec![0, 1]));
    }

    #[test]
    fn published_family_is_perfect() {
        assert!(is_perfect(&published_9_3_family()).is_ok());
    }

    #[test]
    fn family_validation() {
        assert!(matches!(HashFamily::new(3, 2, vec![vec![0, 2, 1]]), Err(HashError::EntryOutOfRange { .. })));
        assert!(matches!(HashFamily::new(3, 2, vec![vec![0, 1]]), Err(HashError::RaggedRow { .. })));
        let parsed = HashFamily::parse("001\n011\n", 2).unwrap();
        assert_eq!(parsed.rows(), &[vec![0, 0, 1], vec![0, 1, 1]]);
        assert_eq!(parsed.to_string(), "001\n011\n");
        assert!(HashFamily::parse("0a1\n", 2).is_err());
    }

    #[test]
    fn canonical_candidate_counts_are_stirling_numbers() {
        assert_eq!(canonical_candidates(4, 2).len(), 7);
        assert_eq!(canonical_candidates(6, 3).len(), 90);
        assert_eq!(canonical_candidates(12, 3).len(), 86526);
        assert_eq!(canonical_candidates(3, 3), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn colour_permuted_rows_generate_identical_observables() {
        let a = HashFamily::new(4, 2, vec![vec![0, 0, 1, 1], vec![0, 1, 0, 1]]).unwrap();
        let b = HashFamily::new(4, 2, vec![vec![1, 1, 0, 0], vec![1, 0, 1, 0]]).unwrap();
        assert_eq!(plan_from_family(&a).unwrap().observables, plan_from_family(&b).unwrap().observables);
    }

    #[test]
    fn small_exact_solutions() {
        let f62 = solve_cover(6, 2, SolveMode::Exact).unwrap();
        assert!(f62.len() <= 3 && is_perfect(&f62).is_ok());
        let f63 = solve_cover(6, 3, SolveMode::Exact).unwrap();
        assert_eq!(f63.len(), 3);
        assert!(is_perfect(&f63).is_ok());
    }

    #[test]
    fn greedy_is_perfect() {
        for (n, k) in [(5, 3), (6, 3), (7, 3), (6, 4)] {
            let fam = solve_cover(n, k, SolveMode::Greedy).unwrap();
            assert!(is_perfect(&fam).is_ok(), "({n},{k})");
        }
    }

    #[test]
    fn branch_and_bound_matches_column_search() {
        for (n, k) in [(5, 3), (6, 3), (7, 3), (5, 4), (6, 4)] {
            let problem = CoverageProblem::build(n, k);
            let bb = problem.branch_and_bound();
            assert!(problem.is_feasible(&bb));
            let exact = solve_cover(n, k, SolveMode::Exact).unwrap();
            assert_eq!(bb.len(), exact.len(), "({n},{k})");
            assert!(is_perfect(&exact).is_ok());
        }
    }

    #[test]
    fn row_and_column_searches_agree() {
        for (n, k) in [(6, 3), (8, 3), (9, 3), (5, 4), (6, 4)] {
            let problem = CoverageProblem::build(n, k);
            let rows = (1..).find_map(|r| problem.cover_with_rows(r)).unwrap();
            let cols = (1..).find_map(|r| match ColumnSearch::new(n, k, r).run(&Budget::unlimited()) {
                Decision::Found(f) => Some(f),
                _ => None,
            }).unwrap();
            assert_eq!(rows.len(), cols.len(), "({n},{k})");
            assert!(is_perfect(&problem.family(&rows)).is_ok());
            assert!(is_perfect(&cols).is_ok());
        }
    }

    #[test]
    fn local_search_finds_perfect_families() {
        for (n, k, r) in [(6, 3, 3), (9, 3, 4), (12, 3, 6), (9, 4, 8)] {
            let fam = local_search(n, k, r, 3, LOCAL_SEARCH_STEPS).unwrap();
            assert_eq!(fam.len(), r);
            assert!(is_perfect(&fam).is_ok(), "({n},{k})");
            assert_eq!(local_search(n, k, r, 3, LOCAL_SEARCH_STEPS), Some(fam));
        }
        // Below the counting bound 3^r >= n no family exists.
        assert!(local_search(10, 3, 2, 0, 1000).is_none());
    }

    #[test]
    fn exhausted_budget_keeps_best_family() {
        let report = solve_cover_budgeted(7, 4, SolveMode::Exact, &Budget::new(0)).unwrap();
        assert!(is_perfect(&report.family).is_ok());
        assert!(!report.proven_minimal);
        let full = solve_cover_budgeted(7, 4, SolveMode::Exact, &Budget::unlimited()).unwrap();
        assert!(full.proven_minimal);
        assert_eq!(full.family.len(), full.lower_bound);
        assert!(report.family.len() >= full.family.len());
        let problem = CoverageProblem::build(7, 4);
        assert_eq!(problem.decide_rows(5, &Budget::new(0)), Decision::Exhausted);
        assert_eq!(problem.decide_rows(5, &Budget::unlimited()), Decision::Infeasible);
    }

    #[test]
    fn size_bounds() {
        assert!(solve_cover(13, 3, SolveMode::Greedy).is_err());
        assert!(solve_cover(6, 5, SolveMode::Greedy).is_err());
        assert!(solve_cover(2, 3, SolveMode::Greedy).is_err());
    }

    #[test]
    fn plan_counts() {
        assert_eq!(plan_from_family(&binary_expansion_family(12).unwrap()).unwrap().len(), 27);
        assert_eq!(plan_from_family(&published_9_3_family()).unwrap().len(), 99);
        assert_eq!(plan_lqst(12, 2).unwrap().len(), 594);
        assert_eq!(plan_lqst(12, 3).unwrap().len(), 5940);
        assert_eq!(plan_fqst(6, false).unwrap().len(), 729);
        assert!(matches!(plan_fqst(10, false), Err(HashError::BudgetGuard { .. })));
        assert_eq!(plan_fqst(10, true).unwrap().len(), 59049);
    }

    #[test]
    fn imperfect_family_rejected_by_plan() {
        let fam = HashFamily::new(3, 2, vec![vec![0, 0, 1]]).unwrap();
        assert_eq!(plan_from_family(&fam), Err(HashError::NotPerfect(vec![0, 1])));
    }

    #[test]
    fn covered_locals_examples() {
        let p62 = plan_from_family(&binary_expansion_family(6).unwrap()).unwrap();
        assert_eq!(covered_locals(&p62, 2).len(), 135);
        let fq = plan_fqst(4, false).unwrap();
        for k in 1..=4 {
            assert_eq!(covered_locals(&fq, k), plan_lqst(4, k).unwrap().observables.into_iter().collect::<BTreeSet<_>>().into_iter().collect::<Vec<_>>());
        }
        let p93 = plan_from_family(&published_9_3_family()).unwrap();
        let covered = covered_locals(&p93, 3);
        assert_eq!(covered.len(), 2268);
        let lq: BTreeSet<_> = plan_lqst(9, 3).unwrap().observables.into_iter().collect();
        assert_eq!(covered.into_iter().collect::<BTreeSet<_>>(), lq);
    }
}
