//! Edge Markov chains over a DFA.
//!
//! A chain attaches to every DFA state a categorical distribution over
//! `|Σ| + 1` outcomes: emit a symbol (and follow the DFA transition) or
//! terminate. Each sampling step is a single flattened draw from that row,
//! so rows sum to one and the chain defines a normalized distribution over
//! `Σ*`. With `forbid_empty` the termination branch is skipped on the first
//! step and the first emission is renormalized accordingly.
//!
//! Chains are immutable; batch sampling hands every example its own RNG
//! substream, so parallel generation is bit-identical to sequential.

use crate::automata::{AutomataError, Dfa, StateSequence};
use crate::exec;
use crate::rng::{self, SHUFFLE_LANE};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use std::fmt::Write as _;
use std::path::Path;

/// Hard cap on sampled string length; hitting it means the chain is
/// effectively non-terminating.
pub const MAX_SAMPLE_LEN: usize = 1_000_000;

/// Tolerance for row-sum validation.
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum MarkovError {
    #[error("table must have {states} rows of {width} probabilities")]
    BadShape { states: usize, width: usize },
    #[error("row {row} sums to {sum}, expected 1")]
    RowSum { row: usize, sum: f64 },
    #[error("row {row} column {col} has negative entry {value}")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("strict chain terminates at non-accepting state {state} with probability {prob}")]
    StrictViolation { state: usize, prob: f64 },
    #[error("no positive termination probability is reachable from the start state")]
    NonTerminating,
    #[error("forbid_empty chain cannot emit from the start state")]
    NoFirstEmission,
    #[error("sampled string exceeded the runaway guard of {MAX_SAMPLE_LEN} symbols")]
    RunawayLength,
    #[error("expected-length system is singular or divergent")]
    DivergentLength,
    #[error("chains are defined over different DFAs")]
    ChainMismatch,
    #[error("delta {0} outside the family range [0.2, 0.85]")]
    DeltaOutOfRange(f64),
    #[error("unsupported family construction: {0}")]
    BadFamily(String),
    #[error(transparent)]
    Automata(#[from] AutomataError),
    #[error("malformed {what} text: {detail}")]
    Parse { what: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How [`EdgeMarkovChain::string_likelihood`] treats termination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikelihoodMode {
    /// Product of emission probabilities times the final termination
    /// probability (and the renormalized first step under `forbid_empty`).
    /// Under this mode likelihoods sum to one over all strings.
    Full,
    /// Bare product of emission probabilities only.
    Paper,
}

/// A labeled string together with the state sequence and exact
/// log-probability assigned by its generating chain.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub x: String,
    pub y: bool,
    pub z: StateSequence,
    pub logp: f64,
}

/// Per-state emission/termination table tied to a DFA.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMarkovChain {
    dfa: Dfa,
    /// `rows[s]` has `|Σ| + 1` entries: emission probabilities in alphabet
    /// order, then the termination probability.
    rows: Vec<Vec<f64>>,
    forbid_empty: bool,
}

impl EdgeMarkovChain {
    /// Validates the table and builds a chain. `strict_positive` additionally
    /// requires zero termination probability outside the DFA's accepting set,
    /// which guarantees every sampled string lies in the DFA's language.
    pub fn new(
        dfa: Dfa,
        rows: Vec<Vec<f64>>,
        forbid_empty: bool,
        strict_positive: bool,
    ) -> Result<Self, MarkovError> {
        let width = dfa.alphabet().len() + 1;
        if rows.len() != dfa.n_states() || rows.iter().any(|r| r.len() != width) {
            return Err(MarkovError::BadShape {
                states: dfa.n_states(),
                width,
            });
        }
        for (row_idx, row) in rows.iter().enumerate() {
            for (col, &value) in row.iter().enumerate() {
                if value < 0.0 || !value.is_finite() {
                    return Err(MarkovError::NegativeEntry {
                        row: row_idx,
                        col,
                        value,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(MarkovError::RowSum { row: row_idx, sum });
            }
        }
        if strict_positive {
            for s in 0..dfa.n_states() {
                let prob = rows[s][width - 1];
                if !dfa.is_accepting(s) && prob > 0.0 {
                    return Err(MarkovError::StrictViolation { state: s, prob });
                }
            }
        }
        Ok(Self {
            dfa,
            rows,
            forbid_empty,
        })
    }

    pub fn dfa(&self) -> &Dfa {
        &self.dfa
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn forbid_empty(&self) -> bool {
        self.forbid_empty
    }

    pub fn n_symbols(&self) -> usize {
        self.dfa.alphabet().len()
    }

    /// Emission probability of alphabet column `a` in state `s`.
    pub fn emission(&self, s: usize, a: usize) -> f64 {
        self.rows[s][a]
    }

    /// Termination probability in state `s`.
    pub fn termination(&self, s: usize) -> f64 {
        self.rows[s][self.n_symbols()]
    }

    /// Whether a positive termination probability is reachable from the
    /// start state along positive-probability emissions.
    fn termination_reachable(&self) -> bool {
        let n = self.dfa.n_states();
        let mut seen = vec![false; n];
        let mut stack = vec![self.dfa.start()];
        seen[self.dfa.start()] = true;
        while let Some(s) = stack.pop() {
            if self.termination(s) > 0.0 {
                return true;
            }
            for a in 0..self.n_symbols() {
                if self.emission(s, a) > 0.0 {
                    let t = self.dfa.step(s, a);
                    if !seen[t] {
                        seen[t] = true;
                        stack.push(t);
                    }
                }
            }
        }
        false
    }

    fn check_samplable(&self) -> Result<(), MarkovError> {
        if !self.termination_reachable() {
            return Err(MarkovError::NonTerminating);
        }
        if self.forbid_empty && 1.0 - self.termination(self.dfa.start()) <= 0.0 {
            return Err(MarkovError::NoFirstEmission);
        }
        Ok(())
    }

    /// Draws one string with its induced state sequence and exact
    /// log-probability. The label is membership in this chain's own DFA
    /// language; dataset builders relabel against the positive-language DFA.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<LabeledExample, MarkovError> {
        self.check_samplable()?;
        let m = self.n_symbols();
        let mut state = self.dfa.start();
        let mut states = vec![state];
        let mut symbols: Vec<usize> = Vec::new();
        let mut logp = 0.0;
        loop {
            let row = &self.rows[state];
            let first_step = symbols.is_empty() && self.forbid_empty;
            // One flattened categorical draw over emissions + termination;
            // under forbid_empty the first draw covers emissions only.
            let scale = if first_step { 1.0 - row[m] } else { 1.0 };
            let u = rng.gen::<f64>() * scale;
            let mut chosen = m;
            let mut cum = 0.0;
            for (k, &p) in row.iter().take(m + if first_step { 0 } else { 1 }).enumerate() {
                cum += p;
                if u < cum {
                    chosen = k;
                    break;
                }
            }
            if chosen == m && first_step {
                // Rounding pushed u past the emission mass; take the last
                // positive-probability emission.
                chosen = (0..m)
                    .rev()
                    .find(|&k| row[k] > 0.0)
                    .ok_or(MarkovError::NoFirstEmission)?;
            }
            if chosen == m {
                logp += row[m].ln();
                break;
            }
            logp += if first_step {
                (row[chosen] / scale).ln()
            } else {
                row[chosen].ln()
            };
            symbols.push(chosen);
            state = self.dfa.step(state, chosen);
            states.push(state);
            if symbols.len() > MAX_SAMPLE_LEN {
                return Err(MarkovError::RunawayLength);
            }
        }
        let x = self.dfa.decode(&symbols);
        let y = self.dfa.is_accepting(state);
        Ok(LabeledExample {
            x,
            y,
            z: StateSequence(states),
            logp,
        })
    }

    /// Natural-log probability of `x` under this chain; `-inf` for strings
    /// the chain cannot generate.
    pub fn string_likelihood(&self, x: &str, mode: LikelihoodMode) -> Result<f64, MarkovError> {
        let indices = self.dfa.encode(x)?;
        Ok(self.likelihood_indices(&indices, mode))
    }

    /// As [`EdgeMarkovChain::string_likelihood`] over pre-encoded symbols.
    pub fn likelihood_indices(&self, indices: &[usize], mode: LikelihoodMode) -> f64 {
        let m = self.n_symbols();
        let mut state = self.dfa.start();
        let mut logp = 0.0;
        for (t, &a) in indices.iter().enumerate() {
            let p = self.rows[state][a];
            if t == 0 && self.forbid_empty && mode == LikelihoodMode::Full {
                logp += (p / (1.0 - self.rows[state][m])).ln();
            } else {
                logp += p.ln();
            }
            state = self.dfa.step(state, a);
        }
        if mode == LikelihoodMode::Full {
            if indices.is_empty() && self.forbid_empty {
                return f64::NEG_INFINITY;
            }
            logp += self.rows[state][m].ln();
        }
        logp
    }

    /// Sub-stochastic state-to-state matrix `M[s][s'] = Σ_σ P(σ|s)·1(δ(s,σ)=s')`.
    fn continuation_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.dfa.n_states();
        let mut m = vec![vec![0.0; n]; n];
        for s in 0..n {
            for a in 0..self.n_symbols() {
                m[s][self.dfa.step(s, a)] += self.emission(s, a);
            }
        }
        m
    }

    /// States reachable from the start along positive-probability emissions.
    fn reachable(&self) -> Vec<usize> {
        let n = self.dfa.n_states();
        let mut seen = vec![false; n];
        let mut stack = vec![self.dfa.start()];
        seen[self.dfa.start()] = true;
        while let Some(s) = stack.pop() {
            for a in 0..self.n_symbols() {
                if self.emission(s, a) > 0.0 {
                    let t = self.dfa.step(s, a);
                    if !seen[t] {
                        seen[t] = true;
                        stack.push(t);
                    }
                }
            }
        }
        (0..n).filter(|&s| seen[s]).collect()
    }

    /// Expected lengths `E[s]` of a string generated from each reachable
    /// state by the unrestricted chain, solved from
    /// `E_s = (1 - e_s) + Σ_σ P(σ|s)·E_{δ(s,σ)}`.
    fn expected_lengths_from(&self) -> Result<Vec<Option<f64>>, MarkovError> {
        let reach = self.reachable();
        let index_of: std::collections::HashMap<usize, usize> =
            reach.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let k = reach.len();
        let cont = self.continuation_matrix();
        let mut a = DMatrix::<f64>::identity(k, k);
        let mut b = DVector::<f64>::zeros(k);
        for (i, &s) in reach.iter().enumerate() {
            b[i] = 1.0 - self.termination(s);
            for (j, &t) in reach.iter().enumerate() {
                a[(i, j)] -= cont[s][t];
            }
        }
        let solved = a
            .clone()
            .lu()
            .solve(&b)
            .ok_or(MarkovError::DivergentLength)?;
        let residual = (&a * &solved - &b).norm();
        if !residual.is_finite()
            || residual > 1e-6
            || solved.iter().any(|v| !v.is_finite() || *v < -1e-9)
        {
            return Err(MarkovError::DivergentLength);
        }
        let mut out = vec![None; self.dfa.n_states()];
        for (&s, i) in index_of.iter() {
            out[s] = Some(solved[*i]);
        }
        Ok(out)
    }

    /// Exact expected string length from the start state, honoring
    /// `forbid_empty`'s renormalized first step.
    pub fn expected_length(&self) -> Result<f64, MarkovError> {
        let lengths = self.expected_lengths_from()?;
        let s0 = self.dfa.start();
        let e0 = lengths[s0].ok_or(MarkovError::DivergentLength)?;
        if !self.forbid_empty {
            return Ok(e0);
        }
        let denom = 1.0 - self.termination(s0);
        if denom <= 0.0 {
            return Err(MarkovError::NoFirstEmission);
        }
        let mut total = 1.0;
        for a in 0..self.n_symbols() {
            let p = self.emission(s0, a) / denom;
            if p > 0.0 {
                let next = lengths[self.dfa.step(s0, a)].ok_or(MarkovError::DivergentLength)?;
                total += p * next;
            }
        }
        Ok(total)
    }

    /// Exact long-run state-visit frequencies: the expected number of visits
    /// to each state over a whole string (including the final state),
    /// normalized to a distribution.
    pub fn exact_state_distribution(&self) -> Result<Vec<f64>, MarkovError> {
        let reach = self.reachable();
        let k = reach.len();
        let cont = self.continuation_matrix();
        let s0 = self.dfa.start();
        // Solve (I - Mᵀ) v = r where r is the distribution of the first
        // visited state of the unrestricted process (always s0), or the
        // renormalized first-step distribution plus the guaranteed s0 visit
        // under forbid_empty.
        let mut a = DMatrix::<f64>::identity(k, k);
        for (i, &s) in reach.iter().enumerate() {
            for (j, &t) in reach.iter().enumerate() {
                a[(i, j)] -= cont[t][s];
            }
        }
        let mut rhs = DVector::<f64>::zeros(k);
        let pos = |state: usize| reach.iter().position(|&s| s == state).unwrap();
        let mut extra = vec![0.0; self.dfa.n_states()];
        if self.forbid_empty {
            let denom = 1.0 - self.termination(s0);
            if denom <= 0.0 {
                return Err(MarkovError::NoFirstEmission);
            }
            extra[s0] = 1.0;
            for a_idx in 0..self.n_symbols() {
                let p = self.emission(s0, a_idx) / denom;
                if p > 0.0 {
                    rhs[pos(self.dfa.step(s0, a_idx))] += p;
                }
            }
        } else {
            rhs[pos(s0)] = 1.0;
        }
        let solved = a
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or(MarkovError::DivergentLength)?;
        if solved.iter().any(|v| !v.is_finite() || *v < -1e-9) {
            return Err(MarkovError::DivergentLength);
        }
        let mut visits = vec![0.0; self.dfa.n_states()];
        for (i, &s) in reach.iter().enumerate() {
            visits[s] = solved[i].max(0.0) + extra[s];
        }
        let total: f64 = visits.iter().sum();
        Ok(visits.iter().map(|v| v / total).collect())
    }

    /// Exact probability mass of strings of length at most `max_len` and the
    /// exact residual mass beyond it. The two always sum to one up to float
    /// rounding.
    ///
    /// `alive[t]` tracks the distribution over states after `t` emitted
    /// symbols among runs that have not terminated; the mass of length-`t`
    /// strings is `Σ_s alive[t][s]·P(e|s)`.
    pub fn length_mass_and_tail(&self, max_len: usize) -> (f64, f64) {
        let n = self.dfa.n_states();
        let cont = self.continuation_matrix();
        let s0 = self.dfa.start();
        let term_mass = |alive: &[f64]| -> f64 {
            alive
                .iter()
                .enumerate()
                .map(|(s, &w)| w * self.termination(s))
                .sum()
        };
        let mut alive = vec![0.0; n];
        let mut mass = 0.0;
        let reached_len;
        if self.forbid_empty {
            let denom = 1.0 - self.termination(s0);
            if denom <= 0.0 || max_len == 0 {
                return (0.0, 1.0);
            }
            for a in 0..self.n_symbols() {
                alive[self.dfa.step(s0, a)] += self.emission(s0, a) / denom;
            }
            reached_len = 1;
        } else {
            alive[s0] = 1.0;
            reached_len = 0;
        }
        mass += term_mass(&alive);
        for _ in reached_len..max_len {
            let mut next = vec![0.0; n];
            for s in 0..n {
                if alive[s] > 0.0 {
                    for (s2, w) in cont[s].iter().enumerate() {
                        if *w > 0.0 {
                            next[s2] += alive[s] * w;
                        }
                    }
                }
            }
            alive = next;
            mass += term_mass(&alive);
        }
        let tail = alive
            .iter()
            .enumerate()
            .map(|(s, &w)| w * (1.0 - self.termination(s)))
            .sum();
        (mass, tail)
    }
}

/// Which slice of a shift family's data to draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DatasetSlice {
    /// Positives from the base (in-domain) chain.
    TrainId,
    /// Positives from the base chain, intended for held-out evaluation.
    TestId,
    /// Positives from the perturbed chain at the given delta.
    TestOod(f64),
}

/// Language family used to build shifted chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    Parity,
    ModK(usize),
}

impl std::fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FamilyKind::Parity => write!(f, "parity"),
            FamilyKind::ModK(k) => write!(f, "mod-{k}"),
        }
    }
}

/// A base chain, a parametric perturbed family, and an unshifted negative
/// chain over the complement language, all sharing one state/alphabet order.
#[derive(Debug, Clone)]
pub struct ShiftFamily {
    kind: FamilyKind,
    label_dfa: Dfa,
    base: EdgeMarkovChain,
    negative: EdgeMarkovChain,
    delta_grid: Vec<f64>,
    /// The grid anchor at which `perturbed` coincides with `base`.
    pub anchor: f64,
}

impl ShiftFamily {
    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    /// The positive-language DFA labels always refer to.
    pub fn label_dfa(&self) -> &Dfa {
        &self.label_dfa
    }

    pub fn base(&self) -> &EdgeMarkovChain {
        &self.base
    }

    pub fn negative(&self) -> &EdgeMarkovChain {
        &self.negative
    }

    pub fn delta_grid(&self) -> &[f64] {
        &self.delta_grid
    }

    /// Builds the perturbed positive chain at `delta`.
    pub fn perturbed(&self, delta: f64) -> Result<EdgeMarkovChain, MarkovError> {
        if !(0.2..=0.85).contains(&delta) {
            return Err(MarkovError::DeltaOutOfRange(delta));
        }
        let dfa = self.label_dfa.clone();
        let rows = (0..dfa.n_states())
            .map(|s| {
                if dfa.is_accepting(s) {
                    vec![0.9 - delta, delta, 0.1]
                } else {
                    vec![delta, 1.0 - delta, 0.0]
                }
            })
            .collect();
        EdgeMarkovChain::new(dfa, rows, self.base.forbid_empty(), true)
    }

    /// Positive chain for a dataset slice.
    pub fn positive_chain(&self, slice: DatasetSlice) -> Result<EdgeMarkovChain, MarkovError> {
        match slice {
            DatasetSlice::TrainId | DatasetSlice::TestId => Ok(self.base.clone()),
            DatasetSlice::TestOod(delta) => self.perturbed(delta),
        }
    }
}

/// The parity family: base and perturbed chains over the parity DFA plus the
/// fixed negative chain over its complement. Accepting-state rows perturb as
/// `[0.9-δ, δ, 0.1]` and non-accepting rows as `[δ, 1-δ, 0]`, so the base
/// chain is the δ = 0.2 anchor.
pub fn parity_shift_family(delta_grid: &[f64]) -> Result<ShiftFamily, MarkovError> {
    build_family(FamilyKind::Parity, delta_grid)
}

/// The mod-k family, built the same way as parity: loop probabilities of the
/// non-accepting counter states are perturbed, the accepting start state
/// keeps its 0.1 termination mass, and positives forbid the empty string
/// (the start state is accepting).
pub fn modk_shift_family(k: usize, delta_grid: &[f64]) -> Result<ShiftFamily, MarkovError> {
    build_family(FamilyKind::ModK(k), delta_grid)
}

fn build_family(kind: FamilyKind, delta_grid: &[f64]) -> Result<ShiftFamily, MarkovError> {
    for &d in delta_grid {
        if !(0.2..=0.85).contains(&d) {
            return Err(MarkovError::DeltaOutOfRange(d));
        }
    }
    let (label_dfa, forbid_empty) = match kind {
        FamilyKind::Parity => (crate::automata::build_parity_dfa(), false),
        FamilyKind::ModK(k) => (crate::automata::build_mod_k_dfa(k)?, true),
    };
    let base_rows = (0..label_dfa.n_states())
        .map(|s| {
            if label_dfa.is_accepting(s) {
                vec![0.7, 0.2, 0.1]
            } else {
                vec![0.2, 0.8, 0.0]
            }
        })
        .collect();
    let base = EdgeMarkovChain::new(label_dfa.clone(), base_rows, forbid_empty, true)?;
    let complement = label_dfa.complement();
    let neg_rows = (0..complement.n_states())
        .map(|s| {
            if complement.is_accepting(s) {
                vec![0.7, 0.2, 0.1]
            } else {
                vec![0.8, 0.2, 0.0]
            }
        })
        .collect();
    // Negatives feed classifiers too, so the empty string is excluded.
    let negative = EdgeMarkovChain::new(complement, neg_rows, true, true)?;
    Ok(ShiftFamily {
        kind,
        label_dfa,
        base,
        negative,
        delta_grid: delta_grid.to_vec(),
        anchor: 0.2,
    })
}

/// The three training/test chains of the length-asymmetry study, all strict
/// positive chains over the parity DFA, plus the shared negative chain.
/// Expected lengths: P1 → 49, P2 → 11.5, Q → 19.
pub struct AsymmetryChains {
    pub p1: EdgeMarkovChain,
    pub p2: EdgeMarkovChain,
    pub q: EdgeMarkovChain,
    pub negative: EdgeMarkovChain,
    pub label_dfa: Dfa,
}

pub fn asymmetry_chains() -> Result<AsymmetryChains, MarkovError> {
    let family = parity_shift_family(&[0.2])?;
    let dfa = family.label_dfa().clone();
    let mk = |rows: Vec<Vec<f64>>| EdgeMarkovChain::new(dfa.clone(), rows, false, true);
    Ok(AsymmetryChains {
        p1: family.base().clone(),
        p2: mk(vec![vec![0.8, 0.2, 0.0], vec![0.1, 0.8, 0.1]])?,
        q: mk(vec![vec![0.5, 0.5, 0.0], vec![0.4, 0.5, 0.1]])?,
        negative: family.negative().clone(),
        label_dfa: dfa,
    })
}

fn sample_one(
    family: &ShiftFamily,
    pos_chain: &EdgeMarkovChain,
    n_pos: usize,
    seed: u64,
    index: usize,
) -> Result<LabeledExample, MarkovError> {
    let chain = if index < n_pos {
        pos_chain
    } else {
        &family.negative
    };
    let mut rng = rng::substream(seed, index as u64);
    let mut ex = chain.sample(&mut rng)?;
    // Labels always refer to the positive language.
    ex.y = family.label_dfa.accepts(&ex.x)?;
    Ok(ex)
}

/// Draws `n_pos` positives and `n_neg` negatives for the requested slice and
/// shuffles them. Example `i` uses RNG substream `(seed, i)` and the shuffle
/// uses `(seed, SHUFFLE_LANE)`, so output is bit-identical at any thread
/// count.
pub fn sample_dataset(
    family: &ShiftFamily,
    slice: DatasetSlice,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
) -> Result<Vec<LabeledExample>, MarkovError> {
    let pos_chain = family.positive_chain(slice)?;
    let drawn = exec::map_indexed(n_pos + n_neg, |i| {
        sample_one(family, &pos_chain, n_pos, seed, i)
    });
    finish_dataset(drawn, seed)
}

/// Sequential twin of [`sample_dataset`]; same output bit-for-bit.
pub fn sample_dataset_seq(
    family: &ShiftFamily,
    slice: DatasetSlice,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
) -> Result<Vec<LabeledExample>, MarkovError> {
    let pos_chain = family.positive_chain(slice)?;
    let drawn = exec::map_indexed_seq(n_pos + n_neg, |i| {
        sample_one(family, &pos_chain, n_pos, seed, i)
    });
    finish_dataset(drawn, seed)
}

fn finish_dataset(
    drawn: Vec<Result<LabeledExample, MarkovError>>,
    seed: u64,
) -> Result<Vec<LabeledExample>, MarkovError> {
    let mut examples = drawn.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut shuffle_rng = rng::substream(seed, SHUFFLE_LANE);
    examples.shuffle(&mut shuffle_rng);
    Ok(examples)
}

// ---------------------------------------------------------------------------
// Text formats
// ---------------------------------------------------------------------------

/// Serializes a chain to the `emc v1` format, referencing `dfa_ref` as the
/// DFA file. Probabilities print in shortest round-trip form.
pub fn emc_to_text(emc: &EdgeMarkovChain, dfa_ref: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "emc v1");
    let _ = writeln!(s, "dfa {dfa_ref}");
    let _ = writeln!(s, "forbid_empty {}", u8::from(emc.forbid_empty()));
    for row in emc.rows() {
        let line = row
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(s, "{line}");
    }
    s
}

/// Parses the `emc v1` format given the already-loaded DFA it references.
pub fn emc_from_text(text: &str, dfa: Dfa) -> Result<EdgeMarkovChain, MarkovError> {
    let parse_err = |detail: &str| MarkovError::Parse {
        what: "emc",
        detail: detail.to_string(),
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("emc v1") {
        return Err(parse_err("expected header 'emc v1'"));
    }
    let _dfa_line = lines
        .next()
        .and_then(|l| l.strip_prefix("dfa "))
        .ok_or_else(|| parse_err("expected 'dfa <path>'"))?;
    let forbid_empty = match lines
        .next()
        .and_then(|l| l.strip_prefix("forbid_empty "))
        .map(str::trim)
    {
        Some("0") => false,
        Some("1") => true,
        _ => return Err(parse_err("expected 'forbid_empty <0|1>'")),
    };
    let mut rows = Vec::with_capacity(dfa.n_states());
    for _ in 0..dfa.n_states() {
        let line = lines.next().ok_or_else(|| parse_err("missing table row"))?;
        let row = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>().map_err(|_| parse_err("bad probability")))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    EdgeMarkovChain::new(dfa, rows, forbid_empty, false)
}

/// Reads the DFA path referenced inside an `emc v1` file.
pub fn emc_text_dfa_ref(text: &str) -> Result<String, MarkovError> {
    text.lines()
        .nth(1)
        .and_then(|l| l.strip_prefix("dfa "))
        .map(|s| s.trim().to_string())
        .ok_or(MarkovError::Parse {
            what: "emc",
            detail: "expected 'dfa <path>' on line 2".to_string(),
        })
}

/// Loads an eMC file, resolving its DFA reference relative to the eMC file's
/// directory.
pub fn load_emc(path: &Path) -> Result<EdgeMarkovChain, MarkovError> {
    let text = std::fs::read_to_string(path)?;
    let dfa_ref = emc_text_dfa_ref(&text)?;
    let dfa_path = path
        .parent()
        .map(|dir| dir.join(&dfa_ref))
        .unwrap_or_else(|| dfa_ref.clone().into());
    let dfa_text = std::fs::read_to_string(&dfa_path)?;
    let dfa = Dfa::from_text(&dfa_text)?;
    emc_from_text(&text, dfa)
}

/// Writes `chain` to `emc_path` and its DFA alongside it as `dfa_ref`.
pub fn save_emc(emc: &EdgeMarkovChain, emc_path: &Path, dfa_ref: &str) -> Result<(), MarkovError> {
    let dir = emc_path.parent().map(Path::to_path_buf).unwrap_or_default();
    std::fs::write(dir.join(dfa_ref), emc.dfa().to_text())?;
    std::fs::write(emc_path, emc_to_text(emc, dfa_ref))?;
    Ok(())
}

/// One example per line: `x`, `y`, comma-joined state indices, `logp` with
/// 17 significant digits, tab-separated.
pub fn dataset_to_text(examples: &[LabeledExample]) -> String {
    let mut s = String::new();
    for ex in examples {
        let states = ex
            .z
            .states()
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(s, "{}\t{}\t{}\t{:.16e}", ex.x, u8::from(ex.y), states, ex.logp);
    }
    s
}

pub fn dataset_from_text(text: &str) -> Result<Vec<LabeledExample>, MarkovError> {
    let parse_err = |detail: String| MarkovError::Parse {
        what: "dataset",
        detail,
    };
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(format!("line {}: expected 4 fields", lineno + 1)));
        }
        let y = match fields[1] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(format!("line {}: bad label '{other}'", lineno + 1))),
        };
        let states = if fields[2].is_empty() {
            Vec::new()
        } else {
            fields[2]
                .split(',')
                .map(|tok| {
                    tok.parse::<usize>()
                        .map_err(|_| parse_err(format!("line {}: bad state index", lineno + 1)))
                })
                .collect::<Result<Vec<_>, _>>()?
        };
        let logp = fields[3]
            .parse::<f64>()
            .map_err(|_| parse_err(format!("line {}: bad logp", lineno + 1)))?;
        out.push(LabeledExample {
            x: fields[0].to_string(),
            y,
            z: StateSequence(states),
            logp,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::build_parity_dfa;
    use approx::assert_relative_eq;

    fn parity_id() -> EdgeMarkovChain {
        parity_shift_family(&[0.2]).unwrap().base().clone()
    }

    #[test]
    fn validates_rows() {
        let dfa = build_parity_dfa();
        let bad = EdgeMarkovChain::new(
            dfa.clone(),
            vec![vec![0.5, 0.4, 0.2], vec![0.7, 0.2, 0.1]],
            false,
            false,
        );
        match bad {
            Err(MarkovError::RowSum { row: 0, sum }) => assert_relative_eq!(sum, 1.1),
            other => panic!("expected row-sum error, got {other:?}"),
        }
        let strict = EdgeMarkovChain::new(
            dfa.clone(),
            vec![vec![0.2, 0.7, 0.1], vec![0.7, 0.2, 0.1]],
            false,
            true,
        );
        assert!(matches!(
            strict,
            Err(MarkovError::StrictViolation { state: 0, .. })
        ));
        // the literal printed negative matrix (row sum 1.9) is rejected
        let literal = EdgeMarkovChain::new(
            dfa.complement(),
            vec![vec![0.7, 0.2, 1.0], vec![0.8, 0.2, 0.0]],
            false,
            true,
        );
        assert!(matches!(literal, Err(MarkovError::RowSum { row: 0, .. })));
    }

    #[test]
    fn strict_positive_samples_are_members() {
        let emc = parity_id();
        let dfa = build_parity_dfa();
        for i in 0..1000 {
            let mut rng = rng::substream(11, i);
            let ex = emc.sample(&mut rng).unwrap();
            assert!(dfa.accepts(&ex.x).unwrap());
            assert!(ex.y);
            assert_eq!(ex.z.len(), ex.x.chars().count() + 1);
        }
    }

    #[test]
    fn degenerate_chain_returns_empty() {
        let dfa = build_parity_dfa();
        let emc = EdgeMarkovChain::new(
            dfa,
            vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]],
            false,
            false,
        )
        .unwrap();
        let mut rng = rng::substream(5, 0);
        let ex = emc.sample(&mut rng).unwrap();
        assert_eq!(ex.x, "");
        assert_relative_eq!(ex.logp, 0.0);
        assert_relative_eq!(
            emc.string_likelihood("", LikelihoodMode::Full).unwrap(),
            0.0
        );
    }

    #[test]
    fn non_terminating_chain_is_rejected() {
        let dfa = build_parity_dfa();
        let emc = EdgeMarkovChain::new(
            dfa,
            vec![vec![0.2, 0.8, 0.0], vec![0.7, 0.3, 0.0]],
            false,
            false,
        )
        .unwrap();
        let mut rng = rng::substream(5, 0);
        assert!(matches!(
            emc.sample(&mut rng),
            Err(MarkovError::NonTerminating)
        ));
        assert!(matches!(
            emc.expected_length(),
            Err(MarkovError::DivergentLength)
        ));
    }

    #[test]
    fn likelihood_matches_hand_product() {
        let emc = parity_id();
        // path s0 --0--> s1 --1--> s1, then terminate: 0.2 * 0.2 * 0.1
        let lp = emc.string_likelihood("01", LikelihoodMode::Full).unwrap();
        assert_relative_eq!(lp, (0.2f64 * 0.2 * 0.1).ln(), max_relative = 1e-12);
        let bare = emc.string_likelihood("01", LikelihoodMode::Paper).unwrap();
        assert_relative_eq!(bare, (0.2f64 * 0.2).ln(), max_relative = 1e-12);
        // emitting '0' from s1 has probability 0.7; emitting '0' twice ends at s0
        // where termination probability is 0
        assert_eq!(
            emc.string_likelihood("00", LikelihoodMode::Full).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn zero_probability_transition_gives_neg_infinity() {
        let dfa = build_parity_dfa();
        let emc = EdgeMarkovChain::new(
            dfa,
            vec![vec![0.0, 0.9, 0.1], vec![0.7, 0.2, 0.1]],
            false,
            false,
        )
        .unwrap();
        assert_eq!(
            emc.string_likelihood("0", LikelihoodMode::Full).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn expected_lengths_match_hand_solves() {
        let family = parity_shift_family(&[0.2]).unwrap();
        assert_relative_eq!(family.base().expected_length().unwrap(), 49.0, epsilon = 1e-9);
        let asym = asymmetry_chains().unwrap();
        assert_relative_eq!(asym.p2.expected_length().unwrap(), 11.5, epsilon = 1e-9);
        assert_relative_eq!(asym.q.expected_length().unwrap(), 19.0, epsilon = 1e-9);
        let q085 = family.perturbed(0.85).unwrap();
        // (2/3) E0 = 1/0.85 + 6
        let expected = (1.0 / 0.85 + 6.0) * 1.5;
        assert_relative_eq!(q085.expected_length().unwrap(), expected, epsilon = 1e-9);
        let dfa = build_parity_dfa();
        let immediate = EdgeMarkovChain::new(
            dfa,
            vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]],
            false,
            false,
        )
        .unwrap();
        assert_relative_eq!(immediate.expected_length().unwrap(), 0.0);
    }

    #[test]
    fn parity_family_matches_published_matrices() {
        let family = parity_shift_family(&[0.2, 0.85]).unwrap();
        let base = family.base();
        assert_eq!(base.rows(), &[vec![0.2, 0.8, 0.0], vec![0.7, 0.2, 0.1]]);
        let anchor = family.perturbed(0.2).unwrap();
        for (a, b) in anchor.rows().iter().flatten().zip(base.rows().iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        let q = family.perturbed(0.85).unwrap();
        assert_eq!(q.rows()[0], vec![0.85, 1.0 - 0.85, 0.0]);
        assert_relative_eq!(q.rows()[1][0], 0.05, epsilon = 1e-12);
        assert_relative_eq!(q.rows()[1][1], 0.85);
        assert!(family.perturbed(0.1).is_err());
        // negative chain is strict over the complement
        let neg = family.negative();
        assert!(neg.dfa().is_accepting(0));
        assert!(!neg.dfa().is_accepting(1));
        assert_eq!(neg.termination(1), 0.0);
    }

    #[test]
    fn modk_positive_samples_have_divisible_zero_count() {
        let family = modk_shift_family(3, &[0.2, 0.85]).unwrap();
        for i in 0..500 {
            let mut rng = rng::substream(21, i);
            let ex = family.base().sample(&mut rng).unwrap();
            let zeros = ex.x.chars().filter(|&c| c == '0').count();
            assert_eq!(zeros % 3, 0, "bad sample {:?}", ex.x);
            assert!(!ex.x.is_empty());
        }
        let anchor = family.perturbed(0.2).unwrap();
        for (a, b) in anchor
            .rows()
            .iter()
            .flatten()
            .zip(family.base().rows().iter().flatten())
        {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dataset_has_exact_label_counts_and_is_seeded() {
        let family = parity_shift_family(&[0.2]).unwrap();
        let data = sample_dataset(&family, DatasetSlice::TrainId, 160, 160, 9).unwrap();
        assert_eq!(data.len(), 320);
        assert_eq!(data.iter().filter(|e| e.y).count(), 160);
        let again = sample_dataset(&family, DatasetSlice::TrainId, 160, 160, 9).unwrap();
        assert_eq!(data, again);
        let seq = sample_dataset_seq(&family, DatasetSlice::TrainId, 160, 160, 9).unwrap();
        assert_eq!(data, seq);
        let empty = sample_dataset(&family, DatasetSlice::TrainId, 0, 0, 9).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn ood_dataset_labels_respect_positive_language() {
        let family = parity_shift_family(&[0.2]).unwrap();
        let dfa = build_parity_dfa();
        let data = sample_dataset(&family, DatasetSlice::TestOod(0.85), 200, 200, 3).unwrap();
        for ex in &data {
            assert_eq!(ex.y, dfa.accepts(&ex.x).unwrap());
        }
    }

    #[test]
    fn length_mass_and_tail_sum_to_one() {
        let family = parity_shift_family(&[0.2]).unwrap();
        for emc in [family.base().clone(), family.negative().clone()] {
            let (mass, tail) = emc.length_mass_and_tail(40);
            assert_relative_eq!(mass + tail, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_state_distribution_matches_hand_solve() {
        let emc = parity_id();
        // expected visits v0 = 40, v1 = 10
        let dist = emc.exact_state_distribution().unwrap();
        assert_relative_eq!(dist[0], 0.8, epsilon = 1e-9);
        assert_relative_eq!(dist[1], 0.2, epsilon = 1e-9);
    }

    #[test]
    fn emc_text_round_trips() {
        let emc = parity_id();
        let text = emc_to_text(&emc, "parity.dfa");
        let back = emc_from_text(&text, emc.dfa().clone()).unwrap();
        assert_eq!(emc.rows(), back.rows());
        assert_eq!(emc.forbid_empty(), back.forbid_empty());
        assert_eq!(text, emc_to_text(&back, "parity.dfa"));
    }

    #[test]
    fn dataset_text_round_trips() {
        let family = parity_shift_family(&[0.2]).unwrap();
        let data = sample_dataset(&family, DatasetSlice::TrainId, 20, 20, 4).unwrap();
        let text = dataset_to_text(&data);
        let back = dataset_from_text(&text).unwrap();
        assert_eq!(data, back);
        assert_eq!(text, dataset_to_text(&back));
    }
}
