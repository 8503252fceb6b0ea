//! Deterministic finite automata over small alphabets.
//!
//! States are dense indices `0..n`; the transition table is total. Symbols
//! are single characters in text interfaces and column indices internally.
//! Everything here is immutable after construction and freely shareable
//! across threads.

use std::collections::BTreeSet;
use std::fmt::Write as _;

/// Default cap on the number of strings [`Dfa::enumerate_language`] will visit.
pub const ENUMERATION_BUDGET: u64 = 1 << 20;

/// Errors from DFA construction, evaluation, and parsing.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutomataError {
    #[error("alphabet must be non-empty and duplicate-free")]
    BadAlphabet,
    #[error("modulus must be at least 2, got {0}")]
    BadModulus(usize),
    #[error("transition table must be {expected} rows of {width} entries")]
    BadTableShape { expected: usize, width: usize },
    #[error("transition target {target} out of range for {n_states} states")]
    BadTarget { target: usize, n_states: usize },
    #[error("state index {0} out of range")]
    BadState(usize),
    #[error("symbol '{symbol}' at position {position} is not in the alphabet")]
    UnknownSymbol { symbol: char, position: usize },
    #[error("enumeration budget of {budget} strings exceeded")]
    BudgetExceeded { budget: u64 },
    #[error("malformed DFA text: {0}")]
    Parse(String),
}

/// The state sequence a DFA visits while reading a string: `states[0]` is
/// the start state and `states[t]` the state after consuming `t` symbols,
/// so a length-`T` input yields `T + 1` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSequence(pub Vec<usize>);

impl StateSequence {
    pub fn states(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// State after the whole input has been consumed.
    pub fn last(&self) -> usize {
        *self.0.last().expect("state sequence is never empty")
    }
}

/// A complete deterministic finite automaton.
#[derive(Debug, Clone, PartialEq)]
pub struct Dfa {
    n_states: usize,
    alphabet: Vec<char>,
    /// Row `s`, column `a`: the state reached from `s` on symbol index `a`.
    transition: Vec<Vec<usize>>,
    start: usize,
    accepting: BTreeSet<usize>,
}

impl Dfa {
    /// Validates and builds a DFA. The transition table must be total.
    pub fn new(
        alphabet: Vec<char>,
        transition: Vec<Vec<usize>>,
        start: usize,
        accepting: BTreeSet<usize>,
    ) -> Result<Self, AutomataError> {
        let distinct: BTreeSet<char> = alphabet.iter().copied().collect();
        if alphabet.is_empty() || distinct.len() != alphabet.len() {
            return Err(AutomataError::BadAlphabet);
        }
        let n_states = transition.len();
        if n_states == 0 || transition.iter().any(|row| row.len() != alphabet.len()) {
            return Err(AutomataError::BadTableShape {
                expected: n_states.max(1),
                width: alphabet.len(),
            });
        }
        for row in &transition {
            for &target in row {
                if target >= n_states {
                    return Err(AutomataError::BadTarget { target, n_states });
                }
            }
        }
        if start >= n_states {
            return Err(AutomataError::BadState(start));
        }
        if let Some(&s) = accepting.iter().find(|&&s| s >= n_states) {
            return Err(AutomataError::BadState(s));
        }
        Ok(Self {
            n_states,
            alphabet,
            transition,
            start,
            accepting,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn accepting(&self) -> &BTreeSet<usize> {
        &self.accepting
    }

    pub fn is_accepting(&self, state: usize) -> bool {
        self.accepting.contains(&state)
    }

    /// Index of `symbol` in the alphabet, if present.
    pub fn symbol_index(&self, symbol: char) -> Option<usize> {
        self.alphabet.iter().position(|&c| c == symbol)
    }

    /// Target of the transition from `state` on alphabet column `symbol_idx`.
    pub fn step(&self, state: usize, symbol_idx: usize) -> usize {
        self.transition[state][symbol_idx]
    }

    /// Converts a string to alphabet indices, reporting the position of the
    /// first unknown symbol.
    pub fn encode(&self, input: &str) -> Result<Vec<usize>, AutomataError> {
        input
            .chars()
            .enumerate()
            .map(|(position, symbol)| {
                self.symbol_index(symbol)
                    .ok_or(AutomataError::UnknownSymbol { symbol, position })
            })
            .collect()
    }

    /// Renders alphabet indices back to a string.
    pub fn decode(&self, indices: &[usize]) -> String {
        indices.iter().map(|&i| self.alphabet[i]).collect()
    }

    /// The state sequence induced by reading `input` from the start state.
    pub fn run(&self, input: &str) -> Result<StateSequence, AutomataError> {
        Ok(self.run_indices(&self.encode(input)?))
    }

    /// As [`Dfa::run`] but over pre-encoded symbol indices.
    pub fn run_indices(&self, indices: &[usize]) -> StateSequence {
        let mut states = Vec::with_capacity(indices.len() + 1);
        let mut s = self.start;
        states.push(s);
        for &a in indices {
            s = self.transition[s][a];
            states.push(s);
        }
        StateSequence(states)
    }

    /// Whether the induced state sequence ends in an accepting state.
    pub fn accepts(&self, input: &str) -> Result<bool, AutomataError> {
        Ok(self.is_accepting(self.run(input)?.last()))
    }

    /// Membership over pre-encoded symbol indices.
    pub fn accepts_indices(&self, indices: &[usize]) -> bool {
        self.is_accepting(self.run_indices(indices).last())
    }

    /// The automaton for the complement language: same states, alphabet,
    /// transitions, and start; accepting set inverted.
    pub fn complement(&self) -> Dfa {
        let accepting = (0..self.n_states)
            .filter(|s| !self.accepting.contains(s))
            .collect();
        Dfa {
            accepting,
            ..self.clone()
        }
    }

    /// All accepted strings of length at most `max_len`, in
    /// length-then-lexicographic order (lexicographic in alphabet order).
    ///
    /// Visits every string of length `<= max_len`; errors if that count
    /// exceeds [`ENUMERATION_BUDGET`].
    pub fn enumerate_language(&self, max_len: usize) -> Result<Vec<String>, AutomataError> {
        let base = self.alphabet.len() as u64;
        let mut total: u64 = 0;
        let mut layer: u64 = 1;
        for _ in 0..=max_len {
            total = total.saturating_add(layer);
            if total > ENUMERATION_BUDGET {
                return Err(AutomataError::BudgetExceeded {
                    budget: ENUMERATION_BUDGET,
                });
            }
            layer = layer.saturating_mul(base);
        }

        let mut out = Vec::new();
        let mut word: Vec<usize> = Vec::new();
        for len in 0..=max_len {
            word.clear();
            word.resize(len, 0);
            loop {
                if self.accepts_indices(&word) {
                    out.push(self.decode(&word));
                }
                // Odometer increment in lexicographic order.
                let mut pos = len;
                loop {
                    if pos == 0 {
                        break;
                    }
                    word[pos - 1] += 1;
                    if word[pos - 1] < self.alphabet.len() {
                        break;
                    }
                    word[pos - 1] = 0;
                    pos -= 1;
                }
                if pos == 0 {
                    break;
                }
            }
        }
        Ok(out)
    }

    /// Serializes to the `dfa v1` text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dfa v1");
        let _ = writeln!(s, "states {}", self.n_states);
        let _ = writeln!(s, "alphabet {}", self.alphabet.iter().collect::<String>());
        let _ = writeln!(s, "start {}", self.start);
        let accept = self
            .accepting
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(s, "accept {accept}");
        for row in &self.transition {
            let line = row
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(s, "{line}");
        }
        s
    }

    /// Parses the `dfa v1` text format.
    pub fn from_text(text: &str) -> Result<Self, AutomataError> {
        let err = |m: &str| AutomataError::Parse(m.to_string());
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| err(&format!("missing {what} line")))
        };
        if next("header")?.trim() != "dfa v1" {
            return Err(err("expected header 'dfa v1'"));
        }
        let n_states: usize = next("states")?
            .strip_prefix("states ")
            .ok_or_else(|| err("expected 'states <n>'"))?
            .trim()
            .parse()
            .map_err(|_| err("bad state count"))?;
        let alphabet: Vec<char> = next("alphabet")?
            .strip_prefix("alphabet ")
            .ok_or_else(|| err("expected 'alphabet <chars>'"))?
            .trim()
            .chars()
            .collect();
        let start: usize = next("start")?
            .strip_prefix("start ")
            .ok_or_else(|| err("expected 'start <i>'"))?
            .trim()
            .parse()
            .map_err(|_| err("bad start index"))?;
        let accept_line = next("accept")?;
        let accept_body = accept_line
            .strip_prefix("accept")
            .ok_or_else(|| err("expected 'accept <i,j,...>'"))?
            .trim();
        let mut accepting = BTreeSet::new();
        if !accept_body.is_empty() {
            for tok in accept_body.split(',') {
                accepting.insert(
                    tok.trim()
                        .parse::<usize>()
                        .map_err(|_| err("bad accept index"))?,
                );
            }
        }
        let mut transition = Vec::with_capacity(n_states);
        for s in 0..n_states {
            let row_line = next(&format!("transition row {s}"))?;
            let row = row_line
                .split_whitespace()
                .map(|tok| tok.parse::<usize>().map_err(|_| err("bad transition")))
                .collect::<Result<Vec<_>, _>>()?;
            transition.push(row);
        }
        Dfa::new(alphabet, transition, start, accepting)
    }
}

/// The two-state parity automaton over `{0,1}`: accepts strings with an odd
/// number of `'0'` symbols. Emitting `'0'` flips the state, `'1'` self-loops.
pub fn build_parity_dfa() -> Dfa {
    Dfa::new(
        vec!['0', '1'],
        vec![vec![1, 0], vec![0, 1]],
        0,
        BTreeSet::from([1]),
    )
    .expect("parity DFA is valid")
}

/// The k-state zero-counter automaton over `{0,1}`: accepts strings whose
/// number of `'0'` symbols is divisible by `k`. `'0'` advances the counter
/// modulo `k`, `'1'` self-loops; the start state is the only accepting one.
pub fn build_mod_k_dfa(k: usize) -> Result<Dfa, AutomataError> {
    if k < 2 {
        return Err(AutomataError::BadModulus(k));
    }
    let transition = (0..k).map(|i| vec![(i + 1) % k, i]).collect();
    Dfa::new(vec!['0', '1'], transition, 0, BTreeSet::from([0]))
}
