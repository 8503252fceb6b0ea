//! Regular-language classification under distribution shift.
//!
//! The crate bundles everything needed to study how recurrent classifiers
//! generalize when the string distribution moves while the labeling language
//! stays fixed:
//!
//! - [`automata`]: DFAs over small alphabets, membership, induced state
//!   sequences, complements, and the parity / mod-k language families.
//! - [`markov`]: edge Markov chains tied to a DFA — samplers with exact
//!   log-likelihoods, expected lengths, and balanced labeled datasets.
//! - [`shift`]: shift norms, worst-case bounds, Monte-Carlo and
//!   state-distribution TV estimators, an exact enumeration oracle, and
//!   accuracy lower bounds.
//! - [`neural`]: from-scratch RNN/LSTM/GRU binary classifiers with optional
//!   state-supervision and count auxiliary heads, trained by manual
//!   backpropagation through time.
//! - [`metrics`]: accuracy, Brier score, and expected calibration error.
//! - [`harness`]: seeded experiment runners, config files, CSV output, and
//!   JSON run manifests.
//!
//! Batch operations (dataset sampling, Monte-Carlo estimators, experiment
//! grids) run data-parallel under the default `parallel` feature and fall
//! back to sequential execution without it. Results are bit-identical either
//! way: every example draws from its own RNG substream and reductions happen
//! in index order.

pub mod automata;
pub mod exec;
pub mod harness;
pub mod markov;
pub mod metrics;
pub mod neural;
pub mod rng;
pub mod shift;

pub use automata::{build_mod_k_dfa, build_parity_dfa, Dfa, StateSequence};
pub use markov::{EdgeMarkovChain, LabeledExample, ShiftFamily};
pub use neural::{ModelConfig, RecurrentClassifier};
pub use shift::ShiftReport;
