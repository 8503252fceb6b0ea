//! From-scratch recurrent binary classifiers with optional auxiliary heads.
//!
//! Cells (vanilla RNN, LSTM, GRU) run over symbol-index sequences with an
//! embedding table in front, a logistic label head on the final hidden
//! state, and optionally a per-step state-prediction head (used by
//! state-sequence auxiliary supervision) and a whole-string count head.
//! Gradients come from manual backpropagation through time in 64-bit
//! arithmetic; training is plain SGD with global-norm clipping.

mod cells;
mod train;

pub use cells::Forward;
pub use train::{
    count_class, evaluate, forward, loss, loss_and_gradients, sgd_epoch, train, EpochStats,
    Evaluation, TrainReport, TrainSchedule, CLIP_NORM,
};

use crate::rng;
use ndarray::{Array1, Array2};
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("input must contain at least one symbol")]
    EmptyInput,
    #[error("symbol index {index} out of range for vocab {vocab}")]
    SymbolOutOfRange { index: usize, vocab: usize },
    #[error("SSAS loss requires the example's generator state sequence ({0})")]
    MissingStateSequence(String),
    #[error("model has no {0} head")]
    MissingHead(&'static str),
    #[error("count task requires the binary alphabet, got '{0}'")]
    NonBinaryAlphabet(char),
    #[error("loss became non-finite on example {example_index}")]
    NanLoss { example_index: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("learning rate must be positive")]
    BadLearningRate,
    #[error("malformed checkpoint: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Recurrent cell architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum CellKind {
    Rnn,
    Lstm,
    Gru,
}

impl CellKind {
    /// Number of stacked gate blocks in the cell weights.
    pub fn gates(self) -> usize {
        match self {
            CellKind::Rnn => 1,
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }

    pub fn parse(s: &str) -> Option<CellKind> {
        match s {
            "rnn" => Some(CellKind::Rnn),
            "lstm" => Some(CellKind::Lstm),
            "gru" => Some(CellKind::Gru),
            _ => None,
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CellKind::Rnn => write!(f, "rnn"),
            CellKind::Lstm => write!(f, "lstm"),
            CellKind::Gru => write!(f, "gru"),
        }
    }
}

/// Which auxiliary loss joins the binary classification loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum AuxMode {
    None,
    Ssas,
    Count,
}

impl AuxMode {
    pub fn parse(s: &str) -> Option<AuxMode> {
        match s {
            "none" => Some(AuxMode::None),
            "ssas" => Some(AuxMode::Ssas),
            "count" => Some(AuxMode::Count),
            _ => None,
        }
    }
}

impl std::fmt::Display for AuxMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AuxMode::None => write!(f, "none"),
            AuxMode::Ssas => write!(f, "ssas"),
            AuxMode::Count => write!(f, "count"),
        }
    }
}

/// Architecture hyperparameters. `n_states = 0` disables the state head and
/// `n_count_classes = 0` the count head.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ModelConfig {
    pub cell: CellKind,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub n_states: usize,
    pub n_count_classes: usize,
    pub aux_mode: AuxMode,
    /// `(main, aux)` loss weights; both default to 1.
    pub loss_weights: (f64, f64),
}

impl ModelConfig {
    /// The defaults used throughout the experiments: embedding and hidden
    /// width 50, ten count classes, equal loss weights.
    pub fn new(cell: CellKind, vocab_size: usize, n_states: usize, aux_mode: AuxMode) -> Self {
        Self {
            cell,
            vocab_size,
            embed_dim: 50,
            hidden_dim: 50,
            n_states,
            n_count_classes: 10,
            aux_mode,
            loss_weights: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::BadConfig(m.to_string()));
        if self.vocab_size == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return bad("vocab, embedding, and hidden dims must be at least 1");
        }
        if self.aux_mode == AuxMode::Ssas && self.n_states < 2 {
            return bad("ssas requires a state head with at least 2 classes");
        }
        if self.aux_mode == AuxMode::Count && self.n_count_classes < 2 {
            return bad("count task requires at least 2 count classes");
        }
        Ok(())
    }
}

/// All parameter tensors of one model; also reused as the gradient layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    /// vocab × embed.
    pub embedding: Array2<f64>,
    /// (gates·hidden) × embed.
    pub w_input: Array2<f64>,
    /// (gates·hidden) × hidden.
    pub w_hidden: Array2<f64>,
    /// gates·hidden.
    pub bias: Array1<f64>,
    /// hidden.
    pub label_w: Array1<f64>,
    /// length 1.
    pub label_b: Array1<f64>,
    /// n_states × hidden.
    pub state_w: Option<Array2<f64>>,
    pub state_b: Option<Array1<f64>>,
    /// n_count_classes × hidden.
    pub count_w: Option<Array2<f64>>,
    pub count_b: Option<Array1<f64>>,
}

/// Borrowed view of one named tensor, used by checkpointing, SGD updates,
/// and the finite-difference tests.
pub enum TensorView<'a> {
    M(&'a Array2<f64>),
    V(&'a Array1<f64>),
}

impl TensorView<'_> {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            TensorView::M(m) => (m.nrows(), m.ncols()),
            TensorView::V(v) => (1, v.len()),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        match self {
            TensorView::M(m) => m.as_slice().expect("standard layout"),
            TensorView::V(v) => v.as_slice().expect("standard layout"),
        }
    }
}

impl Tensors {
    pub fn zeros(config: &ModelConfig) -> Self {
        let g = config.cell.gates();
        let h = config.hidden_dim;
        let head_m = |n: usize| (n > 0).then(|| Array2::zeros((n, h)));
        let head_v = |n: usize| (n > 0).then(|| Array1::zeros(n));
        Self {
            embedding: Array2::zeros((config.vocab_size, config.embed_dim)),
            w_input: Array2::zeros((g * h, config.embed_dim)),
            w_hidden: Array2::zeros((g * h, h)),
            bias: Array1::zeros(g * h),
            label_w: Array1::zeros(h),
            label_b: Array1::zeros(1),
            state_w: head_m(config.n_states),
            state_b: head_v(config.n_states),
            count_w: head_m(config.n_count_classes),
            count_b: head_v(config.n_count_classes),
        }
    }

    /// Named tensors in a fixed order.
    pub fn named(&self) -> Vec<(&'static str, TensorView<'_>)> {
        let mut out = vec![
            ("embedding", TensorView::M(&self.embedding)),
            ("w_input", TensorView::M(&self.w_input)),
            ("w_hidden", TensorView::M(&self.w_hidden)),
            ("bias", TensorView::V(&self.bias)),
            ("label_w", TensorView::V(&self.label_w)),
            ("label_b", TensorView::V(&self.label_b)),
        ];
        if let Some(w) = &self.state_w {
            out.push(("state_w", TensorView::M(w)));
        }
        if let Some(b) = &self.state_b {
            out.push(("state_b", TensorView::V(b)));
        }
        if let Some(w) = &self.count_w {
            out.push(("count_w", TensorView::M(w)));
        }
        if let Some(b) = &self.count_b {
            out.push(("count_b", TensorView::V(b)));
        }
        out
    }

    /// Mutable slices of every tensor, in [`Tensors::named`] order.
    pub fn slices_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = vec![
            ("embedding", self.embedding.as_slice_mut().unwrap()),
            ("w_input", self.w_input.as_slice_mut().unwrap()),
            ("w_hidden", self.w_hidden.as_slice_mut().unwrap()),
            ("bias", self.bias.as_slice_mut().unwrap()),
            ("label_w", self.label_w.as_slice_mut().unwrap()),
            ("label_b", self.label_b.as_slice_mut().unwrap()),
        ];
        if let Some(w) = &mut self.state_w {
            out.push(("state_w", w.as_slice_mut().unwrap()));
        }
        if let Some(b) = &mut self.state_b {
            out.push(("state_b", b.as_slice_mut().unwrap()));
        }
        if let Some(w) = &mut self.count_w {
            out.push(("count_w", w.as_slice_mut().unwrap()));
        }
        if let Some(b) = &mut self.count_b {
            out.push(("count_b", b.as_slice_mut().unwrap()));
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.named()
            .iter()
            .all(|(_, t)| t.as_slice().iter().all(|v| v.is_finite()))
    }

    /// Squared L2 norm over every entry.
    pub fn sq_norm(&self) -> f64 {
        self.named()
            .iter()
            .map(|(_, t)| t.as_slice().iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}

/// A recurrent classifier: config plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentClassifier {
    pub config: ModelConfig,
    pub params: Tensors,
}

impl RecurrentClassifier {
    /// Drops the auxiliary heads, keeping the label path untouched.
    pub fn strip_aux_heads(&mut self) {
        self.params.state_w = None;
        self.params.state_b = None;
        self.params.count_w = None;
        self.params.count_b = None;
        self.config.n_states = 0;
        self.config.n_count_classes = 0;
        self.config.aux_mode = AuxMode::None;
    }
}

/// Initializes a model from `(config, seed)`: cell and head weights uniform
/// in `[-1/√hidden, +1/√hidden]`, embeddings uniform in `[-1, 1]` (unit
/// scale, as embedding layers conventionally are), drawn in a fixed tensor
/// order; biases zero, LSTM forget-gate bias 1.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<RecurrentClassifier, NeuralError> {
    config.validate()?;
    let mut params = Tensors::zeros(config);
    let bound = 1.0 / (config.hidden_dim as f64).sqrt();
    let mut stream = rng::substream(seed, 0);
    let mut fill = |slice: &mut [f64], scale: f64| {
        for v in slice.iter_mut() {
            *v = (rand::Rng::gen::<f64>(&mut stream) * 2.0 - 1.0) * scale;
        }
    };
    fill(params.embedding.as_slice_mut().unwrap(), 1.0);
    fill(params.w_input.as_slice_mut().unwrap(), bound);
    fill(params.w_hidden.as_slice_mut().unwrap(), bound);
    fill(params.label_w.as_slice_mut().unwrap(), bound);
    if let Some(w) = &mut params.state_w {
        fill(w.as_slice_mut().unwrap(), bound);
    }
    if let Some(w) = &mut params.count_w {
        fill(w.as_slice_mut().unwrap(), bound);
    }
    if config.cell == CellKind::Lstm {
        let h = config.hidden_dim;
        let fb: f64 = std::env::var("REGLANG_FORGET_BIAS").ok().and_then(|v| v.parse().ok()).unwrap_or(1.0);
        for v in params.bias.slice_mut(ndarray::s![h..2 * h]).iter_mut() {
            *v = fb;
        }
    }
    Ok(RecurrentClassifier {
        config: config.clone(),
        params,
    })
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

/// Serializes a model to the `rcmodel v1` text format. Values print with 17
/// significant digits, so the round-trip is bit-exact.
pub fn checkpoint_to_text(model: &RecurrentClassifier) -> String {
    let c = &model.config;
    let mut s = String::new();
    let _ = writeln!(s, "rcmodel v1");
    let _ = writeln!(
        s,
        "config cell={} vocab={} embed={} hidden={} n_states={} n_count={} aux={} w_main={:.16e} w_aux={:.16e}",
        c.cell,
        c.vocab_size,
        c.embed_dim,
        c.hidden_dim,
        c.n_states,
        c.n_count_classes,
        c.aux_mode,
        c.loss_weights.0,
        c.loss_weights.1
    );
    for (name, view) in model.params.named() {
        let (rows, cols) = view.shape();
        let _ = writeln!(s, "tensor {name} {rows} {cols}");
        for row in view.as_slice().chunks(cols) {
            let line = row
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(s, "{line}");
        }
    }
    let _ = writeln!(s, "end");
    s
}

/// Parses the `rcmodel v1` text format.
pub fn checkpoint_from_text(text: &str) -> Result<RecurrentClassifier, NeuralError> {
    let err = |m: String| NeuralError::Parse(m);
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("rcmodel v1") {
        return Err(err("expected header 'rcmodel v1'".into()));
    }
    let config_line = lines
        .next()
        .and_then(|l| l.strip_prefix("config "))
        .ok_or_else(|| err("expected config line".into()))?;
    let mut fields = std::collections::HashMap::new();
    for tok in config_line.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| err(format!("bad config token '{tok}'")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| {
        fields
            .get(k)
            .cloned()
            .ok_or_else(|| err(format!("missing config field '{k}'")))
    };
    let parse_usize =
        |k: &str| -> Result<usize, NeuralError> { get(k)?.parse().map_err(|_| err(format!("bad {k}"))) };
    let config = ModelConfig {
        cell: CellKind::parse(&get("cell")?).ok_or_else(|| err("bad cell".into()))?,
        vocab_size: parse_usize("vocab")?,
        embed_dim: parse_usize("embed")?,
        hidden_dim: parse_usize("hidden")?,
        n_states: parse_usize("n_states")?,
        n_count_classes: parse_usize("n_count")?,
        aux_mode: AuxMode::parse(&get("aux")?).ok_or_else(|| err("bad aux".into()))?,
        loss_weights: (
            get("w_main")?.parse().map_err(|_| err("bad w_main".into()))?,
            get("w_aux")?.parse().map_err(|_| err("bad w_aux".into()))?,
        ),
    };
    config.validate()?;
    let mut params = Tensors::zeros(&config);
    let expected: Vec<(String, (usize, usize))> = params
        .named()
        .iter()
        .map(|(n, v)| (n.to_string(), v.shape()))
        .collect();
    for (name, (rows, cols)) in expected {
        let header = lines
            .next()
            .ok_or_else(|| err(format!("missing tensor '{name}'")))?;
        let want = format!("tensor {name} {rows} {cols}");
        if header.trim() != want {
            return Err(err(format!("expected '{want}', got '{header}'")));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| err(format!("missing row in '{name}'")))?;
            for tok in line.split_whitespace() {
                values.push(
                    tok.parse::<f64>()
                        .map_err(|_| err(format!("bad value in '{name}'")))?,
                );
            }
        }
        if values.len() != rows * cols {
            return Err(err(format!("tensor '{name}' has wrong size")));
        }
        for (slot_name, slice) in params.slices_mut() {
            if slot_name == name {
                slice.copy_from_slice(&values);
            }
        }
    }
    if lines.next().map(str::trim) != Some("end") {
        return Err(err("missing 'end' terminator".into()));
    }
    Ok(RecurrentClassifier { config, params })
}

pub fn save_checkpoint(model: &RecurrentClassifier, path: &std::path::Path) -> Result<(), NeuralError> {
    std::fs::write(path, checkpoint_to_text(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<RecurrentClassifier, NeuralError> {
    checkpoint_from_text(&std::fs::read_to_string(path)?)
}
