//! Experiment configuration, seeding, and the shared run cache.
//!
//! Every trainable unit of work (one model on one data draw) is a
//! [`CellSpec`]. Specs canonicalize to key strings; all RNG seeds derive
//! from `(base_seed, key)`, so a cell's result is a pure function of the
//! spec and the base seed — independent of which experiment asks for it,
//! of execution order, and of thread count. Experiments that share cells
//! (e.g. the LSTM column of the cell comparison and the shift sweep)
//! therefore train them once through the [`RunCache`].

pub mod output;
pub mod runners;

use crate::markov::{self, DatasetSlice, FamilyKind, ShiftFamily};
use crate::neural::{
    self, evaluate, init_model, train, AuxMode, CellKind, ModelConfig, NeuralError, TrainSchedule,
};
use crate::rng;
use crate::shift::ShiftError;
use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config file {0}: {1}")]
    ConfigIo(PathBuf, std::io::Error),
    #[error("config line {line}: {message}")]
    ConfigParse { line: usize, message: String },
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Markov(#[from] markov::MarkovError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Shift(#[from] ShiftError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fully resolved experiment configuration; the flat `key = value` config
/// file format maps one key per field.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub language: FamilyKind,
    pub delta_grid: Vec<f64>,
    pub n_train_pos: usize,
    pub n_train_neg: usize,
    pub n_dev_pos: usize,
    pub n_dev_neg: usize,
    pub n_test_pos: usize,
    pub n_test_neg: usize,
    pub cell: CellKind,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub count_classes: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub n_repeats: usize,
    pub estimator_samples: usize,
    pub base_seed: u64,
    pub out_dir: PathBuf,
    /// Total training-set sizes for the sample-size sweep.
    pub sweep_sizes: Vec<usize>,
    /// Auxiliary modes compared by the sample-size sweep.
    pub aux_modes: Vec<AuxMode>,
    /// Deltas of the calibration table (shift norms 0, 0.4, 0.8, 1.2).
    pub calibration_deltas: Vec<f64>,
    /// Moduli of the modulo-language table.
    pub mod_ks: Vec<usize>,
    /// Delta of the modulo table (shift norm 1.3).
    pub table_delta: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            language: FamilyKind::Parity,
            delta_grid: default_delta_grid(),
            n_train_pos: 1600,
            n_train_neg: 1600,
            n_dev_pos: 200,
            n_dev_neg: 200,
            n_test_pos: 2000,
            n_test_neg: 2000,
            cell: CellKind::Lstm,
            embed_dim: 50,
            hidden_dim: 50,
            count_classes: 10,
            lr: 0.01,
            batch_size: 32,
            max_epochs: 30,
            patience: 3,
            n_repeats: 10,
            estimator_samples: 10_000,
            base_seed: 7,
            out_dir: PathBuf::from("runs"),
            sweep_sizes: (1..=10).map(|i| i * 400).collect(),
            aux_modes: vec![AuxMode::None, AuxMode::Ssas, AuxMode::Count],
            calibration_deltas: vec![0.2, 0.4, 0.6, 0.8],
            mod_ks: vec![3, 4, 5],
            table_delta: 0.85,
        }
    }
}

/// The delta grid of the shift figures: 0.2 to 0.85 in steps of 0.05.
pub fn default_delta_grid() -> Vec<f64> {
    (4..=17).map(|i| i as f64 / 20.0).collect()
}

impl ExperimentConfig {
    pub fn schedule(&self) -> TrainSchedule {
        TrainSchedule {
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
        }
    }

    pub fn family(&self) -> Result<ShiftFamily, HarnessError> {
        Ok(match self.language {
            FamilyKind::Parity => markov::parity_shift_family(&self.delta_grid)?,
            FamilyKind::ModK(k) => markov::modk_shift_family(k, &self.delta_grid)?,
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n_repeats == 0 {
            return Err(HarnessError::ConfigInvalid("n_repeats must be >= 1".into()));
        }
        if self.delta_grid.is_empty() {
            return Err(HarnessError::ConfigInvalid("delta_grid is empty".into()));
        }
        for &d in self
            .delta_grid
            .iter()
            .chain(&self.calibration_deltas)
            .chain(std::iter::once(&self.table_delta))
        {
            if !(0.2..=0.85).contains(&d) {
                return Err(HarnessError::ConfigInvalid(format!(
                    "delta {d} outside [0.2, 0.85]"
                )));
            }
        }
        Ok(())
    }

    /// Parses the flat `key = value` config format (UTF-8, `#` comments).
    /// Unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self, HarnessError> {
        let mut config = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| HarnessError::ConfigParse {
                line: idx + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected 'key = value'".to_string()))?;
            let key = key.trim();
            let value = value.trim();
            config.apply(key, value).map_err(err)?;
        }
        config.validate()?;
        Ok(config)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn usize_of(v: &str) -> Result<usize, String> {
            v.parse().map_err(|_| format!("bad integer '{v}'"))
        }
        fn f64_of(v: &str) -> Result<f64, String> {
            v.parse().map_err(|_| format!("bad number '{v}'"))
        }
        fn list<T, F: Fn(&str) -> Result<T, String>>(v: &str, f: F) -> Result<Vec<T>, String> {
            v.split(',').map(|tok| f(tok.trim())).collect()
        }
        match key {
            "language" => {
                self.language = if value == "parity" {
                    FamilyKind::Parity
                } else if let Some(k) = value.strip_prefix("mod-") {
                    FamilyKind::ModK(usize_of(k)?)
                } else {
                    return Err(format!("unknown language '{value}'"));
                };
            }
            "delta_grid" => self.delta_grid = list(value, f64_of)?,
            "train_pos" => self.n_train_pos = usize_of(value)?,
            "train_neg" => self.n_train_neg = usize_of(value)?,
            "dev_pos" => self.n_dev_pos = usize_of(value)?,
            "dev_neg" => self.n_dev_neg = usize_of(value)?,
            "test_pos" => self.n_test_pos = usize_of(value)?,
            "test_neg" => self.n_test_neg = usize_of(value)?,
            "cell" => {
                self.cell =
                    CellKind::parse(value).ok_or_else(|| format!("unknown cell '{value}'"))?
            }
            "embed_dim" => self.embed_dim = usize_of(value)?,
            "hidden_dim" => self.hidden_dim = usize_of(value)?,
            "count_classes" => self.count_classes = usize_of(value)?,
            "lr" => self.lr = f64_of(value)?,
            "batch_size" => self.batch_size = usize_of(value)?,
            "max_epochs" => self.max_epochs = usize_of(value)?,
            "patience" => self.patience = usize_of(value)?,
            "n_repeats" => self.n_repeats = usize_of(value)?,
            "estimator_samples" => self.estimator_samples = usize_of(value)?,
            "base_seed" => {
                self.base_seed = value.parse().map_err(|_| format!("bad seed '{value}'"))?
            }
            "out_dir" => self.out_dir = PathBuf::from(value),
            "sweep_sizes" => self.sweep_sizes = list(value, usize_of)?,
            "aux_modes" => {
                self.aux_modes = list(value, |v| {
                    AuxMode::parse(v).ok_or_else(|| format!("unknown aux mode '{v}'"))
                })?
            }
            "calibration_deltas" => self.calibration_deltas = list(value, f64_of)?,
            "mod_ks" => self.mod_ks = list(value, usize_of)?,
            "table_delta" => self.table_delta = f64_of(value)?,
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Canonical text (sorted keys); what the config hash covers.
    pub fn canonical_text(&self) -> String {
        let mut pairs: Vec<(String, String)> = vec![
            ("language".into(), self.language.to_string()),
            ("delta_grid".into(), join_f64(&self.delta_grid)),
            ("train_pos".into(), self.n_train_pos.to_string()),
            ("train_neg".into(), self.n_train_neg.to_string()),
            ("dev_pos".into(), self.n_dev_pos.to_string()),
            ("dev_neg".into(), self.n_dev_neg.to_string()),
            ("test_pos".into(), self.n_test_pos.to_string()),
            ("test_neg".into(), self.n_test_neg.to_string()),
            ("cell".into(), self.cell.to_string()),
            ("embed_dim".into(), self.embed_dim.to_string()),
            ("hidden_dim".into(), self.hidden_dim.to_string()),
            ("count_classes".into(), self.count_classes.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("max_epochs".into(), self.max_epochs.to_string()),
            ("patience".into(), self.patience.to_string()),
            ("n_repeats".into(), self.n_repeats.to_string()),
            ("estimator_samples".into(), self.estimator_samples.to_string()),
            ("base_seed".into(), self.base_seed.to_string()),
            (
                "sweep_sizes".into(),
                self.sweep_sizes
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            (
                "aux_modes".into(),
                self.aux_modes
                    .iter()
                    .map(|m| m.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("calibration_deltas".into(), join_f64(&self.calibration_deltas)),
            (
                "mod_ks".into(),
                self.mod_ks
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("table_delta".into(), self.table_delta.to_string()),
        ];
        pairs.sort();
        let mut out = String::new();
        for (k, v) in pairs {
            out.push_str(&k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Hex SHA-256 of the canonical text; stable under key reordering in the
    /// source file.
    pub fn hash(&self) -> String {
        use sha2::Digest;
        let digest = sha2::Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn join_f64(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// One trainable unit: a model variant on one data draw of one family cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub family: FamilyKind,
    /// Delta of the out-of-domain test chain.
    pub delta: f64,
    pub cell: CellKind,
    pub aux: AuxMode,
    pub n_train_pos: usize,
    pub n_train_neg: usize,
    pub n_dev_pos: usize,
    pub n_dev_neg: usize,
    pub n_test_pos: usize,
    pub n_test_neg: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub count_classes: usize,
    pub schedule: TrainSchedule,
    pub repeat: usize,
}

impl CellSpec {
    pub fn from_config(config: &ExperimentConfig, delta: f64, aux: AuxMode, repeat: usize) -> Self {
        Self {
            family: config.language,
            delta,
            cell: config.cell,
            aux,
            n_train_pos: config.n_train_pos,
            n_train_neg: config.n_train_neg,
            n_dev_pos: config.n_dev_pos,
            n_dev_neg: config.n_dev_neg,
            n_test_pos: config.n_test_pos,
            n_test_neg: config.n_test_neg,
            embed_dim: config.embed_dim,
            hidden_dim: config.hidden_dim,
            count_classes: config.count_classes,
            schedule: config.schedule(),
            repeat: repeat,
        }
    }

    /// Key of the data draw: everything that determines the four datasets.
    /// Model variants (cell, aux) share it, so E2E and SSAS see identical
    /// data within a `(delta, repeat)` cell.
    pub fn data_key(&self) -> String {
        format!(
            "data|{}|delta={}|tr={}+{}|dev={}+{}|te={}+{}|rep={}",
            self.family,
            self.delta,
            self.n_train_pos,
            self.n_train_neg,
            self.n_dev_pos,
            self.n_dev_neg,
            self.n_test_pos,
            self.n_test_neg,
            self.repeat
        )
    }

    /// Key of the full cell including the model variant.
    pub fn model_key(&self) -> String {
        format!(
            "{}|cell={}|aux={}|dims={}x{}|sched=lr{}-b{}-e{}-p{}",
            self.data_key(),
            self.cell,
            self.aux,
            self.embed_dim,
            self.hidden_dim,
            self.schedule.lr,
            self.schedule.batch_size,
            self.schedule.max_epochs,
            self.schedule.patience
        )
    }
}

/// Everything an experiment needs from one trained cell.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub train_acc: f64,
    pub id_test_acc: f64,
    pub ood_test_acc: f64,
    /// Ψ on the o.o.d. test set plus its labels, for calibration metrics.
    pub ood_psi: Vec<f64>,
    pub ood_y: Vec<bool>,
    /// SSAS cells: pooled per-step state-head error on the i.d. dev set.
    pub state_step_err: f64,
    /// SSAS cells: final-state head error on the i.d. dev set.
    pub state_final_err: f64,
    pub epochs: usize,
    pub wall_secs: f64,
    pub seed: u64,
}

/// Trains and evaluates one cell from scratch. Deterministic in
/// `(spec, base_seed)`.
pub fn run_cell(spec: &CellSpec, base_seed: u64) -> Result<CellOutcome, HarnessError> {
    let start = std::time::Instant::now();
    let family = match spec.family {
        FamilyKind::Parity => markov::parity_shift_family(&[spec.delta])?,
        FamilyKind::ModK(k) => markov::modk_shift_family(k, &[spec.delta])?,
    };
    let data_seed = rng::mix_str(base_seed, &spec.data_key());
    let train_set = markov::sample_dataset(
        &family,
        DatasetSlice::TrainId,
        spec.n_train_pos,
        spec.n_train_neg,
        rng::mix(data_seed, &[1]),
    )?;
    let dev_set = markov::sample_dataset(
        &family,
        DatasetSlice::TrainId,
        spec.n_dev_pos,
        spec.n_dev_neg,
        rng::mix(data_seed, &[2]),
    )?;
    let id_test = markov::sample_dataset(
        &family,
        DatasetSlice::TestId,
        spec.n_test_pos,
        spec.n_test_neg,
        rng::mix(data_seed, &[3]),
    )?;
    let ood_test = markov::sample_dataset(
        &family,
        DatasetSlice::TestOod(spec.delta),
        spec.n_test_pos,
        spec.n_test_neg,
        rng::mix(data_seed, &[4]),
    )?;

    let n_states = if spec.aux == AuxMode::Ssas {
        family.label_dfa().n_states()
    } else {
        0
    };
    let n_count = if spec.aux == AuxMode::Count {
        spec.count_classes
    } else {
        0
    };
    let config = ModelConfig {
        cell: spec.cell,
        vocab_size: family.label_dfa().alphabet().len(),
        embed_dim: spec.embed_dim,
        hidden_dim: spec.hidden_dim,
        n_states,
        n_count_classes: n_count,
        aux_mode: spec.aux,
        loss_weights: (1.0, 1.0),
    };
    let model_seed = rng::mix_str(base_seed, &spec.model_key());
    let model = init_model(&config, rng::mix(model_seed, &[5]))?;
    let (model, report) = train(
        model,
        &train_set,
        &dev_set,
        &spec.schedule,
        rng::mix(model_seed, &[6]),
    )?;

    let train_eval = evaluate(&model, &train_set)?;
    let id_eval = evaluate(&model, &id_test)?;
    let ood_eval = evaluate(&model, &ood_test)?;
    let (state_step_err, state_final_err) = if spec.aux == AuxMode::Ssas {
        state_head_errors(&model, &dev_set)?
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(CellOutcome {
        train_acc: train_eval.accuracy,
        id_test_acc: id_eval.accuracy,
        ood_test_acc: ood_eval.accuracy,
        ood_psi: ood_eval.psi,
        ood_y: ood_test.iter().map(|e| e.y).collect(),
        state_step_err,
        state_final_err,
        epochs: report.stopped_epoch,
        wall_secs: start.elapsed().as_secs_f64(),
        seed: model_seed,
    })
}

/// Pooled per-step and final-state argmax error of the state head on
/// held-out data.
pub fn state_head_errors(
    model: &neural::RecurrentClassifier,
    data: &[LabeledExampleSlice],
) -> Result<(f64, f64), HarnessError> {
    let mut step_err = 0usize;
    let mut steps = 0usize;
    let mut final_err = 0usize;
    for ex in data {
        let xs: Vec<usize> = ex
            .x
            .chars()
            .map(|c| c.to_digit(10).unwrap_or(0) as usize)
            .collect();
        let out = neural::forward(model, &xs)?;
        let logits = out
            .state_logits
            .as_ref()
            .ok_or(NeuralError::MissingHead("state"))?;
        let t_len = xs.len();
        for t in 1..=t_len {
            let row = logits.row(t - 1);
            let pred = argmax(row.as_slice().unwrap());
            if pred != ex.z.states()[t] {
                step_err += 1;
                if t == t_len {
                    final_err += 1;
                }
            }
            steps += 1;
        }
    }
    Ok((
        step_err as f64 / steps.max(1) as f64,
        final_err as f64 / data.len().max(1) as f64,
    ))
}

type LabeledExampleSlice = crate::markov::LabeledExample;

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Process-wide cache of trained cells, keyed by `model_key`. Missing cells
/// are computed on the parallel pool in deterministic key order.
pub struct RunCache {
    base_seed: u64,
    cells: Mutex<HashMap<String, std::sync::Arc<CellOutcome>>>,
}

impl RunCache {
    pub fn new(base_seed: u64) -> Self {
        Self {
            base_seed,
            cells: Mutex::new(HashMap::new()),
        }
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    /// Ensures every spec has been run, computing missing cells in parallel
    /// (cells are independent; parallelism across cells keeps each SGD
    /// stream sequential).
    pub fn ensure(&self, specs: &[CellSpec]) -> Result<(), HarnessError> {
        let mut missing: Vec<CellSpec> = Vec::new();
        {
            let cells = self.cells.lock().unwrap();
            let mut seen = std::collections::HashSet::new();
            for spec in specs {
                let key = spec.model_key();
                if !cells.contains_key(&key) && seen.insert(key) {
                    missing.push(spec.clone());
                }
            }
        }
        if missing.is_empty() {
            return Ok(());
        }
        let base = self.base_seed;
        let results = crate::exec::map_indexed(missing.len(), |i| {
            let spec = &missing[i];
            let out = run_cell(spec, base);
            eprintln!(
                "[cell {}/{}] {} ({})",
                i + 1,
                missing.len(),
                spec.model_key(),
                match &out {
                    Ok(o) => format!("ood {:.3}, {} epochs, {:.1}s", o.ood_test_acc, o.epochs, o.wall_secs),
                    Err(e) => format!("error: {e}"),
                }
            );
            out.map(std::sync::Arc::new)
        });
        let mut cells = self.cells.lock().unwrap();
        for (spec, result) in missing.iter().zip(results) {
            cells.insert(spec.model_key(), result?);
        }
        Ok(())
    }

    /// Fetches a finished cell; call [`RunCache::ensure`] first.
    pub fn get(&self, spec: &CellSpec) -> Result<std::sync::Arc<CellOutcome>, HarnessError> {
        let key = spec.model_key();
        if let Some(hit) = self.cells.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        self.ensure(std::slice::from_ref(spec))?;
        Ok(self.cells.lock().unwrap().get(&key).unwrap().clone())
    }
}
