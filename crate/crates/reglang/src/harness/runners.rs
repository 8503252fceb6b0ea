//! Experiment runners: one function per figure or table.
//!
//! Runners assemble [`CellSpec`] grids, let the [`RunCache`] train whatever
//! is missing, and reduce outcomes into result tables. They return typed
//! results and, when an output directory is given, also write CSVs plus a
//! JSON manifest.

use super::output::{write_outputs, CellSeedRecord, OutputFormat, Table};
use super::{CellSpec, ExperimentConfig, HarnessError, RunCache};
use crate::markov::{self, FamilyKind};
use crate::neural::{self, AuxMode, CellKind, ModelConfig};
use crate::rng;
use crate::shift;
use std::path::Path;

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    sum / n.max(1) as f64
}

/// One `(delta, repeat, mode)` row of the shift sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub delta: f64,
    pub shift_norm: f64,
    pub repeat: usize,
    pub mode: AuxMode,
    pub train_acc: f64,
    pub id_test_acc: f64,
    pub ood_test_acc: f64,
    /// Theorem-3 estimate inputs (E2E rows) or Theorem-5 estimate (SSAS rows).
    pub tv_mc: f64,
    pub tv_mc_se: f64,
    pub ltilde: f64,
    pub comp_bound: f64,
    pub acc_estimate_raw: f64,
    pub acc_estimate: f64,
}

/// Aggregated per-delta curves: the four lines of the shift figure.
#[derive(Debug, Clone)]
pub struct SweepCurvePoint {
    pub delta: f64,
    pub shift_norm: f64,
    pub e2e_ood_acc: f64,
    pub ssas_ood_acc: f64,
    pub e2e_estimate: f64,
    pub ssas_estimate: f64,
    pub e2e_train_acc: f64,
    pub ssas_train_acc: f64,
    pub e2e_id_acc: f64,
    pub ssas_id_acc: f64,
}

#[derive(Debug, Clone)]
pub struct ShiftSweepResult {
    pub rows: Vec<SweepRow>,
    pub curves: Vec<SweepCurvePoint>,
}

/// Trains E2E and SSAS models over the delta grid and pairs their empirical
/// out-of-domain accuracy with the Theorem-3 / Theorem-5 accuracy estimates.
pub fn run_shift_sweep(
    config: &ExperimentConfig,
    cache: &RunCache,
    out_dir: Option<&Path>,
    format: OutputFormat,
) -> Result<ShiftSweepResult, HarnessError> {
    let started = std::time::Instant::now();
    config.validate()?;
    let family = config.family()?;
    let mut specs = Vec::new();
    for &delta in &config.delta_grid {
        for repeat in 0..config.n_repeats {
            specs.push(CellSpec::from_config(config, delta, AuxMode::None, repeat));
            specs.push(CellSpec::from_config(config, delta, AuxMode::Ssas, repeat));
        }
    }
    cache.ensure(&specs)?;

    let t_bar = family.base().expected_length()?;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for &delta in &config.delta_grid {
        let q = family.perturbed(delta)?;
        let norm = shift::shift_norm(family.base(), &q)?;
        let mut agg = [[0.0f64; 5]; 2]; // [mode][train, id, ood, est, raw-est]
        for repeat in 0..config.n_repeats {
            let est_seed = rng::mix_str(
                cache.base_seed(),
                &format!("estimator|{}|delta={}|rep={}", config.language, delta, repeat),
            );
            let tv = shift::estimate_tv_strings_mc(
                family.base(),
                &q,
                config.estimator_samples,
                rng::mix(est_seed, &[1]),
            )?;
            for (mode_idx, mode) in [AuxMode::None, AuxMode::Ssas].into_iter().enumerate() {
                let spec = CellSpec::from_config(config, delta, mode, repeat);
                let cell = cache.get(&spec)?;
                let (ltilde, comp_bound, raw_est, est) = match mode {
                    AuxMode::None => {
                        // Lemma 1 + Theorem 3 with unshifted negatives:
                        // estimate = 1 - L_P - TV(P,Q)/2, L_P from held-out
                        // in-domain error.
                        let l_p = 1.0 - cell.id_test_acc;
                        let shift_term = shift::mixture_tv_bound(tv.mean, 0.0);
                        let raw = 1.0 - l_p - shift_term;
                        (f64::NAN, f64::NAN, raw, raw.clamp(0.0, 1.0))
                    }
                    _ => {
                        // Theorem 5 with the state-aggregation modification;
                        // L̃_P from the trained state head's held-out errors.
                        let ltilde =
                            t_bar * cell.state_step_err + cell.state_final_err;
                        let bound = shift::bound_comp_estimate(
                            family.base(),
                            &q,
                            config.estimator_samples,
                            ltilde,
                            rng::mix(est_seed, &[2]),
                        )?;
                        let raw = 1.0 - bound;
                        (ltilde, bound, raw, raw.clamp(0.0, 1.0))
                    }
                };
                agg[mode_idx][0] += cell.train_acc;
                agg[mode_idx][1] += cell.id_test_acc;
                agg[mode_idx][2] += cell.ood_test_acc;
                agg[mode_idx][3] += est;
                agg[mode_idx][4] += raw_est;
                rows.push(SweepRow {
                    delta,
                    shift_norm: norm,
                    repeat,
                    mode,
                    train_acc: cell.train_acc,
                    id_test_acc: cell.id_test_acc,
                    ood_test_acc: cell.ood_test_acc,
                    tv_mc: tv.mean,
                    tv_mc_se: tv.std_error,
                    ltilde,
                    comp_bound,
                    acc_estimate_raw: raw_est,
                    acc_estimate: est,
                });
            }
        }
        let n = config.n_repeats as f64;
        curves.push(SweepCurvePoint {
            delta,
            shift_norm: norm,
            e2e_ood_acc: agg[0][2] / n,
            ssas_ood_acc: agg[1][2] / n,
            e2e_estimate: agg[0][3] / n,
            ssas_estimate: agg[1][3] / n,
            e2e_train_acc: agg[0][0] / n,
            ssas_train_acc: agg[1][0] / n,
            e2e_id_acc: agg[0][1] / n,
            ssas_id_acc: agg[1][1] / n,
        });
    }

    if let Some(dir) = out_dir {
        let mut runs = Table::new(
            "shift_sweep_runs",
            "delta,shift_norm,repeat,mode,train_acc,id_test_acc,ood_test_acc,tv_mc,tv_mc_se,ltilde,comp_bound,acc_estimate_raw,acc_estimate",
        );
        for r in &rows {
            runs.push(format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.delta,
                r.shift_norm,
                r.repeat,
                r.mode,
                r.train_acc,
                r.id_test_acc,
                r.ood_test_acc,
                r.tv_mc,
                r.tv_mc_se,
                r.ltilde,
                r.comp_bound,
                r.acc_estimate_raw,
                r.acc_estimate
            ));
        }
        let mut curve_table = Table::new(
            "shift_sweep_curves",
            "delta,shift_norm,e2e_ood_acc,ssas_ood_acc,e2e_estimate,ssas_estimate,e2e_train_acc,ssas_train_acc,e2e_id_acc,ssas_id_acc",
        );
        for c in &curves {
            curve_table.push(format!(
                "{},{},{},{},{},{},{},{},{},{}",
                c.delta,
                c.shift_norm,
                c.e2e_ood_acc,
                c.ssas_ood_acc,
                c.e2e_estimate,
                c.ssas_estimate,
                c.e2e_train_acc,
                c.ssas_train_acc,
                c.e2e_id_acc,
                c.ssas_id_acc
            ));
        }
        let seeds = seed_records(cache, &specs)?;
        write_outputs(
            dir,
            "shift_sweep",
            config,
            &[runs, curve_table],
            seeds,
            started.elapsed().as_secs_f64(),
            format,
        )?;
    }
    Ok(ShiftSweepResult { rows, curves })
}

fn seed_records(cache: &RunCache, specs: &[CellSpec]) -> Result<Vec<CellSeedRecord>, HarnessError> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for spec in specs {
        let key = spec.model_key();
        if seen.insert(key.clone()) {
            let cell = cache.get(spec)?;
            out.push(CellSeedRecord {
                key,
                seed: cell.seed,
                epochs: cell.epochs,
                wall_secs: cell.wall_secs,
            });
        }
    }
    Ok(out)
}

/// One modulo-language row: mean o.o.d. accuracies and relative improvement.
#[derive(Debug, Clone)]
pub struct ModuloRow {
    pub k: usize,
    pub e2e_ood_acc: f64,
    pub ssas_ood_acc: f64,
    pub relative_improvement: f64,
    pub e2e_id_acc: f64,
    pub ssas_id_acc: f64,
}

/// E2E vs SSAS on the mod-k languages at the table delta (shift norm 1.3).
pub fn run_modulo_table(
    config: &ExperimentConfig,
    cache: &RunCache,
    out_dir: Option<&Path>,
    format: OutputFormat,
) -> Result<Vec<ModuloRow>, HarnessError> {
    let started = std::time::Instant::now();
    config.validate()?;
    let mut all_specs = Vec::new();
    let mut rows = Vec::new();
    for &k in &config.mod_ks {
        let mut sub = config.clone();
        sub.language = FamilyKind::ModK(k);
        let mut specs = Vec::new();
        for repeat in 0..config.n_repeats {
            specs.push(CellSpec::from_config(&sub, config.table_delta, AuxMode::None, repeat));
            specs.push(CellSpec::from_config(&sub, config.table_delta, AuxMode::Ssas, repeat));
        }
        cache.ensure(&specs)?;
        let e2e = mean(
            specs
                .iter()
                .filter(|s| s.aux == AuxMode::None)
                .map(|s| cache.get(s).map(|c| c.ood_test_acc))
                .collect::<Result<Vec<_>, _>>()?,
        );
        let ssas = mean(
            specs
                .iter()
                .filter(|s| s.aux == AuxMode::Ssas)
                .map(|s| cache.get(s).map(|c| c.ood_test_acc))
                .collect::<Result<Vec<_>, _>>()?,
        );
        let e2e_id = mean(
            specs
                .iter()
                .filter(|s| s.aux == AuxMode::None)
                .map(|s| cache.get(s).map(|c| c.id_test_acc))
                .collect::<Result<Vec<_>, _>>()?,
        );
        let ssas_id = mean(
            specs
                .iter()
                .filter(|s| s.aux == AuxMode::Ssas)
                .map(|s| cache.get(s).map(|c| c.id_test_acc))
                .collect::<Result<Vec<_>, _>>()?,
        );
        rows.push(ModuloRow {
            k,
            e2e_ood_acc: e2e,
            ssas_ood_acc: ssas,
            relative_improvement: (ssas - e2e) / e2e * 100.0,
            e2e_id_acc: e2e_id,
            ssas_id_acc: ssas_id,
        });
        all_specs.extend(specs);
    }
    if let Some(dir) = out_dir {
        let mut table = Table::new(
            "modulo_table",
            "k,e2e_ood_acc,ssas_ood_acc,relative_improvement_pct,e2e_id_acc,ssas_id_acc",
        );
        for r in &rows {
            table.push(format!(
                "{},{},{},{},{},{}",
                r.k,
                r.e2e_ood_acc,
                r.ssas_ood_acc,
                r.relative_improvement,
                r.e2e_id_acc,
                r.ssas_id_acc
            ));
        }
        let seeds = seed_records(cache, &all_specs)?;
        write_outputs(
            dir,
            "modulo_table",
            config,
            &[table],
            seeds,
            started.elapsed().as_secs_f64(),
            format,
        )?;
    }
    Ok(rows)
}

/// One point of the sample-size sweep.
#[derive(Debug, Clone)]
pub struct SizePoint {
    pub train_size: usize,
    pub aux: AuxMode,
    pub train_acc: f64,
    pub id_test_acc: f64,
    pub ood_test_acc: f64,
}

/// Accuracy as a function of the number of training examples at the fixed
/// table delta, for the auxiliary modes in `config.aux_modes`.
pub fn run_sample_size_sweep(
    config: &ExperimentConfig,
    cache: &RunCache,
    out_dir: Option<&Path>,
    format: OutputFormat,
) -> Result<Vec<SizePoint>, HarnessError> {
    let started = std::time::Instant::now();
    config.validate()?;
    let mut specs = Vec::new();
    for &size in &config.sweep_sizes {
        for &aux in &config.aux_modes {
            for repeat in 0..config.n_repeats {
                let mut sub = config.clone();
                sub.n_train_pos = size / 2;
                sub.n_train_neg = size - size / 2;
                specs.push(CellSpec::from_config(&sub, config.table_delta, aux, repeat));
            }
        }
    }
    cache.ensure(&specs)?;
    let mut points = Vec::new();
    for &size in &config.sweep_sizes {
        for &aux in &config.aux_modes {
            let matching: Vec<&CellSpec> = specs
                .iter()
                .filter(|s| s.aux == aux && s.n_train_pos + s.n_train_neg == size)
                .collect();
            let outcomes = matching
                .iter()
                .map(|s| cache.get(s))
                .collect::<Result<Vec<_>, _>>()?;
            points.push(SizePoint {
                train_size: size,
                aux,
                train_acc: mean(outcomes.iter().map(|c| c.train_acc)),
                id_test_acc: mean(outcomes.iter().map(|c| c.id_test_acc)),
                ood_test_acc: mean(outcomes.iter().map(|c| c.ood_test_acc)),
            });
        }
    }
    if let Some(dir) = out_dir {
        let mut table = Table::new(
            "sample_size_sweep",
            "train_size,aux,train_acc,id_test_acc,ood_test_acc",
        );
        for p in &points {
            table.push(format!(
                "{},{},{},{},{}",
                p.train_size, p.aux, p.train_acc, p.id_test_acc, p.ood_test_acc
            ));
        }
        let seeds = seed_records(cache, &specs)?;
        write_outputs(
            dir,
            "sample_size_sweep",
            config,
            &[table],
            seeds,
            started.elapsed().as_secs_f64(),
            format,
        )?;
    }
    Ok(points)
}

/// One `(cell, mode, delta)` point of the cell comparison.
#[derive(Debug, Clone)]
pub struct CellComparisonPoint {
    pub cell: CellKind,
    pub mode: AuxMode,
    pub delta: f64,
    pub shift_norm: f64,
    pub train_acc: f64,
    pub id_test_acc: f64,
    pub ood_test_acc: f64,
}

/// O.o.d. accuracy of LSTM/GRU/RNN cells under E2E and SSAS training across
/// the delta grid.
pub fn run_cell_comparison(
    config: &ExperimentConfig,
    cache: &RunCache,
    out_dir: Option<&Path>,
    format: OutputFormat,
) -> Result<Vec<CellComparisonPoint>, HarnessError> {
    let started = std::time::Instant::now();
    config.validate()?;
    let family = config.family()?;
    let cells = [CellKind::Lstm, CellKind::Gru, CellKind::Rnn];
    let modes = [AuxMode::None, AuxMode::Ssas];
    let mut specs = Vec::new();
    for &cell in &cells {
        for &mode in &modes {
            for &delta in &config.delta_grid {
                for repeat in 0..config.n_repeats {
                    let mut sub = config.clone();
                    sub.cell = cell;
                    specs.push(CellSpec::from_config(&sub, delta, mode, repeat));
                }
            }
        }
    }
    cache.ensure(&specs)?;
    let mut points = Vec::new();
    for &cell in &cells {
        for &mode in &modes {
            for &delta in &config.delta_grid {
                let matching: Vec<&CellSpec> = specs
                    .iter()
                    .filter(|s| s.cell == cell && s.aux == mode && s.delta == delta)
                    .collect();
                let outcomes = matching
                    .iter()
                    .map(|s| cache.get(s))
                    .collect::<Result<Vec<_>, _>>()?;
                let q = family.perturbed(delta)?;
                points.push(CellComparisonPoint {
                    cell,
                    mode,
                    delta,
                    shift_norm: shift::shift_norm(family.base(), &q)?,
                    train_acc: mean(outcomes.iter().map(|c| c.train_acc)),
                    id_test_acc: mean(outcomes.iter().map(|c| c.id_test_acc)),
                    ood_test_acc: mean(outcomes.iter().map(|c| c.ood_test_acc)),
                });
            }
        }
    }
    if let Some(dir) = out_dir {
        let mut table = Table::new(
            "cell_comparison",
            "cell,mode,delta,shift_norm,train_acc,id_test_acc,ood_test_acc",
        );
        for p in &points {
            table.push(format!(
                "{},{},{},{},{},{},{}",
                p.cell, p.mode, p.delta, p.shift_norm, p.train_acc, p.id_test_acc, p.ood_test_acc
            ));
        }
        let seeds = seed_records(cache, &specs)?;
        write_outputs(
            dir,
            "cell_comparison",
            config,
            &[table],
            seeds,
            started.elapsed().as_secs_f64(),
            format,
        )?;
    }
    Ok(points)
}

/// Mean accuracy of a model trained on one chain, tested on another.
#[derive(Debug, Clone)]
pub struct AsymmetryCell {
    pub trained_on: String,
    pub tested_on: String,
    pub accuracy: f64,
}

/// Trains end-to-end models on the long-string chain P1 and the short-string
/// chain P2, then evaluates each on test sets from P1, P2, and the
/// intermediate Q.
pub fn run_asymmetry(
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
    format: OutputFormat,
) -> Result<Vec<AsymmetryCell>, HarnessError> {
    let started = std::time::Instant::now();
    config.validate()?;
    let chains = markov::asymmetry_chains()?;
    let train_chains = [("P1", &chains.p1), ("P2", &chains.p2)];
    let test_chains = [("P1", &chains.p1), ("P2", &chains.p2), ("Q", &chains.q)];
    let base_seed = config.base_seed;

    // (train chain, repeat) jobs run in parallel; each trains one model and
    // evaluates it on all three test sets.
    let jobs: Vec<(usize, usize)> = (0..train_chains.len())
        .flat_map(|c| (0..config.n_repeats).map(move |r| (c, r)))
        .collect();
    let results = crate::exec::map_indexed(jobs.len(), |j| -> Result<Vec<f64>, HarnessError> {
        let (chain_idx, repeat) = jobs[j];
        let (chain_name, chain) = train_chains[chain_idx];
        let key = format!("asymmetry|train={chain_name}|rep={repeat}");
        let seed = rng::mix_str(base_seed, &key);
        let sample_balanced = |pos: &markov::EdgeMarkovChain,
                               n_pos: usize,
                               n_neg: usize,
                               s: u64|
         -> Result<Vec<markov::LabeledExample>, HarnessError> {
            let mut out = Vec::with_capacity(n_pos + n_neg);
            let drawn = crate::exec::map_indexed_seq(n_pos + n_neg, |i| {
                let mut stream = rng::substream(s, i as u64);
                let source = if i < n_pos { pos } else { &chains.negative };
                source.sample(&mut stream).map(|mut ex| {
                    ex.y = chains.label_dfa.accepts(&ex.x).unwrap_or(false);
                    ex
                })
            });
            for d in drawn {
                out.push(d?);
            }
            use rand::seq::SliceRandom;
            out.shuffle(&mut rng::substream(s, crate::rng::SHUFFLE_LANE));
            Ok(out)
        };
        let train_set = sample_balanced(
            chain,
            config.n_train_pos,
            config.n_train_neg,
            rng::mix(seed, &[1]),
        )?;
        let dev_set = sample_balanced(
            chain,
            config.n_dev_pos,
            config.n_dev_neg,
            rng::mix(seed, &[2]),
        )?;
        let model_config = ModelConfig {
            cell: config.cell,
            vocab_size: 2,
            embed_dim: config.embed_dim,
            hidden_dim: config.hidden_dim,
            n_states: 0,
            n_count_classes: 0,
            aux_mode: AuxMode::None,
            loss_weights: (1.0, 1.0),
        };
        let model = neural::init_model(&model_config, rng::mix(seed, &[5]))?;
        let (model, _report) = neural::train(
            model,
            &train_set,
            &dev_set,
            &config.schedule(),
            rng::mix(seed, &[6]),
        )?;
        let mut accs = Vec::new();
        for (t_idx, (_, test_chain)) in test_chains.iter().enumerate() {
            let test_set = sample_balanced(
                test_chain,
                config.n_test_pos,
                config.n_test_neg,
                rng::mix(seed, &[10 + t_idx as u64]),
            )?;
            accs.push(neural::evaluate(&model, &test_set)?.accuracy);
        }
        eprintln!("[asymmetry] {key}: {accs:?}");
        Ok(accs)
    });
    let per_job = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut cells_out = Vec::new();
    for (chain_idx, (train_name, _)) in train_chains.iter().enumerate() {
        for (t_idx, (test_name, _)) in test_chains.iter().enumerate() {
            let acc = mean(
                jobs.iter()
                    .enumerate()
                    .filter(|(_, (c, _))| *c == chain_idx)
                    .map(|(j, _)| per_job[j][t_idx]),
            );
            cells_out.push(AsymmetryCell {
                trained_on: train_name.to_string(),
                tested_on: test_name.to_string(),
                accuracy: acc,
            });
        }
    }
    if let Some(dir) = out_dir {
        let mut table = Table::new("asymmetry", "trained_on,tested_on,accuracy");
        for c in &cells_out {
            table.push(format!("{},{},{}", c.trained_on, c.tested_on, c.accuracy));
        }
        write_outputs(
            dir,
            "asymmetry",
            config,
            &[table],
            Vec::new(),
            started.elapsed().as_secs_f64(),
            format,
        )?;
    }
    Ok(cells_out)
}

/// Brier score and ECE of both training modes at one shift level.
#[derive(Debug, Clone)]
pub struct CalibrationRow {
    pub delta: f64,
    pub shift_norm: f64,
    pub mode: AuxMode,
    pub brier: f64,
    pub ece: f64,
    pub ood_acc: f64,
}

/// Calibration of E2E vs SSAS on the o.o.d. test set across shift levels
/// (means of per-repeat metrics).
pub fn run_calibration(
    config: &ExperimentConfig,
    cache: &RunCache,
    out_dir: Option<&Path>,
    format: OutputFormat,
) -> Result<Vec<CalibrationRow>, HarnessError> {
    let started = std::time::Instant::now();
    config.validate()?;
    let family = config.family()?;
    let mut specs = Vec::new();
    for &delta in &config.calibration_deltas {
        for repeat in 0..config.n_repeats {
            specs.push(CellSpec::from_config(config, delta, AuxMode::None, repeat));
            specs.push(CellSpec::from_config(config, delta, AuxMode::Ssas, repeat));
        }
    }
    cache.ensure(&specs)?;
    let mut rows = Vec::new();
    for &delta in &config.calibration_deltas {
        let q = family.perturbed(delta)?;
        let norm = shift::shift_norm(family.base(), &q)?;
        for mode in [AuxMode::None, AuxMode::Ssas] {
            let mut briers = Vec::new();
            let mut eces = Vec::new();
            let mut accs = Vec::new();
            for repeat in 0..config.n_repeats {
                let spec = CellSpec::from_config(config, delta, mode, repeat);
                let cell = cache.get(&spec)?;
                let report = crate::metrics::ece(&cell.ood_psi, &cell.ood_y, 10)
                    .map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
                briers.push(report.brier);
                eces.push(report.ece);
                accs.push(cell.ood_test_acc);
            }
            rows.push(CalibrationRow {
                delta,
                shift_norm: norm,
                mode,
                brier: mean(briers),
                ece: mean(eces),
                ood_acc: mean(accs),
            });
        }
    }
    if let Some(dir) = out_dir {
        let mut table = Table::new(
            "calibration",
            "delta,shift_norm,mode,brier,ece,ood_acc",
        );
        for r in &rows {
            table.push(format!(
                "{},{},{},{},{},{}",
                r.delta, r.shift_norm, r.mode, r.brier, r.ece, r.ood_acc
            ));
        }
        let seeds = seed_records(cache, &specs)?;
        write_outputs(
            dir,
            "calibration",
            config,
            &[table],
            seeds,
            started.elapsed().as_secs_f64(),
            format,
        )?;
    }
    Ok(rows)
}

/// Shift-report sweep (no training): one [`crate::shift::ShiftReport`] row
/// per delta.
pub fn run_report(
    config: &ExperimentConfig,
    deltas: &[f64],
    out_dir: Option<&Path>,
    format: OutputFormat,
) -> Result<Vec<shift::ShiftReport>, HarnessError> {
    let started = std::time::Instant::now();
    let family = config.family()?;
    let reports = deltas
        .iter()
        .map(|&delta| {
            let seed = rng::mix_str(
                config.base_seed,
                &format!("report|{}|delta={}", config.language, delta),
            );
            shift::build_shift_report(&family, delta, config.estimator_samples, seed, 0.0, 0.0)
        })
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(dir) = out_dir {
        let mut table = Table::new("report", shift::ShiftReport::CSV_HEADER);
        for r in &reports {
            table.push(r.csv_row());
        }
        write_outputs(
            dir,
            "report",
            config,
            &[table],
            Vec::new(),
            started.elapsed().as_secs_f64(),
            format,
        )?;
    }
    Ok(reports)
}
