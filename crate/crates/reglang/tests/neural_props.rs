//! Training-level invariants: end-to-end determinism, auxiliary heads being
//! train-time only, loss decomposition, and parameter health over a full
//! schedule.

use reglang::markov::{parity_shift_family, sample_dataset, DatasetSlice};
use reglang::neural::{
    evaluate, init_model, loss, train, AuxMode, CellKind, ModelConfig, TrainSchedule,
};

fn small_schedule() -> TrainSchedule {
    TrainSchedule {
        lr: 0.01,
        batch_size: 1,
        max_epochs: 4,
        patience: 3,
    }
}

#[test]
fn training_is_bit_deterministic() {
    let family = parity_shift_family(&[0.2]).unwrap();
    let train_set = sample_dataset(&family, DatasetSlice::TrainId, 120, 120, 3).unwrap();
    let dev_set = sample_dataset(&family, DatasetSlice::TrainId, 30, 30, 4).unwrap();
    let config = ModelConfig::new(CellKind::Lstm, 2, 2, AuxMode::Ssas);
    let run = || {
        let model = init_model(&config, 9).unwrap();
        train(model, &train_set, &dev_set, &small_schedule(), 11).unwrap()
    };
    let (model_a, report_a) = run();
    let (model_b, report_b) = run();
    assert_eq!(model_a, model_b);
    assert_eq!(report_a.epoch_loss, report_b.epoch_loss);
    let psi_a = evaluate(&model_a, &dev_set).unwrap().psi;
    let psi_b = evaluate(&model_b, &dev_set).unwrap().psi;
    for (a, b) in psi_a.iter().zip(&psi_b) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn aux_heads_are_train_time_only() {
    let family = parity_shift_family(&[0.2]).unwrap();
    let train_set = sample_dataset(&family, DatasetSlice::TrainId, 100, 100, 5).unwrap();
    let dev_set = sample_dataset(&family, DatasetSlice::TrainId, 30, 30, 6).unwrap();
    let test_set = sample_dataset(&family, DatasetSlice::TestOod(0.7), 50, 50, 7).unwrap();
    let config = ModelConfig::new(CellKind::Gru, 2, 2, AuxMode::Ssas);
    let model = init_model(&config, 2).unwrap();
    let (mut model, _) = train(model, &train_set, &dev_set, &small_schedule(), 13).unwrap();
    let psi_with_heads = evaluate(&model, &test_set).unwrap().psi;
    model.strip_aux_heads();
    let psi_stripped = evaluate(&model, &test_set).unwrap().psi;
    for (a, b) in psi_with_heads.iter().zip(&psi_stripped) {
        assert_eq!(a.to_bits(), b.to_bits(), "label path must ignore aux heads");
    }
}

#[test]
fn loss_decomposition_main_plus_weighted_aux() {
    let family = parity_shift_family(&[0.2]).unwrap();
    let data = sample_dataset(&family, DatasetSlice::TrainId, 20, 20, 8).unwrap();
    for (aux, n_states, n_count) in [(AuxMode::Ssas, 2, 0), (AuxMode::Count, 0, 10)] {
        let mut config = ModelConfig::new(CellKind::Lstm, 2, n_states, aux);
        config.n_count_classes = n_count;
        config.loss_weights = (1.0, 0.7);
        let model = init_model(&config, 21).unwrap();
        for ex in &data {
            let total = loss(&model, ex, aux).unwrap();
            let main = loss(&model, ex, AuxMode::None).unwrap();
            let mut aux_only = model.clone();
            aux_only.config.loss_weights = (0.0, 0.7);
            let aux_part = loss(&aux_only, ex, aux).unwrap();
            assert!(
                (total - main - aux_part).abs() < 1e-12,
                "loss does not decompose: {total} vs {main} + {aux_part}"
            );
        }
    }
}

#[test]
fn parameters_stay_finite_over_full_schedule_for_all_cells() {
    let family = parity_shift_family(&[0.2]).unwrap();
    let train_set = sample_dataset(&family, DatasetSlice::TrainId, 150, 150, 9).unwrap();
    let dev_set = sample_dataset(&family, DatasetSlice::TrainId, 30, 30, 10).unwrap();
    for cell in [CellKind::Rnn, CellKind::Lstm, CellKind::Gru] {
        let config = ModelConfig::new(cell, 2, 0, AuxMode::None);
        let model = init_model(&config, 3).unwrap();
        let schedule = TrainSchedule {
            lr: 0.01,
            batch_size: 1,
            max_epochs: 30,
            patience: 3,
        };
        let (model, report) = train(model, &train_set, &dev_set, &schedule, 17).unwrap();
        assert!(model.params.all_finite(), "{cell} produced non-finite params");
        assert!(report.stopped_epoch >= 1 && report.stopped_epoch <= 30);
        for acc in report
            .epoch_train_acc
            .iter()
            .chain(&report.epoch_dev_acc)
        {
            assert!((0.0..=1.0).contains(acc));
        }
    }
}

#[test]
fn forward_is_order_independent_across_examples() {
    // single-sequence semantics: evaluating a set in any order yields the
    // same per-example outputs
    let family = parity_shift_family(&[0.2]).unwrap();
    let data = sample_dataset(&family, DatasetSlice::TrainId, 25, 25, 30).unwrap();
    let config = ModelConfig::new(CellKind::Lstm, 2, 0, AuxMode::None);
    let model = init_model(&config, 5).unwrap();
    let psi = evaluate(&model, &data).unwrap().psi;
    let mut reversed = data.clone();
    reversed.reverse();
    let psi_rev = evaluate(&model, &reversed).unwrap().psi;
    for (i, p) in psi.iter().enumerate() {
        assert_eq!(p.to_bits(), psi_rev[data.len() - 1 - i].to_bits());
    }
}
