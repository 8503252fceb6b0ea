//! Trains one classifier and prints in-domain and out-of-domain test
//! accuracy after every epoch, to show how robustness evolves past the
//! point where in-domain accuracy saturates.
//!
//! Usage: `cargo run --release --example ood_trajectory -- [seed] [delta] [aux] [epochs] [family]`

use reglang::markov::{modk_shift_family, parity_shift_family, sample_dataset, DatasetSlice};
use reglang::neural::{evaluate, init_model, sgd_epoch, AuxMode, CellKind, ModelConfig};
use reglang::rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let delta: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.85);
    let aux = args
        .get(3)
        .and_then(|s| AuxMode::parse(s))
        .unwrap_or(AuxMode::None);
    let epochs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(60);
    let family_name = args.get(5).map(String::as_str).unwrap_or("parity");

    let family = if let Some(k) = family_name.strip_prefix("mod-") {
        modk_shift_family(k.parse().unwrap(), &[delta]).expect("family")
    } else {
        parity_shift_family(&[delta]).expect("family")
    };
    let n_states = family.label_dfa().n_states();
    let train = sample_dataset(&family, DatasetSlice::TrainId, 1600, 1600, rng::mix(seed, &[1]))
        .expect("train");
    let dev =
        sample_dataset(&family, DatasetSlice::TrainId, 200, 200, rng::mix(seed, &[2])).expect("dev");
    let id_test =
        sample_dataset(&family, DatasetSlice::TestId, 2000, 2000, rng::mix(seed, &[3])).expect("id");
    let ood_test = sample_dataset(
        &family,
        DatasetSlice::TestOod(delta),
        2000,
        2000,
        rng::mix(seed, &[4]),
    )
    .expect("ood");

    let config = ModelConfig {
        cell: CellKind::Lstm,
        vocab_size: 2,
        embed_dim: 50,
        hidden_dim: 50,
        n_states: if aux == AuxMode::Ssas { n_states } else { 0 },
        n_count_classes: if aux == AuxMode::Count { 10 } else { 0 },
        aux_mode: aux,
        loss_weights: (1.0, 1.0),
    };
    let mut model = init_model(&config, rng::mix(seed, &[5])).expect("init");
    println!("epoch,loss,train_acc,dev_acc,id_acc,ood_acc");
    for epoch in 1..=epochs {
        let batch: usize = std::env::var("REGLANG_PILOT_BATCH").ok().and_then(|v| v.parse().ok()).unwrap_or(1);
        let stats = sgd_epoch(&mut model, &train, 0.01, batch, rng::mix(seed, &[6, epoch as u64]))
            .expect("epoch");
        let dev_acc = evaluate(&model, &dev).expect("dev").accuracy;
        let id_acc = evaluate(&model, &id_test).expect("id").accuracy;
        let ood_acc = evaluate(&model, &ood_test).expect("ood").accuracy;
        println!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.4}",
            epoch, stats.mean_loss, stats.train_accuracy, dev_acc, id_acc, ood_acc
        );
    }
}
