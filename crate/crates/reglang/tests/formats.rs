//! Bit-exact round-trips of every text format, including through the
//! filesystem, plus CLI exit-code behavior.

use reglang::automata::{build_mod_k_dfa, build_parity_dfa, Dfa};
use reglang::markov::{
    dataset_from_text, dataset_to_text, emc_from_text, emc_to_text, load_emc,
    parity_shift_family, sample_dataset, save_emc, DatasetSlice,
};
use reglang::neural::{checkpoint_from_text, checkpoint_to_text, init_model, AuxMode, CellKind, ModelConfig};
use std::process::Command;

#[test]
fn dfa_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for dfa in [build_parity_dfa(), build_mod_k_dfa(5).unwrap()] {
        let path = dir.path().join("m.dfa");
        std::fs::write(&path, dfa.to_text()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let back = Dfa::from_text(&text).unwrap();
        assert_eq!(dfa, back);
        assert_eq!(text, back.to_text());
    }
}

#[test]
fn emc_file_round_trip_resolves_dfa_reference() {
    let dir = tempfile::tempdir().unwrap();
    let family = parity_shift_family(&[0.2]).unwrap();
    let emc = family.perturbed(0.6).unwrap();
    let path = dir.path().join("chain.emc");
    save_emc(&emc, &path, "chain.dfa").unwrap();
    let back = load_emc(&path).unwrap();
    assert_eq!(emc.rows(), back.rows());
    assert_eq!(emc.dfa(), back.dfa());
    assert_eq!(emc.forbid_empty(), back.forbid_empty());
    // serialized text is reproduced byte-exactly
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, emc_to_text(&back, "chain.dfa"));
    let reparsed = emc_from_text(&text, back.dfa().clone()).unwrap();
    assert_eq!(reparsed.rows(), emc.rows());
}

#[test]
fn dataset_file_round_trip_is_bit_exact() {
    let family = parity_shift_family(&[0.2]).unwrap();
    let data = sample_dataset(&family, DatasetSlice::TestOod(0.85), 50, 50, 12).unwrap();
    let text = dataset_to_text(&data);
    let back = dataset_from_text(&text).unwrap();
    assert_eq!(data, back);
    assert_eq!(text, dataset_to_text(&back));
    for (a, b) in data.iter().zip(&back) {
        assert_eq!(a.logp.to_bits(), b.logp.to_bits(), "logp must survive exactly");
    }
}

#[test]
fn checkpoint_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let config = ModelConfig::new(CellKind::Lstm, 2, 2, AuxMode::Ssas);
    let model = init_model(&config, 31).unwrap();
    let path = dir.path().join("model.ckpt");
    reglang::neural::save_checkpoint(&model, &path).unwrap();
    let back = reglang::neural::load_checkpoint(&path).unwrap();
    assert_eq!(model, back);
    for ((_, a), (_, b)) in model.params.named().iter().zip(back.params.named().iter()) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
    assert_eq!(checkpoint_to_text(&model), checkpoint_to_text(&back));
    // corrupted header is rejected
    assert!(checkpoint_from_text("bogus").is_err());
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reglang"))
}

#[test]
fn cli_unknown_flag_exits_one_with_usage() {
    let out = cli().args(["report", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn cli_unknown_subcommand_exits_one() {
    let out = cli().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cli_missing_config_exits_one_and_names_path() {
    let out = cli()
        .args(["report", "--config", "/nonexistent/path.cfg", "--delta", "0.5"])
        .output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("/nonexistent/path.cfg"), "stderr: {stderr}");
}

#[test]
fn cli_unknown_experiment_exits_one() {
    let out = cli().args(["experiment", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cli_help_exits_zero() {
    let out = cli().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn cli_likelihood_runtime_error_exits_two() {
    // valid flags, but the eMC file does not exist -> runtime error
    let out = cli()
        .args(["likelihood", "--emc", "/no/such/file.emc", "--input", "01"])
        .output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cli_sample_likelihood_evaluate_calibrate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let emc_path = dir.path().join("parity.emc");
    let family = parity_shift_family(&[0.2]).unwrap();
    save_emc(family.base(), &emc_path, "parity.dfa").unwrap();

    let out = cli()
        .args(["likelihood", "--emc"])
        .arg(&emc_path)
        .args(["--input", "01"])
        .output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let lp: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!((lp - (0.2f64 * 0.2 * 0.1).ln()).abs() < 1e-12);

    let data_path = dir.path().join("data.tsv");
    let st = cli()
        .args(["sample", "--family", "parity", "--which", "train-id"])
        .args(["--n-pos", "30", "--n-neg", "30", "--seed", "5", "--out"])
        .arg(&data_path)
        .status().unwrap();
    assert!(st.success());
    let text = std::fs::read_to_string(&data_path).unwrap();
    assert_eq!(dataset_from_text(&text).unwrap().len(), 60);

    // calibrate on a tiny hand-made psi file
    let psi_path = dir.path().join("psi.csv");
    std::fs::write(&psi_path, "psi,y\n0.75,1\n0.75,1\n0.75,0\n").unwrap();
    let report_path = dir.path().join("cal.json");
    let st = cli()
        .args(["calibrate", "--input"])
        .arg(&psi_path)
        .args(["--bins", "10", "--out"])
        .arg(&report_path)
        .status().unwrap();
    assert!(st.success());
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let ece = parsed["ece"].as_f64().unwrap();
    assert!((ece - (0.75 - 2.0 / 3.0)).abs() < 1e-9);
}
