mod common;

use common::vases;
use loopforge_core::LoopToken;
use loopforge_model::checkpoint::file_sha256;
use loopforge_model::losses::kl_anneal;
use loopforge_model::{train, ModelConfig, ModelError, TrainOptions};

fn small_config() -> ModelConfig {
    let mut cfg = ModelConfig::tiny();
    cfg.batch_size = 2;
    cfg.lr.warm_epochs = 2;
    cfg.lr.rampdown_epochs = 2;
    cfg.max_seq_len = 24;
    cfg
}

#[test]
fn training_is_reproducible_and_logs_schedule() {
    let data = vases(5, 4, 1);
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    let mut hashes = Vec::new();
    let mut logs = Vec::new();
    for run in 0..2 {
        let path = dir.path().join(format!("run{run}.ckpt"));
        let opts = TrainOptions {
            checkpoint: Some(path.clone()),
            checkpoint_every: 1,
            ..Default::default()
        };
        let mut seen = 0;
        let (model, log) = train(&data, &cfg, &opts, |_| seen += 1).unwrap();
        assert_eq!(seen, 4);
        assert_eq!(model.step, 4 * 3);
        hashes.push(file_sha256(&path).unwrap());
        logs.push(log);
    }
    assert_eq!(hashes[0], hashes[1]);
    assert_eq!(logs[0], logs[1]);
    for rec in &logs[0] {
        assert_eq!(rec.beta_eff, kl_anneal(rec.step - 1, cfg.beta_kl, cfg.anneal));
        assert!(rec.l_r.is_finite() && rec.l_kl >= 0.0);
    }
    assert_eq!(logs[0].last().unwrap().lr, 0.0);
    let json = serde_json::to_string(&logs[0][0]).unwrap();
    assert!(json.contains("\"L_R\"") && json.contains("\"beta_eff\""));
}

#[test]
fn training_reduces_reconstruction_loss() {
    let data = vases(6, 4, 2);
    let mut cfg = small_config();
    cfg.lr.warm_epochs = 30;
    cfg.lr.rampdown_epochs = 10;
    let (_, log) = train(&data, &cfg, &TrainOptions::default(), |_| {}).unwrap();
    assert!(log.last().unwrap().l_r < 0.5 * log[0].l_r, "{:?}", (log[0].l_r, log.last().unwrap().l_r));
}

#[test]
fn non_finite_loss_aborts() {
    let mut data = vases(2, 4, 3);
    data[1].tokens[0] = LoopToken {
        coords: vec![1e200; 64],
        level_up: true,
    };
    let err = train(&data, &small_config(), &TrainOptions::default(), |_| {}).unwrap_err();
    assert!(matches!(err, ModelError::NonFinite { .. }), "{err}");
}

#[test]
fn mismatched_data_is_rejected() {
    let data = vases(2, 5, 3);
    assert!(matches!(
        train(&data, &small_config(), &TrainOptions::default(), |_| {}),
        Err(ModelError::Data(_))
    ));
    assert!(matches!(
        train(&[], &small_config(), &TrainOptions::default(), |_| {}),
        Err(ModelError::Data(_))
    ));
}
