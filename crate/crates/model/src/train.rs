use crate::checkpoint::save_checkpoint;
use crate::config::ModelConfig;
use crate::losses::{kl_anneal, lr_at};
use crate::model::{loss_and_grads, LossValues, Model};
use crate::{ModelError, Result};
use loopforge_core::LoopSequence;
use loopforge_nn::optim::{adam_step, AdamConfig, AdamState};
use loopforge_nn::Gradients;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Overrides the epoch count implied by the learning-rate schedule.
    pub epochs: Option<usize>,
    /// Where to write checkpoints. The final model is always written here.
    pub checkpoint: Option<PathBuf>,
    /// Also checkpoint every this many epochs; 0 disables periodic writes.
    pub checkpoint_every: usize,
}

/// One NDJSON record per epoch. Losses are per-sequence means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps completed at the end of the epoch.
    pub step: u64,
    #[serde(rename = "L_R")]
    pub l_r: f64,
    #[serde(rename = "L_KL")]
    pub l_kl: f64,
    /// KL weight used by the epoch's last step.
    pub beta_eff: f64,
    pub lr: f64,
}

fn check_dataset(model: &Model, dataset: &[LoopSequence]) -> Result<()> {
    if dataset.is_empty() {
        return Err(ModelError::Data("dataset is empty".into()));
    }
    let planes = &model.config().planes;
    for (i, seq) in dataset.iter().enumerate() {
        model
            .check_sequence(seq)
            .map_err(|e| ModelError::Data(format!("sequence {i}: {e}")))?;
        if seq.plane_count() != planes.count || seq.axis != planes.axis {
            return Err(ModelError::Data(format!(
                "sequence {i} uses {} planes along {}, config expects {} along {}",
                seq.plane_count(),
                seq.axis.as_str(),
                planes.count,
                planes.axis.as_str()
            )));
        }
    }
    Ok(())
}

/// Reparameterization noise for every element of one batch. Drawn up front
/// so results do not depend on how the batch is scheduled across threads.
fn batch_noise(seed: u64, step: u64, batch: usize, n_z: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step.wrapping_add(2));
    (0..batch)
        .map(|_| (0..n_z).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Trains a fresh model seeded from `cfg.seed`. The run is fully determined
/// by `cfg` and `dataset`; thread count does not affect the result.
pub fn train(
    dataset: &[LoopSequence],
    cfg: &ModelConfig,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(Model, Vec<EpochLog>)> {
    let mut model = Model::new(cfg)?;
    check_dataset(&model, dataset)?;
    let epochs = opts.epochs.unwrap_or(cfg.epochs());
    let mut adam = AdamState::default();
    let adam_cfg = AdamConfig::default();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = Vec::with_capacity(epochs);
    let mut last_good: Option<PathBuf> = None;

    for epoch in 0..epochs {
        order.shuffle(&mut shuffle_rng);
        let lr = lr_at(epoch, cfg.lr);
        let mut sum = LossValues::default();
        let mut beta_eff = kl_anneal(model.step, cfg.beta_kl, cfg.anneal);
        for batch in order.chunks(cfg.batch_size) {
            beta_eff = kl_anneal(model.step, cfg.beta_kl, cfg.anneal);
            let noise = batch_noise(cfg.seed, model.step, batch.len(), cfg.latent_dim);
            let results: Vec<Result<(LossValues, Gradients)>> = batch
                .par_iter()
                .zip(noise.par_iter())
                .map(|(&i, eps)| {
                    loss_and_grads(&model.arch, &model.params, &dataset[i].tokens, eps, beta_eff, true)
                })
                .collect();
            let mut grads = Gradients::default();
            let mut healthy = true;
            for r in results {
                let (v, g) = r?;
                healthy &= v.total.is_finite() && g.is_finite();
                sum.recon += v.recon;
                sum.kl += v.kl;
                grads.merge(&g);
            }
            if !healthy {
                return Err(ModelError::NonFinite {
                    epoch,
                    step: model.step,
                    last_checkpoint: last_good,
                });
            }
            grads.scale(1.0 / batch.len() as f64);
            adam_step(&mut model.params, &grads, &mut adam, lr, adam_cfg);
            model.step += 1;
        }
        let n = dataset.len() as f64;
        let rec = EpochLog {
            epoch,
            step: model.step,
            l_r: sum.recon / n,
            l_kl: sum.kl / n,
            beta_eff,
            lr,
        };
        on_epoch(&rec);
        log.push(rec);
        if let Some(path) = &opts.checkpoint {
            let periodic = opts.checkpoint_every > 0 && (epoch + 1) % opts.checkpoint_every == 0;
            if periodic && epoch + 1 < epochs {
                save_checkpoint(&model, path)?;
                last_good = Some(path.clone());
            }
        }
    }
    if let Some(path) = &opts.checkpoint {
        save_checkpoint(&model, path)?;
    }
    Ok((model, log))
}
