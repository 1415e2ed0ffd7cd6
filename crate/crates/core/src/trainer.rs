//! Deterministic mini-batch SGD over encoder, prototypes, and EMA state.
//!
//! Per batch: augment -> encode -> cosine logits -> EMA update with the
//! current batch's norms and certainty ratios -> loss forward/backward with
//! the updated statistics -> SGD step -> prototype renormalization. Every
//! random decision is keyed by `(seed, domain, epoch, index)`, so a run is a
//! pure function of `(dataset, config)` and checkpoints can resume
//! mid-schedule without drift.

use crate::encoder::{encoder_backward, encoder_forward, EncoderParams};
use crate::error::{Error, Result};
use crate::io::Dataset;
use crate::margin::{
    cosine_logits, forward_precomputed, margin_loss_backward, pos_nn, ClassPrototypes, DiagMode,
    EmbeddingBatch, MarginConfig,
};
use crate::matrix::Matrix;
use crate::parallel;
use crate::rng::{self, Domain};
use crate::stats::{certainty_ratio, NormalizerState};
use crate::synth::{augment_in_place, AugmentConfig};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    /// Learning rate is divided by `lr_drop_factor` at the end of each listed
    /// epoch (1-based, matching "end of the k-th epoch").
    pub lr_drop_epochs: Vec<usize>,
    pub lr_drop_factor: f64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    pub ema_momentum: f64,
    pub margin: MarginConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 256,
            lr: 0.1,
            weight_decay: 5e-4,
            momentum: 0.9,
            lr_drop_epochs: vec![14, 23, 28],
            lr_drop_factor: 10.0,
            embed_dim: 64,
            hidden_dim: 256,
            seed: 7,
            ema_momentum: 0.99,
            margin: MarginConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.epochs == 0 {
            return bad("train.epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be >= 1".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("train.lr must be >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("train.momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("train.weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.lr_drop_factor <= 1.0 {
            return bad(format!(
                "train.lr_drop_factor must be > 1, got {}",
                self.lr_drop_factor
            ));
        }
        for w in self.lr_drop_epochs.windows(2) {
            if w[1] <= w[0] {
                return bad("train.lr_drop_epochs must be strictly increasing".into());
            }
        }
        if self.lr_drop_epochs.iter().any(|&e| e >= self.epochs) {
            return bad("train.lr_drop_epochs must be < train.epochs".into());
        }
        if self.embed_dim < 2 {
            return bad(format!("train.embed_dim must be >= 2, got {}", self.embed_dim));
        }
        if self.hidden_dim == 0 {
            return bad("train.hidden_dim must be >= 1".into());
        }
        if !(0.0 < self.ema_momentum && self.ema_momentum < 1.0) {
            return bad(format!(
                "train.ema_momentum must lie in (0, 1), got {}",
                self.ema_momentum
            ));
        }
        self.margin.validate()?;
        self.augment.validate()
    }

    /// Learning rate in effect during a 0-based epoch index.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let drops = self.lr_drop_epochs.iter().filter(|&&d| epoch >= d).count();
        self.lr / self.lr_drop_factor.powi(drops as i32)
    }
}

/// Everything needed to resume training or evaluate a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Number of completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub params: EncoderParams,
    pub velocity: EncoderParams,
    pub protos: ClassPrototypes,
    pub proto_velocity: Matrix,
    pub stats: NormalizerState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub mean_norm: f64,
    pub mean_cr: f64,
    /// Fraction of samples whose certainty-ratio cosines hit the [0, 1]
    /// clamp this epoch.
    pub clamp_rate: f64,
}

pub const METRICS_CSV_HEADER: &str = "epoch,lr,mean_loss,mean_norm,mean_cr,clamp_rate";

pub fn metrics_to_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.epoch, m.lr, m.mean_loss, m.mean_norm, m.mean_cr, m.clamp_rate
        ));
    }
    out
}

/// Classical momentum SGD with L2 regularization folded into the gradient:
/// `v <- momentum * v + g + wd * p; p <- p - lr * v`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::ShapeMismatch {
            context: "sgd_step",
            expected: format!("{} entries", params.len()),
            actual: format!("{} grads, {} velocity", grads.len(), velocity.len()),
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient entry",
            sample: i,
        });
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// Trains from a fresh initialization.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(Checkpoint, Vec<EpochMetrics>)> {
    config.validate()?;
    dataset.validate()?;
    let mut init_rng = rng::stream(config.seed, Domain::EncoderInit, &[]);
    let params = EncoderParams::init(
        dataset.inputs.cols(),
        config.hidden_dim,
        config.embed_dim,
        &mut init_rng,
    );
    let velocity = params.zeros_like();
    let mut proto_rng = rng::stream(config.seed, Domain::ClassPrototypeInit, &[]);
    let protos = ClassPrototypes::random(dataset.num_classes, config.embed_dim, &mut proto_rng)?;
    let proto_velocity = Matrix::zeros(dataset.num_classes, config.embed_dim);
    let ckpt = Checkpoint {
        epoch: 0,
        seed: config.seed,
        params,
        velocity,
        protos,
        proto_velocity,
        stats: NormalizerState::new(config.ema_momentum)?,
    };
    run_epochs(ckpt, dataset, config)
}

/// Continues a checkpoint up to `config.epochs`. Produces the same final
/// state, bit for bit, as an uninterrupted run.
pub fn resume(
    ckpt: Checkpoint,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(Checkpoint, Vec<EpochMetrics>)> {
    config.validate()?;
    dataset.validate()?;
    if ckpt.params.input_dim() != dataset.inputs.cols()
        || ckpt.params.embed_dim() != config.embed_dim
        || ckpt.protos.num_classes() != dataset.num_classes
    {
        return Err(Error::ShapeMismatch {
            context: "resume checkpoint",
            expected: format!(
                "input dim {}, embed dim {}, {} classes",
                dataset.inputs.cols(),
                config.embed_dim,
                dataset.num_classes
            ),
            actual: format!(
                "input dim {}, embed dim {}, {} classes",
                ckpt.params.input_dim(),
                ckpt.params.embed_dim(),
                ckpt.protos.num_classes()
            ),
        });
    }
    run_epochs(ckpt, dataset, config)
}

fn run_epochs(
    mut state: Checkpoint,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(Checkpoint, Vec<EpochMetrics>)> {
    let n = dataset.inputs.rows();
    let d_in = dataset.inputs.cols();
    let seed = state.seed;
    let mut metrics = Vec::new();

    for epoch in state.epoch..config.epochs {
        let lr = config.lr_at_epoch(epoch);
        let perm = permutation(n, seed, epoch);
        let mut sum_loss = 0.0;
        let mut sum_norm = 0.0;
        let mut sum_cr = 0.0;
        let mut clamp_hits = 0usize;

        for (batch_no, chunk) in perm.chunks(config.batch_size).enumerate() {
            step_batch(
                &mut state, dataset, config, epoch, chunk, lr, d_in, &mut sum_loss, &mut sum_norm,
                &mut sum_cr, &mut clamp_hits,
            )
            .map_err(|e| Error::TrainStep {
                epoch,
                batch: batch_no,
                source: Box::new(e),
            })?;
        }

        let nf = n as f64;
        metrics.push(EpochMetrics {
            epoch,
            lr,
            mean_loss: sum_loss / nf,
            mean_norm: sum_norm / nf,
            mean_cr: sum_cr / nf,
            clamp_rate: clamp_hits as f64 / nf,
        });
        state.epoch = epoch + 1;
    }
    Ok((state, metrics))
}

#[allow(clippy::too_many_arguments)]
fn step_batch(
    state: &mut Checkpoint,
    dataset: &Dataset,
    config: &TrainConfig,
    epoch: usize,
    chunk: &[usize],
    lr: f64,
    d_in: usize,
    sum_loss: &mut f64,
    sum_norm: &mut f64,
    sum_cr: &mut f64,
    clamp_hits: &mut usize,
) -> Result<()> {
    let bsz = chunk.len();
    let seed = state.seed;

    // gather + augment; the stream key is (epoch, original index), so the
    // result is independent of batch layout and worker scheduling
    let mut inputs = Matrix::zeros(bsz, d_in);
    parallel::for_each_row(inputs.data_mut(), d_in, |k, row| {
        let idx = chunk[k];
        row.copy_from_slice(dataset.inputs.row(idx));
        let mut rng = rng::stream(seed, Domain::Augment, &[epoch as u64, idx as u64]);
        augment_in_place(row, &config.augment, &mut rng);
    });
    let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels[i]).collect();

    let (z, cache) = encoder_forward(&state.params, &inputs)?;
    let batch = EmbeddingBatch::new(z, labels)?;
    let cl = cosine_logits(&batch, &state.protos)?;
    let pn = pos_nn(&cl.cosines, &batch.labels)?;
    let crs: Vec<f64> = pn
        .iter()
        .map(|&(p, nn)| certainty_ratio(p, nn, config.margin.epsilon))
        .collect();
    *clamp_hits += pn.iter().filter(|&&(p, nn)| p < 0.0 || nn < 0.0).count();
    *sum_norm += cl.norms.iter().sum::<f64>();
    *sum_cr += crs.iter().sum::<f64>();

    state.stats.ema_update(&cl.norms, &crs)?;

    let labels_owned = batch.labels.clone();
    let fwd = forward_precomputed(cl, labels_owned, &pn, &config.margin, &state.stats, DiagMode::Full)?;
    *sum_loss += fwd.loss * bsz as f64;
    let out = margin_loss_backward(&batch, &state.protos, fwd)?;

    let egrads = encoder_backward(&state.params, &cache, &out.grad_features)?;
    let (mom, wd) = (config.momentum, config.weight_decay);
    sgd_step(state.params.w1.data_mut(), egrads.w1.data(), state.velocity.w1.data_mut(), lr, mom, wd)?;
    sgd_step(&mut state.params.b1, &egrads.b1, &mut state.velocity.b1, lr, mom, wd)?;
    sgd_step(state.params.w2.data_mut(), egrads.w2.data(), state.velocity.w2.data_mut(), lr, mom, wd)?;
    sgd_step(&mut state.params.b2, &egrads.b2, &mut state.velocity.b2, lr, mom, wd)?;
    sgd_step(
        state.protos.centers_mut().data_mut(),
        out.grad_centers.data(),
        state.proto_velocity.data_mut(),
        lr,
        mom,
        wd,
    )?;
    state.protos.renormalize()?;
    Ok(())
}

/// Fisher-Yates permutation of `0..n` keyed by `(seed, epoch)`.
fn permutation(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = rng::stream(seed, Domain::Shuffle, &[epoch as u64]);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

/// Embeds a full dataset without augmentation (evaluation path; the EMA
/// state is never touched here).
pub fn encode_dataset(params: &EncoderParams, inputs: &Matrix) -> Result<Matrix> {
    let (z, _) = encoder_forward(params, inputs)?;
    Ok(z)
}
