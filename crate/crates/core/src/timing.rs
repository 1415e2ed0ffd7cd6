//! Per-batch loss timing across variants.
//!
//! Each timed repetition performs exactly the work the variant's training
//! step requires from the loss module: cosine logits for everyone, the
//! nearest-negative scan and certainty ratios only for FunFace, the EMA
//! update only for the adaptive variants, then the forward and backward
//! passes. Repetitions interleave the variants round-robin so scheduler
//! drift hits all of them equally.

use crate::error::Result;
use crate::margin::{
    cosine_logits, forward_precomputed, margin_loss_backward, pos_nn_mode, ClassPrototypes,
    DiagMode, EmbeddingBatch, MarginConfig, MarginVariant,
};
use crate::stats::{certainty_ratio, NormalizerState};
use serde::Serialize;
use std::hint::black_box;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariantTiming {
    pub variant: MarginVariant,
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub reps: usize,
}

/// Times `forward + backward` (plus the variant's own bookkeeping) per
/// batch. `warmup` unrecorded rounds precede `reps` recorded ones.
pub fn time_loss_variants(
    batch: &EmbeddingBatch,
    protos: &ClassPrototypes,
    base: &MarginConfig,
    variants: &[MarginVariant],
    warmup: usize,
    reps: usize,
) -> Result<Vec<VariantTiming>> {
    base.validate()?;

    struct Lane {
        cfg: MarginConfig,
        stats: NormalizerState,
        needs_ema: bool,
        needs_nn: bool,
        samples: Vec<f64>,
    }

    // certainty ratios for the AdaFace EMA argument, computed once outside
    // the timed region (its own path never needs them)
    let cl0 = cosine_logits(batch, protos)?;
    let pn0 = pos_nn_mode(&cl0.cosines, &batch.labels, true)?;
    let stale_crs: Vec<f64> = pn0
        .iter()
        .map(|&(p, nn)| certainty_ratio(p, nn, base.epsilon))
        .collect();

    let mut lanes: Vec<Lane> = variants
        .iter()
        .map(|&variant| {
            let mut cfg = MarginConfig { variant, ..*base };
            // static variants compare at the same margin magnitude
            match variant {
                MarginVariant::Arc => cfg.m_arc = base.m,
                MarginVariant::Cos => cfg.m_cos = base.m,
                _ => {}
            }
            let mut stats = NormalizerState::new(0.99)?;
            stats.ema_update(&cl0.norms, &stale_crs)?;
            Ok(Lane {
                cfg,
                stats,
                needs_ema: matches!(variant, MarginVariant::AdaFace | MarginVariant::FunFace),
                needs_nn: variant == MarginVariant::FunFace,
                samples: Vec::with_capacity(reps),
            })
        })
        .collect::<Result<_>>()?;

    for round in 0..warmup + reps {
        for lane in &mut lanes {
            let t0 = Instant::now();

            let cl = cosine_logits(batch, protos)?;
            let pn = pos_nn_mode(&cl.cosines, &batch.labels, lane.needs_nn)?;
            if lane.needs_ema {
                if lane.needs_nn {
                    let crs: Vec<f64> = pn
                        .iter()
                        .map(|&(p, nn)| certainty_ratio(p, nn, lane.cfg.epsilon))
                        .collect();
                    lane.stats.ema_update(&cl.norms, &crs)?;
                } else {
                    lane.stats.ema_update(&cl.norms, &stale_crs)?;
                }
            }
            let fwd = forward_precomputed(
                cl,
                batch.labels.clone(),
                &pn,
                &lane.cfg,
                &lane.stats,
                DiagMode::Required,
            )?;
            let out = margin_loss_backward(batch, protos, fwd)?;
            black_box(out.loss);

            let dt = t0.elapsed().as_secs_f64();
            if round >= warmup {
                lane.samples.push(dt);
            }
        }
    }

    Ok(lanes
        .into_iter()
        .map(|lane| {
            let n = lane.samples.len() as f64;
            let mean = lane.samples.iter().sum::<f64>() / n;
            let var = lane.samples.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
            VariantTiming {
                variant: lane.cfg.variant,
                mean_seconds: mean,
                std_seconds: var.sqrt(),
                reps: lane.samples.len(),
            }
        })
        .collect())
}
