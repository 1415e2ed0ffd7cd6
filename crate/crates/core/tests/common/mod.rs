//! Shared test fixtures: random loss instances, an independent
//! frozen-margin loss for finite differencing, and brute-force metric
//! oracles. Everything here is written from the definitions, not by calling
//! into the implementation paths under test.

#![allow(dead_code)]

use funlab_core::margin::{
    ClassPrototypes, EmbeddingBatch, MarginConfig, MarginVariant, PerSampleDiagnostics,
};
use funlab_core::matrix::Matrix;
use funlab_core::stats::NormalizerState;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

pub struct Instance {
    pub batch: EmbeddingBatch,
    pub protos: ClassPrototypes,
    pub config: MarginConfig,
    pub stats: NormalizerState,
}

/// Random small instance with moderate geometry: cosines bounded away from
/// +-1 so finite differences stay clear of the arccos singularity and the
/// angle clamp.
pub fn random_instance(variant: MarginVariant, seed: u64) -> Instance {
    let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xA5A5);
    for attempt in 0..64 {
        let b = rng.random_range(1..=4usize);
        let c = rng.random_range(2..=8usize);
        let d = rng.random_range(4..=16usize);
        let mut feats = Matrix::zeros(b, d);
        for v in feats.data_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
        for i in 0..b {
            let scale = (rng.random_range(-1.0..1.0f64)).exp() * 3.0;
            for v in feats.row_mut(i) {
                *v *= scale;
            }
        }
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
        let protos = ClassPrototypes::random(c, d, &mut rng).unwrap();
        let batch = match EmbeddingBatch::new(feats, labels) {
            Ok(b) => b,
            Err(_) => continue,
        };

        // keep the sampled geometry away from the degenerate corners
        let cl = funlab_core::cosine_logits(&batch, &protos).unwrap();
        let extreme = cl.cosines.data().iter().any(|&v| v.abs() > 0.9);
        if extreme && attempt < 63 {
            continue;
        }

        let mean_norm = cl.norms.iter().sum::<f64>() / cl.norms.len() as f64;
        let stats = NormalizerState::frozen(
            mean_norm * rng.random_range(0.7..1.3),
            (mean_norm * 0.3).max(0.2),
            rng.random_range(0.8..1.4),
            rng.random_range(0.2..0.8),
        );
        let config = MarginConfig {
            variant,
            m: rng.random_range(0.2..0.5),
            m_sph: rng.random_range(1.0..2.0),
            m_arc: rng.random_range(0.0..0.5),
            m_cos: rng.random_range(0.0..0.4),
            s: rng.random_range(2.0..32.0),
            h: 0.333,
            lambda: rng.random_range(0.0..1.0),
            epsilon: 1e-4,
        };
        return Instance {
            batch,
            protos,
            config,
            stats,
        };
    }
    unreachable!("instance sampling failed to converge")
}

/// Margin knobs frozen per sample: `(scale_mult, angle_offset, add_offset)`.
pub type FrozenTerms = Vec<(f64, f64, f64)>;

pub fn frozen_terms(config: &MarginConfig, diags: &[PerSampleDiagnostics]) -> FrozenTerms {
    let scale = match config.variant {
        MarginVariant::Sphere | MarginVariant::Generalized => config.m_sph,
        _ => 1.0,
    };
    diags.iter().map(|d| (scale, d.g_angle, d.g_add)).collect()
}

/// Independent mean margin-softmax loss with the margin knobs held fixed.
/// Recomputes cosines from raw features and prototype rows directly.
pub fn frozen_loss(
    features: &Matrix,
    proto_rows: &Matrix,
    labels: &[usize],
    s: f64,
    terms: &FrozenTerms,
) -> f64 {
    let b = features.rows();
    let c = proto_rows.rows();
    let mut total = 0.0;
    for i in 0..b {
        let z = features.row(i);
        let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y = labels[i];
        let mut logits = Vec::with_capacity(c);
        for j in 0..c {
            let cos = (z
                .iter()
                .zip(proto_rows.row(j))
                .map(|(a, w)| a * w)
                .sum::<f64>()
                / n)
                .clamp(-1.0, 1.0);
            let logit = if j == y {
                let (sc, ang, add) = terms[i];
                let pct = if sc == 1.0 && ang == 0.0 {
                    cos - add
                } else {
                    (sc * cos.acos() + ang).clamp(0.0, PI).cos() - add
                };
                s * pct
            } else {
                s * cos
            };
            logits.push(logit);
        }
        let maxv = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = maxv + logits.iter().map(|l| (l - maxv).exp()).sum::<f64>().ln();
        total += lse - logits[y];
    }
    total / b as f64
}

pub const FD_STEP: f64 = 1e-5;

/// Central finite difference of `f` under perturbation `set(delta)`.
pub fn central_diff(mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP)
}

/// `max |a - b| / max(|a|_inf, |b|_inf, floor)`
pub fn rel_err(analytic: &[f64], fd: &[f64], floor: f64) -> f64 {
    let denom = analytic
        .iter()
        .chain(fd)
        .map(|v| v.abs())
        .fold(floor, f64::max);
    analytic
        .iter()
        .zip(fd)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / denom
}

// ---------------------------------------------------------------------------
// brute-force metric oracles
// ---------------------------------------------------------------------------

// scores must agree with the implementation bit for bit, so the row
// normalization mirrors its arithmetic (multiply by the reciprocal)
pub fn unit_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let n = out.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        let inv = 1.0 / n;
        for v in out.row_mut(i) {
            *v *= inv;
        }
    }
    out
}

pub fn pair_scores(
    embeddings: &Matrix,
    pairs: &[funlab_core::eval::Pair],
) -> Vec<(f64, bool)> {
    let unit = unit_rows(embeddings);
    pairs
        .iter()
        .map(|p| {
            let s = unit
                .row(p.a)
                .iter()
                .zip(unit.row(p.b))
                .map(|(x, y)| x * y)
                .sum::<f64>();
            (s, p.mated)
        })
        .collect()
}

/// Every midpoint threshold, direct counting.
pub fn brute_best_accuracy(scores: &[(f64, bool)]) -> f64 {
    let mut all: Vec<f64> = scores.iter().map(|&(s, _)| s).collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut thresholds = vec![all[0] - 1.0, all[all.len() - 1] + 1.0];
    for w in all.windows(2) {
        if w[1] > w[0] {
            thresholds.push(0.5 * (w[0] + w[1]));
        }
    }
    let mut best = 0.0f64;
    for t in thresholds {
        let correct = scores
            .iter()
            .filter(|&&(s, m)| if m { s > t } else { s <= t })
            .count();
        best = best.max(correct as f64 / scores.len() as f64);
    }
    best
}

/// Smallest observed non-mated score with exceed-rate <= far, by direct
/// enumeration; `None` when the target is below 1/N.
pub fn brute_tar_at_far(scores: &[(f64, bool)], far: f64) -> Option<(f64, f64)> {
    let mated: Vec<f64> = scores.iter().filter(|s| s.1).map(|s| s.0).collect();
    let mut non: Vec<f64> = scores.iter().filter(|s| !s.1).map(|s| s.0).collect();
    non.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if far < 1.0 / non.len() as f64 {
        return None;
    }
    for &t in &non {
        let rate = non.iter().filter(|&&s| s > t).count() as f64 / non.len() as f64;
        if rate <= far {
            let tar = mated.iter().filter(|&&s| s > t).count() as f64 / mated.len() as f64;
            return Some((tar, t));
        }
    }
    None
}

/// Identity-collapsed rank rates by direct per-probe enumeration.
pub fn brute_identify(
    probes: &Matrix,
    probe_labels: &[usize],
    gallery: &Matrix,
    gallery_labels: &[usize],
    ranks: &[usize],
) -> (Vec<(usize, f64)>, usize) {
    let pu = unit_rows(probes);
    let gu = unit_rows(gallery);
    let max_id = *gallery_labels.iter().max().unwrap();
    let mut probe_ranks = Vec::new();
    let mut excluded = 0usize;
    for i in 0..pu.rows() {
        let mut best: Vec<Option<f64>> = vec![None; max_id + 1];
        for j in 0..gu.rows() {
            let s = pu
                .row(i)
                .iter()
                .zip(gu.row(j))
                .map(|(a, b)| a * b)
                .sum::<f64>();
            let slot = &mut best[gallery_labels[j]];
            if slot.map_or(true, |old| s > old) {
                *slot = Some(s);
            }
        }
        let true_id = probe_labels[i];
        let s_true = match best.get(true_id).copied().flatten() {
            Some(s) => s,
            None => {
                excluded += 1;
                continue;
            }
        };
        let mut rank = 1;
        for (id, s) in best.iter().enumerate() {
            if id == true_id {
                continue;
            }
            if let Some(s) = s {
                if *s > s_true || (*s == s_true && id < true_id) {
                    rank += 1;
                }
            }
        }
        probe_ranks.push(rank);
    }
    let evaluated = probe_ranks.len();
    let rates = ranks
        .iter()
        .map(|&n| {
            let hits = probe_ranks.iter().filter(|&&r| r <= n).count();
            (n, hits as f64 / evaluated as f64)
        })
        .collect();
    (rates, excluded)
}

/// Direct error-versus-discard enumeration at a fixed threshold.
pub fn brute_edc(
    scores: &[(f64, bool)],
    pairs: &[funlab_core::eval::Pair],
    quality: &[f64],
    threshold: f64,
    fractions: &[f64],
) -> Vec<Option<f64>> {
    let n = quality.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| quality[a].partial_cmp(&quality[b]).unwrap().then(a.cmp(&b)));
    fractions
        .iter()
        .map(|&f| {
            let k = (f * n as f64).floor() as usize;
            let mut dead = vec![false; n];
            for &i in &order[..k.min(n)] {
                dead[i] = true;
            }
            let mut surv = 0usize;
            let mut miss = 0usize;
            for (p, &(s, mated)) in pairs.iter().zip(scores) {
                if mated && !dead[p.a] && !dead[p.b] {
                    surv += 1;
                    if s <= threshold {
                        miss += 1;
                    }
                }
            }
            if surv == 0 {
                None
            } else {
                Some(miss as f64 / surv as f64)
            }
        })
        .collect()
}

/// Random orthogonal matrix via Gram-Schmidt on a Gaussian draw.
pub fn random_orthogonal(d: usize, rng: &mut impl Rng) -> Matrix {
    loop {
        let mut q = Matrix::zeros(d, d);
        for v in q.data_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
        let mut ok = true;
        for i in 0..d {
            for j in 0..i {
                let proj: f64 = q.row(i).iter().zip(q.row(j)).map(|(a, b)| a * b).sum();
                let qj: Vec<f64> = q.row(j).to_vec();
                for (v, w) in q.row_mut(i).iter_mut().zip(qj) {
                    *v -= proj * w;
                }
            }
            let n = q.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if n < 1e-8 {
                ok = false;
                break;
            }
            for v in q.row_mut(i) {
                *v /= n;
            }
        }
        if ok {
            return q;
        }
    }
}

/// Applies the rotation `q` to every row of `m` (row -> q * row).
pub fn rotate_rows(m: &Matrix, q: &Matrix) -> Matrix {
    m.matmul_nt(q)
}
