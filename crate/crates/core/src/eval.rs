//! Verification, identification, error-versus-discard, and norm/utility
//! density analyses over embeddings.
//!
//! Embeddings are unit-normalized internally; every comparison is a cosine.
//! Thresholds follow one convention throughout: a pair is accepted when its
//! score is strictly greater than the threshold, and operating points are
//! chosen as the smallest observed non-mated score whose exceed-rate meets
//! the target.

use crate::error::{Error, Result};
use crate::margin::{cosine_logits, pos_nn, ClassPrototypes, EmbeddingBatch, MarginConfig};
use crate::matrix::{dot, norm2, Matrix};
use crate::parallel;
use crate::rng::{self, Domain};
use crate::stats::{certainty_ratio, NormalizerState};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub mated: bool,
}

/// A list of mated / non-mated comparisons by sample index.
#[derive(Debug, Clone, PartialEq)]
pub struct PairProtocol {
    pub pairs: Vec<Pair>,
}

impl PairProtocol {
    pub fn new(pairs: Vec<Pair>) -> Result<Self> {
        if !pairs.iter().any(|p| p.mated) || !pairs.iter().any(|p| !p.mated) {
            return Err(Error::InvalidConfig(
                "protocol needs at least one mated and one non-mated pair".into(),
            ));
        }
        Ok(PairProtocol { pairs })
    }

    pub fn validate_against(&self, n_samples: usize) -> Result<()> {
        for (i, p) in self.pairs.iter().enumerate() {
            if p.a >= n_samples || p.b >= n_samples {
                return Err(Error::InvalidConfig(format!(
                    "protocol pair {i} references sample out of range (n = {n_samples})"
                )));
            }
        }
        Ok(())
    }

    pub fn mated_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.mated).count()
    }

    pub fn non_mated_count(&self) -> usize {
        self.pairs.len() - self.mated_count()
    }
}

/// Builds a deterministic protocol over `candidates`: up to
/// `mated_per_identity` within-identity pairs per identity plus
/// `non_mated_total` cross-identity pairs, all keyed by `seed`.
pub fn generate_protocol(
    labels: &[usize],
    candidates: &[usize],
    mated_per_identity: usize,
    non_mated_total: usize,
    seed: u64,
) -> Result<PairProtocol> {
    if candidates.len() < 2 {
        return Err(Error::EmptyInput("protocol candidates"));
    }
    let mut rng = rng::stream(seed, Domain::PairProtocol, &[]);
    let max_label = candidates.iter().map(|&i| labels[i]).max().unwrap_or(0);
    let mut by_identity: Vec<Vec<usize>> = vec![Vec::new(); max_label + 1];
    for &i in candidates {
        by_identity[labels[i]].push(i);
    }

    let mut pairs = Vec::new();
    for members in by_identity.iter().filter(|m| m.len() >= 2) {
        let mut seen = std::collections::HashSet::new();
        let max_pairs = members.len() * (members.len() - 1) / 2;
        let want = mated_per_identity.min(max_pairs);
        let mut guard = 0;
        while seen.len() < want && guard < 100 * want.max(1) {
            guard += 1;
            let x = members[rng.random_range(0..members.len())];
            let mut y = x;
            while y == x {
                y = members[rng.random_range(0..members.len())];
            }
            let key = (x.min(y), x.max(y));
            if seen.insert(key) {
                pairs.push(Pair { a: key.0, b: key.1, mated: true });
            }
        }
    }

    let mut seen = std::collections::HashSet::new();
    let mut guard = 0;
    while seen.len() < non_mated_total && guard < 100 * non_mated_total.max(1) {
        guard += 1;
        let x = candidates[rng.random_range(0..candidates.len())];
        let y = candidates[rng.random_range(0..candidates.len())];
        if labels[x] == labels[y] {
            continue;
        }
        let key = (x.min(y), x.max(y));
        if seen.insert(key) {
            pairs.push(Pair { a: key.0, b: key.1, mated: false });
        }
    }

    PairProtocol::new(pairs)
}

pub fn write_protocol_csv(w: &mut impl Write, protocol: &PairProtocol) -> Result<()> {
    writeln!(w, "index_a,index_b,mated")?;
    for p in &protocol.pairs {
        writeln!(w, "{},{},{}", p.a, p.b, u8::from(p.mated))?;
    }
    Ok(())
}

pub fn read_protocol_csv(r: &mut impl BufRead) -> Result<PairProtocol> {
    let mut pairs = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with("index_a") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Format(format!(
                "protocol line {}: expected 3 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parse_idx = |s: &str| {
            s.trim().parse::<usize>().map_err(|_| {
                Error::Format(format!("protocol line {}: bad index `{s}`", lineno + 1))
            })
        };
        let mated = match fields[2].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(Error::Format(format!(
                    "protocol line {}: bad mated flag `{other}`",
                    lineno + 1
                )))
            }
        };
        pairs.push(Pair {
            a: parse_idx(fields[0])?,
            b: parse_idx(fields[1])?,
            mated,
        });
    }
    PairProtocol::new(pairs)
}

/// Copies `m` with every row scaled to unit norm.
pub fn unit_normalized(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let n = norm2(out.row(i));
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::BadNorm { row: i });
        }
        let inv = 1.0 / n;
        for v in out.row_mut(i) {
            *v *= inv;
        }
    }
    Ok(out)
}

/// Cosine score of every protocol pair, in protocol order.
fn pair_scores(embeddings: &Matrix, protocol: &PairProtocol) -> Result<Vec<f64>> {
    protocol.validate_against(embeddings.rows())?;
    let unit = unit_normalized(embeddings)?;
    Ok(parallel::map_collect(protocol.pairs.len(), |k| {
        let p = &protocol.pairs[k];
        dot(unit.row(p.a), unit.row(p.b))
    }))
}

fn split_scores(protocol: &PairProtocol, scores: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut mated = Vec::new();
    let mut non_mated = Vec::new();
    for (p, &s) in protocol.pairs.iter().zip(scores) {
        if p.mated {
            mated.push(s);
        } else {
            non_mated.push(s);
        }
    }
    (mated, non_mated)
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// Count of entries strictly greater than `t` in an ascending-sorted slice.
fn count_above(sorted_scores: &[f64], t: f64) -> usize {
    sorted_scores.len() - sorted_scores.partition_point(|&s| s <= t)
}

/// Best-threshold verification accuracy: sweeps all midpoints between
/// adjacent distinct scores (plus sentinels past both ends).
pub fn verify_best_accuracy(embeddings: &Matrix, protocol: &PairProtocol) -> Result<f64> {
    let scores = pair_scores(embeddings, protocol)?;
    let (mated, non_mated) = split_scores(protocol, &scores);
    let mated = sorted(mated);
    let non_mated = sorted(non_mated);
    let all = sorted(scores);

    let mut candidates = vec![all[0] - 1.0, all[all.len() - 1] + 1.0];
    for w in all.windows(2) {
        if w[1] > w[0] {
            candidates.push(0.5 * (w[0] + w[1]));
        }
    }

    let total = (mated.len() + non_mated.len()) as f64;
    let mut best = 0.0f64;
    for t in candidates {
        let tp = count_above(&mated, t);
        let tn = non_mated.len() - count_above(&non_mated, t);
        best = best.max((tp + tn) as f64 / total);
    }
    Ok(best)
}

/// Outcome of a TAR@FAR query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum TarOutcome {
    Tar { tar: f64, threshold: f64 },
    Unattainable { unattainable: bool, min_measurable: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TarAtFar {
    pub far_target: f64,
    #[serde(flatten)]
    pub outcome: TarOutcome,
}

/// Smallest non-mated score whose exceed-rate is at or below `target`.
/// `non_mated` must be ascending. `None` when the target is below the
/// smallest measurable rate `1/N`.
fn far_threshold(non_mated: &[f64], target: f64) -> Option<f64> {
    let n = non_mated.len();
    if target < 1.0 / n as f64 {
        return None;
    }
    // exceed-rate at non_mated[k] is non-increasing in k
    let k = partition_point_idx(n, |k| {
        count_above(non_mated, non_mated[k]) as f64 / n as f64 > target
    });
    Some(non_mated[k.min(n - 1)])
}

/// First index in `0..n` where `pred` turns false (pred is monotone
/// true..false).
fn partition_point_idx(n: usize, pred: impl Fn(usize) -> bool) -> usize {
    let mut lo = 0;
    let mut hi = n;
    while lo < hi {
        let mid = (lo + hi) / 2;
        if pred(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// True-acceptance rate at each requested false-acceptance target. Targets
/// below `1 / #non-mated` are reported as unattainable rather than silently
/// evaluated.
pub fn verify_tar_at_far(
    embeddings: &Matrix,
    protocol: &PairProtocol,
    far_targets: &[f64],
) -> Result<Vec<TarAtFar>> {
    let scores = pair_scores(embeddings, protocol)?;
    let (mated, non_mated) = split_scores(protocol, &scores);
    let mated = sorted(mated);
    let non_mated = sorted(non_mated);
    let min_measurable = 1.0 / non_mated.len() as f64;

    Ok(far_targets
        .iter()
        .map(|&far| {
            let outcome = match far_threshold(&non_mated, far) {
                Some(t) => TarOutcome::Tar {
                    tar: count_above(&mated, t) as f64 / mated.len() as f64,
                    threshold: t,
                },
                None => TarOutcome::Unattainable {
                    unattainable: true,
                    min_measurable,
                },
            };
            TarAtFar { far_target: far, outcome }
        })
        .collect())
}

/// Rank-N identification over an identity-collapsed gallery.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentifyResult {
    /// `(rank, fraction of evaluated probes whose identity ranked <= rank)`
    pub rank_rates: Vec<(usize, f64)>,
    /// Probes whose identity has no gallery sample.
    pub excluded: usize,
    pub evaluated: usize,
}

pub fn identify(
    probes: &Matrix,
    probe_labels: &[usize],
    gallery: &Matrix,
    gallery_labels: &[usize],
    ranks: &[usize],
) -> Result<IdentifyResult> {
    if gallery.rows() == 0 {
        return Err(Error::EmptyInput("gallery"));
    }
    if probes.rows() == 0 {
        return Err(Error::EmptyInput("probes"));
    }
    if probes.cols() != gallery.cols() {
        return Err(Error::ShapeMismatch {
            context: "identify",
            expected: format!("probe dim {}", gallery.cols()),
            actual: format!("{}", probes.cols()),
        });
    }
    if probe_labels.len() != probes.rows() || gallery_labels.len() != gallery.rows() {
        return Err(Error::ShapeMismatch {
            context: "identify labels",
            expected: format!("{} probe / {} gallery", probes.rows(), gallery.rows()),
            actual: format!("{} / {}", probe_labels.len(), gallery_labels.len()),
        });
    }
    if ranks.is_empty() {
        return Err(Error::EmptyInput("ranks"));
    }

    let probes_u = unit_normalized(probes)?;
    let gallery_u = unit_normalized(gallery)?;
    let max_id = gallery_labels.iter().copied().max().unwrap();

    // rank of the true identity for each probe; None when absent
    let probe_ranks: Vec<Option<usize>> = parallel::map_collect(probes_u.rows(), |i| {
        let p = probes_u.row(i);
        let mut best = vec![f64::NEG_INFINITY; max_id + 1];
        for (j, &id) in gallery_labels.iter().enumerate() {
            let s = dot(p, gallery_u.row(j));
            if s > best[id] {
                best[id] = s;
            }
        }
        let true_id = probe_labels[i];
        if true_id > max_id || best[true_id] == f64::NEG_INFINITY {
            return None;
        }
        let s_true = best[true_id];
        let mut rank = 1;
        for (id, &s) in best.iter().enumerate() {
            if s == f64::NEG_INFINITY || id == true_id {
                continue;
            }
            // ties break toward the lower identity index
            if s > s_true || (s == s_true && id < true_id) {
                rank += 1;
            }
        }
        Some(rank)
    });

    let excluded = probe_ranks.iter().filter(|r| r.is_none()).count();
    let evaluated = probe_ranks.len() - excluded;
    if evaluated == 0 {
        return Err(Error::EmptyInput("identify: every probe identity missing from gallery"));
    }
    let rank_rates = ranks
        .iter()
        .map(|&n| {
            let hits = probe_ranks
                .iter()
                .flatten()
                .filter(|&&r| r <= n)
                .count();
            (n, hits as f64 / evaluated as f64)
        })
        .collect();

    Ok(IdentifyResult {
        rank_rates,
        excluded,
        evaluated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QualitySource {
    Cr,
    TrueNoise,
    External,
}

/// Error-versus-discard curve at a fixed decision threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdcCurve {
    pub quality_source: QualitySource,
    pub fmr_target: f64,
    pub threshold: f64,
    pub discard_fractions: Vec<f64>,
    pub fnmr_values: Vec<f64>,
    pub surviving_mated: Vec<usize>,
    /// First requested fraction at which no mated pair survived; the curve
    /// stops just before it.
    pub truncated_at: Option<f64>,
}

impl EdcCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("discard_fraction,fnmr,surviving_mated\n");
        for ((f, v), m) in self
            .discard_fractions
            .iter()
            .zip(&self.fnmr_values)
            .zip(&self.surviving_mated)
        {
            out.push_str(&format!("{f},{v},{m}\n"));
        }
        if let Some(t) = self.truncated_at {
            out.push_str(&format!("# truncated: no mated pairs survive at fraction {t}\n"));
        }
        out
    }
}

/// Sample indices in discard order: ascending quality, ties broken by the
/// lower sample index first.
pub fn discard_order(quality: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..quality.len()).collect();
    idx.sort_by(|&a, &b| {
        quality[a]
            .partial_cmp(&quality[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    idx
}

/// Error-versus-discard characteristic. The decision threshold is fixed once
/// on the full set at `fmr_target`; at each discard fraction the
/// lowest-quality samples are removed (a pair dies with either member) and
/// the false non-match rate is recomputed on the surviving mated pairs.
pub fn edc(
    embeddings: &Matrix,
    protocol: &PairProtocol,
    quality: &[f64],
    fmr_target: f64,
    discard_fractions: &[f64],
    source: QualitySource,
) -> Result<EdcCurve> {
    if quality.len() != embeddings.rows() {
        return Err(Error::ShapeMismatch {
            context: "edc quality scores",
            expected: format!("{}", embeddings.rows()),
            actual: format!("{}", quality.len()),
        });
    }
    if discard_fractions.is_empty() {
        return Err(Error::EmptyInput("discard fractions"));
    }
    for w in discard_fractions.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidConfig(
                "edc discard fractions must be strictly increasing".into(),
            ));
        }
    }
    if discard_fractions[0] < 0.0 || *discard_fractions.last().unwrap() >= 1.0 {
        return Err(Error::InvalidConfig("edc discard fractions must lie in [0, 1)".into()));
    }

    let scores = pair_scores(embeddings, protocol)?;
    let (_, non_mated) = split_scores(protocol, &scores);
    let non_sorted = sorted(non_mated);
    let threshold = far_threshold(&non_sorted, fmr_target).ok_or(Error::UnattainableFar {
        target: fmr_target,
        non_mated: non_sorted.len(),
        min: 1.0 / non_sorted.len() as f64,
    })?;

    let order = discard_order(quality);
    let n = quality.len();
    let mut fnmr_values = Vec::new();
    let mut surviving_mated = Vec::new();
    let mut kept_fractions = Vec::new();
    let mut truncated_at = None;

    for &frac in discard_fractions {
        let k = (frac * n as f64).floor() as usize;
        let mut discarded = vec![false; n];
        for &i in &order[..k.min(n)] {
            discarded[i] = true;
        }
        let mut survivors = 0usize;
        let mut misses = 0usize;
        for (p, &s) in protocol.pairs.iter().zip(&scores) {
            if p.mated && !discarded[p.a] && !discarded[p.b] {
                survivors += 1;
                if s <= threshold {
                    misses += 1;
                }
            }
        }
        if survivors == 0 {
            truncated_at = Some(frac);
            break;
        }
        kept_fractions.push(frac);
        fnmr_values.push(misses as f64 / survivors as f64);
        surviving_mated.push(survivors);
    }

    if fnmr_values.is_empty() {
        return Err(Error::EmptyInput("edc: no mated pairs survive the first fraction"));
    }

    Ok(EdcCurve {
        quality_source: source,
        fmr_target,
        threshold,
        discard_fractions: kept_fractions,
        fnmr_values,
        surviving_mated,
        truncated_at,
    })
}

/// One `(norm, certainty ratio)` point per sample plus a binned density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormUtilityPoint {
    pub norm: f64,
    pub cr: f64,
    pub norm_hat: f64,
    pub cr_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram2d {
    pub norm_edges: Vec<f64>,
    pub cr_edges: Vec<f64>,
    /// `counts[norm_bin][cr_bin]`
    pub counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormUtilityMap {
    pub points: Vec<NormUtilityPoint>,
    pub histogram: Histogram2d,
}

fn bin_index(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
}

pub fn norm_utility_map(
    batch: &EmbeddingBatch,
    protos: &ClassPrototypes,
    config: &MarginConfig,
    stats: &NormalizerState,
    bins: usize,
) -> Result<NormUtilityMap> {
    if bins == 0 {
        return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
    }
    let cl = cosine_logits(batch, protos)?;
    let pn = pos_nn(&cl.cosines, &batch.labels)?;
    let points: Vec<NormUtilityPoint> = pn
        .iter()
        .zip(&cl.norms)
        .map(|(&(pos, nn), &norm)| {
            let cr = certainty_ratio(pos, nn, config.epsilon);
            NormUtilityPoint {
                norm,
                cr,
                norm_hat: stats.norm_hat(norm, config.h),
                cr_hat: stats.cr_hat(cr, config.h),
            }
        })
        .collect();

    let (n_lo, n_hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.norm), hi.max(p.norm))
        });
    let (c_lo, c_hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.cr), hi.max(p.cr))
        });
    let edges = |lo: f64, hi: f64| -> Vec<f64> {
        (0..=bins)
            .map(|k| lo + (hi - lo) * k as f64 / bins as f64)
            .collect()
    };
    let mut counts = vec![vec![0u64; bins]; bins];
    for p in &points {
        counts[bin_index(p.norm, n_lo, n_hi, bins)][bin_index(p.cr, c_lo, c_hi, bins)] += 1;
    }

    Ok(NormUtilityMap {
        points,
        histogram: Histogram2d {
            norm_edges: edges(n_lo, n_hi),
            cr_edges: edges(c_lo, c_hi),
            counts,
        },
    })
}
