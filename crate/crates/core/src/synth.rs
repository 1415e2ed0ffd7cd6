//! Synthetic identity-cluster data with controllable quality tiers, plus
//! vector-space analogs of the image augmentations.
//!
//! Each identity is a direction on the unit sphere; samples are that
//! direction plus isotropic Gaussian noise whose scale is the sample's
//! (hidden) quality tier. The image-space augmentations do not transfer to
//! vectors literally, so each is mapped to the nearest vector operation with
//! the original application probabilities kept: blending with a noise mask,
//! an in-plane rotation plus small translation, zeroing a contiguous block,
//! and averaging coordinate triples.

use crate::error::{Error, Result};
use crate::matrix::{norm2, Matrix};
use crate::rng::{self, Domain};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityTier {
    /// Fraction of each identity's samples drawn from this tier.
    pub fraction: f64,
    /// Noise standard deviation; doubles as the hidden ground-truth quality.
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_identities: usize,
    pub samples_per_identity: usize,
    pub input_dim: usize,
    pub quality_tiers: Vec<QualityTier>,
    pub seed: u64,
    /// Extra key folded into the per-sample noise streams. Bumping it yields
    /// fresh draws for the same identities (held-out splits).
    pub noise_stream: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_identities: 32,
            samples_per_identity: 64,
            input_dim: 96,
            quality_tiers: vec![
                QualityTier { fraction: 0.5, noise_sigma: 0.05 },
                QualityTier { fraction: 0.5, noise_sigma: 0.6 },
            ],
            seed: 42,
            noise_stream: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_identities < 2 {
            return bad(format!("synth.num_identities must be >= 2, got {}", self.num_identities));
        }
        if self.samples_per_identity < 2 {
            return bad(format!(
                "synth.samples_per_identity must be >= 2, got {}",
                self.samples_per_identity
            ));
        }
        if self.input_dim < 4 {
            return bad(format!("synth.input_dim must be >= 4, got {}", self.input_dim));
        }
        if self.quality_tiers.is_empty() {
            return bad("synth.quality_tiers must not be empty".into());
        }
        let mut total = 0.0;
        for (i, t) in self.quality_tiers.iter().enumerate() {
            if !(t.fraction > 0.0 && t.fraction <= 1.0) {
                return bad(format!("synth.quality_tiers[{i}].fraction must lie in (0, 1]"));
            }
            if !(t.noise_sigma >= 0.0 && t.noise_sigma.is_finite()) {
                return bad(format!("synth.quality_tiers[{i}].noise_sigma must be >= 0"));
            }
            total += t.fraction;
        }
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("synth.quality_tiers fractions must sum to 1, got {total}"));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.num_identities * self.samples_per_identity
    }

    /// Tier boundaries within one identity's block of samples: tier `t`
    /// covers within-identity indices `[bound(t-1), bound(t))`.
    fn tier_bounds(&self) -> Vec<usize> {
        let s = self.samples_per_identity as f64;
        let mut cum = 0.0;
        self.quality_tiers
            .iter()
            .map(|t| {
                cum += t.fraction;
                (cum * s).round() as usize
            })
            .collect()
    }

    /// Tier index of a sample given its position within its identity block.
    pub fn tier_of_local(&self, local_index: usize) -> usize {
        let bounds = self.tier_bounds();
        bounds
            .iter()
            .position(|&b| local_index < b)
            .unwrap_or(bounds.len() - 1)
    }

    /// Tier index of a sample by global index (identity-major layout).
    pub fn tier_of(&self, sample_index: usize) -> usize {
        self.tier_of_local(sample_index % self.samples_per_identity)
    }
}

/// One generated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub input: Vec<f64>,
    pub label: usize,
    /// The tier's noise sigma. Ground truth for oracle analyses only; never
    /// fed to training.
    pub true_quality: f64,
}

/// Generated dataset, identity-major: sample `i` belongs to identity
/// `i / samples_per_identity`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub true_quality: Vec<f64>,
    /// Hidden identity directions (not exported with the dataset file).
    pub prototypes: Matrix,
}

impl SynthDataset {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn sample(&self, i: usize) -> SynthSample {
        SynthSample {
            input: self.inputs.row(i).to_vec(),
            label: self.labels[i],
            true_quality: self.true_quality[i],
        }
    }
}

/// Generates the dataset. Identity prototypes are uniform on the unit sphere
/// (keyed by `seed` alone); each sample adds Gaussian noise keyed by
/// `(seed, noise_stream, sample_index)`, so the whole dataset is a pure
/// function of the config.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let (c, s, d) = (
        config.num_identities,
        config.samples_per_identity,
        config.input_dim,
    );
    let mut proto_rng = rng::stream(config.seed, Domain::IdentityPrototypes, &[]);
    let mut prototypes = Matrix::zeros(c, d);
    for i in 0..c {
        loop {
            for v in prototypes.row_mut(i) {
                *v = proto_rng.sample(StandardNormal);
            }
            let n = norm2(prototypes.row(i));
            if n > 1e-6 {
                let inv = 1.0 / n;
                for v in prototypes.row_mut(i) {
                    *v *= inv;
                }
                break;
            }
        }
    }

    let n_total = c * s;
    let mut inputs = Matrix::zeros(n_total, d);
    let mut labels = Vec::with_capacity(n_total);
    let mut true_quality = Vec::with_capacity(n_total);
    for idx in 0..n_total {
        let identity = idx / s;
        let local = idx % s;
        let tier = &config.quality_tiers[config.tier_of_local(local)];
        let mut noise_rng = rng::stream(
            config.seed,
            Domain::SampleNoise,
            &[config.noise_stream, idx as u64],
        );
        let row = inputs.row_mut(idx);
        for (v, &p) in row.iter_mut().zip(prototypes.row(identity)) {
            let eta: f64 = noise_rng.sample(StandardNormal);
            *v = p + tier.noise_sigma * eta;
        }
        labels.push(identity);
        true_quality.push(tier.noise_sigma);
    }

    Ok(SynthDataset {
        inputs,
        labels,
        true_quality,
        prototypes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub p_noise: f64,
    pub p_affine: f64,
    pub p_mask: f64,
    pub p_gray: f64,
    /// Upper bound of the convex blend weight toward the noise mask.
    pub noise_blend_max: f64,
    /// Scale of the noise mask entries.
    pub noise_sigma: f64,
    /// Max rotation angle in a random coordinate plane.
    pub affine_max_angle: f64,
    /// Per-coordinate translation scale.
    pub affine_shift_sigma: f64,
    /// Masked block length range as a fraction of the dimension.
    pub mask_frac_min: f64,
    pub mask_frac_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_noise: 0.20,
            p_affine: 0.20,
            p_mask: 0.20,
            p_gray: 0.05,
            noise_blend_max: 0.4,
            noise_sigma: 1.0,
            affine_max_angle: 0.5,
            affine_shift_sigma: 0.05,
            mask_frac_min: 0.05,
            mask_frac_max: 0.25,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            p_noise: 0.0,
            p_affine: 0.0,
            p_mask: 0.0,
            p_gray: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_noise", self.p_noise),
            ("p_affine", self.p_affine),
            ("p_mask", self.p_mask),
            ("p_gray", self.p_gray),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!(
                    "augment.{name} must lie in [0, 1], got {p}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.mask_frac_min)
            || !(0.0..=1.0).contains(&self.mask_frac_max)
            || self.mask_frac_min > self.mask_frac_max
        {
            return Err(Error::InvalidConfig(
                "augment.mask_frac_min/max must satisfy 0 <= min <= max <= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Applies the configured augmentations in place. The four decision draws
/// always happen (in a fixed order), so the stream position never depends on
/// which operations fire.
pub fn augment_in_place(x: &mut [f64], config: &AugmentConfig, rng: &mut ChaCha12Rng) {
    let d = x.len();
    let apply_noise = rng.random::<f64>() < config.p_noise;
    let apply_affine = rng.random::<f64>() < config.p_affine;
    let apply_mask = rng.random::<f64>() < config.p_mask;
    let apply_gray = rng.random::<f64>() < config.p_gray;

    if apply_noise {
        // weighted average with a noise mask, Gaussian or uniform
        let w = rng.random_range(0.0..config.noise_blend_max);
        let gaussian = rng.random::<bool>();
        for v in x.iter_mut() {
            let eta: f64 = if gaussian {
                rng.sample::<f64, _>(StandardNormal) * config.noise_sigma
            } else {
                rng.random_range(-config.noise_sigma..config.noise_sigma)
            };
            *v = (1.0 - w) * *v + w * eta;
        }
    }
    if apply_affine {
        // rotation in a random coordinate plane plus a small translation
        let i = rng.random_range(0..d);
        let mut j = rng.random_range(0..d - 1);
        if j >= i {
            j += 1;
        }
        let angle = rng.random_range(-config.affine_max_angle..config.affine_max_angle);
        let (sin, cos) = angle.sin_cos();
        let (xi, xj) = (x[i], x[j]);
        x[i] = cos * xi - sin * xj;
        x[j] = sin * xi + cos * xj;
        for v in x.iter_mut() {
            let shift: f64 = rng.sample(StandardNormal);
            *v += shift * config.affine_shift_sigma;
        }
    }
    if apply_mask {
        // zero a contiguous coordinate block
        let frac = if config.mask_frac_max > config.mask_frac_min {
            rng.random_range(config.mask_frac_min..config.mask_frac_max)
        } else {
            config.mask_frac_min
        };
        let len = ((frac * d as f64).round() as usize).clamp(1, d);
        let start = rng.random_range(0..=d - len);
        for v in &mut x[start..start + len] {
            *v = 0.0;
        }
    }
    if apply_gray {
        // average coordinate triples and broadcast back
        for chunk in x.chunks_mut(3) {
            if chunk.len() == 3 {
                let mean = (chunk[0] + chunk[1] + chunk[2]) / 3.0;
                chunk.fill(mean);
            }
        }
    }
}

/// By-value convenience over [`augment_in_place`].
pub fn augment(
    sample: &SynthSample,
    config: &AugmentConfig,
    rng: &mut ChaCha12Rng,
) -> SynthSample {
    let mut out = sample.clone();
    augment_in_place(&mut out.input, config, rng);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_tier_reproduces_prototypes() {
        let config = SynthConfig {
            num_identities: 4,
            samples_per_identity: 3,
            input_dim: 8,
            quality_tiers: vec![QualityTier { fraction: 1.0, noise_sigma: 0.0 }],
            seed: 5,
            noise_stream: 0,
        };
        let ds = generate(&config).unwrap();
        for i in 0..ds.len() {
            let id = ds.labels[i];
            assert_eq!(ds.inputs.row(i), ds.prototypes.row(id));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let config = SynthConfig::default();
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a, b);
        let mut other = config.clone();
        other.noise_stream = 1;
        let c = generate(&other).unwrap();
        assert_eq!(a.prototypes, c.prototypes);
        assert_ne!(a.inputs, c.inputs);
    }

    #[test]
    fn counts_and_balance() {
        let config = SynthConfig {
            num_identities: 32,
            samples_per_identity: 64,
            ..Default::default()
        };
        let ds = generate(&config).unwrap();
        assert_eq!(ds.len(), 2048);
        let mut counts = vec![0usize; 32];
        for &l in &ds.labels {
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c == 64));
        // two tiers at 0.5/0.5: 32 samples each within every identity
        let clean = ds.true_quality.iter().filter(|&&q| q == 0.05).count();
        assert_eq!(clean, 1024);
    }

    #[test]
    fn augment_noop_when_probabilities_are_zero() {
        let sample = SynthSample {
            input: vec![0.5, -0.25, 1.0, 2.0],
            label: 0,
            true_quality: 0.0,
        };
        let mut rng = rng::stream(1, Domain::Augment, &[0, 0]);
        let out = augment(&sample, &AugmentConfig::disabled(), &mut rng);
        assert_eq!(out, sample);
    }

    #[test]
    fn full_mask_zeroes_the_vector() {
        let cfg = AugmentConfig {
            p_noise: 0.0,
            p_affine: 0.0,
            p_mask: 1.0,
            p_gray: 0.0,
            mask_frac_min: 1.0,
            mask_frac_max: 1.0,
            ..Default::default()
        };
        let mut x = vec![1.0; 16];
        let mut rng = rng::stream(2, Domain::Augment, &[0, 1]);
        augment_in_place(&mut x, &cfg, &mut rng);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn augmentation_is_reproducible() {
        let cfg = AugmentConfig::default();
        let base = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
        for key in 0..20u64 {
            let mut a = base.clone();
            let mut b = base.clone();
            augment_in_place(&mut a, &cfg, &mut rng::stream(7, Domain::Augment, &[key, 3]));
            augment_in_place(&mut b, &cfg, &mut rng::stream(7, Domain::Augment, &[key, 3]));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn tier_fractions_must_sum_to_one() {
        let config = SynthConfig {
            quality_tiers: vec![
                QualityTier { fraction: 0.5, noise_sigma: 0.0 },
                QualityTier { fraction: 0.4, noise_sigma: 1.0 },
            ],
            ..Default::default()
        };
        assert!(config.validate().is_err());
    }
}
