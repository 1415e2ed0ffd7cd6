//! Cosine-logit geometry and the margin-softmax loss family.
//!
//! All variants share one structure: logits are scaled cosines between a
//! sample's direction and unit class centers, and only the true-class logit
//! is reshaped by a margin. The positive-class term is
//! `cos(scale_mult * theta + angle_offset) - add_offset`; static variants pin
//! the three knobs from the config while the adaptive variants derive
//! `angle_offset`/`add_offset` per sample from the normalized feature norm
//! (AdaFace) or from its convex mix with the normalized certainty ratio
//! (FunFace).
//!
//! Gradients are analytic. The adaptive signals (normalized norm, certainty
//! ratio, kappa) are treated as constants in the backward pass: no gradient
//! flows through the margin-adaptation path.

use crate::error::{Error, Result};
use crate::matrix::{dot, norm2, Matrix};
use crate::parallel;
use crate::stats::{certainty_ratio, mix_kappa, NormalizerState};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Floor for `sin(theta)` in the angular-margin slope; bounds the (true)
/// singularity of `d cos(theta + c) / d cos(theta)` at `theta = 0`.
const SIN_FLOOR: f64 = 1e-8;

/// Accepted deviation from unit length for prototype rows.
const UNIT_TOL: f64 = 1e-6;

/// Loss variants, ordered roughly by expressiveness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginVariant {
    Ce,
    Sphere,
    Arc,
    Cos,
    Generalized,
    AdaFace,
    FunFace,
}

impl MarginVariant {
    pub const ALL: [MarginVariant; 7] = [
        MarginVariant::Ce,
        MarginVariant::Sphere,
        MarginVariant::Arc,
        MarginVariant::Cos,
        MarginVariant::Generalized,
        MarginVariant::AdaFace,
        MarginVariant::FunFace,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MarginVariant::Ce => "ce",
            MarginVariant::Sphere => "sphere",
            MarginVariant::Arc => "arc",
            MarginVariant::Cos => "cos",
            MarginVariant::Generalized => "generalized",
            MarginVariant::AdaFace => "adaface",
            MarginVariant::FunFace => "funface",
        }
    }
}

/// Hyperparameters of the loss family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginConfig {
    pub variant: MarginVariant,
    /// Adaptive margin magnitude (AdaFace / FunFace).
    pub m: f64,
    /// Static multiplicative angular margin.
    pub m_sph: f64,
    /// Static additive angular margin.
    pub m_arc: f64,
    /// Static additive cosine margin.
    pub m_cos: f64,
    /// Logit scale.
    pub s: f64,
    /// Spread divisor of the normalized distributions.
    pub h: f64,
    /// Mixing factor between normalized norm (1.0) and normalized
    /// certainty ratio (0.0).
    pub lambda: f64,
    /// Denominator guard of the certainty ratio.
    pub epsilon: f64,
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig {
            variant: MarginVariant::FunFace,
            m: 0.4,
            m_sph: 1.0,
            m_arc: 0.5,
            m_cos: 0.35,
            s: 64.0,
            h: 0.333,
            lambda: 0.1,
            epsilon: 1e-4,
        }
    }
}

impl MarginConfig {
    pub fn with_variant(variant: MarginVariant) -> Self {
        MarginConfig {
            variant,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.s.is_finite() && self.s > 0.0) {
            return bad(format!("margin.s must be > 0, got {}", self.s));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return bad(format!("margin.h must be > 0, got {}", self.h));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("margin.epsilon must be > 0, got {}", self.epsilon));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("margin.lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.m.is_finite() && self.m >= 0.0) {
            return bad(format!("margin.m must be >= 0, got {}", self.m));
        }
        for (name, v) in [("m_sph", self.m_sph), ("m_arc", self.m_arc), ("m_cos", self.m_cos)] {
            if !v.is_finite() {
                return bad(format!("margin.{name} must be finite, got {v}"));
            }
        }
        if self.variant == MarginVariant::Sphere && self.m_sph < 1.0 {
            return bad(format!(
                "margin.m_sph must be >= 1 for the sphere variant, got {}",
                self.m_sph
            ));
        }
        Ok(())
    }
}

/// Raw (unnormalized) embeddings with class labels.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl EmbeddingBatch {
    /// Validates shape, label count, finiteness, and nonzero row norms.
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::EmptyInput("embedding batch"));
        }
        if features.cols() < 2 {
            return Err(Error::ShapeMismatch {
                context: "embedding batch",
                expected: "embedding dimension >= 2".into(),
                actual: format!("{}", features.cols()),
            });
        }
        if labels.len() != features.rows() {
            return Err(Error::ShapeMismatch {
                context: "embedding batch labels",
                expected: format!("{} labels", features.rows()),
                actual: format!("{}", labels.len()),
            });
        }
        for i in 0..features.rows() {
            let n = norm2(features.row(i));
            if !(n.is_finite() && n > 0.0) {
                return Err(Error::BadNorm { row: i });
            }
        }
        Ok(EmbeddingBatch { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }
}

/// Unit-norm class center directions, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototypes {
    centers: Matrix,
}

impl ClassPrototypes {
    /// Wraps a matrix whose rows are already unit-norm.
    pub fn from_unit_rows(centers: Matrix) -> Result<Self> {
        if centers.rows() < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 class prototypes, got {}",
                centers.rows()
            )));
        }
        for i in 0..centers.rows() {
            let n = norm2(centers.row(i));
            if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
                return Err(Error::NotUnitNorm { row: i, norm: n });
            }
        }
        Ok(ClassPrototypes { centers })
    }

    /// Normalizes each row of `centers` and wraps; zero rows are rejected.
    pub fn from_rows_renormalized(centers: Matrix) -> Result<Self> {
        let mut protos = ClassPrototypes { centers };
        protos.renormalize()?;
        if protos.centers.rows() < 2 {
            return Err(Error::InvalidConfig("need at least 2 class prototypes".into()));
        }
        Ok(protos)
    }

    /// Draws `c` directions uniformly on the unit sphere in `d` dimensions.
    pub fn random(c: usize, d: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut m = Matrix::zeros(c, d);
        for i in 0..c {
            loop {
                for v in m.row_mut(i) {
                    *v = rng.sample(StandardNormal);
                }
                let n = norm2(m.row(i));
                if n > 1e-6 {
                    let inv = 1.0 / n;
                    for v in m.row_mut(i) {
                        *v *= inv;
                    }
                    break;
                }
            }
        }
        ClassPrototypes::from_unit_rows(m)
    }

    /// Rescales every row to unit length. Idempotent up to rounding.
    pub fn renormalize(&mut self) -> Result<()> {
        for i in 0..self.centers.rows() {
            let n = norm2(self.centers.row(i));
            if !(n.is_finite() && n > 0.0) {
                return Err(Error::BadNorm { row: i });
            }
            let inv = 1.0 / n;
            for v in self.centers.row_mut(i) {
                *v *= inv;
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.centers.rows()
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    pub fn centers(&self) -> &Matrix {
        &self.centers
    }

    pub(crate) fn centers_mut(&mut self) -> &mut Matrix {
        &mut self.centers
    }
}

/// Per-sample quantities recorded by the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerSampleDiagnostics {
    pub theta_pos: f64,
    pub cos_pos: f64,
    pub cos_nn: f64,
    pub norm: f64,
    pub norm_hat: f64,
    pub cr: f64,
    pub cr_hat: f64,
    pub kappa: f64,
    pub g_angle: f64,
    pub g_add: f64,
    pub pct: f64,
}

/// Loss value plus gradients and diagnostics.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grad_features: Matrix,
    pub grad_centers: Matrix,
    pub diagnostics: Vec<PerSampleDiagnostics>,
}

/// Cosine-logit matrix and the feature norms it was computed from.
#[derive(Debug, Clone)]
pub struct CosineLogits {
    pub cosines: Matrix,
    pub norms: Vec<f64>,
}

/// Cosines between every sample direction and every class center, clamped to
/// exactly [-1, 1], plus the raw feature norms.
pub fn cosine_logits(batch: &EmbeddingBatch, protos: &ClassPrototypes) -> Result<CosineLogits> {
    let (b, d) = (batch.features.rows(), batch.features.cols());
    let c = protos.num_classes();
    if d != protos.dim() {
        return Err(Error::ShapeMismatch {
            context: "cosine_logits",
            expected: format!("feature dim {}", protos.dim()),
            actual: format!("{d}"),
        });
    }
    let rows: Vec<Result<(Vec<f64>, f64)>> = parallel::map_collect(b, |i| {
        let z = batch.features.row(i);
        let n = norm2(z);
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::BadNorm { row: i });
        }
        let inv = 1.0 / n;
        let mut row = Vec::with_capacity(c);
        for j in 0..c {
            let raw = dot(z, protos.centers.row(j)) * inv;
            if !raw.is_finite() || raw.abs() > 1.0 + 1e-9 {
                return Err(Error::NonFinite {
                    what: "cosine logit",
                    sample: i,
                });
            }
            row.push(raw.clamp(-1.0, 1.0));
        }
        Ok((row, n))
    });
    let mut cosines = Matrix::zeros(b, c);
    let mut norms = Vec::with_capacity(b);
    for (i, r) in rows.into_iter().enumerate() {
        let (row, n) = r?;
        cosines.row_mut(i).copy_from_slice(&row);
        norms.push(n);
    }
    Ok(CosineLogits { cosines, norms })
}

/// Per-sample `(cos_pos, cos_nn)`: cosine to the true class center and the
/// maximal cosine over negative centers (ties keep the lowest class index).
pub fn pos_nn(cosines: &Matrix, labels: &[usize]) -> Result<Vec<(f64, f64)>> {
    pos_nn_mode(cosines, labels, true)
}

pub(crate) fn pos_nn_mode(
    cosines: &Matrix,
    labels: &[usize],
    compute_nn: bool,
) -> Result<Vec<(f64, f64)>> {
    let (b, c) = (cosines.rows(), cosines.cols());
    if labels.len() != b {
        return Err(Error::ShapeMismatch {
            context: "pos_nn labels",
            expected: format!("{b}"),
            actual: format!("{}", labels.len()),
        });
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
        return Err(Error::LabelOutOfRange {
            row: i,
            label: l,
            num_classes: c,
        });
    }
    Ok(parallel::map_collect(b, |i| {
        let row = cosines.row(i);
        let y = labels[i];
        let pos = row[y];
        let nn = if compute_nn {
            let mut best = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if j != y && v > best {
                    best = v;
                }
            }
            best
        } else {
            0.0
        };
        (pos, nn)
    }))
}

/// The three knobs of the positive-class term plus the adaptive signals that
/// produced them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginTerms {
    pub scale_mult: f64,
    pub angle_offset: f64,
    pub add_offset: f64,
    pub norm_hat: f64,
    pub cr: f64,
    pub cr_hat: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum DiagMode {
    /// Compute only what the variant's margin needs.
    Required,
    /// Additionally fill every diagnostic signal.
    Full,
}

pub(crate) fn margin_terms_mode(
    config: &MarginConfig,
    norm: f64,
    cos_pos: f64,
    cos_nn: f64,
    stats: &NormalizerState,
    mode: DiagMode,
) -> MarginTerms {
    use MarginVariant::*;
    let full = mode == DiagMode::Full;
    let needs_norm = matches!(config.variant, AdaFace | FunFace);
    let needs_cr = config.variant == FunFace;

    let norm_hat = if needs_norm || full {
        stats.norm_hat(norm, config.h)
    } else {
        0.0
    };
    let (cr, cr_hat) = if needs_cr || full {
        let cr = certainty_ratio(cos_pos, cos_nn, config.epsilon);
        (cr, stats.cr_hat(cr, config.h))
    } else {
        (0.0, 0.0)
    };

    let (scale_mult, angle_offset, add_offset, kappa) = match config.variant {
        Ce => (1.0, 0.0, 0.0, 0.0),
        Sphere => (config.m_sph, 0.0, 0.0, 0.0),
        Arc => (1.0, config.m_arc, 0.0, 0.0),
        Cos => (1.0, 0.0, config.m_cos, 0.0),
        Generalized => (config.m_sph, config.m_arc, config.m_cos, 0.0),
        AdaFace => {
            let k = norm_hat;
            (1.0, -config.m * k, config.m + config.m * k, k)
        }
        FunFace => {
            let k = mix_kappa(norm_hat, cr_hat, config.lambda);
            (1.0, -config.m * k, config.m + config.m * k, k)
        }
    };

    MarginTerms {
        scale_mult,
        angle_offset,
        add_offset,
        norm_hat,
        cr,
        cr_hat,
        kappa,
    }
}

/// Margin terms with all diagnostic signals filled.
pub fn margin_terms(
    config: &MarginConfig,
    norm: f64,
    cos_pos: f64,
    cos_nn: f64,
    stats: &NormalizerState,
) -> MarginTerms {
    margin_terms_mode(config, norm, cos_pos, cos_nn, stats, DiagMode::Full)
}

/// Positive-class term and its derivative w.r.t. `cos_pos`.
///
/// The angle argument is clamped to [0, pi] before the cosine so large
/// offsets cannot wrap around and invert the margin ordering; inside the
/// clamp the derivative is zero. When the term is purely additive
/// (`scale_mult == 1`, no angle offset) the arccos detour is skipped and the
/// term reduces exactly to `cos_pos - add_offset`.
pub(crate) fn pct_and_slope(
    scale_mult: f64,
    angle_offset: f64,
    add_offset: f64,
    cos_pos: f64,
) -> (f64, f64) {
    if scale_mult == 1.0 && angle_offset == 0.0 {
        return (cos_pos - add_offset, 1.0);
    }
    let c = cos_pos.clamp(-1.0, 1.0);
    let theta = c.acos();
    let a_raw = scale_mult * theta + angle_offset;
    let a = a_raw.clamp(0.0, PI);
    let pct = a.cos() - add_offset;
    let slope = if (0.0..=PI).contains(&a_raw) {
        scale_mult * a.sin() / theta.sin().max(SIN_FLOOR)
    } else {
        0.0
    };
    (pct, slope)
}

/// The positive-class term for any variant: static variants read their
/// margins from `config`, adaptive ones take the supplied per-sample offsets.
pub fn generalized_pct(cos_pos: f64, config: &MarginConfig, g_angle: f64, g_add: f64) -> f64 {
    use MarginVariant::*;
    let (scale, ang, add) = match config.variant {
        Ce => (1.0, 0.0, 0.0),
        Sphere => (config.m_sph, 0.0, 0.0),
        Arc => (1.0, config.m_arc, 0.0),
        Cos => (1.0, 0.0, config.m_cos),
        Generalized => (config.m_sph, config.m_arc, config.m_cos),
        AdaFace | FunFace => (1.0, g_angle, g_add),
    };
    pct_and_slope(scale, ang, add, cos_pos).0
}

/// Forward state consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub loss: f64,
    pub diagnostics: Vec<PerSampleDiagnostics>,
    labels: Vec<usize>,
    cosines: Matrix,
    norms: Vec<f64>,
    probs: Matrix,
    slopes: Vec<f64>,
    scale: f64,
}

impl ForwardPass {
    pub fn batch_size(&self) -> usize {
        self.norms.len()
    }
}

/// Full forward pass: cosine logits, per-sample margins, batch-mean loss.
pub fn margin_loss_forward(
    batch: &EmbeddingBatch,
    protos: &ClassPrototypes,
    config: &MarginConfig,
    stats: &NormalizerState,
) -> Result<ForwardPass> {
    config.validate()?;
    let cl = cosine_logits(batch, protos)?;
    let pn = pos_nn(&cl.cosines, &batch.labels)?;
    forward_precomputed(cl, batch.labels.clone(), &pn, config, stats, DiagMode::Full)
}

/// Forward pass over precomputed cosines (the training loop reuses the same
/// logit matrix it fed to the EMA update).
pub(crate) fn forward_precomputed(
    cl: CosineLogits,
    labels: Vec<usize>,
    pn: &[(f64, f64)],
    config: &MarginConfig,
    stats: &NormalizerState,
    mode: DiagMode,
) -> Result<ForwardPass> {
    let (b, c) = (cl.cosines.rows(), cl.cosines.cols());
    debug_assert_eq!(pn.len(), b);
    let s = config.s;

    type Row = (f64, Vec<f64>, f64, PerSampleDiagnostics);
    let rows: Vec<Result<Row>> = parallel::map_collect(b, |i| {
        let (cos_pos, cos_nn) = pn[i];
        let norm = cl.norms[i];
        let terms = margin_terms_mode(config, norm, cos_pos, cos_nn, stats, mode);
        let (pct, slope) = pct_and_slope(
            terms.scale_mult,
            terms.angle_offset,
            terms.add_offset,
            cos_pos,
        );
        let row = cl.cosines.row(i);
        let y = labels[i];
        let pos_logit = s * pct;
        let mut maxv = pos_logit;
        for (j, &cv) in row.iter().enumerate() {
            if j != y {
                maxv = maxv.max(s * cv);
            }
        }
        let mut probs = vec![0.0; c];
        let mut denom = 0.0;
        for (j, p) in probs.iter_mut().enumerate() {
            let logit = if j == y { pos_logit } else { s * row[j] };
            let e = (logit - maxv).exp();
            *p = e;
            denom += e;
        }
        let inv = 1.0 / denom;
        for p in &mut probs {
            *p *= inv;
        }
        let loss_i = maxv + denom.ln() - pos_logit;
        if !loss_i.is_finite() {
            return Err(Error::NonFinite {
                what: "per-sample loss",
                sample: i,
            });
        }
        let diag = PerSampleDiagnostics {
            theta_pos: cos_pos.clamp(-1.0, 1.0).acos(),
            cos_pos,
            cos_nn,
            norm,
            norm_hat: terms.norm_hat,
            cr: terms.cr,
            cr_hat: terms.cr_hat,
            kappa: terms.kappa,
            g_angle: terms.angle_offset,
            g_add: terms.add_offset,
            pct,
        };
        Ok((loss_i, probs, slope, diag))
    });

    let mut loss = 0.0;
    let mut probs = Matrix::zeros(b, c);
    let mut slopes = Vec::with_capacity(b);
    let mut diagnostics = Vec::with_capacity(b);
    for (i, r) in rows.into_iter().enumerate() {
        let (loss_i, p, slope, diag) = r?;
        loss += loss_i;
        probs.row_mut(i).copy_from_slice(&p);
        slopes.push(slope);
        diagnostics.push(diag);
    }
    loss /= b as f64;

    Ok(ForwardPass {
        loss,
        diagnostics,
        labels,
        cosines: cl.cosines,
        norms: cl.norms,
        probs,
        slopes,
        scale: s,
    })
}

/// Analytic gradients of the batch-mean loss w.r.t. raw embeddings and
/// prototype rows. Adaptation terms are constants; prototype gradients are
/// taken on the rows as used in the forward pass (pre-renormalization).
pub fn margin_loss_backward(
    batch: &EmbeddingBatch,
    protos: &ClassPrototypes,
    fwd: ForwardPass,
) -> Result<LossOutput> {
    let (b, d) = (batch.features.rows(), batch.features.cols());
    let c = protos.num_classes();
    if fwd.batch_size() != b || fwd.cosines.cols() != c || protos.dim() != d {
        return Err(Error::ShapeMismatch {
            context: "margin_loss_backward",
            expected: format!("batch {b}x{d}, {c} classes"),
            actual: format!(
                "forward pass over {}x{}",
                fwd.batch_size(),
                fwd.cosines.cols()
            ),
        });
    }
    let s = fwd.scale;
    let inv_b = 1.0 / b as f64;

    // d(mean loss) / d cos_{i,j}
    let mut dcos = Matrix::zeros(b, c);
    parallel::for_each_row(dcos.data_mut(), c, |i, out| {
        let y = fwd.labels[i];
        let p = fwd.probs.row(i);
        for (j, o) in out.iter_mut().enumerate() {
            let coeff = p[j] - if j == y { 1.0 } else { 0.0 };
            let factor = if j == y { s * fwd.slopes[i] } else { s };
            *o = coeff * factor * inv_b;
        }
    });

    // unit feature directions
    let mut units = Matrix::zeros(b, d);
    parallel::for_each_row(units.data_mut(), d, |i, out| {
        let inv = 1.0 / fwd.norms[i];
        for (o, &z) in out.iter_mut().zip(batch.features.row(i)) {
            *o = z * inv;
        }
    });

    // grad_features[i] = (1/n_i) * (sum_j dcos_ij W_j - (sum_j dcos_ij cos_ij) u_i)
    let mut grad_features = Matrix::zeros(b, d);
    parallel::for_each_row(grad_features.data_mut(), d, |i, out| {
        let dc = dcos.row(i);
        let cosr = fwd.cosines.row(i);
        let mut proj = 0.0;
        for j in 0..c {
            let a = dc[j];
            if a != 0.0 {
                for (o, &w) in out.iter_mut().zip(protos.centers.row(j)) {
                    *o += a * w;
                }
            }
            proj += a * cosr[j];
        }
        let inv_n = 1.0 / fwd.norms[i];
        for (o, &u) in out.iter_mut().zip(units.row(i)) {
            *o = (*o - proj * u) * inv_n;
        }
    });

    // grad_centers[j] = sum_i dcos_ij u_i, summed in sample order
    let mut grad_centers = Matrix::zeros(c, d);
    parallel::for_each_row(grad_centers.data_mut(), d, |j, out| {
        for i in 0..b {
            let a = dcos.get(i, j);
            if a != 0.0 {
                for (o, &u) in out.iter_mut().zip(units.row(i)) {
                    *o += a * u;
                }
            }
        }
    });

    for (what, m) in [("grad_features", &grad_features), ("grad_centers", &grad_centers)] {
        if !m.is_finite() {
            let row = (0..m.rows())
                .find(|&i| m.row(i).iter().any(|v| !v.is_finite()))
                .unwrap_or(0);
            let _ = what;
            return Err(Error::NonFinite {
                what: "gradient",
                sample: row,
            });
        }
    }

    Ok(LossOutput {
        loss: fwd.loss,
        grad_features,
        grad_centers,
        diagnostics: fwd.diagnostics,
    })
}

/// Convenience: forward and backward in one call.
pub fn margin_loss(
    batch: &EmbeddingBatch,
    protos: &ClassPrototypes,
    config: &MarginConfig,
    stats: &NormalizerState,
) -> Result<LossOutput> {
    let fwd = margin_loss_forward(batch, protos, config, stats)?;
    margin_loss_backward(batch, protos, fwd)
}
