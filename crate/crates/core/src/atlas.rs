//! Gradient-scale fields over the plane spanned by a positive and a nearest
//! negative class center, and FunFace-minus-AdaFace difference maps.
//!
//! The gradient scale at a point is `|dL/d cos(theta_pos)|` for a two-class
//! loss, evaluated analytically with the adaptive signals computed from the
//! point's own norm and angles against a frozen statistics snapshot. The
//! polar grid runs over the angular span between the two centers and a
//! radial (feature-norm) slice; two boundaries are traced per radial row:
//! B0 where the unmargined logits tie, and B1 where the margined positive
//! logit ties the negative one.

use crate::error::{Error, Result};
use crate::margin::{margin_terms, pct_and_slope, ClassPrototypes, MarginConfig, MarginVariant};
use crate::matrix::{dot, Matrix};
use crate::parallel;
use crate::stats::NormalizerState;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub label: String,
    pub mu_z: f64,
    pub sigma_z: f64,
    pub mu_cr: f64,
    pub sigma_cr: f64,
}

impl StatsSnapshot {
    pub fn state(&self) -> NormalizerState {
        NormalizerState::frozen(self.mu_z, self.sigma_z, self.mu_cr, self.sigma_cr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtlasConfig {
    /// Cells per axis (angle x radius).
    pub grid_resolution: usize,
    /// Angle between the positive and negative center, in (0, pi).
    pub angle_between_centers: f64,
    /// Feature norms delimiting the radial slice.
    pub feature_norm_values: Vec<f64>,
    /// Frozen statistics representing training stages.
    pub snapshots: Vec<StatsSnapshot>,
    pub margin_fun: MarginConfig,
    pub margin_ada: MarginConfig,
}

impl Default for AtlasConfig {
    fn default() -> Self {
        let margin_fun = MarginConfig::with_variant(MarginVariant::FunFace);
        AtlasConfig {
            grid_resolution: 256,
            angle_between_centers: 1.4,
            feature_norm_values: vec![8.0, 32.0],
            snapshots: vec![
                StatsSnapshot {
                    label: "early".into(),
                    mu_z: 20.0,
                    sigma_z: 6.0,
                    mu_cr: 0.9,
                    sigma_cr: 0.3,
                },
                StatsSnapshot {
                    label: "middle".into(),
                    mu_z: 20.0,
                    sigma_z: 6.0,
                    mu_cr: 1.8,
                    sigma_cr: 0.8,
                },
                StatsSnapshot {
                    label: "late".into(),
                    mu_z: 20.0,
                    sigma_z: 6.0,
                    mu_cr: 3.0,
                    sigma_cr: 1.5,
                },
            ],
            margin_ada: ada_twin(&margin_fun),
            margin_fun,
        }
    }
}

/// The AdaFace counterpart of a FunFace config: identical in everything but
/// the variant.
pub fn ada_twin(margin_fun: &MarginConfig) -> MarginConfig {
    MarginConfig {
        variant: MarginVariant::AdaFace,
        ..*margin_fun
    }
}

impl AtlasConfig {
    /// Default atlas around a given FunFace margin config.
    pub fn around(margin_fun: MarginConfig) -> Self {
        AtlasConfig {
            margin_ada: ada_twin(&margin_fun),
            margin_fun,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.grid_resolution < 16 {
            return bad(format!(
                "atlas.grid_resolution must be >= 16, got {}",
                self.grid_resolution
            ));
        }
        if !(self.angle_between_centers > 0.0
            && self.angle_between_centers < std::f64::consts::PI)
        {
            return bad(format!(
                "atlas.angle_between_centers must lie in (0, pi), got {}",
                self.angle_between_centers
            ));
        }
        if self.feature_norm_values.is_empty()
            || self.feature_norm_values.iter().any(|&v| !(v.is_finite() && v > 0.0))
        {
            return bad("atlas.feature_norm_values must be positive and non-empty".into());
        }
        if self.snapshots.is_empty() {
            return bad("atlas.snapshots must not be empty".into());
        }
        if self.margin_fun.variant != MarginVariant::FunFace {
            return bad("atlas.margin_fun.variant must be funface".into());
        }
        if self.margin_ada.variant != MarginVariant::AdaFace {
            return bad("atlas.margin_ada.variant must be adaface".into());
        }
        let (f, a) = (&self.margin_fun, &self.margin_ada);
        if f.m != a.m || f.s != a.s || f.h != a.h {
            return bad("atlas margin configs must share m, s, and h".into());
        }
        self.margin_fun.validate()?;
        self.margin_ada.validate()
    }

    fn radial_span(&self) -> (f64, f64) {
        let lo = self.feature_norm_values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self
            .feature_norm_values
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (lo, hi)
        } else {
            (0.5 * lo, 1.5 * lo)
        }
    }
}

/// The two unit centers of the slice plane: the positive center on the x
/// axis and the negative center at `angle` radians from it.
pub fn slice_prototypes(angle: f64) -> Result<ClassPrototypes> {
    ClassPrototypes::from_unit_rows(Matrix::from_rows(&[
        vec![1.0, 0.0],
        vec![angle.cos(), angle.sin()],
    ]))
}

/// `|dL/d cos(theta_pos)|` at a 2-D point against exactly two prototypes
/// (positive first). Adaptive signals are computed from the point's norm and
/// angles under the supplied frozen statistics.
pub fn gradient_scale(
    point: &[f64; 2],
    protos: &ClassPrototypes,
    config: &MarginConfig,
    stats: &NormalizerState,
) -> Result<f64> {
    if protos.num_classes() != 2 || protos.dim() != 2 {
        return Err(Error::ShapeMismatch {
            context: "gradient_scale prototypes",
            expected: "2 x 2".into(),
            actual: format!("{} x {}", protos.num_classes(), protos.dim()),
        });
    }
    let n = (point[0] * point[0] + point[1] * point[1]).sqrt();
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::BadNorm { row: 0 });
    }
    let u = [point[0] / n, point[1] / n];
    let cos_i = dot(&u, protos.centers().row(0)).clamp(-1.0, 1.0);
    let cos_j = dot(&u, protos.centers().row(1)).clamp(-1.0, 1.0);
    let terms = margin_terms(config, n, cos_i, cos_j, stats);
    let (pct, slope) = pct_and_slope(terms.scale_mult, terms.angle_offset, terms.add_offset, cos_i);
    let s = config.s;
    // two-class softmax: p_pos = sigmoid(s * pct - s * cos_j)
    let gap = s * pct - s * cos_j;
    let p_pos = if gap >= 0.0 {
        1.0 / (1.0 + (-gap).exp())
    } else {
        let e = gap.exp();
        e / (1.0 + e)
    };
    Ok(((p_pos - 1.0) * s * slope).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldPoint {
    pub x: f64,
    pub y: f64,
    pub scale: f64,
}

/// Scalar field on the polar grid, radius-major (`idx = k * res + l` for
/// radius index `k` and angle index `l`), with boundary polylines.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientField {
    pub resolution: usize,
    pub points: Vec<FieldPoint>,
    pub boundary_b0: Vec<(f64, f64)>,
    pub boundary_b1: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DifferenceMap {
    pub label: String,
    pub fun: GradientField,
    pub ada: GradientField,
    /// Pointwise `fun - ada`, same layout as the fields.
    pub diff: Vec<f64>,
    pub on_b0: Vec<bool>,
    pub on_b1: Vec<bool>,
    /// Mean of `diff` over the cells between B1 and B0.
    pub band_mean_diff: f64,
    pub band_cells: usize,
}

impl DifferenceMap {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,scale_fun,scale_ada,diff,on_b0,on_b1\n");
        for (idx, (f, a)) in self.fun.points.iter().zip(&self.ada.points).enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                f.x,
                f.y,
                f.scale,
                a.scale,
                self.diff[idx],
                u8::from(self.on_b0[idx]),
                u8::from(self.on_b1[idx]),
            ));
        }
        out
    }
}

struct RowGeometry {
    radius: f64,
    /// phi of the B0 crossing (unmargined tie), if bracketed.
    phi_b0: Option<f64>,
    /// phi of the B1 crossing (margined tie), if bracketed.
    phi_b1: Option<f64>,
}

/// FunFace and AdaFace gradient-scale fields plus their difference, one map
/// per statistics snapshot.
pub fn difference_map(config: &AtlasConfig) -> Result<Vec<DifferenceMap>> {
    config.validate()?;
    let res = config.grid_resolution;
    let alpha = config.angle_between_centers;
    let protos = slice_prototypes(alpha)?;
    let (r_lo, r_hi) = config.radial_span();

    // cell-centered angles avoid the exact center directions where the
    // angular slope is singular
    let phis: Vec<f64> = (0..res).map(|l| (l as f64 + 0.5) * alpha / res as f64).collect();
    let radii: Vec<f64> = (0..res)
        .map(|k| r_lo + (r_hi - r_lo) * k as f64 / (res - 1) as f64)
        .collect();
    let dphi = alpha / res as f64;

    let mut maps = Vec::with_capacity(config.snapshots.len());
    for snap in &config.snapshots {
        let stats = snap.state();

        // per radial row: scales for both variants and the margined gap of
        // the FunFace config (for B1 detection)
        type Row = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);
        let rows: Vec<Result<Row>> = parallel::map_collect(res, |k| {
            let r = radii[k];
            let mut fun_scales = Vec::with_capacity(res);
            let mut ada_scales = Vec::with_capacity(res);
            let mut f0 = Vec::with_capacity(res); // cos_i - cos_j
            let mut f1 = Vec::with_capacity(res); // pct_fun - cos_j
            for &phi in &phis {
                let point = [r * phi.cos(), r * phi.sin()];
                fun_scales.push(gradient_scale(&point, &protos, &config.margin_fun, &stats)?);
                ada_scales.push(gradient_scale(&point, &protos, &config.margin_ada, &stats)?);
                let cos_i = phi.cos();
                let cos_j = (alpha - phi).cos();
                let terms = margin_terms(&config.margin_fun, r, cos_i, cos_j, &stats);
                let (pct, _) =
                    pct_and_slope(terms.scale_mult, terms.angle_offset, terms.add_offset, cos_i);
                f0.push(cos_i - cos_j);
                f1.push(pct - cos_j);
            }
            Ok((fun_scales, ada_scales, f0, f1))
        });

        let mut fun_points = Vec::with_capacity(res * res);
        let mut ada_points = Vec::with_capacity(res * res);
        let mut diff = Vec::with_capacity(res * res);
        let mut geometry = Vec::with_capacity(res);
        let mut b0_line = Vec::new();
        let mut b1_line = Vec::new();

        for (k, row) in rows.into_iter().enumerate() {
            let (fun_scales, ada_scales, f0, f1) = row?;
            let r = radii[k];
            for (l, &phi) in phis.iter().enumerate() {
                let (x, y) = (r * phi.cos(), r * phi.sin());
                fun_points.push(FieldPoint { x, y, scale: fun_scales[l] });
                ada_points.push(FieldPoint { x, y, scale: ada_scales[l] });
                diff.push(fun_scales[l] - ada_scales[l]);
            }
            let phi_b0 = first_crossing(&phis, &f0);
            let phi_b1 = first_crossing(&phis, &f1);
            if let Some(p) = phi_b0 {
                b0_line.push((r * p.cos(), r * p.sin()));
            }
            if let Some(p) = phi_b1 {
                b1_line.push((r * p.cos(), r * p.sin()));
            }
            geometry.push(RowGeometry { radius: r, phi_b0, phi_b1 });
        }

        // boundary masks and the band between B1 and B0
        let mut on_b0 = vec![false; res * res];
        let mut on_b1 = vec![false; res * res];
        let mut band_sum = 0.0;
        let mut band_cells = 0usize;
        for (k, geo) in geometry.iter().enumerate() {
            let _ = geo.radius;
            for (l, &phi) in phis.iter().enumerate() {
                let idx = k * res + l;
                if let Some(p0) = geo.phi_b0 {
                    if (phi - p0).abs() <= 0.5 * dphi {
                        on_b0[idx] = true;
                    }
                }
                if let Some(p1) = geo.phi_b1 {
                    if (phi - p1).abs() <= 0.5 * dphi {
                        on_b1[idx] = true;
                    }
                }
                if let (Some(p0), Some(p1)) = (geo.phi_b0, geo.phi_b1) {
                    let (lo, hi) = (p0.min(p1), p0.max(p1));
                    if phi > lo && phi < hi {
                        band_sum += diff[idx];
                        band_cells += 1;
                    }
                }
            }
        }
        let band_mean_diff = if band_cells > 0 { band_sum / band_cells as f64 } else { 0.0 };

        maps.push(DifferenceMap {
            label: snap.label.clone(),
            fun: GradientField {
                resolution: res,
                points: fun_points,
                boundary_b0: b0_line.clone(),
                boundary_b1: b1_line,
            },
            ada: GradientField {
                resolution: res,
                points: ada_points,
                boundary_b0: b0_line,
                // B1 of the AdaFace field is not traced; the difference
                // analysis uses the FunFace boundary per contract
                boundary_b1: Vec::new(),
            },
            diff,
            on_b0,
            on_b1,
            band_mean_diff,
            band_cells,
        });
    }
    Ok(maps)
}

/// Linear interpolation of the first sign change of `f` along `phis`.
fn first_crossing(phis: &[f64], f: &[f64]) -> Option<f64> {
    for l in 1..f.len() {
        if f[l - 1] == 0.0 {
            return Some(phis[l - 1]);
        }
        if f[l - 1].signum() != f[l].signum() {
            let t = f[l - 1] / (f[l - 1] - f[l]);
            return Some(phis[l - 1] + t * (phis[l] - phis[l - 1]));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn symmetric_ce_point_has_half_scale() {
        let alpha = 1.0;
        let protos = slice_prototypes(alpha).unwrap();
        let mut cfg = MarginConfig::with_variant(MarginVariant::Ce);
        cfg.s = 1.0;
        let stats = NormalizerState::frozen(1.0, 0.5, 1.0, 0.5);
        let phi: f64 = alpha / 2.0;
        let scale =
            gradient_scale(&[phi.cos(), phi.sin()], &protos, &cfg, &stats).unwrap();
        assert_abs_diff_eq!(scale, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn saturated_positive_point_has_near_zero_scale() {
        let protos = slice_prototypes(1.0).unwrap();
        let mut cfg = MarginConfig::with_variant(MarginVariant::Ce);
        cfg.s = 1e4;
        let stats = NormalizerState::frozen(1.0, 0.5, 1.0, 0.5);
        let scale = gradient_scale(&[2.0, 0.0], &protos, &cfg, &stats).unwrap();
        assert!(scale < 1e-8, "scale = {scale}");
    }

    #[test]
    fn origin_point_is_rejected() {
        let protos = slice_prototypes(1.0).unwrap();
        let cfg = MarginConfig::default();
        let stats = NormalizerState::frozen(1.0, 0.5, 1.0, 0.5);
        assert!(gradient_scale(&[0.0, 0.0], &protos, &cfg, &stats).is_err());
    }

    #[test]
    fn lambda_one_difference_field_is_identically_zero() {
        let mut fun = MarginConfig::with_variant(MarginVariant::FunFace);
        fun.lambda = 1.0;
        let config = AtlasConfig {
            grid_resolution: 32,
            margin_ada: ada_twin(&fun),
            margin_fun: fun,
            ..Default::default()
        };
        let maps = difference_map(&config).unwrap();
        for map in maps {
            assert!(map.diff.iter().all(|&d| d == 0.0), "snapshot {}", map.label);
        }
    }

    #[test]
    fn b0_sits_on_the_bisector_and_ignores_the_margin() {
        let config = AtlasConfig {
            grid_resolution: 64,
            ..Default::default()
        };
        let maps = difference_map(&config).unwrap();
        let alpha = config.angle_between_centers;
        for map in maps {
            assert_eq!(map.fun.boundary_b0, map.ada.boundary_b0);
            for &(x, y) in &map.fun.boundary_b0 {
                let phi = y.atan2(x);
                assert_abs_diff_eq!(phi, alpha / 2.0, epsilon = alpha / 64.0);
            }
            // B1 exists and lies on the positive side of B0
            assert!(!map.fun.boundary_b1.is_empty());
            for &(x, y) in &map.fun.boundary_b1 {
                assert!(y.atan2(x) < alpha / 2.0);
            }
        }
    }

    #[test]
    fn difference_map_is_continuous_in_lambda() {
        let build = |lambda: f64| {
            let mut fun = MarginConfig::with_variant(MarginVariant::FunFace);
            fun.lambda = lambda;
            AtlasConfig {
                grid_resolution: 64,
                margin_ada: ada_twin(&fun),
                margin_fun: fun,
                ..Default::default()
            }
        };
        let a = difference_map(&build(0.5)).unwrap();
        let b = difference_map(&build(0.51)).unwrap();
        let s = build(0.5).margin_fun.s;
        for (ma, mb) in a.iter().zip(&b) {
            let max_gap = ma
                .diff
                .iter()
                .zip(&mb.diff)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(max_gap <= 0.1 * s, "gap {max_gap} vs bound {}", 0.1 * s);
        }
    }

    #[test]
    fn gradient_scale_matches_independent_finite_differences() {
        // independent route: freeze the margin knobs, differentiate the
        // two-class loss by central differences in cos_pos
        let alpha = 1.3;
        let protos = slice_prototypes(alpha).unwrap();
        let stats = NormalizerState::frozen(15.0, 4.0, 1.2, 0.5);
        let mut rng = crate::rng::stream(31, crate::rng::Domain::PairProtocol, &[4]);
        use rand::Rng;
        for variant in [MarginVariant::Ce, MarginVariant::Arc, MarginVariant::AdaFace, MarginVariant::FunFace] {
            let mut cfg = MarginConfig::with_variant(variant);
            cfg.s = 12.0;
            for _ in 0..20 {
                let phi = rng.random_range(0.1..alpha - 0.1);
                let r = rng.random_range(5.0..30.0);
                let point = [r * phi.cos(), r * phi.sin()];
                let analytic = gradient_scale(&point, &protos, &cfg, &stats).unwrap();

                let cos_i = phi.cos();
                let cos_j = (alpha - phi).cos();
                let terms = margin_terms(&cfg, r, cos_i, cos_j, &stats);
                let loss = |c: f64| {
                    let (pct, _) = pct_and_slope(
                        terms.scale_mult,
                        terms.angle_offset,
                        terms.add_offset,
                        c,
                    );
                    let gap = cfg.s * cos_j - cfg.s * pct;
                    (1.0 + gap.exp()).ln()
                };
                let h = 1e-6;
                let fd = ((loss(cos_i + h) - loss(cos_i - h)) / (2.0 * h)).abs();
                let denom = fd.abs().max(analytic.abs()).max(1e-9);
                assert!(
                    ((fd - analytic) / denom).abs() < 1e-4,
                    "{variant:?}: fd {fd} vs analytic {analytic}"
                );
            }
        }
    }
}
