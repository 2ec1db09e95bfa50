//! Metric scale recovery from the known stereo baseline.
//!
//! A monocular-style reconstruction is defined only up to a similarity. Each
//! stereo frame contributes one ratio `known / |C_left - C_right|`; the scale
//! is the median ratio, with inliers reported against a MAD band.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geometry::Vec3;
use crate::sfm_io::{DenseCloud, NvmModel};

/// Baselines shorter than this, in model units, are dropped.
pub const MIN_MODEL_BASELINE: f64 = 1e-12;
/// Consistency factor turning the MAD into a Gaussian sigma.
pub const MAD_SCALE: f64 = 1.4826;
/// Inlier band half-width in scaled MADs.
pub const INLIER_MADS: f64 = 3.0;
/// Relative floor on the inlier band, so ratios equal up to rounding count
/// as inliers when the MAD itself is zero.
pub const INLIER_FLOOR: f64 = 1e-9;

fn inlier_band(estimate_scale: f64, mad: f64) -> f64 {
    (INLIER_MADS * mad).max(INLIER_FLOOR * estimate_scale)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScaleError {
    #[error("pattern `{0}` must contain exactly one `*`")]
    InvalidPattern(String),
    #[error("no stereo pairs matched the filename patterns")]
    NoPairs,
    #[error("frame token `{token}` matches more than one {side} image")]
    DuplicateFrame { token: String, side: &'static str },
    #[error("pair ({0}, {1}) references a missing or repeated camera")]
    InvalidPair(usize, usize),
    #[error("known baseline must be positive and finite, got {0}")]
    InvalidBaseline(f64),
    #[error("every stereo pair has a near-zero estimated baseline")]
    AllDegenerate,
}

/// Filename pattern with a single `*` capturing the frame token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePattern {
    prefix: String,
    suffix: String,
}

impl FramePattern {
    pub fn new(pattern: &str) -> Result<Self, ScaleError> {
        let mut parts = pattern.split('*');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(prefix), Some(suffix), None) => Ok(Self {
                prefix: prefix.to_string(),
                suffix: suffix.to_string(),
            }),
            _ => Err(ScaleError::InvalidPattern(pattern.to_string())),
        }
    }

    /// Frame token of `name`, tried on the full name and then on its final
    /// path component.
    pub fn capture<'a>(&self, name: &'a str) -> Option<&'a str> {
        let base = name.rsplit(['/', '\\']).next().unwrap_or(name);
        [name, base].into_iter().find_map(|candidate| {
            candidate
                .strip_prefix(self.prefix.as_str())?
                .strip_suffix(self.suffix.as_str())
        })
    }

    /// Replaces the wildcard with `token`.
    pub fn render(&self, token: &str) -> String {
        format!("{}{}{}", self.prefix, token, self.suffix)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StereoPairing {
    /// `(left, right)` camera indices, ordered by left index.
    pub pairs: Vec<(usize, usize)>,
}

impl StereoPairing {
    pub fn validate(&self, n_cameras: usize) -> Result<(), ScaleError> {
        let mut seen = vec![false; n_cameras];
        for &(l, r) in &self.pairs {
            if l == r || l >= n_cameras || r >= n_cameras || seen[l] || seen[r] {
                return Err(ScaleError::InvalidPair(l, r));
            }
            seen[l] = true;
            seen[r] = true;
        }
        Ok(())
    }

    /// Left camera paired with `camera`, which may itself be a left camera.
    pub fn left_of(&self, camera: usize) -> Option<usize> {
        self.pairs
            .iter()
            .find(|&&(l, r)| l == camera || r == camera)
            .map(|&(l, _)| l)
    }
}

fn tokens_by_side<'a>(
    model: &'a NvmModel,
    pattern: &FramePattern,
    side: &'static str,
) -> Result<BTreeMap<&'a str, usize>, ScaleError> {
    let mut map = BTreeMap::new();
    for (i, cam) in model.cameras.iter().enumerate() {
        if let Some(token) = pattern.capture(&cam.image_name) {
            if map.insert(token, i).is_some() {
                return Err(ScaleError::DuplicateFrame {
                    token: token.to_string(),
                    side,
                });
            }
        }
    }
    Ok(map)
}

/// Pairs cameras whose frame tokens agree; unmatched cameras are ignored.
pub fn pair_frames(
    model: &NvmModel,
    left_pattern: &str,
    right_pattern: &str,
) -> Result<StereoPairing, ScaleError> {
    let left = tokens_by_side(model, &FramePattern::new(left_pattern)?, "left")?;
    let right = tokens_by_side(model, &FramePattern::new(right_pattern)?, "right")?;
    let mut pairs: Vec<(usize, usize)> = left
        .iter()
        .filter_map(|(token, &l)| right.get(token).map(|&r| (l, r)))
        .filter(|(l, r)| l != r)
        .collect();
    pairs.sort_unstable();
    if pairs.is_empty() {
        return Err(ScaleError::NoPairs);
    }
    Ok(StereoPairing { pairs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleEstimate {
    /// Meters per model unit.
    pub scale: f64,
    /// One ratio per non-degenerate pair, in pairing order.
    pub per_frame_ratios: Vec<f64>,
    pub inlier_count: usize,
    /// Scaled MAD of the ratios.
    pub mad: f64,
}

impl ScaleEstimate {
    /// `(min, median, max)` of the ratios.
    pub fn spread(&self) -> (f64, f64, f64) {
        let min = self.per_frame_ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.per_frame_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (min, self.scale, max)
    }
}

/// Median of a sorted copy; the mean of the middle two for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

pub fn estimate_scale(
    model: &NvmModel,
    pairing: &StereoPairing,
    known_baseline: f64,
) -> Result<ScaleEstimate, ScaleError> {
    if !(known_baseline.is_finite() && known_baseline > 0.0) {
        return Err(ScaleError::InvalidBaseline(known_baseline));
    }
    if pairing.pairs.is_empty() {
        return Err(ScaleError::NoPairs);
    }
    pairing.validate(model.cameras.len())?;
    let ratios: Vec<f64> = pairing
        .pairs
        .iter()
        .filter_map(|&(l, r)| {
            let d = (model.cameras[l].center - model.cameras[r].center).norm();
            (d >= MIN_MODEL_BASELINE).then(|| known_baseline / d)
        })
        .collect();
    let scale = median(&ratios).ok_or(ScaleError::AllDegenerate)?;
    let deviations: Vec<f64> = ratios.iter().map(|r| (r - scale).abs()).collect();
    let mad = MAD_SCALE * median(&deviations).expect("non-empty");
    let band = inlier_band(scale, mad);
    let inlier_count = deviations.iter().filter(|&&d| d <= band).count();
    Ok(ScaleEstimate {
        scale,
        per_frame_ratios: ratios,
        inlier_count,
        mad,
    })
}

/// Multiplies every point position and camera center by `scale`.
pub fn apply_scale(model: &NvmModel, cloud: &DenseCloud, scale: f64) -> (NvmModel, DenseCloud) {
    assert!(scale > 0.0 && scale.is_finite(), "scale must be positive");
    let mut model = model.clone();
    for cam in &mut model.cameras {
        cam.center *= scale;
    }
    for p in &mut model.points {
        p.position *= scale;
    }
    let mut cloud = cloud.clone();
    for p in &mut cloud.points {
        p.position *= scale;
    }
    (model, cloud)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineCheck {
    /// Mean metric baseline over the inlier pairs.
    pub mean_baseline: f64,
    /// Allowed deviation from the known baseline, from the inlier MAD band.
    pub tolerance: f64,
    pub passed: bool,
}

/// Recomputes the inlier baselines of a scaled model and compares their mean
/// with the known baseline.
pub fn verify_scaled_baseline(
    scaled: &NvmModel,
    pairing: &StereoPairing,
    estimate: &ScaleEstimate,
    known_baseline: f64,
) -> BaselineCheck {
    let baselines: Vec<f64> = pairing
        .pairs
        .iter()
        .map(|&(l, r)| (scaled.cameras[l].center - scaled.cameras[r].center).norm())
        .filter(|&d| d >= MIN_MODEL_BASELINE * estimate.scale)
        .collect();
    let inliers: Vec<f64> = baselines
        .iter()
        .zip(&estimate.per_frame_ratios)
        .filter(|(_, r)| (*r - estimate.scale).abs() <= inlier_band(estimate.scale, estimate.mad))
        .map(|(b, _)| *b)
        .collect();
    let mean_baseline = if inliers.is_empty() {
        f64::NAN
    } else {
        inliers.iter().sum::<f64>() / inliers.len() as f64
    };
    // A ratio r at the band edge gives a metric baseline of known·scale/r.
    let tolerance = known_baseline * inlier_band(estimate.scale, estimate.mad) / estimate.scale
        + 1e-12 * known_baseline;
    BaselineCheck {
        mean_baseline,
        tolerance,
        passed: (mean_baseline - known_baseline).abs() <= tolerance,
    }
}

/// Camera centers of a pairing as `(left, right)` positions.
pub fn pair_centers(model: &NvmModel, pairing: &StereoPairing) -> Vec<(Vec3, Vec3)> {
    pairing
        .pairs
        .iter()
        .map(|&(l, r)| (model.cameras[l].center, model.cameras[r].center))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::UnitQuaternion;
    use crate::sfm_io::NvmCamera;
    use proptest::prelude::*;

    fn camera(name: &str, center: Vec3) -> NvmCamera {
        NvmCamera {
            image_name: name.into(),
            focal: 500.0,
            rotation: UnitQuaternion::identity(),
            center,
            radial: 0.0,
        }
    }

    fn stereo_model(baselines: &[f64]) -> NvmModel {
        let mut cameras = Vec::new();
        for (i, &b) in baselines.iter().enumerate() {
            let c = Vec3::new(i as f64, 0.3 * i as f64, 1.0);
            cameras.push(camera(&format!("L_{i:03}.jpg"), c));
            cameras.push(camera(&format!("R_{i:03}.jpg"), c + Vec3::new(b, 0.0, 0.0)));
        }
        NvmModel {
            cameras,
            points: Vec::new(),
        }
    }

    #[test]
    fn pattern_capture() {
        let p = FramePattern::new("L_*.jpg").unwrap();
        assert_eq!(p.capture("L_001.jpg"), Some("001"));
        assert_eq!(p.capture("images/L_001.jpg"), Some("001"));
        assert_eq!(p.capture("R_001.jpg"), None);
        assert_eq!(p.render("007"), "L_007.jpg");
        assert!(FramePattern::new("L_.jpg").is_err());
        assert!(FramePattern::new("*_*.jpg").is_err());
    }

    #[test]
    fn one_pair() {
        let model = NvmModel {
            cameras: vec![
                camera("L_001.jpg", Vec3::zeros()),
                camera("R_001.jpg", Vec3::x()),
            ],
            points: vec![],
        };
        let pairing = pair_frames(&model, "L_*.jpg", "R_*.jpg").unwrap();
        assert_eq!(pairing.pairs, vec![(0, 1)]);
    }

    #[test]
    fn unmatched_left_excluded() {
        let mut model = stereo_model(&[0.1, 0.1]);
        model.cameras.push(camera("L_099.jpg", Vec3::zeros()));
        let pairing = pair_frames(&model, "L_*.jpg", "R_*.jpg").unwrap();
        assert_eq!(pairing.pairs, vec![(0, 1), (2, 3)]);
    }

    #[test]
    fn no_pairs_and_duplicates() {
        let model = stereo_model(&[0.1]);
        assert_eq!(pair_frames(&model, "A_*.jpg", "R_*.jpg"), Err(ScaleError::NoPairs));
        let mut model = stereo_model(&[0.1]);
        model.cameras.push(camera("x/L_000.jpg", Vec3::zeros()));
        assert!(matches!(
            pair_frames(&model, "L_*.jpg", "R_*.jpg"),
            Err(ScaleError::DuplicateFrame { .. })
        ));
    }

    #[test]
    fn uniform_baselines() {
        let model = stereo_model(&[0.06; 5]);
        let pairing = pair_frames(&model, "L_*.jpg", "R_*.jpg").unwrap();
        let est = estimate_scale(&model, &pairing, 0.12).unwrap();
        assert!((est.scale - 2.0).abs() < 1e-12);
        assert_eq!(est.inlier_count, 5);
    }

    #[test]
    fn gross_outlier() {
        let model = stereo_model(&[0.06, 0.06, 0.6]);
        let pairing = pair_frames(&model, "L_*.jpg", "R_*.jpg").unwrap();
        let est = estimate_scale(&model, &pairing, 0.12).unwrap();
        // Independent arithmetic: ratios {2, 2, 0.2}; median 2; deviations
        // {0, 0, 1.8}; MAD 0, so only exact matches are inliers.
        assert!((est.scale - 2.0).abs() < 1e-12);
        assert_eq!(est.inlier_count, 2);
        assert!(est.mad < 1e-12);
    }

    #[test]
    fn single_pair() {
        let model = stereo_model(&[0.03]);
        let pairing = pair_frames(&model, "L_*.jpg", "R_*.jpg").unwrap();
        let est = estimate_scale(&model, &pairing, 0.12).unwrap();
        assert!((est.scale - 4.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_pairs() {
        let model = stereo_model(&[0.0, 0.0]);
        let pairing = pair_frames(&model, "L_*.jpg", "R_*.jpg").unwrap();
        assert_eq!(estimate_scale(&model, &pairing, 0.12), Err(ScaleError::AllDegenerate));
        let model = stereo_model(&[0.0, 0.05]);
        let est = estimate_scale(&model, &pairing, 0.1).unwrap();
        assert_eq!(est.per_frame_ratios.len(), 1);
        assert!((est.scale - 2.0).abs() < 1e-12);
        assert!(estimate_scale(&model, &pairing, 0.0).is_err());
    }

    #[test]
    fn even_median() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn scale_one_is_identity_and_two_doubles() {
        let model = stereo_model(&[0.05, 0.07, 0.06]);
        let cloud = DenseCloud::default();
        assert_eq!(apply_scale(&model, &cloud, 1.0).0, model);
        let (doubled, _) = apply_scale(&model, &cloud, 2.0);
        for i in 0..model.cameras.len() {
            for j in 0..model.cameras.len() {
                let a = (model.cameras[i].center - model.cameras[j].center).norm();
                let b = (doubled.cameras[i].center - doubled.cameras[j].center).norm();
                assert_eq!(b, 2.0 * a);
            }
        }
    }

    #[test]
    fn verification_passes_after_scaling() {
        let model = stereo_model(&[0.05, 0.051, 0.049, 0.3]);
        let pairing = pair_frames(&model, "L_*.jpg", "R_*.jpg").unwrap();
        let est = estimate_scale(&model, &pairing, 0.12).unwrap();
        let (scaled, _) = apply_scale(&model, &DenseCloud::default(), est.scale);
        let check = verify_scaled_baseline(&scaled, &pairing, &est, 0.12);
        assert!(check.passed, "{check:?}");
    }

    proptest! {
        #[test]
        fn rigid_motion_leaves_scale_unchanged(
            baselines in prop::collection::vec(0.01f64..1.0, 1..12),
            angles in prop::array::uniform3(-3.0f64..3.0),
            shift in prop::array::uniform3(-10.0f64..10.0),
        ) {
            let model = stereo_model(&baselines);
            let pairing = pair_frames(&model, "L_*.jpg", "R_*.jpg").unwrap();
            let base = estimate_scale(&model, &pairing, 0.12).unwrap();
            let rot = UnitQuaternion::from_euler_angles(angles[0], angles[1], angles[2]);
            let mut moved = model.clone();
            for c in &mut moved.cameras {
                c.center = rot * c.center + Vec3::from(shift);
            }
            let est = estimate_scale(&moved, &pairing, 0.12).unwrap();
            prop_assert!((est.scale / base.scale - 1.0).abs() < 1e-12);
        }

        #[test]
        fn rescaling_is_equivariant(
            baselines in prop::collection::vec(0.01f64..1.0, 1..12),
            alpha in 0.01f64..100.0,
        ) {
            let model = stereo_model(&baselines);
            let pairing = pair_frames(&model, "L_*.jpg", "R_*.jpg").unwrap();
            let base = estimate_scale(&model, &pairing, 0.12).unwrap();
            let (scaled, _) = apply_scale(&model, &DenseCloud::default(), alpha);
            let est = estimate_scale(&scaled, &pairing, 0.12).unwrap();
            prop_assert!((est.scale * alpha / base.scale - 1.0).abs() < 1e-12);
        }

        #[test]
        fn reestimate_after_apply_is_one(baselines in prop::collection::vec(0.01f64..1.0, 1..12)) {
            let model = stereo_model(&baselines);
            let pairing = pair_frames(&model, "L_*.jpg", "R_*.jpg").unwrap();
            let est = estimate_scale(&model, &pairing, 0.12).unwrap();
            let (scaled, _) = apply_scale(&model, &DenseCloud::default(), est.scale);
            let again = estimate_scale(&scaled, &pairing, 0.12).unwrap();
            prop_assert!((again.scale - 1.0).abs() < 1e-12);
        }

        #[test]
        fn median_survives_corruption(
            clean in 1usize..10,
            corrupt in prop::collection::vec(-50.0f64..50.0, 0..9),
        ) {
            let n_bad = corrupt.len().min(clean.saturating_sub(1));
            let mut baselines = vec![0.06; clean];
            baselines.extend(corrupt[..n_bad].iter().map(|&d| {
                if d < 0.0 { 0.06 / (1.001 - d) } else { 0.061 + d }
            }));
            let model = stereo_model(&baselines);
            let pairing = pair_frames(&model, "L_*.jpg", "R_*.jpg").unwrap();
            let est = estimate_scale(&model, &pairing, 0.12).unwrap();
            prop_assert!((est.scale - 2.0).abs() < 1e-12);
        }
    }
}
