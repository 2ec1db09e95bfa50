//! Run manifests, one TOML document per command invocation.
//!
//! Every field except `wall_time_s` is a function of the inputs.

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct CalibrateManifest {
    pub command: &'static str,
    pub version: &'static str,
    pub corners: String,
    pub calibration: String,
    pub views: usize,
    pub corner_sets: usize,
    pub iterations: usize,
    pub termination: String,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Meters.
    pub baseline: f64,
    pub rms: RmsReport,
    pub wall_time_s: f64,
}

/// Per-component reprojection rms in pixels.
#[derive(Debug, Clone, Serialize)]
pub struct RmsReport {
    pub left: f64,
    pub right: f64,
    pub thermal: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FuseManifest {
    pub command: &'static str,
    pub version: &'static str,
    pub calibration: String,
    pub nvm: String,
    pub dense_ply: String,
    pub output: String,
    pub ply_mode: String,
    pub interpolation: String,
    pub zbuffer: bool,
    pub visibility_source: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
    pub scale: ScaleReport,
    pub points_total: usize,
    pub points_fused: usize,
    pub points_invalid: usize,
    pub frames_used: usize,
    pub frames_unmatched: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleReport {
    /// Meters per model unit.
    pub scale: f64,
    pub pairs: usize,
    pub ratios: usize,
    pub inliers: usize,
    pub mad: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub baseline_mean: f64,
    pub baseline_check_passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthManifest {
    pub command: &'static str,
    pub version: &'static str,
    pub output_dir: String,
    pub seed: u64,
    pub ground_truth: String,
    pub config: String,
    pub wall_time_s: f64,
}

pub fn to_toml<T: Serialize>(manifest: &T) -> String {
    toml::to_string(manifest).expect("manifest serializes")
}
