//! Pipeline configuration file.
//!
//! ```toml
//! [paths]
//! corners = "corners.csv"
//! nvm = "scene.nvm"
//! dense_ply = "dense.ply"
//! patch = "dense.patch"          # optional
//! thermal = "thermal/T_*.pgm"    # one `*` in the file name
//! calibration = "calibration.toml"
//! fused_ply = "fused.ply"
//! calibrate_manifest = "calibrate_manifest.toml"
//! fuse_manifest = "fuse_manifest.toml"
//!
//! [board]
//! rows = 6
//! cols = 8
//! square_size = 0.04
//!
//! [rig]
//! known_baseline = 0.12
//! left_pattern = "L_*.jpg"
//! right_pattern = "R_*.jpg"
//!
//! [fusion]
//! interpolation = "bilinear"
//! zbuffer = false
//! splat_radius = 2.0
//! depth_tol = 0.01
//!
//! [output]
//! ply_mode = "binary"
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thermocloud::calibration::BoardSpec;
use thermocloud::fusion::{Interpolation, ZBufferOptions};
use thermocloud::pipeline::PipelineOptions;
use thermocloud::scale::FramePattern;
use thermocloud::sfm_io::PlyMode;

use crate::error::{read_text, CliError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub board: BoardSpec,
    pub rig: RigConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corners: PathBuf,
    pub nvm: PathBuf,
    pub dense_ply: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<PathBuf>,
    pub thermal: PathBuf,
    pub calibration: PathBuf,
    pub fused_ply: PathBuf,
    #[serde(default = "default_calibrate_manifest")]
    pub calibrate_manifest: PathBuf,
    #[serde(default = "default_fuse_manifest")]
    pub fuse_manifest: PathBuf,
}

fn default_calibrate_manifest() -> PathBuf {
    "calibrate_manifest.toml".into()
}

fn default_fuse_manifest() -> PathBuf {
    "fuse_manifest.toml".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigConfig {
    /// Meters.
    pub known_baseline: f64,
    pub left_pattern: String,
    pub right_pattern: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub interpolation: Interpolation,
    pub zbuffer: bool,
    pub splat_radius: f64,
    pub depth_tol: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        let z = ZBufferOptions::default();
        Self {
            interpolation: Interpolation::Bilinear,
            zbuffer: false,
            splat_radius: z.splat_radius,
            depth_tol: z.depth_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub ply_mode: PlyMode,
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub ply_mode: Option<PlyMode>,
    pub interpolation: Option<Interpolation>,
    pub zbuffer: Option<bool>,
}

impl PipelineConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = read_text(path)?;
        let mut config: PipelineConfig = toml::from_str(&text).map_err(|e| CliError::parse(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.paths.resolve(base);
        if let Some(mode) = overrides.ply_mode {
            config.output.ply_mode = mode;
        }
        if let Some(i) = overrides.interpolation {
            config.fusion.interpolation = i;
        }
        if let Some(z) = overrides.zbuffer {
            config.fusion.zbuffer = z;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| CliError::Usage(format!("config: {m}"));
        let bad = |m: String| Err(usage(m));
        if !(self.rig.known_baseline > 0.0 && self.rig.known_baseline.is_finite()) {
            return bad(format!("known_baseline must be positive, got {}", self.rig.known_baseline));
        }
        if !(self.fusion.splat_radius >= 0.0 && self.fusion.splat_radius.is_finite()) {
            return bad("splat_radius must be non-negative".into());
        }
        if !(self.fusion.depth_tol >= 0.0 && self.fusion.depth_tol.is_finite()) {
            return bad("depth_tol must be non-negative".into());
        }
        self.board.validate().map_err(|e| usage(e.to_string()))?;
        for pattern in [&self.rig.left_pattern, &self.rig.right_pattern, &self.thermal_pattern()?] {
            FramePattern::new(pattern).map_err(|e| usage(e.to_string()))?;
        }
        Ok(())
    }

    /// Directory and file-name pattern of the thermal glob.
    pub fn thermal_glob(&self) -> Result<(PathBuf, String), CliError> {
        let glob = &self.paths.thermal;
        let name = glob
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| CliError::Usage(format!("config: thermal glob {} has no file name", glob.display())))?;
        let dir = glob.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        Ok((dir, name.to_string()))
    }

    fn thermal_pattern(&self) -> Result<String, CliError> {
        Ok(self.thermal_glob()?.1)
    }

    pub fn zbuffer_options(&self) -> Option<ZBufferOptions> {
        self.fusion.zbuffer.then_some(ZBufferOptions {
            splat_radius: self.fusion.splat_radius,
            depth_tol: self.fusion.depth_tol,
        })
    }

    pub fn pipeline_options(&self) -> Result<PipelineOptions, CliError> {
        Ok(PipelineOptions {
            left_pattern: self.rig.left_pattern.clone(),
            right_pattern: self.rig.right_pattern.clone(),
            thermal_pattern: self.thermal_pattern()?,
            known_baseline: self.rig.known_baseline,
            interpolation: self.fusion.interpolation,
            zbuffer: self.zbuffer_options(),
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.corners,
            &mut self.nvm,
            &mut self.dense_ply,
            &mut self.thermal,
            &mut self.calibration,
            &mut self.fused_ply,
            &mut self.calibrate_manifest,
            &mut self.fuse_manifest,
        ] {
            fix(p);
        }
        if let Some(p) = &mut self.patch {
            fix(p);
        }
    }
}
