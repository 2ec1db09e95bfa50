use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thermocloud::calibration::{calibrate, read_corner_csv, CalibrationDocument, CameraId};
use thermocloud::fusion::decode_thermal_image;
use thermocloud::lm::LmOptions;
use thermocloud::pipeline::{run_fusion, NamedThermalImage};
use thermocloud::scale::FramePattern;
use thermocloud::sfm_io::{parse_nvm, parse_patch, parse_ply, write_fused_ply, PlyMode};
use thermocloud::synth::{export_fixtures, generate_scene, SceneBundle, SceneSpec};

use crate::config::{FusionConfig, OutputConfig, Paths, PipelineConfig, RigConfig};
use crate::error::{corner_error, document_error, image_error, read_file, read_text, write_file, CliError};
use crate::manifest::{
    to_toml, CalibrateManifest, FuseManifest, RmsReport, ScaleReport, SynthManifest,
};

/// Manifest text plus a short human-readable summary.
pub struct Outcome {
    pub manifest: String,
    pub summary: Vec<String>,
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

pub fn cmd_calibrate(config: &PipelineConfig) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let paths = &config.paths;
    let bytes = read_file(&paths.corners)?;
    let sets = read_corner_csv(bytes.as_slice(), &config.board).map_err(|e| corner_error(&paths.corners, e))?;
    let refined = calibrate(&config.board, &sets, &LmOptions::default())?;
    let doc = CalibrationDocument {
        board: Some(config.board),
        result: refined.result,
    };
    write_file(&paths.calibration, doc.to_toml_string().as_bytes())?;

    let r = &doc.result;
    let history = &refined.report.cost_history;
    let manifest = CalibrateManifest {
        command: "calibrate",
        version: env!("CARGO_PKG_VERSION"),
        corners: display(&paths.corners),
        calibration: display(&paths.calibration),
        views: sets.iter().map(|s| s.view_id).collect::<BTreeSet<_>>().len(),
        corner_sets: sets.len(),
        iterations: refined.report.iterations,
        termination: format!("{:?}", refined.report.termination),
        initial_cost: history.first().copied().unwrap_or(f64::NAN),
        final_cost: history.last().copied().unwrap_or(f64::NAN),
        baseline: r.baseline(),
        rms: RmsReport {
            left: *r.rms_reprojection.get(CameraId::Left),
            right: *r.rms_reprojection.get(CameraId::Right),
            thermal: *r.rms_reprojection.get(CameraId::Thermal),
        },
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let text = to_toml(&manifest);
    write_file(&paths.calibrate_manifest, text.as_bytes())?;
    Ok(Outcome {
        manifest: text,
        summary: vec![
            format!("calibration written to {}", manifest.calibration),
            format!(
                "rms px: left {:.3e}, right {:.3e}, thermal {:.3e}; baseline {:.6} m",
                manifest.rms.left, manifest.rms.right, manifest.rms.thermal, manifest.baseline
            ),
        ],
    })
}

/// Thermal images in the glob directory whose names match the pattern,
/// sorted by name.
fn load_thermal_frames(config: &PipelineConfig) -> Result<Vec<NamedThermalImage>, CliError> {
    let (dir, pattern) = config.thermal_glob()?;
    let pattern_match = FramePattern::new(&pattern)?;
    let entries = std::fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(&dir, e))?;
        if let Some(name) = entry.file_name().to_str() {
            if pattern_match.capture(name).is_some() {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(CliError::io(
            &config.paths.thermal,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no thermal frames match"),
        ));
    }
    names
        .into_iter()
        .map(|name| {
            let path = dir.join(&name);
            let bytes = read_file(&path)?;
            let image = decode_thermal_image(&bytes).map_err(|e| image_error(&path, e))?;
            Ok(NamedThermalImage { name, image })
        })
        .collect()
}

pub fn cmd_fuse(config: &PipelineConfig) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let paths = &config.paths;
    let doc = CalibrationDocument::from_toml_str(&read_text(&paths.calibration)?)
        .map_err(|e| document_error(&paths.calibration, e))?;
    let model = parse_nvm(&read_text(&paths.nvm)?).map_err(|e| CliError::parse(&paths.nvm, e))?;
    let mut cloud = parse_ply(&read_file(&paths.dense_ply)?).map_err(|e| CliError::parse(&paths.dense_ply, e))?;
    if let Some(patch_path) = &paths.patch {
        let patches = parse_patch(&read_text(patch_path)?).map_err(|e| CliError::parse(patch_path, e))?;
        if patches.len() != cloud.points.len() {
            return Err(CliError::parse(
                patch_path,
                format!(
                    "{} patches for {} dense points",
                    patches.len(),
                    cloud.points.len()
                ),
            ));
        }
        cloud.visibility = Some(patches.into_iter().map(|p| p.visible).collect());
    }
    let images = load_thermal_frames(config)?;
    let run = run_fusion(&model, &cloud, &images, &doc.result, &config.pipeline_options()?)?;

    let mode = config.output.ply_mode;
    write_file(&paths.fused_ply, &write_fused_ply(&run.points, mode))?;

    let fused = run.valid_count();
    let fallback = match (run.source.is_fallback(), config.fusion.zbuffer) {
        (false, _) => None,
        (true, false) => Some("no patch file; visibility transferred from the nearest sparse point".to_string()),
        (true, true) => Some("no patch file; visibility from the thermal z-buffer".to_string()),
    };
    let (ratio_min, _, ratio_max) = run.scale.spread();
    let manifest = FuseManifest {
        command: "fuse",
        version: env!("CARGO_PKG_VERSION"),
        calibration: display(&paths.calibration),
        nvm: display(&paths.nvm),
        dense_ply: display(&paths.dense_ply),
        output: display(&paths.fused_ply),
        ply_mode: match mode {
            PlyMode::Ascii => "ascii",
            PlyMode::Binary => "binary",
        }
        .into(),
        interpolation: format!("{:?}", config.fusion.interpolation).to_lowercase(),
        zbuffer: config.fusion.zbuffer,
        visibility_source: run.source.as_str().into(),
        fallback,
        scale: ScaleReport {
            scale: run.scale.scale,
            pairs: run.pairing.pairs.len(),
            ratios: run.scale.per_frame_ratios.len(),
            inliers: run.scale.inlier_count,
            mad: run.scale.mad,
            ratio_min,
            ratio_max,
            baseline_mean: run.baseline_check.mean_baseline,
            baseline_check_passed: run.baseline_check.passed,
        },
        points_total: run.points.len(),
        points_fused: fused,
        points_invalid: run.points.len() - fused,
        frames_used: run.frames_used,
        frames_unmatched: run.frames_unmatched,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let text = to_toml(&manifest);
    write_file(&paths.fuse_manifest, text.as_bytes())?;
    let mut summary = vec![
        format!("fused cloud written to {}", manifest.output),
        format!(
            "scale {:.12} m/unit from {} pairs ({} inliers)",
            manifest.scale.scale, manifest.scale.pairs, manifest.scale.inliers
        ),
        format!(
            "{} of {} points fused from {} thermal frames, visibility {}",
            fused, manifest.points_total, manifest.frames_used, manifest.visibility_source
        ),
    ];
    if let Some(note) = &manifest.fallback {
        summary.push(note.clone());
    }
    Ok(Outcome { manifest: text, summary })
}

pub struct SynthArgs {
    pub out: PathBuf,
    pub spec: SceneSpec,
}

/// Config written next to synthetic fixtures, with paths relative to it.
fn fixture_config(bundle: &SceneBundle, files: &thermocloud::synth::FixtureFiles) -> PipelineConfig {
    PipelineConfig {
        paths: Paths {
            corners: files.corners.clone(),
            nvm: files.nvm.clone(),
            dense_ply: files.dense_ply.clone(),
            patch: Some(files.patch.clone()),
            thermal: files.thermal_dir.join(&files.thermal_pattern),
            calibration: "calibration.toml".into(),
            fused_ply: "fused.ply".into(),
            calibrate_manifest: "calibrate_manifest.toml".into(),
            fuse_manifest: "fuse_manifest.toml".into(),
        },
        board: bundle.calibration.board,
        rig: RigConfig {
            known_baseline: bundle.rig.baseline(),
            left_pattern: files.left_pattern.clone(),
            right_pattern: files.right_pattern.clone(),
        },
        fusion: FusionConfig::default(),
        output: OutputConfig::default(),
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let bundle = generate_scene(&args.spec)?;
    let manifest = export_fixtures(&bundle, &args.out)?;
    let truth = CalibrationDocument {
        board: Some(bundle.calibration.board),
        result: bundle.calibration.ground_truth_result(),
    };
    write_file(&args.out.join("calibration_truth.toml"), truth.to_toml_string().as_bytes())?;
    let config_path = args.out.join("config.toml");
    write_file(&config_path, fixture_config(&bundle, &manifest.files).to_toml_string().as_bytes())?;

    let report = SynthManifest {
        command: "synth",
        version: env!("CARGO_PKG_VERSION"),
        output_dir: display(&args.out),
        seed: args.spec.seed,
        ground_truth: display(&args.out.join("ground_truth.toml")),
        config: display(&config_path),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(Outcome {
        manifest: to_toml(&report),
        summary: vec![
            format!("fixtures written to {}", report.output_dir),
            format!("pipeline config: {}", report.config),
        ],
    })
}
