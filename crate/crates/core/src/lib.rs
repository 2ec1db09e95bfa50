//! Thermal texturing of dense RGB reconstructions.
//!
//! The pipeline calibrates a rig of two RGB cameras and one thermal camera
//! from planar-target corners, recovers the metric scale of an external
//! structure-from-motion reconstruction from the known stereo baseline, and
//! projects every dense point into the thermal frames that see it.

pub mod geometry;
pub mod lm;
pub mod calibration;
pub mod sfm_io;
pub mod scale;
pub mod fusion;
pub mod synth;
pub mod pipeline;
