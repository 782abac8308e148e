//! Pipeline configuration file (TOML, sectioned, unknown keys rejected).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{JointMap, SelectionConfig};
use crate::meta::CovStructure;
use crate::model::{ExerciseKind, JointKind};
use crate::segmentation::DetectionConfig;
use crate::signal::SmoothingConfig;

/// Default configuration with every key documented.
pub const DEFAULT_CONFIG_TOML: &str = r#"# romkit pipeline configuration. Every key is optional; values shown are defaults.

[signal]
# Landmarks below this visibility make a frame's angle invalid.
visibility_threshold = 0.5
# Mapped joint is used when its better side reaches this coverage.
mapped_min_coverage = 0.6
# Videos whose best candidate signal is below this coverage are unusable.
usable_min_coverage = 0.1
# Savitzky-Golay window (odd, frames) and polynomial order.
window_length = 11
poly_order = 2
# Interior gaps shorter than this (seconds) are linearly interpolated.
max_gap = 2.0
# Robust ROM is the spread between these percentiles.
rom_low_pct = 5.0
rom_high_pct = 95.0

[segmentation]
# Minimum spacing between accepted troughs, seconds.
min_inter_trough = 2.0
# Shortest admissible concentric or eccentric phase, seconds.
min_phase_duration = 0.3
# Repetitions below this ROM (degrees) are discarded.
min_rom = 10.0
# Trough prominence is adapted within this band (degrees).
prominence_low = 5.0
prominence_high = 10.0
# Lag range searched by the autocorrelation cadence estimator, seconds.
cadence_min = 0.5
cadence_max = 15.0
# Prominence as a fraction of the clip's P95-P5 amplitude, before clamping.
amplitude_fraction = 0.2
# Cadence confidence needed before trough spacing adapts to the period.
cadence_confidence = 0.5
# Primary signals below this coverage also try surrogate signals.
fallback_below_coverage = 0.6

[model]
# Covariance structures (UN, DIAG, CS, INTERCEPT, NONE) per level.
structure_p = "UN"
structure_e = "UN"
# Parametric bootstrap replicates and base seed.
bootstrap_b = 2000
seed = 20240601

[io]
# Participant metadata CSV (participant_id, sex); required for model fits.
# participants = "participants.csv"
# Annotation CSV (video_id, side, rep_count) for `evaluate`.
# annotations = "annotations.csv"
# Focal joint overrides by exercise name, e.g. "Lateral Raise" = "shoulder".
[io.joint_map]
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalSection {
    pub visibility_threshold: f64,
    pub mapped_min_coverage: f64,
    pub usable_min_coverage: f64,
    pub window_length: usize,
    pub poly_order: usize,
    pub max_gap: f64,
    pub rom_low_pct: f64,
    pub rom_high_pct: f64,
}

impl Default for SignalSection {
    fn default() -> Self {
        let s = SmoothingConfig::<f64>::default();
        let sel = SelectionConfig::<f64>::default();
        Self {
            visibility_threshold: sel.visibility_threshold,
            mapped_min_coverage: sel.mapped_min_coverage,
            usable_min_coverage: sel.usable_min_coverage,
            window_length: s.window_length,
            poly_order: s.poly_order,
            max_gap: s.max_gap,
            rom_low_pct: s.rom_low_pct,
            rom_high_pct: s.rom_high_pct,
        }
    }
}

impl SignalSection {
    pub fn smoothing(&self) -> SmoothingConfig<f64> {
        SmoothingConfig {
            window_length: self.window_length,
            poly_order: self.poly_order,
            max_gap: self.max_gap,
            rom_low_pct: self.rom_low_pct,
            rom_high_pct: self.rom_high_pct,
        }
    }

    pub fn selection(&self) -> SelectionConfig<f64> {
        SelectionConfig {
            visibility_threshold: self.visibility_threshold,
            mapped_min_coverage: self.mapped_min_coverage,
            usable_min_coverage: self.usable_min_coverage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub structure_p: CovStructure,
    pub structure_e: CovStructure,
    pub bootstrap_b: usize,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            structure_p: CovStructure::Un,
            structure_e: CovStructure::Un,
            bootstrap_b: 2000,
            seed: 20240601,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub participants: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub joint_map: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub signal: SignalSection,
    pub segmentation: DetectionConfig<f64>,
    pub model: ModelSection,
    pub io: IoSection,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a configuration file. Relative paths in `[io]` are resolved
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.io.participants, &mut cfg.io.annotations].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.signal.smoothing().validate()?;
        self.segmentation.validate()?;
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("visibility_threshold", self.signal.visibility_threshold)?;
        unit("mapped_min_coverage", self.signal.mapped_min_coverage)?;
        unit("usable_min_coverage", self.signal.usable_min_coverage)?;
        if self.model.bootstrap_b == 0 {
            return Err(Error::Config("bootstrap_b must be at least 1".into()));
        }
        self.joint_map()?;
        Ok(())
    }

    pub fn joint_map(&self) -> Result<JointMap> {
        let mut map = JointMap::new();
        for (name, joint) in &self.io.joint_map {
            let exercise: ExerciseKind = name.parse()?;
            let kind: JointKind = joint.parse()?;
            map.insert(&exercise, kind);
        }
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_defaults_equal_built_in_defaults() {
        let parsed = PipelineConfig::parse(DEFAULT_CONFIG_TOML).unwrap();
        assert_eq!(parsed, PipelineConfig::default());
        let d = PipelineConfig::default();
        assert_eq!(d.signal.visibility_threshold, 0.5);
        assert_eq!((d.signal.window_length, d.signal.poly_order), (11, 2));
        assert_eq!(d.signal.max_gap, 2.0);
        assert_eq!((d.signal.rom_low_pct, d.signal.rom_high_pct), (5.0, 95.0));
        assert_eq!(d.segmentation.min_inter_trough, 2.0);
        assert_eq!(d.segmentation.min_phase_duration, 0.3);
        assert_eq!(d.segmentation.min_rom, 10.0);
        assert_eq!((d.segmentation.prominence_low, d.segmentation.prominence_high), (5.0, 10.0));
        assert_eq!(d.model.bootstrap_b, 2000);
    }

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(PipelineConfig::parse("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::parse("[signal]\nwindow = 11\n").is_err());
        assert!(PipelineConfig::parse("[plots]\n").is_err());
        assert!(PipelineConfig::parse("[model]\nstructure_p = \"AR1\"\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(PipelineConfig::parse("[signal]\nwindow_length = 10\n").is_err());
        assert!(PipelineConfig::parse("[signal]\nvisibility_threshold = 1.5\n").is_err());
        assert!(PipelineConfig::parse("[model]\nbootstrap_b = 0\n").is_err());
        assert!(PipelineConfig::parse("[io.joint_map]\n\"Bayesian Curl\" = \"knee\"\n").is_err());
    }

    #[test]
    fn joint_overrides_apply() {
        let cfg = PipelineConfig::parse("[io.joint_map]\n\"Bayesian Curl\" = \"shoulder\"\n").unwrap();
        let map = cfg.joint_map().unwrap();
        let curl: ExerciseKind = "Bayesian Curl".parse().unwrap();
        assert_eq!(map.joint_for(&curl), JointKind::Shoulder);
    }
}
