//! Loading and the shared detection → kinematics → TTC chain.

use std::path::Path;

use uavrisk_core::calibration::{derive_kinematics, estimate_scale, KinematicState, SceneScale};
use uavrisk_core::trajectory_io::{build_tracks, parse_annotations, validate_dataset, CategoryMap, Detection, ValidationReport};
use uavrisk_core::ttc::{assess_all, TtcRecord};

use crate::config::RunConfig;
use crate::error::CliError;

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn load_detections(path: &Path, map: &CategoryMap) -> Result<Vec<Detection>, CliError> {
    let text = read_text(path)?;
    parse_annotations(&text, map).map_err(|e| CliError::core(path, e))
}

/// Everything derived from one annotation file.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub detections: Vec<Detection>,
    pub validation: ValidationReport,
    /// `None` only when the input holds no detections.
    pub scale: Option<SceneScale>,
    pub states: Vec<KinematicState>,
    pub records: Vec<TtcRecord>,
}

impl Analysis {
    pub fn frame_count(&self) -> usize {
        let mut frames: Vec<u32> = self.detections.iter().map(|d| d.frame).collect();
        frames.sort_unstable();
        frames.dedup();
        frames.len()
    }

    pub fn user_count(&self) -> usize {
        let mut ids: Vec<u32> = self.detections.iter().map(|d| d.id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    pub fn critical_count(&self) -> usize {
        self.records.iter().filter(|r| r.critical).count()
    }
}

pub fn analyze(cfg: &RunConfig, input: &Path) -> Result<Analysis, CliError> {
    let detections = load_detections(input, &cfg.categories)?;
    let validation = validate_dataset(&detections, &cfg.categories, cfg.gap_limit);
    if detections.is_empty() {
        return Ok(Analysis {
            detections,
            validation,
            scale: None,
            states: Vec::new(),
            records: Vec::new(),
        });
    }

    let tracks = build_tracks(&detections);
    let scale = match cfg.scale {
        Some(mpp) => SceneScale::manual(mpp, cfg.fps)?,
        None => estimate_scale(&tracks, cfg.dims, cfg.fps).map_err(|e| CliError::core(input, e))?,
    };

    let mut states = Vec::new();
    for track in &tracks {
        states.extend(derive_kinematics(track, &scale, cfg.kinematics)?);
    }
    let records = assess_all(&states, &cfg.assess)?;

    Ok(Analysis {
        detections,
        validation,
        scale: Some(scale),
        states,
        records,
    })
}
