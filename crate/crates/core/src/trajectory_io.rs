//! Annotation parsing and track assembly.
//!
//! Annotations follow the VisDrone MOT layout: one detection per line with ten
//! comma-separated fields
//! `frame,id,bb_left,bb_top,bb_width,bb_height,score,category,truncation,occlusion`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FIELD_COUNT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Pedestrian,
    Bicycle,
    Car,
    Van,
    Truck,
    Bus,
    Motor,
    Ignored,
    Other,
}

impl Category {
    pub const ALL: [Category; 9] = [
        Category::Pedestrian,
        Category::Bicycle,
        Category::Car,
        Category::Van,
        Category::Truck,
        Category::Bus,
        Category::Motor,
        Category::Ignored,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Pedestrian => "pedestrian",
            Category::Bicycle => "bicycle",
            Category::Car => "car",
            Category::Van => "van",
            Category::Truck => "truck",
            Category::Bus => "bus",
            Category::Motor => "motor",
            Category::Ignored => "ignored",
            Category::Other => "other",
        }
    }

    /// Motorised road users; pedestrians and bicycles are not vehicles.
    pub fn is_vehicle(self) -> bool {
        matches!(
            self,
            Category::Car | Category::Van | Category::Truck | Category::Bus | Category::Motor
        )
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidParameter(format!("unknown category name '{s}'")))
    }
}

/// Maps integer category codes to names.
///
/// Codes without an explicit entry resolve to `fallback`, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryMap {
    codes: BTreeMap<i32, Category>,
    fallback: Option<Category>,
}

impl Default for CategoryMap {
    /// VisDrone codes; everything not listed resolves to `other`.
    fn default() -> Self {
        let codes = [
            (0, Category::Ignored),
            (1, Category::Pedestrian),
            (3, Category::Bicycle),
            (4, Category::Car),
            (5, Category::Van),
            (6, Category::Truck),
            (9, Category::Bus),
            (10, Category::Motor),
        ]
        .into_iter()
        .collect();
        Self {
            codes,
            fallback: Some(Category::Other),
        }
    }
}

impl CategoryMap {
    /// A map with only the given entries and no fallback.
    pub fn strict(entries: impl IntoIterator<Item = (i32, Category)>) -> Self {
        Self {
            codes: entries.into_iter().collect(),
            fallback: None,
        }
    }

    pub fn set(&mut self, code: i32, category: Category) {
        self.codes.insert(code, category);
    }

    pub fn resolve(&self, code: i32) -> Option<Category> {
        self.codes.get(&code).copied().or(self.fallback)
    }

    /// First code mapped to `category`, used when writing annotations.
    pub fn code_for(&self, category: Category) -> Option<i32> {
        self.codes
            .iter()
            .find(|(_, c)| **c == category)
            .map(|(code, _)| *code)
    }
}

/// One road user observed in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: u32,
    pub id: u32,
    pub bb_left: f64,
    pub bb_top: f64,
    pub bb_width: f64,
    pub bb_height: f64,
    pub score: f64,
    pub category_code: i32,
    pub category: Category,
    pub truncation: i32,
    pub occlusion: i32,
}

impl Detection {
    pub fn center(&self) -> (f64, f64) {
        (
            self.bb_left + self.bb_width / 2.0,
            self.bb_top + self.bb_height / 2.0,
        )
    }

    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.frame,
            self.id,
            self.bb_left,
            self.bb_top,
            self.bb_width,
            self.bb_height,
            self.score,
            self.category_code,
            self.truncation,
            self.occlusion
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    pub frame: u32,
    pub center_x: f64,
    pub center_y: f64,
    pub width: f64,
    pub height: f64,
}

/// Time-ordered samples of one identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: u32,
    pub category: Category,
    pub samples: Vec<TrackSample>,
}

fn parse_int(field: &str, name: &str, line: usize) -> Result<i64> {
    field.trim().parse::<i64>().map_err(|_| Error::Parse {
        line,
        message: format!("field '{name}' is not an integer: '{}'", field.trim()),
    })
}

fn parse_real(field: &str, name: &str, line: usize) -> Result<f64> {
    let value = field.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("field '{name}' is not a number: '{}'", field.trim()),
    })?;
    if !value.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("field '{name}' is not finite"),
        });
    }
    Ok(value)
}

fn parse_line(raw: &str, line: usize, map: &CategoryMap) -> Result<Detection> {
    let fields: Vec<&str> = raw.split(',').collect();
    if fields.len() != FIELD_COUNT {
        return Err(Error::Parse {
            line,
            message: format!("expected {FIELD_COUNT} fields, found {}", fields.len()),
        });
    }

    let frame = parse_int(fields[0], "frame", line)?;
    let id = parse_int(fields[1], "id", line)?;
    let frame = u32::try_from(frame)
        .ok()
        .filter(|f| *f >= 1)
        .ok_or_else(|| Error::Parse {
            line,
            message: format!("frame index must be >= 1, got {frame}"),
        })?;
    let id = u32::try_from(id).map_err(|_| Error::Parse {
        line,
        message: format!("identity must be >= 0, got {id}"),
    })?;

    let bb_left = parse_real(fields[2], "bb_left", line)?;
    let bb_top = parse_real(fields[3], "bb_top", line)?;
    let bb_width = parse_real(fields[4], "bb_width", line)?;
    let bb_height = parse_real(fields[5], "bb_height", line)?;
    if bb_width <= 0.0 || bb_height <= 0.0 {
        return Err(Error::Parse {
            line,
            message: format!("box dimensions must be positive, got {bb_width}x{bb_height}"),
        });
    }
    let score = parse_real(fields[6], "score", line)?;

    let code = parse_int(fields[7], "category", line)?;
    let category_code = i32::try_from(code).map_err(|_| Error::Parse {
        line,
        message: format!("category code out of range: {code}"),
    })?;
    let small = |v: i64, name: &str| {
        i32::try_from(v).map_err(|_| Error::Parse {
            line,
            message: format!("field '{name}' out of range: {v}"),
        })
    };
    let truncation = small(parse_int(fields[8], "truncation", line)?, "truncation")?;
    let occlusion = small(parse_int(fields[9], "occlusion", line)?, "occlusion")?;

    Ok(Detection {
        frame,
        id,
        bb_left,
        bb_top,
        bb_width,
        bb_height,
        score,
        category_code,
        // Unmapped codes are kept as `other` and surface in the validation report.
        category: map.resolve(category_code).unwrap_or(Category::Other),
        truncation,
        occlusion,
    })
}

/// Parses annotation text without the duplicate check.
///
/// Blank lines are skipped; detections of ignored categories are dropped.
pub fn parse_lines(text: &str, map: &CategoryMap) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let det = parse_line(raw, index + 1, map)?;
        if det.category != Category::Ignored {
            out.push(det);
        }
    }
    Ok(out)
}

/// Parses annotation text, rejecting any repeated `(frame, id)` pair.
pub fn parse_annotations(text: &str, map: &CategoryMap) -> Result<Vec<Detection>> {
    let dets = parse_lines(text, map)?;
    let mut seen = HashSet::with_capacity(dets.len());
    for det in &dets {
        if !seen.insert((det.frame, det.id)) {
            return Err(Error::Validation(format!(
                "duplicate detection for frame {} id {}",
                det.frame, det.id
            )));
        }
    }
    Ok(dets)
}

pub fn write_annotations(dets: &[Detection]) -> String {
    let mut out = String::new();
    for det in dets {
        out.push_str(&det.to_line());
        out.push('\n');
    }
    out
}

/// Groups detections into one frame-sorted track per identity, ordered by id.
pub fn build_tracks(dets: &[Detection]) -> Vec<Track> {
    let mut by_id: BTreeMap<u32, Vec<&Detection>> = BTreeMap::new();
    for det in dets {
        by_id.entry(det.id).or_default().push(det);
    }

    by_id
        .into_iter()
        .map(|(id, mut group)| {
            group.sort_by_key(|d| d.frame);

            let mut votes: BTreeMap<i32, (usize, Category)> = BTreeMap::new();
            for d in &group {
                votes.entry(d.category_code).or_insert((0, d.category)).0 += 1;
            }
            // BTreeMap iterates codes ascending, so `>` keeps the smallest code on ties.
            let mut best: Option<(usize, Category)> = None;
            for (count, category) in votes.values() {
                if best.is_none_or(|(n, _)| *count > n) {
                    best = Some((*count, *category));
                }
            }

            Track {
                id,
                category: best.map(|(_, c)| c).unwrap_or(Category::Other),
                samples: group
                    .iter()
                    .map(|d| {
                        let (center_x, center_y) = d.center();
                        TrackSample {
                            frame: d.frame,
                            center_x,
                            center_y,
                            width: d.bb_width,
                            height: d.bb_height,
                        }
                    })
                    .collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameGap {
    pub id: u32,
    pub from_frame: u32,
    pub to_frame: u32,
    pub gap: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub duplicates: Vec<(u32, u32)>,
    pub gaps: Vec<FrameGap>,
    pub unmapped_codes: Vec<i32>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.duplicates.is_empty() && self.gaps.is_empty() && self.unmapped_codes.is_empty()
    }
}

/// Reports duplicates, per-id frame gaps larger than `gap_limit`, and codes the map cannot resolve.
pub fn validate_dataset(dets: &[Detection], map: &CategoryMap, gap_limit: u32) -> ValidationReport {
    let mut seen = HashSet::with_capacity(dets.len());
    let mut duplicates = BTreeSet::new();
    let mut frames: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    let mut unmapped = BTreeSet::new();

    for det in dets {
        if !seen.insert((det.frame, det.id)) {
            duplicates.insert((det.frame, det.id));
        }
        frames.entry(det.id).or_default().insert(det.frame);
        if map.resolve(det.category_code).is_none() {
            unmapped.insert(det.category_code);
        }
    }

    let mut gaps = Vec::new();
    for (id, set) in &frames {
        let ordered: Vec<u32> = set.iter().copied().collect();
        for pair in ordered.windows(2) {
            let gap = pair[1] - pair[0];
            if gap > gap_limit {
                gaps.push(FrameGap {
                    id: *id,
                    from_frame: pair[0],
                    to_frame: pair[1],
                    gap,
                });
            }
        }
    }

    ValidationReport {
        duplicates: duplicates.into_iter().collect(),
        gaps,
        unmapped_codes: unmapped.into_iter().collect(),
    }
}
