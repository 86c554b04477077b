//! Pairwise geometry and time-to-collision.
//!
//! Two road users `a` and `b` are compared centre to centre under the
//! constant-velocity assumption. The relative velocity is `v_b - v_a` and
//! the closing speed is its component along the line from `b` towards `a`,
//! so a positive closing speed means the gap is shrinking.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::KinematicState;
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::trajectory_io::Category;

/// Speeds at or below this (m/s) count as "not moving".
pub const SPEED_EPSILON: f64 = 1e-6;

pub const DEFAULT_THRESHOLD: f64 = 2.5;
pub const DEFAULT_RADIUS: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairGeometry {
    pub id_a: u32,
    pub id_b: u32,
    pub frame: u32,
    pub position_a: Vec2,
    pub position_b: Vec2,
    pub distance: f64,
    pub rel_velocity: Vec2,
    pub rel_speed: f64,
    pub closing_speed: f64,
    /// Angle between the two velocity vectors, radians.
    pub alpha: f64,
    /// Angle between the relative velocity and the unit vector from `b` to `a`, radians.
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TtcMode {
    /// Distance over closing speed.
    #[default]
    Projected,
    /// Distance over the magnitude of the relative velocity, for approaching pairs only.
    Literal,
}

impl fmt::Display for TtcMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TtcMode::Projected => "projected",
            TtcMode::Literal => "literal",
        })
    }
}

impl FromStr for TtcMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "projected" => Ok(TtcMode::Projected),
            "literal" => Ok(TtcMode::Literal),
            other => Err(Error::InvalidParameter(format!(
                "unknown TTC mode '{other}', expected projected or literal"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TtcRecord {
    pub geometry: PairGeometry,
    pub category_a: Category,
    pub category_b: Category,
    /// `None` when the pair has no positive time to collision.
    pub ttc: Option<f64>,
    pub mode: TtcMode,
    pub critical: bool,
}

impl TtcRecord {
    pub fn frame(&self) -> u32 {
        self.geometry.frame
    }

    pub fn ids(&self) -> (u32, u32) {
        (self.geometry.id_a, self.geometry.id_b)
    }

    /// The other member of the pair, if `id` belongs to it.
    pub fn partner_of(&self, id: u32) -> Option<u32> {
        if self.geometry.id_a == id {
            Some(self.geometry.id_b)
        } else if self.geometry.id_b == id {
            Some(self.geometry.id_a)
        } else {
            None
        }
    }
}

pub fn pair_geometry(a: &KinematicState, b: &KinematicState) -> PairGeometry {
    let rel_velocity = b.velocity - a.velocity;
    let rel_speed = rel_velocity.norm();
    let offset = a.position - b.position;
    let distance = offset.norm();

    let (closing_speed, theta) = if distance > 0.0 {
        let unit = offset / distance;
        // |cos| can creep past 1 by an ulp; the clamp keeps |closing| <= rel_speed.
        let closing = rel_velocity.dot(unit).clamp(-rel_speed, rel_speed);
        (closing, rel_velocity.angle_to(unit))
    } else {
        (rel_speed, 0.0)
    };

    PairGeometry {
        id_a: a.id,
        id_b: b.id,
        frame: a.frame,
        position_a: a.position,
        position_b: b.position,
        distance,
        rel_velocity,
        rel_speed,
        closing_speed,
        alpha: a.velocity.angle_to(b.velocity),
        theta,
    }
}

/// Relative speed from the two speeds and the angle between their headings.
pub fn rel_speed_law_of_cosines(speed_a: f64, speed_b: f64, alpha: f64) -> f64 {
    let sq = speed_a * speed_a + speed_b * speed_b - 2.0 * speed_a * speed_b * alpha.cos();
    sq.max(0.0).sqrt()
}

pub fn time_to_collision(g: &PairGeometry, mode: TtcMode) -> Option<f64> {
    match mode {
        TtcMode::Projected if g.closing_speed > SPEED_EPSILON => Some(g.distance / g.closing_speed),
        TtcMode::Literal if g.rel_speed > SPEED_EPSILON && g.closing_speed > 0.0 => {
            Some(g.distance / g.rel_speed)
        }
        _ => None,
    }
}

/// Strictly below the threshold is critical; an absent TTC never is.
pub fn classify(ttc: Option<f64>, threshold: f64) -> bool {
    ttc.is_some_and(|t| t < threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssessParams {
    /// Pairs further apart than this (metres, centre to centre) are not evaluated.
    pub radius: f64,
    /// Critical-TTC threshold, seconds.
    pub threshold: f64,
    pub mode: TtcMode,
}

impl Default for AssessParams {
    fn default() -> Self {
        Self {
            radius: DEFAULT_RADIUS,
            threshold: DEFAULT_THRESHOLD,
            mode: TtcMode::Projected,
        }
    }
}

impl AssessParams {
    pub fn validate(&self) -> Result<()> {
        if self.radius.is_nan() || self.radius <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "neighbour radius must be positive, got {}",
                self.radius
            )));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "TTC threshold must be positive, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

pub fn evaluate_pair(a: &KinematicState, b: &KinematicState, params: &AssessParams) -> TtcRecord {
    let geometry = pair_geometry(a, b);
    let ttc = time_to_collision(&geometry, params.mode);
    TtcRecord {
        geometry,
        category_a: a.category,
        category_b: b.category,
        ttc,
        mode: params.mode,
        critical: classify(ttc, params.threshold),
    }
}

fn within_radius(a: Vec2, b: Vec2, radius: f64) -> bool {
    a.distance(b) <= radius
}

/// Uniform grid over one frame's positions.
///
/// Indices are kept sorted by `(column, row)` cell key, so the three cells of
/// one column inside a 3x3 neighbourhood form a single contiguous run.
#[derive(Debug, Clone)]
pub struct SpatialGrid {
    cell_size: f64,
    keys: Vec<(i64, i64)>,
    order: Vec<usize>,
}

impl SpatialGrid {
    pub fn build(positions: impl IntoIterator<Item = Vec2>, cell_size: f64) -> Self {
        let mut grid = Self {
            cell_size,
            keys: Vec::new(),
            order: Vec::new(),
        };
        let mut entries: Vec<((i64, i64), usize)> = positions
            .into_iter()
            .enumerate()
            .map(|(index, p)| (grid.cell_of(p), index))
            .collect();
        entries.sort_unstable();
        (grid.keys, grid.order) = entries.into_iter().unzip();
        grid
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn cell_of(&self, p: Vec2) -> (i64, i64) {
        if self.cell_size.is_infinite() {
            return (0, 0);
        }
        (
            (p.x / self.cell_size).floor() as i64,
            (p.y / self.cell_size).floor() as i64,
        )
    }

    fn run(&self, from: (i64, i64), to: (i64, i64)) -> &[usize] {
        let lo = self.keys.partition_point(|k| *k < from);
        let hi = self.keys.partition_point(|k| *k <= to);
        &self.order[lo..hi.max(lo)]
    }

    /// Indices in one cell, in insertion order.
    pub fn cell(&self, key: (i64, i64)) -> &[usize] {
        self.run(key, key)
    }

    pub fn occupied_cells(&self) -> usize {
        let mut n = 0;
        for (i, k) in self.keys.iter().enumerate() {
            if i == 0 || self.keys[i - 1] != *k {
                n += 1;
            }
        }
        n
    }

    /// Indices in the 3x3 block of cells around `p`.
    pub fn neighborhood(&self, p: Vec2) -> impl Iterator<Item = usize> + '_ {
        let (cx, cy) = self.cell_of(p);
        let columns = [cx.saturating_sub(1), cx, cx.saturating_add(1)];
        let rows = (cy.saturating_sub(1), cy.saturating_add(1));
        // Saturation at the i64 limits would otherwise visit the centre column twice.
        (0..3)
            .filter(move |&k| k == 1 || columns[k] != cx)
            .flat_map(move |k| self.run((columns[k], rows.0), (columns[k], rows.1)).iter().copied())
    }
}

fn sorted_by_id(states: &[KinematicState]) -> Vec<&KinematicState> {
    let mut sorted: Vec<&KinematicState> = states.iter().collect();
    sorted.sort_by_key(|s| s.id);
    sorted
}

/// TTC records for every pair within `params.radius` at one frame.
///
/// Candidate pairs come from a grid with cell size equal to the radius, so
/// only the 3x3 neighbourhood of each user needs checking. Output is sorted
/// by `(id_a, id_b)` with `id_a < id_b`.
pub fn assess_frame(states: &[KinematicState], params: &AssessParams) -> Vec<TtcRecord> {
    let sorted = sorted_by_id(states);
    let grid = SpatialGrid::build(sorted.iter().map(|s| s.position), params.radius);

    let mut out = Vec::new();
    for (i, a) in sorted.iter().enumerate() {
        for j in grid.neighborhood(a.position) {
            if j <= i {
                continue;
            }
            let b = sorted[j];
            if within_radius(a.position, b.position, params.radius) {
                out.push(evaluate_pair(a, b, params));
            }
        }
    }
    out.sort_unstable_by_key(TtcRecord::ids);
    out
}

/// All-pairs reference for [`assess_frame`].
pub fn assess_frame_exhaustive(states: &[KinematicState], params: &AssessParams) -> Vec<TtcRecord> {
    let sorted = sorted_by_id(states);
    let mut out = Vec::new();
    for (i, a) in sorted.iter().enumerate() {
        for b in &sorted[i + 1..] {
            if within_radius(a.position, b.position, params.radius) {
                out.push(evaluate_pair(a, b, params));
            }
        }
    }
    out
}

/// Groups states by frame, keyed and ordered by frame index.
pub fn states_by_frame(states: &[KinematicState]) -> BTreeMap<u32, Vec<KinematicState>> {
    let mut frames: BTreeMap<u32, Vec<KinematicState>> = BTreeMap::new();
    for s in states {
        frames.entry(s.frame).or_default().push(*s);
    }
    frames
}

/// Assesses every frame in parallel; records come back in frame order.
pub fn assess_all(states: &[KinematicState], params: &AssessParams) -> Result<Vec<TtcRecord>> {
    params.validate()?;
    let frames = states_by_frame(states);
    for (frame, group) in &frames {
        let mut ids: Vec<u32> = group.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Validation(format!(
                "identity {} has two states at frame {frame}",
                w[0]
            )));
        }
    }
    let per_frame: Vec<Vec<TtcRecord>> = frames
        .par_iter()
        .map(|(_, group)| assess_frame(group, params))
        .collect();
    Ok(per_frame.into_iter().flatten().collect())
}
