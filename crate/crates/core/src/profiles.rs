//! Risk profiles, pair statistics and the conflict heatmap.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::trajectory_io::Category;
use crate::ttc::TtcRecord;

fn critical_ttc(record: &TtcRecord, threshold: f64) -> Option<f64> {
    record.ttc.filter(|t| *t < threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroEntry {
    pub id: u32,
    pub category: Category,
    pub min_ttc: f64,
    pub partner_id: u32,
}

/// Road users whose smallest TTC at one frame is critical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroProfile {
    pub frame: u32,
    pub entries: Vec<MacroEntry>,
}

/// Builds the macroscopic profile of one frame; `records` should all share `frame`.
pub fn macro_profile(frame: u32, records: &[TtcRecord], threshold: f64) -> MacroProfile {
    // id -> (min ttc, partner, category)
    let mut best: BTreeMap<u32, (f64, u32, Category)> = BTreeMap::new();
    let mut offer = |id: u32, category: Category, partner: u32, ttc: f64| {
        let slot = best.entry(id).or_insert((ttc, partner, category));
        if ttc < slot.0 || (ttc == slot.0 && partner < slot.1) {
            *slot = (ttc, partner, category);
        }
    };
    for r in records.iter().filter(|r| r.frame() == frame) {
        if let Some(ttc) = r.ttc {
            let g = &r.geometry;
            offer(g.id_a, r.category_a, g.id_b, ttc);
            offer(g.id_b, r.category_b, g.id_a, ttc);
        }
    }

    MacroProfile {
        frame,
        entries: best
            .into_iter()
            .filter(|(_, (ttc, _, _))| *ttc < threshold)
            .map(|(id, (min_ttc, partner_id, category))| MacroEntry {
                id,
                category,
                min_ttc,
                partner_id,
            })
            .collect(),
    }
}

/// One macroscopic profile per frame that has any records, in frame order.
pub fn macro_profiles(records: &[TtcRecord], threshold: f64) -> Vec<MacroProfile> {
    let mut frames: BTreeMap<u32, Vec<TtcRecord>> = BTreeMap::new();
    for r in records {
        frames.entry(r.frame()).or_default().push(*r);
    }
    frames
        .into_iter()
        .map(|(frame, recs)| macro_profile(frame, &recs, threshold))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroNeighbor {
    pub partner_id: u32,
    pub partner_category: Category,
    pub ttc: f64,
    pub distance: f64,
}

/// Critical neighbours of one road user at one frame, most urgent first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroProfile {
    pub id: u32,
    pub frame: u32,
    pub neighbors: Vec<MicroNeighbor>,
}

pub fn micro_profile(records: &[TtcRecord], id: u32, frame: u32, threshold: f64) -> MicroProfile {
    let mut neighbors: Vec<MicroNeighbor> = records
        .iter()
        .filter(|r| r.frame() == frame)
        .filter_map(|r| {
            let partner_id = r.partner_of(id)?;
            let ttc = critical_ttc(r, threshold)?;
            let partner_category = if r.geometry.id_a == id { r.category_b } else { r.category_a };
            Some(MicroNeighbor {
                partner_id,
                partner_category,
                ttc,
                distance: r.geometry.distance,
            })
        })
        .collect();
    neighbors.sort_by(|a, b| a.ttc.total_cmp(&b.ttc).then(a.partner_id.cmp(&b.partner_id)));
    MicroProfile { id, frame, neighbors }
}

/// Accumulated conflict severity over a regular grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub origin: Vec2,
    pub cell_size: f64,
    /// `(i, j)` counts cells from the origin along x and y.
    pub cells: BTreeMap<(i64, i64), f64>,
}

impl HeatmapGrid {
    pub fn total(&self) -> f64 {
        self.cells.values().sum()
    }

    pub fn max_cell(&self) -> Option<((i64, i64), f64)> {
        self.cells
            .iter()
            .filter(|(_, v)| **v > 0.0)
            .fold(None, |acc: Option<((i64, i64), f64)>, (k, v)| match acc {
                Some((_, best)) if best >= *v => acc,
                _ => Some((*k, *v)),
            })
    }

    /// World-frame centre of cell `(i, j)`.
    pub fn cell_center(&self, key: (i64, i64)) -> Vec2 {
        Vec2::new(
            self.origin.x + (key.0 as f64 + 0.5) * self.cell_size,
            self.origin.y + (key.1 as f64 + 0.5) * self.cell_size,
        )
    }

    /// Adds `weight` at `point`, which must not lie below/left of the origin.
    pub fn add(&mut self, point: Vec2, weight: f64) {
        let key = (
            ((point.x - self.origin.x) / self.cell_size).floor() as i64,
            ((point.y - self.origin.y) / self.cell_size).floor() as i64,
        );
        *self.cells.entry(key).or_insert(0.0) += weight;
    }
}

/// Sums `threshold - ttc` for each critical record at the midpoint of the pair.
///
/// The grid origin is the componentwise minimum of those midpoints.
pub fn accumulate_heatmap(records: &[TtcRecord], threshold: f64, cell_size: f64) -> Result<HeatmapGrid> {
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "heatmap cell size must be positive, got {cell_size}"
        )));
    }
    let hits: Vec<(Vec2, f64)> = records
        .iter()
        .filter_map(|r| {
            let ttc = critical_ttc(r, threshold)?;
            Some((r.geometry.position_a.midpoint(r.geometry.position_b), threshold - ttc))
        })
        .collect();

    let origin = hits
        .iter()
        .map(|(p, _)| *p)
        .reduce(|a, b| Vec2::new(a.x.min(b.x), a.y.min(b.y)))
        .unwrap_or(Vec2::ZERO);

    let mut grid = HeatmapGrid {
        origin,
        cell_size,
        cells: BTreeMap::new(),
    };
    for (p, w) in hits {
        grid.add(p, w);
    }
    Ok(grid)
}

const SVG_CELL_PX: f64 = 10.0;

/// Draws each non-empty cell as a red square whose opacity is its share of the maximum.
pub fn render_heatmap_svg(grid: &HeatmapGrid) -> String {
    let max = grid.cells.values().copied().fold(0.0, f64::max);
    let (max_i, max_j) = grid
        .cells
        .keys()
        .fold((0, 0), |(mi, mj), (i, j)| (mi.max(*i), mj.max(*j)));
    let width = (max_i + 1) as f64 * SVG_CELL_PX;
    let height = (max_j + 1) as f64 * SVG_CELL_PX;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#
    );
    if max > 0.0 {
        for ((i, j), value) in &grid.cells {
            if *value <= 0.0 {
                continue;
            }
            let _ = writeln!(
                svg,
                r#"<rect class="cell" x="{}" y="{}" width="{SVG_CELL_PX}" height="{SVG_CELL_PX}" fill="red" fill-opacity="{:.4}"/>"#,
                *i as f64 * SVG_CELL_PX,
                *j as f64 * SVG_CELL_PX,
                value / max
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Unordered pair of categories; `first <= second`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CategoryPair {
    pub first: Category,
    pub second: Category,
}

impl CategoryPair {
    pub fn new(a: Category, b: Category) -> Self {
        Self {
            first: a.min(b),
            second: a.max(b),
        }
    }

    pub fn is_car_car(&self) -> bool {
        self.first == Category::Car && self.second == Category::Car
    }

    pub fn is_vehicle_vehicle(&self) -> bool {
        self.first.is_vehicle() && self.second.is_vehicle()
    }
}

impl fmt::Display for CategoryPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.first, self.second)
    }
}

impl Serialize for CategoryPair {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PairStats {
    pub total: usize,
    pub counts: BTreeMap<CategoryPair, usize>,
    /// Percentage of all critical records per pair.
    pub percent_all: BTreeMap<CategoryPair, f64>,
    /// Percentage per pair once car-car records are removed.
    pub percent_excluding_car_car: BTreeMap<CategoryPair, f64>,
    /// Share of critical records where both users are vehicles, percent.
    pub vehicle_vehicle_percent: Option<f64>,
}

fn percentages<'a>(counts: impl Iterator<Item = (&'a CategoryPair, &'a usize)>) -> BTreeMap<CategoryPair, f64> {
    let counts: Vec<_> = counts.collect();
    let total: usize = counts.iter().map(|(_, n)| **n).sum();
    if total == 0 {
        return BTreeMap::new();
    }
    counts
        .into_iter()
        .map(|(k, n)| (*k, 100.0 * *n as f64 / total as f64))
        .collect()
}

pub fn pair_category_stats(records: &[TtcRecord], threshold: f64) -> PairStats {
    let mut counts: BTreeMap<CategoryPair, usize> = BTreeMap::new();
    for r in records.iter().filter(|r| critical_ttc(r, threshold).is_some()) {
        *counts.entry(CategoryPair::new(r.category_a, r.category_b)).or_insert(0) += 1;
    }
    let total: usize = counts.values().sum();
    let vehicle: usize = counts
        .iter()
        .filter(|(k, _)| k.is_vehicle_vehicle())
        .map(|(_, n)| *n)
        .sum();

    PairStats {
        total,
        percent_all: percentages(counts.iter()),
        percent_excluding_car_car: percentages(counts.iter().filter(|(k, _)| !k.is_car_car())),
        vehicle_vehicle_percent: (total > 0).then(|| 100.0 * vehicle as f64 / total as f64),
        counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ttc::{PairGeometry, TtcMode};
    use proptest::prelude::*;

    fn rec(frame: u32, a: u32, b: u32, ttc: Option<f64>) -> TtcRecord {
        rec_full(frame, a, b, ttc, (Category::Car, Category::Car), Vec2::ZERO, Vec2::new(1.0, 0.0))
    }

    fn rec_full(
        frame: u32,
        a: u32,
        b: u32,
        ttc: Option<f64>,
        cats: (Category, Category),
        pa: Vec2,
        pb: Vec2,
    ) -> TtcRecord {
        TtcRecord {
            geometry: PairGeometry {
                id_a: a,
                id_b: b,
                frame,
                position_a: pa,
                position_b: pb,
                distance: pa.distance(pb),
                rel_velocity: Vec2::ZERO,
                rel_speed: 0.0,
                closing_speed: 0.0,
                alpha: 0.0,
                theta: 0.0,
            },
            category_a: cats.0,
            category_b: cats.1,
            ttc,
            mode: TtcMode::Projected,
            critical: ttc.is_some_and(|t| t < 2.5),
        }
    }

    #[test]
    fn macro_takes_the_minimum() {
        let recs = [rec(1, 7, 8, Some(1.8)), rec(1, 7, 9, Some(4.0))];
        let p = macro_profile(1, &recs, 2.5);
        let seven = p.entries.iter().find(|e| e.id == 7).unwrap();
        assert_eq!(seven.min_ttc, 1.8);
        assert_eq!(seven.partner_id, 8);
        assert_eq!(p.entries.iter().map(|e| e.id).collect::<Vec<_>>(), vec![7, 8]);
    }

    #[test]
    fn macro_empty_when_nothing_critical() {
        let recs = [rec(1, 1, 2, Some(2.5)), rec(1, 1, 3, Some(9.0)), rec(1, 2, 3, None)];
        assert!(macro_profile(1, &recs, 2.5).entries.is_empty());
    }

    #[test]
    fn macro_ties_prefer_smaller_partner() {
        let recs = [rec(1, 5, 9, Some(1.0)), rec(1, 3, 5, Some(1.0))];
        let p = macro_profile(1, &recs, 2.5);
        assert_eq!(p.entries.iter().find(|e| e.id == 5).unwrap().partner_id, 3);
    }

    #[test]
    fn micro_lists_critical_neighbours_in_ttc_order() {
        let recs = [rec(1, 1, 3, Some(1.8)), rec(1, 1, 9, Some(4.0))];
        let p = micro_profile(&recs, 1, 1, 2.5);
        assert_eq!(p.neighbors.len(), 1);
        assert_eq!((p.neighbors[0].partner_id, p.neighbors[0].ttc), (3, 1.8));

        assert!(micro_profile(&[], 1, 1, 2.5).neighbors.is_empty());

        let recs = [rec(1, 1, 2, Some(2.4)), rec(1, 3, 1, Some(0.9)), rec(1, 1, 4, Some(1.5))];
        let p = micro_profile(&recs, 1, 1, 2.5);
        let order: Vec<f64> = p.neighbors.iter().map(|n| n.ttc).collect();
        assert_eq!(order, vec![0.9, 1.5, 2.4]);
        assert_eq!(p.neighbors[0].partner_id, 3);
    }

    #[test]
    fn heatmap_single_record() {
        let r = rec_full(1, 1, 2, Some(1.5), (Category::Car, Category::Car), Vec2::new(10.0, 10.0), Vec2::new(12.0, 10.0));
        let grid = accumulate_heatmap(&[r], 2.5, 1.0).unwrap();
        assert_eq!(grid.origin, Vec2::new(11.0, 10.0));
        assert_eq!(grid.cells.len(), 1);
        assert_eq!(grid.cells[&(0, 0)], 1.0);
        assert_eq!(grid.cell_center((0, 0)), Vec2::new(11.5, 10.5));

        let twice = accumulate_heatmap(&[r, r], 2.5, 1.0).unwrap();
        assert_eq!(twice.cells[&(0, 0)], 2.0);
    }

    #[test]
    fn heatmap_without_critical_records_is_empty() {
        let grid = accumulate_heatmap(&[rec(1, 1, 2, Some(3.0)), rec(1, 1, 3, None)], 2.5, 1.0).unwrap();
        assert!(grid.cells.is_empty());
        assert_eq!(grid.total(), 0.0);
        assert!(grid.max_cell().is_none());
        assert!(accumulate_heatmap(&[], 2.5, 0.0).is_err());
    }

    #[test]
    fn svg_opacity_tracks_intensity() {
        let mut grid = HeatmapGrid {
            origin: Vec2::ZERO,
            cell_size: 1.0,
            cells: BTreeMap::new(),
        };
        assert_eq!(render_heatmap_svg(&grid).matches("class=\"cell\"").count(), 0);

        grid.cells.insert((0, 0), 1.0);
        let svg = render_heatmap_svg(&grid);
        assert_eq!(svg.matches("class=\"cell\"").count(), 1);
        assert!(svg.contains("fill-opacity=\"1.0000\""));

        grid.cells.insert((2, 1), 0.5);
        let svg = render_heatmap_svg(&grid);
        assert_eq!(svg.matches("class=\"cell\"").count(), 2);
        assert!(svg.contains("fill-opacity=\"0.5000\""));
    }

    #[test]
    fn category_statistics() {
        let mut recs = Vec::new();
        let mut push = |n: usize, a: Category, b: Category| {
            for _ in 0..n {
                recs.push(rec_full(1, 1, 2, Some(1.0), (a, b), Vec2::ZERO, Vec2::ZERO));
            }
        };
        push(6, Category::Car, Category::Car);
        push(2, Category::Pedestrian, Category::Car);
        push(2, Category::Truck, Category::Car);
        let stats = pair_category_stats(&recs, 2.5);
        let car_car = CategoryPair::new(Category::Car, Category::Car);
        let ped_car = CategoryPair::new(Category::Car, Category::Pedestrian);
        let truck_car = CategoryPair::new(Category::Car, Category::Truck);
        assert_eq!(stats.total, 10);
        assert_eq!(stats.percent_all[&car_car], 60.0);
        assert_eq!(stats.percent_excluding_car_car[&ped_car], 50.0);
        assert_eq!(stats.percent_excluding_car_car[&truck_car], 50.0);
        assert!(!stats.percent_excluding_car_car.contains_key(&car_car));
        assert_eq!(stats.vehicle_vehicle_percent, Some(80.0));
        assert_eq!(ped_car.to_string(), "pedestrian-car");

        let empty = pair_category_stats(&[], 2.5);
        assert_eq!(empty.total, 0);
        assert!(empty.counts.is_empty() && empty.percent_all.is_empty());
        assert_eq!(empty.vehicle_vehicle_percent, None);
    }

    fn arb_records() -> impl Strategy<Value = Vec<TtcRecord>> {
        let cats = prop::sample::select(vec![
            Category::Car,
            Category::Pedestrian,
            Category::Bus,
            Category::Bicycle,
            Category::Truck,
        ]);
        prop::collection::vec(
            (0u32..8, 0u32..8, prop::option::of(0.0f64..6.0), cats.clone(), cats, -50.0f64..50.0, -50.0f64..50.0),
            0..60,
        )
        .prop_map(|rows| {
            let mut seen = std::collections::HashSet::new();
            rows.into_iter()
                .filter(|r| r.0 != r.1 && seen.insert((r.0.min(r.1), r.0.max(r.1))))
                .map(|(a, b, ttc, ca, cb, x, y)| {
                    rec_full(1, a.min(b), a.max(b), ttc, (ca, cb), Vec2::new(x, y), Vec2::new(y, x))
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn macro_matches_brute_force(recs in arb_records()) {
            let p = macro_profile(1, &recs, 2.5);
            let mut ids: Vec<u32> = recs.iter().flat_map(|r| [r.geometry.id_a, r.geometry.id_b]).collect();
            ids.sort_unstable();
            ids.dedup();
            let expected: Vec<(u32, f64)> = ids
                .into_iter()
                .filter_map(|id| {
                    let min = recs
                        .iter()
                        .filter(|r| r.partner_of(id).is_some())
                        .filter_map(|r| r.ttc)
                        .fold(f64::INFINITY, f64::min);
                    (min < 2.5).then_some((id, min))
                })
                .collect();
            let got: Vec<(u32, f64)> = p.entries.iter().map(|e| (e.id, e.min_ttc)).collect();
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn heatmap_total_is_sum_of_severities(recs in arb_records(), cell in 0.5f64..10.0) {
            let grid = accumulate_heatmap(&recs, 2.5, cell).unwrap();
            let expected: f64 = recs.iter().filter_map(|r| r.ttc.filter(|t| *t < 2.5)).map(|t| 2.5 - t).sum();
            prop_assert!((grid.total() - expected).abs() < 1e-9);
            prop_assert!(grid.cells.values().all(|v| *v >= 0.0));
            prop_assert!(grid.cells.keys().all(|(i, j)| *i >= 0 && *j >= 0));
        }

        #[test]
        fn heatmap_is_monotone_under_accumulation(recs in arb_records(), extra in arb_records()) {
            let mut all = recs.clone();
            all.extend(extra);
            let before = accumulate_heatmap(&recs, 2.5, 1.0).unwrap();
            let mut after = before.clone();
            for r in &all[recs.len()..] {
                if let Some(t) = r.ttc.filter(|t| *t < 2.5) {
                    let mid = r.geometry.position_a.midpoint(r.geometry.position_b);
                    if mid.x >= after.origin.x && mid.y >= after.origin.y {
                        after.add(mid, 2.5 - t);
                    }
                }
            }
            for (k, v) in &before.cells {
                prop_assert!(after.cells[k] >= *v);
            }
        }

        #[test]
        fn stats_count_every_critical_record(recs in arb_records()) {
            let stats = pair_category_stats(&recs, 2.5);
            let critical = recs.iter().filter(|r| r.ttc.is_some_and(|t| t < 2.5)).count();
            prop_assert_eq!(stats.total, critical);
            prop_assert_eq!(stats.counts.values().sum::<usize>(), critical);
            for view in [&stats.percent_all, &stats.percent_excluding_car_car] {
                if !view.is_empty() {
                    prop_assert!((view.values().sum::<f64>() - 100.0).abs() < 0.1);
                }
            }
        }
    }
}
