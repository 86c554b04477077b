//! Tracking accuracy (CLEAR MOT's MOTA) and risk-label confusion counts.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory_io::Detection;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

pub fn iou(a: &Detection, b: &Detection) -> f64 {
    let ix = (a.bb_left + a.bb_width).min(b.bb_left + b.bb_width) - a.bb_left.max(b.bb_left);
    let iy = (a.bb_top + a.bb_height).min(b.bb_top + b.bb_height) - a.bb_top.max(b.bb_top);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a.bb_width * a.bb_height + b.bb_width * b.bb_height - inter)
}

/// Minimum-cost assignment (Hungarian method with potentials).
///
/// `cost` is `rows x cols` with `rows <= cols`; returns the column chosen for each row.
fn assign_rows(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    debug_assert!(n <= m);
    // 1-based arrays; index 0 is the virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut min_to = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = f64::INFINITY;
            let mut next = 0;
            for col in 1..=m {
                if used[col] {
                    continue;
                }
                let reduced = cost[r - 1][col - 1] - u[r] - v[col];
                if reduced < min_to[col] {
                    min_to[col] = reduced;
                    way[col] = col0;
                }
                if min_to[col] < delta {
                    delta = min_to[col];
                    next = col;
                }
            }
            for col in 0..=m {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_to[col] -= delta;
                }
            }
            col0 = next;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut out = vec![0; n];
    for col in 1..=m {
        if owner[col] != 0 {
            out[owner[col] - 1] = col - 1;
        }
    }
    out
}

/// Pairs `(row, col)` maximising the number of matches with weight at or
/// above `min_weight`, then their total weight.
fn max_weight_matching(weights: &[Vec<f64>], min_weight: f64) -> Vec<(usize, usize)> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    // Forbidden pairs cost more than any full set of allowed ones.
    let forbidden = 2.0 * (rows.max(cols) as f64 + 1.0);
    let cost_of = |w: f64| if w >= min_weight { 1.0 - w } else { forbidden };

    let transpose = rows > cols;
    let cost: Vec<Vec<f64>> = if transpose {
        (0..cols).map(|c| (0..rows).map(|r| cost_of(weights[r][c])).collect()).collect()
    } else {
        weights.iter().map(|row| row.iter().map(|w| cost_of(*w)).collect()).collect()
    };

    assign_rows(&cost)
        .into_iter()
        .enumerate()
        .map(|(i, j)| if transpose { (j, i) } else { (i, j) })
        .filter(|&(r, c)| weights[r][c] >= min_weight)
        .collect()
}

/// Correspondences and error events of one frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameMatch {
    pub frame: u32,
    /// `(gt_id, hyp_id)`, sorted by ground-truth id.
    pub matches: Vec<(u32, u32)>,
    pub misses: Vec<u32>,
    pub false_positives: Vec<u32>,
    pub id_switches: Vec<u32>,
}

/// Matches one frame of hypotheses against ground truth.
///
/// `prior` maps each ground-truth id to the hypothesis id it was last
/// matched with. Those pairs are kept first when still overlapping by at
/// least `iou_threshold`; the rest are matched by optimal assignment. A
/// ground-truth object matched to a hypothesis other than its prior one
/// counts as an identity switch.
pub fn match_detections(
    gt: &[Detection],
    hyp: &[Detection],
    prior: &HashMap<u32, u32>,
    iou_threshold: f64,
) -> FrameMatch {
    let frame = gt.first().or(hyp.first()).map_or(0, |d| d.frame);
    let hyp_index: HashMap<u32, usize> = hyp.iter().enumerate().map(|(i, h)| (h.id, i)).collect();

    let mut gt_taken = vec![false; gt.len()];
    let mut hyp_taken = vec![false; hyp.len()];
    let mut matches = Vec::new();

    for (gi, g) in gt.iter().enumerate() {
        let Some(&hi) = prior.get(&g.id).and_then(|h| hyp_index.get(h)) else {
            continue;
        };
        if !hyp_taken[hi] && iou(g, &hyp[hi]) >= iou_threshold {
            gt_taken[gi] = true;
            hyp_taken[hi] = true;
            matches.push((g.id, hyp[hi].id));
        }
    }

    let free_gt: Vec<usize> = (0..gt.len()).filter(|i| !gt_taken[*i]).collect();
    let free_hyp: Vec<usize> = (0..hyp.len()).filter(|i| !hyp_taken[*i]).collect();
    let weights: Vec<Vec<f64>> = free_gt
        .iter()
        .map(|&gi| free_hyp.iter().map(|&hi| iou(&gt[gi], &hyp[hi])).collect())
        .collect();

    let mut id_switches = Vec::new();
    for (r, c) in max_weight_matching(&weights, iou_threshold) {
        let (gi, hi) = (free_gt[r], free_hyp[c]);
        gt_taken[gi] = true;
        hyp_taken[hi] = true;
        let (g, h) = (gt[gi].id, hyp[hi].id);
        if prior.get(&g).is_some_and(|prev| *prev != h) {
            id_switches.push(g);
        }
        matches.push((g, h));
    }

    matches.sort_unstable();
    id_switches.sort_unstable();
    let mut misses: Vec<u32> = (0..gt.len()).filter(|i| !gt_taken[*i]).map(|i| gt[i].id).collect();
    let mut false_positives: Vec<u32> = (0..hyp.len()).filter(|i| !hyp_taken[*i]).map(|i| hyp[i].id).collect();
    misses.sort_unstable();
    false_positives.sort_unstable();

    FrameMatch {
        frame,
        matches,
        misses,
        false_positives,
        id_switches,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotaResult {
    pub misses: usize,
    pub false_positives: usize,
    pub id_switches: usize,
    pub gt_count: usize,
    /// `1 - (misses + false positives + id switches) / gt_count`; may be negative.
    pub mota: f64,
}

fn group_by_frame(dets: &[Detection]) -> BTreeMap<u32, Vec<Detection>> {
    let mut out: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        out.entry(d.frame).or_default().push(d.clone());
    }
    out
}

pub fn compute_mota(gt: &[Detection], hyp: &[Detection], iou_threshold: f64) -> Result<MotaResult> {
    if gt.is_empty() {
        return Err(Error::UndefinedMetric(
            "MOTA needs at least one ground-truth object".into(),
        ));
    }
    let gt_frames = group_by_frame(gt);
    let hyp_frames = group_by_frame(hyp);
    let frames: BTreeSet<u32> = gt_frames.keys().chain(hyp_frames.keys()).copied().collect();

    let mut last_match: HashMap<u32, u32> = HashMap::new();
    let (mut misses, mut fps, mut switches) = (0, 0, 0);
    for frame in frames {
        let g = gt_frames.get(&frame).map(Vec::as_slice).unwrap_or(&[]);
        let h = hyp_frames.get(&frame).map(Vec::as_slice).unwrap_or(&[]);
        let m = match_detections(g, h, &last_match, iou_threshold);
        misses += m.misses.len();
        fps += m.false_positives.len();
        switches += m.id_switches.len();
        for (gid, hid) in m.matches {
            last_match.insert(gid, hid);
        }
    }

    let gt_count = gt.len();
    Ok(MotaResult {
        misses,
        false_positives: fps,
        id_switches: switches,
        gt_count,
        mota: 1.0 - (misses + fps + switches) as f64 / gt_count as f64,
    })
}

/// Identifies one pair of road users at one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairKey {
    pub frame: u32,
    pub id_a: u32,
    pub id_b: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    /// Tallies one comparison; `true` is the positive (critical / risky) class.
    pub fn record(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn ratio(num: usize, den: usize) -> Option<f64> {
        (den > 0).then(|| num as f64 / den as f64)
    }

    pub fn accuracy(&self) -> Option<f64> {
        Self::ratio(self.tp + self.tn, self.total())
    }

    pub fn tpr(&self) -> Option<f64> {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> Option<f64> {
        Self::ratio(self.fp, self.fp + self.tn)
    }

    pub fn fnr(&self) -> Option<f64> {
        Self::ratio(self.fn_, self.tp + self.fn_)
    }

    pub fn report(&self) -> ConfusionReport {
        ConfusionReport {
            counts: *self,
            accuracy: self.accuracy(),
            true_positive_rate: self.tpr(),
            false_positive_rate: self.fpr(),
            false_negative_rate: self.fnr(),
        }
    }
}

/// Counts plus derived rates; a rate is `None` when its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub true_positive_rate: Option<f64>,
    pub false_positive_rate: Option<f64>,
    pub false_negative_rate: Option<f64>,
}

/// Compares critical labels on the same set of pair-frames.
pub fn risk_confusion(
    truth: &BTreeMap<PairKey, bool>,
    predicted: &BTreeMap<PairKey, bool>,
) -> Result<ConfusionCounts> {
    let only_truth: Vec<&PairKey> = truth.keys().filter(|k| !predicted.contains_key(k)).collect();
    let only_pred: Vec<&PairKey> = predicted.keys().filter(|k| !truth.contains_key(k)).collect();
    if !only_truth.is_empty() || !only_pred.is_empty() {
        let fmt = |keys: &[&PairKey]| {
            keys.iter()
                .take(10)
                .map(|k| format!("({},{},{})", k.frame, k.id_a, k.id_b))
                .collect::<Vec<_>>()
                .join(" ")
        };
        return Err(Error::Alignment(format!(
            "{} keys missing from predictions [{}], {} keys missing from ground truth [{}]",
            only_truth.len(),
            fmt(&only_truth),
            only_pred.len(),
            fmt(&only_pred)
        )));
    }

    let mut counts = ConfusionCounts::default();
    for (key, t) in truth {
        counts.record(*t, predicted[key]);
    }
    Ok(counts)
}
