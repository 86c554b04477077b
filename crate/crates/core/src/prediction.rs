//! Next-step risk prediction for cars.
//!
//! Each sample describes a car over the five frames before the one being
//! labelled. For every step it carries the car's own kinematics and status
//! plus those of its "dangerous neighbour" (the partner with the smallest
//! TTC at that step). A random forest of Gini-split decision trees is
//! trained on these vectors; its Gini importances say which history
//! features drive the prediction.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::KinematicState;
use crate::error::{Error, Result};
use crate::trajectory_io::Category;
use crate::ttc::TtcRecord;

pub const HISTORY_STEPS: usize = 5;
pub const FEATURES_PER_STEP: usize = 10;
pub const FEATURE_COUNT: usize = HISTORY_STEPS * FEATURES_PER_STEP;

pub const SENTINEL_TTC: f64 = 99.0;
pub const SENTINEL_DISTANCE: f64 = 999.0;

const SLOT_NAMES: [&str; FEATURES_PER_STEP] = [
    "own_speed",
    "own_x",
    "own_y",
    "own_critical",
    "danger_speed",
    "danger_x",
    "danger_y",
    "danger_critical",
    "pair_ttc",
    "pair_distance",
];

/// Index of `slot` (see [`feature_name`]) at `step` frames before the labelled frame.
pub fn feature_index(step: usize, slot: usize) -> usize {
    debug_assert!((1..=HISTORY_STEPS).contains(&step) && slot < FEATURES_PER_STEP);
    (step - 1) * FEATURES_PER_STEP + slot
}

/// Human-readable name such as `own_speed_t-1`.
pub fn feature_name(index: usize) -> String {
    if index >= FEATURE_COUNT {
        return format!("feature_{index}");
    }
    format!(
        "{}_t-{}",
        SLOT_NAMES[index % FEATURES_PER_STEP],
        index / FEATURES_PER_STEP + 1
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskLabel {
    Safe,
    Risky,
}

impl RiskLabel {
    fn index(self) -> usize {
        match self {
            RiskLabel::Safe => 0,
            RiskLabel::Risky => 1,
        }
    }
}

impl fmt::Display for RiskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RiskLabel::Safe => "safe",
            RiskLabel::Risky => "risky",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub id: u32,
    pub frame: u32,
    pub values: Vec<f64>,
    pub label: Option<RiskLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Link {
    partner: u32,
    ttc: f64,
    distance: f64,
}

/// Per-frame lookup of kinematics and present-TTC links, built once per dataset.
#[derive(Debug, Clone, Default)]
pub struct RiskHistory {
    states: HashMap<(u32, u32), KinematicState>,
    links: HashMap<(u32, u32), Vec<Link>>,
}

impl RiskHistory {
    pub fn new(states: &[KinematicState], records: &[TtcRecord]) -> Self {
        let states = states.iter().map(|s| ((s.frame, s.id), *s)).collect();
        let mut links: HashMap<(u32, u32), Vec<Link>> = HashMap::new();
        for r in records {
            let Some(ttc) = r.ttc else { continue };
            let g = &r.geometry;
            for (own, partner) in [(g.id_a, g.id_b), (g.id_b, g.id_a)] {
                links.entry((r.frame(), own)).or_default().push(Link {
                    partner,
                    ttc,
                    distance: g.distance,
                });
            }
        }
        Self { states, links }
    }

    pub fn state(&self, frame: u32, id: u32) -> Option<&KinematicState> {
        self.states.get(&(frame, id))
    }

    fn dangerous_neighbor(&self, frame: u32, id: u32) -> Option<Link> {
        self.links.get(&(frame, id))?.iter().copied().min_by(|a, b| {
            a.ttc
                .total_cmp(&b.ttc)
                .then(a.partner.cmp(&b.partner))
        })
    }

    /// Smallest present TTC of `id` at `frame`.
    pub fn min_ttc(&self, frame: u32, id: u32) -> Option<f64> {
        self.dangerous_neighbor(frame, id).map(|l| l.ttc)
    }

    /// Every `(frame, id)` pair with a state, sorted.
    pub fn keys(&self) -> Vec<(u32, u32)> {
        let mut keys: Vec<_> = self.states.keys().copied().collect();
        keys.sort_unstable();
        keys
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Builds the feature vector labelling `id` at `frame`.
///
/// Returns `Ok(None)` unless the car has states at `frame` and at each of
/// the five frames before it. Only cars may be studied.
pub fn extract_features(
    history: &RiskHistory,
    id: u32,
    frame: u32,
    threshold: f64,
) -> Result<Option<FeatureVector>> {
    let Some(current) = history.state(frame, id) else {
        return Ok(None);
    };
    if current.category != Category::Car {
        return Err(Error::NotACar {
            id,
            category: current.category.to_string(),
        });
    }

    let mut values = vec![0.0; FEATURE_COUNT];
    for step in 1..=HISTORY_STEPS {
        let Some(at) = frame.checked_sub(step as u32) else {
            return Ok(None);
        };
        let Some(own) = history.state(at, id) else {
            return Ok(None);
        };
        let own_critical = history.min_ttc(at, id).is_some_and(|t| t < threshold);

        let slots = match history.dangerous_neighbor(at, id) {
            Some(link) => {
                let neighbor = history.state(at, link.partner);
                let (speed, pos) = neighbor
                    .map(|n| (n.speed, n.position))
                    .unwrap_or((0.0, own.position));
                let neighbor_critical = history.min_ttc(at, link.partner).is_some_and(|t| t < threshold);
                [
                    speed,
                    pos.x,
                    pos.y,
                    flag(neighbor_critical),
                    link.ttc.min(SENTINEL_TTC),
                    link.distance.min(SENTINEL_DISTANCE),
                ]
            }
            None => [0.0, own.position.x, own.position.y, 0.0, SENTINEL_TTC, SENTINEL_DISTANCE],
        };

        let base = feature_index(step, 0);
        values[base] = own.speed;
        values[base + 1] = own.position.x;
        values[base + 2] = own.position.y;
        values[base + 3] = flag(own_critical);
        values[base + 4..base + FEATURES_PER_STEP].copy_from_slice(&slots);
    }

    let risky = history.min_ttc(frame, id).is_some_and(|t| t < threshold);
    Ok(Some(FeatureVector {
        id,
        frame,
        values,
        label: Some(if risky { RiskLabel::Risky } else { RiskLabel::Safe }),
    }))
}

/// Feature vectors for every car and frame with a full history, ordered by `(frame, id)`.
pub fn extract_all(history: &RiskHistory, threshold: f64) -> Vec<FeatureVector> {
    history
        .keys()
        .into_iter()
        .filter(|(frame, id)| history.state(*frame, *id).is_some_and(|s| s.category == Category::Car))
        .filter_map(|(frame, id)| extract_features(history, id, frame, threshold).ok().flatten())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `ceil(sqrt(n_features))`.
    pub max_features: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 5,
            max_features: None,
        }
    }
}

impl ForestParams {
    pub fn features_per_split(&self, n_features: usize) -> usize {
        self.max_features
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        /// Training samples that reached this node.
        samples: usize,
        /// Gini impurity decrease achieved by the split.
        impurity_decrease: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        /// `[safe, risky]` training counts.
        counts: [usize; 2],
    },
}

impl Node {
    fn vote(&self, x: &[f64]) -> RiskLabel {
        let mut node = self;
        loop {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => node = if x[*feature] <= *threshold { left } else { right },
                Node::Leaf { counts } => {
                    return if counts[1] >= counts[0] {
                        RiskLabel::Risky
                    } else {
                        RiskLabel::Safe
                    }
                }
            }
        }
    }

    fn visit_splits(&self, f: &mut impl FnMut(usize, f64, usize, f64)) {
        if let Node::Split {
            feature,
            threshold,
            samples,
            impurity_decrease,
            left,
            right,
        } = self
        {
            f(*feature, *threshold, *samples, *impurity_decrease);
            left.visit_splits(f);
            right.visit_splits(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub n_samples: usize,
    pub root: Node,
}

impl DecisionTree {
    pub fn predict(&self, x: &[f64]) -> RiskLabel {
        self.root.vote(x)
    }

    /// Sample-weighted impurity decrease summed per feature, not normalised.
    fn raw_importances(&self, n_features: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_features];
        let total = self.n_samples.max(1) as f64;
        self.root.visit_splits(&mut |feature, _, samples, decrease| {
            out[feature] += samples as f64 / total * decrease;
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub params: ForestParams,
    pub seed: u64,
    pub trees: Vec<DecisionTree>,
    pub importances: Vec<f64>,
}

impl ForestModel {
    pub fn predict_values(&self, x: &[f64]) -> Result<RiskLabel> {
        if x.len() != self.n_features {
            return Err(Error::Shape {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let risky = self
            .trees
            .iter()
            .filter(|t| t.predict(x) == RiskLabel::Risky)
            .count();
        // Ties go to risky.
        Ok(if 2 * risky >= self.trees.len() {
            RiskLabel::Risky
        } else {
            RiskLabel::Safe
        })
    }
}

pub fn predict(model: &ForestModel, fv: &FeatureVector) -> Result<RiskLabel> {
    model.predict_values(&fv.values)
}

fn gini(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p0 = counts[0] as f64 / n;
    let p1 = counts[1] as f64 / n;
    1.0 - p0 * p0 - p1 * p1
}

struct TreeBuilder<'a> {
    columns: &'a [Vec<f64>],
    labels: &'a [usize],
    params: ForestParams,
    per_split: usize,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

impl TreeBuilder<'_> {
    fn counts(&self, idx: &[usize]) -> [usize; 2] {
        let mut c = [0, 0];
        for &i in idx {
            c[self.labels[i]] += 1;
        }
        c
    }

    fn build(&self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> Node {
        let counts = self.counts(&idx);
        let n = idx.len();
        if depth >= self.params.max_depth || counts[0] == 0 || counts[1] == 0 || n < 2 * self.params.min_leaf {
            return Node::Leaf { counts };
        }

        let mut features: Vec<usize> = index::sample(rng, self.columns.len(), self.per_split).into_vec();
        features.sort_unstable();

        let parent = gini(counts);
        let mut best: Option<SplitChoice> = None;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
        for &feature in &features {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.columns[feature][i], self.labels[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

            let mut left = [0usize, 0];
            for p in 0..n - 1 {
                left[pairs[p].1] += 1;
                let n_left = p + 1;
                let (lo, hi) = (pairs[p].0, pairs[p + 1].0);
                if lo == hi || n_left < self.params.min_leaf || n - n_left < self.params.min_leaf {
                    continue;
                }
                let right = [counts[0] - left[0], counts[1] - left[1]];
                let decrease = parent
                    - (n_left as f64 / n as f64) * gini(left)
                    - ((n - n_left) as f64 / n as f64) * gini(right);
                if decrease > 0.0 && best.as_ref().is_none_or(|b| decrease > b.decrease) {
                    let mut threshold = 0.5 * (lo + hi);
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(SplitChoice {
                        feature,
                        threshold,
                        decrease,
                    });
                }
            }
        }

        let Some(choice) = best else {
            return Node::Leaf { counts };
        };
        let column = &self.columns[choice.feature];
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| column[i] <= choice.threshold);
        Node::Split {
            feature: choice.feature,
            threshold: choice.threshold,
            samples: n,
            impurity_decrease: choice.decrease,
            left: Box::new(self.build(left, depth + 1, rng)),
            right: Box::new(self.build(right, depth + 1, rng)),
        }
    }
}

fn canonical_order(a: &FeatureVector, b: &FeatureVector) -> Ordering {
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
        .then(a.values.len().cmp(&b.values.len()))
        .then(a.label.cmp(&b.label))
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// Trains a forest on labelled samples.
///
/// Samples are put in a canonical order first, so the bootstrap draws (and
/// the model) do not depend on the order they were passed in. Tree `k` draws
/// from its own ChaCha stream `k` of `seed`, which keeps parallel training
/// deterministic.
pub fn train_forest(samples: &[FeatureVector], params: ForestParams, seed: u64) -> Result<ForestModel> {
    if params.n_trees == 0 || params.max_depth == 0 || params.min_leaf == 0 {
        return Err(Error::InvalidParameter(
            "tree count, max depth and min leaf size must all be at least 1".into(),
        ));
    }
    let Some(first) = samples.first() else {
        return Err(Error::Training("no training samples".into()));
    };
    let n_features = first.values.len();
    if n_features == 0 {
        return Err(Error::Training("samples have no features".into()));
    }
    if let Some(bad) = samples.iter().find(|s| s.values.len() != n_features) {
        return Err(Error::Shape {
            expected: n_features,
            got: bad.values.len(),
        });
    }
    if samples.iter().any(|s| s.label.is_none()) {
        return Err(Error::Training("every training sample needs a label".into()));
    }

    let mut sorted: Vec<&FeatureVector> = samples.iter().collect();
    sorted.sort_by(|a, b| canonical_order(a, b));
    let labels: Vec<usize> = sorted.iter().map(|s| s.label.map_or(0, RiskLabel::index)).collect();
    let risky = labels.iter().filter(|l| **l == 1).count();
    if risky == 0 || risky == labels.len() {
        return Err(Error::Training(
            "training data must contain both safe and risky samples".into(),
        ));
    }
    let columns: Vec<Vec<f64>> = (0..n_features)
        .map(|f| sorted.iter().map(|s| s.values[f]).collect())
        .collect();

    let builder = TreeBuilder {
        columns: &columns,
        labels: &labels,
        params,
        per_split: params.features_per_split(n_features),
    };
    let n = labels.len();
    let trees: Vec<DecisionTree> = (0..params.n_trees)
        .into_par_iter()
        .map(|k| {
            let mut rng = tree_rng(seed, k);
            let bootstrap: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            DecisionTree {
                n_samples: n,
                root: builder.build(bootstrap, 0, &mut rng),
            }
        })
        .collect();

    let mut importances = vec![0.0; n_features];
    for tree in &trees {
        for (acc, v) in importances.iter_mut().zip(tree.raw_importances(n_features)) {
            *acc += v;
        }
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        // Averaging over trees cancels in the normalisation.
        importances.iter_mut().for_each(|v| *v /= total);
    }

    Ok(ForestModel {
        n_features,
        params,
        seed,
        trees,
        importances,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub index: usize,
    pub name: String,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub importances: Vec<FeatureImportance>,
    /// Highest-importance features, best first.
    pub top: Vec<FeatureImportance>,
}

pub fn feature_importance(model: &ForestModel, top_k: usize) -> ImportanceReport {
    let importances: Vec<FeatureImportance> = model
        .importances
        .iter()
        .enumerate()
        .map(|(index, importance)| FeatureImportance {
            index,
            name: feature_name(index),
            importance: *importance,
        })
        .collect();
    let mut top = importances.clone();
    top.sort_by(|a, b| b.importance.total_cmp(&a.importance).then(a.index.cmp(&b.index)));
    top.truncate(top_k);
    ImportanceReport { importances, top }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    pub index: usize,
    pub name: String,
    pub splits: usize,
    pub median_threshold: f64,
}

/// Split thresholds learned per feature. These are scene-specific and are
/// only reported on request.
pub fn threshold_summary(model: &ForestModel) -> Vec<ThresholdSummary> {
    let mut per_feature: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for tree in &model.trees {
        tree.root.visit_splits(&mut |feature, threshold, _, _| {
            per_feature.entry(feature).or_default().push(threshold);
        });
    }
    per_feature
        .into_iter()
        .map(|(index, mut ts)| {
            ts.sort_by(f64::total_cmp);
            let mid = ts.len() / 2;
            let median_threshold = if ts.len() % 2 == 1 { ts[mid] } else { 0.5 * (ts[mid - 1] + ts[mid]) };
            ThresholdSummary {
                index,
                name: feature_name(index),
                splits: ts.len(),
                median_threshold,
            }
        })
        .collect()
}

/// Seeded shuffle, then the first `round(fraction * n)` samples go to the test side.
pub fn holdout_split(
    samples: &[FeatureVector],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<FeatureVector>, Vec<FeatureVector>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidParameter(format!(
            "holdout fraction must be in [0, 1), got {fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (fraction * samples.len() as f64).round() as usize;
    let test = order[..n_test].iter().map(|&i| samples[i].clone()).collect();
    let train = order[n_test..].iter().map(|&i| samples[i].clone()).collect();
    Ok((train, test))
}
