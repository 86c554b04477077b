//! Synthetic constant-velocity scenarios and closed-form/numeric TTC oracles.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::trajectory_io::{Category, CategoryMap, Detection};
use crate::ttc::SPEED_EPSILON;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: u32,
    pub category: Category,
    /// Position in metres at `start_frame`.
    pub start: Vec2,
    /// Metres per second.
    pub velocity: Vec2,
    pub start_frame: u32,
    /// Inclusive.
    pub end_frame: u32,
}

impl AgentSpec {
    /// Position at absolute time `t` seconds, where frame `f` is at `f / fps`.
    pub fn position_at(&self, t: f64, fps: f64) -> Vec2 {
        self.start + self.velocity * (t - f64::from(self.start_frame) / fps)
    }

    pub fn position_at_frame(&self, frame: u32, fps: f64) -> Vec2 {
        // Elapsed frames first keeps whole-frame steps free of rounding from `frame / fps`.
        self.start + self.velocity * (f64::from(frame - self.start_frame) / fps)
    }

    pub fn is_active(&self, frame: u32) -> bool {
        (self.start_frame..=self.end_frame).contains(&frame)
    }
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub fps: f64,
    /// Metres per pixel.
    pub scale: f64,
    pub agents: Vec<AgentSpec>,
    /// Standard deviation of Gaussian jitter on box centres, pixels.
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Scenario(format!("fps must be positive, got {}", self.fps)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Scenario(format!("scale must be positive, got {}", self.scale)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Scenario(format!("noise must be >= 0, got {}", self.noise)));
        }
        let mut by_id: BTreeMap<u32, Vec<&AgentSpec>> = BTreeMap::new();
        for a in &self.agents {
            if a.start_frame == 0 || a.end_frame <= a.start_frame {
                return Err(Error::Scenario(format!(
                    "agent {} needs 1 <= start_frame < end_frame, got {}..{}",
                    a.id, a.start_frame, a.end_frame
                )));
            }
            if a.category == Category::Ignored {
                return Err(Error::Scenario(format!("agent {} has the ignored category", a.id)));
            }
            by_id.entry(a.id).or_default().push(a);
        }
        for (id, spans) in by_id {
            for (i, a) in spans.iter().enumerate() {
                for b in &spans[i + 1..] {
                    if a.start_frame <= b.end_frame && b.start_frame <= a.end_frame {
                        return Err(Error::Scenario(format!("agent id {id} is used twice in overlapping frames")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Footprint `(length, width)` in metres for boxes of each category.
pub fn footprint(category: Category) -> (f64, f64) {
    match category {
        Category::Car => (4.0, 1.7),
        Category::Van => (5.0, 2.0),
        Category::Truck => (8.0, 2.5),
        Category::Bus => (12.0, 2.5),
        Category::Motor => (2.0, 0.8),
        Category::Bicycle => (1.8, 0.6),
        Category::Pedestrian => (0.6, 0.6),
        Category::Ignored | Category::Other => (3.0, 1.5),
    }
}

/// Ground-truth state of one agent at one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthState {
    pub frame: u32,
    pub id: u32,
    pub category: Category,
    pub position: Vec2,
    pub velocity: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub detections: Vec<Detection>,
    pub truth: Vec<TruthState>,
}

impl Scenario {
    pub fn annotation_text(&self) -> String {
        crate::trajectory_io::write_annotations(&self.detections)
    }
}

/// Renders the scenario as detections, frame by frame and id by id.
///
/// Boxes are axis-aligned with the long side along the dominant velocity
/// component; stationary agents lie along x.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let map = CategoryMap::default();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = Normal::new(0.0, spec.noise).map_err(|e| Error::Scenario(e.to_string()))?;

    let mut order: Vec<(u32, u32, usize)> = Vec::new();
    for (index, a) in spec.agents.iter().enumerate() {
        for frame in a.start_frame..=a.end_frame {
            order.push((frame, a.id, index));
        }
    }
    order.sort_unstable();

    let mut detections = Vec::with_capacity(order.len());
    let mut truth = Vec::with_capacity(order.len());
    for (frame, id, index) in order {
        let agent = &spec.agents[index];
        let position = agent.position_at_frame(frame, spec.fps);
        let (length, width) = footprint(agent.category);
        let (w_m, h_m) = if agent.velocity.y.abs() > agent.velocity.x.abs() {
            (width, length)
        } else {
            (length, width)
        };
        let (w, h) = (w_m / spec.scale, h_m / spec.scale);
        let mut cx = position.x / spec.scale;
        let mut cy = position.y / spec.scale;
        if spec.noise > 0.0 {
            cx += jitter.sample(&mut rng);
            cy += jitter.sample(&mut rng);
        }

        detections.push(Detection {
            frame,
            id,
            bb_left: cx - w / 2.0,
            bb_top: cy - h / 2.0,
            bb_width: w,
            bb_height: h,
            score: 1.0,
            category_code: map.code_for(agent.category).unwrap_or(2),
            category: agent.category,
            truncation: 0,
            occlusion: 0,
        });
        truth.push(TruthState {
            frame,
            id,
            category: agent.category,
            position,
            velocity: agent.velocity,
        });
    }
    Ok(Scenario { detections, truth })
}

/// Closed-form TTC of two constant-velocity agents at time `t` (seconds):
/// current gap divided by the rate at which it shrinks.
pub fn analytic_ttc(a: &AgentSpec, b: &AgentSpec, t: f64, fps: f64) -> Option<f64> {
    let gap = b.position_at(t, fps) - a.position_at(t, fps);
    let distance = gap.norm();
    let rel = b.velocity - a.velocity;
    if distance == 0.0 {
        return (rel.norm() > SPEED_EPSILON).then_some(0.0);
    }
    // d/dt |gap| = gap . rel / |gap|
    let shrink_rate = -gap.dot(rel) / distance;
    (shrink_rate > SPEED_EPSILON).then(|| distance / shrink_rate)
}

/// Step-simulation TTC: the first step time at which the remaining centre
/// distance is no more than one step's worth of closure.
///
/// Returns `None` once the distance stops shrinking or the horizon passes.
pub fn brute_force_ttc(a: &AgentSpec, b: &AgentSpec, t: f64, fps: f64, dt: f64, horizon: f64) -> Option<f64> {
    if dt.is_nan() || dt <= 0.0 {
        return None;
    }
    let steps = (horizon / dt).ceil() as u64;
    let distance_at = |k: u64| {
        let s = t + k as f64 * dt;
        a.position_at(s, fps).distance(b.position_at(s, fps))
    };
    let mut previous = distance_at(0);
    for k in 1..=steps {
        let d = distance_at(k);
        let closure = previous - d;
        if closure <= 0.0 {
            return None;
        }
        if d <= closure {
            return Some(k as f64 * dt);
        }
        previous = d;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory_io::{parse_annotations, CategoryMap};

    fn agent(id: u32, start: (f64, f64), vel: (f64, f64), frames: (u32, u32)) -> AgentSpec {
        AgentSpec {
            id,
            category: Category::Car,
            start: Vec2::new(start.0, start.1),
            velocity: Vec2::new(vel.0, vel.1),
            start_frame: frames.0,
            end_frame: frames.1,
        }
    }

    fn spec(agents: Vec<AgentSpec>) -> ScenarioSpec {
        ScenarioSpec {
            fps: 30.0,
            scale: 0.05,
            agents,
            noise: 0.0,
            seed: 1,
        }
    }

    #[test]
    fn stationary_agent_repeats_its_box() {
        let s = generate_scenario(&spec(vec![agent(1, (5.0, 5.0), (0.0, 0.0), (1, 10))])).unwrap();
        assert_eq!(s.detections.len(), 10);
        let boxes: Vec<_> = s.detections.iter().map(|d| d.to_line().split_once(',').unwrap().1.to_string()).collect();
        assert!(boxes.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(s.detections[0].bb_width, 80.0);
        assert_eq!(s.detections[0].bb_height, 34.0);
    }

    #[test]
    fn centre_advances_five_pixels_per_frame() {
        let s = generate_scenario(&spec(vec![agent(1, (0.0, 0.0), (7.5, 0.0), (1, 5))])).unwrap();
        for w in s.detections.windows(2) {
            let (a, b) = (w[0].center(), w[1].center());
            assert!((b.0 - a.0 - 5.0).abs() < 1e-9);
            assert_eq!(b.1, a.1);
        }
        let parsed = parse_annotations(&s.annotation_text(), &CategoryMap::default()).unwrap();
        assert_eq!(parsed, s.detections);
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let mut sp = spec(vec![agent(1, (0.0, 0.0), (3.0, 1.0), (1, 30)), agent(2, (9.0, 2.0), (-1.0, 0.0), (1, 30))]);
        sp.noise = 0.7;
        let a = generate_scenario(&sp).unwrap().annotation_text();
        let b = generate_scenario(&sp).unwrap().annotation_text();
        assert_eq!(a, b);
        sp.seed = 2;
        assert_ne!(a, generate_scenario(&sp).unwrap().annotation_text());
    }

    #[test]
    fn invalid_specs() {
        let dup = spec(vec![agent(1, (0.0, 0.0), (1.0, 0.0), (1, 10)), agent(1, (5.0, 0.0), (1.0, 0.0), (5, 20))]);
        assert!(matches!(generate_scenario(&dup), Err(Error::Scenario(_))));
        let reuse = spec(vec![agent(1, (0.0, 0.0), (1.0, 0.0), (1, 10)), agent(1, (5.0, 0.0), (1.0, 0.0), (11, 20))]);
        assert!(generate_scenario(&reuse).is_ok());
        assert!(generate_scenario(&spec(vec![agent(1, (0.0, 0.0), (1.0, 0.0), (5, 5))])).is_err());
        let mut bad = spec(vec![]);
        bad.scale = 0.0;
        assert!(generate_scenario(&bad).is_err());
    }

    #[test]
    fn analytic_cases() {
        let a = agent(1, (0.0, 0.0), (0.0, 0.0), (1, 100));
        let b = agent(2, (10.0, 0.0), (-4.0, 0.0), (1, 100));
        let t0 = 1.0 / 30.0;
        assert!((analytic_ttc(&a, &b, t0, 30.0).unwrap() - 2.5).abs() < 1e-12);

        let leader = agent(1, (0.0, 0.0), (2.0, 0.0), (1, 100));
        let chaser = agent(2, (-6.0, 0.0), (5.0, 0.0), (1, 100));
        assert!((analytic_ttc(&leader, &chaser, t0, 30.0).unwrap() - 2.0).abs() < 1e-12);

        let away = agent(2, (10.0, 0.0), (4.0, 0.0), (1, 100));
        assert_eq!(analytic_ttc(&a, &away, t0, 30.0), None);
    }

    #[test]
    fn stepping_oracle_cases() {
        let t0 = 1.0 / 30.0;
        let a = agent(1, (0.0, 0.0), (0.0, 0.0), (1, 100));
        let b = agent(2, (10.0, 0.0), (-4.0, 0.0), (1, 100));
        let ttc = brute_force_ttc(&a, &b, t0, 30.0, 1e-3, 60.0).unwrap();
        assert!((ttc - 2.5).abs() <= 1e-3, "{ttc}");

        let p = agent(1, (0.0, 0.0), (3.0, 3.0), (1, 100));
        let q = agent(2, (4.0, 0.0), (3.0, 3.0), (1, 100));
        assert_eq!(brute_force_ttc(&p, &q, t0, 30.0, 1e-3, 60.0), None);

        let leader = agent(1, (0.0, 0.0), (2.0, 0.0), (1, 100));
        let chaser = agent(2, (-6.0, 0.0), (5.0, 0.0), (1, 100));
        let ttc = brute_force_ttc(&leader, &chaser, t0, 30.0, 1e-3, 60.0).unwrap();
        assert!((ttc - 2.0).abs() <= 1e-3, "{ttc}");
    }
}
