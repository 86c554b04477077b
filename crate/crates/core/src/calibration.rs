//! Pixel-to-metre calibration and per-track kinematics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::trajectory_io::{Category, Track, TrackSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleSource {
    Estimated,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneScale {
    pub meters_per_pixel: f64,
    pub fps: f64,
    pub source: ScaleSource,
}

impl SceneScale {
    pub fn manual(meters_per_pixel: f64, fps: f64) -> Result<Self> {
        Self::new(meters_per_pixel, fps, ScaleSource::Manual)
    }

    pub fn new(meters_per_pixel: f64, fps: f64, source: ScaleSource) -> Result<Self> {
        if !(meters_per_pixel.is_finite() && meters_per_pixel > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "meters per pixel must be positive, got {meters_per_pixel}"
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidParameter(format!("fps must be positive, got {fps}")));
        }
        Ok(Self {
            meters_per_pixel,
            fps,
            source,
        })
    }
}

/// Footprint assumed for a generic car.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleDims {
    pub length: f64,
    pub width: f64,
}

impl Default for VehicleDims {
    fn default() -> Self {
        Self {
            length: 4.0,
            width: 1.7,
        }
    }
}

impl VehicleDims {
    pub fn new(length: f64, width: f64) -> Result<Self> {
        if !(width > 0.0 && length > width && length.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "vehicle dimensions need length > width > 0, got {length} x {width}"
            )));
        }
        Ok(Self { length, width })
    }

    pub fn area(&self) -> f64 {
        self.length * self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    pub id: u32,
    pub category: Category,
    pub frame: u32,
    pub position: Vec2,
    pub velocity: Vec2,
    pub speed: f64,
}

/// Estimates metres per pixel from the boxes of every car sample.
///
/// Each car box yields `sqrt(car_area / box_area)`; the median of those
/// candidates is the scale, so a few badly-fitting boxes do not move it.
pub fn estimate_scale(tracks: &[Track], dims: VehicleDims, fps: f64) -> Result<SceneScale> {
    let mut candidates: Vec<f64> = tracks
        .iter()
        .filter(|t| t.category == Category::Car)
        .flat_map(|t| t.samples.iter())
        .map(|s| (dims.area() / (s.width * s.height)).sqrt())
        .collect();

    if candidates.is_empty() {
        return Err(Error::ScaleEstimation(
            "no car detections to align with; pass a manual scale (--scale <m/px>)".into(),
        ));
    }

    candidates.sort_by(f64::total_cmp);
    let mid = candidates.len() / 2;
    let median = if candidates.len() % 2 == 1 {
        candidates[mid]
    } else {
        0.5 * (candidates[mid - 1] + candidates[mid])
    };
    SceneScale::new(median, fps, ScaleSource::Estimated)
}

pub fn to_world(sample: &TrackSample, scale: &SceneScale) -> Vec2 {
    Vec2::new(
        sample.center_x * scale.meters_per_pixel,
        sample.center_y * scale.meters_per_pixel,
    )
}

/// Differencing stride and smoothing window, both in frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicsParams {
    pub stride: u32,
    pub window: usize,
}

impl Default for KinematicsParams {
    fn default() -> Self {
        Self {
            stride: 1,
            window: 5,
        }
    }
}

impl KinematicsParams {
    pub fn new(stride: u32, window: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidParameter("stride must be at least 1 frame".into()));
        }
        if window == 0 || window.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "smoothing window must be a positive odd number of frames, got {window}"
            )));
        }
        Ok(Self { stride, window })
    }
}

/// Derives world-frame kinematics for one track.
///
/// A sample gets a state only if the track also has a sample exactly
/// `stride` frames earlier; its raw velocity is the displacement over
/// `stride / fps` seconds. Raw velocities are then smoothed with a centred
/// moving average of `window` states, truncated at the ends of the sequence.
/// Positions are not smoothed.
pub fn derive_kinematics(
    track: &Track,
    scale: &SceneScale,
    params: KinematicsParams,
) -> Result<Vec<KinematicState>> {
    let params = KinematicsParams::new(params.stride, params.window)?;
    let dt = f64::from(params.stride) / scale.fps;

    let mut raw: Vec<(u32, Vec2, Vec2)> = Vec::with_capacity(track.samples.len());
    for sample in &track.samples {
        let Some(prev_frame) = sample.frame.checked_sub(params.stride) else {
            continue;
        };
        let Ok(j) = track.samples.binary_search_by_key(&prev_frame, |s| s.frame) else {
            continue;
        };
        let here = to_world(sample, scale);
        let before = to_world(&track.samples[j], scale);
        raw.push((sample.frame, here, (here - before) / dt));
    }

    let half = params.window / 2;
    let states = (0..raw.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(raw.len() - 1);
            let mut sum = Vec2::ZERO;
            for (_, _, v) in &raw[lo..=hi] {
                sum = sum + *v;
            }
            let velocity = sum / (hi - lo + 1) as f64;
            let (frame, position, _) = raw[i];
            KinematicState {
                id: track.id,
                category: track.category,
                frame,
                position,
                velocity,
                speed: velocity.norm(),
            }
        })
        .collect();
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(frame: u32, x: f64, y: f64, w: f64, h: f64) -> TrackSample {
        TrackSample {
            frame,
            center_x: x,
            center_y: y,
            width: w,
            height: h,
        }
    }

    fn car(samples: Vec<TrackSample>) -> Track {
        Track {
            id: 1,
            category: Category::Car,
            samples,
        }
    }

    #[test]
    fn scale_from_exact_car_boxes() {
        let t = car((1..=3).map(|f| sample(f, 0.0, 0.0, 80.0, 34.0)).collect());
        let s = estimate_scale(&[t], VehicleDims::default(), 30.0).unwrap();
        assert!((s.meters_per_pixel - 0.05).abs() < 1e-12);
        assert_eq!(s.source, ScaleSource::Estimated);
    }

    #[test]
    fn scale_median_rejects_outlier() {
        // candidates: 0.05, 0.05, sqrt(6.8 / 40000) = 0.0130384...
        let outlier = (6.8f64 / 40000.0).sqrt();
        assert!((outlier - 0.013_038_404).abs() < 1e-9);
        let t = car(vec![
            sample(1, 0.0, 0.0, 80.0, 34.0),
            sample(2, 0.0, 0.0, 80.0, 34.0),
            sample(3, 0.0, 0.0, 200.0, 200.0),
        ]);
        let s = estimate_scale(&[t], VehicleDims::default(), 30.0).unwrap();
        assert!((s.meters_per_pixel - 0.05).abs() < 1e-12);
    }

    #[test]
    fn scale_needs_cars() {
        let mut t = car(vec![sample(1, 0.0, 0.0, 10.0, 10.0)]);
        t.category = Category::Pedestrian;
        assert!(matches!(
            estimate_scale(&[t], VehicleDims::default(), 30.0),
            Err(Error::ScaleEstimation(_))
        ));
        assert!(estimate_scale(&[], VehicleDims::default(), 30.0).is_err());
    }

    #[test]
    fn invalid_parameters() {
        assert!(VehicleDims::new(1.7, 4.0).is_err());
        assert!(SceneScale::manual(0.0, 30.0).is_err());
        assert!(SceneScale::manual(0.05, -1.0).is_err());
        assert!(KinematicsParams::new(0, 5).is_err());
        assert!(KinematicsParams::new(1, 4).is_err());
    }

    #[test]
    fn world_coordinates() {
        let s = SceneScale::manual(0.05, 30.0).unwrap();
        assert_eq!(to_world(&sample(1, 100.0, 200.0, 1.0, 1.0), &s), Vec2::new(5.0, 10.0));
        assert_eq!(to_world(&sample(1, 0.0, 0.0, 1.0, 1.0), &s), Vec2::ZERO);
        let unit = SceneScale::manual(1.0, 30.0).unwrap();
        assert_eq!(to_world(&sample(1, 3.5, -2.0, 1.0, 1.0), &unit), Vec2::new(3.5, -2.0));
    }

    #[test]
    fn three_four_five_displacement() {
        let t = car(vec![sample(10, 100.0, 100.0, 1.0, 1.0), sample(11, 103.0, 104.0, 1.0, 1.0)]);
        let s = SceneScale::manual(0.05, 30.0).unwrap();
        let states = derive_kinematics(&t, &s, KinematicsParams::new(1, 1).unwrap()).unwrap();
        assert_eq!(states.len(), 1);
        assert_eq!(states[0].frame, 11);
        assert!((states[0].speed - 7.5).abs() < 1e-12);
    }

    #[test]
    fn stationary_track_has_zero_speed() {
        let t = car((1..=8).map(|f| sample(f, 50.0, 60.0, 1.0, 1.0)).collect());
        let s = SceneScale::manual(0.05, 30.0).unwrap();
        for st in derive_kinematics(&t, &s, KinematicsParams::default()).unwrap() {
            assert_eq!(st.velocity, Vec2::ZERO);
            assert_eq!(st.speed, 0.0);
        }
    }

    #[test]
    fn smoothing_constant_velocity_is_identity() {
        // 2 m/s along x at 30 fps and 0.05 m/px: 4/3 px per frame
        let t = car((1..=20).map(|f| sample(f, f64::from(f) * 4.0 / 3.0, 7.0, 1.0, 1.0)).collect());
        let s = SceneScale::manual(0.05, 30.0).unwrap();
        for st in derive_kinematics(&t, &s, KinematicsParams::new(1, 5).unwrap()).unwrap() {
            assert!((st.velocity.x - 2.0).abs() < 1e-9);
            assert!(st.velocity.y.abs() < 1e-9);
        }
    }

    #[test]
    fn gaps_are_skipped_not_interpolated() {
        let t = car(vec![
            sample(1, 0.0, 0.0, 1.0, 1.0),
            sample(2, 1.0, 0.0, 1.0, 1.0),
            sample(5, 4.0, 0.0, 1.0, 1.0),
            sample(6, 5.0, 0.0, 1.0, 1.0),
        ]);
        let s = SceneScale::manual(1.0, 1.0).unwrap();
        let states = derive_kinematics(&t, &s, KinematicsParams::new(1, 1).unwrap()).unwrap();
        assert_eq!(states.iter().map(|s| s.frame).collect::<Vec<_>>(), vec![2, 6]);
        let states = derive_kinematics(&t, &s, KinematicsParams::new(4, 1).unwrap()).unwrap();
        assert_eq!(states.iter().map(|s| s.frame).collect::<Vec<_>>(), vec![5, 6]);
        assert_eq!(states[0].velocity, Vec2::new(1.0, 0.0));
    }

    #[test]
    fn smoothing_truncates_at_track_ends() {
        // raw velocities 1, 2, 3, 4 px/frame along x with a 3-wide window
        let xs = [0.0, 1.0, 3.0, 6.0, 10.0];
        let t = car(xs.iter().enumerate().map(|(i, x)| sample(i as u32 + 1, *x, 0.0, 1.0, 1.0)).collect());
        let s = SceneScale::manual(1.0, 1.0).unwrap();
        let vx: Vec<f64> = derive_kinematics(&t, &s, KinematicsParams::new(1, 3).unwrap())
            .unwrap()
            .iter()
            .map(|st| st.velocity.x)
            .collect();
        assert_eq!(vx, vec![1.5, 2.0, 3.0, 3.5]);
    }

    proptest! {
        #[test]
        fn constant_velocity_speed_is_recovered(
            vx in -20.0f64..20.0,
            vy in -20.0f64..20.0,
            stride in 1u32..5,
            half in 0usize..4,
            n in 8u32..40,
        ) {
            let scale = SceneScale::manual(0.05, 30.0).unwrap();
            let t = car((1..=n).map(|f| {
                let secs = f64::from(f) / 30.0;
                sample(f, 100.0 + vx * secs / 0.05, 50.0 + vy * secs / 0.05, 1.0, 1.0)
            }).collect());
            let params = KinematicsParams::new(stride, 2 * half + 1).unwrap();
            let states = derive_kinematics(&t, &scale, params).unwrap();
            prop_assert_eq!(states.len() as u32, n - stride);
            let expected = vx.hypot(vy);
            for st in &states {
                prop_assert!((st.speed - expected).abs() < 1e-9, "{} vs {}", st.speed, expected);
                prop_assert!((st.speed - st.velocity.norm()).abs() == 0.0);
            }
        }

        #[test]
        fn output_length_bounded_by_track(
            frames in prop::collection::btree_set(1u32..60, 1..30),
            stride in 1u32..4,
        ) {
            let t = car(frames.iter().map(|f| sample(*f, f64::from(*f), 0.0, 1.0, 1.0)).collect());
            let scale = SceneScale::manual(0.1, 25.0).unwrap();
            let states = derive_kinematics(&t, &scale, KinematicsParams::new(stride, 3).unwrap()).unwrap();
            prop_assert!(states.len() <= t.samples.len());
            let contiguous = frames.iter().zip(frames.iter().skip(1)).all(|(a, b)| b - a == 1);
            if stride == 1 {
                prop_assert_eq!(states.len() + 1 == t.samples.len(), contiguous);
            }
        }

        #[test]
        fn scale_is_linear(c in 0.1f64..10.0, x0 in 0.0f64..500.0, dx in -5.0f64..5.0) {
            let t = car((1..=6).map(|f| sample(f, x0 + dx * f64::from(f), 20.0, 1.0, 1.0)).collect());
            let base = SceneScale::manual(0.05, 30.0).unwrap();
            let scaled = SceneScale::manual(0.05 * c, 30.0).unwrap();
            let params = KinematicsParams::new(1, 3).unwrap();
            let a = derive_kinematics(&t, &base, params).unwrap();
            let b = derive_kinematics(&t, &scaled, params).unwrap();
            for (sa, sb) in a.iter().zip(&b) {
                let tol = 1e-12 * (1.0 + sb.position.norm());
                prop_assert!((sa.position.x * c - sb.position.x).abs() < tol);
                prop_assert!((sa.speed * c - sb.speed).abs() < 1e-12 * (1.0 + sb.speed));
            }
        }
    }
}
