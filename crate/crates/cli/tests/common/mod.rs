#![allow(dead_code)]

use std::path::{Path, PathBuf};

use uavrisk_cli::{CommonArgs, RunConfig};
use uavrisk_core::synth::{generate_scenario, AgentSpec, ScenarioSpec};
use uavrisk_core::trajectory_io::Category;
use uavrisk_core::Vec2;

pub fn agent(id: u32, category: Category, start: (f64, f64), velocity: (f64, f64), frames: (u32, u32)) -> AgentSpec {
    AgentSpec {
        id,
        category,
        start: Vec2::new(start.0, start.1),
        velocity: Vec2::new(velocity.0, velocity.1),
        start_frame: frames.0,
        end_frame: frames.1,
    }
}

pub fn spec(agents: Vec<AgentSpec>) -> ScenarioSpec {
    ScenarioSpec {
        fps: 30.0,
        scale: 0.05,
        agents,
        noise: 0.0,
        seed: 0,
    }
}

pub fn write_scenario(dir: &Path, name: &str, spec: &ScenarioSpec) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, generate_scenario(spec).unwrap().annotation_text()).unwrap();
    path
}

pub fn config(out: &Path, tweak: impl FnOnce(&mut CommonArgs)) -> RunConfig {
    let mut args = CommonArgs {
        out: Some(out.to_path_buf()),
        ..CommonArgs::default()
    };
    tweak(&mut args);
    RunConfig::resolve(&args).unwrap()
}

/// 25 identical head-on encounters, 18 between two vehicles and 7 involving a
/// pedestrian or cyclist, spaced far beyond the search radius.
pub fn vehicle_mix() -> ScenarioSpec {
    let vehicle_pairs = [
        (Category::Car, Category::Car),
        (Category::Car, Category::Truck),
        (Category::Bus, Category::Van),
        (Category::Motor, Category::Car),
        (Category::Van, Category::Car),
        (Category::Truck, Category::Bus),
    ];
    let vulnerable_pairs = [
        (Category::Car, Category::Pedestrian),
        (Category::Bicycle, Category::Truck),
        (Category::Pedestrian, Category::Bicycle),
    ];
    let mut pairs = Vec::new();
    for k in 0..18 {
        pairs.push(vehicle_pairs[k % vehicle_pairs.len()]);
    }
    for k in 0..7 {
        pairs.push(vulnerable_pairs[k % vulnerable_pairs.len()]);
    }

    let mut agents = Vec::new();
    for (k, (ca, cb)) in pairs.into_iter().enumerate() {
        let y = 200.0 * k as f64;
        let id = 2 * k as u32 + 1;
        agents.push(agent(id, ca, (0.0, y), (3.0, 0.0), (1, 30)));
        agents.push(agent(id + 1, cb, (16.3, y), (-3.0, 0.0), (1, 30)));
    }
    spec(agents)
}

pub const MIX_SCALE: f64 = 0.05;

/// A 200 m square scene whose only conflicts are head-on pairs near (150, 40),
/// the upper-right quadrant in image coordinates; background traffic moves as
/// one platoon and never closes.
pub fn corner_conflicts() -> ScenarioSpec {
    let mut agents = Vec::new();
    let mut id = 1;
    for (x, y) in [(140.0, 30.0), (150.0, 42.0), (158.0, 54.0)] {
        agents.push(agent(id, Category::Car, (x - 8.0, y), (4.0, 0.0), (1, 30)));
        agents.push(agent(id + 1, Category::Car, (x + 8.0, y), (-4.0, 0.0), (1, 30)));
        id += 2;
    }
    let background = [
        (20.0, 20.0),
        (60.0, 20.0),
        (20.0, 60.0),
        (60.0, 60.0),
        (20.0, 140.0),
        (60.0, 180.0),
        (140.0, 140.0),
        (180.0, 180.0),
        (100.0, 190.0),
        (10.0, 100.0),
        (190.0, 110.0),
    ];
    for (x, y) in background {
        agents.push(agent(id, Category::Car, (x, y), (0.0, 1.5), (1, 30)));
        id += 1;
    }
    spec(agents)
}
