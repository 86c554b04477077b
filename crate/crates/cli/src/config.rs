//! Run configuration: command-line flag > config file > built-in default.
//!
//! The config file is flat `key = value` text. Keys are the long flag names
//! without dashes (`ttc-threshold = 2.0`); `#` starts a comment. Category
//! codes are remapped with `category.<code> = <name>`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use uavrisk_core::calibration::{KinematicsParams, VehicleDims};
use uavrisk_core::prediction::ForestParams;
use uavrisk_core::trajectory_io::{Category, CategoryMap};
use uavrisk_core::ttc::{AssessParams, TtcMode};

use crate::error::CliError;

pub const DEFAULT_FPS: f64 = 30.0;
pub const DEFAULT_GAP_LIMIT: u32 = 5;
pub const DEFAULT_HEATMAP_CELL: f64 = 2.0;
pub const DEFAULT_HOLDOUT: f64 = 0.2;
pub const DEFAULT_SEED: u64 = 42;

/// Flags shared by every analysis subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat key = value config file; flags given on the command line win
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output directory [default: .]
    #[arg(long, short = 'o', value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Video frame rate in frames per second [default: 30]
    #[arg(long)]
    pub fps: Option<f64>,

    /// Manual scale in metres per pixel; skips estimation from car boxes [default: estimated]
    #[arg(long)]
    pub scale: Option<f64>,

    /// Frames between the two positions used for a velocity [default: 1]
    #[arg(long)]
    pub stride: Option<u32>,

    /// Centred moving-average window over velocities, odd number of frames [default: 5]
    #[arg(long = "smooth-window")]
    pub smooth_window: Option<usize>,

    /// Assumed car length in metres for scale estimation [default: 4.0]
    #[arg(long = "veh-length")]
    pub veh_length: Option<f64>,

    /// Assumed car width in metres for scale estimation [default: 1.7]
    #[arg(long = "veh-width")]
    pub veh_width: Option<f64>,

    /// TTC below this many seconds is critical [default: 2.5]
    #[arg(long = "ttc-threshold")]
    pub ttc_threshold: Option<f64>,

    /// Only pairs within this centre distance in metres are evaluated [default: 30]
    #[arg(long)]
    pub radius: Option<f64>,

    /// TTC denominator: projected (closing speed) or literal (relative speed) [default: projected]
    #[arg(long = "ttc-mode", value_name = "projected|literal")]
    pub ttc_mode: Option<String>,

    /// Frame gaps per track longer than this are reported [default: 5]
    #[arg(long = "gap-limit")]
    pub gap_limit: Option<u32>,
}

/// Key-value pairs read from a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
            entries.insert(key.trim().replace('_', "-"), value.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|message| CliError::Format {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.entries
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| CliError::Config(format!("config key '{key}' has invalid value '{v}'")))
            })
            .transpose()
    }

    pub fn categories(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("category.").map(|code| (code, v.as_str())))
    }
}

/// Fully resolved parameters for one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub fps: f64,
    pub scale: Option<f64>,
    pub kinematics: KinematicsParams,
    pub dims: VehicleDims,
    pub assess: AssessParams,
    pub gap_limit: u32,
    pub categories: CategoryMap,
    file: ConfigFile,
}

fn pick<T: FromStr>(flag: Option<T>, file: &ConfigFile, key: &str, default: T) -> Result<T, CliError> {
    match flag {
        Some(v) => Ok(v),
        None => Ok(file.get(key)?.unwrap_or(default)),
    }
}

fn pick_opt<T: FromStr>(flag: Option<T>, file: &ConfigFile, key: &str) -> Result<Option<T>, CliError> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => file.get(key),
    }
}

impl RunConfig {
    pub fn resolve(args: &CommonArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };

        let fps = pick(args.fps, &file, "fps", DEFAULT_FPS)?;
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(CliError::Config(format!("--fps must be positive, got {fps}")));
        }
        let scale = pick_opt(args.scale, &file, "scale")?;
        if scale.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return Err(CliError::Config("--scale must be a positive number of metres per pixel".into()));
        }

        let defaults = KinematicsParams::default();
        let kinematics = KinematicsParams::new(
            pick(args.stride, &file, "stride", defaults.stride)?,
            pick(args.smooth_window, &file, "smooth-window", defaults.window)?,
        )?;

        let car = VehicleDims::default();
        let dims = VehicleDims::new(
            pick(args.veh_length, &file, "veh-length", car.length)?,
            pick(args.veh_width, &file, "veh-width", car.width)?,
        )?;

        let base = AssessParams::default();
        let mode = match pick_opt(args.ttc_mode.clone(), &file, "ttc-mode")? {
            Some(m) => TtcMode::from_str(&m)?,
            None => base.mode,
        };
        let assess = AssessParams {
            radius: pick(args.radius, &file, "radius", base.radius)?,
            threshold: pick(args.ttc_threshold, &file, "ttc-threshold", base.threshold)?,
            mode,
        };
        assess.validate()?;

        let mut categories = CategoryMap::default();
        for (code, name) in file.categories() {
            let code: i32 = code
                .parse()
                .map_err(|_| CliError::Config(format!("invalid category code '{code}'")))?;
            categories.set(code, Category::from_str(name)?);
        }

        Ok(Self {
            out_dir: pick_opt(args.out.clone(), &file, "out")?.unwrap_or_else(|| PathBuf::from(".")),
            fps,
            scale,
            kinematics,
            dims,
            assess,
            gap_limit: pick(args.gap_limit, &file, "gap-limit", DEFAULT_GAP_LIMIT)?,
            categories,
            file,
        })
    }

    /// A subcommand-specific setting, resolved with the same precedence.
    pub fn setting<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        pick(flag, &self.file, key, default)
    }

    pub fn setting_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        pick_opt(flag, &self.file, key)
    }

    pub fn forest_params(
        &self,
        trees: Option<usize>,
        max_depth: Option<usize>,
        min_leaf: Option<usize>,
        max_features: Option<usize>,
    ) -> Result<ForestParams, CliError> {
        let d = ForestParams::default();
        Ok(ForestParams {
            n_trees: self.setting(trees, "trees", d.n_trees)?,
            max_depth: self.setting(max_depth, "max-depth", d.max_depth)?,
            min_leaf: self.setting(min_leaf, "min-leaf", d.min_leaf)?,
            max_features: self.setting_opt(max_features, "max-features")?,
        })
    }
}
