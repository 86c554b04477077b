use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use uavrisk_core::calibration::SceneScale;
use uavrisk_core::evaluation::{compute_mota, risk_confusion, ConfusionCounts, ConfusionReport, MotaResult, PairKey, DEFAULT_IOU_THRESHOLD};
use uavrisk_core::prediction::{
    extract_all, feature_importance, holdout_split, predict, threshold_summary, train_forest, FeatureImportance,
    ForestModel, RiskHistory, RiskLabel, ThresholdSummary,
};
use uavrisk_core::profiles::{
    accumulate_heatmap, macro_profiles, micro_profile, pair_category_stats, render_heatmap_svg, MacroProfile,
    MicroProfile, PairStats,
};
use uavrisk_core::synth::{generate_scenario, ScenarioSpec, TruthState};
use uavrisk_core::ttc::TtcMode;
use uavrisk_core::Vec2;

use crate::config::{CommonArgs, RunConfig, DEFAULT_HEATMAP_CELL, DEFAULT_HOLDOUT, DEFAULT_SEED};
use crate::error::CliError;
use crate::output::{heatmap_csv, rows_csv, ttc_csv, OutputSet};
use crate::pipeline::{analyze, load_detections, read_text, Analysis};

#[derive(Debug, Parser)]
#[command(name = "uavrisk", version, about = "Crash-risk analytics for drone-observed road-user trajectories")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute pairwise TTC records, the macroscopic profile and a run summary
    Assess(InputArgs),
    /// Write macroscopic and per-user microscopic risk profiles
    Profile(ProfileArgs),
    /// Accumulate critical interactions into a spatial heatmap
    Heatmap(HeatmapArgs),
    /// Category-pair shares among critical interactions
    Stats(InputArgs),
    /// Train the risk-prediction forest and report feature importances
    Train(TrainArgs),
    /// Apply a trained forest to every car with a full history
    Predict(PredictArgs),
    /// Score a tracker's output against ground truth with MOTA
    EvalMot(EvalMotArgs),
    /// Compare two sets of critical labels from TTC record files
    EvalRisk(EvalRiskArgs),
    /// Generate an annotation file from a synthetic scenario description
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Annotation file, one detection per line
    pub input: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub base: InputArgs,
    /// User id for a microscopic profile; repeatable [default: every user with a critical interaction]
    #[arg(long = "id")]
    pub ids: Vec<u32>,
    /// Restrict microscopic profiles to one frame [default: all frames]
    #[arg(long)]
    pub frame: Option<u32>,
}

#[derive(Debug, Clone, Args)]
pub struct HeatmapArgs {
    #[command(flatten)]
    pub base: InputArgs,
    /// Heatmap cell edge in metres [default: 2.0]
    #[arg(long = "cell-size")]
    pub cell_size: Option<f64>,
    /// Skip heatmap.svg [default: write it]
    #[arg(long = "no-svg")]
    pub no_svg: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ForestArgs {
    /// Number of trees [default: 100]
    #[arg(long)]
    pub trees: Option<usize>,
    /// Maximum tree depth [default: 12]
    #[arg(long = "max-depth")]
    pub max_depth: Option<usize>,
    /// Minimum samples per leaf [default: 5]
    #[arg(long = "min-leaf")]
    pub min_leaf: Option<usize>,
    /// Features tried per split [default: ceil(sqrt(50)) = 8]
    #[arg(long = "max-features")]
    pub max_features: Option<usize>,
    /// Seed for bootstrap, feature sampling and the holdout shuffle [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub base: InputArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    /// Fraction of samples held out for evaluation, in [0, 1) [default: 0.2]
    #[arg(long)]
    pub holdout: Option<f64>,
    /// Number of top-ranked features listed in importance.json [default: 10]
    #[arg(long = "top-k")]
    pub top_k: Option<usize>,
    /// Also report learned split thresholds per feature [default: off]
    #[arg(long = "verbose-thresholds")]
    pub verbose_thresholds: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub base: InputArgs,
    /// Model written by `train`
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Flat key = value config file; flags given on the command line win
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory [default: .]
    #[arg(long, short = 'o', value_name = "DIR")]
    pub out: Option<PathBuf>,
}

impl OutputArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        RunConfig::resolve(&CommonArgs {
            config: self.config.clone(),
            out: self.out.clone(),
            ..CommonArgs::default()
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalMotArgs {
    /// Ground-truth annotation file
    #[arg(long)]
    pub gt: PathBuf,
    /// Tracker output in the same format
    #[arg(long)]
    pub hyp: PathBuf,
    /// Minimum IoU for a match [default: 0.5]
    #[arg(long)]
    pub iou: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalRiskArgs {
    /// Reference TTC record CSV
    #[arg(long)]
    pub truth: PathBuf,
    /// TTC record CSV to score
    #[arg(long)]
    pub pred: PathBuf,
    /// Treat pair-frames present in only one file as not critical instead of failing [default: off]
    #[arg(long = "missing-as-safe")]
    pub missing_as_safe: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Scenario description in JSON
    pub spec: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// What a command did, for the one-line report printed on success.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: String,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssessSummary {
    pub frames: usize,
    pub users: usize,
    pub states: usize,
    pub records: usize,
    pub critical_records: usize,
    pub meters_per_pixel: Option<f64>,
    pub fps: f64,
    pub ttc_threshold: f64,
    pub radius_m: f64,
    pub ttc_mode: TtcMode,
    pub duplicate_detections: usize,
    pub frame_gaps: usize,
    pub unmapped_codes: Vec<i32>,
}

impl AssessSummary {
    fn new(cfg: &RunConfig, a: &Analysis) -> Self {
        Self {
            frames: a.frame_count(),
            users: a.user_count(),
            states: a.states.len(),
            records: a.records.len(),
            critical_records: a.critical_count(),
            meters_per_pixel: a.scale.map(|s: SceneScale| s.meters_per_pixel),
            fps: cfg.fps,
            ttc_threshold: cfg.assess.threshold,
            radius_m: cfg.assess.radius,
            ttc_mode: cfg.assess.mode,
            duplicate_detections: a.validation.duplicates.len(),
            frame_gaps: a.validation.gaps.len(),
            unmapped_codes: a.validation.unmapped_codes.clone(),
        }
    }

    fn line(&self) -> String {
        format!(
            "{} frames, {} users, {} critical of {} TTC records",
            self.frames, self.users, self.critical_records, self.records
        )
    }
}

#[derive(Serialize)]
struct MacroDoc<'a> {
    threshold: f64,
    frames: &'a [MacroProfile],
}

fn macro_doc(records: &Analysis, threshold: f64) -> Vec<MacroProfile> {
    macro_profiles(&records.records, threshold)
        .into_iter()
        .filter(|p| !p.entries.is_empty())
        .collect()
}

/// Full assessment: `ttc_records.csv`, `macro_profile.json` and `summary.json`.
pub fn run_assess(cfg: &RunConfig, input: &Path) -> Result<(AssessSummary, Vec<PathBuf>), CliError> {
    let analysis = analyze(cfg, input)?;
    let summary = AssessSummary::new(cfg, &analysis);
    let threshold = cfg.assess.threshold;

    let mut out = OutputSet::new(&cfg.out_dir, "assess");
    out.add("ttc_records.csv", ttc_csv(&analysis.records)?);
    out.add_json(
        "macro_profile.json",
        &MacroDoc {
            threshold,
            frames: &macro_doc(&analysis, threshold),
        },
    )?;
    out.add_json("summary.json", &summary)?;
    Ok((summary, out.write()?))
}

#[derive(Serialize)]
struct MicroDoc<'a> {
    id: u32,
    threshold: f64,
    frames: &'a [MicroProfile],
}

fn run_profile(args: &ProfileArgs) -> Result<Outcome, CliError> {
    let cfg = RunConfig::resolve(&args.base.common)?;
    let analysis = analyze(&cfg, &args.base.input)?;
    let threshold = cfg.assess.threshold;
    let macros = macro_doc(&analysis, threshold);

    let ids: BTreeSet<u32> = if args.ids.is_empty() {
        macros.iter().flat_map(|p| p.entries.iter().map(|e| e.id)).collect()
    } else {
        args.ids.iter().copied().collect()
    };

    let mut frames_of: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for r in &analysis.records {
        let (a, b) = r.ids();
        for id in [a, b] {
            if ids.contains(&id) {
                frames_of.entry(id).or_default().insert(r.frame());
            }
        }
    }

    let mut out = OutputSet::new(&cfg.out_dir, "profile");
    out.add_json(
        "macro_profile.json",
        &MacroDoc {
            threshold,
            frames: &macros,
        },
    )?;
    for &id in &ids {
        let frames: Vec<MicroProfile> = frames_of
            .get(&id)
            .into_iter()
            .flatten()
            .filter(|f| args.frame.is_none_or(|only| only == **f))
            .map(|&f| micro_profile(&analysis.records, id, f, threshold))
            .filter(|p| !p.neighbors.is_empty())
            .collect();
        out.add_json(
            format!("micro_{id}.json"),
            &MicroDoc {
                id,
                threshold,
                frames: &frames,
            },
        )?;
    }
    let files = out.write()?;
    Ok(Outcome {
        summary: format!("{} frames with critical users, {} microscopic profiles", macros.len(), ids.len()),
        files,
    })
}

#[derive(Serialize)]
struct HeatmapMeta {
    origin: Vec2,
    cell_size_m: f64,
    threshold: f64,
    occupied_cells: usize,
    total_intensity: f64,
    max_cell: Option<MaxCell>,
}

#[derive(Serialize)]
struct MaxCell {
    i: i64,
    j: i64,
    intensity: f64,
    center: Vec2,
}

fn run_heatmap(args: &HeatmapArgs) -> Result<Outcome, CliError> {
    let cfg = RunConfig::resolve(&args.base.common)?;
    let cell = cfg.setting(args.cell_size, "cell-size", DEFAULT_HEATMAP_CELL)?;
    let analysis = analyze(&cfg, &args.base.input)?;
    let grid = accumulate_heatmap(&analysis.records, cfg.assess.threshold, cell)?;

    let max_cell = grid.max_cell().map(|((i, j), intensity)| MaxCell {
        i,
        j,
        intensity,
        center: grid.cell_center((i, j)),
    });
    let summary = match &max_cell {
        Some(m) => format!("{} cells, peak {} at ({}, {})", grid.cells.len(), m.intensity, m.i, m.j),
        None => "no critical interactions".to_string(),
    };

    let mut out = OutputSet::new(&cfg.out_dir, "heatmap");
    out.add("heatmap.csv", heatmap_csv(&grid)?);
    if !args.no_svg {
        out.add("heatmap.svg", render_heatmap_svg(&grid));
    }
    out.add_json(
        "heatmap_meta.json",
        &HeatmapMeta {
            origin: grid.origin,
            cell_size_m: grid.cell_size,
            threshold: cfg.assess.threshold,
            occupied_cells: grid.cells.len(),
            total_intensity: grid.total(),
            max_cell,
        },
    )?;
    Ok(Outcome {
        summary,
        files: out.write()?,
    })
}

#[derive(Serialize)]
struct StatsDoc<'a> {
    threshold: f64,
    #[serde(flatten)]
    stats: &'a PairStats,
}

fn run_stats(args: &InputArgs) -> Result<Outcome, CliError> {
    let cfg = RunConfig::resolve(&args.common)?;
    let analysis = analyze(&cfg, &args.input)?;
    let stats = pair_category_stats(&analysis.records, cfg.assess.threshold);
    let summary = match stats.vehicle_vehicle_percent {
        Some(p) => format!("{} critical pairs, {p:.1}% vehicle-vehicle", stats.total),
        None => "no critical pairs".to_string(),
    };
    let mut out = OutputSet::new(&cfg.out_dir, "stats");
    out.add_json(
        "pair_stats.json",
        &StatsDoc {
            threshold: cfg.assess.threshold,
            stats: &stats,
        },
    )?;
    Ok(Outcome {
        summary,
        files: out.write()?,
    })
}

#[derive(Serialize)]
struct ImportanceDoc<'a> {
    top: &'a [FeatureImportance],
    importances: &'a [FeatureImportance],
    #[serde(skip_serializing_if = "Option::is_none")]
    thresholds: Option<Vec<ThresholdSummary>>,
}

#[derive(Serialize)]
struct TrainReport {
    samples: usize,
    train_samples: usize,
    holdout_samples: usize,
    holdout_fraction: f64,
    risky_fraction: Option<f64>,
    holdout: Option<ConfusionReport>,
}

fn confusion_of(model: &ForestModel, samples: &[uavrisk_core::prediction::FeatureVector]) -> Result<ConfusionCounts, CliError> {
    let mut counts = ConfusionCounts::default();
    for fv in samples {
        if let Some(label) = fv.label {
            counts.record(label == RiskLabel::Risky, predict(model, fv)? == RiskLabel::Risky);
        }
    }
    Ok(counts)
}

fn run_train(args: &TrainArgs) -> Result<Outcome, CliError> {
    let cfg = RunConfig::resolve(&args.base.common)?;
    let f = &args.forest;
    let params = cfg.forest_params(f.trees, f.max_depth, f.min_leaf, f.max_features)?;
    let seed = cfg.setting(f.seed, "seed", DEFAULT_SEED)?;
    let fraction = cfg.setting(args.holdout, "holdout", DEFAULT_HOLDOUT)?;
    let top_k = cfg.setting(args.top_k, "top-k", 10)?;

    let analysis = analyze(&cfg, &args.base.input)?;
    let history = RiskHistory::new(&analysis.states, &analysis.records);
    let samples = extract_all(&history, cfg.assess.threshold);
    let (train, test) = holdout_split(&samples, fraction, seed)?;
    let model = train_forest(&train, params, seed)?;

    let holdout = if test.is_empty() {
        None
    } else {
        Some(confusion_of(&model, &test)?.report())
    };
    let risky = samples.iter().filter(|s| s.label == Some(RiskLabel::Risky)).count();
    let report = TrainReport {
        samples: samples.len(),
        train_samples: train.len(),
        holdout_samples: test.len(),
        holdout_fraction: fraction,
        risky_fraction: (!samples.is_empty()).then(|| risky as f64 / samples.len() as f64),
        holdout,
    };

    let importance = feature_importance(&model, top_k);
    let mut out = OutputSet::new(&cfg.out_dir, "train");
    out.add_json("model.json", &model)?;
    out.add_json(
        "importance.json",
        &ImportanceDoc {
            top: &importance.top,
            importances: &importance.importances,
            thresholds: args.verbose_thresholds.then(|| threshold_summary(&model)),
        },
    )?;
    out.add_json("train_report.json", &report)?;

    let accuracy = report
        .holdout
        .and_then(|h| h.accuracy)
        .map(|a| format!(", holdout accuracy {a:.4}"))
        .unwrap_or_default();
    Ok(Outcome {
        summary: format!("{} trees on {} samples{accuracy}", model.trees.len(), train.len()),
        files: out.write()?,
    })
}

fn run_predict(args: &PredictArgs) -> Result<Outcome, CliError> {
    let cfg = RunConfig::resolve(&args.base.common)?;
    let text = read_text(&args.model)?;
    let model: ForestModel = serde_json::from_str(&text).map_err(|e| CliError::Format {
        path: args.model.clone(),
        message: format!("not a model file: {e}"),
    })?;

    let analysis = analyze(&cfg, &args.base.input)?;
    let history = RiskHistory::new(&analysis.states, &analysis.records);
    let samples = extract_all(&history, cfg.assess.threshold);

    let mut rows = Vec::with_capacity(samples.len());
    let mut risky = 0;
    for fv in &samples {
        let label = predict(&model, fv)?;
        risky += usize::from(label == RiskLabel::Risky);
        rows.push(vec![
            fv.frame.to_string(),
            fv.id.to_string(),
            label.to_string(),
            fv.label.map(|l| l.to_string()).unwrap_or_default(),
        ]);
    }
    let mut out = OutputSet::new(&cfg.out_dir, "predict");
    out.add("predictions.csv", rows_csv(&["frame", "id", "predicted", "observed"], &rows)?);
    Ok(Outcome {
        summary: format!("{risky} of {} predicted risky", samples.len()),
        files: out.write()?,
    })
}

#[derive(Serialize)]
struct MotaDoc {
    iou_threshold: f64,
    #[serde(flatten)]
    result: MotaResult,
}

fn run_eval_mot(args: &EvalMotArgs) -> Result<Outcome, CliError> {
    let cfg = args.output.resolve()?;
    let iou = cfg.setting(args.iou, "iou", DEFAULT_IOU_THRESHOLD)?;
    if !(0.0..=1.0).contains(&iou) || iou == 0.0 {
        return Err(CliError::Config(format!("--iou must be in (0, 1], got {iou}")));
    }
    let gt = load_detections(&args.gt, &cfg.categories)?;
    let hyp = load_detections(&args.hyp, &cfg.categories)?;
    let result = compute_mota(&gt, &hyp, iou).map_err(|e| CliError::core(&args.gt, e))?;

    let mut out = OutputSet::new(&cfg.out_dir, "eval-mot");
    out.add_json(
        "mota.json",
        &MotaDoc {
            iou_threshold: iou,
            result,
        },
    )?;
    Ok(Outcome {
        summary: format!(
            "MOTA {:.4} (misses {}, false positives {}, id switches {}, ground truth {})",
            result.mota, result.misses, result.false_positives, result.id_switches, result.gt_count
        ),
        files: out.write()?,
    })
}

/// Reads the `frame,id_a,id_b,...,critical` columns of a TTC record file.
pub fn load_critical_labels(path: &Path) -> Result<BTreeMap<PairKey, bool>, CliError> {
    let bad = |message: String| CliError::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => bad(format!("{other:?}")),
    })?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column '{name}'")))
    };
    let (frame, id_a, id_b, critical) = (column("frame")?, column("id_a")?, column("id_b")?, column("critical")?);

    let mut labels = BTreeMap::new();
    for (n, row) in reader.records().enumerate() {
        let line = n + 2;
        let row = row.map_err(|e| bad(format!("line {line}: {e}")))?;
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let int = |i: usize, what: &str| {
            field(i)
                .parse::<u32>()
                .map_err(|_| bad(format!("line {line}: invalid {what} '{}'", field(i))))
        };
        let (a, b) = (int(id_a, "id_a")?, int(id_b, "id_b")?);
        let key = PairKey {
            frame: int(frame, "frame")?,
            id_a: a.min(b),
            id_b: a.max(b),
        };
        let flag = match field(critical).to_ascii_lowercase().as_str() {
            "true" | "1" => true,
            "false" | "0" => false,
            other => return Err(bad(format!("line {line}: invalid critical flag '{other}'"))),
        };
        if labels.insert(key, flag).is_some() {
            return Err(bad(format!(
                "line {line}: pair ({}, {}) repeated in frame {}",
                key.id_a, key.id_b, key.frame
            )));
        }
    }
    Ok(labels)
}

#[derive(Serialize)]
struct ConfusionDoc {
    compared: usize,
    filled_as_safe: usize,
    #[serde(flatten)]
    report: ConfusionReport,
}

fn run_eval_risk(args: &EvalRiskArgs) -> Result<Outcome, CliError> {
    let cfg = args.output.resolve()?;
    let mut truth = load_critical_labels(&args.truth)?;
    let mut pred = load_critical_labels(&args.pred)?;

    let mut filled = 0;
    if args.missing_as_safe {
        let keys: BTreeSet<PairKey> = truth.keys().chain(pred.keys()).copied().collect();
        for k in keys {
            for side in [&mut truth, &mut pred] {
                if let std::collections::btree_map::Entry::Vacant(slot) = side.entry(k) {
                    slot.insert(false);
                    filled += 1;
                }
            }
        }
    }
    let counts = risk_confusion(&truth, &pred).map_err(|e| CliError::core(&args.pred, e))?;
    let report = counts.report();

    let mut out = OutputSet::new(&cfg.out_dir, "eval-risk");
    out.add_json(
        "confusion.json",
        &ConfusionDoc {
            compared: counts.total(),
            filled_as_safe: filled,
            report,
        },
    )?;
    let pct = |v: Option<f64>| v.map(|x| format!("{:.2}%", 100.0 * x)).unwrap_or_else(|| "n/a".into());
    Ok(Outcome {
        summary: format!(
            "accuracy {}, true positive rate {}, false positive rate {}",
            pct(report.accuracy),
            pct(report.true_positive_rate),
            pct(report.false_positive_rate)
        ),
        files: out.write()?,
    })
}

#[derive(Serialize)]
struct TruthDoc<'a> {
    fps: f64,
    scale: f64,
    states: &'a [TruthState],
}

fn run_synth(args: &SynthArgs) -> Result<Outcome, CliError> {
    let cfg = args.output.resolve()?;
    let text = read_text(&args.spec)?;
    let spec: ScenarioSpec = serde_json::from_str(&text).map_err(|e| CliError::Format {
        path: args.spec.clone(),
        message: e.to_string(),
    })?;
    let scenario = generate_scenario(&spec).map_err(|e| CliError::core(&args.spec, e))?;

    let mut out = OutputSet::new(&cfg.out_dir, "synth");
    out.add("annotations.txt", scenario.annotation_text());
    out.add_json(
        "truth.json",
        &TruthDoc {
            fps: spec.fps,
            scale: spec.scale,
            states: &scenario.truth,
        },
    )?;
    Ok(Outcome {
        summary: format!("{} detections for {} agents", scenario.detections.len(), spec.agents.len()),
        files: out.write()?,
    })
}

pub fn run_command(command: &Command) -> Result<Outcome, CliError> {
    match command {
        Command::Assess(args) => {
            let cfg = RunConfig::resolve(&args.common)?;
            let (summary, files) = run_assess(&cfg, &args.input)?;
            Ok(Outcome {
                summary: summary.line(),
                files,
            })
        }
        Command::Profile(args) => run_profile(args),
        Command::Heatmap(args) => run_heatmap(args),
        Command::Stats(args) => run_stats(args),
        Command::Train(args) => run_train(args),
        Command::Predict(args) => run_predict(args),
        Command::EvalMot(args) => run_eval_mot(args),
        Command::EvalRisk(args) => run_eval_risk(args),
        Command::Synth(args) => run_synth(args),
    }
}
