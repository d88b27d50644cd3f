//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use specktrack::augment::{
    apply_affine, apply_photometric_params, reverse_sequence, sample_affine, sample_photometric, sample_reversal,
    AugConfig,
};
use specktrack::dataset::{load_dataset, write_dataset, NamedSample};
use specktrack::encoder::{EncoderConfig, EncoderWeights};
use specktrack::error::Error;
use specktrack::eval::{errors_at_frame, gls as compute_gls, gls_mad, phase_sweep, EvalSample, MetricReport, PointTracker};
use specktrack::geometry::Point2;
use specktrack::io::{load_trajectories, load_video, read_json, save_trajectories, write_json};
use specktrack::motion::{optimal_init_phase, phase_stats, to_polar, PhaseStats};
use specktrack::plot::{line_chart, polar_histogram, Series};
use specktrack::synth::{gen_dataset, SynthConfig};
use specktrack::tracker::{Tracker, TrackerConfig};
use specktrack::train::{checkpoint_paths, fit, gradcheck as run_gradcheck, GradCheckConfig, LossReport, TrainConfig};

use crate::output::{
    create_output_dir, load_config, path_string, write_run_manifest, write_table, write_text, CliError, CliResult,
};
use crate::GlobalArgs;

/// Default config of a subcommand, pretty-printed for `--help`.
pub fn defaults_help(command: &str) -> String {
    let json = match command {
        "synth" => serde_json::to_string_pretty(&SynthConfig::default()),
        "augment" => serde_json::to_string_pretty(&AugmentConfig::default()),
        "motion" => serde_json::to_string_pretty(&MotionConfig::default()),
        "train" => serde_json::to_string_pretty(&TrainConfig::default()),
        "track" | "eval" => serde_json::to_string_pretty(&ModelConfig::default()),
        "sweep" => serde_json::to_string_pretty(&SweepConfig::default()),
        "gls" => serde_json::to_string_pretty(&GlsConfig::default()),
        "gradcheck" => serde_json::to_string_pretty(&GradCheckConfig::default()),
        _ => Ok(String::new()),
    }
    .expect("configs serialize");
    format!("Config keys (JSON, every key optional) with defaults:\n{json}")
}

fn config_input(path: &Option<PathBuf>) -> Vec<(&'static str, String)> {
    path.iter().map(|p| ("config", path_string(p))).collect()
}

// ---------------------------------------------------------------- synth

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// JSON config overlaying the defaults below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the vertically biased preset instead of the defaults.
    #[arg(long)]
    vertical: bool,
}

pub fn synth(g: &GlobalArgs, a: SynthArgs) -> CliResult<()> {
    let base = if a.vertical {
        SynthConfig::vertically_biased()
    } else {
        SynthConfig::default()
    };
    let mut cfg = load_config(a.config.as_deref(), base)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let dir = create_output_dir(g)?;
    let samples = gen_dataset(&cfg, 0, cfg.num_videos)?;
    write_dataset(
        &dir,
        samples.iter().enumerate().map(|(i, s)| {
            let params = serde_json::json!({ "motion": s.motion, "speckle": s.speckle });
            (format!("sample_{i:04}"), &s.video, &s.trajectories, Some(params))
        }),
    )?;
    eprintln!("wrote {} samples to {}", samples.len(), dir.display());
    write_run_manifest(&dir, "synth", g, Some(cfg.seed), &cfg, &config_input(&a.config))
}

// ---------------------------------------------------------------- augment

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub augmentation: AugConfig,
    /// Augmented copies per input sample.
    pub copies: usize,
    pub affine: bool,
    pub photometric: bool,
    pub reversal: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            augmentation: AugConfig::default(),
            copies: 1,
            affine: true,
            photometric: true,
            reversal: true,
        }
    }
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    /// Dataset manifest or directory.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize)]
struct Provenance {
    name: String,
    source: String,
    sample_seed: u64,
    affine: Option<specktrack::augment::AffineParams>,
    photometric: Option<specktrack::augment::PhotometricParams>,
    reversed: bool,
}

pub fn augment(g: &GlobalArgs, a: AugmentArgs) -> CliResult<()> {
    let mut cfg = load_config(a.config.as_deref(), AugmentConfig::default())?;
    if let Some(s) = g.seed {
        cfg.augmentation.seed = s;
    }
    cfg.augmentation.validate()?;
    if cfg.copies == 0 {
        return Err(CliError::Usage("copies must be positive".into()));
    }
    let data = load_dataset(&a.dataset)?;
    let jobs: Vec<(usize, usize)> = (0..data.len()).flat_map(|i| (0..cfg.copies).map(move |c| (i, c))).collect();
    let outputs: Vec<(VideoPair, Provenance)> = jobs
        .par_iter()
        .map(|&(i, c)| augment_one(&data[i], (i * cfg.copies + c) as u64, c, &cfg))
        .collect::<CliResult<_>>()?;
    let dir = create_output_dir(g)?;
    write_dataset(
        &dir,
        outputs.iter().map(|((v, t), p)| {
            (p.name.clone(), v, t, Some(serde_json::to_value(p).expect("provenance serializes")))
        }),
    )?;
    let prov: Vec<&Provenance> = outputs.iter().map(|(_, p)| p).collect();
    write_json(&prov, dir.join("provenance.json"))?;
    let mut inputs = config_input(&a.config);
    inputs.push(("dataset", path_string(&a.dataset)));
    write_run_manifest(&dir, "augment", g, Some(cfg.augmentation.seed), &cfg, &inputs)
}

type VideoPair = (specktrack::video::VideoTensor, specktrack::video::TrajectorySet);

fn augment_one(src: &NamedSample, sample_seed: u64, copy: usize, cfg: &AugmentConfig) -> CliResult<(VideoPair, Provenance)> {
    let aug = &cfg.augmentation;
    let (mut video, mut trajs) = (src.sample.video.clone(), src.sample.reference.clone());
    let affine = if cfg.affine {
        let p = sample_affine(aug, sample_seed, video.width())?;
        (video, trajs) = apply_affine(&video, &trajs, &p)?;
        Some(p)
    } else {
        None
    };
    let photometric = if cfg.photometric {
        let p = sample_photometric(aug, sample_seed);
        video = apply_photometric_params(&video, &p)?;
        Some(p)
    } else {
        None
    };
    let reversed = cfg.reversal && sample_reversal(aug, sample_seed);
    if reversed {
        (video, trajs) = reverse_sequence(&video, &trajs);
    }
    let prov = Provenance {
        name: format!("{}_aug{copy:02}", src.entry.name),
        source: src.entry.name.clone(),
        sample_seed,
        affine,
        photometric,
        reversed,
    };
    Ok(((video, trajs), prov))
}

// ---------------------------------------------------------------- motion

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionConfig {
    pub num_phases: usize,
    pub num_bins: usize,
    /// Reference frame of the displacements; `None` uses each sample's query frame.
    pub center_frame: Option<usize>,
    /// Candidate phases of the optimal-phase search.
    pub search_phases: usize,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            num_phases: 11,
            num_bins: 16,
            center_frame: None,
            search_phases: 21,
        }
    }
}

#[derive(Args, Debug)]
pub struct MotionArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize)]
struct OptimalPhase {
    optimal_phase: f64,
    search_phases: usize,
}

pub fn motion(g: &GlobalArgs, a: MotionArgs) -> CliResult<()> {
    let cfg = load_config(a.config.as_deref(), MotionConfig::default())?;
    let data = load_dataset(&a.dataset)?;
    let fields = data
        .iter()
        .map(|s| {
            let r = &s.sample.reference;
            to_polar(r, cfg.center_frame.unwrap_or(r.query_frame()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let stats = phase_stats(&fields, cfg.num_phases, cfg.num_bins)?;
    let refs: Vec<_> = data.iter().map(|s| s.sample.reference.clone()).collect();
    let optimal = optimal_init_phase(&refs, cfg.search_phases)?;
    let dir = create_output_dir(g)?;
    match g.format {
        crate::Format::Csv => write_text(&dir.join("phase_stats.csv"), &stats.to_csv())?,
        crate::Format::Json => write_json(&stats, dir.join("phase_stats.json"))?,
    }
    write_json(
        &OptimalPhase {
            optimal_phase: optimal,
            search_phases: cfg.search_phases,
        },
        dir.join("optimal_phase.json"),
    )?;
    println!("optimal query phase {optimal}");
    if g.plot {
        plot_phase_stats(&dir, &stats)?;
    }
    write_run_manifest(&dir, "motion", g, None, &cfg, &[("dataset", path_string(&a.dataset))])
}

fn plot_phase_stats(dir: &Path, s: &PhaseStats) -> CliResult<()> {
    let series = |label, v: &[Option<f64>]| Series {
        label,
        points: s.phases.iter().copied().zip(v.iter().copied()).collect(),
    };
    let chart = line_chart(
        "Direction statistics by phase",
        "cycle phase",
        "value",
        &[
            series("mean resultant length", &s.resultant_length),
            series("vertical fraction", &s.vertical_fraction),
        ],
    );
    write_text(&dir.join("phase_stats.svg"), &chart)?;
    for (k, counts) in s.angle_histogram.iter().enumerate() {
        let svg = polar_histogram(&format!("Displacement angles, phase {:.2}", s.phases[k]), counts);
        write_text(&dir.join(format!("polar_phase_{k:02}.svg")), &svg)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to start from instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
}

pub fn train(g: &GlobalArgs, a: TrainArgs) -> CliResult<()> {
    let mut cfg = load_config(a.config.as_deref(), TrainConfig::default())?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let samples: Vec<EvalSample> = load_dataset(&a.dataset)?.into_iter().map(|s| s.sample).collect();
    if samples.is_empty() {
        return Err(CliError::Engine(Error::InvalidArgument("dataset is empty".into())));
    }
    let init = a.init.as_ref().map(EncoderWeights::<f32>::load).transpose()?;
    if let Some(w) = &init {
        cfg.encoder = w.config.clone();
    }
    let dir = create_output_dir(g)?;
    let out = fit(&samples, &cfg, init, Some(&dir), |r| {
        if r.step % 10 == 0 || r.step + 1 == cfg.total_steps {
            eprintln!("step {:>5}  lr {:.2e}  loss {:.4}  d1 {:.3}", r.step, r.lr, r.loss, r.delta[0]);
        }
    })?;
    let rows: Vec<String> = out.reports.iter().map(LossReport::csv_row).collect();
    write_table(&dir, "loss_log", g.format, LossReport::csv_header(), &rows, &out.reports)?;
    if g.plot {
        let chart = line_chart(
            "Training loss",
            "step",
            "loss (px)",
            &[Series {
                label: "loss",
                points: out.reports.iter().map(|r| (r.step as f64, Some(r.loss))).collect(),
            }],
        );
        write_text(&dir.join("loss.svg"), &chart)?;
    }
    let (last, best) = checkpoint_paths(&dir);
    println!(
        "final loss {:.4}, best {:.4} at step {}; checkpoints {} and {}",
        out.reports.last().map_or(f64::NAN, |r| r.loss),
        out.best_loss,
        out.best_step,
        last.display(),
        best.display()
    );
    let mut inputs = config_input(&a.config);
    inputs.push(("dataset", path_string(&a.dataset)));
    if let Some(p) = &a.init {
        inputs.push(("init", path_string(p)));
    }
    write_run_manifest(&dir, "train", g, Some(cfg.seed), &cfg, &inputs)
}

// ---------------------------------------------------------------- shared model loading

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Used only without `--weights`, to build an untrained encoder.
    pub encoder: EncoderConfig,
    pub tracker: TrackerConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::desk(),
            tracker: TrackerConfig::default(),
        }
    }
}

fn load_weights(path: Option<&Path>, encoder: &EncoderConfig, seed: Option<u64>) -> CliResult<EncoderWeights<f32>> {
    match path {
        Some(p) => Ok(EncoderWeights::load(p)?),
        None => {
            let mut cfg = encoder.clone();
            if let Some(s) = seed {
                cfg.weight_seed = s;
            }
            Ok(EncoderWeights::init(&cfg)?)
        }
    }
}

fn model_inputs(config: &Option<PathBuf>, weights: &Option<PathBuf>) -> Vec<(&'static str, String)> {
    let mut inputs = config_input(config);
    if let Some(w) = weights {
        inputs.push(("weights", path_string(w)));
    }
    inputs
}

// ---------------------------------------------------------------- track

#[derive(Args, Debug)]
pub struct TrackArgs {
    /// USTV video.
    #[arg(long)]
    video: PathBuf,
    /// JSON `{"query_frame": q, "points": [[x, y], ...]}`.
    #[arg(long, conflicts_with = "reference", required_unless_present = "reference")]
    queries: Option<PathBuf>,
    /// Trajectory file whose query points are tracked.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Encoder checkpoint; without it an untrained encoder is used.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryFile {
    query_frame: usize,
    points: Vec<[f64; 2]>,
}

pub fn track(g: &GlobalArgs, a: TrackArgs) -> CliResult<()> {
    let cfg = load_config(a.config.as_deref(), ModelConfig::default())?;
    let video = load_video(&a.video)?;
    let (queries, qf) = match (&a.queries, &a.reference) {
        (Some(p), _) => {
            let q: QueryFile = read_json(p)?;
            (q.points.iter().map(|&[x, y]| Point2::new(x, y)).collect::<Vec<_>>(), q.query_frame)
        }
        (None, Some(p)) => {
            let r = load_trajectories(p)?;
            (r.query_points(), r.query_frame())
        }
        (None, None) => unreachable!("clap requires one query source"),
    };
    let weights = load_weights(a.weights.as_deref(), &cfg.encoder, g.seed)?;
    let tracker = Tracker::new(&weights, cfg.tracker.clone())?;
    let start = Instant::now();
    let result = tracker.track(&video, &queries, qf)?;
    eprintln!("tracked {} points in {:.3} s", queries.len(), start.elapsed().as_secs_f64());
    let dir = create_output_dir(g)?;
    save_trajectories(&result.trajectories, dir.join("trajectories.json"))?;
    write_text(&dir.join("confidence.csv"), &result.confidence_csv())?;
    let mut inputs = model_inputs(&a.config, &a.weights);
    inputs.push(("video", path_string(&a.video)));
    for (k, p) in [("queries", &a.queries), ("reference", &a.reference)] {
        if let Some(p) = p {
            inputs.push((k, path_string(p)));
        }
    }
    write_run_manifest(&dir, "track", g, g.seed, &cfg, &inputs)
}

// ---------------------------------------------------------------- eval

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalRow {
    name: String,
    #[serde(flatten)]
    report: MetricReport,
}

pub fn eval(g: &GlobalArgs, a: EvalArgs) -> CliResult<()> {
    let cfg = load_config(a.config.as_deref(), ModelConfig::default())?;
    let data = load_dataset(&a.dataset)?;
    let weights = load_weights(a.weights.as_deref(), &cfg.encoder, g.seed)?;
    let tracker = Tracker::new(&weights, cfg.tracker.clone())?;
    let start = Instant::now();
    let per: Vec<Vec<f64>> = data
        .par_iter()
        .map(|s| {
            let prepared = tracker.prepare(&s.sample)?;
            let r = &s.sample.reference;
            errors_at_frame(&tracker, &prepared, r, r.query_frame())
        })
        .collect::<Result<_, _>>()?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut rows = Vec::new();
    for (s, errors) in data.iter().zip(&per) {
        let r = &s.sample.reference;
        rows.push(EvalRow {
            name: s.entry.name.clone(),
            report: MetricReport::from_errors(errors, r.num_points(), r.num_frames())?,
        });
    }
    let pooled: Vec<f64> = per.iter().flatten().copied().collect();
    rows.push(EvalRow {
        name: "all".into(),
        report: MetricReport::from_errors(
            &pooled,
            data.iter().map(|s| s.sample.reference.num_points()).sum(),
            data.iter().map(|s| s.sample.reference.num_frames()).max().unwrap_or(0),
        )?,
    });
    let csv: Vec<String> = rows.iter().map(|r| format!("{},{}", r.name, r.report.csv_row())).collect();
    let dir = create_output_dir(g)?;
    write_table(&dir, "metrics", g.format, &format!("name,{}", MetricReport::csv_header()), &csv, &rows)?;
    let all = &rows.last().expect("pooled row").report;
    println!("delta_avg {:.4}  mte {:.4} px", all.delta_avg, all.mte);
    eprintln!(
        "average inference time {:.3} s per video",
        elapsed / data.len().max(1) as f64
    );
    let mut inputs = model_inputs(&a.config, &a.weights);
    inputs.push(("dataset", path_string(&a.dataset)));
    write_run_manifest(&dir, "eval", g, g.seed, &cfg, &inputs)
}

// ---------------------------------------------------------------- sweep

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub model: ModelConfig,
    pub num_phases: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            num_phases: 11,
        }
    }
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn sweep(g: &GlobalArgs, a: SweepArgs) -> CliResult<()> {
    let cfg = load_config(a.config.as_deref(), SweepConfig::default())?;
    let samples: Vec<EvalSample> = load_dataset(&a.dataset)?.into_iter().map(|s| s.sample).collect();
    let weights = load_weights(a.weights.as_deref(), &cfg.model.encoder, g.seed)?;
    let tracker = Tracker::new(&weights, cfg.model.tracker.clone())?;
    let results = phase_sweep(&tracker, &samples, cfg.num_phases)?;
    let dir = create_output_dir(g)?;
    let rows: Vec<String> = results
        .iter()
        .map(|r| format!("{},{}", r.phase, r.report.csv_row()))
        .collect();
    write_table(&dir, "sweep", g.format, &format!("phase,{}", MetricReport::csv_header()), &rows, &results)?;
    if let Some(best) = results.iter().min_by(|a, b| a.report.mte.total_cmp(&b.report.mte)) {
        println!("lowest MTE {:.4} px at phase {}", best.report.mte, best.phase);
    }
    if g.plot {
        let pts = |f: fn(&MetricReport) -> f64| results.iter().map(|r| (r.phase, Some(f(&r.report)))).collect();
        write_text(
            &dir.join("sweep_mte.svg"),
            &line_chart("MTE by query phase", "query phase", "MTE (px)", &[Series { label: "MTE", points: pts(|r| r.mte) }]),
        )?;
        write_text(
            &dir.join("sweep_delta.svg"),
            &line_chart(
                "Accuracy by query phase",
                "query phase",
                "delta_avg",
                &[Series { label: "delta_avg", points: pts(|r| r.delta_avg) }],
            ),
        )?;
    }
    let mut inputs = model_inputs(&a.config, &a.weights);
    inputs.push(("dataset", path_string(&a.dataset)));
    write_run_manifest(&dir, "sweep", g, g.seed, &cfg, &inputs)
}

// ---------------------------------------------------------------- gls

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlsConfig {
    pub model: ModelConfig,
    /// Fixed ED/ES frames; `None` picks the longest/shortest contour.
    pub ed_frame: Option<usize>,
    pub es_frame: Option<usize>,
    /// Also track the contour and compare strains.
    pub track: bool,
}

impl Default for GlsConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            ed_frame: None,
            es_frame: None,
            track: true,
        }
    }
}

#[derive(Args, Debug)]
pub struct GlsArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize)]
struct GlsRow {
    name: String,
    reference_gls: f64,
    estimated_gls: Option<f64>,
    ed_frame: usize,
    es_frame: usize,
}

pub fn gls(g: &GlobalArgs, a: GlsArgs) -> CliResult<()> {
    let cfg = load_config(a.config.as_deref(), GlsConfig::default())?;
    let data = load_dataset(&a.dataset)?;
    let weights = load_weights(a.weights.as_deref(), &cfg.model.encoder, g.seed)?;
    let tracker = Tracker::new(&weights, cfg.model.tracker.clone())?;
    let rows: Vec<GlsRow> = data
        .par_iter()
        .map(|s| {
            let r = &s.sample.reference;
            let reference = compute_gls(r, cfg.ed_frame, cfg.es_frame)?;
            let estimated = if cfg.track {
                let est = tracker.track(&s.sample.video, &r.query_points(), r.query_frame())?;
                // Same frames as the reference so the strains are comparable.
                Some(compute_gls(&est.trajectories, Some(reference.ed_frame), Some(reference.es_frame))?.gls_percent)
            } else {
                None
            };
            Ok(GlsRow {
                name: s.entry.name.clone(),
                reference_gls: reference.gls_percent,
                estimated_gls: estimated,
                ed_frame: reference.ed_frame,
                es_frame: reference.es_frame,
            })
        })
        .collect::<Result<_, Error>>()?;
    let dir = create_output_dir(g)?;
    let fmt_opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    let csv: Vec<String> = rows
        .iter()
        .map(|r| format!("{},{},{},{},{}", r.name, r.reference_gls, fmt_opt(r.estimated_gls), r.ed_frame, r.es_frame))
        .collect();
    write_table(&dir, "gls", g.format, "name,reference_gls,estimated_gls,ed_frame,es_frame", &csv, &rows)?;
    if cfg.track {
        let est: Vec<f64> = rows.iter().filter_map(|r| r.estimated_gls).collect();
        let reference: Vec<f64> = rows.iter().map(|r| r.reference_gls).collect();
        let mad = gls_mad(&est, &reference)?;
        write_json(&serde_json::json!({ "gls_mad": mad }), dir.join("gls_summary.json"))?;
        println!("GLS mean absolute deviation {mad:.4} %");
    }
    let mut inputs = model_inputs(&a.config, &a.weights);
    inputs.push(("dataset", path_string(&a.dataset)));
    write_run_manifest(&dir, "gls", g, g.seed, &cfg, &inputs)
}

// ---------------------------------------------------------------- gradcheck

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Force the tiny encoder regardless of the config.
    #[arg(long)]
    tiny: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn gradcheck(g: &GlobalArgs, a: GradcheckArgs) -> CliResult<()> {
    let mut cfg = load_config(a.config.as_deref(), GradCheckConfig::default())?;
    if a.tiny {
        cfg.encoder = EncoderConfig {
            weight_seed: cfg.encoder.weight_seed,
            ..EncoderConfig::tiny()
        };
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let report = run_gradcheck(&cfg)?;
    let dir = create_output_dir(g)?;
    write_json(&report, dir.join("gradcheck.json"))?;
    println!(
        "max relative error {:.3e} over {} parameters (tolerance {:.1e})",
        report.max_rel_err,
        report.entries.len(),
        report.tolerance
    );
    write_run_manifest(&dir, "gradcheck", g, Some(cfg.seed), &cfg, &config_input(&a.config))?;
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Engine(Error::GradientCheck {
            max_rel_err: report.max_rel_err,
            tolerance: report.tolerance,
        }))
    }
}
