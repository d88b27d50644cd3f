//! End-to-end training of the encoder through the differentiable head:
//! masked L1 trajectory loss, one-cycle schedule, AdamW, checkpointing and a
//! finite-difference gradient check.

use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_affine, apply_photometric, make_clips, sample_affine, AugConfig};
use crate::encoder::{Encoder, EncoderConfig, EncoderWeights};
use crate::error::{Error, Result};
use crate::eval::{delta_from_errors, EvalSample};
use crate::geometry::Point2;
use crate::nn::Real;
use crate::synth::{gen_sample, SynthConfig};
use crate::tracker::{head_backward, head_forward, TrackerConfig};
use crate::video::{TrajectorySet, VideoTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub total_steps: usize,
    pub warmup_fraction: f64,
    pub final_lr_divisor: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub batch_size: usize,
    pub points_per_sample: usize,
    pub clip_length: usize,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    /// Checkpoint cadence in steps; the final step is always written.
    pub checkpoint_every: usize,
    pub seed: u64,
    pub precision: Precision,
    pub encoder: EncoderConfig,
    pub tracker: TrackerConfig,
    pub augmentation: AugConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 5e-4,
            total_steps: 1000,
            warmup_fraction: 0.3,
            final_lr_divisor: 1e4,
            weight_decay: 1e-4,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            batch_size: 2,
            points_per_sample: 32,
            clip_length: 12,
            max_grad_norm: None,
            checkpoint_every: 100,
            seed: 0,
            precision: Precision::F32,
            encoder: EncoderConfig::desk(),
            tracker: TrackerConfig::default(),
            augmentation: AugConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0) {
            return Err(Error::InvalidArgument("peak_lr must be positive".into()));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::InvalidArgument("warmup_fraction must lie in (0, 1)".into()));
        }
        if !(self.final_lr_divisor > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument(
                "final_lr_divisor must be positive and weight_decay non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.betas.0) || !(0.0..1.0).contains(&self.betas.1) {
            return Err(Error::InvalidArgument("betas must lie in [0, 1)".into()));
        }
        if self.total_steps == 0 || self.batch_size == 0 || self.points_per_sample == 0 {
            return Err(Error::InvalidArgument(
                "total_steps, batch_size and points_per_sample must be positive".into(),
            ));
        }
        if self.clip_length < 2 || self.checkpoint_every == 0 {
            return Err(Error::InvalidArgument(
                "clip_length must be at least 2 and checkpoint_every positive".into(),
            ));
        }
        self.encoder.validate()?;
        self.augmentation.validate()
    }

    fn clip_augmentation(&self) -> AugConfig {
        AugConfig {
            clip_length: self.clip_length,
            seed: self.seed,
            ..self.augmentation.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    /// Training-batch accuracy at each threshold.
    pub delta: [f64; 5],
}

impl LossReport {
    pub fn csv_header() -> &'static str {
        "step,lr,loss,delta_1,delta_4"
    }

    pub fn csv_row(&self) -> String {
        format!("{},{:e},{},{},{}", self.step, self.lr, self.loss, self.delta[0], self.delta[2])
    }
}

/// Mean of `|Δx| + |Δy|` over entries valid in the reference, excluding the query frame.
pub fn weighted_l1_loss(est: &TrajectorySet, reference: &TrajectorySet) -> Result<f64> {
    if est.num_points() != reference.num_points() || est.num_frames() != reference.num_frames() {
        return Err(Error::ShapeMismatch(format!(
            "estimate {}x{} vs reference {}x{}",
            est.num_points(),
            est.num_frames(),
            reference.num_points(),
            reference.num_frames()
        )));
    }
    let pred: Vec<[f64; 2]> = est.points().iter().map(|p| [p.x, p.y]).collect();
    Ok(l1_loss_and_grad(&pred, reference)?.0)
}

/// Masked L1 loss of `N × T` predictions and its gradient with respect to them.
pub fn l1_loss_and_grad<T: Real>(pred: &[[T; 2]], reference: &TrajectorySet) -> Result<(T, Vec<[T; 2]>)> {
    let (nn, tn, q) = (reference.num_points(), reference.num_frames(), reference.query_frame());
    if pred.len() != nn * tn {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for a {nn}x{tn} reference",
            pred.len()
        )));
    }
    let mut count = 0usize;
    let mut sum = T::zero();
    let mut sign = vec![[T::zero(); 2]; pred.len()];
    for n in 0..nn {
        for t in 0..tn {
            if t == q || !reference.is_valid(n, t) {
                continue;
            }
            let i = n * tn + t;
            let r = reference.point(n, t);
            let d = [pred[i][0] - T::of(r.x), pred[i][1] - T::of(r.y)];
            sum += d[0].abs() + d[1].abs();
            sign[i] = [signum0(d[0]), signum0(d[1])];
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyLoss);
    }
    let inv = T::of(1.0 / count as f64);
    for g in &mut sign {
        g[0] *= inv;
        g[1] *= inv;
    }
    Ok((sum * inv, sign))
}

fn signum0<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn warmup_end(cfg: &TrainConfig) -> usize {
    (cfg.warmup_fraction * (cfg.total_steps - 1) as f64).round() as usize
}

/// Linear warmup from `peak/25` to `peak`, then cosine decay to
/// `peak/final_lr_divisor` at the last step.
pub fn one_cycle_lr(step: usize, cfg: &TrainConfig) -> Result<f64> {
    if step >= cfg.total_steps {
        return Err(Error::InvalidArgument(format!(
            "step {step} outside [0, {})",
            cfg.total_steps
        )));
    }
    let peak = cfg.peak_lr;
    let (start, end) = (peak / 25.0, peak / cfg.final_lr_divisor);
    let lerp = |a: f64, b: f64, f: f64| if f >= 1.0 { b } else { a + (b - a) * f };
    let w = warmup_end(cfg);
    if step <= w {
        if w == 0 {
            return Ok(peak);
        }
        return Ok(lerp(start, peak, step as f64 / w as f64));
    }
    let span = (cfg.total_steps - 1 - w) as f64;
    let f = (step - w) as f64 / span;
    let cos = 0.5 * (1.0 + (std::f64::consts::PI * f).cos());
    Ok(if f >= 1.0 { end } else { end + (peak - end) * cos })
}

/// AdamW with decoupled weight decay; moments are kept in 64-bit.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl AdamW {
    pub fn new(num_params: usize, betas: (f64, f64), eps: f64, weight_decay: f64) -> Self {
        Self {
            betas,
            eps,
            weight_decay,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            steps: 0,
        }
    }

    pub fn step<T: Real>(&mut self, params: &mut [T], grad: &[T], lr: f64) {
        self.steps += 1;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.steps as i32);
        let c2 = 1.0 - b2.powi(self.steps as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            let g = g.as_f64();
            let mut x = p.as_f64();
            x -= lr * self.weight_decay * x;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            x -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            *p = T::of(x);
        }
    }
}

/// One prepared training clip.
#[derive(Clone, Debug)]
pub struct Clip {
    pub video: VideoTensor,
    pub reference: TrajectorySet,
}

/// Loss, parameter gradient and predictions for one clip.
pub struct ClipGradient<T> {
    pub loss: T,
    pub grad: Vec<T>,
    pub predictions: Vec<[T; 2]>,
}

fn encoder_input(video: &VideoTensor, resolution: usize) -> Result<VideoTensor> {
    if video.height() == resolution && video.width() == resolution {
        Ok(video.clone())
    } else {
        video.resize(resolution, resolution)
    }
}

/// Loss of one clip without recording anything.
pub fn clip_loss<T: Real>(weights: &EncoderWeights<T>, clip: &Clip, tracker: &TrackerConfig) -> Result<T> {
    let r = weights.config.resolution;
    let input = encoder_input(&clip.video, r)?;
    let encoder = Encoder::new(weights)?;
    let pyr = encoder.encode_frames(input.data(), input.num_frames(), r, r)?;
    let queries = clip.reference.query_points();
    let fwd = head_forward(
        &pyr,
        (clip.video.height(), clip.video.width()),
        &queries,
        clip.reference.query_frame(),
        tracker,
    );
    Ok(l1_loss_and_grad(&fwd.predictions, &clip.reference)?.0)
}

/// Loss and gradient of `loss_scale · loss` for one clip.
pub fn clip_loss_and_grad<T: Real>(
    weights: &EncoderWeights<T>,
    clip: &Clip,
    tracker: &TrackerConfig,
    loss_scale: T,
) -> Result<ClipGradient<T>> {
    let r = weights.config.resolution;
    let input = encoder_input(&clip.video, r)?;
    let encoder = Encoder::new(weights)?;
    let (pyr, tape) = encoder.encode_frames_recorded(input.data(), input.num_frames(), r, r)?;
    let queries = clip.reference.query_points();
    let fwd = head_forward(
        &pyr,
        (clip.video.height(), clip.video.width()),
        &queries,
        clip.reference.query_frame(),
        tracker,
    );
    let (loss, mut dpred) = l1_loss_and_grad(&fwd.predictions, &clip.reference)?;
    for g in &mut dpred {
        g[0] *= loss_scale;
        g[1] *= loss_scale;
    }
    let dpyr = head_backward(&pyr, &fwd, &dpred, tracker);
    let grad = encoder.backward(&tape, &dpyr);
    Ok(ClipGradient {
        loss,
        grad,
        predictions: fwd.predictions,
    })
}

/// Names the layer of the first non-finite gradient entry.
pub fn check_gradient<T: Real>(weights: &EncoderWeights<T>, grad: &[T]) -> Result<()> {
    match grad.iter().position(|g| !g.is_finite()) {
        Some(i) => Err(Error::NonFiniteGradient {
            layer: weights.layer_of(i).to_string(),
        }),
        None => Ok(()),
    }
}

/// Draws one augmented training clip for `(step, slot)`.
pub fn draw_clip(samples: &[EvalSample], cfg: &TrainConfig, step: usize, slot: usize) -> Result<Clip> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let aug = cfg.clip_augmentation();
    let draw_seed = (step as u64) << 16 | slot as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(draw_seed);
    // A few redraws cover clips whose points all leave the frame.
    for _ in 0..8 {
        let sample = &samples[rng.random_range(0..samples.len())];
        let clip_seed: u64 = rng.random();
        let clips = make_clips(sample.video.num_frames(), &aug, clip_seed)?;
        let spec = &clips[rng.random_range(0..clips.len())];
        let (video, reference) = spec.extract(&sample.video, &sample.reference)?;
        let affine = sample_affine(&aug, clip_seed, video.width())?;
        let (video, reference) = apply_affine(&video, &reference, &affine)?;
        if reference.num_points() == 0 {
            continue;
        }
        let video = apply_photometric(&video, &aug, clip_seed)?;
        let keep = cfg.points_per_sample.min(reference.num_points());
        let mut idx = sample_indices(&mut rng, reference.num_points(), keep).into_vec();
        idx.sort_unstable();
        let reference = reference.subset_points(&idx)?;
        if (0..reference.num_points())
            .any(|n| (0..reference.num_frames()).any(|t| t != reference.query_frame() && reference.is_valid(n, t)))
        {
            return Ok(Clip { video, reference });
        }
    }
    Err(Error::EmptyLoss)
}

/// Result of [`fit`].
pub struct FitOutcome {
    pub weights: EncoderWeights<f32>,
    pub best_weights: EncoderWeights<f32>,
    pub best_loss: f64,
    pub best_step: usize,
    pub reports: Vec<LossReport>,
}

/// Checkpoint paths inside an output directory.
pub fn checkpoint_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("checkpoint_last.json"), dir.join("checkpoint_best.json"))
}

/// Trains from `init` (or a fresh initialization) on `samples`.
///
/// With `checkpoint_dir`, the latest and best weights are written every
/// `checkpoint_every` steps and at the end; a diverged run keeps them.
pub fn fit(
    samples: &[EvalSample],
    cfg: &TrainConfig,
    init: Option<EncoderWeights<f32>>,
    checkpoint_dir: Option<&Path>,
    mut on_step: impl FnMut(&LossReport),
) -> Result<FitOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let weights = match init {
        Some(w) => {
            w.validate()?;
            w
        }
        None => EncoderWeights::<f32>::init(&cfg.encoder)?,
    };
    match cfg.precision {
        Precision::F32 => fit_typed::<f32>(samples, cfg, weights, checkpoint_dir, &mut on_step),
        Precision::F64 => fit_typed::<f64>(samples, cfg, weights.cast(), checkpoint_dir, &mut on_step),
    }
}

fn fit_typed<T: Real>(
    samples: &[EvalSample],
    cfg: &TrainConfig,
    mut weights: EncoderWeights<T>,
    checkpoint_dir: Option<&Path>,
    on_step: &mut dyn FnMut(&LossReport),
) -> Result<FitOutcome> {
    let mut opt = AdamW::new(weights.num_params(), cfg.betas, cfg.adam_eps, cfg.weight_decay);
    let mut best: Option<(f64, usize, EncoderWeights<f32>)> = None;
    let mut reports = Vec::with_capacity(cfg.total_steps);
    for step in 0..cfg.total_steps {
        let lr = one_cycle_lr(step, cfg)?;
        let clips: Vec<Clip> = (0..cfg.batch_size)
            .into_par_iter()
            .map(|slot| draw_clip(samples, cfg, step, slot))
            .collect::<Result<_>>()?;
        let mut grad = vec![T::zero(); weights.num_params()];
        let mut loss = 0.0;
        let mut errors = Vec::new();
        let inv_batch = 1.0 / cfg.batch_size as f64;
        for clip in &clips {
            let g = clip_loss_and_grad(&weights, clip, &cfg.tracker, T::of(inv_batch))?;
            loss += g.loss.as_f64() * inv_batch;
            for (a, b) in grad.iter_mut().zip(&g.grad) {
                *a += *b;
            }
            collect_errors(&g.predictions, &clip.reference, &mut errors);
        }
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        check_gradient(&weights, &grad)?;
        if let Some(limit) = cfg.max_grad_norm {
            let norm = grad.iter().map(|g| g.as_f64().powi(2)).sum::<f64>().sqrt();
            if norm > limit {
                let s = T::of(limit / norm);
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        let report = LossReport {
            step,
            lr,
            loss,
            delta: delta_from_errors(&errors)?.0,
        };
        on_step(&report);
        reports.push(report);
        if best.as_ref().is_none_or(|(b, _, _)| loss < *b) {
            best = Some((loss, step, weights.cast()));
        }
        opt.step(&mut weights.params, &grad, lr);
        if weights.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        let last = step + 1 == cfg.total_steps;
        if let Some(dir) = checkpoint_dir {
            if last || (step + 1) % cfg.checkpoint_every == 0 {
                let (last_path, best_path) = checkpoint_paths(dir);
                weights.cast::<f32>().save(&last_path)?;
                if let Some((_, _, bw)) = &best {
                    bw.save(&best_path)?;
                }
            }
        }
    }
    let (best_loss, best_step, best_weights) = best.expect("at least one step ran");
    Ok(FitOutcome {
        weights: weights.cast(),
        best_weights,
        best_loss,
        best_step,
        reports,
    })
}

fn collect_errors<T: Real>(pred: &[[T; 2]], reference: &TrajectorySet, out: &mut Vec<f64>) {
    let tn = reference.num_frames();
    for n in 0..reference.num_points() {
        for t in 0..tn {
            if t != reference.query_frame() && reference.is_valid(n, t) {
                let p = pred[n * tn + t];
                out.push(Point2::new(p[0].as_f64(), p[1].as_f64()).distance(reference.point(n, t)));
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub encoder: EncoderConfig,
    pub num_frames: usize,
    pub num_points: usize,
    /// Parameters compared; at least one from every layer.
    pub num_params: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::tiny(),
            num_frames: 3,
            num_points: 2,
            num_params: 64,
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub index: usize,
    pub layer: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// The clip the gradient check differentiates: a short synthetic sequence.
pub fn gradcheck_clip(cfg: &GradCheckConfig) -> Result<Clip> {
    let r = cfg.encoder.resolution;
    let synth = SynthConfig {
        num_videos: 1,
        num_frames: cfg.num_frames,
        height: r,
        width: r,
        points_per_video: cfg.num_points,
        margin: 4.0,
        max_displacement: 3.0,
        seed: cfg.seed,
        ..SynthConfig::default()
    };
    let s = gen_sample(&synth, 0)?;
    Ok(Clip {
        video: s.video,
        reference: s.trajectories,
    })
}

/// Compares analytic gradients with central differences in 64-bit.
pub fn gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let clip = gradcheck_clip(cfg)?;
    let mut weights = EncoderWeights::<f64>::init(&EncoderConfig {
        weight_seed: cfg.seed,
        ..cfg.encoder.clone()
    })?;
    // Non-trivial norm parameters so their gradients are generic.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    for layer in weights.layers.clone() {
        if !matches!(layer.kind, crate::encoder::LayerKind::Conv) {
            for p in &mut weights.params[layer.range()] {
                *p += rng.random_range(-0.2..0.2);
            }
        }
    }
    let tracker = TrackerConfig::default();
    let analytic = clip_loss_and_grad(&weights, &clip, &tracker, 1.0)?.grad;
    let mut chosen: Vec<usize> = weights
        .layers
        .iter()
        .map(|l| l.offset + rng.random_range(0..l.len()))
        .collect();
    while chosen.len() < cfg.num_params {
        chosen.push(rng.random_range(0..weights.num_params()));
    }
    let entries: Vec<GradCheckEntry> = chosen
        .iter()
        .map(|&i| {
            let mut w = weights.clone();
            let x = w.params[i];
            w.params[i] = x + cfg.step;
            let up = clip_loss(&w, &clip, &tracker)?;
            w.params[i] = x - cfg.step;
            let down = clip_loss(&w, &clip, &tracker)?;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = analytic[i];
            let rel_err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.abs_floor);
            Ok(GradCheckEntry {
                index: i,
                layer: weights.layer_of(i).to_string(),
                analytic: a,
                numeric,
                rel_err,
            })
        })
        .collect::<Result<_>>()?;
    let max_rel_err = entries.iter().map(|e| e.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_err,
        tolerance: cfg.tolerance,
        entries,
    })
}
