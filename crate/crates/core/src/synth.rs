//! Synthetic speckle videos with analytic cyclic affine motion and exact
//! ground-truth trajectories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Affine2, Point2};
use crate::video::{in_frame, Image, TrajectorySet, VideoTensor, MIN_SIDE};

/// Minimum determinant of the linear part of any generated map.
pub const MIN_MOTION_DET: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeckleParams {
    pub noise_seed: u64,
    /// Gaussian smoothing of the white-noise field, pixels.
    pub smoothing_sigma: f64,
    /// Exponent applied after normalization.
    pub contrast_gamma: f64,
    pub additive_noise_sigma: f64,
    pub multiplicative_noise_sigma: f64,
}

impl Default for SpeckleParams {
    fn default() -> Self {
        Self {
            noise_seed: 0,
            smoothing_sigma: 1.5,
            contrast_gamma: 1.0,
            additive_noise_sigma: 0.02,
            multiplicative_noise_sigma: 0.05,
        }
    }
}

impl SpeckleParams {
    pub fn noiseless(noise_seed: u64) -> Self {
        Self {
            noise_seed,
            additive_noise_sigma: 0.0,
            multiplicative_noise_sigma: 0.0,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.smoothing_sigma >= 0.0
            && self.additive_noise_sigma >= 0.0
            && self.multiplicative_noise_sigma >= 0.0
            && self.contrast_gamma > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(
                "speckle sigmas must be non-negative and contrast_gamma positive".into(),
            ));
        }
        Ok(())
    }
}

/// 1D Gaussian kernel truncated at three sigmas, normalized to unit sum.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable convolution with edge clamping; `kernel` has odd length.
pub(crate) fn convolve_separable(data: &[f64], h: usize, w: usize, kx: &[f64], ky: &[f64]) -> Vec<f64> {
    let rx = (kx.len() / 2) as isize;
    let ry = (ky.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in kx.iter().enumerate() {
                let sx = (x as isize + i as isize - rx).clamp(0, w as isize - 1) as usize;
                acc += k * data[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in ky.iter().enumerate() {
                let sy = (y as isize + i as isize - ry).clamp(0, h as isize - 1) as usize;
                acc += k * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Smoothed, rectified, min-max normalized white noise.
pub fn gen_speckle_image(params: &SpeckleParams, h: usize, w: usize) -> Result<Image> {
    params.validate()?;
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(Error::InvalidArgument(format!("speckle image {h}x{w} below {MIN_SIDE}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.noise_seed);
    let noise: Vec<f64> = (0..h * w).map(|_| StandardNormal.sample(&mut rng)).collect();
    let smooth = if params.smoothing_sigma > 0.0 {
        let k = gaussian_kernel(params.smoothing_sigma);
        convolve_separable(&noise, h, w, &k, &k)
    } else {
        noise
    };
    let mag: Vec<f64> = smooth.iter().map(|v| v.abs()).collect();
    let lo = mag.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let data = mag
        .iter()
        .map(|&v| {
            let n = if span > 0.0 { (v - lo) / span } else { 0.0 };
            n.powf(params.contrast_gamma) as f32
        })
        .collect();
    Image::new(h, w, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CyclicMotionParams {
    pub center: Point2,
    /// Vertical scale at full activation (0.92 is an 8% contraction).
    pub peak_scale: f64,
    /// Horizontal scale at full activation; `None` uses `peak_scale`.
    pub peak_scale_x: Option<f64>,
    pub peak_rotation: f64,
    pub peak_shear: f64,
    pub peak_translation: Point2,
    pub systole_fraction: f64,
    pub diastasis_fraction: f64,
}

impl Default for CyclicMotionParams {
    fn default() -> Self {
        Self {
            center: Point2::new(32.0, 32.0),
            peak_scale: 0.92,
            peak_scale_x: None,
            peak_rotation: 0.0,
            peak_shear: 0.0,
            peak_translation: Point2::new(0.0, 0.0),
            systole_fraction: 0.33,
            diastasis_fraction: 0.2,
        }
    }
}

/// Phase at the middle of the quiescent window.
pub const DIASTASIS_PHASE: f64 = 0.75;
/// Depth of the overshoot lobes around the quiescent window.
const LOBE_DEPTH: f64 = 0.15;
/// Activation at the start and end of the quiescent window.
const PLATEAU_LEVELS: (f64, f64) = (0.005, 0.02);

/// Breakpoints of the activation profile over one cycle.
#[derive(Clone, Copy, Debug)]
struct Timing {
    systole: f64,
    relax_end: f64,
    rest_start: f64,
    rest_end: f64,
}

impl CyclicMotionParams {
    /// Linear target `M = rotation · shear · scale`.
    pub fn peak_linear(&self) -> Affine2 {
        let sx = self.peak_scale_x.unwrap_or(self.peak_scale);
        Affine2::rotation_deg(self.peak_rotation)
            .compose(&Affine2::linear(1.0, self.peak_shear, 0.0, 1.0))
            .compose(&Affine2::linear(sx, 0.0, 0.0, self.peak_scale))
    }

    fn timing(&self) -> Result<Timing> {
        let s = self.systole_fraction;
        let d = self.diastasis_fraction;
        let rest_start = DIASTASIS_PHASE - d / 2.0;
        let rest_end = DIASTASIS_PHASE + d / 2.0;
        // Relaxation length chosen so the cycle spends as long above the
        // quiescent level as it does in the overshoot lobes below it.
        let relax = (rest_start + (1.0 - rest_end) - 2.0 * s) / 2.0;
        let relax_end = s + relax;
        let ok = s > 0.0
            && d > 0.0
            && rest_end < 1.0
            && relax > 0.0
            && relax_end < rest_start;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "cycle timing systole {s} / diastasis {d} leaves no room for relaxation"
            )));
        }
        Ok(Timing {
            systole: s,
            relax_end,
            rest_start,
            rest_end,
        })
    }

    /// Activation at normalized phase `phase ∈ [0, 1]`: 0 at both ends, 1 at
    /// the end of systole, near 0 across the quiescent window.
    pub fn activation(&self, phase: f64) -> Result<f64> {
        let tm = self.timing()?;
        Ok(activation_with(&tm, phase))
    }

    /// Map at activation `a`: `p -> c + (I + a (M − I)) (p − c) + a d`.
    pub fn map_at(&self, a: f64) -> Affine2 {
        if a == 0.0 {
            return Affine2::identity();
        }
        let m = self.peak_linear().m;
        let lin = Affine2::linear(
            1.0 + a * (m[0] - 1.0),
            a * m[1],
            a * m[3],
            1.0 + a * (m[4] - 1.0),
        );
        Affine2::translation(a * self.peak_translation.x, a * self.peak_translation.y)
            .compose(&Affine2::about(self.center, lin))
    }
}

fn activation_with(tm: &Timing, phase: f64) -> f64 {
    use std::f64::consts::{FRAC_PI_2, PI};
    let (p0, p1) = PLATEAU_LEVELS;
    if phase <= 0.0 || phase >= 1.0 {
        0.0
    } else if phase <= tm.systole {
        (FRAC_PI_2 * phase / tm.systole).sin()
    } else if phase <= tm.relax_end {
        (FRAC_PI_2 * (phase - tm.systole) / (tm.relax_end - tm.systole)).cos()
    } else if phase <= tm.rest_start {
        let u = (phase - tm.relax_end) / (tm.rest_start - tm.relax_end);
        -LOBE_DEPTH * (PI * u).sin() + p0 * u
    } else if phase <= tm.rest_end {
        p0 + (p1 - p0) * (phase - tm.rest_start) / (tm.rest_end - tm.rest_start)
    } else {
        let u = (phase - tm.rest_end) / (1.0 - tm.rest_end);
        p1 * (1.0 - u) - LOBE_DEPTH * (PI * u).sin()
    }
}

/// Normalized phase of frame `t` in a `num_frames` cycle.
pub fn frame_phase(t: usize, num_frames: usize) -> f64 {
    t as f64 / (num_frames - 1) as f64
}

/// One map per frame; the first and last are the identity.
pub fn gen_cyclic_motion(params: &CyclicMotionParams, num_frames: usize) -> Result<Vec<Affine2>> {
    if num_frames < 3 {
        return Err(Error::InvalidArgument(format!(
            "cyclic motion needs at least 3 frames, got {num_frames}"
        )));
    }
    let tm = params.timing()?;
    let maps: Vec<Affine2> = (0..num_frames)
        .map(|t| params.map_at(activation_with(&tm, frame_phase(t, num_frames))))
        .collect();
    for m in &maps {
        let det = m.det();
        if !(det > MIN_MOTION_DET) {
            return Err(Error::SingularTransform { det });
        }
    }
    Ok(maps)
}

/// Warps `texture` by each map (backward sampling), adds noise, and returns
/// the video with exact trajectories of `queries` (given at frame 0).
pub fn render_sequence(
    texture: &Image,
    motions: &[Affine2],
    speckle: &SpeckleParams,
    queries: &[Point2],
) -> Result<(VideoTensor, TrajectorySet)> {
    speckle.validate()?;
    let (h, w) = (texture.height, texture.width);
    if let Some(n) = queries.iter().position(|&p| !in_frame(p, h, w)) {
        return Err(Error::InvalidQueryPoint { point: n });
    }
    let inverses = motions
        .iter()
        .map(|m| m.inverse().ok_or(Error::SingularTransform { det: m.det() }))
        .collect::<Result<Vec<_>>>()?;
    let frames: Vec<Image> = inverses
        .par_iter()
        .enumerate()
        .map(|(t, inv)| render_frame(texture, inv, speckle, t))
        .collect();
    let video = VideoTensor::from_frames(&frames)?;

    let tn = motions.len();
    let mut points = Vec::with_capacity(queries.len() * tn);
    let mut valid = Vec::with_capacity(queries.len() * tn);
    for &q in queries {
        for m in motions {
            let p = m.apply(q);
            points.push(p);
            valid.push(in_frame(p, h, w));
        }
    }
    // Frame 0 always holds the query itself.
    for (n, &q) in queries.iter().enumerate() {
        points[n * tn] = q;
        valid[n * tn] = true;
    }
    let trajs = TrajectorySet::new(queries.len(), tn, points, valid, 0)?;
    Ok((video, trajs))
}

fn render_frame(texture: &Image, inverse: &Affine2, speckle: &SpeckleParams, t: usize) -> Image {
    let (h, w) = (texture.height, texture.width);
    let identity = inverse.is_identity();
    let mut data: Vec<f32> = if identity {
        texture.data.clone()
    } else {
        let mut d = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let src = inverse.apply(Point2::new(x as f64, y as f64));
                d.push(texture.sample(src.x, src.y));
            }
        }
        d
    };
    let (ms, asg) = (speckle.multiplicative_noise_sigma, speckle.additive_noise_sigma);
    if ms > 0.0 || asg > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(speckle.noise_seed);
        rng.set_stream(t as u64 + 1);
        for v in data.iter_mut() {
            let m: f64 = StandardNormal.sample(&mut rng);
            let a: f64 = StandardNormal.sample(&mut rng);
            *v = ((*v as f64) * (1.0 + ms * m) + asg * a).clamp(0.0, 1.0) as f32;
        }
    }
    Image {
        height: h,
        width: w,
        data,
    }
}

/// Ground truth re-anchored at another frame: `p_t = Φ_t(Φ_q⁻¹(p_q))`.
pub fn reanchor(motions: &[Affine2], query_frame: usize, queries: &[Point2]) -> Result<Vec<Vec<Point2>>> {
    let mq = motions
        .get(query_frame)
        .ok_or_else(|| Error::InvalidArgument(format!("query frame {query_frame} out of range")))?;
    let inv = mq.inverse().ok_or(Error::SingularTransform { det: mq.det() })?;
    Ok(queries
        .iter()
        .map(|&p| {
            let p0 = inv.apply(p);
            motions.iter().map(|m| m.apply(p0)).collect()
        })
        .collect())
}

/// Ranges from which each synthetic video's motion is drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_videos: usize,
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
    pub points_per_video: usize,
    /// Queries are drawn at least this far inside the frame.
    pub margin: f64,
    /// Largest displacement of any query over the cycle, pixels.
    pub max_displacement: f64,
    pub scale_range: (f64, f64),
    /// Horizontal scale range; `None` shares the vertical draw.
    pub scale_x_range: Option<(f64, f64)>,
    pub rotation_range: (f64, f64),
    pub shear_range: (f64, f64),
    pub translation_x_range: (f64, f64),
    pub translation_y_range: (f64, f64),
    /// Motion center, as fractions of width and height.
    pub center_fraction: (f64, f64),
    pub center_jitter: f64,
    pub speckle: SpeckleParams,
    pub systole_fraction: f64,
    pub diastasis_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_videos: 8,
            num_frames: 32,
            height: 64,
            width: 64,
            points_per_video: 48,
            margin: 6.0,
            max_displacement: 6.0,
            scale_range: (0.88, 1.0),
            scale_x_range: None,
            rotation_range: (-6.0, 6.0),
            shear_range: (-0.06, 0.06),
            translation_x_range: (-2.5, 2.5),
            translation_y_range: (-2.5, 2.5),
            center_fraction: (0.5, 0.5),
            center_jitter: 6.0,
            speckle: SpeckleParams::default(),
            systole_fraction: 0.33,
            diastasis_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Apex-to-base style motion: contraction toward a center near the top edge
    /// plus vertical translation, so displacements are nearly all vertical and
    /// share one direction.
    pub fn vertically_biased() -> Self {
        Self {
            scale_range: (0.86, 0.94),
            scale_x_range: Some((0.985, 1.0)),
            rotation_range: (-1.0, 1.0),
            shear_range: (0.0, 0.0),
            translation_x_range: (-0.2, 0.2),
            translation_y_range: (-1.5, -0.5),
            center_fraction: (0.5, 0.0),
            center_jitter: 2.0,
            ..Self::default()
        }
    }
}

/// One generated sample with its analytic motion.
#[derive(Clone, Debug)]
pub struct SynthSample {
    pub video: VideoTensor,
    pub trajectories: TrajectorySet,
    pub motion: CyclicMotionParams,
    pub maps: Vec<Affine2>,
    pub speckle: SpeckleParams,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

const MAX_MOTION_DRAWS: usize = 64;

/// Generates sample `index` of a dataset; independent of every other sample.
pub fn gen_sample(cfg: &SynthConfig, index: usize) -> Result<SynthSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let (h, w) = (cfg.height, cfg.width);
    let lo = Point2::new(cfg.margin, cfg.margin);
    let hi = Point2::new(w as f64 - 1.0 - cfg.margin, h as f64 - 1.0 - cfg.margin);
    if !(hi.x > lo.x && hi.y > lo.y) {
        return Err(Error::InvalidArgument("margin leaves no room for queries".into()));
    }
    let queries: Vec<Point2> = (0..cfg.points_per_video)
        .map(|_| Point2::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y)))
        .collect();
    let speckle = SpeckleParams {
        noise_seed: rng.random(),
        ..cfg.speckle.clone()
    };
    for _ in 0..MAX_MOTION_DRAWS {
        let sy = uniform(&mut rng, cfg.scale_range);
        let sx = cfg.scale_x_range.map(|r| uniform(&mut rng, r));
        let jitter = (cfg.center_jitter, cfg.center_jitter);
        let motion = CyclicMotionParams {
            center: Point2::new(
                cfg.center_fraction.0 * (w - 1) as f64 + uniform(&mut rng, (-jitter.0, jitter.0)),
                cfg.center_fraction.1 * (h - 1) as f64 + uniform(&mut rng, (-jitter.1, jitter.1)),
            ),
            peak_scale: sy,
            peak_scale_x: sx,
            peak_rotation: uniform(&mut rng, cfg.rotation_range),
            peak_shear: uniform(&mut rng, cfg.shear_range),
            peak_translation: Point2::new(
                uniform(&mut rng, cfg.translation_x_range),
                uniform(&mut rng, cfg.translation_y_range),
            ),
            systole_fraction: cfg.systole_fraction,
            diastasis_fraction: cfg.diastasis_fraction,
        };
        let maps = gen_cyclic_motion(&motion, cfg.num_frames)?;
        let biggest = maps
            .iter()
            .flat_map(|m| queries.iter().map(move |&q| m.apply(q).distance(q)))
            .fold(0.0, f64::max);
        if biggest > cfg.max_displacement {
            continue;
        }
        let texture = gen_speckle_image(&speckle, h, w)?;
        let (video, trajectories) = render_sequence(&texture, &maps, &speckle, &queries)?;
        return Ok(SynthSample {
            video,
            trajectories,
            motion,
            maps,
            speckle,
        });
    }
    Err(Error::InvalidArgument(format!(
        "no motion within {} px after {MAX_MOTION_DRAWS} draws",
        cfg.max_displacement
    )))
}

/// Samples `start .. start + count`, generated in parallel.
pub fn gen_dataset(cfg: &SynthConfig, start: usize, count: usize) -> Result<Vec<SynthSample>> {
    (start..start + count)
        .into_par_iter()
        .map(|i| gen_sample(cfg, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speckle_is_seeded_and_normalized() {
        let p = SpeckleParams::default();
        let a = gen_speckle_image(&p, 32, 40).unwrap();
        assert_eq!(a, gen_speckle_image(&p, 32, 40).unwrap());
        let lo = a.data.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = a.data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn unsmoothed_speckle_is_uncorrelated() {
        let p = SpeckleParams {
            smoothing_sigma: 0.0,
            ..SpeckleParams::default()
        };
        let img = gen_speckle_image(&p, 64, 64).unwrap();
        let d: Vec<f64> = img.data.iter().map(|&v| v as f64).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        let mut cov = 0.0;
        for y in 0..64 {
            for x in 0..63 {
                cov += (d[y * 64 + x] - mean) * (d[y * 64 + x + 1] - mean);
            }
        }
        assert!((cov / var).abs() < 0.2);
    }

    #[test]
    fn cycle_closes_on_identity() {
        let p = CyclicMotionParams {
            peak_rotation: 5.0,
            peak_shear: 0.1,
            peak_translation: Point2::new(2.0, -1.0),
            ..Default::default()
        };
        for t in [3, 17, 32, 84] {
            let maps = gen_cyclic_motion(&p, t).unwrap();
            assert!(maps[0].is_identity());
            assert!(maps[t - 1].is_identity());
        }
    }

    #[test]
    fn full_activation_scales_about_center() {
        let p = CyclicMotionParams {
            peak_scale: 0.9,
            center: Point2::new(32.0, 32.0),
            ..Default::default()
        };
        let q = p.map_at(1.0).apply(Point2::new(32.0, 12.0));
        assert!((q.x - 32.0).abs() < 1e-12 && (q.y - 14.0).abs() < 1e-12);
        assert!((p.activation(0.33).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quiescent_window_stays_near_zero() {
        let p = CyclicMotionParams::default();
        for i in 0..=200 {
            let phase = 0.65 + 0.2 * i as f64 / 200.0;
            assert!(p.activation(phase).unwrap().abs() <= 0.02);
        }
    }

    #[test]
    fn degenerate_timing_rejected() {
        let p = CyclicMotionParams {
            systole_fraction: 0.6,
            ..Default::default()
        };
        assert!(gen_cyclic_motion(&p, 10).is_err());
        let p = CyclicMotionParams {
            peak_scale: -0.5,
            ..Default::default()
        };
        assert!(matches!(gen_cyclic_motion(&p, 40), Err(Error::SingularTransform { .. })));
    }

    #[test]
    fn identity_motion_reproduces_texture() {
        let tex = gen_speckle_image(&SpeckleParams::noiseless(3), 24, 24).unwrap();
        let maps = vec![Affine2::identity(); 4];
        let q = [Point2::new(5.0, 7.5)];
        let (v, tr) = render_sequence(&tex, &maps, &SpeckleParams::noiseless(3), &q).unwrap();
        for t in 0..4 {
            assert_eq!(v.frame(t), &tex.data[..]);
            assert_eq!(tr.point(0, t), q[0]);
        }
        let (noisy, tr) = render_sequence(&tex, &maps, &SpeckleParams::default(), &q).unwrap();
        assert_ne!(noisy.frame(1), &tex.data[..]);
        assert!((0..4).all(|t| tr.point(0, t) == q[0]));
    }

    #[test]
    fn translation_trajectory() {
        let tex = gen_speckle_image(&SpeckleParams::noiseless(1), 32, 64).unwrap();
        let maps: Vec<Affine2> = (0..5).map(|t| Affine2::translation(2.0 * t as f64, 0.0)).collect();
        let (_, tr) = render_sequence(&tex, &maps, &SpeckleParams::noiseless(1), &[Point2::new(10.0, 10.0)]).unwrap();
        for t in 0..5 {
            assert_eq!(tr.point(0, t), Point2::new(10.0 + 2.0 * t as f64, 10.0));
        }
    }

    #[test]
    fn reanchoring_is_consistent() {
        let p = CyclicMotionParams {
            peak_rotation: 4.0,
            peak_translation: Point2::new(1.0, 2.0),
            ..Default::default()
        };
        let maps = gen_cyclic_motion(&p, 20).unwrap();
        let q0 = [Point2::new(20.0, 30.0), Point2::new(41.0, 12.0)];
        let base = reanchor(&maps, 0, &q0).unwrap();
        for qf in [5, 13, 19] {
            let at: Vec<Point2> = base.iter().map(|tr| tr[qf]).collect();
            let again = reanchor(&maps, qf, &at).unwrap();
            for (a, b) in again.iter().flatten().zip(base.iter().flatten()) {
                assert!(a.distance(*b) < 1e-9);
            }
        }
    }

    #[test]
    fn dataset_samples_respect_displacement_limit() {
        let cfg = SynthConfig {
            num_frames: 16,
            points_per_video: 8,
            ..Default::default()
        };
        let s = gen_sample(&cfg, 3).unwrap();
        let again = gen_sample(&cfg, 3).unwrap();
        assert_eq!(s.video, again.video);
        for n in 0..8 {
            let q = s.trajectories.point(n, 0);
            for t in 0..16 {
                assert!(s.trajectories.point(n, t).distance(q) <= 6.0);
            }
        }
    }
}
