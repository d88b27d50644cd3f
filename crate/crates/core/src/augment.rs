//! Paired video/trajectory augmentation: affine warps shared by a whole video,
//! photometric perturbations, clip extraction with frame skipping, reversal
//! and random query frames.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Affine2, Point2};
use crate::synth::{convolve_separable, gaussian_kernel};
use crate::video::{Image, TrajectorySet, VideoTensor};

/// Smallest accepted `|det|` of the composed linear part.
pub const MIN_AFFINE_DET: f64 = 0.05;
const MAX_AFFINE_DRAWS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugConfig {
    pub prob_scale: f64,
    pub prob_translate: f64,
    pub prob_shear: f64,
    pub prob_rotate: f64,
    pub prob_flip_h: f64,
    pub prob_flip_v: f64,
    /// Rotation drawn uniformly in `±rotation_limit` degrees.
    pub rotation_limit: f64,
    /// Per-axis scale range.
    pub scale_range: (f64, f64),
    /// Translation limit as a fraction of the frame size.
    pub translation_range: f64,
    /// Per-axis shear range.
    pub shear_range: (f64, f64),
    pub prob_blur: f64,
    pub prob_sharpen: f64,
    pub prob_emboss: f64,
    pub prob_brightness_contrast: f64,
    pub prob_noise: f64,
    pub prob_compression: f64,
    pub reverse_probability: f64,
    /// Inclusive range of skipped frames between clip frames.
    pub skip_range: (usize, usize),
    pub clip_length: usize,
    pub seed: u64,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            prob_scale: 0.5,
            prob_translate: 0.5,
            prob_shear: 0.5,
            prob_rotate: 0.5,
            prob_flip_h: 0.5,
            prob_flip_v: 0.5,
            rotation_limit: 120.0,
            scale_range: (0.8, 1.2),
            translation_range: 0.1,
            shear_range: (-0.2, 0.2),
            prob_blur: 0.3,
            prob_sharpen: 0.3,
            prob_emboss: 0.2,
            prob_brightness_contrast: 0.3,
            prob_noise: 0.3,
            prob_compression: 0.2,
            reverse_probability: 0.2,
            skip_range: (0, 5),
            clip_length: 36,
            seed: 0,
        }
    }
}

impl AugConfig {
    /// Every augmentation off.
    pub fn disabled() -> Self {
        Self {
            prob_scale: 0.0,
            prob_translate: 0.0,
            prob_shear: 0.0,
            prob_rotate: 0.0,
            prob_flip_h: 0.0,
            prob_flip_v: 0.0,
            prob_blur: 0.0,
            prob_sharpen: 0.0,
            prob_emboss: 0.0,
            prob_brightness_contrast: 0.0,
            prob_noise: 0.0,
            prob_compression: 0.0,
            reverse_probability: 0.0,
            skip_range: (0, 0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.prob_scale,
            self.prob_translate,
            self.prob_shear,
            self.prob_rotate,
            self.prob_flip_h,
            self.prob_flip_v,
            self.prob_blur,
            self.prob_sharpen,
            self.prob_emboss,
            self.prob_brightness_contrast,
            self.prob_noise,
            self.prob_compression,
            self.reverse_probability,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("probabilities must lie in [0, 1]".into()));
        }
        if !(0.0..=180.0).contains(&self.rotation_limit) {
            return Err(Error::InvalidArgument("rotation_limit must lie in [0, 180]".into()));
        }
        if self.scale_range.0 <= 0.0 || self.scale_range.0 > self.scale_range.1 {
            return Err(Error::InvalidArgument("scale_range must be positive and ordered".into()));
        }
        if self.shear_range.0 > self.shear_range.1 || self.skip_range.0 > self.skip_range.1 {
            return Err(Error::InvalidArgument("ranges must be ordered".into()));
        }
        if self.clip_length < 2 {
            return Err(Error::InvalidArgument("clip_length must be at least 2".into()));
        }
        Ok(())
    }
}

/// Independent random stream for `(seed, index)` within one use `domain`.
fn stream(seed: u64, index: u64, domain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

const DOMAIN_AFFINE: u64 = 1;
const DOMAIN_PHOTOMETRIC: u64 = 2;
const DOMAIN_CLIPS: u64 = 3;
const DOMAIN_REVERSAL: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub scale: (f64, f64),
    pub translation: (f64, f64),
    pub shear: (f64, f64),
    pub rotation: f64,
    pub flip_h: bool,
    pub flip_v: bool,
    /// `None` means the frame center.
    pub center: Option<Point2>,
}

impl Default for AffineParams {
    fn default() -> Self {
        Self {
            scale: (1.0, 1.0),
            translation: (0.0, 0.0),
            shear: (0.0, 0.0),
            rotation: 0.0,
            flip_h: false,
            flip_v: false,
            center: None,
        }
    }
}

impl AffineParams {
    pub fn is_identity(&self) -> bool {
        let c = self.center;
        Self { center: c, ..Self::default() } == *self
    }

    fn linear(&self) -> Affine2 {
        let flip = Affine2::linear(
            if self.flip_h { -1.0 } else { 1.0 },
            0.0,
            0.0,
            if self.flip_v { -1.0 } else { 1.0 },
        );
        flip.compose(&Affine2::rotation_deg(self.rotation))
            .compose(&Affine2::linear(1.0, self.shear.0, self.shear.1, 1.0))
            .compose(&Affine2::linear(self.scale.0, 0.0, 0.0, self.scale.1))
    }

    /// `T(c) · Flip · Rot · Shear · Scale · T(−c) · T(t)` for an `h × w` frame.
    pub fn matrix(&self, h: usize, w: usize) -> Affine2 {
        if self.is_identity() {
            return Affine2::identity();
        }
        let c = self
            .center
            .unwrap_or(Point2::new((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0));
        Affine2::about(c, self.linear())
            .compose(&Affine2::translation(self.translation.0, self.translation.1))
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// One parameter set per video. `width` scales the translation range.
pub fn sample_affine(config: &AugConfig, sample_seed: u64, width: usize) -> Result<AffineParams> {
    config.validate()?;
    let mut rng = stream(config.seed, sample_seed, DOMAIN_AFFINE);
    let mut last_det = 0.0;
    for _ in 0..MAX_AFFINE_DRAWS {
        let mut p = AffineParams::default();
        // Every gate and value is drawn unconditionally so a component's
        // randomness does not depend on whether another one fired.
        let g_scale = rng.random::<f64>() < config.prob_scale;
        let scale = (
            uniform(&mut rng, config.scale_range.0, config.scale_range.1),
            uniform(&mut rng, config.scale_range.0, config.scale_range.1),
        );
        let g_trans = rng.random::<f64>() < config.prob_translate;
        let lim = config.translation_range * width as f64;
        let trans = (uniform(&mut rng, -lim, lim), uniform(&mut rng, -lim, lim));
        let g_shear = rng.random::<f64>() < config.prob_shear;
        let shear = (
            uniform(&mut rng, config.shear_range.0, config.shear_range.1),
            uniform(&mut rng, config.shear_range.0, config.shear_range.1),
        );
        let g_rot = rng.random::<f64>() < config.prob_rotate;
        let rot = uniform(&mut rng, -config.rotation_limit, config.rotation_limit);
        let g_fh = rng.random::<f64>() < config.prob_flip_h;
        let g_fv = rng.random::<f64>() < config.prob_flip_v;
        if g_scale {
            p.scale = scale;
        }
        if g_trans {
            p.translation = trans;
        }
        if g_shear {
            p.shear = shear;
        }
        if g_rot {
            p.rotation = rot;
        }
        p.flip_h = g_fh;
        p.flip_v = g_fv;
        last_det = p.linear().det();
        if last_det.abs() >= MIN_AFFINE_DET {
            return Ok(p);
        }
    }
    Err(Error::SingularTransform { det: last_det })
}

/// Warps every frame by `M` (sampling at `M⁻¹(p)`) and maps every trajectory
/// point through `M`. Points leaving the frame become invalid; points whose
/// query-frame position leaves the frame are dropped.
pub fn apply_affine(
    video: &VideoTensor,
    trajs: &TrajectorySet,
    params: &AffineParams,
) -> Result<(VideoTensor, TrajectorySet)> {
    let (h, w) = (video.height(), video.width());
    let m = params.matrix(h, w);
    if m.is_identity() {
        return Ok((video.clone(), trajs.clone()));
    }
    let det = m.det();
    if det.abs() < MIN_AFFINE_DET {
        return Err(Error::SingularTransform { det });
    }
    let inv = m.inverse().ok_or(Error::SingularTransform { det })?;
    let frames: Vec<Image> = (0..video.num_frames())
        .map(|t| warp_image(&video.frame_image(t), &inv))
        .collect();
    let mut out = VideoTensor::from_frames(&frames)?;
    out.frame_rate_hint = video.frame_rate_hint;
    Ok((out, map_trajectories(trajs, &m, h, w)?))
}

/// Output pixel `p` takes the input at `inverse(p)`.
pub fn warp_image(img: &Image, inverse: &Affine2) -> Image {
    let mut data = Vec::with_capacity(img.data.len());
    for y in 0..img.height {
        for x in 0..img.width {
            let s = inverse.apply(Point2::new(x as f64, y as f64));
            data.push(img.sample(s.x, s.y));
        }
    }
    Image {
        height: img.height,
        width: img.width,
        data,
    }
}

/// Maps points through `m`, invalidating entries outside an `h × w` frame.
pub fn map_trajectories(trajs: &TrajectorySet, m: &Affine2, h: usize, w: usize) -> Result<TrajectorySet> {
    let mut mapped = trajs.map_points(|p| m.apply(p));
    mapped.invalidate_outside(h, w);
    let q = mapped.query_frame();
    let keep: Vec<usize> = (0..mapped.num_points()).filter(|&n| mapped.is_valid(n, q)).collect();
    mapped.subset_points(&keep)
}

/// Per-video photometric settings; `None` means the effect is off.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotometricParams {
    pub blur: Option<BlurKind>,
    /// Unsharp-mask amount.
    pub sharpen: Option<f64>,
    /// Emboss direction (degrees) and strength.
    pub emboss: Option<(f64, f64)>,
    /// Brightness offset and contrast gain.
    pub brightness_contrast: Option<(f64, f64)>,
    pub noise_sigma: Option<f64>,
    /// Quantization step of the 8×8 DCT coefficients.
    pub compression_step: Option<f64>,
    pub noise_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlurKind {
    Gaussian { sigma: f64 },
    Motion { length: usize, angle_deg: f64 },
}

pub fn sample_photometric(config: &AugConfig, sample_seed: u64) -> PhotometricParams {
    let mut rng = stream(config.seed, sample_seed, DOMAIN_PHOTOMETRIC);
    let gate = |p: f64, rng: &mut ChaCha8Rng| rng.random::<f64>() < p;
    let blur_on = gate(config.prob_blur, &mut rng);
    let blur = if rng.random::<bool>() {
        BlurKind::Gaussian {
            sigma: uniform(&mut rng, 0.5, 1.5),
        }
    } else {
        BlurKind::Motion {
            length: rng.random_range(3..=7),
            angle_deg: 45.0 * rng.random_range(0..4) as f64,
        }
    };
    let sharpen_on = gate(config.prob_sharpen, &mut rng);
    let amount = uniform(&mut rng, 0.3, 1.0);
    let emboss_on = gate(config.prob_emboss, &mut rng);
    let emboss = (uniform(&mut rng, 0.0, 360.0), uniform(&mut rng, 0.5, 1.5));
    let bc_on = gate(config.prob_brightness_contrast, &mut rng);
    let bc = (uniform(&mut rng, -0.2, 0.2), uniform(&mut rng, 0.7, 1.3));
    let noise_on = gate(config.prob_noise, &mut rng);
    let sigma = uniform(&mut rng, 0.01, 0.05);
    let comp_on = gate(config.prob_compression, &mut rng);
    let step = uniform(&mut rng, 0.02, 0.1);
    PhotometricParams {
        blur: blur_on.then_some(blur),
        sharpen: sharpen_on.then_some(amount),
        emboss: emboss_on.then_some(emboss),
        brightness_contrast: bc_on.then_some(bc),
        noise_sigma: noise_on.then_some(sigma),
        compression_step: comp_on.then_some(step),
        noise_seed: rng.random(),
    }
}

pub fn apply_photometric(video: &VideoTensor, config: &AugConfig, sample_seed: u64) -> Result<VideoTensor> {
    config.validate()?;
    apply_photometric_params(video, &sample_photometric(config, sample_seed))
}

pub fn apply_photometric_params(video: &VideoTensor, p: &PhotometricParams) -> Result<VideoTensor> {
    let (h, w) = (video.height(), video.width());
    let mut frames = Vec::with_capacity(video.num_frames());
    for t in 0..video.num_frames() {
        let mut d: Vec<f64> = video.frame(t).iter().map(|&v| v as f64).collect();
        if let Some(b) = &p.blur {
            d = match *b {
                BlurKind::Gaussian { sigma } => {
                    let k = gaussian_kernel(sigma);
                    convolve_separable(&d, h, w, &k, &k)
                }
                BlurKind::Motion { length, angle_deg } => motion_blur(&d, h, w, length, angle_deg),
            };
        }
        if let Some(amount) = p.sharpen {
            let k = gaussian_kernel(1.0);
            let blurred = convolve_separable(&d, h, w, &k, &k);
            for (v, b) in d.iter_mut().zip(&blurred) {
                *v = (*v + amount * (*v - b)).clamp(0.0, 1.0);
            }
        }
        if let Some((angle, strength)) = p.emboss {
            d = emboss(&d, h, w, angle, strength);
        }
        if let Some((b, c)) = p.brightness_contrast {
            for v in d.iter_mut() {
                *v = brightness_contrast(*v, b, c);
            }
        }
        if let Some(step) = p.compression_step {
            dct_quantize(&mut d, h, w, step);
        }
        if let Some(sigma) = p.noise_sigma {
            let mut rng = ChaCha8Rng::seed_from_u64(p.noise_seed);
            rng.set_stream(t as u64);
            for v in d.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += sigma * z;
            }
        }
        let data = d.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
        frames.push(Image::new(h, w, data)?);
    }
    let mut out = VideoTensor::from_frames(&frames)?;
    out.frame_rate_hint = video.frame_rate_hint;
    Ok(out)
}

/// `(v − 0.5) · contrast + 0.5 + brightness`, clamped to `[0, 1]`.
pub fn brightness_contrast(v: f64, brightness: f64, contrast: f64) -> f64 {
    ((v - 0.5) * contrast + 0.5 + brightness).clamp(0.0, 1.0)
}

/// Mean of `length` samples along a line through each pixel.
fn motion_blur(d: &[f64], h: usize, w: usize, length: usize, angle_deg: f64) -> Vec<f64> {
    let img = Image {
        height: h,
        width: w,
        data: d.iter().map(|&v| v as f32).collect(),
    };
    let (s, c) = angle_deg.to_radians().sin_cos();
    let half = (length as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for k in 0..length {
                let o = k as f64 - half;
                acc += img.sample(x as f64 + o * c, y as f64 + o * s) as f64;
            }
            out[y * w + x] = acc / length as f64;
        }
    }
    out
}

/// Directional derivative scaled by `strength`, centered on 0.5 and blended
/// half-and-half with the input.
fn emboss(d: &[f64], h: usize, w: usize, angle_deg: f64, strength: f64) -> Vec<f64> {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let at = |x: isize, y: isize| d[(y.clamp(0, h as isize - 1) as usize) * w + x.clamp(0, w as isize - 1) as usize];
    let (dx, dy) = (c.round() as isize, s.round() as isize);
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let g = at(x + dx, y + dy) - at(x - dx, y - dy);
            let e = (0.5 + strength * g).clamp(0.0, 1.0);
            out[y as usize * w + x as usize] = 0.5 * at(x, y) + 0.5 * e;
        }
    }
    out
}

/// Orthonormal 8-point DCT-II basis, `basis[k][n]`.
fn dct_basis() -> [[f64; 8]; 8] {
    let mut b = [[0.0; 8]; 8];
    for (k, row) in b.iter_mut().enumerate() {
        let a = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (n, v) in row.iter_mut().enumerate() {
            *v = a * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / 16.0).cos();
        }
    }
    b
}

/// Rounds the DCT coefficients of every full 8×8 block to multiples of `step`.
pub fn dct_quantize(d: &mut [f64], h: usize, w: usize, step: f64) {
    let b = dct_basis();
    for by in 0..h / 8 {
        for bx in 0..w / 8 {
            let mut blk = [[0.0; 8]; 8];
            for (y, row) in blk.iter_mut().enumerate() {
                for (x, v) in row.iter_mut().enumerate() {
                    *v = d[(by * 8 + y) * w + bx * 8 + x];
                }
            }
            let mut coef = [[0.0; 8]; 8];
            for u in 0..8 {
                for v in 0..8 {
                    let mut acc = 0.0;
                    for y in 0..8 {
                        for x in 0..8 {
                            acc += b[u][y] * b[v][x] * blk[y][x];
                        }
                    }
                    coef[u][v] = (acc / step).round() * step;
                }
            }
            for y in 0..8 {
                for x in 0..8 {
                    let mut acc = 0.0;
                    for u in 0..8 {
                        for v in 0..8 {
                            acc += b[u][y] * b[v][x] * coef[u][v];
                        }
                    }
                    d[(by * 8 + y) * w + bx * 8 + x] = acc;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub start_frame: usize,
    pub length: usize,
    /// Frames skipped between consecutive clip frames.
    pub skip: usize,
    pub reversed: bool,
    /// Query frame index within the (possibly reversed) clip.
    pub query_frame_within_clip: usize,
}

impl ClipSpec {
    pub fn span(&self) -> usize {
        (self.length - 1) * (self.skip + 1) + 1
    }

    /// Source frame indices in clip order.
    pub fn frame_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.length).map(|i| self.start_frame + i * (self.skip + 1)).collect();
        if self.reversed {
            idx.reverse();
        }
        idx
    }

    /// Cuts the clip out of a sample. The reference is re-anchored at the
    /// clip's query frame; points invalid there are dropped.
    pub fn extract(&self, video: &VideoTensor, trajs: &TrajectorySet) -> Result<(VideoTensor, TrajectorySet)> {
        let idx = self.frame_indices();
        if idx.iter().any(|&t| t >= video.num_frames()) {
            return Err(Error::InvalidArgument(format!(
                "clip frames {:?} exceed a {}-frame video",
                (idx.first(), idx.last()),
                video.num_frames()
            )));
        }
        let v = video.select_frames(&idx)?;
        // Anchor on a frame every kept point is valid at, then move the anchor.
        let qsrc = idx[self.query_frame_within_clip];
        let anchored = trajs.reanchored(qsrc)?;
        let tr = anchored.select_frames(&idx, self.query_frame_within_clip)?;
        Ok((v, tr))
    }
}

fn clip_draw(rng: &mut ChaCha8Rng, config: &AugConfig) -> (usize, bool, f64) {
    let skip = rng.random_range(config.skip_range.0..=config.skip_range.1);
    let reversed = rng.random::<f64>() < config.reverse_probability;
    let q: f64 = rng.random();
    (skip, reversed, q)
}

/// Overlapping clips covering a `num_frames` video: starts advance by half the
/// clip span and the last clip is clamped to end at the final frame.
pub fn make_clips(num_frames: usize, config: &AugConfig, sample_seed: u64) -> Result<Vec<ClipSpec>> {
    config.validate()?;
    if num_frames < 2 {
        return Err(Error::InvalidArgument("clips need at least 2 frames".into()));
    }
    let mut rng = stream(config.seed, sample_seed, DOMAIN_CLIPS);
    let mut clips = Vec::new();
    let mut start = 0;
    loop {
        let (skip, reversed, q) = clip_draw(&mut rng, config);
        let length = config.clip_length;
        let span = (length - 1) * (skip + 1) + 1;
        let pick_q = |len: usize| ((q * len as f64) as usize).min(len - 1);
        if span > num_frames {
            if clips.is_empty() {
                clips.push(ClipSpec {
                    start_frame: 0,
                    length: num_frames,
                    skip: 0,
                    reversed,
                    query_frame_within_clip: pick_q(num_frames),
                });
            }
            break;
        }
        let clamped = start + span > num_frames;
        if clamped {
            start = num_frames - span;
        }
        clips.push(ClipSpec {
            start_frame: start,
            length,
            skip,
            reversed,
            query_frame_within_clip: pick_q(length),
        });
        if clamped || start + span == num_frames {
            break;
        }
        start += span.div_ceil(2);
    }
    Ok(clips)
}

/// Whether a whole-video sample is played backwards.
pub fn sample_reversal(config: &AugConfig, sample_seed: u64) -> bool {
    stream(config.seed, sample_seed, DOMAIN_REVERSAL).random::<f64>() < config.reverse_probability
}

/// Frame order and time axis reversed; the query frame moves to `T − 1 − q`.
pub fn reverse_sequence(video: &VideoTensor, trajs: &TrajectorySet) -> (VideoTensor, TrajectorySet) {
    (video.reversed(), trajs.reversed())
}
