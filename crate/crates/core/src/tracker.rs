//! The matching head: query feature sampling, cosine cost volumes, sharpening,
//! multiplicative fusion and windowed soft-argmax localization.
//!
//! Each estimated position is anchored at its query point: the output at frame
//! `t` is `p_q + (loc_t − loc_q) · stride`, where `loc` is the soft-argmax
//! location in the fused grid. Identical frames therefore reproduce the query
//! point exactly, and a constant localization offset of the head cancels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderWeights, FeatureLevel, FeaturePyramid};
use crate::error::{Error, Result};
use crate::geometry::{image_to_grid, rescale_coord, Point2};
use crate::nn::{matmul, matmul_nt, matmul_tn, Real};
use crate::video::{in_frame, TrajectorySet, VideoTensor};

/// Norm floor in the cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// Exponent applied to similarities rescaled to `[0, 1]`.
    pub gamma: f64,
    /// Soft-argmax window radius in fused-grid cells.
    pub radius: f64,
    /// Queries handled together per parallel task. Results do not depend on it.
    pub query_chunk: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            gamma: 15.0,
            radius: 5.0,
            query_chunk: 16,
        }
    }
}

/// Bilinear taps `(flat index, weight)` at grid coordinate `(gx, gy)` on an
/// `h × w` plane, edge-clamped.
#[inline]
pub fn bilinear_taps(gx: f64, gy: f64, h: usize, w: usize) -> [(usize, f64); 4] {
    let x = gx.clamp(0.0, (w - 1) as f64);
    let y = gy.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    [
        (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * w + x1, fx * (1.0 - fy)),
        (y1 * w + x0, (1.0 - fx) * fy),
        (y1 * w + x1, fx * fy),
    ]
}

/// Feature vector at image point `p` (working resolution) of frame `t`.
pub fn sample_feature<T: Real>(level: &FeatureLevel<T>, t: usize, p: Point2) -> Vec<T> {
    let s = level.stride as f64;
    let taps = bilinear_taps(image_to_grid(p.x, s), image_to_grid(p.y, s), level.height, level.width);
    let hw = level.height * level.width;
    let f = level.frame(t);
    (0..level.channels)
        .map(|c| {
            let plane = &f[c * hw..(c + 1) * hw];
            taps.iter()
                .fold(T::zero(), |acc, &(i, wt)| acc + plane[i] * T::of(wt))
        })
        .collect()
}

fn norm_floor<T: Real>(v: T) -> T {
    let eps = T::of(COSINE_EPS);
    if v > eps {
        v
    } else {
        eps
    }
}

/// Floored L2 norm of each cell of one frame (`c × hw` layout).
fn cell_norms<T: Real>(frame: &[T], channels: usize, hw: usize) -> Vec<T> {
    let mut sq = vec![T::zero(); hw];
    for c in 0..channels {
        for (s, &v) in sq.iter_mut().zip(&frame[c * hw..(c + 1) * hw]) {
            *s += v * v;
        }
    }
    sq.into_iter().map(|s| s.sqrt()).collect()
}

/// Cosine similarity of `n` query vectors (`n × c`, floored norms `qn`) with
/// every cell of one frame. Writes `n × hw` into `out`.
fn cosine_frame<T: Real>(
    queries: &[T],
    qn: &[T],
    frame: &[T],
    fnorm: &[T],
    channels: usize,
    hw: usize,
    out: &mut [T],
) {
    let n = qn.len();
    matmul(n, channels, hw, queries, frame, out, false);
    for (row, &a) in out.chunks_exact_mut(hw).zip(qn) {
        for (v, &b) in row.iter_mut().zip(fnorm) {
            *v = *v / (a * norm_floor(b));
        }
    }
}

/// Raw similarity volumes of one query, each `T × h × w` for its level.
#[derive(Clone, Debug, PartialEq)]
pub struct CostVolumeSet<T> {
    pub num_frames: usize,
    pub dims: [(usize, usize); 3],
    pub raw: [Vec<T>; 3],
}

/// Per-query raw cost volumes; `queries` are in working-resolution pixels.
pub fn cost_volumes<T: Real>(
    pyramid: &FeaturePyramid<T>,
    queries: &[Point2],
    query_frame: usize,
) -> Vec<CostVolumeSet<T>> {
    let n = queries.len();
    let tn = pyramid.num_frames;
    let mut sets: Vec<CostVolumeSet<T>> = (0..n)
        .map(|_| CostVolumeSet {
            num_frames: tn,
            dims: std::array::from_fn(|l| (pyramid.levels[l].height, pyramid.levels[l].width)),
            raw: Default::default(),
        })
        .collect();
    for (l, level) in pyramid.levels.iter().enumerate() {
        let hw = level.height * level.width;
        let (q, qn) = query_matrix(level, queries, query_frame);
        let mut buf = vec![T::zero(); n * hw];
        for set in sets.iter_mut() {
            set.raw[l] = vec![T::zero(); tn * hw];
        }
        for t in 0..tn {
            let f = level.frame(t);
            cosine_frame(&q, &qn, f, &cell_norms(f, level.channels, hw), level.channels, hw, &mut buf);
            for (set, row) in sets.iter_mut().zip(buf.chunks_exact(hw)) {
                set.raw[l][t * hw..(t + 1) * hw].copy_from_slice(row);
            }
        }
    }
    sets
}

fn query_matrix<T: Real>(level: &FeatureLevel<T>, queries: &[Point2], query_frame: usize) -> (Vec<T>, Vec<T>) {
    let mut q = Vec::with_capacity(queries.len() * level.channels);
    let mut qn = Vec::with_capacity(queries.len());
    for &p in queries {
        let v = sample_feature(level, query_frame, p);
        qn.push(norm_floor(v.iter().map(|&x| x * x).sum::<T>().sqrt()));
        q.extend(v);
    }
    (q, qn)
}

/// `((c + 1) / 2)^gamma`, with the rescaled value clamped to `[0, 1]`.
#[inline]
pub fn sharpen<T: Real>(c: T, gamma: T) -> T {
    let half = T::of(0.5);
    let s = ((c + T::one()) * half).max(T::zero()).min(T::one());
    s.powf(gamma)
}

/// Derivative of [`sharpen`] with respect to `c`.
#[inline]
fn sharpen_grad<T: Real>(c: T, gamma: T) -> T {
    let half = T::of(0.5);
    let s = (c + T::one()) * half;
    if s <= T::zero() || s > T::one() {
        return T::zero();
    }
    gamma * half * s.powf(gamma - T::one())
}

/// Bilinear resampling of one `sh × sw` plane onto a `dh × dw` grid with
/// aligned cell centers.
pub fn upsample<T: Real>(src: &[T], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); dh * dw];
    for_each_upsample_tap(sh, sw, dh, dw, |d, s, w| out[d] += src[s] * T::of(w));
    out
}

/// Adjoint of [`upsample`].
fn upsample_transpose<T: Real>(grad: &[T], sh: usize, sw: usize, dh: usize, dw: usize, out: &mut [T]) {
    for_each_upsample_tap(sh, sw, dh, dw, |d, s, w| out[s] += grad[d] * T::of(w));
}

fn for_each_upsample_tap(sh: usize, sw: usize, dh: usize, dw: usize, mut f: impl FnMut(usize, usize, f64)) {
    let sy = sh as f64 / dh as f64;
    let sx = sw as f64 / dw as f64;
    for i in 0..dh {
        let gy = rescale_coord(i as f64, sy);
        for j in 0..dw {
            let gx = rescale_coord(j as f64, sx);
            for (s, w) in bilinear_taps(gx, gy, sh, sw) {
                if w != 0.0 {
                    f(i * dw + j, s, w);
                }
            }
        }
    }
}

/// Sharpened, upsampled and multiplied volumes of one query: `T × h1 × w1`.
pub fn sharpen_and_fuse<T: Real>(set: &CostVolumeSet<T>, gamma: f64) -> Vec<T> {
    let g = T::of(gamma);
    let (h1, w1) = set.dims[0];
    let (h3, w3) = set.dims[2];
    let hw1 = h1 * w1;
    let hw3 = h3 * w3;
    let mut fused = Vec::with_capacity(set.num_frames * hw1);
    for t in 0..set.num_frames {
        let s3: Vec<T> = set.raw[2][t * hw3..(t + 1) * hw3].iter().map(|&c| sharpen(c, g)).collect();
        let u3 = upsample(&s3, h3, w3, h1, w1);
        let c1 = &set.raw[0][t * hw1..(t + 1) * hw1];
        let c2 = &set.raw[1][t * hw1..(t + 1) * hw1];
        for k in 0..hw1 {
            fused.push(sharpen(c1[k], g) * sharpen(c2[k], g) * u3[k]);
        }
    }
    fused
}

/// Soft-argmax result on one fused frame, in grid cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Location<T> {
    pub x: T,
    pub y: T,
    /// Fused value at the hard maximum.
    pub confidence: T,
    /// Hard maximum `(row, col)`.
    pub peak: (usize, usize),
    /// Sum of the window weights; zero when the window is empty.
    pub mass: T,
}

/// Cells `(row, col)` within `radius` of `peak`, row-major.
pub fn window_cells(peak: (usize, usize), radius: f64, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    let r = radius.max(0.0).floor() as isize;
    let r2 = radius * radius;
    let (pi, pj) = (peak.0 as isize, peak.1 as isize);
    (pi - r..=pi + r)
        .filter(move |&i| i >= 0 && i < h as isize)
        .flat_map(move |i| {
            (pj - r..=pj + r)
                .filter(move |&j| {
                    j >= 0 && j < w as isize && (((i - pi).pow(2) + (j - pj).pow(2)) as f64) <= r2
                })
                .map(move |j| (i as usize, j as usize))
        })
}

/// Hard argmax (first in row-major order), then the value-weighted mean
/// coordinate over the window around it.
///
/// Offsets from the peak are summed separately by sign, the negative side in
/// mirrored order, so a point-symmetric window returns the peak exactly.
pub fn locate<T: Real>(frame: &[T], h: usize, w: usize, radius: f64) -> Location<T> {
    let mut best = 0;
    for (k, &v) in frame.iter().enumerate() {
        if v > frame[best] {
            best = k;
        }
    }
    let peak = (best / w, best % w);
    let cells: Vec<(usize, usize)> = window_cells(peak, radius, h, w).collect();
    let mut sum = T::zero();
    let (mut px, mut py) = (T::zero(), T::zero());
    for &(i, j) in &cells {
        let v = frame[i * w + j];
        sum += v;
        if j > peak.1 {
            px += v * T::of((j - peak.1) as f64);
        }
        if i > peak.0 {
            py += v * T::of((i - peak.0) as f64);
        }
    }
    let (mut nx, mut ny) = (T::zero(), T::zero());
    for &(i, j) in cells.iter().rev() {
        let v = frame[i * w + j];
        if j < peak.1 {
            nx += v * T::of((peak.1 - j) as f64);
        }
        if i < peak.0 {
            ny += v * T::of((peak.0 - i) as f64);
        }
    }
    let (x0, y0) = (T::of(peak.1 as f64), T::of(peak.0 as f64));
    if sum > T::zero() {
        Location {
            x: x0 + (px - nx) / sum,
            y: y0 + (py - ny) / sum,
            confidence: frame[best],
            peak,
            mass: sum,
        }
    } else {
        Location {
            x: x0,
            y: y0,
            confidence: T::zero(),
            peak,
            mass: T::zero(),
        }
    }
}

/// Values kept from a chunk forward pass for differentiation.
struct ChunkTape<T> {
    /// Per level: query matrix `n × c` and floored norms.
    queries: [(Vec<T>, Vec<T>); 3],
    /// Per level and frame: raw similarities `n × hw`.
    raw: [Vec<Vec<T>>; 3],
    /// Per frame, `n × hw1`: sharpened level 1, level 2 and upsampled level 3.
    sharp: [Vec<Vec<T>>; 3],
}

/// Locations of a chunk of queries over all frames.
struct ChunkOutput<T> {
    /// `n × frames`.
    locations: Vec<Location<T>>,
    tape: Option<ChunkTape<T>>,
}

fn match_chunk<T: Real>(
    pyramid: &FeaturePyramid<T>,
    queries: &[Point2],
    query_frame: usize,
    cfg: &TrackerConfig,
    record: bool,
) -> ChunkOutput<T> {
    let n = queries.len();
    let tn = pyramid.num_frames;
    let gamma = T::of(cfg.gamma);
    let [l1, l2, l3] = &pyramid.levels;
    let (h1, w1) = (l1.height, l1.width);
    let hw1 = h1 * w1;
    let hw3 = l3.height * l3.width;
    let qm = [
        query_matrix(l1, queries, query_frame),
        query_matrix(l2, queries, query_frame),
        query_matrix(l3, queries, query_frame),
    ];
    let mut locations = vec![
        Location {
            x: T::zero(),
            y: T::zero(),
            confidence: T::zero(),
            peak: (0, 0),
            mass: T::zero()
        };
        n * tn
    ];
    let mut tape = record.then(|| ChunkTape {
        queries: qm.clone(),
        raw: Default::default(),
        sharp: Default::default(),
    });
    let mut raw: [Vec<T>; 3] = [vec![T::zero(); n * hw1], vec![T::zero(); n * hw1], vec![T::zero(); n * hw3]];
    for t in 0..tn {
        for (l, level) in pyramid.levels.iter().enumerate() {
            let hw = level.height * level.width;
            let f = level.frame(t);
            cosine_frame(&qm[l].0, &qm[l].1, f, &cell_norms(f, level.channels, hw), level.channels, hw, &mut raw[l]);
        }
        let mut s1 = Vec::with_capacity(n * hw1);
        let mut s2 = Vec::with_capacity(n * hw1);
        let mut u3 = Vec::with_capacity(n * hw1);
        let mut fused = Vec::with_capacity(n * hw1);
        for q in 0..n {
            let s3: Vec<T> = raw[2][q * hw3..(q + 1) * hw3].iter().map(|&c| sharpen(c, gamma)).collect();
            let up = upsample(&s3, l3.height, l3.width, h1, w1);
            let base = fused.len();
            for k in 0..hw1 {
                let a = sharpen(raw[0][q * hw1 + k], gamma);
                let b = sharpen(raw[1][q * hw1 + k], gamma);
                s1.push(a);
                s2.push(b);
                fused.push(a * b * up[k]);
            }
            u3.extend(up);
            locations[q * tn + t] = locate(&fused[base..], h1, w1, cfg.radius);
        }
        if let Some(tp) = tape.as_mut() {
            for l in 0..3 {
                tp.raw[l].push(raw[l].clone());
            }
            tp.sharp[0].push(s1);
            tp.sharp[1].push(s2);
            tp.sharp[2].push(u3);
        }
    }
    ChunkOutput { locations, tape }
}

/// Anchored displacement of frame `t` from the query frame, in working pixels.
fn anchored_offset<T: Real>(locs: &[Location<T>], t: usize, q: usize, stride: T) -> (T, T) {
    ((locs[t].x - locs[q].x) * stride, (locs[t].y - locs[q].y) * stride)
}

/// Output of [`Tracker::track`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrackResult {
    pub trajectories: TrajectorySet,
    /// `N × T` fused value at each chosen peak.
    pub peak_confidence: Vec<f64>,
}

impl TrackResult {
    /// CSV with one row per point and one column per frame.
    pub fn confidence_csv(&self) -> String {
        let t = self.trajectories.num_frames();
        let mut s = String::from("point");
        for f in 0..t {
            s.push_str(&format!(",t{f}"));
        }
        s.push('\n');
        for (n, row) in self.peak_confidence.chunks(t).enumerate() {
            s.push_str(&n.to_string());
            for v in row {
                s.push_str(&format!(",{}", crate::io::round_sig9(*v)));
            }
            s.push('\n');
        }
        s
    }
}

/// A video encoded at the working resolution, ready for repeated queries.
pub struct EncodedVideo<T> {
    pub pyramid: FeaturePyramid<T>,
    pub native_height: usize,
    pub native_width: usize,
}

/// Scale factors `(x, y)` from native pixels to working pixels.
fn working_scale(resolution: usize, h: usize, w: usize) -> (f64, f64) {
    (resolution as f64 / w as f64, resolution as f64 / h as f64)
}

/// Encoder weights plus head settings.
pub struct Tracker<'w> {
    encoder: Encoder<'w, f32>,
    pub config: TrackerConfig,
}

impl<'w> Tracker<'w> {
    pub fn new(weights: &'w EncoderWeights<f32>, config: TrackerConfig) -> Result<Self> {
        if config.query_chunk == 0 || !(config.gamma > 0.0) || !(config.radius >= 0.0) {
            return Err(Error::InvalidArgument(
                "tracker needs gamma > 0, radius >= 0 and a positive query chunk".into(),
            ));
        }
        Ok(Self {
            encoder: Encoder::new(weights)?,
            config,
        })
    }

    pub fn resolution(&self) -> usize {
        self.encoder.weights().config.resolution
    }

    /// Resizes to `R × R` and computes the pyramid.
    pub fn encode(&self, video: &VideoTensor) -> Result<EncodedVideo<f32>> {
        let r = self.resolution();
        let resized;
        let v = if video.height() == r && video.width() == r {
            video
        } else {
            resized = video.resize(r, r)?;
            &resized
        };
        Ok(EncodedVideo {
            pyramid: self.encoder.encode_frames(v.data(), v.num_frames(), r, r)?,
            native_height: video.height(),
            native_width: video.width(),
        })
    }

    pub fn track(&self, video: &VideoTensor, queries: &[Point2], query_frame: usize) -> Result<TrackResult> {
        check_queries(queries, query_frame, video.num_frames(), video.height(), video.width())?;
        let enc = self.encode(video)?;
        self.track_encoded(&enc, queries, query_frame)
    }

    /// Tracks native-resolution `queries` given at `query_frame`.
    pub fn track_encoded(
        &self,
        enc: &EncodedVideo<f32>,
        queries: &[Point2],
        query_frame: usize,
    ) -> Result<TrackResult> {
        let tn = enc.pyramid.num_frames;
        let (h, w) = (enc.native_height, enc.native_width);
        check_queries(queries, query_frame, tn, h, w)?;
        let (sx, sy) = working_scale(self.resolution(), h, w);
        let working: Vec<Point2> = queries
            .iter()
            .map(|p| Point2::new(rescale_coord(p.x, sx), rescale_coord(p.y, sy)))
            .collect();
        let stride = enc.pyramid.levels[0].stride as f32;
        let chunks: Vec<ChunkOutput<f32>> = working
            .par_chunks(self.config.query_chunk)
            .map(|c| match_chunk(&enc.pyramid, c, query_frame, &self.config, false))
            .collect();
        let mut points = Vec::with_capacity(queries.len() * tn);
        let mut valid = Vec::with_capacity(queries.len() * tn);
        let mut confidence = Vec::with_capacity(queries.len() * tn);
        let per_query = chunks.iter().flat_map(|c| c.locations.chunks_exact(tn));
        for (locs, &pq) in per_query.zip(queries) {
            for t in 0..tn {
                let p = if t == query_frame {
                    pq
                } else {
                    let (dx, dy) = anchored_offset(locs, t, query_frame, stride);
                    Point2::new(pq.x + dx as f64 / sx, pq.y + dy as f64 / sy)
                };
                valid.push(t == query_frame || in_frame(p, h, w));
                points.push(p);
                confidence.push(locs[t].confidence as f64);
            }
        }
        Ok(TrackResult {
            trajectories: TrajectorySet::new(queries.len(), tn, points, valid, query_frame)?,
            peak_confidence: confidence,
        })
    }
}

fn check_queries(queries: &[Point2], query_frame: usize, t: usize, h: usize, w: usize) -> Result<()> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument("no query points".into()));
    }
    if t < 2 {
        return Err(Error::ShapeMismatch(format!("video has {t} frames, need at least 2")));
    }
    if query_frame >= t {
        return Err(Error::InvalidArgument(format!(
            "query frame {query_frame} outside [0, {t})"
        )));
    }
    if let Some(n) = queries.iter().position(|&p| !in_frame(p, h, w)) {
        return Err(Error::InvalidQueryPoint { point: n });
    }
    Ok(())
}

/// Differentiable forward pass of the head for one clip.
pub struct HeadForward<T> {
    /// `N × T` native-resolution estimates; the query frame holds the input point.
    pub predictions: Vec<[T; 2]>,
    query_frame: usize,
    num_frames: usize,
    /// Native pixels per working pixel, `(x, y)`.
    to_native: (f64, f64),
    output: ChunkOutput<T>,
}

impl<T: Real> HeadForward<T> {
    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn query_frame(&self) -> usize {
        self.query_frame
    }
}

/// Runs the head on an encoded clip. `queries` are native pixels of a video
/// of size `native = (h, w)` that was resized to the pyramid's resolution.
pub fn head_forward<T: Real>(
    pyramid: &FeaturePyramid<T>,
    native: (usize, usize),
    queries: &[Point2],
    query_frame: usize,
    cfg: &TrackerConfig,
) -> HeadForward<T> {
    let tn = pyramid.num_frames;
    let resolution = pyramid.levels[0].height * pyramid.levels[0].stride;
    let (sx, sy) = working_scale(resolution, native.0, native.1);
    let working: Vec<Point2> = queries
        .iter()
        .map(|p| Point2::new(rescale_coord(p.x, sx), rescale_coord(p.y, sy)))
        .collect();
    let output = match_chunk(pyramid, &working, query_frame, cfg, true);
    let stride = T::of(pyramid.levels[0].stride as f64);
    let mut predictions = Vec::with_capacity(queries.len() * tn);
    for (locs, pq) in output.locations.chunks_exact(tn).zip(queries) {
        for t in 0..tn {
            if t == query_frame {
                predictions.push([T::of(pq.x), T::of(pq.y)]);
            } else {
                let (dx, dy) = anchored_offset(locs, t, query_frame, stride);
                predictions.push([T::of(pq.x) + dx / T::of(sx), T::of(pq.y) + dy / T::of(sy)]);
            }
        }
    }
    HeadForward {
        predictions,
        query_frame,
        num_frames: tn,
        to_native: (1.0 / sx, 1.0 / sy),
        output,
    }
}

/// Gradient of a scalar loss with respect to every pyramid value, given its
/// gradient with respect to each prediction (`N × T`, same order).
///
/// The hard-argmax window of every frame is held fixed.
pub fn head_backward<T: Real>(
    pyramid: &FeaturePyramid<T>,
    fwd: &HeadForward<T>,
    dpred: &[[T; 2]],
    cfg: &TrackerConfig,
) -> FeaturePyramid<T> {
    let tn = fwd.num_frames;
    let q = fwd.query_frame;
    let tape = fwd.output.tape.as_ref().expect("head forward was recorded");
    let n = fwd.predictions.len() / tn;
    let gamma = T::of(cfg.gamma);
    let stride = T::of(pyramid.levels[0].stride as f64);
    let [l1, _, l3] = &pyramid.levels;
    let (h1, w1) = (l1.height, l1.width);
    let hw1 = h1 * w1;
    let (h3, w3) = (l3.height, l3.width);
    let hw3 = h3 * w3;

    // Gradient with respect to each soft-argmax location (grid cells).
    let mut dloc = vec![[T::zero(); 2]; n * tn];
    let kx = stride * T::of(fwd.to_native.0);
    let ky = stride * T::of(fwd.to_native.1);
    for i in 0..n {
        for t in 0..tn {
            if t == q {
                continue;
            }
            let g = dpred[i * tn + t];
            dloc[i * tn + t][0] += g[0] * kx;
            dloc[i * tn + t][1] += g[1] * ky;
            dloc[i * tn + q][0] -= g[0] * kx;
            dloc[i * tn + q][1] -= g[1] * ky;
        }
    }

    let mut grad = pyramid.zeros_like();
    let mut dquery: [Vec<T>; 3] = std::array::from_fn(|l| vec![T::zero(); n * pyramid.levels[l].channels]);
    for t in 0..tn {
        // Into the raw similarity volumes of this frame.
        let mut draw: [Vec<T>; 3] = [vec![T::zero(); n * hw1], vec![T::zero(); n * hw1], vec![T::zero(); n * hw3]];
        let mut any = false;
        for i in 0..n {
            let loc = &fwd.output.locations[i * tn + t];
            let d = dloc[i * tn + t];
            if loc.mass <= T::zero() || (d[0] == T::zero() && d[1] == T::zero()) {
                continue;
            }
            any = true;
            let s1 = &tape.sharp[0][t][i * hw1..(i + 1) * hw1];
            let s2 = &tape.sharp[1][t][i * hw1..(i + 1) * hw1];
            let u3 = &tape.sharp[2][t][i * hw1..(i + 1) * hw1];
            let mut du3 = vec![T::zero(); hw1];
            let mut touched = false;
            for (r, c) in window_cells(loc.peak, cfg.radius, h1, w1) {
                let k = r * w1 + c;
                let df = (d[0] * (T::of(c as f64) - loc.x) + d[1] * (T::of(r as f64) - loc.y)) / loc.mass;
                draw[0][i * hw1 + k] = df * s2[k] * u3[k] * sharpen_grad(tape.raw[0][t][i * hw1 + k], gamma);
                draw[1][i * hw1 + k] = df * s1[k] * u3[k] * sharpen_grad(tape.raw[1][t][i * hw1 + k], gamma);
                du3[k] = df * s1[k] * s2[k];
                touched = true;
            }
            if touched {
                let mut ds3 = vec![T::zero(); hw3];
                upsample_transpose(&du3, h3, w3, h1, w1, &mut ds3);
                for (k, v) in ds3.into_iter().enumerate() {
                    draw[2][i * hw3 + k] = v * sharpen_grad(tape.raw[2][t][i * hw3 + k], gamma);
                }
            }
        }
        if !any {
            continue;
        }
        for (l, level) in pyramid.levels.iter().enumerate() {
            let hw = level.height * level.width;
            let ch = level.channels;
            let f = level.frame(t);
            let fnorm = cell_norms(f, ch, hw);
            let (qv, qn) = &tape.queries[l];
            let cos = &tape.raw[l][t];
            let g = &draw[l];
            // u = g / (A·B)
            let mut u = vec![T::zero(); n * hw];
            let mut gc_row = vec![T::zero(); n];
            let mut gc_col = vec![T::zero(); hw];
            for i in 0..n {
                for k in 0..hw {
                    let gv = g[i * hw + k];
                    if gv == T::zero() {
                        continue;
                    }
                    u[i * hw + k] = gv / (qn[i] * norm_floor(fnorm[k]));
                    let gc = gv * cos[i * hw + k];
                    gc_row[i] += gc;
                    gc_col[k] += gc;
                }
            }
            // dQ = U · Fᵀ − q · Σ(g·c) / A²
            let mut dq = vec![T::zero(); n * ch];
            matmul_nt(n, hw, ch, &u, f, &mut dq, false);
            let eps = T::of(COSINE_EPS);
            for i in 0..n {
                let a = qn[i];
                let shrink = if a > eps { gc_row[i] / (a * a) } else { T::zero() };
                for c in 0..ch {
                    dquery[l][i * ch + c] += dq[i * ch + c] - qv[i * ch + c] * shrink;
                }
            }
            // dF = Qᵀ · U − f · Σ(g·c) / B²
            let dst = &mut grad.levels[l].data[t * ch * hw..(t + 1) * ch * hw];
            matmul_tn(ch, n, hw, qv, &u, dst, true);
            for k in 0..hw {
                let b = fnorm[k];
                if gc_col[k] == T::zero() || b <= eps {
                    continue;
                }
                let shrink = gc_col[k] / (b * b);
                for c in 0..ch {
                    dst[c * hw + k] -= f[c * hw + k] * shrink;
                }
            }
        }
    }

    // Query vectors were bilinear samples of the query frame.
    let (sx, sy) = (1.0 / fwd.to_native.0, 1.0 / fwd.to_native.1);
    for (l, level) in pyramid.levels.iter().enumerate() {
        let hw = level.height * level.width;
        let ch = level.channels;
        let s = level.stride as f64;
        let dst = &mut grad.levels[l].data[q * ch * hw..(q + 1) * ch * hw];
        for i in 0..n {
            let pq = fwd.predictions[i * tn + q];
            let px = rescale_coord(pq[0].as_f64(), sx);
            let py = rescale_coord(pq[1].as_f64(), sy);
            let taps = bilinear_taps(image_to_grid(px, s), image_to_grid(py, s), level.height, level.width);
            for c in 0..ch {
                let dv = dquery[l][i * ch + c];
                if dv == T::zero() {
                    continue;
                }
                for &(k, wt) in &taps {
                    dst[c * hw + k] += dv * T::of(wt);
                }
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    fn level(channels: usize, h: usize, w: usize, stride: usize, data: Vec<f64>) -> FeatureLevel<f64> {
        FeatureLevel {
            stride,
            channels,
            height: h,
            width: w,
            data,
        }
    }

    #[test]
    fn sampling_at_centers_and_midpoints() {
        // Two channels on a 2 × 3 grid, stride 8.
        let data = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, -1.0, -2.0, -3.0, -4.0, -5.0, -6.0];
        let l = level(2, 2, 3, 8, data);
        let center = Point2::new(1.0 * 8.0 + 3.5, 3.5);
        assert_eq!(sample_feature(&l, 0, center), vec![2.0, -2.0]);
        let mid = Point2::new(1.5 * 8.0 + 3.5, 3.5);
        assert_eq!(sample_feature(&l, 0, mid), vec![2.5, -2.5]);
    }

    #[test]
    fn sharpen_fixed_points() {
        assert_eq!(sharpen(1.0f64, 15.0), 1.0);
        assert_eq!(sharpen(-1.0f64, 15.0), 0.0);
        assert!((sharpen(0.8f64, 15.0) - 0.205891).abs() < 1e-6);
    }

    #[test]
    fn impulse_and_empty_volumes() {
        let mut v = vec![0.0f64; 12 * 10];
        v[3 * 10 + 7] = 0.4;
        let loc = locate(&v, 12, 10, 5.0);
        assert_eq!((loc.x, loc.y, loc.confidence), (7.0, 3.0, 0.4));
        let zero = vec![0.0f64; 12 * 10];
        let loc = locate(&zero, 12, 10, 5.0);
        assert_eq!((loc.x, loc.y, loc.confidence), (0.0, 0.0, 0.0));
    }

    #[test]
    fn window_is_a_disc() {
        let cells: Vec<_> = window_cells((5, 5), 5.0, 20, 20).collect();
        // Lattice points in a disc of radius 5.
        assert_eq!(cells.len(), 81);
        let clipped: Vec<_> = window_cells((0, 0), 1.0, 20, 20).collect();
        assert_eq!(clipped, vec![(0, 0), (0, 1), (1, 0)]);
    }

    #[test]
    fn upsample_transpose_is_adjoint() {
        let (sh, sw, dh, dw) = (3, 4, 6, 8);
        let x: Vec<f64> = (0..sh * sw).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..dh * dw).map(|i| (i as f64 * 1.3).cos()).collect();
        let ux = upsample(&x, sh, sw, dh, dw);
        let mut uty = vec![0.0; sh * sw];
        upsample_transpose(&y, sh, sw, dh, dw, &mut uty);
        let lhs: f64 = ux.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&uty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_and_self_similarity() {
        let data = vec![1.0, 0.0, 0.0, 1.0];
        let l = level(2, 1, 2, 8, data);
        let pyr = FeaturePyramid {
            num_frames: 1,
            levels: [l.clone(), l.clone(), level(2, 1, 1, 16, vec![1.0, 0.0])],
        };
        let sets = cost_volumes(&pyr, &[Point2::new(3.5, 3.5)], 0);
        assert_eq!(sets[0].raw[0], vec![1.0, 0.0]);
    }
}
