//! The convolutional feature extractor.
//!
//! Each frame is pixel-unshuffled by 2 and passed through four residual block
//! groups with strides 2, 2, 1, 2. The outputs of groups 2, 3 and 4 form a
//! three-level pyramid at strides 8, 8 and 16 of the input frame.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv::{conv_backward, conv_forward, ConvShape};
use crate::nn::norm::{instance_norm_backward, instance_norm_forward, NormCache};
use crate::nn::{relu_in_place, Real};

pub const GROUP_STRIDES: [usize; 4] = [2, 2, 1, 2];
pub const LEVEL_STRIDES: [usize; 3] = [8, 8, 16];
const UNSHUFFLE_CHANNELS: usize = 4;
const SUB_BLOCKS: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Output channels of block groups 1 to 4.
    pub channels: [usize; 4],
    /// Working resolution `R`: videos are resized to `R × R` before encoding.
    pub resolution: usize,
    pub weight_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            channels: [32, 64, 96, 128],
            resolution: 512,
            weight_seed: 0,
        }
    }
}

impl EncoderConfig {
    /// Smallest network, used by gradient checks.
    pub fn tiny() -> Self {
        Self {
            channels: [4, 8, 8, 8],
            resolution: 32,
            weight_seed: 0,
        }
    }

    /// CPU-sized network at `R = 128`.
    pub fn desk() -> Self {
        Self {
            channels: [16, 32, 32, 64],
            resolution: 128,
            weight_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) {
            return Err(Error::InvalidArgument("channel counts must be at least 1".into()));
        }
        if self.resolution < 32 || self.resolution % 16 != 0 {
            return Err(Error::InvalidArgument(format!(
                "working resolution {} must be at least 32 and divisible by 16",
                self.resolution
            )));
        }
        Ok(())
    }

    /// Channels of pyramid levels 1 to 3.
    pub fn level_channels(&self) -> [usize; 3] {
        [self.channels[1], self.channels[2], self.channels[3]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    NormScale,
    NormOffset,
}

/// One named parameter tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub name: String,
    pub kind: LayerKind,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub offset: usize,
}

impl LayerInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    /// Input fan of a convolution kernel.
    pub fn fan_in(&self) -> usize {
        self.shape[1..].iter().product()
    }
}

/// Layer indices of one residual sub-block.
#[derive(Clone, Copy, Debug)]
struct SubBlock {
    c_in: usize,
    c_out: usize,
    stride: usize,
    conv1: usize,
    scale1: usize,
    offset1: usize,
    conv2: usize,
    scale2: usize,
    offset2: usize,
    proj: Option<usize>,
}

impl SubBlock {
    fn conv1_shape(&self, h: usize, w: usize) -> ConvShape {
        ConvShape {
            c_in: self.c_in,
            c_out: self.c_out,
            kernel: 3,
            stride: self.stride,
            pad: 1,
            h,
            w,
        }
    }

    fn conv2_shape(&self, h: usize, w: usize) -> ConvShape {
        ConvShape {
            c_in: self.c_out,
            c_out: self.c_out,
            kernel: 3,
            stride: 1,
            pad: 1,
            h,
            w,
        }
    }

    fn proj_shape(&self, h: usize, w: usize) -> ConvShape {
        ConvShape {
            c_in: self.c_in,
            c_out: self.c_out,
            kernel: 1,
            stride: self.stride,
            pad: 0,
            h,
            w,
        }
    }
}

fn build_layout(config: &EncoderConfig) -> (Vec<LayerInfo>, Vec<SubBlock>) {
    let mut layers = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, kind: LayerKind, shape: Vec<usize>| {
        let info = LayerInfo {
            name,
            kind,
            shape,
            offset,
        };
        offset += info.len();
        layers.push(info);
        layers.len() - 1
    };
    let mut blocks = Vec::new();
    let mut c_in = UNSHUFFLE_CHANNELS;
    for (g, (&c_out, &group_stride)) in config.channels.iter().zip(&GROUP_STRIDES).enumerate() {
        for s in 0..SUB_BLOCKS {
            let stride = if s == 0 { group_stride } else { 1 };
            let prefix = format!("b{}.s{}", g + 1, s + 1);
            let conv1 = push(format!("{prefix}.conv1"), LayerKind::Conv, vec![c_out, c_in, 3, 3]);
            let scale1 = push(format!("{prefix}.norm1.scale"), LayerKind::NormScale, vec![c_out]);
            let offset1 = push(format!("{prefix}.norm1.offset"), LayerKind::NormOffset, vec![c_out]);
            let conv2 = push(format!("{prefix}.conv2"), LayerKind::Conv, vec![c_out, c_out, 3, 3]);
            let scale2 = push(format!("{prefix}.norm2.scale"), LayerKind::NormScale, vec![c_out]);
            let offset2 = push(format!("{prefix}.norm2.offset"), LayerKind::NormOffset, vec![c_out]);
            let proj = (stride != 1 || c_in != c_out)
                .then(|| push(format!("{prefix}.proj"), LayerKind::Conv, vec![c_out, c_in, 1, 1]));
            blocks.push(SubBlock {
                c_in,
                c_out,
                stride,
                conv1,
                scale1,
                offset1,
                conv2,
                scale2,
                offset2,
                proj,
            });
            c_in = c_out;
        }
    }
    (layers, blocks)
}

/// Flat parameter vector plus its layer table.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights<T> {
    pub config: EncoderConfig,
    pub layers: Vec<LayerInfo>,
    pub params: Vec<T>,
}

impl<T: Real> EncoderWeights<T> {
    /// He-normal kernels, unit scales, zero offsets; deterministic in `weight_seed`.
    pub fn init(config: &EncoderConfig) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.weight_seed);
        for layer in &w.layers {
            let dst = &mut w.params[layer.range()];
            match layer.kind {
                LayerKind::Conv => {
                    let std = (2.0 / layer.fan_in() as f64).sqrt();
                    for v in dst {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v = T::of(z * std);
                    }
                }
                LayerKind::NormScale => dst.fill(T::one()),
                LayerKind::NormOffset => {}
            }
        }
        Ok(w)
    }

    /// All parameters zero.
    pub fn zeros(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let (layers, _) = build_layout(config);
        let n = layers.last().map_or(0, |l| l.offset + l.len());
        Ok(Self {
            config: config.clone(),
            layers,
            params: vec![T::zero(); n],
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn layer(&self, name: &str) -> Option<&LayerInfo> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn layer_params(&self, index: usize) -> &[T] {
        &self.params[self.layers[index].range()]
    }

    pub fn cast<U: Real>(&self) -> EncoderWeights<U> {
        EncoderWeights {
            config: self.config.clone(),
            layers: self.layers.clone(),
            params: self.params.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    /// Checks the layer table and parameter count against the config.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let (expected, _) = build_layout(&self.config);
        if expected.len() != self.layers.len()
            || expected
                .iter()
                .zip(&self.layers)
                .any(|(a, b)| a.name != b.name || a.shape != b.shape || a.offset != b.offset)
        {
            return Err(Error::ShapeMismatch(
                "weight layer table does not match the encoder config".into(),
            ));
        }
        let n = expected.last().map_or(0, |l| l.offset + l.len());
        if self.params.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "config needs {n} parameters, weights hold {}",
                self.params.len()
            )));
        }
        if let Some(i) = self.params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index: i });
        }
        Ok(())
    }

    /// Name of the layer holding parameter `index`.
    pub fn layer_of(&self, index: usize) -> &str {
        self.layers
            .iter()
            .find(|l| l.range().contains(&index))
            .map_or("?", |l| l.name.as_str())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointManifest {
    format: String,
    config: EncoderConfig,
    dtype: String,
    num_params: usize,
    blob: String,
    layers: Vec<LayerInfo>,
}

const CHECKPOINT_FORMAT: &str = "specktrack-encoder-v1";

impl EncoderWeights<f32> {
    /// Writes the JSON manifest at `path` and the float32 blob beside it (`.bin`).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let blob_path = path.with_extension("bin");
        let manifest = CheckpointManifest {
            format: CHECKPOINT_FORMAT.into(),
            config: self.config.clone(),
            dtype: "f32".into(),
            num_params: self.params.len(),
            blob: blob_path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            layers: self.layers.clone(),
        };
        let mut bytes = Vec::with_capacity(4 * self.params.len());
        for v in &self.params {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&blob_path, bytes).map_err(|e| Error::io(&blob_path, e))?;
        crate::io::write_json(&manifest, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest: CheckpointManifest = crate::io::read_json(path)?;
        if manifest.format != CHECKPOINT_FORMAT || manifest.dtype != "f32" {
            return Err(Error::InvalidArgument(format!(
                "{}: unsupported checkpoint format {} / {}",
                path.display(),
                manifest.format,
                manifest.dtype
            )));
        }
        let blob_path: PathBuf = path.with_file_name(&manifest.blob);
        let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        let expected = 4 * manifest.num_params as u64;
        if bytes.len() as u64 != expected {
            return Err(Error::Truncated {
                path: blob_path,
                expected,
                found: bytes.len() as u64,
            });
        }
        let params = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (mut layers, _) = build_layout(&manifest.config);
        if layers.len() != manifest.layers.len()
            || layers
                .iter()
                .zip(&manifest.layers)
                .any(|(a, b)| a.name != b.name || a.shape != b.shape)
        {
            return Err(Error::ShapeMismatch(format!(
                "{}: layer table does not match its config",
                path.display()
            )));
        }
        for (l, m) in layers.iter_mut().zip(&manifest.layers) {
            l.kind = m.kind;
        }
        let w = EncoderWeights {
            config: manifest.config,
            layers,
            params,
        };
        w.validate()?;
        Ok(w)
    }
}

/// `(t, y, x, c)` output of a factor-2 space-to-depth rearrangement of `(t, y, x)` frames.
pub fn pixel_unshuffle<T: Copy>(frames: &[T], t: usize, h: usize, w: usize) -> Result<Vec<T>> {
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::ShapeMismatch(format!("pixel unshuffle needs even dimensions, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(frames.len());
    for f in 0..t {
        let frame = &frames[f * h * w..(f + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                for c in 0..UNSHUFFLE_CHANNELS {
                    out.push(frame[(2 * y + c / 2) * w + 2 * x + c % 2]);
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_unshuffle`]; `h` and `w` are the unshuffled dimensions.
pub fn pixel_shuffle<T: Copy + Default>(cells: &[T], t: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::default(); t * oh * ow];
    for f in 0..t {
        for y in 0..h {
            for x in 0..w {
                for c in 0..UNSHUFFLE_CHANNELS {
                    out[f * oh * ow + (2 * y + c / 2) * ow + 2 * x + c % 2] =
                        cells[((f * h + y) * w + x) * UNSHUFFLE_CHANNELS + c];
                }
            }
        }
    }
    out
}

/// Channel-major unshuffle of one frame: `4 × h/2 × w/2`.
fn unshuffle_frame<T: Real>(frame: &[f32], h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![T::zero(); UNSHUFFLE_CHANNELS * oh * ow];
    for c in 0..UNSHUFFLE_CHANNELS {
        for y in 0..oh {
            for x in 0..ow {
                out[(c * oh + y) * ow + x] = T::of(frame[(2 * y + c / 2) * w + 2 * x + c % 2] as f64);
            }
        }
    }
    out
}

/// Features of every frame at one pyramid level, `frames × channels × h × w`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureLevel<T> {
    pub stride: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> FeatureLevel<T> {
    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[T] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    /// Feature vector of cell `(row, col)` at frame `t`.
    pub fn cell(&self, t: usize, row: usize, col: usize) -> Vec<T> {
        let f = self.frame(t);
        let hw = self.height * self.width;
        (0..self.channels).map(|c| f[c * hw + row * self.width + col]).collect()
    }
}

/// Three feature maps per frame at strides 8, 8 and 16.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid<T> {
    pub num_frames: usize,
    pub levels: [FeatureLevel<T>; 3],
}

/// Intermediate values of one sub-block kept for the backward pass.
struct SubTape<T> {
    input: Vec<T>,
    h: usize,
    w: usize,
    col1: Vec<T>,
    norm1: NormCache<T>,
    act1: Vec<T>,
    col2: Vec<T>,
    norm2: NormCache<T>,
    proj_col: Vec<T>,
    output: Vec<T>,
}

/// Recorded forward pass of one frame.
pub struct FrameTape<T> {
    subs: Vec<SubTape<T>>,
}

/// Runs the network on one frame. Returns the three level maps (channel-major)
/// and, when `record` is set, the tape needed by [`backward_frame`].
fn forward_frame<T: Real>(
    weights: &EncoderWeights<T>,
    blocks: &[SubBlock],
    frame: &[f32],
    h: usize,
    w: usize,
    record: bool,
) -> ([Vec<T>; 3], Option<FrameTape<T>>) {
    let p = &weights.params;
    let lp = |i: usize| &p[weights.layers[i].range()];
    let mut x = unshuffle_frame::<T>(frame, h, w);
    let (mut ch, mut cw) = (h / 2, w / 2);
    let mut tape = Vec::new();
    let mut levels: [Vec<T>; 3] = Default::default();
    for (i, b) in blocks.iter().enumerate() {
        let s1 = b.conv1_shape(ch, cw);
        let (oh, ow) = (s1.out_h(), s1.out_w());
        let mut col1 = Vec::new();
        let z1 = conv_forward(&s1, lp(b.conv1), &x, &mut col1);
        let (mut a1, norm1) = instance_norm_forward(&z1, b.c_out, lp(b.scale1), lp(b.offset1));
        relu_in_place(&mut a1);
        let s2 = b.conv2_shape(oh, ow);
        let mut col2 = Vec::new();
        let z2 = conv_forward(&s2, lp(b.conv2), &a1, &mut col2);
        let (mut y, norm2) = instance_norm_forward(&z2, b.c_out, lp(b.scale2), lp(b.offset2));
        let mut proj_col = Vec::new();
        match b.proj {
            Some(pi) => {
                let skip = conv_forward(&b.proj_shape(ch, cw), lp(pi), &x, &mut proj_col);
                for (v, s) in y.iter_mut().zip(&skip) {
                    *v += *s;
                }
            }
            None => {
                for (v, s) in y.iter_mut().zip(&x) {
                    *v += *s;
                }
            }
        }
        relu_in_place(&mut y);
        // Sub-blocks 4, 6 and 8 close groups 2, 3 and 4.
        if i % SUB_BLOCKS == SUB_BLOCKS - 1 && i / SUB_BLOCKS >= 1 {
            levels[i / SUB_BLOCKS - 1] = y.clone();
        }
        let input = std::mem::replace(&mut x, y);
        if record {
            tape.push(SubTape {
                input,
                h: ch,
                w: cw,
                col1,
                norm1,
                act1: a1,
                col2,
                norm2,
                proj_col,
                output: x.clone(),
            });
        }
        ch = oh;
        cw = ow;
    }
    (levels, record.then_some(FrameTape { subs: tape }))
}

/// Accumulates parameter gradients for one frame given the gradients of its
/// three level maps. `grads` has the layout of `weights.params`.
fn backward_frame<T: Real>(
    weights: &EncoderWeights<T>,
    blocks: &[SubBlock],
    tape: &FrameTape<T>,
    level_grads: [&[T]; 3],
    grads: &mut [T],
) {
    let p = &weights.params;
    let layers = &weights.layers;
    let mut d: Vec<T> = Vec::new();
    for (i, b) in blocks.iter().enumerate().rev() {
        let st = &tape.subs[i];
        if i % SUB_BLOCKS == SUB_BLOCKS - 1 && i / SUB_BLOCKS >= 1 {
            let lg = level_grads[i / SUB_BLOCKS - 1];
            if d.is_empty() {
                d = lg.to_vec();
            } else {
                for (a, &g) in d.iter_mut().zip(lg) {
                    *a += g;
                }
            }
        }
        if d.is_empty() {
            // Nothing downstream depends on this block.
            continue;
        }
        for (g, &o) in d.iter_mut().zip(&st.output) {
            if o <= T::zero() {
                *g = T::zero();
            }
        }
        let s1 = b.conv1_shape(st.h, st.w);
        let (oh, ow) = (s1.out_h(), s1.out_w());
        let s2 = b.conv2_shape(oh, ow);

        let (sc2, rest) = split_two(grads, layers[b.scale2].range(), layers[b.offset2].range());
        let dz2 = instance_norm_backward(&d, b.c_out, &p[layers[b.scale2].range()], &st.norm2, sc2, rest);
        let mut da1 = conv_backward(
            &s2,
            &p[layers[b.conv2].range()],
            &st.act1,
            &st.col2,
            &dz2,
            &mut grads[layers[b.conv2].range()],
            true,
        )
        .unwrap();
        for (g, &a) in da1.iter_mut().zip(&st.act1) {
            if a <= T::zero() {
                *g = T::zero();
            }
        }
        let (sc1, off1) = split_two(grads, layers[b.scale1].range(), layers[b.offset1].range());
        let dz1 = instance_norm_backward(&da1, b.c_out, &p[layers[b.scale1].range()], &st.norm1, sc1, off1);
        let need_dx = i > 0;
        let dx1 = conv_backward(
            &s1,
            &p[layers[b.conv1].range()],
            &st.input,
            &st.col1,
            &dz1,
            &mut grads[layers[b.conv1].range()],
            need_dx,
        );
        let skip_dx = match b.proj {
            Some(pi) => conv_backward(
                &b.proj_shape(st.h, st.w),
                &p[layers[pi].range()],
                &st.input,
                &st.proj_col,
                &d,
                &mut grads[layers[pi].range()],
                need_dx,
            ),
            None => Some(d),
        };
        d = match (dx1, skip_dx) {
            (Some(mut a), Some(s)) => {
                for (v, g) in a.iter_mut().zip(&s) {
                    *v += *g;
                }
                a
            }
            _ => Vec::new(),
        };
    }
}

/// Two disjoint mutable sub-slices; `a` must precede `b`.
fn split_two<T>(
    v: &mut [T],
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
) -> (&mut [T], &mut [T]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = v.split_at_mut(b.start);
    (&mut lo[a], &mut hi[..b.end - b.start])
}

fn check_frame_dims(h: usize, w: usize) -> Result<()> {
    if h % 16 != 0 || w % 16 != 0 || h < 32 || w < 32 {
        return Err(Error::ShapeMismatch(format!(
            "encoder input {h}x{w} must be at least 32 and divisible by 16"
        )));
    }
    Ok(())
}

fn assemble<T: Real>(
    config: &EncoderConfig,
    h: usize,
    w: usize,
    per_frame: Vec<[Vec<T>; 3]>,
) -> FeaturePyramid<T> {
    let channels = config.level_channels();
    let num_frames = per_frame.len();
    let mut levels: [FeatureLevel<T>; 3] = std::array::from_fn(|l| FeatureLevel {
        stride: LEVEL_STRIDES[l],
        channels: channels[l],
        height: h / LEVEL_STRIDES[l],
        width: w / LEVEL_STRIDES[l],
        data: Vec::new(),
    });
    for frame in per_frame {
        for (level, data) in levels.iter_mut().zip(frame) {
            level.data.extend(data);
        }
    }
    FeaturePyramid { num_frames, levels }
}

/// A recorded forward pass over a whole clip.
pub struct EncoderTape<T> {
    frames: Vec<FrameTape<T>>,
}

/// The network as a callable: weights plus the resolved block plan.
pub struct Encoder<'w, T> {
    weights: &'w EncoderWeights<T>,
    blocks: Vec<SubBlock>,
}

impl<'w, T: Real> Encoder<'w, T> {
    pub fn new(weights: &'w EncoderWeights<T>) -> Result<Self> {
        weights.validate()?;
        let (_, blocks) = build_layout(&weights.config);
        Ok(Self { weights, blocks })
    }

    pub fn weights(&self) -> &EncoderWeights<T> {
        self.weights
    }

    /// Encodes `(t, y, x)` frames of size `h × w`; frames run in parallel.
    pub fn encode_frames(&self, frames: &[f32], t: usize, h: usize, w: usize) -> Result<FeaturePyramid<T>> {
        check_frame_dims(h, w)?;
        let per_frame: Vec<[Vec<T>; 3]> = frames[..t * h * w]
            .par_chunks_exact(h * w)
            .map(|f| forward_frame(self.weights, &self.blocks, f, h, w, false).0)
            .collect();
        Ok(assemble(&self.weights.config, h, w, per_frame))
    }

    /// Encodes and records everything needed for [`Encoder::backward`].
    pub fn encode_frames_recorded(
        &self,
        frames: &[f32],
        t: usize,
        h: usize,
        w: usize,
    ) -> Result<(FeaturePyramid<T>, EncoderTape<T>)> {
        check_frame_dims(h, w)?;
        let (per_frame, tapes): (Vec<[Vec<T>; 3]>, Vec<FrameTape<T>>) = frames[..t * h * w]
            .par_chunks_exact(h * w)
            .map(|f| {
                let (levels, tape) = forward_frame(self.weights, &self.blocks, f, h, w, true);
                (levels, tape.unwrap())
            })
            .unzip();
        Ok((assemble(&self.weights.config, h, w, per_frame), EncoderTape { frames: tapes }))
    }

    /// Parameter gradients given gradients of every pyramid value.
    ///
    /// Per-frame contributions are summed in frame order.
    pub fn backward(&self, tape: &EncoderTape<T>, grad: &FeaturePyramid<T>) -> Vec<T> {
        let n = self.weights.params.len();
        let per_frame: Vec<Vec<T>> = tape
            .frames
            .par_iter()
            .enumerate()
            .map(|(t, ft)| {
                let mut g = vec![T::zero(); n];
                let lg = [grad.levels[0].frame(t), grad.levels[1].frame(t), grad.levels[2].frame(t)];
                backward_frame(self.weights, &self.blocks, ft, lg, &mut g);
                g
            })
            .collect();
        let mut total = vec![T::zero(); n];
        for g in per_frame {
            for (a, b) in total.iter_mut().zip(g) {
                *a += b;
            }
        }
        total
    }
}

impl<T: Real> FeaturePyramid<T> {
    /// All-zero pyramid with the same shape.
    pub fn zeros_like(&self) -> Self {
        FeaturePyramid {
            num_frames: self.num_frames,
            levels: std::array::from_fn(|l| FeatureLevel {
                data: vec![T::zero(); self.levels[l].data.len()],
                ..self.levels[l]
            }),
        }
    }
}
