//! Grayscale video volumes, single images and point trajectory sets.

use crate::error::{Error, Result};
use crate::geometry::{rescale_coord, Point2};

pub const MIN_FRAMES: usize = 2;
pub const MIN_SIDE: usize = 16;

/// A single-channel `h × w` float image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "image {}x{} needs {} values, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample with edge clamping.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> f32 {
        sample_bilinear(&self.data, self.height, self.width, x, y)
    }

    /// Resamples to `new_h × new_w` with pixel centers aligned.
    pub fn resize(&self, new_h: usize, new_w: usize) -> Image {
        Image {
            height: new_h,
            width: new_w,
            data: resize_plane(&self.data, self.height, self.width, new_h, new_w),
        }
    }
}

/// Bilinear interpolation on a row-major plane, clamping to the edge pixels.
#[inline]
pub fn sample_bilinear(data: &[f32], h: usize, w: usize, x: f64, y: f64) -> f32 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let v00 = data[y0 * w + x0] as f64;
    let v10 = data[y0 * w + x1] as f64;
    let v01 = data[y1 * w + x0] as f64;
    let v11 = data[y1 * w + x1] as f64;
    let top = v00 * (1.0 - fx) + v10 * fx;
    let bottom = v01 * (1.0 - fx) + v11 * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}

pub(crate) fn resize_plane(data: &[f32], h: usize, w: usize, new_h: usize, new_w: usize) -> Vec<f32> {
    if h == new_h && w == new_w {
        return data.to_vec();
    }
    let sx = w as f64 / new_w as f64;
    let sy = h as f64 / new_h as f64;
    let mut out = Vec::with_capacity(new_h * new_w);
    for i in 0..new_h {
        let y = rescale_coord(i as f64, sy);
        for j in 0..new_w {
            let x = rescale_coord(j as f64, sx);
            out.push(sample_bilinear(data, h, w, x, y));
        }
    }
    out
}

/// A `T × H × W` grayscale intensity volume in `[0, 1]`, stored `(t, y, x)` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    num_frames: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
    pub frame_rate_hint: Option<f32>,
}

impl VideoTensor {
    pub fn new(num_frames: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if num_frames < MIN_FRAMES || height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::ShapeMismatch(format!(
                "video {num_frames}x{height}x{width} below minimum {MIN_FRAMES}x{MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        if data.len() != num_frames * height * width {
            return Err(Error::ShapeMismatch(format!(
                "video {}x{}x{} needs {} values, got {}",
                num_frames,
                height,
                width,
                num_frames * height * width,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        if let Some(index) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!(
                "intensity {} at index {index} outside [0, 1]",
                data[index]
            )));
        }
        Ok(Self {
            num_frames,
            height,
            width,
            data,
            frame_rate_hint: None,
        })
    }

    pub fn from_frames(frames: &[Image]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::ShapeMismatch("no frames".into()))?;
        let mut data = Vec::with_capacity(frames.len() * first.data.len());
        for f in frames {
            if f.height != first.height || f.width != first.width {
                return Err(Error::ShapeMismatch("frames differ in size".into()));
            }
            data.extend_from_slice(&f.data);
        }
        Self::new(frames.len(), first.height, first.width, data)
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_image(&self, t: usize) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.frame(t).to_vec(),
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.height * self.width)
    }

    /// Bilinear resampling of every frame to `new_h × new_w`.
    pub fn resize(&self, new_h: usize, new_w: usize) -> Result<VideoTensor> {
        if new_h < MIN_SIDE || new_w < MIN_SIDE {
            return Err(Error::InvalidArgument(format!(
                "resize target {new_h}x{new_w} below {MIN_SIDE}"
            )));
        }
        let mut data = Vec::with_capacity(self.num_frames * new_h * new_w);
        for f in self.frames() {
            data.extend(resize_plane(f, self.height, self.width, new_h, new_w));
        }
        Ok(VideoTensor {
            num_frames: self.num_frames,
            height: new_h,
            width: new_w,
            data,
            frame_rate_hint: self.frame_rate_hint,
        })
    }

    /// Frames in reverse order.
    pub fn reversed(&self) -> VideoTensor {
        let n = self.height * self.width;
        let mut data = Vec::with_capacity(self.data.len());
        for t in (0..self.num_frames).rev() {
            data.extend_from_slice(&self.data[t * n..(t + 1) * n]);
        }
        VideoTensor {
            data,
            ..self.clone()
        }
    }

    /// Keeps the listed frames, in the listed order.
    pub fn select_frames(&self, indices: &[usize]) -> Result<VideoTensor> {
        let frames: Vec<Image> = indices.iter().map(|&t| self.frame_image(t)).collect();
        let mut v = VideoTensor::from_frames(&frames)?;
        v.frame_rate_hint = self.frame_rate_hint;
        Ok(v)
    }
}

/// `N` point tracks over `T` frames sharing one query frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySet {
    num_points: usize,
    num_frames: usize,
    /// `points[n * T + t]`
    points: Vec<Point2>,
    valid: Vec<bool>,
    query_frame: usize,
}

impl TrajectorySet {
    pub fn new(
        num_points: usize,
        num_frames: usize,
        points: Vec<Point2>,
        valid: Vec<bool>,
        query_frame: usize,
    ) -> Result<Self> {
        if points.len() != num_points * num_frames {
            return Err(Error::ShapeMismatch(format!(
                "points has {} entries, expected {}x{}",
                points.len(),
                num_points,
                num_frames
            )));
        }
        if valid.len() != num_points * num_frames {
            return Err(Error::ShapeMismatch(format!(
                "valid has {} entries, expected {}x{}",
                valid.len(),
                num_points,
                num_frames
            )));
        }
        if num_frames == 0 || query_frame >= num_frames {
            return Err(Error::InvalidArgument(format!(
                "query frame {query_frame} outside [0, {num_frames})"
            )));
        }
        for n in 0..num_points {
            let i = n * num_frames + query_frame;
            if !valid[i] || !points[i].is_finite() {
                return Err(Error::InvalidQueryPoint { point: n });
            }
        }
        Ok(Self {
            num_points,
            num_frames,
            points,
            valid,
            query_frame,
        })
    }

    /// Tracks that are valid everywhere.
    pub fn from_tracks(tracks: Vec<Vec<Point2>>, query_frame: usize) -> Result<Self> {
        let num_points = tracks.len();
        let num_frames = tracks.first().map_or(0, |t| t.len());
        if tracks.iter().any(|t| t.len() != num_frames) {
            return Err(Error::ShapeMismatch("tracks differ in length".into()));
        }
        let points: Vec<Point2> = tracks.into_iter().flatten().collect();
        let valid = vec![true; points.len()];
        Self::new(num_points, num_frames, points, valid, query_frame)
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn query_frame(&self) -> usize {
        self.query_frame
    }

    #[inline]
    pub fn point(&self, n: usize, t: usize) -> Point2 {
        self.points[n * self.num_frames + t]
    }

    #[inline]
    pub fn is_valid(&self, n: usize, t: usize) -> bool {
        self.valid[n * self.num_frames + t]
    }

    pub fn track(&self, n: usize) -> &[Point2] {
        &self.points[n * self.num_frames..(n + 1) * self.num_frames]
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// Positions at the query frame.
    pub fn query_points(&self) -> Vec<Point2> {
        (0..self.num_points)
            .map(|n| self.point(n, self.query_frame))
            .collect()
    }

    /// Marks entries outside `[-0.5, w - 0.5] × [-0.5, h - 0.5]` invalid.
    pub fn invalidate_outside(&mut self, height: usize, width: usize) {
        for (p, v) in self.points.iter().zip(self.valid.iter_mut()) {
            if !in_frame(*p, height, width) {
                *v = false;
            }
        }
    }

    /// Whether every valid entry lies inside the frame.
    pub fn within_bounds(&self, height: usize, width: usize) -> bool {
        self.points
            .iter()
            .zip(&self.valid)
            .all(|(p, &v)| !v || in_frame(*p, height, width))
    }

    /// Coordinates of a same-view video resized from `old` to `new` (h, w).
    pub fn rescaled(&self, old: (usize, usize), new: (usize, usize)) -> TrajectorySet {
        let sy = new.0 as f64 / old.0 as f64;
        let sx = new.1 as f64 / old.1 as f64;
        let points = self
            .points
            .iter()
            .map(|p| Point2::new(rescale_coord(p.x, sx), rescale_coord(p.y, sy)))
            .collect();
        TrajectorySet {
            points,
            ..self.clone()
        }
    }

    /// Time axis reversed; the query frame moves to `T - 1 - q`.
    pub fn reversed(&self) -> TrajectorySet {
        let mut points = Vec::with_capacity(self.points.len());
        let mut valid = Vec::with_capacity(self.valid.len());
        for n in 0..self.num_points {
            let base = n * self.num_frames;
            for t in (0..self.num_frames).rev() {
                points.push(self.points[base + t]);
                valid.push(self.valid[base + t]);
            }
        }
        TrajectorySet {
            points,
            valid,
            query_frame: self.num_frames - 1 - self.query_frame,
            ..*self
        }
    }

    /// Same tracks anchored at another frame. Points invalid there are dropped.
    pub fn reanchored(&self, query_frame: usize) -> Result<TrajectorySet> {
        let keep: Vec<usize> = (0..self.num_points)
            .filter(|&n| self.is_valid(n, query_frame))
            .collect();
        self.subset_points(&keep)?.with_query_frame(query_frame)
    }

    fn with_query_frame(self, query_frame: usize) -> Result<TrajectorySet> {
        TrajectorySet::new(
            self.num_points,
            self.num_frames,
            self.points,
            self.valid,
            query_frame,
        )
    }

    /// Keeps the listed points, in the listed order.
    pub fn subset_points(&self, indices: &[usize]) -> Result<TrajectorySet> {
        let mut points = Vec::with_capacity(indices.len() * self.num_frames);
        let mut valid = Vec::with_capacity(indices.len() * self.num_frames);
        for &n in indices {
            if n >= self.num_points {
                return Err(Error::InvalidArgument(format!("point index {n} out of range")));
            }
            points.extend_from_slice(self.track(n));
            valid.extend_from_slice(&self.valid[n * self.num_frames..(n + 1) * self.num_frames]);
        }
        TrajectorySet::new(indices.len(), self.num_frames, points, valid, self.query_frame)
    }

    /// Keeps the listed frames; `query_frame` indexes the new time axis.
    pub fn select_frames(&self, indices: &[usize], query_frame: usize) -> Result<TrajectorySet> {
        let mut points = Vec::with_capacity(self.num_points * indices.len());
        let mut valid = Vec::with_capacity(self.num_points * indices.len());
        for n in 0..self.num_points {
            for &t in indices {
                points.push(self.point(n, t));
                valid.push(self.is_valid(n, t));
            }
        }
        TrajectorySet::new(self.num_points, indices.len(), points, valid, query_frame)
    }

    /// Applies `f` to every coordinate, keeping validity.
    pub fn map_points(&self, mut f: impl FnMut(Point2) -> Point2) -> TrajectorySet {
        TrajectorySet {
            points: self.points.iter().map(|&p| f(p)).collect(),
            ..self.clone()
        }
    }

    #[cfg(test)]
    pub(crate) fn set_point(&mut self, n: usize, t: usize, p: Point2) {
        self.points[n * self.num_frames + t] = p;
    }
}

#[inline]
pub fn in_frame(p: Point2, height: usize, width: usize) -> bool {
    p.is_finite()
        && p.x >= -0.5
        && p.x <= width as f64 - 0.5
        && p.y >= -0.5
        && p.y <= height as f64 - 0.5
}
