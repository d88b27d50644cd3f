//! Points, 2D affine maps and the pixel coordinate convention.
//!
//! x grows to the right (columns), y grows downward (rows), and the integer
//! coordinate `(i, j)` is the center of the pixel in column `i`, row `j`.
//! A feature grid at stride `s` places cell `g` at image coordinate
//! `(g + 0.5) * s - 0.5`.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

/// Image coordinate to feature-grid coordinate at `stride`.
#[inline]
pub fn image_to_grid(p: f64, stride: f64) -> f64 {
    (p + 0.5) / stride - 0.5
}

/// Feature-grid coordinate at `stride` back to image coordinate.
#[inline]
pub fn grid_to_image(g: f64, stride: f64) -> f64 {
    (g + 0.5) * stride - 0.5
}

/// Maps a coordinate between two resolutions of the same field of view
/// (`scale = new_size / old_size`), keeping pixel centers aligned.
#[inline]
pub fn rescale_coord(p: f64, scale: f64) -> f64 {
    (p + 0.5) * scale - 0.5
}

/// Affine map `p -> A p + b` stored row-major as `[a00, a01, b0, a10, a11, b1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine2 {
    pub m: [f64; 6],
}

impl Default for Affine2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Affine2 {
    pub const fn identity() -> Self {
        Self {
            m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        }
    }

    pub const fn new(a00: f64, a01: f64, b0: f64, a10: f64, a11: f64, b1: f64) -> Self {
        Self {
            m: [a00, a01, b0, a10, a11, b1],
        }
    }

    pub const fn translation(dx: f64, dy: f64) -> Self {
        Self::new(1.0, 0.0, dx, 0.0, 1.0, dy)
    }

    pub const fn linear(a00: f64, a01: f64, a10: f64, a11: f64) -> Self {
        Self::new(a00, a01, 0.0, a10, a11, 0.0)
    }

    /// With y pointing down a positive angle turns +x toward +y, which is
    /// clockwise on screen.
    pub fn rotation_deg(deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        Self::linear(c, -s, s, c)
    }

    /// `L` applied about `center`: `p -> center + L (p - center)`.
    pub fn about(center: Point2, linear: Affine2) -> Self {
        Affine2::translation(center.x, center.y)
            .compose(&linear)
            .compose(&Affine2::translation(-center.x, -center.y))
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn det(&self) -> f64 {
        self.m[0] * self.m[4] - self.m[1] * self.m[3]
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Affine2) -> Affine2 {
        let a = &self.m;
        let b = &other.m;
        Affine2::new(
            a[0] * b[0] + a[1] * b[3],
            a[0] * b[1] + a[1] * b[4],
            a[0] * b[2] + a[1] * b[5] + a[2],
            a[3] * b[0] + a[4] * b[3],
            a[3] * b[1] + a[4] * b[4],
            a[3] * b[2] + a[4] * b[5] + a[5],
        )
    }

    pub fn inverse(&self) -> Option<Affine2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        if self.is_identity() {
            return Some(*self);
        }
        let m = &self.m;
        let i00 = m[4] / det;
        let i01 = -m[1] / det;
        let i10 = -m[3] / det;
        let i11 = m[0] / det;
        Some(Affine2::new(
            i00,
            i01,
            -(i00 * m[2] + i01 * m[5]),
            i10,
            i11,
            -(i10 * m[2] + i11 * m[5]),
        ))
    }

    #[inline]
    pub fn apply(&self, p: Point2) -> Point2 {
        let m = &self.m;
        Point2::new(
            m[0] * p.x + m[1] * p.y + m[2],
            m[3] * p.x + m[4] * p.y + m[5],
        )
    }

    /// Applies only the linear part (for displacement vectors).
    #[inline]
    pub fn apply_vector(&self, v: Point2) -> Point2 {
        let m = &self.m;
        Point2::new(m[0] * v.x + m[1] * v.y, m[3] * v.x + m[4] * v.y)
    }
}
