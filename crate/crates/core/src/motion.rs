//! Polar displacement fields, per-phase direction statistics and the
//! minimum-displacement query phase.
//!
//! The angle of a displacement `(Δx, Δy)` is `atan2(Δy, −Δx)`, so a point is
//! recovered from its polar form as `x = x_c − r cos θ`, `y = y_c + r sin θ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::phase_frame;
use crate::video::TrajectorySet;

/// Radius and angle of each point relative to its own position at `center_frame`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarMotionField {
    pub num_points: usize,
    pub num_frames: usize,
    pub center_frame: usize,
    /// `N × T`.
    pub radius: Vec<f64>,
    /// `N × T`, radians in `(−π, π]`.
    pub angle: Vec<f64>,
    /// `N × T`; false where either endpoint of the displacement is invalid.
    pub valid: Vec<bool>,
}

impl PolarMotionField {
    /// `(Δx, Δy)` of entry `(n, t)`.
    pub fn displacement(&self, n: usize, t: usize) -> (f64, f64) {
        let i = n * self.num_frames + t;
        let (r, th) = (self.radius[i], self.angle[i]);
        (-r * th.cos(), r * th.sin())
    }
}

pub fn to_polar(trajs: &TrajectorySet, center_frame: usize) -> Result<PolarMotionField> {
    let (nn, tn) = (trajs.num_points(), trajs.num_frames());
    if center_frame >= tn {
        return Err(Error::InvalidArgument(format!(
            "center frame {center_frame} outside [0, {tn})"
        )));
    }
    let mut radius = Vec::with_capacity(nn * tn);
    let mut angle = Vec::with_capacity(nn * tn);
    let mut valid = Vec::with_capacity(nn * tn);
    for n in 0..nn {
        let c = trajs.point(n, center_frame);
        let cv = trajs.is_valid(n, center_frame);
        for t in 0..tn {
            let p = trajs.point(n, t);
            let ok = cv && trajs.is_valid(n, t);
            if t == center_frame || !ok {
                radius.push(0.0);
                angle.push(0.0);
            } else {
                let (dx, dy) = (p.x - c.x, p.y - c.y);
                radius.push(dx.hypot(dy));
                angle.push(dy.atan2(-dx));
            }
            valid.push(ok);
        }
    }
    Ok(PolarMotionField {
        num_points: nn,
        num_frames: tn,
        center_frame,
        radius,
        angle,
        valid,
    })
}

/// Per-phase direction statistics. `None` marks an empty or motionless slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub phases: Vec<f64>,
    pub resultant_length: Vec<Option<f64>>,
    pub vertical_fraction: Vec<Option<f64>>,
    pub mean_magnitude: Vec<Option<f64>>,
    /// `P × B` counts over `(−π, π]`.
    pub angle_histogram: Vec<Vec<usize>>,
    pub counts: Vec<usize>,
}

impl PhaseStats {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| x.to_string());
        let bins = self.angle_histogram.first().map_or(0, |r| r.len());
        let mut s = String::from("phase,count,resultant_length,vertical_fraction,mean_magnitude");
        for b in 0..bins {
            s.push_str(&format!(",bin_{b}"));
        }
        s.push('\n');
        for p in 0..self.phases.len() {
            s.push_str(&format!(
                "{},{},{},{},{}",
                self.phases[p],
                self.counts[p],
                opt(self.resultant_length[p]),
                opt(self.vertical_fraction[p]),
                opt(self.mean_magnitude[p])
            ));
            for c in &self.angle_histogram[p] {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Histogram bin of an angle in `(−π, π]`.
pub fn angle_bin(theta: f64, bins: usize) -> usize {
    use std::f64::consts::PI;
    let b = ((theta + PI) / (2.0 * PI) * bins as f64).floor();
    (b.max(0.0) as usize).min(bins - 1)
}

/// Pools displacements of every field into `num_phases` slots by normalized
/// frame phase; the center frame itself is not a displacement and is skipped.
pub fn phase_stats(fields: &[PolarMotionField], num_phases: usize, num_bins: usize) -> Result<PhaseStats> {
    if num_phases < 2 || num_bins == 0 {
        return Err(Error::InvalidArgument("need at least 2 phases and 1 bin".into()));
    }
    let mut sum_c = vec![0.0; num_phases];
    let mut sum_s = vec![0.0; num_phases];
    let mut sum_r = vec![0.0; num_phases];
    let mut sum_ax = vec![0.0; num_phases];
    let mut sum_ay = vec![0.0; num_phases];
    let mut counts = vec![0usize; num_phases];
    let mut hist = vec![vec![0usize; num_bins]; num_phases];
    for f in fields {
        for t in 0..f.num_frames {
            if t == f.center_frame {
                continue;
            }
            let phase = t as f64 / (f.num_frames - 1).max(1) as f64;
            let slot = phase_frame(phase, num_phases);
            for n in 0..f.num_points {
                let i = n * f.num_frames + t;
                if !f.valid[i] {
                    continue;
                }
                let (r, th) = (f.radius[i], f.angle[i]);
                let (dx, dy) = f.displacement(n, t);
                sum_c[slot] += r * th.cos();
                sum_s[slot] += r * th.sin();
                sum_r[slot] += r;
                sum_ax[slot] += dx.abs();
                sum_ay[slot] += dy.abs();
                counts[slot] += 1;
                hist[slot][angle_bin(th, num_bins)] += 1;
            }
        }
    }
    let ratio = |num: f64, den: f64| (den > 0.0).then(|| num / den);
    Ok(PhaseStats {
        phases: (0..num_phases).map(|k| k as f64 / (num_phases - 1) as f64).collect(),
        resultant_length: (0..num_phases)
            .map(|k| ratio(sum_c[k].hypot(sum_s[k]), sum_r[k]))
            .collect(),
        vertical_fraction: (0..num_phases)
            .map(|k| ratio(sum_ay[k], sum_ax[k] + sum_ay[k]))
            .collect(),
        mean_magnitude: (0..num_phases)
            .map(|k| ratio(sum_r[k], counts[k] as f64))
            .collect(),
        angle_histogram: hist,
        counts,
    })
}

/// Mean displacement from frame `q` over every valid `(sample, n, t ≠ q)`.
pub fn mean_displacement_from(trajs: &[TrajectorySet], phase: f64) -> Option<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for tr in trajs {
        let q = phase_frame(phase, tr.num_frames());
        for n in 0..tr.num_points() {
            if !tr.is_valid(n, q) {
                continue;
            }
            let pq = tr.point(n, q);
            for t in 0..tr.num_frames() {
                if t != q && tr.is_valid(n, t) {
                    sum += tr.point(n, t).distance(pq);
                    count += 1;
                }
            }
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Phase in `[0, 1]` whose frame has the smallest mean displacement to all
/// other frames; the earliest phase wins ties.
pub fn optimal_init_phase(trajs: &[TrajectorySet], num_phases: usize) -> Result<f64> {
    if num_phases < 2 {
        return Err(Error::InvalidArgument("need at least 2 phases".into()));
    }
    let mut best: Option<(f64, f64)> = None;
    for k in 0..num_phases {
        let phase = k as f64 / (num_phases - 1) as f64;
        if let Some(d) = mean_displacement_from(trajs, phase) {
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((phase, d));
            }
        }
    }
    best.map(|(p, _)| p).ok_or(Error::EmptyEvaluation)
}
