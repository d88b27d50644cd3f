//! Accuracy metrics, the query-phase sweep and longitudinal strain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::tracker::{EncodedVideo, Tracker};
use crate::video::{TrajectorySet, VideoTensor};

/// Pixel thresholds of the position-accuracy metric.
pub const THRESHOLDS: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];

fn check_pair(est: &TrajectorySet, reference: &TrajectorySet) -> Result<()> {
    if est.num_points() != reference.num_points()
        || est.num_frames() != reference.num_frames()
        || est.query_frame() != reference.query_frame()
    {
        return Err(Error::ShapeMismatch(format!(
            "estimate is {}x{} (q = {}), reference is {}x{} (q = {})",
            est.num_points(),
            est.num_frames(),
            est.query_frame(),
            reference.num_points(),
            reference.num_frames(),
            reference.query_frame()
        )));
    }
    Ok(())
}

/// Euclidean errors over reference-valid `(n, t ≠ q)` pairs, point-major.
pub fn point_errors(est: &TrajectorySet, reference: &TrajectorySet) -> Result<Vec<f64>> {
    check_pair(est, reference)?;
    let q = reference.query_frame();
    let mut errs = Vec::new();
    for n in 0..reference.num_points() {
        for t in 0..reference.num_frames() {
            if t != q && reference.is_valid(n, t) {
                errs.push(est.point(n, t).distance(reference.point(n, t)));
            }
        }
    }
    if errs.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    Ok(errs)
}

/// Fraction of errors strictly below each threshold, and their mean.
pub fn delta_from_errors(errors: &[f64]) -> Result<([f64; 5], f64)> {
    if errors.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let n = errors.len() as f64;
    let fractions = THRESHOLDS.map(|x| errors.iter().filter(|&&e| e < x).count() as f64 / n);
    let avg = fractions.iter().sum::<f64>() / fractions.len() as f64;
    Ok((fractions, avg))
}

/// Median; the mean of the two middle values for an even count.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Ok(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

pub fn delta_accuracy(est: &TrajectorySet, reference: &TrajectorySet) -> Result<([f64; 5], f64)> {
    delta_from_errors(&point_errors(est, reference)?)
}

/// Median trajectory error over all pooled `(point, frame)` pairs.
pub fn mte(est: &TrajectorySet, reference: &TrajectorySet) -> Result<f64> {
    median(&point_errors(est, reference)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Fractions for [`THRESHOLDS`], in order.
    pub delta: [f64; 5],
    pub delta_avg: f64,
    pub mte: f64,
    pub num_points: usize,
    pub num_frames: usize,
    /// Present only when timing was requested.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_seconds: Option<f64>,
}

impl MetricReport {
    /// Report over pooled errors.
    pub fn from_errors(errors: &[f64], num_points: usize, num_frames: usize) -> Result<Self> {
        let (delta, delta_avg) = delta_from_errors(errors)?;
        Ok(Self {
            delta,
            delta_avg,
            mte: median(errors)?,
            num_points,
            num_frames,
            wall_time_seconds: None,
        })
    }

    pub fn evaluate(est: &TrajectorySet, reference: &TrajectorySet) -> Result<Self> {
        Self::from_errors(
            &point_errors(est, reference)?,
            reference.num_points(),
            reference.num_frames(),
        )
    }

    pub fn csv_header() -> &'static str {
        "delta_1,delta_2,delta_4,delta_8,delta_16,delta_avg,mte,num_points,num_frames"
    }

    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        for d in &self.delta {
            s.push_str(&format!("{d},"));
        }
        s.push_str(&format!(
            "{},{},{},{}",
            self.delta_avg, self.mte, self.num_points, self.num_frames
        ));
        s
    }
}

/// A video with its reference trajectories.
#[derive(Clone, Debug)]
pub struct EvalSample {
    pub video: VideoTensor,
    pub reference: TrajectorySet,
}

/// Anything that maps query points to trajectories.
///
/// `prepare` runs once per sample, `track` once per query frame.
pub trait PointTracker: Sync {
    type Prepared: Send + Sync;

    fn prepare(&self, sample: &EvalSample) -> Result<Self::Prepared>;

    fn track(&self, prepared: &Self::Prepared, queries: &[Point2], query_frame: usize) -> Result<TrajectorySet>;
}

impl PointTracker for Tracker<'_> {
    type Prepared = EncodedVideo<f32>;

    fn prepare(&self, sample: &EvalSample) -> Result<Self::Prepared> {
        self.encode(&sample.video)
    }

    fn track(&self, prepared: &Self::Prepared, queries: &[Point2], query_frame: usize) -> Result<TrajectorySet> {
        Ok(self.track_encoded(prepared, queries, query_frame)?.trajectories)
    }
}

/// Returns the reference motion; its metrics are perfect by construction.
pub struct ReferenceTracker;

impl PointTracker for ReferenceTracker {
    type Prepared = TrajectorySet;

    fn prepare(&self, sample: &EvalSample) -> Result<TrajectorySet> {
        Ok(sample.reference.clone())
    }

    fn track(&self, reference: &TrajectorySet, queries: &[Point2], query_frame: usize) -> Result<TrajectorySet> {
        let anchored = reference.reanchored(query_frame)?;
        if anchored.query_points() != queries {
            return Err(Error::InvalidArgument(
                "reference tracker only answers the reference's own queries".into(),
            ));
        }
        Ok(anchored)
    }
}

/// Errors of one sample tracked from `query_frame`, with the reference
/// re-anchored there (points invalid at that frame are skipped).
pub fn errors_at_frame<P: PointTracker>(
    tracker: &P,
    prepared: &P::Prepared,
    reference: &TrajectorySet,
    query_frame: usize,
) -> Result<Vec<f64>> {
    let anchored = reference.reanchored(query_frame)?;
    if anchored.num_points() == 0 {
        return Ok(Vec::new());
    }
    let est = tracker.track(prepared, &anchored.query_points(), query_frame)?;
    match point_errors(&est, &anchored) {
        Err(Error::EmptyEvaluation) => Ok(Vec::new()),
        other => other,
    }
}

/// Frame nearest to normalized phase `phase` in a clip of `num_frames`.
pub fn phase_frame(phase: f64, num_frames: usize) -> usize {
    (phase * (num_frames - 1) as f64).round() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub phase: f64,
    pub report: MetricReport,
}

/// Evaluates every sample from `num_phases` evenly spaced query phases.
pub fn phase_sweep<P: PointTracker>(
    tracker: &P,
    samples: &[EvalSample],
    num_phases: usize,
) -> Result<Vec<PhaseResult>> {
    if num_phases < 2 {
        return Err(Error::InvalidArgument("phase sweep needs at least 2 phases".into()));
    }
    let phases: Vec<f64> = (0..num_phases).map(|k| k as f64 / (num_phases - 1) as f64).collect();
    let per_sample: Vec<Vec<Vec<f64>>> = samples
        .par_iter()
        .map(|s| {
            let prepared = tracker.prepare(s)?;
            phases
                .iter()
                .map(|&ph| {
                    errors_at_frame(tracker, &prepared, &s.reference, phase_frame(ph, s.reference.num_frames()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let num_points = samples.iter().map(|s| s.reference.num_points()).sum();
    let num_frames = samples.iter().map(|s| s.reference.num_frames()).max().unwrap_or(0);
    phases
        .iter()
        .enumerate()
        .map(|(k, &phase)| {
            let pooled: Vec<f64> = per_sample.iter().flat_map(|s| s[k].iter().copied()).collect();
            Ok(PhaseResult {
                phase,
                report: MetricReport::from_errors(&pooled, num_points, num_frames)?,
            })
        })
        .collect()
}

/// Pooled metrics of every sample tracked from its own query frame.
pub fn evaluate_dataset<P: PointTracker>(tracker: &P, samples: &[EvalSample]) -> Result<MetricReport> {
    let per: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|s| {
            let prepared = tracker.prepare(s)?;
            errors_at_frame(tracker, &prepared, &s.reference, s.reference.query_frame())
        })
        .collect::<Result<_>>()?;
    let pooled: Vec<f64> = per.into_iter().flatten().collect();
    MetricReport::from_errors(
        &pooled,
        samples.iter().map(|s| s.reference.num_points()).sum(),
        samples.iter().map(|s| s.reference.num_frames()).max().unwrap_or(0),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlsReport {
    pub gls_percent: f64,
    pub ed_frame: usize,
    pub es_frame: usize,
    pub lengths: Vec<f64>,
}

/// Polyline length of the points (in order) at every frame.
pub fn polyline_lengths(traj: &TrajectorySet) -> Vec<f64> {
    (0..traj.num_frames())
        .map(|t| {
            (1..traj.num_points())
                .map(|n| traj.point(n, t).distance(traj.point(n - 1, t)))
                .sum()
        })
        .collect()
}

/// Percentage length change from ED to ES. ED defaults to the longest frame
/// and ES to the shortest (first occurrence on ties).
pub fn gls(traj: &TrajectorySet, ed_frame: Option<usize>, es_frame: Option<usize>) -> Result<GlsReport> {
    if traj.num_points() < 2 {
        return Err(Error::InvalidArgument("strain needs at least 2 points".into()));
    }
    let lengths = polyline_lengths(traj);
    let tn = lengths.len();
    for f in [ed_frame, es_frame].into_iter().flatten() {
        if f >= tn {
            return Err(Error::InvalidArgument(format!("frame {f} outside [0, {tn})")));
        }
    }
    let argext = |better: fn(f64, f64) -> bool| {
        (0..tn).fold(0, |b, t| if better(lengths[t], lengths[b]) { t } else { b })
    };
    let ed = ed_frame.unwrap_or_else(|| argext(|a, b| a > b));
    let es = es_frame.unwrap_or_else(|| argext(|a, b| a < b));
    let l_ed = lengths[ed];
    if !(l_ed > 0.0) {
        return Err(Error::InvalidArgument("end-diastolic length is zero".into()));
    }
    Ok(GlsReport {
        gls_percent: 100.0 * (lengths[es] - l_ed) / l_ed,
        ed_frame: ed,
        es_frame: es,
        lengths,
    })
}

/// Mean absolute difference between paired strain values.
pub fn gls_mad(estimates: &[f64], references: &[f64]) -> Result<f64> {
    if estimates.len() != references.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimates vs {} references",
            estimates.len(),
            references.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    Ok(estimates.iter().zip(references).map(|(a, b)| (a - b).abs()).sum::<f64>() / estimates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(tracks: Vec<Vec<(f64, f64)>>) -> TrajectorySet {
        TrajectorySet::from_tracks(
            tracks
                .into_iter()
                .map(|t| t.into_iter().map(|(x, y)| Point2::new(x, y)).collect())
                .collect(),
            0,
        )
        .unwrap()
    }

    #[test]
    fn uniform_three_pixel_error() {
        let r = set(vec![vec![(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]]);
        let e = r.map_points(|p| Point2::new(p.x + 3.0, p.y));
        let (d, avg) = delta_accuracy(&e, &r).unwrap();
        assert_eq!(d, [0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!((avg - 0.6).abs() < 1e-15);
        let (d, _) = delta_accuracy(&r, &r).unwrap();
        assert_eq!(d, [1.0; 5]);
    }

    #[test]
    fn median_rules() {
        assert_eq!(median(&[1.0, 9.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[1.0, 3.0]).unwrap(), 2.0);
        assert!(matches!(median(&[]), Err(Error::EmptyEvaluation)));
    }

    #[test]
    fn query_frame_is_ignored() {
        let r = set(vec![vec![(0.0, 0.0), (1.0, 1.0)]]);
        let mut e = r.clone();
        e.set_point(0, 0, Point2::new(1e6, -1e6));
        assert_eq!(mte(&e, &r).unwrap(), 0.0);
    }

    #[test]
    fn strain_definition() {
        let tr = set(vec![
            vec![(0.0, 0.0), (0.0, 0.0)],
            vec![(100.0, 0.0), (85.0, 0.0)],
        ]);
        let g = gls(&tr, None, None).unwrap();
        assert!((g.gls_percent + 15.0).abs() < 1e-12);
        assert_eq!((g.ed_frame, g.es_frame), (0, 1));
        let still = set(vec![vec![(0.0, 0.0); 3], vec![(5.0, 5.0); 3]]);
        assert_eq!(gls(&still, None, None).unwrap().gls_percent, 0.0);
    }

    #[test]
    fn mad_arithmetic() {
        assert_eq!(gls_mad(&[-14.0, -12.0], &[-13.5, -13.5]).unwrap(), 1.0);
        assert_eq!(gls_mad(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(gls_mad(&[1.0], &[1.0, 2.0]).is_err());
    }
}
