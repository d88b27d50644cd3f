//! Invariants over random inputs.

use std::path::Path;

use proptest::prelude::*;
use specktrack::augment::{map_trajectories, reverse_sequence, AffineParams};
use specktrack::encoder::{pixel_shuffle, pixel_unshuffle};
use specktrack::eval::{delta_accuracy, mte};
use specktrack::geometry::{grid_to_image, image_to_grid, Affine2, Point2};
use specktrack::io::{decode_video, encode_video, trajectories_from_json, trajectories_to_json};
use specktrack::motion::to_polar;
use specktrack::tracker::{locate, sharpen};
use specktrack::train::{l1_loss_and_grad, weighted_l1_loss};
use specktrack::video::{TrajectorySet, VideoTensor};

fn video_strategy() -> impl Strategy<Value = VideoTensor> {
    (2usize..4, 16usize..20, 16usize..20).prop_flat_map(|(t, h, w)| {
        prop::collection::vec(0.0f32..=1.0, t * h * w).prop_map(move |d| VideoTensor::new(t, h, w, d).unwrap())
    })
}

fn tracks_strategy() -> impl Strategy<Value = TrajectorySet> {
    (1usize..6, 2usize..6).prop_flat_map(|(n, t)| {
        (
            prop::collection::vec((-10.0f64..80.0, -10.0f64..80.0), n * t),
            prop::collection::vec(any::<bool>(), n * t),
            0..t,
        )
            .prop_map(move |(pts, mut valid, q)| {
                for i in 0..n {
                    valid[i * t + q] = true;
                }
                let points = pts.into_iter().map(|(x, y)| Point2::new(x, y)).collect();
                TrajectorySet::new(n, t, points, valid, q).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_round_trip(p in -100.0f64..600.0, s in prop::sample::select(vec![1.0, 2.0, 4.0, 8.0, 16.0])) {
        prop_assert!((grid_to_image(image_to_grid(p, s), s) - p).abs() < 1e-9);
    }

    #[test]
    fn affine_inverse_round_trip(
        rot in -180.0f64..180.0, sx in 0.5f64..2.0, sy in 0.5f64..2.0,
        tx in -20.0f64..20.0, ty in -20.0f64..20.0, x in -50.0f64..50.0, y in -50.0f64..50.0,
    ) {
        let m = Affine2::translation(tx, ty)
            .compose(&Affine2::rotation_deg(rot))
            .compose(&Affine2::linear(sx, 0.0, 0.0, sy));
        let back = m.inverse().unwrap().apply(m.apply(Point2::new(x, y)));
        prop_assert!(back.distance(Point2::new(x, y)) < 1e-9);
    }

    #[test]
    fn unshuffle_inverts_exactly(v in video_strategy()) {
        let (t, h, w) = (v.num_frames(), v.height() & !1, v.width() & !1);
        let frames: Vec<f32> = (0..t)
            .flat_map(|f| (0..h).flat_map(move |y| (0..w).map(move |x| (f, y, x))))
            .map(|(f, y, x)| v.frame(f)[y * v.width() + x])
            .collect();
        let cells = pixel_unshuffle(&frames, t, h, w).unwrap();
        prop_assert_eq!(pixel_shuffle(&cells, t, h / 2, w / 2), frames);
    }

    #[test]
    fn ustv_round_trip(v in video_strategy()) {
        prop_assert_eq!(decode_video(&encode_video(&v), Path::new("mem")).unwrap(), v);
    }

    #[test]
    fn trajectory_json_is_stable(tr in tracks_strategy()) {
        let once = trajectories_from_json(&trajectories_to_json(&tr), Path::new("mem")).unwrap();
        let twice = trajectories_from_json(&trajectories_to_json(&once), Path::new("mem")).unwrap();
        prop_assert_eq!(&once, &twice);
        for (a, b) in tr.points().iter().zip(once.points()) {
            prop_assert!(a.distance(*b) <= 1e-7 * a.x.abs().max(a.y.abs()).max(1.0));
        }
    }

    #[test]
    fn sharpening_is_monotone_and_bounded(a in -1.0f64..=1.0, b in -1.0f64..=1.0, g in 1.0f64..30.0) {
        let (sa, sb) = (sharpen(a, g), sharpen(b, g));
        prop_assert!((0.0..=1.0).contains(&sa));
        if a <= b { prop_assert!(sa <= sb); }
    }

    #[test]
    fn soft_argmax_stays_in_window(vals in prop::collection::vec(0.0f64..1.0, 64), r in 0.0f64..4.0) {
        let loc = locate(&vals, 8, 8, r);
        let (py, px) = (loc.peak.0 as f64, loc.peak.1 as f64);
        prop_assert!((loc.x - px).abs() <= r + 1e-12 && (loc.y - py).abs() <= r + 1e-12);
        prop_assert_eq!(loc.confidence, vals.iter().cloned().fold(f64::MIN, f64::max));
    }

    #[test]
    fn polar_form_reconstructs_points(tr in tracks_strategy(), c in 0usize..6) {
        let c = c % tr.num_frames();
        let f = to_polar(&tr, c).unwrap();
        for n in 0..tr.num_points() {
            for t in 0..tr.num_frames() {
                if !f.valid[n * tr.num_frames() + t] { continue; }
                let (dx, dy) = f.displacement(n, t);
                let p = tr.point(n, c);
                prop_assert!(Point2::new(p.x + dx, p.y + dy).distance(tr.point(n, t)) < 1e-9);
            }
        }
    }

    #[test]
    fn loss_ignores_point_order(tr in tracks_strategy(), dx in -3.0f64..3.0, seed in any::<u64>()) {
        let est = tr.map_points(|p| Point2::new(p.x + dx, p.y - 0.5 * dx));
        let mut order: Vec<usize> = (0..tr.num_points()).collect();
        order.rotate_left((seed % tr.num_points() as u64) as usize);
        let a = weighted_l1_loss(&est, &tr);
        let b = weighted_l1_loss(&est.subset_points(&order).unwrap(), &tr.subset_points(&order).unwrap());
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "loss defined for one order only"),
        }
    }

    #[test]
    fn loss_gradient_matches_differences(tr in tracks_strategy(), dx in 0.1f64..3.0) {
        let pred: Vec<[f64; 2]> = tr.points().iter().map(|p| [p.x + dx, p.y - dx]).collect();
        if let Ok((loss, grad)) = l1_loss_and_grad(&pred, &tr) {
            let bumped: Vec<[f64; 2]> = pred.iter().map(|p| [p[0] + 1e-3, p[1]]).collect();
            let (loss2, _) = l1_loss_and_grad(&bumped, &tr).unwrap();
            let predicted: f64 = grad.iter().map(|g| g[0] * 1e-3).sum();
            prop_assert!((loss2 - loss - predicted).abs() < 1e-9);
        }
    }

    #[test]
    fn metrics_of_exact_estimates(tr in tracks_strategy()) {
        if let Ok(m) = mte(&tr, &tr) {
            prop_assert_eq!(m, 0.0);
            prop_assert_eq!(delta_accuracy(&tr, &tr).unwrap().1, 1.0);
        }
    }

    #[test]
    fn double_reversal_is_identity(v in video_strategy(), q in 0usize..2) {
        let t = v.num_frames();
        let tracks = vec![(0..t).map(|i| Point2::new(i as f64, 2.0)).collect()];
        let tr = TrajectorySet::from_tracks(tracks, q).unwrap();
        let (rv, rt) = reverse_sequence(&v, &tr);
        prop_assert_eq!(rt.query_frame(), t - 1 - q);
        prop_assert_eq!(reverse_sequence(&rv, &rt), (v, tr));
    }

    #[test]
    fn affine_point_round_trip(rot in -120.0f64..120.0, s in 0.8f64..1.2, sh in -0.2f64..0.2, tx in -6.0f64..6.0) {
        let p = AffineParams { rotation: rot, scale: (s, 2.0 - s), shear: (sh, 0.0), translation: (tx, -tx), ..Default::default() };
        let m = p.matrix(64, 64);
        let tr = TrajectorySet::from_tracks(vec![vec![Point2::new(32.0, 30.0), Point2::new(33.5, 31.25)]], 0).unwrap();
        let fwd = map_trajectories(&tr, &m, 64, 64).unwrap();
        prop_assume!(fwd.num_points() == 1 && fwd.is_valid(0, 1));
        let back = map_trajectories(&fwd, &m.inverse().unwrap(), 64, 64).unwrap();
        for (a, b) in back.points().iter().zip(tr.points()) {
            prop_assert!(a.distance(*b) < 1e-6);
        }
    }
}
