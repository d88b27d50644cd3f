//! Training loop contracts: determinism, schedule wiring, gradient linearity
//! and loss reduction on an easy dataset.

use specktrack::augment::AugConfig;
use specktrack::encoder::{EncoderConfig, EncoderWeights};
use specktrack::eval::EvalSample;
use specktrack::synth::{gen_dataset, SynthConfig};
use specktrack::tracker::TrackerConfig;
use specktrack::train::{
    checkpoint_paths, clip_loss_and_grad, draw_clip, fit, gradcheck, one_cycle_lr, GradCheckConfig, TrainConfig,
};

fn translation_only(n: usize, seed: u64) -> Vec<EvalSample> {
    let cfg = SynthConfig {
        num_frames: 12,
        scale_range: (1.0, 1.0),
        rotation_range: (0.0, 0.0),
        shear_range: (0.0, 0.0),
        translation_x_range: (-4.0, 4.0),
        translation_y_range: (-4.0, 4.0),
        seed,
        ..SynthConfig::default()
    };
    gen_dataset(&cfg, 0, n)
        .unwrap()
        .into_iter()
        .map(|s| EvalSample {
            video: s.video,
            reference: s.trajectories,
        })
        .collect()
}

fn small_config(steps: usize) -> TrainConfig {
    TrainConfig {
        total_steps: steps,
        batch_size: 1,
        clip_length: 6,
        points_per_sample: 16,
        encoder: EncoderConfig {
            channels: [8, 16, 16, 16],
            resolution: 64,
            weight_seed: 5,
        },
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_gives_identical_weights_and_logs() {
    let data = translation_only(4, 1);
    let cfg = small_config(4);
    let a = fit(&data, &cfg, None, None, |_| {}).unwrap();
    let b = fit(&data, &cfg, None, None, |_| {}).unwrap();
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.reports, b.reports);
    for r in &a.reports {
        assert_eq!(r.lr, one_cycle_lr(r.step, &cfg).unwrap());
    }
}

#[test]
fn checkpoints_are_written_and_loadable() {
    let data = translation_only(2, 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_every: 2,
        ..small_config(3)
    };
    let out = fit(&data, &cfg, None, Some(dir.path()), |_| {}).unwrap();
    let (last, best) = checkpoint_paths(dir.path());
    assert_eq!(EncoderWeights::load(&last).unwrap(), out.weights);
    assert_eq!(EncoderWeights::load(&best).unwrap(), out.best_weights);
}

#[test]
fn gradient_is_linear_in_loss_scale() {
    let data = translation_only(2, 3);
    let cfg = small_config(1);
    let clip = draw_clip(&data, &cfg, 0, 0).unwrap();
    let w = EncoderWeights::<f64>::init(&cfg.encoder).unwrap();
    let tracker = TrackerConfig::default();
    let one = clip_loss_and_grad(&w, &clip, &tracker, 1.0).unwrap();
    let two = clip_loss_and_grad(&w, &clip, &tracker, 2.0).unwrap();
    let zero = clip_loss_and_grad(&w, &clip, &tracker, 0.0).unwrap();
    assert_eq!(one.loss, two.loss);
    assert!(one.grad.iter().any(|&g| g != 0.0));
    for ((a, b), z) in one.grad.iter().zip(&two.grad).zip(&zero.grad) {
        assert_eq!(2.0 * a, *b);
        assert_eq!(*z, 0.0);
    }
}

#[test]
fn tiny_gradient_check_passes() {
    let report = gradcheck(&GradCheckConfig::default()).unwrap();
    assert!(report.entries.len() >= 50);
    assert!(report.passed(), "max relative error {:e}", report.max_rel_err);
}

#[test]
fn loss_drops_on_translation_only_data() {
    let data = translation_only(16, 4);
    let cfg = TrainConfig {
        augmentation: AugConfig::disabled(),
        peak_lr: 2e-3,
        encoder: EncoderConfig {
            resolution: 64,
            ..EncoderConfig::desk()
        },
        ..small_config(200)
    };
    let out = fit(&data, &cfg, None, None, |_| {}).unwrap();
    let mean = |r: &[specktrack::train::LossReport]| r.iter().map(|x| x.loss).sum::<f64>() / r.len() as f64;
    let first = mean(&out.reports[..20]);
    let last = mean(&out.reports[180..]);
    assert!(last < 0.25 * first, "loss {first} -> {last}");
}
