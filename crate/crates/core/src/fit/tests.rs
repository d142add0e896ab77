use super::*;
use crate::repr::VideoGeometry;
use crate::video::{synth_video, SynthKind};

fn small_triplane(frames: usize, size: usize, n: usize, c: usize) -> Representation {
    let mut cfg = RepConfig::new(
        Family::TriPlane,
        VideoGeometry {
            frames,
            height: size,
            width: size,
        },
    );
    cfg.triplane.resolution = n;
    cfg.triplane.channels = c;
    cfg.decoder.hidden_channels = 8;
    Representation::new(cfg).unwrap()
}

fn quick(steps: usize) -> FitConfig {
    FitConfig {
        steps,
        batch: 2,
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn mse_loss_closed_forms() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::full(&[2, 2, 3], 0.0));
    let b = tape.constant(Tensor::full(&[2, 2, 3], 1.0));
    let same = mse_loss(&mut tape, a, a).unwrap();
    let diff = mse_loss(&mut tape, a, b).unwrap();
    assert_eq!(tape.value(same).data(), &[0.0]);
    assert_eq!(tape.value(diff).data(), &[1.0]);
    let c = tape.constant(Tensor::zeros(&[2, 3, 3]));
    assert!(mse_loss(&mut tape, a, c).is_err());
}

#[test]
fn mse_loss_gradient_matches_central_differences() {
    let pred: Vec<Scalar> = (0..12).map(|i| (i as Scalar * 0.41).sin()).collect();
    let target: Vec<Scalar> = (0..12).map(|i| (i as Scalar * 0.23).cos()).collect();
    let mut tape = Tape::new();
    let p = tape.param("p", Tensor::new(&[2, 2, 3], pred.clone()).unwrap());
    let t = tape.constant(Tensor::new(&[2, 2, 3], target.clone()).unwrap());
    let l = mse_loss(&mut tape, p, t).unwrap();
    let g = tape.backward(l).unwrap();
    let g = g.get(p).unwrap().data();

    let f = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| (a - *b as f64).powi(2)).sum::<f64>() / 12.0;
    let h = 1e-6;
    for i in 0..12 {
        let mut up: Vec<f64> = pred.iter().map(|&v| v as f64).collect();
        let mut dn = up.clone();
        up[i] += h;
        dn[i] -= h;
        let fd = (f(&up) - f(&dn)) / (2.0 * h);
        let closed = 2.0 * (pred[i] - target[i]) as f64 / 12.0;
        assert!((g[i] as f64 - fd).abs() < 1e-4, "{i}");
        assert!((g[i] as f64 - closed).abs() < 1e-6, "{i}");
    }
}

#[test]
fn adam_on_a_parabola_matches_scalar_simulation() {
    let mut store = crate::repr::ParamStore::default();
    store.insert("x", Tensor::from_vec(vec![1.0]));
    let hyper = AdamHyper {
        lr: 0.1,
        ..Default::default()
    };
    let mut state = AdamState::new(&store);
    for _ in 0..50 {
        let x = store.get("x").unwrap().data()[0];
        adam_step(&mut store, &[Tensor::from_vec(vec![2.0 * x])], &mut state, &hyper).unwrap();
    }
    let got = store.get("x").unwrap().data()[0] as f64;

    // Independent reference in plain f64.
    let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for t in 1..=50 {
        let g = 2.0 * x;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        x -= 0.1 * mh / (vh.sqrt() + 1e-8);
    }
    assert!((got - x).abs() < 1e-5, "{got} vs {x}");
    assert!(got.abs() < 0.1, "{got}");
}

#[test]
fn zero_steps_reports_initialization() {
    let mut rep = small_triplane(4, 12, 4, 2);
    let before = rep.params().clone();
    let video = synth_video(SynthKind::TranslatingSquare, 4, 12, 12, 1).unwrap();
    let plan = make_holdout(4, HoldoutMode::Interpolation, 1).unwrap();
    let report = fit(&mut rep, &video, &plan, &quick(0)).unwrap();
    assert!(rep.params().bitwise_eq(&before));
    assert!(report.loss_curve.is_empty());
    let fresh = evaluate_frames(&rep, &video, &plan.eval).unwrap();
    assert_eq!(report.eval_frames, fresh);
}

#[test]
fn same_seed_gives_identical_parameters() {
    let video = synth_video(SynthKind::TranslatingTexture, 4, 12, 12, 3).unwrap();
    let plan = make_holdout(4, HoldoutMode::Extrapolation, 1).unwrap();
    let run = || {
        let mut rep = small_triplane(4, 12, 4, 2);
        let r = fit(&mut rep, &video, &plan, &quick(15)).unwrap();
        (rep, r)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert!(a.params().bitwise_eq(b.params()));
    assert_eq!(ra.loss_curve, rb.loss_curve);
}

#[test]
fn eval_frames_never_influence_parameters() {
    let video = synth_video(SynthKind::TranslatingTexture, 5, 12, 12, 3).unwrap();
    let mut perturbed = video.clone();
    let plan = make_holdout(5, HoldoutMode::Interpolation, 1).unwrap();
    for &k in &plan.eval {
        perturbed.set_frame(k, &Tensor::full(&[12, 12, 3], 0.9)).unwrap();
    }
    let mut a = small_triplane(5, 12, 4, 2);
    let mut b = small_triplane(5, 12, 4, 2);
    fit(&mut a, &video, &plan, &quick(10)).unwrap();
    fit(&mut b, &perturbed, &plan, &quick(10)).unwrap();
    assert!(a.params().bitwise_eq(b.params()));
}

#[test]
fn constant_video_fits_to_high_psnr() {
    let video = synth_video(SynthKind::Constant, 8, 16, 16, 2).unwrap();
    let mut cfg = RepConfig::new(
        Family::TriPlane,
        VideoGeometry {
            frames: 8,
            height: 16,
            width: 16,
        },
    );
    cfg.triplane.resolution = 8;
    cfg.triplane.channels = 4;
    let mut rep = Representation::new(cfg).unwrap();
    let plan = make_holdout(8, HoldoutMode::None, 0).unwrap();
    let report = fit(&mut rep, &video, &plan, &quick(500)).unwrap();
    assert!(report.train_mean.psnr_db >= 40.0, "{}", report.train_mean.psnr_db);

    // Best-so-far loss sampled every 100 steps never increases.
    let mut best = f64::INFINITY;
    let mut checkpoints = Vec::new();
    for (i, &l) in report.loss_curve.iter().enumerate() {
        best = best.min(l);
        if (i + 1) % 100 == 0 {
            checkpoints.push(best);
        }
    }
    assert!(checkpoints.windows(2).all(|w| w[1] <= w[0]));
    assert!(checkpoints.last().unwrap() < &report.loss_curve[0]);
}

#[test]
fn patience_stops_early() {
    let video = synth_video(SynthKind::Constant, 4, 12, 12, 2).unwrap();
    let mut rep = small_triplane(4, 12, 4, 2);
    let plan = make_holdout(4, HoldoutMode::None, 0).unwrap();
    let cfg = FitConfig {
        patience: Some(1),
        adam: AdamHyper {
            lr: 1e-12,
            ..Default::default()
        },
        ..quick(200)
    };
    let report = fit(&mut rep, &video, &plan, &cfg).unwrap();
    assert!(report.steps_run < 200);
}

#[test]
fn divergence_is_reported_with_last_finite_loss() {
    let video = synth_video(SynthKind::TranslatingSquare, 4, 12, 12, 1).unwrap();
    let mut rep = small_triplane(4, 12, 4, 2);
    let plan = make_holdout(4, HoldoutMode::None, 0).unwrap();
    let cfg = FitConfig {
        adam: AdamHyper {
            lr: 1e300,
            ..Default::default()
        },
        ..quick(20)
    };
    match fit(&mut rep, &video, &plan, &cfg) {
        Err(Error::Diverged { step, last_finite_loss }) => {
            assert!(step >= 1);
            assert!(last_finite_loss.is_some_and(f64::is_finite));
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn mismatched_inputs_are_rejected() {
    let video = synth_video(SynthKind::Constant, 4, 12, 12, 2).unwrap();
    let mut rep = small_triplane(5, 12, 4, 2);
    let plan = make_holdout(4, HoldoutMode::None, 0).unwrap();
    assert!(fit(&mut rep, &video, &plan, &quick(1)).is_err());
    let mut rep = small_triplane(4, 12, 4, 2);
    let bad = FitConfig { batch: 0, ..quick(1) };
    assert!(fit(&mut rep, &video, &plan, &bad).is_err());
}

#[test]
fn comparison_records_budget_violations_and_results() {
    let video = synth_video(SynthKind::TranslatingTexture, 4, 12, 12, 3).unwrap();
    let plan = make_holdout(4, HoldoutMode::Interpolation, 1).unwrap();
    let mut reference = small_triplane(4, 12, 6, 4).config().clone();
    reference.posenc.hidden_layers = 2;
    let table = run_comparison(&video, &reference, &Family::ALL, &plan, &quick(3)).unwrap();
    assert_eq!(table.rows.len(), 4);
    for row in &table.rows {
        if let Some(m) = row.eval_mean {
            assert!(m.psnr_db > 0.0);
            assert!(m.ssim.unwrap() <= 1.0);
        } else {
            assert!(row.error.is_some());
        }
    }
    assert!(table.row(Family::TriPlane).unwrap().succeeded());
    let csv = table.to_csv();
    assert_eq!(csv.lines().count(), 5);
}
