use std::fs;

use proptest::prelude::*;
use tempfile::TempDir;

use triflow_core::autodiff::kernels;
use triflow_core::fit::{make_holdout, HoldoutMode};
use triflow_core::metrics::{psnr, ssim};
use triflow_core::video::{self, synth_video, vtf, SynthKind};
use triflow_core::{Error, Scalar, Tensor};

fn tensor(shape: &[usize], data: Vec<Scalar>) -> Tensor {
    Tensor::new(shape, data).unwrap()
}

fn unit_values(n: usize) -> impl Strategy<Value = Vec<Scalar>> {
    prop::collection::vec(0.0..=1.0 as Scalar, n)
}

fn shaped_tensor() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(1usize..5, 1..5).prop_flat_map(|dims| {
        let n: usize = dims.iter().product();
        prop::collection::vec(any::<Scalar>().prop_filter("finite", |v| v.is_finite()), n)
            .prop_map(move |data| tensor(&dims, data))
    })
}

prop_compose! {
    /// Features plus a flow that keeps every displaced cell strictly inside
    /// the grid.
    fn interior_warp()(rows in 2usize..7, cols in 2usize..7, ch in 1usize..4)
        (feats in prop::collection::vec(-2.0..2.0 as Scalar, rows * cols * ch),
         frac in prop::collection::vec(0.001..0.999 as Scalar, rows * cols * 2),
         rows in Just(rows), cols in Just(cols), ch in Just(ch))
        -> (Vec<Scalar>, Vec<Scalar>, (usize, usize, usize))
    {
        let mut flow = vec![0.0; rows * cols * 2];
        for r in 0..rows {
            for c in 0..cols {
                let p = r * cols + c;
                // Destination anywhere in the open interior box.
                let tx = frac[2 * p] * (cols - 1) as Scalar;
                let ty = frac[2 * p + 1] * (rows - 1) as Scalar;
                flow[2 * p] = tx - c as Scalar;
                flow[2 * p + 1] = ty - r as Scalar;
            }
        }
        (feats, flow, (rows, cols, ch))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interior_warp_conserves_mass((feats, flow, dims) in interior_warp()) {
        let (out, wsum) = kernels::forward_warp(&feats, &flow, dims);
        let ch = dims.2;
        for k in 0..ch {
            let before: f64 = feats.iter().skip(k).step_by(ch).map(|&v| v as f64).sum();
            let after: f64 = wsum
                .iter()
                .enumerate()
                .map(|(t, &w)| out[t * ch + k] as f64 * w as f64)
                .sum();
            let scale = feats.iter().skip(k).step_by(ch).map(|v| v.abs() as f64).sum::<f64>().max(1.0);
            prop_assert!((before - after).abs() <= 1e-4 * scale, "channel {k}: {before} vs {after}");
        }
        let total_weight: f64 = wsum.iter().map(|&w| w as f64).sum();
        prop_assert!((total_weight - (dims.0 * dims.1) as f64).abs() < 1e-4);
    }

    #[test]
    fn holdout_partitions_frames(frames in 2usize..80, window in 1usize..10, mode_ix in 0usize..3) {
        let mode = [HoldoutMode::Interpolation, HoldoutMode::Extrapolation, HoldoutMode::None][mode_ix];
        prop_assume!(mode == HoldoutMode::None || window < frames);
        let plan = make_holdout(frames, mode, window).unwrap();
        let mut all: Vec<usize> = plan.train.iter().chain(&plan.eval).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..frames).collect::<Vec<_>>());
        prop_assert!(plan.train.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(plan.eval.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(plan.train.contains(&0));
        match mode {
            HoldoutMode::Extrapolation => {
                prop_assert_eq!(plan.eval.clone(), (frames - window..frames).collect::<Vec<_>>());
            }
            HoldoutMode::Interpolation => {
                prop_assert!(plan.train.contains(&(frames - 1)));
                // No held-out run is longer than the window.
                let longest = plan.train.windows(2).map(|w| w[1] - w[0] - 1).max().unwrap_or(0);
                prop_assert!(longest <= window);
            }
            HoldoutMode::None => prop_assert!(plan.eval.is_empty()),
        }
    }

    #[test]
    fn metrics_are_symmetric(a in unit_values(12 * 13 * 3), b in unit_values(12 * 13 * 3)) {
        let a = tensor(&[12, 13, 3], a);
        let b = tensor(&[12, 13, 3], b);
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let (s_ab, s_ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((s_ab - s_ba).abs() <= 1e-12);
        prop_assert!(s_ab <= 1.0 + 1e-12);
    }

    #[test]
    fn vtf_round_trip_is_bitwise(t in shaped_tensor()) {
        let bytes = vtf::encode(&t);
        let back = vtf::decode(&mut bytes.as_slice()).unwrap();
        prop_assert!(back.bitwise_eq(&t));
    }

    #[test]
    fn png_round_trip_within_one_level(vals in unit_values(5 * 7 * 3)) {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("f.png");
        let frame = tensor(&[5, 7, 3], vals);
        video::write_png(&frame, &path).unwrap();
        let back = video::read_png(&path).unwrap();
        prop_assert_eq!(back.shape(), frame.shape());
        for (a, b) in frame.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}

#[test]
fn video_round_trips_through_both_containers() {
    let dir = TempDir::new().unwrap();
    let v = synth_video(SynthKind::TwoObjectsCrossing, 5, 9, 11, 2).unwrap();

    let file = dir.path().join("v.vtf");
    video::save_video(&v, &file).unwrap();
    assert!(video::load_video(&file).unwrap().tensor().bitwise_eq(v.tensor()));

    let frames = dir.path().join("frames");
    video::save_video(&v, &frames).unwrap();
    let back = video::load_video(&frames).unwrap();
    assert_eq!(back.geometry(), v.geometry());
    for (a, b) in v.tensor().data().iter().zip(back.tensor().data()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
    }
}

#[test]
fn missing_frame_reports_its_index() {
    let dir = TempDir::new().unwrap();
    let v = synth_video(SynthKind::TranslatingSquare, 6, 8, 8, 0).unwrap();
    video::save_video(&v, dir.path()).unwrap();
    fs::remove_file(dir.path().join("00003.png")).unwrap();
    match video::load_video(dir.path()) {
        Err(Error::MissingFrame { index, .. }) => assert_eq!(index, 3),
        other => panic!("expected MissingFrame, got {other:?}"),
    }
}

#[test]
fn non_frame_files_are_ignored() {
    let dir = TempDir::new().unwrap();
    let v = synth_video(SynthKind::Constant, 3, 4, 4, 0).unwrap();
    video::save_video(&v, dir.path()).unwrap();
    fs::write(dir.path().join("config.json"), "{}").unwrap();
    assert_eq!(video::load_video(dir.path()).unwrap().len(), 3);
}

#[test]
fn texture_means_agree_across_seeds() {
    let a = synth_video(SynthKind::TranslatingTexture, 8, 32, 32, 1).unwrap();
    let b = synth_video(SynthKind::TranslatingTexture, 8, 32, 32, 2).unwrap();
    assert!(!a.tensor().bitwise_eq(b.tensor()));
    assert!((a.mean() - b.mean()).abs() < 0.1, "{} vs {}", a.mean(), b.mean());
}

#[test]
fn synthetic_videos_are_pure_functions_of_their_parameters() {
    for kind in SynthKind::ALL {
        let a = synth_video(kind, 4, 12, 10, 9).unwrap();
        let b = synth_video(kind, 4, 12, 10, 9).unwrap();
        assert!(a.tensor().bitwise_eq(b.tensor()), "{kind}");
    }
}
