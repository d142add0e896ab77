//! PSNR and SSIM for frames with dynamic range 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// PSNR reported for (near-)identical frames.
pub const PSNR_CAP_DB: f64 = 99.0;
const MSE_FLOOR: f64 = 1e-12;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub psnr_db: f64,
    pub ssim: f64,
}

fn check_frames(a: &Tensor, b: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    match *a.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::InvalidShape {
            op,
            detail: format!("expected an H x W x C frame, got {:?}", a.shape()),
        }),
    }
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_frames(a, b, "mse")?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(s / a.len() as f64)
}

/// `10 log10(1 / mse)`, capped at [`PSNR_CAP_DB`] when `mse < 1e-12`.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP_DB
    } else {
        -10.0 * mse.log10()
    }
}

/// PSNR over all pixels and channels jointly.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn luminance(frame: &Tensor, h: usize, w: usize, c: usize) -> Vec<f64> {
    (0..h * w)
        .map(|p| frame.data()[p * c..(p + 1) * c].iter().map(|&v| v as f64).sum::<f64>() / c as f64)
        .collect()
}

/// Separable "valid" filtering of an `h × w` image.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11×11 Gaussian windows (σ = 1.5) of the
/// channel-mean luminance.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (h, w, c) = check_frames(a, b, "ssim")?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidShape {
            op: "ssim",
            detail: format!("frame {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        });
    }
    let k = gaussian_window();
    let la = luminance(a, h, w, c);
    let lb = luminance(b, h, w, c);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(&la, h, w, &k);
    let mu_b = filter_valid(&lb, h, w, &k);
    let aa = filter_valid(&prod(&la, &la), h, w, &k);
    let bb = filter_valid(&prod(&lb, &lb), h, w, &k);
    let ab = filter_valid(&prod(&la, &lb), h, w, &k);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

pub fn evaluate(a: &Tensor, b: &Tensor) -> Result<MetricResult> {
    Ok(MetricResult {
        psnr_db: psnr(a, b)?,
        ssim: ssim(a, b)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Scalar;

    fn frame(h: usize, w: usize, f: impl Fn(usize) -> Scalar) -> Tensor {
        Tensor::new(&[h, w, 3], (0..h * w * 3).map(f).collect()).unwrap()
    }

    #[test]
    fn psnr_closed_forms() {
        let a = frame(4, 4, |_| 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        assert_eq!(psnr_from_mse(0.01), 20.0);
        let zeros = frame(4, 4, |_| 0.0);
        let ones = frame(4, 4, |_| 1.0);
        assert_eq!(psnr(&zeros, &ones).unwrap(), 0.0);
    }

    #[test]
    fn psnr_on_frames_with_mse_of_one_hundredth() {
        // 4 of 100 entries differ by 0.5: MSE = 1/100.
        let a = Tensor::new(&[10, 10, 1], vec![0.0; 100]).unwrap();
        let mut bd = vec![0.0; 100];
        for v in bd.iter_mut().take(4) {
            *v = 0.5;
        }
        let b = Tensor::new(&[10, 10, 1], bd).unwrap();
        assert_eq!(mse(&a, &b).unwrap(), 0.01);
        assert_eq!(psnr(&a, &b).unwrap(), 20.0);
    }

    #[test]
    fn psnr_decreases_with_mse() {
        let mut last = f64::INFINITY;
        for k in 1..20 {
            let p = psnr_from_mse(k as f64 * 0.01);
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_and_constant_frames() {
        let a = frame(16, 16, |i| ((i * 37 % 101) as Scalar) / 100.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-6);

        let c5 = frame(12, 12, |_| 0.5);
        let c6 = frame(12, 12, |_| 0.6);
        let c1 = SSIM_K1 * SSIM_K1;
        // Zero variances: only the luminance term survives.
        let want = (2.0 * 0.5 * 0.6 + c1) / (0.25 + 0.36 + c1);
        assert!((ssim(&c5, &c6).unwrap() - want).abs() < 1e-12 + 8.0 * Scalar::EPSILON as f64);
    }

    #[test]
    fn ssim_rejects_small_frames() {
        let a = frame(10, 16, |_| 0.5);
        assert!(ssim(&a, &a).is_err());
        let b = frame(16, 16, |_| 0.5);
        assert!(ssim(&b, &frame(16, 15, |_| 0.5)).is_err());
    }

    #[test]
    fn gaussian_window_is_normalized() {
        let w = gaussian_window();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(w[0], w[10]);
    }
}
