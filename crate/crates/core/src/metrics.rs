//! PSNR, SSIM, APD and RMSE on 8-bit quantized images.

use std::io::Write;

use crate::datapipe::quantize_value;
use crate::error::Result;
use crate::image::ImagePlane;

const PEAK: f64 = 255.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QualityReport {
    /// Decibels; `+inf` when the images are identical.
    pub psnr: f64,
    pub ssim: f64,
    /// Mean absolute difference in 8-bit units.
    pub apd: f64,
    /// Root mean squared difference in 8-bit units.
    pub rmse: f64,
}

/// Which images are snapped to 8-bit levels before measuring.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Quantization {
    /// Both images, the evaluation convention for network outputs.
    #[default]
    Both,
    /// Only the reference; the test image is compared as floats. Used to
    /// measure synthetic noise, which is never rounded.
    ReferenceOnly,
}

pub fn psnr_from_rmse(rmse: f64) -> f64 {
    if rmse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (PEAK / rmse).log10()
    }
}

fn to_levels(x: &ImagePlane, quantized: bool) -> Vec<f64> {
    if quantized {
        x.data().iter().map(|&v| f64::from(quantize_value(v))).collect()
    } else {
        x.data().iter().map(|&v| f64::from(v) * PEAK).collect()
    }
}

/// Quantizes both images and measures `test` against `reference`.
pub fn evaluate_pair(reference: &ImagePlane, test: &ImagePlane) -> Result<QualityReport> {
    evaluate_pair_with(reference, test, Quantization::Both)
}

pub fn evaluate_pair_with(
    reference: &ImagePlane,
    test: &ImagePlane,
    mode: Quantization,
) -> Result<QualityReport> {
    reference.ensure_same_shape(test, "reference and test")?;
    let a = to_levels(reference, true);
    let b = to_levels(test, mode == Quantization::Both);
    let n = a.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (x, y) in a.iter().zip(&b) {
        let d = x - y;
        abs += d.abs();
        sq += d * d;
    }
    let rmse = (sq / n).sqrt();
    let (c, h, w) = reference.shape();
    Ok(QualityReport {
        psnr: psnr_from_rmse(rmse),
        ssim: ssim_levels(&a, &b, c, h, w),
        apd: abs / n,
        rmse,
    })
}

fn gaussian_window(size: usize) -> Vec<f64> {
    let mid = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - mid;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of one `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = (0..k).map(|i| g[i] * x[y * w + x0 + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..k).map(|i| g[i] * rows[(y0 + i) * ow + x0]).sum();
        }
    }
    out
}

/// Mean SSIM over channels, on values already in 8-bit units. The window
/// shrinks to the largest odd size that fits images smaller than 11 px.
fn ssim_levels(a: &[f64], b: &[f64], c: usize, h: usize, w: usize) -> f64 {
    let mut size = SSIM_WINDOW.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let g = gaussian_window(size.max(1));
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let hw = h * w;
    let mut total = 0.0;
    for ch in 0..c {
        let x = &a[ch * hw..(ch + 1) * hw];
        let y = &b[ch * hw..(ch + 1) * hw];
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(x, h, w, &g);
        let my = filter_valid(y, h, w, &g);
        let sxx = filter_valid(&xx, h, w, &g);
        let syy = filter_valid(&yy, h, w, &g);
        let sxy = filter_valid(&xy, h, w, &g);
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += sum / mx.len() as f64;
    }
    total / c as f64
}

/// Mean SSIM of two images after quantizing both.
pub fn ssim(reference: &ImagePlane, test: &ImagePlane) -> Result<f64> {
    reference.ensure_same_shape(test, "reference and test")?;
    let (c, h, w) = reference.shape();
    Ok(ssim_levels(&to_levels(reference, true), &to_levels(test, true), c, h, w))
}

/// Field-wise mean. PSNR averages to `+inf` if any entry is infinite.
pub fn mean_report(reports: &[QualityReport]) -> Option<QualityReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let avg = |f: fn(&QualityReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Some(QualityReport {
        psnr: avg(|r| r.psnr),
        ssim: avg(|r| r.ssim),
        apd: avg(|r| r.apd),
        rmse: avg(|r| r.rmse),
    })
}

/// Writes `id,psnr,ssim,apd,rmse` rows under a header line.
pub fn write_csv<'a>(
    mut out: impl Write,
    rows: impl IntoIterator<Item = (&'a str, &'a QualityReport)>,
) -> Result<()> {
    writeln!(out, "id,psnr,ssim,apd,rmse")?;
    for (id, r) in rows {
        writeln!(out, "{id},{:.6},{:.6},{:.6},{:.6}", r.psnr, r.ssim, r.apd, r.rmse)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::synth;
    use proptest::prelude::*;

    fn levels(c: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> u8) -> ImagePlane {
        ImagePlane::from_fn(c, h, w, |c, y, x| f32::from(f(c, y, x)) / 255.0)
    }

    #[test]
    fn identical_images() {
        let a = synth::scene(5, 20, 24);
        let r = evaluate_pair(&a, &a).unwrap();
        assert_eq!(r.apd, 0.0);
        assert_eq!(r.rmse, 0.0);
        assert_eq!(r.ssim, 1.0);
        assert!(r.psnr.is_infinite() && r.psnr > 0.0);
    }

    #[test]
    fn constant_offset_of_twenty() {
        let a = levels(3, 16, 16, |c, y, x| (c * 40 + y * 5 + x) as u8);
        let b = levels(3, 16, 16, |c, y, x| (c * 40 + y * 5 + x + 20) as u8);
        let r = evaluate_pair(&a, &b).unwrap();
        assert!((r.rmse - 20.0).abs() < 1e-12);
        assert!((r.apd - 20.0).abs() < 1e-12);
        assert!((r.psnr - 20.0 * 12.75f64.log10()).abs() < 1e-12, "{}", r.psnr);
        assert!((r.psnr - 22.11).abs() < 0.005);
    }

    #[test]
    fn offset_monotonicity() {
        let a = levels(3, 12, 12, |_, y, x| (y * 7 + x * 3) as u8);
        let mut last: Option<QualityReport> = None;
        for off in [1u8, 2, 5, 10, 30] {
            let b = levels(3, 12, 12, |_, y, x| (y * 7 + x * 3) as u8 + off);
            let r = evaluate_pair(&a, &b).unwrap();
            if let Some(p) = last {
                assert!(r.psnr < p.psnr);
                assert!(r.apd > p.apd);
                assert!(r.rmse > p.rmse);
            }
            last = Some(r);
        }
    }

    #[test]
    fn ssim_gaussian_window_is_normalized() {
        let g = gaussian_window(11);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(g[5] > g[4] && (g[4] - g[6]).abs() < 1e-18);
    }

    #[test]
    fn ssim_matches_direct_window_sum() {
        // Independent single-window oracle on an 11 x 11 image.
        let a = synth::scene(1, 11, 11);
        let b = synth::scene(2, 11, 11);
        let g = gaussian_window(11);
        let qa = to_levels(&a, true);
        let qb = to_levels(&b, true);
        let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
        let mut expected = 0.0;
        for ch in 0..3 {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in 0..11 {
                for x in 0..11 {
                    let wgt = g[y] * g[x];
                    let (p, q) = (qa[ch * 121 + y * 11 + x], qb[ch * 121 + y * 11 + x]);
                    mx += wgt * p;
                    my += wgt * q;
                    sxx += wgt * p * p;
                    syy += wgt * q * q;
                    sxy += wgt * p * q;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            expected += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
        expected /= 3.0;
        let got = ssim(&a, &b).unwrap();
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn small_images_use_a_shrunk_window() {
        let a = synth::scene(3, 4, 6);
        let b = synth::scene(4, 4, 6);
        let s = ssim(&a, &b).unwrap();
        assert!(s.is_finite() && (-1.0..=1.0).contains(&s));
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn reference_only_mode_keeps_test_floats() {
        let a = levels(1, 4, 4, |_, _, _| 100);
        let b = ImagePlane::from_fn(1, 4, 4, |_, _, _| 100.4 / 255.0);
        let both = evaluate_pair(&a, &b).unwrap();
        let refonly = evaluate_pair_with(&a, &b, Quantization::ReferenceOnly).unwrap();
        assert_eq!(both.rmse, 0.0);
        assert!((refonly.rmse - 0.4).abs() < 1e-4);
    }

    #[test]
    fn csv_rows() {
        let r = QualityReport { psnr: f64::INFINITY, ssim: 1.0, apd: 0.0, rmse: 0.0 };
        let mut out = Vec::new();
        write_csv(&mut out, [("img0", &r)]).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert_eq!(s, "id,psnr,ssim,apd,rmse\nimg0,inf,1.000000,0.000000,0.000000\n");
    }

    proptest! {
        #[test]
        fn psnr_rmse_identity_and_symmetry(
            a in prop::collection::vec(0u8..=255, 48),
            b in prop::collection::vec(0u8..=255, 48),
        ) {
            let x = levels(3, 4, 4, |c, y, xx| a[c * 16 + y * 4 + xx]);
            let y = levels(3, 4, 4, |c, yy, xx| b[c * 16 + yy * 4 + xx]);
            let r = evaluate_pair(&x, &y).unwrap();
            let s = evaluate_pair(&y, &x).unwrap();
            prop_assert_eq!(r.rmse, s.rmse);
            prop_assert_eq!(r.apd, s.apd);
            prop_assert!((-1.0..=1.0).contains(&r.ssim));
            if r.rmse > 0.0 {
                prop_assert!((r.psnr - 20.0 * (255.0 / r.rmse).log10()).abs() <= 1e-6);
                prop_assert!(r.ssim < 1.0);
            }
        }
    }
}
