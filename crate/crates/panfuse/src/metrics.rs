//! Quality indexes between a fused image and a reference: ERGAS, SAM, the
//! universal image quality index Q, and PSNR. Reference data is expected in
//! [0, 1]; PSNR uses peak 1 and is capped at 300 dB for identical inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::MultiBandImage;

/// Window edge for the Q index; windows are tiled without overlap.
const Q_WINDOW: usize = 32;
/// Pixel vectors shorter than this are skipped by the spectral angle.
const SAM_NORM_FLOOR: f64 = 1e-12;
/// PSNR reported for a zero-error pair.
const PSNR_CAP_DB: f64 = 300.0;

/// The four indexes for one image pair. Lower is better for `ergas` and
/// `sam_degrees`, higher for `q` and `psnr_db`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub ergas: f64,
    pub sam_degrees: f64,
    pub q: f64,
    pub psnr_db: f64,
    pub ratio: usize,
}

fn check_shapes(test: &MultiBandImage, reference: &MultiBandImage) -> Result<()> {
    if !test.same_shape(reference) {
        return Err(Error::ShapeMismatch(format!(
            "test is {}x{}x{}, reference is {}x{}x{}",
            test.width(),
            test.height(),
            test.bands(),
            reference.width(),
            reference.height(),
            reference.bands()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB with peak 1: `10 log10(1 / MSE)` over
/// all bands and pixels, capped at 300 when the error is exactly zero.
pub fn psnr(test: &MultiBandImage, reference: &MultiBandImage) -> Result<f64> {
    check_shapes(test, reference)?;
    let n = test.samples().len() as f64;
    let mse = test
        .samples()
        .iter()
        .zip(reference.samples())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Spectral angle mapper in degrees: the mean over pixels of the angle
/// between the test and reference band vectors. Pixels where either vector
/// norm falls below 1e-12 are skipped; skipping every pixel is an error.
pub fn sam(test: &MultiBandImage, reference: &MultiBandImage) -> Result<f64> {
    check_shapes(test, reference)?;
    if test.bands() < 2 {
        return Err(Error::InvalidInput(
            "spectral angle needs at least two bands".into(),
        ));
    }
    let plane = test.width() * test.height();
    let bands = test.bands();
    let mut total = 0.0;
    let mut counted = 0usize;
    for p in 0..plane {
        let mut nt = 0.0;
        let mut nr = 0.0;
        for b in 0..bands {
            let t = test.samples()[b * plane + p];
            let r = reference.samples()[b * plane + p];
            nt += t * t;
            nr += r * r;
        }
        let (nt, nr) = (nt.sqrt(), nr.sqrt());
        if nt < SAM_NORM_FLOOR || nr < SAM_NORM_FLOOR {
            continue;
        }
        // Chord form of the angle between the unit vectors: exact for
        // identical inputs and well conditioned near zero, where the
        // arccos of the normalized dot product loses half the digits.
        let mut chord_sq = 0.0;
        for b in 0..bands {
            let d = test.samples()[b * plane + p] / nt
                - reference.samples()[b * plane + p] / nr;
            chord_sq += d * d;
        }
        total += 2.0 * (chord_sq.sqrt() / 2.0).min(1.0).asin();
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Numerical(
            "every pixel was skipped by the spectral angle".into(),
        ));
    }
    Ok((total / counted as f64).to_degrees())
}

/// Relative dimensionless global error:
/// `100 * (1/ratio) * sqrt((1/S) * sum_b (RMSE_b / mean_b)^2)` with band
/// means taken from the reference. A zero reference band mean is an error.
pub fn ergas(test: &MultiBandImage, reference: &MultiBandImage, ratio: usize) -> Result<f64> {
    check_shapes(test, reference)?;
    if ratio == 0 {
        return Err(Error::InvalidInput("ratio must be >= 1".into()));
    }
    let plane = (test.width() * test.height()) as f64;
    let mut acc = 0.0;
    for b in 0..test.bands() {
        let mean = reference.band(b).iter().sum::<f64>() / plane;
        if mean == 0.0 {
            return Err(Error::Numerical(format!(
                "reference band {b} has zero mean"
            )));
        }
        let mse = test
            .band(b)
            .iter()
            .zip(reference.band(b))
            .map(|(a, r)| (a - r) * (a - r))
            .sum::<f64>()
            / plane;
        let rel = mse.sqrt() / mean;
        acc += rel * rel;
    }
    Ok(100.0 / ratio as f64 * (acc / test.bands() as f64).sqrt())
}

/// Q on one window pair given their moments.
fn q_window(sx2: f64, sy2: f64, sxy: f64, mx: f64, my: f64) -> Option<f64> {
    let den = (sx2 + sy2) * (mx * mx + my * my);
    if den == 0.0 {
        // A pair of identical degenerate windows is a perfect match; treat
        // it as the limit value instead of skipping it, so identical images
        // always score 1.
        if sx2 == sy2 && sxy == sx2 && mx == my {
            return Some(1.0);
        }
        return None;
    }
    Some(4.0 * sxy * mx * my / den)
}

/// Universal image quality index, averaged over 32x32 windows tiled with
/// stride 32 and then over bands. Windows where the Q denominator vanishes
/// are skipped unless the two windows are identical, which scores 1. Images
/// smaller than one window are scored on the single full-image window.
pub fn q_index(test: &MultiBandImage, reference: &MultiBandImage) -> Result<f64> {
    check_shapes(test, reference)?;
    let (w, h) = (test.width(), test.height());
    let (win_w, win_h) = if w < Q_WINDOW || h < Q_WINDOW {
        (w, h)
    } else {
        (Q_WINDOW, Q_WINDOW)
    };

    let mut band_total = 0.0;
    let mut band_count = 0usize;
    for b in 0..test.bands() {
        let tp = test.band(b);
        let rp = reference.band(b);
        let mut total = 0.0;
        let mut count = 0usize;
        let mut r0 = 0;
        while r0 + win_h <= h {
            let mut c0 = 0;
            while c0 + win_w <= w {
                let n = (win_w * win_h) as f64;
                let (mut mx, mut my) = (0.0, 0.0);
                for r in r0..r0 + win_h {
                    for c in c0..c0 + win_w {
                        mx += tp[r * w + c];
                        my += rp[r * w + c];
                    }
                }
                mx /= n;
                my /= n;
                let (mut sx2, mut sy2, mut sxy) = (0.0, 0.0, 0.0);
                for r in r0..r0 + win_h {
                    for c in c0..c0 + win_w {
                        let dx = tp[r * w + c] - mx;
                        let dy = rp[r * w + c] - my;
                        sx2 += dx * dx;
                        sy2 += dy * dy;
                        sxy += dx * dy;
                    }
                }
                sx2 /= n;
                sy2 /= n;
                sxy /= n;
                if let Some(q) = q_window(sx2, sy2, sxy, mx, my) {
                    total += q;
                    count += 1;
                }
                c0 += win_w;
            }
            r0 += win_h;
        }
        if count > 0 {
            band_total += total / count as f64;
            band_count += 1;
        }
    }
    if band_count == 0 {
        return Err(Error::Numerical(
            "every window was skipped by the Q index".into(),
        ));
    }
    Ok(band_total / band_count as f64)
}

/// All four indexes for one pair.
pub fn quality_report(
    test: &MultiBandImage,
    reference: &MultiBandImage,
    ratio: usize,
) -> Result<QualityReport> {
    Ok(QualityReport {
        ergas: ergas(test, reference, ratio)?,
        sam_degrees: sam(test, reference)?,
        q: q_index(test, reference)?,
        psnr_db: psnr(test, reference)?,
        ratio,
    })
}

/// Arithmetic per-field mean of several reports, the averaging convention
/// used for multi-scene tables. All reports must share the same ratio.
pub fn mean_report(reports: &[QualityReport]) -> Result<QualityReport> {
    if reports.is_empty() {
        return Err(Error::InvalidInput("no reports to average".into()));
    }
    let ratio = reports[0].ratio;
    if reports.iter().any(|r| r.ratio != ratio) {
        return Err(Error::InvalidInput(
            "cannot average reports across different ratios".into(),
        ));
    }
    let n = reports.len() as f64;
    Ok(QualityReport {
        ergas: reports.iter().map(|r| r.ergas).sum::<f64>() / n,
        sam_degrees: reports.iter().map(|r| r.sam_degrees).sum::<f64>() / n,
        q: reports.iter().map(|r| r.q).sum::<f64>() / n,
        psnr_db: reports.iter().map(|r| r.psnr_db).sum::<f64>() / n,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seeded(w: usize, h: usize, bands: usize, seed: u64) -> MultiBandImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MultiBandImage::from_fn(w, h, bands, |_, _, _| rng.gen::<f64>())
    }

    #[test]
    fn psnr_caps_identical_images() {
        let img = seeded(8, 8, 3, 1);
        assert_eq!(psnr(&img, &img).unwrap(), 300.0);
    }

    #[test]
    fn psnr_matches_direct_arithmetic() {
        let reference = MultiBandImage::constant(8, 8, 1, 0.5);
        let test = MultiBandImage::constant(8, 8, 1, 0.6);
        let db = psnr(&test, &reference).unwrap();
        assert!((db - 20.0).abs() < 1e-9, "{db}");
    }

    #[test]
    fn halving_the_error_adds_six_db() {
        let reference = MultiBandImage::constant(8, 8, 1, 0.5);
        let big = MultiBandImage::constant(8, 8, 1, 0.7);
        let small = MultiBandImage::constant(8, 8, 1, 0.6);
        let gain = psnr(&small, &reference).unwrap() - psnr(&big, &reference).unwrap();
        assert!((gain - 20.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn sam_is_zero_for_positive_scaling() {
        let reference = seeded(6, 6, 3, 2);
        let test = MultiBandImage::new(
            6,
            6,
            3,
            reference.samples().iter().map(|v| 2.5 * v).collect(),
        )
        .unwrap();
        assert!(sam(&test, &reference).unwrap() < 1e-9);
    }

    #[test]
    fn sam_orthogonal_single_pixel_is_ninety_degrees() {
        let reference = MultiBandImage::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let test = MultiBandImage::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        let angle = sam(&test, &reference).unwrap();
        assert!((angle - 90.0).abs() < 1e-9);
    }

    #[test]
    fn sam_averages_over_pixels() {
        // Pixel 0: ref (1,0) vs test (1,1) is 45 degrees; pixel 1 is
        // collinear, so the mean is 22.5 degrees.
        let reference = MultiBandImage::new(2, 1, 2, vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        let test = MultiBandImage::new(2, 1, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let angle = sam(&test, &reference).unwrap();
        assert!((angle - 22.5).abs() < 1e-9, "{angle}");
    }

    #[test]
    fn sam_skips_short_vectors_and_errors_when_all_skipped() {
        // One zero reference pixel is skipped; the other pixel decides.
        let reference = MultiBandImage::new(2, 1, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let test = MultiBandImage::new(2, 1, 2, vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(sam(&test, &reference).unwrap() < 1e-9);

        let zero = MultiBandImage::zeros(2, 2, 2);
        assert!(sam(&zero, &zero).is_err());
    }

    #[test]
    fn sam_requires_two_bands() {
        let single = seeded(4, 4, 1, 3);
        assert!(sam(&single, &single).is_err());
    }

    #[test]
    fn ergas_matches_direct_arithmetic() {
        // One band, reference mean 0.5, RMSE 0.05, ratio 4:
        // 100 * (1/4) * (0.05 / 0.5) = 2.5.
        let reference = MultiBandImage::constant(4, 4, 1, 0.5);
        let test = MultiBandImage::constant(4, 4, 1, 0.55);
        let e = ergas(&test, &reference, 4).unwrap();
        assert!((e - 2.5).abs() < 1e-9, "{e}");
    }

    #[test]
    fn ergas_zero_for_identical_and_scales_with_ratio() {
        let img = seeded(8, 8, 2, 4);
        assert_eq!(ergas(&img, &img, 4).unwrap(), 0.0);

        let other = seeded(8, 8, 2, 5);
        let e2 = ergas(&other, &img, 2).unwrap();
        let e4 = ergas(&other, &img, 4).unwrap();
        assert!((e2 - 2.0 * e4).abs() < 1e-9);
    }

    #[test]
    fn ergas_rejects_zero_band_mean() {
        let reference = MultiBandImage::zeros(4, 4, 1);
        let test = MultiBandImage::constant(4, 4, 1, 0.1);
        assert!(ergas(&test, &reference, 4).is_err());
    }

    #[test]
    fn q_is_one_for_identical_textured_images() {
        let img = seeded(64, 64, 2, 6);
        let q = q_index(&img, &img).unwrap();
        assert!((q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn q_is_minus_one_for_mirrored_images() {
        // test = 1 - ref keeps the mean at 0.5 when the window mean is 0.5
        // and flips the correlation sign.
        let reference = MultiBandImage::from_fn(32, 32, 1, |_, r, c| {
            0.5 + if (r + c) % 2 == 0 { 0.2 } else { -0.2 }
        });
        let test = MultiBandImage::new(
            32,
            32,
            1,
            reference.samples().iter().map(|v| 1.0 - v).collect(),
        )
        .unwrap();
        let q = q_index(&test, &reference).unwrap();
        assert!((q + 1.0).abs() < 1e-12, "{q}");
    }

    #[test]
    fn q_matches_a_brute_force_window_loop() {
        let test = seeded(64, 64, 1, 7);
        let reference = seeded(64, 64, 1, 8);
        let fast = q_index(&test, &reference).unwrap();

        let mut total = 0.0;
        let mut count = 0;
        for r0 in [0usize, 32] {
            for c0 in [0usize, 32] {
                let n = 1024.0;
                let mut mx = 0.0;
                let mut my = 0.0;
                for r in r0..r0 + 32 {
                    for c in c0..c0 + 32 {
                        mx += test.get(0, r, c);
                        my += reference.get(0, r, c);
                    }
                }
                mx /= n;
                my /= n;
                let (mut sx2, mut sy2, mut sxy) = (0.0, 0.0, 0.0);
                for r in r0..r0 + 32 {
                    for c in c0..c0 + 32 {
                        let dx = test.get(0, r, c) - mx;
                        let dy = reference.get(0, r, c) - my;
                        sx2 += dx * dx;
                        sy2 += dy * dy;
                        sxy += dx * dy;
                    }
                }
                total += 4.0 * (sxy / n) * mx * my / (((sx2 + sy2) / n) * (mx * mx + my * my));
                count += 1;
            }
        }
        assert!((fast - total / count as f64).abs() < 1e-12);
    }

    #[test]
    fn q_uses_one_full_window_for_small_images() {
        let test = seeded(8, 8, 1, 9);
        let reference = seeded(8, 8, 1, 10);
        let q = q_index(&test, &reference).unwrap();
        // Brute force on the single 8x8 window.
        let n = 64.0;
        let mx = test.samples().iter().sum::<f64>() / n;
        let my = reference.samples().iter().sum::<f64>() / n;
        let (mut sx2, mut sy2, mut sxy) = (0.0, 0.0, 0.0);
        for (t, r) in test.samples().iter().zip(reference.samples()) {
            sx2 += (t - mx) * (t - mx);
            sy2 += (r - my) * (r - my);
            sxy += (t - mx) * (r - my);
        }
        let expected = 4.0 * (sxy / n) * mx * my / (((sx2 + sy2) / n) * (mx * mx + my * my));
        assert!((q - expected).abs() < 1e-12);
    }

    #[test]
    fn identical_constant_images_still_score_one() {
        let img = MultiBandImage::constant(8, 8, 2, 0.4);
        assert_eq!(q_index(&img, &img).unwrap(), 1.0);
    }

    #[test]
    fn report_fixed_point_for_identical_inputs() {
        let img = seeded(40, 40, 3, 11);
        for ratio in [1, 2, 4] {
            let report = quality_report(&img, &img, ratio).unwrap();
            assert_eq!(report.ergas, 0.0);
            assert_eq!(report.sam_degrees, 0.0);
            assert!((report.q - 1.0).abs() < 1e-12);
            assert_eq!(report.psnr_db, 300.0);
            assert_eq!(report.ratio, ratio);
        }
    }

    #[test]
    fn report_fields_match_the_individual_indexes() {
        let test = seeded(40, 40, 3, 12);
        let reference = seeded(40, 40, 3, 13);
        let report = quality_report(&test, &reference, 4).unwrap();
        assert_eq!(report.ergas, ergas(&test, &reference, 4).unwrap());
        assert_eq!(report.sam_degrees, sam(&test, &reference).unwrap());
        assert_eq!(report.q, q_index(&test, &reference).unwrap());
        assert_eq!(report.psnr_db, psnr(&test, &reference).unwrap());
    }

    #[test]
    fn scaling_error_up_worsens_psnr_and_ergas() {
        let reference = seeded(16, 16, 2, 14);
        let noise = seeded(16, 16, 2, 15);
        let with_error = |c: f64| {
            MultiBandImage::new(
                16,
                16,
                2,
                reference
                    .samples()
                    .iter()
                    .zip(noise.samples())
                    .map(|(r, n)| r + c * 0.01 * (n - 0.5))
                    .collect(),
            )
            .unwrap()
        };
        let small = with_error(1.0);
        let large = with_error(3.0);
        assert!(psnr(&large, &reference).unwrap() < psnr(&small, &reference).unwrap());
        assert!(ergas(&large, &reference, 4).unwrap() > ergas(&small, &reference, 4).unwrap());
    }

    #[test]
    fn mean_report_averages_each_field() {
        let a = QualityReport {
            ergas: 2.0,
            sam_degrees: 4.0,
            q: 0.8,
            psnr_db: 30.0,
            ratio: 4,
        };
        let b = QualityReport {
            ergas: 4.0,
            sam_degrees: 2.0,
            q: 0.6,
            psnr_db: 40.0,
            ratio: 4,
        };
        let m = mean_report(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(m.ergas, 3.0);
        assert_eq!(m.sam_degrees, 3.0);
        assert!((m.q - 0.7).abs() < 1e-15);
        assert_eq!(m.psnr_db, 35.0);

        let mut c = b;
        c.ratio = 2;
        assert!(mean_report(&[a, c]).is_err());
        assert!(mean_report(&[]).is_err());
    }

    #[test]
    fn metrics_reject_shape_mismatch() {
        let a = seeded(8, 8, 2, 16);
        let b = seeded(8, 9, 2, 17);
        assert!(psnr(&a, &b).is_err());
        assert!(sam(&a, &b).is_err());
        assert!(ergas(&a, &b, 4).is_err());
        assert!(q_index(&a, &b).is_err());
    }
}
