//! Linear operators of the fusion model: forward differences, Laplacian,
//! MTF-matched blur plus decimation, interpolation, and the exact adjoint of
//! each.
//!
//! Every operator treats bands independently and uses replicate boundary
//! handling. Adjoints are the exact transposes of the forward maps (scatter
//! forms of the same stencils), so `<Ax, y> == <x, A'y>` up to roundoff.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::raster::MultiBandImage;

/// Axis of a first-order finite difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientDirection {
    /// Differences along a row (x axis).
    Horizontal,
    /// Differences along a column (y axis).
    Vertical,
}

/// Separable symmetric blur kernel with unit sum.
///
/// `taps` holds the full `size x size` grid (the outer product of the 1-D
/// profile); application uses the 1-D profile along each axis, which is the
/// same linear map. A kernel too narrow for the pixel grid (sigma < 1/6)
/// collapses to the single tap `[1.0]` and records sigma as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    taps: Vec<f64>,
    taps_1d: Vec<f64>,
    size: usize,
    sigma: f64,
    gnyq: f64,
}

impl BlurKernel {
    /// Full 2-D tap grid, row-major, `size * size` entries.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// The 1-D profile whose outer product is `taps`.
    pub fn taps_1d(&self) -> &[f64] {
        &self.taps_1d
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn gnyq(&self) -> f64 {
        self.gnyq
    }

    fn radius(&self) -> usize {
        self.size / 2
    }
}

/// Blur-and-decimate model for one resolution step.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationSpec {
    pub ratio: usize,
    pub kernel: BlurKernel,
    pub noise_sigma: f64,
}

impl DegradationSpec {
    /// MTF-matched spec with no noise.
    pub fn mtf(ratio: usize, gnyq: f64) -> Result<Self> {
        Ok(Self {
            ratio,
            kernel: mtf_gaussian_kernel(ratio, gnyq)?,
            noise_sigma: 0.0,
        })
    }
}

/// Gaussian blur whose frequency response equals `gnyq` at the low-resolution
/// Nyquist frequency: sigma = (ratio/pi) * sqrt(2 ln(1/gnyq)), truncated at
/// 3 sigma and renormalized to unit sum.
pub fn mtf_gaussian_kernel(ratio: usize, gnyq: f64) -> Result<BlurKernel> {
    if ratio < 1 {
        return Err(Error::InvalidInput("ratio must be >= 1".into()));
    }
    if !(gnyq > 0.0 && gnyq < 1.0) {
        return Err(Error::InvalidInput(format!(
            "gnyq must lie in (0, 1), got {gnyq}"
        )));
    }
    let sigma = (ratio as f64 / std::f64::consts::PI) * (2.0 * (1.0 / gnyq).ln()).sqrt();
    if sigma < 1.0 / 6.0 {
        // The 3-sigma support covers no off-center pixel.
        return Ok(BlurKernel {
            taps: vec![1.0],
            taps_1d: vec![1.0],
            size: 1,
            sigma: 0.0,
            gnyq,
        });
    }
    let radius = (3.0 * sigma).ceil() as usize;
    let size = 2 * radius + 1;
    let mut taps_1d: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps_1d.iter().sum();
    for t in taps_1d.iter_mut() {
        *t /= sum;
    }
    let taps = (0..size * size)
        .map(|i| taps_1d[i / size] * taps_1d[i % size])
        .collect();
    Ok(BlurKernel { taps, taps_1d, size, sigma, gnyq })
}

/// Forward difference `g[i] = x[i+1] - x[i]` along the chosen axis, with the
/// last difference of each line set to zero (replicate boundary). Same shape
/// as the input; a constant image maps to exactly zero.
pub fn gradient_forward(image: &MultiBandImage, direction: GradientDirection) -> MultiBandImage {
    let (w, h) = (image.width(), image.height());
    let mut out = MultiBandImage::zeros(w, h, image.bands());
    for b in 0..image.bands() {
        let src = image.band(b);
        let dst = out.band_mut(b);
        match direction {
            GradientDirection::Horizontal => {
                for r in 0..h {
                    for c in 0..w.saturating_sub(1) {
                        dst[r * w + c] = src[r * w + c + 1] - src[r * w + c];
                    }
                }
            }
            GradientDirection::Vertical => {
                for r in 0..h.saturating_sub(1) {
                    for c in 0..w {
                        dst[r * w + c] = src[(r + 1) * w + c] - src[r * w + c];
                    }
                }
            }
        }
    }
    out
}

/// Exact transpose of [`gradient_forward`] (a negative divergence with the
/// matching boundary rows).
pub fn gradient_adjoint(image: &MultiBandImage, direction: GradientDirection) -> MultiBandImage {
    let (w, h) = (image.width(), image.height());
    let mut out = MultiBandImage::zeros(w, h, image.bands());
    for b in 0..image.bands() {
        let src = image.band(b);
        let dst = out.band_mut(b);
        match direction {
            GradientDirection::Horizontal => {
                if w == 1 {
                    continue;
                }
                for r in 0..h {
                    dst[r * w] = -src[r * w];
                    for c in 1..w - 1 {
                        dst[r * w + c] = src[r * w + c - 1] - src[r * w + c];
                    }
                    dst[r * w + w - 1] = src[r * w + w - 2];
                }
            }
            GradientDirection::Vertical => {
                if h == 1 {
                    continue;
                }
                for c in 0..w {
                    dst[c] = -src[c];
                    for r in 1..h - 1 {
                        dst[r * w + c] = src[(r - 1) * w + c] - src[r * w + c];
                    }
                    dst[(h - 1) * w + c] = src[(h - 2) * w + c];
                }
            }
        }
    }
    out
}

const NEIGHBOR_OFFSETS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

#[inline]
fn clamp_idx(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

/// Five-point Laplacian `4x - N - S - E - W` with replicate padding.
pub fn laplacian_apply(image: &MultiBandImage) -> MultiBandImage {
    let (w, h) = (image.width(), image.height());
    let mut out = MultiBandImage::zeros(w, h, image.bands());
    for b in 0..image.bands() {
        let src = image.band(b);
        let dst = out.band_mut(b);
        for r in 0..h {
            for c in 0..w {
                let mut acc = 4.0 * src[r * w + c];
                for (dr, dc) in NEIGHBOR_OFFSETS {
                    let rr = clamp_idx(r as isize + dr, h);
                    let cc = clamp_idx(c as isize + dc, w);
                    acc -= src[rr * w + cc];
                }
                dst[r * w + c] = acc;
            }
        }
    }
    out
}

/// Exact transpose of [`laplacian_apply`]. With replicate padding the
/// Laplacian matrix is not symmetric, so the scatter form is spelled out.
pub fn laplacian_adjoint(image: &MultiBandImage) -> MultiBandImage {
    let (w, h) = (image.width(), image.height());
    let mut out = MultiBandImage::zeros(w, h, image.bands());
    for b in 0..image.bands() {
        let src = image.band(b);
        let dst = out.band_mut(b);
        for r in 0..h {
            for c in 0..w {
                dst[r * w + c] += 4.0 * src[r * w + c];
            }
        }
        for r in 0..h {
            for c in 0..w {
                let v = src[r * w + c];
                for (dr, dc) in NEIGHBOR_OFFSETS {
                    let rr = clamp_idx(r as isize + dr, h);
                    let cc = clamp_idx(c as isize + dc, w);
                    dst[rr * w + cc] -= v;
                }
            }
        }
    }
    out
}

fn conv_rows(src: &[f64], w: usize, h: usize, taps: &[f64], radius: usize, dst: &mut [f64]) {
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for c in 0..w {
            let mut acc = 0.0;
            for (v, &k) in taps.iter().enumerate() {
                let idx = clamp_idx(c as isize + v as isize - radius as isize, w);
                acc += k * row[idx];
            }
            dst[r * w + c] = acc;
        }
    }
}

fn conv_rows_adjoint(src: &[f64], w: usize, h: usize, taps: &[f64], radius: usize, dst: &mut [f64]) {
    dst.fill(0.0);
    for r in 0..h {
        for c in 0..w {
            let v = src[r * w + c];
            for (t, &k) in taps.iter().enumerate() {
                let idx = clamp_idx(c as isize + t as isize - radius as isize, w);
                dst[r * w + idx] += k * v;
            }
        }
    }
}

fn conv_cols(src: &[f64], w: usize, h: usize, taps: &[f64], radius: usize, dst: &mut [f64]) {
    for c in 0..w {
        for r in 0..h {
            let mut acc = 0.0;
            for (v, &k) in taps.iter().enumerate() {
                let idx = clamp_idx(r as isize + v as isize - radius as isize, h);
                acc += k * src[idx * w + c];
            }
            dst[r * w + c] = acc;
        }
    }
}

fn conv_cols_adjoint(src: &[f64], w: usize, h: usize, taps: &[f64], radius: usize, dst: &mut [f64]) {
    dst.fill(0.0);
    for r in 0..h {
        for c in 0..w {
            let v = src[r * w + c];
            for (t, &k) in taps.iter().enumerate() {
                let idx = clamp_idx(r as isize + t as isize - radius as isize, h);
                dst[idx * w + c] += k * v;
            }
        }
    }
}

/// Separable replicate-pad blur of one band: columns pass then rows pass.
fn blur_band(src: &[f64], w: usize, h: usize, kernel: &BlurKernel) -> Vec<f64> {
    if kernel.size == 1 {
        return src.to_vec();
    }
    let mut mid = vec![0.0; w * h];
    let mut out = vec![0.0; w * h];
    conv_cols(src, w, h, &kernel.taps_1d, kernel.radius(), &mut mid);
    conv_rows(&mid, w, h, &kernel.taps_1d, kernel.radius(), &mut out);
    out
}

/// Transpose of [`blur_band`]: rows scatter then columns scatter.
fn blur_band_adjoint(src: &[f64], w: usize, h: usize, kernel: &BlurKernel) -> Vec<f64> {
    if kernel.size == 1 {
        return src.to_vec();
    }
    let mut mid = vec![0.0; w * h];
    let mut out = vec![0.0; w * h];
    conv_rows_adjoint(src, w, h, &kernel.taps_1d, kernel.radius(), &mut mid);
    conv_cols_adjoint(&mid, w, h, &kernel.taps_1d, kernel.radius(), &mut out);
    out
}

fn check_divisible(image: &MultiBandImage, ratio: usize) -> Result<()> {
    if ratio == 0 {
        return Err(Error::InvalidInput("ratio must be >= 1".into()));
    }
    if image.width() % ratio != 0 || image.height() % ratio != 0 {
        return Err(Error::InvalidInput(format!(
            "dimensions {}x{} not divisible by ratio {ratio}",
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

/// Blur with the spec kernel, then keep every `ratio`-th sample starting at
/// offset `ratio / 2` along each axis. Output dimensions are the input's
/// divided by `ratio`. Noise is not applied here; see [`add_gaussian_noise`].
pub fn apply_h(image: &MultiBandImage, spec: &DegradationSpec) -> Result<MultiBandImage> {
    check_divisible(image, spec.ratio)?;
    let (w, h) = (image.width(), image.height());
    let (lw, lh) = (w / spec.ratio, h / spec.ratio);
    let offset = spec.ratio / 2;
    let mut out = MultiBandImage::zeros(lw, lh, image.bands());
    for b in 0..image.bands() {
        let blurred = blur_band(image.band(b), w, h, &spec.kernel);
        let dst = out.band_mut(b);
        for r in 0..lh {
            for c in 0..lw {
                dst[r * lw + c] = blurred[(offset + r * spec.ratio) * w + offset + c * spec.ratio];
            }
        }
    }
    Ok(out)
}

/// Exact transpose of [`apply_h`]: zero-insertion upsample at the same
/// decimation phase, then the blur transpose.
pub fn apply_h_adjoint(
    image: &MultiBandImage,
    spec: &DegradationSpec,
    hr_width: usize,
    hr_height: usize,
) -> Result<MultiBandImage> {
    if hr_width != image.width() * spec.ratio || hr_height != image.height() * spec.ratio {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} at ratio {} cannot map to {hr_width}x{hr_height}",
            image.width(),
            image.height(),
            spec.ratio
        )));
    }
    let (lw, lh) = (image.width(), image.height());
    let offset = spec.ratio / 2;
    let mut out = MultiBandImage::zeros(hr_width, hr_height, image.bands());
    for b in 0..image.bands() {
        let src = image.band(b);
        let mut up = vec![0.0; hr_width * hr_height];
        for r in 0..lh {
            for c in 0..lw {
                up[(offset + r * spec.ratio) * hr_width + offset + c * spec.ratio] =
                    src[r * lw + c];
            }
        }
        let full = blur_band_adjoint(&up, hr_width, hr_height, &spec.kernel);
        out.band_mut(b).copy_from_slice(&full);
    }
    Ok(out)
}

/// Adds zero-mean Gaussian noise with the given standard deviation,
/// deterministically for a fixed seed. A sigma of zero returns the input.
pub fn add_gaussian_noise(image: &MultiBandImage, sigma: f64, seed: u64) -> MultiBandImage {
    if sigma == 0.0 {
        return image.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma must be finite and non-negative");
    let mut out = image.clone();
    for s in out.samples_mut() {
        *s += normal.sample(&mut rng);
    }
    out
}

/// Keys cubic convolution kernel with a = -0.5 (Catmull-Rom).
fn cubic_weight(x: f64) -> f64 {
    let a = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        a * (((x - 5.0) * x + 8.0) * x - 4.0)
    } else {
        0.0
    }
}

fn upsample_line(n_in: usize, n_out: usize, ratio: usize, fetch: impl Fn(usize) -> f64, dst: &mut dyn FnMut(usize, f64)) {
    // Source sample i sits at output index i * ratio + ratio / 2, the same
    // grid apply_h decimates on, so decimate-then-upsample stays registered
    // and reproduces the retained samples exactly.
    let offset = (ratio / 2) as f64;
    for o in 0..n_out {
        let pos = (o as f64 - offset) / ratio as f64;
        let base = pos.floor();
        let t = pos - base;
        let mut acc = 0.0;
        for tap in -1..=2 {
            let wgt = cubic_weight(t - tap as f64);
            let idx = clamp_idx(base as isize + tap, n_in);
            acc += wgt * fetch(idx);
        }
        dst(o, acc);
    }
}

/// Per-band bicubic (Catmull-Rom) interpolation to `ratio`-times dimensions
/// with replicate boundary. Ratio 1 is the exact identity. Output samples
/// land on the decimation grid of [`apply_h`], so upsampling a decimated
/// image reproduces the retained samples exactly.
pub fn upsample_interp(image: &MultiBandImage, ratio: usize) -> MultiBandImage {
    assert!(ratio >= 1, "ratio must be >= 1");
    if ratio == 1 {
        return image.clone();
    }
    let (w, h) = (image.width(), image.height());
    let (hw, hh) = (w * ratio, h * ratio);
    let mut out = MultiBandImage::zeros(hw, hh, image.bands());
    for b in 0..image.bands() {
        let src = image.band(b);
        // Rows pass: w -> hw at the original height.
        let mut mid = vec![0.0; hw * h];
        for r in 0..h {
            let row = &src[r * w..(r + 1) * w];
            let mid_row_start = r * hw;
            upsample_line(w, hw, ratio, |i| row[i], &mut |o, v| {
                mid[mid_row_start + o] = v;
            });
        }
        // Columns pass: h -> hh at the upsampled width.
        let dst = out.band_mut(b);
        for c in 0..hw {
            let col: Vec<f64> = (0..h).map(|r| mid[r * hw + c]).collect();
            upsample_line(h, hh, ratio, |i| col[i], &mut |o, v| {
                dst[o * hw + c] = v;
            });
        }
    }
    out
}
