//! The residual gradient network: input-cube assembly, forward/backward
//! passes, training, and prediction of the gradient prior used by the fusion
//! solver.
//!
//! The network consumes a stack of finite-difference planes (the gradient
//! cube) built from the panchromatic image and the upsampled multispectral
//! image, and predicts the residual between those observed gradients and the
//! gradients of the ideal fused image.

mod io;
mod network;
mod train;

pub use io::{load_weights, save_weights, weight_paths};
pub use network::{
    loss_eq2, loss_eq2_batch, network_backward, network_forward, BlockGradients, ConvBlock,
    NetworkWeights, WeightGradients,
};
pub use train::{train, TrainConfig, TrainRun};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::operators::{apply_h, gradient_forward, upsample_interp, DegradationSpec, GradientDirection};
use crate::raster::MultiBandImage;

/// What a cube's channels represent in the training pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CubeRole {
    /// Observed gradients fed to the network: 2(s+1) channels.
    Input,
    /// Ideal gradients the network learns toward: 2(s+1) channels.
    Target,
    /// Network output, same shape as the input cube.
    Residual,
    /// Selected fused-image gradients: 2s channels.
    Prior,
}

/// Stack of gradient planes, channel-sequential like the raster layout.
///
/// Input and target cubes hold 2(s+1) channels ordered
/// `[pan_h, pan_v, band1_h, band1_v, ...]`; a prior drops the two pan
/// channels. The channel count itself is validated where the band count is
/// known (cube construction sites), not by this container.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCube {
    width: usize,
    height: usize,
    channels: usize,
    role: CubeRole,
    samples: Vec<f64>,
}

impl GradientCube {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        role: CubeRole,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidInput("cube dimensions must be >= 1".into()));
        }
        if samples.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for a {width}x{height}x{channels} cube",
                samples.len()
            )));
        }
        if !samples.iter().all(|s| s.is_finite()) {
            return Err(Error::InvalidInput("cube samples must be finite".into()));
        }
        Ok(Self { width, height, channels, role, samples })
    }

    pub fn zeros(width: usize, height: usize, channels: usize, role: CubeRole) -> Self {
        Self {
            width,
            height,
            channels,
            role,
            samples: vec![0.0; width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn role(&self) -> CubeRole {
        self.role
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        let plane = self.plane_len();
        &self.samples[ch * plane..(ch + 1) * plane]
    }

    pub(crate) fn channel_mut(&mut self, ch: usize) -> &mut [f64] {
        let plane = self.plane_len();
        &mut self.samples[ch * plane..(ch + 1) * plane]
    }

    pub fn get(&self, ch: usize, row: usize, col: usize) -> f64 {
        self.samples[ch * self.plane_len() + row * self.width + col]
    }

    /// Same width, height, and channel count (role may differ).
    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels == other.channels
    }

    /// Square crop of every channel with the given top-left corner.
    pub fn crop(&self, row0: usize, col0: usize, size: usize) -> Result<Self> {
        if row0 + size > self.height || col0 + size > self.width {
            return Err(Error::InvalidInput(format!(
                "crop {size} at ({row0},{col0}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut samples = Vec::with_capacity(size * size * self.channels);
        for ch in 0..self.channels {
            let plane = self.channel(ch);
            for r in row0..row0 + size {
                samples.extend_from_slice(&plane[r * self.width + col0..r * self.width + col0 + size]);
            }
        }
        Self::new(size, size, self.channels, self.role, samples)
    }
}

/// Interleaves a per-image gradient pair into cube channels starting at
/// `base`: horizontal plane then vertical plane per band.
fn fill_gradient_channels(cube: &mut GradientCube, base: usize, image: &MultiBandImage) {
    let gh = gradient_forward(image, GradientDirection::Horizontal);
    let gv = gradient_forward(image, GradientDirection::Vertical);
    for b in 0..image.bands() {
        cube.channel_mut(base + 2 * b).copy_from_slice(gh.band(b));
        cube.channel_mut(base + 2 * b + 1).copy_from_slice(gv.band(b));
    }
}

/// Stacks the horizontal and vertical gradients of the panchromatic image
/// and of every band of the upsampled multispectral image into one cube of
/// 2(s+1) channels: `[pan_h, pan_v, band1_h, band1_v, ...]`.
pub fn build_input_cube(
    pan: &MultiBandImage,
    ms_upsampled: &MultiBandImage,
) -> Result<GradientCube> {
    if pan.bands() != 1 {
        return Err(Error::InvalidInput(format!(
            "pan image must have exactly 1 band, got {}",
            pan.bands()
        )));
    }
    if pan.width() != ms_upsampled.width() || pan.height() != ms_upsampled.height() {
        return Err(Error::ShapeMismatch(format!(
            "pan {}x{} vs upsampled ms {}x{}",
            pan.width(),
            pan.height(),
            ms_upsampled.width(),
            ms_upsampled.height()
        )));
    }
    let channels = 2 * (ms_upsampled.bands() + 1);
    let mut cube = GradientCube::zeros(pan.width(), pan.height(), channels, CubeRole::Input);
    fill_gradient_channels(&mut cube, 0, pan);
    fill_gradient_channels(&mut cube, 2, ms_upsampled);
    Ok(cube)
}

/// Runs the network on the observed gradients and returns the predicted
/// fused-image gradient prior, split by direction.
///
/// The full output cube is input plus residual (residual learning); the two
/// pan channels are dropped and the multispectral channels are de-interleaved
/// into a horizontal and a vertical image of s bands each.
pub fn predict_prior(
    pan: &MultiBandImage,
    ms_upsampled: &MultiBandImage,
    weights: &NetworkWeights,
) -> Result<(MultiBandImage, MultiBandImage)> {
    let cube = build_input_cube(pan, ms_upsampled)?;
    let residual = network_forward(&cube, weights)?;
    let s = ms_upsampled.bands();
    let plane = cube.plane_len();
    let mut g1 = Vec::with_capacity(s * plane);
    let mut g2 = Vec::with_capacity(s * plane);
    for b in 0..s {
        let (h_ch, v_ch) = (2 + 2 * b, 3 + 2 * b);
        g1.extend(
            cube.channel(h_ch)
                .iter()
                .zip(residual.channel(h_ch))
                .map(|(i, r)| i + r),
        );
        g2.extend(
            cube.channel(v_ch)
                .iter()
                .zip(residual.channel(v_ch))
                .map(|(i, r)| i + r),
        );
    }
    Ok((
        MultiBandImage::new(cube.width(), cube.height(), s, g1)?,
        MultiBandImage::new(cube.width(), cube.height(), s, g2)?,
    ))
}

/// Builds training pairs by the reduced-scale protocol: degrade both inputs
/// one resolution step, build the input cube from the degraded data, and use
/// the original multispectral gradients as the target. Pan target channels
/// copy the input so their residual is zero.
///
/// From each full-size cube pair, `max(1, (w/p)*(h/p))` seeded random crops
/// of `config.patch_size` are taken.
pub fn make_training_pairs(
    pan_hr: &MultiBandImage,
    ms: &MultiBandImage,
    spec: &DegradationSpec,
    config: &TrainConfig,
) -> Result<Vec<(GradientCube, GradientCube)>> {
    let pan_low = apply_h(pan_hr, spec)?;
    let ms_low = apply_h(ms, spec)?;
    let ms_low_up = upsample_interp(&ms_low, spec.ratio);
    if pan_low.width() != ms.width() || pan_low.height() != ms.height() {
        return Err(Error::ShapeMismatch(format!(
            "degraded pan is {}x{} but ms is {}x{}; pan must be ratio x ms size",
            pan_low.width(),
            pan_low.height(),
            ms.width(),
            ms.height()
        )));
    }

    let input = build_input_cube(&pan_low, &ms_low_up)?;
    let mut target = GradientCube::zeros(
        input.width(),
        input.height(),
        input.channels(),
        CubeRole::Target,
    );
    for ch in 0..2 {
        let plane = input.channel(ch).to_vec();
        target.channel_mut(ch).copy_from_slice(&plane);
    }
    fill_gradient_channels(&mut target, 2, ms);

    let p = config.patch_size;
    let (w, h) = (input.width(), input.height());
    if w < p || h < p {
        return Err(Error::InvalidInput(format!(
            "cube {w}x{h} is smaller than patch size {p}"
        )));
    }
    let count = ((w / p) * (h / p)).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let r0 = rng.gen_range(0..=h - p);
        let c0 = rng.gen_range(0..=w - p);
        pairs.push((input.crop(r0, c0, p)?, target.crop(r0, c0, p)?));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seeded_image(w: usize, h: usize, bands: usize, seed: u64) -> MultiBandImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MultiBandImage::from_fn(w, h, bands, |_, _, _| rng.gen::<f64>())
    }

    #[test]
    fn input_cube_channel_counts() {
        let pan = seeded_image(8, 8, 1, 1);
        let ms4 = seeded_image(8, 8, 4, 2);
        assert_eq!(build_input_cube(&pan, &ms4).unwrap().channels(), 10);
        let ms8 = seeded_image(8, 8, 8, 3);
        assert_eq!(build_input_cube(&pan, &ms8).unwrap().channels(), 18);
    }

    #[test]
    fn input_cube_of_constants_is_zero() {
        let pan = MultiBandImage::constant(6, 6, 1, 0.8);
        let ms = MultiBandImage::constant(6, 6, 1, 0.3);
        let cube = build_input_cube(&pan, &ms).unwrap();
        assert_eq!(cube.channels(), 4);
        assert!(cube.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn input_cube_channel_order() {
        // Pan varies along rows only; ms band 0 along columns only.
        let pan = MultiBandImage::from_fn(4, 4, 1, |_, _, c| c as f64);
        let ms = MultiBandImage::from_fn(4, 4, 2, |b, r, _| (b + 1) as f64 * r as f64);
        let cube = build_input_cube(&pan, &ms).unwrap();
        // pan_h is 1 away from the right edge, pan_v identically 0.
        assert_eq!(cube.get(0, 1, 1), 1.0);
        assert_eq!(cube.get(0, 1, 3), 0.0);
        assert!(cube.channel(1).iter().all(|&s| s == 0.0));
        // band channels follow, horizontal then vertical per band.
        assert!(cube.channel(2).iter().all(|&s| s == 0.0));
        assert_eq!(cube.get(3, 1, 1), 1.0);
        assert!(cube.channel(4).iter().all(|&s| s == 0.0));
        assert_eq!(cube.get(5, 1, 1), 2.0);
    }

    #[test]
    fn input_cube_rejects_bad_shapes() {
        let pan2 = seeded_image(4, 4, 2, 4);
        let ms = seeded_image(4, 4, 2, 5);
        assert!(build_input_cube(&pan2, &ms).is_err());
        let pan = seeded_image(6, 4, 1, 6);
        assert!(build_input_cube(&pan, &ms).is_err());
    }

    #[test]
    fn prior_with_zero_weights_passes_input_gradients_through() {
        let pan = seeded_image(8, 8, 1, 7);
        let ms = seeded_image(8, 8, 4, 8);
        let net = NetworkWeights::zeros(3, 4, 10).unwrap();
        let (g1, g2) = predict_prior(&pan, &ms, &net).unwrap();
        assert_eq!(g1.bands(), 4);
        assert_eq!(g2.bands(), 4);
        let eh = gradient_forward(&ms, GradientDirection::Horizontal);
        let ev = gradient_forward(&ms, GradientDirection::Vertical);
        assert_eq!(g1.samples(), eh.samples());
        assert_eq!(g2.samples(), ev.samples());
    }

    #[test]
    fn prior_of_constants_is_zero() {
        let pan = MultiBandImage::constant(6, 6, 1, 0.5);
        let ms = MultiBandImage::constant(6, 6, 3, 0.2);
        let net = NetworkWeights::zeros(2, 4, 8).unwrap();
        let (g1, g2) = predict_prior(&pan, &ms, &net).unwrap();
        assert!(g1.samples().iter().all(|&s| s == 0.0));
        assert!(g2.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn prior_rejects_mismatched_network() {
        let pan = seeded_image(6, 6, 1, 9);
        let ms = seeded_image(6, 6, 4, 10);
        let net = NetworkWeights::zeros(2, 4, 8).unwrap();
        assert!(predict_prior(&pan, &ms, &net).is_err());
    }

    #[test]
    fn training_pairs_have_expected_shapes() {
        let pan = seeded_image(160, 160, 1, 11);
        let ms = seeded_image(40, 40, 4, 12);
        let spec = DegradationSpec::mtf(4, 0.3).unwrap();
        let config = TrainConfig { patch_size: 40, seed: 5, ..TrainConfig::default() };
        let pairs = make_training_pairs(&pan, &ms, &spec, &config).unwrap();
        assert_eq!(pairs.len(), 1);
        let (input, target) = &pairs[0];
        assert_eq!((input.width(), input.height(), input.channels()), (40, 40, 10));
        assert!(input.same_shape(target));
        assert_eq!(input.role(), CubeRole::Input);
        assert_eq!(target.role(), CubeRole::Target);
    }

    #[test]
    fn training_pair_pan_channels_are_pass_through() {
        let pan = seeded_image(64, 64, 1, 13);
        let ms = seeded_image(16, 16, 2, 14);
        let spec = DegradationSpec::mtf(4, 0.3).unwrap();
        let config = TrainConfig { patch_size: 8, seed: 3, ..TrainConfig::default() };
        let pairs = make_training_pairs(&pan, &ms, &spec, &config).unwrap();
        assert_eq!(pairs.len(), 4);
        for (input, target) in &pairs {
            assert_eq!(input.channel(0), target.channel(0));
            assert_eq!(input.channel(1), target.channel(1));
        }
    }

    #[test]
    fn training_pair_targets_vanish_for_constant_ms() {
        let pan = seeded_image(32, 32, 1, 15);
        let ms = MultiBandImage::constant(8, 8, 3, 0.4);
        let spec = DegradationSpec::mtf(4, 0.3).unwrap();
        let config = TrainConfig { patch_size: 8, seed: 1, ..TrainConfig::default() };
        let pairs = make_training_pairs(&pan, &ms, &spec, &config).unwrap();
        for (_, target) in &pairs {
            for ch in 2..target.channels() {
                assert!(target.channel(ch).iter().all(|&s| s == 0.0));
            }
        }
    }

    #[test]
    fn training_pairs_reject_small_scenes() {
        let pan = seeded_image(16, 16, 1, 16);
        let ms = seeded_image(4, 4, 2, 17);
        let spec = DegradationSpec::mtf(4, 0.3).unwrap();
        let config = TrainConfig { patch_size: 8, seed: 1, ..TrainConfig::default() };
        assert!(make_training_pairs(&pan, &ms, &spec, &config).is_err());
    }

    #[test]
    fn crop_extracts_the_right_window() {
        let cube = GradientCube::new(
            4,
            3,
            1,
            CubeRole::Input,
            (0..12).map(|v| v as f64).collect(),
        )
        .unwrap();
        let c = cube.crop(1, 2, 2).unwrap();
        assert_eq!(c.samples(), &[6.0, 7.0, 10.0, 11.0]);
        assert!(cube.crop(2, 0, 2).is_err());
    }
}
