//! The residual convolutional network: weight container, forward pass, the
//! training loss, and exact reverse-mode gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::gradnet::{CubeRole, GradientCube};

/// One convolution block: 3x3 kernels with replicate padding, optional ReLU.
///
/// `kernel` is laid out `[out][in][ky][kx]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub(crate) in_channels: usize,
    pub(crate) out_channels: usize,
    pub(crate) kernel: Vec<f64>,
    pub(crate) bias: Vec<f64>,
    pub(crate) relu: bool,
}

impl ConvBlock {
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn relu(&self) -> bool {
        self.relu
    }

    fn zeros(in_channels: usize, out_channels: usize, relu: bool) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: vec![0.0; out_channels * in_channels * 9],
            bias: vec![0.0; out_channels],
            relu,
        }
    }
}

/// Ordered convolution blocks realizing the residual mapping.
///
/// The first block maps `input_channels -> width`, interior blocks map
/// `width -> width`, and the last block maps back to `input_channels` with
/// no activation; every other block applies ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub(crate) blocks: Vec<ConvBlock>,
    pub(crate) depth: usize,
    pub(crate) width: usize,
    pub(crate) input_channels: usize,
    pub(crate) seed: u64,
}

fn check_architecture(depth: usize, width: usize, input_channels: usize) -> Result<()> {
    if depth < 2 {
        return Err(Error::InvalidInput(format!("depth must be >= 2, got {depth}")));
    }
    if width < 1 || input_channels < 1 {
        return Err(Error::InvalidInput(
            "width and input channel count must be >= 1".into(),
        ));
    }
    Ok(())
}

fn block_shapes(depth: usize, width: usize, input_channels: usize) -> Vec<(usize, usize, bool)> {
    (0..depth)
        .map(|l| {
            let cin = if l == 0 { input_channels } else { width };
            let last = l == depth - 1;
            let cout = if last { input_channels } else { width };
            (cin, cout, !last)
        })
        .collect()
}

impl NetworkWeights {
    /// All-zero kernels and biases: the exact zero map.
    pub fn zeros(depth: usize, width: usize, input_channels: usize) -> Result<Self> {
        check_architecture(depth, width, input_channels)?;
        let blocks = block_shapes(depth, width, input_channels)
            .into_iter()
            .map(|(cin, cout, relu)| ConvBlock::zeros(cin, cout, relu))
            .collect();
        Ok(Self { blocks, depth, width, input_channels, seed: 0 })
    }

    /// He fan-in initialization (kernel std `sqrt(2 / (in * 9))`), zero
    /// biases, deterministic for a fixed seed. Values are generated at f32
    /// precision so a freshly initialized net survives its file format
    /// bit-exactly.
    pub fn seeded(depth: usize, width: usize, input_channels: usize, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(depth, width, input_channels)?;
        net.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for block in net.blocks.iter_mut() {
            let std = (2.0 / (block.in_channels as f64 * 9.0)).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            for k in block.kernel.iter_mut() {
                *k = normal.sample(&mut rng) as f32 as f64;
            }
        }
        Ok(net)
    }

    pub(crate) fn from_parts(blocks: Vec<ConvBlock>, seed: u64) -> Result<Self> {
        if blocks.len() < 2 {
            return Err(Error::InvalidInput("a network needs at least 2 blocks".into()));
        }
        let depth = blocks.len();
        let input_channels = blocks[0].in_channels;
        let width = blocks[0].out_channels;
        let expect = block_shapes(depth, width, input_channels);
        for (i, (block, (cin, cout, relu))) in blocks.iter().zip(expect).enumerate() {
            if block.in_channels != cin || block.out_channels != cout || block.relu != relu {
                return Err(Error::InvalidInput(format!(
                    "block {i} has shape {}->{} relu={}, expected {cin}->{cout} relu={relu}",
                    block.in_channels, block.out_channels, block.relu
                )));
            }
            if block.kernel.len() != block.out_channels * block.in_channels * 9
                || block.bias.len() != block.out_channels
            {
                return Err(Error::InvalidInput(format!("block {i} has wrong tensor sizes")));
            }
        }
        check_architecture(depth, width, input_channels)?;
        Ok(Self { blocks, depth, width, input_channels, seed })
    }

    pub fn blocks(&self) -> &[ConvBlock] {
        &self.blocks
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    /// Seed the weights were initialized from (recorded for reproducibility).
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Total number of scalar parameters (kernels then bias, block order).
    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.kernel.len() + b.bias.len()).sum()
    }

    /// Flat parameter read: per block, kernel entries then bias entries.
    pub fn param(&self, mut index: usize) -> f64 {
        for block in &self.blocks {
            if index < block.kernel.len() {
                return block.kernel[index];
            }
            index -= block.kernel.len();
            if index < block.bias.len() {
                return block.bias[index];
            }
            index -= block.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Flat parameter write; same ordering as [`NetworkWeights::param`].
    pub fn param_set(&mut self, mut index: usize, value: f64) {
        for block in self.blocks.iter_mut() {
            if index < block.kernel.len() {
                block.kernel[index] = value;
                return;
            }
            index -= block.kernel.len();
            if index < block.bias.len() {
                block.bias[index] = value;
                return;
            }
            index -= block.bias.len();
        }
        panic!("parameter index out of range");
    }
}

/// Gradient of the loss with respect to every parameter, mirroring the block
/// layout of [`NetworkWeights`], plus the loss value it was taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGradients {
    pub blocks: Vec<BlockGradients>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGradients {
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl WeightGradients {
    /// Flat read with the same ordering as [`NetworkWeights::param`].
    pub fn param(&self, mut index: usize) -> f64 {
        for block in &self.blocks {
            if index < block.kernel.len() {
                return block.kernel[index];
            }
            index -= block.kernel.len();
            if index < block.bias.len() {
                return block.bias[index];
            }
            index -= block.bias.len();
        }
        panic!("parameter index out of range");
    }
}

#[inline]
fn clamp_idx(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

/// One 3x3 replicate-padded convolution layer, channel gather form.
fn conv_forward(
    input: &[f64],
    w: usize,
    h: usize,
    block: &ConvBlock,
    output: &mut [f64],
) {
    let plane = w * h;
    for o in 0..block.out_channels {
        let out_plane = &mut output[o * plane..(o + 1) * plane];
        out_plane.fill(block.bias[o]);
        for i in 0..block.in_channels {
            let in_plane = &input[i * plane..(i + 1) * plane];
            let taps = &block.kernel[(o * block.in_channels + i) * 9..][..9];
            for r in 0..h {
                for c in 0..w {
                    let mut acc = 0.0;
                    for ky in 0..3 {
                        let rr = clamp_idx(r as isize + ky as isize - 1, h);
                        for kx in 0..3 {
                            let cc = clamp_idx(c as isize + kx as isize - 1, w);
                            acc += taps[ky * 3 + kx] * in_plane[rr * w + cc];
                        }
                    }
                    out_plane[r * w + c] += acc;
                }
            }
        }
    }
}

/// Runs the full stack, keeping pre-activations and activations per layer.
/// `activations[0]` is the input; `activations[l + 1]` feeds block `l + 1`.
fn forward_trace(
    cube: &GradientCube,
    weights: &NetworkWeights,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (w, h) = (cube.width(), cube.height());
    let plane = w * h;
    let mut pre = Vec::with_capacity(weights.blocks.len());
    let mut activations = Vec::with_capacity(weights.blocks.len() + 1);
    activations.push(cube.samples().to_vec());
    for block in &weights.blocks {
        let mut z = vec![0.0; block.out_channels * plane];
        conv_forward(activations.last().unwrap(), w, h, block, &mut z);
        let a = if block.relu {
            z.iter().map(|&v| v.max(0.0)).collect()
        } else {
            z.clone()
        };
        pre.push(z);
        activations.push(a);
    }
    (pre, activations)
}

/// Applies the network to an input cube: sequential 3x3 replicate-padded
/// convolutions, ReLU after every block except the last. The output is the
/// predicted residual, same shape as the input.
pub fn network_forward(cube: &GradientCube, weights: &NetworkWeights) -> Result<GradientCube> {
    if cube.channels() != weights.input_channels {
        return Err(Error::ShapeMismatch(format!(
            "cube has {} channels, network expects {}",
            cube.channels(),
            weights.input_channels
        )));
    }
    let (_, activations) = forward_trace(cube, weights);
    GradientCube::new(
        cube.width(),
        cube.height(),
        cube.channels(),
        CubeRole::Residual,
        activations.into_iter().last().unwrap(),
    )
}

/// Training loss for one patch: squared Frobenius distance between the
/// predicted residual and the true residual `target - input`.
pub fn loss_eq2(
    predicted_residual: &GradientCube,
    input: &GradientCube,
    target: &GradientCube,
) -> Result<f64> {
    for other in [input, target] {
        if !predicted_residual.same_shape(other) {
            return Err(Error::ShapeMismatch(
                "loss operands must share one shape".into(),
            ));
        }
    }
    let mut acc = 0.0;
    for ((&p, &i), &t) in predicted_residual
        .samples()
        .iter()
        .zip(input.samples())
        .zip(target.samples())
    {
        let d = p - (t - i);
        acc += d * d;
    }
    Ok(acc)
}

/// Batch loss: mean of [`loss_eq2`] over equally many patches per list.
pub fn loss_eq2_batch(
    predicted: &[GradientCube],
    inputs: &[GradientCube],
    targets: &[GradientCube],
) -> Result<f64> {
    if predicted.len() != inputs.len() || inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::InvalidInput(
            "batch lists must be nonempty and equally long".into(),
        ));
    }
    let mut total = 0.0;
    for ((p, i), t) in predicted.iter().zip(inputs).zip(targets) {
        total += loss_eq2(p, i, t)?;
    }
    Ok(total / predicted.len() as f64)
}

/// Exact gradient of the batch loss with respect to every kernel and bias,
/// by reverse-mode accumulation through the ReLU (subgradient 0 at 0) and
/// the replicate-padded convolutions. Patches are accumulated in list order,
/// so the result is deterministic.
pub fn network_backward(
    batch: &[GradientCube],
    targets: &[GradientCube],
    weights: &NetworkWeights,
) -> Result<WeightGradients> {
    if batch.len() != targets.len() || batch.is_empty() {
        return Err(Error::InvalidInput(
            "batch and target lists must be nonempty and equally long".into(),
        ));
    }
    for (input, target) in batch.iter().zip(targets) {
        if !input.same_shape(target) {
            return Err(Error::ShapeMismatch("input/target shape mismatch".into()));
        }
        if input.channels() != weights.input_channels {
            return Err(Error::ShapeMismatch(format!(
                "cube has {} channels, network expects {}",
                input.channels(),
                weights.input_channels
            )));
        }
    }

    let n = batch.len() as f64;
    let mut grads: Vec<BlockGradients> = weights
        .blocks
        .iter()
        .map(|b| BlockGradients {
            kernel: vec![0.0; b.kernel.len()],
            bias: vec![0.0; b.bias.len()],
        })
        .collect();
    let mut total_loss = 0.0;

    let (w, h) = (batch[0].width(), batch[0].height());
    let plane = w * h;
    for (input, target) in batch.iter().zip(targets) {
        let (pre, activations) = forward_trace(input, weights);
        let predicted = activations.last().unwrap();

        // d loss / d prediction, already including the 1/N batch mean.
        let mut dz: Vec<f64> = predicted
            .iter()
            .zip(target.samples().iter().zip(input.samples()))
            .map(|(&p, (&t, &i))| {
                let d = p - (t - i);
                total_loss += d * d;
                2.0 / n * d
            })
            .collect();

        for l in (0..weights.blocks.len()).rev() {
            let block = &weights.blocks[l];
            let grad = &mut grads[l];
            let a_prev = &activations[l];

            for o in 0..block.out_channels {
                let dz_plane = &dz[o * plane..(o + 1) * plane];
                grad.bias[o] += dz_plane.iter().sum::<f64>();
                for i in 0..block.in_channels {
                    let a_plane = &a_prev[i * plane..(i + 1) * plane];
                    let gk = &mut grad.kernel[(o * block.in_channels + i) * 9..][..9];
                    for r in 0..h {
                        for c in 0..w {
                            let g = dz_plane[r * w + c];
                            if g == 0.0 {
                                continue;
                            }
                            for ky in 0..3 {
                                let rr = clamp_idx(r as isize + ky as isize - 1, h);
                                for kx in 0..3 {
                                    let cc = clamp_idx(c as isize + kx as isize - 1, w);
                                    gk[ky * 3 + kx] += g * a_plane[rr * w + cc];
                                }
                            }
                        }
                    }
                }
            }

            if l == 0 {
                break;
            }
            // Scatter dz back through the convolution, then gate by the
            // previous block's ReLU.
            let mut da_prev = vec![0.0; block.in_channels * plane];
            for o in 0..block.out_channels {
                let dz_plane = &dz[o * plane..(o + 1) * plane];
                for i in 0..block.in_channels {
                    let taps = &block.kernel[(o * block.in_channels + i) * 9..][..9];
                    let da_plane = &mut da_prev[i * plane..(i + 1) * plane];
                    for r in 0..h {
                        for c in 0..w {
                            let g = dz_plane[r * w + c];
                            if g == 0.0 {
                                continue;
                            }
                            for ky in 0..3 {
                                let rr = clamp_idx(r as isize + ky as isize - 1, h);
                                for kx in 0..3 {
                                    let cc = clamp_idx(c as isize + kx as isize - 1, w);
                                    da_plane[rr * w + cc] += taps[ky * 3 + kx] * g;
                                }
                            }
                        }
                    }
                }
            }
            let z_prev = &pre[l - 1];
            dz = da_prev
                .iter()
                .zip(z_prev)
                .map(|(&da, &z)| if z > 0.0 { da } else { 0.0 })
                .collect();
        }
    }

    Ok(WeightGradients { blocks: grads, loss: total_loss / n })
}
