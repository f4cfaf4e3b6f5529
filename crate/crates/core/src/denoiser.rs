//! Supervised image-domain modules and a small residual CNN trained with
//! momentum SGD and hand-written backpropagation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;

/// A named dense tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// An image-to-image map learned from (input, reference) pairs.
pub trait SupervisedModule: Send + Sync {
    fn apply(&self, image: &Image) -> Result<Image>;
    fn train(&mut self, pairs: &[(Image, Image)], cfg: &TrainConfig) -> Result<TrainReport>;
    fn tensors(&self) -> Vec<Tensor>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub momentum: f64,
    /// Variance of the Gaussian weight initialisation.
    pub init_variance: f64,
    /// Side of the random square training crops.
    pub crop: usize,
    pub crops_per_pair: usize,
    /// Multiplies the per-pixel mean squared error (water units).
    pub loss_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr_start: 1e-3,
            lr_end: 1e-4,
            momentum: 0.99,
            init_variance: 0.005,
            crop: 32,
            crops_per_pair: 16,
            loss_scale: 30.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.crops_per_pair == 0 || self.crop == 0 {
            return Err(Error::InvalidParameter(
                "epochs, crop and crops_per_pair must be >= 1".into(),
            ));
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0) {
            return Err(Error::InvalidParameter("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        if !(self.loss_scale > 0.0) || !self.loss_scale.is_finite() {
            return Err(Error::InvalidParameter("loss scale must be positive".into()));
        }
        if !(self.init_variance >= 0.0) {
            return Err(Error::InvalidParameter("init variance must be >= 0".into()));
        }
        Ok(())
    }

    /// Learning rate of `epoch`, decaying log-uniformly from `lr_start` to `lr_end`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr_start;
        }
        let f = epoch as f64 / (self.epochs - 1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(f)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean full-image loss before training, then after every epoch.
    pub epoch_loss: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    /// No rectification; the network becomes affine.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
struct ConvLayer {
    c_in: usize,
    c_out: usize,
    /// `[c_out][c_in][3][3]`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvLayer {
    fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            c_in,
            c_out,
            weights: vec![0.0; c_out * c_in * 9],
            bias: vec![0.0; c_out],
        }
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// 3×3 "same" convolution with zero padding; also returns the im2col
    /// matrix needed by [`ConvLayer::backward`].
    fn forward(&self, input: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
        let plane = h * w;
        let col = im2col(input, self.c_in, h, w);
        let mut out: Vec<f64> = self.bias.iter().flat_map(|&b| std::iter::repeat_n(b, plane)).collect();
        gemm(
            self.c_out,
            self.c_in * 9,
            plane,
            &self.weights,
            false,
            &col,
            false,
            1.0,
            &mut out,
        );
        (out, col)
    }

    /// Returns the input gradient and accumulates parameter gradients.
    fn backward(&self, col: &[f64], grad_out: &[f64], h: usize, w: usize, gw: &mut [f64], gb: &mut [f64]) -> Vec<f64> {
        let plane = h * w;
        let k = self.c_in * 9;
        gb.iter_mut()
            .zip(grad_out.chunks_exact(plane))
            .for_each(|(b, g)| *b += g.iter().sum::<f64>());
        gemm(self.c_out, plane, k, grad_out, false, col, true, 1.0, gw);
        let mut grad_col = vec![0.0; k * plane];
        gemm(
            k,
            self.c_out,
            plane,
            &self.weights,
            true,
            grad_out,
            false,
            0.0,
            &mut grad_col,
        );
        col2im(&grad_col, self.c_in, h, w)
    }
}

/// `c = a·b + beta·c` for row-major `a: m×k` and `b: k×n`, optionally
/// transposed in storage.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides describe exactly the slices' row-major extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Rows `ci·9 + tap` hold channel `ci` shifted by the 3×3 tap, zero padded.
fn im2col(input: &[f64], c_in: usize, h: usize, w: usize) -> Vec<f64> {
    let plane = h * w;
    let mut col = vec![0.0; c_in * 9 * plane];
    for ci in 0..c_in {
        let src = &input[ci * plane..(ci + 1) * plane];
        for tap in 0..9 {
            let row = &mut col[(ci * 9 + tap) * plane..(ci * 9 + tap + 1) * plane];
            shift_into(row, src, h, w, tap / 3, tap % 3);
        }
    }
    col
}

fn col2im(col: &[f64], c_in: usize, h: usize, w: usize) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; c_in * plane];
    for ci in 0..c_in {
        let dst = &mut out[ci * plane..(ci + 1) * plane];
        for tap in 0..9 {
            let row = &col[(ci * 9 + tap) * plane..(ci * 9 + tap + 1) * plane];
            shift_add(dst, row, h, w, tap / 3, tap % 3);
        }
    }
    out
}

fn tap_range(w: usize, kx: usize) -> (isize, usize, usize) {
    let dx = kx as isize - 1;
    ((dx), (-dx).max(0) as usize, (w as isize - dx.max(0)) as usize)
}

/// `out[y][x] = src[y + ky − 1][x + kx − 1]`, zero outside the image.
fn shift_into(out: &mut [f64], src: &[f64], h: usize, w: usize, ky: usize, kx: usize) {
    let dy = ky as isize - 1;
    let (dx, x0, x1) = tap_range(w, kx);
    for y in 0..h {
        let sy = y as isize + dy;
        if sy < 0 || sy >= h as isize || x0 >= x1 {
            continue;
        }
        let s0 = (sy as usize * w) as isize + dx;
        out[y * w + x0..y * w + x1].copy_from_slice(&src[(s0 + x0 as isize) as usize..(s0 + x1 as isize) as usize]);
    }
}

/// `out[y + ky − 1][x + kx − 1] += src[y][x]` inside the image.
fn shift_add(out: &mut [f64], src: &[f64], h: usize, w: usize, ky: usize, kx: usize) {
    let dy = ky as isize - 1;
    let (dx, x0, x1) = tap_range(w, kx);
    for y in 0..h {
        let sy = y as isize + dy;
        if sy < 0 || sy >= h as isize || x0 >= x1 {
            continue;
        }
        let s0 = (sy as usize * w) as isize + dx;
        let dst = &mut out[(s0 + x0 as isize) as usize..(s0 + x1 as isize) as usize];
        dst.iter_mut()
            .zip(&src[y * w + x0..y * w + x1])
            .for_each(|(o, v)| *o += v);
    }
}

/// Four 3×3 convolutions (1→16→16→16→1) with rectifiers in between and a
/// global residual connection. Images are divided by their water
/// attenuation on the way in and scaled back on the way out.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvDenoiser {
    layers: Vec<ConvLayer>,
    pub activation: Activation,
}

/// Channel widths of the reference network.
pub const CHANNELS: [usize; 5] = [1, 16, 16, 16, 1];

struct Trace {
    /// im2col matrix of every layer's input.
    cols: Vec<Vec<f64>>,
    /// Pre-activation of every hidden layer.
    pre: Vec<Vec<f64>>,
    /// Output of the last convolution; the network output is `x + residual`.
    residual: Vec<f64>,
}

impl ConvDenoiser {
    pub fn zeros() -> Self {
        Self::zeros_with(&CHANNELS)
    }

    pub fn zeros_with(channels: &[usize]) -> Self {
        Self {
            layers: channels.windows(2).map(|c| ConvLayer::zeros(c[0], c[1])).collect(),
            activation: Activation::Relu,
        }
    }

    /// Zero-mean Gaussian weights of the given variance and zero biases.
    pub fn random(variance: f64, seed: u64) -> Self {
        let mut net = Self::zeros();
        net.init_random(variance, seed);
        net
    }

    fn init_random(&mut self, variance: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, variance.sqrt()).expect("variance validated");
        for layer in &mut self.layers {
            layer.weights.iter_mut().for_each(|w| *w = normal.sample(&mut rng));
            layer.bias.fill(0.0);
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(ConvLayer::n_params).sum()
    }

    /// All parameters, layer by layer (weights then biases).
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        crate::error::check_len("denoiser parameters", self.n_params(), p.len())?;
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn from_tensors(tensors: &[Tensor]) -> Result<Self> {
        if tensors.is_empty() || !tensors.len().is_multiple_of(2) {
            return Err(Error::InvalidParameter(
                "denoiser needs weight/bias tensor pairs".into(),
            ));
        }
        let mut layers = Vec::new();
        let mut prev_out = None;
        for pair in tensors.chunks_exact(2) {
            let (w, b) = (&pair[0], &pair[1]);
            let bad = || Error::InvalidParameter(format!("bad tensor shapes {:?} / {:?}", w.shape, b.shape));
            if w.shape.len() != 4 || w.shape[2] != 3 || w.shape[3] != 3 || b.shape != [w.shape[0]] {
                return Err(bad());
            }
            let (c_out, c_in) = (w.shape[0], w.shape[1]);
            if prev_out.is_some_and(|p| p != c_in) || w.data.len() != c_out * c_in * 9 || b.data.len() != c_out {
                return Err(bad());
            }
            if w.data.iter().chain(&b.data).any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("denoiser weights must be finite".into()));
            }
            prev_out = Some(c_out);
            layers.push(ConvLayer {
                c_in,
                c_out,
                weights: w.data.clone(),
                bias: b.data.clone(),
            });
        }
        if layers[0].c_in != 1 || layers.last().map(|l| l.c_out) != Some(1) {
            return Err(Error::InvalidParameter(
                "denoiser must map one channel to one channel".into(),
            ));
        }
        Ok(Self {
            layers,
            activation: Activation::Relu,
        })
    }

    fn rectify(&self, v: f64) -> f64 {
        match self.activation {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    fn run(&self, x: &[f64], h: usize, w: usize) -> Trace {
        let mut cols = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::new();
        let mut current = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (z, col) = layer.forward(&current, h, w);
            cols.push(col);
            if i == last {
                return Trace { cols, pre, residual: z };
            }
            current = z.iter().map(|&v| self.rectify(v)).collect();
            pre.push(z);
        }
        unreachable!("network has at least one layer")
    }

    /// Gradient of `loss` w.r.t. all parameters given `∂loss/∂output`.
    fn backprop(&self, trace: &Trace, grad_output: &[f64], h: usize, w: usize) -> Vec<f64> {
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
            .collect();
        let mut g = grad_output.to_vec();
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 && self.activation == Activation::Relu {
                g.iter_mut().zip(&trace.pre[i]).for_each(|(gv, &z)| {
                    if z <= 0.0 {
                        *gv = 0.0
                    }
                });
            }
            let (gw, gb) = &mut grads[i];
            g = self.layers[i].backward(&trace.cols[i], &g, h, w, gw, gb);
        }
        grads.into_iter().flat_map(|(w, b)| w.into_iter().chain(b)).collect()
    }

    /// Mean squared error (water units) of one pair and its parameter gradient.
    fn pair_loss_grad(&self, input: &[f64], reference: &[f64], h: usize, w: usize) -> (f64, Vec<f64>) {
        let trace = self.run(input, h, w);
        let n = input.len() as f64;
        let diff: Vec<f64> = input
            .iter()
            .zip(&trace.residual)
            .zip(reference)
            .map(|((x, z), r)| x + z - r)
            .collect();
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        let grad_out: Vec<f64> = diff.iter().map(|d| 2.0 * d / n).collect();
        (loss, self.backprop(&trace, &grad_out, h, w))
    }

    /// Mean loss over full-image pairs and its gradient.
    pub fn loss_and_gradient(&self, pairs: &[(Image, Image)]) -> Result<(f64, Vec<f64>)> {
        for (input, reference) in pairs {
            input.same_shape(reference)?;
        }
        let (total, mut grad) = pairs
            .par_iter()
            .map(|(input, reference)| {
                let (a, b) = normalised(input, reference);
                self.pair_loss_grad(&a, &b, input.rows, input.cols)
            })
            .reduce(
                || (0.0, vec![0.0; self.n_params()]),
                |(la, mut ga), (lb, gb)| {
                    ga.iter_mut().zip(gb).for_each(|(s, v)| *s += v);
                    (la + lb, ga)
                },
            );
        let k = pairs.len().max(1) as f64;
        grad.iter_mut().for_each(|v| *v /= k);
        Ok((total / k, grad))
    }

    pub fn loss(&self, pairs: &[(Image, Image)]) -> Result<f64> {
        for (input, reference) in pairs {
            input.same_shape(reference)?;
        }
        let losses: Vec<f64> = pairs
            .par_iter()
            .map(|(input, reference)| {
                let (a, b) = normalised(input, reference);
                let z = self.run(&a, input.rows, input.cols).residual;
                a.iter()
                    .zip(&z)
                    .zip(&b)
                    .map(|((x, z), y)| (x + z - y).powi(2))
                    .sum::<f64>()
                    / a.len() as f64
            })
            .collect();
        Ok(losses.iter().sum::<f64>() / pairs.len().max(1) as f64)
    }

    /// Signs of every hidden pre-activation over the given inputs.
    pub fn activation_pattern(&self, pairs: &[(Image, Image)]) -> Vec<bool> {
        pairs
            .iter()
            .flat_map(|(input, reference)| {
                let (a, _) = normalised(input, reference);
                self.run(&a, input.rows, input.cols)
                    .pre
                    .concat()
                    .into_iter()
                    .map(|v| v > 0.0)
            })
            .collect()
    }

    /// [`Self::loss`] and [`Self::activation_pattern`] from one forward pass.
    pub fn loss_and_pattern(&self, pairs: &[(Image, Image)]) -> Result<(f64, Vec<bool>)> {
        let mut total = 0.0;
        let mut pattern = Vec::new();
        for (input, reference) in pairs {
            input.same_shape(reference)?;
            let (a, b) = normalised(input, reference);
            let trace = self.run(&a, input.rows, input.cols);
            total += a
                .iter()
                .zip(&trace.residual)
                .zip(&b)
                .map(|((x, z), y)| (x + z - y).powi(2))
                .sum::<f64>()
                / a.len() as f64;
            pattern.extend(trace.pre.iter().flatten().map(|&v| v > 0.0));
        }
        Ok((total / pairs.len().max(1) as f64, pattern))
    }

    /// Rounds every parameter to single precision, the on-disk precision.
    pub fn quantize(&mut self) {
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|v| *v = *v as f32 as f64);
        }
    }
}

fn normalised(input: &Image, reference: &Image) -> (Vec<f64>, Vec<f64>) {
    let s = 1.0 / input.mu_water;
    (
        input.data.iter().map(|v| v * s).collect(),
        reference.data.iter().map(|v| v * s).collect(),
    )
}

fn crop(data: &[f64], cols: usize, r: usize, c: usize, side_r: usize, side_c: usize) -> Vec<f64> {
    (r..r + side_r)
        .flat_map(|i| data[i * cols + c..i * cols + c + side_c].iter().copied())
        .collect()
}

impl SupervisedModule for ConvDenoiser {
    fn apply(&self, image: &Image) -> Result<Image> {
        if image.is_empty() {
            return Err(Error::InvalidParameter("cannot denoise an empty image".into()));
        }
        let s = image.mu_water;
        let x: Vec<f64> = image.data.iter().map(|v| v / s).collect();
        let z = self.run(&x, image.rows, image.cols).residual;
        Ok(Image {
            rows: image.rows,
            cols: image.cols,
            data: image.data.iter().zip(z).map(|(v, r)| v + r * s).collect(),
            mu_water: s,
        })
    }

    /// Re-initialises from `cfg.seed`, then runs momentum SGD with batch one
    /// over random crops. Aborts on a non-finite loss.
    fn train(&mut self, pairs: &[(Image, Image)], cfg: &TrainConfig) -> Result<TrainReport> {
        cfg.validate()?;
        if pairs.is_empty() {
            return Err(Error::InvalidParameter("training needs at least one pair".into()));
        }
        for (a, b) in pairs {
            a.same_shape(b)?;
            a.same_shape(&pairs[0].0)?;
        }
        self.init_random(cfg.init_variance, cfg.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_c0de);
        let data: Vec<(Vec<f64>, Vec<f64>)> = pairs.iter().map(|(a, b)| normalised(a, b)).collect();
        let (rows, cols) = (pairs[0].0.rows, pairs[0].0.cols);
        let (ch, cw) = (cfg.crop.min(rows), cfg.crop.min(cols));

        let mut report = TrainReport {
            epoch_loss: vec![self.loss(pairs)?],
        };
        let mut params = self.params();
        let mut velocity = vec![0.0; params.len()];
        let mut step = 0;
        for epoch in 0..cfg.epochs {
            let lr = cfg.learning_rate(epoch);
            let mut order: Vec<usize> = (0..pairs.len() * cfg.crops_per_pair).map(|i| i % pairs.len()).collect();
            order.shuffle(&mut rng);
            for &p in &order {
                let r = rng.random_range(0..=rows - ch);
                let c = rng.random_range(0..=cols - cw);
                let input = crop(&data[p].0, cols, r, c, ch, cw);
                let reference = crop(&data[p].1, cols, r, c, ch, cw);
                let (loss, grad) = self.pair_loss_grad(&input, &reference, ch, cw);
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { step, loss });
                }
                let step_size = lr * cfg.loss_scale;
                for ((w, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                    *v = cfg.momentum * *v - step_size * g;
                    *w += *v;
                }
                self.set_params(&params)?;
                step += 1;
            }
            let loss = self.loss(pairs)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step, loss });
            }
            report.epoch_loss.push(loss);
        }
        self.quantize();
        Ok(report)
    }

    fn tensors(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    Tensor {
                        name: format!("conv{i}.weight"),
                        shape: vec![l.c_out, l.c_in, 3, 3],
                        data: l.weights.clone(),
                    },
                    Tensor {
                        name: format!("conv{i}.bias"),
                        shape: vec![l.c_out],
                        data: l.bias.clone(),
                    },
                ]
            })
            .collect()
    }
}
