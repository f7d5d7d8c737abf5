//! The multi-scale sensing network.
//!
//! Pipeline, by training phase:
//!
//! 1. Haar DWT, then a strided `n_B × n_B × 4` convolution with no bias and no
//!    activation produces `m` measurements per block. A bias-free 1×1
//!    convolution maps them to `(2·n_B)²` pixels per block, which are
//!    shuffled back to full resolution.
//! 2. A plain 3×3 CNN with a global residual refines the initial image.
//! 3. A wavelet U-net (DWT down, IDWT up, additive skips) refines it further.
//!
//! Later phases keep every earlier parameter, so a phase-`k` model is a
//! strict prefix of the phase-`k+1` model.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::layers::{self, ConvSpec};
use crate::optim::Parameter;
use crate::tensor::{Shape, Tensor};
use crate::wavelet::{self, BANDS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    /// Sampling plus linear initial reconstruction.
    Initial = 1,
    /// Adds the plain convolutional enhancement net.
    Refine = 2,
    /// Adds the wavelet U-net enhancement.
    Multiscale = 3,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Initial, Phase::Refine, Phase::Multiscale];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u32) -> Result<Self> {
        match n {
            1 => Ok(Phase::Initial),
            2 => Ok(Phase::Refine),
            3 => Ok(Phase::Multiscale),
            _ => Err(Error::InvalidArgument(format!("phase must be 1, 2 or 3, got {n}"))),
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Number of measurements per block: `round(r · 4 · n_B²)`, half away from
/// zero, clamped to `[1, 4·n_B²]`.
pub fn derive_measurement_count(subrate: f64, block_size: usize) -> Result<usize> {
    if !(subrate > 0.0 && subrate <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "subrate must lie in (0, 1], got {subrate}"
        )));
    }
    if block_size == 0 {
        return Err(Error::InvalidArgument("block size must be >= 1".into()));
    }
    let full = BANDS * block_size * block_size;
    let m = (subrate * full as f64).round() as usize;
    Ok(m.clamp(1, full))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    pub block_size: usize,
    pub subrate: f32,
    pub measurements: usize,
}

impl SamplingConfig {
    pub fn new(block_size: usize, subrate: f32) -> Result<Self> {
        let measurements = derive_measurement_count(subrate as f64, block_size)?;
        Ok(SamplingConfig {
            block_size,
            subrate,
            measurements,
        })
    }

    /// Coefficients per block across all four bands.
    pub fn block_dim(&self) -> usize {
        BANDS * self.block_size * self.block_size
    }

    /// Pixel side length covered by one measurement block.
    pub fn tile(&self) -> usize {
        2 * self.block_size
    }

    pub fn realized_subrate(&self) -> f64 {
        self.measurements as f64 / self.block_dim() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(Error::InvalidArgument("block size must be >= 1".into()));
        }
        if self.measurements == 0 || self.measurements > self.block_dim() {
            return Err(Error::InvalidArgument(format!(
                "measurement count {} outside [1, {}]",
                self.measurements,
                self.block_dim()
            )));
        }
        Ok(())
    }

    fn sampling_spec(&self) -> ConvSpec {
        ConvSpec::square(BANDS, self.measurements, self.block_size, self.block_size, 0, false)
    }

    fn recon_spec(&self) -> ConvSpec {
        ConvSpec::square(self.measurements, self.tile() * self.tile(), 1, 1, 0, false)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub enhance1_depth: usize,
    pub enhance1_width: usize,
    pub mwcnn_levels: usize,
    pub mwcnn_widths: Vec<usize>,
    pub mwcnn_convs_per_level: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            enhance1_depth: 5,
            enhance1_width: 64,
            mwcnn_levels: 2,
            mwcnn_widths: vec![32, 64],
            mwcnn_convs_per_level: 2,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("enhance1_depth", self.enhance1_depth),
            ("enhance1_width", self.enhance1_width),
            ("mwcnn_levels", self.mwcnn_levels),
            ("mwcnn_convs_per_level", self.mwcnn_convs_per_level),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        if self.mwcnn_widths.len() != self.mwcnn_levels {
            return Err(Error::InvalidArgument(format!(
                "mwcnn_widths has {} entries but mwcnn_levels is {}",
                self.mwcnn_widths.len(),
                self.mwcnn_levels
            )));
        }
        if self.mwcnn_widths.contains(&0) {
            return Err(Error::InvalidArgument("mwcnn widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// A convolution with its learnable weight and optional bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub weight: Parameter,
    pub bias: Option<Parameter>,
}

impl ConvLayer {
    fn new(name: &str, spec: ConvSpec) -> Self {
        ConvLayer {
            spec,
            weight: Parameter::new(format!("{name}.weight"), Tensor::zeros(spec.weight_shape())),
            bias: spec
                .has_bias
                .then(|| Parameter::new(format!("{name}.bias"), Tensor::zeros([spec.out_channels, 1, 1, 1]))),
        }
    }

    /// Gaussian weights with variance `2 / fan_in`, zero bias.
    fn kaiming(name: &str, spec: ConvSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut layer = Self::new(name, spec);
        let std = (2.0 / spec.patch_len() as f64).sqrt() as f32;
        fill_normal(&mut layer.weight.value, std, rng);
        layer
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let bias = self.bias.as_ref().map(|b| b.value.data());
        layers::conv2d(x, &self.weight.value, bias, &self.spec)
    }

    /// Accumulates parameter gradients; returns the input gradient if asked.
    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor, want_input: bool) -> Result<Option<Tensor>> {
        layers::conv2d_backward_accumulate(
            x,
            &self.weight.value,
            &self.spec,
            grad_out,
            self.weight.grad.data_mut(),
            self.bias.as_mut().map(|b| b.grad.data_mut()),
            want_input,
        )
    }

    fn params(&self) -> impl Iterator<Item = &Parameter> {
        std::iter::once(&self.weight).chain(self.bias.as_ref())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut())
    }
}

fn fill_normal(t: &mut Tensor, std: f32, rng: &mut ChaCha8Rng) {
    let normal = Normal::new(0.0f32, std).expect("finite std");
    t.data_mut().iter_mut().for_each(|v| *v = normal.sample(rng));
}

/// Runs `convs` with a ReLU after each, recording every intermediate.
/// `acts[0]` is the input, `acts[i + 1]` the post-ReLU output of conv `i`.
fn relu_chain_forward(convs: &[ConvLayer], x: Tensor) -> Result<Vec<Tensor>> {
    let mut acts = Vec::with_capacity(convs.len() + 1);
    acts.push(x);
    for conv in convs {
        let pre = conv.forward(acts.last().expect("non-empty"))?;
        acts.push(layers::relu(&pre));
    }
    Ok(acts)
}

fn push_pattern(acts: &[Tensor], out: &mut Vec<bool>) {
    for a in &acts[1..] {
        out.extend(a.data().iter().map(|&v| v > 0.0));
    }
}

fn relu_chain_backward(
    convs: &mut [ConvLayer],
    acts: &[Tensor],
    grad_out: Tensor,
    want_input: bool,
) -> Result<Option<Tensor>> {
    let mut grad = grad_out;
    for (i, conv) in convs.iter_mut().enumerate().rev() {
        // relu(x) > 0 exactly where x > 0, so the output serves as the mask.
        let masked = layers::relu_backward(&acts[i + 1], &grad)?;
        match conv.backward(&acts[i], &masked, want_input || i > 0)? {
            Some(g) => grad = g,
            None => return Ok(None),
        }
    }
    Ok(Some(grad))
}

/// Plain 3×3 convolution stack with a global residual connection.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainCnn {
    /// ReLU-activated layers.
    pub hidden: Vec<ConvLayer>,
    /// Final linear layer back to one channel.
    pub tail: ConvLayer,
}

pub struct PlainCnnCache {
    acts: Vec<Tensor>,
}

impl PlainCnnCache {
    /// Which ReLU units were active, in layer order.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        push_pattern(&self.acts, &mut out);
        out
    }
}

impl PlainCnn {
    fn build(cfg: &NetConfig, rng: &mut ChaCha8Rng, zero_tail: bool) -> Self {
        let width = cfg.enhance1_width;
        let mut hidden = Vec::new();
        let mut c_in = 1;
        for i in 0..cfg.enhance1_depth - 1 {
            hidden.push(ConvLayer::kaiming(
                &format!("enhance1.conv{i}"),
                ConvSpec::same3x3(c_in, width),
                rng,
            ));
            c_in = width;
        }
        let tail_name = format!("enhance1.conv{}", cfg.enhance1_depth - 1);
        let tail_spec = ConvSpec::same3x3(c_in, 1);
        let tail = if zero_tail {
            ConvLayer::new(&tail_name, tail_spec)
        } else {
            ConvLayer::kaiming(&tail_name, tail_spec, rng)
        };
        PlainCnn { hidden, tail }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, PlainCnnCache)> {
        let acts = relu_chain_forward(&self.hidden, x.clone())?;
        let mut out = self.tail.forward(acts.last().expect("non-empty"))?;
        out.add_assign(x)?;
        Ok((out, PlainCnnCache { acts }))
    }

    pub fn backward(&mut self, cache: &PlainCnnCache, grad_out: &Tensor) -> Result<Tensor> {
        let top = cache.acts.last().expect("non-empty");
        let g = self.tail.backward(top, grad_out, true)?.expect("requested");
        let mut grad_in = relu_chain_backward(&mut self.hidden, &cache.acts, g, true)?.expect("requested");
        grad_in.add_assign(grad_out)?;
        Ok(grad_in)
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.hidden.iter().flat_map(ConvLayer::params).chain(self.tail.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.hidden
            .iter_mut()
            .flat_map(ConvLayer::params_mut)
            .chain(self.tail.params_mut())
    }
}

/// Wavelet U-net: each encoder level applies a DWT then ReLU convolutions;
/// each decoder level applies ReLU convolutions ending at four times the
/// next-finer width, then an inverse DWT, and adds the matching encoder
/// output. A 3×3 head maps back to one channel; the input is added back.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletUnet {
    pub encoder: Vec<Vec<ConvLayer>>,
    pub decoder: Vec<Vec<ConvLayer>>,
    pub head: ConvLayer,
}

pub struct WaveletUnetCache {
    enc: Vec<Vec<Tensor>>,
    dec: Vec<Vec<Tensor>>,
    head_in: Tensor,
}

impl WaveletUnetCache {
    /// Which ReLU units were active, encoder levels then decoder levels.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for acts in self.enc.iter().chain(&self.dec) {
            push_pattern(acts, &mut out);
        }
        out
    }
}

impl WaveletUnet {
    fn build(cfg: &NetConfig, rng: &mut ChaCha8Rng, zero_head: bool) -> Self {
        let widths = &cfg.mwcnn_widths;
        let convs = cfg.mwcnn_convs_per_level;
        let mut encoder = Vec::new();
        let mut c_prev = 1;
        for (l, &w) in widths.iter().enumerate() {
            let mut level = Vec::new();
            let mut c_in = BANDS * c_prev;
            for j in 0..convs {
                level.push(ConvLayer::kaiming(
                    &format!("enhance2.enc{l}.conv{j}"),
                    ConvSpec::same3x3(c_in, w),
                    rng,
                ));
                c_in = w;
            }
            encoder.push(level);
            c_prev = w;
        }
        let mut decoder = Vec::new();
        for (l, &w) in widths.iter().enumerate() {
            let c_out = BANDS * if l == 0 { widths[0] } else { widths[l - 1] };
            let level = (0..convs)
                .map(|j| {
                    let out = if j + 1 == convs { c_out } else { w };
                    ConvLayer::kaiming(&format!("enhance2.dec{l}.conv{j}"), ConvSpec::same3x3(w, out), rng)
                })
                .collect();
            decoder.push(level);
        }
        let head_spec = ConvSpec::same3x3(widths[0], 1);
        let head = if zero_head {
            ConvLayer::new("enhance2.head", head_spec)
        } else {
            ConvLayer::kaiming("enhance2.head", head_spec, rng)
        };
        WaveletUnet { encoder, decoder, head }
    }

    pub fn levels(&self) -> usize {
        self.encoder.len()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, WaveletUnetCache)> {
        let levels = self.levels();
        let s = x.shape();
        let multiple = 1usize << levels;
        if !s.h.is_multiple_of(multiple) || !s.w.is_multiple_of(multiple) {
            return Err(Error::shape(
                "wavelet unet",
                format!("spatial dims {}x{} must be divisible by {multiple}", s.h, s.w),
            ));
        }
        let mut enc = Vec::with_capacity(levels);
        let mut h = x.clone();
        for convs in &self.encoder {
            let acts = relu_chain_forward(convs, wavelet::dwt2(&h)?)?;
            h = acts.last().expect("non-empty").clone();
            enc.push(acts);
        }
        let mut dec: Vec<Vec<Tensor>> = (0..levels).map(|_| Vec::new()).collect();
        let mut g = h;
        for l in (0..levels).rev() {
            let acts = relu_chain_forward(&self.decoder[l], g)?;
            let mut z = wavelet::idwt2(acts.last().expect("non-empty"))?;
            if l > 0 {
                z.add_assign(enc[l - 1].last().expect("non-empty"))?;
            }
            dec[l] = acts;
            g = z;
        }
        let mut out = self.head.forward(&g)?;
        out.add_assign(x)?;
        Ok((out, WaveletUnetCache { enc, dec, head_in: g }))
    }

    pub fn backward(&mut self, cache: &WaveletUnetCache, grad_out: &Tensor) -> Result<Tensor> {
        let levels = self.levels();
        let mut grad_enc: Vec<Option<Tensor>> = vec![None; levels];
        let mut grad_g = self.head.backward(&cache.head_in, grad_out, true)?.expect("requested");
        for (l, slot) in grad_enc.iter_mut().enumerate() {
            let grad_u = wavelet::idwt2_backward(&grad_g)?;
            let grad_in = relu_chain_backward(&mut self.decoder[l], &cache.dec[l], grad_u, true)?.expect("requested");
            // Decoder input at level l is e_l (deepest) or z_{l+1} + e_l.
            accumulate(slot, &grad_in)?;
            grad_g = grad_in;
        }
        let mut carry: Option<Tensor> = None;
        for l in (0..levels).rev() {
            let mut g = grad_enc[l].take().expect("every level receives a gradient");
            if let Some(c) = carry.take() {
                g.add_assign(&c)?;
            }
            let grad_d = relu_chain_backward(&mut self.encoder[l], &cache.enc[l], g, true)?.expect("requested");
            carry = Some(wavelet::dwt2_backward(&grad_d)?);
        }
        let mut grad_x = carry.expect("at least one level");
        grad_x.add_assign(grad_out)?;
        Ok(grad_x)
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flatten()
            .flat_map(ConvLayer::params)
            .chain(self.head.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flatten()
            .flat_map(ConvLayer::params_mut)
            .chain(self.head.params_mut())
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: &Tensor) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(g),
        None => {
            *slot = Some(g.clone());
            Ok(())
        }
    }
}

/// Dense row-major sampling matrix `Φ_B` of shape `m × 4·n_B²`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl SamplingMatrix {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

const STREAM_SAMPLING: u64 = 0;
const STREAM_RECON: u64 = 1;
const STREAM_ENHANCE1: u64 = 2;
const STREAM_ENHANCE2: u64 = 3;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// All learnable state of a model together with its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub sampling: SamplingConfig,
    pub net: NetConfig,
    pub phase: Phase,
    pub seed: u64,
    pub sampling_kernel: Parameter,
    pub recon_kernel: Parameter,
    pub enhance1: Option<PlainCnn>,
    pub enhance2: Option<WaveletUnet>,
}

/// Seeded initialization of every subnet. Each subnet draws from its own
/// random stream, so materializing a subnet later yields the same values.
pub fn init_params(sampling: SamplingConfig, net: NetConfig, seed: u64) -> Result<ModelParams> {
    let mut model = ModelParams::skeleton(sampling, net, seed)?;
    let mut rng = stream_rng(seed, STREAM_SAMPLING);
    let std = (1.0 / sampling.block_dim() as f64).sqrt() as f32;
    fill_normal(&mut model.sampling_kernel.value, std, &mut rng);
    let mut rng = stream_rng(seed, STREAM_RECON);
    let std = (1.0 / sampling.measurements as f64).sqrt() as f32;
    fill_normal(&mut model.recon_kernel.value, std, &mut rng);
    model.ensure_subnets(Phase::Multiscale);
    Ok(model)
}

impl ModelParams {
    /// Zero-valued sampling and reconstruction kernels without enhancement nets.
    fn skeleton(sampling: SamplingConfig, net: NetConfig, seed: u64) -> Result<Self> {
        sampling.validate()?;
        net.validate()?;
        let s_spec = sampling.sampling_spec();
        let r_spec = sampling.recon_spec();
        Ok(ModelParams {
            sampling,
            net,
            phase: Phase::Initial,
            seed,
            sampling_kernel: Parameter::new("sampling.kernel", Tensor::zeros(s_spec.weight_shape())),
            recon_kernel: Parameter::new("recon.kernel", Tensor::zeros(r_spec.weight_shape())),
            enhance1: None,
            enhance2: None,
        })
    }

    /// Full-rate model whose phase-1 path reconstructs exactly: identity
    /// sampling and the inverse Haar synthesis as the 1×1 reconstruction.
    pub fn full_rate_identity(block_size: usize, net: NetConfig) -> Result<Self> {
        let sampling = SamplingConfig::new(block_size, 1.0)?;
        let mut model = Self::skeleton(sampling, net, 0)?;
        let d = sampling.block_dim();
        let nb = block_size;
        let tile = sampling.tile();
        let phi = model.sampling_kernel.value.data_mut();
        for i in 0..d {
            phi[i * d + i] = 1.0;
        }
        // Measurement k = band·n_B² + by·n_B + bx; pixel p = py·tile + px.
        let recon = model.recon_kernel.value.data_mut();
        for py in 0..tile {
            for px in 0..tile {
                let p = py * tile + px;
                let sub = (py % 2) * 2 + px % 2;
                let coeff = (py / 2) * nb + px / 2;
                for (band, &w) in HAAR_SYNTHESIS[sub].iter().enumerate() {
                    recon[p * d + band * nb * nb + coeff] = w;
                }
            }
        }
        Ok(model)
    }

    /// Materializes any enhancement subnets needed for `phase` from the seed.
    pub fn ensure_subnets(&mut self, phase: Phase) {
        if phase >= Phase::Refine && self.enhance1.is_none() {
            let mut rng = stream_rng(self.seed, STREAM_ENHANCE1);
            self.enhance1 = Some(PlainCnn::build(&self.net, &mut rng, true));
        }
        if phase >= Phase::Multiscale && self.enhance2.is_none() {
            let mut rng = stream_rng(self.seed, STREAM_ENHANCE2);
            self.enhance2 = Some(WaveletUnet::build(&self.net, &mut rng, true));
        }
    }

    /// Drops subnets beyond `phase` and stamps it.
    pub fn truncate_to(&mut self, phase: Phase) {
        if phase < Phase::Multiscale {
            self.enhance2 = None;
        }
        if phase < Phase::Refine {
            self.enhance1 = None;
        }
        self.phase = phase;
    }

    /// Re-draws every enhancement layer, including the zero-initialized
    /// output layers, from a Kaiming Gaussian.
    pub fn randomize_enhancements(&mut self, seed: u64) {
        let mut rng = stream_rng(seed, STREAM_ENHANCE1);
        self.enhance1 = Some(PlainCnn::build(&self.net, &mut rng, false));
        let mut rng = stream_rng(seed, STREAM_ENHANCE2);
        self.enhance2 = Some(WaveletUnet::build(&self.net, &mut rng, false));
    }

    /// Pixel multiple an image side must have to run `phase`.
    pub fn spatial_multiple(&self, phase: Phase) -> usize {
        let tile = self.sampling.tile();
        if phase >= Phase::Multiscale {
            lcm(tile, 1 << self.net.mwcnn_levels)
        } else {
            tile
        }
    }

    pub fn sampling_spec(&self) -> ConvSpec {
        self.sampling.sampling_spec()
    }

    pub fn recon_spec(&self) -> ConvSpec {
        self.sampling.recon_spec()
    }

    /// Every present parameter in canonical order.
    pub fn params(&self) -> Vec<&Parameter> {
        let mut out = vec![&self.sampling_kernel, &self.recon_kernel];
        if let Some(e) = &self.enhance1 {
            out.extend(e.params());
        }
        if let Some(e) = &self.enhance2 {
            out.extend(e.params());
        }
        out
    }

    /// Parameters used by `phase`: everything up to and including it.
    pub fn active_params(&self, phase: Phase) -> Vec<&Parameter> {
        let mut out = vec![&self.sampling_kernel, &self.recon_kernel];
        if phase >= Phase::Refine {
            if let Some(e) = &self.enhance1 {
                out.extend(e.params());
            }
        }
        if phase >= Phase::Multiscale {
            if let Some(e) = &self.enhance2 {
                out.extend(e.params());
            }
        }
        out
    }

    /// Parameters trained in `phase`: everything up to and including it.
    pub fn active_params_mut(&mut self, phase: Phase) -> Vec<&mut Parameter> {
        let mut out = vec![&mut self.sampling_kernel, &mut self.recon_kernel];
        if phase >= Phase::Refine {
            if let Some(e) = &mut self.enhance1 {
                out.extend(e.params_mut());
            }
        }
        if phase >= Phase::Multiscale {
            if let Some(e) = &mut self.enhance2 {
                out.extend(e.params_mut());
            }
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for p in self.active_params_mut(Phase::Multiscale) {
            p.zero_grad();
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Pixel `(dy, dx)` of a 2×2 tile as weights over `[LL, HL, LH, HH]`.
const HAAR_SYNTHESIS: [[f32; 4]; 4] = [
    [0.5, -0.5, -0.5, 0.5],
    [0.5, 0.5, -0.5, -0.5],
    [0.5, -0.5, 0.5, -0.5],
    [0.5, 0.5, 0.5, 0.5],
];

fn check_image(image: &Tensor, params: &ModelParams, op: &'static str) -> Result<()> {
    let s = image.shape();
    if s.c != 1 {
        return Err(Error::shape(op, format!("expected a single-channel image, got {s}")));
    }
    let tile = params.sampling.tile();
    if !s.h.is_multiple_of(tile) || !s.w.is_multiple_of(tile) {
        return Err(Error::shape(
            op,
            format!(
                "image {}x{} is not a multiple of 2·block_size = {tile}; pad or crop it first",
                s.h, s.w
            ),
        ));
    }
    Ok(())
}

/// Measurements `(n, m, h/2n_B, w/2n_B)`; linear in the image.
pub fn sample(image: &Tensor, params: &ModelParams) -> Result<Tensor> {
    check_image(image, params, "sample")?;
    let coeffs = wavelet::dwt2(image)?;
    layers::conv2d(&coeffs, &params.sampling_kernel.value, None, &params.sampling_spec())
}

/// Row `i` is sampling kernel `i` flattened band-major then row-major.
pub fn export_matrix(params: &ModelParams) -> SamplingMatrix {
    SamplingMatrix {
        rows: params.sampling.measurements,
        cols: params.sampling.block_dim(),
        data: params.sampling_kernel.value.data().to_vec(),
    }
}

pub fn initial_reconstruct(measurements: &Tensor, params: &ModelParams) -> Result<Tensor> {
    let s = measurements.shape();
    if s.c != params.sampling.measurements {
        return Err(Error::shape(
            "initial_reconstruct",
            format!(
                "measurement channels {} but model takes {}",
                s.c, params.sampling.measurements
            ),
        ));
    }
    let pixels = layers::conv2d(measurements, &params.recon_kernel.value, None, &params.recon_spec())?;
    layers::depth_to_space(&pixels, params.sampling.tile())
}

fn missing(subnet: &str, phase: Phase) -> Error {
    Error::InvalidArgument(format!("model has no {subnet} parameters; cannot run phase {phase}"))
}

pub fn enhance1_forward(image: &Tensor, params: &ModelParams) -> Result<Tensor> {
    params
        .enhance1
        .as_ref()
        .ok_or_else(|| missing("enhance1", Phase::Refine))?
        .forward(image)
}

pub fn enhance2_forward(image: &Tensor, params: &ModelParams) -> Result<Tensor> {
    params
        .enhance2
        .as_ref()
        .ok_or_else(|| missing("enhance2", Phase::Multiscale))?
        .forward(image)
}

/// Decoder side: initial reconstruction plus the enhancements of `phase`.
pub fn reconstruct(measurements: &Tensor, params: &ModelParams, phase: Phase) -> Result<Tensor> {
    let mut x = initial_reconstruct(measurements, params)?;
    if phase >= Phase::Refine {
        x = enhance1_forward(&x, params)?;
    }
    if phase >= Phase::Multiscale {
        x = enhance2_forward(&x, params)?;
    }
    Ok(x)
}

pub fn forward(image: &Tensor, params: &ModelParams, phase: Phase) -> Result<Tensor> {
    reconstruct(&sample(image, params)?, params, phase)
}

/// Intermediates kept by [`forward_cached`] for [`backward`].
pub struct ForwardCache {
    phase: Phase,
    coeffs: Tensor,
    measurements: Tensor,
    initial: Tensor,
    enhance1: Option<PlainCnnCache>,
    enhance2: Option<WaveletUnetCache>,
}

impl ForwardCache {
    /// Which ReLU units of the enhancement stages were active.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = self
            .enhance1
            .as_ref()
            .map(PlainCnnCache::activation_pattern)
            .unwrap_or_default();
        if let Some(c) = &self.enhance2 {
            out.extend(c.activation_pattern());
        }
        out
    }
}

pub fn forward_cached(image: &Tensor, params: &ModelParams, phase: Phase) -> Result<(Tensor, ForwardCache)> {
    check_image(image, params, "forward")?;
    let coeffs = wavelet::dwt2(image)?;
    let measurements = layers::conv2d(&coeffs, &params.sampling_kernel.value, None, &params.sampling_spec())?;
    let initial = initial_reconstruct(&measurements, params)?;
    let mut x = initial.clone();
    let mut c1 = None;
    let mut c2 = None;
    if phase >= Phase::Refine {
        let net = params.enhance1.as_ref().ok_or_else(|| missing("enhance1", phase))?;
        let (y, c) = net.forward_cached(&x)?;
        x = y;
        c1 = Some(c);
    }
    if phase >= Phase::Multiscale {
        let net = params.enhance2.as_ref().ok_or_else(|| missing("enhance2", phase))?;
        let (y, c) = net.forward_cached(&x)?;
        x = y;
        c2 = Some(c);
    }
    Ok((
        x,
        ForwardCache {
            phase,
            coeffs,
            measurements,
            initial,
            enhance1: c1,
            enhance2: c2,
        },
    ))
}

/// Accumulates the gradient of every parameter active in the cached phase,
/// the sampling kernel included.
pub fn backward(params: &mut ModelParams, cache: &ForwardCache, grad_out: &Tensor) -> Result<()> {
    if grad_out.shape() != cache.initial.shape() {
        return Err(Error::shape(
            "backward",
            format!("grad {} vs output {}", grad_out.shape(), cache.initial.shape()),
        ));
    }
    let mut grad = grad_out.clone();
    if cache.phase >= Phase::Multiscale {
        let net = params
            .enhance2
            .as_mut()
            .ok_or_else(|| missing("enhance2", cache.phase))?;
        grad = net.backward(cache.enhance2.as_ref().expect("cached"), &grad)?;
    }
    if cache.phase >= Phase::Refine {
        let net = params
            .enhance1
            .as_mut()
            .ok_or_else(|| missing("enhance1", cache.phase))?;
        grad = net.backward(cache.enhance1.as_ref().expect("cached"), &grad)?;
    }
    let grad_pixels = layers::space_to_depth(&grad, params.sampling.tile())?;
    let r_spec = params.recon_spec();
    let grad_meas = layers::conv2d_backward_accumulate(
        &cache.measurements,
        &params.recon_kernel.value,
        &r_spec,
        &grad_pixels,
        params.recon_kernel.grad.data_mut(),
        None,
        true,
    )?
    .expect("requested");
    let s_spec = params.sampling_spec();
    layers::conv2d_backward_accumulate(
        &cache.coeffs,
        &params.sampling_kernel.value,
        &s_spec,
        &grad_meas,
        params.sampling_kernel.grad.data_mut(),
        None,
        false,
    )?;
    Ok(())
}

/// Output shape of [`sample`] for an `h × w` image.
pub fn measurement_shape(params: &ModelParams, h: usize, w: usize) -> Shape {
    let tile = params.sampling.tile();
    Shape::new(1, params.sampling.measurements, h / tile, w / tile)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_net() -> NetConfig {
        NetConfig {
            enhance1_depth: 3,
            enhance1_width: 4,
            mwcnn_levels: 2,
            mwcnn_widths: vec![4, 8],
            mwcnn_convs_per_level: 2,
        }
    }

    fn ramp(h: usize, w: usize) -> Tensor {
        let data = (0..h * w).map(|i| ((i * 37 % 101) as f32) / 101.0).collect();
        Tensor::from_plane(h, w, data).unwrap()
    }

    #[test]
    fn measurement_count_examples() {
        assert_eq!(derive_measurement_count(1.0, 16).unwrap(), 1024);
        assert_eq!(derive_measurement_count(0.1, 16).unwrap(), 102);
        assert_eq!(derive_measurement_count(0.3, 16).unwrap(), 307);
        assert_eq!(derive_measurement_count(1e-6, 2).unwrap(), 1);
        // 0.5 · 4 · 1 = 2 exactly; 0.125 · 4 = 0.5 rounds away from zero.
        assert_eq!(derive_measurement_count(0.125, 1).unwrap(), 1);
        assert_eq!(derive_measurement_count(0.375, 1).unwrap(), 2);
        assert!(derive_measurement_count(0.0, 16).is_err());
        assert!(derive_measurement_count(1.01, 16).is_err());
        assert!(derive_measurement_count(f64::NAN, 16).is_err());
    }

    #[test]
    fn identity_sampling_returns_wavelet_coefficients() {
        let model = ModelParams::full_rate_identity(1, NetConfig::default()).unwrap();
        let x = ramp(4, 6);
        let y = sample(&x, &model).unwrap();
        let coeffs = wavelet::dwt2(&x).unwrap();
        assert_eq!(y, coeffs);
        let phi = export_matrix(&model);
        assert_eq!((phi.rows, phi.cols), (4, 4));
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(phi.row(i)[j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn full_rate_identity_reconstructs_exactly() {
        for nb in [1, 2, 4] {
            let model = ModelParams::full_rate_identity(nb, NetConfig::default()).unwrap();
            let x = ramp(4 * nb, 8 * nb);
            let y = forward(&x, &model, Phase::Initial).unwrap();
            assert!(y.max_abs_diff(&x).unwrap() < 1e-5, "n_B = {nb}");
        }
    }

    #[test]
    fn zero_measurements_give_zero_image() {
        let model = init_params(SamplingConfig::new(2, 0.5).unwrap(), small_net(), 1).unwrap();
        let y = initial_reconstruct(&Tensor::zeros([1, 8, 2, 3]), &model).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 8, 12));
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sample_rejects_indivisible_image() {
        let model = init_params(SamplingConfig::new(2, 0.5).unwrap(), small_net(), 1).unwrap();
        let err = sample(&ramp(6, 8), &model).unwrap_err();
        assert!(err.to_string().contains("pad or crop"), "{err}");
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = SamplingConfig::new(2, 0.5).unwrap();
        let a = init_params(cfg, small_net(), 7).unwrap();
        let b = init_params(cfg, small_net(), 7).unwrap();
        let c = init_params(cfg, small_net(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.sampling_kernel.value, c.sampling_kernel.value);
    }

    #[test]
    fn sampling_kernel_variance() {
        let model = init_params(SamplingConfig::new(16, 0.1).unwrap(), small_net(), 3).unwrap();
        let v = model.sampling_kernel.value.data();
        let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        let target = 1.0 / 1024.0;
        assert!((var - target).abs() / target < 0.2, "variance {var}");
    }

    #[test]
    fn zero_initialized_enhancements_are_identity() {
        let mut model = init_params(SamplingConfig::new(2, 0.5).unwrap(), small_net(), 5).unwrap();
        let x = ramp(8, 8);
        let p1 = forward(&x, &model, Phase::Initial).unwrap();
        let p2 = forward(&x, &model, Phase::Refine).unwrap();
        let p3 = forward(&x, &model, Phase::Multiscale).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(p2, p3);
        // Fully zeroed branches are identities too.
        model.randomize_enhancements(9);
        for p in model.enhance1.as_mut().unwrap().params_mut() {
            p.value.fill(0.0);
        }
        assert_eq!(enhance1_forward(&x, &model).unwrap(), x);
        for p in model.enhance2.as_mut().unwrap().params_mut() {
            p.value.fill(0.0);
        }
        assert_eq!(enhance2_forward(&x, &model).unwrap(), x);
    }

    #[test]
    fn enhancement_preserves_shape() {
        let mut model = init_params(SamplingConfig::new(2, 0.5).unwrap(), small_net(), 5).unwrap();
        model.randomize_enhancements(2);
        for (h, w) in [(8, 12), (4, 4), (16, 8)] {
            let x = ramp(h, w);
            assert_eq!(enhance1_forward(&x, &model).unwrap().shape(), x.shape());
            assert_eq!(enhance2_forward(&x, &model).unwrap().shape(), x.shape());
        }
        assert!(enhance2_forward(&ramp(6, 8), &model).is_err());
    }

    #[test]
    fn parameter_names_are_unique() {
        let model = init_params(SamplingConfig::new(2, 0.5).unwrap(), small_net(), 5).unwrap();
        let mut names: Vec<_> = model.params().iter().map(|p| p.name.clone()).collect();
        let total = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), total);
        assert!(model
            .params()
            .iter()
            .filter(|p| p.name.starts_with("sampling"))
            .all(|p| !p.name.ends_with("bias")));
    }

    #[test]
    fn truncate_and_regrow_reproduces_subnets() {
        let full = init_params(SamplingConfig::new(2, 0.5).unwrap(), small_net(), 11).unwrap();
        let mut m = full.clone();
        m.truncate_to(Phase::Initial);
        assert!(m.enhance1.is_none() && m.enhance2.is_none());
        m.ensure_subnets(Phase::Multiscale);
        assert_eq!(m.enhance1, full.enhance1);
        assert_eq!(m.enhance2, full.enhance2);
    }

    #[test]
    fn invalid_phase_number() {
        assert!(Phase::from_number(0).is_err());
        assert!(Phase::from_number(4).is_err());
        assert_eq!(Phase::from_number(2).unwrap(), Phase::Refine);
    }
}
