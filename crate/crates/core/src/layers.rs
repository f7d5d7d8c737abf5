//! Layer primitives with hand-written backward passes.
//!
//! Convolution is cross-correlation (no kernel flip) lowered onto a single
//! GEMM per batch item through an im2col buffer.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Geometry of a 2-D convolution. Padding is symmetric zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    pub fn square(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        has_bias: bool,
    ) -> Self {
        ConvSpec {
            out_channels,
            in_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
            has_bias,
        }
    }

    /// 3×3, stride 1, padding 1, with bias: preserves spatial size.
    pub fn same3x3(in_channels: usize, out_channels: usize) -> Self {
        Self::square(in_channels, out_channels, 3, 1, 1, true)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::InvalidArgument("conv stride must be >= 1".into()));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::InvalidArgument("conv kernel dims must be >= 1".into()));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)
    }

    /// Rows of the im2col matrix: one per (channel, kernel row, kernel col).
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let dim = |size: usize, k: usize, axis: &str| -> Result<usize> {
            let padded = size + 2 * self.padding;
            if padded < k {
                return Err(Error::shape(
                    "conv2d",
                    format!("{axis}: padded size {padded} smaller than kernel {k}; output would be empty"),
                ));
            }
            Ok((padded - k) / self.stride + 1)
        };
        Ok((dim(h, self.kernel_h, "height")?, dim(w, self.kernel_w, "width")?))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }

    fn check_operands(&self, input: Shape, weight: Shape) -> Result<(usize, usize)> {
        self.validate()?;
        let expect = self.weight_shape();
        if weight != expect {
            return Err(Error::shape(
                "conv2d",
                format!("weight shape {weight} but spec requires {expect}"),
            ));
        }
        if input.c != self.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {} but spec in_channels {}", input.c, self.in_channels),
            ));
        }
        self.output_hw(input.h, input.w)
    }
}

/// `c = a · b (+ beta · c)` with `c` row-major `m × n`; `a`, `b` use explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(item: &[f32], h: usize, w: usize, spec: &ConvSpec, oh: usize, ow: usize, cols: &mut [f32]) {
    let p = oh * ow;
    let (s, pad) = (spec.stride, spec.padding as isize);
    for ci in 0..spec.in_channels {
        let plane = &item[ci * h * w..(ci + 1) * h * w];
        for ky in 0..spec.kernel_h {
            for kx in 0..spec.kernel_w {
                let row = (ci * spec.kernel_h + ky) * spec.kernel_w + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - pad;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - pad;
                        *v = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f32], h: usize, w: usize, spec: &ConvSpec, oh: usize, ow: usize, item: &mut [f32]) {
    let p = oh * ow;
    let (s, pad) = (spec.stride, spec.padding as isize);
    for ci in 0..spec.in_channels {
        let plane = &mut item[ci * h * w..(ci + 1) * h * w];
        for ky in 0..spec.kernel_h {
            for kx in 0..spec.kernel_w {
                let row = (ci * spec.kernel_h + ky) * spec.kernel_w + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &g) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * s + kx) as isize - pad;
                        if ix >= 0 && (ix as usize) < w {
                            dst[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&[f32]>, spec: &ConvSpec) -> Result<Tensor> {
    let ishape = input.shape();
    let (oh, ow) = spec.check_operands(ishape, weight.shape())?;
    match (spec.has_bias, bias) {
        (true, Some(b)) if b.len() != spec.out_channels => {
            return Err(Error::shape(
                "conv2d",
                format!("bias length {} but out_channels {}", b.len(), spec.out_channels),
            ))
        }
        (true, None) => return Err(Error::InvalidArgument("conv2d: spec has_bias but no bias given".into())),
        _ => {}
    }
    let (p, k) = (oh * ow, spec.patch_len());
    let mut out = Tensor::zeros([ishape.n, spec.out_channels, oh, ow]);
    let mut cols = if spec.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; k * p]
    };
    for n in 0..ishape.n {
        let item = input.item(n);
        let b_mat: &[f32] = if spec.is_pointwise() {
            item
        } else {
            im2col(item, ishape.h, ishape.w, spec, oh, ow, &mut cols);
            &cols
        };
        let dst = out.item_mut(n);
        gemm(spec.out_channels, k, p, weight.data(), (k, 1), b_mat, (p, 1), 0.0, dst);
        if let (true, Some(b)) = (spec.has_bias, bias) {
            for (o, &bv) in b.iter().enumerate() {
                dst[o * p..(o + 1) * p].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

/// Gradients of one convolution with respect to its input, weight and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Option<Vec<f32>>,
}

pub fn conv2d_backward(input: &Tensor, weight: &Tensor, spec: &ConvSpec, grad_out: &Tensor) -> Result<ConvGrads> {
    let mut gw = Tensor::zeros(spec.weight_shape());
    let mut gb = spec.has_bias.then(|| vec![0.0; spec.out_channels]);
    let gi = conv2d_backward_accumulate(input, weight, spec, grad_out, gw.data_mut(), gb.as_deref_mut(), true)?
        .expect("input gradient requested");
    Ok(ConvGrads {
        input: gi,
        weight: gw,
        bias: gb,
    })
}

/// Adds the weight (and bias) gradient into the given accumulators and
/// optionally returns the input gradient.
pub fn conv2d_backward_accumulate(
    input: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
    grad_weight: &mut [f32],
    grad_bias: Option<&mut [f32]>,
    want_input_grad: bool,
) -> Result<Option<Tensor>> {
    let ishape = input.shape();
    let (oh, ow) = spec.check_operands(ishape, weight.shape())?;
    let expect = Shape::new(ishape.n, spec.out_channels, oh, ow);
    if grad_out.shape() != expect {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad_out shape {} but forward output is {expect}", grad_out.shape()),
        ));
    }
    if grad_weight.len() != spec.weight_shape().len() {
        return Err(Error::shape("conv2d_backward", "grad_weight buffer length"));
    }
    let (p, k, oc) = (oh * ow, spec.patch_len(), spec.out_channels);
    let pointwise = spec.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![0.0; k * p] };
    let mut grad_cols = if want_input_grad && !pointwise {
        vec![0.0; k * p]
    } else {
        Vec::new()
    };
    let mut grad_in = want_input_grad.then(|| Tensor::zeros(ishape));
    let mut grad_bias = grad_bias;
    if let Some(gb) = grad_bias.as_deref() {
        if gb.len() != oc {
            return Err(Error::shape("conv2d_backward", "grad_bias buffer length"));
        }
    }

    for n in 0..ishape.n {
        let go = grad_out.item(n);
        let item = input.item(n);
        let b_mat: &[f32] = if pointwise {
            item
        } else {
            im2col(item, ishape.h, ishape.w, spec, oh, ow, &mut cols);
            &cols
        };
        // dW += dY (oc × p) · colsᵀ (p × k)
        gemm(oc, p, k, go, (p, 1), b_mat, (1, p), 1.0, grad_weight);
        if let Some(gb) = grad_bias.as_deref_mut() {
            for (o, g) in gb.iter_mut().enumerate() {
                *g += go[o * p..(o + 1) * p].iter().sum::<f32>();
            }
        }
        if let Some(gi) = grad_in.as_mut() {
            // dcols = Wᵀ (k × oc) · dY (oc × p)
            if pointwise {
                gemm(k, oc, p, weight.data(), (1, k), go, (p, 1), 0.0, gi.item_mut(n));
            } else {
                gemm(k, oc, p, weight.data(), (1, k), go, (p, 1), 0.0, &mut grad_cols);
                col2im(&grad_cols, ishape.h, ishape.w, spec, oh, ow, gi.item_mut(n));
            }
        }
    }
    Ok(grad_in)
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Passes `grad_out` where `input > 0`; the subgradient at exactly zero is zero.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape(
            "relu_backward",
            format!("input {} vs grad_out {}", input.shape(), grad_out.shape()),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        let which = if sa.n != sb.n {
            "batch"
        } else if sa.h != sb.h {
            "height"
        } else {
            "width"
        };
        return Err(Error::shape(
            "concat_channels",
            format!("{which} differs: {sa} vs {sb}"),
        ));
    }
    let out_shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let mut data = Vec::with_capacity(out_shape.len());
    for n in 0..sa.n {
        data.extend_from_slice(a.item(n));
        data.extend_from_slice(b.item(n));
    }
    Tensor::from_vec(out_shape, data)
}

/// Inverse of [`concat_channels`]: the first `c_a` channels, then the rest.
pub fn split_channels(t: &Tensor, c_a: usize) -> Result<(Tensor, Tensor)> {
    let s = t.shape();
    if c_a > s.c {
        return Err(Error::shape(
            "split_channels",
            format!("cannot take {c_a} channels from {s}"),
        ));
    }
    let plane = s.plane_len();
    let mut a = Vec::with_capacity(s.n * c_a * plane);
    let mut b = Vec::with_capacity(s.n * (s.c - c_a) * plane);
    for n in 0..s.n {
        let item = t.item(n);
        a.extend_from_slice(&item[..c_a * plane]);
        b.extend_from_slice(&item[c_a * plane..]);
    }
    Ok((
        Tensor::from_vec([s.n, c_a, s.h, s.w], a)?,
        Tensor::from_vec([s.n, s.c - c_a, s.h, s.w], b)?,
    ))
}

/// Moves each `block × block` tile into channels. Output channel
/// `c·block² + dy·block + dx` holds input channel `c` at tile offset `(dy, dx)`.
pub fn space_to_depth(t: &Tensor, block: usize) -> Result<Tensor> {
    let s = t.shape();
    if block == 0 || !s.h.is_multiple_of(block) || !s.w.is_multiple_of(block) {
        return Err(Error::shape(
            "space_to_depth",
            format!("spatial dims {}x{} not divisible by block {block}", s.h, s.w),
        ));
    }
    let (oh, ow) = (s.h / block, s.w / block);
    let mut out = Tensor::zeros([s.n, s.c * block * block, oh, ow]);
    let src = t.data();
    let dst = out.data_mut();
    let mut i = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            for dy in 0..block {
                for dx in 0..block {
                    for oy in 0..oh {
                        let row = ((n * s.c + c) * s.h + oy * block + dy) * s.w;
                        for ox in 0..ow {
                            dst[i] = src[row + ox * block + dx];
                            i += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`space_to_depth`].
pub fn depth_to_space(t: &Tensor, block: usize) -> Result<Tensor> {
    let s = t.shape();
    let bb = block * block;
    if block == 0 || !s.c.is_multiple_of(bb) {
        return Err(Error::shape(
            "depth_to_space",
            format!("channels {} not divisible by block² = {bb}", s.c),
        ));
    }
    let c_out = s.c / bb;
    let (oh, ow) = (s.h * block, s.w * block);
    let mut out = Tensor::zeros([s.n, c_out, oh, ow]);
    let src = t.data();
    let dst = out.data_mut();
    let mut i = 0;
    for n in 0..s.n {
        for c in 0..c_out {
            for dy in 0..block {
                for dx in 0..block {
                    for iy in 0..s.h {
                        let row = ((n * c_out + c) * oh + iy * block + dy) * ow;
                        for ix in 0..s.w {
                            dst[row + ix * block + dx] = src[i];
                            i += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
