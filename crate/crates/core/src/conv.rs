//! Grouped, strided, zero-padded 2-D convolution over NCHW tensors.
//!
//! The default path lowers each (batch item, group) pair to a matrix product
//! over an im2col buffer. [`conv2d_forward_direct`] is the plain nested-loop
//! reference kept for cross-checking.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Square kernel, bias on, one group.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
            groups: 1,
            has_bias: true,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("conv spec", reason));
        if self.groups == 0 {
            return bad("groups must be positive".into());
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 {
            return bad("kernel and stride must be positive".into());
        }
        if !self.in_channels.is_multiple_of(self.groups) {
            return bad(format!(
                "in_channels {} not divisible by groups {}",
                self.in_channels, self.groups
            ));
        }
        if !self.out_channels.is_multiple_of(self.groups) {
            return bad(format!(
                "out_channels {} not divisible by groups {}",
                self.out_channels, self.groups
            ));
        }
        Ok(())
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_per_group(), self.kernel_h, self.kernel_w]
    }

    /// Number of weights plus bias entries.
    pub fn param_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + if self.has_bias { self.out_channels } else { 0 }
    }

    /// Output spatial size, or `None` when the padded input is smaller than the kernel.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel_h || pw < self.kernel_w {
            return None;
        }
        Some((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

fn check_operands(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Geometry> {
    spec.validate()?;
    let (n, c, h, w) = input.dims4()?;
    if c != spec.in_channels {
        return Err(Error::shape("conv2d input", "channels", spec.in_channels, c));
    }
    let ws = spec.weight_shape();
    if weight.rank() != 4 {
        return Err(Error::shape("conv2d weight", "rank", 4, weight.rank()));
    }
    for (axis, (&e, &a)) in ["out_channels", "in_channels/groups", "kernel_h", "kernel_w"]
        .iter()
        .zip(ws.iter().zip(weight.shape()))
    {
        if e != a {
            return Err(Error::shape("conv2d weight", *axis, e, a));
        }
    }
    if let Some(b) = bias {
        if b.shape() != [spec.out_channels] {
            return Err(Error::shape("conv2d bias", "length", spec.out_channels, b.numel()));
        }
    }
    let (ho, wo) = spec.output_hw(h, w).ok_or_else(|| {
        Error::invalid(
            "conv2d input",
            format!(
                "{h}x{w} input is smaller than the {}x{} kernel",
                spec.kernel_h, spec.kernel_w
            ),
        )
    })?;
    Ok(Geometry { n, h, w, ho, wo })
}

/// Fills `cols` (K x P, row-major) with the receptive fields of one group of one image.
fn im2col(src: &[f32], channels: usize, g: &Geometry, spec: &ConvSpec, cols: &mut [f32]) {
    let p = g.ho * g.wo;
    let (kh, kw, s, pad) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding as isize);
    for c in 0..channels {
        let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * s) as isize + ky as isize - pad;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let in_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * s) as isize + kx as isize - pad;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            in_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into an image plane set; the adjoint of [`im2col`].
fn col2im(cols: &[f32], channels: usize, g: &Geometry, spec: &ConvSpec, dst: &mut [f32]) {
    let p = g.ho * g.wo;
    let (kh, kw, s, pad) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding as isize);
    for c in 0..channels {
        let plane = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * s) as isize + ky as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * s) as isize + kx as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            plane[base + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Row/column strides of a matrix operand.
#[derive(Clone, Copy)]
struct Layout {
    rs: isize,
    cs: isize,
}

impl Layout {
    fn row_major(cols: usize) -> Self {
        Layout {
            rs: cols as isize,
            cs: 1,
        }
    }

    fn transposed(cols: usize) -> Self {
        Layout {
            rs: 1,
            cs: cols as isize,
        }
    }
}

/// `c = a * b + beta * c` with `a: m x k`, `b: k x n`, `c: m x n` row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], la: Layout, b: &[f32], lb: Layout, beta: f32, c: &mut [f32]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the operand slices cover m*k, k*n and m*n elements under the
    // given strides, which address at most those ranges.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.rs,
            la.cs,
            b.as_ptr(),
            lb.rs,
            lb.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    let g = check_operands(input, weight, bias, spec)?;
    let (cg, og) = (spec.in_per_group(), spec.out_per_group());
    let k = cg * spec.kernel_h * spec.kernel_w;
    let p = g.ho * g.wo;
    let mut out = vec![0.0f32; g.n * spec.out_channels * p];
    let mut cols = vec![0.0f32; k * p];
    let x = input.data();
    let wd = weight.data();
    for b in 0..g.n {
        for grp in 0..spec.groups {
            let src = &x[(b * spec.in_channels + grp * cg) * g.h * g.w..][..cg * g.h * g.w];
            im2col(src, cg, &g, spec, &mut cols);
            let wg = &wd[grp * og * k..(grp + 1) * og * k];
            let dst = &mut out[(b * spec.out_channels + grp * og) * p..][..og * p];
            gemm(
                og,
                k,
                p,
                wg,
                Layout::row_major(k),
                &cols,
                Layout::row_major(p),
                0.0,
                dst,
            );
        }
    }
    if let Some(bias) = bias {
        add_bias(&mut out, bias.data(), g.n, p);
    }
    Tensor::new(&[g.n, spec.out_channels, g.ho, g.wo], out)
}

fn add_bias(out: &mut [f32], bias: &[f32], n: usize, p: usize) {
    let c = bias.len();
    for b in 0..n {
        for (o, &bv) in bias.iter().enumerate() {
            out[(b * c + o) * p..][..p].iter_mut().for_each(|v| *v += bv);
        }
    }
}

/// Reference convolution: one multiply-add per loop iteration, no lowering.
pub fn conv2d_forward_direct(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    spec: &ConvSpec,
) -> Result<Tensor> {
    let g = check_operands(input, weight, bias, spec)?;
    let (cg, og) = (spec.in_per_group(), spec.out_per_group());
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let x = input.data();
    let wd = weight.data();
    let mut out = Tensor::zeros(&[g.n, spec.out_channels, g.ho, g.wo]);
    let od = out.data_mut();
    for b in 0..g.n {
        for o in 0..spec.out_channels {
            let grp = o / og;
            let bv = bias.map_or(0.0, |t| t.data()[o]);
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let mut acc = 0.0f32;
                    for ci in 0..cg {
                        let c = grp * cg + ci;
                        for ky in 0..kh {
                            let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                                if ix < 0 || ix >= g.w as isize {
                                    continue;
                                }
                                let xv = x[((b * spec.in_channels + c) * g.h + iy as usize) * g.w + ix as usize];
                                let wv = wd[((o * cg + ci) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    od[((b * spec.out_channels + o) * g.ho + oy) * g.wo + ox] = acc + bv;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a convolution with respect to its input, weight and bias.
///
/// `grad_bias` is all zeros when `spec.has_bias` is false.
pub fn conv2d_backward(grad_out: &Tensor, saved_input: &Tensor, weight: &Tensor, spec: &ConvSpec) -> Result<ConvGrads> {
    let g = check_operands(saved_input, weight, None, spec)?;
    let expected = [g.n, spec.out_channels, g.ho, g.wo];
    if grad_out.rank() != 4 {
        return Err(Error::shape("conv2d grad_out", "rank", 4, grad_out.rank()));
    }
    for (axis, (&e, &a)) in ["batch", "channels", "height", "width"]
        .iter()
        .zip(expected.iter().zip(grad_out.shape()))
    {
        if e != a {
            return Err(Error::shape("conv2d grad_out", *axis, e, a));
        }
    }
    let (cg, og) = (spec.in_per_group(), spec.out_per_group());
    let k = cg * spec.kernel_h * spec.kernel_w;
    let p = g.ho * g.wo;
    let gy = grad_out.data();
    let x = saved_input.data();
    let wd = weight.data();

    let mut gx = vec![0.0f32; saved_input.numel()];
    let mut gw = vec![0.0f32; weight.numel()];
    let mut gb = vec![0.0f32; spec.out_channels];
    let mut cols = vec![0.0f32; k * p];
    let mut gcols = vec![0.0f32; k * p];

    for b in 0..g.n {
        for grp in 0..spec.groups {
            let in_off = (b * spec.in_channels + grp * cg) * g.h * g.w;
            let src = &x[in_off..][..cg * g.h * g.w];
            im2col(src, cg, &g, spec, &mut cols);
            let gy_g = &gy[(b * spec.out_channels + grp * og) * p..][..og * p];
            // dW_g += dY_g * cols^T
            gemm(
                og,
                p,
                k,
                gy_g,
                Layout::row_major(p),
                &cols,
                Layout::transposed(p),
                1.0,
                &mut gw[grp * og * k..(grp + 1) * og * k],
            );
            // dcols = W_g^T * dY_g
            let wg = &wd[grp * og * k..(grp + 1) * og * k];
            gemm(
                k,
                og,
                p,
                wg,
                Layout::transposed(k),
                gy_g,
                Layout::row_major(p),
                0.0,
                &mut gcols,
            );
            col2im(&gcols, cg, &g, spec, &mut gx[in_off..in_off + cg * g.h * g.w]);
        }
        if spec.has_bias {
            for (o, acc) in gb.iter_mut().enumerate() {
                *acc += gy[(b * spec.out_channels + o) * p..][..p].iter().sum::<f32>();
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(saved_input.shape(), gx)?,
        weight: Tensor::new(weight.shape(), gw)?,
        bias: Tensor::new(&[spec.out_channels], gb)?,
    })
}
