//! Full, depthwise, separable and up-convolutions.

use crate::error::{Error, Result};
use crate::real::{gemm, MatRef, Real};
use crate::tensor::{pointwise_backward, pointwise_forward, BackwardRule, Tape, Tensor, Var};

/// Zero padding in pixels on each side of the spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const NONE: Padding = Padding { top: 0, bottom: 0, left: 0, right: 0 };

    /// Padding that keeps the spatial size at stride 1. Even kernels put the
    /// extra pixel on the bottom/right.
    pub fn same(kh: usize, kw: usize) -> Self {
        let (t, l) = ((kh - 1) / 2, (kw - 1) / 2);
        Padding { top: t, bottom: kh - 1 - t, left: l, right: kw - 1 - l }
    }
}

/// Kernel size, stride and padding of a 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub pad: Padding,
}

impl ConvGeom {
    pub fn same(kh: usize, kw: usize) -> Self {
        Self { kh, kw, stride: (1, 1), pad: Padding::same(kh, kw) }
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (sh, sw) = self.stride;
        let ph = h + self.pad.top + self.pad.bottom;
        let pw = w + self.pad.left + self.pad.right;
        if sh == 0 || sw == 0 || ph < self.kh || pw < self.kw {
            return Err(Error::invalid_shape(
                "conv2d",
                format!("{}x{} kernel, stride {:?} does not fit a padded {ph}x{pw} input", self.kh, self.kw, self.stride),
            ));
        }
        Ok(((ph - self.kh) / sh + 1, (pw - self.kw) / sw + 1))
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == (1, 1) && self.pad == Padding::NONE
    }
}

/// Weights of one convolution layer, detached from any tape.
#[derive(Clone, Debug)]
pub struct ConvParams<T: Real = f32> {
    /// `[C_out, C_in, kH, kW]`.
    pub kernel: Tensor<T>,
    /// `[C_out]`.
    pub bias: Option<Tensor<T>>,
    pub stride: (usize, usize),
    pub padding: Padding,
}

impl<T: Real> ConvParams<T> {
    pub fn new(kernel: Tensor<T>, bias: Option<Tensor<T>>, stride: (usize, usize), padding: Padding) -> Result<Self> {
        let ks = kernel.shape();
        if ks.len() != 4 {
            return Err(Error::invalid_shape("conv params", format!("kernel must be rank 4, got {ks:?}")));
        }
        if let Some(b) = &bias {
            if b.shape() != [ks[0]] {
                return Err(Error::shape("conv params bias", ks, b.shape()));
            }
        }
        Ok(Self { kernel, bias, stride, padding })
    }

    /// Stride-1 "same" convolution parameters.
    pub fn same(kernel: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        let (kh, kw) = (kernel.shape().get(2).copied().unwrap_or(1), kernel.shape().get(3).copied().unwrap_or(1));
        Self::new(kernel, bias, (1, 1), Padding::same(kh, kw))
    }

    pub fn geom(&self) -> ConvGeom {
        let ks = self.kernel.shape();
        ConvGeom { kh: ks[2], kw: ks[3], stride: self.stride, pad: self.padding }
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }

    /// Records kernel and bias as trainable leaves and applies the convolution.
    pub fn apply(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.leaf(self.kernel.clone(), true);
        let b = self.bias.as_ref().map(|b| tape.leaf(b.clone(), true));
        conv2d(tape, x, w, b, self.geom())
    }
}

/// Unfolds one `[C, H, W]` sample into a `(C*kh*kw) x (H'*W')` matrix.
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, g: &ConvGeom, oh: usize, ow: usize, col: &mut [T]) {
    let (sh, sw) = g.stride;
    let p = oh * ow;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &mut col[((ci * g.kh + i) * g.kw + j) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * sh + i) as isize - g.pad.top as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * sw + j) as isize - g.pad.left as isize;
                        *d = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters a column matrix back onto a sample, accumulating.
fn col2im<T: Real>(col: &[T], c: usize, h: usize, w: usize, g: &ConvGeom, oh: usize, ow: usize, x: &mut [T]) {
    let (sh, sw) = g.stride;
    let p = oh * ow;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &col[((ci * g.kh + i) * g.kw + j) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * sh + i) as isize - g.pad.top as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * sw + j) as isize - g.pad.left as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn conv_shapes<T: Real>(tape: &Tape<T>, x: Var, w: Var, b: Option<Var>, g: &ConvGeom) -> Result<([usize; 4], usize, (usize, usize))> {
    let xs = tape.value(x).dims4("conv2d")?;
    let ws = tape.shape(w);
    if ws.len() != 4 || ws[1] != xs[1] || ws[2] != g.kh || ws[3] != g.kw {
        return Err(Error::shape("conv2d", tape.shape(x), ws));
    }
    if let Some(b) = b {
        if tape.shape(b) != [ws[0]] {
            return Err(Error::shape("conv2d bias", ws, tape.shape(b)));
        }
    }
    let out = g.output_size(xs[2], xs[3])?;
    Ok((xs, ws[0], out))
}

/// Cross-correlation of `x[N,C,H,W]` with `w[C',C,kH,kW]` plus optional bias.
pub fn conv2d<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Option<Var>, g: ConvGeom) -> Result<Var> {
    let ([n, c, h, wd], co, (oh, ow)) = conv_shapes(tape, x, w, b, &g)?;
    let xv = tape.value(x).data();
    let wv = tape.value(w).data();
    let bv = b.map(|b| tape.value(b).data());
    let data = if g.is_pointwise() {
        pointwise_forward(xv, wv, bv, n, c, co, h * wd)
    } else {
        let k = c * g.kh * g.kw;
        let p = oh * ow;
        let mut col = vec![T::zero(); k * p];
        let mut out = vec![T::zero(); n * co * p];
        for s in 0..n {
            im2col(&xv[s * c * h * wd..(s + 1) * c * h * wd], c, h, wd, &g, oh, ow, &mut col);
            let o = &mut out[s * co * p..(s + 1) * co * p];
            if let Some(bv) = bv {
                for (row, &bias) in o.chunks_mut(p).zip(bv) {
                    row.iter_mut().for_each(|v| *v = bias);
                }
            }
            gemm(T::one(), MatRef::row_major(wv, co, k), MatRef::row_major(&col, k, p), T::one(), o);
        }
        out
    };
    let out = Tensor::new(vec![n, co, oh, ow], data)?;
    let mut inputs = vec![x, w];
    inputs.extend(b);
    Ok(tape.push(out, inputs, ConvRule { geom: g }))
}

struct ConvRule {
    geom: ConvGeom,
}

impl<T: Real> BackwardRule<T> for ConvRule {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>, wants: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let [n, c, h, wd] = x.dims4("conv2d").expect("checked in forward");
        let [_, co, oh, ow] = output.dims4("conv2d").expect("checked in forward");
        let want_b = wants.get(2).copied().unwrap_or(false);
        let g = &self.geom;
        let (gx, gw, gb) = if g.is_pointwise() {
            pointwise_backward(x.data(), w.data(), grad.data(), n, c, co, h * wd, [wants[0], wants[1], want_b])
        } else {
            let k = c * g.kh * g.kw;
            let p = oh * ow;
            let mut gx = wants[0].then(|| vec![T::zero(); x.len()]);
            let mut gw = wants[1].then(|| vec![T::zero(); w.len()]);
            let mut gb = want_b.then(|| vec![T::zero(); co]);
            let mut col = vec![T::zero(); k * p];
            for s in 0..n {
                let go = &grad.data()[s * co * p..(s + 1) * co * p];
                if let Some(gw) = gw.as_mut() {
                    im2col(&x.data()[s * c * h * wd..(s + 1) * c * h * wd], c, h, wd, g, oh, ow, &mut col);
                    gemm(T::one(), MatRef::row_major(go, co, p), MatRef::transposed(&col, k, p), T::one(), gw);
                }
                if let Some(gx) = gx.as_mut() {
                    gemm(T::one(), MatRef::transposed(w.data(), co, k), MatRef::row_major(go, co, p), T::zero(), &mut col);
                    col2im(&col, c, h, wd, g, oh, ow, &mut gx[s * c * h * wd..(s + 1) * c * h * wd]);
                }
                if let Some(gb) = gb.as_mut() {
                    for (acc, row) in gb.iter_mut().zip(go.chunks(p)) {
                        *acc += row.iter().copied().sum::<T>();
                    }
                }
            }
            (gx, gw, gb)
        };
        let mut out = vec![
            gx.map(|d| Tensor::new(x.shape().to_vec(), d).expect("shape")),
            gw.map(|d| Tensor::new(w.shape().to_vec(), d).expect("shape")),
        ];
        if inputs.len() > 2 {
            out.push(gb.map(|d| Tensor::new(vec![co], d).expect("shape")));
        }
        out
    }
}

/// Per-channel spatial convolution with `w[C,1,kH,kW]`, no bias.
pub fn depthwise_conv2d<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, g: ConvGeom) -> Result<Var> {
    let [n, c, h, wd] = tape.value(x).dims4("depthwise_conv2d")?;
    let ws = tape.shape(w);
    if ws.len() != 4 || ws[0] != c || ws[1] != 1 || ws[2] != g.kh || ws[3] != g.kw {
        return Err(Error::shape("depthwise_conv2d", tape.shape(x), ws));
    }
    let (oh, ow) = g.output_size(h, wd)?;
    let xv = tape.value(x).data();
    let wv = tape.value(w).data();
    let mut out = vec![T::zero(); n * c * oh * ow];
    depthwise_loop(&g, [n, c, h, wd], (oh, ow), |xi, wi, oi| out[oi] += xv[xi] * wv[wi]);
    let out = Tensor::new(vec![n, c, oh, ow], out)?;
    Ok(tape.push(out, vec![x, w], DepthwiseRule { geom: g }))
}

/// Visits every (input, weight, output) index triple of a depthwise convolution.
fn depthwise_loop(g: &ConvGeom, [n, c, h, w]: [usize; 4], (oh, ow): (usize, usize), mut f: impl FnMut(usize, usize, usize)) {
    let (sh, sw) = g.stride;
    for s in 0..n {
        for ci in 0..c {
            let xbase = (s * c + ci) * h * w;
            let obase = (s * c + ci) * oh * ow;
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let wi = (ci * g.kh + i) * g.kw + j;
                    for oy in 0..oh {
                        let iy = (oy * sh + i) as isize - g.pad.top as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * sw + j) as isize - g.pad.left as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            f(xbase + iy as usize * w + ix as usize, wi, obase + oy * ow + ox);
                        }
                    }
                }
            }
        }
    }
}

struct DepthwiseRule {
    geom: ConvGeom,
}

impl<T: Real> BackwardRule<T> for DepthwiseRule {
    fn name(&self) -> &'static str {
        "depthwise_conv2d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>, wants: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let dims = x.dims4("depthwise").expect("checked");
        let os = output.shape();
        let g = grad.data();
        let mut gx = wants[0].then(|| vec![T::zero(); x.len()]);
        let mut gw = wants[1].then(|| vec![T::zero(); w.len()]);
        let (xv, wv) = (x.data(), w.data());
        depthwise_loop(&self.geom, dims, (os[2], os[3]), |xi, wi, oi| {
            if let Some(gx) = gx.as_mut() {
                gx[xi] += wv[wi] * g[oi];
            }
            if let Some(gw) = gw.as_mut() {
                gw[wi] += xv[xi] * g[oi];
            }
        });
        vec![
            gx.map(|d| Tensor::new(x.shape().to_vec(), d).expect("shape")),
            gw.map(|d| Tensor::new(w.shape().to_vec(), d).expect("shape")),
        ]
    }
}

/// Depthwise spatial convolution followed by a biased 1x1 channel mix.
///
/// `depthwise` is `[C,1,kH,kW]`, `pointwise` is `[C',C,1,1]`; only the
/// pointwise stage carries a bias.
pub fn sep_conv2d<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    depthwise: Var,
    pointwise: Var,
    bias: Option<Var>,
    g: ConvGeom,
) -> Result<Var> {
    let d = depthwise_conv2d(tape, x, depthwise, g)?;
    conv2d(tape, d, pointwise, bias, ConvGeom { kh: 1, kw: 1, stride: (1, 1), pad: Padding::NONE })
}

/// Trainable scalars of a separable convolution (pointwise bias only).
pub fn sep_conv_param_count(c: usize, c_out: usize, kh: usize, kw: usize) -> usize {
    c * kh * kw + c_out * c + c_out
}

pub fn conv_param_count(c: usize, c_out: usize, kh: usize, kw: usize) -> usize {
    c_out * c * kh * kw + c_out
}

/// Nearest-neighbour upsampling by an integer factor on both spatial axes.
pub fn upsample_nearest<T: Real>(tape: &mut Tape<T>, x: Var, factor: usize) -> Result<Var> {
    let [n, c, h, w] = tape.value(x).dims4("upsample")?;
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be positive".into()));
    }
    if factor == 1 {
        return tape.reshape(x, vec![n, c, h, w]);
    }
    let (oh, ow) = (h * factor, w * factor);
    let xv = tape.value(x).data();
    let mut out = vec![T::zero(); n * c * oh * ow];
    for p in 0..n * c {
        let src = &xv[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            let srow = &src[(oy / factor) * w..(oy / factor + 1) * w];
            for (ox, d) in dst[oy * ow..(oy + 1) * ow].iter_mut().enumerate() {
                *d = srow[ox / factor];
            }
        }
    }
    let out = Tensor::new(vec![n, c, oh, ow], out)?;
    Ok(tape.push(out, vec![x], UpsampleRule { factor }))
}

struct UpsampleRule {
    factor: usize,
}

impl<T: Real> BackwardRule<T> for UpsampleRule {
    fn name(&self) -> &'static str {
        "upsample_nearest"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let [n, c, h, w] = inputs[0].dims4("upsample").expect("checked");
        let f = self.factor;
        let (oh, ow) = (h * f, w * f);
        let mut gx = vec![T::zero(); n * c * h * w];
        for p in 0..n * c {
            let src = &grad.data()[p * oh * ow..(p + 1) * oh * ow];
            let dst = &mut gx[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    dst[(oy / f) * w + ox / f] += src[oy * ow + ox];
                }
            }
        }
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), gx).expect("shape"))]
    }
}

/// Padding of the 2x2 up-convolution: 0 left/top, 1 right/bottom.
pub const UP_CONV_PADDING: Padding = Padding { top: 0, bottom: 1, left: 0, right: 1 };

/// 2x nearest upsampling followed by a 2x2 convolution mapping C to C/2 channels.
pub fn up_conv_2x2<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let [_, c, _, _] = tape.value(x).dims4("up_conv_2x2")?;
    if c % 2 != 0 {
        return Err(Error::invalid_shape("up_conv_2x2", format!("channel count {c} is odd")));
    }
    let ws = tape.shape(w);
    if ws != [c / 2, c, 2, 2] {
        return Err(Error::shape("up_conv_2x2", &[c / 2, c, 2, 2], ws));
    }
    let up = upsample_nearest(tape, x, 2)?;
    conv2d(tape, up, w, b, ConvGeom { kh: 2, kw: 2, stride: (1, 1), pad: UP_CONV_PADDING })
}

/// Mean over non-overlapping `factor x factor` windows.
pub fn avg_pool<T: Real>(tape: &mut Tape<T>, x: Var, factor: usize) -> Result<Var> {
    let [n, c, h, w] = tape.value(x).dims4("avg_pool")?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::invalid_shape("avg_pool", format!("{h}x{w} not divisible by factor {factor}")));
    }
    if factor == 1 {
        return tape.reshape(x, vec![n, c, h, w]);
    }
    let (oh, ow) = (h / factor, w / factor);
    let scale = T::one() / T::lit((factor * factor) as f64);
    let xv = tape.value(x).data();
    let mut out = vec![T::zero(); n * c * oh * ow];
    for p in 0..n * c {
        for y in 0..h {
            for xx in 0..w {
                out[p * oh * ow + (y / factor) * ow + xx / factor] += xv[p * h * w + y * w + xx] * scale;
            }
        }
    }
    let out = Tensor::new(vec![n, c, oh, ow], out)?;
    Ok(tape.push(out, vec![x], AvgPoolRule { factor }))
}

struct AvgPoolRule {
    factor: usize,
}

impl<T: Real> BackwardRule<T> for AvgPoolRule {
    fn name(&self) -> &'static str {
        "avg_pool"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let [n, c, h, w] = inputs[0].dims4("avg_pool").expect("checked");
        let f = self.factor;
        let (oh, ow) = (h / f, w / f);
        let scale = T::one() / T::lit((f * f) as f64);
        let g = grad.data();
        let gx = (0..n * c * h * w)
            .map(|i| {
                let (p, r) = (i / (h * w), i % (h * w));
                g[p * oh * ow + (r / w / f) * ow + (r % w) / f] * scale
            })
            .collect();
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), gx).expect("shape"))]
    }
}
