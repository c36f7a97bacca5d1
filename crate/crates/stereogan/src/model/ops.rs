//! Low-level differentiable building blocks.
//!
//! Feature maps are (C, H, W). Convolutions go through im2col + GEMM; the
//! backward passes are the exact adjoints of the forward gathers/scatters.
//! Forward paths are generic over `f32`/`f64` so that reference computations
//! (finite differences) can run in double precision against the same code.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView4, NdFloat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PadMode {
    Zero,
    Reflect,
}

fn reflect_index(i: isize, n: usize) -> usize {
    // Mirror without repeating the edge sample, e.g. -1 -> 1, n -> n-2.
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    debug_assert!((0..n).contains(&r));
    r as usize
}

pub(crate) fn pad2d<F: NdFloat>(x: &Array3<F>, p: usize, mode: PadMode) -> Array3<F> {
    if p == 0 {
        return x.clone();
    }
    let (c, h, w) = x.dim();
    let mut out = Array3::zeros((c, h + 2 * p, w + 2 * p));
    match mode {
        PadMode::Zero => {
            out.slice_mut(s![.., p..p + h, p..p + w]).assign(x);
        }
        PadMode::Reflect => {
            assert!(p < h && p < w, "reflection pad {p} needs dims > {p}");
            for ci in 0..c {
                for oy in 0..h + 2 * p {
                    let sy = reflect_index(oy as isize - p as isize, h);
                    for ox in 0..w + 2 * p {
                        let sx = reflect_index(ox as isize - p as isize, w);
                        out[[ci, oy, ox]] = x[[ci, sy, sx]];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`pad2d`]: folds gradients at padded positions back onto the
/// source pixels they were read from.
pub(crate) fn pad2d_backward(g: &Array3<f32>, p: usize, mode: PadMode) -> Array3<f32> {
    if p == 0 {
        return g.clone();
    }
    let (c, hp, wp) = g.dim();
    let (h, w) = (hp - 2 * p, wp - 2 * p);
    match mode {
        PadMode::Zero => g.slice(s![.., p..p + h, p..p + w]).to_owned(),
        PadMode::Reflect => {
            let mut out = Array3::zeros((c, h, w));
            for ci in 0..c {
                for oy in 0..hp {
                    let sy = reflect_index(oy as isize - p as isize, h);
                    for ox in 0..wp {
                        let sx = reflect_index(ox as isize - p as isize, w);
                        out[[ci, sy, sx]] += g[[ci, oy, ox]];
                    }
                }
            }
            out
        }
    }
}

/// Gathers k x k patches of a (pre-padded) map into a (C*k*k, OH*OW) matrix.
pub(crate) fn im2col<F: NdFloat>(x: &Array3<F>, k: usize, stride: usize) -> Array2<F> {
    let (c, h, w) = x.dim();
    assert!(h >= k && w >= k, "input {h}x{w} smaller than kernel {k}");
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut cols = Array2::zeros((c * k * k, oh * ow));
    for ci in 0..c {
        for di in 0..k {
            for dj in 0..k {
                let row = (ci * k + di) * k + dj;
                let mut dst = cols.row_mut(row);
                let dst = dst.as_slice_mut().expect("row is contiguous");
                for i in 0..oh {
                    let src = x.slice(s![ci, i * stride + di, ..]);
                    let src = src.as_slice().expect("map row is contiguous");
                    let base = i * ow;
                    for j in 0..ow {
                        dst[base + j] = src[j * stride + dj];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch columns back into a (C, H, W)
/// map. `h`/`w` give the target (padded) size.
pub(crate) fn col2im(cols: &Array2<f32>, c: usize, h: usize, w: usize, k: usize, stride: usize) -> Array3<f32> {
    scatter_cols(cols, c, h, w, k, stride)
}

fn as_matrix<F: NdFloat>(w: &ArrayView4<'_, F>, rows: usize, cols: usize) -> Array2<F> {
    w.to_owned()
        .into_shape_with_order((rows, cols))
        .expect("weight is standard layout")
}

/// GEMM outputs are not guaranteed standard layout for degenerate shapes
/// (e.g. an inner dimension of 1); normalize before reshaping or taking
/// row slices.
fn ensure_standard<F: NdFloat>(a: Array2<F>) -> Array2<F> {
    if a.is_standard_layout() {
        a
    } else {
        let dim = a.raw_dim();
        Array2::from_shape_vec(dim, a.iter().cloned().collect()).expect("shape matches length")
    }
}

/// Convolution forward on a pre-padded input is `W_mat . im2col(x)`.
pub(crate) fn conv2d_fwd<F: NdFloat>(
    x: &Array3<F>,
    w: &ArrayView4<'_, F>,
    b: &ndarray::ArrayView1<'_, F>,
    stride: usize,
    pad: usize,
    mode: PadMode,
) -> (Array3<F>, Array3<F>) {
    let (o, i, k, _k) = w.dim();
    let xp = pad2d(x, pad, mode);
    let (ci, hp, wp) = xp.dim();
    debug_assert_eq!(ci, i);
    let oh = (hp - k) / stride + 1;
    let ow = (wp - k) / stride + 1;
    let cols = im2col(&xp, k, stride);
    let w2 = as_matrix(w, o, i * k * k);
    let mut y2 = ensure_standard(w2.dot(&cols));
    for (mut row, &bias) in y2.rows_mut().into_iter().zip(b.iter()) {
        row += bias;
    }
    let y = y2
        .into_shape_with_order((o, oh, ow))
        .expect("gemm output is standard layout");
    (y, xp)
}

/// Gradient of a convolution w.r.t. its (unpadded) input.
pub(crate) fn conv2d_bwd_input(
    w: &ArrayView4<'_, f32>,
    stride: usize,
    pad: usize,
    mode: PadMode,
    padded_hw: (usize, usize),
    grad_out: &Array3<f32>,
) -> Array3<f32> {
    let (o, i, k, _) = w.dim();
    let (hp, wp) = padded_hw;
    let (go_c, oh, ow) = grad_out.dim();
    debug_assert_eq!(go_c, o);
    let go2 = grad_out
        .to_owned()
        .into_shape_with_order((o, oh * ow))
        .expect("grad is standard layout");
    let w2 = as_matrix(w, o, i * k * k);
    let gcols = ensure_standard(w2.t().dot(&go2));
    let gxp = col2im(&gcols, i, hp, wp, k, stride);
    pad2d_backward(&gxp, pad, mode)
}

/// Gradient of a convolution w.r.t. its weight and bias.
pub(crate) fn conv2d_bwd_params(
    x_padded: &Array3<f32>,
    w_shape: (usize, usize, usize, usize),
    stride: usize,
    grad_out: &Array3<f32>,
) -> (Array4<f32>, Array1<f32>) {
    let (o, i, k, _) = w_shape;
    let (go_c, oh, ow) = grad_out.dim();
    debug_assert_eq!(go_c, o);
    let go2 = grad_out
        .to_owned()
        .into_shape_with_order((o, oh * ow))
        .expect("grad is standard layout");
    let gb = go2.sum_axis(ndarray::Axis(1));
    let cols = im2col(x_padded, k, stride);
    let gw2 = ensure_standard(go2.dot(&cols.t()));
    let gw = gw2
        .into_shape_with_order((o, i, k, k))
        .expect("gemm output is standard layout");
    (gw, gb)
}

/// Transposed convolution (weight laid out as (in, out, k, k)).
///
/// Output size is `(H-1)*stride - 2*pad + k + out_pad`; requires
/// `out_pad <= pad` so the scatter extent covers the cropped window.
pub(crate) fn convt2d_fwd<F: NdFloat>(
    x: &Array3<F>,
    w: &ArrayView4<'_, F>,
    b: &ndarray::ArrayView1<'_, F>,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Array3<F> {
    let (i, o, k, _) = w.dim();
    let (ci, h, wd) = x.dim();
    debug_assert_eq!(ci, i);
    assert!(out_pad <= pad, "out_pad {out_pad} must not exceed pad {pad}");
    let x2 = x
        .to_owned()
        .into_shape_with_order((i, h * wd))
        .expect("map is standard layout");
    let w2 = as_matrix(w, i, o * k * k);
    let cols = ensure_standard(w2.t().dot(&x2)); // (O*k*k, H*W)
    // Scatter into the full extent, then crop the padding ring.
    let hf = (h - 1) * stride + k;
    let wf = (wd - 1) * stride + k;
    let full = scatter_cols(&cols, o, hf, wf, k, stride);
    let oh = (h - 1) * stride + k + out_pad - 2 * pad;
    let ow = (wd - 1) * stride + k + out_pad - 2 * pad;
    let mut y = full.slice(s![.., pad..pad + oh, pad..pad + ow]).to_owned();
    for (mut ch, &bias) in y.outer_iter_mut().zip(b.iter()) {
        ch += bias;
    }
    y
}

// col2im generalized over the element type (keeps f32 col2im the fast path).
fn scatter_cols<F: NdFloat>(cols: &Array2<F>, c: usize, h: usize, w: usize, k: usize, stride: usize) -> Array3<F> {
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    debug_assert_eq!(cols.dim(), (c * k * k, oh * ow));
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        for di in 0..k {
            for dj in 0..k {
                let row = (ci * k + di) * k + dj;
                let src = cols.row(row);
                let src = src.as_slice().expect("row is contiguous");
                for i in 0..oh {
                    let mut dst = out.slice_mut(s![ci, i * stride + di, ..]);
                    let dst = dst.as_slice_mut().expect("map row is contiguous");
                    let base = i * ow;
                    for j in 0..ow {
                        dst[j * stride + dj] += src[base + j];
                    }
                }
            }
        }
    }
    out
}

pub(crate) struct ConvTGrad {
    pub gx: Array3<f32>,
    pub gw: Array4<f32>,
    pub gb: Array1<f32>,
}

pub(crate) fn convt2d_bwd(
    x: &Array3<f32>,
    w: &ArrayView4<'_, f32>,
    stride: usize,
    pad: usize,
    grad_out: &Array3<f32>,
) -> ConvTGrad {
    let (i, o, k, _) = w.dim();
    let (_, h, wd) = x.dim();
    let (go_c, oh, ow) = grad_out.dim();
    debug_assert_eq!(go_c, o);
    let gb = grad_out
        .to_owned()
        .into_shape_with_order((o, oh * ow))
        .expect("grad is standard layout")
        .sum_axis(ndarray::Axis(1));
    // Undo the crop: place grad_out back into the full scatter extent.
    let hf = (h - 1) * stride + k;
    let wf = (wd - 1) * stride + k;
    let mut gfull = Array3::zeros((o, hf, wf));
    gfull
        .slice_mut(s![.., pad..pad + oh, pad..pad + ow])
        .assign(grad_out);
    let gcols = im2col(&gfull, k, stride); // (O*k*k, H*W)
    let w2 = as_matrix(w, i, o * k * k);
    let gx2 = ensure_standard(w2.dot(&gcols));
    let gx = gx2
        .into_shape_with_order((i, h, wd))
        .expect("gemm output is standard layout");
    let x2 = x
        .to_owned()
        .into_shape_with_order((i, h * wd))
        .expect("map is standard layout");
    let gw2 = ensure_standard(x2.dot(&gcols.t()));
    let gw = gw2
        .into_shape_with_order((i, o, k, k))
        .expect("gemm output is standard layout");
    ConvTGrad { gx, gw, gb }
}

pub(crate) const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-channel normalization over the spatial extent of a single image,
/// with learned scale/shift. Statistics accumulate in f64.
pub(crate) fn instance_norm_fwd<F: NdFloat>(
    x: &Array3<F>,
    gamma: &ndarray::ArrayView1<'_, F>,
    beta: &ndarray::ArrayView1<'_, F>,
) -> Array3<F> {
    let (c, h, w) = x.dim();
    let n = (h * w) as f64;
    let mut y = Array3::zeros((c, h, w));
    for ci in 0..c {
        let ch = x.slice(s![ci, .., ..]);
        let mean: f64 = ch.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / n;
        let var: f64 = ch
            .iter()
            .map(|v| {
                let d = v.to_f64().unwrap() - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        let inv_std = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
        let g = gamma[ci].to_f64().unwrap();
        let b = beta[ci].to_f64().unwrap();
        let mut yc = y.slice_mut(s![ci, .., ..]);
        for (o, v) in yc.iter_mut().zip(ch.iter()) {
            let xhat = (v.to_f64().unwrap() - mean) * inv_std;
            *o = F::from(g * xhat + b).unwrap();
        }
    }
    y
}

pub(crate) struct InCache {
    pub xhat: Array3<f32>,
    pub inv_std: Array1<f32>,
}

pub(crate) fn instance_norm_fwd_cached(
    x: &Array3<f32>,
    gamma: &ndarray::ArrayView1<'_, f32>,
    beta: &ndarray::ArrayView1<'_, f32>,
) -> (Array3<f32>, InCache) {
    let (c, h, w) = x.dim();
    let n = (h * w) as f64;
    let mut y = Array3::zeros((c, h, w));
    let mut xhat = Array3::zeros((c, h, w));
    let mut inv_std = Array1::zeros(c);
    for ci in 0..c {
        let ch = x.slice(s![ci, .., ..]);
        let mean: f64 = ch.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 = ch.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let istd = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
        inv_std[ci] = istd as f32;
        let (g, b) = (gamma[ci], beta[ci]);
        let mut yc = y.slice_mut(s![ci, .., ..]);
        let mut hc = xhat.slice_mut(s![ci, .., ..]);
        for ((o, hh), &v) in yc.iter_mut().zip(hc.iter_mut()).zip(ch.iter()) {
            let xn = ((v as f64 - mean) * istd) as f32;
            *hh = xn;
            *o = g * xn + b;
        }
    }
    (y, InCache { xhat, inv_std })
}

pub(crate) struct InGrad {
    pub gx: Array3<f32>,
    pub ggamma: Array1<f32>,
    pub gbeta: Array1<f32>,
}

pub(crate) fn instance_norm_bwd(
    cache: &InCache,
    gamma: &ndarray::ArrayView1<'_, f32>,
    grad_out: &Array3<f32>,
) -> InGrad {
    let (c, h, w) = grad_out.dim();
    let n = (h * w) as f64;
    let mut gx = Array3::zeros((c, h, w));
    let mut ggamma = Array1::zeros(c);
    let mut gbeta = Array1::zeros(c);
    for ci in 0..c {
        let dy = grad_out.slice(s![ci, .., ..]);
        let xh = cache.xhat.slice(s![ci, .., ..]);
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for (&d, &xv) in dy.iter().zip(xh.iter()) {
            sum_dy += d as f64;
            sum_dy_xhat += d as f64 * xv as f64;
        }
        gbeta[ci] = sum_dy as f32;
        ggamma[ci] = sum_dy_xhat as f32;
        let g = gamma[ci] as f64;
        let istd = cache.inv_std[ci] as f64;
        // dxhat = g*dy; dx = istd*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
        let mean_dxhat = g * sum_dy / n;
        let mean_dxhat_xhat = g * sum_dy_xhat / n;
        let mut gxc = gx.slice_mut(s![ci, .., ..]);
        for ((o, &d), &xv) in gxc.iter_mut().zip(dy.iter()).zip(xh.iter()) {
            let dxhat = g * d as f64;
            *o = (istd * (dxhat - mean_dxhat - xv as f64 * mean_dxhat_xhat)) as f32;
        }
    }
    InGrad { gx, ggamma, gbeta }
}

pub(crate) fn relu_fwd<F: NdFloat>(x: &Array3<F>) -> Array3<F> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

/// Backward through ReLU given the forward *output*.
pub(crate) fn relu_bwd(y: &Array3<f32>, grad_out: &Array3<f32>) -> Array3<f32> {
    let mut g = grad_out.clone();
    g.zip_mut_with(y, |gv, &yv| {
        if yv <= 0.0 {
            *gv = 0.0;
        }
    });
    g
}

pub(crate) fn leaky_relu_fwd<F: NdFloat>(x: &Array3<F>, slope: f64) -> Array3<F> {
    let a = F::from(slope).unwrap();
    x.mapv(|v| if v > F::zero() { v } else { v * a })
}

pub(crate) fn leaky_relu_bwd(y: &Array3<f32>, slope: f32, grad_out: &Array3<f32>) -> Array3<f32> {
    let mut g = grad_out.clone();
    g.zip_mut_with(y, |gv, &yv| {
        if yv <= 0.0 {
            *gv *= slope;
        }
    });
    g
}

pub(crate) fn tanh_fwd<F: NdFloat>(x: &Array3<F>) -> Array3<F> {
    x.mapv(|v| v.tanh())
}

/// Backward through tanh given the forward output.
pub(crate) fn tanh_bwd(y: &Array3<f32>, grad_out: &Array3<f32>) -> Array3<f32> {
    let mut g = grad_out.clone();
    g.zip_mut_with(y, |gv, &yv| {
        *gv *= 1.0 - yv * yv;
    });
    g
}

pub(crate) fn concat_channels<F: NdFloat>(a: &Array3<F>, b: &Array3<F>) -> Array3<F> {
    ndarray::concatenate(ndarray::Axis(0), &[a.view(), b.view()])
        .expect("matching spatial dims")
}

pub(crate) fn split_channels(g: &Array3<f32>, c_first: usize) -> (Array3<f32>, Array3<f32>) {
    let first = g.slice(s![..c_first, .., ..]).to_owned();
    let second = g.slice(s![c_first.., .., ..]).to_owned();
    (first, second)
}

/// Mean over all elements of a single-channel map, with f64 accumulation.
pub(crate) fn global_mean<F: NdFloat>(x: &Array3<F>) -> F {
    let sum: f64 = x.iter().map(|v| v.to_f64().unwrap()).sum();
    F::from(sum / x.len() as f64).unwrap()
}

pub(crate) fn global_mean_bwd(shape: (usize, usize, usize), grad: f32) -> Array3<f32> {
    let n = (shape.0 * shape.1 * shape.2) as f32;
    Array3::from_elem(shape, grad / n)
}
