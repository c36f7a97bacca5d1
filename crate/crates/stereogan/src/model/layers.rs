//! Parameterized layers and the composite blocks used by both networks.
//!
//! Layers hold handles into a [`ParamStore`] rather than owning arrays, so
//! the same layer description can run against the live f32 store or an f64
//! copy of it. Cached forward passes return exactly what their backward
//! needs and nothing else.

use ndarray::{Array3, NdFloat};
use rand::Rng;

use super::ops::{self, InCache, PadMode};
use super::params::{init_conv_weight, init_ones, init_zeros, Grads, ParamId, ParamStore};

pub(crate) const LEAKY_SLOPE: f64 = 0.2;

/// A conv feeding an affine instance norm carries no bias: the norm's mean
/// subtraction makes it a dead parameter and beta already provides the
/// learned shift.
#[derive(Debug, Clone)]
pub(crate) struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub mode: PadMode,
    pub out_c: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng>(
        ps: &mut ParamStore<f32>,
        rng: &mut R,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        mode: PadMode,
        with_bias: bool,
    ) -> Self {
        let w = ps.register(
            &format!("{name}.weight"),
            init_conv_weight(rng, (out_c, in_c, k, k)).into_dyn(),
        );
        let b = with_bias.then(|| ps.register(&format!("{name}.bias"), init_zeros(out_c).into_dyn()));
        Conv2d {
            w,
            b,
            k,
            stride,
            pad,
            mode,
            out_c,
        }
    }

    fn bias_view<'a, F: NdFloat>(&self, ps: &'a ParamStore<F>) -> ndarray::CowArray<'a, F, ndarray::Ix1> {
        match self.b {
            Some(b) => ps.get1(b).into(),
            None => ndarray::Array1::zeros(self.out_c).into(),
        }
    }

    pub fn forward<F: NdFloat>(&self, ps: &ParamStore<F>, x: &Array3<F>) -> Array3<F> {
        let bias = self.bias_view(ps);
        ops::conv2d_fwd(x, &ps.get4(self.w), &bias.view(), self.stride, self.pad, self.mode).0
    }

    pub fn forward_cached(&self, ps: &ParamStore<f32>, x: &Array3<f32>) -> (Array3<f32>, Array3<f32>) {
        let bias = self.bias_view(ps);
        ops::conv2d_fwd(x, &ps.get4(self.w), &bias.view(), self.stride, self.pad, self.mode)
    }

    /// Input gradient always; parameter gradients only when `grads` given.
    pub fn backward(
        &self,
        ps: &ParamStore<f32>,
        x_padded: &Array3<f32>,
        grad_out: &Array3<f32>,
        grads: Option<&mut Grads>,
    ) -> Array3<f32> {
        let w = ps.get4(self.w);
        if let Some(grads) = grads {
            let (gw, gb) = ops::conv2d_bwd_params(x_padded, w.dim(), self.stride, grad_out);
            grads.accumulate(self.w, &gw.into_dyn().view());
            if let Some(b) = self.b {
                grads.accumulate(b, &gb.into_dyn().view());
            }
        }
        let (_, hp, wp) = x_padded.dim();
        ops::conv2d_bwd_input(&w, self.stride, self.pad, self.mode, (hp, wp), grad_out)
    }
}

/// Transposed convs here always feed an instance norm, so they carry no
/// bias either.
#[derive(Debug, Clone)]
pub(crate) struct ConvT2d {
    pub w: ParamId,
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
    pub out_c: usize,
}

impl ConvT2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng>(
        ps: &mut ParamStore<f32>,
        rng: &mut R,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Self {
        assert!(out_pad <= pad);
        let w = ps.register(
            &format!("{name}.weight"),
            init_conv_weight(rng, (in_c, out_c, k, k)).into_dyn(),
        );
        ConvT2d {
            w,
            stride,
            pad,
            out_pad,
            out_c,
        }
    }

    pub fn forward<F: NdFloat>(&self, ps: &ParamStore<F>, x: &Array3<F>) -> Array3<F> {
        let zero_bias = ndarray::Array1::<F>::zeros(self.out_c);
        ops::convt2d_fwd(x, &ps.get4(self.w), &zero_bias.view(), self.stride, self.pad, self.out_pad)
    }

    pub fn backward(
        &self,
        ps: &ParamStore<f32>,
        x: &Array3<f32>,
        grad_out: &Array3<f32>,
        grads: Option<&mut Grads>,
    ) -> Array3<f32> {
        let g = ops::convt2d_bwd(x, &ps.get4(self.w), self.stride, self.pad, grad_out);
        if let Some(grads) = grads {
            grads.accumulate(self.w, &g.gw.into_dyn().view());
        }
        g.gx
    }
}

#[derive(Debug, Clone)]
pub(crate) struct InstanceNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl InstanceNorm {
    pub fn init(ps: &mut ParamStore<f32>, name: &str, c: usize) -> Self {
        let gamma = ps.register(&format!("{name}.gamma"), init_ones(c).into_dyn());
        let beta = ps.register(&format!("{name}.beta"), init_zeros(c).into_dyn());
        InstanceNorm { gamma, beta }
    }

    pub fn forward<F: NdFloat>(&self, ps: &ParamStore<F>, x: &Array3<F>) -> Array3<F> {
        ops::instance_norm_fwd(x, &ps.get1(self.gamma), &ps.get1(self.beta))
    }

    pub fn forward_cached(&self, ps: &ParamStore<f32>, x: &Array3<f32>) -> (Array3<f32>, InCache) {
        ops::instance_norm_fwd_cached(x, &ps.get1(self.gamma), &ps.get1(self.beta))
    }

    pub fn backward(
        &self,
        ps: &ParamStore<f32>,
        cache: &InCache,
        grad_out: &Array3<f32>,
        grads: Option<&mut Grads>,
    ) -> Array3<f32> {
        let g = ops::instance_norm_bwd(cache, &ps.get1(self.gamma), grad_out);
        if let Some(grads) = grads {
            grads.accumulate(self.gamma, &g.ggamma.into_dyn().view());
            grads.accumulate(self.beta, &g.gbeta.into_dyn().view());
        }
        g.gx
    }
}

/// conv -> instance norm -> ReLU, the generator's stem/downsampling unit.
#[derive(Debug, Clone)]
pub(crate) struct ConvNormRelu {
    pub conv: Conv2d,
    pub norm: InstanceNorm,
}

pub(crate) struct ConvNormReluCache {
    x_padded: Array3<f32>,
    norm: InCache,
    y: Array3<f32>,
}

impl ConvNormRelu {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng>(
        ps: &mut ParamStore<f32>,
        rng: &mut R,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        mode: PadMode,
    ) -> Self {
        let conv = Conv2d::init(ps, rng, &format!("{name}.conv"), in_c, out_c, k, stride, pad, mode, false);
        let norm = InstanceNorm::init(ps, &format!("{name}.norm"), out_c);
        ConvNormRelu { conv, norm }
    }

    pub fn forward<F: NdFloat>(&self, ps: &ParamStore<F>, x: &Array3<F>) -> Array3<F> {
        ops::relu_fwd(&self.norm.forward(ps, &self.conv.forward(ps, x)))
    }

    pub fn forward_cached(&self, ps: &ParamStore<f32>, x: &Array3<f32>) -> (Array3<f32>, ConvNormReluCache) {
        let (z, x_padded) = self.conv.forward_cached(ps, x);
        let (n, norm) = self.norm.forward_cached(ps, &z);
        let y = ops::relu_fwd(&n);
        (y.clone(), ConvNormReluCache { x_padded, norm, y })
    }

    pub fn backward(
        &self,
        ps: &ParamStore<f32>,
        cache: &ConvNormReluCache,
        grad_out: &Array3<f32>,
        mut grads: Option<&mut Grads>,
    ) -> Array3<f32> {
        let g = ops::relu_bwd(&cache.y, grad_out);
        let g = self.norm.backward(ps, &cache.norm, &g, grads.as_deref_mut());
        self.conv.backward(ps, &cache.x_padded, &g, grads)
    }
}

/// Transposed conv -> instance norm -> ReLU, the generator's upsampling unit.
#[derive(Debug, Clone)]
pub(crate) struct DeconvNormRelu {
    pub deconv: ConvT2d,
    pub norm: InstanceNorm,
}

pub(crate) struct DeconvNormReluCache {
    x: Array3<f32>,
    norm: InCache,
    y: Array3<f32>,
}

impl DeconvNormRelu {
    pub fn init<R: Rng>(
        ps: &mut ParamStore<f32>,
        rng: &mut R,
        name: &str,
        in_c: usize,
        out_c: usize,
    ) -> Self {
        // 3x3 stride-2 with symmetric padding doubles each spatial dim.
        let deconv = ConvT2d::init(ps, rng, &format!("{name}.deconv"), in_c, out_c, 3, 2, 1, 1);
        let norm = InstanceNorm::init(ps, &format!("{name}.norm"), out_c);
        DeconvNormRelu { deconv, norm }
    }

    pub fn forward<F: NdFloat>(&self, ps: &ParamStore<F>, x: &Array3<F>) -> Array3<F> {
        ops::relu_fwd(&self.norm.forward(ps, &self.deconv.forward(ps, x)))
    }

    pub fn forward_cached(&self, ps: &ParamStore<f32>, x: &Array3<f32>) -> (Array3<f32>, DeconvNormReluCache) {
        let z = self.deconv.forward(ps, x);
        let (n, norm) = self.norm.forward_cached(ps, &z);
        let y = ops::relu_fwd(&n);
        (
            y.clone(),
            DeconvNormReluCache {
                x: x.clone(),
                norm,
                y,
            },
        )
    }

    pub fn backward(
        &self,
        ps: &ParamStore<f32>,
        cache: &DeconvNormReluCache,
        grad_out: &Array3<f32>,
        mut grads: Option<&mut Grads>,
    ) -> Array3<f32> {
        let g = ops::relu_bwd(&cache.y, grad_out);
        let g = self.norm.backward(ps, &cache.norm, &g, grads.as_deref_mut());
        self.deconv.backward(ps, &cache.x, &g, grads)
    }
}

/// Residual block: reflect-padded 3x3 conv + IN + ReLU, second conv + IN,
/// then the skip connection (no activation after the add).
#[derive(Debug, Clone)]
pub(crate) struct ResBlock {
    conv1: Conv2d,
    norm1: InstanceNorm,
    conv2: Conv2d,
    norm2: InstanceNorm,
}

pub(crate) struct ResBlockCache {
    x1_padded: Array3<f32>,
    norm1: InCache,
    relu_y: Array3<f32>,
    x2_padded: Array3<f32>,
    norm2: InCache,
}

impl ResBlock {
    pub fn init<R: Rng>(ps: &mut ParamStore<f32>, rng: &mut R, name: &str, c: usize) -> Self {
        let conv1 = Conv2d::init(ps, rng, &format!("{name}.conv1"), c, c, 3, 1, 1, PadMode::Reflect, false);
        let norm1 = InstanceNorm::init(ps, &format!("{name}.norm1"), c);
        let conv2 = Conv2d::init(ps, rng, &format!("{name}.conv2"), c, c, 3, 1, 1, PadMode::Reflect, false);
        let norm2 = InstanceNorm::init(ps, &format!("{name}.norm2"), c);
        ResBlock {
            conv1,
            norm1,
            conv2,
            norm2,
        }
    }

    pub fn forward<F: NdFloat>(&self, ps: &ParamStore<F>, x: &Array3<F>) -> Array3<F> {
        let h = ops::relu_fwd(&self.norm1.forward(ps, &self.conv1.forward(ps, x)));
        let r = self.norm2.forward(ps, &self.conv2.forward(ps, &h));
        x + &r
    }

    pub fn forward_cached(&self, ps: &ParamStore<f32>, x: &Array3<f32>) -> (Array3<f32>, ResBlockCache) {
        let (z1, x1_padded) = self.conv1.forward_cached(ps, x);
        let (n1, norm1) = self.norm1.forward_cached(ps, &z1);
        let relu_y = ops::relu_fwd(&n1);
        let (z2, x2_padded) = self.conv2.forward_cached(ps, &relu_y);
        let (n2, norm2) = self.norm2.forward_cached(ps, &z2);
        let y = x + &n2;
        (
            y,
            ResBlockCache {
                x1_padded,
                norm1,
                relu_y,
                x2_padded,
                norm2,
            },
        )
    }

    pub fn backward(
        &self,
        ps: &ParamStore<f32>,
        cache: &ResBlockCache,
        grad_out: &Array3<f32>,
        mut grads: Option<&mut Grads>,
    ) -> Array3<f32> {
        let g = self.norm2.backward(ps, &cache.norm2, grad_out, grads.as_deref_mut());
        let g = self.conv2.backward(ps, &cache.x2_padded, &g, grads.as_deref_mut());
        let g = ops::relu_bwd(&cache.relu_y, &g);
        let g = self.norm1.backward(ps, &cache.norm1, &g, grads.as_deref_mut());
        let g = self.conv1.backward(ps, &cache.x1_padded, &g, grads);
        g + grad_out // skip connection
    }
}

/// Discriminator unit: 4x4 stride-2 conv, optional IN, leaky ReLU.
#[derive(Debug, Clone)]
pub(crate) struct DiscBlock {
    pub conv: Conv2d,
    pub norm: Option<InstanceNorm>,
}

pub(crate) struct DiscBlockCache {
    x_padded: Array3<f32>,
    norm: Option<InCache>,
    y: Array3<f32>,
}

impl DiscBlock {
    pub fn init<R: Rng>(
        ps: &mut ParamStore<f32>,
        rng: &mut R,
        name: &str,
        in_c: usize,
        out_c: usize,
        with_norm: bool,
    ) -> Self {
        let conv = Conv2d::init(ps, rng, &format!("{name}.conv"), in_c, out_c, 4, 2, 1, PadMode::Zero, !with_norm);
        let norm = with_norm.then(|| InstanceNorm::init(ps, &format!("{name}.norm"), out_c));
        DiscBlock { conv, norm }
    }

    pub fn forward<F: NdFloat>(&self, ps: &ParamStore<F>, x: &Array3<F>) -> Array3<F> {
        let mut z = self.conv.forward(ps, x);
        if let Some(norm) = &self.norm {
            z = norm.forward(ps, &z);
        }
        ops::leaky_relu_fwd(&z, LEAKY_SLOPE)
    }

    pub fn forward_cached(&self, ps: &ParamStore<f32>, x: &Array3<f32>) -> (Array3<f32>, DiscBlockCache) {
        let (mut z, x_padded) = self.conv.forward_cached(ps, x);
        let norm = self.norm.as_ref().map(|n| {
            let (nz, cache) = n.forward_cached(ps, &z);
            z = nz;
            cache
        });
        let y = ops::leaky_relu_fwd(&z, LEAKY_SLOPE);
        (y.clone(), DiscBlockCache { x_padded, norm, y })
    }

    pub fn backward(
        &self,
        ps: &ParamStore<f32>,
        cache: &DiscBlockCache,
        grad_out: &Array3<f32>,
        mut grads: Option<&mut Grads>,
    ) -> Array3<f32> {
        let mut g = ops::leaky_relu_bwd(&cache.y, LEAKY_SLOPE as f32, grad_out);
        if let (Some(norm), Some(nc)) = (&self.norm, &cache.norm) {
            g = norm.backward(ps, nc, &g, grads.as_deref_mut());
        }
        self.conv.backward(ps, &cache.x_padded, &g, grads)
    }
}
