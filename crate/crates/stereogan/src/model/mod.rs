//! Two-input conditional generators and full-image discriminators.
//!
//! The generator follows the resnet encoder/decoder layout: a 7x7
//! reflect-padded stem, two stride-2 downsampling convs, a run of residual
//! blocks, two stride-2 transposed-conv upsampling stages and a 7x7 head
//! with a tanh, with instance normalization and ReLU everywhere except the
//! head. A conditional generator concatenates its condition image onto the
//! content image channel-wise, doubling the input channels.
//!
//! The discriminator scores the *whole* image with a single real number: a
//! stride-2 conv stack (base, 2x, 4x, 8x filters), then one weight-shared
//! stride-2 conv applied repeatedly until both spatial dims are at most 4,
//! then a 1-channel conv and a global mean. Sharing the extension conv
//! keeps parameter shapes a pure function of the spec while supporting
//! variable input sizes.

mod layers;
mod ops;
mod params;

pub use params::{Grads, ParamId, ParamStore, Parameters};

use ndarray::{Array3, NdFloat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use layers::{Conv2d, ConvNormRelu, ConvNormReluCache, DeconvNormRelu, DeconvNormReluCache, DiscBlock, DiscBlockCache, ResBlock, ResBlockCache};
use ops::PadMode;

/// Generator shape description.
///
/// `input_channels` is either double `output_channels` (conditional: content
/// and condition concatenated) or equal to it (unconditional, the plain
/// translation baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub input_channels: usize,
    pub output_channels: usize,
    pub residual_blocks: usize,
    pub base_filters: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            input_channels: 6,
            output_channels: 3,
            residual_blocks: 7,
            base_filters: 64,
        }
    }
}

impl GeneratorSpec {
    /// Conditional generator spec (6-channel input by default).
    pub fn conditional(residual_blocks: usize, base_filters: usize) -> Self {
        GeneratorSpec {
            input_channels: 6,
            output_channels: 3,
            residual_blocks,
            base_filters,
        }
    }

    /// Unconditional generator spec (3-channel input), for the baseline.
    pub fn unconditional(residual_blocks: usize, base_filters: usize) -> Self {
        GeneratorSpec {
            input_channels: 3,
            output_channels: 3,
            residual_blocks,
            base_filters,
        }
    }

    pub fn is_conditional(&self) -> bool {
        self.input_channels == 2 * self.output_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_channels == 0 || self.base_filters == 0 {
            return Err(Error::InvalidSpec(
                "output_channels and base_filters must be positive".into(),
            ));
        }
        if self.residual_blocks < 1 {
            return Err(Error::InvalidSpec("residual_blocks must be >= 1".into()));
        }
        if self.input_channels != 2 * self.output_channels
            && self.input_channels != self.output_channels
        {
            return Err(Error::InvalidSpec(format!(
                "input_channels must be 2x output_channels (conditional) or equal \
                 (unconditional); got {} vs {}",
                self.input_channels, self.output_channels
            )));
        }
        Ok(())
    }
}

/// Discriminator shape description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub input_channels: usize,
    pub base_filters: usize,
    pub reduce_to_scalar: bool,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec {
            input_channels: 3,
            base_filters: 64,
            reduce_to_scalar: true,
        }
    }
}

impl DiscriminatorSpec {
    pub fn with_base_filters(base_filters: usize) -> Self {
        DiscriminatorSpec {
            base_filters,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.base_filters == 0 {
            return Err(Error::InvalidSpec(
                "input_channels and base_filters must be positive".into(),
            ));
        }
        if !self.reduce_to_scalar {
            // Patch-level scoring is a documented alternative, not built here.
            return Err(Error::InvalidSpec(
                "reduce_to_scalar=false (patch output) is not supported".into(),
            ));
        }
        Ok(())
    }
}

/// Minimum spatial extent accepted by the generator (the decoder halves each
/// dim twice and the residual blocks reflect-pad by one).
pub const GENERATOR_MIN_DIM: usize = 8;
/// Below this, the discriminator conv stack degenerates.
pub const DISCRIMINATOR_MIN_DIM: usize = 16;

const DISC_REDUCE_TARGET: usize = 4;

#[derive(Debug, Clone)]
pub struct Generator {
    spec: GeneratorSpec,
    ps: ParamStore<f32>,
    stem: ConvNormRelu,
    down1: ConvNormRelu,
    down2: ConvNormRelu,
    res: Vec<ResBlock>,
    up1: DeconvNormRelu,
    up2: DeconvNormRelu,
    head: Conv2d,
}

pub(crate) struct GenTape {
    cond_channels: Option<usize>,
    stem: ConvNormReluCache,
    down1: ConvNormReluCache,
    down2: ConvNormReluCache,
    res: Vec<ResBlockCache>,
    up1: DeconvNormReluCache,
    up2: DeconvNormReluCache,
    head_x_padded: Array3<f32>,
    head_y: Array3<f32>,
}

/// Builds a seeded generator; equal seeds give bitwise-identical parameters.
pub fn build_generator(spec: &GeneratorSpec, seed: u64) -> Result<(Generator, Parameters)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamStore::new();
    let b = spec.base_filters;
    let stem = ConvNormRelu::init(&mut ps, &mut rng, "stem", spec.input_channels, b, 7, 1, 3, PadMode::Reflect);
    let down1 = ConvNormRelu::init(&mut ps, &mut rng, "down1", b, 2 * b, 3, 2, 1, PadMode::Zero);
    let down2 = ConvNormRelu::init(&mut ps, &mut rng, "down2", 2 * b, 4 * b, 3, 2, 1, PadMode::Zero);
    let res = (0..spec.residual_blocks)
        .map(|i| ResBlock::init(&mut ps, &mut rng, &format!("res{i}"), 4 * b))
        .collect();
    let up1 = DeconvNormRelu::init(&mut ps, &mut rng, "up1", 4 * b, 2 * b);
    let up2 = DeconvNormRelu::init(&mut ps, &mut rng, "up2", 2 * b, b);
    let head = Conv2d::init(&mut ps, &mut rng, "head", b, spec.output_channels, 7, 1, 3, PadMode::Reflect, true);
    let gen = Generator {
        spec: *spec,
        ps,
        stem,
        down1,
        down2,
        res,
        up1,
        up2,
        head,
    };
    let params = gen.ps.snapshot();
    Ok((gen, params))
}

impl Generator {
    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn is_conditional(&self) -> bool {
        self.spec.is_conditional()
    }

    pub fn parameters(&self) -> Parameters {
        self.ps.snapshot()
    }

    pub fn load_parameters(&mut self, params: &Parameters) -> Result<()> {
        self.ps.load_snapshot(params)
    }

    pub(crate) fn store(&self) -> &ParamStore<f32> {
        &self.ps
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.ps
    }

    fn check_input(&self, content: &Array3<f32>, condition: Option<&Array3<f32>>) -> Result<()> {
        let (c, h, w) = content.dim();
        if c != self.spec.output_channels {
            return Err(Error::DimensionMismatch(format!(
                "content has {c} channels, generator expects {}",
                self.spec.output_channels
            )));
        }
        if h % 4 != 0 || w % 4 != 0 || h < GENERATOR_MIN_DIM || w < GENERATOR_MIN_DIM {
            return Err(Error::DimensionMismatch(format!(
                "generator input dims must be divisible by 4 and >= {GENERATOR_MIN_DIM}, got {h}x{w}"
            )));
        }
        match (self.is_conditional(), condition) {
            (true, Some(cond)) => {
                if cond.dim() != content.dim() {
                    return Err(Error::DimensionMismatch(format!(
                        "condition dims {:?} differ from content dims {:?}",
                        cond.dim(),
                        content.dim()
                    )));
                }
                Ok(())
            }
            (true, None) => Err(Error::InvalidSpec(
                "conditional generator requires a condition image".into(),
            )),
            (false, Some(_)) => Err(Error::InvalidSpec(
                "unconditional generator takes no condition image".into(),
            )),
            (false, None) => Ok(()),
        }
    }

    /// Forward pass generic over the scalar type; used for inference and for
    /// double-precision reference computations.
    pub(crate) fn forward_with<F: NdFloat>(
        &self,
        ps: &ParamStore<F>,
        content: &Array3<F>,
        condition: Option<&Array3<F>>,
    ) -> Array3<F> {
        let x = match condition {
            Some(cond) => ops::concat_channels(content, cond),
            None => content.clone(),
        };
        let mut h = self.stem.forward(ps, &x);
        h = self.down1.forward(ps, &h);
        h = self.down2.forward(ps, &h);
        for block in &self.res {
            h = block.forward(ps, &h);
        }
        h = self.up1.forward(ps, &h);
        h = self.up2.forward(ps, &h);
        let z = self.head.forward(ps, &h);
        ops::tanh_fwd(&z)
    }

    /// Checked single-image forward.
    pub(crate) fn forward_arrays(
        &self,
        content: &Array3<f32>,
        condition: Option<&Array3<f32>>,
    ) -> Result<Array3<f32>> {
        self.check_input(content, condition)?;
        Ok(self.forward_with(&self.ps, content, condition))
    }

    pub fn forward_image(&self, content: &Image, condition: Option<&Image>) -> Result<Image> {
        let out = self.forward_arrays(content.data(), condition.map(|c| c.data()))?;
        Ok(Image::from_bounded(out))
    }

    /// Forward pass that records everything the backward pass needs.
    pub(crate) fn forward_train(
        &self,
        content: &Array3<f32>,
        condition: Option<&Array3<f32>>,
    ) -> Result<(Array3<f32>, GenTape)> {
        self.check_input(content, condition)?;
        let x = match condition {
            Some(cond) => ops::concat_channels(content, cond),
            None => content.clone(),
        };
        let (h, stem) = self.stem.forward_cached(&self.ps, &x);
        let (h, down1) = self.down1.forward_cached(&self.ps, &h);
        let (mut h, down2) = self.down2.forward_cached(&self.ps, &h);
        let mut res = Vec::with_capacity(self.res.len());
        for block in &self.res {
            let (next, cache) = block.forward_cached(&self.ps, &h);
            res.push(cache);
            h = next;
        }
        let (h, up1) = self.up1.forward_cached(&self.ps, &h);
        let (h, up2) = self.up2.forward_cached(&self.ps, &h);
        let (z, head_x_padded) = self.head.forward_cached(&self.ps, &h);
        let y = ops::tanh_fwd(&z);
        let tape = GenTape {
            cond_channels: condition.map(|c| c.dim().0),
            stem,
            down1,
            down2,
            res,
            up1,
            up2,
            head_x_padded,
            head_y: y.clone(),
        };
        Ok((y, tape))
    }

    /// Backpropagates `grad_out`, accumulating parameter gradients, and
    /// returns the gradients w.r.t. (content, condition).
    pub(crate) fn backward(
        &self,
        tape: &GenTape,
        grad_out: &Array3<f32>,
        grads: &mut Grads,
    ) -> (Array3<f32>, Option<Array3<f32>>) {
        let g = ops::tanh_bwd(&tape.head_y, grad_out);
        let g = self.head.backward(&self.ps, &tape.head_x_padded, &g, Some(grads));
        let g = self.up2.backward(&self.ps, &tape.up2, &g, Some(grads));
        let mut g = self.up1.backward(&self.ps, &tape.up1, &g, Some(grads));
        for (block, cache) in self.res.iter().zip(tape.res.iter()).rev() {
            g = block.backward(&self.ps, cache, &g, Some(grads));
        }
        let g = self.down2.backward(&self.ps, &tape.down2, &g, Some(grads));
        let g = self.down1.backward(&self.ps, &tape.down1, &g, Some(grads));
        let g = self.stem.backward(&self.ps, &tape.stem, &g, Some(grads));
        match tape.cond_channels {
            Some(cc) => {
                let content_c = g.dim().0 - cc;
                let (gc, gcond) = ops::split_channels(&g, content_c);
                (gc, Some(gcond))
            }
            None => (g, None),
        }
    }
}

/// Applies a conditional generator: output dims equal content dims.
pub fn generator_forward(gen: &Generator, content: &Image, condition: &Image) -> Result<Image> {
    if !gen.is_conditional() {
        return Err(Error::InvalidSpec(
            "generator_forward requires a conditional generator".into(),
        ));
    }
    gen.forward_image(content, Some(condition))
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    ps: ParamStore<f32>,
    blocks: Vec<DiscBlock>,
    extra: DiscBlock,
    final_conv: Conv2d,
}

pub(crate) struct DiscTape {
    blocks: Vec<DiscBlockCache>,
    extra: Vec<DiscBlockCache>,
    final_x_padded: Array3<f32>,
    final_dims: (usize, usize, usize),
}

/// Builds a seeded discriminator; equal seeds give identical parameters.
pub fn build_discriminator(spec: &DiscriminatorSpec, seed: u64) -> Result<(Discriminator, Parameters)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamStore::new();
    let b = spec.base_filters;
    let widths = [b, 2 * b, 4 * b, 8 * b];
    let mut blocks = Vec::new();
    let mut in_c = spec.input_channels;
    for (i, &out_c) in widths.iter().enumerate() {
        // No normalization on the first block, matching the usual GAN stack.
        blocks.push(DiscBlock::init(&mut ps, &mut rng, &format!("block{}", i + 1), in_c, out_c, i > 0));
        in_c = out_c;
    }
    let extra = DiscBlock::init(&mut ps, &mut rng, "extra", 8 * b, 8 * b, true);
    let final_conv = Conv2d::init(&mut ps, &mut rng, "final", 8 * b, 1, 3, 1, 1, PadMode::Zero, true);
    let disc = Discriminator {
        spec: *spec,
        ps,
        blocks,
        extra,
        final_conv,
    };
    let params = disc.ps.snapshot();
    Ok((disc, params))
}

impl Discriminator {
    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn parameters(&self) -> Parameters {
        self.ps.snapshot()
    }

    pub fn load_parameters(&mut self, params: &Parameters) -> Result<()> {
        self.ps.load_snapshot(params)
    }

    pub(crate) fn store(&self) -> &ParamStore<f32> {
        &self.ps
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.ps
    }

    fn check_input(&self, x: &Array3<f32>) -> Result<()> {
        let (c, h, w) = x.dim();
        if c != self.spec.input_channels {
            return Err(Error::DimensionMismatch(format!(
                "discriminator expects {} channels, got {c}",
                self.spec.input_channels
            )));
        }
        if h < DISCRIMINATOR_MIN_DIM || w < DISCRIMINATOR_MIN_DIM {
            return Err(Error::DimensionMismatch(format!(
                "discriminator input must be at least {DISCRIMINATOR_MIN_DIM}x{DISCRIMINATOR_MIN_DIM}, got {h}x{w}"
            )));
        }
        Ok(())
    }

    fn needs_reduction(h: usize, w: usize) -> Result<bool> {
        if h <= DISC_REDUCE_TARGET && w <= DISC_REDUCE_TARGET {
            return Ok(false);
        }
        if h < 2 || w < 2 {
            return Err(Error::DimensionMismatch(format!(
                "aspect ratio too extreme for scalar reduction (reached {h}x{w})"
            )));
        }
        Ok(true)
    }

    /// Forward pass generic over the scalar type, returning the image score.
    pub(crate) fn forward_with<F: NdFloat>(&self, ps: &ParamStore<F>, x: &Array3<F>) -> Result<F> {
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.forward(ps, &h);
        }
        while Self::needs_reduction(h.dim().1, h.dim().2)? {
            h = self.extra.forward(ps, &h);
        }
        let z = self.final_conv.forward(ps, &h);
        Ok(ops::global_mean(&z))
    }

    /// Scores one image with a single real number.
    pub fn score_image(&self, img: &Image) -> Result<f32> {
        self.check_input(img.data())?;
        self.forward_with(&self.ps, img.data())
    }

    pub(crate) fn score_arrays(&self, x: &Array3<f32>) -> Result<f32> {
        self.check_input(x)?;
        self.forward_with(&self.ps, x)
    }

    pub(crate) fn forward_train(&self, x: &Array3<f32>) -> Result<(f32, DiscTape)> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward_cached(&self.ps, &h);
            blocks.push(cache);
            h = next;
        }
        let mut extra = Vec::new();
        while Self::needs_reduction(h.dim().1, h.dim().2)? {
            let (next, cache) = self.extra.forward_cached(&self.ps, &h);
            extra.push(cache);
            h = next;
        }
        let (z, final_x_padded) = self.final_conv.forward_cached(&self.ps, &h);
        let score = ops::global_mean(&z);
        let tape = DiscTape {
            blocks,
            extra,
            final_x_padded,
            final_dims: z.dim(),
        };
        Ok((score, tape))
    }

    /// Backpropagates a scalar score gradient. Parameter gradients are only
    /// accumulated when `grads` is given (frozen discriminators still pass
    /// gradients back to their input).
    pub(crate) fn backward(
        &self,
        tape: &DiscTape,
        grad_score: f32,
        mut grads: Option<&mut Grads>,
    ) -> Array3<f32> {
        let g = ops::global_mean_bwd(tape.final_dims, grad_score);
        let mut g = self
            .final_conv
            .backward(&self.ps, &tape.final_x_padded, &g, grads.as_deref_mut());
        for cache in tape.extra.iter().rev() {
            g = self.extra.backward(&self.ps, cache, &g, grads.as_deref_mut());
        }
        for (block, cache) in self.blocks.iter().zip(tape.blocks.iter()).rev() {
            g = block.backward(&self.ps, cache, &g, grads.as_deref_mut());
        }
        g
    }
}

#[cfg(test)]
mod tests;
