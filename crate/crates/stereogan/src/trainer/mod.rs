//! The full optimization procedure: chained stereo conditioning, forward and
//! reverse cycles, history-buffered discriminator updates with the halved
//! objective, Adam, and the monoscopic-pretrain curriculum.
//!
//! Training modes:
//! - `stereo` (the proposed scheme): conditional 6-channel generators;
//!   phase 1 runs monoscopic steps, phase 2 runs chained stereo steps.
//! - `baseline`: unconditional 3-channel generators; phase 1 monoscopic,
//!   phase 2 monoscopic on the *left* eye only.
//! - `mono`: conditional generators trained monoscopically in both phases
//!   (the un-stereo-paired variant).

mod adam;
mod buffer;
mod checkpoint;

pub use buffer::{buffer_push_query, HistoryBuffer};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment_mono, augment_stereo, sample_batch, AugmentConfig, DatasetMode, DomainDataset, SampleRef, StereoPair};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{cycle_loss_grad, disc_adv_loss_and_grads, gen_adv_term, mean_abs_diff, total_generator_loss, AdvForm, LossConfig};
use crate::model::{build_discriminator, build_generator, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, Grads};
use adam::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Mono,
    Stereo,
    Baseline,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainMode::Mono => write!(f, "mono"),
            TrainMode::Stereo => write!(f, "stereo"),
            TrainMode::Baseline => write!(f, "baseline"),
        }
    }
}

/// The learning rate is constant for the whole run; the variant exists so
/// the config echo states it explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub lambda_cycle: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs_mono: usize,
    pub epochs_stereo: usize,
    pub buffer_capacity: usize,
    pub mode: TrainMode,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub lr_schedule: LrSchedule,
    /// Condition the right-eye reconstruction on the just-reconstructed left
    /// eye (mirroring the forward chaining) instead of the random condition.
    pub chain_reconstruction: bool,
    /// Epoch cadence for mid-run checkpoints; 0 writes only the final one.
    pub checkpoint_every_epochs: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lambda_cycle: 20.0,
            lr: 1e-4,
            batch_size: 1,
            epochs_mono: 40,
            epochs_stereo: 40,
            buffer_capacity: 50,
            mode: TrainMode::Stereo,
            seed: 0,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            lr_schedule: LrSchedule::Constant,
            chain_reconstruction: true,
            checkpoint_every_epochs: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size != 1 {
            problems.push(format!(
                "batch_size must be 1 (instance normalization and the recipe assume it), got {}",
                self.batch_size
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            problems.push(format!("lr must be positive and finite, got {}", self.lr));
        }
        if self.buffer_capacity < 1 {
            problems.push("buffer_capacity must be >= 1".into());
        }
        if !(self.lambda_cycle > 0.0) {
            problems.push(format!("lambda_cycle must be > 0, got {}", self.lambda_cycle));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                problems.push(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}

/// Network sizes; the channel wiring follows from the training mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub gen_residual_blocks: usize,
    pub gen_base_filters: usize,
    pub disc_base_filters: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            gen_residual_blocks: 7,
            gen_base_filters: 64,
            disc_base_filters: 64,
        }
    }
}

impl ModelConfig {
    pub fn generator_spec(&self, mode: TrainMode) -> GeneratorSpec {
        match mode {
            TrainMode::Baseline => GeneratorSpec::unconditional(self.gen_residual_blocks, self.gen_base_filters),
            _ => GeneratorSpec::conditional(self.gen_residual_blocks, self.gen_base_filters),
        }
    }

    pub fn discriminator_spec(&self) -> DiscriminatorSpec {
        DiscriminatorSpec::with_base_filters(self.disc_base_filters)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Mono,
    Stereo,
}

/// All loss terms of one optimization step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    /// Generator adversarial terms, one per generated (fake) image.
    pub adv_g: Vec<f64>,
    /// Lambda-weighted cycle terms, one per reconstruction.
    pub cycle: Vec<f64>,
    /// Identity terms when enabled (empty otherwise).
    pub identity: Vec<f64>,
    pub g_total: f64,
    pub d_x: f64,
    pub d_y: f64,
}

impl StepLosses {
    pub fn cycle_total(&self) -> f64 {
        self.cycle.iter().sum()
    }

    fn check_finite(&self) -> std::result::Result<(), String> {
        let scalars = [self.g_total, self.d_x, self.d_y];
        let all = self
            .adv_g
            .iter()
            .chain(self.cycle.iter())
            .chain(self.identity.iter())
            .chain(scalars.iter());
        for (i, v) in all.enumerate() {
            if !v.is_finite() {
                return Err(format!("loss term #{i} is {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub phase: u8,
    pub kind: StepKind,
    pub losses: StepLosses,
    pub elapsed_s: f64,
}

impl StepRecord {
    /// Equality over everything deterministic (wall time excluded).
    pub fn same_outcome(&self, other: &StepRecord) -> bool {
        self.step == other.step
            && self.phase == other.phase
            && self.kind == other.kind
            && self.losses == other.losses
    }
}

/// Counts of eye-image reads from stereo training samples, per phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataAccessTrace {
    pub phase1_left: u64,
    pub phase1_right: u64,
    pub phase2_left: u64,
    pub phase2_right: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct ResumePos {
    pub phase: u8,
    pub epochs_done: usize,
}

pub struct TrainerState {
    cfg: TrainingConfig,
    loss_cfg: LossConfig,
    model_cfg: ModelConfig,
    pub(crate) g: Generator,
    pub(crate) f: Generator,
    pub(crate) d_x: Discriminator,
    pub(crate) d_y: Discriminator,
    adam_g: Adam,
    adam_f: Adam,
    adam_dx: Adam,
    adam_dy: Adam,
    buf_x: HistoryBuffer,
    buf_y: HistoryBuffer,
    rng_data: ChaCha8Rng,
    rng_augment: ChaCha8Rng,
    rng_condition: ChaCha8Rng,
    global_step: u64,
    pos: ResumePos,
    trace: DataAccessTrace,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl TrainerState {
    pub fn new(cfg: TrainingConfig, loss_cfg: LossConfig, model_cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        loss_cfg.validate()?;
        if (loss_cfg.weights.lambda_cycle - cfg.lambda_cycle).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "lambda_cycle disagrees between training ({}) and loss ({}) configs",
                cfg.lambda_cycle, loss_cfg.weights.lambda_cycle
            )));
        }
        let gen_spec = model_cfg.generator_spec(cfg.mode);
        let disc_spec = model_cfg.discriminator_spec();
        let (g, _) = build_generator(&gen_spec, splitmix64(cfg.seed ^ 0xA1))?;
        let (f, _) = build_generator(&gen_spec, splitmix64(cfg.seed ^ 0xA2))?;
        let (d_x, _) = build_discriminator(&disc_spec, splitmix64(cfg.seed ^ 0xB1))?;
        let (d_y, _) = build_discriminator(&disc_spec, splitmix64(cfg.seed ^ 0xB2))?;
        let adam_g = Adam::new(g.store(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
        let adam_f = Adam::new(f.store(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
        let adam_dx = Adam::new(d_x.store(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
        let adam_dy = Adam::new(d_y.store(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
        let buf_x = HistoryBuffer::new(cfg.buffer_capacity, stream_rng(cfg.seed, 4))?;
        let buf_y = HistoryBuffer::new(cfg.buffer_capacity, stream_rng(cfg.seed, 5))?;
        Ok(TrainerState {
            cfg,
            loss_cfg,
            model_cfg,
            g,
            f,
            d_x,
            d_y,
            adam_g,
            adam_f,
            adam_dx,
            adam_dy,
            buf_x,
            buf_y,
            rng_data: stream_rng(cfg.seed, 1),
            rng_augment: stream_rng(cfg.seed, 2),
            rng_condition: stream_rng(cfg.seed, 3),
            global_step: 0,
            pos: ResumePos {
                phase: 1,
                epochs_done: 0,
            },
            trace: DataAccessTrace::default(),
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.cfg
    }

    pub fn loss_config(&self) -> &LossConfig {
        &self.loss_cfg
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model_cfg
    }

    pub fn generator(&self) -> &Generator {
        &self.g
    }

    pub fn reverse_generator(&self) -> &Generator {
        &self.f
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn trace(&self) -> &DataAccessTrace {
        &self.trace
    }

    fn conditional(&self) -> bool {
        self.g.is_conditional()
    }

    /// One monoscopic optimization step. Conditions are required exactly
    /// when the generators are conditional.
    pub fn train_step_mono(
        &mut self,
        x: &Image,
        y: &Image,
        y_w: Option<&Image>,
        x_w: Option<&Image>,
    ) -> Result<StepLosses> {
        if self.conditional() != y_w.is_some() || self.conditional() != x_w.is_some() {
            return Err(Error::InvalidConfig(
                "condition images must be given iff the generators are conditional".into(),
            ));
        }
        let mut grads_g = Grads::zeros_like(self.g.store());
        let mut grads_f = Grads::zeros_like(self.f.store());

        // X -> Y -> X
        let (fake_y, adv_xy, cyc_x) = mono_cycle(
            &self.g,
            &self.f,
            &self.d_y,
            &mut grads_g,
            &mut grads_f,
            x.data(),
            y_w.map(|i| i.data()),
            x_w.map(|i| i.data()),
            self.cfg.lambda_cycle,
            self.loss_cfg.adv_form,
        )?;
        // Y -> X -> Y
        let (fake_x, adv_yx, cyc_y) = mono_cycle(
            &self.f,
            &self.g,
            &self.d_x,
            &mut grads_f,
            &mut grads_g,
            y.data(),
            x_w.map(|i| i.data()),
            y_w.map(|i| i.data()),
            self.cfg.lambda_cycle,
            self.loss_cfg.adv_form,
        )?;

        let mut identity = Vec::new();
        if self.loss_cfg.identity_weight > 0.0 {
            identity.push(identity_term(&self.g, &mut grads_g, y.data(), y_w.map(|i| i.data()), self.identity_lambda())?);
            identity.push(identity_term(&self.f, &mut grads_f, x.data(), x_w.map(|i| i.data()), self.identity_lambda())?);
        }

        self.adam_g.step(self.g.store_mut(), &grads_g);
        self.adam_f.step(self.f.store_mut(), &grads_f);

        let d_y_loss = disc_update(
            &mut self.d_y,
            &mut self.adam_dy,
            &mut self.buf_y,
            &[y.data()],
            vec![fake_y],
            &self.loss_cfg,
        )?;
        let d_x_loss = disc_update(
            &mut self.d_x,
            &mut self.adam_dx,
            &mut self.buf_x,
            &[x.data()],
            vec![fake_x],
            &self.loss_cfg,
        )?;

        self.finish_step(vec![adv_xy, adv_yx], vec![cyc_x, cyc_y], identity, d_x_loss, d_y_loss)
    }

    /// One chained stereo optimization step over a pair from each domain.
    pub fn train_step_stereo(
        &mut self,
        pair_x: &StereoPair,
        pair_y: &StereoPair,
        y_w: &Image,
        x_w: &Image,
    ) -> Result<StepLosses> {
        if !self.conditional() {
            return Err(Error::InvalidConfig(
                "stereo steps require conditional generators (stereo or mono mode)".into(),
            ));
        }
        let mut grads_g = Grads::zeros_like(self.g.store());
        let mut grads_f = Grads::zeros_like(self.f.store());

        // Forward cycle X -> Y -> X over the stereo pair.
        let fwd = chained_cycle(
            &self.g,
            &self.f,
            &self.d_y,
            &mut grads_g,
            &mut grads_f,
            pair_x.left.data(),
            pair_x.right.data(),
            y_w.data(),
            x_w.data(),
            self.cfg.lambda_cycle,
            self.loss_cfg.adv_form,
            self.cfg.chain_reconstruction,
        )?;
        // Reverse cycle Y -> X -> Y, same chaining on the other pair.
        let rev = chained_cycle(
            &self.f,
            &self.g,
            &self.d_x,
            &mut grads_f,
            &mut grads_g,
            pair_y.left.data(),
            pair_y.right.data(),
            x_w.data(),
            y_w.data(),
            self.cfg.lambda_cycle,
            self.loss_cfg.adv_form,
            self.cfg.chain_reconstruction,
        )?;

        let mut identity = Vec::new();
        if self.loss_cfg.identity_weight > 0.0 {
            identity.push(identity_term(&self.g, &mut grads_g, pair_y.left.data(), Some(y_w.data()), self.identity_lambda())?);
            identity.push(identity_term(&self.f, &mut grads_f, pair_x.left.data(), Some(x_w.data()), self.identity_lambda())?);
        }

        self.adam_g.step(self.g.store_mut(), &grads_g);
        self.adam_f.step(self.f.store_mut(), &grads_f);

        // Both generated eyes go through the discriminator's buffer as
        // separate entries; both real eyes count as reals.
        let d_y_loss = disc_update(
            &mut self.d_y,
            &mut self.adam_dy,
            &mut self.buf_y,
            &[pair_y.left.data(), pair_y.right.data()],
            vec![fwd.fake_l, fwd.fake_r],
            &self.loss_cfg,
        )?;
        let d_x_loss = disc_update(
            &mut self.d_x,
            &mut self.adam_dx,
            &mut self.buf_x,
            &[pair_x.left.data(), pair_x.right.data()],
            vec![rev.fake_l, rev.fake_r],
            &self.loss_cfg,
        )?;

        self.finish_step(
            vec![fwd.adv[0], fwd.adv[1], rev.adv[0], rev.adv[1]],
            vec![fwd.cycle[0], fwd.cycle[1], rev.cycle[0], rev.cycle[1]],
            identity,
            d_x_loss,
            d_y_loss,
        )
    }

    fn identity_lambda(&self) -> f64 {
        self.loss_cfg.identity_weight * self.cfg.lambda_cycle
    }

    fn finish_step(
        &mut self,
        adv_g: Vec<f64>,
        cycle: Vec<f64>,
        identity: Vec<f64>,
        d_x: f64,
        d_y: f64,
    ) -> Result<StepLosses> {
        let (base_total, _) = total_generator_loss(&adv_g, &cycle);
        let g_total = base_total + identity.iter().sum::<f64>();
        let losses = StepLosses {
            adv_g,
            cycle,
            identity,
            g_total,
            d_x,
            d_y,
        };
        self.global_step += 1;
        if let Err(detail) = losses.check_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.global_step,
                detail,
                dump: "(no dump written: direct step call)".into(),
            });
        }
        Ok(losses)
    }
}

struct ChainOutcome {
    fake_l: Array3<f32>,
    fake_r: Array3<f32>,
    adv: [f64; 2],
    cycle: [f64; 2],
}

/// One chained cycle A -> B -> A over a stereo pair from domain A.
///
/// Forward: `b_l = GA(a_l, w_b)`, `b_r = GA(a_r, b_l)`. Reconstruction:
/// `a''_l = GB(b_l, w_a)`, `a''_r = GB(b_r, a''_l)` (or `w_a` when chaining
/// of reconstructions is disabled). The discriminator is frozen here; its
/// parameter gradients are skipped while input gradients flow back.
#[allow(clippy::too_many_arguments)]
fn chained_cycle(
    gen_ab: &Generator,
    gen_ba: &Generator,
    disc_b: &Discriminator,
    grads_ab: &mut Grads,
    grads_ba: &mut Grads,
    a_l: &Array3<f32>,
    a_r: &Array3<f32>,
    w_b: &Array3<f32>,
    w_a: &Array3<f32>,
    lambda: f64,
    form: AdvForm,
    chain_reconstruction: bool,
) -> Result<ChainOutcome> {
    let (b_l, t_g1) = gen_ab.forward_train(a_l, Some(w_b))?;
    let (b_r, t_g2) = gen_ab.forward_train(a_r, Some(&b_l))?;
    let (a2_l, t_f1) = gen_ba.forward_train(&b_l, Some(w_a))?;
    let recon_cond = if chain_reconstruction { &a2_l } else { w_a };
    let (a2_r, t_f2) = gen_ba.forward_train(&b_r, Some(recon_cond))?;
    let (s_l, t_d1) = disc_b.forward_train(&b_l)?;
    let (s_r, t_d2) = disc_b.forward_train(&b_r)?;

    let (adv_l, dadv_l) = gen_adv_term(s_l as f64, form);
    let (adv_r, dadv_r) = gen_adv_term(s_r as f64, form);
    let cyc_l = lambda * mean_abs_diff(a_l, &a2_l);
    let cyc_r = lambda * mean_abs_diff(a_r, &a2_r);

    // Backward in reverse topological order. The right reconstruction feeds
    // gradient into the left one when reconstruction chaining is on.
    let g_a2r = cycle_loss_grad(a_r, &a2_r, lambda);
    let (g_br_recon, g_recon_cond) = gen_ba.backward(&t_f2, &g_a2r, grads_ba);
    let mut g_a2l = cycle_loss_grad(a_l, &a2_l, lambda);
    if chain_reconstruction {
        g_a2l += &g_recon_cond.expect("conditional generator tape");
    }
    let (g_bl_recon, _g_wa) = gen_ba.backward(&t_f1, &g_a2l, grads_ba);

    let g_br_adv = disc_b.backward(&t_d2, dadv_r as f32, None);
    let g_br = g_br_recon + g_br_adv;
    let (_g_ar, g_bl_chain) = gen_ab.backward(&t_g2, &g_br, grads_ab);

    let g_bl_adv = disc_b.backward(&t_d1, dadv_l as f32, None);
    let g_bl = g_bl_recon + g_bl_adv + g_bl_chain.expect("conditional generator tape");
    gen_ab.backward(&t_g1, &g_bl, grads_ab);

    Ok(ChainOutcome {
        fake_l: b_l,
        fake_r: b_r,
        adv: [adv_l, adv_r],
        cycle: [cyc_l, cyc_r],
    })
}

/// The monoscopic version: one image per domain, two adversarial terms and
/// two cycle terms per step overall.
#[allow(clippy::too_many_arguments)]
fn mono_cycle(
    gen_ab: &Generator,
    gen_ba: &Generator,
    disc_b: &Discriminator,
    grads_ab: &mut Grads,
    grads_ba: &mut Grads,
    a: &Array3<f32>,
    w_b: Option<&Array3<f32>>,
    w_a: Option<&Array3<f32>>,
    lambda: f64,
    form: AdvForm,
) -> Result<(Array3<f32>, f64, f64)> {
    let (b, t_g) = gen_ab.forward_train(a, w_b)?;
    let (a2, t_f) = gen_ba.forward_train(&b, w_a)?;
    let (s, t_d) = disc_b.forward_train(&b)?;
    let (adv, dadv) = gen_adv_term(s as f64, form);
    let cyc = lambda * mean_abs_diff(a, &a2);

    let g_a2 = cycle_loss_grad(a, &a2, lambda);
    let (g_b_recon, _g_wa) = gen_ba.backward(&t_f, &g_a2, grads_ba);
    let g_b = g_b_recon + disc_b.backward(&t_d, dadv as f32, None);
    gen_ab.backward(&t_g, &g_b, grads_ab);
    Ok((b, adv, cyc))
}

/// Optional identity term: the generator applied to a target-domain image
/// should leave it unchanged.
fn identity_term(
    gen: &Generator,
    grads: &mut Grads,
    real: &Array3<f32>,
    cond: Option<&Array3<f32>>,
    weight_lambda: f64,
) -> Result<f64> {
    let (out, tape) = gen.forward_train(real, cond)?;
    let loss = weight_lambda * mean_abs_diff(real, &out);
    let g = cycle_loss_grad(real, &out, weight_lambda);
    gen.backward(&tape, &g, grads);
    Ok(loss)
}

/// One discriminator update: real images against history-buffered fakes,
/// with the slowed-down objective. Fakes are already detached (plain
/// arrays), so no gradient reaches the generators here.
fn disc_update(
    disc: &mut Discriminator,
    adam: &mut Adam,
    buf: &mut HistoryBuffer,
    reals: &[&Array3<f32>],
    fakes_new: Vec<Array3<f32>>,
    loss_cfg: &LossConfig,
) -> Result<f64> {
    let fakes: Vec<Array3<f32>> = fakes_new
        .into_iter()
        .map(|f| buf.push_query(Image::from_bounded(f)).into_data())
        .collect();
    let mut real_scores = Vec::with_capacity(reals.len());
    let mut real_tapes = Vec::with_capacity(reals.len());
    for r in reals {
        let (s, t) = disc.forward_train(r)?;
        real_scores.push(s as f64);
        real_tapes.push(t);
    }
    let mut fake_scores = Vec::with_capacity(fakes.len());
    let mut fake_tapes = Vec::with_capacity(fakes.len());
    for f in &fakes {
        let (s, t) = disc.forward_train(f)?;
        fake_scores.push(s as f64);
        fake_tapes.push(t);
    }
    let (loss, g_real, g_fake) =
        disc_adv_loss_and_grads(&real_scores, &fake_scores, &loss_cfg.weights, loss_cfg.adv_form);
    let mut grads = Grads::zeros_like(disc.store());
    for (tape, g) in real_tapes.iter().zip(g_real) {
        disc.backward(tape, g as f32, Some(&mut grads));
    }
    for (tape, g) in fake_tapes.iter().zip(g_fake) {
        disc.backward(tape, g as f32, Some(&mut grads));
    }
    adam.step(disc.store_mut(), &grads);
    Ok(loss)
}

/// Chained stereo generation: the freshly generated left output conditions
/// the right-eye generation.
pub fn generate_stereo(gen: &Generator, x_l: &Image, x_r: &Image, y_w: &Image) -> Result<(Image, Image)> {
    let y_l = crate::model::generator_forward(gen, x_l, y_w)?;
    let y_r = crate::model::generator_forward(gen, x_r, &y_l)?;
    Ok((y_l, y_r))
}

/// Datasets and augmentation feeding [`TrainerState::run_curriculum`].
/// Phase 1 consumes the mono datasets, phase 2 the stereo ones; only the
/// datasets a phase actually runs on are required.
#[derive(Clone, Copy)]
pub struct CurriculumData<'a> {
    pub mono_x: Option<&'a DomainDataset>,
    pub mono_y: Option<&'a DomainDataset>,
    pub stereo_x: Option<&'a DomainDataset>,
    pub stereo_y: Option<&'a DomainDataset>,
    pub augment: &'a AugmentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub steps_run: u64,
    pub final_checkpoint: Option<PathBuf>,
    pub trace: DataAccessTrace,
}

fn require_dataset<'a>(
    ds: Option<&'a DomainDataset>,
    mode: DatasetMode,
    what: &str,
) -> Result<&'a DomainDataset> {
    let ds = ds.ok_or_else(|| Error::InvalidConfig(format!("{what} dataset is required")))?;
    if ds.mode() != mode {
        return Err(Error::InvalidConfig(format!(
            "{what} dataset has the wrong mode (expected {mode:?})"
        )));
    }
    Ok(ds)
}

impl TrainerState {
    fn stereo_pair_of<'a>(&mut self, s: SampleRef<'a>, phase: u8) -> Result<&'a StereoPair> {
        match s {
            SampleRef::Stereo(p) => {
                if phase == 1 {
                    self.trace.phase1_left += 1;
                    self.trace.phase1_right += 1;
                } else {
                    self.trace.phase2_left += 1;
                    self.trace.phase2_right += 1;
                }
                Ok(p)
            }
            SampleRef::Mono(_) => Err(Error::Dataset("expected a stereo sample".into())),
        }
    }

    fn left_eye_of<'a>(&mut self, s: SampleRef<'a>, phase: u8) -> Result<&'a Image> {
        match s {
            SampleRef::Stereo(p) => {
                if phase == 1 {
                    self.trace.phase1_left += 1;
                } else {
                    self.trace.phase2_left += 1;
                }
                Ok(&p.left)
            }
            SampleRef::Mono(img) => Ok(img),
        }
    }

    fn one_mono_step(
        &mut self,
        ds_x: &DomainDataset,
        ds_y: &DomainDataset,
        augment: &AugmentConfig,
        phase: u8,
    ) -> Result<StepLosses> {
        // Fixed draw order: data samples, condition samples, augmentations.
        let x_ref = sample_batch(ds_x, &mut self.rng_data);
        let y_ref = sample_batch(ds_y, &mut self.rng_data);
        let x_src = self.left_eye_of(x_ref, phase)?.clone();
        let y_src = self.left_eye_of(y_ref, phase)?.clone();
        let conds = if self.conditional() {
            let yw_ref = sample_batch(ds_y, &mut self.rng_condition);
            let xw_ref = sample_batch(ds_x, &mut self.rng_condition);
            Some((
                self.left_eye_of(yw_ref, phase)?.clone(),
                self.left_eye_of(xw_ref, phase)?.clone(),
            ))
        } else {
            None
        };
        let x = augment_mono(&x_src, augment, &mut self.rng_augment)?;
        let y = augment_mono(&y_src, augment, &mut self.rng_augment)?;
        let (y_w, x_w) = match conds {
            Some((yw_src, xw_src)) => (
                Some(augment_mono(&yw_src, augment, &mut self.rng_augment)?),
                Some(augment_mono(&xw_src, augment, &mut self.rng_augment)?),
            ),
            None => (None, None),
        };
        self.train_step_mono(&x, &y, y_w.as_ref(), x_w.as_ref())
    }

    fn one_stereo_step(
        &mut self,
        ds_x: &DomainDataset,
        ds_y: &DomainDataset,
        augment: &AugmentConfig,
    ) -> Result<StepLosses> {
        let px_ref = sample_batch(ds_x, &mut self.rng_data);
        let py_ref = sample_batch(ds_y, &mut self.rng_data);
        let px_src = self.stereo_pair_of(px_ref, 2)?.clone();
        let py_src = self.stereo_pair_of(py_ref, 2)?.clone();
        let yw_ref = sample_batch(ds_y, &mut self.rng_condition);
        let xw_ref = sample_batch(ds_x, &mut self.rng_condition);
        let yw_src = self.left_eye_of(yw_ref, 2)?.clone();
        let xw_src = self.left_eye_of(xw_ref, 2)?.clone();
        let pair_x = augment_stereo(&px_src, augment, &mut self.rng_augment)?;
        let pair_y = augment_stereo(&py_src, augment, &mut self.rng_augment)?;
        let y_w = augment_mono(&yw_src, augment, &mut self.rng_augment)?;
        let x_w = augment_mono(&xw_src, augment, &mut self.rng_augment)?;
        self.train_step_stereo(&pair_x, &pair_y, &y_w, &x_w)
    }

    /// Runs the two-phase curriculum (or the remainder of it after a resume),
    /// invoking `sink` with one record per step. Checkpoints go to `out_dir`
    /// when given, at the configured epoch cadence plus a final one.
    pub fn run_curriculum(
        &mut self,
        data: &CurriculumData<'_>,
        out_dir: Option<&Path>,
        sink: &mut dyn FnMut(&StepRecord),
    ) -> Result<TrainOutcome> {
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut steps_run = 0u64;
        for phase in [1u8, 2u8] {
            let total_epochs = if phase == 1 {
                self.cfg.epochs_mono
            } else {
                self.cfg.epochs_stereo
            };
            if self.pos.phase > phase {
                continue;
            }
            let start = if self.pos.phase == phase { self.pos.epochs_done } else { 0 };
            if start < total_epochs {
                // Validate phase inputs once before running it.
                self.phase_datasets(phase, data)?;
            }
            for epoch in start..total_epochs {
                let (ds_x, ds_y) = self.phase_datasets(phase, data)?;
                let steps = ds_x.len().max(ds_y.len());
                for _ in 0..steps {
                    let t0 = Instant::now();
                    let kind = if phase == 2 && self.cfg.mode == TrainMode::Stereo {
                        StepKind::Stereo
                    } else {
                        StepKind::Mono
                    };
                    let losses = match kind {
                        StepKind::Stereo => self.one_stereo_step(ds_x, ds_y, data.augment),
                        StepKind::Mono => self.one_mono_step(ds_x, ds_y, data.augment, phase),
                    };
                    let losses = match losses {
                        Ok(l) => l,
                        Err(Error::NonFiniteLoss { step, detail, .. }) => {
                            let dump = self.write_diagnostic_dump(out_dir, step, &detail);
                            return Err(Error::NonFiniteLoss { step, detail, dump });
                        }
                        Err(e) => return Err(e),
                    };
                    let record = StepRecord {
                        step: self.global_step,
                        phase,
                        kind,
                        losses,
                        elapsed_s: t0.elapsed().as_secs_f64(),
                    };
                    sink(&record);
                    steps_run += 1;
                }
                self.pos = ResumePos {
                    phase,
                    epochs_done: epoch + 1,
                };
                if let Some(dir) = out_dir {
                    let k = self.cfg.checkpoint_every_epochs;
                    if k > 0 && (epoch + 1) % k == 0 && !(phase == 2 && epoch + 1 == total_epochs) {
                        save_checkpoint(self, &dir.join(format!("ckpt_phase{phase}_epoch{:04}.ckpt", epoch + 1)))?;
                    }
                }
            }
            self.pos = ResumePos {
                phase: phase + 1,
                epochs_done: 0,
            };
        }
        self.pos = ResumePos {
            phase: 2,
            epochs_done: self.cfg.epochs_stereo,
        };
        let final_checkpoint = match out_dir {
            Some(dir) => {
                let path = dir.join("checkpoint_final.ckpt");
                save_checkpoint(self, &path)?;
                Some(path)
            }
            None => None,
        };
        Ok(TrainOutcome {
            steps_run,
            final_checkpoint,
            trace: self.trace,
        })
    }

    fn phase_datasets<'a>(
        &self,
        phase: u8,
        data: &CurriculumData<'a>,
    ) -> Result<(&'a DomainDataset, &'a DomainDataset)> {
        if phase == 1 {
            Ok((
                require_dataset(data.mono_x, DatasetMode::Mono, "phase-1 mono X")?,
                require_dataset(data.mono_y, DatasetMode::Mono, "phase-1 mono Y")?,
            ))
        } else {
            Ok((
                require_dataset(data.stereo_x, DatasetMode::Stereo, "phase-2 stereo X")?,
                require_dataset(data.stereo_y, DatasetMode::Stereo, "phase-2 stereo Y")?,
            ))
        }
    }

    fn write_diagnostic_dump(&self, out_dir: Option<&Path>, step: u64, detail: &str) -> String {
        let Some(dir) = out_dir else {
            return "(no output directory for dump)".into();
        };
        let mut norms = serde_json::Map::new();
        for (prefix, store) in [
            ("g", self.g.store()),
            ("f", self.f.store()),
            ("d_x", self.d_x.store()),
            ("d_y", self.d_y.store()),
        ] {
            for (name, a) in store.iter() {
                let l2: f64 = a.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
                norms.insert(format!("{prefix}/{name}"), serde_json::json!(l2));
            }
        }
        let dump = serde_json::json!({
            "step": step,
            "detail": detail,
            "config": {
                "training": self.cfg,
                "loss": self.loss_cfg,
                "model": self.model_cfg,
            },
            "phase": self.pos.phase,
            "parameter_l2_norms": norms,
        });
        let path = dir.join(format!("diagnostic_step{step}.json"));
        match std::fs::write(&path, serde_json::to_vec_pretty(&dump).expect("serializable")) {
            Ok(()) => path.display().to_string(),
            Err(e) => format!("(dump write failed: {e})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslateMode {
    Mono,
    Stereo,
    Baseline,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Translated {
    Mono(Image),
    Stereo(Image, Image),
}

impl TrainerState {
    /// The translation mode matching how this model was trained.
    pub fn default_translate_mode(&self) -> TranslateMode {
        match self.cfg.mode {
            TrainMode::Stereo => TranslateMode::Stereo,
            TrainMode::Mono => TranslateMode::Mono,
            TrainMode::Baseline => TranslateMode::Baseline,
        }
    }

    /// Translates X-domain input(s) to the Y domain.
    ///
    /// Mono: `G(x, y_w)`. Stereo: chained generation (requires the
    /// conditional model and a right image). Baseline: each eye translated
    /// independently by the unconditional generator.
    pub fn translate(
        &self,
        x_l: &Image,
        x_r: Option<&Image>,
        y_w: Option<&Image>,
        mode: TranslateMode,
    ) -> Result<Translated> {
        match mode {
            TranslateMode::Mono => {
                let cond = if self.conditional() {
                    Some(y_w.ok_or_else(|| {
                        Error::InvalidConfig("mono translation with a conditional model needs a condition image".into())
                    })?)
                } else {
                    None
                };
                Ok(Translated::Mono(self.g.forward_image(x_l, cond)?))
            }
            TranslateMode::Stereo => {
                if !self.conditional() {
                    return Err(Error::InvalidConfig(
                        "stereo (chained) translation needs the conditional model; use baseline mode".into(),
                    ));
                }
                let x_r = x_r.ok_or_else(|| {
                    Error::InvalidConfig("stereo translation requires a right image".into())
                })?;
                let y_w = y_w.ok_or_else(|| {
                    Error::InvalidConfig("stereo translation requires a condition image".into())
                })?;
                let (l, r) = generate_stereo(&self.g, x_l, x_r, y_w)?;
                Ok(Translated::Stereo(l, r))
            }
            TranslateMode::Baseline => {
                if self.conditional() {
                    return Err(Error::InvalidConfig(
                        "baseline translation needs the unconditional model".into(),
                    ));
                }
                let x_r = x_r.ok_or_else(|| {
                    Error::InvalidConfig("baseline stereo translation requires a right image".into())
                })?;
                Ok(Translated::Stereo(
                    self.g.forward_image(x_l, None)?,
                    self.g.forward_image(x_r, None)?,
                ))
            }
        }
    }
}
