//! Adam, the three-player training step, fold orchestration and the training log.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_video, EvalConfig, EvalReport, FoldEval};
use crate::losses::{self, LossBundle, LossParts};
use crate::models::{write_checkpoint, ModelDims, Noise, SumGanModel, Variant, VariantSpec};
use crate::params::{Ctx, GroupSet, ParamGroup, ParamId, ParamStore};
use crate::tensor::{Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Learning rate of the summarizer and generator.
    pub lr_main: f64,
    pub lr_discriminator: f64,
    /// Target summary rate of the sparsity loss.
    pub sigma: f64,
    pub folds: usize,
    pub seed: u64,
    /// Global gradient-norm limit per sub-update; 0 disables clipping.
    pub grad_clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr_main: 1e-4,
            lr_discriminator: 1e-5,
            sigma: 0.3,
            folds: 5,
            seed: 0,
            grad_clip_norm: 5.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr_main > 0.0 && self.lr_discriminator > 0.0) {
            return fail(format!(
                "learning rates must be positive (lr_main={}, lr_discriminator={})",
                self.lr_main, self.lr_discriminator
            ));
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return fail(format!("sigma {} outside [0, 1]", self.sigma));
        }
        if self.folds < 2 {
            return fail(format!("folds must be at least 2, got {}", self.folds));
        }
        if self.grad_clip_norm.is_nan() || self.grad_clip_norm < 0.0 {
            return fail(format!("grad_clip_norm {} must be ≥ 0", self.grad_clip_norm));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.adam_eps > 0.0) {
            return fail("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        Ok(())
    }
}

/// First and second moment buffers plus the step counter for one parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let m: Vec<Tensor> = shapes.into_iter().map(Tensor::zeros).collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamHyper {
    fn from(c: &TrainConfig) -> Self {
        Self {
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.adam_eps,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64, hyper: AdamHyper) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "adam: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::Contract(format!(
                "adam: shapes {:?}, {:?}, {:?} differ",
                p.shape(),
                g.shape(),
                m.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mj, gj) in m.iter_mut().zip(g) {
            *mj = hyper.beta1 * *mj + (1.0 - hyper.beta1) * gj;
        }
        let v = state.v[i].data_mut();
        for (vj, gj) in v.iter_mut().zip(g) {
            *vj = hyper.beta2 * *vj + (1.0 - hyper.beta2) * gj * gj;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((pj, mj), vj) in p.data_mut().iter_mut().zip(m).zip(v) {
            *pj -= lr * (mj / c1) / ((vj / c2).sqrt() + hyper.eps);
        }
    }
    Ok(())
}

fn global_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global L2 norm is at most `max_norm` (0 disables).
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

/// Adam over every parameter of one group.
#[derive(Clone, Debug)]
pub struct GroupOptimizer {
    pub group: ParamGroup,
    ids: Vec<ParamId>,
    pub state: AdamState,
}

impl GroupOptimizer {
    pub fn new(store: &ParamStore, group: ParamGroup) -> Self {
        let ids = store.ids_in(group);
        let state = AdamState::new(ids.iter().map(|&id| store.get(id).value.shape()));
        Self { group, ids, state }
    }

    /// Dense gradients of the group, zero for parameters the graph never touched.
    fn gather(&self, store: &ParamStore, grads: Vec<(ParamId, Tensor)>) -> Vec<Tensor> {
        let mut dense: Vec<Option<Tensor>> = vec![None; store.len()];
        for (id, g) in grads {
            dense[id.index()] = Some(g);
        }
        self.ids
            .iter()
            .map(|&id| dense[id.index()].take().unwrap_or_else(|| Tensor::zeros(store.get(id).value.shape())))
            .collect()
    }

    /// Clips, then applies Adam. Returns the pre-clip gradient norm.
    pub fn apply(&mut self, store: &mut ParamStore, grads: Vec<(ParamId, Tensor)>, lr: f64, clip: f64, hyper: AdamHyper) -> Result<f64> {
        let mut dense = self.gather(store, grads);
        let norm = clip_global_norm(&mut dense, clip);
        let group = self.group;
        let mut params: Vec<&mut Tensor> = store
            .iter_mut()
            .filter(|p| p.group == group)
            .map(|p| &mut p.value)
            .collect();
        adam_step(&mut params, &dense, &mut self.state, lr, hyper)?;
        Ok(norm)
    }
}

/// Model plus the three optimizers and the noise stream of one fold.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: SumGanModel,
    pub summarizer: GroupOptimizer,
    pub generator: GroupOptimizer,
    pub discriminator: GroupOptimizer,
    noise: ChaCha8Rng,
}

impl TrainState {
    pub fn new(model: SumGanModel, noise_seed: u64) -> Self {
        Self {
            summarizer: GroupOptimizer::new(&model.store, ParamGroup::Summarizer),
            generator: GroupOptimizer::new(&model.store, ParamGroup::Generator),
            discriminator: GroupOptimizer::new(&model.store, ParamGroup::Discriminator),
            model,
            noise: ChaCha8Rng::seed_from_u64(noise_seed),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradNorms {
    pub summarizer: f64,
    pub generator: f64,
    pub discriminator: f64,
}

/// One `(epoch, video)` training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub fold: usize,
    pub epoch: usize,
    pub video: String,
    pub losses: LossBundle,
    /// Discriminator probabilities of "original" in the discriminator update.
    pub d_real: f64,
    pub d_fake: f64,
    pub d_prior_fake: f64,
    /// Pre-clip gradient norms.
    pub grad_norm: GradNorms,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub fold: usize,
    pub epoch: usize,
    /// Per-term means over the epoch's videos.
    pub mean: LossBundle,
    /// Fraction of originals classified as original.
    pub disc_acc_real: f64,
    /// Fraction of reconstructions and prior samples classified as fake.
    pub disc_acc_fake: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Step(StepRecord),
    Epoch(EpochRecord),
}

impl LogRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log record serializes")
    }
}

/// Renders records as line-delimited JSON.
pub fn log_to_jsonl(records: &[LogRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    out
}

struct Where<'a> {
    epoch: usize,
    video: &'a str,
}

impl Where<'_> {
    fn non_finite(&self, term: &'static str) -> Error {
        Error::NonFiniteLoss {
            term,
            epoch: self.epoch,
            video: self.video.to_string(),
        }
    }

    /// Maps a non-finite intermediate inside a sub-update to an abort naming that update.
    fn guard<T>(&self, update: &'static str, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            Error::Tensor(TensorError::NonFinite { .. }) => self.non_finite(update),
            e => e,
        })
    }

    fn check(&self, ctx: &Ctx, term: &'static str, v: Var) -> Result<f64> {
        let x = ctx.value(v).item();
        if x.is_finite() {
            Ok(x)
        } else {
            Err(self.non_finite(term))
        }
    }
}

/// Summarizer update: reconstruction + prior + sparsity.
fn summarizer_update(state: &mut TrainState, features: &Tensor, cfg: &TrainConfig, at: &Where) -> Result<(f64, Option<f64>, f64, f64)> {
    let model = &state.model;
    let mut ctx = Ctx::new(&model.store, GroupSet::only(ParamGroup::Summarizer));
    let mut noise = Noise::Sample(&mut state.noise);
    let forward = |ctx: &mut Ctx, noise: &mut Noise| -> Result<(Var, Option<Var>, Var)> {
        let x = model.input(ctx, features)?;
        let c = model.compress(ctx, x)?;
        let s = model.select_scores(ctx, c)?;
        let w = model.weight_frames(ctx, c, s)?;
        let latent = model.encode(ctx, w, noise)?;
        let xhat = model.decode(ctx, &latent, features.rows())?;
        let real = model.discriminate(ctx, c)?;
        let fake = model.discriminate(ctx, xhat)?;
        let reconst = losses::reconstruction_loss(ctx, real.phi, fake.phi)?;
        let prior = match (latent.mu, latent.logvar) {
            (Some(m), Some(lv)) => Some(losses::prior_loss(ctx, m, lv)?),
            _ => None,
        };
        let sparsity = losses::sparsity_loss(ctx, s, cfg.sigma)?;
        Ok((reconst, prior, sparsity))
    };
    let (reconst, prior, sparsity) = at.guard("summarizer", forward(&mut ctx, &mut noise))?;
    let r = at.check(&ctx, "reconst", reconst)?;
    let p = prior.map(|p| at.check(&ctx, "prior", p)).transpose()?;
    let sp = at.check(&ctx, "sparsity", sparsity)?;
    let mut total = ctx.add(reconst, sparsity)?;
    if let Some(p) = prior {
        total = ctx.add(total, p)?;
    }
    at.guard("summarizer", ctx.backward(total).map_err(Error::from))?;
    let grads = ctx.param_grads();
    drop(ctx);
    let norm = state
        .summarizer
        .apply(&mut state.model.store, grads, cfg.lr_main, cfg.grad_clip_norm, cfg.into())?;
    Ok((r, p, sp, norm))
}

struct GeneratorOut {
    gan_g: f64,
    norm: f64,
    real: Tensor,
    fake: Tensor,
    prior_fake: Tensor,
}

/// Generator update: reconstruction + non-saturating adversarial loss.
fn generator_update(state: &mut TrainState, features: &Tensor, cfg: &TrainConfig, at: &Where) -> Result<GeneratorOut> {
    let model = &state.model;
    let mut ctx = Ctx::new(&model.store, GroupSet::only(ParamGroup::Generator));
    let mut noise = Noise::Sample(&mut state.noise);
    let trace = at.guard("generator", model.forward_full(&mut ctx, features, &mut noise, None))?;
    let reconst = at.guard(
        "reconst",
        losses::reconstruction_loss(&mut ctx, trace.real.phi, trace.fake.phi),
    )?;
    let gan_g = at.guard(
        "gan_g",
        losses::generator_loss(&mut ctx, &[trace.fake.prob_original, trace.prior_fake.prob_original]),
    )?;
    at.check(&ctx, "reconst", reconst)?;
    let g = at.check(&ctx, "gan_g", gan_g)?;
    let total = ctx.add(reconst, gan_g)?;
    at.guard("generator", ctx.backward(total).map_err(Error::from))?;
    let grads = ctx.param_grads();
    let real = ctx.value(trace.compressed).clone();
    let fake = ctx.value(trace.reconstruction).clone();
    let prior_fake = ctx.value(trace.prior_reconstruction).clone();
    drop(ctx);
    let norm = state
        .generator
        .apply(&mut state.model.store, grads, cfg.lr_main, cfg.grad_clip_norm, cfg.into())?;
    Ok(GeneratorOut {
        gan_g: g,
        norm,
        real,
        fake,
        prior_fake,
    })
}

/// Result of one discriminator update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscriminatorStep {
    /// `−L_GAN` before the update.
    pub loss: f64,
    pub d_real: f64,
    pub d_fake: f64,
    pub d_prior_fake: f64,
    pub grad_norm: f64,
}

/// Discriminator update on fixed compressed sequences: minimize `−L_GAN`.
pub fn discriminator_step(
    state: &mut TrainState,
    real: &Tensor,
    fake: &Tensor,
    prior_fake: &Tensor,
    cfg: &TrainConfig,
) -> Result<DiscriminatorStep> {
    discriminator_update(state, real, fake, prior_fake, cfg, &Where { epoch: 0, video: "" })
}

fn discriminator_update(
    state: &mut TrainState,
    real: &Tensor,
    fake: &Tensor,
    prior_fake: &Tensor,
    cfg: &TrainConfig,
    at: &Where,
) -> Result<DiscriminatorStep> {
    let model = &state.model;
    let mut ctx = Ctx::new(&model.store, GroupSet::only(ParamGroup::Discriminator));
    let forward = |ctx: &mut Ctx| -> Result<_> {
        let r = ctx.constant(real.clone());
        let f = ctx.constant(fake.clone());
        let p = ctx.constant(prior_fake.clone());
        let dr = model.discriminate(ctx, r)?.prob_original;
        let df = model.discriminate(ctx, f)?.prob_original;
        let dp = model.discriminate(ctx, p)?.prob_original;
        let gan = losses::gan_losses(ctx, dr, df, dp)?;
        Ok((dr, df, dp, gan.discriminator_loss))
    };
    let (dr, df, dp, loss) = at.guard("discriminator", forward(&mut ctx))?;
    let l = at.check(&ctx, "gan_d", loss)?;
    let (d_real, d_fake, d_prior_fake) = (ctx.value(dr).item(), ctx.value(df).item(), ctx.value(dp).item());
    at.guard("discriminator", ctx.backward(loss).map_err(Error::from))?;
    let grads = ctx.param_grads();
    drop(ctx);
    let norm = state.discriminator.apply(
        &mut state.model.store,
        grads,
        cfg.lr_discriminator,
        cfg.grad_clip_norm,
        cfg.into(),
    )?;
    Ok(DiscriminatorStep {
        loss: l,
        d_real,
        d_fake,
        d_prior_fake,
        grad_norm: norm,
    })
}

/// One video: summarizer, generator, then discriminator update. The
/// discriminator sees the originals and fakes produced in the generator update.
pub fn train_step(state: &mut TrainState, features: &Tensor, video: &str, fold: usize, epoch: usize, cfg: &TrainConfig) -> Result<StepRecord> {
    let at = Where { epoch, video };
    let (reconst, prior, sparsity, n_sum) = summarizer_update(state, features, cfg, &at)?;
    let gen = generator_update(state, features, cfg, &at)?;
    let dis = discriminator_update(state, &gen.real, &gen.fake, &gen.prior_fake, cfg, &at)?;
    let parts = LossParts {
        reconst,
        prior,
        sparsity,
        gan_d: dis.loss,
        gan_g: gen.gan_g,
    };
    Ok(StepRecord {
        fold,
        epoch,
        video: video.to_string(),
        losses: losses::compose(state.model.variant(), parts, cfg.sigma)?,
        d_real: dis.d_real,
        d_fake: dis.d_fake,
        d_prior_fake: dis.d_prior_fake,
        grad_norm: GradNorms {
            summarizer: n_sum,
            generator: gen.norm,
            discriminator: dis.grad_norm,
        },
    })
}

/// Selector-only update on the sparsity loss; returns `mean(s)` before the update.
pub fn sparsity_step(state: &mut TrainState, features: &Tensor, cfg: &TrainConfig) -> Result<f64> {
    let model = &state.model;
    let mut ctx = Ctx::new(&model.store, GroupSet::only(ParamGroup::Summarizer));
    let x = model.input(&mut ctx, features)?;
    let c = model.compress(&mut ctx, x)?;
    let s = model.select_scores(&mut ctx, c)?;
    let mean = ctx.value(s).sum() / features.rows() as f64;
    let loss = losses::sparsity_loss(&mut ctx, s, cfg.sigma)?;
    ctx.backward(loss)?;
    let grads = ctx.param_grads();
    drop(ctx);
    state
        .summarizer
        .apply(&mut state.model.store, grads, cfg.lr_main, cfg.grad_clip_norm, cfg.into())?;
    Ok(mean)
}

fn epoch_record(fold: usize, epoch: usize, steps: &[StepRecord], sigma: f64) -> EpochRecord {
    let n = steps.len().max(1) as f64;
    let mean = |f: &dyn Fn(&StepRecord) -> f64| steps.iter().map(f).sum::<f64>() / n;
    let has_prior = steps.first().is_some_and(|s| s.losses.prior.is_some());
    EpochRecord {
        fold,
        epoch,
        mean: LossBundle {
            reconst: mean(&|s| s.losses.reconst),
            prior: has_prior.then(|| mean(&|s| s.losses.prior.unwrap_or(0.0))),
            sparsity: mean(&|s| s.losses.sparsity),
            gan_d: mean(&|s| s.losses.gan_d),
            gan_g: mean(&|s| s.losses.gan_g),
            sigma_target: sigma,
        },
        disc_acc_real: mean(&|s| f64::from(s.d_real > 0.5)),
        disc_acc_fake: mean(&|s| (f64::from(s.d_fake < 0.5) + f64::from(s.d_prior_fake < 0.5)) / 2.0),
    }
}

/// Derives an independent seed for a named stream.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const STREAM_SPLIT: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_ORDER: u64 = 4;

/// Videos shuffled once from `seed`, then cut into `folds` contiguous groups
/// whose sizes differ by at most one.
pub fn fold_split(num_videos: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || num_videos < folds {
        return Err(Error::Config(format!(
            "{num_videos} videos cannot be split into {folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..num_videos).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(seed, STREAM_SPLIT)));
    let base = num_videos / folds;
    let extra = num_videos % folds;
    let mut groups = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        groups.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(groups)
}

/// Everything needed to train and evaluate one variant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub variant: Variant,
    /// `input_dim` is taken from the dataset.
    pub dims: ModelDims,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            dims: ModelDims::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.eval.validate()?;
        if self.dims.heads == 0 || !self.dims.dim.is_multiple_of(self.dims.heads) {
            return Err(Error::Config(format!(
                "dim {} is not divisible by heads {}",
                self.dims.dim, self.dims.heads
            )));
        }
        Ok(())
    }

    /// Every setting as `key → value`, for reports.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let t = &self.train;
        let d = &self.dims;
        [
            ("variant", self.variant.name().to_string()),
            ("input_dim", d.input_dim.to_string()),
            ("dim", d.dim.to_string()),
            ("hidden", d.hidden.to_string()),
            ("heads", d.heads.to_string()),
            ("recurrent_layers", d.recurrent_layers.to_string()),
            ("epochs", t.epochs.to_string()),
            ("lr_main", t.lr_main.to_string()),
            ("lr_discriminator", t.lr_discriminator.to_string()),
            ("sigma", t.sigma.to_string()),
            ("folds", t.folds.to_string()),
            ("seed", t.seed.to_string()),
            ("grad_clip_norm", t.grad_clip_norm.to_string()),
            ("beta1", t.beta1.to_string()),
            ("beta2", t.beta2.to_string()),
            ("adam_eps", t.adam_eps.to_string()),
            ("budget_fraction", self.eval.budget_fraction.to_string()),
            ("gt_threshold", self.eval.gt_threshold.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Final-epoch model.
    pub model: SumGanModel,
    pub checkpoint: Vec<u8>,
    pub log: Vec<LogRecord>,
    pub eval: FoldEval,
    /// Wall-clock seconds per epoch; kept apart from `log` so logs stay reproducible.
    pub epoch_seconds: Vec<f64>,
}

/// Trains on every group but `fold`, then evaluates the final-epoch model on group `fold`.
pub fn run_fold(dataset: &Dataset, fold: usize, cfg: &ExperimentConfig) -> Result<FoldOutcome> {
    cfg.validate()?;
    dataset.validate()?;
    let t = &cfg.train;
    let groups = fold_split(dataset.videos.len(), t.folds, t.seed)?;
    if fold >= groups.len() {
        return Err(Error::Config(format!("fold {fold} out of range for {} folds", t.folds)));
    }
    let test: Vec<usize> = groups[fold].clone();
    let mut train: Vec<usize> = groups
        .iter()
        .enumerate()
        .filter(|&(f, _)| f != fold)
        .flat_map(|(_, g)| g.iter().copied())
        .collect();

    let dims = ModelDims {
        input_dim: dataset.feature_dim(),
        ..cfg.dims
    };
    let fold_stream = 16 * fold as u64;
    let spec = VariantSpec::new(cfg.variant, dims, sub_seed(t.seed, STREAM_INIT + fold_stream));
    let model = SumGanModel::new(spec)?;
    let mut state = TrainState::new(model, sub_seed(t.seed, STREAM_NOISE + fold_stream));
    let mut order_rng = ChaCha8Rng::seed_from_u64(sub_seed(t.seed, STREAM_ORDER + fold_stream));

    let mut log = Vec::new();
    let mut epoch_seconds = Vec::with_capacity(t.epochs);
    for epoch in 0..t.epochs {
        let started = Instant::now();
        train.shuffle(&mut order_rng);
        let mut steps = Vec::with_capacity(train.len());
        for &vi in &train {
            let v = &dataset.videos[vi];
            steps.push(train_step(&mut state, &v.features, &v.id, fold, epoch, t)?);
        }
        let summary = epoch_record(fold, epoch, &steps, t.sigma);
        log.extend(steps.into_iter().map(LogRecord::Step));
        log.push(LogRecord::Epoch(summary));
        epoch_seconds.push(started.elapsed().as_secs_f64());
    }

    let videos = test
        .iter()
        .map(|&vi| evaluate_video(&state.model, &dataset.videos[vi], dataset.protocol, &cfg.eval))
        .collect::<Result<Vec<_>>>()?;
    let ids = |idx: &[usize]| idx.iter().map(|&i| dataset.videos[i].id.clone()).collect();
    train.sort_unstable();
    Ok(FoldOutcome {
        fold,
        train_ids: ids(&train),
        test_ids: ids(&test),
        checkpoint: write_checkpoint(&state.model, t.epochs),
        model: state.model,
        log,
        eval: FoldEval::new(fold, videos),
        epoch_seconds,
    })
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub folds: Vec<FoldOutcome>,
    pub report: EvalReport,
}

impl ExperimentOutcome {
    /// All fold logs, concatenated in fold order.
    pub fn log(&self) -> Vec<LogRecord> {
        self.folds.iter().flat_map(|f| f.log.iter().cloned()).collect()
    }
}

/// Runs every fold, `parallel` at a time, and aggregates the evaluation.
/// Results do not depend on `parallel`.
pub fn run_experiment(dataset: &Dataset, cfg: &ExperimentConfig, parallel: usize) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    dataset.validate()?;
    let folds = cfg.train.folds;
    fold_split(dataset.videos.len(), folds, cfg.train.seed)?;
    let workers = parallel.clamp(1, folds);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<FoldOutcome>>>> = Mutex::new((0..folds).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let f = next.fetch_add(1, Ordering::SeqCst);
                if f >= folds {
                    break;
                }
                let r = run_fold(dataset, f, cfg);
                let failed = r.is_err();
                results.lock().expect("fold results lock")[f] = Some(r);
                if failed {
                    next.store(folds, Ordering::SeqCst);
                }
            });
        }
    });
    let mut outcomes = Vec::with_capacity(folds);
    for r in results.into_inner().expect("fold results lock").into_iter().flatten() {
        outcomes.push(r?);
    }
    if outcomes.len() != folds {
        return Err(Error::Contract("fold did not run".into()));
    }
    let report = EvalReport::new(
        cfg.variant.name(),
        &dataset.name,
        dataset.protocol,
        cfg.to_map(),
        outcomes.iter().map(|o| o.eval.clone()).collect(),
    );
    Ok(ExperimentOutcome {
        folds: outcomes,
        report,
    })
}
