//! The six architecture variants and their forward passes:
//! compression → frame selector → weighting → encode → decode → discriminate.

mod checkpoint;
mod gradcheck;
mod variant;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointManifest};
pub use gradcheck::{grad_check_model, ModelGradCheck};
pub use variant::{DecoderKind, EncoderKind, ModelDims, SelectorKind, Variant, VariantSpec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::layers::{
    add_positions, BiLstm, EncoderBlock, Linear, Lstm, MultiHeadAttention, TransformerSeq2Seq,
    TransformerSequenceEncoder,
};
use crate::losses::{self, GanTerms};
use crate::params::{Ctx, ParamGroup, ParamStore};
use crate::tensor::{Tensor, Var};

/// Source of the standard-normal draws used by reparameterization and prior sampling.
pub enum Noise<'a> {
    Sample(&'a mut ChaCha8Rng),
    /// Every draw is zero, so `e = mu`.
    Zero,
}

impl Noise<'_> {
    pub fn standard_normal(&mut self, len: usize) -> Vec<f64> {
        match self {
            Noise::Sample(rng) => (0..len).map(|_| StandardNormal.sample(&mut **rng)).collect(),
            Noise::Zero => vec![0.0; len],
        }
    }
}

#[derive(Clone, Debug)]
enum Selector {
    BiLstm { net: BiLstm, head: Linear },
    SelfAttention { att: MultiHeadAttention, head: Linear },
}

#[derive(Clone, Debug)]
enum VaeEncoder {
    Lstm(Lstm),
    Transformer(EncoderBlock),
    Tse(TransformerSequenceEncoder),
}

#[derive(Clone, Debug)]
enum Body {
    Vae {
        encoder: VaeEncoder,
        mu: Linear,
        logvar: Linear,
        decoder: Lstm,
        head: Linear,
    },
    Seq2Seq(TransformerSeq2Seq),
}

#[derive(Clone, Debug)]
struct Discriminator {
    lstm: Lstm,
    head: Linear,
}

/// Encoder output. For variants without a VAE, `mu`/`logvar` are absent,
/// `e` is the time-pooled encoder memory and `memory` holds the full sequence.
#[derive(Clone, Copy, Debug)]
pub struct Latent {
    pub mu: Option<Var>,
    pub logvar: Option<Var>,
    pub e: Var,
    pub memory: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct DiscOutput {
    /// Last hidden state of the top discriminator layer.
    pub phi: Var,
    /// Probability of the class "original".
    pub prob_original: Var,
}

/// Every intermediate of one full forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardTrace {
    pub compressed: Var,
    pub scores: Var,
    pub weighted: Var,
    pub latent: Latent,
    pub reconstruction: Var,
    pub prior_reconstruction: Var,
    pub real: DiscOutput,
    pub fake: DiscOutput,
    pub prior_fake: DiscOutput,
}

/// Loss nodes derived from a trace.
#[derive(Clone, Copy, Debug)]
pub struct TraceLosses {
    pub reconst: Var,
    pub prior: Option<Var>,
    pub sparsity: Var,
    pub gan: GanTerms,
}

#[derive(Clone, Debug)]
pub struct SumGanModel {
    spec: VariantSpec,
    pub store: ParamStore,
    compress: Linear,
    selector: Selector,
    body: Body,
    discriminator: Discriminator,
}

impl SumGanModel {
    pub fn new(spec: VariantSpec) -> Result<Self> {
        let d = spec.dims;
        if d.input_dim == 0 || d.dim == 0 || d.hidden == 0 || d.recurrent_layers == 0 {
            return Err(Error::Config(format!("degenerate model dimensions {d:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut store = ParamStore::new();
        let sum = ParamGroup::Summarizer;
        let gen = ParamGroup::Generator;

        let compress = Linear::new(&mut store, "compress", sum, d.input_dim, d.dim, &mut rng);
        let selector = match spec.variant.selector() {
            SelectorKind::BiLstm => {
                let net = BiLstm::new(&mut store, "selector.bilstm", sum, d.dim, d.hidden, d.recurrent_layers, &mut rng);
                let head = Linear::new(&mut store, "selector.score", sum, net.out_dim(), 1, &mut rng);
                Selector::BiLstm { net, head }
            }
            SelectorKind::SelfAttention => {
                let att = MultiHeadAttention::new(&mut store, "selector.attn", sum, d.dim, d.heads, &mut rng)?;
                let head = Linear::new(&mut store, "selector.score", sum, d.dim, 1, &mut rng);
                Selector::SelfAttention { att, head }
            }
        };
        let body = if spec.variant.has_vae() {
            let (encoder, enc_width) = match spec.variant.encoder() {
                EncoderKind::LstmVae => (
                    VaeEncoder::Lstm(Lstm::new(&mut store, "encoder.lstm", sum, d.dim, d.hidden, d.recurrent_layers, &mut rng)),
                    d.hidden,
                ),
                EncoderKind::TransformerBlock => (
                    VaeEncoder::Transformer(EncoderBlock::new(&mut store, "encoder.block", sum, d.dim, d.heads, &mut rng)?),
                    d.dim,
                ),
                EncoderKind::Tse => (
                    VaeEncoder::Tse(TransformerSequenceEncoder::new(
                        &mut store, "encoder.tse", sum, d.dim, d.hidden, d.heads, &mut rng,
                    )?),
                    d.hidden,
                ),
                EncoderKind::Seq2Seq => unreachable!("seq2seq variants have no VAE"),
            };
            let mu = Linear::new(&mut store, "encoder.mu", sum, enc_width, d.hidden, &mut rng);
            let logvar = Linear::new(&mut store, "encoder.logvar", sum, enc_width, d.hidden, &mut rng);
            let decoder = Lstm::new(&mut store, "decoder.lstm", gen, 0, d.hidden, d.recurrent_layers, &mut rng);
            let head = Linear::new(&mut store, "decoder.out", gen, d.hidden, d.dim, &mut rng);
            Body::Vae {
                encoder,
                mu,
                logvar,
                decoder,
                head,
            }
        } else {
            Body::Seq2Seq(TransformerSeq2Seq::new(&mut store, "seq2seq", sum, gen, d.dim, d.heads, &mut rng)?)
        };
        let dis = ParamGroup::Discriminator;
        let discriminator = Discriminator {
            lstm: Lstm::new(&mut store, "discriminator.lstm", dis, d.dim, d.hidden, d.recurrent_layers, &mut rng),
            head: Linear::new(&mut store, "discriminator.out", dis, d.hidden, 2, &mut rng),
        };
        Ok(Self {
            spec,
            store,
            compress,
            selector,
            body,
            discriminator,
        })
    }

    pub fn spec(&self) -> &VariantSpec {
        &self.spec
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn dims(&self) -> ModelDims {
        self.spec.dims
    }

    /// Raw features `[N×M]` as a graph constant, after checking the feature width.
    pub fn input(&self, ctx: &mut Ctx, features: &Tensor) -> Result<Var> {
        let m = self.spec.dims.input_dim;
        if features.rank() != 2 || features.cols() != m || features.rows() == 0 {
            return Err(Error::Ingestion(format!(
                "expected features of shape [N×{m}] with N ≥ 1, got {:?}",
                features.shape()
            )));
        }
        Ok(ctx.constant(features.clone()))
    }

    pub fn compress(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        Ok(self.compress.forward(ctx, x)?)
    }

    /// Per-frame importance scores `[N]`, each in `[0, 1]`.
    pub fn select_scores(&self, ctx: &mut Ctx, compressed: Var) -> Result<Var> {
        let n = ctx.shape(compressed)[0];
        let logits = match &self.selector {
            Selector::BiLstm { net, head } => {
                let h = net.forward(ctx, compressed)?;
                head.forward(ctx, h)?
            }
            Selector::SelfAttention { att, head } => {
                let x = add_positions(ctx, compressed)?;
                let h = att.self_attention(ctx, x)?.output;
                head.forward(ctx, h)?
            }
        };
        let logits = ctx.reshape(logits, &[n])?;
        Ok(ctx.sigmoid(logits)?)
    }

    /// `x_t · s_t`
    pub fn weight_frames(&self, ctx: &mut Ctx, compressed: Var, scores: Var) -> Result<Var> {
        Ok(ctx.mul_rows(compressed, scores)?)
    }

    pub fn encode(&self, ctx: &mut Ctx, weighted: Var, noise: &mut Noise) -> Result<Latent> {
        match &self.body {
            Body::Vae {
                encoder, mu, logvar, ..
            } => {
                let summary = match encoder {
                    VaeEncoder::Lstm(lstm) => {
                        let out = lstm.forward(ctx, weighted, None)?;
                        let last = *out.finals.last().expect("at least one layer");
                        ctx.narrow(last, 0, lstm.hidden())?
                    }
                    VaeEncoder::Transformer(block) => {
                        let x = add_positions(ctx, weighted)?;
                        let h = block.forward(ctx, x)?;
                        ctx.mean(h, Some(0))?
                    }
                    VaeEncoder::Tse(tse) => tse.forward(ctx, weighted)?,
                };
                let m = mu.forward(ctx, summary)?;
                let lv = logvar.forward(ctx, summary)?;
                let eps = noise.standard_normal(self.spec.dims.hidden);
                let eps = ctx.constant(Tensor::from_parts(vec![eps.len()], eps));
                let half = ctx.scale(lv, 0.5)?;
                let std = ctx.exp(half)?;
                let spread = ctx.mul(std, eps)?;
                let e = ctx.add(m, spread)?;
                Ok(Latent {
                    mu: Some(m),
                    logvar: Some(lv),
                    e,
                    memory: None,
                })
            }
            Body::Seq2Seq(s2s) => {
                let memory = s2s.encode(ctx, weighted)?;
                let e = ctx.mean(memory, Some(0))?;
                Ok(Latent {
                    mu: None,
                    logvar: None,
                    e,
                    memory: Some(memory),
                })
            }
        }
    }

    /// Reconstructs `[len×d]` from a latent.
    pub fn decode(&self, ctx: &mut Ctx, latent: &Latent, len: usize) -> Result<Var> {
        match &self.body {
            Body::Vae { decoder, head, .. } => self.lstm_decode(ctx, decoder, head, latent.e, len),
            Body::Seq2Seq(s2s) => {
                let memory = latent
                    .memory
                    .ok_or_else(|| Error::Contract("transformer decoding needs encoder memory".into()))?;
                s2s.decode(ctx, memory, len)
            }
        }
    }

    fn lstm_decode(&self, ctx: &mut Ctx, decoder: &Lstm, head: &Linear, e: Var, len: usize) -> Result<Var> {
        let hidden = decoder.hidden();
        let zeros_c = ctx.constant(Tensor::zeros(&[hidden]));
        let init = ctx.concat(&[e, zeros_c])?;
        let inits = vec![init; decoder.layers.len()];
        let inputs = ctx.constant(Tensor::zeros(&[len, 0]));
        let out = decoder.forward(ctx, inputs, Some(&inits))?;
        Ok(head.forward(ctx, out.outputs)?)
    }

    /// Reconstruction from a prior draw: `e_p ~ N(0, I)` decoded for VAE
    /// variants; a standard-normal pseudo-sequence through the transformer otherwise.
    pub fn sample_prior_reconstruction(&self, ctx: &mut Ctx, len: usize, noise: &mut Noise) -> Result<Var> {
        let d = self.spec.dims;
        match &self.body {
            Body::Vae { decoder, head, .. } => {
                let e = noise.standard_normal(d.hidden);
                let e = ctx.constant(Tensor::from_parts(vec![d.hidden], e));
                self.lstm_decode(ctx, decoder, head, e, len)
            }
            Body::Seq2Seq(s2s) => {
                let z = noise.standard_normal(len * d.dim);
                let z = ctx.constant(Tensor::from_parts(vec![len, d.dim], z));
                s2s.forward(ctx, z)
            }
        }
    }

    pub fn discriminate(&self, ctx: &mut Ctx, seq: Var) -> Result<DiscOutput> {
        let lstm = &self.discriminator.lstm;
        let out = lstm.forward(ctx, seq, None)?;
        let last = *out.finals.last().expect("at least one layer");
        let phi = ctx.narrow(last, 0, lstm.hidden())?;
        let logits = self.discriminator.head.forward(ctx, phi)?;
        let probs = ctx.softmax(logits, 0)?;
        let p = ctx.narrow(probs, 0, 1)?;
        let prob_original = ctx.reshape(p, &[])?;
        Ok(DiscOutput { phi, prob_original })
    }

    /// Complete pass. `score_override` replaces the selector output when given.
    pub fn forward_full(
        &self,
        ctx: &mut Ctx,
        features: &Tensor,
        noise: &mut Noise,
        score_override: Option<&Tensor>,
    ) -> Result<ForwardTrace> {
        let x = self.input(ctx, features)?;
        let n = features.rows();
        let compressed = self.compress(ctx, x)?;
        let scores = match score_override {
            Some(s) => {
                if s.shape() != [n] {
                    return Err(Error::Contract(format!("score override shape {:?}", s.shape())));
                }
                ctx.constant(s.clone())
            }
            None => self.select_scores(ctx, compressed)?,
        };
        let weighted = self.weight_frames(ctx, compressed, scores)?;
        let latent = self.encode(ctx, weighted, noise)?;
        let reconstruction = self.decode(ctx, &latent, n)?;
        let prior_reconstruction = self.sample_prior_reconstruction(ctx, n, noise)?;
        let real = self.discriminate(ctx, compressed)?;
        let fake = self.discriminate(ctx, reconstruction)?;
        let prior_fake = self.discriminate(ctx, prior_reconstruction)?;
        Ok(ForwardTrace {
            compressed,
            scores,
            weighted,
            latent,
            reconstruction,
            prior_reconstruction,
            real,
            fake,
            prior_fake,
        })
    }

    pub fn trace_losses(&self, ctx: &mut Ctx, trace: &ForwardTrace, sigma: f64) -> Result<TraceLosses> {
        let reconst = losses::reconstruction_loss(ctx, trace.real.phi, trace.fake.phi)?;
        let prior = match (trace.latent.mu, trace.latent.logvar) {
            (Some(m), Some(lv)) => Some(losses::prior_loss(ctx, m, lv)?),
            _ => None,
        };
        let sparsity = losses::sparsity_loss(ctx, trace.scores, sigma)?;
        let gan = losses::gan_losses(
            ctx,
            trace.real.prob_original,
            trace.fake.prob_original,
            trace.prior_fake.prob_original,
        )?;
        Ok(TraceLosses {
            reconst,
            prior,
            sparsity,
            gan,
        })
    }

    /// Sum of the three players' objectives
    /// (summarizer: reconst + prior + sparsity; generator: reconst + adversarial;
    /// discriminator: −L_GAN). Used for whole-model gradient checks.
    pub fn total_objective(&self, ctx: &mut Ctx, losses: &TraceLosses) -> Result<Var> {
        let mut total = ctx.add(losses.reconst, losses.sparsity)?;
        if let Some(p) = losses.prior {
            total = ctx.add(total, p)?;
        }
        total = ctx.add(total, losses.reconst)?;
        total = ctx.add(total, losses.gan.generator_loss)?;
        Ok(ctx.add(total, losses.gan.discriminator_loss)?)
    }

    /// Selector scores for one video, without recording gradients.
    pub fn infer_scores(&self, features: &Tensor) -> Result<Vec<f64>> {
        let mut ctx = Ctx::new(&self.store, crate::params::GroupSet::NONE);
        let x = self.input(&mut ctx, features)?;
        let c = self.compress(&mut ctx, x)?;
        let s = self.select_scores(&mut ctx, c)?;
        Ok(ctx.value(s).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::GroupSet;

    fn tiny(variant: Variant) -> SumGanModel {
        let dims = ModelDims {
            input_dim: 8,
            dim: 8,
            hidden: 6,
            heads: 4,
            recurrent_layers: 2,
        };
        SumGanModel::new(VariantSpec::new(variant, dims, 7)).unwrap()
    }

    fn video(n: usize, m: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * m).map(|_| StandardNormal.sample(&mut rng)).collect();
        Tensor::matrix(n, m, data).unwrap()
    }

    #[test]
    fn zero_score_head_gives_half() {
        for v in [Variant::SumGan, Variant::Aed] {
            let mut model = tiny(v);
            for name in ["selector.score.weight", "selector.score.bias"] {
                let id = model.store.by_name(name).unwrap();
                let p = model.store.get_mut(id);
                p.value = Tensor::zeros(p.value.shape());
            }
            let s = model.infer_scores(&video(5, 8, 1)).unwrap();
            assert!(s.iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn self_attention_selector_single_frame() {
        let model = tiny(Variant::Aed);
        let s = model.infer_scores(&video(1, 8, 2)).unwrap();
        assert_eq!(s.len(), 1);
        assert!((0.0..=1.0).contains(&s[0]));
    }

    #[test]
    fn self_attention_selector_is_order_aware() {
        let model = tiny(Variant::Aed);
        let x = video(4, 8, 3);
        let rows: Vec<Vec<f64>> = [2, 0, 3, 1].iter().map(|&i| x.row(i).to_vec()).collect();
        let perm = Tensor::from_rows(&rows).unwrap();
        let a = model.infer_scores(&x).unwrap();
        let b = model.infer_scores(&perm).unwrap();
        let permuted_a: Vec<f64> = [2, 0, 3, 1].iter().map(|&i| a[i]).collect();
        let diff: f64 = permuted_a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum();
        assert!(diff > 1e-9);
    }

    #[test]
    fn latent_heads_have_hidden_width() {
        let dims = ModelDims {
            input_dim: 16,
            dim: 500,
            hidden: 500,
            heads: 4,
            recurrent_layers: 1,
        };
        let model = SumGanModel::new(VariantSpec::new(Variant::Aed, dims, 0)).unwrap();
        let mut ctx = Ctx::new(&model.store, GroupSet::NONE);
        let x = model.input(&mut ctx, &video(2, 16, 0)).unwrap();
        let c = model.compress(&mut ctx, x).unwrap();
        let lat = model.encode(&mut ctx, c, &mut Noise::Zero).unwrap();
        assert_eq!(ctx.shape(lat.mu.unwrap()), &[500]);
        assert_eq!(ctx.shape(lat.logvar.unwrap()), &[500]);
        assert_eq!(ctx.value(lat.e), ctx.value(lat.mu.unwrap()));
        let d = model.discriminate(&mut ctx, c).unwrap();
        assert_eq!(ctx.shape(d.phi), &[500]);
    }

    #[test]
    fn sampling_changes_e_but_not_posterior() {
        let model = tiny(Variant::SumGan);
        let x = video(5, 8, 4);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ctx = Ctx::new(&model.store, GroupSet::NONE);
            let xv = model.input(&mut ctx, &x).unwrap();
            let c = model.compress(&mut ctx, xv).unwrap();
            let lat = model.encode(&mut ctx, c, &mut Noise::Sample(&mut rng)).unwrap();
            (
                ctx.value(lat.mu.unwrap()).clone(),
                ctx.value(lat.logvar.unwrap()).clone(),
                ctx.value(lat.e).clone(),
            )
        };
        let (m1, l1, e1) = run(1);
        let (m2, l2, e2) = run(2);
        assert_eq!(m1, m2);
        assert_eq!(l1, l2);
        assert_ne!(e1, e2);
    }

    #[test]
    fn decoder_is_deterministic_and_shaped() {
        for v in Variant::ALL {
            let model = tiny(v);
            for n in [1, 5] {
                let x = video(n, 8, 5);
                let mut ctx = Ctx::new(&model.store, GroupSet::NONE);
                let xv = model.input(&mut ctx, &x).unwrap();
                let c = model.compress(&mut ctx, xv).unwrap();
                let lat = model.encode(&mut ctx, c, &mut Noise::Zero).unwrap();
                let a = model.decode(&mut ctx, &lat, n).unwrap();
                let b = model.decode(&mut ctx, &lat, n).unwrap();
                assert_eq!(ctx.shape(a), &[n, 8]);
                assert_eq!(ctx.value(a), ctx.value(b));
            }
        }
    }

    #[test]
    fn prior_reconstruction_sampling() {
        for v in Variant::ALL {
            let model = tiny(v);
            let draw = |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut ctx = Ctx::new(&model.store, GroupSet::NONE);
                let r = model.sample_prior_reconstruction(&mut ctx, 6, &mut Noise::Sample(&mut rng)).unwrap();
                ctx.value(r).clone()
            };
            let (a, b, a2) = (draw(1), draw(2), draw(1));
            assert_eq!(a.shape(), &[6, 8]);
            assert_ne!(a, b);
            assert_eq!(a, a2);
        }
    }

    #[test]
    fn discriminator_probabilities() {
        let mut model = tiny(Variant::SumGan);
        let x = video(4, 8, 6);
        {
            let mut ctx = Ctx::new(&model.store, GroupSet::NONE);
            let xv = model.input(&mut ctx, &x).unwrap();
            let c = model.compress(&mut ctx, xv).unwrap();
            let d = model.discriminate(&mut ctx, c).unwrap();
            let p = ctx.value(d.prob_original).item();
            assert!((0.0..=1.0).contains(&p));
        }
        for name in ["discriminator.out.weight", "discriminator.out.bias"] {
            let id = model.store.by_name(name).unwrap();
            let p = model.store.get_mut(id);
            p.value = Tensor::zeros(p.value.shape());
        }
        let mut ctx = Ctx::new(&model.store, GroupSet::NONE);
        let xv = model.input(&mut ctx, &x).unwrap();
        let c = model.compress(&mut ctx, xv).unwrap();
        let d = model.discriminate(&mut ctx, c).unwrap();
        assert_eq!(ctx.value(d.prob_original).item(), 0.5);
    }

    #[test]
    fn forced_scores_control_weighting() {
        let model = tiny(Variant::Aed);
        let x = video(12, 8, 8);
        for fill in [1.0, 0.0] {
            let mut ctx = Ctx::new(&model.store, GroupSet::NONE);
            let s = Tensor::full(&[12], fill);
            let trace = model.forward_full(&mut ctx, &x, &mut Noise::Zero, Some(&s)).unwrap();
            let w = ctx.value(trace.weighted);
            if fill == 1.0 {
                assert_eq!(w, ctx.value(trace.compressed));
            } else {
                assert!(w.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn feature_width_mismatch_is_ingestion_error() {
        let model = tiny(Variant::Aed);
        let mut ctx = Ctx::new(&model.store, GroupSet::NONE);
        let r = model.forward_full(&mut ctx, &video(3, 5, 0), &mut Noise::Zero, None);
        assert!(matches!(r, Err(Error::Ingestion(_))));
    }
}
