use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sumgan_core::dataset::synth_planted;
use sumgan_core::losses;
use sumgan_core::models::{ModelDims, Noise, SumGanModel, Variant, VariantSpec};
use sumgan_core::params::{Ctx, GroupSet, ParamGroup};
use sumgan_core::tensor::Tensor;
use sumgan_core::trainer::{
    clip_global_norm, discriminator_step, log_to_jsonl, run_experiment, run_fold, sparsity_step, train_step,
    ExperimentConfig, LogRecord, TrainConfig, TrainState,
};
use sumgan_core::Error;

fn small_dims() -> ModelDims {
    ModelDims { input_dim: 8, dim: 8, hidden: 8, heads: 2, recurrent_layers: 2 }
}

fn state(variant: Variant, dims: ModelDims, seed: u64) -> TrainState {
    TrainState::new(SumGanModel::new(VariantSpec::new(variant, dims, seed)).unwrap(), seed + 1)
}

fn gaussian(n: usize, m: usize, mean: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(n, m, (0..n * m).map(|_| { let z: f64 = StandardNormal.sample(rng); mean + z }).collect()).unwrap()
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let cfg = TrainConfig { lr_main: 0.0, lr_discriminator: 0.0, ..Default::default() };
    let ds = synth_planted(1, 12, 8, 1).unwrap();
    for v in Variant::ALL {
        let mut st = state(v, small_dims(), 2);
        let before = st.model.store.clone();
        train_step(&mut st, &ds.videos[0].features, "v", 0, 0, &cfg).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(st.model.store.iter()) {
            assert!(a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

#[test]
fn step_records_are_finite_and_prior_follows_the_variant() {
    let ds = synth_planted(1, 15, 8, 3).unwrap();
    for v in Variant::ALL {
        let mut st = state(v, small_dims(), 4);
        let rec = train_step(&mut st, &ds.videos[0].features, "v", 0, 0, &TrainConfig::default()).unwrap();
        let l = &rec.losses;
        assert!([l.reconst, l.sparsity, l.gan_d, l.gan_g].iter().all(|x| x.is_finite()));
        assert_eq!(l.prior.is_some(), v.has_vae(), "{v}");
        let line = LogRecord::Step(rec).to_json_line();
        assert_eq!(line.contains("\"prior\""), v.has_vae(), "{v}: {line}");
    }
}

#[test]
fn discriminator_learns_separable_real_and_fake() {
    let cfg = TrainConfig { lr_discriminator: 1e-3, ..Default::default() };
    let mut st = state(Variant::Aed, small_dims(), 6);
    let frozen: Vec<Tensor> = st
        .model
        .store
        .iter()
        .filter(|(_, p)| p.group != ParamGroup::Discriminator)
        .map(|(_, p)| p.value.clone())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let real = gaussian(10, 8, 1.0, &mut rng);
        let fake = gaussian(10, 8, -1.0, &mut rng);
        let prior = gaussian(10, 8, -1.0, &mut rng);
        discriminator_step(&mut st, &real, &fake, &prior, &cfg).unwrap();
    }
    let after: Vec<Tensor> = st
        .model
        .store
        .iter()
        .filter(|(_, p)| p.group != ParamGroup::Discriminator)
        .map(|(_, p)| p.value.clone())
        .collect();
    assert_eq!(frozen, after);

    let mut correct = 0;
    let trials = 50;
    for _ in 0..trials {
        let mut ctx = Ctx::new(&st.model.store, GroupSet::NONE);
        let r = ctx.constant(gaussian(10, 8, 1.0, &mut rng));
        let f = ctx.constant(gaussian(10, 8, -1.0, &mut rng));
        let pr = st.model.discriminate(&mut ctx, r).unwrap().prob_original;
        let pf = st.model.discriminate(&mut ctx, f).unwrap().prob_original;
        correct += usize::from(ctx.value(pr).item() > 0.5) + usize::from(ctx.value(pf).item() < 0.5);
    }
    let acc = correct as f64 / (2 * trials) as f64;
    assert!(acc >= 0.9, "accuracy {acc}");
}

#[test]
fn uniform_discriminator_gives_constant_generator_loss_without_gradient() {
    let mut model = SumGanModel::new(VariantSpec::new(Variant::SumGan, small_dims(), 9)).unwrap();
    for name in ["discriminator.out.weight", "discriminator.out.bias"] {
        let id = model.store.by_name(name).unwrap();
        let p = model.store.get_mut(id);
        p.value = Tensor::zeros(p.value.shape());
    }
    let mut ctx = Ctx::new(&model.store, GroupSet::only(ParamGroup::Generator));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = gaussian(6, 8, 0.0, &mut rng);
    let tr = model.forward_full(&mut ctx, &x, &mut Noise::Sample(&mut rng), None).unwrap();
    let g = losses::generator_loss(&mut ctx, &[tr.fake.prob_original, tr.prior_fake.prob_original]).unwrap();
    assert!((ctx.value(g).item() + 2.0 * 0.5f64.ln()).abs() < 1e-12);
    ctx.backward(g).unwrap();
    for (_, grad) in ctx.param_grads() {
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn sparsity_alone_drives_mean_score_to_sigma() {
    let cfg = TrainConfig::default();
    let dims = ModelDims { input_dim: 64, dim: 64, hidden: 64, heads: 4, recurrent_layers: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = gaussian(40, 64, 0.0, &mut rng);
    for v in [Variant::Aed, Variant::SumGan] {
        let mut st = state(v, dims, 13);
        let mut reached = None;
        for step in 0..=500 {
            let mean = sparsity_step(&mut st, &x, &cfg).unwrap();
            if (mean - cfg.sigma).abs() < 0.02 {
                reached = Some(step);
                break;
            }
        }
        assert!(reached.is_some(), "{v} did not reach the target rate in 500 steps");
    }
}

#[test]
fn overflowing_features_abort_with_a_named_term() {
    let mut st = state(Variant::Aed, small_dims(), 1);
    let x = Tensor::full(&[5, 8], 1e305);
    match train_step(&mut st, &x, "huge", 0, 7, &TrainConfig::default()) {
        Err(Error::NonFiniteLoss { term, epoch, video }) => {
            assert_eq!((term, epoch, video.as_str()), ("summarizer", 7, "huge"));
        }
        other => panic!("{other:?}"),
    }
}

fn tiny_experiment(variant: Variant) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(variant);
    cfg.dims = small_dims();
    cfg.train.epochs = 2;
    cfg.train.seed = 42;
    cfg
}

#[test]
fn folds_are_reproducible_and_split_eighty_twenty() {
    let ds = synth_planted(25, 12, 8, 5).unwrap();
    let cfg = tiny_experiment(Variant::Aed);
    let a = run_fold(&ds, 2, &cfg).unwrap();
    let b = run_fold(&ds, 2, &cfg).unwrap();
    assert_eq!((a.train_ids.len(), a.test_ids.len()), (20, 5));
    assert!(a.test_ids.iter().all(|t| !a.train_ids.contains(t)));
    assert_eq!(log_to_jsonl(&a.log), log_to_jsonl(&b.log));
    assert_eq!(a.checkpoint, b.checkpoint);
    let steps = a.log.iter().filter(|r| matches!(r, LogRecord::Step(_))).count();
    let epochs = a.log.iter().filter(|r| matches!(r, LogRecord::Epoch(_))).count();
    assert_eq!((steps, epochs), (2 * 20, 2));
}

#[test]
fn experiment_report_is_independent_of_parallelism() {
    let ds = synth_planted(6, 12, 8, 5).unwrap();
    let mut cfg = tiny_experiment(Variant::St);
    cfg.train.folds = 3;
    cfg.train.epochs = 1;
    let serial = run_experiment(&ds, &cfg, 1).unwrap();
    let parallel = run_experiment(&ds, &cfg, 3).unwrap();
    assert_eq!(serial.report.to_json(), parallel.report.to_json());
    let r = &serial.report;
    let mean = r.folds.iter().map(|f| f.mean).sum::<f64>() / 3.0;
    assert_eq!(r.mean, mean);
    assert_eq!(r.variant, "ST");
    assert_eq!(r.config["variant"], "ST");
    assert_eq!(r.config["folds"], "3");
    let mut tested: Vec<&str> = r.folds.iter().flat_map(|f| f.videos.iter().map(|v| v.video.as_str())).collect();
    tested.sort_unstable();
    assert_eq!(tested.len(), 6);
    tested.dedup();
    assert_eq!(tested.len(), 6);
    assert!(!log_to_jsonl(&serial.log()).contains("\"prior\""));
}

proptest! {
    #[test]
    fn clipping_never_exceeds_the_limit(v in prop::collection::vec(-100.0f64..100.0, 1..40), limit in 0.1f64..10.0) {
        let mut g = vec![Tensor::vector(v).unwrap()];
        clip_global_norm(&mut g, limit);
        let norm = g[0].data().iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(norm <= limit + 1e-9);
    }
}
