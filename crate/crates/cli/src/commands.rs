use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use sumgan_core::dataset::{expand_scores, load_dataset, save_dataset, synth_planted, Dataset, MetricProtocol};
use sumgan_core::evaluation::{evaluate_video, propose_summary, EvalReport, FoldEval};
use sumgan_core::models::{grad_check_model, load_checkpoint, ModelDims, SumGanModel, Variant, VariantSpec};
use sumgan_core::tensor::{Fault, Tensor, DEFAULT_EPS};
use sumgan_core::trainer::{log_to_jsonl, run_experiment, sub_seed};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const SYNTH_MANIFEST: &str = "synth.manifest";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    Ok(&cfg.out)
}

fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg.dataset.as_ref().ok_or(CliError::Missing("dataset"))?;
    Ok(load_dataset(path)?)
}

fn checkpoint(cfg: &RunConfig) -> Result<SumGanModel> {
    let path = cfg.checkpoint.as_ref().ok_or(CliError::Missing("checkpoint"))?;
    let (model, _) = load_checkpoint(path)?;
    if let Some(requested) = cfg.variant {
        if requested != model.variant() {
            return Err(CliError::VariantMismatch {
                requested: requested.name().into(),
                found: model.variant().name().into(),
            });
        }
    }
    Ok(model)
}

fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    write(&dir.join("report.json"), report.to_json())?;
    write(&dir.join("report.tsv"), report.to_tsv())?;
    if report.protocol == MetricProtocol::Auc {
        write(&dir.join("roc.tsv"), report.roc_tsv())?;
    }
    Ok(())
}

/// Cross-validated training. Writes `fold_{k}.ckpt`, `train_log.jsonl`,
/// `timing.tsv`, `report.json`, `report.tsv` (plus `roc.tsv` for AUC data)
/// and the resolved `config.txt`.
pub fn train(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let data = dataset(cfg)?;
    let exp = cfg.experiment();
    exp.validate()?;
    let dir = out_dir(cfg)?;
    write(&dir.join("config.txt"), cfg.to_text())?;
    let outcome = run_experiment(&data, &exp, cfg.parallel_folds)?;
    let mut timing = String::from("fold\tepoch\tseconds\n");
    for f in &outcome.folds {
        write(&dir.join(format!("fold_{}.ckpt", f.fold)), &f.checkpoint)?;
        for (e, s) in f.epoch_seconds.iter().enumerate() {
            timing.push_str(&format!("{}\t{e}\t{s:.6}\n", f.fold));
        }
    }
    write(&dir.join("train_log.jsonl"), log_to_jsonl(&outcome.log()))?;
    write(&dir.join("timing.tsv"), timing)?;
    write_report(dir, &outcome.report)?;
    let _ = writeln!(
        stdout,
        "{} on {}: mean {} {:.4} over {} folds",
        exp.variant,
        data.name,
        data.protocol.name(),
        outcome.report.mean,
        outcome.folds.len()
    );
    Ok(())
}

/// Evaluates one checkpoint on every video of the dataset as a single fold.
pub fn eval(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let data = dataset(cfg)?;
    let model = checkpoint(cfg)?;
    cfg.eval.validate()?;
    let videos = data
        .videos
        .iter()
        .map(|v| evaluate_video(&model, v, data.protocol, &cfg.eval))
        .collect::<sumgan_core::Result<Vec<_>>>()?;
    let spec = model.spec();
    let d = spec.dims;
    let config: BTreeMap<String, String> = [
        ("variant", spec.variant.name().to_string()),
        ("input_dim", d.input_dim.to_string()),
        ("dim", d.dim.to_string()),
        ("hidden", d.hidden.to_string()),
        ("heads", d.heads.to_string()),
        ("recurrent_layers", d.recurrent_layers.to_string()),
        ("init_seed", spec.seed.to_string()),
        ("budget_fraction", cfg.eval.budget_fraction.to_string()),
        ("gt_threshold", cfg.eval.gt_threshold.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let report = EvalReport::new(spec.variant.name(), &data.name, data.protocol, config, vec![FoldEval::new(0, videos)]);
    write_report(out_dir(cfg)?, &report)?;
    let _ = writeln!(stdout, "{} on {}: mean {} {:.4}", spec.variant, data.name, data.protocol.name(), report.mean);
    Ok(())
}

#[derive(Debug, Serialize)]
struct SummaryOutput<'a> {
    video: &'a str,
    variant: &'a str,
    n_frames: usize,
    budget_fraction: f64,
    frame_scores: Vec<f64>,
    selected_shots: Vec<usize>,
    selected_frames: usize,
    mask: Vec<u8>,
}

/// Prints the per-frame scores and key-shot summary of one video as JSON and
/// saves it as `summary_{video}.json`.
pub fn summarize(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let data = dataset(cfg)?;
    let id = cfg.video.as_deref().ok_or(CliError::Missing("video"))?;
    let record = data.get(id).ok_or_else(|| CliError::UnknownVideo(id.to_string()))?;
    let model = checkpoint(cfg)?;
    cfg.eval.validate()?;
    let scores = model.infer_scores(&record.features)?;
    let frame_scores = expand_scores(&scores, &record.picks, record.n_frames)?;
    let proposal = propose_summary(&frame_scores, &record.change_points, &cfg.eval)?;
    let out = SummaryOutput {
        video: &record.id,
        variant: model.variant().name(),
        n_frames: record.n_frames,
        budget_fraction: cfg.eval.budget_fraction,
        selected_frames: proposal.selected_frames(),
        frame_scores,
        selected_shots: proposal.selected_shots,
        mask: proposal.mask,
    };
    let mut json = serde_json::to_string_pretty(&out).expect("summary serializes");
    json.push('\n');
    write(&out_dir(cfg)?.join(format!("summary_{}.json", record.id)), &json)?;
    let _ = stdout.write_all(json.as_bytes());
    Ok(())
}

pub fn gradcheck_dims() -> ModelDims {
    ModelDims {
        input_dim: 8,
        dim: 8,
        hidden: 6,
        heads: 4,
        recurrent_layers: 2,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckLine {
    pub variant: Variant,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// Finite-difference check of the full objective for each variant on a
/// 4-frame video.
pub fn gradcheck_variants(variants: &[Variant], seed: u64, fault: Option<Fault>) -> Result<Vec<GradCheckLine>> {
    let dims = gradcheck_dims();
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 1));
    let x = Tensor::matrix(4, dims.input_dim, (0..4 * dims.input_dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .map_err(sumgan_core::Error::from)?;
    variants
        .iter()
        .map(|&v| {
            let model = SumGanModel::new(VariantSpec::new(v, dims, sub_seed(seed, 2)))?;
            let c = grad_check_model(&model, &x, 0.3, sub_seed(seed, 3), DEFAULT_EPS, fault)?;
            Ok(GradCheckLine {
                variant: v,
                max_rel_err: c.report.max_rel_err,
                worst_param: c.worst_param,
                checked: c.report.checked,
            })
        })
        .collect()
}

pub fn gradcheck(cfg: &RunConfig, fault: Option<Fault>, stdout: &mut dyn Write) -> Result<()> {
    let variants: Vec<Variant> = cfg.variant.map_or_else(|| Variant::ALL.to_vec(), |v| vec![v]);
    let lines = gradcheck_variants(&variants, cfg.train.seed, fault)?;
    let _ = writeln!(stdout, "variant\tmax_rel_err\tworst_param\tchecked\tstatus");
    let mut failed = Vec::new();
    for l in &lines {
        let ok = l.max_rel_err < GRADCHECK_TOLERANCE;
        if !ok {
            failed.push(l.variant.name());
        }
        let status = if ok { "ok" } else { "FAIL" };
        let _ = writeln!(stdout, "{}\t{:.3e}\t{}\t{}\t{status}", l.variant, l.max_rel_err, l.worst_param, l.checked);
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradCheckFailed(failed.join(", ")))
    }
}

/// Writes `synth.manifest` and `synth.data` under `out`.
pub fn synth(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<PathBuf> {
    let data = synth_planted(cfg.videos, cfg.frames, cfg.feature_dim, cfg.train.seed)?;
    let path = out_dir(cfg)?.join(SYNTH_MANIFEST);
    save_dataset(&data, &path)?;
    let _ = writeln!(
        stdout,
        "wrote {} ({} videos, {} frames, {} features)",
        path.display(),
        cfg.videos,
        cfg.frames,
        cfg.feature_dim
    );
    Ok(path)
}
