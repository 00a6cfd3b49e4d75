//! Key-shot summaries, F-score against user summaries and threshold-sweep ROC AUC.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{expand_scores, MetricProtocol, VideoRecord};
use crate::error::{Error, Result};
use crate::models::SumGanModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Summary length limit as a fraction of the original frame count.
    pub budget_fraction: f64,
    /// Ground-truth frame scores at or above this count as positives for AUC.
    pub gt_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            budget_fraction: 0.15,
            gt_threshold: 0.5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.budget_fraction) {
            return Err(Error::Config(format!("budget_fraction {} outside [0, 1]", self.budget_fraction)));
        }
        if !(0.0..=1.0).contains(&self.gt_threshold) {
            return Err(Error::Config(format!("gt_threshold {} outside [0, 1]", self.gt_threshold)));
        }
        Ok(())
    }

    /// `⌊fraction · n⌋`, with a small guard against `0.15 · 240 = 35.99…`.
    pub fn budget_frames(&self, n_frames: usize) -> usize {
        (self.budget_fraction * n_frames as f64 + 1e-9).floor() as usize
    }
}

/// Mean frame score of every shot.
pub fn shot_scores(frame_scores: &[f64], change_points: &[(usize, usize)]) -> Result<Vec<f64>> {
    change_points
        .iter()
        .map(|&(s, e)| {
            if s >= e || e > frame_scores.len() {
                return Err(Error::Contract(format!(
                    "shot [{s}, {e}) invalid for {} frames",
                    frame_scores.len()
                )));
            }
            Ok(frame_scores[s..e].iter().sum::<f64>() / (e - s) as f64)
        })
        .collect()
}

/// Exact 0/1 knapsack by dynamic programming over integer lengths. Among
/// optimal sets the lexicographically smallest index sequence is returned.
pub fn knapsack_select(scores: &[f64], lengths: &[usize], budget: usize) -> Result<Vec<usize>> {
    if scores.len() != lengths.len() {
        return Err(Error::Contract(format!("{} scores for {} shots", scores.len(), lengths.len())));
    }
    if lengths.contains(&0) {
        return Err(Error::Contract("shot of length 0".into()));
    }
    let n = scores.len();
    let w = budget.min(lengths.iter().sum());
    // best[i][c]: optimal value over items i.. with capacity c.
    let mut best = vec![vec![0.0f64; w + 1]; n + 1];
    for i in (0..n).rev() {
        for c in 0..=w {
            let skip = best[i + 1][c];
            best[i][c] = if lengths[i] <= c {
                skip.max(scores[i] + best[i + 1][c - lengths[i]])
            } else {
                skip
            };
        }
    }
    let mut chosen = Vec::new();
    let mut c = w;
    for i in 0..n {
        if lengths[i] > c {
            continue;
        }
        let take = scores[i] + best[i + 1][c - lengths[i]];
        let skip = best[i + 1][c];
        // On a tie, taking `i` gives the smaller sequence unless the
        // alternative is the empty set.
        if take > skip || (take == skip && skip != 0.0) {
            chosen.push(i);
            c -= lengths[i];
        }
    }
    Ok(chosen)
}

/// Harmonic mean of temporal precision and recall; 0 when either mask is empty
/// or they do not overlap.
pub fn fscore(machine: &[u8], user: &[u8]) -> Result<f64> {
    if machine.len() != user.len() {
        return Err(Error::Contract(format!(
            "mask lengths differ: {} vs {}",
            machine.len(),
            user.len()
        )));
    }
    let overlap = machine.iter().zip(user).filter(|(&a, &b)| a != 0 && b != 0).count();
    let m = machine.iter().filter(|&&a| a != 0).count();
    let u = user.iter().filter(|&&b| b != 0).count();
    if overlap == 0 || m == 0 || u == 0 {
        return Ok(0.0);
    }
    let p = overlap as f64 / m as f64;
    let r = overlap as f64 / u as f64;
    Ok(2.0 * p * r / (p + r))
}

/// Aggregates over users: best (`FscoreMax`) or mean (`FscoreAvg`).
pub fn fscore_protocol(machine: &[u8], users: &[Vec<u8>], protocol: MetricProtocol) -> Result<f64> {
    if users.is_empty() {
        return Err(Error::UndefinedMetric("no user summaries".into()));
    }
    let fs = users.iter().map(|u| fscore(machine, u)).collect::<Result<Vec<_>>>()?;
    match protocol {
        MetricProtocol::FscoreMax => Ok(fs.into_iter().fold(0.0, f64::max)),
        MetricProtocol::FscoreAvg => Ok(fs.iter().sum::<f64>() / fs.len() as f64),
        MetricProtocol::Auc => Err(Error::Contract("auc is not an F-score protocol".into())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// One point per threshold, ordered by FPR (then TPR).
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC over `scores ≥ threshold` for each threshold (default: the sorted unique
/// scores), AUC by the trapezoidal rule with `(0,0)` and `(1,1)` appended.
pub fn auc_sweep(scores: &[f64], labels: &[bool], thresholds: Option<&[f64]>) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("ground truth has a single class".into()));
    }
    let thresholds = match thresholds {
        Some(t) => t.to_vec(),
        None => {
            let mut t = scores.to_vec();
            t.sort_by(f64::total_cmp);
            t.dedup();
            t
        }
    };
    let mut points: Vec<RocPoint> = thresholds
        .iter()
        .map(|&th| {
            let (mut tp, mut fp) = (0usize, 0usize);
            for (&s, &l) in scores.iter().zip(labels) {
                if s >= th {
                    if l {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            RocPoint {
                threshold: th,
                fpr: fp as f64 / neg as f64,
                tpr: tp as f64 / pos as f64,
            }
        })
        .collect();
    points.sort_by(|a, b| a.fpr.total_cmp(&b.fpr).then(a.tpr.total_cmp(&b.tpr)));
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(points.len() + 2);
    curve.push((0.0, 0.0));
    curve.extend(points.iter().map(|p| (p.fpr, p.tpr)));
    curve.push((1.0, 1.0));
    let auc = curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum();
    Ok(RocCurve { points, auc })
}

/// Key-shot summary of one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryProposal {
    pub selected_shots: Vec<usize>,
    /// Per-original-frame selection, the union of the selected shots.
    pub mask: Vec<u8>,
    pub budget_fraction: f64,
}

impl SummaryProposal {
    pub fn selected_frames(&self) -> usize {
        self.mask.iter().filter(|&&b| b != 0).count()
    }
}

/// Shot scores by mean, then knapsack under the frame budget.
pub fn propose_summary(frame_scores: &[f64], change_points: &[(usize, usize)], cfg: &EvalConfig) -> Result<SummaryProposal> {
    let n_frames = frame_scores.len();
    let shots = shot_scores(frame_scores, change_points)?;
    let lengths: Vec<usize> = change_points.iter().map(|&(s, e)| e - s).collect();
    let budget = cfg.budget_frames(n_frames);
    let selected_shots = knapsack_select(&shots, &lengths, budget)?;
    let mut mask = vec![0u8; n_frames];
    for &i in &selected_shots {
        let (s, e) = change_points[i];
        mask[s..e].iter_mut().for_each(|b| *b = 1);
    }
    let proposal = SummaryProposal {
        selected_shots,
        mask,
        budget_fraction: cfg.budget_fraction,
    };
    if proposal.selected_frames() > budget {
        return Err(Error::Contract(format!(
            "summary of {} frames exceeds budget {budget}",
            proposal.selected_frames()
        )));
    }
    Ok(proposal)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoEval {
    pub video: String,
    /// Fraction in `[0, 1]`.
    pub metric: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub summary: Option<SummaryProposal>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub roc: Option<RocCurve>,
}

/// Scores a video from subsampled-frame scores.
pub fn evaluate_scores(record: &VideoRecord, scores: &[f64], protocol: MetricProtocol, cfg: &EvalConfig) -> Result<VideoEval> {
    let frame_scores = expand_scores(scores, &record.picks, record.n_frames)?;
    let missing = |what: &str| Error::UndefinedMetric(format!("video {} has no {what}", record.id));
    let out = match protocol {
        MetricProtocol::Auc => {
            let gt = record.gt_scores.as_ref().ok_or_else(|| missing("gt_scores"))?;
            let labels: Vec<bool> = gt.iter().map(|&g| g >= cfg.gt_threshold).collect();
            let roc = auc_sweep(&frame_scores, &labels, None)?;
            VideoEval {
                video: record.id.clone(),
                metric: roc.auc,
                summary: None,
                roc: Some(roc),
            }
        }
        _ => {
            let users = record.user_summaries.as_ref().ok_or_else(|| missing("user_summaries"))?;
            let summary = propose_summary(&frame_scores, &record.change_points, cfg)?;
            VideoEval {
                video: record.id.clone(),
                metric: fscore_protocol(&summary.mask, users, protocol)?,
                summary: Some(summary),
                roc: None,
            }
        }
    };
    Ok(out)
}

/// Forward pass, then [`evaluate_scores`].
pub fn evaluate_video(model: &SumGanModel, record: &VideoRecord, protocol: MetricProtocol, cfg: &EvalConfig) -> Result<VideoEval> {
    let scores = model.infer_scores(&record.features)?;
    evaluate_scores(record, &scores, protocol, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldEval {
    pub fold: usize,
    pub videos: Vec<VideoEval>,
    pub mean: f64,
}

impl FoldEval {
    pub fn new(fold: usize, videos: Vec<VideoEval>) -> Self {
        let mean = videos.iter().map(|v| v.metric).sum::<f64>() / videos.len().max(1) as f64;
        Self { fold, videos, mean }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub dataset: String,
    pub protocol: MetricProtocol,
    /// How AUC is aggregated across videos (always per-video mean here).
    pub auc_averaging: String,
    /// Every configuration value, keyed by name.
    pub config: BTreeMap<String, String>,
    /// FNV-1a hash of the `key=value` lines of `config`.
    pub fingerprint: String,
    pub folds: Vec<FoldEval>,
    /// Unweighted mean of the per-fold means.
    pub mean: f64,
}

/// 64-bit FNV-1a.
pub fn fingerprint(config: &BTreeMap<String, String>) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (k, v) in config {
        for b in k.bytes().chain(std::iter::once(b'=')).chain(v.bytes()).chain(std::iter::once(b'\n')) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

impl EvalReport {
    pub fn new(variant: &str, dataset: &str, protocol: MetricProtocol, config: BTreeMap<String, String>, folds: Vec<FoldEval>) -> Self {
        let mean = folds.iter().map(|f| f.mean).sum::<f64>() / folds.len().max(1) as f64;
        Self {
            variant: variant.to_string(),
            dataset: dataset.to_string(),
            protocol,
            auc_averaging: "per_video".into(),
            fingerprint: fingerprint(&config),
            config,
            folds,
            mean,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// `fold  video  metric` rows, metric as a percentage.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("fold\tvideo\tmetric_pct\n");
        for f in &self.folds {
            for v in &f.videos {
                out.push_str(&format!("{}\t{}\t{:.6}\n", f.fold, v.video, 100.0 * v.metric));
            }
        }
        out
    }

    /// `fold  video  threshold  fpr  tpr` rows for AUC-protocol reports.
    pub fn roc_tsv(&self) -> String {
        let mut out = String::from("fold\tvideo\tthreshold\tfpr\ttpr\n");
        for f in &self.folds {
            for v in &f.videos {
                for p in v.roc.iter().flat_map(|r| &r.points) {
                    out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", f.fold, v.video, p.threshold, p.fpr, p.tpr));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shot_score_examples() {
        assert_eq!(shot_scores(&[0.0, 1.0, 1.0, 1.0], &[(0, 2), (2, 4)]).unwrap(), vec![0.5, 1.0]);
        assert_eq!(shot_scores(&[0.3; 5], &[(0, 1), (1, 5)]).unwrap(), vec![0.3, 0.3]);
        let s = [0.1, 0.4, 0.7];
        let m = shot_scores(&s, &[(0, 3)]).unwrap()[0];
        assert!((m - 0.4).abs() < 1e-15);
    }

    #[test]
    fn knapsack_examples() {
        assert_eq!(knapsack_select(&[5.0, 4.0, 8.0], &[3, 4, 2], 5).unwrap(), vec![0, 2]);
        assert_eq!(knapsack_select(&[5.0, 4.0, 8.0], &[3, 4, 2], 100).unwrap(), vec![0, 1, 2]);
        assert!(knapsack_select(&[5.0, 4.0, 8.0], &[3, 4, 2], 0).unwrap().is_empty());
        assert!(knapsack_select(&[5.0], &[3], 2).unwrap().is_empty());
        // Equal-value alternatives {0} and {1}: the smaller index wins.
        assert_eq!(knapsack_select(&[1.0, 1.0], &[2, 2], 3).unwrap(), vec![0]);
        // Zero-valued shots are not added.
        assert!(knapsack_select(&[0.0, 0.0], &[1, 1], 2).unwrap().is_empty());
    }

    #[test]
    fn fscore_examples() {
        let a: Vec<u8> = (0..20).map(|i| u8::from(i < 10)).collect();
        let b: Vec<u8> = (0..20).map(|i| u8::from((5..15).contains(&i))).collect();
        let none = vec![0u8; 20];
        let disjoint: Vec<u8> = a.iter().map(|&x| 1 - x).collect();
        assert_eq!(fscore(&a, &a).unwrap(), 1.0);
        assert_eq!(fscore(&a, &b).unwrap(), 0.5);
        assert_eq!(fscore(&a, &disjoint).unwrap(), 0.0);
        assert_eq!(fscore(&none, &a).unwrap(), 0.0);
        let users = vec![a.clone(), disjoint];
        assert_eq!(fscore_protocol(&a, &users, MetricProtocol::FscoreMax).unwrap(), 1.0);
        assert_eq!(fscore_protocol(&a, &users, MetricProtocol::FscoreAvg).unwrap(), 0.5);
        let one = vec![b];
        assert_eq!(
            fscore_protocol(&a, &one, MetricProtocol::FscoreMax).unwrap(),
            fscore_protocol(&a, &one, MetricProtocol::FscoreAvg).unwrap()
        );
    }

    #[test]
    fn auc_examples() {
        let l = [true, false, true, false];
        let r = auc_sweep(&[0.9, 0.8, 0.4, 0.3], &l, None).unwrap();
        assert!((r.auc - 0.75).abs() < 1e-15);
        assert_eq!(auc_sweep(&[0.9, 0.1, 0.8, 0.2], &l, None).unwrap().auc, 1.0);
        assert_eq!(auc_sweep(&[0.1, 0.9, 0.2, 0.8], &l, None).unwrap().auc, 0.0);
        assert_eq!(auc_sweep(&[0.5; 4], &l, None).unwrap().auc, 0.5);
        assert!(matches!(auc_sweep(&[0.1, 0.2], &[true, true], None), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn budget_guard() {
        let cfg = EvalConfig::default();
        assert_eq!(cfg.budget_frames(240), 36);
        assert_eq!(cfg.budget_frames(100), 15);
        assert_eq!(cfg.budget_frames(6), 0);
    }
}
