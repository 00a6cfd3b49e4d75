//! Video records, the on-disk container and the synthetic planted-segment generator.
//!
//! A dataset is a JSON manifest plus a binary data file. The data file starts
//! with the 8-byte magic `SGAEDDS1`, followed by one block per video:
//!
//! ```text
//! u32 id length, id bytes, u32 array count,
//! per array: u32 name length, name bytes, u8 dtype (0 = f64, 1 = i32),
//!            u32 rank, u64 per dim, then numel little-endian values
//! ```
//!
//! Arrays per video: `features` f64 `[N×M]`, `n_frames` i32 `[1]`,
//! `picks` i32 `[N]`, `change_points` i32 `[S×2]` (half-open `[start, end)`),
//! and optionally `gt_scores` f64 `[n]` and `user_summaries` i32 `[U×n]`.
//! The manifest records each block's byte offset and length.
//!
//! Converting the community benchmark feature bundles amounts to copying their
//! per-video `features`, `picks`, `n_frames`, `change_points` (inclusive ends
//! become exclusive), `gtscore` and `user_summary` arrays into a
//! [`VideoRecord`] and calling [`save_dataset`]; reading those source files is
//! not part of this crate.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 8] = b"SGAEDDS1";

/// How a dataset's videos are scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricProtocol {
    /// Best F-score over the user summaries.
    FscoreMax,
    /// Mean F-score over the user summaries.
    FscoreAvg,
    /// ROC AUC against binarized ground-truth frame scores.
    Auc,
}

impl MetricProtocol {
    pub fn name(self) -> &'static str {
        match self {
            MetricProtocol::FscoreMax => "fscore_max",
            MetricProtocol::FscoreAvg => "fscore_avg",
            MetricProtocol::Auc => "auc",
        }
    }
}

impl std::str::FromStr for MetricProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fscore_max" => Ok(MetricProtocol::FscoreMax),
            "fscore_avg" => Ok(MetricProtocol::FscoreAvg),
            "auc" => Ok(MetricProtocol::Auc),
            _ => Err(Error::Config(format!(
                "unknown metric protocol {s:?} (expected fscore_max, fscore_avg or auc)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    /// Subsampled frame features `[N×M]`.
    pub features: Tensor,
    /// Frame count at the original rate.
    pub n_frames: usize,
    /// Original frame index of each subsampled frame.
    pub picks: Vec<usize>,
    /// Shots as half-open `[start, end)` original-frame intervals.
    pub change_points: Vec<(usize, usize)>,
    pub gt_scores: Option<Vec<f64>>,
    pub user_summaries: Option<Vec<Vec<u8>>>,
}

impl VideoRecord {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shot_lengths(&self) -> Vec<usize> {
        self.change_points.iter().map(|&(s, e)| e - s).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, detail: String| Error::Validation {
            video: self.id.clone(),
            field,
            detail,
        };
        if self.id.is_empty() {
            return Err(bad("id", "empty id".into()));
        }
        if self.features.rank() != 2 || self.features.rows() == 0 || self.features.cols() == 0 {
            return Err(bad("features", format!("expected a non-empty N×M matrix, got {:?}", self.features.shape())));
        }
        if !self.features.is_finite() {
            return Err(bad("features", "non-finite value".into()));
        }
        let n = self.n_frames;
        if self.picks.len() != self.len() {
            return Err(bad("picks", format!("{} picks for {} frames", self.picks.len(), self.len())));
        }
        if self.picks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("picks", "not strictly increasing".into()));
        }
        if let Some(&last) = self.picks.last() {
            if last >= n {
                return Err(bad("picks", format!("pick {last} outside {n} original frames")));
            }
        }
        let mut cursor = 0;
        for (i, &(s, e)) in self.change_points.iter().enumerate() {
            if s != cursor {
                let what = if s < cursor { "overlaps the previous shot" } else { "leaves a gap" };
                return Err(bad("change_points", format!("shot {i} [{s}, {e}) {what}")));
            }
            if e <= s {
                return Err(bad("change_points", format!("shot {i} [{s}, {e}) is empty")));
            }
            cursor = e;
        }
        if cursor != n {
            return Err(bad("change_points", format!("shots cover [0, {cursor}), expected [0, {n})")));
        }
        if let Some(gt) = &self.gt_scores {
            if gt.len() != n {
                return Err(bad("gt_scores", format!("length {} != {n}", gt.len())));
            }
            if gt.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(bad("gt_scores", "value outside [0, 1]".into()));
            }
        }
        if let Some(users) = &self.user_summaries {
            for (u, row) in users.iter().enumerate() {
                if row.len() != n {
                    return Err(bad("user_summaries", format!("user {u}: length {} != {n}", row.len())));
                }
                if row.iter().any(|&v| v > 1) {
                    return Err(bad("user_summaries", format!("user {u}: value outside {{0, 1}}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub offset: u64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub metric_protocol: MetricProtocol,
    /// Data file path, relative to the manifest's directory.
    pub data_file: String,
    pub videos: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub protocol: MetricProtocol,
    pub videos: Vec<VideoRecord>,
}

impl Dataset {
    /// Checks every record plus the dataset-level rules: at least one video,
    /// unique ids, a common feature width and the annotations the protocol needs.
    pub fn validate(&self) -> Result<()> {
        if self.videos.is_empty() {
            return Err(Error::Validation {
                video: String::new(),
                field: "videos",
                detail: "no videos".into(),
            });
        }
        let mut seen = HashSet::new();
        let width = self.videos[0].features.cols();
        for v in &self.videos {
            v.validate()?;
            if !seen.insert(v.id.as_str()) {
                return Err(Error::Validation {
                    video: v.id.clone(),
                    field: "id",
                    detail: "duplicate id".into(),
                });
            }
            if v.features.cols() != width {
                return Err(Error::Validation {
                    video: v.id.clone(),
                    field: "features",
                    detail: format!("width {} differs from {width}", v.features.cols()),
                });
            }
            let missing = match self.protocol {
                MetricProtocol::Auc => v.gt_scores.is_none().then_some("gt_scores"),
                _ => match &v.user_summaries {
                    Some(u) if !u.is_empty() => None,
                    _ => Some("user_summaries"),
                },
            };
            if let Some(field) = missing {
                return Err(Error::Validation {
                    video: v.id.clone(),
                    field,
                    detail: format!("required by protocol {}", self.protocol.name()),
                });
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.videos.first().map_or(0, |v| v.features.cols())
    }

    pub fn get(&self, id: &str) -> Option<&VideoRecord> {
        self.videos.iter().find(|v| v.id == id)
    }
}

const DTYPE_F64: u8 = 0;
const DTYPE_I32: u8 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_header(out: &mut Vec<u8>, name: &str, dtype: u8, shape: &[usize]) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    out.push(dtype);
    put_u32(out, shape.len() as u32);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
}

fn put_f64(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    put_header(out, name, DTYPE_F64, shape);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_i32(out: &mut Vec<u8>, name: &str, shape: &[usize], data: impl Iterator<Item = usize>) {
    put_header(out, name, DTYPE_I32, shape);
    for v in data {
        out.extend_from_slice(&(v as i32).to_le_bytes());
    }
}

fn encode_video(v: &VideoRecord) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, v.id.len() as u32);
    out.extend_from_slice(v.id.as_bytes());
    let count = 4 + v.gt_scores.is_some() as u32 + v.user_summaries.is_some() as u32;
    put_u32(&mut out, count);
    put_f64(&mut out, "features", v.features.shape(), v.features.data());
    put_i32(&mut out, "n_frames", &[1], std::iter::once(v.n_frames));
    put_i32(&mut out, "picks", &[v.picks.len()], v.picks.iter().copied());
    put_i32(
        &mut out,
        "change_points",
        &[v.change_points.len(), 2],
        v.change_points.iter().flat_map(|&(s, e)| [s, e]),
    );
    if let Some(gt) = &v.gt_scores {
        put_f64(&mut out, "gt_scores", &[gt.len()], gt);
    }
    if let Some(users) = &v.user_summaries {
        put_i32(
            &mut out,
            "user_summaries",
            &[users.len(), v.n_frames],
            users.iter().flatten().map(|&b| b as usize),
        );
    }
    out
}

enum Array {
    F64(Vec<usize>, Vec<f64>),
    I32(Vec<usize>, Vec<i32>),
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn str(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }

    fn array(&mut self) -> std::result::Result<(String, Array), String> {
        let name = self.str()?;
        let dtype = self.take(1)?[0];
        let rank = self.u32()? as usize;
        let shape = (0..rank)
            .map(|_| Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize))
            .collect::<std::result::Result<Vec<_>, String>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| format!("{name}: shape overflow"))?;
        let width = if dtype == DTYPE_F64 { 8 } else { 4 };
        let raw = self.take(numel.checked_mul(width).ok_or_else(|| format!("{name}: too large"))?)?;
        let array = match dtype {
            DTYPE_F64 => Array::F64(shape, raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            DTYPE_I32 => Array::I32(shape, raw.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect()),
            other => return Err(format!("{name}: unknown dtype {other}")),
        };
        Ok((name, array))
    }
}

fn decode_video(block: &[u8]) -> std::result::Result<VideoRecord, String> {
    let mut c = Cursor { bytes: block, pos: 0 };
    let id = c.str()?;
    let count = c.u32()?;
    let mut features = None;
    let mut n_frames = None;
    let mut picks = None;
    let mut change_points = None;
    let mut gt_scores = None;
    let mut user_summaries = None;
    let ints = |name: &str, data: &[i32]| -> std::result::Result<Vec<usize>, String> {
        data.iter()
            .map(|&v| usize::try_from(v).map_err(|_| format!("{name}: negative value {v}")))
            .collect()
    };
    for _ in 0..count {
        let (name, array) = c.array()?;
        match (name.as_str(), array) {
            ("features", Array::F64(shape, data)) if shape.len() == 2 => {
                features = Some(Tensor::new(shape, data).map_err(|e| format!("features: {e}"))?)
            }
            ("n_frames", Array::I32(_, data)) if data.len() == 1 => {
                n_frames = Some(ints("n_frames", &data)?[0])
            }
            ("picks", Array::I32(shape, data)) if shape.len() == 1 => picks = Some(ints("picks", &data)?),
            ("change_points", Array::I32(shape, data)) if shape.len() == 2 && shape[1] == 2 => {
                let v = ints("change_points", &data)?;
                change_points = Some(v.chunks_exact(2).map(|p| (p[0], p[1])).collect())
            }
            ("gt_scores", Array::F64(shape, data)) if shape.len() == 1 => gt_scores = Some(data),
            ("user_summaries", Array::I32(shape, data)) if shape.len() == 2 => {
                let rows = data
                    .chunks(shape[1].max(1))
                    .take(shape[0])
                    .map(|r| {
                        r.iter()
                            .map(|&b| u8::try_from(b).map_err(|_| format!("user_summaries: value {b}")))
                            .collect::<std::result::Result<Vec<u8>, String>>()
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                user_summaries = Some(rows)
            }
            (other, _) => return Err(format!("video {id}: unexpected or malformed array {other:?}")),
        }
    }
    if c.pos != block.len() {
        return Err(format!("video {id}: {} trailing bytes", block.len() - c.pos));
    }
    let missing = |what: &str| format!("video {id}: missing array {what}");
    Ok(VideoRecord {
        features: features.ok_or_else(|| missing("features"))?,
        n_frames: n_frames.ok_or_else(|| missing("n_frames"))?,
        picks: picks.ok_or_else(|| missing("picks"))?,
        change_points: change_points.ok_or_else(|| missing("change_points"))?,
        gt_scores,
        user_summaries,
        id,
    })
}

fn data_path(manifest_path: &Path, manifest: &DatasetManifest) -> PathBuf {
    manifest_path
        .parent()
        .unwrap_or_else(|| Path::new(""))
        .join(&manifest.data_file)
}

/// Writes `<stem>.data` next to the manifest. Output is a pure function of the
/// dataset, so saving a loaded dataset reproduces the original bytes.
pub fn save_dataset(dataset: &Dataset, manifest_path: &Path) -> Result<DatasetManifest> {
    dataset.validate()?;
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("bad manifest path {}", manifest_path.display())))?;
    let mut manifest = DatasetManifest {
        name: dataset.name.clone(),
        metric_protocol: dataset.protocol,
        data_file: format!("{stem}.data"),
        videos: Vec::with_capacity(dataset.videos.len()),
    };
    let mut data = DATASET_MAGIC.to_vec();
    for v in &dataset.videos {
        let block = encode_video(v);
        manifest.videos.push(ManifestEntry {
            id: v.id.clone(),
            offset: data.len() as u64,
            length: block.len() as u64,
        });
        data.extend_from_slice(&block);
    }
    let dpath = data_path(manifest_path, &manifest);
    fs::write(&dpath, &data).map_err(|e| Error::io(&dpath, e))?;
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))?;
    Ok(manifest)
}

/// Reads and fully validates a dataset.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(manifest_path, e.to_string()))?;
    let dpath = data_path(manifest_path, &manifest);
    let data = fs::read(&dpath).map_err(|e| Error::io(&dpath, e))?;
    if data.len() < DATASET_MAGIC.len() || &data[..8] != DATASET_MAGIC {
        return Err(Error::format(&dpath, "bad magic header"));
    }
    let mut videos = Vec::with_capacity(manifest.videos.len());
    let mut expected = DATASET_MAGIC.len() as u64;
    for entry in &manifest.videos {
        if entry.offset != expected {
            return Err(Error::format(
                &dpath,
                format!("video {}: offset {} but previous block ends at {expected}", entry.id, entry.offset),
            ));
        }
        let end = entry.offset.checked_add(entry.length).filter(|&e| e <= data.len() as u64);
        let end = end.ok_or_else(|| Error::format(&dpath, format!("video {}: block past end of file", entry.id)))?;
        let record = decode_video(&data[entry.offset as usize..end as usize]).map_err(|d| Error::format(&dpath, d))?;
        if record.id != entry.id {
            return Err(Error::format(&dpath, format!("manifest id {} names block {}", entry.id, record.id)));
        }
        videos.push(record);
        expected = end;
    }
    if expected != data.len() as u64 {
        return Err(Error::format(&dpath, format!("{} unreferenced trailing bytes", data.len() as u64 - expected)));
    }
    let dataset = Dataset {
        name: manifest.name,
        protocol: manifest.metric_protocol,
        videos,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Step-function expansion to the original frame rate: every frame takes the
/// score of the nearest preceding pick; frames before `picks[0]` take `s[0]`.
pub fn expand_scores(scores: &[f64], picks: &[usize], n_frames: usize) -> Result<Vec<f64>> {
    if scores.len() != picks.len() || scores.is_empty() {
        return Err(Error::Contract(format!(
            "{} scores for {} picks",
            scores.len(),
            picks.len()
        )));
    }
    let mut out = Vec::with_capacity(n_frames);
    let mut k = 0;
    for f in 0..n_frames {
        while k + 1 < picks.len() && picks[k + 1] <= f {
            k += 1;
        }
        out.push(scores[k]);
    }
    Ok(out)
}

/// Fraction of subsampled frames in the planted segment.
pub const PLANTED_FRACTION: f64 = 0.15;
const BACKGROUND_SHOT_FRACTION: f64 = 0.1;
/// Per-dimension offset between the two cluster centres, in noise standard deviations.
const CLUSTER_OFFSET: f64 = 3.0;

/// Background region `[start, end)` cut into near-equal shots of about `target` frames.
fn split_region(start: usize, end: usize, target: usize, out: &mut Vec<(usize, usize)>) {
    let len = end - start;
    if len == 0 {
        return;
    }
    let pieces = (len / target.max(1)).max(1);
    let base = len / pieces;
    let extra = len % pieces;
    let mut s = start;
    for i in 0..pieces {
        let l = base + usize::from(i < extra);
        out.push((s, s + l));
        s += l;
    }
}

/// Synthetic dataset with a planted, separable segment per video.
///
/// Frames are subsampled with stride 2 (`n_frames = 2N`). Background frames are
/// drawn around one centre and a contiguous segment of `⌊0.15·N⌋` frames around
/// a second centre offset by 3 per dimension; both have unit noise. The planted
/// segment is its own shot, forms the single user summary and carries ground
/// truth 1 (0 elsewhere).
pub fn synth_planted(num_videos: usize, n: usize, m: usize, seed: u64) -> Result<Dataset> {
    if n < 10 || m < 4 || num_videos == 0 {
        return Err(Error::Config(format!(
            "synth_planted needs N ≥ 10, M ≥ 4 and at least one video (got N={n}, M={m}, videos={num_videos})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
    let planted_centre: Vec<f64> = background
        .iter()
        .map(|&b| b + if rng.random::<bool>() { CLUSTER_OFFSET } else { -CLUSTER_OFFSET })
        .collect();
    let planted_len = ((PLANTED_FRACTION * n as f64) + 1e-9).floor() as usize;
    let shot_target = ((BACKGROUND_SHOT_FRACTION * n as f64).round() as usize).max(1);

    let mut videos = Vec::with_capacity(num_videos);
    for vi in 0..num_videos {
        let start = rng.random_range(0..=n - planted_len);
        let end = start + planted_len;
        let mut data = Vec::with_capacity(n * m);
        for t in 0..n {
            let centre = if (start..end).contains(&t) { &planted_centre } else { &background };
            data.extend(centre.iter().map(|&c| {
                let z: f64 = StandardNormal.sample(&mut rng);
                c + z
            }));
        }
        let mut shots = Vec::new();
        split_region(0, start, shot_target, &mut shots);
        shots.push((start, end));
        split_region(end, n, shot_target, &mut shots);
        let n_frames = 2 * n;
        let change_points = shots.iter().map(|&(s, e)| (2 * s, 2 * e)).collect();
        let mask: Vec<u8> = (0..n_frames).map(|f| u8::from((2 * start..2 * end).contains(&f))).collect();
        videos.push(VideoRecord {
            id: format!("video_{:03}", vi + 1),
            features: Tensor::matrix(n, m, data)?,
            n_frames,
            picks: (0..n).map(|t| 2 * t).collect(),
            change_points,
            gt_scores: Some(mask.iter().map(|&b| f64::from(b)).collect()),
            user_summaries: Some(vec![mask]),
        });
    }
    let dataset = Dataset {
        name: format!("synth_planted_seed{seed}"),
        protocol: MetricProtocol::FscoreMax,
        videos,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Centre of the background cluster as estimated from a record's ground truth.
pub fn background_centroid(record: &VideoRecord) -> Option<Vec<f64>> {
    let gt = record.gt_scores.as_ref()?;
    let m = record.features.cols();
    let mut sum = vec![0.0; m];
    let mut count = 0usize;
    for (t, &p) in record.picks.iter().enumerate() {
        if gt[p] < 0.5 {
            for (s, v) in sum.iter_mut().zip(record.features.row(t)) {
                *s += v;
            }
            count += 1;
        }
    }
    (count > 0).then(|| sum.into_iter().map(|s| s / count as f64).collect())
}
