use proptest::prelude::*;
use sumgan_core::dataset::{expand_scores, load_dataset, save_dataset, synth_planted, Dataset, MetricProtocol};
use sumgan_core::Error;

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = synth_planted(5, 30, 6, 3).unwrap();
    ds.videos[1].user_summaries.as_mut().unwrap().push(vec![0; 60]);
    ds.videos[2].gt_scores = None;
    let a = dir.path().join("a.manifest");
    save_dataset(&ds, &a).unwrap();
    let loaded = load_dataset(&a).unwrap();
    assert_eq!(loaded, ds);
    let b = dir.path().join("b.manifest");
    save_dataset(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(dir.path().join("a.data")).unwrap(), std::fs::read(dir.path().join("b.data")).unwrap());
    let ma = std::fs::read_to_string(&a).unwrap().replace("a.data", "b.data");
    assert_eq!(ma, std::fs::read_to_string(&b).unwrap());
}

#[test]
fn empty_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("empty.manifest");
    std::fs::write(dir.path().join("empty.data"), b"SGAEDDS1").unwrap();
    std::fs::write(&m, r#"{"name":"e","metric_protocol":"fscore_max","data_file":"empty.data","videos":[]}"#).unwrap();
    match load_dataset(&m) {
        Err(Error::Validation { detail, .. }) => assert_eq!(detail, "no videos"),
        other => panic!("{other:?}"),
    }
}

/// Saves a valid dataset, then writes `edit`ed change points straight into
/// the data file so that only the loader's validation can catch them.
fn corrupt_and_reload(edit: impl FnOnce(&mut Dataset)) -> Error {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("d.manifest");
    let mut ds = synth_planted(2, 20, 4, 9).unwrap();
    save_dataset(&ds, &m).unwrap();
    edit(&mut ds);
    let data = dir.path().join("d.data");
    let patched = patch_change_points(&std::fs::read(&data).unwrap(), &ds);
    std::fs::write(&data, patched).unwrap();
    load_dataset(&m).unwrap_err()
}

/// Overwrites the first video's change-point array in place (same length).
fn patch_change_points(bytes: &[u8], ds: &Dataset) -> Vec<u8> {
    let mut out = bytes.to_vec();
    let key = b"change_points";
    let pos = out.windows(key.len()).position(|w| w == key).unwrap() + key.len();
    let rank = u32::from_le_bytes(out[pos + 1..pos + 5].try_into().unwrap()) as usize;
    let mut at = pos + 5 + 8 * rank;
    for &(s, e) in &ds.videos[0].change_points {
        out[at..at + 4].copy_from_slice(&(s as i32).to_le_bytes());
        out[at + 4..at + 8].copy_from_slice(&(e as i32).to_le_bytes());
        at += 8;
    }
    out
}

#[test]
fn overlapping_change_points_are_rejected_on_load() {
    let err = corrupt_and_reload(|ds| ds.videos[0].change_points[1].0 -= 1);
    assert!(matches!(err, Error::Validation { field: "change_points", ref video, .. } if video == "video_001"), "{err}");
}

#[test]
fn corrupted_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("d.manifest");
    save_dataset(&synth_planted(2, 20, 4, 9).unwrap(), &m).unwrap();
    let data = dir.path().join("d.data");
    let good = std::fs::read(&data).unwrap();
    let mut bad = good.clone();
    bad[0] = b'X';
    std::fs::write(&data, &bad).unwrap();
    assert!(matches!(load_dataset(&m), Err(Error::Format { .. })));
    std::fs::write(&data, &good[..good.len() - 5]).unwrap();
    assert!(matches!(load_dataset(&m), Err(Error::Format { .. })));
}

#[test]
fn protocol_annotations_are_required() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = synth_planted(2, 20, 4, 9).unwrap();
    ds.protocol = MetricProtocol::Auc;
    ds.videos[1].gt_scores = None;
    let err = save_dataset(&ds, &dir.path().join("x.manifest")).unwrap_err();
    assert!(matches!(err, Error::Validation { field: "gt_scores", .. }));
}

proptest! {
    #[test]
    fn expansion_scales_and_has_full_length(
        s in prop::collection::vec(0.0f64..1.0, 1..20),
        c in 0.0f64..3.0,
        stride in 1usize..4,
        tail in 0usize..5,
    ) {
        let picks: Vec<usize> = (0..s.len()).map(|i| 1 + i * stride).collect();
        let n = picks.last().unwrap() + 1 + tail;
        let e = expand_scores(&s, &picks, n).unwrap();
        prop_assert_eq!(e.len(), n);
        prop_assert_eq!(e[0], s[0]);
        let scaled: Vec<f64> = s.iter().map(|v| v * c).collect();
        let es = expand_scores(&scaled, &picks, n).unwrap();
        for (a, b) in e.iter().zip(&es) {
            prop_assert_eq!(a * c, *b);
        }
    }

    #[test]
    fn synthetic_data_is_deterministic(seed in any::<u64>()) {
        prop_assert_eq!(synth_planted(2, 12, 4, seed).unwrap(), synth_planted(2, 12, 4, seed).unwrap());
    }
}
