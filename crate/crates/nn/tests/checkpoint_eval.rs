mod common;

use audible_core::decode::decode_events;
use audible_nn::checkpoint::Checkpoint;
use audible_nn::infer::{evaluate, predict, score_predictions, VideoPrediction};
use audible_nn::Trainer;
use common::{prepared, tiny_config};

fn trained(steps: usize) -> (Trainer, Vec<audible_nn::data::PreparedVideo>) {
    let mut c = tiny_config();
    c.iterations = steps;
    let videos = prepared(4, 21, 14, &c);
    let mut t = Trainer::new(c).unwrap();
    t.fit(&videos, None, None, |_| {}).unwrap();
    (t, videos)
}

#[test]
fn round_trip_preserves_weights_optimizer_and_metrics() {
    let (t, videos) = trained(3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    t.checkpoint(true).save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.step, 3);
    assert_eq!(back.config, t.config);
    for (a, b) in back.store.entries.iter().zip(&t.store.entries) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.tensor, b.tensor);
    }
    let opt = back.optimizer.as_ref().unwrap();
    assert_eq!(opt.step, t.opt.step);
    assert_eq!(opt.m, t.opt.m);
    assert_eq!(opt.v, t.opt.v);

    let (before, pb) = evaluate(&t.net, &t.store, &t.config, &videos).unwrap();
    let (after, pa) = evaluate(&back.network(), &back.store, &back.config, &videos).unwrap();
    assert_eq!(pb, pa);
    assert_eq!(serde_json::to_string(&before).unwrap(), serde_json::to_string(&after).unwrap());
}

#[test]
fn resumed_training_matches_uninterrupted_training() {
    let (mut full, videos) = trained(2);
    let mut resumed = Trainer::from_checkpoint(Checkpoint::from_bytes(&full.checkpoint(true).to_bytes()).unwrap());
    let a = full.train_step(&videos).unwrap();
    let b = resumed.train_step(&videos).unwrap();
    assert_eq!(a, b);
    assert_eq!(full.store.entries[0].tensor, resumed.store.entries[0].tensor);
}

#[test]
fn rejects_mismatched_or_damaged_files() {
    let (t, _) = trained(1);
    let bytes = t.checkpoint(false).to_bytes();
    assert!(Checkpoint::from_bytes(&bytes).unwrap().optimizer.is_none());

    let mut other = t.config.clone();
    other.model_dim = 16;
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    let err = ck.check_compatible(&other, std::path::Path::new("x.ckpt")).unwrap_err();
    assert!(err.to_string().contains("architecture mismatch"), "{err}");

    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 1;
    assert!(Checkpoint::from_bytes(&bad_magic).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());

    // A header whose tensor table disagrees with the stored configuration.
    let key = b"\"model_dim\":8";
    let at = bytes.windows(key.len()).position(|w| w == key).unwrap();
    let mut tampered = bytes.clone();
    tampered[at + key.len() - 1] = b'9';
    let err = Checkpoint::from_bytes(&tampered).unwrap_err();
    assert!(err.contains("architecture mismatch"), "{err}");
}

#[test]
fn prediction_covers_every_frame_and_is_self_consistent() {
    let (t, videos) = trained(2);
    for v in &videos {
        let p = predict(&t.net, &t.store, &t.config, v, true).unwrap();
        assert_eq!(p.probs.len(), v.num_frames);
        let sound: Vec<f64> = p.probs.iter().map(|r| r[1]).collect();
        assert_eq!(p.events, decode_events(&sound, t.config.decode_threshold, t.config.min_separation));
        let maps = p.maps.unwrap();
        assert_eq!(maps.len(), v.num_frames);
        assert!(maps.iter().all(|m| m.len() == p.map_side * p.map_side));
    }
}

#[test]
fn own_training_set_report_is_finite() {
    let (t, videos) = trained(2);
    let (r, _) = evaluate(&t.net, &t.store, &t.config, &videos).unwrap();
    for v in [r.precision, r.recall, r.f1, r.nme, r.mae, r.obo] {
        assert!(v.is_finite());
    }
}

#[test]
fn ground_truth_stub_scores_perfectly() {
    let c = tiny_config();
    let videos = prepared(6, 40, 30, &c);
    let preds: Vec<VideoPrediction> = videos
        .iter()
        .map(|v| {
            let probs: Vec<[f64; 2]> = v.labels.iter().map(|&l| [1.0 - f64::from(l), f64::from(l)]).collect();
            let sound: Vec<f64> = probs.iter().map(|r| r[1]).collect();
            VideoPrediction {
                id: v.id.clone(),
                events: decode_events(&sound, 0.5, 1),
                probs,
                keyframes: None,
                maps: None,
                map_side: 0,
            }
        })
        .collect();
    assert!(videos.iter().any(|v| !v.keyframes().is_empty()));
    let r = score_predictions(&videos, &preds, 2).unwrap();
    assert_eq!((r.precision, r.recall, r.nme), (1.0, 1.0, 0.0));
    assert_eq!(r.pme, Some(0.0));

    let mut rev_v = videos.clone();
    let mut rev_p = preds.clone();
    rev_v.reverse();
    rev_p.reverse();
    let s = score_predictions(&rev_v, &rev_p, 2).unwrap();
    assert_eq!((s.precision, s.recall, s.f1, s.nme, s.pme), (r.precision, r.recall, r.f1, r.nme, r.pme));
}
