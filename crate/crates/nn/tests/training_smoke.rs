use std::time::Instant;

use audible_core::synth::{random_scene, Preset, SceneShape, SynthVideo};
use audible_nn::data::prepare_synthetic;
use audible_nn::{Trainer, TrainConfig};

fn videos(n: usize, seed: u64, config: &TrainConfig) -> Vec<audible_nn::data::PreparedVideo> {
    let presets = [Preset::Bounce, Preset::Multi, Preset::Gravity];
    let sv: Vec<SynthVideo> = (0..n)
        .map(|i| {
            let spec = random_scene(presets[i % 3], SceneShape::default(), seed + i as u64);
            SynthVideo::generate(&spec, &format!("v{i:03}")).unwrap()
        })
        .collect();
    prepare_synthetic(&sv, config).unwrap()
}

#[test]
fn ten_steps_run_and_stay_finite() {
    let mut config = TrainConfig::toy();
    config.iterations = 10;
    let data = videos(6, 1, &config);
    let mut trainer = Trainer::new(config).unwrap();
    let t0 = Instant::now();
    let summary = trainer.fit(&data, None, None, |_| {}).unwrap();
    eprintln!("10 toy steps in {:.2?}", t0.elapsed());
    assert_eq!(summary.history.len(), 10);
    assert!(summary.history.iter().all(|l| l.total.is_finite()));
}

#[path = "common/mod.rs"]
mod common;

#[test]
fn hundred_steps_are_bitwise_reproducible() {
    let mut c = common::tiny_config();
    c.iterations = 100;
    let data = common::prepared(5, 77, 12, &c);
    let run = || {
        let mut t = Trainer::new(c.clone()).unwrap();
        let s = t.fit(&data, None, None, |_| {}).unwrap();
        let bits: Vec<u64> = s.history.iter().map(|l| l.total.to_bits()).collect();
        (bits, t.store.entries.iter().map(|e| e.tensor.clone()).collect::<Vec<_>>())
    };
    let (a, wa) = run();
    let (b, wb) = run();
    assert_eq!(a, b);
    assert_eq!(wa, wb);
}

#[test]
fn non_finite_loss_aborts_with_step() {
    let c = common::tiny_config();
    let data = common::prepared(2, 5, 10, &c);
    let mut t = Trainer::new(c).unwrap();
    let id = t.store.find("head.weight").unwrap();
    t.store.get_mut(id).data[0] = f32::NAN;
    let err = t.train_step(&data).unwrap_err();
    assert!(matches!(err, audible_nn::NnError::NonFinite { step: 0, .. }), "{err}");
}
