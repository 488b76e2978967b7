#![allow(dead_code)]

use audible_core::synth::{random_scene, Preset, SceneShape, SynthVideo};
use audible_nn::data::{prepare_synthetic, PreparedVideo};
use audible_nn::TrainConfig;

/// A network small enough for fast tests.
pub fn tiny_config() -> TrainConfig {
    let mut c = TrainConfig::toy();
    c.input_size = 32;
    c.clip_len = 6;
    c.batch_size = 2;
    c.model_dim = 8;
    c.fusion_width = 8;
    c.transformer_heads = 2;
    c.transformer_layers = 1;
    c
}

pub fn synth_videos(n: usize, seed: u64, frames: usize, side: usize) -> Vec<SynthVideo> {
    let presets = [Preset::Bounce, Preset::Multi, Preset::Gravity];
    let shape = SceneShape {
        num_frames: frames,
        height: side,
        width: side,
    };
    (0..n)
        .map(|i| {
            let spec = random_scene(presets[i % 3], shape, seed + i as u64);
            SynthVideo::generate(&spec, &format!("vid{i:03}")).unwrap()
        })
        .collect()
}

pub fn prepared(n: usize, seed: u64, frames: usize, config: &TrainConfig) -> Vec<PreparedVideo> {
    prepare_synthetic(&synth_videos(n, seed, frames, 40), config).unwrap()
}
