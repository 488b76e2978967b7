//! The frame classifier: three kinematic encoders, cross-kinematics attention,
//! discriminative map head, and the spatio-temporal fusion classifier.

use crate::config::{EncoderKind, NetConfig};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// conv (no bias) + batch norm + ReLU.
#[derive(Debug, Clone)]
struct ConvBlock {
    weight: ParamId,
    bn: BatchNorm,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone, Copy)]
struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

impl BatchNorm {
    fn new(store: &mut ParamStore, name: &str, c: usize) -> Self {
        Self {
            gamma: store.constant(format!("{name}.gamma"), &[c], 1.0),
            beta: store.constant(format!("{name}.beta"), &[c], 0.0),
            mean: store.buffer(format!("{name}.running_mean"), &[c], 0.0),
            var: store.buffer(format!("{name}.running_var"), &[c], 1.0),
        }
    }

    fn apply(&self, g: &mut Graph<'_>, x: Var) -> Var {
        g.batch_norm(x, self.gamma, self.beta, self.mean, self.var)
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    fn new(store: &mut ParamStore, name: &str, out: usize, inp: usize) -> Self {
        Self {
            weight: store.normal(format!("{name}.weight"), &[out, inp], inp, 1.0),
            bias: store.constant(format!("{name}.bias"), &[out], 0.0),
        }
    }

    /// Token rows `[n, inp]` to `[n, out]`.
    fn rows(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w, false, true);
        g.add_bias(y, b, 1)
    }

    /// Channel mixing of `[n, inp, p]` to `[n, out, p]`.
    fn channels(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(w, x, false, false);
        g.add_bias(y, b, 1)
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm {
    fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gamma: store.constant(format!("{name}.gamma"), &[d], 1.0),
            beta: store.constant(format!("{name}.beta"), &[d], 0.0),
        }
    }
}

#[derive(Debug, Clone)]
struct Encoder {
    blocks: Vec<ConvBlock>,
}

impl Encoder {
    fn new(store: &mut ParamStore, name: &str, kind: EncoderKind, in_ch: usize) -> Self {
        // (kernel, stride, channels)
        let schedule: &[(usize, usize, usize)] = match kind {
            EncoderKind::Toy => &[(3, 2, 8), (3, 2, 16), (3, 2, 32), (3, 2, 64)],
            EncoderKind::Full => &[(7, 2, 64), (3, 2, 64), (3, 1, 256), (3, 2, 512), (3, 2, 1024)],
        };
        let mut c = in_ch;
        let blocks = schedule
            .iter()
            .enumerate()
            .map(|(i, &(k, s, out))| {
                let block = ConvBlock {
                    weight: store.normal(format!("{name}.{i}.conv"), &[out, c, k, k], c * k * k, 2.0),
                    bn: BatchNorm::new(store, &format!("{name}.{i}.bn"), out),
                    stride: s,
                    pad: k / 2,
                };
                c = out;
                block
            })
            .collect();
        Self { blocks }
    }

    fn out_channels(&self, store: &ParamStore) -> usize {
        store.get(self.blocks.last().unwrap().weight).shape[0]
    }

    fn apply(&self, g: &mut Graph<'_>, mut x: Var) -> Var {
        for b in &self.blocks {
            let w = g.param(b.weight);
            x = g.conv2d(x, w, b.stride, b.pad);
            x = b.bn.apply(g, x);
            x = g.relu(x);
        }
        x
    }
}

#[derive(Debug, Clone)]
struct TransformerLayer {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

/// Per-frame inputs for a batch of `n` frames, each `[n, c, s, s]`.
#[derive(Debug, Clone)]
pub struct FrameBatch {
    pub frames: Tensor,
    /// Flow from the frame to the previous frame.
    pub v_bwd: Tensor,
    /// Flow from the frame to the next frame.
    pub v_fwd: Tensor,
    /// Inflection anchored at the previous frame.
    pub a_fwd: Tensor,
    /// Inflection anchored at the frame itself.
    pub a_bwd: Tensor,
    /// Frames per clip; `n` must be a multiple of it.
    pub clip_len: usize,
}

impl FrameBatch {
    pub fn num_frames(&self) -> usize {
        self.frames.shape[0]
    }
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// `[n, 2]` rows `(p_no_sound, p_sound)`.
    pub probs: Var,
    /// `[n, 1, h, w]` discriminative maps.
    pub maps: Var,
    /// `[n, 3d, h, w]` aggregated features.
    pub features: Var,
    /// `[n, 3d]` spatially pooled motion-region features.
    pub motion_pooled: Var,
    /// `[n, 3d]` spatially pooled non-motion-region features.
    pub non_motion_pooled: Var,
    /// `[n, p, p]` motion-query attention weights.
    pub attn_motion: Var,
    /// `[n, p, p]` inflection-query attention weights.
    pub attn_inflection: Var,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetConfig,
    enc_x: Encoder,
    enc_m: Encoder,
    enc_c: Encoder,
    proj_f: Linear,
    key_f: Linear,
    value_f: Linear,
    query_m: Linear,
    query_c: Linear,
    map_conv: ParamId,
    map_bn: BatchNorm,
    fuse_conv: ParamId,
    fuse_bias: ParamId,
    pos_embed: ParamId,
    layers: Vec<TransformerLayer>,
    final_ln: LayerNorm,
    head: Linear,
}

impl Network {
    /// Registers every parameter in a fresh store initialized from `seed`.
    pub fn new(config: NetConfig, seed: u64) -> (Self, ParamStore) {
        let mut s = ParamStore::new(seed);
        let enc_x = Encoder::new(&mut s, "enc_x", config.encoder, 3);
        let enc_m = Encoder::new(&mut s, "enc_m", config.encoder, 2);
        let enc_c = Encoder::new(&mut s, "enc_c", config.encoder, 2);
        let c = enc_x.out_channels(&s);
        let d = config.model_dim;
        let w = config.fusion_width;
        let proj_f = Linear::new(&mut s, "agg.proj_f", d, c);
        let key_f = Linear::new(&mut s, "agg.key_f", d, c);
        let value_f = Linear::new(&mut s, "agg.value_f", d, c);
        let query_m = Linear::new(&mut s, "agg.query_m", d, 2 * c);
        let query_c = Linear::new(&mut s, "agg.query_c", d, 2 * c);
        let map_conv = s.normal("map.conv", &[1, 3 * d, 3, 3], 3 * d * 9, 1.0);
        let map_bn = BatchNorm::new(&mut s, "map.bn", 1);
        let fuse_conv = s.normal("fuse.conv3d", &[w, 6 * d, 3, 3, 3], 6 * d * 27, 2.0);
        let fuse_bias = s.constant("fuse.bias", &[w], 0.0);
        // Small initial embeddings (std 0.02).
        let pos_embed = s.normal("fuse.pos_embed", &[config.clip_len, w], 1, 4e-4);
        let layers = (0..config.transformer_layers)
            .map(|i| {
                let n = format!("temporal.{i}");
                TransformerLayer {
                    ln1: LayerNorm::new(&mut s, &format!("{n}.ln1"), w),
                    q: Linear::new(&mut s, &format!("{n}.q"), w, w),
                    k: Linear::new(&mut s, &format!("{n}.k"), w, w),
                    v: Linear::new(&mut s, &format!("{n}.v"), w, w),
                    o: Linear::new(&mut s, &format!("{n}.o"), w, w),
                    ln2: LayerNorm::new(&mut s, &format!("{n}.ln2"), w),
                    ff1: Linear::new(&mut s, &format!("{n}.ff1"), 2 * w, w),
                    ff2: Linear::new(&mut s, &format!("{n}.ff2"), w, 2 * w),
                }
            })
            .collect();
        let final_ln = LayerNorm::new(&mut s, "temporal.ln", w);
        let head = Linear::new(&mut s, "head", 2, w);
        let net = Self {
            config,
            enc_x,
            enc_m,
            enc_c,
            proj_f,
            key_f,
            value_f,
            query_m,
            query_c,
            map_conv,
            map_bn,
            fuse_conv,
            fuse_bias,
            pos_embed,
            layers,
            final_ln,
            head,
        };
        (net, s)
    }

    /// Spatial side of the encoder output for the configured input size.
    pub fn feature_side(&self) -> usize {
        let mut s = self.config.input_size;
        for b in &self.enc_x.blocks {
            s = (s - 1) / b.stride + 1;
        }
        s
    }

    /// Runs `E` on `[first; second]` stacked along the batch and concatenates
    /// the two halves along channels, first half first.
    fn encode_pair(g: &mut Graph<'_>, enc: &Encoder, first: &Tensor, second: &Tensor) -> Var {
        let n = first.shape[0];
        let mut data = first.data.clone();
        data.extend_from_slice(&second.data);
        let mut shape = first.shape.clone();
        shape[0] = 2 * n;
        let x = g.input(Tensor::from_vec(&shape, data));
        let y = enc.apply(g, x);
        let ys = g.shape(y).to_vec();
        let (c, h, w) = (ys[1], ys[2], ys[3]);
        let y = g.reshape(y, &[2, n, c, h, w]);
        let y = g.permute(y, &[1, 0, 2, 3, 4]);
        g.reshape(y, &[n, 2 * c, h, w])
    }

    /// `(f, m, c)` encoder features of every frame.
    pub fn encode(&self, g: &mut Graph<'_>, batch: &FrameBatch) -> (Var, Var, Var) {
        let x = g.input(batch.frames.clone());
        let f = self.enc_x.apply(g, x);
        let m = Self::encode_pair(g, &self.enc_m, &batch.v_bwd, &batch.v_fwd);
        let c = Self::encode_pair(g, &self.enc_c, &batch.a_fwd, &batch.a_bwd);
        (f, m, c)
    }

    /// Attention of `query [n, d, p]` over positions of the image features.
    ///
    /// Relevance is `Qᵀ K / sqrt(d)` with row `i` holding query position `i`;
    /// the softmax runs along each row (over keys) and the aggregated feature
    /// is `V Sᵀ`, so column `i` is `sum_j V[:, j] S[i, j]`.
    fn attend(g: &mut Graph<'_>, query: Var, key: Var, value: Var, d: usize) -> (Var, Var) {
        let a = g.matmul(query, key, true, false);
        let a = g.affine(a, 1.0 / (d as f32).sqrt(), 0.0);
        let s = g.softmax(a);
        let h = g.matmul(value, s, false, true);
        (h, s)
    }

    /// Cross-kinematics aggregation; returns `F [n, 3d, h, w]` and both
    /// attention matrices.
    pub fn aggregate(&self, g: &mut Graph<'_>, f: Var, m: Var, c: Var) -> (Var, Var, Var) {
        let fs = g.shape(f).to_vec();
        let (n, cf, h, w) = (fs[0], fs[1], fs[2], fs[3]);
        let p = h * w;
        let d = self.config.model_dim;
        let f = g.reshape(f, &[n, cf, p]);
        let m = g.reshape(m, &[n, 2 * cf, p]);
        let c = g.reshape(c, &[n, 2 * cf, p]);
        let fp = self.proj_f.channels(g, f);
        let k = self.key_f.channels(g, f);
        let v = self.value_f.channels(g, f);
        let qm = self.query_m.channels(g, m);
        let qc = self.query_c.channels(g, c);
        let (hm, sm) = Self::attend(g, qm, k, v, d);
        let (hc, sc) = Self::attend(g, qc, k, v, d);
        let agg = g.concat(&[fp, hm, hc], 1);
        (g.reshape(agg, &[n, 3 * d, h, w]), sm, sc)
    }

    /// 3x3 conv, batch norm, sigmoid: `[n, 3d, h, w] -> [n, 1, h, w]`.
    pub fn discriminative_map(&self, g: &mut Graph<'_>, features: Var) -> Var {
        let w = g.param(self.map_conv);
        let y = g.conv2d(features, w, 1, 1);
        let y = self.map_bn.apply(g, y);
        g.sigmoid(y)
    }

    /// `(D ⊗ F, (1 - D) ⊗ F)` with `D` broadcast over channels.
    pub fn mask_features(g: &mut Graph<'_>, features: Var, map: Var) -> (Var, Var) {
        let fm = g.mul_channel(features, map);
        let inv = g.affine(map, -1.0, 1.0);
        let fnm = g.mul_channel(features, inv);
        (fm, fnm)
    }

    fn temporal_layer(&self, g: &mut Graph<'_>, layer: &TransformerLayer, x: Var, b: usize, l: usize) -> Var {
        let w = self.config.fusion_width;
        let heads = self.config.transformer_heads;
        let dh = w / heads;
        let h = g.layer_norm(x, layer.ln1.gamma, layer.ln1.beta);
        let split = |g: &mut Graph<'_>, t: Var| {
            let t = g.reshape(t, &[b, l, heads, dh]);
            let t = g.permute(t, &[0, 2, 1, 3]);
            g.reshape(t, &[b * heads, l, dh])
        };
        let q = layer.q.rows(g, h);
        let q = split(g, q);
        let k = layer.k.rows(g, h);
        let k = split(g, k);
        let v = layer.v.rows(g, h);
        let v = split(g, v);
        let a = g.matmul(q, k, false, true);
        let a = g.affine(a, 1.0 / (dh as f32).sqrt(), 0.0);
        let s = g.softmax(a);
        let o = g.matmul(s, v, false, false);
        let o = g.reshape(o, &[b, heads, l, dh]);
        let o = g.permute(o, &[0, 2, 1, 3]);
        let o = g.reshape(o, &[b * l, w]);
        let o = layer.o.rows(g, o);
        let x = g.add(x, o);
        let h = g.layer_norm(x, layer.ln2.gamma, layer.ln2.beta);
        let h = layer.ff1.rows(g, h);
        let h = g.relu(h);
        let h = layer.ff2.rows(g, h);
        g.add(x, h)
    }

    /// 3-D conv over `concat(F, F_m)`, spatial pooling, temporal
    /// self-attention and the per-frame head; `[b*l, 2]` probabilities.
    pub fn fuse_and_classify(&self, g: &mut Graph<'_>, features: Var, motion: Var, clip_len: usize) -> Var {
        let fs = g.shape(features).to_vec();
        let (n, c, h, w) = (fs[0], fs[1], fs[2], fs[3]);
        assert!(clip_len >= 1 && n % clip_len == 0, "{n} frames do not split into clips of {clip_len}");
        assert!(clip_len <= self.config.clip_len, "clip longer than the positional table");
        let (b, l) = (n / clip_len, clip_len);
        let width = self.config.fusion_width;
        let x = g.concat(&[features, motion], 1);
        let x = g.reshape(x, &[b, l, 2 * c, h, w]);
        let x = g.permute(x, &[0, 2, 1, 3, 4]);
        let k = g.param(self.fuse_conv);
        let x = g.conv3d(x, k, 1);
        let bias = g.param(self.fuse_bias);
        let x = g.add_bias(x, bias, 1);
        let x = g.relu(x);
        let x = g.permute(x, &[0, 2, 1, 3, 4]);
        let x = g.mean_from(x, 3);
        let x = g.reshape(x, &[b, l * width]);
        let pos = g.param(self.pos_embed);
        let rows: Vec<usize> = (0..l).collect();
        let pos = g.select_rows(pos, &rows);
        let pos = g.reshape(pos, &[l * width]);
        let x = g.add_bias(x, pos, 1);
        let mut x = g.reshape(x, &[b * l, width]);
        for layer in &self.layers {
            x = self.temporal_layer(g, layer, x, b, l);
        }
        let x = g.layer_norm(x, self.final_ln.gamma, self.final_ln.beta);
        let logits = self.head.rows(g, x);
        g.softmax(logits)
    }

    pub fn forward(&self, g: &mut Graph<'_>, batch: &FrameBatch) -> Forward {
        let (f, m, c) = self.encode(g, batch);
        let (features, attn_motion, attn_inflection) = self.aggregate(g, f, m, c);
        let maps = self.discriminative_map(g, features);
        let (fm, fnm) = Self::mask_features(g, features, maps);
        let motion_pooled = g.mean_from(fm, 2);
        let non_motion_pooled = g.mean_from(fnm, 2);
        let probs = self.fuse_and_classify(g, features, fm, batch.clip_len);
        Forward {
            probs,
            maps,
            features,
            motion_pooled,
            non_motion_pooled,
            attn_motion,
            attn_inflection,
        }
    }
}

/// Folds batch statistics into the running buffers.
pub fn apply_stat_updates(store: &mut ParamStore, updates: &[crate::graph::StatUpdate], momentum: f32) {
    for u in updates {
        for (r, m) in store.get_mut(u.mean_id).data.iter_mut().zip(&u.mean) {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        for (r, v) in store.get_mut(u.var_id).data.iter_mut().zip(&u.var) {
            *r = (1.0 - momentum) * *r + momentum * v;
        }
    }
}

pub const BN_MOMENTUM: f32 = 0.1;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_matches_hand_computation() {
        // Two positions, d = 2. Queries and keys are the unit vectors, so the
        // scaled relevance is I / sqrt(2).
        let store = ParamStore::new(0);
        let mut g = Graph::new(&store, false);
        let eye = Tensor::from_vec(&[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let q = g.input(eye.clone());
        let k = g.input(eye);
        let v = g.input(Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let (h, s) = Network::attend(&mut g, q, k, v, 2);

        let e = (1.0f64 / 2f64.sqrt()).exp();
        let hi = e / (e + 1.0);
        let lo = 1.0 / (e + 1.0);
        let want_s = [hi, lo, lo, hi];
        for (got, want) in g.value(s).data.iter().zip(want_s) {
            assert!((f64::from(*got) - want).abs() < 1e-6);
        }
        // Column i of h is sum_j V[:, j] S[i, j].
        let want_h = [1.0 * hi + 2.0 * lo, 1.0 * lo + 2.0 * hi, 3.0 * hi + 4.0 * lo, 3.0 * lo + 4.0 * hi];
        for (got, want) in g.value(h).data.iter().zip(want_h) {
            assert!((f64::from(*got) - want).abs() < 1e-5);
        }
    }
}
