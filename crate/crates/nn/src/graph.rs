//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. [`Graph::backward`]
//! walks the tape in reverse and returns gradients for every node and every
//! parameter that was read.

use audible_core::losses::{objective, LossWeights, ObjectiveInputs, ObjectiveOutput};

use crate::gemm::gemm;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{strides, Tensor};

pub const BN_EPS: f32 = 1e-5;
pub const LN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Add(Var, Var),
    AddBias { x: Var, b: Var, inner: usize },
    Mul(Var, Var),
    MulChannel { x: Var, m: Var },
    Affine { x: Var, scale: f32 },
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Conv2d { x: Var, w: Var, stride: usize, pad: usize },
    Conv3d { x: Var, w: Var, pad: usize },
    Norm(Box<NormState>),
    MeanInner { x: Var, inner: usize },
    SelectRows { x: Var, rows: Vec<usize> },
    Objective { inputs: Vec<Var>, grads: Vec<Vec<f32>> },
}

#[derive(Debug)]
struct NormState {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    /// Batch norm over axis 1 (true) or layer norm over the last axis.
    batch: bool,
    /// Statistics came from the batch (training) rather than running buffers.
    batch_stats: bool,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Batch statistics observed by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct StatUpdate {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

/// Losses reported by an objective node.
#[derive(Debug, Clone)]
pub struct ObjectiveReport {
    pub var: Var,
    pub output: ObjectiveOutput,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    pub training: bool,
    stat_updates: Vec<StatUpdate>,
    param_vars: Vec<Option<Var>>,
}

pub struct Gradients {
    nodes: Vec<Option<Vec<f32>>>,
    pub params: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn node(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].as_deref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params[id].as_ref()
    }
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - k) / stride + 1
}

/// Unfolds `x [N, C, H, W]` into `[C*kh*kw, N*Ho*Wo]`.
fn im2col2d(x: &Tensor, kh: usize, kw: usize, stride: usize, pad: usize) -> (Vec<f32>, usize, usize) {
    let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (ho, wo) = (conv_out(h, kh, stride, pad), conv_out(w, kw, stride, pad));
    let ncol = n * ho * wo;
    let mut cols = vec![0.0f32; c * kh * kw * ncol];
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = &mut cols[((ci * kh + i) * kw + j) * ncol..][..ncol];
                for b in 0..n {
                    let plane = &x.data[(b * c + ci) * h * w..][..h * w];
                    for oy in 0..ho {
                        let y = (oy * stride + i) as isize - pad as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        let src = &plane[y as usize * w..][..w];
                        let dst = &mut row[(b * ho + oy) * wo..][..wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let xx = (ox * stride + j) as isize - pad as isize;
                            if xx >= 0 && xx < w as isize {
                                *d = src[xx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    (cols, ho, wo)
}

#[allow(clippy::too_many_arguments)]
fn col2im2d(cols: &[f32], dx: &mut [f32], shape: &[usize], kh: usize, kw: usize, stride: usize, pad: usize, ho: usize, wo: usize) {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let ncol = n * ho * wo;
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = &cols[((ci * kh + i) * kw + j) * ncol..][..ncol];
                for b in 0..n {
                    let plane = &mut dx[(b * c + ci) * h * w..][..h * w];
                    for oy in 0..ho {
                        let y = (oy * stride + i) as isize - pad as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[y as usize * w..][..w];
                        let src = &row[(b * ho + oy) * wo..][..wo];
                        for (ox, s) in src.iter().enumerate() {
                            let xx = (ox * stride + j) as isize - pad as isize;
                            if xx >= 0 && xx < w as isize {
                                dst[xx as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Unfolds `x [B, C, L, H, W]` for a 3x3x3 kernel with stride 1.
fn im2col3d(x: &Tensor, pad: usize) -> Vec<f32> {
    let (b, c, l, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3], x.shape[4]);
    let ncol = b * l * h * w;
    let p = pad as isize;
    let mut cols = vec![0.0f32; c * 27 * ncol];
    for ci in 0..c {
        for dt in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let row = &mut cols[(((ci * 3 + dt) * 3 + i) * 3 + j) * ncol..][..ncol];
                    for bi in 0..b {
                        let vol = &x.data[(bi * c + ci) * l * h * w..][..l * h * w];
                        for t in 0..l {
                            let st = t as isize + dt as isize - p;
                            if st < 0 || st >= l as isize {
                                continue;
                            }
                            for y in 0..h {
                                let sy = y as isize + i as isize - p;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let src = &vol[(st as usize * h + sy as usize) * w..][..w];
                                let dst = &mut row[((bi * l + t) * h + y) * w..][..w];
                                for (xx, d) in dst.iter_mut().enumerate() {
                                    let sx = xx as isize + j as isize - p;
                                    if sx >= 0 && sx < w as isize {
                                        *d = src[sx as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im3d(cols: &[f32], dx: &mut [f32], shape: &[usize], pad: usize) {
    let (b, c, l, h, w) = (shape[0], shape[1], shape[2], shape[3], shape[4]);
    let ncol = b * l * h * w;
    let p = pad as isize;
    for ci in 0..c {
        for dt in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let row = &cols[(((ci * 3 + dt) * 3 + i) * 3 + j) * ncol..][..ncol];
                    for bi in 0..b {
                        let vol = &mut dx[(bi * c + ci) * l * h * w..][..l * h * w];
                        for t in 0..l {
                            let st = t as isize + dt as isize - p;
                            if st < 0 || st >= l as isize {
                                continue;
                            }
                            for y in 0..h {
                                let sy = y as isize + i as isize - p;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let dst = &mut vol[(st as usize * h + sy as usize) * w..][..w];
                                let src = &row[((bi * l + t) * h + y) * w..][..w];
                                for (xx, s) in src.iter().enumerate() {
                                    let sx = xx as isize + j as isize - p;
                                    if sx >= 0 && sx < w as isize {
                                        dst[sx as usize] += s;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Reorders `[Cout, N*P]` (gemm layout) to `[N, Cout, P]` and back.
fn channels_to_batch(tmp: &[f32], cout: usize, n: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0; tmp.len()];
    for co in 0..cout {
        for b in 0..n {
            out[(b * cout + co) * p..][..p].copy_from_slice(&tmp[co * n * p + b * p..][..p]);
        }
    }
    out
}

fn batch_to_channels(g: &[f32], cout: usize, n: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0; g.len()];
    for co in 0..cout {
        for b in 0..n {
            out[co * n * p + b * p..][..p].copy_from_slice(&g[(b * cout + co) * p..][..p]);
        }
    }
    out
}

struct MatDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a_step: usize,
    b_step: usize,
}

fn matmul_dims(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> MatDims {
    assert!((2..=3).contains(&a.rank()) && (2..=3).contains(&b.rank()), "matmul needs rank 2 or 3");
    let ab = if a.rank() == 3 { a.shape[0] } else { 1 };
    let bb = if b.rank() == 3 { b.shape[0] } else { 1 };
    assert!(ab == bb || a.rank() == 2 || b.rank() == 2, "matmul batch mismatch {:?} {:?}", a.shape, b.shape);
    let batch = ab.max(bb);
    let (ar, ac) = (a.shape[a.rank() - 2], a.shape[a.rank() - 1]);
    let (br, bc) = (b.shape[b.rank() - 2], b.shape[b.rank() - 1]);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (kb, n) = if tb { (bc, br) } else { (br, bc) };
    assert_eq!(k, kb, "matmul inner dims {:?} {:?} ta={ta} tb={tb}", a.shape, b.shape);
    MatDims {
        batch,
        m,
        k,
        n,
        a_step: if a.rank() == 3 { ar * ac } else { 0 },
        b_step: if b.rank() == 3 { br * bc } else { 0 },
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore, training: bool) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            training,
            stat_updates: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Input => false,
            Op::Param(_) => true,
            _ => parents.iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate> {
        std::mem::take(&mut self.stat_updates)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, &[])
    }

    /// The parameter's node; repeated reads share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        let v = self.push(self.params.get(id).clone(), Op::Param(id), &[]);
        self.param_vars[id] = Some(v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape, y.shape, "add shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let t = Tensor::from_vec(&x.shape, data);
        self.push(t, Op::Add(a, b), &[a, b])
    }

    /// Adds `b[c]` along `axis` of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var, axis: usize) -> Var {
        let xv = self.value(x);
        let c = self.value(b).len();
        assert_eq!(xv.shape[axis], c, "bias length");
        let inner: usize = xv.shape[axis + 1..].iter().product();
        let bias = &self.value(b).data;
        let mut data = xv.data.clone();
        for (i, v) in data.iter_mut().enumerate() {
            *v += bias[(i / inner) % c];
        }
        let t = Tensor::from_vec(&xv.shape, data);
        self.push(t, Op::AddBias { x, b, inner }, &[x, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape, y.shape, "mul shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let t = Tensor::from_vec(&x.shape, data);
        self.push(t, Op::Mul(a, b), &[a, b])
    }

    /// `x [N, C, ...] * m [N, 1, ...]`, broadcasting `m` across channels.
    pub fn mul_channel(&mut self, x: Var, m: Var) -> Var {
        let (xv, mv) = (self.value(x), self.value(m));
        let (n, c) = (xv.shape[0], xv.shape[1]);
        let p = xv.len() / (n * c);
        assert!(mv.shape[0] == n && mv.shape[1] == 1 && mv.len() == n * p, "mask shape");
        let mut data = xv.data.clone();
        for b in 0..n {
            let mask = &mv.data[b * p..][..p];
            for ci in 0..c {
                for (v, w) in data[(b * c + ci) * p..][..p].iter_mut().zip(mask) {
                    *v *= w;
                }
            }
        }
        let t = Tensor::from_vec(&xv.shape, data);
        self.push(t, Op::MulChannel { x, m }, &[x, m])
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f32, shift: f32) -> Var {
        let xv = self.value(x);
        let t = Tensor::from_vec(&xv.shape, xv.data.iter().map(|v| scale * v + shift).collect());
        self.push(t, Op::Affine { x, scale }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let t = Tensor::from_vec(&xv.shape, xv.data.iter().map(|v| v.max(0.0)).collect());
        self.push(t, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let t = Tensor::from_vec(&xv.shape, xv.data.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect());
        self.push(t, Op::Sigmoid(x), &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = *xv.shape.last().expect("softmax on scalar");
        let mut data = xv.data.clone();
        for row in data.chunks_mut(n) {
            let mx = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let t = Tensor::from_vec(&xv.shape, data);
        self.push(t, Op::Softmax(x), &[x])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        let first = self.value(parts[0]).shape.clone();
        let outer: usize = first[..axis].iter().product();
        let mut shape = first.clone();
        shape[axis] = 0;
        for &p in parts {
            let s = &self.value(p).shape;
            assert!(s.len() == first.len() && s[..axis] == first[..axis] && s[axis + 1..] == first[axis + 1..], "concat shapes");
            shape[axis] += s[axis];
        }
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let chunk = v.len() / outer;
                data.extend_from_slice(&v.data[o * chunk..][..chunk]);
            }
        }
        let t = Tensor::from_vec(&shape, data);
        self.push(t, Op::Concat { parts: parts.to_vec(), axis }, parts)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshaped(shape);
        self.push(t, Op::Reshape(x), &[x])
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Var {
        let xv = self.value(x);
        let t = permute_tensor(xv, perm);
        self.push(t, Op::Permute { x, perm: perm.to_vec() }, &[x])
    }

    /// Batched `op(a) * op(b)`; a rank-2 operand is shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let d = matmul_dims(av, bv, ta, tb);
        let mut out = vec![0.0; d.batch * d.m * d.n];
        for i in 0..d.batch {
            gemm(
                d.m,
                d.k,
                d.n,
                &av.data[i * d.a_step..],
                ta,
                &bv.data[i * d.b_step..],
                tb,
                &mut out[i * d.m * d.n..],
                0.0,
            );
        }
        let shape = if av.rank() == 3 || bv.rank() == 3 {
            vec![d.batch, d.m, d.n]
        } else {
            vec![d.m, d.n]
        };
        let t = Tensor::from_vec(&shape, out);
        self.push(t, Op::MatMul { a, b, ta, tb }, &[a, b])
    }

    /// 2-D convolution without bias; `w` is `[Cout, Cin, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(xv.rank(), 4, "conv2d input rank");
        assert_eq!(xv.shape[1], wv.shape[1], "conv2d channels");
        let (cout, kh, kw) = (wv.shape[0], wv.shape[2], wv.shape[3]);
        let n = xv.shape[0];
        let (cols, ho, wo) = im2col2d(xv, kh, kw, stride, pad);
        let r = wv.len() / cout;
        let ncol = n * ho * wo;
        let mut tmp = vec![0.0; cout * ncol];
        gemm(cout, r, ncol, &wv.data, false, &cols, false, &mut tmp, 0.0);
        let t = Tensor::from_vec(&[n, cout, ho, wo], channels_to_batch(&tmp, cout, n, ho * wo));
        self.push(t, Op::Conv2d { x, w, stride, pad }, &[x, w])
    }

    /// 3x3x3 convolution with stride 1 over `[B, C, L, H, W]`.
    pub fn conv3d(&mut self, x: Var, w: Var, pad: usize) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(xv.rank(), 5, "conv3d input rank");
        assert_eq!(&wv.shape[1..], &[xv.shape[1], 3, 3, 3], "conv3d kernel");
        assert_eq!(pad, 1, "conv3d supports same padding only");
        let cout = wv.shape[0];
        let (b, l, h, wd) = (xv.shape[0], xv.shape[2], xv.shape[3], xv.shape[4]);
        let cols = im2col3d(xv, pad);
        let r = wv.len() / cout;
        let p = l * h * wd;
        let mut tmp = vec![0.0; cout * b * p];
        gemm(cout, r, b * p, &wv.data, false, &cols, false, &mut tmp, 0.0);
        let t = Tensor::from_vec(&[b, cout, l, h, wd], channels_to_batch(&tmp, cout, b, p));
        self.push(t, Op::Conv3d { x, w, pad }, &[x, w])
    }

    /// Batch normalization over axis 1 of `[N, C, ...]`. In training mode
    /// batch statistics are used and reported through
    /// [`Graph::take_stat_updates`]; otherwise the running buffers are used.
    pub fn batch_norm(&mut self, x: Var, gamma: ParamId, beta: ParamId, mean_id: ParamId, var_id: ParamId) -> Var {
        let xv = self.value(x);
        let (n, c) = (xv.shape[0], xv.shape[1]);
        let inner = xv.len() / (n * c);
        let count = (n * inner) as f32;
        let (mean, var) = if self.training {
            let mut mean = vec![0.0f32; c];
            let mut var = vec![0.0f32; c];
            for b in 0..n {
                for ci in 0..c {
                    mean[ci] += xv.data[(b * c + ci) * inner..][..inner].iter().sum::<f32>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for b in 0..n {
                for ci in 0..c {
                    var[ci] += xv.data[(b * c + ci) * inner..][..inner]
                        .iter()
                        .map(|v| (v - mean[ci]).powi(2))
                        .sum::<f32>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count);
            (mean, var)
        } else {
            (self.params.get(mean_id).data.clone(), self.params.get(var_id).data.clone())
        };
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = xv.data.clone();
        for b in 0..n {
            for ci in 0..c {
                for v in xhat[(b * c + ci) * inner..][..inner].iter_mut() {
                    *v = (*v - mean[ci]) * inv_std[ci];
                }
            }
        }
        let shape = xv.shape.clone();
        if self.training {
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            self.stat_updates.push(StatUpdate {
                mean_id,
                var_id,
                mean,
                var: var.iter().map(|v| v * unbias).collect(),
            });
        }
        let (g, bt) = (self.param(gamma), self.param(beta));
        let (gv, bv) = (&self.value(g).data, &self.value(bt).data);
        let mut out = xhat.clone();
        for b in 0..n {
            for ci in 0..c {
                for v in out[(b * c + ci) * inner..][..inner].iter_mut() {
                    *v = gv[ci] * *v + bv[ci];
                }
            }
        }
        let t = Tensor::from_vec(&shape, out);
        let state = NormState {
            x,
            gamma: g,
            beta: bt,
            xhat,
            inv_std,
            batch: true,
            batch_stats: self.training,
        };
        self.push(t, Op::Norm(Box::new(state)), &[x, g, bt])
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: ParamId, beta: ParamId) -> Var {
        let (g, bt) = (self.param(gamma), self.param(beta));
        let xv = self.value(x);
        let d = *xv.shape.last().expect("layer norm on scalar");
        let rows = xv.len() / d;
        let mut xhat = xv.data.clone();
        let mut inv_std = vec![0.0f32; rows];
        for (r, row) in xhat.chunks_mut(d).enumerate() {
            let mean = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / d as f32;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
        }
        let (gv, bv) = (&self.value(g).data, &self.value(bt).data);
        let mut out = xhat.clone();
        for row in out.chunks_mut(d) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = gv[j] * *v + bv[j];
            }
        }
        let t = Tensor::from_vec(&self.value(x).shape, out);
        let state = NormState {
            x,
            gamma: g,
            beta: bt,
            xhat,
            inv_std,
            batch: false,
            batch_stats: true,
        };
        self.push(t, Op::Norm(Box::new(state)), &[x, g, bt])
    }

    /// Mean over all axes from `from_axis` on.
    pub fn mean_from(&mut self, x: Var, from_axis: usize) -> Var {
        let xv = self.value(x);
        let inner: usize = xv.shape[from_axis..].iter().product();
        let data = xv.data.chunks(inner).map(|c| c.iter().sum::<f32>() / inner as f32).collect();
        let t = Tensor::from_vec(&xv.shape[..from_axis], data);
        self.push(t, Op::MeanInner { x, inner }, &[x])
    }

    /// Rows of `x` along axis 0.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let xv = self.value(x);
        let row = xv.len() / xv.shape[0];
        let mut data = Vec::with_capacity(rows.len() * row);
        for &r in rows {
            data.extend_from_slice(&xv.data[r * row..][..row]);
        }
        let mut shape = xv.shape.clone();
        shape[0] = rows.len();
        let t = Tensor::from_vec(&shape, data);
        self.push(t, Op::SelectRows { x, rows: rows.to_vec() }, &[x])
    }

    /// The full training objective as a scalar node.
    ///
    /// `probs` is `[k, 2]`, `motion`/`non_motion` are `[k, c]` pooled features,
    /// `maps` is `[k, ...]` and `clip_lens` splits the `k` rows into clips for
    /// the temporal term.
    #[allow(clippy::too_many_arguments)]
    pub fn objective(
        &mut self,
        probs: Var,
        targets: &[f64],
        motion: Var,
        non_motion: Var,
        maps: Var,
        clip_lens: &[usize],
        weights: &LossWeights,
    ) -> audible_core::Result<ObjectiveReport> {
        let to_rows = |t: &Tensor| -> Vec<Vec<f64>> {
            let k = t.shape[0];
            let c = t.len() / k;
            t.data.chunks(c).map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect()
        };
        let pv = self.value(probs);
        let prob_rows: Vec<[f64; 2]> = pv.data.chunks(2).map(|r| [f64::from(r[0]), f64::from(r[1])]).collect();
        let fm = to_rows(self.value(motion));
        let fnm = to_rows(self.value(non_motion));
        let map_rows = to_rows(self.value(maps));
        assert_eq!(clip_lens.iter().sum::<usize>(), map_rows.len(), "clip lengths");
        let mut grouped = Vec::with_capacity(clip_lens.len());
        let mut at = 0;
        for &len in clip_lens {
            grouped.push(map_rows[at..at + len].to_vec());
            at += len;
        }
        let out = objective(
            &ObjectiveInputs {
                probs: &prob_rows,
                soft_targets: targets,
                motion: &fm,
                non_motion: &fnm,
                maps: &grouped,
            },
            weights,
        )?;
        let flat = |g: &[Vec<f64>]| -> Vec<f32> { g.iter().flatten().map(|&v| v as f32).collect() };
        let grads = vec![
            out.grad_probs.iter().flatten().map(|&v| v as f32).collect(),
            flat(&out.grad_motion),
            flat(&out.grad_non_motion),
            out.grad_maps.iter().flat_map(|c| flat(c)).collect(),
        ];
        let inputs = vec![probs, motion, non_motion, maps];
        let t = Tensor::from_vec(&[1], vec![out.total as f32]);
        let var = self.push(t, Op::Objective { inputs: inputs.clone(), grads }, &inputs);
        Ok(ObjectiveReport { var, output: out })
    }

    /// Gradients of the scalar `loss` with respect to every node and parameter.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        let mut params: Vec<Option<Tensor>> = vec![None; self.params.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.backprop(node, &g, &mut grads, &mut params);
            }
            grads[i] = Some(g);
        }
        Gradients { nodes: grads, params }
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f32>>], v: Var) -> Option<&'g mut Vec<f32>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backprop(&self, node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>], params: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Input => {}
            Op::Param(id) => {
                let slot = params[*id].get_or_insert_with(|| Tensor::zeros(&y.shape));
                for (s, v) in slot.data.iter_mut().zip(g) {
                    *s += v;
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.acc(grads, v) {
                        d.iter_mut().zip(g).for_each(|(s, x)| *s += x);
                    }
                }
            }
            Op::AddBias { x, b, inner } => {
                if let Some(d) = self.acc(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(s, v)| *s += v);
                }
                let c = self.value(*b).len();
                if let Some(d) = self.acc(grads, *b) {
                    for (i, v) in g.iter().enumerate() {
                        d[(i / inner) % c] += v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                if let Some(d) = self.acc(grads, *a) {
                    for ((s, gi), o) in d.iter_mut().zip(g).zip(bv) {
                        *s += gi * o;
                    }
                }
                if let Some(d) = self.acc(grads, *b) {
                    for ((s, gi), o) in d.iter_mut().zip(g).zip(av) {
                        *s += gi * o;
                    }
                }
            }
            Op::MulChannel { x, m } => {
                let (xv, mv) = (self.value(*x), self.value(*m));
                let (n, c) = (xv.shape[0], xv.shape[1]);
                let p = xv.len() / (n * c);
                if let Some(d) = self.acc(grads, *x) {
                    for b in 0..n {
                        for ci in 0..c {
                            let off = (b * c + ci) * p;
                            for j in 0..p {
                                d[off + j] += g[off + j] * mv.data[b * p + j];
                            }
                        }
                    }
                }
                if let Some(d) = self.acc(grads, *m) {
                    for b in 0..n {
                        for ci in 0..c {
                            let off = (b * c + ci) * p;
                            for j in 0..p {
                                d[b * p + j] += g[off + j] * xv.data[off + j];
                            }
                        }
                    }
                }
            }
            Op::Affine { x, scale } => {
                if let Some(d) = self.acc(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(s, v)| *s += scale * v);
                }
            }
            Op::Relu(x) => {
                if let Some(d) = self.acc(grads, *x) {
                    for ((s, gi), yi) in d.iter_mut().zip(g).zip(&y.data) {
                        if *yi > 0.0 {
                            *s += gi;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(d) = self.acc(grads, *x) {
                    for ((s, gi), yi) in d.iter_mut().zip(g).zip(&y.data) {
                        *s += gi * yi * (1.0 - yi);
                    }
                }
            }
            Op::Softmax(x) => {
                let n = *y.shape.last().unwrap();
                if let Some(d) = self.acc(grads, *x) {
                    for ((ds, gs), ys) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.data.chunks(n)) {
                        let dot: f32 = gs.iter().zip(ys).map(|(a, b)| a * b).sum();
                        for ((s, gi), yi) in ds.iter_mut().zip(gs).zip(ys) {
                            *s += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let outer: usize = y.shape[..*axis].iter().product();
                let chunks: Vec<usize> = parts.iter().map(|p| self.value(*p).len() / outer).collect();
                let row: usize = chunks.iter().sum();
                let mut offset = 0;
                for (p, &chunk) in parts.iter().zip(&chunks) {
                    if let Some(d) = self.acc(grads, *p) {
                        for o in 0..outer {
                            let src = &g[o * row + offset..][..chunk];
                            for (s, v) in d[o * chunk..][..chunk].iter_mut().zip(src) {
                                *s += v;
                            }
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Reshape(x) => {
                if let Some(d) = self.acc(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(s, v)| *s += v);
                }
            }
            Op::Permute { x, perm } => {
                if let Some(d) = self.acc(grads, *x) {
                    let mut inverse = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inverse[p] = i;
                    }
                    let back = permute_tensor(&Tensor::from_vec(&y.shape, g.to_vec()), &inverse);
                    d.iter_mut().zip(&back.data).for_each(|(s, v)| *s += v);
                }
            }
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let dm = matmul_dims(av, bv, *ta, *tb);
                let (m, k, n) = (dm.m, dm.k, dm.n);
                if let Some(d) = self.acc(grads, *a) {
                    for i in 0..dm.batch {
                        let gi = &g[i * m * n..];
                        let bi = &bv.data[i * dm.b_step..];
                        let out = &mut d[i * dm.a_step..];
                        if *ta {
                            gemm(k, n, m, bi, *tb, gi, true, out, 1.0);
                        } else {
                            gemm(m, n, k, gi, false, bi, !*tb, out, 1.0);
                        }
                    }
                }
                if let Some(d) = self.acc(grads, *b) {
                    for i in 0..dm.batch {
                        let gi = &g[i * m * n..];
                        let ai = &av.data[i * dm.a_step..];
                        let out = &mut d[i * dm.b_step..];
                        if *tb {
                            gemm(n, m, k, gi, true, ai, *ta, out, 1.0);
                        } else {
                            gemm(k, m, n, ai, !*ta, gi, false, out, 1.0);
                        }
                    }
                }
            }
            Op::Conv2d { x, w, stride, pad } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (cout, kh, kw) = (wv.shape[0], wv.shape[2], wv.shape[3]);
                let (n, ho, wo) = (y.shape[0], y.shape[2], y.shape[3]);
                let ncol = n * ho * wo;
                let r = wv.len() / cout;
                let dtmp = batch_to_channels(g, cout, n, ho * wo);
                let need_w = self.nodes[w.0].needs_grad;
                if need_w {
                    let (cols, _, _) = im2col2d(xv, kh, kw, *stride, *pad);
                    let d = self.acc(grads, *w).unwrap();
                    gemm(cout, ncol, r, &dtmp, false, &cols, true, d, 1.0);
                }
                if let Some(d) = self.acc(grads, *x) {
                    let mut dcols = vec![0.0; r * ncol];
                    gemm(r, cout, ncol, &wv.data, true, &dtmp, false, &mut dcols, 0.0);
                    col2im2d(&dcols, d, &xv.shape, kh, kw, *stride, *pad, ho, wo);
                }
            }
            Op::Conv3d { x, w, pad } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let cout = wv.shape[0];
                let b = y.shape[0];
                let p = y.len() / (b * cout);
                let r = wv.len() / cout;
                let dtmp = batch_to_channels(g, cout, b, p);
                if self.nodes[w.0].needs_grad {
                    let cols = im2col3d(xv, *pad);
                    let d = self.acc(grads, *w).unwrap();
                    gemm(cout, b * p, r, &dtmp, false, &cols, true, d, 1.0);
                }
                if let Some(d) = self.acc(grads, *x) {
                    let mut dcols = vec![0.0; r * b * p];
                    gemm(r, cout, b * p, &wv.data, true, &dtmp, false, &mut dcols, 0.0);
                    col2im3d(&dcols, d, &xv.shape, *pad);
                }
            }
            Op::Norm(state) => self.backprop_norm(state, y, g, grads),
            Op::MeanInner { x, inner } => {
                if let Some(d) = self.acc(grads, *x) {
                    for (o, gi) in g.iter().enumerate() {
                        let v = gi / *inner as f32;
                        d[o * inner..][..*inner].iter_mut().for_each(|s| *s += v);
                    }
                }
            }
            Op::SelectRows { x, rows } => {
                let row = y.len() / rows.len().max(1);
                if let Some(d) = self.acc(grads, *x) {
                    for (i, &r) in rows.iter().enumerate() {
                        for (s, v) in d[r * row..][..row].iter_mut().zip(&g[i * row..][..row]) {
                            *s += v;
                        }
                    }
                }
            }
            Op::Objective { inputs, grads: local } => {
                let up = g[0];
                for (v, lg) in inputs.iter().zip(local) {
                    if let Some(d) = self.acc(grads, *v) {
                        d.iter_mut().zip(lg).for_each(|(s, x)| *s += up * x);
                    }
                }
            }
        }
    }

    fn backprop_norm(&self, st: &NormState, y: &Tensor, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let gamma = &self.value(st.gamma).data;
        let c = gamma.len();
        // Map each element to its channel and its normalization group.
        let (groups, group_of, chan_of): (usize, Box<dyn Fn(usize) -> usize>, Box<dyn Fn(usize) -> usize>) = if st.batch {
            let n = y.shape[0];
            let inner = y.len() / (n * c);
            (c, Box::new(move |i| (i / inner) % c), Box::new(move |i| (i / inner) % c))
        } else {
            (y.len() / c, Box::new(move |i| i / c), Box::new(move |i| i % c))
        };
        if let Some(d) = self.acc(grads, st.gamma) {
            for (i, gi) in g.iter().enumerate() {
                d[chan_of(i)] += gi * st.xhat[i];
            }
        }
        if let Some(d) = self.acc(grads, st.beta) {
            for (i, gi) in g.iter().enumerate() {
                d[chan_of(i)] += gi;
            }
        }
        if let Some(d) = self.acc(grads, st.x) {
            if !st.batch_stats {
                for (i, gi) in g.iter().enumerate() {
                    let ch = chan_of(i);
                    d[i] += gi * gamma[ch] * st.inv_std[ch];
                }
                return;
            }
            let mut sum = vec![0.0f32; groups];
            let mut sum_x = vec![0.0f32; groups];
            let mut count = vec![0.0f32; groups];
            for (i, gi) in g.iter().enumerate() {
                let (grp, ch) = (group_of(i), chan_of(i));
                let dxh = gi * gamma[ch];
                sum[grp] += dxh;
                sum_x[grp] += dxh * st.xhat[i];
                count[grp] += 1.0;
            }
            for (i, gi) in g.iter().enumerate() {
                let (grp, ch) = (group_of(i), chan_of(i));
                let dxh = gi * gamma[ch];
                let m = count[grp];
                d[i] += st.inv_std[grp] / m * (m * dxh - sum[grp] - st.xhat[i] * sum_x[grp]);
            }
        }
    }
}

fn permute_tensor(x: &Tensor, perm: &[usize]) -> Tensor {
    assert_eq!(perm.len(), x.rank(), "permutation rank");
    let shape: Vec<usize> = perm.iter().map(|&p| x.shape[p]).collect();
    let in_strides = strides(&x.shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut data = Vec::with_capacity(x.len());
    let rank = shape.len();
    if x.is_empty() {
        return Tensor::from_vec(&shape, data);
    }
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    let last = rank - 1;
    loop {
        // Inner loop along the last output axis.
        for i in 0..shape[last] {
            data.push(x.data[offset + i * src_strides[last]]);
        }
        let mut ax = last;
        loop {
            if ax == 0 {
                return Tensor::from_vec(&shape, data);
            }
            ax -= 1;
            idx[ax] += 1;
            offset += src_strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            offset -= idx[ax] * src_strides[ax];
            idx[ax] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_index_formula() {
        let x = Tensor::from_vec(&[2, 3, 4], (0..24).map(|v| v as f32).collect());
        let y = permute_tensor(&x, &[2, 0, 1]);
        assert_eq!(y.shape, vec![4, 2, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(y.data[(c * 2 + a) * 3 + b], x.data[(a * 3 + b) * 4 + c]);
                }
            }
        }
    }

    #[test]
    fn conv2d_matches_direct_sum() {
        let store = ParamStore::new(0);
        let mut g = Graph::new(&store, true);
        let xs: Vec<f32> = (0..2 * 2 * 5 * 5).map(|i| ((i * 7 % 11) as f32 - 5.0) / 5.0).collect();
        let ws: Vec<f32> = (0..3 * 2 * 3 * 3).map(|i| ((i * 5 % 13) as f32 - 6.0) / 6.0).collect();
        let x = g.input(Tensor::from_vec(&[2, 2, 5, 5], xs.clone()));
        let w = g.input(Tensor::from_vec(&[3, 2, 3, 3], ws.clone()));
        let y = g.conv2d(x, w, 2, 1);
        assert_eq!(g.shape(y), &[2, 3, 3, 3]);
        let yv = g.value(y);
        for n in 0..2 {
            for co in 0..3 {
                for oy in 0..3 {
                    for ox in 0..3 {
                        let mut s = 0.0;
                        for ci in 0..2 {
                            for i in 0..3 {
                                for j in 0..3 {
                                    let (yy, xx) = ((oy * 2 + i) as isize - 1, (ox * 2 + j) as isize - 1);
                                    if (0..5).contains(&yy) && (0..5).contains(&xx) {
                                        s += xs[((n * 2 + ci) * 5 + yy as usize) * 5 + xx as usize]
                                            * ws[((co * 2 + ci) * 3 + i) * 3 + j];
                                    }
                                }
                            }
                        }
                        assert!((yv.data[((n * 3 + co) * 3 + oy) * 3 + ox] - s).abs() < 1e-5);
                    }
                }
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let store = ParamStore::new(0);
        let mut g = Graph::new(&store, true);
        let x = g.input(Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -50.0, 0.0, 50.0]));
        let y = g.softmax(x);
        for row in g.value(y).data.chunks(3) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|v| *v >= 0.0));
        }
    }
}
