//! Training objectives with closed-form gradients.
//!
//! Every loss here is a plain function of `f64` inputs and returns its value
//! together with the gradient with respect to each input, so the network side
//! only has to route these gradients back through its own graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm floor inside cosine similarity.
pub const EPS_NORM: f64 = 1e-8;
/// Guard inside the contrastive log terms.
pub const EPS_LOG: f64 = 1e-6;
/// Probability floor inside the classification log terms.
pub const EPS_PROB: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub action: f64,
    pub cont: f64,
    pub temp: f64,
    pub ce: f64,
    pub focal: f64,
    /// Rank-weight smoothness in the positive contrast.
    pub alpha: f64,
    /// Focal-loss focusing parameter.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            action: 1.0,
            cont: 0.01,
            temp: 0.002,
            ce: 1.0,
            focal: 0.1,
            alpha: 1.0,
            gamma: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.action, self.cont, self.temp, self.ce, self.focal, self.alpha, self.gamma];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::validation("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Motion,
    NonMotion,
}

/// `k` pooled feature vectors of one region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatureSet {
    pub vectors: Vec<Vec<f64>>,
    pub region: Region,
}

impl RegionFeatureSet {
    pub fn new(vectors: Vec<Vec<f64>>, region: Region) -> Result<Self> {
        let Some(first) = vectors.first() else {
            return Err(Error::contract("feature set needs at least one vector"));
        };
        let dim = first.len();
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::contract("feature vectors differ in length"));
        }
        Ok(Self { vectors, region })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.vectors.iter().map(|v| vec![0.0; v.len()]).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity with norms floored at [`EPS_NORM`].
pub fn cosine(u: &[f64], w: &[f64]) -> f64 {
    dot(u, w) / (norm(u).max(EPS_NORM) * norm(w).max(EPS_NORM))
}

/// Cosine similarity and its gradients with respect to `u` and `w`.
pub fn cosine_with_grad(u: &[f64], w: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (nu_raw, nw_raw) = (norm(u), norm(w));
    let (nu, nw) = (nu_raw.max(EPS_NORM), nw_raw.max(EPS_NORM));
    let s = dot(u, w) / (nu * nw);
    // A clamped norm is constant, so its radial term drops out.
    let ru = if nu_raw > EPS_NORM { s / (nu * nu) } else { 0.0 };
    let rw = if nw_raw > EPS_NORM { s / (nw * nw) } else { 0.0 };
    let gu = u.iter().zip(w).map(|(ui, wi)| wi / (nu * nw) - ru * ui).collect();
    let gw = w.iter().zip(u).map(|(wi, ui)| ui / (nu * nw) - rw * wi).collect();
    (s, gu, gw)
}

fn add_scaled(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// Motion/non-motion negative contrast and its gradients.
///
/// Similarities below zero are floored at zero: pairs that already point
/// apart contribute `-log(1 + EPS_LOG)` and no gradient.
pub fn negative_contrast_with_grad(fm: &RegionFeatureSet, fnm: &RegionFeatureSet) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if fm.len() != fnm.len() || fm.is_empty() {
        return Err(Error::contract("negative contrast needs two non-empty sets of equal size"));
    }
    let k = fm.len() as f64;
    let scale = 1.0 / (k * k);
    let mut loss = 0.0;
    let mut gm = fm.zeros_like();
    let mut gn = fnm.zeros_like();
    for (p, u) in fm.vectors.iter().enumerate() {
        for (q, w) in fnm.vectors.iter().enumerate() {
            let (s, du, dw) = cosine_with_grad(u, w);
            let sc = s.max(0.0);
            loss -= scale * (1.0 - sc + EPS_LOG).ln();
            if s > 0.0 {
                let dl_ds = scale / (1.0 - sc + EPS_LOG);
                add_scaled(&mut gm[p], &du, dl_ds);
                add_scaled(&mut gn[q], &dw, dl_ds);
            }
        }
    }
    Ok((loss, gm, gn))
}

pub fn negative_contrast(fm: &RegionFeatureSet, fnm: &RegionFeatureSet) -> Result<f64> {
    negative_contrast_with_grad(fm, fnm).map(|r| r.0)
}

/// Rank weights `exp(-alpha * rank)` for every ordered off-diagonal pair, where
/// rank is the 0-based position in the descending sort of the similarities
/// (ties keep row-major pair order).
pub fn rank_weights(sims: &[(usize, usize, f64)], alpha: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| sims[b].2.total_cmp(&sims[a].2).then(a.cmp(&b)));
    let mut w = vec![0.0; sims.len()];
    for (rank, &idx) in order.iter().enumerate() {
        w[idx] = (-alpha * rank as f64).exp();
    }
    w
}

/// Rank-weighted positive contrast within one region and its gradient.
/// Rank weights are piecewise constant and carry no gradient.
pub fn positive_contrast_with_grad(f: &RegionFeatureSet, alpha: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let k = f.len();
    if k < 2 {
        return Err(Error::contract("positive contrast needs at least two vectors"));
    }
    let mut sims = Vec::with_capacity(k * (k - 1));
    let mut grads = Vec::with_capacity(k * (k - 1));
    for p in 0..k {
        for q in 0..k {
            if p != q {
                let (s, du, dw) = cosine_with_grad(&f.vectors[p], &f.vectors[q]);
                sims.push((p, q, s));
                grads.push((du, dw));
            }
        }
    }
    let weights = rank_weights(&sims, alpha);
    let scale = 1.0 / (k * (k - 1)) as f64;
    let mut loss = 0.0;
    let mut g = f.zeros_like();
    for ((&(p, q, s), (du, dw)), w) in sims.iter().zip(&grads).zip(&weights) {
        let sc = s.clamp(EPS_LOG, 1.0);
        loss -= scale * w * sc.ln();
        if s > EPS_LOG && s < 1.0 {
            let dl_ds = -scale * w / s;
            add_scaled(&mut g[p], du, dl_ds);
            add_scaled(&mut g[q], dw, dl_ds);
        }
    }
    Ok((loss, g))
}

pub fn positive_contrast(f: &RegionFeatureSet, alpha: f64) -> Result<f64> {
    positive_contrast_with_grad(f, alpha).map(|r| r.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveParts {
    pub negative: f64,
    pub positive_motion: f64,
    pub positive_non_motion: f64,
}

impl ContrastiveParts {
    pub fn total(&self) -> f64 {
        self.negative + self.positive_motion + self.positive_non_motion
    }
}

/// Sum of the negative contrast and both positive contrasts, with gradients.
pub fn contrastive_total_with_grad(
    fm: &RegionFeatureSet,
    fnm: &RegionFeatureSet,
    alpha: f64,
) -> Result<(ContrastiveParts, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let (nc, mut gm, mut gn) = negative_contrast_with_grad(fm, fnm)?;
    let (pcm, gpm) = positive_contrast_with_grad(fm, alpha)?;
    let (pcn, gpn) = positive_contrast_with_grad(fnm, alpha)?;
    for (d, s) in gm.iter_mut().zip(&gpm) {
        add_scaled(d, s, 1.0);
    }
    for (d, s) in gn.iter_mut().zip(&gpn) {
        add_scaled(d, s, 1.0);
    }
    let parts = ContrastiveParts {
        negative: nc,
        positive_motion: pcm,
        positive_non_motion: pcn,
    };
    Ok((parts, gm, gn))
}

pub fn contrastive_total(fm: &RegionFeatureSet, fnm: &RegionFeatureSet, alpha: f64) -> Result<f64> {
    contrastive_total_with_grad(fm, fnm, alpha).map(|r| r.0.total())
}

/// Sum over consecutive triples of the Frobenius norm of the second
/// difference `D[i+2] + D[i] - 2 D[i+1]`, with gradient (zero where the
/// difference vanishes).
pub fn temporal_smoothness_with_grad(maps: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    if maps.len() < 3 {
        return Err(Error::contract("temporal smoothness needs at least three maps"));
    }
    let n = maps[0].len();
    if maps.iter().any(|m| m.len() != n) {
        return Err(Error::contract("maps differ in size"));
    }
    let mut loss = 0.0;
    let mut g: Vec<Vec<f64>> = maps.iter().map(|m| vec![0.0; m.len()]).collect();
    for i in 0..maps.len() - 2 {
        let diff: Vec<f64> = (0..n)
            .map(|j| maps[i + 2][j] + maps[i][j] - 2.0 * maps[i + 1][j])
            .collect();
        let mag = norm(&diff);
        loss += mag;
        if mag > 0.0 {
            for j in 0..n {
                let u = diff[j] / mag;
                g[i][j] += u;
                g[i + 1][j] -= 2.0 * u;
                g[i + 2][j] += u;
            }
        }
    }
    Ok((loss, g))
}

pub fn temporal_smoothness(maps: &[Vec<f64>]) -> Result<f64> {
    temporal_smoothness_with_grad(maps).map(|r| r.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionLoss {
    pub ce: f64,
    pub focal: f64,
    pub total: f64,
    /// Gradient of `total` with respect to each `[p_no_sound, p_sound]` row.
    pub grad: Vec<[f64; 2]>,
}

/// Weighted sum of soft-target cross-entropy and hard-target focal loss,
/// both averaged over frames. Targets at or above 0.5 count as positives for
/// the focal term.
pub fn action_loss(probs: &[[f64; 2]], soft_targets: &[f64], weights: &LossWeights) -> Result<ActionLoss> {
    if probs.len() != soft_targets.len() || probs.is_empty() {
        return Err(Error::contract("action loss needs one target per probability row"));
    }
    let k = probs.len() as f64;
    let gamma = weights.gamma;
    let (mut ce, mut focal) = (0.0, 0.0);
    let mut grad = vec![[0.0; 2]; probs.len()];
    for ((row, &g), out) in probs.iter().zip(soft_targets).zip(grad.iter_mut()) {
        let p = [row[0].max(EPS_PROB), row[1].max(EPS_PROB)];
        let live = [row[0] > EPS_PROB, row[1] > EPS_PROB];
        let tgt = [1.0 - g, g];
        for c in 0..2 {
            if tgt[c] != 0.0 {
                ce -= tgt[c] * p[c].ln() / k;
                if live[c] {
                    out[c] -= weights.ce * tgt[c] / p[c] / k;
                }
            }
        }
        let cls = usize::from(g >= 0.5);
        let pt = p[cls];
        let m = (1.0 - pt).max(0.0);
        focal -= m.powf(gamma) * pt.ln() / k;
        if live[cls] {
            let dm = if gamma == 0.0 { 0.0 } else { gamma * m.powf(gamma - 1.0) };
            let d = dm * pt.ln() - m.powf(gamma) / pt;
            out[cls] += weights.focal * d / k;
        }
    }
    Ok(ActionLoss {
        ce,
        focal,
        total: weights.ce * ce + weights.focal * focal,
        grad,
    })
}

pub fn total_loss(action: f64, cont: f64, temp: f64, weights: &LossWeights) -> f64 {
    weights.action * action + weights.cont * cont + weights.temp * temp
}

/// All inputs of the full objective for one batch of frames.
#[derive(Debug, Clone)]
pub struct ObjectiveInputs<'a> {
    pub probs: &'a [[f64; 2]],
    pub soft_targets: &'a [f64],
    /// Pooled motion-region features, one per frame.
    pub motion: &'a [Vec<f64>],
    /// Pooled non-motion-region features, one per frame.
    pub non_motion: &'a [Vec<f64>],
    /// Flattened discriminative maps, grouped by clip in frame order.
    pub maps: &'a [Vec<Vec<f64>>],
}

#[derive(Debug, Clone)]
pub struct ObjectiveOutput {
    pub total: f64,
    pub action: ActionLoss,
    pub contrastive: ContrastiveParts,
    pub temporal: f64,
    pub grad_probs: Vec<[f64; 2]>,
    pub grad_motion: Vec<Vec<f64>>,
    pub grad_non_motion: Vec<Vec<f64>>,
    pub grad_maps: Vec<Vec<Vec<f64>>>,
}

/// Evaluates the weighted total objective and its gradients. Terms with a
/// zero weight are still evaluated for reporting but contribute exactly zero
/// gradient.
pub fn objective(inputs: &ObjectiveInputs<'_>, weights: &LossWeights) -> Result<ObjectiveOutput> {
    let action = action_loss(inputs.probs, inputs.soft_targets, weights)?;
    let fm = RegionFeatureSet::new(inputs.motion.to_vec(), Region::Motion)?;
    let fnm = RegionFeatureSet::new(inputs.non_motion.to_vec(), Region::NonMotion)?;
    let (contrastive, gm, gn) = contrastive_total_with_grad(&fm, &fnm, weights.alpha)?;
    let mut temporal = 0.0;
    let mut grad_maps = Vec::with_capacity(inputs.maps.len());
    for clip in inputs.maps {
        let (l, g) = temporal_smoothness_with_grad(clip)?;
        temporal += l;
        grad_maps.push(g);
    }
    let total = total_loss(action.total, contrastive.total(), temporal, weights);

    let scale_all = |g: Vec<Vec<f64>>, s: f64| -> Vec<Vec<f64>> {
        g.into_iter()
            .map(|v| v.into_iter().map(|x| if s == 0.0 { 0.0 } else { s * x }).collect())
            .collect()
    };
    let grad_probs = action
        .grad
        .iter()
        .map(|r| {
            if weights.action == 0.0 {
                [0.0, 0.0]
            } else {
                [weights.action * r[0], weights.action * r[1]]
            }
        })
        .collect();
    let grad_motion = scale_all(gm, weights.cont);
    let grad_non_motion = scale_all(gn, weights.cont);
    let grad_maps = grad_maps.into_iter().map(|clip| scale_all(clip, weights.temp)).collect();
    Ok(ObjectiveOutput {
        total,
        action,
        contrastive,
        temporal,
        grad_probs,
        grad_motion,
        grad_non_motion,
        grad_maps,
    })
}
