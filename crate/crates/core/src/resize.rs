//! Area-averaging resampling for images and flow fields.

use ndarray::{Array3, ArrayView3};

/// Per-output-index list of (input index, overlap weight) for a 1-D area resample.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f32)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let mut taps = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < src {
                let a = lo.max(i as f64);
                let b = hi.min((i + 1) as f64);
                if b > a {
                    taps.push((i, ((b - a) / scale) as f32));
                }
                i += 1;
            }
            taps
        })
        .collect()
}

/// Resamples an `[H, W, C]` array to `[out_h, out_w, C]`, each output pixel the
/// area-weighted mean of the input pixels it covers.
pub fn area_resize(src: ArrayView3<'_, f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (h, w, c) = src.dim();
    if h == out_h && w == out_w {
        return src.to_owned();
    }
    let wy = area_weights(h, out_h);
    let wx = area_weights(w, out_w);
    let mut rows = Array3::<f32>::zeros((out_h, w, c));
    for (oy, taps) in wy.iter().enumerate() {
        for &(iy, wt) in taps {
            for x in 0..w {
                for ch in 0..c {
                    rows[[oy, x, ch]] += wt * src[[iy, x, ch]];
                }
            }
        }
    }
    let mut out = Array3::<f32>::zeros((out_h, out_w, c));
    for oy in 0..out_h {
        for (ox, taps) in wx.iter().enumerate() {
            for &(ix, wt) in taps {
                for ch in 0..c {
                    out[[oy, ox, ch]] += wt * rows[[oy, ix, ch]];
                }
            }
        }
    }
    out
}

/// Area-resamples a `[H, W, 2]` displacement field and rescales the vectors
/// into output-pixel units.
pub fn resize_flow(src: ArrayView3<'_, f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (h, w, _) = src.dim();
    let mut out = area_resize(src, out_h, out_w);
    if h == out_h && w == out_w {
        return out;
    }
    let sx = out_w as f32 / w as f32;
    let sy = out_h as f32 / h as f32;
    out.outer_iter_mut().for_each(|mut row| {
        row.outer_iter_mut().for_each(|mut px| {
            px[0] *= sx;
            px[1] *= sy;
        })
    });
    out
}
