//! Probability strips: one row per video with p(sound) against frame index,
//! ground-truth keyframes as green bars and decoded events as red ticks.

use image::{Rgb, RgbImage};

use audible_nn::infer::PredictionReport;

pub const STRIP_HEIGHT: u32 = 80;
pub const MARGIN: u32 = 8;
const TARGET_WIDTH: u32 = 960;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const FRAME: Rgb<u8> = Rgb([170, 170, 170]);
const THRESHOLD: Rgb<u8> = Rgb([210, 210, 210]);
const CURVE: Rgb<u8> = Rgb([30, 80, 200]);
pub const KEYFRAME: Rgb<u8> = Rgb([40, 170, 60]);
pub const EVENT: Rgb<u8> = Rgb([220, 40, 40]);

/// Image size for `num_videos` strips of up to `max_frames` frames, and the
/// horizontal pixels per frame.
pub fn layout(num_videos: usize, max_frames: usize) -> (u32, u32, u32) {
    let per_frame = (TARGET_WIDTH / max_frames.max(1) as u32).clamp(2, 16);
    let width = 2 * MARGIN + per_frame * max_frames.max(1) as u32;
    let height = MARGIN + num_videos.max(1) as u32 * (STRIP_HEIGHT + MARGIN);
    (width, height, per_frame)
}

/// Top pixel row of strip `i`.
pub fn strip_top(i: usize) -> u32 {
    MARGIN + i as u32 * (STRIP_HEIGHT + MARGIN)
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

pub fn render(report: &PredictionReport, threshold: f64) -> RgbImage {
    let max_frames = report.videos.iter().map(|v| v.probs.len()).max().unwrap_or(1);
    let (w, h, per_frame) = layout(report.videos.len(), max_frames);
    let mut img = RgbImage::from_pixel(w, h, WHITE);
    let inner = i64::from(STRIP_HEIGHT - 1);
    for (i, v) in report.videos.iter().enumerate() {
        let top = i64::from(strip_top(i));
        let left = i64::from(MARGIN);
        let right = left + i64::from(per_frame) * v.probs.len().max(1) as i64;
        let x_of = |t: usize| left + i64::from(per_frame) * t as i64 + i64::from(per_frame / 2);
        let y_of = |p: f64| top + inner - (p.clamp(0.0, 1.0) * inner as f64).round() as i64;

        let ty = y_of(threshold);
        let mut x = left;
        while x < right {
            line(&mut img, (x, ty), ((x + 3).min(right), ty), THRESHOLD);
            x += 8;
        }
        for &k in v.keyframes.iter().flatten() {
            line(&mut img, (x_of(k), top), (x_of(k), top + inner), KEYFRAME);
        }
        for pair in v.probs.windows(2).enumerate() {
            let (t, rows) = pair;
            line(&mut img, (x_of(t), y_of(rows[0][1])), (x_of(t + 1), y_of(rows[1][1])), CURVE);
        }
        if let [only] = v.probs.as_slice() {
            line(&mut img, (x_of(0), y_of(only[1])), (x_of(0), y_of(only[1])), CURVE);
        }
        for &e in &v.events {
            let x = x_of(e);
            for d in 0..5 {
                line(&mut img, (x - (4 - d), top + d), (x + (4 - d), top + d), EVENT);
            }
        }
        line(&mut img, (left, top), (right, top), FRAME);
        line(&mut img, (left, top + inner), (right, top + inner), FRAME);
        line(&mut img, (left, top), (left, top + inner), FRAME);
        line(&mut img, (right, top), (right, top + inner), FRAME);
    }
    img
}
