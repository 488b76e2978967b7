//! Video sequences and frame-directory I/O.

use std::path::Path;

use ndarray::{s, Array3, Array4, ArrayView3, Axis};

use crate::error::{Error, Result};

pub const MIN_FRAMES: usize = 3;
pub const MIN_SIDE: usize = 8;

/// An ordered stack of RGB frames, `[T, H, W, 3]`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    id: String,
    frames: Array4<f32>,
    fps: f64,
}

impl VideoSequence {
    pub fn new(id: impl Into<String>, frames: Array4<f32>, fps: f64) -> Result<Self> {
        let id = id.into();
        let (t, h, w, c) = frames.dim();
        if c != 3 {
            return Err(Error::validation(format!("video {id}: expected 3 channels, got {c}")));
        }
        if t < MIN_FRAMES {
            return Err(Error::validation(format!(
                "video {id}: needs at least {MIN_FRAMES} frames, got {t}"
            )));
        }
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::validation(format!(
                "video {id}: frames must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}"
            )));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::validation(format!("video {id}: fps must be positive")));
        }
        if let Some(bad) = frames.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(format!(
                "video {id}: pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self { id, frames, fps })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &Array4<f32> {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len_of(Axis(0))
    }

    pub fn height(&self) -> usize {
        self.frames.len_of(Axis(1))
    }

    pub fn width(&self) -> usize {
        self.frames.len_of(Axis(2))
    }

    pub fn frame(&self, t: usize) -> ArrayView3<'_, f32> {
        self.frames.slice(s![t, .., .., ..])
    }

    /// Luminance of frame `t` (Rec. 601 weights), `[H, W]`.
    pub fn gray(&self, t: usize) -> ndarray::Array2<f32> {
        let f = self.frame(t);
        let (h, w, _) = f.dim();
        ndarray::Array2::from_shape_fn((h, w), |(y, x)| {
            0.299 * f[[y, x, 0]] + 0.587 * f[[y, x, 1]] + 0.114 * f[[y, x, 2]]
        })
    }

    /// Resamples every frame to `size x size` by area averaging.
    pub fn resized(&self, size: usize) -> VideoSequence {
        if self.height() == size && self.width() == size {
            return self.clone();
        }
        let t = self.num_frames();
        let mut out = Array4::<f32>::zeros((t, size, size, 3));
        for i in 0..t {
            let r = crate::resize::area_resize(self.frame(i), size, size);
            out.slice_mut(s![i, .., .., ..]).assign(&r);
        }
        VideoSequence {
            id: self.id.clone(),
            frames: out,
            fps: self.fps,
        }
    }
}

pub fn frame_file_name(t: usize) -> String {
    format!("frame_{t:06}.png")
}

/// Reads `frame_%06d.png` files from `dir` in index order.
pub fn read_frame_dir(dir: &Path, id: &str, fps: f64) -> Result<VideoSequence> {
    let mut frames: Vec<Array3<f32>> = Vec::new();
    loop {
        let path = dir.join(frame_file_name(frames.len()));
        if !path.exists() {
            break;
        }
        let img = image::open(&path)
            .map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        if let Some(first) = frames.first() {
            if first.dim() != (h, w, 3) {
                return Err(Error::validation(format!(
                    "{}: frame size {h}x{w} differs from first frame",
                    path.display()
                )));
            }
        }
        let raw = img.into_raw();
        let arr = Array3::from_shape_vec((h, w, 3), raw.into_iter().map(|b| b as f32 / 255.0).collect())
            .expect("rgb buffer matches its dimensions");
        frames.push(arr);
    }
    if frames.is_empty() {
        return Err(Error::validation(format!(
            "{}: no frame_000000.png found",
            dir.display()
        )));
    }
    let (h, w, _) = frames[0].dim();
    let mut stacked = Array4::<f32>::zeros((frames.len(), h, w, 3));
    for (i, f) in frames.iter().enumerate() {
        stacked.slice_mut(s![i, .., .., ..]).assign(f);
    }
    VideoSequence::new(id, stacked, fps)
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes every frame as an 8-bit PNG into `dir` (created if missing).
pub fn write_frame_dir(video: &VideoSequence, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = (video.height(), video.width());
    for t in 0..video.num_frames() {
        let frame = video.frame(t);
        let buf: Vec<u8> = frame.iter().map(|&v| quantize(v)).collect();
        let img = image::RgbImage::from_raw(w as u32, h as u32, buf)
            .expect("rgb buffer matches its dimensions");
        let path = dir.join(frame_file_name(t));
        img.save_with_format(&path, image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
    }
    Ok(())
}
