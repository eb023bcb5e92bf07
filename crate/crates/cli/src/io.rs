//! Image files, frame directories and overlay masks.
//!
//! Images are `(H, W, C)` tensors with values in `[0, 1]`; frame stacks are
//! `(F, H, W, C)`. A video sequence tensor (VST) stacks the frames
//! vertically into `(F*H, W, C)`, frame `f` occupying rows `f*H..(f+1)*H`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, GrayImage, RgbImage};
use ttc_core::{DenseTensor, ObservationMask};

use crate::error::{invalid, io_err, CliError, Result};

const FRAME_EXTENSIONS: [&str; 3] = ["png", "ppm", "pnm"];

/// Reads an 8-bit PNG or PPM as an `(H, W, 3)` tensor scaled to `[0, 1]`.
/// Grayscale and alpha inputs are converted to RGB.
pub fn load_image(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| CliError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    match img.color() {
        ColorType::Rgb8 | ColorType::Rgba8 | ColorType::L8 | ColorType::La8 => {}
        other => {
            return Err(invalid(format!(
                "{}: expected an 8-bit image, found {other:?}",
                path.display()
            )))
        }
    }
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0; h * w * 3];
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[y as usize + h * (x as usize + w * c)] = f64::from(px[c]) / 255.0;
        }
    }
    Ok(DenseTensor::new(vec![h, w, 3], data)?)
}

/// Writes an `(H, W, 3)` or `(H, W, 1)` tensor as 8-bit PNG or PPM/PGM,
/// chosen by extension. Values are clamped to `[0, 1]` and rounded.
pub fn save_image(t: &DenseTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let &[h, w, c] = t.shape() else {
        return Err(invalid(format!("expected an (H, W, C) tensor, got {:?}", t.shape())));
    };
    let quant = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let d = t.data();
    let at = |y: u32, x: u32, ch: usize| quant(d[y as usize + h * (x as usize + w * ch)]);
    let res = match c {
        3 => RgbImage::from_fn(w as u32, h as u32, |x, y| image::Rgb([at(y, x, 0), at(y, x, 1), at(y, x, 2)]))
            .save(path),
        1 => GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([at(y, x, 0)])).save(path),
        _ => return Err(invalid(format!("cannot save a {c}-channel image"))),
    };
    res.map_err(|source| CliError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Frame files in `dir` with a known image extension, sorted by name.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| FRAME_EXTENSIONS.contains(&e.as_str())) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(invalid(format!("{}: no frame images found", dir.display())));
    }
    Ok(files)
}

/// Loads a directory of equally sized frames as `(F, H, W, 3)`, or as the
/// VST `(F*H, W, 3)` when `merge_rows` is set.
pub fn load_video_frames(dir: impl AsRef<Path>, merge_rows: bool) -> Result<DenseTensor> {
    let frames: Vec<(PathBuf, DenseTensor)> = list_frames(dir)?
        .into_iter()
        .map(|p| load_image(&p).map(|t| (p, t)))
        .collect::<Result<_>>()?;
    let first = frames[0].1.shape().to_vec();
    let offenders: Vec<String> = frames
        .iter()
        .filter(|(_, t)| t.shape() != first.as_slice())
        .map(|(p, t)| format!("{} is {}x{}", p.display(), t.shape()[0], t.shape()[1]))
        .collect();
    if !offenders.is_empty() {
        return Err(invalid(format!(
            "frames must all be {}x{}: {}",
            first[0],
            first[1],
            offenders.join(", ")
        )));
    }
    let stack = stack_frames(&frames.into_iter().map(|(_, t)| t).collect::<Vec<_>>())?;
    if merge_rows {
        merge_frames(&stack)
    } else {
        Ok(stack)
    }
}

/// Stacks `(H, W, C)` frames into `(F, H, W, C)`.
pub fn stack_frames(frames: &[DenseTensor]) -> Result<DenseTensor> {
    let Some(first) = frames.first() else {
        return Err(invalid("no frames to stack"));
    };
    let n = frames.len();
    let len = first.len();
    let mut data = vec![0.0; n * len];
    for (f, t) in frames.iter().enumerate() {
        if t.shape() != first.shape() {
            return Err(invalid("frames differ in shape"));
        }
        for (off, &v) in t.data().iter().enumerate() {
            data[f + n * off] = v;
        }
    }
    let mut shape = vec![n];
    shape.extend_from_slice(first.shape());
    Ok(DenseTensor::new(shape, data)?)
}

/// Frame `f` of an `(F, H, W, C)` stack.
pub fn frame(stack: &DenseTensor, f: usize) -> Result<DenseTensor> {
    let &[n, h, w, c] = stack.shape() else {
        return Err(invalid(format!("expected (F, H, W, C), got {:?}", stack.shape())));
    };
    if f >= n {
        return Err(invalid(format!("frame {f} out of range for {n} frames")));
    }
    let data = (0..h * w * c).map(|off| stack.data()[f + n * off]).collect();
    Ok(DenseTensor::new(vec![h, w, c], data)?)
}

/// `(F, H, W, C)` to the VST `(F*H, W, C)`.
pub fn merge_frames(stack: &DenseTensor) -> Result<DenseTensor> {
    let &[n, h, w, c] = stack.shape() else {
        return Err(invalid(format!("expected (F, H, W, C), got {:?}", stack.shape())));
    };
    let src = stack.data();
    let mut data = vec![0.0; src.len()];
    for rest in 0..w * c {
        for y in 0..h {
            for f in 0..n {
                data[(f * h + y) + n * h * rest] = src[f + n * (y + h * rest)];
            }
        }
    }
    Ok(DenseTensor::new(vec![n * h, w, c], data)?)
}

/// Inverse of [`merge_frames`].
pub fn split_vst(vst: &DenseTensor, frames: usize) -> Result<DenseTensor> {
    let &[rows, w, c] = vst.shape() else {
        return Err(invalid(format!("expected (F*H, W, C), got {:?}", vst.shape())));
    };
    if frames == 0 || rows % frames != 0 {
        return Err(invalid(format!("{rows} rows do not split into {frames} frames")));
    }
    let h = rows / frames;
    let src = vst.data();
    let mut data = vec![0.0; src.len()];
    for rest in 0..w * c {
        for y in 0..h {
            for f in 0..frames {
                data[f + frames * (y + h * rest)] = src[(f * h + y) + rows * rest];
            }
        }
    }
    Ok(DenseTensor::new(vec![frames, h, w, c], data)?)
}

/// Writes each frame of an `(F, H, W, 3)` stack as `frame_0000.png`, ...
pub fn save_video_frames(stack: &DenseTensor, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let n = stack.shape().first().copied().unwrap_or(0);
    (0..n)
        .map(|f| {
            let path = dir.join(format!("frame_{f:04}.png"));
            save_image(&frame(stack, f)?, &path)?;
            Ok(path)
        })
        .collect()
}

/// Observation mask of `image` that drops every channel of the pixels that
/// are pure white in `overlay`.
pub fn mask_from_overlay(image: &DenseTensor, overlay: &DenseTensor) -> Result<ObservationMask> {
    let &[h, w, c] = image.shape() else {
        return Err(invalid(format!("expected an (H, W, C) image, got {:?}", image.shape())));
    };
    let &[oh, ow, oc] = overlay.shape() else {
        return Err(invalid(format!("expected an (H, W, C) overlay, got {:?}", overlay.shape())));
    };
    if (oh, ow) != (h, w) {
        return Err(invalid(format!("overlay is {oh}x{ow}, image is {h}x{w}")));
    }
    let od = overlay.data();
    let white: Vec<bool> = (0..h * w)
        .map(|p| (0..oc).all(|ch| od[p + h * w * ch] >= 1.0))
        .collect();
    let indices: Vec<usize> = (0..h * w * c).filter(|&off| !white[off % (h * w)]).collect();
    if indices.is_empty() {
        return Err(invalid("overlay marks every pixel missing"));
    }
    Ok(ObservationMask::observe(image, indices)?)
}
