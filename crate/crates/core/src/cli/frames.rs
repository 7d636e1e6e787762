//! Reading and writing frame directories.

use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, Luma};

use crate::error::{Error, Result};
use crate::matrix::{BinMask, Mat};
use crate::sequence::{FrameSequence, FrameShape};

const EXTENSIONS: [&str; 4] = ["png", "pgm", "pnm", "ppm"];

/// Frames of one directory, in lexicographic filename order.
#[derive(Clone, Debug)]
pub struct FrameStore {
    pub files: Vec<PathBuf>,
    pub frames: Vec<Mat>,
    pub shape: FrameShape,
}

impl FrameStore {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn sequence(&self) -> Result<FrameSequence> {
        FrameSequence::from_frames(&self.frames)
    }
}

pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Config(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Grayscale intensity in [0, 1]. Color is converted with 0.299 R + 0.587 G + 0.114 B.
pub fn to_intensity(img: &DynamicImage) -> Mat {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => Mat::from_fn(h, w, |y, x| g.get_pixel(x as u32, y as u32)[0] as f64 / 255.0),
        DynamicImage::ImageLuma16(g) => Mat::from_fn(h, w, |y, x| g.get_pixel(x as u32, y as u32)[0] as f64 / 65535.0),
        other => {
            let rgb = other.to_rgb32f();
            Mat::from_fn(h, w, |y, x| {
                let p = rgb.get_pixel(x as u32, y as u32);
                0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
            })
        }
    }
}

pub fn read_frame(path: &Path) -> Result<Mat> {
    let img = image::open(path).map_err(|e| Error::Config(format!("cannot decode {}: {e}", path.display())))?;
    Ok(to_intensity(&img))
}

pub fn read_dir(dir: &Path) -> Result<FrameStore> {
    let files = list_frames(dir)?;
    let mut frames = Vec::with_capacity(files.len());
    for f in &files {
        frames.push(read_frame(f)?);
    }
    let shape = match frames.first() {
        Some(f) => FrameShape::new(f.cols(), f.rows()),
        None => FrameShape::new(0, 0),
    };
    for (f, path) in frames.iter().zip(&files) {
        if (f.cols(), f.rows()) != (shape.width, shape.height) {
            return Err(Error::Config(format!(
                "{} is {}x{}, expected {}x{}",
                path.display(),
                f.cols(),
                f.rows(),
                shape.width,
                shape.height
            )));
        }
    }
    Ok(FrameStore { files, frames, shape })
}

pub fn read_mask(path: &Path) -> Result<BinMask> {
    let m = read_frame(path)?;
    Ok(BinMask::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j) > 0.5))
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("cannot write {}: {e}", path.display()))
}

/// Intensities in [0, 1] are clamped and rounded to 8 bits.
pub fn write_intensity(path: &Path, frame: &Mat) -> Result<()> {
    let (h, w) = frame.shape();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([(frame.get(y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    img.save(path).map_err(|e| io_error(path, e))
}

pub fn write_mask(path: &Path, mask: &BinMask) -> Result<()> {
    let (h, w) = mask.shape();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }]));
    img.save(path).map_err(|e| io_error(path, e))
}
