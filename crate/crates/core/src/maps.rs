//! Per-pixel maps shared across modules: binary masks, probability maps and
//! their on-disk encodings.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use image::{GrayImage, Luma, RgbImage};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height || data.is_empty() {
            return Err(Error::shape(
                "mask",
                format!("{} values for {width}x{height}", data.len()),
            ));
        }
        Ok(BinaryMask {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        BinaryMask {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        check_dims("mask union", self.dims(), other.dims())?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect();
        BinaryMask::new(self.width, self.height, data)
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(x as usize, y as usize) { 255 } else { 0 }])
        })
    }

    /// Pixels brighter than mid-gray are foreground.
    pub fn from_image(img: &GrayImage) -> Result<Self> {
        BinaryMask::new(
            img.width() as usize,
            img.height() as usize,
            img.pixels().map(|p| p.0[0] > 127).collect(),
        )
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        save_image(&self.to_image(), path)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        BinaryMask::from_image(&load_gray(path)?)
    }
}

/// Foreground probability per pixel, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ProbabilityMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height || data.is_empty() {
            return Err(Error::shape(
                "probability map",
                format!("{} values for {width}x{height}", data.len()),
            ));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!(
                "probability {bad} outside [0, 1]"
            )));
        }
        Ok(ProbabilityMap {
            width,
            height,
            data,
        })
    }

    pub fn full(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Foreground where the probability is strictly above `threshold`.
    pub fn threshold(&self, threshold: f32) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&p| p > threshold).collect(),
        }
    }

    /// Mean probability over the pixels of `region`, `None` if it is empty.
    pub fn mean_over(&self, region: &BinaryMask) -> Option<f64> {
        let mut total = 0.0;
        let mut n = 0usize;
        for (&p, &m) in self.data.iter().zip(region.data()) {
            if m {
                total += p as f64;
                n += 1;
            }
        }
        (n > 0).then(|| total / n as f64)
    }

    /// Grayscale PFM: `Pf`, dimensions, scale `-1.0` (little-endian), rows bottom to top.
    pub fn write_pfm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "Pf\n{} {}\n-1.0\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for row in self.data.chunks(self.width).rev() {
            for v in row {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.write_all(&buf)
    }

    pub fn read_pfm<R: Read>(input: R) -> Result<Self> {
        let mut r = BufReader::new(input);
        let mut header = Vec::new();
        for _ in 0..3 {
            let mut line = String::new();
            r.read_line(&mut line)
                .map_err(|e| Error::format("pfm", e.to_string()))?;
            header.push(line.trim().to_string());
        }
        if header[0] != "Pf" {
            return Err(Error::format("pfm", format!("unsupported magic {:?}", header[0])));
        }
        let dims: Vec<usize> = header[1]
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::format("pfm", "bad dimensions")))
            .collect::<Result<_>>()?;
        let [w, h] = dims[..] else {
            return Err(Error::format("pfm", "bad dimensions"));
        };
        let scale: f32 = header[2]
            .parse()
            .map_err(|_| Error::format("pfm", "bad scale"))?;
        if scale >= 0.0 {
            return Err(Error::format("pfm", "only little-endian PFM is supported"));
        }
        let mut raw = vec![0u8; w * h * 4];
        r.read_exact(&mut raw)
            .map_err(|_| Error::format("pfm", "truncated payload"))?;
        let mut rows: Vec<Vec<f32>> = raw
            .chunks(w * 4)
            .map(|row| {
                row.chunks(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect()
            })
            .collect();
        rows.reverse();
        ProbabilityMap::new(w, h, rows.concat())
    }

    pub fn save_pfm(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_pfm(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load_pfm(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        ProbabilityMap::read_pfm(f)
    }
}

pub(crate) fn check_dims(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::shape(op, format!("{}x{} vs {}x{}", a.0, a.1, b.0, b.1)))
    }
}

pub fn save_image<P, C>(img: &image::ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(open_image(path)?.to_rgb8())
}

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    Ok(open_image(path)?.to_luma8())
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Tint applied to foreground pixels by [`overlay`].
pub const OVERLAY_TINT: [u8; 3] = [255, 0, 0];
pub const OVERLAY_ALPHA: f32 = 0.5;

/// Blend [`OVERLAY_TINT`] over the foreground of `mask`; background pixels are untouched.
pub fn overlay(image: &RgbImage, mask: &BinaryMask) -> Result<RgbImage> {
    check_dims("overlay", (image.width() as usize, image.height() as usize), mask.dims())?;
    let mut out = image.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        if mask.get(x as usize, y as usize) {
            for (c, t) in px.0.iter_mut().zip(OVERLAY_TINT) {
                *c = ((1.0 - OVERLAY_ALPHA) * *c as f32 + OVERLAY_ALPHA * t as f32).round() as u8;
            }
        }
    }
    Ok(out)
}
