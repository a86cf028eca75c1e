//! Optical flow fields: `.flo` interchange files and colour-wheel rendering.

use std::io::{Read, Write};
use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

/// `.flo` header tag, the float whose little-endian bytes read "PIEH".
pub const FLO_MAGIC: f32 = 202021.25;

/// Per-pixel displacement `(u, v)` in pixels per frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    data: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, data: Vec<[f32; 2]>) -> Result<Self> {
        if data.len() != width * height || data.is_empty() {
            return Err(Error::shape("flow", format!("{} vectors for {width}x{height}", data.len())));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "flow field".into() });
        }
        Ok(FlowField {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            data: vec![[0.0, 0.0]; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[[f32; 2]] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 2] {
        self.data[y * self.width + x]
    }

    pub fn max_magnitude(&self) -> f32 {
        self.data
            .iter()
            .map(|[u, v]| (u * u + v * v).sqrt())
            .fold(0.0, f32::max)
    }

    pub fn write_flo<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(12 + self.data.len() * 8);
        buf.extend_from_slice(&FLO_MAGIC.to_le_bytes());
        buf.extend_from_slice(&(self.width as i32).to_le_bytes());
        buf.extend_from_slice(&(self.height as i32).to_le_bytes());
        for [u, v] in &self.data {
            buf.extend_from_slice(&u.to_le_bytes());
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)
    }

    pub fn read_flo<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| Error::format("flo", e.to_string()))?;
        Self::from_flo_bytes(&bytes)
    }

    pub fn from_flo_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::format("flo", "truncated header"));
        }
        let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
        let magic = f32::from_le_bytes(word(0));
        if magic != FLO_MAGIC {
            return Err(Error::format("flo", format!("bad magic {magic}")));
        }
        let width = i32::from_le_bytes(word(4));
        let height = i32::from_le_bytes(word(8));
        if width <= 0 || height <= 0 {
            return Err(Error::format("flo", format!("bad dimensions {width}x{height}")));
        }
        let (w, h) = (width as usize, height as usize);
        let payload = &bytes[12..];
        if payload.len() != w * h * 8 {
            return Err(Error::format(
                "flo",
                format!("payload has {} bytes, expected {}", payload.len(), w * h * 8),
            ));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| {
                [
                    f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                    f32::from_le_bytes([c[4], c[5], c[6], c[7]]),
                ]
            })
            .collect();
        FlowField::new(w, h, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_flo(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_flo_bytes(&bytes).map_err(|e| match e {
            Error::Format { detail, .. } => Error::format(path.display().to_string(), detail),
            other => other,
        })
    }
}

// Hue segments of the reference wheel: red-yellow, yellow-green, green-cyan,
// cyan-blue, blue-magenta, magenta-red.
const SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];

/// The 55-colour flow wheel.
pub fn color_wheel() -> Vec<[u8; 3]> {
    let mut wheel = Vec::with_capacity(55);
    for (s, &len) in SEGMENTS.iter().enumerate() {
        for i in 0..len {
            let up = (255 * i / len) as u8;
            let down = 255 - up;
            wheel.push(match s {
                0 => [255, up, 0],
                1 => [down, 255, 0],
                2 => [0, 255, up],
                3 => [0, down, 255],
                4 => [up, 0, 255],
                _ => [255, 0, down],
            });
        }
    }
    wheel
}

/// Fractional index into the colour wheel for direction `(u, v)`, in `[0, 54]`.
pub fn wheel_position(u: f64, v: f64) -> f64 {
    let angle = (-v).atan2(-u) / std::f64::consts::PI;
    (angle + 1.0) / 2.0 * (SEGMENTS.iter().sum::<usize>() - 1) as f64
}

/// Render flow as colour: direction picks the hue, magnitude relative to
/// `max_magnitude` the saturation. Zero flow is white.
///
/// Without an explicit `max_magnitude` the field's own maximum is used
/// (floored at 1e-6), so each frame is normalized independently.
pub fn flow_to_rgb(flow: &FlowField, max_magnitude: Option<f32>) -> Result<RgbImage> {
    let max = match max_magnitude {
        Some(m) if !(m > 0.0) || !m.is_finite() => {
            return Err(Error::Config(format!("max magnitude must be positive, got {m}")))
        }
        Some(m) => m as f64,
        None => (flow.max_magnitude() as f64).max(1e-6),
    };
    let wheel = color_wheel();
    let ncols = wheel.len();
    let mut img = RgbImage::new(flow.width as u32, flow.height as u32);
    for (i, &[u, v]) in flow.data.iter().enumerate() {
        let (u, v) = (u as f64, v as f64);
        let rad = ((u * u + v * v).sqrt() / max).min(1.0);
        let fk = wheel_position(u, v);
        let k0 = (fk.floor() as usize).min(ncols - 1);
        let k1 = (k0 + 1) % ncols;
        let f = fk - k0 as f64;
        let mut px = [0u8; 3];
        for (ch, out) in px.iter_mut().enumerate() {
            let a = wheel[k0][ch] as f64 / 255.0;
            let b = wheel[k1][ch] as f64 / 255.0;
            let col = 1.0 - rad * (1.0 - ((1.0 - f) * a + f * b));
            *out = (255.0 * col) as u8;
        }
        img.put_pixel((i % flow.width) as u32, (i / flow.width) as u32, Rgb(px));
    }
    Ok(img)
}
