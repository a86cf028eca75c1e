//! Exact Euclidean distance transform.
//!
//! Separable lower-envelope algorithm: a 1-D squared-distance transform over
//! every column, then over every row of the intermediate result.

use crate::error::{Error, Result};
use crate::maps::BinaryMask;

/// Exact distances to the nearest foreground pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DistanceMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Euclidean distance from each pixel to the nearest foreground pixel of `mask`.
///
/// Foreground pixels get 0. An all-background mask has no defined distances
/// and is rejected.
pub fn distance_transform(mask: &BinaryMask) -> Result<DistanceMap> {
    if mask.is_empty() {
        return Err(Error::NoConfidentPixels);
    }
    let (w, h) = mask.dims();
    // larger than any squared distance inside the image
    let inf = ((w * w + h * h) as f64 + 1.0) * 4.0;
    let mut sq: Vec<f64> = mask
        .data()
        .iter()
        .map(|&fg| if fg { 0.0 } else { inf })
        .collect();

    let longest = w.max(h);
    let mut scratch = Scratch::new(longest);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];

    for x in 0..w {
        for y in 0..h {
            line[y] = sq[y * w + x];
        }
        lower_envelope(&line[..h], &mut out[..h], &mut scratch);
        for y in 0..h {
            sq[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        line[..w].copy_from_slice(&sq[y * w..(y + 1) * w]);
        lower_envelope(&line[..w], &mut out[..w], &mut scratch);
        sq[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }

    Ok(DistanceMap {
        width: w,
        height: h,
        data: sq.into_iter().map(f64::sqrt).collect(),
    })
}

struct Scratch {
    vertices: Vec<usize>,
    bounds: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            vertices: vec![0; n],
            bounds: vec![0.0; n + 1],
        }
    }
}

/// `out[q] = min_p (q − p)² + f[p]`
fn lower_envelope(f: &[f64], out: &mut [f64], s: &mut Scratch) {
    let n = f.len();
    let v = &mut s.vertices;
    let z = &mut s.bounds;
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let intersect = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64)
    };
    for q in 1..n {
        // z[0] = −∞ stops the walk at the first parabola
        let mut cut = intersect(q, v[k]);
        while cut <= z[k] {
            k -= 1;
            cut = intersect(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = cut;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}
