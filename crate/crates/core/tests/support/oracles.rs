//! Brute-force reference implementations used to check the optimized code.
//!
//! Nothing here calls into the library's computational paths; each function
//! is the most literal evaluation of its definition.
#![allow(dead_code)]

/// Direct convolution (cross-correlation), `input[n][c][y][x]`, `kernel[o][c][ky][kx]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    input: &[f64],
    dims: [usize; 4],
    kernel: &[f64],
    kdims: [usize; 4],
    bias: &[f64],
    stride: usize,
    dilation: usize,
    padding: usize,
) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, w] = dims;
    let [o, kc, kh, kw] = kdims;
    assert_eq!(c, kc);
    let ho = (h + 2 * padding - dilation * (kh - 1) - 1) / stride + 1;
    let wo = (w + 2 * padding - dilation * (kw - 1) - 1) / stride + 1;
    let mut out = vec![0.0; n * o * ho * wo];
    for b in 0..n {
        for oc in 0..o {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.get(oc).copied().unwrap_or(0.0);
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (oy * stride + ky * dilation) as isize - padding as isize;
                                let x = (ox * stride + kx * dilation) as isize - padding as isize;
                                if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                                    continue;
                                }
                                let iv = input[((b * c + ic) * h + y as usize) * w + x as usize];
                                let kv = kernel[((oc * kc + ic) * kh + ky) * kw + kx];
                                acc += iv * kv;
                            }
                        }
                    }
                    out[((b * o + oc) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (out, [n, o, ho, wo])
}

/// Half-pixel-center bilinear sample of a single plane at output `(oy, ox)`.
pub fn bilinear_at(plane: &[f64], h: usize, w: usize, factor: usize, oy: usize, ox: usize) -> f64 {
    let coord = |o: usize, len: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, s - i0 as f64)
    };
    let (y0, y1, fy) = coord(oy, h);
    let (x0, x1, fx) = coord(ox, w);
    let v = |y: usize, x: usize| plane[y * w + x];
    v(y0, x0) * (1.0 - fy) * (1.0 - fx)
        + v(y0, x1) * (1.0 - fy) * fx
        + v(y1, x0) * fy * (1.0 - fx)
        + v(y1, x1) * fy * fx
}

/// Euclidean distance from every pixel to the nearest `true` pixel, all pairs.
pub fn distance_all_pairs(mask: &[bool], w: usize, h: usize) -> Vec<f64> {
    let fg: Vec<(f64, f64)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| mask[y * w + x])
        .map(|(x, y)| (x as f64, y as f64))
        .collect();
    (0..h)
        .flat_map(|y| (0..w).map(move |x| (x as f64, y as f64)))
        .map(|(x, y)| {
            fg.iter()
                .map(|&(fx, fy)| ((fx - x).powi(2) + (fy - y).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Foreground pixels with at least one 4-neighbour in the background.
pub fn boundary_pixels(mask: &[bool], w: usize, h: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            let nbrs = [
                (x as isize - 1, y as isize),
                (x as isize + 1, y as isize),
                (x as isize, y as isize - 1),
                (x as isize, y as isize + 1),
            ];
            let edge = nbrs.iter().any(|&(nx, ny)| {
                nx >= 0
                    && ny >= 0
                    && (nx as usize) < w
                    && (ny as usize) < h
                    && !mask[ny as usize * w + nx as usize]
            });
            if edge {
                out.push((x, y));
            }
        }
    }
    out
}

/// Boundary F-measure by matching every boundary pixel against all others.
pub fn boundary_f(pred: &[bool], gt: &[bool], w: usize, h: usize, tol: f64) -> f64 {
    let pb = boundary_pixels(pred, w, h);
    let gb = boundary_pixels(gt, w, h);
    if pb.is_empty() && gb.is_empty() {
        return 1.0;
    }
    if pb.is_empty() || gb.is_empty() {
        return 0.0;
    }
    let near = |p: &(usize, usize), set: &[(usize, usize)]| {
        set.iter().any(|q| {
            let dx = p.0 as f64 - q.0 as f64;
            let dy = p.1 as f64 - q.1 as f64;
            (dx * dx + dy * dy).sqrt() <= tol
        })
    };
    let precision = pb.iter().filter(|p| near(p, &gb)).count() as f64 / pb.len() as f64;
    let recall = gb.iter().filter(|g| near(g, &pb)).count() as f64 / gb.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// The 55-entry reference flow colour wheel, built from its segment recipe.
pub fn color_wheel() -> Vec<[f64; 3]> {
    let segments = [15usize, 6, 4, 11, 13, 6];
    let mut wheel = Vec::new();
    for (s, &len) in segments.iter().enumerate() {
        for i in 0..len {
            let ramp = (255 * i / len) as f64;
            let c = match s {
                0 => [255.0, ramp, 0.0],
                1 => [255.0 - ramp, 255.0, 0.0],
                2 => [0.0, 255.0, ramp],
                3 => [0.0, 255.0 - ramp, 255.0],
                4 => [ramp, 0.0, 255.0],
                _ => [255.0, 0.0, 255.0 - ramp],
            };
            wheel.push(c);
        }
    }
    wheel
}

/// Colour of one flow vector, evaluated directly from the wheel table.
pub fn flow_color(u: f64, v: f64, max_mag: f64) -> [u8; 3] {
    let wheel = color_wheel();
    let ncols = wheel.len();
    let rad = ((u * u + v * v).sqrt() / max_mag).min(1.0);
    let a = (-v).atan2(-u) / std::f64::consts::PI;
    let fk = (a + 1.0) / 2.0 * (ncols - 1) as f64;
    let k0 = fk.floor() as usize;
    let k1 = if k0 + 1 == ncols { 0 } else { k0 + 1 };
    let f = fk - k0 as f64;
    let mut out = [0u8; 3];
    for ch in 0..3 {
        let col = ((1.0 - f) * wheel[k0][ch] + f * wheel[k1][ch]) / 255.0;
        let col = 1.0 - rad * (1.0 - col);
        out[ch] = (255.0 * col) as u8;
    }
    out
}
