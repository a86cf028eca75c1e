//! Scene description and rasterization.
//!
//! Each pixel is sampled once at its center. Sprites are drawn in list order
//! over the background, the human-proxy bar over everything.

use std::f64::consts::PI;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowio::FlowField;
use crate::maps::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SpriteShape {
    Disk,
    Rectangle,
    Polygon { sides: u32 },
}

const RECT_HALF: (f64, f64) = (0.85, 0.55);

impl SpriteShape {
    /// Whether a point in sprite-local units (outer radius 1) is covered.
    fn contains(self, x: f64, y: f64) -> bool {
        match self {
            SpriteShape::Disk => x * x + y * y <= 1.0,
            SpriteShape::Rectangle => x.abs() <= RECT_HALF.0 && y.abs() <= RECT_HALF.1,
            SpriteShape::Polygon { sides } => {
                let n = sides as f64;
                let sector = 2.0 * PI / n;
                let phi = y.atan2(x).rem_euclid(sector) - sector / 2.0;
                (x * x + y * y).sqrt() * phi.cos() <= (PI / n).cos()
            }
        }
    }

    /// Largest distance from the center to a covered point, in local units.
    fn bound(self) -> f64 {
        match self {
            SpriteShape::Rectangle => RECT_HALF.0.hypot(RECT_HALF.1),
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Pattern {
    Stripes { angle_deg: f64 },
    Checker,
    Rings,
}

/// Two-colour pattern fixed to the sprite, so it moves, scales and turns with it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub pattern: Pattern,
    pub primary: [u8; 3],
    pub secondary: [u8; 3],
    /// Pattern period in sprite-local units.
    pub period: f64,
}

impl Texture {
    /// Saturated colour of hue `hue_deg` over a dark shade of the same hue.
    pub fn from_hue(pattern: Pattern, hue_deg: f64, period: f64) -> Self {
        Texture {
            pattern,
            primary: hsv(hue_deg, 0.85, 0.95),
            secondary: hsv(hue_deg, 0.6, 0.35),
            period,
        }
    }

    pub fn random(rng: &mut impl Rng, hue_deg: f64) -> Self {
        let pattern = match rng.random_range(0..3) {
            0 => Pattern::Stripes {
                angle_deg: rng.random_range(0.0..180.0),
            },
            1 => Pattern::Checker,
            _ => Pattern::Rings,
        };
        Texture::from_hue(pattern, hue_deg, rng.random_range(0.35..0.6))
    }

    fn sample(&self, x: f64, y: f64) -> [u8; 3] {
        let phase = match self.pattern {
            Pattern::Stripes { angle_deg } => {
                let a = angle_deg.to_radians();
                ((x * a.cos() + y * a.sin()) / self.period).floor() as i64
            }
            Pattern::Checker => (x / self.period).floor() as i64 + (y / self.period).floor() as i64,
            Pattern::Rings => (x.hypot(y) / self.period).floor() as i64,
        };
        if phase.rem_euclid(2) == 0 {
            self.primary
        } else {
            self.secondary
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Trajectory {
    Static,
    /// Pixels per frame.
    Translation { dx: f64, dy: f64 },
    /// Scale multiplier per frame about the sprite center.
    Scale { factor: f64 },
    /// Degrees per frame about the sprite center, counterclockwise on screen.
    Rotation { deg: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpriteSpec {
    pub shape: SpriteShape,
    pub texture: Texture,
    /// Outer radius in pixels at frame 0.
    pub size: f64,
    /// Center in pixels at frame 0.
    pub center: [f64; 2],
    pub angle_deg: f64,
    pub trajectory: Trajectory,
    /// Whether the sprite belongs to the ground-truth foreground.
    pub foreground: bool,
}

#[derive(Debug, Clone, Copy)]
struct Pose {
    cx: f64,
    cy: f64,
    scale: f64,
    angle: f64,
}

impl SpriteSpec {
    fn pose(&self, t: usize) -> Pose {
        let t = t as f64;
        let [cx, cy] = self.center;
        let mut p = Pose {
            cx,
            cy,
            scale: self.size,
            angle: self.angle_deg.to_radians(),
        };
        match self.trajectory {
            Trajectory::Static => {}
            Trajectory::Translation { dx, dy } => {
                p.cx += dx * t;
                p.cy += dy * t;
            }
            Trajectory::Scale { factor } => p.scale *= factor.powf(t),
            Trajectory::Rotation { deg } => p.angle += deg.to_radians() * t,
        }
        p
    }

    /// Sprite-local coordinates of screen point `(x, y)` at frame `t`.
    fn local(&self, t: usize, x: f64, y: f64) -> (f64, f64) {
        let p = self.pose(t);
        // screen y points down, so a counterclockwise turn on screen is −angle in these axes
        let (s, c) = (-p.angle).sin_cos();
        let (dx, dy) = ((x - p.cx) / p.scale, (y - p.cy) / p.scale);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    fn covers(&self, t: usize, x: f64, y: f64) -> bool {
        let (lx, ly) = self.local(t, x, y);
        self.shape.contains(lx, ly)
    }

    /// Displacement to frame `t + 1` of the sprite point under `(x, y)` at frame `t`.
    fn flow(&self, t: usize, x: f64, y: f64) -> [f64; 2] {
        let p = self.pose(t);
        match self.trajectory {
            Trajectory::Static => [0.0, 0.0],
            Trajectory::Translation { dx, dy } => [dx, dy],
            Trajectory::Scale { factor } => [(factor - 1.0) * (x - p.cx), (factor - 1.0) * (y - p.cy)],
            Trajectory::Rotation { deg } => {
                let (s, c) = (-deg.to_radians()).sin_cos();
                let (rx, ry) = (x - p.cx, y - p.cy);
                [c * rx - s * ry - rx, s * rx + c * ry - ry]
            }
        }
    }

    /// Checks the sprite keeps at least one pixel of margin in every frame.
    pub fn check_fits(&self, width: usize, height: usize, length: usize) -> Result<()> {
        for t in 0..length {
            let p = self.pose(t);
            let r = p.scale * self.shape.bound();
            if p.cx - r < 1.0 || p.cy - r < 1.0 || p.cx + r > width as f64 - 1.0 || p.cy + r > height as f64 - 1.0 {
                return Err(Error::Config(format!(
                    "sprite at ({:.1}, {:.1}) radius {r:.1} leaves the {width}x{height} frame at t = {t}",
                    p.cx, p.cy
                )));
            }
        }
        Ok(())
    }
}

/// A vertical occluder rising from the bottom edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanBar {
    pub x: f64,
    pub width: f64,
    /// Top edge at frame 0; may start below the frame.
    pub top: f64,
    /// Upward speed in pixels per frame.
    pub speed: f64,
}

const HUMAN_COLOR: [u8; 3] = [214, 160, 128];

impl HumanBar {
    fn covers(&self, t: usize, x: f64, y: f64) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.top - self.speed * t as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    /// Noise lattice spacing in pixels.
    pub cell: usize,
    /// Number of flat static shapes scattered over the noise.
    pub clutter: usize,
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        BackgroundSpec { cell: 16, clutter: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub background: BackgroundSpec,
    pub sprites: Vec<SpriteSpec>,
    #[serde(default)]
    pub human: Option<HumanBar>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Layer {
    Background,
    Sprite(usize),
    Human,
}

impl SceneSpec {
    pub fn validate(&self, length: usize) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("scene needs a non-empty frame".into()));
        }
        if length < 2 {
            return Err(Error::Config(format!("sequences need at least 2 frames, got {length}")));
        }
        if self.background.cell == 0 {
            return Err(Error::Config("background cell must be >= 1".into()));
        }
        for (i, s) in self.sprites.iter().enumerate() {
            if !(s.size > 0.0) {
                return Err(Error::Config(format!("sprite {i} needs a positive size")));
            }
            if let SpriteShape::Polygon { sides } = s.shape {
                if sides < 3 {
                    return Err(Error::Config(format!("sprite {i}: polygons need >= 3 sides")));
                }
            }
            if let Trajectory::Scale { factor } = s.trajectory {
                if !(factor > 0.0) {
                    return Err(Error::Config(format!("sprite {i}: scale factor must be positive")));
                }
            }
            s.check_fits(self.width, self.height, length).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("sprite {i}: {m}")),
                other => other,
            })?;
        }
        Ok(())
    }

    pub(crate) fn layer_at(&self, t: usize, x: usize, y: usize) -> Layer {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        if self.human.is_some_and(|h| h.covers(t, px, py)) {
            return Layer::Human;
        }
        self.sprites
            .iter()
            .enumerate()
            .rev()
            .find(|(_, s)| s.covers(t, px, py))
            .map_or(Layer::Background, |(i, _)| Layer::Sprite(i))
    }

    pub(crate) fn layers(&self, t: usize) -> Vec<Layer> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .map(|(x, y)| self.layer_at(t, x, y))
            .collect()
    }

    /// Visible pixels of sprite `index` at frame `t`.
    pub fn sprite_mask(&self, index: usize, t: usize) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |x, y| self.layer_at(t, x, y) == Layer::Sprite(index))
    }
}

/// Precomputed static background: value noise plus flat clutter.
pub(crate) struct Backdrop {
    pixels: Vec<[u8; 3]>,
}

impl Backdrop {
    pub(crate) fn new(scene: &SceneSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h, cell) = (scene.width, scene.height, scene.background.cell);
        let gw = w / cell + 2;
        let gh = h / cell + 2;
        let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random()).collect();
        let hue = rng.random_range(0.0..360.0);
        let lo = hsv(hue, 0.15, 0.3);
        let hi = hsv(hue + rng.random_range(-40.0..40.0), 0.2, 0.75);
        let smooth = |f: f64| f * f * (3.0 - 2.0 * f);
        let mut pixels: Vec<[u8; 3]> = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
                let (gx, gy) = (x / cell as f64, y / cell as f64);
                let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
                let (fx, fy) = (smooth(gx.fract()), smooth(gy.fract()));
                let v = |a: usize, b: usize| lattice[(iy + b) * gw + ix + a];
                let n = (v(0, 0) * (1.0 - fx) + v(1, 0) * fx) * (1.0 - fy) + (v(0, 1) * (1.0 - fx) + v(1, 1) * fx) * fy;
                lerp(lo, hi, n)
            })
            .collect();
        for _ in 0..scene.background.clutter {
            let color = hsv(rng.random_range(0.0..360.0), rng.random_range(0.0..0.35), rng.random_range(0.25..0.9));
            let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
            let (rx, ry) = (rng.random_range(2.0..7.0), rng.random_range(2.0..7.0));
            let disk = rng.random_bool(0.5);
            for (i, p) in pixels.iter_mut().enumerate() {
                let (dx, dy) = (((i % w) as f64 + 0.5 - cx) / rx, ((i / w) as f64 + 0.5 - cy) / ry);
                let inside = if disk { dx * dx + dy * dy <= 1.0 } else { dx.abs() <= 1.0 && dy.abs() <= 1.0 };
                if inside {
                    *p = color;
                }
            }
        }
        Backdrop { pixels }
    }
}

/// One rendered frame with its layer map.
pub(crate) fn render_frame(scene: &SceneSpec, backdrop: &Backdrop, t: usize) -> (RgbImage, Vec<Layer>) {
    let layers = scene.layers(t);
    let mut img = RgbImage::new(scene.width as u32, scene.height as u32);
    for (i, (px, layer)) in img.pixels_mut().zip(&layers).enumerate() {
        let (x, y) = ((i % scene.width) as f64 + 0.5, (i / scene.width) as f64 + 0.5);
        px.0 = match *layer {
            Layer::Background => backdrop.pixels[i],
            Layer::Human => HUMAN_COLOR,
            Layer::Sprite(k) => {
                let s = &scene.sprites[k];
                let (lx, ly) = s.local(t, x, y);
                s.texture.sample(lx, ly)
            }
        };
    }
    (img, layers)
}

/// Exact forward flow from frame `t` to `t + 1`, topmost layer per pixel.
pub(crate) fn flow_field(scene: &SceneSpec, layers: &[Layer], t: usize) -> FlowField {
    let w = scene.width;
    let data = layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let (x, y) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            let [u, v] = match *layer {
                Layer::Background => [0.0, 0.0],
                Layer::Human => [0.0, -scene.human.expect("human layer implies a bar").speed],
                Layer::Sprite(k) => scene.sprites[k].flow(t, x, y),
            };
            [u as f32, v as f32]
        })
        .collect();
    FlowField::new(w, scene.height, data).expect("analytic flow is finite")
}

pub fn hsv(hue_deg: f64, s: f64, v: f64) -> [u8; 3] {
    let h = hue_deg.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round() as u8)
}

fn lerp(a: [u8; 3], b: [u8; 3], f: f64) -> [u8; 3] {
    std::array::from_fn(|i| (a[i] as f64 + (b[i] as f64 - a[i] as f64) * f).round() as u8)
}
