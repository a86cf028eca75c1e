//! The fixed desk benchmark.
//!
//! Two target objects, each with one teaching sequence (target translating,
//! never-foreground distractors static) and three evaluation sequences
//! (target scaling, rotating, static) among distractors that never appear in
//! teaching. Pretraining sequences hold moving foreground sprites beside
//! static background sprites. Random textures keep their hue away from the
//! targets' hues.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{BackgroundSpec, HumanBar, Pattern, SceneSpec, SpriteShape, SpriteSpec, Texture, Trajectory};
use super::{generate_sequence, read_json, write_json, SequenceBundle};
use crate::error::{Error, Result};

pub const PRETRAIN_SEQUENCES: usize = 16;
pub const TEACH_SEQUENCES: usize = 2;
pub const EVAL_SEQUENCES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Scale,
    Rotation,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOptions {
    pub width: usize,
    pub height: usize,
    pub length: usize,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions {
            width: 64,
            height: 64,
            length: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachEntry {
    pub name: String,
    pub target: usize,
    /// Index of the target within the scene's sprite list.
    pub target_sprite: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub name: String,
    pub target: usize,
    pub transform: Transform,
    pub target_sprite: usize,
    /// Distractor with the target's shape and size but another texture.
    pub lookalike_sprite: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkIndex {
    pub seed: u64,
    pub options: BenchmarkOptions,
    pub pretrain: Vec<String>,
    pub teach: Vec<TeachEntry>,
    pub eval: Vec<EvalEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub index: BenchmarkIndex,
    pub pretrain: Vec<SequenceBundle>,
    pub teach: Vec<SequenceBundle>,
    pub eval: Vec<SequenceBundle>,
}

struct Target {
    shape: SpriteShape,
    texture: Texture,
    hue: f64,
}

fn targets() -> [Target; TEACH_SEQUENCES] {
    [
        Target {
            shape: SpriteShape::Rectangle,
            texture: Texture::from_hue(Pattern::Checker, 0.0, 0.45),
            hue: 0.0,
        },
        Target {
            shape: SpriteShape::Polygon { sides: 5 },
            texture: Texture::from_hue(Pattern::Stripes { angle_deg: 30.0 }, 210.0, 0.4),
            hue: 210.0,
        },
    ]
}

/// Hue at least 45° from every target hue.
fn free_hue(rng: &mut impl Rng) -> f64 {
    loop {
        let h: f64 = rng.random_range(0.0..360.0);
        let clear = targets().iter().all(|t| {
            let d = (h - t.hue).rem_euclid(360.0);
            d.min(360.0 - d) >= 45.0
        });
        if clear {
            return h;
        }
    }
}

fn free_texture(rng: &mut impl Rng) -> Texture {
    let hue = free_hue(rng);
    Texture::random(rng, hue)
}

fn random_shape(rng: &mut impl Rng) -> SpriteShape {
    match rng.random_range(0..3) {
        0 => SpriteShape::Disk,
        1 => SpriteShape::Rectangle,
        _ => SpriteShape::Polygon {
            sides: rng.random_range(3..=6),
        },
    }
}

struct Layout {
    w: f64,
    h: f64,
    unit: f64,
    opts: BenchmarkOptions,
}

impl Layout {
    fn new(opts: BenchmarkOptions) -> Self {
        Layout {
            w: opts.width as f64,
            h: opts.height as f64,
            unit: opts.width.min(opts.height) as f64 / 64.0,
            opts,
        }
    }

    fn at(&self, fx: f64, fy: f64) -> [f64; 2] {
        [fx * self.w, fy * self.h]
    }

    fn scene(&self, sprites: Vec<SpriteSpec>, human: Option<HumanBar>) -> SceneSpec {
        SceneSpec {
            width: self.opts.width,
            height: self.opts.height,
            background: BackgroundSpec::default(),
            sprites,
            human,
        }
    }

    fn random_sprite(&self, rng: &mut impl Rng, moving: bool) -> SpriteSpec {
        loop {
            let size = rng.random_range(6.0..10.0) * self.unit;
            let trajectory = if !moving {
                Trajectory::Static
            } else {
                match rng.random_range(0..3) {
                    0 => {
                        // whole-pixel steps keep warped masks exact
                        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                        let speed = rng.random_range(1.5..3.0) * self.unit;
                        let (dx, dy) = ((speed * a.cos()).round(), (speed * a.sin()).round());
                        if dx == 0.0 && dy == 0.0 {
                            continue;
                        }
                        Trajectory::Translation { dx, dy }
                    }
                    1 => Trajectory::Scale {
                        factor: if rng.random_bool(0.5) { 1.05 } else { 0.95 },
                    },
                    _ => Trajectory::Rotation {
                        deg: rng.random_range(8.0..20.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                    },
                }
            };
            let s = SpriteSpec {
                shape: random_shape(rng),
                texture: free_texture(rng),
                size,
                center: self.at(rng.random_range(0.15..0.85), rng.random_range(0.15..0.85)),
                angle_deg: rng.random_range(0.0..360.0),
                trajectory,
                foreground: moving,
            };
            if s.check_fits(self.opts.width, self.opts.height, self.opts.length).is_ok() {
                return s;
            }
        }
    }

    fn pretrain_scene(&self, rng: &mut impl Rng) -> SceneSpec {
        let mut sprites: Vec<SpriteSpec> = (0..2).map(|_| self.random_sprite(rng, false)).collect();
        sprites.extend((0..2).map(|_| self.random_sprite(rng, true)));
        self.scene(sprites, None)
    }

    fn distractor(&self, rng: &mut impl Rng, center: [f64; 2]) -> SpriteSpec {
        SpriteSpec {
            shape: random_shape(rng),
            texture: free_texture(rng),
            size: rng.random_range(7.0..9.0) * self.unit,
            center,
            angle_deg: rng.random_range(0.0..360.0),
            trajectory: Trajectory::Static,
            foreground: false,
        }
    }

    fn target_sprite(&self, t: &Target, center: [f64; 2], trajectory: Trajectory, size: f64) -> SpriteSpec {
        SpriteSpec {
            shape: t.shape,
            texture: t.texture,
            size: size * self.unit,
            center,
            angle_deg: 0.0,
            trajectory,
            foreground: true,
        }
    }

    fn teach_scene(&self, rng: &mut impl Rng, k: usize, t: &Target) -> SceneSpec {
        let target = self.target_sprite(
            t,
            self.at(0.25, 0.3),
            Trajectory::Translation {
                dx: (2.0 * self.unit).round(),
                dy: self.unit.round(),
            },
            9.0,
        );
        let mut sprites: Vec<SpriteSpec> = [(0.78, 0.78), (0.78, 0.22), (0.3, 0.8)]
            .iter()
            .map(|&(fx, fy)| self.distractor(rng, self.at(fx, fy)))
            .collect();
        sprites.push(target);
        // the second teaching scene also carries the human proxy, far from the target
        let human = (k == 1).then(|| HumanBar {
            x: 0.06 * self.w,
            width: 0.1 * self.w,
            top: self.h + 2.0 * self.unit,
            speed: 3.0 * self.unit,
        });
        self.scene(sprites, human)
    }

    fn eval_scene(&self, rng: &mut impl Rng, t: &Target, transform: Transform) -> (SceneSpec, Option<usize>) {
        match transform {
            Transform::Scale => {
                let target = self.target_sprite(t, self.at(0.32, 0.62), Trajectory::Scale { factor: 1.06 }, 7.0);
                let d = vec![self.distractor(rng, self.at(0.75, 0.25)), self.distractor(rng, self.at(0.75, 0.8))];
                (self.scene([d, vec![target]].concat(), None), None)
            }
            Transform::Rotation => {
                let target = self.target_sprite(t, self.at(0.65, 0.4), Trajectory::Rotation { deg: 12.0 }, 9.0);
                let d = vec![self.distractor(rng, self.at(0.22, 0.25)), self.distractor(rng, self.at(0.25, 0.78))];
                (self.scene([d, vec![target]].concat(), None), None)
            }
            Transform::Static => {
                let target = self.target_sprite(t, self.at(0.3, 0.68), Trajectory::Static, 9.0);
                let lookalike = SpriteSpec {
                    texture: free_texture(rng),
                    foreground: false,
                    center: self.at(0.7, 0.3),
                    ..target
                };
                let d = self.distractor(rng, self.at(0.75, 0.8));
                (self.scene(vec![lookalike, d, target], None), Some(0))
            }
        }
    }
}

/// Generate the benchmark in memory.
pub fn build_benchmark(seed: u64, opts: BenchmarkOptions) -> Result<Benchmark> {
    let layout = Layout::new(opts);
    if opts.length < 2 {
        return Err(Error::Config("benchmark sequences need at least 2 frames".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next_seed = || rng.random::<u64>();
    let mut scene_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5cee_0000_0001);
    let seq = |role: &str, i: usize| format!("{role}/seq_{i:02}");

    let mut pretrain = Vec::new();
    for i in 0..PRETRAIN_SEQUENCES {
        let scene = layout.pretrain_scene(&mut scene_rng);
        pretrain.push(generate_sequence(&seq("pretrain", i), &scene, opts.length, next_seed())?);
    }
    let ts = targets();
    let mut teach = Vec::new();
    let mut teach_index = Vec::new();
    for (k, t) in ts.iter().enumerate() {
        let scene = layout.teach_scene(&mut scene_rng, k, t);
        let name = seq("teach", k);
        teach_index.push(TeachEntry {
            name: name.clone(),
            target: k,
            target_sprite: scene.sprites.len() - 1,
        });
        teach.push(generate_sequence(&name, &scene, opts.length, next_seed())?);
    }
    let mut eval = Vec::new();
    let mut eval_index = Vec::new();
    for (k, t) in ts.iter().enumerate() {
        for transform in [Transform::Scale, Transform::Rotation, Transform::Static] {
            let (scene, lookalike) = layout.eval_scene(&mut scene_rng, t, transform);
            let name = seq("eval", eval.len());
            eval_index.push(EvalEntry {
                name: name.clone(),
                target: k,
                transform,
                target_sprite: scene.sprites.len() - 1,
                lookalike_sprite: lookalike,
            });
            eval.push(generate_sequence(&name, &scene, opts.length, next_seed())?);
        }
    }
    let index = BenchmarkIndex {
        seed,
        options: opts,
        pretrain: pretrain.iter().map(|b| b.name.clone()).collect(),
        teach: teach_index,
        eval: eval_index,
    };
    Ok(Benchmark {
        index,
        pretrain,
        teach,
        eval,
    })
}

/// Generate the benchmark and write it under `out_dir` with `benchmark.json` at the root.
pub fn make_benchmark(out_dir: &Path, seed: u64, opts: BenchmarkOptions) -> Result<Benchmark> {
    let b = build_benchmark(seed, opts)?;
    b.save(out_dir)?;
    Ok(b)
}

impl Benchmark {
    pub fn save(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        for s in self.pretrain.iter().chain(&self.teach).chain(&self.eval) {
            s.save(&out_dir.join(&s.name))?;
        }
        write_json(&out_dir.join("benchmark.json"), &self.index)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index: BenchmarkIndex = read_json(&dir.join("benchmark.json"))?;
        let load_all = |names: Vec<&String>| -> Result<Vec<SequenceBundle>> {
            names.into_iter().map(|n| SequenceBundle::load(&dir.join(n))).collect()
        };
        Ok(Benchmark {
            pretrain: load_all(index.pretrain.iter().collect())?,
            teach: load_all(index.teach.iter().map(|e| &e.name).collect())?,
            eval: load_all(index.eval.iter().map(|e| &e.name).collect())?,
            index,
        })
    }

    /// Evaluation sequences of target `k`, with their index entries.
    pub fn eval_for(&self, k: usize) -> impl Iterator<Item = (&EvalEntry, &SequenceBundle)> {
        self.index.eval.iter().zip(&self.eval).filter(move |(e, _)| e.target == k)
    }
}
