//! Student and teacher segmentation networks.
//!
//! Both share one trunk design: two stride-2 3×3 convolutions (total stride
//! 4), a stack of dilated residual blocks, then a 1×1 classifier to two
//! channels whose logits are bilinearly upsampled back to input resolution.
//! The teacher runs an appearance trunk and a motion trunk over the colour
//! coded flow, multiplies their final feature maps and refines the product
//! with further residual blocks before its classifier.
//!
//! Parameters live in a flat list of `f32` tensors addressed by name; the
//! forward pass takes them as [`Var`]s so the same code serves training,
//! inference and gradient checks in `f64`.

pub mod archive;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use image::RgbImage;

use crate::error::{Error, Result};
use crate::flowio::{flow_to_rgb, FlowField};
use crate::maps::{check_dims, ProbabilityMap};
use crate::tensor::{ConvParams, Scalar, Shape, Tensor, Var};
pub use archive::{Record, WeightArchive};

/// Spatial reduction of the stem; input sides must be multiples of it.
pub const DOWNSAMPLE: usize = 4;

/// Residual branch output scale at initialization.
const BRANCH_INIT_GAIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub student_blocks: usize,
    pub teacher_stream_blocks: usize,
    pub teacher_fused_blocks: usize,
    pub base_channels: usize,
    /// Dilation of block `i` is `dilation_schedule[i % len]`.
    pub dilation_schedule: Vec<usize>,
    /// `(height, width)` of network inputs.
    pub input_resolution: (usize, usize),
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            student_blocks: 4,
            teacher_stream_blocks: 3,
            teacher_fused_blocks: 2,
            base_channels: 24,
            // 16×16 feature maps: wider dilations mostly sample padding and leak position
            dilation_schedule: vec![1],
            input_resolution: (64, 64),
        }
    }
}

impl NetworkConfig {
    /// Block counts at the original full-size depths.
    pub fn full_depth() -> Self {
        NetworkConfig {
            student_blocks: 16,
            teacher_stream_blocks: 11,
            teacher_fused_blocks: 5,
            dilation_schedule: vec![1, 2, 4, 8],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("student_blocks", self.student_blocks),
            ("teacher_stream_blocks", self.teacher_stream_blocks),
            ("teacher_fused_blocks", self.teacher_fused_blocks),
            ("base_channels", self.base_channels),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.dilation_schedule.is_empty() || self.dilation_schedule.contains(&0) {
            return Err(Error::Config("dilation_schedule needs entries >= 1".into()));
        }
        let (h, w) = self.input_resolution;
        check_resolution(h, w)
    }

    fn dilation(&self, block: usize) -> usize {
        self.dilation_schedule[block % self.dilation_schedule.len()]
    }
}

fn check_resolution(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
        return Err(Error::Config(format!(
            "input resolution {h}x{w} is not a positive multiple of {DOWNSAMPLE}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    Student,
    Teacher,
}

impl std::fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NetworkKind::Student => "student",
            NetworkKind::Teacher => "teacher",
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    weight: usize,
    bias: usize,
    params: ConvParams,
}

#[derive(Debug, Clone)]
struct Block {
    first: Conv,
    second: Conv,
}

#[derive(Debug, Clone)]
struct Trunk {
    stem: [Conv; 2],
    blocks: Vec<Block>,
}

#[derive(Debug, Clone)]
enum Layout {
    Student {
        trunk: Trunk,
        head: Conv,
    },
    Teacher {
        appearance: Trunk,
        motion: Trunk,
        fused: Vec<Block>,
        head: Conv,
    },
}

/// Parameters plus the layer layout that consumes them.
#[derive(Debug, Clone)]
pub struct Network {
    kind: NetworkKind,
    config: NetworkConfig,
    layout: Layout,
    names: Vec<String>,
    params: Vec<Tensor<f32>>,
}

struct Builder {
    rng: ChaCha8Rng,
    names: Vec<String>,
    params: Vec<Tensor<f32>>,
}

impl Builder {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, params: ConvParams, gain: f64) -> Conv {
        let std = gain * (2.0 / (cin * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..cout * cin * k * k).map(|_| normal.sample(&mut self.rng) as f32).collect();
        let weight = self.push(format!("{name}.weight"), Tensor::new([cout, cin, k, k], data).expect("sized"));
        let bias = self.push(format!("{name}.bias"), Tensor::zeros([1, cout, 1, 1]));
        Conv { weight, bias, params }
    }

    fn push(&mut self, name: String, t: Tensor<f32>) -> usize {
        self.names.push(name);
        self.params.push(t);
        self.params.len() - 1
    }

    fn block(&mut self, name: &str, c: usize, dilation: usize) -> Block {
        let p = ConvParams::new(1, dilation, dilation);
        Block {
            first: self.conv(&format!("{name}.conv1"), c, c, 3, p, 1.0),
            second: self.conv(&format!("{name}.conv2"), c, c, 3, p, BRANCH_INIT_GAIN),
        }
    }

    fn trunk(&mut self, prefix: &str, config: &NetworkConfig, blocks: usize) -> Trunk {
        let c = config.base_channels;
        let s = ConvParams::new(2, 1, 1);
        let stem = [
            self.conv(&format!("{prefix}.stem1"), 3, c, 3, s, 1.0),
            self.conv(&format!("{prefix}.stem2"), c, c, 3, s, 1.0),
        ];
        let blocks = (0..blocks)
            .map(|i| self.block(&format!("{prefix}.block{i}"), c, config.dilation(i)))
            .collect();
        Trunk { stem, blocks }
    }

    fn head(&mut self, prefix: &str, c: usize) -> Conv {
        self.conv(&format!("{prefix}.head"), c, 2, 1, ConvParams::default(), 0.5)
    }
}

impl Network {
    /// Freshly initialized network: He-normal kernels, zero biases, and the
    /// second convolution of every residual branch scaled down.
    pub fn new(kind: NetworkKind, config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            names: Vec::new(),
            params: Vec::new(),
        };
        let c = config.base_channels;
        let layout = match kind {
            NetworkKind::Student => Layout::Student {
                trunk: b.trunk("student", config, config.student_blocks),
                head: b.head("student", c),
            },
            NetworkKind::Teacher => {
                let appearance = b.trunk("teacher.app", config, config.teacher_stream_blocks);
                let motion = b.trunk("teacher.mot", config, config.teacher_stream_blocks);
                let offset = config.teacher_stream_blocks;
                let fused = (0..config.teacher_fused_blocks)
                    .map(|i| b.block(&format!("teacher.fused.block{i}"), c, config.dilation(offset + i)))
                    .collect();
                Layout::Teacher {
                    appearance,
                    motion,
                    fused,
                    head: b.head("teacher", c),
                }
            }
        };
        Ok(Network {
            kind,
            config: config.clone(),
            layout,
            names: b.names,
            params: b.params,
        })
    }

    pub fn student(config: &NetworkConfig, seed: u64) -> Result<Self> {
        Self::new(NetworkKind::Student, config, seed)
    }

    pub fn teacher(config: &NetworkConfig, seed: u64) -> Result<Self> {
        Self::new(NetworkKind::Teacher, config, seed)
    }

    pub fn kind(&self) -> NetworkKind {
        self.kind
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<f32>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Parameters as trainable graph leaves, in [`Network::names`] order.
    pub fn param_vars<T: Scalar>(&self) -> Vec<Var<T>> {
        self.params.iter().map(|p| Var::param(p.cast())).collect()
    }

    /// Parameters as constants, for inference without gradient tracking.
    pub fn const_vars<T: Scalar>(&self) -> Vec<Var<T>> {
        self.params.iter().map(|p| Var::constant(p.cast())).collect()
    }

    /// Two-channel logits `(N, 2, H, W)` for `images` `(N, 3, H, W)` in `[0, 1]`.
    ///
    /// `flow_rgb` is the colour-coded flow, required by the teacher and
    /// rejected by the student.
    pub fn logits<T: Scalar>(&self, params: &[Var<T>], images: &Var<T>, flow_rgb: Option<&Var<T>>) -> Result<Var<T>> {
        if params.len() != self.params.len() {
            return Err(Error::shape(
                "network",
                format!("{} parameters supplied, network has {}", params.len(), self.params.len()),
            ));
        }
        check_input(images)?;
        match (&self.layout, flow_rgb) {
            (Layout::Student { trunk, head }, None) => {
                let f = run_trunk(params, trunk, images)?;
                classify(params, head, &f)
            }
            (Layout::Teacher { fused, head, .. }, Some(flow)) => {
                let (app, mot) = self.stream_features(params, images, flow)?;
                let f = run_blocks(params, fused, &fuse(&app, &mot)?)?;
                classify(params, head, &f)
            }
            (Layout::Student { .. }, Some(_)) => Err(Error::Usage("the student does not take flow input".into())),
            (Layout::Teacher { .. }, None) => Err(Error::Usage("the teacher needs flow input".into())),
        }
    }

    /// Final feature maps of the teacher's appearance and motion trunks.
    pub fn stream_features<T: Scalar>(
        &self,
        params: &[Var<T>],
        images: &Var<T>,
        flow_rgb: &Var<T>,
    ) -> Result<(Var<T>, Var<T>)> {
        let Layout::Teacher { appearance, motion, .. } = &self.layout else {
            return Err(Error::Usage("only the teacher has separate streams".into()));
        };
        check_input(images)?;
        check_input(flow_rgb)?;
        if images.shape() != flow_rgb.shape() {
            return Err(Error::shape(
                "teacher",
                format!("image batch {} vs flow batch {}", images.shape(), flow_rgb.shape()),
            ));
        }
        Ok((run_trunk(params, appearance, images)?, run_trunk(params, motion, flow_rgb)?))
    }

    /// Foreground probability maps, one per batch item.
    pub fn predict(&self, images: &Tensor<f32>, flow_rgb: Option<&Tensor<f32>>) -> Result<Vec<ProbabilityMap>> {
        let params = self.const_vars::<f32>();
        let flow = flow_rgb.map(|f| Var::constant(f.clone()));
        let logits = self.logits(&params, &Var::constant(images.clone()), flow.as_ref())?;
        foreground_maps(logits.value())
    }

    /// Multiply-accumulate count of one forward pass over a single input.
    pub fn macs(&self) -> u64 {
        let (h, w) = self.config.input_resolution;
        let (h4, w4) = (h / DOWNSAMPLE, w / DOWNSAMPLE);
        let c = self.config.base_channels as u64;
        let conv = |oh: usize, ow: usize, cin: u64, cout: u64, k: u64| (oh * ow) as u64 * cin * cout * k * k;
        let trunk = |blocks: usize| {
            conv(h / 2, w / 2, 3, c, 3) + conv(h4, w4, c, c, 3) + blocks as u64 * 2 * conv(h4, w4, c, c, 3)
        };
        let head = conv(h4, w4, c, 2, 1);
        // each upsampled logit blends four taps
        let upsample = (h * w * 2 * 4) as u64;
        match &self.layout {
            Layout::Student { trunk: t, .. } => trunk(t.blocks.len()) + head + upsample,
            Layout::Teacher {
                appearance, fused, ..
            } => {
                let product = (h4 * w4) as u64 * c;
                2 * trunk(appearance.blocks.len())
                    + product
                    + fused.len() as u64 * 2 * conv(h4, w4, c, c, 3)
                    + head
                    + upsample
            }
        }
    }

    pub fn to_archive(&self) -> WeightArchive {
        let records = self
            .names
            .iter()
            .zip(&self.params)
            .map(|(name, p)| Record {
                name: name.clone(),
                dims: record_dims(name, p.shape()),
                values: p.data().to_vec(),
            })
            .collect();
        WeightArchive::new(records).expect("parameter names are unique")
    }

    /// A network of the given kind and config with every parameter taken
    /// from `archive`. Fails without side effects on any mismatch.
    pub fn from_archive(kind: NetworkKind, config: &NetworkConfig, archive: &WeightArchive) -> Result<Self> {
        let mut net = Network::new(kind, config, 0)?;
        for r in archive.records() {
            if !net.names.contains(&r.name) {
                return Err(Error::Record {
                    name: r.name.clone(),
                    detail: format!("not a parameter of the configured {kind}"),
                });
            }
        }
        for (name, p) in net.names.iter().zip(net.params.iter_mut()) {
            let r = archive.get(name).ok_or_else(|| Error::Record {
                name: name.clone(),
                detail: "missing from archive".into(),
            })?;
            let expected = record_dims(name, p.shape());
            if r.dims != expected {
                return Err(Error::Record {
                    name: name.clone(),
                    detail: format!("shape mismatch: archive has {:?}, network expects {:?}", r.dims, expected),
                });
            }
            *p = Tensor::new(p.shape(), r.values.clone())?;
        }
        Ok(net)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(kind: NetworkKind, config: &NetworkConfig, path: &std::path::Path) -> Result<Self> {
        Self::from_archive(kind, config, &WeightArchive::load(path)?)
    }
}

/// Biases are stored as rank-1 records, kernels as rank 4.
fn record_dims(name: &str, s: Shape) -> Vec<usize> {
    if name.ends_with(".bias") {
        vec![s.c]
    } else {
        s.dims().to_vec()
    }
}

fn check_input<T: Scalar>(x: &Var<T>) -> Result<()> {
    let s = x.shape();
    if s.c != 3 {
        return Err(Error::shape("network", format!("expected 3 input channels, got {s}")));
    }
    check_resolution(s.h, s.w)
}

/// Elementwise product of the two stream feature maps.
pub fn fuse<T: Scalar>(appearance: &Var<T>, motion: &Var<T>) -> Result<Var<T>> {
    appearance.mul(motion)
}

fn apply<T: Scalar>(params: &[Var<T>], c: &Conv, x: &Var<T>) -> Result<Var<T>> {
    x.conv2d(&params[c.weight], Some(&params[c.bias]), c.params)
}

fn run_trunk<T: Scalar>(params: &[Var<T>], trunk: &Trunk, input: &Var<T>) -> Result<Var<T>> {
    let centered = input.add(&Var::constant(Tensor::full(input.shape(), T::of(-0.5))))?;
    let mut x = centered;
    for c in &trunk.stem {
        x = apply(params, c, &x)?.relu()?;
    }
    run_blocks(params, &trunk.blocks, &x)
}

fn run_blocks<T: Scalar>(params: &[Var<T>], blocks: &[Block], input: &Var<T>) -> Result<Var<T>> {
    let mut x = input.clone();
    for b in blocks {
        let branch = apply(params, &b.second, &apply(params, &b.first, &x)?.relu()?)?;
        x = branch.add(&x)?.relu()?;
    }
    Ok(x)
}

fn classify<T: Scalar>(params: &[Var<T>], head: &Conv, features: &Var<T>) -> Result<Var<T>> {
    apply(params, head, features)?.upsample_bilinear(DOWNSAMPLE)
}

/// RGB images as an `(N, 3, H, W)` batch scaled to `[0, 1]`.
pub fn image_batch(images: &[&RgbImage]) -> Result<Tensor<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Usage("image batch needs at least one image".into()))?;
    let (w, h) = (first.width() as usize, first.height() as usize);
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        check_dims("image batch", (w, h), (img.width() as usize, img.height() as usize))?;
        for c in 0..3 {
            data.extend(img.pixels().map(|p| p.0[c] as f32 / 255.0));
        }
    }
    Tensor::new([images.len(), 3, h, w], data)
}

/// Colour-coded flow fields as a teacher motion-stream batch.
pub fn flow_batch(flows: &[&FlowField]) -> Result<Tensor<f32>> {
    let images = flows
        .iter()
        .map(|f| flow_to_rgb(f, None))
        .collect::<Result<Vec<_>>>()?;
    image_batch(&images.iter().collect::<Vec<_>>())
}

/// Channel-1 softmax probabilities of `(N, 2, H, W)` logits.
pub fn foreground_maps<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<ProbabilityMap>> {
    let s = logits.shape();
    if s.c != 2 {
        return Err(Error::shape("foreground_maps", format!("expected 2 channels, got {s}")));
    }
    let plane = s.plane();
    let z = logits.data();
    (0..s.n)
        .map(|n| {
            let base = n * 2 * plane;
            let probs = (0..plane)
                .map(|p| {
                    let d = (z[base + p] - z[base + plane + p]).as_f64();
                    (1.0 / (1.0 + d.exp())) as f32
                })
                .collect();
            ProbabilityMap::new(s.w, s.h, probs)
        })
        .collect()
}
