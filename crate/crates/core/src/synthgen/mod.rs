//! Synthetic video sequences with exact masks and optical flow.
//!
//! A sequence directory holds `frames/%04d.png`, `masks/%04d.png`,
//! `flow/%04d.flo` (one fewer than frames, flow `t` maps frame `t` onto
//! `t + 1`), optionally `human/%04d.png`, and `manifest.json` with the scene
//! needed to regenerate everything.

mod benchmark;
mod scene;

use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use benchmark::{EVAL_SEQUENCES, PRETRAIN_SEQUENCES, TEACH_SEQUENCES, build_benchmark, make_benchmark, Benchmark, BenchmarkIndex, BenchmarkOptions, EvalEntry, TeachEntry, Transform};
pub use scene::{hsv, BackgroundSpec, HumanBar, Pattern, SceneSpec, SpriteShape, SpriteSpec, Texture, Trajectory};

use crate::error::{Error, Result};
use crate::flowio::FlowField;
use crate::maps::{check_dims, load_rgb, save_image, BinaryMask};
use scene::{flow_field, render_frame, Backdrop, Layer};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifest {
    pub format_version: u32,
    pub name: String,
    pub seed: u64,
    pub length: usize,
    pub scene: SceneSpec,
}

/// Frames with aligned ground truth.
///
/// `masks` is empty when no ground truth is available; `flow` is empty or
/// holds one field per consecutive frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBundle {
    pub name: String,
    pub frames: Vec<RgbImage>,
    pub masks: Vec<BinaryMask>,
    pub flow: Vec<FlowField>,
    pub human: Option<Vec<BinaryMask>>,
    pub manifest: Option<SequenceManifest>,
}

/// Render `length` frames of `scene`; `seed` drives the background.
pub fn generate_sequence(name: &str, scene: &SceneSpec, length: usize, seed: u64) -> Result<SequenceBundle> {
    scene.validate(length)?;
    let backdrop = Backdrop::new(scene, seed);
    let (w, h) = (scene.width, scene.height);
    let mut bundle = SequenceBundle {
        name: name.to_string(),
        frames: Vec::with_capacity(length),
        masks: Vec::with_capacity(length),
        flow: Vec::with_capacity(length - 1),
        human: scene.human.map(|_| Vec::with_capacity(length)),
        manifest: Some(SequenceManifest {
            format_version: MANIFEST_VERSION,
            name: name.to_string(),
            seed,
            length,
            scene: scene.clone(),
        }),
    };
    for t in 0..length {
        let (img, layers) = render_frame(scene, &backdrop, t);
        let mask = |f: &dyn Fn(Layer) -> bool| BinaryMask::new(w, h, layers.iter().map(|&l| f(l)).collect());
        bundle.frames.push(img);
        bundle
            .masks
            .push(mask(&|l| matches!(l, Layer::Sprite(k) if scene.sprites[k].foreground))?);
        if let Some(human) = bundle.human.as_mut() {
            human.push(mask(&|l| l == Layer::Human)?);
        }
        if t + 1 < length {
            bundle.flow.push(flow_field(scene, &layers, t));
        }
    }
    Ok(bundle)
}

/// `dir/sub/NNNN.ext`, the numbering used by every per-frame directory.
pub fn frame_path(dir: &Path, sub: &str, t: usize, ext: &str) -> PathBuf {
    dir.join(sub).join(format!("{t:04}.{ext}"))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

impl SequenceBundle {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames
            .first()
            .map_or((0, 0), |f| (f.width() as usize, f.height() as usize))
    }

    /// Checks counts and dims of every component against the frames.
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::format(&self.name, "sequence has no frames"));
        }
        let dims = self.dims();
        for f in &self.frames {
            check_dims("sequence frames", dims, (f.width() as usize, f.height() as usize))?;
        }
        if !self.masks.is_empty() && self.masks.len() != self.len() {
            return Err(Error::format(&self.name, format!("{} masks for {} frames", self.masks.len(), self.len())));
        }
        if !self.flow.is_empty() && self.flow.len() + 1 != self.len() {
            return Err(Error::format(&self.name, format!("{} flow fields for {} frames", self.flow.len(), self.len())));
        }
        if let Some(human) = &self.human {
            if human.len() != self.len() {
                return Err(Error::format(&self.name, format!("{} human masks for {} frames", human.len(), self.len())));
            }
        }
        let mask_dims = self.masks.iter().chain(self.human.iter().flatten()).map(|m| m.dims());
        for d in mask_dims.chain(self.flow.iter().map(|f| (f.width(), f.height()))) {
            check_dims("sequence", dims, d)?;
        }
        Ok(())
    }

    /// Flow for frame `t`: the forward field, or the last one for the final frame.
    pub fn flow_for_frame(&self, t: usize) -> Option<&FlowField> {
        self.flow.get(t.min(self.flow.len().checked_sub(1)?))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        create_dir(&dir.join("frames"))?;
        for (t, f) in self.frames.iter().enumerate() {
            save_image(f, &frame_path(dir, "frames", t, "png"))?;
        }
        if !self.masks.is_empty() {
            create_dir(&dir.join("masks"))?;
            for (t, m) in self.masks.iter().enumerate() {
                m.save_png(&frame_path(dir, "masks", t, "png"))?;
            }
        }
        if !self.flow.is_empty() {
            create_dir(&dir.join("flow"))?;
            for (t, f) in self.flow.iter().enumerate() {
                f.save(&frame_path(dir, "flow", t, "flo"))?;
            }
        }
        if let Some(human) = &self.human {
            create_dir(&dir.join("human"))?;
            for (t, m) in human.iter().enumerate() {
                m.save_png(&frame_path(dir, "human", t, "png"))?;
            }
        }
        if let Some(m) = &self.manifest {
            write_json(&dir.join("manifest.json"), m)?;
        }
        Ok(())
    }

    /// Loads whatever components are present; only `frames/` is required.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let manifest: Option<SequenceManifest> = if manifest_path.exists() {
            Some(read_json(&manifest_path)?)
        } else {
            None
        };
        let name = manifest.as_ref().map_or_else(
            || dir.file_name().map_or_else(|| "sequence".into(), |n| n.to_string_lossy().into_owned()),
            |m| m.name.clone(),
        );
        let frames = load_numbered(dir, "frames", "png", load_rgb)?;
        let masks = load_numbered(dir, "masks", "png", BinaryMask::load_png)?;
        let flow = load_numbered(dir, "flow", "flo", FlowField::load)?;
        let human = dir
            .join("human")
            .is_dir()
            .then(|| load_numbered(dir, "human", "png", BinaryMask::load_png))
            .transpose()?;
        let bundle = SequenceBundle {
            name,
            frames,
            masks,
            flow,
            human,
            manifest,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Visible mask of sprite `index` in every frame, regenerated from the manifest.
    pub fn sprite_masks(&self, index: usize) -> Result<Vec<BinaryMask>> {
        let m = self
            .manifest
            .as_ref()
            .ok_or_else(|| Error::Usage(format!("sequence `{}` has no manifest", self.name)))?;
        if index >= m.scene.sprites.len() {
            return Err(Error::Usage(format!("sequence `{}` has no sprite {index}", self.name)));
        }
        Ok((0..m.length).map(|t| m.scene.sprite_mask(index, t)).collect())
    }
}

/// Files `sub/0000.ext`, `sub/0001.ext`, … until the first gap; empty if `sub` is absent.
pub fn load_numbered<T>(dir: &Path, sub: &str, ext: &str, load: impl Fn(&Path) -> Result<T>) -> Result<Vec<T>> {
    let mut out = Vec::new();
    if !dir.join(sub).is_dir() {
        return Ok(out);
    }
    loop {
        let p = frame_path(dir, sub, out.len(), ext);
        if !p.exists() {
            return Ok(out);
        }
        out.push(load(&p)?);
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}
