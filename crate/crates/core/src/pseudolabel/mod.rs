//! Turning teacher probability maps into adaptation targets.
//!
//! Discrete targets are trimasks: confident positives above a probability
//! threshold, confident negatives far (in Euclidean distance) from every
//! positive, everything else ignored. Continuous targets are the probability
//! map itself. Both drop pixels covered by the human mask.

mod edt;

pub use edt::{distance_transform, DistanceMap};

use std::path::Path;

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{check_dims, load_gray, save_image, BinaryMask, ProbabilityMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Negative,
    Ignore,
    Positive,
}

impl Label {
    pub fn gray(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Ignore => 128,
            Label::Positive => 255,
        }
    }

    pub fn from_gray(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::Negative),
            128 => Ok(Label::Ignore),
            255 => Ok(Label::Positive),
            other => Err(Error::format("trimask", format!("gray level {other} is not a label"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriMask {
    width: usize,
    height: usize,
    labels: Vec<Label>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub positive: usize,
    pub negative: usize,
    pub ignore: usize,
}

impl TriMask {
    pub fn new(width: usize, height: usize, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != width * height || labels.is_empty() {
            return Err(Error::shape("trimask", format!("{} labels for {width}x{height}", labels.len())));
        }
        Ok(TriMask {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, label: Label) -> Self {
        TriMask {
            width,
            height,
            labels: vec![label; width * height],
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

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> Label {
        self.labels[y * self.width + x]
    }

    pub fn counts(&self) -> LabelCounts {
        let mut c = LabelCounts::default();
        for l in &self.labels {
            match l {
                Label::Positive => c.positive += 1,
                Label::Negative => c.negative += 1,
                Label::Ignore => c.ignore += 1,
            }
        }
        c
    }

    pub fn select(&self, label: Label) -> BinaryMask {
        BinaryMask::new(
            self.width,
            self.height,
            self.labels.iter().map(|&l| l == label).collect(),
        )
        .expect("dims preserved")
    }

    /// 8-bit grayscale: NEGATIVE = 0, IGNORE = 128, POSITIVE = 255.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([self.get(x as usize, y as usize).gray()])
        })
    }

    pub fn from_image(img: &GrayImage) -> Result<Self> {
        let labels = img
            .pixels()
            .map(|p| Label::from_gray(p.0[0]))
            .collect::<Result<_>>()?;
        TriMask::new(img.width() as usize, img.height() as usize, labels)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        save_image(&self.to_image(), path)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        TriMask::from_image(&load_gray(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    Discrete,
    Continuous,
}

impl std::str::FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discrete" => Ok(TargetMode::Discrete),
            "continuous" => Ok(TargetMode::Continuous),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for TargetMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TargetMode::Discrete => "discrete",
            TargetMode::Continuous => "continuous",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoLabelConfig {
    /// Probability above which a teacher pixel is a confident positive.
    pub pos_th: f64,
    /// Distance in pixels beyond which a pixel is a confident negative.
    pub neg_dt_th: f64,
    pub mode: TargetMode,
}

impl PseudoLabelConfig {
    /// Negative band for long-range outdoor scenes.
    pub const OUTDOOR_NEG_DT_TH: f64 = 220.0;
    /// Negative band for close-range indoor scenes.
    pub const INDOOR_NEG_DT_TH: f64 = 20.0;
    /// The indoor band rescaled from 480-line frames to 64-pixel desk frames.
    pub const DESK_NEG_DT_TH: f64 = 3.0;

    pub fn validate(&self) -> Result<()> {
        if !(self.pos_th > 0.0 && self.pos_th < 1.0) {
            return Err(Error::Config(format!("pos_th must be in (0, 1), got {}", self.pos_th)));
        }
        if !(self.neg_dt_th > 0.0) || !self.neg_dt_th.is_finite() {
            return Err(Error::Config(format!("neg_dt_th must be positive, got {}", self.neg_dt_th)));
        }
        Ok(())
    }
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        PseudoLabelConfig {
            pos_th: 0.8,
            neg_dt_th: Self::DESK_NEG_DT_TH,
            mode: TargetMode::Discrete,
        }
    }
}

/// Build a trimask from a teacher probability map.
///
/// Positives are pixels with probability above `pos_th` outside the human
/// mask. Negatives are pixels farther than `neg_dt_th` from every positive.
/// Human pixels are never labeled. Fails with
/// [`Error::NoConfidentPixels`] when no positive survives.
pub fn make_discrete_targets(
    prob: &ProbabilityMap,
    config: &PseudoLabelConfig,
    human: Option<&BinaryMask>,
) -> Result<TriMask> {
    config.validate()?;
    if let Some(h) = human {
        check_dims("discrete targets", prob.dims(), h.dims())?;
    }
    let (w, h) = prob.dims();
    let is_human = |i: usize| human.is_some_and(|m| m.data()[i]);
    let positive = BinaryMask::new(
        w,
        h,
        prob.data()
            .iter()
            .enumerate()
            .map(|(i, &p)| p > config.pos_th as f32 && !is_human(i))
            .collect(),
    )?;
    let dt = distance_transform(&positive)?;
    let labels = (0..w * h)
        .map(|i| {
            if positive.data()[i] {
                Label::Positive
            } else if dt.data()[i] > config.neg_dt_th && !is_human(i) {
                Label::Negative
            } else {
                Label::Ignore
            }
        })
        .collect();
    TriMask::new(w, h, labels)
}

/// The probability map as a soft target, with human pixels forced to background.
pub fn make_continuous_targets(
    prob: &ProbabilityMap,
    human: Option<&BinaryMask>,
) -> Result<ProbabilityMap> {
    let Some(human) = human else {
        return Ok(prob.clone());
    };
    check_dims("continuous targets", prob.dims(), human.dims())?;
    let data = prob
        .data()
        .iter()
        .zip(human.data())
        .map(|(&p, &hm)| if hm { 0.0 } else { p })
        .collect();
    ProbabilityMap::new(prob.width(), prob.height(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;

    fn blob_map(w: usize, h: usize, x0: usize, y0: usize, size: usize) -> ProbabilityMap {
        let data = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                if (x0..x0 + size).contains(&x) && (y0..y0 + size).contains(&y) {
                    0.95
                } else {
                    0.1
                }
            })
            .collect();
        ProbabilityMap::new(w, h, data).unwrap()
    }

    #[test]
    fn uniform_confident_map_is_all_positive() {
        let p = ProbabilityMap::full(6, 5, 0.9).unwrap();
        let t = make_discrete_targets(&p, &PseudoLabelConfig::default(), None).unwrap();
        assert_eq!(t.counts(), LabelCounts { positive: 30, negative: 0, ignore: 0 });
    }

    #[test]
    fn negatives_lie_beyond_the_distance_band() {
        let p = blob_map(32, 32, 3, 4, 4);
        let cfg = PseudoLabelConfig {
            neg_dt_th: 20.0,
            ..Default::default()
        };
        let t = make_discrete_targets(&p, &cfg, None).unwrap();
        let pos = t.select(Label::Positive);
        assert_eq!(pos.count(), 16);
        let d = oracles::distance_all_pairs(pos.data(), 32, 32);
        for (i, &l) in t.labels().iter().enumerate() {
            let expected = if pos.data()[i] {
                Label::Positive
            } else if d[i] > 20.0 {
                Label::Negative
            } else {
                Label::Ignore
            };
            assert_eq!(l, expected, "pixel {i}");
        }
        assert!(t.counts().negative > 0);
    }

    #[test]
    fn human_pixels_are_ignored() {
        let p = blob_map(16, 16, 4, 4, 4);
        // left half of the blob is under the human mask
        let human = BinaryMask::from_fn(16, 16, |x, _| x < 6);
        let cfg = PseudoLabelConfig {
            neg_dt_th: 3.0,
            ..Default::default()
        };
        let t = make_discrete_targets(&p, &cfg, Some(&human)).unwrap();
        assert_eq!(t.counts().positive, 8);
        for y in 0..16 {
            for x in 0..6 {
                assert_eq!(t.get(x, y), Label::Ignore);
            }
        }
    }

    #[test]
    fn no_confident_pixels_is_reported() {
        let p = ProbabilityMap::full(8, 8, 0.5).unwrap();
        assert!(matches!(
            make_discrete_targets(&p, &PseudoLabelConfig::default(), None),
            Err(Error::NoConfidentPixels)
        ));
        let bad = PseudoLabelConfig {
            pos_th: 1.0,
            ..Default::default()
        };
        assert!(matches!(make_discrete_targets(&p, &bad, None), Err(Error::Config(_))));
    }

    #[test]
    fn threshold_is_strict() {
        let p = ProbabilityMap::new(2, 1, vec![0.8, 0.81]).unwrap();
        let t = make_discrete_targets(&p, &PseudoLabelConfig::default(), None).unwrap();
        assert_eq!(t.labels(), &[Label::Ignore, Label::Positive]);
    }

    #[test]
    fn continuous_targets() {
        let p = blob_map(8, 8, 1, 1, 3);
        assert_eq!(make_continuous_targets(&p, None).unwrap(), p);
        let all = BinaryMask::from_fn(8, 8, |_, _| true);
        let t = make_continuous_targets(&p, Some(&all)).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
        let spot = BinaryMask::from_fn(8, 8, |x, y| x == 2 && y == 2);
        let t = make_continuous_targets(&p, Some(&spot)).unwrap();
        assert_eq!(p.get(2, 2), 0.95);
        assert_eq!(t.get(2, 2), 0.0);
        assert_eq!(t.get(1, 1), 0.95);
    }

    #[test]
    fn trimask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let labels = [Label::Negative, Label::Ignore, Label::Positive, Label::Ignore];
        let t = TriMask::new(2, 2, labels.to_vec()).unwrap();
        let path = dir.path().join("t.png");
        t.save_png(&path).unwrap();
        let img = load_gray(&path).unwrap();
        assert_eq!(img.as_raw(), &vec![0u8, 128, 255, 128]);
        assert_eq!(TriMask::load_png(&path).unwrap(), t);
        assert!(Label::from_gray(7).is_err());
    }

    use proptest::prelude::*;

    /// Maps with a confident pixel somewhere, plus an optional human mask.
    fn case() -> impl Strategy<Value = (ProbabilityMap, Option<BinaryMask>)> {
        (2usize..20, 2usize..20).prop_flat_map(|(w, h)| {
            let n = w * h;
            (
                prop::collection::vec(prop_oneof![0.0f32..1.0, 0.79f32..0.81, Just(0.8f32), 0.9f32..=1.0], n),
                prop::option::of(prop::collection::vec(prop::bool::weighted(0.2), n)),
                0..n,
            )
                .prop_map(move |(mut p, human, seed_px)| {
                    p[seed_px] = 0.99;
                    let human = human.map(|mut m| {
                        m[seed_px] = false;
                        BinaryMask::new(w, h, m).unwrap()
                    });
                    (ProbabilityMap::new(w, h, p).unwrap(), human)
                })
        })
    }

    fn cfg(pos_th: f64, neg_dt_th: f64) -> PseudoLabelConfig {
        PseudoLabelConfig {
            pos_th,
            neg_dt_th,
            mode: TargetMode::Discrete,
        }
    }

    proptest! {
        #[test]
        fn labels_follow_their_definitions((p, human) in case(), neg in prop_oneof![Just(1.5), Just(3.0), Just(20.0)]) {
            let t = make_discrete_targets(&p, &cfg(0.8, neg), human.as_ref()).unwrap();
            let c = t.counts();
            prop_assert_eq!(c.positive + c.negative + c.ignore, p.data().len());
            let pos = t.select(Label::Positive);
            let d = oracles::distance_all_pairs(pos.data(), p.width(), p.height());
            for (i, &l) in t.labels().iter().enumerate() {
                let hm = human.as_ref().is_some_and(|m| m.data()[i]);
                prop_assert_eq!(l == Label::Positive, p.data()[i] > 0.8 && !hm);
                if hm {
                    prop_assert_eq!(l, Label::Ignore);
                }
                if l == Label::Negative {
                    prop_assert!(d[i] > neg);
                }
            }
        }

        #[test]
        fn stricter_thresholds_shrink_label_sets((p, human) in case(), lo in 0.5f64..0.9, extra in 0.0f64..0.09, neg in 1.0f64..6.0) {
            let hi = lo + extra;
            let a = make_discrete_targets(&p, &cfg(lo, neg), human.as_ref()).unwrap();
            let b = make_discrete_targets(&p, &cfg(hi, neg), human.as_ref()).unwrap();
            let wide = make_discrete_targets(&p, &cfg(lo, neg + 2.0), human.as_ref()).unwrap();
            for i in 0..p.data().len() {
                if b.labels()[i] == Label::Positive {
                    prop_assert_eq!(a.labels()[i], Label::Positive);
                }
                if wide.labels()[i] == Label::Negative {
                    prop_assert_eq!(a.labels()[i], Label::Negative);
                }
            }
        }
    }
}
