//! Segmentation quality measures: region similarity J, boundary F, sequence
//! statistics, pixel precision/recall and mean IoU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{check_dims, BinaryMask};
use crate::pseudolabel::distance_transform;

/// Intersection over union; two empty masks count as a perfect match.
pub fn region_j(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_dims("region_j", pred.dims(), gt.dims())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// One-pixel boundary: foreground pixels with a 4-neighbour in the background.
/// The image border does not count as background.
pub fn boundary(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    BinaryMask::from_fn(w, h, |x, y| {
        mask.get(x, y)
            && ((x > 0 && !mask.get(x - 1, y))
                || (x + 1 < w && !mask.get(x + 1, y))
                || (y > 0 && !mask.get(x, y - 1))
                || (y + 1 < h && !mask.get(x, y + 1)))
    })
}

/// Default boundary tolerance: `ceil(0.0075 · diagonal)`, at least one pixel.
pub fn default_tolerance(width: usize, height: usize) -> f64 {
    let diag = ((width * width + height * height) as f64).sqrt();
    (0.0075 * diag).ceil().max(1.0)
}

/// Boundary F-measure with a Euclidean matching tolerance in pixels.
pub fn boundary_f(pred: &BinaryMask, gt: &BinaryMask, tolerance_px: f64) -> Result<f64> {
    check_dims("boundary_f", pred.dims(), gt.dims())?;
    let (pb, gb) = (boundary(pred), boundary(gt));
    match (pb.is_empty(), gb.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let matched_fraction = |from: &BinaryMask, to: &BinaryMask| -> Result<f64> {
        let dt = distance_transform(to)?;
        let hits = from
            .data()
            .iter()
            .zip(dt.data())
            .filter(|(&b, &d)| b && d <= tolerance_px)
            .count();
        Ok(hits as f64 / from.count() as f64)
    };
    let precision = matched_fraction(&pb, &gb)?;
    let recall = matched_fraction(&gb, &pb)?;
    Ok(harmonic(precision, recall))
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceStats {
    pub mean: f64,
    /// Fraction of frames scoring above 0.5.
    pub recall: f64,
    /// Mean of the first quarter of frames minus mean of the last quarter.
    pub decay: f64,
}

pub fn sequence_stats(values: &[f64]) -> Result<SequenceStats> {
    if values.is_empty() {
        return Err(Error::Usage("sequence statistics need at least one frame".into()));
    }
    let n = values.len();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let quarter = n.div_ceil(4);
    Ok(SequenceStats {
        mean: mean(values),
        recall: values.iter().filter(|&&v| v > 0.5).count() as f64 / n as f64,
        decay: mean(&values[..quarter]) - mean(&values[n - quarter..]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Pixel-level precision, recall and F accumulated over all frames.
pub fn prf(preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<Prf> {
    aligned("prf", preds, gts)?;
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (p, g) in preds.iter().zip(gts) {
        check_dims("prf", p.dims(), g.dims())?;
        for (&a, &b) in p.data().iter().zip(g.data()) {
            tp += (a && b) as usize;
            fp += (a && !b) as usize;
            fne += (!a && b) as usize;
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fne);
    Ok(Prf {
        precision,
        recall,
        f_measure: harmonic(precision, recall),
    })
}

/// Mean over frames of [`region_j`].
pub fn miou(preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<f64> {
    aligned("miou", preds, gts)?;
    if preds.is_empty() {
        return Err(Error::Usage("miou needs at least one frame".into()));
    }
    let total: f64 = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| region_j(p, g))
        .sum::<Result<f64>>()?;
    Ok(total / preds.len() as f64)
}

fn aligned(op: &'static str, preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<()> {
    if preds.len() == gts.len() {
        Ok(())
    } else {
        Err(Error::shape(op, format!("{} predictions for {} ground-truth frames", preds.len(), gts.len())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub name: String,
    pub frames: usize,
    pub j_mean: f64,
    pub j_recall: f64,
    pub j_decay: f64,
    pub f_mean: f64,
    pub f_recall: f64,
    pub f_decay: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub miou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sequences: Vec<SequenceMetrics>,
    /// Per-sequence measures averaged over sequences; P/R/F pooled over all pixels.
    pub aggregate: SequenceMetrics,
}

impl SequenceMetrics {
    pub fn evaluate(name: &str, preds: &[BinaryMask], gts: &[BinaryMask], tolerance_px: Option<f64>) -> Result<Self> {
        aligned("evaluate", preds, gts)?;
        let first = gts
            .first()
            .ok_or_else(|| Error::Usage(format!("sequence `{name}` has no frames")))?;
        let tol = tolerance_px.unwrap_or_else(|| default_tolerance(first.width(), first.height()));
        let js: Vec<f64> = preds.iter().zip(gts).map(|(p, g)| region_j(p, g)).collect::<Result<_>>()?;
        let fs: Vec<f64> = preds
            .iter()
            .zip(gts)
            .map(|(p, g)| boundary_f(p, g, tol))
            .collect::<Result<_>>()?;
        let j = sequence_stats(&js)?;
        let f = sequence_stats(&fs)?;
        let pr = prf(preds, gts)?;
        Ok(SequenceMetrics {
            name: name.to_string(),
            frames: preds.len(),
            j_mean: j.mean,
            j_recall: j.recall,
            j_decay: j.decay,
            f_mean: f.mean,
            f_recall: f.recall,
            f_decay: f.decay,
            precision: pr.precision,
            recall: pr.recall,
            f_measure: pr.f_measure,
            miou: j.mean,
        })
    }
}

impl MetricsReport {
    /// Evaluate named sequences of `(predictions, ground truth)`.
    pub fn evaluate(sequences: &[(String, Vec<BinaryMask>, Vec<BinaryMask>)], tolerance_px: Option<f64>) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::Usage("nothing to evaluate".into()));
        }
        let per: Vec<SequenceMetrics> = sequences
            .iter()
            .map(|(n, p, g)| SequenceMetrics::evaluate(n, p, g, tolerance_px))
            .collect::<Result<_>>()?;
        let k = per.len() as f64;
        let avg = |f: fn(&SequenceMetrics) -> f64| per.iter().map(f).sum::<f64>() / k;
        let all_p: Vec<BinaryMask> = sequences.iter().flat_map(|(_, p, _)| p.iter().cloned()).collect();
        let all_g: Vec<BinaryMask> = sequences.iter().flat_map(|(_, _, g)| g.iter().cloned()).collect();
        let pooled = prf(&all_p, &all_g)?;
        let aggregate = SequenceMetrics {
            name: "all".into(),
            frames: all_p.len(),
            j_mean: avg(|s| s.j_mean),
            j_recall: avg(|s| s.j_recall),
            j_decay: avg(|s| s.j_decay),
            f_mean: avg(|s| s.f_mean),
            f_recall: avg(|s| s.f_recall),
            f_decay: avg(|s| s.f_decay),
            precision: pooled.precision,
            recall: pooled.recall,
            f_measure: pooled.f_measure,
            miou: miou(&all_p, &all_g)?,
        };
        Ok(MetricsReport {
            sequences: per,
            aggregate,
        })
    }

    /// Fixed-width table: J and F blocks as Mean/Recall/Decay rows, one column per sequence.
    pub fn davis_table(&self) -> String {
        let mut cols: Vec<&SequenceMetrics> = self.sequences.iter().collect();
        cols.push(&self.aggregate);
        let mut out = format!("{:<14}", "Measure");
        for c in &cols {
            out.push_str(&format!("{:>12}", truncate(&c.name, 11)));
        }
        out.push('\n');
        let rows: [(&str, fn(&SequenceMetrics) -> f64); 6] = [
            ("J Mean", |s| s.j_mean),
            ("J Recall", |s| s.j_recall),
            ("J Decay", |s| s.j_decay),
            ("F Mean", |s| s.f_mean),
            ("F Recall", |s| s.f_recall),
            ("F Decay", |s| s.f_decay),
        ];
        for (label, f) in rows {
            out.push_str(&format!("{label:<14}"));
            for c in &cols {
                out.push_str(&format!("{:>12.3}", f(c)));
            }
            out.push('\n');
        }
        out
    }

    pub fn prf_table(&self) -> String {
        let a = &self.aggregate;
        format!(
            "{:<6}{:>10.3}\n{:<6}{:>10.3}\n{:<6}{:>10.3}\n",
            "P", a.precision, "R", a.recall, "F", a.f_measure
        )
    }

    pub fn miou_table(&self) -> String {
        let mut out = String::new();
        for s in self.sequences.iter().chain(std::iter::once(&self.aggregate)) {
            out.push_str(&format!("{:<20}{:>10.3}\n", truncate(&s.name, 19), s.miou));
        }
        out
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
