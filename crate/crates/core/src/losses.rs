//! Training objectives over two-class logits `(N, 2, H, W)`.
//!
//! Channel 0 is background, channel 1 foreground. Every loss is a weighted
//! [`Var::pixel_cross_entropy`]; bootstrapping only chooses the weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{BinaryMask, ProbabilityMap};
use crate::pseudolabel::{Label, TriMask};
use crate::tensor::{pixel_ce_terms, Scalar, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Share of the hardest eligible pixels kept per image, in `(0, 1]`.
    pub bootstrap_fraction: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            bootstrap_fraction: 0.25,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        check_fraction(self.bootstrap_fraction)
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("bootstrap fraction must be in (0, 1], got {fraction}")))
    }
}

/// Number of pixels kept out of `eligible`: `ceil(fraction · eligible)`, at least one.
pub fn bootstrap_count(fraction: f64, eligible: usize) -> usize {
    // the epsilon keeps exact products such as 0.5 · 4 from rounding up
    ((fraction * eligible as f64 - 1e-9).ceil() as usize).clamp(1, eligible.max(1))
}

/// Mean cross-entropy over the hardest `ceil(fraction · P)` pixels of each image.
///
/// Pixels tied with the cutoff value are all kept.
pub fn bootstrapped_ce<T: Scalar>(logits: &Var<T>, labels: &[BinaryMask], fraction: f64) -> Result<Var<T>> {
    check_fraction(fraction)?;
    if labels.is_empty() {
        return Err(Error::Usage("bootstrapped_ce needs at least one label map".into()));
    }
    let plane = check_batch("bootstrapped_ce", logits, labels.iter().map(|m| m.dims()))?;
    let targets: Vec<T> = labels
        .iter()
        .flat_map(|m| m.data().iter().map(|&b| if b { T::one() } else { T::zero() }))
        .collect();
    let eligible = vec![true; targets.len()];
    bootstrap(logits, &targets, &eligible, plane, fraction)
}

/// Bootstrapped cross-entropy restricted to the non-ignore pixels of each trimask.
pub fn masked_ce<T: Scalar>(logits: &Var<T>, trimasks: &[TriMask], fraction: f64) -> Result<Var<T>> {
    check_fraction(fraction)?;
    if trimasks.is_empty() {
        return Err(Error::Usage("masked_ce needs at least one trimask".into()));
    }
    let plane = check_batch("masked_ce", logits, trimasks.iter().map(|m| m.dims()))?;
    let labels = trimasks.iter().flat_map(|m| m.labels().iter().copied());
    let (targets, eligible): (Vec<T>, Vec<bool>) = labels
        .map(|l| match l {
            Label::Positive => (T::one(), true),
            Label::Negative => (T::zero(), true),
            Label::Ignore => (T::zero(), false),
        })
        .unzip();
    if !eligible.iter().any(|&e| e) {
        return Err(Error::NoSignal);
    }
    bootstrap(logits, &targets, &eligible, plane, fraction)
}

/// Mean over all pixels of `H(p, q)` with soft foreground targets `p`.
pub fn soft_ce<T: Scalar>(logits: &Var<T>, targets: &[ProbabilityMap]) -> Result<Var<T>> {
    if targets.is_empty() {
        return Err(Error::Usage("soft_ce needs at least one target map".into()));
    }
    check_batch("soft_ce", logits, targets.iter().map(|m| m.dims()))?;
    let p: Vec<T> = targets
        .iter()
        .flat_map(|m| m.data().iter().map(|&v| T::of(v as f64)))
        .collect();
    let weights = vec![T::one(); p.len()];
    logits.pixel_cross_entropy(&p, &weights)
}

/// Per-image top-k selection among eligible pixels; selected pixels weigh 1.
fn bootstrap<T: Scalar>(
    logits: &Var<T>,
    targets: &[T],
    eligible: &[bool],
    plane: usize,
    fraction: f64,
) -> Result<Var<T>> {
    let terms = pixel_ce_terms(logits.value(), targets);
    let mut weights = vec![T::zero(); terms.len()];
    let mut scratch = Vec::with_capacity(plane);
    for start in (0..terms.len()).step_by(plane) {
        let range = start..start + plane;
        scratch.clear();
        scratch.extend(range.clone().filter(|&i| eligible[i]).map(|i| terms[i]));
        if scratch.is_empty() {
            continue;
        }
        let k = bootstrap_count(fraction, scratch.len());
        scratch.sort_by(|a, b| b.partial_cmp(a).expect("finite logits give finite terms"));
        let cutoff = scratch[k - 1];
        for i in range {
            if eligible[i] && terms[i] >= cutoff {
                weights[i] = T::one();
            }
        }
    }
    logits.pixel_cross_entropy(targets, &weights)
}

fn check_batch<T: Scalar>(
    op: &'static str,
    logits: &Var<T>,
    dims: impl ExactSizeIterator<Item = (usize, usize)>,
) -> Result<usize> {
    let s = logits.shape();
    if s.c != 2 || s.n != dims.len() {
        return Err(Error::shape(op, format!("logits {s} for {} label maps", dims.len())));
    }
    for d in dims {
        if d != (s.w, s.h) {
            return Err(Error::shape(op, format!("logits {s}, label map {}x{}", d.0, d.1)));
        }
    }
    Ok(s.plane())
}

/// Binary entropy `H(p)` in nats.
pub fn entropy(p: f64) -> f64 {
    -(xlogy(p, p) + xlogy(1.0 - p, 1.0 - p))
}

/// Binary cross-entropy `H(p, q)` in nats, logs clamped at `ln 1e-12`.
pub fn cross_entropy(p: f64, q: f64) -> f64 {
    let floor = 1e-12f64.ln();
    -(p * q.ln().max(floor) + (1.0 - p) * (1.0 - q).ln().max(floor))
}

/// `D_KL(p ‖ q)` for Bernoulli distributions.
pub fn kl_divergence(p: f64, q: f64) -> f64 {
    xlogy(p, p) - xlogy(p, q) + xlogy(1.0 - p, 1.0 - p) - xlogy(1.0 - p, 1.0 - q)
}

/// `x · ln y` with `0 · ln 0 = 0`.
fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}
