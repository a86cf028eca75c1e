//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#[path = "support/oracles.rs"]
mod oracles;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use motadapt::config::RunConfig;
use motadapt::flowio::{flow_to_rgb, FlowField};
use motadapt::losses::{bootstrapped_ce, entropy, kl_divergence, masked_ce, soft_ce};
use motadapt::maps::{BinaryMask, ProbabilityMap};
use motadapt::metrics::{boundary_f, default_tolerance, region_j};
use motadapt::pipeline::{run_experiment, Experiment};
use motadapt::pseudolabel::{distance_transform, make_discrete_targets, Label, PseudoLabelConfig, TargetMode, TriMask};
use motadapt::segnet::{Network, NetworkConfig, NetworkKind, WeightArchive};
use motadapt::synthgen::{build_benchmark, BenchmarkOptions};
use motadapt::tensor::gradcheck::check_gradients;
use motadapt::tensor::{ConvParams, Tensor, Var};
use motadapt::Result;

const BENCHMARK_SEED: u64 = 0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn criterion(id: usize, name: &str, f: impl FnOnce() -> Result<Outcome>) -> bool {
    let started = Instant::now();
    let (pass, detail) = match f() {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "{} {id:>2} {name}: {detail} [{:.1}s]",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    pass
}

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0xacce_0000 + tag)
}

fn random_tensor(rng: &mut impl Rng, dims: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero so relu has no kink within the probe step.
fn off_kink(rng: &mut impl Rng, dims: [usize; 4]) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn random_mask(rng: &mut impl Rng, w: usize, h: usize, density: f64) -> BinaryMask {
    BinaryMask::from_fn(w, h, |_, _| rng.random_bool(density))
}

/// A mask of a few random rectangles, closer to segmentation output than noise.
fn blob_mask(rng: &mut impl Rng, w: usize, h: usize) -> BinaryMask {
    let rects: Vec<_> = (0..rng.random_range(0..4))
        .map(|_| {
            let (x0, y0) = (rng.random_range(0..w), rng.random_range(0..h));
            (x0, y0, x0 + rng.random_range(1..=w / 2 + 1), y0 + rng.random_range(1..=h / 2 + 1))
        })
        .collect();
    BinaryMask::from_fn(w, h, |x, y| rects.iter().any(|&(a, b, c, d)| x >= a && x < c && y >= b && y < d))
}

fn weighted_sum(v: &Var<f64>, rng: &mut impl Rng) -> Result<Var<f64>> {
    let coeff = random_tensor(rng, v.shape().dims(), -1.0, 1.0);
    v.mul(&Var::constant(coeff))?.sum()
}

fn gradient_suite() -> Result<Outcome> {
    let mut r = rng(1);
    let step = 1e-6;
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, err: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(e) => e.1 = e.1.max(err),
        None => worst.push((name, err)),
    };
    for _ in 0..6 {
        let dims = [r.random_range(1..3), r.random_range(1..4), r.random_range(2..6), r.random_range(2..6)];
        let a = random_tensor(&mut r, dims, -1.0, 1.0);
        let b = random_tensor(&mut r, dims, -1.0, 1.0);
        let c1 = random_tensor(&mut r, dims, -1.0, 1.0);
        let c2 = c1.clone();
        record("add", check_gradients(&[a.clone(), b.clone()], step, |v| v[0].add(&v[1])?.mul(&Var::constant(c1.clone()))?.sum())?.max_relative_error());
        record("mul", check_gradients(&[a.clone(), b.clone()], step, |v| v[0].mul(&v[1])?.mul(&Var::constant(c2.clone()))?.sum())?.max_relative_error());
        let k = off_kink(&mut r, dims);
        let c3 = random_tensor(&mut r, dims, -1.0, 1.0);
        record("relu", check_gradients(&[k], step, |v| v[0].relu()?.mul(&Var::constant(c3.clone()))?.sum())?.max_relative_error());
        let c4 = random_tensor(&mut r, dims, -1.0, 1.0);
        record("softmax", check_gradients(&[a.clone()], step, |v| v[0].softmax_channels()?.mul(&Var::constant(c4.clone()))?.sum())?.max_relative_error());
        let s = r.random_range(-2.0..2.0);
        record("scale+sum", check_gradients(&[a.clone()], step, |v| v[0].scale(s)?.mul(&Var::constant(c4.clone()))?.sum())?.max_relative_error());
        record("mean", check_gradients(&[a.clone()], step, |v| v[0].mul(&v[0])?.mean())?.max_relative_error());

        let factor = [1, 2, 4][r.random_range(0..3)];
        let up_dims = [dims[0], dims[1], dims[2] * factor, dims[3] * factor];
        let c5 = random_tensor(&mut r, up_dims, -1.0, 1.0);
        record("upsample", check_gradients(&[a.clone()], step, |v| v[0].upsample_bilinear(factor)?.mul(&Var::constant(c5.clone()))?.sum())?.max_relative_error());

        let p = ConvParams::new(r.random_range(1..3), r.random_range(1..3), r.random_range(0..3));
        let (cin, cout, kh) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..4));
        let n = r.random_range(1..3);
        let x = random_tensor(&mut r, [n, cin, 7, 8], -1.0, 1.0);
        let w = random_tensor(&mut r, [cout, cin, kh, kh], -1.0, 1.0);
        let bias = random_tensor(&mut r, [1, cout, 1, 1], -1.0, 1.0);
        let seed: u64 = r.random();
        record(
            "conv2d",
            check_gradients(&[x, w, bias], step, |v| {
                let y = v[0].conv2d(&v[1], Some(&v[2]), p)?;
                weighted_sum(&y, &mut ChaCha8Rng::seed_from_u64(seed))
            })?
            .max_relative_error(),
        );

        let (n, h, wd) = (r.random_range(1..3), r.random_range(2..6), r.random_range(2..6));
        let logits = random_tensor(&mut r, [n, 2, h, wd], -3.0, 3.0);
        let targets: Vec<f64> = (0..n * h * wd).map(|_| r.random_range(0.0..1.0)).collect();
        let weights: Vec<f64> = (0..n * h * wd).map(|_| r.random_range(0.0..2.0)).collect();
        record("pixel_cross_entropy", check_gradients(&[logits.clone()], step, |v| v[0].pixel_cross_entropy(&targets, &weights))?.max_relative_error());

        let labels: Vec<BinaryMask> = (0..n).map(|_| random_mask(&mut r, wd, h, 0.4)).collect();
        record("bootstrapped_ce", check_gradients(&[logits.clone()], step, |v| bootstrapped_ce(&v[0], &labels, 0.5))?.max_relative_error());
        let tris: Vec<TriMask> = (0..n)
            .map(|_| {
                let labels = (0..h * wd)
                    .map(|i| [Label::Positive, Label::Negative, Label::Ignore][(i + r.random_range(0..3)) % 3])
                    .collect();
                TriMask::new(wd, h, labels).unwrap()
            })
            .collect();
        if tris.iter().any(|t| t.counts().ignore < h * wd) {
            record("masked_ce", check_gradients(&[logits.clone()], step, |v| masked_ce(&v[0], &tris, 0.5))?.max_relative_error());
        }
        let soft: Vec<ProbabilityMap> = (0..n)
            .map(|_| ProbabilityMap::new(wd, h, (0..h * wd).map(|_| r.random_range(0.0f32..=1.0)).collect()).unwrap())
            .collect();
        record("soft_ce", check_gradients(&[logits], step, |v| soft_ce(&v[0], &soft))?.max_relative_error());
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let (name, _) = worst.iter().copied().fold(("", -1.0), |a, b| if b.1 > a.1 { b } else { a });
    outcome(max < 1e-4, format!("{} ops, max relative error {max:.2e} ({name}), bound 1e-4", worst.len()))
}

fn oracle_equivalence() -> Result<Outcome> {
    let mut r = rng(2);
    const N: usize = 200;
    let (mut dt_err, mut conv_err, mut j_err, mut f_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..N {
        let (w, h) = (r.random_range(1..=32), r.random_range(1..=32));
        let density = r.random_range(0.01..0.5);
        let mut m = random_mask(&mut r, w, h, density);
        m.set(r.random_range(0..w), r.random_range(0..h), true);
        let fast = distance_transform(&m)?;
        let slow = oracles::distance_all_pairs(m.data(), w, h);
        if fast.data().len() != w * h || slow.len() != w * h {
            return outcome(false, format!("distance map sizes {} and {} for {w}x{h}", fast.data().len(), slow.len()));
        }
        for (a, b) in fast.data().iter().zip(&slow) {
            dt_err = dt_err.max((a - b).abs());
        }

        let p = ConvParams::new(r.random_range(1..3), r.random_range(1..3), r.random_range(0..3));
        let (cin, cout, kh, kw) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..4), r.random_range(1..4));
        let (ih, iw) = (r.random_range(6..=32), r.random_range(6..=32));
        let n = r.random_range(1..3);
        let x = random_tensor(&mut r, [n, cin, ih, iw], -1.0, 1.0);
        let k = random_tensor(&mut r, [cout, cin, kh, kw], -1.0, 1.0);
        let b = random_tensor(&mut r, [1, cout, 1, 1], -1.0, 1.0);
        let y = Var::constant(x.clone()).conv2d(&Var::constant(k.clone()), Some(&Var::constant(b.clone())), p)?;
        let (want, dims) = oracles::conv2d(x.data(), x.shape().dims(), k.data(), k.shape().dims(), b.data(), p.stride, p.dilation, p.padding);
        if y.shape().dims() != dims || want.len() != y.value().data().len() || want.is_empty() {
            return outcome(false, format!("conv2d output {:?} vs oracle {dims:?}", y.shape().dims()));
        }
        for (a, b) in y.value().data().iter().zip(&want) {
            conv_err = conv_err.max((a - b).abs());
        }

        let (pred, gt) = (blob_mask(&mut r, w, h), blob_mask(&mut r, w, h));
        j_err = j_err.max((region_j(&pred, &gt)? - oracles::iou(pred.data(), gt.data())).abs());
        let tol = if r.random_bool(0.5) { default_tolerance(w, h) } else { r.random_range(0.0..4.0) };
        let want = oracles::boundary_f(pred.data(), gt.data(), w, h, tol);
        f_err = f_err.max((boundary_f(&pred, &gt, tol)? - want).abs());
    }
    let pass = dt_err <= 1e-9 && conv_err <= 1e-6 && j_err <= 1e-6 && f_err <= 1e-6;
    outcome(
        pass,
        format!("{N} instances each; max abs error dt {dt_err:.1e}, conv2d {conv_err:.1e}, J {j_err:.1e}, F {f_err:.1e}"),
    )
}

fn entropy_identity() -> Result<Outcome> {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let p: f32 = match i % 10 {
            0 => 0.0,
            1 => 1.0,
            _ => r.random_range(0.0..=1.0),
        };
        let (l0, l1): (f64, f64) = (r.random_range(-6.0..6.0), r.random_range(-6.0..6.0));
        let logits = Var::constant(Tensor::new([1, 2, 1, 1], vec![l0, l1])?);
        let h = soft_ce(&logits, &[ProbabilityMap::new(1, 1, vec![p])?])?.value().item();
        let q = 1.0 / (1.0 + (l0 - l1).exp());
        let p = p as f64;
        worst = worst.max((h - (entropy(p) + kl_divergence(p, q))).abs());
    }
    outcome(worst <= 1e-6, format!("1000 pairs, max |H(p,q) - H(p) - KL(p||q)| = {worst:.2e}"))
}

/// A smooth map: background noise below the threshold plus a few confident blobs.
fn probability_map(r: &mut impl Rng, w: usize, h: usize) -> ProbabilityMap {
    let blobs: Vec<(f64, f64, f64)> = (0..r.random_range(1..4))
        .map(|_| (r.random_range(0.0..w as f64), r.random_range(0.0..h as f64), r.random_range(0.5..3.0)))
        .collect();
    let data = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let near = blobs.iter().any(|&(bx, by, rad)| (x - bx).powi(2) + (y - by).powi(2) <= rad * rad);
            if near {
                r.random_range(0.78f32..=1.0)
            } else {
                r.random_range(0.0f32..0.85)
            }
        })
        .collect();
    ProbabilityMap::new(w, h, data).unwrap()
}

fn pseudo_label_properties() -> Result<Outcome> {
    let mut r = rng(4);
    let (mut checked, mut skipped) = (0, 0);
    let mut failures = Vec::new();
    for i in 0..500 {
        let neg = if i % 2 == 0 { 20.0 } else { 220.0 };
        // the wider band needs frames larger than the band to produce any negatives
        let (w, h) = if neg > 100.0 {
            (r.random_range(230..260), r.random_range(230..260))
        } else {
            (r.random_range(24..72), r.random_range(24..72))
        };
        let p = probability_map(&mut r, w, h);
        let human = r.random_bool(0.5).then(|| {
            let (x0, wd) = (r.random_range(0..w), r.random_range(1..w / 4));
            BinaryMask::from_fn(w, h, |x, _| x >= x0 && x < x0 + wd)
        });
        let cfg = PseudoLabelConfig {
            pos_th: 0.8,
            neg_dt_th: neg,
            mode: TargetMode::Discrete,
        };
        let t = match make_discrete_targets(&p, &cfg, human.as_ref()) {
            Ok(t) => t,
            Err(motadapt::Error::NoConfidentPixels) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        checked += 1;
        let is_human = |i: usize| human.as_ref().is_some_and(|m| m.data()[i]);
        let c = t.counts();
        if c.positive + c.negative + c.ignore != w * h {
            failures.push(format!("map {i}: partition"));
        }
        let positives: Vec<(f64, f64)> = (0..w * h)
            .filter(|&j| t.labels()[j] == Label::Positive)
            .map(|j| ((j % w) as f64, (j / w) as f64))
            .collect();
        for (j, &l) in t.labels().iter().enumerate() {
            if (l == Label::Positive) != (p.data()[j] > 0.8 && !is_human(j)) {
                failures.push(format!("map {i}: positive set at pixel {j}"));
            }
            if is_human(j) && l != Label::Ignore {
                failures.push(format!("map {i}: human pixel {j} labelled"));
            }
            if l == Label::Negative {
                let (x, y) = ((j % w) as f64, (j / w) as f64);
                if positives.iter().any(|&(px, py)| (px - x).powi(2) + (py - y).powi(2) <= neg * neg) {
                    failures.push(format!("map {i}: negative {j} within {neg}"));
                }
            }
        }
        let stricter = make_discrete_targets(&p, &PseudoLabelConfig { pos_th: 0.9, ..cfg.clone() }, human.as_ref());
        if let Ok(s) = stricter {
            if s.labels().iter().zip(t.labels()).any(|(a, b)| *a == Label::Positive && *b != Label::Positive) {
                failures.push(format!("map {i}: raising pos_th added positives"));
            }
        }
        let wider = make_discrete_targets(&p, &PseudoLabelConfig { neg_dt_th: neg * 1.25, ..cfg }, human.as_ref())?;
        if wider.labels().iter().zip(t.labels()).any(|(a, b)| *a == Label::Negative && *b != Label::Negative) {
            failures.push(format!("map {i}: widening the band added negatives"));
        }
        failures.truncate(5);
    }
    let detail = format!(
        "{checked} maps checked ({skipped} without confident pixels), pos_th 0.8, neg_dt_th {{20, 220}}; {}",
        if failures.is_empty() { "no violations".to_string() } else { failures.join("; ") }
    );
    outcome(failures.is_empty() && checked >= 450, detail)
}

fn bootstrapped_ce_checks() -> Result<Outcome> {
    let mut r = rng(5);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (n, h, w) = (r.random_range(1..4), r.random_range(1..10), r.random_range(1..10));
        let logits = random_tensor(&mut r, [n, 2, h, w], -5.0, 5.0);
        let labels: Vec<BinaryMask> = (0..n).map(|_| random_mask(&mut r, w, h, 0.5)).collect();
        let got = bootstrapped_ce(&Var::constant(logits.clone()), &labels, 1.0)?.value().item();
        let mut total = 0.0;
        for (b, m) in labels.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let (l0, l1) = (logits.at(b, 0, y, x), logits.at(b, 1, y, x));
                    let lse = l0.max(l1) + ((l0 - l0.max(l1)).exp() + (l1 - l0.max(l1)).exp()).ln();
                    total += lse - if m.get(x, y) { l1 } else { l0 };
                }
            }
        }
        worst = worst.max((got - total / (n * h * w) as f64).abs());
    }
    let q = [0.1f64, 0.9, 0.3, 0.7];
    let logits = Tensor::new([1, 2, 1, 4], [vec![0.0; 4], q.iter().map(|q| (q / (1.0 - q)).ln()).collect()].concat())?;
    let fg = BinaryMask::new(4, 1, vec![true; 4])?;
    let half = bootstrapped_ce(&Var::constant(logits), &[fg], 0.5)?.value().item();
    let want = -(0.1f64.ln() + 0.3f64.ln()) / 2.0;
    let hand = (half - want).abs();
    outcome(
        worst <= 1e-6 && hand <= 1e-12,
        format!("fraction 1.0 vs mean CE max error {worst:.1e} on 50 batches; 4-pixel hardest half {half:.12} vs {want:.12}"),
    )
}

fn end_to_end(run: &Experiment, elapsed: Duration) -> Result<Outcome> {
    let d = run.report.mode(TargetMode::Discrete).expect("discrete mode ran");
    let c = run.report.mode(TargetMode::Continuous).expect("continuous mode ran");
    let gain = 100.0 * d.gain();
    let margin = 100.0 * (d.adapted_miou - c.adapted_miou);
    let minutes = elapsed.as_secs_f64() / 60.0;
    outcome(
        gain >= 15.0 && margin >= -5.0 && minutes < 15.0,
        format!(
            "baseline mIoU {:.1}, discrete {:.1} (gain {gain:+.1}, need >= 15), continuous {:.1} (discrete - continuous {margin:+.1}, need >= -5), {minutes:.1} min",
            100.0 * d.baseline_miou,
            100.0 * d.adapted_miou,
            100.0 * c.adapted_miou
        ),
    )
}

fn motion_selectivity(run: &Experiment) -> Result<Outcome> {
    let d = run.report.mode(TargetMode::Discrete).expect("discrete mode ran");
    let frames: usize = d.targets.iter().map(|t| t.selectivity.len()).sum();
    let rate = d.selectivity_rate();
    let means: Vec<String> = d
        .targets
        .iter()
        .map(|t| {
            let n = t.selectivity.len().max(1) as f64;
            let tm = t.selectivity.iter().map(|f| f.target_mean).sum::<f64>() / n;
            let lm = t.selectivity.iter().map(|f| f.lookalike_mean).sum::<f64>() / n;
            format!("target {}: {tm:.2} vs {lm:.2}", t.target)
        })
        .collect();
    outcome(
        frames > 0 && rate >= 0.8,
        format!("taught sprite above lookalike in {:.0}% of {frames} frames (need >= 80%); {}", 100.0 * rate, means.join(", ")),
    )
}

fn efficiency() -> Result<Outcome> {
    let config = NetworkConfig::default();
    let student = Network::new(NetworkKind::Student, &config, 1)?;
    let teacher = Network::new(NetworkKind::Teacher, &config, 2)?;
    let (h, w) = config.input_resolution;
    let mut r = rng(8);
    let image = Tensor::from_fn([1, 3, h, w], |_| r.random_range(0.0f32..1.0));
    let flow = Tensor::from_fn([1, 3, h, w], |_| r.random_range(0.0f32..1.0));
    let time = |f: &dyn Fn() -> Result<()>| -> Result<f64> {
        f()?;
        let mut runs = Vec::new();
        for _ in 0..15 {
            let t = Instant::now();
            f()?;
            runs.push(t.elapsed().as_secs_f64());
        }
        runs.sort_by(f64::total_cmp);
        Ok(runs[runs.len() / 2])
    };
    let ts = time(&|| student.predict(&image, None).map(drop))?;
    let tt = time(&|| teacher.predict(&image, Some(&flow)).map(drop))?;
    outcome(
        ts < tt,
        format!(
            "median forward {:.2} ms student vs {:.2} ms teacher ({:.2}x); MACs {} vs {}",
            1e3 * ts,
            1e3 * tt,
            tt / ts,
            student.macs(),
            teacher.macs()
        ),
    )
}

fn archives(run: &Experiment) -> Vec<Vec<u8>> {
    let p = &run.pretrained;
    [&p.teacher, &p.student]
        .into_iter()
        .chain(run.adapted.iter().flatten())
        .map(|n| n.to_archive().to_bytes())
        .collect()
}

fn metric_reports(run: &Experiment) -> Vec<String> {
    run.report
        .modes
        .iter()
        .flat_map(|m| &m.targets)
        .flat_map(|t| [&t.adapted, &t.baseline])
        .map(|r| serde_json::to_string(r).expect("report serializes"))
        .collect()
}

fn determinism(first: &Experiment, second: &Experiment) -> Result<Outcome> {
    let (a, b) = (archives(first), archives(second));
    let (ma, mb) = (metric_reports(first), metric_reports(second));
    let same_losses = first.report.teacher_log == second.report.teacher_log && first.report.student_log == second.report.student_log;
    let same_archives = a == b;
    let same_metrics = ma == mb;
    outcome(
        same_archives && same_metrics && same_losses,
        format!(
            "{} weight archives ({} bytes) {}, {} metric reports {}, training logs {}",
            a.len(),
            a.iter().map(Vec::len).sum::<usize>(),
            if same_archives { "identical" } else { "DIFFER" },
            ma.len(),
            if same_metrics { "identical" } else { "DIFFER" },
            if same_losses { "identical" } else { "DIFFER" }
        ),
    )
}

fn formats() -> Result<Outcome> {
    let mut r = rng(10);
    let mut problems = Vec::new();
    for i in 0..20 {
        let (w, h) = (r.random_range(1..40), r.random_range(1..40));
        let mut data: Vec<[f32; 2]> = (0..w * h).map(|_| [r.random_range(-50.0..50.0), r.random_range(-50.0..50.0)]).collect();
        data[0] = [-0.0, f32::MIN_POSITIVE / 2.0];
        let f = FlowField::new(w, h, data)?;
        let mut bytes = Vec::new();
        f.write_flo(&mut bytes).expect("in-memory write");
        let back = FlowField::from_flo_bytes(&bytes)?;
        let mut again = Vec::new();
        back.write_flo(&mut again).expect("in-memory write");
        let bitwise = f.data().iter().zip(back.data()).all(|(a, b)| a[0].to_bits() == b[0].to_bits() && a[1].to_bits() == b[1].to_bits());
        if !bitwise || bytes != again {
            problems.push(format!("flo {i}"));
        }
    }
    let student = Network::new(NetworkKind::Student, &NetworkConfig::default(), 3)?;
    let bytes = student.to_archive().to_bytes();
    let back = Network::from_archive(NetworkKind::Student, &NetworkConfig::default(), &WeightArchive::from_bytes(&bytes)?)?;
    let params_equal = student
        .params()
        .iter()
        .zip(back.params())
        .all(|(a, b)| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    if !params_equal || back.to_archive().to_bytes() != bytes {
        problems.push("weight archive".into());
    }
    let white = flow_to_rgb(&FlowField::zeros(17, 9), None)?.pixels().all(|p| p.0 == [255, 255, 255]);
    if !white {
        problems.push("zero flow not white".into());
    }
    let dir = tempfile::tempdir().expect("temp dir");
    let labels: Vec<Label> = (0..30).map(|i| [Label::Positive, Label::Negative, Label::Ignore][i % 3]).collect();
    let tri = TriMask::new(6, 5, labels)?;
    let path = dir.path().join("tri.png");
    tri.save_png(&path)?;
    if TriMask::load_png(&path)? != tri {
        problems.push("trimask png".into());
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!("20 .flo fields and a {}-byte archive round-trip bitwise; zero flow renders white; trimask PNG keeps all three labels", bytes.len())
        } else {
            format!("failed: {}", problems.join(", "))
        },
    )
}

fn main() {
    let mut results = vec![
        criterion(1, "gradient suite", gradient_suite),
        criterion(2, "oracle equivalence", oracle_equivalence),
        criterion(3, "cross-entropy decomposition", entropy_identity),
        criterion(4, "pseudo-label properties", pseudo_label_properties),
        criterion(5, "bootstrapped cross-entropy", bootstrapped_ce_checks),
    ];

    let config = RunConfig::default();
    let experiment = || -> Result<(Experiment, Duration)> {
        let started = Instant::now();
        let bench = build_benchmark(BENCHMARK_SEED, BenchmarkOptions::default())?;
        let run = run_experiment(&bench, &config)?;
        Ok((run, started.elapsed()))
    };
    match experiment() {
        Ok((first, elapsed)) => {
            results.push(criterion(6, "end-to-end desk benchmark", || end_to_end(&first, elapsed)));
            results.push(criterion(7, "motion selectivity", || motion_selectivity(&first)));
            results.push(criterion(8, "student faster than teacher", efficiency));
            results.push(criterion(9, "determinism", || {
                let (second, _) = experiment()?;
                determinism(&first, &second)
            }));
        }
        Err(e) => {
            for (id, name) in [(6, "end-to-end desk benchmark"), (7, "motion selectivity"), (9, "determinism")] {
                results.push(criterion(id, name, || outcome(false, format!("pipeline error: {e}"))));
            }
            results.push(criterion(8, "student faster than teacher", efficiency));
        }
    }
    results.push(criterion(10, "formats", formats));

    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
