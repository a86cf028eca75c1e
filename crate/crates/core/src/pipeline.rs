//! End-to-end experiment on a synthetic benchmark.
//!
//! Pretrain both networks, teach one student per target in each target mode,
//! then score the unadapted and adapted students on the evaluation sequences.

use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::adapt::{pretrain, teach, AdaptReport, TrainingLog};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::maps::{BinaryMask, ProbabilityMap};
use crate::metrics::MetricsReport;
use crate::pseudolabel::TargetMode;
use crate::segnet::{image_batch, Network, NetworkKind};
use crate::synthgen::{Benchmark, SequenceBundle, Transform};

/// Initialization seeds are derived from the training seed so one seed fixes a run.
pub fn init_seed(train_seed: u64, kind: NetworkKind) -> u64 {
    let salt = match kind {
        NetworkKind::Student => 0x5354_5544,
        NetworkKind::Teacher => 0x5445_4143,
    };
    train_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt
}

pub struct Pretrained {
    pub teacher: Network,
    pub student: Network,
    pub teacher_log: TrainingLog,
    pub student_log: TrainingLog,
}

/// Pretrain a fresh teacher and student on the benchmark's pretraining split.
pub fn pretrain_pair(bench: &Benchmark, config: &RunConfig) -> Result<Pretrained> {
    let mut teacher = Network::new(NetworkKind::Teacher, &config.network, init_seed(config.train.seed, NetworkKind::Teacher))?;
    let teacher_log = pretrain(&mut teacher, &bench.pretrain, &config.train)?;
    let mut student = Network::new(NetworkKind::Student, &config.network, init_seed(config.train.seed, NetworkKind::Student))?;
    let student_log = pretrain(&mut student, &bench.pretrain, &config.train)?;
    Ok(Pretrained {
        teacher,
        student,
        teacher_log,
        student_log,
    })
}

/// Per-frame foreground probabilities of an appearance-only network.
pub fn infer_sequence(student: &Network, seq: &SequenceBundle) -> Result<Vec<ProbabilityMap>> {
    seq.frames
        .iter()
        .map(|f| Ok(student.predict(&image_batch(&[f])?, None)?.remove(0)))
        .collect()
}

/// Metrics of `student` over `seqs`, thresholding at the configured level.
pub fn evaluate_student(student: &Network, seqs: &[&SequenceBundle], config: &RunConfig) -> Result<MetricsReport> {
    let mut rows = Vec::with_capacity(seqs.len());
    for seq in seqs {
        if seq.masks.len() != seq.len() {
            return Err(Error::format(&seq.name, "evaluation needs a mask for every frame"));
        }
        let preds: Vec<BinaryMask> = infer_sequence(student, seq)?
            .iter()
            .map(|p| p.threshold(config.eval.threshold))
            .collect();
        rows.push((seq.name.clone(), preds, seq.masks.clone()));
    }
    MetricsReport::evaluate(&rows, config.eval.boundary_tolerance)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivityFrame {
    pub frame: usize,
    pub target_mean: f64,
    pub lookalike_mean: f64,
}

/// Mean foreground probability over the target and the lookalike in every frame.
pub fn selectivity(
    student: &Network,
    seq: &SequenceBundle,
    target_sprite: usize,
    lookalike_sprite: usize,
) -> Result<Vec<SelectivityFrame>> {
    let probs = infer_sequence(student, seq)?;
    let target = seq.sprite_masks(target_sprite)?;
    let lookalike = seq.sprite_masks(lookalike_sprite)?;
    let mean = |p: &ProbabilityMap, m: &BinaryMask| {
        p.mean_over(m)
            .ok_or_else(|| Error::format(&seq.name, "sprite is not visible"))
    };
    probs
        .iter()
        .enumerate()
        .map(|(t, p)| {
            Ok(SelectivityFrame {
                frame: t,
                target_mean: mean(p, &target[t])?,
                lookalike_mean: mean(p, &lookalike[t])?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetResult {
    pub target: usize,
    pub teach_sequence: String,
    pub report: AdaptReport,
    /// Scores of the adapted student on this target's evaluation sequences.
    pub adapted: MetricsReport,
    /// Scores of the unadapted student on the same sequences.
    pub baseline: MetricsReport,
    pub selectivity: Vec<SelectivityFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: TargetMode,
    pub targets: Vec<TargetResult>,
    /// Mean over targets of the adapted mIoU.
    pub adapted_miou: f64,
    pub baseline_miou: f64,
}

impl ModeResult {
    pub fn gain(&self) -> f64 {
        self.adapted_miou - self.baseline_miou
    }

    /// Fraction of static-scene frames where the target outscores the lookalike.
    pub fn selectivity_rate(&self) -> f64 {
        let frames: Vec<_> = self.targets.iter().flat_map(|t| &t.selectivity).collect();
        let wins = frames.iter().filter(|f| f.target_mean > f.lookalike_mean).count();
        wins as f64 / frames.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: RunConfig,
    pub benchmark_seed: u64,
    pub teacher_log: TrainingLog,
    pub student_log: TrainingLog,
    pub modes: Vec<ModeResult>,
}

impl ExperimentReport {
    pub fn mode(&self, mode: TargetMode) -> Option<&ModeResult> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn summary(&self) -> String {
        let mut out = format!("{:<12}{:>10}{:>10}{:>8}{:>12}\n", "mode", "baseline", "adapted", "gain", "selective");
        for m in &self.modes {
            out.push_str(&format!(
                "{:<12}{:>10.1}{:>10.1}{:>8.1}{:>11.0}%\n",
                m.mode.to_string(),
                100.0 * m.baseline_miou,
                100.0 * m.adapted_miou,
                100.0 * m.gain(),
                100.0 * m.selectivity_rate()
            ));
        }
        out
    }
}

/// Teach the pretrained student once per target in `mode` and score it.
///
/// Returns the adapted students in teaching-sequence order beside the scores.
pub fn run_mode(bench: &Benchmark, nets: &Pretrained, config: &RunConfig, mode: TargetMode) -> Result<(ModeResult, Vec<Network>)> {
    let mut adapt = config.adapt.clone();
    adapt.mode = mode;
    let mut targets = Vec::new();
    let mut students = Vec::new();
    for (k, (entry, seq)) in bench.index.teach.iter().zip(&bench.teach).enumerate() {
        let (student, report) = teach(&nets.teacher, &nets.student, seq, &adapt)?;
        let evals: Vec<_> = bench.eval_for(k).collect();
        let seqs: Vec<&SequenceBundle> = evals.iter().map(|(_, s)| *s).collect();
        let adapted = evaluate_student(&student, &seqs, config)?;
        let baseline = evaluate_student(&nets.student, &seqs, config)?;
        let mut sel = Vec::new();
        for (e, s) in evals.iter().filter(|(e, _)| e.transform == Transform::Static) {
            if let Some(l) = e.lookalike_sprite {
                sel.extend(selectivity(&student, s, e.target_sprite, l)?);
            }
        }
        info!(
            "{mode} target {k}: mIoU {:.3} -> {:.3}",
            baseline.aggregate.miou, adapted.aggregate.miou
        );
        targets.push(TargetResult {
            target: entry.target,
            teach_sequence: seq.name.clone(),
            report,
            adapted,
            baseline,
            selectivity: sel,
        });
        students.push(student);
    }
    if targets.is_empty() {
        return Err(Error::Usage("benchmark has no teaching sequences".into()));
    }
    let mean = |f: fn(&TargetResult) -> f64| targets.iter().map(f).sum::<f64>() / targets.len() as f64;
    let result = ModeResult {
        mode,
        adapted_miou: mean(|t| t.adapted.aggregate.miou),
        baseline_miou: mean(|t| t.baseline.aggregate.miou),
        targets,
    };
    Ok((result, students))
}

/// Everything a run produces: the report and every trained network.
pub struct Experiment {
    pub report: ExperimentReport,
    pub pretrained: Pretrained,
    /// Adapted students per mode, in the order of `report.modes`.
    pub adapted: Vec<Vec<Network>>,
}

/// The whole experiment: pretraining, then teaching in both target modes.
pub fn run_experiment(bench: &Benchmark, config: &RunConfig) -> Result<Experiment> {
    config.validate()?;
    let started = Instant::now();
    let nets = pretrain_pair(bench, config)?;
    info!("pretraining took {:.1}s", started.elapsed().as_secs_f64());
    let (modes, adapted) = [TargetMode::Discrete, TargetMode::Continuous]
        .into_iter()
        .map(|m| run_mode(bench, &nets, config, m))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let report = ExperimentReport {
        config: config.clone(),
        benchmark_seed: bench.index.seed,
        teacher_log: nets.teacher_log.clone(),
        student_log: nets.student_log.clone(),
        modes,
    };
    Ok(Experiment {
        report,
        pretrained: nets,
        adapted,
    })
}
