//! Offline pretraining and one-shot teaching.
//!
//! Teaching runs the frozen teacher over the first frames of a demonstration
//! sequence, turns its output into pseudo-labels and fine-tunes a copy of the
//! student on them with a fresh Adam state. Steps cycle over the usable
//! teaching frames, frame `t mod n` at step `t`.

use std::time::Instant;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{bootstrapped_ce, masked_ce, soft_ce, LossConfig};
use crate::maps::{BinaryMask, ProbabilityMap};
use crate::pseudolabel::{make_continuous_targets, make_discrete_targets, LabelCounts, PseudoLabelConfig, TargetMode, TriMask};
use crate::segnet::{flow_batch, image_batch, Network, NetworkKind};
use crate::synthgen::SequenceBundle;
use crate::tensor::{adam_step, AdamState, Tensor, Var};

/// Learning rate used for offline training at full scale.
pub const FULL_SCALE_TRAIN_LR: f64 = 1e-6;
/// Learning rate used for online adaptation at full scale.
pub const FULL_SCALE_ADAPT_LR: f64 = 1e-5;
/// Iteration budgets used for the transformation and task experiments.
pub const TRANSFORM_ITERATIONS: usize = 15;
pub const TASK_ITERATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 4,
            learning_rate: 2e-3,
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        check_lr(self.learning_rate)?;
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationConfig {
    pub num_teach_frames: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Target mode of the run; `pseudo_label.mode` is not consulted.
    pub mode: TargetMode,
    pub pseudo_label: PseudoLabelConfig,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        AdaptationConfig {
            num_teach_frames: 2,
            iterations: TASK_ITERATIONS,
            learning_rate: 1e-3,
            mode: TargetMode::Discrete,
            pseudo_label: PseudoLabelConfig::default(),
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if self.num_teach_frames == 0 {
            return Err(Error::Config("num_teach_frames must be >= 1".into()));
        }
        check_lr(self.learning_rate)?;
        self.pseudo_label.validate()?;
        self.loss.validate()
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if lr.is_finite() && lr >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("learning rate must be finite and >= 0, got {lr}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub network: NetworkKind,
    pub samples: usize,
    /// Loss of every optimizer step in order.
    pub step_losses: Vec<f64>,
    /// Mean step loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainingLog {
    /// Trailing moving average of the epoch losses.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        (0..self.epoch_losses.len())
            .map(|i| {
                let s = &self.epoch_losses[i.saturating_sub(w - 1)..=i];
                s.iter().sum::<f64>() / s.len() as f64
            })
            .collect()
    }

    /// Whether the smoothed loss ends below where it started.
    pub fn improved(&self, window: usize) -> bool {
        let s = self.smoothed(window);
        match (s.first(), s.last()) {
            (Some(a), Some(b)) => s.len() > window && b < a,
            _ => false,
        }
    }
}

struct Sample {
    image: Tensor<f32>,
    flow: Option<Tensor<f32>>,
    mask: BinaryMask,
}

fn training_samples(kind: NetworkKind, dataset: &[SequenceBundle]) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for seq in dataset {
        seq.validate()?;
        if seq.masks.is_empty() {
            return Err(Error::format(&seq.name, "pretraining needs ground-truth masks"));
        }
        let frames = match kind {
            NetworkKind::Student => seq.len(),
            NetworkKind::Teacher => {
                if seq.flow.is_empty() {
                    return Err(Error::format(&seq.name, "teacher pretraining needs flow"));
                }
                seq.flow.len()
            }
        };
        for t in 0..frames {
            out.push(Sample {
                image: image_batch(&[&seq.frames[t]])?,
                flow: match kind {
                    NetworkKind::Teacher => Some(flow_batch(&[&seq.flow[t]])?),
                    NetworkKind::Student => None,
                },
                mask: seq.masks[t].clone(),
            });
        }
    }
    if out.is_empty() {
        return Err(Error::Usage("pretraining dataset is empty".into()));
    }
    Ok(out)
}

/// Train `network` in place on ground-truth masks with bootstrapped cross-entropy.
pub fn pretrain(network: &mut Network, dataset: &[SequenceBundle], config: &TrainConfig) -> Result<TrainingLog> {
    config.validate()?;
    let kind = network.kind();
    let samples = training_samples(kind, dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(network.params());
    let mut log = TrainingLog {
        network: kind,
        samples: samples.len(),
        step_losses: Vec::new(),
        epoch_losses: Vec::new(),
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let started = Instant::now();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for batch in order.chunks(config.batch_size) {
            let step = log.step_losses.len();
            let pick = |f: fn(&Sample) -> &Tensor<f32>| Tensor::stack(&batch.iter().map(|&i| f(&samples[i]).clone()).collect::<Vec<_>>());
            let images = pick(|s| &s.image)?;
            let flow = match kind {
                NetworkKind::Teacher => Some(pick(|s| s.flow.as_ref().expect("teacher samples carry flow"))?),
                NetworkKind::Student => None,
            };
            let masks: Vec<BinaryMask> = batch.iter().map(|&i| samples[i].mask.clone()).collect();
            let loss = train_step(network, &mut adam, config.learning_rate, &images, flow.as_ref(), |logits| {
                bootstrapped_ce(logits, &masks, config.loss.bootstrap_fraction)
            })
            .map_err(|e| diverged(e, step))?;
            log.step_losses.push(loss);
            total += loss;
            steps += 1;
        }
        let mean = total / steps as f64;
        log.epoch_losses.push(mean);
        debug!("{kind} epoch {epoch}: loss {mean:.4}");
    }
    info!(
        "{kind} pretrained on {} samples for {} epochs in {:.1}s, final loss {:.4}",
        samples.len(),
        config.epochs,
        started.elapsed().as_secs_f64(),
        log.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(log)
}

fn diverged(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Diverged { step, loss: f64::NAN },
        other => other,
    }
}

/// One forward/backward pass and Adam update; returns the loss before the update.
fn train_step(
    network: &mut Network,
    adam: &mut AdamState<f32>,
    lr: f64,
    images: &Tensor<f32>,
    flow: Option<&Tensor<f32>>,
    loss_fn: impl FnOnce(&Var<f32>) -> Result<Var<f32>>,
) -> Result<f64> {
    let params = network.param_vars::<f32>();
    let flow = flow.map(|f| Var::constant(f.clone()));
    let logits = network.logits(&params, &Var::constant(images.clone()), flow.as_ref())?;
    let loss = loss_fn(&logits)?;
    let value = loss.value().item() as f64;
    let grads = loss.backward()?;
    let grads: Vec<Tensor<f32>> = params.iter().map(|p| grads.get_or_zeros(p)).collect();
    adam_step(network.params_mut(), &grads, adam, lr as f32)?;
    Ok(value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame: usize,
    /// Why the frame produced no targets, if it was skipped.
    pub skipped: Option<String>,
    pub counts: Option<LabelCounts>,
    pub mean_target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub sequence: String,
    pub mode: TargetMode,
    pub iterations: usize,
    pub learning_rate: f64,
    pub frames: Vec<FrameReport>,
    /// Loss at every iteration, before its update.
    pub losses: Vec<f64>,
    pub wall_clock_s: f64,
}

/// Targets of one teaching frame.
pub enum Targets {
    Discrete(TriMask),
    Continuous(ProbabilityMap),
}

/// Teacher pseudo-labels for the first `num_teach_frames` frames of `seq`.
///
/// Frames without confident positives are reported as skipped.
pub fn teacher_targets(
    teacher: &Network,
    seq: &SequenceBundle,
    config: &AdaptationConfig,
) -> Result<Vec<(FrameReport, Option<Targets>)>> {
    if teacher.kind() != NetworkKind::Teacher {
        return Err(Error::Usage("teacher_targets needs a teacher network".into()));
    }
    seq.validate()?;
    if seq.flow.is_empty() {
        return Err(Error::format(&seq.name, "teaching needs flow"));
    }
    let n = config.num_teach_frames.min(seq.len());
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let flow = seq.flow_for_frame(t).expect("flow checked non-empty");
        let prob = teacher
            .predict(&image_batch(&[&seq.frames[t]])?, Some(&flow_batch(&[flow])?))?
            .remove(0);
        let human = seq.human.as_ref().map(|h| &h[t]);
        let entry = match config.mode {
            TargetMode::Discrete => match make_discrete_targets(&prob, &config.pseudo_label, human) {
                Ok(tri) => {
                    let counts = tri.counts();
                    let mean = counts.positive as f64 / tri.labels().len() as f64;
                    (report(t, None, Some(counts), mean), Some(Targets::Discrete(tri)))
                }
                Err(Error::NoConfidentPixels) => {
                    warn!("{}: frame {t} has no confident positives, skipped", seq.name);
                    (report(t, Some("no confident positive pixels"), None, 0.0), None)
                }
                Err(e) => return Err(e),
            },
            TargetMode::Continuous => {
                let soft = make_continuous_targets(&prob, human)?;
                let mean = soft.data().iter().map(|&v| v as f64).sum::<f64>() / soft.data().len() as f64;
                (report(t, None, None, mean), Some(Targets::Continuous(soft)))
            }
        };
        out.push(entry);
    }
    Ok(out)
}

fn report(frame: usize, skipped: Option<&str>, counts: Option<LabelCounts>, mean_target: f64) -> FrameReport {
    FrameReport {
        frame,
        skipped: skipped.map(str::to_string),
        counts,
        mean_target,
    }
}

/// Adapt a copy of `student` to the object demonstrated in `seq`.
///
/// The teacher is only read. Fails with [`Error::TeachFailed`] when no
/// teaching frame yields targets.
pub fn teach(
    teacher: &Network,
    student: &Network,
    seq: &SequenceBundle,
    config: &AdaptationConfig,
) -> Result<(Network, AdaptReport)> {
    config.validate()?;
    if student.kind() != NetworkKind::Student {
        return Err(Error::Usage("teach adapts a student network".into()));
    }
    let started = Instant::now();
    let labelled = teacher_targets(teacher, seq, config)?;
    let mut frames = Vec::new();
    let mut usable = Vec::new();
    for (rep, targets) in labelled {
        if let Some(t) = targets {
            usable.push((image_batch(&[&seq.frames[rep.frame]])?, t));
        }
        frames.push(rep);
    }
    if usable.is_empty() {
        return Err(Error::TeachFailed(format!(
            "none of the first {} frames of `{}` gave confident positives",
            frames.len(),
            seq.name
        )));
    }
    let mut adapted = student.clone();
    let mut adam = AdamState::new(adapted.params());
    let fraction = config.loss.bootstrap_fraction;
    let mut losses = Vec::with_capacity(config.iterations);
    for step in 0..config.iterations {
        let (image, targets) = &usable[step % usable.len()];
        let loss = train_step(&mut adapted, &mut adam, config.learning_rate, image, None, |logits| match targets {
            Targets::Discrete(tri) => masked_ce(logits, std::slice::from_ref(tri), fraction),
            Targets::Continuous(p) => soft_ce(logits, std::slice::from_ref(p)),
        })
        .map_err(|e| diverged(e, step))?;
        losses.push(loss);
    }
    let wall = started.elapsed().as_secs_f64();
    info!(
        "taught on `{}` ({} mode, {} frames, {} iterations) in {wall:.2}s",
        seq.name,
        config.mode,
        usable.len(),
        config.iterations
    );
    Ok((
        adapted,
        AdaptReport {
            sequence: seq.name.clone(),
            mode: config.mode,
            iterations: config.iterations,
            learning_rate: config.learning_rate,
            frames,
            losses,
            wall_clock_s: wall,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segnet::NetworkConfig;
    use crate::synthgen::{generate_sequence, BackgroundSpec, Pattern, SceneSpec, SpriteShape, SpriteSpec, Texture, Trajectory};

    fn tiny_net() -> NetworkConfig {
        NetworkConfig {
            student_blocks: 2,
            teacher_stream_blocks: 1,
            teacher_fused_blocks: 1,
            base_channels: 8,
            dilation_schedule: vec![1, 2],
            input_resolution: (32, 32),
        }
    }

    fn sequence(traj: Trajectory, length: usize) -> SequenceBundle {
        let scene = SceneSpec {
            width: 32,
            height: 32,
            background: BackgroundSpec { cell: 8, clutter: 2 },
            sprites: vec![SpriteSpec {
                shape: SpriteShape::Disk,
                texture: Texture::from_hue(Pattern::Checker, 120.0, 0.4),
                size: 6.0,
                center: [12.0, 14.0],
                angle_deg: 0.0,
                trajectory: traj,
                foreground: true,
            }],
            human: None,
        };
        generate_sequence("t", &scene, length, 1).unwrap()
    }

    fn bits(n: &Network) -> Vec<u8> {
        n.to_archive().to_bytes()
    }

    #[test]
    fn configs_are_validated() {
        assert!(AdaptationConfig::default().validate().is_ok());
        let zero_iters = AdaptationConfig { iterations: 0, ..Default::default() };
        assert!(matches!(zero_iters.validate(), Err(Error::Config(_))));
        assert!(AdaptationConfig { num_teach_frames: 0, ..Default::default() }.validate().is_err());
        assert!(AdaptationConfig { learning_rate: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        let json = r#"{"iterations": 15, "mode": "continuous", "bogus": 1}"#;
        assert!(serde_json::from_str::<AdaptationConfig>(json).is_err());
        let json = r#"{"iterations": 15, "mode": "continuous"}"#;
        let c: AdaptationConfig = serde_json::from_str(json).unwrap();
        assert_eq!((c.iterations, c.mode, c.num_teach_frames), (15, TargetMode::Continuous, 2));
    }

    #[test]
    fn memorizes_a_single_sample() {
        let seq = sequence(Trajectory::Static, 2);
        let one = SequenceBundle {
            frames: vec![seq.frames[0].clone()],
            masks: vec![seq.masks[0].clone()],
            flow: vec![],
            human: None,
            ..seq
        };
        let mut net = Network::student(&tiny_net(), 1).unwrap();
        let config = TrainConfig {
            epochs: 150,
            batch_size: 1,
            learning_rate: 3e-3,
            ..Default::default()
        };
        let log = pretrain(&mut net, &[one], &config).unwrap();
        assert!(*log.step_losses.last().unwrap() < 0.05, "{:?}", &log.step_losses[140..]);
        assert!(log.improved(5));
        let s = log.smoothed(5);
        assert!(s.last() < s.first());
    }

    #[test]
    fn pretraining_is_deterministic() {
        let data = [sequence(Trajectory::Translation { dx: 1.0, dy: 0.0 }, 3)];
        let config = TrainConfig {
            epochs: 3,
            batch_size: 2,
            seed: 4,
            ..Default::default()
        };
        let run = || {
            let mut t = Network::teacher(&tiny_net(), 2).unwrap();
            let log = pretrain(&mut t, &data, &config).unwrap();
            (bits(&t), log)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(la.samples, 2);
    }

    #[test]
    fn pretraining_rejects_bad_data() {
        let mut s = Network::student(&tiny_net(), 0).unwrap();
        assert!(pretrain(&mut s, &[], &TrainConfig::default()).is_err());
        let mut no_flow = sequence(Trajectory::Static, 2);
        no_flow.flow.clear();
        let mut t = Network::teacher(&tiny_net(), 0).unwrap();
        assert!(pretrain(&mut t, &[no_flow], &TrainConfig::default()).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_student_unchanged() {
        let seq = sequence(Trajectory::Translation { dx: 1.0, dy: 1.0 }, 3);
        let teacher = Network::teacher(&tiny_net(), 0).unwrap();
        let student = Network::student(&tiny_net(), 0).unwrap();
        let config = AdaptationConfig {
            iterations: 1,
            learning_rate: 0.0,
            mode: TargetMode::Continuous,
            ..Default::default()
        };
        let (adapted, rep) = teach(&teacher, &student, &seq, &config).unwrap();
        assert_eq!(bits(&adapted), bits(&student));
        assert_eq!(rep.losses.len(), 1);
    }

    #[test]
    fn teaching_touches_only_the_student_and_is_deterministic() {
        let seq = sequence(Trajectory::Translation { dx: 1.0, dy: 1.0 }, 3);
        let teacher = Network::teacher(&tiny_net(), 0).unwrap();
        let student = Network::student(&tiny_net(), 0).unwrap();
        let before = bits(&teacher);
        let config = AdaptationConfig {
            iterations: 4,
            mode: TargetMode::Continuous,
            ..Default::default()
        };
        let (a, ra) = teach(&teacher, &student, &seq, &config).unwrap();
        let (b, _) = teach(&teacher, &student, &seq, &config).unwrap();
        assert_eq!(bits(&teacher), before);
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&student));
        assert_eq!(ra.losses.len(), 4);
        assert_eq!(ra.frames.len(), 2);
        let changed: Vec<_> = a
            .to_archive()
            .records()
            .iter()
            .zip(student.to_archive().records())
            .filter(|(x, y)| x != y)
            .map(|(x, _)| x.name.clone())
            .collect();
        assert!(!changed.is_empty() && changed.iter().all(|n| n.starts_with("student.")));
    }

    #[test]
    fn unconfident_teacher_fails_to_teach() {
        let seq = sequence(Trajectory::Translation { dx: 1.0, dy: 1.0 }, 3);
        let mut teacher = Network::teacher(&tiny_net(), 0).unwrap();
        // drive every foreground logit far below the background one
        let head = teacher.names().iter().position(|n| n == "teacher.head.bias").unwrap();
        teacher.params_mut()[head] = Tensor::new([1, 2, 1, 1], vec![20.0, -20.0]).unwrap();
        let student = Network::student(&tiny_net(), 0).unwrap();
        let err = teach(&teacher, &student, &seq, &AdaptationConfig::default()).unwrap_err();
        assert!(matches!(err, Error::TeachFailed(_)), "{err}");
        assert!(teach(&student, &student, &seq, &AdaptationConfig::default()).is_err());
    }
}
