//! `motadapt`: synthesize data, pretrain, teach, infer, evaluate and visualize.
//!
//! Exit status: 0 success, 2 usage or configuration error, 3 data error,
//! 4 numeric failure. Failures print one diagnostic line on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use motadapt::adapt::{pretrain, teach};
use motadapt::config::RunConfig;
use motadapt::flowio::{flow_to_rgb, FlowField};
use motadapt::maps::{load_rgb, overlay, save_image, BinaryMask};
use motadapt::metrics::MetricsReport;
use motadapt::pipeline::{infer_sequence, init_seed, run_experiment};
use motadapt::pseudolabel::TargetMode;
use motadapt::segnet::{flow_batch, image_batch, Network, NetworkKind};
use motadapt::synthgen::{frame_path, load_numbered, make_benchmark, write_json, Benchmark, BenchmarkOptions, SequenceBundle};
use motadapt::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(name = "motadapt", version, about = "Teacher-student motion adaptation for video object segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Net {
    Student,
    Teacher,
}

impl From<Net> for NetworkKind {
    fn from(n: Net) -> Self {
        match n {
            Net::Student => NetworkKind::Student,
            Net::Teacher => NetworkKind::Teacher,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Discrete,
    Continuous,
}

impl From<Mode> for TargetMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Discrete => TargetMode::Discrete,
            Mode::Continuous => TargetMode::Continuous,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Style {
    Davis,
    Prf,
    Miou,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic benchmark.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Frame size as WxH.
        #[arg(long, default_value = "64x64", value_parser = parse_resolution)]
        resolution: (usize, usize),
        #[arg(long, default_value_t = 8)]
        length: usize,
    },
    /// Pretrain a network on ground-truth masks.
    Pretrain {
        /// A benchmark root, a sequence directory, or a directory of sequences.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        net: Net,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adapt a student to the object moving in the first frames of a sequence.
    Teach {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        student: PathBuf,
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        pos_th: Option<f64>,
        #[arg(long)]
        neg_dt_th: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Write per-frame probability maps (PFM) and binary masks (PNG).
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "student")]
        net: Net,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `eval.threshold` of the config.
        #[arg(long)]
        threshold: Option<f32>,
    },
    /// Score predicted masks against ground truth.
    Eval {
        /// Predictions: `masks/` of one sequence, or one such directory per sequence.
        #[arg(long)]
        pred: PathBuf,
        /// Ground truth laid out like the predictions.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value = "davis")]
        style: Style,
        #[arg(long)]
        report: PathBuf,
        /// Boundary tolerance in pixels; scales with the image diagonal when absent.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Render a .flo file with the colour wheel.
    Flowviz {
        #[arg(long)]
        flo: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_mag: Option<f32>,
    },
    /// Tint the foreground of a mask over an image.
    Overlay {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain, teach in both modes and evaluate on a benchmark.
    Experiment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_resolution(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v}: {e}"));
    Ok((parse(w)?, parse(h)?))
}

/// The command and seed of a run; the effective config is echoed beside it.
#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    seed: u64,
}

/// Writes `config.json` (loadable with `--config`) and `run.json` into `dir`.
fn echo_into(dir: &Path, command: &str, seed: u64, config: &RunConfig) -> Result<()> {
    config.echo(dir)?;
    write_json(&dir.join("run.json"), &RunRecord { command, seed })
}

/// For single-file outputs the sidecars sit next to the file as `<file>.config.json` and `<file>.run.json`.
fn echo_beside(file: &Path, command: &str, seed: u64, config: &RunConfig) -> Result<()> {
    ensure_parent(file)?;
    let sidecar = |suffix: &str| {
        let mut name = file.file_name().unwrap_or_default().to_os_string();
        name.push(suffix);
        file.with_file_name(name)
    };
    write_json(&sidecar(".config.json"), config)?;
    write_json(&sidecar(".run.json"), &RunRecord { command, seed })
}

fn ensure_parent(file: &Path) -> Result<()> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn is_sequence(dir: &Path) -> bool {
    dir.join("frames").is_dir()
}

/// Sequence directories under `dir`, in name order, searched recursively.
fn sequence_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if is_sequence(dir) {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for e in entries {
        out.extend(sequence_dirs(&e)?);
    }
    Ok(out)
}

fn training_data(dir: &Path) -> Result<Vec<SequenceBundle>> {
    if dir.join("benchmark.json").exists() {
        return Ok(Benchmark::load(dir)?.pretrain);
    }
    let dirs = sequence_dirs(dir)?;
    if dirs.is_empty() {
        return Err(Error::format(dir.display().to_string(), "no sequence directories found"));
    }
    dirs.iter().map(|d| SequenceBundle::load(d)).collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            seed,
            resolution: (width, height),
            length,
        } => {
            let b = make_benchmark(&out, seed, BenchmarkOptions { width, height, length })?;
            echo_into(&out, "synth", seed, &RunConfig::default())?;
            println!(
                "wrote {} pretrain, {} teach and {} eval sequences to {}",
                b.pretrain.len(),
                b.teach.len(),
                b.eval.len(),
                out.display()
            );
        }
        Command::Pretrain { data, net, config, out } => {
            let config = RunConfig::load_or_default(config.as_deref())?;
            let kind = NetworkKind::from(net);
            let dataset = training_data(&data)?;
            let mut network = Network::new(kind, &config.network, init_seed(config.train.seed, kind))?;
            let log = pretrain(&mut network, &dataset, &config.train)?;
            ensure_parent(&out)?;
            network.save(&out)?;
            let mut log_name = out.file_name().unwrap_or_default().to_os_string();
            log_name.push(".log.json");
            write_json(&out.with_file_name(log_name), &log)?;
            echo_beside(&out, "pretrain", config.train.seed, &config)?;
            println!(
                "{kind}: {} samples, final epoch loss {:.4}, weights in {}",
                log.samples,
                log.epoch_losses.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Teach {
            teacher,
            student,
            sequence,
            config,
            mode,
            frames,
            iters,
            lr,
            pos_th,
            neg_dt_th,
            out,
            report,
        } => {
            let mut config = RunConfig::load_or_default(config.as_deref())?;
            let a = &mut config.adapt;
            if let Some(m) = mode {
                a.mode = m.into();
                a.pseudo_label.mode = a.mode;
            }
            a.num_teach_frames = frames.unwrap_or(a.num_teach_frames);
            a.iterations = iters.unwrap_or(a.iterations);
            a.learning_rate = lr.unwrap_or(a.learning_rate);
            a.pseudo_label.pos_th = pos_th.unwrap_or(a.pseudo_label.pos_th);
            a.pseudo_label.neg_dt_th = neg_dt_th.unwrap_or(a.pseudo_label.neg_dt_th);
            config.validate()?;
            let t = Network::load(NetworkKind::Teacher, &config.network, &teacher)?;
            let s = Network::load(NetworkKind::Student, &config.network, &student)?;
            let seq = SequenceBundle::load(&sequence)?;
            let (adapted, rep) = teach(&t, &s, &seq, &config.adapt)?;
            ensure_parent(&out)?;
            adapted.save(&out)?;
            ensure_parent(&report)?;
            write_json(&report, &rep)?;
            echo_beside(&out, "teach", config.adapt.seed, &config)?;
            let used = rep.frames.iter().filter(|f| f.skipped.is_none()).count();
            println!(
                "taught on {used} of {} frames, {} iterations, final loss {:.4}",
                rep.frames.len(),
                rep.iterations,
                rep.losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Infer {
            model,
            sequence,
            out,
            net,
            config,
            threshold,
        } => {
            let mut config = RunConfig::load_or_default(config.as_deref())?;
            config.eval.threshold = threshold.unwrap_or(config.eval.threshold);
            config.validate()?;
            let network = Network::load(net.into(), &config.network, &model)?;
            let seq = SequenceBundle::load(&sequence)?;
            let probs = match network.kind() {
                NetworkKind::Student => infer_sequence(&network, &seq)?,
                NetworkKind::Teacher => (0..seq.len())
                    .map(|t| {
                        let flow = seq
                            .flow_for_frame(t)
                            .ok_or_else(|| Error::format(&seq.name, "teacher inference needs flow"))?;
                        Ok(network
                            .predict(&image_batch(&[&seq.frames[t]])?, Some(&flow_batch(&[flow])?))?
                            .remove(0))
                    })
                    .collect::<Result<Vec<_>>>()?,
            };
            for sub in ["prob", "masks"] {
                let d = out.join(sub);
                std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            }
            for (t, p) in probs.iter().enumerate() {
                p.save_pfm(&frame_path(&out, "prob", t, "pfm"))?;
                p.threshold(config.eval.threshold)
                    .save_png(&frame_path(&out, "masks", t, "png"))?;
            }
            echo_into(&out, "infer", config.train.seed, &config)?;
            println!("wrote {} frames to {}", probs.len(), out.display());
        }
        Command::Eval {
            pred,
            gt,
            style,
            report,
            tolerance,
        } => {
            let rows = eval_rows(&pred, &gt)?;
            let metrics = MetricsReport::evaluate(&rows, tolerance)?;
            ensure_parent(&report)?;
            write_json(&report, &metrics)?;
            print!(
                "{}",
                match style {
                    Style::Davis => metrics.davis_table(),
                    Style::Prf => metrics.prf_table(),
                    Style::Miou => metrics.miou_table(),
                }
            );
        }
        Command::Flowviz { flo, out, max_mag } => {
            let img = flow_to_rgb(&FlowField::load(&flo)?, max_mag)?;
            ensure_parent(&out)?;
            save_image(&img, &out)?;
        }
        Command::Overlay { image, mask, out } => {
            let img = overlay(&load_rgb(&image)?, &BinaryMask::load_png(&mask)?)?;
            ensure_parent(&out)?;
            save_image(&img, &out)?;
        }
        Command::Experiment { data, config, out } => {
            let config = RunConfig::load_or_default(config.as_deref())?;
            let bench = Benchmark::load(&data)?;
            let run = run_experiment(&bench, &config)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            run.pretrained.teacher.save(&out.join("teacher.madw"))?;
            run.pretrained.student.save(&out.join("student.madw"))?;
            for (m, students) in run.report.modes.iter().zip(&run.adapted) {
                for (t, s) in m.targets.iter().zip(students) {
                    s.save(&out.join(format!("adapted_{}_{}.madw", m.mode, t.target)))?;
                }
            }
            write_json(&out.join("report.json"), &run.report)?;
            echo_into(&out, "experiment", config.train.seed, &config)?;
            print!("{}", run.report.summary());
        }
    }
    Ok(())
}

/// Pairs each ground-truth sequence with the predictions at the same relative path.
fn eval_rows(pred: &Path, gt: &Path) -> Result<Vec<(String, Vec<BinaryMask>, Vec<BinaryMask>)>> {
    let load = |dir: &Path| -> Result<Vec<BinaryMask>> {
        let masks = load_numbered(dir, "masks", "png", BinaryMask::load_png)?;
        if masks.is_empty() {
            return Err(Error::format(dir.display().to_string(), "no masks/0000.png"));
        }
        Ok(masks)
    };
    let mut rows = Vec::new();
    let gt_dirs: Vec<PathBuf> = if gt.join("masks").is_dir() {
        vec![gt.to_path_buf()]
    } else {
        sequence_dirs(gt)?
    };
    if gt_dirs.is_empty() {
        return Err(Error::format(gt.display().to_string(), "no ground-truth sequences found"));
    }
    for g in gt_dirs {
        let rel = g.strip_prefix(gt).unwrap_or(Path::new(""));
        let p = pred.join(rel);
        let name = if rel.as_os_str().is_empty() {
            g.file_name().map_or_else(|| "sequence".into(), |n| n.to_string_lossy().into_owned())
        } else {
            rel.to_string_lossy().into_owned()
        };
        rows.push((name, load(&p)?, load(&g)?));
    }
    Ok(rows)
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {
            info!("done");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("motadapt: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
