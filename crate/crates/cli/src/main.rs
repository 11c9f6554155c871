use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aad_core::audio::{write_wav, SpeakerAttributes, Talker};
use aad_core::decoder::{window_sweep, write_sweep_csv, AttentionDecoderModel};
use aad_core::eval::config::{AttentionMode, ExperimentConfig};
use aad_core::eval::corpus::Split;
use aad_core::eval::decode::{decode_all, fit_baselines, summarize, sweep_trials, write_decode_csv};
use aad_core::eval::pipeline::{evaluate, n_eval_scenes, read_records, run_experiment, write_records, World};
use aad_core::eval::report::ReportTable;
use aad_core::intention::{BackendKind, Task};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "aad", about = "Intention-informed auditory scene understanding on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON experiment config; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Http,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes, clusters and neural recordings.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Also write mixture and source WAVs for this many test scenes.
        #[arg(long, default_value_t = 0)]
        wav: usize,
    },
    /// Train the attention predictor.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Decode attended labels and compare stream-selection systems.
    Decode {
        #[command(flatten)]
        common: Common,
        /// Trained predictor; trained in-process when absent.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the task battery.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Attention source; all three when absent.
        #[arg(long, value_parser = parse_mode)]
        attention: Option<AttentionMode>,
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
    },
    /// Selection accuracy against decoding window length.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Window lengths in seconds.
        #[arg(long, value_delimiter = ',')]
        windows: Option<Vec<f64>>,
    },
    /// Aggregate trial records into a CSV report.
    Report {
        /// Trial records (JSON lines).
        #[arg(long)]
        trials: PathBuf,
        #[arg(long, default_value = "report.csv")]
        out: PathBuf,
    },
    /// Train, then evaluate every configured system.
    Run {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_mode(s: &str) -> Result<AttentionMode, String> {
    AttentionMode::parse(s).map_err(|e| e.to_string())
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

fn load_config(common: &Common) -> AnyResult<ExperimentConfig> {
    let cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    fs::create_dir_all(&common.out)?;
    Ok(cfg)
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    scene_id: &'a str,
    split: Split,
    attended: Talker,
    snr_db: f64,
    attrs_a: SpeakerAttributes,
    attrs_b: SpeakerAttributes,
    transcript_a: &'a [String],
    transcript_b: &'a [String],
    voice_ids: [&'a str; 2],
    labels: [usize; 2],
    topics: [&'a str; 2],
    recording: String,
    /// Mixture and presented streams, when written.
    #[serde(skip_serializing_if = "Option::is_none")]
    wav: Option<[String; 3]>,
}

fn write_scene_wavs(world: &World, out: &Path, index: usize) -> AnyResult<[String; 3]> {
    let cs = world.scene(Split::Test, index)?;
    let sep = world.separate(&cs)?;
    let id = &cs.scene.id;
    let names =
        [format!("audio/{id}_mixture.wav"), format!("audio/{id}_stream1.wav"), format!("audio/{id}_stream2.wav")];
    for (name, signal) in names.iter().zip([&cs.scene.mix.mixture, &sep.streams[0], &sep.streams[1]]) {
        write_wav(&out.join(name), signal)?;
    }
    Ok(names)
}

fn gen(common: &Common, wav: usize) -> AnyResult<()> {
    let cfg = load_config(common)?;
    let world = World::prepare(cfg.clone())?;
    world.clusters.save(&common.out.join("clusters.json"))?;
    fs::create_dir_all(common.out.join("neural"))?;
    if wav > 0 {
        fs::create_dir_all(common.out.join("audio"))?;
    }
    let mut manifest = std::io::BufWriter::new(fs::File::create(common.out.join("manifest.jsonl"))?);
    for (split, n) in [(Split::Train, cfg.scene.n_train), (Split::Test, cfg.scene.n_test)] {
        for d in world.split_data(split, n)? {
            let recording = format!("neural/{}.iiz", d.id);
            d.recording.write_iiz(&common.out.join(&recording))?;
            let wav = if split == Split::Test && d.index < wav {
                Some(write_scene_wavs(&world, &common.out, d.index)?)
            } else {
                None
            };
            let entry = ManifestEntry {
                scene_id: &d.id,
                split,
                attended: d.attended,
                snr_db: d.snr_db,
                attrs_a: d.streams[0].attributes,
                attrs_b: d.streams[1].attributes,
                transcript_a: &d.streams[0].transcript,
                transcript_b: &d.streams[1].transcript,
                voice_ids: [&d.voices[0].id, &d.voices[1].id],
                labels: d.labels,
                topics: [&d.streams[0].topic, &d.streams[1].topic],
                recording,
                wav,
            };
            serde_json::to_writer(&mut manifest, &entry)?;
            manifest.write_all(b"\n")?;
        }
    }
    manifest.flush()?;
    println!("wrote {} train and {} test scenes to {}", cfg.scene.n_train, cfg.scene.n_test, common.out.display());
    Ok(())
}

fn train_model(world: &World, out: &Path) -> AnyResult<AttentionDecoderModel> {
    let train = world.split_data(Split::Train, world.cfg.scene.n_train)?;
    let (model, report) = world.train(&train)?;
    model.save(&out.join("model.bin"))?;
    fs::write(out.join("train_report.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "trained on {} scenes: loss {:.4} -> {:.4}, train accuracy {:.1}%",
        train.len(),
        report.initial_loss,
        report.epoch_losses.last().copied().unwrap_or(report.initial_loss),
        100.0 * report.train_accuracy
    );
    Ok(model)
}

fn model_or_train(world: &World, model: &Option<PathBuf>, out: &Path) -> AnyResult<AttentionDecoderModel> {
    match model {
        Some(p) => Ok(AttentionDecoderModel::load(p)?),
        None => train_model(world, out),
    }
}

fn decode(common: &Common, model: &Option<PathBuf>) -> AnyResult<()> {
    let cfg = load_config(common)?;
    let world = World::prepare(cfg.clone())?;
    let train = world.split_data(Split::Train, cfg.scene.n_train)?;
    let model = match model {
        Some(p) => AttentionDecoderModel::load(p)?,
        None => {
            let (m, _) = world.train(&train)?;
            m
        }
    };
    let baselines = fit_baselines(&world, &train)?;
    drop(train);
    let test = world.split_data(Split::Test, n_eval_scenes(&cfg))?;
    let trials = decode_all(&world, &model, &baselines, &test)?;
    let mut f = std::io::BufWriter::new(fs::File::create(common.out.join("decode_trials.jsonl"))?);
    for t in &trials {
        serde_json::to_writer(&mut f, t)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    let rows = summarize(&trials);
    write_decode_csv(&common.out.join("decode.csv"), &rows)?;
    for r in &rows {
        let acc = r.accuracy_pct.map(|a| format!("{a:.1}%")).unwrap_or_else(|| "-".into());
        println!(
            "{:<20} accuracy {:>6}  SI-SDR {:>7.2} dB  WER {:>6.1}",
            r.system.as_str(),
            acc,
            r.si_sdr_db,
            r.wer_pct
        );
    }
    Ok(())
}

fn eval(
    common: &Common,
    model: &Option<PathBuf>,
    attention: Option<AttentionMode>,
    backend: Option<BackendArg>,
) -> AnyResult<ExitCode> {
    let mut cfg = load_config(common)?;
    if let Some(mode) = attention {
        cfg.eval.systems = vec![mode];
    }
    if let Some(b) = backend {
        cfg.backend.kind = match b {
            BackendArg::Mock => BackendKind::Mock,
            BackendArg::Http => BackendKind::Http,
        };
    }
    let world = World::prepare(cfg.clone())?;
    let model = if cfg.eval.systems.contains(&AttentionMode::Decoded) {
        Some(model_or_train(&world, model, &common.out)?)
    } else {
        None
    };
    let test = world.split_data(Split::Test, n_eval_scenes(&cfg))?;
    let records = evaluate(&world, model.as_ref(), &test)?;
    write_records(&common.out.join("trials.jsonl"), &records)?;
    let report = ReportTable::from_records(&records);
    report.write_csv(&common.out.join("report.csv"))?;
    print_summary(&report, &cfg.eval.systems);
    finish(records.iter().filter(|r| r.failed.is_some()).count(), records.len())
}

fn print_summary(report: &ReportTable, systems: &[AttentionMode]) {
    for &s in systems {
        let get = |task: &str, target: &str, metric: &str| {
            report.get(s, task, target, metric).map(|r| format!("{:.1}", r.mean)).unwrap_or_else(|| "-".into())
        };
        println!(
            "{:<8} selection {}%  fg WER {}  fg summary ROUGE-L {}",
            s.as_str(),
            get("selection", "-", "selection_accuracy"),
            get(Task::Transcription.as_str(), "foreground", "wer"),
            get(Task::Summarization.as_str(), "foreground", "rouge_l"),
        );
    }
}

fn finish(failures: usize, total: usize) -> AnyResult<ExitCode> {
    if failures > 0 {
        eprintln!("{failures} of {total} trials failed");
        Ok(ExitCode::from(2))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

fn sweep(common: &Common, model: &Option<PathBuf>, windows: &Option<Vec<f64>>) -> AnyResult<()> {
    let mut cfg = load_config(common)?;
    if let Some(w) = windows {
        cfg.eval.windows_s = w.clone();
        cfg.validate()?;
    }
    let world = World::prepare(cfg.clone())?;
    let model = model_or_train(&world, model, &common.out)?;
    let trials = sweep_trials(&world, cfg.eval.sweep_trials)?;
    let max_s = cfg.scene.duration_s;
    let windows: Vec<f64> = cfg.eval.windows_s.iter().copied().filter(|w| *w <= max_s).collect();
    let rows = window_sweep(&model, &world.clusters, &trials, &windows)?;
    write_sweep_csv(&common.out.join("sweep.csv"), &rows)?;
    for r in &rows {
        println!("{:>5} s  {:>5.1}%  ({} trials)", r.window_s, r.accuracy_pct, r.n_trials);
    }
    Ok(())
}

fn report(trials: &Path, out: &Path) -> AnyResult<()> {
    let records = read_records(trials)?;
    let table = ReportTable::from_records(&records);
    table.write_csv(out)?;
    println!("aggregated {} records into {} rows", records.len(), table.rows.len());
    Ok(())
}

fn run(common: &Common) -> AnyResult<ExitCode> {
    let cfg = load_config(common)?;
    let outcome = run_experiment(&cfg, &common.out)?;
    print_summary(&outcome.report, &cfg.eval.systems);
    finish(outcome.failures, outcome.records.len())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen { common, wav } => gen(common, *wav).map(|_| ExitCode::SUCCESS),
        Command::Train { common, epochs, lr, seed } => load_config(common).and_then(|mut cfg| {
            if let Some(e) = epochs {
                cfg.predictor.train.epochs = *e;
            }
            if let Some(l) = lr {
                cfg.predictor.train.learning_rate = *l;
            }
            if let Some(s) = seed {
                cfg.predictor.train.seed = *s;
            }
            let world = World::prepare(cfg)?;
            train_model(&world, &common.out)?;
            Ok(ExitCode::SUCCESS)
        }),
        Command::Decode { common, model } => decode(common, model).map(|_| ExitCode::SUCCESS),
        Command::Eval { common, model, attention, backend } => eval(common, model, *attention, *backend),
        Command::Sweep { common, model, windows } => sweep(common, model, windows).map(|_| ExitCode::SUCCESS),
        Command::Report { trials, out } => report(trials, out).map(|_| ExitCode::SUCCESS),
        Command::Run { common } => run(common),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
