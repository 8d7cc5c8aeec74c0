//! The five subcommands as library functions.

use std::fs;
use std::path::{Path, PathBuf};

use mimic_core::data::{
    make_unpaired_groups, split_by_cineloop, synth_cineloop, write_cineloop, write_corpus, Corpus, CorpusEntry,
    CorpusManifest, GroundTruth, SplitManifest, CONTAINER_VERSION,
};
use mimic_core::evaluation::{
    benchmark_inference, component_distribution, corpus_test_frames, difference_image, evaluate_testset, infer_frame,
    worst_cases, write_pgm, BenchmarkReport, MetricsReport,
};
use mimic_core::metrics::{mae, mse, ssim, SsimParams};
use mimic_core::models::{Generator, GeneratorConfig};
use mimic_core::training::{
    Archive, BlackboxTrainer, CycleGanState, GrayboxTrainer, PairedData, Regime, StepRecord, TrainingHistory,
    TrainingConfig, UnpairedData, ValidationRecord,
};
use mimic_core::{Error, Image};

use crate::config::{ExperimentConfig, SynthConfig};
use crate::error::{CliError, CliResult};

pub const HISTORY_FILE: &str = "history.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const VALIDATION_FILE: &str = "validation.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const SPLIT_FILE: &str = "split.json";
pub const MODEL_FILE: &str = "model.ckpt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::at(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::at(path, e))
}

/// Seed of loop `index` in a corpus drawn from `seed`.
pub fn loop_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64)
}

pub fn loop_id(index: usize) -> String {
    format!("loop{index:04}")
}

/// Writes `count` synthetic cineloops and an oracle-ground-truth manifest.
pub fn synth(spec: &SynthConfig, count: usize, seed: u64, out: &Path) -> CliResult<CorpusManifest> {
    if count == 0 {
        return Err(CliError::Config(vec!["count must be >= 1".into()]));
    }
    spec.phantom(loop_seed(seed, 0)).validate()?;
    create_dir(out)?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let id = loop_id(i);
        write_cineloop(out, &synth_cineloop(&spec.phantom(loop_seed(seed, i)), &id)?)?;
        entries.push(CorpusEntry { raw: id, processed: None });
    }
    let manifest = CorpusManifest {
        format_version: CONTAINER_VERSION,
        ground_truth: GroundTruth::Oracle,
        entries,
    };
    write_corpus(out, &manifest)?;
    Ok(manifest)
}

fn load_corpus(dir: &Path) -> CliResult<Corpus> {
    Corpus::load(dir).map_err(|e| match e {
        Error::Io(io) => CliError::at(dir, io),
        other => other.into(),
    })
}

/// Cineloop-level split; black-box runs further divide the training loops.
pub fn make_split(config: &ExperimentConfig, corpus: &Corpus) -> CliResult<SplitManifest> {
    let split = split_by_cineloop(&corpus.ids(), config.split.test_fraction, config.split.seed)?;
    Ok(match config.training.regime {
        Regime::Graybox => split,
        Regime::Blackbox => make_unpaired_groups(&split, config.split.seed)?,
    })
}

pub fn read_split(path: &Path) -> CliResult<SplitManifest> {
    let bytes = fs::read(path).map_err(|e| CliError::at(path, e))?;
    let split: SplitManifest = serde_json::from_slice(&bytes).map_err(|e| CliError::at(path, e))?;
    split.validate()?;
    Ok(split)
}

enum Trainer {
    Gray(GrayboxTrainer<f32, Generator<f32>>, PairedData<f32>),
    Black(BlackboxTrainer<f32>, UnpairedData<f32>),
}

impl Trainer {
    fn step(&mut self) -> mimic_core::Result<StepRecord> {
        match self {
            Trainer::Gray(t, d) => t.step(d),
            Trainer::Black(t, d) => t.step(d),
        }
    }

    fn steps_done(&self) -> usize {
        match self {
            Trainer::Gray(t, _) => t.step,
            Trainer::Black(t, _) => t.step,
        }
    }

    fn history(&mut self) -> &mut TrainingHistory {
        match self {
            Trainer::Gray(t, _) => &mut t.history,
            Trainer::Black(t, _) => &mut t.history,
        }
    }

    fn mimic(&self) -> &Generator<f32> {
        match self {
            Trainer::Gray(t, _) => &t.model,
            Trainer::Black(t, _) => t.state.mimic(),
        }
    }

    fn save(&self, path: &Path) -> mimic_core::Result<()> {
        match self {
            Trainer::Gray(t, _) => t.save(path),
            Trainer::Black(t, _) => t.save(path),
        }
    }
}

fn checkpoint_name(step: usize) -> String {
    format!("step-{step:07}.ckpt")
}

/// Highest-step checkpoint in `dir`, if any.
pub fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    let mut found: Vec<(usize, PathBuf)> = fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().to_string();
            let step = name.strip_prefix("step-")?.strip_suffix(".ckpt")?.parse().ok()?;
            Some((step, e.path()))
        })
        .collect();
    found.sort();
    found.pop().map(|(_, p)| p)
}

fn build_trainer(config: &ExperimentConfig, corpus: &Corpus, split: &SplitManifest, resume: Option<&Path>) -> CliResult<Trainer> {
    let gc = config.generator.resolve();
    let tc = config.training.clone();
    let archive = resume.map(Archive::load).transpose()?;
    if let Some(a) = &archive {
        let h = &a.header;
        let mut problems = Vec::new();
        let schedule_free = |c: &TrainingConfig| TrainingConfig {
            steps: 0,
            checkpoint_every: 0,
            ..c.clone()
        };
        if schedule_free(&h.training) != schedule_free(&tc) {
            problems.push("checkpoint training settings differ from the config".to_string());
        }
        if h.generator.as_ref() != Some(&gc) {
            problems.push("checkpoint generator differs from the config".to_string());
        }
        if !problems.is_empty() {
            return Err(CliError::Config(problems));
        }
    }
    let mut trainer = match tc.regime {
        Regime::Graybox => {
            let (x, y) = corpus.pairs::<f32>(&split.train)?;
            let data = PairedData::new(x, y)?;
            let t = match &archive {
                Some(a) => GrayboxTrainer::from_archive(a)?,
                None => GrayboxTrainer::new(Generator::new(gc, tc.seed)?, tc.clone())?,
            };
            Trainer::Gray(t, data)
        }
        Regime::Blackbox => {
            let (raw, processed) = corpus.unpaired::<f32>(split)?;
            let data = UnpairedData::new(raw, processed)?;
            let t = match &archive {
                Some(a) => BlackboxTrainer::from_archive(a)?,
                None => BlackboxTrainer::new(CycleGanState::new(gc, config.discriminator.clone(), tc.seed)?, tc.clone())?,
            };
            Trainer::Black(t, data)
        }
    };
    match &mut trainer {
        Trainer::Gray(t, _) => t.config = tc,
        Trainer::Black(t, _) => t.config = tc,
    }
    Ok(trainer)
}

/// Restores the history rows written before `step` by an earlier run.
fn restore_history(out: &Path, step: usize, history: &mut TrainingHistory) -> CliResult<()> {
    let path = out.join(HISTORY_FILE);
    let old = TrainingHistory::read(&path).map_err(|e| CliError::at(&path, e))?;
    let timing = TrainingHistory::read_timing_csv(&out.join(TIMING_FILE)).unwrap_or_default();
    let mut restored = TrainingHistory::with_label(history.loss_label.clone());
    for r in old.records.into_iter().filter(|r| r.step < step) {
        let wall = timing.iter().find(|(s, _)| *s == r.step).map_or(f64::NAN, |(_, w)| *w);
        restored.push(r, wall);
    }
    if restored.records.len() != step {
        return Err(CliError::Data(format!(
            "{} holds {} rows before step {step}; cannot resume",
            path.display(),
            restored.records.len()
        )));
    }
    let val = out.join(VALIDATION_FILE);
    if val.exists() {
        let bytes = fs::read(&val).map_err(|e| CliError::at(&val, e))?;
        let mut r = csv_reader(&bytes);
        for row in r.deserialize::<ValidationRecord>() {
            let row = row.map_err(|e| CliError::at(&val, e))?;
            if row.step <= step {
                restored.validation.push(row);
            }
        }
    }
    *history = restored;
    Ok(())
}

fn csv_reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    csv::Reader::from_reader(bytes)
}

fn validation_record(model: &Generator<f32>, frames: &[(Image<f32>, Image<f32>)], step: usize) -> CliResult<ValidationRecord> {
    let p = SsimParams::new(1.0);
    let (mut s, mut e, mut a) = (0.0, 0.0, 0.0);
    for (x, y) in frames {
        let out = infer_frame(model, x)?;
        s += ssim(&out, y, &p)?.mean_ssim as f64;
        e += mse(&out, y)? as f64;
        a += mae(&out, y)? as f64;
    }
    let n = frames.len() as f64;
    Ok(ValidationRecord {
        step,
        ssim: s / n,
        mse: e / n,
        mae: a / n,
    })
}

fn write_history(out: &Path, history: &TrainingHistory) -> CliResult<()> {
    history.write_csv(&out.join(HISTORY_FILE))?;
    history.write_timing_csv(&out.join(TIMING_FILE))?;
    if !history.validation.is_empty() {
        history.write_validation_csv(&out.join(VALIDATION_FILE))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub out: PathBuf,
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub resumed_from: Option<usize>,
}

/// Runs one experiment (or every matrix cell) to completion.
pub fn train(config: &ExperimentConfig, resume: bool) -> CliResult<Vec<TrainOutcome>> {
    config.validate()?;
    let corpus = load_corpus(&config.corpus)?;
    let mut outcomes = Vec::new();
    for (_, run) in config.expand_matrix() {
        run.validate()?;
        outcomes.push(train_one(&run, &corpus, resume)?);
    }
    Ok(outcomes)
}

fn train_one(config: &ExperimentConfig, corpus: &Corpus, resume: bool) -> CliResult<TrainOutcome> {
    let out = &config.out;
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    create_dir(&ckpt_dir)?;
    let split = make_split(config, corpus)?;
    let split_path = out.join(SPLIT_FILE);
    if resume && split_path.exists() && read_split(&split_path)? != split {
        return Err(CliError::Config(vec![format!("{} does not match the configured split", split_path.display())]));
    }
    write_file(&split_path, &serde_json::to_vec_pretty(&split).map_err(Error::from)?)?;
    write_file(&out.join(RESOLVED_CONFIG_FILE), config.resolved().to_toml()?.as_bytes())?;

    let checkpoint = if resume { latest_checkpoint(&ckpt_dir) } else { None };
    let mut trainer = build_trainer(config, corpus, &split, checkpoint.as_deref())?;
    let resumed_from = checkpoint.as_ref().map(|_| trainer.steps_done());
    if let Some(step) = resumed_from {
        restore_history(out, step, trainer.history())?;
    }
    let held: Vec<(Image<f32>, Image<f32>)> = if config.validation_every > 0 {
        corpus_test_frames::<f32>(corpus, &split)?
            .into_iter()
            .map(|f| (f.input, f.truth))
            .collect()
    } else {
        Vec::new()
    };

    let (steps, every) = (config.training.steps, config.training.checkpoint_every);
    while trainer.steps_done() < steps {
        if let Err(e) = trainer.step() {
            write_history(out, trainer.history())?;
            return Err(e.into());
        }
        let done = trainer.steps_done();
        if config.validation_every > 0 && done % config.validation_every == 0 {
            let v = validation_record(trainer.mimic(), &held, done)?;
            trainer.history().validation.push(v);
        }
        if every > 0 && done % every == 0 {
            trainer.save(&ckpt_dir.join(checkpoint_name(done)))?;
            write_history(out, trainer.history())?;
        }
    }
    trainer.save(&out.join(MODEL_FILE))?;
    write_history(out, trainer.history())?;
    let final_loss = trainer.history().last().map(|r| r.loss);
    Ok(TrainOutcome {
        out: out.clone(),
        steps,
        final_loss,
        resumed_from,
    })
}

/// The raw-to-processed generator stored in a gray-box or black-box checkpoint.
pub fn load_mimic(path: &Path) -> CliResult<Generator<f32>> {
    let archive = Archive::load(path).map_err(|e| CliError::at(path, e))?;
    let g = match archive.header.regime {
        Regime::Graybox => GrayboxTrainer::<f32, Generator<f32>>::from_archive(&archive).map(|t| t.model),
        Regime::Blackbox => BlackboxTrainer::<f32>::from_archive(&archive).map(|t| t.state.g_b),
    };
    g.map_err(|e| CliError::at(path, e))
}

fn file_stem(frame_id: &str) -> String {
    frame_id.replace('#', "_")
}

/// Scores the checkpoint on the held-out loops and writes the report
/// beside a gallery of the `worst` lowest-SSIM frames.
pub fn eval(checkpoint: &Path, corpus_dir: &Path, split_path: &Path, worst: usize, out: &Path) -> CliResult<MetricsReport> {
    let model = load_mimic(checkpoint)?;
    let corpus = load_corpus(corpus_dir)?;
    let split = read_split(split_path)?;
    let frames = corpus_test_frames::<f32>(&corpus, &split)?;
    let report = evaluate_testset(&model, &frames, &split)?;
    create_dir(out)?;
    report.write_csv(&out.join("report.csv"))?;
    report.write_json(&out.join("report.json"))?;
    let dist = component_distribution(&report)?;
    dist.l.write_csv(&out.join("luminance_histogram.csv"))?;
    dist.cs.write_csv(&out.join("contrast_structure_histogram.csv"))?;
    let mut bytes = serde_json::to_vec_pretty(&dist).map_err(Error::from)?;
    bytes.push(b'\n');
    write_file(&out.join("components.json"), &bytes)?;

    let gallery = out.join("gallery");
    if gallery.exists() {
        fs::remove_dir_all(&gallery).map_err(|e| CliError::at(&gallery, e))?;
    }
    create_dir(&gallery)?;
    let worst = worst_cases(&report, worst.min(report.records.len()))?;
    for (rank, w) in worst.iter().enumerate() {
        let f = frames
            .iter()
            .find(|f| f.frame_id() == w.frame_id)
            .expect("worst case comes from the evaluated frames");
        let output = infer_frame(&model, &f.input)?;
        let stem = format!("{rank:02}_{}", file_stem(&w.frame_id));
        write_pgm(&gallery.join(format!("{stem}_input.pgm")), &f.input)?;
        write_pgm(&gallery.join(format!("{stem}_output.pgm")), &output)?;
        write_pgm(&gallery.join(format!("{stem}_truth.pgm")), &f.truth)?;
        write_pgm(&gallery.join(format!("{stem}_difference.pgm")), &difference_image(&output, &f.truth)?)?;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &worst {
        w.serialize(r).map_err(Error::from)?;
    }
    write_file(&out.join("worst.csv"), &w.into_inner().map_err(|e| CliError::Data(e.to_string()))?)?;
    Ok(report)
}

pub fn bench(model: &Generator<f32>, extent: (usize, usize), repetitions: usize, out: Option<&Path>) -> CliResult<BenchmarkReport> {
    let report = benchmark_inference(model, extent, repetitions)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        let mut bytes = serde_json::to_vec_pretty(&report).map_err(Error::from)?;
        bytes.push(b'\n');
        write_file(&dir.join("bench.json"), &bytes)?;
    }
    Ok(report)
}

/// Fresh generator for benchmarking without a checkpoint.
pub fn fresh_model(config: GeneratorConfig, seed: u64) -> CliResult<Generator<f32>> {
    Ok(Generator::new(config, seed)?)
}

fn read_frame(path: &Path) -> CliResult<Image<f32>> {
    let img = image::open(path).map_err(|e| CliError::at(path, e))?.into_luma16();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f32 / u16::MAX as f32).collect();
    Ok(Image::new(h as usize, w as usize, data)?)
}

/// Binary 16-bit graymap.
fn write_frame(path: &Path, frame: &Image<f32>) -> CliResult<()> {
    let mut bytes = format!("P5\n{} {}\n65535\n", frame.width(), frame.height()).into_bytes();
    for v in frame.data() {
        bytes.extend(((v.clamp(0.0, 1.0) * u16::MAX as f32).round() as u16).to_be_bytes());
    }
    write_file(path, &bytes)
}

fn is_frame_file(p: &Path) -> bool {
    p.is_file() && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'))
}

/// Processes one graymap, or every file in a directory, into `out`.
/// Returns the written paths.
pub fn infer(model: &Generator<f32>, input: &Path, out: &Path) -> CliResult<Vec<PathBuf>> {
    let jobs: Vec<(PathBuf, PathBuf)> = if input.is_dir() {
        create_dir(out)?;
        let mut files: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|e| CliError::at(input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| is_frame_file(p))
            .collect();
        files.sort();
        files
            .into_iter()
            .map(|p| {
                let name = p.file_stem().unwrap_or_default().to_string_lossy().to_string();
                (p, out.join(format!("{name}.pgm")))
            })
            .collect()
    } else {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
        vec![(input.to_path_buf(), out.to_path_buf())]
    };
    let mut problems = Vec::new();
    let mut frames = Vec::new();
    for (src, dst) in jobs {
        match read_frame(&src) {
            Ok(f) => frames.push((f, dst)),
            Err(e) => problems.push(e.to_string()),
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Data(format!("unreadable inputs:\n  - {}", problems.join("\n  - "))));
    }
    let mut written = Vec::new();
    for (f, dst) in frames {
        write_frame(&dst, &infer_frame(model, &f)?)?;
        written.push(dst);
    }
    Ok(written)
}
