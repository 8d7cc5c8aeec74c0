use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mimic_cli::commands::{self, loop_id, CHECKPOINT_DIR, HISTORY_FILE, MODEL_FILE};
use mimic_cli::{parse_extent, CliError, ExperimentConfig, GeneratorSpec, Preset, SynthConfig};
use mimic_core::data::{read_corpus, Corpus, GroundTruth};
use mimic_core::models::GeneratorConfig;
use mimic_core::training::{Distance, Regime, TrainingHistory};
use mimic_core::Error;

fn mimic(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mimic"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).to_string()
}

fn write_synth_spec(dir: &Path) -> PathBuf {
    let p = dir.join("synth.toml");
    fs::write(&p, "extent = [32, 32]\nframes = 3\n").unwrap();
    p
}

fn make_corpus(dir: &Path, count: usize) -> PathBuf {
    write_synth_spec(dir);
    let o = mimic(dir, &["synth", "--count", &count.to_string(), "--spec", "synth.toml", "--seed", "5", "--out", "corpus"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join("corpus")
}

const GRAY: &str = r#"
corpus = "corpus"
out = "run"
validation_every = 2

[split]
test_fraction = 0.2
seed = 1

[generator]
levels = 2
channels_per_level = [4, 4]
kernel_extent = [3, 3]
output_activation = "linear"
batch_norm = true

[training]
regime = "graybox"
distance = "mae"
batch_size = 2
steps = 6
seed = 3
crop = [16, 16]
checkpoint_every = 2
"#;

const BLACK: &str = r#"
corpus = "corpus"
out = "run"

[split]
test_fraction = 0.2
seed = 1

[generator]
levels = 1
channels_per_level = [4]
kernel_extent = [3, 3]
output_activation = "linear"
batch_norm = true

[discriminator]
strided_blocks = 1
base_channels = 4
kernel_extent = 4

[training]
regime = "blackbox"
distance = "mae"
batch_size = 2
steps = 4
seed = 3
crop = [16, 16]
checkpoint_every = 2
"#;

#[test]
fn presets_and_custom_generators_parse() {
    let c = ExperimentConfig::parse("corpus = \"c\"\nout = \"o\"\n").unwrap();
    assert_eq!(c.generator, GeneratorSpec::Preset { preset: Preset::Small });
    assert_eq!(c.generator.resolve(), GeneratorConfig::small());
    let c = ExperimentConfig::parse("corpus = \"c\"\nout = \"o\"\n[generator]\npreset = \"mimic\"\n").unwrap();
    assert_eq!(c.generator.resolve(), GeneratorConfig::mimic());
    let c = ExperimentConfig::parse(GRAY).unwrap();
    assert_eq!(c.generator.resolve().channels_per_level, vec![4, 4]);
    assert_eq!(c.training.distance, Distance::Mae);
    c.validate().unwrap();
}

#[test]
fn unknown_keys_are_rejected() {
    let e = ExperimentConfig::parse("corpus = \"c\"\nout = \"o\"\nlearning_rate = 1\n").unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert!(e.to_string().contains("learning_rate"), "{e}");
    let e = ExperimentConfig::parse("corpus = \"c\"\nout = \"o\"\n[training]\nstep = 3\n").unwrap_err();
    assert!(e.to_string().contains("step"), "{e}");
}

#[test]
fn validation_reports_every_problem() {
    let text = GRAY
        .replace("batch_size = 2", "batch_size = 0")
        .replace("test_fraction = 0.2", "test_fraction = 1.5")
        .replace("levels = 2", "levels = 0");
    let e = ExperimentConfig::parse(&text).unwrap().validate().unwrap_err();
    let CliError::Config(problems) = &e else { panic!("{e}") };
    assert!(problems.len() >= 3, "{problems:?}");
    assert!(problems.iter().any(|p| p.contains("test_fraction")));
    assert!(problems.iter().any(|p| p.contains("batch")));
    assert_eq!(e.exit_code(), 2);
    let black = BLACK.replace("[training]", "[training]\ncycle_weight = 0.0");
    let e = ExperimentConfig::parse(&black).unwrap().validate().unwrap_err();
    assert!(e.to_string().contains("cycle"), "{e}");
}

#[test]
fn shipped_configs_load_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for name in ["graybox.toml", "blackbox.toml"] {
        let c = ExperimentConfig::load(&dir.join(name)).unwrap();
        c.validate().unwrap();
        assert!(c.corpus.is_absolute() && c.out.is_absolute());
    }
    let g = ExperimentConfig::load(&dir.join("graybox.toml")).unwrap();
    assert_eq!(g.expand_matrix().len(), 6);
    let b = ExperimentConfig::load(&dir.join("blackbox.toml")).unwrap();
    assert_eq!(b.training.regime, Regime::Blackbox);
}

#[test]
fn matrix_expands_to_named_cells() {
    let mut c = ExperimentConfig::parse(GRAY).unwrap();
    c.matrix = Some(Default::default());
    let runs = c.expand_matrix();
    let names: Vec<&str> = runs.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        ["small-mse", "small-mae", "small-1-ssim", "mimic-mse", "mimic-mae", "mimic-1-ssim"]
    );
    for (name, r) in &runs {
        assert_eq!(r.out, c.out.join(name));
        assert!(r.matrix.is_none());
    }
    assert_eq!(runs[2].1.training.distance, Distance::Ssim);
    assert_eq!(runs[3].1.generator.resolve(), GeneratorConfig::mimic());
}

#[test]
fn resolved_config_round_trips_through_toml() {
    let c = ExperimentConfig::parse(GRAY).unwrap();
    let r = c.resolved();
    assert_eq!(ExperimentConfig::parse(&r.to_toml().unwrap()).unwrap(), r);
}

#[test]
fn extents_parse() {
    assert_eq!(parse_extent("512x512"), Ok((512, 512)));
    assert_eq!(parse_extent("64x128"), Ok((64, 128)));
    assert!(parse_extent("512").is_err());
    assert!(parse_extent("0x5").is_err());
    assert!(parse_extent("ax5").is_err());
}

#[test]
fn exit_codes_follow_error_class() {
    assert_eq!(CliError::Config(vec![]).exit_code(), 2);
    assert_eq!(CliError::Data(String::new()).exit_code(), 3);
    assert_eq!(CliError::from(Error::Format("x".into())).exit_code(), 3);
    assert_eq!(CliError::from(Error::Leakage("x".into())).exit_code(), 3);
    assert_eq!(CliError::from(Error::Divergence { step: 1, window: 1 }).exit_code(), 4);
    assert_eq!(
        CliError::from(Error::NonFiniteLoss { step: 1, batch: String::new() }).exit_code(),
        4
    );
    assert_eq!(CliError::from(Error::ShapeMismatch { left: vec![], right: vec![] }).exit_code(), 1);
}

#[test]
fn synth_is_deterministic_and_loadable() {
    let t = tempfile::tempdir().unwrap();
    let corpus = make_corpus(t.path(), 3);
    let m = read_corpus(&corpus).unwrap();
    assert_eq!(m.ground_truth, GroundTruth::Oracle);
    assert_eq!(m.entries.iter().map(|e| e.raw.clone()).collect::<Vec<_>>(), (0..3).map(loop_id).collect::<Vec<_>>());
    let c = Corpus::load(&corpus).unwrap();
    let (x, y) = c.pairs::<f32>(&c.ids()).unwrap();
    assert_eq!((x.len(), y.len()), (9, 9));
    assert_eq!((x[0].height(), x[0].width()), (32, 32));

    let o = mimic(t.path(), &["synth", "--count", "3", "--spec", "synth.toml", "--seed", "5", "--out", "again"]);
    assert_eq!(code(&o), 0);
    for f in fs::read_dir(&corpus).unwrap() {
        let name = f.unwrap().file_name();
        assert_eq!(fs::read(corpus.join(&name)).unwrap(), fs::read(t.path().join("again").join(&name)).unwrap());
    }
    let o = mimic(t.path(), &["synth", "--count", "3", "--spec", "synth.toml", "--seed", "6", "--out", "other"]);
    assert_eq!(code(&o), 0);
    assert_ne!(
        fs::read(corpus.join("loop0000.frames.f32")).unwrap(),
        fs::read(t.path().join("other/loop0000.frames.f32")).unwrap()
    );
}

#[test]
fn synth_rejects_bad_specs() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("bad.toml"), "extent = [0, 32]\nframes = 0\n").unwrap();
    let o = mimic(t.path(), &["synth", "--count", "2", "--spec", "bad.toml", "--out", "c"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    fs::write(t.path().join("typo.toml"), "extnt = [32, 32]\n").unwrap();
    let o = mimic(t.path(), &["synth", "--spec", "typo.toml", "--out", "c"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("extnt"));
    let s = SynthConfig::default();
    assert!(commands::synth(&s, 0, 0, &t.path().join("z")).is_err());
}

#[test]
fn graybox_train_eval_infer_pipeline() {
    let t = tempfile::tempdir().unwrap();
    make_corpus(t.path(), 5);
    fs::write(t.path().join("exp.toml"), GRAY).unwrap();
    let o = mimic(t.path(), &["train", "--config", "exp.toml"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = t.path().join("run");
    for f in ["history.csv", "timing.csv", "validation.csv", "config.resolved.toml", "split.json", MODEL_FILE] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let ckpts: Vec<_> = fs::read_dir(run.join(CHECKPOINT_DIR)).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(ckpts.len(), 3);
    let h = TrainingHistory::read(&run.join(HISTORY_FILE)).unwrap();
    assert_eq!(h.records.len(), 6);
    assert_eq!(h.loss_label, "mae");
    let val = fs::read_to_string(run.join("validation.csv")).unwrap();
    assert_eq!(val.lines().count(), 4);
    let resolved = ExperimentConfig::load(&run.join("config.resolved.toml")).unwrap();
    assert_eq!(resolved.training.seed, 3);
    assert_eq!(resolved.corpus, t.path().join("corpus"));

    let o = mimic(t.path(), &["eval", "--checkpoint", "run/model.ckpt", "--corpus", "corpus", "--worst", "2", "--out", "ev"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("SSIM") && stdout.contains("cs "), "{stdout}");
    let ev = t.path().join("ev");
    for f in ["report.csv", "report.json", "components.json", "worst.csv", "luminance_histogram.csv"] {
        assert!(ev.join(f).is_file(), "{f}");
    }
    let report = fs::read_to_string(ev.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 3);
    assert_eq!(fs::read_dir(ev.join("gallery")).unwrap().count(), 8);
    assert_eq!(fs::read_to_string(ev.join("worst.csv")).unwrap().lines().count(), 3);

    let o = mimic(t.path(), &["eval", "--checkpoint", "run/checkpoints/step-0000002.ckpt", "--corpus", "corpus", "--out", "ev2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let gallery: Vec<PathBuf> = fs::read_dir(ev.join("gallery")).unwrap().map(|e| e.unwrap().path()).collect();
    let inputs = t.path().join("in");
    fs::create_dir(&inputs).unwrap();
    for (i, p) in gallery.iter().filter(|p| p.to_string_lossy().ends_with("_input.pgm")).enumerate() {
        fs::copy(p, inputs.join(format!("f{i}.pgm"))).unwrap();
    }
    let o = mimic(t.path(), &["infer", "--checkpoint", "run/model.ckpt", "--input", "in", "--out", "inf"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let written: Vec<_> = fs::read_dir(t.path().join("inf")).unwrap().collect();
    assert_eq!(written.len(), 2);
    let first = fs::read(t.path().join("inf/f0.pgm")).unwrap();
    assert!(first.starts_with(b"P5"));
    assert_eq!(first.len() - first.windows(6).position(|w| w == b"65535\n").unwrap() - 6, 32 * 32 * 2);

    fs::write(inputs.join("broken.pgm"), b"not an image").unwrap();
    let o = mimic(t.path(), &["infer", "--checkpoint", "run/model.ckpt", "--input", "in", "--out", "inf2"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("broken.pgm"), "{}", stderr(&o));
    assert!(!t.path().join("inf2/f0.pgm").exists());

    let o = mimic(t.path(), &["infer", "--checkpoint", "exp.toml", "--input", "in", "--out", "inf3"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("exp.toml"));
}

#[test]
fn resume_reproduces_an_uninterrupted_run() {
    let t = tempfile::tempdir().unwrap();
    make_corpus(t.path(), 5);
    fs::write(t.path().join("full.toml"), BLACK.replace("out = \"run\"", "out = \"full\"")).unwrap();
    let o = mimic(t.path(), &["train", "--config", "full.toml"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    fs::write(t.path().join("part.toml"), BLACK.replace("steps = 4", "steps = 2")).unwrap();
    let o = mimic(t.path(), &["train", "--config", "part.toml"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    fs::write(t.path().join("part.toml"), BLACK).unwrap();
    let o = mimic(t.path(), &["train", "--config", "part.toml", "--resume"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let (full, run) = (t.path().join("full"), t.path().join("run"));
    assert_eq!(fs::read(full.join(HISTORY_FILE)).unwrap(), fs::read(run.join(HISTORY_FILE)).unwrap());
    assert_eq!(fs::read(full.join(MODEL_FILE)).unwrap(), fs::read(run.join(MODEL_FILE)).unwrap());
    let h = TrainingHistory::read(&run.join(HISTORY_FILE)).unwrap();
    assert_eq!(h.loss_label, "total");
    assert!(h.records.iter().all(|r| r.d_a.is_some()));

    fs::write(t.path().join("part.toml"), BLACK.replace("seed = 3", "seed = 4")).unwrap();
    let o = mimic(t.path(), &["train", "--config", "part.toml", "--resume"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn seed_and_out_flags_override_the_config() {
    let t = tempfile::tempdir().unwrap();
    make_corpus(t.path(), 5);
    fs::write(t.path().join("exp.toml"), GRAY.replace("steps = 6", "steps = 2")).unwrap();
    let o = mimic(t.path(), &["train", "--config", "exp.toml", "--seed", "11", "--out", "alt", "--deterministic"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = ExperimentConfig::load(&t.path().join("alt/config.resolved.toml")).unwrap();
    assert_eq!(r.training.seed, 11);
    assert!(r.deterministic);
    assert!(!t.path().join("run").exists());
}

#[test]
fn matrix_runs_every_cell() {
    let t = tempfile::tempdir().unwrap();
    make_corpus(t.path(), 5);
    let text = GRAY.replace("steps = 6", "steps = 1").replace("checkpoint_every = 2", "checkpoint_every = 0")
        + "\n[matrix]\ndistances = [\"mse\", \"ssim\"]\ngenerators = [\"small\"]\n";
    fs::write(t.path().join("exp.toml"), text).unwrap();
    let o = mimic(t.path(), &["train", "--config", "exp.toml", "--matrix"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for cell in ["small-mse", "small-1-ssim"] {
        let h = TrainingHistory::read(&t.path().join("run").join(cell).join(HISTORY_FILE)).unwrap();
        assert_eq!(h.records.len(), 1);
    }
    assert_eq!(fs::read_dir(t.path().join("run")).unwrap().count(), 2);
}

#[test]
fn train_reports_bad_inputs_with_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let o = mimic(t.path(), &["train", "--config", "missing.toml"]);
    assert_eq!(code(&o), 2);
    fs::write(t.path().join("exp.toml"), GRAY).unwrap();
    let o = mimic(t.path(), &["train", "--config", "exp.toml"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    fs::write(t.path().join("bad.toml"), GRAY.replace("batch_size = 2", "batch_size = 0")).unwrap();
    let o = mimic(t.path(), &["train", "--config", "bad.toml"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("batch"));
}

#[test]
fn bench_writes_a_report() {
    let t = tempfile::tempdir().unwrap();
    let o = mimic(t.path(), &["bench", "--model", "small", "--extent", "64x64", "--reps", "10", "--out", "b"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(t.path().join("b/bench.json")).unwrap()).unwrap();
    assert!(v["fps"].as_f64().unwrap() > 0.0);
    assert!(v["summary"]["parameter_count"].as_u64().unwrap() > 0);
    let o = mimic(t.path(), &["bench", "--model", "small", "--extent", "64x64", "--reps", "3"]);
    assert_eq!(code(&o), 2);
}
