//! Declarative experiment and corpus-synthesis configs, read from TOML.

use std::fs;
use std::path::{Path, PathBuf};

use mimic_core::data::PhantomSpec;
use mimic_core::models::{DiscriminatorConfig, GeneratorConfig};
use mimic_core::training::{Distance, Regime, TrainingConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Small,
    Mimic,
}

impl Preset {
    pub fn config(self) -> GeneratorConfig {
        match self {
            Preset::Small => GeneratorConfig::small(),
            Preset::Mimic => GeneratorConfig::mimic(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Small => "small",
            Preset::Mimic => "mimic",
        }
    }
}

/// A named preset or a full generator description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeneratorSpec {
    Preset { preset: Preset },
    Custom(GeneratorConfig),
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec::Preset { preset: Preset::Small }
    }
}

impl GeneratorSpec {
    pub fn resolve(&self) -> GeneratorConfig {
        match self {
            GeneratorSpec::Preset { preset } => preset.config(),
            GeneratorSpec::Custom(c) => c.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Loss by generator-capacity grid; each cell is a separate run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixConfig {
    pub distances: Vec<Distance>,
    pub generators: Vec<Preset>,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig {
            distances: vec![Distance::Mse, Distance::Mae, Distance::Ssim],
            generators: vec![Preset::Small, Preset::Mimic],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Corpus directory; relative paths resolve against the config file.
    pub corpus: PathBuf,
    /// Run directory; relative paths resolve against the config file.
    pub out: PathBuf,
    #[serde(default)]
    pub deterministic: bool,
    /// Steps between held-out evaluations; 0 disables them.
    #[serde(default)]
    pub validation_every: usize,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub discriminator: DiscriminatorConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixConfig>,
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Config(vec![format!("cannot read {}: {e}", path.display())]))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::path::absolute(&joined).unwrap_or(joined)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(vec![e.to_string()]))
    }

    /// Parses `path` and anchors relative paths at its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut c = Self::parse(&read_text(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        c.corpus = resolve(base, &c.corpus);
        c.out = resolve(base, &c.out);
        Ok(c)
    }

    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> CliResult<()> {
        let mut problems = Vec::new();
        let mut collect = |r: mimic_core::Result<()>| {
            if let Err(e) = r {
                match e {
                    mimic_core::Error::InvalidConfig(p) => problems.extend(p),
                    other => problems.push(other.to_string()),
                }
            }
        };
        collect(self.training.validate());
        collect(self.generator.resolve().validate());
        if self.training.regime == Regime::Blackbox {
            collect(self.discriminator.validate());
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            problems.push(format!("split.test_fraction must lie in (0, 1), got {}", self.split.test_fraction));
        }
        if let Some(m) = &self.matrix {
            if m.distances.is_empty() || m.generators.is_empty() {
                problems.push("matrix needs at least one distance and one generator".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems))
        }
    }

    /// The config as run: generator expanded, matrix removed.
    pub fn resolved(&self) -> Self {
        ExperimentConfig {
            generator: GeneratorSpec::Custom(self.generator.resolve()),
            matrix: None,
            ..self.clone()
        }
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(vec![format!("cannot serialize config: {e}")]))
    }

    /// One config per matrix cell with its own run directory under `out`.
    pub fn expand_matrix(&self) -> Vec<(String, ExperimentConfig)> {
        let Some(m) = &self.matrix else {
            return vec![(String::new(), self.clone())];
        };
        let mut runs = Vec::new();
        for g in &m.generators {
            for d in &m.distances {
                let name = format!("{}-{}", g.name(), d.label());
                let mut c = self.clone();
                c.matrix = None;
                c.generator = GeneratorSpec::Preset { preset: *g };
                c.training.distance = *d;
                c.out = self.out.join(&name);
                runs.push((name, c));
            }
        }
        runs
    }
}

/// Template for synthetic cineloops; each loop draws its own lesions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// `[height, width]`.
    pub extent: [usize; 2],
    pub frames: usize,
    pub speckle_density: Option<f64>,
    pub psf_sigma: Option<[f64; 2]>,
    pub depth_gain_db_per_pixel: Option<f64>,
    pub jitter_fraction: Option<f64>,
    /// Draw random lesions and depth gain; otherwise homogeneous speckle.
    pub lesions: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            extent: [128, 128],
            frames: 8,
            speckle_density: None,
            psf_sigma: None,
            depth_gain_db_per_pixel: None,
            jitter_fraction: None,
            lesions: true,
        }
    }
}

impl SynthConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        toml::from_str(&read_text(path)?).map_err(|e| CliError::Config(vec![e.to_string()]))
    }

    pub fn phantom(&self, seed: u64) -> PhantomSpec {
        let extent = (self.extent[0], self.extent[1]);
        let mut s = if self.lesions {
            PhantomSpec::random(extent, self.frames, seed)
        } else {
            PhantomSpec::homogeneous(extent, self.frames, seed)
        };
        if let Some(v) = self.speckle_density {
            s.speckle_density = v;
        }
        if let Some([a, l]) = self.psf_sigma {
            s.psf_sigma = (a, l);
        }
        if let Some(v) = self.depth_gain_db_per_pixel {
            s.depth_gain_db_per_pixel = v;
        }
        if let Some(v) = self.jitter_fraction {
            s.jitter_fraction = v;
        }
        s
    }
}
