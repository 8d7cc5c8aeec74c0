use std::path::Path;
use std::time::Instant;

use super::{batch_distance, check_loss, step_rng, Archive, PairedData, Regime, StepRecord, TrainingConfig, TrainingHistory};
use crate::error::{Error, Result};
use crate::models::{Generator, Network};
use crate::nn::{adam_step, AdamState, Mode};
use crate::scalar::Scalar;

/// Supervised training of one network against aligned targets.
#[derive(Clone, Debug)]
pub struct GrayboxTrainer<T, N> {
    pub model: N,
    pub optimizer: AdamState<T>,
    pub config: TrainingConfig,
    pub history: TrainingHistory,
    /// Steps completed.
    pub step: usize,
}

impl<T: Scalar, N: Network<T>> GrayboxTrainer<T, N> {
    pub fn new(model: N, config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        if config.regime != Regime::Graybox {
            return Err(Error::InvalidConfig(vec!["regime must be graybox for paired training".into()]));
        }
        let optimizer = AdamState::new(model.params());
        Ok(GrayboxTrainer {
            model,
            optimizer,
            history: TrainingHistory::with_label(config.distance.label()),
            config,
            step: 0,
        })
    }

    pub fn step(&mut self, data: &PairedData<T>) -> Result<StepRecord> {
        let started = Instant::now();
        let step = self.step;
        let mut rng = step_rng(self.config.seed, step);
        let (x, y, ids) = data.sample(self.config.batch_size, self.config.crop, &mut rng)?;
        let (out, cache) = self.model.forward_with_cache(
            &x,
            Mode::Train {
                update_running_stats: true,
            },
        )?;
        let (loss, grad) = batch_distance(&out, &y, self.config.distance)?;
        check_loss(loss, step, || format!("pairs {ids:?}"))?;
        self.model.params_mut().zero_grad();
        self.model.backward(&cache, &grad)?;
        self.model.commit_running_stats(&cache);
        adam_step(self.model.params_mut(), &mut self.optimizer, &self.config.generator_adam)?;
        self.step += 1;
        let record = StepRecord {
            step,
            loss: loss.as_f64(),
            ..StepRecord::default()
        };
        self.history.push(record.clone(), started.elapsed().as_secs_f64() * 1e3);
        Ok(record)
    }

    /// Steps until `config.steps` have been completed.
    pub fn run(&mut self, data: &PairedData<T>) -> Result<()> {
        while self.step < self.config.steps {
            self.step(data)?;
        }
        Ok(())
    }
}

impl<T: Scalar> GrayboxTrainer<T, Generator<T>> {
    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new::<T>(
            Regime::Graybox,
            self.step,
            self.config.clone(),
            Some(self.model.config().clone()),
            None,
        );
        a.push_params("generator", self.model.params());
        a.push_adam("generator.adam", &self.optimizer);
        a
    }

    pub fn from_archive(archive: &Archive) -> Result<Self> {
        let h = &archive.header;
        if h.regime != Regime::Graybox {
            return Err(Error::Format("checkpoint is not a graybox run".into()));
        }
        let gc = h
            .generator
            .clone()
            .ok_or_else(|| Error::Format("checkpoint has no generator config".into()))?;
        let mut model = Generator::new(gc, 0)?;
        archive.restore_params("generator", model.params_mut())?;
        let mut t = GrayboxTrainer::new(model, h.training.clone())?;
        archive.restore_adam("generator.adam", &mut t.optimizer)?;
        t.step = h.step;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

/// Trains `model` for `config.steps` steps on `data`.
pub fn train_graybox<T: Scalar, N: Network<T>>(
    model: N,
    data: &PairedData<T>,
    config: TrainingConfig,
) -> Result<GrayboxTrainer<T, N>> {
    let mut t = GrayboxTrainer::new(model, config)?;
    t.run(data)?;
    Ok(t)
}
