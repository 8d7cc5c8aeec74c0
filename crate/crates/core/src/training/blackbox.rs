use std::path::Path;
use std::time::Instant;

use super::{batch_distance, check_loss, step_rng, Archive, Regime, StepRecord, TrainingConfig, TrainingHistory, UnpairedData};
use crate::error::{Error, Result};
use crate::models::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, Network};
use crate::nn::{adam_step, AdamState, Mode, Tensor};
use crate::scalar::Scalar;

const TRAIN: Mode = Mode::Train {
    update_running_stats: true,
};
const TRAIN_FROZEN_STATS: Mode = Mode::Train {
    update_running_stats: false,
};

/// Two generators, two discriminators, and one optimizer state each.
/// `g_b` maps the raw domain `a` to the processed domain `b`; `g_a` maps back.
/// `d_a` scores domain `a` and `d_b` scores domain `b`.
#[derive(Clone, Debug)]
pub struct CycleGanState<T> {
    pub g_a: Generator<T>,
    pub g_b: Generator<T>,
    pub d_a: Discriminator<T>,
    pub d_b: Discriminator<T>,
    pub opt_g_a: AdamState<T>,
    pub opt_g_b: AdamState<T>,
    pub opt_d_a: AdamState<T>,
    pub opt_d_b: AdamState<T>,
}

impl<T: Scalar> CycleGanState<T> {
    /// Both generators share `generator`; each network gets its own seed
    /// derived from `seed`.
    pub fn new(generator: GeneratorConfig, discriminator: DiscriminatorConfig, seed: u64) -> Result<Self> {
        let g_a = Generator::new(generator.clone(), seed.wrapping_mul(4))?;
        let g_b = Generator::new(generator, seed.wrapping_mul(4).wrapping_add(1))?;
        let d_a = Discriminator::new(discriminator.clone(), seed.wrapping_mul(4).wrapping_add(2))?;
        let d_b = Discriminator::new(discriminator, seed.wrapping_mul(4).wrapping_add(3))?;
        Ok(CycleGanState {
            opt_g_a: AdamState::new(g_a.params()),
            opt_g_b: AdamState::new(g_b.params()),
            opt_d_a: AdamState::new(d_a.params()),
            opt_d_b: AdamState::new(d_b.params()),
            g_a,
            g_b,
            d_a,
            d_b,
        })
    }

    /// The raw-to-processed generator.
    pub fn mimic(&self) -> &Generator<T> {
        &self.g_b
    }
}

/// Sub-steps of one black-box step, in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    DiscriminatorA,
    DiscriminatorB,
    Generators,
}

#[derive(Clone, Debug)]
pub struct BlackboxTrainer<T> {
    pub state: CycleGanState<T>,
    pub config: TrainingConfig,
    pub history: TrainingHistory,
    pub step: usize,
    saturated_a: usize,
    saturated_b: usize,
}

fn scaled<T: Scalar>(t: &Tensor<T>, k: f64) -> Tensor<T> {
    let mut t = t.clone();
    t.scale(T::of(k));
    t
}

/// Scores real and fake samples in one batch so normalization statistics
/// are shared; returns `(real scores, fake scores, cache)`.
#[allow(clippy::type_complexity)]
fn score_jointly<T: Scalar>(
    d: &Discriminator<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    mode: Mode,
) -> Result<(Tensor<T>, Tensor<T>, <Discriminator<T> as Network<T>>::Cache)> {
    let (s, c) = d.forward_with_cache(&Tensor::concat_batch(&[real, fake])?, mode)?;
    let n = real.batch();
    Ok((s.slice_batch(0, n)?, s.slice_batch(n, fake.batch())?, c))
}

/// One discriminator update on real samples against detached fakes.
fn discriminator_update<T: Scalar>(
    d: &mut Discriminator<T>,
    opt: &mut AdamState<T>,
    config: &TrainingConfig,
    real: &Tensor<T>,
    fake: &Tensor<T>,
) -> Result<(f64, usize)> {
    let (sr, sf, cache) = score_jointly(d, real, fake, TRAIN)?;
    let loss = config.adversarial_kind.discriminator_loss(&sr, &sf);
    if config.freeze_discriminators {
        return Ok((loss.value.as_f64(), loss.clamped));
    }
    d.params_mut().zero_grad();
    d.backward(&cache, &Tensor::concat_batch(&[&loss.grad_real, &loss.grad_fake])?)?;
    d.commit_running_stats(&cache);
    adam_step(d.params_mut(), opt, &config.discriminator_adam)?;
    Ok((loss.value.as_f64(), loss.clamped))
}

/// Gradient with respect to `fake` of the generator adversarial term, with
/// `fake` scored alongside `real`.
fn adversarial_gradient<T: Scalar>(
    d: &mut Discriminator<T>,
    kind: super::AdversarialKind,
    weight: f64,
    real: &Tensor<T>,
    fake: &Tensor<T>,
) -> Result<(super::GeneratorLoss<T>, Tensor<T>)> {
    let (sr, sf, cache) = score_jointly(d, real, fake, TRAIN_FROZEN_STATS)?;
    let loss = kind.generator_loss(&sf);
    let zeros = Tensor::zeros(sr.shape());
    let g = d.backward(&cache, &Tensor::concat_batch(&[&zeros, &scaled(&loss.grad_fake, weight)])?)?;
    let n = real.batch();
    Ok((loss, g.slice_batch(n, fake.batch())?))
}

impl<T: Scalar> BlackboxTrainer<T> {
    pub fn new(state: CycleGanState<T>, config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        if config.regime != Regime::Blackbox {
            return Err(Error::InvalidConfig(vec!["regime must be blackbox for unpaired training".into()]));
        }
        Ok(BlackboxTrainer {
            state,
            config,
            history: TrainingHistory::with_label("total"),
            step: 0,
            saturated_a: 0,
            saturated_b: 0,
        })
    }

    pub fn step(&mut self, data: &UnpairedData<T>) -> Result<StepRecord> {
        self.step_with_audit(data, |_, _| {})
    }

    /// One step; `audit` sees the state after each [`Phase`].
    pub fn step_with_audit(
        &mut self,
        data: &UnpairedData<T>,
        mut audit: impl FnMut(Phase, &CycleGanState<T>),
    ) -> Result<StepRecord> {
        let started = Instant::now();
        let step = self.step;
        let cfg = &self.config;
        let mut rng = step_rng(cfg.seed, step);
        let ((a, ids_a), (b, ids_b)) = data.sample(cfg.batch_size, cfg.crop, &mut rng)?;
        let batch = || format!("raw {ids_a:?} processed {ids_b:?}");
        let s = &mut self.state;

        let (fake_b, c_gb_a) = s.g_b.forward_with_cache(&a, TRAIN)?;
        let (fake_a, c_ga_b) = s.g_a.forward_with_cache(&b, TRAIN)?;

        let (d_a_loss, clamp_da) = discriminator_update(&mut s.d_a, &mut s.opt_d_a, cfg, &a, &fake_a)?;
        check_loss(d_a_loss, step, batch)?;
        audit(Phase::DiscriminatorA, s);
        let (d_b_loss, clamp_db) = discriminator_update(&mut s.d_b, &mut s.opt_d_b, cfg, &b, &fake_b)?;
        check_loss(d_b_loss, step, batch)?;
        audit(Phase::DiscriminatorB, s);

        for p in [s.g_a.params_mut(), s.g_b.params_mut(), s.d_a.params_mut(), s.d_b.params_mut()] {
            p.zero_grad();
        }
        let (rec_a, c_ga_fb) = s.g_a.forward_with_cache(&fake_b, TRAIN_FROZEN_STATS)?;
        let (rec_b, c_gb_fa) = s.g_b.forward_with_cache(&fake_a, TRAIN_FROZEN_STATS)?;
        let (wa, lambda) = (cfg.adversarial_weight, cfg.cycle_weight);
        let (adv_b, g_adv_fb) = adversarial_gradient(&mut s.d_b, cfg.adversarial_kind, wa, &b, &fake_b)?;
        let (adv_a, g_adv_fa) = adversarial_gradient(&mut s.d_a, cfg.adversarial_kind, wa, &a, &fake_a)?;
        let (cyc_a, g_rec_a) = batch_distance(&rec_a, &a, cfg.distance)?;
        let (cyc_b, g_rec_b) = batch_distance(&rec_b, &b, cfg.distance)?;
        let total = T::of(wa) * (adv_a.value + adv_b.value) + T::of(lambda) * (cyc_a + cyc_b);
        check_loss(total, step, batch)?;

        // Domain a -> b -> a.
        let mut g_fake_b = g_adv_fb;
        g_fake_b.add_assign(&s.g_a.backward(&c_ga_fb, &scaled(&g_rec_a, lambda))?)?;
        s.g_b.backward(&c_gb_a, &g_fake_b)?;
        // Domain b -> a -> b.
        let mut g_fake_a = g_adv_fa;
        g_fake_a.add_assign(&s.g_b.backward(&c_gb_fa, &scaled(&g_rec_b, lambda))?)?;
        s.g_a.backward(&c_ga_b, &g_fake_a)?;

        s.g_b.commit_running_stats(&c_gb_a);
        s.g_a.commit_running_stats(&c_ga_b);
        adam_step(s.g_a.params_mut(), &mut s.opt_g_a, &cfg.generator_adam)?;
        adam_step(s.g_b.params_mut(), &mut s.opt_g_b, &cfg.generator_adam)?;
        audit(Phase::Generators, s);

        self.saturated_a = if adv_a.saturated { self.saturated_a + 1 } else { 0 };
        self.saturated_b = if adv_b.saturated { self.saturated_b + 1 } else { 0 };
        self.step += 1;
        let record = StepRecord {
            step,
            loss: total.as_f64(),
            d_a: Some(d_a_loss),
            d_b: Some(d_b_loss),
            g_adv_a: Some(adv_a.value.as_f64()),
            g_adv_b: Some(adv_b.value.as_f64()),
            cycle_a: Some(cyc_a.as_f64()),
            cycle_b: Some(cyc_b.as_f64()),
            clamp_events: clamp_da + clamp_db + adv_a.clamped + adv_b.clamped,
        };
        self.history.push(record.clone(), started.elapsed().as_secs_f64() * 1e3);
        let window = self.config.divergence_window;
        if window > 0 && self.saturated_a.max(self.saturated_b) >= window {
            return Err(Error::Divergence { step, window });
        }
        Ok(record)
    }

    pub fn run(&mut self, data: &UnpairedData<T>) -> Result<()> {
        while self.step < self.config.steps {
            self.step(data)?;
        }
        Ok(())
    }

    pub fn to_archive(&self) -> Archive {
        let s = &self.state;
        let mut a = Archive::new::<T>(
            Regime::Blackbox,
            self.step,
            self.config.clone(),
            Some(s.g_a.config().clone()),
            Some(s.d_a.config().clone()),
        );
        a.push_params("g_a", s.g_a.params());
        a.push_params("g_b", s.g_b.params());
        a.push_params("d_a", s.d_a.params());
        a.push_params("d_b", s.d_b.params());
        a.push_adam("g_a.adam", &s.opt_g_a);
        a.push_adam("g_b.adam", &s.opt_g_b);
        a.push_adam("d_a.adam", &s.opt_d_a);
        a.push_adam("d_b.adam", &s.opt_d_b);
        a
    }

    /// Restores the full state. Divergence counters restart at zero.
    pub fn from_archive(archive: &Archive) -> Result<Self> {
        let h = &archive.header;
        if h.regime != Regime::Blackbox {
            return Err(Error::Format("checkpoint is not a blackbox run".into()));
        }
        let (gc, dc) = match (&h.generator, &h.discriminator) {
            (Some(g), Some(d)) => (g.clone(), d.clone()),
            _ => return Err(Error::Format("checkpoint lacks generator or discriminator config".into())),
        };
        let mut s = CycleGanState::new(gc, dc, 0)?;
        archive.restore_params("g_a", s.g_a.params_mut())?;
        archive.restore_params("g_b", s.g_b.params_mut())?;
        archive.restore_params("d_a", s.d_a.params_mut())?;
        archive.restore_params("d_b", s.d_b.params_mut())?;
        archive.restore_adam("g_a.adam", &mut s.opt_g_a)?;
        archive.restore_adam("g_b.adam", &mut s.opt_g_b)?;
        archive.restore_adam("d_a.adam", &mut s.opt_d_a)?;
        archive.restore_adam("d_b.adam", &mut s.opt_d_b)?;
        let mut t = BlackboxTrainer::new(s, h.training.clone())?;
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

/// Runs `config.steps` black-box steps from `state`.
pub fn train_blackbox<T: Scalar>(
    state: CycleGanState<T>,
    data: &UnpairedData<T>,
    config: TrainingConfig,
) -> Result<BlackboxTrainer<T>> {
    let mut t = BlackboxTrainer::new(state, config)?;
    t.run(data)?;
    Ok(t)
}
