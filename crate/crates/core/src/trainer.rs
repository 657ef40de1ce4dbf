//! WGAN-GP losses and the coarse-to-fine training loop.
//!
//! Each stage alternates critic updates (Wasserstein loss plus gradient
//! penalty on random interpolates) with one generator update whose loss is
//! the adversarial term on a random-noise sample plus `lambda` times the mean
//! reconstruction error of every (keyed noise, target) pair. With secrets
//! the targets are the secrets; without them the single target is the cover
//! under a fixed random noise set, which yields the plain (original) model.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::keynoise::{noise_pyramid, noise_pyramid_from_seed, EmbeddingKey, NoisePyramid};
use crate::netarch::{
    self, image_tensor, noise_vars, stage_seed, BoundCritic, BoundGenerator, Critic, Generator,
    StegoModel,
};
use crate::pyramid::{build_pyramid, dequantize, resize, ImageF, ImagePyramid, ImageU8};
use crate::tensor::{Real, Tensor};

/// Most secrets a single model is trained to hold.
pub const MAX_SECRETS: usize = 4;
/// Losses above this magnitude abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Training hyper-parameters. Defaults are the full-size schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the reconstruction term.
    pub lambda: f64,
    pub gp_coeff: f64,
    pub lr: f64,
    /// Multiplier applied to the learning rate once `decay_at_fraction` of a
    /// stage's iterations are done.
    pub lr_decay: f64,
    pub decay_at_fraction: f64,
    pub iters_per_stage: usize,
    pub stages: usize,
    pub coarsest_min_dim: usize,
    pub trainable_block_window: usize,
    pub critic_steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub hidden_width: usize,
    /// Fine-level noise amplitude is this times the reconstruction RMSE of
    /// the level below.
    pub noise_amp_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            gp_coeff: 0.1,
            lr: 5e-4,
            lr_decay: 0.1,
            decay_at_fraction: 0.8,
            iters_per_stage: 2000,
            stages: 6,
            coarsest_min_dim: 25,
            trainable_block_window: 3,
            critic_steps: 3,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            hidden_width: netarch::HIDDEN_WIDTH,
            noise_amp_scale: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// CPU-sized profile: 4 stages, 500 iterations per stage (use with
    /// ~64x64 images).
    pub fn reduced() -> Self {
        Self {
            iters_per_stage: 500,
            stages: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_owned()));
        if !(self.lambda > 0.0) {
            return bad("lambda must be > 0");
        }
        if !(self.gp_coeff > 0.0) {
            return bad("gp_coeff must be > 0");
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) {
            return bad("lr and lr_decay must be > 0");
        }
        if !(self.decay_at_fraction > 0.0 && self.decay_at_fraction < 1.0) {
            return bad("decay_at_fraction must lie in (0, 1)");
        }
        if self.iters_per_stage == 0 || self.stages == 0 || self.critic_steps == 0 {
            return bad("iters_per_stage, stages and critic_steps must be >= 1");
        }
        if !(self.noise_amp_scale > 0.0) {
            return bad("noise_amp_scale must be > 0");
        }
        if self.trainable_block_window == 0 || self.hidden_width == 0 {
            return bad("trainable_block_window and hidden_width must be >= 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        Ok(())
    }

    /// First iteration (0-based) that runs at the decayed rate.
    pub fn decay_iteration(&self) -> usize {
        (self.decay_at_fraction * self.iters_per_stage as f64).ceil() as usize
    }

    /// Learning rate at iteration `iter` of a stage.
    pub fn lr_at(&self, iter: usize) -> f64 {
        if iter >= self.decay_iteration() {
            self.lr * self.lr_decay
        } else {
            self.lr
        }
    }
}

/// Adam with per-tensor moment buffers.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn update<T: Real>(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], lr: f64) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gi = gi.to_f64().unwrap();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let upd = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                *w = *w - T::lit(upd);
            }
        }
    }
}

/// Gradient penalty on the tape: `(||grad_x D(x_hat)||_2 - 1)^2` at
/// `x_hat = eps * real + (1 - eps) * fake`, with the gradient of the summed
/// score map taken over the whole image.
pub fn gradient_penalty_on_tape<T: Real>(
    tape: &mut Tape<T>,
    critic: &BoundCritic,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    eps: T,
) -> Var {
    let interp = real.zip_map(fake, |r, f| eps * r + (T::one() - eps) * f);
    let x_hat = tape.leaf(interp, true);
    let scores = critic.forward(tape, x_hat);
    let total = tape.sum_all(scores);
    let g = tape.grad(total, &[x_hat], true)[0];
    match g {
        Some(g) => {
            let sq = tape.mul(g, g);
            let s = tape.sum_all(sq);
            let norm = tape.sqrt(s);
            let d = tape.add_const(norm, -T::one());
            tape.mul(d, d)
        }
        // critic ignores its input: zero gradient, penalty 1
        None => tape.constant(Tensor::scalar(T::one())),
    }
}

/// Penalty value for a concrete critic and image pair.
pub fn gradient_penalty<T: Real>(
    critic: &Critic<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    eps: T,
) -> Result<T> {
    if real.shape() != fake.shape() {
        return Err(Error::dims("real and fake images differ in shape"));
    }
    let mut tape = Tape::new();
    let bound = critic.bind(&mut tape, false);
    let p = gradient_penalty_on_tape(&mut tape, &bound, real, fake, eps);
    let v = tape.value(p).item();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("gradient penalty is {v:?}")));
    }
    Ok(v)
}

/// Critic and generator adversarial losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialLosses<T> {
    pub critic_loss: T,
    pub gen_loss: T,
    pub penalty: T,
}

/// `critic_loss = mean D(fake) - mean D(real) + gp_coeff * penalty`,
/// `gen_loss = -mean D(fake)`.
pub fn adversarial_losses<T: Real>(
    critic: &Critic<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    gp_coeff: T,
    eps: T,
) -> Result<AdversarialLosses<T>> {
    if real.shape() != fake.shape() {
        return Err(Error::dims("real and fake images differ in shape"));
    }
    let mut tape = Tape::new();
    let bound = critic.bind(&mut tape, false);
    let r = tape.constant(real.clone());
    let f = tape.constant(fake.clone());
    let dr = bound.forward(&mut tape, r);
    let df = bound.forward(&mut tape, f);
    let mr = tape.value(dr).data().iter().copied().sum::<T>() / T::from_usize(tape.value(dr).len()).unwrap();
    let mf = tape.value(df).data().iter().copied().sum::<T>() / T::from_usize(tape.value(df).len()).unwrap();
    let p = gradient_penalty_on_tape(&mut tape, &bound, real, fake, eps);
    let penalty = tape.value(p).item();
    Ok(AdversarialLosses {
        critic_loss: mf - mr + gp_coeff * penalty,
        gen_loss: -mf,
        penalty,
    })
}

/// MSE between the generator's output at stage `n` under `noise` and
/// `target`, on the tape.
pub fn reconstruction_on_tape<T: Real>(
    tape: &mut Tape<T>,
    gen: &BoundGenerator,
    noise: &NoisePyramid,
    amps: &[f64],
    dims: &[(usize, usize)],
    target: &Tensor<T>,
    n: usize,
) -> Var {
    let z = noise_vars(tape, noise);
    let out = gen.forward(tape, &z, amps, dims, n);
    let t = tape.constant(target.clone());
    tape.mse(out, t)
}

/// Reconstruction error of `model` at stage `n` for one keyed noise set.
pub fn reconstruction_loss(
    model: &StegoModel,
    keyed_noise: &NoisePyramid,
    target: &ImageF,
    n: usize,
) -> Result<f64> {
    multi_reconstruction_loss(model, std::slice::from_ref(keyed_noise), std::slice::from_ref(target), n)
}

/// Mean of the per-pair reconstruction errors.
pub fn multi_reconstruction_loss(
    model: &StegoModel,
    noises: &[NoisePyramid],
    targets: &[ImageF],
    n: usize,
) -> Result<f64> {
    if noises.is_empty() || noises.len() != targets.len() {
        return Err(Error::invalid(format!(
            "need matching non-empty noise/target lists, got {} and {}",
            noises.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (z, target) in noises.iter().zip(targets) {
        let out = netarch::generator_forward(model, z, n)?;
        if out.dims() != target.dims() {
            return Err(Error::dims(format!(
                "target is {:?}, stage {n} output is {:?}",
                target.dims(),
                out.dims()
            )));
        }
        let mse = out
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
            .sum::<f64>()
            / out.data().len() as f64;
        total += mse;
    }
    Ok(total / noises.len() as f64)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub stage: usize,
    pub iteration: usize,
    pub lr: f64,
    pub critic_loss: f64,
    pub gen_adv_loss: f64,
    pub rec_loss: f64,
    pub penalty: f64,
}

/// Per-stage outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    pub iterations: usize,
    pub noise_amp: f64,
    pub rec_loss_first: f64,
    pub rec_loss_last: f64,
    pub seconds: f64,
}

/// Hooks for progress logging and checkpointing.
pub trait TrainObserver {
    fn on_iteration(&mut self, _record: &IterationRecord, _model: &StegoModel) {}
    fn on_stage_end(&mut self, _summary: &StageSummary, _model: &StegoModel) {}
}

/// Observer that does nothing.
pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

fn check_loss(v: f64, stage: usize, iteration: usize, what: &str) -> Result<()> {
    if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
        return Err(Error::Diverged {
            stage,
            iteration,
            detail: format!("{what} = {v}"),
        });
    }
    Ok(())
}

/// Training state for one model: generator, critic, targets and the fixed
/// reconstruction noise.
pub struct Trainer {
    pub model: StegoModel,
    pub critic: Critic<f32>,
    cover: ImagePyramid,
    targets: Vec<ImagePyramid>,
    rec_noises: Vec<NoisePyramid>,
    cfg: TrainConfig,
    rng: ChaCha8Rng,
}

impl Trainer {
    /// `targets[t]` is reconstructed from `rec_noises[t]`; every pyramid must
    /// share the cover's dims.
    pub fn new(
        cover: ImagePyramid,
        targets: Vec<ImagePyramid>,
        rec_noises: Vec<NoisePyramid>,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if targets.is_empty() || targets.len() != rec_noises.len() {
            return Err(Error::invalid("need one reconstruction noise per target"));
        }
        let dims = cover.dims();
        for t in &targets {
            if t.dims() != dims {
                return Err(Error::dims("target pyramid dims differ from the cover's"));
            }
        }
        for z in &rec_noises {
            if z.dims() != dims {
                return Err(Error::dims("noise pyramid dims differ from the cover's"));
            }
        }
        let model = StegoModel::new(dims, cover.ratio()).with_width(cfg.hidden_width);
        let critic = Critic::new(cfg.hidden_width, cfg.seed ^ 0xC217_1C00);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            model,
            critic,
            cover,
            targets,
            rec_noises,
            cfg,
            rng,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Scaled mean RMSE between the upsampled stage-`n+1` reconstructions
    /// and the level-`n` targets.
    fn noise_amp_for(&self, n: usize) -> Result<f64> {
        let (h, w) = self.model.level_dims[n];
        let mut acc = 0.0;
        for (z, t) in self.rec_noises.iter().zip(&self.targets) {
            let prev = netarch::generator_forward(&self.model, z, n + 1)?;
            let up = resize(&prev, h, w)?;
            let target = t.level(n);
            let mse = up
                .data()
                .iter()
                .zip(target.data())
                .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                .sum::<f64>()
                / up.data().len() as f64;
            acc += mse.sqrt();
        }
        Ok(self.cfg.noise_amp_scale * acc / self.targets.len() as f64)
    }

    fn current_rec_loss(&self, n: usize) -> Result<f64> {
        let targets: Vec<ImageF> = self.targets.iter().map(|t| t.level(n).clone()).collect();
        multi_reconstruction_loss(&self.model, &self.rec_noises, &targets, n)
    }

    /// Grows the generator to stage `n` and trains it.
    pub fn train_stage(&mut self, n: usize, observer: &mut dyn TrainObserver) -> Result<StageSummary> {
        let started = Instant::now();
        let coarsest = self.model.coarsest();
        if n < coarsest {
            let amp = self.noise_amp_for(n)?;
            self.model.noise_amps[n] = amp as f32;
        }
        netarch::init_stage(&mut self.model, n, stage_seed(self.cfg.seed, n))?;

        let dims = self.model.level_dims.clone();
        let amps = self.model.amps_f64();
        let real: Tensor<f32> = image_tensor(self.cover.level(n));
        let targets: Vec<Tensor<f32>> = self.targets.iter().map(|t| image_tensor(t.level(n))).collect();
        let mask = self.model.generator.trainable_mask(self.cfg.trainable_block_window);
        let mut opt_g = Adam::new(self.cfg.adam_beta1, self.cfg.adam_beta2);
        let mut opt_d = Adam::new(self.cfg.adam_beta1, self.cfg.adam_beta2);
        let gp_coeff = self.cfg.gp_coeff as f32;
        let lambda = self.cfg.lambda as f32;

        let rec_first = self.current_rec_loss(n)?;
        let mut rec_last = rec_first;
        for iter in 0..self.cfg.iters_per_stage {
            let lr = self.cfg.lr_at(iter);
            let noise = noise_pyramid_from_seed(self.rng.gen(), &dims);

            let fake = {
                let mut tape = Tape::<f32>::new();
                let g = self.model.generator.bind_frozen(&mut tape);
                let z = noise_vars(&mut tape, &noise);
                let out = g.forward(&mut tape, &z, &amps, &dims, n);
                tape.value(out).clone()
            };

            let mut critic_loss = 0.0;
            let mut penalty = 0.0;
            for _ in 0..self.cfg.critic_steps {
                let eps: f32 = self.rng.gen();
                let mut tape = Tape::<f32>::new();
                let d = self.critic.bind(&mut tape, true);
                let r = tape.constant(real.clone());
                let f = tape.constant(fake.clone());
                let dr = d.forward(&mut tape, r);
                let df = d.forward(&mut tape, f);
                let mr = tape.mean_all(dr);
                let mf = tape.mean_all(df);
                let wdist = tape.sub(mf, mr);
                let gp = gradient_penalty_on_tape(&mut tape, &d, &real, &fake, eps);
                let gp_scaled = tape.scale(gp, gp_coeff);
                let loss = tape.add(wdist, gp_scaled);
                critic_loss = f64::from(tape.value(loss).item());
                penalty = f64::from(tape.value(gp).item());
                check_loss(critic_loss, n, iter, "critic loss")?;
                let params: Vec<Var> = d.params().to_vec();
                let grads = tape.grad_tensors(loss, &params);
                if grads.iter().any(|g| !g.all_finite()) {
                    return Err(Error::Diverged {
                        stage: n,
                        iteration: iter,
                        detail: "non-finite critic gradient".into(),
                    });
                }
                opt_d.update(&mut self.critic.params_mut(), &grads, lr);
            }

            let mut tape = Tape::<f32>::new();
            let g = self.model.generator.bind(&mut tape, &mask);
            let d = self.critic.bind(&mut tape, false);
            let z = noise_vars(&mut tape, &noise);
            let fake_var = g.forward(&mut tape, &z, &amps, &dims, n);
            let df = d.forward(&mut tape, fake_var);
            let mf = tape.mean_all(df);
            let adv = tape.scale(mf, -1.0);
            let mut rec_terms = Vec::with_capacity(targets.len());
            for (zr, target) in self.rec_noises.iter().zip(&targets) {
                rec_terms.push(reconstruction_on_tape(&mut tape, &g, zr, &amps, &dims, target, n));
            }
            let mut rec = rec_terms[0];
            for &t in &rec_terms[1..] {
                rec = tape.add(rec, t);
            }
            let rec = tape.scale(rec, 1.0 / rec_terms.len() as f32);
            let rec_weighted = tape.scale(rec, lambda);
            let loss = tape.add(adv, rec_weighted);
            let gen_adv = f64::from(tape.value(adv).item());
            rec_last = f64::from(tape.value(rec).item());
            check_loss(f64::from(tape.value(loss).item()), n, iter, "generator loss")?;
            let trainable: Vec<Var> = g
                .params()
                .iter()
                .zip(&mask)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .collect();
            let grads = tape.grad_tensors(loss, &trainable);
            if grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::Diverged {
                    stage: n,
                    iteration: iter,
                    detail: "non-finite generator gradient".into(),
                });
            }
            drop(tape);
            let mut params: Vec<&mut Tensor<f32>> = self
                .model
                .generator
                .params_mut()
                .into_iter()
                .zip(&mask)
                .filter(|(_, &m)| m)
                .map(|(p, _)| p)
                .collect();
            opt_g.update(&mut params, &grads, lr);

            observer.on_iteration(
                &IterationRecord {
                    stage: n,
                    iteration: iter,
                    lr,
                    critic_loss,
                    gen_adv_loss: gen_adv,
                    rec_loss: rec_last,
                    penalty,
                },
                &self.model,
            );
        }
        // loss of the final weights, not of the last pre-update step
        if self.cfg.iters_per_stage > 0 {
            rec_last = self.current_rec_loss(n)?;
        }
        let summary = StageSummary {
            stage: n,
            iterations: self.cfg.iters_per_stage,
            noise_amp: f64::from(self.model.noise_amps[n]),
            rec_loss_first: rec_first,
            rec_loss_last: rec_last,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "stage {n}: rec loss {:.5} -> {:.5}, amp {:.4}, {:.1}s",
            summary.rec_loss_first,
            summary.rec_loss_last,
            summary.noise_amp,
            summary.seconds
        );
        observer.on_stage_end(&summary, &self.model);
        Ok(summary)
    }

    /// Trains every stage coarse-to-fine.
    pub fn run(mut self, observer: &mut dyn TrainObserver) -> Result<StegoModel> {
        for n in (0..self.model.level_dims.len()).rev() {
            self.train_stage(n, observer)?;
        }
        Ok(self.model)
    }
}

fn check_keys(secrets: &[ImageU8], keys: &[EmbeddingKey]) -> Result<()> {
    if secrets.len() != keys.len() {
        return Err(Error::invalid(format!(
            "{} secrets but {} keys",
            secrets.len(),
            keys.len()
        )));
    }
    if secrets.len() > MAX_SECRETS {
        return Err(Error::invalid(format!(
            "at most {MAX_SECRETS} secrets per model, got {}",
            secrets.len()
        )));
    }
    for (i, a) in keys.iter().enumerate() {
        if keys[..i].iter().any(|b| b.seed() == a.seed()) {
            return Err(Error::invalid(format!("key {i} duplicates an earlier key")));
        }
    }
    Ok(())
}

/// Builds the trainer for `cover` and the given secrets.
pub fn prepare(
    cover: &ImageU8,
    secrets: &[ImageU8],
    keys: &[EmbeddingKey],
    cfg: &TrainConfig,
) -> Result<Trainer> {
    check_keys(secrets, keys)?;
    cfg.validate()?;
    let cover_f = dequantize(cover);
    let cover_pyr = build_pyramid(&cover_f, cfg.stages, cfg.coarsest_min_dim)?;
    let dims = cover_pyr.dims();
    let (targets, noises) = if secrets.is_empty() {
        let z = noise_pyramid_from_seed(cfg.seed ^ 0x5245_434F_4E00_0000, &dims);
        (vec![cover_pyr.clone()], vec![z])
    } else {
        let (h, w) = cover.dims();
        let mut targets = Vec::with_capacity(secrets.len());
        let mut noises = Vec::with_capacity(secrets.len());
        for (s, k) in secrets.iter().zip(keys) {
            let sf = resize(&dequantize(s), h, w)?;
            targets.push(build_pyramid(&sf, cfg.stages, cfg.coarsest_min_dim)?);
            noises.push(noise_pyramid(k, &dims)?);
        }
        (targets, noises)
    };
    Trainer::new(cover_pyr, targets, noises, cfg.clone())
}

/// Trains a model hiding `secrets` (one key each) in a generator of
/// `cover`. With no secrets this trains the plain model.
pub fn train(
    cover: &ImageU8,
    secrets: &[ImageU8],
    keys: &[EmbeddingKey],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<StegoModel> {
    prepare(cover, secrets, keys, cfg)?.run(observer)
}

/// Generic-precision helpers used by the gradient checks.
pub mod check {
    use super::*;

    /// Reconstruction MSE of `gen` at stage `n`.
    pub fn reconstruction_value<T: Real>(
        gen: &Generator<T>,
        noise: &NoisePyramid,
        amps: &[f64],
        dims: &[(usize, usize)],
        target: &Tensor<T>,
        n: usize,
    ) -> T {
        let mut tape = Tape::new();
        let g = gen.bind_frozen(&mut tape);
        let l = reconstruction_on_tape(&mut tape, &g, noise, amps, dims, target, n);
        tape.value(l).item()
    }

    /// Reconstruction MSE and its gradient for every generator parameter.
    pub fn reconstruction_grad<T: Real>(
        gen: &Generator<T>,
        noise: &NoisePyramid,
        amps: &[f64],
        dims: &[(usize, usize)],
        target: &Tensor<T>,
        n: usize,
    ) -> (T, Vec<Tensor<T>>) {
        let mut tape = Tape::new();
        let mask = vec![true; gen.params().len()];
        let g = gen.bind(&mut tape, &mask);
        let l = reconstruction_on_tape(&mut tape, &g, noise, amps, dims, target, n);
        let params = g.params().to_vec();
        let grads = tape.grad_tensors(l, &params);
        (tape.value(l).item(), grads)
    }

    /// Critic loss (Wasserstein term plus scaled penalty) and its gradient
    /// for every critic parameter.
    pub fn critic_loss_grad<T: Real>(
        critic: &Critic<T>,
        real: &Tensor<T>,
        fake: &Tensor<T>,
        gp_coeff: T,
        eps: T,
    ) -> (T, Vec<Tensor<T>>) {
        let mut tape = Tape::new();
        let d = critic.bind(&mut tape, true);
        let r = tape.constant(real.clone());
        let f = tape.constant(fake.clone());
        let dr = d.forward(&mut tape, r);
        let df = d.forward(&mut tape, f);
        let mr = tape.mean_all(dr);
        let mf = tape.mean_all(df);
        let w = tape.sub(mf, mr);
        let gp = gradient_penalty_on_tape(&mut tape, &d, real, fake, eps);
        let gp = tape.scale(gp, gp_coeff);
        let loss = tape.add(w, gp);
        let params = d.params().to_vec();
        let grads = tape.grad_tensors(loss, &params);
        (tape.value(loss).item(), grads)
    }

    /// Critic input gradient at `x` (gradient of the summed score map).
    pub fn critic_input_grad<T: Real>(critic: &Critic<T>, x: &Tensor<T>) -> Tensor<T> {
        let mut tape = Tape::new();
        let d = critic.bind(&mut tape, false);
        let xv = tape.leaf(x.clone(), true);
        let s = d.forward(&mut tape, xv);
        let s = tape.sum_all(s);
        tape.grad_tensors(s, &[xv]).remove(0)
    }

    /// Sum of the critic's score map at `x`.
    pub fn critic_sum<T: Real>(critic: &Critic<T>, x: &Tensor<T>) -> T {
        let mut tape = Tape::new();
        let d = critic.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let s = d.forward(&mut tape, xv);
        tape.value(s).data().iter().copied().sum()
    }
}
