use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tape::Tape;
use super::tensor::Tensor;
use super::unet::Denoiser;
use super::NetError;
use crate::dataset::{pad_batch, BatchPolicy, BatchSampler, DatasetFile};
use crate::diffusion::{forward_diffuse, mix_seed, rng_for, NoiseSchedule, RealImage};

/// Mean squared error over all pixels.
pub fn loss_mse(out: &RealImage, tgt: &RealImage) -> Result<f64, NetError> {
    if out.dims() != tgt.dims() {
        return Err(NetError::Shape(format!("loss operands {:?} vs {:?}", out.dims(), tgt.dims())));
    }
    let n = out.values().len() as f64;
    Ok(out.values().iter().zip(tgt.values()).map(|(o, t)| (t - o) * (t - o)).sum::<f64>() / n)
}

/// Mean squared error over pixels whose mask is set.
pub fn masked_loss_mse(out: &RealImage, tgt: &RealImage, mask: &[bool]) -> Result<f64, NetError> {
    if out.dims() != tgt.dims() || mask.len() != out.values().len() {
        return Err(NetError::Shape("masked loss operands disagree in size".into()));
    }
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = out
        .values()
        .iter()
        .zip(tgt.values())
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((o, t), _)| (t - o) * (t - o))
        .sum();
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, grad_clip: Some(1.0) }
    }
}

/// Adam moment estimates for one parameter set.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: OptimizerConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    steps: u64,
}

impl Adam {
    pub fn new(config: OptimizerConfig, params: &[Tensor]) -> Self {
        let zeros = |p: &[Tensor]| p.iter().map(|t| Tensor::zeros(&t.shape)).collect();
        Self { config, m: zeros(params), v: zeros(params), steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &mut [Tensor]) {
        let c = self.config;
        if let Some(clip) = c.grad_clip {
            let norm = grads.iter().flat_map(|g| g.data.iter()).map(|v| v * v).sum::<f64>().sqrt();
            if norm > clip {
                let s = clip / norm;
                grads.iter_mut().for_each(|g| g.data.iter_mut().for_each(|v| *v *= s));
            }
        }
        self.steps += 1;
        let bc1 = 1.0 - c.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - c.beta2.powi(self.steps as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads.iter()).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = c.beta1 * m.data[i] + (1.0 - c.beta1) * gi;
                v.data[i] = c.beta2 * v.data[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                p.data[i] -= c.learning_rate * mhat / (vhat.sqrt() + c.epsilon);
            }
        }
    }
}

/// A network plus its optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Denoiser,
    pub optimizer: Adam,
}

impl Trainer {
    pub fn new(model: Denoiser, config: OptimizerConfig) -> Self {
        let optimizer = Adam::new(config, model.params().tensors());
        Self { model, optimizer }
    }

    /// Loss and parameter gradients for explicit `(x_t, t, ε)` triples, averaged
    /// over the batch. Masks restrict each sample's loss to mask-set pixels.
    pub fn loss_and_grads(
        &self,
        inputs: &[(RealImage, usize, RealImage)],
        masks: Option<&[Vec<bool>]>,
    ) -> Result<(f64, Vec<Tensor>), NetError> {
        if inputs.is_empty() {
            return Err(NetError::EmptyBatch);
        }
        let params = self.model.params().tensors();
        let mut grads: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(&p.shape)).collect();
        let batch = inputs.len() as f64;
        let mut total = 0.0;
        for (i, (x_t, t, eps)) in inputs.iter().enumerate() {
            let mut tape = Tape::new(params);
            let trace = self.model.forward(&mut tape, x_t, *t)?;
            let out = &tape.value(trace.output).data;
            let mask = masks.map(|m| &m[i]);
            let count = mask.map_or(out.len(), |m| m.iter().filter(|&&b| b).count()).max(1) as f64;
            let mut seed = vec![0.0; out.len()];
            let mut loss = 0.0;
            for (j, (o, e)) in out.iter().zip(eps.values()).enumerate() {
                if mask.is_some_and(|m| !m[j]) {
                    continue;
                }
                let d = o - e;
                loss += d * d;
                seed[j] = 2.0 * d / count / batch;
            }
            total += loss / count;
            let shape = tape.value(trace.output).shape.clone();
            tape.backward(trace.output, Tensor::from_vec(&shape, seed), &mut grads);
        }
        Ok((total / batch, grads))
    }

    /// One optimization step on clean padded images `x0` (all the same size,
    /// sides multiples of 8). For each image draws t ~ U{1..T} and ε ~ N(0, I)
    /// from `seed`, regresses ε_θ(x_t, t) onto ε and applies Adam. Returns the
    /// pre-update batch loss.
    pub fn train_step(
        &mut self,
        x0: &[RealImage],
        masks: Option<&[Vec<bool>]>,
        schedule: &NoiseSchedule,
        seed: u64,
    ) -> Result<f64, NetError> {
        if x0.is_empty() {
            return Err(NetError::EmptyBatch);
        }
        let dims = x0[0].dims();
        if x0.iter().any(|x| x.dims() != dims) {
            return Err(NetError::Shape("batch images must share one canvas size".into()));
        }
        if let Some(m) = masks {
            if m.len() != x0.len() || m.iter().any(|mm| mm.len() != dims.0 * dims.1) {
                return Err(NetError::Shape("one mask per image, matching its size".into()));
            }
        }
        if schedule.timesteps() != self.model.timesteps() {
            return Err(NetError::Config(format!(
                "schedule has {} steps, network was built for {}",
                schedule.timesteps(),
                self.model.timesteps()
            )));
        }
        let mut rng = rng_for(seed, 0);
        let mut inputs = Vec::with_capacity(x0.len());
        for x in x0 {
            let t = rng.gen_range(1..=schedule.timesteps());
            let eps_values = (0..dims.0 * dims.1).map(|_| rng.sample(StandardNormal)).collect();
            let eps = RealImage::from_values(dims.0, dims.1, eps_values).expect("sized");
            let x_t = forward_diffuse(x, t, &eps, schedule).map_err(|e| NetError::Shape(e.to_string()))?;
            inputs.push((x_t, t, eps));
        }
        let (loss, mut grads) = self.loss_and_grads(&inputs, masks)?;
        if !loss.is_finite() {
            return Err(NetError::Divergence { step: self.optimizer.steps(), loss });
        }
        self.optimizer.update(self.model.params_mut().tensors_mut(), &mut grads);
        Ok(loss)
    }
}

/// Settings of a training run over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub steps: u64,
    pub batch: usize,
    pub seed: u64,
    pub policy: BatchPolicy,
    /// Restrict the loss to cells of the original grids instead of the whole canvas.
    pub masked_loss: bool,
    pub lr_schedule: LrSchedule,
}

/// How the learning rate evolves over a [`fit`] run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    /// The optimizer's rate throughout.
    #[default]
    Constant,
    /// Half-cosine from the optimizer's rate down to 5 % of it at the last step.
    Cosine,
}

impl LrSchedule {
    /// Multiplier on the base rate at `step` of a `total`-step run.
    pub fn factor(self, step: u64, total: u64) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                let progress = if total > 1 { step as f64 / (total - 1) as f64 } else { 0.0 };
                0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { steps: 5000, batch: 16, seed: 0, policy: BatchPolicy::Stratified, masked_loss: false, lr_schedule: LrSchedule::Constant }
    }
}

/// Everything a training run needs, as read from a JSON config file. Missing
/// fields take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub network: super::DenoiserConfig,
    pub schedule: crate::diffusion::ScheduleConfig,
    pub optimizer: OptimizerConfig,
    pub fit: FitConfig,
}

/// Runs `config.steps` optimization steps on batches drawn from `dataset`,
/// padded to multiples of 8. `on_step(step, loss)` sees every pre-update batch
/// loss; the full loss history is returned.
pub fn fit(
    trainer: &mut Trainer,
    dataset: &DatasetFile,
    schedule: &NoiseSchedule,
    config: &FitConfig,
    mut on_step: impl FnMut(u64, f64),
) -> Result<Vec<f64>, NetError> {
    if config.batch == 0 {
        return Err(NetError::EmptyBatch);
    }
    let sampler = BatchSampler::new(dataset, config.policy).map_err(|_| NetError::EmptyBatch)?;
    let mut rng = rng_for(config.seed, 3);
    let mut history = Vec::with_capacity(config.steps as usize);
    let base_lr = trainer.optimizer.config.learning_rate;
    for step in 0..config.steps {
        trainer.optimizer.config.learning_rate = base_lr * config.lr_schedule.factor(step, config.steps);
        let grids = sampler.sample(config.batch, &mut rng);
        let padded = pad_batch(grids, super::SPATIAL_MULTIPLE).map_err(|e| NetError::Shape(e.to_string()))?;
        let masks = config.masked_loss.then_some(padded.masks.as_slice());
        let loss = trainer.train_step(&padded.images, masks, schedule, mix_seed(config.seed, step));
        trainer.optimizer.config.learning_rate = base_lr;
        let loss = loss?;
        on_step(step, loss);
        history.push(loss);
    }
    Ok(history)
}
