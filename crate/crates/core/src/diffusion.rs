//! DDPM algebra on single-channel real images: linear β schedules, the closed-form
//! forward perturbation, single reverse steps and the full sampling loop.
//!
//! Randomness comes from ChaCha8 streams seeded by `u64`; see [`rng_for`].

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::grid::Grid;

pub const DEFAULT_TIMESTEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    Config(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: (usize, usize), got: (usize, usize) },
    #[error("timestep {t} outside {min}..={max}")]
    Step { t: usize, min: usize, max: usize },
    #[error("noise predictor failed: {0}")]
    Predictor(String),
}

/// Deterministic generator for `(seed, stream)`. Streams are independent ChaCha8
/// sequences sharing one key.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer, used to derive child seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// H×W single-channel real image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl RealImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, values: vec![0.0; height * width] }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self { height, width, values: vec![value; height * width] }
    }

    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self, DiffusionError> {
        if values.len() != height * width {
            return Err(DiffusionError::Shape { expected: (height, width), got: (values.len(), 1) });
        }
        Ok(Self { height, width, values })
    }

    /// Living cells → 1.0, dead → 0.0.
    pub fn from_grid(grid: &Grid) -> Self {
        Self {
            height: grid.height(),
            width: grid.width(),
            values: grid.cells().iter().map(|&c| if c { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// I.i.d. standard normal pixels.
    pub fn standard_normal<R: Rng>(height: usize, width: usize, rng: &mut R) -> Self {
        let values = (0..height * width).map(|_| rng.sample(StandardNormal)).collect();
        Self { height, width, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.width + col] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &RealImage) -> Result<(), DiffusionError> {
        if self.dims() != other.dims() {
            return Err(DiffusionError::Shape { expected: self.dims(), got: other.dims() });
        }
        Ok(())
    }

    /// Text frame: `"H W"` then H rows of space-separated decimals.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.height, self.width);
        for r in 0..self.height {
            let row: Vec<String> = (0..self.width).map(|c| format!("{:.6}", self.get(r, c))).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    pub fn parse_text(text: &str) -> Result<Self, DiffusionError> {
        let bad = |m: &str| DiffusionError::Config(format!("real frame: {m}"));
        let mut lines = text.lines();
        let header: Vec<usize> = lines
            .next()
            .ok_or_else(|| bad("missing header"))?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad("malformed header")))
            .collect::<Result<_, _>>()?;
        let [height, width] = header[..] else { return Err(bad("malformed header")) };
        let mut values = Vec::with_capacity(height * width);
        for line in lines.take(height) {
            for v in line.split_whitespace() {
                values.push(v.parse::<f64>().map_err(|_| bad("bad value"))?);
            }
        }
        Self::from_values(height, width, values)
    }
}

/// Parameters of a linear β schedule, as stored in configs and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { timesteps: DEFAULT_TIMESTEPS, beta_start: DEFAULT_BETA_START, beta_end: DEFAULT_BETA_END }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule, DiffusionError> {
        build_schedule(self.timesteps, self.beta_start, self.beta_end)
    }
}

/// β_1..β_T with α_t = 1 − β_t and ᾱ_t = ∏ α_s (ᾱ_0 = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    /// Length T + 1; index 0 holds ᾱ_0 = 1.
    alpha_bars: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        build_schedule(DEFAULT_TIMESTEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default schedule is valid")
    }
}

/// Linear β from `beta_start` to `beta_end` inclusive.
pub fn build_schedule(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule, DiffusionError> {
    if timesteps == 0 {
        return Err(DiffusionError::Config("T must be at least 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DiffusionError::Config(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
        )));
    }
    let betas = (0..timesteps)
        .map(|i| {
            if timesteps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (timesteps - 1) as f64
            }
        })
        .collect();
    NoiseSchedule::from_betas(betas)
}

impl NoiseSchedule {
    /// Schedule from explicit β values, each in (0, 1).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, DiffusionError> {
        if betas.is_empty() {
            return Err(DiffusionError::Config("T must be at least 1".into()));
        }
        if let Some(b) = betas.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(DiffusionError::Config(format!("beta {b} outside (0, 1)")));
        }
        Ok(Self::from_betas_unchecked(betas))
    }

    /// Accepts any β in [0, 1); β = 0 steps are identities. Used for degenerate
    /// test schedules.
    pub fn from_betas_unchecked(betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        for &a in &alphas {
            let prev = *alpha_bars.last().expect("non-empty");
            alpha_bars.push(prev * a);
        }
        Self { betas, alphas, alpha_bars }
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    /// β_t for 1 ≤ t ≤ T.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// ᾱ_t for 0 ≤ t ≤ T.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_step(&self, t: usize, min: usize) -> Result<(), DiffusionError> {
        if t < min || t > self.timesteps() {
            return Err(DiffusionError::Step { t, min, max: self.timesteps() });
        }
        Ok(())
    }

    /// Sub-sampled plan with `steps` evenly strided timesteps (always including T).
    /// β of each plan step is recomputed so that ᾱ matches at the kept timesteps.
    pub fn respaced(&self, steps: usize) -> Result<SamplingPlan, DiffusionError> {
        let total = self.timesteps();
        if steps == 0 || steps > total {
            return Err(DiffusionError::Config(format!("inference steps must be in 1..={total}, got {steps}")));
        }
        // kept[i] is the original timestep used at plan step i + 1
        let kept: Vec<usize> = (1..=steps).map(|i| (i * total).div_ceil(steps)).collect();
        let mut betas = Vec::with_capacity(steps);
        let mut prev_bar = 1.0;
        for &t in &kept {
            let bar = self.alpha_bar(t);
            betas.push(1.0 - bar / prev_bar);
            prev_bar = bar;
        }
        Ok(SamplingPlan { schedule: NoiseSchedule::from_betas_unchecked(betas), model_timesteps: kept })
    }

    /// Full-length plan: every timestep, unchanged.
    pub fn full_plan(&self) -> SamplingPlan {
        SamplingPlan { schedule: self.clone(), model_timesteps: (1..=self.timesteps()).collect() }
    }
}

/// A (possibly strided) reverse process: plan step `s` uses `schedule` at `s`
/// and calls the noise predictor with `model_timesteps[s - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub schedule: NoiseSchedule,
    pub model_timesteps: Vec<usize>,
}

/// x_t = √ᾱ_t · x0 + √(1 − ᾱ_t) · ε
pub fn forward_diffuse(
    x0: &RealImage,
    t: usize,
    eps: &RealImage,
    schedule: &NoiseSchedule,
) -> Result<RealImage, DiffusionError> {
    x0.same_shape(eps)?;
    schedule.check_step(t, 0)?;
    let bar = schedule.alpha_bar(t);
    let (a, b) = (bar.sqrt(), (1.0 - bar).sqrt());
    let values = x0.values.iter().zip(&eps.values).map(|(x, e)| a * x + b * e).collect();
    Ok(RealImage { height: x0.height, width: x0.width, values })
}

/// x_{t−1} = (x_t − β_t/√(1−ᾱ_t) · ε_pred)/√α_t + √((1−ᾱ_{t−1})/(1−ᾱ_t) · β_t) · ε_inject
///
/// The injected term is dropped at t = 1.
pub fn backward_step(
    x_t: &RealImage,
    t: usize,
    eps_pred: &RealImage,
    eps_inject: &RealImage,
    schedule: &NoiseSchedule,
) -> Result<RealImage, DiffusionError> {
    schedule.check_step(t, 1)?;
    x_t.same_shape(eps_pred)?;
    x_t.same_shape(eps_inject)?;
    let beta = schedule.beta(t);
    let one_minus_bar = 1.0 - schedule.alpha_bar(t);
    // β_t = 0 makes both coefficients vanish; guard the 0/0 when ᾱ_t is also 1.
    let (pred_coef, sigma) = if beta == 0.0 {
        (0.0, 0.0)
    } else {
        let sigma = if t == 1 { 0.0 } else { ((1.0 - schedule.alpha_bar(t - 1)) / one_minus_bar * beta).sqrt() };
        (beta / one_minus_bar.sqrt(), sigma)
    };
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let values = x_t
        .values
        .iter()
        .zip(&eps_pred.values)
        .zip(&eps_inject.values)
        .map(|((x, p), z)| inv_sqrt_alpha * (x - pred_coef * p) + sigma * z)
        .collect();
    Ok(RealImage { height: x_t.height, width: x_t.width, values })
}

/// Clamp to [0, 1] and round half up: living iff the clamped value ≥ 0.5.
pub fn binarize(x: &RealImage) -> Grid {
    let cells = x.values.iter().map(|&v| v.clamp(0.0, 1.0) >= 0.5).collect();
    Grid::from_cells(x.height, x.width, cells).expect("image dims are positive")
}

/// Anything that predicts ε from `(x_t, t)`.
pub trait NoisePredictor {
    fn predict(&self, x_t: &RealImage, t: usize) -> Result<RealImage, DiffusionError>;
}

impl<F> NoisePredictor for F
where
    F: Fn(&RealImage, usize) -> Result<RealImage, DiffusionError>,
{
    fn predict(&self, x_t: &RealImage, t: usize) -> Result<RealImage, DiffusionError> {
        self(x_t, t)
    }
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub grid: Grid,
    /// x_0 before binarization.
    pub final_image: RealImage,
    /// x_T, …, x_0 when requested.
    pub trajectory: Option<Vec<RealImage>>,
}

/// Runs the reverse process from x_T ~ N(0, I) down to x_0 and binarizes.
///
/// x_T uses stream 0 of `seed`; injected noise uses stream 1.
pub fn sample<P: NoisePredictor + ?Sized>(
    predictor: &P,
    height: usize,
    width: usize,
    plan: &SamplingPlan,
    seed: u64,
    keep_trajectory: bool,
) -> Result<SampleOutput, DiffusionError> {
    if height == 0 || width == 0 {
        return Err(DiffusionError::Shape { expected: (1, 1), got: (height, width) });
    }
    let steps = plan.schedule.timesteps();
    let mut x = RealImage::standard_normal(height, width, &mut rng_for(seed, 0));
    let mut noise_rng = rng_for(seed, 1);
    let mut trajectory = keep_trajectory.then(|| vec![x.clone()]);
    let zeros = RealImage::zeros(height, width);
    for s in (1..=steps).rev() {
        let eps_pred = predictor.predict(&x, plan.model_timesteps[s - 1])?;
        x.same_shape(&eps_pred)?;
        let inject = if s > 1 { RealImage::standard_normal(height, width, &mut noise_rng) } else { zeros.clone() };
        x = backward_step(&x, s, &eps_pred, &inject, &plan.schedule)?;
        if let Some(tr) = trajectory.as_mut() {
            tr.push(x.clone());
        }
    }
    Ok(SampleOutput { grid: binarize(&x), final_image: x, trajectory })
}

/// Predictor returning the exact noise that separates x_t from a fixed clean
/// image under a schedule: ε = (x_t − √ᾱ_t · x0)/√(1 − ᾱ_t). Sampling with it
/// lands on `target` exactly at t = 0.
#[derive(Debug, Clone)]
pub struct FixedTargetPredictor {
    pub target: RealImage,
    pub schedule: NoiseSchedule,
}

impl NoisePredictor for FixedTargetPredictor {
    fn predict(&self, x_t: &RealImage, t: usize) -> Result<RealImage, DiffusionError> {
        x_t.same_shape(&self.target)?;
        self.schedule.check_step(t, 1)?;
        let bar = self.schedule.alpha_bar(t);
        let (a, b) = (bar.sqrt(), (1.0 - bar).sqrt());
        let values = x_t.values.iter().zip(&self.target.values).map(|(x, x0)| (x - a * x0) / b).collect();
        Ok(RealImage { height: x_t.height, width: x_t.width, values })
    }
}
