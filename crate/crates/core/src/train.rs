//! Synthetic data, the Adam optimizer, and the denoising score matching loop.

use alloc::vec;
use alloc::vec::Vec;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, CondImage, Field, SdfMap};
use crate::nn::{loss_and_gradients, ScoreModel, TrainPair};
use crate::rng::{self, domain, StreamRng};
use crate::sde::{SigmaSchedule, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN};
use crate::sdf::{encode_sdf, SdfConfig};

/// Which clean field the diffusion is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetMode {
    /// The truncated signed distance field.
    #[default]
    Sdf,
    /// The raw mask remapped to `-1` (foreground) / `+1` (background), so
    /// that the same decode threshold applies.
    Binary,
}

impl TargetMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetMode::Sdf => "sdf",
            TargetMode::Binary => "binary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sdf" => Some(TargetMode::Sdf),
            "binary" => Some(TargetMode::Binary),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub seed: u64,
    pub target_mode: TargetMode,
    /// Truncation distance of the SDF targets, in pixels.
    pub delta: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Steps between checkpoint callbacks; the final step always checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            total_steps: 20_000,
            seed: 0,
            target_mode: TargetMode::Sdf,
            delta: 5.0,
            sigma_min: DEFAULT_SIGMA_MIN,
            sigma_max: DEFAULT_SIGMA_MAX,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Domain {
                name: "learning_rate",
                value: self.learning_rate,
            });
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Domain { name, value: b });
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Domain {
                name: "adam_eps",
                value: self.adam_eps,
            });
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.total_steps == 0 {
            return Err(Error::config("total_steps must be at least 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("checkpoint_every must be at least 1"));
        }
        SdfConfig::new(self.delta, 0.0)?;
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<SigmaSchedule> {
        SigmaSchedule::new(self.sigma_min, self.sigma_max)
    }
}

/// Bounds for the random ellipses of [`generate_synthetic`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeParams {
    pub min_ellipses: usize,
    pub max_ellipses: usize,
    /// Semi-axis bounds in pixels.
    pub min_radius: f64,
    pub max_radius: f64,
}

impl ShapeParams {
    /// Semi-axes between `grid / 16` (at least 1.5) and `grid / 5`.
    pub fn for_grid(grid: usize) -> Self {
        let g = grid as f64;
        Self {
            min_ellipses: 1,
            max_ellipses: 4,
            min_radius: (g / 16.0).max(1.5),
            max_radius: (g / 5.0).max(2.0),
        }
    }

    pub fn validate(&self, grid: usize) -> Result<()> {
        if self.min_ellipses == 0 || self.max_ellipses < self.min_ellipses {
            return Err(Error::config("ellipse count bounds must satisfy 1 <= min <= max"));
        }
        if !(self.min_radius >= 1.0) || !(self.max_radius >= self.min_radius) {
            return Err(Error::config("radius bounds must satisfy 1 <= min <= max"));
        }
        if self.max_radius > grid as f64 {
            return Err(Error::Domain {
                name: "max_radius",
                value: self.max_radius,
            });
        }
        Ok(())
    }
}

/// One generated training or test example.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub mask: BinaryMask,
    pub sdf: SdfMap,
    pub image: CondImage,
    /// Seed of the stream that produced this sample.
    pub seed: u64,
}

pub const MIN_GRID: usize = 16;
pub const MAX_GRID: usize = 128;

/// `n` square samples of random filled ellipses with a noisy, shaded
/// conditioning image in which the objects are brighter than the background.
///
/// Sample `i` only depends on `(seed, i)`.
pub fn generate_synthetic(
    n: usize,
    grid: usize,
    params: &ShapeParams,
    sdf_cfg: &SdfConfig,
    seed: u64,
) -> Result<Vec<SyntheticSample>> {
    if !(MIN_GRID..=MAX_GRID).contains(&grid) {
        return Err(Error::config(alloc::format!(
            "grid must be in {MIN_GRID}..={MAX_GRID}, got {grid}"
        )));
    }
    params.validate(grid)?;
    sdf_cfg.validate()?;
    (0..n as u64)
        .map(|i| {
            let mut r = rng::stream(seed, domain::DATASET, i);
            let sample_seed = rand::RngCore::next_u64(&mut r);
            synthesize(grid, params, sdf_cfg, sample_seed)
        })
        .collect()
}

fn synthesize(grid: usize, params: &ShapeParams, sdf_cfg: &SdfConfig, seed: u64) -> Result<SyntheticSample> {
    use rand::Rng;
    let mut r = rng::stream(seed, domain::DATASET, u64::MAX);
    let g = grid as f64;
    let count = r.random_range(params.min_ellipses..=params.max_ellipses);
    let ellipses: Vec<[f64; 5]> = (0..count)
        .map(|_| {
            let a = r.random_range(params.min_radius..=params.max_radius);
            let b = r.random_range(params.min_radius..=params.max_radius);
            // Centers on pixel centers so every ellipse covers at least one pixel.
            let cx = r.random_range(0..grid) as f64 + 0.5;
            let cy = r.random_range(0..grid) as f64 + 0.5;
            let angle = r.random_range(0.0..core::f64::consts::PI);
            [cx, cy, a, b, angle]
        })
        .collect();
    let mask = BinaryMask::from_fn(grid, grid, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        ellipses.iter().any(|&[cx, cy, a, b, angle]| {
            let (s, c) = angle.sin_cos();
            let (dx, dy) = (px - cx, py - cy);
            let u = (dx * c + dy * s) / a;
            let v = (-dx * s + dy * c) / b;
            u * u + v * v <= 1.0
        })
    });

    let mut noise = vec![0.0; grid * grid];
    rng::fill_standard_normal(&mut r, &mut noise);
    let noise = normalize_unit(&box_blur(&box_blur(&noise, grid), grid));
    let theta = r.random_range(0.0..2.0 * core::f64::consts::PI);
    let (s, c) = theta.sin_cos();
    let ramp: Vec<f64> = (0..grid * grid)
        .map(|i| ((i % grid) as f64 + 0.5) * c / g + ((i / grid) as f64 + 0.5) * s / g)
        .collect();
    let ramp = normalize_unit(&ramp);
    let values = mask
        .labels()
        .iter()
        .zip(noise.iter().zip(&ramp))
        .map(|(&m, (&nz, &gr))| (0.7 * f64::from(m) + 0.2 * nz + 0.1 * gr).clamp(0.0, 1.0))
        .collect();
    let image = CondImage::new(grid, grid, values)?;
    let sdf = encode_sdf(&mask, sdf_cfg);
    Ok(SyntheticSample {
        mask,
        sdf,
        image,
        seed,
    })
}

/// 3x3 mean filter over the in-grid neighbors of each pixel.
fn box_blur(v: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for y in 0..n {
        for x in 0..n {
            let (mut acc, mut cnt) = (0.0, 0.0);
            for yy in y.saturating_sub(1)..=(y + 1).min(n - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(n - 1) {
                    acc += v[yy * n + xx];
                    cnt += 1.0;
                }
            }
            out[y * n + x] = acc / cnt;
        }
    }
    out
}

/// Affine map onto `[0, 1]`; constant input maps to `0.5`.
fn normalize_unit(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        v.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; v.len()]
    }
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.v.len() != self.m.len() {
            return Err(Error::LengthMismatch {
                expected: self.m.len(),
                found: self.v.len(),
            });
        }
        if let Some(index) = self.m.iter().chain(&self.v).position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "optimizer moment",
                index: index % self.m.len().max(1),
            });
        }
        if self.v.iter().any(|&x| x < 0.0) {
            return Err(Error::config("negative second moment"));
        }
        Ok(())
    }

    /// In-place bias-corrected Adam update of `params`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], cfg: &TrainConfig) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::LengthMismatch {
                expected: self.m.len(),
                found: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grads.len()
                },
            });
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                what: "gradient",
                index,
            });
        }
        self.step += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
        Ok(())
    }
}

/// Pure form of [`AdamState::update`].
pub fn adam_step(params: &[f64], grads: &[f64], state: &AdamState, cfg: &TrainConfig) -> Result<(Vec<f64>, AdamState)> {
    let mut params = params.to_vec();
    let mut state = state.clone();
    state.update(&mut params, grads, cfg)?;
    Ok((params, state))
}

/// A training example reduced to what the loop needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub mask: BinaryMask,
    pub sdf: SdfMap,
    pub image: CondImage,
}

impl From<&SyntheticSample> for TrainExample {
    fn from(s: &SyntheticSample) -> Self {
        Self {
            mask: s.mask.clone(),
            sdf: s.sdf.clone(),
            image: s.image.clone(),
        }
    }
}

/// Clean field the diffusion starts from.
pub fn target_field(mask: &BinaryMask, sdf: &SdfMap, mode: TargetMode) -> Field {
    match mode {
        TargetMode::Sdf => sdf.field().clone(),
        TargetMode::Binary => {
            let (w, h) = mask.dims();
            let values = mask.labels().iter().map(|&l| 1.0 - 2.0 * f64::from(l)).collect();
            Field::new(w, h, values).expect("dimensions match")
        }
    }
}

/// Model, optimizer state and completed step count.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: ScoreModel,
    pub adam: AdamState,
    pub step: usize,
}

impl TrainState {
    pub fn new(model: ScoreModel) -> Self {
        let adam = AdamState::new(model.num_params());
        Self { model, adam, step: 0 }
    }
}

/// Progress hooks for [`train`]; errors abort training.
pub trait TrainObserver {
    fn on_step(&mut self, _step: usize, _loss: f64) -> Result<()> {
        Ok(())
    }

    /// Called with the state after `state.step` completed steps.
    fn on_checkpoint(&mut self, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Runs the optimization from `state.step` up to `cfg.total_steps` and returns
/// the per-step losses of the steps it ran.
///
/// Step `k` draws its minibatch, flips and noise from its own stream, so a
/// run resumed from a checkpoint continues exactly as the uninterrupted run.
pub fn train<O: TrainObserver + ?Sized>(
    dataset: &[TrainExample],
    cfg: &TrainConfig,
    state: &mut TrainState,
    observer: &mut O,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::config("training dataset is empty"));
    }
    if state.adam.len() != state.model.num_params() {
        return Err(Error::LengthMismatch {
            expected: state.model.num_params(),
            found: state.adam.len(),
        });
    }
    let dims = dataset[0].image.dims();
    for ex in dataset {
        if ex.image.dims() != dims || ex.mask.dims() != dims || ex.sdf.dims() != dims {
            return Err(Error::ShapeMismatch {
                expected: dims,
                found: ex.image.dims(),
            });
        }
    }
    let sched = cfg.schedule()?;
    let targets: Vec<Field> = dataset
        .iter()
        .map(|ex| target_field(&ex.mask, &ex.sdf, cfg.target_mode))
        .collect();

    let mut trace = Vec::with_capacity(cfg.total_steps.saturating_sub(state.step));
    while state.step < cfg.total_steps {
        let step = state.step;
        let mut r = rng::stream(cfg.seed, domain::TRAIN_STEP, step as u64);
        let (fields, images) = draw_minibatch(dataset, &targets, cfg.batch_size, &mut r);
        let pairs: Vec<TrainPair<'_>> = fields
            .iter()
            .zip(&images)
            .map(|(target, image)| TrainPair { target, image })
            .collect();
        let (loss, grad) = loss_and_gradients(&state.model, &pairs, &sched, &mut r).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFinite {
                what: "training loss at step",
                index: step,
            },
            other => other,
        })?;
        state.adam.update(state.model.params_mut(), &grad, cfg)?;
        state.step += 1;
        trace.push(loss);
        observer.on_step(step, loss)?;
        if state.step % cfg.checkpoint_every == 0 || state.step == cfg.total_steps {
            observer.on_checkpoint(state)?;
        }
    }
    Ok(trace)
}

fn draw_minibatch(
    dataset: &[TrainExample],
    targets: &[Field],
    batch: usize,
    r: &mut StreamRng,
) -> (Vec<Field>, Vec<CondImage>) {
    use rand::Rng;
    let mut fields = Vec::with_capacity(batch);
    let mut images = Vec::with_capacity(batch);
    for _ in 0..batch {
        let i = r.random_range(0..dataset.len());
        let (mut f, mut x) = (targets[i].clone(), dataset[i].image.clone());
        if r.random_bool(0.5) {
            f = f.flip_horizontal();
            x = x.flip_horizontal();
        }
        if r.random_bool(0.5) {
            f = f.flip_vertical();
            x = x.flip_vertical();
        }
        fields.push(f);
        images.push(x);
    }
    (fields, images)
}
