//! The conditional score function `s(m, x, sigma)`.
//!
//! [`ScoreModel`] is a small convolutional encoder-decoder that predicts the
//! noise `z_hat` in `m = m0 + sigma z` and returns the score `-z_hat / sigma`.
//! Training runs in `f64` with hand-written reverse-mode gradients;
//! [`InferenceModel`] runs the same network in `f32` for sampling.

mod analytic;
mod arch;
mod network;
pub(crate) mod ops;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;

pub use analytic::{analytic_score, AnalyticGaussianScore};
pub use arch::{Architecture, ParamBlock};
pub use ops::Scalar;

use crate::error::{Error, Result};
use crate::grid::{CondImage, Field};
use crate::rng;
use crate::sde::SigmaSchedule;
pub use network::ItemTape;
use network::Network;

/// Anything that can score a batch of noisy fields for one conditioning
/// image at one noise level.
pub trait ScoreFn {
    /// `fields` holds `n` row-major fields of the image's size back to back;
    /// `out` receives the `n` score fields in the same layout.
    fn score_batch(&self, fields: &[f64], x: &CondImage, sigma: f64, out: &mut [f64]) -> Result<()>;
}

impl<S: ScoreFn + ?Sized> ScoreFn for &S {
    fn score_batch(&self, fields: &[f64], x: &CondImage, sigma: f64, out: &mut [f64]) -> Result<()> {
        (**self).score_batch(fields, x, sigma, out)
    }
}

/// Adapts a closure `(field, x, sigma, out)` evaluated one field at a time.
pub struct FnScore<F>(pub F);

impl<F> ScoreFn for FnScore<F>
where
    F: Fn(&[f64], &CondImage, f64, &mut [f64]),
{
    fn score_batch(&self, fields: &[f64], x: &CondImage, sigma: f64, out: &mut [f64]) -> Result<()> {
        let n = x.width() * x.height();
        for (f, o) in fields.chunks(n).zip(out.chunks_mut(n)) {
            (self.0)(f, x, sigma, o);
        }
        Ok(())
    }
}

fn check_batch(fields: &[f64], x: &CondImage, out: &[f64]) -> Result<usize> {
    let n = x.width() * x.height();
    if fields.len() % n != 0 || fields.is_empty() {
        return Err(Error::LengthMismatch {
            expected: n,
            found: fields.len(),
        });
    }
    if out.len() != fields.len() {
        return Err(Error::LengthMismatch {
            expected: fields.len(),
            found: out.len(),
        });
    }
    if let Some(index) = fields.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "input field",
            index,
        });
    }
    Ok(fields.len() / n)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain {
            name: "sigma",
            value: sigma,
        });
    }
    Ok(())
}

/// Network parameters together with their architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    arch: Architecture,
    params: Vec<f64>,
}

impl ScoreModel {
    pub fn new(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::LengthMismatch {
                expected: arch.param_count(),
                found: params.len(),
            });
        }
        if let Some(index) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "parameter",
                index,
            });
        }
        Ok(Self { arch, params })
    }

    /// Training initialization: scaled-normal hidden weights, zero biases,
    /// and a zero output layer so the initial score is identically zero.
    /// The scale/shift head also starts at zero (identity modulation).
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng::stream(seed, rng::domain::INIT, 0);
        let mut params = vec![0.0; arch.param_count()];
        for block in arch.layout() {
            let zero = block.fan_in == 0 || block.name.starts_with("out.") || block.name.starts_with("embed.dense2");
            if zero {
                continue;
            }
            let std = (1.0 / block.fan_in as f64).sqrt();
            for p in &mut params[block.range()] {
                *p = std * rng::standard_normal(&mut rng);
            }
        }
        Ok(Self { arch, params })
    }

    /// Every parameter (biases and head included) drawn at random; used for
    /// gradient and implementation cross-checks.
    pub fn random(arch: Architecture, seed: u64, scale: f64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng::stream(seed, rng::domain::INIT, 1);
        let layout = arch.layout();
        let mut params = vec![0.0; arch.param_count()];
        for block in layout {
            let std = scale * (1.0 / block.fan_in.max(4) as f64).sqrt();
            for p in &mut params[block.range()] {
                *p = std * rng::standard_normal(&mut rng);
            }
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        *self = Self::new(self.arch.clone(), params)?;
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn network(&self) -> Network<'_, f64> {
        Network::new(&self.arch, &self.params)
    }

    /// Predicted noise `z_hat` for one field.
    pub fn predict_noise(&self, mt: &Field, x: &CondImage, sigma: f64) -> Result<Field> {
        mt.ensure_same_dims(x.dims())?;
        check_sigma(sigma)?;
        if let Some(index) = mt.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "input field",
                index,
            });
        }
        let (z, _) = self
            .network()
            .forward_item(mt.values(), x.values(), sigma, (x.height(), x.width()), false);
        Field::new(mt.width(), mt.height(), z)
    }

    /// Score `-z_hat / sigma`.
    pub fn apply(&self, mt: &Field, x: &CondImage, sigma: f64) -> Result<Field> {
        let mut z = self.predict_noise(mt, x, sigma)?;
        for v in z.values_mut() {
            *v = -*v / sigma;
        }
        Ok(z)
    }

    /// Single-precision copy for sampling.
    pub fn to_inference(&self) -> InferenceModel {
        InferenceModel {
            arch: self.arch.clone(),
            params: self.params.iter().map(|&p| p as f32).collect(),
        }
    }
}

impl ScoreFn for ScoreModel {
    fn score_batch(&self, fields: &[f64], x: &CondImage, sigma: f64, out: &mut [f64]) -> Result<()> {
        check_sigma(sigma)?;
        check_batch(fields, x, out)?;
        let n = x.width() * x.height();
        let net = self.network();
        for (f, o) in fields.chunks(n).zip(out.chunks_mut(n)) {
            let (z, _) = net.forward_item(f, x.values(), sigma, (x.height(), x.width()), false);
            for (o, z) in o.iter_mut().zip(z) {
                *o = -z / sigma;
            }
        }
        Ok(())
    }
}

/// The score network evaluated in `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceModel {
    arch: Architecture,
    params: Vec<f32>,
}

impl ScoreFn for InferenceModel {
    fn score_batch(&self, fields: &[f64], x: &CondImage, sigma: f64, out: &mut [f64]) -> Result<()> {
        check_sigma(sigma)?;
        check_batch(fields, x, out)?;
        let n = x.width() * x.height();
        let net = Network::new(&self.arch, &self.params);
        let image: Vec<f32> = x.values().iter().map(|&v| v as f32).collect();
        let mut field = vec![0f32; n];
        for (f, o) in fields.chunks(n).zip(out.chunks_mut(n)) {
            for (d, &s) in field.iter_mut().zip(f) {
                *d = s as f32;
            }
            let (z, _) = net.forward_item(&field, &image, sigma, (x.height(), x.width()), false);
            for (o, z) in o.iter_mut().zip(z) {
                *o = -f64::from(z) / sigma;
            }
        }
        Ok(())
    }
}

/// A batch of noisy fields with their conditioning images and noise levels.
pub struct NoisyBatch<'a> {
    pub width: usize,
    pub height: usize,
    /// `sigmas.len()` fields, row-major, back to back.
    pub fields: &'a [f64],
    pub images: &'a [&'a CondImage],
    pub sigmas: &'a [f64],
}

/// A differentiable noise predictor: the training-side view of a model.
pub trait NoisePredictor {
    type Tape;

    fn num_params(&self) -> usize;

    /// Predicted noise for every item of the batch, plus whatever the
    /// backward pass needs.
    fn predict_noise_batch(&self, batch: &NoisyBatch<'_>) -> Result<(Vec<f64>, Self::Tape)>;

    /// Adds `(d z_hat / d theta)^T d_noise` to `grad`.
    fn backprop(&self, batch: &NoisyBatch<'_>, tape: Self::Tape, d_noise: &[f64], grad: &mut [f64]);
}

impl NoisePredictor for ScoreModel {
    type Tape = Vec<ItemTape<f64>>;

    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn predict_noise_batch(&self, batch: &NoisyBatch<'_>) -> Result<(Vec<f64>, Self::Tape)> {
        let n = batch.width * batch.height;
        let net = self.network();
        let mut out = Vec::with_capacity(batch.fields.len());
        let mut tapes = Vec::with_capacity(batch.sigmas.len());
        for (i, (&sigma, image)) in batch.sigmas.iter().zip(batch.images).enumerate() {
            let field = &batch.fields[i * n..(i + 1) * n];
            let (z, tape) = net.forward_item(field, image.values(), sigma, (batch.height, batch.width), true);
            out.extend(z);
            tapes.push(tape.expect("tape requested"));
        }
        Ok((out, tapes))
    }

    fn backprop(&self, batch: &NoisyBatch<'_>, tape: Self::Tape, d_noise: &[f64], grad: &mut [f64]) {
        let n = batch.width * batch.height;
        let net = self.network();
        for (i, t) in tape.iter().enumerate() {
            net.backward_item(t, &d_noise[i * n..(i + 1) * n], (batch.height, batch.width), grad);
        }
    }
}

/// One training pair: clean target field and conditioning image.
#[derive(Debug, Clone, Copy)]
pub struct TrainPair<'a> {
    pub target: &'a Field,
    pub image: &'a CondImage,
}

/// Denoising score matching loss with weight `sigma(t)^2`, and its gradient.
///
/// For each item draws `t ~ U(0, 1)` then `z ~ N(0, I)` from `rng`, forms
/// `mt = m0 + sigma(t) z`, and averages
/// `sigma^2 (s(mt, x, sigma) - target)^2` over items and pixels, where
/// `target = -(mt - m0) / sigma^2`.
pub fn loss_and_gradients<M: NoisePredictor, R: Rng + ?Sized>(
    model: &M,
    batch: &[TrainPair<'_>],
    sched: &SigmaSchedule,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    let first = batch.first().ok_or_else(|| Error::config("empty training batch"))?;
    let (width, height) = first.target.dims();
    let n = width * height;
    for pair in batch {
        pair.target.ensure_same_dims(pair.image.dims())?;
        first.target.ensure_same_dims(pair.target.dims())?;
    }

    let mut sigmas = Vec::with_capacity(batch.len());
    let mut fields = Vec::with_capacity(batch.len() * n);
    let mut z = vec![0.0; n];
    for pair in batch {
        let t = rng::uniform(rng);
        let sigma = sched.sigma_at(t)?;
        rng::fill_standard_normal(rng, &mut z);
        fields.extend(pair.target.values().iter().zip(&z).map(|(&m, &z)| m + sigma * z));
        sigmas.push(sigma);
    }
    let images: Vec<&CondImage> = batch.iter().map(|p| p.image).collect();
    let noisy = NoisyBatch {
        width,
        height,
        fields: &fields,
        images: &images,
        sigmas: &sigmas,
    };
    let (z_hat, tape) = model.predict_noise_batch(&noisy)?;

    let scale = 1.0 / (batch.len() * n) as f64;
    let mut total = 0.0;
    let mut d_noise = vec![0.0; z_hat.len()];
    for (i, pair) in batch.iter().enumerate() {
        let sigma = sigmas[i];
        let var = sigma * sigma;
        let span = i * n..(i + 1) * n;
        let mut item = 0.0;
        for (((d, &zh), &mt), &m0) in d_noise[span.clone()]
            .iter_mut()
            .zip(&z_hat[span.clone()])
            .zip(&fields[span])
            .zip(pair.target.values())
        {
            let score = -zh / sigma;
            let target = -(mt - m0) / var;
            let r = score - target;
            item += var * r * r;
            // d/dz_hat of var * r^2 with d score / d z_hat = -1 / sigma
            *d = -2.0 * sigma * r * scale;
        }
        if !item.is_finite() {
            return Err(Error::NonFinite { what: "loss", index: i });
        }
        total += item;
    }
    let mut grad = vec![0.0; model.num_params()];
    model.backprop(&noisy, tape, &d_noise, &mut grad);
    Ok((total * scale, grad))
}
