//! Reverse-time predictor-corrector sampling and ensembles.
//!
//! The noise ladder has `levels` entries `sigma_0 = sigma_min < ... <
//! sigma_{K-1} = sigma_max`. A chain starts at `N(0, sigma_max^2 I)` and takes
//! `K - 1` predictor transitions down the ladder, each followed by
//! `correctors` Langevin steps at the level it arrived at. The output is the
//! field after the last corrector at `sigma_min`, before thresholding.

use alloc::vec;
use alloc::vec::Vec;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{l2_norm, BinaryMask, CondImage, Field};
use crate::nn::ScoreFn;
use crate::rng::{self, domain};
use crate::sde::{make_ladder, SigmaSchedule, DEFAULT_SIGMA_MIN};
use crate::sdf::decode_mask;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    /// Number of ladder levels `K`; the chain makes `K - 1` predictor steps.
    pub levels: usize,
    /// Corrector steps `J` after each predictor step.
    pub correctors: usize,
    /// Corrector signal-to-noise scale `r`.
    pub snr: f64,
    pub threshold_tau: f64,
    /// Ensemble size `R`.
    pub ensemble: usize,
}

impl SamplerConfig {
    /// 200 levels, one corrector, `r = 0.15`.
    pub fn glas() -> Self {
        Self {
            levels: 200,
            correctors: 1,
            snr: 0.15,
            threshold_tau: 3.0 * DEFAULT_SIGMA_MIN,
            ensemble: 128,
        }
    }

    /// 500 levels, two correctors, `r = 0.35`.
    pub fn monuseg() -> Self {
        Self {
            levels: 500,
            correctors: 2,
            snr: 0.35,
            ..Self::glas()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::config("sampler needs at least 2 levels"));
        }
        if !(self.snr > 0.0) || !self.snr.is_finite() {
            return Err(Error::Domain {
                name: "snr",
                value: self.snr,
            });
        }
        if !(self.threshold_tau >= 0.0) {
            return Err(Error::Domain {
                name: "threshold_tau",
                value: self.threshold_tau,
            });
        }
        if self.ensemble == 0 {
            return Err(Error::config("ensemble size must be at least 1"));
        }
        Ok(())
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self::glas()
    }
}

/// `m + (s_next^2 - s_k^2) score + sqrt(s_next^2 - s_k^2) z`, in place.
pub fn predictor_update(m: &mut [f64], score: &[f64], z: &[f64], sigma_next: f64, sigma_k: f64) {
    let dv = sigma_next * sigma_next - sigma_k * sigma_k;
    let sd = dv.sqrt();
    for ((m, &s), &z) in m.iter_mut().zip(score).zip(z) {
        *m += dv * s + sd * z;
    }
}

/// Langevin step `m + eps g + sqrt(2 eps) z` with
/// `eps = 2 (r |z| / |g|)^2`, in place. Returns `eps`, or `None` (and leaves
/// `m` untouched) when `g` is identically zero.
pub fn corrector_update(m: &mut [f64], g: &[f64], z: &[f64], snr: f64) -> Option<f64> {
    let g_norm = l2_norm(g);
    if g_norm == 0.0 {
        return None;
    }
    let ratio = snr * l2_norm(z) / g_norm;
    let eps = 2.0 * ratio * ratio;
    let sd = (2.0 * eps).sqrt();
    for ((m, &g), &z) in m.iter_mut().zip(g).zip(z) {
        *m += eps * g + sd * z;
    }
    Some(eps)
}

fn check_score(score: &[f64], level: usize) -> Result<()> {
    if score.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "score at level",
            index: level,
        });
    }
    Ok(())
}

fn check_field(m: &Field, x: &CondImage) -> Result<()> {
    if m.dims() != x.dims() {
        return Err(Error::ShapeMismatch {
            expected: x.dims(),
            found: m.dims(),
        });
    }
    Ok(())
}

/// One predictor step from `sigma_next` down to `sigma_k` with fresh noise.
pub fn predictor_step<S: ScoreFn + ?Sized, R: Rng + ?Sized>(
    m_next: &Field,
    score_fn: &S,
    x: &CondImage,
    sigma_next: f64,
    sigma_k: f64,
    rng: &mut R,
) -> Result<Field> {
    check_field(m_next, x)?;
    if !(sigma_next >= sigma_k) || !(sigma_k >= 0.0) {
        return Err(Error::Domain {
            name: "sigma_k",
            value: sigma_k,
        });
    }
    let mut score = vec![0.0; m_next.len()];
    score_fn.score_batch(m_next.values(), x, sigma_next, &mut score)?;
    check_score(&score, 0)?;
    let mut z = vec![0.0; m_next.len()];
    rng::fill_standard_normal(rng, &mut z);
    let mut out = m_next.clone();
    predictor_update(out.values_mut(), &score, &z, sigma_next, sigma_k);
    Ok(out)
}

/// Result of one corrector step.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorOutcome {
    pub field: Field,
    /// Step size used, or `None` when the score vanished and the step was skipped.
    pub eps: Option<f64>,
}

/// One Langevin corrector step at `sigma_k`.
pub fn corrector_step<S: ScoreFn + ?Sized, R: Rng + ?Sized>(
    m: &Field,
    score_fn: &S,
    x: &CondImage,
    sigma_k: f64,
    snr: f64,
    rng: &mut R,
) -> Result<CorrectorOutcome> {
    check_field(m, x)?;
    if !(sigma_k > 0.0) {
        return Err(Error::Domain {
            name: "sigma_k",
            value: sigma_k,
        });
    }
    if !(snr > 0.0) {
        return Err(Error::Domain { name: "snr", value: snr });
    }
    let mut z = vec![0.0; m.len()];
    rng::fill_standard_normal(rng, &mut z);
    let mut g = vec![0.0; m.len()];
    score_fn.score_batch(m.values(), x, sigma_k, &mut g)?;
    check_score(&g, 0)?;
    let mut field = m.clone();
    let eps = corrector_update(field.values_mut(), &g, &z, snr);
    Ok(CorrectorOutcome { field, eps })
}

/// Counters collected while sampling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SamplerStats {
    /// Corrector steps skipped because the score was identically zero.
    pub zero_score_events: usize,
}

/// Runs several chains in lockstep, chain `j` drawing only from `rngs[j]`,
/// so each chain's output is independent of how many others run with it.
fn run_chains<S: ScoreFn + ?Sized, R: Rng>(
    score_fn: &S,
    x: &CondImage,
    sched: &SigmaSchedule,
    cfg: &SamplerConfig,
    rngs: &mut [R],
) -> Result<(Vec<Field>, SamplerStats)> {
    cfg.validate()?;
    let ladder = make_ladder(sched, cfg.levels)?;
    let sigmas = ladder.sigmas();
    let n = x.width() * x.height();
    let chains = rngs.len();
    let mut m = vec![0.0; chains * n];
    for (chunk, r) in m.chunks_mut(n).zip(rngs.iter_mut()) {
        rng::fill_standard_normal(r, chunk);
        let s_max = sched.sigma_max();
        for v in chunk.iter_mut() {
            *v *= s_max;
        }
    }
    let mut score = vec![0.0; chains * n];
    let mut z = vec![0.0; n];
    let mut stats = SamplerStats::default();
    for k in (0..sigmas.len() - 1).rev() {
        let (s_next, s_k) = (sigmas[k + 1], sigmas[k]);
        score_fn.score_batch(&m, x, s_next, &mut score)?;
        check_score(&score, k)?;
        for ((mc, sc), r) in m.chunks_mut(n).zip(score.chunks(n)).zip(rngs.iter_mut()) {
            rng::fill_standard_normal(r, &mut z);
            predictor_update(mc, sc, &z, s_next, s_k);
        }
        for _ in 0..cfg.correctors {
            score_fn.score_batch(&m, x, s_k, &mut score)?;
            check_score(&score, k)?;
            for ((mc, g), r) in m.chunks_mut(n).zip(score.chunks(n)).zip(rngs.iter_mut()) {
                rng::fill_standard_normal(r, &mut z);
                if corrector_update(mc, g, &z, cfg.snr).is_none() {
                    stats.zero_score_events += 1;
                }
            }
        }
    }
    let fields = m
        .chunks(n)
        .map(|c| Field::new(x.width(), x.height(), c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok((fields, stats))
}

/// One reverse-time sample drawn with `rng`; not thresholded.
pub fn sample<S: ScoreFn + ?Sized, R: Rng>(
    score_fn: &S,
    x: &CondImage,
    sched: &SigmaSchedule,
    cfg: &SamplerConfig,
    rng: R,
) -> Result<(Field, SamplerStats)> {
    let mut rngs = [rng];
    let (mut fields, stats) = run_chains(score_fn, x, sched, cfg, &mut rngs)?;
    Ok((fields.pop().expect("one chain"), stats))
}

/// `R` samples with per-pixel mean, population standard deviation, and the
/// mask obtained by thresholding the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleEnsemble {
    pub samples: Vec<Field>,
    pub mean: Field,
    pub std: Field,
    pub mmse_mask: BinaryMask,
    pub stats: SamplerStats,
}

impl SampleEnsemble {
    /// Reduces a non-empty set of equally sized samples.
    pub fn from_samples(samples: Vec<Field>, threshold_tau: f64) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::config("ensemble needs at least one sample"))?;
        let (w, h) = first.dims();
        for s in &samples {
            first.ensure_same_dims(s.dims())?;
        }
        let count = samples.len() as f64;
        let mut mean = vec![0.0; w * h];
        for s in &samples {
            for (a, &v) in mean.iter_mut().zip(s.values()) {
                *a += v;
            }
        }
        for a in &mut mean {
            *a /= count;
        }
        let mut var = vec![0.0; w * h];
        for s in &samples {
            for ((a, &v), &mu) in var.iter_mut().zip(s.values()).zip(&mean) {
                *a += (v - mu) * (v - mu);
            }
        }
        let std = var.into_iter().map(|v| (v / count).sqrt()).collect();
        let mean = Field::new(w, h, mean)?;
        let mmse_mask = decode_mask(&mean, threshold_tau);
        Ok(Self {
            samples,
            mean,
            std: Field::new(w, h, std)?,
            mmse_mask,
            stats: SamplerStats::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// `cfg.ensemble` independent samples; sample `j` uses stream
/// `(seed, ENSEMBLE, j)`, so the first samples of ensembles of different
/// sizes agree.
pub fn ensemble_sample<S: ScoreFn + ?Sized>(
    score_fn: &S,
    x: &CondImage,
    sched: &SigmaSchedule,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<SampleEnsemble> {
    cfg.validate()?;
    let mut rngs: Vec<_> = (0..cfg.ensemble as u64)
        .map(|j| rng::stream(seed, domain::ENSEMBLE, j))
        .collect();
    let (samples, stats) = run_chains(score_fn, x, sched, cfg, &mut rngs)?;
    let mut ens = SampleEnsemble::from_samples(samples, cfg.threshold_tau)?;
    ens.stats = stats;
    Ok(ens)
}
