//! Variance-exploding diffusion: geometric noise schedule, its discrete
//! ladder, the Gaussian perturbation kernel and the denoising score
//! matching target.

use alloc::vec::Vec;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::grid::Field;

pub const DEFAULT_SIGMA_MIN: f64 = 1e-3;
pub const DEFAULT_SIGMA_MAX: f64 = 5.0;

/// `sigma(t) = sigma_min * (sigma_max / sigma_min)^t` on `t in [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaSchedule {
    sigma_min: f64,
    sigma_max: f64,
}

impl Default for SigmaSchedule {
    fn default() -> Self {
        Self {
            sigma_min: DEFAULT_SIGMA_MIN,
            sigma_max: DEFAULT_SIGMA_MAX,
        }
    }
}

impl SigmaSchedule {
    pub const HORIZON: f64 = 1.0;

    pub fn new(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        if !(sigma_min > 0.0) || !sigma_min.is_finite() {
            return Err(Error::Domain {
                name: "sigma_min",
                value: sigma_min,
            });
        }
        if !(sigma_max > sigma_min) || !sigma_max.is_finite() {
            return Err(Error::Domain {
                name: "sigma_max",
                value: sigma_max,
            });
        }
        Ok(Self {
            sigma_min,
            sigma_max,
        })
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn sigma_at(&self, t: f64) -> Result<f64> {
        if !(0.0..=Self::HORIZON).contains(&t) {
            return Err(Error::Domain { name: "t", value: t });
        }
        // endpoints exact
        Ok(if t == 0.0 {
            self.sigma_min
        } else if t == Self::HORIZON {
            self.sigma_max
        } else {
            self.sigma_min * (self.sigma_max / self.sigma_min).powf(t)
        })
    }

    pub fn ladder(&self, levels: usize) -> Result<SigmaLadder> {
        make_ladder(self, levels)
    }
}

/// Increasing noise levels `sigma_0 = sigma_min < ... < sigma_{K-1} = sigma_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaLadder {
    sigmas: Vec<f64>,
}

impl SigmaLadder {
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }
}

pub fn make_ladder(sched: &SigmaSchedule, levels: usize) -> Result<SigmaLadder> {
    if levels < 2 {
        return Err(Error::config("sigma ladder needs at least 2 levels"));
    }
    let last = (levels - 1) as f64;
    let sigmas = (0..levels)
        .map(|k| sched.sigma_at(k as f64 / last))
        .collect::<Result<Vec<_>>>()?;
    Ok(SigmaLadder { sigmas })
}

/// `m0 + sigma * z`.
pub fn perturb<F: AsRef<Field>>(m0: &F, sigma: f64, z: &[f64]) -> Result<Field> {
    let m0 = m0.as_ref();
    if z.len() != m0.len() {
        return Err(Error::LengthMismatch {
            expected: m0.len(),
            found: z.len(),
        });
    }
    if !(sigma >= 0.0) {
        return Err(Error::Domain {
            name: "sigma",
            value: sigma,
        });
    }
    let values = m0
        .values()
        .iter()
        .zip(z)
        .map(|(&m, &z)| m + sigma * z)
        .collect();
    Field::new(m0.width(), m0.height(), values)
}

/// Score of the Gaussian perturbation kernel: `-(mt - m0) / sigma^2`.
pub fn dsm_target<A: AsRef<Field>, B: AsRef<Field>>(mt: &A, m0: &B, sigma: f64) -> Result<Field> {
    let (mt, m0) = (mt.as_ref(), m0.as_ref());
    if !(sigma > 0.0) {
        return Err(Error::Domain {
            name: "sigma",
            value: sigma,
        });
    }
    mt.ensure_same_dims(m0.dims())?;
    let var = sigma * sigma;
    let values = mt
        .values()
        .iter()
        .zip(m0.values())
        .map(|(&a, &b)| -(a - b) / var)
        .collect();
    Field::new(mt.width(), mt.height(), values)
}
