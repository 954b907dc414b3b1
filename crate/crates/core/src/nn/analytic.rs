use crate::error::{Error, Result};
use crate::grid::{CondImage, Field};

use super::ScoreFn;

/// Exact score of `N(mu, s^2 I)` convolved with `N(0, sigma^2 I)`; ignores the
/// conditioning image. Used to validate the sampler against closed forms.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticGaussianScore {
    mean: Field,
    base_var: f64,
}

impl AnalyticGaussianScore {
    pub fn new(mean: Field, base_var: f64) -> Result<Self> {
        if !(base_var > 0.0) || !base_var.is_finite() {
            return Err(Error::Domain {
                name: "base variance",
                value: base_var,
            });
        }
        Ok(Self { mean, base_var })
    }

    pub fn mean(&self) -> &Field {
        &self.mean
    }

    pub fn base_var(&self) -> f64 {
        self.base_var
    }

    /// `-(mt - mu) / (s^2 + sigma^2)`.
    pub fn score(&self, mt: &Field, sigma: f64) -> Result<Field> {
        self.mean.ensure_same_dims(mt.dims())?;
        let mut out = Field::filled(mt.width(), mt.height(), 0.0);
        self.eval(mt.values(), sigma, out.values_mut());
        Ok(out)
    }

    fn eval(&self, field: &[f64], sigma: f64, out: &mut [f64]) {
        let var = self.base_var + sigma * sigma;
        for ((o, &m), &mu) in out.iter_mut().zip(field).zip(self.mean.values()) {
            *o = -(m - mu) / var;
        }
    }
}

/// Free-function form of [`AnalyticGaussianScore::score`].
pub fn analytic_score(oracle: &AnalyticGaussianScore, mt: &Field, sigma: f64) -> Result<Field> {
    oracle.score(mt, sigma)
}

impl ScoreFn for AnalyticGaussianScore {
    fn score_batch(&self, fields: &[f64], _x: &CondImage, sigma: f64, out: &mut [f64]) -> Result<()> {
        let n = self.mean.len();
        if fields.len() % n != 0 || out.len() != fields.len() {
            return Err(Error::LengthMismatch {
                expected: n,
                found: fields.len(),
            });
        }
        for (f, o) in fields.chunks(n).zip(out.chunks_mut(n)) {
            self.eval(f, sigma, o);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn closed_form_values() {
        let mu = Field::new(1, 1, vec![0.0]).unwrap();
        let g = AnalyticGaussianScore::new(mu, 1.0).unwrap();
        let m = Field::new(1, 1, vec![2.0]).unwrap();
        assert_eq!(g.score(&m, 0.0).unwrap().values(), &[-2.0]);
        assert_eq!(g.score(g.mean(), 0.7).unwrap().values(), &[0.0]);

        let mu = Field::new(1, 1, vec![0.5]).unwrap();
        let g = AnalyticGaussianScore::new(mu, 0.04).unwrap();
        let m = Field::new(1, 1, vec![1.0]).unwrap();
        let s = analytic_score(&g, &m, 0.3).unwrap().values()[0];
        assert!((s + 0.5 / 0.13).abs() < 1e-12);
        assert!((s + 3.84615).abs() < 1e-5);
        assert!(AnalyticGaussianScore::new(Field::filled(1, 1, 0.0), 0.0).is_err());
    }
}
