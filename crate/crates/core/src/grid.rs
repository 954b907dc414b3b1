//! Row-major raster types shared by every stage of the pipeline.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::config("grid dimensions must be at least 1x1"));
    }
    if width * height != len {
        return Err(Error::LengthMismatch {
            expected: width * height,
            found: len,
        });
    }
    Ok(())
}

/// Foreground/background labels, 1 = object, 0 = background.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        check_dims(width, height, labels.len())?;
        if let Some(&v) = labels.iter().find(|&&v| v > 1) {
            return Err(Error::Domain {
                name: "mask label",
                value: f64::from(v),
            });
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "empty grid");
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut mask = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                mask.labels[y * width + x] = u8::from(f(x, y));
            }
        }
        mask
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.labels[y * self.width + x] == 1
    }

    pub fn set(&mut self, x: usize, y: usize, foreground: bool) {
        self.labels[y * self.width + x] = u8::from(foreground);
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&v| v == 1).count()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.foreground_count() as f64 / self.labels.len() as f64
    }

    pub fn flip_horizontal(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            labels: flip_h(&self.labels, self.width),
        }
    }

    pub fn flip_vertical(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            labels: flip_v(&self.labels, self.width),
        }
    }
}

/// An unconstrained real-valued raster: perturbed fields, scores, samples,
/// ensemble statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "empty grid");
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
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

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    pub fn flip_horizontal(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: flip_h(&self.values, self.width),
        }
    }

    pub fn flip_vertical(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: flip_v(&self.values, self.width),
        }
    }

    pub(crate) fn ensure_same_dims(&self, other: (usize, usize)) -> Result<()> {
        if self.dims() != other {
            return Err(Error::ShapeMismatch {
                expected: self.dims(),
                found: other,
            });
        }
        Ok(())
    }
}

impl AsRef<Field> for Field {
    fn as_ref(&self) -> &Field {
        self
    }
}

/// Truncated signed distance field normalized to `[-1, 1]`.
///
/// Negative inside the object, zero on its boundary pixels, positive in the
/// background. `delta` is the truncation distance (pixels) the values were
/// normalized by.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfMap {
    field: Field,
    delta: f64,
}

impl SdfMap {
    pub fn new(field: Field, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Domain {
                name: "delta",
                value: delta,
            });
        }
        if let Some(index) = field
            .values
            .iter()
            .position(|v| !(-1.0..=1.0).contains(v))
        {
            return Err(Error::Domain {
                name: "sdf value",
                value: field.values[index],
            });
        }
        Ok(Self { field, delta })
    }

    pub(crate) fn new_unchecked(field: Field, delta: f64) -> Self {
        Self { field, delta }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn into_field(self) -> Field {
        self.field
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.field.dims()
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::new_unchecked(self.field.flip_horizontal(), self.delta)
    }

    pub fn flip_vertical(&self) -> Self {
        Self::new_unchecked(self.field.flip_vertical(), self.delta)
    }
}

impl AsRef<Field> for SdfMap {
    fn as_ref(&self) -> &Field {
        &self.field
    }
}

/// Grayscale conditioning image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CondImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl CondImage {
    /// Builds an image, clamping every intensity into `[0, 1]`.
    pub fn new(width: usize, height: usize, mut values: Vec<f64>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        for (index, v) in values.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "image intensity",
                    index,
                });
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn flip_horizontal(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: flip_h(&self.values, self.width),
        }
    }

    pub fn flip_vertical(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: flip_v(&self.values, self.width),
        }
    }
}

pub(crate) fn l2_norm(values: &[f64]) -> f64 {
    num_traits::Float::sqrt(values.iter().map(|v| v * v).sum::<f64>())
}

fn flip_h<T: Copy>(data: &[T], width: usize) -> Vec<T> {
    let mut out = data.to_vec();
    for row in out.chunks_mut(width) {
        row.reverse();
    }
    out
}

fn flip_v<T: Copy>(data: &[T], width: usize) -> Vec<T> {
    data.chunks(width).rev().flatten().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_rejects_non_binary_labels() {
        assert!(BinaryMask::new(2, 1, vec![0, 2]).is_err());
        assert!(BinaryMask::new(2, 1, vec![0, 1]).is_ok());
        assert!(BinaryMask::new(0, 1, vec![]).is_err());
        assert!(BinaryMask::new(2, 2, vec![0, 1]).is_err());
    }

    #[test]
    fn flips_are_involutions() {
        let m = BinaryMask::from_fn(3, 2, |x, y| x == 0 && y == 1);
        assert!(m.flip_horizontal().get(2, 1));
        assert!(m.flip_vertical().get(0, 0));
        assert_eq!(m.flip_horizontal().flip_horizontal(), m);
        assert_eq!(m.flip_vertical().flip_vertical(), m);
    }

    #[test]
    fn sdf_map_range_is_checked() {
        let f = Field::new(2, 1, vec![-1.0, 1.5]).unwrap();
        assert!(SdfMap::new(f, 2.0).is_err());
        let f = Field::new(2, 1, vec![-1.0, 1.0]).unwrap();
        assert!(SdfMap::new(f.clone(), 0.0).is_err());
        assert!(SdfMap::new(f, 2.0).is_ok());
    }

    #[test]
    fn cond_image_clamps() {
        let img = CondImage::new(3, 1, vec![-0.5, 0.5, 2.0]).unwrap();
        assert_eq!(img.values(), &[0.0, 0.5, 1.0]);
        assert!(CondImage::new(1, 1, vec![f64::NAN]).is_err());
    }
}
