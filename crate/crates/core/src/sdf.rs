//! Mask <-> truncated signed distance field conversion.
//!
//! The boundary of an object is the set of foreground pixels with at least
//! one 4-connected neighbor that is background or off the grid. Every pixel
//! gets the Euclidean distance (between pixel centers) to the nearest
//! boundary pixel, clamped at `delta` and divided by it; the sign is negative
//! inside the object, positive outside, and boundary pixels are exactly zero.

use alloc::vec;
use alloc::vec::Vec;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Field, SdfMap};

/// Truncation and decoding parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfConfig {
    /// Truncation distance in pixels.
    pub delta: f64,
    /// Decode threshold in normalized units.
    pub threshold_tau: f64,
}

impl SdfConfig {
    pub fn new(delta: f64, threshold_tau: f64) -> Result<Self> {
        let cfg = Self {
            delta,
            threshold_tau,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults for a grid: `delta = 10` from 64 pixels up, `5` below, and
    /// the three-sigma-min decode threshold.
    pub fn for_grid(width: usize, height: usize) -> Self {
        let delta = if width.min(height) >= 64 { 10.0 } else { 5.0 };
        Self {
            delta,
            threshold_tau: 3.0 * crate::sde::DEFAULT_SIGMA_MIN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::Domain {
                name: "delta",
                value: self.delta,
            });
        }
        if !(self.threshold_tau >= 0.0) {
            return Err(Error::Domain {
                name: "threshold_tau",
                value: self.threshold_tau,
            });
        }
        Ok(())
    }
}

#[inline]
fn is_boundary(mask: &BinaryMask, x: usize, y: usize) -> bool {
    if !mask.get(x, y) {
        return false;
    }
    let (w, h) = mask.dims();
    x == 0
        || y == 0
        || x + 1 == w
        || y + 1 == h
        || !mask.get(x - 1, y)
        || !mask.get(x + 1, y)
        || !mask.get(x, y - 1)
        || !mask.get(x, y + 1)
}

/// Boundary pixels as `(x, y)` pairs in row-major order.
pub fn boundary_pixels(mask: &BinaryMask) -> Vec<(usize, usize)> {
    let (w, h) = mask.dims();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if is_boundary(mask, x, y) {
                out.push((x, y));
            }
        }
    }
    out
}

/// Squared Euclidean distance from every pixel to the nearest boundary
/// pixel, or `None` everywhere when the mask has no boundary.
///
/// Exact separable transform: a column scan for the vertical distance to the
/// nearest seed, then the lower envelope of parabolas along each row with
/// intersections compared as exact rationals.
pub fn boundary_distance_sq(mask: &BinaryMask) -> Option<Vec<u64>> {
    let (w, h) = mask.dims();
    let seeds: Vec<bool> = (0..w * h).map(|i| is_boundary(mask, i % w, i / w)).collect();
    if !seeds.iter().any(|&s| s) {
        return None;
    }

    // Vertical distance to the nearest seed in the same column.
    const FAR: i64 = i64::MAX / 4;
    let mut col = vec![FAR; w * h];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if seeds[y * w + x] {
                last = Some(y);
            }
            if let Some(s) = last {
                col[y * w + x] = (y - s) as i64;
            }
        }
        last = None;
        for y in (0..h).rev() {
            if seeds[y * w + x] {
                last = Some(y);
            }
            if let Some(s) = last {
                let d = (s - y) as i64;
                if d < col[y * w + x] {
                    col[y * w + x] = d;
                }
            }
        }
    }

    let mut out = vec![0u64; w * h];
    let mut f = vec![0i64; w];
    let mut finite = vec![false; w];
    // Parabola apexes and the rational left edges of their envelope segments.
    let mut apex = vec![0usize; w];
    let mut edge: Vec<(i64, i64)> = vec![(0, 1); w + 1];
    for y in 0..h {
        for x in 0..w {
            let g = col[y * w + x];
            finite[x] = g < FAR;
            f[x] = if finite[x] { g * g } else { 0 };
        }
        let mut k = 0usize;
        let mut started = false;
        for q in 0..w {
            if !finite[q] {
                continue;
            }
            if !started {
                apex[0] = q;
                edge[0] = (i64::MIN / 4, 1);
                edge[1] = (i64::MAX / 4, 1);
                started = true;
                continue;
            }
            loop {
                let v = apex[k];
                let num = (f[q] + (q * q) as i64) - (f[v] + (v * v) as i64);
                let den = 2 * (q as i64 - v as i64);
                // s <= edge[k]  <=>  num / den <= e_num / e_den  (dens positive)
                let (e_num, e_den) = edge[k];
                if k > 0 && (num as i128) * (e_den as i128) <= (e_num as i128) * (den as i128) {
                    k -= 1;
                    continue;
                }
                k += 1;
                apex[k] = q;
                edge[k] = (num, den);
                edge[k + 1] = (i64::MAX / 4, 1);
                break;
            }
        }
        debug_assert!(started || !col[y * w..(y + 1) * w].iter().any(|&g| g < FAR));
        let mut k = 0usize;
        for x in 0..w {
            // advance while edge[k + 1] < x
            while {
                let (n, d) = edge[k + 1];
                (n as i128) < (x as i128) * (d as i128)
            } {
                k += 1;
            }
            let v = apex[k];
            let dx = x as i64 - v as i64;
            out[y * w + x] = (dx * dx + f[v]) as u64;
        }
    }
    Some(out)
}

#[inline]
fn truncated(d2: u64, delta: f64) -> f64 {
    (d2 as f64).sqrt().min(delta) / delta
}

/// Encodes a mask as a truncated, normalized signed distance field.
///
/// Masks with no boundary (all background) encode as uniformly `+1`.
pub fn encode_sdf(mask: &BinaryMask, cfg: &SdfConfig) -> SdfMap {
    let (w, h) = mask.dims();
    let values = match boundary_distance_sq(mask) {
        None => {
            let fill = if mask.foreground_count() == w * h { -1.0 } else { 1.0 };
            vec![fill; w * h]
        }
        Some(d2) => d2
            .iter()
            .zip(mask.labels())
            .map(|(&d2, &label)| {
                if d2 == 0 {
                    0.0
                } else if label == 1 {
                    -truncated(d2, cfg.delta)
                } else {
                    truncated(d2, cfg.delta)
                }
            })
            .collect(),
    };
    SdfMap::new_unchecked(
        Field::new(w, h, values).expect("dimensions taken from a valid mask"),
        cfg.delta,
    )
}

/// Exhaustive reference encoder: minimizes over every boundary pixel.
///
/// O(width * height * |boundary|); meant for grids up to 64x64.
pub fn brute_force_sdf(mask: &BinaryMask, cfg: &SdfConfig) -> SdfMap {
    let (w, h) = mask.dims();
    let boundary = boundary_pixels(mask);
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let fg = mask.get(x, y);
            if boundary.is_empty() {
                values.push(if fg { -1.0 } else { 1.0 });
                continue;
            }
            let mut best = f64::INFINITY;
            for &(bx, by) in &boundary {
                let dx = bx as f64 - x as f64;
                let dy = by as f64 - y as f64;
                let d = (dx * dx + dy * dy).sqrt();
                if d < best {
                    best = d;
                }
            }
            let v = if best == 0.0 {
                0.0
            } else {
                let t = best.min(cfg.delta) / cfg.delta;
                if fg {
                    -t
                } else {
                    t
                }
            };
            values.push(v);
        }
    }
    SdfMap::new_unchecked(Field::new(w, h, values).expect("valid dims"), cfg.delta)
}

/// Foreground wherever the field is at or below `tau`.
pub fn decode_mask<F: AsRef<Field>>(field: &F, tau: f64) -> BinaryMask {
    let field = field.as_ref();
    let labels = field.values().iter().map(|&v| u8::from(v <= tau)).collect();
    BinaryMask::new(field.width(), field.height(), labels).expect("valid dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn cfg(delta: f64) -> SdfConfig {
        SdfConfig::new(delta, 0.0).unwrap()
    }

    #[test]
    fn boundary_of_trivial_masks() {
        assert!(boundary_pixels(&BinaryMask::zeros(4, 4)).is_empty());
        let full = BinaryMask::from_fn(4, 4, |_, _| true);
        let b = boundary_pixels(&full);
        assert_eq!(b.len(), 12);
        assert!(!b.contains(&(1, 1)) && !b.contains(&(2, 2)));
        let single = BinaryMask::from_fn(5, 5, |x, y| x == 2 && y == 2);
        assert_eq!(boundary_pixels(&single), vec![(2, 2)]);
    }

    #[test]
    fn encode_one_by_three() {
        let m = BinaryMask::new(3, 1, vec![0, 1, 0]).unwrap();
        assert_eq!(encode_sdf(&m, &cfg(2.0)).values(), &[0.5, 0.0, 0.5]);
        assert_eq!(brute_force_sdf(&m, &cfg(2.0)).values(), &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn empty_boundary_conventions() {
        let m = BinaryMask::zeros(8, 8);
        assert!(encode_sdf(&m, &cfg(3.0)).values().iter().all(|&v| v == 1.0));
        assert!(brute_force_sdf(&m, &cfg(3.0)).values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_pixel_corner_value() {
        let m = BinaryMask::from_fn(5, 5, |x, y| x == 2 && y == 2);
        let s = brute_force_sdf(&m, &cfg(4.0));
        assert!((s.field().get(0, 0) - 8f64.sqrt() / 4.0).abs() < 1e-12);
        assert!((s.field().get(0, 0) - 0.7071).abs() < 1e-4);
        assert_eq!(encode_sdf(&m, &cfg(4.0)), s);
    }

    #[test]
    fn all_foreground_is_non_positive() {
        let m = BinaryMask::from_fn(6, 5, |_, _| true);
        let s = brute_force_sdf(&m, &cfg(2.0));
        assert!(s.values().iter().all(|&v| v <= 0.0));
        assert_eq!(encode_sdf(&m, &cfg(2.0)), s);
    }

    #[test]
    fn decode_is_inclusive() {
        let f = Field::new(4, 1, vec![-0.2, 0.0, 0.002, 0.5]).unwrap();
        assert_eq!(decode_mask(&f, 0.003).labels(), &[1, 1, 1, 0]);
        let ones = Field::filled(3, 3, 1.0);
        assert_eq!(decode_mask(&ones, 0.003).foreground_count(), 0);
    }

    fn mask_strategy(max: usize) -> impl Strategy<Value = BinaryMask> {
        (1..=max, 1..=max).prop_flat_map(|(w, h)| {
            // mix of sparse and dense masks
            (Just(w), Just(h), 0.05f64..0.95, any::<u64>()).prop_map(|(w, h, p, seed)| {
                let mut s = seed | 1;
                BinaryMask::from_fn(w, h, |_, _| {
                    s ^= s << 13;
                    s ^= s >> 7;
                    s ^= s << 17;
                    ((s >> 11) as f64 / (1u64 << 53) as f64) < p
                })
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn matches_brute_force(mask in mask_strategy(16), delta in prop::sample::select(vec![2.0, 5.0, 8.0])) {
            let c = cfg(delta);
            prop_assert_eq!(encode_sdf(&mask, &c), brute_force_sdf(&mask, &c));
        }

        #[test]
        fn round_trip_and_range(mask in mask_strategy(16)) {
            let s = encode_sdf(&mask, &cfg(5.0));
            prop_assert_eq!(decode_mask(&s, 0.0), mask.clone());
            prop_assert!(s.values().iter().all(|v| (-1.0..=1.0).contains(v)));
            for (x, y) in boundary_pixels(&mask) {
                prop_assert_eq!(s.field().get(x, y), 0.0);
            }
        }

        #[test]
        fn mirror_symmetry(mask in mask_strategy(12)) {
            let c = cfg(5.0);
            prop_assert_eq!(encode_sdf(&mask.flip_horizontal(), &c), encode_sdf(&mask, &c).flip_horizontal());
        }

        #[test]
        fn truncation_is_monotone(mask in mask_strategy(12), d1 in 1.0f64..6.0, extra in 0.5f64..6.0) {
            let d2 = d1 + extra;
            let a = encode_sdf(&mask, &cfg(d1));
            let b = encode_sdf(&mask, &cfg(d2));
            for (va, vb) in a.values().iter().zip(b.values()) {
                let ua = va.abs() * d1;
                let ub = (vb.abs() * d2).min(d1);
                prop_assert!((ua - ub).abs() < 1e-12);
            }
        }
    }
}
