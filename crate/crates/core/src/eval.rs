//! Overlap metrics and uncertainty/error analysis.

use alloc::vec;
use alloc::vec::Vec;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Field, SdfMap};
use crate::sampler::SampleEnsemble;
use crate::sdf::boundary_distance_sq;

/// Overlap of one predicted mask with its ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricEntry {
    pub f1: f64,
    pub iou: f64,
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
}

/// Pixelwise F1 and IoU of the foreground. Two empty masks score 1.
pub fn f1_iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<MetricEntry> {
    if pred.dims() != gt.dims() {
        return Err(Error::ShapeMismatch {
            expected: gt.dims(),
            found: pred.dims(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        match (p, g) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    let union = tp + fp + fn_;
    let (f1, iou) = if union == 0 {
        (1.0, 1.0)
    } else {
        (
            (2 * tp) as f64 / (2 * tp + fp + fn_) as f64,
            tp as f64 / union as f64,
        )
    };
    Ok(MetricEntry {
        f1,
        iou,
        true_positive: tp,
        false_positive: fp,
        false_negative: fn_,
    })
}

/// Per-image metrics and their unweighted means over images.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub entries: Vec<MetricEntry>,
    pub mean_f1: f64,
    pub mean_iou: f64,
}

impl MetricReport {
    pub fn from_entries(entries: Vec<MetricEntry>) -> Self {
        let n = entries.len().max(1) as f64;
        let mean_f1 = entries.iter().map(|e| e.f1).sum::<f64>() / n;
        let mean_iou = entries.iter().map(|e| e.iou).sum::<f64>() / n;
        Self {
            entries,
            mean_f1,
            mean_iou,
        }
    }

    /// Scores paired masks; fails on the first dimension mismatch.
    pub fn evaluate<'a>(pairs: impl IntoIterator<Item = (&'a BinaryMask, &'a BinaryMask)>) -> Result<Self> {
        let entries = pairs
            .into_iter()
            .map(|(p, g)| f1_iou(p, g))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_entries(entries))
    }
}

/// Per-pixel uncertainty and error fields of one ensemble, with summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyReport {
    pub std: Field,
    /// `|mean - gt_sdf|`.
    pub error: Field,
    /// `mmse_mask XOR gt_mask`, as a mask.
    pub xor: BinaryMask,
    /// Pixels within `band` of the ground-truth boundary.
    pub band_pixels: usize,
    /// Mean std inside the band (0 when the band is empty).
    pub band_mean_std: f64,
    /// Mean std outside the band (0 when there are no such pixels).
    pub far_mean_std: f64,
    /// Spearman rank correlation between the std and error fields.
    pub std_error_rank_correlation: f64,
}

pub fn uncertainty_maps(
    ens: &SampleEnsemble,
    gt_mask: &BinaryMask,
    gt_sdf: &SdfMap,
    band: f64,
) -> Result<UncertaintyReport> {
    if !(band >= 1.0) {
        return Err(Error::Domain {
            name: "band",
            value: band,
        });
    }
    let dims = gt_mask.dims();
    for found in [ens.mean.dims(), ens.std.dims(), gt_sdf.dims()] {
        if found != dims {
            return Err(Error::ShapeMismatch { expected: dims, found });
        }
    }
    let (w, h) = dims;
    let error = Field::new(
        w,
        h,
        ens.mean
            .values()
            .iter()
            .zip(gt_sdf.values())
            .map(|(m, g)| (m - g).abs())
            .collect(),
    )?;
    let xor = BinaryMask::new(
        w,
        h,
        ens.mmse_mask
            .labels()
            .iter()
            .zip(gt_mask.labels())
            .map(|(a, b)| a ^ b)
            .collect(),
    )?;
    let in_band: Vec<bool> = match boundary_distance_sq(gt_mask) {
        Some(d2) => d2.into_iter().map(|d| (d as f64) <= band * band).collect(),
        None => vec![false; w * h],
    };
    let (mut band_sum, mut band_n, mut far_sum, mut far_n) = (0.0, 0usize, 0.0, 0usize);
    for (&s, &b) in ens.std.values().iter().zip(&in_band) {
        if b {
            band_sum += s;
            band_n += 1;
        } else {
            far_sum += s;
            far_n += 1;
        }
    }
    let mean_or_zero = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(UncertaintyReport {
        std_error_rank_correlation: spearman(ens.std.values(), error.values()),
        std: ens.std.clone(),
        error,
        xor,
        band_pixels: band_n,
        band_mean_std: mean_or_zero(band_sum, band_n),
        far_mean_std: mean_or_zero(far_sum, far_n),
    })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; 0 when either input has no variation.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman inputs differ in length");
    pearson(&average_ranks(a), &average_ranks(b))
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdf::{encode_sdf, SdfConfig};
    use proptest::prelude::*;

    fn mask(w: usize, labels: &[u8]) -> BinaryMask {
        BinaryMask::new(w, labels.len() / w, labels.to_vec()).unwrap()
    }

    #[test]
    fn metric_examples() {
        let gt = mask(4, &[1, 1, 0, 0, 1, 1, 0, 0]);
        let e = f1_iou(&gt, &gt).unwrap();
        assert_eq!((e.f1, e.iou), (1.0, 1.0));
        let other = mask(4, &[0, 0, 1, 1, 0, 0, 1, 1]);
        let e = f1_iou(&other, &gt).unwrap();
        assert_eq!((e.f1, e.iou), (0.0, 0.0));
        let half = mask(4, &[1, 1, 0, 0, 0, 0, 0, 0]);
        let e = f1_iou(&half, &gt).unwrap();
        assert_eq!((e.true_positive, e.false_negative, e.false_positive), (2, 2, 0));
        assert_eq!(e.iou, 0.5);
        assert!((e.f1 - 2.0 / 3.0).abs() < 1e-15);
        let empty = BinaryMask::zeros(4, 2);
        assert_eq!(f1_iou(&empty, &empty).unwrap().iou, 1.0);
        assert_eq!(f1_iou(&empty, &gt).unwrap().f1, 0.0);
        assert_eq!(f1_iou(&gt, &empty).unwrap().iou, 0.0);
        assert!(f1_iou(&BinaryMask::zeros(2, 2), &gt).is_err());
    }

    #[test]
    fn report_means_are_per_image() {
        let a = mask(2, &[1, 1]);
        let b = mask(2, &[1, 0]);
        let r = MetricReport::evaluate([(&a, &a), (&b, &a)]).unwrap();
        assert_eq!(r.entries.len(), 2);
        assert_eq!(r.mean_iou, 0.75);
        assert!((r.mean_f1 - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn metric_relations(
            (w, h, p, g) in (1usize..8, 1usize..8).prop_flat_map(|(w, h)| (
                Just(w), Just(h),
                proptest::collection::vec(0u8..2, w * h),
                proptest::collection::vec(0u8..2, w * h),
            ))
        ) {
            let p = BinaryMask::new(w, h, p).unwrap();
            let g = BinaryMask::new(w, h, g).unwrap();
            let a = f1_iou(&p, &g).unwrap();
            let b = f1_iou(&g, &p).unwrap();
            prop_assert_eq!(a.iou, b.iou);
            prop_assert_eq!(a.f1, b.f1);
            prop_assert!(0.0 <= a.iou && a.iou <= a.f1 && a.f1 <= 1.0);
            prop_assert!((a.f1 - 2.0 * a.iou / (1.0 + a.iou)).abs() < 1e-12);
        }
    }

    #[test]
    fn ranks_and_correlation() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
        // monotone transforms do not change it
        let a = [0.3, 0.1, 0.7, 0.2, 0.9];
        let b = [1.0, 5.0, 2.0, 2.0, 8.0];
        let ea: Vec<f64> = a.iter().map(|v: &f64| v.exp()).collect();
        assert!((spearman(&a, &b) - spearman(&ea, &b)).abs() < 1e-15);
    }

    fn disk() -> (BinaryMask, SdfMap) {
        let m = BinaryMask::from_fn(16, 16, |x, y| {
            let (dx, dy) = (x as f64 - 7.5, y as f64 - 7.5);
            dx * dx + dy * dy <= 16.0
        });
        let s = encode_sdf(&m, &SdfConfig::for_grid(16, 16));
        (m, s)
    }

    #[test]
    fn single_sample_ensemble_has_zero_uncertainty() {
        let (m, s) = disk();
        let ens = SampleEnsemble::from_samples(vec![s.field().clone()], 0.003).unwrap();
        let r = uncertainty_maps(&ens, &m, &s, 3.0).unwrap();
        assert!(r.std.values().iter().all(|&v| v == 0.0));
        assert_eq!((r.band_mean_std, r.far_mean_std), (0.0, 0.0));
        assert!(r.error.values().iter().all(|&v| v == 0.0));
        assert_eq!(r.xor.foreground_count(), 0);
        assert!(r.band_pixels > 0);
    }

    #[test]
    fn symmetric_pair_and_band_split() {
        let (m, s) = disk();
        let c = 0.4;
        let ens = SampleEnsemble::from_samples(vec![Field::filled(16, 16, c), Field::filled(16, 16, -c)], 0.003).unwrap();
        let r = uncertainty_maps(&ens, &m, &s, 3.0).unwrap();
        assert!(r.std.values().iter().all(|&v| v == c));
        assert!((r.band_mean_std - c).abs() < 1e-12);
        assert!((r.far_mean_std - c).abs() < 1e-12);
        assert!(r.error.values().iter().all(|&v| v >= 0.0));
        // mean 0 thresholds to all-foreground: xor is the background
        assert_eq!(r.xor.foreground_count(), 256 - m.foreground_count());
        assert_eq!(r.std_error_rank_correlation, 0.0);

        // spread concentrated on the boundary
        let d2 = boundary_distance_sq(&m).unwrap();
        let near: Vec<f64> = d2.iter().map(|&d| if d <= 4 { 0.5 } else { 0.0 }).collect();
        let a: Vec<f64> = s.values().iter().zip(&near).map(|(v, n)| v + n).collect();
        let b: Vec<f64> = s.values().iter().zip(&near).map(|(v, n)| v - n).collect();
        let ens = SampleEnsemble::from_samples(
            vec![Field::new(16, 16, a).unwrap(), Field::new(16, 16, b).unwrap()],
            0.003,
        )
        .unwrap();
        let r = uncertainty_maps(&ens, &m, &s, 3.0).unwrap();
        assert!(r.band_mean_std > r.far_mean_std);
        assert!(uncertainty_maps(&ens, &m, &s, 0.5).is_err());
        assert!(uncertainty_maps(&ens, &BinaryMask::zeros(8, 8), &s, 3.0).is_err());
    }
}
