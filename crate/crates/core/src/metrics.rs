//! Segmentation metrics on thresholded masks: Dice (DSC), IoU, recall and
//! precision, averaged per image.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Pixel-level confusion counts of one image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

/// `num / den`, with an empty denominator counting as a perfect score.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn dsc(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn iou(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }
}

/// `1` where `pred >= threshold`, else `0`.
pub fn binarize<T: Scalar>(pred: &Tensor<T>, threshold: f64) -> Tensor<T> {
    let t = T::lit(threshold);
    pred.map(|v| if v >= t { T::one() } else { T::zero() })
}

fn bit<T: Scalar>(v: T, what: &str) -> Result<bool> {
    if v == T::one() {
        Ok(true)
    } else if v == T::zero() {
        Ok(false)
    } else {
        Err(Error::InvalidArgument(format!("{what} mask holds non-binary value {v}")))
    }
}

/// Confusion counts of two binary masks with equal element counts.
pub fn confusion<T: Scalar>(pred_bin: &[T], gt: &[T]) -> Result<ConfusionCounts> {
    if pred_bin.len() != gt.len() {
        return Err(Error::shape("confusion", format!("{} vs {} pixels", pred_bin.len(), gt.len())));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred_bin.iter().zip(gt) {
        match (bit(p, "prediction")?, bit(g, "ground-truth")?) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Image-averaged metrics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub dsc: f64,
    pub miou: f64,
    pub recall: f64,
    pub precision: f64,
    pub n_images: usize,
}

impl MetricsReport {
    /// `dsc  miou  recall  precision` separated by tabs.
    pub fn tsv(&self) -> String {
        format!("{:.6}\t{:.6}\t{:.6}\t{:.6}", self.dsc, self.miou, self.recall, self.precision)
    }

    pub fn key_values(&self) -> String {
        format!(
            "dsc: {:.6}\nmiou: {:.6}\nrecall: {:.6}\nprecision: {:.6}\nn_images: {}\n",
            self.dsc, self.miou, self.recall, self.precision, self.n_images
        )
    }

    /// Averages per-image counts.
    pub fn from_counts(counts: &[ConfusionCounts]) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidArgument("no images to evaluate".into()));
        }
        let n = counts.len() as f64;
        let mean = |f: fn(&ConfusionCounts) -> f64| counts.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            dsc: mean(ConfusionCounts::dsc),
            miou: mean(ConfusionCounts::iou),
            recall: mean(ConfusionCounts::recall),
            precision: mean(ConfusionCounts::precision),
            n_images: counts.len(),
        })
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key_values())
    }
}

/// Thresholds each soft prediction and scores it against its mask. Each list
/// entry is one image.
pub fn evaluate<T: Scalar>(preds: &[Tensor<T>], gts: &[Tensor<T>], threshold: f64) -> Result<MetricsReport> {
    if preds.len() != gts.len() {
        return Err(Error::InvalidArgument(format!("{} predictions for {} masks", preds.len(), gts.len())));
    }
    let counts = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| confusion(binarize(p, threshold).data(), g.data()))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_counts(&counts)
}

/// Per-image counts of an `N x ...` batch of predictions and masks.
pub fn batch_counts<T: Scalar>(preds: &Tensor<T>, gts: &Tensor<T>, threshold: f64) -> Result<Vec<ConfusionCounts>> {
    if preds.shape() != gts.shape() || preds.shape().is_empty() {
        return Err(Error::shape("batch_counts", format!("{:?} vs {:?}", preds.shape(), gts.shape())));
    }
    let per = preds.numel() / preds.shape()[0];
    let bin = binarize(preds, threshold);
    bin.data().chunks_exact(per).zip(gts.data().chunks_exact(per)).map(|(p, g)| confusion(p, g)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8]) -> Tensor<f64> {
        Tensor::new([1, 1, 1, bits.len()], bits.iter().map(|&b| b as f64).collect()).unwrap()
    }

    #[test]
    fn binarize_boundary_is_inclusive() {
        let t = Tensor::<f32>::full([2, 2], 0.5);
        assert!(binarize(&t, 0.5).data().iter().all(|&v| v == 1.0));
        let t = Tensor::<f32>::full([2, 2], 0.4999);
        assert!(binarize(&t, 0.5).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn perfect_match() {
        let g = Tensor::<f32>::ones([1, 1, 4, 4]);
        let c = confusion(g.data(), g.data()).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 16, fp: 0, fn_: 0, tn: 0 });
        let r = evaluate(&[g.clone()], &[g], 0.5).unwrap();
        assert_eq!((r.dsc, r.miou, r.recall, r.precision), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn complement_has_no_agreement() {
        let p = mask(&[1, 0, 1, 0, 0]);
        let g = mask(&[0, 1, 0, 1, 1]);
        let c = confusion(p.data(), g.data()).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        let r = evaluate(&[p], &[g], 0.5).unwrap();
        assert_eq!((r.dsc, r.miou, r.recall, r.precision), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn counted_example() {
        // tp = 2, fp = 2, fn = 2, tn = 1
        let p = mask(&[1, 1, 1, 1, 0, 0, 0]);
        let g = mask(&[1, 1, 0, 0, 1, 1, 0]);
        let c = confusion(p.data(), g.data()).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 2, fp: 2, fn_: 2, tn: 1 });
        assert_eq!(c.dsc(), 0.5);
        assert!((c.iou() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.recall(), 0.5);
        assert_eq!(c.precision(), 0.5);
    }

    #[test]
    fn empty_masks_are_perfect() {
        let z = mask(&[0, 0, 0]);
        let r = evaluate(&[z.clone()], &[z], 0.5).unwrap();
        assert_eq!((r.dsc, r.miou, r.recall, r.precision), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn rejects_non_binary_and_empty() {
        let p = Tensor::<f32>::full([1, 3], 0.3);
        assert!(confusion(p.data(), p.data()).is_err());
        assert!(evaluate::<f32>(&[], &[], 0.5).is_err());
    }

    #[test]
    fn report_formats() {
        let r = MetricsReport { dsc: 0.5, miou: 0.25, recall: 1.0, precision: 0.125, n_images: 3 };
        assert_eq!(r.tsv(), "0.500000\t0.250000\t1.000000\t0.125000");
        assert!(r.key_values().starts_with("dsc: 0.500000\nmiou: 0.250000\n"));
    }
}
