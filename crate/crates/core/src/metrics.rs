//! Segmentation and saliency metrics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::BinaryMask;
use crate::error::{invalid, Error, Result};

/// Default `β²` for [`f_beta`].
pub const BETA_SQ: f64 = 0.3;
/// Number of evenly spaced binarization thresholds `k / 255`, `k = 1..=255`.
pub const F_BETA_THRESHOLDS: usize = 255;
/// Soft-map threshold used to binarize predictions for Jaccard.
pub const JACCARD_THRESHOLD: f64 = 0.5;

/// Soft object scores in `[0, 1]` on an `[h, w]` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    scores: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != height * width {
            return Err(invalid(format!(
                "saliency {height}x{width} needs {} scores, got {}",
                height * width,
                scores.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(invalid(format!("saliency score {s} outside [0, 1]")));
        }
        Ok(Self { height, width, scores })
    }

    /// Hard 0/1 map of a binary mask.
    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            height: mask.height(),
            width: mask.width(),
            scores: mask.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Pixels with score `>= threshold`.
    pub fn binarize(&self, threshold: f64) -> BinaryMask {
        BinaryMask::new(
            self.height,
            self.width,
            self.scores.iter().map(|&s| s >= threshold).collect(),
        )
        .expect("same size")
    }
}

fn same_size(h: usize, w: usize, gt: &BinaryMask) -> Result<()> {
    if (h, w) != (gt.height(), gt.width()) {
        return Err(invalid(format!(
            "prediction {h}x{w} vs ground truth {}x{}",
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

/// Intersection over union; 1 when both masks are empty.
pub fn jaccard(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    same_size(pred.height(), pred.width(), gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// `(1 + β²) P R / (β² P + R)`, with 0 when the denominator vanishes.
pub fn f_beta_from_pr(precision: f64, recall: f64, beta_sq: f64) -> f64 {
    let denom = beta_sq * precision + recall;
    if denom > 0.0 {
        (1.0 + beta_sq) * precision * recall / denom
    } else {
        0.0
    }
}

/// Threshold `k` of [`f_beta`] as a score.
pub fn threshold(k: usize) -> f64 {
    k as f64 / F_BETA_THRESHOLDS as f64
}

/// Number of thresholds a score clears, i.e. the largest `k` with
/// `threshold(k) <= s` (0 if none).
fn thresholds_cleared(s: f64) -> usize {
    let mut k = (num_traits::Float::floor(s * F_BETA_THRESHOLDS as f64).max(0.0) as usize).min(F_BETA_THRESHOLDS);
    while k < F_BETA_THRESHOLDS && threshold(k + 1) <= s {
        k += 1;
    }
    while k > 0 && threshold(k) > s {
        k -= 1;
    }
    k
}

/// Maximum F-measure over the thresholds `k / 255`, `k = 1..=255`, where
/// pixels scoring at least the threshold count as positive. Precision with
/// no positives is taken as 0.
pub fn f_beta(pred: &SaliencyMap, gt: &BinaryMask, beta_sq: f64) -> Result<f64> {
    same_size(pred.height, pred.width, gt)?;
    let positives = gt.count();
    if positives == 0 {
        return Err(Error::UndefinedMetric("F-measure needs a non-empty ground truth".into()));
    }
    // Histogram by number of thresholds cleared, then suffix sums give the
    // confusion counts at every threshold in one pass.
    let mut hit = vec![0usize; F_BETA_THRESHOLDS + 1];
    let mut miss = vec![0usize; F_BETA_THRESHOLDS + 1];
    for (&s, &g) in pred.scores.iter().zip(gt.data()) {
        let k = thresholds_cleared(s);
        if g {
            hit[k] += 1;
        } else {
            miss[k] += 1;
        }
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best: f64 = 0.0;
    for k in (1..=F_BETA_THRESHOLDS).rev() {
        tp += hit[k];
        fp += miss[k];
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = tp as f64 / positives as f64;
        best = best.max(f_beta_from_pr(precision, recall, beta_sq));
    }
    Ok(best)
}

/// Mean absolute difference between soft scores and the 0/1 ground truth.
pub fn mae(pred: &SaliencyMap, gt: &BinaryMask) -> Result<f64> {
    same_size(pred.height, pred.width, gt)?;
    if pred.scores.is_empty() {
        return Err(Error::UndefinedMetric("MAE of an empty map".into()));
    }
    let total: f64 = pred
        .scores
        .iter()
        .zip(gt.data())
        .map(|(&s, &g)| (s - if g { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(total / pred.scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, f: impl FnMut(usize, usize) -> bool) -> BinaryMask {
        BinaryMask::from_fn(h, w, f)
    }

    #[test]
    fn jaccard_examples() {
        let gt = grid(10, 10, |_, _| true);
        assert_eq!(jaccard(&gt, &gt).unwrap(), 1.0);
        let left = grid(10, 10, |_, x| x < 5);
        assert_eq!(jaccard(&left, &gt).unwrap(), 0.5);
        let right = grid(10, 10, |_, x| x >= 5);
        assert_eq!(jaccard(&left, &right).unwrap(), 0.0);
        let empty = grid(3, 3, |_, _| false);
        assert_eq!(jaccard(&empty, &empty).unwrap(), 1.0);
        assert!(jaccard(&empty, &gt).is_err());
    }

    #[test]
    fn f_beta_examples() {
        let gt = grid(4, 4, |y, _| y < 2);
        assert_eq!(f_beta(&SaliencyMap::from_mask(&gt), &gt, BETA_SQ).unwrap(), 1.0);
        let zeros = SaliencyMap::new(4, 4, vec![0.0; 16]).unwrap();
        assert_eq!(f_beta(&zeros, &gt, BETA_SQ).unwrap(), 0.0);
        // Everything positive: P = 0.5, R = 1.
        let ones = SaliencyMap::new(4, 4, vec![1.0; 16]).unwrap();
        let f = f_beta(&ones, &gt, BETA_SQ).unwrap();
        assert!((f - 1.3 * 0.5 / 1.15).abs() < 1e-15);
        assert!(matches!(
            f_beta(&ones, &grid(4, 4, |_, _| false), BETA_SQ),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn threshold_counting_is_exact_at_boundaries() {
        for k in 0..=255 {
            assert_eq!(thresholds_cleared(threshold(k)), k);
        }
        assert_eq!(thresholds_cleared(0.0), 0);
        assert_eq!(thresholds_cleared(1.0), 255);
        assert_eq!(thresholds_cleared(0.5), 127);
    }

    #[test]
    fn mae_examples() {
        let gt = grid(10, 10, |y, _| y < 3);
        assert_eq!(mae(&SaliencyMap::from_mask(&gt), &gt).unwrap(), 0.0);
        let half = SaliencyMap::new(10, 10, vec![0.5; 100]).unwrap();
        assert_eq!(mae(&half, &gt).unwrap(), 0.5);
        let fifth = SaliencyMap::new(10, 10, vec![0.2; 100]).unwrap();
        assert!((mae(&fifth, &gt).unwrap() - 0.38).abs() < 1e-12);
    }

    #[test]
    fn saliency_rejects_out_of_range() {
        assert!(SaliencyMap::new(1, 2, vec![0.0, 1.5]).is_err());
    }
}
