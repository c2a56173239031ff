use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Root mean squared error over every element. Uses the same primitive
/// sequence as the tape loss (difference, square, ordered sum, divide,
/// root), so both agree bit for bit.
pub fn rmse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            op: "rmse",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    if pred.numel() == 0 {
        return Err(contract("rmse of empty tensors"));
    }
    let sq: Tensor<T> = pred.zip_map(target, "rmse", |a, b| {
        let d = a - b;
        d * d
    })?;
    let mean = sq.sum() / T::of(sq.numel() as f64);
    Ok(mean.sqrt().as_f64())
}

/// Fraction of predictions equal to their label.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(contract(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScores {
    /// Correct pixels over all pixels.
    pub pa: f64,
    /// Mean per-class recall over classes present in the ground truth.
    pub mpa: f64,
    /// Mean intersection over union over classes present in truth or prediction.
    pub iou: f64,
}

/// Confusion-matrix accumulator; `counts[truth][pred]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Confusion {
    classes: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn add(&mut self, pred: &[u16], truth: &[u16], ignore: Option<u16>) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(contract(format!(
                "{} predicted pixels for {} labels",
                pred.len(),
                truth.len()
            )));
        }
        for (&p, &t) in pred.iter().zip(truth) {
            if Some(t) == ignore {
                continue;
            }
            let (p, t) = (p as usize, t as usize);
            if p >= self.classes || t >= self.classes {
                return Err(contract(format!(
                    "class id {} outside {} classes",
                    p.max(t),
                    self.classes
                )));
            }
            self.counts[t * self.classes + p] += 1;
        }
        Ok(())
    }

    pub fn scores(&self) -> Result<SegmentationScores> {
        let k = self.classes;
        let total: u64 = self.counts.iter().sum();
        if total == 0 {
            return Err(contract("no pixels to score"));
        }
        let diag = |c: usize| self.counts[c * k + c];
        let truth = |c: usize| (0..k).map(|p| self.counts[c * k + p]).sum::<u64>();
        let pred = |c: usize| (0..k).map(|t| self.counts[t * k + c]).sum::<u64>();
        let correct: u64 = (0..k).map(diag).sum();
        let recalls: Vec<f64> = (0..k)
            .filter(|&c| truth(c) > 0)
            .map(|c| diag(c) as f64 / truth(c) as f64)
            .collect();
        let ious: Vec<f64> = (0..k)
            .filter_map(|c| {
                let union = truth(c) + pred(c) - diag(c);
                (union > 0).then(|| diag(c) as f64 / union as f64)
            })
            .collect();
        Ok(SegmentationScores {
            pa: correct as f64 / total as f64,
            mpa: recalls.iter().sum::<f64>() / recalls.len() as f64,
            iou: ious.iter().sum::<f64>() / ious.len() as f64,
        })
    }
}

pub fn segmentation_metrics(pred: &[u16], truth: &[u16], classes: usize) -> Result<SegmentationScores> {
    let mut c = Confusion::new(classes);
    c.add(pred, truth, None)?;
    c.scores()
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + comp
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    compensated_sum(values.iter().copied()) / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rmse_cases() {
        let a = Tensor::<f64>::from_f64([4], &[0., 1., 1., 0.]).unwrap();
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| 1.0 - v);
        assert_eq!(rmse(&a, &b).unwrap(), 1.0);
        assert!(matches!(rmse(&a, &Tensor::zeros([3])), Err(Error::Shape { .. })));
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn two_by_two_confusion() {
        let s = segmentation_metrics(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert!((s.pa - 0.75).abs() < 1e-12);
        assert!((s.mpa - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((s.iou - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn predicted_absent_class_enters_iou() {
        // truth only has class 0; class 1 is predicted once
        let s = segmentation_metrics(&[0, 1], &[0, 0], 2).unwrap();
        assert_eq!(s.mpa, 0.5);
        assert_eq!(s.iou, 0.25);
        let perfect = segmentation_metrics(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!((perfect.pa, perfect.mpa, perfect.iou), (1.0, 1.0, 1.0));
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let vals = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(vals), 2.0);
    }

    proptest! {
        #[test]
        fn accuracy_matches_brute_count(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..50), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut pairs = pairs;
            pairs.shuffle(&mut crate::rng::stream(seed, crate::rng::Purpose::Test, 0));
            let (p, l): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let mut hits = 0;
            for i in 0..p.len() {
                if p[i] == l[i] {
                    hits += 1;
                }
            }
            prop_assert_eq!(accuracy(&p, &l).unwrap(), hits as f64 / p.len() as f64);
        }

        #[test]
        fn scores_in_unit_range(pred in prop::collection::vec(0u16..3, 1..40), seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, crate::rng::Purpose::Test, 0);
            let truth: Vec<u16> = pred.iter().map(|_| rng.random_range(0..3)).collect();
            let s = segmentation_metrics(&pred, &truth, 3).unwrap();
            for v in [s.pa, s.mpa, s.iou] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
