//! Detection overlap metrics and pose distance metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoding::PoseEstimate;
use crate::grid::{Grid, Mask};
use crate::maskgen::Annotation;
use crate::skeleton::Limb;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("mask shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("cannot aggregate an empty list")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_masks(pred: &Mask, gt: &Mask) -> Result<Self, MetricsError> {
        if pred.shape() != gt.shape() {
            return Err(MetricsError::ShapeMismatch(pred.shape(), gt.shape()));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        Ok(c)
    }

    /// `2TP / (2TP + FP + FN)`; 1.0 when both masks are empty.
    pub fn dsc(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    /// `TP / (TP + FN)`; 1.0 when the ground truth is empty.
    pub fn recall(&self) -> f64 {
        let denom = self.tp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            self.tp as f64 / denom as f64
        }
    }
}

pub fn dsc(pred: &Mask, gt: &Mask) -> Result<f64, MetricsError> {
    Ok(ConfusionCounts::from_masks(pred, gt)?.dsc())
}

pub fn recall(pred: &Mask, gt: &Mask) -> Result<f64, MetricsError> {
    Ok(ConfusionCounts::from_masks(pred, gt)?.recall())
}

pub const DEFAULT_THRESHOLD: f32 = 0.5;

pub fn binarize(map: &Grid<f32>, threshold: f32) -> Mask {
    map.map(|&v| v >= threshold)
}

pub fn binarize_slice(values: &[f32], height: usize, width: usize, threshold: f32) -> Mask {
    Mask::from_vec(height, width, values.iter().map(|&v| v >= threshold).collect())
}

/// Root mean square distance between estimated and ground-truth joints of
/// one limb, over the joints visible in the ground truth. A visible joint
/// missing from the estimate counts as `missing_penalty` pixels away.
/// `None` when the limb has no visible ground-truth joint.
pub fn limb_rmsd(est: &PoseEstimate, gt: &Annotation, limb: Limb, missing_penalty: f64) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for j in limb.joints() {
        let Some(truth) = gt.visible_position(j) else {
            continue;
        };
        let d2 = match est.joint(j) {
            Some(found) => found.position.dist_sq(truth),
            None => missing_penalty * missing_penalty,
        };
        sum += d2;
        n += 1;
    }
    (n > 0).then(|| (sum / n as f64).sqrt())
}

/// Image diagonal in pixels, the default missing-joint penalty.
pub fn diagonal(width: usize, height: usize) -> f64 {
    ((width * width + height * height) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub n: usize,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median and interquartile range.
pub fn aggregate(values: &[f64]) -> Result<Summary, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    Ok(Summary {
        median: quantile(&sorted, 0.5),
        q1,
        q3,
        iqr: q3 - q1,
        n: sorted.len(),
    })
}

/// Per-frame RMSD values of each limb with their summaries.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LimbRmsdReport {
    pub values: [Vec<f64>; 4],
}

impl LimbRmsdReport {
    pub fn push(&mut self, est: &PoseEstimate, gt: &Annotation, missing_penalty: f64) {
        for limb in Limb::ALL {
            if let Some(v) = limb_rmsd(est, gt, limb, missing_penalty) {
                self.values[limb.index()].push(v);
            }
        }
    }

    pub fn summary(&self, limb: Limb) -> Result<Summary, MetricsError> {
        aggregate(&self.values[limb.index()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::{LimbPose, LocatedJoint};
    use crate::grid::Point;
    use crate::maskgen::{JointAnnotation, Visibility};
    use crate::skeleton::{JointId, NUM_JOINTS};

    fn mask(bits: &[u8]) -> Mask {
        Mask::from_vec(1, bits.len(), bits.iter().map(|&b| b == 1).collect())
    }

    #[test]
    fn dsc_cases() {
        let a = mask(&[1, 1, 0, 0]);
        assert_eq!(dsc(&a, &a).unwrap(), 1.0);
        assert_eq!(dsc(&a, &mask(&[0, 0, 1, 1])).unwrap(), 0.0);
        let c = ConfusionCounts { tp: 50, fp: 10, fn_: 30 };
        assert!((c.dsc() - 100.0 / 140.0).abs() < 1e-12);
        assert!((c.dsc() - 0.7143).abs() < 1e-4);
        assert_eq!(dsc(&mask(&[0, 0]), &mask(&[0, 0])).unwrap(), 1.0);
    }

    #[test]
    fn recall_cases() {
        let gt = mask(&[1, 1, 0, 0]);
        assert_eq!(recall(&mask(&[1, 1, 1, 0]), &gt).unwrap(), 1.0);
        assert_eq!(ConfusionCounts { tp: 50, fp: 0, fn_: 30 }.recall(), 0.625);
        assert_eq!(recall(&mask(&[0, 0, 0, 0]), &gt).unwrap(), 0.0);
        // asymmetric witness
        let p = mask(&[1, 1, 1, 1]);
        assert_ne!(recall(&p, &gt).unwrap(), recall(&gt, &p).unwrap());
    }

    #[test]
    fn shape_mismatch() {
        let a = Mask::new(2, 2);
        let b = Mask::new(2, 3);
        assert!(matches!(dsc(&a, &b), Err(MetricsError::ShapeMismatch(..))));
    }

    #[test]
    fn binarize_cases() {
        let g = Grid::from_vec(1, 3, vec![0.7f32, 0.7, 0.7]);
        assert_eq!(binarize(&g, 0.5).count(), 3);
        let g = Grid::from_vec(1, 3, vec![0.0f32, 0.2, 0.0]);
        assert_eq!(binarize(&g, f32::MIN_POSITIVE).as_slice(), &[false, true, false]);
        let b = Grid::from_vec(1, 3, vec![1.0f32, 0.0, 1.0]);
        let once = binarize(&b, 0.5);
        let twice = binarize(&once.map(|&v| if v { 1.0f32 } else { 0.0 }), 0.5);
        assert_eq!(once, twice);
    }

    fn annotation(points: &[(f64, f64)]) -> Annotation {
        let mut joints = [JointAnnotation {
            position: Point::new(0.0, 0.0),
            visibility: Visibility::OutOfFrame,
        }; NUM_JOINTS];
        for (j, &(x, y)) in joints.iter_mut().zip(points) {
            *j = JointAnnotation::visible(x, y);
        }
        Annotation {
            frame_id: "t".into(),
            width: 128,
            height: 96,
            joints,
        }
    }

    fn estimate(points: &[(f64, f64)]) -> PoseEstimate {
        let limbs = Limb::ALL.map(|limb| {
            let mut joints = [None; 3];
            for (slot, j) in limb.joints().iter().enumerate() {
                if let Some(&(x, y)) = points.get(j.index()) {
                    joints[slot] = Some(LocatedJoint {
                        position: Point::new(x, y),
                        score: 1.0,
                    });
                }
            }
            LimbPose {
                limb,
                joints,
                connections: [None; 2],
                confidence: 0.0,
            }
        });
        PoseEstimate { limbs }
    }

    #[test]
    fn rmsd_cases() {
        let pts: Vec<(f64, f64)> = (0..12).map(|i| (10.0 + i as f64, 20.0 + 2.0 * i as f64)).collect();
        let gt = annotation(&pts);
        assert_eq!(limb_rmsd(&estimate(&pts), &gt, Limb::RightArm, 160.0), Some(0.0));
        let shifted: Vec<_> = pts.iter().map(|&(x, y)| (x + 3.0, y + 4.0)).collect();
        let v = limb_rmsd(&estimate(&shifted), &gt, Limb::LeftLeg, 160.0).unwrap();
        assert!((v - 5.0).abs() < 1e-9);
        let mut one = pts.clone();
        one[JointId::RightElbow.index()].0 += 6.0;
        let v = limb_rmsd(&estimate(&one), &gt, Limb::RightArm, 160.0).unwrap();
        assert!((v - 12f64.sqrt()).abs() < 1e-9);
        assert!((v - 3.4641).abs() < 1e-4);
    }

    #[test]
    fn rmsd_penalizes_missing_and_skips_invisible() {
        let pts: Vec<(f64, f64)> = (0..12).map(|i| (i as f64, i as f64)).collect();
        let gt = annotation(&pts);
        let est = estimate(&pts[..2]);
        // right arm: wrist missing
        let v = limb_rmsd(&est, &gt, Limb::RightArm, 10.0).unwrap();
        assert!((v - (100.0f64 / 3.0).sqrt()).abs() < 1e-9);
        let none = annotation(&[]);
        assert_eq!(limb_rmsd(&est, &none, Limb::RightArm, 10.0), None);
    }

    #[test]
    fn aggregate_cases() {
        let s = aggregate(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.median, s.iqr), (2.0, 1.0));
        let s = aggregate(&[5.0]).unwrap();
        assert_eq!((s.median, s.iqr), (5.0, 0.0));
        let s = aggregate(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(aggregate(&[3.0, 1.0, 2.0]).unwrap(), aggregate(&[1.0, 2.0, 3.0]).unwrap());
        assert_eq!(aggregate(&[]), Err(MetricsError::Empty));
    }
}
