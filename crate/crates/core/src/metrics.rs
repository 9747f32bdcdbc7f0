//! Accuracy evaluation and binary-mask analysis.

use alloc::vec;
use alloc::vec::Vec;

use crate::calm::BinaryMask;
use crate::merge::{keep_count, magnitude_order, TaskVector};
use crate::nn::{argmax, forward, Batch, ClassWindow, LayerSlice, ModelSpec, ParamVector};
use crate::taskgen::TaskData;
use crate::{Error, Result};

/// Fraction of rows whose argmax inside `window` equals the label.
pub fn accuracy(spec: &ModelSpec, params: &ParamVector, batch: &Batch, window: ClassWindow) -> Result<f64> {
    let labels = batch.labels.as_deref().ok_or(Error::Empty("test labels"))?;
    if batch.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let logits = forward(spec, params, &batch.inputs)?;
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let row = &logits.row(i)[window.start..window.start + window.len];
            argmax(row) == y
        })
        .count();
    Ok(correct as f64 / batch.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub per_task: Vec<f64>,
    pub average: f64,
}

impl Evaluation {
    pub fn from_per_task(per_task: Vec<f64>) -> Self {
        let average = per_task.iter().sum::<f64>() / per_task.len() as f64;
        Self { per_task, average }
    }
}

/// Held-out accuracy on every task and their unweighted mean.
pub fn evaluate(spec: &ModelSpec, params: &ParamVector, tasks: &[TaskData]) -> Result<Evaluation> {
    if tasks.is_empty() {
        return Err(Error::Empty("task list"));
    }
    let per_task = tasks
        .iter()
        .map(|t| accuracy(spec, params, &t.test, t.window))
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation::from_per_task(per_task))
}

/// Fraction of ones in each layer's slice of the mask.
pub fn layer_density(mask: &BinaryMask, offsets: &[LayerSlice]) -> Result<Vec<f64>> {
    let total: usize = offsets.iter().map(|s| s.len).sum();
    if total != mask.len() {
        return Err(Error::DimensionMismatch {
            axis: "mask",
            expected: total,
            found: mask.len(),
        });
    }
    Ok(offsets
        .iter()
        .map(|s| {
            if s.len == 0 {
                0.0
            } else {
                mask.bits()[s.start..s.start + s.len].iter().filter(|&&b| b).count() as f64 / s.len as f64
            }
        })
        .collect())
}

/// For each `k` (percent), the fraction of mask-selected coordinates whose
/// `|tau|` ranks inside the top `k%` of all coordinates. Magnitude ties rank
/// the lower index first. An empty mask yields zeros.
pub fn magnitude_overlap(mask: &BinaryMask, tau: &TaskVector, k_percents: &[f64]) -> Result<Vec<f64>> {
    if mask.len() != tau.len() {
        return Err(Error::DimensionMismatch {
            axis: "mask",
            expected: tau.len(),
            found: mask.len(),
        });
    }
    let n = tau.len();
    let mut rank = vec![0usize; n];
    for (r, &i) in magnitude_order(tau.values()).iter().enumerate() {
        rank[i] = r;
    }
    let selected: Vec<usize> = (0..n).filter(|&i| mask.bits()[i]).collect();
    Ok(k_percents
        .iter()
        .map(|&k| {
            if selected.is_empty() {
                return 0.0;
            }
            let top = keep_count(k / 100.0, n);
            selected.iter().filter(|&&i| rank[i] < top).count() as f64 / selected.len() as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[bool]) -> BinaryMask {
        BinaryMask::from_bits(bits.to_vec())
    }

    #[test]
    fn layer_density_cases() {
        let offsets = [LayerSlice { start: 0, len: 4 }, LayerSlice { start: 4, len: 2 }];
        assert_eq!(layer_density(&mask(&[true; 6]), &offsets).unwrap(), vec![1.0, 1.0]);
        let m = mask(&[true, false, true, false, false, false]);
        assert_eq!(layer_density(&m, &offsets).unwrap(), vec![0.5, 0.0]);
        assert!(layer_density(&mask(&[true; 5]), &offsets).is_err());
    }

    #[test]
    fn magnitude_overlap_top_mask() {
        let values: Vec<f64> = (0..200).map(|i| f64::from(i) - 100.5).collect();
        let tau = TaskVector::new(0, 0, values);
        let order = magnitude_order(tau.values());
        let mut bits = vec![false; 200];
        for &i in order.iter().take(2) {
            bits[i] = true;
        }
        let out = magnitude_overlap(&BinaryMask::from_bits(bits), &tau, &[1.0, 50.0]).unwrap();
        assert_eq!(out, vec![1.0, 1.0]);
        assert_eq!(
            magnitude_overlap(&mask(&[false; 200]), &tau, &[1.0]).unwrap(),
            vec![0.0]
        );
    }
}
