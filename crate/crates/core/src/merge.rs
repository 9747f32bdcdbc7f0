//! Task vectors and the reference merging rules: weight averaging, task
//! arithmetic and ties-merging.
//!
//! Sums over several vectors use a fixed reduction order (task id for task
//! vectors, value order for weight averaging) so every merge is independent of
//! the order its inputs are listed in.

use alloc::vec;
use alloc::vec::Vec;

use crate::nn::ParamVector;
use crate::{Error, Result};

/// `theta_ft - theta_pre` for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector {
    values: Vec<f64>,
    task_id: usize,
    spec_hash: u64,
}

impl TaskVector {
    pub fn new(task_id: usize, spec_hash: u64, values: Vec<f64>) -> Self {
        Self {
            values,
            task_id,
            spec_hash,
        }
    }

    pub fn zeros(task_id: usize, like: &ParamVector) -> Self {
        Self::new(task_id, like.spec_hash(), vec![0.0; like.len()])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn task_id(&self) -> usize {
        self.task_id
    }

    pub fn spec_hash(&self) -> u64 {
        self.spec_hash
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|v| v * v).sum())
    }

    pub(crate) fn check_matches(&self, base: &ParamVector) -> Result<()> {
        if self.spec_hash != base.spec_hash() {
            return Err(Error::SpecMismatch);
        }
        if self.values.len() != base.len() {
            return Err(Error::DimensionMismatch {
                axis: "task vector",
                expected: base.len(),
                found: self.values.len(),
            });
        }
        Ok(())
    }

    /// `base + self`, elementwise.
    pub fn apply_to(&self, base: &ParamVector) -> Result<ParamVector> {
        self.check_matches(base)?;
        let values = base
            .values()
            .iter()
            .zip(&self.values)
            .map(|(b, t)| b + t)
            .collect();
        base.with_values(values)
    }
}

pub fn task_vector(finetuned: &ParamVector, pretrained: &ParamVector, task_id: usize) -> Result<TaskVector> {
    finetuned.ensure_same_binding(pretrained)?;
    let values = finetuned
        .values()
        .iter()
        .zip(pretrained.values())
        .map(|(f, p)| f - p)
        .collect();
    Ok(TaskVector::new(task_id, pretrained.spec_hash(), values))
}

/// Elementwise arithmetic mean of the models.
pub fn weight_average(models: &[ParamVector]) -> Result<ParamVector> {
    let first = models.first().ok_or(Error::Empty("model list"))?;
    for m in models {
        m.ensure_same_binding(first)?;
    }
    let k = models.len() as f64;
    let mut column = vec![0.0; models.len()];
    let values = (0..first.len())
        .map(|i| {
            for (c, m) in column.iter_mut().zip(models) {
                *c = m.values()[i];
            }
            column.sort_unstable_by(f64::total_cmp);
            column.iter().sum::<f64>() / k
        })
        .collect();
    first.with_values(values)
}

/// Coordinate-wise sum of task vectors in ascending task-id order.
pub fn sum_task_vectors(vectors: &[&TaskVector], len: usize) -> Result<Vec<f64>> {
    let mut ordered: Vec<&TaskVector> = vectors.to_vec();
    ordered.sort_by_key(|t| t.task_id);
    let mut sum = vec![0.0; len];
    for t in ordered {
        if t.len() != len {
            return Err(Error::DimensionMismatch {
                axis: "task vector",
                expected: len,
                found: t.len(),
            });
        }
        for (s, v) in sum.iter_mut().zip(&t.values) {
            *s += v;
        }
    }
    Ok(sum)
}

fn check_scale(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(alloc::format!(
            "merging coefficient must be positive, got {lambda}"
        )))
    }
}

/// `theta_pre + lambda * sum(tau)`.
pub fn task_arithmetic(pretrained: &ParamVector, vectors: &[TaskVector], lambda: f64) -> Result<ParamVector> {
    check_scale(lambda)?;
    for t in vectors {
        t.check_matches(pretrained)?;
    }
    let refs: Vec<&TaskVector> = vectors.iter().collect();
    let sum = sum_task_vectors(&refs, pretrained.len())?;
    let values = pretrained
        .values()
        .iter()
        .zip(&sum)
        .map(|(p, s)| p + lambda * s)
        .collect();
    pretrained.with_values(values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiesConfig {
    /// Fraction of largest-magnitude entries kept per task vector.
    pub trim_fraction: f64,
    pub scale: f64,
}

impl Default for TiesConfig {
    fn default() -> Self {
        Self {
            trim_fraction: 0.2,
            scale: 0.3,
        }
    }
}

impl TiesConfig {
    pub fn validate(&self) -> Result<()> {
        check_trim_fraction(self.trim_fraction)?;
        check_scale(self.scale)
    }
}

fn check_trim_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(alloc::format!(
            "trim_fraction must lie in (0, 1], got {fraction}"
        )))
    }
}

/// `ceil(fraction * n)`, with a little slack so `0.2 * 5` keeps one entry, not two.
pub(crate) fn keep_count(fraction: f64, n: usize) -> usize {
    let k = libm::ceil(fraction * n as f64 - 1e-9);
    (k.max(0.0) as usize).min(n)
}

/// Indices sorted by descending magnitude, ties broken by lower index.
pub(crate) fn magnitude_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .abs()
            .total_cmp(&values[a].abs())
            .then(a.cmp(&b))
    });
    order
}

/// Keeps the `ceil(trim_fraction * n)` largest-magnitude entries and zeroes
/// the rest. Kept entries are copied bit-exactly.
pub fn ties_trim(tau: &TaskVector, trim_fraction: f64) -> Result<TaskVector> {
    check_trim_fraction(trim_fraction)?;
    let k = keep_count(trim_fraction, tau.len());
    let mut values = vec![0.0; tau.len()];
    for &i in magnitude_order(&tau.values).iter().take(k) {
        values[i] = tau.values[i];
    }
    Ok(TaskVector::new(tau.task_id, tau.spec_hash, values))
}

/// Per coordinate, the sign carrying more total magnitude. Zero only where
/// every entry is zero; an exact tie elects `+1`.
pub fn ties_elect_sign(vectors: &[TaskVector]) -> Result<Vec<i8>> {
    let first = vectors.first().ok_or(Error::Empty("task vector list"))?;
    let n = first.len();
    let mut positive = vec![0.0; n];
    let mut negative = vec![0.0; n];
    let mut ordered: Vec<&TaskVector> = vectors.iter().collect();
    ordered.sort_by_key(|t| t.task_id);
    for t in ordered {
        if t.len() != n {
            return Err(Error::DimensionMismatch {
                axis: "task vector",
                expected: n,
                found: t.len(),
            });
        }
        for (i, &v) in t.values.iter().enumerate() {
            if v > 0.0 {
                positive[i] += v;
            } else if v < 0.0 {
                negative[i] -= v;
            }
        }
    }
    Ok(positive
        .iter()
        .zip(&negative)
        .map(|(&p, &m)| {
            if p == 0.0 && m == 0.0 {
                0
            } else if p >= m {
                1
            } else {
                -1
            }
        })
        .collect())
}

/// Mean of the entries whose sign matches the elected sign; zero where none do.
pub fn disjoint_merge(trimmed: &[TaskVector], signs: &[i8]) -> Result<Vec<f64>> {
    let n = signs.len();
    let mut ordered: Vec<&TaskVector> = trimmed.iter().collect();
    ordered.sort_by_key(|t| t.task_id);
    let mut sum = vec![0.0; n];
    let mut count = vec![0u32; n];
    for t in ordered {
        if t.len() != n {
            return Err(Error::DimensionMismatch {
                axis: "task vector",
                expected: n,
                found: t.len(),
            });
        }
        for (i, &v) in t.values.iter().enumerate() {
            let agrees = (signs[i] > 0 && v > 0.0) || (signs[i] < 0 && v < 0.0);
            if agrees {
                sum[i] += v;
                count[i] += 1;
            }
        }
    }
    Ok(sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / f64::from(c) })
        .collect())
}

/// Trim, elect sign, disjoint merge: `theta_pre + scale * delta`.
pub fn ties_merge(pretrained: &ParamVector, vectors: &[TaskVector], config: &TiesConfig) -> Result<ParamVector> {
    config.validate()?;
    if vectors.is_empty() {
        return Err(Error::Empty("task vector list"));
    }
    for t in vectors {
        t.check_matches(pretrained)?;
    }
    let trimmed = vectors
        .iter()
        .map(|t| ties_trim(t, config.trim_fraction))
        .collect::<Result<Vec<_>>>()?;
    let signs = ties_elect_sign(&trimmed)?;
    let delta = disjoint_merge(&trimmed, &signs)?;
    let values = pretrained
        .values()
        .iter()
        .zip(&delta)
        .map(|(p, d)| p + config.scale * d)
        .collect();
    pretrained.with_values(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, ModelSpec};

    fn spec2() -> ModelSpec {
        // (1 + 1) * 1 = 2 parameters.
        ModelSpec::new(1, vec![], 2, Activation::Relu).unwrap()
    }

    fn pv(spec: &ModelSpec, v: &[f64]) -> ParamVector {
        let mut full = v.to_vec();
        full.resize(spec.parameter_count(), 0.0);
        ParamVector::from_values(spec, full).unwrap()
    }

    fn tv(id: usize, v: &[f64]) -> TaskVector {
        TaskVector::new(id, 0, v.to_vec())
    }

    #[test]
    fn task_vector_cases() {
        let spec = spec2();
        let pre = pv(&spec, &[1.0, 2.0]);
        let ft = pv(&spec, &[1.5, 1.0]);
        let tau = task_vector(&ft, &pre, 0).unwrap();
        assert_eq!(&tau.values()[..2], &[0.5, -1.0]);
        assert!(task_vector(&pre, &pre, 0).unwrap().values().iter().all(|&v| v == 0.0));
        assert_eq!(tau.apply_to(&pre).unwrap(), ft);
        let other = ModelSpec::new(2, vec![], 2, Activation::Relu).unwrap();
        assert_eq!(
            task_vector(&other.zeros(), &pre, 0).unwrap_err(),
            Error::SpecMismatch
        );
    }

    #[test]
    fn weight_average_cases() {
        let spec = spec2();
        let a = pv(&spec, &[0.0, 2.0]);
        let b = pv(&spec, &[2.0, 0.0]);
        assert_eq!(weight_average(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(&weight_average(&[a.clone(), b.clone()]).unwrap().values()[..2], &[1.0, 1.0]);
        assert_eq!(weight_average(&[]).unwrap_err(), Error::Empty("model list"));
    }

    #[test]
    fn task_arithmetic_cases() {
        let spec = spec2();
        let pre = pv(&spec, &[0.25, -1.0]);
        let ft = pv(&spec, &[0.7, 3.0]);
        let tau = task_vector(&ft, &pre, 0).unwrap();
        assert_eq!(task_arithmetic(&pre, std::slice::from_ref(&tau), 1.0).unwrap(), ft);
        let neg = TaskVector::new(1, tau.spec_hash(), tau.values().iter().map(|v| -v).collect());
        assert_eq!(task_arithmetic(&pre, &[tau.clone(), neg], 0.3).unwrap(), pre);
        assert!(task_arithmetic(&pre, &[tau], 0.0).is_err());
    }

    #[test]
    fn trim_cases() {
        let tau = tv(0, &[3.0, -1.0, 0.5, -2.0]);
        assert_eq!(ties_trim(&tau, 1.0).unwrap(), tau);
        assert_eq!(ties_trim(&tau, 0.5).unwrap().values(), &[3.0, 0.0, 0.0, -2.0]);
        // Equal magnitudes: the lower index wins.
        let tied = tv(0, &[1.0, -1.0, 1.0]);
        assert_eq!(ties_trim(&tied, 0.5).unwrap().values(), &[1.0, -1.0, 0.0]);
        assert!(ties_trim(&tau, 0.0).is_err());
        assert_eq!(keep_count(0.2, 5), 1);
    }

    #[test]
    fn elect_sign_cases() {
        let single = tv(0, &[2.0, -1.0, 0.0]);
        assert_eq!(ties_elect_sign(&[single]).unwrap(), vec![1, -1, 0]);
        let votes = [tv(0, &[1.0]), tv(1, &[1.0]), tv(2, &[-3.0])];
        assert_eq!(ties_elect_sign(&votes).unwrap(), vec![-1]);
        let tie = [tv(0, &[2.0]), tv(1, &[-2.0])];
        assert_eq!(ties_elect_sign(&tie).unwrap(), vec![1]);
    }

    #[test]
    fn disjoint_merge_cases() {
        let entries = [tv(0, &[2.0]), tv(1, &[4.0]), tv(2, &[-5.0])];
        assert_eq!(disjoint_merge(&entries, &[-1]).unwrap(), vec![-5.0]);
        assert_eq!(disjoint_merge(&entries, &[1]).unwrap(), vec![3.0]);
        assert_eq!(disjoint_merge(&entries, &[0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn ties_merge_cases() {
        let spec = spec2();
        let pre = pv(&spec, &[0.1, 0.2]);
        let ft = pv(&spec, &[-0.4, 0.9]);
        let tau = task_vector(&ft, &pre, 0).unwrap();
        let cfg = TiesConfig {
            trim_fraction: 1.0,
            scale: 1.0,
        };
        let back = ties_merge(&pre, &[tau], &cfg).unwrap();
        for (a, b) in back.values().iter().zip(ft.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(ties_merge(&pre, &[], &cfg).is_err());

        // Agreeing signs without trimming reduce to the plain mean.
        let a = TaskVector::new(0, pre.spec_hash(), vec![1.0, -2.0, 0.0, 0.0]);
        let b = TaskVector::new(1, pre.spec_hash(), vec![3.0, -4.0, 0.0, 0.0]);
        let merged = ties_merge(&pre, &[a, b], &cfg).unwrap();
        assert_eq!(merged.values(), &[0.1 + 2.0, 0.2 - 3.0, 0.0, 0.0]);
    }
}
