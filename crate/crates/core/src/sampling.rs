//! Credible-set construction from unlabeled pools.
//!
//! Each unlabeled sample is scored by the entropy of its task's fine-tuned
//! model and given that model's argmax as a pseudo-label. Entropy
//! minimization sampling (EMS) keeps the lowest-entropy fraction of the pool;
//! the class-balanced variant (CB-EMS) does the same within every
//! pseudo-label class. Pseudo-labels are fixed here and never recomputed
//! while merging.
//!
//! Only the pool inputs are read: the withheld labels of an
//! [`UnlabeledPool`](crate::taskgen::UnlabeledPool) are used by
//! [`audit_accuracy`] alone.

use alloc::vec;
use alloc::vec::Vec;

use crate::nn::{argmax, forward, prediction_entropy, ClassWindow, Matrix, ModelSpec, ParamVector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSample {
    /// Row of the task's unlabeled pool.
    pub index: usize,
    /// Prediction entropy in nats.
    pub entropy: f64,
    pub pseudo_label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplingMode {
    Ems,
    CbEms,
}

/// Selected samples of one task with their frozen pseudo-labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CredibleSet {
    task_id: usize,
    num_classes: usize,
    samples: Vec<ScoredSample>,
    rate: f64,
    mode: SamplingMode,
    skipped_classes: Vec<usize>,
}

impl CredibleSet {
    /// Rebuilds a set from stored parts, re-checking its invariants.
    pub fn from_parts(
        task_id: usize,
        num_classes: usize,
        samples: Vec<ScoredSample>,
        rate: f64,
        mode: SamplingMode,
    ) -> Result<Self> {
        check_rate(rate)?;
        if samples.is_empty() {
            return Err(Error::Empty("credible set"));
        }
        if samples.windows(2).any(|w| w[0].index >= w[1].index) {
            return Err(Error::InvalidConfig("credible samples must be strictly ordered by index".into()));
        }
        for s in &samples {
            if s.pseudo_label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: s.pseudo_label,
                    classes: num_classes,
                });
            }
            if !(s.entropy >= 0.0 && s.entropy.is_finite()) {
                return Err(Error::NonFinite("sample entropy"));
            }
        }
        Ok(Self {
            task_id,
            num_classes,
            samples,
            rate,
            mode,
            skipped_classes: Vec::new(),
        })
    }

    pub fn task_id(&self) -> usize {
        self.task_id
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Selected samples in ascending pool-index order.
    pub fn samples(&self) -> &[ScoredSample] {
        &self.samples
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    /// Classes that had no pool samples under CB-EMS.
    pub fn skipped_classes(&self) -> &[usize] {
        &self.skipped_classes
    }

    /// Restores the skipped-class record of a persisted set.
    pub fn with_skipped_classes(mut self, skipped: Vec<usize>) -> Result<Self> {
        if let Some(&c) = skipped.iter().find(|&&c| c >= self.num_classes) {
            return Err(Error::LabelOutOfRange {
                label: c,
                classes: self.num_classes,
            });
        }
        self.skipped_classes = skipped;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.index).collect()
    }

    pub fn pseudo_labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.pseudo_label).collect()
    }

    /// Count of selected samples per pseudo-label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.pseudo_label] += 1;
        }
        counts
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if rate > 0.0 && rate <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(alloc::format!(
            "sampling rate must lie in (0, 1], got {rate}"
        )))
    }
}

/// `floor(rate * n)`, tolerant of representation error such as `0.3 * 10`.
pub fn take_count(rate: f64, n: usize) -> usize {
    (libm::floor(rate * n as f64 + 1e-9).max(0.0) as usize).min(n)
}

/// Entropy and pseudo-label for every pool row, scored on `window`.
pub fn score_pool(
    spec: &ModelSpec,
    params: &ParamVector,
    inputs: &Matrix,
    window: ClassWindow,
) -> Result<Vec<ScoredSample>> {
    if inputs.rows() == 0 {
        return Err(Error::Empty("unlabeled pool"));
    }
    let logits = forward(spec, params, inputs)?;
    (0..inputs.rows())
        .map(|i| {
            let row = &logits.row(i)[window.start..window.start + window.len];
            Ok(ScoredSample {
                index: i,
                entropy: prediction_entropy(row)?,
                pseudo_label: argmax(row),
            })
        })
        .collect()
}

fn by_entropy_then_index(a: &ScoredSample, b: &ScoredSample) -> core::cmp::Ordering {
    a.entropy.total_cmp(&b.entropy).then(a.index.cmp(&b.index))
}

/// The `floor(rate * N)` lowest-entropy samples of the pool.
pub fn select_ems(scored: &[ScoredSample], rate: f64, num_classes: usize, task_id: usize) -> Result<CredibleSet> {
    check_rate(rate)?;
    let k = take_count(rate, scored.len());
    if k == 0 {
        return Err(Error::RateTooSmall {
            rate,
            pool: scored.len(),
        });
    }
    let mut sorted = scored.to_vec();
    sorted.sort_by(by_entropy_then_index);
    sorted.truncate(k);
    sorted.sort_by_key(|s| s.index);
    CredibleSet::from_parts(task_id, num_classes, sorted, rate, SamplingMode::Ems)
}

/// Class-balanced EMS grouped by pseudo-label.
pub fn select_cb_ems(scored: &[ScoredSample], rate: f64, num_classes: usize, task_id: usize) -> Result<CredibleSet> {
    let groups: Vec<usize> = scored.iter().map(|s| s.pseudo_label).collect();
    select_cb_ems_grouped(scored, rate, num_classes, task_id, &groups)
}

/// Class-balanced EMS with an explicit class for every scored sample.
///
/// From each group `c` the `floor(rate * |D_c|)` lowest-entropy samples are
/// kept. Groups with an empty pool are recorded in
/// [`CredibleSet::skipped_classes`]. Grouping by anything other than the
/// pseudo-labels (such as audit labels) is for comparison experiments only.
pub fn select_cb_ems_grouped(
    scored: &[ScoredSample],
    rate: f64,
    num_classes: usize,
    task_id: usize,
    groups: &[usize],
) -> Result<CredibleSet> {
    check_rate(rate)?;
    if groups.len() != scored.len() {
        return Err(Error::DimensionMismatch {
            axis: "group labels",
            expected: scored.len(),
            found: groups.len(),
        });
    }
    let mut pools: Vec<Vec<ScoredSample>> = vec![Vec::new(); num_classes];
    for (s, &g) in scored.iter().zip(groups) {
        if g >= num_classes || s.pseudo_label >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: g.max(s.pseudo_label),
                classes: num_classes,
            });
        }
        pools[g].push(*s);
    }
    let skipped: Vec<usize> = (0..num_classes).filter(|&c| pools[c].is_empty()).collect();
    if skipped.len() == num_classes {
        return Err(Error::Empty("every class pool"));
    }
    let mut selected = Vec::new();
    for pool in &mut pools {
        let k = take_count(rate, pool.len());
        pool.sort_by(by_entropy_then_index);
        selected.extend_from_slice(&pool[..k]);
    }
    if selected.is_empty() {
        return Err(Error::RateTooSmall {
            rate,
            pool: scored.len(),
        });
    }
    selected.sort_by_key(|s| s.index);
    CredibleSet::from_parts(task_id, num_classes, selected, rate, SamplingMode::CbEms)?.with_skipped_classes(skipped)
}

/// Fraction of pseudo-labels matching the withheld labels. Reporting only.
pub fn audit_accuracy(set: &CredibleSet, audit_labels: &[usize]) -> Result<f64> {
    let mut correct = 0usize;
    for s in set.samples() {
        let truth = *audit_labels.get(s.index).ok_or(Error::DimensionMismatch {
            axis: "audit labels",
            expected: s.index + 1,
            found: audit_labels.len(),
        })?;
        if truth == s.pseudo_label {
            correct += 1;
        }
    }
    Ok(correct as f64 / set.len() as f64)
}

/// Five-number summary of one class's entropies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linearly interpolated percentile of sorted data (position `p * (n - 1)`).
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Entropy quartiles per pseudo-label class; `None` for classes with no samples.
pub fn class_entropy_stats(scored: &[ScoredSample], num_classes: usize) -> Result<Vec<Option<BoxStats>>> {
    if scored.is_empty() {
        return Err(Error::Empty("scored pool"));
    }
    let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); num_classes];
    for s in scored {
        per_class
            .get_mut(s.pseudo_label)
            .ok_or(Error::LabelOutOfRange {
                label: s.pseudo_label,
                classes: num_classes,
            })?
            .push(s.entropy);
    }
    Ok(per_class
        .into_iter()
        .map(|mut v| {
            if v.is_empty() {
                return None;
            }
            v.sort_unstable_by(f64::total_cmp);
            Some(BoxStats {
                count: v.len(),
                min: v[0],
                q1: percentile(&v, 0.25),
                median: percentile(&v, 0.5),
                q3: percentile(&v, 0.75),
                max: v[v.len() - 1],
            })
        })
        .collect())
}
