//! Efficient/sequential task split and consensus-aware mask merging.
//!
//! Tasks in the efficient set `S` are folded together by task arithmetic into
//! `tau_seq = lambda * sum(tau_i)`. Each task `j` of the ordered sequential set
//! then enters through a binary mask `M`:
//!
//! ```text
//! tau_seq <- (1 - M) * tau_seq + M * tau_j
//! ```
//!
//! The mask is learned as `M = sigmoid(R)` by gradient descent on the summed
//! loss of every visible task (the efficient set plus every sequential task
//! merged so far, including `j`) plus `alpha * mean(sigmoid(R))`, and rounded
//! once optimization ends. With a binary mask every coordinate of the result
//! is copied from exactly one of the two sources.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};

use crate::merge::{sum_task_vectors, TaskVector};
use crate::nn::{objective_and_grad, ClassWindow, Matrix, ModelSpec, Objective, ParamVector};
use crate::sampling::CredibleSet;
use crate::seed::{self, STAGE_MASK, STAGE_PARTITION};
use crate::{Error, Result};

/// Task id carried by merged (multi-task) task vectors.
pub const MERGED_TASK: usize = usize::MAX;

/// Logistic function, evaluated without overflow for either sign.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// How the mask combines the running merge with the incoming task vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MergeStrategy {
    /// `(1 - M) * tau_seq + M * tau_j`
    #[default]
    Both,
    /// `tau_seq + M * tau_j`
    OnlyMask,
    /// `(1 - M) * tau_seq + tau_j`
    OnlyComplement,
}

impl MergeStrategy {
    fn combine(self, seq: f64, incoming: f64, m: f64) -> f64 {
        match self {
            MergeStrategy::Both => (1.0 - m) * seq + m * incoming,
            MergeStrategy::OnlyMask => seq + m * incoming,
            MergeStrategy::OnlyComplement => (1.0 - m) * seq + incoming,
        }
    }

    fn select(self, seq: f64, incoming: f64, bit: bool) -> f64 {
        match (self, bit) {
            (MergeStrategy::Both, true) => incoming,
            (MergeStrategy::Both, false) => seq,
            (MergeStrategy::OnlyMask, true) => seq + incoming,
            (MergeStrategy::OnlyMask, false) => seq,
            (MergeStrategy::OnlyComplement, true) => incoming,
            (MergeStrategy::OnlyComplement, false) => seq + incoming,
        }
    }

    /// Derivative of the merged coordinate with respect to `M`.
    fn mask_derivative(self, seq: f64, incoming: f64) -> f64 {
        match self {
            MergeStrategy::Both => incoming - seq,
            MergeStrategy::OnlyMask => incoming,
            MergeStrategy::OnlyComplement => -seq,
        }
    }
}

/// Real-valued mask parameters `R`; the soft mask is `sigmoid(R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMask {
    r: Vec<f64>,
}

impl RealMask {
    pub fn new(r: Vec<f64>) -> Result<Self> {
        if r.iter().all(|v| v.is_finite()) {
            Ok(Self { r })
        } else {
            Err(Error::NonFinite("real mask"))
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.r
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn soft(&self) -> Vec<f64> {
        self.r.iter().map(|&x| sigmoid(x)).collect()
    }

    /// Fraction of coordinates that would round to one.
    pub fn density(&self) -> f64 {
        if self.r.is_empty() {
            return 0.0;
        }
        self.r.iter().filter(|&&x| x >= 0.0).count() as f64 / self.r.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn zeros(n: usize) -> Self {
        Self { bits: vec![false; n] }
    }

    pub fn ones(n: usize) -> Self {
        Self { bits: vec![true; n] }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn density(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count_ones() as f64 / self.bits.len() as f64
        }
    }

    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }
}

/// `M* = round(sigmoid(R))`. The threshold is taken on `R` itself, so
/// `R = 0` (sigmoid exactly one half) rounds up to one.
pub fn binarize(mask: &RealMask) -> BinaryMask {
    BinaryMask {
        bits: mask.r.iter().map(|&x| x >= 0.0).collect(),
    }
}

/// A soft or binary mask handed to [`masked_merge`].
#[derive(Debug, Clone, Copy)]
pub enum MaskValues<'a> {
    Soft(&'a [f64]),
    Binary(&'a BinaryMask),
}

impl MaskValues<'_> {
    fn len(&self) -> usize {
        match self {
            MaskValues::Soft(m) => m.len(),
            MaskValues::Binary(m) => m.len(),
        }
    }
}

/// Combines the running merge with an incoming task vector under a mask.
///
/// Binary masks select coordinates verbatim rather than multiplying by
/// zero and one, so the `Both` strategy copies every output bit-exactly from
/// one of its inputs.
pub fn masked_merge(
    tau_seq: &[f64],
    tau_j: &[f64],
    mask: MaskValues<'_>,
    strategy: MergeStrategy,
) -> Result<Vec<f64>> {
    if tau_seq.len() != tau_j.len() || mask.len() != tau_j.len() {
        return Err(Error::DimensionMismatch {
            axis: "mask merge operands",
            expected: tau_seq.len(),
            found: if tau_j.len() != tau_seq.len() {
                tau_j.len()
            } else {
                mask.len()
            },
        });
    }
    Ok(match mask {
        MaskValues::Soft(m) => {
            if let Some(bad) = m.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "soft mask entry {bad} outside [0, 1]"
                )));
            }
            tau_seq
                .iter()
                .zip(tau_j)
                .zip(m)
                .map(|((&s, &t), &mv)| strategy.combine(s, t, mv))
                .collect()
        }
        MaskValues::Binary(m) => tau_seq
            .iter()
            .zip(tau_j)
            .zip(&m.bits)
            .map(|((&s, &t), &b)| strategy.select(s, t, b))
            .collect(),
    })
}

/// How each visible task contributes to the mask objective.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Cross-entropy against fixed labels (pseudo-labels or ground truth).
    Labels(Vec<usize>),
    /// Mean prediction entropy of the merged model, no labels.
    Entropy,
}

/// Data one visible task contributes to the mask objective.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibleTask {
    pub task_id: usize,
    pub window: ClassWindow,
    pub inputs: Matrix,
    pub targets: Targets,
}

impl VisibleTask {
    /// The credible samples of a task with their frozen pseudo-labels.
    pub fn from_credible(set: &CredibleSet, pool_inputs: &Matrix, window: ClassWindow) -> Result<Self> {
        let indices = set.indices();
        if let Some(&bad) = indices.iter().find(|&&i| i >= pool_inputs.rows()) {
            return Err(Error::DimensionMismatch {
                axis: "credible index",
                expected: pool_inputs.rows(),
                found: bad,
            });
        }
        Ok(Self {
            task_id: set.task_id(),
            window,
            inputs: pool_inputs.select_rows(&indices),
            targets: Targets::Labels(set.pseudo_labels()),
        })
    }

    pub fn labeled(task_id: usize, inputs: Matrix, labels: Vec<usize>, window: ClassWindow) -> Result<Self> {
        if labels.len() != inputs.rows() {
            return Err(Error::DimensionMismatch {
                axis: "labels",
                expected: inputs.rows(),
                found: labels.len(),
            });
        }
        Ok(Self {
            task_id,
            window,
            inputs,
            targets: Targets::Labels(labels),
        })
    }

    pub fn entropy(task_id: usize, inputs: Matrix, window: ClassWindow) -> Self {
        Self {
            task_id,
            window,
            inputs,
            targets: Targets::Entropy,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    fn subset(&self, rows: &[usize]) -> VisibleTask {
        VisibleTask {
            task_id: self.task_id,
            window: self.window,
            inputs: self.inputs.select_rows(rows),
            targets: match &self.targets {
                Targets::Labels(l) => Targets::Labels(rows.iter().map(|&i| l[i]).collect()),
                Targets::Entropy => Targets::Entropy,
            },
        }
    }

    fn objective(&self) -> Objective<'_> {
        match &self.targets {
            Targets::Labels(l) => Objective::CrossEntropy(l),
            Targets::Entropy => Objective::Entropy,
        }
    }
}

/// Which samples of each visible task feed one optimization step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSchedule {
    /// Every sample of every visible task, every iteration.
    FullBatch,
    /// `batches_per_task` batches of `batch_size` drawn per task and iteration
    /// (the batch shrinks to the task's sample count when that is smaller).
    Sampled {
        batches_per_task: usize,
        batch_size: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskConfig {
    /// Weight of the `mean(sigmoid(R))` sparsity term.
    pub alpha: f64,
    pub iterations: usize,
    pub schedule: BatchSchedule,
    pub learning_rate: f64,
    /// Fraction of coordinates initialized active (at least one is).
    pub init_active_fraction: f64,
    /// Magnitude `r0` of the initial logits: active `+r0`, inactive `-r0`.
    pub init_logit: f64,
    pub strategy: MergeStrategy,
    /// Start each sequential step from the previous step's `R` instead of a
    /// fresh initialization.
    pub carry_over: bool,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            iterations: 100,
            schedule: BatchSchedule::Sampled {
                batches_per_task: 2,
                batch_size: 128,
            },
            learning_rate: 1000.0,
            init_active_fraction: 1e-5,
            init_logit: 4.595,
            strategy: MergeStrategy::Both,
            carry_over: false,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be non-negative");
        }
        if self.iterations == 0 {
            return bad("mask iterations must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("mask learning rate must be non-negative");
        }
        if !(0.0..1.0).contains(&self.init_active_fraction) {
            return bad("init_active_fraction must lie in [0, 1)");
        }
        if !self.init_logit.is_finite() {
            return bad("init_logit must be finite");
        }
        if let BatchSchedule::Sampled {
            batches_per_task,
            batch_size,
        } = self.schedule
        {
            if batches_per_task == 0 || batch_size == 0 {
                return bad("batch schedule needs at least one non-empty batch");
            }
        }
        Ok(())
    }
}

/// Task split plus every merging hyperparameter.
#[derive(Debug, Clone, PartialEq)]
pub struct MergePlan {
    /// Tasks merged up front by task arithmetic.
    pub efficient: Vec<usize>,
    /// Tasks merged one at a time through masks, in order.
    pub sequential: Vec<usize>,
    pub lambda: f64,
    pub mask: MaskConfig,
    pub seed: u64,
}

impl MergePlan {
    pub fn validate(&self, num_tasks: usize) -> Result<()> {
        let mut seen = vec![false; num_tasks];
        for &t in self.efficient.iter().chain(&self.sequential) {
            if t >= num_tasks || seen[t] {
                return Err(Error::InvalidConfig(alloc::format!(
                    "task {t} is out of range or listed twice in the merge plan"
                )));
            }
            seen[t] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidConfig("merge plan does not cover every task".into()));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig("lambda must be positive".into()));
        }
        self.mask.validate()
    }
}

/// Seeded random choice (and order) of `num_sequential` tasks; the remaining
/// tasks, ascending, form the efficient set.
pub fn partition(task_ids: &[usize], num_sequential: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if num_sequential > task_ids.len() {
        return Err(Error::InvalidConfig(alloc::format!(
            "cannot merge {num_sequential} of {} tasks sequentially",
            task_ids.len()
        )));
    }
    let mut rng = seed::rng(seed::derive(seed, STAGE_PARTITION));
    let mut shuffled = task_ids.to_vec();
    shuffled.shuffle(&mut rng);
    let sequential = shuffled[..num_sequential].to_vec();
    let mut efficient = shuffled[num_sequential..].to_vec();
    efficient.sort_unstable();
    Ok((efficient, sequential))
}

/// Running merge between sequential steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialState {
    pub tau_seq: TaskVector,
    pub visible: Vec<usize>,
    pub step: usize,
}

/// `tau_seq = lambda * sum(tau_i for i in S)`; zero when `S` is empty.
pub fn efficient_merge(pretrained: &ParamVector, efficient: &[&TaskVector], lambda: f64) -> Result<SequentialState> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig("lambda must be positive".into()));
    }
    for t in efficient {
        t.check_matches(pretrained)?;
    }
    let sum = sum_task_vectors(efficient, pretrained.len())?;
    let values = sum.into_iter().map(|s| lambda * s).collect();
    let mut visible: Vec<usize> = efficient.iter().map(|t| t.task_id()).collect();
    visible.sort_unstable();
    Ok(SequentialState {
        tau_seq: TaskVector::new(MERGED_TASK, pretrained.spec_hash(), values),
        visible,
        step: 0,
    })
}

/// Mask objective and its exact gradient with respect to `R`.
///
/// `theta = theta_pre + merge(tau_seq, tau_j, sigmoid(R))`; the loss is the
/// sum over `batches` of each task's mean objective at `theta`, plus
/// `alpha * mean(sigmoid(R))`. The sparsity term is averaged over coordinates
/// so that `alpha` and the learning rate do not scale with model size.
#[allow(clippy::too_many_arguments)]
pub fn consensus_objective(
    spec: &ModelSpec,
    pretrained: &ParamVector,
    tau_seq: &[f64],
    tau_j: &[f64],
    mask: &RealMask,
    batches: &[VisibleTask],
    alpha: f64,
    strategy: MergeStrategy,
) -> Result<(f64, Vec<f64>)> {
    let n = pretrained.len();
    if mask.len() != n {
        return Err(Error::DimensionMismatch {
            axis: "real mask",
            expected: n,
            found: mask.len(),
        });
    }
    let soft = mask.soft();
    let merged = masked_merge(tau_seq, tau_j, MaskValues::Soft(&soft), strategy)?;
    let theta = pretrained.with_values(
        pretrained
            .values()
            .iter()
            .zip(&merged)
            .map(|(p, t)| p + t)
            .collect(),
    )?;

    let mut loss = 0.0;
    let mut grad_theta = vec![0.0; n];
    for task in batches {
        let g = objective_and_grad(spec, &theta, &task.inputs, task.objective(), task.window)?;
        loss += g.loss;
        for (acc, v) in grad_theta.iter_mut().zip(&g.param_grad) {
            *acc += v;
        }
    }
    let l1_weight = alpha / n as f64;
    loss += l1_weight * soft.iter().sum::<f64>();

    let grad_r = (0..n)
        .map(|i| {
            let ds = soft[i] * (1.0 - soft[i]);
            let dm = strategy.mask_derivative(tau_seq[i], tau_j[i]);
            grad_theta[i] * dm * ds + l1_weight * ds
        })
        .collect();
    Ok((loss, grad_r))
}

/// `max(1, floor(fraction * n))` seeded coordinates at `+init_logit`, the rest
/// at `-init_logit`.
pub fn init_mask(n: usize, init_active_fraction: f64, init_logit: f64, seed: u64) -> Result<RealMask> {
    if !(0.0..1.0).contains(&init_active_fraction) {
        return Err(Error::InvalidConfig("init_active_fraction must lie in [0, 1)".into()));
    }
    if n == 0 {
        return Err(Error::Empty("mask"));
    }
    let active = (libm::floor(init_active_fraction * n as f64) as usize).clamp(1, n);
    let mut r = vec![-init_logit; n];
    let mut rng = seed::rng(seed);
    for i in index::sample(&mut rng, n, active) {
        r[i] = init_logit;
    }
    RealMask::new(r)
}

/// Result of optimizing one mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskOptimization {
    pub mask: RealMask,
    /// Objective at the start of every iteration.
    pub objective_trace: Vec<f64>,
    /// Rounded-mask density after every iteration.
    pub density_trace: Vec<f64>,
}

fn draw_batches(
    tasks: &[&VisibleTask],
    schedule: BatchSchedule,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<VisibleTask> {
    match schedule {
        BatchSchedule::FullBatch => tasks.iter().map(|&t| t.clone()).collect(),
        BatchSchedule::Sampled {
            batches_per_task,
            batch_size,
        } => tasks
            .iter()
            .map(|t| {
                let size = batch_size.min(t.len());
                let mut rows = Vec::with_capacity(size * batches_per_task);
                for _ in 0..batches_per_task {
                    rows.extend(index::sample(rng, t.len(), size));
                }
                t.subset(&rows)
            })
            .collect(),
    }
}

/// Gradient descent on `R` for `config.iterations` steps.
#[allow(clippy::too_many_arguments)]
pub fn optimize_mask(
    spec: &ModelSpec,
    pretrained: &ParamVector,
    tau_seq: &[f64],
    tau_j: &[f64],
    init: RealMask,
    visible: &[&VisibleTask],
    config: &MaskConfig,
    seed: u64,
) -> Result<MaskOptimization> {
    config.validate()?;
    if let Some(t) = visible.iter().find(|t| t.is_empty()) {
        return Err(Error::MissingTask(t.task_id));
    }
    let mut rng = seed::rng(seed);
    let mut r = init.r;
    let mut objective_trace = Vec::with_capacity(config.iterations);
    let mut density_trace = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let batches = draw_batches(visible, config.schedule, &mut rng);
        let current = RealMask { r };
        let (loss, grad) = consensus_objective(
            spec,
            pretrained,
            tau_seq,
            tau_j,
            &current,
            &batches,
            config.alpha,
            config.strategy,
        )?;
        r = current.r;
        for (ri, g) in r.iter_mut().zip(&grad) {
            *ri -= config.learning_rate * g;
        }
        objective_trace.push(loss);
        density_trace.push(r.iter().filter(|&&x| x >= 0.0).count() as f64 / r.len() as f64);
    }
    Ok(MaskOptimization {
        mask: RealMask::new(r)?,
        objective_trace,
        density_trace,
    })
}

/// Everything recorded for one sequential step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepArtifact {
    pub task_id: usize,
    pub visible: Vec<usize>,
    /// Running merge before this step.
    pub tau_before: TaskVector,
    pub real_mask: RealMask,
    pub mask: BinaryMask,
    pub objective_trace: Vec<f64>,
    pub density_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequentialOutcome {
    pub merged: ParamVector,
    pub final_tau: TaskVector,
    pub steps: Vec<StepArtifact>,
}

/// Full pipeline: efficient merge, then one optimized mask per sequential task.
///
/// `task_vectors` and `objectives` are looked up by task id; every task that
/// becomes visible needs an objective.
pub fn sequential_merge(
    spec: &ModelSpec,
    pretrained: &ParamVector,
    task_vectors: &[TaskVector],
    plan: &MergePlan,
    objectives: &[VisibleTask],
) -> Result<SequentialOutcome> {
    pretrained.ensure_bound(spec)?;
    plan.validate(task_vectors.len())?;
    let vector = |id: usize| {
        task_vectors
            .iter()
            .find(|t| t.task_id() == id)
            .ok_or(Error::MissingTask(id))
    };
    let objective = |id: usize| {
        objectives
            .iter()
            .find(|t| t.task_id == id)
            .ok_or(Error::MissingTask(id))
    };

    let efficient = plan
        .efficient
        .iter()
        .map(|&id| vector(id))
        .collect::<Result<Vec<_>>>()?;
    let mut state = efficient_merge(pretrained, &efficient, plan.lambda)?;
    let mask_root = seed::derive(plan.seed, STAGE_MASK);
    let mut steps = Vec::with_capacity(plan.sequential.len());
    let mut carried: Option<RealMask> = None;

    for (step, &j) in plan.sequential.iter().enumerate() {
        let tau_j = vector(j)?;
        tau_j.check_matches(pretrained)?;
        state.visible.push(j);
        let visible = state
            .visible
            .iter()
            .map(|&id| objective(id))
            .collect::<Result<Vec<_>>>()?;
        let init = match (&carried, plan.mask.carry_over) {
            (Some(prev), true) => prev.clone(),
            _ => init_mask(
                pretrained.len(),
                plan.mask.init_active_fraction,
                plan.mask.init_logit,
                seed::derive(mask_root, 2 * step as u64),
            )?,
        };
        let opt = optimize_mask(
            spec,
            pretrained,
            state.tau_seq.values(),
            tau_j.values(),
            init,
            &visible,
            &plan.mask,
            seed::derive(mask_root, 2 * step as u64 + 1),
        )?;
        let mask = binarize(&opt.mask);
        let next = masked_merge(
            state.tau_seq.values(),
            tau_j.values(),
            MaskValues::Binary(&mask),
            plan.mask.strategy,
        )?;
        let tau_before = core::mem::replace(
            &mut state.tau_seq,
            TaskVector::new(MERGED_TASK, pretrained.spec_hash(), next),
        );
        state.step = step + 1;
        steps.push(StepArtifact {
            task_id: j,
            visible: state.visible.clone(),
            tau_before,
            real_mask: opt.mask.clone(),
            mask,
            objective_trace: opt.objective_trace,
            density_trace: opt.density_trace,
        });
        carried = Some(opt.mask);
    }

    let merged = state.tau_seq.apply_to(pretrained)?;
    Ok(SequentialOutcome {
        merged,
        final_tau: state.tau_seq,
        steps,
    })
}

/// The six models of the single-step component ablation: the running merge
/// before the step and the incoming task vector, each whole and each
/// restricted by the learned mask, plus their masked combination.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentModels {
    pub pretrained: ParamVector,
    pub with_running: ParamVector,
    pub with_running_outside_mask: ParamVector,
    pub with_incoming: ParamVector,
    pub with_incoming_inside_mask: ParamVector,
    pub full: ParamVector,
}

impl ComponentModels {
    pub fn build(
        pretrained: &ParamVector,
        running: &TaskVector,
        incoming: &TaskVector,
        mask: &BinaryMask,
    ) -> Result<Self> {
        let zeros = vec![0.0; pretrained.len()];
        let apply = |values: Vec<f64>| TaskVector::new(MERGED_TASK, pretrained.spec_hash(), values).apply_to(pretrained);
        // Mask off keeps the running merge; mask on keeps the incoming vector.
        let outside = masked_merge(running.values(), &zeros, MaskValues::Binary(mask), MergeStrategy::Both)?;
        let inside = masked_merge(&zeros, incoming.values(), MaskValues::Binary(mask), MergeStrategy::Both)?;
        let full = masked_merge(running.values(), incoming.values(), MaskValues::Binary(mask), MergeStrategy::Both)?;
        Ok(Self {
            pretrained: pretrained.clone(),
            with_running: running.apply_to(pretrained)?,
            with_running_outside_mask: apply(outside)?,
            with_incoming: incoming.apply_to(pretrained)?,
            with_incoming_inside_mask: apply(inside)?,
            full: apply(full)?,
        })
    }

    /// Rows in display order.
    pub fn rows(&self) -> [(&'static str, &ParamVector); 6] {
        [
            ("pretrained", &self.pretrained),
            ("pretrained+running", &self.with_running),
            ("pretrained+running_outside_mask", &self.with_running_outside_mask),
            ("pretrained+incoming", &self.with_incoming),
            ("pretrained+incoming_inside_mask", &self.with_incoming_inside_mask),
            ("pretrained+masked_merge", &self.full),
        ]
    }
}
