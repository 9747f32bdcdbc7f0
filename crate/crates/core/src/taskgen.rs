//! Synthetic multi-task classification problems and the training loops that
//! turn them into a pretrained checkpoint plus one fine-tuned checkpoint per
//! task.
//!
//! Task `t` places its `C` Gaussian class clusters around a center chosen by
//! [`TaskLayout`]. Class means sit at distance `cluster_sep / sqrt(2)` from the center along
//! mutually orthogonal directions (also orthogonal to the task axis when
//! `C < d`), so every pair of class means is exactly `cluster_sep` apart.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::metrics::accuracy;
use crate::nn::{objective_and_grad, ClassWindow, Matrix, ModelSpec, Objective, ParamVector};
use crate::seed::{self, STAGE_FAMILY, STAGE_FINETUNE, STAGE_INIT, STAGE_PRETRAIN};
use crate::{Batch, Error, Result};

/// Placement of task regions in input space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum TaskLayout {
    /// Centers `(t - (T - 1) / 2) * task_offset` along one shared direction.
    Line,
    /// Centers at distance `task_offset` from the origin along mutually
    /// orthogonal directions (cycling when `T > d`).
    #[default]
    Radial,
}

/// How output units are shared between tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum HeadMode {
    /// Every task reads the same `C` logits.
    #[default]
    Shared,
    /// Task `t` reads its own block of `C` logits; the output layer is frozen
    /// during fine-tuning.
    PerTask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskFamily {
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub input_dim: usize,
    pub cluster_sep: f64,
    pub task_offset: f64,
    pub noise_sigma: f64,
    pub train_per_task: usize,
    pub test_per_task: usize,
    pub unlabeled_per_task: usize,
    pub head_mode: HeadMode,
    pub layout: TaskLayout,
    pub seed: u64,
}

impl Default for TaskFamily {
    fn default() -> Self {
        Self {
            num_tasks: 8,
            classes_per_task: 5,
            input_dim: 16,
            cluster_sep: 4.0,
            task_offset: 10.0,
            noise_sigma: 0.8,
            train_per_task: 400,
            test_per_task: 400,
            unlabeled_per_task: 400,
            head_mode: HeadMode::Shared,
            layout: TaskLayout::default(),
            seed: 0,
        }
    }
}

impl TaskFamily {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.num_tasks < 2 {
            return bad("num_tasks must be at least 2");
        }
        if self.classes_per_task < 2 {
            return bad("classes_per_task must be at least 2");
        }
        if self.input_dim == 0 {
            return bad("input_dim must be positive");
        }
        if !(self.cluster_sep > 0.0 && self.cluster_sep.is_finite()) {
            return bad("cluster_sep must be positive");
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be positive");
        }
        if !(self.task_offset >= self.cluster_sep + 6.0 * self.noise_sigma) {
            return bad("task_offset must be at least cluster_sep + 6 * noise_sigma");
        }
        if self.train_per_task == 0 || self.test_per_task == 0 || self.unlabeled_per_task == 0 {
            return bad("every split needs at least one sample");
        }
        Ok(())
    }

    /// Number of logits the classifier needs for this family.
    pub fn model_classes(&self) -> usize {
        match self.head_mode {
            HeadMode::Shared => self.classes_per_task,
            HeadMode::PerTask => self.classes_per_task * self.num_tasks,
        }
    }

    pub fn window(&self, task: usize) -> ClassWindow {
        match self.head_mode {
            HeadMode::Shared => ClassWindow {
                start: 0,
                len: self.classes_per_task,
            },
            HeadMode::PerTask => ClassWindow {
                start: task * self.classes_per_task,
                len: self.classes_per_task,
            },
        }
    }
}

/// Unlabeled inputs with their withheld ground truth.
///
/// Sampling and merging only ever see [`UnlabeledPool::inputs`]; the audit
/// labels exist for reporting pseudo-label accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledPool {
    inputs: Matrix,
    audit_labels: Vec<usize>,
}

impl UnlabeledPool {
    pub fn new(inputs: Matrix, audit_labels: Vec<usize>) -> Result<Self> {
        if inputs.rows() != audit_labels.len() {
            return Err(Error::DimensionMismatch {
                axis: "audit labels",
                expected: inputs.rows(),
                found: audit_labels.len(),
            });
        }
        Ok(Self {
            inputs,
            audit_labels,
        })
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn audit_labels(&self) -> &[usize] {
        &self.audit_labels
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }
}

/// Global sample ids of each split; the three sets are disjoint.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitIds {
    pub train: Vec<u32>,
    pub test: Vec<u32>,
    pub unlabeled: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub task_id: usize,
    pub window: ClassWindow,
    pub train: Batch,
    pub test: Batch,
    pub unlabeled: UnlabeledPool,
    pub ids: SplitIds,
}

impl TaskData {
    pub fn classes(&self) -> usize {
        self.window.len
    }
}

fn unit_normal<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Random unit vectors, Gram-Schmidt orthogonalized against `basis` (and each
/// other) while the dimension allows it.
fn class_directions<R: Rng>(rng: &mut R, d: usize, count: usize, axis: &[f64]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = vec![axis.to_vec()];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut v = unit_normal(rng, d);
        if basis.len() < d {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
            let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
            if norm > 1e-9 {
                for x in &mut v {
                    *x /= norm;
                }
                basis.push(v.clone());
            } else {
                v = unit_normal(rng, d);
            }
        }
        out.push(v);
    }
    out
}

/// Draws every task of the family. Deterministic in `family.seed`.
pub fn generate_family(family: &TaskFamily) -> Result<Vec<TaskData>> {
    family.validate()?;
    let d = family.input_dim;
    let c = family.classes_per_task;
    let mut rng = seed::rng(seed::derive(family.seed, STAGE_FAMILY));
    let first = unit_normal(&mut rng, d);
    let axes: Vec<Vec<f64>> = match family.layout {
        TaskLayout::Line => vec![first],
        TaskLayout::Radial => {
            let mut axes = vec![first.clone()];
            axes.extend(class_directions(&mut rng, d, family.num_tasks.min(d) - 1, &first));
            axes
        }
    };
    let radius = family.cluster_sep / core::f64::consts::SQRT_2;
    let mid = (family.num_tasks as f64 - 1.0) / 2.0;
    let per_task = family.train_per_task + family.test_per_task + family.unlabeled_per_task;

    let mut tasks = Vec::with_capacity(family.num_tasks);
    for t in 0..family.num_tasks {
        let (axis, shift) = match family.layout {
            TaskLayout::Line => (&axes[0], (t as f64 - mid) * family.task_offset),
            TaskLayout::Radial => (&axes[t % axes.len()], (1 + t / axes.len()) as f64 * family.task_offset),
        };
        let dirs = class_directions(&mut rng, d, c, axis);
        let means: Vec<Vec<f64>> = dirs
            .iter()
            .map(|v| {
                axis.iter()
                    .zip(v)
                    .map(|(a, vi)| shift * a + radius * vi)
                    .collect()
            })
            .collect();

        let mut inputs = Vec::with_capacity(per_task * d);
        let mut labels = Vec::with_capacity(per_task);
        for i in 0..per_task {
            let label = i % c;
            for &m in &means[label] {
                let z: f64 = rng.sample(StandardNormal);
                inputs.push(m + family.noise_sigma * z);
            }
            labels.push(label);
        }
        let mut order: Vec<usize> = (0..per_task).collect();
        order.shuffle(&mut rng);
        let (train_idx, rest) = order.split_at(family.train_per_task);
        let (test_idx, unl_idx) = rest.split_at(family.test_per_task);

        let all = Matrix::new(per_task, d, inputs)?;
        let pick = |idx: &[usize]| -> (Matrix, Vec<usize>) {
            (all.select_rows(idx), idx.iter().map(|&i| labels[i]).collect())
        };
        let global = |idx: &[usize]| -> Vec<u32> {
            idx.iter().map(|&i| (t * per_task + i) as u32).collect()
        };
        let (train_x, train_y) = pick(train_idx);
        let (test_x, test_y) = pick(test_idx);
        let (unl_x, unl_y) = pick(unl_idx);
        tasks.push(TaskData {
            task_id: t,
            window: family.window(t),
            train: Batch::labeled(train_x, train_y)?,
            test: Batch::labeled(test_x, test_y)?,
            unlabeled: UnlabeledPool::new(unl_x, unl_y)?,
            ids: SplitIds {
                train: global(train_idx),
                test: global(test_idx),
                unlabeled: global(unl_idx),
            },
        });
    }
    Ok(tasks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Mini-batch SGD over `batch`, in place.
fn train(
    spec: &ModelSpec,
    params: &mut ParamVector,
    batch: &Batch,
    window: ClassWindow,
    config: &TrainConfig,
    shuffle_seed: u64,
    frozen: Option<core::ops::Range<usize>>,
) -> Result<()> {
    let labels = batch.labels.as_deref().ok_or(Error::Empty("training labels"))?;
    if config.epochs == 0 || batch.is_empty() {
        return Ok(());
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    let mut rng = seed::rng(shuffle_seed);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let inputs = batch.inputs.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut g = objective_and_grad(spec, params, &inputs, Objective::CrossEntropy(&y), window)?;
            if let Some(range) = &frozen {
                g.param_grad[range.clone()].iter_mut().for_each(|v| *v = 0.0);
            }
            for (p, gv) in params.values_mut().iter_mut().zip(&g.param_grad) {
                *p -= config.learning_rate * gv;
            }
        }
    }
    Ok(())
}

/// Trains a fresh initialization on the pooled training data of every task.
///
/// With per-task heads the pooled labels address each task's own logit block.
/// An epoch budget of zero returns the initialization.
pub fn pretrain(spec: &ModelSpec, tasks: &[TaskData], config: &TrainConfig) -> Result<ParamVector> {
    let mut params = spec.init_params(seed::derive(config.seed, STAGE_INIT));
    if tasks.is_empty() {
        return Err(Error::Empty("task list"));
    }
    let parts: Vec<&Matrix> = tasks.iter().map(|t| &t.train.inputs).collect();
    let inputs = Matrix::vstack(&parts)?;
    let mut labels = Vec::with_capacity(inputs.rows());
    let mut window = ClassWindow::full(spec);
    for t in tasks {
        let y = t.train.labels.as_deref().ok_or(Error::Empty("training labels"))?;
        labels.extend(y.iter().map(|&l| l + t.window.start));
        window = ClassWindow {
            start: 0,
            len: window.len.max(t.window.start + t.window.len),
        };
    }
    let pooled = Batch::labeled(inputs, labels)?;
    train(
        spec,
        &mut params,
        &pooled,
        window,
        config,
        seed::derive(config.seed, STAGE_PRETRAIN),
        None,
    )?;
    Ok(params)
}

/// Fine-tunes `pretrained` on one task. With `freeze_head` the output layer
/// is left untouched.
pub fn finetune(
    spec: &ModelSpec,
    pretrained: &ParamVector,
    task: &TaskData,
    config: &TrainConfig,
    freeze_head: bool,
) -> Result<ParamVector> {
    pretrained.ensure_bound(spec)?;
    let mut params = pretrained.clone();
    let frozen = freeze_head.then(|| {
        let last = *params.layer_offsets().last().expect("at least one layer");
        last.start..last.start + last.len
    });
    train(
        spec,
        &mut params,
        &task.train,
        task.window,
        config,
        seed::derive(config.seed, STAGE_FINETUNE + task.task_id as u64),
        frozen,
    )?;
    Ok(params)
}

/// Pretrained plus one fine-tuned checkpoint per task, all bound to one spec.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoints {
    pub pretrained: ParamVector,
    pub finetuned: Vec<ParamVector>,
}

/// Fine-tunes every task and enforces the per-task test-accuracy floor.
pub fn finetune_all(
    spec: &ModelSpec,
    pretrained: &ParamVector,
    tasks: &[TaskData],
    config: &TrainConfig,
    freeze_head: bool,
    accuracy_floor: f64,
) -> Result<Checkpoints> {
    let mut finetuned = Vec::with_capacity(tasks.len());
    for task in tasks {
        let ft = finetune(spec, pretrained, task, config, freeze_head)?;
        let acc = accuracy(spec, &ft, &task.test, task.window)?;
        if acc < accuracy_floor {
            return Err(Error::AccuracyFloor {
                task: task.task_id,
                accuracy: acc,
                floor: accuracy_floor,
            });
        }
        finetuned.push(ft);
    }
    Ok(Checkpoints {
        pretrained: pretrained.clone(),
        finetuned,
    })
}
