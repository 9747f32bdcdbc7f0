//! A prepared task family with its checkpoints, and the merging runs on it.

use calm_core::calm::{partition, sequential_merge, MergePlan, SequentialOutcome, VisibleTask};
use calm_core::merge::{task_arithmetic, task_vector, ties_merge, weight_average, TaskVector};
use calm_core::metrics::{accuracy, evaluate, Evaluation};
use calm_core::nn::{ModelSpec, ParamVector};
use calm_core::sampling::{score_pool, select_cb_ems, select_ems, CredibleSet, SamplingMode, ScoredSample};
use calm_core::taskgen::{finetune_all, generate_family, pretrain, Checkpoints, TaskData};

use crate::config::{ExperimentConfig, Method, Objective};
use crate::error::{BenchError, Result};

/// Tasks, pretrained and fine-tuned checkpoints, and task vectors for one
/// configuration.
#[derive(Debug, Clone)]
pub struct World {
    pub config: ExperimentConfig,
    pub spec: ModelSpec,
    pub tasks: Vec<TaskData>,
    pub checkpoints: Checkpoints,
    pub task_vectors: Vec<TaskVector>,
}

/// Output of one merging method.
#[derive(Debug, Clone)]
pub struct MergeRun {
    pub method: Method,
    pub merged: ParamVector,
    pub plan: Option<MergePlan>,
    pub outcome: Option<SequentialOutcome>,
}

pub fn generate_tasks(config: &ExperimentConfig) -> Result<Vec<TaskData>> {
    Ok(generate_family(&config.task_family())?)
}

pub fn pretrain_model(config: &ExperimentConfig, tasks: &[TaskData]) -> Result<ParamVector> {
    Ok(pretrain(&config.model_spec()?, tasks, &config.pretrain_config())?)
}

pub fn finetune_models(config: &ExperimentConfig, tasks: &[TaskData], pretrained: &ParamVector) -> Result<Checkpoints> {
    Ok(finetune_all(
        &config.model_spec()?,
        pretrained,
        tasks,
        &config.finetune_config(),
        config.freeze_head(),
        config.finetune.accuracy_floor,
    )?)
}

impl World {
    /// Generates the family, pretrains and fine-tunes.
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let tasks = generate_tasks(config)?;
        log::info!("generated {} tasks", tasks.len());
        let pretrained = pretrain_model(config, &tasks)?;
        log::info!("pretrained {} parameters", pretrained.len());
        let checkpoints = finetune_models(config, &tasks, &pretrained)?;
        log::info!("fine-tuned {} models", checkpoints.finetuned.len());
        Self::from_parts(config.clone(), tasks, checkpoints)
    }

    /// Assembles a world from persisted artifacts.
    pub fn from_parts(config: ExperimentConfig, tasks: Vec<TaskData>, checkpoints: Checkpoints) -> Result<Self> {
        let spec = config.model_spec()?;
        if tasks.len() != config.family.num_tasks || checkpoints.finetuned.len() != tasks.len() {
            return Err(BenchError::Config(format!(
                "configuration expects {} tasks, artifacts hold {} tasks and {} fine-tuned models",
                config.family.num_tasks,
                tasks.len(),
                checkpoints.finetuned.len()
            )));
        }
        checkpoints.pretrained.ensure_bound(&spec)?;
        let task_vectors = checkpoints
            .finetuned
            .iter()
            .enumerate()
            .map(|(t, ft)| task_vector(ft, &checkpoints.pretrained, t))
            .collect::<calm_core::Result<Vec<_>>>()?;
        Ok(Self {
            config,
            spec,
            tasks,
            checkpoints,
            task_vectors,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn evaluate(&self, params: &ParamVector) -> Result<Evaluation> {
        Ok(evaluate(&self.spec, params, &self.tasks)?)
    }

    /// Every fine-tuned model on its own task.
    pub fn individual(&self) -> Result<Evaluation> {
        let per_task = self
            .tasks
            .iter()
            .zip(&self.checkpoints.finetuned)
            .map(|(t, ft)| accuracy(&self.spec, ft, &t.test, t.window))
            .collect::<calm_core::Result<Vec<_>>>()?;
        Ok(Evaluation::from_per_task(per_task))
    }

    /// Entropy and pseudo-label of every pool sample under the task's own
    /// fine-tuned model.
    pub fn score_pools(&self) -> Result<Vec<Vec<ScoredSample>>> {
        self.tasks
            .iter()
            .zip(&self.checkpoints.finetuned)
            .map(|(t, ft)| Ok(score_pool(&self.spec, ft, t.unlabeled.inputs(), t.window)?))
            .collect()
    }

    pub fn credible_sets_from_scores(
        &self,
        scores: &[Vec<ScoredSample>],
        mode: SamplingMode,
        rate: f64,
    ) -> Result<Vec<CredibleSet>> {
        self.tasks
            .iter()
            .zip(scores)
            .map(|(t, scored)| {
                Ok(match mode {
                    SamplingMode::Ems => select_ems(scored, rate, t.window.len, t.task_id)?,
                    SamplingMode::CbEms => select_cb_ems(scored, rate, t.window.len, t.task_id)?,
                })
            })
            .collect()
    }

    pub fn credible_sets(&self, mode: SamplingMode, rate: f64) -> Result<Vec<CredibleSet>> {
        self.credible_sets_from_scores(&self.score_pools()?, mode, rate)
    }

    /// Credible sets under the configured sampling mode and rate.
    pub fn default_credible_sets(&self) -> Result<Vec<CredibleSet>> {
        self.credible_sets(self.config.sampling_mode(), self.config.sampling.rate)
    }

    /// Mask-objective data for every task. `sets` is only read for the
    /// pseudo-label objective.
    pub fn visible_tasks(&self, objective: Objective, sets: &[CredibleSet]) -> Result<Vec<VisibleTask>> {
        match objective {
            Objective::Pseudo => {
                if sets.len() != self.tasks.len() {
                    return Err(BenchError::Config(format!(
                        "{} credible sets for {} tasks",
                        sets.len(),
                        self.tasks.len()
                    )));
                }
                self.tasks
                    .iter()
                    .zip(sets)
                    .map(|(t, set)| {
                        if set.task_id() != t.task_id {
                            return Err(BenchError::Config(format!(
                                "credible set for task {} stored at position {}",
                                set.task_id(),
                                t.task_id
                            )));
                        }
                        Ok(VisibleTask::from_credible(set, t.unlabeled.inputs(), t.window)?)
                    })
                    .collect()
            }
            Objective::Supervised => self
                .tasks
                .iter()
                .map(|t| {
                    Ok(VisibleTask::labeled(
                        t.task_id,
                        t.unlabeled.inputs().clone(),
                        t.unlabeled.audit_labels().to_vec(),
                        t.window,
                    )?)
                })
                .collect(),
            Objective::Entropy => Ok(self
                .tasks
                .iter()
                .map(|t| VisibleTask::entropy(t.task_id, t.unlabeled.inputs().clone(), t.window))
                .collect()),
        }
    }

    /// Visible-task data under the configured objective and sampling.
    pub fn default_visible_tasks(&self) -> Result<Vec<VisibleTask>> {
        let sets = match self.config.sampling.objective {
            Objective::Pseudo => self.default_credible_sets()?,
            _ => Vec::new(),
        };
        self.visible_tasks(self.config.sampling.objective, &sets)
    }

    /// Merge plan with an explicit sequential order.
    pub fn plan_with_order(&self, sequential: Vec<usize>) -> Result<MergePlan> {
        let efficient = (0..self.num_tasks()).filter(|t| !sequential.contains(t)).collect();
        let plan = MergePlan {
            efficient,
            sequential,
            lambda: self.config.merge.lambda,
            mask: self.config.mask_config(),
            seed: self.config.seed,
        };
        plan.validate(self.num_tasks())?;
        Ok(plan)
    }

    /// Merge plan with `num_sequential` seeded random sequential tasks.
    pub fn plan_with_count(&self, num_sequential: usize) -> Result<MergePlan> {
        let ids: Vec<usize> = (0..self.num_tasks()).collect();
        let (_, sequential) = partition(&ids, num_sequential, self.config.seed)?;
        self.plan_with_order(sequential)
    }

    /// The configured plan: the explicit order when given, else a seeded draw.
    pub fn default_plan(&self) -> Result<MergePlan> {
        match &self.config.merge.sequential {
            Some(order) => self.plan_with_order(order.clone()),
            None => self.plan_with_count(self.config.merge.num_sequential),
        }
    }

    pub fn run_calm(&self, plan: &MergePlan, visible: &[VisibleTask]) -> Result<SequentialOutcome> {
        Ok(sequential_merge(
            &self.spec,
            &self.checkpoints.pretrained,
            &self.task_vectors,
            plan,
            visible,
        )?)
    }

    /// Runs `method`; CALM uses `visible` (computed from the configuration
    /// when `None`).
    pub fn merge(&self, method: Method, visible: Option<&[VisibleTask]>) -> Result<MergeRun> {
        let pre = &self.checkpoints.pretrained;
        let lambda = self.config.merge.lambda;
        let (merged, plan, outcome) = match method {
            Method::Avg => (weight_average(&self.checkpoints.finetuned)?, None, None),
            Method::Ta => (task_arithmetic(pre, &self.task_vectors, lambda)?, None, None),
            Method::Ties => (ties_merge(pre, &self.task_vectors, &self.config.ties_config())?, None, None),
            Method::Calm => {
                let owned;
                let visible = match visible {
                    Some(v) => v,
                    None => {
                        owned = self.default_visible_tasks()?;
                        &owned
                    }
                };
                let plan = self.default_plan()?;
                let outcome = self.run_calm(&plan, visible)?;
                (outcome.merged.clone(), Some(plan), Some(outcome))
            }
        };
        Ok(MergeRun {
            method,
            merged,
            plan,
            outcome,
        })
    }
}
