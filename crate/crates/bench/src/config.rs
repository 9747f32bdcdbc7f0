//! TOML experiment configuration.
//!
//! Every section and key is optional; omitted keys take the defaults below.
//! Unknown keys are rejected. `key=value` overrides use dotted paths such as
//! `merge.alpha=0.5` and TOML value syntax (bare words are read as strings).

use serde::{Deserialize, Serialize};

use calm_core::calm::{BatchSchedule, MaskConfig, MergeStrategy};
use calm_core::merge::TiesConfig;
use calm_core::nn::{Activation, ModelSpec};
use calm_core::sampling::SamplingMode;
use calm_core::taskgen::{HeadMode, TaskFamily, TaskLayout, TrainConfig};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Plain weight averaging of the fine-tuned models.
    Avg,
    /// Task arithmetic.
    Ta,
    Ties,
    Calm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Avg, Method::Ta, Method::Ties, Method::Calm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Avg => "avg",
            Method::Ta => "ta",
            Method::Ties => "ties",
            Method::Calm => "calm",
        }
    }
}

/// Extra report sections written next to the accuracy table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    LayerDensity,
    DensityTrace,
    MagnitudeOverlap,
    SamplingAudit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Cross-entropy against credible-set pseudo-labels.
    Pseudo,
    /// Cross-entropy against the withheld labels of the whole pool.
    Supervised,
    /// Mean prediction entropy over the whole pool.
    Entropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilySection {
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub input_dim: usize,
    pub cluster_sep: f64,
    pub task_offset: f64,
    pub noise_sigma: f64,
    pub train_per_task: usize,
    pub test_per_task: usize,
    pub unlabeled_per_task: usize,
    pub head_mode: HeadModeName,
    pub layout: LayoutName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadModeName {
    Shared,
    PerTask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutName {
    Line,
    Radial,
}

impl Default for FamilySection {
    fn default() -> Self {
        let f = TaskFamily::default();
        Self {
            num_tasks: f.num_tasks,
            classes_per_task: f.classes_per_task,
            input_dim: f.input_dim,
            cluster_sep: f.cluster_sep,
            task_offset: f.task_offset,
            noise_sigma: f.noise_sigma,
            train_per_task: f.train_per_task,
            test_per_task: f.test_per_task,
            unlabeled_per_task: f.unlabeled_per_task,
            head_mode: match f.head_mode {
                HeadMode::Shared => HeadModeName::Shared,
                HeadMode::PerTask => HeadModeName::PerTask,
            },
            layout: match f.layout {
                TaskLayout::Line => LayoutName::Line,
                TaskLayout::Radial => LayoutName::Radial,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationName {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden_dims: Vec<usize>,
    pub activation: ActivationName,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden_dims: vec![96, 96],
            activation: ActivationName::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            epochs: 8,
            learning_rate: 0.014,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Minimum own-task test accuracy of every fine-tuned model.
    pub accuracy_floor: f64,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self {
            epochs: 60,
            learning_rate: 0.01,
            batch_size: 32,
            accuracy_floor: 0.90,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingModeName {
    Ems,
    CbEms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    pub mode: SamplingModeName,
    pub rate: f64,
    /// What the mask objective fits for every visible task.
    pub objective: Objective,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            mode: SamplingModeName::CbEms,
            rate: 0.9,
            objective: Objective::Pseudo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Both,
    OnlyMask,
    OnlyComplement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MergeSection {
    /// Number of sequentially merged tasks, drawn at random from the seed.
    pub num_sequential: usize,
    /// Explicit sequential order; overrides `num_sequential` when set.
    pub sequential: Option<Vec<usize>>,
    pub lambda: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub mask_lr: f64,
    pub init_active_fraction: f64,
    pub init_logit: f64,
    pub strategy: StrategyName,
    pub batches_per_task: usize,
    pub batch_size: usize,
    /// Use every credible sample every iteration instead of sampled batches.
    pub full_batch: bool,
    pub carry_over: bool,
}

impl Default for MergeSection {
    fn default() -> Self {
        let mask = MaskConfig::default();
        let (batches_per_task, batch_size) = match mask.schedule {
            BatchSchedule::Sampled {
                batches_per_task,
                batch_size,
            } => (batches_per_task, batch_size),
            BatchSchedule::FullBatch => (2, 128),
        };
        Self {
            num_sequential: 2,
            sequential: None,
            lambda: 0.3,
            alpha: mask.alpha,
            iterations: mask.iterations,
            mask_lr: mask.learning_rate,
            init_active_fraction: mask.init_active_fraction,
            init_logit: mask.init_logit,
            strategy: StrategyName::Both,
            batches_per_task,
            batch_size,
            full_batch: false,
            carry_over: mask.carry_over,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TiesSection {
    pub trim_fraction: f64,
    pub scale: f64,
}

impl Default for TiesSection {
    fn default() -> Self {
        let c = TiesConfig::default();
        Self {
            trim_fraction: c.trim_fraction,
            scale: c.scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Root seed for data, training, partitioning and mask optimization.
    pub seed: u64,
    pub method: Method,
    pub reports: Vec<ReportKind>,
    pub family: FamilySection,
    pub model: ModelSection,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
    pub sampling: SamplingSection,
    pub merge: MergeSection,
    pub ties: TiesSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            method: Method::Calm,
            reports: Vec::new(),
            family: FamilySection::default(),
            model: ModelSection::default(),
            pretrain: PretrainSection::default(),
            finetune: FinetuneSection::default(),
            sampling: SamplingSection::default(),
            merge: MergeSection::default(),
            ties: TiesSection::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> BenchError {
    BenchError::Config(e.to_string())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    /// Parses `text` (may be empty) and applies `key=value` overrides in order.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(config_err)?;
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        let cfg: Self = table.try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.task_family().validate()?;
        self.model_spec()?;
        self.mask_config().validate()?;
        self.ties_config().validate()?;
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(BenchError::Config(msg.into())) };
        check(self.pretrain.batch_size > 0 && self.finetune.batch_size > 0, "batch sizes must be positive")?;
        check(
            self.pretrain.learning_rate >= 0.0 && self.finetune.learning_rate >= 0.0,
            "learning rates must be non-negative",
        )?;
        check(
            (0.0..=1.0).contains(&self.finetune.accuracy_floor),
            "accuracy_floor must lie in [0, 1]",
        )?;
        check(
            self.sampling.rate > 0.0 && self.sampling.rate <= 1.0,
            "sampling.rate must lie in (0, 1]",
        )?;
        check(self.merge.lambda > 0.0, "merge.lambda must be positive")?;
        match &self.merge.sequential {
            Some(order) => check(
                order.iter().all(|&t| t < self.family.num_tasks),
                "merge.sequential names a task outside the family",
            ),
            None => check(
                self.merge.num_sequential <= self.family.num_tasks,
                "merge.num_sequential exceeds num_tasks",
            ),
        }
    }

    pub fn task_family(&self) -> TaskFamily {
        let f = &self.family;
        TaskFamily {
            num_tasks: f.num_tasks,
            classes_per_task: f.classes_per_task,
            input_dim: f.input_dim,
            cluster_sep: f.cluster_sep,
            task_offset: f.task_offset,
            noise_sigma: f.noise_sigma,
            train_per_task: f.train_per_task,
            test_per_task: f.test_per_task,
            unlabeled_per_task: f.unlabeled_per_task,
            head_mode: match f.head_mode {
                HeadModeName::Shared => HeadMode::Shared,
                HeadModeName::PerTask => HeadMode::PerTask,
            },
            layout: match f.layout {
                LayoutName::Line => TaskLayout::Line,
                LayoutName::Radial => TaskLayout::Radial,
            },
            seed: self.seed,
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        Ok(ModelSpec::new(
            self.family.input_dim,
            self.model.hidden_dims.clone(),
            self.task_family().model_classes(),
            match self.model.activation {
                ActivationName::Relu => Activation::Relu,
                ActivationName::Tanh => Activation::Tanh,
            },
        )?)
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.pretrain.epochs,
            learning_rate: self.pretrain.learning_rate,
            batch_size: self.pretrain.batch_size,
            seed: self.seed,
        }
    }

    pub fn finetune_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.finetune.epochs,
            learning_rate: self.finetune.learning_rate,
            batch_size: self.finetune.batch_size,
            seed: self.seed,
        }
    }

    /// Per-task heads stay frozen during fine-tuning.
    pub fn freeze_head(&self) -> bool {
        self.family.head_mode == HeadModeName::PerTask
    }

    pub fn sampling_mode(&self) -> SamplingMode {
        match self.sampling.mode {
            SamplingModeName::Ems => SamplingMode::Ems,
            SamplingModeName::CbEms => SamplingMode::CbEms,
        }
    }

    pub fn mask_config(&self) -> MaskConfig {
        let m = &self.merge;
        MaskConfig {
            alpha: m.alpha,
            iterations: m.iterations,
            schedule: if m.full_batch {
                BatchSchedule::FullBatch
            } else {
                BatchSchedule::Sampled {
                    batches_per_task: m.batches_per_task,
                    batch_size: m.batch_size,
                }
            },
            learning_rate: m.mask_lr,
            init_active_fraction: m.init_active_fraction,
            init_logit: m.init_logit,
            strategy: match m.strategy {
                StrategyName::Both => MergeStrategy::Both,
                StrategyName::OnlyMask => MergeStrategy::OnlyMask,
                StrategyName::OnlyComplement => MergeStrategy::OnlyComplement,
            },
            carry_over: m.carry_over,
        }
    }

    pub fn ties_config(&self) -> TiesConfig {
        TiesConfig {
            trim_fraction: self.ties.trim_fraction,
            scale: self.ties.scale,
        }
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| BenchError::Config(format!("override {spec:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(BenchError::Config(format!("bad override key {key:?}")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cursor = table;
    for p in parents {
        let entry = cursor
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| BenchError::Config(format!("override path {key:?} crosses a non-table value")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("[merge]\nalpah = 1.0").is_err());
    }

    #[test]
    fn overrides_apply_in_order() {
        let cfg = ExperimentConfig::from_toml_with_overrides(
            "[merge]\nalpha = 2.0",
            &["merge.alpha=0.5".into(), "method=ta".into(), "merge.sequential=[3, 1]".into()],
        )
        .unwrap();
        assert_eq!(cfg.merge.alpha, 0.5);
        assert_eq!(cfg.method, Method::Ta);
        assert_eq!(cfg.merge.sequential, Some(vec![3, 1]));
        assert!(ExperimentConfig::from_toml_with_overrides("", &["merge.alpha".into()]).is_err());
        assert!(ExperimentConfig::from_toml_with_overrides("", &["merge.nope=1".into()]).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentConfig::from_toml("[sampling]\nrate = 0.0").is_err());
        assert!(ExperimentConfig::from_toml("[merge]\niterations = 0").is_err());
        assert!(ExperimentConfig::from_toml("[family]\nnoise_sigma = 5.0").is_err());
        assert!(ExperimentConfig::from_toml("[merge]\nsequential = [9]").is_err());
    }
}
