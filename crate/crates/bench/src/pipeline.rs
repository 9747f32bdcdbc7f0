//! Stage functions behind the CLI, operating on a working directory.
//!
//! Layout of a working directory:
//!
//! ```text
//! config.toml            resolved configuration written by gen-tasks
//! tasks.bin              CALMDATA, every task's splits
//! pretrained.ckpt        CALMCKPT, vector "pretrained"
//! finetuned.ckpt         CALMCKPT, "pretrained" then "task_0", "task_1", ...
//! credible.bin           CALMCRED, one credible set per task
//! merged_<method>.ckpt   CALMCKPT, vector "merged"
//! masks.bin              CALMMASK, per sequential step of the last calm merge
//! reports/<method>/      accuracy.csv, optional tables, report.json
//! reports/summary/       methods.csv (every merged model found) and report.json
//! ablations/<suite>/     sweep tables and report.json
//! ```
//!
//! Every report is recomputed from these files alone.

use std::path::PathBuf;

use calm_core::calm::{SequentialOutcome, VisibleTask};
use calm_core::merge::TaskVector;
use calm_core::metrics::{layer_density, magnitude_overlap};
use calm_core::nn::ModelSpec;
use calm_core::sampling::{audit_accuracy, class_entropy_stats, CredibleSet};
use calm_core::taskgen::{Checkpoints, TaskData};

use crate::ablation::{run_suite, Suite};
use crate::config::{ExperimentConfig, Method, Objective, ReportKind};
use crate::error::{BenchError, Result, StageContext};
use crate::experiment::{finetune_models, generate_tasks, pretrain_model, World};
use crate::formats::{
    credible_from_bytes, credible_to_bytes, dataset_from_bytes, dataset_to_bytes, masks_from_bytes, masks_to_bytes,
    read_file, write_file, Checkpoint, MaskRecord,
};
use crate::report::{AccuracyReport, Cell, ReportBundle, Table};

pub const CONFIG_FILE: &str = "config.toml";
pub const TASKS_FILE: &str = "tasks.bin";
pub const PRETRAINED_FILE: &str = "pretrained.ckpt";
pub const FINETUNED_FILE: &str = "finetuned.ckpt";
pub const CREDIBLE_FILE: &str = "credible.bin";
pub const MASKS_FILE: &str = "masks.bin";

/// Top-k percentages of the magnitude-overlap table.
pub const OVERLAP_PERCENTS: [f64; 5] = [1.0, 5.0, 10.0, 20.0, 50.0];

pub fn merged_file(method: Method) -> String {
    format!("merged_{}.ckpt", method.name())
}

fn task_name(t: usize) -> String {
    format!("task_{t}")
}

/// A working directory plus the configuration applied to it.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
}

impl Workspace {
    pub fn new(dir: impl Into<PathBuf>, config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            dir: dir.into(),
            config,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn require(&self, name: &str, producer: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if !p.exists() {
            return Err(BenchError::Io(format!(
                "{} not found; run `{producer}` first",
                p.display()
            )));
        }
        Ok(p)
    }

    pub fn load_tasks(&self) -> Result<Vec<TaskData>> {
        dataset_from_bytes(&read_file(&self.require(TASKS_FILE, "gen-tasks")?)?)
    }

    fn load_checkpoint(&self, name: &str, producer: &str) -> Result<Checkpoint> {
        let ck = Checkpoint::load(&self.require(name, producer)?)?;
        if ck.spec != self.config.model_spec()? {
            return Err(BenchError::Config(format!(
                "{name} was written for a different model shape than the configuration"
            )));
        }
        Ok(ck)
    }

    pub fn load_checkpoints(&self) -> Result<Checkpoints> {
        let ck = self.load_checkpoint(FINETUNED_FILE, "finetune")?;
        let pretrained = ck.get("pretrained")?.clone();
        let finetuned = (0..self.config.family.num_tasks)
            .map(|t| ck.get(&task_name(t)).cloned())
            .collect::<Result<Vec<_>>>()?;
        Ok(Checkpoints { pretrained, finetuned })
    }

    pub fn load_world(&self) -> Result<World> {
        World::from_parts(self.config.clone(), self.load_tasks()?, self.load_checkpoints()?)
    }

    pub fn load_credible(&self) -> Result<Vec<CredibleSet>> {
        credible_from_bytes(&read_file(&self.require(CREDIBLE_FILE, "sample")?)?)
    }

    pub fn load_masks(&self) -> Result<Vec<MaskRecord>> {
        masks_from_bytes(&read_file(&self.require(MASKS_FILE, "merge")?)?)
    }

    pub fn load_merged(&self, method: Method) -> Result<calm_core::nn::ParamVector> {
        Ok(self
            .load_checkpoint(&merged_file(method), "merge")?
            .get("merged")?
            .clone())
    }

    /// Visible-task data for the mask objective; pseudo-labels come from
    /// the persisted credible sets.
    pub fn visible_tasks(&self, world: &World) -> Result<Vec<VisibleTask>> {
        match self.config.sampling.objective {
            Objective::Pseudo => world.visible_tasks(Objective::Pseudo, &self.load_credible()?),
            other => world.visible_tasks(other, &[]),
        }
    }
}

pub fn gen_tasks(ws: &Workspace) -> Result<()> {
    std::fs::create_dir_all(&ws.dir)?;
    std::fs::write(ws.path(CONFIG_FILE), ws.config.to_toml()?)?;
    let tasks = generate_tasks(&ws.config)?;
    write_file(&ws.path(TASKS_FILE), &dataset_to_bytes(&tasks)?)?;
    log::info!("wrote {} tasks", tasks.len());
    Ok(())
}

pub fn pretrain(ws: &Workspace) -> Result<()> {
    let tasks = ws.load_tasks()?;
    let pre = pretrain_model(&ws.config, &tasks)?;
    let mut ck = Checkpoint::new(ws.config.model_spec()?);
    ck.push("pretrained", pre)?;
    ck.save(&ws.path(PRETRAINED_FILE))
}

pub fn finetune(ws: &Workspace) -> Result<()> {
    let tasks = ws.load_tasks()?;
    let pre = ws.load_checkpoint(PRETRAINED_FILE, "pretrain")?.get("pretrained")?.clone();
    let cks = finetune_models(&ws.config, &tasks, &pre)?;
    let mut ck = Checkpoint::new(ws.config.model_spec()?);
    ck.push("pretrained", cks.pretrained)?;
    for (t, ft) in cks.finetuned.into_iter().enumerate() {
        ck.push(task_name(t), ft)?;
    }
    ck.save(&ws.path(FINETUNED_FILE))
}

pub fn sample(ws: &Workspace) -> Result<()> {
    let world = ws.load_world()?;
    let sets = world.default_credible_sets()?;
    write_file(&ws.path(CREDIBLE_FILE), &credible_to_bytes(&sets)?)
}

fn mask_records(outcome: &SequentialOutcome) -> Vec<MaskRecord> {
    outcome
        .steps
        .iter()
        .map(|s| MaskRecord {
            task_id: s.task_id,
            mask: s.mask.clone(),
            objective_trace: s.objective_trace.clone(),
            density_trace: s.density_trace.clone(),
        })
        .collect()
}

/// Runs the method and persists the merged model (and masks for calm).
pub fn merge(ws: &Workspace, method: Method) -> Result<()> {
    let world = ws.load_world()?;
    let visible = match method {
        Method::Calm => Some(ws.visible_tasks(&world)?),
        _ => None,
    };
    let run = world.merge(method, visible.as_deref())?;
    let mut ck = Checkpoint::new(world.spec.clone());
    ck.push("merged", run.merged)?;
    ck.save(&ws.path(&merged_file(method)))?;
    if let Some(outcome) = &run.outcome {
        write_file(&ws.path(MASKS_FILE), &masks_to_bytes(&mask_records(outcome))?)?;
    }
    Ok(())
}

pub fn layer_density_table(spec: &ModelSpec, records: &[MaskRecord]) -> Result<Table> {
    let mut t = Table::new("layer_density", &["step", "task", "layer", "density"]);
    for (step, r) in records.iter().enumerate() {
        for (layer, d) in layer_density(&r.mask, &spec.layer_offsets())?.into_iter().enumerate() {
            t.push(vec![step.into(), r.task_id.into(), layer.into(), d.into()])?;
        }
    }
    Ok(t)
}

pub fn density_trace_table(records: &[MaskRecord]) -> Result<Table> {
    let mut t = Table::new("density_trace", &["step", "task", "iteration", "objective", "density"]);
    for (step, r) in records.iter().enumerate() {
        for (i, (o, d)) in r.objective_trace.iter().zip(&r.density_trace).enumerate() {
            t.push(vec![step.into(), r.task_id.into(), i.into(), (*o).into(), (*d).into()])?;
        }
    }
    Ok(t)
}

/// Overlap of each step's mask with the top-k% magnitudes of the incoming
/// task vector; `random_baseline` is the expectation for a random mask.
pub fn magnitude_overlap_table(records: &[MaskRecord], task_vectors: &[TaskVector]) -> Result<Table> {
    let mut t = Table::new(
        "magnitude_overlap",
        &["step", "task", "k_percent", "proportion", "random_baseline"],
    );
    for (step, r) in records.iter().enumerate() {
        let tau = task_vectors
            .get(r.task_id)
            .ok_or_else(|| BenchError::Format(format!("mask for unknown task {}", r.task_id)))?;
        for (k, p) in OVERLAP_PERCENTS.iter().zip(magnitude_overlap(&r.mask, tau, &OVERLAP_PERCENTS)?) {
            t.push(vec![step.into(), r.task_id.into(), (*k).into(), p.into(), (k / 100.0).into()])?;
        }
    }
    Ok(t)
}

/// Per task: credible-set size and pseudo-label accuracy; per class: the
/// entropy quartiles of the selected samples.
pub fn sampling_audit_tables(sets: &[CredibleSet], tasks: &[TaskData]) -> Result<(Table, Table)> {
    let mut summary = Table::new("sampling_audit", &["task", "selected", "audit_accuracy"]);
    let mut classes = Table::new(
        "sampling_classes",
        &["task", "class", "count", "min", "q1", "median", "q3", "max"],
    );
    for (set, task) in sets.iter().zip(tasks) {
        let audit = if set.is_empty() {
            Cell::from("")
        } else {
            audit_accuracy(set, task.unlabeled.audit_labels())?.into()
        };
        summary.push(vec![set.task_id().into(), set.len().into(), audit])?;
        if set.is_empty() {
            continue;
        }
        for (c, stats) in class_entropy_stats(set.samples(), set.num_classes())?.into_iter().enumerate() {
            let row = match stats {
                Some(s) => vec![
                    set.task_id().into(),
                    c.into(),
                    s.count.into(),
                    s.min.into(),
                    s.q1.into(),
                    s.median.into(),
                    s.q3.into(),
                    s.max.into(),
                ],
                None => {
                    let mut r: Vec<Cell> = vec![set.task_id().into(), c.into(), 0usize.into()];
                    r.extend((0..5).map(|_| Cell::from("")));
                    r
                }
            };
            classes.push(row)?;
        }
    }
    Ok((summary, classes))
}

/// Accuracy of one persisted merged model plus the configured extra tables.
pub fn evaluate_method(ws: &Workspace, method: Method) -> Result<ReportBundle> {
    let world = ws.load_world()?;
    let merged = ws.load_merged(method)?;
    let mut bundle = ReportBundle::new(&format!("method {}", method.name()), ws.config.seed);
    bundle.accuracy = Some(AccuracyReport::new(method.name(), &world.evaluate(&merged)?)?);
    for kind in &ws.config.reports {
        match kind {
            ReportKind::SamplingAudit => {
                let (s, c) = sampling_audit_tables(&ws.load_credible()?, &world.tasks)?;
                bundle.tables.push(s);
                bundle.tables.push(c);
            }
            _ if method != Method::Calm => {
                log::warn!("report {kind:?} only applies to calm; skipped");
            }
            ReportKind::LayerDensity => bundle.tables.push(layer_density_table(&world.spec, &ws.load_masks()?)?),
            ReportKind::DensityTrace => bundle.tables.push(density_trace_table(&ws.load_masks()?)?),
            ReportKind::MagnitudeOverlap => bundle
                .tables
                .push(magnitude_overlap_table(&ws.load_masks()?, &world.task_vectors)?),
        }
    }
    Ok(bundle)
}

pub fn eval(ws: &Workspace, method: Method) -> Result<ReportBundle> {
    let bundle = evaluate_method(ws, method)?;
    bundle.write(&ws.path("reports").join(method.name()))?;
    Ok(bundle)
}

/// Average and per-task accuracy of the pretrained model, each fine-tuned
/// model on its own task, and every merged model present in the directory.
pub fn summary(ws: &Workspace) -> Result<ReportBundle> {
    let world = ws.load_world()?;
    let mut cols = vec!["method".to_string(), "average".to_string()];
    cols.extend((0..world.num_tasks()).map(task_name));
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut t = Table::new("methods", &col_refs);
    let mut push = |name: &str, e: calm_core::metrics::Evaluation| -> Result<()> {
        let mut row: Vec<Cell> = vec![name.into(), e.average.into()];
        row.extend(e.per_task.into_iter().map(Cell::from));
        t.push(row)
    };
    push("pretrained", world.evaluate(&world.checkpoints.pretrained)?)?;
    push("individual", world.individual()?)?;
    let mut found = 0;
    for m in Method::ALL {
        if ws.path(&merged_file(m)).exists() {
            push(m.name(), world.evaluate(&ws.load_merged(m)?)?)?;
            found += 1;
        }
    }
    if found == 0 {
        return Err(BenchError::Io("no merged models found; run `merge` first".into()));
    }
    let mut bundle = ReportBundle::new("summary", ws.config.seed);
    bundle.tables.push(t);
    bundle.write(&ws.path("reports").join("summary"))?;
    Ok(bundle)
}

pub fn ablate(ws: &Workspace, suite: Suite) -> Result<ReportBundle> {
    let world = ws.load_world()?;
    let bundle = run_suite(&world, suite)?;
    bundle.write(&ws.path("ablations").join(suite.name()))?;
    Ok(bundle)
}

/// Every stage in order for the configured method, then the summary.
pub fn run_all(ws: &Workspace) -> Result<ReportBundle> {
    gen_tasks(ws).stage("gen-tasks")?;
    pretrain(ws).stage("pretrain")?;
    finetune(ws).stage("finetune")?;
    sample(ws).stage("sample")?;
    let method = ws.config.method;
    merge(ws, method).stage("merge")?;
    let bundle = eval(ws, method).stage("eval")?;
    summary(ws).stage("report")?;
    Ok(bundle)
}
