//! Ablation sweeps. Each suite varies one axis of the configuration and
//! keeps everything else, including the root seed, fixed: a sweep point is
//! reproduced exactly by a single run with that point's override applied.

use std::str::FromStr;

use calm_core::calm::ComponentModels;
use calm_core::metrics::accuracy;
use calm_core::sampling::{audit_accuracy, SamplingMode};

use crate::config::{Objective, StrategyName};
use crate::error::{BenchError, Result};
use crate::experiment::World;
use crate::report::{mean_std, ReportBundle, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    SamplingRate,
    Strategy,
    Order,
    RegCoef,
    Lr,
    Components,
    Objective,
    NumSequential,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::SamplingRate,
        Suite::Strategy,
        Suite::Order,
        Suite::RegCoef,
        Suite::Lr,
        Suite::Components,
        Suite::Objective,
        Suite::NumSequential,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::SamplingRate => "sampling_rate",
            Suite::Strategy => "strategy",
            Suite::Order => "order",
            Suite::RegCoef => "reg_coef",
            Suite::Lr => "lr",
            Suite::Components => "components",
            Suite::Objective => "objective",
            Suite::NumSequential => "num_sequential",
        }
    }
}

impl FromStr for Suite {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = Suite::ALL.iter().map(|x| x.name()).collect();
            BenchError::Config(format!("unknown suite {s:?}; valid suites: {}", valid.join(", ")))
        })
    }
}

/// Sampling rates of the rate sweep: 0.1, 0.2, ..., 1.0.
pub fn sweep_rates() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

pub const REG_COEFS: [f64; 3] = [0.5, 1.0, 2.0];
/// Multipliers applied to the configured mask learning rate.
pub const LR_MULTIPLIERS: [f64; 3] = [0.5, 1.0, 2.0];

/// Every ordered selection of `k` distinct items out of `0..n`, in
/// lexicographic order.
pub fn ordered_selections(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn extend(n: usize, k: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == k {
            out.push(prefix.clone());
            return;
        }
        for x in 0..n {
            if !prefix.contains(&x) {
                prefix.push(x);
                extend(n, k, prefix, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    if k <= n {
        extend(n, k, &mut Vec::new(), &mut out);
    }
    out
}

fn with_world<F>(world: &World, edit: F) -> Result<World>
where
    F: FnOnce(&mut crate::config::ExperimentConfig),
{
    let mut w = world.clone();
    edit(&mut w.config);
    w.config.validate()?;
    Ok(w)
}

fn calm_average(world: &World, visible: &[calm_core::calm::VisibleTask]) -> Result<(f64, f64)> {
    let plan = world.default_plan()?;
    let outcome = world.run_calm(&plan, visible)?;
    let avg = world.evaluate(&outcome.merged)?.average;
    let density = if outcome.steps.is_empty() {
        0.0
    } else {
        outcome.steps.iter().map(|s| s.mask.density()).sum::<f64>() / outcome.steps.len() as f64
    };
    Ok((avg, density))
}

/// Rate sweep: mean pseudo-label audit accuracy and CALM accuracy per rate.
pub fn sampling_rate(world: &World) -> Result<Table> {
    let scores = world.score_pools()?;
    let mode = world.config.sampling_mode();
    let mut t = Table::new(
        "sampling_rate",
        &["rate", "audit_accuracy", "selected", "calm_average"],
    );
    for rate in sweep_rates() {
        let sets = world.credible_sets_from_scores(&scores, mode, rate)?;
        let audit = sets
            .iter()
            .zip(&world.tasks)
            .map(|(s, task)| audit_accuracy(s, task.unlabeled.audit_labels()))
            .collect::<calm_core::Result<Vec<_>>>()?;
        let selected: usize = sets.iter().map(|s| s.len()).sum();
        let visible = world.visible_tasks(Objective::Pseudo, &sets)?;
        let (avg, _) = calm_average(world, &visible)?;
        t.push(vec![
            rate.into(),
            mean_std(&audit).0.into(),
            selected.into(),
            avg.into(),
        ])?;
    }
    Ok(t)
}

pub fn strategy(world: &World) -> Result<Table> {
    let mut t = Table::new("strategy", &["strategy", "average", "mean_density"]);
    let visible = world.default_visible_tasks()?;
    for (name, s) in [
        ("both", StrategyName::Both),
        ("only_mask", StrategyName::OnlyMask),
        ("only_complement", StrategyName::OnlyComplement),
    ] {
        let w = with_world(world, |c| c.merge.strategy = s)?;
        let (avg, dens) = calm_average(&w, &visible)?;
        t.push(vec![name.into(), avg.into(), dens.into()])?;
    }
    Ok(t)
}

/// Every ordering of `merge.num_sequential` sequential tasks, plus a summary
/// table of the population mean and standard deviation.
pub fn order(world: &World) -> Result<(Table, Table)> {
    let k = world.config.merge.num_sequential;
    if k == 0 {
        return Err(BenchError::Config("order suite needs merge.num_sequential >= 1".into()));
    }
    let visible = world.default_visible_tasks()?;
    let mut t = Table::new("order", &["sequential", "average"]);
    let mut averages = Vec::new();
    for seq in ordered_selections(world.num_tasks(), k) {
        let label: Vec<String> = seq.iter().map(|x| x.to_string()).collect();
        let plan = world.plan_with_order(seq)?;
        let outcome = world.run_calm(&plan, &visible)?;
        let avg = world.evaluate(&outcome.merged)?.average;
        averages.push(avg);
        t.push(vec![label.join("-").into(), avg.into()])?;
    }
    let (mean, std) = mean_std(&averages);
    let min = averages.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = averages.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = Table::new("order_stats", &["plans", "mean", "std", "min", "max"]);
    s.push(vec![averages.len().into(), mean.into(), std.into(), min.into(), max.into()])?;
    Ok((t, s))
}

pub fn reg_coef(world: &World) -> Result<Table> {
    let mut t = Table::new("reg_coef", &["alpha", "average", "mean_density"]);
    let visible = world.default_visible_tasks()?;
    for alpha in REG_COEFS {
        let w = with_world(world, |c| c.merge.alpha = alpha)?;
        let (avg, dens) = calm_average(&w, &visible)?;
        t.push(vec![alpha.into(), avg.into(), dens.into()])?;
    }
    Ok(t)
}

pub fn lr(world: &World) -> Result<Table> {
    let mut t = Table::new("lr", &["mask_lr", "average", "mean_density"]);
    let visible = world.default_visible_tasks()?;
    let base = world.config.merge.mask_lr;
    for m in LR_MULTIPLIERS {
        let w = with_world(world, |c| c.merge.mask_lr = base * m)?;
        let (avg, dens) = calm_average(&w, &visible)?;
        t.push(vec![(base * m).into(), avg.into(), dens.into()])?;
    }
    Ok(t)
}

/// One sequential task on top of the other tasks' efficient merge. Rows are
/// the five component models and the full masked merge, scored on the
/// incoming task and on average.
pub fn components(world: &World) -> Result<Table> {
    let visible = world.default_visible_tasks()?;
    let plan = world.plan_with_count(1)?;
    let target = plan.sequential[0];
    let outcome = world.run_calm(&plan, &visible)?;
    let step = &outcome.steps[0];
    let models = ComponentModels::build(
        &world.checkpoints.pretrained,
        &step.tau_before,
        &world.task_vectors[target],
        &step.mask,
    )?;
    let task = &world.tasks[target];
    let mut t = Table::new(
        "components",
        &["configuration", "target_task", "target_accuracy", "average"],
    );
    for (name, params) in models.rows() {
        let tgt = accuracy(&world.spec, params, &task.test, task.window)?;
        let avg = world.evaluate(params)?.average;
        t.push(vec![name.into(), target.into(), tgt.into(), avg.into()])?;
    }
    Ok(t)
}

/// Mask objective data: withheld true labels, CB-EMS and EMS pseudo-labels,
/// and pure entropy over the whole pool.
pub fn objective(world: &World) -> Result<Table> {
    let mut t = Table::new("objective", &["objective", "average"]);
    let rate = world.config.sampling.rate;
    let scores = world.score_pools()?;
    let runs: [(&str, Objective, Option<SamplingMode>); 4] = [
        ("supervised", Objective::Supervised, None),
        ("cb_ems", Objective::Pseudo, Some(SamplingMode::CbEms)),
        ("ems", Objective::Pseudo, Some(SamplingMode::Ems)),
        ("entropy", Objective::Entropy, None),
    ];
    for (name, obj, mode) in runs {
        let sets = match mode {
            Some(m) => world.credible_sets_from_scores(&scores, m, rate)?,
            None => Vec::new(),
        };
        let visible = world.visible_tasks(obj, &sets)?;
        let (avg, _) = calm_average(world, &visible)?;
        t.push(vec![name.into(), avg.into()])?;
    }
    Ok(t)
}

/// Seeded random sequential sets of growing size, from none up to four.
pub fn num_sequential(world: &World) -> Result<Table> {
    let mut t = Table::new("num_sequential", &["num_sequential", "average"]);
    let visible = world.default_visible_tasks()?;
    for k in 0..=world.num_tasks().min(4) {
        let plan = world.plan_with_count(k)?;
        let outcome = world.run_calm(&plan, &visible)?;
        t.push(vec![k.into(), world.evaluate(&outcome.merged)?.average.into()])?;
    }
    Ok(t)
}

pub fn run_suite(world: &World, suite: Suite) -> Result<ReportBundle> {
    let mut bundle = ReportBundle::new(&format!("ablation {}", suite.name()), world.config.seed);
    match suite {
        Suite::SamplingRate => bundle.tables.push(sampling_rate(world)?),
        Suite::Strategy => bundle.tables.push(strategy(world)?),
        Suite::Order => {
            let (t, s) = order(world)?;
            bundle.tables.push(t);
            bundle.tables.push(s);
        }
        Suite::RegCoef => bundle.tables.push(reg_coef(world)?),
        Suite::Lr => bundle.tables.push(lr(world)?),
        Suite::Components => bundle.tables.push(components(world)?),
        Suite::Objective => bundle.tables.push(objective(world)?),
        Suite::NumSequential => bundle.tables.push(num_sequential(world)?),
    }
    Ok(bundle)
}
