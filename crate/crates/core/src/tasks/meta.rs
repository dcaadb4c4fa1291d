//! Meta-learning with a per-task input vector: the inner joint solve fits a
//! shared task vector `x` over the support set; the outer step trains `θ`
//! on the query set with `x*` held fixed.
//!
//! The layer input is `[features, task vector]`, so the optimization
//! variable is the trailing `task_dim` slice.

use crate::baselines::{deq_loss_grad, AdjointConfig};
use crate::error::{check_len, Error, Result};
use crate::jiio::{solve_system, AugmentedSystem, ConstraintSet, Damping, ExampleTerm, JiioConfig, DEFAULT_SELECTION};
use crate::loss::InnerLoss;
use crate::outer::ThetaGradient;
use crate::solver::{EvalCounters, SolverConfig, SolverTrace};

use super::data::MetaTask;
use super::model::{train_loop, ItemGrad, Model, TrainConfig, TrainOutcome};

/// Result of the inner solve over a support set of size `K`.
#[derive(Debug, Clone)]
pub struct MetaInnerSolution {
    /// The task vector `x*`.
    pub x: Vec<f64>,
    /// Per-example fixed points.
    pub z: Vec<Vec<f64>>,
    /// Per-example duals.
    pub mu: Vec<Vec<f64>>,
    pub selected: usize,
    pub trace: SolverTrace,
}

impl MetaInnerSolution {
    /// Summed support loss at the selected iterate.
    pub fn cost(&self) -> f64 {
        self.trace.rows[self.selected].cost
    }
}

/// Settings for [`meta_train`].
#[derive(Debug, Clone, PartialEq)]
pub struct MetaConfig {
    pub inner: JiioConfig,
    pub forward: SolverConfig,
    pub adjoint: AdjointConfig,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            inner: JiioConfig {
                damping: Damping::meta(),
                solver: SolverConfig::anderson(100, 1e-10, 20),
                selection: DEFAULT_SELECTION,
            },
            forward: SolverConfig::anderson(100, 1e-10, 10),
            adjoint: AdjointConfig::default(),
        }
    }
}

/// Layer input `[features, x]`.
pub fn meta_input(features: &[f64], x: &[f64]) -> Vec<f64> {
    let mut v = features.to_vec();
    v.extend_from_slice(x);
    v
}

fn check_model(model: &Model, task: &MetaTask) -> Result<()> {
    if task.support.is_empty() {
        return Err(Error::InvalidArgument("meta task needs at least one support example".into()));
    }
    check_len(
        "model input (features + task vector)",
        model.input_dim(),
        task.feature_dim() + task.task_dim,
    )?;
    check_len("model output", model.output_dim(), task.target_dim())
}

/// Joint solve over `K` support examples sharing one task vector, from a
/// zero start.
pub fn meta_inner_solve(model: &Model, task: &MetaTask, cfg: &JiioConfig) -> Result<MetaInnerSolution> {
    check_model(model, task)?;
    let bases: Vec<Vec<f64>> = task
        .support
        .iter()
        .map(|(a, _)| meta_input(a, &vec![0.0; task.task_dim]))
        .collect();
    let losses: Vec<InnerLoss> = task.support.iter().map(|(_, y)| InnerLoss::squared(y.clone())).collect();
    let constraint = ConstraintSet::Unconstrained;
    let system = AugmentedSystem {
        layer: &model.layer,
        head: &model.head,
        constraint: &constraint,
        var_offset: task.feature_dim(),
        var_dim: task.task_dim,
        examples: bases
            .iter()
            .zip(&losses)
            .map(|(b, l)| ExampleTerm { base_input: b, loss: l })
            .collect(),
    };
    let (n, k) = (model.state_dim(), task.support.len());
    let v0 = vec![0.0; system.dim()];
    let (v, selected, trace) = solve_system(system, v0, cfg)?;
    let chunk = |j: usize, off: usize| v[off + j * n..off + (j + 1) * n].to_vec();
    Ok(MetaInnerSolution {
        x: v[2 * k * n..].to_vec(),
        z: (0..k).map(|j| chunk(j, 0)).collect(),
        mu: (0..k).map(|j| chunk(j, k * n)).collect(),
        selected,
        trace,
    })
}

/// Mean query loss at task vector `x` and its `θ`-gradient through the query
/// fixed points, with `x` held constant.
pub fn meta_query_loss_grad(
    model: &Model,
    task: &MetaTask,
    x: &[f64],
    cfg: &MetaConfig,
    counters: &mut EvalCounters,
) -> Result<(f64, ThetaGradient)> {
    check_model(model, task)?;
    check_len("task vector", x.len(), task.task_dim)?;
    if task.query.is_empty() {
        return Err(Error::InvalidArgument("meta task needs at least one query example".into()));
    }
    let mut total = ThetaGradient::zeros(model.state_dim(), model.input_dim(), model.output_dim());
    let mut loss = 0.0;
    for (a, y) in &task.query {
        let (value, grad, _) = deq_loss_grad(
            &model.layer,
            &model.head,
            &InnerLoss::squared(y.clone()),
            &meta_input(a, x),
            &cfg.forward,
            &cfg.adjoint,
            counters,
        )?;
        loss += value;
        total.add_assign(&grad);
    }
    let scale = 1.0 / task.query.len() as f64;
    total.scale(scale);
    Ok((loss * scale, total))
}

/// Trains `θ` over `tasks`: each step samples `batch` tasks, solves each
/// inner problem on its support set and steps on the mean query loss.
pub fn meta_train(tasks: &[MetaTask], model: Model, cfg: &MetaConfig, train: &TrainConfig) -> Result<TrainOutcome> {
    train_loop(tasks.len(), model, train, |model, idx, _rng| {
        let task = &tasks[idx];
        let inner = meta_inner_solve(model, task, &cfg.inner)?;
        let mut counters = inner.trace.counters();
        let (loss, grad) = meta_query_loss_grad(model, task, &inner.x, cfg, &mut counters)?;
        Ok(ItemGrad {
            loss,
            reg: 0.0,
            grad,
            counters,
        })
    })
}
