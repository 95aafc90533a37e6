// SPDX-License-Identifier: Apache-2.0

use rayon::prelude::*;

use super::{GradientOrder, MetaConfig, OuterOptimizer};
use crate::autodiff::{accuracy, mse_loss, softmax_cross_entropy, GradientMap, Graph, ParamId, Var};
use crate::error::{Error, Result};
use crate::net::{LearnerKind, Network};
use crate::tasks::{Episode, Targets};
use crate::tensor::Tensor;

/// Outcome of adapting to one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptResult {
    /// Final values of the adapted parameters.
    pub adapted: Vec<(ParamId, Tensor)>,
    /// Support loss before each step.
    pub support_loss_trace: Vec<f64>,
    pub query_loss: f64,
    /// Query MSE for regression, accuracy for classification.
    pub query_metric: f64,
}

/// Mean squared error or softmax cross-entropy, depending on the targets.
pub fn task_loss<'g>(out: Var<'g>, targets: &Targets) -> Result<Var<'g>> {
    match targets {
        Targets::Values(t) => mse_loss(out, out.graph().constant(t.clone())),
        Targets::Labels(labels) => softmax_cross_entropy(out, labels),
    }
}

pub fn task_metric(out: &Tensor, targets: &Targets) -> Result<f64> {
    match targets {
        Targets::Values(t) => Ok(out.sub(t)?.data().iter().map(|d| d * d).sum::<f64>() / t.numel() as f64),
        Targets::Labels(labels) => Ok(accuracy(out, labels)),
    }
}

fn finite(v: f64, step: usize, context: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence { step, context: context.into() })
    }
}

/// Runs `steps` plain gradient-descent steps on the support loss, updating
/// `vars` at `adapted` in place. With `track` the update chain stays in the
/// graph (second order records the inner gradients too); otherwise every
/// step restarts from a fresh leaf.
#[allow(clippy::too_many_arguments)]
fn unroll<'g>(
    net: &Network,
    graph: &'g Graph,
    vars: &mut [Var<'g>],
    adapted: &[ParamId],
    episode: &Episode,
    alpha: f64,
    steps: usize,
    track: Option<GradientOrder>,
) -> Result<Vec<f64>> {
    let x = graph.constant(episode.support_x.clone());
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let loss = task_loss(net.forward(x, vars)?, &episode.support_y)?;
        trace.push(finite(loss.item()?, step, "support loss")?);
        let wrt: Vec<Var<'g>> = adapted.iter().map(|id| vars[id.0]).collect();
        let create_graph = track == Some(GradientOrder::Second);
        let grads = graph.gradient(loss, &wrt, create_graph)?;
        for (id, g) in adapted.iter().zip(grads) {
            let current = vars[id.0];
            vars[id.0] = match track {
                Some(_) => current.sub(g.scale(alpha))?,
                None => graph.leaf(current.value().sub(&g.value().scale(alpha))?),
            };
        }
    }
    Ok(trace)
}

fn query<'g>(
    net: &Network,
    graph: &'g Graph,
    vars: &[Var<'g>],
    episode: &Episode,
    step: usize,
) -> Result<(Var<'g>, f64)> {
    let out = net.forward(graph.constant(episode.query_x.clone()), vars)?;
    let loss = task_loss(out, &episode.query_y)?;
    finite(loss.item()?, step, "query loss")?;
    let metric = task_metric(&out.value(), &episode.query_y)?;
    Ok((loss, metric))
}

/// Adapts the learner's inner-loop parameters for `steps` steps without
/// tracking anything for the meta-gradient. `net` itself is never modified.
pub fn adapt(net: &Network, episode: &Episode, alpha: f64, steps: usize) -> Result<AdaptResult> {
    if episode.support_y.is_empty() {
        return Err(Error::Config("episode has an empty support set".into()));
    }
    let adapted = net.adapted_ids();
    let graph = Graph::new();
    let mut vars = net.bind(&graph, |h| adapted.contains(&h.id));
    let trace = unroll(net, &graph, &mut vars, &adapted, episode, alpha, steps, None)?;
    let (loss, metric) = query(net, &graph, &vars, episode, steps)?;
    Ok(AdaptResult {
        adapted: adapted.iter().map(|&id| (id, vars[id.0].tensor())).collect(),
        support_loss_trace: trace,
        query_loss: loss.item()?,
        query_metric: metric,
    })
}

fn require(net: &Network, learner: LearnerKind) -> Result<()> {
    if net.learner() == learner {
        Ok(())
    } else {
        Err(Error::Config(format!("{learner} adaptation called on a {} network", net.learner())))
    }
}

fn adapt_for(net: &Network, episode: &Episode, cfg: &MetaConfig, track_for_meta: bool) -> Result<AdaptResult> {
    let steps = if track_for_meta { cfg.inner_steps_train } else { cfg.inner_steps_eval };
    adapt(net, episode, cfg.inner_lr, steps)
}

/// Inner loop of SAP: only operation parameters move.
///
/// With `track_for_meta` the training step count is used, otherwise the
/// evaluation one. The returned values do not depend on the gradient order;
/// [`meta_gradient`] is where tracking matters.
pub fn inner_adapt(net: &Network, episode: &Episode, cfg: &MetaConfig, track_for_meta: bool) -> Result<AdaptResult> {
    require(net, LearnerKind::Sap)?;
    adapt_for(net, episode, cfg, track_for_meta)
}

/// MAML inner loop: every base parameter moves.
pub fn maml_adapt(net: &Network, episode: &Episode, cfg: &MetaConfig) -> Result<AdaptResult> {
    require(net, LearnerKind::Maml)?;
    adapt_for(net, episode, cfg, false)
}

/// T-Net inner loop: base parameters move, warps stay frozen.
pub fn tnet_adapt(net: &Network, episode: &Episode, cfg: &MetaConfig) -> Result<AdaptResult> {
    require(net, LearnerKind::Tnet)?;
    adapt_for(net, episode, cfg, false)
}

/// Sum over the batch of query losses after `inner_steps_train` inner steps.
pub fn meta_objective(net: &Network, batch: &[Episode], cfg: &MetaConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("empty meta-batch".into()));
    }
    let losses = batch
        .par_iter()
        .map(|ep| adapt(net, ep, cfg.inner_lr, cfg.inner_steps_train).map(|r| r.query_loss))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum())
}

/// Value and gradient of [`meta_objective`] with respect to every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaGradient {
    pub objective: f64,
    pub task_losses: Vec<f64>,
    pub task_metrics: Vec<f64>,
    pub grads: GradientMap,
}

fn task_meta_gradient(net: &Network, episode: &Episode, cfg: &MetaConfig) -> Result<(f64, f64, GradientMap)> {
    let adapted = net.adapted_ids();
    let trainable = net.store().trainable_ids();
    let graph = Graph::new();
    let mut vars = net.bind(&graph, |h| h.trainable);
    let leaves: Vec<Var> = trainable.iter().map(|id| vars[id.0]).collect();
    unroll(net, &graph, &mut vars, &adapted, episode, cfg.inner_lr, cfg.inner_steps_train, Some(cfg.gradient_order))?;
    let (loss, metric) = query(net, &graph, &vars, episode, cfg.inner_steps_train)?;
    let grads = graph.gradient(loss, &leaves, false)?;
    let mut map = GradientMap::new();
    for (id, g) in trainable.iter().zip(grads) {
        map.insert(*id, g.tensor());
    }
    Ok((loss.item()?, metric, map))
}

/// Per-task gradients run on the current rayon pool and are summed in task order.
pub fn meta_gradient(net: &Network, batch: &[Episode], cfg: &MetaConfig) -> Result<MetaGradient> {
    if batch.is_empty() {
        return Err(Error::Config("empty meta-batch".into()));
    }
    let per_task = batch.par_iter().map(|ep| task_meta_gradient(net, ep, cfg)).collect::<Result<Vec<_>>>()?;
    let mut grads = GradientMap::new();
    let mut task_losses = Vec::with_capacity(batch.len());
    let mut task_metrics = Vec::with_capacity(batch.len());
    for (loss, metric, g) in &per_task {
        grads.accumulate(g)?;
        task_losses.push(*loss);
        task_metrics.push(*metric);
    }
    Ok(MetaGradient { objective: task_losses.iter().sum(), task_losses, task_metrics, grads })
}

/// One meta-update of every trainable parameter of `net`.
pub fn outer_step(
    net: &mut Network,
    batch: &[Episode],
    cfg: &MetaConfig,
    optimizer: &mut OuterOptimizer,
) -> Result<MetaGradient> {
    let mg = meta_gradient(net, batch, cfg)?;
    optimizer.step(net.store_mut(), &mg.grads)?;
    Ok(mg)
}
