use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Noise, SumGanModel};
use crate::error::Result;
use crate::params::{Ctx, GroupSet, ParamId};
use crate::tensor::{Fault, GradCheckReport, Graph, Tensor};

/// Whole-model gradient check result.
#[derive(Clone, Debug)]
pub struct ModelGradCheck {
    pub report: GradCheckReport,
    /// Name of the parameter holding the worst element.
    pub worst_param: String,
    /// Worst relative error per parameter, in store order.
    pub per_param: Vec<(String, f64)>,
}

fn objective(model: &SumGanModel, features: &Tensor, sigma: f64, noise_seed: u64, ctx: &mut Ctx) -> Result<crate::tensor::Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let trace = model.forward_full(ctx, features, &mut Noise::Sample(&mut rng), None)?;
    let losses = model.trace_losses(ctx, &trace, sigma)?;
    model.total_objective(ctx, &losses)
}

/// Central-difference check of [`SumGanModel::total_objective`] with respect
/// to every parameter element. The noise draws are replayed from `noise_seed`
/// on every evaluation so the objective is deterministic.
pub fn grad_check_model(
    model: &SumGanModel,
    features: &Tensor,
    sigma: f64,
    noise_seed: u64,
    eps: f64,
    fault: Option<Fault>,
) -> Result<ModelGradCheck> {
    let graph = fault.map_or_else(Graph::new, Graph::with_fault);
    let mut ctx = Ctx::with_graph(graph, &model.store, GroupSet::ALL);
    let loss = objective(model, features, sigma, noise_seed, &mut ctx)?;
    ctx.backward(loss)?;
    let mut analytic: Vec<Tensor> = model.store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
    for (id, g) in ctx.param_grads() {
        analytic[id.index()] = g;
    }
    drop(ctx);

    let mut probe = model.clone();
    let eval = |probe: &SumGanModel| -> Result<f64> {
        let mut ctx = Ctx::new(&probe.store, GroupSet::NONE);
        let loss = objective(probe, features, sigma, noise_seed, &mut ctx)?;
        Ok(ctx.value(loss).item())
    };

    let mut report = GradCheckReport::empty();
    let mut per_param = Vec::with_capacity(model.store.len());
    let ids: Vec<ParamId> = model.store.iter().map(|(id, _)| id).collect();
    for (pi, id) in ids.into_iter().enumerate() {
        let mut local = GradCheckReport::empty();
        for i in 0..model.store.get(id).value.numel() {
            let orig = model.store.get(id).value.data()[i];
            probe.store.get_mut(id).value.data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe.store.get_mut(id).value.data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe.store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi].data()[i];
            report.observe(pi, i, a, numeric);
            local.observe(pi, i, a, numeric);
        }
        per_param.push((model.store.get(id).name.clone(), local.max_rel_err));
    }
    let worst_param = per_param
        .get(report.worst.0)
        .map(|(n, _)| n.clone())
        .unwrap_or_default();
    Ok(ModelGradCheck {
        report,
        worst_param,
        per_param,
    })
}
