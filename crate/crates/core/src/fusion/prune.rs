use super::gate::{gate_softness, FusionSchedule, Gate};
use super::params::{bias_name, parameter_layout, weight_name, ParameterSet};
use super::spec::{Architecture, NetworkSpec};
use super::network::Model;
use crate::{Error, Result};

/// Integer fusion point of a sharp, nondecreasing gate: the number of
/// layers whose weight is below one half.
pub fn split_point(weights: &[f64]) -> usize {
    weights.iter().filter(|&&w| w < 0.5).count()
}

/// Removes the fusion-stream layers at or below the fusion point and the
/// data-stream layers above it, turning a three-stream network with a sharp
/// gate into a two-phase one.
///
/// Every weight must satisfy `min(w, 1 − w) < tol`; otherwise some layer
/// still mixes both sources and the network is left alone.
pub fn prune_weights(
    params: &ParameterSet,
    spec: &NetworkSpec,
    weights: &[f64],
    tol: f64,
) -> Result<(ParameterSet, NetworkSpec)> {
    if spec.architecture != Architecture::ThreeStream {
        return Err(Error::contract("only three-stream networks can be pruned"));
    }
    let l = spec.fusible_layers();
    if weights.len() != l {
        return Err(Error::dim(format!("{} fusion weights for {l} layers", weights.len())));
    }
    let softness = gate_softness(weights);
    if !(softness < tol) {
        return Err(Error::GateNotSharp(format!(
            "max_l min(w_l, 1 - w_l) = {softness:.6} is not below tolerance {tol}"
        )));
    }
    let split = split_point(weights);
    if weights[..split].iter().any(|&w| w >= 0.5) || weights[split..].iter().any(|&w| w < 0.5) {
        return Err(Error::GateNotSharp("fusion weights are not monotone in the layer index".into()));
    }

    let mut pruned_spec = spec.clone();
    pruned_spec.architecture = Architecture::TwoPhase { split };
    let mut kept = ParameterSet::new();
    for (name, _) in parameter_layout(&pruned_spec, &Gate::Fixed(Vec::new()))? {
        let t = params.require(&name)?;
        kept.insert(name, t.clone());
    }
    // Sanity: dropped tensors are exactly the inactive layers.
    debug_assert!((1..=split).all(|k| kept.get(&weight_name("fusion", k)).is_none()));
    debug_assert!((split + 1..=l).all(|k| kept.get(&bias_name("image", k)).is_none()));
    Ok((kept, pruned_spec))
}

/// [`prune_weights`] for a sigmoid schedule.
pub fn prune(
    params: &ParameterSet,
    spec: &NetworkSpec,
    schedule: &FusionSchedule,
    tol: f64,
) -> Result<(ParameterSet, NetworkSpec)> {
    let w = schedule.weights(spec.fusible_layers())?;
    prune_weights(params, spec, &w, tol)
}

impl Model {
    /// Prunes a three-stream model with a sharp gate into a two-phase model.
    pub fn prune(&self, tol: f64) -> Result<Model> {
        let w = self
            .weights()
            .ok_or_else(|| Error::contract("model has no fusion gate to prune"))?;
        let (params, spec) = prune_weights(&self.params, &self.spec, &w, tol)?;
        Model::new(spec, Gate::Fixed(Vec::new()), params)
    }
}
