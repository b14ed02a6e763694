use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::gate::{FusionSchedule, Gate};
use super::spec::{Architecture, LayerSpec, NetworkSpec, StreamInput};
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

pub const ALPHA: &str = "gate.alpha";
pub const BETA: &str = "gate.beta";

/// Named trainable tensors of a network, in a fixed canonical order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = tensor,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, tensor));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub(crate) fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::dim(format!("parameter `{name}` missing")))
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Scalar count excluding the gate's `alpha` and `beta`.
    pub fn layer_scalar_count(&self) -> usize {
        self.iter()
            .filter(|(n, _)| !n.starts_with("gate."))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|(_, t)| t.zero_grad());
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    /// The sigmoid gate stored in this set, if any.
    pub fn schedule(&self) -> Option<FusionSchedule> {
        Some(FusionSchedule::new(self.get(ALPHA)?.item(), self.get(BETA)?.item()))
    }

    pub fn set_schedule(&mut self, schedule: FusionSchedule) {
        self.insert(ALPHA, Tensor::scalar(schedule.alpha));
        self.insert(BETA, Tensor::scalar(schedule.beta));
    }

    /// Places every tensor on `graph`; with `trainable` each becomes a
    /// gradient-receiving leaf, otherwise a constant.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| if trainable { graph.param(t) } else { graph.constant(t) })
            .collect();
        BoundParams {
            vars,
            index: self.index.clone(),
        }
    }

    /// Moves gradients for every bound tensor out of `graph` into the
    /// tensors' gradient slots. `backward` has already checked them for
    /// finiteness.
    pub fn accumulate_grads(&mut self, graph: &mut Graph, bound: &BoundParams) -> Result<()> {
        for ((_, t), &v) in self.entries.iter_mut().zip(&bound.vars) {
            if let Some(g) = graph.take_grad(v) {
                t.accumulate_grad_owned(g)?;
            }
        }
        Ok(())
    }
}

/// Graph handles for a [`ParameterSet`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::dim(format!("parameter `{name}` missing")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

pub fn weight_name(stream: &str, layer: usize) -> String {
    format!("{stream}.{layer}.weight")
}

pub fn bias_name(stream: &str, layer: usize) -> String {
    format!("{stream}.{layer}.bias")
}

/// Canonical `(name, shape)` list for a spec and gate. The parameter file
/// stores tensors in exactly this order.
pub fn parameter_layout(spec: &NetworkSpec, gate: &Gate) -> Result<Vec<(String, Vec<usize>)>> {
    let shapes = spec.validate()?;
    let l = spec.fusible_layers();
    let mut out = Vec::new();
    let push_stream = |out: &mut Vec<(String, Vec<usize>)>, stream: &str, layers: &[LayerSpec], inputs: &[[usize; 3]], range: std::ops::RangeInclusive<usize>| {
        for layer in range {
            if let Some((w, b)) = layers[layer - 1].param_shapes(inputs[layer - 1]) {
                out.push((weight_name(stream, layer), w));
                out.push((bias_name(stream, layer), b));
            }
        }
    };
    let head_input = match spec.architecture {
        Architecture::ThreeStream => {
            push_stream(&mut out, "image", &spec.image_layers, &shapes.image, 1..=l);
            push_stream(&mut out, "cmap", &spec.cmap_layers, &shapes.cmap, 1..=l);
            push_stream(&mut out, "fusion", &spec.fusion_layers, &shapes.fusion, 1..=l);
            shapes.fusion[l]
        }
        Architecture::TwoPhase { split } => {
            push_stream(&mut out, "image", &spec.image_layers, &shapes.image, 1..=split);
            push_stream(&mut out, "cmap", &spec.cmap_layers, &shapes.cmap, 1..=split);
            push_stream(&mut out, "fusion", &spec.fusion_layers, &shapes.fusion, split + 1..=l);
            shapes.fusion[l]
        }
        Architecture::SingleStream(input) => {
            let layers = spec.single_stream_layers(input);
            let s = match input {
                StreamInput::Image => &shapes.image,
                StreamInput::Cmaps => &shapes.cmap,
            };
            push_stream(&mut out, input.prefix(), &layers, s, 1..=l);
            s[l]
        }
    };
    out.push(("head.weight".into(), vec![spec.output_dim(), head_input.iter().product()]));
    out.push(("head.bias".into(), vec![spec.output_dim()]));
    if gate.is_trainable() {
        if !matches!(spec.architecture, Architecture::ThreeStream) {
            return Err(Error::contract("a trainable gate needs the three-stream architecture"));
        }
        out.push((ALPHA.into(), vec![1]));
        out.push((BETA.into(), vec![1]));
    }
    Ok(out)
}

/// He-normal weights, zero biases; the head starts at a tenth of that
/// scale. `schedule` seeds the gate when `gate` is trainable.
pub fn init_params(spec: &NetworkSpec, gate: &Gate, schedule: FusionSchedule, seed: u64) -> Result<ParameterSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParameterSet::new();
    for (name, shape) in parameter_layout(spec, gate)? {
        let n: usize = shape.iter().product();
        let tensor = if name == ALPHA {
            Tensor::scalar(schedule.alpha)
        } else if name == BETA {
            Tensor::scalar(schedule.beta)
        } else if name.ends_with(".bias") {
            Tensor::zeros(&shape)
        } else {
            let fan_in: usize = shape[1..].iter().product();
            let mut std = (2.0 / fan_in as f64).sqrt();
            if name.starts_with("head.") {
                std *= 0.1;
            }
            let normal = Normal::new(0.0, std).expect("positive std");
            Tensor::new(&shape, (0..n).map(|_| normal.sample(&mut rng)).collect())?
        };
        set.insert(name, tensor);
    }
    Ok(set)
}

/// Checks that `params` holds exactly the tensors `spec` and `gate` need.
pub fn check_layout(params: &ParameterSet, spec: &NetworkSpec, gate: &Gate) -> Result<()> {
    let layout = parameter_layout(spec, gate)?;
    if layout.len() != params.len() {
        return Err(Error::dim(format!(
            "parameter set has {} tensors, topology needs {}",
            params.len(),
            layout.len()
        )));
    }
    for (name, shape) in layout {
        let t = params.require(&name)?;
        if t.shape() != shape.as_slice() {
            return Err(Error::dim(format!(
                "parameter `{name}` has shape {:?}, topology needs {shape:?}",
                t.shape()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_counts() {
        let spec = NetworkSpec::desk_default(17, 64, 64);
        let layout = parameter_layout(&spec, &Gate::Sigmoid).unwrap();
        // 4 weighted layers × 2 tensors × 3 streams + head + gate
        assert_eq!(layout.len(), 4 * 2 * 3 + 2 + 2);
        assert!(layout.iter().any(|(n, s)| n == "fusion.5.weight" && s == &vec![512, 64 * 16 * 16]));
        assert!(layout.iter().any(|(n, s)| n == "head.weight" && s == &vec![51, 256]));

        let mut pruned = spec.clone();
        pruned.architecture = Architecture::TwoPhase { split: 3 };
        let layout = parameter_layout(&pruned, &Gate::Fixed(vec![])).unwrap();
        let names: Vec<_> = layout.iter().map(|(n, _)| n.as_str()).collect();
        assert!(names.contains(&"image.3.weight"));
        assert!(!names.contains(&"image.5.weight"));
        assert!(!names.contains(&"fusion.3.weight"));
        assert!(names.contains(&"fusion.5.weight"));
    }

    #[test]
    fn init_is_seeded() {
        let spec = NetworkSpec::desk_default(4, 16, 16);
        let s = FusionSchedule::new(0.1, 3.0);
        let a = init_params(&spec, &Gate::Sigmoid, s, 9).unwrap();
        let b = init_params(&spec, &Gate::Sigmoid, s, 9).unwrap();
        let c = init_params(&spec, &Gate::Sigmoid, s, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.schedule().unwrap(), s);
        check_layout(&a, &spec, &Gate::Sigmoid).unwrap();
        assert!(check_layout(&a, &spec, &Gate::Fixed(vec![1.0; 6])).is_err());
    }
}
