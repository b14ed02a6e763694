//! Fixtures shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use posefuse::fusion::params::{ALPHA, BETA};
use posefuse::fusion::{forward, init_params, FusionSchedule, ForwardMode, Gate, LayerSpec, NetworkSpec, ParameterSet};
use posefuse::tensor::{Graph, Tensor, Var};
use posefuse::train::regularized_loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// A small three-stream network with a trainable gate, a two-sample batch
/// and a fixed dropout key, so that the regularized loss is a deterministic
/// function of the parameters.
pub struct MicroNet {
    pub spec: NetworkSpec,
    pub params: ParameterSet,
    pub batch: Vec<(Tensor, Tensor, Tensor)>,
    pub lambda: f64,
    pub dropout_rate: f64,
    pub seed: u64,
}

pub fn micro_spec() -> NetworkSpec {
    let mut spec = NetworkSpec::with_data_layers(4, 8, 8, vec![LayerSpec::conv(2), LayerSpec::pool(2), LayerSpec::fc(5)]);
    spec.output_scale = 1.0;
    spec
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn micro_net(seed: u64) -> MicroNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = micro_spec();
    let schedule = FusionSchedule::new(rng.random_range(0.5..2.0), rng.random_range(0.0..3.0));
    let mut params = init_params(&spec, &Gate::Sigmoid, schedule, seed).unwrap();
    // Non-zero biases so that no unit sits on a ReLU kink by construction.
    for (name, t) in params.iter_mut() {
        if name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
    }
    let batch = (0..2)
        .map(|_| {
            (
                random_tensor(&mut rng, &[3, 8, 8], 0.0, 1.0),
                random_tensor(&mut rng, &[4, 8, 8], 0.0, 1.0),
                random_tensor(&mut rng, &[12], -1.0, 1.0),
            )
        })
        .collect();
    MicroNet {
        spec,
        params,
        batch,
        lambda: rng.random_range(0.1..1.0),
        dropout_rate: 0.5,
        seed,
    }
}

impl MicroNet {
    fn record(&self, graph: &mut Graph, params: &ParameterSet, trainable: bool) -> (Var, Vec<Var>) {
        let bound = params.bind(graph, trainable);
        let mut preds = Vec::new();
        let mut targets = Vec::new();
        for (i, (image, cmaps, target)) in self.batch.iter().enumerate() {
            let image = graph.constant(image);
            let cmaps = graph.constant(cmaps);
            let mode = ForwardMode::train(self.dropout_rate, self.seed, 0, i as u64);
            let out = forward(graph, image, cmaps, &bound, &self.spec, &Gate::Sigmoid, &mode).unwrap();
            preds.push(out.pose);
            targets.push(graph.constant(target));
        }
        let loss = regularized_loss(graph, &preds, &targets, bound.get(ALPHA).unwrap(), self.lambda).unwrap();
        (loss, bound.vars().to_vec())
    }

    pub fn loss(&self, params: &ParameterSet) -> f64 {
        let mut graph = Graph::new();
        let (loss, _) = self.record(&mut graph, params, false);
        graph.data(loss)[0]
    }

    /// Reverse-mode gradients, in parameter order.
    pub fn analytic(&self) -> Vec<(String, Vec<f64>)> {
        let mut graph = Graph::new();
        let (loss, vars) = self.record(&mut graph, &self.params, true);
        graph.backward(loss).unwrap();
        self.params
            .names()
            .into_iter()
            .zip(vars)
            .map(|(name, v)| {
                let n = self.params.get(&name).unwrap().numel();
                let g = graph.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
                (name, g)
            })
            .collect()
    }

    /// Central difference of the loss in one parameter element.
    pub fn numeric(&self, name: &str, index: usize, h: f64) -> f64 {
        let mut plus = self.params.clone();
        plus.get_mut(name).unwrap().data_mut()[index] += h;
        let mut minus = self.params.clone();
        minus.get_mut(name).unwrap().data_mut()[index] -= h;
        (self.loss(&plus) - self.loss(&minus)) / (2.0 * h)
    }
}

/// Worst element of a gradient check.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub worst: f64,
    pub name: String,
    pub index: usize,
    pub checked: usize,
    pub gate_checked: bool,
}

/// `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps gradients that are zero
/// up to rounding from dominating the ratio.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub fn check_gradients(net: &MicroNet) -> GradReport {
    let mut report = GradReport {
        worst: 0.0,
        name: String::new(),
        index: 0,
        checked: 0,
        gate_checked: false,
    };
    for (name, grad) in net.analytic() {
        for (k, &a) in grad.iter().enumerate() {
            let e = relative_error(a, net.numeric(&name, k, FD_STEP));
            report.checked += 1;
            if e > report.worst {
                report.worst = e;
                report.name = name.clone();
                report.index = k;
            }
        }
        report.gate_checked |= name == ALPHA || name == BETA;
    }
    report
}
