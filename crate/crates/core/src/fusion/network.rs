use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gate::{gate_vars, Gate};
use super::params::{bias_name, weight_name, BoundParams, ParameterSet, ALPHA, BETA};
use super::spec::{Architecture, LayerSpec, NetworkSpec, StreamInput};
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Whether a forward pass is a training pass, and how its dropout masks are
/// keyed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardMode {
    pub training: bool,
    pub dropout_rate: f64,
    pub seed: u64,
    pub step: u64,
    pub sample: u64,
}

impl ForwardMode {
    pub fn eval() -> Self {
        Self {
            training: false,
            dropout_rate: 0.0,
            seed: 0,
            step: 0,
            sample: 0,
        }
    }

    pub fn train(dropout_rate: f64, seed: u64, step: u64, sample: u64) -> Self {
        Self {
            training: true,
            dropout_rate,
            seed,
            step,
            sample,
        }
    }

    fn dropout_rng(&self, stream: u64, layer: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, self.step, self.sample, stream, layer as u64]))
    }
}

/// Mixes a key tuple into one seed (splitmix64 finaliser per word).
pub fn derive_seed(words: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &w in words {
        h ^= w;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Handles to everything a forward pass produced.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `3J` root-relative joint coordinates in millimetres.
    pub pose: Var,
    /// Image-stream features `I_0..`, as far as they were computed.
    pub image: Vec<Var>,
    /// Confidence-map stream features `X_0..`.
    pub cmap: Vec<Var>,
    /// Fusion-stream outputs `Z_0..`.
    pub fusion: Vec<Var>,
    /// Gate weights `w_1..w_L` (empty for architectures without a gate).
    pub weights: Vec<Var>,
}

fn stream_id(stream: &str) -> u64 {
    match stream {
        "image" => 1,
        "cmap" => 2,
        "fusion" => 3,
        _ => 4,
    }
}

fn apply_layer(
    graph: &mut Graph,
    layer: &LayerSpec,
    input: Var,
    bound: &BoundParams,
    stream: &str,
    index: usize,
    mode: &ForwardMode,
) -> Result<Var> {
    let wrap = |e: Error| match e {
        Error::Dimension(m) => Error::Dimension(format!("{stream} layer {index}: {m}")),
        other => other,
    };
    match *layer {
        LayerSpec::Conv { stride, pad, .. } => {
            let w = bound.get(&weight_name(stream, index))?;
            let b = bound.get(&bias_name(stream, index))?;
            let y = graph.conv2d(input, w, b, stride, pad).map_err(wrap)?;
            graph.relu(y)
        }
        LayerSpec::Pool { window, stride } => graph.maxpool2d(input, window, stride).map_err(wrap),
        LayerSpec::Fc { units } => {
            let w = bound.get(&weight_name(stream, index))?;
            let b = bound.get(&bias_name(stream, index))?;
            let x = graph.flatten(input)?;
            let y = graph.linear(x, w, b).map_err(wrap)?;
            let y = graph.relu(y)?;
            let mut rng = mode.dropout_rng(stream_id(stream), index);
            let y = graph.dropout(y, mode.dropout_rate, &mut rng, mode.training)?;
            graph.reshape(y, &[units, 1, 1])
        }
    }
}

fn head(graph: &mut Graph, input: Var, bound: &BoundParams, spec: &NetworkSpec) -> Result<Var> {
    let x = graph.flatten(input)?;
    let w = bound.get("head.weight")?;
    let b = bound.get("head.bias")?;
    let y = graph
        .linear(x, w, b)
        .map_err(|e| Error::dim(format!("regression head: {e}")))?;
    graph.scale(y, spec.output_scale)
}

fn check_input(graph: &Graph, var: Var, expected: [usize; 3], what: &str) -> Result<()> {
    if graph.shape(var) != expected {
        return Err(Error::dim(format!(
            "{what} has shape {:?}, network expects {expected:?}",
            graph.shape(var)
        )));
    }
    Ok(())
}

/// Runs the network on one sample.
///
/// For the three-stream architecture the fusion stream starts from
/// `Z_0 = concat(I_0, X_0)` and layer `l + 1` consumes
/// `(1 − w_l)·concat(I_l, X_l) + w_l·Z_l` for `l = 1..=L`; `Z_{L+1}` is the
/// regression head applied to the last mixture.
pub fn forward(
    graph: &mut Graph,
    image: Var,
    cmaps: Var,
    bound: &BoundParams,
    spec: &NetworkSpec,
    gate: &Gate,
    mode: &ForwardMode,
) -> Result<ForwardOutput> {
    check_input(graph, image, [spec.image_channels, spec.height, spec.width], "image")?;
    check_input(graph, cmaps, [spec.joints, spec.height, spec.width], "confidence maps")?;
    let l_total = spec.fusible_layers();
    let mut out = ForwardOutput {
        pose: image,
        image: vec![image],
        cmap: vec![cmaps],
        fusion: Vec::new(),
        weights: Vec::new(),
    };

    match spec.architecture {
        Architecture::ThreeStream => {
            out.weights = match gate {
                Gate::Sigmoid => {
                    let alpha = bound.get(ALPHA)?;
                    let beta = bound.get(BETA)?;
                    gate_vars(graph, alpha, beta, l_total)?
                }
                Gate::Fixed(w) => {
                    if w.len() != l_total {
                        return Err(Error::dim(format!(
                            "{} fixed fusion weights for {l_total} layers",
                            w.len()
                        )));
                    }
                    w.iter().map(|&x| graph.scalar(x)).collect()
                }
            };
            let z0 = graph.concat_channels(&[image, cmaps])?;
            out.fusion.push(z0);
            let mut mixed = z0;
            for l in 1..=l_total {
                let i = apply_layer(graph, &spec.image_layers[l - 1], out.image[l - 1], bound, "image", l, mode)?;
                let x = apply_layer(graph, &spec.cmap_layers[l - 1], out.cmap[l - 1], bound, "cmap", l, mode)?;
                let z = apply_layer(graph, &spec.fusion_layers[l - 1], mixed, bound, "fusion", l, mode)?;
                let cat = graph
                    .concat_channels(&[i, x])
                    .map_err(|e| Error::dim(format!("layer {l}: {e}")))?;
                mixed = graph
                    .mix(cat, z, out.weights[l - 1])
                    .map_err(|e| Error::dim(format!("layer {l}: {e}")))?;
                out.image.push(i);
                out.cmap.push(x);
                out.fusion.push(z);
            }
            out.pose = head(graph, mixed, bound, spec)?;
        }
        Architecture::TwoPhase { split } => {
            for l in 1..=split {
                let i = apply_layer(graph, &spec.image_layers[l - 1], out.image[l - 1], bound, "image", l, mode)?;
                let x = apply_layer(graph, &spec.cmap_layers[l - 1], out.cmap[l - 1], bound, "cmap", l, mode)?;
                out.image.push(i);
                out.cmap.push(x);
            }
            let mut u = graph.concat_channels(&[out.image[split], out.cmap[split]])?;
            for l in split + 1..=l_total {
                u = apply_layer(graph, &spec.fusion_layers[l - 1], u, bound, "fusion", l, mode)?;
                out.fusion.push(u);
            }
            out.pose = head(graph, u, bound, spec)?;
        }
        Architecture::SingleStream(input) => {
            let layers = spec.single_stream_layers(input);
            let (start, feats) = match input {
                StreamInput::Image => (image, &mut out.image),
                StreamInput::Cmaps => (cmaps, &mut out.cmap),
            };
            let mut u = start;
            for (l, layer) in layers.iter().enumerate() {
                u = apply_layer(graph, layer, u, bound, input.prefix(), l + 1, mode)?;
                feats.push(u);
            }
            out.pose = head(graph, u, bound, spec)?;
        }
    }
    Ok(out)
}

/// A complete network: topology, gate and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: NetworkSpec,
    pub gate: Gate,
    pub params: ParameterSet,
}

impl Model {
    pub fn new(spec: NetworkSpec, gate: Gate, params: ParameterSet) -> Result<Self> {
        super::params::check_layout(&params, &spec, &gate)?;
        Ok(Self { spec, gate, params })
    }

    /// Current fusion weights, or `None` without a gate.
    pub fn weights(&self) -> Option<Vec<f64>> {
        match (&self.gate, self.spec.architecture) {
            (Gate::Sigmoid, _) => self.params.schedule()?.weights(self.spec.fusible_layers()).ok(),
            (Gate::Fixed(w), Architecture::ThreeStream) => Some(w.clone()),
            _ => None,
        }
    }

    /// Eval-mode prediction of the `3J` pose vector.
    pub fn predict(&self, image: &Tensor, cmaps: &Tensor) -> Result<Vec<f64>> {
        let mut graph = Graph::new();
        let bound = self.params.bind(&mut graph, false);
        let i = graph.constant(image);
        let x = graph.constant(cmaps);
        let out = forward(&mut graph, i, x, &bound, &self.spec, &self.gate, &ForwardMode::eval())?;
        Ok(graph.data(out.pose).to_vec())
    }
}
