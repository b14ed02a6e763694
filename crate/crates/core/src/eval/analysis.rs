use crate::fusion::{forward, Architecture, ForwardMode, LayerSpec, Model};
use crate::synth::TrainingSample;
use crate::tensor::Graph;
use crate::{Error, Result};

/// Index (1-based) of the last convolution in the data streams.
pub fn last_conv_layer(model: &Model) -> Option<usize> {
    model
        .spec
        .image_layers
        .iter()
        .rposition(|l| matches!(l, LayerSpec::Conv { .. }))
        .map(|i| i + 1)
}

/// Per-sample features of the image and confidence-map streams at their last
/// convolutional layer: one value per channel, the spatial mean of its
/// activation map.
pub fn stream_features(model: &Model, samples: &[TrainingSample]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let layer = last_conv_layer(model).ok_or_else(|| Error::contract("the data streams have no convolution"))?;
    match model.spec.architecture {
        Architecture::ThreeStream => {}
        Architecture::TwoPhase { split } if split >= layer => {}
        arch => {
            return Err(Error::contract(format!(
                "`{arch}` does not compute both data streams up to layer {layer}"
            )))
        }
    }
    let mut image = Vec::with_capacity(samples.len());
    let mut cmap = Vec::with_capacity(samples.len());
    for s in samples {
        let mut graph = Graph::new();
        let bound = model.params.bind(&mut graph, false);
        let i = graph.constant(&s.image);
        let x = graph.constant(&s.cmaps);
        let out = forward(&mut graph, i, x, &bound, &model.spec, &model.gate, &ForwardMode::eval())?;
        image.push(channel_means(&graph, out.image[layer]));
        cmap.push(channel_means(&graph, out.cmap[layer]));
    }
    Ok((image, cmap))
}

fn channel_means(graph: &Graph, var: crate::tensor::Var) -> Vec<f64> {
    let c = graph.shape(var)[0];
    let data = graph.data(var);
    let hw = data.len() / c;
    data.chunks_exact(hw).map(|ch| ch.iter().sum::<f64>() / hw as f64).collect()
}
