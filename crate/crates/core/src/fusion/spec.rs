use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// One layer of a stream. Convolutions and fully-connected layers are
/// followed by a ReLU; pooling layers are not.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Pool {
        window: usize,
        stride: usize,
    },
    Fc {
        units: usize,
    },
}

impl LayerSpec {
    /// Same-padded 3×3 convolution.
    pub fn conv(channels: usize) -> Self {
        LayerSpec::Conv {
            channels,
            kernel: 3,
            stride: 1,
            pad: 1,
        }
    }

    pub fn pool(window: usize) -> Self {
        LayerSpec::Pool {
            window,
            stride: window,
        }
    }

    pub fn fc(units: usize) -> Self {
        LayerSpec::Fc { units }
    }

    pub fn is_fc(&self) -> bool {
        matches!(self, LayerSpec::Fc { .. })
    }

    /// Output `[C, H, W]` for an input of `[C, H, W]`. Fully-connected
    /// layers produce `[units, 1, 1]`.
    pub fn output_shape(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let [c, h, w] = input;
        match *self {
            LayerSpec::Conv {
                channels,
                kernel,
                stride,
                pad,
            } => {
                if stride == 0 || kernel == 0 || channels == 0 || h + 2 * pad < kernel || w + 2 * pad < kernel {
                    return None;
                }
                Some([channels, (h + 2 * pad - kernel) / stride + 1, (w + 2 * pad - kernel) / stride + 1])
            }
            LayerSpec::Pool { window, stride } => {
                if window == 0 || stride == 0 || window > h || window > w {
                    return None;
                }
                Some([c, (h - window) / stride + 1, (w - window) / stride + 1])
            }
            LayerSpec::Fc { units } => (units > 0).then_some([units, 1, 1]),
        }
    }

    /// Weight and bias shapes for a given input shape, or `None` for pooling.
    pub fn param_shapes(&self, input: [usize; 3]) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv { channels, kernel, .. } => {
                Some((vec![channels, input[0], kernel, kernel], vec![channels]))
            }
            LayerSpec::Pool { .. } => None,
            LayerSpec::Fc { units } => Some((vec![units, input.iter().product()], vec![units])),
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv {
                channels,
                kernel,
                stride,
                pad,
            } => write!(f, "conv {channels} {kernel} {stride} {pad}"),
            LayerSpec::Pool { window, stride } => write!(f, "pool {window} {stride}"),
            LayerSpec::Fc { units } => write!(f, "fc {units}"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let nums: Vec<usize> = parts
            .iter()
            .skip(1)
            .map(|p| p.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(0, format!("bad layer description `{s}`")))?;
        match (parts.first().copied(), nums.as_slice()) {
            (Some("conv"), &[channels, kernel, stride, pad]) => Ok(LayerSpec::Conv {
                channels,
                kernel,
                stride,
                pad,
            }),
            (Some("conv"), &[channels, kernel]) => Ok(LayerSpec::Conv {
                channels,
                kernel,
                stride: 1,
                pad: kernel / 2,
            }),
            (Some("pool"), &[window, stride]) => Ok(LayerSpec::Pool { window, stride }),
            (Some("pool"), &[window]) => Ok(LayerSpec::pool(window)),
            (Some("fc"), &[units]) => Ok(LayerSpec::Fc { units }),
            _ => Err(Error::format(0, format!("bad layer description `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamInput {
    Image,
    Cmaps,
}

impl StreamInput {
    pub fn prefix(self) -> &'static str {
        match self {
            StreamInput::Image => "image",
            StreamInput::Cmaps => "cmap",
        }
    }
}

/// How the layers of a [`NetworkSpec`] are wired.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// Image, confidence-map and fusion streams mixed at every layer.
    ThreeStream,
    /// Data streams for layers `1..=split`, then the fusion stream for
    /// `split+1..=L`. This is what pruning a sharp gate produces.
    TwoPhase { split: usize },
    /// One data stream followed by the fusion stream's fully-connected
    /// widths; used by the single-input baselines.
    SingleStream(StreamInput),
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::ThreeStream => write!(f, "three_stream"),
            Architecture::TwoPhase { split } => write!(f, "two_phase {split}"),
            Architecture::SingleStream(StreamInput::Image) => write!(f, "single image"),
            Architecture::SingleStream(StreamInput::Cmaps) => write!(f, "single cmap"),
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        match parts.as_slice() {
            ["three_stream"] => Ok(Architecture::ThreeStream),
            ["two_phase", n] => n
                .parse()
                .map(|split| Architecture::TwoPhase { split })
                .map_err(|_| Error::format(0, format!("bad split in `{s}`"))),
            ["single", "image"] => Ok(Architecture::SingleStream(StreamInput::Image)),
            ["single", "cmap"] => Ok(Architecture::SingleStream(StreamInput::Cmaps)),
            _ => Err(Error::format(0, format!("unknown architecture `{s}`"))),
        }
    }
}

/// Topology of the fusion network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub joints: usize,
    pub height: usize,
    pub width: usize,
    pub image_channels: usize,
    pub image_layers: Vec<LayerSpec>,
    pub cmap_layers: Vec<LayerSpec>,
    pub fusion_layers: Vec<LayerSpec>,
    /// Millimetres per unit of the regression head's raw output.
    pub output_scale: f64,
    pub architecture: Architecture,
}

/// Feature-map shapes of every stream at layers `0..=L`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamShapes {
    pub image: Vec<[usize; 3]>,
    pub cmap: Vec<[usize; 3]>,
    pub fusion: Vec<[usize; 3]>,
}

impl NetworkSpec {
    /// Per data stream: conv(16) → pool → conv(32) → pool → fc(256) → fc(128);
    /// the fusion stream doubles every width. Six fusible layers.
    pub fn desk_default(joints: usize, height: usize, width: usize) -> Self {
        let data = vec![
            LayerSpec::conv(16),
            LayerSpec::pool(2),
            LayerSpec::conv(32),
            LayerSpec::pool(2),
            LayerSpec::fc(256),
            LayerSpec::fc(128),
        ];
        Self::with_data_layers(joints, height, width, data)
    }

    /// Builds a three-stream spec whose fusion stream mirrors `data` with
    /// doubled widths.
    pub fn with_data_layers(joints: usize, height: usize, width: usize, data: Vec<LayerSpec>) -> Self {
        let fusion = data.iter().map(|l| doubled(*l)).collect();
        Self {
            joints,
            height,
            width,
            image_channels: 3,
            image_layers: data.clone(),
            cmap_layers: data,
            fusion_layers: fusion,
            output_scale: 100.0,
            architecture: Architecture::ThreeStream,
        }
    }

    /// Number of fusible layers `L`.
    pub fn fusible_layers(&self) -> usize {
        self.fusion_layers.len()
    }

    pub fn output_dim(&self) -> usize {
        3 * self.joints
    }

    /// Layers of the single stream used by [`Architecture::SingleStream`]:
    /// the data stream's convolution and pooling layers followed by the
    /// fusion stream's fully-connected widths.
    pub fn single_stream_layers(&self, input: StreamInput) -> Vec<LayerSpec> {
        let data = match input {
            StreamInput::Image => &self.image_layers,
            StreamInput::Cmaps => &self.cmap_layers,
        };
        data.iter()
            .zip(&self.fusion_layers)
            .map(|(d, f)| if d.is_fc() { *f } else { *d })
            .collect()
    }

    fn input_shape(&self, input: StreamInput) -> [usize; 3] {
        match input {
            StreamInput::Image => [self.image_channels, self.height, self.width],
            StreamInput::Cmaps => [self.joints, self.height, self.width],
        }
    }

    /// Checks the topology and returns the shape of every stream's feature
    /// maps. For single-stream specs only the matching data stream (and an
    /// empty fusion list) is reported.
    pub fn validate(&self) -> Result<StreamShapes> {
        if self.joints == 0 || self.height == 0 || self.width == 0 || self.image_channels == 0 {
            return Err(Error::dim("joint count and input extents must be positive"));
        }
        if !(self.output_scale.is_finite() && self.output_scale > 0.0) {
            return Err(Error::contract("output_scale must be positive"));
        }
        let l = self.fusible_layers();
        if l == 0 {
            return Err(Error::dim("the network needs at least one fusible layer"));
        }
        if self.image_layers.len() != l || self.cmap_layers.len() != l {
            return Err(Error::dim(format!(
                "streams must have equal depth: image {}, cmap {}, fusion {l}",
                self.image_layers.len(),
                self.cmap_layers.len()
            )));
        }
        if let Architecture::SingleStream(input) = self.architecture {
            let shapes = chain(input.prefix(), self.input_shape(input), &self.single_stream_layers(input))?;
            let (image, cmap) = match input {
                StreamInput::Image => (shapes, Vec::new()),
                StreamInput::Cmaps => (Vec::new(), shapes),
            };
            return Ok(StreamShapes {
                image,
                cmap,
                fusion: Vec::new(),
            });
        }
        let image = chain("image", self.input_shape(StreamInput::Image), &self.image_layers)?;
        let cmap = chain("cmap", self.input_shape(StreamInput::Cmaps), &self.cmap_layers)?;
        for (layer, (i, x)) in image.iter().zip(&cmap).enumerate() {
            if i[1..] != x[1..] {
                return Err(Error::dim(format!(
                    "layer {layer}: image features {i:?} and confidence-map features {x:?} differ in extent"
                )));
            }
        }
        let z0 = [image[0][0] + cmap[0][0], self.height, self.width];
        let fusion = chain("fusion", z0, &self.fusion_layers)?;
        for layer in 1..=l {
            let expected = [image[layer][0] + cmap[layer][0], image[layer][1], image[layer][2]];
            if fusion[layer] != expected {
                return Err(Error::dim(format!(
                    "layer {layer}: fusion features {:?} must match concatenated data features {expected:?}",
                    fusion[layer]
                )));
            }
        }
        if let Architecture::TwoPhase { split } = self.architecture {
            if split > l {
                return Err(Error::dim(format!("two-phase split {split} exceeds L = {l}")));
            }
        }
        Ok(StreamShapes { image, cmap, fusion })
    }
}

fn doubled(layer: LayerSpec) -> LayerSpec {
    match layer {
        LayerSpec::Conv {
            channels,
            kernel,
            stride,
            pad,
        } => LayerSpec::Conv {
            channels: 2 * channels,
            kernel,
            stride,
            pad,
        },
        LayerSpec::Fc { units } => LayerSpec::Fc { units: 2 * units },
        pool => pool,
    }
}

fn chain(stream: &str, input: [usize; 3], layers: &[LayerSpec]) -> Result<Vec<[usize; 3]>> {
    let mut shapes = vec![input];
    for (i, layer) in layers.iter().enumerate() {
        let prev = *shapes.last().unwrap();
        let next = layer.output_shape(prev).ok_or_else(|| {
            Error::dim(format!(
                "{stream} layer {}: `{layer}` cannot consume features of shape {prev:?}",
                i + 1
            ))
        })?;
        shapes.push(next);
    }
    Ok(shapes)
}
