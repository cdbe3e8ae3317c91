use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    /// 2-D convolution over `[C, H, W]` samples.
    Conv { features: usize, kernel: usize, stride: usize, padding: usize },
    /// Adjoint of [`LayerKind::Conv`]; upsamples by `stride`.
    ConvTranspose { features: usize, kernel: usize, stride: usize, padding: usize, output_padding: usize },
    Dense { features: usize },
    Flatten,
    /// Per-sample reshape (the batch dimension is kept).
    Reshape(Vec<usize>),
    /// Appends the flat network input with this index to the current flat activation.
    Concat { input: usize },
    Act(Activation),
    /// One activation per feature of a flat activation, e.g. bounded action heads.
    PerFeature(Vec<Activation>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Multiplier on the fan-in uniform bound used at initialization.
    pub init_gain: f64,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self { name: name.into(), kind, init_gain: 1.0 }
    }

    /// 3×3, stride 2, padding 1: halves spatial size, rounding up.
    pub fn conv(name: impl Into<String>, features: usize) -> Self {
        Self::new(name, LayerKind::Conv { features, kernel: 3, stride: 2, padding: 1 })
    }

    /// 3×3, stride 2 transposed convolution that exactly doubles spatial size.
    pub fn conv_transpose(name: impl Into<String>, features: usize) -> Self {
        Self::new(
            name,
            LayerKind::ConvTranspose { features, kernel: 3, stride: 2, padding: 1, output_padding: 1 },
        )
    }

    pub fn dense(name: impl Into<String>, features: usize) -> Self {
        Self::new(name, LayerKind::Dense { features })
    }

    pub fn flatten(name: impl Into<String>) -> Self {
        Self::new(name, LayerKind::Flatten)
    }

    pub fn reshape(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, LayerKind::Reshape(shape.to_vec()))
    }

    pub fn concat(name: impl Into<String>, input: usize) -> Self {
        Self::new(name, LayerKind::Concat { input })
    }

    pub fn act(name: impl Into<String>, act: Activation) -> Self {
        Self::new(name, LayerKind::Act(act))
    }

    pub fn relu(name: impl Into<String>) -> Self {
        Self::act(name, Activation::Relu)
    }

    pub fn tanh(name: impl Into<String>) -> Self {
        Self::act(name, Activation::Tanh)
    }

    pub fn sigmoid(name: impl Into<String>) -> Self {
        Self::act(name, Activation::Sigmoid)
    }

    pub fn per_feature(name: impl Into<String>, acts: Vec<Activation>) -> Self {
        Self::new(name, LayerKind::PerFeature(acts))
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.init_gain = gain;
        self
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Conv { .. } | LayerKind::ConvTranspose { .. } | LayerKind::Dense { .. }
        )
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    fn shape_err(&self, detail: impl Into<String>) -> Error {
        Error::Shape { layer: self.name.clone(), detail: detail.into() }
    }

    /// Output sample shape given the input sample shape and the network's entry shapes.
    pub(crate) fn output_shape(&self, input: &[usize], entries: &[Vec<usize>]) -> Result<Vec<usize>> {
        match &self.kind {
            LayerKind::Conv { features, kernel, stride, padding } => {
                let [_, h, w] = spatial(input).ok_or_else(|| {
                    self.shape_err(format!("convolution needs a [C, H, W] input, got {input:?}"))
                })?;
                if *features == 0 || *kernel == 0 || *stride == 0 {
                    return Err(self.shape_err("features, kernel and stride must be positive"));
                }
                let span = |n: usize| (n + 2 * padding).checked_sub(*kernel).map(|v| v / stride + 1);
                match (span(h), span(w)) {
                    (Some(ho), Some(wo)) if ho > 0 && wo > 0 => Ok(vec![*features, ho, wo]),
                    _ => Err(self.shape_err(format!("kernel {kernel} larger than padded input {h}x{w}"))),
                }
            }
            LayerKind::ConvTranspose { features, kernel, stride, padding, output_padding } => {
                let [_, h, w] = spatial(input).ok_or_else(|| {
                    self.shape_err(format!("transposed convolution needs a [C, H, W] input, got {input:?}"))
                })?;
                if *features == 0 || *kernel == 0 || *stride == 0 || output_padding >= stride {
                    return Err(self.shape_err("invalid transposed convolution geometry"));
                }
                let span = |n: usize| {
                    ((n - 1) * stride + kernel + output_padding).checked_sub(2 * padding)
                };
                match (span(h), span(w)) {
                    (Some(ho), Some(wo)) if ho > 0 && wo > 0 => Ok(vec![*features, ho, wo]),
                    _ => Err(self.shape_err("padding exceeds output size")),
                }
            }
            LayerKind::Dense { features } => {
                if input.len() != 1 {
                    return Err(self.shape_err(format!("dense layer needs a flat input, got {input:?}")));
                }
                if *features == 0 {
                    return Err(self.shape_err("features must be positive"));
                }
                Ok(vec![*features])
            }
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            LayerKind::Reshape(shape) => {
                if shape.iter().product::<usize>() != input.iter().product::<usize>() {
                    return Err(self.shape_err(format!("cannot reshape {input:?} into {shape:?}")));
                }
                Ok(shape.clone())
            }
            LayerKind::Concat { input: idx } => {
                let extra = entries
                    .get(*idx)
                    .filter(|_| *idx > 0)
                    .ok_or_else(|| self.shape_err(format!("no network input #{idx} to concatenate")))?;
                if input.len() != 1 || extra.len() != 1 {
                    return Err(self.shape_err(format!(
                        "concat needs flat operands, got {input:?} and {extra:?}"
                    )));
                }
                Ok(vec![input[0] + extra[0]])
            }
            LayerKind::Act(_) => Ok(input.to_vec()),
            LayerKind::PerFeature(acts) => {
                if input != [acts.len()] {
                    return Err(self.shape_err(format!(
                        "{} activations for input {input:?}",
                        acts.len()
                    )));
                }
                Ok(input.to_vec())
            }
        }
    }

    /// Weight shape and fan-in for parameterized layers.
    pub(crate) fn weight_shape(&self, input: &[usize]) -> Option<(Vec<usize>, usize)> {
        match &self.kind {
            LayerKind::Conv { features, kernel, .. } => {
                let c = input[0];
                Some((vec![*features, c, *kernel, *kernel], c * kernel * kernel))
            }
            LayerKind::ConvTranspose { features, kernel, .. } => {
                let c = input[0];
                Some((vec![c, *features, *kernel, *kernel], c * kernel * kernel))
            }
            LayerKind::Dense { features } => Some((vec![*features, input[0]], input[0])),
            _ => None,
        }
    }
}

fn spatial(shape: &[usize]) -> Option<[usize; 3]> {
    match shape {
        [c, h, w] => Some([*c, *h, *w]),
        _ => None,
    }
}

/// The shared image trunk: four 3×3 stride-2 convolutions with 16 features, then flatten.
pub fn conv_trunk(prefix: &str, features: usize, depth: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::with_capacity(2 * depth + 1);
    for i in 0..depth {
        layers.push(LayerSpec::conv(format!("{prefix}conv{i}"), features));
        layers.push(LayerSpec::relu(format!("{prefix}relu{i}")));
    }
    layers.push(LayerSpec::flatten(format!("{prefix}flatten")));
    layers
}
