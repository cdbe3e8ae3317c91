use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::conv::{from_channel_major, to_channel_major, Geometry};
use crate::nn::layer::{Activation, LayerKind, LayerSpec};
use crate::nn::params::ParamSet;
use crate::nn::tensor::{Scalar, Tensor};

/// A sequential network with optional side inputs spliced in by `Concat` layers.
///
/// Input 0 feeds the first layer; inputs `1..` are flat vectors consumed by
/// [`LayerKind::Concat`]. Shapes exclude the batch dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    inputs: Vec<Vec<usize>>,
    layers: Vec<LayerSpec>,
    // Sample shape entering each layer, plus the final output shape.
    shapes: Vec<Vec<usize>>,
}

/// Activation record of one forward pass, consumed by [`Network::backward`].
#[derive(Debug)]
pub struct Tape<T> {
    batch: usize,
    caches: Vec<Cache<T>>,
}

#[derive(Debug)]
enum Cache<T> {
    None,
    Conv { cols: Vec<T> },
    ConvTranspose { input: Vec<T> },
    Dense { input: Tensor<T> },
    Output { output: Tensor<T> },
    Concat { left: usize, input: usize },
}

/// Gradients of a scalar objective with respect to parameters and every input.
#[derive(Debug)]
pub struct Gradients<T> {
    pub params: ParamSet<T>,
    pub inputs: Vec<Tensor<T>>,
}

impl Network {
    /// Checks that shapes chain through every layer; errors name the offending layer.
    pub fn new(inputs: Vec<Vec<usize>>, layers: Vec<LayerSpec>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::config("network needs at least one input"));
        }
        let mut names = std::collections::HashSet::new();
        let mut shapes = Vec::with_capacity(layers.len() + 1);
        let mut current = inputs[0].clone();
        for layer in &layers {
            if !names.insert(layer.name.as_str()) {
                return Err(Error::Shape { layer: layer.name.clone(), detail: "duplicate layer name".into() });
            }
            let next = layer.output_shape(&current, &inputs)?;
            shapes.push(std::mem::replace(&mut current, next));
        }
        shapes.push(current);
        Ok(Self { inputs, layers, shapes })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shapes(&self) -> &[Vec<usize>] {
        &self.inputs
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("shapes always has the output entry")
    }

    /// Sample shape entering layer `i`.
    pub fn shape_before(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    /// Deterministic in `seed`: weights uniform in ±gain·√(6/fan_in), biases zero.
    pub fn init<T: Scalar>(&self, seed: u64) -> ParamSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (layer, shape) in self.layers.iter().zip(&self.shapes) {
            let Some((wshape, fan_in)) = layer.weight_shape(shape) else { continue };
            let bound = layer.init_gain * (6.0 / fan_in as f64).sqrt();
            let n: usize = wshape.iter().product();
            let data: Vec<T> = (0..n)
                .map(|_| T::lit(if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 }))
                .collect();
            params.insert(layer.weight_name(), Tensor::from_vec(&wshape, data).expect("sized"));
            let features = *self.shapes_after(layer, shape).first().expect("non-empty");
            params.insert(layer.bias_name(), Tensor::zeros(&[features]));
        }
        params
    }

    fn shapes_after(&self, layer: &LayerSpec, shape: &[usize]) -> Vec<usize> {
        layer.output_shape(shape, &self.inputs).expect("validated in new")
    }

    /// Forward pass recording everything [`Network::backward`] needs.
    pub fn forward<T: Scalar>(&self, params: &ParamSet<T>, inputs: &[&Tensor<T>]) -> Result<(Tensor<T>, Tape<T>)> {
        self.run(params, inputs, true).map(|(out, tape)| (out, tape.expect("recorded")))
    }

    /// Forward pass without an activation record.
    pub fn predict<T: Scalar>(&self, params: &ParamSet<T>, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        self.run(params, inputs, false).map(|(out, _)| out)
    }

    fn check_inputs<T: Scalar>(&self, inputs: &[&Tensor<T>]) -> Result<usize> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::contract(format!(
                "network takes {} inputs, got {}",
                self.inputs.len(),
                inputs.len()
            )));
        }
        let batch = inputs[0].batch();
        for (i, (t, want)) in inputs.iter().zip(&self.inputs).enumerate() {
            if t.shape().len() != want.len() + 1 || &t.shape()[1..] != want.as_slice() || t.batch() != batch {
                return Err(Error::contract(format!(
                    "input #{i} has shape {:?}, expected [{batch}, {want:?}]",
                    t.shape()
                )));
            }
        }
        Ok(batch)
    }

    fn run<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        inputs: &[&Tensor<T>],
        record: bool,
    ) -> Result<(Tensor<T>, Option<Tape<T>>)> {
        let batch = self.check_inputs(inputs)?;
        let mut caches = Vec::with_capacity(if record { self.layers.len() } else { 0 });
        let mut x = inputs[0].clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let in_shape = &self.shapes[idx];
            let out_shape = &self.shapes[idx + 1];
            let mut full_out = vec![batch];
            full_out.extend_from_slice(out_shape);
            let (y, cache) = match &layer.kind {
                LayerKind::Conv { kernel, stride, padding, .. } => {
                    let g = Geometry {
                        c: in_shape[0],
                        h: in_shape[1],
                        w: in_shape[2],
                        k: *kernel,
                        stride: *stride,
                        pad: *padding,
                        ho: out_shape[1],
                        wo: out_shape[2],
                    };
                    let w = params.require(&layer.weight_name())?;
                    let b = params.require(&layer.bias_name())?;
                    let f = out_shape[0];
                    let (pl, ol) = (g.patch_len(), g.out_len());
                    let ld = batch * ol;
                    // All samples share one [c·k·k, batch·ho·wo] patch matrix.
                    let mut cols = vec![T::zero(); pl * ld];
                    let in_len = x.sample_len();
                    for n in 0..batch {
                        g.im2col(&x.data()[n * in_len..(n + 1) * in_len], &mut cols[n * ol..], ld);
                    }
                    let mut out = vec![T::zero(); f * ld];
                    for (c, &bias) in b.data().iter().enumerate() {
                        out[c * ld..(c + 1) * ld].iter_mut().for_each(|v| *v = bias);
                    }
                    T::gemm(false, false, f, ld, pl, w.data(), &cols, T::one(), &mut out);
                    let y = Tensor::from_vec(&full_out, from_channel_major(&out, batch, f, ol))?;
                    (y, if record { Cache::Conv { cols } } else { Cache::None })
                }
                LayerKind::ConvTranspose { kernel, stride, padding, .. } => {
                    // The adjoint of a convolution mapping the output grid onto the input grid.
                    let g = Geometry {
                        c: out_shape[0],
                        h: out_shape[1],
                        w: out_shape[2],
                        k: *kernel,
                        stride: *stride,
                        pad: *padding,
                        ho: in_shape[1],
                        wo: in_shape[2],
                    };
                    let w = params.require(&layer.weight_name())?;
                    let b = params.require(&layer.bias_name())?;
                    let c_in = in_shape[0];
                    let (pl, ol) = (g.patch_len(), g.out_len());
                    let ld = batch * ol;
                    let xt = to_channel_major(x.data(), batch, c_in, ol);
                    let mut cols = vec![T::zero(); pl * ld];
                    T::gemm(true, false, pl, ld, c_in, w.data(), &xt, T::zero(), &mut cols);
                    let out_len = out_shape.iter().product::<usize>();
                    let plane = out_shape[1] * out_shape[2];
                    let mut y = Tensor::zeros(&full_out);
                    for n in 0..batch {
                        let out = &mut y.data_mut()[n * out_len..(n + 1) * out_len];
                        for (c, &bias) in b.data().iter().enumerate() {
                            out[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v = bias);
                        }
                        g.col2im(&cols[n * ol..], out, ld);
                    }
                    (y, if record { Cache::ConvTranspose { input: xt } } else { Cache::None })
                }
                LayerKind::Dense { features } => {
                    let w = params.require(&layer.weight_name())?;
                    let b = params.require(&layer.bias_name())?;
                    let fan_in = in_shape[0];
                    let mut y = Tensor::zeros(&full_out);
                    for row in y.data_mut().chunks_mut(*features) {
                        row.copy_from_slice(b.data());
                    }
                    T::gemm(false, true, batch, *features, fan_in, x.data(), w.data(), T::one(), y.data_mut());
                    (y, if record { Cache::Dense { input: x } } else { Cache::None })
                }
                LayerKind::Flatten | LayerKind::Reshape(_) => (x.reshape(&full_out)?, Cache::None),
                LayerKind::Concat { input } => {
                    let left = in_shape[0];
                    let y = x.hcat(inputs[*input])?;
                    (y, Cache::Concat { left, input: *input })
                }
                LayerKind::Act(act) => {
                    let mut y = x;
                    y.data_mut().iter_mut().for_each(|v| *v = apply(*act, *v));
                    let cache = if record { Cache::Output { output: y.clone() } } else { Cache::None };
                    (y, cache)
                }
                LayerKind::PerFeature(acts) => {
                    let mut y = x;
                    for row in y.data_mut().chunks_mut(acts.len()) {
                        for (v, act) in row.iter_mut().zip(acts) {
                            *v = apply(*act, *v);
                        }
                    }
                    let cache = if record { Cache::Output { output: y.clone() } } else { Cache::None };
                    (y, cache)
                }
            };
            if !y.is_finite() {
                return Err(Error::NumericFault { layer: layer.name.clone() });
            }
            if record {
                caches.push(cache);
            }
            x = y;
        }
        Ok((x, record.then_some(Tape { batch, caches })))
    }

    /// Reverse-mode pass: gradients of `<output, output_grad>` w.r.t. parameters and inputs.
    pub fn backward<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        tape: &Tape<T>,
        output_grad: &Tensor<T>,
    ) -> Result<Gradients<T>> {
        self.backward_impl(params, tape, output_grad, true)
    }

    /// Like [`Network::backward`] but leaves the gradient of input 0 at zero when
    /// the first layer is a convolution, skipping its most expensive step.
    pub fn backward_params<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        tape: &Tape<T>,
        output_grad: &Tensor<T>,
    ) -> Result<Gradients<T>> {
        self.backward_impl(params, tape, output_grad, false)
    }

    fn backward_impl<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        tape: &Tape<T>,
        output_grad: &Tensor<T>,
        input_grad: bool,
    ) -> Result<Gradients<T>> {
        if tape.caches.len() != self.layers.len() {
            return Err(Error::contract(format!(
                "tape records {} layers, network has {}",
                tape.caches.len(),
                self.layers.len()
            )));
        }
        let batch = tape.batch;
        let mut want_out = vec![batch];
        want_out.extend_from_slice(self.output_shape());
        if output_grad.shape() != want_out.as_slice() {
            return Err(Error::contract(format!(
                "output gradient has shape {:?}, expected {want_out:?}",
                output_grad.shape()
            )));
        }
        let mut grads = ParamSet::new();
        let mut input_grads: Vec<Tensor<T>> = self
            .inputs
            .iter()
            .map(|s| {
                let mut shape = vec![batch];
                shape.extend_from_slice(s);
                Tensor::zeros(&shape)
            })
            .collect();

        let mut dy = output_grad.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let in_shape = &self.shapes[idx];
            let out_shape = &self.shapes[idx + 1];
            let mut full_in = vec![batch];
            full_in.extend_from_slice(in_shape);
            let mismatch = || Error::contract(format!("tape entry for `{}` does not match its layer", layer.name));
            let dx = match (&layer.kind, &tape.caches[idx]) {
                (LayerKind::Conv { kernel, stride, padding, .. }, Cache::Conv { cols }) => {
                    let g = Geometry {
                        c: in_shape[0],
                        h: in_shape[1],
                        w: in_shape[2],
                        k: *kernel,
                        stride: *stride,
                        pad: *padding,
                        ho: out_shape[1],
                        wo: out_shape[2],
                    };
                    let w = params.require(&layer.weight_name())?;
                    let f = out_shape[0];
                    let (pl, ol) = (g.patch_len(), g.out_len());
                    let ld = batch * ol;
                    let dyt = to_channel_major(dy.data(), batch, f, ol);
                    let mut dw = vec![T::zero(); f * pl];
                    T::gemm(false, true, f, pl, ld, &dyt, cols, T::zero(), &mut dw);
                    let db: Vec<T> = dyt.chunks(ld).map(|r| r.iter().copied().sum::<T>()).collect();
                    let mut dx = Tensor::zeros(&full_in);
                    if idx > 0 || input_grad {
                        let mut dcols = vec![T::zero(); pl * ld];
                        T::gemm(true, false, pl, ld, f, w.data(), &dyt, T::zero(), &mut dcols);
                        let in_len = dx.sample_len();
                        for n in 0..batch {
                            g.col2im(&dcols[n * ol..], &mut dx.data_mut()[n * in_len..(n + 1) * in_len], ld);
                        }
                    }
                    grads.insert(layer.weight_name(), Tensor::from_vec(w.shape(), dw)?);
                    grads.insert(layer.bias_name(), Tensor::from_vec(&[f], db)?);
                    dx
                }
                (LayerKind::ConvTranspose { kernel, stride, padding, .. }, Cache::ConvTranspose { input }) => {
                    let g = Geometry {
                        c: out_shape[0],
                        h: out_shape[1],
                        w: out_shape[2],
                        k: *kernel,
                        stride: *stride,
                        pad: *padding,
                        ho: in_shape[1],
                        wo: in_shape[2],
                    };
                    let w = params.require(&layer.weight_name())?;
                    let c_in = in_shape[0];
                    let f = out_shape[0];
                    let (pl, ol) = (g.patch_len(), g.out_len());
                    let ld = batch * ol;
                    let out_len: usize = out_shape.iter().product();
                    let plane = out_shape[1] * out_shape[2];
                    let mut db = vec![T::zero(); f];
                    let mut dcols = vec![T::zero(); pl * ld];
                    for n in 0..batch {
                        let d = &dy.data()[n * out_len..(n + 1) * out_len];
                        for (c, acc) in db.iter_mut().enumerate() {
                            *acc = *acc + d[c * plane..(c + 1) * plane].iter().copied().sum::<T>();
                        }
                        g.im2col(d, &mut dcols[n * ol..], ld);
                    }
                    let mut dw = vec![T::zero(); c_in * pl];
                    T::gemm(false, true, c_in, pl, ld, input, &dcols, T::zero(), &mut dw);
                    let mut dxt = vec![T::zero(); c_in * ld];
                    T::gemm(false, false, c_in, ld, pl, w.data(), &dcols, T::zero(), &mut dxt);
                    let dx = Tensor::from_vec(&full_in, from_channel_major(&dxt, batch, c_in, ol))?;
                    grads.insert(layer.weight_name(), Tensor::from_vec(w.shape(), dw)?);
                    grads.insert(layer.bias_name(), Tensor::from_vec(&[f], db)?);
                    dx
                }
                (LayerKind::Dense { features }, Cache::Dense { input }) => {
                    let w = params.require(&layer.weight_name())?;
                    let fan_in = in_shape[0];
                    let mut dw = vec![T::zero(); features * fan_in];
                    T::gemm(true, false, *features, fan_in, batch, dy.data(), input.data(), T::zero(), &mut dw);
                    let mut db = vec![T::zero(); *features];
                    for row in dy.data().chunks(*features) {
                        db.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
                    }
                    let mut dx = Tensor::zeros(&full_in);
                    T::gemm(false, false, batch, fan_in, *features, dy.data(), w.data(), T::zero(), dx.data_mut());
                    grads.insert(layer.weight_name(), Tensor::from_vec(w.shape(), dw)?);
                    grads.insert(layer.bias_name(), Tensor::from_vec(&[*features], db)?);
                    dx
                }
                (LayerKind::Flatten | LayerKind::Reshape(_), Cache::None) => dy.reshape(&full_in)?,
                (LayerKind::Concat { .. }, Cache::Concat { left, input }) => {
                    let (dl, dr) = dy.hsplit(*left)?;
                    let acc = &mut input_grads[*input];
                    acc.data_mut().iter_mut().zip(dr.data()).for_each(|(a, &b)| *a = *a + b);
                    dl
                }
                (LayerKind::Act(act), Cache::Output { output }) => {
                    let mut dx = dy;
                    dx.data_mut()
                        .iter_mut()
                        .zip(output.data())
                        .for_each(|(g, &y)| *g = *g * derivative(*act, y));
                    dx
                }
                (LayerKind::PerFeature(acts), Cache::Output { output }) => {
                    let mut dx = dy;
                    for (grow, yrow) in dx.data_mut().chunks_mut(acts.len()).zip(output.data().chunks(acts.len())) {
                        for ((g, &y), act) in grow.iter_mut().zip(yrow).zip(acts) {
                            *g = *g * derivative(*act, y);
                        }
                    }
                    dx
                }
                _ => return Err(mismatch()),
            };
            dy = dx;
        }
        let acc = &mut input_grads[0];
        acc.data_mut().iter_mut().zip(dy.data()).for_each(|(a, &b)| *a = *a + b);

        // Gradients in the same order as the parameters.
        let mut ordered = ParamSet::new();
        for (name, _) in params.iter() {
            let g = grads
                .get(name)
                .cloned()
                .ok_or_else(|| Error::contract(format!("parameter `{name}` is not used by this network")))?;
            ordered.insert(name, g);
        }
        if ordered.len() != grads.len() {
            return Err(Error::contract("parameter set is missing network parameters"));
        }
        Ok(Gradients { params: ordered, inputs: input_grads })
    }
}

fn apply<T: Scalar>(act: Activation, v: T) -> T {
    match act {
        Activation::Identity => v,
        Activation::Relu => v.max(T::zero()),
        Activation::Tanh => v.tanh(),
        Activation::Sigmoid => sigmoid(v),
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Derivative expressed through the activation's output `y`.
fn derivative<T: Scalar>(act: Activation, y: T) -> T {
    match act {
        Activation::Identity => T::one(),
        Activation::Relu => {
            if y > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Activation::Tanh => T::one() - y * y,
        Activation::Sigmoid => y * (T::one() - y),
    }
}
