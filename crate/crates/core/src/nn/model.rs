use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, LayerSpec};
use super::Tensor4;
use crate::error::{Error, Result};
use crate::rng;

/// An ordered layer list plus the seed its parameters were initialised from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
}

impl ModelSpec {
    /// Per-sample output shape for a per-sample input shape, checking every layer.
    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.layers
            .iter()
            .enumerate()
            .try_fold(input, |s, (i, l)| l.output_shape(i, s))
    }
}

/// Gradients laid out like [`Model::params`].
pub type Grads = Vec<Vec<f64>>;

/// Layer inputs recorded by a forward pass, consumed by [`Model::backward_tape`].
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Tensor4>,
    output: Tensor4,
}

impl Tape {
    pub fn output(&self) -> &Tensor4 {
        &self.output
    }

    pub fn into_output(self) -> Tensor4 {
        self.output
    }
}

/// A feed-forward network over the fixed layer menu.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<Vec<f64>>,
    /// Index into `params` of each layer's weight, if it has one.
    offsets: Vec<Option<usize>>,
    grads: Grads,
    tape: Option<Tape>,
}

impl Model {
    /// Builds a model with Kaiming-uniform weights (bound `sqrt(6 / fan_in)`) and zero biases.
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let mut params = Vec::new();
        let mut offsets = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            match layer.param_shapes() {
                Some((nw, nb, fan_in)) => {
                    if nw == 0 || nb == 0 {
                        return Err(Error::Param(format!("layer {i} ({}) has no units", layer.name())));
                    }
                    let bound = (6.0 / fan_in as f64).sqrt();
                    let mut r = rng::stream(spec.seed, &[i as u64]);
                    offsets.push(Some(params.len()));
                    params.push((0..nw).map(|_| r.random_range(-bound..bound)).collect());
                    params.push(vec![0.0; nb]);
                }
                None => offsets.push(None),
            }
        }
        let grads = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Ok(Model {
            spec,
            params,
            offsets,
            grads,
            tape: None,
        })
    }

    /// Rebuilds a model from a spec and stored parameters.
    pub fn from_params(spec: ModelSpec, params: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Model::new(spec)?;
        if params.len() != m.params.len()
            || params.iter().zip(&m.params).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::CorruptCheckpoint(
                "parameter arrays do not match the model spec".into(),
            ));
        }
        if params.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::CorruptCheckpoint("non-finite parameter".into()));
        }
        m.params = params;
        Ok(m)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    /// Zeros the weight and bias of layer `index`.
    pub fn zero_layer(&mut self, index: usize) -> Result<()> {
        let o = self
            .offsets
            .get(index)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Param(format!("layer {index} has no parameters")))?;
        self.params[o].fill(0.0);
        self.params[o + 1].fill(0.0);
        Ok(())
    }

    pub fn zero_grads(&self) -> Grads {
        self.params.iter().map(|p| vec![0.0; p.len()]).collect()
    }

    fn layer_params(&self, i: usize) -> &[Vec<f64>] {
        match self.offsets[i] {
            Some(o) => &self.params[o..o + 2],
            None => &[],
        }
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let [_, c, h, w] = x.shape();
        self.spec.output_shape([c, h, w]).map(|_| ())
    }

    /// Pure forward pass returning the tape needed for backpropagation.
    pub fn forward_tape(&self, x: &Tensor4) -> Result<Tape> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.spec.layers.len());
        let mut cur = x.clone();
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let next = layers::forward(layer, self.layer_params(i), &cur)?;
            inputs.push(cur);
            cur = next;
        }
        Ok(Tape {
            inputs,
            output: cur,
        })
    }

    /// Inference without recording a tape.
    pub fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for (i, layer) in self.spec.layers.iter().enumerate() {
            cur = layers::forward(layer, self.layer_params(i), &cur)?;
        }
        Ok(cur)
    }

    /// Pure backward pass: adds parameter gradients into `grads` and returns the input gradient.
    pub fn backward_tape(&self, tape: &Tape, dy: &Tensor4, grads: &mut Grads) -> Result<Tensor4> {
        if dy.shape() != tape.output.shape() {
            return Err(Error::Dimension(format!(
                "upstream gradient {:?} for output {:?}",
                dy.shape(),
                tape.output.shape()
            )));
        }
        let mut g = dy.clone();
        for (i, layer) in self.spec.layers.iter().enumerate().rev() {
            let gslot: &mut [Vec<f64>] = match self.offsets[i] {
                Some(o) => &mut grads[o..o + 2],
                None => &mut [],
            };
            g = layers::backward(layer, self.layer_params(i), gslot, &tape.inputs[i], &g)?;
        }
        Ok(g)
    }

    /// Stateful forward pass; the tape is kept for [`Model::backward`].
    pub fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let tape = self.forward_tape(x)?;
        let out = tape.output.clone();
        self.tape = Some(tape);
        Ok(out)
    }

    /// Stateful backward pass accumulating into [`Model::grads`].
    pub fn backward(&mut self, dy: &Tensor4) -> Result<Tensor4> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        let mut grads = std::mem::take(&mut self.grads);
        let r = self.backward_tape(&tape, dy, &mut grads);
        self.grads = grads;
        self.tape = Some(tape);
        r
    }

    pub fn grads(&self) -> &Grads {
        &self.grads
    }

    pub fn clear_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }
}

/// Adds `src` into `dst` element-wise.
pub fn add_grads(dst: &mut Grads, src: &Grads) {
    for (d, s) in dst.iter_mut().zip(src) {
        for (a, b) in d.iter_mut().zip(s) {
            *a += b;
        }
    }
}

pub fn scale_grads(g: &mut Grads, k: f64) {
    g.iter_mut().flatten().for_each(|v| *v *= k);
}
