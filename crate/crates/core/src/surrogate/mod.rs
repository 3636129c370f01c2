//! Feed-forward surrogate with a built-in periodic wrap layer and a
//! specialised reverse-mode pass.
//!
//! The network is a fixed stack `wrap → (Linear → ReLU → Dropout)* → Linear →
//! output activation`. A forward pass records every layer input and
//! pre-activation on a [`ForwardTape`]; one backward sweep over that tape yields
//! either the parameter gradients used for training or the gradient with
//! respect to the raw coordinates, which is the CV Jacobian.

mod checkpoint;

pub use checkpoint::{
    decode as decode_checkpoint, encode as encode_checkpoint, read_checkpoint, write_checkpoint,
    SplitInfo, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cv::{check_dim, CvFunction, CvKind};
use crate::error::{Error, Result};
use crate::geometry::SimBox;

/// Hidden widths used for both CVs.
pub const DEFAULT_HIDDEN: [usize; 4] = [64, 128, 64, 32];
pub const DEFAULT_DROPOUT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    /// `|z|`, with subgradient +1 at zero.
    Absolute,
}

impl OutputActivation {
    /// Output activation the CV calls for: distances are non-negative.
    pub fn for_cv(kind: CvKind) -> Self {
        match kind {
            CvKind::Distance => OutputActivation::Absolute,
            CvKind::Coordination => OutputActivation::Identity,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            OutputActivation::Identity => 0,
            OutputActivation::Absolute => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(OutputActivation::Identity),
            1 => Some(OutputActivation::Absolute),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::Identity => z,
            OutputActivation::Absolute => z.abs(),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            OutputActivation::Identity => 1.0,
            OutputActivation::Absolute => {
                if z >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

/// One affine layer. `weight` is `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }
}

/// Architecture description used to initialise a model.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output: OutputActivation,
    pub dropout: f64,
    pub sim_box: SimBox,
    pub cv_name: String,
}

impl MlpSpec {
    /// The surrogate architecture for one of the built-in CVs.
    pub fn for_cv(kind: CvKind, sim_box: SimBox) -> Self {
        MlpSpec {
            input_dim: kind.input_dim(),
            hidden: DEFAULT_HIDDEN.to_vec(),
            output: OutputActivation::for_cv(kind),
            dropout: DEFAULT_DROPOUT,
            sim_box,
            cv_name: kind.as_str().to_string(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Forward-pass mode. Dropout masks are only drawn in training mode.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

/// Everything the backward sweep needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    version: u64,
    /// Input to each layer (after wrap / ReLU / dropout of the previous one).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
    /// Inverted-dropout scale factors applied after each hidden layer.
    masks: Vec<Option<Array2<f64>>>,
}

impl ForwardTape {
    pub fn len(&self) -> usize {
        self.pre.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pre.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }

    /// Final pre-activation (before the output activation), one per sample.
    pub fn output_pre_activation(&self) -> Vec<f64> {
        self.pre.last().map(|z| z.column(0).to_vec()).unwrap_or_default()
    }
}

/// Parameter gradients, same shapes as [`Mlp::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn tensors(&self) -> Vec<&[f64]> {
        dense_tensors(&self.layers)
    }
}

/// Input Jacobian of a single sample.
#[derive(Debug, Clone, PartialEq)]
pub struct InputJacobian {
    pub grad: Vec<f64>,
    /// Some coordinate sits exactly on a wrap discontinuity; the derivative
    /// there is the right-derivative.
    pub on_wrap_boundary: bool,
}

/// The surrogate network.
#[derive(Debug, Clone)]
pub struct Mlp {
    input_dim: usize,
    layers: Vec<Dense>,
    output: OutputActivation,
    dropout: f64,
    sim_box: SimBox,
    cv_name: String,
    version: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.input_dim == other.input_dim
            && self.layers == other.layers
            && self.output == other.output
            && self.dropout.to_bits() == other.dropout.to_bits()
            && self.sim_box == other.sim_box
            && self.cv_name == other.cv_name
    }
}

impl Mlp {
    /// He-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn init(spec: &MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![spec.input_dim];
        widths.extend_from_slice(&spec.hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let weight =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
                Dense {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Mlp {
            input_dim: spec.input_dim,
            layers,
            output: spec.output,
            dropout: spec.dropout,
            sim_box: spec.sim_box,
            cv_name: spec.cv_name.clone(),
            version: 0,
        })
    }

    /// Assemble a model from explicit layers. Shapes must chain to a scalar.
    pub fn from_layers(
        layers: Vec<Dense>,
        output: OutputActivation,
        dropout: f64,
        sim_box: SimBox,
        cv_name: impl Into<String>,
    ) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidArgument("model needs at least one layer".into()))?;
        let input_dim = first.fan_in();
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::Dimension {
                    expected: pair[0].fan_out(),
                    got: pair[1].fan_in(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.fan_out() {
                return Err(Error::Dimension {
                    expected: l.fan_out(),
                    got: l.bias.len(),
                });
            }
        }
        let last = layers.last().unwrap().fan_out();
        if last != 1 {
            return Err(Error::Dimension {
                expected: 1,
                got: last,
            });
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidArgument(format!("dropout rate {dropout}")));
        }
        Ok(Mlp {
            input_dim,
            layers,
            output,
            dropout,
            sim_box,
            cv_name: cv_name.into(),
            version: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn sim_box(&self) -> SimBox {
        self.sim_box
    }

    pub fn cv_name(&self) -> &str {
        &self.cv_name
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Counter bumped on every parameter mutation; tapes record it.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Parameter tensors in a fixed order: per layer, weight then bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        dense_tensors(&self.layers)
    }

    /// Mutable parameter tensors; invalidates outstanding tapes.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    /// Human-readable path of tensor `i` in [`Mlp::tensors`] order.
    pub fn tensor_name(i: usize) -> String {
        let kind = if i.is_multiple_of(2) { "weight" } else { "bias" };
        format!("layers[{}].{kind}", i / 2)
    }

    fn wrap_rows(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                got: x.ncols(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("surrogate input".into()));
        }
        Ok(x.mapv(|v| self.sim_box.wrap(v)))
    }

    /// Batched forward pass over the rows of `x` (shape `(n, D)`).
    pub fn forward_batch(&self, x: ArrayView2<f64>, mode: Mode<'_>) -> Result<(Vec<f64>, ForwardTape)> {
        let mut h = self.wrap_rows(x)?;
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut masks = Vec::with_capacity(n_layers);
        let mut rng = match mode {
            Mode::Train(rng) if self.dropout > 0.0 => Some(rng),
            _ => None,
        };
        let keep = 1.0 - self.dropout;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight.t());
            z += &layer.bias;
            let next = if i + 1 < n_layers {
                let mut a = z.mapv(|v| if v > 0.0 { v } else { 0.0 });
                let mask = rng.as_mut().map(|rng| {
                    Array2::from_shape_fn(a.raw_dim(), |_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                });
                if let Some(m) = &mask {
                    a *= m;
                }
                masks.push(mask);
                a
            } else {
                masks.push(None);
                Array2::zeros((0, 0))
            };
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(z);
        }
        let out = pre
            .last()
            .unwrap()
            .column(0)
            .iter()
            .map(|&z| self.output.apply(z))
            .collect();
        Ok((
            out,
            ForwardTape {
                version: self.version,
                inputs,
                pre,
                masks,
            },
        ))
    }

    /// Forward pass for a single input vector.
    pub fn forward(&self, x: &[f64], mode: Mode<'_>) -> Result<(f64, ForwardTape)> {
        check_dim(self.input_dim, x)?;
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        let (y, tape) = self.forward_batch(view, mode)?;
        Ok((y[0], tape))
    }

    /// Evaluation-mode prediction.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x, Mode::Eval)?.0)
    }

    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.forward_batch(x, Mode::Eval)?.0)
    }

    /// Reverse sweep. `upstream[i]` is dL/dŷ for sample `i`.
    fn backward(
        &self,
        tape: &ForwardTape,
        upstream: &[f64],
        want_params: bool,
        want_input: bool,
    ) -> Result<(Option<Gradients>, Option<Array2<f64>>)> {
        if tape.version != self.version {
            return Err(Error::StaleTape {
                tape: tape.version,
                model: self.version,
            });
        }
        if tape.len() != self.layers.len() {
            return Err(Error::Dimension {
                expected: self.layers.len(),
                got: tape.len(),
            });
        }
        let n = tape.batch_size();
        if upstream.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: upstream.len(),
            });
        }
        let last = self.layers.len() - 1;
        let z_out = &tape.pre[last];
        let mut dz = Array2::from_shape_fn((n, 1), |(i, _)| {
            upstream[i] * self.output.derivative(z_out[[i, 0]])
        });
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut d_input = None;
        for l in (0..=last).rev() {
            let layer = &self.layers[l];
            if want_params {
                grads.push(Dense {
                    weight: dz.t().dot(&tape.inputs[l]),
                    bias: dz.sum_axis(Axis(0)),
                });
            }
            if l == 0 && !want_input {
                break;
            }
            let mut dh = dz.dot(&layer.weight);
            if l == 0 {
                // wrap layer is the identity almost everywhere
                d_input = Some(dh);
                break;
            }
            if let Some(mask) = &tape.masks[l - 1] {
                dh *= mask;
            }
            let z_prev = &tape.pre[l - 1];
            dh.zip_mut_with(z_prev, |g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
            dz = dh;
        }
        let grads = want_params.then(|| {
            grads.reverse();
            Gradients { layers: grads }
        });
        Ok((grads, d_input))
    }

    /// Parameter gradients of `Σ_i upstream[i] · ŷ_i` for the batch on `tape`.
    pub fn backward_weights(&self, tape: &ForwardTape, upstream: &[f64]) -> Result<Gradients> {
        Ok(self.backward(tape, upstream, true, false)?.0.unwrap())
    }

    /// Gradient of `ŷ` with respect to the raw (unwrapped) input, with
    /// dropout disabled.
    pub fn input_jacobian(&self, x: &[f64]) -> Result<InputJacobian> {
        let (_, tape) = self.forward(x, Mode::Eval)?;
        let (_, d) = self.backward(&tape, &[1.0], false, true)?;
        Ok(InputJacobian {
            grad: d.unwrap().row(0).to_vec(),
            on_wrap_boundary: x.iter().any(|&v| self.sim_box.on_wrap_boundary(v)),
        })
    }

    /// Predictions and input Jacobians for every row of `x`.
    pub fn value_and_jacobian_batch(&self, x: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        let (y, tape) = self.forward_batch(x, Mode::Eval)?;
        let ones = vec![1.0; y.len()];
        let (_, d) = self.backward(&tape, &ones, false, true)?;
        Ok((y, d.unwrap()))
    }

    /// Sign pattern of every ReLU pre-activation plus the output
    /// pre-activation. Two inputs with the same pattern (and no wrap crossing
    /// between them) lie on the same affine piece of the network.
    pub fn activation_pattern(&self, x: &[f64]) -> Result<Vec<bool>> {
        let (_, tape) = self.forward(x, Mode::Eval)?;
        let last = tape.pre.len() - 1;
        let mut pattern: Vec<bool> = tape.pre[..last]
            .iter()
            .flat_map(|z| z.iter().map(|&v| v > 0.0).collect::<Vec<_>>())
            .collect();
        pattern.push(tape.pre[last][[0, 0]] >= 0.0);
        Ok(pattern)
    }
}

fn dense_tensors(layers: &[Dense]) -> Vec<&[f64]> {
    layers
        .iter()
        .flat_map(|l| {
            [
                l.weight.as_slice().expect("standard layout"),
                l.bias.as_slice().expect("standard layout"),
            ]
        })
        .collect()
}

fn rows_to_array(rows: &[&[f64]], dim: usize) -> Result<Array2<f64>> {
    let mut flat = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        check_dim(dim, r)?;
        flat.extend_from_slice(r);
    }
    Ok(Array2::from_shape_vec((rows.len(), dim), flat).expect("shape checked"))
}

impl CvFunction for Mlp {
    fn name(&self) -> &str {
        &self.cv_name
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn value(&self, coords: &[f64]) -> Result<f64> {
        self.predict(coords)
    }

    fn jacobian(&self, coords: &[f64]) -> Result<Vec<f64>> {
        Ok(self.input_jacobian(coords)?.grad)
    }

    fn values(&self, rows: &[&[f64]]) -> Result<Vec<f64>> {
        let x = rows_to_array(rows, self.input_dim)?;
        self.predict_batch(x.view())
    }

    fn jacobians(&self, rows: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let x = rows_to_array(rows, self.input_dim)?;
        let (_, j) = self.value_and_jacobian_batch(x.view())?;
        Ok(j.rows().into_iter().map(|r| r.to_vec()).collect())
    }
}

#[cfg(test)]
mod tests;
