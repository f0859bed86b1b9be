//! Desk-scale classifiers: MLP, small CNN, 1D conv net, LSTM and echo-state
//! network. Every model maps a batch to `[batch, classes]` pre-softmax logits
//! and is differentiable with respect to both its parameters and its input.

mod checkpoint;
mod reservoir;

pub use checkpoint::{decode_arrays, encode_arrays, read_arrays, write_arrays, NamedArray};
pub use reservoir::{esn_step, spectral_radius};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::InputKind;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Mlp,
    Cnn2d,
    Conv1d,
    Lstm,
    Esn,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mlp => "mlp",
            Self::Cnn2d => "cnn2d",
            Self::Conv1d => "conv1d",
            Self::Lstm => "lstm",
            Self::Esn => "esn",
        }
    }

    pub fn is_recurrent(self) -> bool {
        matches!(self, Self::Lstm | Self::Esn)
    }
}

/// Architecture plus sizes. `widths` is read per architecture:
///
/// | architecture | widths                                    |
/// |--------------|-------------------------------------------|
/// | `mlp`        | hidden layer sizes (may be empty)         |
/// | `cnn2d`      | `[conv1 channels, conv2 channels, dense]` |
/// | `conv1d`     | `[channels]`                              |
/// | `lstm`       | `[hidden]`                                |
/// | `esn`        | `[reservoir units]`                       |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub widths: Vec<usize>,
    pub classes: usize,
    #[serde(default)]
    pub seed: u64,
    /// Convolution window (both conv architectures).
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_leak")]
    pub leak: f64,
    #[serde(default = "default_radius")]
    pub spectral_radius: f64,
    #[serde(default = "default_input_scaling")]
    pub input_scaling: f64,
}

fn default_kernel() -> usize {
    3
}
fn default_leak() -> f64 {
    0.5
}
fn default_radius() -> f64 {
    0.9
}
fn default_input_scaling() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn new(architecture: Architecture, widths: Vec<usize>, classes: usize, seed: u64) -> Self {
        Self {
            architecture,
            widths,
            classes,
            seed,
            kernel: default_kernel(),
            leak: default_leak(),
            spectral_radius: default_radius(),
            input_scaling: default_input_scaling(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    input: InputKind,
    params: Vec<Parameter>,
}

/// Leaves registered on a tape for one forward pass, in parameter order.
pub type ParamVars = Vec<Var>;

const POOL: usize = 2;

impl Model {
    pub fn init(spec: &ModelSpec, input: InputKind) -> Result<Self> {
        if spec.classes == 0 || spec.widths.contains(&0) {
            return Err(Error::invalid(format!("zero-width layer in {:?}", spec.widths)));
        }
        let want = match spec.architecture {
            Architecture::Mlp => None,
            Architecture::Cnn2d => Some(3),
            Architecture::Conv1d | Architecture::Lstm | Architecture::Esn => Some(1),
        };
        if let Some(n) = want {
            if spec.widths.len() != n {
                return Err(Error::invalid(format!(
                    "{} expects {n} widths, got {:?}",
                    spec.architecture.name(),
                    spec.widths
                )));
            }
        }
        let mut rng = rng::seeded(spec.seed);
        let mut params = Vec::new();
        let dense = |params: &mut Vec<Parameter>, name: &str, fan_in: usize, fan_out: usize, rng: &mut rng::Rng| {
            params.push(uniform(&format!("{name}.weight"), vec![fan_in, fan_out], fan_in, rng));
            params.push(uniform(&format!("{name}.bias"), vec![fan_out], fan_in, rng));
        };
        let c = spec.classes;
        match (spec.architecture, input) {
            (Architecture::Mlp, _) => {
                let mut fan_in = input.features();
                for (i, &w) in spec.widths.iter().enumerate() {
                    dense(&mut params, &format!("fc{i}"), fan_in, w, &mut rng);
                    fan_in = w;
                }
                dense(&mut params, "head", fan_in, c, &mut rng);
            }
            (Architecture::Cnn2d, InputKind::Image { channels, height, width }) => {
                let (c1, c2, d) = (spec.widths[0], spec.widths[1], spec.widths[2]);
                let k = spec.kernel;
                let (h, w) = cnn_flat_extent(height, width, k)
                    .ok_or_else(|| Error::invalid(format!("{height}x{width} image too small for cnn2d with kernel {k}")))?;
                let conv = |params: &mut Vec<Parameter>, name: &str, cin: usize, cout: usize, rng: &mut rng::Rng| {
                    let fan = cin * k * k;
                    params.push(uniform(&format!("{name}.weight"), vec![cout, cin, k, k], fan, rng));
                    params.push(uniform(&format!("{name}.bias"), vec![cout], fan, rng));
                };
                conv(&mut params, "conv1", channels, c1, &mut rng);
                conv(&mut params, "conv2", c1, c2, &mut rng);
                dense(&mut params, "fc", c2 * h * w, d, &mut rng);
                dense(&mut params, "head", d, c, &mut rng);
            }
            (Architecture::Conv1d, InputKind::Sequence { steps, features }) => {
                let (ch, k) = (spec.widths[0], spec.kernel);
                if k == 0 || steps < k {
                    return Err(Error::invalid(format!("sequence of {steps} steps too short for kernel {k}")));
                }
                params.push(uniform("conv.weight", vec![ch, k * features], k * features, &mut rng));
                params.push(uniform("conv.bias", vec![ch], k * features, &mut rng));
                dense(&mut params, "head", ch, c, &mut rng);
            }
            (Architecture::Lstm, InputKind::Sequence { features, .. }) => {
                let h = spec.widths[0];
                params.push(uniform("lstm.w_input", vec![features, 4 * h], h, &mut rng));
                params.push(uniform("lstm.w_hidden", vec![h, 4 * h], h, &mut rng));
                let mut b = uniform("lstm.bias", vec![4 * h], h, &mut rng);
                // forget gate starts open
                b.value.data_mut()[h..2 * h].iter_mut().for_each(|v| *v += 1.0);
                params.push(b);
                dense(&mut params, "head", h, c, &mut rng);
            }
            (Architecture::Esn, InputKind::Sequence { features, .. }) => {
                let n = spec.widths[0];
                if !(spec.leak > 0.0 && spec.leak <= 1.0) {
                    return Err(Error::invalid(format!("leak {} outside (0, 1]", spec.leak)));
                }
                let s = spec.input_scaling;
                let w_in: Vec<f64> = (0..features * n).map(|_| rng.random_range(-s..=s)).collect();
                let raw: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let mut w_res = Tensor::new(vec![n, n], raw)?;
                let rho = spectral_radius(&w_res)?;
                if rho > 0.0 {
                    let k = spec.spectral_radius / rho;
                    w_res.data_mut().iter_mut().for_each(|v| *v *= k);
                }
                params.push(frozen("esn.w_input", Tensor::new(vec![features, n], w_in)?));
                params.push(frozen("esn.w_reservoir", w_res));
                dense(&mut params, "head", n, c, &mut rng);
            }
            (arch, kind) => {
                return Err(Error::invalid(format!("{} cannot consume {kind:?} inputs", arch.name())));
            }
        }
        Ok(Self {
            spec: spec.clone(),
            input,
            params,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_kind(&self) -> InputKind {
        self.input
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn trainable_parameters(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter().filter(|p| p.trainable)
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable_parameters().map(|p| p.value.len()).sum()
    }

    /// Digest of every parameter, in order.
    pub fn checksum(&self) -> u64 {
        self.params
            .iter()
            .fold(0u64, |h, p| h.rotate_left(7) ^ p.value.checksum())
    }

    /// Digest of the frozen parameters only (the ESN reservoir).
    pub fn frozen_checksum(&self) -> u64 {
        self.params
            .iter()
            .filter(|p| !p.trainable)
            .fold(0u64, |h, p| h.rotate_left(7) ^ p.value.checksum())
    }

    /// Registers the parameters as tape leaves. Trainable ones require a
    /// gradient only when `param_grads` is set.
    pub fn register(&self, tape: &mut Tape, param_grads: bool) -> ParamVars {
        self.params
            .iter()
            .map(|p| tape.var(p.value.clone(), param_grads && p.trainable))
            .collect()
    }

    fn check_batch(&self, shape: &[usize]) -> Result<()> {
        let want = self.input.example_shape();
        if shape.len() != want.len() + 1 || shape[1..] != want[..] {
            let mut expected = vec![0];
            expected.extend(want);
            return Err(Error::Shape {
                op: "model input",
                lhs: shape.to_vec(),
                rhs: expected,
            });
        }
        Ok(())
    }

    /// Records the forward pass of `input` (`[batch, ...example shape]`) on
    /// `tape` and returns the `[batch, classes]` logits.
    pub fn forward(&self, tape: &mut Tape, input: Var, params: &[Var]) -> Result<Var> {
        self.check_batch(tape.value(input).shape())?;
        let batch = tape.value(input).shape()[0];
        match self.spec.architecture {
            Architecture::Mlp => {
                let mut h = tape.reshape(input, vec![batch, self.input.features()])?;
                let layers = params.len() / 2;
                for (i, pair) in params.chunks(2).enumerate() {
                    h = tape.matmul(h, pair[0])?;
                    h = tape.add_bias(h, pair[1])?;
                    if i + 1 < layers {
                        h = tape.relu(h);
                    }
                }
                Ok(h)
            }
            Architecture::Cnn2d => {
                let mut h = tape.conv2d(input, params[0], params[1])?;
                h = tape.relu(h);
                h = tape.avgpool2d(h, POOL, POOL)?;
                h = tape.conv2d(h, params[2], params[3])?;
                h = tape.relu(h);
                h = tape.avgpool2d(h, POOL, POOL)?;
                let flat = tape.value(h).len() / batch;
                h = tape.reshape(h, vec![batch, flat])?;
                h = tape.matmul(h, params[4])?;
                h = tape.add_bias(h, params[5])?;
                h = tape.relu(h);
                h = tape.matmul(h, params[6])?;
                tape.add_bias(h, params[7])
            }
            Architecture::Conv1d => {
                let mut h = tape.conv1d(input, params[0], params[1], self.spec.kernel)?;
                h = tape.relu(h);
                h = tape.mean_time(h)?;
                h = tape.matmul(h, params[2])?;
                tape.add_bias(h, params[3])
            }
            Architecture::Lstm => {
                let hsz = self.spec.widths[0];
                let steps = tape.value(input).shape()[1];
                let mut hidden = tape.constant(Tensor::zeros(vec![batch, hsz]));
                let mut cell = tape.constant(Tensor::zeros(vec![batch, hsz]));
                for t in 0..steps {
                    let x = tape.time_step(input, t)?;
                    let zx = tape.matmul(x, params[0])?;
                    let zh = tape.matmul(hidden, params[1])?;
                    let z = tape.add(zx, zh)?;
                    let z = tape.add_bias(z, params[2])?;
                    let i = tape.column_slice(z, 0, hsz)?;
                    let f = tape.column_slice(z, hsz, hsz)?;
                    let g = tape.column_slice(z, 2 * hsz, hsz)?;
                    let o = tape.column_slice(z, 3 * hsz, hsz)?;
                    let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
                    let keep = tape.mul(f, cell)?;
                    let write = tape.mul(i, g)?;
                    cell = tape.add(keep, write)?;
                    let squashed = tape.tanh(cell);
                    hidden = tape.mul(o, squashed)?;
                }
                let out = tape.matmul(hidden, params[3])?;
                tape.add_bias(out, params[4])
            }
            Architecture::Esn => {
                let n = self.spec.widths[0];
                let leak = self.spec.leak;
                let steps = tape.value(input).shape()[1];
                let mut state = tape.constant(Tensor::zeros(vec![batch, n]));
                for t in 0..steps {
                    let x = tape.time_step(input, t)?;
                    let zx = tape.matmul(x, params[0])?;
                    let zs = tape.matmul(state, params[1])?;
                    let z = tape.add(zx, zs)?;
                    let act = tape.tanh(z);
                    state = if leak == 1.0 {
                        act
                    } else {
                        let kept = tape.scale(state, 1.0 - leak);
                        let fresh = tape.scale(act, leak);
                        tape.add(kept, fresh)?
                    };
                }
                let out = tape.matmul(state, params[2])?;
                tape.add_bias(out, params[3])
            }
        }
    }

    /// Logits for a batch without recording gradients anywhere.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.register(&mut tape, false);
        let x = tape.constant(batch.clone());
        let out = self.forward(&mut tape, x, &params)?;
        Ok(tape.value(out).clone())
    }

    /// Fraction of `inputs` whose arg-max logit equals the label.
    pub fn accuracy(&self, inputs: &Tensor, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Ok(0.0);
        }
        const CHUNK: usize = 256;
        let mut correct = 0usize;
        for (start, ys) in (0..).step_by(CHUNK).zip(labels.chunks(CHUNK)) {
            let idx: Vec<usize> = (start..start + ys.len()).collect();
            let logits = self.logits(&inputs.select_first(&idx)?)?;
            for (row, &y) in logits.data().chunks(self.classes()).zip(ys) {
                correct += usize::from(argmax(row) == y);
            }
        }
        Ok(correct as f64 / labels.len() as f64)
    }

    /// Final reservoir states for a batch, computed outside any tape.
    pub fn reservoir_states(&self, batch: &Tensor) -> Result<Tensor> {
        if self.spec.architecture != Architecture::Esn {
            return Err(Error::invalid("reservoir states exist only for esn models"));
        }
        self.check_batch(batch.shape())?;
        let (n, steps, f) = (batch.shape()[0], batch.shape()[1], batch.shape()[2]);
        let units = self.spec.widths[0];
        let mut out = Vec::with_capacity(n * units);
        for s in 0..n {
            let mut state = vec![0.0; units];
            for t in 0..steps {
                let off = (s * steps + t) * f;
                state = esn_step(
                    &self.params[0].value,
                    &self.params[1].value,
                    self.spec.leak,
                    &state,
                    &batch.data()[off..off + f],
                )?;
            }
            out.extend(state);
        }
        Tensor::new(vec![n, units], out)
    }

    pub fn to_arrays(&self) -> Vec<NamedArray> {
        self.params
            .iter()
            .map(|p| NamedArray {
                name: p.name.clone(),
                value: p.value.clone(),
            })
            .collect()
    }

    /// Replaces parameter values from named arrays; names and shapes must
    /// match this model exactly.
    pub fn load_arrays(&mut self, arrays: &[NamedArray]) -> Result<()> {
        if arrays.len() != self.params.len() {
            return Err(Error::Format {
                what: "checkpoint".into(),
                reason: format!("{} arrays for {} parameters", arrays.len(), self.params.len()),
            });
        }
        for (p, a) in self.params.iter_mut().zip(arrays) {
            if p.name != a.name || p.value.shape() != a.value.shape() {
                return Err(Error::Format {
                    what: "checkpoint".into(),
                    reason: format!("expected {} {:?}, found {} {:?}", p.name, p.value.shape(), a.name, a.value.shape()),
                });
            }
            p.value = a.value.clone();
        }
        Ok(())
    }
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

fn cnn_flat_extent(h: usize, w: usize, k: usize) -> Option<(usize, usize)> {
    let stage = |x: usize| x.checked_sub(k - 1).filter(|&v| v >= POOL).map(|v| v / POOL);
    Some((stage(stage(h)?)?, stage(stage(w)?)?)).filter(|&(a, b)| a > 0 && b > 0 && k > 0)
}

fn uniform(name: &str, shape: Vec<usize>, fan_in: usize, rng: &mut rng::Rng) -> Parameter {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Parameter {
        name: name.to_string(),
        value: Tensor::new(shape, data).expect("shape matches data"),
        trainable: true,
    }
}

fn frozen(name: &str, value: Tensor) -> Parameter {
    Parameter {
        name: name.to_string(),
        value,
        trainable: false,
    }
}
