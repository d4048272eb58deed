//! Convolutional auto-encoder.
//!
//! Layer plan for the default config (`[16, 32, 64]`, kernel 3):
//!
//! ```text
//! 1x28x28 --conv s2 p1--> 16x14x14 --conv s2 p1--> 32x7x7 --conv s2 p1--> 64x4x4
//!   -> flatten 1024 -> dense latent_dim -> dense 1024 -> 64x4x4
//!   --convT s2 p1 op0--> 32x7x7 --convT s2 p1 op1--> 16x14x14 --convT s2 p1 op1--> 1x28x28 -> sigmoid
//! ```
//!
//! ReLU follows every hidden layer except the latent code, which is linear.
//! Each transposed convolution's output padding is chosen so the decoder
//! lands exactly on the encoder's spatial extents.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::SIDE;
use crate::error::{Error, Result};
use crate::rng::{run_rng, RunRng};
use crate::tensor::{Activation, ConvParams, Tensor};

pub const CHECKPOINT_FORMAT: &str = "lmse-cae";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaeConfig {
    #[serde(default = "default_channels")]
    pub encoder_channels: Vec<usize>,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    pub latent_dim: usize,
    #[serde(default = "default_output")]
    pub output_activation: Activation,
}

fn default_channels() -> Vec<usize> {
    vec![16, 32, 64]
}

fn default_kernel() -> usize {
    3
}

fn default_output() -> Activation {
    Activation::Sigmoid
}

impl CaeConfig {
    pub fn new(latent_dim: usize) -> Self {
        CaeConfig {
            encoder_channels: default_channels(),
            kernel: default_kernel(),
            latent_dim,
            output_activation: default_output(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim < 1 {
            return Err(Error::Config("latent_dim must be >= 1".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel must be odd, got {}",
                self.kernel
            )));
        }
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return Err(Error::Config(
                "encoder channels must be non-empty and positive".into(),
            ));
        }
        self.plan().map(|_| ())
    }

    /// Spatial extents along the encoder (`[28, 14, 7, 4]` by default) and the
    /// transposed-conv output paddings that invert each step.
    fn plan(&self) -> Result<LayerPlan> {
        let pad = self.kernel / 2;
        let mut extents = vec![SIDE];
        for _ in &self.encoder_channels {
            let s = *extents.last().unwrap();
            let next = (s + 2 * pad)
                .checked_sub(self.kernel)
                .map(|d| d / STRIDE + 1)
                .filter(|&n| n >= 1)
                .ok_or_else(|| {
                    Error::Config(format!("encoder collapses below 1 pixel at extent {s}"))
                })?;
            extents.push(next);
        }
        let output_padding = extents
            .windows(2)
            .map(|w| {
                let (big, small) = (w[0], w[1]);
                let reached = (small - 1) * STRIDE + self.kernel - 2 * pad;
                big.checked_sub(reached)
                    .filter(|&op| op < STRIDE)
                    .ok_or_else(|| Error::Config(format!("decoder cannot invert {big} -> {small}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LayerPlan {
            pad,
            extents,
            output_padding,
        })
    }

    fn bottleneck_in(&self, plan: &LayerPlan) -> usize {
        let s = *plan.extents.last().unwrap();
        self.encoder_channels.last().unwrap() * s * s
    }

    /// Named parameter shapes in construction order.
    pub fn parameter_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let plan = self.plan()?;
        let k = self.kernel;
        let mut shapes = Vec::new();
        let mut in_ch = 1;
        for (i, &c) in self.encoder_channels.iter().enumerate() {
            shapes.push((format!("enc{i}.weight"), vec![c, in_ch, k, k]));
            shapes.push((format!("enc{i}.bias"), vec![c]));
            in_ch = c;
        }
        let flat = self.bottleneck_in(&plan);
        shapes.push(("latent.weight".into(), vec![flat, self.latent_dim]));
        shapes.push(("latent.bias".into(), vec![self.latent_dim]));
        shapes.push(("expand.weight".into(), vec![self.latent_dim, flat]));
        shapes.push(("expand.bias".into(), vec![flat]));
        let n = self.encoder_channels.len();
        for i in (0..n).rev() {
            let from = self.encoder_channels[i];
            let to = if i == 0 {
                1
            } else {
                self.encoder_channels[i - 1]
            };
            shapes.push((format!("dec{i}.weight"), vec![from, to, k, k]));
            shapes.push((format!("dec{i}.bias"), vec![to]));
        }
        Ok(shapes)
    }

    pub fn parameter_count(&self) -> Result<usize> {
        Ok(self
            .parameter_shapes()?
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum())
    }
}

const STRIDE: usize = 2;

struct LayerPlan {
    pad: usize,
    extents: Vec<usize>,
    output_padding: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct CaeModel {
    config: CaeConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    pad: usize,
    output_padding: Vec<usize>,
    bottleneck_shape: [usize; 3],
}

fn fan_in(name: &str, shape: &[usize]) -> usize {
    if name.ends_with(".weight") && shape.len() == 4 {
        // conv [out, in, k, k] and conv-transpose [in, out, k, k] alike:
        // input channels times kernel area
        let in_ch = if name.starts_with("dec") {
            shape[0]
        } else {
            shape[1]
        };
        in_ch * shape[2] * shape[3]
    } else {
        shape[0]
    }
}

impl CaeModel {
    fn assemble(config: CaeConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let plan = config.plan()?;
        let s = *plan.extents.last().unwrap();
        let c = *config.encoder_channels.last().unwrap();
        let (names, params) = named.into_iter().unzip();
        Ok(CaeModel {
            config,
            names,
            params,
            pad: plan.pad,
            output_padding: plan.output_padding,
            bottleneck_shape: [c, s, s],
        })
    }

    /// Kaiming-uniform weights (`U(-b, b)`, `b = sqrt(6 / fan_in)`) and zero
    /// biases, drawn in layer order from the given stream.
    pub fn build_with_rng(config: &CaeConfig, rng: &mut RunRng) -> Result<Self> {
        config.validate()?;
        let mut named = Vec::new();
        for (name, shape) in config.parameter_shapes()? {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".bias") {
                vec![0.0; n]
            } else {
                let bound = (6.0 / fan_in(&name, &shape) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            };
            named.push((name, Tensor::param(shape, data)?));
        }
        Self::assemble(config.clone(), named)
    }

    pub fn build(config: &CaeConfig, seed: u64) -> Result<Self> {
        Self::build_with_rng(config, &mut run_rng(seed))
    }

    pub fn config(&self) -> &CaeConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    /// Reconstruct a `[n, 1, 28, 28]` batch.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match x.shape() {
            [_, 1, SIDE, SIDE] => {}
            other => {
                return Err(Error::Dimension(format!(
                    "expected input [n, 1, {SIDE}, {SIDE}], got {other:?}"
                )))
            }
        }
        let n = x.shape()[0];
        let layers = self.config.encoder_channels.len();
        let mut p = self.params.iter();
        let mut next = || p.next().expect("parameter list matches plan");
        let conv = ConvParams::new(STRIDE, self.pad);

        let mut h = x.clone();
        for _ in 0..layers {
            let (w, b) = (next(), next());
            h = h.conv2d(w, conv)?.add_bias(b)?.relu();
        }
        let flat: usize = self.bottleneck_shape.iter().product();
        h = h.reshape(vec![n, flat])?;
        let (w, b) = (next(), next());
        h = h.matmul(w)?.add_bias(b)?;
        let (w, b) = (next(), next());
        h = h.matmul(w)?.add_bias(b)?.relu();
        let [c, s, _] = self.bottleneck_shape;
        h = h.reshape(vec![n, c, s, s])?;
        for i in (0..layers).rev() {
            let (w, b) = (next(), next());
            let params = conv.with_output_padding(self.output_padding[i]);
            h = h.conv2d_transpose(w, params)?.add_bias(b)?;
            h = if i == 0 {
                h.activation(self.config.output_activation)
            } else {
                h.relu()
            };
        }
        Ok(h)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: self
                .named_params()
                .map(|(name, t)| NamedTensor {
                    name: name.into(),
                    shape: t.shape().to_vec(),
                    data: t.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{} (want {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                ck.format, ck.version
            )));
        }
        ck.config.validate()?;
        let expected = ck.config.parameter_shapes()?;
        if expected.len() != ck.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, config needs {}",
                ck.params.len(),
                expected.len()
            )));
        }
        let mut named = Vec::new();
        for ((name, shape), t) in expected.into_iter().zip(ck.params) {
            if t.name != name || t.shape != shape {
                return Err(Error::Config(format!(
                    "checkpoint tensor {} {:?} does not match expected {name} {shape:?}",
                    t.name, t.shape
                )));
            }
            named.push((name, Tensor::param(shape, t.data)?));
        }
        Self::assemble(ck.config, named)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), &self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        Self::from_checkpoint(ck)
    }
}

/// Versioned JSON manifest of named parameter tensors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: CaeConfig,
    pub params: Vec<NamedTensor>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}
