use serde::{Deserialize, Serialize};

use super::conv::{Conv2dPlan, ConvParams, ConvTransposePlan};
use super::gemm::{gemm, Mat};
use super::Tensor;
use crate::error::{Error, Result};

/// Largest double strictly below 1; sigmoid outputs are clamped to stay open-interval.
const SIGMOID_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

pub(crate) enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    AddScalar,
    Square,
    Abs,
    Ln,
    Ln1p,
    Relu,
    Sigmoid,
    Sum,
    Mean,
    Max(usize),
    Broadcast,
    Reshape,
    AddBias,
    MatMul,
    Conv2d(ConvParams),
    ConvTranspose(ConvParams),
}

fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, SIGMOID_CEIL)
}

impl Tensor {
    fn zip_with(&self, other: &Tensor, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "elementwise op on shapes {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            op,
            &[self, other],
        ))
    }

    fn map(&self, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(self.shape().to_vec(), data, op, &[self])
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, Op::Div, |a, b| a / b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(Op::Scale(c), |x| c * x)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.map(Op::AddScalar, |x| x + c)
    }

    pub fn square(&self) -> Tensor {
        self.map(Op::Square, |x| x * x)
    }

    pub fn abs(&self) -> Tensor {
        self.map(Op::Abs, f64::abs)
    }

    /// Natural logarithm.
    pub fn ln(&self) -> Tensor {
        self.map(Op::Ln, f64::ln)
    }

    /// `ln(1 + x)`, accurate for small `x`.
    pub fn ln_1p(&self) -> Tensor {
        self.map(Op::Ln1p, f64::ln_1p)
    }

    pub fn relu(&self) -> Tensor {
        self.map(Op::Relu, |x| x.max(0.0))
    }

    /// Logistic sigmoid; outputs lie strictly inside (0, 1) for every finite input.
    pub fn sigmoid(&self) -> Tensor {
        self.map(Op::Sigmoid, sigmoid)
    }

    pub fn activation(&self, kind: Activation) -> Tensor {
        match kind {
            Activation::Relu => self.relu(),
            Activation::Sigmoid => self.sigmoid(),
        }
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::from_op(vec![], vec![s], Op::Sum, &[self])
    }

    pub fn mean(&self) -> Tensor {
        let n = self.len() as f64;
        let s: f64 = self.data().iter().sum();
        Tensor::from_op(vec![], vec![s / n], Op::Mean, &[self])
    }

    /// Largest element; the gradient flows to the first maximiser.
    pub fn max(&self) -> Result<Tensor> {
        let (idx, val) = {
            let d = self.data();
            d.iter()
                .copied()
                .enumerate()
                .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
                    Some((_, b)) if b >= v => best,
                    _ => Some((i, v)),
                })
                .ok_or_else(|| Error::Contract("max() of an empty tensor".into()))?
        };
        Ok(Tensor::from_op(vec![], vec![val], Op::Max(idx), &[self]))
    }

    /// Repeat a single-element tensor to fill `shape`.
    pub fn broadcast(&self, shape: Vec<usize>) -> Tensor {
        debug_assert_eq!(self.len(), 1);
        let n = shape.iter().product();
        let v = self.data()[0];
        Tensor::from_op(shape, vec![v; n], Op::Broadcast, &[self])
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape()
            )));
        }
        Ok(Tensor::from_op(shape, self.to_vec(), Op::Reshape, &[self]))
    }

    /// Adds `bias[c]` to every element whose index along dimension 1 is `c`.
    /// Covers dense outputs `[n, c]` and feature maps `[n, c, h, w]`.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() < 2 || bias.len() != shape[1] {
            return Err(Error::Dimension(format!(
                "bias of {} elements for input of shape {shape:?}",
                bias.len()
            )));
        }
        let channels = shape[1];
        let inner: usize = shape[2..].iter().product();
        let mut data = self.to_vec();
        {
            let b = bias.data();
            for (chunk_idx, chunk) in data.chunks_mut(inner.max(1)).enumerate() {
                let c = b[chunk_idx % channels];
                chunk.iter_mut().for_each(|v| *v += c);
            }
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            data,
            Op::AddBias,
            &[self, bias],
        ))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            return Err(Error::Dimension(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        };
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions {k} and {k2} differ"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            Mat::new(&self.data(), m, k),
            Mat::new(&other.data(), k, n),
            &mut out,
            0.0,
        );
        Ok(Tensor::from_op(vec![m, n], out, Op::MatMul, &[self, other]))
    }

    /// Strided 2-D cross-correlation. Input NCHW, kernel `[out, in, k, k]`.
    pub fn conv2d(&self, kernel: &Tensor, params: ConvParams) -> Result<Tensor> {
        let plan = Conv2dPlan::new(self.shape(), kernel.shape(), params)?;
        let out = plan.forward(&self.data(), &kernel.data());
        Ok(Tensor::from_op(
            plan.out_shape(),
            out,
            Op::Conv2d(params),
            &[self, kernel],
        ))
    }

    /// Adjoint of [`Tensor::conv2d`]. Input NCHW, kernel `[in, out, k, k]`;
    /// output extent `(h - 1) * stride - 2 * padding + k + output_padding`.
    pub fn conv2d_transpose(&self, kernel: &Tensor, params: ConvParams) -> Result<Tensor> {
        let plan = ConvTransposePlan::new(self.shape(), kernel.shape(), params)?;
        let out = plan.forward(&self.data(), &kernel.data());
        Ok(Tensor::from_op(
            plan.out_shape(),
            out,
            Op::ConvTranspose(params),
            &[self, kernel],
        ))
    }
}

fn scaled(g: &[f64], f: impl Fn(usize, f64) -> f64) -> Vec<f64> {
    g.iter().enumerate().map(|(i, &g)| f(i, g)).collect()
}

/// Gradients with respect to each parent, `None` where not needed.
pub(super) fn backward(
    op: &Op,
    parents: &[Tensor],
    out: &Tensor,
    g: &[f64],
) -> Vec<Option<Vec<f64>>> {
    let need = |i: usize| parents[i].requires_grad();
    match op {
        Op::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
        Op::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())],
        Op::Mul => {
            let (a, b) = (parents[0].data(), parents[1].data());
            vec![
                need(0).then(|| scaled(g, |i, g| g * b[i])),
                need(1).then(|| scaled(g, |i, g| g * a[i])),
            ]
        }
        Op::Div => {
            let (a, b) = (parents[0].data(), parents[1].data());
            vec![
                need(0).then(|| scaled(g, |i, g| g / b[i])),
                need(1).then(|| scaled(g, |i, g| -g * a[i] / (b[i] * b[i]))),
            ]
        }
        Op::Scale(c) => vec![Some(g.iter().map(|v| v * c).collect())],
        Op::AddScalar | Op::Reshape => vec![Some(g.to_vec())],
        Op::Square => {
            let x = parents[0].data();
            vec![Some(scaled(g, |i, g| 2.0 * x[i] * g))]
        }
        Op::Abs => {
            let x = parents[0].data();
            vec![Some(scaled(g, |i, g| {
                if x[i] > 0.0 {
                    g
                } else if x[i] < 0.0 {
                    -g
                } else {
                    0.0
                }
            }))]
        }
        Op::Ln => {
            let x = parents[0].data();
            vec![Some(scaled(g, |i, g| g / x[i]))]
        }
        Op::Ln1p => {
            let x = parents[0].data();
            vec![Some(scaled(g, |i, g| g / (1.0 + x[i])))]
        }
        Op::Relu => {
            let x = parents[0].data();
            vec![Some(scaled(g, |i, g| if x[i] > 0.0 { g } else { 0.0 }))]
        }
        Op::Sigmoid => {
            let s = out.data();
            vec![Some(scaled(g, |i, g| g * s[i] * (1.0 - s[i])))]
        }
        Op::Sum => vec![Some(vec![g[0]; parents[0].len()])],
        Op::Mean => {
            let n = parents[0].len();
            vec![Some(vec![g[0] / n as f64; n])]
        }
        Op::Max(idx) => {
            let mut d = vec![0.0; parents[0].len()];
            d[*idx] = g[0];
            vec![Some(d)]
        }
        Op::Broadcast => vec![Some(vec![g.iter().sum()])],
        Op::AddBias => {
            let shape = parents[0].shape();
            let channels = shape[1];
            let inner: usize = shape[2..].iter().product::<usize>().max(1);
            let gb = need(1).then(|| {
                let mut gb = vec![0.0; channels];
                for (chunk_idx, chunk) in g.chunks(inner).enumerate() {
                    gb[chunk_idx % channels] += chunk.iter().sum::<f64>();
                }
                gb
            });
            vec![need(0).then(|| g.to_vec()), gb]
        }
        Op::MatMul => {
            let (a, b) = (&parents[0], &parents[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let ga = need(0).then(|| {
                let mut ga = vec![0.0; m * k];
                gemm(Mat::new(g, m, n), Mat::t(&b.data(), k, n), &mut ga, 0.0);
                ga
            });
            let gb = need(1).then(|| {
                let mut gb = vec![0.0; k * n];
                gemm(Mat::t(&a.data(), m, k), Mat::new(g, m, n), &mut gb, 0.0);
                gb
            });
            vec![ga, gb]
        }
        Op::Conv2d(p) => {
            let (x, k) = (&parents[0], &parents[1]);
            let plan = Conv2dPlan::new(x.shape(), k.shape(), *p).expect("validated in forward");
            let (gx, gk) = plan.backward(&x.data(), &k.data(), g, need(0));
            vec![gx, Some(gk)]
        }
        Op::ConvTranspose(p) => {
            let (x, k) = (&parents[0], &parents[1]);
            let plan =
                ConvTransposePlan::new(x.shape(), k.shape(), *p).expect("validated in forward");
            let (gx, gk) = plan.backward(&x.data(), &k.data(), g, need(0));
            vec![gx, Some(gk)]
        }
    }
}
