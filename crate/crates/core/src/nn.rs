//! Small neural building blocks on top of `candle-core` tensors.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{LogclError, Result};

/// RReLU negative-slope interval.
pub const RRELU_LOWER: f64 = 1.0 / 8.0;
pub const RRELU_UPPER: f64 = 1.0 / 3.0;

/// Named learnable tensors plus non-learnable buffers (batch-norm statistics).
///
/// Iteration order is the lexicographic order of the names, which keeps
/// initialization, optimizer state and checkpoints deterministic.
#[derive(Clone, Debug)]
pub struct ParamStore {
    dtype: DType,
    device: Device,
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Tensor>,
    rng: ChaCha8Rng,
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Constant(f64),
    XavierUniform,
    XavierNormal,
    Uniform(f64, f64),
    /// Geometric frequencies `10^(-k * i / (n - 1))`.
    Frequencies(f64),
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            dtype,
            device: Device::Cpu,
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Creates a learnable tensor. `shape` is `[n]` or `[rows, cols]`.
    pub fn create(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        if self.params.contains_key(name) {
            return Err(LogclError::InvalidArgument(format!("parameter `{name}` defined twice")));
        }
        let n: usize = shape.iter().product();
        let (fan_in, fan_out) = match shape {
            [a, b] => (*a as f64, *b as f64),
            [a] => (*a as f64, *a as f64),
            _ => (n as f64, n as f64),
        };
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Constant(c) => vec![c; n],
            Init::XavierUniform => {
                let bound = (6.0 / (fan_in + fan_out)).sqrt();
                (0..n).map(|_| self.rng.random_range(-bound..bound)).collect()
            }
            Init::XavierNormal => {
                let std = (2.0 / (fan_in + fan_out)).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| normal.sample(&mut self.rng)).collect()
            }
            Init::Uniform(lo, hi) => (0..n).map(|_| self.rng.random_range(lo..hi)).collect(),
            Init::Frequencies(k) => (0..n)
                .map(|i| 10f64.powf(-k * i as f64 / (n.max(2) - 1) as f64))
                .collect(),
        };
        let tensor = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&tensor)?;
        self.params.insert(name.to_string(), var.clone());
        Ok(var)
    }

    pub fn create_buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Result<()> {
        let t = (Tensor::ones(shape, self.dtype, &self.device)? * value)?;
        self.buffers.insert(name.to_string(), t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.params.get(name)
    }

    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.get(name)
    }

    pub fn set_buffer(&mut self, name: &str, value: Tensor) {
        self.buffers.insert(name.to_string(), value);
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor> {
        &self.buffers
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrites a parameter in place; the shape must match.
    pub fn assign(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .params
            .get(name)
            .ok_or_else(|| LogclError::Checkpoint(format!("unknown parameter `{name}`")))?;
        if var.dims() != value.dims() {
            return Err(LogclError::Shape(format!(
                "parameter `{name}`: expected {:?}, got {:?}",
                var.dims(),
                value.dims()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }
}

/// Dense layer `x W + b` with `W` stored as `(in, out)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Var,
    pub bias: Option<Var>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, bias: bool) -> Result<Self> {
        let weight = store.create(&format!("{name}.weight"), &[input, output], Init::XavierUniform)?;
        let bias = if bias {
            Some(store.create(&format!("{name}.bias"), &[output], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(self.weight.as_tensor())?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b.as_tensor())?,
            None => y,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// Randomized leaky ReLU; a fixed midpoint slope outside training.
    RRelu,
    Relu,
    Identity,
}

/// Per-forward-pass state: train/eval mode and the seeded stream that drives
/// dropout masks and RReLU slopes.
#[derive(Clone, Debug)]
pub struct Ctx {
    pub train: bool,
    pub dropout: f64,
    rng: ChaCha8Rng,
}

impl Ctx {
    pub fn train(dropout: f64, seed: u64) -> Self {
        Self {
            train: true,
            dropout,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Deterministic mode: no dropout, midpoint RReLU slope.
    pub fn eval() -> Self {
        Self {
            train: false,
            dropout: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn activate(&mut self, x: &Tensor, act: Activation) -> Result<Tensor> {
        match act {
            Activation::Identity => Ok(x.clone()),
            Activation::Relu => Ok(x.relu()?),
            Activation::RRelu => {
                let pos = x.relu()?;
                let neg = x.neg()?.relu()?;
                if self.train {
                    let slopes = self.uniform_like(x, RRELU_LOWER, RRELU_UPPER)?;
                    Ok((pos - (neg * slopes)?)?)
                } else {
                    Ok((pos - (neg * ((RRELU_LOWER + RRELU_UPPER) / 2.0))?)?)
                }
            }
        }
    }

    /// Inverted dropout at the context rate; identity outside training.
    pub fn dropout(&mut self, x: &Tensor) -> Result<Tensor> {
        if !self.train || self.dropout <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - self.dropout;
        let n = x.elem_count();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
        Ok((x * mask)?)
    }

    fn uniform_like(&mut self, x: &Tensor, lo: f64, hi: f64) -> Result<Tensor> {
        let n = x.elem_count();
        let v: Vec<f64> = (0..n).map(|_| self.rng.random_range(lo..hi)).collect();
        Ok(Tensor::from_vec(v, x.shape(), x.device())?.to_dtype(x.dtype())?)
    }
}

/// `1 / (1 + e^-x)` written through `tanh` so saturated inputs keep finite gradients.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

/// Numerically stable log-softmax over the last dimension.
pub fn log_softmax(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

pub fn softmax(x: &Tensor) -> Result<Tensor> {
    Ok(log_softmax(x)?.exp()?)
}

/// Row-wise L2 normalization `x / sqrt(|x|^2 + eps^2)`.
pub fn normalize_rows(x: &Tensor, eps: f64) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(D::Minus1)? + eps * eps)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}

/// `u32` index tensor on the CPU.
pub fn index_tensor(ids: &[usize], device: &Device) -> Result<Tensor> {
    let v: Vec<u32> = ids.iter().map(|&i| i as u32).collect();
    Ok(Tensor::from_vec(v, ids.len(), device)?)
}

/// Dense `(rows, 1)` column of per-row values in the given dtype.
pub fn column(values: &[f64], dtype: DType, device: &Device) -> Result<Tensor> {
    Ok(Tensor::from_vec(values.to_vec(), (values.len(), 1), device)?.to_dtype(dtype)?)
}
