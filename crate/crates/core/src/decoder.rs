//! Local/global fusion, the ConvTransE scorer and the prediction loss.

use std::cell::RefCell;

use candle_core::{DType, Tensor, Var, D};
use serde::{Deserialize, Serialize};

use crate::dataset::EntityId;
use crate::error::{LogclError, Result};
use crate::nn::{index_tensor, log_softmax, sigmoid, softmax, Ctx, Init, Linear, ParamStore};

/// `lambda * global + (1 - lambda) * local`.
pub fn fuse(local: &Tensor, global: &Tensor, lambda: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(LogclError::InvalidArgument(format!("fusion weight {lambda} outside [0, 1]")));
    }
    if local.dims() != global.dims() {
        return Err(LogclError::Shape(format!("fuse {:?} with {:?}", local.dims(), global.dims())));
    }
    Ok(((global * lambda)? + (local * (1.0 - lambda))?)?)
}

/// Batch normalization with running statistics kept outside the autograd graph.
#[derive(Debug)]
pub struct BatchNorm {
    pub gamma: Var,
    pub beta: Var,
    running_mean: RefCell<Tensor>,
    running_var: RefCell<Tensor>,
    channels: usize,
    momentum: f64,
    eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let gamma = store.create(&format!("{name}.gamma"), &[channels], Init::Constant(1.0))?;
        let beta = store.create(&format!("{name}.beta"), &[channels], Init::Zeros)?;
        let dtype = store.dtype();
        let device = store.device().clone();
        Ok(Self {
            gamma,
            beta,
            running_mean: RefCell::new(Tensor::zeros(channels, dtype, &device)?),
            running_var: RefCell::new(Tensor::ones(channels, dtype, &device)?),
            channels,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn running(&self) -> (Tensor, Tensor) {
        (self.running_mean.borrow().clone(), self.running_var.borrow().clone())
    }

    pub fn set_running(&self, mean: Tensor, var: Tensor) -> Result<()> {
        if mean.dims() != [self.channels] || var.dims() != [self.channels] {
            return Err(LogclError::Shape("batch-norm statistics".into()));
        }
        *self.running_mean.borrow_mut() = mean;
        *self.running_var.borrow_mut() = var;
        Ok(())
    }

    /// Normalizes channel dimension 1 of a `(B, C)` or `(B, C, L)` tensor.
    pub fn forward(&self, ctx: &Ctx, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        if dims.len() < 2 || dims[1] != self.channels {
            return Err(LogclError::Shape(format!("batch norm over {} channels got {dims:?}", self.channels)));
        }
        let view: Vec<usize> = dims.iter().enumerate().map(|(i, &d)| if i == 1 { d } else { 1 }).collect();
        let count = x.elem_count() / self.channels;
        let reduce = |t: &Tensor| -> candle_core::Result<Tensor> {
            let mut t = t.mean_keepdim(0)?;
            for axis in 2..dims.len() {
                t = t.mean_keepdim(axis)?;
            }
            Ok(t)
        };
        let (mean, var) = if ctx.train && count > 1 {
            let mean = reduce(x)?;
            let var = reduce(&x.broadcast_sub(&mean)?.sqr()?)?;
            let unbiased = (var.detach() * (count as f64 / (count - 1) as f64))?.flatten_all()?;
            let m = self.momentum;
            let new_mean = ((&*self.running_mean.borrow() * (1.0 - m))? + (mean.detach().flatten_all()? * m)?)?;
            let new_var = ((&*self.running_var.borrow() * (1.0 - m))? + (unbiased * m)?)?;
            *self.running_mean.borrow_mut() = new_mean;
            *self.running_var.borrow_mut() = new_var;
            (mean, var)
        } else {
            (
                self.running_mean.borrow().reshape(view.as_slice())?,
                self.running_var.borrow().reshape(view.as_slice())?,
            )
        };
        let normed = x.broadcast_sub(&mean)?.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.gamma.as_tensor().reshape(view.as_slice())?)?
            .broadcast_add(&self.beta.as_tensor().reshape(view.as_slice())?)?)
    }
}

/// Convolutional translational scorer: the query entity and relation vectors
/// are stacked as two channels, convolved with `kernels` filters of width
/// `width` (length-preserving padding), projected back to `d`, and matched
/// against every candidate entity row.
#[derive(Debug)]
pub struct ConvTransE {
    pub kernel: Var,
    pub kernel_bias: Var,
    pub fc: Linear,
    pub norms: Option<[BatchNorm; 3]>,
    kernels: usize,
    width: usize,
    dim: usize,
}

impl ConvTransE {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        kernels: usize,
        width: usize,
        batch_norm: bool,
    ) -> Result<Self> {
        if width.is_multiple_of(2) {
            return Err(LogclError::InvalidArgument(format!("kernel width {width} must be odd")));
        }
        let kernel = store.create(&format!("{name}.conv.weight"), &[kernels, 2 * width], Init::XavierUniform)?;
        let kernel_bias = store.create(&format!("{name}.conv.bias"), &[kernels], Init::Zeros)?;
        let fc = Linear::new(store, &format!("{name}.fc"), kernels * dim, dim, true)?;
        let norms = if batch_norm {
            Some([
                BatchNorm::new(store, &format!("{name}.bn0"), 2)?,
                BatchNorm::new(store, &format!("{name}.bn1"), kernels)?,
                BatchNorm::new(store, &format!("{name}.bn2"), dim)?,
            ])
        } else {
            None
        };
        Ok(Self {
            kernel,
            kernel_bias,
            fc,
            norms,
            kernels,
            width,
            dim,
        })
    }

    pub fn kernels(&self) -> usize {
        self.kernels
    }

    /// Query feature vector of shape `(B, d)` before matching against candidates.
    pub fn query_features(&self, ctx: &mut Ctx, h: &Tensor, r: &Tensor) -> Result<Tensor> {
        let (b, d) = h.dims2()?;
        if d != self.dim || r.dims2()? != (b, d) {
            return Err(LogclError::Shape(format!(
                "scorer expects ({b}, {}) inputs, got {:?} and {:?}",
                self.dim,
                h.dims(),
                r.dims()
            )));
        }
        let mut x = Tensor::stack(&[h, r], 1)?;
        if let Some([bn0, _, _]) = &self.norms {
            x = bn0.forward(ctx, &x)?;
        }
        x = ctx.dropout(&x)?;
        x = self.convolve(&x)?;
        if let Some([_, bn1, _]) = &self.norms {
            x = bn1.forward(ctx, &x)?;
        }
        x = ctx.dropout(&x.relu()?)?;
        x = self.fc.forward(&x.reshape((b, self.kernels * d))?)?;
        x = ctx.dropout(&x)?;
        if let Some([_, _, bn2]) = &self.norms {
            x = bn2.forward(ctx, &x)?;
        }
        Ok(x.relu()?)
    }

    /// Same-padded 1-d convolution of `(B, 2, d)` into `(B, K, d)`, written as
    /// an unfold and a matmul.
    fn convolve(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, d) = x.dims3()?;
        let pad = self.width / 2;
        let padded = x.pad_with_zeros(2, pad, pad)?;
        let windows: Vec<Tensor> = (0..self.width).map(|j| padded.narrow(2, j, d)).collect::<candle_core::Result<_>>()?;
        let cols = Tensor::stack(&windows, 2)?
            .permute((0, 3, 1, 2))?
            .reshape((b * d, c * self.width))?;
        let out = cols
            .matmul(&self.kernel.as_tensor().t()?)?
            .broadcast_add(&self.kernel_bias.as_tensor().unsqueeze(0)?)?;
        Ok(out.reshape((b, d, self.kernels))?.transpose(1, 2)?.contiguous()?)
    }

    /// Unnormalized scores `(B, |E|)`.
    pub fn logits(&self, ctx: &mut Ctx, h: &Tensor, r: &Tensor, candidates: &Tensor) -> Result<Tensor> {
        let features = self.query_features(ctx, h, r)?;
        if candidates.dims2()?.1 != self.dim {
            return Err(LogclError::Shape(format!("candidate matrix {:?}", candidates.dims())));
        }
        Ok(features.matmul(&candidates.t()?)?)
    }

    /// `(name, tensor)` pairs of the batch-norm running statistics.
    pub fn buffers(&self, name: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        if let Some(norms) = &self.norms {
            for (i, bn) in norms.iter().enumerate() {
                let (m, v) = bn.running();
                out.push((format!("{name}.bn{i}.running_mean"), m));
                out.push((format!("{name}.bn{i}.running_var"), v));
            }
        }
        out
    }

    pub fn load_buffer(&self, name: &str, key: &str, value: &Tensor) -> Result<bool> {
        let Some(norms) = &self.norms else {
            return Ok(false);
        };
        for (i, bn) in norms.iter().enumerate() {
            let (m, v) = bn.running();
            if key == format!("{name}.bn{i}.running_mean") {
                bn.set_running(value.to_dtype(m.dtype())?, v)?;
                return Ok(true);
            }
            if key == format!("{name}.bn{i}.running_var") {
                bn.set_running(m, value.to_dtype(v.dtype())?)?;
                return Ok(true);
            }
        }
        Ok(false)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreFunction {
    /// Softmax over entities with cross-entropy.
    #[default]
    Softmax,
    /// Independent sigmoids with binary cross-entropy.
    Sigmoid,
}

/// Normalized scores per query.
pub fn probabilities(logits: &Tensor, score: ScoreFunction) -> Result<Tensor> {
    match score {
        ScoreFunction::Softmax => softmax(logits),
        ScoreFunction::Sigmoid => sigmoid(logits),
    }
}

/// Prediction loss summed over the batch.
pub fn tkg_loss(logits: &Tensor, truths: &[EntityId], score: ScoreFunction) -> Result<Tensor> {
    let (b, n) = logits.dims2()?;
    if truths.len() != b {
        return Err(LogclError::Shape(format!("{b} score rows for {} truths", truths.len())));
    }
    if let Some(bad) = truths.iter().find(|&&t| t >= n) {
        return Err(LogclError::InvalidArgument(format!("truth {bad} outside {n} entities")));
    }
    if b == 0 {
        return Ok(Tensor::zeros((), logits.dtype(), logits.device())?);
    }
    let idx = index_tensor(truths, logits.device())?.reshape((b, 1))?;
    match score {
        ScoreFunction::Softmax => {
            let picked = log_softmax(logits)?.gather(&idx, 1)?;
            Ok(picked.sum_all()?.neg()?)
        }
        ScoreFunction::Sigmoid => {
            // softplus(x) - y x, summed over every entity
            let softplus = (logits.relu()? + ((logits.abs()?.neg()?.exp()? + 1.0)?.log()?))?;
            let positive = logits.gather(&idx, 1)?;
            Ok((softplus.sum_all()? - positive.sum_all()?)?)
        }
    }
}

/// `L_tkg + L_cl`.
pub fn total_loss(tkg: &Tensor, contrast: &Tensor) -> Result<Tensor> {
    for (name, t) in [("prediction", tkg), ("contrastive", contrast)] {
        let v = t.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !v.is_finite() {
            return Err(LogclError::InvalidArgument(format!("{name} loss is not finite: {v}")));
        }
    }
    Ok((tkg + contrast)?)
}

/// Per-row sums of a probability matrix, for sanity checks.
pub fn row_sums(p: &Tensor) -> Result<Vec<f64>> {
    Ok(p.to_dtype(DType::F64)?.sum(D::Minus1)?.to_vec1()?)
}
