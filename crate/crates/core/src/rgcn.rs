//! Relational graph convolution with in-degree normalized messages.
//!
//! For every entity `o`:
//!
//! ```text
//! h'_o = act( 1/c_o * sum_{(s, r) -> o} W_msg (h_s + r) + W_self h_o )
//! ```
//!
//! where `c_o` is the in-degree of `o`; entities without incoming edges keep
//! only the self-loop term.

use candle_core::{DType, Device, Tensor};

use crate::dataset::Triple;
use crate::error::{LogclError, Result};
use crate::nn::{index_tensor, Activation, Ctx, Linear, ParamStore};

/// Index tensors for one graph (a snapshot or a query subgraph).
#[derive(Clone, Debug)]
pub struct GraphTensors {
    num_entities: usize,
    num_edges: usize,
    src: Tensor,
    rel: Tensor,
    dst: Tensor,
    /// `(num_entities, 1)`, `1 / c_o` or 0 for isolated entities.
    inv_in_degree: Tensor,
}

impl GraphTensors {
    pub fn new(edges: &[Triple], num_entities: usize, dtype: DType, device: &Device) -> Result<Self> {
        let mut degree = vec![0f64; num_entities];
        for e in edges {
            if e.subject >= num_entities || e.object >= num_entities {
                return Err(LogclError::Shape(format!("edge {e} outside {num_entities} entities")));
            }
            degree[e.object] += 1.0;
        }
        let inv: Vec<f64> = degree.iter().map(|&c| if c > 0.0 { 1.0 / c } else { 0.0 }).collect();
        let src: Vec<usize> = edges.iter().map(|e| e.subject).collect();
        let rel: Vec<usize> = edges.iter().map(|e| e.relation).collect();
        let dst: Vec<usize> = edges.iter().map(|e| e.object).collect();
        Ok(Self {
            num_entities,
            num_edges: edges.len(),
            src: index_tensor(&src, device)?,
            rel: index_tensor(&rel, device)?,
            dst: index_tensor(&dst, device)?,
            inv_in_degree: Tensor::from_vec(inv, (num_entities, 1), device)?.to_dtype(dtype)?,
        })
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }
}

#[derive(Clone, Debug)]
pub struct RgcnLayer {
    pub w_msg: Linear,
    pub w_self: Linear,
    pub activation: Activation,
}

impl RgcnLayer {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            w_msg: Linear::new(store, &format!("{name}.w_msg"), dim, dim, false)?,
            w_self: Linear::new(store, &format!("{name}.w_self"), dim, dim, false)?,
            activation: Activation::RRelu,
        })
    }

    /// Pre-activation output of the layer.
    pub fn pre_activation(&self, graph: &GraphTensors, h: &Tensor, r: &Tensor) -> Result<Tensor> {
        let (n, d) = h.dims2()?;
        if n != graph.num_entities || r.dims2()?.1 != d {
            return Err(LogclError::Shape(format!(
                "rgcn input {:?} / relations {:?} for a graph over {} entities",
                h.dims(),
                r.dims(),
                graph.num_entities
            )));
        }
        let self_term = self.w_self.forward(h)?;
        if graph.num_edges == 0 {
            return Ok(self_term);
        }
        // the message map is linear, so normalizing before W_msg is the same sum
        let messages = (h.index_select(&graph.src, 0)? + r.index_select(&graph.rel, 0)?)?;
        let summed = Tensor::zeros((n, d), h.dtype(), h.device())?.index_add(&graph.dst, &messages, 0)?;
        let mean = summed.broadcast_mul(&graph.inv_in_degree)?;
        Ok((self.w_msg.forward(&mean)? + self_term)?)
    }

    pub fn forward(&self, ctx: &mut Ctx, graph: &GraphTensors, h: &Tensor, r: &Tensor) -> Result<Tensor> {
        let pre = self.pre_activation(graph, h, r)?;
        ctx.activate(&pre, self.activation)
    }
}

/// A stack of [`RgcnLayer`]s with dropout after each layer. Relation
/// embeddings are shared by all layers.
#[derive(Clone, Debug)]
pub struct Rgcn {
    pub layers: Vec<RgcnLayer>,
}

impl Rgcn {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, num_layers: usize) -> Result<Self> {
        let layers = (0..num_layers)
            .map(|l| RgcnLayer::new(store, &format!("{name}.{l}"), dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn set_activation(&mut self, activation: Activation) {
        for layer in &mut self.layers {
            layer.activation = activation;
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, graph: &GraphTensors, h: &Tensor, r: &Tensor) -> Result<Tensor> {
        let mut x = h.clone();
        for layer in &self.layers {
            x = layer.forward(ctx, graph, &x, r)?;
            x = ctx.dropout(&x)?;
        }
        Ok(x)
    }
}
