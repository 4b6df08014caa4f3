//! Global entity-aware attention encoder over the historical query subgraph.

use candle_core::Tensor;

use crate::dataset::EntityId;
use crate::error::Result;
use crate::local::rows;
use crate::nn::{sigmoid, Ctx, Linear, ParamStore};
use crate::rgcn::{GraphTensors, Rgcn};

#[derive(Clone, Debug)]
pub struct GlobalEncoder {
    pub rgcn: Rgcn,
    /// Scalar relevance gate `w . x + b`.
    pub gate: Linear,
}

/// Subgraph aggregation plus per-query gated vectors.
#[derive(Clone, Debug)]
pub struct GlobalTrace {
    /// `(|E|, d)`; rows of entities outside the subgraph carry only the self-loop path.
    pub aggregated: Tensor,
    pub query_vectors: Tensor,
    /// `(B, 1)` gate values.
    pub beta: Tensor,
}

impl GlobalEncoder {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, layers: usize) -> Result<Self> {
        Ok(Self {
            rgcn: Rgcn::new(store, &format!("{name}.rgcn"), dim, layers)?,
            gate: Linear::new(store, &format!("{name}.w6"), dim, 1, true)?,
        })
    }

    /// Stacked relational convolution over the timeless subgraph, starting from
    /// the initial entity and relation embeddings.
    pub fn aggregate(&self, ctx: &mut Ctx, subgraph: &GraphTensors, h0: &Tensor, r0: &Tensor) -> Result<Tensor> {
        self.rgcn.forward(ctx, subgraph, h0, r0)
    }

    /// `sigmoid(w . (A + C) + b)` row by row, `(n, 1)`.
    pub fn gate_values(&self, aggregated_rows: &Tensor, current_rows: &Tensor) -> Result<Tensor> {
        sigmoid(&self.gate.forward(&(aggregated_rows + current_rows)?)?)
    }

    /// `beta * H_g[e_q]` with `beta = sigmoid(w . (H_g[e_q] + H_cur[e_q]) + b)`;
    /// without attention the gate is fixed to 1.
    pub fn attend(
        &self,
        aggregated: &Tensor,
        current: &Tensor,
        entities: &[EntityId],
        use_attention: bool,
    ) -> Result<(Tensor, Tensor)> {
        let agg = rows(aggregated, entities)?;
        if !use_attention {
            let beta = Tensor::ones((entities.len(), 1), agg.dtype(), agg.device())?;
            return Ok((agg, beta));
        }
        let beta = self.gate_values(&agg, &rows(current, entities)?)?;
        Ok((agg.broadcast_mul(&beta)?, beta))
    }

    pub fn run(
        &self,
        ctx: &mut Ctx,
        subgraph: &GraphTensors,
        h0: &Tensor,
        r0: &Tensor,
        current: &Tensor,
        entities: &[EntityId],
        use_attention: bool,
    ) -> Result<GlobalTrace> {
        let aggregated = self.aggregate(ctx, subgraph, h0, r0)?;
        let (query_vectors, beta) = self.attend(&aggregated, current, entities, use_attention)?;
        Ok(GlobalTrace {
            aggregated,
            query_vectors,
            beta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Triple;
    use crate::nn::Activation;
    use candle_core::{DType, Device};

    fn m(rows: &[&[f64]]) -> Tensor {
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::from_vec(flat, (rows.len(), rows[0].len()), &Device::Cpu).unwrap()
    }

    fn encoder(d: usize) -> (ParamStore, GlobalEncoder) {
        let mut s = ParamStore::new(DType::F64, 5);
        let g = GlobalEncoder::new(&mut s, "global", d, 2).unwrap();
        (s, g)
    }

    #[test]
    fn zero_gate_halves_and_saturated_gate_passes() {
        let (s, enc) = encoder(2);
        let agg = m(&[&[2.0, -4.0], &[1.0, 1.0]]);
        let cur = m(&[&[0.3, 0.3], &[0.1, 0.9]]);
        s.assign("global.w6.weight", &m(&[&[0.0], &[0.0]])).unwrap();
        let (out, beta) = enc.attend(&agg, &cur, &[0], true).unwrap();
        assert_eq!(beta.to_vec2::<f64>().unwrap(), vec![vec![0.5]]);
        assert_eq!(out.to_vec2::<f64>().unwrap(), vec![vec![1.0, -2.0]]);
        s.assign("global.w6.bias", &Tensor::new(&[80.0f64], &Device::Cpu).unwrap()).unwrap();
        let (out, _) = enc.attend(&agg, &cur, &[0], true).unwrap();
        let v = out.to_vec2::<f64>().unwrap();
        assert!((v[0][0] - 2.0).abs() < 1e-12 && (v[0][1] + 4.0).abs() < 1e-12);
        // scalar hand evaluation
        s.assign("global.w6.weight", &m(&[&[0.5], &[-1.0]])).unwrap();
        s.assign("global.w6.bias", &Tensor::new(&[0.2f64], &Device::Cpu).unwrap()).unwrap();
        let (_, beta) = enc.attend(&agg, &cur, &[1], true).unwrap();
        let x: f64 = 0.5 * (1.0 + 0.1) - (1.0 + 0.9) + 0.2;
        assert!((beta.to_vec2::<f64>().unwrap()[0][0] - 1.0 / (1.0 + (-x).exp())).abs() < 1e-12);
        let (plain, ones) = enc.attend(&agg, &cur, &[1, 0], false).unwrap();
        assert_eq!(ones.to_vec2::<f64>().unwrap(), vec![vec![1.0], vec![1.0]]);
        assert_eq!(plain.to_vec2::<f64>().unwrap(), vec![vec![1.0, 1.0], vec![2.0, -4.0]]);
    }

    #[test]
    fn empty_subgraph_is_stacked_self_loops() {
        let (_s, mut enc) = encoder(3);
        enc.rgcn.set_activation(Activation::Identity);
        let h0 = m(&[&[1.0, 0.0, -1.0], &[0.5, 0.5, 0.5]]);
        let r0 = m(&[&[1.0, 1.0, 1.0]]);
        let g = GraphTensors::new(&[], 2, DType::F64, &Device::Cpu).unwrap();
        let out = enc.aggregate(&mut Ctx::eval(), &g, &h0, &r0).unwrap();
        let w0 = enc.rgcn.layers[0].w_self.weight.as_tensor();
        let w1 = enc.rgcn.layers[1].w_self.weight.as_tensor();
        let expect = h0.matmul(w0).unwrap().matmul(w1).unwrap();
        let (a, b): (Vec<f64>, Vec<f64>) = (
            out.flatten_all().unwrap().to_vec1().unwrap(),
            expect.flatten_all().unwrap().to_vec1().unwrap(),
        );
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn entities_outside_the_subgraph_ignore_messages() {
        let (_s, enc) = encoder(2);
        let h0 = m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let r0 = m(&[&[1.0, -1.0]]);
        let with = GraphTensors::new(&[Triple::new(0, 0, 1)], 3, DType::F64, &Device::Cpu).unwrap();
        let without = GraphTensors::new(&[], 3, DType::F64, &Device::Cpu).unwrap();
        let a: Vec<Vec<f64>> = enc.aggregate(&mut Ctx::eval(), &with, &h0, &r0).unwrap().to_vec2().unwrap();
        let b: Vec<Vec<f64>> = enc.aggregate(&mut Ctx::eval(), &without, &h0, &r0).unwrap().to_vec2().unwrap();
        assert_eq!(a[2], b[2]);
        assert_ne!(a[1], b[1]);
    }
}
