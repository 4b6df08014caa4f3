//! Local entity-aware attention recurrent encoder.
//!
//! Each snapshot of the recent window is aggregated by a relational GCN over
//! time-aware dynamic entity embeddings; entity states evolve through a GRU
//! and relation states through a sigmoid time gate. A query then attends over
//! the aggregated snapshot outputs of its own entity.

use candle_core::{DType, Device, Tensor, D};

use crate::dataset::{EntityId, RelationId, Snapshot, TimeIndex};
use crate::error::{LogclError, Result};
use crate::nn::{column, index_tensor, sigmoid, softmax, Ctx, Init, Linear, ParamStore};
use crate::rgcn::{GraphTensors, Rgcn};
use candle_core::Var;

/// Learnable `cos(interval * w + b)` time features.
#[derive(Clone, Debug)]
pub struct TimeEncoding {
    pub w: Var,
    pub b: Var,
}

impl TimeEncoding {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            w: store.create(&format!("{name}.w"), &[dim], Init::Frequencies(4.0))?,
            b: store.create(&format!("{name}.b"), &[dim], Init::Zeros)?,
        })
    }

    /// Feature vector for a time interval.
    pub fn encode_interval(&self, interval: usize) -> Result<Tensor> {
        Ok(((self.w.as_tensor() * interval as f64)? + self.b.as_tensor())?.cos()?)
    }

    /// Feature vector for history time `t_i` seen from query time `t_q`.
    pub fn encode(&self, t_i: TimeIndex, t_q: TimeIndex) -> Result<Tensor> {
        if t_i >= t_q {
            return Err(LogclError::InvalidArgument(format!(
                "history time {t_i} is not before query time {t_q}"
            )));
        }
        self.encode_interval(t_q - t_i)
    }
}

/// `[h || phi] W_0` applied to every entity row with a shared time feature.
#[derive(Clone, Debug)]
pub struct DynamicEmbed {
    pub w0: Linear,
    dim: usize,
}

impl DynamicEmbed {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            w0: Linear::new(store, name, 2 * dim, dim, false)?,
            dim,
        })
    }

    pub fn forward(&self, h: &Tensor, phi: &Tensor) -> Result<Tensor> {
        let d = self.dim;
        if h.dims2()?.1 != d || phi.dims1()? != d {
            return Err(LogclError::Shape(format!(
                "dynamic embedding expects rows of {d}, got {:?} and {:?}",
                h.dims(),
                phi.dims()
            )));
        }
        let w = self.w0.weight.as_tensor();
        let top = w.narrow(0, 0, d)?;
        let bottom = w.narrow(0, d, d)?;
        let time_row = phi.unsqueeze(0)?.matmul(&bottom)?;
        Ok(h.matmul(&top)?.broadcast_add(&time_row)?)
    }
}

/// GRU cell with `h' = z * n + (1 - z) * h`.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub input: Linear,
    pub hidden: Linear,
    dim: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            input: Linear::new(store, &format!("{name}.input"), dim, 3 * dim, true)?,
            hidden: Linear::new(store, &format!("{name}.hidden"), dim, 3 * dim, true)?,
            dim,
        })
    }

    pub fn forward(&self, h: &Tensor, x: &Tensor) -> Result<Tensor> {
        if h.dims() != x.dims() {
            return Err(LogclError::Shape(format!("gru state {:?} vs input {:?}", h.dims(), x.dims())));
        }
        let d = self.dim;
        let gi = self.input.forward(x)?;
        let gh = self.hidden.forward(h)?;
        let reset = sigmoid(&(gi.narrow(1, 0, d)? + gh.narrow(1, 0, d)?)?)?;
        let update = sigmoid(&(gi.narrow(1, d, d)? + gh.narrow(1, d, d)?)?)?;
        let candidate = (gi.narrow(1, 2 * d, d)? + (reset * gh.narrow(1, 2 * d, d)?)?)?.tanh()?;
        let keep = (update.ones_like()? - &update)?;
        Ok(((update * candidate)? + (keep * h)?)?)
    }
}

/// Sigmoid time gate over mean-pooled relation embeddings.
#[derive(Clone, Debug)]
pub struct RelationGate {
    pub w3: Linear,
}

impl RelationGate {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            w3: Linear::new(store, name, dim, dim, true)?,
        })
    }

    /// `R' = mean(H rows touching r) + R_static`, `U = sigmoid(R' W + b)`,
    /// returns `U * R' + (1 - U) * R_current`.
    pub fn forward(&self, snap: &SnapshotTensors, h: &Tensor, r_current: &Tensor, r_static: &Tensor) -> Result<Tensor> {
        let pooled = snap.relation_mean(h)?;
        let r_prime = (pooled + r_static)?;
        let gate = sigmoid(&self.w3.forward(&r_prime)?)?;
        let keep = (gate.ones_like()? - &gate)?;
        Ok(((gate * r_prime)? + (keep * r_current)?)?)
    }
}

/// Tensors derived from one snapshot, reusable across epochs.
#[derive(Clone, Debug)]
pub struct SnapshotTensors {
    pub time: TimeIndex,
    pub graph: GraphTensors,
    num_relations: usize,
    pair_relation: Tensor,
    pair_entity: Tensor,
    /// `(num_relations, 1)`: `1 / |entities touching r|`, 0 when absent.
    inv_relation_count: Tensor,
    num_pairs: usize,
}

impl SnapshotTensors {
    pub fn new(snapshot: &Snapshot, num_entities: usize, num_relations: usize, dtype: DType, device: &Device) -> Result<Self> {
        let graph = GraphTensors::new(snapshot.facts(), num_entities, dtype, device)?;
        let mut pairs: Vec<(RelationId, EntityId)> = Vec::with_capacity(2 * snapshot.len());
        for f in snapshot.facts() {
            if f.relation >= num_relations {
                return Err(LogclError::Shape(format!("relation {} outside {num_relations}", f.relation)));
            }
            pairs.push((f.relation, f.subject));
            pairs.push((f.relation, f.object));
        }
        pairs.sort_unstable();
        pairs.dedup();
        let mut counts = vec![0f64; num_relations];
        for &(r, _) in &pairs {
            counts[r] += 1.0;
        }
        let inv: Vec<f64> = counts.iter().map(|&c| if c > 0.0 { 1.0 / c } else { 0.0 }).collect();
        let rel: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let ent: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        Ok(Self {
            time: snapshot.time,
            graph,
            num_relations,
            pair_relation: index_tensor(&rel, device)?,
            pair_entity: index_tensor(&ent, device)?,
            inv_relation_count: column(&inv, dtype, device)?,
            num_pairs: pairs.len(),
        })
    }

    /// Mean of entity rows connected to each relation; zero rows for absent relations.
    pub fn relation_mean(&self, h: &Tensor) -> Result<Tensor> {
        let d = h.dims2()?.1;
        let zeros = Tensor::zeros((self.num_relations, d), h.dtype(), h.device())?;
        if self.num_pairs == 0 {
            return Ok(zeros);
        }
        let rows = h.index_select(&self.pair_entity, 0)?;
        let summed = zeros.index_add(&self.pair_relation, &rows, 0)?;
        Ok(summed.broadcast_mul(&self.inv_relation_count)?)
    }
}

/// Outputs of the recurrence over one window.
#[derive(Clone, Debug)]
pub struct LocalTrace {
    /// Aggregated entity matrices, one per window step, oldest first.
    pub aggregates: Vec<Tensor>,
    /// Evolved entity matrix after the last step.
    pub entities: Tensor,
    /// Evolved relation matrix after the last step.
    pub relations: Tensor,
}

impl LocalTrace {
    pub fn len(&self) -> usize {
        self.aggregates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aggregates.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct LocalEncoder {
    pub time: TimeEncoding,
    pub dynamic: DynamicEmbed,
    pub rgcn: Rgcn,
    pub gru: GruCell,
    pub relation_gate: RelationGate,
    pub query_proj: Linear,
    pub attention: Linear,
    dim: usize,
}

impl LocalEncoder {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, layers: usize) -> Result<Self> {
        Ok(Self {
            time: TimeEncoding::new(store, &format!("{name}.time"), dim)?,
            dynamic: DynamicEmbed::new(store, &format!("{name}.w0"), dim)?,
            rgcn: Rgcn::new(store, &format!("{name}.rgcn"), dim, layers)?,
            gru: GruCell::new(store, &format!("{name}.gru"), dim)?,
            relation_gate: RelationGate::new(store, &format!("{name}.relation_gate"), dim)?,
            query_proj: Linear::new(store, &format!("{name}.w4"), 2 * dim, dim, false)?,
            attention: Linear::new(store, &format!("{name}.w5"), dim, 1, false)?,
            dim,
        })
    }

    /// One recurrence step over snapshot `snap`; returns `(H_agg, H_next, R_next)`.
    pub fn step(
        &self,
        ctx: &mut Ctx,
        snap: &SnapshotTensors,
        t_q: TimeIndex,
        h: &Tensor,
        r: &Tensor,
        r_static: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let phi = self.time.encode(snap.time, t_q)?;
        let dynamic = self.dynamic.forward(h, &phi)?;
        let aggregated = self.rgcn.forward(ctx, &snap.graph, &dynamic, r)?;
        let h_next = self.gru.forward(h, &aggregated)?;
        let r_next = self.relation_gate.forward(snap, h, r, r_static)?;
        Ok((aggregated, h_next, r_next))
    }

    /// Runs the recurrence over `window` (ascending, all before `t_q`).
    pub fn run(
        &self,
        ctx: &mut Ctx,
        window: &[&SnapshotTensors],
        t_q: TimeIndex,
        h0: &Tensor,
        r0: &Tensor,
    ) -> Result<LocalTrace> {
        if window.is_empty() {
            return Err(LogclError::NoHistory(t_q));
        }
        let mut h = h0.clone();
        let mut r = r0.clone();
        let mut aggregates = Vec::with_capacity(window.len());
        for snap in window {
            let (agg, h_next, r_next) = self.step(ctx, snap, t_q, &h, &r, r0)?;
            aggregates.push(agg);
            h = h_next;
            r = r_next;
        }
        Ok(LocalTrace {
            aggregates,
            entities: h,
            relations: r,
        })
    }

    /// `W_4 [mean(R rows of relations leaving e_q in `last`) || H[e_q]]`, falling
    /// back to `R[r_q]` when the entity has no outgoing facts in `last`.
    pub fn query_vector(
        &self,
        trace: &LocalTrace,
        last: &Snapshot,
        queries: &[(EntityId, RelationId)],
    ) -> Result<Tensor> {
        let device = trace.entities.device();
        let dtype = trace.entities.dtype();
        let mut rows = Vec::new();
        let mut rels = Vec::new();
        let mut weights = Vec::new();
        for (b, &(e, r_q)) in queries.iter().enumerate() {
            let incident = last.relations_of(e);
            if incident.is_empty() {
                rows.push(b);
                rels.push(r_q);
                weights.push(1.0);
            } else {
                let w = 1.0 / incident.len() as f64;
                for r in incident {
                    rows.push(b);
                    rels.push(r);
                    weights.push(w);
                }
            }
        }
        let picked = trace.relations.index_select(&index_tensor(&rels, device)?, 0)?;
        let weighted = picked.broadcast_mul(&column(&weights, dtype, device)?)?;
        let mean = Tensor::zeros((queries.len(), self.dim), dtype, device)?.index_add(
            &index_tensor(&rows, device)?,
            &weighted,
            0,
        )?;
        let entity_ids: Vec<EntityId> = queries.iter().map(|q| q.0).collect();
        let h = trace.entities.index_select(&index_tensor(&entity_ids, device)?, 0)?;
        self.query_proj.forward(&Tensor::cat(&[&mean, &h], 1)?)
    }

    /// Attention over the aggregated window steps of each query entity.
    /// Returns `(H[e_q] + sum_i alpha_i H_agg_i[e_q], alpha)` with `alpha` of shape `(B, k)`.
    pub fn attend(&self, trace: &LocalTrace, query_vec: &Tensor, entities: &[EntityId]) -> Result<(Tensor, Tensor)> {
        if trace.is_empty() {
            return Err(LogclError::InvalidArgument("attention over an empty trace".into()));
        }
        let idx = index_tensor(entities, trace.entities.device())?;
        let steps = trace
            .aggregates
            .iter()
            .map(|a| a.index_select(&idx, 0))
            .collect::<candle_core::Result<Vec<_>>>()?;
        let scores = steps
            .iter()
            .map(|s| self.attention.forward(&(s + query_vec)?))
            .collect::<Result<Vec<_>>>()?;
        let alpha = softmax(&Tensor::cat(&scores, 1)?)?;
        let stacked = Tensor::stack(&steps, 1)?;
        let mixed = stacked.broadcast_mul(&alpha.unsqueeze(2)?)?.sum(1)?;
        let current = trace.entities.index_select(&idx, 0)?;
        Ok(((current + mixed)?, alpha))
    }

    /// Final local representation per query. Without entity-aware attention the
    /// evolved embedding `H[e_q]` is returned as is.
    pub fn represent(
        &self,
        trace: &LocalTrace,
        last: &Snapshot,
        queries: &[(EntityId, RelationId)],
        use_attention: bool,
    ) -> Result<Tensor> {
        let entities: Vec<EntityId> = queries.iter().map(|q| q.0).collect();
        if !use_attention {
            let idx = index_tensor(&entities, trace.entities.device())?;
            return Ok(trace.entities.index_select(&idx, 0)?);
        }
        let qv = self.query_vector(trace, last, queries)?;
        Ok(self.attend(trace, &qv, &entities)?.0)
    }
}

/// Rows `ids` of `m`.
pub(crate) fn rows(m: &Tensor, ids: &[usize]) -> Result<Tensor> {
    Ok(m.index_select(&index_tensor(ids, m.device())?, 0)?)
}

/// Sum of attention weights per row, used by invariance checks.
pub fn attention_row_sums(alpha: &Tensor) -> Result<Vec<f64>> {
    Ok(alpha.to_dtype(DType::F64)?.sum(D::Minus1)?.to_vec1()?)
}
