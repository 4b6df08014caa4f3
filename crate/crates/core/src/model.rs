//! The assembled model: initial embeddings, both encoders, the projection
//! heads and the scorer, plus the per-phase forward pass.

use candle_core::{DType, Tensor, Var};

use crate::config::{Candidates, GateSource, Precision, TrainConfig};
use crate::contrast::{contrastive_total, ProjectionHead};
use crate::dataset::{snapshot_window, EntityId, RelationId, Snapshot, TemporalKg, TimeIndex};
use crate::decoder::{fuse, tkg_loss, ConvTransE};
use crate::error::{LogclError, Result};
use crate::global::GlobalEncoder;
use crate::local::{rows, LocalEncoder, LocalTrace, SnapshotTensors};
use crate::nn::{Ctx, Init, ParamStore};
use crate::rgcn::GraphTensors;
use crate::sampler::QuerySubgraph;

/// Initial entity and relation matrices fed to both encoders.
#[derive(Clone, Debug)]
pub struct Embeddings {
    pub entities: Tensor,
    pub relations: Tensor,
}

/// Outputs of one forward pass over a query batch.
#[derive(Clone, Debug)]
pub struct PhaseOutput {
    /// `(B, |E|)` unnormalized scores.
    pub logits: Tensor,
    pub tkg: Tensor,
    pub contrast: Tensor,
    /// Local attention weights over window steps, `(B, k)`.
    pub alpha: Option<Tensor>,
    /// Global gate per query, `(B, 1)`.
    pub beta: Option<Tensor>,
    /// Rows whose projection norm hit the epsilon guard.
    pub degenerate_projections: usize,
}

impl PhaseOutput {
    pub fn loss(&self) -> Result<Tensor> {
        Ok((&self.tkg + &self.contrast)?)
    }
}

/// One query batch: `(subject, relation)` pairs and their true objects.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QueryBatch {
    pub queries: Vec<(EntityId, RelationId)>,
    pub truths: Vec<EntityId>,
}

impl QueryBatch {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn entities(&self) -> Vec<EntityId> {
        self.queries.iter().map(|q| q.0).collect()
    }

    pub fn relations(&self) -> Vec<RelationId> {
        self.queries.iter().map(|q| q.1).collect()
    }
}

#[derive(Debug)]
pub struct LogCl {
    pub config: TrainConfig,
    pub store: ParamStore,
    pub h0: Var,
    pub r0: Var,
    pub local: LocalEncoder,
    pub global: GlobalEncoder,
    pub project_local: ProjectionHead,
    pub project_global: ProjectionHead,
    pub decoder: ConvTransE,
    num_entities: usize,
    num_relations: usize,
}

impl LogCl {
    /// Builds every parameter group regardless of ablation flags so that
    /// checkpoints of all variants share one layout.
    pub fn new(config: &TrainConfig, num_entities: usize, num_relations: usize) -> Result<Self> {
        config.validate()?;
        if num_entities == 0 || num_relations == 0 {
            return Err(LogclError::InvalidArgument("empty entity or relation vocabulary".into()));
        }
        let dtype = match config.precision {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        };
        let d = config.dim;
        let mut store = ParamStore::new(dtype, config.seed);
        let h0 = store.create("entity.h0", &[num_entities, d], Init::XavierNormal)?;
        let r0 = store.create("relation.r0", &[num_relations, d], Init::XavierNormal)?;
        let local = LocalEncoder::new(&mut store, "local", d, config.gcn_layers)?;
        let global = GlobalEncoder::new(&mut store, "global", d, config.gcn_layers)?;
        let project_local = ProjectionHead::new(&mut store, "contrast.local", d, d)?;
        let project_global = ProjectionHead::new(&mut store, "contrast.global", d, d)?;
        let decoder = ConvTransE::new(&mut store, "decoder", d, config.kernels, config.kernel_width, config.batch_norm)?;
        Ok(Self {
            config: config.clone(),
            store,
            h0,
            r0,
            local,
            global,
            project_local,
            project_global,
            decoder,
            num_entities,
            num_relations,
        })
    }

    pub fn for_dataset(config: &TrainConfig, kg: &TemporalKg) -> Result<Self> {
        Self::new(config, kg.num_entities(), kg.num_relations())
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn embeddings(&self) -> Embeddings {
        Embeddings {
            entities: self.h0.as_tensor().clone(),
            relations: self.r0.as_tensor().clone(),
        }
    }

    /// Graph tensors of every snapshot of `kg`, indexed by time.
    pub fn snapshot_tensors(&self, kg: &TemporalKg) -> Result<Vec<SnapshotTensors>> {
        kg.snapshots()
            .iter()
            .map(|s| SnapshotTensors::new(s, self.num_entities, self.num_relations, self.dtype(), self.store.device()))
            .collect()
    }

    /// Recurrence over the window before `t_q`. `None` when the local encoder is ablated.
    pub fn encode_local(
        &self,
        ctx: &mut Ctx,
        kg: &TemporalKg,
        cache: &[SnapshotTensors],
        t_q: TimeIndex,
        emb: &Embeddings,
    ) -> Result<Option<LocalTrace>> {
        if !self.config.use_local {
            return Ok(None);
        }
        let window = snapshot_window(kg, t_q, self.config.window)?;
        let steps: Vec<&SnapshotTensors> = window.iter().map(|s| &cache[s.time]).collect();
        Ok(Some(self.local.run(ctx, &steps, t_q, &emb.entities, &emb.relations)?))
    }

    /// Scores and losses for one orientation's query batch at `t_q`.
    ///
    /// `last` is the snapshot at `t_q - 1`; `trace` comes from [`Self::encode_local`]
    /// and may be shared by both phases of a timestamp.
    pub fn forward_phase(
        &self,
        ctx: &mut Ctx,
        emb: &Embeddings,
        trace: Option<&LocalTrace>,
        last: &Snapshot,
        subgraph: &QuerySubgraph,
        batch: &QueryBatch,
        with_loss: bool,
    ) -> Result<PhaseOutput> {
        let c = &self.config;
        if batch.is_empty() {
            return Err(LogclError::InvalidArgument("empty query batch".into()));
        }
        if c.use_local && trace.is_none() {
            return Err(LogclError::InvalidArgument("local encoder enabled without a trace".into()));
        }
        let entities = batch.entities();
        let relations = batch.relations();
        let trace = if c.use_local { trace } else { None };

        let mut alpha = None;
        let local_vec = match trace {
            Some(tr) if c.use_eatt => {
                let qv = self.local.query_vector(tr, last, &batch.queries)?;
                let (out, a) = self.local.attend(tr, &qv, &entities)?;
                alpha = Some(a);
                Some(out)
            }
            Some(tr) => Some(rows(&tr.entities, &entities)?),
            None => None,
        };
        let current = match trace {
            Some(tr) if c.global_gate == GateSource::Evolved => tr.entities.clone(),
            _ => emb.entities.clone(),
        };

        let mut beta = None;
        let mut global_agg = None;
        let global_vec = if c.use_global {
            let graph = GraphTensors::new(subgraph.edges(), self.num_entities, self.dtype(), self.store.device())?;
            let agg = self.global.aggregate(ctx, &graph, &emb.entities, &emb.relations)?;
            let (vectors, b) = self.global.attend(&agg, &current, &entities, c.use_eatt)?;
            beta = Some(b);
            global_agg = Some(agg);
            Some(vectors)
        } else {
            None
        };

        let query = match (&local_vec, &global_vec) {
            (Some(l), Some(g)) => fuse(l, g, c.lambda)?,
            (Some(l), None) => l.clone(),
            (None, Some(g)) => g.clone(),
            (None, None) => unreachable!("validated config keeps one encoder"),
        };
        let relation_rows = match trace {
            Some(tr) => rows(&tr.relations, &relations)?,
            None => rows(&emb.relations, &relations)?,
        };
        let candidates = self.candidates(trace, global_agg.as_ref(), &current)?;
        let logits = self.decoder.logits(ctx, &query, &relation_rows, &candidates)?;

        let zero = Tensor::zeros((), self.dtype(), self.store.device())?;
        if !with_loss {
            return Ok(PhaseOutput {
                logits,
                tkg: zero.clone(),
                contrast: zero,
                alpha,
                beta,
                degenerate_projections: 0,
            });
        }
        let tkg = tkg_loss(&logits, &batch.truths, c.score_function)?;
        let mut degenerate = 0;
        let contrast = match (trace, &global_agg) {
            (Some(tr), Some(agg)) if c.contrast_active() => {
                let zg_rows = rows(agg, &entities)?;
                let r0_rows = rows(&emb.relations, &relations)?;
                let (z_global, dg) = self.project_global.project(&zg_rows, &r0_rows)?;
                degenerate += dg;
                let steps: Vec<&Tensor> = if c.contrast_all_steps {
                    tr.aggregates.iter().collect()
                } else {
                    tr.aggregates.last().into_iter().collect()
                };
                let mut sum = zero.clone();
                for agg_local in &steps {
                    let (z_local, dl) = self.project_local.project(&rows(agg_local, &entities)?, &relation_rows)?;
                    degenerate += dl;
                    let losses = contrastive_total(&z_local, &z_global, &batch.truths, c.tau, c.cross_positives)?;
                    sum = (sum + losses.total)?;
                }
                (sum / steps.len() as f64)?
            }
            _ => zero,
        };
        Ok(PhaseOutput {
            logits,
            tkg,
            contrast,
            alpha,
            beta,
            degenerate_projections: degenerate,
        })
    }

    /// Entity matrix the scorer matches against.
    fn candidates(&self, trace: Option<&LocalTrace>, global_agg: Option<&Tensor>, current: &Tensor) -> Result<Tensor> {
        let c = &self.config;
        let gated = |agg: &Tensor| -> Result<Tensor> {
            if !c.use_eatt {
                return Ok(agg.clone());
            }
            let beta = self.global.gate_values(agg, current)?;
            Ok(agg.broadcast_mul(&beta)?)
        };
        match (trace, global_agg) {
            (Some(tr), Some(agg)) if c.candidates == Candidates::Fused => fuse(&tr.entities, &gated(agg)?, c.lambda),
            (Some(tr), _) => Ok(tr.entities.clone()),
            (None, Some(agg)) => gated(agg),
            (None, None) => unreachable!("validated config keeps one encoder"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Quadruple, Splits, Triple};
    use crate::sampler::HistoryIndex;

    fn toy() -> TemporalKg {
        let train = vec![
            Quadruple::new(0, 0, 1, 0),
            Quadruple::new(1, 1, 2, 0),
            Quadruple::new(0, 0, 2, 1),
            Quadruple::new(2, 1, 3, 1),
            Quadruple::new(0, 0, 1, 2),
            Quadruple::new(3, 1, 0, 2),
        ];
        TemporalKg::new(4, 2, Splits { train, ..Default::default() }, 1).unwrap()
    }

    fn small(config: impl FnOnce(&mut TrainConfig)) -> TrainConfig {
        let mut c = TrainConfig {
            dim: 6,
            kernels: 3,
            window: 2,
            precision: Precision::F64,
            batch_norm: false,
            ..TrainConfig::default()
        };
        config(&mut c);
        c
    }

    fn run(c: &TrainConfig) -> PhaseOutput {
        let kg = toy();
        let model = LogCl::for_dataset(c, &kg).unwrap();
        let cache = model.snapshot_tensors(&kg).unwrap();
        let emb = model.embeddings();
        let mut ctx = Ctx::eval();
        let trace = model.encode_local(&mut ctx, &kg, &cache, 2, &emb).unwrap();
        let mut index = HistoryIndex::new();
        index.advance_to(&kg, 2);
        let batch = QueryBatch {
            queries: vec![(0, 0), (3, 1)],
            truths: vec![1, 0],
        };
        let sub = index.subgraph(&batch.queries);
        model
            .forward_phase(&mut ctx, &emb, trace.as_ref(), kg.snapshot(1).unwrap(), &sub, &batch, true)
            .unwrap()
    }

    fn value(t: &Tensor) -> f64 {
        t.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn full_model_shapes_and_losses() {
        let out = run(&small(|_| {}));
        assert_eq!(out.logits.dims(), &[2, 4]);
        assert!(value(&out.tkg) > 0.0);
        assert!(value(&out.contrast) > 0.0);
        assert_eq!(out.alpha.unwrap().dims(), &[2, 2]);
        let beta: Vec<f64> = out.beta.unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert!(beta.iter().all(|&b| b > 0.0 && b < 1.0));
    }

    #[test]
    fn ablations_switch_paths() {
        let no_cl = run(&small(|c| c.use_cl = false));
        assert_eq!(value(&no_cl.contrast), 0.0);
        let local_only = run(&small(|c| c.use_global = false));
        assert!(local_only.beta.is_none());
        assert_eq!(value(&local_only.contrast), 0.0);
        let global_only = run(&small(|c| c.use_local = false));
        assert!(global_only.alpha.is_none());
        let no_eatt = run(&small(|c| c.use_eatt = false));
        assert!(no_eatt.alpha.is_none());
        let beta: Vec<f64> = no_eatt.beta.unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(beta, vec![1.0, 1.0]);
    }

    #[test]
    fn same_seed_same_scores() {
        let a = run(&small(|_| {}));
        let b = run(&small(|_| {}));
        let av: Vec<f64> = a.logits.flatten_all().unwrap().to_vec1().unwrap();
        let bv: Vec<f64> = b.logits.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(av, bv);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let c = small(|_| {});
        let kg = toy();
        let model = LogCl::for_dataset(&c, &kg).unwrap();
        let emb = model.embeddings();
        let snap = Snapshot::new(0, vec![Triple::new(0, 0, 1)]);
        let sub = HistoryIndex::new().subgraph(&[]);
        let mut ctx = Ctx::eval();
        assert!(model
            .forward_phase(&mut ctx, &emb, None, &snap, &sub, &QueryBatch::default(), true)
            .is_err());
    }
}
