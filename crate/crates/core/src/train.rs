//! Optimization, the two-phase training step, evaluation and online updates.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::dataset::{inverse_of, Split, TemporalKg, TimeIndex};
use crate::error::{LogclError, Result};
use crate::local::SnapshotTensors;
use crate::metrics::{aggregate, raw_rank, time_aware_filtered_rank, MetricsReport, Orientation, RankRecord};
use crate::model::{Embeddings, LogCl, PhaseOutput, QueryBatch};
use crate::nn::{Ctx, ParamStore};
use crate::sampler::{HistoryIndex, QuerySubgraph};

/// Adam with bias correction. Moments are kept per parameter name so they
/// can be checkpointed.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Rescales all gradients jointly so their global L2 norm is at most
    /// `clip` (no clipping when `clip <= 0`), then applies one update.
    /// Parameters without a gradient are left untouched. Returns the norm
    /// before clipping.
    pub fn update(&mut self, store: &ParamStore, grads: &GradStore, clip: f64) -> Result<f64> {
        let present: Vec<(&String, &Tensor)> = store
            .params()
            .iter()
            .filter_map(|(name, var)| grads.get(var.as_tensor()).map(|g| (name, g)))
            .collect();
        let mut sq = 0.0;
        for (_, g) in &present {
            sq += g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
        }
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(LogclError::InvalidArgument(format!("gradient norm is {norm}")));
        }
        let scale = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in present {
            let var = &store.params()[name];
            // moments must not keep the step's graph alive
            let g = (g.detach() * scale)?;
            let m_prev = match self.m.get(name) {
                Some(m) => m.clone(),
                None => g.zeros_like()?,
            };
            let v_prev = match self.v.get(name) {
                Some(v) => v.clone(),
                None => g.zeros_like()?,
            };
            let m = ((m_prev * self.beta1)? + (&g * (1.0 - self.beta1))?)?.detach();
            let v = ((v_prev * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?.detach();
            let denom = ((&v / bc2)?.sqrt()? + self.eps)?;
            let delta = ((&m / bc1)? / denom)?;
            var.set(&(var.as_tensor().detach() - (delta * self.lr)?)?)?;
            self.m.insert(name.clone(), m);
            self.v.insert(name.clone(), v);
        }
        Ok(norm)
    }
}

/// Both orientations' queries at one timestamp with their subgraphs.
#[derive(Clone, Debug)]
pub struct TimestampBatch {
    pub time: TimeIndex,
    /// Original orientation first, inverse second.
    pub phases: [QueryBatch; 2],
    pub subgraphs: [QuerySubgraph; 2],
}

/// Original and inverse query batches of `split` at `t`.
pub fn query_batches(kg: &TemporalKg, split: Split, t: TimeIndex) -> [QueryBatch; 2] {
    let mut original = QueryBatch::default();
    let mut inverse = QueryBatch::default();
    for q in kg.split_at(split, t) {
        original.queries.push((q.subject, q.relation));
        original.truths.push(q.object);
        let inv = inverse_of(q, kg.num_relations_base());
        inverse.queries.push((inv.subject, inv.relation));
        inverse.truths.push(inv.object);
    }
    [original, inverse]
}

/// Batches for every timestamp of `split` that has history (`t >= 1`); each
/// orientation samples its own subgraph from all facts before `t`.
pub fn prepare_batches(kg: &TemporalKg, split: Split) -> Vec<TimestampBatch> {
    let mut index = HistoryIndex::new();
    let mut out = Vec::new();
    for t in kg.split_times(split) {
        if t == 0 {
            continue;
        }
        index.advance_to(kg, t);
        let phases = query_batches(kg, split, t);
        let subgraphs = [index.subgraph(&phases[0].queries), index.subgraph(&phases[1].queries)];
        out.push(TimestampBatch { time: t, phases, subgraphs });
    }
    out
}

/// Loss of one timestamp: the local window is encoded once, then each
/// orientation runs its own forward pass over its own queries and subgraph.
pub struct StepOutput {
    pub loss: Tensor,
    pub phases: [PhaseOutput; 2],
}

pub fn two_phase_step(
    model: &LogCl,
    ctx: &mut Ctx,
    kg: &TemporalKg,
    cache: &[SnapshotTensors],
    batch: &TimestampBatch,
    emb: &Embeddings,
) -> Result<StepOutput> {
    let t = batch.time;
    if t == 0 {
        return Err(LogclError::NoHistory(0));
    }
    let trace = model.encode_local(ctx, kg, cache, t, emb)?;
    let last = kg.snapshot(t - 1).ok_or(LogclError::NoHistory(t))?;
    let first = model.forward_phase(ctx, emb, trace.as_ref(), last, &batch.subgraphs[0], &batch.phases[0], true)?;
    let second = model.forward_phase(ctx, emb, trace.as_ref(), last, &batch.subgraphs[1], &batch.phases[1], true)?;
    let loss = (first.loss()? + second.loss()?)?;
    Ok(StepOutput {
        loss,
        phases: [first, second],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub tkg_loss: f64,
    pub contrast_loss: f64,
    pub valid_mrr: Option<f64>,
}

/// Everything needed to resume or evaluate a run.
#[derive(Debug)]
pub struct TrainState {
    pub model: LogCl,
    pub adam: Adam,
    pub epoch: usize,
    pub best_mrr: Option<f64>,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(config: &TrainConfig, kg: &TemporalKg) -> Result<Self> {
        Ok(Self {
            model: LogCl::for_dataset(config, kg)?,
            adam: Adam::new(config.lr),
            epoch: 0,
            best_mrr: None,
            history: Vec::new(),
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Line-delimited JSON epoch log.
    pub log: Option<PathBuf>,
    /// Best checkpoint, rewritten on every validation improvement.
    pub checkpoint: Option<PathBuf>,
    /// Skip validation, keep the final parameters.
    pub skip_validation: bool,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (epoch as u64).wrapping_add(1)
}

/// One pass over `batches` in time order with one update per timestamp.
pub fn train_epoch(
    state: &mut TrainState,
    kg: &TemporalKg,
    cache: &[SnapshotTensors],
    batches: &[TimestampBatch],
) -> Result<EpochRecord> {
    let config = state.model.config.clone();
    let mut ctx = Ctx::train(config.dropout, epoch_seed(config.seed, state.epoch));
    let (mut loss, mut tkg, mut contrast) = (0.0, 0.0, 0.0);
    for batch in batches {
        let (l, t, c) = update_on(state, &mut ctx, kg, cache, batch)?;
        loss += l;
        tkg += t;
        contrast += c;
    }
    let record = EpochRecord {
        epoch: state.epoch,
        loss,
        tkg_loss: tkg,
        contrast_loss: contrast,
        valid_mrr: None,
    };
    state.epoch += 1;
    Ok(record)
}

fn update_on(
    state: &mut TrainState,
    ctx: &mut Ctx,
    kg: &TemporalKg,
    cache: &[SnapshotTensors],
    batch: &TimestampBatch,
) -> Result<(f64, f64, f64)> {
    let emb = state.model.embeddings();
    let out = two_phase_step(&state.model, ctx, kg, cache, batch, &emb)?;
    let value = out.loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !value.is_finite() {
        return Err(LogclError::Diverged {
            epoch: state.epoch,
            time: batch.time,
            loss: value,
        });
    }
    let scalar = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
    let tkg = scalar(&out.phases[0].tkg)? + scalar(&out.phases[1].tkg)?;
    let contrast = scalar(&out.phases[0].contrast)? + scalar(&out.phases[1].contrast)?;
    let grads = out.loss.backward()?;
    let clip = state.model.config.grad_clip;
    state.adam.update(&state.model.store, &grads, clip)?;
    Ok((value, tkg, contrast))
}

/// Deep copy of parameters and batch-norm statistics.
pub fn parameter_snapshot(model: &LogCl) -> Result<Vec<(String, Tensor)>> {
    let mut out = Vec::new();
    for (name, var) in model.store.params() {
        out.push((name.clone(), var.as_tensor().copy()?));
    }
    for (name, t) in model.decoder.buffers("decoder") {
        out.push((name, t.copy()?));
    }
    Ok(out)
}

pub fn restore_snapshot(model: &LogCl, snapshot: &[(String, Tensor)]) -> Result<()> {
    for (name, t) in snapshot {
        if model.store.get(name).is_some() {
            model.store.assign(name, t)?;
        } else if !model.decoder.load_buffer("decoder", name, t)? {
            return Err(LogclError::Checkpoint(format!("unknown tensor `{name}`")));
        }
    }
    Ok(())
}

/// Trains with early stopping on validation MRR and restores the best epoch.
pub fn train(kg: &TemporalKg, config: &TrainConfig, options: &TrainOptions) -> Result<TrainState> {
    let mut state = TrainState::new(config, kg)?;
    train_from(&mut state, kg, options)?;
    Ok(state)
}

/// Continues training `state` up to `config.epochs` total epochs.
pub fn train_from(state: &mut TrainState, kg: &TemporalKg, options: &TrainOptions) -> Result<()> {
    let config = state.model.config.clone();
    let cache = state.model.snapshot_tensors(kg)?;
    let batches = prepare_batches(kg, Split::Train);
    let validate = !options.skip_validation && kg.split_times(Split::Valid).iter().any(|&t| t > 0);
    let mut log = match &options.log {
        Some(path) => Some(File::create(path).map_err(|e| LogclError::io(path, e))?),
        None => None,
    };
    let mut best: Option<Vec<(String, Tensor)>> = None;
    let mut stale = 0;
    while state.epoch < config.epochs {
        let mut record = train_epoch(state, kg, &cache, &batches)?;
        if validate {
            let report = evaluate_split(&state.model, kg, &cache, Split::Valid, &state.model.embeddings())?;
            let mrr = report.filtered.mrr;
            record.valid_mrr = Some(mrr);
            if state.best_mrr.is_none_or(|b| mrr > b) {
                state.best_mrr = Some(mrr);
                best = Some(parameter_snapshot(&state.model)?);
                stale = 0;
                state.history.push(record.clone());
                if let Some(path) = &options.checkpoint {
                    crate::checkpoint::save(state, path)?;
                }
            } else {
                stale += 1;
                state.history.push(record.clone());
            }
        } else {
            state.history.push(record.clone());
        }
        if let Some(f) = log.as_mut() {
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(f, "{line}").map_err(|e| LogclError::io(options.log.as_ref().unwrap(), e))?;
        }
        if validate && stale >= config.patience {
            break;
        }
    }
    if let Some(snapshot) = best {
        restore_snapshot(&state.model, &snapshot)?;
    }
    if let (Some(path), false) = (&options.checkpoint, validate) {
        crate::checkpoint::save(state, path)?;
    }
    Ok(())
}

/// Raw and filtered ranks for both orientations at `t`. `index` must hold
/// exactly the facts before `t`.
pub fn rank_timestamp(
    model: &LogCl,
    kg: &TemporalKg,
    cache: &[SnapshotTensors],
    index: &HistoryIndex,
    split: Split,
    t: TimeIndex,
    emb: &Embeddings,
) -> Result<Vec<RankRecord>> {
    if t == 0 {
        return Err(LogclError::NoHistory(0));
    }
    let mut ctx = Ctx::eval();
    let trace = model.encode_local(&mut ctx, kg, cache, t, emb)?;
    let last = kg.snapshot(t - 1).ok_or(LogclError::NoHistory(t))?;
    let facts = kg
        .snapshot(t)
        .ok_or_else(|| LogclError::InvalidArgument(format!("no snapshot at {t}")))?;
    let mut records = Vec::new();
    for (batch, orientation) in query_batches(kg, split, t).iter().zip([Orientation::Original, Orientation::Inverse]) {
        if batch.is_empty() {
            continue;
        }
        let subgraph = index.subgraph(&batch.queries);
        let out = model.forward_phase(&mut ctx, emb, trace.as_ref(), last, &subgraph, batch, false)?;
        let scores: Vec<Vec<f64>> = out.logits.to_dtype(DType::F64)?.to_vec2()?;
        for ((&(s, r), &truth), row) in batch.queries.iter().zip(&batch.truths).zip(&scores) {
            let raw = raw_rank(row, truth)?;
            let filtered = time_aware_filtered_rank(row, truth, (s, r, t), facts)?;
            records.push(RankRecord {
                subject: s,
                relation: r,
                time: t,
                orientation,
                truth,
                raw_rank: raw,
                filtered_rank: filtered,
            });
        }
    }
    Ok(records)
}

/// Evaluates every timestamp of `split` in order. History is every ground-truth
/// fact before the query time, across all splits.
pub fn evaluate_split(
    model: &LogCl,
    kg: &TemporalKg,
    cache: &[SnapshotTensors],
    split: Split,
    emb: &Embeddings,
) -> Result<MetricsReport> {
    let mut index = HistoryIndex::new();
    let mut records = Vec::new();
    for t in kg.split_times(split) {
        if t == 0 {
            continue;
        }
        index.advance_to(kg, t);
        records.extend(rank_timestamp(model, kg, cache, &index, split, t, emb)?);
    }
    aggregate(&records, &model.config.fingerprint())
}

/// Evaluates `split` with the trained initial embeddings, optionally perturbed
/// by Gaussian noise of standard deviation `config.noise_sigma`.
pub fn evaluate(model: &LogCl, kg: &TemporalKg, split: Split) -> Result<MetricsReport> {
    let cache = model.snapshot_tensors(kg)?;
    let mut emb = model.embeddings();
    if model.config.noise_sigma > 0.0 {
        emb.entities = inject_noise(&emb.entities, model.config.noise_sigma, noise_seed(model.config.seed))?;
    }
    evaluate_split(model, kg, &cache, split, &emb)
}

/// Noise stream seed, kept apart from the training streams of the same seed.
pub(crate) fn noise_seed(seed: u64) -> u64 {
    seed ^ 0x6E6F_6973_6500
}

/// Test-time updates: each test timestamp is first ranked, then its facts are
/// used for `online_steps` training updates before moving on.
pub fn online_train(state: &mut TrainState, kg: &TemporalKg) -> Result<MetricsReport> {
    let config = state.model.config.clone();
    let cache = state.model.snapshot_tensors(kg)?;
    let mut index = HistoryIndex::new();
    let mut records = Vec::new();
    let mut ctx = Ctx::train(config.dropout, epoch_seed(config.seed, usize::MAX));
    for t in kg.split_times(Split::Test) {
        if t == 0 {
            continue;
        }
        index.advance_to(kg, t);
        let emb = state.model.embeddings();
        records.extend(rank_timestamp(&state.model, kg, &cache, &index, Split::Test, t, &emb)?);
        if config.online_steps == 0 {
            continue;
        }
        let phases = query_batches(kg, Split::Test, t);
        let subgraphs = [index.subgraph(&phases[0].queries), index.subgraph(&phases[1].queries)];
        let batch = TimestampBatch { time: t, phases, subgraphs };
        for _ in 0..config.online_steps {
            update_on(state, &mut ctx, kg, &cache, &batch)?;
        }
    }
    aggregate(&records, &config.fingerprint())
}

/// `H_0 + eps` with `eps ~ N(0, sigma^2)` i.i.d., seeded.
pub fn inject_noise(h0: &Tensor, sigma: f64, seed: u64) -> Result<Tensor> {
    if !(sigma >= 0.0) {
        return Err(LogclError::InvalidArgument(format!("noise sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(h0.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let noise: Vec<f64> = (0..h0.elem_count()).map(|_| normal.sample(&mut rng)).collect();
    let noise = Tensor::from_vec(noise, h0.dims(), h0.device())?.to_dtype(h0.dtype())?;
    Ok((h0 + noise)?)
}

/// Appends `record` as one JSON line.
pub fn append_jsonl<T: Serialize>(path: &Path, record: &T) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| LogclError::io(path, e))?;
    let line = serde_json::to_string(record).expect("record serializes");
    writeln!(f, "{line}").map_err(|e| LogclError::io(path, e))
}
