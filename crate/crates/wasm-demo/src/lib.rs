//! Browser bindings: query subgraph sampling, the contrastive loss across
//! temperatures, and epoch-by-epoch training on the repetition dataset.

use candle_core::{Device, Tensor};
use logcl::contrast::{supcon_loss, CrossPositives, View};
use logcl::dataset::Quadruple;
use logcl::sampler::build_query_subgraph;
use logcl::local::SnapshotTensors;
use logcl::train::{evaluate_split, prepare_batches, train_epoch, TimestampBatch};
use logcl::{Split, TemporalKg, TrainConfig, TrainState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn numbers(line: &str, n: usize, lineno: usize) -> Result<Vec<usize>, String> {
    let toks: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).collect();
    if toks.len() != n {
        return Err(format!("line {lineno}: expected {n} numbers, found {}", toks.len()));
    }
    toks.iter()
        .map(|t| t.parse().map_err(|_| format!("line {lineno}: `{t}` is not a non-negative integer")))
        .collect()
}

fn rows(text: &str, n: usize) -> Result<Vec<Vec<usize>>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| numbers(l, n, i + 1))
        .collect()
}

/// `history`: lines `s r o t`; `queries`: lines `s r`. Returns JSON with the
/// sampled edges and nodes.
pub fn subgraph_json(history: &str, queries: &str) -> Result<String, String> {
    let history: Vec<Quadruple> = rows(history, 4)?
        .into_iter()
        .map(|v| Quadruple::new(v[0], v[1], v[2], v[3]))
        .collect();
    let queries: Vec<(usize, usize)> = rows(queries, 2)?.into_iter().map(|v| (v[0], v[1])).collect();
    if queries.is_empty() {
        return Err("no queries".into());
    }
    let g = build_query_subgraph(&history, &queries);
    let edges: Vec<[usize; 3]> = g.edges().iter().map(|e| [e.subject, e.relation, e.object]).collect();
    Ok(json!({ "edges": edges, "nodes": g.nodes(), "history": history.len() }).to_string())
}

/// Contrastive loss across temperatures for a random batch of three classes
/// whose second view is the first perturbed by `noise` (0 = identical views).
/// `pair` counts only the matching index as positive, `pair_and_label` also
/// same-class candidates, `same_view` contrasts the first view with itself.
pub fn supcon_json(seed: u32, batch: usize, noise: f64, taus: &[f64]) -> Result<String, String> {
    if !(1..=64).contains(&batch) {
        return Err("batch size must be between 1 and 64".into());
    }
    let d = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let unit = |v: Vec<f64>| -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| x / n).collect()
    };
    let mut a = Vec::with_capacity(batch * d);
    let mut c = Vec::with_capacity(batch * d);
    for _ in 0..batch {
        let x = unit((0..d).map(|_| rng.random_range(-1.0..1.0)).collect());
        let y = unit(x.iter().map(|v| v + noise * rng.random_range(-1.0..1.0)).collect());
        a.extend(x);
        c.extend(y);
    }
    let labels: Vec<usize> = (0..batch).map(|i| i % 3).collect();
    let ta = Tensor::from_vec(a, (batch, d), &Device::Cpu).map_err(|e| e.to_string())?;
    let tc = Tensor::from_vec(c, (batch, d), &Device::Cpu).map_err(|e| e.to_string())?;
    let loss = |x: &Tensor, y: &Tensor, tau: f64, view: View, cross: CrossPositives| -> Result<f64, String> {
        supcon_loss(x, y, &labels, tau, view, cross)
            .and_then(|t| Ok(t.to_scalar::<f64>()?))
            .map_err(|e| e.to_string())
    };
    let mut points = Vec::new();
    for &tau in taus {
        points.push(json!({
            "tau": tau,
            "pair": loss(&ta, &tc, tau, View::Cross, CrossPositives::IndexOnly)?,
            "pair_and_label": loss(&ta, &tc, tau, View::Cross, CrossPositives::IndexAndLabel)?,
            "same_view": loss(&ta, &ta, tau, View::Same, CrossPositives::IndexAndLabel)?,
        }));
    }
    Ok(serde_json::Value::Array(points).to_string())
}

/// Incremental trainer over the repetition dataset.
#[wasm_bindgen]
pub struct Trainer {
    kg: TemporalKg,
    state: TrainState,
    cache: Vec<SnapshotTensors>,
    batches: Vec<TimestampBatch>,
}

impl Trainer {
    pub fn create(dim: usize, window: usize, lr: f64, seed: u32) -> Result<Trainer, String> {
        let kg = logcl::synthetic::repetition_dataset().map_err(|e| e.to_string())?;
        let config = TrainConfig {
            dim,
            window,
            lr,
            seed: seed as u64,
            kernels: 8,
            ..TrainConfig::default()
        };
        config.validate().map_err(|e| e.to_string())?;
        let state = TrainState::new(&config, &kg).map_err(|e| e.to_string())?;
        let cache = state.model.snapshot_tensors(&kg).map_err(|e| e.to_string())?;
        let batches = prepare_batches(&kg, Split::Train);
        Ok(Trainer { kg, state, cache, batches })
    }

    pub fn run_epoch(&mut self) -> Result<String, String> {
        let record = train_epoch(&mut self.state, &self.kg, &self.cache, &self.batches).map_err(|e| e.to_string())?;
        let emb = self.state.model.embeddings();
        let valid = evaluate_split(&self.state.model, &self.kg, &self.cache, Split::Valid, &emb).map_err(|e| e.to_string())?;
        let test = evaluate_split(&self.state.model, &self.kg, &self.cache, Split::Test, &emb).map_err(|e| e.to_string())?;
        Ok(json!({
            "epoch": record.epoch + 1,
            "loss": record.loss,
            "tkg_loss": record.tkg_loss,
            "contrast_loss": record.contrast_loss,
            "valid_mrr": valid.filtered.mrr,
            "test_mrr": test.filtered.mrr,
            "test_hits1": test.filtered.hits1,
        })
        .to_string())
    }
}

#[wasm_bindgen]
impl Trainer {
    #[wasm_bindgen(constructor)]
    pub fn new(dim: usize, window: usize, lr: f64, seed: u32) -> Result<Trainer, JsError> {
        Trainer::create(dim, window, lr, seed).map_err(|e| JsError::new(&e))
    }

    /// Trains one epoch and returns JSON with the losses and current MRRs.
    pub fn epoch(&mut self) -> Result<String, JsError> {
        self.run_epoch().map_err(|e| JsError::new(&e))
    }
}

#[wasm_bindgen]
pub fn sample_subgraph(history: &str, queries: &str) -> Result<String, JsError> {
    subgraph_json(history, queries).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn supcon_vs_tau(seed: u32, batch: usize, noise: f64, taus: Vec<f64>) -> Result<String, JsError> {
    supcon_json(seed, batch, noise, &taus).map_err(|e| JsError::new(&e))
}
