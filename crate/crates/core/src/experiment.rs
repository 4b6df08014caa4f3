//! Ablation grids and noise sweeps.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::config::{TrainConfig, Variant};
use crate::dataset::{Split, TemporalKg};
use crate::error::Result;
use crate::metrics::{MetricsReport, ResultRow};
use crate::train::{evaluate_split, inject_noise, noise_seed, online_train, train, TrainOptions, TrainState};

/// Default noise standard deviations.
pub const SIGMA_GRID: [f64; 4] = [0.1, 0.3, 0.5, 1.0];

/// Trains one configuration and reports test metrics (online when configured).
pub fn run_config(kg: &TemporalKg, config: &TrainConfig, options: &TrainOptions) -> Result<(TrainState, MetricsReport)> {
    let mut state = train(kg, config, options)?;
    let report = if config.online {
        online_train(&mut state, kg)?
    } else {
        test_report(&state, kg, config.noise_sigma)?
    };
    Ok((state, report))
}

/// Test metrics with `sigma`-noise added to the trained initial entity matrix.
pub fn test_report(state: &TrainState, kg: &TemporalKg, sigma: f64) -> Result<MetricsReport> {
    let model = &state.model;
    let cache = model.snapshot_tensors(kg)?;
    let mut emb = model.embeddings();
    emb.entities = inject_noise(&emb.entities, sigma, noise_seed(model.config.seed))?;
    evaluate_split(model, kg, &cache, Split::Test, &emb)
}

/// Runs every variant of [`Variant::GRID`] on top of `base`.
pub fn ablation(kg: &TemporalKg, base: &TrainConfig) -> Result<Vec<ResultRow>> {
    Variant::GRID
        .iter()
        .map(|v| {
            let config = v.apply(base);
            let (_, report) = run_config(kg, &config, &TrainOptions::default())?;
            Ok(ResultRow {
                name: config.variant_name(),
                report,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub variant: String,
    pub seed: u64,
    pub sigma: f64,
    pub mrr: f64,
    pub hits1: f64,
}

/// Trains the full model and the variant without contrast once per seed and
/// evaluates each at `sigma = 0` and every value of `sigmas`.
pub fn noise_sweep(kg: &TemporalKg, base: &TrainConfig, sigmas: &[f64], seeds: &[u64]) -> Result<Vec<NoisePoint>> {
    let mut points = Vec::new();
    for variant in [Variant::Full, Variant::NoContrast] {
        for &seed in seeds {
            let mut config = variant.apply(base);
            config.seed = seed;
            config.noise_sigma = 0.0;
            let state = train(kg, &config, &TrainOptions::default())?;
            let mut grid = vec![0.0];
            grid.extend(sigmas.iter().copied().filter(|&s| s != 0.0));
            for sigma in grid {
                let r = test_report(&state, kg, sigma)?;
                points.push(NoisePoint {
                    variant: config.variant_name(),
                    seed,
                    sigma,
                    mrr: r.filtered.mrr,
                    hits1: r.filtered.hits1,
                });
            }
        }
    }
    Ok(points)
}

/// Mean over seeds of `MRR(sigma = 0) - MRR(sigma)` for one variant.
pub fn mean_mrr_drop(points: &[NoisePoint], variant: &str, sigma: f64) -> Option<f64> {
    let mut drops = Vec::new();
    for p in points.iter().filter(|p| p.variant == variant && p.sigma == sigma) {
        let clean = points
            .iter()
            .find(|q| q.variant == variant && q.seed == p.seed && q.sigma == 0.0)?;
        drops.push(clean.mrr - p.mrr);
    }
    if drops.is_empty() {
        None
    } else {
        Some(drops.iter().sum::<f64>() / drops.len() as f64)
    }
}

/// Seed-averaged curve `sigma,variant,mrr,hits1` in percent.
pub fn noise_csv(points: &[NoisePoint]) -> String {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for p in points {
        if !keys.iter().any(|(v, s)| *v == p.variant && *s == p.sigma) {
            keys.push((p.variant.clone(), p.sigma));
        }
    }
    keys.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let mut out = String::from("sigma,variant,mrr,hits1\n");
    for (variant, sigma) in keys {
        let sel: Vec<&NoisePoint> = points.iter().filter(|p| p.variant == variant && p.sigma == sigma).collect();
        let n = sel.len() as f64;
        let mrr = sel.iter().map(|p| p.mrr).sum::<f64>() / n;
        let hits1 = sel.iter().map(|p| p.hits1).sum::<f64>() / n;
        writeln!(out, "{sigma},{variant},{:.2},{:.2}", 100.0 * mrr, 100.0 * hits1).expect("write to string");
    }
    out
}
