//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use logcl::dataset::{Quadruple, Triple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random history of `len` quadruples over small id ranges so that shared
/// entities and repeated facts are common.
pub fn random_history(rng: &mut ChaCha8Rng, len: usize, entities: usize, relations: usize, times: usize) -> Vec<Quadruple> {
    (0..len)
        .map(|_| {
            Quadruple::new(
                rng.random_range(0..entities),
                rng.random_range(0..relations),
                rng.random_range(0..entities),
                rng.random_range(0..times),
            )
        })
        .collect()
}

/// Subgraph edges by definition: every distinct historical triple with an
/// endpoint among the query subjects or their past answers.
pub fn brute_subgraph(history: &[Quadruple], queries: &[(usize, usize)]) -> Vec<Triple> {
    let mut seeds = BTreeSet::new();
    for &(s, r) in queries {
        seeds.insert(s);
        for q in history {
            if q.subject == s && q.relation == r {
                seeds.insert(q.object);
            }
        }
    }
    let edges: BTreeSet<Triple> = history
        .iter()
        .filter(|q| seeds.contains(&q.subject) || seeds.contains(&q.object))
        .map(|q| q.triple())
        .collect();
    edges.into_iter().collect()
}

/// Rank by sorting: the truth's tied block occupies positions `lo..=hi`
/// (1-based) in the descending order, and its rank is the block midpoint.
pub fn brute_rank(scores: &[f64], truth: usize, removed: &BTreeSet<usize>) -> f64 {
    let mut kept: Vec<f64> = scores
        .iter()
        .enumerate()
        .filter(|(e, _)| *e == truth || !removed.contains(e))
        .map(|(_, &s)| s)
        .collect();
    kept.sort_by(|a, b| b.total_cmp(a));
    let target = scores[truth];
    let lo = kept.iter().position(|&s| s == target).unwrap() + 1;
    let hi = kept.iter().rposition(|&s| s == target).unwrap() + 1;
    (lo + hi) as f64 / 2.0
}

/// Supervised contrastive loss by explicit pair enumeration.
/// `cross`: anchors and candidates come from different views.
/// `label_positives`: in the cross view, candidates sharing the anchor's
/// label are positives as well as the same index.
pub fn brute_supcon(a: &[Vec<f64>], c: &[Vec<f64>], labels: &[usize], tau: f64, cross: bool, label_positives: bool) -> f64 {
    let n = a.len();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let mut total = 0.0;
    for i in 0..n {
        let others: Vec<usize> = (0..n).filter(|&k| cross || k != i).collect();
        let denom: f64 = others.iter().map(|&k| (dot(&a[i], &c[k]) / tau).exp()).sum();
        let positives: Vec<usize> = others
            .iter()
            .copied()
            .filter(|&j| if cross { j == i || (label_positives && labels[j] == labels[i]) } else { labels[j] == labels[i] })
            .collect();
        if positives.is_empty() {
            continue;
        }
        let s: f64 = positives.iter().map(|&j| ((dot(&a[i], &c[j]) / tau).exp() / denom).ln()).sum();
        total -= s / positives.len() as f64;
    }
    total / n as f64
}

pub fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Sampler against [`brute_subgraph`] on `cases` random histories of at most
/// 50 quadruples. Returns the number of cases checked.
pub fn sampler_suite(cases: usize, seed: u64) -> Result<usize, String> {
    use logcl::sampler::build_query_subgraph;
    let mut rng = rng(seed);
    for case in 0..cases {
        let len = rng.random_range(0..=50);
        let ents = rng.random_range(2..12);
        let rels = rng.random_range(1..5);
        let history = random_history(&mut rng, len, ents, rels, 10);
        let nq = rng.random_range(1..5);
        let queries: Vec<(usize, usize)> = (0..nq).map(|_| (rng.random_range(0..ents), rng.random_range(0..rels))).collect();
        let got = build_query_subgraph(&history, &queries);
        let want = brute_subgraph(&history, &queries);
        if got.edges() != want.as_slice() {
            return Err(format!("case {case}: sampled {:?}, expected {want:?}", got.edges()));
        }
    }
    Ok(cases)
}

/// Filtered and raw ranks against [`brute_rank`] on `cases` random score
/// vectors with deliberate ties and random co-true sets.
pub fn rank_suite(cases: usize, seed: u64) -> Result<usize, String> {
    use logcl::dataset::Snapshot;
    use logcl::metrics::{raw_rank, time_aware_filtered_rank};
    let mut rng = rng(seed);
    for case in 0..cases {
        let n = rng.random_range(1..40);
        // coarse levels force ties
        let levels = rng.random_range(1..6);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.25 - 0.5).collect();
        let truth = rng.random_range(0..n);
        let (s, r, t) = (rng.random_range(0..n), rng.random_range(0..3), rng.random_range(0..20));
        let mut facts = Vec::new();
        let mut removed = BTreeSet::new();
        for e in 0..n {
            if rng.random_bool(0.3) {
                facts.push(Triple::new(s, r, e));
                if e != truth {
                    removed.insert(e);
                }
            }
            // facts that must not filter
            if rng.random_bool(0.2) {
                facts.push(Triple::new(s, r + 3, e));
            }
        }
        let snap = Snapshot::new(t, facts);
        let filtered = time_aware_filtered_rank(&scores, truth, (s, r, t), &snap).map_err(|e| e.to_string())?;
        let raw = raw_rank(&scores, truth).map_err(|e| e.to_string())?;
        let (bf, br) = (brute_rank(&scores, truth, &removed), brute_rank(&scores, truth, &BTreeSet::new()));
        if filtered != bf || raw != br {
            return Err(format!("case {case}: filtered {filtered} vs {bf}, raw {raw} vs {br}"));
        }
    }
    Ok(cases)
}

/// Contrastive loss against [`brute_supcon`] on random batches of size 1..=8
/// in every view and positive mode. Returns the largest absolute error.
pub fn supcon_suite(cases: usize, seed: u64) -> Result<f64, String> {
    use candle_core::{Device, Tensor};
    use logcl::contrast::{supcon_loss, CrossPositives, View};
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    let tensor = |rows: &[Vec<f64>]| {
        let d = rows[0].len();
        Tensor::from_vec(rows.concat(), (rows.len(), d), &Device::Cpu).unwrap()
    };
    for case in 0..cases {
        let n = rng.random_range(1..=8);
        let d = rng.random_range(2..6);
        let a = unit_rows(&mut rng, n, d);
        let c = unit_rows(&mut rng, n, d);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let tau = [0.03, 0.1, 0.5, 1.0][rng.random_range(0..4)];
        for (view, cross, label_pos) in [
            (View::Cross, CrossPositives::IndexAndLabel, true),
            (View::Cross, CrossPositives::IndexOnly, false),
            (View::Same, CrossPositives::IndexAndLabel, false),
        ] {
            let cands = if view == View::Same { &a } else { &c };
            let got = supcon_loss(&tensor(&a), &tensor(cands), &labels, tau, view, cross)
                .and_then(|t| Ok(t.to_scalar::<f64>()?))
                .map_err(|e| e.to_string())?;
            let want = brute_supcon(&a, cands, &labels, tau, view == View::Cross, label_pos);
            let err = (got - want).abs() / want.abs().max(1.0);
            worst = worst.max(err);
            if !(err < 1e-9) {
                return Err(format!("case {case} {view:?}/{cross:?}: {got} vs {want}"));
            }
        }
    }
    Ok(worst)
}

/// Parameter groups that the gradient check must cover, with the name
/// prefixes belonging to each.
pub const GRAD_GROUPS: &[(&str, &[&str])] = &[
    ("time encoding", &["local.time."]),
    ("local r-gcn", &["local.rgcn."]),
    ("global r-gcn", &["global.rgcn."]),
    ("gru", &["local.gru."]),
    ("relation gate", &["local.relation_gate."]),
    ("local attention", &["local.w4.", "local.w5."]),
    ("global attention", &["global.w6."]),
    ("local projection", &["contrast.local."]),
    ("global projection", &["contrast.global."]),
    ("scorer", &["decoder."]),
    ("embeddings", &["entity.h0", "relation.r0", "local.w0."]),
];

#[derive(Debug)]
pub struct GradReport {
    pub dim: usize,
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
    pub uncovered: Vec<&'static str>,
}

/// Floor on the denominator of the relative error, so that entries whose
/// true derivative is zero are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-5;
pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// Central finite differences against autodiff for the full two-phase loss
/// of one timestamp, in f64 and the deterministic eval context.
pub fn gradcheck(dim: usize, seed: u64, per_tensor: usize) -> logcl::Result<GradReport> {
    use candle_core::Tensor;
    use logcl::config::Precision;
    use logcl::dataset::{Split, Splits, TemporalKg};
    use logcl::nn::Ctx;
    use logcl::train::{prepare_batches, two_phase_step};
    use logcl::{LogCl, TrainConfig};

    let mut rng = rng(seed);
    let train = random_history(&mut rng, 40, 6, 2, 5);
    let kg = TemporalKg::new(6, 2, Splits { train, ..Default::default() }, 1)?;
    let config = TrainConfig {
        dim,
        kernels: 3,
        window: 2,
        tau: 0.5,
        precision: Precision::F64,
        seed,
        ..TrainConfig::default()
    };
    let model = LogCl::for_dataset(&config, &kg)?;
    // Zero-initialized biases put ReLUs exactly on their kinks; moving every
    // parameter to a generic point keeps the check away from them.
    for (name, var) in model.store.params() {
        let v: Vec<f64> = var.as_tensor().flatten_all()?.to_vec1::<f64>()?;
        let v: Vec<f64> = v.into_iter().map(|x| x + rng.random_range(-0.1..0.1)).collect();
        model.store.assign(name, &Tensor::from_vec(v, var.dims(), var.device())?)?;
    }
    let cache = model.snapshot_tensors(&kg)?;
    // A projection whose raw output is exactly zero (every hidden unit dead,
    // zero bias) sits on the epsilon guard of the normalization, where the
    // loss has curvature of order 1/eps and finite differences are
    // meaningless. Such timestamps are skipped.
    let mut batches: Vec<_> = prepare_batches(&kg, Split::Train).into_iter().filter(|b| b.time > 0).collect();
    batches.sort_by_key(|b| std::cmp::Reverse((b.phases[0].len(), b.time)));
    let mut batch = None;
    for b in batches {
        let out = two_phase_step(&model, &mut Ctx::eval(), &kg, &cache, &b, &model.embeddings())?;
        if out.phases.iter().all(|p| p.degenerate_projections == 0) {
            batch = Some(b);
            break;
        }
    }
    let batch = batch.ok_or_else(|| logcl::LogclError::InvalidArgument("every timestamp has a degenerate projection".into()))?;
    let loss = || -> logcl::Result<(f64, Tensor)> {
        let out = two_phase_step(&model, &mut Ctx::eval(), &kg, &cache, &batch, &model.embeddings())?;
        Ok((out.loss.to_scalar::<f64>()?, out.loss))
    };
    let (_, l) = loss()?;
    let grads = l.backward()?;

    let mut report = GradReport { dim, checked: 0, worst: 0.0, worst_at: String::new(), uncovered: Vec::new() };
    let mut covered = BTreeSet::new();
    for (name, var) in model.store.params() {
        let original = var.as_tensor().flatten_all()?.to_vec1::<f64>()?;
        let analytic = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_vec1::<f64>()?,
            None => vec![0.0; original.len()],
        };
        let shape = var.dims().to_vec();
        for _ in 0..per_tensor.min(original.len()) {
            let i = rng.random_range(0..original.len());
            let probe = |delta: f64| -> logcl::Result<f64> {
                let mut v = original.clone();
                v[i] += delta;
                model.store.assign(name, &Tensor::from_vec(v, shape.clone(), var.device())?)?;
                Ok(loss()?.0)
            };
            let numeric = (probe(GRAD_STEP)? - probe(-GRAD_STEP)?) / (2.0 * GRAD_STEP);
            model.store.assign(name, &Tensor::from_vec(original.clone(), shape.clone(), var.device())?)?;
            let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(GRAD_FLOOR);
            report.checked += 1;
            if err > report.worst || report.worst_at.is_empty() {
                report.worst = err;
                report.worst_at = format!("{name}[{i}] analytic {:.6e} numeric {numeric:.6e}", analytic[i]);
            }
        }
        for (group, prefixes) in GRAD_GROUPS {
            if prefixes.iter().any(|p| name.starts_with(p)) {
                covered.insert(*group);
            }
        }
    }
    report.uncovered = GRAD_GROUPS.iter().map(|g| g.0).filter(|g| !covered.contains(g)).collect();
    Ok(report)
}
