use logcl::dataset::Split;
use logcl::experiment::{run_config, test_report};
use logcl::metrics::{aggregate, raw_rank, Orientation, RankRecord};
use logcl::nn::Ctx;
use logcl::synthetic::repetition_dataset;
use logcl::train::{prepare_batches, train, two_phase_step, TrainOptions};
use logcl::{LogCl, TrainConfig};

fn small(dim: usize, epochs: usize) -> TrainConfig {
    TrainConfig {
        dim,
        kernels: 8,
        window: 3,
        epochs,
        patience: epochs,
        lr: 1e-2,
        ..TrainConfig::default()
    }
}

#[test]
fn step_loss_is_the_sum_of_both_phases() {
    let kg = repetition_dataset().unwrap();
    let model = LogCl::for_dataset(&small(8, 1), &kg).unwrap();
    let cache = model.snapshot_tensors(&kg).unwrap();
    let batch = &prepare_batches(&kg, Split::Train)[5];
    let out = two_phase_step(&model, &mut Ctx::eval(), &kg, &cache, batch, &model.embeddings()).unwrap();
    let scalar = |t: &candle_core::Tensor| t.to_scalar::<f32>().unwrap() as f64;
    let mut expect = 0.0;
    for p in &out.phases {
        assert!(scalar(&p.contrast) > 0.0);
        expect += scalar(&p.tkg) + scalar(&p.contrast);
    }
    assert!((scalar(&out.loss) - expect).abs() < 1e-4 * expect);
    // the inverse phase queries objects through inverse relations
    let [first, second] = &batch.phases;
    assert_eq!(first.len(), second.len());
    assert!(second.queries.iter().all(|&(_, r)| r >= kg.num_relations_base()));
}

#[test]
fn loss_falls_over_the_first_epochs() {
    let kg = repetition_dataset().unwrap();
    let state = train(&kg, &small(16, 5), &TrainOptions { skip_validation: true, ..Default::default() }).unwrap();
    let losses: Vec<f64> = state.history.iter().map(|r| r.loss).collect();
    assert_eq!(losses.len(), 5);
    assert!(losses[4] < losses[0], "{losses:?}");
}

#[test]
fn online_updates_do_not_hurt_on_repetition() {
    let kg = repetition_dataset().unwrap();
    let config = small(16, 4);
    let (offline_state, offline) = run_config(&kg, &config, &TrainOptions::default()).unwrap();
    let online_config = TrainConfig { online: true, ..config };
    let (_, online) = run_config(&kg, &online_config, &TrainOptions::default()).unwrap();
    assert_eq!(test_report(&offline_state, &kg, 0.0).unwrap(), offline);
    assert!(online.filtered.mrr >= offline.filtered.mrr, "online {} offline {}", online.filtered.mrr, offline.filtered.mrr);
}

#[test]
fn reversed_oracle_ranks_last() {
    // scores that place the truth below all nine other entities
    let records: Vec<RankRecord> = (0..10)
        .map(|truth| {
            let scores: Vec<f64> = (0..10).map(|e| if e == truth { -1.0 } else { e as f64 }).collect();
            let r = raw_rank(&scores, truth).unwrap();
            RankRecord {
                subject: 0,
                relation: 0,
                time: 1,
                orientation: Orientation::Original,
                truth,
                raw_rank: r,
                filtered_rank: r,
            }
        })
        .collect();
    let report = aggregate(&records, "reversed").unwrap();
    assert!((report.raw.mrr - 0.1).abs() < 1e-12);
    assert_eq!(report.raw.hits10, 1.0);
    assert_eq!(report.raw.hits3, 0.0);
}
