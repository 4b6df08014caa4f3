mod common;

#[test]
fn sampler_matches_brute_force() {
    assert_eq!(common::sampler_suite(200, 11), Ok(200));
}

#[test]
fn ranks_match_sorting() {
    assert_eq!(common::rank_suite(100, 12), Ok(100));
}

#[test]
fn supcon_matches_pair_enumeration() {
    let worst = common::supcon_suite(100, 13).unwrap();
    assert!(worst < 1e-9);
}

#[test]
fn sampler_index_matches_per_time_histories() {
    use logcl::dataset::{Splits, TemporalKg};
    use logcl::sampler::{build_query_subgraph, HistoryIndex};
    let mut rng = common::rng(14);
    let quads = common::random_history(&mut rng, 60, 8, 3, 12);
    let kg = TemporalKg::new(8, 3, Splits { train: quads.clone(), ..Default::default() }, 1).unwrap();
    let mut index = HistoryIndex::new();
    for t in 0..kg.num_times() {
        index.advance_to(&kg, t);
        let history: Vec<_> = kg.snapshots()[..t]
            .iter()
            .flat_map(|s| s.facts().iter().map(move |f| logcl::Quadruple::new(f.subject, f.relation, f.object, s.time)))
            .collect();
        let queries = [(t % 8, 0), ((t + 3) % 8, 4)];
        assert_eq!(index.subgraph(&queries), build_query_subgraph(&history, &queries));
    }
}
