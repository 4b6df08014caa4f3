use logcl_wasm::{subgraph_json, supcon_json, Trainer};
use serde_json::Value;

#[test]
fn subgraph_follows_one_hop_answers() {
    let out: Value = serde_json::from_str(&subgraph_json("1 2 3 0\n3 5 7 1\n8 6 9 1\n", "1 2").unwrap()).unwrap();
    assert_eq!(out["edges"], serde_json::json!([[1, 2, 3], [3, 5, 7]]));
    assert_eq!(out["nodes"], serde_json::json!([1, 3, 7]));
    assert!(subgraph_json("1 2 x 0", "1 2").unwrap_err().contains("line 1"));
    assert!(subgraph_json("1 2 3 0", "").is_err());
}

#[test]
fn aligned_views_contrast_better_at_low_temperature() {
    let taus = [0.05, 0.5, 5.0];
    let aligned: Value = serde_json::from_str(&supcon_json(1, 12, 0.0, &taus).unwrap()).unwrap();
    let noisy: Value = serde_json::from_str(&supcon_json(1, 12, 2.0, &taus).unwrap()).unwrap();
    let cross = |v: &Value, i: usize| v[i]["pair"].as_f64().unwrap();
    assert!(cross(&aligned, 0) < cross(&noisy, 0));
    assert!(supcon_json(1, 0, 0.0, &taus).is_err());
}

#[test]
fn trainer_reports_each_epoch() {
    let mut t = Trainer::create(8, 2, 0.01, 3).unwrap();
    let first: Value = serde_json::from_str(&t.run_epoch().unwrap()).unwrap();
    let second: Value = serde_json::from_str(&t.run_epoch().unwrap()).unwrap();
    assert_eq!((first["epoch"].as_u64(), second["epoch"].as_u64()), (Some(1), Some(2)));
    let mrr = second["test_mrr"].as_f64().unwrap();
    assert!(mrr > 0.0 && mrr <= 1.0);
    assert!(Trainer::create(0, 2, 0.01, 3).is_err());
}
