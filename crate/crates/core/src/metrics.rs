//! Raw and time-aware filtered ranking metrics.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{EntityId, RelationId, Snapshot, TimeIndex};
use crate::error::{LogclError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Original,
    Inverse,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    pub subject: EntityId,
    pub relation: RelationId,
    pub time: TimeIndex,
    pub orientation: Orientation,
    pub truth: EntityId,
    pub raw_rank: f64,
    pub filtered_rank: f64,
}

/// Rank of `truth` among the entities kept by `keep`; tied entities share the
/// mean rank of their block.
fn mean_tie_rank(scores: &[f64], truth: EntityId, keep: impl Fn(EntityId) -> bool) -> Result<f64> {
    let Some(&target) = scores.get(truth) else {
        return Err(LogclError::InvalidArgument(format!("truth {truth} outside {} scores", scores.len())));
    };
    if !target.is_finite() {
        return Err(LogclError::MetricSanity(format!("non-finite score {target} for the truth")));
    }
    let mut higher = 0usize;
    let mut tied = 0usize;
    for (e, &s) in scores.iter().enumerate() {
        if e == truth || !keep(e) {
            continue;
        }
        if s.is_nan() {
            return Err(LogclError::MetricSanity(format!("NaN score for entity {e}")));
        }
        if s > target {
            higher += 1;
        } else if s == target {
            tied += 1;
        }
    }
    Ok(1.0 + higher as f64 + tied as f64 / 2.0)
}

pub fn raw_rank(scores: &[f64], truth: EntityId) -> Result<f64> {
    mean_tie_rank(scores, truth, |_| true)
}

/// Rank after removing every other object `e` with `(s, r, e)` true at the
/// query time.
pub fn time_aware_filtered_rank(
    scores: &[f64],
    truth: EntityId,
    query: (EntityId, RelationId, TimeIndex),
    facts_at_t: &Snapshot,
) -> Result<f64> {
    let (s, r, t) = query;
    if facts_at_t.time != t {
        return Err(LogclError::InvalidArgument(format!(
            "filter snapshot at {} for a query at {t}",
            facts_at_t.time
        )));
    }
    let co_true: Vec<EntityId> = facts_at_t.objects(s, r).filter(|&e| e != truth).collect();
    mean_tie_rank(scores, truth, |e| co_true.binary_search(&e).is_err())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub count: usize,
}

impl Metrics {
    pub fn from_ranks(ranks: impl IntoIterator<Item = f64>) -> Self {
        let mut m = Metrics::default();
        for r in ranks {
            m.mrr += 1.0 / r;
            m.hits1 += (r <= 1.0) as u8 as f64;
            m.hits3 += (r <= 3.0) as u8 as f64;
            m.hits10 += (r <= 10.0) as u8 as f64;
            m.count += 1;
        }
        if m.count > 0 {
            let n = m.count as f64;
            m.mrr /= n;
            m.hits1 /= n;
            m.hits3 /= n;
            m.hits10 /= n;
        }
        m
    }

    pub fn check(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(in_unit(self.mrr) && in_unit(self.hits1) && in_unit(self.hits3) && in_unit(self.hits10)) {
            return Err(LogclError::MetricSanity(format!("metric outside [0, 1]: {self:?}")));
        }
        if !(self.hits1 <= self.hits3 && self.hits3 <= self.hits10) {
            return Err(LogclError::MetricSanity(format!("hits are not monotone in k: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub filtered: Metrics,
    pub raw: Metrics,
    pub per_time: BTreeMap<TimeIndex, Metrics>,
    pub fingerprint: String,
}

impl MetricsReport {
    /// Asserts the report-level invariants.
    pub fn check(&self) -> Result<()> {
        self.filtered.check()?;
        self.raw.check()?;
        for m in self.per_time.values() {
            m.check()?;
        }
        if self.filtered.mrr + 1e-12 < self.raw.mrr {
            return Err(LogclError::MetricSanity("filtered MRR below raw MRR".into()));
        }
        Ok(())
    }
}

/// MRR and Hits@k over filtered ranks, with raw counterparts and a
/// per-timestamp breakdown.
pub fn aggregate(records: &[RankRecord], fingerprint: &str) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(LogclError::InvalidArgument("no rank records to aggregate".into()));
    }
    for r in records {
        if !(1.0 <= r.filtered_rank && r.filtered_rank <= r.raw_rank) {
            return Err(LogclError::MetricSanity(format!(
                "ranks out of order for ({}, {}, ?, {}): filtered {} raw {}",
                r.subject, r.relation, r.time, r.filtered_rank, r.raw_rank
            )));
        }
    }
    let mut by_time: BTreeMap<TimeIndex, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_time.entry(r.time).or_default().push(r.filtered_rank);
    }
    let report = MetricsReport {
        filtered: Metrics::from_ranks(records.iter().map(|r| r.filtered_rank)),
        raw: Metrics::from_ranks(records.iter().map(|r| r.raw_rank)),
        per_time: by_time.into_iter().map(|(t, ranks)| (t, Metrics::from_ranks(ranks))).collect(),
        fingerprint: fingerprint.to_string(),
    };
    report.check()?;
    Ok(report)
}

/// A named result row for tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub name: String,
    pub report: MetricsReport,
}

pub const CSV_HEADER: &str = "config,setting,metric,value";

/// One line per config, setting and metric, values in percent.
pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for row in rows {
        for (setting, m) in [("filtered", &row.report.filtered), ("raw", &row.report.raw)] {
            for (metric, v) in [("mrr", m.mrr), ("hits@1", m.hits1), ("hits@3", m.hits3), ("hits@10", m.hits10)] {
                writeln!(out, "{},{setting},{metric},{:.2}", csv_field(&row.name), 100.0 * v).expect("write to string");
            }
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Markdown table of time-aware filtered metrics in percent.
pub fn to_markdown(rows: &[ResultRow]) -> String {
    let mut out = String::from("| Model | MRR | Hits@1 | Hits@3 | Hits@10 |\n|---|---|---|---|---|\n");
    for row in rows {
        let m = &row.report.filtered;
        writeln!(
            out,
            "| {} | {:.2} | {:.2} | {:.2} | {:.2} |",
            row.name,
            100.0 * m.mrr,
            100.0 * m.hits1,
            100.0 * m.hits3,
            100.0 * m.hits10
        )
        .expect("write to string");
    }
    out
}

/// Merges row sets, sorted by name; later duplicates replace earlier ones.
pub fn merge_rows(sets: impl IntoIterator<Item = Vec<ResultRow>>) -> Vec<ResultRow> {
    let mut merged: BTreeMap<String, ResultRow> = BTreeMap::new();
    for set in sets {
        for row in set {
            merged.insert(row.name.clone(), row);
        }
    }
    merged.into_values().collect()
}
