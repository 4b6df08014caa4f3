//! Historical query subgraph sampling.
//!
//! For a batch of queries `(s, r)` at time `t_q` the subgraph is the timeless
//! union of every historical fact touching a query subject and every
//! historical fact touching one of the subject's past answers for `r`.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write;

use crate::dataset::{EntityId, Quadruple, RelationId, Snapshot, TemporalKg, TimeIndex, Triple};

/// Timeless multigraph of historical facts relevant to a query batch.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QuerySubgraph {
    edges: Vec<Triple>,
    nodes: Vec<EntityId>,
    anchors: Vec<EntityId>,
}

impl QuerySubgraph {
    fn from_edges(mut edges: Vec<Triple>, anchors: Vec<EntityId>) -> Self {
        edges.sort_unstable();
        edges.dedup();
        let mut nodes: Vec<EntityId> = edges.iter().flat_map(|e| [e.subject, e.object]).collect();
        nodes.sort_unstable();
        nodes.dedup();
        Self { edges, nodes, anchors }
    }

    /// Sorted, duplicate-free edges.
    pub fn edges(&self) -> &[Triple] {
        &self.edges
    }

    /// Sorted entity ids appearing as an edge endpoint.
    pub fn nodes(&self) -> &[EntityId] {
        &self.nodes
    }

    /// Query index to its subject entity.
    pub fn anchors(&self) -> &[EntityId] {
        &self.anchors
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Deterministic `s r o` edge list, one edge per line.
    pub fn dump(&self) -> String {
        let mut out = String::with_capacity(self.edges.len() * 12);
        for e in &self.edges {
            writeln!(out, "{e}").expect("write to string");
        }
        out
    }
}

/// Incidence index over all timeless facts seen so far.
///
/// Snapshots are appended in time order with [`HistoryIndex::advance_to`], so
/// sampling for consecutive query times reuses the work done for earlier ones.
#[derive(Clone, Debug, Default)]
pub struct HistoryIndex {
    triples: Vec<Triple>,
    ids: HashMap<Triple, usize>,
    incident: HashMap<EntityId, Vec<usize>>,
    answers: HashMap<(EntityId, RelationId), BTreeSet<EntityId>>,
    upto: TimeIndex,
}

impl HistoryIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds an index over an explicit history list.
    pub fn from_history(history: &[Quadruple]) -> Self {
        let mut index = Self::new();
        for q in history {
            index.insert(q.triple());
        }
        index
    }

    /// Exclusive upper bound of the snapshot times indexed so far.
    pub fn upto(&self) -> TimeIndex {
        self.upto
    }

    pub fn num_facts(&self) -> usize {
        self.triples.len()
    }

    pub fn insert(&mut self, triple: Triple) {
        if self.ids.contains_key(&triple) {
            return;
        }
        let id = self.triples.len();
        self.triples.push(triple);
        self.ids.insert(triple, id);
        self.incident.entry(triple.subject).or_default().push(id);
        if triple.object != triple.subject {
            self.incident.entry(triple.object).or_default().push(id);
        }
        self.answers
            .entry((triple.subject, triple.relation))
            .or_default()
            .insert(triple.object);
    }

    pub fn extend(&mut self, snapshot: &Snapshot) {
        for f in snapshot.facts() {
            self.insert(*f);
        }
    }

    /// Indexes every snapshot with time `< t`. Rewinding is not supported;
    /// a smaller `t` than already indexed leaves the index untouched.
    pub fn advance_to(&mut self, kg: &TemporalKg, t: TimeIndex) {
        let end = t.min(kg.num_times());
        while self.upto < end {
            self.extend(&kg.snapshots()[self.upto]);
            self.upto += 1;
        }
    }

    pub fn one_hop_targets(&self, subject: EntityId, relation: RelationId) -> BTreeSet<EntityId> {
        self.answers.get(&(subject, relation)).cloned().unwrap_or_default()
    }

    pub fn subgraph(&self, queries: &[(EntityId, RelationId)]) -> QuerySubgraph {
        let mut seen = vec![false; self.triples.len()];
        let mut visited_entities: BTreeSet<EntityId> = BTreeSet::new();
        let mut edges = Vec::new();
        let mut take = |entity: EntityId, edges: &mut Vec<Triple>| {
            if !visited_entities.insert(entity) {
                return;
            }
            for &id in self.incident.get(&entity).map(Vec::as_slice).unwrap_or(&[]) {
                if !seen[id] {
                    seen[id] = true;
                    edges.push(self.triples[id]);
                }
            }
        };
        for &(s, r) in queries {
            take(s, &mut edges);
            if let Some(targets) = self.answers.get(&(s, r)) {
                for &o in targets {
                    take(o, &mut edges);
                }
            }
        }
        QuerySubgraph::from_edges(edges, queries.iter().map(|q| q.0).collect())
    }
}

/// `{ o : (s, r, o, t) in history }`.
pub fn one_hop_targets(history: &[Quadruple], subject: EntityId, relation: RelationId) -> BTreeSet<EntityId> {
    history
        .iter()
        .filter(|q| q.subject == subject && q.relation == relation)
        .map(|q| q.object)
        .collect()
}

/// Samples the subgraph for `queries` from an explicit history list.
pub fn build_query_subgraph(history: &[Quadruple], queries: &[(EntityId, RelationId)]) -> QuerySubgraph {
    HistoryIndex::from_history(history).subgraph(queries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: usize, r: usize, o: usize, t: usize) -> Quadruple {
        Quadruple::new(s, r, o, t)
    }

    #[test]
    fn targets_by_definition() {
        let history = [q(1, 2, 3, 0), q(1, 2, 4, 5)];
        assert_eq!(one_hop_targets(&history, 1, 2).into_iter().collect::<Vec<_>>(), vec![3, 4]);
        assert!(one_hop_targets(&history, 1, 9).is_empty());
        let index = HistoryIndex::from_history(&history);
        assert_eq!(index.one_hop_targets(1, 2), one_hop_targets(&history, 1, 2));
    }

    #[test]
    fn empty_history_gives_empty_subgraph() {
        let g = build_query_subgraph(&[], &[(1, 2)]);
        assert!(g.is_empty());
        assert!(g.nodes().is_empty());
        assert_eq!(g.anchors(), &[1]);
    }

    #[test]
    fn two_hop_rule_hand_trace() {
        let history = [q(1, 2, 3, 0), q(3, 5, 7, 1), q(8, 6, 9, 1)];
        let g = build_query_subgraph(&history, &[(1, 2)]);
        assert_eq!(g.edges(), &[Triple::new(1, 2, 3), Triple::new(3, 5, 7)]);
        assert_eq!(g.nodes(), &[1, 3, 7]);
        assert_eq!(g.dump(), "1 2 3\n3 5 7\n");
    }

    #[test]
    fn time_is_dropped() {
        let g = build_query_subgraph(&[q(1, 2, 3, 0), q(1, 2, 3, 4)], &[(1, 2)]);
        assert_eq!(g.edges().len(), 1);
    }

    #[test]
    fn object_incidence_counts() {
        // the query subject appears only as an object
        let g = build_query_subgraph(&[q(5, 0, 1, 0)], &[(1, 3)]);
        assert_eq!(g.edges(), &[Triple::new(5, 0, 1)]);
    }

    #[test]
    fn unknown_subject_contributes_nothing() {
        let history = [q(1, 2, 3, 0)];
        let g = build_query_subgraph(&history, &[(1, 2), (42, 0)]);
        assert_eq!(g.edges().len(), 1);
    }
}
