//! Quadruple datasets in the `train.txt` / `valid.txt` / `test.txt` / `stat.txt`
//! layout used by the ICEWS and GDELT benchmark distributions.
//!
//! Raw timestamps are divided by the dataset granularity so that snapshots are
//! indexed `0..num_times`. Every fact is stored together with its inverse
//! `(o, r + |R|, s, t)` inside the snapshots; split lists keep the original
//! orientation only.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LogclError, Result};

pub type EntityId = usize;
pub type RelationId = usize;
pub type TimeIndex = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Quadruple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
    pub time: TimeIndex,
}

impl Quadruple {
    pub fn new(subject: EntityId, relation: RelationId, object: EntityId, time: TimeIndex) -> Self {
        Self {
            subject,
            relation,
            object,
            time,
        }
    }

    pub fn triple(&self) -> Triple {
        Triple::new(self.subject, self.relation, self.object)
    }
}

/// A fact with its time dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

impl Triple {
    pub fn new(subject: EntityId, relation: RelationId, object: EntityId) -> Self {
        Self {
            subject,
            relation,
            object,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.subject, self.relation, self.object)
    }
}

/// All facts valid at one timestamp, sorted and deduplicated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snapshot {
    pub time: TimeIndex,
    facts: Vec<Triple>,
}

impl Snapshot {
    pub fn new(time: TimeIndex, mut facts: Vec<Triple>) -> Self {
        facts.sort_unstable();
        facts.dedup();
        Self { time, facts }
    }

    pub fn empty(time: TimeIndex) -> Self {
        Self {
            time,
            facts: Vec::new(),
        }
    }

    pub fn facts(&self) -> &[Triple] {
        &self.facts
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.facts.binary_search(triple).is_ok()
    }

    /// Objects `o` with `(subject, relation, o)` in this snapshot.
    pub fn objects(&self, subject: EntityId, relation: RelationId) -> impl Iterator<Item = EntityId> + '_ {
        let lo = Triple::new(subject, relation, 0);
        let start = self.facts.partition_point(|t| *t < lo);
        self.facts[start..]
            .iter()
            .take_while(move |t| t.subject == subject && t.relation == relation)
            .map(|t| t.object)
    }

    /// Distinct relation types leaving `entity` (facts with `entity` as subject).
    pub fn relations_of(&self, entity: EntityId) -> Vec<RelationId> {
        let start = self.facts.partition_point(|t| t.subject < entity);
        let mut rels: Vec<RelationId> = self.facts[start..]
            .iter()
            .take_while(|t| t.subject == entity)
            .map(|t| t.relation)
            .collect();
        rels.dedup();
        rels
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Valid => "valid.txt",
            Split::Test => "test.txt",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = LogclError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(LogclError::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<Quadruple>,
    pub valid: Vec<Quadruple>,
    pub test: Vec<Quadruple>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[Quadruple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    fn iter_all(&self) -> impl Iterator<Item = &Quadruple> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub granularity: u64,
    pub snapshots: usize,
}

/// An integer-coded temporal knowledge graph.
#[derive(Clone, Debug)]
pub struct TemporalKg {
    num_entities: usize,
    num_relations_base: usize,
    granularity: u64,
    splits: Splits,
    snapshots: Vec<Snapshot>,
    by_time: [BTreeMap<TimeIndex, Vec<Quadruple>>; 3],
}

impl TemporalKg {
    /// Builds the graph from time-normalized split lists.
    pub fn new(num_entities: usize, num_relations_base: usize, splits: Splits, granularity: u64) -> Result<Self> {
        for q in splits.iter_all() {
            if q.subject >= num_entities || q.object >= num_entities || q.relation >= num_relations_base {
                return Err(LogclError::InvalidArgument(format!(
                    "quadruple {q:?} out of range for |E| = {num_entities}, |R| = {num_relations_base}"
                )));
            }
        }
        let all: Vec<Quadruple> = splits.iter_all().copied().collect();
        let augmented = add_inverse(&all, num_relations_base)?;
        let num_times = all.iter().map(|q| q.time + 1).max().unwrap_or(0);
        let mut snapshots: Vec<Snapshot> = (0..num_times).map(Snapshot::empty).collect();
        for snap in build_snapshots(&augmented) {
            let t = snap.time;
            snapshots[t] = snap;
        }
        let group = |qs: &[Quadruple]| {
            let mut m: BTreeMap<TimeIndex, Vec<Quadruple>> = BTreeMap::new();
            for q in qs {
                m.entry(q.time).or_default().push(*q);
            }
            m
        };
        let by_time = [group(&splits.train), group(&splits.valid), group(&splits.test)];
        Ok(Self {
            num_entities,
            num_relations_base,
            granularity,
            splits,
            snapshots,
            by_time,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations_base(&self) -> usize {
        self.num_relations_base
    }

    /// Relation vocabulary size after inverse augmentation, `2|R|`.
    pub fn num_relations(&self) -> usize {
        2 * self.num_relations_base
    }

    pub fn num_times(&self) -> usize {
        self.snapshots.len()
    }

    pub fn granularity(&self) -> u64 {
        self.granularity
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn snapshot(&self, t: TimeIndex) -> Option<&Snapshot> {
        self.snapshots.get(t)
    }

    /// Distinct timestamps that carry at least one quadruple of `split`, ascending.
    pub fn split_times(&self, split: Split) -> Vec<TimeIndex> {
        self.by_time[split as usize].keys().copied().collect()
    }

    /// Original-orientation quadruples of `split` at time `t`, duplicates retained.
    pub fn split_at(&self, split: Split, t: TimeIndex) -> &[Quadruple] {
        self.by_time[split as usize].get(&t).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            entities: self.num_entities,
            relations: self.num_relations_base,
            train: self.splits.train.len(),
            valid: self.splits.valid.len(),
            test: self.splits.test.len(),
            granularity: self.granularity,
            snapshots: self.num_times(),
        }
    }

    /// Keeps the facts with time `< end` and re-splits them by time:
    /// `[0, train_end)` train, `[train_end, valid_end)` valid, `[valid_end, end)` test.
    pub fn resplit_by_time(&self, train_end: TimeIndex, valid_end: TimeIndex, end: TimeIndex) -> Result<Self> {
        if !(train_end <= valid_end && valid_end <= end) {
            return Err(LogclError::InvalidArgument(format!(
                "resplit boundaries must be ordered, got {train_end} <= {valid_end} <= {end}"
            )));
        }
        let mut splits = Splits::default();
        for q in self.splits.iter_all() {
            if q.time < train_end {
                splits.train.push(*q);
            } else if q.time < valid_end {
                splits.valid.push(*q);
            } else if q.time < end {
                splits.test.push(*q);
            }
        }
        TemporalKg::new(self.num_entities, self.num_relations_base, splits, self.granularity)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Raw time units per snapshot. `None` infers the gcd of all raw timestamps.
    pub granularity: Option<u64>,
}

/// Loads a dataset directory, inferring the time granularity.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<TemporalKg> {
    load_dataset_with(root, LoadOptions::default())
}

pub fn load_dataset_with(root: impl AsRef<Path>, options: LoadOptions) -> Result<TemporalKg> {
    let root = root.as_ref();
    let (num_entities, num_relations) = read_stat(&root.join("stat.txt"))?;

    let mut raw: Vec<Vec<[u64; 4]>> = Vec::with_capacity(3);
    for split in Split::ALL {
        let path = root.join(split.file_name());
        raw.push(read_rows(&path, num_entities, num_relations)?);
    }

    let granularity = match options.granularity {
        Some(0) => return Err(LogclError::InvalidArgument("granularity must be positive".into())),
        Some(g) => g,
        None => {
            let g = raw.iter().flatten().fold(0u64, |acc, row| gcd(acc, row[3]));
            g.max(1)
        }
    };

    let to_quads = |rows: &[[u64; 4]]| -> Vec<Quadruple> {
        rows.iter()
            .map(|r| Quadruple::new(r[0] as usize, r[1] as usize, r[2] as usize, (r[3] / granularity) as usize))
            .collect()
    };
    let splits = Splits {
        train: to_quads(&raw[0]),
        valid: to_quads(&raw[1]),
        test: to_quads(&raw[2]),
    };
    TemporalKg::new(num_entities, num_relations, splits, granularity)
}

/// Writes the split files with raw times (`index * granularity`) and a
/// `stat.txt`. Loading with the same granularity restores `kg` exactly.
pub fn write_dataset(kg: &TemporalKg, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| LogclError::io(root, e))?;
    let stat = root.join("stat.txt");
    fs::write(&stat, format!("{}\t{}\n", kg.num_entities, kg.num_relations_base)).map_err(|e| LogclError::io(&stat, e))?;
    for split in Split::ALL {
        let path = root.join(split.file_name());
        let mut out = Vec::new();
        for q in kg.splits.get(split) {
            writeln!(out, "{}\t{}\t{}\t{}", q.subject, q.relation, q.object, q.time as u64 * kg.granularity).expect("write to vec");
        }
        fs::write(&path, out).map_err(|e| LogclError::io(&path, e))?;
    }
    Ok(())
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn read_stat(path: &Path) -> Result<(usize, usize)> {
    let text = fs::read_to_string(path).map_err(|e| LogclError::io(path, e))?;
    let parse_err = |line: usize, message: String| LogclError::Parse {
        file: path.to_path_buf(),
        line,
        message,
    };
    let (idx, line) = text
        .lines()
        .enumerate()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| parse_err(1, "empty stat file".into()))?;
    let nums: Vec<&str> = line.split_whitespace().collect();
    if nums.len() < 2 {
        return Err(parse_err(idx + 1, "expected `|E| |R|`".into()));
    }
    let parse = |tok: &str| {
        tok.parse::<usize>()
            .map_err(|_| parse_err(idx + 1, format!("non-integer token `{tok}`")))
    };
    Ok((parse(nums[0])?, parse(nums[1])?))
}

fn read_rows(path: &Path, num_entities: usize, num_relations: usize) -> Result<Vec<[u64; 4]>> {
    let text = fs::read_to_string(path).map_err(|e| LogclError::io(path, e))?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| LogclError::Parse {
            file: PathBuf::from(path),
            line: idx + 1,
            message,
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 4 {
            return Err(err(format!("expected `s r o t`, found {} column(s)", toks.len())));
        }
        let mut row = [0u64; 4];
        for (slot, tok) in row.iter_mut().zip(&toks[..4]) {
            *slot = tok.parse().map_err(|_| err(format!("non-integer token `{tok}`")))?;
        }
        if row[0] as usize >= num_entities || row[2] as usize >= num_entities {
            return Err(err(format!(
                "entity id out of range (|E| = {num_entities}): {} / {}",
                row[0], row[2]
            )));
        }
        if row[1] as usize >= num_relations {
            return Err(err(format!("relation id {} out of range (|R| = {num_relations})", row[1])));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Appends `(o, r + base, s, t)` for every quadruple, keeping the originals first.
pub fn add_inverse(quads: &[Quadruple], num_relations_base: usize) -> Result<Vec<Quadruple>> {
    let mut out = Vec::with_capacity(2 * quads.len());
    out.extend_from_slice(quads);
    for q in quads {
        if q.relation >= num_relations_base {
            return Err(LogclError::DoubleAugmentation {
                relation: q.relation,
                base: num_relations_base,
            });
        }
        out.push(inverse_of(q, num_relations_base));
    }
    Ok(out)
}

/// The inverse-orientation counterpart of an original quadruple.
pub fn inverse_of(q: &Quadruple, num_relations_base: usize) -> Quadruple {
    Quadruple::new(q.object, q.relation + num_relations_base, q.subject, q.time)
}

/// One snapshot per distinct time, ascending, facts deduplicated.
pub fn build_snapshots(quads: &[Quadruple]) -> Vec<Snapshot> {
    let mut by_time: BTreeMap<TimeIndex, Vec<Triple>> = BTreeMap::new();
    for q in quads {
        by_time.entry(q.time).or_default().push(q.triple());
    }
    by_time.into_iter().map(|(t, facts)| Snapshot::new(t, facts)).collect()
}

/// The snapshots at `max(0, t_q - m) .. t_q`, ascending.
pub fn snapshot_window(kg: &TemporalKg, t_q: TimeIndex, m: usize) -> Result<&[Snapshot]> {
    if t_q == 0 {
        return Err(LogclError::NoHistory(0));
    }
    if m == 0 {
        return Err(LogclError::InvalidArgument("window length must be at least 1".into()));
    }
    if t_q > kg.num_times() {
        return Err(LogclError::InvalidArgument(format!(
            "query time {t_q} is past the last snapshot {}",
            kg.num_times()
        )));
    }
    Ok(&kg.snapshots[t_q.saturating_sub(m)..t_q])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    fn toy_dir(train: &str) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "stat.txt", "5 3 0\n");
        write(dir.path(), "train.txt", train);
        write(dir.path(), "valid.txt", "");
        write(dir.path(), "test.txt", "");
        dir
    }

    #[test]
    fn normalizes_timestamps_by_granularity() {
        let dir = toy_dir("0 0 1 0\n1 1 2 0\n2 2 3 24\n3 0 4 48\n4 1 0 48 extra 7\n");
        let kg = load_dataset(dir.path()).unwrap();
        assert_eq!(kg.granularity(), 24);
        let times: Vec<_> = kg.splits().train.iter().map(|q| q.time).collect();
        assert_eq!(times, vec![0, 0, 1, 2, 2]);
        assert_eq!(kg.num_times(), 3);
    }

    #[test]
    fn empty_train_file_is_fine() {
        let dir = toy_dir("");
        let kg = load_dataset(dir.path()).unwrap();
        assert!(kg.splits().train.is_empty());
        assert_eq!(kg.num_times(), 0);
    }

    #[test]
    fn missing_stat_file_is_an_error() {
        let dir = toy_dir("");
        fs::remove_file(dir.path().join("stat.txt")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(LogclError::Io { .. })));
    }

    #[test]
    fn bad_rows_report_file_and_line() {
        let dir = toy_dir("0 0 1 0\n0 x 1 0\n");
        match load_dataset(dir.path()) {
            Err(LogclError::Parse { file, line, .. }) => {
                assert!(file.ends_with("train.txt"));
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        let dir = toy_dir("0 0 1 0\n\n0 0 9 0\n");
        match load_dataset(dir.path()) {
            Err(LogclError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let dir = toy_dir("0 3 1 0\n");
        assert!(matches!(load_dataset(dir.path()), Err(LogclError::Parse { line: 1, .. })));
    }

    #[test]
    fn add_inverse_definition() {
        let out = add_inverse(&[Quadruple::new(0, 1, 2, 5)], 230).unwrap();
        assert_eq!(out, vec![Quadruple::new(0, 1, 2, 5), Quadruple::new(2, 231, 0, 5)]);
        assert!(add_inverse(&[], 230).unwrap().is_empty());
        assert!(matches!(
            add_inverse(&out, 230),
            Err(LogclError::DoubleAugmentation { relation: 231, base: 230 })
        ));
    }

    #[test]
    fn snapshots_dedup_and_order() {
        let snaps = build_snapshots(&[Quadruple::new(0, 1, 2, 0), Quadruple::new(0, 1, 2, 0)]);
        assert_eq!(snaps.len(), 1);
        assert_eq!(snaps[0].len(), 1);

        let snaps = build_snapshots(&[
            Quadruple::new(0, 0, 1, 3),
            Quadruple::new(0, 0, 1, 1),
            Quadruple::new(1, 0, 2, 1),
        ]);
        let times: Vec<_> = snaps.iter().map(|s| s.time).collect();
        assert_eq!(times, vec![1, 3]);
        assert!(build_snapshots(&[]).is_empty());
    }

    fn chain_kg(n: usize) -> TemporalKg {
        let train = (0..n).map(|t| Quadruple::new(0, 0, 1, t)).collect();
        TemporalKg::new(2, 1, Splits { train, ..Default::default() }, 1).unwrap()
    }

    #[test]
    fn window_arithmetic() {
        let kg = chain_kg(12);
        let times = |w: &[Snapshot]| w.iter().map(|s| s.time).collect::<Vec<_>>();
        assert_eq!(times(snapshot_window(&kg, 10, 7).unwrap()), (3..10).collect::<Vec<_>>());
        assert_eq!(times(snapshot_window(&kg, 3, 7).unwrap()), vec![0, 1, 2]);
        assert_eq!(times(snapshot_window(&kg, 1, 1).unwrap()), vec![0]);
        assert!(matches!(snapshot_window(&kg, 0, 3), Err(LogclError::NoHistory(0))));
    }

    #[test]
    fn gaps_are_materialized_as_empty_snapshots() {
        let train = vec![Quadruple::new(0, 0, 1, 0)];
        let test = vec![Quadruple::new(1, 0, 0, 3)];
        let kg = TemporalKg::new(2, 1, Splits { train, test, ..Default::default() }, 1).unwrap();
        assert_eq!(kg.num_times(), 4);
        assert!(kg.snapshot(1).unwrap().is_empty());
        assert!(kg.snapshot(2).unwrap().is_empty());
        // both orientations present at t = 3
        assert_eq!(kg.snapshot(3).unwrap().len(), 2);
        assert_eq!(kg.split_times(Split::Test), vec![3]);
    }

    #[test]
    fn snapshot_lookups() {
        let snap = Snapshot::new(
            0,
            vec![Triple::new(1, 2, 3), Triple::new(1, 2, 4), Triple::new(1, 5, 0), Triple::new(2, 2, 3)],
        );
        assert_eq!(snap.objects(1, 2).collect::<Vec<_>>(), vec![3, 4]);
        assert_eq!(snap.objects(2, 5).count(), 0);
        assert_eq!(snap.relations_of(1), vec![2, 5]);
        assert!(snap.relations_of(0).is_empty());
    }

    #[test]
    fn resplit_by_time_partitions() {
        let kg = chain_kg(10);
        let cut = kg.resplit_by_time(5, 7, 9).unwrap();
        assert_eq!(cut.splits().train.len(), 5);
        assert_eq!(cut.splits().valid.len(), 2);
        assert_eq!(cut.splits().test.len(), 2);
        assert_eq!(cut.num_times(), 9);
    }
}
