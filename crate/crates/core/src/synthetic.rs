//! Constructed datasets with a known answer pattern.

use crate::dataset::{Quadruple, Splits, TemporalKg};
use crate::error::Result;

pub const REPETITION_ENTITIES: usize = 10;
pub const REPETITION_RELATIONS: usize = 3;
pub const REPETITION_TIMES: usize = 30;

/// Object offsets on even and odd timestamps.
const OFFSETS: [usize; 2] = [1, 4];

/// Period-2 repetition dataset: at time `t` every entity `s` has the fact
/// `(s, s mod 3, (s + k) mod 10)` with `k` alternating between two offsets,
/// so each fact recurs exactly two steps later. Times `0..24` train,
/// `24..27` validate, `27..30` test.
pub fn repetition_dataset() -> Result<TemporalKg> {
    let mut splits = Splits::default();
    for t in 0..REPETITION_TIMES {
        for s in 0..REPETITION_ENTITIES {
            let o = (s + OFFSETS[t % 2]) % REPETITION_ENTITIES;
            let q = Quadruple::new(s, s % REPETITION_RELATIONS, o, t);
            match t {
                0..24 => splits.train.push(q),
                24..27 => splits.valid.push(q),
                _ => splits.test.push(q),
            }
        }
    }
    TemporalKg::new(REPETITION_ENTITIES, REPETITION_RELATIONS, splits, 1)
}

/// Recall facts per timestamp in [`mixed_dataset`].
pub const MIXED_FRESH: usize = 3;
/// Steps between a recall fact and its repetition; longer than the windows
/// used with [`mixed_dataset`].
pub const MIXED_GAP: usize = 4;
const MIXED_OBJECTS: usize = 20;

/// Repetition dataset plus long-gap recall facts. At every time `t` three
/// fresh subjects appear with an arbitrary object under relation 3, and each
/// repeats its fact once, `MIXED_GAP` steps later. The periodic part needs the
/// recent window; the recall part needs the older history, since a recall
/// subject is never seen anywhere else.
pub fn mixed_dataset() -> Result<TemporalKg> {
    let base = repetition_dataset()?;
    let subjects = REPETITION_TIMES * MIXED_FRESH;
    let first_object = REPETITION_ENTITIES + subjects;
    let num_entities = first_object + MIXED_OBJECTS;
    let mut splits = base.splits().clone();
    for t in 0..REPETITION_TIMES {
        for i in 0..MIXED_FRESH {
            let s = REPETITION_ENTITIES + t * MIXED_FRESH + i;
            let o = first_object + (7 * s + 3 * i) % MIXED_OBJECTS;
            for time in [t, t + MIXED_GAP] {
                if time >= REPETITION_TIMES {
                    continue;
                }
                let q = Quadruple::new(s, REPETITION_RELATIONS, o, time);
                match time {
                    0..24 => splits.train.push(q),
                    24..27 => splits.valid.push(q),
                    _ => splits.test.push(q),
                }
            }
        }
    }
    TemporalKg::new(num_entities, REPETITION_RELATIONS + 1, splits, 1)
}
