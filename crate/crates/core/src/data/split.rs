use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}` (train|val|test)"))),
        }
    }
}

/// Disjoint train/val/test partition of a set of ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// `(id, split)` pairs sorted by id.
    pub fn entries(&self) -> Vec<(&str, Split)> {
        let mut out: Vec<(&str, Split)> = [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .flat_map(|s| self.ids(s).iter().map(move |id| (id.as_str(), s)))
            .collect();
        out.sort();
        out
    }

    /// The `splits.txt` body: one `id<TAB>split` line per id.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(id, s)| format!("{id}\t{s}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut out = SplitAssignment { train: Vec::new(), val: Vec::new(), test: Vec::new() };
        let mut seen = std::collections::BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, split) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("splits.txt line {}: expected `id<TAB>split`", n + 1)))?;
            let split: Split = split.trim().parse()?;
            if !seen.insert(id.to_string()) {
                return Err(Error::Format(format!("splits.txt: duplicate id `{id}`")));
            }
            match split {
                Split::Train => out.train.push(id.to_string()),
                Split::Val => out.val.push(id.to_string()),
                Split::Test => out.test.push(id.to_string()),
            }
        }
        Ok(out)
    }
}

/// Smallest id list [`split`] accepts; below it a split can come out empty.
pub const MIN_SPLIT_IDS: usize = 10;

/// Seeded shuffle, then contiguous cuts at `floor(0.8 n)` and `floor(0.9 n)`.
/// Each part is returned sorted.
pub fn split(ids: &[String], seed: u64) -> Result<SplitAssignment> {
    let n = ids.len();
    if n < MIN_SPLIT_IDS {
        return Err(Error::Dataset(format!("splitting needs at least {MIN_SPLIT_IDS} ids, got {n}")));
    }
    let mut order = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = (n * 8 / 10, n * 9 / 10);
    let part = |ids: &[String]| {
        let mut v = ids.to_vec();
        v.sort();
        v
    };
    Ok(SplitAssignment { train: part(&order[..a]), val: part(&order[a..b]), test: part(&order[b..]) })
}
