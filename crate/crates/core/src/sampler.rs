//! Triplet construction from the anchor/positive/negative sample pools,
//! with global uniqueness of every emitted (A, P, N) constellation.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingPools;
use crate::error::{Error, Result};

/// Which training constellation is used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// A: source no-defect, P: target no-defect, N: source defect.
    Ours,
    /// A and P: source no-defect, N: source defect.
    Bench1,
    /// A and P: source ∪ target no-defect, N: source defect.
    Bench2,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Ours, Mode::Bench1, Mode::Bench2];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ours => "ours",
            Mode::Bench1 => "bench1",
            Mode::Bench2 => "bench2",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ours" => Ok(Mode::Ours),
            "bench1" => Ok(Mode::Bench1),
            "bench2" => Ok(Mode::Bench2),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (expected ours, bench1 or bench2)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolId {
    SourceNoDefect,
    SourceDefect,
    TargetNoDefect,
    /// Source no-defect followed by target no-defect.
    SourceTargetNoDefect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pool {
    pub id: PoolId,
    pub size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolHandles {
    pub anchors: Pool,
    pub positives: Pool,
    pub negatives: Pool,
    /// For the union pool: number of leading (source) entries. With
    /// `balance_union`, each union draw first picks a domain with equal odds.
    pub union_split: Option<usize>,
    pub balance_union: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub a: usize,
    pub p: usize,
    pub n: usize,
}

impl PoolHandles {
    pub fn new(anchors: Pool, positives: Pool, negatives: Pool) -> Result<Self> {
        for (role, pool) in [
            ("anchor", anchors),
            ("positive", positives),
            ("negative", negatives),
        ] {
            if pool.size == 0 {
                return Err(Error::Dataset(format!(
                    "{role} pool {:?} is empty",
                    pool.id
                )));
            }
        }
        Ok(Self {
            anchors,
            positives,
            negatives,
            union_split: None,
            balance_union: false,
        })
    }

    /// Anchors and positives index the same samples, so `a == p` is excluded.
    pub fn shared_anchor_positive(&self) -> bool {
        self.anchors.id == self.positives.id
    }

    /// Number of distinct valid constellations.
    pub fn capacity(&self) -> u128 {
        let a = self.anchors.size as u128;
        let n = self.negatives.size as u128;
        if self.shared_anchor_positive() {
            a * (a - 1) * n
        } else {
            a * self.positives.size as u128 * n
        }
    }

    pub fn is_valid(&self, t: &Triplet) -> bool {
        t.a < self.anchors.size
            && t.p < self.positives.size
            && t.n < self.negatives.size
            && !(self.shared_anchor_positive() && t.a == t.p)
    }

    fn draw_index(&self, pool: Pool, rng: &mut impl Rng) -> usize {
        match (pool.id, self.union_split) {
            (PoolId::SourceTargetNoDefect, Some(split))
                if self.balance_union && split > 0 && split < pool.size =>
            {
                if rng.random_bool(0.5) {
                    rng.random_range(0..split)
                } else {
                    rng.random_range(split..pool.size)
                }
            }
            _ => rng.random_range(0..pool.size),
        }
    }
}

/// Pool assignment of each training mode.
pub fn benchmark_pools(mode: Mode, data: &TrainingPools) -> Result<PoolHandles> {
    let s_nodef = Pool {
        id: PoolId::SourceNoDefect,
        size: data.source_no_defect.len(),
    };
    let s_def = Pool {
        id: PoolId::SourceDefect,
        size: data.source_defect.len(),
    };
    let t_nodef = Pool {
        id: PoolId::TargetNoDefect,
        size: data.target_no_defect.len(),
    };
    let union = Pool {
        id: PoolId::SourceTargetNoDefect,
        size: s_nodef.size + t_nodef.size,
    };
    let mut handles = match mode {
        Mode::Ours => PoolHandles::new(s_nodef, t_nodef, s_def)?,
        Mode::Bench1 => PoolHandles::new(s_nodef, s_nodef, s_def)?,
        Mode::Bench2 => {
            if s_nodef.size == 0 || t_nodef.size == 0 {
                return Err(Error::Dataset(
                    "bench2 needs both source and target no-defect samples".into(),
                ));
            }
            PoolHandles::new(union, union, s_def)?
        }
    };
    if mode == Mode::Bench2 {
        handles.union_split = Some(s_nodef.size);
    }
    if handles.shared_anchor_positive() && handles.anchors.size < 2 {
        return Err(Error::Dataset(format!(
            "{mode} needs at least two anchor samples"
        )));
    }
    Ok(handles)
}

/// Largest pool product for which the dense path enumerates free triplets.
const ENUMERATION_LIMIT: u128 = 1 << 22;

/// Draws `n_triplets` constellations not present in `used` and records them
/// there. Deterministic in `(pools, n_triplets, seed, used)`.
pub fn sample_epoch(
    pools: &PoolHandles,
    n_triplets: usize,
    seed: u64,
    used: &mut HashSet<Triplet>,
) -> Result<Vec<Triplet>> {
    let capacity = pools.capacity();
    let remaining = capacity.saturating_sub(used.len() as u128);
    if n_triplets as u128 > remaining {
        return Err(Error::Capacity {
            requested: n_triplets,
            remaining,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Rejection sampling slows down as the free set shrinks; when most of the
    // remaining constellations are requested, enumerate them instead.
    if (n_triplets as u128) * 2 > remaining && capacity <= ENUMERATION_LIMIT {
        let mut free = Vec::with_capacity(remaining as usize);
        for a in 0..pools.anchors.size {
            for p in 0..pools.positives.size {
                for n in 0..pools.negatives.size {
                    let t = Triplet { a, p, n };
                    if pools.is_valid(&t) && !used.contains(&t) {
                        free.push(t);
                    }
                }
            }
        }
        let (chosen, _) = free.partial_shuffle(&mut rng, n_triplets);
        let chosen = chosen.to_vec();
        used.extend(chosen.iter().copied());
        return Ok(chosen);
    }

    let mut out = Vec::with_capacity(n_triplets);
    while out.len() < n_triplets {
        let t = Triplet {
            a: pools.draw_index(pools.anchors, &mut rng),
            p: pools.draw_index(pools.positives, &mut rng),
            n: pools.draw_index(pools.negatives, &mut rng),
        };
        if pools.is_valid(&t) && used.insert(t) {
            out.push(t);
        }
    }
    Ok(out)
}
