//! Seeded random instances and multiallocations.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{int, Instance, ItemSet, Multiallocation, Valuation};

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Additive,
    UnitDemand,
    BudgetAdditive,
    Coverage,
    Xos,
    /// Explicit table of a weighted set-cover cost function.
    Table,
}

pub const ALL_KINDS: [Kind; 6] = [
    Kind::Additive,
    Kind::UnitDemand,
    Kind::BudgetAdditive,
    Kind::Coverage,
    Kind::Xos,
    Kind::Table,
];

fn weights(m: usize, lo: i64, hi: i64, rng: &mut Rng) -> Vec<num_rational::BigRational> {
    (0..m).map(|_| int(rng.gen_range(lo..=hi))).collect()
}

/// Random valuation with small integer data; every single item is worth at least 1.
/// Tables are limited to 12 items.
pub fn random_valuation(kind: Kind, m: usize, rng: &mut Rng) -> Valuation {
    match kind {
        Kind::Additive => Valuation::Additive {
            weights: weights(m, 1, 9, rng),
        },
        Kind::UnitDemand => Valuation::UnitDemand {
            weights: weights(m, 1, 9, rng),
        },
        Kind::BudgetAdditive => {
            let ws: Vec<i64> = (0..m).map(|_| rng.gen_range(1..=9)).collect();
            let max = ws.iter().copied().max().unwrap_or(1);
            let sum = ws.iter().sum::<i64>().max(max);
            Valuation::BudgetAdditive {
                weights: ws.into_iter().map(int).collect(),
                cap: int(rng.gen_range(max..=sum)),
            }
        }
        Kind::Coverage => {
            let u = m + 2;
            Valuation::Coverage {
                universe_weights: weights(u, 1, 9, rng),
                covers: (0..m)
                    .map(|_| {
                        let mut c: Vec<usize> = (0..u).collect();
                        c.shuffle(rng);
                        c.truncate(rng.gen_range(1..=3));
                        c.sort_unstable();
                        c
                    })
                    .collect(),
            }
        }
        Kind::Xos => {
            let count = rng.gen_range(2..=3);
            let mut clauses = vec![weights(m, 1, 9, rng)];
            clauses.extend((1..count).map(|_| weights(m, 0, 9, rng)));
            Valuation::Xos { clauses }
        }
        Kind::Table => set_cover_table(m, rng),
    }
}

/// `f(S)` = cheapest cover of `S` by a random family that contains every
/// singleton; monotone and subadditive, and generally not fractionally subadditive.
pub fn set_cover_table(m: usize, rng: &mut Rng) -> Valuation {
    assert!(m <= 12, "tables are limited to 12 items");
    let mut family: Vec<(u64, i64)> = (0..m).map(|b| (1u64 << b, rng.gen_range(1..=9))).collect();
    for _ in 0..m {
        let mask = rng.gen_range(1u64..(1u64 << m).max(2)) & ((1u64 << m) - 1);
        if mask.count_ones() >= 2 {
            family.push((mask, rng.gen_range(2..=12)));
        }
    }
    let size = 1usize << m;
    let mut cost = vec![0i64; size];
    for s in 1..size {
        let low = 1u64 << (s as u64).trailing_zeros();
        cost[s] = family
            .iter()
            .filter(|(f, _)| f & low != 0)
            .map(|(f, c)| c + cost[s & !(*f as usize)])
            .min()
            .expect("singletons present");
    }
    let values: HashMap<ItemSet, _> = (1..size)
        .map(|s| {
            let set: ItemSet = (0..m).filter(|b| s >> b & 1 == 1).collect();
            (set, int(cost[s]))
        })
        .collect();
    Valuation::Table { values }
}

pub fn random_instance(n: usize, m: usize, kinds: &[Kind], rng: &mut Rng) -> Instance {
    let vals = (0..n)
        .map(|_| {
            let kind = *kinds.choose(rng).expect("at least one kind");
            random_valuation(kind, m, rng)
        })
        .collect();
    Instance::new(m, vals).expect("generated valuations are valid")
}

/// Every item lands in between 1 and `alpha` distinct random bundles.
pub fn random_multiallocation(n: usize, m: usize, alpha: usize, rng: &mut Rng) -> Multiallocation {
    let mut bundles = vec![ItemSet::new(); n];
    let mut agents: Vec<usize> = (0..n).collect();
    for b in 0..m {
        agents.shuffle(rng);
        let copies = rng.gen_range(1..=alpha.min(n).max(1));
        for &a in &agents[..copies] {
            bundles[a].insert(b);
        }
    }
    Multiallocation::new(bundles)
}

/// Additive instance on `n * t` items where every agent has a hidden
/// partition into `n` bundles of `t` items, each worth exactly `t`.
/// Returns the instance and the partitions (which are optimal).
pub fn planted_additive(n: usize, t: usize, rng: &mut Rng) -> (Instance, Vec<Vec<ItemSet>>) {
    let m = n * t;
    let mut vals = Vec::with_capacity(n);
    let mut parts = Vec::with_capacity(n);
    for _ in 0..n {
        let mut items: Vec<usize> = (0..m).collect();
        items.shuffle(rng);
        let mut w = vec![int(0); m];
        let mut bundles = Vec::with_capacity(n);
        for chunk in items.chunks(t) {
            // Split t·2 units over the chunk with every item getting at least 1 unit.
            let mut units = vec![1i64; chunk.len()];
            for _ in 0..t {
                units[rng.gen_range(0..chunk.len())] += 1;
            }
            for (&b, u) in chunk.iter().zip(units) {
                w[b] = num_rational::BigRational::new(u.into(), 2.into());
            }
            bundles.push(chunk.iter().copied().collect::<ItemSet>());
        }
        bundles.sort_by_key(|b: &ItemSet| b.iter().next());
        vals.push(Valuation::Additive { weights: w });
        parts.push(bundles);
    }
    (Instance::new(m, vals).expect("valid"), parts)
}
