//! Partial allocations: serve a fraction of a group of agents at a fixed value floor.
//!
//! All inputs are normalized (every maximin share equals 1) and come with the
//! agents' witness partitions. Results are verified exactly before being
//! returned; a strategy that misses its quota falls through to the next one.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gen::Rng;
use crate::guiding::{allocation_at, build_graph, label_edges, label_nodes, GuidingParams};
use crate::mms::MmsProfile;
use crate::model::{rat, Instance, ItemSet, LocalGround, Rational};

/// Above this many items the subset program is skipped.
pub const BRUTE_FORCE_ITEMS: usize = 10;
/// Node budget of the witness-assignment search.
const SEARCH_BUDGET: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Empty,
    Whole,
    BagFilling,
    WitnessSearch,
    SubsetProgram,
    Guided,
    Delegated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartialAllocation {
    /// Served agent → bundle.
    pub served: BTreeMap<usize, ItemSet>,
    pub floor: Rational,
    pub quota: usize,
    pub strategy: Strategy,
}

impl PartialAllocation {
    /// Disjointness and the floor, checked exactly.
    pub fn verify(&self, inst: &Instance) -> Result<bool> {
        let bundles: Vec<ItemSet> = self.served.values().cloned().collect();
        if !crate::model::verify_allocation(&bundles) {
            return Ok(false);
        }
        for (&a, b) in &self.served {
            if inst.value(a, b)? < self.floor {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

pub fn quarter_quota(q: usize) -> usize {
    q.div_ceil(3)
}

/// `⌈|q|·k/(k+1)⌉`.
pub fn half_quota(q: usize, k: usize) -> usize {
    (q * k).div_ceil(k + 1)
}

fn bag_filling(inst: &Instance, q: &[usize], floor: &Rational) -> Result<BTreeMap<usize, ItemSet>> {
    let mut order: Vec<(Rational, usize)> = Vec::with_capacity(inst.m());
    for b in 0..inst.m() {
        let mut best = Rational::from_integer(0.into());
        for &a in q {
            best = best.max(inst.value(a, &ItemSet::singleton(b))?);
        }
        order.push((best, b));
    }
    order.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));

    let mut served = BTreeMap::new();
    let mut bag = ItemSet::new();
    for (_, b) in order {
        bag.insert(b);
        for &a in q {
            if !served.contains_key(&a) && inst.value(a, &bag)? >= *floor {
                served.insert(a, std::mem::take(&mut bag));
                break;
            }
        }
        if served.len() == q.len() {
            break;
        }
    }
    Ok(served)
}

/// Assigns disjoint witness bundles (worth ≥ `floor`) to as many agents as
/// possible, depth-first within a node budget.
fn witness_search(inst: &Instance, profile: &MmsProfile, q: &[usize], floor: &Rational, target: usize) -> Result<BTreeMap<usize, ItemSet>> {
    let mut options: Vec<Vec<ItemSet>> = Vec::with_capacity(q.len());
    for &a in q {
        let mut opts = Vec::new();
        for b in profile.witness(a) {
            if inst.value(a, b)? >= *floor {
                opts.push(b.clone());
            }
        }
        opts.sort_by_key(|b| b.len());
        opts.dedup();
        options.push(opts);
    }

    struct Search<'a> {
        q: &'a [usize],
        options: &'a [Vec<ItemSet>],
        target: usize,
        nodes: usize,
        current: Vec<(usize, ItemSet)>,
        best: Vec<(usize, ItemSet)>,
    }

    impl Search<'_> {
        fn run(&mut self, j: usize, used: &ItemSet) {
            if self.best.len() >= self.target || self.nodes >= SEARCH_BUDGET {
                return;
            }
            self.nodes += 1;
            if self.current.len() > self.best.len() {
                self.best = self.current.clone();
            }
            if j == self.q.len() || self.current.len() + (self.q.len() - j) <= self.best.len() {
                return;
            }
            for b in &self.options[j] {
                if used.is_disjoint(b) {
                    self.current.push((self.q[j], b.clone()));
                    self.run(j + 1, &used.union(b));
                    self.current.pop();
                }
            }
            self.run(j + 1, used);
        }
    }

    let mut s = Search {
        q,
        options: &options,
        target,
        nodes: 0,
        current: Vec::new(),
        best: Vec::new(),
    };
    s.run(0, &ItemSet::new());
    Ok(s.best.into_iter().collect())
}

/// Exact maximum number of agents servable at `floor`, by a program over
/// (agent position, remaining items). Requires `m ≤ BRUTE_FORCE_ITEMS`.
fn subset_program(inst: &Instance, q: &[usize], floor: &Rational) -> Result<BTreeMap<usize, ItemSet>> {
    let local = LocalGround::new(&inst.items(), BRUTE_FORCE_ITEMS, "partial allocation search")?;
    let size = 1usize << local.len();
    let good: Vec<Vec<bool>> = q
        .iter()
        .map(|&a| {
            local
                .value_table(inst.valuation(a))
                .map(|t| t.iter().map(|v| v >= floor).collect())
        })
        .collect::<Result<_>>()?;

    // best[j][mask]: agents among q[j..] servable from the items in mask.
    let mut best = vec![vec![0u8; size]; q.len() + 1];
    for j in (0..q.len()).rev() {
        for mask in 0..size {
            let mut val = best[j + 1][mask];
            let mut sub = mask;
            while sub > 0 {
                if good[j][sub] {
                    val = val.max(1 + best[j + 1][mask ^ sub]);
                }
                sub = (sub - 1) & mask;
            }
            best[j][mask] = val;
        }
    }

    let mut out = BTreeMap::new();
    let mut mask = size - 1;
    for j in 0..q.len() {
        if best[j][mask] == best[j + 1][mask] {
            continue;
        }
        // Smallest qualifying submask that keeps the optimum.
        let want = best[j][mask] - 1;
        let mut chosen = None;
        let mut sub = mask;
        while sub > 0 {
            if good[j][sub] && best[j + 1][mask ^ sub] == want {
                chosen = Some(sub);
            }
            sub = (sub - 1) & mask;
        }
        let sub = chosen.expect("optimum is reconstructible");
        out.insert(q[j], local.subset(sub as u64));
        mask ^= sub;
    }
    Ok(out)
}

fn layered(inst: &Instance, profile: &MmsProfile, q: &[usize], floor: Rational, quota: usize, first: Option<(BTreeMap<usize, ItemSet>, Strategy)>) -> Result<PartialAllocation> {
    let mut best: BTreeMap<usize, ItemSet> = BTreeMap::new();
    let done = |served: BTreeMap<usize, ItemSet>, strategy| PartialAllocation {
        served,
        floor: floor.clone(),
        quota,
        strategy,
    };
    if let Some((served, strategy)) = first {
        if served.len() >= quota {
            return Ok(done(served, strategy));
        }
        best = served;
    }
    let found = witness_search(inst, profile, q, &floor, quota)?;
    if found.len() >= quota {
        return Ok(done(found, Strategy::WitnessSearch));
    }
    if found.len() > best.len() {
        best = found;
    }
    if inst.m() <= BRUTE_FORCE_ITEMS {
        let found = subset_program(inst, q, &floor)?;
        if found.len() >= quota {
            return Ok(done(found, Strategy::SubsetProgram));
        }
        if found.len() > best.len() {
            best = found;
        }
    }
    Err(Error::StandInFailed {
        served: best.len(),
        quota,
    })
}

/// Serves at least `⌈|q|/3⌉` agents of `q` at value ≥ 1/4: bag filling,
/// then a search over witness bundles, then an exact program for `m ≤ 10`.
pub fn partial_quarter(inst: &Instance, profile: &MmsProfile, q: &[usize]) -> Result<PartialAllocation> {
    let floor = rat(1, 4);
    let quota = quarter_quota(q.len());
    if q.is_empty() {
        return Ok(PartialAllocation {
            served: BTreeMap::new(),
            floor,
            quota,
            strategy: Strategy::Empty,
        });
    }
    if q.len() == 1 && inst.value(q[0], &inst.items())? >= floor {
        return Ok(PartialAllocation {
            served: [(q[0], inst.items())].into_iter().collect(),
            floor,
            quota,
            strategy: Strategy::Whole,
        });
    }
    let filled = bag_filling(inst, q, &floor)?;
    layered(inst, profile, q, floor, quota, Some((filled, Strategy::BagFilling)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisjointFamily {
    pub q_prime: Vec<usize>,
    /// `⌈k⌉` rounds; each maps every agent of `q_prime` to a bundle.
    pub rounds: Vec<BTreeMap<usize, ItemSet>>,
    pub k: Rational,
    /// Copies per agent in the replicated instance (0 when delegated).
    pub copies: usize,
    /// Copies served in the replicated instance.
    pub served_copies: usize,
}

impl DisjointFamily {
    pub fn all_bundles(&self) -> Vec<ItemSet> {
        self.rounds.iter().flat_map(|r| r.values().cloned()).collect()
    }
}

/// Replicates each agent of `q` `6⌊k⌋` times (`k = n/(6|q|)`), serves a
/// quarter of the replicas, and keeps the agents with at least `⌈k⌉` served
/// replicas; their replica bundles form `⌈k⌉` mutually disjoint rounds.
pub fn disjoint_partials(inst: &Instance, profile: &MmsProfile, q: &[usize]) -> Result<DisjointFamily> {
    if q.is_empty() {
        return Ok(DisjointFamily {
            q_prime: vec![],
            rounds: vec![BTreeMap::new()],
            k: Rational::from_integer(0.into()),
            copies: 0,
            served_copies: 0,
        });
    }
    let n = inst.n();
    let k = rat(n as i64, 6 * q.len() as i64);
    let fk = k.floor().to_integer();
    let ck = k.ceil().to_integer();
    let fk: usize = usize::try_from(fk).expect("small");
    let ck: usize = usize::try_from(ck).expect("small");
    if fk < 1 {
        let pq = partial_quarter(inst, profile, q)?;
        return Ok(DisjointFamily {
            q_prime: pq.served.keys().copied().collect(),
            rounds: vec![pq.served],
            k,
            copies: 0,
            served_copies: 0,
        });
    }

    let copies = 6 * fk;
    let star = inst.replicate(q, copies);
    let star_profile = MmsProfile {
        shares: q
            .iter()
            .flat_map(|&a| std::iter::repeat_n(profile.shares[a].clone(), copies))
            .collect(),
    };
    if star.n() > n {
        return Err(Error::InvariantViolation(format!(
            "{} replicas exceed the {} agents",
            star.n(),
            n
        )));
    }
    let star_agents: Vec<usize> = (0..star.n()).collect();
    let pq = partial_quarter(&star, &star_profile, &star_agents)?;
    let served_copies = pq.served.len();
    if served_copies < 2 * fk * q.len() {
        return Err(Error::InvariantViolation(format!(
            "replicated instance served {served_copies} of the required {}",
            2 * fk * q.len()
        )));
    }

    let mut q_prime = Vec::new();
    let mut rounds = vec![BTreeMap::new(); ck];
    for (i, &a) in q.iter().enumerate() {
        let served: Vec<&ItemSet> = (i * copies..(i + 1) * copies)
            .filter_map(|c| pq.served.get(&c))
            .collect();
        if served.len() >= ck {
            q_prime.push(a);
            for (round, b) in rounds.iter_mut().zip(served) {
                round.insert(a, b.clone());
            }
        }
    }
    if q_prime.len() < q.len().div_ceil(6) {
        return Err(Error::InvariantViolation(format!(
            "only {} agents kept {} replicas",
            q_prime.len(),
            ck
        )));
    }
    Ok(DisjointFamily {
        q_prime,
        rounds,
        k,
        copies,
        served_copies,
    })
}

/// Serves `⌈|q|·k/(k+1)⌉` agents of `q` at value ≥ 1/2 with `k = ⌊n/|q|⌋`,
/// by sampling seed nodes of a labelled guiding graph; falls back to the
/// exhaustive searches.
pub fn partial_half_guided(inst: &Instance, profile: &MmsProfile, q: &[usize], params: &GuidingParams, rng: &mut Rng) -> Result<PartialAllocation> {
    let floor = rat(1, 2);
    if q.is_empty() {
        return Ok(PartialAllocation {
            served: BTreeMap::new(),
            floor,
            quota: 0,
            strategy: Strategy::Empty,
        });
    }
    let k = inst.n() / q.len();
    let quota = half_quota(q.len(), k);
    let (g, _) = build_graph(q.len(), k, params);
    let witnesses: Vec<Vec<ItemSet>> = q.iter().map(|&a| profile.witness(a).to_vec()).collect();

    let mut best: BTreeMap<usize, ItemSet> = BTreeMap::new();
    let mut seeds: Vec<usize> = (0..g.seeds).collect();
    for _ in 0..params.relabels.max(1) {
        let lab = label_edges(&g, label_nodes(&g, &witnesses, rng))?;
        seeds.shuffle(rng);
        for &s in seeds.iter().take(params.samples.max(1)) {
            let bundles = allocation_at(&g, &lab, s);
            let mut served = BTreeMap::new();
            for (j, b) in bundles.into_iter().enumerate() {
                if inst.value(q[j], &b)? >= floor {
                    served.insert(q[j], b);
                }
            }
            if served.len() >= quota {
                return Ok(PartialAllocation {
                    served,
                    floor,
                    quota,
                    strategy: Strategy::Guided,
                });
            }
            if served.len() > best.len() {
                best = served;
            }
        }
    }
    layered(inst, profile, q, floor, quota, Some((best, Strategy::Guided)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::seeded;
    use crate::mms::{normalize_with_profile, DEFAULT_MMS_CAP};
    use crate::model::{int, Valuation};

    fn unit_items(n: usize) -> (Instance, MmsProfile) {
        let inst = Instance::new(n, vec![Valuation::Additive { weights: vec![int(1); n] }; n]).unwrap();
        let (inst, _, profile) = normalize_with_profile(&inst, DEFAULT_MMS_CAP).unwrap();
        (inst, profile)
    }

    #[test]
    fn quotas() {
        assert_eq!(quarter_quota(4), 2);
        assert_eq!(quarter_quota(3), 1);
        assert_eq!(half_quota(3, 1), 2);
        assert_eq!(half_quota(3, 2), 2);
        assert_eq!(half_quota(1, 6), 1);
    }

    #[test]
    fn lone_agent_gets_everything() {
        let (inst, profile) = unit_items(3);
        let pa = partial_quarter(&inst, &profile, &[1]).unwrap();
        assert_eq!(pa.served[&1], ItemSet::full(3));
        assert_eq!(pa.strategy, Strategy::Whole);
    }

    #[test]
    fn bag_filling_serves_all_unit_agents() {
        let (inst, profile) = unit_items(4);
        let q: Vec<usize> = (0..4).collect();
        let pa = partial_quarter(&inst, &profile, &q).unwrap();
        assert_eq!(pa.served.len(), 4);
        assert!(pa.served.values().all(|b| b.len() == 1));
        assert!(pa.verify(&inst).unwrap());
    }

    #[test]
    fn exact_program_finds_the_optimum() {
        // Agent 0 needs items 0 and 1 together; agent 1 can use item 0 or 2.
        let inst = Instance::new(
            3,
            vec![
                Valuation::Additive {
                    weights: vec![rat(1, 8), rat(1, 8), int(0)],
                },
                Valuation::Additive {
                    weights: vec![int(1), int(0), int(1)],
                },
            ],
        )
        .unwrap();
        let got = subset_program(&inst, &[0, 1], &rat(1, 4)).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[&0], [0, 1].into_iter().collect());
        assert_eq!(got[&1], ItemSet::singleton(2));
    }

    #[test]
    fn delegation_below_one_round() {
        let (inst, profile) = unit_items(4);
        let fam = disjoint_partials(&inst, &profile, &[0, 1]).unwrap();
        assert_eq!(fam.rounds.len(), 1);
        assert_eq!(fam.copies, 0);
    }

    #[test]
    fn replication_with_twelve_agents() {
        let mut rng = seeded(2);
        let (inst, parts) = crate::gen::planted_additive(12, 2, &mut rng);
        let profile = MmsProfile::from_witnesses(&inst, parts, 0).unwrap();
        let (inst, _, profile) = crate::mms::normalize_by_profile(&inst, profile).unwrap();
        let fam = disjoint_partials(&inst, &profile, &[3, 7]).unwrap();
        assert_eq!(fam.copies, 6);
        assert_eq!(fam.rounds.len(), 1);
        assert!(!fam.q_prime.is_empty());
        assert!(crate::model::verify_allocation(&fam.all_bundles()));
    }

    #[test]
    fn guided_half_with_six_agents() {
        let mut rng = seeded(4);
        let (inst, parts) = crate::gen::planted_additive(6, 2, &mut rng);
        let profile = MmsProfile::from_witnesses(&inst, parts, 0).unwrap();
        let (inst, _, profile) = crate::mms::normalize_by_profile(&inst, profile).unwrap();
        let pa = partial_half_guided(&inst, &profile, &[0, 2, 4], &GuidingParams::default(), &mut rng).unwrap();
        assert_eq!(pa.quota, 2);
        assert!(pa.served.len() >= 2);
        assert!(pa.verify(&inst).unwrap());
    }

    #[test]
    fn guided_single_agent() {
        let (inst, profile) = unit_items(3);
        let pa = partial_half_guided(&inst, &profile, &[2], &GuidingParams::default(), &mut seeded(0)).unwrap();
        assert_eq!(pa.quota, 1);
        assert_eq!(pa.served.len(), 1);
    }
}
