//! Multiallocation → allocation conversion.
//!
//! Agents are split into *easy* agents, whose bundle has a small subset worth
//! half of it, and *hard* agents. Easy agents keep a matched share of their
//! small subsets (one item per block of `α` fit-sorted items), hard agents get
//! a uniformly random owner per item, and the two partial allocations are
//! merged by pairing each easy agent's items and resolving shared pairs. The
//! random part is redrawn until every hard agent keeps a `1/(480α)` fraction
//! of its original value.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::flow::bipartite_matching;
use crate::gen::Rng;
use crate::lp::{fit_additive_lower_capped, AdditiveFit, DEFAULT_LP_CAP};
use crate::model::{Allocation, Instance, ItemSet, Multiallocation, Rational};

pub const DEFAULT_WITNESS_CAP: usize = 18;
pub const DEFAULT_PAIR_CAP: usize = 20;
pub const DEFAULT_MAX_RETRIES: usize = 1000;

/// `⌈80·α·(log₂ n + 1)⌉`.
pub fn default_tau(alpha: usize, n: usize) -> usize {
    (80.0 * alpha as f64 * ((n.max(1) as f64).log2() + 1.0)).ceil() as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvertParams {
    /// Multiplier on the default easy-agent threshold (the result is clamped to ≥ 1).
    pub tau_scale: f64,
    pub max_retries: usize,
    pub pair_cap: usize,
    pub witness_cap: usize,
    pub lp_cap: usize,
}

impl Default for ConvertParams {
    fn default() -> Self {
        Self {
            tau_scale: 1.0,
            max_retries: DEFAULT_MAX_RETRIES,
            pair_cap: DEFAULT_PAIR_CAP,
            witness_cap: DEFAULT_WITNESS_CAP,
            lp_cap: DEFAULT_LP_CAP,
        }
    }
}

impl ConvertParams {
    pub fn tau(&self, alpha: usize, n: usize) -> usize {
        ((self.tau_scale * default_tau(alpha, n) as f64).ceil() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentClass {
    /// Easy agents with their witness subset `X_i ⊆ A_i`.
    pub easy: BTreeMap<usize, ItemSet>,
    pub hard: BTreeSet<usize>,
    pub tau: usize,
}

fn next_same_popcount(x: u64) -> u64 {
    let c = x & x.wrapping_neg();
    let r = x + c;
    (((r ^ x) >> 2) / c) | r
}

fn find_witness(inst: &Instance, agent: usize, bundle: &ItemSet, limit: usize, cap: usize) -> Result<Option<ItemSet>> {
    let v = inst.valuation(agent);
    let whole = v.eval(bundle)?;
    let items = bundle.to_vec();
    let pick = |mask: u64| -> ItemSet { (0..items.len()).filter(|&j| mask >> j & 1 == 1).map(|j| items[j]).collect() };
    let enough = |x: &ItemSet| -> Result<bool> { Ok(v.eval(x)? * Rational::from_integer(2.into()) >= whole) };

    if items.len() <= cap {
        let k = items.len();
        for s in 0..=limit.min(k) {
            if s == 0 {
                if enough(&ItemSet::new())? {
                    return Ok(Some(ItemSet::new()));
                }
                continue;
            }
            let mut mask = (1u64 << s) - 1;
            while mask < 1u64 << k {
                let x = pick(mask);
                if enough(&x)? {
                    return Ok(Some(x));
                }
                mask = next_same_popcount(mask);
            }
        }
        return Ok(None);
    }

    let mut x = ItemSet::new();
    while x.len() < limit && !enough(&x)? {
        let mut best: Option<(usize, Rational)> = None;
        for &b in &items {
            if x.contains(b) {
                continue;
            }
            let mut y = x.clone();
            y.insert(b);
            let val = v.eval(&y)?;
            if best.as_ref().is_none_or(|(_, bv)| val > *bv) {
                best = Some((b, val));
            }
        }
        let Some((b, _)) = best else { break };
        x.insert(b);
    }
    Ok(enough(&x)?.then_some(x))
}

/// Splits agents into easy (with witness) and hard.
///
/// A bundle of at most `tau` items (and within the LP cap) is its own witness;
/// otherwise subsets are searched by increasing size, exhaustively for bundles
/// up to the witness cap and greedily by marginal value beyond it.
pub fn classify_agents(inst: &Instance, ma: &Multiallocation, tau: usize, params: &ConvertParams) -> Result<AgentClass> {
    let mut easy = BTreeMap::new();
    let mut hard = BTreeSet::new();
    for (agent, bundle) in ma.bundles.iter().enumerate() {
        if bundle.len() <= tau && bundle.len() <= params.lp_cap {
            easy.insert(agent, bundle.clone());
            continue;
        }
        let limit = tau.min(params.lp_cap);
        match find_witness(inst, agent, bundle, limit, params.witness_cap)? {
            Some(x) => {
                easy.insert(agent, x);
            }
            None => {
                hard.insert(agent);
            }
        }
    }
    Ok(AgentClass { easy, hard, tau })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EasyResolution {
    /// `A^E_i` per easy agent; pairwise disjoint.
    pub bundles: BTreeMap<usize, ItemSet>,
    pub fits: BTreeMap<usize, AdditiveFit>,
    /// Blocks of `α` items of `X_i`, in descending fit-weight order (remainder dropped).
    pub blocks: BTreeMap<usize, Vec<Vec<usize>>>,
}

/// Fits each easy agent's witness, cuts it into blocks of `alpha` items and
/// matches one distinct item to every block.
pub fn resolve_easy(inst: &Instance, cls: &AgentClass, alpha: usize, lp_cap: usize) -> Result<EasyResolution> {
    assert!(alpha >= 1);
    let mut fits = BTreeMap::new();
    let mut blocks = BTreeMap::new();
    let mut owners: Vec<(usize, Vec<usize>)> = Vec::new();
    for (&agent, x) in &cls.easy {
        let fit = fit_additive_lower_capped(inst.valuation(agent), x, lp_cap)?;
        let sorted = fit.sorted_items();
        let bs: Vec<Vec<usize>> = sorted.chunks_exact(alpha).map(<[usize]>::to_vec).collect();
        for b in &bs {
            owners.push((agent, b.clone()));
        }
        fits.insert(agent, fit);
        blocks.insert(agent, bs);
    }

    let adj: Vec<Vec<usize>> = owners.iter().map(|(_, b)| b.clone()).collect();
    let matched = bipartite_matching(&adj, inst.m());
    let unmatched = matched.iter().filter(|x| x.is_none()).count();
    if unmatched > 0 {
        return Err(Error::MatchingIncomplete { unmatched });
    }
    let mut bundles: BTreeMap<usize, ItemSet> = cls.easy.keys().map(|&a| (a, ItemSet::new())).collect();
    for ((agent, _), item) in owners.iter().zip(matched) {
        bundles.get_mut(agent).expect("easy agent").insert(item.expect("matched"));
    }
    Ok(EasyResolution { bundles, fits, blocks })
}

/// Gives every item held by some hard agent to one of them, uniformly.
pub fn resolve_hard(ma: &Multiallocation, cls: &AgentClass, rng: &mut Rng) -> Vec<ItemSet> {
    let mut out = vec![ItemSet::new(); ma.bundles.len()];
    let items = cls
        .hard
        .iter()
        .fold(ItemSet::new(), |acc, &h| acc.union(&ma.bundles[h]));
    for b in items.iter() {
        let holders: Vec<usize> = cls.hard.iter().copied().filter(|&h| ma.bundles[h].contains(b)).collect();
        let h = holders[rng.gen_range(0..holders.len())];
        out[h].insert(b);
    }
    out
}

/// A pair of shared items whose hard owners coincide; the hard agent keeps one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkedPair {
    pub easy: usize,
    pub items: [usize; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergeOutcome {
    pub allocation: Allocation,
    /// Linked pairs per hard agent, and which item of each pair the hard agent kept.
    pub linked: BTreeMap<usize, Vec<(LinkedPair, usize)>>,
}

/// Pairs each easy bundle by fit weight and settles shared items.
///
/// Unique items keep their owner; in a pair with one shared item the hard
/// owner takes it; a pair of shared items with distinct hard owners is split
/// by a fair coin; pairs whose items share one hard owner are settled last, by
/// that agent choosing one item per pair to maximize its final bundle
/// (exhaustively up to `pair_cap` pairs, greedily beyond).
pub fn merge(
    inst: &Instance,
    easy: &EasyResolution,
    hard: &[ItemSet],
    pair_cap: usize,
    rng: &mut Rng,
) -> Result<MergeOutcome> {
    let n = inst.n();
    let m = inst.m();
    let mut easy_owner = vec![None; m];
    for (&a, b) in &easy.bundles {
        for x in b.iter() {
            easy_owner[x] = Some(a);
        }
    }
    let mut hard_owner = vec![None; m];
    for (h, b) in hard.iter().enumerate() {
        for x in b.iter() {
            hard_owner[x] = Some(h);
        }
    }

    let mut bundles = vec![ItemSet::new(); n];
    for x in 0..m {
        match (easy_owner[x], hard_owner[x]) {
            (Some(a), None) | (None, Some(a)) => {
                bundles[a].insert(x);
            }
            _ => {}
        }
    }

    let shared = |x: usize| x < m && easy_owner[x].is_some() && hard_owner[x].is_some();
    let mut linked: BTreeMap<usize, Vec<LinkedPair>> = BTreeMap::new();
    for (&a, bundle) in &easy.bundles {
        let fit = &easy.fits[&a];
        let mut items = bundle.to_vec();
        items.sort_by(|x, y| fit.weight(*y).cmp(&fit.weight(*x)).then(x.cmp(y)));
        if items.len() % 2 == 1 {
            // Dummy item, worth nothing and never shared.
            items.push(m + a);
        }
        for pair in items.chunks_exact(2) {
            let (x, y) = (pair[0], pair[1]);
            match (shared(x), shared(y)) {
                (false, false) => {}
                (true, false) | (false, true) => {
                    let s = if shared(x) { x } else { y };
                    bundles[hard_owner[s].expect("shared")].insert(s);
                }
                (true, true) => {
                    let (hx, hy) = (hard_owner[x].expect("shared"), hard_owner[y].expect("shared"));
                    if hx != hy {
                        let (keep, give) = if rng.gen_bool(0.5) { (x, y) } else { (y, x) };
                        bundles[a].insert(keep);
                        bundles[hard_owner[give].expect("shared")].insert(give);
                    } else {
                        linked.entry(hx).or_default().push(LinkedPair { easy: a, items: [x, y] });
                    }
                }
            }
        }
    }

    let mut settled = BTreeMap::new();
    for (h, pairs) in linked {
        let choice = choose_from_pairs(inst, h, &bundles[h], &pairs, pair_cap)?;
        let mut record = Vec::with_capacity(pairs.len());
        for (pair, &pick) in pairs.into_iter().zip(&choice) {
            let kept = pair.items[pick];
            let other = pair.items[1 - pick];
            bundles[h].insert(kept);
            bundles[pair.easy].insert(other);
            record.push((pair, kept));
        }
        settled.insert(h, record);
    }

    Ok(MergeOutcome {
        allocation: Allocation::new(bundles),
        linked: settled,
    })
}

/// Index (0 or 1) of the kept item per pair, maximizing `V_h(base ∪ kept)`.
/// Exhaustive ties go to the smallest choice vector read as a binary number.
pub fn choose_from_pairs(inst: &Instance, h: usize, base: &ItemSet, pairs: &[LinkedPair], pair_cap: usize) -> Result<Vec<usize>> {
    let p = pairs.len();
    let with = |choice: &[usize]| -> ItemSet {
        let mut s = base.clone();
        for (pair, &c) in pairs.iter().zip(choice) {
            s.insert(pair.items[c]);
        }
        s
    };
    if p <= pair_cap {
        let mut best: Option<(Rational, Vec<usize>)> = None;
        for mask in 0u64..1 << p {
            let choice: Vec<usize> = (0..p).map(|j| (mask >> j & 1) as usize).collect();
            let val = inst.value(h, &with(&choice))?;
            if best.as_ref().is_none_or(|(bv, _)| val > *bv) {
                best = Some((val, choice));
            }
        }
        return Ok(best.expect("at least one choice").1);
    }
    let mut choice = Vec::with_capacity(p);
    let mut cur = base.clone();
    for pair in pairs {
        let mut a = cur.clone();
        a.insert(pair.items[0]);
        let mut b = cur.clone();
        b.insert(pair.items[1]);
        if inst.value(h, &b)? > inst.value(h, &a)? {
            choice.push(1);
            cur = b;
        } else {
            choice.push(0);
            cur = a;
        }
    }
    Ok(choice)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conversion {
    pub allocation: Allocation,
    pub alpha: usize,
    pub classes: AgentClass,
    pub easy: EasyResolution,
    /// `A^H` of the accepted attempt.
    pub hard: Vec<ItemSet>,
    pub linked: BTreeMap<usize, Vec<(LinkedPair, usize)>>,
    /// Number of resolve/merge rounds drawn.
    pub attempts: usize,
}

/// Hard agents whose merged bundle is worth less than `1/(480α)` of their original one.
pub fn failing_hard_agents(inst: &Instance, ma: &Multiallocation, cls: &AgentClass, alloc: &Allocation, alpha: usize) -> Result<Vec<usize>> {
    let factor = Rational::from_integer((480 * alpha).into());
    let mut failing = Vec::new();
    for &h in &cls.hard {
        if inst.value(h, &alloc.bundles[h])? * &factor < inst.value(h, &ma.bundles[h])? {
            failing.push(h);
        }
    }
    Ok(failing)
}

/// Exact checks of the easy-agent guarantees:
/// `Σ_{A^E_i} w ≥ Σ_{X_i} w / α − max w` and `V_i(A'_i) ≥ Σ_{A^E_i} w / 2 − max w`.
pub fn check_easy_bounds(inst: &Instance, conv: &Conversion) -> Result<()> {
    let alpha = Rational::from_integer(conv.alpha.into());
    for (&a, fit) in &conv.easy.fits {
        let beta = fit.max_weight();
        let matched = fit.value(&conv.easy.bundles[&a]);
        if matched < fit.total() / &alpha - &beta {
            return Err(Error::InvariantViolation(format!(
                "easy agent {a}: matched fit weight {matched} below share of its witness"
            )));
        }
        let fin = inst.value(a, &conv.allocation.bundles[a])?;
        if fin < &matched / Rational::from_integer(2.into()) - &beta {
            return Err(Error::InvariantViolation(format!(
                "easy agent {a}: final value {fin} below half its matched fit weight minus {beta}"
            )));
        }
    }
    Ok(())
}

/// Converts an `α`-multiallocation into an allocation.
pub fn multialloc_to_alloc(inst: &Instance, ma: &Multiallocation, params: &ConvertParams, rng: &mut Rng) -> Result<Conversion> {
    if ma.bundles.len() != inst.n() {
        return Err(Error::InvalidInstance(format!(
            "{} bundles for {} agents",
            ma.bundles.len(),
            inst.n()
        )));
    }
    ma.check_items(inst.m())?;
    let alpha = ma.multiplicity();
    let tau = params.tau(alpha.max(1), inst.n());
    if alpha == 0 {
        let classes = AgentClass {
            easy: (0..inst.n()).map(|a| (a, ItemSet::new())).collect(),
            hard: BTreeSet::new(),
            tau,
        };
        return Ok(Conversion {
            allocation: Allocation::empty(inst.n()),
            alpha,
            easy: EasyResolution {
                bundles: classes.easy.clone(),
                fits: BTreeMap::new(),
                blocks: BTreeMap::new(),
            },
            classes,
            hard: vec![ItemSet::new(); inst.n()],
            linked: BTreeMap::new(),
            attempts: 0,
        });
    }

    let classes = classify_agents(inst, ma, tau, params)?;
    let easy = resolve_easy(inst, &classes, alpha, params.lp_cap)?;
    let mut attempts = 0;
    loop {
        attempts += 1;
        let hard = resolve_hard(ma, &classes, rng);
        let merged = merge(inst, &easy, &hard, params.pair_cap, rng)?;
        if !merged.allocation.is_valid() {
            return Err(Error::InvariantViolation("merged bundles overlap".into()));
        }
        let failing = failing_hard_agents(inst, ma, &classes, &merged.allocation, alpha)?;
        if failing.is_empty() {
            let conv = Conversion {
                allocation: merged.allocation,
                alpha,
                classes,
                easy,
                hard,
                linked: merged.linked,
                attempts,
            };
            check_easy_bounds(inst, &conv)?;
            return Ok(conv);
        }
        if attempts >= params.max_retries.max(1) {
            return Err(Error::RetriesExhausted { attempts, failing });
        }
    }
}
