//! Instances, valuation oracles, and the structural checks every other module
//! relies on.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};

/// Exact value type used for every valuation and guarantee.
pub type Rational = BigRational;

pub fn rat(numer: i64, denom: i64) -> Rational {
    Rational::new(BigInt::from(numer), BigInt::from(denom))
}

pub fn int(v: i64) -> Rational {
    Rational::from_integer(BigInt::from(v))
}

/// Parses `"p/q"`, `"p"`, or a decimal such as `"0.25"` into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || Error::Parse(format!("not a rational: {s:?}"));
    if let Some((p, q)) = s.split_once('/') {
        let p: BigInt = p.trim().parse().map_err(|_| bad())?;
        let q: BigInt = q.trim().parse().map_err(|_| bad())?;
        if q.is_zero() {
            return Err(bad());
        }
        return Ok(Rational::new(p, q));
    }
    if let Some((whole, frac)) = s.split_once('.') {
        let neg = whole.starts_with('-');
        let digits = format!("{}{}", whole.trim_start_matches('-'), frac);
        let mut v = Rational::new(
            digits.parse::<BigInt>().map_err(|_| bad())?,
            num_traits::pow(BigInt::from(10), frac.len()),
        );
        if neg {
            v = -v;
        }
        return Ok(v);
    }
    Ok(Rational::from_integer(s.parse().map_err(|_| bad())?))
}

/// Formats as `"p/q"`, or `"p"` for integers.
pub fn format_rational(v: &Rational) -> String {
    if v.is_integer() {
        v.numer().to_string()
    } else {
        format!("{}/{}", v.numer(), v.denom())
    }
}

pub fn to_f64(v: &Rational) -> f64 {
    use num_traits::ToPrimitive;
    v.to_f64().unwrap_or(f64::NAN)
}

/// Exact binary rational of a finite float.
pub fn from_f64(v: f64) -> Rational {
    Rational::from_float(v).expect("finite float")
}

/// Canonical set of item ids, stored as a bitset with no trailing zero words.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ItemSet {
    words: Vec<u64>,
}

impl ItemSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn singleton(item: usize) -> Self {
        let mut s = Self::new();
        s.insert(item);
        s
    }

    /// Items `0..m`.
    pub fn full(m: usize) -> Self {
        (0..m).collect()
    }

    fn trim(&mut self) {
        while self.words.last() == Some(&0) {
            self.words.pop();
        }
    }

    pub fn insert(&mut self, item: usize) -> bool {
        let (w, b) = (item / 64, item % 64);
        if self.words.len() <= w {
            self.words.resize(w + 1, 0);
        }
        let had = self.words[w] >> b & 1 == 1;
        self.words[w] |= 1 << b;
        !had
    }

    pub fn remove(&mut self, item: usize) -> bool {
        let (w, b) = (item / 64, item % 64);
        if w >= self.words.len() {
            return false;
        }
        let had = self.words[w] >> b & 1 == 1;
        self.words[w] &= !(1 << b);
        self.trim();
        had
    }

    pub fn contains(&self, item: usize) -> bool {
        let (w, b) = (item / 64, item % 64);
        self.words.get(w).is_some_and(|x| x >> b & 1 == 1)
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(i, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(i * 64 + b)
            })
        })
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }

    pub fn max_item(&self) -> Option<usize> {
        self.iter().last()
    }

    fn zip_with(&self, other: &Self, f: impl Fn(u64, u64) -> u64) -> Self {
        let len = self.words.len().max(other.words.len());
        let get = |v: &Vec<u64>, i: usize| v.get(i).copied().unwrap_or(0);
        let mut out = Self {
            words: (0..len)
                .map(|i| f(get(&self.words, i), get(&other.words, i)))
                .collect(),
        };
        out.trim();
        out
    }

    pub fn union(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn intersection(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn difference(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a & !b)
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.difference(other).is_empty()
    }

    pub fn is_disjoint(&self, other: &Self) -> bool {
        self.words
            .iter()
            .zip(&other.words)
            .all(|(a, b)| a & b == 0)
    }

    pub fn union_with(&mut self, other: &Self) {
        *self = self.union(other);
    }
}

impl FromIterator<usize> for ItemSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut s = Self::new();
        for i in iter {
            s.insert(i);
        }
        s
    }
}

impl fmt::Debug for ItemSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// Comma separated ids, the key format of table valuations.
impl fmt::Display for ItemSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.iter().map(|i| i.to_string()).collect();
        f.write_str(&ids.join(","))
    }
}

impl FromStr for ItemSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::Parse(format!("bad item id {t:?}")))
            })
            .collect()
    }
}

/// Dense local indexing of a small ground set, so subsets can be enumerated
/// as `u64` masks.
#[derive(Clone, Debug)]
pub struct LocalGround {
    items: Vec<usize>,
}

impl LocalGround {
    pub fn new(ground: &ItemSet, cap: usize, what: &'static str) -> Result<Self> {
        let items = ground.to_vec();
        if items.len() > cap.min(63) {
            return Err(Error::CapExceeded {
                what,
                size: items.len(),
                cap: cap.min(63),
            });
        }
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn full_mask(&self) -> u64 {
        (1u64 << self.items.len()) - 1
    }

    pub fn subset(&self, mask: u64) -> ItemSet {
        let mut s = ItemSet::new();
        let mut m = mask;
        while m != 0 {
            s.insert(self.items[m.trailing_zeros() as usize]);
            m &= m - 1;
        }
        s
    }

    /// Mask of `set ∩ ground`.
    pub fn mask_of(&self, set: &ItemSet) -> u64 {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, &it)| set.contains(it))
            .fold(0, |acc, (i, _)| acc | 1 << i)
    }

    /// Valuation of every subset of the ground, indexed by mask.
    pub fn value_table(&self, v: &Valuation) -> Result<Vec<Rational>> {
        (0..=self.full_mask()).map(|mask| v.eval(&self.subset(mask))).collect()
    }
}

/// Valuation oracle for one agent. Every kind satisfies `eval(∅) = 0`.
#[derive(Clone, Debug, PartialEq)]
pub enum Valuation {
    Additive {
        weights: Vec<Rational>,
    },
    UnitDemand {
        weights: Vec<Rational>,
    },
    BudgetAdditive {
        weights: Vec<Rational>,
        cap: Rational,
    },
    Coverage {
        universe_weights: Vec<Rational>,
        covers: Vec<Vec<usize>>,
    },
    /// Maximum over clauses of an additive function; each clause has one weight per item.
    Xos {
        clauses: Vec<Vec<Rational>>,
    },
    Table {
        values: HashMap<ItemSet, Rational>,
    },
}

fn sum_over(weights: &[Rational], s: &ItemSet) -> Rational {
    s.iter()
        .filter_map(|i| weights.get(i))
        .fold(Rational::zero(), |acc, w| acc + w)
}

impl Valuation {
    pub fn kind(&self) -> &'static str {
        match self {
            Valuation::Additive { .. } => "additive",
            Valuation::UnitDemand { .. } => "unit_demand",
            Valuation::BudgetAdditive { .. } => "budget_additive",
            Valuation::Coverage { .. } => "coverage",
            Valuation::Xos { .. } => "xos",
            Valuation::Table { .. } => "table",
        }
    }

    pub fn eval(&self, s: &ItemSet) -> Result<Rational> {
        if s.is_empty() {
            return Ok(Rational::zero());
        }
        Ok(match self {
            Valuation::Additive { weights } => sum_over(weights, s),
            Valuation::UnitDemand { weights } => s
                .iter()
                .filter_map(|i| weights.get(i))
                .max()
                .cloned()
                .unwrap_or_else(Rational::zero),
            Valuation::BudgetAdditive { weights, cap } => sum_over(weights, s).min(cap.clone()),
            Valuation::Coverage {
                universe_weights,
                covers,
            } => {
                let covered: ItemSet = s
                    .iter()
                    .filter_map(|i| covers.get(i))
                    .flatten()
                    .copied()
                    .collect();
                sum_over(universe_weights, &covered)
            }
            Valuation::Xos { clauses } => clauses
                .iter()
                .map(|c| sum_over(c, s))
                .max()
                .unwrap_or_else(Rational::zero),
            Valuation::Table { values } => values
                .get(s)
                .cloned()
                .ok_or_else(|| Error::MissingTableEntry(s.clone()))?,
        })
    }

    /// Same valuation multiplied by `factor`.
    pub fn scaled(&self, factor: &Rational) -> Valuation {
        let sc = |ws: &[Rational]| ws.iter().map(|w| w * factor).collect::<Vec<_>>();
        match self {
            Valuation::Additive { weights } => Valuation::Additive {
                weights: sc(weights),
            },
            Valuation::UnitDemand { weights } => Valuation::UnitDemand {
                weights: sc(weights),
            },
            Valuation::BudgetAdditive { weights, cap } => Valuation::BudgetAdditive {
                weights: sc(weights),
                cap: cap * factor,
            },
            Valuation::Coverage {
                universe_weights,
                covers,
            } => Valuation::Coverage {
                universe_weights: sc(universe_weights),
                covers: covers.clone(),
            },
            Valuation::Xos { clauses } => Valuation::Xos {
                clauses: clauses.iter().map(|c| sc(c)).collect(),
            },
            Valuation::Table { values } => Valuation::Table {
                values: values.iter().map(|(k, v)| (k.clone(), v * factor)).collect(),
            },
        }
    }

    /// Valuation over re-indexed items: new item `j` is old item `items[j]`.
    pub fn restrict(&self, items: &[usize]) -> Valuation {
        let pick = |ws: &[Rational]| {
            items
                .iter()
                .map(|&i| ws.get(i).cloned().unwrap_or_else(Rational::zero))
                .collect::<Vec<_>>()
        };
        match self {
            Valuation::Additive { weights } => Valuation::Additive {
                weights: pick(weights),
            },
            Valuation::UnitDemand { weights } => Valuation::UnitDemand {
                weights: pick(weights),
            },
            Valuation::BudgetAdditive { weights, cap } => Valuation::BudgetAdditive {
                weights: pick(weights),
                cap: cap.clone(),
            },
            Valuation::Coverage {
                universe_weights,
                covers,
            } => Valuation::Coverage {
                universe_weights: universe_weights.clone(),
                covers: items
                    .iter()
                    .map(|&i| covers.get(i).cloned().unwrap_or_default())
                    .collect(),
            },
            Valuation::Xos { clauses } => Valuation::Xos {
                clauses: clauses.iter().map(|c| pick(c)).collect(),
            },
            Valuation::Table { values } => {
                let old: ItemSet = items.iter().copied().collect();
                let position: HashMap<usize, usize> =
                    items.iter().enumerate().map(|(j, &i)| (i, j)).collect();
                let values = values
                    .iter()
                    .filter(|(k, _)| k.is_subset(&old))
                    .map(|(k, v)| (k.iter().map(|i| position[&i]).collect(), v.clone()))
                    .collect();
                Valuation::Table { values }
            }
        }
    }

    /// Checks parameter shapes against the item count.
    fn validate(&self, m: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInstance(msg));
        let nonneg = |ws: &[Rational]| ws.iter().all(|w| !w.is_negative());
        match self {
            Valuation::Additive { weights }
            | Valuation::UnitDemand { weights }
            | Valuation::BudgetAdditive { weights, .. } => {
                if weights.len() != m {
                    return bad(format!("{} weights for {m} items", weights.len()));
                }
                if !nonneg(weights) {
                    return bad("negative weight".into());
                }
                if let Valuation::BudgetAdditive { cap, .. } = self {
                    if cap.is_negative() {
                        return bad("negative budget cap".into());
                    }
                }
            }
            Valuation::Coverage {
                universe_weights,
                covers,
            } => {
                if covers.len() != m {
                    return bad(format!("{} cover sets for {m} items", covers.len()));
                }
                if !nonneg(universe_weights) {
                    return bad("negative universe weight".into());
                }
                if covers.iter().flatten().any(|&e| e >= universe_weights.len()) {
                    return bad("cover references an unknown universe element".into());
                }
            }
            Valuation::Xos { clauses } => {
                if clauses.iter().any(|c| c.len() != m) {
                    return bad("xos clause length differs from item count".into());
                }
                if !clauses.iter().all(|c| nonneg(c)) {
                    return bad("negative clause weight".into());
                }
            }
            Valuation::Table { values } => {
                if values.keys().any(|k| k.max_item().is_some_and(|i| i >= m)) {
                    return bad("table key references an item outside the instance".into());
                }
                if values.values().any(|v| v.is_negative()) {
                    return bad("negative table value".into());
                }
                if values.get(&ItemSet::new()).is_some_and(|v| !v.is_zero()) {
                    return bad("table value of the empty set must be 0".into());
                }
                let report = check_monotone_subadditive(self, m, DEFAULT_PROPERTY_CAP)?;
                if !report.monotone || !report.subadditive {
                    return bad(format!(
                        "table valuation is not monotone subadditive: {:?}",
                        report.counterexample
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Item count up to which monotonicity and subadditivity are checked exhaustively.
pub const DEFAULT_PROPERTY_CAP: usize = 14;

#[derive(Clone, Debug, PartialEq)]
pub struct PropertyReport {
    pub monotone: bool,
    pub subadditive: bool,
    /// First violating pair: `(S, S ∪ {b})` for monotonicity, `(S1, S2)` for subadditivity.
    pub counterexample: Option<(ItemSet, ItemSet)>,
}

/// Brute-force monotonicity and subadditivity check over all subsets of `0..m`.
///
/// Subadditivity is checked on disjoint pairs only; for a monotone function
/// that implies it for overlapping pairs too.
pub fn check_monotone_subadditive(v: &Valuation, m: usize, cap: usize) -> Result<PropertyReport> {
    let ground = LocalGround::new(&ItemSet::full(m), cap, "property check")?;
    let table = ground.value_table(v)?;
    let full = ground.full_mask();

    for mask in 0..=full {
        for b in 0..m {
            let bigger = mask | 1 << b;
            if bigger != mask && table[bigger as usize] < table[mask as usize] {
                return Ok(PropertyReport {
                    monotone: false,
                    subadditive: false,
                    counterexample: Some((ground.subset(mask), ground.subset(bigger))),
                });
            }
        }
    }
    for s1 in 0..=full {
        let rest = full & !s1;
        let mut s2 = 0u64;
        loop {
            if table[s1 as usize].clone() + &table[s2 as usize] < table[(s1 | s2) as usize] {
                return Ok(PropertyReport {
                    monotone: true,
                    subadditive: false,
                    counterexample: Some((ground.subset(s1), ground.subset(s2))),
                });
            }
            if s2 == rest {
                break;
            }
            s2 = (s2 | !rest).wrapping_add(1) & rest;
        }
    }
    Ok(PropertyReport {
        monotone: true,
        subadditive: true,
        counterexample: None,
    })
}

/// The problem input: `n` agents with valuation oracles over items `0..m`.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    m: usize,
    valuations: Vec<Valuation>,
}

impl Instance {
    pub fn new(m: usize, valuations: Vec<Valuation>) -> Result<Self> {
        if valuations.is_empty() {
            return Err(Error::InvalidInstance("an instance needs at least one agent".into()));
        }
        for (i, v) in valuations.iter().enumerate() {
            v.validate(m)
                .map_err(|e| Error::InvalidInstance(format!("agent {i}: {e}")))?;
        }
        Ok(Self { m, valuations })
    }

    pub fn n(&self) -> usize {
        self.valuations.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn items(&self) -> ItemSet {
        ItemSet::full(self.m)
    }

    pub fn valuations(&self) -> &[Valuation] {
        &self.valuations
    }

    pub fn valuation(&self, agent: usize) -> &Valuation {
        &self.valuations[agent]
    }

    pub fn value(&self, agent: usize, s: &ItemSet) -> Result<Rational> {
        self.valuations[agent].eval(s)
    }

    /// Sub-instance on the given agents and items, re-indexed densely in the given order.
    pub fn restrict(&self, agents: &[usize], items: &[usize]) -> Result<Instance> {
        if agents.is_empty() {
            return Err(Error::InvalidInstance("restriction removed every agent".into()));
        }
        Ok(Instance {
            m: items.len(),
            valuations: agents
                .iter()
                .map(|&a| self.valuations[a].restrict(items))
                .collect(),
        })
    }

    /// Instance with each agent's valuation multiplied by its factor.
    pub fn scaled(&self, factors: &[Rational]) -> Instance {
        Instance {
            m: self.m,
            valuations: self
                .valuations
                .iter()
                .zip(factors)
                .map(|(v, f)| v.scaled(f))
                .collect(),
        }
    }

    /// Instance with `copies` agents per listed agent; copy `c` of `agents[i]`
    /// becomes agent `i * copies + c`.
    pub fn replicate(&self, agents: &[usize], copies: usize) -> Instance {
        Instance {
            m: self.m,
            valuations: agents
                .iter()
                .flat_map(|&a| std::iter::repeat_n(self.valuations[a].clone(), copies))
                .collect(),
        }
    }
}

/// `n` bundles that may overlap.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Multiallocation {
    pub bundles: Vec<ItemSet>,
}

impl Multiallocation {
    pub fn new(bundles: Vec<ItemSet>) -> Self {
        Self { bundles }
    }

    /// Largest number of bundles sharing one item; 0 when every bundle is empty.
    pub fn multiplicity(&self) -> usize {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for b in &self.bundles {
            for i in b.iter() {
                *counts.entry(i).or_default() += 1;
            }
        }
        counts.into_values().max().unwrap_or(0)
    }

    pub fn check_items(&self, m: usize) -> Result<()> {
        match self.bundles.iter().flat_map(|b| b.iter()).find(|&i| i >= m) {
            Some(i) => Err(Error::InvalidInstance(format!("item {i} is outside 0..{m}"))),
            None => Ok(()),
        }
    }
}

/// `n` pairwise disjoint bundles.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Allocation {
    pub bundles: Vec<ItemSet>,
}

impl Allocation {
    pub fn new(bundles: Vec<ItemSet>) -> Self {
        Self { bundles }
    }

    pub fn empty(n: usize) -> Self {
        Self {
            bundles: vec![ItemSet::new(); n],
        }
    }

    pub fn is_valid(&self) -> bool {
        verify_allocation(&self.bundles)
    }
}

impl From<Allocation> for Multiallocation {
    fn from(a: Allocation) -> Self {
        Multiallocation { bundles: a.bundles }
    }
}

/// True iff the bundles are pairwise disjoint.
pub fn verify_allocation(bundles: &[ItemSet]) -> bool {
    let mut seen = ItemSet::new();
    for b in bundles {
        if !seen.is_disjoint(b) {
            return false;
        }
        seen.union_with(b);
    }
    true
}

/// `value / mms`, with agents whose share is zero counted as fully satisfied.
pub fn share_ratio(value: &Rational, mms: &Rational) -> Rational {
    if mms.is_zero() {
        Rational::one()
    } else {
        value / mms
    }
}
