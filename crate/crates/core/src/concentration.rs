//! Concentration of subadditive functions on random subsets.
//!
//! Holds the bounded surrogate `f̄` (singletons capped, every other set
//! replaced by its cheapest split into pieces), exact and sampled
//! expectations of `f(R)` for a `p`-random subset `R`, and an empirical check
//! of the lower-tail inequality `Pr[f(R) ≥ f(M)·p/120] > 1 − 1/n̂`.

use num_traits::{One, Zero};
use rand::Rng as _;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gen::Rng;
use crate::model::{format_rational, from_f64, to_f64, ItemSet, LocalGround, Rational, Valuation};

pub const SURROGATE_CAP: usize = 15;
pub const EXACT_EXPECTATION_CAP: usize = 12;
/// Largest ground set on which the small-set maximum is found by enumeration.
pub const SMALL_SET_ENUMERATION_CAP: usize = 20;
/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.5758293035489;

#[derive(Clone, Debug)]
pub struct SurrogateTable {
    pub ground: ItemSet,
    pub cap: Rational,
    local: LocalGround,
    values: Vec<Rational>,
}

impl SurrogateTable {
    pub fn eval(&self, s: &ItemSet) -> Rational {
        self.values[self.local.mask_of(s) as usize].clone()
    }

    pub fn by_mask(&self) -> &[Rational] {
        &self.values
    }

    pub fn local(&self) -> &LocalGround {
        &self.local
    }
}

/// `f̄(∅) = 0`, `f̄({b}) = min(f({b}), cap)`, and otherwise
/// `f̄(X) = min(f(X), min_{∅ ≠ S ⊊ X} f̄(S) + f̄(X∖S))`.
pub fn bounded_surrogate(f: &Valuation, ground: &ItemSet, cap: &Rational) -> Result<SurrogateTable> {
    let local = LocalGround::new(ground, SURROGATE_CAP, "surrogate ground set")?;
    let fv = local.value_table(f)?;
    let size = fv.len();
    let mut values = vec![Rational::zero(); size];
    for x in 1..size {
        let low = x & x.wrapping_neg();
        let mut best = if x == low { fv[x].clone().min(cap.clone()) } else { fv[x].clone() };
        let rest = x ^ low;
        // Splits with the lowest item in the first piece; each unordered split once.
        let mut sub = rest;
        while sub != 0 {
            sub = (sub - 1) & rest;
            let s = sub | low;
            if s == x {
                continue;
            }
            let cand = &values[s] + &values[x ^ s];
            if cand < best {
                best = cand;
            }
        }
        values[x] = best;
    }
    Ok(SurrogateTable {
        ground: ground.clone(),
        cap: cap.clone(),
        local,
        values,
    })
}

/// `f(M̂)·p / (80(log₂ n̂ + 1))`, with the logarithm rounded to a double.
pub fn paper_cap(f_ground: &Rational, p: &Rational, n_hat: usize) -> Rational {
    let denom = 80.0 * ((n_hat.max(1) as f64).log2() + 1.0);
    f_ground * p / from_f64(denom)
}

/// `⌊40(log₂ n̂ + 1)/p⌋`, the set size up to which `f` must stay below `f(M̂)/2`.
pub fn size_bound(p: f64, n_hat: usize) -> usize {
    if p <= 0.0 {
        return usize::MAX;
    }
    (40.0 * ((n_hat.max(1) as f64).log2() + 1.0) / p).floor() as usize
}

/// The same size bound expressed through the cap: `⌊f(M̂)/(2·cap)⌋`.
pub fn size_bound_for_cap(f_ground: &Rational, cap: &Rational) -> usize {
    if cap.is_zero() {
        return usize::MAX;
    }
    let b = (f_ground / (cap * Rational::from_integer(2.into()))).floor().to_integer();
    usize::try_from(b).unwrap_or(usize::MAX)
}

fn top_sum(mut ws: Vec<Rational>, s: usize) -> Rational {
    ws.sort_by(|a, b| b.cmp(a));
    ws.into_iter().take(s).sum()
}

/// `max_{S ⊆ ground, |S| ≤ s} f(S)`, exactly.
pub fn max_small_set(f: &Valuation, ground: &ItemSet, s: usize) -> Result<Rational> {
    let s = s.min(ground.len());
    let pick = |w: &[Rational]| -> Vec<Rational> { ground.iter().map(|b| w[b].clone()).collect() };
    match f {
        Valuation::Additive { weights } => Ok(top_sum(pick(weights), s)),
        Valuation::UnitDemand { weights } => Ok(if s == 0 {
            Rational::zero()
        } else {
            pick(weights).into_iter().max().unwrap_or_else(Rational::zero)
        }),
        Valuation::BudgetAdditive { weights, cap } => Ok(top_sum(pick(weights), s).min(cap.clone())),
        Valuation::Xos { clauses } => Ok(clauses
            .iter()
            .map(|c| top_sum(pick(c), s))
            .max()
            .unwrap_or_else(Rational::zero)),
        Valuation::Coverage { .. } | Valuation::Table { .. } => {
            // Monotone, so sets of exactly s items suffice.
            let local = LocalGround::new(ground, SMALL_SET_ENUMERATION_CAP, "small-set maximum")?;
            let k = local.len();
            if s == 0 {
                return Ok(Rational::zero());
            }
            let mut best = Rational::zero();
            let mut mask = (1u64 << s) - 1;
            while mask < 1u64 << k {
                best = best.max(f.eval(&local.subset(mask))?);
                let c = mask & mask.wrapping_neg();
                let r = mask + c;
                mask = (((r ^ mask) >> 2) / c) | r;
            }
            Ok(best)
        }
    }
}

pub fn sample_subset(ground: &ItemSet, p: f64, rng: &mut Rng) -> ItemSet {
    let p = p.clamp(0.0, 1.0);
    ground.iter().filter(|_| rng.gen_bool(p)).collect()
}

/// `E[f(R)]` by enumerating all outcomes.
pub fn exact_expectation(f: &Valuation, ground: &ItemSet, p: &Rational) -> Result<Rational> {
    let local = LocalGround::new(ground, EXACT_EXPECTATION_CAP, "exact expectation")?;
    let values = local.value_table(f)?;
    let q = Rational::one() - p;
    let k = local.len();
    let mut total = Rational::zero();
    for (mask, v) in values.iter().enumerate() {
        let ones = mask.count_ones() as i32;
        total += v * num_traits::pow(p.clone(), ones as usize) * num_traits::pow(q.clone(), (k as i32 - ones) as usize);
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpectationReport {
    pub trials: usize,
    pub mean: f64,
    pub half_width: f64,
    /// `p·f(M)/2`.
    pub bound: String,
    pub passed: bool,
}

/// Sampled `E[f(R)]` against `p·f(ground)/2`; passes unless the 99% interval lies below.
pub fn check_expectation_bound(f: &Valuation, ground: &ItemSet, p: &Rational, trials: usize, rng: &mut Rng) -> Result<ExpectationReport> {
    assert!(trials >= 1);
    let pf = to_f64(p);
    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        samples.push(to_f64(&f.eval(&sample_subset(ground, pf, rng))?));
    }
    let t = trials as f64;
    let mean = samples.iter().sum::<f64>() / t;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (t - 1.0).max(1.0);
    let half_width = Z99 * (var / t).sqrt();
    let bound = p * f.eval(ground)? / Rational::from_integer(2.into());
    Ok(ExpectationReport {
        trials,
        mean,
        half_width,
        passed: mean + half_width >= to_f64(&bound) - 1e-12,
        bound: format_rational(&bound),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingSpec {
    pub p: Rational,
    pub n_hat: usize,
    pub trials: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcentrationStatus {
    Passed,
    Failed,
    PreconditionUnmet,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub status: ConcentrationStatus,
    pub size_bound: usize,
    /// `max f(S)` over `|S| ≤ size_bound`.
    pub max_small_set: String,
    pub half_value: String,
    /// `f(M)·p/120`.
    pub threshold: String,
    pub trials: usize,
    pub frequency: f64,
    /// Standard error of the frequency at the target probability `1 − 1/n̂`.
    pub sigma: f64,
    pub required: f64,
}

/// Frequency of `f(R) ≥ f(ground)·p/120` against `1 − 1/n̂ − 3σ`, provided
/// `f(S) ≤ f(ground)/2` for every `|S| ≤ 40(log₂ n̂ + 1)/p`.
pub fn check_concentration(f: &Valuation, ground: &ItemSet, spec: &SamplingSpec, rng: &mut Rng) -> Result<ConcentrationReport> {
    if spec.p < Rational::zero() || spec.p > Rational::one() {
        return Err(Error::InvalidInstance(format!("probability {} outside [0, 1]", spec.p)));
    }
    let pf = to_f64(&spec.p);
    let whole = f.eval(ground)?;
    let half = &whole / Rational::from_integer(2.into());
    let bound = size_bound(pf, spec.n_hat);
    let small = max_small_set(f, ground, bound)?;
    let threshold = &whole * &spec.p / Rational::from_integer(120.into());
    let target = 1.0 - 1.0 / spec.n_hat.max(1) as f64;
    let trials = spec.trials.max(1);
    let sigma = (target * (1.0 - target) / trials as f64).sqrt();
    let required = target - 3.0 * sigma;
    let mut report = ConcentrationReport {
        status: ConcentrationStatus::PreconditionUnmet,
        size_bound: bound,
        max_small_set: format_rational(&small),
        half_value: format_rational(&half),
        threshold: format_rational(&threshold),
        trials,
        frequency: 0.0,
        sigma,
        required,
    };
    if small > half {
        return Ok(report);
    }
    let mut hits = 0usize;
    for _ in 0..trials {
        if f.eval(&sample_subset(ground, pf, rng))? >= threshold {
            hits += 1;
        }
    }
    report.frequency = hits as f64 / trials as f64;
    report.status = if report.frequency >= required {
        ConcentrationStatus::Passed
    } else {
        ConcentrationStatus::Failed
    };
    Ok(report)
}
