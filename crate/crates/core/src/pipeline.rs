//! End-to-end pipelines: build a multiallocation from rounds of partial
//! allocations, then convert it into an allocation.
//!
//! * `warmup1` — rounds of quarter-value partial allocations.
//! * `warmup2` — rounds of replicated partial allocations, one random bundle per agent.
//! * `main` — rounds of guided half-value partial allocations.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_traits::{One, Zero};
use rand::Rng as _;
use serde::Serialize;

use crate::convert::{multialloc_to_alloc, Conversion, ConvertParams};
use crate::error::{Error, Result};
use crate::gen::{seeded, Rng};
use crate::guiding::GuidingParams;
use crate::mms::{big_item_reduction, normalize_by_profile, MmsProfile, DEFAULT_MMS_CAP};
use crate::model::{format_rational, rat, share_ratio, Allocation, Instance, ItemSet, Multiallocation, Rational};
use crate::partial::{disjoint_partials, partial_half_guided, partial_quarter};

/// Largest item count for the two-agent direct search.
pub const DIRECT_SEARCH_ITEMS: usize = 16;
pub const DEFAULT_PICK_REDRAWS: usize = 1000;
pub const DEFAULT_LOOP_RESTARTS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Warmup1,
    Warmup2,
    Main,
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pipeline::Warmup1 => "warmup1",
            Pipeline::Warmup2 => "warmup2",
            Pipeline::Main => "main",
        })
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warmup1" => Ok(Pipeline::Warmup1),
            "warmup2" => Ok(Pipeline::Warmup2),
            "main" => Ok(Pipeline::Main),
            other => Err(Error::Parse(format!("unknown pipeline {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineParams {
    pub convert: ConvertParams,
    pub guiding: GuidingParams,
    pub pick_redraws: usize,
    pub loop_restarts: usize,
    pub mms_cap: usize,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            convert: ConvertParams::default(),
            guiding: GuidingParams::default(),
            pick_redraws: DEFAULT_PICK_REDRAWS,
            loop_restarts: DEFAULT_LOOP_RESTARTS,
            mms_cap: DEFAULT_MMS_CAP,
        }
    }
}

/// `⌈log_{3/2} n⌉ + 2`.
pub fn warmup1_round_bound(n: usize) -> usize {
    ((n.max(1) as f64).ln() / 1.5f64.ln()).ceil() as usize + 2
}

/// `⌈log_{6/5} n⌉ + 6`.
pub fn warmup2_round_bound(n: usize) -> usize {
    ((n.max(1) as f64).ln() / 1.2f64.ln()).ceil() as usize + 6
}

/// `⌈log₂ log₂ n⌉ + 2`, for `n ≥ 4`.
pub fn main_round_bound(n: usize) -> usize {
    (n.max(2) as f64).log2().log2().max(0.0).ceil() as usize + 2
}

/// `⌈18·√(log_{6/5} m)⌉`, the largest multiplicity accepted by `warmup2`.
pub fn rejection_threshold(m: usize) -> usize {
    (18.0 * ((m.max(1) as f64).ln() / 1.2f64.ln()).sqrt()).ceil() as usize
}

/// `1/(10800·α·η·(log₂ α + log₂ log₂ n))`, with `log₂ log₂ n` clamped at 0.
pub fn reduction_beta(alpha: usize, eta: &Rational, n: usize) -> Rational {
    let loglog = if n >= 2 { (n as f64).log2().log2().max(0.0) } else { 0.0 };
    let logs = (alpha.max(1) as f64).log2() + loglog;
    // Log term rounded to 6 decimals (exact when the logs are integers).
    let logs = Rational::new(((logs * 1e6).round() as i64).into(), 1_000_000.into());
    let denom = logs * Rational::from_integer((10800 * alpha as i64).into()) * eta;
    if denom.is_zero() {
        Rational::one()
    } else {
        denom.recip()
    }
}

/// One round of served agents and their bundles, all worth at least `floor`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub round: usize,
    pub floor: Rational,
    pub bundles: BTreeMap<usize, ItemSet>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Staged {
    pub multiallocation: Multiallocation,
    pub layers: Vec<Layer>,
    pub rounds: usize,
    pub round_bound: usize,
    pub notes: BTreeMap<String, String>,
}

fn check_layers(inst: &Instance, layers: &[Layer]) -> Result<()> {
    for layer in layers {
        let bundles: Vec<ItemSet> = layer.bundles.values().cloned().collect();
        if !crate::model::verify_allocation(&bundles) {
            return Err(Error::InvariantViolation(format!("round {} layer overlaps", layer.round)));
        }
        for (&a, b) in &layer.bundles {
            if inst.value(a, b)? < layer.floor {
                return Err(Error::InvariantViolation(format!(
                    "agent {a} got less than {} in round {}",
                    layer.floor, layer.round
                )));
            }
        }
    }
    Ok(())
}

fn stack(n: usize, layers: &[Layer]) -> Multiallocation {
    let mut bundles = vec![ItemSet::new(); n];
    for layer in layers {
        for (&a, b) in &layer.bundles {
            bundles[a].union_with(b);
        }
    }
    Multiallocation::new(bundles)
}

/// Rounds of quarter-value partial allocations over the unserved agents.
pub fn warmup1(inst: &Instance, profile: &MmsProfile) -> Result<Staged> {
    let n = inst.n();
    let bound = warmup1_round_bound(n);
    let mut q: Vec<usize> = (0..n).collect();
    let mut layers = Vec::new();
    while !q.is_empty() {
        let pa = partial_quarter(inst, profile, &q)?;
        if pa.served.is_empty() {
            return Err(Error::StandInFailed { served: 0, quota: pa.quota });
        }
        q.retain(|a| !pa.served.contains_key(a));
        layers.push(Layer {
            round: layers.len() + 1,
            floor: pa.floor,
            bundles: pa.served,
        });
        if layers.len() > bound {
            return Err(Error::InvariantViolation(format!("warmup1 exceeded {bound} rounds")));
        }
    }
    check_layers(inst, &layers)?;
    Ok(Staged {
        multiallocation: stack(n, &layers),
        rounds: layers.len(),
        round_bound: bound,
        layers,
        notes: BTreeMap::new(),
    })
}

/// Rounds of replicated partial allocations, then one uniformly random
/// bundle per agent, redrawn while some item is used more than the
/// rejection threshold.
pub fn warmup2(inst: &Instance, profile: &MmsProfile, params: &PipelineParams, rng: &mut Rng) -> Result<Staged> {
    let n = inst.n();
    let bound = warmup2_round_bound(n);
    let threshold = rejection_threshold(inst.m());
    let mut draws = 0;
    for restart in 0..params.loop_restarts.max(1) {
        let mut q: Vec<usize> = (0..n).collect();
        let mut menus: BTreeMap<usize, Vec<ItemSet>> = BTreeMap::new();
        let mut layers = Vec::new();
        let mut rounds = 0;
        while !q.is_empty() {
            rounds += 1;
            let fam = disjoint_partials(inst, profile, &q)?;
            if fam.q_prime.is_empty() {
                return Err(Error::StandInFailed {
                    served: 0,
                    quota: q.len().div_ceil(6),
                });
            }
            if !crate::model::verify_allocation(&fam.all_bundles()) {
                return Err(Error::InvariantViolation(format!("round {rounds} bundles overlap")));
            }
            for r in &fam.rounds {
                for (&a, b) in r {
                    menus.entry(a).or_default().push(b.clone());
                }
                layers.push(Layer {
                    round: rounds,
                    floor: rat(1, 4),
                    bundles: r.clone(),
                });
            }
            q.retain(|a| !fam.q_prime.contains(a));
            if rounds > bound {
                return Err(Error::InvariantViolation(format!("warmup2 exceeded {bound} rounds")));
            }
        }
        check_layers(inst, &layers)?;

        for _ in 0..params.pick_redraws.max(1) {
            draws += 1;
            let bundles: Vec<ItemSet> = (0..n)
                .map(|a| {
                    let menu = &menus[&a];
                    menu[rng.gen_range(0..menu.len())].clone()
                })
                .collect();
            let ma = Multiallocation::new(bundles);
            if ma.multiplicity() <= threshold {
                let notes = [
                    ("rejection_threshold".to_string(), threshold.to_string()),
                    ("pick_draws".to_string(), draws.to_string()),
                    ("loop_restarts".to_string(), restart.to_string()),
                ]
                .into_iter()
                .collect();
                return Ok(Staged {
                    multiallocation: ma,
                    layers,
                    rounds,
                    round_bound: bound,
                    notes,
                });
            }
        }
    }
    Err(Error::RestartsExhausted {
        restarts: draws,
        bound: threshold,
    })
}

/// Rounds of guided half-value partial allocations; the coverage ratio
/// `r_i = n/|N_i|` must grow to at least `r_i(⌊r_i⌋ + 1)` per round.
pub fn main_rounds(inst: &Instance, profile: &MmsProfile, params: &PipelineParams, rng: &mut Rng) -> Result<Staged> {
    let n = inst.n();
    let bound = main_round_bound(n);
    let mut q: Vec<usize> = (0..n).collect();
    let mut layers = Vec::new();
    let mut ratios = Vec::new();
    while !q.is_empty() {
        let r = rat(n as i64, q.len() as i64);
        let pa = partial_half_guided(inst, profile, &q, &params.guiding, rng)?;
        q.retain(|a| !pa.served.contains_key(a));
        layers.push(Layer {
            round: layers.len() + 1,
            floor: pa.floor,
            bundles: pa.served,
        });
        if !q.is_empty() {
            let next = rat(n as i64, q.len() as i64);
            let grown = &r * (r.floor() + Rational::one());
            if next < grown {
                return Err(Error::InvariantViolation(format!(
                    "coverage ratio grew from {r} to {next}, below {grown}"
                )));
            }
        }
        ratios.push(format_rational(&r));
        if n >= 4 && layers.len() > bound {
            return Err(Error::InvariantViolation(format!("main pipeline exceeded {bound} rounds")));
        }
    }
    check_layers(inst, &layers)?;
    Ok(Staged {
        multiallocation: stack(n, &layers),
        rounds: layers.len(),
        round_bound: bound,
        layers,
        notes: [("coverage_ratios".to_string(), ratios.join(" "))].into_iter().collect(),
    })
}

/// Allocation maximizing the smallest share ratio, by enumeration (`n ≤ 2`).
pub fn direct_search(inst: &Instance, profile: &MmsProfile) -> Result<Allocation> {
    let n = inst.n();
    let m = inst.m();
    if n == 1 {
        return Ok(Allocation::new(vec![inst.items()]));
    }
    if n != 2 {
        return Err(Error::InvalidInstance(format!("direct search handles two agents, got {n}")));
    }
    if m > DIRECT_SEARCH_ITEMS {
        return Err(Error::CapExceeded {
            what: "two-agent direct search",
            size: m,
            cap: DIRECT_SEARCH_ITEMS,
        });
    }
    let mut best: Option<(Rational, u64)> = None;
    for mask in 0u64..1 << m {
        let a: ItemSet = (0..m).filter(|b| mask >> b & 1 == 0).collect();
        let b: ItemSet = (0..m).filter(|x| mask >> x & 1 == 1).collect();
        let ra = share_ratio(&inst.value(0, &a)?, profile.value(0));
        let rb = share_ratio(&inst.value(1, &b)?, profile.value(1));
        let worst = ra.min(rb);
        if best.as_ref().is_none_or(|(w, _)| worst > *w) {
            best = Some((worst, mask));
        }
    }
    let mask = best.expect("at least one split").1;
    Ok(Allocation::new(vec![
        (0..m).filter(|b| mask >> b & 1 == 0).collect(),
        (0..m).filter(|b| mask >> b & 1 == 1).collect(),
    ]))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AgentOutcome {
    pub agent: usize,
    pub bundle: Vec<usize>,
    pub value: String,
    pub mms: String,
    pub ratio: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GuaranteeReport {
    pub agents: Vec<AgentOutcome>,
    pub min_ratio: String,
    pub valid: bool,
}

/// Exact value / share ratio per agent (share 0 counts as ratio 1).
pub fn guarantee_report(inst: &Instance, alloc: &Allocation, profile: &MmsProfile) -> Result<GuaranteeReport> {
    let mut agents = Vec::with_capacity(inst.n());
    let mut min: Option<Rational> = None;
    for (a, bundle) in alloc.bundles.iter().enumerate() {
        let value = inst.value(a, bundle)?;
        let mms = profile.value(a);
        let ratio = share_ratio(&value, mms);
        min = Some(min.map_or(ratio.clone(), |m| m.min(ratio.clone())));
        agents.push(AgentOutcome {
            agent: a,
            bundle: bundle.to_vec(),
            value: format_rational(&value),
            mms: format_rational(mms),
            ratio: format_rational(&ratio),
        });
    }
    Ok(GuaranteeReport {
        agents,
        min_ratio: format_rational(&min.unwrap_or_else(Rational::zero)),
        valid: alloc.is_valid(),
    })
}

pub fn min_ratio(inst: &Instance, alloc: &Allocation, profile: &MmsProfile) -> Result<Rational> {
    let mut min: Option<Rational> = None;
    for (a, bundle) in alloc.bundles.iter().enumerate() {
        let r = share_ratio(&inst.value(a, bundle)?, profile.value(a));
        min = Some(min.map_or(r.clone(), |m| m.min(r)));
    }
    Ok(min.unwrap_or_else(Rational::zero))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerReport {
    pub round: usize,
    pub floor: String,
    pub served: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineReport {
    pub pipeline: Pipeline,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    /// How the allocation was produced: "rounds", "direct_search" or "trivial".
    pub route: String,
    pub rounds: usize,
    pub round_bound: usize,
    pub alpha: usize,
    pub layers: Vec<LayerReport>,
    pub conversion_attempts: usize,
    pub hard_agents: Vec<usize>,
    pub guarantee: GuaranteeReport,
    /// Thresholds and report-only constants, as strings.
    pub constants: BTreeMap<String, String>,
}

/// The pipeline's headline guarantee constant evaluated at this size (report only).
pub fn headline_bound(pipeline: Pipeline, n: usize, m: usize) -> f64 {
    let lg = |x: f64| x.max(1.0).log2();
    match pipeline {
        Pipeline::Warmup1 => 648000.0 * lg(n as f64) * lg(lg(n as f64)),
        Pipeline::Warmup2 => 12441600.0 * lg(m as f64).sqrt() * lg(lg(m as f64)),
        Pipeline::Main => 432000.0 * lg(lg(n as f64)).powi(2),
    }
}

/// Runs a pipeline on `inst` with the agents' (unnormalized) maximin profile.
pub fn run_pipeline(inst: &Instance, profile: &MmsProfile, pipeline: Pipeline, params: &PipelineParams, seed: u64) -> Result<(Allocation, PipelineReport)> {
    let mut rng = seeded(seed);
    let n = inst.n();
    let m = inst.m();
    let mut constants = BTreeMap::new();
    constants.insert("headline_bound".to_string(), format!("{:.6e}", headline_bound(pipeline, n, m)));

    let finish = |alloc: Allocation, route: &str, staged: Option<&Staged>, conv: Option<&Conversion>, mut constants: BTreeMap<String, String>| -> Result<(Allocation, PipelineReport)> {
        if !alloc.is_valid() {
            return Err(Error::InvariantViolation("final bundles overlap".into()));
        }
        let guarantee = guarantee_report(inst, &alloc, profile)?;
        if let Some(s) = staged {
            constants.extend(s.notes.clone());
        }
        if let Some(c) = conv {
            constants.insert("tau".into(), c.classes.tau.to_string());
        }
        let report = PipelineReport {
            pipeline,
            seed,
            n,
            m,
            route: route.to_string(),
            rounds: staged.map_or(0, |s| s.rounds),
            round_bound: staged.map_or(0, |s| s.round_bound),
            alpha: staged.map_or(1, |s| s.multiallocation.multiplicity()),
            layers: staged.map_or_else(Vec::new, |s| {
                s.layers
                    .iter()
                    .map(|l| LayerReport {
                        round: l.round,
                        floor: format_rational(&l.floor),
                        served: l.bundles.keys().copied().collect(),
                    })
                    .collect()
            }),
            conversion_attempts: conv.map_or(0, |c| c.attempts),
            hard_agents: conv.map_or_else(Vec::new, |c| c.classes.hard.iter().copied().collect()),
            guarantee,
            constants,
        };
        Ok((alloc, report))
    };

    if m <= n {
        let alloc = Allocation::new((0..n).map(|a| if a < m { ItemSet::singleton(a) } else { ItemSet::new() }).collect());
        return finish(alloc, "trivial", None, None, constants);
    }
    if pipeline == Pipeline::Main && n <= 2 {
        let alloc = direct_search(inst, profile)?;
        return finish(alloc, "direct_search", None, None, constants);
    }

    let (norm, _, norm_profile) = normalize_by_profile(inst, profile.clone())?;
    let staged = match pipeline {
        Pipeline::Warmup1 => warmup1(&norm, &norm_profile)?,
        Pipeline::Warmup2 => warmup2(&norm, &norm_profile, params, &mut rng)?,
        Pipeline::Main => main_rounds(&norm, &norm_profile, params, &mut rng)?,
    };
    let conv = multialloc_to_alloc(&norm, &staged.multiallocation, &params.convert, &mut rng)?;
    finish(conv.allocation.clone(), "rounds", Some(&staged), Some(&conv), constants)
}

/// Computes the exact profile (within `params.mms_cap`) and runs the pipeline.
pub fn solve(inst: &Instance, pipeline: Pipeline, params: &PipelineParams, seed: u64) -> Result<(Allocation, PipelineReport)> {
    let profile = MmsProfile::compute_capped(inst, params.mms_cap)?;
    run_pipeline(inst, &profile, pipeline, params, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReductionReport {
    pub alpha: usize,
    pub beta: String,
    pub eta: String,
    pub bypassed: bool,
    pub fixed: Vec<(usize, usize)>,
    pub residual_agents: Vec<usize>,
    pub residual_items: Vec<usize>,
    pub conversion_attempts: usize,
}

/// Fixes items worth more than `β` (from the measured multiplicity), converts
/// the residual multiallocation, and maps everything back to original ids.
/// `inst` must be normalized.
pub fn reduction_wrapper(inst: &Instance, ma: &Multiallocation, eta: &Rational, params: &PipelineParams, rng: &mut Rng) -> Result<(Allocation, ReductionReport)> {
    let alpha = ma.multiplicity();
    let beta = reduction_beta(alpha.max(1), eta, inst.n());
    let mut report = ReductionReport {
        alpha,
        beta: format_rational(&beta),
        eta: format_rational(eta),
        bypassed: false,
        fixed: vec![],
        residual_agents: vec![],
        residual_items: vec![],
        conversion_attempts: 0,
    };
    if alpha <= 1 {
        report.bypassed = true;
        return Ok((Allocation::new(ma.bundles.clone()), report));
    }
    let red = big_item_reduction(inst, &beta, params.mms_cap)?;
    let mut bundles = vec![ItemSet::new(); inst.n()];
    for &(a, b) in &red.fixed {
        bundles[a].insert(b);
    }
    if let Some(residual) = &red.residual {
        let pos: BTreeMap<usize, usize> = red.items.iter().enumerate().map(|(i, &b)| (b, i)).collect();
        let sub = Multiallocation::new(
            red.agents
                .iter()
                .map(|&a| ma.bundles[a].iter().filter_map(|b| pos.get(&b).copied()).collect())
                .collect(),
        );
        let conv = multialloc_to_alloc(residual, &sub, &params.convert, rng)?;
        for (j, &a) in red.agents.iter().enumerate() {
            bundles[a] = conv.allocation.bundles[j].iter().map(|b| red.items[b]).collect();
        }
        report.conversion_attempts = conv.attempts;
    }
    report.fixed = red.fixed;
    report.residual_agents = red.agents;
    report.residual_items = red.items;
    Ok((Allocation::new(bundles), report))
}
