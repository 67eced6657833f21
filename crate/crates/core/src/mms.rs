//! Exact maximin shares.
//!
//! `MMS^r(ground)` is computed with a subset dynamic program over the local
//! masks of the ground set. The program only ever compares values, so it runs
//! on the integer ranks of the distinct subset values and maps the optimum
//! back to the exact rational at the end.

use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::model::{share_ratio, Allocation, Instance, ItemSet, LocalGround, Rational, Valuation};

/// Default exhaustive cap on the ground-set size.
pub const DEFAULT_MMS_CAP: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct MmsSolution {
    pub value: Rational,
    /// `r` disjoint bundles covering the ground set; the first one holds the lowest item.
    pub witness: Vec<ItemSet>,
}

pub fn mms_value(v: &Valuation, ground: &ItemSet, r: usize) -> Result<MmsSolution> {
    mms_value_capped(v, ground, r, DEFAULT_MMS_CAP)
}

pub fn mms_value_capped(v: &Valuation, ground: &ItemSet, r: usize, cap: usize) -> Result<MmsSolution> {
    assert!(r >= 1, "at least one bundle");
    let local = LocalGround::new(ground, cap, "mms ground set")?;
    let values = local.value_table(v)?;

    let mut distinct = values.clone();
    distinct.sort();
    distinct.dedup();
    let ranks: Vec<u32> = values
        .iter()
        .map(|x| distinct.binary_search(x).expect("value present") as u32)
        .collect();

    let size = ranks.len();
    // layers[j - 1][s] = best rank of the worst bundle when s is split into j bundles.
    let mut layers: Vec<Vec<u32>> = vec![ranks.clone()];
    for _ in 2..=r {
        let prev = layers.last().expect("non-empty");
        let mut cur = vec![0u32; size];
        cur[0] = ranks[0];
        for s in 1..size as u64 {
            let low = s & s.wrapping_neg();
            let rest = s ^ low;
            let mut best = 0u32;
            let mut u = 0u64;
            loop {
                let t = u | low;
                let cand = ranks[t as usize].min(prev[(s ^ t) as usize]);
                best = best.max(cand);
                if u == rest {
                    break;
                }
                u = (u | !rest).wrapping_add(1) & rest;
            }
            cur[s as usize] = best;
        }
        layers.push(cur);
    }

    let full = local.full_mask();
    let target = layers[r - 1][full as usize];

    let mut witness = Vec::with_capacity(r);
    let mut s = full;
    for j in (2..=r).rev() {
        if s == 0 {
            witness.push(ItemSet::new());
            continue;
        }
        let low = s & s.wrapping_neg();
        let rest = s ^ low;
        let want = layers[j - 1][s as usize];
        let prev = &layers[j - 2];
        let mut u = 0u64;
        let chosen = loop {
            let t = u | low;
            if ranks[t as usize].min(prev[(s ^ t) as usize]) == want {
                break t;
            }
            assert!(u != rest, "witness reconstruction lost the optimum");
            u = (u | !rest).wrapping_add(1) & rest;
        };
        witness.push(local.subset(chosen));
        s ^= chosen;
    }
    witness.push(local.subset(s));

    Ok(MmsSolution {
        value: distinct[target as usize].clone(),
        witness,
    })
}

/// Per-agent maximin share over all items with `n` bundles.
#[derive(Clone, Debug, PartialEq)]
pub struct MmsProfile {
    pub shares: Vec<MmsSolution>,
}

impl MmsProfile {
    pub fn compute(inst: &Instance) -> Result<Self> {
        Self::compute_capped(inst, DEFAULT_MMS_CAP)
    }

    pub fn compute_capped(inst: &Instance, cap: usize) -> Result<Self> {
        let ground = inst.items();
        let shares = inst
            .valuations()
            .iter()
            .map(|v| mms_value_capped(v, &ground, inst.n(), cap))
            .collect::<Result<_>>()?;
        Ok(Self { shares })
    }

    /// Profile from supplied witness partitions, each certified optimal.
    ///
    /// Certification uses the averaging bound `MMS ≤ V(M)/n` for additive
    /// agents and the exact program otherwise (within `cap`).
    pub fn from_witnesses(inst: &Instance, witnesses: Vec<Vec<ItemSet>>, cap: usize) -> Result<Self> {
        let all = inst.items();
        let n = inst.n();
        let mut shares = Vec::with_capacity(n);
        for (agent, witness) in witnesses.into_iter().enumerate() {
            let covered = witness.iter().fold(ItemSet::new(), |acc, b| acc.union(b));
            if witness.len() != n || covered != all || !crate::model::verify_allocation(&witness) {
                return Err(Error::InvalidInstance(format!(
                    "witness of agent {agent} is not a partition into {n} bundles"
                )));
            }
            let v = inst.valuation(agent);
            let value = witness
                .iter()
                .map(|b| v.eval(b))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .min()
                .unwrap_or_else(Rational::zero);
            let certified = match v {
                Valuation::Additive { .. } => {
                    value.clone() * Rational::from_integer(n.into()) == v.eval(&all)?
                }
                _ => false,
            };
            if !certified {
                let exact = mms_value_capped(v, &all, n, cap)?;
                if exact.value != value {
                    return Err(Error::InvariantViolation(format!(
                        "witness of agent {agent} is worth {value}, optimum is {}",
                        exact.value
                    )));
                }
            }
            shares.push(MmsSolution { value, witness });
        }
        Ok(Self { shares })
    }

    pub fn value(&self, agent: usize) -> &Rational {
        &self.shares[agent].value
    }

    pub fn witness(&self, agent: usize) -> &[ItemSet] {
        &self.shares[agent].witness
    }

    pub fn is_normalized(&self) -> bool {
        self.shares.iter().all(|s| s.value.is_one())
    }
}

/// Rescales every agent so its maximin share is exactly 1; returns the factors.
pub fn normalize_to_unit_mms(inst: &Instance) -> Result<(Instance, Vec<Rational>)> {
    let (inst, scales, _) = normalize_with_profile(inst, DEFAULT_MMS_CAP)?;
    Ok((inst, scales))
}

/// Normalization that also returns the rescaled profile (all values 1, same witnesses).
pub fn normalize_with_profile(inst: &Instance, cap: usize) -> Result<(Instance, Vec<Rational>, MmsProfile)> {
    let profile = MmsProfile::compute_capped(inst, cap)?;
    normalize_by_profile(inst, profile)
}

pub fn normalize_by_profile(inst: &Instance, profile: MmsProfile) -> Result<(Instance, Vec<Rational>, MmsProfile)> {
    let mut scales = Vec::with_capacity(inst.n());
    for (agent, share) in profile.shares.iter().enumerate() {
        if share.value.is_zero() {
            return Err(Error::ZeroMms { agent });
        }
        scales.push(share.value.recip());
    }
    let shares = profile
        .shares
        .into_iter()
        .map(|s| MmsSolution {
            value: Rational::one(),
            witness: s.witness,
        })
        .collect();
    Ok((inst.scaled(&scales), scales, MmsProfile { shares }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BetaCertificate {
    pub beta: Rational,
    pub allocation: Allocation,
    pub ratios: Vec<Rational>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BetaViolation {
    pub agent: usize,
    pub value: Rational,
    pub mms: Rational,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BetaCheck {
    Certified(BetaCertificate),
    Violated(Vec<BetaViolation>),
}

/// Exact check of `V_i(A_i) ≥ beta · MMS_i` for every agent.
pub fn certify_beta_mms(inst: &Instance, alloc: &Allocation, beta: &Rational, profile: &MmsProfile) -> Result<BetaCheck> {
    let mut ratios = Vec::with_capacity(inst.n());
    let mut violations = Vec::new();
    for (agent, bundle) in alloc.bundles.iter().enumerate() {
        let value = inst.value(agent, bundle)?;
        let mms = profile.value(agent).clone();
        if value < beta * &mms {
            violations.push(BetaViolation {
                agent,
                value: value.clone(),
                mms: mms.clone(),
            });
        }
        ratios.push(share_ratio(&value, &mms));
    }
    Ok(if violations.is_empty() {
        BetaCheck::Certified(BetaCertificate {
            beta: beta.clone(),
            allocation: alloc.clone(),
            ratios,
        })
    } else {
        BetaCheck::Violated(violations)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BigItemReduction {
    /// Renormalized residual instance; `None` once every agent holds a fixed item.
    pub residual: Option<Instance>,
    /// Original ids of the residual agents, in residual order.
    pub agents: Vec<usize>,
    /// Original ids of the residual items, in residual order.
    pub items: Vec<usize>,
    /// `(agent, item)` pairs fixed along the way, in original ids.
    pub fixed: Vec<(usize, usize)>,
}

/// Repeatedly hands a single item worth more than `beta` to the agent who
/// values it, drops both, and renormalizes the rest.
///
/// The input must be normalized. After every removal the surviving agents'
/// shares over the smaller instance (one bundle fewer) are recomputed and must
/// stay at least 1; otherwise an invariant violation is returned.
pub fn big_item_reduction(inst: &Instance, beta: &Rational, cap: usize) -> Result<BigItemReduction> {
    let mut agents: Vec<usize> = (0..inst.n()).collect();
    let mut items: Vec<usize> = (0..inst.m()).collect();
    let mut fixed = Vec::new();
    let mut cur = inst.clone();

    loop {
        let mut pick = None;
        'search: for a in 0..cur.n() {
            let mut best: Option<(usize, Rational)> = None;
            for b in 0..cur.m() {
                let v = cur.value(a, &ItemSet::singleton(b))?;
                if &v > beta && best.as_ref().is_none_or(|(_, bv)| &v > bv) {
                    best = Some((b, v));
                }
            }
            if let Some((b, _)) = best {
                pick = Some((a, b));
                break 'search;
            }
        }
        let Some((a, b)) = pick else {
            return Ok(BigItemReduction {
                residual: Some(cur),
                agents,
                items,
                fixed,
            });
        };

        fixed.push((agents[a], items[b]));
        let keep_agents: Vec<usize> = (0..cur.n()).filter(|&x| x != a).collect();
        let keep_items: Vec<usize> = (0..cur.m()).filter(|&x| x != b).collect();
        agents = keep_agents.iter().map(|&x| agents[x]).collect();
        items = keep_items.iter().map(|&x| items[x]).collect();
        if agents.is_empty() {
            return Ok(BigItemReduction {
                residual: None,
                agents,
                items,
                fixed,
            });
        }

        let next = cur.restrict(&keep_agents, &keep_items)?;
        let profile = MmsProfile::compute_capped(&next, cap)?;
        if let Some((agent, s)) = profile.shares.iter().enumerate().find(|(_, s)| s.value < Rational::one()) {
            return Err(Error::InvariantViolation(format!(
                "big-item removal lowered the share of agent {} to {}",
                agents[agent], s.value
            )));
        }
        cur = normalize_by_profile(&next, profile)?.0;
    }
}
