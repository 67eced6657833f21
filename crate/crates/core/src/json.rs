//! JSON file formats: instances, (multi)allocations, and rational numbers.
//!
//! Rationals are written as `"p/q"` strings (or plain integers) and read from
//! either strings or JSON integers.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{format_rational, parse_rational, Instance, ItemSet, Multiallocation, Rational, Valuation};

/// Serde adapter for [`Rational`].
#[derive(Clone, Debug, PartialEq)]
pub struct Q(pub Rational);

impl Serialize for Q {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_integer() {
            if let Ok(v) = i64::try_from(self.0.numer()) {
                return s.serialize_i64(v);
            }
        }
        s.serialize_str(&format_rational(&self.0))
    }
}

impl<'de> Deserialize<'de> for Q {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(Q(crate::model::int(v))),
            Raw::Str(s) => parse_rational(&s).map(Q).map_err(serde::de::Error::custom),
        }
    }
}

fn qs(v: &[Rational]) -> Vec<Q> {
    v.iter().cloned().map(Q).collect()
}

fn unq(v: Vec<Q>) -> Vec<Rational> {
    v.into_iter().map(|q| q.0).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValuationJson {
    Additive {
        weights: Vec<Q>,
    },
    UnitDemand {
        weights: Vec<Q>,
    },
    BudgetAdditive {
        weights: Vec<Q>,
        cap: Q,
    },
    Coverage {
        universe_weights: Vec<Q>,
        covers: Vec<Vec<usize>>,
    },
    Xos {
        clauses: Vec<Vec<Q>>,
    },
    Table {
        values: Vec<(String, Q)>,
    },
}

impl ValuationJson {
    pub fn into_valuation(self) -> Result<Valuation> {
        Ok(match self {
            ValuationJson::Additive { weights } => Valuation::Additive { weights: unq(weights) },
            ValuationJson::UnitDemand { weights } => Valuation::UnitDemand { weights: unq(weights) },
            ValuationJson::BudgetAdditive { weights, cap } => Valuation::BudgetAdditive {
                weights: unq(weights),
                cap: cap.0,
            },
            ValuationJson::Coverage {
                universe_weights,
                covers,
            } => Valuation::Coverage {
                universe_weights: unq(universe_weights),
                covers,
            },
            ValuationJson::Xos { clauses } => Valuation::Xos {
                clauses: clauses.into_iter().map(unq).collect(),
            },
            ValuationJson::Table { values } => Valuation::Table {
                values: values
                    .into_iter()
                    .map(|(k, v)| Ok((k.parse::<ItemSet>()?, v.0)))
                    .collect::<Result<_>>()?,
            },
        })
    }
}

impl From<&Valuation> for ValuationJson {
    fn from(v: &Valuation) -> Self {
        match v {
            Valuation::Additive { weights } => ValuationJson::Additive { weights: qs(weights) },
            Valuation::UnitDemand { weights } => ValuationJson::UnitDemand { weights: qs(weights) },
            Valuation::BudgetAdditive { weights, cap } => ValuationJson::BudgetAdditive {
                weights: qs(weights),
                cap: Q(cap.clone()),
            },
            Valuation::Coverage {
                universe_weights,
                covers,
            } => ValuationJson::Coverage {
                universe_weights: qs(universe_weights),
                covers: covers.clone(),
            },
            Valuation::Xos { clauses } => ValuationJson::Xos {
                clauses: clauses.iter().map(|c| qs(c)).collect(),
            },
            Valuation::Table { values } => {
                let mut values: Vec<(ItemSet, Rational)> =
                    values.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
                values.sort_by_key(|a| (a.0.len(), a.0.to_vec()));
                ValuationJson::Table {
                    values: values.into_iter().map(|(k, v)| (k.to_string(), Q(v))).collect(),
                }
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceJson {
    pub n: usize,
    pub m: usize,
    pub valuations: Vec<ValuationJson>,
}

impl InstanceJson {
    pub fn into_instance(self) -> Result<Instance> {
        if self.valuations.len() != self.n {
            return Err(Error::InvalidInstance(format!(
                "n = {} but {} valuations given",
                self.n,
                self.valuations.len()
            )));
        }
        let vals = self
            .valuations
            .into_iter()
            .map(ValuationJson::into_valuation)
            .collect::<Result<Vec<_>>>()?;
        Instance::new(self.m, vals)
    }
}

impl From<&Instance> for InstanceJson {
    fn from(inst: &Instance) -> Self {
        InstanceJson {
            n: inst.n(),
            m: inst.m(),
            valuations: inst.valuations().iter().map(ValuationJson::from).collect(),
        }
    }
}

pub fn instance_from_json(text: &str) -> Result<Instance> {
    serde_json::from_str::<InstanceJson>(text)?.into_instance()
}

pub fn instance_to_json(inst: &Instance) -> String {
    serde_json::to_string_pretty(&InstanceJson::from(inst)).expect("instance serializes")
}

/// `{"bundles": [[0, 1], [1, 2]]}`; used for multiallocations and allocations alike.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundlesJson {
    pub bundles: Vec<Vec<usize>>,
}

impl BundlesJson {
    pub fn from_sets(sets: &[ItemSet]) -> Self {
        BundlesJson {
            bundles: sets.iter().map(ItemSet::to_vec).collect(),
        }
    }

    pub fn into_sets(self) -> Vec<ItemSet> {
        self.bundles.into_iter().map(|b| b.into_iter().collect()).collect()
    }
}

pub fn multiallocation_from_json(text: &str) -> Result<Multiallocation> {
    Ok(Multiallocation::new(serde_json::from_str::<BundlesJson>(text)?.into_sets()))
}
