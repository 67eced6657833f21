//! Largest additive function below a valuation on a small set.
//!
//! Solves `max Σ w_b` subject to `Σ_{b∈Y} w_b ≤ V(Y)` for every `Y ⊆ x`,
//! `w ≥ 0`, exactly. The program is attacked through its covering dual
//!
//! ```text
//! min Σ_Y V(Y) y_Y   s.t.  Σ_{Y∋b} y_Y − s_b = 1,  y, s ≥ 0
//! ```
//!
//! with a revised simplex whose simplex multipliers are the weights. The
//! right-hand side is perturbed lexicographically (`1 + ε^{b+1}` in row `b`),
//! which both prevents cycling and makes the returned weights the
//! lexicographically greatest optimal vector in item order.

use std::collections::BTreeMap;

use num_traits::{One, Signed, Zero};

use crate::error::Result;
use crate::model::{LocalGround, ItemSet, Rational, Valuation};

pub const DEFAULT_LP_CAP: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct AdditiveFit {
    pub base_set: ItemSet,
    pub weights: BTreeMap<usize, Rational>,
}

impl AdditiveFit {
    pub fn weight(&self, item: usize) -> Rational {
        self.weights.get(&item).cloned().unwrap_or_else(Rational::zero)
    }

    /// `Σ_{b ∈ s} w_b`; items outside the base set weigh 0.
    pub fn value(&self, s: &ItemSet) -> Rational {
        s.iter().filter_map(|b| self.weights.get(&b)).sum()
    }

    pub fn total(&self) -> Rational {
        self.weights.values().sum()
    }

    pub fn max_weight(&self) -> Rational {
        self.weights.values().max().cloned().unwrap_or_else(Rational::zero)
    }

    /// Base items sorted by weight descending, ties by id.
    pub fn sorted_items(&self) -> Vec<usize> {
        let mut items: Vec<usize> = self.weights.keys().copied().collect();
        items.sort_by(|a, b| self.weights[b].cmp(&self.weights[a]).then(a.cmp(b)));
        items
    }
}

pub fn fit_additive_lower(v: &Valuation, x: &ItemSet) -> Result<AdditiveFit> {
    fit_additive_lower_capped(v, x, DEFAULT_LP_CAP)
}

pub fn fit_additive_lower_capped(v: &Valuation, x: &ItemSet, cap: usize) -> Result<AdditiveFit> {
    let local = LocalGround::new(x, cap, "lp base set")?;
    let k = local.len();
    if k <= 1 {
        let weights = local
            .items()
            .iter()
            .map(|&b| Ok((b, v.eval(&ItemSet::singleton(b))?)))
            .collect::<Result<_>>()?;
        return Ok(AdditiveFit {
            base_set: x.clone(),
            weights,
        });
    }
    let values = local.value_table(v)?;
    let w = DualSimplex::new(k, &values).solve();
    Ok(AdditiveFit {
        base_set: x.clone(),
        weights: local.items().iter().copied().zip(w).collect(),
    })
}

/// `Σ w / V(base)`; 1 for degenerate bases and for `V(base) = 0`.
pub fn fit_ratio(fit: &AdditiveFit, v: &Valuation) -> Result<Rational> {
    if fit.base_set.len() <= 1 {
        return Ok(Rational::one());
    }
    let whole = v.eval(&fit.base_set)?;
    if whole.is_zero() {
        return Ok(Rational::one());
    }
    Ok(fit.total() / whole)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Col {
    Set(u64),
    Surplus(usize),
}

struct DualSimplex<'a> {
    k: usize,
    values: &'a [Rational],
    basis: Vec<Col>,
    binv: Vec<Vec<Rational>>,
    /// Basic solution, one perturbation vector per row: `[constant, ε^1, …, ε^k]`.
    rhs: Vec<Vec<Rational>>,
}

impl<'a> DualSimplex<'a> {
    fn new(k: usize, values: &'a [Rational]) -> Self {
        let identity = |r: usize, c: usize| if r == c { Rational::one() } else { Rational::zero() };
        Self {
            k,
            values,
            basis: (0..k).map(|b| Col::Set(1 << b)).collect(),
            binv: (0..k).map(|r| (0..k).map(|c| identity(r, c)).collect()).collect(),
            rhs: (0..k)
                .map(|r| {
                    std::iter::once(Rational::one())
                        .chain((0..k).map(|c| identity(r, c)))
                        .collect()
                })
                .collect(),
        }
    }

    fn cost(&self, col: Col) -> Rational {
        match col {
            Col::Set(mask) => self.values[mask as usize].clone(),
            Col::Surplus(_) => Rational::zero(),
        }
    }

    fn multipliers(&self) -> Vec<Rational> {
        let mut pi = vec![Rational::zero(); self.k];
        for (r, &col) in self.basis.iter().enumerate() {
            let c = self.cost(col);
            if c.is_zero() {
                continue;
            }
            for (p, b) in pi.iter_mut().zip(&self.binv[r]) {
                *p += &c * b;
            }
        }
        pi
    }

    /// Most negative reduced cost (ties: surplus columns by item, then sets by mask).
    fn entering(&self, pi: &[Rational]) -> Option<Col> {
        let mut best: Option<(Rational, Col)> = None;
        let mut consider = |rc: Rational, col: Col| {
            if rc.is_negative() && best.as_ref().is_none_or(|(b, _)| rc < *b) {
                best = Some((rc, col));
            }
        };
        for (b, p) in pi.iter().enumerate() {
            consider(p.clone(), Col::Surplus(b));
        }
        let size = 1usize << self.k;
        let mut sums = vec![Rational::zero(); size];
        for mask in 1..size {
            let low = mask.trailing_zeros() as usize;
            sums[mask] = &sums[mask & (mask - 1)] + &pi[low];
            consider(&self.values[mask] - &sums[mask], Col::Set(mask as u64));
        }
        best.map(|(_, c)| c)
    }

    fn column(&self, col: Col) -> Vec<Rational> {
        match col {
            Col::Set(mask) => self
                .binv
                .iter()
                .map(|row| {
                    (0..self.k)
                        .filter(|&b| mask >> b & 1 == 1)
                        .map(|b| &row[b])
                        .sum()
                })
                .collect(),
            Col::Surplus(b) => self.binv.iter().map(|row| -&row[b]).collect(),
        }
    }

    fn leaving(&self, d: &[Rational]) -> usize {
        let mut best: Option<(usize, Vec<Rational>)> = None;
        for (r, dr) in d.iter().enumerate() {
            if !dr.is_positive() {
                continue;
            }
            let ratio: Vec<Rational> = self.rhs[r].iter().map(|x| x / dr).collect();
            if best.as_ref().is_none_or(|(_, b)| ratio < *b) {
                best = Some((r, ratio));
            }
        }
        // The primal side is feasible (w = 0), so the dual is bounded.
        best.expect("covering program is bounded").0
    }

    fn pivot(&mut self, r: usize, d: &[Rational]) {
        let dr = d[r].clone();
        for x in self.binv[r].iter_mut().chain(self.rhs[r].iter_mut()) {
            *x /= &dr;
        }
        let (pivot_binv, pivot_rhs) = (self.binv[r].clone(), self.rhs[r].clone());
        for (i, di) in d.iter().enumerate() {
            if i == r || di.is_zero() {
                continue;
            }
            for (x, p) in self.binv[i].iter_mut().zip(&pivot_binv) {
                *x -= di * p;
            }
            for (x, p) in self.rhs[i].iter_mut().zip(&pivot_rhs) {
                *x -= di * p;
            }
        }
    }

    fn solve(mut self) -> Vec<Rational> {
        loop {
            let pi = self.multipliers();
            let Some(col) = self.entering(&pi) else {
                return pi;
            };
            let d = self.column(col);
            let r = self.leaving(&d);
            self.pivot(r, &d);
            self.basis[r] = col;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{int, rat};

    fn set(ids: &[usize]) -> ItemSet {
        ids.iter().copied().collect()
    }

    #[test]
    fn additive_is_reproduced() {
        let v = Valuation::Additive {
            weights: vec![int(3), int(1), int(2)],
        };
        let fit = fit_additive_lower(&v, &ItemSet::full(3)).unwrap();
        assert_eq!(fit.weights.values().cloned().collect::<Vec<_>>(), vec![int(3), int(1), int(2)]);
        assert_eq!(fit_ratio(&fit, &v).unwrap(), int(1));
    }

    #[test]
    fn unit_demand_pair_is_lex_greatest() {
        let v = Valuation::UnitDemand {
            weights: vec![int(1), int(1)],
        };
        let fit = fit_additive_lower(&v, &set(&[0, 1])).unwrap();
        assert_eq!(fit.total(), int(1));
        assert_eq!(fit.weight(0), int(1));
        assert_eq!(fit.weight(1), int(0));
        assert_eq!(fit_ratio(&fit, &v).unwrap(), int(1));
    }

    #[test]
    fn budget_additive() {
        let v = Valuation::BudgetAdditive {
            weights: vec![int(2), int(2), int(2)],
            cap: int(3),
        };
        let fit = fit_additive_lower(&v, &ItemSet::full(3)).unwrap();
        assert_eq!(fit.total(), int(3));
        assert_eq!(fit.weight(0), int(2));
        assert_eq!(fit.weight(1), int(1));
    }

    #[test]
    fn fractional_optimum() {
        // Every pair is worth 1 and the triple is worth 1: w = 1/2 each would
        // break the triple, so the optimum is 1 at (1, 0, 0).
        let mut values = std::collections::HashMap::new();
        for mask in 1u64..8 {
            let s: ItemSet = (0..3).filter(|b| mask >> b & 1 == 1).collect();
            values.insert(s, int(1));
        }
        let v = Valuation::Table { values };
        let fit = fit_additive_lower(&v, &ItemSet::full(3)).unwrap();
        assert_eq!(fit.total(), int(1));
        assert_eq!(fit.weight(0), int(1));

        // Pairs worth 1, triple worth 3/2: optimum is w = (1/2, 1/2, 1/2).
        let mut values = std::collections::HashMap::new();
        for mask in 1u64..8 {
            let s: ItemSet = (0..3).filter(|b| mask >> b & 1 == 1).collect();
            let val = match s.len() {
                3 => rat(3, 2),
                _ => int(1),
            };
            values.insert(s, val);
        }
        let v = Valuation::Table { values };
        let fit = fit_additive_lower(&v, &ItemSet::full(3)).unwrap();
        assert_eq!(fit.total(), rat(3, 2));
    }

    #[test]
    fn degenerate_bases() {
        let v = Valuation::Additive {
            weights: vec![int(4), int(5)],
        };
        let one = fit_additive_lower(&v, &set(&[1])).unwrap();
        assert_eq!(one.weight(1), int(5));
        assert_eq!(fit_ratio(&one, &v).unwrap(), int(1));
        let none = fit_additive_lower(&v, &ItemSet::new()).unwrap();
        assert!(none.weights.is_empty());
        assert_eq!(fit_ratio(&none, &v).unwrap(), int(1));
    }

    #[test]
    fn zero_valuation_ratio_is_one() {
        let v = Valuation::Additive {
            weights: vec![int(0), int(0)],
        };
        let fit = fit_additive_lower(&v, &set(&[0, 1])).unwrap();
        assert_eq!(fit_ratio(&fit, &v).unwrap(), int(1));
    }

    #[test]
    fn cap_is_enforced() {
        let v = Valuation::Additive { weights: vec![int(1); 5] };
        assert!(fit_additive_lower_capped(&v, &ItemSet::full(5), 4).is_err());
    }

    #[test]
    fn sorted_items_break_ties_by_id() {
        let fit = AdditiveFit {
            base_set: set(&[0, 1, 2]),
            weights: [(0, int(1)), (1, int(2)), (2, int(1))].into_iter().collect(),
        };
        assert_eq!(fit.sorted_items(), vec![1, 0, 2]);
    }
}
