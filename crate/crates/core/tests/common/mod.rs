//! Brute-force oracles shared by the integration tests. Nothing here calls
//! into the optimized routines it is compared against.

#![allow(dead_code)]

use num_rational::Ratio;
use num_traits::{One, Signed, ToPrimitive, Zero};

use mms_core::guiding::GuidingGraph;
use mms_core::model::{ItemSet, Rational, Valuation};

/// Maximin share by enumerating all `r^m` colourings of the items.
pub fn naive_mms(v: &Valuation, m: usize, r: usize) -> Rational {
    if r == 0 {
        return Rational::zero();
    }
    let mut colour = vec![0usize; m];
    let mut best: Option<Rational> = None;
    loop {
        let mut bundles = vec![ItemSet::new(); r];
        for (b, &c) in colour.iter().enumerate() {
            bundles[c].insert(b);
        }
        let worst = bundles.iter().map(|s| v.eval(s).unwrap()).min().unwrap();
        if best.as_ref().is_none_or(|b| worst > *b) {
            best = Some(worst);
        }
        // next colouring
        let mut i = 0;
        while i < m {
            colour[i] += 1;
            if colour[i] < r {
                break;
            }
            colour[i] = 0;
            i += 1;
        }
        if i == m {
            break;
        }
    }
    best.unwrap()
}

type Q = Ratio<i128>;

fn small(r: &Rational) -> Q {
    Q::new(r.numer().to_i128().unwrap(), r.denom().to_i128().unwrap())
}

fn big(q: &Q) -> Rational {
    Rational::new((*q.numer()).into(), (*q.denom()).into())
}

fn solve(rows: &[(Vec<Q>, Q)]) -> Option<Vec<Q>> {
    let k = rows.len();
    let mut a: Vec<Vec<Q>> = rows.iter().map(|(r, b)| r.iter().cloned().chain([*b]).collect()).collect();
    for c in 0..k {
        let p = (c..k).find(|&i| !a[i][c].is_zero())?;
        a.swap(c, p);
        let piv = a[c][c];
        for j in c..=k {
            a[c][j] /= piv;
        }
        for i in 0..k {
            if i != c && !a[i][c].is_zero() {
                let f = a[i][c];
                for j in c..=k {
                    let d = a[c][j] * f;
                    a[i][j] -= d;
                }
            }
        }
    }
    Some(a.into_iter().map(|r| r[k]).collect())
}

fn solve_f64(mut a: Vec<(Vec<f64>, f64)>) -> Option<Vec<f64>> {
    let k = a.len();
    for c in 0..k {
        let p = (c..k).max_by(|&i, &j| a[i].0[c].abs().total_cmp(&a[j].0[c].abs()))?;
        if a[p].0[c].abs() < 1e-9 {
            return None;
        }
        a.swap(c, p);
        for i in 0..k {
            if i != c {
                let f = a[i].0[c] / a[c].0[c];
                if f != 0.0 {
                    for j in c..k {
                        a[i].0[j] -= f * a[c].0[j];
                    }
                    a[i].1 -= f * a[c].1;
                }
            }
        }
    }
    Some(a.iter().enumerate().map(|(i, (r, b))| b / r[i]).collect())
}

/// Optimum of `max Σw, Σ_{b∈Y} w_b ≤ V(Y) ∀Y, w ≥ 0` over the `k` items of
/// `values` (indexed by mask), by enumerating every basic solution.
pub fn lp_vertex_optimum(values: &[Rational], k: usize) -> Rational {
    let mut cons: Vec<(Vec<Q>, Q)> = Vec::new();
    for mask in 1..(1usize << k) {
        cons.push(((0..k).map(|b| if mask >> b & 1 == 1 { Q::one() } else { Q::zero() }).collect(), small(&values[mask])));
    }
    for b in 0..k {
        cons.push(((0..k).map(|j| if j == b { -Q::one() } else { Q::zero() }).collect(), Q::zero()));
    }
    let feasible = |w: &[Q]| {
        cons.iter().all(|(row, rhs)| {
            let lhs: Q = row.iter().zip(w).map(|(a, x)| a * x).sum();
            lhs <= *rhs
        })
    };
    let mut best = Q::zero(); // w = 0 is always feasible
    let mut pick: Vec<usize> = (0..k).collect();
    let c = cons.len();
    let approx: Vec<(Vec<f64>, f64)> = cons
        .iter()
        .map(|(r, b)| (r.iter().map(|x| x.to_f64().unwrap()).collect(), b.to_f64().unwrap()))
        .collect();
    loop {
        // Cheap floating-point screen; survivors are re-solved exactly.
        let promising = solve_f64(pick.iter().map(|&i| approx[i].clone()).collect()).is_some_and(|w| {
            w.iter().all(|&x| x > -1e-7)
                && approx.iter().all(|(r, b)| r.iter().zip(&w).map(|(a, x)| a * x).sum::<f64>() <= b + 1e-7)
                && w.iter().sum::<f64>() >= best.to_f64().unwrap() - 1e-7
        });
        let rows: Vec<(Vec<Q>, Q)> = if promising { pick.iter().map(|&i| cons[i].clone()).collect() } else { Vec::new() };
        if let Some(w) = if promising { solve(&rows) } else { None } {
            if w.iter().all(|x| !x.is_negative()) && feasible(&w) {
                let obj: Q = w.iter().sum();
                if obj > best {
                    best = obj;
                }
            }
        }
        // next k-combination of c constraints
        let mut i = k;
        loop {
            if i == 0 {
                return big(&best);
            }
            i -= 1;
            if pick[i] != i + c - k {
                break;
            }
        }
        pick[i] += 1;
        for j in i + 1..k {
            pick[j] = pick[j - 1] + 1;
        }
    }
}

/// Holders of `item` lying in acyclic components of the subgraph formed by
/// the holders and all their edges, found by union–find.
pub fn tree_holders_union_find(g: &GuidingGraph, labels: &[ItemSet], item: usize) -> usize {
    let n = g.node_count();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let nx = p[y];
            p[y] = r;
            y = nx;
        }
        r
    }
    let holder = |a: usize| labels[a].contains(item);
    let mut cyclic_edges = Vec::new();
    for &(s, a) in &g.edges {
        if !holder(a) {
            continue;
        }
        let (x, y) = (find(&mut parent, s), find(&mut parent, g.seeds + a));
        if x == y {
            cyclic_edges.push(g.seeds + a);
        } else {
            parent[x] = y;
        }
    }
    let mut cyclic = std::collections::HashSet::new();
    for v in cyclic_edges {
        cyclic.insert(find(&mut parent, v));
    }
    (0..g.alloc_nodes())
        .filter(|&a| holder(a) && !cyclic.contains(&find(&mut parent, g.seeds + a)))
        .count()
}

/// `Σ_S Pr[R = S] f(S)` computed from scratch.
pub fn naive_expectation(f: &Valuation, items: &[usize], p: &Rational) -> Rational {
    let k = items.len();
    let mut total = Rational::zero();
    for mask in 0..1usize << k {
        let s: ItemSet = (0..k).filter(|b| mask >> b & 1 == 1).map(|b| items[b]).collect();
        let mut pr = Rational::one();
        for b in 0..k {
            pr *= if mask >> b & 1 == 1 { p.clone() } else { Rational::one() - p };
        }
        total += pr * f.eval(&s).unwrap();
    }
    total
}
