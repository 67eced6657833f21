//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any FAIL.
//!
//! Runs without the libtest harness so the lines always reach the log.

mod common;

use std::time::{Duration, Instant};

use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::Rng as _;

use mms_core::concentration::{
    bounded_surrogate, check_concentration, check_expectation_bound, exact_expectation, max_small_set, size_bound_for_cap, ConcentrationStatus, SamplingSpec,
};
use mms_core::convert::{check_easy_bounds, failing_hard_agents, multialloc_to_alloc, ConvertParams};
use mms_core::gen::{planted_additive, random_instance, random_multiallocation, random_valuation, seeded, Kind, ALL_KINDS};
use mms_core::guiding::{base_graph, build_graph, girth, girth_lift, label_edges, label_nodes, estimate_success, red_edge_check, seed_disjoint, GuidingParams, DEFAULT_EDGE_BUDGET};
use mms_core::lp::{fit_additive_lower, fit_ratio};
use mms_core::mms::{mms_value, normalize_by_profile, MmsProfile};
use mms_core::model::{rat, share_ratio, to_f64, verify_allocation, Instance, ItemSet, Rational};
use mms_core::partial::disjoint_partials;
use mms_core::pipeline::{rejection_threshold, solve, warmup1_round_bound, Pipeline, PipelineParams};

const C1_INSTANCES: usize = 200;
const C1_LIMIT: Duration = Duration::from_secs(60);
const C2_VALUATIONS: usize = 100;
const C2_LIMIT: Duration = Duration::from_secs(60);
const C3_MULTIALLOCS: usize = 100;
const C3_SEEDS: u64 = 3;
const C3_MAX_RETRIES: usize = 1000;
const C5_TRIALS: usize = 10_000;
const C5_SLACK: f64 = 0.05;
const C5_LIMIT: Duration = Duration::from_secs(300);
const C6_TRIALS: usize = 10_000;
const C7_CORPUS: usize = 50;

struct Verdict {
    id: u8,
    title: &'static str,
    failures: Vec<String>,
    detail: String,
    elapsed: Duration,
}

impl Verdict {
    fn new(id: u8, title: &'static str) -> Self {
        Self { id, title, failures: Vec::new(), detail: String::new(), elapsed: Duration::ZERO }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(what());
        }
    }
}

fn timed(id: u8, title: &'static str, body: impl FnOnce(&mut Verdict)) -> Verdict {
    let mut v = Verdict::new(id, title);
    let start = Instant::now();
    body(&mut v);
    v.elapsed = start.elapsed();
    v
}

/// Exact MMS program against all colourings.
fn mms_oracle() -> Verdict {
    timed(1, "maximin share program matches colouring enumeration", |v| {
        let mut rng = seeded(1001);
        let start = Instant::now();
        for i in 0..C1_INSTANCES {
            let kind = ALL_KINDS[i % ALL_KINDS.len()];
            let m = rng.gen_range(1..=8);
            let r = rng.gen_range(1..=3);
            let val = random_valuation(kind, m, &mut rng);
            let ground = ItemSet::full(m);
            let sol = mms_value(&val, &ground, r).unwrap();
            let naive = common::naive_mms(&val, m, r);
            v.check(sol.value == naive, || format!("instance {i} ({kind:?}, m={m}, r={r}): {} vs {naive}", sol.value));
            let worst = sol.witness.iter().map(|b| val.eval(b).unwrap()).min().unwrap();
            let covered = sol.witness.iter().fold(ItemSet::new(), |a, b| a.union(b));
            v.check(sol.witness.len() == r && verify_allocation(&sol.witness) && covered == ground && worst == sol.value, || {
                format!("instance {i}: witness is not an optimal partition")
            });
        }
        let t = start.elapsed();
        v.check(t < C1_LIMIT, || format!("took {t:?}"));
        v.detail = format!("{C1_INSTANCES} instances, exact equality");
    })
}

/// Additive underestimates: feasibility, ratio floor, vertex optimality.
fn lp_underestimate() -> Verdict {
    timed(2, "additive underestimate is feasible, within 1/(3 log2 |X|), optimal", |v| {
        let mut rng = seeded(2002);
        let start = Instant::now();
        let mut oracle_runs = 0;
        let mut worst_margin = f64::INFINITY;
        for i in 0..C2_VALUATIONS {
            let kind = ALL_KINDS[i % ALL_KINDS.len()];
            let m = 8;
            let val = random_valuation(kind, m, &mut rng);
            let size = rng.gen_range(1..=8);
            let mut items: Vec<usize> = (0..m).collect();
            items.shuffle(&mut rng);
            items.truncate(size);
            items.sort_unstable();
            let x: ItemSet = items.iter().copied().collect();
            let fit = fit_additive_lower(&val, &x).unwrap();

            let mut table = Vec::with_capacity(1 << size);
            for mask in 0..1usize << size {
                let y: ItemSet = (0..size).filter(|b| mask >> b & 1 == 1).map(|b| items[b]).collect();
                let vy = val.eval(&y).unwrap();
                v.check(fit.value(&y) <= vy, || format!("valuation {i}: constraint {y} violated"));
                table.push(vy);
            }
            v.check(fit.weights.values().all(|w| *w >= Rational::zero()), || format!("valuation {i}: negative weight"));

            let ratio = fit_ratio(&fit, &val).unwrap();
            if size >= 2 {
                let floor = 1.0 / (3.0 * (size as f64).log2());
                worst_margin = worst_margin.min(to_f64(&ratio) - floor);
                v.check(to_f64(&ratio) >= floor, || format!("valuation {i} ({kind:?}, |X|={size}): ratio {ratio} below {floor:.4}"));
            }
            if size <= 5 {
                oracle_runs += 1;
                let opt = common::lp_vertex_optimum(&table, size);
                v.check(fit.total() == opt, || format!("valuation {i}: objective {} vs vertex optimum {opt}", fit.total()));
            }
        }
        let t = start.elapsed();
        v.check(t < C2_LIMIT, || format!("took {t:?}"));
        v.detail = format!("{C2_VALUATIONS} valuations, {oracle_runs} vertex-checked, min ratio margin {worst_margin:.3}");
    })
}

/// Multiallocation to allocation: disjointness and both exact guarantees.
fn converter() -> Verdict {
    timed(3, "conversion is disjoint and meets the easy/hard guarantees", |v| {
        let mut rng = seeded(3003);
        let (mut runs, mut hard_seen, mut max_attempts) = (0, 0, 0);
        for i in 0..C3_MULTIALLOCS {
            let n = rng.gen_range(2..=6);
            let m = rng.gen_range(n..=12);
            let alpha = rng.gen_range(1..=3);
            let inst = random_instance(n, m, &ALL_KINDS, &mut rng);
            let ma = random_multiallocation(n, m, alpha, &mut rng);
            // Alternate the default threshold with tiny ones that force hard agents.
            let tau_scale = [1.0, 0.01, 0.002][i % 3];
            let params = ConvertParams { tau_scale, max_retries: C3_MAX_RETRIES, ..ConvertParams::default() };
            for seed in 0..C3_SEEDS {
                runs += 1;
                let conv = match multialloc_to_alloc(&inst, &ma, &params, &mut seeded(seed)) {
                    Ok(c) => c,
                    Err(e) => {
                        v.failures.push(format!("multiallocation {i} seed {seed}: {e}"));
                        continue;
                    }
                };
                hard_seen += conv.classes.hard.len();
                max_attempts = max_attempts.max(conv.attempts);
                v.check(conv.allocation.is_valid(), || format!("multiallocation {i} seed {seed}: bundles overlap"));
                v.check(conv.allocation.bundles.iter().zip(&ma.bundles).all(|(b, a)| b.is_subset(a)), || {
                    format!("multiallocation {i} seed {seed}: bundle outside the original")
                });
                v.check(check_easy_bounds(&inst, &conv).is_ok(), || format!("multiallocation {i} seed {seed}: easy-agent bound"));
                let failing = failing_hard_agents(&inst, &ma, &conv.classes, &conv.allocation, conv.alpha).unwrap();
                v.check(failing.is_empty(), || format!("multiallocation {i} seed {seed}: hard agents {failing:?} below 1/(480α)"));
            }
        }
        v.check(hard_seen > 0, || "no hard agent was exercised".into());
        v.detail = format!("{runs} conversions, {hard_seen} hard-agent cases, max {max_attempts} attempts");
    })
}

/// Replicated partial allocations on planted instances.
fn disjoint_family() -> Verdict {
    timed(4, "replicated partials give ⌈k⌉ disjoint quarter rounds", |v| {
        let mut rng = seeded(4004);
        let mut cases = 0;
        for &n in &[12usize, 18] {
            for rep in 0..4 {
                let (inst, parts) = planted_additive(n, 2, &mut rng);
                let profile = MmsProfile::from_witnesses(&inst, parts, 12).unwrap();
                let (norm, _, norm_profile) = normalize_by_profile(&inst, profile).unwrap();
                let mut agents: Vec<usize> = (0..n).collect();
                agents.shuffle(&mut rng);
                for size in 1..=n / 6 {
                    let mut q = agents[..size].to_vec();
                    q.sort_unstable();
                    cases += 1;
                    let fam = match disjoint_partials(&norm, &norm_profile, &q) {
                        Ok(f) => f,
                        Err(e) => {
                            v.failures.push(format!("n={n} rep {rep} |q|={size}: {e}"));
                            continue;
                        }
                    };
                    let ck = fam.k.ceil().to_integer();
                    v.check(fam.rounds.len() as i64 == i64::try_from(ck).unwrap(), || format!("n={n} |q|={size}: {} rounds for k={}", fam.rounds.len(), fam.k));
                    v.check(verify_allocation(&fam.all_bundles()), || format!("n={n} |q|={size}: rounds overlap"));
                    v.check(fam.q_prime.len() >= size.div_ceil(6), || format!("n={n} |q|={size}: only {} kept", fam.q_prime.len()));
                    for round in &fam.rounds {
                        for (&a, b) in round {
                            v.check(norm.value(a, b).unwrap() >= rat(1, 4), || format!("n={n} |q|={size}: agent {a} below 1/4"));
                        }
                    }
                }
            }
        }
        v.detail = format!("{cases} groups over |N| ∈ {{12, 18}}");
    })
}

/// Guiding graphs: lifting, seed-disjointness, red edges, success rate.
fn guiding() -> Verdict {
    timed(5, "lifted guiding graphs are seed-disjoint and meet k/(k+1)", |v| {
        let start = Instant::now();
        for (q, k) in [(2usize, 1usize), (3, 2)] {
            let base = base_graph(q, k);
            let lifted = girth_lift(&base, DEFAULT_EDGE_BUDGET).unwrap();
            let (g0, g1) = (girth(&base), girth(&lifted));
            v.check(g0 == Some(4), || format!("K_{{{},{q}}} base girth {g0:?}", k + 1));
            v.check(g1.is_some_and(|g| g >= 6), || format!("K_{{{},{q}}} lifted girth {g1:?}", k + 1));
            v.check(lifted.degrees_ok(), || "lift broke the degree structure".into());
        }
        let mut rng = seeded(5005);
        let mut fractions = Vec::new();
        for k in 1..=3usize {
            let q_size = 2;
            let (inst, parts) = planted_additive(12, 2, &mut rng);
            let profile = MmsProfile::from_witnesses(&inst, parts, 12).unwrap();
            let (norm, _, norm_profile) = normalize_by_profile(&inst, profile).unwrap();
            let group: Vec<usize> = (0..q_size).collect();
            let witnesses: Vec<Vec<ItemSet>> = group.iter().map(|&a| norm_profile.witness(a).to_vec()).collect();
            let (g, _) = build_graph(q_size, k, &GuidingParams::default());
            let lab = label_edges(&g, label_nodes(&g, &witnesses, &mut rng)).unwrap();
            v.check(seed_disjoint(&g, &lab), || format!("k={k}: a seed holds overlapping bundles"));
            let red = red_edge_check(&g, &lab, &norm, &group).unwrap();
            v.check(red.violations == 0 && red.min_red.is_none_or(|r| r >= k), || format!("k={k}: red-edge check {red:?}"));
            let est = estimate_success(&g, &lab, &norm, &group, C5_TRIALS, &mut rng).unwrap();
            let target = k as f64 / (k + 1) as f64 - C5_SLACK;
            fractions.push(format!("k={k}: {:.3}", est.fraction));
            v.check(est.fraction >= target, || format!("k={k}: success {:.4} below {target:.4}", est.fraction));
        }
        let t = start.elapsed();
        v.check(t < C5_LIMIT, || format!("took {t:?}"));
        v.detail = fractions.join(", ");
    })
}

/// Expectation and concentration of subadditive functions on random subsets.
fn concentration() -> Verdict {
    timed(6, "random-subset expectation, concentration and surrogate invariants", |v| {
        let mut rng = seeded(6006);
        // Exact expectations.
        let mut exact_cases = 0;
        for i in 0..30 {
            let kind = ALL_KINDS[i % ALL_KINDS.len()];
            let m = rng.gen_range(1..=12);
            let f = random_valuation(kind, m, &mut rng);
            let ground = ItemSet::full(m);
            for p in [rat(1, 4), rat(1, 2), rat(3, 4)] {
                exact_cases += 1;
                let e = exact_expectation(&f, &ground, &p).unwrap();
                let naive = common::naive_expectation(&f, &ground.to_vec(), &p);
                v.check(e == naive, || format!("case {i}: expectation {e} vs {naive}"));
                let half = &p * f.eval(&ground).unwrap() / rat(2, 1);
                v.check(e >= half, || format!("case {i} ({kind:?}, p={p}): E = {e} below {half}"));
                let rep = check_expectation_bound(&f, &ground, &p, 2000, &mut rng).unwrap();
                v.check(rep.passed, || format!("case {i}: sampled expectation check failed {rep:?}"));
            }
        }
        // Concentration on large ground sets.
        let mut freq = Vec::new();
        for (kind, m) in [(Kind::Additive, 2000usize), (Kind::Xos, 2000)] {
            let f = random_valuation(kind, m, &mut rng);
            for p in [rat(1, 4), rat(1, 2)] {
                let spec = SamplingSpec { p: p.clone(), n_hat: 2, trials: C6_TRIALS };
                let rep = check_concentration(&f, &ItemSet::full(m), &spec, &mut rng).unwrap();
                freq.push(format!("{kind:?} p={p}: {:.4}", rep.frequency));
                v.check(rep.status == ConcentrationStatus::Passed && rep.frequency >= rep.required, || {
                    format!("{kind:?} m={m} p={p}: {:?}, frequency {} vs {}", rep.status, rep.frequency, rep.required)
                });
            }
        }
        // Surrogate invariants, exhaustively.
        let mut lemma_cases = 0;
        for i in 0..30 {
            let kind = ALL_KINDS[i % ALL_KINDS.len()];
            let m = rng.gen_range(2..=10);
            let f = random_valuation(kind, m, &mut rng);
            let ground = ItemSet::full(m);
            let whole = f.eval(&ground).unwrap();
            for c in [rat(1, 20), rat(1, 8), rat(1, 4), rat(1, 2), Rational::one()] {
                let cap = &whole * &c;
                let sur = bounded_surrogate(&f, &ground, &cap).unwrap();
                let t = sur.by_mask();
                let full = (1usize << m) - 1;
                let mut ok = t[0].is_zero();
                for s in 1..=full {
                    let fs = f.eval(&sur.local().subset(s as u64)).unwrap();
                    ok &= t[s] <= fs;
                    for b in 0..m {
                        if s >> b & 1 == 1 {
                            ok &= t[s ^ (1 << b)] <= t[s];
                        }
                    }
                    // disjoint pairs suffice once monotone
                    let mut sub = s;
                    while sub != 0 {
                        sub = (sub - 1) & s;
                        ok &= t[s] <= &t[sub] + &t[s ^ sub];
                    }
                }
                v.check(ok, || format!("surrogate {i} ({kind:?}, cap {cap}): not monotone, subadditive and ≤ f"));
                let s = size_bound_for_cap(&whole, &cap);
                let half = &whole / rat(2, 1);
                if max_small_set(&f, &ground, s).unwrap() <= half {
                    lemma_cases += 1;
                    v.check(t[full] >= half, || format!("surrogate {i} ({kind:?}, cap {cap}): f̄(M) = {} below f(M)/2", t[full]));
                }
            }
        }
        v.check(lemma_cases > 0, || "half-value precondition never held".into());
        v.detail = format!("{exact_cases} exact expectations; {}; {lemma_cases} half-value cases", freq.join(", "));
    })
}

/// End-to-end pipelines on a small corpus.
fn pipelines() -> Verdict {
    timed(7, "pipelines terminate within their round bounds, valid and reproducible", |v| {
        let mut rng = seeded(7007);
        let params = PipelineParams::default();
        let mut worst: Option<Rational> = None;
        let mut rounds = [0usize; 3];
        for i in 0..C7_CORPUS {
            let n = rng.gen_range(1..=6);
            let m = rng.gen_range(1..=12);
            let inst: Instance = random_instance(n, m, &ALL_KINDS, &mut rng);
            let profile = match MmsProfile::compute(&inst) {
                Ok(p) => p,
                Err(e) => {
                    v.failures.push(format!("instance {i}: {e}"));
                    continue;
                }
            };
            let mut w1_rounds = None;
            for (j, p) in [Pipeline::Warmup1, Pipeline::Warmup2, Pipeline::Main].into_iter().enumerate() {
                let seed = 100 + i as u64;
                let (alloc, rep) = match solve(&inst, p, &params, seed) {
                    Ok(x) => x,
                    Err(e) => {
                        v.failures.push(format!("instance {i} (n={n}, m={m}) {p}: {e}"));
                        continue;
                    }
                };
                rounds[j] = rounds[j].max(rep.rounds);
                v.check(alloc.is_valid() && alloc.bundles.len() == n, || format!("instance {i} {p}: invalid allocation"));
                v.check(rep.route != "rounds" || rep.rounds <= rep.round_bound || (p == Pipeline::Main && n < 4), || {
                    format!("instance {i} {p}: {} rounds, bound {}", rep.rounds, rep.round_bound)
                });
                v.check(p != Pipeline::Warmup1 || rep.rounds <= warmup1_round_bound(n), || format!("instance {i}: warmup1 bound"));
                if rep.route == "rounds" {
                    match p {
                        Pipeline::Warmup1 => w1_rounds = Some(rep.rounds),
                        Pipeline::Warmup2 => {
                            if let Some(r1) = w1_rounds {
                                v.check(rep.rounds <= r1, || format!("instance {i}: warmup2 took {} rounds, warmup1 {r1}", rep.rounds));
                            }
                        }
                        Pipeline::Main => {}
                    }
                }
                // Independent recomputation of the reported ratios.
                for (a, out) in rep.guarantee.agents.iter().enumerate() {
                    let r = share_ratio(&inst.value(a, &alloc.bundles[a]).unwrap(), profile.value(a));
                    v.check(mms_core::model::format_rational(&r) == out.ratio, || format!("instance {i} {p}: agent {a} ratio mismatch"));
                    worst = Some(worst.map_or(r.clone(), |w| w.min(r)));
                }
                let again = solve(&inst, p, &params, seed).unwrap();
                v.check(
                    serde_json::to_string(&rep).unwrap() == serde_json::to_string(&again.1).unwrap() && again.0 == alloc,
                    || format!("instance {i} {p}: rerun differs"),
                );
            }
        }
        v.detail = format!(
            "{C7_CORPUS} instances x 3 pipelines, max rounds {:?}, worst ratio {}",
            rounds,
            worst.map(|w| mms_core::model::format_rational(&w)).unwrap_or_default()
        );
    })
}

/// The rejection bound uses logarithms base 6/5.
fn rejection_bound() -> Verdict {
    timed(8, "rejection threshold is ⌈18·√(log_{6/5} m)⌉", |v| {
        for (m, want) in [(10usize, 64usize), (100, 91)] {
            let got = rejection_threshold(m);
            v.check(got == want, || format!("m={m}: {got}, expected {want}"));
            let formula = (18.0 * ((m as f64).ln() / 1.2f64.ln()).sqrt()).ceil() as usize;
            v.check(got == formula, || format!("m={m}: {got} vs formula {formula}"));
        }
        v.detail = "m=10 → 64, m=100 → 91".into();
    })
}

fn main() {
    let criteria: Vec<fn() -> Verdict> = vec![mms_oracle, lp_underestimate, converter, disjoint_family, guiding, concentration, pipelines, rejection_bound];
    let verdicts: Vec<Verdict> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria.into_iter().map(|c| s.spawn(c)).collect();
        handles.into_iter().map(|h| h.join().expect("criterion panicked")).collect()
    });
    let mut failed = 0;
    for v in &verdicts {
        if v.failures.is_empty() {
            println!("PASS [{}] {} — {} ({:.1?})", v.id, v.title, v.detail, v.elapsed);
        } else {
            failed += 1;
            println!("FAIL [{}] {} — {} failure(s) ({:.1?})", v.id, v.title, v.failures.len(), v.elapsed);
            for f in v.failures.iter().take(10) {
                println!("    {f}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", verdicts.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
