//! The `mmsalloc` command line.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::concentration::{check_concentration, check_expectation_bound, exact_expectation, SamplingSpec, EXACT_EXPECTATION_CAP};
use crate::convert::{multialloc_to_alloc, ConvertParams, DEFAULT_MAX_RETRIES, DEFAULT_PAIR_CAP};
use crate::error::{Error, Result};
use crate::gen::seeded;
use crate::guiding::{build_graph, girth, label_edges, label_nodes, red_edge_check, estimate_success, seed_disjoint, target_girth, GuidingParams};
use crate::json::{instance_from_json, multiallocation_from_json, BundlesJson};
use crate::lp::{fit_additive_lower_capped, fit_ratio, DEFAULT_LP_CAP};
use crate::mms::{certify_beta_mms, normalize_by_profile, BetaCheck, MmsProfile, DEFAULT_MMS_CAP};
use crate::model::{format_rational, parse_rational, Allocation, Instance, ItemSet, Rational};
use crate::partial::{disjoint_partials, partial_half_guided, partial_quarter};
use crate::pipeline::{guarantee_report, reduction_wrapper, run_pipeline, Pipeline, PipelineParams};

#[derive(Parser, Debug)]
#[command(name = "mmsalloc", version, about = "Approximate maximin-share allocations for subadditive valuations")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Monte Carlo trials (guide, concentration).
    #[arg(long, global = true, default_value_t = 10_000)]
    pub trials: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PartialMode {
    Quarter,
    Disjoint,
    HalfGuided,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PipelineArg {
    Warmup1,
    Warmup2,
    Main,
}

impl From<PipelineArg> for Pipeline {
    fn from(p: PipelineArg) -> Self {
        match p {
            PipelineArg::Warmup1 => Pipeline::Warmup1,
            PipelineArg::Warmup2 => Pipeline::Warmup2,
            PipelineArg::Main => Pipeline::Main,
        }
    }
}

#[derive(Args, Debug)]
pub struct InstanceArg {
    /// Instance JSON file.
    #[arg(long, short)]
    pub instance: PathBuf,
    /// Item cap for exact share computations.
    #[arg(long, default_value_t = DEFAULT_MMS_CAP)]
    pub mms_cap: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Maximin share and witness partition of every agent (or one).
    Mms {
        #[command(flatten)]
        input: InstanceArg,
        #[arg(long)]
        agent: Option<usize>,
        /// Number of bundles (defaults to n).
        #[arg(long)]
        bundles: Option<usize>,
    },
    /// Largest additive underestimate of an agent's valuation on a set.
    FitLp {
        #[command(flatten)]
        input: InstanceArg,
        #[arg(long)]
        agent: usize,
        /// Comma separated item ids (defaults to all items).
        #[arg(long)]
        set: Option<String>,
        #[arg(long, default_value_t = DEFAULT_LP_CAP)]
        lp_cap: usize,
    },
    /// Turn a multiallocation into an allocation.
    Convert {
        #[command(flatten)]
        input: InstanceArg,
        /// Multiallocation JSON file (`{"bundles": [[...], ...]}`).
        #[arg(long)]
        multialloc: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        tau_scale: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_RETRIES)]
        max_retries: usize,
        #[arg(long, default_value_t = DEFAULT_PAIR_CAP)]
        pair_cap: usize,
        /// Fix items above the reduction threshold first; η is the
        /// multiallocation's guaranteed fraction `1/η` of the share.
        #[arg(long)]
        eta: Option<String>,
    },
    /// One partial allocation over a group of agents.
    Partial {
        #[command(flatten)]
        input: InstanceArg,
        #[arg(long, value_enum)]
        mode: PartialMode,
        /// Comma separated agent ids (defaults to all agents).
        #[arg(long)]
        agents: Option<String>,
    },
    /// Build, lift and label a guiding graph.
    Guide {
        /// Instance to label with share witnesses; without it only the graph is built.
        #[arg(long, short)]
        instance: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MMS_CAP)]
        mms_cap: usize,
        /// Group size (defaults to the instance's agents).
        #[arg(long)]
        q_size: Option<usize>,
        /// Degree parameter (defaults to ⌊n/|Q|⌋).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 1)]
        lift_rounds: usize,
    },
    /// Sampling checks for one agent's valuation.
    Concentration {
        #[command(flatten)]
        input: InstanceArg,
        #[arg(long, default_value_t = 0)]
        agent: usize,
        #[arg(long, default_value = "1/2")]
        p: String,
        #[arg(long, default_value_t = 2)]
        n_hat: usize,
    },
    /// Run an end-to-end pipeline.
    Solve {
        #[command(flatten)]
        input: InstanceArg,
        #[arg(long, value_enum, default_value_t = PipelineArg::Main)]
        pipeline: PipelineArg,
        #[arg(long, default_value_t = 1.0)]
        tau_scale: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_RETRIES)]
        max_retries: usize,
    },
    /// Check an allocation and report every agent's share ratio.
    Verify {
        #[command(flatten)]
        input: InstanceArg,
        /// Allocation JSON file (`{"bundles": [[...], ...]}`).
        #[arg(long)]
        allocation: PathBuf,
        /// Also certify that every ratio is at least this.
        #[arg(long)]
        beta: Option<String>,
    },
}

fn read(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}

fn load(input: &InstanceArg) -> Result<(Instance, MmsProfile)> {
    let inst = instance_from_json(&read(&input.instance)?)?;
    let profile = MmsProfile::compute_capped(&inst, input.mms_cap)?;
    Ok((inst, profile))
}

fn list(s: &Option<String>, all: usize) -> Result<Vec<usize>> {
    match s {
        None => Ok((0..all).collect()),
        Some(s) => {
            let set: ItemSet = s.parse()?;
            if let Some(bad) = set.iter().find(|&x| x >= all) {
                return Err(Error::InvalidInstance(format!("id {bad} out of range 0..{all}")));
            }
            Ok(set.to_vec())
        }
    }
}

fn q(r: &Rational) -> Value {
    Value::String(format_rational(r))
}

fn bundles(sets: &[ItemSet]) -> Value {
    serde_json::to_value(BundlesJson::from_sets(sets)).expect("bundles serialize").get("bundles").cloned().unwrap_or(Value::Null)
}

/// Runs one command and returns its output document.
pub fn execute(cli: &Cli) -> Result<Value> {
    let seed = cli.seed;
    match &cli.command {
        Command::Mms { input, agent, bundles: r } => {
            let inst = instance_from_json(&read(&input.instance)?)?;
            let r = r.unwrap_or(inst.n());
            let agents = match agent {
                Some(a) if *a >= inst.n() => return Err(Error::InvalidInstance(format!("no agent {a}"))),
                Some(a) => vec![*a],
                None => (0..inst.n()).collect(),
            };
            let mut out = Vec::new();
            for a in agents {
                let sol = crate::mms::mms_value_capped(inst.valuation(a), &inst.items(), r, input.mms_cap)?;
                out.push(json!({ "agent": a, "mms": q(&sol.value), "witness": bundles(&sol.witness) }));
            }
            Ok(json!({ "bundles": r, "agents": out }))
        }
        Command::FitLp { input, agent, set, lp_cap } => {
            let inst = instance_from_json(&read(&input.instance)?)?;
            if *agent >= inst.n() {
                return Err(Error::InvalidInstance(format!("no agent {agent}")));
            }
            let x: ItemSet = list(set, inst.m())?.into_iter().collect();
            let v = inst.valuation(*agent);
            let fit = fit_additive_lower_capped(v, &x, *lp_cap)?;
            let weights: serde_json::Map<String, Value> = fit.weights.iter().map(|(b, w)| (b.to_string(), q(w))).collect();
            Ok(json!({
                "agent": agent,
                "set": x.to_vec(),
                "value": q(&v.eval(&x)?),
                "weights": weights,
                "total": q(&fit.total()),
                "ratio": q(&fit_ratio(&fit, v)?),
            }))
        }
        Command::Convert { input, multialloc, tau_scale, max_retries, pair_cap, eta } => {
            let (inst, profile) = load(input)?;
            let ma = multiallocation_from_json(&read(multialloc)?)?;
            if ma.bundles.len() != inst.n() {
                return Err(Error::InvalidInstance(format!("{} bundles for {} agents", ma.bundles.len(), inst.n())));
            }
            ma.check_items(inst.m())?;
            let (norm, _, _) = normalize_by_profile(&inst, profile.clone())?;
            let params = PipelineParams {
                convert: ConvertParams {
                    tau_scale: *tau_scale,
                    max_retries: *max_retries,
                    pair_cap: *pair_cap,
                    ..ConvertParams::default()
                },
                mms_cap: input.mms_cap,
                ..PipelineParams::default()
            };
            let mut rng = seeded(seed);
            let (alloc, details) = match eta {
                Some(eta) => {
                    let eta = parse_rational(eta)?;
                    let (alloc, rep) = reduction_wrapper(&norm, &ma, &eta, &params, &mut rng)?;
                    (alloc, serde_json::to_value(rep)?)
                }
                None => {
                    let conv = multialloc_to_alloc(&norm, &ma, &params.convert, &mut rng)?;
                    let details = json!({
                        "alpha": conv.alpha,
                        "tau": conv.classes.tau,
                        "easy": conv.classes.easy.keys().collect::<Vec<_>>(),
                        "hard": conv.classes.hard.iter().collect::<Vec<_>>(),
                        "attempts": conv.attempts,
                    });
                    (conv.allocation, details)
                }
            };
            Ok(json!({
                "seed": seed,
                "allocation": bundles(&alloc.bundles),
                "conversion": details,
                "guarantee": guarantee_report(&inst, &alloc, &profile)?,
            }))
        }
        Command::Partial { input, mode, agents } => {
            let (inst, profile) = load(input)?;
            let (norm, _, norm_profile) = normalize_by_profile(&inst, profile)?;
            let group = list(agents, inst.n())?;
            match mode {
                PartialMode::Quarter => {
                    let pa = partial_quarter(&norm, &norm_profile, &group)?;
                    pa.verify(&norm)?;
                    Ok(partial_doc(&pa, None))
                }
                PartialMode::HalfGuided => {
                    let mut rng = seeded(seed);
                    let pa = partial_half_guided(&norm, &norm_profile, &group, &GuidingParams::default(), &mut rng)?;
                    pa.verify(&norm)?;
                    Ok(partial_doc(&pa, Some(seed)))
                }
                PartialMode::Disjoint => {
                    let fam = disjoint_partials(&norm, &norm_profile, &group)?;
                    let rounds: Vec<Value> = fam
                        .rounds
                        .iter()
                        .map(|r| {
                            let m: serde_json::Map<String, Value> = r.iter().map(|(a, b)| (a.to_string(), json!(b.to_vec()))).collect();
                            Value::Object(m)
                        })
                        .collect();
                    Ok(json!({
                        "k": q(&fam.k),
                        "q_prime": fam.q_prime,
                        "copies": fam.copies,
                        "served_copies": fam.served_copies,
                        "rounds": rounds,
                        "disjoint": crate::model::verify_allocation(&fam.all_bundles()),
                    }))
                }
            }
        }
        Command::Guide { instance, mms_cap, q_size, k, lift_rounds } => {
            let params = GuidingParams {
                lift_rounds: *lift_rounds,
                trials: cli.trials,
                ..GuidingParams::default()
            };
            let inst = instance.as_deref().map(read).transpose()?.map(|t| instance_from_json(&t)).transpose()?;
            let qs = q_size.or(inst.as_ref().map(Instance::n)).ok_or_else(|| Error::InvalidInstance("give --instance or --q-size".into()))?;
            if qs == 0 {
                return Err(Error::InvalidInstance("empty group".into()));
            }
            let kk = k.or(inst.as_ref().map(|i| i.n() / qs)).unwrap_or(1).max(1);
            let base = crate::guiding::base_graph(qs, kk);
            let (g, lifts) = build_graph(qs, kk, &params);
            let mut doc = json!({
                "q_size": qs,
                "k": kk,
                "base_girth": girth(&base),
                "lifts": lifts,
                "girth": girth(&g),
                "seeds": g.seeds,
                "alloc_nodes": g.alloc_nodes(),
                "edges": g.edges.len(),
                "degrees_ok": g.degrees_ok(),
                "target_girth": q(&target_girth(kk, inst.as_ref().map_or(0, Instance::m), qs, &params.epsilon)),
            });
            if let Some(inst) = inst {
                if qs > inst.n() {
                    return Err(Error::InvalidInstance(format!("group of {qs} exceeds {} agents", inst.n())));
                }
                let profile = MmsProfile::compute_capped(&inst, *mms_cap)?;
                let (norm, _, norm_profile) = normalize_by_profile(&inst, profile)?;
                let group: Vec<usize> = (0..qs).collect();
                let witnesses: Vec<Vec<ItemSet>> = group.iter().map(|&a| norm_profile.witness(a).to_vec()).collect();
                let mut rng = seeded(seed);
                let lab = label_edges(&g, label_nodes(&g, &witnesses, &mut rng))?;
                let est = estimate_success(&g, &lab, &norm, &group, params.trials.max(1), &mut rng)?;
                doc["seed"] = json!(seed);
                doc["seed_disjoint"] = json!(seed_disjoint(&g, &lab));
                doc["tree_fraction"] = q(&lab.tree_fraction());
                doc["red_edges"] = serde_json::to_value(red_edge_check(&g, &lab, &norm, &group)?)?;
                doc["success"] = serde_json::to_value(est)?;
                doc["success_target"] = q(&Rational::new(kk.into(), (kk + 1).into()));
            }
            Ok(doc)
        }
        Command::Concentration { input, agent, p, n_hat } => {
            let inst = instance_from_json(&read(&input.instance)?)?;
            if *agent >= inst.n() {
                return Err(Error::InvalidInstance(format!("no agent {agent}")));
            }
            let p = parse_rational(p)?;
            let v = inst.valuation(*agent);
            let ground = inst.items();
            let mut rng = seeded(seed);
            let spec = SamplingSpec { p: p.clone(), n_hat: *n_hat, trials: cli.trials };
            let conc = check_concentration(v, &ground, &spec, &mut rng)?;
            let expectation = check_expectation_bound(v, &ground, &p, cli.trials.max(1), &mut rng)?;
            let exact = if inst.m() <= EXACT_EXPECTATION_CAP {
                Some(format_rational(&exact_expectation(v, &ground, &p)?))
            } else {
                None
            };
            Ok(json!({
                "seed": seed,
                "agent": agent,
                "p": q(&p),
                "expectation": expectation,
                "exact_expectation": exact,
                "concentration": conc,
            }))
        }
        Command::Solve { input, pipeline, tau_scale, max_retries } => {
            let (inst, profile) = load(input)?;
            let params = PipelineParams {
                convert: ConvertParams {
                    tau_scale: *tau_scale,
                    max_retries: *max_retries,
                    ..ConvertParams::default()
                },
                mms_cap: input.mms_cap,
                ..PipelineParams::default()
            };
            let (alloc, report) = run_pipeline(&inst, &profile, (*pipeline).into(), &params, seed)?;
            Ok(json!({ "allocation": bundles(&alloc.bundles), "report": report }))
        }
        Command::Verify { input, allocation, beta } => {
            let (inst, profile) = load(input)?;
            let sets = serde_json::from_str::<BundlesJson>(&read(allocation)?)?.into_sets();
            if sets.len() != inst.n() {
                return Err(Error::InvalidInstance(format!("{} bundles for {} agents", sets.len(), inst.n())));
            }
            let alloc = Allocation::new(sets);
            crate::model::Multiallocation::new(alloc.bundles.clone()).check_items(inst.m())?;
            let mut doc = json!({ "guarantee": guarantee_report(&inst, &alloc, &profile)? });
            if let Some(beta) = beta {
                let beta = parse_rational(beta)?;
                let certified = match certify_beta_mms(&inst, &alloc, &beta, &profile)? {
                    BetaCheck::Certified(_) => json!({ "beta": q(&beta), "certified": true, "violations": [] }),
                    BetaCheck::Violated(vs) => json!({
                        "beta": q(&beta),
                        "certified": false,
                        "violations": vs.iter().map(|v| json!({ "agent": v.agent, "value": q(&v.value), "mms": q(&v.mms) })).collect::<Vec<_>>(),
                    }),
                };
                doc["beta"] = certified;
            }
            if !alloc.is_valid() {
                return Err(Error::InvariantViolation("allocation bundles overlap".into()));
            }
            Ok(doc)
        }
    }
}

fn partial_doc(pa: &crate::partial::PartialAllocation, seed: Option<u64>) -> Value {
    let served: serde_json::Map<String, Value> = pa.served.iter().map(|(a, b)| (a.to_string(), json!(b.to_vec()))).collect();
    let mut doc = json!({
        "floor": q(&pa.floor),
        "quota": pa.quota,
        "strategy": pa.strategy,
        "served": served,
    });
    if let Some(s) = seed {
        doc["seed"] = json!(s);
    }
    doc
}

/// Flattens a document into `path = value` lines.
pub fn render_text(v: &Value) -> String {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<String>) {
        match v {
            Value::Object(m) => {
                for (k, x) in m {
                    let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&p, x, out);
                }
            }
            Value::Array(xs) if xs.iter().any(|x| x.is_object() || x.is_array()) => {
                for (i, x) in xs.iter().enumerate() {
                    walk(&format!("{prefix}[{i}]"), x, out);
                }
            }
            Value::String(s) => out.push(format!("{prefix} = {s}")),
            other => out.push(format!("{prefix} = {other}")),
        }
    }
    let mut out = Vec::new();
    walk("", v, &mut out);
    out.join("\n")
}

pub fn render(cli: &Cli, v: &Value) -> String {
    match cli.format {
        Format::Json => serde_json::to_string_pretty(v).expect("json output"),
        Format::Text => render_text(v),
    }
}

fn randomized(cmd: &Command) -> bool {
    matches!(
        cmd,
        Command::Convert { .. } | Command::Guide { .. } | Command::Concentration { .. } | Command::Solve { .. } | Command::Partial { mode: PartialMode::HalfGuided, .. }
    )
}

/// Parses `args`, runs, prints; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if randomized(&cli.command) {
        eprintln!("seed: {}", cli.seed);
    }
    match execute(&cli) {
        Ok(doc) => {
            use std::io::Write;
            // A closed pipe downstream is not an error of ours.
            let _ = writeln!(std::io::stdout().lock(), "{}", render(&cli, &doc));
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
