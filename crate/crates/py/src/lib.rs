//! Python bindings for `mms-core`.
//!
//! Rationals cross the boundary as `"p/q"` strings (feed them to
//! `fractions.Fraction`); bundles are lists of item ids.

use std::collections::BTreeMap;

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use mms_core::convert::{multialloc_to_alloc, ConvertParams};
use mms_core::gen::seeded;
use mms_core::json::{instance_from_json, instance_to_json};
use mms_core::lp::{fit_additive_lower, fit_ratio};
use mms_core::model::{format_rational, ItemSet, Multiallocation};
use mms_core::pipeline::{guarantee_report, run_pipeline, PipelineParams};

create_exception!(mmsalloc, MmsError, PyValueError);

fn err(e: mms_core::Error) -> PyErr {
    MmsError::new_err(format!("{e} (exit code {})", e.exit_code()))
}

fn sets(bundles: Vec<Vec<usize>>) -> Vec<ItemSet> {
    bundles.into_iter().map(|b| b.into_iter().collect()).collect()
}

fn lists(sets: &[ItemSet]) -> Vec<Vec<usize>> {
    sets.iter().map(ItemSet::to_vec).collect()
}

/// A fair-division instance: `n` agents, `m` items, one valuation per agent.
#[pyclass(name = "Instance", module = "mmsalloc", frozen)]
struct PyInstance {
    inner: mms_core::Instance,
}

#[pymethods]
impl PyInstance {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: instance_from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> String {
        instance_to_json(&self.inner)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    /// Value of `items` to `agent`.
    fn value(&self, agent: usize, items: Vec<usize>) -> PyResult<String> {
        self.check(agent)?;
        let s: ItemSet = items.into_iter().collect();
        Ok(format_rational(&self.inner.value(agent, &s).map_err(err)?))
    }

    /// Maximin share of `agent` over `bundles` bundles (default `n`) and a witness partition.
    #[pyo3(signature = (agent, bundles=None))]
    fn mms(&self, agent: usize, bundles: Option<usize>) -> PyResult<(String, Vec<Vec<usize>>)> {
        self.check(agent)?;
        let r = bundles.unwrap_or(self.inner.n());
        let sol = mms_core::mms_value(self.inner.valuation(agent), &self.inner.items(), r).map_err(err)?;
        Ok((format_rational(&sol.value), lists(&sol.witness)))
    }

    /// Largest additive underestimate of `agent` on `items`: (weights by item, ratio).
    fn fit_additive(&self, agent: usize, items: Vec<usize>) -> PyResult<(BTreeMap<usize, String>, String)> {
        self.check(agent)?;
        let v = self.inner.valuation(agent);
        let fit = fit_additive_lower(v, &items.into_iter().collect()).map_err(err)?;
        let ratio = fit_ratio(&fit, v).map_err(err)?;
        Ok((fit.weights.iter().map(|(b, w)| (*b, format_rational(w))).collect(), format_rational(&ratio)))
    }

    fn __repr__(&self) -> String {
        format!("Instance(n={}, m={})", self.inner.n(), self.inner.m())
    }
}

impl PyInstance {
    fn check(&self, agent: usize) -> PyResult<()> {
        if agent >= self.inner.n() {
            return Err(MmsError::new_err(format!("no agent {agent}")));
        }
        Ok(())
    }
}

/// Turns a multiallocation into an allocation (bundles per agent).
#[pyfunction]
#[pyo3(signature = (instance, bundles, seed=0, tau_scale=1.0))]
fn convert(instance: &PyInstance, bundles: Vec<Vec<usize>>, seed: u64, tau_scale: f64) -> PyResult<Vec<Vec<usize>>> {
    let ma = Multiallocation::new(sets(bundles));
    let params = ConvertParams { tau_scale, ..ConvertParams::default() };
    let conv = multialloc_to_alloc(&instance.inner, &ma, &params, &mut seeded(seed)).map_err(err)?;
    Ok(lists(&conv.allocation.bundles))
}

/// Runs a pipeline (`"warmup1"`, `"warmup2"` or `"main"`); returns the
/// allocation and the report as a JSON string.
#[pyfunction]
#[pyo3(signature = (instance, pipeline="main", seed=0))]
fn solve(instance: &PyInstance, pipeline: &str, seed: u64) -> PyResult<(Vec<Vec<usize>>, String)> {
    let p: mms_core::Pipeline = pipeline.parse().map_err(err)?;
    let params = PipelineParams::default();
    let profile = mms_core::MmsProfile::compute_capped(&instance.inner, params.mms_cap).map_err(err)?;
    let (alloc, report) = run_pipeline(&instance.inner, &profile, p, &params, seed).map_err(err)?;
    let text = serde_json::to_string(&report).map_err(|e| MmsError::new_err(e.to_string()))?;
    Ok((lists(&alloc.bundles), text))
}

/// `(value, mms, ratio)`.
type AgentRow = (String, String, String);

/// Per-agent (value, mms, ratio) of an allocation and whether it is disjoint.
#[pyfunction]
fn verify(instance: &PyInstance, bundles: Vec<Vec<usize>>) -> PyResult<(Vec<AgentRow>, bool)> {
    let inst = &instance.inner;
    if bundles.len() != inst.n() {
        return Err(MmsError::new_err(format!("{} bundles for {} agents", bundles.len(), inst.n())));
    }
    let alloc = mms_core::Allocation::new(sets(bundles));
    let profile = mms_core::MmsProfile::compute(inst).map_err(err)?;
    let rep = guarantee_report(inst, &alloc, &profile).map_err(err)?;
    Ok((rep.agents.into_iter().map(|a| (a.value, a.mms, a.ratio)).collect(), rep.valid))
}

#[pymodule]
fn mmsalloc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInstance>()?;
    m.add_function(wrap_pyfunction!(convert, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add("MmsError", m.py().get_type::<MmsError>())?;
    Ok(())
}
