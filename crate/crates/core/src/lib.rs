//! Approximate maximin-share (MMS) allocation of indivisible items among
//! agents with monotone subadditive valuations.
//!
//! All values are exact rationals. The pieces, bottom up:
//!
//! * [`model`] — items, valuations, instances, (multi)allocations.
//! * [`mms`] — exact maximin shares, normalization, big-item reduction.
//! * [`lp`] — largest additive underestimate of a valuation on a set.
//! * [`convert`] — multiallocation → allocation.
//! * [`partial`] — partial allocations serving part of a group.
//! * [`guiding`] — guiding graphs: lifting, labelling, sampling.
//! * [`concentration`] — random-subset expectation and tail checks.
//! * [`pipeline`] — end-to-end pipelines and guarantee reports.
//! * [`cli`] — the `mmsalloc` command line.

pub mod cli;
pub mod concentration;
pub mod convert;
pub mod error;
pub mod flow;
pub mod gen;
pub mod guiding;
pub mod json;
pub mod lp;
pub mod mms;
pub mod model;
pub mod partial;
pub mod pipeline;

pub use error::{Error, Result};
pub use mms::{mms_value, MmsProfile, MmsSolution};
pub use model::{Allocation, Instance, ItemSet, Multiallocation, Rational, Valuation};
pub use pipeline::{solve, Pipeline, PipelineParams, PipelineReport};
