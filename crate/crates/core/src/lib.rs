//! Long-range optical flow by accumulation of local flows.
//!
//! The crate is organised around the two accumulation orders:
//!
//! - [`accumulate::accumulate_forward`] grows `F(1, t+1)` from `F(1, t)` and
//!   the next local flow; the occlusion interval it must reason about grows
//!   with `t`.
//! - [`accumulate::accumulate_backward`] grows `F(t-1, N)` from `F(t, N)`,
//!   aligning along the local flow `F(t-1, t)`; every occlusion mask it
//!   consumes spans a single frame step.
//!
//! Supporting modules provide the flow primitives ([`flow`]), occlusion
//! detectors and solvers ([`occlusion`]), a layered sprite scene generator
//! with analytic ground truth ([`synth`]), end-point-error evaluation
//! ([`metrics`]), and Middlebury `.flo` / PNG I/O ([`io`], [`dataset`]).
//!
//! Frame indices in the public API are 1-based: `F(i, k)` maps pixels of
//! frame `i` to frame `k`. Flow vectors are `(u, v)` in pixels with the
//! origin at the top-left corner, `x` to the right and `y` downwards.

pub mod accumulate;
pub mod dataset;
mod error;
pub mod flow;
pub mod io;
pub mod metrics;
pub mod occlusion;
pub mod synth;

pub use error::{Error, Result};
pub use flow::{FlowField, FlowSequence, MaskSet, OcclusionMask, PixelCoord};
