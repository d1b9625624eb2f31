//! Recursive accumulation of local flows into the long-range flow `F(1, N)`.
//!
//! Both drivers apply the same masked composition step
//!
//! ```text
//! F(i, j)(x) = F(i, k)(x) + F(k, j)(x + F(i, k)(x))   if O(i, k)(x) = 0
//!            = P(i, j)(x)                             if O(i, k)(x) = 1
//! ```
//!
//! and differ only in which operand leads:
//!
//! | driver   | loop            | leader `F(i,k)` | follower `F(k,j)` | mask        |
//! |----------|-----------------|-----------------|-------------------|-------------|
//! | forward  | `t = 2..=N-1`   | `F(1, t)`       | `F(t, t+1)`       | `O(1, t)`   |
//! | backward | `t = N-1..=2`   | `F(t-1, t)`     | `F(t, N)`         | `O(t-1, t)` |
//!
//! The forward driver therefore needs occlusion reasoning over a growing
//! interval, while every mask the backward driver consumes spans one step.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::flow::{compose, occlusion_proportion, select, FlowField, FlowSequence, OcclusionMask};
use crate::io::{save_flo, save_mask};
use crate::occlusion::{DetectRequest, OcclusionDetector, OcclusionSolver, SolveRequest};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn name(&self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            other => Err(Error::InvalidParameter(format!(
                "unknown direction {other:?}"
            ))),
        }
    }
}

/// Hook applied to every flow a driver produces, before it feeds the next
/// step. Stands in for learned post-fusion refinement.
pub trait BlendHook: Sync {
    fn blend(&self, reference: usize, target: usize, flow: FlowField) -> Result<FlowField>;
}

#[derive(Clone, Copy)]
pub struct AccumulateOptions<'a> {
    /// Keep every produced flow in the trace; otherwise only the final one.
    pub keep_intermediates: bool,
    pub blend: Option<&'a dyn BlendHook>,
}

impl Default for AccumulateOptions<'_> {
    fn default() -> Self {
        Self {
            keep_intermediates: true,
            blend: None,
        }
    }
}

/// One loop iteration of a driver.
#[derive(Debug, Clone)]
pub struct AccumulationStep {
    /// Loop variable `t`.
    pub t: usize,
    /// Frame pair `(i, k)` of the consumed mask `O(i, k)`.
    pub mask_interval: (usize, usize),
    /// Frame pair `(i, j)` of the produced flow `F(i, j)`.
    pub produced: (usize, usize),
    pub mask: OcclusionMask,
    pub alpha: f64,
    /// Pixels whose value came from the occlusion solver.
    pub filled: usize,
    /// The produced flow, unless running in streaming mode.
    pub flow: Option<FlowField>,
}

#[derive(Debug, Clone)]
pub struct AccumulationTrace {
    pub direction: Direction,
    pub frames: usize,
    pub steps: Vec<AccumulationStep>,
    pub final_flow: FlowField,
}

impl AccumulationTrace {
    /// Produced flow `F(reference, target)`, if it was retained.
    pub fn intermediate(&self, reference: usize, target: usize) -> Option<&FlowField> {
        self.steps
            .iter()
            .find(|s| s.produced == (reference, target))
            .and_then(|s| s.flow.as_ref())
    }

    pub fn total_alpha(&self) -> f64 {
        self.steps.iter().map(|s| s.alpha).sum()
    }

    /// Writes `flow_III_JJJ.flo` per retained flow, `mask_III_KKK.png` per
    /// consumed mask, `final.flo`, and `summary.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for step in &self.steps {
            let (i, k) = step.mask_interval;
            save_mask(dir.join(format!("mask_{i:03}_{k:03}.png")), &step.mask)?;
            if let Some(flow) = &step.flow {
                let (i, j) = step.produced;
                save_flo(dir.join(format!("flow_{i:03}_{j:03}.flo")), flow)?;
            }
        }
        save_flo(dir.join("final.flo"), &self.final_flow)?;
        let summary = TraceSummary::from(self);
        fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&summary)?,
        )?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub t: usize,
    pub mask: (usize, usize),
    pub produced: (usize, usize),
    pub alpha: f64,
    pub filled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub direction: Direction,
    pub frames: usize,
    pub steps: Vec<StepSummary>,
    pub total_alpha: f64,
}

impl From<&AccumulationTrace> for TraceSummary {
    fn from(trace: &AccumulationTrace) -> Self {
        Self {
            direction: trace.direction,
            frames: trace.frames,
            steps: trace
                .steps
                .iter()
                .map(|s| StepSummary {
                    t: s.t,
                    mask: s.mask_interval,
                    produced: s.produced,
                    alpha: s.alpha,
                    filled: s.filled,
                })
                .collect(),
            total_alpha: trace.total_alpha(),
        }
    }
}

pub fn accumulate_forward(
    seq: &FlowSequence,
    detector: &dyn OcclusionDetector,
    solver: &dyn OcclusionSolver,
) -> Result<AccumulationTrace> {
    accumulate(
        Direction::Forward,
        seq,
        detector,
        solver,
        AccumulateOptions::default(),
    )
}

pub fn accumulate_backward(
    seq: &FlowSequence,
    detector: &dyn OcclusionDetector,
    solver: &dyn OcclusionSolver,
) -> Result<AccumulationTrace> {
    accumulate(
        Direction::Backward,
        seq,
        detector,
        solver,
        AccumulateOptions::default(),
    )
}

/// `(t, mask interval, produced flow)` for one driver step.
pub type ScheduleStep = (usize, (usize, usize), (usize, usize));

/// Steps visited by a driver, in loop order.
pub fn schedule(direction: Direction, frames: usize) -> Vec<ScheduleStep> {
    let n = frames;
    match direction {
        Direction::Forward => (2..n).map(|t| (t, (1, t), (1, t + 1))).collect(),
        Direction::Backward => (2..n).rev().map(|t| (t, (t - 1, t), (t - 1, n))).collect(),
    }
}

/// Checks that every step of a run has the detector inputs it needs.
pub fn check_prerequisites(
    direction: Direction,
    seq: &FlowSequence,
    detector: &dyn OcclusionDetector,
) -> Result<()> {
    let n = seq.frames();
    if n < 3 {
        return Err(Error::SequenceTooShort(n));
    }
    for (_, (i, k), _) in schedule(direction, n) {
        detector.check(seq, i, k)?;
    }
    Ok(())
}

pub fn accumulate(
    direction: Direction,
    seq: &FlowSequence,
    detector: &dyn OcclusionDetector,
    solver: &dyn OcclusionSolver,
    opts: AccumulateOptions<'_>,
) -> Result<AccumulationTrace> {
    check_prerequisites(direction, seq, detector)?;
    let n = seq.frames();

    // Forward starts from F(1, 2); backward from F(N-1, N).
    let mut running = match direction {
        Direction::Forward => seq.local(1).clone(),
        Direction::Backward => seq.local(n - 1).clone(),
    };
    let mut steps = Vec::with_capacity(n - 2);

    for (t, (i, k), (pi, pj)) in schedule(direction, n) {
        let (leader, follower) = match direction {
            Direction::Forward => (&running, seq.local(t)),
            Direction::Backward => (seq.local(t - 1), &running),
        };
        let mask = detector.detect(&DetectRequest {
            seq,
            reference: i,
            target: k,
            leader,
            follower,
        })?;
        if mask.dims() != leader.dims() {
            return Err(Error::DimensionMismatch {
                expected: leader.dims(),
                found: mask.dims(),
            });
        }
        let composed = compose(leader, follower)?;
        let fill = solver.solve(&SolveRequest {
            seq,
            reference: pi,
            target: pj,
            leader,
            follower,
            composed: &composed,
            occ: &mask,
        })?;
        let mut produced = select(&composed, &mask, &fill)?;
        if let Some(hook) = opts.blend {
            produced = hook.blend(pi, pj, produced)?;
        }

        let filled = mask.count();
        steps.push(AccumulationStep {
            t,
            mask_interval: (i, k),
            produced: (pi, pj),
            alpha: occlusion_proportion(&mask),
            filled,
            mask,
            flow: opts.keep_intermediates.then(|| produced.clone()),
        });
        running = produced;
    }

    Ok(AccumulationTrace {
        direction,
        frames: n,
        steps,
        final_flow: running,
    })
}

/// `(t, alpha)` per step in loop order.
pub fn per_step_occlusion_series(trace: &AccumulationTrace) -> Vec<(usize, f64)> {
    trace.steps.iter().map(|s| (s.t, s.alpha)).collect()
}
