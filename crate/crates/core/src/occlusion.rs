//! Occlusion detection and occluded-region flow solvers.
//!
//! Detectors produce a mask `O(i, k)` marking pixels of frame `i` with no
//! visible correspondence in frame `k`. Solvers produce a fill field `P` whose
//! values replace the composed flow at occluded pixels.

use std::fmt;
use std::str::FromStr;

use crate::flow::{compose, select, FlowField, FlowSequence, FlowSet, OcclusionMask};
use crate::{Error, Result};

pub const DEFAULT_TOL_ABS: f64 = 0.5;
pub const DEFAULT_TOL_REL: f64 = 0.01;

/// Forward-backward consistency check.
///
/// A pixel is occluded iff
/// `|f + b|^2 > tol_rel * (|f|^2 + |b|^2) + tol_abs`, where `f = fwd(x)` and
/// `b = bwd(x + f)` sampled bilinearly.
pub fn detect_consistency(
    fwd: &FlowField,
    bwd: &FlowField,
    tol_abs: f64,
    tol_rel: f64,
) -> Result<OcclusionMask> {
    if !(tol_abs.is_finite() && tol_abs > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tol_abs must be > 0, got {tol_abs}"
        )));
    }
    if !(tol_rel.is_finite() && tol_rel >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tol_rel must be >= 0, got {tol_rel}"
        )));
    }
    let warped = crate::flow::warp_flow(bwd, fwd)?;
    let (w, h) = fwd.dims();
    Ok(OcclusionMask::from_fn(w, h, |x, y| {
        let [fu, fv] = fwd.get(x, y);
        let [bu, bv] = warped.get(x, y);
        let (fu, fv, bu, bv) = (fu as f64, fv as f64, bu as f64, bv as f64);
        let residual = (fu + bu).powi(2) + (fv + bv).powi(2);
        let energy = fu * fu + fv * fv + bu * bu + bv * bv;
        residual > tol_rel * energy + tol_abs
    }))
}

/// Collision-based detector needing only the forward flow.
///
/// Every source pixel claims the cell at its rounded, edge-clamped endpoint.
/// Among the claimants of a cell the smallest flow magnitude stays visible,
/// ties going to the smaller raster index; every other claimant is occluded.
pub fn detect_range_map(fwd: &FlowField) -> OcclusionMask {
    let (w, h) = fwd.dims();
    // Per target cell: (magnitude, raster index) of the current winner.
    let mut winner: Vec<Option<(f64, usize)>> = vec![None; w * h];
    let mut target = vec![0usize; w * h];
    for (idx, [u, v]) in fwd.vectors().enumerate() {
        let (x, y) = ((idx % w) as f64, (idx / w) as f64);
        let tx = (x + u as f64).round().clamp(0.0, (w - 1) as f64) as usize;
        let ty = (y + v as f64).round().clamp(0.0, (h - 1) as f64) as usize;
        let cell = ty * w + tx;
        target[idx] = cell;
        let mag = (u as f64).hypot(v as f64);
        // Raster order visits smaller indices first, so only a strictly
        // smaller magnitude takes the cell over.
        match winner[cell] {
            Some((best, _)) if mag >= best => {}
            _ => winner[cell] = Some((mag, idx)),
        }
    }
    let data = target
        .iter()
        .enumerate()
        .map(|(idx, &cell)| (winner[cell].map(|(_, i)| i) != Some(idx)) as u8)
        .collect();
    OcclusionMask::new(w, h, data).expect("mask built with matching dimensions")
}

/// Baseline fill: occluded pixels get zero flow, visible pixels pass through.
pub fn solve_zero(local: &FlowField, occ: &OcclusionMask) -> Result<FlowField> {
    let (w, h) = local.dims();
    select(local, occ, &FlowField::zeros(w, h))
}

/// Constant-velocity fill: occluded pixels get `steps * local(x)`.
pub fn solve_extrapolate(
    local: &FlowField,
    steps: usize,
    occ: &OcclusionMask,
) -> Result<FlowField> {
    if steps < 1 {
        return Err(Error::InvalidStepCount(steps));
    }
    let m = steps as f32;
    let (w, h) = local.dims();
    let scaled = FlowField::from_fn(w, h, |x, y| {
        let [u, v] = local.get(x, y);
        [u * m, v * m]
    });
    select(local, occ, &scaled)
}

/// Copies into each occluded pixel the vector of its nearest visible pixel.
///
/// Distance is Euclidean on the pixel grid; ties go to the candidate with the
/// smaller raster index.
pub fn solve_nearest_visible(candidate: &FlowField, occ: &OcclusionMask) -> Result<FlowField> {
    if candidate.dims() != occ.dims() {
        return Err(Error::DimensionMismatch {
            expected: candidate.dims(),
            found: occ.dims(),
        });
    }
    let nearest = nearest_visible_index(occ)?;
    let (w, h) = candidate.dims();
    Ok(FlowField::from_fn(w, h, |x, y| {
        let src = nearest[y * w + x];
        candidate.get(src % w, src / w)
    }))
}

/// For every pixel, the raster index of the nearest visible pixel (itself if
/// visible).
fn nearest_visible_index(occ: &OcclusionMask) -> Result<Vec<usize>> {
    let (w, h) = occ.dims();
    if occ.count() == w * h {
        return Err(Error::NoVisiblePixels);
    }

    // Nearest visible row within each column; the upper one wins ties since
    // it has the smaller raster index.
    let mut column_nearest: Vec<Option<usize>> = vec![None; w * h];
    for x in 0..w {
        let mut above: Option<usize> = None;
        let mut up = vec![None; h];
        for (y, slot) in up.iter_mut().enumerate() {
            if !occ.is_occluded(x, y) {
                above = Some(y);
            }
            *slot = above;
        }
        let mut below: Option<usize> = None;
        for y in (0..h).rev() {
            if !occ.is_occluded(x, y) {
                below = Some(y);
            }
            column_nearest[y * w + x] = match (up[y], below) {
                (Some(a), Some(b)) => Some(if y - a <= b - y { a } else { b }),
                (a, b) => a.or(b),
            };
        }
    }

    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            if !occ.is_occluded(x, y) {
                out.push(y * w + x);
                continue;
            }
            let mut best: Option<(usize, usize)> = None;
            let consider = |cx: usize, best: &mut Option<(usize, usize)>| {
                if let Some(row) = column_nearest[y * w + cx] {
                    let dx = cx.abs_diff(x);
                    let dy = row.abs_diff(y);
                    let key = (dx * dx + dy * dy, row * w + cx);
                    if best.is_none_or(|b| key < b) {
                        *best = Some(key);
                    }
                }
            };
            for radius in 0..w {
                if let Some((d, _)) = best {
                    if radius * radius > d {
                        break;
                    }
                }
                if radius <= x {
                    consider(x - radius, &mut best);
                }
                if radius > 0 && x + radius < w {
                    consider(x + radius, &mut best);
                }
            }
            out.push(best.expect("at least one visible pixel").1);
        }
    }
    Ok(out)
}

/// Inputs available to a detector at one accumulation step.
///
/// `leader` is the flow `F(reference, target)` whose occluded pixels are
/// sought; `follower` is the flow about to be composed onto it.
pub struct DetectRequest<'a> {
    pub seq: &'a FlowSequence,
    pub reference: usize,
    pub target: usize,
    pub leader: &'a FlowField,
    pub follower: &'a FlowField,
}

/// Inputs available to a solver when producing `F(reference, target)`.
pub struct SolveRequest<'a> {
    pub seq: &'a FlowSequence,
    pub reference: usize,
    pub target: usize,
    pub leader: &'a FlowField,
    pub follower: &'a FlowField,
    /// Unmasked composition of leader and follower.
    pub composed: &'a FlowField,
    pub occ: &'a OcclusionMask,
}

pub trait OcclusionDetector: Sync {
    /// Fails early if the sequence lacks inputs needed for mask `O(reference, target)`.
    fn check(&self, seq: &FlowSequence, reference: usize, target: usize) -> Result<()>;

    fn detect(&self, req: &DetectRequest<'_>) -> Result<OcclusionMask>;
}

pub trait OcclusionSolver: Sync {
    fn solve(&self, req: &SolveRequest<'_>) -> Result<FlowField>;
}

/// Built-in detection strategies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OccDetector {
    /// Forward-backward check against flows composed from the backward locals.
    Consistency {
        tol_abs: f64,
        tol_rel: f64,
    },
    RangeMap,
    /// Masks attached to the sequence.
    GroundTruth,
}

impl OccDetector {
    pub fn consistency() -> Self {
        OccDetector::Consistency {
            tol_abs: DEFAULT_TOL_ABS,
            tol_rel: DEFAULT_TOL_REL,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OccDetector::Consistency { .. } => "consistency",
            OccDetector::RangeMap => "range-map",
            OccDetector::GroundTruth => "ground-truth",
        }
    }
}

impl fmt::Display for OccDetector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OccDetector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consistency" => Ok(OccDetector::consistency()),
            "range-map" => Ok(OccDetector::RangeMap),
            "ground-truth" => Ok(OccDetector::GroundTruth),
            other => Err(Error::InvalidParameter(format!(
                "unknown detector {other:?}"
            ))),
        }
    }
}

/// `F(k, i)` for `k > i`, chained from the backward local flows.
pub fn compose_backward(seq: &FlowSequence, reference: usize, target: usize) -> Result<FlowField> {
    debug_assert!(target > reference);
    let step = |t: usize| seq.backward_local(t).ok_or(Error::MissingBackwardFlows);
    let mut acc = step(reference)?.clone();
    for s in reference + 1..target {
        acc = compose(step(s)?, &acc)?;
    }
    Ok(acc)
}

impl OcclusionDetector for OccDetector {
    fn check(&self, seq: &FlowSequence, reference: usize, target: usize) -> Result<()> {
        match self {
            OccDetector::Consistency { .. } if !seq.has_backward() => {
                Err(Error::MissingBackwardFlows)
            }
            OccDetector::GroundTruth => match seq.masks() {
                Some(m) if m.contains(reference, target) => Ok(()),
                _ => Err(Error::MissingMask { reference, target }),
            },
            _ => Ok(()),
        }
    }

    fn detect(&self, req: &DetectRequest<'_>) -> Result<OcclusionMask> {
        match *self {
            OccDetector::Consistency { tol_abs, tol_rel } => {
                let bwd = compose_backward(req.seq, req.reference, req.target)?;
                detect_consistency(req.leader, &bwd, tol_abs, tol_rel)
            }
            OccDetector::RangeMap => Ok(detect_range_map(req.leader)),
            OccDetector::GroundTruth => req
                .seq
                .masks()
                .and_then(|m| m.get(req.reference, req.target))
                .cloned()
                .ok_or(Error::MissingMask {
                    reference: req.reference,
                    target: req.target,
                }),
        }
    }
}

/// Built-in solvers.
///
/// All of them work from the reference frame `i` of the produced flow:
/// `Zero` and `Extrapolate` use the local flow `F(i, i+1)`, the latter scaled
/// by the `j - i` steps to the target; `NearestVisible` propagates the
/// composed flow from visible neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OccSolver {
    Zero,
    Extrapolate,
    NearestVisible,
}

impl OccSolver {
    pub fn name(&self) -> &'static str {
        match self {
            OccSolver::Zero => "zero",
            OccSolver::Extrapolate => "extrapolate",
            OccSolver::NearestVisible => "nearest",
        }
    }
}

impl fmt::Display for OccSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OccSolver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(OccSolver::Zero),
            "extrapolate" => Ok(OccSolver::Extrapolate),
            "nearest" => Ok(OccSolver::NearestVisible),
            other => Err(Error::InvalidParameter(format!("unknown solver {other:?}"))),
        }
    }
}

impl OcclusionSolver for OccSolver {
    fn solve(&self, req: &SolveRequest<'_>) -> Result<FlowField> {
        let local = req.seq.local(req.reference);
        match self {
            OccSolver::Zero => solve_zero(local, req.occ),
            OccSolver::Extrapolate => solve_extrapolate(local, req.target - req.reference, req.occ),
            OccSolver::NearestVisible => solve_nearest_visible(req.composed, req.occ),
        }
    }
}

/// Oracle solver that fills occluded pixels with known flows.
#[derive(Debug, Clone, Default)]
pub struct GroundTruthFill {
    pub flows: FlowSet,
}

impl GroundTruthFill {
    pub fn new(flows: FlowSet) -> Self {
        Self { flows }
    }
}

impl OcclusionSolver for GroundTruthFill {
    fn solve(&self, req: &SolveRequest<'_>) -> Result<FlowField> {
        let gt = self
            .flows
            .get(req.reference, req.target)
            .ok_or(Error::MissingFlow {
                reference: req.reference,
                target: req.target,
            })?;
        select(req.composed, req.occ, gt)
    }
}
