//! Dense flow fields, occlusion masks and the composition operator.
//!
//! Composition chains two flows `F(i, k)` and `F(k, j)` into `F(i, j)` by
//! sampling the follower at the leader's endpoints and adding:
//!
//! ```text
//! F(i, j)(x) = F(i, k)(x) + F(k, j)(x + F(i, k)(x))
//! ```
//!
//! Sampling is bilinear with clamp-to-edge boundary handling, which keeps
//! every operation total and NaN-free.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::{Error, Result};

/// Sub-pixel position on the grid. Origin is the top-left pixel centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub x: f64,
    pub y: f64,
}

impl PixelCoord {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Dense 2-channel motion field stored row-major as interleaved `(u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl FlowField {
    /// Wraps an interleaved `(u, v)` buffer, validating length and finiteness.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyGrid { width, height });
        }
        if data.len() != width * height * 2 {
            return Err(Error::BufferLength {
                width,
                height,
                len: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|c| !c.is_finite()) {
            let pixel = pos / 2;
            return Err(Error::NonFinite {
                x: pixel % width,
                y: pixel / width,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, [0.0, 0.0])
    }

    pub fn constant(width: usize, height: usize, value: [f32; 2]) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    /// Builds a field by evaluating `f(x, y)` at every pixel.
    ///
    /// Panics if the grid is empty or `f` yields a non-finite component.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 2],
    ) -> Self {
        assert!(width > 0 && height > 0, "flow field must be non-empty");
        let mut data = Vec::with_capacity(width * height * 2);
        for y in 0..height {
            for x in 0..width {
                let [u, v] = f(x, y);
                assert!(
                    u.is_finite() && v.is_finite(),
                    "non-finite flow at ({x}, {y})"
                );
                data.push(u);
                data.push(v);
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 2] {
        let i = 2 * (y * self.width + x);
        [self.data[i], self.data[i + 1]]
    }

    /// Interleaved `(u, v)` components, row-major.
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Per-pixel vectors in raster order.
    pub fn vectors(&self) -> impl Iterator<Item = [f32; 2]> + '_ {
        self.data.chunks_exact(2).map(|c| [c[0], c[1]])
    }

    /// Bilinear interpolation at a sub-pixel position.
    ///
    /// Out-of-bounds positions are clamped to the nearest edge pixel first,
    /// so the result is always finite. On lattice points the stored value is
    /// returned exactly.
    pub fn sample_bilinear(&self, p: PixelCoord) -> [f32; 2] {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        // NaN clamps to NaN, so map it to the origin explicitly.
        let x = if p.x.is_nan() {
            0.0
        } else {
            p.x.clamp(0.0, max_x)
        };
        let y = if p.y.is_nan() {
            0.0
        } else {
            p.y.clamp(0.0, max_y)
        };
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;

        let a = self.get(x0, y0);
        let b = self.get(x1, y0);
        let c = self.get(x0, y1);
        let d = self.get(x1, y1);
        let mut out = [0.0f32; 2];
        for ch in 0..2 {
            // Lerp form: exact on lattice points and for constant neighbourhoods.
            let top = a[ch] as f64 + fx * (b[ch] as f64 - a[ch] as f64);
            let bot = c[ch] as f64 + fx * (d[ch] as f64 - c[ch] as f64);
            out[ch] = (top + fy * (bot - top)) as f32;
        }
        out
    }

    fn ensure_same_dims(&self, other: (usize, usize)) -> Result<()> {
        if self.dims() != other {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other,
            });
        }
        Ok(())
    }

    fn from_rows(
        width: usize,
        height: usize,
        kernel: impl Fn(usize, usize) -> [f32; 2] + Sync,
    ) -> Self {
        let mut data = vec![0.0f32; width * height * 2];
        data.par_chunks_mut(width * 2)
            .enumerate()
            .for_each(|(y, row)| {
                for x in 0..width {
                    let [u, v] = kernel(x, y);
                    row[2 * x] = u;
                    row[2 * x + 1] = v;
                }
            });
        Self {
            width,
            height,
            data,
        }
    }
}

/// Binary per-pixel occlusion flags; `true` (stored as 1) means occluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcclusionMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl OcclusionMask {
    /// Wraps a buffer of 0/1 values.
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyGrid { width, height });
        }
        if data.len() != width * height {
            return Err(Error::BufferLength {
                width,
                height,
                len: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::NonBinaryMask { index, value });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |_, _| false)
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |_, _| true)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(width > 0 && height > 0, "mask must be non-empty");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y) as u8);
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn is_occluded(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    /// Raw 0/1 values in raster order.
    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Pixelwise fraction of equal entries, in `[0, 1]`.
    pub fn agreement(&self, other: &OcclusionMask) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        let same = self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| a == b)
            .count();
        Ok(same as f64 / self.len() as f64)
    }
}

/// Values keyed by a 1-based `(reference, target)` frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePairs<T>(BTreeMap<(usize, usize), T>);

impl<T> Default for FramePairs<T> {
    fn default() -> Self {
        Self(BTreeMap::new())
    }
}

impl<T> FramePairs<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, reference: usize, target: usize, value: T) -> Option<T> {
        self.0.insert((reference, target), value)
    }

    pub fn get(&self, reference: usize, target: usize) -> Option<&T> {
        self.0.get(&(reference, target))
    }

    pub fn contains(&self, reference: usize, target: usize) -> bool {
        self.0.contains_key(&(reference, target))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Entries in ascending `(reference, target)` order.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &T)> {
        self.0.iter().map(|(&k, v)| (k, v))
    }
}

pub type MaskSet = FramePairs<OcclusionMask>;
pub type FlowSet = FramePairs<FlowField>;

/// The local flows of an `N`-frame clip plus optional side information.
///
/// Index `t` (1-based) of the local list is `F(t, t+1)`; of the backward
/// list, `F(t+1, t)`.
#[derive(Debug, Clone)]
pub struct FlowSequence {
    local: Vec<FlowField>,
    backward: Option<Vec<FlowField>>,
    masks: Option<MaskSet>,
}

impl FlowSequence {
    pub fn new(local: Vec<FlowField>) -> Result<Self> {
        let first = local
            .first()
            .ok_or_else(|| Error::InvalidSequence("no local flows".into()))?;
        let dims = first.dims();
        for f in &local {
            first.ensure_same_dims(f.dims())?;
        }
        debug_assert!(local.iter().all(|f| f.dims() == dims));
        Ok(Self {
            local,
            backward: None,
            masks: None,
        })
    }

    /// Attaches `F(t+1, t)` for every `t`.
    pub fn with_backward(mut self, backward: Vec<FlowField>) -> Result<Self> {
        if backward.len() != self.local.len() {
            return Err(Error::InvalidSequence(format!(
                "{} backward flows for {} forward flows",
                backward.len(),
                self.local.len()
            )));
        }
        for f in &backward {
            self.local[0].ensure_same_dims(f.dims())?;
        }
        self.backward = Some(backward);
        Ok(self)
    }

    /// Attaches ground-truth occlusion masks keyed by frame pair.
    pub fn with_masks(mut self, masks: MaskSet) -> Result<Self> {
        for (_, m) in masks.iter() {
            self.local[0].ensure_same_dims(m.dims())?;
        }
        self.masks = Some(masks);
        Ok(self)
    }

    /// Number of frames `N`.
    pub fn frames(&self) -> usize {
        self.local.len() + 1
    }

    pub fn dims(&self) -> (usize, usize) {
        self.local[0].dims()
    }

    /// `F(t, t+1)` for `t` in `1..N`.
    pub fn local(&self, t: usize) -> &FlowField {
        &self.local[t - 1]
    }

    pub fn local_flows(&self) -> &[FlowField] {
        &self.local
    }

    /// `F(t+1, t)` for `t` in `1..N`, when attached.
    pub fn backward_local(&self, t: usize) -> Option<&FlowField> {
        self.backward.as_ref().map(|b| &b[t - 1])
    }

    pub fn has_backward(&self) -> bool {
        self.backward.is_some()
    }

    pub fn masks(&self) -> Option<&MaskSet> {
        self.masks.as_ref()
    }
}

/// Samples `follower` at the endpoints of `leader`: `out(x) = follower(x + leader(x))`.
pub fn warp_flow(follower: &FlowField, leader: &FlowField) -> Result<FlowField> {
    leader.ensure_same_dims(follower.dims())?;
    let (w, h) = leader.dims();
    Ok(FlowField::from_rows(w, h, |x, y| {
        let [u, v] = leader.get(x, y);
        follower.sample_bilinear(PixelCoord::new(x as f64 + u as f64, y as f64 + v as f64))
    }))
}

/// Chains `leader = F(i, k)` with `follower = F(k, j)` into `F(i, j)`.
///
/// Only meaningful where the leader's endpoint is visible; see
/// [`compose_masked`].
pub fn compose(leader: &FlowField, follower: &FlowField) -> Result<FlowField> {
    let warped = warp_flow(follower, leader)?;
    let (w, h) = leader.dims();
    Ok(FlowField::from_rows(w, h, |x, y| {
        let [a, b] = leader.get(x, y);
        let [c, d] = warped.get(x, y);
        [a + c, b + d]
    }))
}

/// Composition where occluded pixels take their value from `fill` instead.
pub fn compose_masked(
    leader: &FlowField,
    follower: &FlowField,
    occ: &OcclusionMask,
    fill: &FlowField,
) -> Result<FlowField> {
    let composed = compose(leader, follower)?;
    select(&composed, occ, fill)
}

/// Per-pixel choice: `visible` where the mask is 0, `occluded` where it is 1.
pub fn select(visible: &FlowField, occ: &OcclusionMask, occluded: &FlowField) -> Result<FlowField> {
    visible.ensure_same_dims(occ.dims())?;
    visible.ensure_same_dims(occluded.dims())?;
    let (w, h) = visible.dims();
    Ok(FlowField::from_rows(w, h, |x, y| {
        if occ.is_occluded(x, y) {
            occluded.get(x, y)
        } else {
            visible.get(x, y)
        }
    }))
}

/// Fraction of occluded pixels.
pub fn occlusion_proportion(occ: &OcclusionMask) -> f64 {
    occ.count() as f64 / occ.len() as f64
}

/// Histogram of per-pixel Euclidean flow magnitude.
///
/// `edges` (strictly increasing, at least two) delimit `edges.len() - 1`
/// half-open bins `[e_i, e_{i+1})`. Magnitudes below the first edge are
/// counted in the first bin and those at or above the last edge in the last
/// bin, so the counts always total the pixel count.
pub fn magnitude_histogram(field: &FlowField, edges: &[f64]) -> Result<Vec<u64>> {
    if edges.len() < 2 {
        return Err(Error::BinEdges(format!(
            "need at least 2 edges, got {}",
            edges.len()
        )));
    }
    if edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::BinEdges("edges must be finite".into()));
    }
    if let Some(w) = edges.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::BinEdges(format!(
            "edges not strictly increasing at {} >= {}",
            w[0], w[1]
        )));
    }
    let bins = edges.len() - 1;
    let mut counts = vec![0u64; bins];
    for [u, v] in field.vectors() {
        let m = (u as f64).hypot(v as f64);
        let above = edges.partition_point(|&e| e <= m);
        counts[above.saturating_sub(1).min(bins - 1)] += 1;
    }
    Ok(counts)
}
