//! Procedural layered scenes with analytic flows and occlusion masks.
//!
//! A scene is a background plane plus an ordered stack of sprites (index 0 is
//! nearest the camera). Every layer translates rigidly, so the flow between
//! any two frames is the displacement of whichever layer is visible at the
//! pixel, and occlusion is decided exactly by testing the endpoint against the
//! nearer layers.
//!
//! Pixel `x` of frame `i` is occluded in frame `k` iff its endpoint
//! `x + F(i, k)(x)` leaves the canvas `[0, w-1] x [0, h-1]` or lands on a
//! strictly nearer layer.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::flow::{FlowField, FlowSequence, FlowSet, MaskSet, OcclusionMask};
use crate::occlusion::GroundTruthFill;
use crate::{Error, Result};

pub const DEFAULT_CANVAS: usize = 128;
pub const DEFAULT_FRAMES: usize = 7;
const MAX_SPRITES: usize = 254;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Axis-aligned rectangle anchored at its top-left corner.
    Rect { width: f64, height: f64 },
    /// Disc anchored at its centre.
    Disc { radius: f64 },
}

impl Shape {
    /// Membership of a point given relative to the anchor.
    fn contains(&self, dx: f64, dy: f64) -> bool {
        match *self {
            Shape::Rect { width, height } => dx >= 0.0 && dx < width && dy >= 0.0 && dy < height,
            Shape::Disc { radius } => dx * dx + dy * dy <= radius * radius,
        }
    }

    /// Inclusive integer bounds of the lattice points that may be inside.
    fn lattice_bounds(&self, anchor: [f64; 2]) -> ([i64; 2], [i64; 2]) {
        let (lo, hi) = match *self {
            Shape::Rect { width, height } => (anchor, [anchor[0] + width, anchor[1] + height]),
            Shape::Disc { radius } => (
                [anchor[0] - radius, anchor[1] - radius],
                [anchor[0] + radius, anchor[1] + radius],
            ),
        };
        (
            [lo[0].ceil() as i64, lo[1].ceil() as i64],
            [hi[0].floor() as i64, hi[1].floor() as i64],
        )
    }

    fn is_valid(&self) -> bool {
        match *self {
            Shape::Rect { width, height } => {
                width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()
            }
            Shape::Disc { radius } => radius > 0.0 && radius.is_finite(),
        }
    }
}

/// Displacement of a layer relative to its position in frame 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    /// `(t-1) * velocity`.
    Constant { velocity: [f64; 2] },
    /// Per-frame displacements; `steps[t-1]` moves the layer from `t` to `t+1`.
    PiecewiseLinear { steps: Vec<[f64; 2]> },
    /// Per-frame displacement `velocity + (t-1) * acceleration`.
    Quadratic {
        velocity: [f64; 2],
        acceleration: [f64; 2],
    },
}

impl Trajectory {
    pub fn still() -> Self {
        Trajectory::Constant {
            velocity: [0.0, 0.0],
        }
    }

    /// Offset at 1-based frame `t`.
    pub fn offset(&self, t: usize) -> [f64; 2] {
        let s = (t - 1) as f64;
        match self {
            Trajectory::Constant { velocity } => [s * velocity[0], s * velocity[1]],
            Trajectory::PiecewiseLinear { steps } => steps[..t - 1]
                .iter()
                .fold([0.0, 0.0], |acc, d| [acc[0] + d[0], acc[1] + d[1]]),
            Trajectory::Quadratic {
                velocity,
                acceleration,
            } => {
                let tri = s * (s - 1.0) / 2.0;
                [
                    s * velocity[0] + tri * acceleration[0],
                    s * velocity[1] + tri * acceleration[1],
                ]
            }
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            Trajectory::Constant { velocity } => velocity.to_vec(),
            Trajectory::PiecewiseLinear { steps } => steps.iter().flatten().copied().collect(),
            Trajectory::Quadratic {
                velocity,
                acceleration,
            } => velocity.iter().chain(acceleration).copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sprite {
    pub shape: Shape,
    /// Anchor position in frame 1.
    pub origin: [f64; 2],
    pub trajectory: Trajectory,
    pub color: [u8; 3],
    /// Amplitude of the layer-attached noise texture, 0 for flat colour.
    pub texture: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    /// Constant per-frame translation; zero for a static background.
    pub velocity: [f64; 2],
    pub color: [u8; 3],
    pub texture: f64,
}

impl Default for Background {
    fn default() -> Self {
        Self {
            velocity: [0.0, 0.0],
            color: [96, 96, 96],
            texture: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub background: Background,
    /// Front-to-back.
    pub sprites: Vec<Sprite>,
    pub seed: u64,
}

impl SceneSpec {
    /// Static background, no sprites.
    pub fn empty(width: usize, height: usize, frames: usize) -> Self {
        Self {
            width,
            height,
            frames,
            background: Background::default(),
            sprites: Vec::new(),
            seed: 0,
        }
    }

    fn layer_offset(&self, layer: usize, t: usize) -> [f64; 2] {
        match self.sprites.get(layer) {
            Some(s) => {
                let o = s.trajectory.offset(t);
                [s.origin[0] + o[0], s.origin[1] + o[1]]
            }
            None => {
                let s = (t - 1) as f64;
                [
                    s * self.background.velocity[0],
                    s * self.background.velocity[1],
                ]
            }
        }
    }

    /// Fraction of a sprite's lattice points inside the canvas at frame `t`.
    pub fn on_canvas_fraction(&self, sprite: usize, t: usize) -> f64 {
        let s = &self.sprites[sprite];
        let anchor = self.layer_offset(sprite, t);
        let ([x0, y0], [x1, y1]) = s.shape.lattice_bounds(anchor);
        let (mut total, mut inside) = (0usize, 0usize);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if s.shape.contains(x as f64 - anchor[0], y as f64 - anchor[1]) {
                    total += 1;
                    if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
                        inside += 1;
                    }
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            inside as f64 / total as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScene(m));
        if self.width == 0 || self.height == 0 {
            return bad(format!("empty canvas {}x{}", self.width, self.height));
        }
        if self.frames < 2 {
            return bad(format!("need at least 2 frames, got {}", self.frames));
        }
        if self.sprites.len() > MAX_SPRITES {
            return bad(format!("at most {MAX_SPRITES} sprites"));
        }
        if self.background.velocity.iter().any(|v| !v.is_finite()) {
            return bad("non-finite background velocity".into());
        }
        for (i, s) in self.sprites.iter().enumerate() {
            if !s.shape.is_valid() {
                return bad(format!("sprite {i} has a degenerate shape"));
            }
            if s.origin
                .iter()
                .chain(&s.trajectory.values())
                .any(|v| !v.is_finite())
            {
                return bad(format!("sprite {i} has non-finite motion"));
            }
            if let Trajectory::PiecewiseLinear { steps } = &s.trajectory {
                if steps.len() < self.frames - 1 {
                    return bad(format!(
                        "sprite {i} has {} steps for {} frames",
                        steps.len(),
                        self.frames
                    ));
                }
            }
            for t in 1..=self.frames {
                let f = self.on_canvas_fraction(i, t);
                if f < 0.5 {
                    return bad(format!(
                        "sprite {i} is only {:.0}% on canvas in frame {t}",
                        f * 100.0
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Rendered frames plus analytic flows and masks.
#[derive(Debug, Clone)]
pub struct SceneSequence {
    pub spec: SceneSpec,
    pub frames: Vec<RgbImage>,
    /// `F(i, k)` for local pairs in both directions, `(1, k)` and `(t, N)`.
    pub flows: FlowSet,
    /// `O(i, k)` for every pair in `flows`.
    pub masks: MaskSet,
}

impl SceneSequence {
    pub fn num_frames(&self) -> usize {
        self.spec.frames
    }

    pub fn flow(&self, reference: usize, target: usize) -> Result<&FlowField> {
        self.flows
            .get(reference, target)
            .ok_or(Error::MissingFlow { reference, target })
    }

    pub fn mask(&self, reference: usize, target: usize) -> Result<&OcclusionMask> {
        self.masks
            .get(reference, target)
            .ok_or(Error::MissingMask { reference, target })
    }

    /// Ground-truth local flows with their backward counterparts and all
    /// masks attached.
    pub fn to_flow_sequence(&self) -> Result<FlowSequence> {
        let n = self.num_frames();
        let fwd = (1..n)
            .map(|t| self.flow(t, t + 1).cloned())
            .collect::<Result<Vec<_>>>()?;
        let bwd = (1..n)
            .map(|t| self.flow(t + 1, t).cloned())
            .collect::<Result<Vec<_>>>()?;
        FlowSequence::new(fwd)?
            .with_backward(bwd)?
            .with_masks(self.masks.clone())
    }

    /// Solver that substitutes the analytic flow at occluded pixels.
    pub fn ground_truth_fill(&self) -> GroundTruthFill {
        GroundTruthFill::new(self.flows.clone())
    }

    /// `F(1, N)`.
    pub fn oracle_long_range(&self) -> &FlowField {
        self.flow(1, self.num_frames())
            .expect("generated sequences always carry F(1, N)")
    }

    /// `alpha` of `O(1, 1 + d)` for `d = 1..N-1`.
    pub fn occlusion_from_first(&self) -> Vec<f64> {
        (2..=self.num_frames())
            .map(|k| crate::flow::occlusion_proportion(self.masks.get(1, k).expect("generated")))
            .collect()
    }
}

/// Frame pairs produced by [`generate`], ascending.
pub fn generated_pairs(frames: usize) -> Vec<(usize, usize)> {
    let n = frames;
    let mut pairs: Vec<(usize, usize)> = (1..n)
        .flat_map(|t| [(t, t + 1), (t + 1, t)])
        .chain((2..=n).map(|k| (1, k)))
        .chain((1..n).map(|t| (t, n)))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

struct Layout<'a> {
    spec: &'a SceneSpec,
    /// `offsets[layer][t - 1]`; the background is the last layer.
    offsets: Vec<Vec<[f64; 2]>>,
    /// Visible layer per pixel for each frame.
    maps: Vec<Vec<u8>>,
}

impl<'a> Layout<'a> {
    fn new(spec: &'a SceneSpec) -> Self {
        let layers = spec.sprites.len() + 1;
        let offsets: Vec<Vec<[f64; 2]>> = (0..layers)
            .map(|l| (1..=spec.frames).map(|t| spec.layer_offset(l, t)).collect())
            .collect();
        let (w, h) = (spec.width, spec.height);
        let background = spec.sprites.len() as u8;
        let maps = (0..spec.frames)
            .map(|ti| {
                let mut map = vec![background; w * h];
                // Paint back to front so nearer sprites overwrite.
                for (l, s) in spec.sprites.iter().enumerate().rev() {
                    let anchor = offsets[l][ti];
                    let ([x0, y0], [x1, y1]) = s.shape.lattice_bounds(anchor);
                    for y in y0.max(0)..=y1.min(h as i64 - 1) {
                        for x in x0.max(0)..=x1.min(w as i64 - 1) {
                            if s.shape.contains(x as f64 - anchor[0], y as f64 - anchor[1]) {
                                map[y as usize * w + x as usize] = l as u8;
                            }
                        }
                    }
                }
                map
            })
            .collect();
        Self {
            spec,
            offsets,
            maps,
        }
    }

    fn displacement(&self, layer: usize, i: usize, k: usize) -> [f64; 2] {
        let a = self.offsets[layer][i - 1];
        let b = self.offsets[layer][k - 1];
        [b[0] - a[0], b[1] - a[1]]
    }

    /// Whether a layer nearer than `layer` covers point `p` in frame `k`.
    fn covered_by_nearer(&self, layer: usize, p: [f64; 2], k: usize) -> bool {
        let w = self.spec.width;
        if p[0].fract() == 0.0 && p[1].fract() == 0.0 {
            return (self.maps[k - 1][p[1] as usize * w + p[0] as usize] as usize) < layer;
        }
        self.spec.sprites[..layer].iter().enumerate().any(|(l, s)| {
            let a = self.offsets[l][k - 1];
            s.shape.contains(p[0] - a[0], p[1] - a[1])
        })
    }

    fn flow_and_mask(&self, i: usize, k: usize) -> (FlowField, OcclusionMask) {
        let (w, h) = (self.spec.width, self.spec.height);
        let layers = self.spec.sprites.len() + 1;
        let disp: Vec<[f64; 2]> = (0..layers).map(|l| self.displacement(l, i, k)).collect();
        let map = &self.maps[i - 1];
        let flow = FlowField::from_fn(w, h, |x, y| {
            let d = disp[map[y * w + x] as usize];
            [d[0] as f32, d[1] as f32]
        });
        let (max_x, max_y) = ((w - 1) as f64, (h - 1) as f64);
        let mask = OcclusionMask::from_fn(w, h, |x, y| {
            let layer = map[y * w + x] as usize;
            let d = disp[layer];
            let p = [x as f64 + d[0], y as f64 + d[1]];
            if p[0] < 0.0 || p[1] < 0.0 || p[0] > max_x || p[1] > max_y {
                return true;
            }
            self.covered_by_nearer(layer, p, k)
        });
        (flow, mask)
    }

    fn render(&self, t: usize) -> RgbImage {
        let spec = self.spec;
        let map = &self.maps[t - 1];
        RgbImage::from_fn(spec.width as u32, spec.height as u32, |x, y| {
            let layer = map[y as usize * spec.width + x as usize] as usize;
            let (color, texture) = match spec.sprites.get(layer) {
                Some(s) => (s.color, s.texture),
                None => (spec.background.color, spec.background.texture),
            };
            if texture == 0.0 {
                return Rgb(color);
            }
            let a = self.offsets[layer][t - 1];
            let lx = (x as f64 - a[0]).floor() as i64;
            let ly = (y as f64 - a[1]).floor() as i64;
            let n = texture_noise(spec.seed, layer, lx, ly);
            let shift = texture * 96.0 * (2.0 * n - 1.0);
            Rgb(color.map(|c| (c as f64 + shift).round().clamp(0.0, 255.0) as u8))
        })
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform value in `[0, 1)` attached to a layer-local lattice cell.
fn texture_noise(seed: u64, layer: usize, x: i64, y: i64) -> f64 {
    let h =
        splitmix64(seed ^ splitmix64(layer as u64 ^ splitmix64(x as u64 ^ splitmix64(y as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Renders a scene and computes its analytic flows and masks.
pub fn generate(spec: &SceneSpec) -> Result<SceneSequence> {
    spec.validate()?;
    let layout = Layout::new(spec);
    let frames = (1..=spec.frames).map(|t| layout.render(t)).collect();
    let mut flows = FlowSet::new();
    let mut masks = MaskSet::new();
    for (i, k) in generated_pairs(spec.frames) {
        let (f, m) = layout.flow_and_mask(i, k);
        flows.insert(i, k, f);
        masks.insert(i, k, m);
    }
    Ok(SceneSequence {
        spec: spec.clone(),
        frames,
        flows,
        masks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
}

impl Difficulty {
    /// Largest per-frame speed along each axis, in pixels.
    pub fn max_velocity(&self) -> f64 {
        match self {
            Difficulty::Easy => 4.0,
            Difficulty::Hard => 16.0,
        }
    }
}

impl std::str::FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "hard" => Ok(Difficulty::Hard),
            other => Err(Error::InvalidParameter(format!(
                "unknown difficulty {other:?}"
            ))),
        }
    }
}

/// Population parameters for [`random_spec_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSceneConfig {
    pub difficulty: Difficulty,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Sample real-valued velocities instead of whole pixels.
    pub real_valued: bool,
}

impl Default for RandomSceneConfig {
    fn default() -> Self {
        Self {
            difficulty: Difficulty::Easy,
            width: DEFAULT_CANVAS,
            height: DEFAULT_CANVAS,
            frames: DEFAULT_FRAMES,
            real_valued: false,
        }
    }
}

/// Random linear-motion scene on the default 128x128, 7-frame canvas.
pub fn random_spec(seed: u64, difficulty: Difficulty) -> SceneSpec {
    random_spec_with(
        seed,
        &RandomSceneConfig {
            difficulty,
            ..Default::default()
        },
    )
}

/// Samples 1-5 constant-velocity sprites over a static background.
///
/// Sprite sides span 5-25% of the shorter canvas side. Placement is
/// rejection-sampled so that every sprite keeps at least half its area on
/// the canvas in every frame; a sprite that cannot be placed has its speed
/// halved until it can.
pub fn random_spec_with(seed: u64, cfg: &RandomSceneConfig) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = cfg.width.min(cfg.height) as f64;
    let vmax = cfg.difficulty.max_velocity();
    let mut spec = SceneSpec {
        width: cfg.width,
        height: cfg.height,
        frames: cfg.frames,
        background: Background {
            velocity: [0.0, 0.0],
            color: random_color(&mut rng),
            texture: 0.2,
        },
        sprites: Vec::new(),
        seed,
    };

    let count = rng.gen_range(1..=5);
    for _ in 0..count {
        let size = |rng: &mut ChaCha8Rng| (rng.gen_range(0.05..=0.25) * side).round().max(1.0);
        let shape = if rng.gen_bool(0.7) {
            Shape::Rect {
                width: size(&mut rng),
                height: size(&mut rng),
            }
        } else {
            Shape::Disc {
                radius: (size(&mut rng) / 2.0).max(1.0),
            }
        };
        let mut velocity = if cfg.real_valued {
            [rng.gen_range(-vmax..=vmax), rng.gen_range(-vmax..=vmax)]
        } else {
            let m = vmax as i64;
            [rng.gen_range(-m..=m) as f64, rng.gen_range(-m..=m) as f64]
        };
        let color = random_color(&mut rng);
        let texture = rng.gen_range(0.0..0.3);
        loop {
            if let Some(origin) = place(&mut rng, &spec, &shape, velocity) {
                spec.sprites.push(Sprite {
                    shape,
                    origin,
                    trajectory: Trajectory::Constant { velocity },
                    color,
                    texture,
                });
                break;
            }
            velocity = if cfg.real_valued {
                velocity.map(|v| v / 2.0)
            } else {
                velocity.map(|v| (v / 2.0).trunc())
            };
        }
    }
    spec
}

fn random_color(rng: &mut ChaCha8Rng) -> [u8; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

fn place(
    rng: &mut ChaCha8Rng,
    spec: &SceneSpec,
    shape: &Shape,
    velocity: [f64; 2],
) -> Option<[f64; 2]> {
    const ATTEMPTS: usize = 64;
    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut probe = spec.clone();
    for _ in 0..ATTEMPTS {
        let origin = [rng.gen_range(0.0..w).floor(), rng.gen_range(0.0..h).floor()];
        probe.sprites = vec![Sprite {
            shape: shape.clone(),
            origin,
            trajectory: Trajectory::Constant { velocity },
            color: [0; 3],
            texture: 0.0,
        }];
        if (1..=spec.frames).all(|t| probe.on_canvas_fraction(0, t) >= 0.5) {
            return Some(origin);
        }
    }
    if velocity == [0.0, 0.0] {
        // A still sprite centred on the canvas is always admissible.
        let origin = match shape {
            Shape::Rect { width, height } => {
                [((w - width) / 2.0).floor(), ((h - height) / 2.0).floor()]
            }
            Shape::Disc { .. } => [(w / 2.0).floor(), (h / 2.0).floor()],
        };
        return Some(origin);
    }
    None
}
