//! Experiment configuration: a TOML file with `[synth]` and `[accumulate]`
//! tables, overridden field by field from the command line.
//!
//! Worker counts and output paths are deliberately not part of the resolved
//! configuration, so identical experiments produce identical files wherever
//! and however they run.

use std::path::Path;

use anyhow::{bail, Context, Result};
use flowacc::accumulate::Direction;
use flowacc::occlusion::{OccDetector, OccSolver, DEFAULT_TOL_ABS, DEFAULT_TOL_REL};
use flowacc::synth::{Difficulty, RandomSceneConfig, DEFAULT_CANVAS, DEFAULT_FRAMES};
use serde::{Deserialize, Serialize};

pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accumulate: Option<AccumulateConfig>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RESOLVED_CONFIG);
        std::fs::write(&path, toml::to_string(self)?)
            .with_context(|| format!("writing {}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    pub difficulty: Difficulty,
    pub canvas: usize,
    pub frames: usize,
    pub split: String,
    pub real_valued: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 10,
            seed: 0,
            difficulty: Difficulty::Easy,
            canvas: DEFAULT_CANVAS,
            frames: DEFAULT_FRAMES,
            split: "train".into(),
            real_valued: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            bail!("--n must be at least 1");
        }
        if self.canvas < 8 {
            bail!("--canvas must be at least 8, got {}", self.canvas);
        }
        if self.canvas > 1 << 14 {
            bail!("--canvas {} is implausibly large", self.canvas);
        }
        if self.frames < 3 {
            bail!(
                "--frames must be at least 3 for accumulation, got {}",
                self.frames
            );
        }
        if self.split.is_empty()
            || !self
                .split
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            bail!(
                "--split must be a non-empty [A-Za-z0-9_-] label, got {:?}",
                self.split
            );
        }
        Ok(())
    }

    pub fn scene_config(&self) -> RandomSceneConfig {
        RandomSceneConfig {
            difficulty: self.difficulty,
            width: self.canvas,
            height: self.canvas,
            frames: self.frames,
            real_valued: self.real_valued,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Directions {
    Forward,
    Backward,
    Both,
}

impl Directions {
    pub fn list(&self) -> Vec<Direction> {
        match self {
            Directions::Forward => vec![Direction::Forward],
            Directions::Backward => vec![Direction::Backward],
            Directions::Both => vec![Direction::Forward, Direction::Backward],
        }
    }
}

impl std::str::FromStr for Directions {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "forward" => Ok(Directions::Forward),
            "backward" => Ok(Directions::Backward),
            "both" => Ok(Directions::Both),
            other => Err(format!("expected forward, backward or both, got {other:?}")),
        }
    }
}

/// Solver named on the command line; `ground-truth` reads the analytic
/// long-range flows stored with the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Builtin(OccSolver),
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccumulateConfig {
    pub direction: Directions,
    pub detector: String,
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub solver: String,
}

impl Default for AccumulateConfig {
    fn default() -> Self {
        Self {
            direction: Directions::Both,
            detector: "consistency".into(),
            tol_abs: DEFAULT_TOL_ABS,
            tol_rel: DEFAULT_TOL_REL,
            solver: "zero".into(),
        }
    }
}

impl AccumulateConfig {
    pub fn detector(&self) -> Result<OccDetector> {
        let d: OccDetector = self.detector.parse()?;
        Ok(match d {
            OccDetector::Consistency { .. } => {
                if !(self.tol_abs.is_finite() && self.tol_abs > 0.0) {
                    bail!(
                        "--tol-abs must be finite and positive, got {}",
                        self.tol_abs
                    );
                }
                if !(self.tol_rel.is_finite() && self.tol_rel >= 0.0) {
                    bail!(
                        "--tol-rel must be finite and non-negative, got {}",
                        self.tol_rel
                    );
                }
                OccDetector::Consistency {
                    tol_abs: self.tol_abs,
                    tol_rel: self.tol_rel,
                }
            }
            other => other,
        })
    }

    pub fn solver(&self) -> Result<SolverChoice> {
        if self.solver == "ground-truth" {
            return Ok(SolverChoice::GroundTruth);
        }
        Ok(SolverChoice::Builtin(self.solver.parse()?))
    }
}
