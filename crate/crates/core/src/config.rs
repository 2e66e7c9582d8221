//! Run configuration: presets, JSON loading and validation.
//!
//! A config file is a JSON object whose keys override the chosen preset.
//! Nested objects (`paths`, `trajectory`, `bench`) merge key by key. Keys
//! that default from others (`W = 4R`, `p = R/16`, `K = (R/p_s)²`) are
//! recomputed unless the file sets them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::scene::{TrajectoryKind, TrajectorySpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Small sizes for laptop runs.
    #[default]
    Desk,
    /// 4K output geometry (`R = 960`, `W = 3840`).
    PaperGeometry,
    /// Desk sizes with the random-trajectory protocol enforced.
    Protocol,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenoiserKind {
    #[default]
    Oracle,
    Copy,
    Zero,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Directory of perspective frames (`.pfm` or `.ppm`, sorted by name).
    pub frames: Option<PathBuf>,
    /// JSON pose list, one per frame.
    pub poses: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(rename = "G")]
    pub gen_len: usize,
    #[serde(rename = "K")]
    pub bandwidth: usize,
    pub d: usize,
    pub heads: usize,
    /// Context lengths to sweep.
    #[serde(rename = "C")]
    pub contexts: Vec<usize>,
    /// Context lengths at which wall-clock is measured for both paths.
    pub timed: Vec<usize>,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            gen_len: 64,
            bandwidth: 16,
            d: 32,
            heads: 1,
            contexts: (1..=64).map(|i| 64 * i).collect(),
            timed: vec![256, 1024, 4096],
            repeats: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    #[serde(rename = "R")]
    pub res: usize,
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "N")]
    pub frames: usize,
    #[serde(rename = "T_win")]
    pub window_len: usize,
    #[serde(rename = "H")]
    pub pool_capacity: usize,
    #[serde(rename = "T_frag")]
    pub frag_len: usize,
    #[serde(rename = "r")]
    pub threshold: f64,
    #[serde(rename = "K")]
    pub bandwidth: usize,
    #[serde(rename = "p")]
    pub pad: usize,
    #[serde(rename = "p_s")]
    pub patch: usize,
    #[serde(rename = "S")]
    pub steps: usize,
    pub seed: u64,
    pub channels: usize,
    pub paths: Paths,
    pub teacher_forcing: bool,
    pub denoiser: DenoiserKind,
    pub trajectory: TrajectorySpec,
    pub bench: BenchConfig,
    /// Emit wall-clock measurements; off makes every artifact a pure
    /// function of config and seed.
    pub record_timings: bool,
    /// Allow full pixel buffers under the paper-geometry preset.
    pub allocate: bool,
}

const DERIVED: [&str; 3] = ["W", "p", "K"];

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let res = if preset == Preset::PaperGeometry {
            960
        } else {
            64
        };
        let mut trajectory = TrajectorySpec::default();
        if preset == Preset::Protocol {
            trajectory.hfov_deg = 90.0;
            trajectory.vfov_deg = 60.0;
            trajectory.fov_range_deg = Some([60.0, 120.0]);
        }
        let mut c = Self {
            preset,
            res,
            width: 0,
            frames: 8,
            window_len: 4,
            pool_capacity: 2,
            frag_len: 4,
            threshold: 0.5,
            bandwidth: 0,
            pad: 0,
            patch: 8,
            steps: 4,
            seed: 0,
            channels: 3,
            paths: Paths {
                frames: None,
                poses: None,
                out: PathBuf::from("out"),
            },
            teacher_forcing: false,
            denoiser: DenoiserKind::Oracle,
            trajectory,
            bench: BenchConfig::default(),
            record_timings: true,
            allocate: false,
        };
        c.fill_derived(&[]);
        c
    }

    fn fill_derived(&mut self, keep: &[&str]) {
        if !keep.contains(&"W") {
            self.width = 4 * self.res;
        }
        if !keep.contains(&"p") {
            self.pad = (self.res / 16).max(1);
        }
        if !keep.contains(&"K") && self.patch > 0 {
            self.bandwidth = (self.res / self.patch).pow(2).max(1);
        }
    }

    /// Builds a config from a JSON object of overrides.
    pub fn from_json(v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::config("<root>", "config must be a JSON object"))?;
        let preset = match obj.get("preset") {
            Some(p) => serde_json::from_value(p.clone()).map_err(|_| {
                Error::config("preset", "must be one of desk, paper-geometry, protocol")
            })?,
            None => Preset::default(),
        };
        let mut merged = serde_json::to_value(Self::preset(preset))?;
        merge(&mut merged, v);
        let mut cfg: RunConfig = serde_json::from_value(merged).map_err(field_error)?;
        let keep: Vec<&str> = DERIVED
            .into_iter()
            .filter(|k| obj.contains_key(*k))
            .collect();
        cfg.fill_derived(&keep);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Applies command-line overrides and revalidates.
    pub fn with_overrides(mut self, out: Option<PathBuf>, seed: Option<u64>) -> Result<Self> {
        if let Some(o) = out {
            self.paths.out = o;
        }
        if let Some(s) = seed {
            self.seed = s;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("R", self.res),
            ("N", self.frames),
            ("T_win", self.window_len),
            ("H", self.pool_capacity),
            ("T_frag", self.frag_len),
            ("K", self.bandwidth),
            ("p", self.pad),
            ("p_s", self.patch),
            ("S", self.steps),
            ("channels", self.channels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if self.res < 4 {
            return Err(Error::config(
                "R",
                format!("face resolution must be at least 4, got {}", self.res),
            ));
        }
        if self.width != 4 * self.res {
            return Err(Error::config(
                "W",
                format!("must equal 4R = {}, got {}", 4 * self.res, self.width),
            ));
        }
        if !self.frames.is_multiple_of(self.window_len) {
            return Err(Error::config(
                "N",
                format!(
                    "N = {} is not divisible by T_win = {}",
                    self.frames, self.window_len
                ),
            ));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::config(
                "r",
                format!("must satisfy 0 < r <= 1, got {}", self.threshold),
            ));
        }
        if 2 * self.pad > self.res {
            return Err(Error::config(
                "p",
                format!("pad width {} exceeds R/2 = {}", self.pad, self.res / 2),
            ));
        }
        if !self.res.is_multiple_of(self.patch) {
            return Err(Error::config(
                "p_s",
                format!("patch size {} does not divide R = {}", self.patch, self.res),
            ));
        }
        self.validate_trajectory()?;
        self.validate_bench()?;
        if (self.paths.frames.is_some()) != (self.paths.poses.is_some()) {
            return Err(Error::config(
                "paths",
                "frames and poses must be given together",
            ));
        }
        if self.teacher_forcing && self.paths.frames.is_some() {
            return Err(Error::config(
                "teacher_forcing",
                "needs the synthetic scene's ground truth",
            ));
        }
        if self.denoiser == DenoiserKind::Oracle && self.paths.frames.is_some() {
            return Err(Error::config(
                "denoiser",
                "oracle needs the synthetic scene's ground truth",
            ));
        }
        Ok(())
    }

    fn validate_trajectory(&self) -> Result<()> {
        let t = &self.trajectory;
        for (name, v) in [
            ("trajectory.hfov_deg", t.hfov_deg),
            ("trajectory.vfov_deg", t.vfov_deg),
        ] {
            if !(v > 0.0 && v < 180.0) {
                return Err(Error::config(
                    name,
                    format!("must lie in (0, 180), got {v}"),
                ));
            }
        }
        if let Some([lo, hi]) = t.fov_range_deg {
            if !(lo > 0.0 && lo <= hi && hi < 180.0) {
                return Err(Error::config(
                    "trajectory.fov_range_deg",
                    "needs 0 < lo <= hi < 180",
                ));
            }
        }
        if t.anchors < 2 {
            return Err(Error::config(
                "trajectory.anchors",
                "at least two anchors are needed",
            ));
        }
        if t.frame_width == 0 || t.frame_height == 0 {
            return Err(Error::config(
                "trajectory.frame_width",
                "frame size must be positive",
            ));
        }
        if !(t.max_yaw_deg >= 0.0 && t.max_pitch_deg >= 0.0 && t.max_pitch_deg <= 90.0) {
            return Err(Error::config(
                "trajectory.max_pitch_deg",
                "angle limits must be non-negative, pitch <= 90",
            ));
        }
        if self.preset == Preset::Protocol {
            if !(3..=5).contains(&t.anchors) {
                return Err(Error::config(
                    "trajectory.anchors",
                    format!("protocol preset needs 3-5 anchors, got {}", t.anchors),
                ));
            }
            let (lo, hi) = match t.fov_range_deg {
                Some([lo, hi]) => (lo, hi),
                None => (t.hfov_deg.min(t.vfov_deg), t.hfov_deg.max(t.vfov_deg)),
            };
            if lo < 60.0 || hi > 120.0 {
                return Err(Error::config(
                    "trajectory.fov_range_deg",
                    format!("protocol preset needs FoV within 60-120 degrees, got {lo}-{hi}"),
                ));
            }
            if t.kind != TrajectoryKind::Random {
                return Err(Error::config(
                    "trajectory.kind",
                    "protocol preset samples random trajectories",
                ));
            }
        }
        Ok(())
    }

    fn validate_bench(&self) -> Result<()> {
        let b = &self.bench;
        for (name, v) in [
            ("bench.G", b.gen_len),
            ("bench.K", b.bandwidth),
            ("bench.d", b.d),
            ("bench.heads", b.heads),
            ("bench.repeats", b.repeats),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if b.contexts.len() < 2 {
            return Err(Error::config(
                "bench.C",
                "needs at least two context lengths",
            ));
        }
        Ok(())
    }

    /// Whether subcommands should skip pixel work and report shapes only.
    pub fn shapes_only(&self) -> bool {
        self.preset == Preset::PaperGeometry && !self.allocate
    }
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn field_error(e: serde_json::Error) -> Error {
    let msg = e.to_string();
    let field = msg
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<root>".into());
    Error::config(field, msg)
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let bytes = std::fs::read(path)?;
    let v: Value = serde_json::from_slice(&bytes)?;
    RunConfig::from_json(&v)
}

/// Smallest valid config file contents.
pub fn minimal_config() -> Value {
    json!({})
}
