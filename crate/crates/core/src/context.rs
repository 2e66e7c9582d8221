//! History pool, future-fragment selection and context assembly.
//!
//! A context bundle for generating face `f` in window `w` is the
//! concatenation `[hist; curr; fut]`:
//!
//! * `hist`: up to `H` earlier windows from the pool, oldest first, six
//!   faces each in canonical order;
//! * `curr`: faces of `w` already generated (in generation order), then the
//!   conditional input of every face not yet generated, `f` included;
//! * `fut`: for `f` and each of its neighbours, the nearest stretch of
//!   conditional input at or after the window end whose short-horizon
//!   coverage reaches the threshold.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CubemapVideo, Face};
use crate::planner::FrameCoverage;
use crate::residency::{Latent, ResidencyProbe};

/// All six faces of one completed window.
#[derive(Clone, Debug)]
pub struct WindowContent {
    pub window: usize,
    pub start: usize,
    pub end: usize,
    /// Indexed by canonical face order.
    pub faces: [Latent; 6],
}

/// Bounded FIFO of completed windows.
#[derive(Clone, Debug)]
pub struct ContextPool {
    capacity: usize,
    entries: VecDeque<WindowContent>,
}

impl ContextPool {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &WindowContent> {
        self.entries.iter()
    }

    pub fn windows(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.window).collect()
    }

    /// Appends a window, evicting the oldest entries beyond capacity.
    pub fn push(&mut self, content: WindowContent) -> Result<()> {
        if let Some(last) = self.entries.back() {
            if content.window <= last.window {
                return Err(Error::arg(format!(
                    "pool push out of order: window {} after {}",
                    content.window, last.window
                )));
            }
        }
        if content.start >= content.end {
            return Err(Error::arg("window content has an empty frame range"));
        }
        self.entries.push_back(content);
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
        Ok(())
    }
}

/// Mean coverage of face `g` over `len` frames starting at `start`.
pub fn short_horizon_coverage(
    fc: &FrameCoverage,
    g: Face,
    start: usize,
    len: usize,
) -> Result<f64> {
    if len == 0 {
        return Err(Error::arg("fragment length must be at least 1"));
    }
    if start + len > fc.frames() {
        return Err(Error::arg(format!(
            "horizon [{start}, {}) exceeds {} frames",
            start + len,
            fc.frames()
        )));
    }
    let sum: f64 = (start..start + len).map(|t| fc.get(g, t)).sum();
    Ok(sum / len as f64)
}

/// A selected stretch of conditional input ahead of the current window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragmentSpec {
    pub face: Face,
    pub start: usize,
    pub len: usize,
}

impl FragmentSpec {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// Nearest qualifying future fragment for `current` and each of its neighbours.
///
/// For every candidate face the earliest `start >= window_end` whose
/// short-horizon coverage is at least `threshold` is chosen; faces without
/// one that fits inside the video are left out. Output order is `current`
/// first, then neighbours in canonical order.
pub fn select_future_fragments(
    fc: &FrameCoverage,
    current: Face,
    window_end: usize,
    len: usize,
    threshold: f64,
) -> Result<Vec<FragmentSpec>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::arg(format!(
            "coverage threshold must lie in (0, 1], got {threshold}"
        )));
    }
    if len == 0 {
        return Err(Error::arg("fragment length must be at least 1"));
    }
    let n = fc.frames();
    let candidates = std::iter::once(current).chain(current.neighbors());
    let mut out = Vec::new();
    for g in candidates {
        if window_end + len > n {
            break;
        }
        let hit = (window_end..=n - len).find(|&tau| {
            short_horizon_coverage(fc, g, tau, len).expect("horizon fits") >= threshold
        });
        if let Some(start) = hit {
            out.push(FragmentSpec {
                face: g,
                start,
                len,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SourceKind {
    #[serde(rename = "hist")]
    History,
    #[serde(rename = "curr-gen")]
    CurrentGenerated,
    #[serde(rename = "curr-cond")]
    CurrentConditional,
    #[serde(rename = "fut")]
    Future,
}

/// Where a context source came from: kind, face and frame range `[s, e)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: SourceKind,
    pub face: Face,
    pub s: usize,
    pub e: usize,
}

#[derive(Clone, Debug)]
pub struct ContextSource {
    pub provenance: Provenance,
    pub content: Latent,
}

/// Faces of the current window generated so far, in generation order.
#[derive(Clone, Debug)]
pub struct WindowState {
    pub window: usize,
    pub start: usize,
    pub end: usize,
    pub generated: Vec<(Face, Latent)>,
}

impl WindowState {
    pub fn new(window: usize, start: usize, end: usize) -> Self {
        Self {
            window,
            start,
            end,
            generated: Vec::with_capacity(6),
        }
    }

    pub fn is_generated(&self, f: Face) -> bool {
        self.generated.iter().any(|(g, _)| *g == f)
    }

    pub fn is_complete(&self) -> bool {
        self.generated.len() == 6
    }
}

#[derive(Clone, Debug, Default)]
pub struct ContextBundle {
    pub hist: Vec<ContextSource>,
    pub curr: Vec<ContextSource>,
    pub fut: Vec<ContextSource>,
}

impl ContextBundle {
    /// Sources in concatenation order `[hist; curr; fut]`.
    pub fn sources(&self) -> impl Iterator<Item = &ContextSource> {
        self.hist.iter().chain(&self.curr).chain(&self.fut)
    }

    pub fn provenance(&self) -> Vec<Provenance> {
        self.sources().map(|s| s.provenance).collect()
    }

    pub fn len(&self) -> usize {
        self.hist.len() + self.curr.len() + self.fut.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builds the three-part context for the next face of `state`'s window.
pub fn assemble_context(
    pool: &ContextPool,
    state: &WindowState,
    fragments: &[FragmentSpec],
    cond: &CubemapVideo,
) -> Result<ContextBundle> {
    assemble(pool, state, fragments, cond, None)
}

/// [`assemble_context`] with the future fragments registered on `probe`.
pub fn assemble_context_tracked(
    pool: &ContextPool,
    state: &WindowState,
    fragments: &[FragmentSpec],
    cond: &CubemapVideo,
    probe: &ResidencyProbe,
) -> Result<ContextBundle> {
    assemble(pool, state, fragments, cond, Some(probe))
}

fn assemble(
    pool: &ContextPool,
    state: &WindowState,
    fragments: &[FragmentSpec],
    cond: &CubemapVideo,
    probe: Option<&ResidencyProbe>,
) -> Result<ContextBundle> {
    let mut bundle = ContextBundle::default();
    for entry in pool.entries() {
        for f in Face::ALL {
            bundle.hist.push(ContextSource {
                provenance: Provenance {
                    kind: SourceKind::History,
                    face: f,
                    s: entry.start,
                    e: entry.end,
                },
                content: entry.faces[f.index()].clone(),
            });
        }
    }
    for (f, latent) in &state.generated {
        bundle.curr.push(ContextSource {
            provenance: Provenance {
                kind: SourceKind::CurrentGenerated,
                face: *f,
                s: state.start,
                e: state.end,
            },
            content: latent.clone(),
        });
    }
    for f in Face::ALL.into_iter().filter(|f| !state.is_generated(*f)) {
        bundle.curr.push(ContextSource {
            provenance: Provenance {
                kind: SourceKind::CurrentConditional,
                face: f,
                s: state.start,
                e: state.end,
            },
            content: Latent::new(cond.face_clip(f, state.start, state.end)?),
        });
    }
    for frag in fragments {
        bundle.fut.push(ContextSource {
            provenance: Provenance {
                kind: SourceKind::Future,
                face: frag.face,
                s: frag.start,
                e: frag.end(),
            },
            content: {
                let clip = cond.face_clip(frag.face, frag.start, frag.end())?;
                match probe {
                    Some(p) => Latent::tracked(clip, p),
                    None => Latent::new(clip),
                }
            },
        });
    }
    Ok(bundle)
}
