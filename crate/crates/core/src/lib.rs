//! Inference-side machinery for face-wise, window-by-window 360° video
//! generation on a cubemap.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: perspective / equirect / cubemap projections and masks.
//! * [`planner`]: temporal windows, coverage and the per-window face order.
//! * [`context`]: history pool, future-fragment selection, context bundles.
//! * [`attention`]: banded context mask, dense and sparse attention, FLOPs.
//! * [`continuity`]: flattened-cube positions, padding, blending, seams.
//! * [`pipeline`]: flow-matching path, loss, sampler and the generation loop.
//! * [`config`], [`scene`], [`commands`]: run configuration, synthetic
//!   scenes and the subcommands behind the `cubegen` binary.

pub mod attention;
pub mod commands;
pub mod config;
pub mod context;
pub mod continuity;
pub mod error;
pub mod geometry;
pub mod io;
pub mod par;
pub mod pipeline;
pub mod planner;
pub mod raster;
pub mod residency;
pub mod scene;

pub use error::{Error, Result};
pub use geometry::{CameraPose, CubemapFrame, CubemapVideo, Direction, EquirectGrid, Face};
pub use raster::{FaceVideo, Image, Mask};
