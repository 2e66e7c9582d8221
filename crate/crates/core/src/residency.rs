//! Shared face-clip handles with live-count instrumentation.
//!
//! The generation loop keeps generated content behind [`Latent`] handles.
//! Handles created with [`Latent::tracked`] register with a
//! [`ResidencyProbe`], which records how many distinct clips are alive and
//! the peak over a run. Cloning a handle shares the clip and does not count
//! again.

use std::ops::Deref;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::raster::FaceVideo;

#[derive(Debug, Default)]
struct Counters {
    live: AtomicUsize,
    peak: AtomicUsize,
}

#[derive(Clone, Debug, Default)]
pub struct ResidencyProbe(Arc<Counters>);

impl ResidencyProbe {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn live(&self) -> usize {
        self.0.live.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.0.peak.load(Ordering::SeqCst)
    }

    fn acquire(&self) {
        let now = self.0.live.fetch_add(1, Ordering::SeqCst) + 1;
        self.0.peak.fetch_max(now, Ordering::SeqCst);
    }

    fn release(&self) {
        self.0.live.fetch_sub(1, Ordering::SeqCst);
    }
}

#[derive(Debug)]
struct Inner {
    video: FaceVideo,
    probe: Option<ResidencyProbe>,
}

impl Drop for Inner {
    fn drop(&mut self) {
        if let Some(p) = &self.probe {
            p.release();
        }
    }
}

/// Reference-counted, immutable face clip.
#[derive(Clone, Debug)]
pub struct Latent(Arc<Inner>);

impl Latent {
    pub fn new(video: FaceVideo) -> Self {
        Self(Arc::new(Inner { video, probe: None }))
    }

    pub fn tracked(video: FaceVideo, probe: &ResidencyProbe) -> Self {
        probe.acquire();
        Self(Arc::new(Inner {
            video,
            probe: Some(probe.clone()),
        }))
    }

    pub fn video(&self) -> &FaceVideo {
        &self.0.video
    }

    pub fn ptr_eq(a: &Latent, b: &Latent) -> bool {
        Arc::ptr_eq(&a.0, &b.0)
    }
}

impl Deref for Latent {
    type Target = FaceVideo;

    fn deref(&self) -> &FaceVideo {
        &self.0.video
    }
}
