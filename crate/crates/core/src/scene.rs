//! Procedural test scenes and camera trajectories.
//!
//! A scene is a quadratic polynomial in the direction components, one per
//! channel, viewed through a world rotation that turns about `+y` at a fixed
//! rate per frame. It is smooth at every scale the cubemap can resolve and can
//! be evaluated exactly anywhere.

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    equirect_pixel_to_direction, render_perspective, sample_trajectory, CameraPose, CubemapFrame,
    CubemapVideo, Direction, EquirectGrid,
};
use crate::par;
use crate::raster::Image;

/// Ten coefficients: constant, `x, y, z`, then `xx, yy, zz, xy, yz, zx`.
type Poly = [f64; 10];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    channels: Vec<Poly>,
    yaw_deg_per_frame: f64,
}

impl SyntheticScene {
    /// Random coefficients bounded so every value lies in `[0.02, 0.98]`.
    pub fn from_rng(rng: &mut impl Rng, channels: usize, yaw_deg_per_frame: f64) -> Self {
        let channels = (0..channels)
            .map(|_| {
                let mut p = [0.0; 10];
                p[0] = rng.random_range(0.35..0.65);
                for c in &mut p[1..4] {
                    *c = rng.random_range(-0.12..0.12);
                }
                for c in &mut p[4..10] {
                    *c = rng.random_range(-0.06..0.06);
                }
                p
            })
            .collect();
        Self {
            channels,
            yaw_deg_per_frame,
        }
    }

    /// Same value everywhere and at all times.
    pub fn constant(value: f64, channels: usize) -> Self {
        let mut p = [0.0; 10];
        p[0] = value;
        Self {
            channels: vec![p; channels],
            yaw_deg_per_frame: 0.0,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels.len()
    }

    pub fn yaw_deg_per_frame(&self) -> f64 {
        self.yaw_deg_per_frame
    }

    /// Value of every channel at direction `d` and (possibly fractional) frame `t`.
    pub fn eval(&self, d: Direction, t: f64, out: &mut [f32]) {
        let rot = Rotation3::from_axis_angle(
            &Vector3::y_axis(),
            -(self.yaw_deg_per_frame * t).to_radians(),
        );
        let v = rot * d.to_vector();
        let (x, y, z) = (v.x, v.y, v.z);
        let basis = [1.0, x, y, z, x * x, y * y, z * z, x * y, y * z, z * x];
        for (o, p) in out.iter_mut().zip(&self.channels) {
            *o = p.iter().zip(&basis).map(|(a, b)| a * b).sum::<f64>() as f32;
        }
    }

    pub fn cube_frame(&self, res: usize, t: usize) -> CubemapFrame {
        CubemapFrame::from_field(res, self.channels(), |d, px| self.eval(d, t as f64, px))
    }

    pub fn cube_video(&self, res: usize, frames: usize) -> CubemapVideo {
        let frames = par::map_range(frames, |t| self.cube_frame(res, t));
        CubemapVideo::new(frames).expect("frames share a shape")
    }

    /// Exact equirect frame, evaluated at every pixel center.
    pub fn equirect_frame(&self, width: usize, t: usize) -> Result<EquirectGrid> {
        if width == 0 || !width.is_multiple_of(2) {
            return Err(Error::arg(format!(
                "equirect width must be even, got {width}"
            )));
        }
        let img = Image::from_fn(width, width / 2, self.channels(), |v, u, px| {
            let d = equirect_pixel_to_direction(u, v, width).expect("pixel in range");
            self.eval(d, t as f64, px)
        });
        EquirectGrid::new(img)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    /// Every anchor looks straight ahead.
    Static,
    /// Anchors at random yaw and pitch.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub anchors: usize,
    pub hfov_deg: f64,
    pub vfov_deg: f64,
    pub max_yaw_deg: f64,
    pub max_pitch_deg: f64,
    /// Perspective frame size in pixels.
    pub frame_width: usize,
    pub frame_height: usize,
    pub scene_yaw_deg_per_frame: f64,
    /// When set, each anchor draws its own hfov and vfov from this range.
    #[serde(default)]
    pub fov_range_deg: Option<[f64; 2]>,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::Random,
            anchors: 4,
            hfov_deg: 90.0,
            vfov_deg: 45.0,
            max_yaw_deg: 120.0,
            max_pitch_deg: 30.0,
            frame_width: 128,
            frame_height: 64,
            scene_yaw_deg_per_frame: 2.0,
            fov_range_deg: None,
        }
    }
}

impl TrajectorySpec {
    pub fn anchor_poses(&self, rng: &mut impl Rng) -> Result<Vec<CameraPose>> {
        (0..self.anchors)
            .map(|_| {
                let (h, v) = match self.fov_range_deg {
                    Some([lo, hi]) => (rng.random_range(lo..=hi), rng.random_range(lo..=hi)),
                    None => (self.hfov_deg, self.vfov_deg),
                };
                match self.kind {
                    TrajectoryKind::Static => CameraPose::identity(h, v),
                    TrajectoryKind::Random => {
                        let yaw = rng.random_range(-self.max_yaw_deg..=self.max_yaw_deg);
                        let pitch = rng.random_range(-self.max_pitch_deg..=self.max_pitch_deg);
                        CameraPose::from_yaw_pitch(yaw, pitch, h, v)
                    }
                }
            })
            .collect()
    }
}

/// Ground truth plus what a camera following the trajectory would record.
#[derive(Clone, Debug)]
pub struct SceneBundle {
    pub scene: SyntheticScene,
    pub truth: CubemapVideo,
    pub perspective: Vec<Image>,
    pub poses: Vec<CameraPose>,
}

/// Draws a scene and trajectory from `seed` and renders `frames` frames.
pub fn synth_scene(
    res: usize,
    frames: usize,
    channels: usize,
    traj: &TrajectorySpec,
    seed: u64,
) -> Result<SceneBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = SyntheticScene::from_rng(&mut rng, channels, traj.scene_yaw_deg_per_frame);
    let anchors = traj.anchor_poses(&mut rng)?;
    let poses = if frames == 1 {
        vec![anchors[0].clone()]
    } else {
        sample_trajectory(&anchors, frames)?
    };
    let truth = scene.cube_video(res, frames);
    let perspective = par::map_range(frames, |t| {
        render_perspective(
            truth.frame(t),
            &poses[t],
            traj.frame_width,
            traj.frame_height,
        )
    });
    Ok(SceneBundle {
        scene,
        truth,
        perspective,
        poses,
    })
}
