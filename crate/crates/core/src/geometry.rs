//! Mappings among perspective frames, equirectangular grids and cubemaps.
//!
//! # Conventions
//!
//! World frame is right-handed: `+z` front, `+y` up, `+x` right. Every face
//! is described by a `forward` axis (outward normal) plus the world axes that
//! in-face `x` (columns, left to right) and `y` (rows, top to bottom) follow:
//!
//! | face | forward | `x` grows along | `y` grows along |
//! |------|---------|-----------------|-----------------|
//! | F    | `+z`    | `+x`            | `-y`            |
//! | R    | `+x`    | `-z`            | `-y`            |
//! | B    | `-z`    | `-x`            | `-y`            |
//! | L    | `-x`    | `+z`            | `-y`            |
//! | U    | `+y`    | `+x`            | `+z`            |
//! | D    | `-y`    | `+x`            | `-z`            |
//!
//! So F matches an ordinary image seen from the origin, U's bottom row
//! touches F's top row and D's top row touches F's bottom row.
//!
//! Pixels are sampled at their centers (offset 0.5). Images are sampled
//! bilinearly, masks nearest-neighbour. Equirectangular longitude wraps and
//! latitude clamps at the poles.
//!
//! Camera poses map camera coordinates to world coordinates; a camera looks
//! down its own `+z` with `+x` right and `+y` up.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::raster::{FaceVideo, Image, Mask};

/// Cube face identifier. Declaration order is the canonical order used for
/// tie-breaking everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Face {
    F,
    R,
    B,
    L,
    U,
    D,
}

/// Integer axis vector; faces are axis aligned so adjacency math stays exact.
pub type Axis = [i32; 3];

impl Face {
    pub const ALL: [Face; 6] = [Face::F, Face::R, Face::B, Face::L, Face::U, Face::D];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Face> {
        Face::ALL.get(i).copied()
    }

    pub fn letter(self) -> &'static str {
        match self {
            Face::F => "F",
            Face::R => "R",
            Face::B => "B",
            Face::L => "L",
            Face::U => "U",
            Face::D => "D",
        }
    }

    pub fn parse(s: &str) -> Option<Face> {
        Face::ALL.into_iter().find(|f| f.letter() == s)
    }

    /// `(forward, x axis, y axis)` as integer world vectors.
    pub const fn basis(self) -> (Axis, Axis, Axis) {
        match self {
            Face::F => ([0, 0, 1], [1, 0, 0], [0, -1, 0]),
            Face::R => ([1, 0, 0], [0, 0, -1], [0, -1, 0]),
            Face::B => ([0, 0, -1], [-1, 0, 0], [0, -1, 0]),
            Face::L => ([-1, 0, 0], [0, 0, 1], [0, -1, 0]),
            Face::U => ([0, 1, 0], [1, 0, 0], [0, 0, 1]),
            Face::D => ([0, -1, 0], [1, 0, 0], [0, 0, -1]),
        }
    }

    pub fn forward(self) -> Axis {
        self.basis().0
    }

    pub fn from_forward(axis: Axis) -> Face {
        Face::ALL
            .into_iter()
            .find(|f| f.forward() == axis)
            .expect("axis is a signed unit vector")
    }

    pub fn opposite(self) -> Face {
        let [x, y, z] = self.forward();
        Face::from_forward([-x, -y, -z])
    }

    /// The four faces sharing an edge with `self`, in canonical order.
    pub fn neighbors(self) -> [Face; 4] {
        let opp = self.opposite();
        let mut out = [Face::F; 4];
        let mut n = 0;
        for g in Face::ALL {
            if g != self && g != opp {
                out[n] = g;
                n += 1;
            }
        }
        out
    }
}

impl fmt::Display for Face {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.letter())
    }
}

#[inline]
fn dot_axis(a: Axis, d: &Direction) -> f64 {
    a[0] as f64 * d.x + a[1] as f64 * d.y + a[2] as f64 * d.z
}

/// Unit vector on the sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Direction {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Direction {
    /// Normalizes `(x, y, z)`; returns `None` for the zero vector.
    pub fn new(x: f64, y: f64, z: f64) -> Option<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return None;
        }
        Some(Self {
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Option<Self> {
        Self::new(v.x, v.y, v.z)
    }

    pub fn angle_to(self, other: Direction) -> f64 {
        let c = self.x * other.x + self.y * other.y + self.z * other.z;
        let cross = self.to_vector().cross(&other.to_vector()).norm();
        cross.atan2(c)
    }
}

/// Largest `f64` strictly below one.
const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

/// Face under `d` and its in-face coordinates in `[0, 1)`.
///
/// The face is the one whose outward axis has the largest dot product with
/// `d`; ties go to the earlier face in canonical order.
pub fn direction_to_face_coords(d: Direction) -> (Face, f64, f64) {
    let mut best = Face::F;
    let mut best_dot = f64::NEG_INFINITY;
    for f in Face::ALL {
        let v = dot_axis(f.forward(), &d);
        if v > best_dot {
            best = f;
            best_dot = v;
        }
    }
    let (_, xa, ya) = best.basis();
    let x = 0.5 * (dot_axis(xa, &d) / best_dot + 1.0);
    let y = 0.5 * (dot_axis(ya, &d) / best_dot + 1.0);
    (best, x.clamp(0.0, ONE_BELOW), y.clamp(0.0, ONE_BELOW))
}

/// Inverse of [`direction_to_face_coords`] for coordinates on `face`.
pub fn face_coords_to_direction(face: Face, x: f64, y: f64) -> Direction {
    let (fw, xa, ya) = face.basis();
    let a = 2.0 * x - 1.0;
    let b = 2.0 * y - 1.0;
    let v = |k: usize| fw[k] as f64 + a * xa[k] as f64 + b * ya[k] as f64;
    Direction::new(v(0), v(1), v(2)).expect("face point is never the origin")
}

/// Direction through the center of pixel `(row, col)` of a face of size `res`.
#[inline]
pub fn face_pixel_direction(face: Face, res: usize, row: usize, col: usize) -> Direction {
    let r = res as f64;
    face_coords_to_direction(face, (col as f64 + 0.5) / r, (row as f64 + 0.5) / r)
}

/// Exact solid angle subtended by pixel `(row, col)` of a face of size `res`.
pub fn face_pixel_solid_angle(res: usize, row: usize, col: usize) -> f64 {
    // Solid angle of the rectangle [0,a]x[0,b] on the plane z = 1.
    let area = |a: f64, b: f64| (a * b / (1.0 + a * a + b * b).sqrt()).atan();
    let r = res as f64;
    let a0 = 2.0 * col as f64 / r - 1.0;
    let a1 = 2.0 * (col + 1) as f64 / r - 1.0;
    let b0 = 2.0 * row as f64 / r - 1.0;
    let b1 = 2.0 * (row + 1) as f64 / r - 1.0;
    area(a1, b1) - area(a0, b1) - area(a1, b0) + area(a0, b0)
}

/// Solid angle of a rectangular pinhole frustum with the given full angles.
pub fn frustum_solid_angle(hfov_rad: f64, vfov_rad: f64) -> f64 {
    4.0 * ((hfov_rad / 2.0).sin() * (vfov_rad / 2.0).sin()).asin()
}

/// Direction through the center of equirect pixel `(u, v)` in a `width`-wide grid.
pub fn equirect_pixel_to_direction(u: usize, v: usize, width: usize) -> Result<Direction> {
    let height = width / 2;
    if width < 2 || u >= width || v >= height {
        return Err(Error::arg(format!(
            "equirect pixel ({u}, {v}) outside {width}x{height}"
        )));
    }
    let lon = (u as f64 + 0.5) / width as f64 * 2.0 * PI - PI;
    let lat = FRAC_PI_2 - (v as f64 + 0.5) / height as f64 * PI;
    Ok(lon_lat_to_direction(lon, lat))
}

fn lon_lat_to_direction(lon: f64, lat: f64) -> Direction {
    let (sl, cl) = lat.sin_cos();
    let (st, ct) = lon.sin_cos();
    Direction {
        x: cl * st,
        y: sl,
        z: cl * ct,
    }
}

/// Continuous equirect coordinates of `d`: column in `[0, width)` and row in
/// `[0, width / 2]`, with pixel `k` spanning `[k, k + 1)`.
pub fn direction_to_equirect_coords(d: Direction, width: usize) -> (f64, f64) {
    let height = (width / 2) as f64;
    let lon = d.x.atan2(d.z);
    let lat = d.y.clamp(-1.0, 1.0).asin();
    let u = (lon + PI) / (2.0 * PI) * width as f64;
    let v = (FRAC_PI_2 - lat) / PI * height;
    (u.rem_euclid(width as f64), v)
}

/// Equirect pixel containing `d`.
pub fn direction_to_equirect_pixel(d: Direction, width: usize) -> (usize, usize) {
    let (u, v) = direction_to_equirect_coords(d, width);
    let h = width / 2;
    (
        (u.floor() as usize).min(width - 1),
        (v.floor() as usize).min(h - 1),
    )
}

/// Solid angle of any pixel in row `v` of a `width`-wide equirect grid.
pub fn equirect_pixel_solid_angle(v: usize, width: usize) -> f64 {
    let h = (width / 2) as f64;
    let top = FRAC_PI_2 - v as f64 / h * PI;
    let bottom = FRAC_PI_2 - (v + 1) as f64 / h * PI;
    2.0 * PI / width as f64 * (top.sin() - bottom.sin())
}

/// Camera orientation plus field of view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRecord", into = "PoseRecord")]
pub struct CameraPose {
    rotation: Matrix3<f64>,
    hfov_deg: f64,
    vfov_deg: f64,
}

/// JSON shape of a pose: row-major rotation plus both fields of view.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct PoseRecord {
    rotation: [f64; 9],
    hfov_deg: f64,
    vfov_deg: f64,
}

impl TryFrom<PoseRecord> for CameraPose {
    type Error = Error;

    fn try_from(r: PoseRecord) -> Result<Self> {
        CameraPose::new(Matrix3::from_row_slice(&r.rotation), r.hfov_deg, r.vfov_deg)
    }
}

impl From<CameraPose> for PoseRecord {
    fn from(p: CameraPose) -> Self {
        let m = p.rotation;
        let mut rotation = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                rotation[r * 3 + c] = m[(r, c)];
            }
        }
        PoseRecord {
            rotation,
            hfov_deg: p.hfov_deg,
            vfov_deg: p.vfov_deg,
        }
    }
}

fn check_fov(name: &str, deg: f64) -> Result<()> {
    if !(deg > 0.0 && deg < 180.0) {
        return Err(Error::arg(format!(
            "{name} must lie in (0, 180) degrees, got {deg}"
        )));
    }
    Ok(())
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, hfov_deg: f64, vfov_deg: f64) -> Result<Self> {
        check_fov("hfov", hfov_deg)?;
        check_fov("vfov", vfov_deg)?;
        let err = (rotation.transpose() * rotation - Matrix3::identity())
            .abs()
            .max();
        if !(err <= 1e-7) {
            return Err(Error::arg("camera rotation is not orthonormal"));
        }
        if !((rotation.determinant() - 1.0).abs() <= 1e-7) {
            return Err(Error::arg("camera rotation must have determinant +1"));
        }
        Ok(Self {
            rotation,
            hfov_deg,
            vfov_deg,
        })
    }

    pub fn identity(hfov_deg: f64, vfov_deg: f64) -> Result<Self> {
        Self::new(Matrix3::identity(), hfov_deg, vfov_deg)
    }

    /// Yaw about `+y` (positive turns `+z` toward `+x`) then pitch (positive looks up).
    pub fn from_yaw_pitch(
        yaw_deg: f64,
        pitch_deg: f64,
        hfov_deg: f64,
        vfov_deg: f64,
    ) -> Result<Self> {
        let yaw = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw_deg.to_radians());
        let pitch = Rotation3::from_axis_angle(&Vector3::x_axis(), -pitch_deg.to_radians());
        Self::new((yaw * pitch).into_inner(), hfov_deg, vfov_deg)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn hfov_deg(&self) -> f64 {
        self.hfov_deg
    }

    pub fn vfov_deg(&self) -> f64 {
        self.vfov_deg
    }

    /// Viewing direction (camera `+z`) in world coordinates.
    pub fn look_direction(&self) -> Direction {
        Direction::from_vector(&self.rotation.column(2).into_owned())
            .expect("rotation column is unit")
    }

    /// Rotates this pose by a world-space rotation applied on the left.
    pub fn rotated(&self, world: &Matrix3<f64>) -> Result<Self> {
        Self::new(world * self.rotation, self.hfov_deg, self.vfov_deg)
    }

    fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    /// Geodesic angle between the two orientations, in radians.
    pub fn angle_to(&self, other: &CameraPose) -> f64 {
        self.quaternion().angle_to(&other.quaternion())
    }
}

/// A perspective input frame.
pub type PerspectiveFrame = Image;

/// 2:1 longitude/latitude grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EquirectGrid(Image);

impl EquirectGrid {
    pub fn new(image: Image) -> Result<Self> {
        if image.width() < 2
            || !image.width().is_multiple_of(2)
            || image.height() != image.width() / 2
        {
            return Err(Error::arg(format!(
                "equirect grid must be W x W/2 with even W, got {}x{}",
                image.width(),
                image.height()
            )));
        }
        Ok(Self(image))
    }

    pub fn image(&self) -> &Image {
        &self.0
    }

    pub fn into_image(self) -> Image {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn sample(&self, d: Direction, out: &mut [f32]) {
        let (u, v) = direction_to_equirect_coords(d, self.width());
        self.0.sample_bilinear(u - 0.5, v - 0.5, true, out);
    }

    /// Area-weighted mean of channel `ch` over the sphere.
    pub fn spherical_mean(&self, ch: usize) -> f64 {
        let w = self.width();
        let mut acc = 0.0;
        for v in 0..self.height() {
            let da = equirect_pixel_solid_angle(v, w);
            for u in 0..w {
                acc += da * self.0.get(v, u, ch) as f64;
            }
        }
        acc / (4.0 * PI)
    }
}

/// Six square faces plus per-face observation masks.
#[derive(Clone, Debug, PartialEq)]
pub struct CubemapFrame {
    res: usize,
    channels: usize,
    faces: [Image; 6],
    masks: [Mask; 6],
}

impl CubemapFrame {
    /// All-zero faces, all-zero masks.
    pub fn empty(res: usize, channels: usize) -> Self {
        Self {
            res,
            channels,
            faces: std::array::from_fn(|_| Image::new(res, res, channels)),
            masks: std::array::from_fn(|_| Mask::zeros(res, res)),
        }
    }

    /// Constant faces with full masks.
    pub fn filled(res: usize, channels: usize, value: f32) -> Self {
        Self {
            res,
            channels,
            faces: std::array::from_fn(|_| Image::filled(res, res, channels, value)),
            masks: std::array::from_fn(|_| Mask::ones(res, res)),
        }
    }

    pub fn from_parts(faces: [Image; 6], masks: [Mask; 6]) -> Result<Self> {
        let res = faces[0].width();
        let channels = faces[0].channels();
        for (img, m) in faces.iter().zip(&masks) {
            if img.width() != res || img.height() != res || img.channels() != channels {
                return Err(Error::arg(
                    "cubemap faces must be square with identical shape",
                ));
            }
            if m.width() != res || m.height() != res {
                return Err(Error::arg("cubemap mask resolution mismatch"));
            }
        }
        Ok(Self {
            res,
            channels,
            faces,
            masks,
        })
    }

    /// Evaluates `field(direction, out)` at every face pixel center; masks are full.
    pub fn from_field<F>(res: usize, channels: usize, field: F) -> Self
    where
        F: Fn(Direction, &mut [f32]) + Sync + Send,
    {
        let faces = std::array::from_fn(|k| {
            let face = Face::ALL[k];
            Image::from_fn(res, res, channels, |r, c, px| {
                field(face_pixel_direction(face, res, r, c), px)
            })
        });
        Self {
            res,
            channels,
            faces,
            masks: std::array::from_fn(|_| Mask::ones(res, res)),
        }
    }

    #[inline]
    pub fn res(&self) -> usize {
        self.res
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn face(&self, f: Face) -> &Image {
        &self.faces[f.index()]
    }

    #[inline]
    pub fn face_mut(&mut self, f: Face) -> &mut Image {
        &mut self.faces[f.index()]
    }

    #[inline]
    pub fn mask(&self, f: Face) -> &Mask {
        &self.masks[f.index()]
    }

    #[inline]
    pub fn mask_mut(&mut self, f: Face) -> &mut Mask {
        &mut self.masks[f.index()]
    }

    pub fn set_mask_all(&mut self, on: bool) {
        for m in &mut self.masks {
            m.data_mut().fill(on as u8);
        }
    }

    /// Per-face mask means in canonical order.
    pub fn coverage(&self) -> [f64; 6] {
        std::array::from_fn(|k| self.masks[k].mean())
    }

    /// Bilinear sample of the face under `d`; face borders clamp.
    pub fn sample(&self, d: Direction, out: &mut [f32]) {
        let (face, x, y) = direction_to_face_coords(d);
        let r = self.res as f64;
        self.faces[face.index()].sample_bilinear(x * r - 0.5, y * r - 0.5, false, out);
    }

    /// Nearest-neighbour mask lookup under `d`.
    pub fn mask_at(&self, d: Direction) -> bool {
        let (face, x, y) = direction_to_face_coords(d);
        let r = self.res;
        let col = ((x * r as f64) as usize).min(r - 1);
        let row = ((y * r as f64) as usize).min(r - 1);
        self.masks[face.index()].get(row, col)
    }

    pub fn max_abs_diff(&self, other: &CubemapFrame) -> f32 {
        self.faces
            .iter()
            .zip(&other.faces)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f32::max)
    }
}

/// A sequence of cubemap frames sharing resolution and channel count.
#[derive(Clone, Debug, PartialEq)]
pub struct CubemapVideo {
    frames: Vec<CubemapFrame>,
}

impl CubemapVideo {
    pub fn new(frames: Vec<CubemapFrame>) -> Result<Self> {
        if let Some(first) = frames.first() {
            if frames
                .iter()
                .any(|f| f.res() != first.res() || f.channels() != first.channels())
            {
                return Err(Error::arg("cubemap video frames must share a shape"));
            }
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[CubemapFrame] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &CubemapFrame {
        &self.frames[t]
    }

    pub fn res(&self) -> usize {
        self.frames.first().map_or(0, |f| f.res())
    }

    pub fn channels(&self) -> usize {
        self.frames.first().map_or(0, |f| f.channels())
    }

    /// Face `face` over frames `[start, end)` as a standalone clip.
    pub fn face_clip(&self, face: Face, start: usize, end: usize) -> Result<FaceVideo> {
        if start >= end || end > self.frames.len() {
            return Err(Error::Internal(format!(
                "frame range [{start}, {end}) outside video of {} frames",
                self.frames.len()
            )));
        }
        let imgs: Vec<Image> = self.frames[start..end]
            .iter()
            .map(|f| f.face(face).clone())
            .collect();
        FaceVideo::from_frames(&imgs)
    }
}

/// Projects a perspective frame onto all six faces.
///
/// Face pixels whose direction falls inside the camera frustum (boundary
/// inclusive) receive a bilinear sample and mask 1; everything else is zero
/// with mask 0.
pub fn project_perspective_to_cubemap(
    frame: &PerspectiveFrame,
    pose: &CameraPose,
    res: usize,
) -> Result<CubemapFrame> {
    check_fov("hfov", pose.hfov_deg)?;
    check_fov("vfov", pose.vfov_deg)?;
    if res < 4 {
        return Err(Error::arg(format!(
            "face resolution must be >= 4, got {res}"
        )));
    }
    if frame.width() == 0 || frame.height() == 0 {
        return Err(Error::arg("perspective frame is empty"));
    }
    let channels = frame.channels();
    let tan_h = (pose.hfov_deg.to_radians() / 2.0).tan();
    let tan_v = (pose.vfov_deg.to_radians() / 2.0).tan();
    let rt = pose.rotation.transpose();
    let (fw, fh) = (frame.width() as f64, frame.height() as f64);
    // Relative slack so rays exactly on the frustum boundary count as inside.
    let slack = 1e-12;

    let inside = |cam: &Vector3<f64>| {
        cam.z > 0.0
            && (cam.x / cam.z).abs() <= tan_h * (1.0 + slack)
            && (cam.y / cam.z).abs() <= tan_v * (1.0 + slack)
    };

    let mut out = CubemapFrame::empty(res, channels);
    for face in Face::ALL {
        let rows = par::map_range(res, |row| {
            let mut pixels = vec![0.0f32; res * channels];
            let mut mask = vec![0u8; res];
            for col in 0..res {
                let cam = rt * face_pixel_direction(face, res, row, col).to_vector();
                if !inside(&cam) {
                    continue;
                }
                mask[col] = 1;
                let px = (cam.x / cam.z / tan_h + 1.0) * 0.5 * fw - 0.5;
                let py = (-cam.y / cam.z / tan_v + 1.0) * 0.5 * fh - 0.5;
                frame.sample_bilinear(
                    px,
                    py,
                    false,
                    &mut pixels[col * channels..(col + 1) * channels],
                );
            }
            (pixels, mask)
        });
        let (mut pixels, mut mask) = (
            Vec::with_capacity(res * res * channels),
            Vec::with_capacity(res * res),
        );
        for (p, m) in rows {
            pixels.extend(p);
            mask.extend(m);
        }
        out.faces[face.index()] = Image::from_vec(res, res, channels, pixels)?;
        out.masks[face.index()] = Mask::from_vec(res, res, mask)?;
    }
    Ok(out)
}

/// Renders a pinhole view of a cubemap.
pub fn render_perspective(
    cube: &CubemapFrame,
    pose: &CameraPose,
    width: usize,
    height: usize,
) -> Image {
    let tan_h = (pose.hfov_deg.to_radians() / 2.0).tan();
    let tan_v = (pose.vfov_deg.to_radians() / 2.0).tan();
    let rot = pose.rotation;
    Image::from_fn(width, height, cube.channels(), |r, c, px| {
        let a = (2.0 * (c as f64 + 0.5) / width as f64 - 1.0) * tan_h;
        let b = -(2.0 * (r as f64 + 0.5) / height as f64 - 1.0) * tan_v;
        let world = rot * Vector3::new(a, b, 1.0);
        let d = Direction::from_vector(&world).expect("ray is nonzero");
        cube.sample(d, px);
    })
}

/// Assembles an equirect grid by sampling, per pixel, the face under its direction.
pub fn cubemap_to_equirect(c: &CubemapFrame, width: usize) -> Result<EquirectGrid> {
    if width == 0 || !width.is_multiple_of(4) {
        return Err(Error::arg(format!(
            "equirect width must be a positive multiple of 4, got {width}"
        )));
    }
    let img = Image::from_fn(width, width / 2, c.channels(), |v, u, px| {
        let d = equirect_pixel_to_direction(u, v, width).expect("pixel in range");
        c.sample(d, px);
    });
    EquirectGrid::new(img)
}

/// Resamples an equirect grid onto six faces; masks are all ones.
pub fn equirect_to_cubemap(e: &EquirectGrid, res: usize) -> Result<CubemapFrame> {
    if res == 0 {
        return Err(Error::arg("face resolution must be positive"));
    }
    Ok(CubemapFrame::from_field(
        res,
        e.image().channels(),
        |d, px| e.sample(d, px),
    ))
}

/// Interpolates `frames` poses through `anchors`.
///
/// Each anchor-to-anchor segment receives an equal share of the frame
/// parameter; within a segment the rotation follows the great arc at
/// constant angular speed and the fields of view move linearly. The first
/// and last outputs are the first and last anchors.
pub fn sample_trajectory(anchors: &[CameraPose], frames: usize) -> Result<Vec<CameraPose>> {
    if anchors.len() < 2 {
        return Err(Error::arg("trajectory needs at least two anchors"));
    }
    if frames < 2 {
        return Err(Error::arg("trajectory needs at least two frames"));
    }
    let quats: Vec<UnitQuaternion<f64>> = anchors.iter().map(|a| a.quaternion()).collect();
    for (i, pair) in quats.windows(2).enumerate() {
        if pair[0].angle_to(&pair[1]) >= PI - 1e-9 {
            return Err(Error::arg(format!(
                "anchors {i} and {} are antipodal rotations; interpolation is ill-defined",
                i + 1
            )));
        }
    }
    let segments = anchors.len() - 1;
    let mut out = Vec::with_capacity(frames);
    for k in 0..frames {
        if k == 0 {
            out.push(anchors[0].clone());
            continue;
        }
        if k == frames - 1 {
            out.push(anchors[segments].clone());
            continue;
        }
        let s = k as f64 * segments as f64 / (frames - 1) as f64;
        let seg = (s.floor() as usize).min(segments - 1);
        let t = s - seg as f64;
        let (a, b) = (&anchors[seg], &anchors[seg + 1]);
        let q = quats[seg].slerp(&quats[seg + 1], t);
        let rot = q.to_rotation_matrix().into_inner();
        out.push(CameraPose::new(
            rot,
            a.hfov_deg + (b.hfov_deg - a.hfov_deg) * t,
            a.vfov_deg + (b.vfov_deg - a.vfov_deg) * t,
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir(x: f64, y: f64, z: f64) -> Direction {
        Direction::new(x, y, z).unwrap()
    }

    #[test]
    fn equirect_center_looks_forward() {
        for w in [8usize, 64, 512] {
            let d = equirect_pixel_to_direction(w / 2, w / 4, w).unwrap();
            let quant = 2.0 * PI / w as f64;
            assert!(d.angle_to(dir(0.0, 0.0, 1.0)) <= quant, "w={w}");
        }
    }

    #[test]
    fn equirect_first_column_longitude() {
        let d = equirect_pixel_to_direction(0, 128, 512).unwrap();
        let lon = d.x.atan2(d.z);
        assert!((lon - (-PI + PI / 512.0)).abs() < 1e-12);
        assert!(d.y.abs() < PI / 256.0);
    }

    #[test]
    fn equirect_rejects_out_of_range() {
        assert!(equirect_pixel_to_direction(8, 0, 8).is_err());
        assert!(equirect_pixel_to_direction(0, 4, 8).is_err());
    }

    #[test]
    fn equirect_pixel_roundtrip_all_pixels() {
        let w = 64;
        for v in 0..w / 2 {
            for u in 0..w {
                let d = equirect_pixel_to_direction(u, v, w).unwrap();
                assert_eq!(direction_to_equirect_pixel(d, w), (u, v));
            }
        }
    }

    #[test]
    fn face_centers() {
        assert_eq!(
            direction_to_face_coords(dir(0.0, 0.0, 1.0)),
            (Face::F, 0.5, 0.5)
        );
        assert_eq!(
            direction_to_face_coords(dir(1.0, 0.0, 0.0)),
            (Face::R, 0.5, 0.5)
        );
        assert_eq!(
            direction_to_face_coords(dir(0.0, 1.0, 0.0)),
            (Face::U, 0.5, 0.5)
        );
        assert_eq!(direction_to_face_coords(dir(0.0, 0.0, -1.0)).0, Face::B);
        assert_eq!(direction_to_face_coords(dir(-1.0, 0.0, 0.0)).0, Face::L);
        assert_eq!(direction_to_face_coords(dir(0.0, -1.0, 0.0)).0, Face::D);
    }

    #[test]
    fn off_center_front_point() {
        let d = dir(0.5, 0.5, 1.0);
        let (f, x, y) = direction_to_face_coords(d);
        assert_eq!(f, Face::F);
        // x follows +x, y follows -y: (0.5/1 + 1)/2 and (-0.5/1 + 1)/2.
        assert!((x - 0.75).abs() < 1e-12 && (y - 0.25).abs() < 1e-12);
        let back = face_coords_to_direction(f, x, y);
        assert!(back.angle_to(d) < 1e-12);
    }

    #[test]
    fn ties_follow_canonical_order() {
        // F/R edge: equal z and x components.
        assert_eq!(direction_to_face_coords(dir(1.0, 0.0, 1.0)).0, Face::F);
        assert_eq!(direction_to_face_coords(dir(1.0, 1.0, 0.0)).0, Face::R);
        assert_eq!(direction_to_face_coords(dir(0.0, 1.0, -1.0)).0, Face::B);
        assert_eq!(direction_to_face_coords(dir(-1.0, -1.0, 0.0)).0, Face::L);
        assert_eq!(direction_to_face_coords(dir(1.0, 1.0, 1.0)).0, Face::F);
    }

    #[test]
    fn neighbors_exclude_self_and_opposite() {
        assert_eq!(Face::F.neighbors(), [Face::R, Face::L, Face::U, Face::D]);
        assert_eq!(Face::U.neighbors(), [Face::F, Face::R, Face::B, Face::L]);
        for f in Face::ALL {
            assert_eq!(f.opposite().opposite(), f);
            assert!(!f.neighbors().contains(&f.opposite()));
        }
    }

    #[test]
    fn face_solid_angles_sum_to_sphere() {
        let r = 16;
        let mut total = 0.0;
        for row in 0..r {
            for col in 0..r {
                total += face_pixel_solid_angle(r, row, col);
            }
        }
        assert!((total * 6.0 - 4.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn equirect_area_elements_cover_sphere() {
        let w = 512;
        let total: f64 = (0..w / 2)
            .map(|v| equirect_pixel_solid_angle(v, w) * w as f64)
            .sum();
        assert!((total - 4.0 * PI).abs() / (4.0 * PI) < 1e-3);
    }

    #[test]
    fn pose_json_roundtrip_and_validation() {
        let p = CameraPose::from_yaw_pitch(30.0, -10.0, 90.0, 60.0).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let q: CameraPose = serde_json::from_str(&s).unwrap();
        assert!((p.rotation() - q.rotation()).abs().max() < 1e-15);
        let bad = r#"{"rotation":[1,0,0,0,1,0,0,0,1],"hfov_deg":180,"vfov_deg":45}"#;
        assert!(serde_json::from_str::<CameraPose>(bad).is_err());
        let reflect = r#"{"rotation":[-1,0,0,0,1,0,0,0,1],"hfov_deg":90,"vfov_deg":45}"#;
        assert!(serde_json::from_str::<CameraPose>(reflect).is_err());
    }

    #[test]
    fn yaw_ninety_looks_right() {
        let p = CameraPose::from_yaw_pitch(90.0, 0.0, 90.0, 90.0).unwrap();
        assert_eq!(direction_to_face_coords(p.look_direction()).0, Face::R);
        let up = CameraPose::from_yaw_pitch(0.0, 90.0, 90.0, 90.0).unwrap();
        assert_eq!(direction_to_face_coords(up.look_direction()).0, Face::U);
    }

    #[test]
    fn projection_rejects_tiny_faces() {
        let frame = Image::filled(8, 8, 1, 1.0);
        let pose = CameraPose::identity(90.0, 90.0).unwrap();
        assert!(project_perspective_to_cubemap(&frame, &pose, 3).is_err());
    }

    #[test]
    fn front_ninety_degree_frustum_fills_front_face() {
        let frame = Image::filled(32, 32, 3, 0.7);
        let pose = CameraPose::identity(90.0, 90.0).unwrap();
        let cube = project_perspective_to_cubemap(&frame, &pose, 32).unwrap();
        let cov = cube.coverage();
        assert_eq!(cov, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(cube
            .face(Face::F)
            .data()
            .iter()
            .all(|&v| (v - 0.7).abs() < 1e-6));
        assert!(cube.face(Face::B).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn yawed_frustum_moves_to_right_face() {
        let frame = Image::filled(16, 16, 1, 1.0);
        let pose = CameraPose::from_yaw_pitch(90.0, 0.0, 90.0, 90.0).unwrap();
        let cube = project_perspective_to_cubemap(&frame, &pose, 32).unwrap();
        assert_eq!(cube.coverage(), [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn half_height_frustum_coverage() {
        let frame = Image::filled(16, 8, 1, 1.0);
        let pose = CameraPose::identity(90.0, 45.0).unwrap();
        let res = 256;
        let cube = project_perspective_to_cubemap(&frame, &pose, res).unwrap();
        // Ray-casting oracle: count face rows whose center satisfies |b| <= tan(22.5°).
        let t = 22.5f64.to_radians().tan();
        let rows = (0..res)
            .filter(|&i| ((i as f64 + 0.5) / res as f64 * 2.0 - 1.0).abs() <= t)
            .count();
        let expected = rows as f64 / res as f64;
        assert_eq!(cube.coverage()[0], expected);
        assert!((expected - t).abs() < 2.0 / res as f64);
    }

    #[test]
    fn constant_roundtrips() {
        let c = CubemapFrame::filled(8, 2, 0.25);
        let e = cubemap_to_equirect(&c, 32).unwrap();
        assert!(e.image().data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
        let back = equirect_to_cubemap(&e, 8).unwrap();
        assert!(back.max_abs_diff(&c) < 1e-7);
        assert!(cubemap_to_equirect(&c, 30).is_err());
    }

    #[test]
    fn minimal_equirect_converts() {
        let e = EquirectGrid::new(Image::filled(8, 4, 1, 0.5)).unwrap();
        let c = equirect_to_cubemap(&e, 2).unwrap();
        assert_eq!(c.res(), 2);
        assert_eq!(c.coverage(), [1.0; 6]);
        assert!(EquirectGrid::new(Image::new(8, 3, 1)).is_err());
    }

    #[test]
    fn front_face_occupies_a_sixth_of_the_sphere() {
        let mut c = CubemapFrame::filled(16, 1, 0.0);
        c.face_mut(Face::F).data_mut().fill(1.0);
        let e = cubemap_to_equirect(&c, 512).unwrap();
        // Oracle: integrate the face indicator over the sphere with the equirect area element.
        let w = 512;
        let mut oracle = 0.0;
        for v in 0..w / 2 {
            for u in 0..w {
                let d = equirect_pixel_to_direction(u, v, w).unwrap();
                if direction_to_face_coords(d).0 == Face::F {
                    oracle += equirect_pixel_solid_angle(v, w);
                }
            }
        }
        oracle /= 4.0 * PI;
        assert!((e.spherical_mean(0) - oracle).abs() < 1e-9);
        assert!((oracle - 1.0 / 6.0).abs() < 2e-3);
    }

    #[test]
    fn trajectory_identical_anchors() {
        let p = CameraPose::from_yaw_pitch(10.0, 5.0, 70.0, 50.0).unwrap();
        let out = sample_trajectory(&[p.clone(), p.clone()], 5).unwrap();
        assert_eq!(out.len(), 5);
        for q in &out {
            assert!((q.rotation() - p.rotation()).abs().max() < 1e-12);
            assert_eq!(q.hfov_deg(), 70.0);
        }
    }

    #[test]
    fn trajectory_midpoint_is_half_yaw() {
        let a = CameraPose::identity(90.0, 60.0).unwrap();
        let b = CameraPose::from_yaw_pitch(90.0, 0.0, 110.0, 60.0).unwrap();
        let out = sample_trajectory(&[a.clone(), b.clone()], 3).unwrap();
        let mid = CameraPose::from_yaw_pitch(45.0, 0.0, 100.0, 60.0).unwrap();
        assert!((out[1].rotation() - mid.rotation()).abs().max() < 1e-9);
        assert!((out[1].hfov_deg() - 100.0).abs() < 1e-12);
        assert_eq!(out[0], a);
        assert_eq!(out[2], b);
    }

    #[test]
    fn trajectory_rejects_antipodal_and_short_inputs() {
        let a = CameraPose::identity(90.0, 60.0).unwrap();
        let b = CameraPose::from_yaw_pitch(180.0, 0.0, 90.0, 60.0).unwrap();
        assert!(sample_trajectory(&[a.clone(), b], 4).is_err());
        assert!(sample_trajectory(std::slice::from_ref(&a), 4).is_err());
        assert!(sample_trajectory(&[a.clone(), a], 1).is_err());
    }

    #[test]
    fn trajectory_constant_step_within_segments() {
        let anchors = [
            CameraPose::identity(90.0, 60.0).unwrap(),
            CameraPose::from_yaw_pitch(60.0, 20.0, 90.0, 60.0).unwrap(),
            CameraPose::from_yaw_pitch(100.0, -10.0, 90.0, 60.0).unwrap(),
        ];
        let n = 27;
        let poses = sample_trajectory(&anchors, n).unwrap();
        // Segment boundary sits at frame 13; measure geodesic steps on each side.
        for range in [0..13usize, 13..26] {
            let steps: Vec<f64> = range.map(|k| poses[k].angle_to(&poses[k + 1])).collect();
            let first = steps[0];
            assert!(first > 0.0);
            for s in &steps {
                assert!((s - first).abs() < 1e-9, "{s} vs {first}");
            }
        }
    }
}
