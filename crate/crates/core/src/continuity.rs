//! Cube-aware positions, topology-aligned padding and overlap blending.
//!
//! Faces are placed on a horizontal cross in a flattened plane:
//!
//! ```text
//!         U
//!     L   F   R   B
//!         D
//! ```
//!
//! with U at row offset 0, the middle band at `R` and D at `2R`; L, F, R, B
//! sit at column offsets `0, R, 2R, 3R`. Edge adjacency on the cube is
//! derived from the face bases in [`crate::geometry`], so every one of the 24
//! face edges knows its partner edge, whether the along-edge index runs the
//! same way on both sides, and the image transform that carries the
//! neighbour's pixels into this face's frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Axis, CubemapFrame, Face};
use crate::raster::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Top,
    Bottom,
    Left,
    Right,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::Top, Edge::Bottom, Edge::Left, Edge::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Unit step in `(row, col)` that moves away from the face across this edge.
    fn outward(self) -> (i32, i32) {
        match self {
            Edge::Top => (-1, 0),
            Edge::Bottom => (1, 0),
            Edge::Left => (0, -1),
            Edge::Right => (0, 1),
        }
    }

    /// Unit step in `(row, col)` of increasing along-edge index.
    fn along(self) -> (i32, i32) {
        match self {
            Edge::Top | Edge::Bottom => (0, 1),
            Edge::Left | Edge::Right => (1, 0),
        }
    }
}

/// Pixel of a face at `depth` rows/columns in from `edge`, `along` the edge.
#[inline]
pub fn edge_pixel(edge: Edge, res: usize, depth: usize, along: usize) -> (usize, usize) {
    match edge {
        Edge::Top => (depth, along),
        Edge::Bottom => (res - 1 - depth, along),
        Edge::Left => (along, depth),
        Edge::Right => (along, res - 1 - depth),
    }
}

/// Element of the square's symmetry group acting on `(row, col)` grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    Identity,
    /// Clockwise quarter turn.
    Rotate90,
    Rotate180,
    /// Counter-clockwise quarter turn.
    Rotate270,
    FlipHorizontal,
    FlipVertical,
    Transpose,
    AntiTranspose,
}

impl Transform {
    pub const ALL: [Transform; 8] = [
        Transform::Identity,
        Transform::Rotate90,
        Transform::Rotate180,
        Transform::Rotate270,
        Transform::FlipHorizontal,
        Transform::FlipVertical,
        Transform::Transpose,
        Transform::AntiTranspose,
    ];

    /// Linear part acting on `(row, col)` column vectors.
    pub fn matrix(self) -> [[i32; 2]; 2] {
        match self {
            Transform::Identity => [[1, 0], [0, 1]],
            Transform::Rotate90 => [[0, 1], [-1, 0]],
            Transform::Rotate180 => [[-1, 0], [0, -1]],
            Transform::Rotate270 => [[0, -1], [1, 0]],
            Transform::FlipHorizontal => [[1, 0], [0, -1]],
            Transform::FlipVertical => [[-1, 0], [0, 1]],
            Transform::Transpose => [[0, 1], [1, 0]],
            Transform::AntiTranspose => [[0, -1], [-1, 0]],
        }
    }

    pub fn from_matrix(m: [[i32; 2]; 2]) -> Option<Transform> {
        Transform::ALL.into_iter().find(|t| t.matrix() == m)
    }

    pub fn compose(self, then: Transform) -> Transform {
        let a = self.matrix();
        let b = then.matrix();
        let mut m = [[0; 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = b[i][0] * a[0][j] + b[i][1] * a[1][j];
            }
        }
        Transform::from_matrix(m).expect("group is closed")
    }

    pub fn inverse(self) -> Transform {
        let m = self.matrix();
        Transform::from_matrix([[m[0][0], m[1][0]], [m[0][1], m[1][1]]]).expect("orthogonal")
    }

    /// Applies the transform to a whole grid; quarter turns swap its dimensions.
    pub fn apply(self, img: &Image) -> Image {
        let m = self.matrix();
        let (h, w) = (img.height() as i64, img.width() as i64);
        let swaps = m[0][0] == 0;
        let (nh, nw) = if swaps { (w, h) } else { (h, w) };
        // Shift so the image of [0,h)x[0,w) starts at the origin.
        let dims = [h - 1, w - 1];
        let off_r: i64 = (0..2).map(|j| (-m[0][j]).max(0) as i64 * dims[j]).sum();
        let off_c: i64 = (0..2).map(|j| (-m[1][j]).max(0) as i64 * dims[j]).sum();
        let mut out = Image::new(nw as usize, nh as usize, img.channels());
        for r in 0..h {
            for c in 0..w {
                let nr = m[0][0] as i64 * r + m[0][1] as i64 * c + off_r;
                let nc = m[1][0] as i64 * r + m[1][1] as i64 * c + off_c;
                out.pixel_mut(nr as usize, nc as usize)
                    .copy_from_slice(img.pixel(r as usize, c as usize));
            }
        }
        out
    }
}

/// Where an edge of a face continues on the cube.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeLink {
    pub neighbor: Face,
    pub neighbor_edge: Edge,
    /// Along-edge indices run in opposite directions on the two faces.
    pub reversed: bool,
    /// Carries the neighbour's grid into this face's (extended) frame.
    pub transform: Transform,
}

impl EdgeLink {
    #[inline]
    pub fn map_along(&self, along: usize, res: usize) -> usize {
        if self.reversed {
            res - 1 - along
        } else {
            along
        }
    }
}

fn neg(a: Axis) -> Axis {
    [-a[0], -a[1], -a[2]]
}

fn derive_link(face: Face, edge: Edge) -> EdgeLink {
    let (fw, xa, ya) = face.basis();
    let (out_axis, tangent) = match edge {
        Edge::Top => (neg(ya), xa),
        Edge::Bottom => (ya, xa),
        Edge::Left => (neg(xa), ya),
        Edge::Right => (xa, ya),
    };
    let neighbor = Face::from_forward(out_axis);
    let (_, gx, gy) = neighbor.basis();
    // Our forward axis points from the neighbour toward the shared edge.
    let neighbor_edge = if fw == neg(gy) {
        Edge::Top
    } else if fw == gy {
        Edge::Bottom
    } else if fw == neg(gx) {
        Edge::Left
    } else {
        debug_assert_eq!(fw, gx);
        Edge::Right
    };
    let g_tangent = match neighbor_edge {
        Edge::Top | Edge::Bottom => gx,
        Edge::Left | Edge::Right => gy,
    };
    let reversed = tangent == neg(g_tangent);
    debug_assert!(reversed || tangent == g_tangent);

    // Linear map sending the neighbour's (along, inward) steps to our
    // (along, outward) steps.
    let sign = if reversed { -1 } else { 1 };
    let (af, of) = (edge.along(), edge.outward());
    let ag = neighbor_edge.along();
    let ng = {
        let o = neighbor_edge.outward();
        (-o.0, -o.1)
    };
    let mut m = [[0; 2]; 2];
    let a_f = [af.0 * sign, af.1 * sign];
    let o_f = [of.0, of.1];
    let a_g = [ag.0, ag.1];
    let n_g = [ng.0, ng.1];
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = a_f[i] * a_g[j] + o_f[i] * n_g[j];
        }
    }
    EdgeLink {
        neighbor,
        neighbor_edge,
        reversed,
        transform: Transform::from_matrix(m).expect("edge frames are orthonormal"),
    }
}

/// Flattened-cross offsets plus the cube's edge adjacency, for faces of size `res`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CubeLayout {
    res: usize,
    offsets: [(usize, usize); 6],
    adjacency: [[EdgeLink; 4]; 6],
}

impl CubeLayout {
    pub fn new(res: usize) -> Self {
        let offsets = std::array::from_fn(|k| match Face::ALL[k] {
            Face::U => (0, res),
            Face::L => (res, 0),
            Face::F => (res, res),
            Face::R => (res, 2 * res),
            Face::B => (res, 3 * res),
            Face::D => (2 * res, res),
        });
        let adjacency = std::array::from_fn(|k| {
            std::array::from_fn(|e| derive_link(Face::ALL[k], Edge::ALL[e]))
        });
        Self {
            res,
            offsets,
            adjacency,
        }
    }

    /// Layout on the token grid: faces of `res / patch` tokens per side.
    pub fn for_tokens(res: usize, patch: usize) -> Result<Self> {
        if patch == 0 || !res.is_multiple_of(patch) {
            return Err(Error::arg(format!(
                "patch size {patch} must divide face resolution {res}"
            )));
        }
        Ok(Self::new(res / patch))
    }

    pub fn res(&self) -> usize {
        self.res
    }

    /// `(row_offset, col_offset)` of a face in the flattened plane.
    pub fn offset(&self, f: Face) -> (usize, usize) {
        self.offsets[f.index()]
    }

    pub fn link(&self, f: Face, e: Edge) -> EdgeLink {
        self.adjacency[f.index()][e.index()]
    }

    /// Each of the 12 cube edges once, as `(face, edge)` on its canonical side.
    pub fn unique_edges(&self) -> Vec<(Face, Edge)> {
        let mut out = Vec::with_capacity(12);
        for f in Face::ALL {
            for e in Edge::ALL {
                let l = self.link(f, e);
                if (f, e) < (l.neighbor, l.neighbor_edge) {
                    out.push((f, e));
                }
            }
        }
        out
    }

    /// Corner pixel of `face` at the cube vertex with the given coordinate signs.
    fn corner_pixel(&self, face: Face, vertex: [i32; 3]) -> Option<(usize, usize)> {
        let (fw, xa, ya) = face.basis();
        let dot = |a: Axis| a[0] * vertex[0] + a[1] * vertex[1] + a[2] * vertex[2];
        if dot(fw) != 1 {
            return None;
        }
        let col = if dot(xa) > 0 { self.res - 1 } else { 0 };
        let row = if dot(ya) > 0 { self.res - 1 } else { 0 };
        Some((row, col))
    }

    /// Walks around a cube vertex by crossing three shared edges, starting
    /// from `start`'s corner pixel. Returns the visited `(face, row, col)`
    /// sequence, whose last entry must equal the first for a consistent table.
    pub fn corner_cycle(&self, vertex: [i32; 3], start: Face) -> Result<Vec<(Face, usize, usize)>> {
        let r = self.res;
        let (mut row, mut col) = self
            .corner_pixel(start, vertex)
            .ok_or_else(|| Error::arg(format!("face {start} does not touch vertex {vertex:?}")))?;
        let mut face = start;
        let mut arrived: Option<Edge> = None;
        let mut path = vec![(face, row, col)];
        for _ in 0..3 {
            let mut edges_here = Edge::ALL.into_iter().filter(|&e| match e {
                Edge::Top => row == 0,
                Edge::Bottom => row == r - 1,
                Edge::Left => col == 0,
                Edge::Right => col == r - 1,
            });
            // Leave along the incident edge we did not arrive on.
            let leave = edges_here
                .find(|&e| Some(e) != arrived)
                .ok_or_else(|| Error::Internal("corner pixel has no exit edge".into()))?;
            let along = match leave {
                Edge::Top | Edge::Bottom => col,
                Edge::Left | Edge::Right => row,
            };
            let link = self.link(face, leave);
            let (nr, nc) = edge_pixel(link.neighbor_edge, r, 0, link.map_along(along, r));
            face = link.neighbor;
            row = nr;
            col = nc;
            arrived = Some(link.neighbor_edge);
            path.push((face, row, col));
        }
        Ok(path)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut offsets = serde_json::Map::new();
        for f in Face::ALL {
            let (r, c) = self.offset(f);
            offsets.insert(f.letter().into(), serde_json::json!([r, c]));
        }
        let mut adjacency = Vec::with_capacity(24);
        for f in Face::ALL {
            for e in Edge::ALL {
                let l = self.link(f, e);
                adjacency.push(serde_json::json!({
                    "face": f,
                    "edge": e,
                    "neighbor": l.neighbor,
                    "neighbor_edge": l.neighbor_edge,
                    "reversed": l.reversed,
                    "transform": l.transform,
                }));
            }
        }
        serde_json::json!({ "res": self.res, "offsets": offsets, "adjacency": adjacency })
    }
}

/// All 8 cube vertices as coordinate sign triples.
pub fn cube_vertices() -> [[i32; 3]; 8] {
    std::array::from_fn(|k| {
        let s = |bit: usize| if k & (1 << bit) != 0 { 1 } else { -1 };
        [s(0), s(1), s(2)]
    })
}

/// Flattened-plane `(row, col)` of every pixel of `f`, row-major.
pub fn face_position_grid(layout: &CubeLayout, f: Face) -> Vec<(i64, i64)> {
    let (ro, co) = layout.offset(f);
    let r = layout.res();
    let mut out = Vec::with_capacity(r * r);
    for i in 0..r {
        for j in 0..r {
            out.push(((ro + i) as i64, (co + j) as i64));
        }
    }
    out
}

/// A face extended on every side by `pad` rows/columns from its neighbours.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedFace {
    face: Face,
    res: usize,
    pad: usize,
    grid: Image,
    positions: Vec<(i64, i64)>,
}

impl PaddedFace {
    pub fn from_grid(
        face: Face,
        res: usize,
        pad: usize,
        grid: Image,
        layout: &CubeLayout,
    ) -> Result<Self> {
        let n = res + 2 * pad;
        if grid.width() != n || grid.height() != n {
            return Err(Error::arg(format!("padded grid must be {n}x{n}")));
        }
        Ok(Self {
            face,
            res,
            pad,
            grid,
            positions: padded_positions(layout, face, pad),
        })
    }

    pub fn face(&self) -> Face {
        self.face
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    /// Whole `(R + 2p)²` grid.
    pub fn grid(&self) -> &Image {
        &self.grid
    }

    pub fn grid_mut(&mut self) -> &mut Image {
        &mut self.grid
    }

    pub fn into_grid(self) -> Image {
        self.grid
    }

    /// Flattened-plane coordinates for every padded pixel, row-major.
    pub fn positions(&self) -> &[(i64, i64)] {
        &self.positions
    }

    pub fn core(&self) -> Image {
        let (p, r) = (self.pad, self.res);
        Image::from_fn(r, r, self.grid.channels(), |i, j, px| {
            px.copy_from_slice(self.grid.pixel(p + i, p + j))
        })
    }

    /// Strip beyond `edge` in edge frame: row = depth (0 touches the face), col = along-edge index.
    pub fn strip(&self, edge: Edge) -> Image {
        let (p, r) = (self.pad, self.res);
        Image::from_fn(r, p, self.grid.channels(), |k, m, px| {
            let (pr, pc) = strip_slot(edge, r, p, k, m);
            px.copy_from_slice(self.grid.pixel(pr, pc))
        })
    }
}

/// Position in the padded grid of strip pixel `(depth, along)` beyond `edge`.
#[inline]
fn strip_slot(edge: Edge, res: usize, pad: usize, depth: usize, along: usize) -> (usize, usize) {
    match edge {
        Edge::Top => (pad - 1 - depth, pad + along),
        Edge::Bottom => (pad + res + depth, pad + along),
        Edge::Left => (pad + along, pad - 1 - depth),
        Edge::Right => (pad + along, pad + res + depth),
    }
}

fn padded_positions(layout: &CubeLayout, f: Face, pad: usize) -> Vec<(i64, i64)> {
    let (ro, co) = layout.offset(f);
    let n = layout.res() + 2 * pad;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push((
                ro as i64 + i as i64 - pad as i64,
                co as i64 + j as i64 - pad as i64,
            ));
        }
    }
    out
}

fn check_pad(res: usize, pad: usize) -> Result<()> {
    if pad == 0 || 2 * pad > res {
        return Err(Error::arg(format!(
            "pad width {pad} must satisfy 1 <= p <= R/2 (R = {res})"
        )));
    }
    Ok(())
}

/// Pads face `f` with the adjacent bands of its four neighbours.
///
/// Strip pixels are exact copies (no resampling). Each `p×p` corner block is
/// filled from whichever adjacent strip is nearer, averaging the two on the
/// diagonal.
pub fn pad_face(
    cube: &CubemapFrame,
    f: Face,
    pad: usize,
    layout: &CubeLayout,
) -> Result<PaddedFace> {
    let r = cube.res();
    if layout.res() != r {
        return Err(Error::arg("layout resolution does not match cubemap"));
    }
    check_pad(r, pad)?;
    let n = r + 2 * pad;
    let ch = cube.channels();
    let mut grid = Image::new(n, n, ch);

    let src = cube.face(f);
    for i in 0..r {
        for j in 0..r {
            grid.pixel_mut(pad + i, pad + j)
                .copy_from_slice(src.pixel(i, j));
        }
    }
    for e in Edge::ALL {
        let link = layout.link(f, e);
        let nb = cube.face(link.neighbor);
        for k in 0..pad {
            for m in 0..r {
                let (sr, sc) = edge_pixel(link.neighbor_edge, r, k, link.map_along(m, r));
                let (pr, pc) = strip_slot(e, r, pad, k, m);
                grid.pixel_mut(pr, pc).copy_from_slice(nb.pixel(sr, sc));
            }
        }
    }
    fill_corners(&mut grid, r, pad);
    PaddedFace::from_grid(f, r, pad, grid, layout)
}

fn fill_corners(grid: &mut Image, res: usize, pad: usize) {
    let ch = grid.channels();
    let mut buf = vec![0.0f32; ch];
    for (vert, horiz) in [
        (Edge::Top, Edge::Left),
        (Edge::Top, Edge::Right),
        (Edge::Bottom, Edge::Left),
        (Edge::Bottom, Edge::Right),
    ] {
        // Along index of the corner end on each strip.
        let along_v = if horiz == Edge::Left { 0 } else { res - 1 };
        let along_h = if vert == Edge::Top { 0 } else { res - 1 };
        for dv in 0..pad {
            for dh in 0..pad {
                let (pr, _) = strip_slot(vert, res, pad, dv, 0);
                let (_, pc) = strip_slot(horiz, res, pad, dh, 0);
                let a = strip_slot(vert, res, pad, dv, along_v);
                let b = strip_slot(horiz, res, pad, dh, along_h);
                if dh < dv {
                    buf.copy_from_slice(grid.pixel(b.0, b.1));
                } else if dv < dh {
                    buf.copy_from_slice(grid.pixel(a.0, a.1));
                } else {
                    for c in 0..ch {
                        buf[c] = 0.5 * (grid.get(a.0, a.1, c) + grid.get(b.0, b.1, c));
                    }
                }
                grid.pixel_mut(pr, pc).copy_from_slice(&buf);
            }
        }
    }
}

/// Blend weight at `depth` rows in from the shared edge.
#[inline]
pub fn blend_weight(depth: usize, pad: usize) -> f32 {
    1.0 - depth as f32 / pad as f32
}

/// Writes a generated padded face back into a cubemap.
///
/// The core replaces the face outright. Each strip is carried back onto its
/// neighbour's band and mixed as `w·strip + (1 − w)·existing`, with `w`
/// falling linearly from 1 at the shared edge to `1/p` at depth `p − 1`.
pub fn blend_overlaps(
    generated: &PaddedFace,
    cube: &CubemapFrame,
    layout: &CubeLayout,
) -> Result<CubemapFrame> {
    let r = cube.res();
    let p = generated.pad();
    if generated.res() != r || layout.res() != r {
        return Err(Error::arg("padded face resolution does not match cubemap"));
    }
    check_pad(r, p)?;
    let f = generated.face();
    let mut out = cube.clone();
    *out.face_mut(f) = generated.core();
    let grid = generated.grid();
    for e in Edge::ALL {
        let link = layout.link(f, e);
        let nb = out.face_mut(link.neighbor);
        for k in 0..p {
            let w = blend_weight(k, p);
            for m in 0..r {
                let (pr, pc) = strip_slot(e, r, p, k, m);
                let (nr, nc) = edge_pixel(link.neighbor_edge, r, k, link.map_along(m, r));
                let strip_px = grid.pixel(pr, pc);
                for (dst, &s) in nb.pixel_mut(nr, nc).iter_mut().zip(strip_px) {
                    *dst = w * s + (1.0 - w) * *dst;
                }
            }
        }
    }
    Ok(out)
}

/// Mean absolute difference across all 12 cube edges between the two pixels
/// that touch each other across the edge.
pub fn seam_metric(cube: &CubemapFrame, layout: &CubeLayout) -> f64 {
    let r = cube.res();
    let ch = cube.channels();
    let edges = layout.unique_edges();
    let mut acc = 0.0f64;
    for &(f, e) in &edges {
        let link = layout.link(f, e);
        let (a, b) = (cube.face(f), cube.face(link.neighbor));
        for m in 0..r {
            let (ar, ac) = edge_pixel(e, r, 0, m);
            let (br, bc) = edge_pixel(link.neighbor_edge, r, 0, link.map_along(m, r));
            for c in 0..ch {
                acc += (a.get(ar, ac, c) - b.get(br, bc, c)).abs() as f64;
            }
        }
    }
    acc / (edges.len() * r * ch) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Direction;
    use proptest::prelude::*;

    fn field_cube(res: usize) -> CubemapFrame {
        CubemapFrame::from_field(res, 3, |d: Direction, px| {
            px[0] = d.x as f32;
            px[1] = d.y as f32;
            px[2] = d.z as f32;
        })
    }

    #[test]
    fn flattened_offsets() {
        let r = 8;
        let l = CubeLayout::new(r);
        assert_eq!(face_position_grid(&l, Face::U)[0], (0, r as i64));
        assert_eq!(face_position_grid(&l, Face::F)[0], (r as i64, r as i64));
        assert_eq!(face_position_grid(&l, Face::D)[0], (2 * r as i64, r as i64));
        assert_eq!(l.offset(Face::L), (r, 0));
        assert_eq!(l.offset(Face::B), (r, 3 * r));
    }

    #[test]
    fn adjacency_is_symmetric_and_complete() {
        let l = CubeLayout::new(4);
        for f in Face::ALL {
            let mut seen = vec![];
            for e in Edge::ALL {
                let a = l.link(f, e);
                let back = l.link(a.neighbor, a.neighbor_edge);
                assert_eq!((back.neighbor, back.neighbor_edge), (f, e));
                assert_eq!(back.reversed, a.reversed);
                assert_eq!(back.transform, a.transform.inverse());
                seen.push(a.neighbor);
            }
            seen.sort();
            let mut expect = f.neighbors().to_vec();
            expect.sort();
            assert_eq!(seen, expect);
        }
        assert_eq!(l.unique_edges().len(), 12);
    }

    #[test]
    fn known_links() {
        let l = CubeLayout::new(4);
        let top = l.link(Face::F, Edge::Top);
        assert_eq!(
            (top.neighbor, top.neighbor_edge, top.reversed),
            (Face::U, Edge::Bottom, false)
        );
        assert_eq!(top.transform, Transform::Identity);
        let right = l.link(Face::F, Edge::Right);
        assert_eq!((right.neighbor, right.neighbor_edge), (Face::R, Edge::Left));
        assert_eq!(right.transform, Transform::Identity);
        let ur = l.link(Face::U, Edge::Right);
        assert_eq!(ur.neighbor, Face::R);
        assert_eq!(ur.neighbor_edge, Edge::Top);
    }

    #[test]
    fn declared_transform_reproduces_strip_placement() {
        // Carry the neighbour's p-band through the declared transform and
        // compare with what padding placed beyond the edge.
        let r = 6;
        let p = 2;
        let l = CubeLayout::new(r);
        let cube = CubemapFrame::from_field(r, 1, |d, px| {
            px[0] = (7.0 * d.x + 3.0 * d.y * d.y + 5.0 * d.z + 11.0 * d.x * d.y) as f32
        });
        for f in Face::ALL {
            let padded = pad_face(&cube, f, p, &l).unwrap();
            for e in Edge::ALL {
                let link = l.link(f, e);
                let nb = cube.face(link.neighbor);
                let band = match link.neighbor_edge {
                    Edge::Top => {
                        Image::from_fn(r, p, 1, |i, j, px| px.copy_from_slice(nb.pixel(i, j)))
                    }
                    Edge::Bottom => Image::from_fn(r, p, 1, |i, j, px| {
                        px.copy_from_slice(nb.pixel(r - p + i, j))
                    }),
                    Edge::Left => {
                        Image::from_fn(p, r, 1, |i, j, px| px.copy_from_slice(nb.pixel(i, j)))
                    }
                    Edge::Right => Image::from_fn(p, r, 1, |i, j, px| {
                        px.copy_from_slice(nb.pixel(i, r - p + j))
                    }),
                };
                let moved = link.transform.apply(&band);
                let g = padded.grid();
                let region = match e {
                    Edge::Top => {
                        Image::from_fn(r, p, 1, |i, j, px| px.copy_from_slice(g.pixel(i, p + j)))
                    }
                    Edge::Bottom => Image::from_fn(r, p, 1, |i, j, px| {
                        px.copy_from_slice(g.pixel(p + r + i, p + j))
                    }),
                    Edge::Left => {
                        Image::from_fn(p, r, 1, |i, j, px| px.copy_from_slice(g.pixel(p + i, j)))
                    }
                    Edge::Right => Image::from_fn(p, r, 1, |i, j, px| {
                        px.copy_from_slice(g.pixel(p + i, p + r + j))
                    }),
                };
                assert_eq!(moved, region, "{f} {e:?}");
            }
        }
    }

    #[test]
    fn corner_cycles_close() {
        let l = CubeLayout::new(5);
        for v in cube_vertices() {
            for f in Face::ALL {
                if let Ok(path) = l.corner_cycle(v, f) {
                    assert_eq!(path.len(), 4);
                    assert_eq!(path[0], path[3], "vertex {v:?} from {f}");
                    let faces: Vec<Face> = path[..3].iter().map(|p| p.0).collect();
                    assert_eq!(
                        faces
                            .iter()
                            .collect::<std::collections::BTreeSet<_>>()
                            .len(),
                        3
                    );
                }
            }
        }
    }

    #[test]
    fn pad_constant_cube() {
        let cube = CubemapFrame::filled(8, 2, 0.75);
        let l = CubeLayout::new(8);
        let pf = pad_face(&cube, Face::U, 3, &l).unwrap();
        assert!(pf.grid().data().iter().all(|&v| v == 0.75));
        assert!(pad_face(&cube, Face::U, 0, &l).is_err());
        assert!(pad_face(&cube, Face::U, 5, &l).is_err());
    }

    #[test]
    fn padding_follows_smooth_field() {
        let r = 64;
        let p = 4;
        let l = CubeLayout::new(r);
        let cube = field_cube(r);
        for f in Face::ALL {
            let pf = pad_face(&cube, f, p, &l).unwrap();
            for e in Edge::ALL {
                let strip = pf.strip(e);
                for k in 0..p {
                    for m in 0..r {
                        // Sphere direction of this strip pixel when the face plane is extended.
                        let (pr, pc) = strip_slot(e, r, p, k, m);
                        let x = (pc as f64 - p as f64 + 0.5) / r as f64;
                        let y = (pr as f64 - p as f64 + 0.5) / r as f64;
                        let d = crate::geometry::face_coords_to_direction(f, x, y);
                        let expect = [d.x, d.y, d.z];
                        for c in 0..3 {
                            let got = strip.get(k, m, c) as f64;
                            assert!((got - expect[c]).abs() <= 0.08, "{f} {e:?} k={k} m={m}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn strips_invert_to_neighbor_bands() {
        let r = 8;
        let p = 3;
        let l = CubeLayout::new(r);
        let cube = CubemapFrame::from_field(r, 2, |d, px| {
            px[0] = (d.x * 3.0 + d.y * d.z) as f32;
            px[1] = (d.z - d.x * d.y) as f32;
        });
        for f in Face::ALL {
            let pf = pad_face(&cube, f, p, &l).unwrap();
            for e in Edge::ALL {
                let link = l.link(f, e);
                let strip = pf.strip(e);
                for k in 0..p {
                    for m in 0..r {
                        let (nr, nc) = edge_pixel(link.neighbor_edge, r, k, link.map_along(m, r));
                        assert_eq!(strip.pixel(k, m), cube.face(link.neighbor).pixel(nr, nc));
                    }
                }
            }
        }
    }

    #[test]
    fn padded_positions_are_continuous() {
        let l = CubeLayout::new(8);
        let pf = pad_face(&CubemapFrame::filled(8, 1, 0.0), Face::R, 2, &l).unwrap();
        let n = 12;
        let pos = pf.positions();
        for i in 0..n {
            for j in 0..n - 1 {
                let (a, b) = (pos[i * n + j], pos[i * n + j + 1]);
                assert_eq!((b.0 - a.0, b.1 - a.1), (0, 1));
            }
        }
        assert_eq!(pos[2 * n + 2], (8, 16));
    }

    #[test]
    fn blend_identity_when_strips_match() {
        let r = 8;
        let l = CubeLayout::new(r);
        let cube = field_cube(r);
        let pf = pad_face(&cube, Face::F, 3, &l).unwrap();
        let out = blend_overlaps(&pf, &cube, &l).unwrap();
        assert!(out.max_abs_diff(&cube) < 1e-7);
    }

    #[test]
    fn blend_single_row_overwrites() {
        let r = 8;
        let l = CubeLayout::new(r);
        let cube = CubemapFrame::filled(r, 1, 0.0);
        let mut pf = pad_face(&cube, Face::F, 1, &l).unwrap();
        pf.grid_mut().data_mut().fill(1.0);
        let out = blend_overlaps(&pf, &cube, &l).unwrap();
        let u = out.face(Face::U);
        for m in 0..r {
            assert_eq!(u.get(r - 1, m, 0), 1.0);
            assert_eq!(u.get(r - 2, m, 0), 0.0);
        }
        assert!(out.face(Face::F).data().iter().all(|&v| v == 1.0));
        assert!(out.face(Face::B).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn blend_ramp_weights() {
        let r = 8;
        let p = 4;
        let l = CubeLayout::new(r);
        let cube = CubemapFrame::filled(r, 1, 0.0);
        let mut pf = pad_face(&cube, Face::F, p, &l).unwrap();
        pf.grid_mut().data_mut().fill(1.0);
        let out = blend_overlaps(&pf, &cube, &l).unwrap();
        let rf = out.face(Face::R);
        for k in 0..p {
            assert!((rf.get(3, k, 0) - blend_weight(k, p)).abs() < 1e-7);
        }
        assert_eq!(rf.get(3, p, 0), 0.0);
    }

    #[test]
    fn seam_metric_examples() {
        let r = 64;
        let l = CubeLayout::new(r);
        assert_eq!(seam_metric(&CubemapFrame::filled(r, 2, 0.3), &l), 0.0);
        let smooth = field_cube(r);
        let base = seam_metric(&smooth, &l);
        assert!(base <= 0.05, "{base}");
        let mut shifted = smooth.clone();
        shifted
            .face_mut(Face::F)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v += 1.0);
        let m = seam_metric(&shifted, &l);
        assert!((m - 1.0 / 3.0).abs() <= base + 1e-6, "{m}");
    }

    #[test]
    fn blending_reduces_injected_seam() {
        let r = 64;
        let p = 4;
        let l = CubeLayout::new(r);
        let cube = field_cube(r);
        let mut pf = pad_face(&cube, Face::F, p, &l).unwrap();
        pf.grid_mut().data_mut().iter_mut().for_each(|v| *v += 0.5);
        let mut before = cube.clone();
        *before.face_mut(Face::F) = pf.core();
        let after = blend_overlaps(&pf, &cube, &l).unwrap();
        assert!(seam_metric(&after, &l) < seam_metric(&before, &l));
    }

    #[test]
    fn token_layout_requires_divisible_patch() {
        assert_eq!(CubeLayout::for_tokens(64, 8).unwrap().res(), 8);
        assert!(CubeLayout::for_tokens(64, 7).is_err());
    }

    #[test]
    fn layout_json_lists_all_edges() {
        let j = CubeLayout::new(4).to_json();
        assert_eq!(j["adjacency"].as_array().unwrap().len(), 24);
        assert_eq!(j["offsets"]["D"], serde_json::json!([8, 4]));
        assert_eq!(j["adjacency"][0]["transform"], "identity");
    }

    proptest! {
        #[test]
        fn transform_roundtrip(h in 1usize..6, w in 1usize..6, seed in 0u64..1000, t in 0usize..8) {
            let img = Image::from_fn(w, h, 2, |r, c, px| {
                px[0] = (r * 31 + c * 7) as f32 + seed as f32;
                px[1] = (r as f32) - (c as f32) * 0.5;
            });
            let tr = Transform::ALL[t];
            prop_assert_eq!(tr.inverse().apply(&tr.apply(&img)), img.clone());
            let u = Transform::ALL[(t + 3) % 8];
            prop_assert_eq!(u.apply(&tr.apply(&img)), tr.compose(u).apply(&img));
        }
    }
}
