//! Temporal windows, face coverage and the coverage-guided generation order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CubemapFrame, Face};
use crate::par;

/// Equal-length, disjoint temporal windows covering `[0, frames)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPartition {
    frames: usize,
    window_len: usize,
}

impl WindowPartition {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn count(&self) -> usize {
        self.frames / self.window_len
    }

    /// `(start, end)` of window `w` (zero-based), end exclusive.
    pub fn window(&self, w: usize) -> (usize, usize) {
        (w * self.window_len, (w + 1) * self.window_len)
    }

    pub fn windows(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.count()).map(|w| self.window(w))
    }

    pub fn window_of_frame(&self, t: usize) -> usize {
        t / self.window_len
    }
}

/// Splits `frames` into windows of `window_len`; the length must divide the frame count.
pub fn partition_windows(frames: usize, window_len: usize) -> Result<WindowPartition> {
    if window_len == 0 {
        return Err(Error::arg("window length must be at least 1"));
    }
    if frames == 0 {
        return Err(Error::arg("frame count must be at least 1"));
    }
    if !frames.is_multiple_of(window_len) {
        return Err(Error::arg(format!(
            "frame count {frames} is not divisible by window length {window_len}; pad or trim the input"
        )));
    }
    Ok(WindowPartition { frames, window_len })
}

/// Per-frame, per-face mask means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameCoverage {
    values: Vec<[f64; 6]>,
}

impl FrameCoverage {
    pub fn from_values(values: Vec<[f64; 6]>) -> Result<Self> {
        if values.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg("coverage values must lie in [0, 1]"));
        }
        Ok(Self { values })
    }

    pub fn frames(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn get(&self, face: Face, t: usize) -> f64 {
        self.values[t][face.index()]
    }

    pub fn values(&self) -> &[[f64; 6]] {
        &self.values
    }
}

/// Spatial mean of every face mask, one row per frame.
pub fn frame_coverage(frames: &[CubemapFrame]) -> FrameCoverage {
    let values = par::map_range(frames.len(), |t| frames[t].coverage());
    FrameCoverage { values }
}

/// Window-averaged coverage `c[w][face]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    values: Vec<[f64; 6]>,
}

impl CoverageTable {
    pub fn from_values(values: Vec<[f64; 6]>) -> Self {
        Self { values }
    }

    pub fn windows(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn get(&self, face: Face, w: usize) -> f64 {
        self.values[w][face.index()]
    }

    pub fn row(&self, w: usize) -> &[f64; 6] {
        &self.values[w]
    }

    /// JSON shape used by the `plan` subcommand: one `{face: value}` map per window.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .values
            .iter()
            .map(|row| {
                let mut m = serde_json::Map::new();
                for f in Face::ALL {
                    m.insert(f.letter().to_string(), serde_json::json!(row[f.index()]));
                }
                serde_json::Value::Object(m)
            })
            .collect();
        serde_json::json!({ "windows": rows })
    }
}

/// Temporal mean of frame coverage over each window.
pub fn window_coverage(fc: &FrameCoverage, wp: &WindowPartition) -> Result<CoverageTable> {
    if fc.frames() < wp.frames() {
        return Err(Error::arg(format!(
            "coverage has {} frames but the partition needs {}",
            fc.frames(),
            wp.frames()
        )));
    }
    let values = par::map_range(wp.count(), |w| {
        let (s, e) = wp.window(w);
        let mut row = [0.0; 6];
        for t in s..e {
            for (acc, v) in row.iter_mut().zip(&fc.values[t]) {
                *acc += v;
            }
        }
        row.map(|v| v / wp.window_len() as f64)
    });
    Ok(CoverageTable { values })
}

/// One generation step: `face` over frames `[s, e)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlanStep {
    pub face: Face,
    pub s: usize,
    pub e: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationPlan {
    pub steps: Vec<PlanStep>,
}

impl GenerationPlan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Checks the structural invariants against a partition: window-major,
    /// every face exactly once per window.
    pub fn validate(&self, wp: &WindowPartition) -> Result<()> {
        if self.steps.len() != 6 * wp.count() {
            return Err(Error::arg(format!(
                "plan has {} steps, expected {}",
                self.steps.len(),
                6 * wp.count()
            )));
        }
        for (w, chunk) in self.steps.chunks(6).enumerate() {
            let (s, e) = wp.window(w);
            let mut seen = [false; 6];
            for step in chunk {
                if step.s != s || step.e != e {
                    return Err(Error::arg(format!(
                        "step {}[{}, {}) does not match window [{s}, {e})",
                        step.face, step.s, step.e
                    )));
                }
                if std::mem::replace(&mut seen[step.face.index()], true) {
                    return Err(Error::arg(format!(
                        "face {} repeated in window {w}",
                        step.face
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Faces of one window sorted by descending coverage, ties in canonical order.
pub fn order_faces(row: &[f64; 6]) -> [Face; 6] {
    let mut faces = Face::ALL;
    // Stable sort over canonical order keeps the tie-break.
    faces.sort_by(|a, b| row[b.index()].total_cmp(&row[a.index()]));
    faces
}

/// Window-major plan with each window's faces in descending coverage.
pub fn plan_order(ct: &CoverageTable, wp: &WindowPartition) -> Result<GenerationPlan> {
    if ct.windows() != wp.count() {
        return Err(Error::arg(format!(
            "coverage table has {} windows, partition has {}",
            ct.windows(),
            wp.count()
        )));
    }
    let steps = (0..wp.count())
        .flat_map(|w| {
            let (s, e) = wp.window(w);
            order_faces(ct.row(w)).map(|face| PlanStep { face, s, e })
        })
        .collect();
    Ok(GenerationPlan { steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Mask;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn partition_examples() {
        let p = partition_windows(8, 4).unwrap();
        assert_eq!(p.windows().collect::<Vec<_>>(), vec![(0, 4), (4, 8)]);
        assert_eq!(p.count(), 2);
        let p = partition_windows(4, 4).unwrap();
        assert_eq!(p.windows().collect::<Vec<_>>(), vec![(0, 4)]);
        assert!(partition_windows(7, 4).is_err());
        assert!(partition_windows(8, 0).is_err());
    }

    fn random_frame(rng: &mut ChaCha8Rng, res: usize) -> CubemapFrame {
        let mut f = CubemapFrame::empty(res, 1);
        for face in Face::ALL {
            let p: f64 = rng.random();
            let data = (0..res * res)
                .map(|_| (rng.random::<f64>() < p) as u8)
                .collect();
            *f.mask_mut(face) = Mask::from_vec(res, res, data).unwrap();
        }
        f
    }

    #[test]
    fn frame_coverage_extremes_and_count_oracle() {
        let full = CubemapFrame::filled(4, 1, 0.0);
        let empty = CubemapFrame::empty(4, 1);
        let fc = frame_coverage(&[full, empty]);
        assert_eq!(fc.values()[0], [1.0; 6]);
        assert_eq!(fc.values()[1], [0.0; 6]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frame = random_frame(&mut rng, 16);
        let fc = frame_coverage(std::slice::from_ref(&frame));
        for face in Face::ALL {
            let mut count = 0usize;
            for r in 0..16 {
                for c in 0..16 {
                    count += frame.mask(face).get(r, c) as usize;
                }
            }
            assert_eq!(fc.get(face, 0), count as f64 / 256.0);
        }
    }

    #[test]
    fn window_coverage_examples() {
        let wp = partition_windows(8, 4).unwrap();
        let fc = FrameCoverage::from_values(vec![[0.3; 6]; 8]).unwrap();
        let ct = window_coverage(&fc, &wp).unwrap();
        for w in 0..2 {
            for f in Face::ALL {
                assert!((ct.get(f, w) - 0.3).abs() < 1e-15);
            }
        }
        let wp = partition_windows(4, 4).unwrap();
        let mut vals = vec![[0.0; 6]; 4];
        vals[0][Face::F.index()] = 1.0;
        let ct = window_coverage(&FrameCoverage::from_values(vals).unwrap(), &wp).unwrap();
        assert_eq!(ct.get(Face::F, 0), 0.25);
    }

    #[test]
    fn window_coverage_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vals: Vec<[f64; 6]> = (0..12)
            .map(|_| std::array::from_fn(|_| rng.random::<f64>()))
            .collect();
        let fc = FrameCoverage::from_values(vals.clone()).unwrap();
        let wp = partition_windows(12, 3).unwrap();
        let ct = window_coverage(&fc, &wp).unwrap();
        for w in 0..4 {
            for f in 0..6 {
                let mut acc = 0.0;
                for t in w * 3..w * 3 + 3 {
                    acc += vals[t][f];
                }
                assert_eq!(ct.row(w)[f], acc / 3.0);
            }
        }
    }

    #[test]
    fn order_with_ties() {
        let row = [0.2, 0.9, 0.0, 0.0, 0.1, 0.0];
        use Face::*;
        assert_eq!(order_faces(&row), [R, F, U, B, L, D]);
        assert_eq!(
            order_faces(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            [F, R, B, L, U, D]
        );
    }

    #[test]
    fn plan_json_shape() {
        let wp = partition_windows(4, 4).unwrap();
        let ct = CoverageTable::from_values(vec![[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]]);
        let plan = plan_order(&ct, &wp).unwrap();
        plan.validate(&wp).unwrap();
        let json = serde_json::to_value(&plan).unwrap();
        assert_eq!(
            json["steps"][0],
            serde_json::json!({"face": "R", "s": 0, "e": 4})
        );
        assert_eq!(json["steps"][1]["face"], "F");
    }

    fn table_strategy() -> impl Strategy<Value = Vec<[f64; 6]>> {
        // Quantized values make ties common.
        prop::collection::vec(
            prop::array::uniform6(0u8..5).prop_map(|a| a.map(|v| v as f64 / 4.0)),
            1..6,
        )
    }

    proptest! {
        #[test]
        fn plan_is_sorted_and_complete(rows in table_strategy()) {
            let wp = partition_windows(rows.len() * 2, 2).unwrap();
            let ct = CoverageTable::from_values(rows);
            let plan = plan_order(&ct, &wp).unwrap();
            plan.validate(&wp).unwrap();
            for (w, chunk) in plan.steps.chunks(6).enumerate() {
                for pair in chunk.windows(2) {
                    let (a, b) = (ct.get(pair[0].face, w), ct.get(pair[1].face, w));
                    prop_assert!(a >= b);
                    if a == b {
                        prop_assert!(pair[0].face < pair[1].face);
                    }
                }
            }
            for pair in plan.steps.windows(2) {
                if pair[0].s != pair[1].s {
                    prop_assert!(pair[0].e <= pair[1].s);
                }
            }
        }

        #[test]
        fn plan_invariant_under_monotone_rescaling(rows in table_strategy()) {
            let wp = partition_windows(rows.len(), 1).unwrap();
            let scaled: Vec<[f64; 6]> = rows.iter().map(|r| r.map(|v| (0.1 + v).sqrt() * 3.0 - 7.0)).collect();
            let a = plan_order(&CoverageTable::from_values(rows), &wp).unwrap();
            let b = plan_order(&CoverageTable::from_values(scaled), &wp).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
