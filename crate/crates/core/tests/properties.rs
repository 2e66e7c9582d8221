use cubegen::attention::{
    build_context_mask, dense_masked_attention, sparse_context_attention, AttentionInputs,
    AttentionMask, BandedMaskSpec, TokenLayout,
};
use cubegen::geometry::{
    direction_to_equirect_pixel, direction_to_face_coords, equirect_pixel_to_direction,
    face_coords_to_direction, sample_trajectory,
};
use cubegen::pipeline::{
    euler_sample, flow_matching_loss, sample_path, seeded_noise, ConditioningTag, DenoiseRequest,
    OracleDenoiser, SamplerConfig,
};
use cubegen::planner::{partition_windows, plan_order, CoverageTable, PlanStep};
use cubegen::{CameraPose, Direction, Face, FaceVideo};
use proptest::prelude::*;

fn face() -> impl Strategy<Value = Face> {
    (0usize..6).prop_map(|i| Face::from_index(i).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn face_coords_round_trip(f in face(), x in 0.001f64..0.999, y in 0.001f64..0.999) {
        let (g, x2, y2) = direction_to_face_coords(face_coords_to_direction(f, x, y));
        prop_assert_eq!(g, f);
        prop_assert!((x - x2).abs() < 1e-9 && (y - y2).abs() < 1e-9);
    }

    #[test]
    fn directions_land_on_their_face(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
        prop_assume!(x * x + y * y + z * z > 1e-6);
        let d = Direction::new(x, y, z).unwrap();
        let (f, u, v) = direction_to_face_coords(d);
        prop_assert!((0.0..1.0).contains(&u) && (0.0..1.0).contains(&v));
        let back = face_coords_to_direction(f, u, v);
        prop_assert!(back.angle_to(d) < 1e-6);
    }

    #[test]
    fn equirect_pixel_round_trip(w in (2usize..200).prop_map(|k| 2 * k), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (u, v) = (((w as f64) * a) as usize, ((w / 2) as f64 * b) as usize);
        let d = equirect_pixel_to_direction(u, v, w).unwrap();
        prop_assert_eq!(direction_to_equirect_pixel(d, w), (u, v));
    }

    #[test]
    fn context_queries_see_generation_plus_band(g in 1usize..12, c in 0usize..40, k in 1usize..8) {
        let layout = TokenLayout::uniform(g, c);
        let mask = build_context_mask(&layout, &BandedMaskSpec::new(k).unwrap());
        let n = g + c;
        for q in 0..n {
            let keys: Vec<usize> = (0..n).filter(|&j| mask.allowed(q, j)).collect();
            prop_assert!((0..g).all(|j| keys.contains(&j)));
            if q >= g {
                let ctx: Vec<usize> = keys.iter().copied().filter(|&j| j >= g).collect();
                prop_assert!(ctx.len() <= 2 * k + 1);
                prop_assert!(ctx.iter().all(|&j| j.abs_diff(q) <= k));
                prop_assert!(ctx.contains(&q));
            }
        }
    }

    #[test]
    fn sparse_matches_dense(g in 1usize..10, c in 0usize..30, k in 1usize..6, heads in 1usize..3, seed in any::<u64>()) {
        let layout = TokenLayout::uniform(g, c);
        let spec = BandedMaskSpec::new(k).unwrap();
        let inp = AttentionInputs::<f64>::random(heads, g + c, 8, seed).unwrap();
        let dense = dense_masked_attention(&inp, &build_context_mask(&layout, &spec)).unwrap();
        let sparse = sparse_context_attention(&inp, &layout, &spec).unwrap();
        for (a, b) in dense.iter().zip(&sparse) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_sampling_is_exact_for_any_step_count(steps in 1usize..40, seed in any::<u64>()) {
        let z0 = seeded_noise((2, 6, 2), seed ^ 0xabc);
        let oracle = OracleDenoiser::new(z0.clone());
        let ctx = Default::default();
        let cond = FaceVideo::zeros(1, 1, 1);
        let tag = ConditioningTag::default();
        let req = DenoiseRequest {
            step: PlanStep { face: Face::F, s: 0, e: 2 },
            context: &ctx,
            cond: &cond,
            positions: &[],
            pad: 1,
            tag: &tag,
        };
        let cfg = SamplerConfig { steps, seed, teacher_forcing: false };
        let z = euler_sample(&oracle, z0.shape(), &req, &cfg).unwrap();
        prop_assert!(z.max_abs_diff(&z0) <= 1e-5);
    }

    #[test]
    fn loss_is_nonnegative_and_zero_at_the_target(t in 0.0f64..=1.0, a in any::<u64>(), b in any::<u64>()) {
        let z0 = seeded_noise((2, 4, 3), a);
        let eps = seeded_noise((2, 4, 3), b);
        let zt = sample_path(&z0, &eps, t).unwrap();
        prop_assert!(flow_matching_loss(&eps, &z0, &zt).unwrap() >= 0.0);
        let exact: Vec<f32> = z0.data().iter().zip(zt.data()).map(|(x, y)| x - y).collect();
        let v = FaceVideo::from_vec(2, 4, 3, exact).unwrap();
        prop_assert_eq!(flow_matching_loss(&v, &z0, &zt).unwrap(), 0.0);
    }

    #[test]
    fn trajectories_hit_their_endpoints(
        anchors in prop::collection::vec((-170.0f64..170.0, -60.0f64..60.0, 40.0f64..120.0), 2..5),
        frames in 2usize..30,
    ) {
        let poses: Vec<CameraPose> = anchors
            .iter()
            .map(|&(y, p, f)| CameraPose::from_yaw_pitch(y, p, f, f * 0.75).unwrap())
            .collect();
        let Ok(path) = sample_trajectory(&poses, frames) else {
            return Ok(());
        };
        prop_assert_eq!(path.len(), frames);
        prop_assert!(path[0].angle_to(&poses[0]) < 1e-12);
        prop_assert!(path[frames - 1].angle_to(poses.last().unwrap()) < 1e-12);
        for p in &path {
            let det = p.rotation().determinant();
            prop_assert!((det - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn plans_are_window_major_permutations(
        rows in prop::collection::vec(prop::array::uniform6(prop_oneof![Just(0.0f64), Just(0.5), 0.0f64..1.0]), 1..6),
        win in 1usize..4,
    ) {
        let wp = partition_windows(rows.len() * win, win).unwrap();
        let plan = plan_order(&CoverageTable::from_values(rows.clone()), &wp).unwrap();
        plan.validate(&wp).unwrap();
        for (w, chunk) in plan.steps.chunks(6).enumerate() {
            for pair in chunk.windows(2) {
                let (a, b) = (rows[w][pair[0].face.index()], rows[w][pair[1].face.index()]);
                prop_assert!(a > b || (a == b && pair[0].face.index() < pair[1].face.index()));
            }
        }
    }
}
