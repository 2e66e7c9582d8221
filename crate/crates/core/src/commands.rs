//! The six subcommands behind the `cubegen` binary.
//!
//! Every subcommand writes its artifacts under `config.paths.out` and
//! returns the list it wrote. Inputs come either from files
//! (`paths.frames` + `paths.poses`) or from a synthetic scene drawn from the
//! config seed. With `record_timings` off every artifact is a pure function
//! of the config.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::attention::{
    attention_flops, build_context_mask, dense_attention_flops, dense_masked_attention,
    linear_fit_r_squared, sparse_context_attention, AttentionInputs, BandedMaskSpec, TokenLayout,
};
use crate::config::{DenoiserKind, RunConfig};
use crate::context::SourceKind;
use crate::continuity::{seam_metric, CubeLayout};
use crate::error::{Error, Result};
use crate::geometry::{
    face_pixel_solid_angle, project_perspective_to_cubemap, CameraPose, CubemapFrame, CubemapVideo,
    Face,
};
use crate::io;
use crate::par;
use crate::pipeline::{
    generate_all, ConditioningTag, CopyDenoiser, Denoiser, GenerationOutput, GenerationParams,
    RunReport, SamplerConfig, SceneOracle, StepRecord, ZeroDenoiser,
};
use crate::planner::{
    frame_coverage, partition_windows, plan_order, window_coverage, CoverageTable, GenerationPlan,
};
use crate::raster::{Image, Mask};
use crate::scene::{synth_scene, SyntheticScene};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcommand {
    Project,
    Plan,
    Context,
    AttendBench,
    Generate,
    Metrics,
}

impl Subcommand {
    pub const ALL: [Subcommand; 6] = [
        Subcommand::Project,
        Subcommand::Plan,
        Subcommand::Context,
        Subcommand::AttendBench,
        Subcommand::Generate,
        Subcommand::Metrics,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Project => "project",
            Subcommand::Plan => "plan",
            Subcommand::Context => "context",
            Subcommand::AttendBench => "attend-bench",
            Subcommand::Generate => "generate",
            Subcommand::Metrics => "metrics",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown subcommand `{s}`")))
    }
}

/// Files written by a subcommand, relative to the output directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub subcommand: String,
    pub out: PathBuf,
    pub artifacts: Vec<String>,
}

/// Conditional input plus, for synthetic runs, the ground truth.
pub struct Inputs {
    pub cond: CubemapVideo,
    pub poses: Vec<CameraPose>,
    pub scene: Option<SyntheticScene>,
    pub truth: Option<CubemapVideo>,
    /// Seed for the sampler, drawn after the scene's.
    pub sampler_seed: u64,
}

/// Loads or synthesizes the perspective video and projects it to cubemaps.
pub fn prepare_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scene_seed = master.next_u64();
    let sampler_seed = master.next_u64();
    let (perspective, poses, scene, truth) = match (&cfg.paths.frames, &cfg.paths.poses) {
        (Some(dir), Some(pose_file)) => {
            let mut files: Vec<PathBuf> = fs::read_dir(dir)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            files.retain(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pfm" | "ppm")));
            files.sort();
            let frames = files
                .iter()
                .map(|p| io::read_image(p))
                .collect::<Result<Vec<Image>>>()?;
            let poses = io::read_poses(pose_file)?;
            if frames.len() != cfg.frames || poses.len() != cfg.frames {
                return Err(Error::config(
                    "N",
                    format!(
                        "expected {} frames and poses, found {} frames and {} poses",
                        cfg.frames,
                        frames.len(),
                        poses.len()
                    ),
                ));
            }
            (frames, poses, None, None)
        }
        _ => {
            let b = synth_scene(
                cfg.res,
                cfg.frames,
                cfg.channels,
                &cfg.trajectory,
                scene_seed,
            )?;
            (b.perspective, b.poses, Some(b.scene), Some(b.truth))
        }
    };
    let cond = par::map_range(perspective.len(), |t| {
        project_perspective_to_cubemap(&perspective[t], &poses[t], cfg.res)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Inputs {
        cond: CubemapVideo::new(cond)?,
        poses,
        scene,
        truth,
        sampler_seed,
    })
}

fn plan_for(cfg: &RunConfig, cond: &CubemapVideo) -> Result<(CoverageTable, GenerationPlan)> {
    let wp = partition_windows(cfg.frames, cfg.window_len)?;
    let ct = window_coverage(&frame_coverage(cond.frames()), &wp)?;
    let plan = plan_order(&ct, &wp)?;
    Ok((ct, plan))
}

fn generation_params(cfg: &RunConfig, sampler_seed: u64) -> GenerationParams {
    GenerationParams {
        window_len: cfg.window_len,
        pool_capacity: cfg.pool_capacity,
        frag_len: cfg.frag_len,
        threshold: cfg.threshold,
        pad: cfg.pad,
        equirect_width: cfg.width,
        sampler: SamplerConfig {
            steps: cfg.steps,
            seed: sampler_seed,
            teacher_forcing: cfg.teacher_forcing,
        },
        tag: ConditioningTag::default(),
    }
}

fn run_generation(cfg: &RunConfig, inputs: &Inputs) -> Result<GenerationOutput> {
    let (_, plan) = plan_for(cfg, &inputs.cond)?;
    let denoiser: Box<dyn Denoiser> = match cfg.denoiser {
        DenoiserKind::Oracle => {
            let truth = inputs
                .truth
                .clone()
                .ok_or_else(|| Error::config("denoiser", "oracle needs a ground-truth video"))?;
            Box::new(SceneOracle::new(truth))
        }
        DenoiserKind::Copy => Box::new(CopyDenoiser),
        DenoiserKind::Zero => Box::new(ZeroDenoiser),
    };
    let truth = if cfg.teacher_forcing {
        inputs.truth.clone()
    } else {
        None
    };
    let mut out = generate_all(
        inputs.cond.clone(),
        plan,
        truth,
        denoiser.as_ref(),
        generation_params(cfg, inputs.sampler_seed),
    )?;
    if !cfg.record_timings {
        out.report = out.report.without_timings();
    }
    Ok(out)
}

struct Writer {
    out: PathBuf,
    written: Vec<String>,
}

impl Writer {
    fn new(out: &Path) -> Result<Self> {
        fs::create_dir_all(out)?;
        Ok(Self {
            out: out.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.out.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        self.written.push(rel.to_string());
        Ok(p)
    }

    fn json(&mut self, rel: &str, v: &impl Serialize) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(v)?;
        bytes.push(b'\n');
        fs::write(self.path(rel)?, bytes)?;
        Ok(())
    }

    fn finish(self, sub: Subcommand) -> Summary {
        Summary {
            subcommand: sub.name().into(),
            out: self.out,
            artifacts: self.written,
        }
    }
}

/// Runs one subcommand and writes its artifacts.
pub fn run_subcommand(sub: Subcommand, cfg: &RunConfig) -> Result<Summary> {
    cfg.validate()?;
    let mut w = Writer::new(&cfg.paths.out)?;
    if cfg.shapes_only() && sub != Subcommand::AttendBench {
        w.json("shapes.json", &shapes(cfg))?;
        return Ok(w.finish(sub));
    }
    match sub {
        Subcommand::Project => project(cfg, &mut w)?,
        Subcommand::Plan => plan(cfg, &mut w)?,
        Subcommand::Context => context(cfg, &mut w)?,
        Subcommand::AttendBench => attend_bench(cfg, &mut w)?,
        Subcommand::Generate => generate(cfg, &mut w)?,
        Subcommand::Metrics => metrics(cfg, &mut w)?,
    }
    Ok(w.finish(sub))
}

/// Machine-readable error document.
pub fn error_json(e: &Error) -> Value {
    let mut v = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
    if let Error::Config { field, .. } = e {
        v["error"]["field"] = json!(field);
    }
    v
}

/// Faces laid out on the flattened cross, `3R × 4R`; empty cells are zero.
pub fn cross_image(cube: &CubemapFrame, layout: &CubeLayout) -> Image {
    let r = cube.res();
    let mut img = Image::new(4 * r, 3 * r, cube.channels());
    for f in Face::ALL {
        let (ro, co) = layout.offset(f);
        let src = cube.face(f);
        for i in 0..r {
            for j in 0..r {
                img.pixel_mut(ro + i, co + j)
                    .copy_from_slice(src.pixel(i, j));
            }
        }
    }
    img
}

pub fn cross_mask(cube: &CubemapFrame, layout: &CubeLayout) -> Mask {
    let r = cube.res();
    let mut m = Mask::zeros(4 * r, 3 * r);
    for f in Face::ALL {
        let (ro, co) = layout.offset(f);
        for i in 0..r {
            for j in 0..r {
                m.set(ro + i, co + j, cube.mask(f).get(i, j));
            }
        }
    }
    m
}

fn face_map(values: &[f64; 6]) -> Value {
    Value::Object(
        Face::ALL
            .iter()
            .map(|f| (f.letter().to_string(), json!(values[f.index()])))
            .collect(),
    )
}

fn project(cfg: &RunConfig, w: &mut Writer) -> Result<()> {
    let inputs = prepare_inputs(cfg)?;
    let layout = CubeLayout::new(cfg.res);
    for (t, frame) in inputs.cond.frames().iter().enumerate() {
        io::write_pfm(
            &w.path(&format!("cubemap/frame_{t:03}.pfm"))?,
            &cross_image(frame, &layout),
        )?;
        io::write_mask(
            &w.path(&format!("cubemap/mask_{t:03}.pgm"))?,
            &cross_mask(frame, &layout),
        )?;
    }
    let fc = frame_coverage(inputs.cond.frames());
    let (ct, _) = plan_for(cfg, &inputs.cond)?;
    let frames: Vec<Value> = fc.values().iter().map(face_map).collect();
    w.json(
        "coverage.json",
        &json!({ "frames": frames, "windows": ct.to_json()["windows"] }),
    )?;
    w.json("layout.json", &layout.to_json())?;
    io::write_poses(&w.path("poses.json")?, &inputs.poses)?;
    Ok(())
}

fn plan(cfg: &RunConfig, w: &mut Writer) -> Result<()> {
    let inputs = prepare_inputs(cfg)?;
    let (ct, plan) = plan_for(cfg, &inputs.cond)?;
    w.json("plan.json", &plan)?;
    w.json("coverage.json", &ct.to_json())?;
    Ok(())
}

/// Token counts of one step's attention problem.
fn step_tokens(cfg: &RunConfig, rec: &StepRecord) -> (usize, usize) {
    let per_frame = (cfg.res / cfg.patch).pow(2);
    let gen = (rec.e - rec.s) * per_frame;
    let ctx = rec.provenance.iter().map(|p| (p.e - p.s) * per_frame).sum();
    (gen, ctx)
}

fn context(cfg: &RunConfig, w: &mut Writer) -> Result<()> {
    let inputs = prepare_inputs(cfg)?;
    let out = run_generation(cfg, &inputs)?;
    let spec = BandedMaskSpec::new(cfg.bandwidth)?;
    let d = cfg.bench.d;
    let steps: Vec<Value> = out
        .report
        .steps
        .iter()
        .map(|rec| {
            let (g, c) = step_tokens(cfg, rec);
            let layout = TokenLayout::uniform(g, c);
            json!({
                "face": rec.face,
                "s": rec.s,
                "e": rec.e,
                "sources": rec.provenance,
                "G": g,
                "C": c,
                "flops_sparse": attention_flops(&layout, &spec, d),
                "flops_dense": dense_attention_flops(&layout, d),
            })
        })
        .collect();
    w.json(
        "context.json",
        &json!({ "K": cfg.bandwidth, "d": d, "steps": steps }),
    )?;
    Ok(())
}

/// Best-of-`repeats` wall-clock in milliseconds.
fn time_ms(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats {
        let t0 = Instant::now();
        f()?;
        best = best.min(t0.elapsed().as_secs_f64() * 1e3);
    }
    Ok(best)
}

/// Wall-clock of the dense and sparse paths at one shape.
pub fn time_attention(
    g: usize,
    c: usize,
    k: usize,
    d: usize,
    heads: usize,
    repeats: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let layout = TokenLayout::uniform(g, c);
    let spec = BandedMaskSpec::new(k)?;
    let mask = build_context_mask(&layout, &spec);
    let inp = AttentionInputs::<f32>::random(heads, g + c, d, seed)?;
    let dense = time_ms(repeats, || dense_masked_attention(&inp, &mask).map(drop))?;
    let sparse = time_ms(repeats, || {
        sparse_context_attention(&inp, &layout, &spec).map(drop)
    })?;
    Ok((dense, sparse))
}

fn attend_bench(cfg: &RunConfig, w: &mut Writer) -> Result<()> {
    let b = &cfg.bench;
    let spec = BandedMaskSpec::new(b.bandwidth)?;
    let mut csv = csv::Writer::from_path(w.path("attend_bench.csv")?).map_err(csv_error)?;
    csv.write_record([
        "G",
        "C",
        "K",
        "d",
        "flops_sparse",
        "flops_dense",
        "wall_ms_sparse",
        "wall_ms_dense",
    ])
    .map_err(csv_error)?;
    let (mut xs, mut sparse, mut dense) = (vec![], vec![], vec![]);
    let mut timed = vec![];
    for &c in &b.contexts {
        let layout = TokenLayout::uniform(b.gen_len, c);
        let fs = attention_flops(&layout, &spec, b.d);
        let fd = dense_attention_flops(&layout, b.d);
        xs.push(c as f64);
        sparse.push(fs as f64);
        dense.push(fd as f64);
        let (ws, wd) = if cfg.record_timings && b.timed.contains(&c) {
            let (d_ms, s_ms) =
                time_attention(b.gen_len, c, b.bandwidth, b.d, b.heads, b.repeats, cfg.seed)?;
            timed.push(json!({ "C": c, "wall_ms_sparse": s_ms, "wall_ms_dense": d_ms, "ratio": s_ms / d_ms }));
            (format!("{s_ms:.4}"), format!("{d_ms:.4}"))
        } else {
            (String::new(), String::new())
        };
        csv.write_record([
            b.gen_len.to_string(),
            c.to_string(),
            b.bandwidth.to_string(),
            b.d.to_string(),
            fs.to_string(),
            fd.to_string(),
            ws,
            wd,
        ])
        .map_err(csv_error)?;
    }
    csv.flush()?;
    let mut fit = json!({
        "G": b.gen_len,
        "K": b.bandwidth,
        "d": b.d,
        "r2_sparse": linear_fit_r_squared(&xs, &sparse),
        "r2_dense": linear_fit_r_squared(&xs, &dense),
    });
    if cfg.record_timings {
        fit["timed"] = json!(timed);
    }
    w.json("attend_fit.json", &fit)?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Internal(format!("csv: {e}"))
}

#[derive(Serialize)]
struct GenerateReport<'a> {
    frames: usize,
    #[serde(rename = "R")]
    res: usize,
    #[serde(rename = "W")]
    width: usize,
    denoiser: DenoiserKind,
    teacher_forcing: bool,
    #[serde(flatten)]
    run: &'a RunReport,
    /// Per-frame max abs error against the analytic scene, synthetic runs only.
    equirect_max_abs_error: Option<Vec<f64>>,
}

fn equirect_errors(
    scene: &SyntheticScene,
    out: &GenerationOutput,
    width: usize,
) -> Result<Vec<f64>> {
    out.equirect
        .iter()
        .enumerate()
        .map(|(t, eq)| {
            Ok(eq
                .image()
                .max_abs_diff(scene.equirect_frame(width, t)?.image()) as f64)
        })
        .collect()
}

fn generate(cfg: &RunConfig, w: &mut Writer) -> Result<()> {
    let inputs = prepare_inputs(cfg)?;
    let out = run_generation(cfg, &inputs)?;
    for (t, eq) in out.equirect.iter().enumerate() {
        io::write_pfm(&w.path(&format!("equirect/frame_{t:03}.pfm"))?, eq.image())?;
    }
    let errors = match &inputs.scene {
        Some(s) => Some(equirect_errors(s, &out, cfg.width)?),
        None => None,
    };
    w.json(
        "report.json",
        &GenerateReport {
            frames: cfg.frames,
            res: cfg.res,
            width: cfg.width,
            denoiser: cfg.denoiser,
            teacher_forcing: cfg.teacher_forcing,
            run: &out.report,
            equirect_max_abs_error: errors,
        },
    )?;
    Ok(())
}

/// Fraction of the sphere whose cube pixels are observed.
pub fn observed_fraction(cube: &CubemapFrame) -> f64 {
    let r = cube.res();
    let mut acc = 0.0;
    for f in Face::ALL {
        let m = cube.mask(f);
        for i in 0..r {
            for j in 0..r {
                if m.get(i, j) {
                    acc += face_pixel_solid_angle(r, i, j);
                }
            }
        }
    }
    acc / (4.0 * std::f64::consts::PI)
}

fn metrics(cfg: &RunConfig, w: &mut Writer) -> Result<()> {
    let inputs = prepare_inputs(cfg)?;
    let out = run_generation(cfg, &inputs)?;
    let layout = CubeLayout::new(cfg.res);
    let fc = frame_coverage(inputs.cond.frames());
    let n = fc.frames() as f64;
    let mut mean = [0.0; 6];
    let mut min = [f64::INFINITY; 6];
    let mut max = [0.0f64; 6];
    for row in fc.values() {
        for k in 0..6 {
            mean[k] += row[k] / n;
            min[k] = min[k].min(row[k]);
            max[k] = max[k].max(row[k]);
        }
    }
    let observed: Vec<f64> = inputs.cond.frames().iter().map(observed_fraction).collect();
    let seam_generated = &out.report.seam_per_frame;
    let seam_truth: Option<Vec<f64>> = inputs
        .truth
        .as_ref()
        .map(|t| t.frames().iter().map(|c| seam_metric(c, &layout)).collect());
    let errors = match &inputs.scene {
        Some(s) => Some(equirect_errors(s, &out, cfg.width)?),
        None => None,
    };
    let mean_of = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    w.json(
        "metrics.json",
        &json!({
            "frames": cfg.frames,
            "coverage": {
                "mean": face_map(&mean),
                "min": face_map(&min),
                "max": face_map(&max),
                "observed_fraction": observed,
                "observed_fraction_mean": mean_of(&observed),
            },
            "seam": {
                "generated": seam_generated,
                "generated_mean": mean_of(seam_generated),
                "truth": seam_truth,
            },
            "equirect_max_abs_error": errors,
            "count_by_kind": count_by_kind(&out.report),
        }),
    )?;
    Ok(())
}

fn count_by_kind(report: &RunReport) -> Value {
    let mut counts = [0usize; 4];
    for s in &report.steps {
        for p in &s.provenance {
            counts[match p.kind {
                SourceKind::History => 0,
                SourceKind::CurrentGenerated => 1,
                SourceKind::CurrentConditional => 2,
                SourceKind::Future => 3,
            }] += 1;
        }
    }
    json!({ "hist": counts[0], "curr-gen": counts[1], "curr-cond": counts[2], "fut": counts[3] })
}

/// Buffer and token shapes of a run, computed without touching pixels.
pub fn shapes(cfg: &RunConfig) -> Value {
    let windows = cfg.frames / cfg.window_len;
    let per_frame = (cfg.res / cfg.patch).pow(2);
    let gen = cfg.window_len * per_frame;
    let max_fragments = 5;
    let ctx = (6 * cfg.pool_capacity * cfg.window_len
        + 6 * cfg.window_len
        + max_fragments * cfg.frag_len)
        * per_frame;
    let layout = TokenLayout::uniform(gen, ctx);
    let spec = BandedMaskSpec::new(cfg.bandwidth).expect("validated bandwidth");
    let padded = cfg.res + 2 * cfg.pad;
    json!({
        "preset": cfg.preset,
        "R": cfg.res,
        "W": cfg.width,
        "equirect": [cfg.width / 2, cfg.width],
        "N": cfg.frames,
        "T_win": cfg.window_len,
        "windows": windows,
        "steps": 6 * windows,
        "padded_face": padded,
        "tokens_per_face_frame": per_frame,
        "max_gen_tokens": gen,
        "max_ctx_tokens": ctx,
        "K": cfg.bandwidth,
        "flops_sparse_per_head_dim": attention_flops(&layout, &spec, 1),
        "flops_dense_per_head_dim": dense_attention_flops(&layout, 1),
        "resident_latent_bound": 6 * (cfg.pool_capacity + 1) + max_fragments,
        "bytes_per_frame_f32": 6 * cfg.res * cfg.res * cfg.channels * 4,
    })
}
