//! Flow-matching path, loss and sampler, the denoiser contract, and the
//! window-major generation loop.
//!
//! The noisy latent is `z_t = (1 - t)·z0 + t·eps` and the regression target
//! is `z0 - z_t`. The sampler walks `t_s = (S - s)/S` for `s = 0..S` and
//! updates `z ← z + (Δ / t_s)·v̂` with `Δ = 1/S`; under a perfect velocity
//! the final state is `z0` for every `S`.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::context::{
    assemble_context_tracked, select_future_fragments, ContextBundle, ContextPool, FragmentSpec,
    Provenance, SourceKind, WindowContent, WindowState,
};
use crate::continuity::{blend_overlaps, pad_face, seam_metric, CubeLayout, PaddedFace};
use crate::error::{Error, Result};
use crate::geometry::{cubemap_to_equirect, CubemapFrame, CubemapVideo, EquirectGrid, Face};
use crate::par;
use crate::planner::{
    frame_coverage, partition_windows, FrameCoverage, GenerationPlan, PlanStep, WindowPartition,
};
use crate::raster::{FaceVideo, Image};
use crate::residency::{Latent, ResidencyProbe};

/// Point on the linear path between data and noise.
pub fn sample_path(z0: &FaceVideo, eps: &FaceVideo, t: f64) -> Result<FaceVideo> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::arg(format!("path time must lie in [0, 1], got {t}")));
    }
    if z0.shape() != eps.shape() {
        return Err(Error::arg("noise shape does not match latent shape"));
    }
    let (a, b) = ((1.0 - t) as f32, t as f32);
    let data = z0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &n)| a * x + b * n)
        .collect();
    let (frames, size, ch) = z0.shape();
    FaceVideo::from_vec(frames, size, ch, data)
}

/// Mean squared error between `v_pred` and the target `z0 - z_t`.
pub fn flow_matching_loss(v_pred: &FaceVideo, z0: &FaceVideo, z_t: &FaceVideo) -> Result<f64> {
    if v_pred.shape() != z0.shape() || z0.shape() != z_t.shape() {
        return Err(Error::arg("loss inputs must share a shape"));
    }
    let n = v_pred.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = v_pred
        .data()
        .iter()
        .zip(z0.data().iter().zip(z_t.data()))
        .map(|(&v, (&a, &b))| {
            // Target formed at latent precision.
            let d = v as f64 - (a - b) as f64;
            d * d
        })
        .sum();
    Ok(sum / n as f64)
}

/// Opaque stand-in for a global or per-face prompt.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConditioningTag(pub String);

impl Default for ConditioningTag {
    fn default() -> Self {
        Self("global".into())
    }
}

/// Everything a denoiser may look at besides `(z_t, t)`.
#[derive(Clone, Copy, Debug)]
pub struct DenoiseRequest<'a> {
    pub step: PlanStep,
    pub context: &'a ContextBundle,
    /// Padded working content for the step's frames, `(R + 2p)²` per frame.
    pub cond: &'a FaceVideo,
    /// Flattened-plane `(row, col)` of every padded pixel.
    pub positions: &'a [(i64, i64)],
    pub pad: usize,
    pub tag: &'a ConditioningTag,
}

/// Velocity predictor. Output must have the shape of `z_t`.
pub trait Denoiser: Sync {
    fn velocity(&self, z_t: &FaceVideo, t: f64, req: &DenoiseRequest<'_>) -> Result<FaceVideo>;
}

fn toward(target: &FaceVideo, z_t: &FaceVideo) -> Result<FaceVideo> {
    if target.shape() != z_t.shape() {
        return Err(Error::Internal(format!(
            "denoiser target shape {:?} does not match latent shape {:?}",
            target.shape(),
            z_t.shape()
        )));
    }
    let data = target
        .data()
        .iter()
        .zip(z_t.data())
        .map(|(&a, &b)| a - b)
        .collect();
    let (f, s, c) = z_t.shape();
    FaceVideo::from_vec(f, s, c, data)
}

/// Exact velocity toward a fixed clean latent.
#[derive(Clone, Debug)]
pub struct OracleDenoiser {
    z0: FaceVideo,
}

impl OracleDenoiser {
    pub fn new(z0: FaceVideo) -> Self {
        Self { z0 }
    }
}

impl Denoiser for OracleDenoiser {
    fn velocity(&self, z_t: &FaceVideo, _t: f64, _req: &DenoiseRequest<'_>) -> Result<FaceVideo> {
        toward(&self.z0, z_t)
    }
}

/// Exact velocity toward the padded ground truth of whichever step is asked.
#[derive(Clone, Debug)]
pub struct SceneOracle {
    truth: CubemapVideo,
    layout: CubeLayout,
}

impl SceneOracle {
    pub fn new(truth: CubemapVideo) -> Self {
        let layout = CubeLayout::new(truth.res());
        Self { truth, layout }
    }

    /// Padded ground truth for `step`.
    pub fn target(&self, step: PlanStep, pad: usize) -> Result<FaceVideo> {
        if step.e > self.truth.len() {
            return Err(Error::Internal(
                "step runs past the ground-truth video".into(),
            ));
        }
        let frames = par::map_range(step.e - step.s, |i| {
            pad_face(self.truth.frame(step.s + i), step.face, pad, &self.layout)
                .map(PaddedFace::into_grid)
        });
        FaceVideo::from_frames(&frames.into_iter().collect::<Result<Vec<Image>>>()?)
    }
}

impl Denoiser for SceneOracle {
    fn velocity(&self, z_t: &FaceVideo, _t: f64, req: &DenoiseRequest<'_>) -> Result<FaceVideo> {
        toward(&self.target(req.step, req.pad)?, z_t)
    }
}

/// Drives the sample toward the padded conditional input.
#[derive(Clone, Copy, Debug, Default)]
pub struct CopyDenoiser;

impl Denoiser for CopyDenoiser {
    fn velocity(&self, z_t: &FaceVideo, _t: f64, req: &DenoiseRequest<'_>) -> Result<FaceVideo> {
        toward(req.cond, z_t)
    }
}

/// Drives the sample toward zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn velocity(&self, z_t: &FaceVideo, _t: f64, _req: &DenoiseRequest<'_>) -> Result<FaceVideo> {
        let (f, s, c) = z_t.shape();
        toward(&FaceVideo::zeros(f, s, c), z_t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    pub seed: u64,
    pub teacher_forcing: bool,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::arg("sampler step count must be at least 1"));
        }
        Ok(())
    }
}

/// Standard-normal clip drawn from `seed`.
pub fn seeded_noise(shape: (usize, usize, usize), seed: u64) -> FaceVideo {
    let (f, s, c) = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..f * s * s * c)
        .map(|_| Distribution::<f32>::sample(&StandardNormal, &mut rng))
        .collect();
    FaceVideo::from_vec(f, s, c, data).expect("shape matches buffer")
}

/// Integrates from seeded noise at `t = 1` down to `t = 0`.
pub fn euler_sample(
    denoiser: &dyn Denoiser,
    shape: (usize, usize, usize),
    req: &DenoiseRequest<'_>,
    cfg: &SamplerConfig,
) -> Result<FaceVideo> {
    cfg.validate()?;
    let big_s = cfg.steps;
    let mut z = seeded_noise(shape, cfg.seed);
    for s in 0..big_s {
        let t = (big_s - s) as f64 / big_s as f64;
        let v = denoiser.velocity(&z, t, req)?;
        if v.shape() != z.shape() {
            return Err(Error::Internal(format!(
                "denoiser returned shape {:?} for latent shape {:?}",
                v.shape(),
                z.shape()
            )));
        }
        // Δ / t_s with Δ = 1/S.
        let gain = 1.0 / (big_s - s) as f64;
        for (zi, &vi) in z.data_mut().iter_mut().zip(v.data()) {
            *zi = (*zi as f64 + gain * vi as f64) as f32;
        }
    }
    Ok(z)
}

/// Loop parameters that are not part of the sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub window_len: usize,
    pub pool_capacity: usize,
    pub frag_len: usize,
    pub threshold: f64,
    pub pad: usize,
    pub equirect_width: usize,
    pub sampler: SamplerConfig,
    pub tag: ConditioningTag,
}

/// What one plan step did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub face: Face,
    pub s: usize,
    pub e: usize,
    pub provenance: Vec<Provenance>,
    pub fragments: Vec<FragmentSpec>,
    pub pool_len: usize,
    pub live_latents: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<f64>,
}

/// Result of one step: the sampled padded clip and its record.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub generated: Vec<PaddedFace>,
    pub record: StepRecord,
}

/// Mutable state of a generation run.
pub struct GenerationState {
    params: GenerationParams,
    layout: CubeLayout,
    partition: WindowPartition,
    coverage: FrameCoverage,
    cond: CubemapVideo,
    truth: Option<CubemapVideo>,
    plan: GenerationPlan,
    working: Vec<CubemapFrame>,
    pool: ContextPool,
    window: Option<WindowState>,
    probe: ResidencyProbe,
    rng: ChaCha8Rng,
    done: usize,
}

impl GenerationState {
    pub fn new(
        cond: CubemapVideo,
        plan: GenerationPlan,
        truth: Option<CubemapVideo>,
        params: GenerationParams,
    ) -> Result<Self> {
        params.sampler.validate()?;
        if cond.is_empty() {
            return Err(Error::arg("conditional video has no frames"));
        }
        let partition = partition_windows(cond.len(), params.window_len)?;
        plan.validate(&partition)?;
        if params.sampler.teacher_forcing && truth.is_none() {
            return Err(Error::arg("teacher forcing needs a ground-truth video"));
        }
        if let Some(t) = &truth {
            if t.len() != cond.len() || t.res() != cond.res() || t.channels() != cond.channels() {
                return Err(Error::arg(
                    "ground truth and conditional video differ in shape",
                ));
            }
        }
        let layout = CubeLayout::new(cond.res());
        let coverage = frame_coverage(cond.frames());
        let working = cond.frames().to_vec();
        Ok(Self {
            pool: ContextPool::new(params.pool_capacity),
            rng: ChaCha8Rng::seed_from_u64(params.sampler.seed),
            params,
            layout,
            partition,
            coverage,
            cond,
            truth,
            plan,
            working,
            window: None,
            probe: ResidencyProbe::new(),
            done: 0,
        })
    }

    pub fn pool(&self) -> &ContextPool {
        &self.pool
    }

    pub fn probe(&self) -> &ResidencyProbe {
        &self.probe
    }

    pub fn working(&self) -> &[CubemapFrame] {
        &self.working
    }

    pub fn layout(&self) -> &CubeLayout {
        &self.layout
    }

    pub fn steps_done(&self) -> usize {
        self.done
    }

    pub fn next_step(&self) -> Option<PlanStep> {
        self.plan.steps.get(self.done).copied()
    }

    pub fn is_finished(&self) -> bool {
        self.done == self.plan.len()
    }
}

/// Runs one plan step against `state`.
///
/// `step` must be the next step of the state's plan.
pub fn generate_step(
    state: &mut GenerationState,
    step: PlanStep,
    denoiser: &dyn Denoiser,
) -> Result<StepOutput> {
    let expected = state.next_step();
    if expected != Some(step) {
        return Err(Error::arg(match expected {
            Some(x) => format!(
                "plan-order violation: got {}[{}, {}), next is {}[{}, {})",
                step.face, step.s, step.e, x.face, x.s, x.e
            ),
            None => "plan-order violation: plan already finished".into(),
        }));
    }
    let started = Instant::now();
    let p = state.params.pad;
    let w = state.partition.window_of_frame(step.s);
    let window = state
        .window
        .get_or_insert_with(|| WindowState::new(w, step.s, step.e));

    let fragments = select_future_fragments(
        &state.coverage,
        step.face,
        step.e,
        state.params.frag_len,
        state.params.threshold,
    )?;
    let bundle =
        assemble_context_tracked(&state.pool, window, &fragments, &state.cond, &state.probe)?;

    let padded = par::map_range(step.e - step.s, |i| {
        pad_face(&state.working[step.s + i], step.face, p, &state.layout)
    })
    .into_iter()
    .collect::<Result<Vec<PaddedFace>>>()?;
    let cond_grids: Vec<Image> = padded.iter().map(|pf| pf.grid().clone()).collect();
    let cond = FaceVideo::from_frames(&cond_grids)?;
    let positions = padded[0].positions().to_vec();

    let mut sampler = state.params.sampler;
    sampler.seed = rand::RngCore::next_u64(&mut state.rng);
    let req = DenoiseRequest {
        step,
        context: &bundle,
        cond: &cond,
        positions: &positions,
        pad: p,
        tag: &state.params.tag,
    };
    let sample = Latent::tracked(
        euler_sample(denoiser, cond.shape(), &req, &sampler)?,
        &state.probe,
    );
    let provenance = bundle.provenance();
    drop(bundle);

    let generated: Vec<PaddedFace> = (0..sample.frames())
        .map(|i| {
            PaddedFace::from_grid(
                step.face,
                state.layout.res(),
                p,
                sample.frame(i),
                &state.layout,
            )
        })
        .collect::<Result<_>>()?;
    let blended = par::map_range(generated.len(), |i| {
        blend_overlaps(&generated[i], &state.working[step.s + i], &state.layout)
    });
    for (i, frame) in blended.into_iter().enumerate() {
        state.working[step.s + i] = frame?;
    }

    let stored = if state.params.sampler.teacher_forcing {
        let truth = state.truth.as_ref().expect("checked at construction");
        truth.face_clip(step.face, step.s, step.e)?
    } else {
        FaceVideo::from_frames(&generated.iter().map(PaddedFace::core).collect::<Vec<_>>())?
    };
    drop(sample);
    let window = state.window.as_mut().expect("window opened above");
    window
        .generated
        .push((step.face, Latent::tracked(stored, &state.probe)));

    if window.is_complete() {
        let window = state.window.take().expect("window present");
        let mut faces: [Option<Latent>; 6] = Default::default();
        for (f, l) in window.generated {
            faces[f.index()] = Some(l);
        }
        state.pool.push(WindowContent {
            window: window.window,
            start: window.start,
            end: window.end,
            faces: faces.map(|l| l.expect("all six faces generated")),
        })?;
    }

    let record = StepRecord {
        index: state.done,
        face: step.face,
        s: step.s,
        e: step.e,
        provenance,
        fragments,
        pool_len: state.pool.len(),
        live_latents: state.probe.live(),
        wall_ms: Some(started.elapsed().as_secs_f64() * 1e3),
    };
    state.done += 1;
    Ok(StepOutput { generated, record })
}

/// Aggregate report of a full run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub steps: Vec<StepRecord>,
    pub pool_capacity: usize,
    /// Pool length after every step.
    pub pool_trace: Vec<usize>,
    pub peak_resident_latents: usize,
    pub max_fragments: usize,
    /// `6·(H + 1) + max_fragments`.
    pub resident_bound: usize,
    pub seam_per_frame: Vec<f64>,
}

impl RunReport {
    /// Drops wall-clock measurements so the report depends only on inputs.
    pub fn without_timings(mut self) -> Self {
        for s in &mut self.steps {
            s.wall_ms = None;
        }
        self
    }
}

#[derive(Clone, Debug)]
pub struct GenerationOutput {
    pub cubes: Vec<CubemapFrame>,
    pub equirect: Vec<EquirectGrid>,
    pub report: RunReport,
}

/// Runs every step of `plan` in order and assembles equirect frames.
pub fn generate_all(
    cond: CubemapVideo,
    plan: GenerationPlan,
    truth: Option<CubemapVideo>,
    denoiser: &dyn Denoiser,
    params: GenerationParams,
) -> Result<GenerationOutput> {
    let width = params.equirect_width;
    let mut state = GenerationState::new(cond, plan, truth, params)?;
    let mut steps = Vec::with_capacity(state.plan.len());
    while let Some(step) = state.next_step() {
        steps.push(generate_step(&mut state, step, denoiser)?.record);
    }
    let cubes = state.working.clone();
    let equirect = par::map_range(cubes.len(), |t| cubemap_to_equirect(&cubes[t], width))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let seam_per_frame = cubes
        .iter()
        .map(|c| seam_metric(c, &state.layout))
        .collect();
    let max_fragments = steps.iter().map(|s| s.fragments.len()).max().unwrap_or(0);
    let report = RunReport {
        pool_capacity: state.pool.capacity(),
        pool_trace: steps.iter().map(|s| s.pool_len).collect(),
        peak_resident_latents: state.probe.peak(),
        max_fragments,
        resident_bound: 6 * (state.pool.capacity() + 1) + max_fragments,
        seam_per_frame,
        steps,
    };
    Ok(GenerationOutput {
        cubes,
        equirect,
        report,
    })
}

/// True when every source read by a step ends at or before the step's
/// window end, future fragments excepted.
pub fn is_causal(record: &StepRecord) -> bool {
    record
        .provenance
        .iter()
        .all(|p| p.kind == SourceKind::Future || p.e <= record.e)
}
