//! The training loop: draw a pixel batch from the sampler, cast jittered
//! rays, render coarse and fine passes, back-propagate the summed squared
//! color error into both fields, take one Adam step, and feed each ray's
//! loss back into the content-aware sampler.

use std::path::Path;
use std::time::Instant;

use crate::dataset::{Dataset, View};
use crate::error::{Error, Result};
use crate::field::{FieldConfig, Real, RadianceField};
use crate::geometry::{generate_ray, CameraPose, Ray, Vec3};
use crate::image::ErpImage;
use crate::io::{self, CurveRow, CurveWriter, Checkpoint, RunLayout, SamplerSnapshot};
use crate::metrics::{evaluate_view, mean_metrics, ViewMetrics};
use crate::optim::{lr_at, AdamConfig, AdamState};
use crate::render::{
    composite_backward, render_batch, render_fixed, render_rays, BatchRender, PassRecord, RaySamples, RenderConfig, SampleMode,
};
use crate::rng::{seeded, substream, StreamRng, UniformSource};
use crate::sampling::{PixelLayout, PixelSampler};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Rays per iteration.
    pub rays_per_iter: usize,
    pub total_iters: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub adam: AdamConfig,
    pub distortion_aware: bool,
    pub content_aware: bool,
    pub seed: u64,
    /// Evaluate on held-out views every this many iterations; 0 evaluates
    /// only at the start and the end.
    pub eval_every: usize,
    pub floor_eps: f64,
    /// Rays rendered per forward/backward chunk; affects memory, not results
    /// beyond the order random numbers are consumed in.
    pub chunk_rays: usize,
    pub crop: usize,
    pub crop_stride: usize,
    /// Write elapsed milliseconds into the learning curve; when off the
    /// column is zero and curves are byte-reproducible.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rays_per_iter: 2048,
            total_iters: 5000,
            lr_start: 5e-4,
            lr_end: 5e-5,
            adam: AdamConfig::default(),
            distortion_aware: true,
            content_aware: true,
            seed: 0,
            eval_every: 500,
            floor_eps: crate::sampling::DEFAULT_FLOOR_EPS,
            chunk_rays: 512,
            crop: 60,
            crop_stride: 10,
            log_wall_time: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rays_per_iter == 0 {
            return Err(Error::Config("rays per iteration must be >= 1".into()));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end) {
            return Err(Error::Config("learning rates need lr_start >= lr_end > 0".into()));
        }
        if self.chunk_rays == 0 {
            return Err(Error::Config("chunk_rays must be >= 1".into()));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(Error::Config("Adam needs betas in [0, 1) and epsilon > 0".into()));
        }
        Ok(())
    }

    pub fn lr(&self, iter: usize) -> f64 {
        lr_at(iter, self.total_iters, self.lr_start, self.lr_end)
    }
}

/// Outcome of one training iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub iter: usize,
    /// Sum over rays of coarse plus fine squared color error.
    pub loss: f64,
    pub lr: f64,
    /// Flat sampler indices of the batch, in ray order.
    pub pixels: Vec<usize>,
}

/// Per-ray loss `|C_coarse - C|^2 + |C_fine - C|^2` and the upstream color
/// gradients of both passes.
fn ray_loss(coarse: [f64; 3], fine: [f64; 3], target: [f64; 3]) -> (f64, [f64; 3], [f64; 3]) {
    let dc: [f64; 3] = std::array::from_fn(|k| coarse[k] - target[k]);
    let df: [f64; 3] = std::array::from_fn(|k| fine[k] - target[k]);
    let loss = dc.iter().chain(&df).map(|d| d * d).sum();
    (loss, dc.map(|d| 2.0 * d), df.map(|d| 2.0 * d))
}

/// Per-ray losses of one batch together with the render they came from.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    /// `|C_coarse - C|^2 + |C_fine - C|^2` for each ray.
    pub losses: Vec<f64>,
    pub render: BatchRender,
}

impl BatchLoss {
    pub fn total(&self) -> f64 {
        self.losses.iter().sum()
    }
}

/// Squared-error loss of a batch of rays and its gradient with respect to
/// both fields' parameters, accumulated into `grads_*`. Sample depths are
/// treated as constants.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_gradients<T: Real>(
    coarse: &RadianceField<T>,
    fine: &RadianceField<T>,
    rays: &[Ray],
    targets: &[[f64; 3]],
    render: &RenderConfig,
    mode: SampleMode,
    rng: &mut impl UniformSource,
    grads_coarse: &mut [T],
    grads_fine: &mut [T],
) -> Result<BatchLoss> {
    backprop(coarse, fine, targets, grads_coarse, grads_fine, |ec, ef| {
        render_batch(rays, render, mode, rng, ec, ef)
    })
}

/// As [`loss_and_gradients`] with the coarse and fine depths given.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_gradients_fixed<T: Real>(
    coarse: &RadianceField<T>,
    fine: &RadianceField<T>,
    rays: &[Ray],
    targets: &[[f64; 3]],
    coarse_samples: Vec<RaySamples>,
    fine_samples: Vec<RaySamples>,
    grads_coarse: &mut [T],
    grads_fine: &mut [T],
) -> Result<BatchLoss> {
    backprop(coarse, fine, targets, grads_coarse, grads_fine, |ec, ef| {
        render_fixed(rays, coarse_samples, fine_samples, ec, ef)
    })
}

type Eval<'a> = Box<dyn FnMut(&[Vec3], &[Vec3]) -> Result<(Vec<f64>, Vec<[f64; 3]>)> + 'a>;

fn backprop<'f, T: Real>(
    coarse: &'f RadianceField<T>,
    fine: &'f RadianceField<T>,
    targets: &[[f64; 3]],
    grads_coarse: &mut [T],
    grads_fine: &mut [T],
    render: impl FnOnce(Eval<'_>, Eval<'_>) -> Result<BatchRender>,
) -> Result<BatchLoss> {
    let mut coarse_pass = None;
    let mut fine_pass = None;
    let out = render(
        Box::new(|p, d| {
            let pass = coarse.forward(p, d)?;
            let res = unpack(pass.sigma(), pass.rgb());
            coarse_pass = Some(pass);
            Ok(res)
        }),
        Box::new(|p, d| {
            let pass = fine.forward(p, d)?;
            let res = unpack(pass.sigma(), pass.rgb());
            fine_pass = Some(pass);
            Ok(res)
        }),
    )?;
    let (coarse_pass, fine_pass) = (coarse_pass.expect("coarse pass ran"), fine_pass.expect("fine pass ran"));
    if targets.len() != out.coarse.composites.len() {
        return Err(Error::domain("need one target color per ray"));
    }

    let mut losses = Vec::with_capacity(targets.len());
    let mut up_c = Upstream::new(out.coarse.num_samples());
    let mut up_f = Upstream::new(out.fine.num_samples());
    for (r, target) in targets.iter().enumerate() {
        let (loss, gc, gf) = ray_loss(out.coarse_color(r), out.fine_color(r), *target);
        losses.push(loss);
        up_c.add_ray(&out.coarse, r, gc);
        up_f.add_ray(&out.fine, r, gf);
    }
    coarse.backward(&coarse_pass, &up_c.d_sigma(), &up_c.d_rgb(), grads_coarse)?;
    fine.backward(&fine_pass, &up_f.d_sigma(), &up_f.d_rgb(), grads_fine)?;
    Ok(BatchLoss { losses, render: out })
}

fn unpack<T: Real>(sigma: &[T], rgb: &[T]) -> (Vec<f64>, Vec<[f64; 3]>) {
    (
        sigma.iter().map(|s| s.f64()).collect(),
        rgb.chunks_exact(3)
            .map(|c| [c[0].f64(), c[1].f64(), c[2].f64()])
            .collect(),
    )
}

/// Upstream gradients of one pass, flat over samples.
struct Upstream {
    d_sigma: Vec<f64>,
    d_rgb: Vec<f64>,
}

impl Upstream {
    fn new(n: usize) -> Self {
        Self {
            d_sigma: vec![0.0; n],
            d_rgb: vec![0.0; 3 * n],
        }
    }

    fn add_ray(&mut self, pass: &PassRecord, r: usize, d_color: [f64; 3]) {
        let range = pass.ray_range(r);
        let (ds, dc) = composite_backward(
            &pass.samples[r],
            &pass.sigmas[range.clone()],
            &pass.colors[range.clone()],
            &pass.composites[r].weights,
            d_color,
        );
        self.d_sigma[range.clone()].copy_from_slice(&ds);
        for (i, g) in range.zip(dc) {
            self.d_rgb[3 * i..3 * i + 3].copy_from_slice(&g);
        }
    }

    fn d_sigma<T: Real>(&self) -> Vec<T> {
        self.d_sigma.iter().map(|v| T::of(*v)).collect()
    }

    fn d_rgb<T: Real>(&self) -> Vec<T> {
        self.d_rgb.iter().map(|v| T::of(*v)).collect()
    }
}

/// Renders one ERP view through pixel centers with midpoint depth samples.
pub fn render_view<A, B>(
    coarse: &A,
    fine: &B,
    pose: &CameraPose,
    width: usize,
    height: usize,
    t_far: f64,
    render: &RenderConfig,
) -> Result<ErpImage>
where
    A: crate::field::RadianceQuery + ?Sized,
    B: crate::field::RadianceQuery + ?Sized,
{
    let mut rays = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            rays.push(generate_ray(pose, col, row, width, height, [0.5, 0.5], 0.0, t_far)?);
        }
    }
    // Midpoint mode draws nothing from the stream.
    let mut unused = seeded(0);
    let mut pixels = Vec::with_capacity(rays.len());
    for chunk in rays.chunks(4096) {
        let out: BatchRender = render_rays(coarse, fine, chunk, render, SampleMode::Midpoint, &mut unused)?;
        pixels.extend((0..chunk.len()).map(|r| out.fine_color(r)));
    }
    ErpImage::from_pixels(width, height, pixels)
}

pub struct Trainer<T: Real> {
    cfg: TrainConfig,
    render: RenderConfig,
    coarse: RadianceField<T>,
    fine: RadianceField<T>,
    adam: AdamState<T>,
    sampler: PixelSampler,
    train: Vec<View>,
    rng: StreamRng,
    iter: usize,
}

impl<T: Real> Trainer<T> {
    /// Fields are initialized from `cfg.seed`; `field.position_scale` is
    /// replaced so that every sample point maps into `[-1, 1]^3`.
    pub fn new(cfg: TrainConfig, render: RenderConfig, field: FieldConfig, dataset: &Dataset) -> Result<Self> {
        cfg.validate()?;
        render.validate()?;
        dataset.validate()?;
        let field = FieldConfig {
            position_scale: 1.0 / dataset.scene_extent(),
            ..field
        };
        let coarse = RadianceField::new(field, cfg.seed.wrapping_mul(2).wrapping_add(1))?;
        let fine = RadianceField::new(field, cfg.seed.wrapping_mul(2).wrapping_add(2))?;
        let layout = PixelLayout::new(&dataset.train_dims())?;
        let sampler = PixelSampler::new(layout, cfg.distortion_aware, cfg.content_aware, cfg.floor_eps)?;
        let adam = AdamState::new(coarse.num_params() + fine.num_params());
        Ok(Self {
            cfg,
            render,
            coarse,
            fine,
            adam,
            sampler,
            train: dataset.train.clone(),
            rng: substream(cfg.seed, 7),
            iter: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn render_config(&self) -> &RenderConfig {
        &self.render
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn coarse(&self) -> &RadianceField<T> {
        &self.coarse
    }

    pub fn fine(&self) -> &RadianceField<T> {
        &self.fine
    }

    pub fn sampler(&self) -> &PixelSampler {
        &self.sampler
    }

    pub fn adam(&self) -> &AdamState<T> {
        &self.adam
    }

    /// One iteration; the returned record always describes a completed step.
    pub fn step(&mut self) -> Result<StepRecord> {
        let m = self.cfg.rays_per_iter;
        let pixels = self.sampler.draw_batch(m, &mut self.rng)?;
        let layout = self.sampler.layout().clone();
        let mut rays = Vec::with_capacity(m);
        let mut targets = Vec::with_capacity(m);
        for &flat in &pixels {
            let id = layout.pixel(flat);
            let view = &self.train[id.image_index];
            let jitter = [self.rng.uniform(), self.rng.uniform()];
            let (w, h) = (view.image.width(), view.image.height());
            rays.push(generate_ray(&view.pose, id.col, id.row, w, h, jitter, 0.0, view.t_far)?);
            targets.push(view.image.get(id.col, id.row));
        }

        let mut grads_c = vec![T::zero(); self.coarse.num_params()];
        let mut grads_f = vec![T::zero(); self.fine.num_params()];
        let mut losses = Vec::with_capacity(m);
        for (rc, tc) in rays.chunks(self.cfg.chunk_rays).zip(targets.chunks(self.cfg.chunk_rays)) {
            let batch = loss_and_gradients(
                &self.coarse,
                &self.fine,
                rc,
                tc,
                &self.render,
                SampleMode::Stratified,
                &mut self.rng,
                &mut grads_c,
                &mut grads_f,
            )?;
            losses.extend(batch.losses);
        }
        let loss: f64 = losses.iter().sum();
        if !loss.is_finite() {
            return Err(Error::numeric(format!("loss became {loss} at iteration {}", self.iter)));
        }

        let lr = self.cfg.lr(self.iter);
        self.adam.step(
            &mut [(self.coarse.params_mut(), &grads_c), (self.fine.params_mut(), &grads_f)],
            lr,
            &self.cfg.adam,
        )?;
        let feedback: Vec<(usize, f64)> = pixels.iter().copied().zip(losses).collect();
        self.sampler.record_losses(&feedback)?;
        self.iter += 1;
        Ok(StepRecord {
            iter: self.iter,
            loss,
            lr,
            pixels,
        })
    }

    pub fn render_view(&self, view: &View) -> Result<ErpImage> {
        render_view(
            &self.coarse,
            &self.fine,
            &view.pose,
            view.image.width(),
            view.image.height(),
            view.t_far,
            &self.render,
        )
    }

    /// Renders every view and scores it against its image.
    pub fn evaluate(&self, views: &[View]) -> Result<(Vec<ErpImage>, Vec<ViewMetrics>)> {
        let mut images = Vec::with_capacity(views.len());
        let mut metrics = Vec::with_capacity(views.len());
        for v in views {
            let img = self.render_view(v)?;
            metrics.push(evaluate_view(&img, &v.image, self.cfg.crop, self.cfg.crop_stride)?);
            images.push(img);
        }
        Ok((images, metrics))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.iter as u64,
            coarse: self.coarse.cast(),
            fine: self.fine.cast(),
            adam: Some(AdamState {
                m: self.adam.m.iter().map(|v| v.f64()).collect(),
                v: self.adam.v.iter().map(|v| v.f64()).collect(),
                step: self.adam.step,
            }),
        }
    }

    pub fn sampler_snapshot(&self) -> SamplerSnapshot {
        SamplerSnapshot {
            iteration: self.iter as u64,
            distortion_aware: self.cfg.distortion_aware,
            content_aware: self.cfg.content_aware,
            floor_eps: self.sampler.content().floor_eps(),
            dims: self.sampler.layout().dims().to_vec(),
            content: self.sampler.content().values().to_vec(),
        }
    }
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub curve: Vec<CurveRow>,
    /// Mean test metrics before the first step.
    pub initial: ViewMetrics,
    /// Mean test metrics after the last step.
    pub last: ViewMetrics,
    pub final_views: Vec<ViewMetrics>,
    pub checkpoint: Checkpoint,
    pub wall_ms: u128,
}

/// Called after every evaluation with `(iteration, mean test metrics)`.
pub type EvalHook<'a> = dyn FnMut(usize, &ViewMetrics) + 'a;

/// Runs `cfg.total_iters` steps, evaluating on the test views at the start,
/// every `eval_every` iterations and at the end. With `run_dir`, writes the
/// learning curve, sampler snapshots, heatmaps and the final checkpoint.
pub fn train<T: Real>(
    cfg: TrainConfig,
    render: RenderConfig,
    field: FieldConfig,
    dataset: &Dataset,
    run_dir: Option<&Path>,
    hook: Option<&mut EvalHook<'_>>,
) -> Result<TrainSummary> {
    let start = Instant::now();
    let mut trainer = Trainer::<T>::new(cfg, render, field, dataset)?;
    let layout = run_dir.map(RunLayout::new);
    if let Some(l) = &layout {
        l.create_dirs()?;
    }
    let mut writer = match &layout {
        Some(l) => Some(CurveWriter::create(&l.curve())?),
        None => None,
    };
    let mut hook = hook;
    let mut curve = Vec::new();
    let mut last_loss = f64::NAN;
    let mut initial = None;
    let mut last = None;
    let mut final_views = Vec::new();

    let mut evaluate = |trainer: &Trainer<T>, loss: f64| -> Result<()> {
        let (_, views) = trainer.evaluate(&dataset.test)?;
        let mean = mean_metrics(&views);
        let it = trainer.iteration();
        let row = CurveRow::new(
            it,
            &mean,
            loss,
            trainer.config().lr(it),
            if cfg.log_wall_time { start.elapsed().as_millis() as u64 } else { 0 },
        );
        if let Some(w) = writer.as_mut() {
            w.append(&row)?;
        }
        if let Some(l) = &layout {
            let snap = trainer.sampler_snapshot();
            io::save_sampler_snapshot(&l.snapshot(it), &snap)?;
            for j in 0..trainer.sampler().layout().num_images() {
                io::write_gray_png(&l.heatmap(it, j), &trainer.sampler().heatmap(j)?)?;
            }
        }
        if let Some(h) = hook.as_mut() {
            h(it, &mean);
        }
        curve.push(row);
        if initial.is_none() {
            initial = Some(mean);
        }
        last = Some(mean);
        final_views = views;
        Ok(())
    };

    evaluate(&trainer, last_loss)?;
    for _ in 0..cfg.total_iters {
        let rec = trainer.step()?;
        last_loss = rec.loss;
        let it = trainer.iteration();
        let due = cfg.eval_every > 0 && it % cfg.eval_every == 0;
        if due || it == cfg.total_iters {
            evaluate(&trainer, last_loss)?;
        }
    }
    if cfg.total_iters == 0 {
        evaluate(&trainer, last_loss)?;
    }

    let checkpoint = trainer.checkpoint();
    if let Some(l) = &layout {
        io::save_checkpoint(&l.checkpoint(), &checkpoint)?;
    }
    Ok(TrainSummary {
        curve,
        initial: initial.expect("initial evaluation ran"),
        last: last.expect("evaluation ran"),
        final_views,
        checkpoint,
        wall_ms: start.elapsed().as_millis(),
    })
}
