//! Depth-supervised three-stage optimization: a surface-rendering bootstrap,
//! volumetric training with the color branch frozen, then joint fine-tuning
//! at a lower learning rate.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::checkpoint::Checkpoint;
use crate::dataset::{Dataset, Frame, Split};
use crate::decoders::{adam_step, AdamState};
use crate::error::{Result, SvlfError};
use crate::metrics::psnr;
use crate::model::{derive_seed, Model, ModelDims};
use crate::octree::{build_octree, GridConfig, Ray, RayVoxelHit, SparseOctree, Vec3};
use crate::real::Real;
use crate::rendering::batch::{GradSink, Segment, SegmentBatch};
use crate::rendering::{composite, composite_backward, render_image};

/// Rays per parallel work item. Fixed so gradients are reduced in the same
/// order whatever the worker count.
pub const TRAIN_CHUNK: usize = 256;

pub const LOG_FILE: &str = "train_log.tsv";
pub const CHECKPOINT_NAMES: [&str; 4] = ["stage1.ckpt", "stage2.ckpt", "stage3.ckpt", "final.ckpt"];
pub const DIVERGED_CHECKPOINT: &str = "diverged.ckpt";
/// Resolved per-stage schedule written next to the log.
pub const SCHEDULE_FILE: &str = "schedule.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Epochs of the surface, frozen-color and fine-tuning stages.
    pub epochs: [usize; 3],
    /// Learning rate of the first two stages.
    pub lr: f64,
    /// Learning rate of the fine-tuning stage.
    pub lr_ft: f64,
    pub lambda_eta: f64,
    pub lambda_tau: f64,
    pub lambda_empty: f64,
    pub lambda_alpha: f64,
    /// Training image width; clamped to the dataset width.
    pub train_res: u32,
    /// Rays per optimizer step; 0 means one whole image.
    pub rays_per_step: usize,
    pub seed: u64,
    pub grid: GridConfig,
    pub model: ModelDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: [100, 150, 50],
            lr: 1e-3,
            lr_ft: 2e-4,
            lambda_eta: 1.0,
            lambda_tau: 0.01,
            lambda_empty: 0.01,
            lambda_alpha: 0.1,
            train_res: 400,
            rays_per_step: 0,
            seed: 0,
            grid: GridConfig::default(),
            model: ModelDims::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SvlfError::InvalidArgument(m));
        if !(self.lr > 0.0 && self.lr_ft > 0.0) {
            return bad(format!("learning rates must be positive ({}, {})", self.lr, self.lr_ft));
        }
        let w = self.weights();
        if ![w.eta, w.tau, w.empty, w.alpha].iter().all(|v| *v >= 0.0 && v.is_finite()) {
            return bad("loss weights must be finite and non-negative".into());
        }
        if self.train_res == 0 {
            return bad("training resolution must be positive".into());
        }
        let d = &self.model;
        if d.thickness_features == 0 || d.color_features == 0 || d.hidden == 0 {
            return bad("model dimensions must be positive".into());
        }
        self.grid.validate()
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            eta: self.lambda_eta,
            tau: self.lambda_tau,
            empty: self.lambda_empty,
            alpha: self.lambda_alpha,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub eta: f64,
    pub tau: f64,
    pub empty: f64,
    pub alpha: f64,
}

/// Ground truth for one training ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySupervision {
    pub ray: Ray,
    pub color: [f32; 3],
    /// Distance along the ray to the surface; 0 for background.
    pub depth: f64,
    pub alpha: bool,
}

impl RaySupervision {
    pub fn surface_point(&self) -> Vec3 {
        self.ray.at(self.depth)
    }
}

/// Within-voxel depth that places the estimated surface at `depth`:
/// 1 at the entry point, 0 at the exit point.
pub fn eta_gt(hit: &RayVoxelHit, depth: f64, ray: &Ray, octree: &SparseOctree) -> Result<f64> {
    let x = ray.at(depth);
    if !octree.leaf_aabb(hit.voxel_id).contains(&x, 1e-6) {
        return Err(SvlfError::SurfaceOutsideVoxel);
    }
    let len = hit.t_out - hit.t_in;
    if len <= 0.0 {
        return Ok(0.5);
    }
    Ok(((hit.t_out - depth) / len).clamp(0.0, 1.0))
}

/// Index into `hits` of the voxel containing the ground-truth surface point.
fn surface_index(sup: &RaySupervision, hits: &[RayVoxelHit], octree: &SparseOctree) -> Option<usize> {
    let id = octree.locate(&sup.surface_point())?;
    hits.iter().position(|h| h.voxel_id == id)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Supervise the voxel holding the ground-truth surface directly.
    Surface,
    /// Composite every crossed voxel; `train_color` unfreezes the color branch.
    Volumetric { train_color: bool },
}

impl Stage {
    pub fn trains_color(self) -> bool {
        !matches!(self, Stage::Volumetric { train_color: false })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchLoss {
    /// Sum of per-ray losses.
    pub loss: f64,
    pub rays: usize,
    /// Surface-stage rays whose surface voxel is not in the octree.
    pub skipped: usize,
}

impl BatchLoss {
    fn merge(&mut self, o: &BatchLoss) {
        self.loss += o.loss;
        self.rays += o.rays;
        self.skipped += o.skipped;
    }
}

enum RayPlan {
    Skip,
    Surface { start: usize, seg: usize, eta_gt: f64 },
    Volume { span: std::ops::Range<usize>, surface: Option<(usize, f64)> },
}

/// Loss over `sups` and its gradient, scaled by `scale`, added into `sink`.
pub fn batch_loss<T: Real>(
    model: &Model<T>,
    sups: &[RaySupervision],
    stage: Stage,
    w: &LossWeights,
    scale: f64,
    sink: &mut GradSink<T>,
) -> Result<BatchLoss> {
    let octree = &model.octree;
    let rays: Vec<Ray> = sups.iter().map(|s| s.ray).collect();
    let mut segments = Vec::new();
    let mut plans = Vec::with_capacity(sups.len());
    let mut hits = Vec::new();
    let mut out = BatchLoss {
        rays: sups.len(),
        ..Default::default()
    };
    for (i, sup) in sups.iter().enumerate() {
        let ray_idx = i as u32;
        match stage {
            Stage::Surface => {
                if !sup.alpha {
                    plans.push(RayPlan::Skip);
                    continue;
                }
                octree.traverse_into(&sup.ray, &mut hits);
                let Some(k) = surface_index(sup, &hits, octree) else {
                    out.skipped += 1;
                    plans.push(RayPlan::Skip);
                    continue;
                };
                let eta = eta_gt(&hits[k], sup.depth, &sup.ray, octree)?;
                let start = segments.len();
                segments.extend(hits[..=k].iter().enumerate().map(|(j, &hit)| Segment {
                    ray: ray_idx,
                    hit,
                    color: j == k,
                }));
                plans.push(RayPlan::Surface {
                    start,
                    seg: segments.len() - 1,
                    eta_gt: eta,
                });
            }
            Stage::Volumetric { .. } => {
                octree.traverse_into(&sup.ray, &mut hits);
                let start = segments.len();
                let surface = if sup.alpha {
                    match surface_index(sup, &hits, octree) {
                        Some(k) => Some((start + k, eta_gt(&hits[k], sup.depth, &sup.ray, octree)?)),
                        None => None,
                    }
                } else {
                    None
                };
                segments.extend(hits.iter().map(|&hit| Segment {
                    ray: ray_idx,
                    hit,
                    color: true,
                }));
                plans.push(RayPlan::Volume {
                    span: start..segments.len(),
                    surface,
                });
            }
        }
    }
    let batch = SegmentBatch::forward(model, &rays, segments)?;
    let n = batch.len();
    let mut d_tau = vec![T::zero(); n];
    let mut d_eta = vec![T::zero(); n];
    let mut d_rgb = vec![[T::zero(); 3]; batch.color_rows()];
    let s = T::lit(scale);
    for (sup, plan) in sups.iter().zip(&plans) {
        match plan {
            RayPlan::Skip => {}
            &RayPlan::Surface { start, seg, eta_gt } => {
                let mut loss = 0.0;
                for j in start..seg {
                    // Empty space in front of the surface.
                    let e = (-batch.tau[j].as_f64()).exp();
                    loss += w.empty * (1.0 - e) * (1.0 - e);
                    d_tau[j] = s * T::lit(w.empty * 2.0 * (1.0 - e) * e);
                }
                let row = batch.color_row[seg].expect("surface voxel has a color row") as usize;
                let c = batch.rgb[row];
                for k in 0..3 {
                    let d = c[k].as_f64() - sup.color[k] as f64;
                    loss += d * d;
                    d_rgb[row][k] = s * T::lit(2.0 * d);
                }
                let de = batch.eta[seg].as_f64() - eta_gt;
                loss += w.eta * de * de;
                d_eta[seg] = s * T::lit(2.0 * w.eta * de);
                let e2 = (-2.0 * batch.tau[seg].as_f64()).exp();
                loss += w.tau * e2;
                d_tau[seg] = s * T::lit(-2.0 * w.tau * e2);
                out.loss += loss;
            }
            RayPlan::Volume { span, surface } => {
                let samples: Vec<(T, [T; 3])> = span
                    .clone()
                    .map(|j| (batch.tau[j], batch.rgb[batch.color_row[j].expect("color row") as usize]))
                    .collect();
                let comp = composite(&samples)?;
                let alpha_gt = if sup.alpha { 1.0 } else { 0.0 };
                let mut loss = 0.0;
                let mut d_color = [T::zero(); 3];
                for k in 0..3 {
                    let d = comp.color[k].as_f64() - sup.color[k] as f64;
                    loss += d * d;
                    d_color[k] = s * T::lit(2.0 * d);
                }
                let da = comp.alpha.as_f64() - alpha_gt;
                loss += w.alpha * da * da;
                let d_alpha = s * T::lit(2.0 * w.alpha * da);
                let (g_tau, g_c) = composite_backward(&samples, &comp, d_color, d_alpha);
                for (o, j) in span.clone().enumerate() {
                    d_tau[j] = g_tau[o];
                    let row = batch.color_row[j].expect("color row") as usize;
                    d_rgb[row] = g_c[o];
                }
                if let Some((j, eta_gt)) = *surface {
                    let de = batch.eta[j].as_f64() - eta_gt;
                    loss += w.eta * de * de;
                    d_eta[j] = s * T::lit(2.0 * w.eta * de);
                }
                out.loss += loss;
            }
        }
    }
    batch.backward(model, &d_tau, &d_eta, &d_rgb, stage.trains_color(), sink)?;
    Ok(out)
}

/// Loss of a single ray and its gradient.
pub struct RayLoss<T> {
    pub loss: f64,
    pub grads: GradSink<T>,
}

/// Surface-stage loss of one foreground ray; `None` when the ray's surface
/// voxel is not occupied.
pub fn surface_loss<T: Real>(sup: &RaySupervision, model: &Model<T>, w: &LossWeights) -> Result<Option<RayLoss<T>>> {
    let mut grads = GradSink::for_model(model);
    let b = batch_loss(model, std::slice::from_ref(sup), Stage::Surface, w, 1.0, &mut grads)?;
    if b.skipped > 0 || !sup.alpha {
        return Ok(None);
    }
    Ok(Some(RayLoss { loss: b.loss, grads }))
}

/// Composited photometric, alpha and within-voxel depth loss of one ray.
pub fn volumetric_loss<T: Real>(
    sup: &RaySupervision,
    model: &Model<T>,
    w: &LossWeights,
    color_frozen: bool,
) -> Result<RayLoss<T>> {
    let mut grads = GradSink::for_model(model);
    let stage = Stage::Volumetric {
        train_color: !color_frozen,
    };
    let b = batch_loss(model, std::slice::from_ref(sup), stage, w, 1.0, &mut grads)?;
    Ok(RayLoss { loss: b.loss, grads })
}

/// Adam moments for the four parameter groups.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub thickness_mlp: AdamState<T>,
    pub color_mlp: AdamState<T>,
    pub thickness_features: AdamState<T>,
    pub color_features: AdamState<T>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(model: &Model<T>) -> Self {
        Self {
            thickness_mlp: AdamState::new(model.decoders.thickness.params.len()),
            color_mlp: AdamState::new(model.decoders.color.params.len()),
            thickness_features: AdamState::new(model.thickness_features.data.len()),
            color_features: AdamState::new(model.color_features.data.len()),
        }
    }

    /// Applies the model's accumulated gradients. Frozen color groups are not
    /// touched at all, moments included.
    pub fn step(&mut self, model: &mut Model<T>, lr: f64, train_color: bool) -> Result<()> {
        let d = &mut model.decoders;
        adam_step(&mut self.thickness_mlp, &mut d.thickness.params, &d.thickness.grad, lr)?;
        let f = &mut model.thickness_features;
        adam_step(&mut self.thickness_features, &mut f.data, &f.grad, lr)?;
        if train_color {
            adam_step(&mut self.color_mlp, &mut d.color.params, &d.color.grad, lr)?;
            let f = &mut model.color_features;
            adam_step(&mut self.color_features, &mut f.data, &f.grad, lr)?;
        }
        Ok(())
    }
}

/// Rays of one training frame at the training resolution.
pub struct TrainFrame {
    pub name: String,
    pub rays: Vec<RaySupervision>,
}

/// Training size for a `width x height` dataset frame: `train_res` wide,
/// same aspect, never larger than the frame.
pub fn train_size(train_res: u32, width: u32, height: u32) -> (u32, u32) {
    if train_res >= width {
        return (width, height);
    }
    let h = ((train_res as f64 * height as f64 / width as f64).round() as u32).max(1);
    (train_res, h)
}

/// Nearest-neighbour subsample of a frame: each training pixel reuses the
/// ray and ground truth of the source pixel under its center.
pub fn frame_rays(frame: &Frame, train_res: u32) -> TrainFrame {
    let (w, h) = (frame.rgb.width, frame.rgb.height);
    let (tw, th) = train_size(train_res, w as u32, h as u32);
    let mut rays = Vec::with_capacity((tw * th) as usize);
    for ty in 0..th as usize {
        let y = ((ty as f64 + 0.5) * h as f64 / th as f64) as usize;
        for tx in 0..tw as usize {
            let x = ((tx as f64 + 0.5) * w as f64 / tw as f64) as usize;
            let p = frame.rgb.pixel(x, y);
            let depth = frame.depth.pixel(x, y)[0] as f64;
            let fg = frame.mask.pixel(x, y)[0] > 0.5 && depth > 0.0;
            rays.push(RaySupervision {
                ray: frame.camera.pixel_ray(x as u32, y as u32),
                color: [p[0], p[1], p[2]],
                depth: if fg { depth } else { 0.0 },
                alpha: fg,
            });
        }
    }
    TrainFrame {
        name: frame.name.clone(),
        rays,
    }
}

/// Back-projects every foreground depth pixel of the training frames.
pub fn backproject(frames: &[&Frame]) -> Vec<Vec3> {
    let mut pts = Vec::new();
    for f in frames {
        for y in 0..f.depth.height {
            for x in 0..f.depth.width {
                let d = f.depth.pixel(x, y)[0];
                if d > 0.0 && f.mask.pixel(x, y)[0] > 0.5 {
                    pts.push(f.camera.pixel_ray(x as u32, y as u32).at(d as f64));
                }
            }
        }
    }
    pts
}

/// Mean PSNR of renders of `frames` at their native size; NaN without frames.
pub fn mean_psnr<T: Real>(model: &Model<T>, frames: &[&Frame]) -> Result<f64> {
    if frames.is_empty() {
        return Ok(f64::NAN);
    }
    let mut sum = 0.0;
    for f in frames {
        let cam: &Camera = &f.camera;
        let out = render_image(model, cam, f.rgb.width, f.rgb.height)?;
        sum += psnr(&out.rgb, &f.rgb)?;
    }
    Ok(sum / frames.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: usize,
    pub epoch: usize,
    /// Mean per-ray loss.
    pub loss: f64,
    pub val_psnr: f64,
    pub seconds: f64,
    pub lr: f64,
    pub skipped_rays: usize,
}

impl EpochRecord {
    pub fn tsv(&self) -> String {
        format!(
            "{}\t{}\t{:.6e}\t{:.4}\t{:.3}",
            self.stage, self.epoch, self.loss, self.val_psnr, self.seconds
        )
    }
}

/// One stage of the schedule as it was run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stage: usize,
    pub epochs: usize,
    pub lr: f64,
    pub train_color: bool,
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub optimizer: OptimizerState<f32>,
    pub epochs: Vec<EpochRecord>,
    /// Stage-boundary checkpoints followed by the final one.
    pub checkpoints: Vec<PathBuf>,
    /// Back-projected depth samples outside the scene box.
    pub dropped_points: usize,
}

/// Builds the octree from the training frames' depth and a fresh model.
pub fn init_model(config: &TrainConfig, dataset: &Dataset) -> Result<Model<f32>> {
    let train: Vec<&Frame> = dataset.split(Split::Train).collect();
    Ok(init_model_from(config, &train)?.0)
}

fn init_model_from(config: &TrainConfig, train: &[&Frame]) -> Result<(Model<f32>, usize)> {
    if train.is_empty() {
        return Err(SvlfError::InvalidDataset("no training frames".into()));
    }
    let (octree, dropped) = build_octree(&backproject(train), config.grid)?;
    Ok((Model::init(octree, config.model, config.seed)?, dropped))
}

/// One optimizer step over `rays`.
fn train_step(
    model: &mut Model<f32>,
    opt: &mut OptimizerState<f32>,
    rays: &[RaySupervision],
    stage: Stage,
    w: &LossWeights,
    lr: f64,
) -> Result<BatchLoss> {
    model.zero_grad();
    let scale = 1.0 / rays.len() as f64;
    let m: &Model<f32> = model;
    let parts: Vec<(GradSink<f32>, BatchLoss)> = rays
        .par_chunks(TRAIN_CHUNK)
        .map(|chunk| {
            let mut sink = GradSink::for_model(m);
            let l = batch_loss(m, chunk, stage, w, scale, &mut sink)?;
            Ok((sink, l))
        })
        .collect::<Result<_>>()?;
    let mut total = BatchLoss::default();
    for (sink, l) in &parts {
        sink.apply_to(model);
        total.merge(l);
    }
    if total.loss.is_finite() {
        opt.step(model, lr, stage.trains_color())?;
    }
    Ok(total)
}

/// Runs all three stages, writing the log and checkpoints into `out_dir`.
pub fn train(config: &TrainConfig, dataset: &Dataset, out_dir: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| SvlfError::io(out_dir, e))?;
    let train: Vec<&Frame> = dataset.split(Split::Train).collect();
    let val: Vec<&Frame> = dataset.split(Split::Val).collect();
    let (mut model, dropped) = init_model_from(config, &train)?;
    log::info!(
        "octree {}^3: {} leaves, {} vertices ({dropped} depth samples outside the scene box)",
        config.grid.resolution,
        model.octree.leaf_count(),
        model.octree.vertex_count()
    );
    let frames: Vec<TrainFrame> = train.iter().map(|f| frame_rays(f, config.train_res)).collect();
    let mut opt = OptimizerState::new(&model);
    let w = config.weights();

    let log_path = out_dir.join(LOG_FILE);
    let mut log_file = fs::File::create(&log_path).map_err(|e| SvlfError::io(&log_path, e))?;
    writeln!(log_file, "stage\tepoch\tloss\tval_psnr\tseconds").map_err(|e| SvlfError::io(&log_path, e))?;

    let stages = [
        (Stage::Surface, config.lr),
        (Stage::Volumetric { train_color: false }, config.lr),
        (Stage::Volumetric { train_color: true }, config.lr_ft),
    ];
    let schedule: Vec<StagePlan> = stages
        .iter()
        .enumerate()
        .map(|(si, &(stage, lr))| StagePlan {
            stage: si + 1,
            epochs: config.epochs[si],
            lr,
            train_color: stage.trains_color(),
        })
        .collect();
    let schedule_path = out_dir.join(SCHEDULE_FILE);
    let text = serde_json::to_string_pretty(&schedule).expect("schedule serializes") + "\n";
    fs::write(&schedule_path, text).map_err(|e| SvlfError::io(&schedule_path, e))?;

    let mut records = Vec::new();
    let mut checkpoints = Vec::new();
    let mut global_epoch = 0u64;
    for (si, &(stage, lr)) in stages.iter().enumerate() {
        for epoch in 1..=config.epochs[si] {
            let start = Instant::now();
            let mut order: Vec<usize> = (0..frames.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1000 + global_epoch));
            order.shuffle(&mut rng);
            global_epoch += 1;
            let mut total = BatchLoss::default();
            for &fi in &order {
                let rays = &frames[fi].rays;
                let step = if config.rays_per_step == 0 { rays.len() } else { config.rays_per_step };
                for part in rays.chunks(step.max(1)) {
                    total.merge(&train_step(&mut model, &mut opt, part, stage, &w, lr)?);
                }
            }
            let loss = total.loss / total.rays.max(1) as f64;
            if !loss.is_finite() {
                let path = out_dir.join(DIVERGED_CHECKPOINT);
                Checkpoint::new(&model, &opt, si + 1, epoch).write(&path)?;
                return Err(SvlfError::Diverged {
                    stage: si + 1,
                    epoch,
                    checkpoint: path,
                });
            }
            let val_psnr = mean_psnr(&model, &val)?;
            let rec = EpochRecord {
                stage: si + 1,
                epoch,
                loss,
                val_psnr,
                seconds: start.elapsed().as_secs_f64(),
                lr,
                skipped_rays: total.skipped,
            };
            log::info!(
                "stage {} epoch {epoch}: loss {loss:.5e}, val psnr {val_psnr:.3}, {:.1}s",
                si + 1,
                rec.seconds
            );
            writeln!(log_file, "{}", rec.tsv()).map_err(|e| SvlfError::io(&log_path, e))?;
            records.push(rec);
        }
        let path = out_dir.join(CHECKPOINT_NAMES[si]);
        Checkpoint::new(&model, &opt, si + 1, config.epochs[si]).write(&path)?;
        checkpoints.push(path);
    }
    let path = out_dir.join(CHECKPOINT_NAMES[3]);
    Checkpoint::new(&model, &opt, 3, config.epochs[2]).write(&path)?;
    checkpoints.push(path);
    Ok(TrainOutcome {
        model,
        optimizer: opt,
        epochs: records,
        checkpoints,
        dropped_points: dropped,
    })
}
