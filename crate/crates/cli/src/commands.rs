use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use svlf::camera::{Camera, Intrinsics};
use svlf::checkpoint::Checkpoint;
use svlf::dataset::{self, read_manifest, Dataset, Manifest, Split};
use svlf::metrics::{report_tsv, MetricReport, MetricSummary};
use svlf::model::derive_seed;
use svlf::rendering::{render_image, RenderStats};
use svlf::scenegen::{generate_dataset, random_scene, sample_free_cameras, sample_hemisphere_cameras};
use svlf::training::{self, TrainOutcome};

use crate::config::{self, echo, parse_epochs, CameraMode, GenConfig, RunConfig};
use crate::{usage, EvalArgs, Failure, GenArgs, RenderArgs, TrainArgs};

fn parse_split(s: &str) -> Result<Option<Split>, Failure> {
    match s {
        "train" => Ok(Some(Split::Train)),
        "val" => Ok(Some(Split::Val)),
        "test" => Ok(Some(Split::Test)),
        "all" => Ok(None),
        _ => usage(format!("unknown split `{s}` (expected train, val, test or all)")),
    }
}

fn require_dir(path: &Path, what: &str) -> Result<(), Failure> {
    if !path.is_dir() {
        return usage(format!("{what} {} does not exist", path.display()));
    }
    Ok(())
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if !path.is_file() {
        return usage(format!("{what} {} does not exist", path.display()));
    }
    Ok(())
}

pub fn gen(a: GenArgs) -> Result<(), Failure> {
    let mut c: GenConfig = config::load(a.config.as_deref())?;
    c.out = a.out.or(c.out);
    c.seed = a.seed.unwrap_or(c.seed);
    c.views = a.views.unwrap_or(c.views);
    c.res = a.res.unwrap_or(c.res);
    c.primitives = a.primitives.or(c.primitives);
    c.radius = a.radius.unwrap_or(c.radius);
    c.fov = a.fov.unwrap_or(c.fov);
    if let Some(m) = a.cameras {
        c.cameras = match m.as_str() {
            "hemisphere" => CameraMode::Hemisphere,
            "free" => CameraMode::Free,
            _ => return usage(format!("unknown camera mode `{m}` (expected hemisphere or free)")),
        };
    }
    let Some(out) = c.out.clone() else {
        return usage("--out is required");
    };
    if c.views == 0 {
        return usage("views must be ≥ 1");
    }
    if c.res == 0 {
        return usage("res must be ≥ 1");
    }
    if !(c.fov > 0.0 && c.fov < 180.0) || !(c.radius > 0.0) {
        return usage("fov must lie in (0, 180) degrees and radius must be positive");
    }
    let primitives = c.primitives.unwrap_or(3 + (derive_seed(c.seed, 7) % 4) as usize);
    c.primitives = Some(primitives);

    let scene = random_scene(primitives, derive_seed(c.seed, 0));
    let k = Intrinsics::from_fov(c.res, c.res, c.fov);
    let cam_seed = derive_seed(c.seed, 1);
    let cameras = match c.cameras {
        CameraMode::Hemisphere => sample_hemisphere_cameras(c.views, c.radius, cam_seed, k, c.res, c.res)?,
        CameraMode::Free => sample_free_cameras(&scene, c.views, cam_seed, k, c.res, c.res)?,
    };
    let manifest = generate_dataset(&scene, &cameras, &out)?;
    echo(&out, "gen_config.json", &c)?;
    echo(&out, "analytic_scene.json", &scene)?;
    let count = |s| manifest.frames.iter().filter(|f| f.split == s).count();
    println!(
        "wrote {} frames ({} train / {} val / {} test) with {primitives} primitives to {}",
        manifest.frames.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        out.display()
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let mut c: RunConfig = config::load(a.config.as_deref())?;
    c.data = a.data.or(c.data);
    c.out = a.out.or(c.out);
    let t = &mut c.train;
    if let Some(e) = &a.epochs {
        t.epochs = parse_epochs(e)?;
    }
    t.lr = a.lr.unwrap_or(t.lr);
    t.lr_ft = a.lr_ft.unwrap_or(t.lr_ft);
    t.train_res = a.res.unwrap_or(t.train_res);
    t.grid.resolution = a.grid_res.unwrap_or(t.grid.resolution);
    t.grid.dilation = a.dilation.unwrap_or(t.grid.dilation);
    t.seed = a.seed.unwrap_or(t.seed);
    t.rays_per_step = a.rays_per_step.unwrap_or(t.rays_per_step);
    t.lambda_eta = a.lambda_eta.unwrap_or(t.lambda_eta);
    t.lambda_tau = a.lambda_tau.unwrap_or(t.lambda_tau);
    t.lambda_empty = a.lambda_empty.unwrap_or(t.lambda_empty);
    t.lambda_alpha = a.lambda_alpha.unwrap_or(t.lambda_alpha);
    let (Some(data), Some(out)) = (c.data.clone(), c.out.clone()) else {
        return usage("--data and --out are required");
    };
    require_dir(&data, "dataset")?;
    require_file(&data.join(dataset::MANIFEST), "manifest")?;
    if let Err(e) = c.train.validate() {
        return usage(e.to_string());
    }
    let ds = Dataset::load(&data)?;
    echo(&out, "config.json", &c)?;
    let TrainOutcome {
        epochs,
        checkpoints,
        model,
        ..
    } = training::train(&c.train, &ds, &out)?;
    if let Some(last) = epochs.last() {
        println!(
            "stage {} epoch {}: loss {:.5e}, validation PSNR {:.3} dB",
            last.stage, last.epoch, last.loss, last.val_psnr
        );
    }
    println!(
        "octree {} leaves, {} vertices; checkpoints: {}",
        model.octree.leaf_count(),
        model.octree.vertex_count(),
        checkpoints
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}

fn select<'a>(manifest: &'a Manifest, split: Option<Split>, names: &[String]) -> Result<Vec<&'a dataset::FrameEntry>, Failure> {
    for n in names {
        if !manifest.frames.iter().any(|f| &f.name == n) {
            return usage(format!("no frame named `{n}` in the dataset"));
        }
    }
    Ok(manifest
        .frames
        .iter()
        .filter(|f| if names.is_empty() { split.map_or(true, |s| f.split == s) } else { names.contains(&f.name) })
        .collect())
}

pub fn render(a: RenderArgs) -> Result<(), Failure> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_dir(&a.data, "dataset")?;
    let split = parse_split(&a.split)?;
    let manifest = read_manifest(&a.data)?;
    let frames = select(&manifest, split, &a.frames)?;
    let (w0, h0) = (manifest.resolution.width, manifest.resolution.height);
    let (w, h) = match a.width {
        Some(0) => return usage("--width must be ≥ 1"),
        Some(w) => (w, ((w as f64 * h0 as f64 / w0 as f64).round() as u32).max(1)),
        None => (w0, h0),
    };
    let ck = Checkpoint::read(&a.checkpoint)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    echo(&a.out, "render_config.json", &a)?;
    for f in &frames {
        let cam: Camera = f.camera(&manifest)?;
        let r = render_image(&ck.model, &cam, w as usize, h as usize)?;
        r.rgb.write_png(&a.out.join(format!("{}_rgb.png", f.name)))?;
        r.alpha.write_png(&a.out.join(format!("{}_alpha.png", f.name)))?;
        dataset::write_depth(&a.out.join(format!("{}_depth.f32", f.name)), &r.depth)?;
    }
    println!("rendered {} frames at {w}x{h} to {}", frames.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    split: &'a str,
    summary: MetricSummary,
    frames: &'a [MetricReport],
}

pub fn eval(a: EvalArgs) -> Result<(), Failure> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_dir(&a.data, "dataset")?;
    let split = parse_split(&a.split)?;
    let ds = Dataset::load(&a.data)?;
    let ck = Checkpoint::read(&a.checkpoint)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    echo(&a.out, "eval_config.json", &a)?;
    let mut reports = Vec::new();
    for f in ds.frames.iter().filter(|f| split.map_or(true, |s| f.split == s)) {
        let r = render_image(&ck.model, &f.camera, f.rgb.width, f.rgb.height)?;
        reports.push(MetricReport::evaluate(&f.name, &r.rgb, &f.rgb, &r.depth, &f.depth, &f.mask)?);
    }
    if reports.is_empty() {
        return usage(format!("the {} split has no frames", a.split));
    }
    let summary = MetricSummary::of(&reports);
    fs::write(a.out.join("metrics.tsv"), report_tsv(&reports)).context("writing metrics.tsv")?;
    let json = EvalOutput {
        split: &a.split,
        summary: summary.clone(),
        frames: &reports,
    };
    echo(&a.out, "metrics.json", &json)?;
    println!("frames\t{}", summary.frames);
    println!("psnr\t{:.4} ± {:.4}", summary.psnr.mean, summary.psnr.std);
    println!("ssim\t{:.5} ± {:.5}", summary.ssim.mean, summary.ssim.std);
    println!("depth_rmse_e3\t{:.4} ± {:.4}", summary.depth_rmse_e3.mean, summary.depth_rmse_e3.std);
    println!("depth_mae_e3\t{:.4} ± {:.4}", summary.depth_mae_e3.mean, summary.depth_mae_e3.std);
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub frames: usize,
    pub mean_frame_ms: f64,
    pub rays_per_second: f64,
    pub rays: u64,
    pub foreground_rays: u64,
    pub traversal_hits: u64,
    pub thickness_queries: u64,
    pub color_queries: u64,
    /// Voxel evaluations (one thickness and one color query each) per ray.
    pub queries_per_ray: f64,
    /// The same over rays whose ground-truth pixel is foreground.
    pub queries_per_foreground_ray: f64,
    pub traversal_hits_per_foreground_ray: f64,
    pub query_count_matches_traversal: bool,
}

pub fn bench(a: EvalArgs) -> Result<(), Failure> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_dir(&a.data, "dataset")?;
    let split = parse_split(&a.split)?;
    let ds = Dataset::load(&a.data)?;
    let ck = Checkpoint::read(&a.checkpoint)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    echo(&a.out, "bench_config.json", &a)?;
    let mut stats = RenderStats::default();
    let mut seconds = 0.0;
    let mut frames = 0;
    let mut fg_rays = 0u64;
    let mut fg_hits = 0u64;
    for f in ds.frames.iter().filter(|f| split.map_or(true, |s| f.split == s)) {
        let start = Instant::now();
        let r = render_image(&ck.model, &f.camera, f.rgb.width, f.rgb.height)?;
        seconds += start.elapsed().as_secs_f64();
        frames += 1;
        stats.merge(&r.stats);
        for (&h, &m) in r.hit_counts.iter().zip(&f.mask.data) {
            if m > 0.5 {
                fg_rays += 1;
                fg_hits += h as u64;
            }
        }
    }
    if frames == 0 {
        return usage(format!("the {} split has no frames", a.split));
    }
    let per = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    // Every traversal hit costs exactly one query of each decoder, so the
    // per-ray query count over foreground rays is their traversal length.
    let report = BenchReport {
        frames,
        mean_frame_ms: 1e3 * seconds / frames as f64,
        rays_per_second: if seconds > 0.0 { stats.rays as f64 / seconds } else { 0.0 },
        rays: stats.rays,
        foreground_rays: fg_rays,
        traversal_hits: stats.traversal_hits,
        thickness_queries: stats.thickness_queries,
        color_queries: stats.color_queries,
        queries_per_ray: per(stats.thickness_queries, stats.rays),
        queries_per_foreground_ray: per(fg_hits, fg_rays),
        traversal_hits_per_foreground_ray: per(fg_hits, fg_rays),
        query_count_matches_traversal: stats.thickness_queries == stats.traversal_hits
            && stats.color_queries == stats.traversal_hits,
    };
    echo(&a.out, "bench.json", &report)?;
    println!("frames\t{}", report.frames);
    println!("mean_frame_ms\t{:.2}", report.mean_frame_ms);
    println!("rays_per_second\t{:.0}", report.rays_per_second);
    println!("queries_per_ray\t{:.3}", report.queries_per_ray);
    println!("queries_per_foreground_ray\t{:.3}", report.queries_per_foreground_ray);
    println!("traversal_hits\t{}", report.traversal_hits);
    println!("thickness_queries\t{}", report.thickness_queries);
    println!("color_queries\t{}", report.color_queries);
    println!("query_count_matches_traversal\t{}", report.query_count_matches_traversal);
    Ok(())
}
