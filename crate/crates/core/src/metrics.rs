//! Image and depth reconstruction metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SvlfError};
use crate::image_buf::ImageBuf;

/// PSNR reported for a zero-error image.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_shape(pred: &ImageBuf, gt: &ImageBuf) -> Result<()> {
    if !pred.same_shape(gt) {
        return Err(SvlfError::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            pred.width, pred.height, pred.channels, gt.width, gt.height, gt.channels
        )));
    }
    Ok(())
}

pub fn mse(pred: &ImageBuf, gt: &ImageBuf) -> Result<f64> {
    check_shape(pred, gt)?;
    if pred.data.is_empty() {
        return Err(SvlfError::ImageTooSmall("empty image".into()));
    }
    let sum: f64 = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / pred.data.len() as f64)
}

/// `10 log10(1 / MSE)` over all channels, capped at [`PSNR_CAP`].
pub fn psnr(pred: &ImageBuf, gt: &ImageBuf) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, gt)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

fn gaussian_kernel() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let x = i as f64 - half;
            (-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-region Gaussian filter of a single-channel plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let ow = w + 1 - n;
    let oh = h + 1 - n;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// averaged over valid window positions and then over channels.
pub fn ssim(pred: &ImageBuf, gt: &ImageBuf) -> Result<f64> {
    check_shape(pred, gt)?;
    let (w, h) = (pred.width, pred.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(SvlfError::ImageTooSmall(format!(
            "{w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mut total = 0.0;
    for c in 0..pred.channels {
        let a: Vec<f64> = pred.channel(c).data.iter().map(|&v| v as f64).collect();
        let b: Vec<f64> = gt.channel(c).data.iter().map(|&v| v as f64).collect();
        let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let mu_a = filter_valid(&a, w, h, &k);
        let mu_b = filter_valid(&b, w, h, &k);
        let s_aa = filter_valid(&aa, w, h, &k);
        let s_bb = filter_valid(&bb, w, h, &k);
        let s_ab = filter_valid(&ab, w, h, &k);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = s_aa[i] - ma * ma;
            let vb = s_bb[i] - mb * mb;
            let cov = s_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / pred.channels as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthErrors {
    pub rmse: f64,
    pub mae: f64,
    /// Number of ground-truth foreground pixels compared.
    pub pixels: usize,
    /// Set when the mask selected no pixels; both errors are then 0.
    pub empty_mask: bool,
}

/// Depth RMSE and MAE over pixels where `gt_mask` is set (> 0.5).
pub fn depth_errors(pred: &ImageBuf, gt: &ImageBuf, gt_mask: &ImageBuf) -> Result<DepthErrors> {
    check_shape(pred, gt)?;
    check_shape(gt, gt_mask)?;
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut n = 0usize;
    for ((&p, &g), &m) in pred.data.iter().zip(&gt.data).zip(&gt_mask.data) {
        if m > 0.5 {
            let d = p as f64 - g as f64;
            sq += d * d;
            abs += d.abs();
            n += 1;
        }
    }
    if n == 0 {
        log::warn!("depth metrics requested on an empty mask");
        return Ok(DepthErrors {
            rmse: 0.0,
            mae: 0.0,
            pixels: 0,
            empty_mask: true,
        });
    }
    Ok(DepthErrors {
        rmse: (sq / n as f64).sqrt(),
        mae: abs / n as f64,
        pixels: n,
        empty_mask: false,
    })
}

/// Metrics for one rendered frame against its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub frame: String,
    pub psnr: f64,
    pub ssim: f64,
    pub depth_rmse: f64,
    pub depth_mae: f64,
    pub depth_rmse_e3: f64,
    pub depth_mae_e3: f64,
    pub pixels: usize,
    pub depth_pixels: usize,
    pub empty_mask: bool,
}

impl MetricReport {
    pub fn evaluate(
        frame: impl Into<String>,
        rgb: &ImageBuf,
        gt_rgb: &ImageBuf,
        depth: &ImageBuf,
        gt_depth: &ImageBuf,
        gt_mask: &ImageBuf,
    ) -> Result<Self> {
        let d = depth_errors(depth, gt_depth, gt_mask)?;
        Ok(Self {
            frame: frame.into(),
            psnr: psnr(rgb, gt_rgb)?,
            ssim: ssim(rgb, gt_rgb)?,
            depth_rmse: d.rmse,
            depth_mae: d.mae,
            depth_rmse_e3: d.rmse * 1e3,
            depth_mae_e3: d.mae * 1e3,
            pixels: rgb.pixel_count(),
            depth_pixels: d.pixels,
            empty_mask: d.empty_mask,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation; zeros for an empty slice.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub frames: usize,
    pub psnr: MeanStd,
    pub ssim: MeanStd,
    pub depth_rmse: MeanStd,
    pub depth_mae: MeanStd,
    pub depth_rmse_e3: MeanStd,
    pub depth_mae_e3: MeanStd,
}

impl MetricSummary {
    pub fn of(reports: &[MetricReport]) -> Self {
        let col = |f: fn(&MetricReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
        Self {
            frames: reports.len(),
            psnr: col(|r| r.psnr),
            ssim: col(|r| r.ssim),
            depth_rmse: col(|r| r.depth_rmse),
            depth_mae: col(|r| r.depth_mae),
            depth_rmse_e3: col(|r| r.depth_rmse_e3),
            depth_mae_e3: col(|r| r.depth_mae_e3),
        }
    }
}

/// Tab-separated table: a header, one row per frame, then `mean` and `std` rows.
pub fn report_tsv(reports: &[MetricReport]) -> String {
    let mut s = String::from("frame\tpsnr\tssim\tdepth_rmse_e3\tdepth_mae_e3\tdepth_pixels\n");
    for r in reports {
        s += &format!(
            "{}\t{:.4}\t{:.5}\t{:.4}\t{:.4}\t{}\n",
            r.frame, r.psnr, r.ssim, r.depth_rmse_e3, r.depth_mae_e3, r.depth_pixels
        );
    }
    let m = MetricSummary::of(reports);
    s += &format!(
        "mean\t{:.4}\t{:.5}\t{:.4}\t{:.4}\t\n",
        m.psnr.mean, m.ssim.mean, m.depth_rmse_e3.mean, m.depth_mae_e3.mean
    );
    s += &format!(
        "std\t{:.4}\t{:.5}\t{:.4}\t{:.4}\t\n",
        m.psnr.std, m.ssim.std, m.depth_rmse_e3.std, m.depth_mae_e3.std
    );
    s
}
