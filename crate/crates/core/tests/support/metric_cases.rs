//! Closed-form metric cases, shared by the core tests and the acceptance suite.
//! Inputs are dyadic so every expected value is exact in floating point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svlf::image_buf::ImageBuf;
use svlf::metrics::{depth_errors, psnr, psnr_from_mse, ssim, PSNR_CAP, SSIM_K1};

fn filled(w: usize, h: usize, c: usize, v: f32) -> ImageBuf {
    ImageBuf::from_data(w, h, c, vec![v; w * h * c]).unwrap()
}

fn random(w: usize, h: usize, c: usize, seed: u64) -> ImageBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageBuf::from_data(w, h, c, (0..w * h * c).map(|_| rng.gen()).collect()).unwrap()
}

/// Depth values on a 1/16 grid with a mask covering every third pixel.
fn depth_case() -> (ImageBuf, ImageBuf, ImageBuf) {
    let gt = ImageBuf::from_data(8, 8, 1, (0..64).map(|i| 1.0 + (i % 16) as f32 / 16.0).collect()).unwrap();
    let mask = ImageBuf::from_data(8, 8, 1, (0..64).map(|i| (i % 3 == 0) as u8 as f32).collect()).unwrap();
    let pred = ImageBuf::from_data(
        8,
        8,
        1,
        gt.data
            .iter()
            .zip(&mask.data)
            .enumerate()
            .map(|(i, (&g, &m))| match (m > 0.5, i % 2) {
                (true, 0) => g + 0.125,
                (true, _) => g - 0.125,
                // Unmasked pixels are ignored whatever they hold.
                (false, _) => 50.0,
            })
            .collect(),
    )
    .unwrap();
    (pred, gt, mask)
}

/// Each case's name and whether it holds.
pub fn cases() -> Vec<(&'static str, bool)> {
    let a = random(19, 23, 3, 1);
    let (pred, gt, mask) = depth_case();
    let d = depth_errors(&pred, &gt, &mask).unwrap();
    let empty = depth_errors(&pred, &gt, &filled(8, 8, 1, 0.0)).unwrap();
    let c1 = SSIM_K1 * SSIM_K1;
    let (x, y) = (0.25f64, 0.75f64);
    let ssim_const = (2.0 * x * y + c1) / (x * x + y * y + c1);
    vec![
        ("psnr of identical images is the cap", psnr(&a, &a).unwrap() == PSNR_CAP),
        ("psnr at mse 1 is 0 dB", psnr(&filled(4, 4, 3, 1.0), &filled(4, 4, 3, 0.0)).unwrap() == 0.0),
        (
            "psnr at mse 1/4 is 10 log10 4",
            psnr(&filled(4, 4, 3, 0.75), &filled(4, 4, 3, 0.25)).unwrap() == 10.0 * 4f64.log10(),
        ),
        ("psnr at mse 1/100 is 20 dB", psnr_from_mse(0.01) == 20.0),
        ("ssim of identical images is 1", ssim(&a, &a).unwrap() == 1.0),
        (
            "ssim of two constant images (to 1e-12, window sums round)",
            (ssim(&filled(16, 16, 1, 0.25), &filled(16, 16, 1, 0.75)).unwrap() - ssim_const).abs() <= 1e-12,
        ),
        ("masked depth rmse of a 1/8 offset", d.rmse == 0.125),
        ("masked depth mae of a 1/8 offset", d.mae == 0.125),
        ("masked depth pixel count", d.pixels == 22),
        ("empty depth mask reports zero", empty.empty_mask && empty.rmse == 0.0 && empty.mae == 0.0),
    ]
}
