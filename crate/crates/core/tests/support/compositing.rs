//! Compositing invariants, shared by the core tests and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svlf::rendering::composite;
use svlf::Real;

pub const SEQUENCES: usize = 10_000;
pub const SUM_TOL: f64 = 1e-6;

pub struct CompositeReport {
    pub sequences: usize,
    /// Worst `|sum w_i + prod exp(-tau_i) - 1|`.
    pub max_sum_err: f64,
    pub increasing_transmittance: usize,
    /// Worst single-sample deviation from `1 - exp(-tau)`.
    pub max_single_err: f64,
}

impl CompositeReport {
    pub fn passed(&self) -> bool {
        self.max_sum_err <= SUM_TOL && self.increasing_transmittance == 0 && self.max_single_err <= SUM_TOL
    }

    pub fn summary(&self) -> String {
        format!(
            "{} sequences, max |sum w + T - 1| {:.1e}, {} increasing transmittance, single-sample error {:.1e}",
            self.sequences, self.max_sum_err, self.increasing_transmittance, self.max_single_err
        )
    }
}

/// Thickness values spanning empty, faint, typical and saturated voxels.
pub fn random_tau(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..5) {
        0 => 0.0,
        1 => rng.gen_range(0.0..1e-4),
        2 => rng.gen_range(0.0..1.0),
        3 => rng.gen_range(0.0..10.0),
        _ => rng.gen_range(10.0..100.0),
    }
}

pub fn composite_invariants<T: Real>(seed: u64, sequences: usize) -> CompositeReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CompositeReport {
        sequences,
        max_sum_err: 0.0,
        increasing_transmittance: 0,
        max_single_err: 0.0,
    };
    for _ in 0..sequences {
        let n = rng.gen_range(1..=64);
        let samples: Vec<(T, [T; 3])> = (0..n)
            .map(|_| (T::lit(random_tau(&mut rng)), [T::lit(rng.gen()), T::lit(rng.gen()), T::lit(rng.gen())]))
            .collect();
        let c = composite(&samples).unwrap();
        let sum: f64 = c.weights.iter().map(|w| w.as_f64()).sum();
        let prod: f64 = samples.iter().map(|s| (-s.0.as_f64()).exp()).product();
        report.max_sum_err = report.max_sum_err.max((sum + prod - 1.0).abs());
        if c.transmittance.windows(2).any(|w| w[1] > w[0]) {
            report.increasing_transmittance += 1;
        }
        let tau = random_tau(&mut rng);
        let one = composite(&[(T::lit(tau), [T::one(); 3])]).unwrap();
        let exact = 1.0 - (-T::lit(tau).as_f64()).exp();
        for v in [one.alpha, one.weights[0], one.color[0]] {
            report.max_single_err = report.max_single_err.max((v.as_f64() - exact).abs());
        }
    }
    report
}
