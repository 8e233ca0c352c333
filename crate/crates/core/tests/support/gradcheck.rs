//! Analytic gradients against central finite differences, shared by the
//! core gradient tests and the acceptance suite.
//!
//! Every check runs twice: the 32-bit analytic gradient against differences
//! of the same parameters evaluated in 64 bits (tolerance 1e-3), and the
//! 64-bit analytic gradient against the same differences (tolerance 1e-6).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svlf::decoders::{self, Mlp, MlpSpec};
use svlf::features::{interpolate, interpolate_backward, FeatureVolume};
use svlf::model::{Model, ModelDims};
use svlf::octree::{morton_encode, Aabb, GridConfig, Ray, SparseOctree, Vec3};
use svlf::rendering::batch::{dense_feature_grad, GradSink};
use svlf::training::{self, LossWeights, RaySupervision};
use svlf::Real;

const CONFIGS: usize = 100;
const TOL_32: f64 = 1e-3;
const TOL_64: f64 = 1e-6;
const STEP: f64 = 5e-4;
/// Coordinates sampled per parameter group and configuration.
const PROBES: usize = 6;
/// Share of sampled coordinates that may be dropped for straddling a kink.
const MAX_KINK_SHARE: f64 = 0.05;

/// Gradient magnitude below which central differences of an O(1) loss
/// carry no significant digits; errors are measured relative to at least this.
const GRAD_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, GRAD_FLOOR)` over a vector of probes.
fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt())
        .max(GRAD_FLOOR);
    diff / scale
}

/// Fourth-order central difference at `h`.
fn central(f: &mut dyn FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (8.0 * (f(x + h) - f(x - h)) - (f(x + 2.0 * h) - f(x - 2.0 * h))) / (12.0 * h)
}

/// Derivative of `f` at `x`, or `None` when a rectifier kink lies inside the
/// stencil (the estimates at `STEP` and `STEP / 4` then disagree).
///
/// The losses are O(1) while many gradient entries are O(1e-6), so the
/// two-point rule at a step small enough to dodge kinks loses too many digits.
fn numeric(f: &mut dyn FnMut(f64) -> f64, x: f64) -> Option<f64> {
    let coarse = central(f, x, STEP);
    let fine = central(f, x, STEP / 4.0);
    ((coarse - fine).abs() <= 1e-10 + 1e-8 * fine.abs()).then_some(fine)
}

pub struct Worst {
    pub name: &'static str,
    pub e32: f64,
    pub e64: f64,
    pub checks: usize,
    pub probes: usize,
    pub kinks: usize,
}

impl Worst {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            e32: 0.0,
            e64: 0.0,
            checks: 0,
            probes: 0,
            kinks: 0,
        }
    }

    /// Differences `eval(i)` at each of `idx`, skipping kinks.
    fn probe(&mut self, idx: &[usize], mut eval: impl FnMut(usize) -> Option<f64>) -> (Vec<usize>, Vec<f64>) {
        let mut kept = Vec::new();
        let mut values = Vec::new();
        for &i in idx {
            self.probes += 1;
            match eval(i) {
                Some(v) => {
                    kept.push(i);
                    values.push(v);
                }
                None => self.kinks += 1,
            }
        }
        (kept, values)
    }

    fn record(&mut self, a32: &[f64], a64: &[f64], numeric: &[f64]) {
        self.e32 = self.e32.max(rel_err(a32, numeric));
        self.e64 = self.e64.max(rel_err(a64, numeric));
        self.checks += 1;
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} checks, worst relative error {:.2e} (32-bit), {:.2e} (64-bit), {} of {} probes on a kink",
            self.name, self.checks, self.e32, self.e64, self.kinks, self.probes
        )
    }

    pub fn passed(&self) -> bool {
        self.checks >= CONFIGS
            && (self.kinks as f64) < MAX_KINK_SHARE * self.probes as f64
            && self.e32 < TOL_32
            && self.e64 < TOL_64
    }
}

fn probes(rng: &mut ChaCha8Rng, len: usize, nonzero: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(PROBES);
    for k in 0..PROBES {
        if k % 2 == 0 && !nonzero.is_empty() {
            out.push(nonzero[rng.gen_range(0..nonzero.len())]);
        } else {
            out.push(rng.gen_range(0..len));
        }
    }
    out
}

fn nonzero(g: &[f64]) -> Vec<usize> {
    g.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect()
}

fn to64<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, s: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-s..s)).collect()
}

/// Gradients of `u . f(r, z)` for one decoder, with respect to parameters and input.
fn check_decoder(name: &'static str, spec_of: fn() -> MlpSpec) -> Worst {
    let mut worst = Worst::new(name);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for cfg in 0..CONFIGS {
        let spec = spec_of();
        let m32: Mlp<f32> = Mlp::init(spec.clone(), cfg as u64).unwrap();
        // Nonzero biases so the rectifiers are not all tied at the origin.
        let mut m32 = m32;
        for l in 0..m32.layer_count() {
            for b in m32.bias_mut(l) {
                *b = rng.gen_range(-0.2..0.2);
            }
        }
        let m64 = m32.to_f64();
        let x = uniform(&mut rng, spec.input_dim, 1.0);
        let u = uniform(&mut rng, spec.output_dim, 1.0);
        let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let u32_: Vec<f32> = u.iter().map(|&v| v as f32).collect();

        let c32 = m32.forward(&x32, 1).unwrap();
        let g32 = decoders::backward(&m32, &c32, &u32_).unwrap();
        let c64 = m64.forward(&x, 1).unwrap();
        let g64 = decoders::backward(&m64, &c64, &u).unwrap();

        let value = |m: &Mlp<f64>, x: &[f64]| -> f64 {
            let c = m.forward(x, 1).unwrap();
            c.output.iter().zip(&u).map(|(o, w)| o * w).sum()
        };

        let gp32 = to64(&g32.params);
        let idx = probes(&mut rng, m64.params.len(), &nonzero(&g64.params));
        let mut m = m64.clone();
        let (idx, num) = worst.probe(&idx, |i| {
            let x0 = m64.params[i];
            let d = numeric(
                &mut |v| {
                    m.params[i] = v;
                    value(&m, &x)
                },
                x0,
            );
            m.params[i] = x0;
            d
        });
        let pick = |g: &[f64]| idx.iter().map(|&i| g[i]).collect::<Vec<_>>();
        worst.record(&pick(&gp32), &pick(&g64.params), &num);

        let gi32 = to64(&g32.input);
        let all: Vec<usize> = (0..x.len()).collect();
        let mut xs = x.clone();
        let (idx, num) = worst.probe(&all, |i| {
            let d = numeric(
                &mut |v| {
                    xs[i] = v;
                    value(&m64, &xs)
                },
                x[i],
            );
            xs[i] = x[i];
            d
        });
        let pick = |g: &[f64]| idx.iter().map(|&i| g[i]).collect::<Vec<_>>();
        worst.record(&pick(&gi32), &pick(&g64.input), &num);
    }
    worst
}

pub fn thickness_decoder() -> Worst {
    check_decoder("thickness decoder", || MlpSpec::thickness(64, 128))
}

pub fn color_decoder() -> Worst {
    check_decoder("color decoder", || MlpSpec::color(32, 128))
}

fn random_octree(rng: &mut ChaCha8Rng, res: u32) -> SparseOctree {
    let grid = GridConfig {
        resolution: res,
        scene_aabb: Aabb::new(Vec3::new(-0.5, 0.0, 0.25), Vec3::new(1.0, 1.25, 1.5)),
        dilation: 1,
    };
    let n = (res * res * res) as usize;
    let mut leaves: Vec<u64> = (0..n / 3)
        .map(|_| morton_encode(rng.gen_range(0..res), rng.gen_range(0..res), rng.gen_range(0..res)))
        .collect();
    leaves.sort_unstable();
    leaves.dedup();
    SparseOctree::from_leaves(grid, leaves).unwrap()
}

/// Trilinear interpolation: corner features and the positional Jacobian.
pub fn trilinear() -> Worst {
    let mut worst = Worst::new("trilinear interpolation");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dim = 5;
    for _ in 0..CONFIGS {
        let oct = random_octree(&mut rng, 8);
        let data = uniform(&mut rng, oct.vertex_count() * dim, 1.0);
        let vol64 = FeatureVolume::from_data(dim, data.clone()).unwrap();
        let vol32 = FeatureVolume::<f32>::from_data(dim, data.iter().map(|&v| v as f32).collect()).unwrap();
        let leaf = oct.leaves()[rng.gen_range(0..oct.leaf_count())];
        let b = oct.leaf_aabb(leaf);
        let p = Vec3::from_fn(|a, _| b.min[a] + rng.gen_range(0.05..0.95) * (b.max[a] - b.min[a]));
        let u = uniform(&mut rng, dim, 1.0);
        let u32_: Vec<f32> = u.iter().map(|&v| v as f32).collect();

        let mut v32 = vol32.clone();
        let jac32 = interpolate_backward(&mut v32, &oct, leaf, &p, &u32_).unwrap();
        let mut v64 = vol64.clone();
        let jac64 = interpolate_backward(&mut v64, &oct, leaf, &p, &u).unwrap();

        let value = |vol: &FeatureVolume<f64>, p: &Vec3| -> f64 {
            let z = interpolate(vol, &oct, leaf, p).unwrap();
            z.iter().zip(&u).map(|(a, b)| a * b).sum()
        };

        // Corner features, every touched entry.
        let idx = nonzero(&v64.grad);
        assert_eq!(idx.len() % dim, 0);
        let mut v = vol64.clone();
        let (idx, num) = worst.probe(&idx, |i| {
            let d = numeric(
                &mut |x| {
                    v.data[i] = x;
                    value(&v, &p)
                },
                vol64.data[i],
            );
            v.data[i] = vol64.data[i];
            d
        });
        let pick = |g: &[f64]| idx.iter().map(|&i| g[i]).collect::<Vec<_>>();
        worst.record(&pick(&to64(&v32.grad)), &pick(&v64.grad), &num);

        // Position: d(u . z)/dp = sum_c u_c dz_c/dp.
        let contract = |jac: &[[f64; 3]]| -> Vec<f64> {
            (0..3).map(|a| jac.iter().zip(&u).map(|(row, w)| row[a] * w).sum()).collect()
        };
        let j32: Vec<[f64; 3]> = jac32.iter().map(|r| [r[0] as f64, r[1] as f64, r[2] as f64]).collect();
        let mut q = p;
        let (axes, num) = worst.probe(&[0, 1, 2], |a| {
            let d = numeric(
                &mut |x| {
                    q[a] = x;
                    value(&vol64, &q)
                },
                p[a],
            );
            q = p;
            d
        });
        let pick = |g: Vec<f64>| axes.iter().map(|&a| g[a]).collect::<Vec<_>>();
        worst.record(&pick(contract(&j32)), &pick(contract(&jac64)), &num);
    }
    worst
}

fn group_mut(m: &mut Model<f64>, g: usize) -> &mut Vec<f64> {
    match g {
        0 => &mut m.decoders.thickness.params,
        1 => &mut m.decoders.color.params,
        2 => &mut m.thickness_features.data,
        _ => &mut m.color_features.data,
    }
}

fn dense<T: Real>(sink: &GradSink<T>, m: &Model<T>) -> [Vec<f64>; 4] {
    [
        to64(&sink.thickness_mlp),
        to64(&sink.color_mlp),
        to64(&dense_feature_grad(&sink.thickness_features, &m.thickness_features)),
        to64(&dense_feature_grad(&sink.color_features, &m.color_features)),
    ]
}

struct LossCase {
    model32: Model<f32>,
    model64: Model<f64>,
    sup: RaySupervision,
}

/// A small-grid model at the published decoder sizes and a foreground ray
/// whose surface lies in a random voxel it crosses.
fn loss_case(rng: &mut ChaCha8Rng, seed: u64, foreground: bool) -> LossCase {
    loop {
        let oct = random_octree(rng, 8);
        let b = oct.config().scene_aabb;
        let target = Vec3::from_fn(|a, _| b.min[a] + rng.gen_range(0.2..0.8) * (b.max[a] - b.min[a]));
        let dir = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let Ok(ray) = Ray::new(target - dir * 3.0, dir) else { continue };
        let hits = oct.traverse(&ray);
        if hits.len() < 2 {
            continue;
        }
        let k = rng.gen_range(0..hits.len());
        let h = hits[k];
        let depth = if foreground {
            h.t_in + rng.gen_range(0.1..0.9) * (h.t_out - h.t_in)
        } else {
            0.0
        };
        let mut model32: Model<f32> = Model::init(oct, ModelDims::default(), seed).unwrap();
        // Trained embeddings are far from their small initial values.
        for v in model32.thickness_features.data.iter_mut().chain(&mut model32.color_features.data) {
            *v = rng.gen_range(-1.0..1.0);
        }
        // Lift the thickness head off its rectifier floor so the opacity
        // path carries gradient.
        let tl = model32.decoders.thickness.layer_count() - 1;
        model32.decoders.thickness.bias_mut(tl)[0] = rng.gen_range(0.1..1.0);
        let model64 = model32.to_f64();
        let sup = RaySupervision {
            ray,
            color: [rng.gen(), rng.gen(), rng.gen()],
            depth,
            alpha: foreground,
        };
        return LossCase { model32, model64, sup };
    }
}

fn check_loss(
    worst: &mut Worst,
    rng: &mut ChaCha8Rng,
    case: &LossCase,
    g32: &[Vec<f64>; 4],
    g64: &[Vec<f64>; 4],
    value: &dyn Fn(&Model<f64>) -> f64,
) {
    for g in 0..4 {
        let mut m = case.model64.clone();
        let len = group_mut(&mut m, g).len();
        let idx = probes(rng, len, &nonzero(&g64[g]));
        let (idx, num) = worst.probe(&idx, |i| {
            let x0 = group_mut(&mut m, g)[i];
            let d = numeric(
                &mut |x| {
                    group_mut(&mut m, g)[i] = x;
                    value(&m)
                },
                x0,
            );
            group_mut(&mut m, g)[i] = x0;
            d
        });
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        worst.record(&pick(&g32[g]), &pick(&g64[g]), &num);
    }
}

fn weights() -> LossWeights {
    // Larger than the training defaults so every term is visible in the check.
    LossWeights {
        eta: 0.5,
        tau: 0.3,
        empty: 0.2,
        alpha: 0.4,
    }
}

pub fn surface_loss() -> Worst {
    let mut worst = Worst::new("surface loss");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = weights();
    for cfg in 0..CONFIGS {
        let case = loss_case(&mut rng, cfg as u64, true);
        let r32 = training::surface_loss(&case.sup, &case.model32, &w).unwrap().expect("surface voxel is occupied");
        let r64 = training::surface_loss(&case.sup, &case.model64, &w).unwrap().unwrap();
        let value = |m: &Model<f64>| training::surface_loss(&case.sup, m, &w).unwrap().unwrap().loss;
        assert!((value(&case.model64) - r64.loss).abs() == 0.0);
        let (g32, g64) = (dense(&r32.grads, &case.model32), dense(&r64.grads, &case.model64));
        check_loss(&mut worst, &mut rng, &case, &g32, &g64, &value);
    }
    worst
}

pub fn volumetric_loss() -> Worst {
    let mut worst = Worst::new("volumetric loss");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = weights();
    for cfg in 0..CONFIGS {
        let case = loss_case(&mut rng, cfg as u64, cfg % 4 != 0);
        let r32 = training::volumetric_loss(&case.sup, &case.model32, &w, false).unwrap();
        let r64 = training::volumetric_loss(&case.sup, &case.model64, &w, false).unwrap();
        let value = |m: &Model<f64>| training::volumetric_loss(&case.sup, m, &w, false).unwrap().loss;
        let (g32, g64) = (dense(&r32.grads, &case.model32), dense(&r64.grads, &case.model64));
        check_loss(&mut worst, &mut rng, &case, &g32, &g64, &value);

        // Freezing the color branch drops its gradients and leaves the rest alone.
        let frozen = training::volumetric_loss(&case.sup, &case.model64, &w, true).unwrap();
        let gf = dense(&frozen.grads, &case.model64);
        assert_eq!(frozen.loss, r64.loss);
        assert_eq!(gf[0], g64[0]);
        assert_eq!(gf[2], g64[2]);
        assert!(gf[1].iter().all(|v| *v == 0.0));
        assert!(gf[3].iter().all(|v| *v == 0.0));
    }
    worst
}


