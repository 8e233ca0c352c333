//! The two per-voxel decoders and their optimizer.
//!
//! Both decoders are plain rectifier MLPs evaluated on row-major batches with
//! GEMM. The thickness decoder maps `[r | z(x1) | z(x2)]` to an optical
//! thickness (rectifier head) and a within-voxel depth (sigmoid head); the
//! color decoder maps `[r | z(x_s)]` to three sigmoid channels.

mod adam;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SvlfError};
use crate::real::Real;

pub const RAY_DIM: usize = 6;
pub const HIDDEN_DIM: usize = 128;
pub const THICKNESS_FEATURES: usize = 64;
pub const COLOR_FEATURES: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub output_dim: usize,
    /// One activation per output unit.
    pub heads: Vec<Activation>,
}

impl MlpSpec {
    /// `[r | z(x1) | z(x2)] -> (tau, eta)`, one hidden layer.
    pub fn thickness(feature_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim: RAY_DIM + 2 * feature_dim,
            hidden_dim,
            hidden_layers: 1,
            output_dim: 2,
            heads: vec![Activation::Relu, Activation::Sigmoid],
        }
    }

    /// `[r | z(x_s)] -> rgb`, three hidden layers.
    pub fn color(feature_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim: RAY_DIM + feature_dim,
            hidden_dim,
            hidden_layers: 3,
            output_dim: 3,
            heads: vec![Activation::Sigmoid; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(SvlfError::ShapeMismatch("mlp dimensions must be >= 1".into()));
        }
        if self.heads.len() != self.output_dim {
            return Err(SvlfError::ShapeMismatch(format!(
                "{} head activations for {} outputs",
                self.heads.len(),
                self.output_dim
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per linear layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.hidden_dim));
            fan_in = self.hidden_dim;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    pub(crate) fn encode(&self) -> Vec<u32> {
        let mut v = vec![
            self.input_dim as u32,
            self.hidden_dim as u32,
            self.hidden_layers as u32,
            self.output_dim as u32,
        ];
        v.extend(self.heads.iter().map(|h| h.code()));
        v
    }

    pub(crate) fn decode(header: [u32; 4], heads: &[u32]) -> Option<Self> {
        Some(Self {
            input_dim: header[0] as usize,
            hidden_dim: header[1] as usize,
            hidden_layers: header[2] as usize,
            output_dim: header[3] as usize,
            heads: heads.iter().map(|&c| Activation::from_code(c)).collect::<Option<_>>()?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct LayerShape {
    fan_in: usize,
    fan_out: usize,
    /// Offset of the `fan_out x fan_in` row-major weight block.
    w: usize,
    /// Offset of the bias vector.
    b: usize,
}

/// A rectifier MLP whose parameters live in one flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    spec: MlpSpec,
    layers: Vec<LayerShape>,
    pub params: Vec<T>,
    pub grad: Vec<T>,
}

/// Activations kept by a forward pass for the matching backward pass.
#[derive(Clone, Debug, Default)]
pub struct MlpCache<T> {
    rows: usize,
    /// Input of every linear layer, `rows x fan_in`.
    inputs: Vec<Vec<T>>,
    /// Head pre-activations, `rows x output_dim`.
    pre: Vec<T>,
    /// Head outputs, `rows x output_dim`.
    pub output: Vec<T>,
}

impl<T> MlpCache<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

fn layout(spec: &MlpSpec) -> Vec<LayerShape> {
    let mut off = 0;
    spec.layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let s = LayerShape {
                fan_in,
                fan_out,
                w: off,
                b: off + fan_in * fan_out,
            };
            off += fan_in * fan_out + fan_out;
            s
        })
        .collect()
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Real> Mlp<T> {
    /// Weights uniform on `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]`, zero biases.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layers = layout(&spec);
        let mut params = vec![T::zero(); spec.param_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &layers {
            let bound = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            for p in &mut params[l.w..l.w + l.fan_in * l.fan_out] {
                *p = T::lit(rng.gen_range(-bound..=bound));
            }
        }
        let grad = vec![T::zero(); params.len()];
        Ok(Self {
            spec,
            layers,
            params,
            grad,
        })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<T>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(SvlfError::ShapeMismatch(format!(
                "{} parameters for a network of {}",
                params.len(),
                spec.param_count()
            )));
        }
        let layers = layout(&spec);
        let grad = vec![T::zero(); params.len()];
        Ok(Self {
            spec,
            layers,
            params,
            grad,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn weights(&self, layer: usize) -> &[T] {
        let l = &self.layers[layer];
        &self.params[l.w..l.w + l.fan_in * l.fan_out]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [T] {
        let l = self.layers[layer];
        &mut self.params[l.w..l.w + l.fan_in * l.fan_out]
    }

    pub fn bias(&self, layer: usize) -> &[T] {
        let l = &self.layers[layer];
        &self.params[l.b..l.b + l.fan_out]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [T] {
        let l = self.layers[layer];
        &mut self.params[l.b..l.b + l.fan_out]
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn to_f64(&self) -> Mlp<f64> {
        Mlp {
            spec: self.spec.clone(),
            layers: self.layers.clone(),
            params: self.params.iter().map(|v| v.as_f64()).collect(),
            grad: self.grad.iter().map(|v| v.as_f64()).collect(),
        }
    }

    /// Evaluates `rows` inputs stored row-major in `x`.
    pub fn forward(&self, x: &[T], rows: usize) -> Result<MlpCache<T>> {
        if x.len() != rows * self.spec.input_dim {
            return Err(SvlfError::ShapeMismatch(format!(
                "input of {} values is not {rows} rows of {}",
                x.len(),
                self.spec.input_dim
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        inputs.push(x.to_vec());
        let last = self.layers.len() - 1;
        let mut pre = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let input = inputs.last().expect("layer input");
            let bias = &self.params[l.b..l.b + l.fan_out];
            let mut y: Vec<T> = Vec::with_capacity(rows * l.fan_out);
            for _ in 0..rows {
                y.extend_from_slice(bias);
            }
            T::gemm(
                rows,
                l.fan_in,
                l.fan_out,
                T::one(),
                input,
                (l.fan_in as isize, 1),
                &self.params[l.w..],
                (1, l.fan_in as isize),
                T::one(),
                &mut y,
                (l.fan_out as isize, 1),
            );
            if i == last {
                pre = y;
            } else {
                y.iter_mut().for_each(|v| *v = v.max(T::zero()));
                inputs.push(y);
            }
        }
        let out_dim = self.spec.output_dim;
        let mut output = pre.clone();
        for row in output.chunks_exact_mut(out_dim) {
            for (v, head) in row.iter_mut().zip(&self.spec.heads) {
                *v = match head {
                    Activation::Relu => v.max(T::zero()),
                    Activation::Sigmoid => sigmoid(*v),
                };
            }
        }
        Ok(MlpCache {
            rows,
            inputs,
            pre,
            output,
        })
    }

    /// Reverse pass for upstream gradients `d_out` on the head outputs.
    ///
    /// Parameter gradients are added into `param_grad` when given. The input
    /// gradient is returned when `want_input` is set.
    pub fn backward(
        &self,
        cache: &MlpCache<T>,
        d_out: &[T],
        param_grad: Option<&mut [T]>,
        want_input: bool,
    ) -> Result<Option<Vec<T>>> {
        if cache.is_empty() || cache.inputs.len() != self.layers.len() {
            return Err(SvlfError::MissingCache);
        }
        let rows = cache.rows;
        let out_dim = self.spec.output_dim;
        if d_out.len() != rows * out_dim {
            return Err(SvlfError::ShapeMismatch(format!(
                "upstream of {} values is not {rows} rows of {out_dim}",
                d_out.len()
            )));
        }
        if let Some(g) = &param_grad {
            if g.len() != self.params.len() {
                return Err(SvlfError::ShapeMismatch("gradient buffer size".into()));
            }
        }
        let mut delta = d_out.to_vec();
        for (idx, d) in delta.iter_mut().enumerate() {
            *d = match self.spec.heads[idx % out_dim] {
                Activation::Relu if cache.pre[idx] > T::zero() => *d,
                Activation::Relu => T::zero(),
                Activation::Sigmoid => {
                    let s = cache.output[idx];
                    *d * s * (T::one() - s)
                }
            };
        }
        let mut param_grad = param_grad;
        for (li, l) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[li];
            if let Some(g) = param_grad.as_deref_mut() {
                T::gemm(
                    l.fan_out,
                    rows,
                    l.fan_in,
                    T::one(),
                    &delta,
                    (1, l.fan_out as isize),
                    input,
                    (l.fan_in as isize, 1),
                    T::one(),
                    &mut g[l.w..l.w + l.fan_in * l.fan_out],
                    (l.fan_in as isize, 1),
                );
                let gb = &mut g[l.b..l.b + l.fan_out];
                for row in delta.chunks_exact(l.fan_out) {
                    for (b, &d) in gb.iter_mut().zip(row) {
                        *b += d;
                    }
                }
            }
            if li == 0 && !want_input {
                return Ok(None);
            }
            let mut d_in = vec![T::zero(); rows * l.fan_in];
            T::gemm(
                rows,
                l.fan_out,
                l.fan_in,
                T::one(),
                &delta,
                (l.fan_out as isize, 1),
                &self.params[l.w..l.w + l.fan_in * l.fan_out],
                (l.fan_in as isize, 1),
                T::zero(),
                &mut d_in,
                (l.fan_in as isize, 1),
            );
            if li == 0 {
                return Ok(Some(d_in));
            }
            // Rectifier mask: the layer input is the previous layer's output.
            for (d, &a) in d_in.iter_mut().zip(input) {
                if a <= T::zero() {
                    *d = T::zero();
                }
            }
            delta = d_in;
        }
        unreachable!("the input layer returns")
    }
}

/// Weights of the thickness decoder and the color decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams<T> {
    pub thickness: Mlp<T>,
    pub color: Mlp<T>,
}

impl<T: Real> DecoderParams<T> {
    pub fn init(
        thickness_features: usize,
        color_features: usize,
        hidden_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            thickness: Mlp::init(MlpSpec::thickness(thickness_features, hidden_dim), seed)?,
            color: Mlp::init(
                MlpSpec::color(color_features, hidden_dim),
                seed ^ 0x9e37_79b9_7f4a_7c15,
            )?,
        })
    }

    /// Decoders at their published sizes.
    pub fn standard(seed: u64) -> Result<Self> {
        Self::init(THICKNESS_FEATURES, COLOR_FEATURES, HIDDEN_DIM, seed)
    }

    pub fn to_f64(&self) -> DecoderParams<f64> {
        DecoderParams {
            thickness: self.thickness.to_f64(),
            color: self.color.to_f64(),
        }
    }
}

pub struct ThicknessOutput<T> {
    pub tau: T,
    pub eta: T,
    pub cache: MlpCache<T>,
}

pub struct ColorOutput<T> {
    pub color: [T; 3],
    pub cache: MlpCache<T>,
}

/// Gradients returned by [`backward`].
pub struct DecoderGrads<T> {
    pub params: Vec<T>,
    pub input: Vec<T>,
}

fn concat_checked<T: Real>(what: &'static str, parts: &[&[T]], want: usize) -> Result<Vec<T>> {
    let x: Vec<T> = parts.iter().flat_map(|p| p.iter().copied()).collect();
    if x.len() != want {
        return Err(SvlfError::ShapeMismatch(format!(
            "{what} input has {} values, expected {want}",
            x.len()
        )));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(SvlfError::NonFinite(what));
    }
    Ok(x)
}

/// `(tau, eta) = f_T(r, z_T)` for a single ray segment.
pub fn thickness_forward<T: Real>(params: &DecoderParams<T>, r: &[T], z_t: &[T]) -> Result<ThicknessOutput<T>> {
    let mlp = &params.thickness;
    let x = concat_checked("thickness decoder", &[r, z_t], mlp.spec().input_dim)?;
    let cache = mlp.forward(&x, 1)?;
    Ok(ThicknessOutput {
        tau: cache.output[0],
        eta: cache.output[1],
        cache,
    })
}

/// `c = f_C(r, z_C)` for a single ray segment.
pub fn color_forward<T: Real>(params: &DecoderParams<T>, r: &[T], z_c: &[T]) -> Result<ColorOutput<T>> {
    let mlp = &params.color;
    let x = concat_checked("color decoder", &[r, z_c], mlp.spec().input_dim)?;
    let cache = mlp.forward(&x, 1)?;
    Ok(ColorOutput {
        color: [cache.output[0], cache.output[1], cache.output[2]],
        cache,
    })
}

/// Exact reverse-mode gradients of one decoder for a cached forward pass.
pub fn backward<T: Real>(mlp: &Mlp<T>, cache: &MlpCache<T>, upstream: &[T]) -> Result<DecoderGrads<T>> {
    let mut params = vec![T::zero(); mlp.params.len()];
    let input = mlp
        .backward(cache, upstream, Some(&mut params), true)?
        .expect("input gradient requested");
    Ok(DecoderGrads { params, input })
}
