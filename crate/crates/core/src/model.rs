//! A complete scene model: octree scaffold, both feature volumes and both decoders.

use serde::{Deserialize, Serialize};

use crate::decoders::{DecoderParams, COLOR_FEATURES, HIDDEN_DIM, THICKNESS_FEATURES};
use crate::error::Result;
use crate::features::{init_features, FeatureVolume};
use crate::octree::SparseOctree;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    pub thickness_features: usize,
    pub color_features: usize,
    pub hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            thickness_features: THICKNESS_FEATURES,
            color_features: COLOR_FEATURES,
            hidden: HIDDEN_DIM,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub octree: SparseOctree,
    pub thickness_features: FeatureVolume<T>,
    pub color_features: FeatureVolume<T>,
    pub decoders: DecoderParams<T>,
}

impl<T: Real> Model<T> {
    /// Fresh model; every parameter group draws from its own stream derived from `seed`.
    pub fn init(octree: SparseOctree, dims: ModelDims, seed: u64) -> Result<Self> {
        let v = octree.vertex_count();
        let (thickness_features, color_features) = if v == 0 {
            (
                FeatureVolume::zeros(0, dims.thickness_features),
                FeatureVolume::zeros(0, dims.color_features),
            )
        } else {
            (
                init_features(v, dims.thickness_features, derive_seed(seed, 1))?,
                init_features(v, dims.color_features, derive_seed(seed, 2))?,
            )
        };
        let decoders = DecoderParams::init(
            dims.thickness_features,
            dims.color_features,
            dims.hidden,
            derive_seed(seed, 3),
        )?;
        Ok(Self {
            octree,
            thickness_features,
            color_features,
            decoders,
        })
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            thickness_features: self.thickness_features.dim(),
            color_features: self.color_features.dim(),
            hidden: self.decoders.thickness.spec().hidden_dim,
        }
    }

    pub fn zero_grad(&mut self) {
        self.thickness_features.zero_grad();
        self.color_features.zero_grad();
        self.decoders.thickness.zero_grad();
        self.decoders.color.zero_grad();
    }

    pub fn to_f64(&self) -> Model<f64> {
        Model {
            octree: self.octree.clone(),
            thickness_features: self.thickness_features.to_f64(),
            color_features: self.color_features.to_f64(),
            decoders: self.decoders.to_f64(),
        }
    }
}

/// SplitMix64 finalizer over `seed + stream`; gives decorrelated sub-seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
