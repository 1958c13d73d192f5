//! Convolutional encoders for depth images (2-D) and voxel grids (3-D),
//! both pooled with a spatial softmax.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::Conv;
use super::layers::{Layer, SeqCache, Sequential};
use super::softmax::SpatialSoftmax;
use super::tensor::{ParamSet, Tensor};
use crate::sensing::{VoxelGrid, GRID_DIMS, IMAGE_SIZE};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Two stacked 128×128 depth images as input channels.
    Conv2dDepth,
    /// One-channel 50×50×40 occupancy grid.
    Conv3dVoxel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub const fn new(channels: usize, kernel: usize, stride: usize) -> Self {
        ConvSpec { channels, kernel, stride }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub layers: Vec<ConvSpec>,
    pub temperature: f64,
}

impl EncoderSpec {
    /// Two-layer VoxNet-style trunk.
    pub fn voxel_default() -> Self {
        EncoderSpec {
            kind: EncoderKind::Conv3dVoxel,
            layers: vec![ConvSpec::new(16, 5, 2), ConvSpec::new(32, 3, 1)],
            temperature: 1.0,
        }
    }

    /// Strided trunk cheap enough for single-core training runs.
    pub fn voxel_desk() -> Self {
        EncoderSpec {
            kind: EncoderKind::Conv3dVoxel,
            layers: vec![ConvSpec::new(8, 4, 4), ConvSpec::new(16, 3, 2)],
            temperature: 1.0,
        }
    }

    pub fn depth_default() -> Self {
        EncoderSpec {
            kind: EncoderKind::Conv2dDepth,
            layers: vec![ConvSpec::new(16, 5, 2), ConvSpec::new(32, 3, 2)],
            temperature: 1.0,
        }
    }

    pub fn depth_desk() -> Self {
        EncoderSpec {
            kind: EncoderKind::Conv2dDepth,
            layers: vec![ConvSpec::new(8, 4, 4), ConvSpec::new(16, 3, 2)],
            temperature: 1.0,
        }
    }

    pub fn input_channels(&self) -> usize {
        match self.kind {
            EncoderKind::Conv2dDepth => 2,
            EncoderKind::Conv3dVoxel => 1,
        }
    }

    pub fn input_dims(&self) -> Vec<usize> {
        match self.kind {
            EncoderKind::Conv2dDepth => vec![IMAGE_SIZE, IMAGE_SIZE],
            EncoderKind::Conv3dVoxel => GRID_DIMS.to_vec(),
        }
    }

    pub fn spatial(&self) -> usize {
        match self.kind {
            EncoderKind::Conv2dDepth => 2,
            EncoderKind::Conv3dVoxel => 3,
        }
    }

    /// Feature length: spatial-dimension coordinates per final channel.
    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.channels) * self.spatial()
    }

    pub fn build(&self, name: &str) -> Result<Encoder> {
        Encoder::new(name, self.clone(), &self.input_dims())
    }
}

/// Encoder input: a dense tensor `[B, C, dims…]`, or a batch of voxel grids
/// fed through the sparse first layer.
pub enum EncoderInput<'a> {
    Dense(&'a Tensor),
    Voxels(&'a [&'a VoxelGrid]),
}

impl EncoderInput<'_> {
    pub fn batch(&self) -> usize {
        match self {
            EncoderInput::Dense(t) => t.rows(),
            EncoderInput::Voxels(g) => g.len(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct EncoderCache {
    rest: SeqCache,
    filled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub spec: EncoderSpec,
    pub input_dims: Vec<usize>,
    first: Conv,
    rest: Sequential,
}

impl Encoder {
    /// Builds the trunk for inputs of the given spatial size (normally the
    /// spec's own; smaller sizes are useful in tests).
    pub fn new(name: &str, spec: EncoderSpec, input_dims: &[usize]) -> Result<Self> {
        if spec.layers.is_empty() || input_dims.len() != spec.spatial() {
            return Err(Error::Config(format!("encoder {name}: needs ≥ 1 conv layer and matching input rank")));
        }
        let sp = spec.spatial();
        let mut convs = Vec::new();
        let mut cin = spec.input_channels();
        let mut dims = input_dims.to_vec();
        for (i, l) in spec.layers.iter().enumerate() {
            let c = Conv::new(format!("{name}.conv{i}"), sp, cin, l.channels, l.kernel, l.stride);
            dims = c.output_dims(&dims)?;
            cin = l.channels;
            convs.push(c);
        }
        let first = convs.remove(0);
        let mut layers = vec![Layer::Relu];
        for c in convs {
            layers.push(Layer::Conv(c));
            layers.push(Layer::Relu);
        }
        layers.push(Layer::SpatialSoftmax(SpatialSoftmax::new(spec.temperature)));
        Ok(Encoder {
            spec,
            input_dims: input_dims.to_vec(),
            first,
            rest: Sequential::new(layers),
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        self.first.init(params, rng);
        self.rest.init(params, rng);
    }

    pub fn output_len(&self) -> usize {
        self.spec.output_len()
    }

    fn check(&self, input: &EncoderInput) -> Result<()> {
        let mut expected = vec![input.batch(), self.spec.input_channels()];
        expected.extend(&self.input_dims);
        match input {
            EncoderInput::Dense(t) if t.shape != expected => Err(Error::ShapeMismatch {
                expected,
                got: t.shape.clone(),
            }),
            EncoderInput::Voxels(_) if self.spec.kind != EncoderKind::Conv3dVoxel => Err(Error::ShapeMismatch {
                expected,
                got: vec![],
            }),
            EncoderInput::Voxels(grids) => {
                for g in grids.iter() {
                    if g.dims().as_slice() != self.input_dims.as_slice() {
                        return Err(Error::ShapeMismatch {
                            expected: self.input_dims.clone(),
                            got: g.dims().to_vec(),
                        });
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn forward(&self, p: &ParamSet, input: &EncoderInput) -> Result<(Tensor, EncoderCache)> {
        self.check(input)?;
        let h = match input {
            EncoderInput::Dense(x) => self.first.forward(p, x)?,
            EncoderInput::Voxels(g) => self.first.forward_sparse(p, g)?,
        };
        let (y, rest) = self.rest.forward(p, &h)?;
        Ok((y, EncoderCache { rest, filled: true }))
    }

    /// Accumulates parameter gradients; returns the input gradient for dense input.
    pub fn backward(
        &self,
        p: &ParamSet,
        input: &EncoderInput,
        cache: &EncoderCache,
        g: &Tensor,
        grads: &mut ParamSet,
    ) -> Result<Option<Tensor>> {
        if !cache.filled {
            return Err(Error::MissingCache);
        }
        let gh = self.rest.backward(p, &cache.rest, g, grads)?;
        match input {
            EncoderInput::Dense(x) => Ok(Some(self.first.backward(p, x, &gh, grads)?)),
            EncoderInput::Voxels(grids) => {
                self.first.backward_sparse(grids, &gh, grads)?;
                Ok(None)
            }
        }
    }
}
