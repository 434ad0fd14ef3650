//! Convolution layers shared by all networks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{Element, Graph, Tensor, Var};

use super::params::{he_normal, Bound, ParamStore};

/// Nonlinearity on the feature branch of a gated convolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    LeakyRelu,
    Elu,
    Identity,
}

pub const LEAKY_SLOPE: f64 = 0.2;

impl Activation {
    pub fn apply<T: Element>(self, g: &mut Graph<T>, x: Var) -> Var {
        match self {
            Activation::LeakyRelu => g.leaky_relu(x, T::from_f64_lossy(LEAKY_SLOPE)),
            Activation::Elu => g.elu(x, T::one()),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatedConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub activation: Activation,
}

impl GatedConvSpec {
    /// Stride-1 "same" convolution.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize, activation: Activation) -> Self {
        GatedConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
            activation,
        }
    }

    fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    /// Scalars in one branch (weight + bias).
    pub fn branch_params(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}

/// `activation(conv_f(x)) ⊙ σ(conv_g(x))`.
///
/// Parameters live under `{name}.feature.{weight,bias}` and
/// `{name}.gate.{weight,bias}`. Both banks run as one fused convolution.
#[derive(Clone, Debug)]
pub struct GatedConv {
    pub name: String,
    pub spec: GatedConvSpec,
}

impl GatedConv {
    pub fn new(name: impl Into<String>, spec: GatedConvSpec) -> Self {
        GatedConv {
            name: name.into(),
            spec,
        }
    }

    pub fn register<T: Element, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        let o = self.spec.out_channels;
        store.insert(format!("{}.feature.weight", self.name), he_normal(rng, self.spec.weight_shape(), 1.0))?;
        store.insert(format!("{}.feature.bias", self.name), Tensor::zeros([o]))?;
        store.insert(format!("{}.gate.weight", self.name), he_normal(rng, self.spec.weight_shape(), 1.0))?;
        store.insert(format!("{}.gate.bias", self.name), Tensor::zeros([o]))?;
        Ok(())
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let n = &self.name;
        let wf = p.get(&format!("{n}.feature.weight"))?;
        let bf = p.get(&format!("{n}.feature.bias"))?;
        let wg = p.get(&format!("{n}.gate.weight"))?;
        let bg = p.get(&format!("{n}.gate.bias"))?;
        let w = g.concat_rows(&[wf, wg])?;
        let b = g.concat_rows(&[bf, bg])?;
        let y = g.conv2d(x, w, Some(b), self.spec.stride, self.spec.padding)?;
        let o = self.spec.out_channels;
        let feat = g.narrow_channels(y, 0, o)?;
        let gate = g.narrow_channels(y, o, o)?;
        let feat = self.spec.activation.apply(g, feat);
        let gate = g.sigmoid(gate);
        g.mul(feat, gate)
    }
}

/// Plain convolution with bias, parameters `{name}.{weight,bias}`.
#[derive(Clone, Debug)]
pub struct Conv {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    pub fn new(name: impl Into<String>, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Conv {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }

    pub fn register<T: Element, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R, gain: f64) -> Result<()> {
        let shape = [self.out_channels, self.in_channels, self.kernel, self.kernel];
        store.insert(format!("{}.weight", self.name), he_normal(rng, shape, gain))?;
        store.insert(format!("{}.bias", self.name), Tensor::zeros([self.out_channels]))?;
        Ok(())
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let w = p.get(&format!("{}.weight", self.name))?;
        let b = p.get(&format!("{}.bias", self.name))?;
        g.conv2d(x, w, Some(b), self.stride, self.padding)
    }
}
