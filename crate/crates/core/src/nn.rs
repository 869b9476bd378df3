//! Parameterized layers shared by the attention blocks and the network.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// Uniform bound for fan-in scaled initialization: `gain * sqrt(3 / fan_in)`.
pub fn fan_in_bound(fan_in: usize, gain: f64) -> f64 {
    gain * (3.0 / fan_in as f64).sqrt()
}

pub const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Fan-in scaled uniform with the given gain.
    FanIn(f64),
    Zero,
}

#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let shape = [out_channels, in_channels, kernel, kernel];
        let weight = match init {
            Init::FanIn(gain) => store.add_uniform(
                format!("{name}.weight"),
                &shape,
                fan_in_bound(in_channels * kernel * kernel, gain),
                rng,
            )?,
            Init::Zero => store.add(format!("{name}.weight"), Tensor::zeros(&shape)?)?,
        };
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels])?)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, w, b, self.stride, self.padding)
    }
}

/// Instance normalization with learned per-channel scale (init 1) and shift
/// (init 0).
#[derive(Clone, Debug)]
pub struct NormLayer {
    pub scale: ParamId,
    pub shift: ParamId,
}

impl NormLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            scale: store.add(format!("{name}.scale"), Tensor::ones(&[channels])?)?,
            shift: store.add(format!("{name}.shift"), Tensor::zeros(&[channels])?)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let s = g.param(store, self.scale);
        let b = g.param(store, self.shift);
        g.instance_norm(x, s, b)
    }
}

/// conv -> norm -> relu.
#[derive(Clone, Debug)]
pub struct ConvNormRelu {
    pub conv: Conv2dLayer,
    pub norm: NormLayer,
}

impl ConvNormRelu {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2dLayer::new(
                store,
                &format!("{name}.conv"),
                in_channels,
                out_channels,
                kernel,
                stride,
                false,
                Init::FanIn(RELU_GAIN),
                rng,
            )?,
            norm: NormLayer::new(store, &format!("{name}.norm"), out_channels)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, store, x)?;
        let y = self.norm.forward(g, store, y)?;
        g.relu(y)
    }
}
