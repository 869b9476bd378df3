use rand::Rng;

use super::axial::{AxialAttention, Axis};
use crate::error::{Error, Result};
use crate::nn::{Conv2dLayer, Init, NormLayer, RELU_GAIN};
use crate::tensor::{Graph, ParamStore, Scalar, Var};

/// Channel reduction factor of the transformer block's entry conv.
pub const DEFAULT_BOTTLENECK: usize = 2;

fn check_channels<T: Scalar>(g: &Graph<T>, x: Var, op: &'static str, expected: usize) -> Result<()> {
    let (_, c, _, _) = g.value(x).dims4(op)?;
    if c != expected {
        return Err(Error::shape(op, format!("input has {c} channels, block expects {expected}")));
    }
    Ok(())
}

/// `x + exit(width_attn(height_attn(relu(norm(entry(x))))))`.
///
/// The exit conv starts at zero, so a fresh block is the identity.
#[derive(Clone, Debug)]
pub struct ResidualTransformerBlock {
    pub width: usize,
    pub inner: usize,
    pub entry: Conv2dLayer,
    pub entry_norm: NormLayer,
    pub height_attn: AxialAttention,
    pub width_attn: AxialAttention,
    pub exit: Conv2dLayer,
}

impl ResidualTransformerBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        heads: usize,
        span: usize,
        bottleneck: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if bottleneck == 0 || !width.is_multiple_of(bottleneck) {
            return Err(Error::config(
                format!("{name}.bottleneck"),
                format!("width {width} is not divisible by bottleneck factor {bottleneck}"),
            ));
        }
        let inner = width / bottleneck;
        let entry = Conv2dLayer::new(
            store,
            &format!("{name}.entry"),
            width,
            inner,
            1,
            1,
            false,
            Init::FanIn(RELU_GAIN),
            rng,
        )?;
        let entry_norm = NormLayer::new(store, &format!("{name}.entry_norm"), inner)?;
        let height_attn = AxialAttention::new(store, &format!("{name}.height_attn"), inner, heads, span, rng)?;
        let width_attn = AxialAttention::new(store, &format!("{name}.width_attn"), inner, heads, span, rng)?;
        let exit = Conv2dLayer::new(store, &format!("{name}.exit"), inner, width, 1, 1, true, Init::Zero, rng)?;
        Ok(Self {
            width,
            inner,
            entry,
            entry_norm,
            height_attn,
            width_attn,
            exit,
        })
    }

    /// The residual branch alone, without the skip.
    pub fn branch<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        check_channels(g, x, "residual_transformer_block", self.width)?;
        let h = self.entry.forward(g, store, x)?;
        let h = self.entry_norm.forward(g, store, h)?;
        let h = g.relu(h)?;
        let h = self.height_attn.forward(g, store, h, Axis::Height)?;
        let h = self.width_attn.forward(g, store, h, Axis::Width)?;
        self.exit.forward(g, store, h)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let f = self.branch(g, store, x)?;
        g.add(x, f)
    }
}

/// `relu(norm(conv(relu(norm(conv(x))))) + skip(x))` with 3x3 convs. The
/// skip is a 1x1 projection when the width or stride changes.
#[derive(Clone, Debug)]
pub struct ConvResidualBlock {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub conv1: Conv2dLayer,
    pub norm1: NormLayer,
    pub conv2: Conv2dLayer,
    pub norm2: NormLayer,
    pub skip: Option<Conv2dLayer>,
}

impl ConvResidualBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::config(format!("{name}.stride"), "stride must be positive"));
        }
        let conv = |store: &mut ParamStore<T>, which: &str, cin, rng: &mut _, stride| {
            Conv2dLayer::new(
                store,
                &format!("{name}.{which}"),
                cin,
                out_channels,
                3,
                stride,
                false,
                Init::FanIn(RELU_GAIN),
                rng,
            )
        };
        let conv1 = conv(store, "conv1", in_channels, rng, stride)?;
        let norm1 = NormLayer::new(store, &format!("{name}.norm1"), out_channels)?;
        let conv2 = conv(store, "conv2", out_channels, rng, 1)?;
        let norm2 = NormLayer::new(store, &format!("{name}.norm2"), out_channels)?;
        let skip = if in_channels != out_channels || stride != 1 {
            Some(Conv2dLayer::new(
                store,
                &format!("{name}.skip"),
                in_channels,
                out_channels,
                1,
                stride,
                true,
                Init::FanIn(1.0),
                rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            in_channels,
            out_channels,
            stride,
            conv1,
            norm1,
            conv2,
            norm2,
            skip,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        check_channels(g, x, "conv_residual_block", self.in_channels)?;
        let h = self.conv1.forward(g, store, x)?;
        let h = self.norm1.forward(g, store, h)?;
        let h = g.relu(h)?;
        let h = self.conv2.forward(g, store, h)?;
        let h = self.norm2.forward(g, store, h)?;
        let s = match &self.skip {
            Some(p) => p.forward(g, store, x)?,
            None => x,
        };
        let y = g.add(h, s)?;
        g.relu(y)
    }
}
