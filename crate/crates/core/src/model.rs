//! The hybrid encoder-decoder with body/edge decoupling.
//!
//! ```text
//! stem -> e1 -> e2 -> e3 -> e4 -> d4 -> d3 -> d2 -> d1 = F
//!                                        ^     ^     ^
//!                                        e3    e2    e1   (concat, 1x1, add)
//! F_body  = phi(F)
//! F_edge  = (F - F_body) + psi(e1)
//! F_final = max(F, F_edge, F_body)
//! ```
//!
//! Stage `x` (1..=4) of both encoder and decoder uses transformer blocks when
//! `x > 4 - tr_depth`, convolutional residual blocks otherwise.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{ConvResidualBlock, ResidualTransformerBlock, DEFAULT_BOTTLENECK};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::nn::{Conv2dLayer, ConvNormRelu, Init};
use crate::tensor::{Graph, ParamStore, Scalar, Var};

pub const STAGES: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub tr_depth: usize,
    pub widths: [usize; STAGES],
    pub heads: usize,
    pub span: usize,
    /// `(height, width)`.
    pub input_size: (usize, usize),
    /// Channel reduction inside transformer blocks.
    pub bottleneck: usize,
    /// Body and edge branches with max-response fusion. When off, the final
    /// head reads `F` directly.
    pub body_edge: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            tr_depth: 2,
            widths: [32, 64, 128, 256],
            heads: 8,
            span: 48,
            input_size: (192, 192),
            bottleneck: DEFAULT_BOTTLENECK,
            body_edge: true,
        }
    }
}

pub const MODEL_KEYS: &[&str] = &[
    "tr_depth",
    "widths",
    "heads",
    "span",
    "input_height",
    "input_width",
    "bottleneck",
    "body_edge",
];

impl ModelConfig {
    /// Desk-scale defaults: 64x64 input, widths 8..64, two heads.
    pub fn desk() -> Self {
        Self {
            widths: [8, 16, 32, 64],
            heads: 2,
            input_size: (64, 64),
            ..Self::default()
        }
    }

    pub fn stage_kind(&self, stage: usize) -> StageKind {
        if stage + self.tr_depth > STAGES {
            StageKind::Transformer
        } else {
            StageKind::Conv
        }
    }

    pub fn stage_kinds(&self) -> [StageKind; STAGES] {
        std::array::from_fn(|i| self.stage_kind(i + 1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.tr_depth > STAGES {
            return Err(Error::config("tr_depth", format!("{} is outside 0..=4", self.tr_depth)));
        }
        if self.widths.contains(&0) {
            return Err(Error::config("widths", "every width must be positive"));
        }
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return Err(Error::config(
                "input_size",
                format!("{h}x{w} is not a positive multiple of 8 on both axes"),
            ));
        }
        if self.heads == 0 {
            return Err(Error::config("heads", "must be positive"));
        }
        if self.span == 0 {
            return Err(Error::config("span", "must be positive"));
        }
        if self.bottleneck == 0 {
            return Err(Error::config("bottleneck", "must be positive"));
        }
        for stage in 1..=STAGES {
            if self.stage_kind(stage) == StageKind::Transformer {
                let width = self.widths[stage - 1];
                if !width.is_multiple_of(self.bottleneck) || !(width / self.bottleneck).is_multiple_of(self.heads) {
                    return Err(Error::config(
                        "heads",
                        format!(
                            "stage {stage} width {width} / bottleneck {} is not divisible by {} heads",
                            self.bottleneck, self.heads
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvFile {
        let widths: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        KvFile::from_pairs([
            ("tr_depth", self.tr_depth.to_string()),
            ("widths", widths.join(",")),
            ("heads", self.heads.to_string()),
            ("span", self.span.to_string()),
            ("input_height", self.input_size.0.to_string()),
            ("input_width", self.input_size.1.to_string()),
            ("bottleneck", self.bottleneck.to_string()),
            ("body_edge", self.body_edge.to_string()),
        ])
    }

    /// Overrides fields present in `kv`; other keys are ignored.
    pub fn apply_kv(&mut self, kv: &KvFile) -> Result<()> {
        if let Some(v) = kv.value("tr_depth")? {
            self.tr_depth = v;
        }
        if let Some(v) = kv.list::<usize>("widths")? {
            self.widths = v
                .try_into()
                .map_err(|v: Vec<usize>| Error::config("widths", format!("expected 4 widths, got {}", v.len())))?;
        }
        if let Some(v) = kv.value("heads")? {
            self.heads = v;
        }
        if let Some(v) = kv.value("span")? {
            self.span = v;
        }
        if let Some(v) = kv.value("input_height")? {
            self.input_size.0 = v;
        }
        if let Some(v) = kv.value("input_width")? {
            self.input_size.1 = v;
        }
        if let Some(v) = kv.value("bottleneck")? {
            self.bottleneck = v;
        }
        if let Some(v) = kv.value("body_edge")? {
            self.body_edge = v;
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut c = Self::default();
        c.apply_kv(kv)?;
        c.validate()?;
        Ok(c)
    }

    /// Names of fields whose values differ between two configs.
    pub fn differing_fields(&self, other: &ModelConfig) -> Vec<&'static str> {
        let a = self.to_kv();
        let b = other.to_kv();
        MODEL_KEYS
            .iter()
            .copied()
            .filter(|k| a.get(k) != b.get(k))
            .collect()
    }

    /// `N-N-TR` label of the transformer depth.
    pub fn label(&self) -> String {
        format!("{0}-{0}-TR", self.tr_depth)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageKind {
    Conv,
    Transformer,
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageKind::Conv => "conv",
            StageKind::Transformer => "transformer",
        })
    }
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
enum Block {
    Conv(ConvResidualBlock),
    Transformer(ResidualTransformerBlock),
}

impl Block {
    fn forward<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        match self {
            Block::Conv(b) => b.forward(g, s, x),
            Block::Transformer(b) => b.forward(g, s, x),
        }
    }
}

#[derive(Clone, Debug)]
struct Stage {
    kind: StageKind,
    /// Stride-2 entry used by transformer stages that downsample.
    transition: Option<ConvNormRelu>,
    blocks: Vec<Block>,
}

impl Stage {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &ModelConfig,
        kind: StageKind,
        in_channels: usize,
        width: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut transition = None;
        let mut blocks = Vec::with_capacity(2);
        match kind {
            StageKind::Conv => {
                blocks.push(Block::Conv(ConvResidualBlock::new(
                    store,
                    &format!("{name}.block0"),
                    in_channels,
                    width,
                    stride,
                    rng,
                )?));
                blocks.push(Block::Conv(ConvResidualBlock::new(
                    store,
                    &format!("{name}.block1"),
                    width,
                    width,
                    1,
                    rng,
                )?));
            }
            StageKind::Transformer => {
                if stride != 1 || in_channels != width {
                    transition = Some(ConvNormRelu::new(
                        store,
                        &format!("{name}.transition"),
                        in_channels,
                        width,
                        3,
                        stride,
                        rng,
                    )?);
                }
                for i in 0..2 {
                    blocks.push(Block::Transformer(ResidualTransformerBlock::new(
                        store,
                        &format!("{name}.block{i}"),
                        width,
                        cfg.heads,
                        cfg.span,
                        cfg.bottleneck,
                        rng,
                    )?));
                }
            }
        }
        Ok(Self {
            kind,
            transition,
            blocks,
        })
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut h = match &self.transition {
            Some(t) => t.forward(g, s, x)?,
            None => x,
        };
        for b in &self.blocks {
            h = b.forward(g, s, h)?;
        }
        Ok(h)
    }
}

#[derive(Clone, Debug)]
struct DecoderStage {
    /// 1x1 projection after upsampling; absent for the bottleneck stage.
    up: Option<Conv2dLayer>,
    /// 1x1 projection of `concat(upsampled, skip)`.
    skip: Option<Conv2dLayer>,
    body: Stage,
}

#[derive(Clone, Debug)]
struct BranchHeads {
    phi: [ConvNormRelu; 2],
    psi: Conv2dLayer,
    edge: Conv2dLayer,
    body: Conv2dLayer,
}

/// Graph handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct BranchOutputs {
    pub final_logits: Var,
    pub edge_logits: Option<Var>,
    pub body_logits: Option<Var>,
    /// Decoder output `F`.
    pub feature: Var,
    pub body_feature: Option<Var>,
    pub edge_feature: Option<Var>,
    /// `psi(e1)`.
    pub edge_skip: Option<Var>,
    /// Input of the final head.
    pub fused: Var,
    pub encoder: [Var; STAGES],
}

#[derive(Clone, Debug)]
pub struct MbtNet {
    config: ModelConfig,
    stem: ConvNormRelu,
    encoder: Vec<Stage>,
    decoder: Vec<DecoderStage>,
    heads: Option<BranchHeads>,
    final_head: Conv2dLayer,
    parameter_count: usize,
}

impl MbtNet {
    /// Builds the network and its freshly initialized parameters. Initial
    /// values depend only on `config` and `seed`.
    pub fn build<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let w = config.widths;
        let stem = ConvNormRelu::new(&mut store, "stem", 1, w[0], 3, 1, &mut rng)?;

        let mut encoder = Vec::with_capacity(STAGES);
        for x in 1..=STAGES {
            let (cin, stride) = if x == 1 { (w[0], 1) } else { (w[x - 2], 2) };
            encoder.push(Stage::new(
                &mut store,
                &format!("e{x}"),
                config,
                config.stage_kind(x),
                cin,
                w[x - 1],
                stride,
                &mut rng,
            )?);
        }

        let mut decoder = Vec::with_capacity(STAGES);
        for x in (1..=STAGES).rev() {
            let width = w[x - 1];
            let (up, skip) = if x == STAGES {
                (None, None)
            } else {
                let up = Conv2dLayer::new(
                    &mut store,
                    &format!("d{x}.up"),
                    w[x],
                    width,
                    1,
                    1,
                    true,
                    Init::FanIn(1.0),
                    &mut rng,
                )?;
                let skip = Conv2dLayer::new(
                    &mut store,
                    &format!("d{x}.skip"),
                    2 * width,
                    width,
                    1,
                    1,
                    true,
                    Init::FanIn(1.0),
                    &mut rng,
                )?;
                (Some(up), Some(skip))
            };
            let body = Stage::new(
                &mut store,
                &format!("d{x}"),
                config,
                config.stage_kind(x),
                width,
                width,
                1,
                &mut rng,
            )?;
            decoder.push(DecoderStage { up, skip, body });
        }

        let head = |store: &mut ParamStore<T>, name: &str, rng: &mut ChaCha8Rng| {
            Conv2dLayer::new(store, name, w[0], 1, 1, 1, true, Init::FanIn(1.0), rng)
        };
        let heads = if config.body_edge {
            Some(BranchHeads {
                phi: [
                    ConvNormRelu::new(&mut store, "phi.0", w[0], w[0], 3, 1, &mut rng)?,
                    ConvNormRelu::new(&mut store, "phi.1", w[0], w[0], 3, 1, &mut rng)?,
                ],
                psi: Conv2dLayer::new(&mut store, "psi", w[0], w[0], 1, 1, true, Init::FanIn(1.0), &mut rng)?,
                edge: head(&mut store, "head.edge", &mut rng)?,
                body: head(&mut store, "head.body", &mut rng)?,
            })
        } else {
            None
        };
        let final_head = head(&mut store, "head.final", &mut rng)?;
        let parameter_count = store.scalar_count();
        Ok((
            Self {
                config: config.clone(),
                stem,
                encoder,
                decoder,
                heads,
                final_head,
                parameter_count,
            },
            store,
        ))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.parameter_count
    }

    /// Kinds of encoder stages e1..e4 and decoder stages d1..d4.
    pub fn stage_kinds(&self) -> ([StageKind; STAGES], [StageKind; STAGES]) {
        let enc = std::array::from_fn(|i| self.encoder[i].kind);
        let dec = std::array::from_fn(|i| self.decoder[STAGES - 1 - i].body.kind);
        (enc, dec)
    }

    /// The same network accepting a different input size. Parameters are
    /// shared because no layer depends on the spatial extent.
    pub fn with_input_size(&self, height: usize, width: usize) -> Result<Self> {
        let mut next = self.clone();
        next.config.input_size = (height, width);
        next.config.validate()?;
        Ok(next)
    }

    /// `image` is `[B, 1, H, W]` with `(H, W)` equal to the configured size.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, image: Var) -> Result<BranchOutputs> {
        let (_, c, h, w) = g.value(image).dims4("mbtnet")?;
        if c != 1 || (h, w) != self.config.input_size {
            return Err(Error::shape(
                "mbtnet",
                format!(
                    "expected [B, 1, {}, {}], got {:?}",
                    self.config.input_size.0,
                    self.config.input_size.1,
                    g.value(image).shape()
                ),
            ));
        }
        let mut x = self.stem.forward(g, store, image)?;
        let mut enc = Vec::with_capacity(STAGES);
        for stage in &self.encoder {
            x = stage.forward(g, store, x)?;
            enc.push(x);
        }
        let mut d = enc[STAGES - 1];
        for (i, stage) in self.decoder.iter().enumerate() {
            let level = STAGES - 1 - i;
            if let (Some(up), Some(skip)) = (&stage.up, &stage.skip) {
                let u = g.upsample_bilinear2x(d)?;
                let u = up.forward(g, store, u)?;
                let cat = g.concat_channels(&[u, enc[level]])?;
                let r = skip.forward(g, store, cat)?;
                d = g.add(u, r)?;
            }
            d = stage.body.forward(g, store, d)?;
        }
        let feature = d;
        let encoder: [Var; STAGES] = enc.try_into().expect("four encoder stages");

        match &self.heads {
            Some(heads) => {
                let b = heads.phi[0].forward(g, store, feature)?;
                let body = heads.phi[1].forward(g, store, b)?;
                let edge_skip = heads.psi.forward(g, store, encoder[0])?;
                let diff = g.sub(feature, body)?;
                let edge = g.add(diff, edge_skip)?;
                let fused = g.max_n(&[feature, edge, body])?;
                Ok(BranchOutputs {
                    final_logits: self.final_head.forward(g, store, fused)?,
                    edge_logits: Some(heads.edge.forward(g, store, edge)?),
                    body_logits: Some(heads.body.forward(g, store, body)?),
                    feature,
                    body_feature: Some(body),
                    edge_feature: Some(edge),
                    edge_skip: Some(edge_skip),
                    fused,
                    encoder,
                })
            }
            None => Ok(BranchOutputs {
                final_logits: self.final_head.forward(g, store, feature)?,
                edge_logits: None,
                body_logits: None,
                feature,
                body_feature: None,
                edge_feature: None,
                edge_skip: None,
                fused: feature,
                encoder,
            }),
        }
    }
}
