//! Generator (reference encoder, content encoder, attention, decoder) and
//! the projection discriminator.

use numcore::{Element, Graph, Tensor, Var};

use crate::error::{CoreError, Result};
use crate::nnblocks::{
    kaiming_init, scaled, spectral_update, Block, ConvBlockSpec, FanMode, ResidualBlockSpec, Sequential,
};
use crate::params::{derive_seed, Bound, ParamStore};
use crate::sam::{mean_aggregate, sam_forward, SamConfig, DEFAULT_HEADS};

pub const FEATURE_STRIDE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    /// Multiplies every channel count; 1.0 reproduces the full tables.
    pub width: f64,
    pub heads: usize,
    pub k: usize,
    pub n_styles: usize,
    pub n_chars: usize,
}

impl ModelConfig {
    pub fn paper_scale(n_styles: usize, n_chars: usize) -> Self {
        Self {
            image_size: 128,
            width: 1.0,
            heads: DEFAULT_HEADS,
            k: 3,
            n_styles,
            n_chars,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || !self.image_size.is_multiple_of(FEATURE_STRIDE) {
            return Err(CoreError::Config(format!(
                "image size {} must be a positive multiple of {FEATURE_STRIDE}",
                self.image_size
            )));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(CoreError::Config(format!("width multiplier {} must be positive", self.width)));
        }
        if self.k == 0 || self.n_styles == 0 || self.n_chars == 0 {
            return Err(CoreError::Config("k, style count and character count must be positive".into()));
        }
        Ok(())
    }

    fn ch(&self, c: usize) -> usize {
        scaled(c, self.width)
    }
}

pub fn reference_encoder(cfg: &ModelConfig) -> Sequential {
    let c = |n| cfg.ch(n);
    Sequential::new(
        "er",
        vec![
            Block::Conv(ConvBlockSpec::new(1, c(32))),
            Block::Conv(ConvBlockSpec::new(c(32), c(64)).downsample()),
            Block::Conv(ConvBlockSpec::new(c(64), c(128)).downsample()),
            Block::Res(ResidualBlockSpec::new(c(128), c(128))),
            Block::Res(ResidualBlockSpec::new(c(128), c(128))),
            Block::Res(ResidualBlockSpec::new(c(128), c(256)).downsample()),
            Block::Res(ResidualBlockSpec::new(c(256), c(256))),
        ],
    )
}

pub fn content_encoder(cfg: &ModelConfig) -> Sequential {
    let c = |n| cfg.ch(n);
    Sequential::new(
        "ec",
        vec![
            Block::Conv(ConvBlockSpec::new(1, c(32))),
            Block::Conv(ConvBlockSpec::new(c(32), c(64)).stride(2)),
            Block::Conv(ConvBlockSpec::new(c(64), c(128)).stride(2)),
            Block::Conv(ConvBlockSpec::new(c(128), c(256)).stride(2)),
            Block::Conv(ConvBlockSpec::new(c(256), c(256))),
        ],
    )
}

/// The first residual block narrows the fused `2c` channels to `c`; the last
/// block is a plain biased convolution so the sigmoid can reach both ends of
/// the intensity range.
pub fn decoder(cfg: &ModelConfig) -> Sequential {
    let c = |n| cfg.ch(n);
    Sequential::new(
        "dec",
        vec![
            Block::Res(ResidualBlockSpec::new(2 * c(256), c(256))),
            Block::Res(ResidualBlockSpec::new(c(256), c(256))),
            Block::Res(ResidualBlockSpec::new(c(256), c(256))),
            Block::Conv(ConvBlockSpec::new(c(256), c(128)).upsample()),
            Block::Conv(ConvBlockSpec::new(c(128), c(64)).upsample()),
            Block::Conv(ConvBlockSpec::new(c(64), c(32)).upsample()),
            Block::Conv(ConvBlockSpec::new(c(32), 1).output()),
        ],
    )
}

pub fn discriminator_backbone(cfg: &ModelConfig) -> Sequential {
    let c = |n| cfg.ch(n);
    Sequential::new(
        "disc",
        vec![
            Block::Conv(ConvBlockSpec::new(1, c(32)).stride(2).no_activation().spectral(true)),
            Block::Res(ResidualBlockSpec::new(c(32), c(64)).downsample().spectral(true)),
            Block::Res(ResidualBlockSpec::new(c(64), c(128)).downsample().spectral(true)),
            Block::Res(ResidualBlockSpec::new(c(128), c(256)).downsample().spectral(true)),
            Block::Res(ResidualBlockSpec::new(c(256), c(256)).spectral(true)),
            Block::Res(ResidualBlockSpec::new(c(256), c(512)).global_pool().spectral(true)),
        ],
    )
}

pub struct GenOutput {
    pub image: Var,
    /// Per-head attention weights; empty when attention is disabled.
    pub attention: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub config: ModelConfig,
    pub reference_encoder: Sequential,
    pub content_encoder: Sequential,
    pub decoder: Sequential,
    pub sam: SamConfig,
}

impl Generator {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let side = config.image_size / FEATURE_STRIDE;
        Ok(Self {
            reference_encoder: reference_encoder(config),
            content_encoder: content_encoder(config),
            decoder: decoder(config),
            sam: SamConfig::new(config.ch(256), config.heads, config.k, side, side)?,
            config: config.clone(),
        })
    }

    pub fn init<T: Element>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        self.reference_encoder.init(&mut store, derive_seed(seed, 1))?;
        self.content_encoder.init(&mut store, derive_seed(seed, 2))?;
        self.sam.init("sam", &mut store, derive_seed(seed, 3))?;
        self.decoder.init(&mut store, derive_seed(seed, 4))?;
        Ok(store)
    }

    fn check_image<T: Element>(&self, g: &Graph<T>, x: Var) -> Result<()> {
        let s = self.config.image_size;
        match g.shape(x) {
            [1, h, w] if *h == s && *w == s => Ok(()),
            other => Err(CoreError::Config(format!("expected a 1×{s}×{s} glyph image, got {other:?}"))),
        }
    }

    /// Bias of the final decoder convolution, just before the sigmoid.
    pub fn output_bias_name(&self) -> String {
        format!("{}.{}.b", self.decoder.name, self.decoder.blocks.len() - 1)
    }

    pub fn encode_content<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x_c: Var) -> Result<Var> {
        self.check_image(g, x_c)?;
        self.content_encoder.forward(g, p, x_c)
    }

    /// One map per reference, squashed into (0, 1).
    pub fn encode_references<T: Element>(&self, g: &mut Graph<T>, p: &Bound, refs: &[Var]) -> Result<Vec<Var>> {
        if refs.is_empty() {
            return Err(CoreError::Config("at least one reference image is required".into()));
        }
        refs.iter()
            .map(|&r| {
                self.check_image(g, r)?;
                let f = self.reference_encoder.forward(g, p, r)?;
                Ok(g.sigmoid(f)?)
            })
            .collect()
    }

    pub fn decode<T: Element>(&self, g: &mut Graph<T>, p: &Bound, f_cr: Var) -> Result<Var> {
        let y = self.decoder.forward(g, p, f_cr)?;
        Ok(g.sigmoid(y)?)
    }

    /// Decode from an existing content encoding.
    pub fn generate_from<T: Element>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        f_c: Var,
        refs: &[Var],
        use_sam: bool,
    ) -> Result<GenOutput> {
        let maps = self.encode_references(g, p, refs)?;
        let (fused, attention) = if use_sam {
            let out = sam_forward(g, p, "sam", &self.sam, f_c, &maps)?;
            (out.fused, out.attention)
        } else {
            (mean_aggregate(g, f_c, &maps)?, Vec::new())
        };
        Ok(GenOutput {
            image: self.decode(g, p, fused)?,
            attention,
        })
    }

    pub fn generate<T: Element>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x_c: Var,
        refs: &[Var],
        use_sam: bool,
    ) -> Result<GenOutput> {
        let f_c = self.encode_content(g, p, x_c)?;
        self.generate_from(g, p, f_c, refs, use_sam)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub config: ModelConfig,
    pub backbone: Sequential,
    pub feature_dim: usize,
}

impl Discriminator {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            backbone: discriminator_backbone(config),
            feature_dim: config.ch(512),
            config: config.clone(),
        })
    }

    pub fn init<T: Element>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        self.backbone.init(&mut store, derive_seed(seed, 1))?;
        let d = self.feature_dim;
        let emb = |n, s| kaiming_init::<T>(&[n, d], FanMode::FanIn, derive_seed(seed, s));
        store.insert("disc.style_emb", emb(self.config.n_styles, 2), true)?;
        store.insert("disc.char_emb", emb(self.config.n_chars, 3), true)?;
        Ok(store)
    }

    /// Pooled backbone feature.
    pub fn features<T: Element>(&self, g: &mut Graph<T>, p: &Bound, image: Var) -> Result<Var> {
        self.backbone.forward(g, p, image)
    }

    /// `⟨φ, e_style[s]⟩ + ⟨φ, e_char[c]⟩`, shape `[1]`.
    pub fn discriminate<T: Element>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        image: Var,
        style: usize,
        content: usize,
    ) -> Result<Var> {
        if style >= self.config.n_styles || content >= self.config.n_chars {
            return Err(CoreError::Config(format!(
                "discriminator ids ({style}, {content}) out of range ({}, {})",
                self.config.n_styles, self.config.n_chars
            )));
        }
        let phi = self.features(g, p, image)?;
        let es = g.gather_row(p.var("disc.style_emb")?, style)?;
        let ec = g.gather_row(p.var("disc.char_emb")?, content)?;
        let a = g.dot(phi, es)?;
        let b = g.dot(phi, ec)?;
        Ok(g.add(a, b)?)
    }

    /// Advance the spectral-norm power iteration (discriminator step only).
    pub fn power_step<T: Element>(&self, store: &mut ParamStore<T>) -> Result<()> {
        spectral_update(store)
    }
}

/// Generator and discriminator with their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FontModel<T> {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub g_params: ParamStore<T>,
    pub d_params: ParamStore<T>,
}

pub struct Inference<T> {
    pub image: Tensor<T>,
    pub attention: Vec<Tensor<T>>,
}

impl<T: Element> FontModel<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let generator = Generator::new(config)?;
        let discriminator = Discriminator::new(config)?;
        Ok(Self {
            g_params: generator.init(derive_seed(seed, 100))?,
            d_params: discriminator.init(derive_seed(seed, 200))?,
            generator,
            discriminator,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.generator.config
    }

    /// Forward pass without gradients.
    pub fn infer(&self, content: &Tensor<T>, refs: &[Tensor<T>], use_sam: bool) -> Result<Inference<T>> {
        let mut g = Graph::training();
        let p = self.g_params.bind(&mut g, false)?;
        let x = g.constant(content.clone())?;
        let rs = refs
            .iter()
            .map(|r| g.constant(r.clone()))
            .collect::<numcore::Result<Vec<_>>>()?;
        let out = self.generator.generate(&mut g, &p, x, &rs, use_sam)?;
        Ok(Inference {
            image: g.value(out.image).clone(),
            attention: out.attention.iter().map(|&a| g.value(a).clone()).collect(),
        })
    }
}
