//! Convolution and residual blocks, Kaiming initialization and
//! spectral-norm buffers.

use numcore::{power_iteration, Element, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CoreError, Result};
use crate::params::{derive_seed, Bound, ParamStore};

pub const IN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FanMode {
    FanIn,
    FanOut,
}

/// Zero-mean normal with variance `2 / fan`.
pub fn kaiming_init<T: Element>(shape: &[usize], mode: FanMode, seed: u64) -> Tensor<T> {
    assert!(shape.len() >= 2, "kaiming_init needs at least two dimensions");
    let receptive: usize = shape[2..].iter().product();
    let fan = match mode {
        FanMode::FanIn => shape[1] * receptive,
        FanMode::FanOut => shape[0] * receptive,
    };
    let std = (2.0 / fan as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::from_f64(z * std)
        })
        .collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

/// Channel count after applying a width multiplier.
pub fn scaled(channels: usize, width: f64) -> usize {
    ((channels as f64 * width).round() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    None,
    AvgPool,
    Nearest,
    /// Adaptive average pooling to 1×1; the block then yields a `[C]` vector.
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub norm: bool,
    pub activation: bool,
    pub bias: bool,
    pub resample: Resample,
    pub spectral: bool,
}

impl ConvBlockSpec {
    /// 3×3, stride 1, pad 1, IN, ReLU.
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: 3,
            stride: 1,
            pad: 1,
            norm: true,
            activation: true,
            bias: false,
            resample: Resample::None,
            spectral: false,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn downsample(mut self) -> Self {
        self.resample = Resample::AvgPool;
        self
    }

    pub fn upsample(mut self) -> Self {
        self.resample = Resample::Nearest;
        self
    }

    pub fn no_activation(mut self) -> Self {
        self.activation = false;
        self
    }

    pub fn spectral(mut self, on: bool) -> Self {
        self.spectral = on;
        self
    }

    /// Plain biased convolution feeding an output nonlinearity.
    pub fn output(mut self) -> Self {
        self.norm = false;
        self.activation = false;
        self.bias = true;
        self
    }

    fn projection(in_channels: usize, out_channels: usize, spectral: bool) -> Self {
        Self {
            kernel: 1,
            pad: 0,
            norm: false,
            activation: false,
            spectral,
            ..Self::new(in_channels, out_channels)
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let &[c, h, w] = input else {
            return Err(CoreError::Config(format!("conv block expects C×H×W, got {input:?}")));
        };
        if c != self.in_channels {
            return Err(CoreError::Config(format!(
                "conv block expects {} channels, got {c}",
                self.in_channels
            )));
        }
        let ho = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let wo = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        Ok(resampled(&[self.out_channels, ho, wo], self.resample))
    }

    pub fn init<T: Element>(&self, prefix: &str, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        let shape = [self.out_channels, self.in_channels, self.kernel, self.kernel];
        let w = kaiming_init::<T>(&shape, FanMode::FanIn, derive_seed(seed, 0));
        if self.spectral {
            let mut u: Vec<T> = kaiming_init::<T>(&[self.out_channels, 1], FanMode::FanIn, derive_seed(seed, 1)).into_data();
            let (v, _) = power_iteration(&w, &mut u);
            store.insert(format!("{prefix}.w.u"), Tensor::new(&[u.len()], u)?, false)?;
            store.insert(format!("{prefix}.w.v"), Tensor::new(&[v.len()], v)?, false)?;
        }
        store.insert(format!("{prefix}.w"), w, true)?;
        if self.bias {
            store.insert(format!("{prefix}.b"), Tensor::zeros(&[self.out_channels]), true)?;
        }
        if self.norm {
            store.insert(format!("{prefix}.gamma"), Tensor::full(&[self.out_channels], T::one()), true)?;
            store.insert(format!("{prefix}.beta"), Tensor::zeros(&[self.out_channels]), true)?;
        }
        Ok(())
    }

    /// conv → IN → ReLU → resample.
    pub fn forward<T: Element>(&self, prefix: &str, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let w = weight(prefix, self.spectral, g, p)?;
        let b = if self.bias { Some(p.var(&format!("{prefix}.b"))?) } else { None };
        let mut y = g.conv2d(x, w, b, self.stride, self.pad)?;
        if self.norm {
            let gamma = p.var(&format!("{prefix}.gamma"))?;
            let beta = p.var(&format!("{prefix}.beta"))?;
            y = g.instance_norm(y, Some(gamma), Some(beta), IN_EPS)?;
        }
        if self.activation {
            y = g.relu(y)?;
        }
        apply_resample(g, y, self.resample)
    }
}

fn weight<T: Element>(prefix: &str, spectral: bool, g: &mut Graph<T>, p: &Bound) -> Result<Var> {
    let w = p.var(&format!("{prefix}.w"))?;
    if !spectral {
        return Ok(w);
    }
    let u = g.value(p.var(&format!("{prefix}.w.u"))?).data().to_vec();
    let v = g.value(p.var(&format!("{prefix}.w.v"))?).data().to_vec();
    Ok(g.spectral_norm(w, &u, &v)?)
}

fn resampled(shape: &[usize; 3], r: Resample) -> Vec<usize> {
    let [c, h, w] = *shape;
    match r {
        Resample::None => vec![c, h, w],
        Resample::AvgPool => vec![c, h / 2, w / 2],
        Resample::Nearest => vec![c, h * 2, w * 2],
        Resample::Global => vec![c],
    }
}

fn apply_resample<T: Element>(g: &mut Graph<T>, x: Var, r: Resample) -> Result<Var> {
    Ok(match r {
        Resample::None => x,
        Resample::AvgPool => g.avgpool2x2(x)?,
        Resample::Nearest => g.upsample_nearest2x(x)?,
        Resample::Global => g.global_avg_pool(x)?,
    })
}

/// Two stride-1 convolution blocks plus a shortcut (1×1 projection when the
/// channel count changes). The block's own resampling acts on the sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub resample: Resample,
    pub spectral: bool,
}

impl ResidualBlockSpec {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            resample: Resample::None,
            spectral: false,
        }
    }

    pub fn downsample(mut self) -> Self {
        self.resample = Resample::AvgPool;
        self
    }

    pub fn global_pool(mut self) -> Self {
        self.resample = Resample::Global;
        self
    }

    pub fn spectral(mut self, on: bool) -> Self {
        self.spectral = on;
        self
    }

    pub fn body(&self) -> [ConvBlockSpec; 2] {
        [
            ConvBlockSpec::new(self.in_channels, self.out_channels).spectral(self.spectral),
            ConvBlockSpec::new(self.out_channels, self.out_channels).spectral(self.spectral),
        ]
    }

    pub fn shortcut(&self) -> Option<ConvBlockSpec> {
        (self.in_channels != self.out_channels)
            .then(|| ConvBlockSpec::projection(self.in_channels, self.out_channels, self.spectral))
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let [a, b] = self.body();
        let mid = a.output_shape(input)?;
        let out = b.output_shape(&mid)?;
        Ok(resampled(&[out[0], out[1], out[2]], self.resample))
    }

    pub fn init<T: Element>(&self, prefix: &str, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        let [a, b] = self.body();
        a.init(&format!("{prefix}.a"), store, derive_seed(seed, 10))?;
        b.init(&format!("{prefix}.b"), store, derive_seed(seed, 11))?;
        if let Some(s) = self.shortcut() {
            s.init(&format!("{prefix}.skip"), store, derive_seed(seed, 12))?;
        }
        Ok(())
    }

    pub fn forward<T: Element>(&self, prefix: &str, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let [a, b] = self.body();
        let h = a.forward(&format!("{prefix}.a"), g, p, x)?;
        let h = b.forward(&format!("{prefix}.b"), g, p, h)?;
        let skip = match self.shortcut() {
            Some(s) => s.forward(&format!("{prefix}.skip"), g, p, x)?,
            None => x,
        };
        let y = g.add(skip, h)?;
        apply_resample(g, y, self.resample)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    Conv(ConvBlockSpec),
    Res(ResidualBlockSpec),
}

impl Block {
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Block::Conv(s) => s.output_shape(input),
            Block::Res(s) => s.output_shape(input),
        }
    }

    pub fn init<T: Element>(&self, prefix: &str, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        match self {
            Block::Conv(s) => s.init(prefix, store, seed),
            Block::Res(s) => s.init(prefix, store, seed),
        }
    }

    pub fn forward<T: Element>(&self, prefix: &str, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        match self {
            Block::Conv(s) => s.forward(prefix, g, p, x),
            Block::Res(s) => s.forward(prefix, g, p, x),
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            Block::Conv(s) => s.out_channels,
            Block::Res(s) => s.out_channels,
        }
    }
}

/// A named chain of blocks; parameters live under `{name}.{i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    pub name: String,
    pub blocks: Vec<Block>,
}

impl Sequential {
    pub fn new(name: impl Into<String>, blocks: Vec<Block>) -> Self {
        Self {
            name: name.into(),
            blocks,
        }
    }

    fn prefix(&self, i: usize) -> String {
        format!("{}.{i}", self.name)
    }

    pub fn init<T: Element>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        for (i, b) in self.blocks.iter().enumerate() {
            b.init(&self.prefix(i), store, derive_seed(seed, i as u64))?;
        }
        Ok(())
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.forward(&self.prefix(i), g, p, h)?;
        }
        Ok(h)
    }

    /// Output shape of every block in turn.
    pub fn shape_chain(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut shapes = Vec::with_capacity(self.blocks.len());
        let mut s = input.to_vec();
        for b in &self.blocks {
            s = b.output_shape(&s)?;
            shapes.push(s.clone());
        }
        Ok(shapes)
    }
}

/// One power-iteration step for every spectrally normalized weight.
pub fn spectral_update<T: Element>(store: &mut ParamStore<T>) -> Result<()> {
    let names: Vec<String> = store
        .params()
        .iter()
        .filter_map(|p| p.name.strip_suffix(".w.u").map(|s| s.to_string()))
        .collect();
    for prefix in names {
        let w = store.require(&format!("{prefix}.w"))?.clone();
        let mut u = store.require(&format!("{prefix}.w.u"))?.data().to_vec();
        let (v, _) = power_iteration(&w, &mut u);
        store.set(&format!("{prefix}.w.u"), Tensor::new(&[u.len()], u)?)?;
        store.set(&format!("{prefix}.w.v"), Tensor::new(&[v.len()], v)?)?;
    }
    Ok(())
}
