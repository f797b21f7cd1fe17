//! Finite-difference checks of network blocks, attention, generator and
//! discriminator in f64, shared with the acceptance suite.

use glyphgen_core::fontnet::{Discriminator, Generator, ModelConfig};
use glyphgen_core::nnblocks::{ConvBlockSpec, ResidualBlockSpec};
use glyphgen_core::params::{Bound, ParamStore};
use glyphgen_core::sam::{sam_forward, SamConfig};
use numcore::{grad_check_steps, Graph, NumError, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-4;
/// Small steps avoid ReLU kinks, larger ones keep tiny gradients above roundoff.
const STEPS: [f64; 2] = [1e-6, 1e-5];

pub fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

type Build<'a> = dyn Fn(&mut Graph<f64>, &Bound, &[Var]) -> glyphgen_core::Result<Var> + 'a;

/// A network under test: parameters, inputs and a forward pass producing
/// any tensor, reduced to a scalar by a fixed random weighting.
pub struct Case<'a> {
    pub store: ParamStore<f64>,
    pub inputs: Vec<Tensor<f64>>,
    pub build: Box<Build<'a>>,
    /// Elements probed per tensor; `None` probes all of them.
    pub per_tensor: Option<usize>,
}

fn pick(n: usize, per: Option<usize>, seed: u64) -> Vec<usize> {
    match per {
        Some(k) if k < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = vec![0, n - 1];
            idx.extend((0..k.saturating_sub(2)).map(|_| rng.random_range(0..n)));
            idx
        }
        _ => (0..n).collect(),
    }
}

fn lift<T>(r: glyphgen_core::Result<T>) -> numcore::Result<T> {
    r.map_err(|e| NumError::Contract(e.to_string()))
}

impl Case<'_> {
    fn scalar(&self, g: &mut Graph<f64>, p: &Bound, inputs: &[Var]) -> numcore::Result<Var> {
        let y = lift((self.build)(g, p, inputs))?;
        let w = g.constant(random(g.shape(y), 0x5eed, -1.0, 1.0))?;
        g.dot(y, w)
    }

    /// Largest relative error over every trainable tensor and every input.
    pub fn max_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for (t, param) in self.store.params().iter().enumerate() {
            if !param.trainable {
                continue;
            }
            let idx = pick(param.value.numel(), self.per_tensor, t as u64);
            let report = grad_check_steps(
                |g, xv| {
                    let mut p = lift(self.store.bind(g, false))?;
                    lift(p.substitute(&param.name, xv))?;
                    let ins = self
                        .inputs
                        .iter()
                        .map(|x| g.constant(x.clone()))
                        .collect::<numcore::Result<Vec<_>>>()?;
                    self.scalar(g, &p, &ins)
                },
                &param.value,
                &STEPS,
                &idx,
            )
            .unwrap();
            worst = worst.max(report.max_rel_error);
        }
        for (i, x) in self.inputs.iter().enumerate() {
            let idx = pick(x.numel(), self.per_tensor.map(|k| 4 * k), 1000 + i as u64);
            let report = grad_check_steps(
                |g, xv| {
                    let p = lift(self.store.bind(g, false))?;
                    let ins = self
                        .inputs
                        .iter()
                        .enumerate()
                        .map(|(j, x)| if i == j { Ok(xv) } else { g.constant(x.clone()) })
                        .collect::<numcore::Result<Vec<_>>>()?;
                    self.scalar(g, &p, &ins)
                },
                x,
                &STEPS,
                &idx,
            )
            .unwrap();
            worst = worst.max(report.max_rel_error);
        }
        worst
    }
}

fn conv_case<'a>(spec: ConvBlockSpec, input: &[usize], seed: u64) -> Case<'a> {
    let mut store = ParamStore::new();
    spec.init("blk", &mut store, seed).unwrap();
    perturb_affine(&mut store, seed);
    Case {
        store,
        inputs: vec![random(input, seed, -1.0, 1.0)],
        build: Box::new(move |g, p, x| spec.forward("blk", g, p, x[0])),
        per_tensor: None,
    }
}

fn res_case<'a>(spec: ResidualBlockSpec, input: &[usize], seed: u64) -> Case<'a> {
    let mut store = ParamStore::new();
    spec.init("res", &mut store, seed).unwrap();
    perturb_affine(&mut store, seed);
    Case {
        store,
        inputs: vec![random(input, seed, -1.0, 1.0)],
        build: Box::new(move |g, p, x| spec.forward("res", g, p, x[0])),
        per_tensor: None,
    }
}

/// Move IN affine parameters and biases off their 1/0 initial values so
/// their gradients are exercised in general position.
fn perturb_affine(store: &mut ParamStore<f64>, seed: u64) {
    let names: Vec<String> = store
        .params()
        .iter()
        .filter(|p| p.trainable && p.value.shape().len() == 1)
        .map(|p| p.name.clone())
        .collect();
    for (i, n) in names.iter().enumerate() {
        let shape = store.get(n).unwrap().shape().to_vec();
        let noise = random(&shape, seed ^ (i as u64 + 77), -0.3, 0.3);
        let base = store.get(n).unwrap().clone();
        let v = Tensor::new(&shape, base.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect()).unwrap();
        store.set(n, v).unwrap();
    }
}

/// Every block flavour used by the networks, at small channel counts.
pub fn block_cases() -> Vec<(&'static str, Case<'static>)> {
    vec![
        ("conv", conv_case(ConvBlockSpec::new(2, 3), &[2, 6, 6], 1)),
        ("conv stride 2", conv_case(ConvBlockSpec::new(2, 3).stride(2), &[2, 6, 6], 2)),
        ("conv + pool", conv_case(ConvBlockSpec::new(2, 3).downsample(), &[2, 6, 6], 3)),
        ("conv + upsample", conv_case(ConvBlockSpec::new(3, 2).upsample(), &[3, 4, 4], 4)),
        ("conv no activation", conv_case(ConvBlockSpec::new(2, 3).no_activation(), &[2, 4, 4], 5)),
        ("conv spectral", conv_case(ConvBlockSpec::new(2, 3).stride(2).spectral(true), &[2, 6, 6], 6)),
        ("output conv", conv_case(ConvBlockSpec::new(3, 1).output(), &[3, 4, 4], 7)),
        ("residual identity", res_case(ResidualBlockSpec::new(3, 3), &[3, 4, 4], 8)),
        ("residual projection + pool", res_case(ResidualBlockSpec::new(2, 4).downsample(), &[2, 4, 4], 9)),
        (
            "residual spectral + global pool",
            res_case(ResidualBlockSpec::new(2, 3).spectral(true).global_pool(), &[2, 4, 4], 10),
        ),
    ]
}

/// Full attention module at 4×4 feature geometry with three references.
pub fn sam_case() -> Case<'static> {
    let cfg = SamConfig::new(16, 8, 3, 4, 4).unwrap();
    let mut store = ParamStore::new();
    cfg.init("sam", &mut store, 11).unwrap();
    let shape = [16, 4, 4];
    Case {
        store,
        inputs: (0..4).map(|i| random(&shape, 20 + i, -1.0, 1.0)).collect(),
        build: Box::new(move |g, p, x| Ok(sam_forward(g, p, "sam", &cfg, x[0], &x[1..])?.fused)),
        per_tensor: None,
    }
}

pub fn desk_config() -> ModelConfig {
    ModelConfig {
        image_size: 32,
        width: 0.125,
        heads: 8,
        k: 3,
        n_styles: 3,
        n_chars: 4,
    }
}

/// Generator at 32×32: content image plus three references.
pub fn generator_case(use_sam: bool) -> Case<'static> {
    let cfg = desk_config();
    let gen = Generator::new(&cfg).unwrap();
    let mut store = gen.init(12).unwrap();
    perturb_affine(&mut store, 12);
    Case {
        store,
        inputs: (0..4).map(|i| random(&[1, 32, 32], 30 + i, 0.0, 1.0)).collect(),
        build: Box::new(move |g, p, x| Ok(gen.generate(g, p, x[0], &x[1..], use_sam)?.image)),
        per_tensor: Some(3),
    }
}

/// Projection discriminator logit for a fixed (style, character).
pub fn discriminator_case() -> Case<'static> {
    let cfg = desk_config();
    let disc = Discriminator::new(&cfg).unwrap();
    let mut store = disc.init(13).unwrap();
    perturb_affine(&mut store, 13);
    disc.power_step(&mut store).unwrap();
    Case {
        store,
        inputs: vec![random(&[1, 32, 32], 40, 0.0, 1.0)],
        build: Box::new(move |g, p, x| disc.discriminate(g, p, x[0], 1, 2)),
        per_tensor: Some(3),
    }
}

/// `(name, max relative error)` for every case.
pub fn all() -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = block_cases()
        .into_iter()
        .map(|(n, c)| (n.to_string(), c.max_error()))
        .collect();
    out.push(("attention module".into(), sam_case().max_error()));
    out.push(("generator".into(), generator_case(true).max_error()));
    out.push(("generator, mean aggregation".into(), generator_case(false).max_error()));
    out.push(("discriminator".into(), discriminator_case().max_error()));
    out
}
