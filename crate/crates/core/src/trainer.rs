//! Losses, optimizer and the alternating adversarial training loop.

use std::fmt::Write as _;

use numcore::{Element, Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{CoreError, Result};
use crate::fontnet::{Discriminator, FontModel, Generator, ModelConfig};
use crate::glyphsynth::Dataset;
use crate::params::{derive_seed, Bound, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_adv: f64,
    pub lambda_l1: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub k: usize,
    pub heads: usize,
    /// Channel width multiplier; 1.0 keeps the full channel counts.
    pub width: f64,
    pub seed: u64,
    pub use_sam: bool,
    pub use_sr: bool,
    pub use_rs: bool,
    /// Write a log row every this many iterations (and at the last one).
    pub log_every: usize,
    /// Start the output bias at the logit of the mean training pixel.
    pub output_prior: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_adv: 1.0,
            lambda_l1: 0.1,
            lr_g: 2e-4,
            lr_d: 8e-4,
            beta1: 0.0,
            beta2: 0.9,
            batch_size: 4,
            iterations: 2000,
            k: 3,
            heads: 8,
            width: 1.0,
            seed: 0,
            use_sam: true,
            use_sr: true,
            use_rs: true,
            log_every: 10,
            output_prior: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(CoreError::Config(what.to_string()));
        if !(self.lambda_adv >= 0.0 && self.lambda_l1 >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return bad("learning rates must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.k == 0 || self.heads == 0 || self.log_every == 0 {
            return bad("batch size, k, heads and log interval must be positive");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self, data: &Dataset) -> ModelConfig {
        ModelConfig {
            image_size: data.size,
            width: self.width,
            heads: self.heads,
            k: self.k,
            n_styles: data.styles.len(),
            n_chars: data.chars.len(),
        }
    }
}

/// Adam over the trainable entries of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros = || store.params().iter().map(|p| vec![T::zero(); p.value.numel()]).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// `grads[i]` belongs to the i-th store entry; `None` means zero.
    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (one, eps) = (T::one(), T::from_f64(self.eps));
        let step = T::from_f64(self.lr * c2.sqrt() / c1);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let g = grads.get(i).and_then(|g| g.as_ref());
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(T::zero(), |g| g.data()[j]);
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                *w -= step * m[j] / (v[j].sqrt() + eps);
            }
        }
    }
}

/// Hinge loss minimized by the discriminator:
/// `mean(relu(1 − real)) + mean over fakes(relu(1 + fake))`.
pub fn adv_loss_d<T: Element>(g: &mut Graph<T>, real: &[Var], fake: &[Var]) -> Result<Var> {
    let r = hinge_mean(g, real, -1.0)?;
    let f = hinge_mean(g, fake, 1.0)?;
    Ok(g.add(r, f)?)
}

fn hinge_mean<T: Element>(g: &mut Graph<T>, logits: &[Var], sign: f64) -> Result<Var> {
    if logits.is_empty() {
        return Err(CoreError::Config("hinge loss needs at least one logit".into()));
    }
    let terms = logits
        .iter()
        .map(|&l| {
            let s = g.scale(l, sign)?;
            let s = g.add_scalar(s, 1.0)?;
            g.relu(s)
        })
        .collect::<numcore::Result<Vec<_>>>()?;
    mean_of(g, &terms)
}

/// `−mean(fake logits)`.
pub fn adv_loss_g<T: Element>(g: &mut Graph<T>, fake: &[Var]) -> Result<Var> {
    let m = mean_of(g, fake)?;
    Ok(g.neg(m)?)
}

/// `mean|ŷ − y| + mean|ỹ − y|`; the second term is dropped without `sr`.
pub fn l1_loss<T: Element>(g: &mut Graph<T>, main: Var, sr: Option<Var>, target: Var) -> Result<Var> {
    let a = mean_abs_diff(g, main, target)?;
    match sr {
        Some(s) => {
            let b = mean_abs_diff(g, s, target)?;
            Ok(g.add(a, b)?)
        }
        None => Ok(a),
    }
}

fn mean_abs_diff<T: Element>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(CoreError::Config(format!(
            "L1 operands differ in shape: {:?} vs {:?}",
            g.shape(a),
            g.shape(b)
        )));
    }
    let d = g.sub(a, b)?;
    let d = g.abs(d)?;
    Ok(g.mean(d)?)
}

fn mean_of<T: Element>(g: &mut Graph<T>, xs: &[Var]) -> Result<Var> {
    let mut acc = *xs.first().ok_or_else(|| CoreError::Config("mean of nothing".into()))?;
    for &x in &xs[1..] {
        acc = g.add(acc, x)?;
    }
    Ok(g.scale(acc, 1.0 / xs.len() as f64)?)
}

/// The self-reconstruction branch: the target itself is the only reference.
pub fn self_reconstruct<T: Element>(
    gen: &Generator,
    g: &mut Graph<T>,
    p: &Bound,
    f_c: Var,
    target: Var,
    use_sam: bool,
) -> Result<Var> {
    Ok(gen.generate_from(g, p, f_c, &[target], use_sam)?.image)
}

/// One training pair with its images.
#[derive(Debug, Clone)]
pub struct BatchItem<T> {
    pub style: usize,
    pub content: usize,
    pub content_image: Tensor<T>,
    pub target: Tensor<T>,
    pub refs: Vec<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub iteration: usize,
    pub loss_g_adv: f64,
    pub loss_d: f64,
    pub loss_l1_main: f64,
    pub loss_l1_sr: f64,
    pub grad_norm_g: f64,
    pub grad_norm_d: f64,
}

impl StepReport {
    pub const TSV_HEADER: &'static str = "iteration\tloss_g_adv\tloss_d\tloss_l1_main\tloss_l1_sr\tgrad_norm_g\tgrad_norm_d";

    pub fn is_finite(&self) -> bool {
        [
            self.loss_g_adv,
            self.loss_d,
            self.loss_l1_main,
            self.loss_l1_sr,
            self.grad_norm_g,
            self.grad_norm_d,
        ]
        .iter()
        .all(|x| x.is_finite())
    }

    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.iteration,
            self.loss_g_adv,
            self.loss_d,
            self.loss_l1_main,
            self.loss_l1_sr,
            self.grad_norm_g,
            self.grad_norm_d
        )
    }
}

/// Generator outputs for a batch, still on their tape.
pub struct GenPass<T> {
    pub graph: Graph<T>,
    pub params: Bound,
    pub main: Vec<Var>,
    pub sr: Vec<Option<Var>>,
    pub targets: Vec<Var>,
}

pub fn generator_forward<T: Element>(
    gen: &Generator,
    g_params: &ParamStore<T>,
    cfg: &TrainConfig,
    batch: &[BatchItem<T>],
) -> Result<GenPass<T>> {
    let mut g = Graph::training();
    let p = g_params.bind(&mut g, true)?;
    let (mut main, mut sr, mut targets) = (Vec::new(), Vec::new(), Vec::new());
    for item in batch {
        let x = g.constant(item.content_image.clone())?;
        let y = g.constant(item.target.clone())?;
        let refs = item
            .refs
            .iter()
            .map(|r| g.constant(r.clone()))
            .collect::<numcore::Result<Vec<_>>>()?;
        let f_c = gen.encode_content(&mut g, &p, x)?;
        main.push(gen.generate_from(&mut g, &p, f_c, &refs, cfg.use_sam)?.image);
        sr.push(if cfg.use_sr {
            Some(self_reconstruct(gen, &mut g, &p, f_c, y, cfg.use_sam)?)
        } else {
            None
        });
        targets.push(y);
    }
    Ok(GenPass {
        graph: g,
        params: p,
        main,
        sr,
        targets,
    })
}

/// Discriminator update on detached fakes. Returns `(L_D, grad norm)`.
pub fn discriminator_phase<T: Element>(
    disc: &Discriminator,
    d_params: &mut ParamStore<T>,
    opt: &mut Adam<T>,
    cfg: &TrainConfig,
    batch: &[BatchItem<T>],
    fakes: &[Vec<Tensor<T>>],
) -> Result<(f64, f64)> {
    disc.power_step(d_params)?;
    let mut g = Graph::training();
    let p = d_params.bind(&mut g, true)?;
    let mut terms = Vec::with_capacity(batch.len());
    for (item, fk) in batch.iter().zip(fakes) {
        let y = g.constant(item.target.clone())?;
        let real = disc.discriminate(&mut g, &p, y, item.style, item.content)?;
        let fake = fk
            .iter()
            .map(|f| {
                let v = g.constant(f.clone())?;
                disc.discriminate(&mut g, &p, v, item.style, item.content)
            })
            .collect::<Result<Vec<_>>>()?;
        terms.push(adv_loss_d(&mut g, &[real], &fake)?);
    }
    let loss = mean_of(&mut g, &terms)?;
    let total = g.scale(loss, cfg.lambda_adv)?;
    let value = g.value(loss).data()[0].as_f64();
    let grads = collect_grads(&g, total, &p)?;
    let norm = grad_norm(&grads);
    opt.update(d_params, &grads);
    Ok((value, norm))
}

pub struct GenLosses {
    pub adv: f64,
    pub l1_main: f64,
    pub l1_sr: f64,
}

/// Generator objective on an existing forward pass with the discriminator
/// held fixed. Returns per-parameter gradients in store order.
pub fn generator_phase<T: Element>(
    pass: &mut GenPass<T>,
    disc: &Discriminator,
    d_params: &ParamStore<T>,
    cfg: &TrainConfig,
    batch: &[BatchItem<T>],
) -> Result<(Vec<Option<Tensor<T>>>, GenLosses)> {
    let g = &mut pass.graph;
    let dp = d_params.bind(g, false)?;
    let mut logits = Vec::new();
    let (mut l1_main, mut l1_sr) = (Vec::new(), Vec::new());
    for (i, item) in batch.iter().enumerate() {
        let mut fakes = vec![pass.main[i]];
        fakes.extend(pass.sr[i]);
        for &f in &fakes {
            logits.push(disc.discriminate(g, &dp, f, item.style, item.content)?);
        }
        l1_main.push(mean_abs_diff(g, pass.main[i], pass.targets[i])?);
        if let Some(s) = pass.sr[i] {
            l1_sr.push(mean_abs_diff(g, s, pass.targets[i])?);
        }
    }
    let adv = adv_loss_g(g, &logits)?;
    let lm = mean_of(g, &l1_main)?;
    let l1 = match l1_sr.is_empty() {
        true => lm,
        false => {
            let ls = mean_of(g, &l1_sr)?;
            g.add(lm, ls)?
        }
    };
    let a = g.scale(adv, cfg.lambda_adv)?;
    let b = g.scale(l1, cfg.lambda_l1)?;
    let total = g.add(a, b)?;
    let scalar = |g: &Graph<T>, v: Var| g.value(v).data()[0].as_f64();
    let losses = GenLosses {
        adv: scalar(g, adv),
        l1_main: scalar(g, lm),
        l1_sr: if l1_sr.is_empty() {
            0.0
        } else {
            let ls = mean_of(g, &l1_sr)?;
            scalar(g, ls)
        },
    };
    let grads = collect_grads(g, total, &pass.params)?;
    Ok((grads, losses))
}

fn collect_grads<T: Element>(g: &Graph<T>, loss: Var, p: &Bound) -> Result<Vec<Option<Tensor<T>>>> {
    let mut grads = g.backward(loss)?;
    Ok(p.vars().iter().map(|&v| grads.take(v)).collect())
}

pub fn grad_norm<T: Element>(grads: &[Option<Tensor<T>>]) -> f64 {
    grads
        .iter()
        .flatten()
        .flat_map(|t| t.data().iter())
        .map(|&x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Discriminator,
    Generator,
}

/// Mean main-branch and self-reconstruction L1 over a fixed pair list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub l1_main: f64,
    pub l1_sr: f64,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: FontModel<f32>,
    pub opt_g: Adam<f32>,
    pub opt_d: Adam<f32>,
    pub iteration: usize,
    rng: ChaCha8Rng,
    train_pairs: Vec<(usize, usize)>,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: &Dataset) -> Result<Self> {
        config.validate()?;
        if data.k != config.k {
            return Err(CoreError::Config(format!(
                "dataset mapping is {}-shot but k = {}",
                data.k, config.k
            )));
        }
        let mut model = FontModel::new(&config.model_config(data), config.seed)?;
        let train_pairs = data.train_pairs();
        if train_pairs.is_empty() {
            return Err(CoreError::Data("no training pairs (seen styles × seen characters)".into()));
        }
        if config.output_prior {
            let name = model.generator.output_bias_name();
            let bias = output_prior_logit(data, &train_pairs);
            model.g_params.set(&name, Tensor::from_f64(&[1], &[bias])?)?;
        }
        Ok(Self {
            opt_g: Adam::new(&model.g_params, config.lr_g, config.beta1, config.beta2),
            opt_d: Adam::new(&model.d_params, config.lr_d, config.beta1, config.beta2),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0xDA7A)),
            model,
            config,
            iteration: 0,
            train_pairs,
        })
    }

    /// Reference characters for `content`: the fixed mapping, or with
    /// reference selection disabled, `k` random training characters that
    /// share a component with it (padded by duplicating the first).
    pub fn pick_refs(data: &Dataset, use_rs: bool, k: usize, content: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if use_rs {
            return Ok(data.mapped_refs(content));
        }
        let mut pool: Vec<usize> = data.sharing_pool(content)?.into_iter().filter(|&c| c != content).collect();
        if pool.is_empty() {
            return Ok(data.mapped_refs(content));
        }
        pool.shuffle(rng);
        pool.truncate(k);
        while pool.len() < k {
            pool.push(pool[0]);
        }
        Ok(pool)
    }

    pub fn item(data: &Dataset, style: usize, content: usize, refs: &[usize]) -> BatchItem<f32> {
        BatchItem {
            style,
            content,
            content_image: data.content_image(content).tensor(),
            target: data.glyph(style, content).tensor(),
            refs: refs.iter().map(|&r| data.glyph(style, r).tensor()).collect(),
        }
    }

    pub fn next_batch(&mut self, data: &Dataset) -> Result<Vec<BatchItem<f32>>> {
        (0..self.config.batch_size)
            .map(|_| {
                let (s, c) = self.train_pairs[self.rng.random_range(0..self.train_pairs.len())];
                let refs = Self::pick_refs(data, self.config.use_rs, self.config.k, c, &mut self.rng)?;
                Ok(Self::item(data, s, c, &refs))
            })
            .collect()
    }

    pub fn training_step(&mut self, batch: &[BatchItem<f32>]) -> Result<StepReport> {
        self.training_step_observed(batch, |_, _| {})
    }

    /// `observe` runs after the discriminator update and again after the
    /// generator update.
    pub fn training_step_observed(
        &mut self,
        batch: &[BatchItem<f32>],
        mut observe: impl FnMut(Phase, &FontModel<f32>),
    ) -> Result<StepReport> {
        self.iteration += 1;
        let iteration = self.iteration;
        let cfg = &self.config;
        let mut pass = generator_forward(&self.model.generator, &self.model.g_params, cfg, batch)?;
        let fakes: Vec<Vec<Tensor<f32>>> = (0..batch.len())
            .map(|i| {
                let mut v = vec![pass.graph.value(pass.main[i]).clone()];
                v.extend(pass.sr[i].map(|s| pass.graph.value(s).clone()));
                v
            })
            .collect();
        let (loss_d, grad_norm_d) = discriminator_phase(
            &self.model.discriminator,
            &mut self.model.d_params,
            &mut self.opt_d,
            cfg,
            batch,
            &fakes,
        )?;
        observe(Phase::Discriminator, &self.model);
        let (grads, losses) = generator_phase(&mut pass, &self.model.discriminator, &self.model.d_params, cfg, batch)?;
        drop(pass);
        let grad_norm_g = grad_norm(&grads);
        let report = StepReport {
            iteration,
            loss_g_adv: losses.adv,
            loss_d,
            loss_l1_main: losses.l1_main,
            loss_l1_sr: losses.l1_sr,
            grad_norm_g,
            grad_norm_d,
        };
        if !report.is_finite() {
            return Err(CoreError::Diverged {
                iteration,
                what: format!("non-finite loss or gradient: {}", report.tsv_row()),
            });
        }
        self.opt_g.update(&mut self.model.g_params, &grads);
        if !self.model.g_params.is_finite() || !self.model.d_params.is_finite() {
            return Err(CoreError::Diverged {
                iteration,
                what: "parameters became non-finite".into(),
            });
        }
        observe(Phase::Generator, &self.model);
        Ok(report)
    }

    /// Evaluate with a fixed reference draw so repeated calls agree.
    pub fn evaluate(&self, data: &Dataset, pairs: &[(usize, usize)]) -> Result<EvalReport> {
        evaluate(&self.model, &self.config, data, pairs)
    }
}

/// `logit(mean target pixel)`, clamped away from 0 and 1.
pub fn output_prior_logit(data: &Dataset, pairs: &[(usize, usize)]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for &(s, c) in pairs {
        let px = &data.glyph(s, c).pixels;
        sum += px.iter().map(|&p| p as f64).sum::<f64>();
        n += px.len();
    }
    let p = (sum / n.max(1) as f64).clamp(1e-3, 1.0 - 1e-3);
    (p / (1.0 - p)).ln()
}

pub fn evaluate(model: &FontModel<f32>, cfg: &TrainConfig, data: &Dataset, pairs: &[(usize, usize)]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(CoreError::Data("evaluation needs at least one pair".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0xE7A1));
    let (mut main, mut sr) = (0.0, 0.0);
    for &(s, c) in pairs {
        let refs = Trainer::pick_refs(data, cfg.use_rs, cfg.k, c, &mut rng)?;
        let item = Trainer::item(data, s, c, &refs);
        let out = model.infer(&item.content_image, &item.refs, cfg.use_sam)?;
        main += mean_abs(&out.image, &item.target);
        let rec = model.infer(&item.content_image, std::slice::from_ref(&item.target), cfg.use_sam)?;
        sr += mean_abs(&rec.image, &item.target);
    }
    let n = pairs.len() as f64;
    Ok(EvalReport {
        l1_main: main / n,
        l1_sr: sr / n,
    })
}

fn mean_abs(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum::<f64>()
        / a.numel() as f64
}

/// Training pairs used to track the self-reconstruction branch: up to `n`
/// seen pairs spread evenly over the list.
pub fn probe_pairs(data: &Dataset, n: usize) -> Vec<(usize, usize)> {
    let all = data.train_pairs();
    let step = (all.len() / n.max(1)).max(1);
    all.into_iter().step_by(step).take(n).collect()
}

/// Held-out evaluation pairs: unseen styles × unseen characters.
pub fn heldout_pairs(data: &Dataset) -> Vec<(usize, usize)> {
    data.pairs(false, false)
}

pub struct TrainOutcome {
    pub model: FontModel<f32>,
    pub log: String,
    pub reports: Vec<StepReport>,
    pub initial: EvalSummary,
    pub last: EvalSummary,
}

/// Held-out main-branch L1 and training-pair self-reconstruction L1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub heldout_l1: f64,
    pub sr_l1: f64,
}

pub const SR_PROBES: usize = 32;

/// Run the configured number of iterations. `on_report` sees every logged row.
pub fn train(config: TrainConfig, data: &Dataset, mut on_report: impl FnMut(&StepReport)) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, data)?;
    let heldout = heldout_pairs(data);
    let probes = probe_pairs(data, SR_PROBES);
    let summarize = |t: &Trainer| -> Result<EvalSummary> {
        let h = if heldout.is_empty() { None } else { Some(t.evaluate(data, &heldout)?) };
        let p = t.evaluate(data, &probes)?;
        Ok(EvalSummary {
            heldout_l1: h.map_or(f64::NAN, |h| h.l1_main),
            sr_l1: p.l1_sr,
        })
    };
    let initial = summarize(&trainer)?;
    let mut log = String::from(StepReport::TSV_HEADER);
    log.push('\n');
    let mut reports = Vec::new();
    let total = trainer.config.iterations;
    for it in 1..=total {
        let batch = trainer.next_batch(data)?;
        let report = trainer.training_step(&batch)?;
        if it % trainer.config.log_every == 0 || it == total {
            let _ = writeln!(log, "{}", report.tsv_row());
            on_report(&report);
            reports.push(report);
        }
    }
    let last = summarize(&trainer)?;
    Ok(TrainOutcome {
        model: trainer.model,
        log,
        reports,
        initial,
        last,
    })
}

/// Model weights plus the config and dataset description, so generation
/// needs nothing else.
pub fn to_checkpoint(model: &FontModel<f32>, cfg: &TrainConfig, data: &Dataset, iteration: usize) -> Checkpoint<f32> {
    let mut ck = Checkpoint::new();
    ck.meta.insert("config".into(), cfg.to_toml());
    ck.meta.insert("iteration".into(), iteration.to_string());
    ck.meta.extend(data.describe());
    ck.groups.push(("generator".into(), model.g_params.clone()));
    ck.groups.push(("discriminator".into(), model.d_params.clone()));
    ck
}

pub struct Restored {
    pub model: FontModel<f32>,
    pub config: TrainConfig,
    pub data: Dataset,
}

pub fn from_checkpoint(ck: &Checkpoint<f32>) -> Result<Restored> {
    let config = TrainConfig::from_toml(ck.meta("config")?)?;
    let data = Dataset::from_description(|k| ck.meta(k))?;
    let mut model = FontModel::new(&config.model_config(&data), config.seed)?;
    adopt(&mut model.g_params, ck.group("generator")?)?;
    adopt(&mut model.d_params, ck.group("discriminator")?)?;
    Ok(Restored { model, config, data })
}

/// Copy `src` into `dst`, requiring identical names, shapes and flags.
fn adopt(dst: &mut ParamStore<f32>, src: &ParamStore<f32>) -> Result<()> {
    if dst.len() != src.len() {
        return Err(CoreError::Checkpoint(format!(
            "checkpoint has {} tensors, model expects {}",
            src.len(),
            dst.len()
        )));
    }
    for p in src.params() {
        let have = dst
            .get(&p.name)
            .ok_or_else(|| CoreError::Checkpoint(format!("unexpected tensor `{}`", p.name)))?;
        if have.shape() != p.value.shape() {
            return Err(CoreError::Checkpoint(format!(
                "tensor `{}` has shape {:?}, model expects {:?}",
                p.name,
                p.value.shape(),
                have.shape()
            )));
        }
        dst.set(&p.name, p.value.clone())?;
    }
    Ok(())
}
