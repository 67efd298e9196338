//! Joint training of the shared weights on embedding, recovery and denoising.
//!
//! Each step runs three forwards: the purified network (holes at zero) on the
//! noisy patches, the encoder (holes filled from the encoder key) on each
//! cover/secret pair, and the decoder (holes filled from the decoder key) on
//! the stego images that encoder just produced. Only the shared weights move:
//! kept kernel positions plus every bias and normalization parameter.

use std::io::Write;
use std::sync::mpsc::sync_channel;
use std::thread;

use log::info;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::container::{Metadata, ModelContainer};
use crate::datapipe::{BatchSampler, BatchShape, PatchSource, TrainBatch};
use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::keymat::{compose_into, synthesize_fill, FillWeights, Key};
use crate::netcore::{Executor, NetworkSpec, ParameterStore, Scalar};
use crate::sparsity::{apply_mask, generate_mask, init_weights, SparseMask};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Relative weights of the three objectives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub embed: f64,
    pub recover: f64,
    pub denoise: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            embed: 1.0,
            recover: 0.75,
            denoise: 0.25,
        }
    }
}

impl LossWeights {
    fn needs_encoder(&self) -> bool {
        self.embed > 0.0 || self.recover > 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub spec: NetworkSpec,
    pub weights: LossWeights,
    pub lr0: f64,
    pub halve_every: u64,
    pub weight_decay: f64,
    pub batch: usize,
    pub crop: usize,
    /// Noise standard deviation in 8-bit units.
    pub noise_sigma: f64,
    /// Fraction of kernel weights kept by the mask.
    pub sparse_ratio: f64,
    pub iterations: u64,
    pub w0_seed: u64,
    pub data_seed: u64,
    /// Sample the next batch on a helper thread while the current one trains.
    /// The batch sequence is the same either way.
    pub prefetch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            spec: NetworkSpec::default(),
            weights: LossWeights::default(),
            lr0: 1e-4,
            halve_every: 500,
            weight_decay: 1e-5,
            batch: 8,
            crop: 256,
            noise_sigma: 20.0,
            sparse_ratio: 0.9,
            iterations: 3000,
            w0_seed: 0,
            data_seed: 1,
            prefetch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        let w = &self.weights;
        for (name, v) in [("lambda_e", w.embed), ("lambda_r", w.recover), ("lambda_d", w.denoise)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if self.halve_every == 0 {
            return bad("halve_every must be at least 1".into());
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch < 2 || self.batch % 2 != 0 {
            return bad(format!("batch must be even and at least 2, got {}", self.batch));
        }
        if self.crop == 0 {
            return bad("crop must be positive".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(self.sparse_ratio > 0.0 && self.sparse_ratio <= 1.0) {
            return bad(format!("sparse ratio must be in (0, 1], got {}", self.sparse_ratio));
        }
        Ok(())
    }

    pub fn batch_shape(&self) -> BatchShape {
        BatchShape {
            batch: self.batch,
            crop: self.crop,
            noise_sigma: self.noise_sigma,
        }
    }

    /// Parses `key = value` lines; `#` starts a comment. A `preset` line
    /// (`default`, `compact`, `tiny`) selects the base network wherever it
    /// appears; individual network keys then override it.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::InvalidArgument(format!(
                    "config line {}: expected key=value, got {raw:?}",
                    n + 1
                )));
            };
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = TrainConfig::default();
        for (k, v) in &pairs {
            if k == "preset" {
                cfg.spec = match v.as_str() {
                    "default" => NetworkSpec::default(),
                    "compact" => NetworkSpec::compact(),
                    "tiny" => NetworkSpec::tiny(),
                    other => return Err(Error::InvalidArgument(format!("unknown preset {other:?}"))),
                };
            }
        }
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        let last = cfg.spec.num_conv_layers;
        cfg.spec.bias_layers = vec![1, last];
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad value for {key}: {value:?}")))
        }
        match key {
            "preset" => {}
            "lambda_e" => self.weights.embed = num(key, value)?,
            "lambda_r" => self.weights.recover = num(key, value)?,
            "lambda_d" => self.weights.denoise = num(key, value)?,
            "lr0" => self.lr0 = num(key, value)?,
            "halve_every" => self.halve_every = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "crop" => self.crop = num(key, value)?,
            "noise_sigma" => self.noise_sigma = num(key, value)?,
            "sparse_ratio" | "S" => self.sparse_ratio = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "w0_seed" => self.w0_seed = num(key, value)?,
            "data_seed" => self.data_seed = num(key, value)?,
            "prefetch" => self.prefetch = num(key, value)?,
            "layers" => self.spec.num_conv_layers = num(key, value)?,
            "channels" => self.spec.channels = num(key, value)?,
            "kernel" => self.spec.kernel = num(key, value)?,
            "gn_groups" => self.spec.gn_groups = num(key, value)?,
            "lrelu_slope" => self.spec.lrelu_slope = num(key, value)?,
            "split_layer" => self.spec.split_layer = num(key, value)?,
            "skip" => {
                self.spec.skip_range = match value {
                    "none" => None,
                    v => {
                        let (a, b) = v.split_once(',').ok_or_else(|| {
                            Error::InvalidArgument(format!("skip must be `start,end` or `none`, got {v:?}"))
                        })?;
                        Some((num(key, a.trim())?, num(key, b.trim())?))
                    }
                }
            }
            other => return Err(Error::InvalidArgument(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }
}

/// Encoder and decoder keys. Kept apart from [`TrainConfig`] so that
/// configurations can be logged and stored without leaking them.
#[derive(Clone, Debug)]
pub struct TrainKeys {
    pub encoder: Key,
    pub decoder: Key,
}

/// `lr0 * 2^-floor(iteration / halve_every)`.
pub fn lr_at(iteration: u64, config: &TrainConfig) -> f64 {
    let halvings = (iteration / config.halve_every.max(1)).min(2048) as i32;
    config.lr0 * 0.5f64.powi(halvings)
}

/// Adds i.i.d. Gaussian noise of `sigma / 255` per value. No clamping.
pub fn add_gaussian_noise(x: &ImagePlane, sigma: f64, rng: &mut impl Rng) -> ImagePlane {
    if sigma == 0.0 {
        return x.clone();
    }
    let scale = sigma / 255.0;
    let mut out = x.clone();
    for v in out.data_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v = (f64::from(*v) + scale * n) as f32;
    }
    out
}

fn mse(a: &[ImagePlane], b: &[ImagePlane]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} images", a.len(), b.len())));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (x, y) in a.iter().zip(b) {
        x.ensure_same_shape(y, "loss pair")?;
        for (&p, &q) in x.data().iter().zip(y.data()) {
            let d = f64::from(p) - f64::from(q);
            sum += d * d;
        }
        count += x.data().len();
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Mean squared error of (stego, cover), (recovered, secret) and
/// (denoised, clean), each averaged over every value of its batch.
pub fn compute_losses(
    stego: &[ImagePlane],
    cover: &[ImagePlane],
    recovered: &[ImagePlane],
    secret: &[ImagePlane],
    denoised: &[ImagePlane],
    clean: &[ImagePlane],
) -> Result<(f64, f64, f64)> {
    Ok((mse(stego, cover)?, mse(recovered, secret)?, mse(denoised, clean)?))
}

/// Batch losses. `None` marks a branch that was not run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Losses {
    pub embed: Option<f64>,
    pub recover: Option<f64>,
    pub denoise: Option<f64>,
}

impl Losses {
    pub fn is_finite(&self) -> bool {
        [self.embed, self.recover, self.denoise]
            .iter()
            .all(|v| v.is_none_or(f64::is_finite))
    }

    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.embed * self.embed.unwrap_or(0.0)
            + w.recover * self.recover.unwrap_or(0.0)
            + w.denoise * self.denoise.unwrap_or(0.0)
    }
}

/// What one optimizer step did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub iteration: u64,
    pub losses: Losses,
    pub lr: f64,
}

/// One line per step: `iteration emb rec den lr`, `-` for skipped branches.
pub struct MetricsLog<W: Write> {
    out: W,
}

impl<W: Write> MetricsLog<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "# iteration emb rec den lr")?;
        Ok(Self { out })
    }

    pub fn record(&mut self, r: &StepRecord) -> Result<()> {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.8e}"));
        writeln!(
            self.out,
            "{} {} {} {} {:.6e}",
            r.iteration,
            f(r.losses.embed),
            f(r.losses.recover),
            f(r.losses.denoise),
            r.lr
        )?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

struct TaskOut<T> {
    embed: f64,
    recover: f64,
    denoise: f64,
    grad: Vec<T>,
}

/// Weights, mask, fills and optimizer moments of a training run.
pub struct TrainState<T: Scalar = f32> {
    config: TrainConfig,
    exec: Executor,
    mask: SparseMask,
    params: ParameterStore<T>,
    encoder: ParameterStore<T>,
    decoder: ParameterStore<T>,
    fill_encoder: FillWeights,
    fill_decoder: FillWeights,
    /// Indices of the shared weights, ascending.
    shared: Vec<usize>,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    iteration: u64,
}

impl<T: Scalar> TrainState<T> {
    /// Draws the initial weights, derives the mask from them, zeroes the
    /// holes and synthesizes both fills.
    pub fn new(config: &TrainConfig, keys: &TrainKeys) -> Result<Self> {
        config.validate()?;
        let spec = &config.spec;
        let mut w0 = init_weights(spec, config.w0_seed)?;
        let mask = generate_mask(&w0, config.sparse_ratio, config.w0_seed)?;
        apply_mask(&mut w0, &mask);
        let params = w0.cast::<T>();
        let exec = Executor::new(spec.clone())?;
        let fill_encoder = synthesize_fill(spec, &keys.encoder)?;
        let fill_decoder = synthesize_fill(spec, &keys.decoder)?;

        let layout = params.layout().clone();
        let mut shared = Vec::with_capacity(layout.total());
        let mut is_shared = vec![true; layout.total()];
        let mut i = 0;
        for r in layout.kernel_ranges() {
            for pos in r {
                is_shared[pos] = mask.is_kept(i);
                i += 1;
            }
        }
        shared.extend((0..layout.total()).filter(|&p| is_shared[p]));
        let n = shared.len();
        let mut s = Self {
            config: config.clone(),
            exec,
            mask,
            encoder: params.clone(),
            decoder: params.clone(),
            params,
            fill_encoder,
            fill_decoder,
            shared,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            iteration: 0,
        };
        s.recompose();
        Ok(s)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn executor(&self) -> &Executor {
        &self.exec
    }

    pub fn params(&self) -> &ParameterStore<T> {
        &self.params
    }

    pub fn mask(&self) -> &SparseMask {
        &self.mask
    }

    pub fn fill_encoder(&self) -> &FillWeights {
        &self.fill_encoder
    }

    pub fn fill_decoder(&self) -> &FillWeights {
        &self.fill_decoder
    }

    /// Dense encoder and decoder weights as of the last update.
    pub fn triggered(&self) -> (&ParameterStore<T>, &ParameterStore<T>) {
        (&self.encoder, &self.decoder)
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Store indices of the shared (trainable) weights, ascending.
    pub fn shared_indices(&self) -> &[usize] {
        &self.shared
    }

    /// Overwrites one shared weight. Holes are refused.
    pub fn set_shared(&mut self, index: usize, value: T) -> Result<()> {
        if self.shared.binary_search(&index).is_err() {
            return Err(Error::InvalidArgument(format!("index {index} is not a shared weight")));
        }
        self.params.values_mut()[index] = value;
        self.recompose();
        Ok(())
    }

    fn recompose(&mut self) {
        compose_into(&self.params, &self.mask, Some(&self.fill_encoder), &mut self.encoder);
        compose_into(&self.params, &self.mask, Some(&self.fill_decoder), &mut self.decoder);
    }

    fn to_tensor(x: &ImagePlane) -> Vec<T> {
        x.data().iter().map(|&v| T::of(f64::from(v))).collect()
    }

    fn sq_diff(a: &[T], b: &ImagePlane) -> f64 {
        a.iter()
            .zip(b.data())
            .map(|(&p, &q)| {
                let d = p.as_f64() - f64::from(q);
                d * d
            })
            .sum()
    }

    fn scaled_diff(a: &[T], b: &ImagePlane, scale: f64) -> Vec<T> {
        a.iter()
            .zip(b.data())
            .map(|(&p, &q)| T::of((p.as_f64() - f64::from(q)) * scale))
            .collect()
    }

    fn denoise_task(&self, noisy: &ImagePlane, clean: &ImagePlane, n_den: f64, grad: bool) -> TaskOut<T> {
        let (h, w) = (noisy.height(), noisy.width());
        let engine = self.exec.engine(self.params.values());
        let s = engine.single_forward(Self::to_tensor(noisy), h, w, grad);
        let denoise = Self::sq_diff(s.output(), clean);
        let mut g = Vec::new();
        if grad {
            g = vec![T::zero(); self.params.len()];
            let d = Self::scaled_diff(s.output(), clean, 2.0 * self.config.weights.denoise / n_den);
            engine.single_backward(&s, d, &mut g, false);
        }
        TaskOut {
            embed: 0.0,
            recover: 0.0,
            denoise,
            grad: g,
        }
    }

    fn pair_task(&self, cover: &ImagePlane, secret: &ImagePlane, n_pair: f64, grad: bool) -> TaskOut<T> {
        let (h, w) = (cover.height(), cover.width());
        let lw = self.config.weights;
        let enc = self.exec.engine(self.encoder.values());
        let dec = self.exec.engine(self.decoder.values());
        let trace = enc.encode_forward(Self::to_tensor(cover), Self::to_tensor(secret), h, w, grad);
        let stego = trace.merged.output();
        let embed = Self::sq_diff(stego, cover);
        let (mut recover, mut g) = (0.0, Vec::new());
        let run_decoder = lw.recover > 0.0;
        let ds = run_decoder.then(|| dec.single_forward(stego.to_vec(), h, w, grad));
        if let Some(ds) = &ds {
            recover = Self::sq_diff(ds.output(), secret);
        }
        if grad {
            g = vec![T::zero(); self.params.len()];
            let mut d_stego = Self::scaled_diff(stego, cover, 2.0 * lw.embed / n_pair);
            if let Some(ds) = &ds {
                let d_rec = Self::scaled_diff(ds.output(), secret, 2.0 * lw.recover / n_pair);
                let back = dec.single_backward(ds, d_rec, &mut g, true).expect("input gradient");
                for (a, b) in d_stego.iter_mut().zip(&back) {
                    *a = *a + *b;
                }
            }
            enc.encode_backward(&trace, d_stego, &mut g);
        }
        TaskOut {
            embed,
            recover,
            denoise: 0.0,
            grad: g,
        }
    }

    fn run(&self, batch: &TrainBatch, grad: bool) -> Result<(Losses, Vec<T>)> {
        let lw = self.config.weights;
        let half = batch.patches.len() / 2;
        let per_image = batch.patches.first().map_or(0, |p| p.data().len()) as f64;
        if batch.patches.is_empty() || batch.noisy.len() != batch.patches.len() {
            return Err(Error::InvalidArgument("batch needs matching clean and noisy patches".into()));
        }
        for p in batch.patches.iter().chain(&batch.noisy) {
            p.ensure_same_shape(&batch.patches[0], "batch patches")?;
        }
        let n_den = per_image * batch.patches.len() as f64;
        let n_pair = per_image * half as f64;
        let run_den = lw.denoise > 0.0;
        let run_enc = lw.needs_encoder() && half > 0;
        let mut tasks = Vec::new();
        if run_den {
            tasks.extend((0..batch.patches.len()).map(|i| (false, i)));
        }
        if run_enc {
            tasks.extend((0..half).map(|i| (true, i)));
        }
        let outs: Vec<TaskOut<T>> = tasks
            .par_iter()
            .map(|&(pair, i)| {
                if pair {
                    self.pair_task(&batch.covers()[i], &batch.secrets()[i], n_pair, grad)
                } else {
                    self.denoise_task(&batch.noisy[i], &batch.clean()[i], n_den, grad)
                }
            })
            .collect();
        let mut total = vec![T::zero(); if grad { self.params.len() } else { 0 }];
        let (mut e, mut r, mut d) = (0.0, 0.0, 0.0);
        for o in &outs {
            e += o.embed;
            r += o.recover;
            d += o.denoise;
            for (t, g) in total.iter_mut().zip(&o.grad) {
                *t = *t + *g;
            }
        }
        if grad {
            // Gradients landing on holes belong to the fills, which never move.
            let mut masked = vec![T::zero(); total.len()];
            for &i in &self.shared {
                masked[i] = total[i];
            }
            total = masked;
        }
        let losses = Losses {
            embed: run_enc.then_some(e / n_pair),
            recover: (run_enc && lw.recover > 0.0).then_some(r / n_pair),
            denoise: run_den.then_some(d / n_den),
        };
        Ok((losses, total))
    }

    /// Losses of the current weights on `batch`, without gradients.
    pub fn evaluate(&self, batch: &TrainBatch) -> Result<Losses> {
        Ok(self.run(batch, false)?.0)
    }

    /// Losses and the gradient of their weighted sum with respect to every
    /// store entry. Entries outside the shared set are zero.
    pub fn losses_and_grad(&self, batch: &TrainBatch) -> Result<(Losses, Vec<T>)> {
        self.run(batch, true)
    }

    /// One masked adaptive-moment update with decoupled weight decay.
    pub fn step(&mut self, batch: &TrainBatch) -> Result<StepRecord> {
        let (losses, grad) = self.losses_and_grad(batch)?;
        if !losses.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: self.iteration,
                emb: losses.embed,
                rec: losses.recover,
                den: losses.denoise,
            });
        }
        let lr = lr_at(self.iteration, &self.config);
        let t = (self.iteration + 1) as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        let decay = 1.0 - lr * self.config.weight_decay;
        let values = self.params.values_mut();
        for (k, &i) in self.shared.iter().enumerate() {
            let g = grad[i].as_f64();
            let m = &mut self.first_moment[k];
            let v = &mut self.second_moment[k];
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let update = lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            values[i] = T::of(values[i].as_f64() * decay - update);
        }
        self.recompose();
        let record = StepRecord {
            iteration: self.iteration,
            losses,
            lr,
        };
        self.iteration += 1;
        Ok(record)
    }

    /// Snapshot as a key-free container.
    pub fn to_container(&self, created_unix: i64) -> Result<ModelContainer> {
        let mut params = self.params.cast::<f32>();
        apply_mask(&mut params, &self.mask);
        ModelContainer::new(
            self.config.spec.clone(),
            self.mask.clone(),
            params,
            Metadata {
                data_seed: self.config.data_seed,
                iterations: self.iteration,
                created_unix,
            },
        )
    }
}

fn now_unix() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

/// Trains from scratch and returns the purified container.
pub fn train(config: &TrainConfig, keys: &TrainKeys, source: &dyn PatchSource) -> Result<ModelContainer> {
    train_with(config, keys, source, |_, _| Ok(()))
}

/// [`train`] with a callback after every step, e.g. for logging or
/// checkpoints.
pub fn train_with(
    config: &TrainConfig,
    keys: &TrainKeys,
    source: &dyn PatchSource,
    mut observe: impl FnMut(&StepRecord, &TrainState<f32>) -> Result<()>,
) -> Result<ModelContainer> {
    config.validate()?;
    if config.iterations == 0 {
        return Err(Error::InvalidArgument("iteration budget must be positive".into()));
    }
    if source.is_empty() {
        return Err(Error::EmptyDataset("training source has no images".into()));
    }
    let mut state = TrainState::<f32>::new(config, keys)?;
    let mut sampler = BatchSampler::new(config.data_seed);
    let shape = config.batch_shape();
    let mut on_batch = |batch: TrainBatch| -> Result<()> {
        let rec = state.step(&batch)?;
        if rec.iteration % 100 == 0 {
            info!(
                "iter {} lr {:.3e} emb {:?} rec {:?} den {:?}",
                rec.iteration, rec.lr, rec.losses.embed, rec.losses.recover, rec.losses.denoise
            );
        }
        observe(&rec, &state)
    };
    if config.prefetch {
        thread::scope(|scope| -> Result<()> {
            let (tx, rx) = sync_channel::<Result<TrainBatch>>(2);
            scope.spawn(move || {
                for _ in 0..config.iterations {
                    let b = sampler.sample(source, shape);
                    let stop = b.is_err();
                    if tx.send(b).is_err() || stop {
                        break;
                    }
                }
            });
            for b in rx.iter() {
                on_batch(b?)?;
            }
            Ok(())
        })?;
    } else {
        for _ in 0..config.iterations {
            on_batch(sampler.sample(source, shape)?)?;
        }
    }
    state.to_container(now_unix())
}
