//! Desk-scale training protocol: the compact network trained for a few
//! thousand steps on procedural scenes, then scored on held-out scenes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datapipe::{quantize, synth, InMemorySource};
use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::keymat::{trigger, Key, Mode};
use crate::metrics::{evaluate_pair, mean_report, QualityReport};
use crate::modelsteg::LeakageSample;
use crate::netcore::{Executor, NetworkSpec};
use crate::trainer::{add_gaussian_noise, TrainConfig, TrainKeys};
use crate::ModelContainer;

pub const TRAIN_IMAGES: usize = 32;
pub const TRAIN_IMAGE_SIZE: usize = 128;
pub const HELD_OUT_IMAGES: usize = 8;
pub const HELD_OUT_SIZE: usize = 64;
pub const TRAIN_SEED: u64 = 1000;
pub const HELD_OUT_SEED: u64 = 5000;
/// Seed of the noise added to the held-out images.
pub const EVAL_NOISE_SEED: u64 = 9;

/// Compact network, 64-pixel crops, 2,000 steps at sparse ratio 0.9.
pub fn config() -> TrainConfig {
    TrainConfig {
        spec: NetworkSpec::compact(),
        crop: 64,
        lr0: 3e-3,
        halve_every: 1000,
        iterations: 2000,
        sparse_ratio: 0.9,
        ..TrainConfig::default()
    }
}

pub fn keys() -> TrainKeys {
    TrainKeys { encoder: Key::from("surrogate-encoder"), decoder: Key::from("surrogate-decoder") }
}

pub fn training_source() -> InMemorySource {
    InMemorySource::new(synth::scenes(TRAIN_SEED, TRAIN_IMAGES, TRAIN_IMAGE_SIZE, TRAIN_IMAGE_SIZE))
}

pub fn held_out() -> Vec<ImagePlane> {
    synth::scenes(HELD_OUT_SEED, HELD_OUT_IMAGES, HELD_OUT_SIZE, HELD_OUT_SIZE)
}

/// Index of the secret hidden in cover `i` out of `n` images.
pub fn secret_index(i: usize, n: usize) -> usize {
    (i + n / 2) % n
}

/// Mean quality of each task over a held-out set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    /// Noisy input against its clean image.
    pub noisy: QualityReport,
    /// Denoised output against the clean image.
    pub denoise: QualityReport,
    /// Stego image against its cover.
    pub stego: QualityReport,
    /// Secret recovered from the 8-bit stego against the original secret.
    pub recover: QualityReport,
}

/// Scores a container on `images` with Gaussian noise of `noise_sigma`
/// (8-bit units) drawn from `noise_seed`.
pub fn score(
    container: &ModelContainer,
    keys: &TrainKeys,
    images: &[ImagePlane],
    noise_sigma: f64,
    noise_seed: u64,
) -> Result<Scores> {
    if images.len() < 2 {
        return Err(Error::EmptyDataset("scoring needs at least two images".into()));
    }
    let exec = Executor::new(container.spec.clone())?;
    let purified = trigger(container, &Key::new(Vec::new()), Mode::Denoise)?;
    let decoder = trigger(container, &keys.decoder, Mode::Decode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut noisy = Vec::with_capacity(images.len());
    let mut denoise = Vec::with_capacity(images.len());
    for clean in images {
        let x = add_gaussian_noise(clean, noise_sigma, &mut rng);
        denoise.push(evaluate_pair(clean, &exec.denoise(&purified, &x)?)?);
        noisy.push(evaluate_pair(clean, &x)?);
    }
    let samples = stego_samples(container, &keys.encoder, images)?;
    let mut stego = Vec::with_capacity(samples.len());
    let mut recover = Vec::with_capacity(samples.len());
    for s in &samples {
        stego.push(evaluate_pair(&s.cover, &s.stego)?);
        recover.push(evaluate_pair(&s.secret, &exec.decode(&decoder, &s.stego)?)?);
    }
    let mean = |r: &[QualityReport]| mean_report(r).expect("non-empty");
    Ok(Scores {
        noisy: mean(&noisy),
        denoise: mean(&denoise),
        stego: mean(&stego),
        recover: mean(&recover),
    })
}

/// Cover/secret pairs from `images` with their 8-bit stego images made by the
/// genuine encoder.
pub fn stego_samples(container: &ModelContainer, encoder_key: &Key, images: &[ImagePlane]) -> Result<Vec<LeakageSample>> {
    let exec = Executor::new(container.spec.clone())?;
    let encoder = trigger(container, encoder_key, Mode::Encode)?;
    let n = images.len();
    (0..n)
        .map(|i| {
            let cover = images[i].clone();
            let secret = images[secret_index(i, n)].clone();
            let stego = quantize(&exec.encode(&encoder, &cover, &secret)?);
            Ok(LeakageSample { cover, secret, stego })
        })
        .collect()
}
