#![allow(dead_code)]

use pusnet::datapipe::{synth, BatchSampler, BatchShape, InMemorySource, TrainBatch};
use pusnet::trainer::{LossWeights, Losses, TrainConfig, TrainKeys, TrainState};
use pusnet::{Key, NetworkSpec};

pub const FD_STEP: f64 = 1e-5;

fn batch(seed: u64, size: usize) -> TrainBatch {
    let src = InMemorySource::new(synth::scenes(seed, 6, size + 3, size + 3));
    BatchSampler::new(seed)
        .sample(&src, BatchShape { batch: 4, crop: size, noise_sigma: 20.0 })
        .unwrap()
}

fn pick(l: &Losses, which: usize) -> f64 {
    [l.embed, l.recover, l.denoise][which].unwrap()
}

/// Max relative error `|a - n| / max(|a|, |n|, 1e-8)` between analytic and
/// central-difference gradients of one loss term (0 embed, 1 recover,
/// 2 denoise) over every shared weight, on 8x8 crops in double precision.
pub fn worst_relative_error(spec: NetworkSpec, which: usize) -> f64 {
    let weights = match which {
        0 => LossWeights { embed: 1.0, recover: 0.0, denoise: 0.0 },
        1 => LossWeights { embed: 0.0, recover: 1.0, denoise: 0.0 },
        _ => LossWeights { embed: 0.0, recover: 0.0, denoise: 1.0 },
    };
    let cfg = TrainConfig { spec, weights, batch: 4, crop: 8, sparse_ratio: 0.7, ..TrainConfig::default() };
    let keys = TrainKeys { encoder: Key::from("grad-enc"), decoder: Key::from("grad-dec") };
    let mut st = TrainState::<f64>::new(&cfg, &keys).unwrap();
    let b = batch(which as u64 + 3, 8);
    let (_, grad) = st.losses_and_grad(&b).unwrap();
    let mut worst = 0.0f64;
    for &i in &st.shared_indices().to_vec() {
        let w = st.params().values()[i];
        st.set_shared(i, w + FD_STEP).unwrap();
        let up = pick(&st.evaluate(&b).unwrap(), which);
        st.set_shared(i, w - FD_STEP).unwrap();
        let down = pick(&st.evaluate(&b).unwrap(), which);
        st.set_shared(i, w).unwrap();
        let numeric = (up - down) / (2.0 * FD_STEP);
        let analytic = grad[i];
        let scale = analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic - numeric).abs() / scale);
    }
    worst
}

/// Every fixed-width encoding of `derive_seed(key)` plus the raw key bytes.
pub fn key_needles(key: &Key) -> Vec<Vec<u8>> {
    let seed = pusnet::keymat::derive_seed(key);
    let mut needles = vec![
        seed.to_le_bytes().to_vec(),
        seed.to_be_bytes().to_vec(),
        (seed as u32).to_le_bytes().to_vec(),
        (seed as u32).to_be_bytes().to_vec(),
        ((seed >> 32) as u32).to_le_bytes().to_vec(),
        ((seed >> 32) as u32).to_be_bytes().to_vec(),
    ];
    if key.as_bytes().len() >= 4 {
        needles.push(key.as_bytes().to_vec());
    }
    needles
}

pub fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}
