//! Public use of a container: denoise without any key.
//!
//! `cargo run --release --example denoise_image [model.pusn]`
//! writes `clean.png`, `noisy.png` and `denoised.png` to the temp directory.

mod common;

use pusnet::datapipe::synth;
use pusnet::trainer::add_gaussian_noise;
use pusnet::{evaluate_pair, trigger, Executor, Key, Mode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let container = common::load_or_train(300)?;
    let exec = Executor::new(container.spec.clone())?;
    let purified = trigger(&container, &Key::new(Vec::new()), Mode::Denoise)?;

    let clean = synth::scene(424242, 96, 96);
    let noisy = add_gaussian_noise(&clean, 20.0, &mut ChaCha8Rng::seed_from_u64(1));
    let denoised = exec.denoise(&purified, &noisy)?;

    let dir = std::env::temp_dir();
    clean.save_png(dir.join("clean.png"))?;
    noisy.save_png(dir.join("noisy.png"))?;
    denoised.save_png(dir.join("denoised.png"))?;
    println!("noisy    {:.2} dB", evaluate_pair(&clean, &noisy)?.psnr);
    println!("denoised {:.2} dB", evaluate_pair(&clean, &denoised)?.psnr);
    println!("images in {}", dir.display());
    Ok(())
}
