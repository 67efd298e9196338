//! Private use of a container: hide one image in another with the encoder
//! key, then reveal it with the decoder key. A wrong key reveals little.
//!
//! `cargo run --release --example hide_and_recover [model.pusn]`

mod common;

use pusnet::datapipe::{quantize, synth};
use pusnet::{evaluate_pair, surrogate, trigger, Executor, Key, Mode};

fn main() -> anyhow::Result<()> {
    let container = common::load_or_train(300)?;
    let keys = surrogate::keys();
    let exec = Executor::new(container.spec.clone())?;
    let encoder = trigger(&container, &keys.encoder, Mode::Encode)?;
    let decoder = trigger(&container, &keys.decoder, Mode::Decode)?;
    let stranger = trigger(&container, &Key::from("not the decoder key"), Mode::Decode)?;

    let cover = synth::scene(77, 64, 64);
    let secret = synth::scene(78, 64, 64);
    let stego = quantize(&exec.encode(&encoder, &cover, &secret)?);
    let revealed = exec.decode(&decoder, &stego)?;
    let guessed = exec.decode(&stranger, &stego)?;

    println!("stego vs cover            {:.2} dB", evaluate_pair(&cover, &stego)?.psnr);
    println!("recovered vs secret       {:.2} dB", evaluate_pair(&secret, &revealed)?.psnr);
    println!("wrong-key output vs secret {:.2} dB", evaluate_pair(&secret, &guessed)?.psnr);
    let dir = std::env::temp_dir();
    stego.save_png(dir.join("stego.png"))?;
    revealed.save_png(dir.join("recovered.png"))?;
    println!("images in {}", dir.display());
    Ok(())
}
