//! What an analyst holding the published container can learn: kernel
//! weight distances to the triggered networks, and how much random keys
//! reveal.
//!
//! `cargo run --release --example model_steganalysis [model.pusn]`

mod common;

use pusnet::modelsteg::{emd_matrix, leakage_trials, write_matrix};
use pusnet::{surrogate, trigger, Key, Mode};

fn main() -> anyhow::Result<()> {
    let container = common::load_or_train(300)?;
    let keys = surrogate::keys();
    let purified = trigger(&container, &Key::new(Vec::new()), Mode::Denoise)?;
    let encoder = trigger(&container, &keys.encoder, Mode::Encode)?;
    let decoder = trigger(&container, &keys.decoder, Mode::Decode)?;
    let m = emd_matrix(&[&purified, &encoder, &decoder])?;
    println!("kernel weight EMD:");
    let names = ["purified", "encoder", "decoder"].map(String::from);
    write_matrix(std::io::stdout().lock(), &names, &m)?;

    let samples = surrogate::stego_samples(&container, &keys.encoder, &surrogate::held_out())?;
    let report = leakage_trials(&container, 10, 0, &samples, &[&keys.encoder, &keys.decoder])?;
    println!("\nten random keys:");
    report.write_csv(std::io::stdout().lock())?;
    Ok(())
}
