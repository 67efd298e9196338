//! Trains the compact network with the desk-scale protocol, logs the three
//! losses, scores the result on held-out scenes and saves the container.
//!
//! `cargo run --release --example train_compact [out.pusn] [iterations]`

use std::io::Write;

use pusnet::surrogate;
use pusnet::trainer::{train_with, MetricsLog};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "compact.pusn".into());
    let mut cfg = surrogate::config();
    if let Some(n) = std::env::args().nth(2) {
        cfg.iterations = n.parse()?;
    }
    let keys = surrogate::keys();
    let mut log = MetricsLog::new(std::io::stderr())?;
    let every = (cfg.iterations / 20).max(1);
    let container = train_with(&cfg, &keys, &surrogate::training_source(), |rec, _| {
        if (rec.iteration + 1) % every == 0 {
            log.record(rec)?;
        }
        Ok(())
    })?;
    container.save(&out)?;

    let s = surrogate::score(&container, &keys, &surrogate::held_out(), cfg.noise_sigma, surrogate::EVAL_NOISE_SEED)?;
    let mut o = std::io::stdout().lock();
    writeln!(o, "saved {out}")?;
    writeln!(o, "noisy    psnr {:6.2}  ssim {:.4}", s.noisy.psnr, s.noisy.ssim)?;
    writeln!(o, "denoised psnr {:6.2}  ssim {:.4}", s.denoise.psnr, s.denoise.ssim)?;
    writeln!(o, "stego    psnr {:6.2}  ssim {:.4}", s.stego.psnr, s.stego.ssim)?;
    writeln!(o, "recovery psnr {:6.2}  ssim {:.4}", s.recover.psnr, s.recover.ssim)?;
    Ok(())
}
