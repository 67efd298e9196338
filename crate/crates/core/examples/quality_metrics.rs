//! PSNR, SSIM, APD and RMSE of a clean image against noisy, blurred and
//! shifted versions of itself.

use pusnet::datapipe::synth;
use pusnet::metrics::{evaluate_pair, write_csv};
use pusnet::trainer::add_gaussian_noise;
use pusnet::ImagePlane;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn box_blur(x: &ImagePlane) -> ImagePlane {
    let (c, h, w) = x.shape();
    ImagePlane::from_fn(c, h, w, |ch, y, xx| {
        let mut sum = 0.0;
        let mut n = 0.0;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (yy, xs) = (y as i64 + dy, xx as i64 + dx);
                if yy >= 0 && xs >= 0 && (yy as usize) < h && (xs as usize) < w {
                    sum += x.get(ch, yy as usize, xs as usize);
                    n += 1.0;
                }
            }
        }
        sum / n
    })
}

fn main() -> pusnet::Result<()> {
    let clean = synth::scene(3, 96, 96);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (c, h, w) = clean.shape();
    let variants = [
        ("identical", clean.clone()),
        ("noise_5", add_gaussian_noise(&clean, 5.0, &mut rng)),
        ("noise_20", add_gaussian_noise(&clean, 20.0, &mut rng)),
        ("blur_3x3", box_blur(&clean)),
        ("brighter", ImagePlane::from_fn(c, h, w, |ch, y, x| clean.get(ch, y, x) + 0.05)),
    ];
    let mut rows = Vec::new();
    for (name, test) in &variants {
        rows.push((*name, evaluate_pair(&clean, test)?));
    }
    write_csv(std::io::stdout().lock(), rows.iter().map(|(n, r)| (*n, r)))
}
