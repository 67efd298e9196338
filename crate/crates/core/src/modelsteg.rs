//! Model steganalysis: weight-distribution distance, random-key leakage, and
//! the denoising gap to a model trained without hidden networks.

use std::io::Write;

use rand::distr::{Alphanumeric, SampleString};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::container::ModelContainer;
use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::keymat::{trigger, Key, Mode};
use crate::metrics::{evaluate_pair, mean_report, QualityReport};
use crate::netcore::{Executor, ParameterStore};

/// Wasserstein-1 distance between the empirical distributions of `a` and
/// `b`: the integral of the absolute difference of their quantile functions.
/// Exact for any pair of sizes.
pub fn emd(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("distance needs non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("samples must be finite".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as u128, b.len() as u128);
    // Quantile breakpoints i/n and j/m on the common grid of step 1/(n*m).
    let scale = (n * m) as f64;
    let (mut i, mut j, mut pos) = (0usize, 0usize, 0u128);
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let next_a = (i as u128 + 1) * m;
        let next_b = (j as u128 + 1) * n;
        let end = next_a.min(next_b);
        total += (end - pos) as f64 / scale * (a[i] - b[j]).abs();
        pos = end;
        if next_a == end {
            i += 1;
        }
        if next_b == end {
            j += 1;
        }
    }
    Ok(total)
}

fn kernel_sample(store: &ParameterStore<f32>) -> Vec<f64> {
    store.maskable_values().map(f64::from).collect()
}

/// [`emd`] over the kernel weights of two stores. Sizes may differ.
pub fn emd_weights(a: &ParameterStore<f32>, b: &ParameterStore<f32>) -> Result<f64> {
    emd(&kernel_sample(a), &kernel_sample(b))
}

/// Pairwise distances between every pair of stores.
pub fn emd_matrix(stores: &[&ParameterStore<f32>]) -> Result<Vec<Vec<f64>>> {
    let samples: Vec<Vec<f64>> = stores.iter().map(|s| kernel_sample(s)).collect();
    let k = samples.len();
    let mut m = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let d = emd(&samples[i], &samples[j])?;
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    Ok(m)
}

/// Square comma-separated table with the names as header row and column.
pub fn write_matrix(mut out: impl Write, names: &[String], m: &[Vec<f64>]) -> Result<()> {
    writeln!(out, ",{}", names.join(","))?;
    for (name, row) in names.iter().zip(m) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.9e}")).collect();
        writeln!(out, "{name},{}", cells.join(","))?;
    }
    Ok(())
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len().max(1) as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// One cover/secret pair and the stego image the genuine encoder made of it.
#[derive(Clone, Debug)]
pub struct LeakageSample {
    pub cover: ImagePlane,
    pub secret: ImagePlane,
    pub stego: ImagePlane,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeakageTrial {
    pub index: usize,
    /// The random key, recorded so a trial can be replayed.
    pub key: String,
    pub stego_psnr: f64,
    pub stego_apd: f64,
    pub recover_psnr: f64,
    pub recover_apd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeakageReport {
    pub trials: Vec<LeakageTrial>,
    pub stego_psnr: Summary,
    pub stego_apd: Summary,
    pub recover_psnr: Summary,
    pub recover_apd: Summary,
}

impl LeakageReport {
    /// Builds the summaries from the rows, ordered by trial index.
    pub fn from_trials(mut trials: Vec<LeakageTrial>) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::InvalidArgument("leakage report needs at least one trial".into()));
        }
        trials.sort_by_key(|t| t.index);
        let col = |f: fn(&LeakageTrial) -> f64| Summary::of(trials.iter().map(f));
        Ok(Self {
            stego_psnr: col(|t| t.stego_psnr),
            stego_apd: col(|t| t.stego_apd),
            recover_psnr: col(|t| t.recover_psnr),
            recover_apd: col(|t| t.recover_apd),
            trials,
        })
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "trial,key,stego_psnr,stego_apd,recover_psnr,recover_apd")?;
        for t in &self.trials {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6}",
                t.index, t.key, t.stego_psnr, t.stego_apd, t.recover_psnr, t.recover_apd
            )?;
        }
        let f = |s: Summary| format!("{:.4}+-{:.4}", s.mean, s.std);
        writeln!(
            out,
            "# summary n={} stego_psnr={} stego_apd={} recover_psnr={} recover_apd={}",
            self.trials.len(),
            f(self.stego_psnr),
            f(self.stego_apd),
            f(self.recover_psnr),
            f(self.recover_apd)
        )?;
        Ok(())
    }
}

/// Draws `n` random 32-character keys from `seed`, skipping any in `exclude`.
pub fn random_keys(n: usize, seed: u64, exclude: &[&Key]) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys = Vec::with_capacity(n);
    while keys.len() < n {
        let k = Alphanumeric.sample_string(&mut rng, 32);
        if !exclude.iter().any(|e| e.as_bytes() == k.as_bytes()) {
            keys.push(k);
        }
    }
    keys
}

/// Fills the holes with random keys and measures how well the resulting
/// encoder hides (stego vs cover) and decoder reveals (output vs secret).
pub fn leakage_trials(
    container: &ModelContainer,
    n: usize,
    seed: u64,
    samples: &[LeakageSample],
    exclude: &[&Key],
) -> Result<LeakageReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no leakage evaluation images".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    container.validate()?;
    let exec = Executor::new(container.spec.clone())?;
    let keys = random_keys(n, seed, exclude);
    let trials: Result<Vec<LeakageTrial>> = keys
        .into_par_iter()
        .enumerate()
        .map(|(index, key)| {
            let k = Key::from(key.as_str());
            let enc = trigger(container, &k, Mode::Encode)?;
            let dec = trigger(container, &k, Mode::Decode)?;
            let mut hide = Vec::with_capacity(samples.len());
            let mut reveal = Vec::with_capacity(samples.len());
            for s in samples {
                let stego = exec.encode(&enc, &s.cover, &s.secret)?;
                hide.push(evaluate_pair(&s.cover, &stego)?);
                let rec = exec.decode(&dec, &s.stego)?;
                reveal.push(evaluate_pair(&s.secret, &rec)?);
            }
            let h = mean_report(&hide).expect("non-empty");
            let r = mean_report(&reveal).expect("non-empty");
            Ok(LeakageTrial {
                index,
                key,
                stego_psnr: h.psnr,
                stego_apd: h.apd,
                recover_psnr: r.psnr,
                recover_apd: r.apd,
            })
        })
        .collect();
    LeakageReport::from_trials(trials?)
}

/// Averaged metric differences, `baseline - purified`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QualityGap {
    pub psnr: f64,
    pub ssim: f64,
    pub apd: f64,
    pub rmse: f64,
    pub purified: QualityReport,
    pub baseline: QualityReport,
}

/// Denoises every `(noisy, clean)` pair with both containers (holes left at
/// zero) and compares the average quality.
pub fn performance_gap(
    purified: &ModelContainer,
    baseline: &ModelContainer,
    pairs: &[(ImagePlane, ImagePlane)],
) -> Result<QualityGap> {
    if purified.spec != baseline.spec {
        return Err(Error::ShapeMismatch("containers were built for different specs".into()));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("no denoising pairs".into()));
    }
    let exec = Executor::new(purified.spec.clone())?;
    let score = |c: &ModelContainer| -> Result<QualityReport> {
        let p = trigger(c, &Key::new(Vec::new()), Mode::Denoise)?;
        let reports = pairs
            .iter()
            .map(|(noisy, clean)| evaluate_pair(clean, &exec.denoise(&p, noisy)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(mean_report(&reports).expect("non-empty"))
    };
    let p = score(purified)?;
    let b = score(baseline)?;
    Ok(QualityGap {
        psnr: b.psnr - p.psnr,
        ssim: b.ssim - p.ssim,
        apd: b.apd - p.apd,
        rmse: b.rmse - p.rmse,
        purified: p,
        baseline: b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::container::Metadata;
    use crate::datapipe::synth;
    use crate::netcore::NetworkSpec;
    use crate::sparsity::{apply_mask, generate_mask, init_weights};
    use proptest::prelude::*;

    /// Brute-force quantile integration on a fine grid of midpoints.
    fn emd_grid(a: &[f64], b: &[f64], steps: usize) -> f64 {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let q = |s: &[f64], t: f64| s[((t * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        (0..steps)
            .map(|k| {
                let t = (k as f64 + 0.5) / steps as f64;
                (q(&a, t) - q(&b, t)).abs()
            })
            .sum::<f64>()
            / steps as f64
    }

    #[test]
    fn emd_small_cases() {
        assert_eq!(emd(&[1.0, 2.0], &[2.0, 1.0]).unwrap(), 0.0);
        assert_eq!(emd(&[0.0], &[3.0]).unwrap(), 3.0);
        // {0, 1} vs {0}: half the mass moves by 1.
        assert!((emd(&[0.0, 1.0], &[0.0]).unwrap() - 0.5).abs() < 1e-15);
        // {0, 1, 2} vs {0, 2}: quantiles differ by 2 on (1/3, 1/2].
        assert!((emd(&[0.0, 1.0, 2.0], &[0.0, 2.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(emd(&[], &[1.0]).is_err());
        assert!(emd(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn emd_weights_translation() {
        let a = init_weights(&NetworkSpec::tiny(), 4).unwrap();
        let mut b = a.clone();
        let shifted: Vec<f32> = a.maskable_values().map(|v| v + 0.03).collect();
        b.set_maskable(shifted.iter().copied()).unwrap();
        let d = emd_weights(&a, &b).unwrap();
        let exact: f64 = a
            .maskable_values()
            .zip(&shifted)
            .map(|(x, &y)| (f64::from(y) - f64::from(x)).abs())
            .sum::<f64>()
            / shifted.len() as f64;
        assert!((d - exact).abs() < 1e-12);
        assert!((d - 0.03).abs() < 1e-7);
        assert_eq!(emd_weights(&a, &a).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn emd_matches_grid_oracle(
            a in prop::collection::vec(-5i32..5, 1..7),
            b in prop::collection::vec(-5i32..5, 1..7),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            // Sizes below 7 make every breakpoint a multiple of 1/420.
            let exact = emd(&a, &b).unwrap();
            prop_assert!((exact - emd_grid(&a, &b, 420 * 4)).abs() < 1e-9);
            prop_assert!((exact - emd(&b, &a).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn emd_translation_is_exact(
            a in prop::collection::vec(-1.0f64..1.0, 1..40),
            c in -2.0f64..2.0,
        ) {
            let b: Vec<f64> = a.iter().map(|v| v + c).collect();
            prop_assert!((emd(&a, &b).unwrap() - c.abs()).abs() < 1e-9);
        }

        #[test]
        fn emd_triangle(
            a in prop::collection::vec(-1.0f64..1.0, 1..12),
            b in prop::collection::vec(-1.0f64..1.0, 1..12),
            c in prop::collection::vec(-1.0f64..1.0, 1..12),
        ) {
            let ab = emd(&a, &b).unwrap();
            let bc = emd(&b, &c).unwrap();
            let ac = emd(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert!(ab >= 0.0);
        }
    }

    #[test]
    fn matrix_is_symmetric_with_zero_diagonal() {
        let s: Vec<_> = (0..3).map(|i| init_weights(&NetworkSpec::tiny(), i).unwrap()).collect();
        let refs: Vec<_> = s.iter().collect();
        let m = emd_matrix(&refs).unwrap();
        for i in 0..3 {
            assert_eq!(m[i][i], 0.0);
            for j in 0..3 {
                assert_eq!(m[i][j], m[j][i]);
            }
        }
        let mut out = Vec::new();
        write_matrix(&mut out, &["a".into(), "b".into(), "c".into()], &m).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with(",a,b,c\n"));
    }

    fn toy_container(seed: u64, ratio: f64) -> ModelContainer {
        let spec = NetworkSpec::tiny();
        let mut w = init_weights(&spec, seed).unwrap();
        let mask = generate_mask(&w, ratio, seed).unwrap();
        apply_mask(&mut w, &mask);
        ModelContainer::new(spec, mask, w, Metadata::default()).unwrap()
    }

    #[test]
    fn random_keys_skip_excluded_and_are_seeded() {
        let a = random_keys(5, 9, &[]);
        assert_eq!(a, random_keys(5, 9, &[]));
        assert!(a.iter().all(|k| k.len() == 32));
        let banned = Key::from(a[0].as_str());
        let b = random_keys(5, 9, &[&banned]);
        assert!(!b.contains(&a[0]));
        assert_eq!(b[..4], a[1..]);
    }

    #[test]
    fn leakage_statistics_recompute_from_rows() {
        let c = toy_container(2, 0.8);
        let exec = Executor::new(c.spec.clone()).unwrap();
        let enc = trigger(&c, &Key::from("ke"), Mode::Encode).unwrap();
        let samples: Vec<_> = (0..2)
            .map(|i| {
                let cover = synth::scene(i, 12, 12);
                let secret = synth::scene(i + 10, 12, 12);
                let stego = exec.encode(&enc, &cover, &secret).unwrap();
                LeakageSample { cover, secret, stego }
            })
            .collect();
        let r = leakage_trials(&c, 4, 1, &samples, &[]).unwrap();
        assert_eq!(r.trials.len(), 4);
        let psnrs: Vec<f64> = r.trials.iter().map(|t| t.stego_psnr).collect();
        let mean = psnrs.iter().sum::<f64>() / 4.0;
        let std = (psnrs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!((r.stego_psnr.mean - mean).abs() < 1e-9);
        assert!((r.stego_psnr.std - std).abs() < 1e-9);
        let again = LeakageReport::from_trials(r.trials.iter().rev().cloned().collect()).unwrap();
        assert_eq!(again, r);
        assert!(leakage_trials(&c, 4, 1, &[], &[]).is_err());
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 6);
    }

    #[test]
    fn gap_against_itself_is_zero() {
        let c = toy_container(3, 0.9);
        let pairs: Vec<_> = (0..2)
            .map(|i| (synth::scene(i + 50, 10, 10), synth::scene(i, 10, 10)))
            .collect();
        let g = performance_gap(&c, &c, &pairs).unwrap();
        assert_eq!((g.psnr, g.ssim, g.apd, g.rmse), (0.0, 0.0, 0.0, 0.0));
        let other = {
            let spec = NetworkSpec::compact();
            let w = init_weights(&spec, 0).unwrap();
            let mask = generate_mask(&w, 1.0, 0).unwrap();
            ModelContainer::new(spec, mask, w, Metadata::default()).unwrap()
        };
        assert!(performance_gap(&c, &other, &pairs).is_err());
    }
}
