use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pusnet::datapipe::{self, synth, DatasetManifest, DiskSource, InMemorySource, PatchSource, Split};
use pusnet::metrics::{evaluate_pair, write_csv};
use pusnet::modelsteg::{emd_matrix, leakage_trials, performance_gap, write_matrix, LeakageSample};
use pusnet::trainer::{add_gaussian_noise, train_with, MetricsLog, TrainConfig, TrainKeys};
use pusnet::{trigger, Executor, ImagePlane, Key, Mode, ModelContainer, ParameterStore};

#[derive(Parser)]
#[command(name = "pusnet", version, about = "Key-triggered sparse networks: denoise publicly, hide images privately")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a purified container from a key=value config file.
    Train(TrainArgs),
    /// Denoise an image with the purified network (no key).
    Denoise {
        #[arg(short, long)]
        model: PathBuf,
        input: PathBuf,
        #[arg(short, long, default_value = "denoised.png")]
        output: PathBuf,
    },
    /// Hide SECRET inside COVER with the encoder key.
    Embed {
        #[arg(short, long)]
        model: PathBuf,
        #[arg(long, env = "PUSNET_KEY", hide_env_values = true, required_unless_present = "weights")]
        key: Option<String>,
        /// Dense weights written by `trigger --dump`, used instead of a key.
        #[arg(long, conflicts_with = "key")]
        weights: Option<PathBuf>,
        cover: PathBuf,
        secret: PathBuf,
        #[arg(short, long, default_value = "stego.png")]
        output: PathBuf,
    },
    /// Reveal the secret hidden in STEGO with the decoder key.
    Recover {
        #[arg(short, long)]
        model: PathBuf,
        #[arg(long, env = "PUSNET_KEY", hide_env_values = true, required_unless_present = "weights")]
        key: Option<String>,
        /// Dense weights written by `trigger --dump`, used instead of a key.
        #[arg(long, conflicts_with = "key")]
        weights: Option<PathBuf>,
        stego: PathBuf,
        #[arg(short, long, default_value = "recovered.png")]
        output: PathBuf,
    },
    /// Fill the holes for one mode and print the digest of the dense weights.
    Trigger {
        #[arg(short, long)]
        model: PathBuf,
        #[arg(long, env = "PUSNET_KEY", hide_env_values = true, default_value = "")]
        key: String,
        #[arg(long)]
        mode: Mode,
        /// Write the dense weights as little-endian f32 values.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Quality of TEST images against REFERENCE images, as CSV rows.
    Eval {
        /// Alternating reference and test paths: REF1 TEST1 REF2 TEST2 ...
        #[arg(required = true, num_args = 2..)]
        images: Vec<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Model steganalysis reports.
    #[command(subcommand, name = "steg-analyze")]
    StegAnalyze(StegCommand),
    /// Summary of a container's mask.
    MaskInfo {
        #[arg(short, long)]
        model: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(short, long)]
    config: PathBuf,
    /// Directory of training images.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Manifest cache for --data: read if present, written otherwise.
    #[arg(long, requires = "data")]
    manifest: Option<PathBuf>,
    /// Train on this many procedurally generated images instead.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Side length of the procedural images (default: twice the crop).
    #[arg(long, requires = "synthetic")]
    synthetic_size: Option<usize>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long, env = "PUSNET_ENCODER_KEY", hide_env_values = true)]
    encoder_key: String,
    #[arg(long, env = "PUSNET_DECODER_KEY", hide_env_values = true)]
    decoder_key: String,
    /// Per-step metrics log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Save `<output>.iter<N>` every N steps.
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(short, long, default_value = "model.pusn")]
    output: PathBuf,
}

#[derive(Subcommand)]
enum StegCommand {
    /// Pairwise kernel-weight distances between containers.
    Emd {
        #[arg(required = true, num_args = 2..)]
        models: Vec<PathBuf>,
    },
    /// Random-key trials: how much a wrong key reveals.
    Leakage {
        #[arg(short, long)]
        model: PathBuf,
        /// Genuine encoder key, used to make the stego images under attack.
        #[arg(long, env = "PUSNET_ENCODER_KEY", hide_env_values = true)]
        encoder_key: String,
        /// Genuine decoder key; only used to exclude it from the draw.
        #[arg(long, env = "PUSNET_DECODER_KEY", hide_env_values = true)]
        decoder_key: Option<String>,
        /// Directory of evaluation images; the first half are covers, the
        /// second half secrets.
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        resize: Option<u32>,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Denoising quality of a baseline minus that of the purified model.
    Gap {
        #[arg(short, long)]
        model: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        resize: Option<u32>,
        #[arg(long, default_value_t = 20.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_dir(dir: &Path, resize: Option<u32>) -> anyhow::Result<Vec<(String, ImagePlane)>> {
    let manifest = datapipe::index_dataset(dir, Split::Test)?;
    let mut out = Vec::with_capacity(manifest.len());
    for (i, e) in manifest.entries.iter().enumerate() {
        let path = manifest.path(i);
        let img = match resize {
            Some(s) => ImagePlane::load_resized(&path, s)?,
            None => ImagePlane::load(&path)?,
        };
        out.push((e.id.clone(), img));
    }
    Ok(out)
}

/// Triggered weights from a key, or a previously dumped dense store.
fn dense_weights(
    c: &ModelContainer,
    exec: &Executor,
    key: Option<String>,
    weights: Option<PathBuf>,
    mode: Mode,
) -> anyhow::Result<ParameterStore> {
    match (key, weights) {
        (_, Some(path)) => {
            let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            Ok(ParameterStore::from_le_bytes(exec.layout().clone(), &bytes)?)
        }
        (Some(k), None) => Ok(trigger(c, &Key::from(k.as_str()), mode)?),
        (None, None) => bail!(pusnet::Error::InvalidArgument("need --key or --weights".into())),
    }
}

fn run_train(a: TrainArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut config = TrainConfig::from_kv(&text)?;
    if let Some(n) = a.iterations {
        config.iterations = n;
    }
    let keys = TrainKeys {
        encoder: Key::from(a.encoder_key.as_str()),
        decoder: Key::from(a.decoder_key.as_str()),
    };
    let source: Box<dyn PatchSource> = match (&a.data, a.synthetic) {
        (Some(dir), _) => {
            let manifest = match &a.manifest {
                Some(m) if m.exists() => DatasetManifest::read_text(dir, BufReader::new(File::open(m)?))?,
                Some(m) => {
                    let built = datapipe::index_dataset(dir, Split::Train)?;
                    built.write_text(BufWriter::new(File::create(m)?))?;
                    built
                }
                None => datapipe::index_dataset(dir, Split::Train)?,
            };
            manifest.check_crop(config.crop)?;
            Box::new(DiskSource::new(manifest))
        }
        (None, Some(n)) => {
            let size = a.synthetic_size.unwrap_or(config.crop * 2);
            Box::new(InMemorySource::new(synth::scenes(config.data_seed, n, size, size)))
        }
        (None, None) => bail!(pusnet::Error::InvalidArgument("train needs --data or --synthetic".into())),
    };
    let mut log = match &a.log {
        Some(p) => Some(MetricsLog::new(BufWriter::new(File::create(p)?))?),
        None => None,
    };
    let output = a.output.clone();
    let container = train_with(&config, &keys, source.as_ref(), |rec, state| {
        if let Some(l) = log.as_mut() {
            l.record(rec)?;
        }
        if let Some(every) = a.checkpoint_every {
            let done = rec.iteration + 1;
            if every > 0 && done % every == 0 && done < config.iterations {
                let mut name = output.clone().into_os_string();
                name.push(format!(".iter{done}"));
                state.to_container(0)?.save(PathBuf::from(name))?;
            }
        }
        Ok(())
    })?;
    if let Some(l) = log {
        l.into_inner().flush()?;
    }
    container.save(&a.output)?;
    println!("saved {} ({} iterations)", a.output.display(), container.metadata.iterations);
    Ok(())
}

fn run_steg(cmd: StegCommand) -> anyhow::Result<()> {
    match cmd {
        StegCommand::Emd { models } => {
            let containers = models.iter().map(ModelContainer::load).collect::<Result<Vec<_>, _>>()?;
            let stores: Vec<_> = containers.iter().map(|c| &c.params).collect();
            let m = emd_matrix(&stores)?;
            let names: Vec<String> = models.iter().map(|p| p.display().to_string()).collect();
            write_matrix(io::stdout().lock(), &names, &m)?;
        }
        StegCommand::Leakage { model, encoder_key, decoder_key, images, resize, trials, seed } => {
            let c = ModelContainer::load(&model)?;
            let imgs = load_dir(&images, resize)?;
            if imgs.len() < 2 {
                bail!(pusnet::Error::EmptyDataset("leakage needs at least two images".into()));
            }
            let exec = Executor::new(c.spec.clone())?;
            let enc_key = Key::from(encoder_key.as_str());
            let enc = trigger(&c, &enc_key, Mode::Encode)?;
            let half = imgs.len() / 2;
            let mut samples = Vec::with_capacity(half);
            for i in 0..half {
                let cover = imgs[i].1.clone();
                let secret = imgs[half + i].1.clone();
                let stego = datapipe::quantize(&exec.encode(&enc, &cover, &secret)?);
                samples.push(LeakageSample { cover, secret, stego });
            }
            let dec_key = decoder_key.map(|k| Key::from(k.as_str()));
            let mut exclude = vec![&enc_key];
            exclude.extend(dec_key.as_ref());
            let report = leakage_trials(&c, trials, seed, &samples, &exclude)?;
            report.write_csv(io::stdout().lock())?;
        }
        StegCommand::Gap { model, baseline, images, resize, sigma, seed } => {
            let p = ModelContainer::load(&model)?;
            let b = ModelContainer::load(&baseline)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pairs: Vec<_> = load_dir(&images, resize)?
                .into_iter()
                .map(|(_, clean)| (add_gaussian_noise(&clean, sigma, &mut rng), clean))
                .collect();
            let g = performance_gap(&p, &b, &pairs)?;
            println!("metric,purified,baseline,gap");
            println!("psnr,{:.4},{:.4},{:.4}", g.purified.psnr, g.baseline.psnr, g.psnr);
            println!("ssim,{:.6},{:.6},{:.6}", g.purified.ssim, g.baseline.ssim, g.ssim);
            println!("apd,{:.4},{:.4},{:.4}", g.purified.apd, g.baseline.apd, g.apd);
            println!("rmse,{:.4},{:.4},{:.4}", g.purified.rmse, g.baseline.rmse, g.rmse);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(a) => run_train(a)?,
        Command::Denoise { model, input, output } => {
            let c = ModelContainer::load(&model)?;
            let p = trigger(&c, &Key::new(Vec::new()), Mode::Denoise)?;
            let out = Executor::new(c.spec.clone())?.denoise(&p, &ImagePlane::load(&input)?)?;
            out.save_png(&output)?;
        }
        Command::Embed { model, key, weights, cover, secret, output } => {
            let c = ModelContainer::load(&model)?;
            let exec = Executor::new(c.spec.clone())?;
            let p = dense_weights(&c, &exec, key, weights, Mode::Encode)?;
            let out = exec.encode(&p, &ImagePlane::load(&cover)?, &ImagePlane::load(&secret)?)?;
            out.save_png(&output)?;
        }
        Command::Recover { model, key, weights, stego, output } => {
            let c = ModelContainer::load(&model)?;
            let exec = Executor::new(c.spec.clone())?;
            let p = dense_weights(&c, &exec, key, weights, Mode::Decode)?;
            let out = exec.decode(&p, &ImagePlane::load(&stego)?)?;
            out.save_png(&output)?;
        }
        Command::Trigger { model, key, mode, dump } => {
            let c = ModelContainer::load(&model)?;
            let p = trigger(&c, &Key::from(key.as_str()), mode)?;
            if let Some(path) = dump {
                fs::write(&path, p.to_le_bytes())?;
            }
            println!("{mode} {}", p.digest());
        }
        Command::Eval { images, output } => {
            if images.len() % 2 != 0 {
                bail!(pusnet::Error::InvalidArgument("eval takes reference/test pairs".into()));
            }
            let mut rows = Vec::new();
            for pair in images.chunks(2) {
                let r = evaluate_pair(&ImagePlane::load(&pair[0])?, &ImagePlane::load(&pair[1])?)?;
                rows.push((pair[1].display().to_string(), r));
            }
            let it = rows.iter().map(|(id, r)| (id.as_str(), r));
            match output {
                Some(p) => write_csv(BufWriter::new(File::create(p)?), it)?,
                None => write_csv(io::stdout().lock(), it)?,
            }
        }
        Command::StegAnalyze(cmd) => run_steg(cmd)?,
        Command::MaskInfo { model } => {
            let c = ModelContainer::load(&model)?;
            let m = &c.mask;
            let s = &c.spec;
            println!("layers: {}", s.num_conv_layers);
            println!("channels: {}", s.channels);
            println!("split_layer: {}", s.split_layer);
            println!("maskable: {}", m.total);
            println!("kept: {}", m.kept);
            println!("holes: {}", m.holes());
            println!("ratio: {}", m.ratio);
            println!("density: {:.9}", m.density());
            println!("threshold: {:e}", m.threshold);
            println!("w0_seed: {}", m.w0_seed);
            println!("iterations: {}", c.metadata.iterations);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e
                .chain()
                .any(|c| c.downcast_ref::<pusnet::Error>().is_some_and(pusnet::Error::is_validation));
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}
