//! Dataset indexing, patch sampling and 8-bit quantization.

use std::fmt;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::trainer::add_gaussian_noise;

/// Clamps to `[0, 1]`, scales to 8 bits and rounds half away from zero.
#[inline]
pub fn quantize_value(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Snaps every value to the nearest representable 8-bit level. Idempotent.
pub fn quantize(x: &ImagePlane) -> ImagePlane {
    let (c, h, w) = x.shape();
    let data = x
        .data()
        .iter()
        .map(|&v| f32::from(quantize_value(v)) / 255.0)
        .collect();
    ImagePlane::from_vec(c, h, w, data).expect("same shape")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub width: u32,
    pub height: u32,
}

/// Sorted list of the decodable images in one directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn path(&self, i: usize) -> PathBuf {
        self.root.join(&self.entries[i].id)
    }

    /// Fails if any image is smaller than `crop` on either side.
    pub fn check_crop(&self, crop: usize) -> Result<()> {
        match self
            .entries
            .iter()
            .find(|e| (e.width as usize) < crop || (e.height as usize) < crop)
        {
            Some(e) => Err(Error::InvalidArgument(format!(
                "{} is {}x{}, smaller than the {crop}px crop",
                e.id, e.width, e.height
            ))),
            None => Ok(()),
        }
    }

    /// Tab-separated `id width height` lines after a `# split:` header.
    pub fn write_text(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# split: {}", self.split)?;
        for e in &self.entries {
            writeln!(w, "{}\t{}\t{}", e.id, e.width, e.height)?;
        }
        Ok(())
    }

    pub fn read_text(root: impl Into<PathBuf>, r: impl BufRead) -> Result<Self> {
        let mut split = Split::Train;
        let mut entries = Vec::new();
        for line in r.lines() {
            let line = line?;
            if let Some(rest) = line.strip_prefix("# split:") {
                split = rest.trim().parse()?;
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(id), Some(w), Some(h), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(Error::InvalidArgument(format!("bad manifest line {line:?}")));
            };
            let dim = |s: &str| {
                s.parse::<u32>()
                    .map_err(|_| Error::InvalidArgument(format!("bad dimension {s:?}")))
            };
            entries.push(ManifestEntry {
                id: id.to_string(),
                width: dim(w)?,
                height: dim(h)?,
            });
        }
        Ok(Self {
            root: root.into(),
            split,
            entries,
        })
    }
}

/// Lists the images under `root` in lexicographic order, skipping files whose
/// header cannot be decoded.
pub fn index_dataset(root: impl AsRef<Path>, split: Split) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let mut names: Vec<String> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    let mut entries = Vec::with_capacity(names.len());
    let mut skipped = 0;
    for id in names {
        match image::image_dimensions(root.join(&id)) {
            Ok((width, height)) => entries.push(ManifestEntry { id, width, height }),
            Err(_) => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!("skipped {skipped} undecodable files under {}", root.display());
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no decodable images under {}",
            root.display()
        )));
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        split,
        entries,
    })
}

/// Anything patches can be cropped from.
pub trait PatchSource: Sync {
    fn len(&self) -> usize;

    /// `(height, width)` of image `i`.
    fn dims(&self, i: usize) -> (usize, usize);

    fn crop(&self, i: usize, top: usize, left: usize, size: usize) -> Result<ImagePlane>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Images held in memory.
#[derive(Clone, Debug, Default)]
pub struct InMemorySource {
    images: Vec<ImagePlane>,
}

impl InMemorySource {
    pub fn new(images: Vec<ImagePlane>) -> Self {
        Self { images }
    }

    pub fn images(&self) -> &[ImagePlane] {
        &self.images
    }
}

impl PatchSource for InMemorySource {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn dims(&self, i: usize) -> (usize, usize) {
        (self.images[i].height(), self.images[i].width())
    }

    fn crop(&self, i: usize, top: usize, left: usize, size: usize) -> Result<ImagePlane> {
        self.images[i].crop(top, left, size)
    }
}

/// Decodes each image from disk when a patch is requested.
#[derive(Clone, Debug)]
pub struct DiskSource {
    manifest: DatasetManifest,
}

impl DiskSource {
    pub fn new(manifest: DatasetManifest) -> Self {
        Self { manifest }
    }
}

impl PatchSource for DiskSource {
    fn len(&self) -> usize {
        self.manifest.len()
    }

    fn dims(&self, i: usize) -> (usize, usize) {
        let e = &self.manifest.entries[i];
        (e.height as usize, e.width as usize)
    }

    fn crop(&self, i: usize, top: usize, left: usize, size: usize) -> Result<ImagePlane> {
        ImagePlane::load(self.manifest.path(i))?.crop(top, left, size)
    }
}

/// One training step's images. The first half of `patches` are covers, the
/// second half secrets (paired by position); all of them double as clean
/// denoising targets for `noisy`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    pub patches: Vec<ImagePlane>,
    pub noisy: Vec<ImagePlane>,
}

impl TrainBatch {
    pub fn covers(&self) -> &[ImagePlane] {
        &self.patches[..self.patches.len() / 2]
    }

    pub fn secrets(&self) -> &[ImagePlane] {
        &self.patches[self.patches.len() / 2..]
    }

    pub fn clean(&self) -> &[ImagePlane] {
        &self.patches
    }
}

/// Geometry of the sampled batches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchShape {
    pub batch: usize,
    pub crop: usize,
    pub noise_sigma: f64,
}

/// Seeded sampler; the batch sequence depends only on the seed and source.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sample(&mut self, source: &dyn PatchSource, shape: BatchShape) -> Result<TrainBatch> {
        sample_batch(source, shape, &mut self.rng)
    }
}

/// Draws distinct images, crops a random window from each, flips each axis
/// with probability 1/2, and adds noise for the denoising pairs.
pub fn sample_batch(
    source: &dyn PatchSource,
    shape: BatchShape,
    rng: &mut impl Rng,
) -> Result<TrainBatch> {
    if source.is_empty() {
        return Err(Error::EmptyDataset("no images to sample".into()));
    }
    if shape.batch == 0 || shape.batch % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "batch must be even and positive, got {}",
            shape.batch
        )));
    }
    let ids: Vec<usize> = if source.len() >= shape.batch {
        sample_indices(rng, source.len(), shape.batch).into_vec()
    } else {
        (0..shape.batch).map(|_| rng.random_range(0..source.len())).collect()
    };
    let mut patches = Vec::with_capacity(shape.batch);
    for id in ids {
        let (h, w) = source.dims(id);
        if h < shape.crop || w < shape.crop {
            return Err(Error::InvalidArgument(format!(
                "image {id} is {h}x{w}, smaller than the {}px crop",
                shape.crop
            )));
        }
        let top = rng.random_range(0..=h - shape.crop);
        let left = rng.random_range(0..=w - shape.crop);
        let mut p = source.crop(id, top, left, shape.crop)?;
        if rng.random_bool(0.5) {
            p = p.flip_horizontal();
        }
        if rng.random_bool(0.5) {
            p = p.flip_vertical();
        }
        patches.push(p);
    }
    let noisy = patches
        .iter()
        .map(|p| add_gaussian_noise(p, shape.noise_sigma, rng))
        .collect();
    Ok(TrainBatch { patches, noisy })
}

/// Procedural scenes standing in for photographs: a color gradient, soft
/// ellipses, rectangles and stripes, and a faint texture.
pub mod synth {
    use std::f32::consts::PI;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::image::ImagePlane;

    fn color(rng: &mut ChaCha8Rng) -> [f32; 3] {
        [rng.random(), rng.random(), rng.random()]
    }

    fn smoothstep(edge: f32, d: f32) -> f32 {
        // coverage of a 1px-wide antialiased edge at signed distance d
        (0.5 - d / edge).clamp(0.0, 1.0)
    }

    pub fn scene(seed: u64, height: usize, width: usize) -> ImagePlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (height as f32, width as f32);
        let c0 = color(&mut rng);
        let c1 = color(&mut rng);
        let angle: f32 = rng.random_range(0.0..2.0 * PI);
        let (ga, gb) = (angle.cos(), angle.sin());
        let mut img = ImagePlane::from_fn(3, height, width, |c, y, x| {
            let t = ((x as f32 / w - 0.5) * ga + (y as f32 / h - 0.5) * gb + 0.5).clamp(0.0, 1.0);
            c0[c] * (1.0 - t) + c1[c] * t
        });
        let shapes = rng.random_range(4..10);
        for _ in 0..shapes {
            let col = color(&mut rng);
            let alpha: f32 = rng.random_range(0.6..1.0);
            let cx = rng.random_range(0.0..w);
            let cy = rng.random_range(0.0..h);
            let kind = rng.random_range(0..3);
            let rx = rng.random_range(0.05..0.35) * w;
            let ry = rng.random_range(0.05..0.35) * h;
            let rot: f32 = rng.random_range(0.0..PI);
            let period = rng.random_range(4.0..16.0f32);
            let (cr, sr) = (rot.cos(), rot.sin());
            let plane = img.data_mut();
            for y in 0..height {
                for x in 0..width {
                    let dx = x as f32 - cx;
                    let dy = y as f32 - cy;
                    let u = dx * cr + dy * sr;
                    let v = -dx * sr + dy * cr;
                    let cover = match kind {
                        0 => {
                            let r = ((u / rx).powi(2) + (v / ry).powi(2)).sqrt();
                            smoothstep(1.0, (r - 1.0) * rx.min(ry))
                        }
                        1 => {
                            let d = (u.abs() - rx).max(v.abs() - ry);
                            smoothstep(1.0, d)
                        }
                        _ => {
                            let inside = (u.abs() - rx).max(v.abs() - ry);
                            let stripe = ((u / period * 2.0 * PI).sin() + 1.0) * 0.5;
                            smoothstep(1.0, inside) * stripe
                        }
                    } * alpha;
                    if cover > 0.0 {
                        for c in 0..3 {
                            let i = (c * height + y) * width + x;
                            plane[i] = plane[i] * (1.0 - cover) + col[c] * cover;
                        }
                    }
                }
            }
        }
        let fx: f32 = rng.random_range(0.05..0.4);
        let fy: f32 = rng.random_range(0.05..0.4);
        let amp: f32 = rng.random_range(0.0..0.04);
        let plane = img.data_mut();
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    let i = (c * height + y) * width + x;
                    let t = amp * (fx * x as f32 + fy * y as f32 + c as f32).sin();
                    plane[i] = (plane[i] + t).clamp(0.0, 1.0);
                }
            }
        }
        img
    }

    /// `count` scenes with seeds `seed, seed + 1, ...`.
    pub fn scenes(seed: u64, count: usize, height: usize, width: usize) -> Vec<ImagePlane> {
        (0..count as u64).map(|i| scene(seed.wrapping_add(i), height, width)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantize_rounding_and_clamp() {
        let x = ImagePlane::from_vec(1, 1, 4, vec![0.5, 1.7, -0.2, 0.2]).unwrap();
        let q = quantize(&x);
        assert_eq!(q.data()[0], 128.0 / 255.0);
        assert_eq!(q.data()[1], 1.0);
        assert_eq!(q.data()[2], 0.0);
        assert_eq!(q.data()[3], 51.0 / 255.0);
    }

    proptest! {
        #[test]
        fn quantize_is_idempotent(values in prop::collection::vec(-0.5f32..1.5, 1..200)) {
            let n = values.len();
            let x = ImagePlane::from_vec(1, 1, n, values).unwrap();
            let q = quantize(&x);
            let qq = quantize(&q);
            prop_assert_eq!(q.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            qq.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn flips_are_involutions() {
        let img = synth::scene(3, 9, 13);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_eq!(img.flip_vertical().flip_vertical(), img);
        assert_ne!(img.flip_horizontal(), img);
    }

    #[test]
    fn synthetic_scenes_are_unit_range_and_seeded() {
        let a = synth::scene(1, 32, 40);
        assert_eq!(a.shape(), (3, 32, 40));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a, synth::scene(1, 32, 40));
        assert_ne!(a, synth::scene(2, 32, 40));
    }

    fn shape() -> BatchShape {
        BatchShape {
            batch: 8,
            crop: 16,
            noise_sigma: 20.0,
        }
    }

    #[test]
    fn batch_shapes_and_determinism() {
        let src = InMemorySource::new(synth::scenes(0, 12, 24, 30));
        let mut s1 = BatchSampler::new(77);
        let mut s2 = BatchSampler::new(77);
        for _ in 0..3 {
            let a = s1.sample(&src, shape()).unwrap();
            let b = s2.sample(&src, shape()).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.covers().len(), 4);
            assert_eq!(a.secrets().len(), 4);
            assert_eq!(a.noisy.len(), 8);
            for p in a.patches.iter().chain(&a.noisy) {
                assert_eq!(p.shape(), (3, 16, 16));
            }
            assert!(a.patches.iter().all(|p| p.data().iter().all(|v| (0.0..=1.0).contains(v))));
        }
        let c = BatchSampler::new(78).sample(&src, shape()).unwrap();
        assert_ne!(c, s1.sample(&src, shape()).unwrap());
    }

    #[test]
    fn batch_images_are_distinct() {
        // Each scene is a constant-free procedural image; equal patches from
        // different sources are practically impossible, so compare the
        // indices through a source that records them.
        struct Tagged(usize);
        impl PatchSource for Tagged {
            fn len(&self) -> usize {
                self.0
            }
            fn dims(&self, _: usize) -> (usize, usize) {
                (4, 4)
            }
            fn crop(&self, i: usize, _: usize, _: usize, size: usize) -> Result<ImagePlane> {
                Ok(ImagePlane::from_fn(3, size, size, |_, _, _| i as f32))
            }
        }
        let mut s = BatchSampler::new(1);
        for _ in 0..50 {
            let b = s
                .sample(&Tagged(9), BatchShape { batch: 8, crop: 4, noise_sigma: 0.0 })
                .unwrap();
            let mut ids: Vec<u32> = b.patches.iter().map(|p| p.data()[0] as u32).collect();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), 8);
        }
    }

    #[test]
    fn small_images_are_rejected() {
        let src = InMemorySource::new(synth::scenes(0, 8, 10, 10));
        let err = BatchSampler::new(0).sample(&src, shape()).unwrap_err();
        assert!(err.to_string().contains("smaller than"));
        let empty = InMemorySource::new(vec![]);
        assert!(BatchSampler::new(0).sample(&empty, shape()).is_err());
    }

    #[test]
    fn index_sorts_and_skips_garbage() {
        let dir = tempfile::tempdir().unwrap();
        for (name, seed) in [("b.png", 1), ("a.png", 2), ("c.png", 3)] {
            synth::scene(seed, 8, 12).save_png(dir.path().join(name)).unwrap();
        }
        fs::write(dir.path().join("notes.txt"), "not an image").unwrap();
        let m = index_dataset(dir.path(), Split::Train).unwrap();
        let ids: Vec<_> = m.entries.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["a.png", "b.png", "c.png"]);
        assert_eq!((m.entries[0].width, m.entries[0].height), (12, 8));
        assert_eq!(m, index_dataset(dir.path(), Split::Train).unwrap());

        let mut text = Vec::new();
        m.write_text(&mut text).unwrap();
        let back = DatasetManifest::read_text(dir.path(), &text[..]).unwrap();
        assert_eq!(back, m);

        let src = DiskSource::new(m.clone());
        let p = src.crop(0, 1, 2, 5).unwrap();
        assert_eq!(p.shape(), (3, 5, 5));
        assert!(m.check_crop(8).is_ok());
        assert!(m.check_crop(9).is_err());
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            index_dataset(dir.path(), Split::Test),
            Err(Error::EmptyDataset(_))
        ));
    }
}
