//! The network: layer layout, parameter store, and the three forward modes.
//!
//! One executor serves every mode. Denoising and decoding run the plain
//! single-input stack; encoding runs the layers before the split conv twice
//! (same weights) on the cover and on the secret, lets each half of the split
//! conv's filters see one branch, and continues on the concatenated features.

pub(crate) mod engine;
mod params;
mod scalar;
mod spec;

use std::sync::Arc;

pub use params::{Layout, ParamEntry, ParamKind, ParameterStore};
pub use scalar::Scalar;
pub use spec::NetworkSpec;

use crate::error::{Error, Result};
use crate::image::ImagePlane;
use engine::Engine;

/// Validates `spec` and returns a zero-valued store with its canonical layout
/// together with an executor bound to that layout.
pub fn build_network<T: Scalar>(spec: &NetworkSpec) -> Result<(ParameterStore<T>, Executor)> {
    let exec = Executor::new(spec.clone())?;
    let store = ParameterStore::zeros(exec.layout.clone());
    Ok((store, exec))
}

/// Runs forward (and, inside the crate, backward) passes for one spec.
///
/// Forward passes only read the parameter store, so one executor and one
/// store can serve many threads at once.
#[derive(Clone, Debug)]
pub struct Executor {
    spec: NetworkSpec,
    layout: Arc<Layout>,
}

impl Executor {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let layout = Arc::new(Layout::new(&spec)?);
        Ok(Self { spec, layout })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    /// Output-filter ranges of the split conv assigned to the cover and the
    /// secret branch in encode mode.
    pub fn split_halves(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let half = self.spec.channels / 2;
        (0..half, half..self.spec.channels)
    }

    fn check_params<T: Scalar>(&self, params: &ParameterStore<T>) -> Result<()> {
        if params.layout().as_ref() != self.layout.as_ref() {
            return Err(Error::ShapeMismatch(
                "parameter store was built for a different spec".into(),
            ));
        }
        Ok(())
    }

    fn check_image(&self, x: &ImagePlane, what: &str) -> Result<()> {
        if x.channels() != self.spec.io_channels {
            return Err(Error::ShapeMismatch(format!(
                "{what} has {} channels, network expects {}",
                x.channels(),
                self.spec.io_channels
            )));
        }
        if x.height() == 0 || x.width() == 0 {
            return Err(Error::ShapeMismatch(format!("{what} is empty")));
        }
        Ok(())
    }

    pub(crate) fn engine<'a, T: Scalar>(&'a self, params: &'a [T]) -> Engine<'a, T> {
        Engine {
            spec: &self.spec,
            layout: &self.layout,
            params,
            scratch: Default::default(),
        }
    }

    fn to_plane<T: Scalar>(&self, data: &[T], h: usize, w: usize) -> ImagePlane {
        let v = data.iter().map(|v| v.as_f64() as f32).collect();
        ImagePlane::from_vec(self.spec.io_channels, h, w, v).expect("output shape")
    }

    fn single<T: Scalar>(&self, params: &ParameterStore<T>, x: &ImagePlane) -> Result<ImagePlane> {
        self.check_params(params)?;
        self.check_image(x, "input")?;
        let input = x.data().iter().map(|&v| T::of(f64::from(v))).collect();
        let s = self
            .engine(params.values())
            .single_forward(input, x.height(), x.width(), false);
        Ok(self.to_plane(s.output(), x.height(), x.width()))
    }

    /// Purified mode: a noisy image in, its restoration out.
    pub fn denoise<T: Scalar>(&self, params: &ParameterStore<T>, noisy: &ImagePlane) -> Result<ImagePlane> {
        self.single(params, noisy)
    }

    /// Decoder mode: a stego image in, the recovered secret out.
    pub fn decode<T: Scalar>(&self, params: &ParameterStore<T>, stego: &ImagePlane) -> Result<ImagePlane> {
        self.single(params, stego)
    }

    /// Encoder mode: cover and secret in, stego image out.
    pub fn encode<T: Scalar>(
        &self,
        params: &ParameterStore<T>,
        cover: &ImagePlane,
        secret: &ImagePlane,
    ) -> Result<ImagePlane> {
        self.check_params(params)?;
        self.check_image(cover, "cover")?;
        self.check_image(secret, "secret")?;
        cover.ensure_same_shape(secret, "cover and secret")?;
        let conv = |x: &ImagePlane| x.data().iter().map(|&v| T::of(f64::from(v))).collect();
        let t = self.engine(params.values()).encode_forward(
            conv(cover),
            conv(secret),
            cover.height(),
            cover.width(),
            false,
        );
        Ok(self.to_plane(t.merged.output(), cover.height(), cover.width()))
    }

    /// Features of the cover and secret branches right before the split conv,
    /// i.e. the two inputs the halves of its filters convolve.
    pub fn branch_features<T: Scalar>(
        &self,
        params: &ParameterStore<T>,
        cover: &ImagePlane,
        secret: &ImagePlane,
    ) -> Result<(Vec<T>, Vec<T>)> {
        self.check_params(params)?;
        cover.ensure_same_shape(secret, "cover and secret")?;
        let conv = |x: &ImagePlane| x.data().iter().map(|&v| T::of(f64::from(v))).collect();
        let t = self.engine(params.values()).encode_forward(
            conv(cover),
            conv(secret),
            cover.height(),
            cover.width(),
            true,
        );
        let last = self.spec.split_layer - 1;
        Ok((t.cover.acts[last].clone(), t.secret.acts[last].clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparsity::init_weights;

    /// Kernel count by walking the layer list directly.
    fn count_kernel_weights(layers: usize, io: usize, ch: usize, k: usize) -> usize {
        let mut total = 0;
        for l in 1..=layers {
            let cin = if l == 1 { io } else { ch };
            let cout = if l == layers { io } else { ch };
            total += cout * cin * k * k;
        }
        total
    }

    #[test]
    fn default_kernel_count_matches_counting_oracle() {
        assert_eq!(count_kernel_weights(19, 3, 64, 3), 630_144);
        let (store, exec) = build_network::<f32>(&NetworkSpec::default()).unwrap();
        assert_eq!(exec.layout().maskable(), 630_144);
        // 630144 kernels + 2 biases (64 + 3) + 17 norms * 2 * 64
        assert_eq!(store.len(), 630_144 + 67 + 17 * 128);
        assert!(store.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn split_halves_are_equal() {
        let (_, exec) = build_network::<f32>(&NetworkSpec::default()).unwrap();
        let (a, b) = exec.split_halves();
        assert_eq!(a, 0..32);
        assert_eq!(b, 32..64);
    }

    #[test]
    fn odd_split_width_fails_to_build() {
        let spec = NetworkSpec {
            channels: 63,
            gn_groups: 9,
            ..NetworkSpec::default()
        };
        let err = build_network::<f32>(&spec).unwrap_err();
        assert!(err.to_string().contains("split layer needs even filter count"));
    }

    fn image(seed: u32, h: usize, w: usize) -> ImagePlane {
        ImagePlane::from_fn(3, h, w, |c, y, x| {
            let v = (c as u32 * 131 + y as u32 * 31 + x as u32 * 17 + seed * 7) % 97;
            v as f32 / 96.0
        })
    }

    #[test]
    fn modes_preserve_shape_and_are_deterministic() {
        let spec = NetworkSpec::compact();
        let exec = Executor::new(spec.clone()).unwrap();
        let params = init_weights(&spec, 3).unwrap();
        for (h, w) in [(17, 23), (32, 32), (5, 9)] {
            let x = image(1, h, w);
            let y = image(2, h, w);
            let d1 = exec.denoise(&params, &x).unwrap();
            let d2 = exec.denoise(&params, &x).unwrap();
            assert_eq!(d1.shape(), (3, h, w));
            assert_eq!(d1.data(), d2.data());
            assert!(d1.is_finite());
            let e1 = exec.encode(&params, &x, &y).unwrap();
            let e2 = exec.encode(&params, &x, &y).unwrap();
            assert_eq!(e1.shape(), (3, h, w));
            assert_eq!(e1.data(), e2.data());
            let r = exec.decode(&params, &e1).unwrap();
            assert_eq!(r.shape(), (3, h, w));
        }
    }

    #[test]
    fn encode_rejects_mismatched_inputs() {
        let spec = NetworkSpec::tiny();
        let exec = Executor::new(spec.clone()).unwrap();
        let params = init_weights(&spec, 1).unwrap();
        assert!(exec.encode(&params, &image(0, 8, 8), &image(1, 8, 9)).is_err());
        let gray = ImagePlane::zeros(1, 8, 8);
        assert!(exec.denoise(&params, &gray).is_err());
    }

    #[test]
    fn prefix_weights_feed_both_branches() {
        let spec = NetworkSpec::compact();
        let exec = Executor::new(spec.clone()).unwrap();
        let mut params = init_weights(&spec, 9).unwrap();
        let (cover, secret) = (image(3, 12, 12), image(4, 12, 12));
        let (c0, s0) = exec.branch_features(&params, &cover, &secret).unwrap();
        let r = params.layout().entry("conv2.weight").unwrap().range();
        params.values_mut()[r.start + 5] += 0.25;
        let (c1, s1) = exec.branch_features(&params, &cover, &secret).unwrap();
        assert_ne!(c0, c1);
        assert_ne!(s0, s1);
    }

    #[test]
    fn split_filters_only_see_their_branch() {
        let spec = NetworkSpec::compact();
        let exec = Executor::new(spec.clone()).unwrap();
        let params = init_weights(&spec, 11).unwrap();
        let cover = image(5, 10, 10);
        let s1 = image(6, 10, 10);
        let s2 = image(7, 10, 10);
        let run = |secret: &ImagePlane| {
            let t = exec.engine(params.values()).encode_forward(
                cover.data().iter().map(|&v| v).collect(),
                secret.data().iter().map(|&v| v).collect(),
                10,
                10,
                true,
            );
            t.merged.acts[spec.split_layer].clone()
        };
        let a = run(&s1);
        let b = run(&s2);
        let half = spec.channels / 2 * 100;
        assert_eq!(a[..half], b[..half]);
        assert_ne!(a[half..], b[half..]);
    }

    #[test]
    fn foreign_store_is_rejected() {
        let exec = Executor::new(NetworkSpec::compact()).unwrap();
        let other = init_weights(&NetworkSpec::tiny(), 0).unwrap();
        assert!(exec.denoise(&other, &image(0, 8, 8)).is_err());
    }
}
