//! Initialization and magnitude-ranked sparse masks.
//!
//! The mask keeps the `p = floor(S * N)` kernel weights of largest magnitude
//! in the initial draw and turns the rest into holes that only a key can
//! fill.

use std::cmp::Ordering;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::netcore::{Layout, NetworkSpec, ParameterStore};
use crate::rng::SplitMix64;

/// Packed bit array. Bit `i` lives in byte `i / 8` at position `i % 8`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitmap {
    len: usize,
    bytes: Vec<u8>,
}

impl Bitmap {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            bytes: vec![0; len.div_ceil(8)],
        }
    }

    pub fn from_bytes(len: usize, bytes: Vec<u8>) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::CorruptContainer(format!(
                "{} bitmap bytes for {len} bits",
                bytes.len()
            )));
        }
        if len % 8 != 0 && bytes[len / 8] >> (len % 8) != 0 {
            return Err(Error::CorruptContainer("bitmap padding bits are set".into()));
        }
        Ok(Self { len, bytes })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.bytes[i >> 3] >> (i & 7) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, on: bool) {
        debug_assert!(i < self.len);
        if on {
            self.bytes[i >> 3] |= 1 << (i & 7);
        } else {
            self.bytes[i >> 3] &= !(1 << (i & 7));
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i))
    }
}

/// Binary mask over the kernel weights plus how it was derived.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMask {
    /// `true` marks a kept weight, `false` a key-fillable hole.
    pub bits: Bitmap,
    /// Kept fraction `S`.
    pub ratio: f64,
    /// Maskable count `N`.
    pub total: usize,
    /// Kept count `p`.
    pub kept: usize,
    /// Magnitude of the last kept weight (`+inf` when nothing is kept).
    pub threshold: f32,
    pub w0_seed: u64,
}

impl SparseMask {
    #[inline]
    pub fn is_kept(&self, i: usize) -> bool {
        self.bits.get(i)
    }

    pub fn holes(&self) -> usize {
        self.total - self.kept
    }

    pub fn density(&self) -> f64 {
        self.kept as f64 / self.total as f64
    }

    /// Checks the bitmap against the recorded counts.
    pub fn validate(&self) -> Result<()> {
        if self.bits.len() != self.total {
            return Err(Error::CorruptContainer(format!(
                "mask has {} bits but N = {}",
                self.bits.len(),
                self.total
            )));
        }
        let ones = self.bits.count_ones();
        if ones != self.kept {
            return Err(Error::CorruptContainer(format!(
                "mask keeps {ones} weights but p = {}",
                self.kept
            )));
        }
        Ok(())
    }
}

/// Number of weights kept at ratio `s` out of `n`.
pub fn kept_count(s: f64, n: usize) -> usize {
    (s * n as f64).floor() as usize
}

/// Xavier-uniform kernels in maskable order, drawn from `SplitMix64(seed)`.
///
/// Each value is `(2u - 1) * sqrt(6 / (fan_in + fan_out))` with
/// `fan_in = cin * k * k` and `fan_out = cout * k * k`.
pub fn xavier_kernels(spec: &NetworkSpec, seed: u64) -> Result<Vec<f32>> {
    spec.validate()?;
    let k2 = spec.kernel * spec.kernel;
    let mut rng = SplitMix64::new(seed);
    let mut out = Vec::new();
    for layer in 1..=spec.num_conv_layers {
        let cin = spec.in_channels(layer);
        let cout = spec.out_channels(layer);
        let bound = xavier_bound(cin * k2, cout * k2);
        for _ in 0..cin * cout * k2 {
            out.push(((2.0 * rng.next_unit() - 1.0) * bound) as f32);
        }
    }
    Ok(out)
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Draws the initial weights: Xavier-uniform kernels, zero biases, unit
/// normalization scales and zero shifts.
pub fn init_weights(spec: &NetworkSpec, seed: u64) -> Result<ParameterStore<f32>> {
    let layout = Arc::new(Layout::new(spec)?);
    let mut store = ParameterStore::zeros(layout.clone());
    store.set_maskable(xavier_kernels(spec, seed)?.into_iter())?;
    for e in layout.entries() {
        if e.kind == crate::netcore::ParamKind::GnScale {
            store.values_mut()[e.range()].fill(1.0);
        }
    }
    Ok(store)
}

/// Keeps the `floor(ratio * N)` kernel weights of largest magnitude.
///
/// Ties in magnitude go to the lower traversal index, so the kept count is
/// exact for any input.
pub fn generate_mask(w0: &ParameterStore<f32>, ratio: f64, w0_seed: u64) -> Result<SparseMask> {
    let values: Vec<f32> = w0.maskable_values().collect();
    mask_from_values(&values, ratio, w0_seed)
}

pub fn mask_from_values(values: &[f32], ratio: f64, w0_seed: u64) -> Result<SparseMask> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sparse ratio must be in (0, 1], got {ratio}"
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite weight at index {i}")));
    }
    let n = values.len();
    let p = kept_count(ratio, n);
    let mut order: Vec<usize> = (0..n).collect();
    let by_rank = |&a: &usize, &b: &usize| -> Ordering {
        values[b]
            .abs()
            .total_cmp(&values[a].abs())
            .then(a.cmp(&b))
    };
    if p > 0 && p < n {
        order.select_nth_unstable_by(p - 1, by_rank);
    }
    let mut bits = Bitmap::new(n);
    for &i in &order[..p] {
        bits.set(i, true);
    }
    let threshold = order[..p]
        .iter()
        .map(|&i| values[i].abs())
        .fold(f32::INFINITY, f32::min);
    Ok(SparseMask {
        bits,
        ratio,
        total: n,
        kept: p,
        threshold,
        w0_seed,
    })
}

/// Zeroes every hole of `store` in place.
pub fn apply_mask<T: crate::netcore::Scalar>(store: &mut ParameterStore<T>, mask: &SparseMask) {
    let ranges: Vec<_> = store.layout().kernel_ranges().collect();
    let values = store.values_mut();
    let mut i = 0;
    for r in ranges {
        for v in &mut values[r] {
            if !mask.is_kept(i) {
                *v = T::zero();
            }
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Sort-based reference: rank every index, keep the first `p`.
    fn oracle(values: &[f32], ratio: f64) -> Vec<bool> {
        let p = (ratio * values.len() as f64).floor() as usize;
        let mut idx: Vec<usize> = (0..values.len()).collect();
        idx.sort_by(|&a, &b| {
            values[b]
                .abs()
                .partial_cmp(&values[a].abs())
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut keep = vec![false; values.len()];
        for &i in &idx[..p] {
            keep[i] = true;
        }
        keep
    }

    #[test]
    fn four_value_example() {
        let m = mask_from_values(&[0.9, -0.5, 0.3, -0.1], 0.5, 0).unwrap();
        assert_eq!(m.kept, 2);
        assert_eq!(m.bits.iter().collect::<Vec<_>>(), vec![true, true, false, false]);
        assert_eq!(m.threshold, 0.5);
        assert_eq!(oracle(&[0.9, -0.5, 0.3, -0.1], 0.5), vec![true, true, false, false]);
    }

    #[test]
    fn negative_weights_rank_by_magnitude() {
        let m = mask_from_values(&[0.1, -0.8, 0.2, -0.05], 0.5, 0).unwrap();
        assert_eq!(m.bits.iter().collect::<Vec<_>>(), vec![false, true, true, false]);
    }

    #[test]
    fn full_ratio_keeps_everything() {
        let w = init_weights(&NetworkSpec::tiny(), 5).unwrap();
        let m = generate_mask(&w, 1.0, 5).unwrap();
        assert_eq!(m.kept, m.total);
        assert!(m.bits.iter().all(|b| b));
    }

    #[test]
    fn bad_ratio_is_rejected() {
        for r in [0.0, -0.1, 1.01, f64::NAN] {
            assert!(mask_from_values(&[1.0, 2.0], r, 0).is_err(), "{r}");
        }
    }

    #[test]
    fn default_spec_keeps_floor_of_ninety_percent() {
        let spec = NetworkSpec::default();
        let w = init_weights(&spec, 42).unwrap();
        let m = generate_mask(&w, 0.9, 42).unwrap();
        assert_eq!(m.total, 630_144);
        assert_eq!(m.kept, 567_129);
        assert_eq!(m.bits.count_ones(), 567_129);
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let spec = NetworkSpec::compact();
        let a = init_weights(&spec, 42).unwrap();
        let b = init_weights(&spec, 42).unwrap();
        let c = init_weights(&spec, 43).unwrap();
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn init_sets_norm_identity_and_zero_bias() {
        let spec = NetworkSpec::compact();
        let w = init_weights(&spec, 1).unwrap();
        assert!(w.get("norm2.weight").unwrap().iter().all(|&v| v == 1.0));
        assert!(w.get("norm2.bias").unwrap().iter().all(|&v| v == 0.0));
        assert!(w.get("conv1.bias").unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn xavier_values_respect_layer_bound() {
        // fan_in = fan_out = 3 * 3 * 64 = 576, bound = sqrt(6 / 1152)
        let bound = (6.0f64 / 1152.0).sqrt();
        assert!((bound - 0.072_168_783_6).abs() < 1e-9);
        let spec = NetworkSpec::default();
        let w = init_weights(&spec, 7).unwrap();
        let conv5 = w.get("conv5.weight").unwrap();
        assert_eq!(conv5.len(), 64 * 64 * 9);
        let max = conv5.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(f64::from(max) <= bound);
        // The draw spans the interval rather than collapsing near zero.
        assert!(f64::from(max) > 0.99 * bound);
    }

    #[test]
    fn apply_mask_zeroes_only_holes() {
        let spec = NetworkSpec::tiny();
        let mut w = init_weights(&spec, 3).unwrap();
        let m = generate_mask(&w, 0.7, 3).unwrap();
        let before: Vec<f32> = w.maskable_values().collect();
        apply_mask(&mut w, &m);
        for (i, (old, new)) in before.iter().zip(w.maskable_values()).enumerate() {
            if m.is_kept(i) {
                assert_eq!(*old, new);
            } else {
                assert_eq!(new, 0.0);
            }
        }
    }

    #[test]
    fn bitmap_rejects_dirty_padding() {
        assert!(Bitmap::from_bytes(3, vec![0b0000_1000]).is_err());
        assert!(Bitmap::from_bytes(3, vec![0b0000_0101]).is_ok());
        assert!(Bitmap::from_bytes(9, vec![0]).is_err());
    }

    proptest! {
        #[test]
        fn kept_count_is_exact_even_with_ties(
            values in prop::collection::vec(prop::sample::select(vec![0.0f32, 0.5, -0.5, 0.25, -1.0]), 1..300),
            ratio in 0.001f64..=1.0,
        ) {
            let m = mask_from_values(&values, ratio, 0).unwrap();
            let p = (ratio * values.len() as f64).floor() as usize;
            prop_assert_eq!(m.bits.count_ones(), p);
            prop_assert_eq!(m.bits.iter().collect::<Vec<_>>(), oracle(&values, ratio));
        }

        #[test]
        fn kept_magnitudes_dominate_holes(
            values in prop::collection::vec(-1.0f32..1.0, 1..400),
            ratio in 0.01f64..=1.0,
        ) {
            let m = mask_from_values(&values, ratio, 0).unwrap();
            let kept_min = values.iter().enumerate().filter(|(i, _)| m.is_kept(*i))
                .map(|(_, v)| v.abs()).fold(f32::INFINITY, f32::min);
            let hole_max = values.iter().enumerate().filter(|(i, _)| !m.is_kept(*i))
                .map(|(_, v)| v.abs()).fold(0.0f32, f32::max);
            prop_assert!(kept_min >= hole_max);
            let again = mask_from_values(&values, ratio, 0).unwrap();
            prop_assert_eq!(again.bits, m.bits);
        }
    }
}
