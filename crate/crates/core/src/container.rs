//! Binary container for purified models.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "PUSN"                       magic
//! u32   version                (1)
//! u32   num_conv_layers
//! u32   channels
//! u32   kernel
//! u32   gn_groups
//! f64   lrelu_slope
//! u32   skip_start, u32 skip_end   (0, 0 when there are no shortcuts)
//! u32   split_layer
//! u32   io_channels
//! u32   bias layer count, then one u32 per layer
//! f64   S
//! u64   N
//! u64   p
//! f32   threshold
//! u64   w0 seed
//! [u8; ceil(N / 8)]            mask bitmap, bit i = byte i/8, bit i%8
//! [f32; N]                     kernels in traversal order, 0 at holes
//! u64   count, [f32; count]    biases and normalization parameters
//! u64   data seed
//! u64   iterations
//! i64   created (unix seconds)
//! ```
//!
//! Keys, key hashes and fill weights are never part of a container.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::netcore::{Layout, NetworkSpec, ParameterStore};
use crate::sparsity::{Bitmap, SparseMask};

pub const MAGIC: &[u8; 4] = b"PUSN";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Metadata {
    pub data_seed: u64,
    pub iterations: u64,
    pub created_unix: i64,
}

/// A purified model: spec, mask, and weights with zeros at every hole.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelContainer {
    pub spec: NetworkSpec,
    pub mask: SparseMask,
    pub params: ParameterStore<f32>,
    pub metadata: Metadata,
}

impl ModelContainer {
    pub fn new(
        spec: NetworkSpec,
        mask: SparseMask,
        params: ParameterStore<f32>,
        metadata: Metadata,
    ) -> Result<Self> {
        let c = Self {
            spec,
            mask,
            params,
            metadata,
        };
        c.validate()?;
        Ok(c)
    }

    /// Checks the mask, the layout and the zero-at-holes invariant.
    pub fn validate(&self) -> Result<()> {
        self.spec
            .validate()
            .map_err(|e| Error::CorruptContainer(e.to_string()))?;
        let layout = Layout::new(&self.spec)?;
        if self.params.layout().as_ref() != &layout {
            return Err(Error::CorruptContainer(
                "weights do not match the stored spec".into(),
            ));
        }
        if self.mask.total != layout.maskable() {
            return Err(Error::CorruptContainer(format!(
                "mask length {} != maskable count {}",
                self.mask.total,
                layout.maskable()
            )));
        }
        self.mask.validate()?;
        for (i, v) in self.params.maskable_values().enumerate() {
            if !self.mask.is_kept(i) && v.to_bits() != 0 {
                return Err(Error::CorruptContainer(format!("hole violation at index {i}")));
            }
        }
        if !self.params.is_finite() {
            return Err(Error::CorruptContainer("non-finite weight".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.spec;
        let mut w = Vec::with_capacity(64 + self.params.len() * 4 + self.mask.total / 8);
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, VERSION);
        for v in [s.num_conv_layers, s.channels, s.kernel, s.gn_groups] {
            put_u32(&mut w, v as u32);
        }
        w.extend_from_slice(&s.lrelu_slope.to_le_bytes());
        let (a, b) = s.skip_range.unwrap_or((0, 0));
        for v in [a, b, s.split_layer, s.io_channels, s.bias_layers.len()] {
            put_u32(&mut w, v as u32);
        }
        for &l in &s.bias_layers {
            put_u32(&mut w, l as u32);
        }
        let m = &self.mask;
        w.extend_from_slice(&m.ratio.to_le_bytes());
        w.extend_from_slice(&(m.total as u64).to_le_bytes());
        w.extend_from_slice(&(m.kept as u64).to_le_bytes());
        w.extend_from_slice(&m.threshold.to_le_bytes());
        w.extend_from_slice(&m.w0_seed.to_le_bytes());
        w.extend_from_slice(m.bits.as_bytes());
        for v in self.params.maskable_values() {
            w.extend_from_slice(&v.to_le_bytes());
        }
        let dense: Vec<f32> = self.params.dense_values().collect();
        w.extend_from_slice(&(dense.len() as u64).to_le_bytes());
        for v in dense {
            w.extend_from_slice(&v.to_le_bytes());
        }
        w.extend_from_slice(&self.metadata.data_seed.to_le_bytes());
        w.extend_from_slice(&self.metadata.iterations.to_le_bytes());
        w.extend_from_slice(&self.metadata.created_unix.to_le_bytes());
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::CorruptContainer("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CorruptContainer(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let num_conv_layers = r.u32()? as usize;
        let channels = r.u32()? as usize;
        let kernel = r.u32()? as usize;
        let gn_groups = r.u32()? as usize;
        let lrelu_slope = r.f64()?;
        let (a, b) = (r.u32()? as usize, r.u32()? as usize);
        let split_layer = r.u32()? as usize;
        let io_channels = r.u32()? as usize;
        let n_bias = r.u32()? as usize;
        if n_bias > num_conv_layers {
            return Err(Error::CorruptContainer(format!("{n_bias} bias layers")));
        }
        let bias_layers = (0..n_bias)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let spec = NetworkSpec {
            num_conv_layers,
            channels,
            kernel,
            gn_groups,
            lrelu_slope,
            skip_range: ((a, b) != (0, 0)).then_some((a, b)),
            split_layer,
            io_channels,
            bias_layers,
        };
        let layout = Arc::new(
            Layout::new(&spec).map_err(|e| Error::CorruptContainer(e.to_string()))?,
        );
        let ratio = r.f64()?;
        let total = r.u64()? as usize;
        let kept = r.u64()? as usize;
        let threshold = r.f32()?;
        let w0_seed = r.u64()?;
        if total != layout.maskable() {
            return Err(Error::CorruptContainer(format!(
                "mask length {total} != maskable count {}",
                layout.maskable()
            )));
        }
        let bits = Bitmap::from_bytes(total, r.take(total.div_ceil(8))?.to_vec())?;
        let mask = SparseMask {
            bits,
            ratio,
            total,
            kept,
            threshold,
            w0_seed,
        };
        let kernels = r.f32s(total)?;
        let dense_len = r.u64()? as usize;
        if dense_len != layout.total() - layout.maskable() {
            return Err(Error::CorruptContainer(format!(
                "{dense_len} dense parameters, layout has {}",
                layout.total() - layout.maskable()
            )));
        }
        let dense = r.f32s(dense_len)?;
        let metadata = Metadata {
            data_seed: r.u64()?,
            iterations: r.u64()?,
            created_unix: r.u64()? as i64,
        };
        if r.pos != bytes.len() {
            return Err(Error::CorruptContainer(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let mut params = ParameterStore::zeros(layout.clone());
        params.set_maskable(kernels.into_iter())?;
        let mut dense = dense.into_iter();
        let ranges: Vec<_> = layout.dense_ranges().collect();
        for range in ranges {
            for slot in &mut params.values_mut()[range] {
                *slot = dense.next().expect("length checked");
            }
        }
        Self::new(spec, mask, params, metadata)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// SHA-256 of everything except the metadata block.
    pub fn content_digest(&self) -> String {
        let bytes = self.to_bytes();
        let mut h = Sha256::new();
        h.update(&bytes[..bytes.len() - 24]);
        hex::encode(h.finalize())
    }
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::CorruptContainer(format!(
                "truncated: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            ))),
        }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| {
            Error::CorruptContainer("payload length overflows".into())
        })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparsity::{apply_mask, generate_mask, init_weights};

    fn sample(spec: NetworkSpec, ratio: f64) -> ModelContainer {
        let mut w = init_weights(&spec, 99).unwrap();
        let mask = generate_mask(&w, ratio, 99).unwrap();
        apply_mask(&mut w, &mask);
        // give the dense parameters non-trivial values
        let ranges: Vec<_> = w.layout().dense_ranges().collect();
        for (j, r) in ranges.into_iter().enumerate() {
            for (i, v) in w.values_mut()[r].iter_mut().enumerate() {
                *v = (i + j) as f32 * 0.01 - 0.3;
            }
        }
        let meta = Metadata {
            data_seed: 5,
            iterations: 123,
            created_unix: 1_700_000_000,
        };
        ModelContainer::new(spec, mask, w, meta).unwrap()
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let c = sample(NetworkSpec::compact(), 0.9);
        let bytes = c.to_bytes();
        let back = ModelContainer::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.content_digest(), c.content_digest());
    }

    #[test]
    fn spec_without_shortcuts_round_trips() {
        let c = sample(NetworkSpec::tiny(), 0.5);
        assert_eq!(ModelContainer::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn header_is_little_endian() {
        let bytes = sample(NetworkSpec::tiny(), 0.5).to_bytes();
        assert_eq!(&bytes[..4], b"PUSN");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[3, 0, 0, 0]);
    }

    #[test]
    fn nonzero_hole_is_rejected_with_index() {
        let c = sample(NetworkSpec::tiny(), 0.5);
        let hole = (0..c.mask.total).find(|&i| !c.mask.is_kept(i)).unwrap();
        let mut bytes = c.to_bytes();
        let header = bytes.len()
            - 24
            - 8
            - 4 * (c.params.len() - c.mask.total)
            - 4 * c.mask.total;
        let at = header + 4 * hole;
        bytes[at..at + 4].copy_from_slice(&0.5f32.to_le_bytes());
        let err = ModelContainer::from_bytes(&bytes).unwrap_err();
        assert_eq!(err.to_string(), format!("corrupt container: hole violation at index {hole}"));
    }

    #[test]
    fn negative_zero_at_hole_is_a_violation() {
        let mut c = sample(NetworkSpec::tiny(), 0.5);
        let hole = (0..c.mask.total).find(|&i| !c.mask.is_kept(i)).unwrap();
        let mut kernels: Vec<f32> = c.params.maskable_values().collect();
        kernels[hole] = -0.0;
        c.params.set_maskable(kernels.into_iter()).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn truncation_is_rejected_everywhere() {
        let bytes = sample(NetworkSpec::tiny(), 0.5).to_bytes();
        for cut in [0, 3, 4, 10, 40, bytes.len() / 2, bytes.len() - 1] {
            let err = ModelContainer::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::CorruptContainer(_)), "{cut}: {err}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(ModelContainer::from_bytes(&long).is_err());
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let mut bytes = sample(NetworkSpec::tiny(), 0.5).to_bytes();
        bytes[0] = b'X';
        assert!(ModelContainer::from_bytes(&bytes).unwrap_err().to_string().contains("magic"));
        let mut bytes = sample(NetworkSpec::tiny(), 0.5).to_bytes();
        bytes[4] = 2;
        assert!(ModelContainer::from_bytes(&bytes).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn popcount_mismatch_is_rejected() {
        let mut c = sample(NetworkSpec::tiny(), 0.5);
        c.mask.kept += 1;
        assert!(c.validate().is_err());
    }
}
