//! Secret keys, the fill weights they derive, and triggering.
//!
//! A key is hashed with 64-bit FNV-1a; the hash seeds SplitMix64, which draws
//! Xavier-uniform values for every kernel position in traversal order. The
//! fill is generated densely before any masking, so the value at a given
//! position never depends on the mask.

use std::fmt;
use std::str::FromStr;

use crate::container::ModelContainer;
use crate::error::{Error, Result};
use crate::netcore::{NetworkSpec, ParameterStore, Scalar};
use crate::sparsity::{xavier_kernels, SparseMask};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Secret byte string. Never written anywhere by this crate.
#[derive(Clone, PartialEq, Eq)]
pub struct Key(Vec<u8>);

impl Key {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        Self(bytes.into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl From<&str> for Key {
    fn from(s: &str) -> Self {
        Key(s.as_bytes().to_vec())
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Key(<{} bytes>)", self.0.len())
    }
}

/// FNV-1a over the key bytes.
pub fn derive_seed(key: &Key) -> u64 {
    key.0.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Key-derived kernel values in maskable order.
#[derive(Clone, Debug, PartialEq)]
pub struct FillWeights {
    values: Vec<f32>,
}

impl FillWeights {
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Draws the fill weights for `key`. Depends only on the network layout and the key.
pub fn synthesize_fill(spec: &NetworkSpec, key: &Key) -> Result<FillWeights> {
    Ok(FillWeights {
        values: xavier_kernels(spec, derive_seed(key))?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Encode,
    Decode,
    Denoise,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encode" => Ok(Mode::Encode),
            "decode" => Ok(Mode::Decode),
            "denoise" => Ok(Mode::Denoise),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Encode => "encode",
            Mode::Decode => "decode",
            Mode::Denoise => "denoise",
        })
    }
}

/// Purified weights at kept positions, `fill` (or zero) at holes. Bias and
/// normalization parameters pass through.
pub fn compose<T: Scalar>(
    purified: &ParameterStore<T>,
    mask: &SparseMask,
    fill: Option<&FillWeights>,
) -> ParameterStore<T> {
    let mut out = purified.clone();
    compose_into(purified, mask, fill, &mut out);
    out
}

pub(crate) fn compose_into<T: Scalar>(
    purified: &ParameterStore<T>,
    mask: &SparseMask,
    fill: Option<&FillWeights>,
    out: &mut ParameterStore<T>,
) {
    out.values_mut().copy_from_slice(purified.values());
    let ranges: Vec<_> = purified.layout().kernel_ranges().collect();
    let values = out.values_mut();
    let mut i = 0;
    for r in ranges {
        for v in &mut values[r] {
            if !mask.is_kept(i) {
                *v = match fill {
                    Some(f) => T::of(f64::from(f.values[i])),
                    None => T::zero(),
                };
            }
            i += 1;
        }
    }
}

/// Turns a purified container into the dense network for `mode`.
///
/// The key is ignored in denoise mode, where holes stay zero.
pub fn trigger(container: &ModelContainer, key: &Key, mode: Mode) -> Result<ParameterStore<f32>> {
    container.validate()?;
    let fill = match mode {
        Mode::Denoise => None,
        Mode::Encode | Mode::Decode => Some(synthesize_fill(&container.spec, key)?),
    };
    Ok(compose(&container.params, &container.mask, fill.as_ref()))
}
