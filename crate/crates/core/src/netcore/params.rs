use std::ops::Range;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::scalar::Scalar;
use super::spec::NetworkSpec;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Kernel,
    Bias,
    GnScale,
    GnShift,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub layer: usize,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Where one conv layer's parameters live inside the flat store.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct LayerSlots {
    pub layer: usize,
    pub cin: usize,
    pub cout: usize,
    pub kernel: Range<usize>,
    pub bias: Option<Range<usize>>,
    pub gn_scale: Option<Range<usize>>,
    pub gn_shift: Option<Range<usize>>,
}

/// Canonical parameter traversal order.
///
/// Layers ascend; within a layer the kernel (`[out, in, row, col]`, row-major)
/// comes first, then the bias, then the scale and shift of the group
/// normalization that precedes the conv. The maskable subset is the
/// concatenation of all kernels in this order.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    entries: Vec<ParamEntry>,
    layers: Vec<LayerSlots>,
    total: usize,
    maskable: usize,
}

impl Layout {
    pub fn new(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut entries = Vec::new();
        let mut layers = Vec::new();
        let mut offset = 0;
        let mut maskable = 0;
        let k = spec.kernel;
        let mut push = |entries: &mut Vec<ParamEntry>, name: String, kind, layer, shape: Vec<usize>| {
            let entry = ParamEntry {
                name,
                kind,
                layer,
                shape,
                offset,
            };
            let range = entry.range();
            offset = range.end;
            entries.push(entry);
            range
        };
        for layer in 1..=spec.num_conv_layers {
            let cin = spec.in_channels(layer);
            let cout = spec.out_channels(layer);
            let kernel = push(
                &mut entries,
                format!("conv{layer}.weight"),
                ParamKind::Kernel,
                layer,
                vec![cout, cin, k, k],
            );
            maskable += kernel.len();
            let bias = spec.has_bias(layer).then(|| {
                push(&mut entries, format!("conv{layer}.bias"), ParamKind::Bias, layer, vec![cout])
            });
            let (gn_scale, gn_shift) = if spec.has_norm(layer) {
                let scale = push(&mut entries, format!("norm{layer}.weight"), ParamKind::GnScale, layer, vec![cin]);
                let shift = push(&mut entries, format!("norm{layer}.bias"), ParamKind::GnShift, layer, vec![cin]);
                (Some(scale), Some(shift))
            } else {
                (None, None)
            };
            layers.push(LayerSlots {
                layer,
                cin,
                cout,
                kernel,
                bias,
                gn_scale,
                gn_shift,
            });
        }
        Ok(Self {
            entries,
            layers,
            total: offset,
            maskable,
        })
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub(crate) fn layer(&self, layer: usize) -> &LayerSlots {
        &self.layers[layer - 1]
    }

    /// Number of scalar parameters.
    pub fn total(&self) -> usize {
        self.total
    }

    /// Number of kernel weights, the `N` of the sparse mask.
    pub fn maskable(&self) -> usize {
        self.maskable
    }

    /// Flat ranges of the kernels, in maskable order.
    pub fn kernel_ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.layers.iter().map(|l| l.kernel.clone())
    }

    /// Flat ranges of everything that is not a kernel.
    pub fn dense_ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.entries
            .iter()
            .filter(|e| e.kind != ParamKind::Kernel)
            .map(ParamEntry::range)
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Named weights in canonical order, backed by one flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<T = f32> {
    layout: Arc<Layout>,
    values: Vec<T>,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![T::zero(); layout.total()];
        Self { layout, values }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<T>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.total()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.layout.entry(name).map(|e| &self.values[e.range()])
    }

    /// Kernel weights in maskable order.
    pub fn maskable_values(&self) -> impl Iterator<Item = T> + '_ {
        self.layout
            .kernel_ranges()
            .flat_map(move |r| self.values[r].iter().copied())
    }

    /// Bias and normalization parameters in traversal order.
    pub fn dense_values(&self) -> impl Iterator<Item = T> + '_ {
        self.layout
            .dense_ranges()
            .flat_map(move |r| self.values[r].iter().copied())
    }

    /// Overwrites the kernels from a maskable-order sequence.
    pub fn set_maskable(&mut self, mut values: impl Iterator<Item = T>) -> Result<()> {
        let ranges: Vec<_> = self.layout.kernel_ranges().collect();
        for r in ranges {
            for slot in &mut self.values[r] {
                *slot = values.next().ok_or_else(|| {
                    Error::ShapeMismatch("too few maskable values".into())
                })?;
            }
        }
        if values.next().is_some() {
            return Err(Error::ShapeMismatch("too many maskable values".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        ParameterStore {
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

impl ParameterStore<f32> {
    /// SHA-256 over the little-endian bytes of every value in traversal order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Inverse of [`Self::to_le_bytes`].
    pub fn from_le_bytes(layout: Arc<Layout>, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != layout.total() * 4 {
            return Err(Error::ShapeMismatch(format!(
                "{} bytes for a layout of {} values",
                bytes.len(),
                layout.total()
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_values(layout, values)
    }
}
