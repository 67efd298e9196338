use crate::error::{Error, Result};

/// Declarative description of the convolution stack.
///
/// Layers are numbered from 1. Every conv except the first and the last is
/// preceded by group normalization and a leaky ReLU. Residual shortcuts add
/// the pre-normalization output of conv `l - 2` to the output of conv `l` for
/// every target `l` in `skip_range.0 + 2, skip_range.0 + 4, ..., skip_range.1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub num_conv_layers: usize,
    pub channels: usize,
    pub kernel: usize,
    pub gn_groups: usize,
    pub lrelu_slope: f64,
    pub skip_range: Option<(usize, usize)>,
    /// Conv whose filters are split in half between the cover and secret
    /// branches in encode mode.
    pub split_layer: usize,
    pub io_channels: usize,
    pub bias_layers: Vec<usize>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            num_conv_layers: 19,
            channels: 64,
            kernel: 3,
            gn_groups: 8,
            lrelu_slope: 0.2,
            skip_range: Some((4, 16)),
            split_layer: 10,
            io_channels: 3,
            bias_layers: vec![1, 19],
        }
    }
}

impl NetworkSpec {
    /// Nine convs of 16 channels; small enough to train on a CPU.
    ///
    /// A single normalization group keeps cross-channel intensity
    /// information, without which this narrow stack trains far slower.
    pub fn compact() -> Self {
        Self {
            num_conv_layers: 9,
            channels: 16,
            kernel: 3,
            gn_groups: 1,
            lrelu_slope: 0.2,
            skip_range: Some((3, 7)),
            split_layer: 5,
            io_channels: 3,
            bias_layers: vec![1, 9],
        }
    }

    /// Three convs of four channels, for gradient checks.
    pub fn tiny() -> Self {
        Self {
            num_conv_layers: 3,
            channels: 4,
            kernel: 3,
            gn_groups: 2,
            lrelu_slope: 0.2,
            skip_range: None,
            split_layer: 2,
            io_channels: 3,
            bias_layers: vec![1, 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.num_conv_layers;
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if l < 3 {
            return bad(format!("need at least 3 conv layers, got {l}"));
        }
        if self.channels == 0 || self.io_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.gn_groups == 0 || self.channels % self.gn_groups != 0 {
            return bad(format!(
                "{} groups do not divide {} channels",
                self.gn_groups, self.channels
            ));
        }
        if !self.lrelu_slope.is_finite() {
            return bad("leaky ReLU slope must be finite".into());
        }
        if self.split_layer <= 1 || self.split_layer >= l {
            return bad(format!(
                "split layer {} must lie strictly between 1 and {l}",
                self.split_layer
            ));
        }
        if self.channels % 2 != 0 {
            return bad(format!(
                "split layer needs even filter count, got {}",
                self.channels
            ));
        }
        if let Some((start, end)) = self.skip_range {
            if start < 1 || end > l - 1 || start >= end {
                return bad(format!(
                    "skip range {start}..{end} outside hidden layers 1..{}",
                    l - 1
                ));
            }
            if (end - start) % 2 != 0 {
                return bad(format!("skip range {start}..{end} must span an even count"));
            }
            let s = self.split_layer;
            if self.skip_pairs().any(|(src, dst)| src < s && s < dst) {
                return bad(format!("a shortcut crosses split layer {s}"));
            }
        }
        if let Some(b) = self.bias_layers.iter().find(|&&b| b == 0 || b > l) {
            return bad(format!("bias layer {b} outside 1..{l}"));
        }
        Ok(())
    }

    /// `(source, target)` pairs of the residual shortcuts.
    pub fn skip_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (start, end) = self.skip_range.unwrap_or((0, 0));
        (start..end)
            .step_by(2)
            .filter(move |_| self.skip_range.is_some())
            .map(|src| (src, src + 2))
    }

    /// Source layer of the shortcut that lands on `layer`, if any.
    pub fn skip_source(&self, layer: usize) -> Option<usize> {
        let (start, end) = self.skip_range?;
        (layer >= start + 2 && layer <= end && (layer - start) % 2 == 0).then(|| layer - 2)
    }

    pub fn in_channels(&self, layer: usize) -> usize {
        if layer == 1 {
            self.io_channels
        } else {
            self.channels
        }
    }

    pub fn out_channels(&self, layer: usize) -> usize {
        if layer == self.num_conv_layers {
            self.io_channels
        } else {
            self.channels
        }
    }

    pub fn has_bias(&self, layer: usize) -> bool {
        self.bias_layers.contains(&layer)
    }

    /// Whether group normalization and the activation precede `layer`.
    pub fn has_norm(&self, layer: usize) -> bool {
        layer > 1 && layer < self.num_conv_layers
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        NetworkSpec::default().validate().unwrap();
        NetworkSpec::compact().validate().unwrap();
        NetworkSpec::tiny().validate().unwrap();
    }

    #[test]
    fn default_shortcuts_pair_every_two_layers() {
        let spec = NetworkSpec::default();
        let pairs: Vec<_> = spec.skip_pairs().collect();
        assert_eq!(pairs, vec![(4, 6), (6, 8), (8, 10), (10, 12), (12, 14), (14, 16)]);
        assert_eq!(spec.skip_source(10), Some(8));
        assert_eq!(spec.skip_source(11), None);
        assert_eq!(spec.skip_source(4), None);
        assert_eq!(spec.skip_source(18), None);
    }

    #[test]
    fn odd_split_width_is_rejected() {
        let spec = NetworkSpec {
            channels: 63,
            gn_groups: 7,
            ..NetworkSpec::default()
        };
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("split layer needs even filter count"), "{err}");
    }

    #[test]
    fn skip_endpoints_outside_range_are_rejected() {
        for range in [(0, 4), (4, 19), (4, 30), (6, 6), (4, 7)] {
            let spec = NetworkSpec {
                skip_range: Some(range),
                ..NetworkSpec::default()
            };
            assert!(spec.validate().is_err(), "{range:?}");
        }
    }

    #[test]
    fn shortcut_crossing_split_is_rejected() {
        let spec = NetworkSpec {
            skip_range: Some((3, 15)),
            ..NetworkSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn split_must_be_interior() {
        for split in [0, 1, 19, 20] {
            let spec = NetworkSpec {
                split_layer: split,
                skip_range: None,
                ..NetworkSpec::default()
            };
            assert!(spec.validate().is_err(), "{split}");
        }
    }
}
