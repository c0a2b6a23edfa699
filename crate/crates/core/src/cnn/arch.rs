use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub maps: usize,
    pub pool_after: bool,
}

/// Shape of a residual classifier.
///
/// Inputs whose height or width is not divisible by `2^pools` are zero-padded
/// at the bottom and right edges before the stem.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    /// Filters are `(2 * kernel_half + 1)` square.
    #[serde(default = "default_kernel_half")]
    pub kernel_half: usize,
    pub stem_maps: usize,
    pub blocks: Vec<BlockSpec>,
    pub dense_hidden: usize,
    pub classes: usize,
}

fn default_kernel_half() -> usize {
    1
}

impl ArchSpec {
    /// Stem of 8 maps, blocks (8, pool) and (16, pool), 32 hidden units.
    pub fn desk(input_channels: usize, input_height: usize, input_width: usize, classes: usize) -> Self {
        ArchSpec {
            input_channels,
            input_height,
            input_width,
            kernel_half: 1,
            stem_maps: 8,
            blocks: vec![
                BlockSpec {
                    maps: 8,
                    pool_after: true,
                },
                BlockSpec {
                    maps: 16,
                    pool_after: true,
                },
            ],
            dense_hidden: 32,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid(format!(
                "a classifier needs at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.blocks.is_empty() {
            return Err(Error::invalid("architecture needs at least one residual block"));
        }
        let counts = [
            self.input_channels,
            self.input_height,
            self.input_width,
            self.stem_maps,
            self.dense_hidden,
        ];
        if counts.contains(&0) || self.blocks.iter().any(|b| b.maps == 0) {
            return Err(Error::invalid("architecture counts must all be >= 1"));
        }
        Ok(())
    }

    pub fn pool_count(&self) -> usize {
        self.blocks.iter().filter(|b| b.pool_after).count()
    }

    /// Height and width after padding to a multiple of `2^pools`.
    pub fn padded_size(&self) -> (usize, usize) {
        let m = 1usize << self.pool_count();
        (self.input_height.div_ceil(m) * m, self.input_width.div_ceil(m) * m)
    }

    /// Plane size seen by each block, in order.
    pub fn block_plane_sizes(&self) -> Vec<(usize, usize)> {
        let (mut h, mut w) = self.padded_size();
        self.blocks
            .iter()
            .map(|b| {
                let size = (h, w);
                if b.pool_after {
                    h /= 2;
                    w /= 2;
                }
                size
            })
            .collect()
    }

    /// Length of the flattened feature vector feeding the dense head.
    pub fn head_inputs(&self) -> usize {
        let (h, w) = self.padded_size();
        let m = 1usize << self.pool_count();
        let last = self.blocks.last().map(|b| b.maps).unwrap_or(0);
        last * (h / m) * (w / m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_size_by_hand() {
        let arch = ArchSpec::desk(3, 16, 16, 3);
        // 16 maps at 16 / 2^2 = 4 pixels per side.
        assert_eq!(arch.head_inputs(), 16 * 4 * 4);
        assert_eq!(arch.block_plane_sizes(), vec![(16, 16), (8, 8)]);
    }

    #[test]
    fn odd_inputs_are_padded() {
        let arch = ArchSpec::desk(3, 54, 81, 3);
        assert_eq!(arch.padded_size(), (56, 84));
        assert_eq!(arch.head_inputs(), 16 * 14 * 21);
    }

    #[test]
    fn validation() {
        let mut arch = ArchSpec::desk(3, 16, 16, 1);
        assert!(arch.validate().is_err());
        arch.classes = 2;
        assert!(arch.validate().is_ok());
        arch.blocks.clear();
        assert!(arch.validate().is_err());
    }
}
