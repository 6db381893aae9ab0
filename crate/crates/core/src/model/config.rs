use crate::error::{Error, Result};

/// Number of encoder scales; scale `v` has spatial factor `1 / 2^v`.
pub const NUM_SCALES: usize = 4;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Channel width of encoder scales 1..=4.
    pub encoder_channels: [usize; NUM_SCALES],
    /// Dense layers per attention block.
    pub dense_layers: usize,
    /// Output channels of every dense layer.
    pub growth: usize,
    /// Attention blocks between encoder and decoder. Zero gives the plain
    /// encoder-decoder ablation.
    pub num_blocks: usize,
    /// Input `(height, width)`, both divisible by 16.
    pub input_size: (usize, usize),
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            encoder_channels: [16, 32, 64, 128],
            dense_layers: 4,
            growth: 16,
            num_blocks: 2,
            input_size: (64, 64),
        }
    }
}

impl ModelConfig {
    /// The smallest configuration used by end-to-end gradient checks.
    pub fn tiny() -> Self {
        Self {
            in_channels: 3,
            encoder_channels: [4, 4, 4, 4],
            dense_layers: 2,
            growth: 4,
            num_blocks: 1,
            input_size: (32, 32),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        let fail = |m: String| Err(Error::Config(m));
        if self.in_channels == 0 {
            return fail("in_channels must be >= 1".into());
        }
        if self.encoder_channels.contains(&0) {
            return fail(format!("encoder_channels {:?} must all be >= 1", self.encoder_channels));
        }
        if self.dense_layers == 0 {
            return fail("dense_layers must be >= 1".into());
        }
        if self.growth == 0 {
            return fail("growth must be >= 1".into());
        }
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return fail(format!("input size {h}x{w} must be a positive multiple of 16"));
        }
        Ok(())
    }

    /// Spatial size of scale `v` (1-based).
    pub fn scale_size(&self, v: usize) -> (usize, usize) {
        (self.input_size.0 >> v, self.input_size.1 >> v)
    }

    /// Input channels consumed by dense layer `c` (1-based) at scale `v`.
    pub fn dense_in_channels(&self, v: usize, c: usize) -> usize {
        self.encoder_channels[v - 1] + (c - 1) * self.growth
    }

    pub fn num_gams(&self) -> usize {
        self.num_blocks * self.dense_layers
    }

    pub fn num_side_outputs(&self) -> usize {
        NUM_SCALES
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
    }

    #[test]
    fn rejects_bad_sizes() {
        let mut c = ModelConfig::default();
        c.input_size = (40, 64);
        assert!(c.validate().is_err());
        c.input_size = (64, 64);
        c.dense_layers = 0;
        assert!(c.validate().is_err());
        c.dense_layers = 4;
        c.growth = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn dense_channel_bookkeeping() {
        let c = ModelConfig::default();
        assert_eq!(c.dense_in_channels(1, 1), 16);
        assert_eq!(c.dense_in_channels(1, 3), 48);
        assert_eq!(c.dense_in_channels(4, 4), 128 + 48);
    }
}
