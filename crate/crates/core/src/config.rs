//! Model shape configuration.

use crate::error::{Error, Result};

/// Shape of the toy transformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub num_heads: usize,
    pub num_visual_tokens: usize,
    pub max_seq_len: usize,
}

impl ModelConfig {
    /// Default desk-scale shape: 12 layers, hidden 128, FFN 512, vocab 512,
    /// 4 heads, 16 visual tokens, 256 positions.
    pub fn desk_default() -> Self {
        ModelConfig {
            num_layers: 12,
            hidden_dim: 128,
            ffn_dim: 512,
            vocab_size: 512,
            num_heads: 4,
            num_visual_tokens: 16,
            max_seq_len: 256,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_layers < 2 {
            return fail(format!("num_layers must be at least 2, got {}", self.num_layers));
        }
        if self.num_heads == 0 {
            return fail("num_heads must be positive".to_string());
        }
        if self.hidden_dim == 0 || self.hidden_dim % self.num_heads != 0 {
            return fail(format!(
                "hidden_dim {} must be a positive multiple of num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.head_dim() % 2 != 0 {
            return fail(format!(
                "head_dim {} must be even for rotary position pairs",
                self.head_dim()
            ));
        }
        if self.ffn_dim < self.hidden_dim {
            return fail(format!(
                "ffn_dim {} must be at least hidden_dim {}",
                self.ffn_dim, self.hidden_dim
            ));
        }
        if self.vocab_size < 2 {
            return fail(format!("vocab_size must be at least 2, got {}", self.vocab_size));
        }
        if self.num_visual_tokens == 0 {
            return fail("num_visual_tokens must be positive".to_string());
        }
        if self.num_visual_tokens >= self.ffn_dim {
            return fail(format!(
                "num_visual_tokens {} must be smaller than ffn_dim {}",
                self.num_visual_tokens, self.ffn_dim
            ));
        }
        if self.max_seq_len == 0 {
            return fail("max_seq_len must be positive".to_string());
        }
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let d = self.hidden_dim;
        let per_layer = 4 * d * d + 2 * d * self.ffn_dim + 2 * d;
        self.vocab_size * d            // token embedding
            + self.num_layers * per_layer
            + d                        // final rmsnorm gain
            + self.vocab_size * d      // vocabulary head
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_default_is_valid() {
        assert!(ModelConfig::desk_default().validate().is_ok());
    }

    #[test]
    fn rejects_single_layer() {
        let mut c = ModelConfig::desk_default();
        c.num_layers = 1;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut c = ModelConfig::desk_default();
        c.num_heads = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_odd_head_dim() {
        let mut c = ModelConfig::desk_default();
        c.hidden_dim = 12;
        c.num_heads = 4;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_ffn_smaller_than_hidden() {
        let mut c = ModelConfig::desk_default();
        c.ffn_dim = 64;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_tiny_vocab() {
        let mut c = ModelConfig::desk_default();
        c.vocab_size = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_visual_tokens_matching_ffn_dim() {
        let mut c = ModelConfig::desk_default();
        c.num_visual_tokens = c.ffn_dim;
        assert!(c.validate().is_err());
    }

    #[test]
    fn param_count_matches_hand_total() {
        let c = ModelConfig {
            num_layers: 2,
            hidden_dim: 4,
            ffn_dim: 8,
            vocab_size: 10,
            num_heads: 2,
            num_visual_tokens: 3,
            max_seq_len: 16,
        };
        // embedding 40, per layer 4*16 + 2*32 + 8 = 136, final gain 4, head 40
        assert_eq!(c.param_count(), 40 + 2 * 136 + 4 + 40);
    }
}
