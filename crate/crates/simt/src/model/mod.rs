//! Encoder-decoder transformer with a unidirectional encoder,
//! prefix-restricted cross-attention, and lagging-routed adapter banks.

mod checkpoint;
mod net;
mod session;

pub use checkpoint::{Container, CKPT_MAGIC};
pub use net::SimtModel;
pub use session::{
    mean_adapter_norms, EncoderState, IncrementalDecoder, RecomputeDecoder,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model hyperparameters. `adapter_lagging` is the increasing list of minimum
/// wait-k values, one adapter per entry; `adapter_layers` selects which
/// decoder layers carry adapter banks (empty = a plain multi-path backbone).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub dropout: f64,
    pub adapter_lagging: Vec<usize>,
    pub adapter_bottleneck: usize,
    pub adapter_layers: Vec<usize>,
    pub backbone_frozen: bool,
    pub max_positions: usize,
}

impl ModelConfig {
    /// Desk-scale defaults: small enough to train on one CPU core in minutes.
    pub fn desk(src_vocab: usize, tgt_vocab: usize) -> ModelConfig {
        ModelConfig {
            src_vocab,
            tgt_vocab,
            embed_dim: 64,
            ffn_dim: 128,
            num_layers: 2,
            num_heads: 2,
            dropout: 0.1,
            adapter_lagging: vec![1, 3, 5, 7],
            adapter_bottleneck: 16,
            adapter_layers: vec![0, 1],
            backbone_frozen: false,
            max_positions: 512,
        }
    }

    /// The published full-scale profile (Transformer-Small shape). Kept as a
    /// named configuration; not a test target at desk scale.
    pub fn paper(src_vocab: usize, tgt_vocab: usize) -> ModelConfig {
        ModelConfig {
            src_vocab,
            tgt_vocab,
            embed_dim: 512,
            ffn_dim: 1024,
            num_layers: 6,
            num_heads: 4,
            dropout: 0.3,
            adapter_lagging: vec![1, 3, 5, 7, 9, 11, 13, 15],
            adapter_bottleneck: 64,
            adapter_layers: (0..6).collect(),
            backbone_frozen: false,
            max_positions: 1024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.src_vocab < 5 || self.tgt_vocab < 5 {
            return Err(Error::Usage(
                "vocabularies need at least one token beyond the 4 reserved ids".into(),
            ));
        }
        if self.embed_dim == 0 || self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(Error::Usage(format!(
                "embed_dim {} must be a positive multiple of num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.num_layers == 0 {
            return Err(Error::Usage("num_layers must be positive".into()));
        }
        if self.adapter_bottleneck == 0 {
            return Err(Error::Usage("adapter_bottleneck must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Usage(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if self.adapter_lagging.is_empty() {
            return Err(Error::Usage("adapter_lagging must be non-empty".into()));
        }
        if self.adapter_lagging[0] != 1 {
            return Err(Error::Usage(format!(
                "adapter_lagging must start at 1, got {:?}",
                self.adapter_lagging
            )));
        }
        if !self.adapter_lagging.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Usage(format!(
                "adapter_lagging must be strictly increasing, got {:?}",
                self.adapter_lagging
            )));
        }
        let mut layers = self.adapter_layers.clone();
        layers.dedup();
        if layers.len() != self.adapter_layers.len()
            || !layers.windows(2).all(|w| w[0] < w[1])
            || layers.iter().any(|&l| l >= self.num_layers)
        {
            return Err(Error::Usage(format!(
                "adapter_layers {:?} must be sorted, unique decoder layer indices < {}",
                self.adapter_layers, self.num_layers
            )));
        }
        Ok(())
    }

    pub fn has_adapters(&self) -> bool {
        !self.adapter_layers.is_empty()
    }
}

/// Select the adapter for lagging `k`: the largest entry of `lagging` that is
/// `<= k`. Total for every `k >= 1` when the bank starts at 1.
pub fn route(k: usize, lagging: &[usize]) -> Result<usize> {
    if lagging.is_empty() {
        return Err(Error::Usage("routing with an empty adapter bank".into()));
    }
    if k < lagging[0] {
        return Err(Error::Usage(format!(
            "lagging {k} below adapter coverage (min {})",
            lagging[0]
        )));
    }
    Ok(lagging.iter().take_while(|&&ka| ka <= k).count() - 1)
}
