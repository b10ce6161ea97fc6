use crate::ModelError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    /// Encoder input, decoder input and output projection share one matrix.
    /// Always true.
    pub share_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            enc_layers: 2,
            dec_layers: 2,
            d_model: 128,
            heads: 4,
            ffn_dim: 512,
            max_positions: 256,
            vocab_size: 1133,
            share_embeddings: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.ffn_dim == 0 || self.max_positions == 0 || self.vocab_size < 3 {
            return bad("ffn_dim, max_positions and vocab_size must be positive (vocab >= 3)");
        }
        if !self.share_embeddings {
            return bad("embeddings are always shared");
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }

    /// `key=value` lines, in a fixed order.
    pub fn to_kv(&self) -> String {
        format!(
            "enc_layers={}\ndec_layers={}\nd_model={}\nheads={}\nffn_dim={}\nmax_positions={}\nvocab_size={}\nshare_embeddings={}\n",
            self.enc_layers,
            self.dec_layers,
            self.d_model,
            self.heads,
            self.ffn_dim,
            self.max_positions,
            self.vocab_size,
            self.share_embeddings
        )
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ModelError> {
        let n = || value.parse::<usize>().map_err(|_| ModelError::InvalidConfig(format!("{key}: expected a number, got `{value}`")));
        match key {
            "enc_layers" => self.enc_layers = n()?,
            "dec_layers" => self.dec_layers = n()?,
            "d_model" => self.d_model = n()?,
            "heads" => self.heads = n()?,
            "ffn_dim" => self.ffn_dim = n()?,
            "max_positions" => self.max_positions = n()?,
            "vocab_size" => self.vocab_size = n()?,
            "share_embeddings" => {
                self.share_embeddings =
                    value.parse().map_err(|_| ModelError::InvalidConfig(format!("{key}: expected true/false")))?
            }
            _ => return Err(ModelError::InvalidConfig(format!("unknown model key `{key}`"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: u64,
    pub max_steps: u64,
    pub seed: u64,
}

impl TrainConfig {
    /// No dropout anywhere; not configurable.
    pub const DROPOUT: f64 = 0.0;
    /// Plain one-hot targets; not configurable.
    pub const LABEL_SMOOTHING: f64 = 0.0;
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            warmup_steps: 400,
            max_steps: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeamConfig {
    pub k: usize,
    pub max_decode_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig { k: 5, max_decode_len: 256 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig { heads: 3, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { share_embeddings: false, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let c = ModelConfig { d_model: 32, heads: 2, ..Default::default() };
        let mut back = ModelConfig::default();
        for line in c.to_kv().lines() {
            let (k, v) = line.split_once('=').unwrap();
            back.set(k, v).unwrap();
        }
        assert_eq!(back, c);
    }
}
