use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Activation;

/// Architecture hyperparameters. Every parameter shape derives from these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub t_in: usize,
    pub t_out: usize,
    pub c_in: usize,
    pub height: usize,
    pub width: usize,
    /// Side of the square patches.
    pub patch: usize,
    /// Token width D.
    pub embed_dim: usize,
    /// Number of encoder layers L.
    pub layers: usize,
    pub heads: usize,
    /// Hidden width of the feed-forward blocks; `4 * embed_dim` when absent.
    pub ffn_hidden: Option<usize>,
    pub dropout: f64,
    pub activation: Activation,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            t_in: 10,
            t_out: 10,
            c_in: 6,
            height: 64,
            width: 64,
            patch: 8,
            embed_dim: 64,
            layers: 16,
            heads: 4,
            ffn_hidden: None,
            dropout: 0.0,
            activation: Activation::Gelu,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("t_in", self.t_in),
            ("t_out", self.t_out),
            ("c_in", self.c_in),
            ("height", self.height),
            ("width", self.width),
            ("patch", self.patch),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("ffn_hidden", self.ffn_hidden()),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return Err(Error::config(format!(
                "grid {}x{} is not divisible by patch size {}",
                self.height, self.width, self.patch
            )));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.t_out > self.t_in {
            return Err(Error::config(format!(
                "t_out ({}) may not exceed t_in ({}): forecasts are read from the first t_out time slices of tokens",
                self.t_out, self.t_in
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::config("layer_norm_eps must be positive"));
        }
        Ok(())
    }

    pub fn ffn_hidden(&self) -> usize {
        self.ffn_hidden.unwrap_or(4 * self.embed_dim)
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn patches_per_step(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    /// Length N of the token sequence.
    pub fn n_tokens(&self) -> usize {
        self.t_in * self.patches_per_step()
    }

    /// Tokens read by the prediction head.
    pub fn n_out_tokens(&self) -> usize {
        self.t_out * self.patches_per_step()
    }

    /// Values in one flattened multi-channel patch.
    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.c_in
    }

    /// Closed-form number of learnable scalars.
    pub fn count_params(&self) -> usize {
        let (d, p, f) = (self.embed_dim, self.patch_dim(), self.ffn_hidden());
        let tokenizer = p * d + d + self.n_tokens() * d;
        let layer = 2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
        let head = d * p + p + self.c_in + 1;
        tokenizer + self.layers * layer + head
    }
}
