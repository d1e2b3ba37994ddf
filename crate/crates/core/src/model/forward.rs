use rand::RngCore;

use super::config::ModelConfig;
use super::params::{EncoderLayer, ModelParams, ModelWeights};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

/// Handles into the tape for one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// Tokens after projection and positional embedding, `(B, N, D)`.
    pub tokens: Var,
    /// Output of the last encoder layer, `(B, N, D)`.
    pub encoded: Var,
    /// Softmax weights per layer, `(B·heads, N, N)`.
    pub attention: Vec<Var>,
    /// `(B, T_out, 1, H, W)`
    pub output: Var,
}

/// Values captured during an inference pass.
#[derive(Debug, Clone)]
pub struct Trace<T: Scalar = f32> {
    pub tokens: Tensor<T>,
    pub encoded: Tensor<T>,
    /// Per layer, `(B, heads, N, N)`.
    pub attention: Vec<Tensor<T>>,
    pub output: Tensor<T>,
}

/// Places every parameter on the tape, as a trainable leaf or a constant.
pub fn bind<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    trainable: bool,
) -> ModelWeights<Var> {
    params.map(|_, t| {
        if trainable {
            tape.param(t.clone())
        } else {
            tape.constant(t.clone())
        }
    })
}

fn check_input(cfg: &ModelConfig, shape: &[usize]) -> Result<usize> {
    let expected = [cfg.t_in, cfg.c_in, cfg.height, cfg.width];
    if shape.len() != 5 || shape[0] == 0 || shape[1..] != expected {
        return Err(Error::shape(format!(
            "model input {shape:?}, expected [B, {}, {}, {}, {}]",
            expected[0], expected[1], expected[2], expected[3]
        )));
    }
    Ok(shape[0])
}

/// `(B, T, C, H, W) -> (B, T·(H/P)·(W/P), P·P·C)`; tokens are time-major,
/// then row-major over patches; each patch flattens as (row, col, channel).
pub fn patchify<T: Scalar>(x: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let [b, t, c, h, w] = dims5(x.shape())?;
    let (hp, wp) = patch_grid(h, w, patch)?;
    x.reshape([b, t, c, hp, patch, wp, patch])?
        .permute(&[0, 1, 3, 5, 4, 6, 2])?
        .into_reshape([b, t * hp * wp, patch * patch * c])
}

/// Inverse of [`patchify`] for `steps` time slices of `channels` channels.
pub fn unpatchify<T: Scalar>(
    tokens: &Tensor<T>,
    steps: usize,
    channels: usize,
    height: usize,
    width: usize,
    patch: usize,
) -> Result<Tensor<T>> {
    let (hp, wp) = patch_grid(height, width, patch)?;
    let b = tokens.dim(0);
    tokens
        .reshape([b, steps, hp, wp, patch, patch, channels])?
        .permute(&[0, 1, 6, 2, 4, 3, 5])?
        .into_reshape([b, steps, channels, height, width])
}

fn dims5(shape: &[usize]) -> Result<[usize; 5]> {
    shape
        .try_into()
        .map_err(|_| Error::shape(format!("expected a rank-5 tensor, got {shape:?}")))
}

fn patch_grid(h: usize, w: usize, patch: usize) -> Result<(usize, usize)> {
    if patch == 0 || !h.is_multiple_of(patch) || !w.is_multiple_of(patch) {
        return Err(Error::shape(format!(
            "{h}x{w} map does not split into {patch}x{patch} patches"
        )));
    }
    Ok((h / patch, w / patch))
}

fn tokenize_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    w: &ModelWeights<Var>,
    x: Var,
) -> Result<Var> {
    let b = check_input(cfg, tape.shape(x))?;
    let (p, hp, wp) = (cfg.patch, cfg.height / cfg.patch, cfg.width / cfg.patch);
    let x = tape.reshape(x, &[b, cfg.t_in, cfg.c_in, hp, p, wp, p])?;
    let x = tape.permute(x, &[0, 1, 3, 5, 4, 6, 2])?;
    let x = tape.reshape(x, &[b, cfg.n_tokens(), cfg.patch_dim()])?;
    let z = tape.linear(x, w.patch_projection.weight, w.patch_projection.bias)?;
    tape.add_broadcast(z, w.pos_embedding)
}

fn split_heads<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    b: usize,
    n: usize,
    heads: usize,
    dh: usize,
) -> Result<Var> {
    let x = tape.reshape(x, &[b, n, heads, dh])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, &[b * heads, n, dh])
}

fn maybe_dropout<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    rate: f64,
    rng: &mut Option<&mut dyn RngCore>,
) -> Var {
    match rng {
        Some(r) => tape.dropout(x, rate, &mut **r),
        None => x,
    }
}

/// One pre-norm block. Returns the new token stream and the attention
/// weights `(B·heads, N, N)`.
pub fn encoder_layer<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    layer: &EncoderLayer<Var>,
    z: Var,
    rng: &mut Option<&mut dyn RngCore>,
) -> Result<(Var, Var)> {
    let shape = tape.shape(z).to_vec();
    let (b, n, d) = (shape[0], shape[1], shape[2]);
    let (heads, dh) = (cfg.heads, cfg.head_dim());
    let eps = T::of(cfg.layer_norm_eps);

    let a = tape.layer_norm(z, layer.ln1.gamma, layer.ln1.beta, eps)?;
    let q = tape.linear(a, layer.query.weight, layer.query.bias)?;
    let k = tape.linear(a, layer.key.weight, layer.key.bias)?;
    let v = tape.linear(a, layer.value.weight, layer.value.bias)?;
    let q = split_heads(tape, q, b, n, heads, dh)?;
    let k = split_heads(tape, k, b, n, heads, dh)?;
    let v = split_heads(tape, v, b, n, heads, dh)?;
    let kt = tape.permute(k, &[0, 2, 1])?;
    let scores = tape.batch_matmul(q, kt)?;
    let scores = tape.scale(scores, T::of(1.0 / (dh as f64).sqrt()));
    let attention = tape.softmax(scores);
    let ctx = tape.batch_matmul(attention, v)?;
    let ctx = tape.reshape(ctx, &[b, heads, n, dh])?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[b, n, d])?;
    let o = tape.linear(ctx, layer.output.weight, layer.output.bias)?;
    let o = maybe_dropout(tape, o, cfg.dropout, rng);
    let z = tape.add(z, o)?;

    let bn = tape.layer_norm(z, layer.ln2.gamma, layer.ln2.beta, eps)?;
    let f = tape.linear(bn, layer.ffn_in.weight, layer.ffn_in.bias)?;
    let f = tape.activation(f, cfg.activation);
    let f = maybe_dropout(tape, f, cfg.dropout, rng);
    let f = tape.linear(f, layer.ffn_out.weight, layer.ffn_out.bias)?;
    let f = maybe_dropout(tape, f, cfg.dropout, rng);
    Ok((tape.add(z, f)?, attention))
}

/// Full network on the tape. Dropout is active only when `rng` is given.
pub fn forward_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    w: &ModelWeights<Var>,
    x: Var,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<ForwardVars> {
    cfg.validate()?;
    let b = check_input(cfg, tape.shape(x))?;
    let tokens = tokenize_on_tape(tape, cfg, w, x)?;
    let mut z = tokens;
    let mut attention = Vec::with_capacity(w.layers.len());
    for layer in &w.layers {
        let (next, att) = encoder_layer(tape, cfg, layer, z, &mut rng)?;
        z = next;
        attention.push(att);
    }
    let encoded = z;

    let (p, hp, wp) = (cfg.patch, cfg.height / cfg.patch, cfg.width / cfg.patch);
    let selected = tape.narrow(encoded, 1, 0, cfg.n_out_tokens())?;
    let y = tape.linear(selected, w.head_projection.weight, w.head_projection.bias)?;
    let y = tape.reshape(y, &[b, cfg.t_out, hp, wp, p, p, cfg.c_in])?;
    let y = tape.permute(y, &[0, 1, 6, 2, 4, 3, 5])?;
    let y = tape.reshape(y, &[b, cfg.t_out, cfg.c_in, cfg.height, cfg.width])?;
    let output = tape.conv1x1(y, w.fusion.weight, w.fusion.bias, 2)?;
    Ok(ForwardVars {
        tokens,
        encoded,
        attention,
        output,
    })
}

/// The network with fixed weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar = f32> {
    config: ModelConfig,
    params: ModelParams<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams<T> {
        self.params
    }

    /// `(B, T_in, C_in, H, W) -> (B, T_out, 1, H, W)`
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.trace(x)?.output)
    }

    /// Tokens after positional embedding, `(B, N, D)`.
    pub fn tokenize(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let w = bind(&mut tape, &self.params, false);
        let x = tape.constant(x.clone());
        let z = tokenize_on_tape(&mut tape, &self.config, &w, x)?;
        Ok(tape.value(z).clone())
    }

    pub fn trace(&self, x: &Tensor<T>) -> Result<Trace<T>> {
        let mut tape = Tape::new();
        let w = bind(&mut tape, &self.params, false);
        let xv = tape.constant(x.clone());
        let vars = forward_on_tape(&mut tape, &self.config, &w, xv, None)?;
        let b = x.dim(0);
        let n = self.config.n_tokens();
        let attention = vars
            .attention
            .iter()
            .map(|&a| tape.value(a).reshape([b, self.config.heads, n, n]))
            .collect::<Result<_>>()?;
        Ok(Trace {
            tokens: tape.value(vars.tokens).clone(),
            encoded: tape.value(vars.encoded).clone(),
            attention,
            output: tape.value(vars.output).clone(),
        })
    }
}
