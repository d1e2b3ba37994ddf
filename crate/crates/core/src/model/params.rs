use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// Standard deviation of the normal initialisation of weight matrices and
/// the positional embedding.
pub const INIT_STD: f64 = 0.02;

/// `y = x · weight + bias`, with `weight` stored `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<P> {
    pub weight: P,
    pub bias: P,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norm<P> {
    pub gamma: P,
    pub beta: P,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<P> {
    pub ln1: Norm<P>,
    pub query: Linear<P>,
    pub key: Linear<P>,
    pub value: Linear<P>,
    pub output: Linear<P>,
    pub ln2: Norm<P>,
    pub ffn_in: Linear<P>,
    pub ffn_out: Linear<P>,
}

/// Every learnable tensor of the network, generic over the leaf type so the
/// same structure holds values, tape handles, gradients or optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<P> {
    pub patch_projection: Linear<P>,
    /// `[N, D]`
    pub pos_embedding: P,
    pub layers: Vec<EncoderLayer<P>>,
    pub head_projection: Linear<P>,
    /// 1×1 fusion convolution: weight `[1, C_in]`, bias `[1]`.
    pub fusion: Linear<P>,
}

pub type ModelParams<T = f32> = ModelWeights<Tensor<T>>;

impl<P> Linear<P> {
    fn try_map<Q, E>(
        &self,
        prefix: &str,
        f: &mut impl FnMut(&str, &P) -> Result<Q, E>,
    ) -> Result<Linear<Q>, E> {
        Ok(Linear {
            weight: f(&format!("{prefix}.weight"), &self.weight)?,
            bias: f(&format!("{prefix}.bias"), &self.bias)?,
        })
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a P)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut P)>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

impl<P> Norm<P> {
    fn try_map<Q, E>(
        &self,
        prefix: &str,
        f: &mut impl FnMut(&str, &P) -> Result<Q, E>,
    ) -> Result<Norm<Q>, E> {
        Ok(Norm {
            gamma: f(&format!("{prefix}.gamma"), &self.gamma)?,
            beta: f(&format!("{prefix}.beta"), &self.beta)?,
        })
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a P)>) {
        out.push((format!("{prefix}.gamma"), &self.gamma));
        out.push((format!("{prefix}.beta"), &self.beta));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut P)>) {
        out.push((format!("{prefix}.gamma"), &mut self.gamma));
        out.push((format!("{prefix}.beta"), &mut self.beta));
    }
}

impl<P> EncoderLayer<P> {
    fn try_map<Q, E>(
        &self,
        prefix: &str,
        f: &mut impl FnMut(&str, &P) -> Result<Q, E>,
    ) -> Result<EncoderLayer<Q>, E> {
        Ok(EncoderLayer {
            ln1: self.ln1.try_map(&format!("{prefix}.ln1"), f)?,
            query: self.query.try_map(&format!("{prefix}.query"), f)?,
            key: self.key.try_map(&format!("{prefix}.key"), f)?,
            value: self.value.try_map(&format!("{prefix}.value"), f)?,
            output: self.output.try_map(&format!("{prefix}.output"), f)?,
            ln2: self.ln2.try_map(&format!("{prefix}.ln2"), f)?,
            ffn_in: self.ffn_in.try_map(&format!("{prefix}.ffn_in"), f)?,
            ffn_out: self.ffn_out.try_map(&format!("{prefix}.ffn_out"), f)?,
        })
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a P)>) {
        self.ln1.collect(&format!("{prefix}.ln1"), out);
        self.query.collect(&format!("{prefix}.query"), out);
        self.key.collect(&format!("{prefix}.key"), out);
        self.value.collect(&format!("{prefix}.value"), out);
        self.output.collect(&format!("{prefix}.output"), out);
        self.ln2.collect(&format!("{prefix}.ln2"), out);
        self.ffn_in.collect(&format!("{prefix}.ffn_in"), out);
        self.ffn_out.collect(&format!("{prefix}.ffn_out"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut P)>) {
        self.ln1.collect_mut(&format!("{prefix}.ln1"), out);
        self.query.collect_mut(&format!("{prefix}.query"), out);
        self.key.collect_mut(&format!("{prefix}.key"), out);
        self.value.collect_mut(&format!("{prefix}.value"), out);
        self.output.collect_mut(&format!("{prefix}.output"), out);
        self.ln2.collect_mut(&format!("{prefix}.ln2"), out);
        self.ffn_in.collect_mut(&format!("{prefix}.ffn_in"), out);
        self.ffn_out.collect_mut(&format!("{prefix}.ffn_out"), out);
    }
}

impl<P> ModelWeights<P> {
    /// Maps every leaf, in canonical order, with its dotted name.
    pub fn try_map<Q, E>(
        &self,
        mut f: impl FnMut(&str, &P) -> Result<Q, E>,
    ) -> Result<ModelWeights<Q>, E> {
        let f = &mut f;
        Ok(ModelWeights {
            patch_projection: self.patch_projection.try_map("patch_projection", f)?,
            pos_embedding: f("pos_embedding", &self.pos_embedding)?,
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.try_map(&format!("layers.{i}"), f))
                .collect::<Result<_, E>>()?,
            head_projection: self.head_projection.try_map("head_projection", f)?,
            fusion: self.fusion.try_map("fusion", f)?,
        })
    }

    pub fn map<Q>(&self, mut f: impl FnMut(&str, &P) -> Q) -> ModelWeights<Q> {
        let mapped: Result<ModelWeights<Q>, std::convert::Infallible> =
            self.try_map(|n, p| Ok(f(n, p)));
        match mapped {
            Ok(m) => m,
        }
    }

    /// Leaves in canonical order with their dotted names.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.patch_projection.collect("patch_projection", &mut out);
        out.push(("pos_embedding".to_string(), &self.pos_embedding));
        for (i, l) in self.layers.iter().enumerate() {
            l.collect(&format!("layers.{i}"), &mut out);
        }
        self.head_projection.collect("head_projection", &mut out);
        self.fusion.collect("fusion", &mut out);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut P)> {
        let mut out = Vec::new();
        self.patch_projection
            .collect_mut("patch_projection", &mut out);
        out.push(("pos_embedding".to_string(), &mut self.pos_embedding));
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.collect_mut(&format!("layers.{i}"), &mut out);
        }
        self.head_projection
            .collect_mut("head_projection", &mut out);
        self.fusion.collect_mut("fusion", &mut out);
        out
    }
}

/// Shape of every leaf, derived from the configuration alone.
pub fn param_shapes(cfg: &ModelConfig) -> ModelWeights<Vec<usize>> {
    let (d, p, f, c) = (cfg.embed_dim, cfg.patch_dim(), cfg.ffn_hidden(), cfg.c_in);
    let linear = |i: usize, o: usize| Linear {
        weight: vec![i, o],
        bias: vec![o],
    };
    let norm = || Norm {
        gamma: vec![d],
        beta: vec![d],
    };
    ModelWeights {
        patch_projection: linear(p, d),
        pos_embedding: vec![cfg.n_tokens(), d],
        layers: (0..cfg.layers)
            .map(|_| EncoderLayer {
                ln1: norm(),
                query: linear(d, d),
                key: linear(d, d),
                value: linear(d, d),
                output: linear(d, d),
                ln2: norm(),
                ffn_in: linear(d, f),
                ffn_out: linear(f, d),
            })
            .collect(),
        head_projection: linear(d, p),
        fusion: Linear {
            weight: vec![1, c],
            bias: vec![1],
        },
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Normal(0, 0.02) weights and positional embedding, zero biases, unit
    /// LayerNorm gains. Deterministic in `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(param_shapes(cfg).map(|name, shape| {
            if name.ends_with(".gamma") {
                Tensor::ones(shape.clone())
            } else if name.ends_with(".bias") || name.ends_with(".beta") {
                Tensor::zeros(shape.clone())
            } else {
                Tensor::from_fn(shape.clone(), |_| {
                    T::of(INIT_STD * rng.sample::<f64, _>(StandardNormal))
                })
            }
        }))
    }

    /// Weights that make the network copy the displacement channel of the
    /// first `t_out` input steps to the output: identity tokenizer and head,
    /// zero positional embedding, zero attention and feed-forward weights so
    /// that only the residual path is active.
    ///
    /// Requires `embed_dim == patch * patch * c_in`.
    pub fn frame_copy(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.embed_dim != cfg.patch_dim() {
            return Err(Error::config(format!(
                "frame-copy weights need embed_dim == patch_dim ({} != {})",
                cfg.embed_dim,
                cfg.patch_dim()
            )));
        }
        let identity = |n: usize| {
            Tensor::from_fn(
                [n, n],
                |i| if i / n == i % n { T::one() } else { T::zero() },
            )
        };
        Ok(param_shapes(cfg).map(|name, shape| match name {
            "patch_projection.weight" | "head_projection.weight" => identity(shape[0]),
            "fusion.weight" => {
                Tensor::from_fn(shape.clone(), |i| if i == 0 { T::one() } else { T::zero() })
            }
            n if n.ends_with(".gamma") => Tensor::ones(shape.clone()),
            _ => Tensor::zeros(shape.clone()),
        }))
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        self.map(|_, t| t.cast())
    }

    /// Checks every leaf against the shapes implied by `cfg`.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = param_shapes(cfg);
        if expected.layers.len() != self.layers.len() {
            return Err(Error::shape(format!(
                "{} layers, config has {}",
                self.layers.len(),
                cfg.layers
            )));
        }
        for ((name, shape), (_, t)) in expected.named().into_iter().zip(self.named()) {
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(format!(
                    "{name} has shape {:?}, config implies {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}
