use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Cls,
    Mean,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cls" => Ok(Pooling::Cls),
            "mean" => Ok(Pooling::Mean),
            _ => Err(Error::Config(format!("pooling must be cls or mean, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub pooling: Pooling,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 4,
            hidden: 128,
            heads: 4,
            ffn: 512,
            max_len: 512,
            dropout: 0.2,
            vocab_size: 0,
            pooling: Pooling::Cls,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 {
            return bad("layers must be >= 1".into());
        }
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return bad(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        if self.ffn == 0 {
            return bad("ffn must be positive".into());
        }
        if self.max_len < 3 {
            return bad(format!("max_len {} < 3", self.max_len));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// Weights of one transformer block (post-norm).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<F> {
    pub wq: Tensor<F>,
    pub bq: Tensor<F>,
    pub wk: Tensor<F>,
    pub bk: Tensor<F>,
    pub wv: Tensor<F>,
    pub bv: Tensor<F>,
    pub wo: Tensor<F>,
    pub bo: Tensor<F>,
    pub ln1_g: Tensor<F>,
    pub ln1_b: Tensor<F>,
    pub w1: Tensor<F>,
    pub b1: Tensor<F>,
    pub w2: Tensor<F>,
    pub b2: Tensor<F>,
    pub ln2_g: Tensor<F>,
    pub ln2_b: Tensor<F>,
}

const LAYER_NAMES: [&str; 16] = [
    "attn.q.weight",
    "attn.q.bias",
    "attn.k.weight",
    "attn.k.bias",
    "attn.v.weight",
    "attn.v.bias",
    "attn.out.weight",
    "attn.out.bias",
    "attn.norm.gamma",
    "attn.norm.beta",
    "ffn.in.weight",
    "ffn.in.bias",
    "ffn.out.weight",
    "ffn.out.bias",
    "ffn.norm.gamma",
    "ffn.norm.beta",
];

impl<F: Real> LayerParams<F> {
    fn zeros(cfg: &EncoderConfig) -> Self {
        let (d, f) = (cfg.hidden, cfg.ffn);
        LayerParams {
            wq: Tensor::zeros(&[d, d]),
            bq: Tensor::zeros(&[d]),
            wk: Tensor::zeros(&[d, d]),
            bk: Tensor::zeros(&[d]),
            wv: Tensor::zeros(&[d, d]),
            bv: Tensor::zeros(&[d]),
            wo: Tensor::zeros(&[d, d]),
            bo: Tensor::zeros(&[d]),
            ln1_g: Tensor::zeros(&[d]),
            ln1_b: Tensor::zeros(&[d]),
            w1: Tensor::zeros(&[d, f]),
            b1: Tensor::zeros(&[f]),
            w2: Tensor::zeros(&[f, d]),
            b2: Tensor::zeros(&[d]),
            ln2_g: Tensor::zeros(&[d]),
            ln2_b: Tensor::zeros(&[d]),
        }
    }

    fn tensors(&self) -> [&Tensor<F>; 16] {
        [
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo, &self.ln1_g,
            &self.ln1_b, &self.w1, &self.b1, &self.w2, &self.b2, &self.ln2_g, &self.ln2_b,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<F>; 16] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln2_g,
            &mut self.ln2_b,
        ]
    }
}

/// Every learnable tensor of one encoder, including the MLM head whose
/// output projection is tied to the token embedding table.
///
/// The same structure doubles as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<F> {
    pub tok_emb: Tensor<F>,
    pub pos_emb: Tensor<F>,
    pub emb_ln_g: Tensor<F>,
    pub emb_ln_b: Tensor<F>,
    pub layers: Vec<LayerParams<F>>,
    pub mlm_w: Tensor<F>,
    pub mlm_b: Tensor<F>,
    pub mlm_ln_g: Tensor<F>,
    pub mlm_ln_b: Tensor<F>,
    pub mlm_bias: Tensor<F>,
}

/// Standard deviation of the normal initializer.
pub const INIT_STD: f64 = 0.02;

impl<F: Real> EncoderParams<F> {
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        let (v, d) = (cfg.vocab_size, cfg.hidden);
        EncoderParams {
            tok_emb: Tensor::zeros(&[v, d]),
            pos_emb: Tensor::zeros(&[cfg.max_len, d]),
            emb_ln_g: Tensor::zeros(&[d]),
            emb_ln_b: Tensor::zeros(&[d]),
            layers: (0..cfg.layers).map(|_| LayerParams::zeros(cfg)).collect(),
            mlm_w: Tensor::zeros(&[d, d]),
            mlm_b: Tensor::zeros(&[d]),
            mlm_ln_g: Tensor::zeros(&[d]),
            mlm_ln_b: Tensor::zeros(&[d]),
            mlm_bias: Tensor::zeros(&[v]),
        }
    }

    /// Names in checkpoint order.
    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["embeddings.token".to_string(), "embeddings.position".into()];
        names.push("embeddings.norm.gamma".into());
        names.push("embeddings.norm.beta".into());
        for i in 0..self.layers.len() {
            names.extend(LAYER_NAMES.iter().map(|n| format!("layers.{i}.{n}")));
        }
        names.extend(
            ["mlm.dense.weight", "mlm.dense.bias", "mlm.norm.gamma", "mlm.norm.beta", "mlm.output.bias"]
                .iter()
                .map(|s| s.to_string()),
        );
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor<F>> {
        let mut out = vec![&self.tok_emb, &self.pos_emb, &self.emb_ln_g, &self.emb_ln_b];
        for l in &self.layers {
            out.extend(l.tensors());
        }
        out.extend([&self.mlm_w, &self.mlm_b, &self.mlm_ln_g, &self.mlm_ln_b, &self.mlm_bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb, &mut self.emb_ln_g, &mut self.emb_ln_b];
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out.extend([
            &mut self.mlm_w,
            &mut self.mlm_b,
            &mut self.mlm_ln_g,
            &mut self.mlm_ln_b,
            &mut self.mlm_bias,
        ]);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(F::zero());
        }
        z
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.names()
            .into_iter()
            .zip(self.tensors())
            .find(|(_, t)| !t.is_finite())
            .map(|(n, _)| n)
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: F) {
        for t in self.tensors_mut() {
            for x in &mut t.data {
                *x *= s;
            }
        }
    }

    /// Largest absolute element-wise difference over all tensors.
    pub fn max_abs_diff(&self, other: &Self) -> F {
        self.tensors()
            .into_iter()
            .zip(other.tensors())
            .flat_map(|(a, b)| a.data.iter().zip(&b.data).map(|(&x, &y)| (x - y).abs()))
            .fold(F::zero(), F::max)
    }

    /// Converts between precisions (used to run gradient checks in `f64`).
    pub fn cast<G: Real>(&self) -> EncoderParams<G> {
        let conv = |t: &Tensor<F>| Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|v| G::c(v.to_f64().unwrap_or(f64::NAN))).collect(),
        };
        EncoderParams {
            tok_emb: conv(&self.tok_emb),
            pos_emb: conv(&self.pos_emb),
            emb_ln_g: conv(&self.emb_ln_g),
            emb_ln_b: conv(&self.emb_ln_b),
            layers: self
                .layers
                .iter()
                .map(|l| {
                    let t = l.tensors();
                    LayerParams {
                        wq: conv(t[0]),
                        bq: conv(t[1]),
                        wk: conv(t[2]),
                        bk: conv(t[3]),
                        wv: conv(t[4]),
                        bv: conv(t[5]),
                        wo: conv(t[6]),
                        bo: conv(t[7]),
                        ln1_g: conv(t[8]),
                        ln1_b: conv(t[9]),
                        w1: conv(t[10]),
                        b1: conv(t[11]),
                        w2: conv(t[12]),
                        b2: conv(t[13]),
                        ln2_g: conv(t[14]),
                        ln2_b: conv(t[15]),
                    }
                })
                .collect(),
            mlm_w: conv(&self.mlm_w),
            mlm_b: conv(&self.mlm_b),
            mlm_ln_g: conv(&self.mlm_ln_g),
            mlm_ln_b: conv(&self.mlm_ln_b),
            mlm_bias: conv(&self.mlm_bias),
        }
    }

    /// Rebuilds parameters from named tensors, checking names and shapes.
    pub fn from_named(cfg: &EncoderConfig, named: Vec<(String, Tensor<F>)>) -> Result<Self> {
        let mut p = Self::zeros(cfg);
        let names = p.names();
        if named.len() != names.len() {
            return Err(Error::Shape(format!("expected {} tensors, found {}", names.len(), named.len())));
        }
        for ((expect, slot), (name, t)) in names.iter().zip(p.tensors_mut()).zip(named) {
            if *expect != name {
                return Err(Error::Shape(format!("expected tensor {expect}, found {name}")));
            }
            if slot.shape != t.shape {
                return Err(Error::Shape(format!("{name}: expected {:?}, found {:?}", slot.shape, t.shape)));
            }
            *slot = t;
        }
        Ok(p)
    }
}

/// Scaled-normal weights, zero biases, unit norm gains.
pub fn init_params<F: Real, R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Result<EncoderParams<F>> {
    cfg.validate()?;
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut p = EncoderParams::<F>::zeros(cfg);
    let names = p.names();
    for (name, t) in names.iter().zip(p.tensors_mut()) {
        if name.ends_with("gamma") {
            t.data.fill(F::one());
        } else if name.ends_with("weight") || name.starts_with("embeddings.token") || name.starts_with("embeddings.position") {
            for x in &mut t.data {
                *x = F::c(normal.sample(rng));
            }
        }
    }
    Ok(p)
}
