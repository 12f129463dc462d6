use ndarray::Array2;

use super::params::{ParamId, ParameterStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Gelu,
}

/// Affine map `x W + b` followed by an activation.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    in_dim: usize,
    out_dim: usize,
}

impl Dense {
    /// Fan-in scaled Gaussian weights, zero bias.
    pub fn new(store: &mut ParameterStore, name: &str, in_dim: usize, out_dim: usize, activation: Activation) -> Result<Self> {
        let weight = store.gaussian(&format!("{name}.w"), in_dim, out_dim, 1.0 / (in_dim as f64).sqrt())?;
        let bias = store.zeros(&format!("{name}.b"), 1, out_dim)?;
        Ok(Self {
            weight,
            bias,
            activation,
            in_dim,
            out_dim,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Result<Var> {
        let cols = tape.shape(x).1;
        if cols != self.in_dim {
            return Err(Error::Contract(format!("dense layer expects {} inputs, got {cols}", self.in_dim)));
        }
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let h = tape.matmul(x, w);
        let h = tape.add_row(h, b);
        Ok(match self.activation {
            Activation::Linear => h,
            Activation::Gelu => tape.gelu(h),
        })
    }
}

/// Row-wise forward pass of a single dense layer on plain arrays.
pub fn dense_forward(store: &ParameterStore, layer: &Dense, input: &Array2<f64>) -> Result<Array2<f64>> {
    let mut tape = Tape::new();
    let x = tape.input(input.clone());
    let y = layer.forward(&mut tape, store, x)?;
    Ok(tape.value(y).clone())
}

/// Dense stack with GELU between layers and a chosen final activation.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(store: &mut ParameterStore, name: &str, dims: &[usize], last: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Contract("an MLP needs input and output sizes".into()));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { last } else { Activation::Gelu };
                Dense::new(store, &format!("{name}.{i}"), dims[i], dims[i + 1], act)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim()).unwrap_or(0)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, mut x: Var) -> Result<Var> {
        for l in &self.layers {
            x = l.forward(tape, store, x)?;
        }
        Ok(x)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParameterStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(&format!("{name}.g"), Array2::ones((1, dim)))?,
            bias: store.zeros(&format!("{name}.b"), 1, dim)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Var {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub positional: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            model_dim: 64,
            heads: 4,
            layers: 4,
            ffn_dim: 128,
            positional: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::Contract(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Block {
    norm1: LayerNorm,
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
    norm2: LayerNorm,
    ff1: Dense,
    ff2: Dense,
}

/// Pre-norm transformer encoder that summarises a sequence through a
/// learned CLS token.
#[derive(Debug, Clone)]
pub struct AttentionEncoder {
    pub config: EncoderConfig,
    embed: Dense,
    cls: ParamId,
    blocks: Vec<Block>,
    final_norm: LayerNorm,
}

/// Sinusoidal position codes for positions `1..=len`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, dim), |(p, i)| {
        let pos = (p + 1) as f64;
        let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
        if i % 2 == 0 {
            (pos * freq).sin()
        } else {
            (pos * freq).cos()
        }
    })
}

impl AttentionEncoder {
    pub fn new(store: &mut ParameterStore, name: &str, input_dim: usize, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let embed = Dense::new(store, &format!("{name}.embed"), input_dim, d, Activation::Linear)?;
        let cls = store.gaussian(&format!("{name}.cls"), 1, d, 0.02)?;
        let blocks = (0..config.layers)
            .map(|i| {
                let p = format!("{name}.block{i}");
                Ok(Block {
                    norm1: LayerNorm::new(store, &format!("{p}.ln1"), d)?,
                    q: Dense::new(store, &format!("{p}.q"), d, d, Activation::Linear)?,
                    k: Dense::new(store, &format!("{p}.k"), d, d, Activation::Linear)?,
                    v: Dense::new(store, &format!("{p}.v"), d, d, Activation::Linear)?,
                    o: Dense::new(store, &format!("{p}.o"), d, d, Activation::Linear)?,
                    norm2: LayerNorm::new(store, &format!("{p}.ln2"), d)?,
                    ff1: Dense::new(store, &format!("{p}.ff1"), d, config.ffn_dim, Activation::Gelu)?,
                    ff2: Dense::new(store, &format!("{p}.ff2"), config.ffn_dim, d, Activation::Linear)?,
                })
            })
            .collect::<Result<_>>()?;
        let final_norm = LayerNorm::new(store, &format!("{name}.ln_out"), d)?;
        Ok(Self {
            config,
            embed,
            cls,
            blocks,
            final_norm,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.embed.in_dim()
    }

    /// `tokens` holds `batch` sequences of `seq_len` rows each; returns the
    /// `batch × model_dim` CLS outputs.
    pub fn encode(&self, tape: &mut Tape, store: &ParameterStore, tokens: Var, seq_len: usize) -> Result<Var> {
        let rows = tape.shape(tokens).0;
        if seq_len == 0 || rows == 0 {
            return Err(Error::Contract("attention encoder needs a non-empty sequence".into()));
        }
        if !rows.is_multiple_of(seq_len) {
            return Err(Error::Contract(format!("{rows} token rows are not a multiple of {seq_len}")));
        }
        let batch = rows / seq_len;
        let d = self.config.model_dim;
        let mut e = self.embed.forward(tape, store, tokens)?;
        if self.config.positional {
            let pe = sinusoidal_positions(seq_len, d);
            let tiled = ndarray::concatenate(ndarray::Axis(0), &vec![pe.view(); batch]).unwrap();
            let pe = tape.input(tiled);
            e = tape.add(e, pe);
        }
        let cls = tape.param(store, self.cls);
        let stacked = tape.concat_rows(&[cls, e]);
        let full = seq_len + 1;
        let order: Vec<usize> = (0..batch)
            .flat_map(|b| std::iter::once(0).chain((0..seq_len).map(move |i| 1 + b * seq_len + i)))
            .collect();
        let mut x = tape.gather_rows(stacked, &order);
        for blk in &self.blocks {
            let h = blk.norm1.forward(tape, store, x);
            let q = blk.q.forward(tape, store, h)?;
            let k = blk.k.forward(tape, store, h)?;
            let v = blk.v.forward(tape, store, h)?;
            let a = tape.attention(q, k, v, full, self.config.heads);
            let a = blk.o.forward(tape, store, a)?;
            x = tape.add(x, a);
            let h = blk.norm2.forward(tape, store, x);
            let f = blk.ff1.forward(tape, store, h)?;
            let f = blk.ff2.forward(tape, store, f)?;
            x = tape.add(x, f);
        }
        let cls_rows: Vec<usize> = (0..batch).map(|b| b * full).collect();
        let out = tape.gather_rows(x, &cls_rows);
        Ok(self.final_norm.forward(tape, store, out))
    }
}

/// CLS summary of a single sequence of equal-length vectors.
pub fn attention_encode(encoder: &AttentionEncoder, store: &ParameterStore, sequence: &[Vec<f64>]) -> Result<Vec<f64>> {
    if sequence.is_empty() {
        return Err(Error::Contract("attention encoder needs a non-empty sequence".into()));
    }
    let dim = encoder.input_dim();
    if sequence.iter().any(|v| v.len() != dim) {
        return Err(Error::Contract(format!("sequence vectors must have length {dim}")));
    }
    let flat: Vec<f64> = sequence.iter().flatten().copied().collect();
    let mut tape = Tape::new();
    let x = tape.input(Array2::from_shape_vec((sequence.len(), dim), flat).unwrap());
    let y = encoder.encode(&mut tape, store, x, sequence.len())?;
    Ok(tape.value(y).row(0).to_vec())
}
