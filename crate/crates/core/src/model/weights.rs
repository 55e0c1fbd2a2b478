// SPDX-License-Identifier: MIT OR Apache-2.0

//! Canonical weight layout.
//!
//! All projection matrices are stored `[in, out]` so a layer computes
//! `x W + b` on row-major activations. Tensor names (layer index `i` is
//! zero-based):
//!
//! | name | shape | architecture |
//! |------|-------|--------------|
//! | `embeddings.token` | `[vocab, d]` | both |
//! | `embeddings.position` | `[max_positions, d]` | both |
//! | `embeddings.segment` | `[type_vocab, d]` | encoder |
//! | `embeddings.ln.{gain,bias}` | `[d]` | encoder |
//! | `layers.i.attn.{q,k,v,out}.weight` | `[d, d]` | both |
//! | `layers.i.attn.{q,k,v,out}.bias` | `[d]` | both |
//! | `layers.i.ln_attn.{gain,bias}` | `[d]` | both |
//! | `layers.i.ffn.in.{weight,bias}` | `[d, ffn]`, `[ffn]` | both |
//! | `layers.i.ffn.out.{weight,bias}` | `[ffn, d]`, `[d]` | both |
//! | `layers.i.ln_ffn.{gain,bias}` | `[d]` | both |
//! | `final_ln.{gain,bias}` | `[d]` | decoder |
//! | `lm_head.transform.{weight,bias}` | `[d, d]`, `[d]` | encoder, optional |
//! | `lm_head.transform_ln.{gain,bias}` | `[d]` | encoder, optional |
//! | `lm_head.decoder.{weight,bias}` | `[d, vocab]`, `[vocab]` | both, optional |
//!
//! Encoders apply `ln_attn`/`ln_ffn` after each residual sum; decoders apply
//! them to the block input before attention and feed-forward.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::config::{Architecture, ModelConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormWeights<T> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
    pub ln_attn: LayerNormWeights<T>,
    pub ffn_in: Linear<T>,
    pub ffn_out: Linear<T>,
    pub ln_ffn: LayerNormWeights<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmHead<T> {
    /// Dense + activation + layer norm applied before the vocabulary
    /// projection (encoders only).
    pub transform: Option<(Linear<T>, LayerNormWeights<T>)>,
    pub decoder: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    pub token_embeddings: Tensor<T>,
    pub position_embeddings: Tensor<T>,
    pub segment_embeddings: Option<Tensor<T>>,
    pub embedding_ln: Option<LayerNormWeights<T>>,
    pub layers: Vec<LayerWeights<T>>,
    pub final_ln: Option<LayerNormWeights<T>>,
    pub lm_head: Option<LmHead<T>>,
}

/// Name, expected shape and whether the tensor belongs to the optional
/// LM head group.
pub fn expected_tensors(config: &ModelConfig) -> Vec<(String, Vec<usize>, bool)> {
    let d = config.hidden_size;
    let f = config.ffn_size;
    let v = config.vocab_size;
    let mut out = vec![
        ("embeddings.token".to_string(), vec![v, d], false),
        ("embeddings.position".to_string(), vec![config.max_positions, d], false),
    ];
    let encoder = config.architecture == Architecture::Encoder;
    if encoder {
        out.push(("embeddings.segment".into(), vec![config.type_vocab_size, d], false));
        out.push(("embeddings.ln.gain".into(), vec![d], false));
        out.push(("embeddings.ln.bias".into(), vec![d], false));
    }
    for i in 0..config.num_layers {
        for p in ["q", "k", "v", "out"] {
            out.push((format!("layers.{i}.attn.{p}.weight"), vec![d, d], false));
            out.push((format!("layers.{i}.attn.{p}.bias"), vec![d], false));
        }
        out.push((format!("layers.{i}.ln_attn.gain"), vec![d], false));
        out.push((format!("layers.{i}.ln_attn.bias"), vec![d], false));
        out.push((format!("layers.{i}.ffn.in.weight"), vec![d, f], false));
        out.push((format!("layers.{i}.ffn.in.bias"), vec![f], false));
        out.push((format!("layers.{i}.ffn.out.weight"), vec![f, d], false));
        out.push((format!("layers.{i}.ffn.out.bias"), vec![d], false));
        out.push((format!("layers.{i}.ln_ffn.gain"), vec![d], false));
        out.push((format!("layers.{i}.ln_ffn.bias"), vec![d], false));
    }
    if !encoder {
        out.push(("final_ln.gain".into(), vec![d], false));
        out.push(("final_ln.bias".into(), vec![d], false));
    }
    if encoder {
        out.push(("lm_head.transform.weight".into(), vec![d, d], true));
        out.push(("lm_head.transform.bias".into(), vec![d], true));
        out.push(("lm_head.transform_ln.gain".into(), vec![d], true));
        out.push(("lm_head.transform_ln.bias".into(), vec![d], true));
    }
    out.push(("lm_head.decoder.weight".into(), vec![d, v], true));
    out.push(("lm_head.decoder.bias".into(), vec![v], true));
    out
}

type Named<T> = BTreeMap<String, Tensor<T>>;

fn take<T>(named: &mut Named<T>, name: String) -> Tensor<T> {
    named.remove(&name).expect("presence checked before assembly")
}

fn take_ln<T>(named: &mut Named<T>, prefix: &str) -> LayerNormWeights<T> {
    LayerNormWeights {
        gain: take(named, format!("{prefix}.gain")),
        bias: take(named, format!("{prefix}.bias")),
    }
}

fn take_linear<T>(named: &mut Named<T>, prefix: &str) -> Linear<T> {
    Linear {
        weight: take(named, format!("{prefix}.weight")),
        bias: take(named, format!("{prefix}.bias")),
    }
}

impl<T: Scalar> ModelWeights<T> {
    /// Builds weights from named tensors, checking completeness and shapes.
    pub fn from_named(config: &ModelConfig, mut named: Named<T>) -> Result<Self> {
        config.validate()?;
        let expected = expected_tensors(config);
        let known: std::collections::BTreeSet<&str> = expected.iter().map(|(n, _, _)| n.as_str()).collect();
        if let Some(unknown) = named.keys().find(|k| !known.contains(k.as_str())) {
            return Err(Error::Config(format!("unknown tensor `{unknown}`")));
        }
        let lm_present = expected.iter().any(|(n, _, opt)| *opt && named.contains_key(n));
        for (name, shape, optional) in &expected {
            match named.get(name) {
                None if *optional && !lm_present => {}
                None => return Err(Error::Config(format!("missing tensor `{name}`"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::Config(format!(
                        "tensor `{name}` has shape {:?}, config implies {shape:?}",
                        t.shape()
                    )))
                }
                Some(t) if !t.all_finite() => {
                    return Err(Error::Config(format!("tensor `{name}` holds non-finite values")))
                }
                Some(_) => {}
            }
        }

        let encoder = config.architecture == Architecture::Encoder;
        let named = &mut named;
        let token_embeddings = take(named, "embeddings.token".into());
        let position_embeddings = take(named, "embeddings.position".into());
        let segment_embeddings = encoder.then(|| take(named, "embeddings.segment".into()));
        let embedding_ln = encoder.then(|| take_ln(named, "embeddings.ln"));
        let mut layers = Vec::with_capacity(config.num_layers);
        for i in 0..config.num_layers {
            layers.push(LayerWeights {
                query: take_linear(named, &format!("layers.{i}.attn.q")),
                key: take_linear(named, &format!("layers.{i}.attn.k")),
                value: take_linear(named, &format!("layers.{i}.attn.v")),
                output: take_linear(named, &format!("layers.{i}.attn.out")),
                ln_attn: take_ln(named, &format!("layers.{i}.ln_attn")),
                ffn_in: take_linear(named, &format!("layers.{i}.ffn.in")),
                ffn_out: take_linear(named, &format!("layers.{i}.ffn.out")),
                ln_ffn: take_ln(named, &format!("layers.{i}.ln_ffn")),
            });
        }
        let final_ln = (!encoder).then(|| take_ln(named, "final_ln"));
        let lm_head = lm_present.then(|| LmHead {
            transform: encoder.then(|| {
                (
                    take_linear(named, "lm_head.transform"),
                    take_ln(named, "lm_head.transform_ln"),
                )
            }),
            decoder: take_linear(named, "lm_head.decoder"),
        });
        Ok(Self {
            token_embeddings,
            position_embeddings,
            segment_embeddings,
            embedding_ln,
            layers,
            final_ln,
            lm_head,
        })
    }

    /// Inverse of [`from_named`](Self::from_named).
    pub fn to_named(&self) -> Named<T> {
        let mut out = BTreeMap::new();
        let mut put = |name: String, t: &Tensor<T>| {
            out.insert(name, t.clone());
        };
        let put_ln = |put: &mut dyn FnMut(String, &Tensor<T>), prefix: &str, ln: &LayerNormWeights<T>| {
            put(format!("{prefix}.gain"), &ln.gain);
            put(format!("{prefix}.bias"), &ln.bias);
        };
        let put_lin = |put: &mut dyn FnMut(String, &Tensor<T>), prefix: &str, l: &Linear<T>| {
            put(format!("{prefix}.weight"), &l.weight);
            put(format!("{prefix}.bias"), &l.bias);
        };
        put("embeddings.token".into(), &self.token_embeddings);
        put("embeddings.position".into(), &self.position_embeddings);
        if let Some(s) = &self.segment_embeddings {
            put("embeddings.segment".into(), s);
        }
        if let Some(ln) = &self.embedding_ln {
            put_ln(&mut put, "embeddings.ln", ln);
        }
        for (i, layer) in self.layers.iter().enumerate() {
            put_lin(&mut put, &format!("layers.{i}.attn.q"), &layer.query);
            put_lin(&mut put, &format!("layers.{i}.attn.k"), &layer.key);
            put_lin(&mut put, &format!("layers.{i}.attn.v"), &layer.value);
            put_lin(&mut put, &format!("layers.{i}.attn.out"), &layer.output);
            put_ln(&mut put, &format!("layers.{i}.ln_attn"), &layer.ln_attn);
            put_lin(&mut put, &format!("layers.{i}.ffn.in"), &layer.ffn_in);
            put_lin(&mut put, &format!("layers.{i}.ffn.out"), &layer.ffn_out);
            put_ln(&mut put, &format!("layers.{i}.ln_ffn"), &layer.ln_ffn);
        }
        if let Some(ln) = &self.final_ln {
            put_ln(&mut put, "final_ln", ln);
        }
        if let Some(head) = &self.lm_head {
            if let Some((dense, ln)) = &head.transform {
                put_lin(&mut put, "lm_head.transform", dense);
                put_ln(&mut put, "lm_head.transform_ln", ln);
            }
            put_lin(&mut put, "lm_head.decoder", &head.decoder);
        }
        out
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        let ln = |l: &LayerNormWeights<T>| LayerNormWeights {
            gain: l.gain.cast(),
            bias: l.bias.cast(),
        };
        let lin = |l: &Linear<T>| Linear {
            weight: l.weight.cast(),
            bias: l.bias.cast(),
        };
        ModelWeights {
            token_embeddings: self.token_embeddings.cast(),
            position_embeddings: self.position_embeddings.cast(),
            segment_embeddings: self.segment_embeddings.as_ref().map(Tensor::cast),
            embedding_ln: self.embedding_ln.as_ref().map(ln),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    query: lin(&l.query),
                    key: lin(&l.key),
                    value: lin(&l.value),
                    output: lin(&l.output),
                    ln_attn: ln(&l.ln_attn),
                    ffn_in: lin(&l.ffn_in),
                    ffn_out: lin(&l.ffn_out),
                    ln_ffn: ln(&l.ln_ffn),
                })
                .collect(),
            final_ln: self.final_ln.as_ref().map(ln),
            lm_head: self.lm_head.as_ref().map(|h| LmHead {
                transform: h.transform.as_ref().map(|(d, l)| (lin(d), ln(l))),
                decoder: lin(&h.decoder),
            }),
        }
    }
}
