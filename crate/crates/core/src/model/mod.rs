// SPDX-License-Identifier: MIT OR Apache-2.0

//! Transformer forward pass with per-head mask scalars.
//!
//! Each head output is multiplied by its mask before concatenation and the
//! output projection. Attention probabilities are recorded before the mask
//! is applied, so a trace does not depend on mask values.

pub mod archive;
pub mod config;
pub mod masks;
pub mod tokenizer;
pub mod weights;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

pub use config::{Activation, Architecture, ModelConfig};
pub use masks::HeadMaskGrid;
pub use weights::{LayerNormWeights, LayerWeights, Linear, LmHead, ModelWeights};

/// Post-softmax attention of every head: `layers[i][j]` is `[query, key]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace<T> {
    pub layers: Vec<Vec<Tensor<T>>>,
}

impl<T: Scalar> AttentionTrace<T> {
    pub fn head(&self, layer: usize, head: usize) -> &Tensor<T> {
        &self.layers[layer][head]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    /// Final-layer hidden states `[seq_len, hidden]`.
    pub hidden: Tensor<T>,
    pub attention: Option<AttentionTrace<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub weights: ModelWeights<T>,
}

impl Model<f32> {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (config, weights) = archive::load_archive(path)?;
        Ok(Self { config, weights })
    }
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, weights: ModelWeights<T>) -> Result<Self> {
        config.validate()?;
        // round-trip through the named form to run the completeness checks
        let weights = ModelWeights::from_named(&config, weights.to_named())?;
        Ok(Self { config, weights })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            weights: self.weights.cast(),
        }
    }

    pub fn is_causal(&self) -> bool {
        self.config.architecture == Architecture::Decoder
    }

    /// Forward pass without gradient recording.
    ///
    /// `masks = None` runs the plain multi-head attention with no mask
    /// multiplication at all.
    pub fn forward(
        &self,
        masks: Option<&HeadMaskGrid<T>>,
        ids: &[usize],
        capture_attention: bool,
    ) -> Result<ForwardOutput<T>> {
        let mut g = Graph::new(false);
        let mask_nodes = match masks {
            Some(m) => {
                m.check_matches(&self.config)?;
                Some(m.register(&mut g)?)
            }
            None => None,
        };
        let mut trace = capture_attention.then(|| AttentionTrace { layers: Vec::new() });
        let hidden = self.forward_graph(&mut g, mask_nodes.as_deref(), ids, trace.as_mut())?;
        Ok(ForwardOutput {
            hidden: g.value(hidden).clone(),
            attention: trace,
        })
    }

    /// Forward pass inside a caller-owned graph. `masks` holds one node per
    /// head, layer-major (see [`HeadMaskGrid::register`]). Returns the node of
    /// the final hidden states.
    pub fn forward_graph<'w>(
        &'w self,
        g: &mut Graph<'w, T>,
        masks: Option<&[NodeId]>,
        ids: &[usize],
        mut trace: Option<&mut AttentionTrace<T>>,
    ) -> Result<NodeId> {
        let cfg = &self.config;
        let n = ids.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty input sequence".into()));
        }
        if n > cfg.max_positions {
            return Err(Error::InvalidArgument(format!(
                "sequence of {n} tokens exceeds max_positions {}",
                cfg.max_positions
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= cfg.vocab_size) {
            return Err(Error::InvalidArgument(format!(
                "token id {bad} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        if let Some(m) = masks {
            if m.len() != cfg.num_head_slots() {
                return Err(Error::InvalidArgument(format!(
                    "{} mask nodes for {} heads",
                    m.len(),
                    cfg.num_head_slots()
                )));
            }
        }
        let w = &self.weights;
        let eps = T::lit(cfg.layer_norm_epsilon);

        g.set_scope(Some("embeddings".into()));
        let tok_table = g.weight(&w.token_embeddings)?;
        let tok = g.gather(tok_table, ids)?;
        let pos_table = g.weight(&w.position_embeddings)?;
        let positions: Vec<usize> = (0..n).collect();
        let pos = g.gather(pos_table, &positions)?;
        let mut x = g.add(tok, pos)?;
        if let Some(seg) = &w.segment_embeddings {
            let seg_table = g.weight(seg)?;
            let seg = g.gather(seg_table, &vec![0; n])?;
            x = g.add(x, seg)?;
        }
        if let Some(ln) = &w.embedding_ln {
            x = layer_norm(g, x, ln, eps)?;
        }

        for (i, layer) in w.layers.iter().enumerate() {
            let layer_masks = masks.map(|m| &m[i * cfg.num_heads..(i + 1) * cfg.num_heads]);
            let layer_trace = trace.as_deref_mut().map(|t| {
                t.layers.push(Vec::with_capacity(cfg.num_heads));
                t.layers.last_mut().unwrap()
            });
            x = match cfg.architecture {
                Architecture::Encoder => {
                    let attn = masked_multihead(g, cfg, i, layer, x, layer_masks, layer_trace)?;
                    g.set_scope(Some(format!("layer {}", i + 1)));
                    let sum = g.add(x, attn)?;
                    let h = layer_norm(g, sum, &layer.ln_attn, eps)?;
                    let f = feed_forward(g, cfg, layer, h)?;
                    let sum = g.add(h, f)?;
                    layer_norm(g, sum, &layer.ln_ffn, eps)?
                }
                Architecture::Decoder => {
                    g.set_scope(Some(format!("layer {}", i + 1)));
                    let h = layer_norm(g, x, &layer.ln_attn, eps)?;
                    let attn = masked_multihead(g, cfg, i, layer, h, layer_masks, layer_trace)?;
                    g.set_scope(Some(format!("layer {}", i + 1)));
                    let x = g.add(x, attn)?;
                    let h = layer_norm(g, x, &layer.ln_ffn, eps)?;
                    let f = feed_forward(g, cfg, layer, h)?;
                    g.add(x, f)?
                }
            };
        }
        if let Some(ln) = &w.final_ln {
            g.set_scope(Some("final layer norm".into()));
            x = layer_norm(g, x, ln, eps)?;
        }
        g.set_scope(None);
        Ok(x)
    }

    /// Vocabulary logits for one final hidden state.
    pub fn lm_logits(&self, hidden: &[T]) -> Result<Vec<T>> {
        let head = self
            .weights
            .lm_head
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model has no LM head weights".into()))?;
        let eps = T::lit(self.config.layer_norm_epsilon);
        let mut h = Tensor::matrix(1, hidden.len(), hidden.to_vec())?;
        if let Some((dense, ln)) = &head.transform {
            h = tensor::add(&tensor::matmul(&h, &dense.weight)?, &dense.bias)?;
            h = match self.config.activation {
                Activation::GeluTanh => h.map(tensor::gelu_tanh),
                Activation::GeluExact => h.map(tensor::gelu_erf),
            };
            h = tensor::layer_norm(&h, &ln.gain, &ln.bias, eps)?;
        }
        let logits = tensor::add(&tensor::matmul(&h, &head.decoder.weight)?, &head.decoder.bias)?;
        if !logits.all_finite() {
            return Err(Error::NonFinite {
                op: "lm_head",
                location: None,
            });
        }
        Ok(logits.into_data())
    }
}

fn layer_norm<'w, T: Scalar>(
    g: &mut Graph<'w, T>,
    x: NodeId,
    ln: &'w LayerNormWeights<T>,
    eps: T,
) -> Result<NodeId> {
    let gain = g.weight(&ln.gain)?;
    let bias = g.weight(&ln.bias)?;
    g.layer_norm(x, gain, bias, eps)
}

fn linear<'w, T: Scalar>(g: &mut Graph<'w, T>, x: NodeId, lin: &'w Linear<T>) -> Result<NodeId> {
    let w = g.weight(&lin.weight)?;
    let b = g.weight(&lin.bias)?;
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

fn feed_forward<'w, T: Scalar>(
    g: &mut Graph<'w, T>,
    cfg: &ModelConfig,
    layer: &'w LayerWeights<T>,
    x: NodeId,
) -> Result<NodeId> {
    let h = linear(g, x, &layer.ffn_in)?;
    let h = g.gelu(h, cfg.activation == Activation::GeluExact)?;
    linear(g, h, &layer.ffn_out)
}

/// Multi-head attention of layer `layer_index` with optional per-head mask
/// scalars: `Concat(m_j * head_j) W_O + b_O`.
///
/// With `masks = None` no multiplication is performed. Post-softmax
/// attention of each head is pushed onto `trace` when given.
pub fn masked_multihead<'w, T: Scalar>(
    g: &mut Graph<'w, T>,
    cfg: &ModelConfig,
    layer_index: usize,
    layer: &'w LayerWeights<T>,
    x: NodeId,
    masks: Option<&[NodeId]>,
    mut trace: Option<&mut Vec<Tensor<T>>>,
) -> Result<NodeId> {
    let d = cfg.hidden_size;
    let xs = g.value(x).shape().to_vec();
    if xs.len() != 2 || xs[1] != d {
        return Err(Error::InvalidShape {
            op: "masked_multihead",
            message: format!("layer input must be [seq_len, {d}], got {xs:?}"),
        });
    }
    if let Some(m) = masks {
        if m.len() != cfg.num_heads {
            return Err(Error::InvalidArgument(format!(
                "{} masks for {} heads",
                m.len(),
                cfg.num_heads
            )));
        }
    }
    g.set_scope(Some(format!("layer {} attention", layer_index + 1)));
    let q = linear(g, x, &layer.query)?;
    let k = linear(g, x, &layer.key)?;
    let v = linear(g, x, &layer.value)?;
    let dh = cfg.head_dim();
    let inv_sqrt = T::one() / T::from_usize(dh).unwrap().sqrt();
    let causal = cfg.architecture == Architecture::Decoder;

    let mut heads = Vec::with_capacity(cfg.num_heads);
    for j in 0..cfg.num_heads {
        g.set_scope(Some(format!("layer {} head {}", layer_index + 1, j + 1)));
        let qj = g.slice_last(q, j * dh, dh)?;
        let kj = g.slice_last(k, j * dh, dh)?;
        let vj = g.slice_last(v, j * dh, dh)?;
        let kt = g.transpose(kj)?;
        let scores = g.matmul(qj, kt)?;
        let scores = g.mul_const(scores, inv_sqrt)?;
        let probs = if causal {
            g.causal_softmax(scores)?
        } else {
            g.softmax(scores)?
        };
        if let Some(t) = trace.as_deref_mut() {
            t.push(g.value(probs).clone());
        }
        let mut head = g.matmul(probs, vj)?;
        if let Some(m) = masks {
            head = g.scale(head, m[j])?;
        }
        heads.push(head);
    }
    g.set_scope(Some(format!("layer {} attention output", layer_index + 1)));
    let cat = g.concat(&heads)?;
    linear(g, cat, &layer.output)
}
