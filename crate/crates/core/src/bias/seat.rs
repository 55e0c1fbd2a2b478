// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::autodiff::{Graph, NodeId};
use crate::bias::bank::EmbeddingBank;
use crate::bias::wordsets::WordSets;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

/// `s(w) = mean_a cos(w, a) - mean_b cos(w, b)` as graph nodes.
pub(crate) fn assoc_node<T: Scalar>(g: &mut Graph<'_, T>, w: NodeId, a: &[NodeId], b: &[NodeId]) -> Result<NodeId> {
    let side = |g: &mut Graph<'_, T>, set: &[NodeId]| -> Result<NodeId> {
        let cos = set.iter().map(|&v| g.cosine(w, v)).collect::<Result<Vec<_>>>()?;
        let stacked = g.stack(&cos)?;
        g.mean(stacked, 0)
    };
    let sa = side(g, a)?;
    let sb = side(g, b)?;
    g.sub(sa, sb)
}

/// `|mean_x s - mean_y s| / std_{x ∪ y} s` as a graph node, population std.
pub(crate) fn seat_node<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: &[NodeId],
    y: &[NodeId],
    a: &[NodeId],
    b: &[NodeId],
) -> Result<NodeId> {
    if x.is_empty() || y.is_empty() || a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("SEAT needs non-empty X, Y, A and B".into()));
    }
    let sx = x.iter().map(|&w| assoc_node(g, w, a, b)).collect::<Result<Vec<_>>>()?;
    let sy = y.iter().map(|&w| assoc_node(g, w, a, b)).collect::<Result<Vec<_>>>()?;
    let vx = g.stack(&sx)?;
    let mx = g.mean(vx, 0)?;
    let vy = g.stack(&sy)?;
    let my = g.mean(vy, 0)?;
    let diff = g.sub(mx, my)?;
    let num = g.abs(diff)?;
    let all: Vec<NodeId> = sx.iter().chain(&sy).copied().collect();
    let s = g.stack(&all)?;
    let sd = g.std(s)?;
    if g.value(sd).item() == T::zero() {
        return Err(Error::DegenerateSeat);
    }
    g.div(num, sd)
}

/// Association of one embedding with attribute sets A and B.
pub fn assoc_s<T: Scalar>(w: &[T], a: &[Vec<T>], b: &[Vec<T>]) -> Result<T> {
    let mut g = Graph::new(false);
    let wn = g.constant(Tensor::vector(w.to_vec()))?;
    let an = a.iter().map(|v| g.constant(Tensor::vector(v.clone()))).collect::<Result<Vec<_>>>()?;
    let bn = b.iter().map(|v| g.constant(Tensor::vector(v.clone()))).collect::<Result<Vec<_>>>()?;
    let s = assoc_node(&mut g, wn, &an, &bn)?;
    Ok(g.value(s).item())
}

/// |SEAT| effect size of explicit embeddings.
pub fn seat_from_embeddings<T: Scalar>(x: &[Vec<T>], y: &[Vec<T>], a: &[Vec<T>], b: &[Vec<T>]) -> Result<T> {
    let mut g = Graph::new(false);
    let mut nodes = |set: &[Vec<T>]| -> Result<Vec<NodeId>> {
        set.iter().map(|v| g.constant(Tensor::vector(v.clone()))).collect()
    };
    let (xn, yn, an, bn) = (nodes(x)?, nodes(y)?, nodes(a)?, nodes(b)?);
    let loss = seat_node(&mut g, &xn, &yn, &an, &bn)?;
    Ok(g.value(loss).item())
}

/// |SEAT| of the word sets using the bank's mean embeddings. Zero-norm
/// embeddings are reported by word.
pub fn seat_abs<T: Scalar>(sets: &WordSets, bank: &EmbeddingBank<T>) -> Result<T> {
    let fetch = |words: &[String]| -> Result<Vec<Vec<T>>> {
        words
            .iter()
            .map(|w| {
                let e = bank.embedding(w)?;
                if tensor::l2_norm(e) == T::zero() {
                    return Err(Error::ZeroNorm(Some(w.clone())));
                }
                Ok(e.to_vec())
            })
            .collect()
    };
    seat_from_embeddings(&fetch(&sets.x)?, &fetch(&sets.y)?, &fetch(&sets.a)?, &fetch(&sets.b)?)
}
