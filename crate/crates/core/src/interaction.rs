//! Multi-hop gated attention over passage words, followed by attention
//! pooling into a single passage vector.

use crate::autograd::{Graph, Var};
use crate::dropout::{maybe_apply, InputDropout};
use crate::encoders::{embed, BiGruParams, EmbeddingTable};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct InteractionParams {
    /// `l x d`, maps embeddings to the bidirectional state width.
    pub input_projection: ParamId,
    /// One passage BiGRU per hop.
    pub hops: Vec<BiGruParams>,
    /// `l x l` bilinear form used by the pooling attention.
    pub pool: ParamId,
}

impl InteractionParams {
    pub fn register(
        store: &mut ParamStore,
        embedding_dim: usize,
        hidden_dim: usize,
        hops: usize,
        init: &mut dyn FnMut(&[usize]) -> Tensor,
    ) -> Result<Self> {
        let l = 2 * hidden_dim;
        let input_projection = store.insert("interaction.projection", init(&[l, embedding_dim]))?;
        let hops = (1..=hops)
            .map(|t| BiGruParams::register(store, &format!("passage.hop{t}"), l, hidden_dim, init))
            .collect::<Result<Vec<_>>>()?;
        let pool = store.insert("interaction.pool", init(&[l, l]))?;
        Ok(Self { input_projection, hops, pool })
    }

    pub fn from_store(store: &ParamStore, hops: usize) -> Result<Self> {
        Ok(Self {
            input_projection: store.require("interaction.projection")?,
            hops: (1..=hops)
                .map(|t| BiGruParams::from_store(store, &format!("passage.hop{t}")))
                .collect::<Result<Vec<_>>>()?,
            pool: store.require("interaction.pool")?,
        })
    }
}

pub struct HopOutput {
    /// Gated passage rows, `M x l`.
    pub gated: Var,
    /// Question-word attention for every passage word, `M x N`; rows sum to 1.
    pub alpha: Var,
}

/// `d~_i = d_i ⊙ (Qᵀ softmax(Q d_i))` for every passage row `d_i`, with the
/// question words as the rows of `q`.
pub fn gated_attention_hop(g: &mut Graph, d: Var, q: Var) -> Result<HopOutput> {
    let (ds, qs) = (g.shape(d).to_vec(), g.shape(q).to_vec());
    if ds.len() != 2 || qs.len() != 2 || ds[1] != qs[1] {
        return Err(Error::Shape { op: "gated_attention_hop", shapes: vec![ds, qs] });
    }
    let qt = g.transpose(q)?;
    let scores = g.matmul(d, qt)?;
    let alpha = g.softmax(scores)?;
    let q_tilde = g.matmul(alpha, q)?;
    let gated = g.mul(d, q_tilde)?;
    Ok(HopOutput { gated, alpha })
}

/// Passage BiGRU of hop `t` (1-based) over the gated rows.
pub fn hop_recurrence(g: &mut Graph, params: &InteractionParams, t: usize, gated: Var) -> Result<Var> {
    let Some(cell) = t.checked_sub(1).and_then(|i| params.hops.get(i)) else {
        return Err(Error::OutOfRange(format!("hop index {t} outside 1..={}", params.hops.len())));
    };
    Ok(cell.encode(g, gated)?.matrix)
}

pub struct Pooled {
    pub x: Var,
    pub weights: Var,
}

/// `m = softmax(D W h_q)`, `x = Σ m_i D_i`.
pub fn attention_pool(g: &mut Graph, d: Var, h_q: Var, w: Var) -> Result<Pooled> {
    let u = g.matvec(w, h_q)?;
    let scores = g.matvec(d, u)?;
    let weights = g.softmax(scores)?;
    let x = g.weighted_sum(d, weights)?;
    Ok(Pooled { x, weights })
}

pub struct InteractionOutput {
    pub x: Var,
    pub d_final: Var,
    pub alphas: Vec<Var>,
    pub pool_weights: Var,
}

/// Full interaction stack. `q` holds the question BiGRU states as rows and
/// `h_q` is the final question state.
pub fn run_interaction(
    g: &mut Graph,
    params: &InteractionParams,
    table: &EmbeddingTable,
    passage: &[usize],
    q: Var,
    h_q: Var,
    mut dropout: Option<&mut InputDropout>,
) -> Result<InteractionOutput> {
    if params.hops.is_empty() {
        return Err(Error::InvalidArgument("interaction needs at least one hop".into()));
    }
    if passage.is_empty() {
        return Err(Error::InvalidArgument("empty passage".into()));
    }
    let e = embed(g, table, passage)?;
    let proj = g.param(params.input_projection);
    let proj_t = g.transpose(proj)?;
    let mut d = g.matmul(e, proj_t)?;
    let mut alphas = Vec::with_capacity(params.hops.len());
    for t in 1..=params.hops.len() {
        let hop = gated_attention_hop(g, d, q)?;
        alphas.push(hop.alpha);
        let input = maybe_apply(&mut dropout, g, hop.gated)?;
        d = hop_recurrence(g, params, t, input)?;
    }
    let w = g.param(params.pool);
    let pooled = attention_pool(g, d, h_q, w)?;
    Ok(InteractionOutput { x: pooled.x, d_final: d, alphas, pool_weights: pooled.weights })
}
