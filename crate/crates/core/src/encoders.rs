//! Token embeddings and GRU / bidirectional GRU sequence encoders.
//!
//! GRU convention:
//!
//! ```text
//! z  = sigmoid(W_z x + U_z h + b_z)
//! r  = sigmoid(W_r x + U_r h + b_r)
//! h~ = tanh(W_h x + U_h (r * h) + b_h)
//! h' = (1 - z) * h + z * h~
//! ```
//!
//! Bidirectional states are laid out `[backward, forward]`, and the final
//! bidirectional state is `[backward state at the first token, forward state
//! at the last token]`.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Handle to an embedding matrix in a [`ParamStore`].
#[derive(Clone, Copy, Debug)]
pub struct EmbeddingTable {
    pub id: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn register(store: &mut ParamStore, name: &str, mut matrix: Tensor) -> Result<Self> {
        if matrix.rank() != 2 || matrix.rows() < 2 {
            return Err(Error::InvalidArgument(format!(
                "embedding matrix must have at least the two reserved rows, got shape {:?}",
                matrix.shape()
            )));
        }
        let (vocab_size, dim) = (matrix.rows(), matrix.cols());
        matrix.data_mut()[PAD * dim..(PAD + 1) * dim].fill(0.0);
        let id = store.insert(name, matrix)?;
        Ok(Self { id, vocab_size, dim })
    }

    pub fn from_store(store: &ParamStore, name: &str) -> Result<Self> {
        let id = store.require(name)?;
        let t = store.get(id);
        Ok(Self { id, vocab_size: t.rows(), dim: t.cols() })
    }
}

/// Looks up `ids`, returning a `len x dim` matrix node.
pub fn embed(g: &mut Graph, table: &EmbeddingTable, ids: &[usize]) -> Result<Var> {
    if let Some(pos) = ids.iter().position(|&id| id >= table.vocab_size) {
        return Err(Error::OutOfRange(format!(
            "token id {} at position {pos} is outside the vocabulary of {}",
            ids[pos], table.vocab_size
        )));
    }
    let t = g.param(table.id);
    g.gather(t, ids, Some(PAD))
}

#[derive(Clone, Copy, Debug)]
pub struct GruCellParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
}

impl GruCellParams {
    /// Registers a cell under `prefix`. `init` produces weight matrices from a
    /// shape; biases start at zero.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        init: &mut dyn FnMut(&[usize]) -> Tensor,
    ) -> Result<Self> {
        let mut w = |store: &mut ParamStore, name: &str, cols: usize| {
            store.insert(format!("{prefix}.{name}"), init(&[hidden_dim, cols]))
        };
        let w_z = w(store, "w_z", input_dim)?;
        let u_z = w(store, "u_z", hidden_dim)?;
        let b_z = store.insert(format!("{prefix}.b_z"), Tensor::zeros(&[hidden_dim]))?;
        let w_r = w(store, "w_r", input_dim)?;
        let u_r = w(store, "u_r", hidden_dim)?;
        let b_r = store.insert(format!("{prefix}.b_r"), Tensor::zeros(&[hidden_dim]))?;
        let w_h = w(store, "w_h", input_dim)?;
        let u_h = w(store, "u_h", hidden_dim)?;
        let b_h = store.insert(format!("{prefix}.b_h"), Tensor::zeros(&[hidden_dim]))?;
        Ok(Self { input_dim, hidden_dim, w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h })
    }

    pub fn from_store(store: &ParamStore, prefix: &str) -> Result<Self> {
        let id = |n: &str| store.require(&format!("{prefix}.{n}"));
        let w_z = id("w_z")?;
        let (hidden_dim, input_dim) = (store.get(w_z).rows(), store.get(w_z).cols());
        let cell = Self {
            input_dim,
            hidden_dim,
            w_z,
            u_z: id("u_z")?,
            b_z: id("b_z")?,
            w_r: id("w_r")?,
            u_r: id("u_r")?,
            b_r: id("b_r")?,
            w_h: id("w_h")?,
            u_h: id("u_h")?,
            b_h: id("b_h")?,
        };
        cell.validate(store, prefix)?;
        Ok(cell)
    }

    fn validate(&self, store: &ParamStore, prefix: &str) -> Result<()> {
        let (h, i) = (self.hidden_dim, self.input_dim);
        let expect = [
            (self.w_z, vec![h, i]),
            (self.w_r, vec![h, i]),
            (self.w_h, vec![h, i]),
            (self.u_z, vec![h, h]),
            (self.u_r, vec![h, h]),
            (self.u_h, vec![h, h]),
            (self.b_z, vec![h]),
            (self.b_r, vec![h]),
            (self.b_h, vec![h]),
        ];
        for (id, shape) in expect {
            if store.get(id).shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{prefix}: parameter {} has shape {:?}, expected {shape:?}",
                    store.name(id),
                    store.get(id).shape()
                )));
            }
        }
        Ok(())
    }
}

/// Input-side pre-activations `W x` for the three gates.
struct GateInputs {
    z: Var,
    r: Var,
    h: Var,
}

fn check_vec(g: &Graph, v: Var, len: usize, op: &'static str, other: Var) -> Result<()> {
    if g.shape(v) != [len] {
        return Err(Error::Shape { op, shapes: vec![g.shape(v).to_vec(), g.shape(other).to_vec()] });
    }
    Ok(())
}

fn recur(g: &mut Graph, p: &GruCellParams, h_prev: Var, x: GateInputs) -> Result<Var> {
    let (u_z, b_z, u_r, b_r, u_h, b_h) =
        (g.param(p.u_z), g.param(p.b_z), g.param(p.u_r), g.param(p.b_r), g.param(p.u_h), g.param(p.b_h));

    let uz = g.matvec(u_z, h_prev)?;
    let z = g.add(x.z, uz)?;
    let z = g.add(z, b_z)?;
    let z = g.sigmoid(z)?;

    let ur = g.matvec(u_r, h_prev)?;
    let r = g.add(x.r, ur)?;
    let r = g.add(r, b_r)?;
    let r = g.sigmoid(r)?;

    let rh = g.mul(r, h_prev)?;
    let uh = g.matvec(u_h, rh)?;
    let cand = g.add(x.h, uh)?;
    let cand = g.add(cand, b_h)?;
    let cand = g.tanh(cand)?;

    // (1 - z) * h + z * h~  ==  h + z * (h~ - h)
    let delta = g.sub(cand, h_prev)?;
    let step = g.mul(z, delta)?;
    g.add(h_prev, step)
}

/// One GRU update.
pub fn gru_step(g: &mut Graph, p: &GruCellParams, h_prev: Var, x: Var) -> Result<Var> {
    check_vec(g, x, p.input_dim, "gru_step", h_prev)?;
    check_vec(g, h_prev, p.hidden_dim, "gru_step", x)?;
    let (w_z, w_r, w_h) = (g.param(p.w_z), g.param(p.w_r), g.param(p.w_h));
    let inputs = GateInputs { z: g.matvec(w_z, x)?, r: g.matvec(w_r, x)?, h: g.matvec(w_h, x)? };
    recur(g, p, h_prev, inputs)
}

/// Runs a unidirectional GRU over the rows of `seq` from a zero state,
/// in reverse row order when `reverse` is set. States are returned in
/// sequence position order either way.
pub fn gru_encode(g: &mut Graph, p: &GruCellParams, seq: Var, reverse: bool) -> Result<Vec<Var>> {
    let shape = g.shape(seq).to_vec();
    if shape.len() != 2 || shape[1] != p.input_dim {
        return Err(Error::Shape { op: "gru_encode", shapes: vec![shape, vec![p.input_dim]] });
    }
    let len = shape[0];
    if len == 0 {
        return Err(Error::InvalidArgument("cannot encode an empty sequence".into()));
    }
    // Input projections for all steps at once: seq · Wᵀ.
    let project = |g: &mut Graph, w: ParamId| -> Result<Var> {
        let w = g.param(w);
        let wt = g.transpose(w)?;
        g.matmul(seq, wt)
    };
    let xz = project(g, p.w_z)?;
    let xr = project(g, p.w_r)?;
    let xh = project(g, p.w_h)?;

    let mut h = g.constant(Tensor::zeros(&[p.hidden_dim]))?;
    let mut states = vec![h; len];
    let order: Box<dyn Iterator<Item = usize>> = if reverse { Box::new((0..len).rev()) } else { Box::new(0..len) };
    for i in order {
        let inputs = GateInputs { z: g.select_row(xz, i)?, r: g.select_row(xr, i)?, h: g.select_row(xh, i)? };
        h = recur(g, p, h, inputs)?;
        states[i] = h;
    }
    Ok(states)
}

#[derive(Clone, Debug)]
pub struct BiGruOutput {
    /// Per-position `[backward, forward]` states.
    pub states: Vec<Var>,
    /// `states` stacked as a `len x 2·hidden` matrix.
    pub matrix: Var,
    /// `[backward state at position 0, forward state at the last position]`.
    pub final_state: Var,
}

pub fn bigru_encode(g: &mut Graph, fwd: &GruCellParams, bwd: &GruCellParams, seq: Var) -> Result<BiGruOutput> {
    if fwd.hidden_dim != bwd.hidden_dim || fwd.input_dim != bwd.input_dim {
        return Err(Error::Shape {
            op: "bigru_encode",
            shapes: vec![vec![fwd.hidden_dim, fwd.input_dim], vec![bwd.hidden_dim, bwd.input_dim]],
        });
    }
    let forward = gru_encode(g, fwd, seq, false)?;
    let backward = gru_encode(g, bwd, seq, true)?;
    let states = forward
        .iter()
        .zip(&backward)
        .map(|(f, b)| g.concat(&[*b, *f]))
        .collect::<Result<Vec<_>>>()?;
    let matrix = g.stack(&states)?;
    let final_state = g.concat(&[backward[0], *forward.last().unwrap()])?;
    Ok(BiGruOutput { states, matrix, final_state })
}

/// A forward and backward cell pair.
#[derive(Clone, Copy, Debug)]
pub struct BiGruParams {
    pub fwd: GruCellParams,
    pub bwd: GruCellParams,
}

impl BiGruParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        init: &mut dyn FnMut(&[usize]) -> Tensor,
    ) -> Result<Self> {
        Ok(Self {
            fwd: GruCellParams::register(store, &format!("{prefix}.fwd"), input_dim, hidden_dim, init)?,
            bwd: GruCellParams::register(store, &format!("{prefix}.bwd"), input_dim, hidden_dim, init)?,
        })
    }

    pub fn from_store(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            fwd: GruCellParams::from_store(store, &format!("{prefix}.fwd"))?,
            bwd: GruCellParams::from_store(store, &format!("{prefix}.bwd"))?,
        })
    }

    pub fn encode(&self, g: &mut Graph, seq: Var) -> Result<BiGruOutput> {
        bigru_encode(g, &self.fwd, &self.bwd, seq)
    }
}
