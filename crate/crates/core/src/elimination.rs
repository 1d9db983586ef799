//! Soft option elimination.
//!
//! Each pass computes, per option `i`, an elimination gate `e_i` and a
//! subtract gate `s_i` from the current passage vector `x`, the question
//! state and the option state `h_i`. The passage vector is split into a
//! component `r_i` along `h_i` and the remainder, partially subtracted
//! under `s_i`:
//!
//! ```text
//! x_e = x - s ⊙ r
//! x_r = x - s ⊙ x_e
//! x~_i = e ⊙ x_e + (1 - e) ⊙ x_r
//! ```
//!
//! The option-specific vectors are mixed with `β = softmax(v_bᵀ tanh(W_b x~_i + U_b h_i))`
//! and the mixture feeds the next pass.
//!
//! How `r_i` is computed is a [`Projection`] strategy selected by name:
//! `paper` divides by `|x|²`, `corrected` by `|h_i|²` (a true orthogonal
//! projection).

use crate::autograd::{softmax, Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Strategy for the component of `x` attributed to an option vector.
pub trait Projection: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns `r = c · hz` for the strategy's coefficient `c`.
    fn component(&self, g: &mut Graph, x: Var, hz: Var) -> Result<Var>;
}

/// `r = <x, hz> / |x|² · hz`.
pub struct PaperProjection;

/// `r = <x, hz> / |hz|² · hz`.
pub struct OrthogonalProjection;

fn scaled_by_ratio(g: &mut Graph, x: Var, hz: Var, denom_of: Var, what: &str) -> Result<Var> {
    let num = g.dot(x, hz)?;
    let den = g.dot(denom_of, denom_of)?;
    if g.scalar_value(den) == 0.0 {
        return Err(Error::Degenerate { what: format!("zero-norm {what} in projection"), pass: None });
    }
    let c = g.div(num, den)?;
    g.scale(c, hz)
}

impl Projection for PaperProjection {
    fn name(&self) -> &'static str {
        "paper"
    }

    fn component(&self, g: &mut Graph, x: Var, hz: Var) -> Result<Var> {
        scaled_by_ratio(g, x, hz, x, "passage vector")
    }
}

impl Projection for OrthogonalProjection {
    fn name(&self) -> &'static str {
        "corrected"
    }

    fn component(&self, g: &mut Graph, x: Var, hz: Var) -> Result<Var> {
        scaled_by_ratio(g, x, hz, hz, "option vector")
    }
}

static PROJECTIONS: &[&dyn Projection] = &[&PaperProjection, &OrthogonalProjection];

pub fn projection_names() -> Vec<&'static str> {
    PROJECTIONS.iter().map(|p| p.name()).collect()
}

pub fn projection_by_name(name: &str) -> Result<&'static dyn Projection> {
    PROJECTIONS.iter().copied().find(|p| p.name() == name).ok_or_else(|| {
        Error::Config(format!("unknown projection_mode {name:?}; expected one of {:?}", projection_names()))
    })
}

#[derive(Clone, Copy, Debug)]
pub struct GateParams {
    pub w: ParamId,
    pub v: ParamId,
    pub u: ParamId,
}

/// Parameters for one elimination pass.
#[derive(Clone, Copy, Debug)]
pub struct PassParams {
    pub elim: GateParams,
    /// Absent when the subtract gate is disabled.
    pub subtract: Option<GateParams>,
    pub w_b: ParamId,
    pub u_b: ParamId,
    pub v_b: ParamId,
}

#[derive(Clone)]
pub struct EliminationParams {
    /// One set when shared across passes, otherwise one per pass.
    pub sets: Vec<PassParams>,
    pub passes: usize,
    pub projection: &'static dyn Projection,
}

impl std::fmt::Debug for EliminationParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EliminationParams")
            .field("sets", &self.sets)
            .field("passes", &self.passes)
            .field("projection", &self.projection.name())
            .finish()
    }
}

fn set_prefix(shared: bool, pass: usize) -> String {
    if shared { "elim".to_string() } else { format!("elim.pass{pass}") }
}

impl EliminationParams {
    pub fn register(
        store: &mut ParamStore,
        width: usize,
        passes: usize,
        shared: bool,
        subtract_gate: bool,
        projection: &str,
        init: &mut dyn FnMut(&[usize]) -> Tensor,
    ) -> Result<Self> {
        let projection = projection_by_name(projection)?;
        let n_sets = if passes == 0 { 0 } else if shared { 1 } else { passes };
        let mut sets = Vec::with_capacity(n_sets);
        for m in 1..=n_sets {
            let p = set_prefix(shared, m);
            let mut sq = |store: &mut ParamStore, name: &str| store.insert(format!("{p}.{name}"), init(&[width, width]));
            let elim = GateParams { w: sq(store, "w_e")?, v: sq(store, "v_e")?, u: sq(store, "u_e")? };
            let subtract = if subtract_gate {
                Some(GateParams { w: sq(store, "w_s")?, v: sq(store, "v_s")?, u: sq(store, "u_s")? })
            } else {
                None
            };
            let w_b = sq(store, "w_b")?;
            let u_b = sq(store, "u_b")?;
            let v_b = store.insert(format!("{p}.v_b"), Tensor::vector(init(&[width, 1]).into_data()))?;
            sets.push(PassParams { elim, subtract, w_b, u_b, v_b });
        }
        Ok(Self { sets, passes, projection })
    }

    pub fn from_store(
        store: &ParamStore,
        passes: usize,
        shared: bool,
        subtract_gate: bool,
        projection: &str,
    ) -> Result<Self> {
        let projection = projection_by_name(projection)?;
        let n_sets = if passes == 0 { 0 } else if shared { 1 } else { passes };
        let mut sets = Vec::with_capacity(n_sets);
        for m in 1..=n_sets {
            let p = set_prefix(shared, m);
            let id = |name: &str| store.require(&format!("{p}.{name}"));
            let elim = GateParams { w: id("w_e")?, v: id("v_e")?, u: id("u_e")? };
            let subtract =
                if subtract_gate { Some(GateParams { w: id("w_s")?, v: id("v_s")?, u: id("u_s")? }) } else { None };
            sets.push(PassParams { elim, subtract, w_b: id("w_b")?, u_b: id("u_b")?, v_b: id("v_b")? });
        }
        Ok(Self { sets, passes, projection })
    }

    /// Parameters used by pass `m` (1-based).
    pub fn pass(&self, m: usize) -> &PassParams {
        if self.sets.len() == 1 { &self.sets[0] } else { &self.sets[m - 1] }
    }
}

/// `W x + V h_q`, shared by every option within a pass.
fn gate_context(g: &mut Graph, x: Var, hq: Var, p: &GateParams) -> Result<Var> {
    let (w, v) = (g.param(p.w), g.param(p.v));
    let wx = g.matvec(w, x)?;
    let vq = g.matvec(v, hq)?;
    g.add(wx, vq)
}

fn gate_from_context(g: &mut Graph, context: Var, hz: Var, p: &GateParams) -> Result<Var> {
    let u = g.param(p.u);
    let uz = g.matvec(u, hz)?;
    let pre = g.add(context, uz)?;
    g.sigmoid(pre)
}

/// `e_i = sigmoid(W_e x + V_e h_q + U_e h_i)`.
pub fn elimination_gate(g: &mut Graph, x: Var, hq: Var, hz: Var, p: &PassParams) -> Result<Var> {
    let ctx = gate_context(g, x, hq, &p.elim)?;
    gate_from_context(g, ctx, hz, &p.elim)
}

/// `s_i = sigmoid(W_s x + V_s h_q + U_s h_i)`, or all ones when the gate is disabled.
pub fn subtract_gate(g: &mut Graph, x: Var, hq: Var, hz: Var, p: &PassParams) -> Result<Var> {
    match &p.subtract {
        Some(sp) => {
            let ctx = gate_context(g, x, hq, sp)?;
            gate_from_context(g, ctx, hz, sp)
        }
        None => g.constant(Tensor::filled(g.shape(x), 1.0)),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Decomposition {
    pub r: Var,
    pub x_e: Var,
    pub x_r: Var,
}

/// Splits `x` against `hz`. `s = None` means an all-ones subtract gate.
pub fn decompose(g: &mut Graph, x: Var, hz: Var, s: Option<Var>, projection: &dyn Projection) -> Result<Decomposition> {
    if g.shape(x) != g.shape(hz) || g.shape(x).len() != 1 {
        return Err(Error::Shape { op: "decompose", shapes: vec![g.shape(x).to_vec(), g.shape(hz).to_vec()] });
    }
    let r = projection.component(g, x, hz)?;
    let gated_r = match s {
        Some(s) => g.mul(s, r)?,
        None => r,
    };
    let x_e = g.sub(x, gated_r)?;
    let gated_e = match s {
        Some(s) => g.mul(s, x_e)?,
        None => x_e,
    };
    let x_r = g.sub(x, gated_e)?;
    Ok(Decomposition { r, x_e, x_r })
}

/// `e ⊙ x_e + (1 - e) ⊙ x_r`.
pub fn gate_combine(g: &mut Graph, e: Var, x_e: Var, x_r: Var) -> Result<Var> {
    if g.shape(e) != g.shape(x_e) || g.shape(e) != g.shape(x_r) {
        return Err(Error::Shape {
            op: "gate_combine",
            shapes: vec![g.shape(e).to_vec(), g.shape(x_e).to_vec(), g.shape(x_r).to_vec()],
        });
    }
    let diff = g.sub(x_e, x_r)?;
    let moved = g.mul(e, diff)?;
    g.add(x_r, moved)
}

pub struct Mixed {
    pub x: Var,
    pub beta: Var,
}

/// Mixes the option-specific passage vectors into one.
pub fn option_mix(g: &mut Graph, x_tildes: &[Var], hzs: &[Var], p: &PassParams) -> Result<Mixed> {
    if x_tildes.len() < 2 || x_tildes.len() != hzs.len() {
        return Err(Error::InvalidArgument(format!(
            "option_mix needs at least two options with matching states, got {} and {}",
            x_tildes.len(),
            hzs.len()
        )));
    }
    let (w_b, u_b, v_b) = (g.param(p.w_b), g.param(p.u_b), g.param(p.v_b));
    let mut logits = Vec::with_capacity(x_tildes.len());
    for (&xt, &hz) in x_tildes.iter().zip(hzs) {
        let a = g.matvec(w_b, xt)?;
        let b = g.matvec(u_b, hz)?;
        let pre = g.add(a, b)?;
        let act = g.tanh(pre)?;
        logits.push(g.dot(v_b, act)?);
    }
    let logits = g.concat(&logits)?;
    let beta = g.softmax(logits)?;
    let rows = g.stack(x_tildes)?;
    let x = g.weighted_sum(rows, beta)?;
    Ok(Mixed { x, beta })
}

/// Graph handles recorded during one pass.
pub struct PassNodes {
    pub elim_gates: Vec<Var>,
    pub subtract_gates: Vec<Var>,
    pub beta: Var,
    /// Selection scores of the pass output.
    pub scores: Var,
}

pub struct EliminationOutput {
    pub x: Var,
    pub passes: Vec<PassNodes>,
}

/// Runs every pass. `score` maps a passage vector to option scores and is
/// evaluated on each pass output.
pub fn run_elimination(
    g: &mut Graph,
    x0: Var,
    hq: Var,
    hzs: &[Var],
    params: &EliminationParams,
    score: &mut dyn FnMut(&mut Graph, Var) -> Result<Var>,
) -> Result<EliminationOutput> {
    if params.passes == 0 {
        return Err(Error::InvalidArgument("run_elimination needs at least one pass".into()));
    }
    let mut x = x0;
    let mut passes = Vec::with_capacity(params.passes);
    for m in 1..=params.passes {
        let set = *params.pass(m);
        let with_pass = |e: Error| match e {
            Error::Degenerate { what, pass: None } => Error::Degenerate { what, pass: Some(m) },
            other => other,
        };
        let e_ctx = gate_context(g, x, hq, &set.elim)?;
        let s_ctx = set.subtract.as_ref().map(|sp| gate_context(g, x, hq, sp)).transpose()?;
        let mut elim_gates = Vec::with_capacity(hzs.len());
        let mut subtract_gates = Vec::with_capacity(hzs.len());
        let mut x_tildes = Vec::with_capacity(hzs.len());
        for &hz in hzs {
            let e = gate_from_context(g, e_ctx, hz, &set.elim)?;
            let s = match (&set.subtract, s_ctx) {
                (Some(sp), Some(ctx)) => Some(gate_from_context(g, ctx, hz, sp)?),
                _ => None,
            };
            let parts = decompose(g, x, hz, s, params.projection).map_err(with_pass)?;
            x_tildes.push(gate_combine(g, e, parts.x_e, parts.x_r)?);
            elim_gates.push(e);
            subtract_gates.push(match s {
                Some(s) => s,
                None => g.constant(Tensor::filled(g.shape(x), 1.0))?,
            });
        }
        let mixed = option_mix(g, &x_tildes, hzs, &set)?;
        if g.value(mixed.x).iter().all(|v| *v == 0.0) {
            return Err(Error::Degenerate { what: "zero passage vector after mixing".into(), pass: Some(m) });
        }
        x = mixed.x;
        let scores = score(g, x)?;
        passes.push(PassNodes { elim_gates, subtract_gates, beta: mixed.beta, scores });
    }
    Ok(EliminationOutput { x, passes })
}

/// One row group of an [`EliminationTrace`].
#[derive(Clone, Debug, PartialEq)]
pub struct PassTrace {
    pub pass: usize,
    pub probabilities: Vec<f64>,
    /// Absent for pass 0, which scores the un-eliminated passage vector.
    pub mean_e: Option<Vec<f64>>,
    pub mean_s: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

/// Option probabilities and gate statistics per elimination pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EliminationTrace {
    pub passes: Vec<PassTrace>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

impl EliminationTrace {
    /// Builds a trace from pass-0 scores and the recorded pass nodes.
    pub fn collect(g: &Graph, initial_scores: Var, passes: &[PassNodes]) -> Self {
        let mut out = vec![PassTrace {
            pass: 0,
            probabilities: softmax(g.value(initial_scores)),
            mean_e: None,
            mean_s: None,
            beta: None,
        }];
        for (m, p) in passes.iter().enumerate() {
            out.push(PassTrace {
                pass: m + 1,
                probabilities: softmax(g.value(p.scores)),
                mean_e: Some(p.elim_gates.iter().map(|e| mean(g.value(*e))).collect()),
                mean_s: Some(p.subtract_gates.iter().map(|s| mean(g.value(*s))).collect()),
                beta: Some(g.value(p.beta).to_vec()),
            });
        }
        Self { passes: out }
    }

    pub const CSV_HEADER: &'static str = "pass,option_index,probability,mean_e,mean_s,beta";

    /// CSV with one row per (pass, option). Gate columns are empty for pass 0.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        let cell = |v: &Option<Vec<f64>>, i: usize| v.as_ref().map(|v| v[i].to_string()).unwrap_or_default();
        for p in &self.passes {
            for (i, prob) in p.probabilities.iter().enumerate() {
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    p.pass,
                    i,
                    prob,
                    cell(&p.mean_e, i),
                    cell(&p.mean_s, i),
                    cell(&p.beta, i)
                ));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(g: &mut Graph, xs: &[f64]) -> Var {
        g.constant(Tensor::vector(xs.to_vec())).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn params_with(width: usize, shared: bool, passes: usize, init: &mut dyn FnMut(&[usize]) -> Tensor) -> (ParamStore, EliminationParams) {
        let mut store = ParamStore::new();
        let p = EliminationParams::register(&mut store, width, passes, shared, true, "paper", init).unwrap();
        (store, p)
    }

    #[test]
    fn paper_mode_worked_example() {
        let mut g = Graph::detached();
        let (x, hz) = (v(&mut g, &[1.0, 0.0]), v(&mut g, &[1.0, 1.0]));
        let d = decompose(&mut g, x, hz, None, &PaperProjection).unwrap();
        assert_eq!(g.value(d.r), &[1.0, 1.0]);
        assert_eq!(g.value(d.x_e), &[0.0, -1.0]);
        assert_eq!(g.value(d.x_r), &[1.0, 1.0]);
        let dot: f64 = g.value(d.x_e).iter().zip(g.value(hz)).map(|(a, b)| a * b).sum();
        assert_eq!(dot, -1.0);
    }

    #[test]
    fn corrected_mode_worked_example() {
        let mut g = Graph::detached();
        let (x, hz) = (v(&mut g, &[1.0, 0.0]), v(&mut g, &[1.0, 1.0]));
        let d = decompose(&mut g, x, hz, None, &OrthogonalProjection).unwrap();
        assert_eq!(g.value(d.r), &[0.5, 0.5]);
        assert_eq!(g.value(d.x_e), &[0.5, -0.5]);
        let dot: f64 = g.value(d.x_e).iter().zip(g.value(hz)).map(|(a, b)| a * b).sum();
        assert_eq!(dot, 0.0);
    }

    #[test]
    fn orthogonal_inputs_have_no_component() {
        for proj in PROJECTIONS {
            let mut g = Graph::detached();
            let (x, hz) = (v(&mut g, &[2.0, 0.0]), v(&mut g, &[0.0, 3.0]));
            let s = v(&mut g, &[0.3, 0.8]);
            let d = decompose(&mut g, x, hz, Some(s), *proj).unwrap();
            assert_eq!(g.value(d.r), &[0.0, 0.0]);
            assert_eq!(g.value(d.x_e), &[2.0, 0.0]);
            assert!(close(g.value(d.x_r), &[2.0 - 0.3 * 2.0, 0.0], 1e-15));
        }
    }

    #[test]
    fn zero_denominators_are_degenerate() {
        let mut g = Graph::detached();
        let zero = v(&mut g, &[0.0, 0.0]);
        let hz = v(&mut g, &[1.0, 1.0]);
        assert!(matches!(decompose(&mut g, zero, hz, None, &PaperProjection), Err(Error::Degenerate { .. })));
        let x = v(&mut g, &[1.0, 1.0]);
        assert!(matches!(decompose(&mut g, x, zero, None, &OrthogonalProjection), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn registry_lookup() {
        assert_eq!(projection_by_name("paper").unwrap().name(), "paper");
        assert_eq!(projection_by_name("corrected").unwrap().name(), "corrected");
        assert!(projection_by_name("gram").is_err());
    }

    #[test]
    fn combine_saturation_and_midpoint() {
        let mut g = Graph::detached();
        let (xe, xr) = (v(&mut g, &[1.0, -2.0]), v(&mut g, &[3.0, 0.5]));
        let one = v(&mut g, &[1.0, 1.0]);
        let zero = v(&mut g, &[0.0, 0.0]);
        let half = v(&mut g, &[0.5, 0.5]);
        let a = gate_combine(&mut g, one, xe, xr).unwrap();
        assert_eq!(g.value(a), &[1.0, -2.0]);
        let b = gate_combine(&mut g, zero, xe, xr).unwrap();
        assert_eq!(g.value(b), &[3.0, 0.5]);
        let c = gate_combine(&mut g, half, xe, xr).unwrap();
        assert_eq!(g.value(c), &[2.0, -0.75]);
    }

    #[test]
    fn zero_params_give_half_gates() {
        let (store, p) = params_with(3, true, 1, &mut |s| Tensor::zeros(s));
        let mut g = Graph::new(&store);
        let (x, hq, hz) = (v(&mut g, &[1.0, 2.0, 3.0]), v(&mut g, &[0.5, 0.0, -1.0]), v(&mut g, &[4.0, 4.0, 4.0]));
        let e = elimination_gate(&mut g, x, hq, hz, p.pass(1)).unwrap();
        let s = subtract_gate(&mut g, x, hq, hz, p.pass(1)).unwrap();
        assert_eq!(g.value(e), &[0.5; 3]);
        assert_eq!(g.value(s), &[0.5; 3]);
    }

    #[test]
    fn disabled_subtract_gate_is_ones() {
        let mut store = ParamStore::new();
        let p = EliminationParams::register(&mut store, 2, 1, true, false, "paper", &mut |s| Tensor::filled(s, 0.3)).unwrap();
        assert!(store.id("elim.w_s").is_none());
        let mut g = Graph::new(&store);
        let (x, hq, hz) = (v(&mut g, &[1.0, 2.0]), v(&mut g, &[0.5, 0.0]), v(&mut g, &[4.0, 4.0]));
        let s = subtract_gate(&mut g, x, hq, hz, p.pass(1)).unwrap();
        assert_eq!(g.value(s), &[1.0, 1.0]);
    }

    fn random_init(seed: u64) -> impl FnMut(&[usize]) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        move |s: &[usize]| {
            let n = s.iter().product();
            Tensor::new(s.to_vec(), (0..n).map(|_| rng.gen_range(-0.6..0.6)).collect()).unwrap()
        }
    }

    #[test]
    fn gates_are_distinct_and_bounded() {
        let (store, p) = params_with(4, true, 1, &mut random_init(1));
        let mut g = Graph::new(&store);
        let x = v(&mut g, &[1.0, 2.0, 3.0, -1.0]);
        let hq = v(&mut g, &[0.5, 0.0, -1.0, 2.0]);
        let hz = v(&mut g, &[4.0, -4.0, 0.1, 0.0]);
        let e = elimination_gate(&mut g, x, hq, hz, p.pass(1)).unwrap();
        let s = subtract_gate(&mut g, x, hq, hz, p.pass(1)).unwrap();
        assert_ne!(g.value(e), g.value(s));
        assert!(g.value(e).iter().chain(g.value(s)).all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn mix_symmetric_inputs_are_uniform() {
        let (store, p) = params_with(3, true, 1, &mut random_init(2));
        let mut g = Graph::new(&store);
        let xt = v(&mut g, &[0.2, -0.4, 0.9]);
        let hz = v(&mut g, &[1.0, 0.0, 0.5]);
        let mixed = option_mix(&mut g, &[xt; 4], &[hz; 4], p.pass(1)).unwrap();
        assert_eq!(g.value(mixed.beta), &[0.25; 4]);
        assert!(close(g.value(mixed.x), g.value(xt), 1e-15));
    }

    #[test]
    fn mix_with_zero_vb_is_uniform() {
        let mut store = ParamStore::new();
        let mut init = random_init(3);
        let p = EliminationParams::register(&mut store, 3, 1, true, true, "paper", &mut init).unwrap();
        store.get_mut(p.pass(1).v_b).data_mut().fill(0.0);
        let mut g = Graph::new(&store);
        let xs: Vec<Var> = (0..3).map(|i| v(&mut g, &[i as f64, 1.0, -2.0])).collect();
        let hs: Vec<Var> = (0..3).map(|i| v(&mut g, &[0.0, i as f64, 1.0])).collect();
        let mixed = option_mix(&mut g, &xs, &hs, p.pass(1)).unwrap();
        assert!(close(g.value(mixed.beta), &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn per_pass_parameters_when_unshared() {
        let (store, p) = params_with(2, false, 3, &mut random_init(4));
        assert_eq!(p.sets.len(), 3);
        assert!(store.id("elim.pass3.w_e").is_some());
        let (_, shared) = params_with(2, true, 3, &mut random_init(4));
        assert_eq!(shared.sets.len(), 1);
    }

    #[test]
    fn run_records_each_pass() {
        for passes in [1, 3, 6] {
            let (store, p) = params_with(4, true, passes, &mut random_init(5));
            let mut g = Graph::new(&store);
            let x = v(&mut g, &[1.0, 2.0, 3.0, -1.0]);
            let hq = v(&mut g, &[0.5, 0.0, -1.0, 2.0]);
            let hzs: Vec<Var> = (0..4).map(|i| v(&mut g, &[1.0, i as f64, -0.5, 0.25])).collect();
            let hz_mat = g.stack(&hzs).unwrap();
            let mut score = |g: &mut Graph, x: Var| g.matvec(hz_mat, x);
            let s0 = score(&mut g, x).unwrap();
            let out = run_elimination(&mut g, x, hq, &hzs, &p, &mut score).unwrap();
            assert_eq!(out.passes.len(), passes);
            let trace = EliminationTrace::collect(&g, s0, &out.passes);
            assert_eq!(trace.passes.len(), passes + 1);
            for t in &trace.passes {
                assert!((t.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            let csv = trace.to_csv();
            assert_eq!(csv.lines().count(), 1 + 4 * (passes + 1));
        }
    }
}
