//! Central finite-difference validation of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::data::Instance;
use crate::error::{Error, Result};
use crate::model::{build_model, ModelConfig};
use crate::params::ParamStore;
use crate::selection;

/// Per-parameter comparison of analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct BlockReport {
    pub name: String,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// max |a - n| / max(1, |a| + |n|) over the block.
    pub max_rel_error: f64,
    /// Entry indices whose perturbed evaluation failed or was non-finite.
    pub non_finite: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub eps: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn has_non_finite(&self) -> bool {
        self.blocks.iter().any(|b| !b.non_finite.is_empty())
    }

    pub fn passed(&self, tol: f64) -> bool {
        !self.has_non_finite() && self.max_rel_error() < tol
    }

    pub fn worst_block(&self) -> Option<&BlockReport> {
        self.blocks.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Added to every analytic gradient entry before comparison. Used to
    /// confirm the harness actually detects wrong gradients.
    pub inject_error: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-5, inject_error: None }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1.0, analytic.abs() + numeric.abs())
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences, for every trainable parameter in `store`.
pub fn finite_diff_check<F>(store: &ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    finite_diff_check_with(store, GradCheckOptions { eps, inject_error: None }, f)
}

pub fn finite_diff_check_with<F>(store: &ParamStore, opts: GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let eps = opts.eps;
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0, 1e-2], got {eps}")));
    }

    let grads = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };

    let eval = |s: &ParamStore| -> Option<f64> {
        let mut g = Graph::new(s);
        let loss = f(&mut g).ok()?;
        let v = g.value(loss);
        (v.len() == 1 && v[0].is_finite()).then_some(v[0])
    };

    let mut probe = store.clone();
    let mut blocks = Vec::new();
    for id in store.ids().filter(|&id| store.is_trainable(id)) {
        let mut analytic = grads.dense(store, id);
        if let Some(delta) = opts.inject_error {
            analytic.iter_mut().for_each(|a| *a += delta);
        }
        let mut numeric = vec![0.0; analytic.len()];
        let mut non_finite = Vec::new();
        let mut max_rel_error: f64 = 0.0;
        for k in 0..analytic.len() {
            let original = store.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = original + eps;
            let plus = eval(&probe);
            probe.get_mut(id).data_mut()[k] = original - eps;
            let minus = eval(&probe);
            probe.get_mut(id).data_mut()[k] = original;
            match (plus, minus) {
                (Some(p), Some(m)) => {
                    numeric[k] = (p - m) / (2.0 * eps);
                    max_rel_error = max_rel_error.max(relative_error(analytic[k], numeric[k]));
                }
                _ => {
                    numeric[k] = f64::NAN;
                    non_finite.push(k);
                }
            }
        }
        blocks.push(BlockReport {
            name: store.name(id).to_string(),
            analytic,
            numeric,
            max_rel_error,
            non_finite,
        });
    }
    Ok(GradCheckReport { eps, blocks })
}

/// Toy dimensions for whole-model checks: hidden 4, embedding 6, a
/// 12-row vocabulary, passage length 5, question length 3 and
/// two-token options.
pub fn toy_config(base: &ModelConfig) -> ModelConfig {
    ModelConfig {
        hidden_dim: 4,
        embedding_dim: 6,
        vocab_size: 12,
        dropout_rate: 0.0,
        allow_nonstandard: true,
        ..base.clone()
    }
}

pub fn toy_instance(config: &ModelConfig, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seq = |len: usize| (0..len).map(|_| rng.gen_range(2..config.vocab_size)).collect::<Vec<_>>();
    let passage = seq(5);
    let question = seq(3);
    let options = (0..config.n_options).map(|_| seq(2)).collect();
    Instance {
        id: format!("toy-{seed}"),
        passage,
        question,
        options,
        label: (seed as usize) % config.n_options,
        question_text: String::new(),
    }
}

/// Finite-difference check of the full pipeline loss on a random toy
/// instance, with the architecture switches of `base` and toy dimensions.
pub fn pipeline_gradcheck(base: &ModelConfig, seed: u64, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let config = toy_config(base);
    let model = build_model(&config, seed)?;
    let inst = toy_instance(&config, seed);
    finite_diff_check_with(&model.params, opts, |g| {
        let nodes = model.build_graph(g, &inst, None)?;
        selection::loss(g, nodes.scores, inst.label)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        let x = store.insert("x", Tensor::vector(vec![1.0])).unwrap();
        let report = finite_diff_check(&store, 1e-5, |g| {
            let v = g.param(x);
            let sq = g.mul(v, v)?;
            g.sum(sq)
        })
        .unwrap();
        let b = &report.blocks[0];
        assert!((b.numeric[0] - 2.0).abs() < 1e-8);
        assert_eq!(b.analytic[0], 2.0);
        assert!(report.passed(1e-8));
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut store = ParamStore::new();
        let x = store.insert("x", Tensor::vector(vec![0.3, -0.7])).unwrap();
        let eps = 1e-4;
        let report = finite_diff_check(&store, eps, |g| {
            let _ = g.param(x);
            let c = g.constant(Tensor::scalar(5.0))?;
            g.sum(c)
        })
        .unwrap();
        for b in &report.blocks {
            assert!(b.numeric.iter().all(|n| n.abs() <= eps * eps));
            assert!(b.analytic.iter().all(|a| *a == 0.0));
        }
    }

    #[test]
    fn injected_error_is_detected() {
        let mut store = ParamStore::new();
        let x = store.insert("x", Tensor::vector(vec![0.5])).unwrap();
        let opts = GradCheckOptions { eps: 1e-5, inject_error: Some(0.1) };
        let report = finite_diff_check_with(&store, opts, |g| {
            let v = g.param(x);
            let t = g.tanh(v)?;
            g.sum(t)
        })
        .unwrap();
        assert!(!report.passed(1e-4));
    }

    #[test]
    fn eps_out_of_range() {
        let store = ParamStore::new();
        let r = finite_diff_check(&store, 0.1, |g| {
            let c = g.constant(Tensor::scalar(1.0))?;
            g.sum(c)
        });
        assert!(r.is_err());
    }

    #[test]
    fn non_finite_probe_reported() {
        let mut store = ParamStore::new();
        // 1/x at x = eps: the minus probe divides by zero.
        let eps = 1e-5;
        let x = store.insert("x", Tensor::vector(vec![eps])).unwrap();
        let report = finite_diff_check(&store, eps, |g| {
            let v = g.param(x);
            let one = g.constant(Tensor::vector(vec![1.0]))?;
            let q = g.div(one, v)?;
            g.sum(q)
        })
        .unwrap();
        assert_eq!(report.blocks[0].non_finite, vec![0]);
        assert!(!report.passed(1.0));
    }

    #[test]
    fn full_pipeline_default_config() {
        let report = pipeline_gradcheck(&ModelConfig::default(), 3, GradCheckOptions::default()).unwrap();
        let worst = report.worst_block().unwrap();
        assert!(report.passed(1e-4), "{} {}", worst.name, worst.max_rel_error);
    }
}
