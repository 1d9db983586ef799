//! Bilinear option scoring and the training objective.

use crate::autograd::{softmax, Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct SelectionParams {
    /// `l x l` bilinear matrix.
    pub w_att: ParamId,
}

impl SelectionParams {
    pub fn register(store: &mut ParamStore, width: usize, init: &mut dyn FnMut(&[usize]) -> Tensor) -> Result<Self> {
        Ok(Self { w_att: store.insert("select.w_att", init(&[width, width]))? })
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        Ok(Self { w_att: store.require("select.w_att")? })
    }
}

/// `scores[i] = xᵀ W h_i`, with the option states stacked as rows of `options`.
pub fn score_options(g: &mut Graph, x: Var, options: Var, params: &SelectionParams) -> Result<Var> {
    let w = g.param(params.w_att);
    let wt = g.transpose(w)?;
    let u = g.matvec(wt, x)?;
    g.matvec(options, u)
}

/// Index of the highest score; ties go to the lowest index.
pub fn predict(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Softmax cross-entropy of `scores` against `gold`.
pub fn loss(g: &mut Graph, scores: Var, gold: usize) -> Result<Var> {
    let n = g.value(scores).len();
    if gold >= n {
        return Err(Error::OutOfRange(format!("gold label {gold} with {n} options")));
    }
    g.cross_entropy(scores, gold)
}

pub fn probabilities(scores: &[f64]) -> Vec<f64> {
    softmax(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(w: Tensor) -> (ParamStore, SelectionParams) {
        let mut store = ParamStore::new();
        let p = SelectionParams::register(&mut store, w.rows(), &mut |_| w.clone()).unwrap();
        (store, p)
    }

    #[test]
    fn identity_gives_dot_products() {
        let (store, p) = setup(Tensor::identity(2));
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::vector(vec![1.0, 0.0])).unwrap();
        let opts = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap()).unwrap();
        let s = score_options(&mut g, x, opts, &p).unwrap();
        assert_eq!(g.value(s), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn bilinear_form() {
        let w = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (store, p) = setup(w);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::vector(vec![1.0, -1.0])).unwrap();
        let opts = g.constant(Tensor::from_rows(&[vec![0.5, 2.0]]).unwrap()).unwrap();
        let s = score_options(&mut g, x, opts, &p).unwrap();
        // xᵀW = [-2, -2]; · [0.5, 2] = -5
        assert_eq!(g.value(s), &[-5.0]);
    }

    #[test]
    fn prediction_rules() {
        assert_eq!(predict(&[0.1, 0.9, 0.3, 0.2]), 1);
        assert_eq!(predict(&[0.4; 4]), 0);
        let shifted: Vec<f64> = [0.1, 0.9, 0.3, 0.2].iter().map(|s| s + 100.0).collect();
        assert_eq!(predict(&shifted), 1);
    }

    #[test]
    fn loss_values() {
        let mut g = Graph::detached();
        let s = g.variable(Tensor::vector(vec![0.0; 4])).unwrap();
        let l = loss(&mut g, s, 2).unwrap();
        assert!((g.scalar_value(l) - 1.386294).abs() < 1e-6);
        let s = g.variable(Tensor::vector(vec![0.0, 60.0, 0.0, 0.0])).unwrap();
        let l = loss(&mut g, s, 1).unwrap();
        assert!(g.scalar_value(l) < 1e-25);
        assert!(loss(&mut g, s, 4).is_err());
    }

    #[test]
    fn loss_gradient_is_p_minus_onehot() {
        let mut g = Graph::detached();
        let raw = vec![0.3, -1.2, 2.0, 0.1];
        let s = g.variable(Tensor::vector(raw.clone())).unwrap();
        let l = loss(&mut g, s, 0).unwrap();
        let grads = g.backward(l).unwrap();
        let p = probabilities(&raw);
        let got = grads.wrt(s).unwrap();
        for j in 0..4 {
            let want = p[j] - if j == 0 { 1.0 } else { 0.0 };
            assert!((got[j] - want).abs() < 1e-15);
        }
        // and against central differences
        let eps = 1e-6;
        for j in 0..4 {
            let f = |d: f64| {
                let mut v = raw.clone();
                v[j] += d;
                let mut g = Graph::detached();
                let s = g.constant(Tensor::vector(v)).unwrap();
                let l = loss(&mut g, s, 0).unwrap();
                g.scalar_value(l)
            };
            let numeric = (f(eps) - f(-eps)) / (2.0 * eps);
            assert!((numeric - got[j]).abs() < 1e-8);
        }
    }
}
