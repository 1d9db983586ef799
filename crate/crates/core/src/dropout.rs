use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` so that
/// evaluation needs no rescaling.
pub struct InputDropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl InputDropout {
    pub fn new(rate: f64, rng: ChaCha8Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        Ok(Self { rate, rng })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn apply(&mut self, g: &mut Graph, v: Var) -> Result<Var> {
        if self.rate == 0.0 {
            return Ok(v);
        }
        let keep = 1.0 / (1.0 - self.rate);
        let shape = g.shape(v).to_vec();
        let n = shape.iter().product();
        let mask = (0..n).map(|_| if self.rng.gen::<f64>() < self.rate { 0.0 } else { keep }).collect();
        let mask = g.constant(Tensor::new(shape, mask)?)?;
        g.mul(v, mask)
    }
}

/// Applies `dropout` when present, otherwise passes `v` through.
pub fn maybe_apply(dropout: &mut Option<&mut InputDropout>, g: &mut Graph, v: Var) -> Result<Var> {
    match dropout {
        Some(d) => d.apply(g, v),
        None => Ok(v),
    }
}
