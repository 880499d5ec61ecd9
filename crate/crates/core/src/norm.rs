//! Weighted max norms.

use crate::error::{Error, Result};

/// Componentwise scale `s` of the norm `‖x‖ = max_i |x_i| / s_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormWeights(Vec<f64>);

impl NormWeights {
    pub fn new(scales: Vec<f64>) -> Result<Self> {
        if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument(
                "norm scales must be positive".into(),
            ));
        }
        Ok(NormWeights(scales))
    }

    pub fn unit(n: usize) -> Self {
        NormWeights(vec![1.0; n])
    }

    pub fn scales(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.0)
            .fold(0.0, |m, (v, s)| m.max((v / s).abs()))
    }

    pub fn dist(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .zip(&self.0)
            .fold(0.0, |m, ((u, v), s)| m.max(((u - v) / s).abs()))
    }
}

pub fn max_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn max_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (u, v)| m.max((u - v).abs()))
}

/// Optional weights: `None` is the plain max norm.
pub(crate) fn norm_with(w: Option<&NormWeights>, x: &[f64]) -> f64 {
    w.map_or_else(|| max_norm(x), |w| w.norm(x))
}

pub(crate) fn dist_with(w: Option<&NormWeights>, x: &[f64], y: &[f64]) -> f64 {
    w.map_or_else(|| max_dist(x, y), |w| w.dist(x, y))
}
