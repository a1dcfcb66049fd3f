//! Gauss-Hermite rules rescaled to Gaussian expectations.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::hermite::GaussHermite;

pub const DEFAULT_NODES: usize = 64;

/// Nodes `z_i` and weights `w_i` with `sum_i w_i f(z_i) ~ E[f(Z)]`, `Z ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct GaussianRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussianRule {
    pub fn new(n: usize) -> Self {
        let n = NonZeroUsize::new(n.max(1)).unwrap();
        let rule = GaussHermite::new(n);
        let (nodes, weights) = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (x * std::f64::consts::SQRT_2, w / std::f64::consts::PI.sqrt()))
            .unzip();
        Self { nodes, weights }
    }

    /// Shared 64-node rule.
    pub fn standard() -> &'static GaussianRule {
        static RULE: OnceLock<GaussianRule> = OnceLock::new();
        RULE.get_or_init(|| GaussianRule::new(DEFAULT_NODES))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[f(V)]` for `V ~ N(0, variance)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, variance: f64, mut f: F) -> f64 {
        let sd = variance.sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * f(sd * z))
            .sum()
    }

    /// `int density(V) dV` for a density that is a zero-mean Gaussian of the
    /// given variance times a slowly varying factor.
    pub fn integrate_density<F: FnMut(f64) -> f64>(&self, variance: f64, mut density: F) -> f64 {
        let sd = variance.sqrt();
        let norm = (2.0 * std::f64::consts::PI * variance).sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| {
                let v = sd * z;
                w * density(v) * norm * (0.5 * z * z).exp()
            })
            .sum()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}
