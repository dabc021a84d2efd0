//! A metric sampled once at every grid node.

use std::sync::Arc;

use rayon::prelude::*;

use crate::domain::{Domain, Point};
use crate::metric::{Christoffel, Mat2, MetricField};

#[derive(Debug, Clone, Copy)]
pub struct NodeMetric {
    pub g: Mat2,
    pub g_inv: Mat2,
    pub sqrt_det: f64,
    pub gamma: Christoffel,
    /// Gram matrix of the symmetric-tensor contraction in the component
    /// basis `(f11, f12, f22)`: `⟨a, b⟩_g = a^T contraction b`.
    pub contraction: [[f64; 3]; 3],
}

impl NodeMetric {
    pub fn at(metric: &MetricField, x: &Point) -> Self {
        let g = metric.g(x);
        let g_inv = crate::metric::inverse(&g);
        Self {
            g,
            g_inv,
            sqrt_det: g.determinant().sqrt(),
            gamma: metric.christoffel(x),
            contraction: tensor_contraction(&g_inv),
        }
    }

    /// `g^{ik} g^{jl} a_ij b_kl` for tensors in component form.
    pub fn dot_tensor(&self, a: &[f64; 3], b: &[f64; 3]) -> f64 {
        let c = &self.contraction;
        let mut acc = 0.0;
        for p in 0..3 {
            for q in 0..3 {
                acc += a[p] * c[p][q] * b[q];
            }
        }
        acc
    }

    /// `g^{ij} a_i b_j` for covectors.
    pub fn dot_covector(&self, a: &[f64; 2], b: &[f64; 2]) -> f64 {
        let gi = &self.g_inv;
        a[0] * (gi[(0, 0)] * b[0] + gi[(0, 1)] * b[1]) + a[1] * (gi[(1, 0)] * b[0] + gi[(1, 1)] * b[1])
    }
}

/// `M_pq = tr(G E_p G E_q)` with `E_1 = e1⊗e1`, `E_2 = e1⊗e2 + e2⊗e1`,
/// `E_3 = e2⊗e2` and `G = g^{-1}`.
pub fn tensor_contraction(ginv: &Mat2) -> [[f64; 3]; 3] {
    let basis = [Mat2::new(1.0, 0.0, 0.0, 0.0), Mat2::new(0.0, 1.0, 1.0, 0.0), Mat2::new(0.0, 0.0, 0.0, 1.0)];
    let mut out = [[0.0; 3]; 3];
    for p in 0..3 {
        for q in 0..3 {
            out[p][q] = (ginv * basis[p] * ginv * basis[q]).trace();
        }
    }
    out
}

/// Metric data at every node of a domain.
#[derive(Debug, Clone)]
pub struct GridMetric {
    pub metric: MetricField,
    pub domain: Arc<Domain>,
    pub nodes: Vec<NodeMetric>,
}

impl GridMetric {
    pub fn new(metric: &MetricField, domain: Arc<Domain>) -> Self {
        let nodes = (0..domain.len()).into_par_iter().map(|k| NodeMetric::at(metric, &domain.position(k))).collect();
        Self { metric: metric.clone(), domain, nodes }
    }

    pub fn h(&self) -> f64 {
        self.domain.h()
    }

    /// Quadrature weight `sqrt(det g) h^2` of node `k`.
    pub fn volume(&self, k: usize) -> f64 {
        self.nodes[k].sqrt_det * self.domain.h() * self.domain.h()
    }
}
