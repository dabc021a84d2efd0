//! Dirichlet problems for `δd` in weak form, the solenoidal projection, and
//! the discrete Riesz map behind the `H⁻¹` norm.
//!
//! Discretization. For a region `Ω` (`M` or `M1`) let `Q` be its grid nodes,
//! `F ⊂ Q` the nodes whose four axis neighbours are all in `Q`, and the fixed
//! set the rest of `Q` together with the axis neighbours of `Q` outside it.
//! One-forms are unknown on `F` and prescribed on the fixed set (zero for
//! `H¹₀`). `d` is applied at every node of `Q` with central differences over
//! the full grid, and the weak form
//!
//! `Σ_{n∈Q} ⟨(dw)_n − F_n, (dφ)_n⟩_g √det g h² = 0` for all `φ` supported on `F`
//!
//! is a symmetric positive definite system. It is factored once by sparse
//! `LDLᵀ` in reverse Cuthill-McKee order; conjugate gradients polish the
//! direct solution whenever its residual exceeds [`CG_TOL`]. A source is
//! always a tensor `F`, acting on test one-forms as `φ ↦ (F, dφ)`; this is
//! how `δF` enters in weak form.

use std::sync::Arc;

use rayon::prelude::*;
use sprs::{CsMat, TriMat};

use crate::calculus::sym_d;
use crate::domain::{Domain, Region};
use crate::error::{Error, Result};
use crate::fields::{OneFormField, SymTensorField};
use crate::grid::GridMetric;

/// Relative residual at which conjugate gradients stop.
pub const CG_TOL: f64 = 1e-10;
const CG_MAX_ITER: usize = 50_000;

const NONE: usize = usize::MAX;

/// Node classification for a region.
#[derive(Debug, Clone)]
pub struct NodeSets {
    pub region: Region,
    /// Quadrature nodes `Q`.
    pub quadrature: Vec<usize>,
    /// Unknown nodes `F`, in storage order.
    pub unknowns: Vec<usize>,
    /// Fixed nodes: `Q \ F` plus neighbours of `Q` outside it.
    pub fixed: Vec<usize>,
    /// Node index to unknown number, `usize::MAX` when not an unknown.
    pub column: Vec<usize>,
}

impl NodeSets {
    pub fn new(domain: &Domain, region: Region) -> Result<Self> {
        if !matches!(region, Region::M | Region::M1) {
            return Err(Error::InvalidArgument(format!(
                "elliptic problems are posed on M or M1, not {}",
                region.name()
            )));
        }
        let n = domain.len();
        let inq = |k: usize| domain.in_region(k, region);
        let mut column = vec![NONE; n];
        let mut unknowns = Vec::new();
        let mut fixed_flag = vec![false; n];
        let mut quadrature = Vec::new();
        for k in 0..n {
            if !inq(k) {
                continue;
            }
            quadrature.push(k);
            let mut interior = true;
            for axis in 0..2 {
                for dir in [-1, 1] {
                    let nb = domain.neighbor(k, axis, dir).expect("grid margin covers stencils");
                    if !inq(nb) {
                        interior = false;
                        fixed_flag[nb] = true;
                    }
                }
            }
            if interior {
                column[k] = unknowns.len();
                unknowns.push(k);
            } else {
                fixed_flag[k] = true;
            }
        }
        let fixed = (0..n).filter(|&k| fixed_flag[k]).collect();
        Ok(Self { region, quadrature, unknowns, fixed, column })
    }
}

/// Sparse symmetric positive definite matrix, solved with a sparse `LDLᵀ`
/// factorization (reverse Cuthill-McKee ordering) and polished by
/// block-Jacobi PCG when the factorization is unavailable or inaccurate.
#[derive(Debug, Clone)]
struct SpdSystem {
    matrix: CsMat<f64>,
    factor: Option<Arc<sprs_ldl::LdlNumeric<f64, usize>>>,
    block: usize,
    /// Inverted diagonal blocks, row-major.
    block_inv: Vec<f64>,
}

impl SpdSystem {
    fn new(matrix: CsMat<f64>, block: usize) -> Self {
        // Assembly order leaves rounding-level asymmetry; average it away.
        let transposed = matrix.transpose_view().to_csr();
        let matrix = (&matrix + &transposed).map(|v| 0.5 * v);
        let n = matrix.rows() / block;
        let mut block_inv = vec![0.0; n * block * block];
        for b in 0..n {
            let mut m = nalgebra::DMatrix::<f64>::zeros(block, block);
            for r in 0..block {
                let row = b * block + r;
                if let Some(rv) = matrix.outer_view(row) {
                    for (c, v) in rv.iter() {
                        if c / block == b {
                            m[(r, c % block)] = *v;
                        }
                    }
                }
            }
            let inv = m.try_inverse().unwrap_or_else(|| nalgebra::DMatrix::identity(block, block));
            for r in 0..block {
                for c in 0..block {
                    block_inv[b * block * block + r * block + c] = inv[(r, c)];
                }
            }
        }
        let factor = sprs_ldl::Ldl::new()
            .fill_in_reduction(sprs::FillInReduction::ReverseCuthillMcKee)
            .numeric(matrix.view())
            .ok()
            .map(Arc::new);
        Self { matrix, factor, block, block_inv }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let indptr = self.matrix.indptr();
        let indptr = indptr.raw_storage();
        let indices = self.matrix.indices();
        let data = self.matrix.data();
        y.par_iter_mut().enumerate().for_each(|(r, out)| {
            let mut acc = 0.0;
            for p in indptr[r]..indptr[r + 1] {
                acc += data[p] * x[indices[p]];
            }
            *out = acc;
        });
    }

    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        let b = self.block;
        z.par_chunks_mut(b).enumerate().for_each(|(blk, out)| {
            let inv = &self.block_inv[blk * b * b..(blk + 1) * b * b];
            for i in 0..b {
                let mut acc = 0.0;
                for j in 0..b {
                    acc += inv[i * b + j] * r[blk * b + j];
                }
                out[i] = acc;
            }
        });
    }

    fn solve(&self, rhs: &[f64]) -> Result<(Vec<f64>, usize)> {
        let n = rhs.len();
        let mut x = vec![0.0; n];
        let bnorm = dot(rhs, rhs).sqrt();
        if bnorm == 0.0 {
            return Ok((x, 0));
        }
        let mut r = rhs.to_vec();
        if let Some(factor) = &self.factor {
            // Direct solve, then PCG polishes whatever the factorization left.
            x = factor.solve(&rhs.to_vec());
            let mut ax = vec![0.0; n];
            self.apply(&x, &mut ax);
            r.iter_mut().zip(&ax).for_each(|(a, b)| *a -= b);
            if dot(&r, &r).sqrt() <= CG_TOL * bnorm {
                return Ok((x, 0));
            }
        }
        let mut z = vec![0.0; n];
        self.precondition(&r, &mut z);
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = dot(&r, &z);
        for it in 1..=CG_MAX_ITER {
            self.apply(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rnorm = dot(&r, &r).sqrt();
            if rnorm <= CG_TOL * bnorm {
                return Ok((x, it));
            }
            self.precondition(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        let residual = dot(&r, &r).sqrt() / bnorm;
        Err(Error::NonConvergence { iterations: CG_MAX_ITER, residual })
    }
}

/// Sequential dot product (fixed summation order keeps results reproducible).
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Stencil of `d` at one node: node indices `[n, n+e1, n-e1, n+e2, n-e2]`
/// and the 3×10 matrix acting on their interleaved one-form components.
fn d_stencil(gm: &GridMetric, k: usize) -> ([usize; 5], [[f64; 10]; 3]) {
    let d = &gm.domain;
    let nb = |axis, dir| d.neighbor(k, axis, dir).expect("grid margin covers stencils");
    let nodes = [k, nb(0, 1), nb(0, -1), nb(1, 1), nb(1, -1)];
    let h = d.h();
    let gam = &gm.nodes[k].gamma;
    let mut m = [[0.0; 10]; 3];
    // (dw)_11 = ∂_1 w_1 − Γ^c_11 w_c
    m[0][2] = 0.5 / h;
    m[0][4] = -0.5 / h;
    // (dw)_12 = ½(∂_1 w_2 + ∂_2 w_1) − Γ^c_12 w_c
    m[1][3] = 0.25 / h;
    m[1][5] = -0.25 / h;
    m[1][6] = 0.25 / h;
    m[1][8] = -0.25 / h;
    // (dw)_22 = ∂_2 w_2 − Γ^c_22 w_c
    m[2][7] = 0.5 / h;
    m[2][9] = -0.5 / h;
    for (row, (i, j)) in [(0, 0), (0, 1), (1, 1)].into_iter().enumerate() {
        for c in 0..2 {
            m[row][c] -= gam[c][i][j];
        }
    }
    (nodes, m)
}

/// Assembled Dirichlet problem for `δd` on `M` or `M1`.
#[derive(Debug, Clone)]
pub struct DirichletSolver {
    gm: Arc<GridMetric>,
    sets: NodeSets,
    system: SpdSystem,
}

impl DirichletSolver {
    pub fn new(gm: Arc<GridMetric>, region: Region) -> Result<Self> {
        let sets = NodeSets::new(&gm.domain, region)?;
        let n = 2 * sets.unknowns.len();
        let locals: Vec<Vec<(usize, usize, f64)>> = sets
            .quadrature
            .par_iter()
            .map(|&k| {
                let (nodes, dm) = d_stencil(&gm, k);
                let w = gm.volume(k);
                let c = &gm.nodes[k].contraction;
                // Local matrix W D^T M D restricted to unknown columns.
                let mut md = [[0.0; 10]; 3];
                for p in 0..3 {
                    for col in 0..10 {
                        md[p][col] = (0..3).map(|q| c[p][q] * dm[q][col]).sum();
                    }
                }
                let mut out = Vec::new();
                for a in 0..10 {
                    let ca = sets.column[nodes[a / 2]];
                    if ca == NONE {
                        continue;
                    }
                    for b in 0..10 {
                        let cb = sets.column[nodes[b / 2]];
                        if cb == NONE {
                            continue;
                        }
                        let v: f64 = (0..3).map(|p| dm[p][a] * md[p][b]).sum();
                        if v != 0.0 {
                            out.push((2 * ca + a % 2, 2 * cb + b % 2, w * v));
                        }
                    }
                }
                out
            })
            .collect();
        let mut tri = TriMat::new((n, n));
        for local in locals {
            for (r, c, v) in local {
                tri.add_triplet(r, c, v);
            }
        }
        let system = SpdSystem::new(tri.to_csr(), 2);
        Ok(Self { gm, sets, system })
    }

    pub fn sets(&self) -> &NodeSets {
        &self.sets
    }

    pub fn grid_metric(&self) -> &Arc<GridMetric> {
        &self.gm
    }

    /// Solves `(dw, dφ) = (source, dφ)` for all `φ` vanishing on the fixed
    /// set, with `w` equal to `lift` on the fixed set. The result lives on the
    /// whole grid: unknowns on `F`, lift values on the fixed set, zero
    /// elsewhere.
    pub fn solve(&self, source: Option<&SymTensorField>, lift: Option<&OneFormField>) -> Result<OneFormField> {
        let domain = self.gm.domain.clone();
        for f in [source.map(|s| s.domain()), lift.map(|l| l.domain())].into_iter().flatten() {
            if !f.same_grid(&domain) {
                return Err(Error::DomainMismatch);
            }
        }
        let mut w = vec![[0.0; 2]; domain.len()];
        if let Some(l) = lift {
            for &k in &self.sets.fixed {
                w[k] = l.get(k);
            }
        }
        let region = self.sets.region;
        let rhs_parts: Vec<[(usize, f64); 10]> = self
            .sets
            .quadrature
            .par_iter()
            .map(|&k| {
                let (nodes, dm) = d_stencil(&self.gm, k);
                let mut resid = [0.0; 3];
                if let Some(s) = source {
                    if domain.in_region(k, region) {
                        resid = s.get(k);
                    }
                }
                for (p, r) in resid.iter_mut().enumerate() {
                    for col in 0..10 {
                        *r -= dm[p][col] * w[nodes[col / 2]][col % 2];
                    }
                }
                let c = &self.gm.nodes[k].contraction;
                let vol = self.gm.volume(k);
                let mut out = [(NONE, 0.0); 10];
                for (a, o) in out.iter_mut().enumerate() {
                    let ca = self.sets.column[nodes[a / 2]];
                    if ca == NONE {
                        continue;
                    }
                    let mut v = 0.0;
                    for p in 0..3 {
                        for q in 0..3 {
                            v += dm[p][a] * c[p][q] * resid[q];
                        }
                    }
                    *o = (2 * ca + a % 2, vol * v);
                }
                out
            })
            .collect();
        let mut rhs = vec![0.0; 2 * self.sets.unknowns.len()];
        for part in rhs_parts {
            for (r, v) in part {
                if r != NONE {
                    rhs[r] += v;
                }
            }
        }
        let (x, _) = self.system.solve(&rhs)?;
        for (u, &k) in self.sets.unknowns.iter().enumerate() {
            w[k] = [x[2 * u], x[2 * u + 1]];
        }
        OneFormField::from_data(domain, Region::Grid, w)
    }

    /// Solenoidal projection `f = f^s + dv` with `v` vanishing on the fixed
    /// set. Returns `(f^s, v)`; `f^s` has the solver's region.
    pub fn project(&self, f: &SymTensorField) -> Result<(SymTensorField, OneFormField)> {
        let region = self.sets.region;
        let f = f.restrict(region);
        if f.is_zero() {
            return Ok((f, OneFormField::zeros(self.gm.domain.clone(), Region::Grid)));
        }
        let v = self.solve(Some(&f), None)?;
        let dv = sym_d(&self.gm, &v).restrict(region);
        Ok((f.axpy(-1.0, &dv)?, v))
    }
}

/// `δdw = δF` in `region` with `w = α` on the boundary layer (weak form).
pub fn solve_dirichlet(
    gm: Arc<GridMetric>,
    source: Option<&SymTensorField>,
    alpha: Option<&OneFormField>,
    region: Region,
) -> Result<OneFormField> {
    if source.is_none_or(|s| s.is_zero()) && alpha.is_none_or(|a| a.is_zero()) {
        return Ok(OneFormField::zeros(gm.domain.clone(), Region::Grid));
    }
    DirichletSolver::new(gm, region)?.solve(source, alpha)
}

/// Solenoidal part of `f` on `region` and the potential `v ∈ H¹₀(region)`.
pub fn solenoidal_project(
    gm: Arc<GridMetric>,
    f: &SymTensorField,
    region: Region,
) -> Result<(SymTensorField, OneFormField)> {
    if f.restrict(region).is_zero() {
        return Ok((f.restrict(region), OneFormField::zeros(gm.domain.clone(), Region::Grid)));
    }
    DirichletSolver::new(gm, region)?.project(f)
}

/// Discrete Riesz map of `H¹₀(region)` for symmetric tensors, giving the
/// negative norm `‖f‖_{H⁻¹} = sup (f, φ) / ‖φ‖_{H¹}`.
///
/// The Gram form is `Σ_{n∈Q} (⟨z, φ⟩_g + Σ_a ⟨∂_a z, ∂_a φ⟩_g) √det g h²` with
/// central differences, matching the `H¹` norm in the interior.
#[derive(Debug, Clone)]
pub struct NegativeNorm {
    gm: Arc<GridMetric>,
    sets: NodeSets,
    system: SpdSystem,
}

impl NegativeNorm {
    pub fn new(gm: Arc<GridMetric>, region: Region) -> Result<Self> {
        let sets = NodeSets::new(&gm.domain, region)?;
        let n = 3 * sets.unknowns.len();
        let h = gm.domain.h();
        let locals: Vec<Vec<(usize, usize, f64)>> = sets
            .quadrature
            .par_iter()
            .map(|&k| {
                let d = &gm.domain;
                let nb = |axis, dir| d.neighbor(k, axis, dir).expect("grid margin covers stencils");
                let c = &gm.nodes[k].contraction;
                let w = gm.volume(k);
                // (node, coefficient) lists for value, ∂_1 and ∂_2.
                let ops: [Vec<(usize, f64)>; 3] = [
                    vec![(k, 1.0)],
                    vec![(nb(0, 1), 0.5 / h), (nb(0, -1), -0.5 / h)],
                    vec![(nb(1, 1), 0.5 / h), (nb(1, -1), -0.5 / h)],
                ];
                let mut out = Vec::new();
                for op in &ops {
                    for &(na, ca) in op {
                        let ua = sets.column[na];
                        if ua == NONE {
                            continue;
                        }
                        for &(nb_, cb) in op {
                            let ub = sets.column[nb_];
                            if ub == NONE {
                                continue;
                            }
                            for p in 0..3 {
                                for q in 0..3 {
                                    let v = w * ca * cb * c[p][q];
                                    if v != 0.0 {
                                        out.push((3 * ua + p, 3 * ub + q, v));
                                    }
                                }
                            }
                        }
                    }
                }
                out
            })
            .collect();
        let mut tri = TriMat::new((n, n));
        for local in locals {
            for (r, c, v) in local {
                tri.add_triplet(r, c, v);
            }
        }
        let system = SpdSystem::new(tri.to_csr(), 3);
        Ok(Self { gm, sets, system })
    }

    pub fn norm(&self, f: &SymTensorField) -> Result<f64> {
        if !f.domain().same_grid(&self.gm.domain) {
            return Err(Error::DomainMismatch);
        }
        let mut rhs = vec![0.0; 3 * self.sets.unknowns.len()];
        for (u, &k) in self.sets.unknowns.iter().enumerate() {
            let c = &self.gm.nodes[k].contraction;
            let v = f.get(k);
            let w = self.gm.volume(k);
            for p in 0..3 {
                rhs[3 * u + p] = w * (0..3).map(|q| c[p][q] * v[q]).sum::<f64>();
            }
        }
        let (z, _) = self.system.solve(&rhs)?;
        Ok(dot(&rhs, &z).max(0.0).sqrt())
    }
}
