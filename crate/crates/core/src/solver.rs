//! Lattice minimization of the regularized p-Dirichlet energy
//! `Σ h^n (|D_h u|² + ε²)^{p/2}` with Dirichlet boundary data.
//!
//! `D_h u = Σ_j e_j Δ_j u / h` is built from one-sided differences. The
//! forward stencil evaluates it at the base corner of every lattice cell; the
//! cell-averaged stencil averages the energy density over all `2^n` corners of
//! the cell, which restores second-order consistency for `p ≠ 2`.

use rayon::prelude::*;
use serde::Serialize;

use crate::clifford::{blade_product, Multivector};
use crate::error::{Error, Result};
use crate::quadrature::pairwise_sum;

/// Cells per parallel chunk; fixes the reduction tree.
const CHUNK: usize = 512;

/// Region covered by the lattice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Region {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// `inner ≤ |x| ≤ outer` in `R^n`.
    Annulus { n: usize, inner: f64, outer: f64 },
}

impl Region {
    pub fn dim(&self) -> usize {
        match self {
            Region::Box { lo, .. } => lo.len(),
            Region::Annulus { n, .. } => *n,
        }
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Region::Box { lo, hi } => (lo.clone(), hi.clone()),
            Region::Annulus { n, outer, .. } => (vec![-outer; *n], vec![*outer; *n]),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        const TOL: f64 = 1e-12;
        match self {
            Region::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| *v >= a - TOL && *v <= b + TOL),
            Region::Annulus { inner, outer, .. } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                r >= inner - TOL && r <= outer + TOL
            }
        }
    }

    /// Parses `box` (unit cube), `box:lo,hi` (cube `[lo, hi]^n`) or
    /// `annulus:a,b`.
    pub fn parse(spec: &str, n: usize) -> Result<Self> {
        let bad = || Error::Parameter(format!("cannot parse region '{spec}'"));
        let (kind, args) = match spec.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a)),
            None => (spec.trim(), None),
        };
        let pair = |a: &str| -> Result<(f64, f64)> {
            let v: Vec<f64> = a.split(',').map(|s| s.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
            if v.len() != 2 {
                return Err(bad());
            }
            Ok((v[0], v[1]))
        };
        match (kind, args) {
            ("box", None) => Ok(Region::Box {
                lo: vec![0.0; n],
                hi: vec![1.0; n],
            }),
            ("box", Some(a)) => {
                let (lo, hi) = pair(a)?;
                if !(hi > lo) {
                    return Err(bad());
                }
                Ok(Region::Box {
                    lo: vec![lo; n],
                    hi: vec![hi; n],
                })
            }
            ("annulus", Some(a)) => {
                let (inner, outer) = pair(a)?;
                if !(inner > 0.0 && outer > inner) {
                    return Err(bad());
                }
                Ok(Region::Annulus { n, inner, outer })
            }
            _ => Err(bad()),
        }
    }
}

/// One-sided difference stencil of the discrete Dirac operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stencil {
    Forward,
    CellAveraged,
}

/// Lattice nodes of a region, with free (interior) and Dirichlet nodes.
///
/// A cell is the lattice hypercube at a base node; it exists when every node
/// its stencil reads lies in the region. A node is free when every cell whose
/// stencil reads it exists, so all `2n` neighbours are nodes.
#[derive(Debug, Clone, Serialize)]
pub struct LatticeDomain {
    n: usize,
    h: f64,
    lo: Vec<f64>,
    counts: Vec<usize>,
    #[serde(skip)]
    strides: Vec<usize>,
    region: Region,
    stencil: Stencil,
    #[serde(skip)]
    in_set: Vec<bool>,
    #[serde(skip)]
    free: Vec<bool>,
    #[serde(skip)]
    cells: Vec<usize>,
    #[serde(skip)]
    cell_of: Vec<usize>,
    #[serde(skip)]
    free_nodes: Vec<usize>,
    /// Corner masks `σ` at which the gradient is evaluated.
    #[serde(skip)]
    corners: Vec<usize>,
    /// Masks of the cell nodes read by the stencil.
    #[serde(skip)]
    reads: Vec<usize>,
    /// `(read offset, corner index, axis, sign)` for the adjoint gather.
    #[serde(skip)]
    adjoint: Vec<(usize, usize, usize, f64)>,
    /// Node offsets `(hi, lo)` of the edge along each axis at each corner.
    #[serde(skip)]
    edges: Vec<Vec<(usize, usize)>>,
}

const NONE: usize = usize::MAX;

impl LatticeDomain {
    pub fn new(region: Region, h: f64, stencil: Stencil) -> Result<Self> {
        let n = region.dim();
        if n == 0 || n > 6 {
            return Err(Error::Parameter(format!("lattice dimension must lie in 1..=6, got {n}")));
        }
        if !(h > 0.0) {
            return Err(Error::Parameter(format!("spacing must be positive, got {h}")));
        }
        let (lo, hi) = region.bounding_box();
        let mut counts = Vec::with_capacity(n);
        for j in 0..n {
            let steps = (hi[j] - lo[j]) / h;
            let rounded = steps.round();
            if (steps - rounded).abs() > 1e-9 * steps.max(1.0) || rounded < 2.0 {
                return Err(Error::Parameter(format!(
                    "box side {} is not a multiple (≥ 2) of the spacing {h}",
                    hi[j] - lo[j]
                )));
            }
            counts.push(rounded as usize + 1);
        }
        let mut strides = vec![1usize; n];
        for j in 1..n {
            strides[j] = strides[j - 1] * counts[j - 1];
        }
        let total = strides[n - 1] * counts[n - 1];

        let corners: Vec<usize> = match stencil {
            Stencil::Forward => vec![0],
            Stencil::CellAveraged => (0..1usize << n).collect(),
        };
        let mut reads: Vec<usize> = Vec::new();
        for &s in &corners {
            for m in std::iter::once(s).chain((0..n).map(|j| s ^ (1 << j))) {
                if !reads.contains(&m) {
                    reads.push(m);
                }
            }
        }
        reads.sort_unstable();
        let mut adjoint = Vec::new();
        for &r in &reads {
            for (k, &s) in corners.iter().enumerate() {
                for j in 0..n {
                    let bit = 1 << j;
                    if r == s | bit {
                        adjoint.push((r, k, j, 1.0));
                    } else if r == s & !bit {
                        adjoint.push((r, k, j, -1.0));
                    }
                }
            }
        }

        let mut domain = Self {
            n,
            h,
            lo,
            counts,
            strides,
            region,
            stencil,
            in_set: Vec::new(),
            free: Vec::new(),
            cells: Vec::new(),
            cell_of: Vec::new(),
            free_nodes: Vec::new(),
            corners,
            reads,
            adjoint,
            edges: Vec::new(),
        };
        domain.edges = domain
            .corners
            .iter()
            .map(|&s| (0..n).map(|j| (domain.offset(s | (1 << j)), domain.offset(s & !(1 << j)))).collect())
            .collect();
        domain.adjoint = domain.adjoint.iter().map(|&(r, k, j, sign)| (domain.offset(r), k, j, sign)).collect();
        domain.in_set = (0..total).map(|i| domain.region.contains(&domain.coords(i))).collect();
        domain.cell_of = vec![NONE; total];
        for i in 0..total {
            if domain.reads.iter().all(|&m| domain.shifted(i, m, 1).is_some_and(|k| domain.in_set[k])) {
                domain.cell_of[i] = domain.cells.len();
                domain.cells.push(i);
            }
        }
        domain.free = (0..total)
            .map(|i| {
                domain.in_set[i]
                    && domain
                        .reads
                        .iter()
                        .all(|&m| domain.shifted(i, m, -1).is_some_and(|b| domain.cell_of[b] != NONE))
            })
            .collect();
        domain.free_nodes = (0..total).filter(|&i| domain.free[i]).collect();
        if domain.free_nodes.is_empty() {
            return Err(Error::Parameter("lattice has no interior nodes".into()));
        }
        Ok(domain)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn stencil(&self) -> Stencil {
        self.stencil
    }

    pub fn node_count(&self) -> usize {
        self.in_set.len()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free_nodes
    }

    pub fn is_free(&self, i: usize) -> bool {
        self.free[i]
    }

    pub fn in_region(&self, i: usize) -> bool {
        self.in_set[i]
    }

    /// Region nodes that are not free.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&i| self.in_set[i] && !self.free[i]).collect()
    }

    pub fn coords(&self, i: usize) -> Vec<f64> {
        let mut rem = i;
        (0..self.n)
            .map(|j| {
                let k = rem % self.counts[j];
                rem /= self.counts[j];
                self.lo[j] + self.h * k as f64
            })
            .collect()
    }

    /// Node `i + dir·σ` for a corner mask `σ`, if it lies on the grid.
    fn shifted(&self, i: usize, mask: usize, dir: isize) -> Option<usize> {
        let mut rem = i;
        let mut out = i as isize;
        for j in 0..self.n {
            let k = (rem % self.counts[j]) as isize;
            rem /= self.counts[j];
            if mask & (1 << j) != 0 {
                let moved = k + dir;
                if moved < 0 || moved >= self.counts[j] as isize {
                    return None;
                }
                out += dir * self.strides[j] as isize;
            }
        }
        Some(out as usize)
    }

    fn offset(&self, mask: usize) -> usize {
        (0..self.n).filter(|j| mask & (1 << j) != 0).map(|j| self.strides[j]).sum()
    }
}

/// Node values: scalars (`width = 1`) or `Cl_n` coefficients (`width = 2^n`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticeField {
    width: usize,
    values: Vec<f64>,
}

impl LatticeField {
    pub fn zeros(domain: &LatticeDomain, width: usize) -> Result<Self> {
        if width != 1 && width != 1 << domain.n {
            return Err(Error::Parameter(format!("field width must be 1 or 2^n, got {width}")));
        }
        Ok(Self {
            width,
            values: vec![0.0; width * domain.node_count()],
        })
    }

    /// Samples `f` at every region node; nodes outside the region stay zero.
    pub fn from_fn(domain: &LatticeDomain, width: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let mut out = Self::zeros(domain, width)?;
        for i in 0..domain.node_count() {
            if domain.in_set[i] {
                let v = f(&domain.coords(i));
                if v.len() != width {
                    return Err(Error::DimensionMismatch(v.len(), width));
                }
                out.values[i * width..(i + 1) * width].copy_from_slice(&v);
            }
        }
        Ok(out)
    }

    /// Scalar field sampled from a real function.
    pub fn from_scalar_fn(domain: &LatticeDomain, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        Self::from_fn(domain, 1, |x| vec![f(x)])
    }

    /// Dirichlet data from `boundary` with the free nodes set to `fill`.
    pub fn dirichlet(domain: &LatticeDomain, boundary: &Self, fill: &[f64]) -> Result<Self> {
        if fill.len() != boundary.width {
            return Err(Error::DimensionMismatch(fill.len(), boundary.width));
        }
        let mut out = boundary.clone();
        for &i in &domain.free_nodes {
            out.values[i * out.width..(i + 1) * out.width].copy_from_slice(fill);
        }
        Ok(out)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    pub fn node_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.width..(i + 1) * self.width]
    }

    pub fn node_multivector(&self, domain: &LatticeDomain, i: usize) -> Multivector {
        let mut m = Multivector::zero(domain.n);
        for (k, v) in self.node(i).iter().enumerate() {
            m.set(k, *v);
        }
        m
    }

    /// Largest absolute entry over the free nodes.
    pub fn free_sup(&self, domain: &LatticeDomain) -> f64 {
        domain
            .free_nodes
            .iter()
            .flat_map(|&i| self.node(i).iter())
            .fold(0.0, |a: f64, v| a.max(v.abs()))
    }

    fn dot_free(&self, other: &Self, domain: &LatticeDomain) -> f64 {
        let parts: Vec<Vec<f64>> = domain
            .free_nodes
            .par_chunks(CHUNK)
            .map(|chunk| vec![chunk.iter().map(|&i| self.node(i).iter().zip(other.node(i)).map(|(a, b)| a * b).sum::<f64>()).sum()])
            .collect();
        pairwise_sum(&parts, 1)[0]
    }
}

/// Energy density parameters.
#[derive(Debug, Clone, Copy)]
struct Density {
    p: f64,
    eps2: f64,
    /// `2p` when `p/2` is a multiple of 1/4.
    quarters: Option<i32>,
}

impl Density {
    fn new(p: f64, eps: f64) -> Self {
        let q = 2.0 * p;
        let quarters = (q == q.round() && q.abs() < 64.0).then_some(q as i32);
        Self { p, eps2: eps * eps, quarters }
    }

    /// `(|G|² + ε²)^{p/2}`.
    fn value(&self, g2: f64) -> f64 {
        let a = g2 + self.eps2;
        match self.quarters {
            Some(k) => a.sqrt().sqrt().powi(k),
            None => a.powf(0.5 * self.p),
        }
    }

    /// `(a + da)^{p/2} − a^{p/2}` without cancellation, given `a^{p/2}`.
    fn difference(&self, g2: f64, dg2: f64, base: f64) -> f64 {
        let a = g2 + self.eps2;
        if a == 0.0 {
            return dg2.max(0.0).powf(0.5 * self.p);
        }
        if self.p == 2.0 {
            return dg2;
        }
        base * (0.5 * self.p * (dg2 / a).ln_1p()).exp_m1()
    }
}

fn validate(domain: &LatticeDomain, u: &LatticeField) -> Result<()> {
    if u.values.len() != u.width * domain.node_count() || (u.width != 1 && u.width != 1 << domain.n) {
        return Err(Error::Contract("field does not conform to its lattice".into()));
    }
    Ok(())
}

fn check_energy_params(p: f64, eps: f64) -> Result<()> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::Parameter(format!("p must exceed 1, got {p}")));
    }
    if !(eps >= 0.0) {
        return Err(Error::Parameter(format!("ε must be non-negative, got {eps}")));
    }
    if p < 2.0 && eps == 0.0 {
        return Err(Error::Parameter("p < 2 requires ε > 0".into()));
    }
    Ok(())
}

/// Sign table `e_j e_m = sign · e_{m ^ bit_j}`, indexed `[j * 2^n + m]`.
fn vector_signs(n: usize) -> Vec<f64> {
    let size = 1usize << n;
    (0..n).flat_map(|j| (0..size).map(move |m| blade_product(1 << j, m).1)).collect()
}

/// `D_h u` at corner `k` of the cell at `base`, written into `g` (length `2^n`).
#[inline]
fn corner_gradient(domain: &LatticeDomain, u: &LatticeField, signs: &[f64], base: usize, k: usize, g: &mut [f64]) {
    let size = g.len();
    let w = u.width;
    g.iter_mut().for_each(|v| *v = 0.0);
    let inv_h = 1.0 / domain.h;
    for (j, &(hi, lo)) in domain.edges[k].iter().enumerate() {
        let bit = 1 << j;
        let (hi, lo) = (base + hi, base + lo);
        if w == 1 {
            g[bit] += (u.values[hi] - u.values[lo]) * inv_h;
            continue;
        }
        for m in 0..w {
            let d = (u.values[hi * w + m] - u.values[lo * w + m]) * inv_h;
            g[m ^ bit] += signs[j * size + m] * d;
        }
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

/// `Σ_cells h^n · mean_corners (|D_h u|² + ε²)^{p/2}`.
pub fn discrete_energy(domain: &LatticeDomain, u: &LatticeField, p: f64, eps: f64) -> Result<f64> {
    validate(domain, u)?;
    check_energy_params(p, eps)?;
    let density = Density::new(p, eps);
    let signs = vector_signs(domain.n);
    let weight = domain.h.powi(domain.n as i32) / domain.corners.len() as f64;
    let parts: Vec<Vec<f64>> = domain
        .cells
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; 1 << domain.n];
            let mut acc = 0.0;
            for &b in chunk {
                for k in 0..domain.corners.len() {
                    corner_gradient(domain, u, &signs, b, k, &mut g);
                    acc += density.value(norm2(&g));
                }
            }
            vec![weight * acc]
        })
        .collect();
    Ok(pairwise_sum(&parts, 1)[0])
}

/// `E(u + α d) − E(u)`, evaluated per corner without cancellation.
pub fn energy_difference(domain: &LatticeDomain, u: &LatticeField, d: &LatticeField, alpha: f64, p: f64, eps: f64) -> Result<f64> {
    validate(domain, u)?;
    validate(domain, d)?;
    check_energy_params(p, eps)?;
    let density = Density::new(p, eps);
    let (_, state) = gradient_with_state(domain, u, density);
    Ok(CornerCache::new(domain, &state, d, density).difference(alpha))
}

/// Exact derivative of [`discrete_energy`] with respect to every free-node
/// coefficient; all other entries are zero.
pub fn energy_gradient(domain: &LatticeDomain, u: &LatticeField, p: f64, eps: f64) -> Result<LatticeField> {
    validate(domain, u)?;
    check_energy_params(p, eps)?;
    Ok(gradient_with_state(domain, u, Density::new(p, eps)).0)
}

/// Corner gradients `G u`, `|G u|²` and `(|G u|² + ε²)^{p/2}` of one iterate.
struct CornerState {
    gu: Vec<f64>,
    g2: Vec<f64>,
    rho: Vec<f64>,
}

fn gradient_with_state(domain: &LatticeDomain, u: &LatticeField, density: Density) -> (LatticeField, CornerState) {
    let n = domain.n;
    let size = 1usize << n;
    let k = domain.corners.len();
    let signs = vector_signs(n);
    let weight = domain.h.powi(n as i32) / k as f64;
    let corners = domain.cells.len() * k;

    let mut gu = vec![0.0; corners * size];
    let mut g2 = vec![0.0; corners];
    let mut rho = vec![0.0; corners];
    // scale = weight · ρ'(|G|²), so the corner flux is scale · G
    let mut scale = vec![0.0; corners];
    gu.par_chunks_mut(CHUNK * k * size)
        .zip(g2.par_chunks_mut(CHUNK * k))
        .zip(rho.par_chunks_mut(CHUNK * k))
        .zip(scale.par_chunks_mut(CHUNK * k))
        .zip(domain.cells.par_chunks(CHUNK))
        .for_each(|((((gs, g2s), rhos), scales), cells)| {
            for (ci, &b) in cells.iter().enumerate() {
                for c in 0..k {
                    let at = ci * k + c;
                    let g = &mut gs[at * size..(at + 1) * size];
                    corner_gradient(domain, u, &signs, b, c, g);
                    let q = norm2(g);
                    let a = q + density.eps2;
                    let r = density.value(q);
                    g2s[at] = q;
                    rhos[at] = r;
                    scales[at] = if a == 0.0 { 0.0 } else { weight * density.p * r / a };
                }
            }
        });

    let w = u.width;
    let inv_h = 1.0 / domain.h;
    let mut grad = LatticeField {
        width: w,
        values: vec![0.0; u.values.len()],
    };
    grad.values.par_chunks_mut(CHUNK * w).enumerate().for_each(|(chunk, block)| {
        for (local, out) in block.chunks_mut(w).enumerate() {
            let i = chunk * CHUNK + local;
            if !domain.free[i] {
                continue;
            }
            for &(r, c, j, sign) in &domain.adjoint {
                let corner = domain.cell_of[i - r] * k + c;
                let f = sign * inv_h * scale[corner];
                let at = corner * size;
                let bit = 1 << j;
                for m in 0..w {
                    out[m] += f * signs[j * size + m] * gu[at + (m ^ bit)];
                }
            }
        }
    });
    (grad, CornerState { gu, g2, rho })
}

/// Per-corner `|G u|²`, `(|G u|² + ε²)^{p/2}`, `G u · G d` and `|G d|²`,
/// reused across trial steps of one line search.
struct CornerCache {
    weight: f64,
    density: Density,
    terms: Vec<[f64; 4]>,
}

impl CornerCache {
    fn new(domain: &LatticeDomain, state: &CornerState, d: &LatticeField, density: Density) -> Self {
        let n = domain.n;
        let size = 1usize << n;
        let k = domain.corners.len();
        let signs = vector_signs(n);
        let mut terms = vec![[0.0; 4]; domain.cells.len() * k];
        terms
            .par_chunks_mut(CHUNK * k)
            .enumerate()
            .for_each(|(chunk, out)| {
                let mut gd = vec![0.0; size];
                for (local, t) in out.iter_mut().enumerate() {
                    let corner = chunk * CHUNK * k + local;
                    corner_gradient(domain, d, &signs, domain.cells[corner / k], corner % k, &mut gd);
                    let ga = &state.gu[corner * size..(corner + 1) * size];
                    let cross: f64 = ga.iter().zip(&gd).map(|(x, y)| x * y).sum();
                    *t = [state.g2[corner], state.rho[corner], cross, norm2(&gd)];
                }
            });
        Self {
            weight: domain.h.powi(n as i32) / k as f64,
            density,
            terms,
        }
    }

    fn difference(&self, alpha: f64) -> f64 {
        let parts: Vec<Vec<f64>> = self
            .terms
            .par_chunks(4 * CHUNK)
            .map(|chunk| {
                let acc: f64 = chunk
                    .iter()
                    .map(|&[g2, base, cross, dd]| self.density.difference(g2, alpha * (2.0 * cross + alpha * dd), base))
                    .sum();
                vec![self.weight * acc]
            })
            .collect();
        pairwise_sum(&parts, 1)[0]
    }
}

/// Optimizer settings.
#[derive(Debug, Clone, Serialize)]
pub struct SolverConfig {
    pub p: f64,
    /// Final regularization ε.
    pub epsilon: f64,
    /// ε stages; `None` uses 0.1 halving down to `epsilon` for p < 2 and the
    /// single stage `epsilon` otherwise.
    pub eps_schedule: Option<Vec<f64>>,
    /// Stop when `sup |∇E| ≤ gradient_tolerance · h^n`.
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    /// Armijo sufficient-decrease constant.
    pub sufficient_decrease: f64,
    /// Backtracking factor.
    pub backtrack: f64,
    /// Polak-Ribière+ conjugate directions instead of steepest descent.
    pub conjugate_gradient: bool,
}

impl SolverConfig {
    pub fn new(p: f64) -> Self {
        Self {
            p,
            epsilon: if p < 2.0 { 1e-3 } else { 0.0 },
            eps_schedule: None,
            gradient_tolerance: 1e-8,
            max_iterations: 20_000,
            sufficient_decrease: 1e-4,
            backtrack: 0.5,
            conjugate_gradient: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_energy_params(self.p, self.epsilon)?;
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 0.5) {
            return Err(Error::Parameter("sufficient-decrease constant must lie in (0, 0.5)".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::Parameter("backtracking factor must lie in (0, 1)".into()));
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::Parameter("gradient tolerance must be positive".into()));
        }
        for &e in self.schedule().iter() {
            check_energy_params(self.p, e)?;
        }
        Ok(())
    }

    /// The ε stages actually used.
    pub fn schedule(&self) -> Vec<f64> {
        if let Some(s) = &self.eps_schedule {
            return s.clone();
        }
        if self.p >= 2.0 || self.epsilon >= 0.1 {
            return vec![self.epsilon];
        }
        let mut out = Vec::new();
        let mut e = 0.1;
        while e > self.epsilon * (1.0 + 1e-12) {
            out.push(e);
            e *= 0.5;
        }
        out.push(self.epsilon);
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub epsilon: f64,
    pub iterations: usize,
    pub final_energy: f64,
    pub final_gradient_sup: f64,
    pub tolerance: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub final_energy: f64,
    pub final_gradient_sup: f64,
    pub tolerance: f64,
    pub stages: Vec<StageReport>,
    /// Energy after every accepted step, per stage concatenated.
    pub energy_history: Vec<f64>,
    /// `E_new − E_old` of every accepted step.
    pub energy_decrements: Vec<f64>,
    /// `sup |∇E|` at every iterate.
    pub gradient_history: Vec<f64>,
    /// Every accepted step strictly decreased the energy.
    pub monotone: bool,
}

/// Minimizes the energy over the free nodes of `initial`, whose remaining
/// region nodes carry the Dirichlet data.
///
/// Stops at `sup |∇E| ≤ tol · h^n` on the last ε stage; intermediate stages
/// stop at `10⁶` times that. Hitting the iteration cap returns the current
/// field with `converged = false`.
pub fn solve_dirichlet(domain: &LatticeDomain, initial: &LatticeField, config: &SolverConfig) -> Result<(LatticeField, SolveDiagnostics)> {
    validate(domain, initial)?;
    config.validate()?;
    let p = config.p;
    let tol = config.gradient_tolerance * domain.h.powi(domain.n as i32);
    let schedule = config.schedule();
    let mut u = initial.clone();
    let mut stages = Vec::new();
    let mut energy_history = Vec::new();
    let mut energy_decrements = Vec::new();
    let mut gradient_history = Vec::new();
    let mut total = 0usize;
    // steepest-descent step scale for a p = 2 energy
    let mut alpha = 0.1 * domain.h.powi(2 - domain.n as i32);

    for (si, &eps) in schedule.iter().enumerate() {
        let last = si + 1 == schedule.len();
        let stage_tol = if last { tol } else { 1e6 * tol };
        let density = Density::new(p, eps);
        let mut energy = discrete_energy(domain, &u, p, eps)?;
        energy_history.push(energy);
        let (mut grad, mut state) = gradient_with_state(domain, &u, density);
        let mut gsup = grad.free_sup(domain);
        gradient_history.push(gsup);
        let mut dir = negate(&grad);
        let mut gg_old = grad.dot_free(&grad, domain);
        let mut iterations = 0usize;
        let mut stalled = false;
        while gsup > stage_tol && total < config.max_iterations {
            let mut slope = grad.dot_free(&dir, domain);
            if !(slope < 0.0) {
                dir = negate(&grad);
                slope = -gg_old;
            }
            let cache = CornerCache::new(domain, &state, &dir, density);
            let armijo = |a: f64, de: f64| de <= config.sufficient_decrease * a * slope && de < 0.0;

            // trial step, then the minimizer of the quadratic through φ(0), φ'(0), φ(trial)
            let trial = 2.0 * alpha;
            let de_trial = cache.difference(trial);
            let curvature = de_trial - slope * trial;
            let mut best: Option<(f64, f64)> = None;
            if curvature > 0.0 {
                let a_star = -slope * trial * trial / (2.0 * curvature);
                if a_star.is_finite() && a_star > 0.0 {
                    let de = cache.difference(a_star);
                    if armijo(a_star, de) {
                        best = Some((a_star, de));
                    }
                }
            }
            if armijo(trial, de_trial) && best.is_none_or(|(_, de)| de_trial < de) {
                best = Some((trial, de_trial));
            }
            if best.is_none() {
                let mut a = trial;
                for _ in 0..80 {
                    a *= config.backtrack;
                    let de = cache.difference(a);
                    if armijo(a, de) {
                        best = Some((a, de));
                        break;
                    }
                }
            }
            let Some((step, de)) = best else {
                stalled = true;
                break;
            };
            alpha = step;
            axpy(&mut u, step, &dir, domain);
            energy += de;
            energy_history.push(energy);
            energy_decrements.push(de);
            total += 1;
            iterations += 1;

            let (new_grad, new_state) = gradient_with_state(domain, &u, density);
            state = new_state;
            gsup = new_grad.free_sup(domain);
            gradient_history.push(gsup);
            let gg_new = new_grad.dot_free(&new_grad, domain);
            let beta = if config.conjugate_gradient {
                let cross = new_grad.dot_free(&grad, domain);
                ((gg_new - cross) / gg_old).max(0.0)
            } else {
                0.0
            };
            let mut next = negate(&new_grad);
            if beta > 0.0 {
                axpy(&mut next, beta, &dir, domain);
            }
            dir = next;
            grad = new_grad;
            gg_old = gg_new;
        }
        stages.push(StageReport {
            epsilon: eps,
            iterations,
            final_energy: energy,
            final_gradient_sup: gsup,
            tolerance: stage_tol,
            converged: gsup <= stage_tol,
        });
        if stalled || total >= config.max_iterations {
            break;
        }
    }
    let last = stages.last().expect("at least one stage");
    let converged = stages.len() == schedule.len() && last.converged;
    let diagnostics = SolveDiagnostics {
        converged,
        iterations: total,
        final_energy: last.final_energy,
        final_gradient_sup: last.final_gradient_sup,
        tolerance: tol,
        monotone: energy_decrements.iter().all(|d| *d < 0.0),
        stages,
        energy_history,
        energy_decrements,
        gradient_history,
    };
    Ok((u, diagnostics))
}

fn negate(f: &LatticeField) -> LatticeField {
    LatticeField {
        width: f.width,
        values: f.values.iter().map(|v| -v).collect(),
    }
}

/// `u += a · d` on the free nodes.
fn axpy(u: &mut LatticeField, a: f64, d: &LatticeField, domain: &LatticeDomain) {
    let w = u.width;
    for &i in &domain.free_nodes {
        for m in 0..w {
            u.values[i * w + m] += a * d.values[i * w + m];
        }
    }
}

/// Maximum absolute and relative error of the scalar part over free nodes.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RecoveryError {
    pub max_abs: f64,
    pub max_rel: f64,
}

pub fn recovery_error(domain: &LatticeDomain, u: &LatticeField, exact: impl Fn(&[f64]) -> f64) -> RecoveryError {
    let mut out = RecoveryError { max_abs: 0.0, max_rel: 0.0 };
    for &i in &domain.free_nodes {
        let e = exact(&domain.coords(i));
        let err = (u.node(i)[0] - e).abs();
        out.max_abs = out.max_abs.max(err);
        if e != 0.0 {
            out.max_rel = out.max_rel.max(err / e.abs());
        }
    }
    out
}

/// Discrete Laplace residual `Σ_nb (u_nb − u_i)/h²` per free node, maximum
/// absolute value over nodes and components.
pub fn laplace_residual(domain: &LatticeDomain, u: &LatticeField) -> f64 {
    let w = u.width;
    let h2 = domain.h * domain.h;
    let mut worst: f64 = 0.0;
    for &i in &domain.free_nodes {
        for m in 0..w {
            let mut acc = -2.0 * domain.n as f64 * u.values[i * w + m];
            for j in 0..domain.n {
                let s = domain.strides[j];
                acc += u.values[(i + s) * w + m] + u.values[(i - s) * w + m];
            }
            worst = worst.max((acc / h2).abs());
        }
    }
    worst
}

/// Least-squares slope of `log err` against `log h`.
pub fn fitted_order(hs: &[f64], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square(h: f64, stencil: Stencil) -> LatticeDomain {
        LatticeDomain::new(Region::parse("box", 2).unwrap(), h, stencil).unwrap()
    }

    fn random_field(domain: &LatticeDomain, width: usize, seed: u64) -> LatticeField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = LatticeField::zeros(domain, width).unwrap();
        for v in u.values.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        u
    }

    #[test]
    fn region_parsing() {
        assert_eq!(Region::parse("annulus:1,2", 2).unwrap(), Region::Annulus { n: 2, inner: 1.0, outer: 2.0 });
        assert_eq!(
            Region::parse("box:-1,1", 3).unwrap(),
            Region::Box {
                lo: vec![-1.0; 3],
                hi: vec![1.0; 3]
            }
        );
        assert!(Region::parse("annulus:2,1", 2).is_err());
        assert!(Region::parse("disk", 2).is_err());
    }

    #[test]
    fn free_nodes_have_all_neighbours() {
        for stencil in [Stencil::Forward, Stencil::CellAveraged] {
            let d = LatticeDomain::new(Region::parse("annulus:1,2", 2).unwrap(), 0.125, stencil).unwrap();
            for &i in d.free_nodes() {
                for j in 0..2 {
                    assert!(d.in_region(i + d.strides[j]));
                    assert!(d.in_region(i - d.strides[j]));
                }
            }
            let sq = unit_square(0.125, stencil);
            assert_eq!(sq.free_nodes().len(), 7 * 7);
        }
        assert!(LatticeDomain::new(Region::parse("box", 2).unwrap(), 0.3, Stencil::Forward).is_err());
    }

    #[test]
    fn constant_field_energy() {
        for stencil in [Stencil::Forward, Stencil::CellAveraged] {
            let d = unit_square(0.25, stencil);
            let u = LatticeField::from_scalar_fn(&d, |_| 3.0).unwrap();
            let e = discrete_energy(&d, &u, 1.5, 0.1).unwrap();
            let expected = d.cell_count() as f64 * 0.0625 * 0.1f64.powf(1.5);
            assert!((e - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_field_energy() {
        for stencil in [Stencil::Forward, Stencil::CellAveraged] {
            let d = LatticeDomain::new(Region::parse("box", 3).unwrap(), 0.25, stencil).unwrap();
            let a = [0.5, -1.0, 2.0];
            let u = LatticeField::from_scalar_fn(&d, |x| a.iter().zip(x).map(|(p, q)| p * q).sum()).unwrap();
            let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let e = discrete_energy(&d, &u, 3.0, 0.0).unwrap();
            let expected = na.powi(3) * 0.25f64.powi(3) * d.cell_count() as f64;
            assert!((e - expected).abs() < 1e-12 * expected);
        }
    }

    /// Independent scalar forward-difference energy.
    fn scalar_forward_energy(d: &LatticeDomain, u: &LatticeField, p: f64, eps: f64) -> f64 {
        let h = d.spacing();
        let mut total = 0.0;
        for &b in &d.cells {
            let mut g2 = 0.0;
            for j in 0..d.dim() {
                let diff = (u.values[b + d.strides[j]] - u.values[b]) / h;
                g2 += diff * diff;
            }
            total += h.powi(d.dim() as i32) * (g2 + eps * eps).powf(p / 2.0);
        }
        total
    }

    #[test]
    fn forward_energy_matches_an_independent_scalar_sum() {
        let d = unit_square(0.125, Stencil::Forward);
        let u = random_field(&d, 1, 3);
        let a = discrete_energy(&d, &u, 2.5, 0.01).unwrap();
        let b = scalar_forward_energy(&d, &u, 2.5, 0.01);
        assert!((a - b).abs() < 1e-12 * b);
    }

    #[test]
    fn quadratic_energy_gradient_is_the_five_point_laplacian() {
        for stencil in [Stencil::Forward, Stencil::CellAveraged] {
            let d = unit_square(0.125, stencil);
            let u = random_field(&d, 1, 5);
            let g = energy_gradient(&d, &u, 2.0, 0.0).unwrap();
            for &i in d.free_nodes() {
                let mut lap = 4.0 * u.values[i];
                for j in 0..2 {
                    lap -= u.values[i + d.strides[j]] + u.values[i - d.strides[j]];
                }
                // E = Σ_edges (Δu)², n = 2 so h^{n−2} = 1
                assert!((g.values[i] - 2.0 * lap).abs() < 1e-10, "{stencil:?}");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (stencil, width, n, p) in [
            (Stencil::Forward, 1usize, 2usize, 1.5),
            (Stencil::CellAveraged, 1, 2, 1.5),
            (Stencil::CellAveraged, 4, 2, 3.0),
            (Stencil::Forward, 8, 3, 2.5),
            (Stencil::CellAveraged, 1, 3, 1.2),
        ] {
            let d = LatticeDomain::new(Region::parse("box", n).unwrap(), 0.25, stencil).unwrap();
            let width = if width == 1 { 1 } else { 1 << n };
            let u = random_field(&d, width, 7);
            let eps = 1e-3;
            let g = energy_gradient(&d, &u, p, eps).unwrap();
            for _ in 0..20 {
                let node = d.free_nodes()[rng.gen_range(0..d.free_nodes().len())];
                let m = rng.gen_range(0..width);
                let mut e = LatticeField::zeros(&d, width).unwrap();
                e.values[node * width + m] = 1.0;
                let s = 1e-5;
                let fd = (energy_difference(&d, &u, &e, s, p, eps).unwrap() - energy_difference(&d, &u, &e, -s, p, eps).unwrap()) / (2.0 * s);
                let exact = g.values[node * width + m];
                assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1e-3), "{stencil:?} n={n} p={p}: {fd} vs {exact}");
            }
        }
    }

    #[test]
    fn energy_difference_agrees_with_direct_evaluation() {
        let d = unit_square(0.125, Stencil::CellAveraged);
        let u = random_field(&d, 1, 1);
        let dir = random_field(&d, 1, 2);
        let a = 0.3;
        let mut moved = u.clone();
        for (x, y) in moved.values.iter_mut().zip(&dir.values) {
            *x += a * y;
        }
        let direct = discrete_energy(&d, &moved, 1.7, 0.05).unwrap() - discrete_energy(&d, &u, 1.7, 0.05).unwrap();
        let diff = energy_difference(&d, &u, &dir, a, 1.7, 0.05).unwrap();
        assert!((direct - diff).abs() < 1e-12 * direct.abs());
    }

    #[test]
    fn linear_boundary_data_is_reproduced() {
        for p in [1.5, 2.0, 3.0] {
            let d = unit_square(1.0 / 16.0, Stencil::Forward);
            let lin = |x: &[f64]| 0.3 + 1.2 * x[0] - 0.7 * x[1];
            let boundary = LatticeField::from_scalar_fn(&d, lin).unwrap();
            let init = LatticeField::dirichlet(&d, &boundary, &[0.0]).unwrap();
            let mut config = SolverConfig::new(p);
            config.epsilon = if p < 2.0 { 1e-3 } else { 0.0 };
            let (u, diag) = solve_dirichlet(&d, &init, &config).unwrap();
            assert!(diag.converged, "p={p}");
            assert!(diag.monotone);
            assert!(recovery_error(&d, &u, lin).max_abs < 1e-8, "p={p}");
        }
    }

    #[test]
    fn quadratic_harmonic_polynomial_is_recovered() {
        let d = unit_square(1.0 / 16.0, Stencil::Forward);
        let exact = |x: &[f64]| x[0] * x[0] - x[1] * x[1];
        let boundary = LatticeField::from_scalar_fn(&d, exact).unwrap();
        let init = LatticeField::dirichlet(&d, &boundary, &[0.0]).unwrap();
        let (u, diag) = solve_dirichlet(&d, &init, &SolverConfig::new(2.0)).unwrap();
        assert!(diag.converged && diag.monotone);
        assert!(recovery_error(&d, &u, exact).max_abs < 1e-6);
        assert!(laplace_residual(&d, &u) < 1e-8 / (d.spacing() * d.spacing()) * 1e-2 + 1e-8);
        assert!(diag.final_gradient_sup <= diag.tolerance);
    }

    #[test]
    fn clifford_solve_keeps_scalar_data_scalar_at_p_equal_two() {
        let d = unit_square(1.0 / 8.0, Stencil::CellAveraged);
        let f = |x: &[f64]| (x[0] + 0.5).powi(2) - 0.3 * x[1] + (3.0 * x[0] * x[1]).sin();
        let scalar = LatticeField::from_scalar_fn(&d, f).unwrap();
        let clifford = LatticeField::from_fn(&d, 4, |x| vec![f(x), 0.0, 0.0, 0.0]).unwrap();
        let config = SolverConfig::new(2.0);
        let (us, ds) = solve_dirichlet(&d, &LatticeField::dirichlet(&d, &scalar, &[0.0]).unwrap(), &config).unwrap();
        let (uc, dc) = solve_dirichlet(&d, &LatticeField::dirichlet(&d, &clifford, &[0.0; 4]).unwrap(), &config).unwrap();
        assert!(ds.converged && dc.converged);
        for &i in d.free_nodes() {
            assert!((us.node(i)[0] - uc.node(i)[0]).abs() < 1e-10);
            assert!(uc.node(i)[1..].iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn scalar_data_couples_to_bivectors_when_p_differs_from_two() {
        // the bivector gradient at scalar s is the discrete curl of |∇s|^{p−2}∇s
        let d = unit_square(1.0 / 8.0, Stencil::CellAveraged);
        let f = |x: &[f64]| (x[0] + 0.5).powi(2) - 0.3 * x[1] + (3.0 * x[0] * x[1]).sin();
        let c = LatticeField::from_fn(&d, 4, |x| vec![f(x), 0.0, 0.0, 0.0]).unwrap();
        let at_two = energy_gradient(&d, &c, 2.0, 0.0).unwrap();
        let at_three = energy_gradient(&d, &c, 3.0, 0.0).unwrap();
        let bivector = |g: &LatticeField| d.free_nodes().iter().map(|&i| g.node(i)[3].abs()).fold(0.0, f64::max);
        assert!(bivector(&at_two) < 1e-14);
        assert!(bivector(&at_three) > 1e-3);
        let forward = unit_square(1.0 / 8.0, Stencil::Forward);
        let cf = LatticeField::from_fn(&forward, 4, |x| vec![f(x), 0.0, 0.0, 0.0]).unwrap();
        let g = energy_gradient(&forward, &cf, 2.0, 0.0).unwrap();
        assert!(forward.free_nodes().iter().any(|&i| g.node(i)[3].abs() > 1e-3));
    }

    fn annulus_error(h: f64, stencil: Stencil) -> (f64, SolveDiagnostics) {
        let d = LatticeDomain::new(Region::parse("annulus:1,2", 2).unwrap(), h, stencil).unwrap();
        let exact = |x: &[f64]| 1.0 / (x[0] * x[0] + x[1] * x[1]).sqrt();
        let boundary = LatticeField::from_scalar_fn(&d, exact).unwrap();
        let init = LatticeField::dirichlet(&d, &boundary, &[0.0]).unwrap();
        let (u, diag) = solve_dirichlet(&d, &init, &SolverConfig::new(1.5)).unwrap();
        (recovery_error(&d, &u, exact).max_rel, diag)
    }

    #[test]
    fn radial_solution_is_recovered_on_the_annulus() {
        // |x|^{(p−n)/(p−1)} = 1/|x| for n = 2, p = 1.5
        let (coarse, dc) = annulus_error(1.0 / 16.0, Stencil::CellAveraged);
        let (fine, df) = annulus_error(1.0 / 32.0, Stencil::CellAveraged);
        assert!(dc.converged && df.converged && dc.monotone && df.monotone);
        assert!(fine <= 0.05);
        assert!(coarse / fine >= 2.5, "{coarse} / {fine}");
    }

    #[test]
    fn forward_stencil_is_first_order_for_p_below_two() {
        let (coarse, _) = annulus_error(1.0 / 16.0, Stencil::Forward);
        let (fine, _) = annulus_error(1.0 / 32.0, Stencil::Forward);
        let ratio = coarse / fine;
        assert!(ratio > 1.5 && ratio < 2.5, "{ratio}");
    }

    #[test]
    fn epsilon_schedule_halves_down_to_the_target() {
        let s = SolverConfig::new(1.5).schedule();
        assert_eq!(s[0], 0.1);
        assert_eq!(*s.last().unwrap(), 1e-3);
        assert!(s.windows(2).all(|w| w[1] < w[0] && w[1] >= 0.5 * w[0] - 1e-15));
        assert_eq!(SolverConfig::new(2.5).schedule(), vec![0.0]);
        let mut bad = SolverConfig::new(1.5);
        bad.epsilon = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn iteration_cap_is_reported() {
        let d = unit_square(1.0 / 16.0, Stencil::Forward);
        let boundary = LatticeField::from_scalar_fn(&d, |x| x[0] * x[1]).unwrap();
        let mut config = SolverConfig::new(2.0);
        config.max_iterations = 2;
        let (_, diag) = solve_dirichlet(&d, &LatticeField::dirichlet(&d, &boundary, &[0.0]).unwrap(), &config).unwrap();
        assert!(!diag.converged);
        assert_eq!(diag.iterations, 2);
    }
}
