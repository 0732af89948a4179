//! Clifford-valued fields on domains of `R^n`, the finite-difference
//! euclidean Dirac operator `D = Σ e_j ∂/∂x_j`, and strong-form residuals.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::clifford::Multivector;
use crate::error::{Error, Result};
use crate::mobius::VahlenMatrix;

/// Default finite-difference step.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Minimum clearance between a working domain and singular sets or poles.
pub const DOMAIN_MARGIN: f64 = 1e-3;

/// `|f|` below this threshold counts as a zero of the field.
pub const VANISHING_NORM: f64 = 1e-10;

pub type EvalFn = Arc<dyn Fn(&[f64]) -> Multivector + Send + Sync>;
pub type GradFn = Arc<dyn Fn(&[f64]) -> Vec<Multivector> + Send + Sync>;

/// A `Cl_n`-valued function on a region of `R^n`, optionally with its
/// closed-form partial derivatives.
#[derive(Clone)]
pub struct AnalyticField {
    dim: usize,
    label: String,
    eval: EvalFn,
    grad: Option<GradFn>,
    singular: Vec<Vec<f64>>,
}

impl fmt::Debug for AnalyticField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticField")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .field("has_gradient", &self.grad.is_some())
            .field("singular", &self.singular)
            .finish()
    }
}

impl AnalyticField {
    pub fn new(
        dim: usize,
        label: impl Into<String>,
        eval: impl Fn(&[f64]) -> Multivector + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            label: label.into(),
            eval: Arc::new(eval),
            grad: None,
            singular: Vec::new(),
        }
    }

    pub fn with_gradient(
        mut self,
        grad: impl Fn(&[f64]) -> Vec<Multivector> + Send + Sync + 'static,
    ) -> Self {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn with_singularity(mut self, point: Vec<f64>) -> Self {
        assert_eq!(point.len(), self.dim);
        self.singular.push(point);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn singular_points(&self) -> &[Vec<f64>] {
        &self.singular
    }

    pub fn has_gradient(&self) -> bool {
        self.grad.is_some()
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> Multivector {
        (self.eval)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Option<Vec<Multivector>> {
        self.grad.as_ref().map(|g| g(x))
    }

    /// `Σ e_j ∂_j f` from the closed-form gradient.
    pub fn analytic_dirac(&self, x: &[f64]) -> Option<Multivector> {
        self.gradient(x).map(|g| dirac_from_partials(&g))
    }

    /// Sup-norm distance from `x` to the nearest declared singular point.
    pub fn singular_distance(&self, x: &[f64]) -> f64 {
        self.singular
            .iter()
            .map(|s| s.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(f64::INFINITY, f64::min)
    }

    /// `x ↦ f(x − shift)`; singularities move with the field.
    pub fn translated(&self, shift: &[f64]) -> Self {
        assert_eq!(shift.len(), self.dim);
        let s: Arc<[f64]> = shift.into();
        let eval = self.eval.clone();
        let s1 = s.clone();
        let mut out = Self::new(self.dim, format!("{} shifted by {:?}", self.label, shift), move |x| {
            let y: Vec<f64> = x.iter().zip(s1.iter()).map(|(a, b)| a - b).collect();
            eval(&y)
        });
        if let Some(g) = self.grad.clone() {
            let s2 = s.clone();
            out = out.with_gradient(move |x| {
                let y: Vec<f64> = x.iter().zip(s2.iter()).map(|(a, b)| a - b).collect();
                g(&y)
            });
        }
        out.singular = self
            .singular
            .iter()
            .map(|p| p.iter().zip(shift).map(|(a, b)| a + b).collect())
            .collect();
        out
    }

    /// The identity field `x ↦ x`.
    pub fn identity(n: usize) -> Self {
        Self::new(n, "identity", Multivector::vector)
            .with_gradient(move |_| (1..=n).map(|j| Multivector::e(n, j)).collect())
    }

    pub fn constant(value: Multivector) -> Self {
        let n = value.dim();
        let v = value.clone();
        Self::new(n, "constant", move |_| v.clone())
            .with_gradient(move |_| vec![Multivector::zero(n); n])
    }

    /// Scalar linear field `x ↦ a·x`.
    pub fn linear_scalar(a: &[f64]) -> Self {
        let n = a.len();
        let a1: Vec<f64> = a.to_vec();
        let a2 = a1.clone();
        Self::new(n, "linear scalar", move |x| {
            Multivector::scalar(n, a1.iter().zip(x).map(|(p, q)| p * q).sum())
        })
        .with_gradient(move |_| a2.iter().map(|&v| Multivector::scalar(n, v)).collect())
    }

    /// Scalar field `x ↦ |x|^2`.
    pub fn norm_squared(n: usize) -> Self {
        Self::new(n, "|x|^2", move |x| {
            Multivector::scalar(n, x.iter().map(|v| v * v).sum())
        })
        .with_gradient(move |x| x.iter().map(|&v| Multivector::scalar(n, 2.0 * v)).collect())
    }
}

/// `Σ_j e_j A_j` for a list of partial derivatives.
pub fn dirac_from_partials(partials: &[Multivector]) -> Multivector {
    let n = partials.len();
    let mut acc = Multivector::zero(partials[0].dim());
    for (j, pj) in partials.iter().enumerate() {
        debug_assert!(j < n);
        acc += &(&Multivector::e(pj.dim(), j + 1) * pj);
    }
    acc
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::Parameter(format!("p must exceed 1, got {p}")));
    }
    Ok(())
}

/// Field `x ↦ x / |x|^k` with closed-form gradient; singular at the origin.
fn radial_vector_field(n: usize, k: f64, label: String) -> AnalyticField {
    AnalyticField::new(n, label, move |x| {
        let r = norm(x);
        Multivector::vector(x).scale(r.powf(-k))
    })
    .with_gradient(move |x| {
        let r = norm(x);
        let rk = r.powf(-k);
        let rk2 = r.powf(-k - 2.0);
        let xv = Multivector::vector(x);
        (0..n)
            .map(|j| &Multivector::e(n, j + 1).scale(rk) - &xv.scale(k * x[j] * rk2))
            .collect()
    })
    .with_singularity(vec![0.0; n])
}

/// The Cauchy kernel `x / |x|^n`, annihilated by `D` away from 0.
pub fn cauchy_kernel(n: usize) -> Result<AnalyticField> {
    if n < 2 {
        return Err(Error::Parameter("the Cauchy kernel needs n >= 2".into()));
    }
    Ok(radial_vector_field(n, n as f64, "cauchy kernel".into()))
}

/// Exponent `(n + p − 2)/(p − 1)` of the radial p-Dirac solution.
pub fn p_dirac_exponent(n: usize, p: f64) -> f64 {
    (n as f64 + p - 2.0) / (p - 1.0)
}

/// `x / |x|^{(n+p-2)/(p-1)}`, whose p-nonlinearity `|f|^{p-2} f` is the
/// Cauchy kernel.
pub fn p_dirac_solution(n: usize, p: f64) -> Result<AnalyticField> {
    check_p(p)?;
    if n < 2 {
        return Err(Error::Parameter("n must be at least 2".into()));
    }
    Ok(radial_vector_field(
        n,
        p_dirac_exponent(n, p),
        format!("p-Dirac solution (n={n}, p={p})"),
    ))
}

/// Exponent `(p − n)/(p − 1)` of the radial p-harmonic function (p ≠ n).
pub fn p_harmonic_exponent(n: usize, p: f64) -> f64 {
    (p - n as f64) / (p - 1.0)
}

/// Scalar radial p-harmonic function: `|x|^{(p-n)/(p-1)}`, or `ln|x|` at p = n.
pub fn p_harmonic_radial(n: usize, p: f64) -> Result<AnalyticField> {
    check_p(p)?;
    if n < 2 {
        return Err(Error::Parameter("n must be at least 2".into()));
    }
    let field = if (p - n as f64).abs() < 1e-14 {
        AnalyticField::new(n, format!("ln|x| (n={n})"), move |x| {
            Multivector::scalar(n, norm(x).ln())
        })
        .with_gradient(move |x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            x.iter().map(|&v| Multivector::scalar(n, v / r2)).collect()
        })
    } else {
        let a = p_harmonic_exponent(n, p);
        AnalyticField::new(n, format!("|x|^{a} (n={n}, p={p})"), move |x| {
            Multivector::scalar(n, norm(x).powf(a))
        })
        .with_gradient(move |x| {
            let c = a * norm(x).powf(a - 2.0);
            x.iter().map(|&v| Multivector::scalar(n, c * v)).collect()
        })
    };
    Ok(field.with_singularity(vec![0.0; n]))
}

/// Central-difference Dirac operator of an arbitrary fallible map, with
/// optional fourth-order Richardson extrapolation from steps `h` and `h/2`.
pub fn dirac_fd_with<F>(dim: usize, f: F, x: &[f64], h: f64, richardson: bool) -> Result<Multivector>
where
    F: Fn(&[f64]) -> Result<Multivector>,
{
    let central = |step: f64| -> Result<Multivector> {
        let mut acc: Option<Multivector> = None;
        let mut xs = x.to_vec();
        for j in 0..dim {
            xs[j] = x[j] + step;
            let fp = f(&xs)?;
            xs[j] = x[j] - step;
            let fm = f(&xs)?;
            xs[j] = x[j];
            let diff = (&fp - &fm).scale(0.5 / step);
            let term = &Multivector::e(diff.dim(), j + 1) * &diff;
            acc = Some(match acc {
                None => term,
                Some(a) => a + term,
            });
        }
        Ok(acc.expect("dimension is at least 1"))
    };
    if richardson {
        let coarse = central(h)?;
        let fine = central(h / 2.0)?;
        Ok((fine.scale(4.0) - coarse).scale(1.0 / 3.0))
    } else {
        central(h)
    }
}

/// Partial derivatives of an arbitrary fallible map by central differences.
pub fn partials_fd_with<F>(dim: usize, f: F, x: &[f64], h: f64, richardson: bool) -> Result<Vec<Multivector>>
where
    F: Fn(&[f64]) -> Result<Multivector>,
{
    let central = |step: f64, j: usize| -> Result<Multivector> {
        let mut xs = x.to_vec();
        xs[j] = x[j] + step;
        let fp = f(&xs)?;
        xs[j] = x[j] - step;
        let fm = f(&xs)?;
        Ok((&fp - &fm).scale(0.5 / step))
    };
    (0..dim)
        .map(|j| {
            if richardson {
                let c = central(h, j)?;
                let fine = central(h / 2.0, j)?;
                Ok((fine.scale(4.0) - c).scale(1.0 / 3.0))
            } else {
                central(h, j)
            }
        })
        .collect()
}

fn check_stencil(f: &AnalyticField, x: &[f64], extent: f64) -> Result<()> {
    if x.len() != f.dim() {
        return Err(Error::DimensionMismatch(f.dim(), x.len()));
    }
    if f.singular_distance(x) <= extent {
        return Err(Error::Stencil { point: x.to_vec() });
    }
    Ok(())
}

/// `Σ_j e_j (f(x + h e_j) − f(x − h e_j)) / 2h`, optionally Richardson-extrapolated.
pub fn dirac_fd(f: &AnalyticField, x: &[f64], h: f64, richardson: bool) -> Result<Multivector> {
    check_stencil(f, x, h)?;
    dirac_fd_with(f.dim(), |y| Ok(f.value(y)), x, h, richardson)
}

/// `|v|^{p-2} v`, rejecting near-zero `v` when p < 2.
pub fn p_nonlinearity(v: &Multivector, p: f64, at: &[f64]) -> Result<Multivector> {
    let r = v.norm();
    if p < 2.0 && r < VANISHING_NORM {
        return Err(Error::VanishingNorm { point: at.to_vec() });
    }
    if p == 2.0 {
        return Ok(v.clone());
    }
    if r == 0.0 {
        return Ok(Multivector::zero(v.dim()));
    }
    Ok(v.scale(r.powf(p - 2.0)))
}

/// Strong p-Dirac residual `D(|f|^{p-2} f)` at `x`.
pub fn p_dirac_residual(f: &AnalyticField, p: f64, x: &[f64], h: f64, richardson: bool) -> Result<Multivector> {
    check_p(p)?;
    check_stencil(f, x, h)?;
    dirac_fd_with(f.dim(), |y| p_nonlinearity(&f.value(y), p, y), x, h, richardson)
}

/// `Dh` from the closed-form gradient when present, otherwise by Richardson FD.
pub fn dirac_of(field: &AnalyticField, x: &[f64], h: f64) -> Result<Multivector> {
    match field.analytic_dirac(x) {
        Some(d) => Ok(d),
        None => dirac_fd(field, x, h, true),
    }
}

/// Strong p-harmonic residual `D(|Dh|^{p-2} Dh)` at `x`.
pub fn p_harmonic_residual(
    field: &AnalyticField,
    p: f64,
    x: &[f64],
    h: f64,
    richardson: bool,
) -> Result<Multivector> {
    check_p(p)?;
    let extent = if field.has_gradient() { h } else { 2.0 * h };
    check_stencil(field, x, extent)?;
    dirac_fd_with(
        field.dim(),
        |y| {
            let d = dirac_of(field, y, h)?;
            p_nonlinearity(&d, p, y)
        },
        x,
        h,
        richardson,
    )
}

/// Result of checking the Dirac-operator transfer rule under a Möbius map.
#[derive(Debug, Clone, Serialize)]
pub struct Lemma1Report {
    /// `D_y ψ(y)` at `y = M(x)`.
    pub left: Multivector,
    /// `σ |cx+d|^2 rev(cx+d)^{-1} Σ e_j rev(cx+d) ∂_j[ψ(M(x))]`.
    pub right: Multivector,
    /// σ = +1 when `cx+d` is even, −1 when odd (orientation-reversing `M`).
    pub parity_sign: f64,
    pub discrepancy: f64,
    /// Operator form `J_{-1}^{-1} D_x (J_1 ψ(M(x)))`, derivative on both factors.
    pub operator_discrepancy: f64,
    /// The transfer rule without the conformal scale `|cx+d|^2`.
    pub unscaled_discrepancy: f64,
}

/// Compares `D_y ψ(y)` with its pullback to `x`-coordinates.
///
/// The pulled-back operator carries the conformal scale `|cx+d|^2` and the
/// sign σ of the parity of `cx+d`; the report also records the discrepancy
/// with the scale omitted.
pub fn lemma1_check(m: &VahlenMatrix, psi: &AnalyticField, x: &[f64], h: f64) -> Result<Lemma1Report> {
    let y = m.apply(x)?;
    let left = dirac_fd(psi, &y, h, true)?;

    let g = m.denominator(x)?;
    let gt = g.reversion();
    let gt_inv = gt.lipschitz_inverse()?;
    let pulled = |z: &[f64]| -> Result<Multivector> { Ok(psi.value(&m.apply(z)?)) };
    let partials = partials_fd_with(m.dim(), pulled, x, h, true)?;
    let mut inner = Multivector::zero(m.dim());
    for (j, dj) in partials.iter().enumerate() {
        inner += &(&(&Multivector::e(m.dim(), j + 1) * &gt) * dj);
    }
    let sigma = parity_sign(&g);
    let unscaled = (&gt_inv * &inner).scale(sigma);
    let right = unscaled.scale(g.norm_sq());

    let (_, jm1) = m.jacobian_factors(x)?;
    let jm1_inv = jm1.lipschitz_inverse()?;
    let operator_inner = dirac_fd_with(
        m.dim(),
        |z| {
            let (j1, _) = m.jacobian_factors(z)?;
            Ok(&j1 * &psi.value(&m.apply(z)?))
        },
        x,
        h,
        true,
    )?;
    let operator = (&jm1_inv * &operator_inner).scale(sigma);

    Ok(Lemma1Report {
        discrepancy: (&left - &right).norm(),
        operator_discrepancy: (&left - &operator).norm(),
        unscaled_discrepancy: (&left - &unscaled).norm(),
        left,
        right,
        parity_sign: sigma,
    })
}

/// +1 for an (essentially) even element, −1 for an odd one.
pub fn parity_sign(g: &Multivector) -> f64 {
    let mut even = 0.0;
    let mut odd = 0.0;
    for (mask, c) in g.coeffs().iter().enumerate() {
        if mask.count_ones() % 2 == 0 {
            even += c * c;
        } else {
            odd += c * c;
        }
    }
    if odd > even {
        -1.0
    } else {
        1.0
    }
}

/// `|D_x J_1(M, x)|` by Richardson finite differences.
pub fn dj1_check(m: &VahlenMatrix, x: &[f64], h: f64) -> Result<f64> {
    let d = dirac_fd_with(m.dim(), |z| Ok(m.jacobian_factors(z)?.0), x, h, true)?;
    Ok(d.norm())
}

/// Least-squares slope of `ln(residual)` against `ln(h)`.
///
/// Nonpositive residuals are skipped; fewer than two usable samples is an error.
pub fn convergence_order(samples: &[(f64, f64)]) -> Result<f64> {
    if samples.len() < 3 {
        return Err(Error::Parameter("convergence_order needs at least 3 samples".into()));
    }
    if samples.windows(2).any(|w| !(w[1].0 < w[0].0)) {
        return Err(Error::Parameter("step sizes must be strictly decreasing".into()));
    }
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(h, r)| *h > 0.0 && *r > 0.0 && r.is_finite())
        .map(|(h, r)| (h.ln(), r.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Estimation("fewer than two positive residuals".into()));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Working domains `U ⊂ R^n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Annulus { center: Vec<f64>, inner: f64, outer: f64 },
}

impl Domain {
    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        Domain::Ball { center, radius }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Box { lo, .. } => lo.len(),
            Domain::Ball { center, .. } | Domain::Annulus { center, .. } => center.len(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Domain::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (a, b))| *a <= *v && *v <= *b),
            Domain::Ball { center, radius } => dist(x, center) <= *radius,
            Domain::Annulus { center, inner, outer } => {
                let r = dist(x, center);
                *inner <= r && r <= *outer
            }
        }
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Domain::Box { lo, hi } => (lo.clone(), hi.clone()),
            Domain::Ball { center, radius: r } | Domain::Annulus { center, outer: r, .. } => (
                center.iter().map(|c| c - r).collect(),
                center.iter().map(|c| c + r).collect(),
            ),
        }
    }

    /// Euclidean distance from the closed domain to a point outside it (0 inside).
    pub fn distance_to(&self, p: &[f64]) -> f64 {
        match self {
            Domain::Box { lo, hi } => p
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (a, b))| {
                    let d = (a - v).max(v - b).max(0.0);
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
            Domain::Ball { center, radius } => (dist(p, center) - radius).max(0.0),
            Domain::Annulus { center, inner, outer } => {
                let r = dist(p, center);
                (inner - r).max(r - outer).max(0.0)
            }
        }
    }

    /// Grid of `k^n` bounding-box points that lie in the closed domain, plus
    /// the axis extremes of balls and annuli.
    pub fn scan_points(&self, k: usize) -> Vec<Vec<f64>> {
        let (lo, hi) = self.bounding_box();
        let n = lo.len();
        let total = k.pow(n as u32);
        let mut out = Vec::new();
        for idx in 0..total {
            let mut rem = idx;
            let x: Vec<f64> = (0..n)
                .map(|j| {
                    let i = rem % k;
                    rem /= k;
                    lo[j] + (hi[j] - lo[j]) * i as f64 / (k - 1) as f64
                })
                .collect();
            if self.contains(&x) {
                out.push(x);
            }
        }
        if let Domain::Ball { center, radius: r } | Domain::Annulus { center, outer: r, .. } = self {
            for j in 0..n {
                for s in [-1.0, 1.0] {
                    let mut x = center.clone();
                    x[j] += s * r;
                    out.push(x);
                }
            }
        }
        out
    }

    /// Requires every point of `points` to be at least `margin` outside the closure.
    pub fn check_clear_of(&self, points: &[Vec<f64>], margin: f64) -> Result<()> {
        for p in points {
            let d = self.distance_to(p);
            if d < margin {
                return Err(Error::Hypothesis(format!(
                    "singular point {p:?} within {d:e} of the domain (margin {margin:e})"
                )));
            }
        }
        Ok(())
    }

    /// Grid scan of `|cx+d|` over the closed domain; fails below `margin`.
    pub fn check_pole_free(&self, m: &VahlenMatrix, margin: f64) -> Result<()> {
        if let Some(pole) = m.pole() {
            if self.distance_to(&pole) < margin {
                return Err(Error::Hypothesis(format!(
                    "pole of the Möbius map at {pole:?} lies in the domain closure"
                )));
            }
        }
        let k = match self.dim() {
            0..=2 => 41,
            3 => 21,
            4 => 11,
            _ => 7,
        };
        for x in self.scan_points(k) {
            let g = m.denominator(&x)?.norm();
            if g < margin {
                return Err(Error::Hypothesis(format!(
                    "cx+d nearly vanishes at {x:?} (|cx+d| = {g:e})"
                )));
            }
        }
        Ok(())
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Deterministic sample points with `rmin ≤ |x| ≤ rmax`, directions uniform.
pub fn shell_samples(n: usize, count: usize, rmin: f64, rmax: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = norm(&v);
            if r > 0.1 && r <= 1.0 {
                let target = rng.gen_range(rmin..=rmax);
                break v.iter().map(|c| c * target / r).collect();
            }
        })
        .collect()
}

/// One row of a residual sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub point: Vec<f64>,
    pub h: f64,
    pub residual: f64,
}

/// Evaluates `residual(x, h)` at every point and step, in parallel; the row
/// order is points-major, deterministic.
pub fn residual_sweep<F>(points: &[Vec<f64>], steps: &[f64], residual: F) -> Result<Vec<SweepRow>>
where
    F: Fn(&[f64], f64) -> Result<f64> + Sync,
{
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|i| (0..steps.len()).map(move |k| (i, k)))
        .collect();
    jobs.par_iter()
        .map(|&(i, k)| {
            Ok(SweepRow {
                point: points[i].clone(),
                h: steps[k],
                residual: residual(&points[i], steps[k])?,
            })
        })
        .collect()
}
