//! The spherical Dirac operator `D_S = x(Γ + n/2)` on `S^n ⊂ R^{n+1}`, its
//! kernels, weak residuals on spherical caps and the Cayley correspondence.
//!
//! Values live in `Cl_{n+1}`. Fields are evaluated through their degree-0
//! homogeneous extension, so rotational derivatives are tangential ones.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::clifford::Multivector;
use crate::error::{Error, Result};
use crate::field::{cauchy_kernel, p_nonlinearity};
use crate::quadrature::{pairwise_sum, QuadratureRule};
use crate::weak::WeakResidual;

/// Default angular step for rotational differences.
pub const DEFAULT_THETA: f64 = 1e-3;

/// Tolerance on `|x| = 1` for sphere points.
pub const UNIT_TOLERANCE: f64 = 1e-12;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn chord(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let r = norm(v);
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Parameter(format!("cannot project {v:?} to the sphere")));
    }
    Ok(v.iter().map(|a| a / r).collect())
}

/// A point of `S^n`, stored by its `n + 1` ambient coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpherePoint {
    coords: Vec<f64>,
}

impl SpherePoint {
    /// Projects a nonzero ambient vector to the sphere.
    pub fn new(coords: &[f64]) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::Parameter("sphere points need at least two coordinates".into()));
        }
        Ok(Self {
            coords: normalize(coords)?,
        })
    }

    /// Accepts coordinates that are already unit to `UNIT_TOLERANCE`.
    pub fn from_unit(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::Parameter("sphere points need at least two coordinates".into()));
        }
        let r = norm(&coords);
        if (r - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::Contract(format!("|x| = {r} is not 1")));
        }
        Ok(Self { coords })
    }

    /// Sphere dimension `n` (ambient dimension minus one).
    pub fn n(&self) -> usize {
        self.coords.len() - 1
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn antipode(&self) -> Self {
        Self {
            coords: self.coords.iter().map(|a| -a).collect(),
        }
    }

    pub fn as_multivector(&self) -> Multivector {
        Multivector::vector(&self.coords)
    }

    /// Great-circle distance.
    pub fn geodesic_distance(&self, other: &Self) -> f64 {
        let c = chord(&self.coords, &other.coords);
        2.0 * (0.5 * c).min(1.0).asin()
    }
}

impl fmt::Display for SpherePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

type SphereFn = Arc<dyn Fn(&[f64]) -> Multivector + Send + Sync>;

/// A `Cl_{n+1}`-valued field on `S^n`.
#[derive(Clone)]
pub struct SphericalField {
    n: usize,
    label: String,
    eval: SphereFn,
    singular: Vec<Vec<f64>>,
}

impl fmt::Debug for SphericalField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SphericalField")
            .field("n", &self.n)
            .field("label", &self.label)
            .field("singular", &self.singular)
            .finish()
    }
}

impl SphericalField {
    /// `eval` receives unit coordinates of length `n + 1`.
    pub fn new(n: usize, label: impl Into<String>, eval: impl Fn(&[f64]) -> Multivector + Send + Sync + 'static) -> Self {
        Self {
            n,
            label: label.into(),
            eval: Arc::new(eval),
            singular: Vec::new(),
        }
    }

    pub fn with_singularity(mut self, point: &SpherePoint) -> Self {
        assert_eq!(point.n(), self.n);
        self.singular.push(point.coords.clone());
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn singular_points(&self) -> &[Vec<f64>] {
        &self.singular
    }

    pub fn constant(n: usize, c: Multivector) -> Self {
        Self::new(n, format!("constant {c}"), move |_| c.clone())
    }

    /// The coordinate function `x ↦ x_k` (1-based), as a scalar.
    pub fn coordinate(n: usize, k: usize) -> Self {
        Self::new(n, format!("x_{k}"), move |x| Multivector::scalar(x.len(), x[k - 1]))
    }

    /// The identity field `x ↦ x`.
    pub fn identity(n: usize) -> Self {
        Self::new(n, "x", Multivector::vector)
    }

    /// `x ↦ (x − y)/|x − y|^{(n+p−2)/(p−1)}`.
    pub fn kernel(y: &SpherePoint, p: f64) -> Result<Self> {
        check_p(p)?;
        let yc = y.clone();
        Ok(Self::new(y.n(), format!("spherical kernel p={p}"), move |x| {
            let x = SpherePoint { coords: x.to_vec() };
            spherical_kernel(&x, &yc, p).unwrap_or_else(|_| Multivector::vector(&vec![f64::NAN; x.coords.len()]))
        })
        .with_singularity(y))
    }

    /// `α f + β g`.
    pub fn combine(alpha: f64, f: &Self, beta: f64, g: &Self) -> Result<Self> {
        if f.n != g.n {
            return Err(Error::DimensionMismatch(f.n, g.n));
        }
        let (fe, ge) = (f.eval.clone(), g.eval.clone());
        let mut out = Self::new(f.n, format!("{alpha}·{} + {beta}·{}", f.label, g.label), move |x| {
            fe(x).scale(alpha) + ge(x).scale(beta)
        });
        out.singular = f.singular.iter().chain(&g.singular).cloned().collect();
        Ok(out)
    }

    /// Value at a sphere point.
    pub fn value(&self, x: &SpherePoint) -> Result<Multivector> {
        if x.n() != self.n {
            return Err(Error::DimensionMismatch(x.n(), self.n));
        }
        if self.singular.iter().any(|s| chord(s, &x.coords) < 1e-12) {
            return Err(Error::Singular(format!("field evaluated on its singular set at {x}")));
        }
        Ok((self.eval)(&x.coords))
    }

    /// Value of the degree-0 homogeneous extension at a nonzero ambient point.
    pub fn value_ambient(&self, z: &[f64]) -> Result<Multivector> {
        self.value(&SpherePoint::new(z)?)
    }

    fn check_stencil(&self, x: &SpherePoint, theta: f64) -> Result<()> {
        if x.n() != self.n {
            return Err(Error::DimensionMismatch(x.n(), self.n));
        }
        if self.singular.iter().any(|s| chord(s, &x.coords) <= 4.0 * theta) {
            return Err(Error::Stencil { point: x.coords.clone() });
        }
        Ok(())
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::Parameter(format!("p must exceed 1, got {p}")));
    }
    Ok(())
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta < 0.5) {
        return Err(Error::Parameter(format!("angular step must lie in (0, 0.5), got {theta}")));
    }
    Ok(())
}

/// Rotation of `x` by angle `t` in the `(i, j)` plane, with
/// `d/dt R(t)x = x_i e_j − x_j e_i` at `t = 0`.
fn rotate(x: &[f64], i: usize, j: usize, t: f64) -> Vec<f64> {
    let (c, s) = (t.cos(), t.sin());
    let mut out = x.to_vec();
    out[i] = c * x[i] - s * x[j];
    out[j] = s * x[i] + c * x[j];
    out
}

/// `Γf(x) = Σ_{i<j} e_i e_j (x_i ∂_j − x_j ∂_i) f` over all ambient pairs,
/// by central differences along plane rotations with Richardson extrapolation.
pub fn gamma_with<F>(x: &[f64], theta: f64, f: F) -> Result<Multivector>
where
    F: Fn(&[f64]) -> Result<Multivector>,
{
    check_theta(theta)?;
    let dim = x.len();
    let central = |i: usize, j: usize, t: f64| -> Result<Multivector> {
        let fp = f(&rotate(x, i, j, t))?;
        let fm = f(&rotate(x, i, j, -t))?;
        Ok((&fp - &fm).scale(0.5 / t))
    };
    let mut acc = Multivector::zero(dim);
    for i in 0..dim {
        for j in i + 1..dim {
            let coarse = central(i, j, theta)?;
            let fine = central(i, j, 0.5 * theta)?;
            let d = (fine.scale(4.0) - coarse).scale(1.0 / 3.0);
            let eij = Multivector::blade(dim, (1 << i) | (1 << j));
            acc += &(&eij * &d);
        }
    }
    Ok(acc)
}

/// `D_S f(x) = x (Γf(x) + (n/2) f(x))` for an arbitrary fallible map.
pub fn spherical_dirac_with<F>(x: &[f64], theta: f64, f: F) -> Result<Multivector>
where
    F: Fn(&[f64]) -> Result<Multivector>,
{
    let n = x.len() - 1;
    let g = gamma_with(x, theta, &f)?;
    let inner = g + f(x)?.scale(0.5 * n as f64);
    Ok(&Multivector::vector(x) * &inner)
}

/// `Γf(x)` by rotational differences.
pub fn gamma_op(f: &SphericalField, x: &SpherePoint, theta: f64) -> Result<Multivector> {
    f.check_stencil(x, theta)?;
    gamma_with(&x.coords, theta, |z| f.value_ambient(z))
}

/// `Γf(x)` from ambient central differences of the homogeneous extension;
/// an independent stencil for cross-checking [`gamma_op`].
pub fn gamma_op_ambient(f: &SphericalField, x: &SpherePoint, h: f64) -> Result<Multivector> {
    f.check_stencil(x, h)?;
    let dim = x.coords.len();
    let partial = |j: usize, step: f64| -> Result<Multivector> {
        let mut zp = x.coords.clone();
        let mut zm = x.coords.clone();
        zp[j] += step;
        zm[j] -= step;
        Ok((f.value_ambient(&zp)? - f.value_ambient(&zm)?).scale(0.5 / step))
    };
    let mut partials = Vec::with_capacity(dim);
    for j in 0..dim {
        let coarse = partial(j, h)?;
        let fine = partial(j, 0.5 * h)?;
        partials.push((fine.scale(4.0) - coarse).scale(1.0 / 3.0));
    }
    let xc = &x.coords;
    let mut acc = Multivector::zero(dim);
    // pairs visited in reverse order
    for j in (0..dim).rev() {
        for i in (0..j).rev() {
            let d = partials[j].scale(xc[i]) - partials[i].scale(xc[j]);
            acc += &(&Multivector::blade(dim, (1 << i) | (1 << j)) * &d);
        }
    }
    Ok(acc)
}

/// `D_S f(x) = x(Γ + n/2) f(x)`.
pub fn spherical_dirac(f: &SphericalField, x: &SpherePoint, theta: f64) -> Result<Multivector> {
    f.check_stencil(x, theta)?;
    spherical_dirac_with(&x.coords, theta, |z| f.value_ambient(z))
}

/// Strong p-spherical Dirac residual `D_S(|f|^{p−2} f)(x)`.
pub fn p_spherical_dirac_residual(f: &SphericalField, p: f64, x: &SpherePoint, theta: f64) -> Result<Multivector> {
    check_p(p)?;
    f.check_stencil(x, theta)?;
    spherical_dirac_with(&x.coords, theta, |z| p_nonlinearity(&f.value_ambient(z)?, p, z))
}

/// `(x − y)/|x − y|^{(n+p−2)/(p−1)}` in `Cl_{n+1}`.
pub fn spherical_kernel(x: &SpherePoint, y: &SpherePoint, p: f64) -> Result<Multivector> {
    check_p(p)?;
    if x.n() != y.n() {
        return Err(Error::DimensionMismatch(x.n(), y.n()));
    }
    let r = chord(&x.coords, &y.coords);
    if r < 1e-12 {
        return Err(Error::Singular(format!("kernel evaluated at its pole {y}")));
    }
    let n = x.n() as f64;
    let exponent = (n + p - 2.0) / (p - 1.0);
    let diff: Vec<f64> = x.coords.iter().zip(&y.coords).map(|(a, b)| a - b).collect();
    Ok(Multivector::vector(&diff).scale(r.powf(-exponent)))
}

/// Scalar field `x ↦ |x − y|^a`.
pub fn chordal_power(y: &SpherePoint, a: f64) -> SphericalField {
    let yc = y.coords.clone();
    SphericalField::new(y.n(), format!("|x-y|^{a}"), move |x| Multivector::scalar(x.len(), chord(x, &yc).powf(a)))
        .with_singularity(y)
}

/// `(D_S + (p/2) x)` applied to a fallible map.
fn shifted_dirac_with<F>(x: &[f64], theta: f64, p: f64, f: F) -> Result<Multivector>
where
    F: Fn(&[f64]) -> Result<Multivector>,
{
    let d = spherical_dirac_with(x, theta, &f)?;
    let shift = &Multivector::vector(x) * &f(x)?;
    Ok(d + shift.scale(0.5 * p))
}

/// Both sides of `(D_S + (p/2)x)|x−y|^{p−n} = ((p−n)/2)(x−y)/|x−y|^{n−p}`.
#[derive(Debug, Clone, Serialize)]
pub struct LrIdentityReport {
    pub n: usize,
    pub p: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub left: Multivector,
    pub right: Multivector,
    pub discrepancy: f64,
    /// left/right per basis blade where the right side is nonzero.
    pub ratios: Vec<Option<f64>>,
}

pub fn lr_identity_check(x: &SpherePoint, y: &SpherePoint, p: f64, theta: f64) -> Result<LrIdentityReport> {
    check_p(p)?;
    if x.n() != y.n() {
        return Err(Error::DimensionMismatch(x.n(), y.n()));
    }
    let n = x.n();
    let a = p - n as f64;
    let g = chordal_power(y, a);
    g.check_stencil(x, theta)?;
    let left = shifted_dirac_with(&x.coords, theta, p, |z| g.value_ambient(z))?;
    let r = chord(&x.coords, &y.coords);
    let diff: Vec<f64> = x.coords.iter().zip(&y.coords).map(|(u, v)| u - v).collect();
    let right = Multivector::vector(&diff).scale(0.5 * a * r.powf(a));
    let discrepancy = (&left - &right).norm();
    let ratios = left
        .coeffs()
        .iter()
        .zip(right.coeffs())
        .map(|(l, r)| if r.abs() > 1e-14 { Some(l / r) } else { None })
        .collect();
    Ok(LrIdentityReport {
        n,
        p,
        x: x.coords.clone(),
        y: y.coords.clone(),
        left,
        right,
        discrepancy,
        ratios,
    })
}

/// One sample of the nested p-spherical-harmonic operator.
#[derive(Debug, Clone, Serialize)]
pub struct SphericalHarmonicSample {
    pub x: Vec<f64>,
    pub inner_norm: f64,
    pub residual: Multivector,
    pub residual_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SphericalHarmonicReport {
    pub n: usize,
    pub p: f64,
    pub exponent: f64,
    pub y: Vec<f64>,
    pub samples: Vec<SphericalHarmonicSample>,
    pub max_residual: f64,
}

/// `D_S(|V|^{p−2} V)` with `V = (D_S + (p/2)x) f` for `f = |x−y|^{(p−n)/(p−1)}`.
pub fn spherical_p_harmonic_check(
    y: &SpherePoint,
    p: f64,
    samples: &[SpherePoint],
    theta: f64,
) -> Result<SphericalHarmonicReport> {
    check_p(p)?;
    let n = y.n();
    let exponent = (p - n as f64) / (p - 1.0);
    let g = chordal_power(y, exponent);
    let rows = samples
        .par_iter()
        .map(|x| {
            if x.n() != n {
                return Err(Error::DimensionMismatch(x.n(), n));
            }
            g.check_stencil(x, 3.0 * theta)?;
            let inner = |z: &[f64]| shifted_dirac_with(z, theta, p, |w| g.value_ambient(w));
            let inner_norm = inner(&x.coords)?.norm();
            let residual = spherical_dirac_with(&x.coords, theta, |z| p_nonlinearity(&inner(z)?, p, z))?;
            Ok(SphericalHarmonicSample {
                x: x.coords.clone(),
                inner_norm,
                residual_norm: residual.norm(),
                residual,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_residual = rows.iter().map(|r| r.residual_norm).fold(0.0, f64::max);
    Ok(SphericalHarmonicReport {
        n,
        p,
        exponent,
        y: y.coords.clone(),
        samples: rows,
        max_residual,
    })
}

/// `Y_S f = D_S(D_S f − x f)` by nested rotational differences.
pub fn yamabe_op(f: &SphericalField, x: &SpherePoint, theta: f64) -> Result<Multivector> {
    f.check_stencil(x, 3.0 * theta)?;
    let inner = |z: &[f64]| -> Result<Multivector> {
        let d = spherical_dirac_with(z, theta, |w| f.value_ambient(w))?;
        let xf = &Multivector::vector(z) * &f.value_ambient(z)?;
        Ok(d - xf)
    };
    spherical_dirac_with(&x.coords, theta, inner)
}

/// Deterministic sample points on `S^n` at chordal distance at least
/// `min_chord` from every point of `avoid`.
pub fn sphere_samples(n: usize, count: usize, avoid: &[SpherePoint], min_chord: f64, seed: u64) -> Vec<SpherePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v: Vec<f64> = (0..=n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = norm(&v);
        if !(r > 0.1 && r <= 1.0) {
            continue;
        }
        let x = SpherePoint::new(&v).expect("nonzero sample");
        if avoid.iter().all(|a| chord(&a.coords, &x.coords) >= min_chord) {
            out.push(x);
        }
    }
    out
}

/// A geodesic ball `{x : d(x, center) < angle}` on `S^n`.
#[derive(Debug, Clone, Serialize)]
pub struct SphericalCap {
    pub center: SpherePoint,
    pub angle: f64,
}

impl SphericalCap {
    pub fn new(center: SpherePoint, angle: f64) -> Result<Self> {
        if !(angle > 0.0 && angle < PI) {
            return Err(Error::Parameter(format!("cap angle must lie in (0, π), got {angle}")));
        }
        Ok(Self { center, angle })
    }

    pub fn contains(&self, x: &SpherePoint) -> bool {
        self.center.geodesic_distance(x) < self.angle
    }

    /// Surface measure of the cap.
    pub fn area(&self) -> f64 {
        let n = self.center.n();
        let rule = QuadratureRule::new(20, 8).expect("valid rule");
        let (ts, ws) = rule.nodes_1d(0.0, self.angle);
        let radial: f64 = ts.iter().zip(&ws).map(|(t, w)| w * t.sin().powi(n as i32 - 1)).sum();
        unit_sphere_area(n - 1) * radial
    }
}

/// Surface measure of `S^m`.
pub fn unit_sphere_area(m: usize) -> f64 {
    // |S^0| = 2, |S^1| = 2π, |S^m| = 2π/(m−1) |S^{m−2}|
    match m {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI / (m as f64 - 1.0) * unit_sphere_area(m - 2),
    }
}

/// Cap-supported test function `η = ψ(x·c) B` with
/// `ψ = exp(−1/(1−s))`, `s = (1 − x·c)/(1 − cos ρ)`.
#[derive(Debug, Clone, Serialize)]
pub struct CapBump {
    pub center: SpherePoint,
    pub angle: f64,
    pub blade: Multivector,
}

impl CapBump {
    pub fn new(center: SpherePoint, angle: f64, blade: Multivector) -> Result<Self> {
        if !(angle > 0.0 && angle < PI) {
            return Err(Error::Parameter(format!("bump angle must lie in (0, π), got {angle}")));
        }
        if blade.dim() != center.n() + 1 {
            return Err(Error::DimensionMismatch(blade.dim(), center.n() + 1));
        }
        Ok(Self { center, angle, blade })
    }

    pub fn scalar(center: SpherePoint, angle: f64) -> Result<Self> {
        let dim = center.n() + 1;
        Self::new(center, angle, Multivector::one(dim))
    }

    pub fn with_blade(&self, blade: Multivector) -> Result<Self> {
        Self::new(self.center.clone(), self.angle, blade)
    }

    fn s(&self, x: &[f64]) -> f64 {
        (1.0 - dot(x, &self.center.coords)) / (1.0 - self.angle.cos())
    }

    /// `ψ(x)`.
    pub fn profile(&self, x: &[f64]) -> f64 {
        let s = self.s(x);
        if s < 1.0 {
            (-1.0 / (1.0 - s)).exp()
        } else {
            0.0
        }
    }

    /// `dψ/dt` at `t = x·c`.
    fn profile_slope(&self, x: &[f64]) -> f64 {
        let s = self.s(x);
        if s < 1.0 {
            let q = 1.0 - s;
            (-1.0 / q).exp() / (q * q * (1.0 - self.angle.cos()))
        } else {
            0.0
        }
    }

    pub fn value(&self, x: &[f64]) -> Multivector {
        self.blade.scale(self.profile(x))
    }

    /// `Γη` from the exact rotational derivatives
    /// `(x_i ∂_j − x_j ∂_i) ψ = ψ'(t)(x_i c_j − x_j c_i)`.
    pub fn gamma(&self, x: &[f64]) -> Multivector {
        let dim = x.len();
        let slope = self.profile_slope(x);
        let c = &self.center.coords;
        let mut bivector = Multivector::zero(dim);
        if slope != 0.0 {
            for i in 0..dim {
                for j in i + 1..dim {
                    bivector.set((1 << i) | (1 << j), slope * (x[i] * c[j] - x[j] * c[i]));
                }
            }
        }
        &bivector * &self.blade
    }

    /// `D_S η(x) = x(Γη + (n/2)η)`.
    pub fn spherical_dirac(&self, x: &[f64]) -> Multivector {
        let n = x.len() - 1;
        let inner = self.gamma(x) + self.value(x).scale(0.5 * n as f64);
        &Multivector::vector(x) * &inner
    }

    pub fn support(&self) -> SphericalCap {
        SphericalCap {
            center: self.center.clone(),
            angle: self.angle,
        }
    }

    pub fn as_field(&self) -> SphericalField {
        let b = self.clone();
        SphericalField::new(self.center.n(), "cap bump", move |x| b.value(x))
    }
}

/// Seeded cap bumps supported inside `cap`, each with clearance at least 30%
/// of the cap angle.
pub fn cap_test_family(cap: &SphericalCap, count: usize, seed: u64) -> Result<Vec<CapBump>> {
    let n = cap.center.n();
    let basis = complement_basis(&cap.center.coords);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let d = rng.gen_range(0.0..0.7) * cap.angle;
        let dir: Vec<f64> = loop {
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = norm(&w);
            if r > 0.1 && r <= 1.0 {
                break w.iter().map(|a| a / r).collect();
            }
        };
        let mut c: Vec<f64> = cap.center.coords.iter().map(|a| a * d.cos()).collect();
        for (k, u) in basis.iter().enumerate() {
            c.iter_mut().zip(u).for_each(|(ci, ui)| *ci += d.sin() * dir[k] * ui);
        }
        let clearance = cap.angle - d;
        let angle = rng.gen_range(0.5..0.9) * clearance;
        out.push(CapBump::scalar(SpherePoint::new(&c)?, angle)?);
    }
    Ok(out)
}

/// Orthonormal basis of the orthogonal complement of a unit vector.
fn complement_basis(c: &[f64]) -> Vec<Vec<f64>> {
    let dim = c.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim - 1);
    let mut order: Vec<usize> = (0..dim).collect();
    // start from the axes least aligned with c
    order.sort_by(|a, b| c[*a].abs().partial_cmp(&c[*b].abs()).expect("finite"));
    for &k in &order {
        if basis.len() == dim - 1 {
            break;
        }
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        for _ in 0..2 {
            let proj = dot(&v, c);
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= proj * b);
            for u in &basis {
                let proj = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= proj * b);
            }
        }
        let r = norm(&v);
        if r > 1e-6 {
            basis.push(v.iter().map(|a| a / r).collect());
        }
    }
    basis
}

/// Geodesic-polar quadrature on caps: composite Gauss-Legendre in the polar
/// angle and the intermediate hyperspherical angles, trapezoid in longitude.
#[derive(Debug, Clone, Serialize)]
pub struct CapRule {
    pub angular: QuadratureRule,
    pub longitudes: usize,
}

impl CapRule {
    pub fn new(order: usize, cells: usize, longitudes: usize) -> Result<Self> {
        if longitudes < 3 {
            return Err(Error::Parameter("at least three longitudes are required".into()));
        }
        Ok(Self {
            angular: QuadratureRule::new(order, cells)?,
            longitudes,
        })
    }

    pub fn default_rule() -> Self {
        Self::new(12, 4, 48).expect("valid rule")
    }

    pub fn doubled(&self) -> Self {
        Self {
            angular: self.angular.doubled(),
            longitudes: 2 * self.longitudes,
        }
    }

    /// Points and weights of `S^{m}` in `R^{m+1}`.
    fn unit_sphere(&self, m: usize) -> Vec<(Vec<f64>, f64)> {
        match m {
            0 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
            1 => {
                let l = self.longitudes;
                (0..l)
                    .map(|k| {
                        let b = 2.0 * PI * k as f64 / l as f64;
                        (vec![b.cos(), b.sin()], 2.0 * PI / l as f64)
                    })
                    .collect()
            }
            _ => {
                let lower = self.unit_sphere(m - 1);
                let (alphas, ws) = self.angular.nodes_1d(0.0, PI);
                let mut out = Vec::with_capacity(alphas.len() * lower.len());
                for (a, w) in alphas.iter().zip(&ws) {
                    let weight = w * a.sin().powi(m as i32 - 1);
                    for (omega, wl) in &lower {
                        let mut p = Vec::with_capacity(m + 1);
                        p.push(a.cos());
                        p.extend(omega.iter().map(|o| a.sin() * o));
                        out.push((p, weight * wl));
                    }
                }
                out
            }
        }
    }

    /// Integrates a `width`-component integrand over a cap, in a fixed
    /// reduction order.
    pub fn integrate<F>(&self, cap: &SphericalCap, width: usize, f: F) -> Result<Vec<f64>>
    where
        F: Fn(&[f64], &mut [f64]) -> Result<()> + Sync,
    {
        let n = cap.center.n();
        let c = &cap.center.coords;
        let basis = complement_basis(c);
        let directions: Vec<(Vec<f64>, f64)> = self
            .unit_sphere(n - 1)
            .into_iter()
            .map(|(omega, w)| {
                let mut v = vec![0.0; n + 1];
                for (k, u) in basis.iter().enumerate() {
                    v.iter_mut().zip(u).for_each(|(a, b)| *a += omega[k] * b);
                }
                (v, w)
            })
            .collect();
        let (thetas, tws) = self.angular.nodes_1d(0.0, cap.angle);
        let parts = thetas
            .par_iter()
            .zip(&tws)
            .map(|(t, tw)| {
                let (ct, st) = (t.cos(), t.sin());
                let radial = tw * st.powi(n as i32 - 1);
                let mut acc = vec![0.0; width];
                let mut buf = vec![0.0; width];
                let mut x = vec![0.0; n + 1];
                for (omega, w) in &directions {
                    for k in 0..=n {
                        x[k] = ct * c[k] + st * omega[k];
                    }
                    buf.iter_mut().for_each(|b| *b = 0.0);
                    f(&x, &mut buf)?;
                    let weight = radial * w;
                    acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += weight * b);
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(pairwise_sum(&parts, width))
    }
}

/// `∫_U conj(|f|^{p−2} f) D_S η dU` over the support of `η`, which must lie in
/// `domain` and avoid the singular set of `f`.
pub fn weak_spherical_residual(
    f: &SphericalField,
    p: f64,
    domain: &SphericalCap,
    eta: &CapBump,
    rule: &CapRule,
) -> Result<WeakResidual> {
    check_p(p)?;
    let n = f.n();
    if domain.center.n() != n || eta.center.n() != n {
        return Err(Error::DimensionMismatch(eta.center.n(), n));
    }
    let offset = domain.center.geodesic_distance(&eta.center);
    if offset + eta.angle > domain.angle * (1.0 + 1e-12) {
        return Err(Error::Contract("test function support leaves the cap".into()));
    }
    let support = eta.support();
    for s in &f.singular {
        let sp = SpherePoint { coords: s.clone() };
        if support.center.geodesic_distance(&sp) <= support.angle * (1.0 + 1e-9) {
            return Err(Error::Hypothesis(format!("singular point {sp} lies in the test support")));
        }
    }
    let width = 1usize << (n + 1);
    let integral = rule.integrate(&support, width + 1, |x, out| {
        let dseta = eta.spherical_dirac(x);
        if dseta.norm_sq() == 0.0 {
            return Ok(());
        }
        let v = f.value_ambient(x)?;
        let r = v.norm();
        let g = if r == 0.0 { v } else { v.scale(r.powf(p - 2.0)) };
        let prod = &g.conjugation() * &dseta;
        out[..width].copy_from_slice(prod.coeffs());
        out[width] = g.norm() * dseta.norm();
        Ok(())
    })?;
    let normalization = integral[width];
    let value = Multivector::from_coeffs(n + 1, integral[..width].to_vec())?;
    let normalized = if normalization > 0.0 { value.norm() / normalization } else { 0.0 };
    Ok(WeakResidual {
        value,
        normalization,
        normalized,
    })
}

/// Stereographic (Cayley) map `R^n → S^n`,
/// `u ↦ (2u + (|u|² − 1) e_{n+1})/(|u|² + 1)`.
pub fn cayley(u: &[f64]) -> SpherePoint {
    let r2: f64 = u.iter().map(|a| a * a).sum();
    let mut coords: Vec<f64> = u.iter().map(|a| 2.0 * a / (r2 + 1.0)).collect();
    coords.push((r2 - 1.0) / (r2 + 1.0));
    SpherePoint { coords }
}

/// Conformal factor `2/(1 + |u|²)` of the Cayley map.
pub fn cayley_factor(u: &[f64]) -> f64 {
    2.0 / (1.0 + u.iter().map(|a| a * a).sum::<f64>())
}

#[derive(Debug, Clone, Serialize)]
pub struct CayleyReport {
    pub n: usize,
    pub ratios: Vec<f64>,
    pub mean: f64,
    pub max_relative_deviation: f64,
}

/// Ratio `|K_S(C(u), C(v))| (ρ(u)ρ(v))^{(n−1)/2} / |K(u − v)|` over seeded
/// pairs, where `K` is the flat Cauchy kernel and `ρ` the Cayley factor.
pub fn cayley_ratio_check(n: usize, count: usize, seed: u64) -> Result<CayleyReport> {
    let flat = cauchy_kernel(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios = Vec::with_capacity(count);
    while ratios.len() < count {
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let diff: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
        if norm(&diff) < 0.1 {
            continue;
        }
        let ks = spherical_kernel(&cayley(&u), &cayley(&v), 2.0)?;
        let kf = flat.value(&diff);
        let weight = (cayley_factor(&u) * cayley_factor(&v)).powf(0.5 * (n as f64 - 1.0));
        ratios.push(ks.norm() * weight / kf.norm());
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let max_relative_deviation = ratios.iter().map(|r| (r - mean).abs() / mean).fold(0.0, f64::max);
    Ok(CayleyReport {
        n,
        ratios,
        mean,
        max_relative_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(c: &[f64]) -> SpherePoint {
        SpherePoint::new(c).unwrap()
    }

    fn north(n: usize) -> SpherePoint {
        let mut c = vec![0.0; n + 1];
        c[n] = 1.0;
        pt(&c)
    }

    /// Γ of a linear function `x ↦ a·x` is `Σ_{i<j} e_ie_j (x_i a_j − x_j a_i)`.
    fn gamma_of_linear(x: &[f64], a: &[f64]) -> Multivector {
        let dim = x.len();
        let mut out = Multivector::zero(dim);
        for i in 0..dim {
            for j in i + 1..dim {
                out.set((1 << i) | (1 << j), x[i] * a[j] - x[j] * a[i]);
            }
        }
        out
    }

    #[test]
    fn sphere_points_are_unit() {
        let x = pt(&[3.0, 4.0, 0.0]);
        assert!((norm(x.coords()) - 1.0).abs() < 1e-15);
        assert!(SpherePoint::from_unit(vec![1.0, 1.0]).is_err());
        assert!(SpherePoint::new(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn constant_field_has_zero_gamma() {
        let c = Multivector::vector(&[1.0, -2.0, 0.5]) + Multivector::scalar(3, 0.7);
        let f = SphericalField::constant(2, c.clone());
        let x = pt(&[0.3, -0.4, 0.8]);
        assert!(gamma_op(&f, &x, DEFAULT_THETA).unwrap().norm() < 1e-12);
        let d = spherical_dirac(&f, &x, DEFAULT_THETA).unwrap();
        let expected = (&x.as_multivector() * &c).scale(1.0);
        assert!((&d - &expected).norm() < 1e-12);
    }

    #[test]
    fn gamma_of_a_coordinate_matches_the_rotational_oracle() {
        let f = SphericalField::coordinate(2, 1);
        for x in sphere_samples(2, 10, &[], 0.0, 3) {
            let g = gamma_op(&f, &x, DEFAULT_THETA).unwrap();
            let oracle = gamma_of_linear(x.coords(), &[1.0, 0.0, 0.0]);
            assert!((&g - &oracle).norm() < 1e-10, "{}", (&g - &oracle).norm());
        }
    }

    #[test]
    fn gamma_of_the_identity_field() {
        // Γx = Σ_{i<j} e_ie_j (x_i e_j − x_j e_i) = −n x
        let f = SphericalField::identity(3);
        for x in sphere_samples(3, 8, &[], 0.0, 4) {
            let g = gamma_op(&f, &x, DEFAULT_THETA).unwrap();
            let mut oracle = Multivector::zero(4);
            for i in 0..4 {
                for j in i + 1..4 {
                    let mut lij = vec![0.0; 4];
                    lij[j] += x.coords()[i];
                    lij[i] -= x.coords()[j];
                    oracle += &(&Multivector::blade(4, (1 << i) | (1 << j)) * &Multivector::vector(&lij));
                }
            }
            assert!((&g - &oracle).norm() < 1e-10);
            assert!((&g + &x.as_multivector().scale(3.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn rotational_and_ambient_stencils_agree() {
        let y = pt(&[0.2, -0.5, 0.4, 0.7]);
        let f = SphericalField::combine(1.0, &SphericalField::kernel(&y, 1.7).unwrap(), 0.3, &SphericalField::coordinate(3, 2))
            .unwrap();
        for x in sphere_samples(3, 10, std::slice::from_ref(&y), 0.3, 5) {
            let a = gamma_op(&f, &x, DEFAULT_THETA).unwrap();
            let b = gamma_op_ambient(&f, &x, DEFAULT_THETA).unwrap();
            assert!((&a - &b).norm() < 1e-8 * (1.0 + a.norm()), "{}", (&a - &b).norm());
        }
    }

    #[test]
    fn kernel_is_annihilated_at_twenty_points() {
        for n in [2usize, 3, 4] {
            let y = sphere_samples(n, 1, &[], 0.0, 100 + n as u64).remove(0);
            let f = SphericalField::kernel(&y, 2.0).unwrap();
            for x in sphere_samples(n, 20, std::slice::from_ref(&y), 0.2, 7) {
                let d = spherical_dirac(&f, &x, DEFAULT_THETA).unwrap();
                assert!(d.norm() < 1e-6, "n={n} residual {}", d.norm());
            }
        }
    }

    #[test]
    fn p_kernels_solve_the_p_spherical_dirac_equation() {
        for (n, p) in [(2usize, 1.5), (3, 1.5), (3, 3.0), (4, 2.5)] {
            let y = sphere_samples(n, 1, &[], 0.0, 11).remove(0);
            let f = SphericalField::kernel(&y, p).unwrap();
            for x in sphere_samples(n, 10, std::slice::from_ref(&y), 0.3, 12) {
                let r = p_spherical_dirac_residual(&f, p, &x, DEFAULT_THETA).unwrap();
                assert!(r.norm() < 1e-6, "n={n} p={p}: {}", r.norm());
            }
        }
    }

    #[test]
    fn dirac_of_p_kernel_vanishes_at_the_antipode() {
        let y = pt(&[0.1, 0.3, -0.2, 0.9]);
        let f = SphericalField::kernel(&y, 1.5).unwrap();
        let d = spherical_dirac(&f, &y.antipode(), DEFAULT_THETA).unwrap();
        assert!(d.norm() < 1e-6, "{}", d.norm());
        // away from the antipode D_S f = −((n+a)/2)|x−y|^a (xy − 1), a = −(n+p−2)/(p−1)
        let x = pt(&[0.5, -0.2, 0.6, 0.1]);
        let a = -(3.0 + 1.5 - 2.0) / 0.5;
        let oracle = dirac_of_power_times_difference(&x, &y, a);
        let d = spherical_dirac(&f, &x, DEFAULT_THETA).unwrap();
        assert!((&d - &oracle).norm() < 1e-7 * oracle.norm(), "{d} vs {oracle}");
    }

    #[test]
    fn kernel_closed_forms() {
        let y = north(3);
        let x = y.antipode();
        let k2 = spherical_kernel(&x, &y, 2.0).unwrap();
        let expected = Multivector::vector(&[0.0, 0.0, 0.0, -2.0]).scale(1.0 / 8.0);
        assert!((&k2 - &expected).norm() < 1e-15);
        let p = 1.5;
        let e = (3.0 + p - 2.0) / (p - 1.0);
        let kp = spherical_kernel(&x, &y, p).unwrap();
        assert!((&kp - &Multivector::vector(&[0.0, 0.0, 0.0, -2.0]).scale(2f64.powf(-e))).norm() < 1e-15);
        let z = pt(&[1.0, 0.0, 0.0, 0.0]);
        let kn = spherical_kernel(&z, &y, 3.0).unwrap();
        assert!((&kn - &Multivector::vector(&[1.0, 0.0, 0.0, -1.0]).scale(0.5)).norm() < 1e-15);
        assert!(matches!(spherical_kernel(&y, &y, 2.0), Err(Error::Singular(_))));
    }

    #[test]
    fn stencil_touching_the_pole_is_rejected() {
        let y = north(2);
        let f = SphericalField::kernel(&y, 2.0).unwrap();
        let x = pt(&[1e-4, 0.0, 1.0]);
        assert!(matches!(spherical_dirac(&f, &x, DEFAULT_THETA), Err(Error::Stencil { .. })));
    }

    #[test]
    fn evaluation_is_degree_zero_homogeneous() {
        let y = pt(&[0.3, 0.3, 0.9]);
        let f = SphericalField::kernel(&y, 1.8).unwrap();
        for x in sphere_samples(2, 10, std::slice::from_ref(&y), 0.1, 9) {
            let scaled: Vec<f64> = x.coords().iter().map(|a| 1.0000001 * a).collect();
            let renormalized = SpherePoint::new(&scaled).unwrap();
            let a = f.value_ambient(&scaled).unwrap();
            let b = f.value(&renormalized).unwrap();
            assert_eq!(a.coeffs(), b.coeffs());
            assert!((&a - &f.value(&x).unwrap()).norm() < 1e-12 * a.norm());
        }
    }

    /// D_S(|x−y|^a x) = −a|x−y|^{a−2}(xy + x·y) + (n/2)|x−y|^a.
    fn dirac_of_power_times_x(x: &SpherePoint, y: &SpherePoint, a: f64) -> Multivector {
        let n = x.n() as f64;
        let r = chord(x.coords(), y.coords());
        let xy = &x.as_multivector() * &y.as_multivector();
        let s = dot(x.coords(), y.coords());
        (xy + Multivector::scalar(x.n() + 1, s)).scale(-a * r.powf(a - 2.0))
            + Multivector::scalar(x.n() + 1, 0.5 * n * r.powf(a))
    }

    /// D_S(|x−y|^a (x−y)) = −((n+a)/2)|x−y|^a (xy − 1).
    fn dirac_of_power_times_difference(x: &SpherePoint, y: &SpherePoint, a: f64) -> Multivector {
        let n = x.n() as f64;
        let r = chord(x.coords(), y.coords());
        let xy = &x.as_multivector() * &y.as_multivector();
        (xy - Multivector::scalar(x.n() + 1, 1.0)).scale(-0.5 * (n + a) * r.powf(a))
    }

    #[test]
    fn closed_form_oracles_match_the_operator() {
        let y = pt(&[0.4, -0.1, 0.3, 0.8]);
        let x = pt(&[-0.3, 0.6, 0.2, 0.1]);
        for a in [-2.0, -0.5, 1.5] {
            let yc = y.coords().to_vec();
            let f = SphericalField::new(3, "r^a x", move |z| Multivector::vector(z).scale(chord(z, &yc).powf(a)))
                .with_singularity(&y);
            let d = spherical_dirac(&f, &x, DEFAULT_THETA).unwrap();
            assert!((&d - &dirac_of_power_times_x(&x, &y, a)).norm() < 1e-8);
            let yc = y.coords().to_vec();
            let g = SphericalField::new(3, "r^a (x-y)", move |z| {
                let diff: Vec<f64> = z.iter().zip(&yc).map(|(u, v)| u - v).collect();
                Multivector::vector(&diff).scale(chord(z, &yc).powf(a))
            })
            .with_singularity(&y);
            let d = spherical_dirac(&g, &x, DEFAULT_THETA).unwrap();
            assert!((&d - &dirac_of_power_times_difference(&x, &y, a)).norm() < 1e-8);
        }
    }

    #[test]
    fn lr_identity_left_side_matches_its_closed_form() {
        // (D_S + (p/2)x)|x−y|^{p−n} = −(p−n)|x−y|^{p−n−2}(x−y) + p|x−y|^{p−n} x
        for (n, p) in [(2usize, 1.5), (3, 2.0), (3, 3.0)] {
            let y = north(n);
            let mut xc = vec![0.0; n + 1];
            xc[0] = 1.0;
            let x = pt(&xc);
            let report = lr_identity_check(&x, &y, p, DEFAULT_THETA).unwrap();
            let a = p - n as f64;
            let r = chord(x.coords(), y.coords());
            let diff: Vec<f64> = x.coords().iter().zip(y.coords()).map(|(u, v)| u - v).collect();
            let oracle = Multivector::vector(&diff).scale(-a * r.powf(a - 2.0)) + x.as_multivector().scale(p * r.powf(a));
            assert!((&report.left - &oracle).norm() < 1e-8, "n={n} p={p}");
            assert_eq!(report.ratios.len(), 1 << (n + 1));
            if p == n as f64 {
                assert!(report.right.norm() == 0.0);
                assert!(report.ratios.iter().all(Option::is_none));
            }
        }
    }

    #[test]
    fn p_harmonic_report_matches_the_p_equals_two_closed_form() {
        // V = −b r^{b−2}(x−y) + ((b+n+2)/2) r^b x, residual D_S V
        let n = 3;
        let p = 2.0;
        let y = pt(&[0.1, 0.2, -0.3, 0.9]);
        let samples = sphere_samples(n, 4, std::slice::from_ref(&y), 0.4, 21);
        let report = spherical_p_harmonic_check(&y, p, &samples, DEFAULT_THETA).unwrap();
        let b = (p - n as f64) / (p - 1.0);
        for (x, row) in samples.iter().zip(&report.samples) {
            let oracle = dirac_of_power_times_difference(x, &y, b - 2.0).scale(-b)
                + dirac_of_power_times_x(x, &y, b).scale(0.5 * (b + n as f64 + 2.0));
            assert!((&row.residual - &oracle).norm() < 1e-6 * (1.0 + oracle.norm()));
        }
        assert_eq!(report.exponent, -1.0);
    }

    #[test]
    fn p_harmonic_report_at_p_equal_n_is_degenerate() {
        let y = north(2);
        let samples = sphere_samples(2, 3, std::slice::from_ref(&y), 0.4, 22);
        let report = spherical_p_harmonic_check(&y, 2.0, &samples, DEFAULT_THETA).unwrap();
        assert_eq!(report.exponent, 0.0);
        for (x, row) in samples.iter().zip(&report.samples) {
            // inner operator on f ≡ 1 is (n/2 + p/2) x = 2x
            assert!((row.inner_norm - 2.0).abs() < 1e-9);
            // D_S(2x) = n = 2 as a scalar
            assert!((&row.residual - &Multivector::scalar(3, 2.0)).norm() < 1e-8, "{x}");
        }
    }

    #[test]
    fn yamabe_of_constant_and_kernel() {
        let n = 2;
        let c = Multivector::scalar(3, 1.5) + Multivector::e(3, 2);
        let f = SphericalField::constant(n, c.clone());
        let x = pt(&[0.2, 0.7, -0.4]);
        let y_direct = yamabe_op(&f, &x, DEFAULT_THETA).unwrap();
        // D_S c − x c = (n/2 − 1) x c, then D_S of the linear field z ↦ (n/2 − 1) z c
        let g = SphericalField::new(n, "x c", {
            let c = c.clone();
            move |z| (&Multivector::vector(z) * &c).scale(0.5 * n as f64 - 1.0)
        });
        let chained = spherical_dirac(&g, &x, DEFAULT_THETA).unwrap();
        assert!((&y_direct - &chained).norm() < 1e-7);

        let y = pt(&[-0.5, 0.1, 0.6]);
        let k = SphericalField::kernel(&y, 2.0).unwrap();
        let minus_xk = SphericalField::new(n, "-x K", {
            let k = k.clone();
            move |z| -(&Multivector::vector(z) * &k.value_ambient(z).unwrap())
        })
        .with_singularity(&y);
        let a = yamabe_op(&k, &x, DEFAULT_THETA).unwrap();
        let b = spherical_dirac(&minus_xk, &x, DEFAULT_THETA).unwrap();
        assert!((&a - &b).norm() < 1e-6 * (1.0 + a.norm()), "{}", (&a - &b).norm());
    }

    #[test]
    fn yamabe_is_linear() {
        let y = pt(&[0.3, -0.7, 0.2]);
        let f = SphericalField::kernel(&y, 2.0).unwrap();
        let g = SphericalField::coordinate(2, 3);
        let h = SphericalField::combine(2.0, &f, -0.5, &g).unwrap();
        let x = pt(&[0.6, 0.5, -0.1]);
        let lhs = yamabe_op(&h, &x, DEFAULT_THETA).unwrap();
        let rhs = yamabe_op(&f, &x, DEFAULT_THETA).unwrap().scale(2.0) - yamabe_op(&g, &x, DEFAULT_THETA).unwrap().scale(0.5);
        assert!((&lhs - &rhs).norm() < 1e-7 * (1.0 + lhs.norm()));
    }

    #[test]
    fn cap_quadrature_reproduces_cap_areas() {
        let rule = CapRule::default_rule();
        for n in [1usize, 2, 3, 4] {
            let cap = SphericalCap::new(sphere_samples(n, 1, &[], 0.0, 1).remove(0), 0.8).unwrap();
            let area = rule.integrate(&cap, 1, |_, out| {
                out[0] = 1.0;
                Ok(())
            })
            .unwrap()[0];
            let exact = match n {
                1 => 1.6,
                2 => 2.0 * PI * (1.0 - 0.8f64.cos()),
                3 => 2.0 * PI * (0.8 - 0.8f64.sin() * 0.8f64.cos()),
                _ => cap.area(),
            };
            assert!((area - exact).abs() < 1e-12, "n={n}: {area} vs {exact}");
        }
        assert!((unit_sphere_area(2) - 4.0 * PI).abs() < 1e-14);
        assert!((unit_sphere_area(3) - 2.0 * PI * PI).abs() < 1e-13);
    }

    #[test]
    fn cap_quadrature_integrates_a_coordinate() {
        // ∫_cap x dU = c |S^{n−1}| ∫_0^ρ cos θ sin^{n−1} θ dθ = c |S^{n−1}| sin^n ρ / n
        let n = 3;
        let cap = SphericalCap::new(pt(&[0.2, 0.4, -0.1, 0.8]), 1.1).unwrap();
        let r = CapRule::default_rule()
            .integrate(&cap, 4, |x, out| {
                out.copy_from_slice(x);
                Ok(())
            })
            .unwrap();
        let scale = unit_sphere_area(n - 1) * 1.1f64.sin().powi(n as i32) / n as f64;
        for (v, c) in r.iter().zip(cap.center.coords()) {
            assert!((v - scale * c).abs() < 1e-12);
        }
    }

    #[test]
    fn bump_gamma_matches_the_rotational_stencil() {
        let bump = CapBump::new(pt(&[0.1, 0.2, 0.9, 0.3]), 0.7, Multivector::blade(4, 0b0110)).unwrap();
        let field = bump.as_field();
        let cap = bump.support();
        for x in sphere_samples(3, 40, &[], 0.0, 31).into_iter().filter(|x| cap.contains(x)).take(5) {
            let exact = bump.gamma(x.coords());
            let fd = gamma_op(&field, &x, DEFAULT_THETA).unwrap();
            assert!((&exact - &fd).norm() < 1e-7, "{}", (&exact - &fd).norm());
            let d = spherical_dirac(&field, &x, DEFAULT_THETA).unwrap();
            assert!((&bump.spherical_dirac(x.coords()) - &d).norm() < 1e-7);
        }
    }

    #[test]
    fn cap_family_stays_inside_the_cap() {
        let cap = SphericalCap::new(pt(&[0.0, 1.0, 1.0]), 0.9).unwrap();
        for b in cap_test_family(&cap, 20, 42).unwrap() {
            assert!(cap.center.geodesic_distance(&b.center) + b.angle < cap.angle);
            assert!(b.angle > 0.0);
        }
    }

    #[test]
    fn weak_residual_of_zero_field_is_zero() {
        let cap = SphericalCap::new(north(2), 0.8).unwrap();
        let f = SphericalField::constant(2, Multivector::zero(3));
        let eta = cap_test_family(&cap, 1, 1).unwrap().remove(0);
        let r = weak_spherical_residual(&f, 2.0, &cap, &eta, &CapRule::default_rule()).unwrap();
        assert_eq!(r.value.norm(), 0.0);
        assert_eq!(r.normalized, 0.0);
    }

    #[test]
    fn weak_residual_of_a_constant_matches_the_polar_integral() {
        // ∫ D_S ψ dU = c |S^{n−1}| ∫_0^ρ [ψ'(cos θ)(−sin²θ) + (n/2) ψ cos θ] sin^{n−1}θ dθ
        for n in [2usize, 3] {
            let cap = SphericalCap::new(sphere_samples(n, 1, &[], 0.0, 50).remove(0), 1.0).unwrap();
            let eta = CapBump::scalar(cap.center.clone(), 0.9).unwrap();
            let mut cvec = vec![0.0; n + 1];
            cvec[0] = 0.7;
            cvec[n] = -0.2;
            let c = Multivector::vector(&cvec) + Multivector::scalar(n + 1, 0.4);
            let f = SphericalField::constant(n, c.clone());
            let rule = if n == 2 { CapRule::new(16, 24, 64).unwrap() } else { CapRule::default_rule().doubled() };
            let r = weak_spherical_residual(&f, 2.0, &cap, &eta, &rule).unwrap();

            let rho = eta.angle;
            let one_minus = 1.0 - rho.cos();
            let (ts, ws) = QuadratureRule::new(30, 20).unwrap().nodes_1d(0.0, rho);
            let mut polar = 0.0;
            for (t, w) in ts.iter().zip(&ws) {
                let s = (1.0 - t.cos()) / one_minus;
                let q = 1.0 - s;
                let psi = (-1.0 / q).exp();
                let slope = psi / (q * q * one_minus);
                polar += w * (slope * (-t.sin().powi(2)) + 0.5 * n as f64 * psi * t.cos()) * t.sin().powi(n as i32 - 1);
            }
            let integral_ds = cap.center.as_multivector().scale(unit_sphere_area(n - 1) * polar);
            let oracle = &c.conjugation() * &integral_ds;
            assert!((&r.value - &oracle).norm() < 1e-10 * (1.0 + oracle.norm()), "n={n} {} vs {oracle}", r.value);
            assert!(r.value.norm() > 1e-3);
        }
    }

    #[test]
    fn kernels_are_weak_solutions_on_caps_away_from_the_pole() {
        for (n, p) in [(2usize, 2.0), (2, 1.5), (3, 2.0), (3, 3.0)] {
            let y = north(n);
            let mut cc = vec![0.0; n + 1];
            cc[0] = 1.0;
            cc[n] = -0.3;
            let cap = SphericalCap::new(pt(&cc), 0.8).unwrap();
            let f = SphericalField::kernel(&y, p).unwrap();
            for eta in cap_test_family(&cap, 2, 42).unwrap() {
                let r = weak_spherical_residual(&f, p, &cap, &eta, &CapRule::default_rule()).unwrap();
                assert!(r.normalized <= 1e-5, "n={n} p={p}: {}", r.normalized);
                assert!(r.normalization > 1e-3);
            }
        }
    }

    #[test]
    fn weak_residual_rejects_bad_supports() {
        let cap = SphericalCap::new(north(2), 0.5).unwrap();
        let eta = CapBump::scalar(pt(&[0.3, 0.0, 1.0]), 0.4).unwrap();
        let f = SphericalField::constant(2, Multivector::one(3));
        assert!(weak_spherical_residual(&f, 2.0, &cap, &eta, &CapRule::default_rule()).is_err());
        let inside = CapBump::scalar(north(2), 0.3).unwrap();
        let k = SphericalField::kernel(&north(2), 2.0).unwrap();
        assert!(matches!(
            weak_spherical_residual(&k, 2.0, &cap, &inside, &CapRule::default_rule()),
            Err(Error::Hypothesis(_))
        ));
    }

    #[test]
    fn cayley_map_lands_on_the_sphere_and_scales_chords() {
        let u = [0.3, -1.2, 0.5];
        let v = [1.1, 0.4, -0.2];
        let (cu, cv) = (cayley(&u), cayley(&v));
        assert!((norm(cu.coords()) - 1.0).abs() < 1e-15);
        let lhs = chord(cu.coords(), cv.coords()).powi(2);
        let d2: f64 = u.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
        assert!((lhs - cayley_factor(&u) * cayley_factor(&v) * d2).abs() < 1e-14);
    }

    #[test]
    fn cayley_ratio_is_constant() {
        for n in [2usize, 3] {
            let report = cayley_ratio_check(n, 50, 42).unwrap();
            assert!(report.max_relative_deviation < 1e-6, "n={n}");
            assert!((report.mean - 1.0).abs() < 1e-12);
        }
    }
}
