//! The two-dimensional case: complex fields identified with the even
//! subalgebra of `Cl_2` (`a + ib ↔ a + b e_2e_1`), the Wirtinger operator
//! `∂/∂z̄ = (∂_x + i∂_y)/2`, the p-Cauchy-Riemann equation and its
//! covariance under holomorphic changes of variable.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::clifford::Multivector;
use crate::error::{Error, Result};
use crate::field::{dirac_fd_with, Domain, DEFAULT_STEP, DOMAIN_MARGIN, VANISHING_NORM};
use crate::quadrature::QuadratureRule;
use crate::weak::{interior_clearance, BumpTestFunction};

pub type ComplexFn = Arc<dyn Fn(Complex64) -> Complex64 + Send + Sync>;

/// Bitmask of `e_1e_2`; `e_2e_1 = −e_1e_2` plays the role of `i`.
const E12: usize = 0b11;

/// A complex function on a planar region with declared singular points.
#[derive(Clone)]
pub struct ComplexField {
    label: String,
    eval: ComplexFn,
    singular: Vec<Complex64>,
}

impl fmt::Debug for ComplexField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComplexField")
            .field("label", &self.label)
            .field("singular", &self.singular)
            .finish()
    }
}

impl ComplexField {
    pub fn new(label: impl Into<String>, eval: impl Fn(Complex64) -> Complex64 + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            eval: Arc::new(eval),
            singular: Vec::new(),
        }
    }

    pub fn with_singularity(mut self, z: Complex64) -> Self {
        self.singular.push(z);
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn singular_points(&self) -> &[Complex64] {
        &self.singular
    }

    pub fn value(&self, z: Complex64) -> Complex64 {
        (self.eval)(z)
    }

    fn singular_distance(&self, z: Complex64) -> f64 {
        self.singular
            .iter()
            .map(|s| (s - z).re.abs().max((s - z).im.abs()))
            .fold(f64::INFINITY, f64::min)
    }

    fn check_stencil(&self, z: Complex64, h: f64) -> Result<()> {
        if self.singular_distance(z) <= h {
            return Err(Error::Stencil {
                point: vec![z.re, z.im],
            });
        }
        Ok(())
    }
}

/// A holomorphic map together with its complex derivative.
#[derive(Clone)]
pub struct HolomorphicMap {
    label: String,
    f: ComplexFn,
    df: ComplexFn,
}

impl fmt::Debug for HolomorphicMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HolomorphicMap({})", self.label)
    }
}

impl HolomorphicMap {
    pub fn new(
        label: impl Into<String>,
        f: impl Fn(Complex64) -> Complex64 + Send + Sync + 'static,
        df: impl Fn(Complex64) -> Complex64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            f: Arc::new(f),
            df: Arc::new(df),
        }
    }

    pub fn identity() -> Self {
        Self::new("z", |z| z, |_| Complex64::new(1.0, 0.0))
    }

    /// `ζ ↦ ζ + c`.
    pub fn translation(c: Complex64) -> Self {
        Self::new(format!("z + {c}"), move |z| z + c, |_| Complex64::new(1.0, 0.0))
    }

    /// `ζ ↦ aζ`.
    pub fn scaling(a: Complex64) -> Self {
        Self::new(format!("{a} z"), move |z| a * z, move |_| a)
    }

    /// `ζ ↦ ζ² + c`.
    pub fn square_plus(c: Complex64) -> Self {
        Self::new(format!("z^2 + {c}"), move |z| z * z + c, |z| 2.0 * z)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn value(&self, z: Complex64) -> Complex64 {
        (self.f)(z)
    }

    pub fn derivative(&self, z: Complex64) -> Complex64 {
        (self.df)(z)
    }
}

/// Central-difference partials `(∂_x g, ∂_y g)` with optional Richardson
/// extrapolation.
fn partials_fd<F>(g: F, z: Complex64, h: f64, richardson: bool) -> (Complex64, Complex64)
where
    F: Fn(Complex64) -> Complex64,
{
    let central = |s: f64| {
        let dx = (g(z + s) - g(z - s)) / (2.0 * s);
        let dy = (g(z + Complex64::new(0.0, s)) - g(z - Complex64::new(0.0, s))) / (2.0 * s);
        (dx, dy)
    };
    let (dx, dy) = central(h);
    if !richardson {
        return (dx, dy);
    }
    let (dx2, dy2) = central(0.5 * h);
    ((4.0 * dx2 - dx) / 3.0, (4.0 * dy2 - dy) / 3.0)
}

fn wirtinger_bar<F>(g: F, z: Complex64, h: f64, richardson: bool) -> Complex64
where
    F: Fn(Complex64) -> Complex64,
{
    let (dx, dy) = partials_fd(g, z, h, richardson);
    0.5 * (dx + Complex64::i() * dy)
}

/// `∂g/∂z̄ = (∂_x + i∂_y) g / 2` by central differences.
pub fn dbar_fd(g: &ComplexField, z: Complex64, h: f64, richardson: bool) -> Result<Complex64> {
    g.check_stencil(z, h)?;
    Ok(wirtinger_bar(|w| g.value(w), z, h, richardson))
}

/// `∂g/∂z = (∂_x − i∂_y) g / 2` by central differences.
pub fn dz_fd(g: &ComplexField, z: Complex64, h: f64, richardson: bool) -> Result<Complex64> {
    g.check_stencil(z, h)?;
    let (dx, dy) = partials_fd(|w| g.value(w), z, h, richardson);
    Ok(0.5 * (dx - Complex64::i() * dy))
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::Parameter(format!("p must exceed 1, got {p}")));
    }
    Ok(())
}

/// `|v|^{p-2} v`; zero maps to zero.
fn cr_nonlinearity(v: Complex64, p: f64) -> Complex64 {
    let r = v.norm();
    if r == 0.0 || p == 2.0 {
        v
    } else {
        v * r.powf(p - 2.0)
    }
}

/// Strong p-CR residual `∂/∂z̄ (|g|^{p-2} g)` at `z`, Richardson-extrapolated.
pub fn p_cr_residual(g: &ComplexField, p: f64, z: Complex64, h: f64) -> Result<Complex64> {
    check_p(p)?;
    g.check_stencil(z, h)?;
    if p < 2.0 {
        for w in [z, z + h, z - h, z + Complex64::new(0.0, h), z - Complex64::new(0.0, h)] {
            if g.value(w).norm() < VANISHING_NORM {
                return Err(Error::VanishingNorm {
                    point: vec![w.re, w.im],
                });
            }
        }
    }
    Ok(wirtinger_bar(|w| cr_nonlinearity(g.value(w), p), z, h, true))
}

/// Exponent `(p − 2)/(p − 1)` of the radial p-harmonic function in the plane.
pub fn planar_p_harmonic_exponent(p: f64) -> f64 {
    (p - 2.0) / (p - 1.0)
}

/// `∂h/∂z` for the radial p-harmonic `h = |z|^α` (α = (p−2)/(p−1)), i.e.
/// `(α/2) z̄ |z|^{α−2}`; at p = 2 the potential is `ln|z|` and `g = 1/(2z)`.
/// In both cases `|g|^{p-2} g` is a constant multiple of `1/z`.
pub fn p_cr_solution(p: f64) -> Result<ComplexField> {
    check_p(p)?;
    let field = if p == 2.0 {
        ComplexField::new("1/(2z)", |z| 0.5 / z)
    } else {
        let a = planar_p_harmonic_exponent(p);
        ComplexField::new(format!("(a/2) conj(z) |z|^(a-2), a = {a}"), move |z| {
            z.conj() * (0.5 * a * z.norm().powf(a - 2.0))
        })
    };
    Ok(field.with_singularity(Complex64::new(0.0, 0.0)))
}

/// `a + ib ↦ a + b e_2e_1` in `Cl_2`.
pub fn to_cl2(z: Complex64) -> Multivector {
    let mut m = Multivector::scalar(2, z.re);
    m.set(E12, -z.im);
    m
}

/// Inverse of [`to_cl2`] on the even part.
pub fn from_cl2(m: &Multivector) -> Complex64 {
    Complex64::new(m.get(0), -m.get(E12))
}

/// `|D G − e_1 (2 ∂G/∂z̄)|` for the `Cl_2` image `G` of `g`, with both sides by
/// Richardson finite differences.
pub fn cl2_consistency_check(g: &ComplexField, z: Complex64, h: f64) -> Result<f64> {
    let d = dirac_fd_with(2, |x| Ok(to_cl2(g.value(Complex64::new(x[0], x[1])))), &[z.re, z.im], h, true)?;
    let dbar = dbar_fd(g, z, h, true)?;
    let expected = &Multivector::e(2, 1) * &to_cl2(2.0 * dbar);
    Ok((&d - &expected).norm())
}

/// Both readings of the transfer of `∂/∂w̄` through `w = f(ζ)`.
#[derive(Debug, Clone, Serialize)]
pub struct TransferReport {
    /// `|∂η/∂w̄(w) − conj(f'(ζ))^{-1} ∂/∂ζ̄ η(f(ζ))|`.
    pub discrepancy: f64,
    /// `|f'(ζ)^{-1} ∂η/∂w̄(w) − conj(f'(ζ))^{-1} ∂/∂ζ̄ η(f(ζ))|`, the form with
    /// the holomorphic factor `f'(ζ)^{-1}` kept on the left.
    pub literal_discrepancy: f64,
}

/// Chain rule for `∂/∂w̄` under a holomorphic change of variable, evaluated by
/// finite differences at `ζ`.
pub fn transfer_identity_check(
    f: &HolomorphicMap,
    eta: &BumpTestFunction,
    zeta: Complex64,
    h: f64,
) -> Result<TransferReport> {
    if eta.dim() != 2 {
        return Err(Error::DimensionMismatch(eta.dim(), 2));
    }
    let fp = f.derivative(zeta);
    if fp.norm() < VANISHING_NORM {
        return Err(Error::Hypothesis(format!("f'(ζ) vanishes at ζ = {zeta}")));
    }
    let eta_c = |w: Complex64| Complex64::new(eta.profile(&[w.re, w.im]), 0.0);
    let w = f.value(zeta);
    let left = wirtinger_bar(eta_c, w, h, true);
    let right = wirtinger_bar(|s| eta_c(f.value(s)), zeta, h, true) / fp.conj();
    Ok(TransferReport {
        discrepancy: (left - right).norm(),
        literal_discrepancy: (left / fp - right).norm(),
    })
}

/// A complex weak residual, its normalization, and the value of the pairing
/// with `conj(G)` in place of `G`.
#[derive(Debug, Clone, Serialize)]
pub struct ComplexWeakResidual {
    pub value: Complex64,
    pub normalization: f64,
    pub normalized: f64,
    /// `|∫ conj(G) ∂η/∂z̄| / normalization`.
    pub conjugate_pairing: f64,
}

/// `∫ G ∂η/∂z̄ dx dy` for `G` given pointwise, with the normalization
/// `∫ |G| |∂η/∂z̄|`.
fn weak_cr_pairing<G>(domain: &Domain, eta: &BumpTestFunction, rule: &QuadratureRule, g: G) -> Result<ComplexWeakResidual>
where
    G: Fn(Complex64) -> Result<Complex64> + Sync,
{
    if domain.dim() != 2 || eta.dim() != 2 {
        return Err(Error::DimensionMismatch(domain.dim(), 2));
    }
    if interior_clearance(domain, &eta.center) < eta.radius {
        return Err(Error::Contract(format!(
            "test function support (center {:?}, radius {}) escapes the domain",
            eta.center, eta.radius
        )));
    }
    let (lo, hi) = eta.support_box();
    let s = rule.integrate(&lo, &hi, 5, |x, out| {
        if !eta.in_support(x) {
            return Ok(());
        }
        let grad = eta.profile_gradient(x);
        let dbar_eta = 0.5 * Complex64::new(grad[0], grad[1]);
        if dbar_eta.norm() == 0.0 {
            return Ok(());
        }
        let gz = g(Complex64::new(x[0], x[1]))?;
        let v = gz * dbar_eta;
        let c = gz.conj() * dbar_eta;
        out.copy_from_slice(&[v.re, v.im, gz.norm() * dbar_eta.norm(), c.re, c.im]);
        Ok(())
    })?;
    let value = Complex64::new(s[0], s[1]);
    let normalization = s[2];
    let ratio = |r: f64| {
        if normalization > 0.0 {
            r / normalization
        } else if r == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    Ok(ComplexWeakResidual {
        value,
        normalization,
        normalized: ratio(value.norm()),
        conjugate_pairing: ratio(Complex64::new(s[3], s[4]).norm()),
    })
}

/// Weak p-CR residual `∫ |g|^{p-2} g ∂η/∂z̄ dx dy`.
pub fn weak_p_cr_residual(
    g: &ComplexField,
    p: f64,
    domain: &Domain,
    eta: &BumpTestFunction,
    rule: &QuadratureRule,
) -> Result<ComplexWeakResidual> {
    check_p(p)?;
    weak_cr_pairing(domain, eta, rule, |z| Ok(cr_nonlinearity(g.value(z), p)))
}

/// Requires `f' ≠ 0` on the domain closure and `f(domain)` clear of the
/// singular points of `g`, by a grid scan.
fn check_theorem5_hypotheses(g: &ComplexField, f: &HolomorphicMap, domain: &Domain) -> Result<()> {
    let interior = |z: Complex64| domain.contains(&[z.re, z.im]);
    for x in domain.scan_points(81) {
        let z = Complex64::new(x[0], x[1]);
        if !interior(z) {
            continue;
        }
        if f.derivative(z).norm() < DOMAIN_MARGIN {
            return Err(Error::Hypothesis(format!("f' vanishes near ζ = {z}")));
        }
        let w = f.value(z);
        if g.singular_points().iter().any(|s| (s - w).norm() < DOMAIN_MARGIN) {
            return Err(Error::Hypothesis(format!("f(ζ) = {w} hits a singular point of g")));
        }
    }
    Ok(())
}

/// Weak p-CR residual of `f'(ζ) |g(f(ζ))|^{p-2} g(f(ζ))` against `η` on the
/// ζ-domain.
pub fn theorem5_check(
    g: &ComplexField,
    f: &HolomorphicMap,
    p: f64,
    domain: &Domain,
    eta: &BumpTestFunction,
    rule: &QuadratureRule,
) -> Result<ComplexWeakResidual> {
    check_p(p)?;
    check_theorem5_hypotheses(g, f, domain)?;
    weak_cr_pairing(domain, eta, rule, |z| {
        Ok(f.derivative(z) * cr_nonlinearity(g.value(f.value(z)), p))
    })
}

/// One sample of a p-CR residual sweep.
#[derive(Debug, Clone, Serialize)]
pub struct CrSample {
    pub z: [f64; 2],
    pub residual: f64,
}

/// Strong p-CR residuals of `g` at `count` points on circles `|z| = r` for
/// radii evenly spaced in `[rmin, rmax]`.
pub fn p_cr_sweep(g: &ComplexField, p: f64, rmin: f64, rmax: f64, count: usize) -> Result<Vec<CrSample>> {
    (0..count)
        .map(|k| {
            let t = k as f64 / (count.max(2) - 1) as f64;
            let r = rmin + (rmax - rmin) * t;
            let z = Complex64::from_polar(r, 0.7 + 2.399_963 * k as f64);
            let res = p_cr_residual(g, p, z, DEFAULT_STEP)?;
            Ok(CrSample {
                z: [z.re, z.im],
                residual: res.norm(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weak::test_family;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn wirtinger_examples() {
        let z0 = c(0.3, -0.7);
        let id = ComplexField::new("z", |z| z);
        assert!(dbar_fd(&id, z0, 1e-3, true).unwrap().norm() < 1e-12);
        let conj = ComplexField::new("conj z", |z| z.conj());
        assert!((dbar_fd(&conj, z0, 1e-3, true).unwrap() - 1.0).norm() < 1e-12);
        let modsq = ComplexField::new("|z|^2", |z| z * z.conj());
        assert!((dbar_fd(&modsq, z0, 1e-3, true).unwrap() - z0).norm() < 1e-10);
        assert!((dz_fd(&modsq, z0, 1e-3, true).unwrap() - z0.conj()).norm() < 1e-10);
    }

    #[test]
    fn e2e1_squares_to_minus_one() {
        let e21 = &Multivector::e(2, 2) * &Multivector::e(2, 1);
        assert_eq!(&e21 * &e21, Multivector::scalar(2, -1.0));
        assert_eq!(to_cl2(c(0.0, 1.0)), e21);
        let z = c(1.5, -0.25);
        assert_eq!(from_cl2(&to_cl2(z)), z);
        // the identification is multiplicative
        let w = c(-0.5, 2.0);
        assert_eq!(from_cl2(&(&to_cl2(z) * &to_cl2(w))), z * w);
    }

    #[test]
    fn derived_solutions_solve_p_cr() {
        for p in [1.5, 2.0, 3.0] {
            let g = p_cr_solution(p).unwrap();
            for r in [0.5, 1.0, 2.0] {
                for k in 0..4 {
                    let z = Complex64::from_polar(r, 0.4 + 1.3 * k as f64);
                    let res = p_cr_residual(&g, p, z, 1e-3).unwrap();
                    assert!(res.norm() <= 1e-8, "p={p} z={z}: {res}");
                }
            }
            // |g|^{p-2} g is a multiple of 1/z
            let z = c(0.8, 0.6);
            let k = cr_nonlinearity(g.value(z), p) * z;
            let k2 = cr_nonlinearity(g.value(2.0 * z), p) * 2.0 * z;
            assert!((k - k2).norm() < 1e-13);
        }
        let constant = ComplexField::new("c", |_| c(1.0, 2.0));
        assert_eq!(p_cr_residual(&constant, 1.5, c(1.0, 0.0), 1e-3).unwrap(), c(0.0, 0.0));
    }

    #[test]
    fn wrong_p_is_detected() {
        let g = p_cr_solution(1.5).unwrap();
        assert!(p_cr_residual(&g, 3.0, c(1.0, 0.5), 1e-3).unwrap().norm() > 1e-3);
    }

    #[test]
    fn derivative_of_p_harmonic_is_p_cr() {
        let p = 3.0;
        let a = planar_p_harmonic_exponent(p);
        let h = ComplexField::new("|z|^a", move |z| c(z.norm().powf(a), 0.0));
        let g = ComplexField::new("dh/dz", move |z| dz_fd(&h, z, 1e-3, true).unwrap());
        let z = c(1.1, -0.4);
        assert!(p_cr_residual(&g, p, z, 1e-2).unwrap().norm() < 1e-6);
    }

    #[test]
    fn cl2_dirac_matches_wirtinger() {
        let fields = [
            ComplexField::new("z^2 conj z", |z| z * z * z.conj()),
            ComplexField::new("exp(z) + sin(conj z)", |z| z.exp() + z.conj().sin()),
            ComplexField::new("1/z", |z| 1.0 / z),
        ];
        for g in &fields {
            for z in [c(0.5, 0.3), c(-1.2, 0.8), c(0.9, -1.1)] {
                assert!(cl2_consistency_check(g, z, 1e-3).unwrap() < 1e-10 * (1.0 + g.value(z).norm()));
            }
        }
    }

    #[test]
    fn transfer_identity() {
        let eta = BumpTestFunction::scalar(vec![1.2, 0.9], 1.5).unwrap();
        let r = transfer_identity_check(&HolomorphicMap::identity(), &eta, c(1.0, 0.5), 1e-3).unwrap();
        assert!(r.discrepancy <= 1e-10 && r.literal_discrepancy <= 1e-10);
        let r = transfer_identity_check(&HolomorphicMap::scaling(c(2.0, 0.0)), &eta, c(0.5, 0.4), 1e-3).unwrap();
        assert!(r.discrepancy <= 1e-8, "{r:?}");
        assert!(r.literal_discrepancy > 1e-3);
        let sq = HolomorphicMap::new("z^2", |z| z * z, |z| 2.0 * z);
        let eta = BumpTestFunction::scalar(vec![0.0, 2.0], 1.0).unwrap();
        let r = transfer_identity_check(&sq, &eta, c(1.0, 1.0), 1e-3).unwrap();
        assert!(r.discrepancy <= 1e-6, "{r:?}");
        let critical = transfer_identity_check(&sq, &eta, c(0.0, 0.0), 1e-3);
        assert!(matches!(critical, Err(Error::Hypothesis(_))));
    }

    fn annulus() -> Domain {
        Domain::Annulus {
            center: vec![0.0, 0.0],
            inner: 0.5,
            outer: 1.5,
        }
    }

    #[test]
    fn composition_with_holomorphic_map() {
        let rule = QuadratureRule::default_for(2);
        let f = HolomorphicMap::square_plus(c(3.0, 0.0));
        for p in [1.5, 2.0, 3.0] {
            let g = p_cr_solution(p).unwrap();
            for eta in test_family(&annulus(), 5, 42).unwrap() {
                let r = theorem5_check(&g, &f, p, &annulus(), &eta, &rule).unwrap();
                assert!(r.normalized <= 1e-6, "p={p}: {r:?}");
                assert!(r.conjugate_pairing > 1e-3, "p={p}: {r:?}");
            }
        }
        let zero = ComplexField::new("0", |_| c(0.0, 0.0));
        let eta = &test_family(&annulus(), 1, 1).unwrap()[0];
        assert_eq!(theorem5_check(&zero, &f, 1.5, &annulus(), eta, &rule).unwrap().normalized, 0.0);
    }

    #[test]
    fn translation_reduces_to_base_residual() {
        let rule = QuadratureRule::default_for(2);
        let g = p_cr_solution(1.5).unwrap();
        let shift = c(0.0, 3.0);
        let f = HolomorphicMap::translation(shift);
        let eta = BumpTestFunction::scalar(vec![0.2, 0.1], 0.5).unwrap();
        let moved = BumpTestFunction::scalar(vec![0.2, 3.1], 0.5).unwrap();
        let dom = Domain::ball(vec![0.0, 0.0], 1.0);
        let a = theorem5_check(&g, &f, 1.5, &dom, &eta, &rule).unwrap();
        let b = weak_p_cr_residual(&g, 1.5, &Domain::ball(vec![0.0, 3.0], 1.0), &moved, &rule).unwrap();
        assert!((a.value - b.value).norm() < 1e-12 * a.normalization);
    }

    #[test]
    fn vanishing_derivative_is_rejected() {
        let rule = QuadratureRule::default_for(2);
        let g = p_cr_solution(2.0).unwrap();
        let f = HolomorphicMap::square_plus(c(3.0, 0.0));
        let dom = Domain::ball(vec![0.0, 0.0], 1.0);
        let eta = BumpTestFunction::scalar(vec![0.2, 0.1], 0.5).unwrap();
        assert!(matches!(
            theorem5_check(&g, &f, 2.0, &dom, &eta, &rule),
            Err(Error::Hypothesis(_))
        ));
    }
}
