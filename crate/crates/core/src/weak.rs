//! Weak formulations of the p-Dirac and p-harmonic equations, paired against
//! smooth bump test functions by tensor Gauss-Legendre quadrature, and the
//! conformal covariance experiments built on them.
//!
//! A test function is `η = φ B` with a scalar bump profile `φ` and a constant
//! multivector `B`, so `Dη = (∇φ) B` and every weak residual factors as
//! `(∫ conj(G) ∇φ) B`. The experiments evaluate the bracket once per bump and
//! expand it over all basis blades.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::clifford::Multivector;
use crate::error::{Error, Result};
use crate::field::{dirac_from_partials, dirac_of, partials_fd_with, AnalyticField, Domain, DEFAULT_STEP, DOMAIN_MARGIN};
use crate::mobius::VahlenMatrix;
use crate::quadrature::QuadratureRule;

/// Residuals at or below this value count as converged regardless of the
/// doubling ratio.
pub const QUADRATURE_FLOOR: f64 = 1e-12;

/// Number of random bumps in the default test family.
pub const DEFAULT_FAMILY_SIZE: usize = 5;

/// `φ(x) B` with `φ(x) = exp(−1/(1 − s))`, `s = |x − center|² / radius²`,
/// supported on the open ball of the given radius.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BumpTestFunction {
    pub center: Vec<f64>,
    pub radius: f64,
    pub blade: Multivector,
}

impl BumpTestFunction {
    pub fn new(center: Vec<f64>, radius: f64, blade: Multivector) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Parameter(format!("bump radius must be positive, got {radius}")));
        }
        if blade.dim() != center.len() {
            return Err(Error::DimensionMismatch(blade.dim(), center.len()));
        }
        Ok(Self { center, radius, blade })
    }

    /// Bump with coefficient 1.
    pub fn scalar(center: Vec<f64>, radius: f64) -> Result<Self> {
        let n = center.len();
        Self::new(center, radius, Multivector::one(n))
    }

    pub fn with_blade(&self, blade: Multivector) -> Self {
        assert_eq!(blade.dim(), self.dim());
        Self {
            blade,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    fn s(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
            / (self.radius * self.radius)
    }

    pub fn in_support(&self, x: &[f64]) -> bool {
        self.s(x) < 1.0
    }

    pub fn profile(&self, x: &[f64]) -> f64 {
        let s = self.s(x);
        if s < 1.0 {
            (-1.0 / (1.0 - s)).exp()
        } else {
            0.0
        }
    }

    /// `∇φ(x)`.
    pub fn profile_gradient(&self, x: &[f64]) -> Vec<f64> {
        let s = self.s(x);
        let phi = if s < 1.0 { (-1.0 / (1.0 - s)).exp() } else { 0.0 };
        if phi == 0.0 {
            return vec![0.0; self.dim()];
        }
        let k = -phi * 2.0 / (self.radius * self.radius * (1.0 - s) * (1.0 - s));
        x.iter().zip(&self.center).map(|(a, c)| k * (a - c)).collect()
    }

    pub fn value(&self, x: &[f64]) -> Multivector {
        self.blade.scale(self.profile(x))
    }

    /// `Dη(x) = (∇φ(x)) B`.
    pub fn dirac(&self, x: &[f64]) -> Multivector {
        &Multivector::vector(&self.profile_gradient(x)) * &self.blade
    }

    pub fn support_box(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.center.iter().map(|c| c - self.radius).collect(),
            self.center.iter().map(|c| c + self.radius).collect(),
        )
    }

    /// The bump as a field with closed-form gradient.
    pub fn as_field(&self) -> AnalyticField {
        let (a, b) = (self.clone(), self.clone());
        AnalyticField::new(self.dim(), "bump", move |x| a.value(x)).with_gradient(move |x| {
            b.profile_gradient(x)
                .into_iter()
                .map(|g| b.blade.scale(g))
                .collect()
        })
    }
}

/// Signed distance from `x` to the complement of the domain (negative outside).
pub fn interior_clearance(domain: &Domain, x: &[f64]) -> f64 {
    let dist = |c: &[f64]| -> f64 {
        x.iter()
            .zip(c)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    match domain {
        Domain::Box { lo, hi } => x
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(v, (a, b))| (v - a).min(b - v))
            .fold(f64::INFINITY, f64::min),
        Domain::Ball { center, radius } => radius - dist(center),
        Domain::Annulus { center, inner, outer } => {
            let r = dist(center);
            (r - inner).min(outer - r)
        }
    }
}

fn domain_scale(domain: &Domain) -> f64 {
    match domain {
        Domain::Box { lo, hi } => lo
            .iter()
            .zip(hi)
            .map(|(a, b)| 0.5 * (b - a))
            .fold(f64::INFINITY, f64::min),
        Domain::Ball { radius, .. } => *radius,
        Domain::Annulus { inner, outer, .. } => 0.5 * (outer - inner),
    }
}

/// Seeded family of `count` scalar bumps whose supports lie inside the domain.
pub fn test_family(domain: &Domain, count: usize, seed: u64) -> Result<Vec<BumpTestFunction>> {
    let (lo, hi) = domain.bounding_box();
    let scale = domain_scale(domain);
    if !(scale > 0.0) {
        return Err(Error::Parameter("degenerate domain".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Parameter("could not place test bumps inside the domain".into()));
        }
        let c: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| rng.gen_range(*a..*b)).collect();
        let clearance = interior_clearance(domain, &c);
        if clearance < 0.3 * scale {
            continue;
        }
        let radius = rng.gen_range(0.5..0.9) * clearance;
        out.push(BumpTestFunction::scalar(c, radius)?);
    }
    Ok(out)
}

/// Positive weight `A(x) = |cx+d|^s`; the unit weight has no Möbius map.
#[derive(Debug, Clone)]
pub struct WeightFunction {
    exponent: f64,
    mobius: Option<VahlenMatrix>,
}

impl WeightFunction {
    pub fn unit() -> Self {
        Self {
            exponent: 0.0,
            mobius: None,
        }
    }

    pub fn conformal(m: &VahlenMatrix, exponent: f64) -> Self {
        Self {
            exponent,
            mobius: Some(m.clone()),
        }
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match &self.mobius {
            None => Ok(1.0),
            Some(m) => Ok(m.frame_at(x)?.scale.powf(self.exponent)),
        }
    }
}

/// `|v|^{p-2} v` with the value 0 at `v = 0`, as in the weak formulation.
fn weak_nonlinearity(v: &Multivector, p: f64) -> Multivector {
    let r = v.norm();
    if r == 0.0 || p == 2.0 {
        v.clone()
    } else {
        v.scale(r.powf(p - 2.0))
    }
}

/// `∫ conj(G) ∇φ` together with the normalization `∫ |G| |∇φ|`.
#[derive(Debug, Clone, Serialize)]
pub struct WeakPairing {
    pub base: Multivector,
    pub normalization: f64,
}

/// A weak residual and its scale-free version.
#[derive(Debug, Clone, Serialize)]
pub struct WeakResidual {
    pub value: Multivector,
    pub normalization: f64,
    pub normalized: f64,
}

impl WeakPairing {
    /// Residual against the test function `φ B`.
    pub fn residual(&self, blade: &Multivector) -> WeakResidual {
        let value = &self.base * blade;
        let normalization = self.normalization * blade.norm();
        let raw = value.norm();
        let normalized = if normalization > 0.0 {
            raw / normalization
        } else if raw == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        WeakResidual {
            value,
            normalization,
            normalized,
        }
    }

    /// Residuals against `φ e_A` for every basis blade, in mask order.
    pub fn blade_residuals(&self) -> Vec<WeakResidual> {
        let n = self.base.dim();
        (0..1usize << n)
            .map(|mask| self.residual(&Multivector::blade(n, mask)))
            .collect()
    }
}

/// Integrates `conj(G(x)) v(x)` and `|G||v|` over a box, where the closure
/// returns `None` outside the support and `(G, v)` inside.
fn integrate_pairings<F>(
    dim: usize,
    lo: &[f64],
    hi: &[f64],
    rule: &QuadratureRule,
    count: usize,
    flux: F,
) -> Result<Vec<WeakPairing>>
where
    F: Fn(&[f64]) -> Result<Option<(Vec<Multivector>, Multivector)>> + Sync,
{
    let blades = 1usize << dim;
    let stride = blades + 1;
    let sums = rule.integrate(lo, hi, count * stride, |x, out| {
        if let Some((gs, v)) = flux(x)? {
            let vn = v.norm();
            for (k, g) in gs.iter().enumerate() {
                let prod = &g.conjugation() * &v;
                let slot = &mut out[k * stride..(k + 1) * stride];
                slot[..blades].copy_from_slice(prod.coeffs());
                slot[blades] = g.norm() * vn;
            }
        }
        Ok(())
    })?;
    (0..count)
        .map(|k| {
            let slot = &sums[k * stride..(k + 1) * stride];
            Ok(WeakPairing {
                base: Multivector::from_coeffs(dim, slot[..blades].to_vec())?,
                normalization: slot[blades],
            })
        })
        .collect()
}

fn check_support(domain: &Domain, eta: &BumpTestFunction) -> Result<()> {
    if domain.dim() != eta.dim() {
        return Err(Error::DimensionMismatch(domain.dim(), eta.dim()));
    }
    if interior_clearance(domain, &eta.center) < eta.radius {
        return Err(Error::Contract(format!(
            "test function support (center {:?}, radius {}) escapes the domain",
            eta.center, eta.radius
        )));
    }
    Ok(())
}

/// `∫ conj(A |F|^{p-2} F) Dη` with an arbitrary gradient for the profile.
fn weak_pairing_with<F, W, G>(
    domain: &Domain,
    eta: &BumpTestFunction,
    rule: &QuadratureRule,
    p: f64,
    weight: W,
    field: F,
    profile_gradient: G,
) -> Result<WeakPairing>
where
    F: Fn(&[f64]) -> Result<Multivector> + Sync,
    W: Fn(&[f64]) -> Result<f64> + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    check_p(p)?;
    check_support(domain, eta)?;
    let (lo, hi) = eta.support_box();
    let mut pairs = integrate_pairings(eta.dim(), &lo, &hi, rule, 1, |x| {
        if !eta.in_support(x) {
            return Ok(None);
        }
        let grad = profile_gradient(x);
        if grad.iter().all(|g| *g == 0.0) {
            return Ok(None);
        }
        let g = weak_nonlinearity(&field(x)?, p).scale(weight(x)?);
        Ok(Some((vec![g], Multivector::vector(&grad))))
    })?;
    Ok(pairs.remove(0))
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::Parameter(format!("p must exceed 1, got {p}")));
    }
    Ok(())
}

/// Weighted weak p-Dirac pairing `∫ conj(A |g|^{p-2} g) ∇φ` for the profile of `η`.
pub fn weak_ap_dirac_pairing(
    g: &AnalyticField,
    p: f64,
    weight: &WeightFunction,
    domain: &Domain,
    eta: &BumpTestFunction,
    rule: &QuadratureRule,
) -> Result<WeakPairing> {
    weak_pairing_with(
        domain,
        eta,
        rule,
        p,
        |x| weight.eval(x),
        |x| Ok(g.value(x)),
        |x| eta.profile_gradient(x),
    )
}

/// `∫_U conj(|f|^{p-2} f) Dη`.
pub fn weak_p_dirac_residual(
    f: &AnalyticField,
    p: f64,
    domain: &Domain,
    eta: &BumpTestFunction,
    rule: &QuadratureRule,
) -> Result<WeakResidual> {
    weak_ap_dirac_residual(f, p, &WeightFunction::unit(), domain, eta, rule)
}

/// `∫_U conj(A |g|^{p-2} g) Dη`.
pub fn weak_ap_dirac_residual(
    g: &AnalyticField,
    p: f64,
    weight: &WeightFunction,
    domain: &Domain,
    eta: &BumpTestFunction,
    rule: &QuadratureRule,
) -> Result<WeakResidual> {
    Ok(weak_ap_dirac_pairing(g, p, weight, domain, eta, rule)?.residual(&eta.blade))
}

/// `∫_U conj(|Dh|^{p-2} Dh) Dη`, with `Dh` from the closed-form gradient when
/// available.
pub fn weak_p_harmonic_residual(
    h: &AnalyticField,
    p: f64,
    domain: &Domain,
    eta: &BumpTestFunction,
    rule: &QuadratureRule,
) -> Result<WeakResidual> {
    let pairing = weak_pairing_with(
        domain,
        eta,
        rule,
        p,
        |_| Ok(1.0),
        |x| dirac_of(h, x, DEFAULT_STEP),
        |x| eta.profile_gradient(x),
    )?;
    Ok(pairing.residual(&eta.blade))
}

/// `|∫ Dη| / ∫ |Dη|`; zero by compact support.
pub fn divergence_check(eta: &BumpTestFunction, rule: &QuadratureRule) -> Result<f64> {
    let (lo, hi) = eta.support_box();
    let n = eta.dim();
    let width = (1 << n) + 1;
    let sums = rule.integrate(&lo, &hi, width, |x, out| {
        if eta.in_support(x) {
            let d = eta.dirac(x);
            out[..width - 1].copy_from_slice(d.coeffs());
            out[width - 1] = d.norm();
        }
        Ok(())
    })?;
    let total = sums[..width - 1].iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(total / sums[width - 1])
}

/// Normalized residual under a rule and under the same rule with doubled order.
#[derive(Debug, Clone, Serialize)]
pub struct QuadratureConvergence {
    pub order: usize,
    pub residual: f64,
    pub doubled_order: usize,
    pub doubled_residual: f64,
    /// Doubling either reduced the residual ≥ 10× or both values sit below
    /// the floor.
    pub converging: bool,
    /// The raw residual moved by more than 10% of the normalization.
    pub accuracy_warning: bool,
}

pub fn quadrature_convergence<F>(rule: &QuadratureRule, residual: F) -> Result<QuadratureConvergence>
where
    F: Fn(&QuadratureRule) -> Result<WeakResidual>,
{
    let doubled_rule = rule.doubled();
    let base = residual(rule)?;
    let doubled = residual(&doubled_rule)?;
    let shift = (&base.value - &doubled.value).norm();
    Ok(QuadratureConvergence {
        order: rule.order,
        residual: base.normalized,
        doubled_order: doubled_rule.order,
        doubled_residual: doubled.normalized,
        converging: doubled.normalized * 10.0 <= base.normalized
            || base.normalized.max(doubled.normalized) <= QUADRATURE_FLOOR,
        accuracy_warning: shift > 0.1 * doubled.normalization.max(base.normalization),
    })
}

/// One (test function, blade) entry of a covariance experiment.
#[derive(Debug, Clone, Serialize)]
pub struct CovarianceRow {
    pub theorem: u8,
    pub n: usize,
    pub p: f64,
    /// Weight exponent `s` in `A = |cx+d|^s`; `None` for the unweighted form.
    pub exponent: Option<f64>,
    pub eta: usize,
    pub blade: usize,
    pub residual: f64,
    pub raw: f64,
    pub normalization: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceReport {
    pub theorem: u8,
    pub n: usize,
    pub p: f64,
    pub mobius: String,
    pub field: String,
    /// Integration domain `M^{-1}(U)`.
    pub domain: Domain,
    pub rows: Vec<CovarianceRow>,
    pub max_residual: f64,
}

/// Maximum residual per scanned exponent.
#[derive(Debug, Clone, Serialize)]
pub struct ExponentSummary {
    pub exponent: f64,
    pub max_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExponentScanReport {
    pub n: usize,
    pub p: f64,
    pub mobius: String,
    pub field: String,
    pub domain: Domain,
    pub rows: Vec<CovarianceRow>,
    pub summary: Vec<ExponentSummary>,
    pub minimizing_exponent: f64,
    /// The unweighted `D_M` form, present when `p = n`.
    pub unweighted: Option<CovarianceReport>,
}

fn expand_rows(
    theorem: u8,
    n: usize,
    p: f64,
    exponent: Option<f64>,
    eta: usize,
    pairing: &WeakPairing,
) -> Vec<CovarianceRow> {
    pairing
        .blade_residuals()
        .into_iter()
        .enumerate()
        .map(|(blade, r)| CovarianceRow {
            theorem,
            n,
            p,
            exponent,
            eta,
            blade,
            residual: r.normalized,
            raw: r.value.norm(),
            normalization: r.normalization,
        })
        .collect()
}

fn max_residual(rows: &[CovarianceRow]) -> f64 {
    rows.iter().map(|r| r.residual).fold(0.0, f64::max)
}

/// `M^{-1}(U)` for a ball `U` whose preimage stays bounded and pole-free.
pub fn pulled_back_domain(m: &VahlenMatrix, u: &Domain) -> Result<Domain> {
    let Domain::Ball { center, radius } = u else {
        return Err(Error::Parameter("covariance experiments need a ball domain U".into()));
    };
    if let Some(pole) = m.inverse().pole() {
        // the pole of M^{-1} is M(∞); a preimage through it would be unbounded
        if u.distance_to(&pole) < DOMAIN_MARGIN {
            return Err(Error::Hypothesis(format!(
                "U contains the image of infinity {pole:?}; its preimage is unbounded"
            )));
        }
    }
    let (c, r) = m.preimage_ball(center, *radius)?;
    let xdomain = Domain::ball(c, r);
    xdomain.check_pole_free(m, DOMAIN_MARGIN)?;
    Ok(xdomain)
}

/// The transformed field `x ↦ (cx+d)^{-1} f(M(x))`.
pub fn transformed_field(f: &AnalyticField, m: &VahlenMatrix) -> AnalyticField {
    let (f1, m1) = (f.clone(), m.clone());
    AnalyticField::new(f.dim(), format!("(cx+d)^-1 {}(M(x))", f.label()), move |x| {
        let (y, _, inv) = m1.image_with_inverse(x).expect("pole-free domain");
        &inv * &f1.value(&y.vector_part())
    })
}

/// Weak weighted p-Dirac residuals of `(cx+d)^{-1} f(M(x))` on `M^{-1}(U)`
/// with `A = |cx+d|^{p-n}`, for every test function and basis blade.
///
/// `etas` are scalar bumps inside `M^{-1}(U)`; their blade coefficients are
/// ignored and the report ranges over all basis blades.
pub fn theorem3_experiment(
    f: &AnalyticField,
    p: f64,
    m: &VahlenMatrix,
    u: &Domain,
    etas: &[BumpTestFunction],
    rule: &QuadratureRule,
) -> Result<CovarianceReport> {
    covariance_experiment(3, f, p, m, u, etas, rule)
}

/// The `p = n` case of [`theorem3_experiment`] (unit weight).
pub fn theorem1_experiment(
    f: &AnalyticField,
    m: &VahlenMatrix,
    u: &Domain,
    etas: &[BumpTestFunction],
    rule: &QuadratureRule,
) -> Result<CovarianceReport> {
    covariance_experiment(1, f, f.dim() as f64, m, u, etas, rule)
}

fn covariance_experiment(
    theorem: u8,
    f: &AnalyticField,
    p: f64,
    m: &VahlenMatrix,
    u: &Domain,
    etas: &[BumpTestFunction],
    rule: &QuadratureRule,
) -> Result<CovarianceReport> {
    check_p(p)?;
    let n = f.dim();
    if m.dim() != n || u.dim() != n {
        return Err(Error::DimensionMismatch(m.dim(), n));
    }
    u.check_clear_of(f.singular_points(), DOMAIN_MARGIN)?;
    let xdomain = pulled_back_domain(m, u)?;
    let exponent = p - n as f64;
    let mut rows = Vec::new();
    for (k, eta) in etas.iter().enumerate() {
        check_support(&xdomain, eta)?;
        let (lo, hi) = eta.support_box();
        let pairing = integrate_pairings(n, &lo, &hi, rule, 1, |x| {
            if !eta.in_support(x) {
                return Ok(None);
            }
            let grad = eta.profile_gradient(x);
            if grad.iter().all(|g| *g == 0.0) {
                return Ok(None);
            }
            let (y, g, inv) = m.image_with_inverse(x)?;
            let value = &inv * &f.value(&y.vector_part());
            let weight = if exponent == 0.0 { 1.0 } else { g.norm().powf(exponent) };
            let gx = weak_nonlinearity(&value, p).scale(weight);
            Ok(Some((vec![gx], Multivector::vector(&grad))))
        })?;
        rows.extend(expand_rows(theorem, n, p, Some(exponent), k, &pairing[0]));
    }
    Ok(CovarianceReport {
        theorem,
        n,
        p,
        mobius: m.to_string(),
        field: f.label().to_string(),
        domain: xdomain,
        max_residual: max_residual(&rows),
        rows,
    })
}

/// Default weight exponents: `2(p+2−n)`, `2(p−n)`, `p−n` and `0`, without repeats.
pub fn default_exponent_scan(n: usize, p: f64) -> Vec<f64> {
    let nf = n as f64;
    let mut out: Vec<f64> = Vec::new();
    for s in [2.0 * (p + 2.0 - nf), 2.0 * (p - nf), p - nf, 0.0] {
        if !out.iter().any(|t| (t - s).abs() < 1e-12) {
            out.push(s);
        }
    }
    out
}

/// Partial derivatives of `F∘M` at `x` from the gradient of `F` at `M(x)`
/// and the exact differential of `M`.
fn composed_partials(cols: &[Vec<f64>], grad_y: &[Multivector]) -> Vec<Multivector> {
    cols.iter()
        .map(|col| {
            let mut acc = Multivector::zero(grad_y[0].dim());
            for (k, gk) in grad_y.iter().enumerate() {
                acc += &gk.scale(col[k]);
            }
            acc
        })
        .collect()
}

/// Weighted `D_M` weak p-harmonic residuals of `h∘M` on `M^{-1}(U)`:
/// `∫ conj(A |D(h∘M)|^{p-2} D_M(h∘M)) D_M(η∘M) dx` with `A = |cx+d|^s` for
/// every `s` in the scan, and the unweighted form when `p = n`.
///
/// `etas` are scalar bumps inside `U`, composed with `M`.
pub fn theorem4_experiment(
    h: &AnalyticField,
    p: f64,
    m: &VahlenMatrix,
    u: &Domain,
    etas: &[BumpTestFunction],
    rule: &QuadratureRule,
    scan: &[f64],
) -> Result<ExponentScanReport> {
    check_p(p)?;
    let n = h.dim();
    if m.dim() != n || u.dim() != n {
        return Err(Error::DimensionMismatch(m.dim(), n));
    }
    if scan.is_empty() {
        return Err(Error::Parameter("empty exponent scan".into()));
    }
    u.check_clear_of(h.singular_points(), DOMAIN_MARGIN)?;
    let xdomain = pulled_back_domain(m, u)?;
    let unweighted = (p - n as f64).abs() < 1e-14;
    let mut exponents = scan.to_vec();
    if unweighted {
        exponents.push(0.0);
    }

    let mut rows = Vec::new();
    let mut plain_rows = Vec::new();
    for (k, eta) in etas.iter().enumerate() {
        check_support(u, eta)?;
        let (c, r) = m.preimage_ball(&eta.center, eta.radius)?;
        let pad = 1e-9 * r;
        let lo: Vec<f64> = c.iter().map(|v| v - r - pad).collect();
        let hi: Vec<f64> = c.iter().map(|v| v + r + pad).collect();
        let pairings = integrate_pairings(n, &lo, &hi, rule, exponents.len(), |x| {
            let local = m.local(x)?;
            let y = &local.image;
            if !eta.in_support(y) {
                return Ok(None);
            }
            let grad_phi = eta.profile_gradient(y);
            if grad_phi.iter().all(|g| *g == 0.0) {
                return Ok(None);
            }
            let (cols, frame) = (&local.columns, &local.frame);
            let grad_h = match h.gradient(y) {
                Some(g) => g,
                None => partials_fd_with(n, |z| Ok(h.value(z)), y, DEFAULT_STEP, true)?,
            };
            let dh = composed_partials(cols, &grad_h);
            let frame_vectors: Vec<Multivector> = (1..=n).map(|j| frame.frame_vector(j)).collect();
            let mut dm_eta = Multivector::zero(n);
            let mut dm_h = Multivector::zero(n);
            for (j, fj) in frame_vectors.iter().enumerate() {
                let dphi: f64 = grad_phi.iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                dm_eta += &fj.scale(dphi);
                dm_h += &(fj * &dh[j]);
            }
            let scale = dirac_from_partials(&dh).norm();
            let base = if scale == 0.0 || p == 2.0 {
                dm_h
            } else {
                dm_h.scale(scale.powf(p - 2.0))
            };
            let gs = exponents
                .iter()
                .map(|s| base.scale(frame.scale.powf(*s)))
                .collect();
            Ok(Some((gs, dm_eta)))
        })?;
        for (i, s) in scan.iter().enumerate() {
            rows.extend(expand_rows(4, n, p, Some(*s), k, &pairings[i]));
        }
        if unweighted {
            plain_rows.extend(expand_rows(2, n, p, None, k, &pairings[scan.len()]));
        }
    }

    let summary: Vec<ExponentSummary> = scan
        .iter()
        .map(|s| ExponentSummary {
            exponent: *s,
            max_residual: rows
                .iter()
                .filter(|r| r.exponent == Some(*s))
                .map(|r| r.residual)
                .fold(0.0, f64::max),
        })
        .collect();
    let minimizing_exponent = summary
        .iter()
        .min_by(|a, b| a.max_residual.total_cmp(&b.max_residual))
        .map(|s| s.exponent)
        .expect("nonempty scan");
    let unweighted = unweighted.then(|| CovarianceReport {
        theorem: 2,
        n,
        p,
        mobius: m.to_string(),
        field: h.label().to_string(),
        domain: xdomain.clone(),
        max_residual: max_residual(&plain_rows),
        rows: plain_rows,
    });
    Ok(ExponentScanReport {
        n,
        p,
        mobius: m.to_string(),
        field: h.label().to_string(),
        domain: xdomain,
        rows,
        summary,
        minimizing_exponent,
        unweighted,
    })
}

/// `|Sc(conj(uAũ) uBũ) − Sc(conj(A) B)|` for a unit Lipschitz `u`.
pub fn frame_scalar_discrepancy(u: &Multivector, a: &Multivector, b: &Multivector) -> f64 {
    let ut = u.reversion();
    let ua = &(u * a) * &ut;
    let ub = &(u * b) * &ut;
    ((&ua.conjugation() * &ub).scalar_part() - (&a.conjugation() * b).scalar_part()).abs()
}

/// Pointwise comparison of
/// `Sc(|D(f∘M)|^{p-2} conj(D_M(f∘M)) D_M(η∘M))` with the same expression
/// built from the euclidean `D`. The two agree for scalar-valued `f` and
/// scalar bump coefficients.
pub fn sc_invariance_check(
    f: &AnalyticField,
    p: f64,
    m: &VahlenMatrix,
    eta: &BumpTestFunction,
    x: &[f64],
) -> Result<f64> {
    check_p(p)?;
    let n = f.dim();
    let pf = partials_fd_with(n, |z| Ok(f.value(&m.apply(z)?)), x, DEFAULT_STEP, true)?;
    let pe = partials_fd_with(n, |z| Ok(eta.value(&m.apply(z)?)), x, DEFAULT_STEP, true)?;
    let frame = m.frame_at(x)?;
    let (dxf, dxe) = (dirac_from_partials(&pf), dirac_from_partials(&pe));
    let (dmf, dme) = (frame.twisted_dirac(&pf), frame.twisted_dirac(&pe));
    let r = dxf.norm();
    let w = if r == 0.0 { 0.0 } else { r.powf(p - 2.0) };
    let lhs = w * (&dmf.conjugation() * &dme).scalar_part();
    let rhs = w * (&dxf.conjugation() * &dxe).scalar_part();
    Ok((lhs - rhs).abs())
}

/// `| |D_M(f∘M)| − |D(f∘M)| |` at `x`; zero for scalar-valued `f`.
pub fn norm_frame_identity_check(m: &VahlenMatrix, f: &AnalyticField, x: &[f64]) -> Result<f64> {
    let pf = partials_fd_with(f.dim(), |z| Ok(f.value(&m.apply(z)?)), x, DEFAULT_STEP, true)?;
    let frame = m.frame_at(x)?;
    Ok((frame.twisted_dirac(&pf).norm() - dirac_from_partials(&pf).norm()).abs())
}
