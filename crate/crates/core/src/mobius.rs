//! Möbius transformations of `R^n ∪ {∞}` in Vahlen-matrix form
//! `x ↦ (ax + b)(cx + d)^{-1}`, together with the Jacobian factors and the
//! twisted frame used by the conformal covariance experiments.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::clifford::{Multivector, VectorFactorList};
use crate::error::{Error, Result};

/// `|cx + d|` below this value is treated as a pole.
pub const POLE_TOL: f64 = 1e-12;

/// Residual threshold for the Vahlen conditions.
pub const VAHLEN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    Identity,
    Translation(Vec<f64>),
    /// Uniform scaling `x ↦ λx`, λ > 0.
    Dilation(f64),
    /// Orthogonal map `x ↦ a x ã` for a unit Pin(n) element.
    Rotation(VectorFactorList),
    /// `x ↦ x / |x|^2`.
    Inversion,
}

/// How condition (i) (entries are products of vectors or zero) is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Provenance {
    /// Built from generators; condition (i) holds by construction.
    Generated,
    /// Raw coefficients; condition (i) was not verified.
    Unverified,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VahlenMatrix {
    a: Multivector,
    b: Multivector,
    c: Multivector,
    d: Multivector,
    provenance: Provenance,
}

/// Per-condition residuals of a Vahlen matrix.
#[derive(Debug, Clone, Serialize)]
pub struct VahlenReport {
    /// Off-grade-1 mass of ãc, c̃d, d̃b, b̃a.
    pub vector_conditions: [f64; 4],
    /// |ãd − b̃c − 1|.
    pub pseudo_determinant: f64,
    pub provenance: Provenance,
}

impl VahlenReport {
    pub fn passes(&self) -> bool {
        self.vector_conditions.iter().all(|r| *r <= VAHLEN_TOL)
            && self.pseudo_determinant <= VAHLEN_TOL
    }
}

/// Unit Lipschitz element `(cx+d)/|cx+d|` and the scale `|cx+d|` at a point.
#[derive(Debug, Clone)]
pub struct FramePoint {
    pub u: Multivector,
    pub scale: f64,
}

impl FramePoint {
    /// The frame map `A ↦ u A ũ`.
    pub fn map(&self, a: &Multivector) -> Multivector {
        &(&self.u * a) * &self.u.reversion()
    }

    /// Image of the basis vector `e_j` (1-based) under the frame map.
    pub fn frame_vector(&self, j: usize) -> Multivector {
        self.map(&Multivector::e(self.u.dim(), j))
    }

    /// Twisted Dirac operator `Σ_j u e_j ũ ∂_j` applied to given partials.
    pub fn twisted_dirac(&self, partials: &[Multivector]) -> Multivector {
        let ut = self.u.reversion();
        let mut acc = Multivector::zero(self.u.dim());
        for (j, dj) in partials.iter().enumerate() {
            let ej = Multivector::e(self.u.dim(), j + 1);
            acc += &(&(&self.u * &ej) * &(&ut * dj));
        }
        acc
    }
}

/// First-order data of a Möbius map at one point.
#[derive(Debug, Clone)]
pub struct LocalMap {
    pub image: Vec<f64>,
    pub denominator: Multivector,
    pub denominator_inverse: Multivector,
    /// `∂M/∂x_j` for each `j`.
    pub columns: Vec<Vec<f64>>,
    pub frame: FramePoint,
}

impl VahlenMatrix {
    pub fn identity(dim: usize) -> Self {
        Self {
            a: Multivector::one(dim),
            b: Multivector::zero(dim),
            c: Multivector::zero(dim),
            d: Multivector::one(dim),
            provenance: Provenance::Generated,
        }
    }

    pub fn from_generator(dim: usize, generator: &Generator) -> Result<Self> {
        let one = Multivector::one(dim);
        let zero = Multivector::zero(dim);
        let (a, b, c, d) = match generator {
            Generator::Identity => return Ok(Self::identity(dim)),
            Generator::Translation(t) => {
                if t.len() != dim {
                    return Err(Error::DimensionMismatch(dim, t.len()));
                }
                if t.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Contract("translation must be finite".into()));
                }
                (one.clone(), Multivector::vector(t), zero, one)
            }
            Generator::Dilation(lambda) => {
                if !(*lambda > 0.0) || !lambda.is_finite() {
                    return Err(Error::Contract(format!(
                        "dilation factor must be positive, got {lambda}"
                    )));
                }
                let s = lambda.sqrt();
                (Multivector::scalar(dim, s), zero.clone(), zero, Multivector::scalar(dim, 1.0 / s))
            }
            Generator::Rotation(pin) => {
                if pin.dim() != dim {
                    return Err(Error::DimensionMismatch(dim, pin.dim()));
                }
                if !pin.is_unit(1e-12) {
                    return Err(Error::Contract("rotation needs unit Pin factors".into()));
                }
                let a = pin.product();
                // ã^{-1} = (-1)^J a for unit factors.
                let sign = if pin.is_even() { 1.0 } else { -1.0 };
                let d = a.scale(sign);
                (a, zero.clone(), zero, d)
            }
            Generator::Inversion => (zero.clone(), -&one, one, zero),
        };
        Ok(Self {
            a,
            b,
            c,
            d,
            provenance: Provenance::Generated,
        })
    }

    /// Builds a matrix from raw entries; condition (i) is flagged unverified.
    pub fn from_entries(
        a: Multivector,
        b: Multivector,
        c: Multivector,
        d: Multivector,
    ) -> Result<Self> {
        let dim = a.dim();
        for m in [&b, &c, &d] {
            if m.dim() != dim {
                return Err(Error::DimensionMismatch(dim, m.dim()));
            }
        }
        Ok(Self {
            a,
            b,
            c,
            d,
            provenance: Provenance::Unverified,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn entries(&self) -> (&Multivector, &Multivector, &Multivector, &Multivector) {
        (&self.a, &self.b, &self.c, &self.d)
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Matrix product; as maps, `self.compose(other)` is `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        let provenance = if self.provenance == Provenance::Generated
            && other.provenance == Provenance::Generated
        {
            Provenance::Generated
        } else {
            Provenance::Unverified
        };
        Self {
            a: &(&self.a * &other.a) + &(&self.b * &other.c),
            b: &(&self.a * &other.b) + &(&self.b * &other.d),
            c: &(&self.c * &other.a) + &(&self.d * &other.c),
            d: &(&self.c * &other.b) + &(&self.d * &other.d),
            provenance,
        }
    }

    /// Inverse map, `(d̃, −b̃, −c̃, ã)`, valid when the pseudo-determinant is 1.
    pub fn inverse(&self) -> Self {
        Self {
            a: self.d.reversion(),
            b: -&self.b.reversion(),
            c: -&self.c.reversion(),
            d: self.a.reversion(),
            provenance: self.provenance,
        }
    }

    pub fn validate(&self) -> VahlenReport {
        let (a, b, c, d) = (&self.a, &self.b, &self.c, &self.d);
        let vector_conditions = [
            (&a.reversion() * c).off_grade_mass(1),
            (&c.reversion() * d).off_grade_mass(1),
            (&d.reversion() * b).off_grade_mass(1),
            (&b.reversion() * a).off_grade_mass(1),
        ];
        let det = &(&a.reversion() * d) - &(&b.reversion() * c);
        let pseudo_determinant = (&det - &Multivector::one(self.dim())).norm();
        VahlenReport {
            vector_conditions,
            pseudo_determinant,
            provenance: self.provenance,
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(self.dim(), x.len()));
        }
        Ok(())
    }

    /// `cx + d` at a point.
    pub fn denominator(&self, x: &[f64]) -> Result<Multivector> {
        self.check_point(x)?;
        Ok(&(&self.c * &Multivector::vector(x)) + &self.d)
    }

    fn nonsingular_denominator(&self, x: &[f64]) -> Result<Multivector> {
        let g = self.denominator(x)?;
        let modulus = g.norm();
        if !(modulus > POLE_TOL) {
            return Err(Error::Pole {
                point: x.to_vec(),
                modulus,
            });
        }
        Ok(g)
    }

    /// Finite pole `x = -c^{-1} d`, when `c` is invertible.
    pub fn pole(&self) -> Option<Vec<f64>> {
        if self.c.norm() == 0.0 {
            return None;
        }
        let cinv = self.c.lipschitz_inverse().ok()?;
        let x = -&(&cinv * &self.d);
        if x.is_grade(1, VAHLEN_TOL * (1.0 + x.norm())) {
            Some(x.vector_part())
        } else {
            None
        }
    }

    /// `(cx+d)^{-1}` at a non-pole point.
    pub fn denominator_inverse(&self, x: &[f64]) -> Result<Multivector> {
        let g = self.nonsingular_denominator(x)?;
        g.lipschitz_inverse().map_err(|_| Error::Pole {
            point: x.to_vec(),
            modulus: g.norm(),
        })
    }

    /// `M(x) = (ax+b)(cx+d)^{-1}` as a grade-1 multivector.
    pub fn apply_mv(&self, x: &[f64]) -> Result<Multivector> {
        Ok(self.image_with_inverse(x)?.0)
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.apply_mv(x)?.vector_part())
    }

    /// `(J_1, J_{-1}) = (rev(cx+d)/|cx+d|^n, rev(cx+d)/|cx+d|^{n+2})`.
    pub fn jacobian_factors(&self, x: &[f64]) -> Result<(Multivector, Multivector)> {
        let g = self.nonsingular_denominator(x)?;
        let n = self.dim() as i32;
        let r = g.norm();
        let gt = g.reversion();
        Ok((gt.scale(r.powi(-n)), gt.scale(r.powi(-n - 2))))
    }

    pub fn frame_at(&self, x: &[f64]) -> Result<FramePoint> {
        let g = self.nonsingular_denominator(x)?;
        let scale = g.norm();
        Ok(FramePoint {
            u: g.scale(1.0 / scale),
            scale,
        })
    }

    /// `|det M'(x)| = |cx+d|^{-2n}`.
    pub fn jacobian_determinant(&self, x: &[f64]) -> Result<f64> {
        let g = self.nonsingular_denominator(x)?;
        Ok(g.norm().powi(-2 * self.dim() as i32))
    }

    /// Exact partial derivatives `∂M/∂x_j = (a − M(x) c) e_j (cx+d)^{-1}`.
    pub fn differential(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let inv = self.denominator_inverse(x)?;
        let y = self.apply_mv(x)?;
        let lead = &self.a - &(&y * &self.c);
        Ok((1..=self.dim())
            .map(|j| (&(&lead * &Multivector::e(self.dim(), j)) * &inv).vector_part())
            .collect())
    }

    /// `(M(x), cx+d, (cx+d)^{-1})` from a single evaluation of the denominator.
    pub fn image_with_inverse(&self, x: &[f64]) -> Result<(Multivector, Multivector, Multivector)> {
        let g = self.nonsingular_denominator(x)?;
        let inv = g.lipschitz_inverse().map_err(|_| Error::Pole {
            point: x.to_vec(),
            modulus: g.norm(),
        })?;
        let num = &(&self.a * &Multivector::vector(x)) + &self.b;
        let y = &num * &inv;
        let off = y.off_grade_mass(1);
        if off > VAHLEN_TOL * (1.0 + y.norm()) {
            return Err(Error::Contract(format!(
                "Möbius image is not a vector (off-grade mass {off:e}); check the Vahlen conditions"
            )));
        }
        Ok((y.grade_part(1), g, inv))
    }

    /// `M(x)`, `cx+d`, its inverse, the differential and the frame, computed
    /// together.
    pub fn local(&self, x: &[f64]) -> Result<LocalMap> {
        let (y, g, inv) = self.image_with_inverse(x)?;
        let lead = &self.a - &(&y * &self.c);
        let columns = (1..=self.dim())
            .map(|j| (&(&lead * &Multivector::e(self.dim(), j)) * &inv).vector_part())
            .collect();
        let scale = g.norm();
        Ok(LocalMap {
            image: y.vector_part(),
            frame: FramePoint {
                u: g.scale(1.0 / scale),
                scale,
            },
            denominator: g,
            denominator_inverse: inv,
            columns,
        })
    }

    /// Preimage `M^{-1}(B(center, radius))` of a ball, when it is again a
    /// bounded ball (the pole of `M` lies outside the preimage's closure).
    pub fn preimage_ball(&self, center: &[f64], radius: f64) -> Result<(Vec<f64>, f64)> {
        self.check_point(center)?;
        let n = self.dim();
        let inv = self.inverse();
        let mut rows = Vec::with_capacity(2 * n);
        for j in 0..n {
            for s in [-1.0, 1.0] {
                let mut q = center.to_vec();
                q[j] += s * radius;
                rows.push(inv.apply(&q).map_err(|_| {
                    Error::Hypothesis("ball boundary meets the pole of M^{-1}".into())
                })?);
            }
        }
        // |p|^2 = 2 p·m − k with k = |m|^2 − R^2
        let a = DMatrix::from_fn(rows.len(), n + 1, |i, j| if j < n { 2.0 * rows[i][j] } else { -1.0 });
        let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|p| p.iter().map(|v| v * v).sum()));
        let sol = a
            .svd(true, true)
            .solve(&rhs, 1e-14)
            .map_err(|e| Error::Estimation(e.to_string()))?;
        let m: Vec<f64> = sol.iter().take(n).copied().collect();
        let r2 = m.iter().map(|v| v * v).sum::<f64>() - sol[n];
        if !(r2 > 0.0) {
            return Err(Error::Hypothesis("preimage of the ball is not a ball".into()));
        }
        let r = r2.sqrt();
        let c0 = inv.apply(center).map_err(|_| {
            Error::Hypothesis("ball contains the pole of M^{-1}; preimage is unbounded".into())
        })?;
        if dist(&c0, &m) >= r {
            return Err(Error::Hypothesis(
                "preimage of the ball is the exterior of a sphere".into(),
            ));
        }
        Ok((m, r))
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl fmt::Display for VahlenMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{}, {}], [{}, {}]]", self.a, self.b, self.c, self.d)
    }
}

/// Central-difference Jacobian matrix of `M` (row i, column j = ∂M_i/∂x_j)
/// with one Richardson step.
pub fn fd_jacobian(m: &VahlenMatrix, x: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let n = m.dim();
    let central = |step: f64| -> Result<DMatrix<f64>> {
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += step;
            xm[j] -= step;
            let yp = m.apply(&xp)?;
            let ym = m.apply(&xm)?;
            for i in 0..n {
                jac[(i, j)] = (yp[i] - ym[i]) / (2.0 * step);
            }
        }
        Ok(jac)
    };
    let coarse = central(h)?;
    let fine = central(h / 2.0)?;
    Ok((fine * 4.0 - coarse) / 3.0)
}

/// Parses a generator expression. Grammar (whitespace ignored):
///
/// ```text
/// expr      := term ('*' term)*          composition, left factor applied last
/// term      := 'identity' | 'inversion'
///            | 'translate:' list | 'dilate:' number
///            | 'rotate:' list (';' list)*    factors normalized to unit length
/// list      := number (',' number)*
/// ```
pub fn parse_mobius(expr: &str, dim: usize) -> Result<VahlenMatrix> {
    let expr: String = expr.chars().filter(|c| !c.is_whitespace()).collect();
    if expr.is_empty() {
        return Err(Error::Parameter("empty Möbius expression".into()));
    }
    let mut acc = VahlenMatrix::identity(dim);
    for term in expr.split('*') {
        let g = parse_generator(term, dim)?;
        acc = acc.compose(&VahlenMatrix::from_generator(dim, &g)?);
    }
    Ok(acc)
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| Error::Parameter(format!("not a number: '{v}'")))
        })
        .collect()
}

fn parse_generator(term: &str, dim: usize) -> Result<Generator> {
    let (head, arg) = match term.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (term, None),
    };
    match (head, arg) {
        ("identity", None) => Ok(Generator::Identity),
        ("inversion", None) => Ok(Generator::Inversion),
        ("translate", Some(a)) => {
            let t = parse_list(a)?;
            if t.len() != dim {
                return Err(Error::Parameter(format!(
                    "translation has {} components, expected {dim}",
                    t.len()
                )));
            }
            Ok(Generator::Translation(t))
        }
        ("dilate", Some(a)) => {
            let v = parse_list(a)?;
            match v.as_slice() {
                [l] if *l > 0.0 => Ok(Generator::Dilation(*l)),
                _ => Err(Error::Parameter(format!("bad dilation factor '{a}'"))),
            }
        }
        ("rotate", Some(a)) => {
            let vecs = a.split(';').map(parse_list).collect::<Result<Vec<_>>>()?;
            if vecs.iter().any(|v| v.len() != dim) {
                return Err(Error::Parameter(format!(
                    "rotation factors need {dim} components"
                )));
            }
            let pin = VectorFactorList::from_vectors(&vecs)
                .map_err(|e| Error::Parameter(e.to_string()))?
                .normalized();
            Ok(Generator::Rotation(pin))
        }
        _ => Err(Error::Parameter(format!("unknown Möbius generator '{term}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn generators_are_valid_and_act_as_expected() {
        let x = [0.4, -1.1, 2.0];
        let t = VahlenMatrix::from_generator(3, &Generator::Translation(vec![1.0, 2.0, -3.0])).unwrap();
        assert!(t.validate().passes());
        assert!(close(&t.apply(&x).unwrap(), &[1.4, 0.9, -1.0], 1e-15));

        let inv = VahlenMatrix::from_generator(3, &Generator::Inversion).unwrap();
        assert!(inv.validate().passes());
        assert!(close(&inv.apply(&[2.0, 0.0, 0.0]).unwrap(), &[0.5, 0.0, 0.0], 1e-15));
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let expect: Vec<f64> = x.iter().map(|v| v / r2).collect();
        assert!(close(&inv.apply(&x).unwrap(), &expect, 1e-15));

        let dil = VahlenMatrix::from_generator(3, &Generator::Dilation(2.5)).unwrap();
        assert!(dil.validate().passes());
        assert!(close(&dil.apply(&x).unwrap(), &[1.0, -2.75, 5.0], 1e-14));

        let id = VahlenMatrix::identity(3);
        let rep = id.validate();
        assert_eq!(rep.pseudo_determinant, 0.0);
        assert_eq!(rep.vector_conditions, [0.0; 4]);
        assert!(close(&id.apply(&x).unwrap(), &x, 0.0));
    }

    #[test]
    fn rotation_generator_reflects() {
        let pin = VectorFactorList::from_vectors(&[vec![1.0, 0.0, 0.0]]).unwrap();
        let r = VahlenMatrix::from_generator(3, &Generator::Rotation(pin)).unwrap();
        assert!(r.validate().passes());
        assert!(close(&r.apply(&[0.3, 0.5, -0.7]).unwrap(), &[-0.3, 0.5, -0.7], 1e-15));
    }

    #[test]
    fn bad_pseudo_determinant_is_reported() {
        let m = VahlenMatrix::from_entries(
            Multivector::one(3),
            Multivector::zero(3),
            Multivector::zero(3),
            Multivector::scalar(3, 2.0),
        )
        .unwrap();
        let rep = m.validate();
        assert!((rep.pseudo_determinant - 1.0).abs() < 1e-15);
        assert!(!rep.passes());
        assert_eq!(rep.provenance, Provenance::Unverified);
    }

    #[test]
    fn invalid_generator_parameters() {
        assert!(VahlenMatrix::from_generator(3, &Generator::Dilation(-1.0)).is_err());
        assert!(VahlenMatrix::from_generator(3, &Generator::Translation(vec![1.0])).is_err());
        let nonunit = VectorFactorList::from_vectors(&[vec![2.0, 0.0, 0.0]]).unwrap();
        assert!(VahlenMatrix::from_generator(3, &Generator::Rotation(nonunit)).is_err());
    }

    #[test]
    fn pole_is_an_error() {
        let inv = VahlenMatrix::from_generator(3, &Generator::Inversion).unwrap();
        assert!(matches!(inv.apply(&[0.0; 3]), Err(Error::Pole { .. })));
        assert!(matches!(inv.jacobian_factors(&[0.0; 3]), Err(Error::Pole { .. })));
    }

    #[test]
    fn jacobian_factor_examples() {
        let (j1, jm1) = VahlenMatrix::identity(3).jacobian_factors(&[0.2, 0.3, 0.4]).unwrap();
        assert_eq!(j1, Multivector::one(3));
        assert_eq!(jm1, Multivector::one(3));

        let inv = VahlenMatrix::from_generator(3, &Generator::Inversion).unwrap();
        let x = [0.5, -1.0, 0.25];
        let (j1, jm1) = inv.jacobian_factors(&x).unwrap();
        let r = Multivector::vector(&x).norm();
        assert!((&j1 - &Multivector::vector(&x).scale(r.powi(-3))).norm() < 1e-15);
        assert!((&j1 - &jm1.scale(r * r)).norm() < 1e-15);

        let dil = VahlenMatrix::from_generator(3, &Generator::Dilation(4.0)).unwrap();
        let (a, _) = dil.jacobian_factors(&[1.0, 0.0, 0.0]).unwrap();
        let (b, _) = dil.jacobian_factors(&[-2.0, 5.0, 0.1]).unwrap();
        // rev(1/2) / (1/2)^3 = 4
        assert!((&a - &Multivector::scalar(3, 4.0)).norm() < 1e-14);
        assert_eq!(a, b);
    }

    #[test]
    fn frame_examples() {
        let d = VahlenMatrix::from_generator(3, &Generator::Dilation(9.0)).unwrap();
        let f = d.frame_at(&[0.1, 0.2, 0.3]).unwrap();
        assert!((&f.u - &Multivector::one(3)).norm() < 1e-15);

        let inv = VahlenMatrix::from_generator(3, &Generator::Inversion).unwrap();
        let f = inv.frame_at(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(f.u, Multivector::e(3, 1));
        let f = inv.frame_at(&[0.3, -0.4, 1.2]).unwrap();
        for j in 1..=3 {
            let v = f.frame_vector(j);
            assert!(v.is_grade(1, 1e-14));
            assert!((v.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn determinant_examples() {
        assert_eq!(VahlenMatrix::identity(3).jacobian_determinant(&[1.0, 2.0, 3.0]).unwrap(), 1.0);
        let dil = VahlenMatrix::from_generator(3, &Generator::Dilation(2.0)).unwrap();
        assert!((dil.jacobian_determinant(&[1.0, 2.0, 3.0]).unwrap() - 8.0).abs() < 1e-12);
        let inv = VahlenMatrix::from_generator(3, &Generator::Inversion).unwrap();
        let det = inv.jacobian_determinant(&[2.0, 0.0, 0.0]).unwrap();
        assert!((det - 2f64.powi(-6)).abs() < 1e-15);
        let fd = fd_jacobian(&inv, &[2.0, 0.0, 0.0], 1e-3).unwrap().determinant();
        assert!((fd.abs() - det).abs() / det < 1e-6);
    }

    #[test]
    fn differential_matches_finite_differences() {
        let m = parse_mobius("inversion*translate:0.5,-1,0.25*rotate:1,1,0", 3).unwrap();
        let x = [0.7, 0.2, -0.4];
        let exact = m.differential(&x).unwrap();
        let fd = fd_jacobian(&m, &x, 1e-3).unwrap();
        for j in 0..3 {
            for i in 0..3 {
                assert!((exact[j][i] - fd[(i, j)]).abs() < 1e-9, "{i} {j}");
            }
        }
    }

    #[test]
    fn inverse_and_preimage_ball() {
        let m = parse_mobius("inversion*translate:0.5,-1,0.25", 3).unwrap();
        let x = [0.3, 0.9, -0.2];
        let back = m.inverse().apply(&m.apply(&x).unwrap()).unwrap();
        assert!(close(&back, &x, 1e-13));

        let inv = VahlenMatrix::from_generator(3, &Generator::Inversion).unwrap();
        let (c, r) = inv.preimage_ball(&[3.0, 0.0, 0.0], 1.0).unwrap();
        assert!(close(&c, &[0.375, 0.0, 0.0], 1e-12));
        assert!((r - 0.125).abs() < 1e-12);
        assert!(inv.preimage_ball(&[0.5, 0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn parser_grammar() {
        assert_eq!(parse_mobius("identity", 2).unwrap(), VahlenMatrix::identity(2));
        assert!(parse_mobius("translate:1,0", 3).is_err());
        assert!(parse_mobius("shear:1", 3).is_err());
        assert!(parse_mobius("dilate:0", 3).is_err());
        let m = parse_mobius(" inversion * dilate:2 ", 2).unwrap();
        let y = m.apply(&[1.0, 0.0]).unwrap();
        assert!(close(&y, &[0.5, 0.0], 1e-15));
        assert!(m.validate().passes());
    }
}
