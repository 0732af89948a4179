//! Dense multivectors over the real Clifford algebra `Cl_n` with the
//! negative-definite signature `e_j^2 = -1`.
//!
//! Coefficients are stored over the `2^n` blade basis. The coefficient at
//! index `b` belongs to the blade `e_{j1} e_{j2} ... e_{jr}` with ascending
//! indices, where bit `j - 1` of `b` is set exactly when `e_j` is a factor.
//! Index 0 is the scalar `1`.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::sync::OnceLock;

use serde::{Serialize, Serializer};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Largest supported dimension; the dense array holds at most 1024 entries.
pub const MAX_DIM: usize = 10;

/// Grade (number of vector factors) of the blade with the given bitmask.
#[inline]
pub fn grade(mask: usize) -> u32 {
    mask.count_ones()
}

/// Product of two basis blades: returns the resulting blade mask and sign.
///
/// The sign counts the transpositions needed to sort the concatenated index
/// list, and one extra factor of -1 for every repeated index (`e_j e_j = -1`).
#[inline]
pub fn blade_product(a: usize, b: usize) -> (usize, f64) {
    let mut swaps = 0u32;
    let mut s = a >> 1;
    while s != 0 {
        swaps += (s & b).count_ones();
        s >>= 1;
    }
    swaps += (a & b).count_ones();
    (a ^ b, if swaps.is_multiple_of(2) { 1.0 } else { -1.0 })
}

/// Largest dimension with a cached blade-product sign table.
const TABLE_DIM: usize = 8;

/// Row-major table of `blade_product(a, b).1` for dimensions up to
/// [`TABLE_DIM`], built on first use.
fn sign_table(dim: usize) -> Option<&'static [f64]> {
    static TABLES: [OnceLock<Vec<f64>>; TABLE_DIM + 1] = [const { OnceLock::new() }; TABLE_DIM + 1];
    if dim > TABLE_DIM {
        return None;
    }
    Some(TABLES[dim].get_or_init(|| {
        let size = 1usize << dim;
        (0..size * size)
            .map(|k| blade_product(k / size, k % size).1)
            .collect()
    }))
}

/// Sign picked up by a grade-r blade under reversion: (-1)^{r(r-1)/2}.
#[inline]
pub fn reversion_sign(r: u32) -> f64 {
    if (r * r.saturating_sub(1) / 2).is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Sign picked up by a grade-r blade under conjugation: (-1)^r (-1)^{r(r-1)/2}.
#[inline]
pub fn conjugation_sign(r: u32) -> f64 {
    let parity = if r.is_multiple_of(2) { 1.0 } else { -1.0 };
    parity * reversion_sign(r)
}

/// Coefficient storage; inline up to `n = 4`.
type Coeffs = SmallVec<[f64; 16]>;

#[derive(Clone, PartialEq)]
pub struct Multivector {
    dim: usize,
    coeffs: Coeffs,
}

impl Multivector {
    pub fn zero(dim: usize) -> Self {
        assert!(
            (1..=MAX_DIM).contains(&dim),
            "Clifford dimension {dim} outside 1..={MAX_DIM}"
        );
        Self {
            dim,
            coeffs: Coeffs::from_elem(0.0, 1 << dim),
        }
    }

    pub fn scalar(dim: usize, s: f64) -> Self {
        let mut m = Self::zero(dim);
        m.coeffs[0] = s;
        m
    }

    pub fn one(dim: usize) -> Self {
        Self::scalar(dim, 1.0)
    }

    /// Basis blade with the given bitmask and unit coefficient.
    pub fn blade(dim: usize, mask: usize) -> Self {
        let mut m = Self::zero(dim);
        m.coeffs[mask] = 1.0;
        m
    }

    /// Basis vector `e_j`, 1-based like the algebra's notation.
    pub fn e(dim: usize, j: usize) -> Self {
        assert!(j >= 1 && j <= dim, "basis index e_{j} out of range for Cl_{dim}");
        Self::blade(dim, 1 << (j - 1))
    }

    /// Grade-1 element `x_1 e_1 + ... + x_n e_n`.
    pub fn vector(x: &[f64]) -> Self {
        let mut m = Self::zero(x.len());
        for (j, &xj) in x.iter().enumerate() {
            m.coeffs[1 << j] = xj;
        }
        m
    }

    pub fn from_coeffs(dim: usize, coeffs: Vec<f64>) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::Parameter(format!(
                "Clifford dimension {dim} outside 1..={MAX_DIM}"
            )));
        }
        if coeffs.len() != 1 << dim {
            return Err(Error::Contract(format!(
                "Cl_{dim} needs {} coefficients, got {}",
                1usize << dim,
                coeffs.len()
            )));
        }
        Ok(Self {
            dim,
            coeffs: Coeffs::from_vec(coeffs),
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    #[inline]
    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs.into_vec()
    }

    #[inline]
    pub fn get(&self, mask: usize) -> f64 {
        self.coeffs[mask]
    }

    #[inline]
    pub fn set(&mut self, mask: usize, value: f64) {
        self.coeffs[mask] = value;
    }

    /// Coefficients `x_j` of the grade-1 part.
    pub fn vector_part(&self) -> Vec<f64> {
        (0..self.dim).map(|j| self.coeffs[1 << j]).collect()
    }

    pub fn grade_part(&self, r: u32) -> Self {
        let mut out = Self::zero(self.dim);
        for (mask, &c) in self.coeffs.iter().enumerate() {
            if grade(mask) == r {
                out.coeffs[mask] = c;
            }
        }
        out
    }

    /// Euclidean norm of all coefficients outside grade `r`.
    pub fn off_grade_mass(&self, r: u32) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(mask, _)| grade(*mask) != r)
            .map(|(_, c)| c * c)
            .sum::<f64>()
            .sqrt()
    }

    /// True when every coefficient outside grade `r` is at most `tol` in norm.
    pub fn is_grade(&self, r: u32, tol: f64) -> bool {
        self.off_grade_mass(r) <= tol
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            Err(Error::DimensionMismatch(self.dim, other.dim))
        } else {
            Ok(())
        }
    }

    /// Geometric (Clifford) product.
    pub fn geometric_product(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        let mut out = Self::zero(self.dim);
        self.product_into(other, &mut out.coeffs);
        Ok(out)
    }

    fn product_into(&self, other: &Self, out: &mut [f64]) {
        let size = self.coeffs.len();
        let table = sign_table(self.dim);
        for (a, &ca) in self.coeffs.iter().enumerate() {
            if ca == 0.0 {
                continue;
            }
            match table {
                Some(t) => {
                    let row = &t[a * size..(a + 1) * size];
                    for (b, &cb) in other.coeffs.iter().enumerate() {
                        if cb != 0.0 {
                            out[a ^ b] += row[b] * ca * cb;
                        }
                    }
                }
                None => {
                    for (b, &cb) in other.coeffs.iter().enumerate() {
                        if cb != 0.0 {
                            let (m, s) = blade_product(a, b);
                            out[m] += s * ca * cb;
                        }
                    }
                }
            }
        }
    }

    /// `Ã`: reverses the factor order of every blade.
    pub fn reversion(&self) -> Self {
        self.map_by_grade(reversion_sign)
    }

    /// `Ā`: reversion combined with `e_j -> -e_j`.
    pub fn conjugation(&self) -> Self {
        self.map_by_grade(conjugation_sign)
    }

    /// Grade involution `e_j -> -e_j`.
    pub fn involution(&self) -> Self {
        self.map_by_grade(|r| if r % 2 == 0 { 1.0 } else { -1.0 })
    }

    fn map_by_grade(&self, sign: impl Fn(u32) -> f64) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(mask, &c)| sign(grade(mask)) * c)
            .collect();
        Self {
            dim: self.dim,
            coeffs,
        }
    }

    #[inline]
    pub fn scalar_part(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Coefficient-wise dot product on `R^{2^n}`.
    pub fn dot(&self, other: &Self) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Clifford-valued inner product `Ā B`.
    pub fn clifford_inner(&self, other: &Self) -> Result<Self> {
        self.conjugation().geometric_product(other)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    /// Inverse of an element of the Lipschitz group (or a scalar multiple of
    /// one), computed as `Ā / Sc(A Ā)` and verified by multiplying back.
    pub fn lipschitz_inverse(&self) -> Result<Self> {
        let conj = self.conjugation();
        let n2 = (self * &conj).scalar_part();
        if !(n2.abs() > f64::MIN_POSITIVE) || !n2.is_finite() {
            return Err(Error::Singular(format!(
                "element has vanishing norm ({n2:e})"
            )));
        }
        let inv = conj.scale(1.0 / n2);
        let check = &(self * &inv) - &Self::one(self.dim);
        let tol = 1e-10 * (1.0 + self.norm() * inv.norm());
        if check.norm() > tol {
            return Err(Error::Singular(format!(
                "element is not invertible as a Lipschitz element (residual {:e})",
                check.norm()
            )));
        }
        Ok(inv)
    }
}

impl fmt::Debug for Multivector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Multivector(Cl_{}; {})", self.dim, self)
    }
}

impl fmt::Display for Multivector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (mask, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            if mask == 0 {
                write!(f, "{c}")?;
            } else {
                write!(f, "{c}")?;
                for j in 0..self.dim {
                    if mask & (1 << j) != 0 {
                        write!(f, "e{}", j + 1)?;
                    }
                }
            }
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

impl Serialize for Multivector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.coeffs.as_slice().serialize(serializer)
    }
}

impl<'a> Mul<&'a Multivector> for &'a Multivector {
    type Output = Multivector;

    /// Geometric product. Panics on a dimension mismatch; use
    /// [`Multivector::geometric_product`] for the fallible form.
    fn mul(self, rhs: &'a Multivector) -> Multivector {
        assert_eq!(self.dim, rhs.dim, "geometric product of Cl_{} and Cl_{}", self.dim, rhs.dim);
        let mut out = Multivector::zero(self.dim);
        self.product_into(rhs, &mut out.coeffs);
        out
    }
}

impl Mul for Multivector {
    type Output = Multivector;
    fn mul(self, rhs: Multivector) -> Multivector {
        &self * &rhs
    }
}

impl Mul<f64> for &Multivector {
    type Output = Multivector;
    fn mul(self, rhs: f64) -> Multivector {
        self.scale(rhs)
    }
}

impl Mul<f64> for Multivector {
    type Output = Multivector;
    fn mul(mut self, rhs: f64) -> Multivector {
        self.coeffs.iter_mut().for_each(|c| *c *= rhs);
        self
    }
}

impl<'a> Add<&'a Multivector> for &'a Multivector {
    type Output = Multivector;
    fn add(self, rhs: &'a Multivector) -> Multivector {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Add for Multivector {
    type Output = Multivector;
    fn add(mut self, rhs: Multivector) -> Multivector {
        self += &rhs;
        self
    }
}

impl<'a> Sub<&'a Multivector> for &'a Multivector {
    type Output = Multivector;
    fn sub(self, rhs: &'a Multivector) -> Multivector {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl Sub for Multivector {
    type Output = Multivector;
    fn sub(mut self, rhs: Multivector) -> Multivector {
        self -= &rhs;
        self
    }
}

impl AddAssign<&Multivector> for Multivector {
    fn add_assign(&mut self, rhs: &Multivector) {
        assert_eq!(self.dim, rhs.dim);
        self.coeffs
            .iter_mut()
            .zip(&rhs.coeffs)
            .for_each(|(a, b)| *a += b);
    }
}

impl SubAssign<&Multivector> for Multivector {
    fn sub_assign(&mut self, rhs: &Multivector) {
        assert_eq!(self.dim, rhs.dim);
        self.coeffs
            .iter_mut()
            .zip(&rhs.coeffs)
            .for_each(|(a, b)| *a -= b);
    }
}

impl Neg for &Multivector {
    type Output = Multivector;
    fn neg(self) -> Multivector {
        self.scale(-1.0)
    }
}

impl Neg for Multivector {
    type Output = Multivector;
    fn neg(self) -> Multivector {
        self * -1.0
    }
}

/// Inverse of a nonzero grade-1 element: `x^{-1} = -x / |x|^2`.
pub fn vector_inverse(x: &Multivector) -> Result<Multivector> {
    if !x.is_grade(1, 0.0) {
        return Err(Error::Contract("vector_inverse needs a pure grade-1 element".into()));
    }
    let n2 = x.norm_sq();
    if n2 == 0.0 {
        return Err(Error::Singular("zero vector has no inverse".into()));
    }
    Ok(x.scale(-1.0 / n2))
}

/// An element of the Lipschitz group carried as its factorization into
/// nonzero vectors. Unit factors give elements of Pin(n).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFactorList {
    dim: usize,
    factors: Vec<Multivector>,
}

impl VectorFactorList {
    pub fn new(factors: Vec<Multivector>) -> Result<Self> {
        let dim = factors
            .first()
            .map(|f| f.dim())
            .ok_or_else(|| Error::Contract("empty factor list".into()))?;
        for f in &factors {
            if f.dim() != dim {
                return Err(Error::DimensionMismatch(dim, f.dim()));
            }
            if !f.is_grade(1, 0.0) {
                return Err(Error::Contract("factor is not of pure grade 1".into()));
            }
            if f.norm() == 0.0 {
                return Err(Error::Singular("zero vector factor".into()));
            }
        }
        Ok(Self { dim, factors })
    }

    /// Builds a factor list from plain coordinate vectors.
    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        Self::new(vectors.iter().map(|v| Multivector::vector(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn factors(&self) -> &[Multivector] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        self.factors.iter().all(|f| (f.norm() - 1.0).abs() <= tol)
    }

    /// True for an even number of factors (Spin(n) when unit).
    pub fn is_even(&self) -> bool {
        self.factors.len().is_multiple_of(2)
    }

    pub fn product(&self) -> Multivector {
        self.factors
            .iter()
            .fold(Multivector::one(self.dim), |acc, f| &acc * f)
    }

    /// Normalizes every factor, giving the Pin(n) element in the same direction.
    pub fn normalized(&self) -> Self {
        Self {
            dim: self.dim,
            factors: self.factors.iter().map(|f| f.scale(1.0 / f.norm())).collect(),
        }
    }
}

/// Inverse of `x_1 ... x_J`: the vector inverses in reverse order.
pub fn lipschitz_inverse(a: &VectorFactorList) -> Result<Multivector> {
    let mut inv = Multivector::one(a.dim);
    for f in a.factors.iter().rev() {
        inv = &inv * &vector_inverse(f)?;
    }
    Ok(inv)
}

fn require_unit(y: &Multivector, what: &str) -> Result<()> {
    if !y.is_grade(1, 0.0) {
        return Err(Error::Contract(format!("{what} must be grade 1")));
    }
    if (y.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::Contract(format!(
            "{what} must be a unit vector (norm {})",
            y.norm()
        )));
    }
    Ok(())
}

/// Reflection `y x y` in the hyperplane orthogonal to the unit vector `y`.
pub fn reflect(y: &Multivector, x: &Multivector) -> Result<Multivector> {
    require_unit(y, "mirror direction")?;
    if !x.is_grade(1, 0.0) {
        return Err(Error::Contract("reflected element must be grade 1".into()));
    }
    let yx = y.geometric_product(x)?;
    Ok(&yx * y)
}

/// Orthogonal action `a x ã` of a Pin(n) element given by unit factors.
pub fn pin_action(a: &VectorFactorList, x: &Multivector) -> Result<Multivector> {
    for f in a.factors() {
        require_unit(f, "Pin factor")?;
    }
    if x.dim() != a.dim() {
        return Err(Error::DimensionMismatch(a.dim(), x.dim()));
    }
    let p = a.product();
    Ok(&(&p * x) * &p.reversion())
}
