//! Tensor-product Gauss-Legendre quadrature over boxes, with per-cell
//! parallel evaluation and a fixed pairwise reduction order.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Nodes and weights of the `q`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(q >= 1, "Gauss-Legendre order must be positive");
    let mut x = vec![0.0; q];
    let mut w = vec![0.0; q];
    let qf = q as f64;
    for i in 0..q.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (qf + 0.5)).cos();
        let mut dp;
        loop {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 1..=q {
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j as f64 - 1.0) * z * p2 - (j as f64 - 1.0) * p3) / j as f64;
            }
            dp = qf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / dp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[q - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[q - 1 - i] = w[i];
    }
    (x, w)
}

/// Sums vectors pairwise in a fixed binary-tree order.
pub fn pairwise_sum(parts: &[Vec<f64>], width: usize) -> Vec<f64> {
    match parts.len() {
        0 => vec![0.0; width],
        1 => parts[0].clone(),
        len => {
            let (a, b) = parts.split_at(len / 2);
            let mut left = pairwise_sum(a, width);
            let right = pairwise_sum(b, width);
            left.iter_mut().zip(&right).for_each(|(l, r)| *l += r);
            left
        }
    }
}

/// Per-axis Gauss order on a uniform grid of `cells` cells per axis.
#[derive(Debug, Clone, Serialize)]
pub struct QuadratureRule {
    pub order: usize,
    pub cells: usize,
    #[serde(skip)]
    nodes: Vec<f64>,
    #[serde(skip)]
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(order: usize, cells: usize) -> Result<Self> {
        if order == 0 || cells == 0 {
            return Err(Error::Parameter("quadrature order and cell count must be positive".into()));
        }
        let (nodes, weights) = gauss_legendre(order);
        Ok(Self {
            order,
            cells,
            nodes,
            weights,
        })
    }

    /// Default rule for a dimension: order 12 on 8 cells per axis up to n = 3,
    /// order 8 on 6 cells beyond.
    pub fn default_for(n: usize) -> Self {
        if n <= 3 {
            Self::new(12, 8).expect("valid rule")
        } else {
            Self::new(8, 6).expect("valid rule")
        }
    }

    /// Same cells, twice the Gauss order.
    pub fn doubled(&self) -> Self {
        Self::new(2 * self.order, self.cells).expect("valid rule")
    }

    /// Nodes and weights of the composite rule on `[a, b]`, in increasing order.
    pub fn nodes_1d(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let h = (b - a) / self.cells as f64;
        let mut xs = Vec::with_capacity(self.cells * self.order);
        let mut ws = Vec::with_capacity(self.cells * self.order);
        for c in 0..self.cells {
            let origin = a + h * c as f64;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                xs.push(origin + 0.5 * h * (x + 1.0));
                ws.push(0.5 * h * w);
            }
        }
        (xs, ws)
    }

    /// Integrates a `width`-component integrand over the box `[lo, hi]`.
    ///
    /// `f(x, out)` receives a zeroed buffer of length `width`; leaving it zero
    /// masks the point.
    pub fn integrate<F>(&self, lo: &[f64], hi: &[f64], width: usize, f: F) -> Result<Vec<f64>>
    where
        F: Fn(&[f64], &mut [f64]) -> Result<()> + Sync,
    {
        let n = lo.len();
        let ncells = self.cells.pow(n as u32);
        let q = self.order;
        let npts = q.pow(n as u32);
        let hcell: Vec<f64> = (0..n).map(|j| (hi[j] - lo[j]) / self.cells as f64).collect();
        let jac: f64 = hcell.iter().map(|h| 0.5 * h).product();

        let parts: Vec<Vec<f64>> = (0..ncells)
            .into_par_iter()
            .map(|cell| {
                let mut origin = vec![0.0; n];
                let mut rem = cell;
                for j in 0..n {
                    origin[j] = lo[j] + hcell[j] * (rem % self.cells) as f64;
                    rem /= self.cells;
                }
                let mut acc = vec![0.0; width];
                let mut buf = vec![0.0; width];
                let mut x = vec![0.0; n];
                for pt in 0..npts {
                    let mut rem = pt;
                    let mut w = jac;
                    for j in 0..n {
                        let k = rem % q;
                        rem /= q;
                        x[j] = origin[j] + 0.5 * hcell[j] * (self.nodes[k] + 1.0);
                        w *= self.weights[k];
                    }
                    buf.iter_mut().for_each(|b| *b = 0.0);
                    f(&x, &mut buf)?;
                    acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += w * b);
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(pairwise_sum(&parts, width))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_positive_and_sum_to_two() {
        for q in 1..=30 {
            let (x, w) = gauss_legendre(q);
            assert!(w.iter().all(|v| *v > 0.0));
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13, "q={q}");
            assert!(x.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn exact_on_monomials_up_to_degree_2q_minus_1() {
        for q in [1, 2, 5, 12] {
            let (x, w) = gauss_legendre(q);
            for k in 0..2 * q {
                let approx: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(k as i32)).sum();
                let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                assert!((approx - exact).abs() < 1e-13, "q={q} k={k}");
            }
            // degree 2q is not integrated exactly
            let k = 2 * q as i32;
            let approx: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(k)).sum();
            assert!((approx - 2.0 / (k as f64 + 1.0)).abs() > 1e-9);
        }
    }

    #[test]
    fn box_integration_of_a_product_monomial() {
        let rule = QuadratureRule::new(3, 2).unwrap();
        let r = rule
            .integrate(&[0.0, -1.0], &[2.0, 1.0], 2, |x, out| {
                out[0] = x[0].powi(5) * x[1].powi(4);
                out[1] = 1.0;
                Ok(())
            })
            .unwrap();
        // ∫_0^2 x^5 dx ∫_{-1}^1 y^4 dy = (64/6)(2/5)
        assert!((r[0] - 64.0 / 6.0 * 0.4).abs() < 1e-12);
        assert!((r[1] - 4.0).abs() < 1e-13);
    }

    #[test]
    fn integration_is_deterministic() {
        let rule = QuadratureRule::new(7, 5).unwrap();
        let f = |x: &[f64], out: &mut [f64]| {
            out[0] = (x[0] * 3.1).sin() * (x[1] - x[2]).exp();
            Ok(())
        };
        let a = rule.integrate(&[0.0; 3], &[1.0; 3], 1, f).unwrap();
        let b = rule.integrate(&[0.0; 3], &[1.0; 3], 1, f).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }
}
