//! Fixed-order Gauss-Legendre rules on intervals and boxes.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::GaussLegendre;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct Rule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Rule {
    /// `order` points per axis; `order == 1` is the midpoint rule.
    pub fn gauss_legendre(order: usize) -> Self {
        let order = NonZeroUsize::new(order.max(1)).unwrap();
        let gl = GaussLegendre::new(order);
        let (nodes, weights) = gl.iter().map(|(x, w)| (*x, *w)).unzip();
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }

    /// Tensor-product rule over the box `[lo, hi]` in three dimensions.
    pub fn integrate_box<F: FnMut(f64, f64, f64) -> f64>(&self, lo: [f64; 3], hi: [f64; 3], mut f: F) -> f64 {
        let mut total = 0.0;
        for (x, wx) in self.mapped(lo[0], hi[0]) {
            let mut sy = 0.0;
            for (y, wy) in self.mapped(lo[1], hi[1]) {
                let mut sz = 0.0;
                for (z, wz) in self.mapped(lo[2], hi[2]) {
                    sz += wz * f(x, y, z);
                }
                sy += wy * sz;
            }
            total += wx * sy;
        }
        total
    }

    /// Tensor-product rule over a rectangle.
    pub fn integrate_rect<F: FnMut(f64, f64) -> f64>(&self, lo: [f64; 2], hi: [f64; 2], mut f: F) -> f64 {
        let mut total = 0.0;
        for (x, wx) in self.mapped(lo[0], hi[0]) {
            let mut sy = 0.0;
            for (y, wy) in self.mapped(lo[1], hi[1]) {
                sy += wy * f(x, y);
            }
            total += wx * sy;
        }
        total
    }
}

/// The six-point rule used for the radial metric integrals.
pub fn radial_rule() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| Rule::gauss_legendre(6))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_polynomials() {
        let r = Rule::gauss_legendre(4);
        // degree 7 integrates exactly
        let v = r.integrate(0.0, 2.0, |x| x.powi(7) - 3.0 * x * x);
        assert!((v - (2f64.powi(8) / 8.0 - 8.0)).abs() < 1e-12);
    }

    #[test]
    fn midpoint_rule() {
        let r = Rule::gauss_legendre(1);
        assert_eq!(r.order(), 1);
        assert!((r.integrate(1.0, 3.0, |x| x) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn box_monomial() {
        let r = Rule::gauss_legendre(4);
        let v = r.integrate_box([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], |x, y, z| x * y * y * z);
        assert!((v - 1.0 / 12.0).abs() < 1e-15);
    }
}
