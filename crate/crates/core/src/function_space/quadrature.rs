//! Composite Gauss–Legendre quadrature with geometric refinement toward
//! integrable endpoint singularities.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

use crate::error::{CuspError, Result};

/// Substitution exponent used on the innermost refinement cell: an
/// integrand behaving like `r^α` becomes `t^{4(α+1)-1}`, which is smooth
/// for α ∈ {-3/4, -1/2, 0, ...} and much milder than `r^α` otherwise.
const INNER_SUBSTITUTION_POWER: i32 = 4;

/// Gauss–Legendre nodes and weights mapped to the unit interval.
#[derive(Clone, Debug)]
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(order: usize) -> Self {
        let order = NonZeroUsize::new(order.max(1)).unwrap();
        let rule = GaussLegendre::new(order);
        let mut pairs: Vec<(f64, f64)> = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (nodes, weights) = pairs.into_iter().unzip();
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes on the unit interval, ascending.
    pub fn unit_nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn unit_weights(&self) -> &[f64] {
        &self.weights
    }

    /// ∫_a^b f. Aborts on the first non-finite integrand value.
    pub fn integrate<F>(&self, a: f64, b: f64, mut f: F) -> Result<f64>
    where
        F: FnMut(f64) -> f64,
    {
        let h = b - a;
        let mut acc = 0.0;
        for (t, w) in self.nodes.iter().zip(&self.weights) {
            let x = a + h * t;
            let v = f(x);
            if !v.is_finite() {
                return Err(CuspError::NonFinite { x, value: v });
            }
            acc += w * v;
        }
        Ok(acc * h)
    }

    /// ∫_0^len g(r) dr for `g` possibly singular (but integrable) at r = 0.
    ///
    /// The interval is cut geometrically into `[len/2^{j+1}, len/2^j]`,
    /// `j < depth`; the innermost cell `[0, len/2^depth]` is integrated
    /// after the substitution `r = w t^4`.
    pub fn integrate_endpoint_singular<F>(&self, len: f64, depth: usize, mut g: F) -> Result<f64>
    where
        F: FnMut(f64) -> f64,
    {
        let mut acc = 0.0;
        let mut hi = len;
        for _ in 0..depth {
            let lo = 0.5 * hi;
            acc += self.integrate(lo, hi, &mut g)?;
            hi = lo;
        }
        let inner = hi;
        let m = INNER_SUBSTITUTION_POWER;
        acc += self.integrate(0.0, 1.0, |t| {
            let r = inner * t.powi(m);
            g(r) * inner * f64::from(m) * t.powi(m - 1)
        })?;
        Ok(acc)
    }

    /// ∫ f over [0, 1] split at `breaks`; panel ends that coincide with a
    /// point of `singular` are refined geometrically.
    pub fn integrate_split<F>(&self, breaks: &[f64], singular: &[f64], depth: usize, f: F) -> Result<f64>
    where
        F: Fn(f64) -> f64,
    {
        let is_singular = |x: f64| singular.iter().any(|&s| (s - x).abs() <= 1e-15);
        let mut acc = 0.0;
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            match (is_singular(a), is_singular(b)) {
                (false, false) => acc += self.integrate(a, b, &f)?,
                (true, false) => acc += self.integrate_endpoint_singular(b - a, depth, |r| f(a + r))?,
                (false, true) => acc += self.integrate_endpoint_singular(b - a, depth, |r| f(b - r))?,
                (true, true) => {
                    let m = 0.5 * (a + b);
                    acc += self.integrate_endpoint_singular(m - a, depth, |r| f(a + r))?;
                    acc += self.integrate_endpoint_singular(b - m, depth, |r| f(b - r))?;
                }
            }
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_for_degree_two_n_minus_one() {
        let rule = GaussRule::new(8);
        let exact = 1.0 / 16.0 * (2f64.powi(16) - 1.0);
        let got = rule.integrate(1.0, 2.0, |x| x.powi(15)).unwrap();
        assert_relative_eq!(got, exact, max_relative = 1e-13);
    }

    #[test]
    fn weights_sum_to_one() {
        let rule = GaussRule::new(8);
        let s: f64 = rule.unit_weights().iter().sum();
        assert_relative_eq!(s, 1.0, epsilon = 1e-15);
        assert!(rule.unit_nodes().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn endpoint_singularity_inverse_square_root() {
        // ∫_0^1 r^{-1/2} = 2
        let rule = GaussRule::new(8);
        let got = rule.integrate_endpoint_singular(1.0, 12, |r| r.powf(-0.5)).unwrap();
        assert_relative_eq!(got, 2.0, epsilon = 1e-12);
        // r^{-3/4}: ∫_0^1 = 4
        let got = rule.integrate_endpoint_singular(1.0, 12, |r| r.powf(-0.75)).unwrap();
        assert_relative_eq!(got, 4.0, epsilon = 1e-11);
    }

    #[test]
    fn non_finite_aborts() {
        let rule = GaussRule::new(4);
        let err = rule.integrate(0.0, 1.0, |x| if x > 0.5 { f64::NAN } else { 1.0 });
        assert!(matches!(err, Err(CuspError::NonFinite { .. })));
    }
}
