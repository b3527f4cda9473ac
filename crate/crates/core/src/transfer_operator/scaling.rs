use std::sync::Arc;

use crate::error::{CuspError, Result};
use crate::function_space::{Continuity, GradedMesh, SplineFunction};

/// Transfer operator of `D_ε(x) = (1-ε) x`:
/// `(1-ε)^{-1} 1_{[0,1-ε]}(x) g(x / (1-ε))`.
///
/// Exact on splines: the result lives on the scaled nodes of `g` plus the
/// cusp and 1, balanced to the usual spacing ratio.
pub fn apply_d_eps(g: &SplineFunction, eps: f64) -> Result<SplineFunction> {
    if !(0.0..0.1).contains(&eps) {
        return Err(CuspError::Config(format!("eps must lie in [0, 0.1), got {eps}")));
    }
    if eps == 0.0 {
        return Ok(g.clone());
    }
    let s = 1.0 - eps;
    let src = g.mesh();
    let scaled: Vec<f64> = src.nodes().iter().map(|&x| s * x).collect();
    let raw = GradedMesh::from_nodes(scaled, src.cusp(), s * src.peak(), src.grading_exponent())?;
    let mesh = Arc::new(raw.balanced());

    let nodes = mesh.nodes();
    let coeffs = nodes
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            if mid >= s {
                return [0.0; 4];
            }
            let i = src.locate(mid / s);
            let c = g.coefficients()[i];
            // g((x_i' + t)/s) with x_i' = s x_i, rescaled by 1/s
            let local = [c[0] / s, c[1] / (s * s), c[2] / (s * s * s), c[3] / (s * s * s * s)];
            shift(&local, w[0] - s * src.nodes()[i])
        })
        .collect();
    // the zero extension keeps C1 only if g has a flat zero at 1
    let last = g.coefficients().len() - 1;
    let h = src.nodes()[last + 1] - src.nodes()[last];
    let end = &g.coefficients()[last];
    let flat = eval(end, h, 0).abs() < 1e-12 && eval(end, h, 1).abs() < 1e-12;
    let continuity = if flat {
        g.continuity().min(Continuity::C1)
    } else {
        Continuity::C0
    };
    SplineFunction::from_panels(mesh, coeffs, continuity)
}

fn eval(c: &[f64; 4], t: f64, order: u8) -> f64 {
    crate::function_space::eval_local(c, t, order)
}

fn shift(c: &[f64; 4], tau: f64) -> [f64; 4] {
    [
        c[0] + tau * (c[1] + tau * (c[2] + tau * c[3])),
        c[1] + tau * (2.0 * c[2] + 3.0 * tau * c[3]),
        c[2] + 3.0 * tau * c[3],
        c[3],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mesh() -> Arc<GradedMesh> {
        Arc::new(GradedMesh::new(64, 2.0, 0.5, 1.0).unwrap())
    }

    #[test]
    fn zero_eps_is_identity() {
        let g = SplineFunction::from_fn(mesh(), |x| x * x).unwrap();
        let out = apply_d_eps(&g, 0.0).unwrap();
        assert_eq!(out.coefficients(), g.coefficients());
    }

    #[test]
    fn constant_rescales_with_cutoff() {
        let g = SplineFunction::constant(mesh(), 1.0);
        let out = apply_d_eps(&g, 0.09).unwrap();
        assert_relative_eq!(out.value(0.3), 1.0 / 0.91, epsilon = 1e-14);
        assert_relative_eq!(out.value(0.9), 1.0 / 0.91, epsilon = 1e-14);
        assert_eq!(out.value(0.95), 0.0);
        assert_relative_eq!(out.integral(), 1.0, epsilon = 1e-14);
        assert!(out.mesh().max_spacing_ratio() <= 4.0 + 1e-9);
    }

    #[test]
    fn cubic_is_rescaled_exactly() {
        let g = SplineFunction::from_fn(mesh(), |x| x * x * x - x).unwrap();
        let out = apply_d_eps(&g, 0.05).unwrap();
        for &x in &[0.1, 0.47, 0.5, 0.77, 0.949] {
            let y = x / 0.95;
            assert_relative_eq!(out.value(x), (y * y * y - y) / 0.95, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_large_eps() {
        let g = SplineFunction::constant(mesh(), 1.0);
        assert!(apply_d_eps(&g, 0.1).is_err());
    }
}
