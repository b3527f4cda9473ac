//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

use cusp_response::function_space::{NormConfig, SplineFunction};
use cusp_response::map_family::{Branch, CuspTentFamily, MapModel};
use cusp_response::transfer_operator::OperatorContext;

pub const P: f64 = 1.5;

pub fn norm_cfg() -> NormConfig {
    NormConfig::new(P).unwrap()
}

pub fn family(eps: f64) -> CuspTentFamily {
    CuspTentFamily::new(4, eps, P).unwrap()
}

pub fn ctx(eps: f64, panels: usize) -> OperatorContext {
    OperatorContext::for_family(family(eps), panels, 2.0, norm_cfg()).unwrap()
}

fn gauss(order: usize) -> Vec<(f64, f64)> {
    GaussLegendre::new(NonZeroUsize::new(order).unwrap())
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect()
}

/// `∫_0^1 f(x) g(T(x)) dx` for the cusp tent family, computed without the
/// transfer operator.
///
/// Each branch is integrated in `s = d^{1/k}`, `d = |x - c|`, where the map
/// is the polynomial `(1-ε)(1 - 1.5 s^k - 0.25·2^{1/k} s)`. Breaks sit at
/// the nodes of `f` and at the preimages of the nodes of `g`, so every piece
/// of the integrand is a polynomial of degree at most `7k - 1` and Gauss
/// rules of order `4k` are exact.
pub fn koopman_pairing(fam: &CuspTentFamily, f: &SplineFunction, g: &SplineFunction) -> f64 {
    let k = f64::from(fam.k());
    let c = fam.cusp();
    let rule = gauss(4 * fam.k() as usize);
    let mut total = 0.0;
    for b in Branch::BOTH {
        let len = fam.branch_length(b);
        let mut breaks: Vec<f64> = vec![0.0, len.powf(1.0 / k)];
        for &x in f.mesh().nodes() {
            let d = (x - c).abs();
            if d > 0.0 && d < len && (x < c) == (b == Branch::Left) {
                breaks.push(d.powf(1.0 / k));
            }
        }
        for &y in g.mesh().nodes() {
            if y > 0.0 && y < fam.peak() {
                breaks.push(fam.branch_inverse(b, y).unwrap().offset.powf(1.0 / k));
            }
        }
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let scale = 1.0 - fam.eps();
        let top = 0.25 * 2f64.powf(1.0 / k);
        for w in breaks.windows(2) {
            let h = w[1] - w[0];
            if h <= 0.0 {
                continue;
            }
            // locate the panels once per piece from its midpoint
            let sm = 0.5 * (w[0] + w[1]);
            let xm = b.point(c, sm.powf(k));
            let ym = scale * (1.0 - 1.5 * sm.powf(k) - top * sm);
            let fi = f.mesh().locate(xm);
            let gi = g.mesh().locate(ym.clamp(0.0, 1.0));
            for &(t, wt) in &rule {
                let s = w[0] + h * t;
                let d = s.powf(k);
                let x = b.point(c, d);
                let y = scale * (1.0 - 1.5 * d - top * s);
                let jac = k * s.powf(k - 1.0);
                total += wt * h * jac * f.derivative_on_panel(fi, x, 0) * g.derivative_on_panel(gi, y, 0);
            }
        }
    }
    total
}

/// `∫ f g` for splines, exact on the union of their meshes.
pub fn spline_pairing(f: &SplineFunction, g: &SplineFunction) -> f64 {
    let rule = gauss(6);
    let breaks = f.mesh().union_breaks(g.mesh());
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let (fi, gi) = (f.mesh().locate(mid), g.mesh().locate(mid));
        let h = w[1] - w[0];
        for &(t, wt) in &rule {
            let x = w[0] + h * t;
            total += wt * h * f.derivative_on_panel(fi, x, 0) * g.derivative_on_panel(gi, x, 0);
        }
    }
    total
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
