//! Densities and test functions as piecewise cubics on graded meshes, and
//! the Lebesgue/Sobolev norms measured on them.

mod mesh;
mod quadrature;
mod spline;

pub use mesh::{GradedMesh, MAX_SPACING_RATIO};
pub use quadrature::GaussRule;
pub(crate) use spline::eval_local;
pub use spline::{Continuity, SplineFunction};

use crate::error::{CuspError, Result};

/// Exponent and quadrature settings shared by every norm evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormConfig {
    pub p: f64,
    pub quadrature_order: usize,
    pub subdivision_depth: usize,
}

impl NormConfig {
    pub fn new(p: f64) -> Result<Self> {
        let cfg = Self {
            p,
            quadrature_order: 8,
            subdivision_depth: 12,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(CuspError::Config(format!("p must exceed 1, got {}", self.p)));
        }
        if self.quadrature_order < 4 {
            return Err(CuspError::Config(format!(
                "quadrature order must be at least 4, got {}",
                self.quadrature_order
            )));
        }
        Ok(())
    }

    pub fn rule(&self) -> GaussRule {
        GaussRule::new(self.quadrature_order)
    }
}

/// ∫ |f|^e over [0, 1] for a spline (panel-wise Gauss, left-to-right sum).
fn spline_power_integral(f: &SplineFunction, rule: &GaussRule, exponent: f64) -> Result<f64> {
    let nodes = f.mesh().nodes();
    let mut acc = 0.0;
    for (i, w) in nodes.windows(2).enumerate() {
        acc += rule.integrate(w[0], w[1], |x| f.derivative_on_panel(i, x, 0).abs().powf(exponent))?;
    }
    Ok(acc)
}

/// `‖f‖_{L^e}` of a spline.
pub fn lp_norm(f: &SplineFunction, cfg: &NormConfig, exponent: f64) -> Result<f64> {
    check_exponent(exponent)?;
    Ok(spline_power_integral(f, &cfg.rule(), exponent)?.powf(1.0 / exponent))
}

/// `‖f‖_{L^e}` of an evaluator. Panels are cut at `breaks` (which must
/// include 0 and 1); panel ends lying on a point of `singular` are refined
/// geometrically to `cfg.subdivision_depth` levels.
pub fn lp_norm_fn<F>(f: F, breaks: &[f64], singular: &[f64], cfg: &NormConfig, exponent: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    check_exponent(exponent)?;
    let rule = cfg.rule();
    let total = rule.integrate_split(breaks, singular, cfg.subdivision_depth, |x| f(x).abs().powf(exponent))?;
    Ok(total.powf(1.0 / exponent))
}

/// `‖f - g‖_{L^e}` for splines on possibly different meshes, integrated on
/// the union of both node sets.
pub fn lp_distance(f: &SplineFunction, g: &SplineFunction, cfg: &NormConfig, exponent: f64) -> Result<f64> {
    check_exponent(exponent)?;
    let breaks = f.mesh().union_breaks(g.mesh());
    let rule = cfg.rule();
    let mut acc = 0.0;
    let (mut i, mut j) = (0, 0);
    let (fn_, gn) = (f.mesh().nodes(), g.mesh().nodes());
    for w in breaks.windows(2) {
        while fn_[i + 1] <= w[0] && i + 1 < f.mesh().panel_count() {
            i += 1;
        }
        while gn[j + 1] <= w[0] && j + 1 < g.mesh().panel_count() {
            j += 1;
        }
        acc += rule.integrate(w[0], w[1], |x| {
            (f.derivative_on_panel(i, x, 0) - g.derivative_on_panel(j, x, 0))
                .abs()
                .powf(exponent)
        })?;
    }
    Ok(acc.powf(1.0 / exponent))
}

/// `‖Σ α_i f_i‖_{L^e}` for splines on possibly different meshes,
/// integrated on the union of all node sets.
pub fn lp_norm_combination(terms: &[(f64, &SplineFunction)], cfg: &NormConfig, exponent: f64) -> Result<f64> {
    check_exponent(exponent)?;
    let mut breaks: Vec<f64> = terms
        .iter()
        .flat_map(|(_, f)| f.mesh().nodes().iter().copied())
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let rule = cfg.rule();
    let mut acc = 0.0;
    for w in breaks.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let panels: Vec<usize> = terms.iter().map(|(_, f)| f.mesh().locate(mid)).collect();
        acc += rule.integrate(w[0], w[1], |x| {
            terms
                .iter()
                .zip(&panels)
                .map(|((a, f), &i)| a * f.derivative_on_panel(i, x, 0))
                .sum::<f64>()
                .abs()
                .powf(exponent)
        })?;
    }
    Ok(acc.powf(1.0 / exponent))
}

/// `‖f - g‖_{L^1}` where `g` is piecewise constant on the panels of `cells`.
pub fn l1_distance_to_step(f: &SplineFunction, cells: &GradedMesh, heights: &[f64], cfg: &NormConfig) -> Result<f64> {
    let rule = cfg.rule();
    let breaks = f.mesh().union_breaks(cells);
    let mut acc = 0.0;
    for w in breaks.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let panel = f.mesh().locate(mid);
        let h = heights[cells.locate(mid)];
        acc += rule.integrate(w[0], w[1], |x| (f.derivative_on_panel(panel, x, 0) - h).abs())?;
    }
    Ok(acc)
}

/// `(Σ_{i ≤ order} ‖f^{(i)}‖_p^p)^{1/p}` for order 1 or 2.
pub fn sobolev_norm(f: &SplineFunction, cfg: &NormConfig, order: u8) -> Result<f64> {
    if !(1..=2).contains(&order) {
        return Err(CuspError::InvalidOrder(order));
    }
    if order == 2 && f.continuity() == Continuity::C0 {
        return Err(CuspError::Regularity { order });
    }
    let p = cfg.p;
    let rule = cfg.rule();
    let nodes = f.mesh().nodes();
    let mut acc = 0.0;
    for (i, w) in nodes.windows(2).enumerate() {
        for k in 0..=order {
            acc += rule.integrate(w[0], w[1], |x| f.derivative_on_panel(i, x, k).abs().powf(p))?;
        }
    }
    Ok(acc.powf(1.0 / p))
}

/// Sobolev norm assembled from separately computed derivative splines:
/// `(‖f‖_p^p + ‖f'‖_p^p [+ ‖f''‖_p^p])^{1/p}`.
pub fn sobolev_norm_from_parts(parts: &[&SplineFunction], cfg: &NormConfig) -> Result<f64> {
    let rule = cfg.rule();
    let mut acc = 0.0;
    for f in parts {
        acc += spline_power_integral(f, &rule, cfg.p)?;
    }
    Ok(acc.powf(1.0 / cfg.p))
}

fn check_exponent(e: f64) -> Result<()> {
    if e >= 1.0 && e.is_finite() {
        Ok(())
    } else {
        Err(CuspError::Config(format!("norm exponent must be >= 1, got {e}")))
    }
}
