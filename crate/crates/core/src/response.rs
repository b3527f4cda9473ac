//! Linear response of the invariant density: the kernel `q` by two routes,
//! the predicted derivative `u = (I - P_0)^{-1} q`, and the finite
//! difference sweep that tests `h_ε = h_0 + ε u + o(ε)`.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{CuspError, Result};
use crate::function_space::{lp_distance, lp_norm_combination, Continuity, GradedMesh, NormConfig, SplineFunction};
use crate::map_family::{loglog_slope, Branch, CuspTentFamily, EpsQuantity, MapModel, Preimage};
use crate::spectral::{invariant_density, resolvent_apply, InvariantDensity};
use crate::transfer_operator::{eval_at, OperatorContext};

/// `A = -∂_ε T / T'` and `B = ∂_ε T · T'' / T'^2 - ∂_ε T' / T'` of a model.
#[derive(Clone, Debug)]
pub struct ResponseCoefficients {
    model: Arc<dyn MapModel>,
}

impl ResponseCoefficients {
    pub fn new(model: Arc<dyn MapModel>) -> Self {
        Self { model }
    }

    pub fn a_on(&self, branch: Branch, offset: f64) -> f64 {
        let m = self.model.as_ref();
        -m.branch_eps_derivative(branch, offset, EpsQuantity::Value) / m.branch_derivative(branch, offset, 1)
    }

    pub fn b_on(&self, branch: Branch, offset: f64) -> f64 {
        let m = self.model.as_ref();
        let t1 = m.branch_derivative(branch, offset, 1);
        let t2 = m.branch_derivative(branch, offset, 2);
        m.branch_eps_derivative(branch, offset, EpsQuantity::Value) * t2 / (t1 * t1)
            - m.branch_eps_derivative(branch, offset, EpsQuantity::Slope) / t1
    }

    pub fn a(&self, x: f64) -> Result<f64> {
        let (b, d) = self.split(x)?;
        Ok(self.a_on(b, d))
    }

    pub fn b(&self, x: f64) -> Result<f64> {
        let (b, d) = self.split(x)?;
        Ok(self.b_on(b, d))
    }

    fn split(&self, x: f64) -> Result<(Branch, f64)> {
        self.model.locate(x)?.ok_or(CuspError::Singularity {
            cusp: self.model.cusp(),
        })
    }
}

/// `q = P_0[A_0 h_0' + B_0 h_0]`, zero from the peak onward.
pub fn kernel_q(ctx0: &OperatorContext, h0: &InvariantDensity, coeff: &ResponseCoefficients) -> Result<SplineFunction> {
    let h = &h0.h;
    ctx0.apply_fn(|pre: &Preimage| {
        coeff.a_on(pre.branch, pre.offset) * eval_at(h, pre, 1)
            + coeff.b_on(pre.branch, pre.offset) * eval_at(h, pre, 0)
    })
}

/// `q = h_0 + x h_0'`, exact on each panel of `h_0`.
pub fn kernel_q_family(h0: &InvariantDensity) -> Result<SplineFunction> {
    family_derivative(&h0.h)
}

/// `g + x g'`, the ε-derivative of `P_{D_ε} g` at ε = 0, exact per panel.
pub fn family_derivative(g: &SplineFunction) -> Result<SplineFunction> {
    let coeffs = g
        .coefficients()
        .iter()
        .zip(g.mesh().nodes())
        .map(|(c, &xi)| {
            [
                c[0] + xi * c[1],
                2.0 * c[1] + 2.0 * xi * c[2],
                3.0 * c[2] + 3.0 * xi * c[3],
                4.0 * c[3],
            ]
        })
        .collect();
    let continuity = if g.continuity() >= Continuity::C2 {
        Continuity::C1
    } else {
        Continuity::C0
    };
    SplineFunction::from_panels(g.mesh().clone(), coeffs, continuity)
}

/// `u = (I - P_0)^{-1} q`.
pub fn predicted_derivative(ctx0: &OperatorContext, q: &SplineFunction, tol: f64) -> Result<SplineFunction> {
    resolvent_apply(ctx0, q, tol)
}

/// Parameters of a response sweep over the cusp tent family.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub k: u32,
    pub p: f64,
    /// Strictly decreasing values in (0, 0.1).
    pub eps_list: Vec<f64>,
    pub panels: usize,
    pub grading: f64,
    pub quad_order: usize,
    pub tol_density: f64,
    pub tol_neumann: f64,
    pub max_iter: usize,
    pub parallel: bool,
}

impl SweepConfig {
    pub fn norm_config(&self) -> Result<NormConfig> {
        let cfg = NormConfig {
            quadrature_order: self.quad_order,
            ..NormConfig::new(self.p)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn context(&self, eps: f64) -> Result<OperatorContext> {
        let fam = CuspTentFamily::new(self.k, eps, self.p)?;
        Ok(
            OperatorContext::for_family(fam, self.panels, self.grading, self.norm_config()?)?
                .with_parallel(self.parallel),
        )
    }
}

/// One ε of the sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepEntry {
    pub eps: f64,
    pub h_residual: f64,
    /// `‖(h_ε - h_0)/ε - u‖_{L^p}`.
    pub fd_error_lp: f64,
    /// `‖h_ε - h_0‖_{L^p}`.
    pub h_distance: f64,
    /// `None` on success, otherwise the failure message.
    pub failure: Option<String>,
}

impl SweepEntry {
    pub fn converged(&self) -> bool {
        self.failure.is_none()
    }
}

/// Everything computed by [`response_sweep`].
#[derive(Clone, Debug)]
pub struct ResponseReport {
    pub h0: InvariantDensity,
    pub q_theorem: SplineFunction,
    pub q_family: SplineFunction,
    pub u: SplineFunction,
    /// `‖q_theorem - q_family‖_{L^p}`.
    pub kernel_route_gap: f64,
    pub sweep: Vec<SweepEntry>,
    /// Least-squares log-log slope over the three smallest converged ε.
    pub fitted_rate: Option<f64>,
}

impl ResponseReport {
    /// Columns `eps,h_residual,fd_error_lp,h_distance,kernel_route_gap,status`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps,h_residual,fd_error_lp,h_distance,kernel_route_gap,status\n");
        for e in &self.sweep {
            let status = e
                .failure
                .as_deref()
                .map_or_else(|| "ok".to_string(), |m| format!("\"{m}\""));
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{status}",
                e.eps, e.h_residual, e.fd_error_lp, e.h_distance, self.kernel_route_gap
            );
        }
        s
    }

    /// Whether `fd_error_lp` strictly decreases down the ε column.
    pub fn errors_decreasing(&self) -> bool {
        self.sweep.iter().all(SweepEntry::converged)
            && self.sweep.windows(2).all(|w| w[1].fd_error_lp < w[0].fd_error_lp)
    }

    /// Two-panel SVG: `h_0`, `q` and `u` on [0, 1], and `e(ε)` on log-log axes.
    pub fn to_svg(&self) -> String {
        let samples = 400;
        let xs: Vec<f64> = (0..=samples).map(|i| i as f64 / samples as f64).collect();
        let curves = [
            ("h0", "#1f77b4", &self.h0.h),
            ("q", "#d62728", &self.q_family),
            ("u", "#2ca02c", &self.u),
        ];
        let mut left = Plot::new(40.0, 30.0, 360.0, 260.0);
        type Series<'a> = (&'a str, &'a str, Vec<(f64, f64)>);
        let series: Vec<Series> = curves
            .iter()
            .map(|(name, color, f)| (*name, *color, xs.iter().map(|&x| (x, f.value(x))).collect()))
            .collect();
        left.fit(series.iter().flat_map(|s| s.2.iter().copied()));
        let mut right = Plot::new(460.0, 30.0, 360.0, 260.0);
        let errs: Vec<(f64, f64)> = self
            .sweep
            .iter()
            .filter(|e| e.converged() && e.fd_error_lp > 0.0)
            .map(|e| (e.eps.log10(), e.fd_error_lp.log10()))
            .collect();
        right.fit(errs.iter().copied());

        let mut svg = String::from(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"860\" height=\"330\" font-family=\"sans-serif\" font-size=\"11\">\n",
        );
        svg.push_str(&left.frame("x"));
        for (name, color, pts) in &series {
            svg.push_str(&left.polyline(pts, color));
            let _ = writeln!(
                svg,
                "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{name}</text>",
                left.x0 + 8.0,
                left.y0 + 14.0 * (1.0 + series.iter().position(|s| s.0 == *name).unwrap() as f64)
            );
        }
        svg.push_str(&right.frame("log10 eps / log10 e(eps)"));
        svg.push_str(&right.polyline(&errs, "#000000"));
        svg.push_str("</svg>\n");
        svg
    }
}

struct Plot {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Plot {
    fn new(x0: f64, y0: f64, w: f64, h: f64) -> Self {
        Self {
            x0,
            y0,
            w,
            h,
            xr: (0.0, 1.0),
            yr: (0.0, 1.0),
        }
    }

    fn fit(&mut self, pts: impl Iterator<Item = (f64, f64)>) {
        let (mut xl, mut xh, mut yl, mut yh) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in pts.filter(|p| p.0.is_finite() && p.1.is_finite()) {
            xl = xl.min(x);
            xh = xh.max(x);
            yl = yl.min(y);
            yh = yh.max(y);
        }
        if xl < xh {
            self.xr = (xl, xh);
        }
        if yl < yh {
            self.yr = (yl, yh);
        } else if yl.is_finite() {
            self.yr = (yl - 1.0, yl + 1.0);
        }
    }

    fn map(&self, (x, y): (f64, f64)) -> (f64, f64) {
        (
            self.x0 + self.w * (x - self.xr.0) / (self.xr.1 - self.xr.0),
            self.y0 + self.h * (1.0 - (y - self.yr.0) / (self.yr.1 - self.yr.0)),
        )
    }

    fn frame(&self, label: &str) -> String {
        format!(
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#888\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\">{label} [{:.3e}, {:.3e}] x [{:.3e}, {:.3e}]</text>\n",
            self.x0,
            self.y0,
            self.w,
            self.h,
            self.x0,
            self.y0 + self.h + 18.0,
            self.xr.0,
            self.xr.1,
            self.yr.0,
            self.yr.1
        )
    }

    fn polyline(&self, pts: &[(f64, f64)], color: &str) -> String {
        let coords: Vec<String> = pts
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&p| {
                let (x, y) = self.map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{}\"/>\n",
            coords.join(" ")
        )
    }
}

/// Full response pipeline: `h_0`, both kernels, `u`, then for every ε the
/// density `h_ε` and the error of the first-order prediction.
pub fn response_sweep(cfg: &SweepConfig) -> Result<ResponseReport> {
    if cfg.eps_list.is_empty() {
        return Err(CuspError::Config("eps list is empty".into()));
    }
    if cfg.eps_list.iter().any(|&e| !(e > 0.0 && e < CuspTentFamily::MAX_EPS)) {
        return Err(CuspError::Config("sweep values must lie in (0, 0.1)".into()));
    }
    if cfg.eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CuspError::Config("sweep values must be strictly decreasing".into()));
    }
    let norm = cfg.norm_config()?;
    let ctx0 = cfg.context(0.0)?;
    let h0 = invariant_density(&ctx0, cfg.tol_density, cfg.max_iter)?;
    let coeff = ResponseCoefficients::new(ctx0.model().clone());
    let q_theorem = kernel_q(&ctx0, &h0, &coeff)?;
    let q_family = kernel_q_family(&h0)?;
    let kernel_route_gap = lp_distance(&q_theorem, &q_family, &norm, norm.p)?;
    let u = predicted_derivative(&ctx0, &q_family, cfg.tol_neumann)?;

    let sweep: Vec<SweepEntry> = cfg
        .eps_list
        .par_iter()
        .map(|&eps| sweep_entry(cfg, &norm, eps, &h0.h, &u))
        .collect();

    let mut usable: Vec<&SweepEntry> = sweep.iter().filter(|e| e.converged() && e.fd_error_lp > 0.0).collect();
    usable.sort_by(|a, b| a.eps.total_cmp(&b.eps));
    let fitted_rate = (usable.len() >= 3).then(|| {
        let tail = &usable[..3];
        let x: Vec<f64> = tail.iter().map(|e| e.eps).collect();
        let y: Vec<f64> = tail.iter().map(|e| e.fd_error_lp).collect();
        loglog_slope(&x, &y)
    });
    Ok(ResponseReport {
        h0,
        q_theorem,
        q_family,
        u,
        kernel_route_gap,
        sweep,
        fitted_rate,
    })
}

fn sweep_entry(cfg: &SweepConfig, norm: &NormConfig, eps: f64, h0: &SplineFunction, u: &SplineFunction) -> SweepEntry {
    let run = || -> Result<SweepEntry> {
        let ctx = cfg.context(eps)?;
        let h = invariant_density(&ctx, cfg.tol_density, cfg.max_iter)?;
        let inv = 1.0 / eps;
        let fd_error_lp = lp_norm_combination(&[(inv, &h.h), (-inv, h0), (-1.0, u)], norm, norm.p)?;
        let h_distance = lp_distance(&h.h, h0, norm, norm.p)?;
        Ok(SweepEntry {
            eps,
            h_residual: h.residual,
            fd_error_lp,
            h_distance,
            failure: None,
        })
    };
    run().unwrap_or_else(|e| SweepEntry {
        eps,
        h_residual: f64::NAN,
        fd_error_lp: f64::NAN,
        h_distance: f64::NAN,
        failure: Some(e.to_string()),
    })
}

/// Mesh shared by a sweep's contexts at parameter ε.
pub fn sweep_mesh(cfg: &SweepConfig, eps: f64) -> Result<Arc<GradedMesh>> {
    Ok(cfg.context(eps)?.mesh().clone())
}
