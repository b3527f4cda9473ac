//! Invariant densities, Ulam spectra and the resolvent `(I - P)^{-1}` on
//! zero-mean functions.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::error::{CuspError, Result};
use crate::function_space::{lp_distance, sobolev_norm, GradedMesh, NormConfig, SplineFunction};
use crate::map_family::{MapModel, MixingDiagnostic};
use crate::transfer_operator::{OperatorContext, UlamOperator};

/// Largest number of Neumann terms before the series is declared divergent.
pub const MAX_NEUMANN_TERMS: usize = 10_000;

/// Tolerance on `|∫q|` accepted by the resolvent.
pub const MEAN_TOLERANCE: f64 = 1e-8;

/// Fixed point of the transfer operator with unit mass.
#[derive(Clone, Debug)]
pub struct InvariantDensity {
    pub h: SplineFunction,
    /// `‖P h - h‖_{L^p}`.
    pub residual: f64,
    pub iterations: usize,
    /// Residual after each iteration.
    pub trace: Vec<f64>,
}

impl InvariantDensity {
    /// Convergence trace as CSV with columns `iteration,residual`.
    pub fn trace_csv(&self) -> String {
        residual_csv(&self.trace)
    }
}

fn residual_csv(trace: &[f64]) -> String {
    let mut s = String::from("iteration,residual\n");
    for (i, r) in trace.iter().enumerate() {
        let _ = writeln!(s, "{},{r:.16e}", i + 1);
    }
    s
}

/// Power iteration `h ← P h / ∫ P h` from `h ≡ 1`.
pub fn invariant_density(ctx: &OperatorContext, tol: f64, max_iter: usize) -> Result<InvariantDensity> {
    invariant_density_from(ctx, SplineFunction::constant(ctx.mesh().clone(), 1.0), tol, max_iter)
}

/// Power iteration from a given positive start; the start is normalised
/// to unit mass first.
pub fn invariant_density_from(
    ctx: &OperatorContext,
    start: SplineFunction,
    tol: f64,
    max_iter: usize,
) -> Result<InvariantDensity> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(CuspError::Config(format!("tolerance must be positive, got {tol}")));
    }
    let p = ctx.cfg().p;
    let mass = start.integral();
    if mass.is_nan() || mass <= 0.0 {
        return Err(CuspError::Config("start density must have positive mass".into()));
    }
    let mut h = start.scale(1.0 / mass);
    let mut trace = Vec::new();
    for it in 1..=max_iter {
        let g = ctx.apply(&h)?;
        let residual = lp_distance(&g, &h, ctx.cfg(), p)?;
        trace.push(residual);
        if residual < tol {
            return Ok(InvariantDensity {
                h,
                residual,
                iterations: it,
                trace,
            });
        }
        h = g.scale(1.0 / g.integral());
    }
    Err(CuspError::NotConverged {
        what: "invariant density",
        iterations: max_iter,
        residual: trace.last().copied().unwrap_or(f64::NAN),
    })
}

/// Leading part of the spectrum of an Ulam matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumReport {
    /// Eigenvalue estimates in decreasing modulus.
    pub eigenvalues: Vec<Complex64>,
    pub leading: Complex64,
    pub second_modulus: f64,
    pub gap: f64,
    pub resolvent_bound_proxy: Option<f64>,
}

/// Krylov dimension used for Ulam spectra.
const ARNOLDI_DIMENSION: usize = 200;

/// Largest-modulus eigenvalues of the Ulam matrix.
///
/// The leading eigenvalue comes from Arnoldi on the full space; the rest
/// from Arnoldi restricted to zero-sum mass vectors, which the matrix maps
/// into themselves and which exclude the stationary direction.
pub fn ulam_spectrum(op: &UlamOperator, count: usize) -> Result<SpectrumReport> {
    if count < 2 {
        return Err(CuspError::Config(format!("need at least 2 eigenvalues, got {count}")));
    }
    let n = op.size();
    let full = arnoldi_ritz_values(|v| op.matvec(v), op.cell_widths(), ARNOLDI_DIMENSION.min(n), false)?;
    let leading = full[0];
    let start: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.7548776662).sin()).collect();
    let rest = arnoldi_ritz_values(|v| op.matvec(v), start, ARNOLDI_DIMENSION.min(n - 1), true)?;
    let mut eigenvalues = vec![leading];
    eigenvalues.extend(rest.into_iter().take(count - 1));
    let second_modulus = eigenvalues.get(1).map_or(0.0, |z| z.norm());
    Ok(SpectrumReport {
        eigenvalues,
        leading,
        second_modulus,
        gap: 1.0 - second_modulus,
        resolvent_bound_proxy: None,
    })
}

/// Ritz values of `op` on the Krylov space of `start`, in decreasing
/// modulus. With `zero_sum` every vector is re-centred to zero sum.
pub fn arnoldi_ritz_values<F>(op: F, start: Vec<f64>, dimension: usize, zero_sum: bool) -> Result<Vec<Complex64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let center = |v: &mut Vec<f64>| {
        if zero_sum {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter_mut().for_each(|x| *x -= mean);
        }
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut v0 = start;
    center(&mut v0);
    let norm0 = dot(&v0, &v0).sqrt();
    if norm0 == 0.0 {
        return Err(CuspError::Eigen("zero start vector".into()));
    }
    v0.iter_mut().for_each(|x| *x /= norm0);
    let mut basis = vec![v0];
    let mut h = DMatrix::<f64>::zeros(dimension + 1, dimension);
    let mut m = dimension;
    for k in 0..dimension {
        let mut w = op(&basis[k]);
        center(&mut w);
        // two passes of Gram–Schmidt
        for _ in 0..2 {
            for (i, v) in basis.iter().enumerate() {
                let c = dot(&w, v);
                h[(i, k)] += c;
                w.iter_mut().zip(v).for_each(|(a, b)| *a -= c * b);
            }
        }
        let wn = dot(&w, &w).sqrt();
        h[(k + 1, k)] = wn;
        if wn <= 1e-13 {
            m = k + 1;
            break;
        }
        w.iter_mut().for_each(|x| *x /= wn);
        basis.push(w);
    }
    let hm = h.view((0, 0), (m, m)).into_owned();
    let mut ritz: Vec<Complex64> = hm.complex_eigenvalues().iter().copied().collect();
    if ritz.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(CuspError::Eigen("non-finite Ritz value".into()));
    }
    ritz.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
    Ok(ritz)
}

/// Outcome of a Neumann summation.
#[derive(Clone, Debug)]
pub struct NeumannSolution {
    pub u: SplineFunction,
    pub terms: usize,
    /// `W^{1,p}` norm of the last term added.
    pub last_term_norm: f64,
    /// Term norms in order.
    pub trace: Vec<f64>,
}

/// `Σ_n P^n q` until the `W^{1,p}` norm of a term drops below `tol`.
///
/// Each term is re-centred to zero mean to keep rounding drift out of the
/// stationary direction.
pub fn neumann_series(ctx: &OperatorContext, q: &SplineFunction, tol: f64) -> Result<NeumannSolution> {
    let mean = q.integral();
    if mean.abs() > MEAN_TOLERANCE {
        return Err(CuspError::NonZeroMean(mean));
    }
    if q.mesh().nodes() != ctx.mesh().nodes() {
        return Err(CuspError::MeshMismatch);
    }
    let cfg = ctx.cfg();
    let mut term = q.mean_zero_project();
    let mut u = term.clone();
    let mut norm = sobolev_norm(&term, cfg, 1)?;
    let mut trace = vec![norm];
    let mut terms = 1;
    while norm >= tol {
        if terms >= MAX_NEUMANN_TERMS {
            return Err(CuspError::NotConverged {
                what: "Neumann series",
                iterations: terms,
                residual: norm,
            });
        }
        term = ctx.apply(&term)?.mean_zero_project();
        u = u.add(&term)?;
        norm = sobolev_norm(&term, cfg, 1)?;
        trace.push(norm);
        terms += 1;
    }
    Ok(NeumannSolution {
        u,
        terms,
        last_term_norm: norm,
        trace,
    })
}

/// `(I - P)^{-1} q` on zero-mean `q`.
pub fn resolvent_apply(ctx: &OperatorContext, q: &SplineFunction, tol: f64) -> Result<SplineFunction> {
    Ok(neumann_series(ctx, q, tol)?.u)
}

/// `max_f ‖(I - P)^{-1} f‖_{W^{1,p}} / ‖f‖_{W^{1,p}}` over a seeded
/// zero-mean corpus.
pub fn resolvent_bound_proxy(ctx: &OperatorContext, corpus_size: usize, seed: u64, tol: f64) -> Result<f64> {
    if corpus_size < 20 {
        return Err(CuspError::Config(format!(
            "resolvent proxy needs at least 20 functions, got {corpus_size}"
        )));
    }
    let corpus = Corpus::new(ctx.mesh().clone(), seed).mean_zero(corpus_size)?;
    let cfg = ctx.cfg();
    let ratios = corpus
        .par_iter()
        .map(|f| -> Result<f64> {
            let u = resolvent_apply(ctx, f, tol)?;
            Ok(sobolev_norm(&u, cfg, 1)? / sobolev_norm(f, cfg, 1)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

/// Heuristic check of topological mixing: the second Ulam eigenvalue on
/// `n` cells stays inside the unit disc, and every dyadic interval down to
/// length 2^{-8} grows under `T` to cover `[T(a), a - 10^{-3}]` within
/// [`MixingDiagnostic::MAX_COVER_ITERATIONS`] steps.
pub fn mixing_diagnostic(model: &Arc<dyn MapModel>, n: usize) -> Result<MixingDiagnostic> {
    let mesh = GradedMesh::new(n, 2.0, model.cusp(), model.peak())?;
    let ctx = OperatorContext::new(model.clone(), Arc::new(mesh), NormConfig::new(2.0)?)?;
    let spectrum = ulam_spectrum(&ctx.ulam_matrix()?, 2)?;
    Ok(MixingDiagnostic {
        second_modulus: spectrum.second_modulus,
        cover_iterations: cover_iterations(model.as_ref())?,
    })
}

fn cover_iterations(model: &dyn MapModel) -> Result<Option<usize>> {
    let peak = model.peak();
    let c = model.cusp();
    let (lo_target, hi_target) = (model.evaluate(peak)?, peak - 1e-3);
    let image = |u: f64, v: f64| -> Result<(f64, f64)> {
        let (tu, tv) = (model.evaluate(u)?, model.evaluate(v)?);
        Ok(if u <= c && c <= v {
            (tu.min(tv), peak)
        } else {
            (tu.min(tv), tu.max(tv))
        })
    };
    let mut worst = 0;
    for level in 1..=8 {
        let count = 1usize << level;
        for i in 0..count {
            let (mut u, mut v) = (i as f64 / count as f64, (i + 1) as f64 / count as f64);
            let mut steps = 0;
            while !(u <= lo_target && v >= hi_target) {
                if steps == MixingDiagnostic::MAX_COVER_ITERATIONS {
                    return Ok(None);
                }
                (u, v) = image(u, v)?;
                steps += 1;
            }
            worst = worst.max(steps);
        }
    }
    Ok(Some(worst))
}

/// Ulam spectrum together with the resolvent proxy, as one CSV row per ε.
pub fn spectrum_csv(rows: &[(f64, Result<SpectrumReport>)]) -> String {
    let mut s = String::from("eps,lambda1_re,lambda1_im,lambda2_mod,gap,resolvent_proxy,status\n");
    for (eps, r) in rows {
        match r {
            Ok(rep) => {
                let _ = writeln!(
                    s,
                    "{eps:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},ok",
                    rep.leading.re,
                    rep.leading.im,
                    rep.second_modulus,
                    rep.gap,
                    rep.resolvent_bound_proxy
                        .map_or_else(|| "nan".to_string(), |v| format!("{v:.16e}"))
                );
            }
            Err(e) => {
                let _ = writeln!(s, "{eps:.16e},nan,nan,nan,nan,nan,\"{e}\"");
            }
        }
    }
    s
}
