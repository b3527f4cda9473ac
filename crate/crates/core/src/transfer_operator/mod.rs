//! The transfer operator `P f(x) = Σ_{T y = x} f(y) / |T'(y)|` on splines,
//! its first and second derivative actions, the exact `P_{D_ε}` factor of
//! the scaling family, and the Ulam discretisation.

mod scaling;
mod ulam;

pub use scaling::apply_d_eps;
pub use ulam::UlamOperator;

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::error::{CuspError, Result};
use crate::function_space::{lp_distance, sobolev_norm, Continuity, GradedMesh, NormConfig, SplineFunction};
use crate::map_family::{Branch, CuspTentFamily, MapModel, Preimage};

/// Map derivatives at one preimage of a mesh node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchSample {
    pub pre: Preimage,
    /// `T'`, `T''`, `T'''` at the preimage.
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl BranchSample {
    /// Jacobian weight `1 / |T'|`.
    pub fn weight(&self) -> f64 {
        1.0 / self.d1.abs()
    }
}

/// A map together with the target mesh of its transfer operator.
///
/// Preimages of every mesh node and the map derivatives there are computed
/// once at construction; nodes at or beyond the peak have none.
#[derive(Clone, Debug)]
pub struct OperatorContext {
    model: Arc<dyn MapModel>,
    mesh: Arc<GradedMesh>,
    cfg: NormConfig,
    parallel: bool,
    samples: Vec<[Option<BranchSample>; 2]>,
}

impl OperatorContext {
    pub fn new(model: Arc<dyn MapModel>, mesh: Arc<GradedMesh>, cfg: NormConfig) -> Result<Self> {
        cfg.validate()?;
        if mesh.cusp() != model.cusp() || mesh.peak() != model.peak() {
            return Err(CuspError::Mesh(format!(
                "mesh special points ({}, {}) differ from the map's cusp {} and peak {}",
                mesh.cusp(),
                mesh.peak(),
                model.cusp(),
                model.peak()
            )));
        }
        let peak = model.peak();
        let sample = |x: f64| -> Result<[Option<BranchSample>; 2]> {
            if x >= peak {
                return Ok([None, None]);
            }
            let mut out = [None, None];
            for (slot, branch) in out.iter_mut().zip(Branch::BOTH) {
                let pre = model.branch_inverse(branch, x)?;
                *slot = Some(BranchSample {
                    pre,
                    d1: model.branch_derivative(branch, pre.offset, 1),
                    d2: model.branch_derivative(branch, pre.offset, 2),
                    d3: model.branch_derivative(branch, pre.offset, 3),
                });
            }
            Ok(out)
        };
        let samples = mesh
            .nodes()
            .par_iter()
            .map(|&x| sample(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            mesh,
            cfg,
            parallel: true,
            samples,
        })
    }

    /// Context for a family member on a fresh graded mesh.
    pub fn for_family(family: CuspTentFamily, panels: usize, grading: f64, cfg: NormConfig) -> Result<Self> {
        let mesh = GradedMesh::new(panels, grading, family.cusp(), family.peak())?;
        Self::new(family.shared(), Arc::new(mesh), cfg)
    }

    /// Switches between the rayon path and the sequential reference path.
    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn model(&self) -> &Arc<dyn MapModel> {
        &self.model
    }

    pub fn mesh(&self) -> &Arc<GradedMesh> {
        &self.mesh
    }

    pub fn cfg(&self) -> &NormConfig {
        &self.cfg
    }

    pub fn is_parallel(&self) -> bool {
        self.parallel
    }

    pub fn samples(&self) -> &[[Option<BranchSample>; 2]] {
        &self.samples
    }

    fn node_map<F>(&self, f: F) -> Result<Vec<f64>>
    where
        F: Fn(usize) -> f64 + Sync,
    {
        let eval = |j: usize| {
            let v = f(j);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(CuspError::NonFinite {
                    x: self.mesh.nodes()[j],
                    value: v,
                })
            }
        };
        let n = self.mesh.nodes().len();
        if self.parallel {
            (0..n).into_par_iter().map(eval).collect()
        } else {
            (0..n).map(eval).collect()
        }
    }

    /// Σ over the preimages of node `j` of `term(sample)`.
    fn sum_over_preimages(&self, j: usize, term: impl Fn(&BranchSample) -> f64) -> f64 {
        self.samples[j].iter().flatten().map(term).sum()
    }

    fn peak_breaks(&self) -> [usize; 1] {
        [self.mesh.peak_index()]
    }

    /// `P f` as a C1 Hermite spline built from exact nodal values and
    /// slopes; zero from the peak onward.
    pub fn apply(&self, f: &SplineFunction) -> Result<SplineFunction> {
        let pairs = self.node_map_pairs(f)?;
        let (values, slopes): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        SplineFunction::hermite(self.mesh.clone(), &values, &slopes)
    }

    fn node_map_pairs(&self, f: &SplineFunction) -> Result<Vec<(f64, f64)>> {
        let values = self.node_map(|j| self.sum_over_preimages(j, |s| eval_at(f, &s.pre, 0) * s.weight()))?;
        let slopes = self.node_map(|j| {
            self.sum_over_preimages(j, |s| {
                let (v, d) = (eval_at(f, &s.pre, 0), eval_at(f, &s.pre, 1));
                (d / s.d1 - s.d2 * v / (s.d1 * s.d1)) * s.weight()
            })
        })?;
        Ok(values.into_iter().zip(slopes).collect())
    }

    /// `P g` for an evaluator `g` that receives the preimage (branch and
    /// cusp distance included), interpolated with a break at the peak.
    pub fn apply_fn<G>(&self, g: G) -> Result<SplineFunction>
    where
        G: Fn(&Preimage) -> f64 + Sync,
    {
        let values = self.node_map(|j| self.sum_over_preimages(j, |s| g(&s.pre) * s.weight()))?;
        SplineFunction::interpolate_segments(self.mesh.clone(), &values, &self.peak_breaks())
    }

    /// `(P f)' = P(f'/T' - T'' f / T'^2)`, interpolated from nodal values.
    pub fn apply_derivative(&self, f: &SplineFunction) -> Result<SplineFunction> {
        if f.continuity() < Continuity::C1 {
            return Err(CuspError::Regularity { order: 1 });
        }
        let values = self.node_map(|j| {
            self.sum_over_preimages(j, |s| {
                let (v, d) = (eval_at(f, &s.pre, 0), eval_at(f, &s.pre, 1));
                (d / s.d1 - s.d2 * v / (s.d1 * s.d1)) * s.weight()
            })
        })?;
        SplineFunction::interpolate_segments(self.mesh.clone(), &values, &self.peak_breaks())
    }

    /// `(P f)'' = P(f''/T'^2 - 3 T'' f'/T'^3 + (3 T''^2/T'^4 - T'''/T'^3) f)`,
    /// interpolated from nodal values.
    pub fn apply_second(&self, f: &SplineFunction) -> Result<SplineFunction> {
        if f.continuity() < Continuity::C1 {
            return Err(CuspError::Regularity { order: 2 });
        }
        let values = self.node_map(|j| {
            self.sum_over_preimages(j, |s| {
                let v = eval_at(f, &s.pre, 0);
                let d = eval_at(f, &s.pre, 1);
                let dd = eval_at(f, &s.pre, 2);
                second_derivative_integrand(s, v, d, dd) * s.weight()
            })
        })?;
        SplineFunction::interpolate_segments(self.mesh.clone(), &values, &self.peak_breaks())
    }

    /// `P f(x)` at an arbitrary point, through fresh branch inverses.
    pub fn apply_at(&self, f: &SplineFunction, x: f64) -> Result<f64> {
        self.pointwise(x, |s| eval_at(f, &s.pre, 0) * s.weight())
    }

    /// `(P f)'(x)` at an arbitrary point.
    pub fn apply_derivative_at(&self, f: &SplineFunction, x: f64) -> Result<f64> {
        self.pointwise(x, |s| {
            let (v, d) = (eval_at(f, &s.pre, 0), eval_at(f, &s.pre, 1));
            (d / s.d1 - s.d2 * v / (s.d1 * s.d1)) * s.weight()
        })
    }

    fn pointwise(&self, x: f64, term: impl Fn(&BranchSample) -> f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(CuspError::Domain { x });
        }
        if x >= self.model.peak() {
            return Ok(0.0);
        }
        let mut acc = 0.0;
        for branch in Branch::BOTH {
            let pre = self.model.branch_inverse(branch, x)?;
            let s = BranchSample {
                pre,
                d1: self.model.branch_derivative(branch, pre.offset, 1),
                d2: self.model.branch_derivative(branch, pre.offset, 2),
                d3: self.model.branch_derivative(branch, pre.offset, 3),
            };
            acc += term(&s);
        }
        Ok(acc)
    }

    /// Nodal trace of `P f` as CSV with columns `node,value`.
    pub fn trace_csv(&self, f: &SplineFunction) -> Result<String> {
        let applied = self.apply(f)?;
        let mut s = String::from("node,value\n");
        for (x, v) in self.mesh.nodes().iter().zip(applied.node_values()) {
            let _ = writeln!(s, "{x:.16e},{v:.16e}");
        }
        Ok(s)
    }

    /// Ulam matrix on the panels of this context's mesh.
    pub fn ulam_matrix(&self) -> Result<UlamOperator> {
        UlamOperator::assemble(self)
    }
}

/// Integrand of the second derivative formula at one preimage, before the
/// Jacobian weight.
fn second_derivative_integrand(s: &BranchSample, v: f64, d: f64, dd: f64) -> f64 {
    let t1 = s.d1;
    let t1sq = t1 * t1;
    dd / t1sq - 3.0 * s.d2 * d / (t1sq * t1) + (3.0 * s.d2 * s.d2 / (t1sq * t1sq) - s.d3 / (t1sq * t1)) * v
}

/// Derivative of `f` of order `order` at a preimage, taken on the panel
/// on the preimage's side of the cusp.
pub fn eval_at(f: &SplineFunction, pre: &Preimage, order: u8) -> f64 {
    let mesh = f.mesh();
    let c = mesh.cusp();
    let mut i = mesh.locate(pre.point);
    match pre.branch {
        Branch::Left if mesh.nodes()[i] >= c && i > 0 => i -= 1,
        Branch::Right if mesh.nodes()[i + 1] <= c && i + 1 < mesh.panel_count() => i += 1,
        _ => {}
    }
    f.derivative_on_panel(i, pre.point, order)
}

/// Constants bounding the second-order inequality
/// `‖P f‖_{W^{2,p}} ≤ λ² ‖f‖_{W^{2,p}} + M₂ ‖f‖_{W^{1,p}}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SecondOrderConstants {
    pub lambda: f64,
    /// `(2λ)^{1-1/p}`, a bound for `‖P‖_{L^p → L^p}`.
    pub op_norm_bound: f64,
    /// `‖3 T''/T'^3‖_∞`.
    pub slope_coefficient: f64,
    /// `‖P |T''/T'^2|‖_{L^p}`.
    pub first_value_coefficient: f64,
    /// `‖P |3 T''^2/T'^4 - T'''/T'^3|‖_{L^p}`.
    pub second_value_coefficient: f64,
    /// `2^{1-1/p}`, the embedding constant of `W^{1,p}` into `L^∞`.
    pub embedding: f64,
    pub m2: f64,
}

/// Measures [`SecondOrderConstants`] for the context's map.
///
/// Value coefficients are measured after one application of `P` (i.e. as
/// `‖P|g|‖_p ‖f‖_∞`), since `3T''^2/T'^4` itself need not lie in `L^{2p}`.
pub fn second_order_constants(ctx: &OperatorContext, lambda: f64) -> Result<SecondOrderConstants> {
    let p = ctx.cfg.p;
    let model = ctx.model.as_ref();
    let coefficient = |b: Branch, d: f64| -> [f64; 3] {
        let t1 = model.branch_derivative(b, d, 1);
        let t2 = model.branch_derivative(b, d, 2);
        let t3 = model.branch_derivative(b, d, 3);
        [
            (3.0 * t2 / (t1 * t1 * t1)).abs(),
            (t2 / (t1 * t1)).abs(),
            (3.0 * t2 * t2 / t1.powi(4) - t3 / t1.powi(3)).abs(),
        ]
    };
    let mut slope_coefficient: f64 = 0.0;
    for b in Branch::BOTH {
        let len = model.branch_length(b);
        for j in 0..=4000 {
            let d = len * (j as f64 / 4000.0).max(1e-12).powi(4);
            slope_coefficient = slope_coefficient.max(coefficient(b, d)[0]);
        }
    }
    let first = ctx.apply_fn(|pre| coefficient(pre.branch, pre.offset)[1])?;
    let second = ctx.apply_fn(|pre| coefficient(pre.branch, pre.offset)[2])?;
    let first_value_coefficient = crate::function_space::lp_norm(&first, &ctx.cfg, p)?;
    let second_value_coefficient = crate::function_space::lp_norm(&second, &ctx.cfg, p)?;
    let op_norm_bound = (2.0 * lambda).powf(1.0 - 1.0 / p);
    let embedding = 2f64.powf(1.0 - 1.0 / p);
    let m2 = op_norm_bound
        + op_norm_bound * lambda
        + op_norm_bound * slope_coefficient
        + (first_value_coefficient + second_value_coefficient) * embedding;
    Ok(SecondOrderConstants {
        lambda,
        op_norm_bound,
        slope_coefficient,
        first_value_coefficient,
        second_value_coefficient,
        embedding,
        m2,
    })
}

/// Lower estimate of `sup_{‖f‖_{W^{1,p}} ≤ 1} ‖(P_0 - P_ε) f‖_{L^{2p}}`
/// by maximisation over a seeded corpus on `ctx0`'s mesh.
pub fn operator_gap_norm(
    ctx0: &OperatorContext,
    ctx_eps: &OperatorContext,
    trial_count: usize,
    seed: u64,
) -> Result<f64> {
    if trial_count < 50 {
        return Err(CuspError::Config(format!(
            "operator gap needs at least 50 trials, got {trial_count}"
        )));
    }
    let cfg = ctx0.cfg;
    let corpus = Corpus::new(ctx0.mesh.clone(), seed).mixed(trial_count)?;
    let ratios = corpus
        .par_iter()
        .map(|f| -> Result<f64> {
            let norm = sobolev_norm(f, &cfg, 1)?;
            let gap = lp_distance(&ctx0.apply(f)?, &ctx_eps.apply(f)?, &cfg, 2.0 * cfg.p)?;
            Ok(gap / norm)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}
