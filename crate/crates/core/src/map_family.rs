//! Two-branch interval maps with a power-law cusp, and the cusp tent family
//!
//! ```text
//! T_ε(x) = (1-ε) (3/4 (2x)    + 1/4 (1 - (1-2x)^{1/k}))   on [0, 1/2)
//! T_ε(x) = (1-ε) (3/4 (2-2x)  + 1/4 (1 - (2x-1)^{1/k}))   on (1/2, 1]
//! ```
//!
//! Every branch quantity is parametrised by the distance `d > 0` from the
//! cusp instead of by `x`. Near the cusp `T` changes by `d^{1/k}`, so `x`
//! itself cannot resolve the top of the range in double precision while
//! `d` can.

use std::fmt::Debug;
use std::sync::Arc;

use crate::error::{CuspError, Result};
use crate::function_space::{GaussRule, NormConfig};

/// Branch of a two-branch map: `Left` lives on `[0, c)`, `Right` on `(c, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Left,
    Right,
}

impl Branch {
    pub const BOTH: [Branch; 2] = [Branch::Left, Branch::Right];

    /// Abscissa at distance `offset` from the cusp.
    pub fn point(self, cusp: f64, offset: f64) -> f64 {
        match self {
            Branch::Left => cusp - offset,
            Branch::Right => cusp + offset,
        }
    }

    /// dx/dd along the branch.
    pub fn orientation(self) -> f64 {
        match self {
            Branch::Left => -1.0,
            Branch::Right => 1.0,
        }
    }
}

/// Which ε-derivative to take: of `T_ε` itself or of `T_ε'`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpsQuantity {
    Value,
    Slope,
}

/// A point of `T^{-1}(y)` together with its branch and cusp distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preimage {
    pub branch: Branch,
    pub offset: f64,
    pub point: f64,
}

/// Piecewise two-branch interval map with a cusp at `c`.
///
/// Implementors supply branch quantities as functions of the cusp distance
/// `d ∈ (0, branch_length]`; `branch_value` and the `Value` ε-derivative
/// must also accept `d = 0` and return the one-sided limit there.
pub trait MapModel: Debug + Send + Sync {
    fn cusp(&self) -> f64;
    /// Common one-sided limit `a_ε` of `T` at the cusp.
    fn peak(&self) -> f64;
    /// Singularity exponent β of `|T'| ~ |x - c|^β`.
    fn beta(&self) -> f64;

    fn branch_value(&self, branch: Branch, offset: f64) -> f64;
    /// x-derivative of order 1..=3 at `c ∓ offset`.
    fn branch_derivative(&self, branch: Branch, offset: f64, order: u8) -> f64;
    fn branch_eps_derivative(&self, branch: Branch, offset: f64, which: EpsQuantity) -> f64;

    fn branch_length(&self, branch: Branch) -> f64 {
        match branch {
            Branch::Left => self.cusp(),
            Branch::Right => 1.0 - self.cusp(),
        }
    }

    /// Branch and cusp distance of `x`; `None` at the cusp itself.
    fn locate(&self, x: f64) -> Result<Option<(Branch, f64)>> {
        if !(0.0..=1.0).contains(&x) {
            return Err(CuspError::Domain { x });
        }
        let c = self.cusp();
        Ok(if x < c {
            Some((Branch::Left, c - x))
        } else if x > c {
            Some((Branch::Right, x - c))
        } else {
            None
        })
    }

    /// `T(x)`; the cusp maps to the peak value.
    fn evaluate(&self, x: f64) -> Result<f64> {
        Ok(match self.locate(x)? {
            Some((b, d)) => self.branch_value(b, d),
            None => self.peak(),
        })
    }

    fn derivative(&self, x: f64, order: u8) -> Result<f64> {
        if !(1..=3).contains(&order) {
            return Err(CuspError::InvalidOrder(order));
        }
        match self.locate(x)? {
            Some((b, d)) => Ok(self.branch_derivative(b, d, order)),
            None => Err(CuspError::Singularity { cusp: self.cusp() }),
        }
    }

    fn eps_derivative(&self, x: f64, which: EpsQuantity) -> Result<f64> {
        match (self.locate(x)?, which) {
            (Some((b, d)), _) => Ok(self.branch_eps_derivative(b, d, which)),
            (None, EpsQuantity::Value) => Ok(self.branch_eps_derivative(Branch::Left, 0.0, which)),
            (None, EpsQuantity::Slope) => Err(CuspError::Singularity { cusp: self.cusp() }),
        }
    }

    /// The unique `x` on `branch` with `T(x) = y`.
    ///
    /// Bisection on the cusp distance down to a relative width of 1e-13,
    /// then two Newton steps that are kept only if they stay inside the
    /// final bracket.
    fn branch_inverse(&self, branch: Branch, y: f64) -> Result<Preimage> {
        let peak = self.peak();
        let len = self.branch_length(branch);
        let c = self.cusp();
        if !(0.0..=peak).contains(&y) {
            return Err(CuspError::Range { y, peak });
        }
        let done = |offset: f64| Preimage {
            branch,
            offset,
            point: branch.point(c, offset),
        };
        if y == peak {
            return Ok(done(0.0));
        }
        if y == 0.0 {
            return Ok(done(len));
        }
        // φ(d) = T(c ∓ d) runs from the peak at d = 0 down to 0 at d = len.
        let phi = |d: f64| self.branch_value(branch, d) - y;
        let (mut lo, mut hi) = (0.0f64, len);
        let mut iterations = 0;
        while hi - lo > 1e-13 * hi && iterations < 2200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if phi(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            iterations += 1;
        }
        let mut d = 0.5 * (lo + hi);
        for _ in 0..2 {
            let slope = branch.orientation() * self.branch_derivative(branch, d, 1);
            if slope == 0.0 || !slope.is_finite() {
                break;
            }
            let next = d - phi(d) / slope;
            if next > lo && next < hi && phi(next).abs() <= phi(d).abs() {
                d = next;
            }
        }
        Ok(done(d))
    }
}

/// The cusp tent family with root order `k` and perturbation `ε`.
///
/// `p` is the Lebesgue exponent of the function spaces used downstream; it
/// only enters through the admissibility constraint `k > 2p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CuspTentFamily {
    k: u32,
    eps: f64,
    p: f64,
}

impl CuspTentFamily {
    pub const MAX_EPS: f64 = 0.1;

    pub fn new(k: u32, eps: f64, p: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(CuspError::Config(format!("p must exceed 1, got {p}")));
        }
        if k < 3 {
            return Err(CuspError::Config(format!("k must be at least 3, got {k}")));
        }
        if f64::from(k) <= 2.0 * p {
            return Err(CuspError::Config(format!("k = {k} must exceed 2p = {}", 2.0 * p)));
        }
        if !(0.0..Self::MAX_EPS).contains(&eps) {
            return Err(CuspError::Config(format!("eps must lie in [0, 0.1), got {eps}")));
        }
        Ok(Self { k, eps, p })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        Self::new(self.k, eps, self.p)
    }

    pub fn shared(self) -> Arc<dyn MapModel> {
        Arc::new(self)
    }

    /// Lower bound `(27k+9)/(20k)` on `|T'|`, valid for every ε < 1/10.
    pub fn expansion_bound(&self) -> f64 {
        let k = f64::from(self.k);
        (27.0 * k + 9.0) / (20.0 * k)
    }

    fn scale(&self) -> f64 {
        1.0 - self.eps
    }

    /// `(u, u^{1/k})` with `u = 2d = |1 - 2x|`.
    fn root(&self, offset: f64) -> (f64, f64) {
        let u = 2.0 * offset;
        (u, u.powf(1.0 / f64::from(self.k)))
    }

    fn unscaled_value(&self, offset: f64) -> f64 {
        let (u, r) = self.root(offset);
        1.0 - 0.75 * u - 0.25 * r
    }

    fn unscaled_derivative(&self, branch: Branch, offset: f64, order: u8) -> f64 {
        let k = f64::from(self.k);
        let (u, r) = self.root(offset);
        // the increasing branch is on the left
        let sign = -branch.orientation();
        match order {
            1 => sign * (1.5 + r / (2.0 * k * u)),
            2 => (k - 1.0) / (k * k) * r / (u * u),
            3 => sign * 2.0 * (k - 1.0) * (2.0 * k - 1.0) / (k * k * k) * r / (u * u * u),
            _ => f64::NAN,
        }
    }
}

impl MapModel for CuspTentFamily {
    fn cusp(&self) -> f64 {
        0.5
    }

    fn peak(&self) -> f64 {
        self.scale()
    }

    fn beta(&self) -> f64 {
        let k = f64::from(self.k);
        (1.0 - k) / k
    }

    fn branch_value(&self, _branch: Branch, offset: f64) -> f64 {
        self.scale() * self.unscaled_value(offset)
    }

    fn branch_derivative(&self, branch: Branch, offset: f64, order: u8) -> f64 {
        self.scale() * self.unscaled_derivative(branch, offset, order)
    }

    fn branch_eps_derivative(&self, branch: Branch, offset: f64, which: EpsQuantity) -> f64 {
        // T_ε = (1-ε) T_0, so ∂_ε T_ε = -T_0 and ∂_ε T_ε' = -T_0'.
        match which {
            EpsQuantity::Value => -self.unscaled_value(offset),
            EpsQuantity::Slope => -self.unscaled_derivative(branch, offset, 1),
        }
    }
}

/// Pass/fail per standing assumption on the map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AssumptionVerdicts {
    /// A1: each branch is one-to-one.
    pub branches_monotone: bool,
    /// A2: `T(0) = T(1) = 0` and both one-sided limits at the cusp equal the peak.
    pub endpoint_values: bool,
    /// A3: `C^3` away from the cusp.
    pub piecewise_c3: bool,
    /// A4: `inf |T'| > 1`.
    pub uniform_expansion: bool,
    /// A5: topological mixing (heuristic, see [`MixingDiagnostic`]).
    pub mixing: bool,
    /// A6: `|T'| / |x-c|^β` has a finite positive limit and β is admissible.
    pub first_order_singularity: bool,
    /// A7: the same for `T''` and `T'''` with exponents β-1, β-2.
    pub higher_order_singularity: bool,
    /// A8: the scaled derivatives are bounded above and `|T'|/|x-c|^β` below.
    pub derivative_bounds: bool,
}

impl AssumptionVerdicts {
    pub fn as_array(&self) -> [bool; 8] {
        [
            self.branches_monotone,
            self.endpoint_values,
            self.piecewise_c3,
            self.uniform_expansion,
            self.mixing,
            self.first_order_singularity,
            self.higher_order_singularity,
            self.derivative_bounds,
        ]
    }

    pub fn all(&self) -> bool {
        self.as_array().iter().all(|&v| v)
    }
}

/// Outcome of the mixing heuristic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixingDiagnostic {
    /// Modulus of the second Ulam eigenvalue.
    pub second_modulus: f64,
    /// Largest number of iterations any dyadic interval needed to cover the
    /// dynamical core; `None` if some interval failed within the budget.
    pub cover_iterations: Option<usize>,
}

impl MixingDiagnostic {
    pub const MAX_COVER_ITERATIONS: usize = 60;

    pub fn passes(&self) -> bool {
        self.second_modulus < 1.0 - 1e-3 && self.cover_iterations.is_some()
    }
}

/// Measured constants of the standing assumptions for one map.
#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionAudit {
    pub beta: f64,
    pub beta_admissible: bool,
    /// Measured `inf |T'|`.
    pub theta_hat: f64,
    /// `1 / theta_hat`, the contraction constant of the first-order inequality.
    pub lambda_hat: f64,
    /// Measured `‖T''/(T')^2‖_{L^{2p}}`.
    pub m_hat: f64,
    /// Limits of `|T^{(i)}| / |x-c|^{β-i+1}` for i = 1, 2, 3, as `[left, right]`.
    pub singular_limits: [[f64; 2]; 3],
    /// Fitted log-log slopes of `|T^{(i)}|` against `|x-c|`.
    pub fitted_exponents: [[f64; 2]; 3],
    pub a8_sup: f64,
    pub a8_inf: f64,
    pub mixing: MixingDiagnostic,
    pub verdicts: AssumptionVerdicts,
}

/// Measures the standing assumptions of `model` on `grid_size` samples per
/// branch plus a dyadic approach sequence toward the cusp.
pub fn audit_assumptions(model: &Arc<dyn MapModel>, p: f64, grid_size: usize) -> Result<AssumptionAudit> {
    if grid_size < 1000 {
        return Err(CuspError::Config(format!(
            "audit grid needs at least 1000 points, got {grid_size}"
        )));
    }
    let cfg = NormConfig::new(p)?;
    let m = model.as_ref();
    let beta = m.beta();
    let beta_admissible = beta > -1.0 && beta < (1.0 - 2.0 * p) / (2.0 * p);
    let peak = m.peak();

    let mut monotone = true;
    let mut c3 = true;
    let mut theta = f64::INFINITY;
    let mut a8_sup: f64 = 0.0;
    let mut a8_inf = f64::INFINITY;
    let mut singular_limits = [[0.0; 2]; 3];
    let mut fitted_exponents = [[0.0; 2]; 3];
    let mut first_ok = beta_admissible;
    let mut higher_ok = true;
    let mut endpoints_ok = m.evaluate(0.0)?.abs() <= 1e-12 && m.evaluate(1.0)?.abs() <= 1e-12;

    for (side, branch) in Branch::BOTH.into_iter().enumerate() {
        let len = m.branch_length(branch);
        let uniform: Vec<f64> = (1..=grid_size).map(|i| len * i as f64 / grid_size as f64).collect();
        let dyadic: Vec<f64> = (1..=40).map(|j| len * 0.5f64.powi(j)).collect();

        // A1: strictly monotone values, derivative of one sign.
        let values: Vec<f64> = uniform.iter().map(|&d| m.branch_value(branch, d)).collect();
        let decreasing = values.windows(2).all(|w| w[1] < w[0]);
        let increasing = values.windows(2).all(|w| w[1] > w[0]);
        let slope_sign = m.branch_derivative(branch, uniform[0], 1).signum();
        let sign_stable = uniform
            .iter()
            .chain(&dyadic)
            .all(|&d| m.branch_derivative(branch, d, 1).signum() == slope_sign);
        monotone &= (decreasing || increasing) && sign_stable && slope_sign != 0.0;

        // A2: one-sided limit at the cusp.
        let gaps: Vec<f64> = dyadic
            .iter()
            .map(|&d| (m.branch_value(branch, d) - peak).abs())
            .collect();
        endpoints_ok &= (m.branch_value(branch, 0.0) - peak).abs() <= 1e-12
            && gaps.windows(2).all(|w| w[1] <= w[0])
            && gaps[gaps.len() - 1] < 1e-2;

        // A3: analytic derivatives agree with differences of the order below.
        for &d in uniform.iter().step_by((grid_size / 50).max(1)) {
            if d < 1e-2 || d > len - 1e-2 {
                continue;
            }
            for order in 1..=3u8 {
                let h = 1e-5;
                let lower = |dd: f64| {
                    if order == 1 {
                        m.branch_value(branch, dd)
                    } else {
                        m.branch_derivative(branch, dd, order - 1)
                    }
                };
                // d/dx = orientation * d/dd
                let fd = branch.orientation() * (lower(d + h) - lower(d - h)) / (2.0 * h);
                let exact = m.branch_derivative(branch, d, order);
                c3 &= exact.is_finite() && (fd - exact).abs() <= 1e-5 * exact.abs().max(1.0);
            }
        }

        // A4 and A8 over every sample.
        for &d in uniform.iter().chain(&dyadic) {
            let t1 = m.branch_derivative(branch, d, 1).abs();
            theta = theta.min(t1);
            a8_inf = a8_inf.min(t1 / d.powf(beta));
            for i in 0..3u8 {
                let ti = m.branch_derivative(branch, d, i + 1).abs();
                a8_sup = a8_sup.max(ti / d.powf(beta - f64::from(i)));
            }
        }

        // A6/A7: limits along d_j = 2^{-j}, j = 10..=40.
        let approach: Vec<f64> = (10..=40).map(|j| 0.5f64.powi(j)).collect();
        for order in 1..=3u8 {
            let exponent = beta - f64::from(order) + 1.0;
            let ratios: Vec<f64> = approach
                .iter()
                .map(|&d| m.branch_derivative(branch, d, order).abs() / d.powf(exponent))
                .collect();
            let limit = aitken_limit(&ratios);
            let last = ratios[ratios.len() - 1];
            let converged = limit.is_finite() && limit > 0.0 && ((last - limit) / limit).abs() < 1e-2;
            singular_limits[usize::from(order) - 1][side] = limit;
            fitted_exponents[usize::from(order) - 1][side] = loglog_slope(
                &approach[10..],
                &approach[10..]
                    .iter()
                    .map(|&d| m.branch_derivative(branch, d, order).abs())
                    .collect::<Vec<_>>(),
            );
            if order == 1 {
                let blows_up = m.branch_derivative(branch, approach[approach.len() - 1], 1).abs()
                    > m.branch_derivative(branch, approach[0], 1).abs();
                first_ok &= converged && blows_up;
            } else {
                higher_ok &= converged;
            }
        }
    }

    let m_hat = distortion_norm(m, &cfg)?;
    let mixing = crate::spectral::mixing_diagnostic(model, 256)?;
    let verdicts = AssumptionVerdicts {
        branches_monotone: monotone,
        endpoint_values: endpoints_ok,
        piecewise_c3: c3,
        uniform_expansion: theta > 1.0,
        mixing: mixing.passes(),
        first_order_singularity: first_ok,
        higher_order_singularity: higher_ok,
        derivative_bounds: a8_sup.is_finite() && a8_inf > 0.0 && m_hat.is_finite(),
    };
    Ok(AssumptionAudit {
        beta,
        beta_admissible,
        theta_hat: theta,
        lambda_hat: 1.0 / theta,
        m_hat,
        singular_limits,
        fitted_exponents,
        a8_sup,
        a8_inf,
        mixing,
        verdicts,
    })
}

/// `‖T''/(T')^2‖_{L^{2p}}`, integrated branch-wise in the cusp distance.
pub fn distortion_norm(model: &dyn MapModel, cfg: &NormConfig) -> Result<f64> {
    let e = 2.0 * cfg.p;
    let rule = GaussRule::new(cfg.quadrature_order);
    let mut total = 0.0;
    for branch in Branch::BOTH {
        let len = model.branch_length(branch);
        total += rule.integrate_endpoint_singular(len, cfg.subdivision_depth, |d| {
            let t1 = model.branch_derivative(branch, d, 1);
            (model.branch_derivative(branch, d, 2) / (t1 * t1)).abs().powf(e)
        })?;
    }
    Ok(total.powf(1.0 / e))
}

/// Aitken Δ² extrapolation from the last three terms of a sequence.
fn aitken_limit(seq: &[f64]) -> f64 {
    let n = seq.len();
    let (a, b, c) = (seq[n - 3], seq[n - 2], seq[n - 1]);
    let denom = (c - b) - (b - a);
    if denom.abs() <= 1e-300 || !denom.is_finite() {
        c
    } else {
        c - (c - b) * (c - b) / denom
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub(crate) fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
