use std::fmt::Write as _;
use std::sync::Arc;

use super::mesh::GradedMesh;
use crate::error::{CuspError, Result};

/// Global smoothness of a piecewise cubic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Continuity {
    C0,
    C1,
    C2,
}

/// Piecewise cubic on a [`GradedMesh`]. Panel `i` stores local power-basis
/// coefficients `c0 + c1 t + c2 t^2 + c3 t^3` with `t = x - x_i`.
#[derive(Clone, Debug)]
pub struct SplineFunction {
    mesh: Arc<GradedMesh>,
    coeffs: Vec<[f64; 4]>,
    continuity: Continuity,
}

impl SplineFunction {
    pub fn from_panels(mesh: Arc<GradedMesh>, coeffs: Vec<[f64; 4]>, continuity: Continuity) -> Result<Self> {
        if coeffs.len() != mesh.panel_count() {
            return Err(CuspError::LengthMismatch {
                expected: mesh.panel_count(),
                found: coeffs.len(),
            });
        }
        Ok(Self {
            mesh,
            coeffs,
            continuity,
        })
    }

    pub fn constant(mesh: Arc<GradedMesh>, value: f64) -> Self {
        let coeffs = vec![[value, 0.0, 0.0, 0.0]; mesh.panel_count()];
        Self {
            mesh,
            coeffs,
            continuity: Continuity::C2,
        }
    }

    pub fn zero(mesh: Arc<GradedMesh>) -> Self {
        Self::constant(mesh, 0.0)
    }

    /// C1 cubic Hermite interpolant of nodal values and slopes.
    pub fn hermite(mesh: Arc<GradedMesh>, values: &[f64], slopes: &[f64]) -> Result<Self> {
        let n = mesh.nodes().len();
        for len in [values.len(), slopes.len()] {
            if len != n {
                return Err(CuspError::LengthMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        let coeffs = hermite_panels(mesh.nodes(), values, slopes);
        Ok(Self {
            mesh,
            coeffs,
            continuity: Continuity::C1,
        })
    }

    /// C2 not-a-knot cubic interpolant of nodal samples.
    pub fn interpolate(mesh: Arc<GradedMesh>, values: &[f64]) -> Result<Self> {
        Self::interpolate_segments(mesh, values, &[])
    }

    /// Independent not-a-knot interpolants on the segments delimited by the
    /// node indices in `breaks`; the result is only C0 across a break.
    pub fn interpolate_segments(mesh: Arc<GradedMesh>, values: &[f64], breaks: &[usize]) -> Result<Self> {
        let nodes = mesh.nodes();
        if values.len() != nodes.len() {
            return Err(CuspError::LengthMismatch {
                expected: nodes.len(),
                found: values.len(),
            });
        }
        if nodes.len() < 4 {
            return Err(CuspError::TooFewNodes(nodes.len()));
        }
        let mut cuts: Vec<usize> = breaks
            .iter()
            .copied()
            .filter(|&b| b > 0 && b + 1 < nodes.len())
            .collect();
        cuts.sort_unstable();
        cuts.dedup();
        let continuity = if cuts.is_empty() {
            Continuity::C2
        } else {
            Continuity::C0
        };
        let mut bounds = vec![0];
        bounds.extend(&cuts);
        bounds.push(nodes.len() - 1);

        let mut slopes = vec![0.0; nodes.len()];
        let mut coeffs = Vec::with_capacity(nodes.len() - 1);
        for w in bounds.windows(2) {
            let (s, e) = (w[0], w[1]);
            let seg_slopes = not_a_knot_slopes(&nodes[s..=e], &values[s..=e]);
            slopes[s..=e].copy_from_slice(&seg_slopes);
            coeffs.extend(hermite_panels(&nodes[s..=e], &values[s..=e], &seg_slopes));
        }
        Ok(Self {
            mesh,
            coeffs,
            continuity,
        })
    }

    /// Samples `f` at the mesh nodes and interpolates.
    pub fn from_fn(mesh: Arc<GradedMesh>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values: Vec<f64> = mesh.nodes().iter().map(|&x| f(x)).collect();
        Self::interpolate(mesh, &values)
    }

    pub fn mesh(&self) -> &Arc<GradedMesh> {
        &self.mesh
    }

    pub fn coefficients(&self) -> &[[f64; 4]] {
        &self.coeffs
    }

    pub fn continuity(&self) -> Continuity {
        self.continuity
    }

    pub fn with_continuity(mut self, continuity: Continuity) -> Self {
        self.continuity = continuity;
        self
    }

    pub fn value(&self, x: f64) -> f64 {
        self.derivative(x, 0)
    }

    /// Panel-wise derivative of order 0..=3; at a node the panel on the
    /// right is used.
    pub fn derivative(&self, x: f64, order: u8) -> f64 {
        let i = self.mesh.locate(x);
        let t = x.clamp(0.0, 1.0) - self.mesh.nodes()[i];
        eval_local(&self.coeffs[i], t, order)
    }

    /// Derivative evaluated on a given panel (used to take one-sided values).
    pub fn derivative_on_panel(&self, panel: usize, x: f64, order: u8) -> f64 {
        let t = x - self.mesh.nodes()[panel];
        eval_local(&self.coeffs[panel], t, order)
    }

    /// `f'` as a spline; needs at least C1 so the result is continuous.
    pub fn derivative_function(&self) -> Result<Self> {
        let continuity = match self.continuity {
            Continuity::C0 => return Err(CuspError::Regularity { order: 1 }),
            Continuity::C1 => Continuity::C0,
            Continuity::C2 => Continuity::C1,
        };
        let coeffs = self
            .coeffs
            .iter()
            .map(|c| [c[1], 2.0 * c[2], 3.0 * c[3], 0.0])
            .collect();
        Ok(Self {
            mesh: self.mesh.clone(),
            coeffs,
            continuity,
        })
    }

    pub fn node_values(&self) -> Vec<f64> {
        let nodes = self.mesh.nodes();
        let mut out: Vec<f64> = self.coeffs.iter().map(|c| c[0]).collect();
        let last = self.coeffs.len() - 1;
        out.push(eval_local(&self.coeffs[last], nodes[last + 1] - nodes[last], 0));
        out
    }

    /// Exact integral over [0, 1].
    pub fn integral(&self) -> f64 {
        self.coeffs
            .iter()
            .zip(self.mesh.nodes().windows(2))
            .map(|(c, w)| {
                let h = w[1] - w[0];
                h * (c[0] + h * (c[1] / 2.0 + h * (c[2] / 3.0 + h * c[3] / 4.0)))
            })
            .sum()
    }

    pub fn min_value(&self) -> f64 {
        let mut m = f64::INFINITY;
        for (c, w) in self.coeffs.iter().zip(self.mesh.nodes().windows(2)) {
            let h = w[1] - w[0];
            m = m.min(c[0]).min(eval_local(c, h, 0));
            // interior critical points
            let (a, b, cc) = (3.0 * c[3], 2.0 * c[2], c[1]);
            let mut roots = Vec::with_capacity(2);
            if a.abs() > 1e-300 {
                let disc = b * b - 4.0 * a * cc;
                if disc >= 0.0 {
                    let sq = disc.sqrt();
                    roots.push((-b + sq) / (2.0 * a));
                    roots.push((-b - sq) / (2.0 * a));
                }
            } else if b.abs() > 1e-300 {
                roots.push(-cc / b);
            }
            for t in roots {
                if t > 0.0 && t < h {
                    m = m.min(eval_local(c, t, 0));
                }
            }
        }
        m
    }

    fn same_mesh(&self, other: &Self) -> Result<()> {
        if Arc::ptr_eq(&self.mesh, &other.mesh) || self.mesh.nodes() == other.mesh.nodes() {
            Ok(())
        } else {
            Err(CuspError::MeshMismatch)
        }
    }

    pub fn scale(&self, alpha: f64) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .map(|c| [alpha * c[0], alpha * c[1], alpha * c[2], alpha * c[3]])
            .collect();
        Self {
            mesh: self.mesh.clone(),
            coeffs,
            continuity: self.continuity,
        }
    }

    /// `self + alpha * other` on a shared mesh.
    pub fn axpy(&self, alpha: f64, other: &Self) -> Result<Self> {
        self.same_mesh(other)?;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| {
                [
                    a[0] + alpha * b[0],
                    a[1] + alpha * b[1],
                    a[2] + alpha * b[2],
                    a[3] + alpha * b[3],
                ]
            })
            .collect();
        Ok(Self {
            mesh: self.mesh.clone(),
            coeffs,
            continuity: self.continuity.min(other.continuity),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    pub fn add_constant(&self, value: f64) -> Self {
        let mut out = self.clone();
        for c in &mut out.coeffs {
            c[0] += value;
        }
        out
    }

    /// `f - ∫f`, the projection onto zero-mean functions.
    pub fn mean_zero_project(&self) -> Self {
        self.add_constant(-self.integral())
    }

    /// Same function on a mesh with extra nodes (exact re-expansion).
    pub fn refine(&self, mesh: Arc<GradedMesh>) -> Result<Self> {
        let old = self.mesh.nodes();
        let new = mesh.nodes();
        let mut coeffs = Vec::with_capacity(new.len() - 1);
        for w in new.windows(2) {
            let i = self.mesh.locate(0.5 * (w[0] + w[1]));
            if w[0] < old[i] - 1e-15 || w[1] > old[i + 1] + 1e-15 {
                return Err(CuspError::Mesh("refinement must contain the original nodes".into()));
            }
            coeffs.push(taylor_shift(&self.coeffs[i], w[0] - old[i]));
        }
        Ok(Self {
            mesh,
            coeffs,
            continuity: self.continuity,
        })
    }

    /// CSV with columns `panel_left,panel_right,c0,c1,c2,c3`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("panel_left,panel_right,c0,c1,c2,c3\n");
        for (c, w) in self.coeffs.iter().zip(self.mesh.nodes().windows(2)) {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                w[0], w[1], c[0], c[1], c[2], c[3]
            );
        }
        s
    }

    /// Parses the output of [`SplineFunction::to_csv`].
    pub fn from_csv(text: &str, cusp: f64, peak: f64, continuity: Continuity) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut coeffs = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| CuspError::Parse {
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
            if fields.len() != 6 {
                return Err(CuspError::Parse {
                    line: lineno + 1,
                    message: format!("expected 6 columns, found {}", fields.len()),
                });
            }
            if nodes.is_empty() {
                nodes.push(fields[0]);
            }
            nodes.push(fields[1]);
            coeffs.push([fields[2], fields[3], fields[4], fields[5]]);
        }
        let mesh = GradedMesh::from_nodes(nodes, cusp, peak, 1.0)?;
        Self::from_panels(Arc::new(mesh), coeffs, continuity)
    }
}

pub(crate) fn eval_local(c: &[f64; 4], t: f64, order: u8) -> f64 {
    match order {
        0 => c[0] + t * (c[1] + t * (c[2] + t * c[3])),
        1 => c[1] + t * (2.0 * c[2] + 3.0 * t * c[3]),
        2 => 2.0 * c[2] + 6.0 * t * c[3],
        3 => 6.0 * c[3],
        _ => 0.0,
    }
}

fn taylor_shift(c: &[f64; 4], tau: f64) -> [f64; 4] {
    [
        eval_local(c, tau, 0),
        eval_local(c, tau, 1),
        0.5 * eval_local(c, tau, 2),
        c[3],
    ]
}

fn hermite_panels(nodes: &[f64], values: &[f64], slopes: &[f64]) -> Vec<[f64; 4]> {
    (0..nodes.len() - 1)
        .map(|i| {
            let h = nodes[i + 1] - nodes[i];
            let delta = (values[i + 1] - values[i]) / h;
            let (s0, s1) = (slopes[i], slopes[i + 1]);
            [
                values[i],
                s0,
                (3.0 * delta - 2.0 * s0 - s1) / h,
                (s0 + s1 - 2.0 * delta) / (h * h),
            ]
        })
        .collect()
}

/// Nodal slopes of the not-a-knot cubic interpolant; falls back to the
/// interpolating line or parabola for two or three nodes.
fn not_a_knot_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let dx: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let slope: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / dx[i]).collect();
    match n {
        2 => return vec![slope[0]; 2],
        3 => {
            // parabola through three points
            let c2 = (slope[1] - slope[0]) / (x[2] - x[0]);
            return vec![slope[0] - c2 * dx[0], slope[0] + c2 * dx[0], slope[1] + c2 * dx[1]];
        }
        _ => {}
    }
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for i in 1..n - 1 {
        sub[i] = dx[i];
        diag[i] = 2.0 * (dx[i - 1] + dx[i]);
        sup[i] = dx[i - 1];
        rhs[i] = 3.0 * (dx[i] * slope[i - 1] + dx[i - 1] * slope[i]);
    }
    let d0 = x[2] - x[0];
    diag[0] = dx[1];
    sup[0] = d0;
    rhs[0] = ((dx[0] + 2.0 * d0) * dx[1] * slope[0] + dx[0] * dx[0] * slope[1]) / d0;
    let dn = x[n - 1] - x[n - 3];
    diag[n - 1] = dx[n - 3];
    sub[n - 1] = dn;
    rhs[n - 1] = (dx[n - 2] * dx[n - 2] * slope[n - 3] + (2.0 * dn + dx[n - 2]) * dx[n - 3] * slope[n - 2]) / dn;
    solve_tridiagonal(&sub, &diag, &sup, &rhs)
}

/// Thomas algorithm; `sub[0]` and `sup[n-1]` are ignored.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / m } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
    }
    let mut out = vec![0.0; n];
    out[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        out[i] = d[i] - c[i] * out[i + 1];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mesh(n: usize) -> Arc<GradedMesh> {
        Arc::new(GradedMesh::new(n, 2.0, 0.5, 0.9).unwrap())
    }

    #[test]
    fn constant_samples() {
        let m = mesh(32);
        let f = SplineFunction::interpolate(m.clone(), &vec![1.0; m.nodes().len()]).unwrap();
        for &x in &[0.0, 0.1, 0.5, 0.77, 1.0] {
            assert_abs_diff_eq!(f.value(x), 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(f.derivative(x, 1), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn linear_samples_have_unit_slope() {
        let m = mesh(40);
        let f = SplineFunction::from_fn(m, |x| x).unwrap();
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            assert_abs_diff_eq!(f.derivative(x, 1), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn reproduces_cubics_exactly() {
        for n in [4, 17, 64] {
            let m = Arc::new(GradedMesh::uniform(n, 0.5, 0.9).unwrap());
            let f = SplineFunction::from_fn(m, |x| x * x * x - 0.3 * x).unwrap();
            for i in 0..=97 {
                let x = i as f64 / 97.0;
                assert_abs_diff_eq!(f.value(x), x * x * x - 0.3 * x, epsilon = 1e-13);
                assert_abs_diff_eq!(f.derivative(x, 2), 6.0 * x, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn derivative_matches_central_differences() {
        let m = mesh(64);
        let f = SplineFunction::from_fn(m.clone(), |x| (3.0 * x).sin() + x * x).unwrap();
        let h = 1e-6;
        for w in m.nodes().windows(2) {
            let x = 0.5 * (w[0] + w[1]);
            if w[1] - w[0] < 1e-4 {
                continue;
            }
            let fd = (f.value(x + h) - f.value(x - h)) / (2.0 * h);
            assert!((fd - f.derivative(x, 1)).abs() < 1e-6);
        }
    }

    #[test]
    fn too_few_nodes_rejected() {
        let m = Arc::new(GradedMesh::from_nodes(vec![0.0, 0.5, 1.0], 0.5, 1.0, 1.0).unwrap());
        let err = SplineFunction::interpolate(m, &[0.0, 1.0, 2.0]).unwrap_err();
        assert!(matches!(err, CuspError::TooFewNodes(3)));
    }

    #[test]
    fn length_mismatch() {
        let m = mesh(16);
        assert!(matches!(
            SplineFunction::interpolate(m, &[1.0, 2.0]),
            Err(CuspError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn mean_zero_projection() {
        let m = mesh(32);
        let one = SplineFunction::constant(m.clone(), 1.0).mean_zero_project();
        assert_abs_diff_eq!(one.value(0.3), 0.0, epsilon = 1e-15);
        let x = SplineFunction::from_fn(m.clone(), |x| x).unwrap();
        let p = x.mean_zero_project();
        assert_abs_diff_eq!(p.value(0.8), 0.3, epsilon = 1e-13);
        assert_abs_diff_eq!(p.integral(), 0.0, epsilon = 1e-13);
        let pp = p.mean_zero_project();
        assert_abs_diff_eq!(pp.value(0.21), p.value(0.21), epsilon = 1e-13);
    }

    #[test]
    fn segments_break_continuity() {
        let m = mesh(64);
        let ib = m.peak_index();
        let values: Vec<f64> = m
            .nodes()
            .iter()
            .map(|&x| if x <= 0.9 { (0.9 - x).powi(2) } else { 0.0 })
            .collect();
        let f = SplineFunction::interpolate_segments(m.clone(), &values, &[ib]).unwrap();
        assert_eq!(f.continuity(), Continuity::C0);
        assert_abs_diff_eq!(f.value(0.95), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.value(0.4), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn refine_is_exact() {
        let m = mesh(16);
        let f = SplineFunction::from_fn(m.clone(), |x| (5.0 * x).cos()).unwrap();
        let mut nodes = m.nodes().to_vec();
        nodes.extend([0.123, 0.456, 0.789]);
        let fine = Arc::new(GradedMesh::from_nodes(nodes, 0.5, 0.9, 2.0).unwrap());
        let g = f.refine(fine).unwrap();
        for i in 0..=50 {
            let x = i as f64 / 50.0;
            assert_abs_diff_eq!(f.value(x), g.value(x), epsilon = 1e-13);
        }
    }

    #[test]
    fn csv_roundtrip() {
        let m = mesh(16);
        let f = SplineFunction::from_fn(m, |x| (2.0 * x).exp()).unwrap();
        let g = SplineFunction::from_csv(&f.to_csv(), 0.5, 0.9, Continuity::C2).unwrap();
        assert_eq!(f.coefficients(), g.coefficients());
        assert_eq!(f.mesh().nodes(), g.mesh().nodes());
    }

    #[test]
    fn min_value_finds_interior_minimum() {
        let m = Arc::new(GradedMesh::uniform(4, 0.5, 1.0).unwrap());
        let f = SplineFunction::from_fn(m, |x| (x - 0.3) * (x - 0.3) - 0.01).unwrap();
        assert_abs_diff_eq!(f.min_value(), -0.01, epsilon = 1e-12);
    }
}
