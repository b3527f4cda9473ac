use std::fmt::Write as _;
use std::sync::Arc;

use super::OperatorContext;
use crate::error::{CuspError, Result};
use crate::function_space::{GradedMesh, NormConfig, SplineFunction};
use crate::map_family::Branch;

/// Ulam discretisation of the transfer operator on the panels of a mesh.
///
/// Acts on cell masses: entry `(j, i)` is `m(A_i ∩ T^{-1} A_j) / m(A_i)`,
/// so every column sums to one. Stored row-compressed.
#[derive(Clone, Debug)]
pub struct UlamOperator {
    mesh: Arc<GradedMesh>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl UlamOperator {
    pub(super) fn assemble(ctx: &OperatorContext) -> Result<Self> {
        let mesh = ctx.mesh().clone();
        let n = mesh.panel_count();
        if n < 32 {
            return Err(CuspError::Mesh(format!("Ulam matrix needs at least 32 cells, got {n}")));
        }
        let nodes = mesh.nodes();
        let c = mesh.cusp();
        let ic = mesh.cusp_index();
        let ip = mesh.peak_index();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];

        for (side, branch) in Branch::BOTH.into_iter().enumerate() {
            // source cells on this branch as ascending offset intervals
            let mut src: Vec<(f64, f64, usize)> = match branch {
                Branch::Left => (0..ic).map(|i| (c - nodes[i + 1], c - nodes[i], i)).collect(),
                Branch::Right => (ic..n).map(|i| (nodes[i] - c, nodes[i + 1] - c, i)).collect(),
            };
            src.sort_by(|a, b| a.0.total_cmp(&b.0));
            // destination cells below the peak, by preimage offset
            let offset = |j: usize| -> f64 {
                if j == ip {
                    0.0
                } else {
                    ctx.samples()[j][side].map(|s| s.pre.offset).unwrap_or(0.0)
                }
            };
            let mut dst: Vec<(f64, f64, usize)> = (0..ip)
                .map(|j| {
                    let (a, b) = (offset(j), offset(j + 1));
                    (a.min(b), a.max(b), j)
                })
                .collect();
            dst.sort_by(|a, b| a.0.total_cmp(&b.0));

            let (mut s, mut d) = (0, 0);
            while s < src.len() && d < dst.len() {
                let (slo, shi, i) = src[s];
                let (dlo, dhi, j) = dst[d];
                let overlap = shi.min(dhi) - slo.max(dlo);
                if overlap > 0.0 {
                    rows[j].push((i, overlap / (nodes[i + 1] - nodes[i])));
                }
                if shi <= dhi {
                    s += 1;
                } else {
                    d += 1;
                }
            }
        }

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (i, v) in row {
                if cols.len() > *row_ptr.last().unwrap() && *cols.last().unwrap() == i {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(i);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            mesh,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn mesh(&self) -> &Arc<GradedMesh> {
        &self.mesh
    }

    pub fn size(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nonzeros(&self) -> usize {
        self.vals.len()
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        let r = self.row_ptr[row]..self.row_ptr[row + 1];
        self.cols[r.clone()]
            .binary_search(&col)
            .map(|k| self.vals[r.start + k])
            .unwrap_or(0.0)
    }

    /// `(row, col, value)` for every stored entry, row-major.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.size())
            .flat_map(move |r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k])))
    }

    pub fn to_triplet_csv(&self) -> String {
        let mut s = String::from("row,col,value\n");
        for (r, c, v) in self.triplets() {
            let _ = writeln!(s, "{r},{c},{v:.16e}");
        }
        s
    }

    /// Mass vector pushed forward one step.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.size())
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .map(|k| self.vals[k] * v[self.cols[k]])
                    .sum()
            })
            .collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.size()];
        for (_, c, v) in self.triplets() {
            sums[c] += v;
        }
        sums
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.size();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn cell_widths(&self) -> Vec<f64> {
        self.mesh.nodes().windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Stationary mass vector (unit total) by power iteration from the
    /// uniform density.
    pub fn fixed_vector(&self, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
        let mut v = self.cell_widths();
        let mut change = f64::INFINITY;
        for _ in 0..max_iter {
            let mut next = self.matvec(&v);
            let total: f64 = next.iter().sum();
            next.iter_mut().for_each(|x| *x /= total);
            change = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = next;
            if change < tol {
                return Ok(v);
            }
        }
        Err(CuspError::NotConverged {
            what: "Ulam fixed vector",
            iterations: max_iter,
            residual: change,
        })
    }

    /// Cell heights of the piecewise-constant density with the given masses.
    pub fn densities(&self, masses: &[f64]) -> Vec<f64> {
        masses.iter().zip(self.cell_widths()).map(|(m, w)| m / w).collect()
    }

    /// `∫_{A_i} f` for every cell.
    pub fn cell_masses(&self, f: &SplineFunction, cfg: &NormConfig) -> Result<Vec<f64>> {
        let rule = cfg.rule();
        let breaks = self.mesh.union_breaks(f.mesh());
        let mut masses = vec![0.0; self.size()];
        for w in breaks.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let panel = f.mesh().locate(mid);
            masses[self.mesh.locate(mid)] += rule.integrate(w[0], w[1], |x| f.derivative_on_panel(panel, x, 0))?;
        }
        Ok(masses)
    }

    /// Solves `(I - M) x = b` subject to `Σ x = 0` through the bordered
    /// system `[[I - M, 1], [1ᵀ, 0]]`, by restarted GMRES.
    pub fn solve_mean_zero(&self, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
        let n = self.size();
        if b.len() != n {
            return Err(CuspError::LengthMismatch {
                expected: n,
                found: b.len(),
            });
        }
        let op = |z: &[f64]| -> Vec<f64> {
            let mx = self.matvec(&z[..n]);
            let mut out: Vec<f64> = (0..n).map(|i| z[i] - mx[i] + z[n]).collect();
            out.push(z[..n].iter().sum());
            out
        };
        let mut rhs = b.to_vec();
        rhs.push(0.0);
        let z = gmres(op, &rhs, tol, 100, max_iter)?;
        Ok(z[..n].to_vec())
    }
}

/// Restarted GMRES with modified Gram–Schmidt and Givens rotations.
fn gmres<F>(op: F, b: &[f64], tol: f64, restart: usize, max_iter: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let bnorm = norm(b).max(1e-300);
    let mut x = vec![0.0; n];
    let mut iterations = 0;
    let mut residual = 1.0;
    while iterations < max_iter {
        let ax = op(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
        let beta = norm(&r);
        residual = beta / bnorm;
        if residual < tol {
            return Ok(x);
        }
        let m = restart.min(n);
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            iterations += 1;
            let mut w = op(&basis[k]);
            for (i, v) in basis.iter().enumerate() {
                let hij: f64 = w.iter().zip(v).map(|(a, b)| a * b).sum();
                h[i][k] = hij;
                w.iter_mut().zip(v).for_each(|(a, b)| *a -= hij * b);
            }
            let wn = norm(&w);
            h[k + 1][k] = wn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let rho = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            cs[k] = h[k][k] / rho;
            sn[k] = h[k + 1][k] / rho;
            h[k][k] = rho;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            residual = g[k + 1].abs() / bnorm;
            if residual < tol || wn == 0.0 || iterations >= max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let s: f64 = (i + 1..k_used).map(|j| h[i][j] * y[j]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        for (yi, v) in y.iter().zip(&basis) {
            x.iter_mut().zip(v).for_each(|(a, b)| *a += yi * b);
        }
        if residual < tol {
            return Ok(x);
        }
    }
    Err(CuspError::NotConverged {
        what: "GMRES",
        iterations,
        residual,
    })
}
