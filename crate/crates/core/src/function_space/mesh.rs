use crate::error::{CuspError, Result};

/// Width of the zone around each graded point inside which panels shrink.
const GRADING_ZONE: f64 = 0.125;

/// Largest allowed ratio between adjacent panel widths.
pub const MAX_SPACING_RATIO: f64 = 4.0;

/// Sorted partition of [0, 1] that always contains 0, 1, the cusp and the
/// peak value as nodes, clustered toward the cusp and the peak.
#[derive(Clone, Debug, PartialEq)]
pub struct GradedMesh {
    nodes: Vec<f64>,
    cusp: f64,
    peak: f64,
    grading_exponent: f64,
}

impl GradedMesh {
    /// Builds a mesh of roughly `panels` panels. Node spacing behaves like
    /// `dist^{1 - 1/g}` within [`GRADING_ZONE`] of the cusp and the peak,
    /// i.e. panels follow the classic `(j/m)^g` grading.
    pub fn new(panels: usize, grading_exponent: f64, cusp: f64, peak: f64) -> Result<Self> {
        if panels < 3 {
            return Err(CuspError::Mesh(format!("need at least 3 panels, got {panels}")));
        }
        if !(grading_exponent >= 1.0 && grading_exponent.is_finite()) {
            return Err(CuspError::Mesh(format!(
                "grading exponent must be >= 1, got {grading_exponent}"
            )));
        }
        check_special_points(cusp, peak)?;

        let mut breaks = vec![0.0, cusp, peak, 1.0];
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let graded = [cusp, peak];
        let is_graded = |x: f64| graded.contains(&x);

        let segments: Vec<Segment> = breaks
            .windows(2)
            .map(|w| Segment {
                left: w[0],
                right: w[1],
                graded_left: is_graded(w[0]),
                graded_right: is_graded(w[1]),
                g: grading_exponent,
            })
            .collect();
        let total: f64 = segments.iter().map(Segment::measure).sum();

        let mut nodes = vec![0.0];
        for seg in &segments {
            let count = ((panels as f64) * seg.measure() / total).round().max(1.0) as usize;
            let step = seg.measure() / count as f64;
            for j in 1..count {
                nodes.push(seg.invert(j as f64 * step));
            }
            nodes.push(seg.right);
        }
        let mesh = Self {
            nodes,
            cusp,
            peak,
            grading_exponent,
        };
        mesh.validate()?;
        Ok(mesh.balanced())
    }

    /// Uniform panels of width `1/panels` with the cusp and peak inserted.
    pub fn uniform(panels: usize, cusp: f64, peak: f64) -> Result<Self> {
        check_special_points(cusp, peak)?;
        let mut nodes: Vec<f64> = (0..=panels).map(|i| i as f64 / panels as f64).collect();
        nodes.extend([cusp, peak]);
        Self::from_nodes(nodes, cusp, peak, 1.0)
    }

    /// Wraps an explicit node set. Nodes are sorted and deduplicated; nodes
    /// closer than 1e-14 to the cusp or the peak are snapped onto them.
    pub fn from_nodes(mut nodes: Vec<f64>, cusp: f64, peak: f64, grading_exponent: f64) -> Result<Self> {
        check_special_points(cusp, peak)?;
        if nodes.iter().any(|x| !x.is_finite()) {
            return Err(CuspError::Mesh("non-finite node".into()));
        }
        for x in nodes.iter_mut() {
            for s in [cusp, peak] {
                if (*x - s).abs() < 1e-14 {
                    *x = s;
                }
            }
        }
        nodes.extend([0.0, 1.0, cusp, peak]);
        nodes.sort_by(f64::total_cmp);
        nodes.dedup();
        let mesh = Self {
            nodes,
            cusp,
            peak,
            grading_exponent,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    fn validate(&self) -> Result<()> {
        let n = &self.nodes;
        if n.len() < 2 || n[0] != 0.0 || *n.last().unwrap() != 1.0 {
            return Err(CuspError::Mesh("nodes must span [0, 1]".into()));
        }
        if n.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CuspError::Mesh("nodes must be strictly increasing".into()));
        }
        if self.node_index(self.cusp).is_none() || self.node_index(self.peak).is_none() {
            return Err(CuspError::Mesh("cusp and peak must be nodes".into()));
        }
        Ok(())
    }

    /// Splits panels in half until every adjacent width ratio is at most
    /// [`MAX_SPACING_RATIO`].
    pub fn balanced(mut self) -> Self {
        loop {
            let mut out = Vec::with_capacity(self.nodes.len() + 8);
            out.push(self.nodes[0]);
            let widths: Vec<f64> = self.nodes.windows(2).map(|w| w[1] - w[0]).collect();
            let mut changed = false;
            for (i, w) in self.nodes.windows(2).enumerate() {
                let h = widths[i];
                let left_ok = i == 0 || h <= MAX_SPACING_RATIO * widths[i - 1];
                let right_ok = i + 1 == widths.len() || h <= MAX_SPACING_RATIO * widths[i + 1];
                if !(left_ok && right_ok) {
                    out.push(0.5 * (w[0] + w[1]));
                    changed = true;
                }
                out.push(w[1]);
            }
            self.nodes = out;
            if !changed {
                return self;
            }
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn panel_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn cusp(&self) -> f64 {
        self.cusp
    }

    pub fn peak(&self) -> f64 {
        self.peak
    }

    pub fn grading_exponent(&self) -> f64 {
        self.grading_exponent
    }

    pub fn panel(&self, i: usize) -> (f64, f64) {
        (self.nodes[i], self.nodes[i + 1])
    }

    /// Index of a node exactly equal to `x`.
    pub fn node_index(&self, x: f64) -> Option<usize> {
        self.nodes.binary_search_by(|n| n.total_cmp(&x)).ok()
    }

    pub fn peak_index(&self) -> usize {
        self.node_index(self.peak).expect("peak is a mesh node")
    }

    pub fn cusp_index(&self) -> usize {
        self.node_index(self.cusp).expect("cusp is a mesh node")
    }

    /// Panel containing `x` (clamped to [0, 1]); nodes belong to the panel
    /// on their right, except x = 1.
    pub fn locate(&self, x: f64) -> usize {
        let k = self.nodes.partition_point(|&n| n <= x);
        k.saturating_sub(1).min(self.panel_count() - 1)
    }

    pub fn max_spacing_ratio(&self) -> f64 {
        self.nodes
            .windows(3)
            .map(|w| {
                let (a, b) = (w[1] - w[0], w[2] - w[1]);
                (a / b).max(b / a)
            })
            .fold(1.0, f64::max)
    }

    /// Sorted union of the nodes of two meshes.
    pub fn union_breaks(&self, other: &GradedMesh) -> Vec<f64> {
        let mut all: Vec<f64> = self.nodes.iter().chain(&other.nodes).copied().collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        all
    }
}

fn check_special_points(cusp: f64, peak: f64) -> Result<()> {
    if !(cusp > 0.0 && cusp < 1.0) {
        return Err(CuspError::Mesh(format!("cusp must lie in (0, 1), got {cusp}")));
    }
    if !(peak > 0.0 && peak <= 1.0) {
        return Err(CuspError::Mesh(format!("peak must lie in (0, 1], got {peak}")));
    }
    Ok(())
}

/// One interval between mandatory breakpoints, with the mesh-density
/// antiderivative in closed form.
struct Segment {
    left: f64,
    right: f64,
    graded_left: bool,
    graded_right: bool,
    g: f64,
}

impl Segment {
    /// ∫_0^r ρ for ρ(t) = min(t/ℓ, 1)^{-(1-1/g)}.
    fn density_antiderivative(&self, r: f64) -> f64 {
        let zone = GRADING_ZONE;
        if r <= zone {
            zone * self.g * (r / zone).powf(1.0 / self.g)
        } else {
            zone * self.g + (r - zone)
        }
    }

    fn cumulative(&self, x: f64) -> f64 {
        let (l, r) = (self.left, self.right);
        let f = |t: f64| self.density_antiderivative(t);
        match (self.graded_left, self.graded_right) {
            (false, false) => x - l,
            (true, false) => f(x - l),
            (false, true) => f(r - l) - f(r - x),
            (true, true) => {
                let m = 0.5 * (l + r);
                if x <= m {
                    f(x - l)
                } else {
                    f(m - l) + f(r - m) - f(r - x)
                }
            }
        }
    }

    fn measure(&self) -> f64 {
        self.cumulative(self.right)
    }

    fn invert(&self, s: f64) -> f64 {
        let (mut lo, mut hi) = (self.left, self.right);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cumulative(mid) < s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}
