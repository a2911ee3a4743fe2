//! Parameter-dependent plant, graphs, structure masks and the closed loop.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisRole, BasisSet};
use crate::error::{Error, Result};
use crate::linalg::{self, to_complex};

/// Dimensions of one subsystem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsystemDims {
    pub n: usize,
    pub m_w: usize,
    pub m_u: usize,
    pub o_y: usize,
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    parts: Vec<SubsystemDims>,
}

impl Partition {
    pub fn new(parts: Vec<SubsystemDims>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Model("partition needs at least one subsystem".into()));
        }
        Ok(Partition { parts })
    }

    pub fn parts(&self) -> &[SubsystemDims] {
        &self.parts
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    fn total(&self, f: impl Fn(&SubsystemDims) -> usize) -> usize {
        self.parts.iter().map(f).sum()
    }

    pub fn n(&self) -> usize {
        self.total(|d| d.n)
    }
    pub fn m_w(&self) -> usize {
        self.total(|d| d.m_w)
    }
    pub fn m_u(&self) -> usize {
        self.total(|d| d.m_u)
    }
    pub fn o_y(&self) -> usize {
        self.total(|d| d.o_y)
    }
    pub fn p(&self) -> usize {
        self.total(|d| d.p)
    }

    fn ranges(&self, f: impl Fn(&SubsystemDims) -> usize) -> Vec<Range<usize>> {
        let mut start = 0;
        self.parts
            .iter()
            .map(|d| {
                let r = start..start + f(d);
                start = r.end;
                r
            })
            .collect()
    }

    pub fn state_ranges(&self) -> Vec<Range<usize>> {
        self.ranges(|d| d.n)
    }
    pub fn exo_ranges(&self) -> Vec<Range<usize>> {
        self.ranges(|d| d.m_w)
    }
    pub fn input_ranges(&self) -> Vec<Range<usize>> {
        self.ranges(|d| d.m_u)
    }
    pub fn output_ranges(&self) -> Vec<Range<usize>> {
        self.ranges(|d| d.o_y)
    }
    pub fn param_ranges(&self) -> Vec<Range<usize>> {
        self.ranges(|d| d.p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphRole {
    Control,
    Design,
}

/// Directed graph over subsystems, stored as its adjacency matrix:
/// `s[i][j]` is set when information of subsystem `j` flows to `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    role: GraphRole,
    adj: Vec<Vec<bool>>,
}

impl Graph {
    pub fn from_adjacency(role: GraphRole, adj: Vec<Vec<bool>>) -> Result<Self> {
        let n = adj.len();
        if adj.iter().any(|row| row.len() != n) {
            return Err(Error::Model(format!("{role:?} graph adjacency is not square")));
        }
        Ok(Graph { role, adj })
    }

    /// `lists[i]` enumerates the `j` with `s[i][j] = 1`.
    pub fn from_lists(role: GraphRole, n: usize, lists: &[Vec<usize>]) -> Result<Self> {
        if lists.len() != n {
            return Err(Error::Model(format!(
                "{role:?} graph lists {} rows for {n} subsystems",
                lists.len()
            )));
        }
        let mut adj = vec![vec![false; n]; n];
        for (i, row) in lists.iter().enumerate() {
            for &j in row {
                if j >= n {
                    return Err(Error::Model(format!(
                        "{role:?} graph references subsystem {j} (only {n})"
                    )));
                }
                adj[i][j] = true;
            }
        }
        Ok(Graph { role, adj })
    }

    pub fn complete(role: GraphRole, n: usize) -> Self {
        Graph {
            role,
            adj: vec![vec![true; n]; n],
        }
    }

    pub fn self_loops(role: GraphRole, n: usize) -> Self {
        let adj = (0..n).map(|i| (0..n).map(|j| i == j).collect()).collect();
        Graph { role, adj }
    }

    pub fn role(&self) -> GraphRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn has(&self, i: usize, j: usize) -> bool {
        self.adj[i][j]
    }

    pub fn to_lists(&self) -> Vec<Vec<usize>> {
        self.adj
            .iter()
            .map(|row| row.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j).collect())
            .collect()
    }
}

/// Compact parameter set as a product of intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub names: Vec<String>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ParamBox {
    pub fn new(names: Vec<String>, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != names.len() || hi.len() != names.len() {
            return Err(Error::Model("parameter bounds and names differ in length".into()));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(Error::Model(format!(
                    "parameter {} has an empty or unbounded range [{l}, {h}]",
                    names[i]
                )));
            }
        }
        Ok(ParamBox { names, lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn check(&self, alpha: &[f64]) -> Result<()> {
        if alpha.len() != self.dim() {
            return Err(Error::Dimension {
                what: "parameter vector".into(),
                expected: (self.dim(), 1),
                found: (alpha.len(), 1),
            });
        }
        for (i, &a) in alpha.iter().enumerate() {
            if !(self.lo[i] <= a && a <= self.hi[i]) {
                return Err(Error::OutOfBox {
                    index: i,
                    value: a,
                    lo: self.lo[i],
                    hi: self.hi[i],
                });
            }
        }
        Ok(())
    }

    pub fn contains(&self, alpha: &[f64]) -> bool {
        self.check(alpha).is_ok()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    /// Uniform tensor grid with `n` points per dimension, last index fastest.
    pub fn grid(&self, n: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|i| {
                if n <= 1 {
                    vec![0.5 * (self.lo[i] + self.hi[i])]
                } else {
                    (0..n)
                        .map(|k| {
                            let t = k as f64 / (n - 1) as f64;
                            // Hit the end points exactly.
                            if k == n - 1 {
                                self.hi[i]
                            } else {
                                self.lo[i] + t * (self.hi[i] - self.lo[i])
                            }
                        })
                        .collect()
                }
            })
            .collect();
        let mut out = vec![Vec::new()];
        for axis in &axes {
            let mut next = Vec::with_capacity(out.len() * axis.len());
            for prefix in &out {
                for &x in axis {
                    let mut p = prefix.clone();
                    p.push(x);
                    next.push(p);
                }
            }
            out = next;
        }
        out
    }
}

/// Plant matrices at a fixed parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantMatrices {
    pub a: DMatrix<f64>,
    pub b_w: DMatrix<f64>,
    pub b_u: DMatrix<f64>,
    pub c_y: DMatrix<f64>,
    pub d_yw: DMatrix<f64>,
}

/// Coefficient matrices multiplying one plant basis function.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantTerm {
    pub a: DMatrix<f64>,
    pub b_w: DMatrix<f64>,
    pub b_u: DMatrix<f64>,
    pub c_y: DMatrix<f64>,
    pub d_yw: DMatrix<f64>,
}

/// Parameter-independent performance output matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Performance {
    pub c_z: DMatrix<f64>,
    pub d_zw: DMatrix<f64>,
    pub d_zu: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct ParamSystem {
    xi: BasisSet,
    terms: Vec<PlantTerm>,
    perf: Performance,
    partition: Partition,
    control_graph: Graph,
    design_graph: Graph,
    bounds: ParamBox,
}

impl ParamSystem {
    /// Builds the system, rejecting dimension mismatches and measurement
    /// matrices that break the control-graph structure.
    pub fn new(
        xi: BasisSet,
        terms: Vec<PlantTerm>,
        perf: Performance,
        partition: Partition,
        control_graph: Graph,
        design_graph: Graph,
        bounds: ParamBox,
    ) -> Result<Self> {
        let sys = ParamSystem {
            xi,
            terms,
            perf,
            partition,
            control_graph,
            design_graph,
            bounds,
        };
        sys.check_dimensions()?;
        sys.check_structure()?;
        Ok(sys)
    }

    pub fn xi(&self) -> &BasisSet {
        &self.xi
    }
    pub fn terms(&self) -> &[PlantTerm] {
        &self.terms
    }
    pub fn performance(&self) -> &Performance {
        &self.perf
    }
    pub fn partition(&self) -> &Partition {
        &self.partition
    }
    pub fn control_graph(&self) -> &Graph {
        &self.control_graph
    }
    pub fn design_graph(&self) -> &Graph {
        &self.design_graph
    }
    pub fn bounds(&self) -> &ParamBox {
        &self.bounds
    }

    pub fn n(&self) -> usize {
        self.partition.n()
    }
    pub fn m_w(&self) -> usize {
        self.partition.m_w()
    }
    pub fn m_u(&self) -> usize {
        self.partition.m_u()
    }
    pub fn o_y(&self) -> usize {
        self.partition.o_y()
    }
    pub fn o_z(&self) -> usize {
        self.perf.c_z.nrows()
    }
    pub fn p(&self) -> usize {
        self.bounds.dim()
    }

    /// Same plant with a different design graph.
    pub fn with_design_graph(&self, design_graph: Graph) -> Result<Self> {
        if design_graph.len() != self.partition.len() {
            return Err(Error::Model("design graph size differs from the partition".into()));
        }
        let mut s = self.clone();
        s.design_graph = design_graph;
        Ok(s)
    }

    fn check_dimensions(&self) -> Result<()> {
        let (n, m_w, m_u, o_y) = (self.n(), self.m_w(), self.m_u(), self.o_y());
        let o_z = self.perf.c_z.nrows();
        let dim = |what: String, m: &DMatrix<f64>, r: usize, c: usize| -> Result<()> {
            if m.shape() != (r, c) {
                return Err(Error::Dimension {
                    what,
                    expected: (r, c),
                    found: m.shape(),
                });
            }
            Ok(())
        };
        if self.terms.len() != self.xi.len() {
            return Err(Error::Model(format!(
                "{} coefficient sets for {} plant basis functions",
                self.terms.len(),
                self.xi.len()
            )));
        }
        if self.partition.p() != self.bounds.dim() || self.xi.num_params() != self.bounds.dim() {
            return Err(Error::Model(format!(
                "partition declares {} parameters, box has {}",
                self.partition.p(),
                self.bounds.dim()
            )));
        }
        for (l, t) in self.terms.iter().enumerate() {
            dim(format!("A[{l}]"), &t.a, n, n)?;
            dim(format!("Bw[{l}]"), &t.b_w, n, m_w)?;
            dim(format!("Bu[{l}]"), &t.b_u, n, m_u)?;
            dim(format!("Cy[{l}]"), &t.c_y, o_y, n)?;
            dim(format!("Dyw[{l}]"), &t.d_yw, o_y, m_w)?;
        }
        dim("Cz".into(), &self.perf.c_z, o_z, n)?;
        dim("Dzw".into(), &self.perf.d_zw, o_z, m_w)?;
        dim("Dzu".into(), &self.perf.d_zu, o_z, m_u)?;
        let nsub = self.partition.len();
        if self.control_graph.len() != nsub || self.design_graph.len() != nsub {
            return Err(Error::Model(format!(
                "graphs must have {nsub} vertices (control {}, design {})",
                self.control_graph.len(),
                self.design_graph.len()
            )));
        }
        Ok(())
    }

    /// Every `C_y`, `D_yw` coefficient must vanish on blocks the control
    /// graph forbids.
    pub fn check_structure(&self) -> Result<()> {
        let rows = self.partition.output_ranges();
        let xcols = self.partition.state_ranges();
        let wcols = self.partition.exo_ranges();
        for (l, t) in self.terms.iter().enumerate() {
            if let Some((i, j)) = structure_violation(&t.c_y, &rows, &xcols, &self.control_graph) {
                return Err(Error::Structure {
                    matrix: format!("Cy[{l}]"),
                    row: i,
                    col: j,
                });
            }
            if let Some((i, j)) = structure_violation(&t.d_yw, &rows, &wcols, &self.control_graph)
            {
                return Err(Error::Structure {
                    matrix: format!("Dyw[{l}]"),
                    row: i,
                    col: j,
                });
            }
        }
        Ok(())
    }

    /// Weighted sums of the coefficients at `alpha`, without the box check.
    pub(crate) fn matrices_unchecked(&self, alpha: &[f64]) -> PlantMatrices {
        let w = self.xi.eval(alpha);
        self.combine(&w)
    }

    /// `sum_l w[l] * term[l]` for arbitrary weights (values or derivatives).
    pub(crate) fn combine(&self, w: &[f64]) -> PlantMatrices {
        let (n, m_w, m_u, o_y) = (self.n(), self.m_w(), self.m_u(), self.o_y());
        let mut out = PlantMatrices {
            a: DMatrix::zeros(n, n),
            b_w: DMatrix::zeros(n, m_w),
            b_u: DMatrix::zeros(n, m_u),
            c_y: DMatrix::zeros(o_y, n),
            d_yw: DMatrix::zeros(o_y, m_w),
        };
        for (wl, t) in w.iter().zip(&self.terms) {
            if *wl == 0.0 {
                continue;
            }
            out.a += &t.a * *wl;
            out.b_w += &t.b_w * *wl;
            out.b_u += &t.b_u * *wl;
            out.c_y += &t.c_y * *wl;
            out.d_yw += &t.d_yw * *wl;
        }
        out
    }

    pub fn eval_matrices(&self, alpha: &[f64]) -> Result<PlantMatrices> {
        self.bounds.check(alpha)?;
        Ok(self.matrices_unchecked(alpha))
    }
}

fn structure_violation(
    m: &DMatrix<f64>,
    rows: &[Range<usize>],
    cols: &[Range<usize>],
    graph: &Graph,
) -> Option<(usize, usize)> {
    for (i, r) in rows.iter().enumerate() {
        for (j, c) in cols.iter().enumerate() {
            if graph.has(i, j) {
                continue;
            }
            for a in r.clone() {
                for b in c.clone() {
                    if m[(a, b)] != 0.0 {
                        return Some((i, j));
                    }
                }
            }
        }
    }
    None
}

/// Checks that `m` is block diagonal with respect to the given row and
/// column partitions (off-diagonal blocks exactly zero).
pub fn is_block_diagonal(m: &DMatrix<f64>, rows: &[Range<usize>], cols: &[Range<usize>]) -> bool {
    let n = rows.len();
    let g = Graph::self_loops(GraphRole::Control, n);
    structure_violation(m, rows, cols, &g).is_none()
}

#[derive(Debug, Clone, Copy)]
pub struct ValidateOptions {
    /// Sample points per parameter dimension for the advisory checks.
    pub grid_n: usize,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions { grid_n: 5 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub structure_ok: bool,
    pub grid_points: usize,
    pub dzu_orthonormal: bool,
    pub dyw_coisometric: bool,
    pub stabilizable: bool,
    pub detectable: bool,
    pub warnings: Vec<String>,
}

/// Structural checks (hard errors) followed by sampled advisory checks of
/// the regularity, stabilizability and detectability conditions.
pub fn validate_system(sys: &ParamSystem, opts: &ValidateOptions) -> Result<ValidationReport> {
    sys.check_dimensions()?;
    sys.check_structure()?;
    let grid = sys.bounds.grid(opts.grid_n.max(1));
    let mut warnings = Vec::new();

    let dzu = &sys.perf.d_zu;
    let gram = dzu.transpose() * dzu;
    let dzu_orthonormal = (gram - DMatrix::identity(sys.m_u(), sys.m_u())).abs().max() < 1e-9;
    if !dzu_orthonormal {
        warnings.push("D_zu^T D_zu != I (regularity condition is sufficient only)".to_string());
    }

    let mut dyw_ok = true;
    let mut stab_ok = true;
    let mut det_ok = true;
    let mut first_stab_fail = None;
    let mut first_det_fail = None;
    for alpha in &grid {
        let m = sys.matrices_unchecked(alpha);
        let g = &m.d_yw * m.d_yw.transpose();
        if (g - DMatrix::identity(sys.o_y(), sys.o_y())).abs().max() >= 1e-9 {
            dyw_ok = false;
        }
        let (s, d) = pbh(&m)?;
        if !s {
            stab_ok = false;
            first_stab_fail.get_or_insert_with(|| alpha.clone());
        }
        if !d {
            det_ok = false;
            first_det_fail.get_or_insert_with(|| alpha.clone());
        }
    }
    if !dyw_ok {
        warnings.push("D_yw D_yw^T != I on the sample grid (regularity condition is sufficient only)".to_string());
    }
    if let Some(a) = first_stab_fail {
        warnings.push(format!("(A, B_u) fails the PBH stabilizability test at alpha = {a:?}"));
    }
    if let Some(a) = first_det_fail {
        warnings.push(format!("(A, C_y) fails the PBH detectability test at alpha = {a:?}"));
    }
    Ok(ValidationReport {
        structure_ok: true,
        grid_points: grid.len(),
        dzu_orthonormal,
        dyw_coisometric: dyw_ok,
        stabilizable: stab_ok,
        detectable: det_ok,
        warnings,
    })
}

/// PBH rank tests on the closed right half-plane eigenvalues of `A`.
fn pbh(m: &PlantMatrices) -> Result<(bool, bool)> {
    let n = m.a.nrows();
    let eigs = linalg::eigenvalues(&m.a)?;
    let scale = m.a.abs().max().max(1.0);
    let tol = 1e-9 * scale;
    let ac = to_complex(&m.a);
    let mut stabilizable = true;
    let mut detectable = true;
    for lam in eigs.iter().filter(|z| z.re >= -1e-9) {
        let shifted = &ac - DMatrix::<Complex64>::identity(n, n) * *lam;
        let wide = {
            let mut w = DMatrix::<Complex64>::zeros(n, n + m.b_u.ncols());
            w.view_mut((0, 0), (n, n)).copy_from(&shifted);
            w.view_mut((0, n), (n, m.b_u.ncols())).copy_from(&to_complex(&m.b_u));
            w
        };
        if linalg::singular_values(&wide).get(n - 1).copied().unwrap_or(0.0) <= tol {
            stabilizable = false;
        }
        let tall = {
            let mut t = DMatrix::<Complex64>::zeros(n + m.c_y.nrows(), n);
            t.view_mut((0, 0), (n, n)).copy_from(&shifted);
            t.view_mut((n, 0), (m.c_y.nrows(), n)).copy_from(&to_complex(&m.c_y));
            t
        };
        if linalg::singular_values(&tall).get(n - 1).copied().unwrap_or(0.0) <= tol {
            detectable = false;
        }
    }
    Ok((stabilizable, detectable))
}

/// Static gain expansion `K(alpha) = sum_l eta_l(alpha) G_l` with a binary
/// mask per coefficient.
#[derive(Debug, Clone)]
pub struct GainExpansion {
    pub eta: Arc<BasisSet>,
    pub coeffs: Vec<DMatrix<f64>>,
    pub masks: Vec<DMatrix<f64>>,
}

impl GainExpansion {
    pub fn new(eta: Arc<BasisSet>, coeffs: Vec<DMatrix<f64>>, masks: Vec<DMatrix<f64>>) -> Result<Self> {
        if coeffs.len() != eta.len() || masks.len() != eta.len() {
            return Err(Error::Model(format!(
                "{} coefficients and {} masks for {} strategy basis functions",
                coeffs.len(),
                masks.len(),
                eta.len()
            )));
        }
        if let Some(shape) = coeffs.first().map(|c| c.shape()) {
            for (l, (c, m)) in coeffs.iter().zip(&masks).enumerate() {
                if c.shape() != shape || m.shape() != shape {
                    return Err(Error::Dimension {
                        what: format!("G[{l}]"),
                        expected: shape,
                        found: c.shape(),
                    });
                }
            }
        }
        Ok(GainExpansion { eta, coeffs, masks })
    }

    pub fn zeros(eta: Arc<BasisSet>, masks: Vec<DMatrix<f64>>) -> Self {
        let coeffs = masks.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect();
        GainExpansion { eta, coeffs, masks }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.coeffs.first().map_or((0, 0), |c| c.shape())
    }

    /// True when every disallowed entry is exactly zero.
    pub fn is_feasible(&self) -> bool {
        self.coeffs
            .iter()
            .zip(&self.masks)
            .all(|(c, m)| c.iter().zip(m.iter()).all(|(x, k)| *k != 0.0 || *x == 0.0))
    }

    /// Frobenius distance over all coefficients.
    pub fn distance(&self, other: &GainExpansion) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// `K' = [G_1 ... G_L']`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let refs: Vec<&DMatrix<f64>> = self.coeffs.iter().collect();
        linalg::hstack(&refs)
    }

    /// Number of free (mask-allowed) entries.
    pub fn free_count(&self) -> usize {
        self.masks.iter().map(|m| m.iter().filter(|&&x| x != 0.0).count()).sum()
    }
}

/// `sum_l eta_l(alpha) G_l`.
pub fn eval_strategy(gamma: &GainExpansion, alpha: &[f64]) -> DMatrix<f64> {
    let w = gamma.eta.eval(alpha);
    weighted_gain(gamma, &w)
}

pub(crate) fn weighted_gain(gamma: &GainExpansion, w: &[f64]) -> DMatrix<f64> {
    let (r, c) = gamma.shape();
    let mut k = DMatrix::zeros(r, c);
    for (wl, g) in w.iter().zip(&gamma.coeffs) {
        if *wl != 0.0 {
            k += g * *wl;
        }
    }
    k
}

/// Realization `(A, B, C, D)` with complex-free real data.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let ok = a.ncols() == n
            && b.nrows() == n
            && c.ncols() == n
            && d.nrows() == c.nrows()
            && d.ncols() == b.ncols();
        if !ok {
            return Err(Error::Dimension {
                what: format!(
                    "state space A{:?} B{:?} C{:?} D{:?}",
                    a.shape(),
                    b.shape(),
                    c.shape(),
                    d.shape()
                ),
                expected: (n, n),
                found: a.shape(),
            });
        }
        Ok(StateSpace { a, b, c, d })
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }
}

/// Closed loop of the plant with `u = K(alpha) y`.
pub fn closed_loop(sys: &ParamSystem, gamma: &GainExpansion, alpha: &[f64]) -> Result<StateSpace> {
    sys.bounds.check(alpha)?;
    Ok(closed_loop_unchecked(sys, gamma, alpha))
}

pub(crate) fn closed_loop_unchecked(sys: &ParamSystem, gamma: &GainExpansion, alpha: &[f64]) -> StateSpace {
    let m = sys.matrices_unchecked(alpha);
    let k = eval_strategy(gamma, alpha);
    closed_loop_from(&m, &sys.perf, &k)
}

pub(crate) fn closed_loop_from(m: &PlantMatrices, perf: &Performance, k: &DMatrix<f64>) -> StateSpace {
    let bk = &m.b_u * k;
    let dk = &perf.d_zu * k;
    StateSpace {
        a: &m.a + &bk * &m.c_y,
        b: &m.b_w + &bk * &m.d_yw,
        c: &perf.c_z + &dk * &m.c_y,
        d: &perf.d_zw + &dk * &m.d_yw,
    }
}

/// Binary masks for each strategy coefficient. Block `(i, i)` of `G_l` is
/// free iff every parameter `eta_l` depends on belongs to a subsystem in the
/// design neighbourhood of `i`; off-diagonal blocks are always zero.
pub fn structure_masks(partition: &Partition, design_graph: &Graph, eta: &BasisSet) -> Vec<DMatrix<f64>> {
    let urows = partition.input_ranges();
    let ycols = partition.output_ranges();
    let pranges = partition.param_ranges();
    let owner = |param: usize| pranges.iter().position(|r| r.contains(&param));
    (0..eta.len())
        .map(|l| {
            let mut mask = DMatrix::zeros(partition.m_u(), partition.o_y());
            for i in 0..partition.len() {
                let allowed = eta
                    .deps(l)
                    .iter()
                    .all(|&q| owner(q).is_some_and(|j| design_graph.has(i, j)));
                if allowed {
                    mask.view_mut((urows[i].start, ycols[i].start), (urows[i].len(), ycols[i].len()))
                        .fill(1.0);
                }
            }
            mask
        })
        .collect()
}

/// Euclidean projection onto the masked subspace. Disallowed entries come
/// out as `+0.0`.
pub fn project_gains(gamma: &GainExpansion, masks: &[DMatrix<f64>]) -> GainExpansion {
    let coeffs = gamma
        .coeffs
        .iter()
        .zip(masks)
        .map(|(g, m)| g.zip_map(m, |x, keep| if keep == 0.0 { 0.0 } else { x }))
        .collect();
    GainExpansion {
        eta: gamma.eta.clone(),
        coeffs,
        masks: masks.to_vec(),
    }
}

/// Coordinatewise clamp onto the box.
pub fn project_params(alpha: &[f64], bounds: &ParamBox) -> Vec<f64> {
    alpha
        .iter()
        .enumerate()
        .map(|(i, a)| a.clamp(bounds.lo[i], bounds.hi[i]))
        .collect()
}

/// Convenience constructor for a strategy expansion over `sys`.
pub fn strategy_for(sys: &ParamSystem, eta: Arc<BasisSet>, coeffs: Vec<DMatrix<f64>>) -> Result<GainExpansion> {
    debug_assert_eq!(eta.role(), BasisRole::Strategy);
    let masks = structure_masks(&sys.partition, &sys.design_graph, &eta);
    for (l, c) in coeffs.iter().enumerate() {
        if c.shape() != (sys.m_u(), sys.o_y()) {
            return Err(Error::Dimension {
                what: format!("G[{l}]"),
                expected: (sys.m_u(), sys.o_y()),
                found: c.shape(),
            });
        }
    }
    GainExpansion::new(eta, coeffs, masks)
}
