//! JSON system description.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use structhinf::basis::{BasisRole, BasisSet};
use structhinf::saddle::{SaddleOptions, StepSchedule};
use structhinf::sysmodel::{
    strategy_for, GainExpansion, Graph, GraphRole, ParamBox, ParamSystem, Partition, Performance,
    PlantTerm, SubsystemDims,
};
use structhinf::Error;

use crate::CliError;

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parameters {
    pub names: Vec<String>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "Bw")]
    pub b_w: Rows,
    #[serde(rename = "Bu")]
    pub b_u: Rows,
    #[serde(rename = "Cy")]
    pub c_y: Rows,
    #[serde(rename = "Dyw")]
    pub d_yw: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerformanceRows {
    #[serde(rename = "Cz")]
    pub c_z: Rows,
    #[serde(rename = "Dzw")]
    pub d_zw: Rows,
    #[serde(rename = "Dzu")]
    pub d_zu: Rows,
}

/// Solver settings stored alongside a system; every field optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverDefaults {
    pub eps_inner: Option<f64>,
    pub eps_outer: Option<f64>,
    pub step: Option<String>,
    pub max_outer: Option<usize>,
    pub max_inner: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    pub parameters: Parameters,
    pub partition: Vec<SubsystemDims>,
    pub xi_basis: Vec<String>,
    pub eta_basis: Vec<String>,
    pub matrices: Vec<Term>,
    pub performance: PerformanceRows,
    pub control_graph: Vec<Vec<usize>>,
    pub design_graph: Vec<Vec<usize>>,
    #[serde(default)]
    pub gamma0: Option<Vec<Rows>>,
    #[serde(default)]
    pub alpha0: Option<Vec<f64>>,
    #[serde(default)]
    pub solver: Option<SolverDefaults>,
}

/// Strategy coefficients on disk. Also accepted: a design output, whose
/// `gamma_star` field has this shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainFile {
    #[serde(default)]
    pub eta_basis: Option<Vec<String>>,
    pub coeffs: Vec<Rows>,
}

/// A loaded system with its optional initial data.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub file: SystemFile,
    pub sys: ParamSystem,
    pub eta: Arc<BasisSet>,
    pub gamma0: Option<GainExpansion>,
    pub alpha0: Option<Vec<f64>>,
}

impl Loaded {
    /// `gamma0` if present, else the zero strategy.
    pub fn initial_strategy(&self) -> GainExpansion {
        self.gamma0.clone().unwrap_or_else(|| self.zero_strategy())
    }

    pub fn zero_strategy(&self) -> GainExpansion {
        let coeffs = vec![DMatrix::zeros(self.sys.m_u(), self.sys.o_y()); self.eta.len()];
        strategy_for(&self.sys, self.eta.clone(), coeffs).expect("shapes match by construction")
    }

    pub fn initial_alpha(&self) -> Vec<f64> {
        self.alpha0.clone().unwrap_or_else(|| self.sys.bounds().center())
    }

    /// Solver options from the file, on top of the library defaults.
    pub fn saddle_defaults(&self) -> Result<SaddleOptions, CliError> {
        let mut o = SaddleOptions::default();
        if let Some(s) = &self.file.solver {
            if let Some(v) = s.eps_inner {
                o.eps_inner = v;
            }
            if let Some(v) = s.eps_outer {
                o.eps_outer = v;
            }
            if let Some(v) = &s.step {
                o.schedule = v.parse::<StepSchedule>().map_err(CliError::Usage)?;
            }
            if let Some(v) = s.max_outer {
                o.max_outer = v;
            }
            if let Some(v) = s.max_inner {
                o.max_inner = v;
            }
        }
        Ok(o)
    }

    pub fn strategy_from_rows(&self, coeffs: &[Rows]) -> Result<GainExpansion, CliError> {
        if coeffs.len() != self.eta.len() {
            return Err(Error::Model(format!(
                "{} gain coefficients for {} strategy basis functions",
                coeffs.len(),
                self.eta.len()
            ))
            .into());
        }
        let mats = coeffs
            .iter()
            .enumerate()
            .map(|(l, r)| matrix(&format!("G[{l}]"), r, self.sys.m_u(), self.sys.o_y()))
            .collect::<Result<Vec<_>, _>>()?;
        let g = strategy_for(&self.sys, self.eta.clone(), mats)?;
        if !g.is_feasible() {
            return Err(Error::Model("gain coefficients are nonzero outside the design-graph structure".into()).into());
        }
        Ok(g)
    }

    pub fn load_gain(&self, path: &Path) -> Result<GainExpansion, CliError> {
        let text = read(path)?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let inner = value.get("gamma_star").cloned().unwrap_or(value);
        let gf: GainFile = serde_json::from_value(inner).map_err(|e| CliError::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        if let Some(src) = &gf.eta_basis {
            if src != self.eta.sources() {
                return Err(Error::Model(format!(
                    "gain file expands over {src:?} but the system uses {:?}",
                    self.eta.sources()
                ))
                .into());
            }
        }
        self.strategy_from_rows(&gf.coeffs)
    }
}

pub fn gain_file(g: &GainExpansion) -> GainFile {
    GainFile {
        eta_basis: Some(g.eta.sources().to_vec()),
        coeffs: g.coeffs.iter().map(rows).collect(),
    }
}

pub fn rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix(what: &str, r: &Rows, nrows: usize, ncols: usize) -> Result<DMatrix<f64>, Error> {
    let found_cols = r.first().map_or(ncols, |row| row.len());
    if r.len() != nrows || r.iter().any(|row| row.len() != ncols) {
        return Err(Error::Dimension {
            what: what.to_string(),
            expected: (nrows, ncols),
            found: (r.len(), found_cols),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| r[i][j]))
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let text = read(path)?;
    let file: SystemFile = serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    build(file)
}

pub fn build(file: SystemFile) -> Result<Loaded, CliError> {
    let p = &file.parameters;
    let bounds = ParamBox::new(p.names.clone(), p.lo.clone(), p.hi.clone())?;
    let partition = Partition::new(file.partition.clone())?;
    let xi = BasisSet::new(BasisRole::Plant, &p.names, &file.xi_basis, &p.lo, &p.hi)?;
    let eta = Arc::new(BasisSet::new(BasisRole::Strategy, &p.names, &file.eta_basis, &p.lo, &p.hi)?);
    let (n, m_w, m_u, o_y) = (partition.n(), partition.m_w(), partition.m_u(), partition.o_y());
    if file.matrices.len() != xi.len() {
        return Err(Error::Model(format!(
            "{} coefficient sets for {} plant basis functions",
            file.matrices.len(),
            xi.len()
        ))
        .into());
    }
    let terms = file
        .matrices
        .iter()
        .enumerate()
        .map(|(l, t)| {
            Ok(PlantTerm {
                a: matrix(&format!("A[{l}]"), &t.a, n, n)?,
                b_w: matrix(&format!("Bw[{l}]"), &t.b_w, n, m_w)?,
                b_u: matrix(&format!("Bu[{l}]"), &t.b_u, n, m_u)?,
                c_y: matrix(&format!("Cy[{l}]"), &t.c_y, o_y, n)?,
                d_yw: matrix(&format!("Dyw[{l}]"), &t.d_yw, o_y, m_w)?,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let o_z = file.performance.c_z.len();
    let perf = Performance {
        c_z: matrix("Cz", &file.performance.c_z, o_z, n)?,
        d_zw: matrix("Dzw", &file.performance.d_zw, o_z, m_w)?,
        d_zu: matrix("Dzu", &file.performance.d_zu, o_z, m_u)?,
    };
    let nsub = partition.len();
    let control = Graph::from_lists(GraphRole::Control, nsub, &file.control_graph)?;
    let design = Graph::from_lists(GraphRole::Design, nsub, &file.design_graph)?;
    let sys = ParamSystem::new(xi, terms, perf, partition, control, design, bounds)?;

    let alpha0 = match &file.alpha0 {
        Some(a) => {
            sys.bounds().check(a)?;
            Some(a.clone())
        }
        None => None,
    };
    let mut loaded = Loaded {
        file,
        sys,
        eta,
        gamma0: None,
        alpha0,
    };
    if let Some(g) = loaded.file.gamma0.clone() {
        loaded.gamma0 = Some(loaded.strategy_from_rows(&g)?);
    }
    Ok(loaded)
}
