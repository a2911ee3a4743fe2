//! Competitive ratio against a per-parameter baseline controller.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisRole, BasisSet};
use crate::error::{Error, Result};
use crate::hinf::HinfOptions;
use crate::saddle::{HinfObjective, MinMaxObjective, StepSchedule};
use crate::sysmodel::{
    eval_strategy, project_gains, structure_masks, GainExpansion, Graph, GraphRole, ParamSystem,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineOptions {
    /// Random stabilizing starts in addition to the supplied ones.
    pub restarts: usize,
    /// Descent iterations per start.
    pub iterations: usize,
    pub schedule: StepSchedule,
    /// Scale each step to length `mu_k` in the Frobenius norm. The optimal
    /// gain often sits far out where subgradients are small.
    pub normalized: bool,
    /// Standard deviation of the random perturbation used for starts.
    pub init_scale: f64,
    /// Draws allowed per random start before giving up on it.
    pub draws_per_start: usize,
    pub seed: u64,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        BaselineOptions {
            restarts: 8,
            iterations: 300,
            schedule: StepSchedule::Harmonic { c: 10.0 },
            normalized: true,
            init_scale: 1.0,
            draws_per_start: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub gain: DMatrix<f64>,
    pub j: f64,
    /// Stabilizing starts actually descended from.
    pub starts: usize,
}

/// Single-coefficient expansion with a constant basis function and every
/// diagonal block free.
fn constant_expansion(sys: &ParamSystem, k: &DMatrix<f64>) -> GainExpansion {
    let eta = Arc::new(BasisSet::constant(BasisRole::Strategy, &sys.bounds().names));
    let full = Graph::complete(GraphRole::Design, sys.partition().len());
    let masks = structure_masks(sys.partition(), &full, &eta);
    project_gains(
        &GainExpansion {
            eta,
            coeffs: vec![k.clone()],
            masks: masks.clone(),
        },
        &masks,
    )
}

/// Projected subgradient descent over block-diagonal gains with the
/// parameters frozen at `alpha`; returns the best iterate.
fn descend(obj: &HinfObjective<'_>, start: GainExpansion, alpha: &[f64], opts: &BaselineOptions) -> Result<(GainExpansion, f64)> {
    let mut g = start;
    let mut best = (g.clone(), obj.value(&g, alpha)?);
    for k in 1..=opts.iterations {
        let (j, dg) = obj.value_and_gain_subgradient(&g, alpha)?;
        let Some(dg) = dg else { break };
        if j < best.1 {
            best = (g.clone(), j);
        }
        let mut mu = opts.schedule.step(k);
        if opts.normalized {
            let norm = dg[0].norm();
            if norm == 0.0 {
                break;
            }
            mu /= norm;
        }
        let mut accepted = None;
        for _ in 0..=30 {
            let stepped = GainExpansion {
                eta: g.eta.clone(),
                coeffs: vec![&g.coeffs[0] - &dg[0] * mu],
                masks: g.masks.clone(),
            };
            let cand = project_gains(&stepped, &g.masks);
            let jc = obj.value(&cand, alpha)?;
            if jc.is_finite() {
                accepted = Some((cand, jc));
                break;
            }
            mu *= 0.5;
        }
        let Some((cand, jc)) = accepted else { break };
        if jc < best.1 {
            best = (cand.clone(), jc);
        }
        g = cand;
    }
    Ok(best)
}

/// Best static gain for the plant frozen at `alpha`, by multi-start
/// projected subgradient descent. `starts` are tried first (unstable ones
/// are skipped); random starts perturb the first stabilizing one.
pub fn baseline_optimal(
    sys_full: &ParamSystem,
    alpha: &[f64],
    starts: &[DMatrix<f64>],
    hinf: &HinfOptions,
    opts: &BaselineOptions,
) -> Result<Baseline> {
    sys_full.bounds().check(alpha)?;
    let obj = HinfObjective::new(sys_full, *hinf);
    let shape = (sys_full.m_u(), sys_full.o_y());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut inits: Vec<GainExpansion> = Vec::new();
    for s in starts {
        if s.shape() != shape {
            return Err(Error::Dimension {
                what: "baseline start gain".into(),
                expected: shape,
                found: s.shape(),
            });
        }
        let e = constant_expansion(sys_full, s);
        if obj.value(&e, alpha)?.is_finite() {
            inits.push(e);
        }
    }
    let center = inits
        .first()
        .map_or_else(|| DMatrix::zeros(shape.0, shape.1), |e| e.coeffs[0].clone());
    let mut tried = 0;
    for _ in 0..opts.restarts {
        for _ in 0..opts.draws_per_start {
            tried += 1;
            let noise = DMatrix::from_fn(shape.0, shape.1, |_, _| rng.sample::<f64, _>(StandardNormal));
            let e = constant_expansion(sys_full, &(&center + noise * opts.init_scale));
            if obj.value(&e, alpha)?.is_finite() {
                inits.push(e);
                break;
            }
        }
    }
    if inits.is_empty() {
        return Err(Error::NoStabilizingStart(tried + starts.len()));
    }

    let mut best: Option<(GainExpansion, f64)> = None;
    let count = inits.len();
    for init in inits {
        let (g, j) = descend(&obj, init, alpha, opts)?;
        if best.as_ref().is_none_or(|b| j < b.1) {
            best = Some((g, j));
        }
    }
    let (g, j) = best.expect("nonempty");
    Ok(Baseline {
        gain: g.coeffs[0].clone(),
        j,
        starts: count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRecord {
    pub alpha: Vec<f64>,
    pub j_strategy: f64,
    pub j_baseline: f64,
    pub ratio: f64,
    /// Why this point is excluded from the supremum, if it is.
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub grid_n: usize,
    pub records: Vec<RatioRecord>,
    pub r: f64,
    pub argmax: Vec<f64>,
}

/// `J_s / J_b` with `0/0 = 1`; `x/0` for `x > 0` is infinite.
pub fn ratio_of(j_strategy: f64, j_baseline: f64) -> f64 {
    if j_strategy == 0.0 && j_baseline == 0.0 {
        1.0
    } else if j_baseline == 0.0 {
        f64::INFINITY
    } else {
        j_strategy / j_baseline
    }
}

/// Seed for the baseline at `alpha`, a function of the point itself so
/// that nested grids reproduce the shared points exactly.
fn point_seed(seed: u64, alpha: &[f64]) -> u64 {
    alpha.iter().fold(seed, |h, x| {
        (h ^ x.to_bits()).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(29)
    })
}

/// Grid estimate of `sup_alpha J(Gamma(alpha), alpha) / J(K*(alpha), alpha)`.
/// The baseline at each point also starts from `Gamma(alpha)` when it has
/// the baseline's shape, and from `gamma0_full(alpha)` when given.
pub fn competitive_ratio(
    sys: &ParamSystem,
    gamma: &GainExpansion,
    sys_full: &ParamSystem,
    gamma0_full: Option<&GainExpansion>,
    grid_n: usize,
    hinf: &HinfOptions,
    opts: &BaselineOptions,
) -> Result<RatioReport> {
    if grid_n < 2 {
        return Err(Error::Model(format!("ratio grid needs at least 2 points per dimension, got {grid_n}")));
    }
    let shape = (sys_full.m_u(), sys_full.o_y());
    let grid = sys.bounds().grid(grid_n);
    let obj = HinfObjective::new(sys, *hinf);
    let records = grid
        .par_iter()
        .map(|alpha| -> Result<RatioRecord> {
            let j_strategy = obj.value(gamma, alpha)?;
            let mut starts = Vec::new();
            let k = eval_strategy(gamma, alpha);
            if k.shape() == shape {
                starts.push(k);
            }
            if let Some(g0) = gamma0_full {
                starts.push(eval_strategy(g0, alpha));
            }
            let point_opts = BaselineOptions {
                seed: point_seed(opts.seed, alpha),
                ..*opts
            };
            let (j_baseline, flag) = match baseline_optimal(sys_full, alpha, &starts, hinf, &point_opts) {
                Ok(b) => (b.j, None),
                Err(e) => (f64::NAN, Some(format!("baseline failed: {e}"))),
            };
            let ratio = if flag.is_some() {
                f64::NAN
            } else {
                ratio_of(j_strategy, j_baseline)
            };
            let flag = flag.or_else(|| (!ratio.is_finite()).then(|| "infinite ratio".to_string()));
            Ok(RatioRecord {
                alpha: alpha.clone(),
                j_strategy,
                j_baseline,
                ratio,
                flag,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut r = f64::NEG_INFINITY;
    let mut argmax = Vec::new();
    for rec in &records {
        if let Some(f) = &rec.flag {
            log::warn!("ratio at alpha = {:?} excluded: {f}", rec.alpha);
            continue;
        }
        if rec.ratio > r {
            r = rec.ratio;
            argmax = rec.alpha.clone();
        }
    }
    Ok(RatioReport {
        grid_n,
        records,
        r,
        argmax,
    })
}
