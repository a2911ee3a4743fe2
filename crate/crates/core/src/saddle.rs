//! Alternating projected subgradient search for a saddle point of the
//! worst-case closed-loop norm.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hinf::{hinf_norm, uniform_weights, HinfOptions, HinfResult};
use crate::subgrad::{
    gain_subgradient, param_aug_gate_error, param_subgradient, param_subgradient_direct,
};
use crate::sysmodel::{closed_loop, project_gains, project_params, GainExpansion, ParamBox, ParamSystem};

/// Step sizes `mu_k`. `Harmonic { c }` is `c / k`; at `k = 0` this is
/// `+inf`, which the inner loop interprets as the limit of the projected
/// ray (a jump to the box face selected by the sign of the subgradient).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum StepSchedule {
    Harmonic { c: f64 },
}

impl StepSchedule {
    pub fn step(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Harmonic { c } => c / k as f64,
        }
    }
}

impl fmt::Display for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSchedule::Harmonic { c } => write!(f, "c/k:{c}"),
        }
    }
}

impl FromStr for StepSchedule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let rest = s
            .strip_prefix("c/k:")
            .ok_or_else(|| format!("unknown step schedule {s:?} (expected c/k:<c>)"))?;
        let c: f64 = rest.parse().map_err(|e| format!("bad constant in {s:?}: {e}"))?;
        if !(c > 0.0 && c.is_finite()) {
            return Err(format!("step constant must be positive and finite, got {c}"));
        }
        Ok(StepSchedule::Harmonic { c })
    }
}

/// Which construction supplies the parameter subgradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRoute {
    /// Diagonal-gain augmentation.
    Augmented,
    /// Resolvent derivative of the direct closed loop.
    Direct,
}

/// Objective with subgradients in both arguments. `J = +inf` signals an
/// unstable closed loop; subgradients are then unavailable.
pub trait MinMaxObjective: Sync {
    fn bounds(&self) -> &ParamBox;

    fn value(&self, gamma: &GainExpansion, alpha: &[f64]) -> Result<f64>;

    fn value_and_alpha_subgradient(&self, gamma: &GainExpansion, alpha: &[f64]) -> Result<(f64, Option<Vec<f64>>)>;

    /// Unmasked gain subgradient.
    fn value_and_gain_subgradient(
        &self,
        gamma: &GainExpansion,
        alpha: &[f64],
    ) -> Result<(f64, Option<Vec<DMatrix<f64>>>)>;
}

/// `J(Gamma, alpha) = ||T_zw||_inf` of a parameter-dependent system.
#[derive(Debug, Clone)]
pub struct HinfObjective<'a> {
    pub sys: &'a ParamSystem,
    pub opts: HinfOptions,
    pub route: ParamRoute,
}

impl<'a> HinfObjective<'a> {
    pub fn new(sys: &'a ParamSystem, opts: HinfOptions) -> Self {
        HinfObjective {
            sys,
            opts,
            route: ParamRoute::Augmented,
        }
    }

    pub fn norm(&self, gamma: &GainExpansion, alpha: &[f64]) -> Result<HinfResult> {
        hinf_norm(&closed_loop(self.sys, gamma, alpha)?, &self.opts)
    }

    /// Checks the augmented realization against the direct closed loop at
    /// `(gamma, alpha)` and switches to the direct route on failure.
    pub fn gate(&mut self, gamma: &GainExpansion, alpha: &[f64]) -> Result<f64> {
        let err = param_aug_gate_error(self.sys, gamma, alpha, 20, 0)?;
        if err > GATE_TOL {
            log::warn!(
                "augmented realization deviates from the closed loop by {err:.3e}; \
                 using the direct parameter subgradient"
            );
            self.route = ParamRoute::Direct;
        } else {
            self.route = ParamRoute::Augmented;
        }
        Ok(err)
    }
}

/// Relative tolerance of the realization-equivalence gate.
pub const GATE_TOL: f64 = 1e-8;

impl MinMaxObjective for HinfObjective<'_> {
    fn bounds(&self) -> &ParamBox {
        self.sys.bounds()
    }

    fn value(&self, gamma: &GainExpansion, alpha: &[f64]) -> Result<f64> {
        Ok(self.norm(gamma, alpha)?.gamma)
    }

    fn value_and_alpha_subgradient(&self, gamma: &GainExpansion, alpha: &[f64]) -> Result<(f64, Option<Vec<f64>>)> {
        let hr = self.norm(gamma, alpha)?;
        if !hr.stable {
            return Ok((f64::INFINITY, None));
        }
        let w = uniform_weights(&hr.peaks);
        let g = match self.route {
            ParamRoute::Augmented => param_subgradient(self.sys, gamma, alpha, &hr, &w)?,
            ParamRoute::Direct => param_subgradient_direct(self.sys, gamma, alpha, &hr, &w)?,
        };
        Ok((hr.gamma, Some(g)))
    }

    fn value_and_gain_subgradient(
        &self,
        gamma: &GainExpansion,
        alpha: &[f64],
    ) -> Result<(f64, Option<Vec<DMatrix<f64>>>)> {
        let hr = self.norm(gamma, alpha)?;
        if !hr.stable {
            return Ok((f64::INFINITY, None));
        }
        let w = uniform_weights(&hr.peaks);
        Ok((hr.gamma, Some(gain_subgradient(self.sys, gamma, alpha, &hr, &w)?)))
    }
}

/// `J(Gamma, alpha)`, `+inf` for an unstable closed loop.
pub fn objective(sys: &ParamSystem, gamma: &GainExpansion, alpha: &[f64], opts: &HinfOptions) -> Result<f64> {
    HinfObjective::new(sys, *opts).value(gamma, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleOptions {
    pub schedule: StepSchedule,
    pub eps_inner: f64,
    pub eps_outer: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub max_backtrack: usize,
    /// Points per dimension of the grid on which `Gamma^0` must stabilize.
    pub validation_grid: usize,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        SaddleOptions {
            schedule: StepSchedule::Harmonic { c: 0.1 },
            eps_inner: 1e-3,
            eps_outer: 1e-3,
            max_outer: 500,
            max_inner: 200,
            max_backtrack: 30,
            validation_grid: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerResult {
    /// Best iterate found (largest `J`).
    pub alpha: Vec<f64>,
    pub j: f64,
    /// Last iterate.
    pub last_alpha: Vec<f64>,
    pub iterations: usize,
    /// Set when an iterate destabilized the loop.
    pub unstable: bool,
}

/// Projected subgradient ascent over the parameters with `Gamma` frozen.
pub fn inner_max<O: MinMaxObjective + ?Sized>(
    obj: &O,
    gamma: &GainExpansion,
    alpha0: &[f64],
    schedule: StepSchedule,
    eps_inner: f64,
    max_iter: usize,
) -> Result<InnerResult> {
    let bounds = obj.bounds();
    bounds.check(alpha0)?;
    let mut alpha = alpha0.to_vec();
    let (mut j, mut g) = obj.value_and_alpha_subgradient(gamma, &alpha)?;
    let mut best = (j, alpha.clone());
    if !j.is_finite() {
        return Ok(InnerResult {
            alpha: alpha.clone(),
            j,
            last_alpha: alpha,
            iterations: 0,
            unstable: true,
        });
    }
    let mut iterations = 0;
    for tau in 0..max_iter {
        let grad = g.take().expect("finite value carries a subgradient");
        alpha = ascent_step(&alpha, &grad, schedule.step(tau), bounds);
        iterations = tau + 1;
        let (j_new, g_new) = obj.value_and_alpha_subgradient(gamma, &alpha)?;
        if !j_new.is_finite() {
            return Ok(InnerResult {
                alpha: alpha.clone(),
                j: j_new,
                last_alpha: alpha,
                iterations,
                unstable: true,
            });
        }
        if j_new > best.0 {
            best = (j_new, alpha.clone());
        }
        let done = (j_new - j).abs() <= eps_inner;
        j = j_new;
        g = g_new;
        if done {
            break;
        }
    }
    Ok(InnerResult {
        alpha: best.1,
        j: best.0,
        last_alpha: alpha,
        iterations,
        unstable: false,
    })
}

/// `P_A(alpha + mu g)`. An infinite step is the limit of the projected ray:
/// each coordinate goes to the bound its subgradient component points at
/// and stays put where that component is zero.
fn ascent_step(alpha: &[f64], g: &[f64], mu: f64, bounds: &ParamBox) -> Vec<f64> {
    if mu.is_infinite() {
        return alpha
            .iter()
            .zip(g)
            .enumerate()
            .map(|(i, (&a, &gi))| {
                if gi > 0.0 {
                    bounds.hi[i]
                } else if gi < 0.0 {
                    bounds.lo[i]
                } else {
                    a
                }
            })
            .collect();
    }
    let moved: Vec<f64> = alpha.iter().zip(g).map(|(a, gi)| a + mu * gi).collect();
    project_params(&moved, bounds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SaddleStatus {
    Converged,
    MaxIters,
    InstabilityAbort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub k: usize,
    /// Inner maximum `J(Gamma^(k), alpha(k+1))`.
    pub j_inner: f64,
    /// `J(Gamma^(k+1), alpha(k+1))` after the accepted gain step.
    pub j: f64,
    pub alpha: Vec<f64>,
    pub inner_iterations: usize,
    pub mu: f64,
    pub backtracks: usize,
    /// Frobenius norm of the accepted change in the gain coefficients.
    pub gain_step: f64,
}

#[derive(Debug, Clone)]
pub struct SaddleResult {
    pub gamma_star: GainExpansion,
    pub alpha_star: Vec<f64>,
    pub j_star: f64,
    pub trace: Vec<TraceEntry>,
    pub status: SaddleStatus,
    pub diagnostic: Option<String>,
    pub outer_iterations: usize,
}

/// Alternates the inner ascent with projected gain descent until
/// consecutive outer values agree to `eps_outer`. Returns the strategy with
/// the smallest inner maximum seen, paired with its maximizer.
pub fn solve_saddle<O: MinMaxObjective + ?Sized>(
    obj: &O,
    gamma0: &GainExpansion,
    alpha0: &[f64],
    opts: &SaddleOptions,
) -> Result<SaddleResult> {
    let bounds = obj.bounds();
    bounds.check(alpha0)?;
    if !gamma0.is_feasible() {
        return Err(Error::Model("initial strategy violates its structure masks".into()));
    }

    let abort = |gamma: GainExpansion, alpha: Vec<f64>, j: f64, trace, k, msg: String| {
        log::warn!("{msg}");
        Ok(SaddleResult {
            gamma_star: gamma,
            alpha_star: alpha,
            j_star: j,
            trace,
            status: SaddleStatus::InstabilityAbort,
            diagnostic: Some(msg),
            outer_iterations: k,
        })
    };

    // The initial strategy has to stabilize the whole box (sampled).
    let grid = bounds.grid(opts.validation_grid.max(1));
    let bad = grid
        .par_iter()
        .map(|a| obj.value(gamma0, a).map(|j| (!j.is_finite()).then(|| a.clone())))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .next();
    if let Some(a) = bad {
        let msg = format!("initial strategy does not stabilize the loop at alpha = {a:?}");
        return abort(gamma0.clone(), alpha0.to_vec(), f64::INFINITY, Vec::new(), 0, msg);
    }

    let mut gamma = gamma0.clone();
    let mut alpha = alpha0.to_vec();
    let mut j_prev = obj.value(&gamma, &alpha)?;
    let mut trace = Vec::new();
    let mut best: Option<(f64, GainExpansion, Vec<f64>)> = None;
    let mut status = SaddleStatus::MaxIters;
    let mut k = 0;

    while k < opts.max_outer {
        let inner = inner_max(obj, &gamma, &alpha, opts.schedule, opts.eps_inner, opts.max_inner)?;
        if inner.unstable {
            let msg = format!("strategy at outer iteration {k} destabilizes the loop at alpha = {:?}", inner.alpha);
            let (j, g, a) = best.unwrap_or((f64::INFINITY, gamma, inner.alpha));
            return abort(g, a, j, trace, k, msg);
        }
        if best.as_ref().is_none_or(|b| inner.j < b.0) {
            best = Some((inner.j, gamma.clone(), inner.alpha.clone()));
        }
        alpha = inner.alpha;

        let (_, dg) = obj.value_and_gain_subgradient(&gamma, &alpha)?;
        let dg = dg.ok_or(Error::Unstable)?;
        let mut mu = opts.schedule.step(k + 1);
        let mut backtracks = 0;
        let (next, j_next) = loop {
            let stepped = GainExpansion {
                eta: gamma.eta.clone(),
                coeffs: gamma.coeffs.iter().zip(&dg).map(|(g, d)| g - d * mu).collect(),
                masks: gamma.masks.clone(),
            };
            let cand = project_gains(&stepped, &gamma.masks);
            let j = obj.value(&cand, &alpha)?;
            if j.is_finite() {
                break (cand, j);
            }
            if backtracks == opts.max_backtrack {
                let msg = format!("gain step at outer iteration {k} stays destabilizing after {backtracks} halvings");
                let (j, g, a) = best.expect("set above");
                return abort(g, a, j, trace, k, msg);
            }
            backtracks += 1;
            mu *= 0.5;
        };
        trace.push(TraceEntry {
            k,
            j_inner: inner.j,
            j: j_next,
            alpha: alpha.clone(),
            inner_iterations: inner.iterations,
            mu,
            backtracks,
            gain_step: next.distance(&gamma),
        });
        gamma = next;
        k += 1;
        let done = (j_prev - j_next).abs() <= opts.eps_outer;
        j_prev = j_next;
        if done {
            status = SaddleStatus::Converged;
            break;
        }
    }

    // Worst case of the final strategy, so it competes on equal terms.
    let last = inner_max(obj, &gamma, &alpha, opts.schedule, opts.eps_inner, opts.max_inner)?;
    if !last.unstable && best.as_ref().is_none_or(|b| last.j <= b.0) {
        best = Some((last.j, gamma, last.alpha));
    }
    let (_, gamma_star, alpha_star) = best.expect("at least one inner maximization ran");
    let j_star = obj.value(&gamma_star, &alpha_star)?;
    Ok(SaddleResult {
        gamma_star,
        alpha_star,
        j_star,
        trace,
        status,
        diagnostic: None,
        outer_iterations: k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub radius: f64,
    pub samples: usize,
    pub slack: f64,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            radius: 1e-2,
            samples: 200,
            slack: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleCheck {
    pub j_star: f64,
    /// `max J(Gamma*, alpha) - J(Gamma*, alpha*)` over sampled `alpha`.
    pub alpha_violation: f64,
    /// `max J(Gamma*, alpha*) - J(Gamma, alpha*)` over sampled `Gamma`.
    pub gain_violation: f64,
    pub passed: bool,
}

/// Random-perturbation test of the two saddle inequalities around
/// `(gamma_star, alpha_star)`.
pub fn verify_saddle<O: MinMaxObjective + ?Sized>(
    obj: &O,
    gamma_star: &GainExpansion,
    alpha_star: &[f64],
    opts: &VerifyOptions,
) -> Result<SaddleCheck> {
    let bounds = obj.bounds();
    let j_star = obj.value(gamma_star, alpha_star)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let alphas: Vec<Vec<f64>> = (0..opts.samples)
        .map(|_| {
            let d = ball_sample(&mut rng, alpha_star.len(), opts.radius);
            let moved: Vec<f64> = alpha_star.iter().zip(&d).map(|(a, x)| a + x).collect();
            project_params(&moved, bounds)
        })
        .collect();
    let free = gamma_star.free_count();
    let gammas: Vec<GainExpansion> = (0..opts.samples)
        .map(|_| {
            let d = ball_sample(&mut rng, free, opts.radius);
            let mut it = d.into_iter();
            let coeffs = gamma_star
                .coeffs
                .iter()
                .zip(&gamma_star.masks)
                .map(|(g, m)| {
                    let mut out = g.clone();
                    for (x, &allowed) in out.iter_mut().zip(m.iter()) {
                        if allowed != 0.0 {
                            *x += it.next().expect("one draw per free entry");
                        }
                    }
                    out
                })
                .collect();
            GainExpansion {
                eta: gamma_star.eta.clone(),
                coeffs,
                masks: gamma_star.masks.clone(),
            }
        })
        .collect();

    let alpha_violation = alphas
        .par_iter()
        .map(|a| obj.value(gamma_star, a).map(|j| j - j_star))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0f64, f64::max);
    let gain_violation = gammas
        .par_iter()
        .map(|g| obj.value(g, alpha_star).map(|j| j_star - j))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0f64, f64::max);
    Ok(SaddleCheck {
        j_star,
        alpha_violation,
        gain_violation,
        passed: alpha_violation <= opts.slack && gain_violation <= opts.slack,
    })
}

/// Uniform sample from the Euclidean ball of the given radius.
fn ball_sample(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    if dim == 0 {
        return Vec::new();
    }
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
    v.into_iter().map(|x| x * r / norm).collect()
}
