//! Built-in numerical cross-checks run by `structhinf selftest`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use structhinf::hinf::{freq_response, hinf_norm, spectral_abscissa, uniform_weights, Frequency, HinfOptions};
use structhinf::linalg::sigma_max;
use structhinf::subgrad::{gain_subgradient, param_aug_gate_error, param_subgradient, param_subgradient_direct};
use structhinf::sysmodel::{closed_loop, GainExpansion, StateSpace};
use structhinf::Error;

use crate::sysfile::{self, Loaded, SystemFile};
use crate::CliError;

pub const EXAMPLE1: &str = include_str!("../fixtures/example1.json");
pub const PLATOON: &str = include_str!("../fixtures/platoon.json");

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

pub fn fixture(text: &str) -> Result<Loaded, CliError> {
    let file: SystemFile = serde_json::from_str(text).map_err(|e| CliError::Parse {
        path: "<embedded>".into(),
        msg: e.to_string(),
    })?;
    sysfile::build(file)
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn sigma_at(ss: &StateSpace, w: f64) -> Result<f64, Error> {
    Ok(sigma_max(&freq_response(ss, Frequency::Finite(w))?))
}

/// Largest singular value over a dense log grid, refined by golden section
/// around the best grid point.
fn grid_norm(ss: &StateSpace) -> Result<f64, Error> {
    let n = 4000;
    let (lo, hi) = (-3.0f64, 3.0f64);
    let ws: Vec<f64> = (0..n).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (n - 1) as f64)).collect();
    let mut best = (sigma_at(ss, 0.0)?, 0usize, true);
    for (i, w) in ws.iter().enumerate() {
        let s = sigma_at(ss, *w)?;
        if s > best.0 {
            best = (s, i, false);
        }
    }
    let inf = sigma_max(&freq_response(ss, Frequency::Infinite)?);
    if best.2 {
        return Ok(best.0.max(inf));
    }
    let (mut a, mut b) = (ws[best.1.saturating_sub(1)], ws[(best.1 + 1).min(n - 1)]);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if sigma_at(ss, c)? > sigma_at(ss, d)? {
            b = d;
        } else {
            a = c;
        }
    }
    Ok(best.0.max(sigma_at(ss, 0.5 * (a + b))?).max(inf))
}

fn random_stable(rng: &mut ChaCha8Rng) -> Result<StateSpace, Error> {
    let n = rng.random_range(2..=6);
    let m = rng.random_range(1..=3);
    let p = rng.random_range(1..=3);
    let mut a = gaussian(rng, n, n) * 2.0;
    let shift = spectral_abscissa(&a)? + rng.random_range(0.05..1.0);
    for i in 0..n {
        a[(i, i)] -= shift;
    }
    StateSpace::new(a, gaussian(rng, n, m), gaussian(rng, p, n), gaussian(rng, p, m) * 0.3)
}

fn norm_vs_grid(seed: u64) -> Result<Check, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = HinfOptions::default();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let ss = random_stable(&mut rng)?;
        let g = hinf_norm(&ss, &opts)?.gamma;
        let o = grid_norm(&ss)?;
        worst = worst.max((g - o).abs() / o.max(1e-12));
    }
    Ok(Check {
        name: "hinf-norm-vs-grid".into(),
        passed: worst <= 1e-6,
        detail: format!("10 random systems, max relative gap {worst:.2e}"),
    })
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn gain_fd(sys: &Loaded, alpha: &[f64], seed: u64) -> Result<Check, Error> {
    let name = "gain-subgradient-vs-fd".to_string();
    let gamma = sys.initial_strategy();
    let opts = HinfOptions::default();
    let hr = hinf_norm(&closed_loop(&sys.sys, &gamma, alpha)?, &opts)?;
    if hr.peaks.len() != 1 || hr.peaks[0].multiplicity != 1 {
        return Ok(Check {
            name,
            passed: true,
            detail: "skipped: peak is not simple".into(),
        });
    }
    let g = gain_subgradient(&sys.sys, &gamma, alpha, &hr, &uniform_weights(&hr.peaks))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir: Vec<DMatrix<f64>> = gamma
        .masks
        .iter()
        .map(|m| gaussian(&mut rng, m.nrows(), m.ncols()).component_mul(m))
        .collect();
    let h = 1e-6;
    let shifted = |s: f64| GainExpansion {
        eta: gamma.eta.clone(),
        coeffs: gamma.coeffs.iter().zip(&dir).map(|(c, d)| c + d * s).collect(),
        masks: gamma.masks.clone(),
    };
    let jp = hinf_norm(&closed_loop(&sys.sys, &shifted(h), alpha)?, &opts)?.gamma;
    let jm = hinf_norm(&closed_loop(&sys.sys, &shifted(-h), alpha)?, &opts)?.gamma;
    let fd = (jp - jm) / (2.0 * h);
    let an = inner(&g, &dir);
    let err = (fd - an).abs() / an.abs().max(1e-3);
    Ok(Check {
        name,
        passed: err <= 1e-4,
        detail: format!("directional derivative {an:.6e}, central difference {fd:.6e}"),
    })
}

fn param_fd(sys: &Loaded, alpha: &[f64], seed: u64) -> Result<Check, Error> {
    let name = "param-subgradient-vs-fd".to_string();
    let gamma = sys.initial_strategy();
    let opts = HinfOptions::default();
    let hr = hinf_norm(&closed_loop(&sys.sys, &gamma, alpha)?, &opts)?;
    if hr.peaks.len() != 1 || hr.peaks[0].multiplicity != 1 {
        return Ok(Check {
            name,
            passed: true,
            detail: "skipped: peak is not simple".into(),
        });
    }
    let g = param_subgradient(&sys.sys, &gamma, alpha, &hr, &uniform_weights(&hr.peaks))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir: Vec<f64> = alpha.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let h = 1e-6;
    let at = |s: f64| -> Vec<f64> { alpha.iter().zip(&dir).map(|(a, d)| a + d * s).collect() };
    let jp = hinf_norm(&closed_loop(&sys.sys, &gamma, &at(h))?, &opts)?.gamma;
    let jm = hinf_norm(&closed_loop(&sys.sys, &gamma, &at(-h))?, &opts)?.gamma;
    let fd = (jp - jm) / (2.0 * h);
    let an: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
    let err = (fd - an).abs() / an.abs().max(1e-3);
    Ok(Check {
        name,
        passed: err <= 1e-4,
        detail: format!("directional derivative {an:.6e}, central difference {fd:.6e}"),
    })
}

fn routes_agree(label: &str, sys: &Loaded, alpha: &[f64]) -> Result<Check, Error> {
    let gamma = sys.initial_strategy();
    let hr = hinf_norm(&closed_loop(&sys.sys, &gamma, alpha)?, &HinfOptions::default())?;
    let w = uniform_weights(&hr.peaks);
    let a = param_subgradient(&sys.sys, &gamma, alpha, &hr, &w)?;
    let d = param_subgradient_direct(&sys.sys, &gamma, alpha, &hr, &w)?;
    let scale = d.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let gap = a.iter().zip(&d).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale;
    Ok(Check {
        name: format!("param-routes-{label}"),
        passed: gap <= 1e-8,
        detail: format!("augmented vs direct, relative gap {gap:.2e}"),
    })
}

fn gate(label: &str, sys: &Loaded, seed: u64) -> Result<Check, Error> {
    let err = param_aug_gate_error(&sys.sys, &sys.initial_strategy(), &sys.initial_alpha(), 20, seed)?;
    Ok(Check {
        name: format!("realization-gate-{label}"),
        passed: err <= 1e-8,
        detail: format!("max relative deviation {err:.2e}"),
    })
}

pub fn run_all(seed: u64) -> Result<Vec<Check>, CliError> {
    let ex1 = fixture(EXAMPLE1)?;
    let platoon = fixture(PLATOON)?;
    let probe = [0.3, -0.2];
    Ok(vec![
        norm_vs_grid(seed)?,
        gain_fd(&ex1, &probe, seed)?,
        param_fd(&ex1, &probe, seed)?,
        routes_agree("example1", &ex1, &probe)?,
        routes_agree("platoon", &platoon, &[0.6, 0.8, 0.7])?,
        gate("example1", &ex1, seed)?,
        gate("platoon", &platoon, seed)?,
    ])
}
