//! Stability, frequency responses and the H-infinity norm with its peaks.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, to_complex, CMatrix};
use crate::sysmodel::StateSpace;

/// A frequency in rad/s, or the point at infinity. Serialized as a number
/// or the string `"INF"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Frequency {
    Finite(f64),
    Infinite,
}

impl Serialize for Frequency {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Frequency::Finite(w) => s.serialize_f64(*w),
            Frequency::Infinite => s.serialize_str("INF"),
        }
    }
}

impl<'de> Deserialize<'de> for Frequency {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(w) => Ok(Frequency::Finite(w)),
            Raw::Tag(t) if t == "INF" => Ok(Frequency::Infinite),
            Raw::Tag(t) => Err(serde::de::Error::custom(format!("bad frequency {t:?}"))),
        }
    }
}

impl std::fmt::Display for Frequency {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Frequency::Finite(w) => write!(f, "{w}"),
            Frequency::Infinite => f.write_str("INF"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HinfOptions {
    pub rel_tol: f64,
    pub tol_peak: f64,
    pub tol_mult: f64,
    pub stab_margin: f64,
    pub max_iter: usize,
}

impl Default for HinfOptions {
    fn default() -> Self {
        HinfOptions {
            rel_tol: 1e-7,
            tol_peak: 1e-6,
            tol_mult: 1e-6,
            stab_margin: 1e-9,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Peak {
    pub omega: Frequency,
    /// Orthonormal basis of the leading left singular subspace.
    pub q: CMatrix,
    pub sigma: f64,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HinfResult {
    pub gamma: f64,
    pub peaks: Vec<Peak>,
    pub stable: bool,
}

impl HinfResult {
    fn unstable() -> Self {
        HinfResult {
            gamma: f64::INFINITY,
            peaks: Vec::new(),
            stable: false,
        }
    }
}

/// Weights `Y_1..Y_q`, each Hermitian PSD, with total trace one.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectraplexWeights {
    pub y: Vec<CMatrix>,
}

impl SpectraplexWeights {
    pub fn total_trace(&self) -> f64 {
        self.y.iter().map(|y| y.trace().re).sum()
    }
}

/// `Y_nu = I / (q m_nu)`.
pub fn uniform_weights(peaks: &[Peak]) -> SpectraplexWeights {
    let q = peaks.len() as f64;
    let y = peaks
        .iter()
        .map(|p| {
            let m = p.multiplicity;
            CMatrix::identity(m, m) * Complex64::new(1.0 / (q * m as f64), 0.0)
        })
        .collect();
    SpectraplexWeights { y }
}

pub fn spectral_abscissa(a: &DMatrix<f64>) -> Result<f64> {
    Ok(linalg::spectral_abscissa_of(&linalg::eigenvalues(a)?))
}

/// `(jw I - A)^{-1}`; the zero matrix at infinity.
pub fn resolvent(a: &DMatrix<f64>, omega: Frequency) -> Result<CMatrix> {
    let n = a.nrows();
    match omega {
        Frequency::Infinite => Ok(CMatrix::zeros(n, n)),
        Frequency::Finite(w) => {
            let m = CMatrix::identity(n, n) * Complex64::new(0.0, w) - to_complex(a);
            m.lu().try_inverse().ok_or(Error::SingularResolvent(w))
        }
    }
}

/// `C (jw I - A)^{-1} B + D` through one LU solve.
pub fn freq_response(ss: &StateSpace, omega: Frequency) -> Result<CMatrix> {
    let d = to_complex(&ss.d);
    match omega {
        Frequency::Infinite => Ok(d),
        Frequency::Finite(w) => {
            let n = ss.states();
            if n == 0 {
                return Ok(d);
            }
            let m = CMatrix::identity(n, n) * Complex64::new(0.0, w) - to_complex(&ss.a);
            let x = m
                .lu()
                .solve(&to_complex(&ss.b))
                .ok_or(Error::SingularResolvent(w))?;
            if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::SingularResolvent(w));
            }
            Ok(to_complex(&ss.c) * x + d)
        }
    }
}

fn sigma_at(ss: &StateSpace, w: f64) -> Result<f64> {
    Ok(linalg::sigma_max(&freq_response(ss, Frequency::Finite(w))?))
}

/// Hamiltonian whose imaginary eigenvalues `jw` mark frequencies where
/// `gamma` is a singular value of `T(jw)`. `None` when `gamma` is a singular
/// value of `D`.
fn hamiltonian(ss: &StateSpace, gamma: f64) -> Option<DMatrix<f64>> {
    let n = ss.states();
    let (a, b, c, d) = (&ss.a, &ss.b, &ss.c, &ss.d);
    let g2 = gamma * gamma;
    let r = d.transpose() * d - DMatrix::identity(d.ncols(), d.ncols()) * g2;
    let s = d * d.transpose() - DMatrix::identity(d.nrows(), d.nrows()) * g2;
    let r_inv = r.try_inverse()?;
    let s_inv = s.try_inverse()?;
    let ak = a - b * &r_inv * d.transpose() * c;
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&ak);
    h.view_mut((0, n), (n, n)).copy_from(&(b * &r_inv * b.transpose() * (-gamma)));
    h.view_mut((n, 0), (n, n)).copy_from(&(c.transpose() * &s_inv * c * gamma));
    h.view_mut((n, n), (n, n)).copy_from(&(-ak.transpose()));
    Some(h)
}

/// Validated nonnegative frequencies at which `gamma` is a singular value
/// of `T(jw)`, ascending.
fn crossings(ss: &StateSpace, gamma: f64) -> Result<Vec<f64>> {
    let Some(h) = hamiltonian(ss, gamma) else {
        return Ok(Vec::new());
    };
    let eigs = linalg::eigenvalues(&h)?;
    let mut ws: Vec<f64> = Vec::new();
    for z in eigs {
        if z.im < -1e-12 * (1.0 + z.norm()) {
            continue;
        }
        if z.re.abs() > 1e-6 * (1.0 + z.norm()) {
            continue;
        }
        let w = z.im.max(0.0);
        let t = freq_response(ss, Frequency::Finite(w))?;
        let hit = linalg::singular_values(&t)
            .iter()
            .any(|s| (s - gamma).abs() <= 1e-5 * gamma.max(f64::MIN_POSITIVE));
        if hit {
            ws.push(w);
        }
    }
    ws.sort_by(f64::total_cmp);
    ws.dedup_by(|a, b| (*a - *b).abs() <= 1e-10 * (1.0 + b.abs()));
    Ok(ws)
}

/// Golden-section maximization of `sigma_max(T(jw))` on `[a, b]`.
fn golden_max(ss: &StateSpace, a: f64, b: f64) -> Result<(f64, f64)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (a, b);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = sigma_at(ss, x1)?;
    let mut f2 = sigma_at(ss, x2)?;
    for _ in 0..200 {
        if b - a <= 1e-12 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = sigma_at(ss, x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = sigma_at(ss, x2)?;
        }
    }
    Ok(if f1 >= f2 { (x1, f1) } else { (x2, f2) })
}

/// True when the response just past the crossing `w0` is above `level`, so
/// the set above the level extends to the right without another crossing.
fn tail_above(ss: &StateSpace, w0: f64, level: f64) -> Result<bool> {
    Ok(sigma_at(ss, w0 * (1.0 + 1e-4) + 1e-9)? > level)
}

/// Maximum of `sigma_max(T(jw))` beyond the last level crossing `w0`, where
/// the set above the level is unbounded: a log sweep up to `1e6 (w0 + 1)`
/// refined by golden section.
fn tail_max(ss: &StateSpace, w0: f64) -> Result<(f64, f64)> {
    const POINTS: usize = 80;
    let lo = w0.max(1e-12);
    let hi = 1e6 * (w0 + 1.0);
    let ws: Vec<f64> = (0..POINTS)
        .map(|i| lo * (hi / lo).powf(i as f64 / (POINTS - 1) as f64))
        .collect();
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &w) in ws.iter().enumerate() {
        let s = sigma_at(ss, w)?;
        if s > best.1 {
            best = (i, s);
        }
    }
    let (a, b) = (ws[best.0.saturating_sub(1)], ws[(best.0 + 1).min(POINTS - 1)]);
    let (w, s) = golden_max(ss, a, b)?;
    Ok(if s >= best.1 { (w, s) } else { (ws[best.0], best.1) })
}

fn leading_subspace(t: &CMatrix, tol_mult: f64) -> (CMatrix, f64, usize) {
    let (u, s) = linalg::left_singular(t);
    let s1 = s.first().copied().unwrap_or(0.0);
    let m = s.iter().take_while(|&&x| x >= s1 * (1.0 - tol_mult)).count().max(1);
    (u.columns(0, m).into_owned(), s1, m)
}

/// H-infinity norm by the level-set (Hamiltonian) iteration, followed by a
/// sweep that isolates every frequency attaining the norm.
pub fn hinf_norm(ss: &StateSpace, opts: &HinfOptions) -> Result<HinfResult> {
    let n = ss.states();
    let p = ss.outputs();
    if n > 0 && spectral_abscissa(&ss.a)? >= -opts.stab_margin {
        return Ok(HinfResult::unstable());
    }
    let sigma_d = linalg::sigma_max_real(&ss.d);
    let dynamic = n > 0 && ss.b.iter().any(|&x| x != 0.0) && ss.c.iter().any(|&x| x != 0.0);
    if !dynamic {
        let t = to_complex(&ss.d);
        let (q, sigma, multiplicity) = if sigma_d == 0.0 {
            (CMatrix::identity(p, p), 0.0, p)
        } else {
            leading_subspace(&t, opts.tol_mult)
        };
        return Ok(HinfResult {
            gamma: sigma_d,
            peaks: vec![Peak {
                omega: Frequency::Infinite,
                q,
                sigma,
                multiplicity,
            }],
            stable: true,
        });
    }

    // Initial lower bound from D, DC, the pole magnitudes and a coarse log
    // sweep around them. A start far above sigma(D) keeps the Hamiltonian
    // well conditioned when the peak only slightly exceeds the value at
    // infinity.
    let mut lb = sigma_d;
    let mut w_lb = Frequency::Infinite;
    let poles = linalg::eigenvalues(&ss.a)?;
    let mut probe = vec![0.0];
    probe.extend(poles.iter().map(|z| z.norm()));
    probe.extend(poles.iter().map(|z| z.im.abs()).filter(|&w| w > 0.0));
    let mags = poles.iter().map(|z| z.norm()).filter(|&m| m > 0.0);
    let (lo, hi) = mags.fold((f64::INFINITY, 0.0f64), |(l, h), m| (l.min(m), h.max(m)));
    if hi > 0.0 {
        let (lo, hi) = (lo * 1e-2, hi * 1e2);
        probe.extend((0..40).map(|i| lo * (hi / lo).powf(i as f64 / 39.0)));
    }
    for w in probe {
        let s = sigma_at(ss, w)?;
        if s > lb {
            lb = s;
            w_lb = Frequency::Finite(w);
        }
    }
    if lb == 0.0 {
        // Nonzero realization with an identically zero response at every
        // probe; fall back to a tiny positive level.
        lb = f64::MIN_POSITIVE;
    }

    let mut iter = 0;
    loop {
        iter += 1;
        if iter > opts.max_iter {
            return Err(Error::Stagnation(opts.max_iter));
        }
        let gamma = (1.0 + 2.0 * opts.rel_tol) * lb;
        let ws = crossings(ss, gamma)?;
        if ws.is_empty() {
            break;
        }
        let mut best = (f64::NEG_INFINITY, 0.0);
        for pair in ws.windows(2) {
            let m = 0.5 * (pair[0] + pair[1]);
            let s = sigma_at(ss, m)?;
            if s > best.0 {
                best = (s, m);
            }
        }
        let last = ws[ws.len() - 1];
        if tail_above(ss, last, gamma)? {
            let (w, s) = tail_max(ss, last)?;
            if s > best.0 {
                best = (s, w);
            }
        }
        if best.0 <= gamma {
            break;
        }
        lb = best.0;
        w_lb = Frequency::Finite(best.1);
    }

    // Peak isolation below the converged level.
    let level = (lb * (1.0 - 2.0 * opts.tol_peak)).max(sigma_d * (1.0 + 1e-9) + f64::MIN_POSITIVE);
    let mut bounds = vec![0.0];
    if level < lb {
        bounds.extend(crossings(ss, level)?.into_iter().filter(|&w| w > 0.0));
    }
    let mut cands: Vec<(Frequency, f64)> = Vec::new();
    let mut covered = false;
    for pair in bounds.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if sigma_at(ss, 0.5 * (a + b))? < level {
            continue;
        }
        if let Frequency::Finite(w) = w_lb {
            covered |= a <= w && w <= b;
        }
        let (mut w, mut s) = golden_max(ss, a, b)?;
        if a == 0.0 {
            let s0 = sigma_at(ss, 0.0)?;
            if s0 >= s {
                w = 0.0;
                s = s0;
            }
        }
        cands.push((Frequency::Finite(w), s));
    }
    let last = bounds[bounds.len() - 1];
    if last > 0.0 && tail_above(ss, last, level)? {
        let (w, s) = tail_max(ss, last)?;
        if s >= level {
            if let Frequency::Finite(x) = w_lb {
                covered |= x >= last;
            }
            cands.push((Frequency::Finite(w), s));
        }
    }
    if let Frequency::Finite(w) = w_lb {
        if !covered {
            let lo = w * (1.0 - 1e-3);
            let hi = w * (1.0 + 1e-3) + 1e-9;
            let (wr, sr) = golden_max(ss, lo, hi)?;
            let s0 = sigma_at(ss, w)?;
            cands.push(if sr >= s0 {
                (Frequency::Finite(wr), sr)
            } else {
                (Frequency::Finite(w), s0)
            });
        }
    }
    cands.push((Frequency::Infinite, sigma_d));
    let gamma = cands.iter().map(|c| c.1).fold(lb, f64::max);

    let mut peaks: Vec<Peak> = Vec::new();
    for (omega, s) in cands {
        if s < gamma * (1.0 - opts.tol_peak) {
            continue;
        }
        let dup = peaks.iter().any(|p| match (p.omega, omega) {
            (Frequency::Finite(x), Frequency::Finite(y)) => (x - y).abs() <= 1e-6 * (1.0 + x.abs()),
            (Frequency::Infinite, Frequency::Infinite) => true,
            _ => false,
        });
        if dup {
            continue;
        }
        let t = freq_response(ss, omega)?;
        let (q, sigma, multiplicity) = leading_subspace(&t, opts.tol_mult);
        peaks.push(Peak {
            omega,
            q,
            sigma: sigma.min(gamma),
            multiplicity,
        });
    }
    peaks.sort_by(|a, b| b.sigma.total_cmp(&a.sigma));
    Ok(HinfResult {
        gamma,
        peaks,
        stable: true,
    })
}
