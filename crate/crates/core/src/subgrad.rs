//! Subgradients of the closed-loop H-infinity norm with respect to the gain
//! coefficients and the parameters.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hinf::{freq_response, resolvent, Frequency, HinfResult, SpectraplexWeights};
use crate::linalg::{self, to_complex, CMatrix};
use crate::sysmodel::{
    closed_loop_from, closed_loop_unchecked, eval_strategy, weighted_gain, GainExpansion,
    ParamSystem, StateSpace,
};

/// Closed loop with the measurement stacked per strategy basis function:
/// outputs `[z; y']`, inputs `[w; u]`, so that the (1,2) and (2,1) blocks of
/// its transfer matrix are `G_12` and `G_21`.
#[derive(Debug, Clone)]
pub struct GainAugRealization {
    pub ss: StateSpace,
    /// Sizes of the output blocks `(o_z, L' o_y)`.
    pub out_split: (usize, usize),
    /// Sizes of the input blocks `(m_w, m_u)`.
    pub in_split: (usize, usize),
}

impl GainAugRealization {
    /// Blocks `(T, G_12, G_21)` of the frequency response.
    pub fn blocks(&self, omega: Frequency) -> Result<(CMatrix, CMatrix, CMatrix)> {
        let h = freq_response(&self.ss, omega)?;
        let (oz, oy) = self.out_split;
        let (mw, mu) = self.in_split;
        Ok((
            h.view((0, 0), (oz, mw)).into_owned(),
            h.view((0, mw), (oz, mu)).into_owned(),
            h.view((oz, 0), (oy, mw)).into_owned(),
        ))
    }
}

pub fn build_gain_aug(sys: &ParamSystem, gamma: &GainExpansion, alpha: &[f64]) -> Result<GainAugRealization> {
    sys.bounds().check(alpha)?;
    let m = sys.matrices_unchecked(alpha);
    let eta = gamma.eta.eval(alpha);
    let k_stacked = gamma.stacked();
    let c_yp = linalg::vstack(&eta.iter().map(|e| &m.c_y * *e).collect::<Vec<_>>().iter().collect::<Vec<_>>());
    let d_ypw = linalg::vstack(&eta.iter().map(|e| &m.d_yw * *e).collect::<Vec<_>>().iter().collect::<Vec<_>>());
    let perf = sys.performance();
    let bk = &m.b_u * &k_stacked;
    let dk = &perf.d_zu * &k_stacked;
    let a = &m.a + &bk * &c_yp;
    let b_cl = &m.b_w + &bk * &d_ypw;
    let c_cl = &perf.c_z + &dk * &c_yp;
    let d_cl = &perf.d_zw + &dk * &d_ypw;

    let (oz, oyp) = (c_cl.nrows(), c_yp.nrows());
    let (mw, mu) = (b_cl.ncols(), m.b_u.ncols());
    let b = linalg::hstack(&[&b_cl, &m.b_u]);
    let c = linalg::vstack(&[&c_cl, &c_yp]);
    let mut d = DMatrix::zeros(oz + oyp, mw + mu);
    d.view_mut((0, 0), (oz, mw)).copy_from(&d_cl);
    d.view_mut((0, mw), (oz, mu)).copy_from(&perf.d_zu);
    d.view_mut((oz, 0), (oyp, mw)).copy_from(&d_ypw);
    Ok(GainAugRealization {
        ss: StateSpace { a, b, c, d },
        out_split: (oz, oyp),
        in_split: (mw, mu),
    })
}

fn require_stable(hr: &HinfResult) -> Result<()> {
    if hr.stable && hr.gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::Unstable)
    }
}

/// `T(jw)^* Q Y Q^*` for one peak.
fn weighted_adjoint(t: &CMatrix, q: &CMatrix, y: &CMatrix) -> CMatrix {
    t.adjoint() * (q * y * q.adjoint())
}

/// Gain subgradient, one matrix per strategy basis function (unmasked).
pub fn gain_subgradient(
    sys: &ParamSystem,
    gamma: &GainExpansion,
    alpha: &[f64],
    hr: &HinfResult,
    w: &SpectraplexWeights,
) -> Result<Vec<DMatrix<f64>>> {
    require_stable(hr)?;
    let (mu, oy) = gamma.shape();
    let lp = gamma.len();
    if hr.gamma == 0.0 {
        return Ok(vec![DMatrix::zeros(mu, oy); lp]);
    }
    let aug = build_gain_aug(sys, gamma, alpha)?;
    let mut acc = DMatrix::<f64>::zeros(mu, lp * oy);
    for (peak, y) in hr.peaks.iter().zip(&w.y) {
        let (t, g12, g21) = aug.blocks(peak.omega)?;
        let prod = g21 * weighted_adjoint(&t, &peak.q, y) * g12;
        acc += prod.map(|z| z.re).transpose();
    }
    acc /= hr.gamma;
    Ok((0..lp).map(|l| acc.columns(l * oy, oy).into_owned()).collect())
}

/// Gain subgradient with each coefficient restricted to its mask.
pub fn masked_gain_subgradient(
    sys: &ParamSystem,
    gamma: &GainExpansion,
    alpha: &[f64],
    hr: &HinfResult,
    w: &SpectraplexWeights,
) -> Result<Vec<DMatrix<f64>>> {
    let g = gain_subgradient(sys, gamma, alpha, hr, w)?;
    Ok(g.iter().zip(&gamma.masks).map(|(d, m)| d.component_mul(m)).collect())
}

/// Realization in which all parameter dependence sits in a diagonal gain
/// `K''(alpha)` closing a constant plant. Inputs `[w; u'']`, outputs
/// `[z; y'']`.
#[derive(Debug, Clone)]
pub struct ParamAugRealization {
    pub ss: StateSpace,
    /// Diagonal of `K''(alpha)`.
    pub k_diag: DVector<f64>,
    /// Diagonal of `dK''/d alpha_i`, one per parameter.
    pub k_diag_grad: Vec<DVector<f64>>,
    pub out_split: (usize, usize),
    pub in_split: (usize, usize),
}

impl ParamAugRealization {
    /// `(T, H_12, H_21)`.
    pub fn blocks(&self, omega: Frequency) -> Result<(CMatrix, CMatrix, CMatrix)> {
        let h = freq_response(&self.ss, omega)?;
        let (oz, d) = self.out_split;
        let (mw, du) = self.in_split;
        Ok((
            h.view((0, 0), (oz, mw)).into_owned(),
            h.view((0, mw), (oz, du)).into_owned(),
            h.view((oz, 0), (d, mw)).into_owned(),
        ))
    }

    /// The (1,1) block as its own realization.
    pub fn performance_channel(&self) -> StateSpace {
        let (oz, _) = self.out_split;
        let (mw, _) = self.in_split;
        StateSpace {
            a: self.ss.a.clone(),
            b: self.ss.b.columns(0, mw).into_owned(),
            c: self.ss.c.rows(0, oz).into_owned(),
            d: self.ss.d.view((0, 0), (oz, mw)).into_owned(),
        }
    }
}

/// Block sizes of `K''`: `n L`, `m_u L L' L`, `m_u L' L`, each appearing
/// twice.
fn param_aug_sizes(n: usize, m_u: usize, l: usize, lp: usize) -> [usize; 3] {
    [n * l, m_u * l * lp * l, m_u * lp * l]
}

fn k_diag_from(xi: &[f64], eta: &[f64], n: usize, m_u: usize) -> DVector<f64> {
    let (l, lp) = (xi.len(), eta.len());
    let [s1, s2, s3] = param_aug_sizes(n, m_u, l, lp);
    let mut k = Vec::with_capacity(2 * (s1 + s2 + s3));
    for _ in 0..2 {
        for &x in xi {
            k.extend(std::iter::repeat_n(x, n));
        }
        for &x1 in xi {
            for &e in eta {
                for &x2 in xi {
                    k.extend(std::iter::repeat_n(x1 * e * x2, m_u));
                }
            }
        }
        for &e in eta {
            for &x2 in xi {
                k.extend(std::iter::repeat_n(e * x2, m_u));
            }
        }
    }
    DVector::from_vec(k)
}

/// Product-rule derivative of the diagonal of `K''`.
fn k_diag_deriv(xi: &[f64], dxi: &[f64], eta: &[f64], deta: &[f64], n: usize, m_u: usize) -> DVector<f64> {
    let (l, lp) = (xi.len(), eta.len());
    let [s1, s2, s3] = param_aug_sizes(n, m_u, l, lp);
    let mut k = Vec::with_capacity(2 * (s1 + s2 + s3));
    for _ in 0..2 {
        for &dx in dxi {
            k.extend(std::iter::repeat_n(dx, n));
        }
        for a in 0..l {
            for b in 0..lp {
                for c in 0..l {
                    let v = dxi[a] * eta[b] * xi[c] + xi[a] * deta[b] * xi[c] + xi[a] * eta[b] * dxi[c];
                    k.extend(std::iter::repeat_n(v, m_u));
                }
            }
        }
        for b in 0..lp {
            for c in 0..l {
                k.extend(std::iter::repeat_n(deta[b] * xi[c] + eta[b] * dxi[c], m_u));
            }
        }
    }
    DVector::from_vec(k)
}

pub fn build_param_aug(sys: &ParamSystem, gamma: &GainExpansion, alpha: &[f64]) -> Result<ParamAugRealization> {
    sys.bounds().check(alpha)?;
    let (n, m_w, m_u, o_y) = (sys.n(), sys.m_w(), sys.m_u(), sys.o_y());
    let perf = sys.performance();
    let o_z = perf.c_z.nrows();
    let terms = sys.terms();
    let l = terms.len();
    let lp = gamma.len();
    let [s1, s2, s3] = param_aug_sizes(n, m_u, l, lp);
    let half = s1 + s2 + s3;
    let d = 2 * half;

    // stack over (l', l2) of G^(l') C_y^(l2) and G^(l') D_yw^(l2).
    let mut gc = DMatrix::zeros(s3, n);
    let mut gd = DMatrix::zeros(s3, m_w);
    for (b, g) in gamma.coeffs.iter().enumerate() {
        if g.shape() != (m_u, o_y) {
            return Err(Error::Dimension {
                what: format!("G[{b}] in the parameter augmentation"),
                expected: (m_u, o_y),
                found: g.shape(),
            });
        }
        for (c, t) in terms.iter().enumerate() {
            let r = (b * l + c) * m_u;
            gc.view_mut((r, 0), (m_u, n)).copy_from(&(g * &t.c_y));
            gd.view_mut((r, 0), (m_u, m_w)).copy_from(&(g * &t.d_yw));
        }
    }

    let mut c_yy = DMatrix::zeros(d, n);
    for (a, t) in terms.iter().enumerate() {
        c_yy.view_mut((a * n, 0), (n, n)).copy_from(&t.a);
    }
    for copy in 0..=l {
        c_yy.view_mut((s1 + copy * s3, 0), (s3, n)).copy_from(&gc);
    }

    let mut d_yyw = DMatrix::zeros(d, m_w);
    for (a, t) in terms.iter().enumerate() {
        d_yyw.view_mut((half + a * n, 0), (n, m_w)).copy_from(&t.b_w);
    }
    for copy in 0..=l {
        d_yyw.view_mut((half + s1 + copy * s3, 0), (s3, m_w)).copy_from(&gd);
    }

    // B_u'' = [1^T (x) I_n, Upsilon, 0, 1^T (x) I_n, Upsilon, 0]. The zero
    // blocks have width m_u L L' so that the columns line up with K''.
    let mut b_uu = DMatrix::zeros(n, d);
    for offset in [0, half] {
        for a in 0..l {
            b_uu.view_mut((0, offset + a * n), (n, n)).fill_with_identity();
        }
        for (a, t) in terms.iter().enumerate() {
            for rep in 0..(l * lp) {
                let col = offset + s1 + (a * l * lp + rep) * m_u;
                b_uu.view_mut((0, col), (n, m_u)).copy_from(&t.b_u);
            }
        }
    }

    let mut d_zuu = DMatrix::zeros(o_z, d);
    for offset in [0, half] {
        for rep in 0..(l * lp) {
            d_zuu
                .view_mut((0, offset + s1 + s2 + rep * m_u), (o_z, m_u))
                .copy_from(&perf.d_zu);
        }
    }

    let xi = sys.xi().eval(alpha);
    let eta = gamma.eta.eval(alpha);
    let k_diag = k_diag_from(&xi, &eta, n, m_u);
    let jx = sys.xi().jacobian(alpha);
    let je = gamma.eta.jacobian(alpha);
    let k_diag_grad = (0..sys.p())
        .map(|i| k_diag_deriv(&xi, &jx[i], &eta, &je[i], n, m_u))
        .collect();

    // Column-scale instead of forming the diagonal matrix.
    let mut bk = b_uu.clone();
    let mut dk = d_zuu.clone();
    for (j, kj) in k_diag.iter().enumerate() {
        bk.column_mut(j).scale_mut(*kj);
        dk.column_mut(j).scale_mut(*kj);
    }
    let a = &bk * &c_yy;
    let b_pp = &bk * &d_yyw;
    let c_pp = &perf.c_z + &dk * &c_yy;
    let d_pp = &perf.d_zw + &dk * &d_yyw;

    let b = linalg::hstack(&[&b_pp, &b_uu]);
    let c = linalg::vstack(&[&c_pp, &c_yy]);
    let mut dd = DMatrix::zeros(o_z + d, m_w + d);
    dd.view_mut((0, 0), (o_z, m_w)).copy_from(&d_pp);
    dd.view_mut((0, m_w), (o_z, d)).copy_from(&d_zuu);
    dd.view_mut((o_z, 0), (d, m_w)).copy_from(&d_yyw);
    Ok(ParamAugRealization {
        ss: StateSpace { a, b, c, d: dd },
        k_diag,
        k_diag_grad,
        out_split: (o_z, d),
        in_split: (m_w, d),
    })
}

/// Largest relative deviation between the (1,1) block of the parameter
/// augmentation and the direct closed loop over `count` pseudo-random
/// frequencies (log-uniform on `[1e-2, 1e2]`, plus infinity).
pub fn param_aug_gate_error(
    sys: &ParamSystem,
    gamma: &GainExpansion,
    alpha: &[f64],
    count: usize,
    seed: u64,
) -> Result<f64> {
    let aug = build_param_aug(sys, gamma, alpha)?;
    let direct = closed_loop_unchecked(sys, gamma, alpha);
    let pc = aug.performance_channel();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut freqs: Vec<Frequency> = (0..count)
        .map(|_| Frequency::Finite(10f64.powf(rng.random_range(-2.0..2.0))))
        .collect();
    freqs.push(Frequency::Infinite);
    for w in freqs {
        let (t1, t2) = match (freq_response(&pc, w), freq_response(&direct, w)) {
            (Ok(a), Ok(b)) => (a, b),
            // A pole on the sample point: skip it rather than fail the gate.
            _ => continue,
        };
        worst = worst.max(linalg::rel_gap(&t1, &t2, 1e-300));
    }
    Ok(worst)
}

/// Parameter subgradient through the diagonal-gain augmentation.
pub fn param_subgradient(
    sys: &ParamSystem,
    gamma: &GainExpansion,
    alpha: &[f64],
    hr: &HinfResult,
    w: &SpectraplexWeights,
) -> Result<Vec<f64>> {
    require_stable(hr)?;
    let p = sys.p();
    if hr.gamma == 0.0 {
        return Ok(vec![0.0; p]);
    }
    let aug = build_param_aug(sys, gamma, alpha)?;
    let dim = aug.k_diag.len();
    let mut diag = vec![0.0; dim];
    for (peak, y) in hr.peaks.iter().zip(&w.y) {
        let (t, h12, h21) = aug.blocks(peak.omega)?;
        let m = h21 * weighted_adjoint(&t, &peak.q, y);
        // diag(M H_12) without forming the d x d product.
        for (k, dk) in diag.iter_mut().enumerate() {
            let mut s = Complex64::new(0.0, 0.0);
            for r in 0..m.ncols() {
                s += m[(k, r)] * h12[(r, k)];
            }
            *dk += s.re;
        }
    }
    Ok(aug
        .k_diag_grad
        .iter()
        .map(|g| g.iter().zip(&diag).map(|(a, b)| a * b).sum::<f64>() / hr.gamma)
        .collect())
}

/// Parameter subgradient from the derivative of the resolvent expression
/// of the direct closed loop.
pub fn param_subgradient_direct(
    sys: &ParamSystem,
    gamma: &GainExpansion,
    alpha: &[f64],
    hr: &HinfResult,
    w: &SpectraplexWeights,
) -> Result<Vec<f64>> {
    require_stable(hr)?;
    sys.bounds().check(alpha)?;
    let p = sys.p();
    if hr.gamma == 0.0 {
        return Ok(vec![0.0; p]);
    }
    let m = sys.matrices_unchecked(alpha);
    let k = eval_strategy(gamma, alpha);
    let perf = sys.performance();
    let cl = closed_loop_from(&m, perf, &k);
    let jx = sys.xi().jacobian(alpha);
    let je = gamma.eta.jacobian(alpha);

    // Closed-loop matrix derivatives per parameter.
    let derivs: Vec<StateSpace> = (0..p)
        .map(|i| {
            let dm = sys.combine(&jx[i]);
            let dk = weighted_gain(gamma, &je[i]);
            let da = &dm.a + &dm.b_u * &k * &m.c_y + &m.b_u * &dk * &m.c_y + &m.b_u * &k * &dm.c_y;
            let db = &dm.b_w + &dm.b_u * &k * &m.d_yw + &m.b_u * &dk * &m.d_yw + &m.b_u * &k * &dm.d_yw;
            let dc = &perf.d_zu * &dk * &m.c_y + &perf.d_zu * &k * &dm.c_y;
            let dd = &perf.d_zu * &dk * &m.d_yw + &perf.d_zu * &k * &dm.d_yw;
            StateSpace { a: da, b: db, c: dc, d: dd }
        })
        .collect();

    let (bc, cc) = (to_complex(&cl.b), to_complex(&cl.c));
    let mut out = vec![0.0; p];
    for (peak, y) in hr.peaks.iter().zip(&w.y) {
        let t = freq_response(&cl, peak.omega)?;
        let wadj = weighted_adjoint(&t, &peak.q, y);
        let r = resolvent(&cl.a, peak.omega)?;
        let rb = &r * &bc;
        let cr = &cc * &r;
        for (i, dv) in derivs.iter().enumerate() {
            let dt = match peak.omega {
                Frequency::Infinite => to_complex(&dv.d),
                Frequency::Finite(_) => {
                    &cr * to_complex(&dv.a) * &rb
                        + to_complex(&dv.c) * &rb
                        + &cr * to_complex(&dv.b)
                        + to_complex(&dv.d)
                }
            };
            out[i] += (&wadj * dt).trace().re;
        }
    }
    for v in &mut out {
        *v /= hr.gamma;
    }
    Ok(out)
}
