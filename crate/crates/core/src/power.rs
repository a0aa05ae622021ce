//! Per-user transmit power search for a fixed set of normalized symbols.

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};
use crate::metrics::{self, MetricKind};
use crate::model::JointConstellation;

const GOLDEN: f64 = 0.618_033_988_749_894_8;

#[derive(Clone, Debug, Serialize)]
pub struct PowerSearchResult {
    /// P₂/P₁ in the two-user case.
    pub theta: Option<f64>,
    pub powers: Vec<f64>,
    pub value: f64,
    pub method: String,
    pub evaluations: usize,
    pub flat: bool,
}

fn inner(a: &CMat, b: &CMat) -> C64 {
    (a.adjoint() * b)[(0, 0)]
}

fn check_vec(v: &CMat, t: usize, name: &str) -> Result<()> {
    if v.ncols() != 1 || v.nrows() != t {
        return Err(Error::Dimension(format!("{name} must be a {t}x1 vector")));
    }
    Ok(())
}

/// aᴴ(I + r bbᴴ + s ccᴴ)⁻¹a for unit vectors b, c, from inner products only.
/// `ab` = aᴴb, `ac` = aᴴc, `bc` = bᴴc.
fn quad_rank2(aa: f64, ab: C64, ac: C64, bc: C64, r: f64, s: f64) -> f64 {
    // (I + D^½ G D^½)⁻¹ with G the Gram of [b c]
    let (sr, ss) = (r.sqrt(), s.sqrt());
    let m11 = 1.0 + r;
    let m22 = 1.0 + s;
    let m12 = bc * (sr * ss);
    let det = m11 * m22 - m12.norm_sqr();
    // w = D^½ [bᴴa, cᴴa]
    let w1 = ab.conj() * sr;
    let w2 = ac.conj() * ss;
    let q = (w1.norm_sqr() * m22 + w2.norm_sqr() * m11 - 2.0 * (w1.conj() * m12 * w2).re) / det;
    aa - q
}

/// (δ₁, δ₂) for the two-user SIMO power split θ = P₂/P₁. All vectors unit norm, T×1.
#[allow(clippy::too_many_arguments)]
pub fn delta_funcs(
    theta: f64,
    x1: &CMat,
    x1p: &CMat,
    x2: &CMat,
    h1: &CMat,
    h2: &CMat,
    h2p: &CMat,
    p1: f64,
    t: usize,
) -> Result<(f64, f64)> {
    for (v, n) in [(x1, "x1"), (x1p, "x1'"), (x2, "x2"), (h1, "x̂1"), (h2, "x̂2"), (h2p, "x̂2'")] {
        check_vec(v, t, n)?;
    }
    if !(theta >= 0.0) {
        return Err(Error::InvalidInput(format!("θ = {theta}")));
    }
    let r = p1 * t as f64;
    let d1 = r * quad_rank2(1.0, inner(x1, x1p), inner(x1, x2), inner(x1p, x2), r, theta * r);
    let d2 = theta * r * quad_rank2(1.0, inner(h2, h1), inner(h2, h2p), inner(h1, h2p), r, theta * r);
    Ok((d1, d2))
}

/// Coefficients of the cubic whose positive root balances δ₁ and δ₂.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CubicCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub delta: f64,
    pub e1: f64,
    pub e2: f64,
}

impl CubicCoefficients {
    #[allow(clippy::too_many_arguments)]
    pub fn new(x1: &CMat, x1p: &CMat, x2: &CMat, h1: &CMat, h2: &CMat, h2p: &CMat, p1: f64, t: usize) -> Self {
        let ab = |u: &CMat, v: &CMat| inner(u, v).norm_sqr();
        let r = p1 * t as f64;
        let e1 = 1.0 - ab(x1, x2)
            + r * ((1.0 - ab(x1, x1p)) * (1.0 - ab(x1p, x2)) - (inner(x1, x1p) * inner(x1p, x2) - inner(x1, x2)).norm_sqr());
        let e2 = 1.0 - ab(h2, h2p)
            + r * ((1.0 - ab(h2, h1)) * (1.0 - ab(h1, h2p)) - (inner(h2, h1) * inner(h1, h2p) - inner(h2, h2p)).norm_sqr());
        let f_x1p_x2 = 1.0 + r * (1.0 - ab(x1p, x2));
        let f_h1_h2 = 1.0 + r * (1.0 - ab(h1, h2));
        let f_h1_h2p = 1.0 + r * (1.0 - ab(h1, h2p));
        let f_x1_x1p = 1.0 + r * (1.0 - ab(x1, x1p));
        let a = r * f_x1p_x2 * e2;
        let b = (1.0 + r) * e2 + f_x1p_x2 * f_h1_h2 - (r + r * r * (1.0 - ab(h1, h2p))) * e1;
        let c = -(1.0 + r) * e1 - f_h1_h2p * f_x1_x1p + (1.0 + 1.0 / r) * f_h1_h2;
        let d = -(1.0 + 1.0 / r) * f_x1_x1p;
        CubicCoefficients { a, b, c, d, delta: b * b - 3.0 * a * c, e1, e2 }
    }

    pub fn eval(&self, x: f64) -> f64 {
        ((self.a * x + self.b) * x + self.c) * x + self.d
    }

    fn deriv(&self, x: f64) -> f64 {
        (3.0 * self.a * x + 2.0 * self.b) * x + self.c
    }

    /// The trigonometric root, or `None` when Δ ≤ 0 or the arccos argument leaves [−1, 1].
    pub fn trig_root(&self) -> Option<f64> {
        if !(self.a > 0.0) || !(self.delta > 0.0) {
            return None;
        }
        let arg = (9.0 * self.a * self.b * self.c - 2.0 * self.b.powi(3) - 27.0 * self.a * self.a * self.d)
            / (2.0 * self.delta.powf(1.5));
        if !arg.is_finite() || arg.abs() > 1.0 + 1e-12 {
            return None;
        }
        let arg = arg.clamp(-1.0, 1.0);
        Some((2.0 * self.delta.sqrt() * (arg.acos() / 3.0).cos() - self.b) / (3.0 * self.a))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ThetaHat {
    pub theta: f64,
    /// Common value δ₁(θ̂) = δ₂(θ̂).
    pub value: f64,
    pub coefficients: CubicCoefficients,
    pub bisection: bool,
    pub diagnostic: Option<String>,
}

/// Root of δ₁ − δ₂ by bisection; the bracket doubles from 1 until δ₂ > δ₁.
pub fn theta_bisect(f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let mut hi = 1.0;
    let mut grow = 0;
    while f(hi)? > 0.0 {
        hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(Error::NonFinite("no sign change found for δ₁ − δ₂".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// θ̂ where δ₁(θ) = δ₂(θ), from the trigonometric cubic root.
#[allow(clippy::too_many_arguments)]
pub fn theta_hat_cubic(
    x1: &CMat,
    x1p: &CMat,
    x2: &CMat,
    h1: &CMat,
    h2: &CMat,
    h2p: &CMat,
    p1: f64,
    t: usize,
) -> Result<ThetaHat> {
    let gap = |th: f64| delta_funcs(th, x1, x1p, x2, h1, h2, h2p, p1, t).map(|(a, b)| a - b);
    let co = CubicCoefficients::new(x1, x1p, x2, h1, h2, h2p, p1, t);
    let mut diagnostic = None;
    let mut theta = co.trig_root().filter(|th| *th > 0.0);
    if let Some(th) = theta.as_mut() {
        for _ in 0..3 {
            let dp = co.deriv(*th);
            if dp == 0.0 {
                break;
            }
            let next = *th - co.eval(*th) / dp;
            if !(next > 0.0) {
                break;
            }
            *th = next;
        }
        let (d1, d2) = delta_funcs(*th, x1, x1p, x2, h1, h2, h2p, p1, t)?;
        if (d1 - d2).abs() > 1e-8 * d1.max(1.0) {
            diagnostic = Some(format!("cubic root misses the crossing by {:e}; bisection used", (d1 - d2).abs()));
            theta = None;
        }
    } else {
        diagnostic = Some(format!("trigonometric form unavailable (Δ = {:e}); bisection used", co.delta));
    }
    let bisection = theta.is_none();
    let theta = match theta {
        Some(th) => th,
        None => theta_bisect(gap)?,
    };
    let (d1, _) = delta_funcs(theta, x1, x1p, x2, h1, h2, h2p, p1, t)?;
    Ok(ThetaHat { theta, value: d1, coefficients: co, bisection, diagnostic })
}

fn unit_vectors(c: &JointConstellation, k: usize) -> Result<Vec<CMat>> {
    let u = &c.users()[k];
    if u.m() != 1 {
        return Err(Error::Unsupported("power enumeration needs single-antenna users".into()));
    }
    Ok(u.symbols().iter().map(|x| x.unscale(x.norm())).collect())
}

/// θ̃: the crossing of d₁(θ) and d₂(θ), found as the smallest crossing value over all 6-tuples.
pub fn theta_star_enumerate(c: &JointConstellation, p1: f64) -> Result<PowerSearchResult> {
    if c.k() != 2 {
        return Err(Error::Unsupported("θ enumeration needs exactly two users".into()));
    }
    let t = c.t();
    let s1 = unit_vectors(c, 0)?;
    let s2 = unit_vectors(c, 1)?;
    if s1.len() < 2 || s2.len() < 2 {
        return Err(Error::InvalidInput("each user needs at least two symbols".into()));
    }
    let mut side1 = Vec::new();
    for i in 0..s1.len() {
        for ip in 0..s1.len() {
            if ip == i {
                continue;
            }
            for j in 0..s2.len() {
                side1.push((i, ip, j));
            }
        }
    }
    let mut side2 = Vec::new();
    for i in 0..s1.len() {
        for j in 0..s2.len() {
            for jp in 0..s2.len() {
                if jp != j {
                    side2.push((i, j, jp));
                }
            }
        }
    }
    let n2 = side2.len();
    let total = side1.len() * n2;
    let best = (0..total)
        .into_par_iter()
        .map(|flat| {
            let (a, b) = (side1[flat / n2], side2[flat % n2]);
            let th = theta_hat_cubic(&s1[a.0], &s1[a.1], &s2[a.2], &s1[b.0], &s2[b.1], &s2[b.2], p1, t)?;
            Ok::<_, Error>((th.value, flat, th.theta))
        })
        .try_reduce(
            || (f64::INFINITY, usize::MAX, f64::NAN),
            |x, y| Ok(if (y.0, y.1) < (x.0, x.1) { y } else { x }),
        )?;
    let theta = best.2;
    Ok(PowerSearchResult {
        theta: Some(theta),
        powers: vec![p1, theta * p1],
        value: best.0,
        method: "enumerate".into(),
        evaluations: total,
        flat: false,
    })
}

/// Golden-section maximization of `f` on [a, b]; returns (argmax, value, evaluations, flat).
pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64, usize, bool) {
    let mid0 = 0.5 * (a + b);
    let fv = |x: f64| {
        let v = f(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut fc, mut fd) = (fv(c), fv(d));
    let mut evals = 2;
    let (mut lo, mut hi) = (fc.min(fd), fc.max(fd));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = fv(c);
            lo = lo.min(fc);
            hi = hi.max(fc);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = fv(d);
            lo = lo.min(fd);
            hi = hi.max(fd);
        }
        evals += 1;
    }
    let flat = hi - lo <= 1e-12 * hi.abs().max(1.0);
    let x = if flat { mid0 } else { 0.5 * (a + b) };
    (x, fc.max(fd), evals, flat)
}

fn signed(kind: MetricKind, v: f64) -> f64 {
    if kind.maximize() {
        v
    } else {
        -v
    }
}

fn metric_at(kind: MetricKind, c: &JointConstellation, powers: &[f64]) -> f64 {
    c.with_user_powers(powers)
        .and_then(|x| metrics::evaluate(kind, &x))
        .map(|r| r.value)
        .unwrap_or(f64::NAN)
}

/// Two-user power split: golden section over θ ∈ [0, 1] with user 1 at full power and over
/// 1/θ ∈ [0, 1] with user 2 at full power; the better of the two is returned.
pub fn theta_golden(kind: MetricKind, c: &JointConstellation, p: f64) -> Result<PowerSearchResult> {
    theta_golden_with(c, p, |x| metrics::evaluate(kind, x).map(|r| r.value).unwrap_or(f64::NAN), kind.maximize())
}

/// As `theta_golden` with an arbitrary metric of the rescaled constellation.
pub fn theta_golden_with(
    c: &JointConstellation,
    p: f64,
    metric: impl Fn(&JointConstellation) -> f64,
    maximize: bool,
) -> Result<PowerSearchResult> {
    if c.k() != 2 {
        return Err(Error::Unsupported("golden-section split needs exactly two users".into()));
    }
    let sgn = if maximize { 1.0 } else { -1.0 };
    let eval = |powers: [f64; 2]| -> f64 {
        c.with_user_powers(&powers).map(|x| sgn * metric(&x)).unwrap_or(f64::NAN)
    };
    let tol = 1e-4;
    let (t1, v1, e1, flat1) = golden_section(|th| eval([p, th * p]), 0.0, 1.0, tol);
    let (t2, v2, e2, flat2) = golden_section(|inv| eval([inv * p, p]), 0.0, 1.0, tol);
    let (powers, theta, flat) = if v1 >= v2 { ([p, t1 * p], t1, flat1) } else { ([t2 * p, p], 1.0 / t2, flat2) };
    if flat {
        warn!("metric is flat in θ; returning the interval midpoint");
    }
    let value = sgn * eval(powers);
    Ok(PowerSearchResult { theta: Some(theta), powers: powers.to_vec(), value, method: "golden".into(), evaluations: e1 + e2 + 1, flat })
}

#[derive(Clone, Debug, Serialize)]
pub struct NelderMeadOptions {
    pub tol: f64,
    pub max_evals: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { tol: 1e-4, max_evals: 2000 }
    }
}

/// Nelder–Mead minimization of `f` on the box [0, 1]^n with clamping. Returns (x, f(x), evaluations).
pub fn nelder_mead_box(f: &dyn Fn(&[f64]) -> f64, start: &[f64], opts: &NelderMeadOptions) -> (Vec<f64>, f64, usize) {
    let n = start.len();
    let clamp = |x: Vec<f64>| x.into_iter().map(|v| v.clamp(0.0, 1.0)).collect::<Vec<_>>();
    let fv = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut evals = 0;
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let x0 = clamp(start.to_vec());
    simplex.push((x0.clone(), fv(&x0)));
    evals += 1;
    for i in 0..n {
        let mut x = x0.clone();
        x[i] = if x[i] > 0.5 { x[i] - 0.25 } else { x[i] + 0.25 };
        let v = fv(&x);
        evals += 1;
        simplex.push((x, v));
    }
    let diameter = |s: &[(Vec<f64>, f64)]| {
        let mut d: f64 = 0.0;
        for a in s {
            for b in s {
                d = d.max(a.0.iter().zip(&b.0).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max));
            }
        }
        d
    };
    while evals < opts.max_evals && diameter(&simplex) > opts.tol {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let worst = simplex[n].clone();
        let centroid: Vec<f64> =
            (0..n).map(|j| simplex[..n].iter().map(|s| s.0[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| clamp(centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect());
        let xr = along(1.0);
        let fr = fv(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = fv(&xe);
            evals += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fcv) = if fr < worst.1 {
                let x = along(0.5);
                let v = fv(&x);
                (x, v)
            } else {
                let x = along(-0.5);
                let v = fv(&x);
                (x, v)
            };
            evals += 1;
            if fcv < worst.1.min(fr) {
                simplex[n] = (xc, fcv);
            } else {
                let best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    s.0 = best.iter().zip(&s.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
                    s.1 = fv(&s.0);
                    evals += 1;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, v) = simplex.swap_remove(0);
    (x, v, evals)
}

/// K-user power fractions by Nelder–Mead, once per choice of the full-power user.
pub fn powers_neldermead(kind: MetricKind, c: &JointConstellation, p: f64, opts: &NelderMeadOptions) -> Result<PowerSearchResult> {
    let k = c.k();
    if k < 2 {
        return Err(Error::InvalidInput("power search needs at least two users".into()));
    }
    let full = vec![p; k];
    let full_value = metric_at(kind, c, &full);
    let mut best = (full.clone(), signed(kind, full_value));
    if best.1.is_nan() {
        best.1 = f64::NEG_INFINITY;
    }
    let mut evals = 1;
    for lead in 0..k {
        let powers_of = |frac: &[f64]| -> Vec<f64> {
            let mut out = Vec::with_capacity(k);
            let mut it = frac.iter();
            for u in 0..k {
                out.push(if u == lead { p } else { p * it.next().unwrap() });
            }
            out
        };
        let obj = |frac: &[f64]| -signed(kind, metric_at(kind, c, &powers_of(frac)));
        let (mut x, mut v, e) = nelder_mead_box(&obj, &vec![1.0; k - 1], opts);
        evals += e;
        if e >= opts.max_evals {
            // one restart from the best vertex when the simplex did not collapse
            let (x2, v2, e2) = nelder_mead_box(&obj, &x, opts);
            evals += e2;
            if v2 < v {
                x = x2;
                v = v2;
            }
        }
        if -v > best.1 {
            best = (powers_of(&x), -v);
        }
    }
    let value = metric_at(kind, c, &best.0);
    let theta = (k == 2).then(|| best.0[1] / best.0[0]);
    Ok(PowerSearchResult { theta, powers: best.0, value, method: "nelder-mead".into(), evaluations: evals, flat: false })
}
