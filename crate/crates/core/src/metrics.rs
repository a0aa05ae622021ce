//! Pairwise design metrics built on the spectrum of (I+xxᴴ)(I+x′x′ᴴ)⁻¹ and their
//! constellation-level extrema.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::model::{self, JointConstellation};

/// Floor applied to eigenvalues before taking logarithms.
pub const LAMBDA_FLOOR: f64 = 1e-300;

/// Eigenvalues of Γ, descending.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenSpectrum {
    pub lambdas: Vec<f64>,
}

impl EigenSpectrum {
    pub fn log_det(&self) -> f64 {
        self.lambdas.iter().map(|l| l.ln()).sum()
    }

    pub fn sum(&self) -> f64 {
        self.lambdas.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MetricKind {
    B,
    Riemannian,
    J(f64),
    Relaxed,
    D,
    E,
    M1,
    M2(usize),
    Coherence,
}

impl MetricKind {
    /// Parses `b`, `riemannian`, `J:0.5`, `relaxed`, `d`, `e`, `m1`, `m2:4`, `coherence`.
    pub fn parse(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |default: f64| -> Result<f64> {
            match arg {
                None => Ok(default),
                Some(a) => a
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("bad metric parameter in '{s}'"))),
            }
        };
        let kind = match name.to_ascii_lowercase().as_str() {
            "b" => MetricKind::B,
            "riemannian" => MetricKind::Riemannian,
            "j" => MetricKind::J(num(0.5)?),
            "relaxed" => MetricKind::Relaxed,
            "d" => MetricKind::D,
            "e" => MetricKind::E,
            "m1" => MetricKind::M1,
            "m2" => {
                let n = num(4.0)?;
                if n < 1.0 || n.fract() != 0.0 {
                    return Err(Error::InvalidInput(format!("m2 needs a positive integer N, got '{s}'")));
                }
                MetricKind::M2(n as usize)
            }
            "coherence" => MetricKind::Coherence,
            _ => return Err(Error::InvalidInput(format!("unknown metric '{s}'"))),
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MetricKind::J(s) if !(0.0..=1.0).contains(&s) => {
                Err(Error::InvalidInput(format!("Chernoff parameter {s} outside [0, 1]")))
            }
            MetricKind::M2(0) => Err(Error::InvalidInput("m2 needs N >= 1".into())),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::B => "b",
            MetricKind::Riemannian => "riemannian",
            MetricKind::J(_) => "J",
            MetricKind::Relaxed => "relaxed",
            MetricKind::D => "d",
            MetricKind::E => "e",
            MetricKind::M1 => "m1",
            MetricKind::M2(_) => "m2",
            MetricKind::Coherence => "coherence",
        }
    }

    pub fn param(&self) -> String {
        match self {
            MetricKind::J(s) => format!("{s}"),
            MetricKind::M2(n) => format!("{n}"),
            _ => String::new(),
        }
    }

    /// True for kinds where a larger value is better.
    pub fn maximize(&self) -> bool {
        !matches!(self, MetricKind::M1 | MetricKind::M2(_) | MetricKind::Coherence)
    }

    /// Whether the pairwise value depends on the order of the pair.
    pub fn directed(&self) -> bool {
        match self {
            MetricKind::J(s) => *s != 0.5,
            MetricKind::Relaxed | MetricKind::D | MetricKind::E => true,
            _ => false,
        }
    }
}

/// Constellation-level metric value.
///
/// `argpair` holds flat joint indices; for `Coherence` it holds indices into the
/// user-major list of individual symbols.
#[derive(Clone, Debug, Serialize)]
pub struct MetricReport {
    pub kind: MetricKind,
    pub value: f64,
    pub argpair: Option<(usize, usize)>,
    pub per_pair: Option<Vec<f64>>,
    pub powers: Vec<f64>,
    pub diagnostics: Vec<String>,
}

fn check_pair(x: &CMat, xp: &CMat) -> Result<()> {
    if x.nrows() != xp.nrows() {
        return Err(Error::Dimension(format!("pair has {} and {} rows", x.nrows(), xp.nrows())));
    }
    if !linalg::is_finite(x) || !linalg::is_finite(xp) {
        return Err(Error::NonFinite("symbol entries".into()));
    }
    Ok(())
}

/// Spectrum of Γ from the congruent Hermitian form L⁻¹ A L⁻ᴴ with B = L Lᴴ.
pub fn gamma_spectrum(x: &CMat, xp: &CMat) -> Result<EigenSpectrum> {
    check_pair(x, xp)?;
    let a = linalg::cov(x);
    let c = linalg::chol(&linalg::cov(xp))?;
    let l = c.l();
    let p = l
        .solve_lower_triangular(&a)
        .ok_or_else(|| Error::NotPositiveDefinite("triangular solve".into()))?;
    let w = l
        .solve_lower_triangular(&p.adjoint())
        .ok_or_else(|| Error::NotPositiveDefinite("triangular solve".into()))?;
    let lambdas = linalg::herm_eigvals(&w).into_iter().map(|v| v.max(LAMBDA_FLOOR)).collect();
    Ok(EigenSpectrum { lambdas })
}

pub fn b_from_spectrum(s: &EigenSpectrum) -> f64 {
    s.lambdas.iter().map(|l| l.ln().abs()).sum()
}

pub fn riemannian_from_spectrum(s: &EigenSpectrum) -> f64 {
    s.lambdas.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt()
}

pub fn e_from_spectrum(s: &EigenSpectrum) -> f64 {
    s.lambdas.iter().map(|&l| l - 1.0 - l.ln()).sum()
}

/// J_{1/2} from the spectrum: ½ Σ ln(2 + λ + 1/λ) − T ln 2.
pub fn j_half_from_spectrum(s: &EigenSpectrum) -> f64 {
    let t = s.lambdas.len() as f64;
    0.5 * s.lambdas.iter().map(|&l| (2.0 + l + 1.0 / l).ln()).sum::<f64>() - t * std::f64::consts::LN_2
}

pub fn relaxed_from_spectrum(s: &EigenSpectrum) -> f64 {
    let t = s.lambdas.len() as f64;
    (1.0 + 0.5 * s.sum()).ln() - 0.5 * t * std::f64::consts::LN_2
}

pub fn metric_b(x: &CMat, xp: &CMat) -> Result<f64> {
    Ok(b_from_spectrum(&gamma_spectrum(x, xp)?))
}

pub fn riemannian_distance(x: &CMat, xp: &CMat) -> Result<f64> {
    Ok(riemannian_from_spectrum(&gamma_spectrum(x, xp)?))
}

/// Chernoff exponent J_s in determinant form.
pub fn metric_j(x: &CMat, xp: &CMat, s: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidInput(format!("Chernoff parameter {s} outside [0, 1]")));
    }
    check_pair(x, xp)?;
    let (lda, ainv) = linalg::hpd_logdet_inv(&linalg::cov(x))?;
    let (ldb, binv) = linalg::hpd_logdet_inv(&linalg::cov(xp))?;
    let mix = linalg::scale(&binv, s) + linalg::scale(&ainv, 1.0 - s);
    let ldm = linalg::hpd_logdet(&mix)?;
    Ok(ldm + s * ldb + (1.0 - s) * lda)
}

pub fn relaxed_bound(x: &CMat, xp: &CMat) -> Result<f64> {
    Ok(relaxed_from_spectrum(&gamma_spectrum(x, xp)?))
}

/// tr((I + x′x′ᴴ)⁻¹ x xᴴ).
pub fn metric_d(x: &CMat, xp: &CMat) -> Result<f64> {
    check_pair(x, xp)?;
    let c = linalg::chol(&linalg::cov(xp))?;
    let v = c
        .l()
        .solve_lower_triangular(x)
        .ok_or_else(|| Error::NotPositiveDefinite("triangular solve".into()))?;
    Ok(linalg::fro2(&v))
}

pub fn metric_e(x: &CMat, xp: &CMat) -> Result<f64> {
    Ok(e_from_spectrum(&gamma_spectrum(x, xp)?))
}

/// Normalized coherence tr(xxᴴx′x′ᴴ)/(‖x‖²‖x′‖²).
pub fn m1_pair(x: &CMat, xp: &CMat) -> f64 {
    let w = x.adjoint() * xp;
    linalg::fro2(&w) / (linalg::fro2(x) * linalg::fro2(xp))
}

/// ln|det(I − ω xxᴴx′x′ᴴ)| and the sign of the determinant.
pub fn m2_pair_logdet(x: &CMat, xp: &CMat) -> (f64, f64) {
    let m = x.ncols() as f64;
    let omega = m * m / (linalg::fro2(x) * linalg::fro2(xp));
    let w = x.adjoint() * xp;
    let sig = linalg::herm_eigvals(&(&w * w.adjoint()));
    let mut ld = 0.0;
    let mut sign = 1.0;
    for s in sig {
        let f = 1.0 - omega * s.max(0.0);
        if f == 0.0 {
            return (f64::NEG_INFINITY, 0.0);
        }
        if f < 0.0 {
            sign = -sign;
        }
        ld += f.abs().ln();
    }
    (ld, sign)
}

fn pair_list(n: usize, ordered: bool) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && (ordered || i < j) {
                v.push((i, j));
            }
        }
    }
    v
}

fn pairwise(kind: MetricKind, x: &CMat, xp: &CMat) -> Result<f64> {
    match kind {
        MetricKind::B => metric_b(x, xp),
        MetricKind::Riemannian => riemannian_distance(x, xp),
        MetricKind::J(s) => metric_j(x, xp, s),
        MetricKind::Relaxed => relaxed_bound(x, xp),
        MetricKind::D => metric_d(x, xp),
        MetricKind::E => metric_e(x, xp),
        MetricKind::M1 => Ok(m1_pair(x, xp)),
        _ => Err(Error::Unsupported(format!("{} has no scalar pair value", kind.name()))),
    }
}

/// Per-pair values over ordered or unordered distinct joint pairs.
fn pair_values(kind: MetricKind, c: &JointConstellation, ordered: bool) -> Result<(Vec<(usize, usize)>, Vec<f64>)> {
    let syms = c.joint_symbols();
    let pairs = pair_list(syms.len(), ordered);
    let vals = pairs
        .par_iter()
        .map(|&(i, j)| pairwise(kind, &syms[i], &syms[j]))
        .collect::<Result<Vec<f64>>>()?;
    Ok((pairs, vals))
}

fn extremum(pairs: &[(usize, usize)], vals: &[f64], maximize: bool) -> (f64, Option<(usize, usize)>) {
    let mut best: Option<usize> = None;
    for (p, &v) in vals.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                if maximize {
                    v > vals[b]
                } else {
                    v < vals[b]
                }
            }
        };
        if better {
            best = Some(p);
        }
    }
    match best {
        Some(b) => (vals[b], Some(pairs[b])),
        None => (if maximize { f64::NEG_INFINITY } else { f64::INFINITY }, None),
    }
}

fn extremal_report(kind: MetricKind, c: &JointConstellation, keep: bool) -> Result<MetricReport> {
    let (pairs, vals) = pair_values(kind, c, kind.directed())?;
    let (value, argpair) = extremum(&pairs, &vals, !kind.maximize());
    let mut diagnostics = Vec::new();
    if argpair.is_none() {
        diagnostics.push("constellation has fewer than two joint symbols".into());
    }
    Ok(MetricReport { kind, value, argpair, per_pair: keep.then_some(vals), powers: c.powers(), diagnostics })
}

pub fn b_min(c: &JointConstellation) -> Result<MetricReport> {
    extremal_report(MetricKind::B, c, false)
}

pub fn j_min(c: &JointConstellation, s: f64) -> Result<MetricReport> {
    MetricKind::J(s).validate()?;
    extremal_report(MetricKind::J(s), c, false)
}

pub fn relaxed_min(c: &JointConstellation) -> Result<MetricReport> {
    extremal_report(MetricKind::Relaxed, c, false)
}

pub fn d_min(c: &JointConstellation) -> Result<MetricReport> {
    extremal_report(MetricKind::D, c, false)
}

pub fn e_min(c: &JointConstellation) -> Result<MetricReport> {
    extremal_report(MetricKind::E, c, false)
}

pub fn metric_m1(c: &JointConstellation) -> Result<MetricReport> {
    extremal_report(MetricKind::M1, c, false)
}

/// ln Σ over ordered distinct pairs of det^{−N}(I − ω xxᴴx′x′ᴴ).
///
/// Determinants are evaluated with their sign. A zero determinant, or a
/// non-positive total (possible only for odd N), gives +∞.
pub fn metric_m2(c: &JointConstellation, n: usize) -> Result<MetricReport> {
    if n == 0 {
        return Err(Error::InvalidInput("m2 needs N >= 1".into()));
    }
    let syms = c.joint_symbols();
    let pairs = pair_list(syms.len(), false);
    let terms: Vec<(f64, f64)> = pairs.par_iter().map(|&(i, j)| m2_pair_logdet(&syms[i], &syms[j])).collect();
    let mut diagnostics = Vec::new();
    let nf = n as f64;
    // z = −N ln|det|, signed by sign^N; each unordered pair counts twice
    let mut zs = Vec::with_capacity(terms.len());
    let mut indefinite = 0usize;
    let mut singular = 0usize;
    for &(ld, sign) in &terms {
        if sign == 0.0 {
            singular += 1;
        } else if sign < 0.0 {
            indefinite += 1;
        }
        let sn = if n % 2 == 0 { 1.0 } else { sign };
        zs.push((-nf * ld, sn));
    }
    if indefinite > 0 {
        diagnostics.push(format!("{indefinite} pairs with negative determinant"));
    }
    let value = if singular > 0 {
        diagnostics.push(format!("{singular} pairs with singular determinant"));
        f64::INFINITY
    } else {
        let (v, ok) = signed_lse(&zs);
        if !ok {
            diagnostics.push("non-positive determinant sum".into());
        }
        v + std::f64::consts::LN_2
    };
    let per_pair: Vec<f64> = zs.iter().map(|&(z, _)| z).collect();
    let (_, argpair) = extremum(&pairs, &per_pair, true);
    Ok(MetricReport { kind: MetricKind::M2(n), value, argpair, per_pair: None, powers: c.powers(), diagnostics })
}

/// ln Σ s_p exp(z_p) with a max shift; returns (+∞, false) when the sum is not positive.
pub fn signed_lse(zs: &[(f64, f64)]) -> (f64, bool) {
    let m = zs.iter().map(|&(z, _)| z).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::INFINITY {
        return (f64::INFINITY, true);
    }
    if m == f64::NEG_INFINITY {
        return (f64::NEG_INFINITY, true);
    }
    let s: f64 = zs.iter().map(|&(z, sg)| sg * (z - m).exp()).sum();
    if s > 0.0 {
        (m + s.ln(), true)
    } else {
        (f64::INFINITY, false)
    }
}

/// Largest normalized inner product ‖·ᴴ·‖²_F/(PT)² over distinct intra-user pairs and all inter-user pairs.
pub fn cross_coherence(c: &JointConstellation) -> Result<MetricReport> {
    let norm = (c.config().power * c.t() as f64).powi(2);
    let mut items: Vec<(usize, &CMat)> = Vec::new();
    for (k, u) in c.users().iter().enumerate() {
        for s in u.symbols() {
            items.push((k, s));
        }
    }
    let mut pairs = Vec::new();
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            pairs.push((i, j));
        }
    }
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| linalg::fro2(&(items[i].1.adjoint() * items[j].1)) / norm)
        .collect();
    let (value, argpair) = extremum(&pairs, &vals, true);
    let value = if argpair.is_none() { 0.0 } else { value };
    Ok(MetricReport { kind: MetricKind::Coherence, value, argpair, per_pair: None, powers: c.powers(), diagnostics: vec![] })
}

/// d_k and the attaining (x_k index, interfering joint index x′).
pub fn metric_d_k(c: &JointConstellation, k: usize) -> Result<(f64, usize, usize)> {
    if k >= c.k() {
        return Err(Error::InvalidInput(format!("user index {k} out of range")));
    }
    if c.users()[k].len() < 2 {
        return Err(Error::Empty(format!("user {k} has a single symbol; d_k is undefined")));
    }
    let uk = &c.users()[k];
    let count = c.joint_count();
    let rows: Vec<Result<(f64, usize, usize)>> = (0..count)
        .into_par_iter()
        .map(|f| {
            let idx = c.index_tuple(f);
            let xp = c.joint_symbol(&idx);
            let ch = linalg::chol(&linalg::cov(&xp))?;
            let l = ch.l();
            let mut best = (f64::INFINITY, 0, f);
            for (i, xk) in uk.symbols().iter().enumerate() {
                if i == idx[k] {
                    continue;
                }
                let v = l
                    .solve_lower_triangular(xk)
                    .ok_or_else(|| Error::NotPositiveDefinite("triangular solve".into()))?;
                let d = linalg::fro2(&v);
                if d < best.0 {
                    best = (d, i, f);
                }
            }
            Ok(best)
        })
        .collect();
    let mut best = (f64::INFINITY, 0, 0);
    for r in rows {
        let r = r?;
        if r.0 < best.0 {
            best = r;
        }
    }
    Ok(best)
}

/// min over users with at least two symbols of d_k. `argpair` is (user, interfering joint index).
pub fn min_k_d(c: &JointConstellation) -> Result<MetricReport> {
    let mut best: Option<(f64, usize, usize)> = None;
    for k in 0..c.k() {
        if c.users()[k].len() < 2 {
            continue;
        }
        let (v, _, f) = metric_d_k(c, k)?;
        if best.map_or(true, |b| v < b.0) {
            best = Some((v, k, f));
        }
    }
    let (value, k, f) = best.ok_or_else(|| Error::Empty("no user has two or more symbols".into()))?;
    Ok(MetricReport {
        kind: MetricKind::D,
        value,
        argpair: Some((k, f)),
        per_pair: None,
        powers: c.powers(),
        diagnostics: vec![],
    })
}

/// Constellation-level value of any metric kind.
pub fn evaluate(kind: MetricKind, c: &JointConstellation) -> Result<MetricReport> {
    kind.validate()?;
    match kind {
        MetricKind::M2(n) => metric_m2(c, n),
        MetricKind::Coherence => cross_coherence(c),
        _ => extremal_report(kind, c, false),
    }
}

/// As `evaluate`, keeping the per-pair values when the kind has them.
pub fn evaluate_detailed(kind: MetricKind, c: &JointConstellation) -> Result<MetricReport> {
    kind.validate()?;
    match kind {
        MetricKind::M2(_) | MetricKind::Coherence => evaluate(kind, c),
        _ => extremal_report(kind, c, true),
    }
}

/// ε ln Σ exp(∓f/ε) over ordered distinct pairs; m2 is returned as is.
pub fn smoothed_objective(kind: MetricKind, c: &JointConstellation, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("smoothing parameter must be positive, got {eps}")));
    }
    kind.validate()?;
    match kind {
        MetricKind::M2(n) => return Ok(metric_m2(c, n)?.value),
        MetricKind::J(_) | MetricKind::D | MetricKind::E | MetricKind::M1 => {}
        _ => return Err(Error::Unsupported(format!("{} is evaluation-only", kind.name()))),
    }
    let (_, vals) = pair_values(kind, c, true)?;
    Ok(smooth(&vals, eps, kind.maximize()))
}

/// Log-sum-exp smoothing of a list of pair values.
pub fn smooth(vals: &[f64], eps: f64, maximize: bool) -> f64 {
    let sgn = if maximize { -1.0 } else { 1.0 };
    let zs: Vec<(f64, f64)> = vals.iter().map(|&f| (sgn * f / eps, 1.0)).collect();
    eps * signed_lse(&zs).0
}

/// Unordered joint pairs whose Gram matrices coincide; convenience re-export for reports.
pub fn gram_equal_pairs(c: &JointConstellation, tol: f64) -> Vec<(usize, usize)> {
    model::check_identifiability(c, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cgauss, eye, haar_frame, haar_unitary, scale, C64};
    use crate::model::UserConstellation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn e(t: usize, i: usize) -> CMat {
        let mut v = CMat::zeros(t, 1);
        v[(i, 0)] = C64::new(1.0, 0.0);
        v
    }

    fn orth_pair() -> (CMat, CMat) {
        (scale(&e(2, 0), 2f64.sqrt()), scale(&e(2, 1), 2f64.sqrt()))
    }

    fn random_joint(rng: &mut ChaCha8Rng, t: usize, m: &[usize], sizes: &[usize], p: f64) -> JointConstellation {
        let users = m
            .iter()
            .zip(sizes)
            .map(|(&mk, &n)| {
                let s = (p * t as f64 / mk as f64).sqrt();
                UserConstellation::from_symbols((0..n).map(|_| scale(&haar_frame(t, mk, rng), s)).collect()).unwrap()
            })
            .collect();
        JointConstellation::from_users(t, 1, users).unwrap()
    }

    #[test]
    fn spectrum_examples() {
        let (x, xp) = orth_pair();
        let s = gamma_spectrum(&x, &xp).unwrap();
        assert!((s.lambdas[0] - 3.0).abs() < 1e-12 && (s.lambdas[1] - 1.0 / 3.0).abs() < 1e-12);
        let s = gamma_spectrum(&x, &x).unwrap();
        assert!(s.lambdas.iter().all(|l| (l - 1.0).abs() < 1e-12));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = cgauss(4, 2, &mut rng);
        let b = cgauss(4, 2, &mut rng);
        let s1 = gamma_spectrum(&a, &b).unwrap();
        let mut s2: Vec<f64> = gamma_spectrum(&b, &a).unwrap().lambdas.iter().map(|l| 1.0 / l).collect();
        s2.sort_by(|u, v| v.total_cmp(u));
        for (u, v) in s1.lambdas.iter().zip(&s2) {
            assert!((u - v).abs() < 1e-9 * u.max(1.0));
        }
        let det_ratio = (linalg::cov(&a).determinant() / linalg::cov(&b).determinant()).re;
        assert!((s1.lambdas.iter().product::<f64>() / det_ratio - 1.0).abs() < 1e-8);
    }

    #[test]
    fn hand_values_on_orthogonal_pair() {
        let (x, xp) = orth_pair();
        let ln3 = 3f64.ln();
        assert!((metric_b(&x, &xp).unwrap() - 2.0 * ln3).abs() < 1e-12);
        assert!((riemannian_distance(&x, &xp).unwrap() - 2f64.sqrt() * ln3).abs() < 1e-12);
        assert!((metric_j(&x, &xp, 0.5).unwrap() - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((relaxed_bound(&x, &xp).unwrap() - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((metric_d(&x, &xp).unwrap() - 2.0).abs() < 1e-12);
        assert!((metric_e(&x, &xp).unwrap() - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(metric_b(&x, &x).unwrap(), 0.0);
        assert!(metric_j(&x, &x, 0.5).unwrap().abs() < 1e-12);
        assert!(relaxed_bound(&x, &x).unwrap().abs() < 1e-12);
        assert!(metric_e(&x, &x).unwrap().abs() < 1e-12);
        assert!((metric_d(&x, &x).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(metric_j(&x, &xp, 1.2).is_err());
    }

    #[test]
    fn j_endpoints_and_two_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a = cgauss(5, 2, &mut rng);
            let b = cgauss(5, 2, &mut rng);
            assert!(metric_j(&a, &b, 0.0).unwrap().abs() < 1e-9);
            assert!(metric_j(&a, &b, 1.0).unwrap().abs() < 1e-9);
            let sp = gamma_spectrum(&a, &b).unwrap();
            assert!((metric_j(&a, &b, 0.5).unwrap() - j_half_from_spectrum(&sp)).abs() < 1e-9);
            let s = 0.3;
            let spectral: f64 = sp.lambdas.iter().map(|&l| (1.0 - s + s * l).ln() - s * l.ln()).sum();
            assert!((metric_j(&a, &b, s).unwrap() - spectral).abs() < 1e-9);
        }
    }

    #[test]
    fn d_two_paths_and_e_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = cgauss(4, 2, &mut rng);
            let b = cgauss(4, 2, &mut rng);
            let sp = gamma_spectrum(&a, &b).unwrap();
            let binv = linalg::cov(&b).try_inverse().unwrap();
            let tr_binv = binv.trace().re;
            let d = metric_d(&a, &b).unwrap();
            assert!((d - (sp.sum() - tr_binv)).abs() < 1e-9 * d.max(1.0));
            let e = metric_e(&a, &b).unwrap();
            let expanded = d + tr_binv - 4.0 - sp.log_det();
            assert!((e - expanded).abs() < 1e-9 * e.max(1.0));
            assert!(e >= d + tr_binv - 4.0 - sp.log_det().abs() - 1e-9);
        }
    }

    #[test]
    fn ustm_single_user_identity_for_d() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (t, m, p) = (5usize, 2usize, 3.0f64);
        let pt = p * t as f64;
        let s = (pt / m as f64).sqrt();
        for _ in 0..10 {
            let x = scale(&haar_frame(t, m, &mut rng), s);
            let xp = scale(&haar_frame(t, m, &mut rng), s);
            let alpha = 1.0 / pt + 1.0 / m as f64;
            let oracle = pt * (1.0 - linalg::fro2(&(xp.adjoint() * &x)) / (alpha * pt * pt));
            assert!((metric_d(&x, &xp).unwrap() - oracle).abs() < 1e-9 * oracle.max(1.0));
        }
    }

    #[test]
    fn d_scaling_with_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = haar_frame(4, 1, &mut rng);
        let v = haar_frame(4, 1, &mut rng);
        let d_at = |p: f64, a: &CMat, b: &CMat| metric_d(&scale(a, (4.0 * p).sqrt()), &scale(b, (4.0 * p).sqrt())).unwrap();
        let r = d_at(1e5, &u, &v) / d_at(1e4, &u, &v);
        assert!((r / 10.0 - 1.0).abs() < 0.1);
        let ph = C64::from_polar(1.0, 0.7);
        let same = &u * ph;
        assert!(d_at(1e5, &u, &same) / d_at(1e4, &u, &same) <= 1.1);
    }

    #[test]
    fn m1_m2_coherence_examples() {
        let (x, xp) = orth_pair();
        assert_eq!(m1_pair(&x, &xp), 0.0);
        assert!((m1_pair(&x, &x) - 1.0).abs() < 1e-15);
        let u = UserConstellation::from_symbols(vec![x.clone(), xp.clone()]).unwrap();
        let c = JointConstellation::from_users(2, 1, vec![u]).unwrap();
        assert!((metric_m2(&c, 3).unwrap().value - 2f64.ln()).abs() < 1e-12);
        assert_eq!(cross_coherence(&c).unwrap().value, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = scale(&haar_frame(4, 2, &mut rng), (2.0f64 * 4.0 / 2.0).sqrt());
        let u1 = UserConstellation::from_symbols(vec![s.clone()]).unwrap();
        let u2 = UserConstellation::from_symbols(vec![s.clone()]).unwrap();
        let c = JointConstellation::from_users(4, 1, vec![u1, u2]).unwrap();
        assert!((cross_coherence(&c).unwrap().value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn m2_matches_full_determinant_and_is_scale_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = cgauss(4, 2, &mut rng);
        let b = cgauss(4, 2, &mut rng);
        let u = UserConstellation::from_symbols(vec![a.clone(), b.clone()]).unwrap();
        let c = JointConstellation::from_users(4, 1, vec![u]).unwrap();
        let n = 2;
        let omega = 4.0 / (linalg::fro2(&a) * linalg::fro2(&b));
        let full = |x: &CMat, y: &CMat| {
            let m = eye(4) - linalg::scale(&(x * x.adjoint() * y * y.adjoint()), omega);
            m.determinant()
        };
        let t1 = full(&a, &b).powi(-(n as i32));
        let t2 = full(&b, &a).powi(-(n as i32));
        let oracle = (t1 + t2).re.ln();
        assert!((metric_m2(&c, n).unwrap().value - oracle).abs() < 1e-8);
        let c2 = c.with_power_budget(c.config().power * 7.0).unwrap();
        assert!((metric_m2(&c2, n).unwrap().value - metric_m2(&c, n).unwrap().value).abs() < 1e-9);
    }

    #[test]
    fn exhaustive_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = random_joint(&mut rng, 4, &[1, 1], &[2, 4], 2.0);
        let syms = c.joint_symbols();
        let mut m1 = f64::NEG_INFINITY;
        let mut dmin = f64::INFINITY;
        for i in 0..syms.len() {
            for j in 0..syms.len() {
                if i != j {
                    m1 = m1.max(m1_pair(&syms[i], &syms[j]));
                    dmin = dmin.min(metric_d(&syms[i], &syms[j]).unwrap());
                }
            }
        }
        assert_eq!(metric_m1(&c).unwrap().value, m1);
        assert_eq!(d_min(&c).unwrap().value, dmin);
        let mut items = vec![];
        for u in c.users() {
            items.extend(u.symbols().iter().cloned());
        }
        let mut coh = 0.0f64;
        for i in 0..items.len() {
            for j in i + 1..items.len() {
                coh = coh.max(linalg::fro2(&(items[i].adjoint() * &items[j])));
            }
        }
        let coh = coh / (c.config().power * 4.0).powi(2);
        assert!((cross_coherence(&c).unwrap().value - coh).abs() < 1e-14);
        let rep = evaluate_detailed(MetricKind::B, &c).unwrap();
        let pp = rep.per_pair.unwrap();
        assert_eq!(rep.value, pp.iter().copied().fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn d_k_toy_and_single_user_reduction() {
        let s2 = 2f64.sqrt();
        let u1 = UserConstellation::from_symbols(vec![scale(&e(3, 0), s2)]).unwrap();
        let u2 = UserConstellation::from_symbols(vec![scale(&e(3, 1), s2), scale(&e(3, 2), s2)]).unwrap();
        let c = JointConstellation::from_users(3, 1, vec![u1, u2]).unwrap();
        // brute force over x_2 ≠ x′_2 with the only user-1 symbol as interferer
        let x1 = scale(&e(3, 0), s2);
        let mut oracle = f64::INFINITY;
        for (i, a) in c.users()[1].symbols().iter().enumerate() {
            for (j, b) in c.users()[1].symbols().iter().enumerate() {
                if i != j {
                    let m = eye(3) + b * b.adjoint() + &x1 * x1.adjoint();
                    let v = (a.adjoint() * m.try_inverse().unwrap() * a).trace().re;
                    oracle = oracle.min(v);
                }
            }
        }
        assert!((metric_d_k(&c, 1).unwrap().0 - oracle).abs() < 1e-12);
        assert!((oracle - 2.0).abs() < 1e-12);
        assert!(metric_d_k(&c, 0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = random_joint(&mut rng, 4, &[2], &[6], 1.5);
        assert_eq!(metric_d_k(&c, 0).unwrap().0, d_min(&c).unwrap().value);
    }

    #[test]
    fn smoothing_examples() {
        let (x, xp) = orth_pair();
        let u = UserConstellation::from_symbols(vec![x, xp]).unwrap();
        let c = JointConstellation::from_users(2, 1, vec![u]).unwrap();
        // two ordered pairs with equal d: g = −d + ε ln 2
        let g = smoothed_objective(MetricKind::D, &c, 0.1).unwrap();
        assert!((g - (-2.0 + 0.1 * 2f64.ln())).abs() < 1e-12);
        assert!((smooth(&[3.5], 0.2, true) + 3.5).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let c = random_joint(&mut rng, 4, &[1, 1], &[2, 2], 10.0);
        let npairs = 12.0f64;
        for eps in [1.0, 0.1, 0.01] {
            let g = smoothed_objective(MetricKind::J(0.5), &c, eps).unwrap();
            let jmin = j_min(&c, 0.5).unwrap().value;
            assert!(g.is_finite());
            assert!((g + jmin).abs() <= eps * npairs.ln() + 1e-12);
        }
        assert!(smoothed_objective(MetricKind::B, &c, 0.1).is_err());
        assert!(smoothed_objective(MetricKind::D, &c, 0.0).is_err());
        let vals = [1.0, 2.0, 3.0];
        assert!(smooth(&[1.1, 2.0, 3.0], 0.1, true) < smooth(&vals, 0.1, true));
    }

    #[test]
    fn invariance_under_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = random_joint(&mut rng, 4, &[1, 2], &[2, 2], 3.0);
        let u = haar_unitary(4, &mut rng);
        let rot_common = JointConstellation::from_users(
            4,
            1,
            c.users()
                .iter()
                .map(|us| UserConstellation::from_symbols(us.symbols().iter().map(|x| &u * x).collect()).unwrap())
                .collect(),
        )
        .unwrap();
        let rot_user = JointConstellation::from_users(
            4,
            1,
            c.users()
                .iter()
                .map(|us| {
                    UserConstellation::from_symbols(
                        us.symbols().iter().map(|x| x * haar_unitary(x.ncols(), &mut rng)).collect(),
                    )
                    .unwrap()
                })
                .collect(),
        )
        .unwrap();
        let kinds = [
            MetricKind::B,
            MetricKind::Riemannian,
            MetricKind::J(0.5),
            MetricKind::J(0.3),
            MetricKind::Relaxed,
            MetricKind::D,
            MetricKind::E,
            MetricKind::M1,
            MetricKind::M2(2),
            MetricKind::Coherence,
        ];
        for k in kinds {
            let a = evaluate(k, &c).unwrap().value;
            for other in [&rot_common, &rot_user] {
                let b = evaluate(k, other).unwrap().value;
                assert!((a - b).abs() < 1e-8 * a.abs().max(1.0), "{k:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn parse_kinds() {
        assert_eq!(MetricKind::parse("J:0.5").unwrap(), MetricKind::J(0.5));
        assert_eq!(MetricKind::parse("m2:4").unwrap(), MetricKind::M2(4));
        assert_eq!(MetricKind::parse("m2").unwrap(), MetricKind::M2(4));
        assert!(MetricKind::parse("J:2").is_err());
        assert!(MetricKind::parse("zz").is_err());
    }
}
