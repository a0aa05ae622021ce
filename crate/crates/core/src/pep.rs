//! Pairwise error probability: Gamma-mixture Monte Carlo, exact residue sum,
//! Chernoff bound and b-based exponent bounds.

use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::metrics::{self, EigenSpectrum};
use crate::rng;

/// |λ − 1| below this is treated as an exact unit eigenvalue.
pub const ZERO_TOL: f64 = 1e-10;
/// Relative gap under which two eigenvalues of Γ − I share one pole.
pub const MERGE_TOL: f64 = 1e-9;
/// Largest supported pole order.
pub const MAX_POLE_ORDER: usize = 64;
/// Excess beyond [0, 1] that is reported when clamping.
pub const CLAMP_FLAG: f64 = 1e-8;

const MC_BLOCK: u64 = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PepMethod {
    MonteCarlo,
    ClosedForm,
    Empirical,
}

#[derive(Clone, Debug, Serialize)]
pub struct PepResult {
    pub value: f64,
    pub method: PepMethod,
    pub trials: Option<u64>,
    pub stderr: Option<f64>,
    pub clamped: bool,
    pub diagnostic: Option<String>,
}

impl PepResult {
    pub fn monte_carlo(method: PepMethod, hits: u64, trials: u64) -> Self {
        let p = hits as f64 / trials as f64;
        PepResult {
            value: p,
            method,
            trials: Some(trials),
            stderr: Some((p * (1.0 - p) / trials as f64).sqrt()),
            clamped: false,
            diagnostic: None,
        }
    }
}

/// Distinct nonzero eigenvalues of Γ − I with multiplicities; positives first, each group descending.
#[derive(Clone, Debug, PartialEq)]
pub struct PepSpectrum {
    pub lambda_hat: Vec<f64>,
    pub multiplicity: Vec<usize>,
    pub positive_count: usize,
}

pub fn pep_spectrum(spec: &EigenSpectrum) -> PepSpectrum {
    let mut hats: Vec<f64> = spec.lambdas.iter().map(|l| l - 1.0).filter(|h| h.abs() >= ZERO_TOL).collect();
    hats.sort_by(|a, b| b.total_cmp(a));
    let mut vals: Vec<f64> = Vec::new();
    let mut mult: Vec<usize> = Vec::new();
    for h in hats {
        if let Some(last) = vals.last_mut() {
            let m = mult.last_mut().unwrap();
            if (h - *last).abs() < MERGE_TOL * last.abs().max(1.0) && h.signum() == last.signum() {
                *last = (*last * *m as f64 + h) / (*m as f64 + 1.0);
                *m += 1;
                continue;
            }
        }
        vals.push(h);
        mult.push(1);
    }
    let positive_count = vals.iter().filter(|&&v| v > 0.0).count();
    PepSpectrum { lambda_hat: vals, multiplicity: mult, positive_count }
}

fn gram_equal(spec: &EigenSpectrum) -> bool {
    spec.lambdas.iter().all(|l| (l - 1.0).abs() < ZERO_TOL)
}

/// Estimates P[Σ(λ_i − 1)g_i ≤ N Σ ln λ_i] with g_i ~ Gamma(N, 1).
pub fn pep_monte_carlo(x: &CMat, xp: &CMat, n: usize, trials: u64, seed: u64) -> Result<PepResult> {
    if trials == 0 || n == 0 {
        return Err(Error::InvalidInput("trials and N must be positive".into()));
    }
    let spec = metrics::gamma_spectrum(x, xp)?;
    if gram_equal(&spec) {
        let mut r = PepResult::monte_carlo(PepMethod::MonteCarlo, trials, trials);
        r.diagnostic = Some("non-identifiable pair".into());
        return Ok(r);
    }
    let hats: Vec<f64> = spec
        .lambdas
        .iter()
        .map(|l| l - 1.0)
        .filter(|h| h.abs() >= ZERO_TOL)
        .collect();
    let c = n as f64 * spec.log_det();
    let gamma = Gamma::new(n as f64, 1.0).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let hits: u64 = rng::blocks(trials, MC_BLOCK)
        .par_iter()
        .map(|&(id, len)| {
            let mut r = rng::stream(seed, id);
            let mut h = 0u64;
            for _ in 0..len {
                let q: f64 = hats.iter().map(|&l| l * gamma.sample(&mut r)).sum();
                if q <= c {
                    h += 1;
                }
            }
            h
        })
        .sum();
    Ok(PepResult::monte_carlo(PepMethod::MonteCarlo, hits, trials))
}

/// Residue of e^{sc} / (s Π_l (1 + s λ̂_l)^{m_l}) at the pole of index k.
fn residue(c: f64, poles: &[f64], hats: &[f64], orders: &[usize], k: usize) -> f64 {
    let p = poles[k];
    let m = orders[k];
    // value of the cofactor at p: e^{pc} λ̂_k^{-m} / (p Π_{l≠k} (1 + p λ̂_l)^{m_l})
    let mut logmag = p * c - m as f64 * hats[k].abs().ln() - p.abs().ln();
    let mut sign = if hats[k] < 0.0 && m % 2 == 1 { -1.0 } else { 1.0 };
    if p < 0.0 {
        sign = -sign;
    }
    for (l, (&h, &ml)) in hats.iter().zip(orders).enumerate() {
        if l == k {
            continue;
        }
        let f = 1.0 + p * h;
        logmag -= ml as f64 * f.abs().ln();
        if f < 0.0 && ml % 2 == 1 {
            sign = -sign;
        }
    }
    // Taylor coefficients of the log of the cofactor around p
    let mut anchors: Vec<(f64, f64)> = vec![(0.0, 1.0)];
    for (l, &pl) in poles.iter().enumerate() {
        if l != k {
            anchors.push((pl, orders[l] as f64));
        }
    }
    let mut phi = vec![0.0; m];
    for (j, ph) in phi.iter_mut().enumerate().skip(1) {
        let jf = j as f64;
        let sgn = if j % 2 == 0 { 1.0 } else { -1.0 };
        let mut s = 0.0;
        for &(a, w) in &anchors {
            s += w * sgn / (jf * (p - a).powi(j as i32));
        }
        *ph = s;
    }
    if m > 1 {
        phi[1] += c;
    }
    let mut e = vec![0.0; m];
    e[0] = 1.0;
    for nn in 1..m {
        let mut s = 0.0;
        for j in 1..=nn {
            s += j as f64 * phi[j] * e[nn - j];
        }
        e[nn] = s / nn as f64;
    }
    sign * logmag.exp() * e[m - 1]
}

/// Exact PEP by summing residues on the side selected by the sign of ln det Γ.
pub fn pep_closed_form(x: &CMat, xp: &CMat, n: usize) -> Result<PepResult> {
    if n == 0 {
        return Err(Error::InvalidInput("N must be positive".into()));
    }
    let spec = metrics::gamma_spectrum(x, xp)?;
    if gram_equal(&spec) {
        return Err(Error::InvalidInput("Gram-equal pair: the error event is degenerate".into()));
    }
    let ps = pep_spectrum(&spec);
    let orders: Vec<usize> = ps.multiplicity.iter().map(|&m| m * n).collect();
    if let Some(&o) = orders.iter().find(|&&o| o > MAX_POLE_ORDER) {
        return Err(Error::Unsupported(format!("pole order {o} exceeds {MAX_POLE_ORDER}; use Monte Carlo")));
    }
    let c = n as f64 * spec.log_det();
    let poles: Vec<f64> = ps.lambda_hat.iter().map(|h| -1.0 / h).collect();
    let raw = if c >= 0.0 {
        let s: f64 = (0..ps.positive_count)
            .map(|k| residue(c, &poles, &ps.lambda_hat, &orders, k))
            .sum();
        1.0 + s
    } else {
        let s: f64 = (ps.positive_count..poles.len())
            .map(|k| residue(c, &poles, &ps.lambda_hat, &orders, k))
            .sum();
        -s
    };
    if !raw.is_finite() {
        return Err(Error::NonFinite("residue sum".into()));
    }
    let value = raw.clamp(0.0, 1.0);
    let excess = (raw - value).abs();
    let clamped = excess > CLAMP_FLAG;
    Ok(PepResult {
        value,
        method: PepMethod::ClosedForm,
        trials: None,
        stderr: None,
        clamped,
        diagnostic: clamped.then(|| format!("residue sum {raw} clamped to [0, 1]")),
    })
}

/// exp(−N J_s), an upper bound on the PEP.
pub fn pep_chernoff(x: &CMat, xp: &CMat, n: usize, s: f64) -> Result<f64> {
    Ok((-(n as f64) * metrics::metric_j(x, xp, s)?).exp())
}

/// (b/2 − T ln 2, b + T): bounds on the per-antenna PEP exponent.
pub fn exponent_bounds(x: &CMat, xp: &CMat) -> Result<(f64, f64)> {
    let b = metrics::metric_b(x, xp)?;
    let t = x.nrows() as f64;
    Ok((0.5 * b - t * std::f64::consts::LN_2, b + t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cgauss, scale, C64};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn orth() -> (CMat, CMat) {
        let mut a = CMat::zeros(2, 1);
        a[(0, 0)] = C64::new(2f64.sqrt(), 0.0);
        let mut b = CMat::zeros(2, 1);
        b[(1, 0)] = C64::new(2f64.sqrt(), 0.0);
        (a, b)
    }

    #[test]
    fn orthogonal_pair_closed_form_is_quarter() {
        let (x, xp) = orth();
        let r = pep_closed_form(&x, &xp, 1).unwrap();
        assert!((r.value - 0.25).abs() < 1e-12);
        assert!(!r.clamped);
        // both branches agree at ln det Γ = 0
        let spec = metrics::gamma_spectrum(&x, &xp).unwrap();
        let ps = pep_spectrum(&spec);
        let poles: Vec<f64> = ps.lambda_hat.iter().map(|h| -1.0 / h).collect();
        let ord = vec![1, 1];
        let pos = 1.0 + residue(0.0, &poles, &ps.lambda_hat, &ord, 0);
        let neg = -residue(0.0, &poles, &ps.lambda_hat, &ord, 1);
        assert!((pos - 0.25).abs() < 1e-12 && (neg - 0.25).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_examples() {
        let (x, xp) = orth();
        let r = pep_monte_carlo(&x, &xp, 1, 200_000, 3).unwrap();
        assert!((r.value - 0.25).abs() < 3.0 * r.stderr.unwrap());
        let again = pep_monte_carlo(&x, &xp, 1, 200_000, 3).unwrap();
        assert_eq!(r.value, again.value);
        let same = pep_monte_carlo(&x, &x, 2, 10, 1).unwrap();
        assert_eq!(same.value, 1.0);
        assert!(same.diagnostic.is_some());
        assert!(pep_closed_form(&x, &x, 1).is_err());
    }

    #[test]
    fn closed_form_matches_monte_carlo_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (i, n) in [1usize, 2, 3].into_iter().enumerate() {
            let x = scale(&cgauss(4, 2, &mut rng), 1.2);
            let xp = scale(&cgauss(4, 2, &mut rng), 1.2);
            let cf = pep_closed_form(&x, &xp, n).unwrap().value;
            let mc = pep_monte_carlo(&x, &xp, n, 400_000, 10 + i as u64).unwrap();
            assert!((cf - mc.value).abs() < 3.5 * mc.stderr.unwrap().max(1e-6), "N={n}: {cf} vs {}", mc.value);
        }
    }

    #[test]
    fn chernoff_and_bounds_examples() {
        let (x, xp) = orth();
        assert!((pep_chernoff(&x, &xp, 1, 0.5).unwrap() - 0.75).abs() < 1e-12);
        assert!((pep_chernoff(&x, &x, 3, 0.5).unwrap() - 1.0).abs() < 1e-12);
        let (lo, hi) = exponent_bounds(&x, &xp).unwrap();
        let ln3 = 3f64.ln();
        assert!((lo - (ln3 - 2.0 * 2f64.ln())).abs() < 1e-12);
        assert!((hi - (2.0 * ln3 + 2.0)).abs() < 1e-12);
        let (lo, hi) = exponent_bounds(&x, &x).unwrap();
        assert!((lo + 2.0 * 2f64.ln()).abs() < 1e-12 && (hi - 2.0).abs() < 1e-12);
    }

    #[test]
    fn spectrum_split_and_merge() {
        let spec = EigenSpectrum { lambdas: vec![3.0, 3.0 + 1e-12, 1.0, 0.5] };
        let ps = pep_spectrum(&spec);
        assert_eq!(ps.multiplicity, vec![2, 1]);
        assert_eq!(ps.positive_count, 1);
        let total: f64 = ps.lambda_hat.iter().zip(&ps.multiplicity).map(|(h, &m)| m as f64 * (1.0 + h).ln()).sum();
        assert!((total - spec.log_det()).abs() < 1e-8);
    }

    #[test]
    fn pole_order_overflow_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = cgauss(3, 1, &mut rng);
        let xp = cgauss(3, 1, &mut rng);
        assert!(matches!(pep_closed_form(&x, &xp, 65), Err(Error::Unsupported(_))));
    }

    #[test]
    fn more_antennas_lower_pep() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let x = cgauss(4, 1, &mut rng);
            let xp = cgauss(4, 1, &mut rng);
            let p1 = pep_closed_form(&x, &xp, 1).unwrap().value;
            let p4 = pep_closed_form(&x, &xp, 4).unwrap().value;
            assert!(p4 < p1);
        }
    }
}
