//! Channel model, constellation containers, likelihood and joint ML detection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, C64};

/// Relative tolerance for power metadata checks.
pub const POWER_RTOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Coherence length.
    pub t: usize,
    /// Transmit antennas per user.
    pub m: Vec<usize>,
    /// Receive antennas.
    pub n: usize,
    /// Power budget, linear scale.
    pub power: f64,
}

impl ChannelConfig {
    pub fn new(t: usize, m: Vec<usize>, n: usize, power: f64) -> Result<Self> {
        let c = ChannelConfig { t, m, n, power };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t < 2 {
            return Err(Error::InvalidInput(format!("T must be at least 2, got {}", self.t)));
        }
        if self.m.is_empty() || self.m.iter().any(|&m| m == 0) {
            return Err(Error::InvalidInput("every user needs at least one antenna".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidInput("N must be at least 1".into()));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::InvalidInput(format!("power budget must be positive, got {}", self.power)));
        }
        if self.m_tot() > self.t {
            return Err(Error::InvalidInput(format!(
                "total antennas {} exceed coherence length {}",
                self.m_tot(),
                self.t
            )));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.m.len()
    }

    pub fn m_tot(&self) -> usize {
        self.m.iter().sum()
    }

    /// Column offset of each user inside a joint symbol.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.m.len());
        let mut acc = 0;
        for &m in &self.m {
            off.push(acc);
            acc += m;
        }
        off
    }
}

/// One user's symbol set, stored as transmitted.
#[derive(Clone, Debug, PartialEq)]
pub struct UserConstellation {
    symbols: Vec<CMat>,
    power: f64,
}

impl UserConstellation {
    /// Builds a user set and checks that the declared power matches the symbol energies.
    pub fn new(symbols: Vec<CMat>, power: f64) -> Result<Self> {
        let measured = Self::measure(&symbols)?;
        let rel = (measured - power).abs() / power.abs().max(f64::MIN_POSITIVE);
        if !(rel <= POWER_RTOL) {
            return Err(Error::Validation(format!(
                "declared power {power} does not match symbol energy {measured}"
            )));
        }
        Ok(UserConstellation { symbols, power })
    }

    /// Builds a user set whose power is read off the symbols.
    pub fn from_symbols(symbols: Vec<CMat>) -> Result<Self> {
        let power = Self::measure(&symbols)?;
        Ok(UserConstellation { symbols, power })
    }

    fn measure(symbols: &[CMat]) -> Result<f64> {
        let first = symbols
            .first()
            .ok_or_else(|| Error::Empty("user constellation has no symbols".into()))?;
        let (t, m) = first.shape();
        for (i, s) in symbols.iter().enumerate() {
            if s.shape() != (t, m) {
                return Err(Error::Dimension(format!(
                    "symbol {i} is {}x{}, expected {t}x{m}",
                    s.nrows(),
                    s.ncols()
                )));
            }
            if !linalg::is_finite(s) {
                return Err(Error::NonFinite(format!("symbol {i}")));
            }
        }
        let e: f64 = symbols.iter().map(linalg::fro2).sum();
        Ok(e / (t as f64 * symbols.len() as f64))
    }

    pub fn symbols(&self) -> &[CMat] {
        &self.symbols
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn t(&self) -> usize {
        self.symbols[0].nrows()
    }

    pub fn m(&self) -> usize {
        self.symbols[0].ncols()
    }

    /// log2 of the set size when it is a power of two.
    pub fn bits(&self) -> Option<u32> {
        let n = self.symbols.len();
        n.is_power_of_two().then(|| n.trailing_zeros())
    }

    /// Rescales every symbol so the average power becomes `power`.
    pub fn with_power(&self, power: f64) -> Result<Self> {
        if !(power >= 0.0 && power.is_finite()) {
            return Err(Error::InvalidInput(format!("power {power}")));
        }
        if self.power <= 0.0 {
            return Err(Error::InvalidInput("cannot rescale a zero-power user".into()));
        }
        let s = (power / self.power).sqrt();
        let symbols = self.symbols.iter().map(|x| linalg::scale(x, s)).collect();
        Ok(UserConstellation { symbols, power })
    }
}

/// Product of per-user sets; joint symbols are horizontal concatenations.
#[derive(Clone, Debug, PartialEq)]
pub struct JointConstellation {
    config: ChannelConfig,
    users: Vec<UserConstellation>,
}

impl JointConstellation {
    /// Checks dimensions and that the strongest user sits at the budget.
    pub fn new(config: ChannelConfig, users: Vec<UserConstellation>) -> Result<Self> {
        config.validate()?;
        if users.len() != config.k() {
            return Err(Error::Dimension(format!("{} users for K = {}", users.len(), config.k())));
        }
        for (k, u) in users.iter().enumerate() {
            if u.t() != config.t || u.m() != config.m[k] {
                return Err(Error::Dimension(format!(
                    "user {k} symbols are {}x{}, expected {}x{}",
                    u.t(),
                    u.m(),
                    config.t,
                    config.m[k]
                )));
            }
            if u.power() > config.power * (1.0 + POWER_RTOL) {
                return Err(Error::Validation(format!(
                    "user {k} power {} exceeds budget {}",
                    u.power(),
                    config.power
                )));
            }
        }
        let pmax = users.iter().map(|u| u.power()).fold(0.0, f64::max);
        if (pmax - config.power).abs() > POWER_RTOL * config.power {
            return Err(Error::Validation(format!(
                "largest user power {pmax} differs from budget {}",
                config.power
            )));
        }
        Ok(JointConstellation { config, users })
    }

    /// Builds from user sets, taking the budget as the largest user power.
    pub fn from_users(t: usize, n: usize, users: Vec<UserConstellation>) -> Result<Self> {
        let m = users.iter().map(|u| u.m()).collect();
        let p = users.iter().map(|u| u.power()).fold(0.0, f64::max);
        Self::new(ChannelConfig::new(t, m, n, p)?, users)
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn users(&self) -> &[UserConstellation] {
        &self.users
    }

    pub fn t(&self) -> usize {
        self.config.t
    }

    pub fn k(&self) -> usize {
        self.users.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.users.iter().map(|u| u.len()).collect()
    }

    pub fn powers(&self) -> Vec<f64> {
        self.users.iter().map(|u| u.power()).collect()
    }

    pub fn joint_count(&self) -> usize {
        self.users.iter().map(|u| u.len()).product()
    }

    /// Per-user indices of a flat joint index; user 0 is the most significant digit.
    pub fn index_tuple(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.users.len()];
        for k in (0..self.users.len()).rev() {
            let n = self.users[k].len();
            idx[k] = flat % n;
            flat /= n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.users).fold(0, |acc, (&i, u)| acc * u.len() + i)
    }

    pub fn joint_symbol(&self, idx: &[usize]) -> CMat {
        let blocks: Vec<&CMat> = idx.iter().zip(&self.users).map(|(&i, u)| &u.symbols[i]).collect();
        linalg::hcat(&blocks)
    }

    /// All joint symbols in lexicographic order.
    pub fn joint_symbols(&self) -> Vec<CMat> {
        (0..self.joint_count()).map(|f| self.joint_symbol(&self.index_tuple(f))).collect()
    }

    /// Rescales every user by the same factor so the budget becomes `power`.
    pub fn with_power_budget(&self, power: f64) -> Result<Self> {
        let ratio = power / self.config.power;
        let users = self
            .users
            .iter()
            .map(|u| u.with_power(u.power() * ratio))
            .collect::<Result<Vec<_>>>()?;
        let mut config = self.config.clone();
        config.power = power;
        Self::new(config, users)
    }

    /// Sets per-user powers; the budget becomes their maximum.
    pub fn with_user_powers(&self, powers: &[f64]) -> Result<Self> {
        if powers.len() != self.users.len() {
            return Err(Error::Dimension("one power per user required".into()));
        }
        let users = self
            .users
            .iter()
            .zip(powers)
            .map(|(u, &p)| u.with_power(p))
            .collect::<Result<Vec<_>>>()?;
        let mut config = self.config.clone();
        config.power = powers.iter().copied().fold(0.0, f64::max);
        Self::new(config, users)
    }

    pub fn with_n(&self, n: usize) -> Result<Self> {
        let mut c = self.clone();
        c.config.n = n;
        c.config.validate()?;
        Ok(c)
    }
}

pub fn signal_covariance(x: &CMat) -> Result<CMat> {
    if !linalg::is_finite(x) {
        return Err(Error::InvalidInput("non-finite symbol entries".into()));
    }
    Ok(linalg::cov(x))
}

/// Natural log of the conditional output density p(Y | x).
pub fn log_likelihood(y: &CMat, x: &CMat) -> Result<f64> {
    if y.nrows() != x.nrows() {
        return Err(Error::Dimension(format!("Y has {} rows, x has {}", y.nrows(), x.nrows())));
    }
    let t = x.nrows() as f64;
    let n = y.ncols() as f64;
    let c = linalg::chol(&signal_covariance(x)?)?;
    let ld = linalg::chol_logdet(&c);
    let z = c.solve(y);
    let q = linalg::inner(y, &z);
    Ok(-q - n * ld - n * t * std::f64::consts::PI.ln())
}

/// Precomputed per-symbol quantities for repeated ML detection.
#[derive(Clone, Debug)]
pub struct Detector {
    t: usize,
    inv: Vec<Vec<C64>>,
    logdet: Vec<f64>,
}

impl Detector {
    pub fn new(c: &JointConstellation) -> Result<Self> {
        let t = c.t();
        let mut inv = Vec::with_capacity(c.joint_count());
        let mut logdet = Vec::with_capacity(c.joint_count());
        for x in c.joint_symbols() {
            let (ld, ai) = linalg::hpd_logdet_inv(&signal_covariance(&x)?)?;
            inv.push(ai.iter().copied().collect());
            logdet.push(ld);
        }
        Ok(Detector { t, inv, logdet })
    }

    /// Flat index of the maximum-likelihood joint symbol; ties go to the lowest index.
    pub fn detect(&self, y: &CMat) -> Result<usize> {
        if y.nrows() != self.t {
            return Err(Error::Dimension(format!("Y has {} rows, expected {}", y.nrows(), self.t)));
        }
        let t = self.t;
        let n = y.ncols() as f64;
        let r = y * y.adjoint();
        // column-major storage: entry (i, j) at j * t + i
        let rv: Vec<C64> = r.iter().copied().collect();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (s, (ai, &ld)) in self.inv.iter().zip(&self.logdet).enumerate() {
            let mut q = 0.0;
            for j in 0..t {
                for i in 0..t {
                    let a = ai[j * t + i];
                    let b = rv[i * t + j];
                    q += a.re * b.re - a.im * b.im;
                }
            }
            let score = -q - n * ld;
            if score > best_score {
                best_score = score;
                best = s;
            }
        }
        Ok(best)
    }
}

/// Joint ML detection; returns the per-user index tuple.
pub fn ml_detect(y: &CMat, c: &JointConstellation) -> Result<Vec<usize>> {
    if c.joint_count() == 0 {
        return Err(Error::Empty("constellation".into()));
    }
    let flat = Detector::new(c)?.detect(y)?;
    Ok(c.index_tuple(flat))
}

/// Unordered flat-index pairs whose Gram matrices coincide within `tol`.
pub fn check_identifiability(c: &JointConstellation, tol: f64) -> Vec<(usize, usize)> {
    let grams: Vec<CMat> = c.joint_symbols().iter().map(linalg::gram).collect();
    let mut out = Vec::new();
    for i in 0..grams.len() {
        for j in i + 1..grams.len() {
            if (&grams[i] - &grams[j]).norm() <= tol {
                out.push((i, j));
            }
        }
    }
    out
}

/// Draws Y = x Hᵀ + Z with iid CN(0,1) fading and noise.
pub fn sample_channel_output<R: Rng + ?Sized>(x: &CMat, n: usize, rng: &mut R) -> CMat {
    let h = linalg::cgauss(n, x.ncols(), rng);
    let z = linalg::cgauss(x.nrows(), n, rng);
    x * h.transpose() + z
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationKind {
    TxPerUser,
    Rx,
}

/// Spatial fading correlation: per-user transmit matrices or one receive matrix.
#[derive(Clone, Debug)]
pub struct CorrelationModel {
    pub kind: CorrelationKind,
    pub matrices: Vec<CMat>,
}

/// Maps each symbol x_k to x_k Ψ_k^{1/2}. Also returns, per user, the average of
/// ‖x_k Ψ_k^{-1/2}‖²_F over the input set, the quantity bounded by PT under correlation.
pub fn apply_tx_correlation(
    c: &JointConstellation,
    model: &CorrelationModel,
) -> Result<(JointConstellation, Vec<f64>)> {
    if model.kind != CorrelationKind::TxPerUser {
        return Err(Error::InvalidInput("transmit correlation model required".into()));
    }
    if model.matrices.len() != c.k() {
        return Err(Error::Dimension("one correlation matrix per user required".into()));
    }
    let mut users = Vec::with_capacity(c.k());
    let mut constraint = Vec::with_capacity(c.k());
    for (u, psi) in c.users().iter().zip(&model.matrices) {
        if psi.nrows() != u.m() {
            return Err(Error::Dimension(format!("Ψ is {}x{}, user has {} antennas", psi.nrows(), psi.ncols(), u.m())));
        }
        let half = linalg::hpd_pow(psi, 0.5)?;
        let ihalf = linalg::hpd_pow(psi, -0.5)?;
        let syms: Vec<CMat> = u.symbols().iter().map(|x| x * &half).collect();
        let v = u.symbols().iter().map(|x| linalg::fro2(&(x * &ihalf))).sum::<f64>() / u.len() as f64;
        constraint.push(v);
        users.push(UserConstellation::from_symbols(syms)?);
    }
    Ok((JointConstellation::from_users(c.t(), c.config().n, users)?, constraint))
}

/// Y Ψ^{-1/2}.
pub fn whiten_rx_correlation(y: &CMat, model: &CorrelationModel) -> Result<CMat> {
    if model.kind != CorrelationKind::Rx || model.matrices.len() != 1 {
        return Err(Error::InvalidInput("single receive correlation matrix required".into()));
    }
    let psi = &model.matrices[0];
    if psi.nrows() != y.ncols() {
        return Err(Error::Dimension(format!("Ψ is {}x{}, Y has {} columns", psi.nrows(), psi.ncols(), y.ncols())));
    }
    Ok(y * linalg::hpd_pow(psi, -0.5)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cgauss, eye, haar_frame, haar_unitary, scale};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn e(t: usize, i: usize) -> CMat {
        let mut v = CMat::zeros(t, 1);
        v[(i, 0)] = C64::new(1.0, 0.0);
        v
    }

    fn two_orth() -> JointConstellation {
        let u = UserConstellation::from_symbols(vec![scale(&e(2, 0), 2f64.sqrt()), scale(&e(2, 1), 2f64.sqrt())]).unwrap();
        JointConstellation::from_users(2, 1, vec![u]).unwrap()
    }

    #[test]
    fn covariance_examples() {
        assert_eq!(signal_covariance(&CMat::zeros(2, 1)).unwrap(), eye(2));
        let a = signal_covariance(&scale(&e(2, 0), 2f64.sqrt())).unwrap();
        assert!((a[(0, 0)].re - 3.0).abs() < 1e-15 && (a[(1, 1)].re - 1.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = cgauss(4, 2, &mut rng);
        let a = signal_covariance(&x).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut s = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
                for k in 0..2 {
                    s += x[(i, k)] * x[(j, k)].conj();
                }
                assert!((a[(i, j)] - s).norm() < 1e-12);
            }
        }
        let mut bad = x.clone();
        bad[(0, 0)] = C64::new(f64::NAN, 0.0);
        assert!(signal_covariance(&bad).is_err());
    }

    #[test]
    fn likelihood_examples() {
        let pi = std::f64::consts::PI;
        let ll = log_likelihood(&CMat::zeros(2, 3), &CMat::zeros(2, 1)).unwrap();
        assert!((ll + 6.0 * pi.ln()).abs() < 1e-12);
        let ll = log_likelihood(&CMat::zeros(2, 1), &scale(&e(2, 0), 2f64.sqrt())).unwrap();
        assert!((ll + 3f64.ln() + 2.0 * pi.ln()).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = cgauss(4, 2, &mut rng);
        let y = cgauss(4, 3, &mut rng);
        let a = linalg::cov(&x);
        let ainv = a.clone().try_inverse().unwrap();
        let oracle = -(y.adjoint() * ainv * &y).trace().re - 3.0 * a.determinant().re.ln() - 12.0 * pi.ln();
        assert!((log_likelihood(&y, &x).unwrap() - oracle).abs() < 1e-9);
        assert!(log_likelihood(&CMat::zeros(3, 1), &x).is_err());
    }

    #[test]
    fn likelihood_unitary_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = cgauss(4, 2, &mut rng);
        let y = cgauss(4, 2, &mut rng);
        let u = haar_unitary(4, &mut rng);
        let a = log_likelihood(&y, &x).unwrap();
        let b = log_likelihood(&(&u * &y), &(&u * &x)).unwrap();
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn detection_examples() {
        let single = JointConstellation::from_users(
            2,
            1,
            vec![UserConstellation::from_symbols(vec![scale(&e(2, 0), 1.0)]).unwrap()],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(ml_detect(&cgauss(2, 1, &mut rng), &single).unwrap(), vec![0]);
        let c = two_orth();
        assert_eq!(ml_detect(&c.joint_symbol(&[0]), &c).unwrap(), vec![0]);
        assert_eq!(ml_detect(&c.joint_symbol(&[1]), &c).unwrap(), vec![1]);
    }

    #[test]
    fn noiseless_strong_channel_detects_sent_symbol() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = 4;
        let u1 = UserConstellation::from_symbols((0..2).map(|_| scale(&haar_frame(t, 1, &mut rng), 2.0)).collect()).unwrap();
        let u2 = UserConstellation::from_symbols((0..2).map(|_| scale(&haar_frame(t, 1, &mut rng), 2.0)).collect()).unwrap();
        let c = JointConstellation::from_users(t, 4, vec![u1, u2]).unwrap();
        let ll: Vec<CMat> = c.joint_symbols();
        for f in 0..c.joint_count() {
            let h = scale(&cgauss(4, 2, &mut rng), 100.0);
            let y = &ll[f] * h.transpose();
            let scores: Vec<f64> = ll.iter().map(|x| log_likelihood(&y, x).unwrap()).collect();
            let mut best = 0;
            for (i, s) in scores.iter().enumerate() {
                if *s > scores[best] {
                    best = i;
                }
            }
            assert_eq!(best, f);
            assert_eq!(c.flat_index(&ml_detect(&y, &c).unwrap()), f);
        }
    }

    #[test]
    fn identifiability() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = scale(&haar_frame(4, 2, &mut rng), 1.5);
        let v = haar_unitary(2, &mut rng);
        let u = UserConstellation::from_symbols(vec![x.clone(), &x * &v]).unwrap();
        let c = JointConstellation::from_users(4, 1, vec![u]).unwrap();
        assert_eq!(check_identifiability(&c, 1e-9), vec![(0, 1)]);
        assert!(check_identifiability(&two_orth(), 1e-9).is_empty());
        let u = UserConstellation::from_symbols((0..8).map(|_| haar_frame(4, 2, &mut rng)).collect()).unwrap();
        let c = JointConstellation::from_users(4, 1, vec![u]).unwrap();
        assert!(check_identifiability(&c, 1e-9).is_empty());
    }

    #[test]
    fn channel_sampling_moments_and_determinism() {
        let x = scale(&e(2, 0), 2f64.sqrt());
        let mut r1 = ChaCha8Rng::seed_from_u64(11);
        let mut r2 = ChaCha8Rng::seed_from_u64(11);
        assert_eq!(sample_channel_output(&x, 2, &mut r1), sample_channel_output(&x, 2, &mut r2));
        let draws = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let zero = CMat::zeros(2, 1);
        let mut acc = 0.0;
        for _ in 0..draws {
            acc += sample_channel_output(&zero, 1, &mut rng)[(0, 0)].norm_sqr();
        }
        let var = acc / draws as f64;
        // |z|² ~ Exp(1): standard deviation 1
        assert!((var - 1.0).abs() < 3.0 / (draws as f64).sqrt());
        let mut cov = CMat::zeros(2, 2);
        for _ in 0..draws {
            let y = sample_channel_output(&x, 1, &mut rng);
            cov += &y * y.adjoint();
        }
        cov /= C64::new(draws as f64, 0.0);
        let target = linalg::cov(&x);
        // entry (0,0) ~ 3·Exp(1); sd 3/sqrt(n)
        assert!((cov[(0, 0)].re - target[(0, 0)].re).abs() < 3.0 * 3.0 / (draws as f64).sqrt());
        assert!((cov[(1, 1)].re - 1.0).abs() < 3.0 / (draws as f64).sqrt());
        assert!(cov[(0, 1)].norm() < 3.0 * 3f64.sqrt() / (draws as f64).sqrt());
    }

    #[test]
    fn correlation_transforms() {
        let c = two_orth();
        let id = CorrelationModel { kind: CorrelationKind::TxPerUser, matrices: vec![eye(1)] };
        let (out, cons) = apply_tx_correlation(&c, &id).unwrap();
        assert_eq!(out.joint_symbols(), c.joint_symbols());
        assert!((cons[0] - 2.0).abs() < 1e-12);
        let four = CorrelationModel { kind: CorrelationKind::TxPerUser, matrices: vec![scale(&eye(1), 4.0)] };
        let (out, _) = apply_tx_correlation(&c, &four).unwrap();
        for (a, b) in out.joint_symbols().iter().zip(c.joint_symbols()) {
            assert!((a - scale(&b, 2.0)).norm() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = cgauss(2, 2, &mut rng);
        let psi = &g * g.adjoint() + eye(2);
        let u = UserConstellation::from_symbols(vec![cgauss(4, 2, &mut rng), cgauss(4, 2, &mut rng)]).unwrap();
        let c = JointConstellation::from_users(4, 1, vec![u]).unwrap();
        let m = CorrelationModel { kind: CorrelationKind::TxPerUser, matrices: vec![psi.clone()] };
        let (out, _) = apply_tx_correlation(&c, &m).unwrap();
        let x = &c.users()[0].symbols()[0];
        let xt = &out.users()[0].symbols()[0];
        let lhs = x * &psi * x.adjoint();
        let rhs = signal_covariance(xt).unwrap() - eye(4);
        assert!((lhs - rhs).norm() < 1e-10);
        let mut bad = eye(2);
        bad[(1, 1)] = C64::new(-2.0, 0.0);
        let m = CorrelationModel { kind: CorrelationKind::TxPerUser, matrices: vec![bad] };
        assert!(apply_tx_correlation(&c, &m).is_err());
    }

    #[test]
    fn rx_whitening() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y = cgauss(4, 3, &mut rng);
        let id = CorrelationModel { kind: CorrelationKind::Rx, matrices: vec![eye(3)] };
        assert!((whiten_rx_correlation(&y, &id).unwrap() - &y).norm() < 1e-12);
        let nine = CorrelationModel { kind: CorrelationKind::Rx, matrices: vec![scale(&eye(3), 9.0)] };
        assert!((whiten_rx_correlation(&y, &nine).unwrap() - scale(&y, 1.0 / 3.0)).norm() < 1e-12);
        let g = cgauss(3, 3, &mut rng);
        let psi = &g * g.adjoint() + eye(3);
        let psi_inv = psi.clone().try_inverse().unwrap();
        let fwd = whiten_rx_correlation(&y, &CorrelationModel { kind: CorrelationKind::Rx, matrices: vec![psi] }).unwrap();
        let back = whiten_rx_correlation(&fwd, &CorrelationModel { kind: CorrelationKind::Rx, matrices: vec![psi_inv] }).unwrap();
        assert!((back - y).norm() < 1e-9);
    }

    #[test]
    fn power_validation() {
        let x = scale(&e(2, 0), 2f64.sqrt());
        assert!(UserConstellation::new(vec![x.clone()], 1.0).is_ok());
        assert!(UserConstellation::new(vec![x], 1.01).is_err());
        let c = two_orth();
        let half = c.with_power_budget(0.5).unwrap();
        assert!((half.users()[0].power() - 0.5).abs() < 1e-12);
        assert_eq!(c.index_tuple(1), vec![1]);
    }
}
