//! Structured constellation generators: USTM sets, partitioning, precoding and pilots.

use log::warn;
use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, C64};
use crate::metrics::MetricKind;
use crate::model::{ChannelConfig, JointConstellation, UserConstellation};
use crate::optimizer::{self, OptimizerOptions, PointSet};
use crate::rng;

#[derive(Clone, Debug)]
pub enum UstmMode {
    Random,
    /// CG on the smoothed coherence objective.
    Optimized(OptimizerOptions),
}

/// `size` truncated unitary symbols scaled to unit power, ‖x‖²_F = T.
pub fn ustm_single_user(t: usize, m: usize, size: usize, mode: &UstmMode, seed: u64) -> Result<UserConstellation> {
    if m == 0 || m > t {
        return Err(Error::InvalidInput(format!("need 1 ≤ M ≤ T, got M = {m}, T = {t}")));
    }
    if size == 0 {
        return Err(Error::InvalidInput("size must be at least 1".into()));
    }
    let mut r = rng::stream(seed, 0);
    let mut points = PointSet::random(t, &[m], &[size], &mut r);
    if let UstmMode::Optimized(opts) = mode {
        if size > 1 {
            let state = optimizer::cg_optimize(MetricKind::M1, points, &[1.0], opts)?;
            points = state.points;
        }
    }
    let s = (t as f64 / m as f64).sqrt();
    let symbols = points.users.remove(0).iter().map(|f| linalg::scale(f, s)).collect();
    UserConstellation::new(symbols, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionStrategy {
    Random,
    /// Pairwise swaps that lower the cross coherence, starting from a random split.
    GreedySwap,
}

/// Splits `x_su` into disjoint per-user subsets of the given sizes, scaled to `power`.
pub fn partition_construct<R: Rng + ?Sized>(
    x_su: &UserConstellation,
    sizes: &[usize],
    strategy: PartitionStrategy,
    power: f64,
    n: usize,
    rng: &mut R,
) -> Result<JointConstellation> {
    let total: usize = sizes.iter().sum();
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::InvalidInput("every user needs at least one symbol".into()));
    }
    if total > x_su.len() {
        return Err(Error::InvalidInput(format!(
            "need {total} source symbols, only {} available",
            x_su.len()
        )));
    }
    let mut order: Vec<usize> = (0..x_su.len()).collect();
    order.shuffle(rng);
    if strategy == PartitionStrategy::GreedySwap {
        greedy_swap(x_su, sizes, &mut order);
    }
    let mut users = Vec::with_capacity(sizes.len());
    let mut pos = 0;
    for &sz in sizes {
        let syms: Vec<CMat> = order[pos..pos + sz].iter().map(|&i| x_su.symbols()[i].clone()).collect();
        pos += sz;
        users.push(UserConstellation::from_symbols(syms)?.with_power(power)?);
    }
    let config = ChannelConfig::new(x_su.t(), vec![x_su.m(); sizes.len()], n, power)?;
    JointConstellation::new(config, users)
}

/// Local search over `order`: slots `[0, total)` are assigned in user blocks, the rest is the unused pool.
/// Key: (largest coherence among assigned symbols, sum of inter-user coherences), lexicographic.
fn greedy_swap(x_su: &UserConstellation, sizes: &[usize], order: &mut [usize]) {
    let n = x_su.len();
    let mut coh = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = linalg::fro2(&(x_su.symbols()[i].adjoint() * &x_su.symbols()[j]));
            coh[i * n + j] = v;
            coh[j * n + i] = v;
        }
    }
    let total: usize = sizes.iter().sum();
    let mut owner = Vec::with_capacity(total);
    for (k, &sz) in sizes.iter().enumerate() {
        owner.extend(std::iter::repeat(k).take(sz));
    }
    let key = |ord: &[usize]| -> (f64, f64) {
        let mut worst: f64 = 0.0;
        let mut inter = 0.0;
        for a in 0..total {
            for b in a + 1..total {
                let v = coh[ord[a] * n + ord[b]];
                worst = worst.max(v);
                if owner[a] != owner[b] {
                    inter += v;
                }
            }
        }
        (worst, inter)
    };
    let better = |a: (f64, f64), b: (f64, f64)| a.0 < b.0 * (1.0 - 1e-12) || (a.0 <= b.0 && a.1 < b.1 * (1.0 - 1e-12));
    let mut best = key(order);
    loop {
        let mut improved = false;
        for a in 0..total {
            for b in a + 1..n {
                if b < total && owner[a] == owner[b] {
                    continue;
                }
                order.swap(a, b);
                let k = key(order);
                if better(k, best) {
                    best = k;
                    improved = true;
                } else {
                    order.swap(a, b);
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Closed-form quantities governing how densely a partitioned single-user set may be packed.
#[derive(Clone, Debug, Serialize)]
pub struct PartitionFeasibility {
    pub phi: f64,
    /// Largest admissible normalized coherence c.
    pub c_threshold: f64,
    /// Minimum chordal distance the single-user set must exceed.
    pub delta_requirement: f64,
    pub log2_cardinality_bound: f64,
    pub cardinality_bound: f64,
    pub kappa: f64,
    pub nu: f64,
    pub log2_beta: f64,
    pub beta: f64,
    pub zeta: f64,
}

fn log2_big(n: &BigUint) -> f64 {
    let bits = n.bits();
    if bits <= 60 {
        return (n.to_u64_digits().first().copied().unwrap_or(0) as f64).log2();
    }
    let shift = bits - 60;
    let top: BigUint = n >> shift;
    (top.to_u64_digits()[0] as f64).log2() + shift as f64
}

fn factorial(n: usize) -> BigUint {
    (1..=n as u64).fold(BigUint::from(1u32), |acc, i| acc * i)
}

/// log2 κ_{T,M}, the normalized volume coefficient of a chordal ball.
pub fn log2_kappa(t: usize, m: usize) -> Result<f64> {
    if m == 0 || m >= t {
        return Err(Error::InvalidInput(format!("need 1 ≤ M < T, got M = {m}, T = {t}")));
    }
    let dim = m * (t - m);
    if dim > 20_000 {
        return Err(Error::Unsupported(format!("M(T−M) = {dim} is too large")));
    }
    let mn = m.min(t - m);
    let mut num = BigUint::from(1u32);
    let mut den = factorial(dim);
    for i in 1..=mn {
        num *= factorial(t - i);
        den *= factorial(mn - i);
    }
    Ok(log2_big(&num) - log2_big(&den))
}

/// φ_K = (K−1)/(4K·2^{1{K=2}}).
pub fn phi(k: usize) -> f64 {
    let two = if k == 2 { 2.0 } else { 1.0 };
    (k as f64 - 1.0) / (4.0 * k as f64 * two)
}

/// [(α/K + φ_K)^½ − φ_K^½]².
fn gamma(alpha: f64, k: usize) -> f64 {
    let p = phi(k);
    ((alpha / k as f64 + p).sqrt() - p.sqrt()).powi(2)
}

/// Feasibility quantities at power `p`, or in the high-SNR limit when `p` is `None`.
pub fn partition_feasibility(t: usize, k: usize, m: usize, p: Option<f64>) -> Result<PartitionFeasibility> {
    if k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    if let Some(p) = p {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::InvalidInput(format!("power {p}")));
        }
    }
    let lk = log2_kappa(t, m)?;
    let dim = (m * (t - m)) as f64;
    let mf = m as f64;
    let alpha_inf = 1.0 / mf;
    let alpha = p.map_or(alpha_inf, |p| 1.0 / (p * t as f64) + 1.0 / mf);
    let g = gamma(alpha, k);
    let g_inf = gamma(alpha_inf, k);
    let log2_card = -lk + 2.0 * dim - dim * (mf - g).log2();
    let log2_beta = -lk + 2.0 * dim - dim * (mf - g_inf).log2();
    Ok(PartitionFeasibility {
        phi: phi(k),
        c_threshold: g,
        delta_requirement: (mf - g).sqrt(),
        log2_cardinality_bound: log2_card,
        cardinality_bound: log2_card.exp2(),
        kappa: lk.exp2(),
        nu: (mf - g_inf).sqrt(),
        log2_beta,
        beta: log2_beta.exp2(),
        zeta: 1.0 - 0.5 * (1.0 - g_inf / mf).log2(),
    })
}

/// Lower bound PT(1 − K(α − √(K(K−1)c/2^{1{K=2}}))⁻¹c) on min_k d_k for per-symbol power PT
/// and normalized coherence `c`. `None` when the bracket is not positive.
pub fn partition_lower_bound(p: f64, t: usize, m: usize, k: usize, c: f64) -> Option<f64> {
    let pt = p * t as f64;
    let alpha = 1.0 / pt + 1.0 / m as f64;
    let two = if k == 2 { 2.0 } else { 1.0 };
    let kf = k as f64;
    let den = alpha - (kf * (kf - 1.0) * c / two).sqrt();
    (den > 0.0).then(|| pt * (1.0 - kf * c / den))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PrecoderType {
    I,
    II,
}

impl PrecoderType {
    pub fn label(&self) -> &'static str {
        match self {
            PrecoderType::I => "1",
            PrecoderType::II => "2",
        }
    }
}

/// U_k = Q_k·diag(η₁,…,η₁,η₂,…,η₂) with Q_k a selection of canonical basis columns.
#[derive(Clone, Debug)]
pub struct Precoder {
    pub u: CMat,
    pub q: CMat,
    pub weights: (f64, f64),
    /// Number of leading columns weighted by η₁.
    pub exclusive: usize,
}

fn selection(t: usize, rows: &[usize]) -> CMat {
    let mut q = linalg::zeros(t, rows.len());
    for (j, &r) in rows.iter().enumerate() {
        q[(r, j)] = C64::new(1.0, 0.0);
    }
    q
}

pub fn build_precoder(t: usize, k: usize, m: usize, ty: PrecoderType) -> Result<Vec<Precoder>> {
    if k == 0 || m == 0 {
        return Err(Error::InvalidInput("K and M must be positive".into()));
    }
    let need = match ty {
        PrecoderType::I => k * m,
        PrecoderType::II => k * (k - 1) * m,
    };
    if t < need || t < k * m {
        return Err(Error::Infeasible(format!("T = {t} too small for this precoder (needs {})", need.max(k * m))));
    }
    let kf = k as f64;
    let mut out = Vec::with_capacity(k);
    for user in 0..k {
        let (excl, shared_from, eta1): (Vec<usize>, usize, f64) = match ty {
            PrecoderType::I => ((user * m..(user + 1) * m).collect(), k * m, kf.sqrt()),
            PrecoderType::II => {
                let b = (k - 1) * m;
                let rows = (0..user * b).chain((user + 1) * b..k * b).collect();
                (rows, k * b, if k > 1 { (kf / (kf - 1.0)).sqrt() } else { 1.0 })
            }
        };
        let mut rows = excl.clone();
        rows.extend(shared_from..t);
        let q = selection(t, &rows);
        let mut u = q.clone();
        for j in 0..excl.len() {
            u.column_mut(j).scale_mut(eta1);
        }
        out.push(Precoder { u, q, weights: (eta1, 1.0), exclusive: excl.len() });
    }
    Ok(out)
}

/// x = √(P_k T)·U_k c / ‖U_k c‖_F for each reduced-dimension frame c.
pub fn precode_construct(frames: &[Vec<CMat>], precoders: &[Precoder], powers: &[f64], n: usize) -> Result<JointConstellation> {
    if frames.len() != precoders.len() || frames.len() != powers.len() {
        return Err(Error::Dimension("frames, precoders and powers must have one entry per user".into()));
    }
    let t = precoders[0].u.nrows();
    let mut users = Vec::with_capacity(frames.len());
    for (k, ((set, pre), &p)) in frames.iter().zip(precoders).zip(powers).enumerate() {
        let scale = (p * t as f64).sqrt();
        let mut syms = Vec::with_capacity(set.len());
        for (i, c) in set.iter().enumerate() {
            if c.nrows() != pre.u.ncols() {
                return Err(Error::Dimension(format!(
                    "user {k} frame has {} rows, precoder expects {}",
                    c.nrows(),
                    pre.u.ncols()
                )));
            }
            let y = &pre.u * c;
            let ev = linalg::herm_eigvals(&(y.adjoint() * &y));
            let (hi, lo) = (ev[0], *ev.last().unwrap());
            if !(lo > 1e-20 * hi) {
                return Err(Error::InvalidInput(format!("user {k} symbol {i} loses rank after precoding")));
            }
            syms.push(linalg::scale(&y, scale / y.norm()));
        }
        users.push(UserConstellation::new(syms, p)?);
    }
    JointConstellation::from_users(t, n, users)
}

/// Unit average energy square QAM alphabet in natural order.
pub fn qam_alphabet(q: usize) -> Result<Vec<C64>> {
    let side = (q as f64).sqrt().round() as usize;
    if q < 4 || side * side != q {
        return Err(Error::InvalidInput(format!("QAM order {q} is not a square ≥ 4")));
    }
    let norm = (2.0 * (q as f64 - 1.0) / 3.0).sqrt();
    let lvl = |i: usize| (2.0 * i as f64 - (side as f64 - 1.0)) / norm;
    Ok((0..q).map(|i| C64::new(lvl(i / side), lvl(i % side))).collect())
}

/// Orthogonal per-user pilots followed by spatially multiplexed QAM.
pub fn pilot_based(t: usize, k: usize, m: usize, q: usize, p: f64, n: usize) -> Result<JointConstellation> {
    if t <= k * m {
        return Err(Error::Infeasible(format!("pilot scheme needs T > KM, got T = {t}, KM = {}", k * m)));
    }
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidInput(format!("power {p}")));
    }
    let alphabet = qam_alphabet(q)?;
    let data_rows = t - k * m;
    let entries = data_rows * m;
    let size = q
        .checked_pow(entries as u32)
        .filter(|&s| s <= 1 << 24)
        .ok_or_else(|| Error::Unsupported(format!("{q}^{entries} symbols per user is too many")))?;
    let beta = p * t as f64 / (m as f64 * (data_rows + 1) as f64);
    let sb = beta.sqrt();
    let mut users = Vec::with_capacity(k);
    for user in 0..k {
        let mut syms = Vec::with_capacity(size);
        for idx in 0..size {
            let mut x = linalg::zeros(t, m);
            for j in 0..m {
                x[(user * m + j, j)] = C64::new(sb, 0.0);
            }
            // row-major over the data block, first entry most significant
            let mut rest = idx;
            for e in (0..entries).rev() {
                let s = alphabet[rest % q];
                rest /= q;
                x[(k * m + e / m, e % m)] = s * sb;
            }
            syms.push(x);
        }
        users.push(UserConstellation::new(syms, p)?);
    }
    let config = ChannelConfig::new(t, vec![m; k], n, p)?;
    JointConstellation::new(config, users)
}

/// Pilot QAM order giving `bits` per symbol, when one exists.
pub fn pilot_qam_order(t: usize, k: usize, m: usize, bits: u32) -> Option<usize> {
    if t <= k * m {
        return None;
    }
    let dims = ((t - k * m) * m) as u32;
    (bits > 0 && bits % dims == 0 && (bits / dims) % 2 == 0).then(|| 1usize << (bits / dims))
}

/// Warns when a packing request exceeds the high-SNR cardinality bound.
pub fn warn_if_dense(t: usize, k: usize, m: usize, size: usize) {
    if let Ok(f) = partition_feasibility(t, k, m, None) {
        if (size as f64).log2() > f.log2_beta {
            warn!("{size} symbols exceed the partition packing bound 2^{:.2}", f.log2_beta);
        }
    }
}

/// Structured schemes buildable from a channel configuration and per-user rates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    RandomUstm,
    Pilot,
    Partition(PartitionStrategy),
    Precode(PrecoderType),
}

fn uniform_m(config: &ChannelConfig) -> Result<usize> {
    let m = config.m[0];
    if config.m.iter().any(|&v| v != m) {
        return Err(Error::Unsupported("structured schemes need equal antenna counts".into()));
    }
    Ok(m)
}

/// Builds `scheme` at the budget of `config` with 2^bits symbols per user. Single-user packings
/// use `packing` and its seed.
pub fn build_scheme(scheme: Scheme, config: &ChannelConfig, bits: &[u32], packing: &OptimizerOptions) -> Result<JointConstellation> {
    config.validate()?;
    let k = config.k();
    if bits.len() != k {
        return Err(Error::Dimension("one bit count per user required".into()));
    }
    if bits.iter().any(|&b| b > 24) {
        return Err(Error::Unsupported("more than 24 bits per user".into()));
    }
    let sizes: Vec<usize> = bits.iter().map(|&b| 1usize << b).collect();
    let (t, p, n) = (config.t, config.power, config.n);
    let seed = packing.seed;
    match scheme {
        Scheme::RandomUstm => {
            let users = (0..k)
                .map(|u| ustm_single_user(t, config.m[u], sizes[u], &UstmMode::Random, seed.wrapping_add(u as u64))?.with_power(p))
                .collect::<Result<Vec<_>>>()?;
            JointConstellation::new(config.clone(), users)
        }
        Scheme::Pilot => {
            let m = uniform_m(config)?;
            if bits.iter().any(|&b| b != bits[0]) {
                return Err(Error::Unsupported("pilot scheme needs equal rates".into()));
            }
            let q = pilot_qam_order(t, k, m, bits[0]).ok_or_else(|| {
                Error::Infeasible(format!("{} bits do not map to square QAM on the data block", bits[0]))
            })?;
            pilot_based(t, k, m, q, p, n)
        }
        Scheme::Partition(strategy) => {
            let m = uniform_m(config)?;
            let total: usize = sizes.iter().sum();
            warn_if_dense(t, k, m, total);
            let su = ustm_single_user(t, m, total, &UstmMode::Optimized(packing.clone()), seed ^ 0x5a5a)?;
            let mut r = rng::stream(seed, 2000);
            partition_construct(&su, &sizes, strategy, p, n, &mut r)
        }
        Scheme::Precode(ty) => {
            let m = uniform_m(config)?;
            let pre = build_precoder(t, k, m, ty)?;
            let reduced = pre[0].u.ncols();
            let nmax = *sizes.iter().max().unwrap();
            let common = ustm_single_user(reduced, m, nmax, &UstmMode::Optimized(packing.clone()), seed ^ 0xa5a5)?;
            let frames = sizes
                .iter()
                .map(|&s| common.symbols()[..s].iter().map(linalg::polar).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            precode_construct(&frames, &pre, &vec![p; k], n)
        }
    }
}
