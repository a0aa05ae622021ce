//! Monte Carlo symbol error rate and empirical pairwise error through the full channel.

use std::fmt::Write as _;

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::model::{self, Detector, JointConstellation};
use crate::pep::{PepMethod, PepResult};
use crate::rng;

/// Trials per independent random stream.
pub const SIM_BLOCK: u64 = 1024;
/// Blocks dispatched together before the stopping rule is checked.
const ROUND: usize = 32;

#[derive(Clone, Debug, Serialize)]
pub struct SimPlan {
    pub n: usize,
    pub snr_db: Vec<f64>,
    pub max_trials: u64,
    pub target_errors: u64,
    pub seed: u64,
}

impl SimPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.max_trials == 0 {
            return Err(Error::InvalidInput("N and trials must be positive".into()));
        }
        if self.snr_db.is_empty() {
            return Err(Error::InvalidInput("SNR grid is empty".into()));
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("SNR grid has a non-finite entry".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimPoint {
    pub snr_db: f64,
    pub trials: u64,
    pub errors: u64,
    pub ser: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimResult {
    pub points: Vec<SimPoint>,
}

impl SimResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("snr_db,trials,errors,ser,stderr\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{},{:e},{:e}", p.snr_db, p.trials, p.errors, p.ser, p.stderr);
        }
        s
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Inclusive grid `a:step:b`.
pub fn parse_snr_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |x: &str| x.trim().parse::<f64>().map_err(|_| Error::InvalidInput(format!("bad number '{x}' in '{s}'")));
    match parts.as_slice() {
        [a] => Ok(vec![num(a)?]),
        [a, step, b] => {
            let (a, step, b) = (num(a)?, num(step)?, num(b)?);
            if !(step > 0.0) || b < a {
                return Err(Error::InvalidInput(format!("grid '{s}' needs a positive step and a ≤ b")));
            }
            let count = ((b - a) / step + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|i| a + i as f64 * step).collect())
        }
        _ => Err(Error::InvalidInput(format!("grid '{s}' must be 'a' or 'a:step:b'"))),
    }
}

fn run_block(det: &Detector, symbols: &[CMat], n: usize, seed: u64, id: u64, len: u64) -> Result<u64> {
    let mut r = rng::stream(seed, id);
    let mut errors = 0;
    for _ in 0..len {
        let s = r.random_range(0..symbols.len());
        let y = model::sample_channel_output(&symbols[s], n, &mut r);
        if det.detect(&y)? != s {
            errors += 1;
        }
    }
    Ok(errors)
}

/// Joint SER with ML detection at each SNR point. The budget is rescaled to 10^{dB/10}
/// keeping the users' power ratios. A point stops after `max_trials` or at the end of the
/// block in which `target_errors` is reached.
pub fn simulate_ser(c: &JointConstellation, plan: &SimPlan) -> Result<SimResult> {
    plan.validate()?;
    if !model::check_identifiability(c, 1e-9 * c.config().power.max(1.0)).is_empty() {
        warn!("constellation is not identifiable; the error rate will not vanish");
    }
    let mut points = Vec::with_capacity(plan.snr_db.len());
    for (si, &db) in plan.snr_db.iter().enumerate() {
        let scaled = c.with_power_budget(db_to_linear(db))?.with_n(plan.n)?;
        let det = Detector::new(&scaled)?;
        let symbols = scaled.joint_symbols();
        let blocks = rng::blocks(plan.max_trials, SIM_BLOCK);
        let seed = plan.seed ^ (si as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let (mut trials, mut errors) = (0u64, 0u64);
        'outer: for round in blocks.chunks(ROUND) {
            let counts: Vec<Result<u64>> =
                round.par_iter().map(|&(id, len)| run_block(&det, &symbols, plan.n, seed, id, len)).collect();
            for (&(_, len), e) in round.iter().zip(counts) {
                trials += len;
                errors += e?;
                if plan.target_errors > 0 && errors >= plan.target_errors {
                    break 'outer;
                }
            }
        }
        let ser = errors as f64 / trials as f64;
        points.push(SimPoint { snr_db: db, trials, errors, ser, stderr: (ser * (1.0 - ser) / trials as f64).sqrt() });
    }
    Ok(SimResult { points })
}

/// P[ln p(Y|x) ≤ ln p(Y|x′)] with Y drawn through the channel from x.
pub fn simulate_pep_empirical(x: &CMat, xp: &CMat, n: usize, trials: u64, seed: u64) -> Result<PepResult> {
    if trials == 0 || n == 0 {
        return Err(Error::InvalidInput("trials and N must be positive".into()));
    }
    if x.shape() != xp.shape() {
        return Err(Error::Dimension("symbols must have equal shapes".into()));
    }
    let gx = linalg::gram(x);
    if (&gx - linalg::gram(xp)).norm() <= 1e-12 * gx.norm().max(1.0) {
        let mut r = PepResult::monte_carlo(PepMethod::Empirical, trials, trials);
        r.diagnostic = Some("non-identifiable pair".into());
        return Ok(r);
    }
    let (ld0, inv0) = linalg::hpd_logdet_inv(&model::signal_covariance(x)?)?;
    let (ld1, inv1) = linalg::hpd_logdet_inv(&model::signal_covariance(xp)?)?;
    let nf = n as f64;
    let hits: u64 = rng::blocks(trials, 1 << 16)
        .par_iter()
        .map(|&(id, len)| {
            let mut r = rng::stream(seed, id);
            let mut h = 0;
            for _ in 0..len {
                let y = model::sample_channel_output(x, n, &mut r);
                let l0 = -linalg::inner(&y, &(&inv0 * &y)) - nf * ld0;
                let l1 = -linalg::inner(&y, &(&inv1 * &y)) - nf * ld1;
                if l0 <= l1 {
                    h += 1;
                }
            }
            h
        })
        .sum();
    Ok(PepResult::monte_carlo(PepMethod::Empirical, hits, trials))
}
