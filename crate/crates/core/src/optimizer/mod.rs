//! Riemannian conjugate gradient on products of Grassmann manifolds.

pub mod grassmann;
pub mod objective;

use log::warn;
use rand::Rng;
use serde::Serialize;

use crate::constructions::{self, PrecoderType, Scheme};
use crate::error::{Error, Result};
use crate::linalg;
use crate::metrics::{self, MetricKind};
use crate::model::{ChannelConfig, JointConstellation};
use crate::rng;

pub use grassmann::{project, retract, retract_all, riemannian_grad, GrassmannPoint, PointSet};
pub use objective::{euclidean_grad, Objective, ObjectiveKind, QuadraticObjective, SmoothedObjective};

#[derive(Clone, Debug, Serialize)]
pub struct OptimizerOptions {
    pub epsilon: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub initial_step: f64,
    pub contraction: f64,
    pub armijo_c: f64,
    pub max_backtracks: usize,
    pub powell_restart: bool,
    pub seed: u64,
    /// Upper bound on user cycles in alternating optimization.
    pub max_cycles: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            epsilon: 0.1,
            max_iters: 1000,
            grad_tol: 1e-6,
            initial_step: 1.0,
            contraction: 0.5,
            armijo_c: 1e-4,
            max_backtracks: 50,
            powell_restart: true,
            seed: 0,
            max_cycles: 20,
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epsilon > 0.0
            && self.grad_tol > 0.0
            && self.initial_step > 0.0
            && self.contraction > 0.0
            && self.contraction < 1.0
            && self.armijo_c > 0.0
            && self.armijo_c < 1.0
            && self.max_backtracks > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid optimizer options {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    GradientTolerance,
    MaxIterations,
    LineSearchFailure,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub objective: f64,
    pub gradnorm: f64,
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub points: PointSet,
    pub prev_direction: Option<PointSet>,
    pub prev_gradient: Option<PointSet>,
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub restarts: usize,
    pub stop: StopReason,
}

impl OptimizerState {
    pub fn objective(&self) -> f64 {
        self.trace.last().map(|t| t.objective).unwrap_or(f64::NAN)
    }
}

fn masked_rgrad(points: &PointSet, egrad: &PointSet, mask: Option<usize>) -> PointSet {
    project(points, &egrad.masked(mask))
}

/// Minimizes `obj` from `initial`; only user `mask` moves when set.
pub fn cg_minimize(
    obj: &dyn Objective,
    initial: PointSet,
    options: &OptimizerOptions,
    mask: Option<usize>,
) -> Result<OptimizerState> {
    options.validate()?;
    let mut points = initial;
    let (mut f, eg) = obj.value_grad(&points)?;
    if !f.is_finite() {
        return Err(Error::NonFinite(format!("initial objective {f}")));
    }
    let mut g = masked_rgrad(&points, &eg, mask);
    let mut gnorm = g.norm();
    let mut trace = vec![TraceEntry { iter: 0, objective: f, gradnorm: gnorm, step: 0.0 }];
    let mut dir = g.scaled(-1.0);
    let mut prev_step = options.initial_step;
    let mut prev_slope: Option<f64> = None;
    let mut restarts = 0;
    let mut iter = 0;
    let stop;
    loop {
        if gnorm <= options.grad_tol * f.abs().max(1.0) {
            stop = StopReason::GradientTolerance;
            break;
        }
        if iter >= options.max_iters {
            stop = StopReason::MaxIterations;
            break;
        }
        let mut slope = g.inner(&dir);
        let mut steepest = false;
        if !(slope < 0.0) {
            dir = g.scaled(-1.0);
            slope = -gnorm * gnorm;
            steepest = true;
            restarts += 1;
        }
        let mut alpha = match prev_slope {
            None => options.initial_step,
            Some(ps) => (prev_step * ps / slope).clamp(1e-12, 1e12),
        };
        let mut accepted = None;
        for _ in 0..options.max_backtracks {
            if let Ok(cand) = retract_all(&points, &dir, alpha) {
                if let Ok(fc) = obj.value(&cand) {
                    if fc.is_finite() && fc <= f + options.armijo_c * alpha * slope {
                        accepted = Some((cand, fc));
                        break;
                    }
                }
            }
            alpha *= options.contraction;
        }
        let Some((cand, fc)) = accepted else {
            if steepest {
                stop = StopReason::LineSearchFailure;
                break;
            }
            // retry once along steepest descent
            dir = g.scaled(-1.0);
            prev_slope = None;
            restarts += 1;
            continue;
        };
        iter += 1;
        let (_, eg_new) = obj.value_grad(&cand)?;
        let g_new = masked_rgrad(&cand, &eg_new, mask);
        let g_old_t = project(&cand, &g);
        let dir_t = project(&cand, &dir);
        let y = g_new.zip_map(&g_old_t, |a, b| a - b);
        let denom = dir_t.inner(&y);
        let mut beta = if denom.abs() > 1e-300 { (g_new.inner(&y) / denom).max(0.0) } else { 0.0 };
        let gn2 = g_new.inner(&g_new);
        if options.powell_restart && g_new.inner(&g_old_t).abs() >= 0.2 * gn2 {
            beta = 0.0;
        }
        if beta == 0.0 {
            restarts += 1;
        }
        dir = g_new.zip_map(&dir_t, |a, b| linalg::scale(b, beta) - a);
        prev_step = alpha;
        prev_slope = Some(slope);
        points = cand;
        f = fc;
        g = g_new;
        gnorm = gn2.sqrt();
        trace.push(TraceEntry { iter, objective: f, gradnorm: gnorm, step: alpha });
    }
    Ok(OptimizerState {
        points,
        prev_direction: Some(dir),
        prev_gradient: Some(g),
        trace,
        iterations: iter,
        restarts,
        stop,
    })
}

/// CG on the smoothed objective of `kind` with per-user powers.
pub fn cg_optimize(kind: MetricKind, initial: PointSet, powers: &[f64], options: &OptimizerOptions) -> Result<OptimizerState> {
    let obj = SmoothedObjective::new(ObjectiveKind::from_metric(kind)?, powers.to_vec(), options.epsilon)?;
    cg_minimize(&obj, initial, options, None)
}

/// Worst relative error between central differences along retraction curves and the
/// Riemannian gradient, over `directions` random unit tangent directions.
pub fn grad_check(obj: &dyn Objective, points: &PointSet, h: f64, directions: usize, seed: u64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput("step must be positive".into()));
    }
    let (_, eg) = obj.value_grad(points)?;
    let rg = project(points, &eg);
    let mut r = rng::stream(seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let raw = PointSet {
            users: points
                .users
                .iter()
                .map(|u| u.iter().map(|s| linalg::cgauss(s.nrows(), s.ncols(), &mut r)).collect())
                .collect(),
        };
        let xi = project(points, &raw);
        let xi = xi.scaled(1.0 / xi.norm());
        let fp = obj.value(&retract_all(points, &xi, h)?)?;
        let fm = obj.value(&retract_all(points, &xi, -h)?)?;
        let fd = (fp - fm) / (2.0 * h);
        let an = rg.inner(&xi);
        let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-300);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Initializers for multi-start optimization.
#[derive(Clone, Debug, PartialEq)]
pub enum InitSpec {
    Precoding,
    Partitioning,
    Pilot,
    Random(usize),
}

impl InitSpec {
    /// Parses `precoding`, `partitioning`, `pilot` or `random:COUNT`.
    pub fn parse(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("random", n)) => n
                .parse()
                .map(InitSpec::Random)
                .map_err(|_| Error::InvalidInput(format!("bad random count in '{s}'"))),
            None if s == "random" => Ok(InitSpec::Random(1)),
            None if s == "precoding" => Ok(InitSpec::Precoding),
            None if s == "partitioning" => Ok(InitSpec::Partitioning),
            None if s == "pilot" => Ok(InitSpec::Pilot),
            _ => Err(Error::InvalidInput(format!("unknown initializer '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub init: String,
    pub initial_metric: f64,
    pub metric: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct MultiStartResult {
    pub best: JointConstellation,
    pub best_state: OptimizerState,
    pub metric: f64,
    pub runs: Vec<RunSummary>,
}

/// Options for the single-user packing used by structured initializers.
pub fn packing_options(options: &OptimizerOptions, seed: u64) -> OptimizerOptions {
    OptimizerOptions { epsilon: 0.01, max_iters: options.max_iters.min(300), seed, ..options.clone() }
}

/// Starting frames for one initializer; several for `Random` and `Precoding`.
pub fn initial_points(
    spec: &InitSpec,
    config: &ChannelConfig,
    bits: &[u32],
    options: &OptimizerOptions,
) -> Result<Vec<(String, PointSet)>> {
    let sizes: Vec<usize> = bits.iter().map(|&b| 1usize << b).collect();
    let t = config.t;
    match spec {
        InitSpec::Random(count) => Ok((0..*count)
            .map(|i| {
                let mut r = rng::stream(options.seed, 1000 + i as u64);
                (format!("random-{i}"), PointSet::random(t, &config.m, &sizes, &mut r))
            })
            .collect()),
        InitSpec::Pilot => {
            let c = constructions::build_scheme(Scheme::Pilot, config, bits, options)?;
            Ok(vec![("pilot".into(), PointSet::from_constellation(&c)?)])
        }
        InitSpec::Partitioning => {
            let scheme = Scheme::Partition(constructions::PartitionStrategy::GreedySwap);
            let c = constructions::build_scheme(scheme, config, bits, &packing_options(options, options.seed))?;
            Ok(vec![("partitioning".into(), PointSet::from_constellation(&c)?)])
        }
        InitSpec::Precoding => {
            let mut out = Vec::new();
            for ty in [PrecoderType::II, PrecoderType::I] {
                let packing = packing_options(options, options.seed);
                match constructions::build_scheme(Scheme::Precode(ty), config, bits, &packing) {
                    Ok(c) => out.push((format!("precoding-{}", ty.label()), PointSet::from_constellation(&c)?)),
                    Err(e) => warn!("precoder type {} skipped: {e}", ty.label()),
                }
            }
            if out.is_empty() {
                return Err(Error::Infeasible("no precoder type fits these dimensions".into()));
            }
            Ok(out)
        }
    }
}

fn better(kind: MetricKind, a: f64, b: f64) -> bool {
    if kind.maximize() {
        a > b
    } else {
        a < b
    }
}

/// Runs CG from each initializer and keeps the best true metric.
pub fn multi_start_optimize(
    kind: MetricKind,
    config: &ChannelConfig,
    bits: &[u32],
    inits: &[InitSpec],
    options: &OptimizerOptions,
) -> Result<MultiStartResult> {
    config.validate()?;
    if bits.len() != config.k() {
        return Err(Error::Dimension("one bit count per user required".into()));
    }
    let powers = vec![config.power; config.k()];
    let mut best: Option<(JointConstellation, OptimizerState, f64)> = None;
    let mut runs = Vec::new();
    for spec in inits {
        let starts = match initial_points(spec, config, bits, options) {
            Ok(s) => s,
            Err(e) => {
                warn!("initializer {spec:?} skipped: {e}");
                continue;
            }
        };
        for (name, start) in starts {
            let c0 = start.to_constellation(config.t, config.n, &powers)?;
            let m0 = metrics::evaluate(kind, &c0)?.value;
            let st = cg_optimize(kind, start, &powers, options)?;
            let c = st.points.to_constellation(config.t, config.n, &powers)?;
            let v = metrics::evaluate(kind, &c)?.value;
            runs.push(RunSummary { init: name, initial_metric: m0, metric: v, iterations: st.iterations });
            if best.as_ref().map_or(true, |b| better(kind, v, b.2)) {
                best = Some((c, st, v));
            }
        }
    }
    let (best, best_state, metric) = best.ok_or_else(|| Error::Infeasible("no initializer could be built".into()))?;
    Ok(MultiStartResult { best, best_state, metric, runs })
}

#[derive(Clone, Debug)]
pub struct AlternatingResult {
    pub constellation: JointConstellation,
    pub points: PointSet,
    /// True metric after initialization and after each completed cycle.
    pub metric_trace: Vec<f64>,
    pub cycles: usize,
}

/// Round-robin per-user optimization from a given start. A user update is kept only
/// when it does not worsen the true metric.
pub fn alternating_from(
    kind: MetricKind,
    initial: PointSet,
    powers: &[f64],
    n: usize,
    options: &OptimizerOptions,
) -> Result<AlternatingResult> {
    let obj = SmoothedObjective::new(ObjectiveKind::from_metric(kind)?, powers.to_vec(), options.epsilon)?;
    let t = initial.t();
    let k = initial.users.len();
    let eval = |p: &PointSet| -> Result<f64> { Ok(metrics::evaluate(kind, &p.to_constellation(t, n, powers)?)?.value) };
    let mut points = initial;
    let mut current = eval(&points)?;
    let mut metric_trace = vec![current];
    if k == 1 {
        let points_start = points.clone();
        let st = cg_minimize(&obj, points, options, None)?;
        let v = eval(&st.points)?;
        let (points, v) = if better(kind, current, v) { (points_start, current) } else { (st.points, v) };
        metric_trace.push(v);
        return Ok(AlternatingResult { constellation: points.to_constellation(t, n, powers)?, points, metric_trace, cycles: 1 });
    }
    let mut cycles = 0;
    while cycles < options.max_cycles {
        let start = current;
        for user in 0..k {
            let st = cg_minimize(&obj, points.clone(), options, Some(user))?;
            let v = eval(&st.points)?;
            if !better(kind, current, v) {
                points = st.points;
                current = v;
            }
        }
        cycles += 1;
        metric_trace.push(current);
        let gain = if kind.maximize() { current - start } else { start - current };
        if gain < 1e-6 * start.abs().max(1e-12) {
            break;
        }
    }
    Ok(AlternatingResult { constellation: points.to_constellation(t, n, powers)?, points, metric_trace, cycles })
}

/// Alternating optimization from a seeded random start at equal powers.
pub fn alternating_optimize(
    kind: MetricKind,
    config: &ChannelConfig,
    bits: &[u32],
    options: &OptimizerOptions,
) -> Result<AlternatingResult> {
    config.validate()?;
    let sizes: Vec<usize> = bits.iter().map(|&b| 1usize << b).collect();
    let mut r = rng::stream(options.seed, 3000);
    let start = PointSet::random(config.t, &config.m, &sizes, &mut r);
    alternating_from(kind, start, &vec![config.power; config.k()], config.n, options)
}

/// Random starting frames from a seed.
pub fn random_points<R: Rng + ?Sized>(t: usize, m: &[usize], sizes: &[usize], r: &mut R) -> PointSet {
    PointSet::random(t, m, sizes, r)
}
