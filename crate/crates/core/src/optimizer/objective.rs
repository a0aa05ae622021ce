//! Smoothed constellation objectives and their analytic Euclidean gradients.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, C64};
use crate::metrics::MetricKind;

use super::grassmann::PointSet;

/// Pair weights below this are dropped from the gradient sum.
const WEIGHT_CUTOFF: f64 = 1e-20;

/// Objective kinds with analytic gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ObjectiveKind {
    JHalf,
    D,
    E,
    M1,
    M2(usize),
}

impl ObjectiveKind {
    pub fn from_metric(k: MetricKind) -> Result<Self> {
        match k {
            MetricKind::J(s) if s == 0.5 => Ok(ObjectiveKind::JHalf),
            MetricKind::D => Ok(ObjectiveKind::D),
            MetricKind::E => Ok(ObjectiveKind::E),
            MetricKind::M1 => Ok(ObjectiveKind::M1),
            MetricKind::M2(n) if n >= 1 => Ok(ObjectiveKind::M2(n)),
            other => Err(Error::Unsupported(format!("no gradient for metric {other:?}"))),
        }
    }

    pub fn metric(&self) -> MetricKind {
        match *self {
            ObjectiveKind::JHalf => MetricKind::J(0.5),
            ObjectiveKind::D => MetricKind::D,
            ObjectiveKind::E => MetricKind::E,
            ObjectiveKind::M1 => MetricKind::M1,
            ObjectiveKind::M2(n) => MetricKind::M2(n),
        }
    }

    fn directed(&self) -> bool {
        matches!(self, ObjectiveKind::D | ObjectiveKind::E)
    }
}

/// A differentiable function of a point set.
pub trait Objective: Sync {
    fn value(&self, p: &PointSet) -> Result<f64>;
    /// Value and Euclidean gradient with respect to every frame.
    fn value_grad(&self, p: &PointSet) -> Result<(f64, PointSet)>;
}

/// Log-sum-exp smoothed pair metric (or m2 as is) over the constellation built from frames.
#[derive(Clone, Debug)]
pub struct SmoothedObjective {
    pub kind: ObjectiveKind,
    pub powers: Vec<f64>,
    pub eps: f64,
}

struct Sym {
    x: CMat,
    ainv: CMat,
    lda: f64,
    u: CMat,
    tr_ainv: f64,
    n2: f64,
}

#[derive(Clone, Copy)]
struct Term {
    i: u32,
    j: u32,
    /// true when the term is f(j → i)
    flip: bool,
    z: f64,
    s: f64,
}

impl SmoothedObjective {
    pub fn new(kind: ObjectiveKind, powers: Vec<f64>, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidInput(format!("smoothing parameter must be positive, got {eps}")));
        }
        if powers.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidInput("powers must be finite and non-negative".into()));
        }
        Ok(SmoothedObjective { kind, powers, eps })
    }

    fn scales(&self, p: &PointSet) -> Vec<f64> {
        let t = p.t() as f64;
        p.m().iter().zip(&self.powers).map(|(&m, &pw)| (pw * t / m as f64).sqrt()).collect()
    }

    fn symbols(&self, p: &PointSet) -> Result<(Vec<Sym>, Vec<Vec<usize>>)> {
        if self.powers.len() != p.users.len() {
            return Err(Error::Dimension("one power per user required".into()));
        }
        let sc = self.scales(p);
        let sizes = p.sizes();
        let count: usize = sizes.iter().product();
        let tuples: Vec<Vec<usize>> = (0..count)
            .map(|mut f| {
                let mut idx = vec![0; sizes.len()];
                for k in (0..sizes.len()).rev() {
                    idx[k] = f % sizes[k];
                    f /= sizes[k];
                }
                idx
            })
            .collect();
        let need_inv = !matches!(self.kind, ObjectiveKind::M1 | ObjectiveKind::M2(_));
        let syms = tuples
            .par_iter()
            .map(|idx| {
                let blocks: Vec<CMat> =
                    idx.iter().enumerate().map(|(k, &i)| linalg::scale(&p.users[k][i], sc[k])).collect();
                let refs: Vec<&CMat> = blocks.iter().collect();
                let x = linalg::hcat(&refs);
                let n2 = linalg::fro2(&x);
                let t = x.nrows();
                if need_inv {
                    let (lda, ainv) = linalg::hpd_logdet_inv(&linalg::cov(&x))?;
                    let u = &ainv * &x;
                    let tr_ainv = ainv.trace().re;
                    Ok(Sym { x, ainv, lda, u, tr_ainv, n2 })
                } else {
                    Ok(Sym { x, ainv: CMat::zeros(t, t), lda: 0.0, u: CMat::zeros(0, 0), tr_ainv: 0.0, n2 })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((syms, tuples))
    }

    /// f(a → b) for smoothed kinds, or ln|det| with its sign for m2.
    fn pair_value(&self, a: &Sym, b: &Sym) -> Result<(f64, f64)> {
        let t = a.x.nrows() as f64;
        Ok(match self.kind {
            ObjectiveKind::JHalf => {
                let c = &a.ainv + &b.ainv;
                let ldc = linalg::hpd_logdet(&c)?;
                (ldc + 0.5 * (a.lda + b.lda) - t * std::f64::consts::LN_2, 1.0)
            }
            ObjectiveKind::D => (linalg::inner(&a.x, &(&b.ainv * &a.x)), 1.0),
            ObjectiveKind::E => {
                let d = linalg::inner(&a.x, &(&b.ainv * &a.x));
                (b.tr_ainv + d - t - a.lda + b.lda, 1.0)
            }
            ObjectiveKind::M1 => {
                let w = a.x.adjoint() * &b.x;
                (linalg::fro2(&w) / (a.n2 * b.n2), 1.0)
            }
            ObjectiveKind::M2(_) => {
                let (ld, sign) = crate::metrics::m2_pair_logdet(&a.x, &b.x);
                if sign == 0.0 {
                    return Err(Error::NonFinite("singular m2 determinant".into()));
                }
                (ld, sign)
            }
        })
    }

    /// Gradients of the pair value with respect to the source and target joint symbols.
    fn pair_grad(&self, a: &Sym, b: &Sym) -> Result<(CMat, CMat)> {
        let two = C64::new(2.0, 0.0);
        Ok(match self.kind {
            ObjectiveKind::JHalf => {
                let c = &a.ainv + &b.ainv;
                let cinv = linalg::hpd_logdet_inv(&c)?.1;
                let ga = &a.u - &a.ainv * (&cinv * &a.u) * two;
                let gb = &b.u - &b.ainv * (&cinv * &b.u) * two;
                (ga, gb)
            }
            ObjectiveKind::D => {
                let v = &b.ainv * &a.x;
                let gb = &v * (v.adjoint() * &b.x) * C64::new(-2.0, 0.0);
                (v * two, gb)
            }
            ObjectiveKind::E => {
                let v = &b.ainv * &a.x;
                let ga = (&v - &a.u) * two;
                let w = &b.u;
                let bw = &b.ainv * w;
                let gb = (w - bw - &v * (a.x.adjoint() * w)) * two;
                (ga, gb)
            }
            ObjectiveKind::M1 => {
                let w = a.x.adjoint() * &b.x;
                let q = linalg::fro2(&w);
                let (na, nb) = (a.n2, b.n2);
                let ga = (&b.x * w.adjoint()) * C64::new(2.0 / (na * nb), 0.0)
                    - &a.x * C64::new(2.0 * q / (na * na * nb), 0.0);
                let gb = (&a.x * &w) * C64::new(2.0 / (na * nb), 0.0)
                    - &b.x * C64::new(2.0 * q / (na * nb * nb), 0.0);
                (ga, gb)
            }
            ObjectiveKind::M2(_) => {
                let m = a.x.ncols() as f64;
                let omega = m * m / (a.n2 * b.n2);
                let w = a.x.adjoint() * &b.x;
                let ww = &w * w.adjoint();
                let (vals, vecs) = linalg::herm_eig(&ww);
                let mut scaled = vecs.clone();
                let mut tr = 0.0;
                for (j, &s) in vals.iter().enumerate() {
                    let f = 1.0 - omega * s.max(0.0);
                    tr += s.max(0.0) / f;
                    for i in 0..scaled.nrows() {
                        scaled[(i, j)] /= C64::new(f, 0.0);
                    }
                }
                let dinv = scaled * vecs.adjoint();
                let ga = (&b.x * w.adjoint() * &dinv) * C64::new(-2.0 * omega, 0.0)
                    + &a.x * C64::new(2.0 * omega * tr / a.n2, 0.0);
                let gb = (&a.x * &dinv * &w) * C64::new(-2.0 * omega, 0.0)
                    + &b.x * C64::new(2.0 * omega * tr / b.n2, 0.0);
                (ga, gb)
            }
        })
    }

    fn terms(&self, syms: &[Sym]) -> Result<Vec<Term>> {
        let n = syms.len();
        let rows: Vec<Result<Vec<Term>>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut out = Vec::with_capacity(2 * (n - i));
                for j in i + 1..n {
                    let (fa, sa) = self.pair_value(&syms[i], &syms[j])?;
                    let fb = if self.kind.directed() { Some(self.pair_value(&syms[j], &syms[i])?.0) } else { None };
                    let (z, s) = self.transform(fa, sa);
                    match fb {
                        Some(fb) => {
                            out.push(Term { i: i as u32, j: j as u32, flip: false, z, s });
                            let (z2, s2) = self.transform(fb, 1.0);
                            out.push(Term { i: i as u32, j: j as u32, flip: true, z: z2, s: s2 });
                        }
                        None => out.push(Term { i: i as u32, j: j as u32, flip: false, z, s: 2.0 * s }),
                    }
                }
                Ok(out)
            })
            .collect();
        let mut all = Vec::new();
        for r in rows {
            all.extend(r?);
        }
        Ok(all)
    }

    /// Exponent and signed weight of one pair in the log-sum-exp.
    fn transform(&self, f: f64, sign: f64) -> (f64, f64) {
        match self.kind {
            ObjectiveKind::M1 => (f / self.eps, 1.0),
            ObjectiveKind::M2(n) => {
                let s = if n % 2 == 0 { 1.0 } else { sign };
                (-(n as f64) * f, s)
            }
            _ => (-f / self.eps, 1.0),
        }
    }

    fn outer(&self) -> f64 {
        match self.kind {
            ObjectiveKind::M2(_) => 1.0,
            _ => self.eps,
        }
    }

    /// Derivative of the exponent with respect to the pair value.
    fn dz_df(&self) -> f64 {
        match self.kind {
            ObjectiveKind::M1 => 1.0 / self.eps,
            ObjectiveKind::M2(n) => -(n as f64),
            _ => -1.0 / self.eps,
        }
    }

    fn lse(terms: &[Term]) -> Result<(f64, f64, f64)> {
        let m = terms.iter().map(|t| t.z).fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::NonFinite("objective exponent".into()));
        }
        let s: f64 = terms.iter().map(|t| t.s * (t.z - m).exp()).sum();
        if !(s > 0.0) {
            return Err(Error::NonFinite("non-positive log-sum-exp total".into()));
        }
        Ok((m + s.ln(), m, s))
    }

    fn check_pairs(syms: &[Sym]) -> Result<()> {
        if syms.len() < 2 {
            return Err(Error::Empty("objective needs at least two joint symbols".into()));
        }
        Ok(())
    }
}

impl Objective for SmoothedObjective {
    fn value(&self, p: &PointSet) -> Result<f64> {
        let (syms, _) = self.symbols(p)?;
        Self::check_pairs(&syms)?;
        let terms = self.terms(&syms)?;
        Ok(self.outer() * Self::lse(&terms)?.0)
    }

    fn value_grad(&self, p: &PointSet) -> Result<(f64, PointSet)> {
        let (syms, tuples) = self.symbols(p)?;
        Self::check_pairs(&syms)?;
        let terms = self.terms(&syms)?;
        let (l, m, s) = Self::lse(&terms)?;
        let coef = self.outer() * self.dz_df();
        let active: Vec<(Term, f64)> = terms
            .iter()
            .filter_map(|t| {
                let w = t.s * (t.z - m).exp() / s;
                (w.abs() > WEIGHT_CUTOFF).then_some((*t, w * coef))
            })
            .collect();
        let grads: Vec<(usize, usize, CMat, CMat)> = active
            .par_iter()
            .map(|&(t, c)| {
                let (src, dst) = if t.flip { (t.j as usize, t.i as usize) } else { (t.i as usize, t.j as usize) };
                let (ga, gb) = self.pair_grad(&syms[src], &syms[dst])?;
                let cc = C64::new(c, 0.0);
                Ok((src, dst, ga * cc, gb * cc))
            })
            .collect::<Result<Vec<_>>>()?;
        let (t, mt) = (syms[0].x.nrows(), syms[0].x.ncols());
        let mut joint = vec![CMat::zeros(t, mt); syms.len()];
        for (a, b, ga, gb) in grads {
            joint[a] += ga;
            joint[b] += gb;
        }
        let sc = self.scales(p);
        let mut out = PointSet::zeros_like(p);
        let ms = p.m();
        for (f, g) in joint.iter().enumerate() {
            let mut off = 0;
            for (k, &mk) in ms.iter().enumerate() {
                let blk = g.columns(off, mk).into_owned();
                out.users[k][tuples[f][k]] += linalg::scale(&blk, sc[k]);
                off += mk;
            }
        }
        Ok((self.outer() * l, out))
    }
}

/// Euclidean gradient of the smoothed objective with respect to frame (k, n).
pub fn euclidean_grad(obj: &SmoothedObjective, p: &PointSet, k: usize, n: usize) -> Result<CMat> {
    let (_, g) = obj.value_grad(p)?;
    g.users
        .get(k)
        .and_then(|u| u.get(n))
        .cloned()
        .ok_or_else(|| Error::InvalidInput(format!("no point ({k}, {n})")))
}

/// Σ Re tr(sᴴ H s) with one Hermitian H per frame; a plumbing check for derivative tests.
#[derive(Clone, Debug)]
pub struct QuadraticObjective {
    pub h: PointSet,
}

impl Objective for QuadraticObjective {
    fn value(&self, p: &PointSet) -> Result<f64> {
        Ok(self.h.zip_map(p, |h, s| h * s).inner(p))
    }

    fn value_grad(&self, p: &PointSet) -> Result<(f64, PointSet)> {
        let hs = self.h.zip_map(p, |h, s| h * s);
        Ok((hs.inner(p), hs.scaled(2.0)))
    }
}
