//! Points on a product of Grassmann manifolds, stored as orthonormal frames.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::model::{JointConstellation, UserConstellation};

pub const ORTHO_TOL: f64 = 1e-10;

/// A T×M frame with orthonormal columns.
#[derive(Clone, Debug, PartialEq)]
pub struct GrassmannPoint(CMat);

impl GrassmannPoint {
    pub fn new(m: CMat) -> Result<Self> {
        let err = (m.adjoint() * &m - linalg::eye(m.ncols())).norm();
        if err > ORTHO_TOL {
            return Err(Error::InvalidInput(format!("columns are not orthonormal (error {err:e})")));
        }
        Ok(GrassmannPoint(m))
    }

    /// Orthonormalizes any full-rank matrix.
    pub fn from_span(m: &CMat) -> Result<Self> {
        Ok(GrassmannPoint(linalg::polar(m)?))
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }
}

/// One matrix per constellation point, grouped by user. Used for points, gradients and directions.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    pub users: Vec<Vec<CMat>>,
}

impl PointSet {
    pub fn zeros_like(other: &PointSet) -> Self {
        PointSet {
            users: other
                .users
                .iter()
                .map(|u| u.iter().map(|m| CMat::zeros(m.nrows(), m.ncols())).collect())
                .collect(),
        }
    }

    /// Independent Haar frames.
    pub fn random<R: Rng + ?Sized>(t: usize, m: &[usize], sizes: &[usize], rng: &mut R) -> Self {
        PointSet {
            users: m
                .iter()
                .zip(sizes)
                .map(|(&mk, &n)| (0..n).map(|_| linalg::haar_frame(t, mk, rng)).collect())
                .collect(),
        }
    }

    /// Orthonormal frames spanning each symbol of a constellation.
    pub fn from_constellation(c: &JointConstellation) -> Result<Self> {
        let users = c
            .users()
            .iter()
            .map(|u| u.symbols().iter().map(linalg::polar).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(PointSet { users })
    }

    /// Scaled truncated unitary symbols √(P_k T / M_k)·s.
    pub fn to_constellation(&self, t: usize, n: usize, powers: &[f64]) -> Result<JointConstellation> {
        if powers.len() != self.users.len() {
            return Err(Error::Dimension("one power per user required".into()));
        }
        let users = self
            .users
            .iter()
            .zip(powers)
            .map(|(u, &p)| {
                let s = (p * t as f64 / u[0].ncols() as f64).sqrt();
                UserConstellation::from_symbols(u.iter().map(|m| linalg::scale(m, s)).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        JointConstellation::from_users(t, n, users)
    }

    pub fn t(&self) -> usize {
        self.users[0][0].nrows()
    }

    pub fn m(&self) -> Vec<usize> {
        self.users.iter().map(|u| u[0].ncols()).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.users.iter().map(|u| u.len()).collect()
    }

    pub fn inner(&self, other: &PointSet) -> f64 {
        self.users
            .iter()
            .zip(&other.users)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| linalg::inner(x, y)))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn scaled(&self, s: f64) -> PointSet {
        self.map(|m| linalg::scale(m, s))
    }

    pub fn map(&self, f: impl Fn(&CMat) -> CMat) -> PointSet {
        PointSet { users: self.users.iter().map(|u| u.iter().map(&f).collect()).collect() }
    }

    pub fn zip_map(&self, other: &PointSet, f: impl Fn(&CMat, &CMat) -> CMat) -> PointSet {
        PointSet {
            users: self
                .users
                .iter()
                .zip(&other.users)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| f(x, y)).collect())
                .collect(),
        }
    }

    /// Zeroes every user except `k`.
    pub fn masked(&self, k: Option<usize>) -> PointSet {
        match k {
            None => self.clone(),
            Some(k) => PointSet {
                users: self
                    .users
                    .iter()
                    .enumerate()
                    .map(|(j, u)| {
                        u.iter()
                            .map(|m| if j == k { m.clone() } else { CMat::zeros(m.nrows(), m.ncols()) })
                            .collect()
                    })
                    .collect(),
            },
        }
    }

    /// Largest deviation of sᴴs from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        self.users
            .iter()
            .flatten()
            .map(|s| (s.adjoint() * s - linalg::eye(s.ncols())).norm())
            .fold(0.0, f64::max)
    }
}

/// (I − s sᴴ) G.
pub fn riemannian_grad(egrad: &CMat, point: &CMat) -> CMat {
    egrad - point * (point.adjoint() * egrad)
}

/// Projects every block of `g` onto the tangent space at `points`.
pub fn project(points: &PointSet, g: &PointSet) -> PointSet {
    points.zip_map(g, |s, v| riemannian_grad(v, s))
}

/// Polar retraction of s + step·ξ.
pub fn retract(point: &CMat, tangent: &CMat, step: f64) -> Result<CMat> {
    let y = point + linalg::scale(tangent, step);
    linalg::polar(&y)
}

pub fn retract_all(points: &PointSet, dir: &PointSet, step: f64) -> Result<PointSet> {
    let users = points
        .users
        .iter()
        .zip(&dir.users)
        .map(|(a, b)| a.iter().zip(b).map(|(s, v)| retract(s, v, step)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(PointSet { users })
}

/// Chordal distance between the spans of two orthonormal frames.
pub fn subspace_distance(a: &CMat, b: &CMat) -> f64 {
    let m = a.ncols() as f64;
    (m - linalg::fro2(&(a.adjoint() * b))).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cgauss, haar_frame};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = haar_frame(5, 2, &mut rng);
        let c = cgauss(2, 2, &mut rng);
        assert!(riemannian_grad(&(&s * &c), &s).norm() < 1e-12);
        let g = cgauss(5, 2, &mut rng);
        let perp = riemannian_grad(&g, &s);
        assert!((riemannian_grad(&perp, &s) - &perp).norm() < 1e-12);
        assert!((s.adjoint() * &perp).norm() < 1e-12);
    }

    #[test]
    fn retraction_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = haar_frame(5, 2, &mut rng);
        let xi = riemannian_grad(&cgauss(5, 2, &mut rng), &s);
        let r0 = retract(&s, &xi, 0.0).unwrap();
        assert!(subspace_distance(&r0, &s) < 1e-10);
        let h = 1e-4;
        let r = retract(&s, &xi, h).unwrap();
        let ratio = subspace_distance(&r, &s) / (h * xi.norm());
        assert!((0.9..=1.1).contains(&ratio), "ratio {ratio}");
        for step in [0.1, 1.0, 10.0] {
            let r = retract(&s, &xi, step).unwrap();
            assert!((r.adjoint() * &r - linalg::eye(2)).norm() < 1e-10);
        }
    }

    #[test]
    fn point_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(GrassmannPoint::new(haar_frame(4, 2, &mut rng)).is_ok());
        assert!(GrassmannPoint::new(cgauss(4, 2, &mut rng)).is_err());
        assert!(GrassmannPoint::from_span(&cgauss(4, 2, &mut rng)).is_ok());
    }
}
