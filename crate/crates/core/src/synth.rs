//! Synthetic point-cloud shapes and the Chamfer reconstruction metric.
//!
//! Surface parameterizations (all centered at the origin, before jitter):
//!
//! * `Sphere`, `Ellipsoid`: semi-axes `(a, b, c)`. Draw `z = 2u - 1` and
//!   `phi = 2*pi*v`, take the unit-sphere point
//!   `(sqrt(1 - z^2) cos phi, sqrt(1 - z^2) sin phi, z)` and multiply
//!   component-wise by the semi-axes. This is area-uniform for spheres; for
//!   ellipsoids it is the push-forward of the uniform sphere measure.
//! * `Box`: full edge lengths `(sx, sy, sz)`, so the surface is that of
//!   `[-sx/2, sx/2] x [-sy/2, sy/2] x [-sz/2, sz/2]`. One uniform `w` picks a
//!   face with probability proportional to its area, in the order
//!   `-x, +x, -y, +y, -z, +z`; two more uniforms place the point on it.
//! * `Cylinder`: `(rx, ry, h)`, elliptic cross-section with radii `rx, ry`
//!   and height `h` along z. One uniform `w` chooses lateral surface / bottom
//!   cap / top cap with weights `2*pi*(rx+ry)/2*h`, `pi*rx*ry`, `pi*rx*ry`.
//!   The lateral point uses `phi = 2*pi*u`, `z = h*(v - 1/2)`; a cap point
//!   uses `r = sqrt(u)`, `phi = 2*pi*v`, `(rx r cos phi, ry r sin phi, +-h/2)`.
//!
//! Every point draws its uniforms from [`Rng`] seeded with `spec.seed`, in
//! the order above, followed by three Gaussian draws (x, y, z) scaled by
//! `noise_sigma` when `noise_sigma > 0`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Param("point cloud must contain at least one point".into()));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Data("point cloud contains a non-finite coordinate".into()));
        }
        Ok(PointCloud { points })
    }

    /// Builds a cloud from `3 * n` row-major coordinates.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if !coords.len().is_multiple_of(3) {
            return Err(Error::Param(format!(
                "flat coordinate count {} is not a multiple of 3",
                coords.len()
            )));
        }
        Self::new(coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().flatten().copied()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Sphere,
    Ellipsoid,
    Box,
    Cylinder,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Sphere, Family::Ellipsoid, Family::Box, Family::Cylinder];

    pub fn name(self) -> &'static str {
        match self {
            Family::Sphere => "sphere",
            Family::Ellipsoid => "ellipsoid",
            Family::Box => "box",
            Family::Cylinder => "cylinder",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Param(format!("unknown shape family `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeSpec {
    pub family: Family,
    pub scale: [f64; 3],
    pub noise_sigma: f64,
    pub seed: u64,
}

impl ShapeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Param(format!(
                "shape scales must be positive and finite, got {:?}",
                self.scale
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Param(format!(
                "noise_sigma must be nonnegative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

pub fn generate_cloud(spec: &ShapeSpec, n_points: usize) -> Result<PointCloud> {
    spec.validate()?;
    if n_points == 0 {
        return Err(Error::Param("n_points must be at least 1".into()));
    }
    let mut rng = Rng::seed_from_u64(spec.seed);
    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let mut p = sample_surface(spec.family, &spec.scale, &mut rng);
        if spec.noise_sigma > 0.0 {
            for c in &mut p {
                *c += spec.noise_sigma * rng.next_gaussian();
            }
        }
        points.push(p);
    }
    PointCloud::new(points)
}

fn sample_surface(family: Family, s: &[f64; 3], rng: &mut Rng) -> Point3 {
    use std::f64::consts::{PI, TAU};
    match family {
        Family::Sphere | Family::Ellipsoid => {
            let z = 2.0 * rng.next_f64() - 1.0;
            let phi = TAU * rng.next_f64();
            let r = (1.0 - z * z).max(0.0).sqrt();
            [s[0] * r * phi.cos(), s[1] * r * phi.sin(), s[2] * z]
        }
        Family::Box => {
            let half = [s[0] / 2.0, s[1] / 2.0, s[2] / 2.0];
            // Face areas for the x, y and z normal pairs.
            let areas = [s[1] * s[2], s[0] * s[2], s[0] * s[1]];
            let total = 2.0 * (areas[0] + areas[1] + areas[2]);
            let mut w = rng.next_f64() * total;
            let mut face = 5;
            for (i, a) in [areas[0], areas[0], areas[1], areas[1], areas[2], areas[2]]
                .into_iter()
                .enumerate()
            {
                if w < a {
                    face = i;
                    break;
                }
                w -= a;
            }
            let axis = face / 2;
            let sign = if face % 2 == 0 { -1.0 } else { 1.0 };
            let (a1, a2) = match axis {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let u = rng.next_f64();
            let v = rng.next_f64();
            let mut p = [0.0; 3];
            p[axis] = sign * half[axis];
            p[a1] = (u - 0.5) * s[a1];
            p[a2] = (v - 0.5) * s[a2];
            p
        }
        Family::Cylinder => {
            let (rx, ry, h) = (s[0], s[1], s[2]);
            let lateral = PI * (rx + ry) * h;
            let cap = PI * rx * ry;
            let w = rng.next_f64() * (lateral + 2.0 * cap);
            let u = rng.next_f64();
            let v = rng.next_f64();
            if w < lateral {
                let phi = TAU * u;
                [rx * phi.cos(), ry * phi.sin(), h * (v - 0.5)]
            } else {
                let z = if w < lateral + cap { -h / 2.0 } else { h / 2.0 };
                let r = u.sqrt();
                let phi = TAU * v;
                [rx * r * phi.cos(), ry * r * phi.sin(), z]
            }
        }
    }
}

/// Centers the cloud on its centroid and scales it to unit maximum norm.
///
/// A cloud whose points all coincide is only centered.
pub fn normalize_cloud(cloud: &PointCloud) -> Result<PointCloud> {
    let pts = cloud.points();
    if pts.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Data("cannot normalize a cloud with non-finite coordinates".into()));
    }
    let n = pts.len() as f64;
    let mut centroid = [0.0; 3];
    for p in pts {
        for k in 0..3 {
            centroid[k] += p[k];
        }
    }
    for c in &mut centroid {
        *c /= n;
    }
    let centered: Vec<Point3> = pts
        .iter()
        .map(|p| [p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]])
        .collect();
    let max_norm = centered.iter().map(norm).fold(0.0, f64::max);
    let scale = if max_norm > 0.0 { max_norm } else { 1.0 };
    PointCloud::new(
        centered
            .into_iter()
            .map(|p| [p[0] / scale, p[1] / scale, p[2] / scale])
            .collect(),
    )
}

fn norm(p: &Point3) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

#[inline]
pub(crate) fn sq_dist(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Index of the nearest point in `targets`, lowest index on ties.
#[inline]
pub(crate) fn nearest(p: &Point3, targets: &[Point3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, t) in targets.iter().enumerate() {
        let d = sq_dist(p, t);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn directed_term(from: &[Point3], to: &[Point3]) -> f64 {
    let sum: f64 = from.iter().map(|p| nearest(p, to).1).sum();
    sum / from.len() as f64
}

/// Symmetric Chamfer distance with squared point distances, averaged per
/// direction.
///
/// `(a - b)^2 == (b - a)^2` bit-for-bit and the two directed terms are
/// combined with a single commutative addition, so swapping the arguments
/// gives exactly the same value.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.points.is_empty() || b.points.is_empty() {
        return Err(Error::Param("chamfer distance of an empty cloud".into()));
    }
    Ok(directed_term(&a.points, &b.points) + directed_term(&b.points, &a.points))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(family: Family, scale: [f64; 3], noise: f64, seed: u64) -> ShapeSpec {
        ShapeSpec {
            family,
            scale,
            noise_sigma: noise,
            seed,
        }
    }

    #[test]
    fn unit_sphere_points_on_radius_one() {
        for seed in [0, 1, 99, u64::MAX] {
            let c = generate_cloud(&spec(Family::Sphere, [1.0; 3], 0.0, seed), 128).unwrap();
            assert_eq!(c.n_points(), 128);
            for p in c.points() {
                assert!((norm(p) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn generation_is_bit_identical() {
        let s = spec(Family::Cylinder, [0.7, 0.9, 1.4], 0.02, 42);
        let a = generate_cloud(&s, 64).unwrap();
        let b = generate_cloud(&s, 64).unwrap();
        let bits = |c: &PointCloud| c.flat().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    fn on_box_surface(p: &Point3, half: [f64; 3]) -> bool {
        let inside = (0..3).all(|k| p[k].abs() <= half[k] + 1e-12);
        let on_face = (0..3).any(|k| (p[k].abs() - half[k]).abs() <= 1e-12);
        inside && on_face
    }

    #[test]
    fn box_points_lie_on_surface() {
        let c = generate_cloud(&spec(Family::Box, [1.0, 2.0, 3.0], 0.0, 5), 2000).unwrap();
        let mut faces = [0usize; 3];
        for p in c.points() {
            assert!(on_box_surface(p, [0.5, 1.0, 1.5]), "{p:?}");
            for k in 0..3 {
                if (p[k].abs() - [0.5, 1.0, 1.5][k]).abs() <= 1e-12 {
                    faces[k] += 1;
                }
            }
        }
        // Area fractions: x faces 6/22, y faces 3/22, z faces 2/22.
        assert!(faces[0] > faces[1] && faces[1] > faces[2], "{faces:?}");
    }

    #[test]
    fn cylinder_points_lie_on_surface() {
        let (rx, ry, h) = (0.5, 0.8, 1.2);
        let c = generate_cloud(&spec(Family::Cylinder, [rx, ry, h], 0.0, 8), 500).unwrap();
        for p in c.points() {
            let radial = (p[0] / rx).powi(2) + (p[1] / ry).powi(2);
            let lateral = (radial - 1.0).abs() < 1e-9 && p[2].abs() <= h / 2.0 + 1e-12;
            let cap = radial <= 1.0 + 1e-9 && (p[2].abs() - h / 2.0).abs() < 1e-12;
            assert!(lateral || cap, "{p:?}");
        }
    }

    #[test]
    fn ellipsoid_points_satisfy_quadric() {
        let s = [0.6, 1.1, 1.4];
        let c = generate_cloud(&spec(Family::Ellipsoid, s, 0.0, 3), 300).unwrap();
        for p in c.points() {
            let q: f64 = (0..3).map(|k| (p[k] / s[k]).powi(2)).sum();
            assert!((q - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_scale_rejected() {
        let err = generate_cloud(&spec(Family::Sphere, [1.0, 0.0, 1.0], 0.0, 0), 8);
        assert!(matches!(err, Err(Error::Param(_))));
        let err = generate_cloud(&spec(Family::Sphere, [1.0, 1.0, 1.0], -0.1, 0), 8);
        assert!(matches!(err, Err(Error::Param(_))));
        let err = generate_cloud(&spec(Family::Sphere, [1.0; 3], 0.0, 0), 0);
        assert!(matches!(err, Err(Error::Param(_))));
    }

    #[test]
    fn normalize_identity_case() {
        let c = PointCloud::new(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, -0.5, 0.0]])
            .unwrap();
        let n = normalize_cloud(&c).unwrap();
        for (a, b) in c.flat().zip(n.flat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_two_points() {
        let c = PointCloud::new(vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        let n = normalize_cloud(&c).unwrap();
        assert_eq!(n.points(), &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn normalize_repeated_point_keeps_scale() {
        let c = PointCloud::new(vec![[3.0, -2.0, 1.0]; 5]).unwrap();
        let n = normalize_cloud(&c).unwrap();
        assert!(n.points().iter().all(|p| *p == [0.0, 0.0, 0.0]));
    }

    #[test]
    fn normalize_rejects_non_finite() {
        // Bypass the constructor check to exercise the data-error path.
        let c = PointCloud {
            points: vec![[0.0, f64::NAN, 0.0]],
        };
        assert!(matches!(normalize_cloud(&c), Err(Error::Data(_))));
    }

    #[test]
    fn chamfer_known_values() {
        let a = PointCloud::new(vec![[0.0, 0.0, 0.0]]).unwrap();
        let b = PointCloud::new(vec![[1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(chamfer_distance(&a, &b).unwrap(), 2.0);
        let c = generate_cloud(&spec(Family::Box, [1.0, 1.0, 2.0], 0.1, 1), 32).unwrap();
        assert_eq!(chamfer_distance(&c, &c).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_empty_rejected() {
        let a = PointCloud::new(vec![[0.0; 3]]).unwrap();
        let empty = PointCloud { points: vec![] };
        assert!(matches!(chamfer_distance(&a, &empty), Err(Error::Param(_))));
    }

    #[test]
    fn family_round_trips_through_name() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert!("torus".parse::<Family>().is_err());
    }
}
