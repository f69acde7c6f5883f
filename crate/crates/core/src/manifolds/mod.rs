//! Toy manifolds with analytic oracles, point clouds and graph distances.

mod graph;

pub use graph::{graph_distances, knn_graph, DistanceMatrix};

use core::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::prelude::*;
use crate::rng;

pub const TORUS_R: f64 = 2.0;
pub const TORUS_TUBE: f64 = 1.0;
pub const ELLIPSOID_AXES: [f64; 3] = [1.0, 1.0, 0.5];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifoldKind {
    Hemisphere,
    Saddle,
    Paraboloid,
    Torus,
    Ellipsoid,
    None,
}

impl ManifoldKind {
    pub const ALL: [ManifoldKind; 5] = [
        ManifoldKind::Hemisphere,
        ManifoldKind::Saddle,
        ManifoldKind::Paraboloid,
        ManifoldKind::Torus,
        ManifoldKind::Ellipsoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ManifoldKind::Hemisphere => "hemisphere",
            ManifoldKind::Saddle => "saddle",
            ManifoldKind::Paraboloid => "paraboloid",
            ManifoldKind::Torus => "torus",
            ManifoldKind::Ellipsoid => "ellipsoid",
            ManifoldKind::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().chain([ManifoldKind::None]).find(|k| k.name() == s)
    }

    /// Closed surfaces need a 3-dimensional latent space.
    pub fn default_latent_dim(self) -> usize {
        match self {
            ManifoldKind::Torus | ManifoldKind::Ellipsoid => 3,
            _ => 2,
        }
    }

    /// Default parameter box.
    pub fn default_bounds(self) -> Bounds {
        match self {
            ManifoldKind::Hemisphere => Bounds::square(1.0),
            ManifoldKind::Saddle | ManifoldKind::Paraboloid | ManifoldKind::None => Bounds::square(2.0),
            ManifoldKind::Torus => Bounds { u: (0.0, 2.0 * PI), v: (0.0, 2.0 * PI) },
            ManifoldKind::Ellipsoid => Bounds { u: (0.0, 2.0 * PI), v: (0.0, PI) },
        }
    }

    fn in_domain(self, u: f64, v: f64) -> bool {
        match self {
            ManifoldKind::Hemisphere => u * u + v * v < 1.0,
            ManifoldKind::Ellipsoid => v > 0.0 && v < PI,
            _ => u.is_finite() && v.is_finite(),
        }
    }
}

/// Axis-aligned parameter box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub u: (f64, f64),
    pub v: (f64, f64),
}

impl Bounds {
    pub fn square(half: f64) -> Self {
        Bounds { u: (-half, half), v: (-half, half) }
    }

    fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.u.0 && u <= self.u.1 && v >= self.v.0 && v <= self.v.1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// Bivariate Gaussian in parameter space truncated to `bounds`.
    Gaussian { mean: [f64; 2], cov: [[f64; 2]; 2], bounds: Bounds },
    /// Uniform in parameter space.
    Uniform { bounds: Bounds },
    /// Uniform with respect to surface area (density proportional to the
    /// volume element in parameter space).
    AreaUniform { bounds: Bounds },
}

impl Sampler {
    /// The imbalanced sampler: mean (1, 1), covariance 2I on [-2, 2]^2.
    pub fn imbalanced() -> Self {
        Sampler::Gaussian { mean: [1.0, 1.0], cov: [[2.0, 0.0], [0.0, 2.0]], bounds: Bounds::square(2.0) }
    }

    fn bounds(&self) -> Bounds {
        match self {
            Sampler::Gaussian { bounds, .. } | Sampler::Uniform { bounds } | Sampler::AreaUniform { bounds } => *bounds,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    /// N x D ambient coordinates.
    pub points: Matrix,
    /// N x 2 intrinsic coordinates.
    pub params: Option<Matrix>,
    pub kind: ManifoldKind,
    pub noise_sigma: f64,
    /// D x D orthogonal matrix; ambient points are `Q * pad(x)`.
    pub rotation: Option<Matrix>,
}

impl PointCloud {
    pub fn from_points(points: Matrix) -> Result<Self> {
        let pc = PointCloud { points, params: None, kind: ManifoldKind::None, noise_sigma: 0.0, rotation: None };
        pc.validate()?;
        Ok(pc)
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.rows() == 0 {
            return Err(Error::InsufficientData("point cloud is empty".to_string()));
        }
        if !self.points.is_finite() {
            return Err(Error::NonFinite("point cloud contains non-finite coordinates".to_string()));
        }
        if let Some(p) = &self.params {
            if p.shape() != (self.points.rows(), 2) {
                return Err(Error::shape("params must be N x 2"));
            }
        }
        if let Some(q) = &self.rotation {
            if q.shape() != (self.dim(), self.dim()) {
                return Err(Error::shape("rotation must be D x D"));
            }
            let err = q.matmul_tn(q).sub(&Matrix::identity(self.dim())).max_abs();
            if err > 1e-10 {
                return Err(Error::contract(format!("rotation is not orthogonal (error {err:e})")));
            }
        }
        Ok(())
    }

    pub fn select(&self, idx: &[usize]) -> PointCloud {
        PointCloud {
            points: self.points.select_rows(idx),
            params: self.params.as_ref().map(|p| p.select_rows(idx)),
            kind: self.kind,
            noise_sigma: self.noise_sigma,
            rotation: self.rotation.clone(),
        }
    }

    /// Ambient points with the rotation undone, truncated to 3 coordinates
    /// for the toy surfaces.
    pub fn unrotated(&self) -> Matrix {
        let base = match &self.rotation {
            Some(q) => self.points.matmul(q),
            None => self.points.clone(),
        };
        if self.kind != ManifoldKind::None && base.cols() > 3 {
            base.select_cols(&[0, 1, 2])
        } else {
            base
        }
    }

    /// Largest pairwise Euclidean distance.
    pub fn diameter(&self) -> f64 {
        let n = self.len();
        let mut best = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                best = best.max(linalg::sq_dist(self.point(i), self.point(j)));
            }
        }
        best.sqrt()
    }
}

/// Ambient coordinates of parameter `(u, v)` on the surface.
pub fn embed(kind: ManifoldKind, u: f64, v: f64) -> Result<[f64; 3]> {
    if !kind.in_domain(u, v) {
        return Err(Error::domain(format!("({u}, {v}) is outside the {} domain", kind.name())));
    }
    Ok(match kind {
        ManifoldKind::Hemisphere => [u, v, (1.0 - u * u - v * v).sqrt()],
        ManifoldKind::Saddle => [u, v, u * u - v * v],
        ManifoldKind::Paraboloid => [u, v, u * u + v * v],
        ManifoldKind::Torus => {
            let ring = TORUS_R + TORUS_TUBE * v.cos();
            [ring * u.cos(), ring * u.sin(), TORUS_TUBE * v.sin()]
        }
        ManifoldKind::Ellipsoid => {
            let [a, b, c] = ELLIPSOID_AXES;
            [a * u.cos() * v.sin(), b * u.sin() * v.sin(), c * v.cos()]
        }
        ManifoldKind::None => return Err(Error::domain("kind 'none' has no parameterization")),
    })
}

/// Closed-form area element `sqrt(det(J^T J))` of the parameterization.
pub fn analytic_volume_element(kind: ManifoldKind, u: f64, v: f64) -> Result<f64> {
    if !kind.in_domain(u, v) {
        return Err(Error::domain(format!("({u}, {v}) is outside the {} domain", kind.name())));
    }
    Ok(match kind {
        ManifoldKind::Hemisphere => 1.0 / (1.0 - u * u - v * v).sqrt(),
        ManifoldKind::Saddle | ManifoldKind::Paraboloid => (1.0 + 4.0 * u * u + 4.0 * v * v).sqrt(),
        ManifoldKind::Torus => TORUS_TUBE * (TORUS_R + TORUS_TUBE * v.cos()),
        ManifoldKind::Ellipsoid => {
            let [a, b, c] = ELLIPSOID_AXES;
            let (su, cu, sv, cv) = (u.sin(), u.cos(), v.sin(), v.cos());
            sv * (b * b * c * c * cu * cu * sv * sv + a * a * c * c * su * su * sv * sv + a * a * b * b * cv * cv).sqrt()
        }
        ManifoldKind::None => return Err(Error::domain("kind 'none' has no parameterization")),
    })
}

/// Residual of the implicit surface equation at an (unrotated) point.
pub fn implicit_residual(kind: ManifoldKind, p: &[f64]) -> Option<f64> {
    let (x, y, z) = (p[0], p[1], p[2]);
    let extra: f64 = p[3..].iter().map(|c| c * c).sum::<f64>().sqrt();
    let r = match kind {
        ManifoldKind::Hemisphere => {
            let s = (x * x + y * y + z * z - 1.0).abs();
            if z < -1e-12 {
                s + z.abs()
            } else {
                s
            }
        }
        ManifoldKind::Saddle => (z - (x * x - y * y)).abs(),
        ManifoldKind::Paraboloid => (z - (x * x + y * y)).abs(),
        ManifoldKind::Torus => (((x * x + y * y).sqrt() - TORUS_R).powi(2) + z * z - TORUS_TUBE * TORUS_TUBE).abs(),
        ManifoldKind::Ellipsoid => {
            let [a, b, c] = ELLIPSOID_AXES;
            (x * x / (a * a) + y * y / (b * b) + z * z / (c * c) - 1.0).abs()
        }
        ManifoldKind::None => return None,
    };
    Some(r + extra)
}

/// Euclidean distance from `p` (unrotated, possibly padded) to the closed
/// unit hemisphere `{|x| = 1, z >= 0}`.
pub fn hemisphere_distance(p: &[f64]) -> f64 {
    let extra: f64 = p[3..].iter().map(|c| c * c).sum();
    let (x, y, z) = (p[0], p[1], p[2]);
    let d3 = if z >= 0.0 {
        ((x * x + y * y + z * z).sqrt() - 1.0).abs()
    } else {
        let rho = (x * x + y * y).sqrt();
        ((rho - 1.0).powi(2) + z * z).sqrt()
    };
    (d3 * d3 + extra).sqrt()
}

/// Closed-form geodesic distance where one exists (the unit hemisphere);
/// `None` means the caller should fall back to a graph oracle.
pub fn analytic_geodesic_length(kind: ManifoldKind, p0: &[f64], p1: &[f64]) -> Result<Option<f64>> {
    if p0.len() != p1.len() || p0.len() < 3 {
        return Err(Error::shape("endpoints must share an ambient dimension >= 3"));
    }
    for p in [p0, p1] {
        if let Some(res) = implicit_residual(kind, p) {
            if res > 1e-6 {
                return Err(Error::domain(format!("point is off the {} surface (residual {res:e})", kind.name())));
            }
        }
    }
    if p0 == p1 {
        return Ok(Some(0.0));
    }
    Ok(match kind {
        ManifoldKind::Hemisphere => {
            let c = linalg::dot(&p0[..3], &p1[..3]).clamp(-1.0, 1.0);
            Some(c.acos())
        }
        _ => None,
    })
}

fn gaussian_param<R: Rng + ?Sized>(rng: &mut R, mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<(f64, f64)> {
    let l11 = cov[0][0].sqrt();
    if !(l11 > 0.0) {
        return Err(Error::contract("covariance must be positive definite"));
    }
    let l21 = cov[1][0] / l11;
    let rem = cov[1][1] - l21 * l21;
    if !(rem > 0.0) {
        return Err(Error::contract("covariance must be positive definite"));
    }
    let l22 = rem.sqrt();
    let (a, b) = (rng::normal(rng), rng::normal(rng));
    Ok((mean[0] + l11 * a, mean[1] + l21 * a + l22 * b))
}

fn uniform_param<R: Rng + ?Sized>(rng: &mut R, b: &Bounds) -> (f64, f64) {
    (rng.random_range(b.u.0..=b.u.1), rng.random_range(b.v.0..=b.v.1))
}

/// Upper bound of the volume element on the box, for rejection sampling.
fn volume_envelope(kind: ManifoldKind, b: &Bounds) -> f64 {
    let steps = 200;
    let mut best: f64 = 0.0;
    for i in 0..=steps {
        for j in 0..=steps {
            let u = b.u.0 + (b.u.1 - b.u.0) * i as f64 / steps as f64;
            let v = b.v.0 + (b.v.1 - b.v.0) * j as f64 / steps as f64;
            if let Ok(f) = analytic_volume_element(kind, u, v) {
                best = best.max(f);
            }
        }
    }
    best * 1.05
}

fn hemisphere_area_uniform<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    // uniform height on [0, 1) is area-uniform on the hemisphere (Archimedes)
    loop {
        let z: f64 = rng.random();
        let phi = rng.random_range(0.0..2.0 * PI);
        let rho = (1.0 - z * z).sqrt();
        let (u, v) = (rho * phi.cos(), rho * phi.sin());
        if u * u + v * v < 1.0 {
            return (u, v);
        }
    }
}

/// Samples `n` points on a toy surface.
pub fn sample_manifold(kind: ManifoldKind, n: usize, sampler: &Sampler, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::contract("n must be at least 1"));
    }
    if kind == ManifoldKind::None {
        return Err(Error::domain("cannot sample kind 'none'"));
    }
    let bounds = sampler.bounds();
    if !(bounds.u.0 < bounds.u.1 && bounds.v.0 < bounds.v.1) {
        return Err(Error::domain("sampler bounds are empty"));
    }
    let mut r = rng::seeded(seed);
    let max_tries = 10_000 * n.max(100);
    let mut tries = 0usize;
    let envelope = match sampler {
        Sampler::AreaUniform { .. } if kind != ManifoldKind::Hemisphere => volume_envelope(kind, &bounds),
        _ => 0.0,
    };
    let mut params = Vec::with_capacity(2 * n);
    let mut points = Vec::with_capacity(3 * n);
    while params.len() < 2 * n {
        tries += 1;
        if tries > max_tries {
            return Err(Error::domain(format!(
                "sampler support is incompatible with the {} domain (acceptance too low)",
                kind.name()
            )));
        }
        let (u, v) = match sampler {
            Sampler::Gaussian { mean, cov, .. } => gaussian_param(&mut r, *mean, *cov)?,
            Sampler::Uniform { bounds } => uniform_param(&mut r, bounds),
            Sampler::AreaUniform { bounds } => {
                if kind == ManifoldKind::Hemisphere {
                    hemisphere_area_uniform(&mut r)
                } else {
                    let (u, v) = uniform_param(&mut r, bounds);
                    let f = analytic_volume_element(kind, u, v).unwrap_or(0.0);
                    if r.random::<f64>() * envelope > f {
                        continue;
                    }
                    (u, v)
                }
            }
        };
        if !bounds.contains(u, v) || !kind.in_domain(u, v) {
            continue;
        }
        params.extend_from_slice(&[u, v]);
        points.extend_from_slice(&embed(kind, u, v)?);
    }
    Ok(PointCloud {
        points: Matrix::from_vec(n, 3, points),
        params: Some(Matrix::from_vec(n, 2, params)),
        kind,
        noise_sigma: 0.0,
        rotation: None,
    })
}

/// Seeded Haar-random rotation (determinant +1).
pub fn random_rotation(dim: usize, seed: u64) -> Matrix {
    let mut r = rng::seeded(seed);
    let g = rng::normal_matrix(&mut r, dim, dim).to_nalgebra();
    let qr = g.qr();
    let (mut q, rr) = (qr.q(), qr.r());
    for j in 0..dim {
        if rr[(j, j)] < 0.0 {
            for i in 0..dim {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    if q.determinant() < 0.0 {
        for i in 0..dim {
            q[(i, 0)] = -q[(i, 0)];
        }
    }
    Matrix::from_nalgebra(&q)
}

/// Zero-pads to `target_dim`, rotates by a seeded random rotation and adds
/// isotropic Gaussian noise.
pub fn perturb(cloud: &PointCloud, noise_sigma: f64, target_dim: usize, seed: u64) -> Result<PointCloud> {
    let q = random_rotation(target_dim.max(1), seed ^ 0x5EED_0F0A_7E00);
    perturb_with(cloud, noise_sigma, target_dim, Some(q), seed)
}

/// As [`perturb`], with an explicit rotation (`None` means identity).
pub fn perturb_with(
    cloud: &PointCloud,
    noise_sigma: f64,
    target_dim: usize,
    rotation: Option<Matrix>,
    seed: u64,
) -> Result<PointCloud> {
    let d = cloud.dim();
    if target_dim < d {
        return Err(Error::InputDim { expected: d, got: target_dim });
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::contract("noise_sigma must be non-negative"));
    }
    let n = cloud.len();
    let mut padded = Matrix::zeros(n, target_dim);
    for i in 0..n {
        padded.row_mut(i)[..d].copy_from_slice(cloud.point(i));
    }
    let mut total_rotation = cloud.rotation.as_ref().map(|old| {
        let mut big = Matrix::identity(target_dim);
        for i in 0..d {
            for j in 0..d {
                big[(i, j)] = old[(i, j)];
            }
        }
        big
    });
    let mut points = padded;
    if let Some(q) = rotation {
        if q.shape() != (target_dim, target_dim) {
            return Err(Error::shape("rotation must be target_dim x target_dim"));
        }
        points = points.matmul_nt(&q);
        total_rotation = Some(match total_rotation {
            Some(old) => q.matmul(&old),
            None => q,
        });
    }
    if noise_sigma > 0.0 {
        let mut r = rng::seeded(seed);
        for x in points.data_mut() {
            *x += noise_sigma * rng::normal(&mut r);
        }
    }
    let out = PointCloud {
        points,
        params: cloud.params.clone(),
        kind: cloud.kind,
        noise_sigma: (cloud.noise_sigma * cloud.noise_sigma + noise_sigma * noise_sigma).sqrt(),
        rotation: total_rotation,
    };
    out.validate()?;
    Ok(out)
}

/// Default negative-sample variance: (diameter / 4)^2.
pub fn default_negative_variance(cloud: &PointCloud) -> f64 {
    let d = cloud.diameter();
    (d / 4.0) * (d / 4.0)
}

/// One Gaussian-perturbed copy of every point, noise covariance `c I`.
pub fn negative_sample(cloud: &PointCloud, c: f64, seed: u64) -> Result<PointCloud> {
    if !(c >= 0.0) {
        return Err(Error::contract("noise variance must be non-negative"));
    }
    let sd = c.sqrt();
    let mut r = rng::seeded(seed);
    let mut points = cloud.points.clone();
    for x in points.data_mut() {
        *x += sd * rng::normal(&mut r);
    }
    Ok(PointCloud { points, params: None, kind: ManifoldKind::None, noise_sigma: 0.0, rotation: None })
}
