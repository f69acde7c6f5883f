//! Evaluation metrics: embedding fidelity, geodesic length error and
//! density-versus-volume correlation.

use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::diffnet::DiffMap;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::manifolds::{analytic_volume_element, DistanceMatrix, ManifoldKind, PointCloud};
use crate::prelude::*;

/// Pearson correlation between latent pair distances and ground-truth
/// distances over all pairs `i < j`.
pub fn demap<M: DiffMap + ?Sized>(encoder: &M, cloud: &PointCloud, truth: &DistanceMatrix) -> Result<f64> {
    let z = encoder.eval_batch(&cloud.points)?;
    demap_latent(&z, truth)
}

/// [`demap`] from precomputed latent coordinates.
pub fn demap_latent(latent: &Matrix, truth: &DistanceMatrix) -> Result<f64> {
    let n = latent.rows();
    if n < 3 {
        return Err(Error::InsufficientData("DEMaP needs at least 3 points".to_string()));
    }
    if truth.len() != n {
        return Err(Error::shape("latent rows and distance matrix size differ"));
    }
    let pred = DistanceMatrix::euclidean(latent).pair_vector();
    linalg::pearson(&pred, &truth.pair_vector())
        .ok_or_else(|| Error::UndefinedCorrelation("a distance vector has zero variance".to_string()))
}

pub fn geodesic_length_mse(predicted: &[f64], oracle: &[f64]) -> Result<f64> {
    if predicted.len() != oracle.len() || predicted.is_empty() {
        return Err(Error::shape("length lists must be non-empty and equally long"));
    }
    Ok(predicted.iter().zip(oracle).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / predicted.len() as f64)
}

/// Region outside which KDE queries are excluded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MaskRegion {
    All,
    /// `u^2 + v^2 < r2`
    Disk(f64),
    /// `|u| < h` and `|v| < h`
    Square(f64),
}

impl MaskRegion {
    pub fn for_kind(kind: ManifoldKind) -> Self {
        match kind {
            ManifoldKind::Hemisphere => MaskRegion::Disk(0.8),
            ManifoldKind::Saddle | ManifoldKind::Paraboloid => MaskRegion::Square(1.6),
            _ => MaskRegion::All,
        }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        match *self {
            MaskRegion::All => true,
            MaskRegion::Disk(r2) => u * u + v * v < r2,
            MaskRegion::Square(h) => u.abs() < h && v.abs() < h,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeEstimate {
    pub densities: Vec<f64>,
    /// Per-axis Gaussian bandwidths.
    pub bandwidth: [f64; 2],
    /// `true` where the query lies inside the mask region and is kept.
    pub inside: Vec<bool>,
}

impl KdeEstimate {
    pub fn kept(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.densities.iter().copied().enumerate().filter(|(i, _)| self.inside[*i])
    }
}

/// Product-Gaussian KDE in the plane with Scott's-rule bandwidths
/// `n^(-1/6) * sample std` per axis.
pub fn kde_density(samples: &Matrix, queries: &Matrix, mask: MaskRegion) -> Result<KdeEstimate> {
    if samples.cols() != 2 || queries.cols() != 2 {
        return Err(Error::shape("KDE works on 2-column parameter matrices"));
    }
    let n = samples.rows();
    if n < 10 {
        return Err(Error::InsufficientData(format!("KDE needs at least 10 samples, got {n}")));
    }
    let factor = (n as f64).powf(-1.0 / 6.0);
    let mut h = [0.0; 2];
    for (a, ha) in h.iter_mut().enumerate() {
        let col = samples.column(a);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        // degenerate (all samples on a line or point): fall back to a tiny width
        *ha = factor * var.sqrt().max(1e-12);
    }
    let norm = 1.0 / (2.0 * PI * h[0] * h[1] * n as f64);
    let densities = queries
        .row_iter()
        .map(|q| {
            samples
                .row_iter()
                .map(|s| {
                    let a = (q[0] - s[0]) / h[0];
                    let b = (q[1] - s[1]) / h[1];
                    (-0.5 * (a * a + b * b)).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    let inside = queries.row_iter().map(|q| mask.contains(q[0], q[1])).collect();
    Ok(KdeEstimate { densities, bandwidth: h, inside })
}

/// Intrinsic coordinates used for density evaluation: the first two
/// unrotated ambient coordinates for graph-type surfaces, stored parameters
/// otherwise.
pub fn recover_params(cloud: &PointCloud) -> Result<Matrix> {
    match cloud.kind {
        ManifoldKind::Hemisphere | ManifoldKind::Saddle | ManifoldKind::Paraboloid => {
            let base = cloud.unrotated();
            if base.cols() < 2 {
                return Err(Error::shape("need at least two ambient coordinates"));
            }
            Ok(base.select_cols(&[0, 1]))
        }
        _ => cloud
            .params
            .clone()
            .ok_or_else(|| Error::contract("cloud kind has no recoverable intrinsic coordinates")),
    }
}

/// Pearson R (and R^2) between KDE density at each sample and the analytic
/// volume element there, over samples inside the kind's mask.
pub fn density_volume_correlation(generated: &PointCloud, kind: ManifoldKind) -> Result<(f64, f64)> {
    let mut cloud = generated.clone();
    cloud.kind = kind;
    let params = recover_params(&cloud)?;
    let kde = kde_density(&params, &params, MaskRegion::for_kind(kind))?;
    let mut dens = Vec::new();
    let mut vol = Vec::new();
    for (i, d) in kde.kept() {
        if let Ok(v) = analytic_volume_element(kind, params[(i, 0)], params[(i, 1)]) {
            dens.push(d);
            vol.push(v);
        }
    }
    if dens.len() < 10 {
        return Err(Error::InsufficientData(format!("only {} samples inside the evaluation mask", dens.len())));
    }
    let r = linalg::pearson(&dens, &vol)
        .ok_or_else(|| Error::UndefinedCorrelation("density or volume vector is constant".to_string()))?;
    Ok((r, r * r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifolds::{sample_manifold, Bounds, Sampler};

    fn line_latent(xs: &[f64]) -> Matrix {
        Matrix::from_vec(xs.len(), 1, xs.to_vec())
    }

    #[test]
    fn proportional_distances_give_one() {
        let z = line_latent(&[0.0, 1.0, 3.0, 7.0]);
        let truth = DistanceMatrix::euclidean(&z.scale(2.5));
        assert!((demap_latent(&z, &truth).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reversed_distances_give_minus_one() {
        let z = line_latent(&[0.0, 1.0, 3.0, 7.0]);
        let pred = DistanceMatrix::euclidean(&z).pair_vector();
        // build a truth matrix with d = 10 - pred
        let n = 4;
        let mut m = Matrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                m[(i, j)] = 10.0 - pred[k];
                m[(j, i)] = m[(i, j)];
                k += 1;
            }
        }
        let truth = DistanceMatrix::new(m).unwrap();
        assert!((demap_latent(&z, &truth).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_distances_are_undefined() {
        let z = line_latent(&[0.0, 1.0, 2.0]);
        let truth = DistanceMatrix::new(Matrix::from_rows(&[[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]]).unwrap())
            .unwrap();
        assert!(matches!(demap_latent(&z, &truth), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn length_mse_examples() {
        assert_eq!(geodesic_length_mse(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 2.5);
        assert_eq!(geodesic_length_mse(&[0.3, 0.1], &[0.3, 0.1]).unwrap(), 0.0);
        assert_eq!(
            geodesic_length_mse(&[0.3, 1.1], &[0.7, 0.1]).unwrap(),
            geodesic_length_mse(&[0.7, 0.1], &[0.3, 1.1]).unwrap()
        );
    }

    #[test]
    fn point_mass_peaks_at_its_location() {
        let mut rows = vec![[0.2, 0.3]; 12];
        rows.push([1.0, 1.0]);
        let s = Matrix::from_rows(&rows).unwrap();
        let q = Matrix::from_rows(&[[0.2, 0.3], [0.5, 0.5], [1.0, 1.0], [-1.0, 0.0]]).unwrap();
        let k = kde_density(&s, &q, MaskRegion::All).unwrap();
        let best = k.densities.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(k.densities[0], best);
    }

    #[test]
    fn grid_density_is_flat_inside() {
        let m = 60;
        let mut rows = Vec::new();
        for i in 0..m {
            for j in 0..m {
                rows.push([i as f64 / (m - 1) as f64 * 4.0 - 2.0, j as f64 / (m - 1) as f64 * 4.0 - 2.0]);
            }
        }
        let s = Matrix::from_rows(&rows).unwrap();
        let q = Matrix::from_rows(&[[0.0, 0.0], [0.5, -0.5], [-0.7, 0.2], [0.8, 0.8]]).unwrap();
        let k = kde_density(&s, &q, MaskRegion::All).unwrap();
        let (lo, hi) = k.densities.iter().fold((f64::MAX, f64::MIN), |(a, b), d| (a.min(*d), b.max(*d)));
        assert!((hi - lo) / hi < 0.2);
    }

    #[test]
    fn masks_follow_regions() {
        let s = Matrix::from_rows(&[[0.0, 0.0]; 10]).unwrap();
        let q = Matrix::from_rows(&[[0.0, 0.0], [0.9, 0.0], [1.7, 0.0]]).unwrap();
        assert_eq!(kde_density(&s, &q, MaskRegion::Disk(0.8)).unwrap().inside, vec![true, false, false]);
        assert_eq!(kde_density(&s, &q, MaskRegion::Square(1.6)).unwrap().inside, vec![true, true, false]);
    }

    #[test]
    fn area_uniform_samples_track_the_volume_element() {
        let kind = ManifoldKind::Saddle;
        let pc = sample_manifold(kind, 3000, &Sampler::AreaUniform { bounds: Bounds::square(2.0) }, 3).unwrap();
        let (r, r2) = density_volume_correlation(&pc, kind).unwrap();
        assert!(r > 0.9, "{r}");
        assert!((r2 - r * r).abs() < 1e-15);
    }

    // The support must clear the mask by a few bandwidths: on [-2, 2]^2 the
    // KDE edge deficit alone pulls R to about -0.5.
    #[test]
    fn parameter_uniform_saddle_is_uncorrelated() {
        let kind = ManifoldKind::Saddle;
        let pc = sample_manifold(kind, 3000, &Sampler::Uniform { bounds: Bounds::square(3.0) }, 3).unwrap();
        let (r, _) = density_volume_correlation(&pc, kind).unwrap();
        assert!(r.abs() < 0.3, "{r}");
    }
}
