use geowarp_core::manifolds::{sample_manifold, ManifoldKind, Sampler};
use geowarp_core::offmanifold::{scores, GpScorer};
use geowarp_core::Matrix;

#[test]
fn noiseless_gp_variance_vanishes_on_its_training_set() {
    let kind = ManifoldKind::Hemisphere;
    let cloud = sample_manifold(kind, 50, &Sampler::Uniform { bounds: kind.default_bounds() }, 4).unwrap();
    let gp = GpScorer::new(cloud.points.clone(), 0.3, 0.0).unwrap();
    let s = scores(&gp, &cloud.points).unwrap();
    assert!(s.iter().all(|v| *v < 1e-6), "max s = {}", s.iter().cloned().fold(0.0, f64::max));
    let far = Matrix::from_rows(&[[0.0, 0.0, 3.0]]).unwrap();
    assert!(scores(&gp, &far).unwrap()[0] > 0.99);
}
