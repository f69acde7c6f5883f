//! JSON run configuration. Every field has a default, so `{}` runs the
//! hemisphere demo; command-line flags override individual values.

use std::path::Path;

use geowarp_core::gae::GaeConfig;
use geowarp_core::geodesics::GeodesicConfig;
use geowarp_core::manifolds::{ManifoldKind, Sampler};
use geowarp_core::offmanifold::{DiscriminatorConfig, GpConfig};
use geowarp_core::transport::TransportConfig;
use geowarp_core::volgen::GenerationConfig;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::formats::read_json;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SamplerChoice {
    /// Uniform in parameter space.
    Uniform,
    /// Uniform with respect to surface area.
    Area,
    /// Gaussian in parameter space, mean (1, 1), covariance 2I.
    Imbalanced,
}

impl SamplerChoice {
    pub fn sampler(self, kind: ManifoldKind) -> Sampler {
        match self {
            SamplerChoice::Uniform => Sampler::Uniform { bounds: kind.default_bounds() },
            SamplerChoice::Area => Sampler::AreaUniform { bounds: kind.default_bounds() },
            SamplerChoice::Imbalanced => Sampler::imbalanced(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub kind: ManifoldKind,
    pub n: usize,
    pub sampler: SamplerChoice,
    pub noise: f64,
    /// Ambient dimension; above 3 the surface is zero-padded and rotated.
    pub dim: usize,
    /// Neighbours in the graph used for target distances.
    pub knn: usize,
    pub pairs: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            kind: ManifoldKind::Hemisphere,
            n: 500,
            sampler: SamplerChoice::Uniform,
            noise: 0.0,
            dim: 3,
            knn: 10,
            pairs: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Discriminator,
    Gp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    /// Warping scale of the extended encoder.
    pub beta: f64,
    pub discriminator: DiscriminatorConfig,
    pub gp: GpConfig,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            kind: ScorerKind::Discriminator,
            beta: 10.0,
            discriminator: DiscriminatorConfig::default(),
            gp: GpConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Test points used for DEMaP (pairwise cost is quadratic).
    pub demap_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { demap_points: 500 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Data seed; `--seed` also overrides every stage seed.
    pub seed: u64,
    pub data: DataConfig,
    pub gae: GaeConfig,
    pub scorer: ScorerConfig,
    pub generation: GenerationConfig,
    pub geodesic: GeodesicConfig,
    pub transport: TransportConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => read_json(p),
            None => Ok(RunConfig::default()),
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.gae.seed = seed;
        self.scorer.discriminator.seed = seed;
        self.scorer.gp.seed = seed;
        self.generation.seed = seed;
        self.geodesic.seed = seed;
        self.transport.seed = seed;
    }
}
