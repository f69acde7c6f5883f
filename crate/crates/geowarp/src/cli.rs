//! Command-line pipeline: synth, train, score, generate, geodesic, transport
//! and eval. Every command writes into one run directory together with an
//! echo of its effective configuration.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use geowarp_core::evalkit::{demap, density_volume_correlation, geodesic_length_mse};
use geowarp_core::gae::{train_gae, GaeModel};
use geowarp_core::geodesics::{fit_geodesic, max_score_on_curve, GeodesicFit};
use geowarp_core::manifolds::{
    analytic_geodesic_length, graph_distances, perturb, sample_manifold, DistanceMatrix, ManifoldKind, PointCloud,
};
use geowarp_core::diffnet::DiffMap;
use geowarp_core::offmanifold::{score_quantile, scores, train_discriminator, GpScorer, Scorer, WarpedEncoder};
use geowarp_core::rng;
use geowarp_core::transport::{empirical_wasserstein1, integrate_flow, train_transport, trajectory_slice};
use geowarp_core::volgen::generate;
use geowarp_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, GaeCheckpoint, ScorerCheckpoint, TransportCheckpoint};
use crate::config::{RunConfig, SamplerChoice, ScorerKind};
use crate::error::{Error, Result};
use crate::formats::{
    read_pairs, read_point_cloud, write_distance_matrix, write_json, write_pairs, write_point_cloud, write_table,
};

pub const RUN_DIR_ENV: &str = "GEOWARP_RUN_DIR";

#[derive(Debug, Parser)]
#[command(name = "geowarp", version, about = "Geometry-aware autoencoding, warped metrics, generation, geodesics and transport")]
pub struct Cli {
    /// Directory receiving every output of the command.
    #[arg(long, global = true, env = RUN_DIR_ENV, default_value = "geowarp-run")]
    pub run_dir: PathBuf,
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the data seed and every stage seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a toy manifold point cloud.
    Synth(SynthArgs),
    /// Train the distance-matching autoencoder.
    Train(TrainArgs),
    /// Fit an off-manifold deviation scorer.
    Score(ScoreArgs),
    /// Volume-guided Langevin generation.
    Generate(GenerateArgs),
    /// Fit geodesics between endpoint pairs under the warped metric.
    Geodesic(GeodesicArgs),
    /// Geodesic flow matching between two populations.
    Transport(TransportArgs),
    /// DEMaP, geodesic length MSE and density-volume correlation.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum KindArg {
    Hemisphere,
    Saddle,
    Paraboloid,
    Torus,
    Ellipsoid,
}

impl From<KindArg> for ManifoldKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Hemisphere => ManifoldKind::Hemisphere,
            KindArg::Saddle => ManifoldKind::Saddle,
            KindArg::Paraboloid => ManifoldKind::Paraboloid,
            KindArg::Torus => ManifoldKind::Torus,
            KindArg::Ellipsoid => ManifoldKind::Ellipsoid,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_enum)]
    pub sampler: Option<SamplerChoice>,
    /// Isotropic noise standard deviation.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Ambient dimension (>= 3).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Also write k-NN graph distances.
    #[arg(long)]
    pub distances: bool,
    /// Also write this many random endpoint pairs.
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Output file name inside the run directory.
    #[arg(long, default_value = "data.csv")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Precomputed target distances; k-NN graph distances otherwise.
    #[arg(long)]
    pub distances: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub scorer: Option<ScorerKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub scorer: PathBuf,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GeodesicArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub scorer: PathBuf,
    /// Endpoint index pairs (`i,j` CSV); random pairs otherwise.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Manifold the data was sampled from, for oracle lengths.
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TransportArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub scorer: PathBuf,
    /// Data defining the scorer threshold; the union of source and target otherwise.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Held-out test cloud for DEMaP.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    /// Generated cloud for the density-volume correlation.
    #[arg(long)]
    pub generated: Option<PathBuf>,
    /// Geodesic summary JSON for the length MSE.
    #[arg(long)]
    pub geodesics: Option<PathBuf>,
}

/// Score threshold used by the filter and the endpoint checks: the 0.9
/// quantile of the scores over `data`.
pub fn default_epsilon(scorer: &Scorer, data: &Matrix) -> Result<f64> {
    Ok(score_quantile(scorer, data, 0.9)?)
}

#[derive(Debug, Serialize)]
struct Echo<'a> {
    command: &'a str,
    inputs: Vec<(&'a str, String)>,
    config: &'a RunConfig,
}

fn echo(run_dir: &Path, command: &str, inputs: Vec<(&str, &Path)>, config: &RunConfig) -> Result<()> {
    let inputs = inputs.into_iter().map(|(k, p)| (k, p.display().to_string())).collect();
    write_json(&run_dir.join(format!("{command}.config.json")), &Echo { command, inputs, config })
}

fn kind_of(arg: Option<KindArg>, config: &RunConfig) -> ManifoldKind {
    arg.map(Into::into).unwrap_or(config.data.kind)
}

fn check_dim(expected: usize, cloud: &PointCloud) -> Result<()> {
    if cloud.dim() != expected {
        return Err(geowarp_core::Error::InputDim { expected, got: cloud.dim() }.into());
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    std::fs::create_dir_all(&cli.run_dir).map_err(|source| Error::Io { path: cli.run_dir.clone(), source })?;
    let dir = cli.run_dir.as_path();
    match cli.command {
        Command::Synth(a) => synth(dir, a, config),
        Command::Train(a) => train(dir, a, config),
        Command::Score(a) => score(dir, a, config),
        Command::Generate(a) => generate_cmd(dir, a, config),
        Command::Geodesic(a) => geodesic(dir, a, config),
        Command::Transport(a) => transport(dir, a, config),
        Command::Eval(a) => eval(dir, a, config),
    }
}

fn synth(dir: &Path, a: SynthArgs, mut config: RunConfig) -> Result<()> {
    let d = &mut config.data;
    if let Some(k) = a.kind {
        d.kind = k.into();
    }
    d.n = a.n.unwrap_or(d.n);
    d.sampler = a.sampler.unwrap_or(d.sampler);
    d.noise = a.noise.unwrap_or(d.noise);
    d.dim = a.dim.unwrap_or(d.dim);
    d.pairs = a.pairs.unwrap_or(d.pairs);
    if d.dim < 3 {
        return Err(Error::Usage(format!("--dim must be at least 3, got {}", d.dim)));
    }
    let base = sample_manifold(d.kind, d.n, &d.sampler.sampler(d.kind), config.seed)?;
    let cloud = if d.noise > 0.0 || d.dim > 3 { perturb(&base, d.noise, d.dim, config.seed)? } else { base };
    write_point_cloud(&dir.join(&a.out), &cloud)?;
    if a.distances {
        write_distance_matrix(&dir.join("distances.csv"), &graph_distances(&cloud, d.knn)?)?;
    }
    if a.pairs.is_some() {
        let mut r = rng::stream(config.seed, 0x9a1);
        let pairs: Vec<(usize, usize)> = (0..d.pairs)
            .map(|_| {
                let p = rng::permutation(&mut r, cloud.len());
                (p[0], p[1 % p.len()])
            })
            .collect();
        write_pairs(&dir.join("pairs.csv"), &pairs)?;
    }
    echo(dir, "synth", vec![], &config)?;
    eprintln!("wrote {} points in R^{} to {}", cloud.len(), cloud.dim(), dir.join(&a.out).display());
    Ok(())
}

fn train(dir: &Path, a: TrainArgs, mut config: RunConfig) -> Result<()> {
    config.gae.epochs = a.epochs.unwrap_or(config.gae.epochs);
    let data = read_point_cloud(&a.data, config.data.kind)?;
    let d = match &a.distances {
        Some(p) => crate::formats::read_distance_matrix(p)?,
        None => graph_distances(&data, config.data.knn)?,
    };
    let trained = train_gae(&data, &d, &config.gae)?;
    checkpoint::save(&dir.join("gae.json"), &GaeCheckpoint::from_model(&trained.model))?;
    let header: Vec<String> =
        ["epoch", "train_total", "val_total", "train_dist", "train_recon"].iter().map(|s| s.to_string()).collect();
    let rows =
        trained.history.iter().map(|e| [e.epoch as f64, e.train_total, e.val_total, e.train_dist, e.train_recon]);
    write_table(&dir.join("history.csv"), &header, rows)?;
    let mut inputs = vec![("data", a.data.as_path())];
    if let Some(p) = &a.distances {
        inputs.push(("distances", p.as_path()));
    }
    echo(dir, "train", inputs, &config)?;
    eprintln!("trained {} epochs, best epoch {}", trained.history.len(), trained.best_epoch);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreSummary {
    epsilon: f64,
    mean_s: f64,
    best_epoch: Option<usize>,
}

fn score(dir: &Path, a: ScoreArgs, mut config: RunConfig) -> Result<()> {
    config.scorer.kind = a.scorer.unwrap_or(config.scorer.kind);
    if let Some(e) = a.epochs {
        config.scorer.discriminator.epochs = e;
    }
    let data = read_point_cloud(&a.data, config.data.kind)?;
    let (scorer, best_epoch) = match config.scorer.kind {
        ScorerKind::Discriminator => {
            let t = train_discriminator(&data, &config.scorer.discriminator)?;
            (Scorer::Discriminator(t.discriminator), Some(t.best_epoch))
        }
        ScorerKind::Gp => (Scorer::Gp(GpScorer::fit(&data.points, &config.scorer.gp)?), None),
    };
    checkpoint::save(&dir.join("scorer.json"), &ScorerCheckpoint::from_scorer(&scorer))?;
    let s = scores(&scorer, &data.points)?;
    write_table(&dir.join("scores.csv"), &["s".to_string()], s.iter().map(|v| [*v]))?;
    let summary = ScoreSummary {
        epsilon: default_epsilon(&scorer, &data.points)?,
        mean_s: s.iter().sum::<f64>() / s.len() as f64,
        best_epoch,
    };
    write_json(&dir.join("score_summary.json"), &summary)?;
    echo(dir, "score", vec![("data", a.data.as_path())], &config)?;
    eprintln!("scorer fitted; epsilon (0.9 quantile) = {:.6e}", summary.epsilon);
    Ok(())
}

fn load_models(model: &Path, scorer: &Path, data: &PointCloud) -> Result<(GaeModel, Scorer)> {
    let gae = checkpoint::load_gae(model)?;
    let s = checkpoint::load_scorer(scorer)?;
    check_dim(gae.input_dim(), data)?;
    check_dim(s.input_dim(), data)?;
    Ok((gae, s))
}

#[derive(Debug, Serialize)]
struct GenerationReport<'a> {
    acceptance_fraction: f64,
    mean_s_per_checkpoint: &'a [(usize, f64)],
    eta: f64,
    epsilon: f64,
    warning: &'a Option<String>,
    n_generated: usize,
    config: &'a RunConfig,
}

fn generate_cmd(dir: &Path, a: GenerateArgs, mut config: RunConfig) -> Result<()> {
    let g = &mut config.generation;
    g.n_samples = a.n_samples.unwrap_or(g.n_samples);
    g.n_steps = a.steps.unwrap_or(g.n_steps);
    let data = read_point_cloud(&a.data, config.data.kind)?;
    let (gae, scorer) = load_models(&a.model, &a.scorer, &data)?;
    let out = generate(&gae.encoder, &scorer, &data, &config.generation)?;
    write_point_cloud(&dir.join("generated.csv"), &out.samples)?;
    let diag = &out.diagnostics;
    if let Some(w) = &diag.warning {
        eprintln!("warning: {w}");
    }
    write_json(
        &dir.join("diagnostics.json"),
        &GenerationReport {
            acceptance_fraction: diag.acceptance_fraction,
            mean_s_per_checkpoint: &diag.mean_s_per_checkpoint,
            eta: diag.eta,
            epsilon: diag.epsilon,
            warning: &diag.warning,
            n_generated: out.samples.len(),
            config: &config,
        },
    )?;
    echo(dir, "generate", vec![("data", &a.data), ("model", &a.model), ("scorer", &a.scorer)], &config)?;
    eprintln!("generated {} of {} chains", out.samples.len(), config.generation.n_samples);
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicSummary {
    pub pair: (usize, usize),
    /// Latent length under the warped metric.
    pub length: f64,
    /// Euclidean polyline length of the curve in the data space.
    pub ambient_length: f64,
    pub energy: f64,
    pub max_s_on_curve: f64,
    pub oracle_length: Option<f64>,
}

/// Fits one geodesic and summarizes it.
pub fn summarize_geodesic(
    fit: &GeodesicFit,
    pair: (usize, usize),
    scorer: &Scorer,
    oracle: Option<f64>,
) -> Result<GeodesicSummary> {
    Ok(GeodesicSummary {
        pair,
        length: fit.length,
        ambient_length: fit.curve.ambient_length()?,
        energy: fit.energy,
        max_s_on_curve: max_score_on_curve(&fit.curve, scorer)?,
        oracle_length: oracle,
    })
}

fn geodesic(dir: &Path, a: GeodesicArgs, mut config: RunConfig) -> Result<()> {
    config.scorer.beta = a.beta.unwrap_or(config.scorer.beta);
    config.geodesic.steps = a.steps.unwrap_or(config.geodesic.steps);
    let kind = kind_of(a.kind, &config);
    let data = read_point_cloud(&a.data, kind)?;
    let (gae, scorer) = load_models(&a.model, &a.scorer, &data)?;
    let pairs = match &a.pairs {
        Some(p) => read_pairs(p)?,
        None => {
            let mut r = rng::stream(config.seed, 0x9a1);
            (0..config.data.pairs)
                .map(|_| {
                    let p = rng::permutation(&mut r, data.len());
                    (p[0], p[1 % p.len()])
                })
                .collect()
        }
    };
    if let Some(&(i, j)) = pairs.iter().find(|(i, j)| *i >= data.len() || *j >= data.len()) {
        return Err(Error::Usage(format!("pair ({i}, {j}) indexes past {} points", data.len())));
    }
    // endpoints must lie within twice the filter threshold
    let threshold = 2.0 * default_epsilon(&scorer, &data.points)?;
    let warped = WarpedEncoder::new(gae.encoder, scorer, config.scorer.beta)?;
    let mut summaries = Vec::with_capacity(pairs.len());
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let fit = fit_geodesic(data.point(i), data.point(j), &warped, threshold, &config.geodesic)?;
        let ts = fit.curve.times();
        let pts = fit.curve.points()?;
        let header: Vec<String> = std::iter::once("t".to_string()).chain((0..data.dim()).map(|d| format!("x{d}"))).collect();
        let rows = ts.iter().enumerate().map(|(m, t)| {
            let mut r = vec![*t];
            r.extend_from_slice(pts.row(m));
            r
        });
        write_table(&dir.join(format!("geodesic_{k:03}.csv")), &header, rows)?;
        let oracle = if data.rotation.is_none() && data.dim() == 3 && kind != ManifoldKind::None {
            analytic_geodesic_length(kind, data.point(i), data.point(j)).ok().flatten()
        } else {
            None
        };
        summaries.push(summarize_geodesic(&fit, (i, j), &warped.scorer, oracle)?);
    }
    write_json(&dir.join("geodesics.json"), &summaries)?;
    let mut inputs = vec![("data", a.data.as_path()), ("model", &a.model), ("scorer", &a.scorer)];
    if let Some(p) = &a.pairs {
        inputs.push(("pairs", p.as_path()));
    }
    echo(dir, "geodesic", inputs, &config)?;
    eprintln!("fitted {} geodesics", summaries.len());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct TransportMetrics {
    #[serde(rename = "final_W1")]
    final_w1: f64,
    mean_max_s_on_trajectory: f64,
    epsilon: f64,
}

fn transport(dir: &Path, a: TransportArgs, mut config: RunConfig) -> Result<()> {
    config.scorer.beta = a.beta.unwrap_or(config.scorer.beta);
    config.transport.steps = a.steps.unwrap_or(config.transport.steps);
    let src = read_point_cloud(&a.source, config.data.kind)?;
    let tgt = read_point_cloud(&a.target, config.data.kind)?;
    let (gae, scorer) = load_models(&a.model, &a.scorer, &src)?;
    check_dim(src.dim(), &tgt)?;
    let reference = match &a.data {
        Some(p) => read_point_cloud(p, config.data.kind)?.points,
        None => Matrix::vstack(&[&src.points, &tgt.points])?,
    };
    let epsilon = default_epsilon(&scorer, &reference)?;
    let warped = WarpedEncoder::new(gae.encoder, scorer, config.scorer.beta)?;
    let trained = train_transport(&src.points, &tgt.points, &warped, &config.transport)?;
    let steps = config.transport.euler_steps;
    let traj = integrate_flow(&trained.field, &src.points, steps)?;

    let mut rows = Vec::with_capacity(traj.len() * (steps + 1));
    let mut max_s = Vec::with_capacity(traj.len());
    for (id, t) in traj.iter().enumerate() {
        let s = scores(&warped.scorer, t)?;
        max_s.push(s.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        for k in 0..=steps {
            let mut r = vec![id as f64, k as f64 / steps as f64];
            r.extend_from_slice(t.row(k));
            rows.push(r);
        }
    }
    let header: Vec<String> =
        ["trajectory_id", "t"].iter().map(|s| s.to_string()).chain((0..src.dim()).map(|d| format!("x{d}"))).collect();
    write_table(&dir.join("trajectories.csv"), &header, rows)?;
    let end = trajectory_slice(&traj, steps)?;
    let m = end.rows().min(tgt.len());
    let final_w1 = empirical_wasserstein1(&subsample(&end, m, config.seed), &subsample(&tgt.points, m, config.seed))?;
    let metrics = TransportMetrics {
        final_w1,
        mean_max_s_on_trajectory: max_s.iter().sum::<f64>() / max_s.len() as f64,
        epsilon,
    };
    write_json(&dir.join("transport_metrics.json"), &metrics)?;
    checkpoint::save(
        &dir.join("transport.json"),
        &TransportCheckpoint::new(&trained.field, &trained.bump, config.transport.n_segments),
    )?;
    echo(dir, "transport", vec![("source", &a.source), ("target", &a.target), ("model", &a.model), ("scorer", &a.scorer)], &config)?;
    eprintln!("final W1 {:.4e}", metrics.final_w1);
    Ok(())
}

/// Seeded subsample of `m` rows (all rows, in order, when `m` covers them).
pub fn subsample(x: &Matrix, m: usize, seed: u64) -> Matrix {
    if m >= x.rows() {
        return x.clone();
    }
    let mut idx = rng::permutation(&mut rng::stream(seed, 0x5ab), x.rows());
    idx.truncate(m);
    idx.sort_unstable();
    x.select_rows(&idx)
}

#[derive(Debug, Serialize)]
struct Metrics<'a> {
    demap: f64,
    length_mse: Option<f64>,
    #[serde(rename = "volume_R")]
    volume_r: Option<f64>,
    #[serde(rename = "volume_R2")]
    volume_r2: Option<f64>,
    config: &'a RunConfig,
    seed: u64,
}

/// Ground-truth distances: analytic where the surface has them, k-NN graph
/// shortest paths otherwise.
pub fn ground_truth_distances(cloud: &PointCloud, knn: usize) -> Result<DistanceMatrix> {
    let n = cloud.len();
    if cloud.rotation.is_none() && cloud.dim() == 3 {
        let mut m = Matrix::zeros(n, n);
        let mut analytic = true;
        'outer: for i in 0..n {
            for j in i + 1..n {
                match analytic_geodesic_length(cloud.kind, cloud.point(i), cloud.point(j)) {
                    Ok(Some(l)) => {
                        m[(i, j)] = l;
                        m[(j, i)] = l;
                    }
                    _ => {
                        analytic = false;
                        break 'outer;
                    }
                }
            }
        }
        if analytic {
            return Ok(DistanceMatrix::new(m)?);
        }
    }
    Ok(graph_distances(cloud, knn)?)
}

fn eval(dir: &Path, a: EvalArgs, config: RunConfig) -> Result<()> {
    let kind = kind_of(a.kind, &config);
    let gae = checkpoint::load_gae(&a.model)?;
    let test = read_point_cloud(&a.data, kind)?;
    if test.dim() != gae.input_dim() {
        return Err(geowarp_core::Error::InputDim { expected: gae.input_dim(), got: test.dim() }.into());
    }
    let n = test.len().min(config.eval.demap_points);
    let test = test.select(&(0..n).collect::<Vec<_>>());
    let truth = ground_truth_distances(&test, config.data.knn)?;
    let dm = demap(&gae.encoder, &test, &truth)?;

    let (volume_r, volume_r2) = match &a.generated {
        Some(p) => {
            let g = read_point_cloud(p, kind)?;
            let (r, r2) = density_volume_correlation(&g, kind)?;
            (Some(r), Some(r2))
        }
        None => (None, None),
    };
    let length_mse = match &a.geodesics {
        Some(p) => {
            let s: Vec<GeodesicSummary> = crate::formats::read_json(p)?;
            let with: Vec<&GeodesicSummary> = s.iter().filter(|g| g.oracle_length.is_some()).collect();
            if with.is_empty() {
                None
            } else {
                let pred: Vec<f64> = with.iter().map(|g| g.ambient_length).collect();
                let oracle: Vec<f64> = with.iter().filter_map(|g| g.oracle_length).collect();
                Some(geodesic_length_mse(&pred, &oracle)?)
            }
        }
        None => None,
    };
    write_json(&dir.join("metrics.json"), &Metrics { demap: dm, length_mse, volume_r, volume_r2, config: &config, seed: config.seed })?;
    let mut inputs = vec![("model", a.model.as_path()), ("data", &a.data)];
    inputs.extend(a.generated.as_deref().map(|p| ("generated", p)));
    inputs.extend(a.geodesics.as_deref().map(|p| ("geodesics", p)));
    echo(dir, "eval", inputs, &config)?;
    eprintln!("demap {dm:.4}");
    Ok(())
}
