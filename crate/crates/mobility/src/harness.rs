//! Configuration-driven experiment runner: ingest through evaluation with
//! persisted, replayable artifacts, plus the sweep axes (batch size,
//! sampling strategy, feature ablations).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::{
    earliest_local_date, enrich, temporal_split, EnrichedTrajectory, SplitDataset,
};
use crate::fusion::{fused_predict, gate_examples, train_gate, FusionGate, GATE_EPOCHS, GATE_LR};
use crate::grid::{build_grid, GridSpec};
use crate::ingest::{
    build_trajectories, dataset_stats, parse_checkins, CheckIn, ColumnSchema, DatasetStats,
    Trajectory,
};
use crate::metrics::{aggregate, EvalReport, GeoBleuParams, UnitScore};
use crate::model::{
    build_windows, hv_predict, predict_sequence, train as train_model, Arch, CandidateSource,
    FeatureEncoder, ModelConfig, PredictionCandidate, SeqNet, TargetTime, Vocab,
};
use crate::sampling::{
    plan_cluster_ordered, plan_sequential, plan_stratified, BatchSchedule, Strategy,
};
use crate::semantics::{build_profiles, cluster_users, Clustering, ClusterFeature, EmbeddingProvider};

/// Default data directory consulted when the configured dataset path is
/// relative and does not exist as given.
pub const DATA_DIR_ENV: &str = "MOBILITY_DATA_DIR";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error(transparent)]
    Semantics(#[from] crate::semantics::SemanticsError),
    #[error(transparent)]
    Sampling(#[from] crate::sampling::SamplingError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("replay mismatch: {0}")]
    Replay(String),
}

type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub city: String,
    /// "tsv" or "csv".
    pub format: String,
    pub out_dir: String,
    pub rows: usize,
    pub cols: usize,
    pub t_split: i64,
    pub window_days: i64,
    /// "hv", "lstm", or "transformer".
    pub model: String,
    /// "sequential", "cluster-ordered", or "stratified".
    pub strategy: String,
    pub ext_spatiotemporal: bool,
    pub user_semantic: bool,
    pub fusion: bool,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub window_len: usize,
    pub stride: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub geo_bleu_n: usize,
    pub geo_bleu_beta: f64,
    pub seeds: Vec<u64>,
    /// Fraction of users kept (desk-scale control).
    pub subsample: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub embedding_file: Option<String>,
    pub embedding_dim: usize,
    pub latent_dim: usize,
    pub top_k_pois: usize,
    pub ae_epochs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: String::new(),
            city: "nyc".into(),
            format: "tsv".into(),
            out_dir: "runs".into(),
            rows: 200,
            cols: 200,
            t_split: 250,
            window_days: 300,
            model: "transformer".into(),
            strategy: "stratified".into(),
            ext_spatiotemporal: false,
            user_semantic: false,
            fusion: false,
            d_model: 64,
            layers: 2,
            heads: 4,
            window_len: 128,
            stride: 64,
            lr: 2e-5,
            epochs: 10,
            batch_size: 4,
            geo_bleu_n: 3,
            geo_bleu_beta: 0.5,
            seeds: vec![1, 2, 3],
            subsample: 0.1,
            k_min: 2,
            k_max: 15,
            embedding_file: None,
            embedding_dim: 512,
            latent_dim: 512,
            top_k_pois: 10,
            ae_epochs: 20,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(HarnessError::Config(msg.to_string()));
        if self.seeds.is_empty() {
            return fail("seeds must be non-empty");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return fail("subsample must be in (0, 1]");
        }
        if self.rows < 1 || self.cols < 1 {
            return fail("grid must have at least one row and column");
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return fail("heads must divide d_model");
        }
        if self.k_min < 2 || self.k_max < self.k_min {
            return fail("need 2 <= k_min <= k_max");
        }
        self.arch()?;
        self.strategy()?;
        self.schema()?;
        let path = self.resolved_dataset();
        if !path.exists() {
            return Err(HarnessError::Config(format!(
                "dataset not found: {}",
                path.display()
            )));
        }
        Ok(())
    }

    /// "hv" has no architecture; model training is skipped.
    pub fn arch(&self) -> Result<Option<Arch>> {
        match self.model.as_str() {
            "hv" => Ok(None),
            other => other
                .parse::<Arch>()
                .map(Some)
                .map_err(HarnessError::Config),
        }
    }

    pub fn strategy(&self) -> Result<Strategy> {
        self.strategy.parse().map_err(HarnessError::Config)
    }

    pub fn schema(&self) -> Result<ColumnSchema> {
        match self.format.as_str() {
            "tsv" => Ok(ColumnSchema::foursquare_tsv()),
            "csv" => Ok(ColumnSchema::foursquare_csv()),
            other => Err(HarnessError::Config(format!("unknown format '{other}'"))),
        }
    }

    pub fn geo_bleu_params(&self) -> GeoBleuParams {
        GeoBleuParams {
            max_n: self.geo_bleu_n,
            beta_per_km: self.geo_bleu_beta,
        }
    }

    /// Relative, non-existing paths fall back under `MOBILITY_DATA_DIR`.
    pub fn resolved_dataset(&self) -> PathBuf {
        let direct = PathBuf::from(&self.dataset);
        if direct.exists() || direct.is_absolute() {
            return direct;
        }
        match std::env::var(DATA_DIR_ENV) {
            Ok(dir) => PathBuf::from(dir).join(&self.dataset),
            Err(_) => direct,
        }
    }

    /// Digest of the configuration; combined with the seed it uniquely
    /// identifies a run. The output directory is excluded so a replay into
    /// a scratch location reproduces the original fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.out_dir = String::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }

    pub fn run_fingerprint(&self, seed: u64) -> String {
        let mut h = Sha256::new();
        h.update(self.fingerprint().as_bytes());
        h.update(b":");
        h.update(seed.to_le_bytes());
        hex(&h.finalize())
    }

    fn model_config(&self, arch: Arch, seed: u64, semantic_dim: usize) -> ModelConfig {
        ModelConfig {
            arch,
            d_model: self.d_model,
            layers: self.layers,
            heads: self.heads,
            window_len: self.window_len,
            stride: self.stride,
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            flags: crate::model::FeatureFlags {
                ext_spatiotemporal: self.ext_spatiotemporal,
                user_semantic: self.user_semantic,
                fusion: self.fusion,
            },
            semantic_dim,
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// `run.json`: enough provenance to replay the run exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub fingerprint: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub city: String,
    pub model: String,
    pub strategy: String,
    pub seed: u64,
    pub geo_bleu: f64,
    pub accuracy: f64,
    pub skipped_users: usize,
    /// Fraction of fused targets the gate routed to the model side.
    pub routed_model_frac: Option<f64>,
    pub fingerprint: String,
}

pub struct SeedRun {
    pub report: EvalReport,
    pub summary: RunSummary,
    pub dir: PathBuf,
}

/// Load, subsample, and group the configured dataset. Subsampling keeps a
/// seeded fraction of users while preserving first-appearance order.
pub fn load_trajectories(config: &ExperimentConfig, seed: u64) -> Result<Vec<Trajectory>> {
    let file = fs::File::open(config.resolved_dataset())?;
    let outcome = parse_checkins(BufReader::new(file), &config.schema()?)?;
    let mut trajectories = build_trajectories(&outcome.checkins);
    if config.subsample < 1.0 {
        let mut ids: Vec<u64> = trajectories.iter().map(|t| t.user_id).collect();
        ids.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ids.shuffle(&mut rng);
        let keep = ((ids.len() as f64 * config.subsample).ceil() as usize).max(1);
        let kept: BTreeSet<u64> = ids.into_iter().take(keep).collect();
        trajectories.retain(|t| kept.contains(&t.user_id));
    }
    Ok(trajectories)
}

pub fn stats(config: &ExperimentConfig, top_n: usize) -> Result<DatasetStats> {
    let trajectories = load_trajectories(config, config.seeds[0])?;
    Ok(dataset_stats(&trajectories, top_n))
}

/// Ingest through the temporal split; the shared front of every run.
pub struct Prepared {
    pub spec: GridSpec,
    pub day0: chrono::NaiveDate,
    pub split: SplitDataset,
    /// Raw check-ins restricted to train days, for profile building.
    pub raw_train: Vec<Trajectory>,
}

pub fn prepare(config: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let trajectories = load_trajectories(config, seed)?;
    let points: Vec<(f64, f64)> = trajectories
        .iter()
        .flat_map(|t| t.points.iter().map(|p| (p.lat, p.lon)))
        .collect();
    let spec = build_grid(&points, config.rows, config.cols)?;
    let day0 = earliest_local_date(&trajectories)
        .ok_or_else(|| HarnessError::Config("dataset has no check-ins".into()))?;
    let enriched: Vec<EnrichedTrajectory> = trajectories
        .iter()
        .map(|t| enrich(t, &spec, day0))
        .collect();
    let split = temporal_split(&enriched, config.t_split, config.window_days);
    let raw_train: Vec<Trajectory> = trajectories
        .iter()
        .map(|t| Trajectory {
            user_id: t.user_id,
            points: t
                .points
                .iter()
                .filter(|p| {
                    let d = (p.local_time.date_naive() - day0).num_days();
                    (0..config.t_split).contains(&d)
                })
                .cloned()
                .collect::<Vec<CheckIn>>(),
        })
        .filter(|t| !t.points.is_empty())
        .collect();
    Ok(Prepared {
        spec,
        day0,
        split,
        raw_train,
    })
}

/// Profiles + clustering over train-period behavior. Falls back to a single
/// cluster when there are too few users for the configured K range.
pub struct SemanticArtifacts {
    pub clustering: Clustering,
    /// user_id -> latent semantic vector.
    pub profiles: BTreeMap<u64, Vec<f64>>,
}

pub fn build_semantics(
    config: &ExperimentConfig,
    raw_train: &[Trajectory],
    seed: u64,
) -> Result<SemanticArtifacts> {
    let provider = match &config.embedding_file {
        Some(path) => EmbeddingProvider::from_reader(
            BufReader::new(fs::File::open(path)?),
            config.embedding_dim,
            seed,
        )?,
        None => EmbeddingProvider::fallback(config.embedding_dim, seed),
    };
    let (mut profiles, _ae) = build_profiles(
        raw_train,
        config.top_k_pois,
        &provider,
        config.latent_dim,
        config.ae_epochs,
        seed,
    )?;
    let clustering = match cluster_users(
        &mut profiles,
        config.k_min..=config.k_max,
        seed,
        ClusterFeature::Centroid,
    ) {
        Ok(c) => c,
        Err(crate::semantics::SemanticsError::TooFewUsers { .. }) => Clustering {
            k: 1,
            assignments: profiles.iter().map(|p| (p.user_id, 0)).collect(),
            centers: vec![(0.0, 0.0)],
            silhouette: None,
            degenerate: true,
        },
        Err(e) => return Err(e.into()),
    };
    let profiles = profiles
        .into_iter()
        .map(|p| (p.user_id, p.semantic_vector))
        .collect();
    Ok(SemanticArtifacts {
        clustering,
        profiles,
    })
}

fn plan_schedule(
    strategy: Strategy,
    samples: &[crate::sampling::SampleRef],
    clustering: Option<&Clustering>,
    batch_size: usize,
    epochs: usize,
    seed: u64,
) -> Result<BatchSchedule> {
    Ok(match strategy {
        Strategy::Sequential => plan_sequential(samples, batch_size, epochs)?,
        Strategy::ClusterOrdered => plan_cluster_ordered(
            samples,
            clustering.expect("clustering required for cluster-ordered"),
            batch_size,
            epochs,
        )?,
        Strategy::Stratified => plan_stratified(
            samples,
            clustering.expect("clustering required for stratified"),
            batch_size,
            epochs,
            seed,
        )?,
    })
}

/// Score aligned per-target predictions at (user, day) granularity against
/// the true check-in coordinates and cells.
pub fn score_predictions(
    split: &SplitDataset,
    predictions: &BTreeMap<u64, Vec<PredictionCandidate>>,
    params: &GeoBleuParams,
    fingerprint: String,
) -> Result<EvalReport> {
    let mut per_unit = Vec::new();
    let mut skipped = 0usize;
    for test in &split.test {
        if test.points.is_empty() {
            skipped += 1;
            continue;
        }
        let preds = match predictions.get(&test.user_id) {
            Some(p) if !p.is_empty() => p,
            _ => {
                skipped += 1;
                continue;
            }
        };
        assert_eq!(preds.len(), test.points.len(), "one candidate per target");
        let mut day_start = 0;
        while day_start < test.points.len() {
            let day = test.points[day_start].day_index;
            let day_end = day_start
                + test.points[day_start..]
                    .iter()
                    .take_while(|p| p.day_index == day)
                    .count();
            let pred_coords: Vec<(f64, f64)> = preds[day_start..day_end]
                .iter()
                .map(|p| (p.lat, p.lon))
                .collect();
            let ref_coords: Vec<(f64, f64)> = test.points[day_start..day_end]
                .iter()
                .map(|p| (p.lat, p.lon))
                .collect();
            let gb = crate::metrics::geo_bleu(&pred_coords, &ref_coords, params)?;
            let matches = preds[day_start..day_end]
                .iter()
                .zip(&test.points[day_start..day_end])
                .filter(|(p, r)| p.cell == r.cell)
                .count();
            per_unit.push(UnitScore {
                user_id: test.user_id,
                day,
                geo_bleu: gb,
                matches,
                total: day_end - day_start,
            });
            day_start = day_end;
        }
    }
    Ok(aggregate(per_unit, skipped, fingerprint)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// One seeded end-to-end run, artifacts persisted under
/// `out_dir/seed_<seed>/`.
pub fn run_single(config: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let dir = PathBuf::from(&config.out_dir).join(format!("seed_{seed}"));
    fs::create_dir_all(&dir)?;
    match run_single_inner(config, seed, &dir) {
        Ok(run) => Ok(run),
        Err(e) => {
            // retain partial artifacts alongside a failure marker
            let _ = fs::write(dir.join("FAILED"), format!("{e}\n"));
            Err(e)
        }
    }
}

fn run_single_inner(config: &ExperimentConfig, seed: u64, dir: &Path) -> Result<SeedRun> {
    let fingerprint = config.run_fingerprint(seed);
    write_json(
        &dir.join("run.json"),
        &RunRecord {
            config: config.clone(),
            seed,
            fingerprint: fingerprint.clone(),
        },
    )?;

    let prepared = prepare(config, seed)?;
    write_json(&dir.join("grid.json"), &prepared.spec)?;

    let arch = config.arch()?;
    let strategy = config.strategy()?;
    let needs_semantics = arch.is_some()
        && (strategy != Strategy::Sequential || config.user_semantic);
    let semantics = if needs_semantics {
        let s = build_semantics(config, &prepared.raw_train, seed)?;
        write_json(&dir.join("clustering.json"), &s.clustering)?;
        Some(s)
    } else {
        None
    };

    let mut routed_model_frac = None;
    let predictions: BTreeMap<u64, Vec<PredictionCandidate>> = match arch {
        None => {
            // Historical-visit baseline: no training.
            let by_user_train: BTreeMap<u64, &EnrichedTrajectory> =
                prepared.split.train.iter().map(|t| (t.user_id, t)).collect();
            prepared
                .split
                .test
                .iter()
                .filter(|t| !t.points.is_empty())
                .map(|test| {
                    let targets: Vec<TargetTime> =
                        test.points.iter().map(TargetTime::of_point).collect();
                    let train = by_user_train
                        .get(&test.user_id)
                        .map(|t| t.points.as_slice())
                        .unwrap_or(&[]);
                    (test.user_id, hv_predict(train, &targets, &prepared.spec))
                })
                .collect()
        }
        Some(arch) => {
            let vocab = Vocab::from_train(&prepared.spec, &prepared.split.train);
            let fenc = FeatureEncoder::fit(&prepared.split.train);
            write_json(&dir.join("encoder.json"), &fenc)?;
            let semantic_dim = semantics
                .as_ref()
                .and_then(|s| s.profiles.values().next())
                .map(|v| v.len())
                .unwrap_or(config.latent_dim);
            let mcfg = config.model_config(arch, seed, semantic_dim);

            let windows = build_windows(&prepared.split.train, mcfg.window_len, mcfg.stride);
            let samples = windows.sample_refs();
            let schedule = plan_schedule(
                strategy,
                &samples,
                semantics.as_ref().map(|s| &s.clustering),
                config.batch_size,
                config.epochs,
                seed,
            )?;
            fs::write(dir.join("schedule.csv"), schedule.to_lines())?;

            let profile_map = semantics.as_ref().map(|s| &s.profiles);
            let outcome = train_model(
                mcfg,
                &prepared.split.train,
                &windows,
                &schedule,
                &fenc,
                &vocab,
                if config.user_semantic { profile_map } else { None },
            )?;
            let mut curve = String::from("step,loss\n");
            for (i, l) in outcome.loss_curve.iter().enumerate() {
                curve.push_str(&format!("{i},{l}\n"));
            }
            fs::write(dir.join("loss_curve.csv"), curve)?;
            write_json(&dir.join("checkpoint.json"), &outcome.net)?;

            let gate = if config.fusion {
                let mut examples = Vec::new();
                for t in &prepared.split.train {
                    let profile = profile_lookup(config, semantics.as_ref(), t.user_id);
                    examples.extend(gate_examples(
                        &outcome.net,
                        &t.points,
                        profile,
                        &fenc,
                        &prepared.spec,
                    ));
                }
                let (gate, gate_curve) =
                    train_gate(&examples, 2 * config.d_model, GATE_LR, GATE_EPOCHS);
                write_json(&dir.join("gate.json"), &gate)?;
                let mut curve = String::from("epoch,loss\n");
                for (i, l) in gate_curve.iter().enumerate() {
                    curve.push_str(&format!("{i},{l}\n"));
                }
                fs::write(dir.join("gate_loss.csv"), curve)?;
                Some(gate)
            } else {
                None
            };

            let preds = predict_all(
                config,
                &outcome.net,
                gate.as_ref(),
                semantics.as_ref(),
                &prepared,
                &fenc,
            );
            if gate.is_some() {
                let (model_routed, total) = preds
                    .values()
                    .flatten()
                    .fold((0usize, 0usize), |(m, n), p| {
                        (m + (p.source == CandidateSource::Model) as usize, n + 1)
                    });
                routed_model_frac = Some(if total == 0 {
                    0.0
                } else {
                    model_routed as f64 / total as f64
                });
            }
            preds
        }
    };

    let report = score_predictions(
        &prepared.split,
        &predictions,
        &config.geo_bleu_params(),
        fingerprint.clone(),
    )?;
    write_json(&dir.join("report.json"), &report)?;

    let summary = RunSummary {
        city: config.city.clone(),
        model: config.model.clone(),
        strategy: config.strategy.clone(),
        seed,
        geo_bleu: report.geo_bleu,
        accuracy: report.accuracy,
        skipped_users: report.skipped_users,
        routed_model_frac,
        fingerprint,
    };
    write_json(&dir.join("summary.json"), &summary)?;

    Ok(SeedRun {
        report,
        summary,
        dir: dir.to_path_buf(),
    })
}

fn profile_lookup<'a>(
    config: &ExperimentConfig,
    semantics: Option<&'a SemanticArtifacts>,
    user_id: u64,
) -> Option<&'a [f64]> {
    if !config.user_semantic {
        return None;
    }
    semantics
        .and_then(|s| s.profiles.get(&user_id))
        .map(|v| v.as_slice())
}

fn predict_all(
    config: &ExperimentConfig,
    net: &SeqNet,
    gate: Option<&FusionGate>,
    semantics: Option<&SemanticArtifacts>,
    prepared: &Prepared,
    fenc: &FeatureEncoder,
) -> BTreeMap<u64, Vec<PredictionCandidate>> {
    let by_user_train: BTreeMap<u64, &EnrichedTrajectory> =
        prepared.split.train.iter().map(|t| (t.user_id, t)).collect();
    prepared
        .split
        .test
        .iter()
        .filter(|t| !t.points.is_empty())
        .map(|test| {
            let targets: Vec<TargetTime> = test.points.iter().map(TargetTime::of_point).collect();
            let history = by_user_train
                .get(&test.user_id)
                .map(|t| t.points.as_slice())
                .unwrap_or(&[]);
            let profile = profile_lookup(config, semantics, test.user_id);
            let preds = match gate {
                Some(g) => fused_predict(net, g, history, &targets, profile, fenc, &prepared.spec),
                None => predict_sequence(net, history, &targets, profile, fenc, &prepared.spec),
            };
            (test.user_id, preds)
        })
        .collect()
}

/// Run every configured seed; returns per-seed results in seed order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<SeedRun>> {
    config.validate()?;
    config.seeds.iter().map(|&s| run_single(config, s)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    BatchSize(Vec<usize>),
    Sampling,
    Ablation,
}

impl SweepAxis {
    fn name(&self) -> &'static str {
        match self {
            SweepAxis::BatchSize(_) => "batch_size",
            SweepAxis::Sampling => "sampling",
            SweepAxis::Ablation => "ablation",
        }
    }
}

/// The paper reports no numbers for LSTM variants beyond the baseline
/// feature set; those ablation cells are marked NA in the sweep table.
fn paper_na(axis: &SweepAxis, config: &ExperimentConfig, value: &str) -> bool {
    matches!(axis, SweepAxis::Ablation) && config.model == "lstm" && value != "baseline"
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub city: String,
    pub axis: String,
    pub value: String,
    pub seed: u64,
    pub geo_bleu: Option<f64>,
    pub accuracy: Option<f64>,
    pub paper_na: bool,
    pub status: String,
}

/// One `run_experiment` per axis value, each in its own subdirectory;
/// results concatenate into `sweep.csv` under the base output directory.
pub fn run_sweep(base: &ExperimentConfig, axis: &SweepAxis) -> Result<Vec<SweepRow>> {
    let variants: Vec<(String, ExperimentConfig)> = match axis {
        SweepAxis::BatchSize(sizes) => {
            if sizes.is_empty() {
                return Err(HarnessError::Config("empty batch-size axis".into()));
            }
            sizes
                .iter()
                .map(|&b| {
                    let mut c = base.clone();
                    c.batch_size = b;
                    (b.to_string(), c)
                })
                .collect()
        }
        SweepAxis::Sampling => ["sequential", "cluster-ordered", "stratified"]
            .iter()
            .map(|&s| {
                let mut c = base.clone();
                c.strategy = s.into();
                (s.to_string(), c)
            })
            .collect(),
        SweepAxis::Ablation => {
            let mut out = Vec::new();
            for (name, ext, sem, fus) in [
                ("baseline", false, false, false),
                ("ext_spatiotemporal", true, false, false),
                ("user_semantic", false, true, false),
                ("fusion", false, false, true),
            ] {
                let mut c = base.clone();
                c.ext_spatiotemporal = ext;
                c.user_semantic = sem;
                c.fusion = fus;
                out.push((name.to_string(), c));
            }
            out
        }
    };

    let mut rows = Vec::new();
    for (value, mut config) in variants {
        config.out_dir = format!("{}/{}_{}", base.out_dir, axis.name(), value);
        for &seed in &config.seeds.clone() {
            let row = match config.validate().and_then(|_| run_single(&config, seed)) {
                Ok(run) => SweepRow {
                    city: config.city.clone(),
                    axis: axis.name().into(),
                    value: value.clone(),
                    seed,
                    geo_bleu: Some(run.report.geo_bleu),
                    accuracy: Some(run.report.accuracy),
                    paper_na: paper_na(axis, &config, &value),
                    status: "ok".into(),
                },
                Err(e) => SweepRow {
                    city: config.city.clone(),
                    axis: axis.name().into(),
                    value: value.clone(),
                    seed,
                    geo_bleu: None,
                    accuracy: None,
                    paper_na: paper_na(axis, &config, &value),
                    status: format!("failed: {e}"),
                },
            };
            rows.push(row);
        }
    }

    fs::create_dir_all(&base.out_dir)?;
    let mut csv = String::from("city,axis,value,seed,geo_bleu,accuracy,paper_na,status\n");
    for r in &rows {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.city,
            r.axis,
            r.value,
            r.seed,
            fmt(r.geo_bleu),
            fmt(r.accuracy),
            r.paper_na,
            r.status.replace(',', ";"),
        ));
    }
    let mut f = fs::File::create(Path::new(&base.out_dir).join("sweep.csv"))?;
    f.write_all(csv.as_bytes())?;
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub schedule_match: Option<bool>,
    pub report_match: bool,
}

/// Re-execute a persisted run from its `run.json` into a scratch directory
/// and compare artifacts byte-for-byte.
pub fn replay(run_dir: &Path) -> Result<ReplayOutcome> {
    let record: RunRecord = serde_json::from_str(&fs::read_to_string(run_dir.join("run.json"))?)?;
    let scratch = run_dir.join("replay_scratch");
    let mut config = record.config.clone();
    config.out_dir = scratch.to_string_lossy().into_owned();
    let rerun = run_single(&config, record.seed)?;

    let compare = |name: &str| -> Result<Option<bool>> {
        let orig = run_dir.join(name);
        let new = rerun.dir.join(name);
        if !orig.exists() && !new.exists() {
            return Ok(None);
        }
        if !orig.exists() || !new.exists() {
            return Ok(Some(false));
        }
        Ok(Some(fs::read(orig)? == fs::read(new)?))
    };
    let schedule_match = compare("schedule.csv")?;
    let report_match = compare("report.json")?.unwrap_or(false);
    fs::remove_dir_all(&scratch)?;
    Ok(ReplayOutcome {
        schedule_match,
        report_match,
    })
}

/// Re-score a persisted checkpoint without retraining; writes
/// `report_eval.json` next to the original report.
pub fn evaluate(run_dir: &Path) -> Result<EvalReport> {
    let record: RunRecord = serde_json::from_str(&fs::read_to_string(run_dir.join("run.json"))?)?;
    let config = &record.config;
    let prepared = prepare(config, record.seed)?;
    let arch = config.arch()?;
    let predictions: BTreeMap<u64, Vec<PredictionCandidate>> = match arch {
        None => {
            let by_user_train: BTreeMap<u64, &EnrichedTrajectory> =
                prepared.split.train.iter().map(|t| (t.user_id, t)).collect();
            prepared
                .split
                .test
                .iter()
                .filter(|t| !t.points.is_empty())
                .map(|test| {
                    let targets: Vec<TargetTime> =
                        test.points.iter().map(TargetTime::of_point).collect();
                    let train = by_user_train
                        .get(&test.user_id)
                        .map(|t| t.points.as_slice())
                        .unwrap_or(&[]);
                    (test.user_id, hv_predict(train, &targets, &prepared.spec))
                })
                .collect()
        }
        Some(_) => {
            let net: SeqNet =
                serde_json::from_str(&fs::read_to_string(run_dir.join("checkpoint.json"))?)?;
            let fenc: FeatureEncoder =
                serde_json::from_str(&fs::read_to_string(run_dir.join("encoder.json"))?)?;
            let gate: Option<FusionGate> = if run_dir.join("gate.json").exists() {
                Some(serde_json::from_str(&fs::read_to_string(
                    run_dir.join("gate.json"),
                )?)?)
            } else {
                None
            };
            let semantics = if config.user_semantic {
                Some(build_semantics(config, &prepared.raw_train, record.seed)?)
            } else {
                None
            };
            predict_all(config, &net, gate.as_ref(), semantics.as_ref(), &prepared, &fenc)
        }
    };
    let report = score_predictions(
        &prepared.split,
        &predictions,
        &config.geo_bleu_params(),
        record.fingerprint.clone(),
    )?;
    write_json(&run_dir.join("report_eval.json"), &report)?;
    Ok(report)
}

/// Mean with min/max over the seeds of one configuration, as reported by
/// sweeps ("3 seeds, mean with min/max").
pub fn seed_stats(values: &[f64]) -> (f64, f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, min, max)
}

pub mod testdata {
    //! Synthetic check-in corpus used by examples and tests.

    use std::fmt::Write as _;

    /// `users` commuters over `days` days: home cell at 09:00, work at
    /// 18:00, with an occasional third venue. Deterministic.
    pub fn synthetic_tsv(users: u64, days: u32) -> String {
        let mut out = String::new();
        for u in 0..users {
            let home = (40.10 + 0.037 * u as f64, -74.40 + 0.041 * u as f64);
            let work = (40.55 + 0.019 * u as f64, -73.60 - 0.023 * u as f64);
            let cafe = (40.30 + 0.011 * u as f64, -74.00 + 0.017 * u as f64);
            for d in 0..days {
                let date = date_for(d);
                writeln_row(&mut out, u + 1, &format!("home{u}"), "cat_home", "Home", home, &date, 9);
                writeln_row(&mut out, u + 1, &format!("work{u}"), "cat_work", "Office", work, &date, 18);
                if (d + u as u32) % 5 == 0 {
                    writeln_row(&mut out, u + 1, &format!("cafe{u}"), "cat_cafe", "Café", cafe, &date, 12);
                }
            }
        }
        out
    }

    fn date_for(day: u32) -> String {
        let d0 = chrono::NaiveDate::from_ymd_opt(2012, 4, 3).unwrap();
        (d0 + chrono::Duration::days(day as i64))
            .format("%Y-%m-%d")
            .to_string()
    }

    fn writeln_row(
        out: &mut String,
        user: u64,
        venue: &str,
        cat_id: &str,
        cat_name: &str,
        (lat, lon): (f64, f64),
        date: &str,
        hour: u32,
    ) {
        writeln!(
            out,
            "{user}\t{venue}\t{cat_id}\t{cat_name}\t{lat}\t{lon}\t0\t{date}T{hour:02}:00:00"
        )
        .unwrap();
    }
}
