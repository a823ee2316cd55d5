//! End-to-end runs over a set of events: classification, features, scores,
//! change maps and per-class evaluation, repeated over seeded runs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::Path;
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crate::changedet::{
    assemble_change_map, change_score, write_cmap, write_invalid_pbm, write_pgm, ChangeMap, Metric,
};
use crate::dynamics::{DynamicsConfig, NetworkState};
use crate::error::{Error, Result};
use crate::eval::{PixelPool, Summary};
use crate::featureng::{decide_class, select_bands, ClassMode, DisasterClass, FeatureEngSpec};
use crate::netgen::{generate_network, NetgenConfig, NetworkGraph, DEFAULT_READOUT};
use crate::pipeline::{
    extract_features, normalize, tile, write_features_csv, FeatureSequence, ResetMode, TileLoc,
};
use crate::scene::SceneBundle;
use crate::seeds::{run_seed, sub_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// Nanowire-network features.
    Pann,
    /// Distances between pooled pixel vectors.
    Baseline,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Pann => "pann",
            Model::Baseline => "baseline",
        })
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pann" => Ok(Model::Pann),
            "baseline" => Ok(Model::Baseline),
            _ => Err(Error::Config(format!("unknown model '{s}'"))),
        }
    }
}

/// Everything that determines the numbers a run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub metric: Metric,
    pub model: Model,
    pub n_runs: usize,
    pub base_seed: u64,
    pub reset_mode: ResetMode,
    pub class_mode: ClassMode,
    /// `None` uses the built-in spec for each scene's sensor.
    pub feature_spec: Option<FeatureEngSpec>,
    /// The seed field is replaced per run.
    pub netgen: NetgenConfig,
    pub dynamics: DynamicsConfig,
    pub n_readout: usize,
    /// Baseline on unpooled tiles of every band instead of pooled selected bands.
    pub baseline_raw: bool,
    /// Keep run-0 features for export.
    pub keep_features: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            metric: Metric::Correlation,
            model: Model::Pann,
            n_runs: 5,
            base_seed: 0,
            reset_mode: ResetMode::Persistent,
            class_mode: ClassMode::Tree,
            feature_spec: None,
            netgen: NetgenConfig::default(),
            dynamics: DynamicsConfig::default(),
            n_readout: DEFAULT_READOUT,
            baseline_raw: false,
            keep_features: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::Config("at least one run is required".into()));
        }
        self.netgen.validate()?;
        self.dynamics.validate()?;
        if let Some(spec) = &self.feature_spec {
            spec.validate()?;
        }
        Ok(())
    }

    fn spec_for(&self, scene: &SceneBundle) -> FeatureEngSpec {
        self.feature_spec
            .clone()
            .unwrap_or_else(|| FeatureEngSpec::for_sensor(scene.sensor))
    }

    /// Hex SHA-256 of the configuration and the event list.
    pub fn hash(&self, scenes: &[SceneBundle]) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        for s in scenes {
            h.update(format!("{}|{}|{}x{};", s.name, s.sensor, s.height, s.width));
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    /// Class the event is evaluated under.
    pub class: DisasterClass,
    /// Class chosen by the configured classification mode.
    pub predicted_class: DisasterClass,
    pub bands: Vec<String>,
    pub auprc: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub model: Model,
    pub metric: Metric,
    pub n_runs: usize,
    pub reset_mode: ResetMode,
    /// Pooled-pixel AUPRC per disaster class.
    pub classes: BTreeMap<DisasterClass, Summary>,
    pub events: BTreeMap<String, EventReport>,
    pub config_hash: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl Report {
    /// The report as JSON with the timestamp removed, for comparisons.
    pub fn without_timestamp(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut().expect("object").remove("timestamp");
        v
    }
}

pub struct ExperimentOutput {
    pub report: Report,
    /// `maps[r][e]`: run `r`, event `e` in input order.
    pub maps: Vec<Vec<ChangeMap>>,
    /// Run-0 features per event, when requested.
    pub features: Vec<(String, Vec<FeatureSequence>)>,
}

struct Plan {
    eval_class: DisasterClass,
    predicted: DisasterClass,
    bands: Vec<usize>,
}

/// Vectors compared across frames, one sequence per tile.
enum Vectors {
    Features(Vec<FeatureSequence>),
    Pixels(Vec<Vec<Vec<f64>>>),
}

struct EventOutcome {
    map: ChangeMap,
    features: Option<Vec<FeatureSequence>>,
}

/// Score one event: per-tile change scores broadcast into a change map.
///
/// `states` holds one state per band of the scene; only the selected bands'
/// states are used and advanced.
fn score_event(
    scene: &SceneBundle,
    bands: &[usize],
    config: &RunConfig,
    graph: Option<&NetworkGraph>,
    states: &mut [NetworkState],
) -> Result<EventOutcome> {
    let side = scene.sensor.tile_side();
    let raw_baseline = config.model == Model::Baseline && config.baseline_raw;
    let all_bands: Vec<usize> = (0..scene.n_bands()).collect();
    let norm = normalize(scene, if raw_baseline { &all_bands } else { bands })?;
    let tiles = tile(&norm, side)?;
    drop(norm);
    let locs: Vec<TileLoc> = tiles.iter().map(|t| t.loc).collect();

    let vectors = match (config.model, graph) {
        (Model::Pann, Some(graph)) => {
            let mut selected: Vec<NetworkState> = bands
                .iter()
                .map(|&b| std::mem::take(&mut states[b]))
                .collect();
            let res = extract_features(
                &tiles,
                bands,
                graph,
                &mut selected,
                &config.dynamics,
                config.reset_mode,
            );
            for (&b, s) in bands.iter().zip(selected) {
                states[b] = s;
            }
            Vectors::Features(res?)
        }
        (Model::Pann, None) => unreachable!("network built for every pann run"),
        (Model::Baseline, _) => Vectors::Pixels(
            tiles
                .iter()
                .map(|t| {
                    (0..t.n_frames)
                        .map(|f| {
                            if raw_baseline {
                                t.raw_frame(f).to_vec()
                            } else {
                                t.pooled_frame(f).to_vec()
                            }
                        })
                        .collect()
                })
                .collect(),
        ),
    };
    drop(tiles);

    let scores: Vec<f64> = match &vectors {
        Vectors::Features(f) => f
            .par_iter()
            .map(|s| change_score(&s.features, config.metric))
            .collect::<Result<_>>()?,
        Vectors::Pixels(p) => p
            .par_iter()
            .map(|s| change_score(s, config.metric))
            .collect::<Result<_>>()?,
    };
    let map = assemble_change_map(
        &scene.name,
        config.metric,
        &scores,
        &locs,
        (scene.height, scene.width),
        side,
        &scene.mask,
    )?;
    let features = match vectors {
        Vectors::Features(f) if config.keep_features => Some(f),
        _ => None,
    };
    Ok(EventOutcome { map, features })
}

fn plan_events(config: &RunConfig, scenes: &[SceneBundle]) -> Result<Vec<Plan>> {
    scenes
        .iter()
        .map(|scene| {
            let spec = config.spec_for(scene);
            let decided = decide_class(scene, &spec, config.class_mode)
                .map_err(|e| e.in_event(&scene.name))?;
            let bands = select_bands(decided.class, &spec).map_err(|e| e.in_event(&scene.name))?;
            if let Some(&b) = bands.iter().find(|&&b| b >= scene.n_bands()) {
                return Err(
                    Error::Input(format!("band position {b} not in scene")).in_event(&scene.name)
                );
            }
            log::info!(
                "event '{}': class {} ({}), bands {:?}",
                scene.name,
                decided.class,
                decided
                    .scores
                    .iter()
                    .map(|(n, s)| format!("{n}={:.4}", s.score))
                    .collect::<Vec<_>>()
                    .join(" "),
                bands
                    .iter()
                    .map(|&b| &scene.band_labels[b])
                    .collect::<Vec<_>>()
            );
            Ok(Plan {
                eval_class: scene.event_class_hint.unwrap_or(decided.class),
                predicted: decided.class,
                bands,
            })
        })
        .collect()
}

/// Network for one run, from labeled sub-seeds of the run seed.
pub fn run_network(config: &RunConfig, seed: u64) -> Result<NetworkGraph> {
    let netgen = config.netgen.clone().with_seed(sub_seed(seed, "layout"));
    generate_network(&netgen, sub_seed(seed, "readout"), config.n_readout)
}

pub fn run_experiment(config: &RunConfig, scenes: &[SceneBundle]) -> Result<ExperimentOutput> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(Error::Input("no events to process".into()));
    }
    for s in scenes {
        s.validate()?;
    }
    let mut names: Vec<&str> = scenes.iter().map(|s| s.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Input("event names must be unique".into()));
    }
    let plans = plan_events(config, scenes)?;
    let max_bands = scenes.iter().map(|s| s.n_bands()).max().unwrap_or(0);

    let mut maps: Vec<Vec<ChangeMap>> = Vec::with_capacity(config.n_runs);
    let mut features = Vec::new();
    for r in 0..config.n_runs {
        let seed = run_seed(config.base_seed, r);
        let graph = match config.model {
            Model::Pann => Some(run_network(config, seed)?),
            Model::Baseline => None,
        };
        let mut states: Vec<NetworkState> = match &graph {
            Some(g) => vec![NetworkState::new(g); max_bands],
            None => vec![NetworkState::default(); max_bands],
        };
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(
            seed,
            "event-order",
        )));

        let mut run_maps: Vec<Option<ChangeMap>> = vec![None; scenes.len()];
        for &e in &order {
            let scene = &scenes[e];
            let started = Instant::now();
            let outcome = score_event(scene, &plans[e].bands, config, graph.as_ref(), &mut states)
                .map_err(|err| err.in_event(&scene.name))?;
            log::info!(
                "run {}/{}: event '{}' scored in {:.1} s",
                r + 1,
                config.n_runs,
                scene.name,
                started.elapsed().as_secs_f64()
            );
            if r == 0 {
                if let Some(f) = outcome.features {
                    features.push((scene.name.clone(), f));
                }
            }
            run_maps[e] = Some(outcome.map);
        }
        maps.push(
            run_maps
                .into_iter()
                .map(|m| m.expect("every event scored"))
                .collect(),
        );
    }
    features.sort_by(|a, b| a.0.cmp(&b.0));

    let mut classes = BTreeMap::new();
    let class_set: std::collections::BTreeSet<DisasterClass> =
        plans.iter().map(|p| p.eval_class).collect();
    for class in class_set {
        let runs = maps
            .iter()
            .map(|run| {
                let mut pool = PixelPool::default();
                for (e, map) in run.iter().enumerate() {
                    if plans[e].eval_class == class {
                        pool.add_map(map, &scenes[e].mask)?;
                    }
                }
                pool.auprc()
            })
            .collect();
        classes.insert(class, Summary::from_runs(runs));
    }
    let mut events = BTreeMap::new();
    for (e, scene) in scenes.iter().enumerate() {
        let runs = maps
            .iter()
            .map(|run| {
                let mut pool = PixelPool::default();
                pool.add_map(&run[e], &scene.mask)?;
                pool.auprc()
            })
            .collect();
        events.insert(
            scene.name.clone(),
            EventReport {
                class: plans[e].eval_class,
                predicted_class: plans[e].predicted,
                bands: plans[e]
                    .bands
                    .iter()
                    .map(|&b| scene.band_labels[b].clone())
                    .collect(),
                auprc: Summary::from_runs(runs),
            },
        );
    }
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    Ok(ExperimentOutput {
        report: Report {
            model: config.model,
            metric: config.metric,
            n_runs: config.n_runs,
            reset_mode: config.reset_mode,
            classes,
            events,
            config_hash: config.hash(scenes),
            timestamp,
        },
        maps,
        features,
    })
}

/// Write `report.json`, `maps/run_<r>/<event>.{cmap,pgm,pbm}` and
/// `features/<event>.csv` under `out`.
pub fn write_artifacts(out: &Path, output: &ExperimentOutput) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let report_path = out.join("report.json");
    let text = serde_json::to_string_pretty(&output.report)?;
    fs::write(&report_path, text + "\n").map_err(|e| Error::io(&report_path, e))?;

    let create = |path: &Path| {
        fs::File::create(path)
            .map(BufWriter::new)
            .map_err(|e| Error::io(path, e))
    };
    for (r, run) in output.maps.iter().enumerate() {
        let dir = out.join("maps").join(format!("run_{r}"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for map in run {
            let base = dir.join(&map.event);
            let cmap = base.with_extension("cmap");
            write_cmap(create(&cmap)?, map).map_err(|e| Error::io(&cmap, e))?;
            let pgm = base.with_extension("pgm");
            write_pgm(create(&pgm)?, map).map_err(|e| Error::io(&pgm, e))?;
            let pbm = base.with_extension("pbm");
            write_invalid_pbm(create(&pbm)?, map).map_err(|e| Error::io(&pbm, e))?;
        }
    }
    if !output.features.is_empty() {
        let dir = out.join("features");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (event, f) in &output.features {
            let path = dir.join(format!("{event}.csv"));
            write_features_csv(create(&path)?, event, f, true).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub height: usize,
    pub width: usize,
    pub tiles: usize,
    pub bands: usize,
    pub threads: usize,
    pub wall_seconds: f64,
    /// Peak resident set size of this process, where the OS reports it.
    pub peak_rss_bytes: Option<u64>,
}

/// Peak resident memory of the current process (Linux `VmHWM`).
pub fn peak_rss_bytes() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Time the full per-scene pipeline (network generation, classification,
/// features, scores, change map) for one run.
pub fn benchmark(config: &RunConfig, scene: &SceneBundle) -> Result<BenchResult> {
    config.validate()?;
    scene.validate()?;
    let started = Instant::now();
    let plan = plan_events(config, std::slice::from_ref(scene))?.remove(0);
    let seed = run_seed(config.base_seed, 0);
    let graph = match config.model {
        Model::Pann => Some(run_network(config, seed)?),
        Model::Baseline => None,
    };
    let mut states = match &graph {
        Some(g) => vec![NetworkState::new(g); scene.n_bands()],
        None => vec![NetworkState::default(); scene.n_bands()],
    };
    let outcome = score_event(scene, &plan.bands, config, graph.as_ref(), &mut states)?;
    let wall_seconds = started.elapsed().as_secs_f64();
    let side = scene.sensor.tile_side();
    debug_assert_eq!(outcome.map.height, scene.height);
    Ok(BenchResult {
        height: scene.height,
        width: scene.width,
        tiles: (scene.height / side) * (scene.width / side),
        bands: plan.bands.len(),
        threads: rayon::current_num_threads(),
        wall_seconds,
        peak_rss_bytes: peak_rss_bytes(),
    })
}
