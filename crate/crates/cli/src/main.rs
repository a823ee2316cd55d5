use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nwcd::changedet::Metric;
use nwcd::experiment::{benchmark, run_experiment, write_artifacts, Model, RunConfig};
use nwcd::featureng::{ClassMode, FeatureEngSpec};
use nwcd::pipeline::ResetMode;
use nwcd::scene::{load_bundle, save_bundle, SceneBundle, Sensor, LABEL_AFFECTED, LABEL_CLOUD};
use nwcd::scenegen::{generate_scene, preset, Preset, SynthSpec};

#[derive(Parser)]
#[command(
    name = "nwcd",
    version,
    about = "Change detection with simulated nanowire networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score events, write change maps and an AUPRC report.
    Run(RunArgs),
    /// Time one synthetic scene through the full pipeline.
    Bench(BenchArgs),
    /// Write synthetic scene bundles.
    GenSynth(GenArgs),
    /// Write network features of every tile as CSV.
    ExportFeatures(ExportArgs),
    /// Summarize a bundle.
    Inspect(InspectArgs),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value = "correlation")]
    metric: Metric,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Zero network state before every tile sequence.
    #[arg(long)]
    reset_per_tile: bool,
    /// JSON decision-tree and band-subset spec.
    #[arg(long)]
    feature_spec: Option<PathBuf>,
    /// A class name, `hint` (use the bundle hint) or `tree`.
    #[arg(long)]
    class_override: Option<ClassMode>,
    #[arg(long, default_value_t = 8)]
    threads: usize,
}

impl Common {
    fn config(&self, model: Model, n_runs: usize) -> Result<RunConfig> {
        let feature_spec = self
            .feature_spec
            .as_deref()
            .map(FeatureEngSpec::from_json_file)
            .transpose()?;
        Ok(RunConfig {
            metric: self.metric,
            model,
            n_runs,
            base_seed: self.seed,
            reset_mode: if self.reset_per_tile {
                ResetMode::PerTile
            } else {
                ResetMode::Persistent
            },
            class_mode: self.class_override.unwrap_or(ClassMode::Tree),
            feature_spec,
            ..RunConfig::default()
        })
    }
}

#[derive(Args)]
struct RunArgs {
    /// Bundle directories, or directories containing bundles.
    #[arg(required = true)]
    bundles: Vec<PathBuf>,
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "pann")]
    model: Model,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Baseline on unpooled tiles of all bands.
    #[arg(long)]
    baseline_raw: bool,
    /// Also write run-0 features as CSV.
    #[arg(long)]
    features: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Scene size as HEIGHTxWIDTH.
    #[arg(long, default_value = "574x509", value_parser = parse_dims)]
    dims: (usize, usize),
    #[arg(long, default_value = "s2")]
    sensor: Sensor,
    #[arg(long, default_value = "fire")]
    preset: Preset,
    #[arg(long, default_value = "pann")]
    model: Model,
    #[command(flatten)]
    common: Common,
    /// Write the result JSON here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// Output bundle directory (with --suite, the parent of three bundles).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "fire")]
    preset: Preset,
    /// Full scene description as JSON; overrides the preset options.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value = "256x256", value_parser = parse_dims)]
    dims: (usize, usize),
    #[arg(long, default_value = "s2")]
    sensor: Sensor,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Bundle name (defaults to `<preset>_<seed>`).
    #[arg(long)]
    name: Option<String>,
    /// Write the fire, flood and quiet presets side by side.
    #[arg(long)]
    suite: bool,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(required = true)]
    bundles: Vec<PathBuf>,
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "features")]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    bundle: PathBuf,
    /// Print every band of every frame at ROW,COL.
    #[arg(long, value_parser = parse_pixel)]
    pixel: Option<(usize, usize)>,
}

fn parse_pair(s: &str, sep: char) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(sep)
        .ok_or_else(|| format!("expected two numbers separated by '{sep}'"))?;
    let p = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("'{x}': {e}"));
    Ok((p(a)?, p(b)?))
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    parse_pair(&s.to_ascii_lowercase(), 'x')
}

fn parse_pixel(s: &str) -> std::result::Result<(usize, usize), String> {
    parse_pair(s, ',')
}

fn init_threads(n: usize) -> Result<()> {
    if n == 0 {
        bail!("--threads must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("setting up the worker pool")
}

/// Expand each path to the bundles it holds: itself if it has a manifest,
/// otherwise its immediate subdirectories that do, sorted by name.
fn bundle_dirs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.join("manifest.json").is_file() {
            out.push(p.clone());
            continue;
        }
        let mut found: Vec<PathBuf> = fs::read_dir(p)
            .with_context(|| format!("reading {}", p.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| d.join("manifest.json").is_file())
            .collect();
        if found.is_empty() {
            bail!("{} holds no scene bundle", p.display());
        }
        found.sort();
        out.extend(found);
    }
    Ok(out)
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<SceneBundle>> {
    bundle_dirs(paths)?
        .iter()
        .map(|d| load_bundle(d).with_context(|| format!("loading {}", d.display())))
        .collect()
}

fn run(args: RunArgs) -> Result<()> {
    init_threads(args.common.threads)?;
    let mut config = args.common.config(args.model, args.runs)?;
    config.baseline_raw = args.baseline_raw;
    config.keep_features = args.features;
    let scenes = load_all(&args.bundles)?;
    log::info!(
        "{} events, model {}, metric {}",
        scenes.len(),
        config.model,
        config.metric
    );
    let started = Instant::now();
    let output = run_experiment(&config, &scenes)?;
    write_artifacts(&args.out, &output)?;
    for (class, s) in &output.report.classes {
        match (s.mean, s.sem, &s.error) {
            (Some(m), Some(sem), _) => {
                eprintln!("{class}: AUPRC {:.2} ± {:.2} %", 100.0 * m, 100.0 * sem)
            }
            (Some(m), None, _) => eprintln!("{class}: AUPRC {:.2} %", 100.0 * m),
            (_, _, Some(e)) => eprintln!("{class}: not evaluated ({e})"),
            _ => {}
        }
    }
    eprintln!(
        "report written to {} ({:.1} s)",
        args.out.join("report.json").display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    init_threads(args.common.threads)?;
    let config = args.common.config(args.model, 1)?;
    let (h, w) = args.dims;
    let scene = generate_scene(&preset(args.preset, args.sensor, h, w, args.common.seed))?;
    let result = benchmark(&config, &scene)?;
    let json = serde_json::to_string_pretty(&result)?;
    println!("{json}");
    if let Some(path) = &args.out {
        fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!(
        "{}x{}: {} tiles x {} bands in {:.2} s, peak memory {}",
        h,
        w,
        result.tiles,
        result.bands,
        result.wall_seconds,
        result
            .peak_rss_bytes
            .map_or("unavailable".to_string(), |b| format!(
                "{:.1} MiB",
                b as f64 / 1048576.0
            ))
    );
    Ok(())
}

fn gen_synth(args: GenArgs) -> Result<()> {
    let (h, w) = args.dims;
    let write = |spec: &SynthSpec, dir: &Path| -> Result<()> {
        let scene = generate_scene(spec)?;
        save_bundle(&scene, dir)?;
        eprintln!(
            "wrote {} ({}x{}, {})",
            dir.display(),
            scene.height,
            scene.width,
            scene.sensor
        );
        Ok(())
    };
    if args.suite {
        for p in [Preset::Fire, Preset::Flood, Preset::Quiet] {
            let spec = preset(p, args.sensor, h, w, args.seed);
            write(&spec, &args.out.join(&spec.name))?;
        }
        return Ok(());
    }
    let mut spec = match &args.spec {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => preset(args.preset, args.sensor, h, w, args.seed),
    };
    if let Some(name) = args.name {
        spec.name = name;
    }
    write(&spec, &args.out)
}

fn export_features(args: ExportArgs) -> Result<()> {
    init_threads(args.common.threads)?;
    let mut config = args.common.config(Model::Pann, 1)?;
    config.keep_features = true;
    let scenes = load_all(&args.bundles)?;
    let output = run_experiment(&config, &scenes)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for (event, features) in &output.features {
        let path = args.out.join(format!("{event}.csv"));
        let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        nwcd::pipeline::write_features_csv(std::io::BufWriter::new(f), event, features, true)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn inspect(args: InspectArgs) -> Result<()> {
    let scene = load_bundle(&args.bundle)?;
    if let Some((r, c)) = args.pixel {
        if r >= scene.height || c >= scene.width {
            bail!("pixel ({r}, {c}) outside {}x{}", scene.height, scene.width);
        }
        let p = r * scene.width + c;
        println!(
            "pixel {r},{c} mask {} missing {}",
            scene.mask[p], scene.missing[p]
        );
        for (t, frame) in scene.frames.iter().enumerate() {
            let vals: Vec<String> = (0..scene.n_bands())
                .map(|b| format!("{}={:?}", scene.band_labels[b], frame.get(b, r, c)))
                .collect();
            println!("frame {} {}", t + 1, vals.join(" "));
        }
        return Ok(());
    }
    println!("name        {}", scene.name);
    println!("sensor      {}", scene.sensor);
    println!("dims        {}x{}", scene.height, scene.width);
    println!("frames      {}", scene.frames.len());
    println!("bands       {}", scene.band_labels.join(" "));
    if let Some(hint) = scene.event_class_hint {
        println!("class hint  {hint}");
    }
    let count = |label| scene.mask.iter().filter(|&&m| m == label).count();
    println!(
        "mask        affected {} cloud {} of {}",
        count(LABEL_AFFECTED),
        count(LABEL_CLOUD),
        scene.n_pixels()
    );
    println!(
        "missing     {}",
        scene.missing.iter().filter(|&&m| m).count()
    );
    println!("band  log-range           frame means");
    for b in 0..scene.n_bands() {
        let means: Vec<String> = scene
            .frames
            .iter()
            .map(|f| {
                let band = f.band(b);
                format!(
                    "{:.4}",
                    band.iter().map(|&v| f64::from(v)).sum::<f64>() / band.len() as f64
                )
            })
            .collect();
        let r = scene.norm_stats[b];
        println!(
            "{:<5} [{:>7.3}, {:>7.3}]  {}",
            scene.band_labels[b],
            r.min,
            r.max,
            means.join(" ")
        );
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(a) => run(a),
        Command::Bench(a) => bench(a),
        Command::GenSynth(a) => gen_synth(a),
        Command::ExportFeatures(a) => export_features(a),
        Command::Inspect(a) => inspect(a),
    };
    if let Err(e) = res {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
