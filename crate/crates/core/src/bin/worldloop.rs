use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use worldloop::action_api::ControlKind;
use worldloop::datagen::{audit, filter_overlap, generate_scene_dataset, write_dataset, GenParams};
use worldloop::harness::{
    run_suite, sweep_data, sweep_decoupling, sweep_inference, write_report, write_resolved_config, write_table, Overrides,
    RunConfig,
};
use worldloop::metrics::format_table;
use worldloop::render::ViewKind;
use worldloop::rng::{domain, mix};
use worldloop::scene::{parse_scene_file, serialize_scene};
use worldloop::scenegen::{gen_scene, gen_suite, SceneParams};
use worldloop::tasks::{validate_trace, EpisodeResult, Suite, TaskKind};
use worldloop::worldmodel::wire::serve_frozen;

#[derive(Parser)]
#[command(name = "worldloop", version, about = "Closed-loop evaluation of action-conditioned world models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a suite for every configured model; writes report.csv and episodes.jsonl.
    Run(Common),
    /// SR against the number of proposals M; writes sweep_inference.csv.
    SweepInference(Common),
    /// CountPrior trained on growing datasets; writes sweep_data.csv.
    SweepData(Common),
    /// Quality, controllability and SR over noisy model variants; writes sweep_decoupling.csv.
    SweepDecoupling(Common),
    /// Generate trajectory records for scene files.
    Datagen(DatagenArgs),
    /// Generate random scene files.
    GenScenes(GenScenesArgs),
    /// Generate an episode suite with its scenes.
    GenSuite(GenSuiteArgs),
    /// Check a suite and, optionally, recorded episode traces.
    Validate(ValidateArgs),
    /// Speak the remote model protocol on stdin/stdout as a frozen model.
    Serve(ServeArgs),
}

#[derive(Args)]
struct Common {
    /// TOML run config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Suite file, replacing the config's.
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of run seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Model spec, repeatable (e.g. `oracle@pano`, `noisy_action:0.25`).
    #[arg(long = "model")]
    models: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.suite) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(suite)) => RunConfig::new(suite),
            (None, None) => bail!("either --config or --suite is required"),
        };
        if let (Some(_), Some(suite)) = (&self.config, &self.suite) {
            cfg.suite = suite.clone();
        }
        if let Some(n) = self.seeds {
            cfg.seeds = n;
        }
        cfg.apply(&Overrides { seed: self.seed, jobs: self.jobs, models: self.models.clone(), out: self.out.clone() });
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct DatagenArgs {
    /// Scene file, repeatable.
    #[arg(long = "scene", required = true)]
    scenes: Vec<PathBuf>,
    #[arg(long, default_value_t = GenParams::default().rho)]
    rho: f64,
    #[arg(long, default_value_t = GenParams::default().alpha)]
    alpha: f64,
    #[arg(long, default_value_t = GenParams::default().r_f)]
    rf: f64,
    #[arg(long, default_value_t = GenParams::default().eta)]
    eta: f64,
    #[arg(long, default_value_t = GenParams::default().scale)]
    scale: f64,
    #[arg(long, default_value_t = GenParams::default().floor_min)]
    floor_min: usize,
    #[arg(long, default_value_t = GenParams::default().pano_width)]
    pano_width: usize,
    /// Drop records whose mean consecutive-frame overlap exceeds this.
    #[arg(long)]
    max_overlap: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SceneArgs {
    /// Side length in cells.
    #[arg(long, default_value_t = SceneParams::default().size)]
    size: usize,
    #[arg(long, default_value_t = SceneParams::default().rooms)]
    rooms: usize,
    /// Objects per square meter.
    #[arg(long, default_value_t = SceneParams::default().object_density)]
    density: f64,
    #[arg(long, default_value_t = SceneParams::default().cell_size)]
    cell_size: f64,
}

impl SceneArgs {
    fn params(&self) -> SceneParams {
        SceneParams { size: self.size, rooms: self.rooms, object_density: self.density, cell_size: self.cell_size }
    }
}

#[derive(Args)]
struct GenScenesArgs {
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenSuiteArgs {
    /// imagenav, ar or infoseek.
    #[arg(long)]
    task: TaskKind,
    #[arg(long, default_value_t = 10)]
    scenes: usize,
    #[arg(long, default_value_t = 5)]
    episodes: usize,
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long, default_value = "suite.jsonl")]
    name: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    suite: PathBuf,
    /// episodes.jsonl to replay against the suite.
    #[arg(long)]
    episodes: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Ego,
    Panorama,
}

#[derive(Args)]
struct ServeArgs {
    /// text, trajectory or lowlevel.
    #[arg(long, default_value = "text")]
    control: ControlKind,
    #[arg(long, value_enum, default_value = "ego")]
    kind: Kind,
}

fn run(c: &Common) -> Result<()> {
    let cfg = c.resolve()?;
    let report = run_suite(&cfg)?;
    write_report(&cfg, &report)?;
    print!("{}", format_table(&report.rows));
    eprintln!("wrote {}", cfg.out.display());
    Ok(())
}

fn sweep<T: serde::Serialize>(cfg: &RunConfig, name: &str, rows: &[T]) -> Result<()> {
    let path = write_table(&cfg.out, name, rows)?;
    write_resolved_config(cfg)?;
    print!("{}", fs::read_to_string(&path)?);
    Ok(())
}

fn datagen(a: &DatagenArgs) -> Result<()> {
    let params = GenParams {
        rho: a.rho,
        alpha: a.alpha,
        r_f: a.rf,
        eta: a.eta,
        floor_min: a.floor_min,
        scale: a.scale,
        pano_width: a.pano_width,
    };
    params.validate()?;
    let mut records = Vec::new();
    for (i, path) in a.scenes.iter().enumerate() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let scene = parse_scene_file(&text).with_context(|| path.display().to_string())?;
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        let (ws, recs) = generate_scene_dataset(&scene, &name, i as u64, &params, a.seed)?;
        let report = audit(&scene, &ws, &recs)?;
        eprintln!("{name}: {} waypoints, {} records, audit {report:?}", ws.selected.len(), recs.len());
        if !report.passed() {
            bail!("{name}: audit failed");
        }
        records.extend(recs);
    }
    if let Some(t) = a.max_overlap {
        let before = records.len();
        records = filter_overlap(records, t);
        eprintln!("overlap filter kept {} of {before}", records.len());
    }
    let manifest = write_dataset(&records, &a.out)?;
    eprintln!("wrote {} records to {}", manifest.records.len(), a.out.display());
    Ok(())
}

fn gen_scenes(a: &GenScenesArgs) -> Result<()> {
    fs::create_dir_all(&a.out)?;
    let params = a.scene.params();
    for i in 0..a.count as u64 {
        let scene = gen_scene(mix(a.seed, &[domain::SCENE, i]), &params)?;
        let path = a.out.join(format!("scene_{i:03}.txt"));
        fs::write(&path, serialize_scene(&scene)?)?;
    }
    eprintln!("wrote {} scenes to {}", a.count, a.out.display());
    Ok(())
}

fn gen_suite_cmd(a: &GenSuiteArgs) -> Result<()> {
    let suite = gen_suite(a.task, a.scenes, a.episodes, a.seed, &a.scene.params())?;
    let path = suite.write(&a.out, &a.name)?;
    eprintln!("wrote {} episodes over {} scenes to {}", suite.episodes.len(), suite.scenes.len(), path.display());
    Ok(())
}

fn validate(a: &ValidateArgs) -> Result<()> {
    let suite = Suite::load(&a.suite)?;
    println!("suite ok: {} episodes, {} scenes", suite.episodes.len(), suite.scenes.len());
    let Some(path) = &a.episodes else { return Ok(()) };
    let specs: HashMap<u64, _> = suite.episodes.iter().map(|e| (e.id, e)).collect();
    let reader = BufReader::new(fs::File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let (mut checked, mut bad) = (0, 0);
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: EpisodeResult = serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), n + 1))?;
        let spec = specs.get(&r.id).with_context(|| format!("episode {} is not in the suite", r.id))?;
        if r.error.is_some() {
            continue;
        }
        checked += 1;
        if let Err(e) = validate_trace(suite.scene(spec), spec, &r) {
            eprintln!("{e}");
            bad += 1;
        }
    }
    println!("traces: {checked} checked, {bad} invalid");
    if bad > 0 {
        bail!("{bad} invalid traces");
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(c) => run(&c),
        Command::SweepInference(c) => {
            let cfg = c.resolve()?;
            sweep(&cfg, "sweep_inference.csv", &sweep_inference(&cfg)?)
        }
        Command::SweepData(c) => {
            let cfg = c.resolve()?;
            sweep(&cfg, "sweep_data.csv", &sweep_data(&cfg)?)
        }
        Command::SweepDecoupling(c) => {
            let cfg = c.resolve()?;
            let report = sweep_decoupling(&cfg)?;
            write_table(&cfg.out, "sweep_decoupling_summary.csv", &report.summary())?;
            sweep(&cfg, "sweep_decoupling.csv", &report.rows)
        }
        Command::Datagen(a) => datagen(&a),
        Command::GenScenes(a) => gen_scenes(&a),
        Command::GenSuite(a) => gen_suite_cmd(&a),
        Command::Validate(a) => validate(&a),
        Command::Serve(a) => {
            let kind = match a.kind {
                Kind::Ego => ViewKind::Ego,
                Kind::Panorama => ViewKind::Panorama,
            };
            let stdin = std::io::stdin();
            serve_frozen(stdin.lock(), std::io::stdout().lock(), a.control, kind)?;
            Ok(())
        }
    }
}
