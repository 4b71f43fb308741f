use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use citynav::agent::PolicyKind;
use citynav::config::{PlatformConfig, PolicyFactory};
use citynav::eval::{aggregate, export_geojson, replay_and_verify, EpisodeResult};
use citynav::geo::GeoPolygon;
use citynav::graph::{load_graph, NavGraph, NodeId, RepairConfig};
use citynav::runner::run_episode;
use citynav::sampler::{build_task, crawl_start_point, read_tasks, sample_tasks, write_tasks, NavTask};
use citynav::synth::{grid, noisy_grid, GridSpec, NoiseSpec};
use citynav::trace::EpisodeTrace;

#[derive(Parser)]
#[command(name = "citynav", version, about = "Street navigation simulator and evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic grid city in the graph file format.
    Synth(SynthArgs),
    /// Symmetrize, drop long jumps and prune dead ends.
    Repair(RepairArgs),
    /// Sample navigation tasks.
    Sample(SampleArgs),
    /// Run a policy over a task file, one JSONL trace per task.
    Run(RunArgs),
    /// Replay traces and write a metrics report.
    Score(ScoreArgs),
    /// Convert a trace for visualization.
    Export(ExportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    rows: usize,
    #[arg(long, default_value_t = 20)]
    cols: usize,
    #[arg(long, default_value_t = 100.0)]
    spacing_m: f64,
    /// Inject crawl defects (one-way links, spurs, long jumps).
    #[arg(long)]
    noisy: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RepairArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Tasks whose origins and destination nodes must survive pruning.
    #[arg(long)]
    tasks: Option<PathBuf>,
    #[arg(long)]
    max_edge_m: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Destination node; the destination square is centred on it. Without
    /// it, `--count` seeds are drawn at random.
    #[arg(long)]
    seed_node: Option<String>,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    d_target: Option<f64>,
    #[arg(long)]
    rng_seed: Option<u64>,
    #[arg(long, default_value = "city")]
    city: String,
    #[arg(long)]
    name: Option<String>,
    /// Half side of the destination square.
    #[arg(long, default_value_t = 30.0)]
    polygon_half_m: f64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long)]
    policy: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Parallel episodes; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct ScoreArgs {
    /// Directory of `.jsonl` traces, or a single trace.
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Also write per-episode results as JSON lines.
    #[arg(long)]
    episodes: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Geojson,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long, value_enum, default_value = "geojson")]
    format: ExportFormat,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Repair(a) => repair(a),
        Command::Sample(a) => sample(a),
        Command::Run(a) => run(a),
        Command::Score(a) => score(a),
        Command::Export(a) => export(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(path: Option<&Path>) -> Result<PlatformConfig> {
    match path {
        Some(p) => PlatformConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(PlatformConfig::default()),
    }
}

fn read_graph(path: &Path) -> Result<NavGraph> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let (g, _) = load_graph(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    Ok(g)
}

fn read_task_file(path: &Path) -> Result<Vec<NavTask>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    read_tasks(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = GridSpec::new(a.rows, a.cols, a.spacing_m);
    let g = if a.noisy { noisy_grid(&spec, &NoiseSpec::default(), a.seed)? } else { grid(&spec)? };
    write_file(&a.out, &g.to_graph_file())?;
    eprintln!("wrote {} nodes, {} links to {}", g.node_count(), g.link_count(), a.out.display());
    Ok(())
}

fn repair(a: RepairArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let repair_cfg = RepairConfig { max_edge_m: a.max_edge_m.unwrap_or(cfg.repair.max_edge_m) };
    let g = read_graph(&a.graph)?;
    let mut protected = BTreeSet::new();
    if let Some(p) = &a.tasks {
        for t in read_task_file(p)? {
            protected.insert(t.origin);
            protected.extend(t.destination_nodes);
        }
    }
    let (fixed, report) = g.repair(&protected, &repair_cfg)?;
    write_file(&a.out, &fixed.to_graph_file())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let mut sampler = cfg.sampler;
    if let Some(d) = a.d_target {
        sampler.d_target_m = d;
    }
    if let Some(s) = a.rng_seed {
        sampler.rng_seed = s;
    }
    let g = read_graph(&a.graph)?;
    let tasks = match &a.seed_node {
        Some(seed) => {
            let seed = NodeId::from(seed.as_str());
            let crawl = crawl_start_point(&g, &seed, &sampler)?;
            let centre = g.point_of(&seed).context("seed node has no position")?;
            let polygon = GeoPolygon::square_around(centre, a.polygon_half_m)?;
            let name = a.name.clone().unwrap_or_else(|| format!("Landmark {seed}"));
            vec![build_task(&g, &crawl.start, &name, polygon, &a.city)?]
        }
        None => sample_tasks(&g, &a.city, a.count, &sampler, a.polygon_half_m)?,
    };
    if tasks.is_empty() {
        bail!("no task could be sampled at d_target = {} m", sampler.d_target_m);
    }
    write_file(&a.out, &write_tasks(&tasks))?;
    eprintln!("wrote {} task(s) to {}", tasks.len(), a.out.display());
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let kind: PolicyKind = a.policy.parse()?;
    let g = read_graph(&a.graph)?;
    let tasks = read_task_file(&a.tasks)?;
    for t in &tasks {
        t.validate(&g)?;
    }
    let factory = PolicyFactory::from_config(kind, &cfg)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(a.jobs).build()?;
    let outcomes: Vec<Result<String>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| {
                let mut policy = factory.make()?;
                let trace = run_episode(&g, t, cfg.env, cfg.imagery.view, policy.as_mut())
                    .with_context(|| format!("task {}", t.task_id))?;
                let path = a.out_dir.join(format!("{}.jsonl", t.task_id));
                trace.write_to(&path)?;
                tracing::info!(task = %t.task_id, status = ?trace.final_record.status, "episode done");
                Ok(format!("{}\t{:?}", t.task_id, trace.final_record.status))
            })
            .collect()
    });
    let mut failed = 0;
    for o in outcomes {
        match o {
            Ok(line) => println!("{line}"),
            Err(e) => {
                failed += 1;
                eprintln!("error: {e:#}");
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} episode(s) failed", tasks.len());
    }
    Ok(())
}

fn trace_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

fn task_index(tasks: Vec<NavTask>) -> BTreeMap<String, NavTask> {
    tasks.into_iter().map(|t| (t.task_id.clone(), t)).collect()
}

fn score(a: ScoreArgs) -> Result<()> {
    let g = read_graph(&a.graph)?;
    let tasks = task_index(read_task_file(&a.tasks)?);
    let files = trace_files(&a.traces)?;
    if files.is_empty() {
        bail!("no traces found in {}", a.traces.display());
    }
    let results = files
        .iter()
        .map(|f| -> Result<EpisodeResult> {
            let trace = EpisodeTrace::read_from(f)?;
            let task = tasks
                .get(&trace.start.task_id)
                .with_context(|| format!("{}: task {} not in task file", f.display(), trace.start.task_id))?;
            replay_and_verify(&trace, &g, task).with_context(|| format!("replaying {}", f.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = aggregate(&results)?;
    write_file(&a.report, &serde_json::to_string_pretty(&report)?)?;
    if let Some(p) = &a.episodes {
        let lines: String =
            results.iter().map(|r| serde_json::to_string(r).map(|s| s + "\n")).collect::<Result<_, _>>()?;
        write_file(p, &lines)?;
    }
    println!("{}", serde_json::to_string_pretty(&report.overall)?);
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let g = read_graph(&a.graph)?;
    let tasks = task_index(read_task_file(&a.tasks)?);
    let trace = EpisodeTrace::read_from(&a.trace)?;
    let task =
        tasks.get(&trace.start.task_id).with_context(|| format!("task {} not in task file", trace.start.task_id))?;
    let text = match a.format {
        ExportFormat::Geojson => serde_json::to_string_pretty(&export_geojson(&trace, &g, task)?)?,
    };
    match &a.out {
        Some(p) => write_file(p, &text),
        None => {
            writeln!(std::io::stdout(), "{text}")?;
            Ok(())
        }
    }
}
