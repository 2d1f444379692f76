use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use steipcn::config::{RunConfig, SEED_ENV};
use steipcn::data::{generate_synthetic, load_series, save_series, split, windows, Normalizer, SplitSpec, SynthConfig, TrafficSeries, Windows};
use steipcn::gradcheck::{tiny_config, tiny_gradcheck, THRESHOLD};
use steipcn::graph::{load_edge_list, st_edges_for, RoadGraph};
use steipcn::model::{load_checkpoint, save_checkpoint, Ablation, Model, ModelConfig};
use steipcn::training::{evaluate, predictions_csv, train, TrainConfig};
use steipcn::{Error, Precision, Result, Scalar};

#[derive(Parser)]
#[command(name = "steipcn", version, about = "Spatial-temporal traffic forecasting")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a seeded synthetic series (STTD, or CSV for a .csv path).
    Synth(SynthArgs),
    /// Print node count, joint-graph edge counts and the hop histogram.
    GraphStats(GraphStatsArgs),
    /// Train a model and write a checkpoint, history and test metrics.
    #[command(after_help = format!("Config keys (key=value, '#' comments):\n{}", RunConfig::describe_keys()))]
    Train(TrainArgs),
    /// Write per-horizon MAE, RMSE and MAPE for a checkpoint.
    Eval(InferArgs),
    /// Write denormalized forecasts for every window of a split.
    Predict(InferArgs),
    /// Compare autodiff gradients against finite differences at tiny scale.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Node count; a path graph is used when no graph is given.
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long, default_value_t = 7)]
    days: usize,
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Falls back to STEIPCN_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Noise standard deviation as a fraction of node amplitude.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 288)]
    steps_per_day: usize,
    #[arg(long)]
    directed: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GraphStatsArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 4)]
    alpha: usize,
    #[arg(long, default_value_t = 2)]
    beta: usize,
    #[arg(long)]
    directed: bool,
    #[arg(long)]
    nodes: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key=value file; keys are listed below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a config key, e.g. --set lr=0.01 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Train this many runs with consecutive seeds, one subdirectory each.
    #[arg(long, default_value_t = 1)]
    repeat: u64,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    split: String,
    /// Optional run config supplying split ratios, directedness and MAPE threshold.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Only the built-in `tiny` configuration is available.
    #[arg(long, default_value = "tiny")]
    config: String,
    /// Comma-separated ablation flags, or `all` for the full model and every variant.
    #[arg(long, default_value = "none")]
    ablation: String,
    #[arg(long)]
    seed: Option<u64>,
}

fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env_seed() {
        Some(s) if !s.trim().is_empty() => {
            s.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an integer")))
        }
        _ => Ok(0),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("missing required {key} (flag --{key} or config key)")))
}

fn check_nodes(graph: &RoadGraph, series: &TrafficSeries) -> Result<()> {
    if graph.n_nodes() != series.n_nodes() {
        return Err(Error::Dimension(format!(
            "graph has {} nodes, data has {}",
            graph.n_nodes(),
            series.n_nodes()
        )));
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let graph = match (&a.graph, a.nodes) {
        (Some(p), nodes) => load_edge_list(p, a.directed, nodes)?,
        (None, Some(n)) => RoadGraph::path(n),
        (None, None) => return Err(Error::Config("synth needs --nodes or --graph".into())),
    };
    if let Some(n) = a.nodes {
        if n != graph.n_nodes() {
            return Err(Error::Dimension(format!("--nodes {n} but graph has {} nodes", graph.n_nodes())));
        }
    }
    let cfg = SynthConfig { days: a.days, seed: resolve_seed(a.seed)?, noise: a.noise, steps_per_day: a.steps_per_day };
    let series = generate_synthetic(&graph, cfg)?;
    save_series(&a.out, &series)?;
    println!("wrote {} steps x {} nodes to {}", series.t_steps(), series.n_nodes(), a.out.display());
    Ok(())
}

fn cmd_graph_stats(a: GraphStatsArgs) -> Result<()> {
    let g = load_edge_list(&a.graph, a.directed, a.nodes)?;
    println!("{}", st_edges_for(&g, a.alpha, a.beta)?.stats());
    Ok(())
}

struct Prepared {
    graph: RoadGraph,
    series: TrafficSeries,
    model: ModelConfig,
}

fn prepare(rc: &RunConfig) -> Result<Prepared> {
    let graph = load_edge_list(require(&rc.graph, "graph")?, rc.directed, rc.nodes)?;
    let series = load_series(require(&rc.data, "data")?)?;
    check_nodes(&graph, &series)?;
    let model = ModelConfig { n_nodes: graph.n_nodes(), steps_per_day: series.steps_per_day(), ..rc.model };
    model.validate()?;
    Ok(Prepared { graph, series, model })
}

fn split_windows<'a>(
    series: &'a TrafficSeries,
    spec: SplitSpec,
    which: &str,
    norm: Normalizer,
    cfg: &ModelConfig,
) -> Result<Windows<'a>> {
    let s = split(series.t_steps(), spec);
    let range = match which {
        "train" => s.train,
        "val" => s.val,
        "test" => s.test,
        "all" => 0..series.t_steps(),
        other => return Err(Error::Config(format!("split must be train, val, test or all, got {other:?}"))),
    };
    windows(series, range, norm, cfg.t_h, cfg.t_p, cfg.beta)
}

fn train_run<T: Scalar>(p: &Prepared, rc: &RunConfig, model_cfg: ModelConfig, tc: &TrainConfig, out: &Path) -> Result<()> {
    let s = split(p.series.t_steps(), rc.split);
    let norm = Normalizer::fit(&p.series, s.train.clone())?;
    let tr = split_windows(&p.series, rc.split, "train", norm, &model_cfg)?;
    let va = split_windows(&p.series, rc.split, "val", norm, &model_cfg)?;
    let te = split_windows(&p.series, rc.split, "test", norm, &model_cfg)?;
    let mut model = Model::<T>::build(model_cfg, &p.graph, norm)?;
    println!("seed={} params={} train_windows={} val_windows={}", model_cfg.seed, model.param_count(), tr.len(), va.len());
    let history = train(&mut model, &tr, &va, tc)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.into(), source: e })?;
    save_checkpoint(&model, out.join("model.stpc"))?;
    write(&out.join("history.csv"), &history.to_csv())?;
    println!("best_epoch={} best_val_mae={}", history.best_epoch, history.best_val_mae);
    if !te.is_empty() {
        let ev = evaluate(&model, &te, tc.mape_epsilon)?;
        write(&out.join("test_metrics.csv"), &ev.to_csv())?;
        println!("test_mae={} test_rmse={} test_mape={}", ev.overall.mae, ev.overall.rmse, ev.overall.mape);
    }
    Ok(())
}

fn load_run_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut rc = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in overrides {
        rc.apply_override(kv)?;
    }
    rc.apply_seed_fallback(env_seed().as_deref())?;
    Ok(rc)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut rc = load_run_config(a.config.as_deref(), &a.overrides)?;
    for (slot, flag) in [(&mut rc.data, a.data), (&mut rc.graph, a.graph), (&mut rc.out, a.out)] {
        if flag.is_some() {
            *slot = flag;
        }
    }
    if a.repeat == 0 {
        return Err(Error::Config("--repeat must be at least 1".into()));
    }
    let p = prepare(&rc)?;
    let out = require(&rc.out, "out")?.to_path_buf();
    for k in 0..a.repeat {
        let seed = p.model.seed + k;
        let model_cfg = ModelConfig { seed, ..p.model };
        let tc = TrainConfig { seed, ..rc.train };
        let dir = if a.repeat == 1 { out.clone() } else { out.join(format!("seed_{seed}")) };
        match model_cfg.precision {
            Precision::Standard => train_run::<f32>(&p, &rc, model_cfg, &tc, &dir)?,
            Precision::High => train_run::<f64>(&p, &rc, model_cfg, &tc, &dir)?,
        }
    }
    Ok(())
}

fn infer<T: Scalar>(model: &Model<T>, series: &TrafficSeries, a: &InferArgs, rc: &RunConfig, predict: bool) -> Result<()> {
    let set = split_windows(series, rc.split, &a.split, model.normalizer(), model.config())?;
    if set.is_empty() {
        return Err(Error::Config(format!("split {:?} holds no complete windows", a.split)));
    }
    if predict {
        write(&a.out, &predictions_csv(model, &set)?)?;
        println!("wrote {} windows to {}", set.len(), a.out.display());
    } else {
        let ev = evaluate(model, &set, rc.train.mape_epsilon)?;
        write(&a.out, &ev.to_csv())?;
        println!("mae={} rmse={} mape={} windows={}", ev.overall.mae, ev.overall.rmse, ev.overall.mape, ev.windows);
    }
    Ok(())
}

fn cmd_infer(a: InferArgs, predict: bool) -> Result<()> {
    let rc = load_run_config(a.config.as_deref(), &a.overrides)?;
    let graph = load_edge_list(&a.graph, rc.directed, rc.nodes)?;
    let series = load_series(&a.data)?;
    check_nodes(&graph, &series)?;
    let model = load_checkpoint::<f64>(&a.checkpoint, &graph)?;
    if model.config().steps_per_day != series.steps_per_day() {
        return Err(Error::Dimension(format!(
            "checkpoint uses {} steps per day, data has {}",
            model.config().steps_per_day,
            series.steps_per_day()
        )));
    }
    match model.config().precision {
        Precision::Standard => infer(&model.cast::<f32>(), &series, &a, &rc, predict),
        Precision::High => infer(&model, &series, &a, &rc, predict),
    }
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<bool> {
    if a.config != "tiny" {
        return Err(Error::Config(format!("unknown gradcheck config {:?}; only `tiny` is available", a.config)));
    }
    let seed = resolve_seed(a.seed)?;
    let variants: Vec<(String, Ablation)> = if a.ablation == "all" {
        std::iter::once(("full".to_string(), Ablation::default()))
            .chain(Ablation::NAMES.iter().map(|n| (n.to_string(), Ablation::only(n).unwrap())))
            .collect()
    } else {
        vec![(a.ablation.clone(), Ablation::parse_list(&a.ablation)?)]
    };
    let mut ok = true;
    for (label, ablation) in variants {
        let (cfg, graph) = tiny_config(ablation, seed);
        println!(
            "variant={label} nodes={} edges={} t_h={} t_p={} channels={} d={} alpha={} beta={}",
            cfg.n_nodes,
            graph.edges().len(),
            cfg.t_h,
            cfg.t_p,
            cfg.channels,
            cfg.d,
            cfg.alpha,
            cfg.beta
        );
        let report = tiny_gradcheck(ablation, seed)?;
        print!("{report}");
        let verdict = if report.passed() { "PASS" } else { "FAIL" };
        println!("{verdict} variant={label} max_rel_err={:.3e} threshold={THRESHOLD:e}", report.max_rel_err());
        ok &= report.passed();
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a).map(|_| true),
        Cmd::GraphStats(a) => cmd_graph_stats(a).map(|_| true),
        Cmd::Train(a) => cmd_train(a).map(|_| true),
        Cmd::Eval(a) => cmd_infer(a, false).map(|_| true),
        Cmd::Predict(a) => cmd_infer(a, true).map(|_| true),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let head = text.split("\n\nUsage").next().unwrap_or("");
            let line: Vec<&str> = head.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
            eprintln!("error[usage]: {}", line.join(" ").trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error[gradcheck]: relative error above {THRESHOLD:e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
