//! Command-line front end: simulation, single fits, averaged multi-restart
//! fits, summarisation, evaluation and matrix-of-clusters workflows.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use catmix::coca::{build_moc, cluster_moc};
use catmix::data::{self, DatasetSchema, SimulationDesign, SimulationMeta};
use catmix::engine::{fit, FitRecord, ModelConfig};
use catmix::error::{Error, Result};
use catmix::eval::{adjusted_rand_index, count_nonempty, f1_selection, MetricReport};
use catmix::io_util;
use catmix::runner::{run_average, RunManifest};
use catmix::summarize::{
    build_coclustering, summarize_variables, summarize_with_method, SummaryConfig, SummaryMethod,
};

#[derive(Parser)]
#[command(name = "catmix", version, about = "Categorical mixture clustering with variable selection and model averaging")]
struct Cli {
    /// Flat key = value config file; command-line flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a preset or design file.
    Simulate(SimulateArgs),
    /// Fit the model once.
    Fit(FitArgs),
    /// Run many restarts and extract an averaged summary clustering.
    FitAvg(FitAvgArgs),
    /// Summarise previously persisted runs.
    Summarise(SummariseArgs),
    /// Compare a clustering (and optional variable selection) to ground truth.
    Evaluate(EvaluateArgs),
    /// Build and cluster a Matrix of Clusters from several label files.
    Moc(MocArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Preset name (sim2.1, sim2.2, sim2.3, sim2.4, sim2.5, cat3) or a JSON design file.
    #[arg(long)]
    design: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ModelFlags {
    /// Overfitted cluster cap.
    #[arg(long = "k")]
    k: Option<usize>,
    #[arg(long)]
    alpha0: Option<f64>,
    /// Beta hyperparameter for the variable-inclusion prior.
    #[arg(long)]
    a: Option<f64>,
    /// Enable variable selection.
    #[arg(long = "varsel")]
    varsel: bool,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ModelFlags {
    fn resolve(&self, cfg: &ConfigFile) -> Result<ModelConfig> {
        let d = ModelConfig::default();
        Ok(ModelConfig {
            k_max: self.k.or(cfg.get_parsed("k")?).unwrap_or(d.k_max),
            alpha0: self.alpha0.or(cfg.get_parsed("alpha0")?).unwrap_or(d.alpha0),
            a: self.a.or(cfg.get_parsed("a")?).unwrap_or(d.a),
            variable_selection: self.varsel || cfg.get_parsed("varsel")?.unwrap_or(false),
            max_iter: self.max_iter.or(cfg.get_parsed("max_iter")?).unwrap_or(d.max_iter),
            elbo_tol: self.tol.or(cfg.get_parsed("tol")?).unwrap_or(d.elbo_tol),
            seed: self.seed.or(cfg.get_parsed("seed")?).unwrap_or(d.seed),
        })
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Optional JSON schema pinning category counts by variable name.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitAvgArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    /// Number of restarts in the co-clustering matrix.
    #[arg(long)]
    runs: Option<usize>,
    /// Summary method: medvedovic, voi_average or voi_complete.
    #[arg(long, value_parser = parse_method)]
    method: Option<SummaryMethod>,
    /// Variable-selection summary threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// Worker threads for parallel restarts.
    #[arg(long)]
    workers: Option<usize>,
    /// Also write the co-clustering matrix as CSV.
    #[arg(long)]
    pcm_csv: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SummariseArgs {
    /// Directory containing run_*.json records from fit-avg.
    #[arg(long)]
    runs_dir: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: Option<SummaryMethod>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predicted labels CSV.
    #[arg(long)]
    labels: PathBuf,
    /// Ground-truth labels CSV.
    #[arg(long)]
    truth: PathBuf,
    /// Selected-variable JSON (array of booleans, or a summary JSON).
    #[arg(long)]
    selected: Option<PathBuf>,
    /// Ground-truth relevance mask: one 0/1 per line.
    #[arg(long)]
    relevant: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MocArgs {
    /// Two or more label CSV files, one per source clustering.
    #[arg(long, num_args = 2..)]
    labels: Vec<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    /// Number of restarts for the averaged fit.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

/// Flat key = value file; blank lines and #-comments ignored.
#[derive(Default)]
struct ConfigFile {
    entries: HashMap<String, String>,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<ConfigFile> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected key = value", path.display(), i + 1))
            })?;
            entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigFile { entries })
    }

    fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("config key {key} has invalid value {raw:?}"))),
        }
    }

    fn get_method(&self) -> Result<Option<SummaryMethod>> {
        match self.entries.get("method") {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some),
        }
    }
}

fn parse_method(raw: &str) -> std::result::Result<SummaryMethod, String> {
    raw.parse().map_err(|e: Error| e.to_string())
}

fn load_schema(path: Option<&Path>) -> Result<Option<DatasetSchema>> {
    match path {
        None => Ok(None),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(Some(serde_json::from_str(&text)?))
        }
    }
}

fn with_workers<T: Send>(workers: Option<usize>, body: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match workers {
        None => body(),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
            .install(body),
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let mut design = if args.design.ends_with(".json") || Path::new(&args.design).exists() {
        let text = std::fs::read_to_string(&args.design)
            .map_err(|e| Error::io(&args.design, e))?;
        serde_json::from_str::<SimulationDesign>(&text)?
    } else {
        SimulationDesign::preset(&args.design, args.seed.unwrap_or(0))?
    };
    if let Some(seed) = args.seed {
        design.seed = seed;
    }
    let sim = data::simulate(&design)?;
    sim.data.save_csv(&args.out.join("data.csv"))?;
    data::save_labels(&args.out.join("labels.csv"), &sim.true_labels, None)?;
    let meta = SimulationMeta {
        generator: design.generator_id(),
        design,
    };
    io_util::write_json_atomic(&args.out.join("metadata.json"), &meta)?;
    let mask_lines: String = sim
        .relevant_mask
        .iter()
        .map(|&r| if r { "1\n" } else { "0\n" })
        .collect();
    io_util::write_atomic(&args.out.join("relevant.csv"), mask_lines.as_bytes())?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_fit(args: &FitArgs, cfg: &ConfigFile) -> Result<()> {
    let schema = load_schema(args.schema.as_deref())?;
    let dataset = data::load_dataset(&args.data, schema.as_ref())?;
    let config = args.model.resolve(cfg)?;
    let result = fit(&dataset, &config)?;
    io_util::write_json_atomic(&args.out.join("fit.json"), &result.to_record())?;
    data::save_labels(&args.out.join("labels.csv"), &result.labels, None)?;
    println!(
        "fit: elbo = {:.6}, clusters = {}, converged = {}, iterations = {}",
        result.elbo,
        result.n_nonempty,
        result.converged,
        result.state.iter_count
    );
    Ok(())
}

fn summary_config(method: Option<SummaryMethod>, tau: Option<f64>, cfg: &ConfigFile) -> Result<SummaryConfig> {
    let mut sc = SummaryConfig::default();
    if let Some(m) = method.or(cfg.get_method()?) {
        sc.method = m;
    }
    if let Some(t) = tau.or(cfg.get_parsed("tau")?) {
        sc.var_threshold = t;
    }
    sc.validate()?;
    Ok(sc)
}

fn cmd_fit_avg(args: &FitAvgArgs, cfg: &ConfigFile) -> Result<()> {
    let schema = load_schema(args.schema.as_deref())?;
    let dataset = data::load_dataset(&args.data, schema.as_ref())?;
    let config = args.model.resolve(cfg)?;
    let m_runs = args.runs.or(cfg.get_parsed("runs")?).unwrap_or(25);
    let summary_cfg = summary_config(args.method, args.tau, cfg)?;
    let mut manifest = RunManifest::new(config, summary_cfg, args.model.seed.unwrap_or(0), m_runs);
    manifest.data_path = Some(args.data.clone());
    manifest.out_dir = Some(args.out.clone());

    let workers = args.workers.or(cfg.get_parsed("workers")?);
    let avg = with_workers(workers, || run_average(&dataset, &manifest))?;

    io_util::write_json_atomic(&args.out.join("manifest.json"), &manifest)?;
    for (m, record) in avg.fits.iter().enumerate() {
        io_util::write_json_atomic(&args.out.join(format!("run_{m:03}.json")), record)?;
    }
    avg.pcm.save_binary(&args.out.join("pcm.bin"))?;
    if args.pcm_csv {
        avg.pcm.save_csv(&args.out.join("pcm.csv"))?;
    }
    io_util::write_json_atomic(&args.out.join("summary.json"), &avg.summary)?;
    data::save_labels(&args.out.join("summary_labels.csv"), &avg.summary.labels, None)?;
    println!(
        "fit-avg: {} runs, summary clusters = {}{}",
        avg.fits.len(),
        avg.summary.n_clusters,
        avg.summary
            .voi_bound
            .map(|b| format!(", voi bound = {b:.6}"))
            .unwrap_or_default()
    );
    Ok(())
}

fn load_run_records(dir: &Path) -> Result<Vec<FitRecord>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("run_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Input(format!("no run_*.json files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(serde_json::from_str(&text)?)
        })
        .collect()
}

fn cmd_summarise(args: &SummariseArgs, cfg: &ConfigFile) -> Result<()> {
    let records = load_run_records(&args.runs_dir)?;
    let summary_cfg = summary_config(args.method, args.tau, cfg)?;
    let labels: Vec<Vec<usize>> = records.iter().map(|r| r.labels.clone()).collect();
    let pcm = build_coclustering(&labels)?;
    let mut summary = summarize_with_method(&pcm, &summary_cfg)?;
    if records.iter().all(|r| r.config.variable_selection) {
        let runs_c: Vec<Vec<f64>> = records.iter().map(|r| r.c.clone()).collect();
        summary.selected_vars = Some(summarize_variables(&runs_c, &summary_cfg)?);
    }
    let out_dir = args.out.as_deref().unwrap_or(&args.runs_dir);
    io_util::write_json_atomic(&out_dir.join("summary.json"), &summary)?;
    data::save_labels(&out_dir.join("summary_labels.csv"), &summary.labels, None)?;
    println!("summarise: clusters = {}", summary.n_clusters);
    Ok(())
}

fn load_bool_mask(path: &Path) -> Result<Vec<bool>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut mask = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line {
            "0" | "false" => mask.push(false),
            "1" | "true" => mask.push(true),
            other if i == 0 => {
                // Permit a header line.
                let _ = other;
            }
            other => {
                return Err(Error::Parse {
                    row: i,
                    col: 0,
                    message: format!("expected 0/1, got {other:?}"),
                });
            }
        }
    }
    Ok(mask)
}

fn load_selected(path: &Path) -> Result<Vec<bool>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(mask) = serde_json::from_str::<Vec<bool>>(&text) {
        return Ok(mask);
    }
    #[derive(serde::Deserialize)]
    struct WithSelected {
        selected_vars: Vec<bool>,
    }
    let wrapper: WithSelected = serde_json::from_str(&text)?;
    Ok(wrapper.selected_vars)
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let predicted = data::load_labels(&args.labels)?;
    let truth = data::load_labels(&args.truth)?;
    let ari = adjusted_rand_index(&predicted, &truth)?;
    let mut report = MetricReport {
        ari,
        n_clusters_found: count_nonempty(&predicted),
        n_clusters_true: count_nonempty(&truth),
        f1: None,
        precision: None,
        recall: None,
    };
    if let (Some(sel_path), Some(rel_path)) = (&args.selected, &args.relevant) {
        let selected = load_selected(sel_path)?;
        let relevant = load_bool_mask(rel_path)?;
        let (precision, recall, f1) = f1_selection(&selected, &relevant)?;
        report.f1 = Some(f1);
        report.precision = Some(precision);
        report.recall = Some(recall);
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(out) = &args.out {
        io_util::write_json_atomic(&out.join("report.json"), &report)?;
        io_util::write_atomic(&out.join("report.csv"), report.to_csv().as_bytes())?;
    }
    Ok(())
}

fn cmd_moc(args: &MocArgs, cfg: &ConfigFile) -> Result<()> {
    let clusterings: Vec<Vec<usize>> = args
        .labels
        .iter()
        .map(|p| data::load_labels(p))
        .collect::<Result<_>>()?;
    let moc = build_moc(&clusterings)?;
    let config = args.model.resolve(cfg)?;
    let m_runs = args.runs.or(cfg.get_parsed("runs")?).unwrap_or(25);
    let workers = args.workers.or(cfg.get_parsed("workers")?);
    let avg = with_workers(workers, || cluster_moc(&moc, &config, m_runs))?;
    moc.save_csv(&args.out.join("moc.csv"))?;
    avg.pcm.save_binary(&args.out.join("pcm.bin"))?;
    io_util::write_json_atomic(&args.out.join("summary.json"), &avg.summary)?;
    data::save_labels(&args.out.join("summary_labels.csv"), &avg.summary.labels, None)?;
    println!("moc: {} stacked clusters, summary clusters = {}", moc.total_clusters, avg.summary.n_clusters);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args, &cfg),
        Command::FitAvg(args) => cmd_fit_avg(args, &cfg),
        Command::Summarise(args) => cmd_summarise(args, &cfg),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Moc(args) => cmd_moc(args, &cfg),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            std::process::exit(0);
        }
        Err(e) => {
            let _ = e.print();
            std::process::exit(1);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
