//! `dockflow` command-line driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime or
//! solver failure.

mod cache;
mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use dockflow::corpus::{generate_synthetic, Corpus, Epoch, SyntheticSpec};
use dockflow::demand::DayType;
use dockflow::sim::{
    aggregate, format_alpha, grid_cells, read_reports, run, run_id, sweep_cells, write_events, write_reports,
    write_sweep, Cell, DaySequence, FitParams, Prepared, SimConfig, SimModels, SimReport,
};

use crate::cache::RunManifest;
use crate::config::{alpha_from, parse_alpha, parse_seeds, FileConfig};

#[derive(Debug, Parser)]
#[command(name = "dockflow", version, about = "Bike-share rebalancing simulator with trucks and incentives")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus.
    Generate(GenerateArgs),
    /// Fit rate, geometry and customer-response models into the cache.
    Fit(ModelArgs),
    /// Run one closed-loop simulation and write its report row.
    Simulate(SimulateArgs),
    /// Run a grid of truck counts, alphas and seeds.
    Sweep(SweepArgs),
    /// Aggregate per-run report rows into the sweep table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    stations: usize,
    #[arg(long, default_value_t = 500)]
    fleet: u32,
    #[arg(long, default_value_t = 10)]
    weekdays: usize,
    #[arg(long, default_value_t = 10)]
    weekends: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Debug, Args, Clone)]
struct ModelArgs {
    /// Corpus directory (stations.csv, rides.csv, snapshot.json, calendar.csv).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Model cache directory [default: <corpus>/cache].
    #[arg(long)]
    cache: Option<PathBuf>,
    /// TOML configuration; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Upper bound of the customer cost distribution, £/km.
    #[arg(long)]
    c_max: Option<f64>,
    /// Fit models when the cache is missing or stale.
    #[arg(long)]
    fit_on_the_fly: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    trucks: Option<usize>,
    /// Payout weight, or `inf` to disable prices.
    #[arg(long, value_parser = parse_alpha)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    day_type: Option<DayType>,
    #[arg(long)]
    burn_in_minutes: Option<i64>,
    /// Do not count diverted customers who find their new station full.
    #[arg(long)]
    exclude_diverted_full: bool,
    /// Report CSV [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV with one row per no-service event.
    #[arg(long)]
    event_log: Option<PathBuf>,
    /// CSV of the plateau table used by the controllers.
    #[arg(long)]
    dump_plateaus: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Truck counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    trucks: Option<Vec<usize>>,
    /// Alphas, comma separated; `inf` disables prices.
    #[arg(long, value_delimiter = ',', value_parser = parse_alpha)]
    alpha: Option<Vec<f64>>,
    /// Seeds, e.g. `1-20` or `1,3,5`.
    #[arg(long, value_parser = parse_seed_list)]
    seeds: Option<SeedList>,
    #[arg(long)]
    day_type: Option<DayType>,
    /// Aggregate table CSV.
    #[arg(long)]
    out: PathBuf,
    /// Per-run CSV [default: <out stem>.runs.csv].
    #[arg(long)]
    runs: Option<PathBuf>,
    /// Worker threads [default: all cores].
    #[arg(long)]
    jobs: Option<usize>,
    /// Reuse completed runs from the per-run CSV.
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Clone)]
struct SeedList(Vec<u64>);

fn parse_seed_list(text: &str) -> Result<SeedList, String> {
    parse_seeds(text).map(SeedList)
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Per-run CSV files written by `simulate` or `sweep`.
    #[arg(long, required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    /// Aggregate table CSV [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) | Failure::Runtime(e) => e,
        }
    }
}

type Outcome<T> = Result<T, Failure>;

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow::anyhow!("{msg}"))
}

fn data<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Data(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| dispatch(cli.command)));
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
        Err(_) => ExitCode::from(3),
    }
}

fn dispatch(command: Command) -> Outcome<()> {
    match command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

fn argv() -> Vec<String> {
    std::env::args().collect()
}

fn cmd_generate(a: &GenerateArgs) -> Outcome<()> {
    let spec = SyntheticSpec {
        station_count: a.stations,
        fleet_size: a.fleet,
        weekday_count: a.weekdays,
        weekend_count: a.weekends,
        seed: a.seed,
        ..SyntheticSpec::default()
    };
    let corpus = generate_synthetic(&spec).map_err(usage)?;
    corpus.write_dir(&a.out).map_err(runtime)?;
    println!(
        "wrote {} stations, {} rides to {}",
        corpus.stations.len(),
        corpus.rides.len(),
        a.out.display()
    );
    Ok(())
}

/// Models plus the identifiers that go into manifests.
struct Loaded {
    models: Arc<SimModels>,
    corpus_dir: PathBuf,
    corpus_hash: String,
    key: String,
}

struct Resolved {
    file: FileConfig,
    fit: FitParams,
}

fn resolve(m: &ModelArgs) -> Outcome<Resolved> {
    let file = FileConfig::load(m.config.as_deref()).map_err(Failure::Usage)?;
    let mut fit = file.fit;
    if let Some(c) = m.c_max {
        if !(c > 0.0 && c.is_finite()) {
            return Err(usage(format!("--c-max must be positive, got {c}")));
        }
        fit.c_max = c;
    }
    Ok(Resolved { file, fit })
}

fn corpus_dir(m: &ModelArgs, file: &FileConfig) -> Outcome<PathBuf> {
    m.corpus
        .clone()
        .or_else(|| file.corpus.clone())
        .ok_or_else(|| usage("no corpus given; pass --corpus or set `corpus` in the config"))
}

fn cache_dir(m: &ModelArgs, file: &FileConfig, corpus: &Path) -> PathBuf {
    m.cache.clone().or_else(|| file.cache.clone()).unwrap_or_else(|| corpus.join("cache"))
}

fn read_corpus(dir: &Path) -> Outcome<Corpus> {
    Corpus::read_dir(dir, Epoch::default())
        .with_context(|| format!("reading corpus {}", dir.display()))
        .map_err(Failure::Data)
}

fn fit_models(dir: &Path, fit: &FitParams) -> Outcome<SimModels> {
    let corpus = read_corpus(dir)?;
    log::info!("fitting models for {} stations, {} rides", corpus.stations.len(), corpus.rides.len());
    SimModels::fit(&corpus, fit).map_err(data)
}

fn load_or_fit(m: &ModelArgs, r: &Resolved, allow_fit: bool) -> Outcome<Loaded> {
    let dir = corpus_dir(m, &r.file)?;
    let hash = cache::corpus_hash(&dir).map_err(data)?;
    let key = cache::models_key(&hash, &r.fit);
    let cache = cache_dir(m, &r.file, &dir);
    let models = match cache::load_models(&cache, &key).map_err(data)? {
        Some(models) => models,
        None if allow_fit => {
            let models = fit_models(&dir, &r.fit)?;
            if let Err(e) = cache::store_models(&cache, &key, &hash, &r.fit, &models) {
                log::warn!("could not write model cache {}: {e:#}", cache.display());
            }
            models
        }
        None => {
            // distinguish corrupt corpora from a missing cache
            read_corpus(&dir)?;
            return Err(data(anyhow::anyhow!(
                "no fitted models for this corpus and parameters in {}; run `dockflow fit` or pass --fit-on-the-fly",
                cache.display()
            )));
        }
    };
    Ok(Loaded {
        models: Arc::new(models),
        corpus_dir: dir,
        corpus_hash: hash,
        key,
    })
}

fn cmd_fit(m: &ModelArgs) -> Outcome<()> {
    let r = resolve(m)?;
    let dir = corpus_dir(m, &r.file)?;
    let hash = cache::corpus_hash(&dir).map_err(data)?;
    let key = cache::models_key(&hash, &r.fit);
    let cache = cache_dir(m, &r.file, &dir);
    let path = cache::models_path(&cache);
    if cache::cached_key(&cache).as_deref() == Some(key.as_str()) {
        println!("models up to date: {}", path.display());
        return Ok(());
    }
    let models = fit_models(&dir, &r.fit)?;
    let path = cache::store_models(&cache, &key, &hash, &r.fit, &models).map_err(runtime)?;
    let manifest = RunManifest {
        command: "fit".into(),
        version: cache::VERSION.into(),
        args: argv(),
        corpus: Some(dir),
        corpus_hash: Some(hash),
        models_key: Some(key),
        config: serde_json::json!({ "fit": r.fit }),
        seeds: vec![r.fit.response.seed],
        outputs: vec![path.clone()],
    };
    cache::write_manifest(&path, &manifest).map_err(runtime)?;
    println!("fitted models written to {}", path.display());
    Ok(())
}

fn base_sim_config(file: &FileConfig) -> SimConfig {
    SimConfig {
        trucks: file.sim.trucks,
        alpha: alpha_from(file.sim.alpha),
        seed: file.sim.seed,
        burn_in_minutes: file.sim.burn_in_minutes,
        routing: file.routing,
        mpc: file.mpc,
        count_diverted_full: file.sim.count_diverted_full,
        record_events: false,
    }
}

fn validate_sim(cfg: &SimConfig, alphas: &[Option<f64>], models: &SimModels) -> Outcome<()> {
    cfg.routing.validate().map_err(usage)?;
    if let Some(d) = cfg.routing.depot {
        if d >= models.stations() {
            return Err(usage(format!("depot {d} out of range for {} stations", models.stations())));
        }
    }
    for &a in alphas {
        if let Some(alpha) = a {
            dockflow::pricing::MpcConfig { alpha, ..cfg.mpc }.validate().map_err(usage)?;
        }
    }
    if cfg.burn_in_minutes < 0 {
        return Err(usage("burn-in must be nonnegative"));
    }
    Ok(())
}

fn create(path: &Path) -> Outcome<fs::File> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(runtime)?;
    }
    fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(Failure::Runtime)
}

fn cmd_simulate(a: &SimulateArgs) -> Outcome<()> {
    let r = resolve(&a.model)?;
    let mut cfg = base_sim_config(&r.file);
    let mut day_type = r.file.sim.day_type;
    if let Some(t) = a.trucks {
        cfg.trucks = t;
    }
    if let Some(alpha) = a.alpha {
        cfg.alpha = alpha_from(alpha);
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = a.day_type {
        day_type = d;
    }
    if let Some(b) = a.burn_in_minutes {
        cfg.burn_in_minutes = b;
    }
    if a.exclude_diverted_full {
        cfg.count_diverted_full = false;
    }
    cfg.record_events = a.event_log.is_some();

    let loaded = load_or_fit(&a.model, &r, a.model.fit_on_the_fly)?;
    validate_sim(&cfg, &[cfg.alpha], &loaded.models)?;
    let prepared = Prepared::new(loaded.models.clone(), DaySequence::standard(day_type));
    let report = run(&prepared, &cfg);
    if report.price_solver_failures > 0 {
        log::warn!("{} price solves did not converge", report.price_solver_failures);
    }
    let id = run_id(cfg.trucks, cfg.alpha, cfg.seed, day_type);

    let mut outputs = Vec::new();
    match &a.out {
        Some(path) => {
            write_reports(create(path)?, &[(id.clone(), report.clone())]).map_err(runtime)?;
            outputs.push(path.clone());
        }
        None => write_reports(std::io::stdout().lock(), &[(id.clone(), report.clone())]).map_err(runtime)?,
    }
    if let Some(path) = &a.event_log {
        write_events(create(path)?, &id, &report.events).map_err(runtime)?;
        outputs.push(path.clone());
    }
    if let Some(path) = &a.dump_plateaus {
        prepared.plateaus.write_csv(std::io::BufWriter::new(create(path)?)).map_err(runtime)?;
        outputs.push(path.clone());
    }
    if let Some(path) = &a.out {
        let manifest = RunManifest {
            command: "simulate".into(),
            version: cache::VERSION.into(),
            args: argv(),
            corpus: Some(loaded.corpus_dir.clone()),
            corpus_hash: Some(loaded.corpus_hash.clone()),
            models_key: Some(loaded.key.clone()),
            config: serde_json::json!({ "fit": r.fit, "sim": cfg, "day_type": day_type, "alpha": format_alpha(cfg.alpha) }),
            seeds: vec![cfg.seed],
            outputs,
        };
        cache::write_manifest(path, &manifest).map_err(runtime)?;
    }
    Ok(())
}

fn default_runs_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "sweep".into());
    out.with_file_name(format!("{stem}.runs.csv"))
}

fn write_runs(path: &Path, rows: &[(String, SimReport)]) -> Outcome<()> {
    let tmp = path.with_extension("csv.tmp");
    write_reports(create(&tmp)?, rows).map_err(runtime)?;
    fs::rename(&tmp, path).map_err(runtime)
}

fn cmd_sweep(a: &SweepArgs) -> Outcome<()> {
    let r = resolve(&a.model)?;
    let base = base_sim_config(&r.file);
    let trucks = a.trucks.clone().unwrap_or_else(|| r.file.sweep.trucks.clone());
    let alphas: Vec<Option<f64>> = a
        .alpha
        .clone()
        .unwrap_or_else(|| r.file.sweep.alphas.clone())
        .into_iter()
        .map(alpha_from)
        .collect();
    let seeds = a.seeds.clone().map(|s| s.0).unwrap_or_else(|| r.file.sweep.seeds.clone());
    let day_type = a.day_type.unwrap_or(r.file.sim.day_type);
    if trucks.is_empty() || alphas.is_empty() || seeds.is_empty() {
        return Err(usage("sweep grid is empty"));
    }
    let cells = grid_cells(&trucks, &alphas, &seeds);
    let runs_path = a.runs.clone().unwrap_or_else(|| default_runs_path(&a.out));

    let mut done: BTreeMap<String, SimReport> = BTreeMap::new();
    if a.resume && runs_path.exists() {
        let file = fs::File::open(&runs_path).map_err(data)?;
        for (id, report) in read_reports(file).map_err(data)? {
            done.insert(id, report);
        }
        log::info!("resuming with {} completed runs", done.len());
    }
    let id_of = |c: &Cell| run_id(c.0, c.1, c.2, day_type);
    let todo: Vec<Cell> = cells.iter().copied().filter(|c| !done.contains_key(&id_of(c))).collect();

    let loaded = load_or_fit(&a.model, &r, a.model.fit_on_the_fly)?;
    validate_sim(&base, &alphas, &loaded.models)?;
    let prepared = Prepared::new(loaded.models.clone(), DaySequence::standard(day_type));
    let jobs = a.jobs.unwrap_or_else(rayon::current_num_threads).max(1);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(runtime)?;

    let ordered = |done: &BTreeMap<String, SimReport>| -> Vec<(String, SimReport)> {
        cells
            .iter()
            .filter_map(|c| {
                let id = id_of(c);
                done.get(&id).map(|rep| (id, rep.clone()))
            })
            .collect()
    };
    // completed runs are flushed after every batch so an interrupted sweep can resume
    for batch in todo.chunks(jobs * 2) {
        let reports = pool.install(|| sweep_cells(&prepared, &base, batch));
        for (c, rep) in batch.iter().zip(reports) {
            done.insert(id_of(c), rep);
        }
        write_runs(&runs_path, &ordered(&done))?;
        log::info!("{} of {} runs complete", done.len().min(cells.len()), cells.len());
    }
    let rows = ordered(&done);
    write_runs(&runs_path, &rows)?;

    // aggregate from the stored rows so fresh and resumed sweeps agree
    let stored = read_reports(fs::File::open(&runs_path).map_err(runtime)?).map_err(runtime)?;
    let reports: Vec<SimReport> = stored.into_iter().map(|(_, r)| r).collect();
    write_sweep(create(&a.out)?, &aggregate(&reports)).map_err(runtime)?;

    let manifest = RunManifest {
        command: "sweep".into(),
        version: cache::VERSION.into(),
        args: argv(),
        corpus: Some(loaded.corpus_dir.clone()),
        corpus_hash: Some(loaded.corpus_hash.clone()),
        models_key: Some(loaded.key.clone()),
        config: serde_json::json!({
            "fit": r.fit,
            "sim": base,
            "day_type": day_type,
            "trucks": trucks,
            "alphas": alphas.iter().map(|&a| format_alpha(a)).collect::<Vec<_>>(),
        }),
        seeds,
        outputs: vec![a.out.clone(), runs_path.clone()],
    };
    cache::write_manifest(&a.out, &manifest).map_err(runtime)?;
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Outcome<()> {
    let mut reports = Vec::new();
    for path in &a.runs {
        let file = fs::File::open(path)
            .with_context(|| format!("opening {}", path.display()))
            .map_err(Failure::Data)?;
        let rows = read_reports(file)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(Failure::Data)?;
        reports.extend(rows.into_iter().map(|(_, r)| r));
    }
    if reports.is_empty() {
        return Err(data(anyhow::anyhow!("no runs found")));
    }
    let rows = aggregate(&reports);
    match &a.out {
        Some(path) => write_sweep(create(path)?, &rows).map_err(runtime)?,
        None => {
            let mut out = std::io::stdout().lock();
            write_sweep(&mut out, &rows).map_err(runtime)?;
            out.flush().map_err(runtime)?;
        }
    }
    Ok(())
}
