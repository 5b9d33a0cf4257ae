use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use pcor::audit::{coe_match_table, ratio_audit_pairs, summarize_ratios};
use pcor::dataset::{load_dataset_files, Context, Dataset};
use pcor::detectors::{DetectorKind, DetectorSpec};
use pcor::error::{PcorError, Result};
use pcor::experiments::{
    emit_stats, generate_fixture, rng_for, run_experiment, sweep, FixtureParams, Purpose, RepRow, RunConfig,
    RunSummary, StatsFormat, SweepAxis, TargetSelection,
};
use pcor::oracle::{build_reference, records_with_matching_context, ReferenceFile};
use pcor::samplers::{SamplerKind, SamplerSpec, DEFAULT_ENUMERATION_CAP};
use pcor::utility::{UtilityKind, UtilitySpec};

#[derive(Parser)]
#[command(name = "pcor", version, about = "Differentially private release of outlier contexts")]
#[command(args_override_self = true)]
struct Cli {
    /// Key-value file of default flags (`key = value` per line).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate every context and write the reference file.
    Oracle(OracleArgs),
    /// Repeated private releases for one configuration.
    Run(RunArgs),
    /// Repeated runs along one configuration axis.
    Sweep(SweepArgs),
    /// COE match between the dataset and random neighbors.
    CoeMatch(CoeMatchArgs),
    /// Exact probability-ratio audit of the direct mechanism.
    PrivacyCheck(PrivacyArgs),
    /// Write a synthetic dataset, schema and metadata.
    GenFixture(FixtureArgs),
    /// Histogram data from run or sweep output.
    Stats(StatsArgs),
}

#[derive(Args, Serialize)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Args, Serialize, Clone)]
struct DetectorArgs {
    #[arg(long, default_value = "grubbs")]
    detector: DetectorKind,
    #[arg(long, default_value_t = 0.05)]
    grubbs_alpha: f64,
    #[arg(long, default_value_t = 10)]
    lof_k: usize,
    #[arg(long, default_value_t = 1.5)]
    lof_threshold: f64,
    #[arg(long, default_value_t = 2.5e-3)]
    hist_coeff: f64,
    /// Override the detector's minimum population size.
    #[arg(long)]
    min_population: Option<usize>,
}

impl DetectorArgs {
    fn spec_for(&self, kind: DetectorKind) -> Result<DetectorSpec> {
        let spec = DetectorSpec {
            kind,
            grubbs_alpha: self.grubbs_alpha,
            lof_k: self.lof_k,
            lof_threshold: self.lof_threshold,
            hist_freq_coeff: self.hist_coeff,
            min_population: self.min_population,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn spec(&self) -> Result<DetectorSpec> {
        self.spec_for(self.detector)
    }
}

#[derive(Args, Serialize)]
struct UtilityArgs {
    #[arg(long, default_value = "popsize")]
    utility: UtilityKind,
    /// Starting context as a 0/1 string; required by the overlap utility for
    /// the oracle, otherwise searched per target.
    #[arg(long)]
    start_context: Option<Context>,
}

#[derive(Args, Serialize)]
struct TargetArgs {
    /// Target record ids.
    #[arg(long = "target-id", value_delimiter = ',')]
    target_id: Vec<u64>,
    /// Number of random targets among records with a matching context.
    #[arg(long = "targets", conflicts_with = "target_id")]
    targets: Option<usize>,
}

impl TargetArgs {
    fn selection(&self) -> Result<TargetSelection> {
        match (self.target_id.is_empty(), self.targets) {
            (false, _) => Ok(TargetSelection::Ids(self.target_id.clone())),
            (true, Some(k)) => Ok(TargetSelection::Random(k)),
            (true, None) => Err(PcorError::Config("give --target-id or --targets".into())),
        }
    }
}

#[derive(Args, Serialize)]
struct OracleArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    detector: DetectorArgs,
    #[command(flatten)]
    utility: UtilityArgs,
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: usize,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    detector: DetectorArgs,
    #[command(flatten)]
    utility: UtilityArgs,
    #[command(flatten)]
    targets: TargetArgs,
    #[arg(long, default_value = "bfs")]
    sampler: SamplerKind,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 0.2)]
    epsilon: f64,
    /// Attempt cap for uniform sampling.
    #[arg(long, default_value_t = 10_000_000)]
    max_attempts: u64,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reference file for maximum utilities (otherwise enumerated in memory).
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: usize,
    /// Leave wall times out so output is byte-reproducible.
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut sampler = SamplerSpec::new(self.sampler, self.epsilon).with_n(self.n);
        sampler.max_attempts = self.max_attempts;
        sampler.enumeration_cap = self.cap;
        let mut c = RunConfig::new(self.detector.spec()?, sampler, self.targets.selection()?);
        c.utility = self.utility.utility;
        c.starting_context = self.utility.start_context;
        c.reps = self.reps;
        c.seed = self.seed;
        c.timing = !self.no_timing;
        c.cap = self.cap;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
}

#[derive(Args, Serialize)]
struct CoeMatchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    detector: DetectorArgs,
    /// Detectors to tabulate (parameters from the detector flags).
    #[arg(long, value_delimiter = ',', default_value = "grubbs,lof,histogram")]
    detectors: Vec<DetectorKind>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,25")]
    deltas: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[command(flatten)]
    targets: TargetArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: usize,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct PrivacyArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    detector: DetectorArgs,
    #[command(flatten)]
    utility: UtilityArgs,
    #[command(flatten)]
    targets: TargetArgs,
    #[arg(long, default_value_t = 0.2)]
    epsilon: f64,
    #[arg(long, default_value_t = 200)]
    pairs: usize,
    #[arg(long, default_value_t = 1)]
    delta: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: usize,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct FixtureArgs {
    /// Directory for data.csv, schema.txt and meta.json.
    #[arg(long)]
    #[serde(skip)]
    out_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "5,5,4")]
    domains: Vec<usize>,
    #[arg(long, default_value_t = 5000)]
    records: usize,
    #[arg(long, default_value_t = 1)]
    absent: usize,
    #[arg(long, default_value_t = 20)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    global: usize,
    #[arg(long, default_value_t = 15_000.0)]
    spread: f64,
    #[arg(long, default_value_t = 2_500.0)]
    noise_sd: f64,
    #[arg(long, default_value_t = 6.0)]
    hidden_shift: f64,
    #[arg(long, default_value_t = 1.0)]
    skew: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct StatsArgs {
    /// Output of `run` or `sweep`.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: StatsFormat,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

fn config_hash<T: Serialize>(args: &T) -> String {
    let json = serde_json::to_string(args).expect("arguments serialize");
    hex::encode(Sha256::digest(json.as_bytes()))
}

fn meta<T: Serialize>(command: &str, seed: Option<u64>, args: &T) -> serde_json::Value {
    json!({
        "tool": "pcor",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "config_hash": config_hash(args),
    })
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_err(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn io_err(path: &Path, e: io::Error) -> PcorError {
    PcorError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_err(e: impl std::fmt::Display) -> PcorError {
    PcorError::Format {
        what: "output",
        message: e.to_string(),
    }
}

fn load(data: &DataArgs) -> Result<Dataset> {
    load_dataset_files(&data.data, &data.schema)
}

fn jsonl<T: Serialize>(w: &mut dyn Write, key: &str, value: &T) -> Result<()> {
    let line = serde_json::to_string(&json!({ key: value })).map_err(write_err)?;
    writeln!(w, "{line}").map_err(write_err)
}

fn write_runs(w: &mut dyn Write, summaries: &[RunSummary]) -> Result<()> {
    for s in summaries {
        for row in &s.rows {
            jsonl(w, "row", row)?;
        }
        jsonl(w, "summary", s)?;
    }
    Ok(())
}

fn cmd_oracle(a: &OracleArgs) -> Result<()> {
    let dataset = load(&a.data)?;
    let detector = a.detector.spec()?;
    let utility = UtilitySpec {
        kind: a.utility.utility,
        starting_context: a.utility.start_context,
    };
    let reference = build_reference(&dataset, &detector, &utility, a.cap)?;
    reference.save(&a.out)
}

fn cmd_run(a: &RunArgs, command: &str, axis: Option<(SweepAxis, &[String])>, hash_of: &impl Serialize) -> Result<()> {
    let dataset = load(&a.data)?;
    let config = a.config()?;
    let reference = a.reference.as_deref().map(ReferenceFile::load).transpose()?;
    let summaries = match axis {
        None => vec![run_experiment(&dataset, &config, reference.as_ref())?],
        Some((axis, values)) => sweep(&dataset, &config, axis, values, reference.as_ref())?,
    };
    let mut out = open_out(&a.out)?;
    jsonl(&mut out, "meta", &meta(command, Some(a.seed), hash_of))?;
    write_runs(&mut out, &summaries)?;
    out.flush().map_err(write_err)
}

fn pick_targets(
    dataset: &Dataset,
    spec: &DetectorSpec,
    targets: &TargetArgs,
    seed: u64,
    stream: u64,
    cap: usize,
) -> Result<Vec<u64>> {
    match targets.selection()? {
        TargetSelection::Ids(ids) => Ok(ids),
        TargetSelection::Random(k) => {
            let pool: Vec<u64> = records_with_matching_context(dataset, spec, cap)?.into_iter().collect();
            let mut rng = rng_for(seed, Purpose::Targets, stream);
            let k = k.min(pool.len());
            Ok(rand::seq::index::sample(&mut rng, pool.len(), k)
                .into_iter()
                .map(|i| pool[i])
                .collect())
        }
    }
}

fn cmd_coe_match(a: &CoeMatchArgs) -> Result<()> {
    let dataset = load(&a.data)?;
    let mut out = open_out(&a.out)?;
    writeln!(out, "# {}", meta("coe-match", Some(a.seed), a)).map_err(write_err)?;
    let mut w = csv::Writer::from_writer(out);
    for (i, &kind) in a.detectors.iter().enumerate() {
        let spec = a.detector.spec_for(kind)?;
        let targets = pick_targets(&dataset, &spec, &a.targets, a.seed, i as u64, a.cap)?;
        for row in coe_match_table(&dataset, &spec, &a.deltas, &targets, a.trials, a.seed, a.cap)? {
            w.serialize(row).map_err(write_err)?;
        }
    }
    w.flush().map_err(write_err)
}

fn cmd_privacy(a: &PrivacyArgs) -> Result<()> {
    let dataset = load(&a.data)?;
    let spec = a.detector.spec()?;
    let targets = pick_targets(&dataset, &spec, &a.targets, a.seed, 0, a.cap)?;
    if a.utility.utility == UtilityKind::Overlap && a.utility.start_context.is_none() {
        return Err(PcorError::Config(
            "privacy-check with the overlap utility needs --start-context".into(),
        ));
    }
    let utility = UtilitySpec {
        kind: a.utility.utility,
        starting_context: a.utility.start_context,
    };
    let reports = ratio_audit_pairs(
        &dataset, &spec, &utility, &targets, a.pairs, a.delta, a.epsilon, a.seed, a.cap,
    )?;
    let mut out = open_out(&a.out)?;
    writeln!(out, "# {}", meta("privacy-check", Some(a.seed), a)).map_err(write_err)?;
    let summary = serde_json::to_string(&summarize_ratios(&reports, a.epsilon)).map_err(write_err)?;
    let mut w = csv::Writer::from_writer(&mut out);
    for r in &reports {
        w.serialize(r).map_err(write_err)?;
    }
    w.flush().map_err(write_err)?;
    drop(w);
    writeln!(out, "# summary {summary}").map_err(write_err)?;
    out.flush().map_err(write_err)
}

fn cmd_fixture(a: &FixtureArgs) -> Result<()> {
    let params = FixtureParams {
        domains: a.domains.clone(),
        records: a.records,
        absent_values: a.absent,
        hidden_outliers: a.hidden,
        global_outliers: a.global,
        spread: a.spread,
        noise_sd: a.noise_sd,
        hidden_shift: a.hidden_shift,
        skew: a.skew,
        seed: a.seed,
        ..FixtureParams::default()
    };
    let (dataset, fixture_meta) = generate_fixture(&params)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| io_err(&a.out_dir, e))?;
    let data = a.out_dir.join("data.csv");
    dataset.write_csv(BufWriter::new(File::create(&data).map_err(|e| io_err(&data, e))?))?;
    let schema = a.out_dir.join("schema.txt");
    fs::write(&schema, dataset.schema().to_text()).map_err(|e| io_err(&schema, e))?;
    let meta_path = a.out_dir.join("meta.json");
    let body = json!({ "meta": meta("gen-fixture", Some(a.seed), a), "fixture": fixture_meta });
    let text = serde_json::to_string_pretty(&body).map_err(write_err)? + "\n";
    fs::write(&meta_path, text).map_err(|e| io_err(&meta_path, e))
}

/// Rebuilds summaries (with rows) from `run`/`sweep` output.
fn read_runs(path: &Path) -> Result<Vec<RunSummary>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut summaries = Vec::new();
    let mut rows: Vec<RepRow> = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| io_err(path, e))?;
        let bad = |e: serde_json::Error| PcorError::Format {
            what: "run output",
            message: e.to_string(),
        };
        let mut value: serde_json::Value = serde_json::from_str(&line).map_err(bad)?;
        if let Some(row) = value.get_mut("row") {
            rows.push(serde_json::from_value(row.take()).map_err(bad)?);
        } else if let Some(s) = value.get_mut("summary") {
            let mut s: RunSummary = serde_json::from_value(s.take()).map_err(bad)?;
            s.rows = std::mem::take(&mut rows);
            summaries.push(s);
        }
    }
    Ok(summaries)
}

fn cmd_stats(a: &StatsArgs) -> Result<()> {
    let mut summaries = Vec::new();
    for p in &a.input {
        summaries.extend(read_runs(p)?);
    }
    let mut out = open_out(&a.out)?;
    if a.format == StatsFormat::Csv {
        writeln!(out, "# {}", meta("stats", None, a)).map_err(write_err)?;
    }
    emit_stats(&summaries, a.format, &mut out)?;
    out.flush().map_err(write_err)
}

/// Turns `key = value` lines into flags placed right after the subcommand,
/// so flags given on the command line take precedence.
fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let Some(i) = args.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(args);
    };
    let (path, drop) = match args[i].strip_prefix("--config=") {
        Some(p) => (p.to_string(), 1),
        None => (
            args.get(i + 1)
                .cloned()
                .ok_or_else(|| PcorError::Config("--config needs a file".into()))?,
            2,
        ),
    };
    let text = fs::read_to_string(&path).map_err(|e| io_err(Path::new(&path), e))?;
    let mut injected = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| PcorError::Config(format!("{path}:{}: expected `key = value`", n + 1)))?;
        let flag = format!("--{}", key.trim().replace('_', "-"));
        match value.trim() {
            "true" => injected.push(flag),
            "false" => {}
            v => {
                injected.push(flag);
                injected.push(v.to_string());
            }
        }
    }
    let mut rest: Vec<String> = args[..i].iter().chain(&args[i + drop..]).cloned().collect();
    // the subcommand is the first argument that is not a global flag or its value
    let mut sub = 1;
    while sub < rest.len() && rest[sub].starts_with("--") {
        sub += if rest[sub].contains('=') { 1 } else { 2 };
    }
    let at = (sub + 1).min(rest.len());
    rest.splice(at..at, injected);
    Ok(rest)
}

fn run() -> Result<()> {
    let args = expand_config(std::env::args().collect())?;
    let cli = Cli::parse_from(args);
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| PcorError::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::Oracle(a) => cmd_oracle(a),
        Command::Run(a) => cmd_run(a, "run", None, a),
        Command::Sweep(a) => cmd_run(&a.run, "sweep", Some((a.axis, &a.values)), a),
        Command::CoeMatch(a) => cmd_coe_match(a),
        Command::PrivacyCheck(a) => cmd_privacy(a),
        Command::GenFixture(a) => cmd_fixture(a),
        Command::Stats(a) => cmd_stats(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pcor: {e}");
            ExitCode::FAILURE
        }
    }
}
