//! Command-line front end. [`dispatch`] runs one command in-process; the
//! `qiguard` binary is a thin wrapper around it.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::confound::{run_confound_experiment, ConfoundFixture};
use crate::density::{fit_density, fit_pca, rows_to_matrix, EstimatorKind};
use crate::detector::{
    load_profile, save_profile, select_operating_point, ConfigTag, DetectorProfile, OperatingMode, Outcome, SafeVariant,
};
use crate::embedding::{EmbeddingCache, EmbeddingGateway, RetryPolicy};
use crate::error::{Error, Result};
use crate::eval::{
    calibrate_profile, render_grid, report_from_scored, score_pairing, stratify, GridCell, GridReport, PairingName,
    StratumKey, TestPairing, VectorLookup, GRID_TAGS,
};
use crate::record::{parse_record, read_records, Domain, Record};
use crate::synth::campaign::{run_campaign, CampaignInputs, JOURNAL_FILE};
use crate::synth::plan::{check_training_split, record_split, CampaignPlan};
use crate::validators::{validate_record, ValidatorRuleSet};

#[derive(Debug, Parser)]
#[command(
    name = "qiguard",
    version,
    about = "Quasi-identifier leakage guard",
    arg_required_else_help = true
)]
struct Cli {
    /// Configuration file (TOML); built-in defaults when absent.
    #[arg(long, global = true, value_name = "FILE")]
    config_file: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Embed record files into a vector cache.
    Embed(EmbedArgs),
    /// Fit a safe/unsafe detector profile.
    Train(TrainArgs),
    /// Set abstain thresholds and the operating point on holdout records.
    Calibrate(CalibrateArgs),
    /// Score record lines: one decision line per record.
    Score(ScoreArgs),
    /// Evaluate profiles on test pairings.
    Eval(EvalArgs),
    /// Run a generation campaign.
    Gen(GenArgs),
    /// Validate record lines: one verdict line per record.
    Validate(ValidateArgs),
    /// Run the synthetic confound experiment over several seeds.
    StressTest(StressArgs),
    /// Print the default configuration document.
    DefaultConfig,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    cache: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    cache: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    safe: Vec<PathBuf>,
    /// Borderline-safe augmentation; makes a v4 profile.
    #[arg(long, num_args = 1..)]
    aug: Vec<PathBuf>,
    #[arg(long = "unsafe", required = true, num_args = 1..)]
    unsafe_: Vec<PathBuf>,
    #[arg(long, value_parser = parse_estimator)]
    estimator: Option<EstimatorKind>,
    #[arg(long)]
    pca_dim: Option<usize>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Campaign plan; generated training records are checked against its splits.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    cache: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    safe_holdout: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    unsafe_holdout: Vec<PathBuf>,
    #[arg(long)]
    percentile: Option<f64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<OperatingMode>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    profile: PathBuf,
    /// Vector cache; records missing from it are embedded with the configured stack.
    #[arg(long)]
    cache: PathBuf,
    /// Record lines; standard input when absent.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, required = true, num_args = 1..)]
    profile: Vec<PathBuf>,
    #[arg(long)]
    cache: PathBuf,
    /// TOML file of [[pairing]] tables (name, positive, negative).
    #[arg(long)]
    pairings: PathBuf,
    /// Only these pairings.
    #[arg(long, num_args = 1..)]
    pairing: Vec<PairingName>,
    /// Only these configuration tags (e.g. gmm_v3).
    #[arg(long, num_args = 1..)]
    config: Vec<String>,
    /// Require the full 2 x 2 grid and print it.
    #[arg(long)]
    grid: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Rule-set file; the shipped set for each record's domain when absent.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StressArgs {
    /// Fixture file (TOML); the configured fixture when absent.
    #[arg(long)]
    fixture: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_estimator(s: &str) -> std::result::Result<EstimatorKind, String> {
    match s {
        "gmm" => Ok(EstimatorKind::Gmm),
        "ocsvm" => Ok(EstimatorKind::Ocsvm),
        _ => Err(format!("unknown estimator {s:?} (gmm, ocsvm)")),
    }
}

fn parse_mode(s: &str) -> std::result::Result<OperatingMode, String> {
    match s {
        "conservative" => Ok(OperatingMode::Conservative),
        "balanced" => Ok(OperatingMode::Balanced),
        "strict" => Ok(OperatingMode::Strict),
        _ => Err(format!("unknown mode {s:?} (conservative, balanced, strict)")),
    }
}

/// Provenance record written next to every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    /// Path to sha256 of the file contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub tool_version: String,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Manifest location for an output file.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    std::io::copy(&mut f, &mut h).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(h.finalize()))
}

/// Key under which a file appears in manifests.
pub fn manifest_key(path: &Path) -> String {
    std::fs::canonicalize(path)
        .unwrap_or_else(|_| path.to_path_buf())
        .display()
        .to_string()
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

struct ManifestBuilder<'a> {
    command: &'static str,
    config: &'a Config,
    inputs: Vec<PathBuf>,
    started: u64,
}

impl<'a> ManifestBuilder<'a> {
    fn new(command: &'static str, config: &'a Config) -> Self {
        ManifestBuilder {
            command,
            config,
            inputs: Vec::new(),
            started: unix_now(),
        }
    }

    fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    fn inputs<'p>(&mut self, ps: impl IntoIterator<Item = &'p PathBuf>) {
        self.inputs.extend(ps.into_iter().cloned());
    }

    fn write(self, outputs: &[PathBuf], at: &Path) -> Result<()> {
        let digests = |ps: &[PathBuf]| -> Result<BTreeMap<String, String>> {
            ps.iter().map(|p| Ok((manifest_key(p), sha256_file(p)?))).collect()
        };
        let m = RunManifest {
            command: self.command.to_string(),
            config_hash: self.config.digest(),
            inputs: digests(&self.inputs)?,
            outputs: digests(outputs)?,
            started_unix: self.started,
            finished_unix: unix_now(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        text.push('\n');
        std::fs::write(at, text).map_err(|e| Error::io(at, e))
    }
}

/// Buffered streams so commands can run inside the worker pool.
struct Io {
    stdin: std::io::Cursor<Vec<u8>>,
    out: Vec<u8>,
    err: Vec<u8>,
}

/// Runs one command line and returns the process exit status: 0 on
/// success, 1 for usage, validation and configuration errors, 2 for I/O
/// and endpoint errors.
pub fn dispatch<I, T>(argv: I, stdin: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    let mut io = Io {
        stdin: std::io::Cursor::new(Vec::new()),
        out: Vec::new(),
        err: Vec::new(),
    };
    let reads_stdin = matches!(
        &cli.command,
        Command::Score(ScoreArgs { input: None, .. }) | Command::Validate(ValidateArgs { input: None, .. })
    );
    if reads_stdin {
        if let Err(e) = stdin.read_to_end(io.stdin.get_mut()) {
            let _ = writeln!(err, "error: <stdin>: {e}");
            return 2;
        }
    }
    let code = match run(cli, &mut io) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(io.err, "error: {e}");
            e.exit_code()
        }
    };
    let _ = out.write_all(&io.out).and_then(|_| out.flush());
    let _ = err.write_all(&io.err).and_then(|_| err.flush());
    code
}

fn run(cli: Cli, io: &mut Io) -> Result<()> {
    let mut config = match &cli.config_file {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if cli.threads.is_some() {
        config.threads = cli.threads;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Embed(a) => embed(a, &config, io),
        Command::Train(a) => train(a, &config, io),
        Command::Calibrate(a) => calibrate(a, &config, io),
        Command::Score(a) => score(a, &config, io),
        Command::Eval(a) => eval(a, &config, io),
        Command::Gen(a) => gen(a, &config, io),
        Command::Validate(a) => validate(a, io),
        Command::StressTest(a) => stress_test(a, &config, io),
        Command::DefaultConfig => write_out(io, &Config::default_toml()),
    })
}

fn write_out(io: &mut Io, text: &str) -> Result<()> {
    io.out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn note(io: &mut Io, text: impl AsRef<str>) {
    let _ = writeln!(io.err, "{}", text.as_ref());
}

fn read_all(paths: &[PathBuf]) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_records(p)?);
    }
    Ok(out)
}

fn read_input(input: Option<&Path>, io: &mut Io) -> Result<Vec<Record>> {
    match input {
        Some(p) => read_records(p),
        None => {
            let mut records = Vec::new();
            let mut line = String::new();
            loop {
                line.clear();
                let n = io.stdin.read_line(&mut line).map_err(|e| Error::io("<stdin>", e))?;
                if n == 0 {
                    break;
                }
                if !line.trim().is_empty() {
                    records.push(parse_record(line.trim_end())?);
                }
            }
            Ok(records)
        }
    }
}

fn vectors(lookup: &dyn VectorLookup, records: &[Record]) -> Result<Vec<Vec<f64>>> {
    records
        .iter()
        .map(|r| {
            lookup
                .vector(&r.id)
                .ok_or_else(|| Error::Cache(format!("no embedding for record {}", r.id)))
        })
        .collect()
}

fn gateway(config: &Config, cache: &Path) -> Result<EmbeddingGateway> {
    Ok(
        EmbeddingGateway::http(&config.embedding.stack, cache)?.with_retry(RetryPolicy {
            attempts: config.embedding.retry_attempts,
            base_delay: std::time::Duration::from_millis(config.embedding.retry_base_delay_ms),
        }),
    )
}

fn embed(a: EmbedArgs, config: &Config, io: &mut Io) -> Result<()> {
    let mut m = ManifestBuilder::new("embed", config);
    m.inputs(&a.input);
    let records = read_all(&a.input)?;
    let mut gw = gateway(config, &a.cache)?;
    let before = gw.cache().len();
    gw.embed_batch(&records)?;
    note(
        io,
        format!(
            "{} records, {} newly embedded, cache {}",
            records.len(),
            gw.cache().len() - before,
            a.cache.display()
        ),
    );
    m.write(std::slice::from_ref(&a.cache), &manifest_path(&a.cache))
}

fn train(a: TrainArgs, config: &Config, io: &mut Io) -> Result<()> {
    let mut m = ManifestBuilder::new("train", config);
    m.input(&a.cache);
    m.inputs(a.safe.iter().chain(&a.aug).chain(&a.unsafe_));
    let mut est = config.density.clone();
    if let Some(e) = a.estimator {
        est.estimator = e;
    }
    if let Some(d) = a.pca_dim {
        est.pca_dim = d;
    }
    if a.nu.is_some() {
        est.nu = a.nu;
    }
    if let Some(s) = a.seed {
        est.seed = s;
    }
    let safe = read_all(&a.safe)?;
    let aug = read_all(&a.aug)?;
    let unsafe_ = read_all(&a.unsafe_)?;
    for r in safe.iter().chain(&aug).chain(&unsafe_) {
        if let Some(s) = record_split(r).filter(|s| !s.is_training()) {
            return Err(Error::validation(
                "split",
                format!("record {} belongs to the {} split", r.id, s.as_str()),
            ));
        }
    }
    if let Some(p) = &a.plan {
        m.input(p);
        let plan = CampaignPlan::load(p)?;
        let generated: Vec<Record> = aug.iter().chain(&unsafe_).cloned().collect();
        check_training_split(&generated, &plan)?;
    }
    let cache = EmbeddingCache::read(&a.cache)?;
    let (s_rows, g_rows, u_rows) = (
        vectors(&cache, &safe)?,
        vectors(&cache, &aug)?,
        vectors(&cache, &unsafe_)?,
    );
    let pooled: Vec<&[f64]> = s_rows.iter().chain(&g_rows).chain(&u_rows).map(Vec::as_slice).collect();
    let all = rows_to_matrix(&pooled)?;
    let pca = fit_pca(&all, est.pca_dim.min(all.nrows().min(all.ncols())))?;
    let safe_side: Vec<&[f64]> = s_rows.iter().chain(&g_rows).map(Vec::as_slice).collect();
    let (safe_m, unsafe_m) = (rows_to_matrix(&safe_side)?, rows_to_matrix(&u_rows)?);
    let (safe_model, unsafe_model) = rayon::join(
        || fit_density(&safe_m, &pca, &est),
        || fit_density(&unsafe_m, &pca, &est),
    );
    let tag = ConfigTag {
        estimator: est.estimator,
        variant: if aug.is_empty() {
            SafeVariant::V3
        } else {
            SafeVariant::V4
        },
    };
    let profile = DetectorProfile::new(safe_model?, unsafe_model?, tag)?;
    save_profile(&a.out, &profile)?;
    note(
        io,
        format!(
            "{tag}: {} safe, {} unsafe rows, {} -> {} dims, {}",
            safe_m.nrows(),
            unsafe_m.nrows(),
            pca.input_dim(),
            pca.output_dim(),
            a.out.display()
        ),
    );
    m.write(std::slice::from_ref(&a.out), &manifest_path(&a.out))
}

fn calibrate(a: CalibrateArgs, config: &Config, io: &mut Io) -> Result<()> {
    let mut m = ManifestBuilder::new("calibrate", config);
    m.input(&a.profile);
    m.input(&a.cache);
    m.inputs(a.safe_holdout.iter().chain(&a.unsafe_holdout));
    let mut profile = load_profile(&a.profile)?;
    let cache = EmbeddingCache::read(&a.cache)?;
    let ids = |rs: Vec<Record>| -> Vec<String> { rs.into_iter().map(|r| r.id).collect() };
    let safe_ids = ids(read_all(&a.safe_holdout)?);
    let unsafe_ids = ids(read_all(&a.unsafe_holdout)?);
    let percentile = a.percentile.unwrap_or(config.detector.abstain_percentile);
    calibrate_profile(&mut profile, &safe_ids, &unsafe_ids, &cache, percentile)?;
    let mode = a.mode.unwrap_or(config.detector.operating_mode);
    let mut labeled = Vec::new();
    for (ids, positive) in [(&unsafe_ids, true), (&safe_ids, false)] {
        for id in ids {
            let x = cache
                .vector(id)
                .ok_or_else(|| Error::Cache(format!("no embedding for record {id}")))?;
            let d = profile.decide(&x)?;
            if d.outcome != Outcome::Abstain {
                labeled.push((d.delta, positive));
            }
        }
    }
    profile.tau = select_operating_point(mode, &labeled)?;
    save_profile(&a.out, &profile)?;
    note(
        io,
        format!(
            "{}: tau {} theta_s {} theta_u {} (p{percentile})",
            profile.tag, profile.tau, profile.theta_s, profile.theta_u
        ),
    );
    m.write(std::slice::from_ref(&a.out), &manifest_path(&a.out))
}

#[derive(Serialize)]
struct ScoreLine<'a> {
    id: &'a str,
    outcome: Outcome,
    delta: f64,
    sigma_s: f64,
    sigma_u: f64,
}

fn score(a: ScoreArgs, config: &Config, io: &mut Io) -> Result<()> {
    let profile = load_profile(&a.profile)?;
    let records = read_input(a.input.as_deref(), io)?;
    if records.is_empty() {
        return Ok(());
    }
    let embeddings = gateway(config, &a.cache)?.embed_batch(&records)?;
    let mut buf = String::new();
    for e in &embeddings {
        let d = profile.decide_embedding(e)?;
        let line = ScoreLine {
            id: &e.record_id,
            outcome: d.outcome,
            delta: d.delta,
            sigma_s: d.sigma_s,
            sigma_u: d.sigma_u,
        };
        buf.push_str(&serde_json::to_string(&line).expect("score line serializes"));
        buf.push('\n');
    }
    write_out(io, &buf)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairingSpec {
    name: PairingName,
    positive: Vec<PathBuf>,
    negative: Vec<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairingsFile {
    pairing: Vec<PairingSpec>,
}

struct LoadedPairing {
    pairing: TestPairing,
    records: HashMap<String, Record>,
    files: Vec<PathBuf>,
}

fn load_pairings(path: &Path, only: &[PairingName]) -> Result<Vec<LoadedPairing>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: PairingsFile = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let resolve = |ps: Vec<PathBuf>| -> Vec<PathBuf> {
        ps.into_iter()
            .map(|p| if p.is_relative() { dir.join(p) } else { p })
            .collect()
    };
    let mut out = Vec::new();
    for spec in file.pairing {
        if !only.is_empty() && !only.contains(&spec.name) {
            continue;
        }
        let (pos_files, neg_files) = (resolve(spec.positive), resolve(spec.negative));
        let pos = read_all(&pos_files)?;
        let neg = read_all(&neg_files)?;
        let pairing = TestPairing::new(
            spec.name,
            pos.iter().map(|r| r.id.clone()).collect(),
            neg.iter().map(|r| r.id.clone()).collect(),
        )?;
        let records = pos.into_iter().chain(neg).map(|r| (r.id.clone(), r)).collect();
        out.push(LoadedPairing {
            pairing,
            records,
            files: pos_files.into_iter().chain(neg_files).collect(),
        });
    }
    if out.is_empty() {
        return Err(Error::Config(format!("{}: no pairings selected", path.display())));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub config_tag: String,
    pub tau: f64,
    pub theta_s: f64,
    pub theta_u: f64,
    pub percentile: f64,
}

/// The machine-readable evaluation document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDocument {
    pub thresholds: Vec<Thresholds>,
    pub grid: GridReport,
}

fn eval(a: EvalArgs, config: &Config, io: &mut Io) -> Result<()> {
    let mut m = ManifestBuilder::new("eval", config);
    m.inputs(&a.profile);
    m.input(&a.cache);
    m.input(&a.pairings);
    let mut profiles = Vec::new();
    for p in &a.profile {
        let profile = load_profile(p)?;
        let tag = profile.tag.to_string();
        if a.config.is_empty() || a.config.contains(&tag) {
            if profiles.iter().any(|q: &DetectorProfile| q.tag == profile.tag) {
                return Err(Error::Config(format!("two profiles with tag {tag}")));
            }
            profiles.push(profile);
        }
    }
    if profiles.is_empty() {
        return Err(Error::Config("no profile matches the selected configurations".into()));
    }
    if a.grid {
        let missing: Vec<String> = GRID_TAGS
            .iter()
            .filter(|t| !profiles.iter().any(|p| p.tag == **t))
            .map(|t| t.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!("grid needs profiles for {}", missing.join(", "))));
        }
        profiles.sort_by_key(|p| GRID_TAGS.iter().position(|t| *t == p.tag));
    }
    let pairings = load_pairings(&a.pairings, &a.pairing)?;
    for p in &pairings {
        m.inputs(&p.files);
    }
    let cache = EmbeddingCache::read(&a.cache)?;
    let mut cells = Vec::new();
    for profile in &profiles {
        let mut reports = Vec::new();
        for lp in &pairings {
            let items = score_pairing(profile, &lp.pairing, &cache)?;
            let mut report = report_from_scored(&profile.tag.to_string(), lp.pairing.name, &items, profile.tau)?;
            for key in [StratumKey::BorderlineSubtype, StratumKey::Generator] {
                let side = match key {
                    StratumKey::BorderlineSubtype => &lp.pairing.negative,
                    StratumKey::Generator => &lp.pairing.positive,
                };
                let keyed = side.iter().all(|id| {
                    let r = &lp.records[id];
                    match key {
                        StratumKey::BorderlineSubtype => r.subtype.is_some(),
                        StratumKey::Generator => r.generator.is_some(),
                    }
                });
                if keyed {
                    report.strata.push(stratify(
                        &items,
                        &lp.records,
                        key,
                        profile.tau,
                        config.eval.min_stratum_n,
                    )?);
                }
            }
            reports.push(report);
        }
        cells.push(GridCell {
            tag: profile.tag.to_string(),
            reports,
        });
    }
    let doc = EvalDocument {
        thresholds: profiles
            .iter()
            .map(|p| Thresholds {
                config_tag: p.tag.to_string(),
                tau: p.tau,
                theta_s: p.theta_s,
                theta_u: p.theta_u,
                percentile: p.provenance.percentile,
            })
            .collect(),
        grid: GridReport { cells },
    };
    let mut json = serde_json::to_string_pretty(&doc).expect("report serializes");
    json.push('\n');
    match &a.out {
        Some(path) => {
            std::fs::write(path, &json).map_err(|e| Error::io(path, e))?;
            write_out(io, &render_grid(&doc.grid))?;
            m.write(std::slice::from_ref(path), &manifest_path(path))
        }
        None => write_out(io, &json),
    }
}

fn gen(a: GenArgs, config: &Config, io: &mut Io) -> Result<()> {
    let defaults = toml::Table::try_from(&config.synth).expect("synth section serializes");
    let plan = CampaignPlan::load_with_defaults(&a.plan, defaults)?;
    let mut m = ManifestBuilder::new("gen", config);
    m.input(&a.plan);
    m.input(&plan.seed_corpus);
    m.inputs(plan.rules.iter().chain(&plan.templates));
    let inputs = CampaignInputs::from_plan(&plan)?;
    let outcome = run_campaign(&plan, &inputs, &a.out, a.resume)?;
    for (key, e) in &outcome.ledger.entries {
        note(
            io,
            format!(
                "{key}: {} accepted / {} attempts, {} slots exhausted",
                e.accepts, e.attempts, e.retries_exhausted
            ),
        );
    }
    let mut outputs = outcome.record_files.clone();
    outputs.push(outcome.ledger_path.clone());
    outputs.push(a.out.join(JOURNAL_FILE));
    m.write(&outputs, &a.out.join("manifest.json"))
}

#[derive(Serialize)]
struct VerdictLine<'a> {
    id: &'a str,
    #[serde(flatten)]
    verdict: crate::validators::ValidationVerdict,
}

fn validate(a: ValidateArgs, io: &mut Io) -> Result<()> {
    let fixed = a.rules.as_deref().map(ValidatorRuleSet::load).transpose()?;
    let records = read_input(a.input.as_deref(), io)?;
    let mut builtin: HashMap<Domain, ValidatorRuleSet> = HashMap::new();
    let mut buf = String::new();
    for r in &records {
        let rules = match &fixed {
            Some(rules) => {
                if rules.domain != r.domain {
                    return Err(Error::validation(
                        "domain",
                        format!("record {} is {}, rules are {}", r.id, r.domain, rules.domain),
                    ));
                }
                rules
            }
            None => builtin
                .entry(r.domain)
                .or_insert_with(|| ValidatorRuleSet::builtin(r.domain)),
        };
        let line = VerdictLine {
            id: &r.id,
            verdict: validate_record(r, rules),
        };
        buf.push_str(&serde_json::to_string(&line).expect("verdict serializes"));
        buf.push('\n');
    }
    write_out(io, &buf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressRun {
    pub seed: u64,
    pub grid: GridReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressDocument {
    pub fixture: ConfoundFixture,
    pub runs: Vec<StressRun>,
}

fn stress_test(a: StressArgs, config: &Config, io: &mut Io) -> Result<()> {
    let mut m = ManifestBuilder::new("stress-test", config);
    let fixture = match &a.fixture {
        Some(p) => {
            m.input(p);
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<ConfoundFixture>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => config.confound.clone(),
    };
    fixture.validate()?;
    if a.seeds == 0 {
        return Err(Error::validation("seeds", "at least one seed is required"));
    }
    let mut runs = Vec::new();
    let mut table = format!(
        "{:>6} {:>12} {:>12} {:>12} {:>10} {:>10}\n",
        "seed", "v3 within", "v3 border", "v4sv border", "v3 fpr@0", "v4sv fpr@0"
    );
    for seed in fixture.seed..fixture.seed + a.seeds {
        let f = ConfoundFixture {
            seed,
            ..fixture.clone()
        };
        let t = Instant::now();
        let grid = run_confound_experiment(&f)?;
        log::info!("seed {seed} took {:.2}s", t.elapsed().as_secs_f64());
        let get = |tag: &str, p| grid.get(tag, p).expect("grid cell present");
        let (w, b) = (
            get("gmm_v3", PairingName::WithinDistribution),
            get("gmm_v3", PairingName::BorderlineStress),
        );
        let r = get("ocsvm_v4", PairingName::BorderlineStress);
        table.push_str(&format!(
            "{seed:>6} {:>12.4} {:>12.4} {:>12.4} {:>10.4} {:>10.4}\n",
            w.auroc, b.auroc, r.auroc, b.fpr_at_tau0, r.fpr_at_tau0
        ));
        runs.push(StressRun { seed, grid });
    }
    let doc = StressDocument { fixture, runs };
    let mut json = serde_json::to_string_pretty(&doc).expect("stress document serializes");
    json.push('\n');
    match &a.out {
        Some(path) => {
            std::fs::write(path, &json).map_err(|e| Error::io(path, e))?;
            write_out(io, &table)?;
            m.write(std::slice::from_ref(path), &manifest_path(path))
        }
        None => {
            note(io, table.trim_end());
            write_out(io, &json)
        }
    }
}
