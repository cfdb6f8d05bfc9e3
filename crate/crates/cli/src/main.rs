//! `nestavg`: run simulation studies, oracle diagnostics, limiting curves
//! and the inequality battery.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid input, 3 failed verify.

mod manifest;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nestavg::asymptotics::{limit_ratio, psi_limit, psi_star, DecayKind, DecayModel, Kappa};
use nestavg::simlab::{self, DiagnosticsConfig, StudyConfig};
use nestavg::verify;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use manifest::{digest, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "nestavg", version, about = "Nested model selection vs model averaging lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true, env = "NESTAVG_JOBS")]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replace existing output files.
    #[arg(long, global = true)]
    force: bool,
    /// Seed overriding the configuration's.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run Monte Carlo studies from a JSON configuration.
    Sim {
        #[arg(long)]
        config: PathBuf,
        /// Also write every replicate's choices as JSON lines.
        #[arg(long)]
        audit: bool,
        /// Keep one design per setting and resample only the noise.
        #[arg(long)]
        fixed_design: bool,
    },
    /// Exact oracle quantities along a sample-size grid.
    Oracle {
        #[arg(long)]
        config: PathBuf,
    },
    /// Limiting grid-averaging ratios under algebraic decay.
    Asym {
        #[arg(long)]
        alpha: f64,
        /// Comma-separated κ values; `inf` for κ = ∞.
        #[arg(long, value_delimiter = ',', required = true)]
        kappa: Vec<String>,
        /// Grid resolutions as `a..b` (inclusive) or a comma list.
        #[arg(long = "N", value_name = "RANGE")]
        n_grid: String,
    },
    /// Check the finite-sample oracle inequalities on seeded instances.
    Verify {
        #[arg(long, default_value_t = 200)]
        instances: usize,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("cannot read config {path}: {source}")]
    ReadConfig { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    ParseConfig { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Usage(String),
    #[error("refusing to overwrite {0}; pass --force to replace it")]
    Exists(PathBuf),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] nestavg::Error),
    #[error("{0} check(s) failed")]
    VerifyFailed(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use nestavg::Error as E;
        match self {
            CliError::VerifyFailed(_) => 3,
            CliError::Write { .. } => 1,
            CliError::Core(e) => match e {
                E::Config(_)
                | E::Domain(_)
                | E::NegativeBeta(_)
                | E::InvalidN(_)
                | E::KindMismatch
                | E::RegimeUndetermined
                | E::DimensionMismatch(_) => 2,
                _ => 1,
            },
            _ => 2,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// One study or several in a JSON array.
#[derive(Debug, Deserialize, Serialize)]
#[serde(untagged)]
enum StudyFile {
    One(StudyConfig),
    Many(Vec<StudyConfig>),
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|source| CliError::ReadConfig {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::ParseConfig {
        path: path.to_path_buf(),
        source,
    })
}

/// Output files of one run, checked before any work starts.
struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn plan(dir: &Path, names: &[String], force: bool) -> CliResult<Self> {
        let files: Vec<PathBuf> = names.iter().map(|n| dir.join(n)).collect();
        if !force {
            if let Some(p) = files.iter().find(|p| p.exists()) {
                return Err(CliError::Exists(p.clone()));
            }
        }
        fs::create_dir_all(dir).map_err(|source| CliError::Write {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files,
        })
    }

    fn write(&self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}

fn write_manifest(
    outputs: &Outputs,
    command: &str,
    config: &Value,
    seed: Option<u64>,
    start: Instant,
) -> CliResult<()> {
    let manifest = RunManifest {
        command: command.to_string(),
        config_digest: digest(config),
        seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: outputs.files.iter().filter(|p| !is_manifest(p)).cloned().collect(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    outputs.write(&format!("{command}.manifest.json"), &json)?;
    Ok(())
}

fn is_manifest(p: &Path) -> bool {
    p.to_string_lossy().ends_with(".manifest.json")
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("configuration serializes")
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> nestavg::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn cmd_sim(common: &Common, config: &Path, audit: bool, fixed_design: bool) -> CliResult<()> {
    let start = Instant::now();
    let mut studies = match read_json::<StudyFile>(config)? {
        StudyFile::One(s) => vec![s],
        StudyFile::Many(v) => v,
    };
    if studies.is_empty() {
        return Err(CliError::Usage(format!("{} lists no studies", config.display())));
    }
    for s in &mut studies {
        if let Some(seed) = common.seed {
            s.seed = seed;
        }
        s.fixed_design |= fixed_design;
        s.validate()?;
    }
    let mut stems: Vec<String> = studies.iter().map(StudyConfig::stem).collect();
    stems.sort();
    if let Some(w) = stems.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::Usage(format!(
            "two studies share the example and decay family {}; merge them into one",
            w[0]
        )));
    }
    let mut names = vec!["sim.manifest.json".to_string()];
    for s in &studies {
        names.push(format!("{}.csv", s.stem()));
        if audit {
            names.push(format!("{}.audit.jsonl", s.stem()));
        }
    }
    let out = Outputs::plan(&out_dir(common), &names, common.force)?;

    for study in &studies {
        let mut results = Vec::new();
        let mut audit_lines = Vec::new();
        for mut setting in study.settings() {
            setting.audit = audit;
            eprintln!(
                "{} n={} r2={} decay={}: {} replicates",
                study.stem(),
                setting.n,
                setting.r2,
                setting.decay_param(),
                setting.replications
            );
            let mut res = simlab::run_study(&setting)?;
            for reason in &res.abort_reasons {
                eprintln!("  aborted {reason}");
            }
            if let Some(records) = res.audit.take() {
                for r in records {
                    let line = serde_json::json!({
                        "n": setting.n,
                        "r2": setting.r2,
                        "decay_param": setting.decay_param(),
                        "record": r,
                    });
                    audit_lines.push(line.to_string());
                }
            }
            results.push(res);
        }
        let csv = csv_bytes(|b| simlab::write_results_csv(&results, b))?;
        out.write(&format!("{}.csv", study.stem()), &csv)?;
        if audit {
            let mut text = audit_lines.join("\n");
            text.push('\n');
            out.write(&format!("{}.audit.jsonl", study.stem()), text.as_bytes())?;
        }
    }
    let seed = studies.first().map(|s| s.seed);
    write_manifest(&out, "sim", &to_value(&studies), seed, start)
}

fn cmd_oracle(common: &Common, config: &Path) -> CliResult<()> {
    let start = Instant::now();
    let mut cfg: DiagnosticsConfig = read_json(config)?;
    let mut seed = None;
    if let DiagnosticsConfig::Example { setting, .. } = &mut cfg {
        if let Some(s) = common.seed {
            setting.seed = s;
        }
        seed = Some(setting.seed);
    }
    let names = ["oracle.csv".to_string(), "oracle.manifest.json".to_string()];
    let out = Outputs::plan(&out_dir(common), &names, common.force)?;
    let rows = simlab::oracle_diagnostics(&cfg)?;
    let csv = csv_bytes(|b| simlab::write_diagnostics_csv(&rows, b))?;
    out.write("oracle.csv", &csv)?;
    write_manifest(&out, "oracle", &to_value(&cfg), seed, start)
}

fn parse_kappa(s: &str) -> CliResult<Kappa> {
    let t = s.trim();
    if t.eq_ignore_ascii_case("inf") {
        return Ok(Kappa::Infinite);
    }
    match t.parse::<f64>() {
        Ok(k) if k > 0.0 && k.is_finite() => Ok(Kappa::Finite(k)),
        _ => Err(CliError::Usage(format!("--kappa expects positive numbers or `inf`, got `{t}`"))),
    }
}

fn parse_grid(s: &str) -> CliResult<Vec<usize>> {
    let bad = || CliError::Usage(format!("--N expects `a..b` or a comma list of positive integers, got `{s}`"));
    let parse = |t: &str| t.trim().parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(bad);
    let values = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (parse(a)?, parse(b.trim_start_matches('='))?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',').map(parse).collect::<CliResult<Vec<_>>>()?
    };
    Ok(values)
}

fn kappa_label(k: Kappa) -> String {
    match k {
        Kappa::Finite(v) => format!("{v:e}"),
        Kappa::Infinite => "inf".into(),
    }
}

fn asym_csv(alpha: f64, kappas: &[Kappa], grid: &[usize]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Usage(e.to_string());
    w.write_record(["kappa", "N", "psi_star", "limit_ratio", "psi_limit"])
        .map_err(io)?;
    for &kappa in kappas {
        let lim = psi_limit(alpha, kappa)?;
        for &n in grid {
            let model = DecayModel {
                kind: DecayKind::Algebraic { alpha },
                sigma2: 1.0,
                kappa,
                n_grid: n,
            };
            w.write_record([
                kappa_label(kappa),
                n.to_string(),
                format!("{:e}", psi_star(n, alpha, kappa)?),
                format!("{:e}", limit_ratio(&model)?),
                format!("{lim:e}"),
            ])
            .map_err(io)?;
        }
    }
    w.into_inner().map_err(|e| CliError::Usage(e.to_string()))
}

fn cmd_asym(common: &Common, alpha: f64, kappa: &[String], n_grid: &str) -> CliResult<()> {
    let start = Instant::now();
    let kappas = kappa.iter().map(|s| parse_kappa(s)).collect::<CliResult<Vec<_>>>()?;
    let grid = parse_grid(n_grid)?;
    let csv = asym_csv(alpha, &kappas, &grid)?;
    match &common.out {
        None => {
            std::io::stdout()
                .write_all(&csv)
                .map_err(|source| CliError::Write {
                    path: "<stdout>".into(),
                    source,
                })?;
            Ok(())
        }
        Some(dir) => {
            let names = ["asym.csv".to_string(), "asym.manifest.json".to_string()];
            let out = Outputs::plan(dir, &names, common.force)?;
            out.write("asym.csv", &csv)?;
            let config = serde_json::json!({ "alpha": alpha, "kappa": kappa, "N": grid });
            write_manifest(&out, "asym", &config, None, start)
        }
    }
}

fn cmd_verify(common: &Common, instances: usize) -> CliResult<()> {
    let seed = common.seed.unwrap_or(7);
    if instances == 0 {
        return Err(CliError::Usage("--instances must be positive".into()));
    }
    let report = verify::run_battery(seed, instances)?;
    for c in &report.checks {
        println!(
            "{} {}: {} checks, {} violations, worst {:e}",
            if c.passed() { "PASS" } else { "FAIL" },
            c.name,
            c.checked,
            c.violations,
            c.worst
        );
    }
    let failed = report.checks.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        return Err(CliError::VerifyFailed(failed));
    }
    Ok(())
}

fn out_dir(common: &Common) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(jobs) = cli.common.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;
    }
    match &cli.command {
        Command::Sim {
            config,
            audit,
            fixed_design,
        } => cmd_sim(&cli.common, config, *audit, *fixed_design),
        Command::Oracle { config } => cmd_oracle(&cli.common, config),
        Command::Asym { alpha, kappa, n_grid } => cmd_asym(&cli.common, *alpha, kappa, n_grid),
        Command::Verify { instances } => cmd_verify(&cli.common, *instances),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
