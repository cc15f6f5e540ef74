use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use trajpref::eval::{MetricReport, REPORT_K};
use trajpref::pipeline::{decode_session, rank_session, write_atomic, Decoded, RunConfig};
use trajpref::rank::RankMethod;
use trajpref::synth::{gen_session, read_bundle, write_bundle, SESSION_FILE};
use trajpref::Error;

const EXIT_IO: u8 = 2;
const EXIT_FORMAT: u8 = 3;
const EXIT_USAGE: u8 = 4;

#[derive(Parser)]
#[command(name = "trajpref", version, about = "Simulate, decode and rank trajectory preference sessions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Existing output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset bundle.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Decode out-of-fold pairwise verdicts from a dataset.
    Decode {
        dataset: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Rank each task's candidates from decoded verdicts and score the rankings.
    Rank {
        verdicts: PathBuf,
        dataset: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of tpp, borda, borda_conf, feature.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
    /// Merge the reports of several rank runs.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) => EXIT_IO,
            Error::Parameter(_) => EXIT_USAGE,
            _ => EXIT_FORMAT,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_IO,
        msg: format!("{}: {e}", path.display()),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| io_failure(path, e))
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_json(&read(p)?)?,
        None => RunConfig::default(),
    };
    if seed.is_some() {
        cfg.seed = seed;
        cfg = cfg.resolved();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn check_out(dir: &Path) -> CliResult<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_IO,
            msg: format!("output directory {} does not exist", dir.display()),
        })
    }
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config_sha256: String,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

/// Hashes every written output and records them, with the inputs, in `manifest.json`.
fn write_manifest(
    out: &Path,
    command: &'static str,
    cfg: Option<&RunConfig>,
    inputs: &[(String, &Path)],
    outputs: &[PathBuf],
) -> CliResult<()> {
    let config_sha256 = match cfg {
        Some(c) => sha256_hex(&serde_json::to_vec(c).map_err(Error::from)?),
        None => String::new(),
    };
    let mut hashed = BTreeMap::new();
    for rel in outputs {
        hashed.insert(rel.to_string_lossy().replace('\\', "/"), sha256_hex(&read(&out.join(rel))?));
    }
    let mut ins = BTreeMap::new();
    for (role, p) in inputs {
        // a dataset is identified by its session file
        let bytes = if p.is_dir() { read(&p.join(SESSION_FILE))? } else { read(p)? };
        ins.insert(role.clone(), sha256_hex(&bytes));
    }
    let manifest = Manifest {
        tool: "trajpref",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config_sha256,
        inputs: ins,
        outputs: hashed,
    };
    write_atomic(&out.join("manifest.json"), &serde_json::to_vec_pretty(&manifest).map_err(Error::from)?)?;
    Ok(())
}

fn write_out(out: &Path, name: &str, bytes: &[u8], written: &mut Vec<PathBuf>) -> CliResult<()> {
    write_atomic(&out.join(name), bytes)?;
    written.push(PathBuf::from(name));
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(v).map_err(Error::from)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn simulate(common: &Common, seed: Option<u64>) -> CliResult<()> {
    let cfg = load_config(common.config.as_deref(), seed)?;
    check_out(&common.out)?;
    let session = gen_session(&cfg.synth)?;
    let written = write_bundle(&session, &common.out)?;
    write_manifest(&common.out, "simulate", Some(&cfg), &[], &written)?;
    println!(
        "simulated {} tasks, {} comparisons into {}",
        session.tasks.len(),
        session.truth.comparisons.len(),
        common.out.display()
    );
    Ok(())
}

fn decode(dataset: &Path, common: &Common) -> CliResult<()> {
    let cfg = load_config(common.config.as_deref(), None)?;
    check_out(&common.out)?;
    let session = read_bundle(dataset)?;
    let decoded = decode_session(&session, &cfg.decode)?;
    let mut written = Vec::new();
    write_out(&common.out, "verdicts.json", &to_json(&decoded)?, &mut written)?;
    write_manifest(&common.out, "decode", Some(&cfg), &[("dataset".into(), dataset)], &written)?;
    let acc = decoded.accuracies(&session)?;
    let line: Vec<String> = acc.iter().map(|(s, a)| format!("{}={a:.4}", s.name())).collect();
    println!("accuracy {}", line.join(" "));
    Ok(())
}

fn parse_methods(names: &[String]) -> CliResult<Vec<RankMethod>> {
    let mut methods = Vec::new();
    for name in names {
        let m: RankMethod = name.trim().parse().map_err(|e: Error| Failure {
            code: EXIT_USAGE,
            msg: e.to_string(),
        })?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    if methods.is_empty() {
        return Err(Failure {
            code: EXIT_USAGE,
            msg: "no ranking methods given".into(),
        });
    }
    Ok(methods)
}

fn rank(verdicts: &Path, dataset: &Path, common: &Common, methods: Option<&[String]>) -> CliResult<()> {
    let mut cfg = load_config(common.config.as_deref(), None)?;
    if let Some(names) = methods {
        cfg.rank.methods = parse_methods(names)?;
    }
    check_out(&common.out)?;
    let session = read_bundle(dataset)?;
    let decoded: Decoded = serde_json::from_slice(&read(verdicts)?)
        .map_err(|e| Failure {
            code: EXIT_FORMAT,
            msg: format!("{}: {e}", verdicts.display()),
        })?;
    if decoded.participant != session.participant() {
        return Err(Failure {
            code: EXIT_FORMAT,
            msg: format!(
                "verdicts belong to {:?}, dataset to {:?}",
                decoded.participant,
                session.participant()
            ),
        });
    }
    let out = rank_session(&session, &decoded, &cfg.rank)?;
    let mut written = Vec::new();
    write_out(&common.out, "rankings.json", &to_json(&out.rankings)?, &mut written)?;
    write_out(&common.out, "report.json", &to_json(&out.report)?, &mut written)?;
    write_out(&common.out, "report.txt", out.report.to_table().as_bytes(), &mut written)?;
    write_manifest(&common.out, "rank", Some(&cfg), &[("verdicts".into(), verdicts), ("dataset".into(), dataset)], &written)?;
    print!("{}", out.report.to_table());
    Ok(())
}

fn report(runs: &[PathBuf], out: &Path) -> CliResult<()> {
    check_out(out)?;
    let mut reports = Vec::with_capacity(runs.len());
    let mut inputs = Vec::with_capacity(runs.len());
    for dir in runs {
        let path = dir.join("report.json");
        let r: MetricReport = serde_json::from_slice(&read(&path)?).map_err(|e| Failure {
            code: EXIT_FORMAT,
            msg: format!("{}: {e}", path.display()),
        })?;
        reports.push(r);
        inputs.push(path);
    }
    let merged = MetricReport::merge(&reports)?;
    let mut written = Vec::new();
    write_out(out, "report.json", &to_json(&merged)?, &mut written)?;
    write_out(out, "report.txt", merged.to_table().as_bytes(), &mut written)?;
    // participant x task matrices of nDCG@k, one per source, method and k
    for (source, sr) in &merged.sources {
        for method in sr.methods.keys() {
            for k in REPORT_K {
                let name = format!("ndcg{k}_{}_{}.csv", source.name(), method.name());
                write_out(out, &name, merged.to_csv_matrix(*source, *method, k)?.as_bytes(), &mut written)?;
            }
        }
    }
    let input_refs: Vec<(String, &Path)> = inputs.iter().enumerate().map(|(i, p)| (format!("run{i}"), p.as_path())).collect();
    write_manifest(out, "report", None, &input_refs, &written)?;
    print!("{}", merged.to_table());
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate { common, seed } => simulate(common, *seed),
        Command::Decode { dataset, common } => decode(dataset, common),
        Command::Rank {
            verdicts,
            dataset,
            common,
            methods,
        } => rank(verdicts, dataset, common, methods.as_deref()),
        Command::Report { runs, out } => report(runs, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("trajpref: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
