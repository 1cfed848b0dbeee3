//! `spiky-bench`: runs one experiment and writes its CSV/JSON outputs and a
//! manifest into an output directory.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 numerical failure.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde::Serialize;
use serde_json::Value;
use spiky_core::experiments::{Configured, ExperimentOutput, Subcommand};
use spiky_core::seeding::RNG_ALGORITHM;
use spiky_core::Error;

const MANIFEST: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "spiky-bench", version, about = "Spiky-smooth kernel and network experiments")]
struct Cli {
    /// fig1-kernel, fig1-nn, hyperparam-sweep, spectral-bound, activation-table or sine-fit
    #[arg(value_parser = clap::builder::PossibleValuesParser::new(Subcommand::ALL.map(Subcommand::name)))]
    subcommand: String,
    /// Flat `key = value` config file; `#` starts a comment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides one config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for independent runs or sweep cells.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Serialize)]
struct ErrorRecord {
    kind: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    epoch: Option<usize>,
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    library_version: &'static str,
    rng: &'static str,
    subcommand: String,
    seed: u64,
    jobs: usize,
    config_file: Option<PathBuf>,
    overrides: BTreeMap<String, String>,
    config: Value,
    status: &'static str,
    outputs: Vec<String>,
    warnings: Vec<String>,
    summary: Value,
    wall_time_s: f64,
    error: Option<ErrorRecord>,
}

impl Manifest {
    fn write(&self, dir: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        fs::write(dir.join(MANIFEST), text + "\n")
    }
}

fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut params = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`, got `{raw}`", lineno + 1))?;
        params.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(params)
}

fn parse_overrides(sets: &[String]) -> Result<BTreeMap<String, String>, String> {
    sets.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| format!("--set expects KEY=VALUE, got `{s}`"))
        })
        .collect()
}

fn write_outputs(dir: &Path, output: &ExperimentOutput) -> std::io::Result<Vec<String>> {
    let mut written = Vec::new();
    for (stem, table) in &output.tables {
        let name = format!("{stem}.csv");
        table.write_csv(BufWriter::new(fs::File::create(dir.join(&name))?))?;
        written.push(name);
    }
    for (stem, doc) in &output.documents {
        let name = format!("{stem}.json");
        let text = serde_json::to_string_pretty(doc).map_err(std::io::Error::other)?;
        fs::write(dir.join(&name), text + "\n")?;
        written.push(name);
    }
    Ok(written)
}

fn numerical_error(err: &Error) -> ErrorRecord {
    ErrorRecord {
        kind: match err {
            Error::Diverged { .. } => "diverged",
            _ => "numerical",
        },
        message: err.to_string(),
        epoch: match err {
            Error::Diverged { epoch } => Some(*epoch),
            _ => None,
        },
    }
}

fn run(cli: Cli) -> ExitCode {
    let start = Instant::now();
    if let Err(e) = fs::create_dir_all(&cli.out) {
        eprintln!("error: cannot create {}: {e}", cli.out.display());
        return ExitCode::from(1);
    }
    let mut manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        library_version: spiky_core::VERSION,
        rng: RNG_ALGORITHM,
        subcommand: cli.subcommand.clone(),
        seed: cli.seed,
        jobs: cli.jobs,
        config_file: cli.config.clone(),
        overrides: BTreeMap::new(),
        config: Value::Null,
        status: "running",
        outputs: Vec::new(),
        warnings: Vec::new(),
        summary: Value::Null,
        wall_time_s: 0.0,
        error: None,
    };
    let finish = |manifest: &mut Manifest, status: &'static str, code: u8| -> ExitCode {
        manifest.status = status;
        manifest.wall_time_s = start.elapsed().as_secs_f64();
        if let Err(e) = manifest.write(&cli.out) {
            eprintln!("error: cannot write manifest: {e}");
            return ExitCode::from(1);
        }
        ExitCode::from(code)
    };

    let configured = (|| -> Result<Configured, String> {
        let mut params = match &cli.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
                parse_config_text(&text)?
            }
            None => BTreeMap::new(),
        };
        let overrides = parse_overrides(&cli.set)?;
        params.extend(overrides.clone());
        manifest.overrides = overrides;
        let sub: Subcommand = cli.subcommand.parse().map_err(|e: Error| e.to_string())?;
        Configured::new(sub, &params).map_err(|e| e.to_string())
    })();
    let configured = match configured {
        Ok(c) => c,
        Err(message) => {
            eprintln!("config error: {message}");
            manifest.error = Some(ErrorRecord {
                kind: "config",
                message,
                epoch: None,
            });
            return finish(&mut manifest, "error", 2);
        }
    };
    manifest.config = configured.echo();
    if let Err(e) = manifest.write(&cli.out) {
        eprintln!("error: cannot write manifest: {e}");
        return ExitCode::from(1);
    }

    let output = match configured.run(cli.seed, cli.jobs) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("run failed: {e}");
            manifest.error = Some(numerical_error(&e));
            return finish(&mut manifest, "error", 3);
        }
    };
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }
    manifest.warnings = output.warnings.clone();
    manifest.summary = output.summary.clone();
    match write_outputs(&cli.out, &output) {
        Ok(files) => manifest.outputs = files,
        Err(e) => {
            eprintln!("error: cannot write results: {e}");
            manifest.error = Some(ErrorRecord {
                kind: "io",
                message: e.to_string(),
                epoch: None,
            });
            return finish(&mut manifest, "error", 1);
        }
    }
    println!("{}", serde_json::to_string_pretty(&output.summary).unwrap_or_default());
    finish(&mut manifest, "ok", 0)
}

fn main() -> ExitCode {
    run(Cli::parse())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_parsing() {
        let params = parse_config_text("# comment\nn = 30\n\nrho=0.5 # trailing\n").unwrap();
        assert_eq!(params["n"], "30");
        assert_eq!(params["rho"], "0.5");
        assert!(parse_config_text("just a line").is_err());
    }

    #[test]
    fn overrides_parse() {
        let o = parse_overrides(&["a=1".into(), "gammas = 0.5,0.1".into()]).unwrap();
        assert_eq!(o["gammas"], "0.5,0.1");
        assert!(parse_overrides(&["novalue".into()]).is_err());
    }
}
