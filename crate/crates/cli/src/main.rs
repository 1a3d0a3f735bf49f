use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use serde_json::{json, Value};

mod args;
mod run;

use args::{Cli, Command, TopLevel};
use run::Output;

/// Bad flag values caught before any work starts.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<tknn_core::Error>() {
            return match e {
                tknn_core::Error::InvalidParameter { .. } => EXIT_USAGE,
                tknn_core::Error::Accounting(_) | tknn_core::Error::EnumerationLimit { .. } => EXIT_NUMERICAL,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

/// `{version, command, config, seeds}` prefix shared by every output.
fn envelope(cmd: &Command, seeds: &run::Seeds) -> Result<serde_json::Map<String, Value>> {
    let Value::Object(mut head) = serde_json::to_value(cmd)? else {
        unreachable!("commands serialize as objects")
    };
    head.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    head.insert("seeds".into(), serde_json::to_value(seeds)?);
    Ok(head)
}

fn render(cmd: &Command, output: Output, seeds: &run::Seeds) -> Result<String> {
    let mut head = envelope(cmd, seeds)?;
    Ok(match output {
        Output::Json(v) => {
            head.insert("output".into(), v);
            serde_json::to_string_pretty(&head)? + "\n"
        }
        // CSV readers that honor `#` comments skip the header line
        Output::Csv(body) => format!("# {}\n{body}", serde_json::to_string(&head)?),
    })
}

/// The command recorded in a file written by an earlier run.
fn recorded(path: &Path) -> Result<Command> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = match text.strip_prefix("# ") {
        Some(rest) => serde_json::from_str(rest.lines().next().unwrap_or_default()),
        None => serde_json::from_str(&text),
    }
    .with_context(|| format!("{} is not a tknn output file", path.display()))?;
    let cmd = json!({ "command": value["command"], "config": value["config"] });
    serde_json::from_value(cmd).with_context(|| format!("{} holds no replayable config", path.display()))
}

fn main_inner(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Usage("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let cmd = match cli.command {
        TopLevel::Run(cmd) => cmd,
        TopLevel::Replay { file } => recorded(&file)?,
    };
    let (output, seeds) = run::execute(&cmd)?;
    let text = render(&cmd, output, &seeds)?;
    match &cli.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
