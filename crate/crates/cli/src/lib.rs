//! Command-line front end: experiment configs in, report bundles out.

pub mod analyze;
pub mod bundle;
pub mod config;
pub mod error;
pub mod recipes;
pub mod reports;
pub mod run;
pub mod verify;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::CliError;

/// Environment variable naming the directory bundles are written under.
pub const OUT_ENV: &str = "LLCSNAP_OUT";
pub const DEFAULT_OUT: &str = "llcsnap-out";

#[derive(Debug, Parser)]
#[command(name = "llcsnap", version, about = "Deterministic last-level cache snapshot simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment config (a path, or `recipe:<name>`) and write its bundle.
    Run {
        config: String,
        /// Bundle directory; defaults to $LLCSNAP_OUT/<output or name>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for trial-parallel experiments.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Compute one analysis over a bundle and print it as CSV.
    Analyze {
        store: PathBuf,
        analysis: String,
        /// `key=value` parameters, e.g. `pid=1 region=heap`.
        params: Vec<String>,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a bundle's stored snapshots against the model invariants.
    Verify { store: PathBuf },
    /// Inspect the shipped recipes.
    Recipes {
        #[command(subcommand)]
        action: RecipeAction,
    },
}

#[derive(Debug, Subcommand)]
enum RecipeAction {
    List,
    Show { name: String },
}

fn load_config(arg: &str) -> Result<(String, String), CliError> {
    if let Some(name) = arg.strip_prefix("recipe:") {
        let text = recipes::find(name)
            .ok_or_else(|| CliError::Usage(format!("no recipe named {name:?}; see `llcsnap recipes list`")))?;
        return Ok((text.to_string(), name.to_string()));
    }
    let path = Path::new(arg);
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{arg}: {e}")))?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    Ok((text, stem))
}

/// Default bundle location: the output root joined with the config's
/// `output`, else its `name`, else the file stem.
pub fn default_bundle_dir(text: &str, fallback: &str) -> Result<PathBuf, CliError> {
    let cfg = config::ExperimentConfig::parse(text)?;
    let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT), PathBuf::from);
    let leaf = cfg.output.or(cfg.name).unwrap_or_else(|| fallback.to_string());
    Ok(root.join(leaf))
}

/// Writes to `out`; a closed pipe (`llcsnap analyze ... | head`) is not an error.
fn emit(out: &mut dyn Write, bytes: &[u8]) -> Result<(), CliError> {
    match out.write_all(bytes).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Failed(e.to_string())),
        _ => Ok(()),
    }
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<i32, CliError> {
    match cmd {
        Command::Run { config, out: dir, threads } => {
            let (text, fallback) = load_config(&config)?;
            let dir = match dir {
                Some(d) => d,
                None => default_bundle_dir(&text, &fallback)?,
            };
            let go = || run::run_config(&text, &dir);
            let outcome = match threads {
                Some(0) => return Err(CliError::Usage("--threads must be positive".into())),
                Some(n) => rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| CliError::Failed(e.to_string()))?
                    .install(go)?,
                None => go()?,
            };
            let mut text = String::new();
            for line in &outcome.summary {
                text.push_str(line);
                text.push('\n');
            }
            text.push_str(&format!(
                "bundle {} ({} artifacts)\n",
                outcome.root.display(),
                outcome.manifest.artifacts.len()
            ));
            emit(out, text.as_bytes())?;
            Ok(0)
        }
        Command::Analyze {
            store,
            analysis,
            params,
            out: file,
        } => {
            let table = analyze::analyze(&store, &analysis, &params)?;
            match file {
                Some(f) => std::fs::write(&f, table.to_bytes()).map_err(|e| CliError::io(&f, e))?,
                None => emit(out, &table.to_bytes())?,
            }
            Ok(0)
        }
        Command::Verify { store } => {
            let report = verify::verify(&store)?;
            emit(out, &report.table().to_bytes())?;
            Ok(report.exit_code())
        }
        Command::Recipes { action } => {
            match action {
                RecipeAction::List => {
                    let mut text = String::new();
                    for (name, body) in recipes::RECIPES {
                        text.push_str(&format!("{name:<24} {}\n", recipes::description(body)));
                    }
                    emit(out, text.as_bytes())?;
                }
                RecipeAction::Show { name } => {
                    let body = recipes::find(&name)
                        .ok_or_else(|| CliError::Usage(format!("no recipe named {name:?}")))?;
                    emit(out, body.as_bytes())?;
                }
            }
            Ok(0)
        }
    }
}

/// Runs the tool on `args` (including the program name), writing normal
/// output to `out` and diagnostics to `err`. Returns the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return 1;
            }
            let _ = write!(out, "{e}");
            return 0;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "llcsnap: {e}");
            e.exit_code()
        }
    }
}
