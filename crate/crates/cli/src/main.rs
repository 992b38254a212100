mod args;
mod commands;

use std::ffi::OsString;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;

use args::Cli;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Errors the binary reports, with the exit code they map to.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(facetrank::Error),
}

impl From<facetrank::Error> for CliError {
    fn from(e: facetrank::Error) -> Self {
        CliError::Core(e)
    }
}

fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            return Some(v.into());
        }
    }
    None
}

/// `key = value` lines; `#` starts a comment. Booleans become bare flags
/// when true and are dropped when false.
fn config_args(text: &str, path: &Path) -> Result<Vec<(String, Option<String>)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "{}:{}: expected key = value",
                path.display(),
                i + 1
            ))
        })?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        match v.trim() {
            "true" => out.push((key, None)),
            "false" => {}
            v => out.push((key, Some(v.to_string()))),
        }
    }
    Ok(out)
}

/// Append config entries whose flag does not already appear on the command
/// line, so explicit flags win.
fn merge_config(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let path = Path::new(&path);
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Core(facetrank::Error::io(path, e)))?;
    let given: Vec<String> = argv
        .iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let mut out = argv;
    for (key, value) in config_args(&text, path)? {
        if given.contains(&key) {
            continue;
        }
        out.push(format!("--{key}").into());
        if let Some(v) = value {
            out.push(v.into());
        }
    }
    Ok(out)
}

fn run(argv: Vec<OsString>) -> Result<(), CliError> {
    let argv = merge_config(argv)?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .try_init()
        .ok();
    commands::dispatch(cli)
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("{}", msg.trim_end());
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() {
                EXIT_DATA
            } else {
                EXIT_RUNTIME
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines() {
        let parsed = config_args(
            "steps = 10\n# note\nmlt=true\nno_rel = false\nlr=1e-4 # inline\n",
            Path::new("c"),
        )
        .unwrap();
        assert_eq!(
            parsed,
            vec![
                ("steps".into(), Some("10".into())),
                ("mlt".into(), None),
                ("lr".into(), Some("1e-4".into()))
            ]
        );
        assert!(config_args("oops\n", Path::new("c")).is_err());
    }

    #[test]
    fn flags_win_over_config() {
        let dir = std::env::temp_dir().join(format!("facetrank-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = dir.join("run.cfg");
        std::fs::write(&cfg, "k = 7\ntag = fromfile\n").unwrap();
        let argv: Vec<OsString> = [
            "facetrank",
            "search",
            "--config",
            cfg.to_str().unwrap(),
            "--k",
            "3",
        ]
        .iter()
        .map(OsString::from)
        .collect();
        let merged: Vec<String> = merge_config(argv)
            .unwrap()
            .into_iter()
            .map(|s| s.into_string().unwrap())
            .collect();
        assert_eq!(&merged[4..], &["--k", "3", "--tag", "fromfile"]);
        std::fs::remove_dir_all(dir).ok();
    }
}
