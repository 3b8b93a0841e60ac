//! `key = value` run files.
//!
//! Every key is the long name of a flag of the chosen subcommand. Entries are
//! spliced into the argument list ahead of the real flags; an entry whose flag
//! also appears on the command line is dropped, so flags win.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::CommandFactory;

use crate::args::Cli;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: u64,
}

/// Parses a run file. Blank lines and lines starting with `#` are skipped;
/// keys may carry a leading `--` and values may be quoted.
pub fn parse(text: &str, path: &Path) -> CliResult<Vec<Entry>> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i as u64 + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(CliError::Malformed {
                path: path.to_path_buf(),
                line,
                message: format!("expected key = value, found '{trimmed}'"),
            });
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim();
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(value)
            .to_string();
        if key.is_empty() {
            return Err(CliError::Malformed {
                path: path.to_path_buf(),
                line,
                message: "empty key".into(),
            });
        }
        entries.push(Entry { key, value, line });
    }
    Ok(entries)
}

fn long_names(cmd: &clap::Command) -> BTreeSet<String> {
    cmd.get_arguments()
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect()
}

fn given_on_command_line(rest: &[OsString], key: &str) -> bool {
    let flag = format!("--{key}");
    rest.iter().any(|arg| {
        let text = arg.to_string_lossy();
        text == flag || text.starts_with(&format!("{flag}="))
    })
}

fn config_path(rest: &[OsString]) -> Option<PathBuf> {
    let mut iter = rest.iter();
    while let Some(arg) = iter.next() {
        let text = arg.to_string_lossy();
        if text == "--config" {
            return iter.next().map(PathBuf::from);
        }
        if let Some(path) = text.strip_prefix("--config=") {
            return Some(PathBuf::from(path));
        }
    }
    None
}

/// Splices the entries of the `--config` file, if any, into `argv`.
pub fn expand(argv: Vec<OsString>) -> CliResult<Vec<OsString>> {
    if argv.len() < 3 {
        return Ok(argv);
    }
    let root = Cli::command();
    let sub_name = argv[1].to_string_lossy().into_owned();
    let Some(sub) = root.find_subcommand(&sub_name) else {
        return Ok(argv);
    };
    let Some(path) = config_path(&argv[2..]) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let entries = parse(&text, &path)?;

    let accepted = long_names(sub);
    let anywhere: BTreeSet<String> = root.get_subcommands().flat_map(long_names).collect();
    let mut injected = Vec::new();
    for entry in entries {
        if entry.key == "config" {
            return Err(CliError::Usage(format!(
                "{}:{}: config files cannot include other config files",
                path.display(),
                entry.line
            )));
        }
        if given_on_command_line(&argv[2..], &entry.key) {
            log::debug!("--{} on the command line overrides the config file", entry.key);
        } else if accepted.contains(&entry.key) {
            injected.push(OsString::from(format!("--{}={}", entry.key, entry.value)));
        } else if anywhere.contains(&entry.key) {
            log::debug!("config key '{}' does not apply to {sub_name}", entry.key);
        } else {
            return Err(CliError::Usage(format!(
                "{}:{}: unknown config key '{}'",
                path.display(),
                entry.line,
                entry.key
            )));
        }
    }
    let mut out = Vec::with_capacity(argv.len() + injected.len());
    out.extend(argv[..2].iter().cloned());
    out.extend(injected);
    out.extend(argv[2..].iter().cloned());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(args: &[&str]) -> Vec<OsString> {
        args.iter().map(OsString::from).collect()
    }

    #[test]
    fn parses_comments_quotes_and_dashes() {
        let text = "# run\n\nmode = binary\n--kappa_count=5\nout = \"a b\"\n";
        let entries = parse(text, Path::new("x")).unwrap();
        let pairs: Vec<(&str, &str)> = entries.iter().map(|e| (e.key.as_str(), e.value.as_str())).collect();
        assert_eq!(pairs, [("mode", "binary"), ("kappa-count", "5"), ("out", "a b")]);
        assert_eq!(entries[1].line, 4);
    }

    #[test]
    fn line_without_separator_is_malformed() {
        assert!(matches!(parse("mode binary", Path::new("x")), Err(CliError::Malformed { line: 1, .. })));
    }

    #[test]
    fn command_line_flags_override_entries() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "epsilon = 1e-7\nreps = 3\n").unwrap();
        let argv = os(&["revealed", "estimate", "--config", file.to_str().unwrap(), "--epsilon", "1e-6"]);
        let out = expand(argv).unwrap();
        // epsilon is overridden and reps belongs to evaluate only
        assert_eq!(out.len(), 6);
        assert_eq!(out.last().unwrap(), &OsString::from("1e-6"));
    }

    #[test]
    fn command_line_lists_replace_config_lists() {
        use clap::Parser;

        use crate::args::Command;

        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "sizes = 5,10\nreps = 4\nmode = binary\ninput = p.csv\nout = o\n").unwrap();
        let cfg = file.to_str().unwrap();
        let parse = |extra: &[&str]| {
            let mut argv = os(&["revealed", "evaluate", "--config", cfg]);
            argv.extend(os(extra));
            match Cli::try_parse_from(expand(argv).unwrap()).unwrap().command {
                Command::Evaluate(a) => (a.sizes, a.reps),
                _ => unreachable!(),
            }
        };
        assert_eq!(parse(&[]), (vec![5, 10], 4));
        assert_eq!(parse(&["--sizes", "3", "--reps", "2"]), (vec![3], 2));
    }

    #[test]
    fn unknown_key_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "kappa = 5\n").unwrap();
        let argv = os(&["revealed", "estimate", &format!("--config={}", file.display())]);
        assert!(matches!(expand(argv), Err(CliError::Usage(_))));
    }
}
