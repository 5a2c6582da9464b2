//! Command-line flags derived from the experiment configuration tree.
//!
//! Every leaf of `ExperimentConfig` gets a flag named after its dotted path
//! with dots and underscores turned into dashes, so `teacher.clip_norm`
//! becomes `--teacher-clip-norm`.

use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use clap::{Arg, ArgAction, ArgMatches, Command};
use serde_json::Value;

use rankdistill::harness::ExperimentConfig;

/// One overridable configuration field.
#[derive(Debug, Clone)]
pub struct Field {
    /// Dotted path inside the serialized config, e.g. `listwise.plan.hot_size`.
    pub path: String,
    /// Long flag name without the leading dashes.
    pub flag: String,
    /// Whether the field holds a JSON array.
    pub is_list: bool,
    /// Default value rendered for help output.
    pub default: String,
}

fn collect(prefix: &str, value: &Value, out: &mut Vec<Field>) {
    match value {
        Value::Object(map) => {
            for (key, child) in map {
                let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
                collect(&path, child, out);
            }
        }
        leaf => out.push(Field {
            path: prefix.to_string(),
            flag: prefix.replace(['.', '_'], "-"),
            is_list: leaf.is_array(),
            default: match leaf {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            },
        }),
    }
}

/// All configuration fields in serialization order.
pub fn fields() -> Vec<Field> {
    let tree = serde_json::to_value(ExperimentConfig::default()).expect("config serializes");
    let mut out = Vec::new();
    collect("", &tree, &mut out);
    out
}

/// Resolves a sweep axis given either as a dotted path (dashes allowed in
/// place of underscores) or as a flag name.
pub fn resolve_axis(axis: &str) -> Result<Field> {
    let axis = axis.trim_start_matches("--");
    let dotted = axis.replace('-', "_");
    fields()
        .into_iter()
        .find(|f| f.path == dotted || f.flag == axis)
        .ok_or_else(|| anyhow!("unknown config field '{axis}'"))
}

/// Turns a command-line value into the text accepted by
/// [`ExperimentConfig::with_field`]. List fields take comma-separated items.
pub fn field_value(field: &Field, raw: &str) -> String {
    if field.is_list && !raw.trim_start().starts_with('[') {
        format!("[{raw}]")
    } else {
        raw.to_string()
    }
}

/// Adds `--config`, `--baseline` and one flag per config field to `cmd`.
pub fn with_config_args(cmd: Command) -> Command {
    let mut cmd = cmd
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .value_parser(clap::value_parser!(PathBuf))
                .help("JSON config file; flags given on the command line override it"),
        )
        .arg(
            Arg::new("baseline")
                .long("baseline")
                .value_name("TAG")
                .value_parser(["label-smoothing", "pseudo-labeling", "vanilla-kd", "none"])
                .conflicts_with("scheme")
                .help("Comparison scheme; `none` trains on revealed labels only"),
        );
    for field in fields() {
        cmd = cmd.arg(
            Arg::new(field.path.clone())
                .long(field.flag.clone())
                .value_name("VALUE")
                .action(ArgAction::Set)
                .help_heading("Config fields")
                .help(format!("{} (default {})", field.path, field.default)),
        );
    }
    cmd
}

/// Builds the config from `--config`, then applies every field flag given.
pub fn config_from(matches: &ArgMatches) -> Result<ExperimentConfig> {
    let mut config = match matches.get_one::<PathBuf>("config") {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    for field in fields() {
        if let Some(raw) = matches.get_one::<String>(&field.path) {
            config = config.with_field(&field.path, &field_value(&field, raw))?;
        }
    }
    if let Some(tag) = matches.get_one::<String>("baseline") {
        let scheme = if tag == "none" { "cls-only" } else { tag.as_str() };
        config = config.with_field("scheme", scheme)?;
    }
    Ok(config)
}
