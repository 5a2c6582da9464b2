//! `rankdistill` command-line driver.

mod flags;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Arg, ArgAction, ArgMatches, Command};

use rankdistill::harness::{
    compute_snapshot, finish_run, initial_student, run_sweep, run_to_dir, snapshot_teacher, train_teacher,
    write_metrics_csv, write_run_outputs, ExperimentConfig, RunRecord, TeacherSnapshot,
};
use rankdistill::metrics::{evaluate, EvalResult};
use rankdistill::model::ScoreModel;
use rankdistill::synthdata::{generate_from_spec, Dataset, TaskData};

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("PATH")
        .value_parser(clap::value_parser!(PathBuf))
        .help(help)
}

fn required_path(name: &'static str, help: &'static str) -> Arg {
    path_arg(name, help).required(true)
}

fn data_arg() -> Arg {
    path_arg("data", "Dataset directory from `gen-data`; generated from the task config when absent")
}

fn cli() -> Command {
    let sub = |name: &'static str, about: &'static str| flags::with_config_args(Command::new(name).about(about));
    Command::new("rankdistill")
        .about("Ranking distillation experiments on synthetic insufficient-label tasks")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            sub("gen-data", "Generate train/val/test JSONL datasets")
                .arg(required_path("out", "Output directory")),
        )
        .subcommand(
            sub("train-teacher", "Train the teacher on revealed labels")
                .arg(data_arg())
                .arg(required_path("out", "Output directory for teacher.json, metrics.csv and config.json")),
        )
        .subcommand(
            sub("snapshot", "Freeze teacher rankings and margins; reuses the file when it still matches")
                .arg(data_arg())
                .arg(required_path("teacher", "Teacher checkpoint"))
                .arg(required_path("out", "Snapshot file")),
        )
        .subcommand(
            sub("distill", "Train and evaluate a student against a frozen teacher")
                .arg(data_arg())
                .arg(required_path("teacher", "Teacher checkpoint"))
                .arg(path_arg("snapshot", "Snapshot cache file; computed and written when stale or missing"))
                .arg(required_path("out", "Output directory for run outputs and student.json")),
        )
        .subcommand(
            sub("evaluate", "Evaluate a checkpoint on one split")
                .arg(data_arg())
                .arg(required_path("model", "Model checkpoint"))
                .arg(
                    Arg::new("split")
                        .long("split")
                        .value_parser(["train", "val", "test"])
                        .default_value("test"),
                )
                .arg(path_arg("out", "Also write the result as JSON to this file")),
        )
        .subcommand(
            sub("run", "Teacher, snapshot, distillation and evaluation in one go")
                .arg(required_path("out", "Output directory for run.json, metrics.csv and config.json")),
        )
        .subcommand(
            sub("sweep", "Run one experiment per value of a config field")
                .arg(
                    Arg::new("axis")
                        .long("axis")
                        .required(true)
                        .value_name("FIELD")
                        .help("Field to vary, as a dotted path or flag name"),
                )
                .arg(
                    Arg::new("values")
                        .long("values")
                        .required(true)
                        .num_args(1..)
                        .action(ArgAction::Append)
                        .value_name("VALUE"),
                )
                .arg(required_path("out", "Output directory; one subdirectory per value plus sweep.csv")),
        )
}

fn out_path(m: &ArgMatches, name: &str) -> PathBuf {
    m.get_one::<PathBuf>(name).expect("required by clap").clone()
}

/// The config from flags, with its task replaced by the dataset headers
/// when `--data` is given.
fn load_inputs(m: &ArgMatches) -> Result<(ExperimentConfig, TaskData)> {
    let mut config = flags::config_from(m)?;
    let data = match m.get_one::<PathBuf>("data") {
        Some(dir) => {
            let data = TaskData::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
            if data.val.task != data.train.task || data.test.task != data.train.task {
                bail!("dataset splits in {} come from different tasks", dir.display());
            }
            config.task = data.train.task.clone();
            data
        }
        None => {
            config.validate()?;
            generate_from_spec(&config.task)?
        }
    };
    config.validate()?;
    Ok((config, data))
}

fn load_model(path: &Path) -> Result<ScoreModel> {
    ScoreModel::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn summary(label: &str, r: &EvalResult) -> String {
    format!("{label}: acc1 {:.4} hit{k} {:.4} ndcg{k} {:.4}", r.acc_at_1, r.hit_at_k, r.ndcg_at_k, k = r.k)
}

fn print_run(record: &RunRecord) {
    println!("{}", summary("teacher test", &record.teacher_test));
    println!("{}", summary(&format!("{} test", record.scheme), &record.test));
}

fn cmd_gen_data(m: &ArgMatches) -> Result<()> {
    let config = flags::config_from(m)?;
    let data = generate_from_spec(&config.task)?;
    let out = out_path(m, "out");
    data.write_dir(&out)?;
    println!(
        "wrote {} train, {} val and {} test instances to {}",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train_teacher(m: &ArgMatches) -> Result<()> {
    let (config, data) = load_inputs(m)?;
    let trained = train_teacher(&config, &data)?;
    let out = out_path(m, "out");
    std::fs::create_dir_all(&out)?;
    trained.model.save(&out.join("teacher.json"))?;
    std::fs::write(out.join("config.json"), config.resolved().to_json_pretty()?)?;
    let test = evaluate(&trained.model, &data.test, config.eval_k, config.relevance)?;
    write_metrics_csv(&out.join("metrics.csv"), &trained.record.val, Some((trained.record.best_epoch, &test)))?;
    println!("{}", summary("teacher test", &test));
    println!("checksum {}", trained.model.checksum());
    Ok(())
}

fn cmd_snapshot(m: &ArgMatches) -> Result<()> {
    let (config, data) = load_inputs(m)?;
    let teacher = load_model(&out_path(m, "teacher"))?;
    let out = out_path(m, "out");
    let snapshot = snapshot_teacher(&teacher, &data.train, &config, Some(&out))?;
    println!(
        "snapshot of {} instances, {} sinkhorn fallbacks, checksum {}",
        snapshot.entries.len(),
        snapshot.sinkhorn_fallbacks(),
        snapshot.checksum()
    );
    Ok(())
}

fn cmd_distill(m: &ArgMatches) -> Result<()> {
    let (config, data) = load_inputs(m)?;
    let teacher = load_model(&out_path(m, "teacher"))?;
    let snapshot: TeacherSnapshot = match m.get_one::<PathBuf>("snapshot") {
        Some(path) => snapshot_teacher(&teacher, &data.train, &config, Some(path))?,
        None => compute_snapshot(&teacher, &data.train, &config)?,
    };
    let init = initial_student(&config, &data, &teacher)?;
    let (record, student) = finish_run(&config, &data, &teacher, &snapshot, init)?;
    let out = out_path(m, "out");
    write_run_outputs(&out, &config, &record)?;
    student.save(&out.join("student.json"))?;
    print_run(&record);
    Ok(())
}

fn split<'a>(data: &'a TaskData, name: &str) -> &'a Dataset {
    match name {
        "train" => &data.train,
        "val" => &data.val,
        _ => &data.test,
    }
}

fn cmd_evaluate(m: &ArgMatches) -> Result<()> {
    let (config, data) = load_inputs(m)?;
    let model = load_model(&out_path(m, "model"))?;
    let name = m.get_one::<String>("split").expect("has default");
    let result = evaluate(&model, split(&data, name), config.eval_k, config.relevance)?;
    let json = serde_json::to_string_pretty(&result)?;
    if let Some(path) = m.get_one::<PathBuf>("out") {
        std::fs::write(path, &json)?;
    }
    println!("{json}");
    Ok(())
}

fn cmd_run(m: &ArgMatches) -> Result<()> {
    let config = flags::config_from(m)?;
    let record = run_to_dir(&config, &out_path(m, "out"))?;
    print_run(&record);
    Ok(())
}

fn dir_name(index: usize, value: &str) -> String {
    let clean: String = value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("{index:02}-{clean}")
}

fn cmd_sweep(m: &ArgMatches) -> Result<()> {
    let template = flags::config_from(m)?;
    let field = flags::resolve_axis(m.get_one::<String>("axis").expect("required by clap"))?;
    let raw: Vec<&String> = m.get_many::<String>("values").expect("required by clap").collect();
    let values: Vec<String> = raw.iter().map(|v| flags::field_value(&field, v)).collect();
    let out = out_path(m, "out");
    std::fs::create_dir_all(&out)?;

    let cells = run_sweep(&template, &field.path, &values);
    let mut table = csv::Writer::from_path(out.join("sweep.csv"))?;
    table.write_record(["value", "status", "acc1", "hit5", "ndcg5", "error"])?;
    let mut failures = 0;
    for (i, cell) in cells.iter().enumerate() {
        match (&cell.outcome, &cell.config) {
            (Ok(record), Some(config)) => {
                write_run_outputs(&out.join(dir_name(i, &cell.value)), config, record)?;
                let t = &record.test;
                table.write_record([
                    cell.value.clone(),
                    "ok".into(),
                    t.acc_at_1.to_string(),
                    t.hit_at_k.to_string(),
                    t.ndcg_at_k.to_string(),
                    String::new(),
                ])?;
                println!("{}", summary(&format!("{}={}", field.path, cell.value), t));
            }
            (outcome, _) => {
                failures += 1;
                let message = match outcome {
                    Err(e) => e.to_string(),
                    Ok(_) => "no config".into(),
                };
                eprintln!("{}={}: {message}", field.path, cell.value);
                let blank = String::new;
                table.write_record([cell.value.clone(), "error".into(), blank(), blank(), blank(), message])?;
            }
        }
    }
    table.flush()?;
    if failures > 0 {
        bail!("{failures} of {} sweep cells failed", cells.len());
    }
    Ok(())
}

fn dispatch(matches: &ArgMatches) -> Result<()> {
    match matches.subcommand() {
        Some(("gen-data", m)) => cmd_gen_data(m),
        Some(("train-teacher", m)) => cmd_train_teacher(m),
        Some(("snapshot", m)) => cmd_snapshot(m),
        Some(("distill", m)) => cmd_distill(m),
        Some(("evaluate", m)) => cmd_evaluate(m),
        Some(("run", m)) => cmd_run(m),
        Some(("sweep", m)) => cmd_sweep(m),
        _ => unreachable!("clap requires a subcommand"),
    }
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    match dispatch(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
