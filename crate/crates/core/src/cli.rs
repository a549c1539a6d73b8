//! Command-line front end: `simulate`, `detect`, `fit`, `predict`, `evaluate`.
//!
//! Exit codes: 0 on success, 1 for usage errors (bad flags, invalid or
//! unknown parameters), 2 for data errors (unreadable or malformed input).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{Arg, ArgMatches, Command};
use rayon::prelude::*;
use tracing_subscriber::EnvFilter;

use crate::arma::ModelRecord;
use crate::config::{key_spec, KeyGroup, RunConfig, KEYS};
use crate::detection::{detect_sstes, event_sequences, read_events, write_events, Sste};
use crate::error::{Result, SsteError};
use crate::evaluation::{
    evaluate, fit_interval_model, predict_all, predictions_to_jsonl, EvalInputs, MIN_EVENTS,
};
use crate::ingestion::{
    parse_checkins, parse_friendship, write_file, CheckinSequence, FriendshipGraph,
};
use crate::location::{kmeans_sites, parse_sites, LocationContext, RegionMap};
use crate::synthgen::generate_social_dataset;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

const KMEANS_MAX_ITER: usize = 100;

struct CommandInfo {
    name: &'static str,
    about: &'static str,
    groups: &'static [KeyGroup],
    out_default: &'static str,
    out_help: &'static str,
}

const COMMANDS: &[CommandInfo] = &[
    CommandInfo {
        name: "simulate",
        about: "Generate a synthetic check-in dataset with planted meetups",
        groups: &[KeyGroup::Generator, KeyGroup::Seed],
        out_default: "data",
        out_help:
            "output directory for checkins.csv, friends.csv, sites.csv, ground_truth_events.jsonl",
    },
    CommandInfo {
        name: "detect",
        about: "Detect social spatial-temporal events in check-ins",
        groups: &[KeyGroup::Input, KeyGroup::Detection],
        out_default: "events.jsonl",
        out_help: "output events file (JSONL)",
    },
    CommandInfo {
        name: "fit",
        about: "Fit each user's inter-event interval model",
        groups: &[KeyGroup::Input, KeyGroup::Detection, KeyGroup::Arma],
        out_default: "models.jsonl",
        out_help: "output models file (JSONL)",
    },
    CommandInfo {
        name: "predict",
        about: "Predict each user's next event time and ranked regions",
        groups: &[
            KeyGroup::Input,
            KeyGroup::Sites,
            KeyGroup::Detection,
            KeyGroup::Arma,
            KeyGroup::Kalman,
            KeyGroup::Location,
            KeyGroup::Predict,
            KeyGroup::Seed,
        ],
        out_default: "predictions.jsonl",
        out_help: "output predictions file (JSONL)",
    },
    CommandInfo {
        name: "evaluate",
        about: "Run the train/test protocol and write MSE, accuracy and convergence tables",
        groups: &[
            KeyGroup::Input,
            KeyGroup::Sites,
            KeyGroup::Detection,
            KeyGroup::Arma,
            KeyGroup::Kalman,
            KeyGroup::Location,
            KeyGroup::Evaluation,
            KeyGroup::Seed,
        ],
        out_default: "report",
        out_help: "output directory for the report files",
    },
];

fn subcommand(info: &CommandInfo, defaults: &RunConfig) -> Command {
    let mut cmd = Command::new(info.name).about(info.about).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("flat `key = value` file; flags given on the command line take precedence"),
    );
    for k in KEYS
        .iter()
        .filter(|k| k.group == KeyGroup::Output || info.groups.contains(&k.group))
    {
        let mut arg = Arg::new(k.name)
            .long(k.name.replace('_', "-"))
            .value_name("VALUE");
        if k.group == KeyGroup::Output {
            arg = arg
                .value_name("PATH")
                .help(info.out_help)
                .default_value(info.out_default);
        } else {
            arg = arg.help(k.help);
            let d = defaults.get(k.name).expect("every key has a getter");
            if !d.is_empty() {
                arg = arg.default_value(d);
            }
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

pub fn command() -> Command {
    let defaults = RunConfig::default();
    COMMANDS.iter().fold(
        Command::new("sste")
            .about("Detect social meetups in check-in data and forecast the time and place of each user's next one")
            .version(env!("CARGO_PKG_VERSION"))
            .subcommand_required(true)
            .arg_required_else_help(true)
            .after_help("Log verbosity follows RUST_LOG (default: warn); logs go to standard error."),
        |cmd, info| cmd.subcommand(subcommand(info, &defaults)),
    )
}

/// Defaults, then the `--config` file, then flags given explicitly.
fn resolve(m: &ArgMatches, out_default: &str) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        cfg.apply_file(Path::new(path))?;
    }
    for id in m.ids() {
        let name = id.as_str();
        if key_spec(name).is_some() && m.value_source(name) == Some(ValueSource::CommandLine) {
            let value = m.get_one::<String>(name).expect("flags take one value");
            cfg.set(name, value)?;
        }
    }
    cfg.validate()?;
    let out = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(out_default));
    Ok((cfg, out))
}

fn required<'a>(value: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| SsteError::invalid(name, format!("--{name} is required")))
}

struct Inputs {
    checkins: CheckinSequence,
    graph: FriendshipGraph,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let checkins_path = required(&cfg.checkins, "checkins")?;
    let friends_path = required(&cfg.friends, "friends")?;
    Ok(Inputs {
        checkins: parse_checkins(checkins_path)?,
        graph: parse_friendship(friends_path)?,
    })
}

fn load_or_detect(cfg: &RunConfig, inputs: &Inputs) -> Result<Vec<Sste>> {
    match &cfg.events {
        Some(path) => read_events(path),
        None => detect_sstes(&inputs.checkins, &inputs.graph, &cfg.experiment.detection),
    }
}

fn load_map(cfg: &RunConfig, checkins: &CheckinSequence) -> Result<RegionMap> {
    match &cfg.sites {
        Some(path) => parse_sites(path),
        None => {
            let points: Vec<_> = checkins.records().iter().map(|c| c.coords).collect();
            kmeans_sites(&points, cfg.n_sites, cfg.seed, KMEANS_MAX_ITER)
        }
    }
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = generate_social_dataset(&cfg.generator_config())?;
    ds.write(out)?;
    println!(
        "{} check-ins, {} users, {} friendships, {} sites, {} planted events -> {}",
        ds.checkins.len(),
        ds.graph.n_persons(),
        ds.graph.n_edges(),
        ds.sites.len(),
        ds.events.len(),
        out.display()
    );
    Ok(())
}

fn cmd_detect(cfg: &RunConfig, out: &Path) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let events = detect_sstes(&inputs.checkins, &inputs.graph, &cfg.experiment.detection)?;
    write_events(out, &events)?;
    println!("{} events -> {}", events.len(), out.display());
    Ok(())
}

fn cmd_fit(cfg: &RunConfig, out: &Path) -> Result<()> {
    let events = match &cfg.events {
        Some(path) => read_events(path)?,
        None => {
            let inputs = load_inputs(cfg)?;
            detect_sstes(&inputs.checkins, &inputs.graph, &cfg.experiment.detection)?
        }
    };
    let sequences = event_sequences(&events);
    let e = &cfg.experiment;
    let fits: Vec<_> = sequences
        .par_iter()
        .map(|(user, seq)| {
            if seq.len() < MIN_EVENTS {
                return (
                    user,
                    Err(SsteError::InsufficientHistory {
                        needed: MIN_EVENTS,
                        got: seq.len(),
                    }),
                );
            }
            let values: Vec<f64> = seq
                .events
                .windows(2)
                .map(|w| (w[1].time - w[0].time) as f64)
                .collect();
            (user, fit_interval_model(&values, e.p_max, e.q_max))
        })
        .collect();
    let mut text = String::new();
    let mut skipped = 0;
    for (user, fit) in fits {
        match fit {
            Ok(model) => {
                text.push_str(&serde_json::to_string(&ModelRecord::new(
                    user.clone(),
                    &model,
                ))?);
                text.push('\n');
            }
            Err(e @ SsteError::InsufficientHistory { .. }) => {
                tracing::warn!(%user, error = %e, "user skipped");
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    write_file(out, &text)?;
    println!(
        "{} models, {skipped} users skipped -> {}",
        sequences.len() - skipped,
        out.display()
    );
    Ok(())
}

fn cmd_predict(cfg: &RunConfig, out: &Path) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let events = load_or_detect(cfg, &inputs)?;
    let map = load_map(cfg, &inputs.checkins)?;
    let e = &cfg.experiment;
    let ctx = LocationContext::new(&inputs.checkins, &inputs.graph, &map, e.alpha, e.half_life)?;
    let (predictions, skipped) = predict_all(&ctx, &events, e, cfg.xi, cfg.top_n)?;
    for (user, error) in &skipped {
        tracing::warn!(%user, %error, "user skipped");
    }
    write_file(out, &predictions_to_jsonl(&predictions)?)?;
    println!(
        "{} predictions, {} users skipped -> {}",
        predictions.len(),
        skipped.len(),
        out.display()
    );
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let events = load_or_detect(cfg, &inputs)?;
    let map = load_map(cfg, &inputs.checkins)?;
    let report = evaluate(
        &EvalInputs {
            checkins: &inputs.checkins,
            graph: &inputs.graph,
            map: &map,
            events: &events,
        },
        &cfg.experiment,
    )?;
    report.write(out)?;
    println!(
        "{} events, {} of {} users evaluated, {} traces -> {}",
        events.len(),
        report.n_eligible,
        report.n_users,
        report.traces.len(),
        out.display()
    );
    Ok(())
}

fn dispatch(m: &ArgMatches) -> Result<()> {
    let (name, sub) = m.subcommand().expect("a subcommand is required");
    let info = COMMANDS
        .iter()
        .find(|s| s.name == name)
        .expect("registered subcommand");
    let (cfg, out) = resolve(sub, info.out_default)?;
    tracing::debug!(command = name, ?cfg, "resolved configuration");
    match name {
        "simulate" => cmd_simulate(&cfg, &out),
        "detect" => cmd_detect(&cfg, &out),
        "fit" => cmd_fit(&cfg, &out),
        "predict" => cmd_predict(&cfg, &out),
        "evaluate" => cmd_evaluate(&cfg, &out),
        _ => unreachable!("registered subcommand"),
    }
}

pub fn exit_code(e: &SsteError) -> i32 {
    if e.is_usage() {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&matches) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Logs to standard error, filtered by `RUST_LOG` (default `warn`).
pub fn init_logging() {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        command().debug_assert();
    }

    #[test]
    fn every_flag_shows_its_default() {
        let mut cmd = command();
        for info in COMMANDS {
            let sub = cmd.find_subcommand_mut(info.name).unwrap();
            let help = sub.render_long_help().to_string();
            assert!(
                help.contains(&format!("[default: {}]", info.out_default)),
                "{}",
                info.name
            );
            for k in KEYS.iter().filter(|k| info.groups.contains(&k.group)) {
                assert!(
                    help.contains(&format!("--{}", k.name.replace('_', "-"))),
                    "{} --{}",
                    info.name,
                    k.name
                );
            }
        }
    }

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(
            run([
                "sste",
                "detect",
                "--epsilon-time",
                "0",
                "--checkins",
                "a",
                "--friends",
                "b"
            ]),
            EXIT_USAGE
        );
        assert_eq!(run(["sste", "simulate", "--n-users", "0"]), EXIT_USAGE);
        assert_eq!(run(["sste", "detect", "--no-such-flag"]), EXIT_USAGE);
        assert_eq!(run(["sste", "detect"]), EXIT_USAGE);
    }

    #[test]
    fn missing_input_exits_2() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("absent.csv");
        let m = missing.to_str().unwrap();
        assert_eq!(
            run(["sste", "detect", "--checkins", m, "--friends", m]),
            EXIT_DATA
        );
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("run.conf");
        std::fs::write(&conf, "xi = 0.3\ntop_n = 7\n").unwrap();
        let m = command()
            .try_get_matches_from([
                "sste",
                "predict",
                "--config",
                conf.to_str().unwrap(),
                "--xi",
                "0.6",
            ])
            .unwrap();
        let (_, sub) = m.subcommand().unwrap();
        let (cfg, out) = resolve(sub, "predictions.jsonl").unwrap();
        assert_eq!(cfg.xi, 0.6);
        assert_eq!(cfg.top_n, 7);
        assert_eq!(out, PathBuf::from("predictions.jsonl"));
    }
}
