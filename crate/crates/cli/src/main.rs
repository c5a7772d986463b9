//! `splatprop` command-line front end.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use splatprop::config::{Ablation, Config};
use splatprop::eval::evaluate_dataset;
use splatprop::pipeline::{self, ObjectDir, PropagateOutcome};
use splatprop::predict::Transport;
use splatprop::synthetic::{fixture_config, write_fixture_object, FixtureSpec};
use splatprop::Error;

/// Config file picked up from an object or dataset directory when `--config` is not given.
const LOCAL_CONFIG: &str = "splatprop.toml";

#[derive(Debug, Parser)]
#[command(name = "splatprop", version, about = "Physical property and mass estimation on Gaussian splats")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// TOML configuration; defaults to `splatprop.toml` in the target directory, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Ablation switches: garl, raft, thickness. Repeat or separate with commas.
    #[arg(long, global = true, value_delimiter = ',')]
    ablate: Vec<Ablation>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ObjectArg {
    /// Object directory.
    object: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render every camera view and evaluate the reconstruction losses.
    Render(ObjectArg),
    /// Train per-Gaussian region features from the mask maps.
    TrainFeatures(ObjectArg),
    /// Produce the material dictionary from a file or a vision-language model.
    PredictProperties {
        #[command(flatten)]
        object: ObjectArg,
        /// Serve model answers from the cache only.
        #[arg(long)]
        offline: bool,
    },
    /// Fuse source-point properties and assign them to every Gaussian.
    Propagate {
        #[command(flatten)]
        object: ObjectArg,
        /// Only write the embedding requests manifest.
        #[arg(long)]
        emit_requests: bool,
    },
    /// Integrate the assigned property over the object.
    Integrate(ObjectArg),
    /// Export material-colored splat and renders.
    Segment(ObjectArg),
    /// Run every stage.
    Pipeline {
        #[command(flatten)]
        object: ObjectArg,
        #[arg(long)]
        offline: bool,
    },
    /// Evaluate every object directory under a dataset root.
    Evaluate {
        /// Dataset root holding one directory per object.
        dataset: PathBuf,
        /// Restrict to these object directory names.
        #[arg(long, value_delimiter = ',')]
        objects: Vec<String>,
        /// File with one object name per line; combined with `--objects`.
        #[arg(long)]
        subset: Option<PathBuf>,
        /// Report directory; defaults to `<dataset>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Append the published benchmark rows to the printed table.
        #[arg(long)]
        paper_reference: bool,
    },
    /// Print the full default configuration.
    InitConfig {
        /// Write to this file instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Emit the settings used for synthetic fixtures.
        #[arg(long)]
        fixture: bool,
    },
    /// Write a synthetic two-cluster object (or a dataset of them) with known mass.
    Synth {
        dir: PathBuf,
        /// Write a dataset with this many objects instead of a single object.
        #[arg(long)]
        objects: Option<usize>,
        /// Use one material for both clusters, as NAME=DENSITY.
        #[arg(long, value_parser = parse_material)]
        single_material: Option<(String, f64)>,
    },
}

fn parse_material(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or("expected NAME=DENSITY")?;
    let density: f64 = value.parse().map_err(|_| format!("bad density `{value}`"))?;
    if name.trim().is_empty() || !(density > 0.0) {
        return Err("need a name and a positive density".into());
    }
    Ok((name.trim().to_lowercase(), density))
}

fn load_config(cli: &Cli, dir: Option<&Path>) -> Result<Config, Error> {
    let mut config = match (&cli.config, dir.map(|d| d.join(LOCAL_CONFIG))) {
        (Some(p), _) => Config::load(p)?,
        (None, Some(local)) if local.is_file() => Config::load(&local)?,
        _ => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.ablations.extend(cli.ablate.iter().copied());
    config.validate()?;
    Ok(config)
}

fn print_json<T: serde::Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("serialize summary");
    say(&format!("{text}\n"));
}

fn say(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn object(cli: &Cli, dir: &Path, offline: bool) -> Result<ObjectDir, Error> {
    if !dir.is_dir() {
        return Err(Error::MissingAsset(format!("object directory {}", dir.display())));
    }
    let mut config = load_config(cli, Some(dir))?;
    config.prediction.vlm.offline |= offline;
    Ok(ObjectDir::new(dir, &config))
}

fn with_transport<R>(obj: &ObjectDir, f: impl FnOnce(Option<&dyn Transport>) -> Result<R, Error>) -> Result<R, Error> {
    let transport = pipeline::make_transport(&obj.config)?;
    f(transport.as_ref().map(|t| t as &dyn Transport))
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Render(o) => {
            let obj = object(cli, &o.object, false)?;
            let losses = pipeline::render_stage(&obj)?;
            print_json(&json!({ "renders": obj.output(pipeline::RENDERS_DIR), "views": losses }));
        }
        Command::TrainFeatures(o) => print_json(&pipeline::train_stage(&object(cli, &o.object, false)?)?),
        Command::PredictProperties { object: o, offline } => {
            let obj = object(cli, &o.object, *offline)?;
            print_json(&with_transport(&obj, |t| pipeline::predict_stage(&obj, t))?);
        }
        Command::Propagate { object: o, emit_requests } => {
            let obj = object(cli, &o.object, false)?;
            match pipeline::propagate_stage(&obj, *emit_requests)? {
                PropagateOutcome::Requests(m) => print_json(&json!({
                    "requests": obj.output(pipeline::REQUESTS_FILE),
                    "patches": m.patches.len(),
                    "texts": m.texts.len(),
                })),
                PropagateOutcome::Assigned(s) => print_json(&json!({
                    "assignments": obj.output(pipeline::ASSIGNMENTS_PLY),
                    "method": s.method,
                    "gaussians": s.gaussians,
                    "fused_source_points": s.fused_source_points,
                    "invisible_source_points": s.invisible_source_points,
                    "fallback_count": s.fallback_count,
                    "materials": s.materials,
                })),
            }
        }
        Command::Integrate(o) => print_json(&pipeline::integrate_stage(&object(cli, &o.object, false)?)?),
        Command::Segment(o) => print_json(&pipeline::segment_stage(&object(cli, &o.object, false)?)?),
        Command::Pipeline { object: o, offline } => {
            let obj = object(cli, &o.object, *offline)?;
            print_json(&with_transport(&obj, |t| pipeline::run_pipeline(&obj, t))?);
        }
        Command::Evaluate { dataset, objects, subset, out, paper_reference } => {
            let config = load_config(cli, Some(dataset))?;
            let mut ids = objects.clone();
            if let Some(path) = subset {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                ids.extend(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(String::from));
            }
            let subset = (!ids.is_empty()).then_some(ids.as_slice());
            let report = evaluate_dataset(dataset, &config, subset, None)?;
            let out = out.clone().unwrap_or_else(|| dataset.join("report"));
            report.save(&out)?;
            say(&report.render_table(*paper_reference));
            say(&format!("report written to {}\n", out.display()));
        }
        Command::InitConfig { output, fixture } => {
            let mut config = if *fixture { fixture_config() } else { Config::default() };
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            config.ablations.extend(cli.ablate.iter().copied());
            let text = config.to_toml_string();
            match output {
                Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e))?,
                None => say(&text),
            }
        }
        Command::Synth { dir, objects, single_material } => {
            let mut config = fixture_config();
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            let mut spec = match single_material {
                Some((name, rho)) => FixtureSpec::single_material(name, *rho),
                None => FixtureSpec::default(),
            };
            let write_config = |d: &Path| {
                std::fs::create_dir_all(d)
                    .and_then(|_| std::fs::write(d.join(LOCAL_CONFIG), config.to_toml_string()))
                    .map_err(|e| Error::io(d, e))
            };
            write_config(dir)?;
            match objects {
                None => print_json(&write_fixture_object(dir, &spec, &config)?),
                Some(n) => {
                    let base = spec.scene.seed;
                    let mut infos = serde_json::Map::new();
                    for i in 0..*n {
                        spec.scene.seed = base + i as u64;
                        let name = format!("obj_{i:03}");
                        infos.insert(name.clone(), serde_json::to_value(write_fixture_object(&dir.join(&name), &spec, &config)?).expect("json"));
                    }
                    print_json(&infos);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
