//! Argument parsing and subcommand dispatch.

use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use nca_core::autodiff::OpKind;
use nca_core::data::{config_reference, load_checkpoint, parse_config, parse_config_file, RunConfig};

use crate::error::{io_err, CliError};
use crate::export::{checkpoint_config, ExportSpec};
use crate::{bench, demo, evaluate, export, gradcheck, run};

#[derive(Debug, Parser)]
#[command(name = "nca", version, about = "Neural cellular automata: train, evaluate and serve")]
pub struct Cli {
    /// Print progress (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// YAML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted override applied after parsing, e.g. `train.iterations=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes config.yaml, metrics.tsv and checkpoints.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Continue from a trainer checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint with the task metric.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write the result as eval.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train or load model variants and tabulate damage and mutation recovery.
    RegenBench {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "bench")]
        out: PathBuf,
        /// Use `<out>/<variant>/model.ckpt` instead of training.
        #[arg(long)]
        load_only: bool,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 11)]
        seed: u64,
        /// Corrupt one backward rule (verification of the checker itself).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Write built-in glyphs, a digit corpus and sample configs.
    DemoData {
        #[arg(long, default_value = "demo")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve checkpoints over HTTP and WebSocket.
    Serve {
        /// YAML serve configuration listing the models.
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Render rollout frames of a checkpoint as PNG files.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long, default_value_t = 96)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        every: usize,
        #[arg(long, default_value = "frames")]
        out: PathBuf,
        /// Place the target to the right of each frame.
        #[arg(long)]
        with_target: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Talk to a running server.
    Client {
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        url: String,
        #[command(subcommand)]
        action: ClientAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum ClientAction {
    /// List served models.
    Models,
    /// Create a session and print its description.
    Create {
        model: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Send run/pause/step/reset, e.g. `step:5` or `run:20`.
    Control { session: String, action: String },
    /// Send a perturbation given as JSON.
    Perturb { session: String, json: String },
    /// Print the metric history.
    Metrics {
        session: String,
        #[arg(long)]
        since: Option<u64>,
    },
}

/// Full `--help` text of the tool, config keys included.
pub fn command() -> clap::Command {
    let mut keys = String::from("Config keys (dotted, with defaults):\n");
    for (k, v) in config_reference() {
        keys.push_str(&format!("  {k} = {v}\n"));
    }
    keys.push_str("\nExit codes: 0 ok, 1 check failed, 2 usage or config error, 3 numeric divergence.\nNCA_THREADS caps worker threads.");
    Cli::command().after_help(keys)
}

pub fn parse_from<I, T>(args: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let m = command().try_get_matches_from(args)?;
    Cli::from_arg_matches(&m)
}

fn split_sets(sets: &[String]) -> Result<Vec<(String, String)>, CliError> {
    sets.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.to_string()))
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {s:?}")))
        })
        .collect()
}

/// Parses, overrides and validates a run configuration.
pub fn load_config(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    let path = args
        .config
        .as_deref()
        .ok_or_else(|| CliError::Usage("--config <path> is required".into()))?;
    let mut sets = split_sets(&args.set)?;
    if let Some(seed) = args.seed {
        sets.push(("seed".into(), seed.to_string()));
    }
    Ok(parse_config_file(path, &sets)?)
}

fn eval_config(args: &ConfigArgs, ck: &Path) -> Result<RunConfig, CliError> {
    if args.config.is_some() {
        return load_config(args);
    }
    let loaded = load_checkpoint(ck)?;
    let stored = checkpoint_config(&loaded, ck)?;
    let mut sets = split_sets(&args.set)?;
    if let Some(seed) = args.seed {
        sets.push(("seed".into(), seed.to_string()));
    }
    Ok(parse_config(&stored.to_yaml(), &sets)?)
}

fn block_on<F: std::future::Future>(f: F) -> Result<F::Output, CliError> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Failed(e.to_string()))?;
    Ok(rt.block_on(f))
}

/// Writes a line to stdout; a closed pipe ends the process quietly.
fn say(s: impl std::fmt::Display) {
    use std::io::Write;
    if writeln!(std::io::stdout(), "{s}").is_err() {
        std::process::exit(0);
    }
}

/// Runs one parsed invocation, printing results to stdout.
pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let verbose = cli.verbose;
    match cli.command {
        Command::Train { cfg, out, resume } => {
            let config = load_config(&cfg)?;
            let o = run::train(&config, &out, resume.as_deref(), |rec| {
                if verbose > 0 && (rec.iteration % 50 == 0 || verbose > 1) {
                    eprintln!("iter {:>6}  loss {:.6}  lr {:.2e}", rec.iteration, rec.loss, rec.lr);
                }
            })?;
            if let (Some(first), Some(last)) = (o.records.first(), o.records.last()) {
                say(format!("iterations {}..{}  loss {:.6} -> {:.6}", first.iteration, last.iteration, first.loss, last.loss));
            }
            say(format!("wrote {}", o.checkpoint.display()));
        }
        Command::Eval { cfg, checkpoint, out } => {
            let config = eval_config(&cfg, &checkpoint)?;
            let ck = load_checkpoint(&checkpoint)?;
            let (data, test) = config.build_dataset()?;
            if ck.model.spec != config.model_spec(config.layout(&data)) {
                return Err(CliError::Usage("checkpoint does not match the configured model".into()));
            }
            let report = evaluate::evaluate(&config, &ck.model, &data, test.as_ref())?;
            let text = serde_json::to_string_pretty(&report).expect("json");
            say(&text);
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
                let p = dir.join("eval.json");
                std::fs::write(&p, text).map_err(|e| io_err(&p, e))?;
            }
        }
        Command::RegenBench { cfg, out, load_only } => {
            let config = load_config(&cfg)?;
            let table = bench::regen_bench(&config, &out, load_only)?;
            say(table.to_markdown().trim_end());
        }
        Command::Gradcheck { seed, inject_fault } => {
            let fault = match inject_fault {
                Some(name) => Some(
                    OpKind::from_name(&name).ok_or_else(|| CliError::Usage(format!("unknown op {name:?}")))?,
                ),
                None => None,
            };
            let (lines, checks) = gradcheck::run(seed, fault)?;
            for l in lines {
                say(l);
            }
            let failed = gradcheck::failures(&checks);
            if !failed.is_empty() {
                return Err(CliError::Check(format!("gradient mismatch in {}", failed.join(", "))));
            }
        }
        Command::DemoData { out, seed } => {
            for p in demo::demo_data(&out, seed)? {
                say(p.display());
            }
        }
        Command::Serve { config, set, port, host } => {
            let cfg = nca_server::load_serve_config(&config, &split_sets(&set)?)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let state = nca_server::AppState::load(cfg).map_err(|e| CliError::Usage(e.to_string()))?;
            block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port))
                    .await
                    .map_err(|e| CliError::Usage(format!("cannot bind {host}:{port}: {e}")))?;
                eprintln!("listening on http://{}", listener.local_addr().map_err(|e| CliError::Failed(e.to_string()))?);
                nca_server::serve(listener, state)
                    .await
                    .map_err(|e| CliError::Failed(e.to_string()))
            })??;
        }
        Command::Export { checkpoint, sample, steps, every, out, with_target, seed } => {
            let spec = ExportSpec { steps, every, sample, with_target, seed };
            let paths = export::export(&checkpoint, &out, &spec)?;
            say(format!("wrote {} frames to {}", paths.len(), out.display()));
        }
        Command::Client { url, action } => block_on(client(url, action))??,
    }
    Ok(())
}

fn parse_control(s: &str) -> Result<nca_client::ControlAction, CliError> {
    use nca_client::ControlAction as A;
    let (name, arg) = s.split_once(':').map_or((s, None), |(a, b)| (a, Some(b)));
    let num = |d: &str| -> Result<f64, CliError> {
        arg.unwrap_or(d).parse().map_err(|_| CliError::Usage(format!("bad control argument in {s:?}")))
    };
    Ok(match name {
        "run" => A::Run { rate: num("20")? },
        "pause" => A::Pause,
        "step" => A::Step { k: num("1")? as u64 },
        "reset" => A::Reset,
        _ => return Err(CliError::Usage(format!("unknown control action {name:?}"))),
    })
}

async fn client(url: String, action: ClientAction) -> Result<(), CliError> {
    let c = nca_client::Client::new(&url);
    let fail = |e: nca_client::ClientError| CliError::Failed(e.to_string());
    let out = match action {
        ClientAction::Models => serde_json::to_value(c.models().await.map_err(fail)?),
        ClientAction::Create { model, seed, sample } => {
            let req = nca_client::CreateSession { model_id: model, seed, sample, ..Default::default() };
            serde_json::to_value(c.create_session(&req).await.map_err(fail)?)
        }
        ClientAction::Control { session, action } => {
            serde_json::to_value(c.control(&session, &parse_control(&action)?).await.map_err(fail)?)
        }
        ClientAction::Perturb { session, json } => {
            let p = serde_json::from_str(&json).map_err(|e| CliError::Usage(format!("perturbation JSON: {e}")))?;
            serde_json::to_value(c.perturb(&session, &p).await.map_err(fail)?)
        }
        ClientAction::Metrics { session, since } => {
            serde_json::to_value(c.metrics(&session, since).await.map_err(fail)?)
        }
    }
    .map_err(|e| CliError::Failed(e.to_string()))?;
    say(serde_json::to_string_pretty(&out).expect("json"));
    Ok(())
}
