use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use handover::dataset::{self, DatasetManifest};
use handover::harness::{self, compare, ExperimentConfig, LoadedConfig, RegimeReport, RunError};
use handover::policy::load_policy;
use handover::sim::TaskId;
use handover::Error;
use handover_teleop::server::{replay_into, ServerConfig};
use handover_teleop::Transcript;

#[derive(Parser)]
#[command(name = "handover", version, about = "Human-gated imitation learning laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and write its report and artifacts.
    Run {
        config: PathBuf,
        /// Rollout and evaluation threads; results do not depend on it.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Evaluate a saved policy under an experiment's task and protocol.
    Eval {
        policy: PathBuf,
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Print the summary as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Compare regime reports sharing a task and evaluation protocol.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        /// Write the comparison CSV here instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Host teleoperation sessions over websockets.
    Serve {
        config: PathBuf,
        #[arg(long)]
        listen: Option<String>,
        /// Task of sessions opened without `?task=`.
        #[arg(long)]
        task: Option<TaskId>,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        physics_hz: Option<f64>,
        #[arg(long)]
        snapshot_hz: Option<f64>,
        /// Keep a transcript of every session.
        #[arg(long)]
        record: bool,
        /// Replay a transcript headless instead of serving.
        #[arg(long, value_name = "TRANSCRIPT")]
        replay: Option<PathBuf>,
        /// Defaults to `sessions/` under the experiment's output directory.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Dataset utilities.
    Dataset {
        #[command(subcommand)]
        command: DatasetCmd,
    },
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Summarize a dataset file.
    Inspect {
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

/// Exit status for an error outside `run`.
fn code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(code_for(&e))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Cmd::Run { config, workers } => cmd_run(&config, workers),
        Cmd::Eval {
            policy,
            config,
            workers,
            json,
        } => cmd_eval(&policy, &config, workers, json).unwrap_or_else(fail),
        Cmd::Compare { reports, output } => cmd_compare(&reports, output.as_deref()).unwrap_or_else(fail),
        Cmd::Serve {
            config,
            listen,
            task,
            policy,
            physics_hz,
            snapshot_hz,
            record,
            replay,
            data_dir,
        } => {
            let loaded = match ExperimentConfig::load(&config) {
                Ok(l) => l,
                Err(e) => return fail(e),
            };
            let flags = ServeFlags {
                listen,
                task,
                policy,
                physics_hz,
                snapshot_hz,
                record,
                data_dir,
            };
            let cfg = match server_config(&loaded, flags) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            match replay {
                Some(t) => cmd_replay(&cfg, &t).unwrap_or_else(fail),
                None => cmd_serve(cfg).unwrap_or_else(fail),
            }
        }
        Cmd::Dataset {
            command: DatasetCmd::Inspect { file, json },
        } => cmd_inspect(&file, json).unwrap_or_else(fail),
    }
}

fn cmd_run(config: &Path, workers: usize) -> ExitCode {
    match harness::run_file(config, workers) {
        Ok(s) => {
            print!("{}", s.report.to_csv());
            eprintln!("artifacts in {}", s.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let RunError::Runtime { output_dir, .. } = &e {
                eprintln!("manifest: {}", output_dir.join(harness::RUN_MANIFEST).display());
            }
            ExitCode::from(e.exit_code())
        }
    }
}

fn cmd_eval(policy: &Path, config: &Path, workers: usize, json: bool) -> Result<ExitCode, Error> {
    let loaded = ExperimentConfig::load(config)?;
    let s = harness::eval_policy(policy, &loaded, workers)?;
    let names = &loaded.config.task_spec().subtask_names;
    if json {
        let v = serde_json::json!({
            "task_id": loaded.config.task_id,
            "eval_protocol": loaded.eval.describe(),
            "episodes": s.episodes,
            "subtasks": names,
            "subtask_success": s.subtask_success,
            "success": s.success_rate(),
            "mean_episode_length": s.mean_episode_length,
        });
        println!("{v}");
    } else {
        println!("task {} ({}), {} episodes", loaded.config.task_id, loaded.eval.describe(), s.episodes);
        for (n, r) in names.iter().zip(&s.subtask_success) {
            println!("  {n:<12} {r:.4}");
        }
        println!("  mean episode length {:.1}", s.mean_episode_length);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(paths: &[PathBuf], output: Option<&Path>) -> Result<ExitCode, Error> {
    let mut reports = Vec::with_capacity(paths.len());
    for p in paths {
        reports.push((p.display().to_string(), RegimeReport::load(p)?));
    }
    let table = compare(&reports)?.to_csv();
    match output {
        Some(o) => std::fs::write(o, table).map_err(|e| Error::Io {
            path: o.to_path_buf(),
            source: e,
        })?,
        None => print!("{table}"),
    }
    Ok(ExitCode::SUCCESS)
}

struct ServeFlags {
    listen: Option<String>,
    task: Option<TaskId>,
    policy: Option<PathBuf>,
    physics_hz: Option<f64>,
    snapshot_hz: Option<f64>,
    record: bool,
    data_dir: Option<PathBuf>,
}

fn server_config(loaded: &LoadedConfig, f: ServeFlags) -> Result<ServerConfig, Error> {
    let c = &loaded.config;
    let s = &c.serve;
    let mut env = c.env();
    if let Some(t) = f.task.filter(|t| *t != c.task_id) {
        env = handover::env::Env::new(handover::sim::TaskSpec::preset(t), c.arm_model());
    }
    // a flag path is relative to the working directory, a config path to the file
    let policy_path = f.policy.or_else(|| s.policy.as_ref().map(|p| loaded.resolve(p)));
    let policy = match policy_path {
        Some(p) => {
            let pol = load_policy(&p).map_err(|e| Error::Config(format!("policy: {e}")))?;
            if pol.obs_dim != env.obs_dim() || pol.act_dim != env.action_dim() {
                return Err(Error::Config(format!(
                    "{} maps {} observations to {} actions; {} needs {} to {}",
                    p.display(),
                    pol.obs_dim,
                    pol.act_dim,
                    env.task(),
                    env.obs_dim(),
                    env.action_dim()
                )));
            }
            Some(pol)
        }
        None => None,
    };
    let cfg = ServerConfig {
        listen: f.listen.unwrap_or_else(|| s.listen.clone()),
        gains: c.gain_profile(),
        env,
        policy,
        seed: s.seed,
        physics_hz: f.physics_hz.unwrap_or(s.physics_hz),
        snapshot_hz: f.snapshot_hz.unwrap_or(s.snapshot_hz),
        data_dir: f.data_dir.unwrap_or_else(|| loaded.output_dir().join("sessions")),
        record: f.record,
        config_hash: c.hash(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_replay(cfg: &ServerConfig, transcript: &Path) -> Result<ExitCode, Error> {
    let t = Transcript::load(transcript)?;
    let dir = cfg.data_dir.join(format!("replay-{}", t.header.session));
    for p in replay_into(cfg, &t, &dir)? {
        println!("{}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_serve(cfg: ServerConfig) -> Result<ExitCode, Error> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Runtime(format!("tokio runtime: {e}")))?;
    rt.block_on(async move {
        let server = handover_teleop::start(cfg.clone()).await?;
        log::info!(
            "serving {} on ws://{}/session/<id> ({} Hz physics, {} Hz snapshots), data in {}",
            cfg.env.task(),
            server.addr,
            cfg.physics_hz,
            cfg.snapshot_hz,
            cfg.data_dir.display()
        );
        tokio::signal::ctrl_c()
            .await
            .map_err(|e| Error::Runtime(format!("signal handler: {e}")))?;
        log::info!("shutting down");
        server.shutdown().await;
        Ok(ExitCode::SUCCESS)
    })
}

fn cmd_inspect(file: &Path, json: bool) -> Result<ExitCode, Error> {
    let ts = dataset::read_transitions(file)?;
    let summary = dataset::summarize(&ts);
    let mpath = dataset::manifest_path(file);
    let manifest: Option<DatasetManifest> = match std::fs::read_to_string(&mpath) {
        Ok(text) => Some(
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", mpath.display())))?,
        ),
        Err(_) => None,
    };
    if let Some(m) = &manifest {
        if m.transitions != summary.transitions {
            log::warn!(
                "{} lists {} transitions, file has {}",
                mpath.display(),
                m.transitions,
                summary.transitions
            );
        }
    }
    if json {
        println!("{}", serde_json::json!({ "summary": summary, "manifest": manifest }));
        return Ok(ExitCode::SUCCESS);
    }
    let tasks: Vec<&str> = summary.tasks.iter().map(|t| t.name()).collect();
    println!("{}", file.display());
    println!("  transitions  {}", summary.transitions);
    println!("  episodes     {}", summary.episodes);
    println!("  human        {}", summary.human);
    println!("  policy       {}", summary.policy);
    println!("  tasks        {}", tasks.join(", "));
    if let (Some(o), Some(a)) = (summary.obs_dim, summary.action_dim) {
        println!("  dims         {o} -> {a}");
    }
    match &manifest {
        Some(m) => {
            println!("  config hash  {}", m.config_hash);
            println!("  seed         {}", m.master_seed);
            if m.partial {
                println!("  partial      yes");
            }
        }
        None => println!("  no manifest"),
    }
    Ok(ExitCode::SUCCESS)
}
