//! The `otune` command line.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use otune_core::engine::Tuner;
use otune_core::history::Observation;
use otune_harness::{run_benchmark, BenchmarkScenario};
use serde_json::json;

use crate::error::{Result, ServiceError};
use crate::service::{Best, Service, DEFAULT_META_SEED};
use crate::store::{read_log, LogContents};

#[derive(Debug, Parser)]
#[command(name = "otune", version, about = "Online configuration tuning for recurring jobs")]
pub struct Cli {
    /// Directory holding task logs.
    #[arg(long, global = true, env = "OTUNE_DATA_DIR", default_value = "otune-data")]
    pub data_dir: PathBuf,
    /// Address for `serve`.
    #[arg(long, global = true, env = "OTUNE_LISTEN", default_value = "127.0.0.1:7878")]
    pub listen: String,
    /// For `serve`, seeds the meta-learning model; for `simulate`, replaces
    /// the scenario's seed list with this single seed.
    #[arg(long, global = true, env = "OTUNE_SEED")]
    pub seed: Option<u64>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, env = "OTUNE_LOG_LEVEL", default_value = "warn")]
    pub log_level: log::LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the tuning service until killed.
    Serve,
    /// Run a benchmark scenario against the simulator.
    Simulate {
        scenario: PathBuf,
        /// Write the JSON report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the summary table to standard output.
        #[arg(long)]
        table: bool,
    },
    /// Parameter importance for a task, most important first.
    Importance { task_id: String },
    /// Trajectory summary and plot for a task.
    Report { task_id: String },
    /// Rebuild a task from its log and print the incumbent.
    Replay { log: PathBuf },
}

/// Parses arguments and runs; returns the process exit status.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    let _ = env_logger::Builder::new().filter_level(cli.log_level).try_init();
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            let _ = writeln!(err, "error: {}: {message}", e.class());
            1
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Serve => {
            let service = Service::open_with(&cli.data_dir, None, cli.seed.unwrap_or(DEFAULT_META_SEED))?;
            let handle = crate::server::serve(Arc::new(service), &cli.listen)?;
            writeln!(out, "listening on {}", handle.addr())?;
            out.flush()?;
            handle.wait();
            Ok(())
        }
        Command::Simulate { scenario, out: path, table } => {
            let mut s = BenchmarkScenario::load(scenario)?;
            if let Some(seed) = cli.seed {
                s.seeds = vec![seed];
            }
            let report = run_benchmark(&s)?;
            let json = report.to_json();
            match path {
                Some(p) => std::fs::write(p, &json)?,
                None if !table => out.write_all(json.as_bytes())?,
                None => {}
            }
            if *table {
                out.write_all(report.table().as_bytes())?;
            }
            Ok(())
        }
        Command::Importance { task_id } => {
            let (_, mut tuner) = load_task(&cli.data_dir, task_id)?;
            let report = tuner.importance()?;
            let mut ranked: Vec<(&String, &f64)> = report.scores.iter().collect();
            ranked.sort_by(|a, b| b.1.total_cmp(a.1).then_with(|| a.0.cmp(b.0)));
            let doc = json!({
                "task_id": task_id,
                "samples": report.samples,
                "confident": report.confident,
                "importance": ranked.iter().map(|(p, s)| json!({"parameter": p, "score": s})).collect::<Vec<_>>(),
            });
            writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("json"))?;
            Ok(())
        }
        Command::Report { task_id } => {
            let (contents, tuner) = load_task(&cli.data_dir, task_id)?;
            out.write_all(report_text(&contents, &tuner).as_bytes())?;
            Ok(())
        }
        Command::Replay { log } => {
            let contents = read_log(log)?;
            let tuner = rebuild(&contents)?;
            let best = tuner
                .incumbent()
                .map(Best::from)
                .ok_or_else(|| ServiceError::NotReady(format!("{}: no usable observation", log.display())))?;
            writeln!(out, "{}", serde_json::to_string_pretty(&best).expect("json"))?;
            Ok(())
        }
    }
}

fn rebuild(contents: &LogContents) -> Result<Tuner> {
    Ok(Tuner::replay(
        contents.spec.definition.clone(),
        contents.spec.space()?,
        contents.spec.options.tuner_options(),
        contents.observations.clone(),
    )?)
}

/// Reads a task without touching its log, so it is safe while a server runs.
fn load_task(data_dir: &Path, task_id: &str) -> Result<(LogContents, Tuner)> {
    let path = data_dir.join("tasks").join(format!("{task_id}.jsonl"));
    if !path.exists() {
        return Err(ServiceError::NotFound(task_id.into()));
    }
    let contents = read_log(&path)?;
    let tuner = rebuild(&contents)?;
    Ok((contents, tuner))
}

fn report_text(contents: &LogContents, tuner: &Tuner) -> String {
    let def = &contents.spec.definition;
    let history = tuner.history();
    let mut s = String::new();
    let _ = writeln!(s, "task {}  status {:?}  epoch {}", def.task_id, tuner.status(), tuner.epoch());
    let failed = history.iter().filter(|o| o.failed).count();
    let infeasible = history.iter().filter(|o| !o.failed && !o.feasible).count();
    let _ = writeln!(
        s,
        "observations {} of {}  failed {failed}  infeasible {infeasible}",
        history.len(),
        def.budget
    );
    match tuner.incumbent() {
        Some(o) => {
            let _ = writeln!(
                s,
                "incumbent  iteration {}  objective {:.4}  {}  {}",
                o.iteration,
                o.objective,
                if o.feasible { "feasible" } else { "infeasible" },
                o.configuration
            );
        }
        None => s.push_str("incumbent  none\n"),
    }
    s.push('\n');
    s.push_str("iter  source      runtime    objective  best\n");
    let mut best = f64::INFINITY;
    let mut curve = Vec::with_capacity(history.len());
    for o in history {
        if o.is_usable() && o.feasible {
            best = best.min(o.objective);
        }
        curve.push(best);
        let _ = writeln!(
            s,
            "{:>4}  {:<10} {:>9} {:>12} {:>5}",
            o.iteration,
            o.source.to_string(),
            num(o.runtime),
            num(o.objective),
            if o.failed {
                "fail"
            } else if !o.feasible {
                "unsafe"
            } else if o.objective == best {
                "*"
            } else {
                ""
            }
        );
    }
    s.push('\n');
    s.push_str(&plot(history, &curve));
    s
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3}")
    } else {
        "-".into()
    }
}

const PLOT_ROWS: usize = 10;

/// Objective per iteration (`o` feasible, `x` unsafe) with the best-so-far
/// line (`-`).
fn plot(history: &[Observation], best: &[f64]) -> String {
    let values: Vec<f64> = history.iter().map(|o| o.objective).filter(|v| v.is_finite()).collect();
    if values.is_empty() {
        return "(nothing to plot)\n".into();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let row = |v: f64| (((hi - v) / span) * (PLOT_ROWS - 1) as f64).round() as usize;
    let mut grid = vec![vec![' '; history.len()]; PLOT_ROWS];
    for (i, b) in best.iter().enumerate() {
        if b.is_finite() {
            grid[row(*b)][i] = '-';
        }
    }
    for (i, o) in history.iter().enumerate() {
        if o.objective.is_finite() {
            grid[row(o.objective)][i] = if o.feasible { 'o' } else { 'x' };
        }
    }
    let mut s = String::new();
    for (r, cells) in grid.iter().enumerate() {
        let label = match r {
            0 => format!("{hi:>10.3} |"),
            r if r == PLOT_ROWS - 1 => format!("{lo:>10.3} |"),
            _ => format!("{:>10} |", ""),
        };
        let _ = writeln!(s, "{label}{}", cells.iter().collect::<String>().trim_end());
    }
    let _ = writeln!(s, "{:>10} +{}", "", "-".repeat(history.len()));
    s
}
