use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use slime_core::metrics::{positions_markdown, write_positions_csv, write_repetitions_jsonl};
use slime_core::repro::{run_experiment, EXPERIMENTS};
use slime_core::sampling::{estimate_scales, read_background_csv};
use slime_core::{
    lime_explain, repeat_explanations, slime_explain, Error, ExplainerConfig, Explanation, InstanceSpec, Method,
    Regeneration, Result,
};

mod manifest;
mod model_spec;

use manifest::{now_ms, RunManifest};
use model_spec::{load_model, parse_list};

const EXIT_OK: u8 = 0;
const EXIT_FAILED_CHECK: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_MODEL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "slime", version, about = "Stabilized local explanations for black-box models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Explain one prediction.
    Explain(ExplainArgs),
    /// Repeat an explanation and report position-wise stability.
    Bench(BenchArgs),
    /// Run a canned experiment and check it against fixed tolerances.
    Repro(ReproArgs),
    /// Re-run the command stored in a manifest and compare artifact digests.
    Replay { manifest: PathBuf },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Lime,
    Slime,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum RegenArg {
    Reuse,
    Fresh,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// builtin:mars, builtin:linear:c1,c2,..[@b], expr:<expr>, exec:<cmd> or batch:<cmd>
    #[arg(long)]
    model: String,
    /// Comma-separated feature values.
    #[arg(long)]
    instance: String,
    #[arg(long, value_enum, default_value = "slime")]
    method: MethodArg,
    /// Initial sample size.
    #[arg(long)]
    n0: Option<usize>,
    /// Sample size for LIME.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    kernel_width: Option<f64>,
    #[arg(long, env = "SLIME_SEED", default_value_t = 0)]
    seed: u64,
    /// Comma-separated perturbation scales (default 1 each).
    #[arg(long, conflicts_with = "background")]
    scales: Option<String>,
    /// CSV of background data; supplies feature names and scales.
    #[arg(long)]
    background: Option<PathBuf>,
    /// Test the leader against every remaining candidate.
    #[arg(long)]
    multiple_testing: bool,
    #[arg(long, value_enum, default_value = "reuse")]
    regeneration: RegenArg,
    #[arg(long, default_value_t = 4.0)]
    growth_factor: f64,
    /// Defaults to json for explain and table for bench.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Where to write the run manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long)]
    workers: Option<usize>,
    /// Directory for stability.csv, stability.md and explanations.jsonl.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReproArgs {
    name: String,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Debug)]
struct Resolved {
    instance: InstanceSpec,
    config: ExplainerConfig,
    method: Method,
}

impl RunArgs {
    fn resolve(&self) -> Result<Resolved> {
        let values = parse_list(&self.instance, "instance value")?;
        let instance = match (&self.scales, &self.background) {
            (Some(s), _) => InstanceSpec::with_scales(values, parse_list(s, "scale")?)?,
            (None, Some(path)) => {
                let (names, data) = read_background_csv(path)?;
                InstanceSpec::new(values, names, estimate_scales(&data)?)?
            }
            (None, None) => InstanceSpec::with_unit_scales(values)?,
        };
        let method = match self.method {
            MethodArg::Lime => Method::Lime,
            MethodArg::Slime => Method::Slime,
        };
        let defaults = ExplainerConfig::default();
        let (n0, n_max) = match method {
            Method::Lime => {
                let n = self.n.or(self.n0).unwrap_or(defaults.n0);
                (n, self.n_max.unwrap_or(defaults.n_max).max(n))
            }
            Method::Slime => {
                if self.n.is_some() {
                    return Err(Error::validation("--n sets the LIME sample size; use --n0 and --n-max with slime"));
                }
                (self.n0.unwrap_or(defaults.n0), self.n_max.unwrap_or(defaults.n_max))
            }
        };
        let config = ExplainerConfig {
            n0,
            n_max,
            alpha: self.alpha,
            k: self.k,
            kernel_width: self.kernel_width,
            multiple_testing: self.multiple_testing,
            growth_factor: self.growth_factor,
            seed: self.seed,
            regeneration: match self.regeneration {
                RegenArg::Reuse => Regeneration::Reuse,
                RegenArg::Fresh => Regeneration::Fresh,
            },
        };
        config.validate()?;
        Ok(Resolved { instance, config, method })
    }

    fn manifest_config(&self, r: &Resolved) -> serde_json::Value {
        json!({
            "model": self.model,
            "method": r.method,
            "instance": r.instance,
            "explainer": r.config,
            "kernel_width": r.config.kernel_width.unwrap_or_else(|| r.instance.default_kernel_width()),
        })
    }
}

fn explanation_table(e: &Explanation) -> String {
    let mut out = format!(
        "method: {}\nfinal_n: {}\ncapped: {}\niterations: {}\nintercept: {}\n\n| Rank | Feature | Coefficient |\n|---|---|---|\n",
        e.method, e.final_n, e.capped, e.iterations, e.intercept
    );
    for (i, f) in e.selected.iter().enumerate() {
        out.push_str(&format!("| {} | {} | {} |\n", i + 1, f.name, f.coefficient));
    }
    if !e.test_trace.is_empty() {
        out.push_str("\n| Step | Leader | Runner-up | n | t | p | Significant |\n|---|---|---|---|---|---|---|\n");
        for d in &e.test_trace {
            let (a, b) = d.compared.clone().unwrap_or_default();
            out.push_str(&format!(
                "| {} | {a} | {b} | {} | {:.6} | {:.6} | {} |\n",
                d.step.map(|s| s.to_string()).unwrap_or_default(),
                d.n,
                d.statistic_t,
                d.p_value,
                d.significant
            ));
        }
    }
    out
}

fn workers(requested: Option<usize>) -> Result<usize> {
    match requested {
        Some(0) => Err(Error::validation("--workers must be at least 1")),
        Some(w) => Ok(w),
        None => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn sibling_manifest(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// Options that differ between a fresh run and a replay.
struct Session {
    args: Vec<String>,
    started: u128,
    write_manifest: bool,
}

fn cmd_explain(a: &ExplainArgs, s: &Session) -> Result<u8> {
    let r = a.run.resolve()?;
    let model = load_model(&a.run.model, &r.instance.feature_names)?;
    let explanation = match r.method {
        Method::Lime => lime_explain(&model.handle, &r.instance, &r.config)?,
        Method::Slime => slime_explain(&model.handle, &r.instance, &r.config)?,
    };
    let mut text = match a.run.format.unwrap_or(Format::Json) {
        Format::Json => serde_json::to_string_pretty(&explanation)?,
        Format::Table => explanation_table(&explanation),
    };
    if !text.ends_with('\n') {
        text.push('\n');
    }
    emit(&text, a.out.as_deref())?;
    let target = a.run.manifest.clone().or_else(|| a.out.as_deref().map(sibling_manifest));
    if let (true, Some(target)) = (s.write_manifest, target) {
        let mut m = RunManifest::new("explain", s.args.clone(), a.run.manifest_config(&r), vec![r.config.seed], s.started);
        if let Some(out) = &a.out {
            m.record(out)?;
        }
        m.write(&target)?;
    }
    Ok(EXIT_OK)
}

fn cmd_bench(a: &BenchArgs, s: &Session) -> Result<u8> {
    if a.reps < 2 {
        return Err(Error::validation(format!("--reps must be at least 2, got {}", a.reps)));
    }
    let r = a.run.resolve()?;
    let workers = workers(a.workers)?;
    let model = load_model(&a.run.model, &r.instance.feature_names)?;
    let outcome = repeat_explanations(&model.handle, &r.instance, r.method, &r.config, a.reps, r.config.seed, workers)?;
    for rep in &outcome.repetitions {
        if let Some(err) = &rep.error {
            eprintln!("warning: repetition {} (seed {}) failed: {err}", rep.rep, rep.seed);
        }
    }
    let label = r.method.to_string();
    let table = positions_markdown(&[(label.as_str(), &outcome.report)]);
    let stdout = match a.run.format.unwrap_or(Format::Table) {
        Format::Json => {
            let mut t = serde_json::to_string_pretty(&json!({ "method": r.method, "report": outcome.report }))?;
            t.push('\n');
            t
        }
        Format::Table => table.clone(),
    };
    emit(&stdout, None)?;

    let mut artifacts = Vec::new();
    if let Some(dir) = &a.report {
        std::fs::create_dir_all(dir)?;
        let csv = dir.join("stability.csv");
        write_positions_csv(&outcome.report, &csv)?;
        let md = dir.join("stability.md");
        std::fs::write(&md, &table)?;
        let log = dir.join("explanations.jsonl");
        write_repetitions_jsonl(&outcome.repetitions, &log)?;
        artifacts = vec![csv, md, log];
    }
    let target = a.run.manifest.clone().or_else(|| a.report.as_ref().map(|d| d.join("manifest.json")));
    if let (true, Some(target)) = (s.write_manifest, target) {
        let mut config = a.run.manifest_config(&r);
        config["reps"] = json!(a.reps);
        config["workers"] = json!(workers);
        let seeds = outcome.repetitions.iter().map(|rep| rep.seed).collect();
        let mut m = RunManifest::new("bench", s.args.clone(), config, seeds, s.started);
        for path in &artifacts {
            m.record(path)?;
        }
        m.write(&target)?;
    }
    Ok(EXIT_OK)
}

fn cmd_repro(a: &ReproArgs) -> Result<u8> {
    let outcome = run_experiment(&a.name, workers(a.workers)?)?;
    let text = match a.format {
        Format::Table => {
            let mut t = outcome.report.clone();
            if !t.ends_with('\n') {
                t.push('\n');
            }
            t.push('\n');
            for c in &outcome.checks {
                t.push_str(&c.line());
                t.push('\n');
            }
            t
        }
        Format::Json => {
            let mut t = serde_json::to_string_pretty(&json!({
                "name": outcome.name,
                "passed": outcome.passed(),
                "checks": outcome.checks,
            }))?;
            t.push('\n');
            t
        }
    };
    emit(&text, None)?;
    Ok(if outcome.passed() { EXIT_OK } else { EXIT_FAILED_CHECK })
}

fn cmd_replay(path: &Path) -> Result<u8> {
    let stored = RunManifest::read(path)?;
    let mut argv = vec![stored.tool.clone()];
    argv.extend(stored.args.iter().cloned());
    let cli = Cli::try_parse_from(&argv).map_err(|e| Error::validation(format!("stored arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Replay { .. }) {
        return Err(Error::validation("manifest records a replay"));
    }
    std::env::set_current_dir(&stored.working_dir)?;
    let session = Session { args: stored.args.clone(), started: now_ms(), write_manifest: false };
    let code = run(&cli.command, &session)?;
    if code != EXIT_OK {
        return Ok(code);
    }
    let bad = stored.mismatches();
    if bad.is_empty() {
        eprintln!("replay: {} artifact(s) reproduced byte-identically", stored.artifacts.len());
        Ok(EXIT_OK)
    } else {
        for p in &bad {
            eprintln!("replay: {} differs from the recorded digest", p.display());
        }
        Ok(EXIT_FAILED_CHECK)
    }
}

fn run(command: &Command, session: &Session) -> Result<u8> {
    match command {
        Command::Explain(a) => cmd_explain(a, session),
        Command::Bench(a) => cmd_bench(a, session),
        Command::Repro(a) => {
            if !EXPERIMENTS.contains(&a.name.as_str()) {
                return Err(Error::validation(format!(
                    "unknown experiment '{}' (expected one of: {})",
                    a.name,
                    EXPERIMENTS.join(", ")
                )));
            }
            cmd_repro(a)
        }
        Command::Replay { manifest } => cmd_replay(manifest),
    }
}

fn exit_code(err: &Error) -> u8 {
    if err.is_model_query() {
        EXIT_MODEL
    } else {
        EXIT_USAGE
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let session = Session {
        args: std::env::args().skip(1).collect(),
        started: now_ms(),
        write_manifest: true,
    };
    match run(&cli.command, &session) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
