use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use exguard_core::cee::{self, CeeError, CeeTree};
use exguard_core::metrics;
use exguard_core::pipeline::{self, bench, PipelineConfig, PipelineError};

#[derive(Parser)]
#[command(name = "exguard", version, about = "Find fragile Java code and wrap it in exception handling")]
struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// A .java file or a directory searched recursively.
    path: PathBuf,
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the remote completion backend instead of the offline one.
    #[arg(long)]
    live: bool,
    /// Worker pool size.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Detect fragile code and write patched sources plus a report.
    Analyze(RunArgs),
    /// Analyze a corpus with `.expect.json` sidecars and score it.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Inspect an exception knowledge tree.
    Cee {
        #[command(subcommand)]
        action: CeeAction,
    },
    /// Label branches, verify them against samples and refine failures.
    RagVerify {
        cee: PathBuf,
        samples: PathBuf,
        #[arg(long, default_value = "exguard-out")]
        output: PathBuf,
        #[arg(long, default_value_t = 8)]
        workers: usize,
    },
    /// Compare sequential and pooled branch labelling under injected latency.
    Bench {
        /// Per-call latency in milliseconds.
        #[arg(long)]
        latency: u64,
        #[arg(long)]
        branches: usize,
        #[arg(long, default_value_t = 8)]
        k: usize,
    },
}

#[derive(Subcommand)]
enum CeeAction {
    /// Check structure and payloads; exit 4 on violations.
    Validate { file: PathBuf },
    Stats { file: PathBuf },
    /// Print the derived call-name to exception table.
    Keywords { file: PathBuf },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::new(e.exit_code() as u8, e.to_string())
    }
}

fn cee_failure(e: CeeError) -> Failure {
    match e {
        CeeError::Invalid(_) => Failure::new(4, e.to_string()),
        _ => Failure::new(2, e.to_string()),
    }
}

/// Write to stdout, tolerating a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print(v: &Value) {
    emit(&(serde_json::to_string_pretty(v).expect("json value serializes") + "\n"));
}

fn config_for(args: &RunArgs) -> Result<PipelineConfig, Failure> {
    let mut config = match &args.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| Failure::from(PipelineError::from(e)))?,
        None => PipelineConfig::default(),
    };
    config.live |= args.live;
    if let Some(k) = args.workers {
        config.workers = k;
    }
    if let Some(o) = &args.output {
        config.output = o.clone();
    }
    config.validate().map_err(|e| Failure::from(PipelineError::from(e)))?;
    Ok(config)
}

fn analyze(args: &RunArgs) -> Result<(), Failure> {
    let config = config_for(args)?;
    let analyzer = pipeline::analyzer(&config)?;
    let files = pipeline::discover(&args.path, Some(&config.output))?;
    let run = analyzer.analyze_sources(&pipeline::read_sources(&files)?)?;
    pipeline::write_outputs(&run, &config.output)?;
    print(&serde_json::to_value(&run.report).expect("report serializes"));
    let violations = run.report.summary.violations;
    if violations > 0 {
        return Err(Failure::new(4, format!("{violations} violation(s) in generated handling code")));
    }
    Ok(())
}

fn evaluate(args: &RunArgs, format: Format) -> Result<(), Failure> {
    let config = config_for(args)?;
    let analyzer = pipeline::analyzer(&config)?;
    let (report, run) = pipeline::evaluate_corpus(&args.path, &analyzer)?;
    pipeline::write_outputs(&run, &config.output)?;
    match format {
        Format::Json => print(&serde_json::to_value(&report).expect("report serializes")),
        Format::Table => emit(&metrics::render_table(&report)),
    }
    Ok(())
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::new(2, format!("{}: {e}", path.display())))
}

fn cee_command(action: &CeeAction) -> Result<(), Failure> {
    match action {
        CeeAction::Validate { file } => {
            let text = read(file)?;
            let violations = cee::validate_str(&text, true).map_err(cee_failure)?;
            let messages: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            let stats = match CeeTree::from_json(&text, true) {
                Ok(t) => json!(t.stats()),
                Err(_) => Value::Null,
            };
            print(&json!({ "valid": violations.is_empty(), "violations": messages, "stats": stats }));
            if !violations.is_empty() {
                return Err(Failure::new(4, format!("{} violation(s)", violations.len())));
            }
        }
        CeeAction::Stats { file } => {
            let tree = cee::load_cee(file).map_err(cee_failure)?;
            print(&json!(tree.stats()));
        }
        CeeAction::Keywords { file } => {
            let tree = cee::load_cee(file).map_err(cee_failure)?;
            print(&json!(tree.keyword_table()));
        }
    }
    Ok(())
}

fn rag_verify(cee_path: &Path, samples: &Path, output: &Path, workers: usize) -> Result<(), Failure> {
    let config = PipelineConfig {
        cee: Some(cee_path.to_path_buf()),
        samples: Some(samples.to_path_buf()),
        workers,
        ..Default::default()
    };
    config.validate().map_err(|e| Failure::from(PipelineError::from(e)))?;
    let analyzer = pipeline::analyzer(&config)?;
    let io = |e: std::io::Error| Failure::new(2, format!("writing {}: {e}", output.display()));
    std::fs::create_dir_all(output).map_err(io)?;
    let labels = serde_json::to_string_pretty(&analyzer.labels).expect("labels serialize");
    std::fs::write(output.join("labels.json"), labels + "\n").map_err(io)?;
    let report = json!({
        "verification": analyzer.verification,
        "labels": analyzer.labels,
        "theta": analyzer.config.rag.theta,
    });
    std::fs::write(output.join("verification.json"), serde_json::to_string_pretty(&report).expect("serializes") + "\n")
        .map_err(io)?;
    print(&report);
    let still_failing = analyzer.verification.reports.iter().filter(|r| r.below(analyzer.config.rag.theta)).count();
    if still_failing > 0 {
        log::warn!("{still_failing} branch(es) remain below threshold after refinement");
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Analyze(args) => analyze(args),
        Command::Evaluate { run, format } => evaluate(run, *format),
        Command::Cee { action } => cee_command(action),
        Command::RagVerify { cee, samples, output, workers } => {
            if *workers == 0 {
                return Err(Failure::new(1, "--workers must be at least 1"));
            }
            rag_verify(cee, samples, output, *workers)
        }
        Command::Bench { latency, branches, k } => {
            if *k == 0 {
                return Err(Failure::new(1, "--k must be at least 1"));
            }
            let report = bench::run(Duration::from_millis(*latency), *branches, *k);
            print(&json!(report));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).target(env_logger::Target::Stderr).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("exguard: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
