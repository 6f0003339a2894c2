use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chaincs::acceptance::{run_suite, RUNTIME_LIMITS};
use chaincs::config::RunConfig;
use chaincs::pipeline::{cmd_chainset, cmd_conjugate, cmd_decompose, cmd_simulate, RunOutput};
use chaincs::report::write_outputs;
use chaincs::Result;

#[derive(Parser)]
#[command(name = "chaincs", version, about = "Chain control sets of linear control systems on Lie groups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spectral and level decomposition of the derivation.
    Decompose(RunArgs),
    /// Integrate one trajectory.
    Simulate(RunArgs),
    /// Build the chain graph and verify the extracted sets.
    Chainset(RunArgs),
    /// Divide out the declared kernel and compare both chain sets.
    Conjugate(RunArgs),
    /// Run the acceptance suite.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file, or `preset:NAME` for a bundled one.
    #[arg(long)]
    config: String,
    /// Output directory (defaults to `output.dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value = "out/verify")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn run(args: &RunArgs, cmd: fn(&RunConfig) -> Result<RunOutput>) -> Result<i32> {
    let cfg = RunConfig::resolve(&args.config)?.with_overrides(args.seed, args.eps, args.tau, args.delta);
    let out = cmd(&cfg)?;
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    write_outputs(&dir, &out, &cfg.output)?;
    let report = &out.report;
    for r in report.residuals.failures() {
        eprintln!("residual {} = {:.3e} (tolerance {:.0e})", r.name, r.value, r.tolerance);
    }
    if let Some(v) = report.chain.as_ref().map(|c| &c.verification) {
        for f in &v.failures {
            eprintln!("check failed: {f}");
        }
        for d in &v.diagnostics {
            eprintln!("note: {d}");
        }
    }
    println!(
        "{} {}: {:?}, report in {}",
        report.command,
        report.name,
        report.outcome,
        dir.join("report.json").display()
    );
    Ok(report.exit_code())
}

fn verify(args: &VerifyArgs) -> Result<i32> {
    let (report, secs) = run_suite(args.seed);
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("report.json"), report.to_json() + "\n")?;
    let timings: std::collections::BTreeMap<String, f64> =
        secs.iter().enumerate().map(|(k, s)| (format!("criterion_{}", k + 1), *s)).collect();
    std::fs::write(
        args.out.join("timings.json"),
        serde_json::to_string_pretty(&timings).expect("timings serialize") + "\n",
    )?;
    let mut ok = report.all_pass();
    for c in &report.criteria {
        let secs = secs.get(c.id - 1).copied();
        let slow = secs.is_some_and(|s| s > RUNTIME_LIMITS[c.id - 1]);
        ok &= !slow;
        match secs {
            Some(s) if slow => println!("{} (took {s:.1}s, limit {:.0}s)", c.line(), RUNTIME_LIMITS[c.id - 1]),
            Some(s) => println!("{} ({s:.1}s)", c.line()),
            None => println!("{}", c.line()),
        }
    }
    Ok(if ok { 0 } else { 3 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Decompose(a) => run(a, cmd_decompose),
        Command::Simulate(a) => run(a, cmd_simulate),
        Command::Chainset(a) => run(a, cmd_chainset),
        Command::Conjugate(a) => run(a, cmd_conjugate),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
