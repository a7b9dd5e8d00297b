use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use ivtp::inspect::{inspect, Query};
use ivtp::report::{regenerate, write_run, SessionStatus};
use ivtp::scenario::ScenarioConfig;
use ivtp::sim::run_scenario;
use ivtp::vectors::{identity_vectors, merkle_vectors, to_file_json};

#[derive(Parser)]
#[command(name = "ivtp", version, about = "Trust-point vehicle protocol simulator and chain inspector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write chain.bin, trace.jsonl and report.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Query a chain file.
    Inspect {
        chain: PathBuf,
        /// Trace used to print aliases. Defaults to trace.jsonl beside the chain.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(subcommand)]
        query: QueryArg,
    },
    /// Rebuild report.json from a run directory and print it.
    Report { dir: PathBuf },
    /// Emit the golden test vectors.
    Vectors {
        /// Write identity.json and merkle.json here instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum QueryArg {
    /// Balance in milli-trust. Accepts an alias, a hex id, or a unique hex prefix.
    Balance { vehicle: String },
    /// Committed transactions involving the vehicle, one JSON object per line.
    History { vehicle: String },
    /// Peers each vehicle has communicated with.
    CommTable,
    /// Full replay of the chain file.
    Validate,
}

fn run(scenario: PathBuf, out: PathBuf) -> anyhow::Result<()> {
    let cfg = ScenarioConfig::load(&scenario)?;
    let output = run_scenario(&cfg).with_context(|| format!("scenario {}", scenario.display()))?;
    let report = write_run(&output, &out)?;
    println!(
        "{}: {} blocks, chain {}, trace {}",
        report.scenario,
        report.chain.blocks.len(),
        if report.chain.valid { "valid" } else { "INVALID" },
        report.trace_digest
    );
    for s in &report.sessions {
        let status = match s.status {
            SessionStatus::Committed => "committed",
            SessionStatus::Aborted => "aborted",
            SessionStatus::Unresolved => "unresolved",
        };
        print!("  {} {status} after {} round(s)", s.intersection, s.rounds);
        if let (Some(order), Some(p)) = (&s.ordering, &s.proposer) {
            print!(": [{}] by {p}", order.join(", "));
        }
        for r in &s.rewards {
            print!(", {} -> {} {}", r.from, r.to, r.amount_millitrust);
        }
        println!();
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn vectors(out: Option<PathBuf>) -> anyhow::Result<()> {
    let identity = to_file_json(&identity_vectors());
    let merkle = to_file_json(&merkle_vectors());
    match out {
        Some(dir) => {
            std::fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
            for (name, body) in [("identity.json", identity), ("merkle.json", merkle)] {
                let path = dir.join(name);
                std::fs::write(&path, body).with_context(|| path.display().to_string())?;
            }
        }
        None => print!("{identity}{merkle}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, out } => run(scenario, out),
        Command::Report { dir } => regenerate(&dir)
            .map(|r| print!("{}", String::from_utf8_lossy(&r.to_json())))
            .map_err(Into::into),
        Command::Vectors { out } => vectors(out),
        Command::Inspect { chain, trace, query } => {
            let query = match query {
                QueryArg::Balance { vehicle } => Query::Balance(vehicle),
                QueryArg::History { vehicle } => Query::History(vehicle),
                QueryArg::CommTable => Query::CommTable,
                QueryArg::Validate => Query::Validate,
            };
            return match inspect(&chain, trace.as_deref(), &query) {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
