use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sep::bench;
use sep::io::{run, SessionConfig};

/// Stream query interpreter: run queries over text traces.
#[derive(Parser)]
#[command(name = "sep", version, about)]
struct Cli {
    /// Query text (definitions and one final query, '.'-separated)
    #[arg(short, long)]
    query: Option<String>,

    /// Read the query from a file instead
    #[arg(long, conflicts_with = "query")]
    query_file: Option<PathBuf>,

    /// Input trace file, one event per line; repeat for several
    /// streams bound to INPUT 0, INPUT 1, ... (default: stdin)
    #[arg(short, long)]
    input: Vec<PathBuf>,

    /// Grammar extension file to load
    #[arg(long)]
    grammar: Vec<PathBuf>,

    /// Palette to enable: tuples, ltl or fsm; repeatable
    #[arg(short, long)]
    palette: Vec<String>,

    /// Print the parse tree instead of running the query
    #[arg(long)]
    parse_only: bool,

    /// Write results here instead of stdout
    #[arg(short, long)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ticker trace and time the stock queries
    Bench {
        /// Number of events in the trace
        #[arg(long, default_value_t = 100_000)]
        events: usize,

        /// Random seed for the trace
        #[arg(long, default_value_t = 1)]
        seed: u64,

        /// Comma-separated query ids, e.g. S1,S3
        #[arg(long, default_value = "S1,S2,S3,S4,S5,S6,S7")]
        queries: String,

        /// Report format: text or csv
        #[arg(long, default_value = "text")]
        report: String,

        /// Verify against the reference on a prefix of this length
        #[arg(long, default_value_t = 10_000)]
        check_prefix: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(Command::Bench { events, seed, queries, report, check_prefix }) = cli.command {
        let ids: Vec<String> = queries.split(',').map(|s| s.trim().to_string()).collect();
        return match bench::run_suite(&ids, events, seed, check_prefix) {
            Ok(results) => {
                print!("{}", bench::report(&results, &report));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {}", e);
                ExitCode::from(e.exit_code() as u8)
            }
        };
    }
    let query = match (cli.query, &cli.query_file) {
        (Some(q), _) => q,
        (None, Some(f)) => match std::fs::read_to_string(f) {
            Ok(q) => q,
            Err(e) => {
                eprintln!("error: cannot read {}: {}", f.display(), e);
                return ExitCode::from(3);
            }
        },
        (None, None) => {
            eprintln!("error: provide --query or --query-file");
            return ExitCode::from(1);
        }
    };
    let cfg = SessionConfig {
        query,
        inputs: cli.input,
        output: cli.output,
        grammar_files: cli.grammar,
        palettes: cli.palette,
        parse_only: cli.parse_only,
    };
    match run(&cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
