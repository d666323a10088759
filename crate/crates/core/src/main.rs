use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mqtt_testbed::bench::{emit_report, run_suite, ReportFormat, Scenario, SuiteReport};
use mqtt_testbed::broker::{self, BrokerConfig};

const EXIT_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_CONNECT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "mqtt-testbed",
    version,
    about = "MQTT throughput testbed with zero-loss verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the embedded broker until interrupted.
    Broker {
        #[arg(long, env = "TESTBED_PORT", default_value_t = broker::DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "0.0.0.0")]
        bind: IpAddr,
        /// JSON broker configuration; --port and --bind override it.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run benchmark scenarios.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Re-render a saved JSON report.
    Report {
        input: PathBuf,
        #[arg(long, default_value = "table", value_parser = parse_format)]
        format: ReportFormat,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run one scenario file.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Run the 50k/100k/150k reference suite.
    Tables {
        #[arg(long, default_value_t = 1)]
        repetitions: u32,
        #[command(flatten)]
        out: OutputArgs,
    },
}

#[derive(clap::Args)]
struct OutputArgs {
    /// "embedded" or host:port
    #[arg(long, env = "TESTBED_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long, env = "TESTBED_PORT")]
    port: Option<u16>,
    #[arg(long, default_value = "table", value_parser = parse_format)]
    format: ReportFormat,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also save the full JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("cannot start runtime: {e}");
            return ExitCode::from(EXIT_FAILED);
        }
    };
    runtime.block_on(dispatch(cli.command))
}

async fn dispatch(command: Command) -> ExitCode {
    match command {
        Command::Broker { port, bind, config } => serve(port, bind, config).await,
        Command::Bench {
            command: BenchCommand::Run { scenario, out },
        } => {
            let text = match std::fs::read_to_string(&scenario) {
                Ok(t) => t,
                Err(e) => return usage(format!("cannot read {}: {e}", scenario.display())),
            };
            match Scenario::from_json(&text) {
                Ok(s) => bench(vec![s], out).await,
                Err(e) => usage(format!("{}: {e}", scenario.display())),
            }
        }
        Command::Bench {
            command: BenchCommand::Tables { repetitions, out },
        } => {
            let suite = Scenario::reference_suite()
                .into_iter()
                .map(|s| Scenario { repetitions, ..s })
                .collect();
            bench(suite, out).await
        }
        Command::Report {
            input,
            format,
            output,
        } => {
            let suite: SuiteReport = match std::fs::read_to_string(&input)
                .map_err(|e| e.to_string())
                .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
            {
                Ok(s) => s,
                Err(e) => return usage(format!("{}: {e}", input.display())),
            };
            write_report(&suite, format, output.as_deref())
        }
    }
}

fn usage(msg: String) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

async fn serve(port: u16, bind: IpAddr, config: Option<PathBuf>) -> ExitCode {
    let mut cfg = match config {
        None => BrokerConfig::default(),
        Some(path) => match std::fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str::<BrokerConfig>(&t).map_err(|e| e.to_string()))
        {
            Ok(c) => c,
            Err(e) => return usage(format!("{}: {e}", path.display())),
        },
    };
    cfg.port = port;
    cfg.bind = bind;
    let handle = match broker::start(cfg).await {
        Ok(h) => h,
        Err(e @ broker::BrokerError::InvalidConfig(_)) => return usage(e.to_string()),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONNECT);
        }
    };
    log::info!("broker listening on {}", handle.local_addr());
    if let Err(e) = tokio::signal::ctrl_c().await {
        log::warn!("signal handler failed: {e}");
    }
    log::info!("shutting down");
    handle.stop().await;
    ExitCode::SUCCESS
}

async fn bench(mut scenarios: Vec<Scenario>, out: OutputArgs) -> ExitCode {
    for s in &mut scenarios {
        if let Err(e) = s
            .override_endpoint(out.endpoint.as_deref(), out.port)
            .and_then(|_| s.validate())
        {
            return usage(e);
        }
    }
    let suite = match run_suite(&scenarios).await {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Some(path) = &out.json {
        if let Err(e) = emit_report(&suite, ReportFormat::Json, Some(path)) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return ExitCode::from(EXIT_FAILED);
        }
    }
    let code = write_report(&suite, out.format, out.output.as_deref());
    if code != ExitCode::SUCCESS {
        return code;
    }
    if suite.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILED)
    }
}

fn write_report(
    suite: &SuiteReport,
    format: ReportFormat,
    output: Option<&std::path::Path>,
) -> ExitCode {
    match emit_report(suite, format, output) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: cannot write report: {e}");
            ExitCode::from(EXIT_FAILED)
        }
    }
}
