use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hecovert::{
    cmd_montecarlo, cmd_net_attacker, cmd_net_controller, cmd_net_observe, cmd_net_plant, cmd_probe, cmd_simulate,
    detection_summary, load_config, probe_table, trace_status, HarnessError, TraceOutputs, EXIT_CONFIG, EXIT_OK,
    EXIT_TRIPPED,
};
use hecovert_core::verify::DetectionMode;

#[derive(Parser)]
#[command(name = "hecovert", version, about = "Covert attacks on encrypted control loops, and their detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario in-process and write its trace.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_trace: Option<PathBuf>,
        #[arg(long)]
        out_plot: Option<PathBuf>,
    },
    /// Histogram the step at which a guessing attacker is first detected.
    Montecarlo {
        #[arg(long)]
        lambda: usize,
        #[arg(long)]
        attack_len: usize,
        #[arg(long)]
        trials: usize,
        #[arg(long, default_value = "fast")]
        mode: DetectionMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate attack success probabilities against the bound.
    Probe {
        #[arg(long)]
        lambda_max: usize,
    },
    /// Run one role of the networked loop.
    Net(NetArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Role {
    Plant,
    Controller,
    Attacker,
    /// Merge a controller transcript into a plant trace (needs the plant's key).
    Observer,
}

#[derive(clap::Args)]
struct NetArgs {
    #[arg(long, value_enum)]
    role: Role,
    /// controller, attacker: address to listen on.
    #[arg(long)]
    listen: Option<String>,
    /// attacker: controller address.
    #[arg(long)]
    upstream: Option<String>,
    /// plant: controller or attacker address.
    #[arg(long)]
    connect: Option<String>,
    /// plant, attacker, observer: scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// controller: where to save the frames it exchanged; observer: where to read them.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// observer: plant trace to complete.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    out_trace: Option<PathBuf>,
    #[arg(long)]
    out_plot: Option<PathBuf>,
}

fn required<T: Clone>(value: &Option<T>, flag: &str, role: &str) -> Result<T, HarnessError> {
    value.clone().ok_or_else(|| HarnessError::Config(format!("--role {role} needs --{flag}")))
}

fn announce(addr: std::net::SocketAddr) {
    println!("listening on {addr}");
    let _ = std::io::stdout().flush();
}

fn run_net(args: &NetArgs) -> Result<u8, HarnessError> {
    match args.role {
        Role::Controller => {
            let listen = required(&args.listen, "listen", "controller")?;
            let report = cmd_net_controller(&listen, args.transcript.as_deref(), announce)?;
            eprintln!(
                "controller: {} steps, {} rejected frames{}",
                report.steps,
                report.rejected,
                if report.aborted { ", plant aborted" } else { "" }
            );
            Ok(EXIT_OK)
        }
        Role::Attacker => {
            let listen = required(&args.listen, "listen", "attacker")?;
            let upstream = required(&args.upstream, "upstream", "attacker")?;
            let config = load_config(&required(&args.config, "config", "attacker")?)?;
            let report = cmd_net_attacker(&listen, &upstream, &config, announce)?;
            eprintln!("attacker: relayed {} steps{}", report.steps, if report.aborted { ", detected" } else { "" });
            Ok(EXIT_OK)
        }
        Role::Plant => {
            let connect = required(&args.connect, "connect", "plant")?;
            let config = load_config(&required(&args.config, "config", "plant")?)?;
            let outputs = TraceOutputs::resolve(args.out_trace.clone(), args.out_plot.clone(), &config);
            let trace = cmd_net_plant(&connect, &config, &outputs)?;
            Ok(trace_status(&trace))
        }
        Role::Observer => {
            let config = load_config(&required(&args.config, "config", "observer")?)?;
            let transcript = required(&args.transcript, "transcript", "observer")?;
            let trace = required(&args.trace, "trace", "observer")?;
            let outputs = TraceOutputs::resolve(args.out_trace.clone(), args.out_plot.clone(), &config);
            cmd_net_observe(&config, &transcript, &trace, &outputs)?;
            Ok(EXIT_OK)
        }
    }
}

fn run(cli: Cli) -> Result<u8, HarnessError> {
    match cli.command {
        Command::Simulate { config, out_trace, out_plot } => {
            let config = load_config(&config)?;
            let outputs = TraceOutputs::resolve(out_trace, out_plot, &config);
            let trace = cmd_simulate(&config, &outputs)?;
            let status = trace_status(&trace);
            if status == EXIT_TRIPPED {
                let k = trace.rows.last().map_or(0, |r| r.k);
                eprintln!("verification tripped at k = {k}");
            }
            Ok(status)
        }
        Command::Montecarlo { lambda, attack_len, trials, mode, seed, out } => {
            let hist = cmd_montecarlo(lambda, attack_len, trials, mode, seed, &out)?;
            print!("{}", detection_summary(&hist));
            Ok(EXIT_OK)
        }
        Command::Probe { lambda_max } => {
            print!("{}", probe_table(&cmd_probe(lambda_max)?));
            Ok(EXIT_OK)
        }
        Command::Net(args) => run_net(&args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("hecovert: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
