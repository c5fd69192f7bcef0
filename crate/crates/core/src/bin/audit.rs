use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rla_core::ballots::CardManifest;
use rla_core::engine::{load_state, measure_all, save_state, AuditConfig, AuditState, Interpretation};
use rla_core::nonneg_mean::TestKind;
use rla_core::rational;
use rla_core::simulate::{pairwise_population, rejection_rate};
use rla_core::{AuditError, Result};

#[derive(Parser)]
#[command(name = "audit", version, about = "Run a risk-limiting audit")]
struct Cli {
    /// Audit state file.
    #[arg(long, global = true, default_value = "audit.json")]
    state: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestArg {
    Kk,
    Km,
}

#[derive(Subcommand)]
enum Command {
    /// Create a new audit from a config, CVRs and a ballot manifest.
    Init {
        #[arg(long)]
        config: PathBuf,
        /// CVR JSON lines; omit for a polling audit without CVRs.
        #[arg(long)]
        cvrs: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Draw the cards for round `k`.
    Draw {
        #[arg(long)]
        round: u32,
        /// Cards per contest; defaults to the suggested size.
        #[arg(long)]
        size: Option<u64>,
    },
    /// Enter audit-board interpretations (JSON lines); closes the round
    /// once every drawn card is covered.
    Enter {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        round: Option<u32>,
    },
    /// Print the measured risk of every contest and assertion.
    Status,
    /// Send a contest (or every open contest) to a full hand count.
    Escalate {
        #[arg(long)]
        contest: Option<String>,
        #[arg(long, default_value = "operator request")]
        reason: String,
    },
    /// Print the per-draw test trace of one assertion as JSON lines.
    Trace {
        #[arg(long)]
        contest: String,
        #[arg(long)]
        assertion: String,
    },
    /// Recompute the audit from its log and check it matches the state file.
    Replay,
    /// Serve the audit over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
    },
    /// Estimate how often simulated audits certify.
    Simulate {
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        /// `tie`, or `margin:<v>` for a population with assorter margin v.
        #[arg(long, default_value = "tie")]
        truth: String,
        #[arg(long, value_enum, default_value_t = TestArg::Kk)]
        test: TestArg,
        /// KK shift.
        #[arg(long, default_value = "0.1")]
        shift: String,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 1000)]
        population: usize,
        /// Largest sample per trial; defaults to the whole population.
        #[arg(long)]
        max_draws: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| AuditError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn read_interpretations(path: &Path) -> Result<Vec<Interpretation>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| AuditError::Parse { position: i + 1, message: e.to_string() })?,
        );
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    let state_path = cli.state.as_path();
    match cli.command {
        Command::Init { config, cvrs, manifest } => {
            if state_path.exists() {
                return Err(AuditError::Conflict(format!("{} already exists", state_path.display())));
            }
            let config = AuditConfig::from_json(&std::fs::read_to_string(&config)?)?;
            let manifest = CardManifest::from_csv(open(&manifest)?)?;
            let audit = match cvrs {
                Some(p) => AuditState::init(config, open(&p)?, manifest)?,
                None => AuditState::init(config, std::io::empty(), manifest)?,
            };
            for d in &audit.diagnostics {
                eprintln!("warning: line {} ({}): {}", d.line, d.record_id.as_deref().unwrap_or("-"), d.message);
            }
            save_state(&audit, state_path)?;
            print_json(&measure_all(&audit)?)
        }
        Command::Draw { round, size } => {
            let mut audit = load_state(state_path)?;
            let next = audit.rounds.len() as u32 + 1;
            if round != next {
                return Err(AuditError::Round(format!("the next round is {next}, not {round}")));
            }
            let drawn = audit.draw_round(size)?.clone();
            save_state(&audit, state_path)?;
            print_json(&drawn.draws)
        }
        Command::Enter { file, round } => {
            let mut audit = load_state(state_path)?;
            let number = match round.or_else(|| audit.open_round().map(|r| r.number)) {
                Some(n) => n,
                None => return Err(AuditError::Round("no round is open".into())),
            };
            let accepted = audit.enter_interpretations(number, read_interpretations(&file)?)?;
            let pending = audit.pending_draws().len();
            eprintln!("accepted {accepted} interpretations; {pending} cards pending");
            if pending == 0 {
                audit.close_round(number)?;
            }
            save_state(&audit, state_path)?;
            print_json(&measure_all(&audit)?)
        }
        Command::Status => print_json(&measure_all(&load_state(state_path)?)?),
        Command::Escalate { contest, reason } => {
            let mut audit = load_state(state_path)?;
            audit.escalate(contest.as_deref(), &reason)?;
            save_state(&audit, state_path)?;
            print_json(&measure_all(&audit)?)
        }
        Command::Trace { contest, assertion } => {
            let audit = load_state(state_path)?;
            println!("{}", audit.test_state(&contest, &assertion)?.trace_jsonl());
            Ok(())
        }
        Command::Replay => {
            let audit = load_state(state_path)?;
            let replayed = audit.replay()?;
            if serde_json::to_string(&replayed)? != serde_json::to_string(&audit)? {
                return Err(AuditError::Conflict("replayed audit differs from the recorded state".into()));
            }
            println!("replay matches: decision {:?}", replayed.decision);
            Ok(())
        }
        Command::Serve { addr } => {
            let audit = load_state(state_path)?;
            let app = rla_core::service::router(audit, Some(state_path.to_path_buf()));
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on {addr}");
            rt.block_on(rla_core::service::serve(app, addr))?;
            Ok(())
        }
        Command::Simulate { trials, truth, test, shift, alpha, population, max_draws, seed } => {
            let margin = match truth.as_str() {
                "tie" => 0.0,
                other => other
                    .strip_prefix("margin:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| AuditError::InvalidArgument(format!("unknown truth `{other}`")))?,
            };
            let test = match test {
                TestArg::Kk => TestKind::kk(rational::parse(&shift)?),
                TestArg::Km => TestKind::KaplanMartingale,
            };
            let pop = pairwise_population(population, margin)?;
            let summary = rejection_rate(&pop, &test, 0.5, alpha, trials, max_draws.unwrap_or(population), seed)?;
            print_json(&summary)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
