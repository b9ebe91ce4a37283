use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use concierge::admin::{self, AnalyticsReport, AnalyticsView, OutputFormat};
use concierge::assistant::boot;
use concierge::config::Config;
use concierge::gateway::serve;
use tracing::info;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "concierge",
    version,
    about = "Conversational conference assistant"
)]
struct Cli {
    /// TOML config file; CONCIERGE_* environment variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    poi_catalog: Option<PathBuf>,
    #[arg(long, global = true)]
    programme: Option<PathBuf>,
    #[arg(long, global = true)]
    port: Option<u16>,
    /// Directory for conversation logs and the profile store.
    #[arg(long, global = true)]
    log_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP and websocket server (default).
    Serve,
    /// Conversation-length and per-skill turn distributions from the logs.
    Analytics(AnalyticsArgs),
    /// Profile maintenance.
    #[command(subcommand)]
    Profiles(ProfilesCommand),
}

#[derive(Args)]
struct AnalyticsArgs {
    #[arg(long, conflicts_with = "skills")]
    histogram: bool,
    #[arg(long)]
    skills: bool,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Subcommand)]
enum ProfilesCommand {
    /// Remove a profile and scrub its attribution from the logs.
    Delete { user_id: String },
    /// Print all profiles as JSON.
    Export,
    /// Load profiles from a JSON export; existing ids are rejected.
    Import { file: PathBuf },
    /// Create a profile and print its badge token.
    Register {
        user_id: String,
        #[arg(long)]
        name: Option<String>,
    },
}

fn load_config(cli: &Cli) -> Result<Config, Box<dyn std::error::Error>> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    if let Some(p) = &cli.poi_catalog {
        cfg.poi_catalog = Some(p.clone());
    }
    if let Some(p) = &cli.programme {
        cfg.programme = Some(p.clone());
    }
    if let Some(p) = cli.port {
        cfg.port = p;
    }
    if let Some(d) = &cli.log_dir {
        cfg.log_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

async fn run_server(cfg: Config) -> Result<(), Box<dyn std::error::Error>> {
    let state = boot(&cfg)?;
    let listener = tokio::net::TcpListener::bind((cfg.bind.as_str(), cfg.port)).await?;
    info!(addr = %listener.local_addr()?, log_dir = %cfg.log_dir.display(), "listening");
    serve(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let cfg = load_config(&cli)?;
    match cli.command.unwrap_or(Command::Serve) {
        Command::Serve => tokio::runtime::Runtime::new()?.block_on(run_server(cfg))?,
        Command::Analytics(a) => {
            let view = match (a.histogram, a.skills) {
                (true, false) => AnalyticsView::Histogram,
                (false, true) => AnalyticsView::Skills,
                _ => AnalyticsView::Both,
            };
            let format = match a.format {
                Format::Json => OutputFormat::Json,
                Format::Table => OutputFormat::Table,
            };
            print!(
                "{}",
                AnalyticsReport::from_dir(&cfg.log_dir, view)?.render(format)?
            );
        }
        Command::Profiles(p) => match p {
            ProfilesCommand::Delete { user_id } => {
                let r = admin::delete_profile(&cfg.log_dir, &user_id)?;
                println!(
                    "deleted {} ({} log records scrubbed)",
                    r.user_id, r.scrubbed_records
                );
            }
            ProfilesCommand::Export => println!("{}", admin::export_profiles(&cfg.log_dir)?),
            ProfilesCommand::Import { file } => {
                let n = admin::import_profiles(&cfg.log_dir, &std::fs::read_to_string(&file)?)?;
                println!("imported {n} profiles");
            }
            ProfilesCommand::Register { user_id, name } => {
                let (profile, token) =
                    admin::register_profile(&cfg.log_dir, &user_id, name.as_deref())?;
                println!("registered {}\nbadge token: {token}", profile.user_id);
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
