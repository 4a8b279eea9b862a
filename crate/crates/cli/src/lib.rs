//! `influence-tomograph` command line: pipeline stages and the API server.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::State;
use axum::http::{header, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::any;
use axum::Router;
use clap::{Args, Parser, Subcommand};
use influence_core::api::{Api, ApiResponse};
use influence_core::config::{ConfigError, Overrides, PipelineConfig};
use influence_core::pipeline::{self, PipelineReport, Stage, Target};
use influence_core::store::RunStore;
use tower_http::services::ServeDir;

pub const STORE_ENV: &str = "INFLUENCE_STORE_DIR";

#[derive(Debug, Parser)]
#[command(name = "influence-tomograph", version, about = "Discover influence pathways between entities in social and event data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Dotted-path override, e.g. discovery.min_correlation=0.5. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads for stage-internal parallelism (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Random seed; overrides the configured one.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Window and threshold preset: french-election, philippine, russophobia.
    #[arg(long, global = true, value_name = "NAME")]
    pub preset: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate posts and events.
    Ingest,
    /// Build the user/assertion graph and its windows.
    Graph,
    /// Add and remove links by structural score.
    Clean,
    /// Train windowed embeddings.
    Embed,
    /// Build entities and their time series.
    Entities,
    /// Find lagged influence edges between entities.
    Discover,
    /// Every stage in order, reusing cached outputs.
    All,
    /// Serve stored runs under /api/v1.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Store root; overrides the configured one.
    #[arg(long, env = STORE_ENV, value_name = "DIR")]
    pub store: Option<PathBuf>,
    /// Directory with a built operator console to serve under /.
    #[arg(long, value_name = "DIR")]
    pub ui_dir: Option<PathBuf>,
}

impl Command {
    fn target(&self) -> Option<Target> {
        Some(match self {
            Command::Ingest => Target::Stage(Stage::Ingest),
            Command::Graph => Target::Stage(Stage::Graph),
            Command::Clean => Target::Stage(Stage::Clean),
            Command::Embed => Target::Stage(Stage::Embed),
            Command::Entities => Target::Stage(Stage::Entities),
            Command::Discover => Target::Stage(Stage::Discover),
            Command::All => Target::All,
            Command::Serve(_) => return None,
        })
    }
}

pub fn load_config(common: &Common) -> Result<PipelineConfig, ConfigError> {
    let overrides = Overrides { preset: common.preset.clone(), set: common.set.clone(), seed: common.seed };
    match &common.config {
        Some(path) => PipelineConfig::load(path, &overrides),
        None => PipelineConfig::resolve(None, &overrides),
    }
}

pub fn format_report(report: &PipelineReport, store: &Path) -> String {
    let mut out = String::new();
    for s in &report.stages {
        out.push_str(&format!("{:<9} {}{}\n", s.stage.name(), s.summary, if s.cached { " (cached)" } else { "" }));
    }
    out.push_str(&format!(
        "run {} saved to {} ({} recomputed, {} cached)\n",
        report.manifest.run_id,
        store.join("runs").join(&report.manifest.run_id).display(),
        report.recomputed(),
        report.stages.len() - report.recomputed()
    ));
    out
}

/// Parses arguments, runs the command and returns the process exit code:
/// 0 on success, 1 on usage or configuration errors, 2 on runtime failures.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if let Some(jobs) = cli.common.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return 1;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    let cfg = match load_config(&cli.common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match cli.command.target() {
        Some(target) => match pipeline::run(&cfg, target) {
            Ok(report) => {
                print!("{}", format_report(&report, &cfg.store));
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        None => {
            let Command::Serve(args) = cli.command else { unreachable!() };
            let store = args.store.clone().unwrap_or(cfg.store);
            match serve(&args, store) {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("error: {e}");
                    2
                }
            }
        }
    }
}

fn serve(args: &ServeArgs, store: PathBuf) -> std::io::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.bind).await?;
        eprintln!("serving {} on http://{}/api/v1", store.display(), listener.local_addr()?);
        let app = router(Api::new(RunStore::new(store)), args.ui_dir.as_deref());
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })
}

async fn api_handler(State(api): State<Arc<Api>>, method: Method, uri: Uri) -> Response {
    let path = uri.path().to_string();
    let query = uri.query().map(str::to_string);
    let result = tokio::task::spawn_blocking(move || api.handle(method.as_str(), &path, query.as_deref())).await;
    match result {
        Ok(r) => to_response(r),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

fn to_response(r: ApiResponse) -> Response {
    let status = StatusCode::from_u16(r.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(header::CONTENT_TYPE, ApiResponse::CONTENT_TYPE)], r.body).into_response()
}

/// HTTP routes: the JSON API under /api/v1 and, optionally, static files
/// under /.
pub fn router(api: Api, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/v1", any(api_handler))
        .route("/api/v1/{*rest}", any(api_handler))
        .with_state(Arc::new(api));
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn global_flags_parse_after_subcommand() {
        let cli = Cli::try_parse_from(["x", "all", "--set", "seed=3", "--set", "a.b=1", "--preset", "russophobia", "--jobs", "2"]).unwrap();
        assert!(matches!(cli.command, Command::All));
        assert_eq!(cli.common.set, vec!["seed=3", "a.b=1"]);
        assert_eq!(cli.common.jobs, Some(2));
    }

    #[test]
    fn preset_and_flags_resolve() {
        let common = Common { preset: Some("russophobia".into()), seed: Some(9), ..Default::default() };
        let cfg = load_config(&common).unwrap();
        assert_eq!((cfg.windows.length_days, cfg.windows.shift_days, cfg.windows.lag_days), (20, 2, 5));
        assert_eq!(cfg.discovery.min_correlation, 0.4);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_with_args(["x", "bogus"]), 1);
        assert_eq!(main_with_args(["x", "all", "--preset", "nowhere"]), 1);
        assert_eq!(main_with_args(["x", "all", "--jobs", "0"]), 1);
        assert_eq!(main_with_args(["x", "--help"]), 0);
    }
}
