use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fairaudit::pipeline::{run_pipeline, PipelineConfig, PipelineError, SaveOutcome, Store};
use fairaudit::synthgen::{self, GenConfig};

/// Fairness audit and bias mitigation for binary tabular classifiers.
#[derive(Parser)]
#[command(name = "fairaudit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic credit data set as CSV.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Generator parameters as TOML.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the generating causal graph as JSON.
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Run a pipeline config and store the experiment.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "experiments")]
        store: PathBuf,
    },
    /// Print a stored experiment, or list the store without an id.
    Report {
        id: Option<String>,
        #[arg(long, default_value = "experiments")]
        store: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Serve the store over HTTP.
    Serve {
        #[arg(long, default_value = "experiments")]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn generate(
    out: PathBuf,
    config: Option<PathBuf>,
    n: Option<usize>,
    seed: Option<u64>,
    graph: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            toml::from_str::<GenConfig>(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?
        }
        None => GenConfig::default(),
    };
    cfg.n = n.unwrap_or(cfg.n);
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let (table, g) = synthgen::generate(&cfg).map_err(|e| Failure::Runtime(e.to_string()))?;
    table.write_delimited(&out, b',').map_err(|e| Failure::Runtime(e.to_string()))?;
    if let Some(p) = graph {
        std::fs::write(&p, g.to_json()).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
    }
    let p = synthgen::bias_profile(&table).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!(
        "wrote {} rows to {}; label dp {:.4}, disparate impact {:.4} ({})",
        p.n,
        out.display(),
        p.label_dp,
        p.di_ratio,
        if p.passes_four_fifths { "passes 80% rule" } else { "fails 80% rule" }
    );
    Ok(())
}

fn run(config: PathBuf, store: PathBuf) -> Result<(), Failure> {
    let cfg = PipelineConfig::load(&config)?;
    cfg.resolve()?;
    let store = Store::create(store)?;
    let e = run_pipeline(&cfg)?;
    print!("{}", e.render_table());
    match store.save(&e)? {
        SaveOutcome::Created => println!("stored {}", e.id),
        SaveOutcome::Unchanged => println!("{} already stored with identical results", e.id),
    }
    Ok(())
}

fn report(id: Option<String>, store: PathBuf, json: bool) -> Result<(), Failure> {
    let store = Store::open(store)?;
    match id {
        Some(id) => {
            let e = store.load(&id)?;
            if json {
                println!("{}", e.to_json());
            } else {
                print!("{}", e.render_table());
            }
        }
        None => {
            let list = store.list()?;
            if json {
                println!("{}", serde_json::to_string_pretty(&list).expect("summaries serialize"));
            } else {
                for s in list {
                    println!("{}  {:>2} strategies  {} failed  {}", s.id, s.strategies, s.failed, s.name.unwrap_or_default());
                }
            }
        }
    }
    Ok(())
}

fn serve(store: PathBuf, bind: SocketAddr) -> Result<(), Failure> {
    let store = Store::open(store)?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind).await.map_err(|e| Failure::Runtime(format!("{bind}: {e}")))?;
        log::info!("listening on {bind}");
        axum::serve(listener, fairaudit_cli::service::router(store))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Failure::Runtime(e.to_string()))
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Generate { out, config, n, seed, graph } => generate(out, config, n, seed, graph),
        Command::Run { config, store } => run(config, store),
        Command::Report { id, store, json } => report(id, store, json),
        Command::Serve { store, bind } => serve(store, bind),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
