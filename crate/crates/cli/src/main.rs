use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use genrank::dialogue::UserProfile;
use genrank::knowledge::{to_tsv, Annotators, INGEST_OFFENSIVE_THRESHOLD};
use genrank::ranker::{
    annotation_stats, assemble_batch, assemble_inline, evaluate, group_turns, load_annotations, parse_eval_dataset,
    BatchConfig, RandomScorer, Scorer, SourceExample,
};
use genrank::service::{
    ab_selector_compare, parse_transcript, recorded_turns, replay, scripted_remotes, transcript_scores, Clock,
    Engine, EngineConfig, FileStore, MetricsReport, Resources, SessionEvent, SessionStore, SystemClock,
    VirtualClock, CONFIG_ENV,
};
use tokio::io::AsyncBufReadExt;

const DEFAULT_STATE_DIR: &str = "genrank-state";

#[derive(Parser)]
#[command(name = "genrank", version, about = "Generate-and-rank socialbot engine")]
struct Cli {
    /// Engine config file.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Talk to an in-process engine on stdin.
    Chat {
        #[arg(long, default_value = "local-user")]
        user: String,
        #[arg(long)]
        state_dir: Option<PathBuf>,
        /// Print the route, source and candidate table after each reply.
        #[arg(long)]
        debug: bool,
    },
    /// Run the HTTP chat API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        state_dir: Option<PathBuf>,
    },
    /// Ingest feed files into the knowledge store and report what was kept.
    Ingest {
        /// Extra JSON-lines feeds on top of the ones in the config.
        feeds: Vec<PathBuf>,
        /// Ingest day (YYYY-MM-DD); defaults to today.
        #[arg(long)]
        date: Option<NaiveDate>,
        /// Write the resulting triples as TSV.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Hits@1 of a selector on a labeled eval dataset.
    Eval {
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = ScorerArg::Poly)]
        scorer: ScorerArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Replay a transcript through the engine and diff the bot turns.
    Replay {
        transcript: PathBuf,
        /// Script the remotes to the transcript's own lines and score them first.
        #[arg(long)]
        scripted: bool,
        #[arg(long, default_value = "replay-user")]
        user: String,
        /// Session id; per-turn draws are seeded from it.
        #[arg(long)]
        session_id: Option<String>,
        /// Name already on the user's profile.
        #[arg(long)]
        user_name: Option<String>,
        /// Simulated day; defaults to the wall clock.
        #[arg(long)]
        date: Option<NaiveDate>,
        #[arg(long, default_value_t = 18)]
        hour: u32,
        #[arg(long, default_value_t = 300)]
        latency_ms: u64,
    },
    /// Table of annotation counts per split.
    Stats { annotations: PathBuf },
    /// Mix custom and auxiliary annotations into in-batch training batches.
    AssembleBatch {
        custom: PathBuf,
        auxiliary: PathBuf,
        #[arg(long, default_value_t = 20)]
        batch_size: usize,
        #[arg(long, default_value_t = 3)]
        custom_per_batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build examples with dedicated distractors.
    AssembleInline {
        annotations: PathBuf,
        /// Padding responses, one per line.
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, default_value_t = 9)]
        distractors: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Latency and selection metrics over logged sessions.
    Metrics {
        #[arg(long)]
        state_dir: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Disagreement between the poly-encoder and the evaluator selector on logged turns.
    Compare {
        #[arg(long)]
        state_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerArg {
    Poly,
    Evaluator,
    Random,
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig> {
    let Some(path) = path else {
        bail!("no engine config: pass --config or set {CONFIG_ENV}");
    };
    Ok(EngineConfig::load(path)?)
}

fn state_dir(config: &EngineConfig, arg: Option<PathBuf>) -> PathBuf {
    arg.or_else(|| config.paths.state_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_STATE_DIR))
}

fn print_json<T: serde::Serialize>(rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = std::io::stdout().lock();
    for row in rows {
        writeln!(out, "{}", serde_json::to_string(&row)?)?;
    }
    Ok(())
}

fn good_examples(path: &Path) -> Result<Vec<SourceExample>> {
    let records = load_annotations(path).with_context(|| path.display().to_string())?;
    Ok(group_turns(&records).iter().flat_map(|t| t.examples()).collect())
}

fn logged_events(store: &FileStore) -> Result<Vec<Vec<SessionEvent>>> {
    store
        .session_ids()?
        .iter()
        .map(|id| Ok(store.events(id)?))
        .collect()
}

async fn chat(engine: Engine, user: &str, debug: bool) -> Result<()> {
    let id = engine.create_session(user, None).await?;
    let mut lines = tokio::io::BufReader::new(tokio::io::stdin()).lines();
    eprintln!("session {id}; say \"let's chat\" to start and \"stop\" to leave");
    loop {
        eprint!("you> ");
        let Some(line) = lines.next_line().await? else { break };
        if line.trim().is_empty() {
            continue;
        }
        let out = engine.handle_turn(&id, &line).await?;
        println!("bot> {}", out.response);
        if debug {
            eprintln!("     [{:?} via {} in {}ms]", out.route, out.source, out.trace.total_ms);
            for c in &out.trace.candidates {
                let score = c.score.map_or("-".to_owned(), |s| format!("{s:.3}"));
                let mark = if c.survived { " " } else { "x" };
                eprintln!("     {mark} {score:>7} {:<16} {}", c.source, c.text);
            }
        }
        if out.session_ended {
            break;
        }
    }
    let summary = engine.end_session(&id).await?;
    eprintln!(
        "{} turns, mean latency {:.0}ms, max {}ms",
        summary.turns, summary.mean_latency_ms, summary.max_latency_ms
    );
    Ok(())
}

async fn run(cli: Cli) -> Result<ExitCode> {
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Chat { user, state_dir: dir, debug } => {
            let config = load_config(config_path)?;
            let store = Arc::new(FileStore::new(state_dir(&config, dir))?);
            let engine = Engine::from_config(config, Arc::new(SystemClock), store)?;
            chat(engine, &user, debug).await?;
        }
        Command::Serve { addr, state_dir: dir } => {
            let config = load_config(config_path)?;
            let store = Arc::new(FileStore::new(state_dir(&config, dir))?);
            let engine = Engine::from_config(config, Arc::new(SystemClock), store)?;
            eprintln!("listening on http://{addr}");
            genrank::service::http::serve(Arc::new(engine), addr).await?;
        }
        Command::Ingest { feeds, date, export } => {
            let config = load_config(config_path)?;
            let today = date.unwrap_or_else(|| chrono::Utc::now().date_naive());
            let (res, mut reports) = Resources::load(&config, today)?;
            let annotators = Annotators {
                gazetteer: &res.gazetteer,
                topics: &res.topics,
                offensiveness: res.lexicon.as_ref(),
                threshold: INGEST_OFFENSIVE_THRESHOLD,
            };
            for f in &feeds {
                reports.push(res.knowledge.ingest_file(f, annotators, today)?);
            }
            let names = config.paths.feeds.iter().chain(&feeds);
            for (name, r) in names.zip(&reports) {
                println!(
                    "{}: stored {}, rejected {}, errors {}",
                    name.display(),
                    r.stored,
                    r.rejected.len(),
                    r.errors.len()
                );
                for (line, why) in r.rejected.iter().chain(&r.errors) {
                    println!("  line {line}: {why}");
                }
            }
            println!("{} items as of {today}", res.knowledge.len());
            if let Some(path) = export {
                std::fs::write(&path, to_tsv(&res.knowledge.export()))?;
            }
        }
        Command::Eval { dataset, scorer, seed } => {
            let turns = parse_eval_dataset(&std::fs::read_to_string(&dataset)?)?;
            let random;
            let res;
            let s: &dyn Scorer = match scorer {
                ScorerArg::Random => {
                    random = RandomScorer::new(seed);
                    &random
                }
                ScorerArg::Poly | ScorerArg::Evaluator => {
                    let config = load_config(config_path)?;
                    res = Resources::load(&config, chrono::Utc::now().date_naive())?.0;
                    if matches!(scorer, ScorerArg::Poly) {
                        res.poly.as_ref()
                    } else {
                        res.external.as_ref()
                    }
                }
            };
            let r = evaluate(&turns, s)?;
            println!("turns            {}", r.n_turns);
            println!("single dropped   {}", r.dropped_single);
            println!("hits@1           {:.4}", r.hits_at_1);
            println!("random, per turn {:.4}", r.expected_random);
            println!("random, pooled   {:.4}", r.pooled_good_fraction);
        }
        Command::Replay {
            transcript,
            scripted,
            user,
            session_id,
            user_name,
            date,
            hour,
            latency_ms,
        } => {
            let config = load_config(config_path)?;
            let lines = parse_transcript(&std::fs::read_to_string(&transcript)?)?;
            let clock: Arc<dyn Clock> = match date {
                Some(d) => Arc::new(VirtualClock::at(d, hour)),
                None => Arc::new(SystemClock),
            };
            let today = genrank::knowledge::date_of(clock.now_ms());
            let (mut res, _) = Resources::load(&config, today)?;
            if scripted {
                let remotes: Vec<_> = config.generators.iter().map(|g| (g.name.clone(), g.policy())).collect();
                res.replace_remotes(scripted_remotes(&lines, &remotes, latency_ms, "Tell me more about that.")?)?;
                res.poly = Arc::new(transcript_scores(&lines));
            }
            let store = Arc::new(genrank::service::MemoryStore::new());
            if let Some(name) = user_name {
                let mut p = UserProfile::new(&user);
                p.name = Some(name);
                store.save_profile(&p)?;
            }
            let engine = Engine::new(config, res, clock, store);
            let id = engine.create_session(&user, session_id.as_deref()).await?;
            let report = replay(&engine, &id, &lines).await?;
            for row in &report.rows {
                let mark = if row.matches() { "ok  " } else { "DIFF" };
                println!("{mark} USER: {}", row.user);
                println!("     {}: {}", row.got.source, row.got.text);
                if let (false, Some(want)) = (row.matches(), &row.expected) {
                    println!("     want {}: {}", want.source, want.text);
                }
            }
            println!("{} of {} bot turns differ", report.mismatches(), report.rows.len());
            if report.mismatches() > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Stats { annotations } => {
            let records = load_annotations(&annotations)?;
            print!("{}", annotation_stats(&records).table());
        }
        Command::AssembleBatch {
            custom,
            auxiliary,
            batch_size,
            custom_per_batch,
            seed,
        } => {
            let config = BatchConfig {
                batch_size,
                custom_per_batch,
            };
            let batches = assemble_batch(&good_examples(&custom)?, &good_examples(&auxiliary)?, config, seed)?;
            eprintln!("{} batches", batches.len());
            print_json(&batches)?;
        }
        Command::AssembleInline {
            annotations,
            pool,
            distractors,
            seed,
        } => {
            let turns = group_turns(&load_annotations(&annotations)?);
            let pool: Vec<String> = std::fs::read_to_string(&pool)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_owned)
                .collect();
            print_json(&assemble_inline(&turns, &pool, distractors, seed)?)?;
        }
        Command::Metrics { state_dir: dir, json } => {
            let config = load_config(config_path)?;
            let store = FileStore::new(state_dir(&config, dir))?;
            let traces: Vec<_> = logged_events(&store)?
                .into_iter()
                .flatten()
                .filter_map(|e| match e {
                    SessionEvent::Turn { trace, .. } => Some(*trace),
                    _ => None,
                })
                .collect();
            let report = MetricsReport::from_traces(&traces);
            if json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.to_table());
            }
        }
        Command::Compare { state_dir: dir } => {
            let config = load_config(config_path)?;
            let store = FileStore::new(state_dir(&config, dir))?;
            let turns: Vec<_> = logged_events(&store)?.iter().flat_map(|e| recorded_turns(e)).collect();
            let (res, _) = Resources::load(&config, chrono::Utc::now().date_naive())?;
            let r = ab_selector_compare(&turns, res.poly.as_ref(), res.external.as_ref(), &res.priority)?;
            for p in r.picks.iter().filter(|p| p.a != p.b) {
                println!("turn {}\n  poly:      {}\n  evaluator: {}", p.turn, p.a, p.b);
            }
            println!(
                "{} turns compared, {} skipped, {} disagreements ({:.1}%)",
                r.compared,
                r.skipped,
                r.disagreements,
                r.rate * 100.0
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
