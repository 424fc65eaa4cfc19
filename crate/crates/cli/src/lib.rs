//! The `xtom` operator commands.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;

use xtom_core::aog::AogGrammar;
use xtom_core::engine::ablation::{format_ablation_table, run_ablation, AblationConfig};
use xtom_core::engine::report::{
    estimate_from_transcripts, format_act_histogram, format_discourse_table, format_satisfaction, load_transcripts,
    summarize,
};
use xtom_core::engine::simulate::{game_specs, play_game};
use xtom_core::engine::training::{run_training, update_rounds, TrainingConfig};
use xtom_core::engine::{Selection, World, SCENES_FILE, TABLES_FILE, TASKS_FILE};
use xtom_core::evaluator::format_trust_table;
use xtom_core::performer::{generate_scenes, parse_scenes, write_scenes, SceneGenConfig};
use xtom_core::policy::checkpoint::{load_checkpoint, save_checkpoint};
use xtom_core::policy::{ActionScope, Explainer, PolicyConfig};
use xtom_core::simuser::{parse_tasks, UserProfile};
use xtom_core::{Error, ErrorCode, Result};

pub const CHECKPOINT_FILE: &str = "policy.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const DATA_ENV: &str = "XTOM_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "xtom", version, about = "Train, simulate, evaluate and serve the X-ToM explainer")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default, Clone)]
pub struct Common {
    /// Directory holding lsp_body.aog, scenes.txt and tasks.txt. Falls back
    /// to $XTOM_DATA_DIR, then to the bundled data.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub grammar: Option<PathBuf>,
    #[arg(long, global = true)]
    pub scenes: Option<PathBuf>,
    #[arg(long, global = true)]
    pub tasks: Option<PathBuf>,
    /// Simulated user profile (key = value lines).
    #[arg(long, global = true)]
    pub profile: Option<PathBuf>,
    /// TOML file with defaults for any flag; explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
}

fn parse_scope(s: &str) -> std::result::Result<ActionScope, String> {
    match s {
        "critical" => Ok(ActionScope::Critical),
        "catalog" => Ok(ActionScope::Catalog),
        _ => Err(format!("unknown scope `{s}`")),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an explainer on simulated games.
    Train(TrainArgs),
    /// Play seeded games with a trained explainer and write transcripts.
    Simulate(SimulateArgs),
    /// Compare a full and an ablated explainer on held-out games.
    Ablate(AblateArgs),
    /// Summarise a directory of transcripts.
    Report(ReportArgs),
    /// Serve the game API.
    Serve(ServeArgs),
    /// Write randomly laid out scenes.
    GenScenes(GenScenesArgs),
    /// Estimate belief likelihood tables from transcripts.
    EstimateLikelihoods(EstimateArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub episodes: Option<u64>,
    #[arg(long)]
    pub round: Option<u64>,
    #[arg(long)]
    pub updates_per_round: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Zero the belief features of the state.
    #[arg(long)]
    pub ablated: bool,
    #[arg(long = "task")]
    pub tasks: Vec<String>,
    /// Nodes the explainer may attend to: `critical` or `catalog`.
    #[arg(long, value_parser = parse_scope)]
    pub scope: Option<ActionScope>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub games: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long = "task")]
    pub tasks: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub full: PathBuf,
    #[arg(long)]
    pub ablated: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub games: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "task")]
    pub tasks: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub transcripts: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
    /// Directory with the web client's static assets.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
    /// Require this bearer token on every request.
    #[arg(long)]
    pub token: Option<String>,
    /// Directory for session transcripts.
    #[arg(long)]
    pub transcripts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenScenesArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub occlusion: Option<f64>,
    /// Labels are drawn from this task.
    #[arg(long)]
    pub task: Option<String>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub transcripts: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

/// Values a `--config` file may set.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data_dir: Option<PathBuf>,
    pub profile: Option<PathBuf>,
    pub episodes: Option<u64>,
    pub round: Option<u64>,
    pub updates_per_round: Option<usize>,
    pub hidden: Option<usize>,
    pub seed: Option<u64>,
    pub games: Option<u64>,
    pub workers: Option<usize>,
    pub tasks: Option<Vec<String>>,
    pub bind: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub count: Option<usize>,
    pub occlusion: Option<f64>,
    pub scope: Option<ActionScope>,
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::new(ErrorCode::ConfigError, msg)
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

pub fn data_dir(common: &Common, file: &FileConfig) -> Option<PathBuf> {
    common
        .data_dir
        .clone()
        .or_else(|| file.data_dir.clone())
        .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
}

/// Builds the world from flags, config, environment and bundled data, in
/// that order of precedence.
pub fn load_world(common: &Common, file: &FileConfig) -> Result<World> {
    let data_dir = data_dir(common, file);
    let mut world = match &data_dir {
        Some(dir) if common.grammar.is_none() => World::load(dir)?,
        _ => World::fixture(),
    };
    let pick = |flag: &Option<PathBuf>, name: &str| -> Option<PathBuf> {
        flag.clone().or_else(|| data_dir.as_ref().map(|d| d.join(name)))
    };
    if let Some(g) = &common.grammar {
        let grammar = AogGrammar::parse(&read_text(g)?)?;
        let scenes = match pick(&common.scenes, SCENES_FILE) {
            Some(p) => parse_scenes(&read_text(&p)?, &grammar)?,
            None => return Err(config_error("--grammar needs --scenes or --data-dir")),
        };
        let tasks = match pick(&common.tasks, TASKS_FILE) {
            Some(p) => parse_tasks(&read_text(&p)?, &grammar)?,
            None => return Err(config_error("--grammar needs --tasks or --data-dir")),
        };
        world = World::new(grammar, scenes, tasks);
        if let Some(dir) = &data_dir {
            let tables = dir.join(TABLES_FILE);
            if tables.exists() {
                world.tables = xtom_core::belief::LikelihoodTables::from_json(&read_text(&tables)?, &world.grammar)?;
            }
        }
    } else {
        if let Some(p) = &common.scenes {
            world.scenes = parse_scenes(&read_text(p)?, &world.grammar)?;
        }
        if let Some(p) = &common.tasks {
            let tasks = parse_tasks(&read_text(p)?, &world.grammar)?;
            world = World {
                tables: world.tables.clone(),
                ..World::new(world.grammar.clone(), world.scenes.clone(), tasks)
            };
        }
    }
    Ok(world)
}

pub fn load_profile(common: &Common, file: &FileConfig) -> Result<UserProfile> {
    match common.profile.as_ref().or(file.profile.as_ref()) {
        Some(p) => UserProfile::parse(&read_text(p)?),
        None => Ok(UserProfile::default()),
    }
}

/// Refuses to write into an existing non-empty output unless forced.
fn claim_output(path: &Path, force: bool, is_dir: bool) -> Result<()> {
    let occupied = if is_dir {
        path.is_dir() && fs::read_dir(path)?.next().is_some()
    } else {
        path.exists()
    };
    if occupied && !force {
        return Err(Error::new(
            ErrorCode::Io,
            format!("{} exists; pass --force to overwrite", path.display()),
        ));
    }
    if is_dir {
        fs::create_dir_all(path)?;
    } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn tasks_or(flags: &[String], file: &FileConfig) -> Vec<String> {
    if !flags.is_empty() {
        flags.to_vec()
    } else {
        file.tasks.clone().unwrap_or_else(|| vec!["action".to_owned()])
    }
}

pub fn cmd_train(common: &Common, args: &TrainArgs) -> Result<()> {
    let file = load_file_config(common.config.as_deref())?;
    let world = load_world(common, &file)?;
    let defaults = TrainingConfig::default();
    let config = TrainingConfig {
        episodes: args.episodes.or(file.episodes).unwrap_or(defaults.episodes),
        round: args.round.or(file.round).unwrap_or(defaults.round),
        updates_per_round: args
            .updates_per_round
            .or(file.updates_per_round)
            .unwrap_or(defaults.updates_per_round),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        ablated: args.ablated,
        policy: PolicyConfig {
            hidden: args.hidden.or(file.hidden).unwrap_or(defaults.policy.hidden),
            scope: args.scope.or(file.scope).unwrap_or(defaults.policy.scope),
            ..defaults.policy
        },
        profile: load_profile(common, &file)?,
        tasks: tasks_or(&args.tasks, &file),
    };
    config.validate()?;
    claim_output(&args.output, common.force, true)?;
    let metrics_path = args.output.join(METRICS_FILE);
    fs::write(&metrics_path, "")?;
    let mut lines = String::new();
    let run = run_training(&world, &config, |m| {
        let line = serde_json::to_string(m).expect("metrics serialise");
        eprintln!("{line}");
        lines.push_str(&line);
        lines.push('\n');
    })?;
    fs::write(&metrics_path, lines)?;
    save_checkpoint(&args.output.join(CHECKPOINT_FILE), &run.explainer, &world.grammar, config.episodes)?;
    println!(
        "trained {} episodes, {} update rounds -> {}",
        config.episodes,
        update_rounds(&run.rounds),
        args.output.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn load_explainer(path: &Path, world: &World) -> Result<Explainer> {
    Ok(load_checkpoint(path, &world.grammar)?.0)
}

pub fn cmd_simulate(common: &Common, args: &SimulateArgs) -> Result<()> {
    let file = load_file_config(common.config.as_deref())?;
    let world = load_world(common, &file)?;
    let explainer = load_explainer(&args.checkpoint, &world)?;
    let profile = load_profile(common, &file)?;
    let games = args.games.or(file.games).unwrap_or(500);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let workers = args.workers.or(file.workers).unwrap_or(0);
    let specs = game_specs(&world, &tasks_or(&args.tasks, &file), games, seed)?;
    claim_output(&args.output, common.force, true)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| config_error(e.to_string()))?;
    let transcripts: Vec<(String, String)> = pool.install(|| {
        specs
            .par_iter()
            .map(|s| {
                play_game(&world, &explainer, &profile, s, Selection::GREEDY)
                    .map(|g| (format!("{}.jsonl", g.id), g.transcript.to_jsonl()))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for (name, body) in &transcripts {
        fs::write(args.output.join(name), body)?;
    }
    println!("wrote {} transcripts to {}", transcripts.len(), args.output.display());
    Ok(())
}

pub fn cmd_ablate(common: &Common, args: &AblateArgs) -> Result<()> {
    let file = load_file_config(common.config.as_deref())?;
    let world = load_world(common, &file)?;
    let full = load_explainer(&args.full, &world)?;
    let ablated = load_explainer(&args.ablated, &world)?;
    let defaults = AblationConfig::default();
    let config = AblationConfig {
        games: args.games.or(file.games).unwrap_or(defaults.games),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        profile: load_profile(common, &file)?,
        tasks: tasks_or(&args.tasks, &file),
        bootstrap: defaults.bootstrap,
    };
    claim_output(&args.output, common.force, true)?;
    let report = run_ablation(&world, &full, &ablated, &config)?;
    let table = format_ablation_table(&report.rows);
    fs::write(args.output.join("ablation.tsv"), &table)?;
    fs::write(
        args.output.join("ablation.json"),
        serde_json::to_string_pretty(&report).expect("report serialises"),
    )?;
    print!("{table}");
    println!("P(full reward > ablated reward) = {:.3}", report.reward_confidence);
    Ok(())
}

pub fn cmd_report(common: &Common, args: &ReportArgs) -> Result<()> {
    let transcripts = load_transcripts(&args.transcripts)?;
    let summary = summarize(&transcripts);
    claim_output(&args.output, common.force, true)?;
    let discourse = format_discourse_table(&summary.discourse);
    fs::write(args.output.join("discourse.tsv"), &discourse)?;
    fs::write(args.output.join("acts.tsv"), format_act_histogram(&summary.acts))?;
    if let Some(t) = &summary.trust {
        fs::write(args.output.join("trust.tsv"), format_trust_table(t))?;
    }
    fs::write(
        args.output.join("satisfaction.tsv"),
        format_satisfaction(summary.satisfaction.as_ref()),
    )?;
    fs::write(
        args.output.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serialises"),
    )?;
    println!("{} games, {} bubbles, {} solved", summary.games, summary.bubbles, summary.successes);
    print!("{discourse}");
    Ok(())
}

pub fn cmd_gen_scenes(common: &Common, args: &GenScenesArgs) -> Result<()> {
    let file = load_file_config(common.config.as_deref())?;
    let world = load_world(common, &file)?;
    let task = world.task(args.task.as_deref().unwrap_or("action"))?;
    let config = SceneGenConfig {
        count: args.count.or(file.count).unwrap_or(50),
        labels: task.labels.clone(),
        occlusion: args.occlusion.or(file.occlusion).unwrap_or(0.0),
        seed: args.seed.or(file.seed).unwrap_or(0),
    };
    let scenes = generate_scenes(&world.grammar, &config)?;
    claim_output(&args.output, common.force, false)?;
    fs::write(&args.output, write_scenes(&scenes, &world.grammar))?;
    println!("wrote {} scenes to {}", scenes.len(), args.output.display());
    Ok(())
}

pub fn cmd_estimate(common: &Common, args: &EstimateArgs) -> Result<()> {
    let file = load_file_config(common.config.as_deref())?;
    let world = load_world(common, &file)?;
    let transcripts = load_transcripts(&args.transcripts)?;
    let tables = estimate_from_transcripts(&world, &transcripts)?;
    claim_output(&args.output, common.force, false)?;
    fs::write(&args.output, tables.to_json(&world.grammar))?;
    println!("{} rows from {} transcripts", tables.row_count(), transcripts.len());
    Ok(())
}

pub fn cmd_serve(common: &Common, args: &ServeArgs) -> Result<()> {
    let file = load_file_config(common.config.as_deref())?;
    let world = load_world(common, &file)?;
    let explainer = match args.checkpoint.as_ref().or(file.checkpoint.as_ref()) {
        Some(p) => load_explainer(p, &world)
            .map_err(|e| Error::new(ErrorCode::CheckpointError, e.message))?,
        None => Explainer::new(
            &world.grammar,
            PolicyConfig::default(),
            false,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        ),
    };
    let bind = args
        .bind
        .clone()
        .or(file.bind.clone())
        .unwrap_or_else(|| "127.0.0.1:8080".to_owned());
    let options = xtom_server::ServerOptions {
        token: args.token.clone(),
        static_dir: args.static_dir.clone(),
        transcript_dir: args.transcripts.clone(),
        image_dir: data_dir(common, &file),
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .map_err(|e| Error::new(ErrorCode::BindError, format!("{bind}: {e}")))?;
        eprintln!("serving on http://{}", listener.local_addr()?);
        xtom_server::serve(listener, world, explainer, options).await
    })
}

pub fn run(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Train(a) => cmd_train(c, a),
        Command::Simulate(a) => cmd_simulate(c, a),
        Command::Ablate(a) => cmd_ablate(c, a),
        Command::Report(a) => cmd_report(c, a),
        Command::Serve(a) => cmd_serve(c, a),
        Command::GenScenes(a) => cmd_gen_scenes(c, a),
        Command::EstimateLikelihoods(a) => cmd_estimate(c, a),
    }
}
