//! The `rleif` command line: eight subcommands sequencing the pipeline,
//! each driven by a single JSON run configuration plus a few flag
//! overrides. Every run writes a manifest recording the config hash, seed,
//! versions, and input/output paths.

use std::collections::HashMap;
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{self, CorpusError, Instruction};
use crate::evolver::{
    build_irm_ranking_data, load_rankings, ranking_feature_pairs, save_rankings, AcceptancePolicy,
    EvolOperator, EvolVariant, EvolveError, GeneratorBackend, LengthRanker, MockEvolBackend,
    RemoteBackend,
};
use crate::rewards::{
    self, load_net, save_net, write_loss_log, RewardError, RewardNet, CONTAINER_FORMAT_VERSION,
    FEATURIZER_VERSION,
};
use crate::rl::{
    self, build_prm_training_set, load_policy, save_policy, write_history, CorruptionMode, Policy,
    RlError, STATE_DIM, VALUE_HIDDEN,
};
use crate::seeding::derive_seed;

use super::backends::{MicroSolverBackend, PolicyBackend, DEFAULT_GENERAL_POOL};
use super::config::RunConfig;
use super::{
    build_sft_dataset, emit_report, evaluate_pass1, load_report, micro_problems_with_gold,
    render_text_table, save_sft_dataset, HarnessError, ReportFormat,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Mock,
    Remote,
}

#[derive(Parser)]
#[command(
    name = "rleif",
    version,
    about = "Evolution-based math instruction tuning: evolve instructions, train reward models, run PPO on the microworld, and evaluate pass@1"
)]
struct Cli {
    /// Run configuration file (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts and the manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Generation backend.
    #[arg(long, global = true, value_enum, default_value_t = BackendKind::Mock)]
    backend: BackendKind,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Evolve the instruction corpus for the configured number of rounds.
    Evolve,
    /// Build IRM ranking data from two generator backends and a ranker.
    BuildIrmData,
    /// Train the instruction reward model from ranking data.
    TrainIrm,
    /// Train the process reward model from the corruption oracle.
    TrainPrm,
    /// Curate the SFT dataset: keep first-correct generations, merge in
    /// general conversations.
    Sft,
    /// PPO training on the microworld with the product reward.
    Ppo,
    /// Greedy pass@1 evaluation with subtopic/level breakdowns.
    Eval,
    /// Render a previously written machine-readable report.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Evolve => "evolve",
            Command::BuildIrmData => "build-irm-data",
            Command::TrainIrm => "train-irm",
            Command::TrainPrm => "train-prm",
            Command::Sft => "sft",
            Command::Ppo => "ppo",
            Command::Eval => "eval",
            Command::Report => "report",
        }
    }
}

/// Entry point used by the binary; argv[0] is the program name. Returns
/// the process exit code: 0 success, 1 validation failure, 2 runtime
/// failure.
pub fn cli_main(argv: &[String]) -> u8 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}

/// Validation failures exit 1; runtime failures exit 2.
fn exit_code_for(err: &HarnessError) -> u8 {
    match err {
        HarnessError::Config(_)
        | HarnessError::MissingInput(_)
        | HarnessError::EmptyInstruction
        | HarnessError::EmptyReport
        | HarnessError::BadGold { .. }
        | HarnessError::BadMergeRatio(_)
        | HarnessError::BadAttempts
        | HarnessError::MalformedReport { .. } => 1,
        HarnessError::Io { .. } => 2,
        HarnessError::Corpus(e) => match e {
            CorpusError::Io { .. } => 2,
            _ => 1,
        },
        HarnessError::Grade(_) => 1,
        HarnessError::Evolve(e) => match e {
            EvolveError::Io { .. } | EvolveError::Backend { .. } => 2,
            _ => 1,
        },
        HarnessError::Reward(e) => match e {
            RewardError::Io { .. }
            | RewardError::Checkpoint { .. }
            | RewardError::NonFiniteLoss { .. } => 2,
            _ => 1,
        },
        HarnessError::Rl(e) => match e {
            RlError::Io { .. } | RlError::Checkpoint { .. } | RlError::NonFiniteLoss { .. } => 2,
            RlError::Grade(_) | RlError::Reward(_) => 2,
            _ => 1,
        },
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    subcommand: String,
    config_hash: String,
    seed: u64,
    versions: Versions,
    inputs: Vec<String>,
    outputs: Vec<String>,
    timestamp_unix: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Versions {
    crate_version: String,
    featurizer: u32,
    container_format: u32,
}

struct RunContext {
    config: RunConfig,
    config_hash: String,
    seed: u64,
    out: PathBuf,
    backend: BackendKind,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

impl RunContext {
    fn from_cli(cli: &Cli) -> Result<Self, HarnessError> {
        let (config, config_hash) = match &cli.config {
            Some(path) => {
                let bytes = fs::read(path).map_err(|e| HarnessError::Io {
                    path: path.clone(),
                    source: e,
                })?;
                let config = RunConfig::load(path)?;
                (config, hex_digest(&bytes))
            }
            None => {
                let config = RunConfig::default();
                let canonical = serde_json::to_vec(&config).expect("config serializes");
                (config, hex_digest(&canonical))
            }
        };
        let seed = cli.seed.unwrap_or(config.seed);
        fs::create_dir_all(&cli.out).map_err(|e| HarnessError::Io {
            path: cli.out.clone(),
            source: e,
        })?;
        let mut inputs = Vec::new();
        if let Some(path) = &cli.config {
            inputs.push(path.display().to_string());
        }
        Ok(Self {
            config,
            config_hash,
            seed,
            out: cli.out.clone(),
            backend: cli.backend,
            inputs,
            outputs: Vec::new(),
        })
    }

    fn out_path(&mut self, name: &str) -> PathBuf {
        let path = self.out.join(name);
        self.outputs.push(path.display().to_string());
        path
    }

    fn input_path(&mut self, path: &Path) -> PathBuf {
        self.inputs.push(path.display().to_string());
        path.to_path_buf()
    }

    fn write_manifest(&self, subcommand: &str) -> Result<(), HarnessError> {
        let manifest = Manifest {
            subcommand: subcommand.to_string(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            versions: Versions {
                crate_version: env!("CARGO_PKG_VERSION").to_string(),
                featurizer: FEATURIZER_VERSION,
                container_format: CONTAINER_FORMAT_VERSION,
            },
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let path = self.out.join(format!("manifest-{subcommand}.json"));
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| HarnessError::Io { path, source: e })?;
        Ok(())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    let mut ctx = RunContext::from_cli(cli)?;
    match cli.command {
        Command::Evolve => run_evolve(&mut ctx)?,
        Command::BuildIrmData => run_build_irm_data(&mut ctx)?,
        Command::TrainIrm => run_train_irm(&mut ctx)?,
        Command::TrainPrm => run_train_prm(&mut ctx)?,
        Command::Sft => run_sft(&mut ctx)?,
        Command::Ppo => run_ppo(&mut ctx)?,
        Command::Eval => run_eval(&mut ctx)?,
        Command::Report => run_report(&mut ctx)?,
    }
    ctx.write_manifest(cli.command.name())
}

fn evolution_backend(ctx: &RunContext) -> Result<Box<dyn GeneratorBackend>, HarnessError> {
    match ctx.backend {
        BackendKind::Mock => Ok(Box::new(MockEvolBackend::new())),
        BackendKind::Remote => {
            let url = ctx
                .config
                .evolve
                .remote_url
                .clone()
                .ok_or_else(|| HarnessError::MissingInput("evolve.remote_url".into()))?;
            let backend = RemoteBackend::new(
                url,
                std::time::Duration::from_secs(ctx.config.evolve.timeout_secs),
                ctx.config.evolve.retries,
            )
            .map_err(|e| HarnessError::Config(e.to_string()))?;
            Ok(Box::new(backend))
        }
    }
}

fn configured_operators(ctx: &RunContext) -> Result<Vec<EvolOperator>, HarnessError> {
    match &ctx.config.evolve.operators {
        None => Ok(EvolOperator::standard_set()),
        Some(tags) => tags
            .iter()
            .map(|tag| {
                EvolVariant::from_tag(tag)
                    .map(EvolOperator::standard)
                    .ok_or_else(|| HarnessError::Config(format!("unknown operator tag {tag:?}")))
            })
            .collect(),
    }
}

fn load_seed_corpus(ctx: &mut RunContext) -> Result<Vec<Instruction>, HarnessError> {
    let dataset = ctx
        .config
        .corpus
        .dataset
        .clone()
        .ok_or_else(|| HarnessError::MissingInput("corpus.dataset".into()))?;
    let path = ctx.input_path(&dataset);
    Ok(corpus::load_corpus(path)?)
}

fn run_evolve(ctx: &mut RunContext) -> Result<(), HarnessError> {
    let seeds = load_seed_corpus(ctx)?;
    let operators = configured_operators(ctx)?;
    let backend = evolution_backend(ctx)?;
    let backends: Vec<&dyn GeneratorBackend> = vec![backend.as_ref()];

    let irm_net = match (
        &ctx.config.evolve.irm_threshold,
        &ctx.config.evolve.irm_checkpoint,
    ) {
        (Some(_), Some(path)) => {
            let path = ctx.input_path(path.clone().as_path());
            Some(load_net(path, "irm")?)
        }
        (Some(_), None) => {
            return Err(HarnessError::MissingInput(
                "evolve.irm_checkpoint (required by evolve.irm_threshold)".into(),
            ))
        }
        _ => None,
    };
    let policy = match (&ctx.config.evolve.irm_threshold, &irm_net) {
        (Some(min_score), Some(net)) => AcceptancePolicy::IrmThreshold {
            net,
            min_score: *min_score,
        },
        _ => AcceptancePolicy::AcceptAll,
    };

    let mut known: std::collections::HashSet<String> = seeds
        .iter()
        .map(|s| corpus::normalize_text(&s.text))
        .collect();
    let mut all = seeds.clone();
    let mut current = seeds.clone();
    let mut round_counts = Vec::new();
    let mut per_round = Vec::new();
    for round in 1..=ctx.config.evolve.rounds {
        let outcome = crate::evolver::evolve_round(
            &current,
            &operators,
            &backends,
            round,
            derive_seed(ctx.seed, "evolve-round", round as u64),
            &policy,
            &mut known,
            ctx.config.evolve.max_in_flight,
        )?;
        round_counts.push(outcome.accepted.len() as u64);
        per_round.push(outcome.counts.clone());
        all.extend(outcome.accepted.iter().cloned());
        if outcome.accepted.is_empty() {
            break;
        }
        current = outcome.accepted;
    }

    let evolved_path = ctx.out_path("evolved.jsonl");
    corpus::save_corpus(&all, &evolved_path)?;
    let stats = corpus::CorpusStats {
        seed_count: seeds.len() as u64,
        round_counts: round_counts.clone(),
        total: seeds.len() as u64 + round_counts.iter().sum::<u64>(),
    };
    let stats_path = ctx.out_path("evolve_stats.json");
    let payload = serde_json::json!({ "stats": stats, "per_round": per_round });
    fs::write(
        &stats_path,
        serde_json::to_string_pretty(&payload).expect("stats serialize"),
    )
    .map_err(|e| HarnessError::Io {
        path: stats_path.clone(),
        source: e,
    })?;
    println!(
        "evolved corpus: {} seeds -> {} total over {} rounds",
        stats.seed_count,
        stats.total,
        round_counts.len()
    );
    Ok(())
}

fn run_build_irm_data(ctx: &mut RunContext) -> Result<(), HarnessError> {
    let seeds = load_seed_corpus(ctx)?;
    let k = ctx.config.evolve.k_per_backend;
    let mock_b = MockEvolBackend::named("mock-b", 2);
    let records = match ctx.backend {
        BackendKind::Mock => {
            let mock_a = MockEvolBackend::named("mock-a", 1);
            build_irm_ranking_data(
                &seeds,
                &mock_a,
                &mock_b,
                &LengthRanker,
                k,
                derive_seed(ctx.seed, "ranking-data", 0),
            )?
        }
        BackendKind::Remote => {
            let remote = evolution_backend(ctx)?;
            build_irm_ranking_data(
                &seeds,
                remote.as_ref(),
                &mock_b,
                &LengthRanker,
                k,
                derive_seed(ctx.seed, "ranking-data", 0),
            )?
        }
    };
    let path = ctx.out_path("rankings.jsonl");
    save_rankings(&records, &path)?;
    println!("wrote {} ranking records", records.len());
    Ok(())
}

fn rankings_path(ctx: &mut RunContext) -> PathBuf {
    match ctx.config.evolve.rankings.clone() {
        Some(path) => ctx.input_path(&path),
        None => {
            let path = ctx.out.join("rankings.jsonl");
            ctx.inputs.push(path.display().to_string());
            path
        }
    }
}

fn run_train_irm(ctx: &mut RunContext) -> Result<(), HarnessError> {
    let path = rankings_path(ctx);
    let records = load_rankings(path)?;
    let pairs = ranking_feature_pairs(&records)?;
    let outcome = rewards::train_irm(
        &pairs,
        &ctx.config
            .rewards
            .train_config(derive_seed(ctx.seed, "train-irm", 0)),
    )?;
    let net_path = ctx.out_path("irm.json");
    save_net(&outcome.net, "irm", net_path)?;
    let loss_path = ctx.out_path("irm_loss.csv");
    write_loss_log(&outcome.epoch_losses, loss_path)?;
    println!(
        "trained irm on {} pairs; final loss {:.6}",
        pairs.len(),
        outcome.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn run_train_prm(ctx: &mut RunContext) -> Result<(), HarnessError> {
    let problems = rl::generate_problems(
        ctx.config.rewards.prm_problems,
        derive_seed(ctx.seed, "prm-problems", 0),
    );
    let examples = build_prm_training_set(
        &problems,
        derive_seed(ctx.seed, "prm-corrupt", 0),
        CorruptionMode::Extended,
    )?;
    let outcome = rewards::train_prm(
        &examples,
        &ctx.config
            .rewards
            .train_config(derive_seed(ctx.seed, "train-prm", 0)),
    )?;
    let net_path = ctx.out_path("prm.json");
    save_net(&outcome.net, "prm", net_path)?;
    let loss_path = ctx.out_path("prm_loss.csv");
    write_loss_log(&outcome.epoch_losses, loss_path)?;
    println!(
        "trained prm on {} step examples; final loss {:.6}",
        examples.len(),
        outcome.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Problems with golds: the configured dataset joined to its gold
/// solutions, or generated microworld problems.
fn problems_with_gold(ctx: &mut RunContext) -> Result<Vec<(Instruction, String)>, HarnessError> {
    match (
        ctx.config.corpus.dataset.clone(),
        ctx.config.corpus.gold_solutions.clone(),
    ) {
        (Some(dataset), Some(solutions)) => {
            let dataset = ctx.input_path(&dataset);
            let solutions_path = ctx.input_path(&solutions);
            let instructions = corpus::load_corpus(dataset)?;
            let solutions = corpus::load_solutions(solutions_path)?;
            let golds: HashMap<String, String> = solutions
                .into_iter()
                .filter_map(|s| s.final_answer.clone().map(|g| (s.instruction_id, g)))
                .collect();
            instructions
                .into_iter()
                .map(|instruction| {
                    let gold = golds.get(&instruction.id).cloned().ok_or_else(|| {
                        HarnessError::MissingInput(format!(
                            "gold answer for instruction {:?}",
                            instruction.id
                        ))
                    })?;
                    Ok((instruction, gold))
                })
                .collect()
        }
        (Some(_), None) => Err(HarnessError::MissingInput(
            "corpus.gold_solutions (required with corpus.dataset)".into(),
        )),
        _ => {
            let problems = rl::generate_problems(
                ctx.config.eval.problem_count,
                derive_seed(ctx.seed, "harness-problems", 0),
            );
            micro_problems_with_gold(&problems)
        }
    }
}

fn load_general_pool(ctx: &mut RunContext) -> Result<Vec<(String, String)>, HarnessError> {
    match ctx.config.corpus.general_pool.clone() {
        None => Ok(DEFAULT_GENERAL_POOL
            .iter()
            .map(|(p, r)| (p.to_string(), r.to_string()))
            .collect()),
        Some(path) => {
            let path = ctx.input_path(&path);
            let file = fs::File::open(&path).map_err(|e| HarnessError::Io {
                path: path.clone(),
                source: e,
            })?;
            let reader = std::io::BufReader::new(file);
            #[derive(Deserialize)]
            #[serde(deny_unknown_fields)]
            struct PoolLine {
                prompt: String,
                response: String,
            }
            let mut pool = Vec::new();
            for (idx, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| HarnessError::Io {
                    path: path.clone(),
                    source: e,
                })?;
                let parsed: PoolLine =
                    serde_json::from_str(&line).map_err(|e| HarnessError::MalformedReport {
                        line: idx + 1,
                        message: e.to_string(),
                    })?;
                pool.push((parsed.prompt, parsed.response));
            }
            Ok(pool)
        }
    }
}

fn generation_backend(ctx: &mut RunContext) -> Result<Box<dyn GeneratorBackend>, HarnessError> {
    if ctx.backend == BackendKind::Remote {
        return evolution_backend(ctx);
    }
    match ctx.config.eval.policy_checkpoint.clone() {
        Some(path) => {
            let path = ctx.input_path(&path);
            Ok(Box::new(PolicyBackend::new(load_policy(path)?)))
        }
        None => Ok(Box::new(MicroSolverBackend::new(
            ctx.config.eval.error_rate,
        ))),
    }
}

fn run_sft(ctx: &mut RunContext) -> Result<(), HarnessError> {
    let problems = problems_with_gold(ctx)?;
    let pool = load_general_pool(ctx)?;
    let backend = generation_backend(ctx)?;
    let dataset = build_sft_dataset(
        &problems,
        backend.as_ref(),
        ctx.config.corpus.sft_attempts,
        &pool,
        ctx.config.corpus.merge_ratio,
        derive_seed(ctx.seed, "sft", 0),
    )?;
    let bad = super::audit_sft(&dataset)?;
    if !bad.is_empty() {
        log::warn!("sft audit found {} stale examples", bad.len());
    }
    let path = ctx.out_path("sft.jsonl");
    save_sft_dataset(&dataset, &path)?;
    println!(
        "sft dataset: {} math + {} general examples ({} skipped)",
        dataset.math_examples.len(),
        dataset.general_examples.len(),
        dataset.skipped.len()
    );
    Ok(())
}

fn run_ppo(ctx: &mut RunContext) -> Result<(), HarnessError> {
    let problems = rl::generate_problems(
        ctx.config.ppo.problem_count,
        derive_seed(ctx.seed, "ppo-problems", 0),
    );
    let irm_net = match ctx.config.ppo.irm_checkpoint.clone() {
        Some(path) => {
            let path = ctx.input_path(&path);
            load_net(path, "irm")?
        }
        None => default_irm_net(&problems, ctx.seed)?,
    };
    let prm_net = match ctx.config.ppo.prm_checkpoint.clone() {
        Some(path) => {
            let path = ctx.input_path(&path);
            load_net(path, "prm")?
        }
        None => default_prm_net(ctx.seed, ctx.config.rewards.prm_problems)?,
    };
    let ppo_config = ctx.config.ppo.ppo_config(ctx.seed);
    let mut policy = Policy::new_uniform();
    let mut value_net = RewardNet::new(STATE_DIM, VALUE_HIDDEN, ctx.seed);
    let baseline = rl::greedy_exact_match(&policy, &rl::training_holdout(ppo_config.seed));
    let history = rl::train_ppo(
        &mut policy,
        &mut value_net,
        &problems,
        &irm_net,
        &prm_net,
        &ppo_config,
        ctx.config.ppo.iterations,
    )?;
    let policy_path = ctx.out_path("policy.json");
    save_policy(&policy, policy_path)?;
    let value_path = ctx.out_path("value.json");
    save_net(&value_net, "value", value_path)?;
    let history_path = ctx.out_path("ppo_history.csv");
    write_history(&history, history_path)?;
    let final_exact = history
        .last()
        .map(|row| row.exact_match)
        .unwrap_or(baseline);
    println!(
        "ppo: baseline exact-match {baseline:.3} -> {final_exact:.3} after {} iterations",
        history.len()
    );
    Ok(())
}

/// Quick IRM when no checkpoint is configured: mock ranking data over the
/// first problems' instructions, ranked by length.
pub fn default_irm_net(
    problems: &[rl::MicroProblem],
    seed: u64,
) -> Result<RewardNet, HarnessError> {
    let instructions: Vec<Instruction> = problems
        .iter()
        .take(40)
        .enumerate()
        .map(|(i, p)| {
            Instruction::seed(
                format!("rank-seed-{i}"),
                p.instruction_text.clone(),
                crate::corpus::Source::Synthetic,
            )
        })
        .collect::<Result<_, _>>()?;
    let mock_a = MockEvolBackend::named("mock-a", 1);
    let mock_b = MockEvolBackend::named("mock-b", 2);
    let records = build_irm_ranking_data(
        &instructions,
        &mock_a,
        &mock_b,
        &LengthRanker,
        2,
        derive_seed(seed, "default-irm-data", 0),
    )?;
    let pairs = ranking_feature_pairs(&records)?;
    let outcome = rewards::train_irm(
        &pairs,
        &rewards::TrainConfig {
            epochs: 40,
            ..rewards::TrainConfig::default()
        },
    )?;
    Ok(outcome.net)
}

/// Quick PRM when no checkpoint is configured: the extended corruption
/// oracle over freshly generated problems.
pub fn default_prm_net(seed: u64, prm_problems: usize) -> Result<RewardNet, HarnessError> {
    let problems = rl::generate_problems(prm_problems, derive_seed(seed, "default-prm", 1000));
    let examples = build_prm_training_set(
        &problems,
        derive_seed(seed, "default-prm-corrupt", 7),
        CorruptionMode::Extended,
    )?;
    let outcome = rewards::train_prm(
        &examples,
        &rewards::TrainConfig {
            epochs: 200,
            hidden_width: 12,
            ..rewards::TrainConfig::default()
        },
    )?;
    Ok(outcome.net)
}

fn run_eval(ctx: &mut RunContext) -> Result<(), HarnessError> {
    let problems = problems_with_gold(ctx)?;
    let backend = generation_backend(ctx)?;
    let report = evaluate_pass1(&problems, backend.as_ref())?;
    let machine_path = ctx.out_path("report.jsonl");
    emit_report(&report, &machine_path, ReportFormat::MachineReadable)?;
    let text_path = ctx.out_path("report.txt");
    emit_report(&report, &text_path, ReportFormat::TextTable)?;
    print!("{}", render_text_table(&report));
    Ok(())
}

fn run_report(ctx: &mut RunContext) -> Result<(), HarnessError> {
    let path = match ctx.config.eval.report.clone() {
        Some(path) => ctx.input_path(&path),
        None => {
            let path = ctx.out.join("report.jsonl");
            ctx.inputs.push(path.display().to_string());
            path
        }
    };
    let report = load_report(path)?;
    match ctx.config.eval.report_format {
        ReportFormat::TextTable => {
            let out_path = ctx.out_path("report_rendered.txt");
            emit_report(&report, &out_path, ReportFormat::TextTable)?;
            print!("{}", render_text_table(&report));
        }
        ReportFormat::MachineReadable => {
            let out_path = ctx.out_path("report_rendered.jsonl");
            emit_report(&report, &out_path, ReportFormat::MachineReadable)?;
        }
    }
    Ok(())
}
