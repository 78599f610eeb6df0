//! SFT data curation, byte-exact prompt rendering, pass@1 evaluation with
//! subtopic/level breakdowns, report emission, and the CLI that sequences
//! the whole pipeline.

mod backends;
mod cli;
mod config;

pub use backends::{MicroSolverBackend, PolicyBackend, DEFAULT_GENERAL_POOL};
pub use cli::{cli_main, default_irm_net, default_prm_net};
pub use config::{
    CorpusSection, EvalSection, EvolveSection, PpoSection, RewardsSection, RunConfig,
};

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Instruction, Subtopic};
use crate::evolver::{EvolveError, GeneratorBackend};
use crate::grader::{self, GradeError};
use crate::par;
use crate::rewards::RewardError;
use crate::rl::RlError;
use crate::seeding::derive_seed;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("report has no items")]
    EmptyReport,
    #[error("instruction {id}: gold answer does not normalize: {source}")]
    BadGold {
        id: String,
        #[source]
        source: GradeError,
    },
    #[error("merge ratio {0} must be positive")]
    BadMergeRatio(f64),
    #[error("attempts per problem must be at least 1")]
    BadAttempts,
    #[error("configuration: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("report line {line}: {message}")]
    MalformedReport { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Grade(#[from] GradeError),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Rl(#[from] RlError),
}

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Prompt rendering
// ---------------------------------------------------------------------------

/// Training prompt frame; the eval frame appends [`EVAL_SUFFIX`] after
/// `### Response:`. Checked byte-for-byte against the golden files.
pub const TRAIN_TEMPLATE: &str = "Below is an instruction that describes a task. Write a response that appropriately completes the request.\n\n### Instruction:\n{instruction}\n\n### Response:";
pub const EVAL_SUFFIX: &str = " Let's think step by step.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptMode {
    Train,
    Eval,
}

/// Render the train or eval prompt for an instruction, byte-exact, no
/// trailing newline beyond the template.
pub fn render_prompt(instruction_text: &str, mode: PromptMode) -> Result<String, HarnessError> {
    if instruction_text.trim().is_empty() {
        return Err(HarnessError::EmptyInstruction);
    }
    let base = TRAIN_TEMPLATE.replacen("{instruction}", instruction_text, 1);
    Ok(match mode {
        PromptMode::Train => base,
        PromptMode::Eval => format!("{base}{EVAL_SUFFIX}"),
    })
}

// ---------------------------------------------------------------------------
// SFT data curation
// ---------------------------------------------------------------------------

/// One curated math example: the train-mode prompt and a step-by-step
/// response that grades correct against the retained gold answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftMathExample {
    pub instruction_id: String,
    pub prompt: String,
    pub response: String,
    pub gold_answer: String,
}

/// One general-conversation example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftGeneralExample {
    pub prompt: String,
    pub response: String,
}

/// The merged SFT dataset: curated math examples plus general
/// conversations sampled at `merge_ratio` math examples per general one.
#[derive(Debug, Clone, PartialEq)]
pub struct SftDataset {
    pub math_examples: Vec<SftMathExample>,
    pub general_examples: Vec<SftGeneralExample>,
    pub merge_ratio: f64,
    /// Problems skipped because no attempt graded correct or the backend
    /// failed.
    pub skipped: Vec<String>,
}

/// Curate SFT data: per problem, up to `attempts_per_problem` generations
/// with derived seeds, keeping the first one that grades correct; general
/// examples are then sampled (seeded) to one per `merge_ratio` kept math
/// examples.
pub fn build_sft_dataset(
    problems_with_gold: &[(Instruction, String)],
    backend: &dyn GeneratorBackend,
    attempts_per_problem: u32,
    general_pool: &[(String, String)],
    merge_ratio: f64,
    seed: u64,
) -> Result<SftDataset, HarnessError> {
    if attempts_per_problem < 1 {
        return Err(HarnessError::BadAttempts);
    }
    if merge_ratio <= 0.0 || !merge_ratio.is_finite() {
        return Err(HarnessError::BadMergeRatio(merge_ratio));
    }
    for (instruction, gold) in problems_with_gold {
        grader::normalize_answer(gold).map_err(|source| HarnessError::BadGold {
            id: instruction.id.clone(),
            source,
        })?;
    }

    type Kept = Result<Option<SftMathExample>, HarnessError>;
    let generated = par::map_ordered(problems_with_gold, |idx, (instruction, gold)| -> Kept {
        let prompt = render_prompt(&instruction.text, PromptMode::Eval)?;
        for attempt in 0..attempts_per_problem {
            let attempt_seed = derive_seed(seed, "sft", ((idx as u64) << 8) | attempt as u64);
            let response = match backend.generate(&prompt, attempt_seed) {
                Ok(text) => text,
                Err(err) => {
                    log::warn!("sft generation failed for {}: {err}", instruction.id);
                    continue;
                }
            };
            if grader::grade(&response, gold)?.is_correct {
                return Ok(Some(SftMathExample {
                    instruction_id: instruction.id.clone(),
                    prompt: render_prompt(&instruction.text, PromptMode::Train)?,
                    response,
                    gold_answer: gold.clone(),
                }));
            }
        }
        Ok(None)
    });

    let mut math_examples = Vec::new();
    let mut skipped = Vec::new();
    for (result, (instruction, _)) in generated.into_iter().zip(problems_with_gold) {
        match result? {
            Some(example) => math_examples.push(example),
            None => skipped.push(instruction.id.clone()),
        }
    }

    let want_general = (math_examples.len() as f64 / merge_ratio).floor() as usize;
    let general_examples = sample_general(general_pool, want_general, seed);
    Ok(SftDataset {
        math_examples,
        general_examples,
        merge_ratio,
        skipped,
    })
}

fn sample_general(pool: &[(String, String)], count: usize, seed: u64) -> Vec<SftGeneralExample> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, "general", 0));
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut rng);
    order
        .into_iter()
        .take(count)
        .map(|i| SftGeneralExample {
            prompt: pool[i].0.clone(),
            response: pool[i].1.clone(),
        })
        .collect()
}

/// Re-grade every persisted math example; returns the ids that no longer
/// grade correct (empty means the dataset passes its audit).
pub fn audit_sft(dataset: &SftDataset) -> Result<Vec<String>, HarnessError> {
    let mut bad = Vec::new();
    for example in &dataset.math_examples {
        if !grader::grade(&example.response, &example.gold_answer)?.is_correct {
            bad.push(example.instruction_id.clone());
        }
    }
    Ok(bad)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum SftLine {
    Math(SftMathExample),
    General(SftGeneralExample),
    Meta {
        merge_ratio: f64,
        skipped: Vec<String>,
    },
}

pub fn save_sft_dataset(dataset: &SftDataset, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = BufWriter::new(file);
    let mut write_line = |line: &SftLine| -> Result<(), HarnessError> {
        let json = serde_json::to_string(line).expect("sft line serializes");
        writeln!(writer, "{json}").map_err(|e| io_err(path, e))
    };
    write_line(&SftLine::Meta {
        merge_ratio: dataset.merge_ratio,
        skipped: dataset.skipped.clone(),
    })?;
    for example in &dataset.math_examples {
        write_line(&SftLine::Math(example.clone()))?;
    }
    for example in &dataset.general_examples {
        write_line(&SftLine::General(example.clone()))?;
    }
    writer.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn load_sft_dataset(path: impl AsRef<Path>) -> Result<SftDataset, HarnessError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut dataset = SftDataset {
        math_examples: Vec::new(),
        general_examples: Vec::new(),
        merge_ratio: 10.0,
        skipped: Vec::new(),
    };
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let parsed: SftLine =
            serde_json::from_str(&line).map_err(|e| HarnessError::MalformedReport {
                line: idx + 1,
                message: e.to_string(),
            })?;
        match parsed {
            SftLine::Math(example) => dataset.math_examples.push(example),
            SftLine::General(example) => dataset.general_examples.push(example),
            SftLine::Meta {
                merge_ratio,
                skipped,
            } => {
                dataset.merge_ratio = merge_ratio;
                dataset.skipped = skipped;
            }
        }
    }
    Ok(dataset)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Per-item evaluation verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemVerdict {
    pub instruction_id: String,
    pub subtopic: Option<Subtopic>,
    pub level: Option<u8>,
    pub correct: bool,
    /// True when the backend failed and the item was scored incorrect.
    pub generation_failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub total: usize,
    pub correct: usize,
    pub pass1: f64,
}

impl GroupStats {
    fn from_counts(total: usize, correct: usize) -> Self {
        Self {
            total,
            correct,
            pass1: correct as f64 / total as f64,
        }
    }
}

/// Pass@1 report with subtopic and level breakdowns.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    pub pass1: f64,
    pub by_subtopic: BTreeMap<Subtopic, GroupStats>,
    pub by_level: BTreeMap<u8, GroupStats>,
    pub failed_generations: Vec<String>,
}

impl EvalReport {
    /// Build a report from verdicts. An empty verdict list is refused here,
    /// so `pass1` can never divide by zero.
    pub fn from_verdicts(verdicts: &[ItemVerdict]) -> Result<Self, HarnessError> {
        if verdicts.is_empty() {
            return Err(HarnessError::EmptyReport);
        }
        let total = verdicts.len();
        let correct = verdicts.iter().filter(|v| v.correct).count();
        let mut by_subtopic: BTreeMap<Subtopic, (usize, usize)> = BTreeMap::new();
        let mut by_level: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
        let mut failed_generations = Vec::new();
        for verdict in verdicts {
            if let Some(subtopic) = verdict.subtopic {
                let entry = by_subtopic.entry(subtopic).or_default();
                entry.0 += 1;
                entry.1 += verdict.correct as usize;
            }
            if let Some(level) = verdict.level {
                let entry = by_level.entry(level).or_default();
                entry.0 += 1;
                entry.1 += verdict.correct as usize;
            }
            if verdict.generation_failed {
                failed_generations.push(verdict.instruction_id.clone());
            }
        }
        Ok(Self {
            total,
            correct,
            pass1: correct as f64 / total as f64,
            by_subtopic: by_subtopic
                .into_iter()
                .map(|(k, (t, c))| (k, GroupStats::from_counts(t, c)))
                .collect(),
            by_level: by_level
                .into_iter()
                .map(|(k, (t, c))| (k, GroupStats::from_counts(t, c)))
                .collect(),
            failed_generations,
        })
    }
}

/// One greedy generation per problem through the eval prompt, graded
/// against gold. Backend failure scores the item incorrect and flags it,
/// keeping the denominator fixed.
pub fn evaluate_pass1(
    problems_with_gold: &[(Instruction, String)],
    backend: &dyn GeneratorBackend,
) -> Result<EvalReport, HarnessError> {
    for (instruction, gold) in problems_with_gold {
        grader::normalize_answer(gold).map_err(|source| HarnessError::BadGold {
            id: instruction.id.clone(),
            source,
        })?;
    }
    let verdicts: Vec<Result<ItemVerdict, HarnessError>> =
        par::map_ordered(problems_with_gold, |idx, (instruction, gold)| {
            let prompt = render_prompt(&instruction.text, PromptMode::Eval)?;
            let (correct, generation_failed) =
                match backend.generate(&prompt, derive_seed(0, "eval", idx as u64)) {
                    Ok(response) => (grader::grade(&response, gold)?.is_correct, false),
                    Err(err) => {
                        log::warn!("eval generation failed for {}: {err}", instruction.id);
                        (false, true)
                    }
                };
            Ok(ItemVerdict {
                instruction_id: instruction.id.clone(),
                subtopic: instruction.subtopic,
                level: instruction.difficulty_level,
                correct,
                generation_failed,
            })
        });
    let verdicts: Vec<ItemVerdict> = verdicts.into_iter().collect::<Result<_, _>>()?;
    EvalReport::from_verdicts(&verdicts)
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportFormat {
    #[serde(rename = "text-table")]
    TextTable,
    #[serde(rename = "machine-readable")]
    MachineReadable,
}

fn percent(p: f64) -> String {
    format!("{:.1}", p * 100.0)
}

/// Render the text table: one row per subtopic, an Overall footer, and a
/// per-level section when levels are present.
pub fn render_text_table(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>8} {:>8} {:>10}\n",
        "Subtopic", "total", "correct", "pass@1 (%)"
    ));
    for (subtopic, stats) in &report.by_subtopic {
        out.push_str(&format!(
            "{:<24} {:>8} {:>8} {:>10}\n",
            subtopic.to_string(),
            stats.total,
            stats.correct,
            percent(stats.pass1)
        ));
    }
    out.push_str(&format!(
        "{:<24} {:>8} {:>8} {:>10}\n",
        "Overall",
        report.total,
        report.correct,
        percent(report.pass1)
    ));
    if !report.by_level.is_empty() {
        out.push('\n');
        out.push_str(&format!(
            "{:<24} {:>8} {:>8} {:>10}\n",
            "Level", "total", "correct", "pass@1 (%)"
        ));
        for (level, stats) in &report.by_level {
            out.push_str(&format!(
                "{:<24} {:>8} {:>8} {:>10}\n",
                format!("Level {level}"),
                stats.total,
                stats.correct,
                percent(stats.pass1)
            ));
        }
    }
    if !report.failed_generations.is_empty() {
        out.push_str(&format!(
            "\n{} generation failures: {}\n",
            report.failed_generations.len(),
            report.failed_generations.join(", ")
        ));
    }
    out
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "kebab-case", deny_unknown_fields)]
enum ReportLine {
    Summary {
        total: usize,
        correct: usize,
        pass1: f64,
    },
    Subtopic {
        name: Subtopic,
        total: usize,
        correct: usize,
        pass1: f64,
    },
    Level {
        level: u8,
        total: usize,
        correct: usize,
        pass1: f64,
    },
    Failure {
        instruction_id: String,
    },
}

/// Emit a report: a text table mirroring the subtopic layout, or machine
/// readable JSON Lines that round-trip to an equal report.
pub fn emit_report(
    report: &EvalReport,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = BufWriter::new(file);
    match format {
        ReportFormat::TextTable => {
            writer
                .write_all(render_text_table(report).as_bytes())
                .map_err(|e| io_err(path, e))?;
        }
        ReportFormat::MachineReadable => {
            let mut write_line = |line: &ReportLine| -> Result<(), HarnessError> {
                let json = serde_json::to_string(line).expect("report line serializes");
                writeln!(writer, "{json}").map_err(|e| io_err(path, e))
            };
            write_line(&ReportLine::Summary {
                total: report.total,
                correct: report.correct,
                pass1: report.pass1,
            })?;
            for (name, stats) in &report.by_subtopic {
                write_line(&ReportLine::Subtopic {
                    name: *name,
                    total: stats.total,
                    correct: stats.correct,
                    pass1: stats.pass1,
                })?;
            }
            for (level, stats) in &report.by_level {
                write_line(&ReportLine::Level {
                    level: *level,
                    total: stats.total,
                    correct: stats.correct,
                    pass1: stats.pass1,
                })?;
            }
            for id in &report.failed_generations {
                write_line(&ReportLine::Failure {
                    instruction_id: id.clone(),
                })?;
            }
        }
    }
    writer.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Load a machine-readable report back into an [`EvalReport`].
pub fn load_report(path: impl AsRef<Path>) -> Result<EvalReport, HarnessError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut summary: Option<(usize, usize, f64)> = None;
    let mut by_subtopic = BTreeMap::new();
    let mut by_level = BTreeMap::new();
    let mut failed_generations = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let parsed: ReportLine =
            serde_json::from_str(&line).map_err(|e| HarnessError::MalformedReport {
                line: idx + 1,
                message: e.to_string(),
            })?;
        match parsed {
            ReportLine::Summary {
                total,
                correct,
                pass1,
            } => summary = Some((total, correct, pass1)),
            ReportLine::Subtopic {
                name,
                total,
                correct,
                pass1,
            } => {
                by_subtopic.insert(
                    name,
                    GroupStats {
                        total,
                        correct,
                        pass1,
                    },
                );
            }
            ReportLine::Level {
                level,
                total,
                correct,
                pass1,
            } => {
                by_level.insert(
                    level,
                    GroupStats {
                        total,
                        correct,
                        pass1,
                    },
                );
            }
            ReportLine::Failure { instruction_id } => failed_generations.push(instruction_id),
        }
    }
    let (total, correct, pass1) = summary.ok_or(HarnessError::MalformedReport {
        line: 0,
        message: "missing summary record".into(),
    })?;
    if total == 0 {
        return Err(HarnessError::EmptyReport);
    }
    Ok(EvalReport {
        total,
        correct,
        pass1,
        by_subtopic,
        by_level,
        failed_generations,
    })
}

/// Microworld problems as (instruction, gold) pairs for the harness:
/// subtopic Prealgebra, difficulty level = number of operations.
pub fn micro_problems_with_gold(
    problems: &[crate::rl::MicroProblem],
) -> Result<Vec<(Instruction, String)>, HarnessError> {
    problems
        .iter()
        .map(|p| {
            let level = (p.chain_len() - 1).min(5) as u8;
            let instruction = Instruction::new(
                p.id(),
                p.instruction_text.clone(),
                crate::corpus::Source::Synthetic,
                Some(Subtopic::Prealgebra),
                Some(level),
                None,
            )?;
            Ok((instruction, p.gold_answer.to_string()))
        })
        .collect()
}
