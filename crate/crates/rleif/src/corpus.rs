//! Data model for instructions, solutions, and graded examples, plus
//! JSON Lines persistence, deduplication, and round-expansion bookkeeping.
//!
//! The dataset file format is one JSON object per line with fields exactly
//! `id`, `text`, `source`, and optionally `subtopic`, `level`, and the
//! lineage trio `parent_id`/`round`/`operator` (present together or not at
//! all). Solutions use `instruction_id`, `steps`, `final_answer`,
//! `raw_text`.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grader::{self, GradeError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("duplicate id {id:?} at lines {first} and {second}")]
    DuplicateId {
        id: String,
        first: usize,
        second: usize,
    },
    #[error("instruction {id:?}: {message}")]
    InvalidInstruction { id: String, message: String },
    #[error("seed count {0} is negative")]
    NegativeSeedCount(i64),
    #[error("acceptance fraction {value} for round {round} is outside [0, 1]")]
    InvalidAcceptance { round: usize, value: f64 },
    #[error("expected {rounds} acceptance fractions, got {got}")]
    AcceptanceLength { rounds: usize, got: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Where an instruction came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "gsm8k-style")]
    Gsm8kStyle,
    #[serde(rename = "math-style")]
    MathStyle,
    #[serde(rename = "synthetic")]
    Synthetic,
}

/// The seven academic areas used for subtopic breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subtopic {
    Prealgebra,
    Algebra,
    #[serde(rename = "Number Theory")]
    NumberTheory,
    #[serde(rename = "Counting & Probability")]
    CountingProbability,
    Geometry,
    #[serde(rename = "Intermediate Algebra")]
    IntermediateAlgebra,
    Precalculus,
}

pub const ALL_SUBTOPICS: [Subtopic; 7] = [
    Subtopic::Prealgebra,
    Subtopic::Algebra,
    Subtopic::NumberTheory,
    Subtopic::CountingProbability,
    Subtopic::Geometry,
    Subtopic::IntermediateAlgebra,
    Subtopic::Precalculus,
];

impl fmt::Display for Subtopic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Subtopic::Prealgebra => "Prealgebra",
            Subtopic::Algebra => "Algebra",
            Subtopic::NumberTheory => "Number Theory",
            Subtopic::CountingProbability => "Counting & Probability",
            Subtopic::Geometry => "Geometry",
            Subtopic::IntermediateAlgebra => "Intermediate Algebra",
            Subtopic::Precalculus => "Precalculus",
        };
        f.write_str(name)
    }
}

/// Provenance of an evolved instruction. Seed instructions carry none.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lineage {
    pub parent_id: String,
    /// 1-based evolution round that produced this instruction.
    pub round_index: u32,
    pub operator_tag: String,
}

/// One math problem with optional subtopic/level metadata and lineage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub id: String,
    pub text: String,
    pub source: Source,
    pub subtopic: Option<Subtopic>,
    pub difficulty_level: Option<u8>,
    pub lineage: Option<Lineage>,
}

impl Instruction {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        source: Source,
        subtopic: Option<Subtopic>,
        difficulty_level: Option<u8>,
        lineage: Option<Lineage>,
    ) -> Result<Self, CorpusError> {
        let instruction = Self {
            id: id.into(),
            text: text.into(),
            source,
            subtopic,
            difficulty_level,
            lineage,
        };
        instruction.validate()?;
        Ok(instruction)
    }

    /// A seed instruction: no lineage, no metadata.
    pub fn seed(
        id: impl Into<String>,
        text: impl Into<String>,
        source: Source,
    ) -> Result<Self, CorpusError> {
        Self::new(id, text, source, None, None, None)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |message: String| CorpusError::InvalidInstruction {
            id: self.id.clone(),
            message,
        };
        if self.id.is_empty() {
            return Err(fail("id is empty".into()));
        }
        if self.text.trim().is_empty() {
            return Err(fail("text is empty after trimming".into()));
        }
        if let Some(level) = self.difficulty_level {
            if !(1..=5).contains(&level) {
                return Err(fail(format!("difficulty level {level} outside 1-5")));
            }
        }
        if let Some(lineage) = &self.lineage {
            if lineage.round_index < 1 {
                return Err(fail("lineage round index must be >= 1".into()));
            }
            if lineage.parent_id.is_empty() || lineage.operator_tag.is_empty() {
                return Err(fail("lineage parent id and operator tag required".into()));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstructionRecord {
    id: String,
    text: String,
    source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subtopic: Option<Subtopic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    level: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    round: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    operator: Option<String>,
}

impl From<&Instruction> for InstructionRecord {
    fn from(ins: &Instruction) -> Self {
        Self {
            id: ins.id.clone(),
            text: ins.text.clone(),
            source: ins.source,
            subtopic: ins.subtopic,
            level: ins.difficulty_level,
            parent_id: ins.lineage.as_ref().map(|l| l.parent_id.clone()),
            round: ins.lineage.as_ref().map(|l| l.round_index),
            operator: ins.lineage.as_ref().map(|l| l.operator_tag.clone()),
        }
    }
}

impl TryFrom<InstructionRecord> for Instruction {
    type Error = String;

    fn try_from(rec: InstructionRecord) -> Result<Self, String> {
        let lineage = match (rec.parent_id, rec.round, rec.operator) {
            (None, None, None) => None,
            (Some(parent_id), Some(round_index), Some(operator_tag)) => Some(Lineage {
                parent_id,
                round_index,
                operator_tag,
            }),
            _ => {
                return Err(
                    "parent_id, round, and operator must be present together or all absent".into(),
                )
            }
        };
        Instruction::new(
            rec.id,
            rec.text,
            rec.source,
            rec.subtopic,
            rec.level,
            lineage,
        )
        .map_err(|e| e.to_string())
    }
}

/// Load a JSON Lines instruction dataset, preserving line order and
/// enforcing id uniqueness.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Instruction>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut instructions = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        let record: InstructionRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        let instruction: Instruction =
            record
                .try_into()
                .map_err(|message| CorpusError::MalformedLine {
                    line: line_no,
                    message,
                })?;
        if let Some(&first) = seen.get(&instruction.id) {
            return Err(CorpusError::DuplicateId {
                id: instruction.id,
                first,
                second: line_no,
            });
        }
        seen.insert(instruction.id.clone(), line_no);
        instructions.push(instruction);
    }
    Ok(instructions)
}

/// Write instructions as JSON Lines. `load_corpus(save_corpus(x)) == x`.
pub fn save_corpus(
    instructions: &[Instruction],
    path: impl AsRef<Path>,
) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = BufWriter::new(file);
    for instruction in instructions {
        instruction.validate()?;
        let record = InstructionRecord::from(instruction);
        let json = serde_json::to_string(&record).expect("instruction record serializes");
        writeln!(writer, "{json}").map_err(|e| io_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// The key used for duplicate detection: lowercased text with all
/// whitespace collapsed away, so `"A?"` and `"a  ?"` share one key.
pub fn normalize_text(text: &str) -> String {
    text.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .concat()
}

/// Drop instructions whose normalized text already appeared. First
/// occurrence wins; relative order is preserved.
pub fn dedupe(instructions: Vec<Instruction>) -> Vec<Instruction> {
    let mut seen = std::collections::HashSet::new();
    instructions
        .into_iter()
        .filter(|ins| seen.insert(normalize_text(&ins.text)))
        .collect()
}

/// One solution to one instruction, split into steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Solution {
    pub instruction_id: String,
    pub steps: Vec<String>,
    pub final_answer: Option<String>,
    pub raw_text: String,
}

impl Solution {
    /// Build a solution from raw generation text using the grader's step
    /// splitting and answer extraction, so the stored pieces honor the
    /// grader contract.
    pub fn from_raw(
        instruction_id: impl Into<String>,
        raw_text: impl Into<String>,
    ) -> Result<Self, GradeError> {
        let raw_text = raw_text.into();
        let steps = grader::split_steps(&raw_text)?.into_steps();
        let final_answer = grader::extract_final_answer(&raw_text)
            .and_then(|payload| grader::normalize_answer(&payload).ok())
            .map(|canon| canon.render());
        Ok(Self {
            instruction_id: instruction_id.into(),
            steps,
            final_answer,
            raw_text,
        })
    }
}

/// A solution graded against its gold answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradedExample {
    pub instruction_id: String,
    pub gold_answer: String,
    pub solution: Solution,
    pub is_correct: bool,
}

impl GradedExample {
    pub fn build(gold_answer: impl Into<String>, solution: Solution) -> Result<Self, GradeError> {
        let gold_answer = gold_answer.into();
        let verdict = grader::grade(&solution.raw_text, &gold_answer)?;
        Ok(Self {
            instruction_id: solution.instruction_id.clone(),
            gold_answer,
            solution,
            is_correct: verdict.is_correct,
        })
    }
}

/// Save solutions as JSON Lines.
pub fn save_solutions(solutions: &[Solution], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = BufWriter::new(file);
    for solution in solutions {
        let json = serde_json::to_string(solution).expect("solution serializes");
        writeln!(writer, "{json}").map_err(|e| io_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Load solutions from JSON Lines.
pub fn load_solutions(path: impl AsRef<Path>) -> Result<Vec<Solution>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut solutions = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let solution: Solution =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                line: idx + 1,
                message: e.to_string(),
            })?;
        solutions.push(solution);
    }
    Ok(solutions)
}

/// Corpus growth bookkeeping across evolution rounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub seed_count: u64,
    /// Accepted instructions per round, in round order.
    pub round_counts: Vec<u64>,
    /// `seed_count + sum(round_counts)`.
    pub total: u64,
}

/// Model the additive per-turn expansion: every seed is evolved once per
/// round and a fraction of the outputs is accepted, so round `k`
/// contributes `floor(seed_count * acceptance[k])` and totals grow
/// additively.
pub fn expansion_stats(
    seed_count: i64,
    rounds: usize,
    per_round_acceptance: &[f64],
) -> Result<CorpusStats, CorpusError> {
    if seed_count < 0 {
        return Err(CorpusError::NegativeSeedCount(seed_count));
    }
    if per_round_acceptance.len() != rounds {
        return Err(CorpusError::AcceptanceLength {
            rounds,
            got: per_round_acceptance.len(),
        });
    }
    for (round, &value) in per_round_acceptance.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(CorpusError::InvalidAcceptance { round, value });
        }
    }
    let seed_count = seed_count as u64;
    let round_counts: Vec<u64> = per_round_acceptance
        .iter()
        .map(|&a| (seed_count as f64 * a).floor() as u64)
        .collect();
    let total = seed_count + round_counts.iter().sum::<u64>();
    Ok(CorpusStats {
        seed_count,
        round_counts,
        total,
    })
}

/// [`expansion_stats`] with the same acceptance fraction every round.
pub fn expansion_stats_uniform(
    seed_count: i64,
    rounds: usize,
    acceptance: f64,
) -> Result<CorpusStats, CorpusError> {
    expansion_stats(seed_count, rounds, &vec![acceptance; rounds])
}
