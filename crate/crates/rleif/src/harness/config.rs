//! The run configuration: one JSON document with sections `corpus`,
//! `evolve`, `rewards`, `ppo`, and `eval`. Unknown keys are rejected at
//! every level.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::rl::{PpoConfig, RewardMode};

use super::{HarnessError, ReportFormat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Base seed; `--seed` overrides it.
    pub seed: u64,
    pub corpus: CorpusSection,
    pub evolve: EvolveSection,
    pub rewards: RewardsSection,
    pub ppo: PpoSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: CorpusSection::default(),
            evolve: EvolveSection::default(),
            rewards: RewardsSection::default(),
            ppo: PpoSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }
}

/// Dataset paths and SFT curation knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    /// Instruction dataset (JSON Lines). When absent, subcommands fall back
    /// to generated microworld problems.
    pub dataset: Option<PathBuf>,
    /// Gold solutions file; joined to the dataset by instruction id for
    /// evaluation golds.
    pub gold_solutions: Option<PathBuf>,
    /// Open-domain (prompt, response) pool (JSON Lines with `prompt` and
    /// `response` fields). A built-in pool is used when absent.
    pub general_pool: Option<PathBuf>,
    /// Generation attempts per problem during SFT curation.
    pub sft_attempts: u32,
    /// Math examples per general example in the merged SFT set.
    pub merge_ratio: f64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            dataset: None,
            gold_solutions: None,
            general_pool: None,
            sft_attempts: 3,
            merge_ratio: 10.0,
        }
    }
}

/// Evolution rounds and backend wiring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveSection {
    pub rounds: u32,
    /// Operator tags; all five standard operators when absent.
    pub operators: Option<Vec<String>>,
    /// Candidates per backend when building ranking data (2-4).
    pub k_per_backend: u32,
    /// Optional IRM acceptance gate: evolved instructions scoring below
    /// this are rejected. Off by default.
    pub irm_threshold: Option<f64>,
    /// IRM checkpoint used by the acceptance gate.
    pub irm_checkpoint: Option<PathBuf>,
    /// Ranking data path for `train-irm` (defaults to `<out>/rankings.jsonl`).
    pub rankings: Option<PathBuf>,
    /// Bound on in-flight backend requests.
    pub max_in_flight: usize,
    /// Remote backend endpoint (`--backend remote`).
    pub remote_url: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
}

impl Default for EvolveSection {
    fn default() -> Self {
        Self {
            rounds: 1,
            operators: None,
            k_per_backend: 2,
            irm_threshold: None,
            irm_checkpoint: None,
            rankings: None,
            max_in_flight: 8,
            remote_url: None,
            timeout_secs: 30,
            retries: 2,
        }
    }
}

/// Reward-model training knobs shared by `train-irm` and `train-prm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardsSection {
    pub hidden_width: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    /// Microworld problems behind the PRM corruption oracle.
    pub prm_problems: usize,
}

impl Default for RewardsSection {
    fn default() -> Self {
        Self {
            hidden_width: 12,
            learning_rate: 0.5,
            epochs: 200,
            batch_size: None,
            prm_problems: 300,
        }
    }
}

impl RewardsSection {
    pub fn train_config(&self, seed: u64) -> crate::rewards::TrainConfig {
        crate::rewards::TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            seed,
            hidden_width: self.hidden_width,
            batch_size: self.batch_size,
        }
    }
}

/// PPO hyperparameters plus run sizing and checkpoint paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoSection {
    pub gamma: f64,
    pub lam: f64,
    pub clip_epsilon: f64,
    pub kl_coefficient: f64,
    pub learning_rate: f64,
    pub epochs_per_batch: usize,
    pub batch_episodes: usize,
    pub reward_mode: RewardMode,
    pub iterations: usize,
    pub problem_count: usize,
    pub irm_checkpoint: Option<PathBuf>,
    pub prm_checkpoint: Option<PathBuf>,
}

impl Default for PpoSection {
    fn default() -> Self {
        let ppo = PpoConfig::default();
        Self {
            gamma: ppo.gamma,
            lam: ppo.lam,
            clip_epsilon: ppo.clip_epsilon,
            kl_coefficient: ppo.kl_coefficient,
            learning_rate: ppo.learning_rate,
            epochs_per_batch: ppo.epochs_per_batch,
            batch_episodes: ppo.batch_episodes,
            reward_mode: ppo.reward_mode,
            iterations: 200,
            problem_count: 500,
            irm_checkpoint: None,
            prm_checkpoint: None,
        }
    }
}

impl PpoSection {
    pub fn ppo_config(&self, seed: u64) -> PpoConfig {
        PpoConfig {
            gamma: self.gamma,
            lam: self.lam,
            clip_epsilon: self.clip_epsilon,
            kl_coefficient: self.kl_coefficient,
            learning_rate: self.learning_rate,
            epochs_per_batch: self.epochs_per_batch,
            batch_episodes: self.batch_episodes,
            seed,
            reward_mode: self.reward_mode,
        }
    }
}

/// Evaluation sizing, backend behavior, and report paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Microworld problems to evaluate when no dataset is configured.
    pub problem_count: usize,
    /// Seeded wrong-answer rate of the mock solver backend.
    pub error_rate: f64,
    /// Evaluate this trained policy instead of the mock solver.
    pub policy_checkpoint: Option<PathBuf>,
    /// Machine-readable report consumed by the `report` subcommand
    /// (defaults to `<out>/report.jsonl`).
    pub report: Option<PathBuf>,
    /// Format for the standalone `report` subcommand output.
    pub report_format: ReportFormat,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            problem_count: 100,
            error_rate: 0.1,
            policy_checkpoint: None,
            report: None,
            report_format: ReportFormat::TextTable,
        }
    }
}
