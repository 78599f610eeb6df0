//! Trainable scoring machinery: a small feed-forward network with
//! hand-written gradients, feature extraction for instructions and steps,
//! pairwise-preference training for the instruction reward model (IRM),
//! per-step label training for the process reward model (PRM), and the
//! product reward `r = r_i * r_a`.
//!
//! Feature-based scoring stands in for LLM judgment at desk scale: the
//! 16-dimensional hand feature set plus a tanh network keeps the training
//! and inference pipeline identical in shape while being fully testable.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Solution;

/// Fixed featurizer output dimension.
pub const FEATURE_DIM: usize = 16;
/// Bumped whenever the feature layout changes; checkpoints record it and
/// loading rejects a mismatch.
pub const FEATURIZER_VERSION: u32 = 1;
/// Version of the checkpoint container itself.
pub const CONTAINER_FORMAT_VERSION: u32 = 1;

/// Per-epoch training loss may exceed the previous epoch by at most this
/// much; the trainer backtracks and halves the step size otherwise.
const LOSS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("text is empty")]
    EmptyText,
    #[error("step text is empty")]
    EmptyStep,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training set contains a single class only")]
    SingleClass,
    #[error("non-finite feature value in training example {index}")]
    NonFiniteFeature { index: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("input has length {got}, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("forward cache is stale: net revision {net}, cache revision {cache}")]
    StaleCache { net: u64, cache: u64 },
    #[error("{name} = {value} is outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("solution has no steps")]
    EmptySteps,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

/// Fixed-length feature vector consumed by [`RewardNet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

static NUMBER_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+(?:\.\d+)?").unwrap());
static NAMED_QUANTITY_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\d+(?:\.\d+)?\s+[A-Za-z]+").unwrap());
static EQUATION_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"\$?(-?\d+(?:\.\d+)?)\s*([+*/x×·∗−-])\s*\$?(-?\d+(?:\.\d+)?)\s*=\s*\$?(-?\d+(?:\.\d+)?)",
    )
    .unwrap()
});

const IMPERATIVE_VERBS: [&str; 10] = [
    "calculate",
    "find",
    "compute",
    "determine",
    "evaluate",
    "solve",
    "simplify",
    "what",
    "how",
    "start",
];

const PRONOUNS: [&str; 9] = [
    "it", "they", "them", "he", "she", "this", "that", "these", "those",
];

const UNIT_WORDS: [&str; 22] = [
    "hour", "hours", "dollar", "dollars", "mile", "miles", "meter", "meters", "minute", "minutes",
    "day", "days", "article", "articles", "apple", "apples", "tire", "tires", "cup", "cups", "egg",
    "eggs",
];

const VAGUE_QUANTIFIERS: [&str; 8] = [
    "some",
    "many",
    "few",
    "several",
    "various",
    "lots",
    "about",
    "approximately",
];

fn clean_word(token: &str) -> String {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// Deterministic 16-dimensional instruction features.
///
/// Layout: definition group (0 question/imperative flag, 1 named-quantity
/// count, 2 pronouns in the opening sentence), precision group (3 numeric
/// token count, 4 unit-word count, 5 negated vague-quantifier count),
/// integrity group (6 token count / 100, 7 sentence count, 8
/// ends-with-question flag), length stats (9 char count / 100, 10 mean
/// token length / 10), and five reserved zeros.
pub fn featurize_instruction(text: &str) -> Result<FeatureVector, RewardError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(RewardError::EmptyText);
    }
    let mut f = [0.0f64; FEATURE_DIM];
    let tokens: Vec<&str> = trimmed.split_whitespace().collect();
    let words: Vec<String> = tokens.iter().map(|t| clean_word(t)).collect();

    let first_word_imperative = words
        .first()
        .is_some_and(|w| IMPERATIVE_VERBS.contains(&w.as_str()));
    f[0] = if trimmed.contains('?') || first_word_imperative {
        1.0
    } else {
        0.0
    };
    f[1] = NAMED_QUANTITY_RE.find_iter(trimmed).count() as f64;
    let first_sentence: &str = trimmed
        .split_inclusive(['.', '?', '!'])
        .next()
        .unwrap_or(trimmed);
    f[2] = first_sentence
        .split_whitespace()
        .map(clean_word)
        .filter(|w| PRONOUNS.contains(&w.as_str()))
        .count() as f64;
    f[3] = NUMBER_RE.find_iter(trimmed).count() as f64;
    f[4] = words
        .iter()
        .filter(|w| UNIT_WORDS.contains(&w.as_str()))
        .count() as f64;
    f[5] = -(words
        .iter()
        .filter(|w| VAGUE_QUANTIFIERS.contains(&w.as_str()))
        .count() as f64);
    f[6] = tokens.len() as f64 / 100.0;
    f[7] = trimmed
        .split(['.', '?', '!'])
        .filter(|s| !s.trim().is_empty())
        .count() as f64;
    f[8] = if trimmed.ends_with('?') { 1.0 } else { 0.0 };
    f[9] = trimmed.chars().count() as f64 / 100.0;
    if !tokens.is_empty() {
        let total: usize = tokens.iter().map(|t| t.chars().count()).sum();
        f[10] = total as f64 / tokens.len() as f64 / 10.0;
    }
    Ok(FeatureVector(f))
}

fn parse_number(raw: &str) -> Option<f64> {
    raw.trim_start_matches('$').replace(',', "").parse().ok()
}

fn step_numbers(text: &str) -> Vec<f64> {
    NUMBER_RE
        .find_iter(text)
        .filter_map(|m| parse_number(m.as_str()))
        .collect()
}

fn equations_hold(text: &str) -> (bool, usize) {
    let mut count = 0usize;
    let mut all_hold = true;
    for caps in EQUATION_RE.captures_iter(text) {
        count += 1;
        let (Some(a), Some(b), Some(c)) = (
            parse_number(&caps[1]),
            parse_number(&caps[3]),
            parse_number(&caps[4]),
        ) else {
            all_hold = false;
            continue;
        };
        let value = match &caps[2] {
            "+" => a + b,
            "-" | "−" => a - b,
            "*" | "x" | "×" | "·" | "∗" => a * b,
            "/" => {
                if b == 0.0 {
                    all_hold = false;
                    continue;
                }
                a / b
            }
            _ => {
                all_hold = false;
                continue;
            }
        };
        if (value - c).abs() > 1e-9 * c.abs().max(1.0) {
            all_hold = false;
        }
    }
    (all_hold, count)
}

/// Deterministic 16-dimensional step features.
///
/// Layout: 0 internal-arithmetic-consistency flag (every `a op b = c`
/// substring checked by exact evaluation; vacuously consistent), 1 count of
/// step numbers already seen in the instruction or prior steps, 2 token
/// count / 20, 3 char count / 100, 4 position fraction
/// `|prior| / (|prior| + 1)`, 5 equation count / 5, rest reserved zeros.
pub fn featurize_step(
    instruction_text: &str,
    prior_steps: &[String],
    step_text: &str,
) -> Result<FeatureVector, RewardError> {
    let trimmed = step_text.trim();
    if trimmed.is_empty() {
        return Err(RewardError::EmptyStep);
    }
    let mut f = [0.0f64; FEATURE_DIM];
    let (consistent, equation_count) = equations_hold(trimmed);
    f[0] = if consistent { 1.0 } else { 0.0 };

    let mut known = step_numbers(instruction_text);
    for prior in prior_steps {
        known.extend(step_numbers(prior));
    }
    f[1] = step_numbers(trimmed)
        .iter()
        .filter(|n| known.iter().any(|k| (*k - **n).abs() < 1e-9))
        .count() as f64;
    f[2] = trimmed.split_whitespace().count() as f64 / 20.0;
    f[3] = trimmed.chars().count() as f64 / 100.0;
    let position = prior_steps.len() as f64;
    f[4] = position / (position + 1.0);
    f[5] = equation_count as f64 / 5.0;
    Ok(FeatureVector(f))
}

/// Diagnostic per-aspect scores in `[0, 1]`, derived from the feature
/// groups. Kept as metadata only; the trained scalar score is what feeds
/// the reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AspectScores {
    pub definition: f64,
    pub precision: f64,
    pub integrity: f64,
}

impl AspectScores {
    pub fn new(definition: f64, precision: f64, integrity: f64) -> Result<Self, RewardError> {
        for (name, value) in [
            ("definition", definition),
            ("precision", precision),
            ("integrity", integrity),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(RewardError::OutOfRange {
                    name: match name {
                        "definition" => "definition",
                        "precision" => "precision",
                        _ => "integrity",
                    },
                    value,
                    range: "[0, 1]",
                });
            }
        }
        Ok(Self {
            definition,
            precision,
            integrity,
        })
    }
}

/// Heuristic aspect scores for an instruction, from the same feature groups
/// the featurizer uses.
pub fn aspect_scores(text: &str) -> Result<AspectScores, RewardError> {
    let f = featurize_instruction(text)?.0;
    let definition = sigmoid(2.0 * f[0] + 0.5 * f[1] - f[2] - 1.0);
    let precision = sigmoid(0.5 * f[3] + f[4] + f[5] - 0.5);
    let integrity = sigmoid(2.0 * f[6] + 0.5 * f[7] + f[8] - 1.0);
    AspectScores::new(definition, precision, integrity)
}

/// Per-step correctness label for PRM training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepLabel {
    pub step_index: usize,
    pub correct: bool,
}

impl StepLabel {
    pub fn validate_against(&self, solution: &Solution) -> Result<(), RewardError> {
        if self.step_index >= solution.steps.len() {
            return Err(RewardError::ShapeMismatch {
                expected: solution.steps.len(),
                got: self.step_index,
            });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// The scoring network
// ---------------------------------------------------------------------------

/// A `[input, hidden, 1]` feed-forward net: tanh hidden layer, identity
/// output. Gradients are hand-written and checked against central finite
/// differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardNet {
    input_dim: usize,
    hidden_dim: usize,
    /// hidden x input, row-major.
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    /// Bumped on every parameter change so stale forward caches are caught.
    #[serde(default)]
    revision: u64,
}

/// Intermediate activations saved by [`RewardNet::forward`] for the
/// matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Vec<f64>,
    hidden: Vec<f64>,
    revision: u64,
}

/// Parameter gradients with the same shapes as the net.
#[derive(Debug, Clone)]
pub struct NetGradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl NetGradients {
    fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w1: vec![0.0; hidden_dim * input_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; hidden_dim],
            b2: 0.0,
        }
    }

    fn add(&mut self, other: &NetGradients) {
        for (a, b) in self.w1.iter_mut().zip(&other.w1) {
            *a += b;
        }
        for (a, b) in self.b1.iter_mut().zip(&other.b1) {
            *a += b;
        }
        for (a, b) in self.w2.iter_mut().zip(&other.w2) {
            *a += b;
        }
        self.b2 += other.b2;
    }

    fn scale(&mut self, factor: f64) {
        for v in self.w1.iter_mut() {
            *v *= factor;
        }
        for v in self.b1.iter_mut() {
            *v *= factor;
        }
        for v in self.w2.iter_mut() {
            *v *= factor;
        }
        self.b2 *= factor;
    }
}

impl RewardNet {
    /// Seeded small-uniform initialization.
    pub fn new(input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (input_dim as f64).sqrt();
        let mut sample =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-scale..scale)).collect() };
        Self {
            input_dim,
            hidden_dim,
            w1: sample(hidden_dim * input_dim),
            b1: vec![0.0; hidden_dim],
            w2: sample(hidden_dim),
            b2: 0.0,
            revision: 0,
        }
    }

    /// All-zero parameters (a neutral baseline: raw score is 0).
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            w1: vec![0.0; hidden_dim * input_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; hidden_dim],
            b2: 0.0,
            revision: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// Raw score plus the cache needed for the backward pass.
    pub fn forward(&self, x: &[f64]) -> Result<(f64, ForwardCache), RewardError> {
        if x.len() != self.input_dim {
            return Err(RewardError::ShapeMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let mut hidden = vec![0.0f64; self.hidden_dim];
        for j in 0..self.hidden_dim {
            let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
            let z: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + self.b1[j];
            hidden[j] = z.tanh();
        }
        let raw: f64 = hidden.iter().zip(&self.w2).map(|(h, w)| h * w).sum::<f64>() + self.b2;
        Ok((
            raw,
            ForwardCache {
                x: x.to_vec(),
                hidden,
                revision: self.revision,
            },
        ))
    }

    /// Raw score only.
    pub fn score(&self, x: &[f64]) -> Result<f64, RewardError> {
        Ok(self.forward(x)?.0)
    }

    /// Exact gradients of `upstream * raw_score` with respect to every
    /// parameter, for the forward pass that produced `cache`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: f64,
    ) -> Result<NetGradients, RewardError> {
        if cache.revision != self.revision {
            return Err(RewardError::StaleCache {
                net: self.revision,
                cache: cache.revision,
            });
        }
        let mut grads = NetGradients::zeros(self.input_dim, self.hidden_dim);
        grads.b2 = upstream;
        for j in 0..self.hidden_dim {
            let h = cache.hidden[j];
            grads.w2[j] = upstream * h;
            let dz = upstream * self.w2[j] * (1.0 - h * h);
            grads.b1[j] = dz;
            for i in 0..self.input_dim {
                grads.w1[j * self.input_dim + i] = dz * cache.x[i];
            }
        }
        Ok(grads)
    }

    /// Gradient-descent step: `param -= step_size * grad`.
    pub fn apply_gradients(&mut self, grads: &NetGradients, step_size: f64) {
        for (w, g) in self.w1.iter_mut().zip(&grads.w1) {
            *w -= step_size * g;
        }
        for (b, g) in self.b1.iter_mut().zip(&grads.b1) {
            *b -= step_size * g;
        }
        for (w, g) in self.w2.iter_mut().zip(&grads.w2) {
            *w -= step_size * g;
        }
        self.b2 -= step_size * grads.b2;
        self.revision += 1;
    }

    /// Number of scalar parameters, in the flat order w1, b1, w2, b2.
    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    pub fn param(&self, idx: usize) -> f64 {
        let mut i = idx;
        if i < self.w1.len() {
            return self.w1[i];
        }
        i -= self.w1.len();
        if i < self.b1.len() {
            return self.b1[i];
        }
        i -= self.b1.len();
        if i < self.w2.len() {
            return self.w2[i];
        }
        self.b2
    }

    pub fn set_param(&mut self, idx: usize, value: f64) {
        let mut i = idx;
        if i < self.w1.len() {
            self.w1[i] = value;
        } else {
            i -= self.w1.len();
            if i < self.b1.len() {
                self.b1[i] = value;
            } else {
                i -= self.b1.len();
                if i < self.w2.len() {
                    self.w2[i] = value;
                } else {
                    self.b2 = value;
                }
            }
        }
        self.revision += 1;
    }

    /// Gradient at flat index `idx` from a [`NetGradients`].
    pub fn grad_at(&self, grads: &NetGradients, idx: usize) -> f64 {
        let mut i = idx;
        if i < self.w1.len() {
            return grads.w1[i];
        }
        i -= self.w1.len();
        if i < self.b1.len() {
            return grads.b1[i];
        }
        i -= self.b1.len();
        if i < self.w2.len() {
            return grads.w2[i];
        }
        grads.b2
    }

    pub fn to_container(&self, kind: &str) -> ParamContainer {
        let mut params = Vec::with_capacity(self.param_count());
        params.extend(&self.w1);
        params.extend(&self.b1);
        params.extend(&self.w2);
        params.push(self.b2);
        ParamContainer {
            format_version: CONTAINER_FORMAT_VERSION,
            featurizer_version: FEATURIZER_VERSION,
            kind: kind.to_string(),
            layer_sizes: vec![self.input_dim, self.hidden_dim, 1],
            params,
        }
    }

    pub fn from_container(container: &ParamContainer) -> Result<Self, String> {
        if container.layer_sizes.len() != 3 || container.layer_sizes[2] != 1 {
            return Err(format!(
                "expected layer sizes [input, hidden, 1], got {:?}",
                container.layer_sizes
            ));
        }
        let input_dim = container.layer_sizes[0];
        let hidden_dim = container.layer_sizes[1];
        let expected = hidden_dim * input_dim + hidden_dim + hidden_dim + 1;
        if container.params.len() != expected {
            return Err(format!(
                "expected {expected} parameters, got {}",
                container.params.len()
            ));
        }
        let mut net = Self::zeros(input_dim, hidden_dim);
        let p = &container.params;
        let mut offset = 0;
        net.w1
            .copy_from_slice(&p[offset..offset + hidden_dim * input_dim]);
        offset += hidden_dim * input_dim;
        net.b1.copy_from_slice(&p[offset..offset + hidden_dim]);
        offset += hidden_dim;
        net.w2.copy_from_slice(&p[offset..offset + hidden_dim]);
        offset += hidden_dim;
        net.b2 = p[offset];
        Ok(net)
    }
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

/// Versioned text container for model parameters. Shared by reward nets and
/// the policy/value nets; `kind` says which, `layer_sizes` pins the shape,
/// and parameters are row-major flat arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamContainer {
    pub format_version: u32,
    pub featurizer_version: u32,
    pub kind: String,
    pub layer_sizes: Vec<usize>,
    pub params: Vec<f64>,
}

pub fn save_container(
    container: &ParamContainer,
    path: impl AsRef<Path>,
) -> Result<(), RewardError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| RewardError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer(&mut writer, container).map_err(|e| RewardError::Checkpoint {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    writer.flush().map_err(|e| RewardError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

pub fn load_container(
    path: impl AsRef<Path>,
    expected_kind: &str,
) -> Result<ParamContainer, RewardError> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| RewardError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    let container: ParamContainer =
        serde_json::from_str(&text).map_err(|e| RewardError::Checkpoint {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let fail = |message: String| RewardError::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    if container.format_version != CONTAINER_FORMAT_VERSION {
        return Err(fail(format!(
            "format version {} unsupported (expected {CONTAINER_FORMAT_VERSION})",
            container.format_version
        )));
    }
    if container.featurizer_version != FEATURIZER_VERSION {
        return Err(fail(format!(
            "featurizer version {} does not match {FEATURIZER_VERSION}",
            container.featurizer_version
        )));
    }
    if container.kind != expected_kind {
        return Err(fail(format!(
            "kind {:?} does not match expected {expected_kind:?}",
            container.kind
        )));
    }
    Ok(container)
}

pub fn save_net(net: &RewardNet, kind: &str, path: impl AsRef<Path>) -> Result<(), RewardError> {
    save_container(&net.to_container(kind), path)
}

pub fn load_net(path: impl AsRef<Path>, kind: &str) -> Result<RewardNet, RewardError> {
    let path = path.as_ref();
    let container = load_container(path, kind)?;
    RewardNet::from_container(&container).map_err(|message| RewardError::Checkpoint {
        path: path.to_path_buf(),
        message,
    })
}

/// Write the per-epoch loss log as comma-separated text.
pub fn write_loss_log(losses: &[f64], path: impl AsRef<Path>) -> Result<(), RewardError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| RewardError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut writer = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(writer, "epoch,loss")?;
        for (epoch, loss) in losses.iter().enumerate() {
            writeln!(writer, "{epoch},{loss}")?;
        }
        writer.flush()
    };
    emit().map_err(|e| RewardError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Hyperparameters shared by IRM and PRM training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub hidden_width: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 200,
            seed: 0,
            hidden_width: 8,
            batch_size: None,
        }
    }
}

/// A trained net together with its per-epoch loss trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: RewardNet,
    pub epoch_losses: Vec<f64>,
}

/// Deterministic mini-batch gradient descent with an epoch-level monotone
/// loss guarantee: an epoch that raises the full-data loss beyond the
/// tolerance is rolled back and retried at half the step size.
fn run_descent<L, G>(
    net: &mut RewardNet,
    n_examples: usize,
    config: &TrainConfig,
    full_loss: L,
    batch_gradients: G,
) -> Result<Vec<f64>, RewardError>
where
    L: Fn(&RewardNet) -> Result<f64, RewardError>,
    G: Fn(&RewardNet, &[usize]) -> Result<(f64, NetGradients), RewardError>,
{
    use rand::seq::SliceRandom;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut lr = config.learning_rate;
    let mut losses = Vec::with_capacity(config.epochs);
    let mut prev = full_loss(net)?;
    let batch_size = config.batch_size.unwrap_or(n_examples).max(1);

    for epoch in 0..config.epochs {
        let snapshot = net.clone();
        let rng_snapshot = rng.clone();
        loop {
            let mut order: Vec<usize> = (0..n_examples).collect();
            order.shuffle(&mut rng);
            for (batch_no, chunk) in order.chunks(batch_size).enumerate() {
                let (loss, grads) = batch_gradients(net, chunk)?;
                if !loss.is_finite() {
                    return Err(RewardError::NonFiniteLoss {
                        epoch,
                        batch: batch_no,
                    });
                }
                net.apply_gradients(&grads, lr);
            }
            let after = full_loss(net)?;
            if !after.is_finite() {
                return Err(RewardError::NonFiniteLoss { epoch, batch: 0 });
            }
            if after <= prev + LOSS_TOLERANCE || lr < 1e-14 {
                prev = after;
                losses.push(after);
                break;
            }
            *net = snapshot.clone();
            rng = rng_snapshot.clone();
            lr *= 0.5;
        }
    }
    Ok(losses)
}

/// Train the instruction reward model on winner/loser feature pairs with
/// the pairwise logistic loss `-log sigmoid(s_w - s_l)`.
pub fn train_irm(
    pairs: &[(FeatureVector, FeatureVector)],
    config: &TrainConfig,
) -> Result<TrainOutcome, RewardError> {
    if pairs.is_empty() {
        return Err(RewardError::EmptyTrainingSet);
    }
    for (index, (w, l)) in pairs.iter().enumerate() {
        if !w.is_finite() || !l.is_finite() {
            return Err(RewardError::NonFiniteFeature { index });
        }
    }
    let mut net = RewardNet::new(FEATURE_DIM, config.hidden_width.max(1), config.seed);

    let full_loss = |net: &RewardNet| -> Result<f64, RewardError> {
        let mut total = 0.0;
        for (winner, loser) in pairs {
            let s_w = net.score(winner.as_slice())?;
            let s_l = net.score(loser.as_slice())?;
            total += softplus(s_l - s_w);
        }
        Ok(total / pairs.len() as f64)
    };
    let batch_gradients =
        |net: &RewardNet, chunk: &[usize]| -> Result<(f64, NetGradients), RewardError> {
            let mut grads = NetGradients::zeros(net.input_dim(), net.hidden_dim());
            let mut loss = 0.0;
            for &idx in chunk {
                let (winner, loser) = &pairs[idx];
                let (s_w, cache_w) = net.forward(winner.as_slice())?;
                let (s_l, cache_l) = net.forward(loser.as_slice())?;
                let delta = s_w - s_l;
                loss += softplus(-delta);
                let d = sigmoid(delta) - 1.0; // d loss / d s_w
                grads.add(&net.backward(&cache_w, d)?);
                grads.add(&net.backward(&cache_l, -d)?);
            }
            let scale = 1.0 / chunk.len() as f64;
            grads.scale(scale);
            Ok((loss * scale, grads))
        };

    let epoch_losses = run_descent(&mut net, pairs.len(), config, full_loss, batch_gradients)?;
    Ok(TrainOutcome { net, epoch_losses })
}

/// Train the process reward model on per-step features and boolean
/// correctness labels with binary cross-entropy on `sigmoid(raw)`.
pub fn train_prm(
    examples: &[(FeatureVector, bool)],
    config: &TrainConfig,
) -> Result<TrainOutcome, RewardError> {
    if examples.is_empty() {
        return Err(RewardError::EmptyTrainingSet);
    }
    let positives = examples.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == examples.len() {
        return Err(RewardError::SingleClass);
    }
    for (index, (x, _)) in examples.iter().enumerate() {
        if !x.is_finite() {
            return Err(RewardError::NonFiniteFeature { index });
        }
    }
    let mut net = RewardNet::new(FEATURE_DIM, config.hidden_width.max(1), config.seed);

    let full_loss = |net: &RewardNet| -> Result<f64, RewardError> {
        let mut total = 0.0;
        for (x, label) in examples {
            let raw = net.score(x.as_slice())?;
            let y = if *label { 1.0 } else { 0.0 };
            total += y * softplus(-raw) + (1.0 - y) * softplus(raw);
        }
        Ok(total / examples.len() as f64)
    };
    let batch_gradients =
        |net: &RewardNet, chunk: &[usize]| -> Result<(f64, NetGradients), RewardError> {
            let mut grads = NetGradients::zeros(net.input_dim(), net.hidden_dim());
            let mut loss = 0.0;
            for &idx in chunk {
                let (x, label) = &examples[idx];
                let y = if *label { 1.0 } else { 0.0 };
                let (raw, cache) = net.forward(x.as_slice())?;
                loss += y * softplus(-raw) + (1.0 - y) * softplus(raw);
                grads.add(&net.backward(&cache, sigmoid(raw) - y)?);
            }
            let scale = 1.0 / chunk.len() as f64;
            grads.scale(scale);
            Ok((loss * scale, grads))
        };

    let epoch_losses = run_descent(&mut net, examples.len(), config, full_loss, batch_gradients)?;
    Ok(TrainOutcome { net, epoch_losses })
}

// ---------------------------------------------------------------------------
// Scoring and the product reward
// ---------------------------------------------------------------------------

/// Instruction reward `r_i = sigmoid(raw)` in (0, 1).
pub fn irm_score(net: &RewardNet, instruction_text: &str) -> Result<f64, RewardError> {
    let features = featurize_instruction(instruction_text)?;
    Ok(sigmoid(net.score(features.as_slice())?))
}

/// Per-step probabilities `sigmoid(raw)` for every step of a solution.
pub fn prm_step_scores(
    net: &RewardNet,
    instruction_text: &str,
    solution: &Solution,
) -> Result<Vec<f64>, RewardError> {
    if solution.steps.is_empty() {
        return Err(RewardError::EmptySteps);
    }
    let mut scores = Vec::with_capacity(solution.steps.len());
    for (idx, step) in solution.steps.iter().enumerate() {
        let features = featurize_step(instruction_text, &solution.steps[..idx], step)?;
        scores.push(sigmoid(net.score(features.as_slice())?));
    }
    Ok(scores)
}

/// Answer reward `r_a`: the minimum per-step probability. One weak step
/// caps the whole solution.
pub fn prm_answer_reward(
    net: &RewardNet,
    instruction_text: &str,
    solution: &Solution,
) -> Result<f64, RewardError> {
    let scores = prm_step_scores(net, instruction_text, solution)?;
    Ok(scores.iter().copied().fold(f64::INFINITY, f64::min))
}

/// The combined reward `r = r_i * r_a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSignal {
    pub instruction_reward: f64,
    pub answer_reward: f64,
    pub total: f64,
}

/// Combine the instruction reward (in the open interval (0, 1)) and the
/// answer reward (in [0, 1]) into the exact product.
pub fn combined_reward(r_i: f64, r_a: f64) -> Result<RewardSignal, RewardError> {
    if !r_i.is_finite() || r_i <= 0.0 || r_i >= 1.0 {
        return Err(RewardError::OutOfRange {
            name: "instruction_reward",
            value: r_i,
            range: "(0, 1)",
        });
    }
    if !r_a.is_finite() || !(0.0..=1.0).contains(&r_a) {
        return Err(RewardError::OutOfRange {
            name: "answer_reward",
            value: r_a,
            range: "[0, 1]",
        });
    }
    Ok(RewardSignal {
        instruction_reward: r_i,
        answer_reward: r_a,
        total: r_i * r_a,
    })
}

// ---------------------------------------------------------------------------
// Synthetic data generators (test oracles and CLI defaults)
// ---------------------------------------------------------------------------

/// Deterministic synthetic datasets used by the test oracles and as CLI
/// fallbacks when no real ranking data is supplied.
pub mod synthetic {
    use super::*;

    /// Linearly separable winner/loser pairs: a hidden weight vector scores
    /// the winner at least `margin` above the loser. Rejection sampling
    /// keeps the generator simple and seeded.
    pub fn separable_pairs(
        count: usize,
        margin: f64,
        seed: u64,
    ) -> Vec<(FeatureVector, FeatureVector)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden: Vec<f64> = (0..FEATURE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let score =
            |x: &[f64; FEATURE_DIM]| -> f64 { x.iter().zip(&hidden).map(|(a, b)| a * b).sum() };
        let mut pairs = Vec::with_capacity(count);
        while pairs.len() < count {
            let mut a = [0.0f64; FEATURE_DIM];
            let mut b = [0.0f64; FEATURE_DIM];
            for v in a.iter_mut() {
                *v = rng.gen_range(-2.0..2.0);
            }
            for v in b.iter_mut() {
                *v = rng.gen_range(-2.0..2.0);
            }
            let (sa, sb) = (score(&a), score(&b));
            if sa >= sb + margin {
                pairs.push((FeatureVector(a), FeatureVector(b)));
            } else if sb >= sa + margin {
                pairs.push((FeatureVector(b), FeatureVector(a)));
            }
        }
        pairs
    }

    /// Fraction of pairs where the net ranks the winner above the loser.
    pub fn pairwise_accuracy(net: &RewardNet, pairs: &[(FeatureVector, FeatureVector)]) -> f64 {
        if pairs.is_empty() {
            return 0.0;
        }
        let correct = pairs
            .iter()
            .filter(|(w, l)| {
                net.score(w.as_slice()).unwrap_or(f64::NEG_INFINITY)
                    > net.score(l.as_slice()).unwrap_or(f64::INFINITY)
            })
            .count();
        correct as f64 / pairs.len() as f64
    }

    /// Fraction of labeled steps the net classifies correctly at the 0.5
    /// threshold.
    pub fn classification_accuracy(net: &RewardNet, examples: &[(FeatureVector, bool)]) -> f64 {
        if examples.is_empty() {
            return 0.0;
        }
        let correct = examples
            .iter()
            .filter(|(x, y)| {
                let p = sigmoid(net.score(x.as_slice()).unwrap_or(0.0));
                (p > 0.5) == *y
            })
            .count();
        correct as f64 / examples.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn instruction_features_match_hand_counts() {
        let f = featurize_instruction("What is 2+3?").unwrap();
        assert_eq!(f.0[0], 1.0, "question-mark flag");
        assert_eq!(f.0[3], 2.0, "numeric token count");
        assert_eq!(f.0[8], 1.0, "ends with question");
    }

    #[test]
    fn instruction_features_reject_empty() {
        assert!(matches!(
            featurize_instruction("   "),
            Err(RewardError::EmptyText)
        ));
    }

    #[test]
    fn instruction_features_are_deterministic() {
        let a = featurize_instruction("Add 5 apples to 3 baskets.").unwrap();
        let b = featurize_instruction("Add 5 apples to 3 baskets.").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn step_arithmetic_flag_true_equation() {
        let f = featurize_step("problem", &[], "That gives 6 * $60 = $360 in revenue.").unwrap();
        assert_eq!(f.0[0], 1.0);
    }

    #[test]
    fn step_arithmetic_flag_false_equation() {
        let f = featurize_step("problem", &[], "We see 2+2 = 5 here.").unwrap();
        assert_eq!(f.0[0], 0.0);
    }

    #[test]
    fn step_without_equations_is_vacuously_consistent() {
        let f = featurize_step("problem", &[], "Just restating the goal.").unwrap();
        assert_eq!(f.0[0], 1.0);
    }

    #[test]
    fn step_position_fraction() {
        let f = featurize_step("p", &[], "only step").unwrap();
        assert_eq!(f.0[4], 0.0);
        let priors = vec!["a".to_string(), "b".to_string()];
        let f = featurize_step("p", &priors, "third step").unwrap();
        assert!((f.0[4] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn step_referenced_numbers_count_known_values() {
        let f = featurize_step(
            "Start with 3. Multiply by 4.",
            &["Step 1: 3 * 4 = 12.".to_string()],
            "Step 2: take 12 and 4 and 99.",
        )
        .unwrap();
        // 12 and 4 are known; 99 is novel
        assert_eq!(f.0[1], 2.0);
    }

    #[test]
    fn zero_net_outputs_bias() {
        let mut net = RewardNet::zeros(4, 3);
        net.set_param(net.param_count() - 1, 1.25);
        let (raw, _) = net.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(raw, 1.25);
    }

    #[test]
    fn tiny_net_closed_form() {
        let mut net = RewardNet::zeros(1, 1);
        net.set_param(0, 1.0); // w1
        net.set_param(2, 0.7); // w2
        let (raw, _) = net.forward(&[0.5]).unwrap();
        assert!((raw - 0.5f64.tanh() * 0.7).abs() < 1e-15);
    }

    #[test]
    fn forward_is_deterministic() {
        let net = RewardNet::new(FEATURE_DIM, 8, 42);
        let x: Vec<f64> = (0..FEATURE_DIM).map(|i| i as f64 * 0.1).collect();
        assert_eq!(net.score(&x).unwrap(), net.score(&x).unwrap());
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let net = RewardNet::zeros(4, 2);
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(RewardError::ShapeMismatch {
                expected: 4,
                got: 2
            })
        ));
    }

    #[test]
    fn backward_zero_upstream_gives_zero_gradients() {
        let net = RewardNet::new(5, 3, 7);
        let (_, cache) = net.forward(&[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let grads = net.backward(&cache, 0.0).unwrap();
        assert!(grads.w1.iter().all(|g| *g == 0.0));
        assert!(grads.b1.iter().all(|g| *g == 0.0));
        assert!(grads.w2.iter().all(|g| *g == 0.0));
        assert_eq!(grads.b2, 0.0);
    }

    #[test]
    fn backward_rejects_stale_cache() {
        let mut net = RewardNet::new(3, 2, 1);
        let (_, cache) = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        net.set_param(0, 9.0);
        assert!(matches!(
            net.backward(&cache, 1.0),
            Err(RewardError::StaleCache { .. })
        ));
    }

    #[test]
    fn backward_matches_hand_chain_rule_h1() {
        // single hidden unit: raw = w2 * tanh(w1*x + b1) + b2
        let mut net = RewardNet::zeros(1, 1);
        let (w1, b1, w2) = (0.8, -0.2, 1.3);
        net.set_param(0, w1);
        net.set_param(1, b1);
        net.set_param(2, w2);
        let x = 0.4;
        let (_, cache) = net.forward(&[x]).unwrap();
        let grads = net.backward(&cache, 1.0).unwrap();
        let t = (w1 * x + b1).tanh();
        let dt = 1.0 - t * t;
        assert!((grads.w2[0] - t).abs() < 1e-14);
        assert!((grads.b2 - 1.0).abs() < 1e-14);
        assert!((grads.b1[0] - w2 * dt).abs() < 1e-14);
        assert!((grads.w1[0] - w2 * dt * x).abs() < 1e-14);
    }

    /// Central finite differences of the raw score for one parameter.
    fn numeric_grad(net: &RewardNet, x: &[f64], idx: usize, h: f64) -> f64 {
        let mut plus = net.clone();
        plus.set_param(idx, net.param(idx) + h);
        let mut minus = net.clone();
        minus.set_param(idx, net.param(idx) - h);
        (plus.score(x).unwrap() - minus.score(x).unwrap()) / (2.0 * h)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = RewardNet::new(6, 4, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..6)
            .map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0))
            .collect();
        let (_, cache) = net.forward(&x).unwrap();
        let grads = net.backward(&cache, 1.0).unwrap();
        for idx in 0..net.param_count() {
            let numeric = numeric_grad(&net, &x, idx, 1e-5);
            let analytic = net.grad_at(&grads, idx);
            let rel = (analytic - numeric).abs() / numeric.abs().max(1.0);
            assert!(rel < 1e-4, "param {idx}: {analytic} vs {numeric}");
        }
    }

    #[test]
    fn irm_training_separates_synthetic_pairs() {
        let pairs = synthetic::separable_pairs(800, 1.0, 5);
        let (train, held_out) = pairs.split_at(400);
        let config = TrainConfig {
            epochs: 120,
            ..TrainConfig::default()
        };
        let outcome = train_irm(train, &config).unwrap();
        let accuracy = synthetic::pairwise_accuracy(&outcome.net, held_out);
        assert!(accuracy >= 0.95, "held-out accuracy {accuracy}");
    }

    #[test]
    fn irm_single_pair_converges() {
        let pairs = synthetic::separable_pairs(1, 1.0, 9);
        let repeated: Vec<_> = std::iter::repeat(pairs[0].clone()).take(16).collect();
        let config = TrainConfig {
            epochs: 300,
            ..TrainConfig::default()
        };
        let outcome = train_irm(&repeated, &config).unwrap();
        let s_w = outcome.net.score(repeated[0].0.as_slice()).unwrap();
        let s_l = outcome.net.score(repeated[0].1.as_slice()).unwrap();
        assert!(sigmoid(s_w - s_l) > 0.9);
    }

    #[test]
    fn irm_rejects_empty_pairs() {
        assert!(matches!(
            train_irm(&[], &TrainConfig::default()),
            Err(RewardError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn irm_epoch_loss_is_monotone_even_with_big_steps() {
        let pairs = synthetic::separable_pairs(64, 0.5, 2);
        let config = TrainConfig {
            learning_rate: 50.0, // forces backtracking
            epochs: 40,
            ..TrainConfig::default()
        };
        let outcome = train_irm(&pairs, &config).unwrap();
        for w in outcome.epoch_losses.windows(2) {
            assert!(
                w[1] <= w[0] + LOSS_TOLERANCE,
                "loss rose: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn irm_training_is_bit_reproducible() {
        let pairs = synthetic::separable_pairs(64, 1.0, 4);
        let config = TrainConfig {
            epochs: 30,
            batch_size: Some(16),
            ..TrainConfig::default()
        };
        let a = train_irm(&pairs, &config).unwrap();
        let b = train_irm(&pairs, &config).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn prm_learns_perfectly_correlated_feature() {
        let mut examples = Vec::new();
        for i in 0..200 {
            let mut f = [0.0; FEATURE_DIM];
            let label = i % 2 == 0;
            f[0] = if label { 1.0 } else { 0.0 };
            examples.push((FeatureVector(f), label));
        }
        let config = TrainConfig {
            epochs: 300,
            ..TrainConfig::default()
        };
        let outcome = train_prm(&examples, &config).unwrap();
        let accuracy = synthetic::classification_accuracy(&outcome.net, &examples);
        assert!(accuracy >= 0.99, "accuracy {accuracy}");
    }

    #[test]
    fn prm_rejects_single_class() {
        let f = FeatureVector([0.0; FEATURE_DIM]);
        let examples = vec![(f.clone(), true), (f, true)];
        assert!(matches!(
            train_prm(&examples, &TrainConfig::default()),
            Err(RewardError::SingleClass)
        ));
        assert!(matches!(
            train_prm(&[], &TrainConfig::default()),
            Err(RewardError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn irm_score_is_sigmoid_of_raw() {
        let net = RewardNet::zeros(FEATURE_DIM, 4);
        assert_eq!(irm_score(&net, "What is 1+1?").unwrap(), 0.5);
        let mut saturated = RewardNet::zeros(FEATURE_DIM, 4);
        saturated.set_param(saturated.param_count() - 1, 50.0);
        let score = irm_score(&saturated, "What is 1+1?").unwrap();
        assert!((1.0 - score).abs() < 1e-9);
    }

    #[test]
    fn sigmoid_preserves_argmax() {
        let raws: [f64; 5] = [0.3, -1.2, 2.5, 0.9, 2.4999];
        let argmax_raw = raws
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let argmax_sig = raws
            .iter()
            .map(|r| sigmoid(*r))
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        assert_eq!(argmax_raw, argmax_sig);
    }

    #[test]
    fn answer_reward_is_min_over_steps() {
        let net = RewardNet::new(FEATURE_DIM, 4, 13);
        let solution = Solution::from_raw(
            "p1",
            "Step 1: 2 + 2 = 4.\nStep 2: 4 * 3 = 12.\nStep 3: 12 - 5 = 7.\nThe answer is: 7.",
        )
        .unwrap();
        let scores = prm_step_scores(&net, "Start with 2.", &solution).unwrap();
        let reward = prm_answer_reward(&net, "Start with 2.", &solution).unwrap();
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(reward, min);
        assert!(scores.iter().all(|s| reward <= *s));
    }

    #[test]
    fn answer_reward_single_step_equals_that_step() {
        let net = RewardNet::new(FEATURE_DIM, 4, 13);
        let solution = Solution::from_raw("p1", "The answer is: 3.").unwrap();
        let scores = prm_step_scores(&net, "Start with 3.", &solution).unwrap();
        let reward = prm_answer_reward(&net, "Start with 3.", &solution).unwrap();
        assert_eq!(scores.len(), 1);
        assert_eq!(reward, scores[0]);
    }

    #[test]
    fn answer_reward_rejects_empty_steps() {
        let net = RewardNet::zeros(FEATURE_DIM, 2);
        let solution = Solution {
            instruction_id: "x".into(),
            steps: vec![],
            final_answer: None,
            raw_text: String::new(),
        };
        assert!(matches!(
            prm_answer_reward(&net, "p", &solution),
            Err(RewardError::EmptySteps)
        ));
    }

    #[test]
    fn combined_reward_cases() {
        assert_eq!(combined_reward(0.9999, 1.0).unwrap().total, 0.9999);
        assert_eq!(combined_reward(0.8, 0.5).unwrap().total, 0.4);
        assert_eq!(combined_reward(0.3, 0.0).unwrap().total, 0.0);
        assert!(combined_reward(0.0, 0.5).is_err());
        assert!(combined_reward(1.0, 0.5).is_err());
        assert!(combined_reward(0.5, 1.5).is_err());
    }

    #[test]
    fn aspect_scores_stay_in_range() {
        for text in ["What is 2+3?", "Compute many things.", "x"] {
            let scores = aspect_scores(text).unwrap();
            for v in [scores.definition, scores.precision, scores.integrity] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn step_label_validates_index() {
        let solution = Solution::from_raw("p", "The answer is: 1.").unwrap();
        assert!(StepLabel {
            step_index: 0,
            correct: true
        }
        .validate_against(&solution)
        .is_ok());
        assert!(StepLabel {
            step_index: 5,
            correct: true
        }
        .validate_against(&solution)
        .is_err());
    }

    #[test]
    fn checkpoint_roundtrip_and_version_reject() {
        let net = RewardNet::new(FEATURE_DIM, 6, 21);
        let file = tempfile::NamedTempFile::new().unwrap();
        save_net(&net, "irm", file.path()).unwrap();
        let loaded = load_net(file.path(), "irm").unwrap();
        assert_eq!(net.to_container("irm"), loaded.to_container("irm"));
        assert!(load_net(file.path(), "prm").is_err());

        let mut container = net.to_container("irm");
        container.featurizer_version += 1;
        let file2 = tempfile::NamedTempFile::new().unwrap();
        save_container(&container, file2.path()).unwrap();
        assert!(matches!(
            load_net(file2.path(), "irm"),
            Err(RewardError::Checkpoint { .. })
        ));
    }

    #[test]
    fn loss_log_is_csv() {
        let file = tempfile::NamedTempFile::new().unwrap();
        write_loss_log(&[0.5, 0.25], file.path()).unwrap();
        let text = std::fs::read_to_string(file.path()).unwrap();
        assert_eq!(text, "epoch,loss\n0,0.5\n1,0.25\n");
    }

    proptest! {
        #[test]
        fn product_reward_properties(
            r_i in 1e-9f64..0.999_999_999,
            r_a in 0.0f64..=1.0,
            bump in 0.0f64..0.5,
        ) {
            let signal = combined_reward(r_i, r_a).unwrap();
            prop_assert_eq!(signal.total, r_i * r_a);
            // monotone in each argument
            let bumped_a = (r_a + bump).min(1.0);
            prop_assert!(combined_reward(r_i, bumped_a).unwrap().total >= signal.total);
            let bumped_i = (r_i + bump).min(0.999_999_999);
            prop_assert!(combined_reward(bumped_i, r_a).unwrap().total >= signal.total);
            // annihilation
            prop_assert_eq!(combined_reward(r_i, 0.0).unwrap().total, 0.0);
        }

        #[test]
        fn sigmoid_is_bounded_and_monotone(a in -100.0f64..100.0, b in -100.0f64..100.0) {
            let (sa, sb) = (sigmoid(a), sigmoid(b));
            prop_assert!((0.0..=1.0).contains(&sa));
            if a < b {
                prop_assert!(sa <= sb);
            }
        }
    }
}
