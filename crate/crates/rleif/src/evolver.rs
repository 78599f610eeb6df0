//! Instruction evolution: the downward/upward operator lines, pluggable
//! generator backends (a deterministic mock and an HTTP remote), multi-turn
//! round driving, and ranking-data construction for the instruction reward
//! model.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_text, CorpusError, Instruction, Lineage};
use crate::par;
use crate::rewards::{self, FeatureVector, RewardError, RewardNet};
use crate::seeding::{derive_seed, stable_hash};

/// Environment variable holding the remote backend's bearer token.
pub const BACKEND_TOKEN_ENV: &str = "RLEIF_BACKEND_TOKEN";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("http status {status} from {url}")]
    HttpStatus { status: u16, url: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("bearer token missing: set {0}")]
    MissingToken(&'static str),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("prompt does not match any known evolution template")]
    UnrecognizedPrompt,
    #[error("ranking failed: {0}")]
    RankFailed(String),
}

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("variant {variant:?} is not an operator of the {line:?} line")]
    VariantLineMismatch {
        line: EvolLine,
        variant: EvolVariant,
    },
    #[error("template must contain the {{instruction}} slot exactly once, found {count}")]
    BadTemplate { count: usize },
    #[error("backend {backend}: {source}")]
    Backend {
        backend: String,
        #[source]
        source: BackendError,
    },
    #[error("backend {backend} returned empty output")]
    EmptyOutput { backend: String },
    #[error("evolved text duplicates its parent after normalization")]
    DuplicateOfParent,
    #[error("evolved text duplicates an existing corpus entry")]
    DuplicateInCorpus,
    #[error("rejected by the acceptance filter")]
    FilteredOut,
    #[error("k_per_backend = {0} is outside [2, 4]")]
    InvalidK(u32),
    #[error("ranking record: {0}")]
    InvalidRecord(String),
    #[error("no operators supplied")]
    NoOperators,
    #[error("no backends supplied")]
    NoBackends,
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

/// The two evolution lines: downward makes questions easier, upward makes
/// them harder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvolLine {
    Downward,
    Upward,
}

/// The five operator variants across both lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvolVariant {
    LowerDifficulty,
    EasierNewTopic,
    AddConstraints,
    Concretize,
    IncreaseReasoning,
}

impl EvolVariant {
    pub fn line(self) -> EvolLine {
        match self {
            EvolVariant::LowerDifficulty | EvolVariant::EasierNewTopic => EvolLine::Downward,
            _ => EvolLine::Upward,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            EvolVariant::LowerDifficulty => "lower-difficulty",
            EvolVariant::EasierNewTopic => "easier-new-topic",
            EvolVariant::AddConstraints => "add-constraints",
            EvolVariant::Concretize => "concretize",
            EvolVariant::IncreaseReasoning => "increase-reasoning",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "lower-difficulty" => EvolVariant::LowerDifficulty,
            "easier-new-topic" => EvolVariant::EasierNewTopic,
            "add-constraints" => EvolVariant::AddConstraints,
            "concretize" => EvolVariant::Concretize,
            "increase-reasoning" => EvolVariant::IncreaseReasoning,
            _ => return None,
        })
    }

    pub const ALL: [EvolVariant; 5] = [
        EvolVariant::AddConstraints,
        EvolVariant::Concretize,
        EvolVariant::IncreaseReasoning,
        EvolVariant::LowerDifficulty,
        EvolVariant::EasierNewTopic,
    ];

    fn template(self) -> &'static str {
        match self {
            EvolVariant::AddConstraints => iterate_template(
                "Rewrite the problem below into a harder version by adding one more constraint \
                 that changes the final answer.",
            ),
            EvolVariant::Concretize => iterate_template(
                "Rewrite the problem below into a harder version by concretizing abstract \
                 quantities into specific objects and amounts.",
            ),
            EvolVariant::IncreaseReasoning => iterate_template(
                "Rewrite the problem below into a harder version that needs more reasoning \
                 steps, for example by splitting a given quantity into parts that must be \
                 combined first.",
            ),
            EvolVariant::LowerDifficulty => iterate_template(
                "Rewrite the problem below into an easier version with smaller numbers so it \
                 takes fewer steps to solve.",
            ),
            EvolVariant::EasierNewTopic => iterate_template(
                "Rewrite the problem below into a new, easier problem about a different \
                 everyday topic.",
            ),
        }
    }
}

// The five task sentences differ; the surrounding frame is shared.
fn iterate_template(task: &'static str) -> &'static str {
    // Templates are compile-time constants; build them once.
    static CACHE: LazyLock<std::sync::Mutex<BTreeMap<&'static str, &'static str>>> =
        LazyLock::new(|| std::sync::Mutex::new(BTreeMap::new()));
    let mut cache = CACHE.lock().unwrap();
    cache.entry(task).or_insert_with(|| {
        Box::leak(
            format!(
                "{task} Keep it self-contained and solvable.\n\nProblem:\n{{instruction}}\n\nRewritten problem:"
            )
            .into_boxed_str(),
        )
    })
}

/// One evolution operator: a line, a variant legal for that line, and a
/// prompt template with a single `{instruction}` slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvolOperator {
    line: EvolLine,
    variant: EvolVariant,
    prompt_template: String,
}

impl EvolOperator {
    pub fn new(
        line: EvolLine,
        variant: EvolVariant,
        prompt_template: impl Into<String>,
    ) -> Result<Self, EvolveError> {
        if variant.line() != line {
            return Err(EvolveError::VariantLineMismatch { line, variant });
        }
        let prompt_template = prompt_template.into();
        let count = prompt_template.matches("{instruction}").count();
        if count != 1 {
            return Err(EvolveError::BadTemplate { count });
        }
        Ok(Self {
            line,
            variant,
            prompt_template,
        })
    }

    /// The built-in operator for a variant.
    pub fn standard(variant: EvolVariant) -> Self {
        Self::new(variant.line(), variant, variant.template())
            .expect("standard templates are valid")
    }

    /// All five built-in operators, upward line first.
    pub fn standard_set() -> Vec<Self> {
        EvolVariant::ALL
            .iter()
            .map(|v| Self::standard(*v))
            .collect()
    }

    pub fn line(&self) -> EvolLine {
        self.line
    }

    pub fn variant(&self) -> EvolVariant {
        self.variant
    }

    pub fn tag(&self) -> &'static str {
        self.variant.tag()
    }
}

/// Substitute the instruction into the operator's template.
pub fn render_evolution_prompt(op: &EvolOperator, instruction: &Instruction) -> String {
    op.prompt_template
        .replacen("{instruction}", &instruction.text, 1)
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

/// A text generator: the same `(prompt, seed)` must produce the same output
/// for mock backends; remote backends make no determinism promise.
pub trait GeneratorBackend: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, prompt: &str, seed: u64) -> Result<String, BackendError>;
}

/// Backend built from a closure; handy for tests and fixtures.
pub struct FnBackend<F> {
    name: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&str, u64) -> Result<String, BackendError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl<F> GeneratorBackend for FnBackend<F>
where
    F: Fn(&str, u64) -> Result<String, BackendError> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, prompt: &str, seed: u64) -> Result<String, BackendError> {
        (self.f)(prompt, seed)
    }
}

static INT_TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b\d+\b").unwrap());

const MOCK_NOUNS: [&str; 6] = ["apples", "marbles", "coins", "pencils", "stickers", "books"];

/// Deterministic mock evolution backend.
///
/// It recognizes the standard prompt templates, pulls the embedded problem
/// back out, and applies a seeded text transformation per operator:
/// add-constraints appends a hash-derived constraint clause, concretize
/// attaches an object noun to each bare integer, increase-reasoning splits
/// the first integer into a two-part sum, lower-difficulty halves the
/// largest integer, and easier-new-topic substitutes nouns from a fixed
/// wordlist keyed by the seed.
pub struct MockEvolBackend {
    name: String,
    salt: u64,
}

impl MockEvolBackend {
    pub fn new() -> Self {
        Self::named("mock-evol", 0)
    }

    /// A distinctly named/salted instance, for simulating two different
    /// generator models.
    pub fn named(name: impl Into<String>, salt: u64) -> Self {
        Self {
            name: name.into(),
            salt,
        }
    }

    fn parse_prompt(prompt: &str) -> Result<(EvolVariant, &str), BackendError> {
        let variant = if prompt.contains("adding one more constraint") {
            EvolVariant::AddConstraints
        } else if prompt.contains("concretizing abstract") {
            EvolVariant::Concretize
        } else if prompt.contains("more reasoning steps") {
            EvolVariant::IncreaseReasoning
        } else if prompt.contains("easier version with smaller numbers") {
            EvolVariant::LowerDifficulty
        } else if prompt.contains("different everyday topic") {
            EvolVariant::EasierNewTopic
        } else {
            return Err(BackendError::UnrecognizedPrompt);
        };
        let start = prompt
            .find("\n\nProblem:\n")
            .ok_or(BackendError::UnrecognizedPrompt)?
            + "\n\nProblem:\n".len();
        let end = prompt
            .rfind("\n\nRewritten problem:")
            .ok_or(BackendError::UnrecognizedPrompt)?;
        if end < start {
            return Err(BackendError::UnrecognizedPrompt);
        }
        Ok((variant, &prompt[start..end]))
    }

    fn transform(&self, variant: EvolVariant, text: &str, seed: u64) -> String {
        let h = stable_hash(&[
            text.as_bytes(),
            &seed.to_le_bytes(),
            &self.salt.to_le_bytes(),
        ]);
        match variant {
            EvolVariant::AddConstraints => {
                let extra = 2 + h % 9;
                format!("{text} Then add {extra} more to the result and report that total.")
            }
            EvolVariant::Concretize => {
                let noun = MOCK_NOUNS[(h % MOCK_NOUNS.len() as u64) as usize];
                if INT_TOKEN_RE.is_match(text) {
                    INT_TOKEN_RE
                        .replace_all(text, |caps: &regex::Captures| {
                            format!("{} {noun}", &caps[0])
                        })
                        .into_owned()
                } else {
                    format!("{text} Picture the scenario with 3 {noun}.")
                }
            }
            EvolVariant::IncreaseReasoning => {
                if let Some(m) = INT_TOKEN_RE.find(text) {
                    let n: u64 = m.as_str().parse().unwrap_or(0);
                    let a = n / 2;
                    let b = n - a;
                    format!("{}({a} + {b}){}", &text[..m.start()], &text[m.end()..])
                } else {
                    format!("{text} Derive every intermediate quantity before the final answer.")
                }
            }
            EvolVariant::LowerDifficulty => {
                let largest = INT_TOKEN_RE
                    .find_iter(text)
                    .filter_map(|m| m.as_str().parse::<u64>().ok().map(|v| (v, m.range())))
                    .max_by_key(|(v, _)| *v);
                match largest {
                    Some((v, range)) if v >= 2 => {
                        let halved = v / 2;
                        format!("{}{halved}{}", &text[..range.start], &text[range.end..])
                    }
                    _ => format!("Here is an easier warm-up: {text}"),
                }
            }
            EvolVariant::EasierNewTopic => {
                let target = MOCK_NOUNS[(h % MOCK_NOUNS.len() as u64) as usize];
                let mut replaced = false;
                let mut out = text.to_string();
                for noun in MOCK_NOUNS {
                    if noun != target && out.contains(noun) {
                        out = out.replace(noun, target);
                        replaced = true;
                    }
                }
                if replaced {
                    out
                } else {
                    format!("{out} Retell it with {target} instead.")
                }
            }
        }
    }
}

impl Default for MockEvolBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl GeneratorBackend for MockEvolBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, prompt: &str, seed: u64) -> Result<String, BackendError> {
        let (variant, text) = Self::parse_prompt(prompt)?;
        Ok(self.transform(variant, text.trim(), seed))
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    seed: u64,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

/// HTTP backend: POST `{"prompt", "seed"}` to the configured URL, expect
/// `{"text"}` back. Bearer token comes from [`BACKEND_TOKEN_ENV`]; timeout
/// and retry count come from the run configuration.
pub struct RemoteBackend {
    name: String,
    url: String,
    token: String,
    retries: u32,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    /// Token read from the environment.
    pub fn new(
        url: impl Into<String>,
        timeout: Duration,
        retries: u32,
    ) -> Result<Self, BackendError> {
        let token = std::env::var(BACKEND_TOKEN_ENV)
            .map_err(|_| BackendError::MissingToken(BACKEND_TOKEN_ENV))?;
        Self::with_token(url, token, timeout, retries)
    }

    /// Token supplied directly (tests use this to avoid process-global env
    /// mutation).
    pub fn with_token(
        url: impl Into<String>,
        token: impl Into<String>,
        timeout: Duration,
        retries: u32,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            name: "remote".into(),
            url: url.into(),
            token: token.into(),
            retries,
            client,
        })
    }
}

impl GeneratorBackend for RemoteBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, prompt: &str, seed: u64) -> Result<String, BackendError> {
        let body = GenerateRequest { prompt, seed };
        let mut last_err = BackendError::Transport("no attempts made".into());
        for _attempt in 0..=self.retries {
            let result = self
                .client
                .post(&self.url)
                .bearer_auth(&self.token)
                .json(&body)
                .send();
            match result {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        return response
                            .json::<GenerateResponse>()
                            .map(|r| r.text)
                            .map_err(|e| BackendError::MalformedResponse(e.to_string()));
                    }
                    last_err = BackendError::HttpStatus {
                        status: status.as_u16(),
                        url: self.url.clone(),
                    };
                    // client errors will not succeed on retry
                    if status.is_client_error() {
                        return Err(last_err);
                    }
                }
                Err(e) => last_err = BackendError::Transport(e.to_string()),
            }
        }
        Err(last_err)
    }
}

// ---------------------------------------------------------------------------
// Evolution driving
// ---------------------------------------------------------------------------

/// Gate on evolved instructions before they enter the corpus. Off by
/// default; the IRM-threshold variant implements the optional score gate.
pub enum AcceptancePolicy<'a> {
    AcceptAll,
    IrmThreshold { net: &'a RewardNet, min_score: f64 },
}

impl AcceptancePolicy<'_> {
    fn accepts(&self, text: &str) -> Result<bool, RewardError> {
        match self {
            AcceptancePolicy::AcceptAll => Ok(true),
            AcceptancePolicy::IrmThreshold { net, min_score } => {
                Ok(rewards::irm_score(net, text)? >= *min_score)
            }
        }
    }
}

/// Evolve one instruction through one operator and backend. The child gets
/// a fresh deterministic id and lineage `(parent, round, operator tag)`;
/// empty output or output equal to the parent (after corpus normalization)
/// is a rejection.
pub fn evolve_one(
    instruction: &Instruction,
    op: &EvolOperator,
    backend: &dyn GeneratorBackend,
    round_index: u32,
    seed: u64,
) -> Result<Instruction, EvolveError> {
    let prompt = render_evolution_prompt(op, instruction);
    let output = backend
        .generate(&prompt, seed)
        .map_err(|source| EvolveError::Backend {
            backend: backend.name().to_string(),
            source,
        })?;
    let text = output.trim();
    if text.is_empty() {
        return Err(EvolveError::EmptyOutput {
            backend: backend.name().to_string(),
        });
    }
    if normalize_text(text) == normalize_text(&instruction.text) {
        return Err(EvolveError::DuplicateOfParent);
    }
    let id = format!("{}.r{}.{}", instruction.id, round_index, op.tag());
    let child = Instruction::new(
        id,
        text,
        instruction.source,
        instruction.subtopic,
        instruction.difficulty_level,
        Some(Lineage {
            parent_id: instruction.id.clone(),
            round_index,
            operator_tag: op.tag().to_string(),
        }),
    )?;
    Ok(child)
}

/// Accept/reject tallies for one evolution round.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RoundCounts {
    pub accepted: usize,
    pub rejected: usize,
    /// operator tag -> (accepted, rejected)
    pub per_operator: BTreeMap<String, (usize, usize)>,
}

/// Output of one round: the accepted instructions plus the tallies.
/// `accepted + rejected` always equals the input size.
#[derive(Debug)]
pub struct RoundOutcome {
    pub accepted: Vec<Instruction>,
    pub counts: RoundCounts,
}

/// Run one evolution round over `inputs`.
///
/// Instruction `i` is paired with operator `(i + round_index) % |operators|`
/// and backend `(i + round_index) % |backends|`. Generation fans out with a
/// bounded, order-preserving parallel map and per-item derived seeds;
/// dedup against `known_texts` (the whole corpus so far) runs afterwards in
/// input order, so results never depend on completion order.
pub fn evolve_round(
    inputs: &[Instruction],
    operators: &[EvolOperator],
    backends: &[&dyn GeneratorBackend],
    round_index: u32,
    seed: u64,
    acceptance: &AcceptancePolicy<'_>,
    known_texts: &mut HashSet<String>,
    max_in_flight: usize,
) -> Result<RoundOutcome, EvolveError> {
    if operators.is_empty() {
        return Err(EvolveError::NoOperators);
    }
    if backends.is_empty() {
        return Err(EvolveError::NoBackends);
    }
    let mut counts = RoundCounts::default();
    for op in operators {
        counts.per_operator.insert(op.tag().to_string(), (0, 0));
    }

    let generated: Vec<(usize, Result<Instruction, EvolveError>)> =
        par::map_ordered_bounded(inputs, max_in_flight, |idx, instruction| {
            let op_idx = (idx + round_index as usize) % operators.len();
            let backend_idx = (idx + round_index as usize) % backends.len();
            let item_seed = derive_seed(seed, "evolve", (round_index as u64) << 32 | idx as u64);
            let result = evolve_one(
                instruction,
                &operators[op_idx],
                backends[backend_idx],
                round_index,
                item_seed,
            );
            (op_idx, result)
        });

    let mut accepted = Vec::new();
    for (op_idx, result) in generated {
        let tag = operators[op_idx].tag().to_string();
        let entry = counts.per_operator.entry(tag).or_insert((0, 0));
        let verdict = result.and_then(|child| {
            if !known_texts.insert(normalize_text(&child.text)) {
                return Err(EvolveError::DuplicateInCorpus);
            }
            if !acceptance.accepts(&child.text)? {
                return Err(EvolveError::FilteredOut);
            }
            Ok(child)
        });
        match verdict {
            Ok(child) => {
                entry.0 += 1;
                counts.accepted += 1;
                accepted.push(child);
            }
            Err(err) => {
                entry.1 += 1;
                counts.rejected += 1;
                log::debug!("round {round_index}: rejection: {err}");
            }
        }
    }
    Ok(RoundOutcome { accepted, counts })
}

// ---------------------------------------------------------------------------
// IRM ranking data
// ---------------------------------------------------------------------------

/// One candidate instruction with provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub backend_name: String,
    pub operator_tag: String,
}

/// A seed instruction, 4-8 evolved candidates, and a quality ranking
/// (permutation of candidate indices, best first).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingRecord {
    seed_instruction_id: String,
    candidates: Vec<Candidate>,
    ranking: Vec<usize>,
}

impl RankingRecord {
    pub fn new(
        seed_instruction_id: impl Into<String>,
        candidates: Vec<Candidate>,
        ranking: Vec<usize>,
    ) -> Result<Self, EvolveError> {
        if !(4..=8).contains(&candidates.len()) {
            return Err(EvolveError::InvalidRecord(format!(
                "{} candidates, need 4-8",
                candidates.len()
            )));
        }
        if ranking.len() != candidates.len() {
            return Err(EvolveError::InvalidRecord(format!(
                "ranking length {} != candidate count {}",
                ranking.len(),
                candidates.len()
            )));
        }
        let mut seen = vec![false; candidates.len()];
        for &idx in &ranking {
            if idx >= candidates.len() || seen[idx] {
                return Err(EvolveError::InvalidRecord(format!(
                    "ranking is not a permutation: {ranking:?}"
                )));
            }
            seen[idx] = true;
        }
        Ok(Self {
            seed_instruction_id: seed_instruction_id.into(),
            candidates,
            ranking,
        })
    }

    pub fn seed_instruction_id(&self) -> &str {
        &self.seed_instruction_id
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn ranking(&self) -> &[usize] {
        &self.ranking
    }
}

/// Produces a quality ranking over candidates, best first.
pub trait Ranker: Send + Sync {
    fn name(&self) -> &str;
    fn rank(&self, candidates: &[Candidate]) -> Result<Vec<usize>, BackendError>;
}

/// Ranks by descending text length, ties by candidate index. Deterministic
/// mock stand-in for a judge model.
pub struct LengthRanker;

impl Ranker for LengthRanker {
    fn name(&self) -> &str {
        "length"
    }

    fn rank(&self, candidates: &[Candidate]) -> Result<Vec<usize>, BackendError> {
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by_key(|&i| (std::cmp::Reverse(candidates[i].text.chars().count()), i));
        Ok(order)
    }
}

/// Ranks by descending IRM score from a trained net.
pub struct IrmRanker<'a> {
    pub net: &'a RewardNet,
}

impl Ranker for IrmRanker<'_> {
    fn name(&self) -> &str {
        "irm"
    }

    fn rank(&self, candidates: &[Candidate]) -> Result<Vec<usize>, BackendError> {
        let mut scored = Vec::with_capacity(candidates.len());
        for (i, c) in candidates.iter().enumerate() {
            let score = rewards::irm_score(self.net, &c.text)
                .map_err(|e| BackendError::RankFailed(e.to_string()))?;
            scored.push((i, score));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored.into_iter().map(|(i, _)| i).collect())
    }
}

/// Build IRM ranking data: per seed instruction, `k` evolved candidates
/// from each of the two backends (so 4-8 total), ranked by the ranker.
/// Backend or ranker failures skip that seed and continue.
pub fn build_irm_ranking_data(
    seed_instructions: &[Instruction],
    backend_a: &dyn GeneratorBackend,
    backend_b: &dyn GeneratorBackend,
    ranker: &dyn Ranker,
    k_per_backend: u32,
    seed: u64,
) -> Result<Vec<RankingRecord>, EvolveError> {
    if !(2..=4).contains(&k_per_backend) {
        return Err(EvolveError::InvalidK(k_per_backend));
    }
    let operators = EvolOperator::standard_set();
    let mut records = Vec::with_capacity(seed_instructions.len());
    for (idx, instruction) in seed_instructions.iter().enumerate() {
        let mut candidates = Vec::with_capacity(2 * k_per_backend as usize);
        let mut failed = None;
        for (slot, backend) in [backend_a, backend_b].into_iter().enumerate() {
            for j in 0..k_per_backend {
                let op = &operators
                    [(j as usize + slot * k_per_backend as usize + idx) % operators.len()];
                let item_seed = derive_seed(
                    seed,
                    "ranking",
                    ((idx as u64) << 16) | ((slot as u64) << 8) | j as u64,
                );
                match evolve_one(instruction, op, backend, 1, item_seed) {
                    Ok(child) => candidates.push(Candidate {
                        text: child.text,
                        backend_name: backend.name().to_string(),
                        operator_tag: op.tag().to_string(),
                    }),
                    Err(err) => {
                        failed = Some(err);
                        break;
                    }
                }
            }
            if failed.is_some() {
                break;
            }
        }
        if let Some(err) = failed {
            log::warn!("skipping ranking data for {}: {err}", instruction.id);
            continue;
        }
        let ranking = match ranker.rank(&candidates) {
            Ok(r) => r,
            Err(err) => {
                log::warn!(
                    "ranker {} failed on {}: {err}",
                    ranker.name(),
                    instruction.id
                );
                continue;
            }
        };
        records.push(RankingRecord::new(
            instruction.id.clone(),
            candidates,
            ranking,
        )?);
    }
    Ok(records)
}

/// Reduce a ranking to all ordered pairwise preferences:
/// `n(n-1)/2` (winner_text, loser_text) pairs.
pub fn ranking_to_pairs(record: &RankingRecord) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    for i in 0..record.ranking.len() {
        for j in (i + 1)..record.ranking.len() {
            pairs.push((
                record.candidates[record.ranking[i]].text.clone(),
                record.candidates[record.ranking[j]].text.clone(),
            ));
        }
    }
    pairs
}

/// Featurize ranking pairs for the IRM trainer.
pub fn ranking_feature_pairs(
    records: &[RankingRecord],
) -> Result<Vec<(FeatureVector, FeatureVector)>, RewardError> {
    let mut out = Vec::new();
    for record in records {
        for (winner, loser) in ranking_to_pairs(record) {
            out.push((
                rewards::featurize_instruction(&winner)?,
                rewards::featurize_instruction(&loser)?,
            ));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Persistence: JSON Lines envelope with a record type tag
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RankingEnvelope {
    #[serde(rename = "type")]
    record_type: String,
    seed_instruction_id: String,
    candidates: Vec<Candidate>,
    ranking: Vec<usize>,
}

pub fn save_rankings(records: &[RankingRecord], path: impl AsRef<Path>) -> Result<(), EvolveError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| EvolveError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut writer = BufWriter::new(file);
    for record in records {
        let envelope = RankingEnvelope {
            record_type: "ranking".into(),
            seed_instruction_id: record.seed_instruction_id.clone(),
            candidates: record.candidates.clone(),
            ranking: record.ranking.clone(),
        };
        let json = serde_json::to_string(&envelope).expect("ranking record serializes");
        writeln!(writer, "{json}").map_err(|e| EvolveError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    writer.flush().map_err(|e| EvolveError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

pub fn load_rankings(path: impl AsRef<Path>) -> Result<Vec<RankingRecord>, EvolveError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| EvolveError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| EvolveError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let envelope: RankingEnvelope =
            serde_json::from_str(&line).map_err(|e| EvolveError::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        if envelope.record_type != "ranking" {
            return Err(EvolveError::MalformedLine {
                line: line_no,
                message: format!("unexpected record type {:?}", envelope.record_type),
            });
        }
        records.push(
            RankingRecord::new(
                envelope.seed_instruction_id,
                envelope.candidates,
                envelope.ranking,
            )
            .map_err(|e| EvolveError::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?,
        );
    }
    Ok(records)
}
