//! A synthetic multi-step-arithmetic microworld, a compact categorical
//! policy, and a PPO trainer with GAE and KL regularization consuming the
//! product reward `r = r_i * r_a`.
//!
//! Problems are short operation chains ("Start with 3. Multiply by 4.
//! Subtract 5."). The policy reads the chain through its state features one
//! position at a time and picks `(operation, operand)` actions from a
//! finite menu plus a stop-and-answer action; the environment applies the
//! arithmetic. Rollouts render as `Step k:` solutions with a final answer
//! line, so the grader and PRM consume them unchanged.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Solution;
use crate::grader::{self, GradeError};
use crate::par;
use crate::rewards::{
    self, FeatureVector, NetGradients, ParamContainer, RewardError, RewardNet,
    CONTAINER_FORMAT_VERSION, FEATURIZER_VERSION,
};
use crate::seeding::{derive_seed, stable_hash};

/// Episodes stop after this many actions even without a stop action.
pub const STEP_CAP: usize = 8;
/// Operand range for chain entries and the action menu.
pub const OPERAND_MAX: i64 = 20;
/// Chain length bounds (first entry is the start value).
pub const CHAIN_MIN_LEN: usize = 2;
pub const CHAIN_MAX_LEN: usize = 5;
/// 3 operations x 20 operands, plus stop-and-answer.
pub const ACTION_COUNT: usize = 61;
pub const STOP_ACTION: usize = 60;
/// Dimension of the policy/value state features.
pub const STATE_DIM: usize = 30;
/// Held-out problems generated inside `train_ppo` for the history's greedy
/// exact-match column.
pub const HOLDOUT_COUNT: usize = 100;

/// Hidden width of the value net built by the trainer and CLI.
pub const VALUE_HIDDEN: usize = 16;
const VALUE_COEF: f64 = 0.5;
/// The value net takes smaller steps than the policy: the clipped ratio
/// bounds how far the policy can usefully move per batch, while the value
/// regression has no such guard.
const VALUE_LR_RATIO: f64 = 0.03;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("config: {0}")]
    InvalidConfig(String),
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite loss at iteration {iteration}, epoch {epoch}")]
    NonFiniteLoss { iteration: usize, epoch: usize },
    #[error("advantages not computed; run compute_gae first")]
    MissingAdvantages,
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Grade(#[from] GradeError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

// ---------------------------------------------------------------------------
// Microworld problems
// ---------------------------------------------------------------------------

/// Operations a chain entry (and the action menu) can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainOp {
    Add,
    Sub,
    Mul,
}

impl ChainOp {
    pub fn apply(self, lhs: i64, rhs: i64) -> i64 {
        match self {
            ChainOp::Add => lhs + rhs,
            ChainOp::Sub => lhs - rhs,
            ChainOp::Mul => lhs * rhs,
        }
    }

    fn verb(self, operand: i64) -> String {
        match self {
            ChainOp::Add => format!("Add {operand}."),
            ChainOp::Sub => format!("Subtract {operand}."),
            ChainOp::Mul => format!("Multiply by {operand}."),
        }
    }

    fn symbol(self) -> char {
        match self {
            ChainOp::Add => '+',
            ChainOp::Sub => '-',
            ChainOp::Mul => '*',
        }
    }

    fn index(self) -> usize {
        match self {
            ChainOp::Add => 0,
            ChainOp::Sub => 1,
            ChainOp::Mul => 2,
        }
    }

    fn from_index(idx: usize) -> Self {
        match idx {
            0 => ChainOp::Add,
            1 => ChainOp::Sub,
            _ => ChainOp::Mul,
        }
    }
}

impl fmt::Display for ChainOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ChainOp::Add => "add",
            ChainOp::Sub => "subtract",
            ChainOp::Mul => "multiply",
        };
        f.write_str(name)
    }
}

/// One microworld episode's problem: a rendered word problem, the operation
/// chain behind it, and the gold intermediate results.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicroProblem {
    pub instruction_text: String,
    /// First entry is `(Add, start)`; folding from zero reproduces
    /// `gold_steps`.
    pub operand_chain: Vec<(ChainOp, i64)>,
    pub gold_steps: Vec<i64>,
    pub gold_answer: i64,
}

impl MicroProblem {
    pub fn from_chain(chain: Vec<(ChainOp, i64)>) -> Result<Self, RlError> {
        if !(CHAIN_MIN_LEN..=CHAIN_MAX_LEN).contains(&chain.len()) {
            return Err(RlError::InvalidChain(format!(
                "length {} outside [{CHAIN_MIN_LEN}, {CHAIN_MAX_LEN}]",
                chain.len()
            )));
        }
        if chain[0].0 != ChainOp::Add {
            return Err(RlError::InvalidChain(
                "first entry must be (Add, start)".into(),
            ));
        }
        for (op, operand) in &chain {
            if !(1..=OPERAND_MAX).contains(operand) {
                return Err(RlError::InvalidChain(format!(
                    "operand {operand} for {op} outside [1, {OPERAND_MAX}]"
                )));
            }
        }
        let mut gold_steps = Vec::with_capacity(chain.len());
        let mut acc = 0i64;
        for (op, operand) in &chain {
            acc = op.apply(acc, *operand);
            gold_steps.push(acc);
        }
        let gold_answer = *gold_steps.last().expect("chain is non-empty");

        let mut sentences = vec![format!("Start with {}.", chain[0].1)];
        for (op, operand) in &chain[1..] {
            sentences.push(op.verb(*operand));
        }
        sentences.push("What is the result?".to_string());
        Ok(Self {
            instruction_text: sentences.join(" "),
            operand_chain: chain,
            gold_steps,
            gold_answer,
        })
    }

    /// Stable id derived from the instruction text.
    pub fn id(&self) -> String {
        format!(
            "micro-{:016x}",
            stable_hash(&[self.instruction_text.as_bytes()])
        )
    }

    pub fn chain_len(&self) -> usize {
        self.operand_chain.len()
    }
}

/// Parse a rendered microworld instruction back into its chain. Returns
/// `None` for text that is not in the microworld grammar.
pub fn parse_micro_instruction(text: &str) -> Option<Vec<(ChainOp, i64)>> {
    let mut chain: Vec<(ChainOp, i64)> = Vec::new();
    for sentence in text.split('.') {
        let s = sentence.trim();
        if s.is_empty() || s.starts_with("What is") {
            continue;
        }
        let (op, rest) = if let Some(rest) = s.strip_prefix("Start with ") {
            if !chain.is_empty() {
                return None;
            }
            (ChainOp::Add, rest)
        } else if let Some(rest) = s.strip_prefix("Add ") {
            (ChainOp::Add, rest)
        } else if let Some(rest) = s.strip_prefix("Subtract ") {
            (ChainOp::Sub, rest)
        } else if let Some(rest) = s.strip_prefix("Multiply by ") {
            (ChainOp::Mul, rest)
        } else {
            return None;
        };
        if chain.is_empty() && op != ChainOp::Add {
            return None;
        }
        chain.push((op, rest.trim().parse().ok()?));
    }
    if chain.is_empty() {
        None
    } else {
        Some(chain)
    }
}

/// Deterministic problem set for a seed.
pub fn generate_problems(count: usize, seed: u64) -> Vec<MicroProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut problems = Vec::with_capacity(count);
    while problems.len() < count {
        let len = rng.gen_range(CHAIN_MIN_LEN..=CHAIN_MAX_LEN);
        let mut chain = vec![(ChainOp::Add, rng.gen_range(1..=OPERAND_MAX))];
        for _ in 1..len {
            let op = ChainOp::from_index(rng.gen_range(0..3));
            chain.push((op, rng.gen_range(1..=OPERAND_MAX)));
        }
        problems.push(MicroProblem::from_chain(chain).expect("generated chain is valid"));
    }
    problems
}

// ---------------------------------------------------------------------------
// Policy state and featurization
// ---------------------------------------------------------------------------

/// Where an episode currently stands.
#[derive(Debug, Clone)]
pub struct PolicyState {
    /// Fixed-length features; see [`state_features`].
    pub features: Vec<f64>,
    pub steps_emitted: usize,
    pub running_value: i64,
}

/// Features exposed to the policy and value nets.
///
/// The current chain position's operation (one-hot, 3), its operand
/// (one-hot, 20), whether entries remain, remaining count / 4, a squashed
/// running value, steps emitted / cap, a bias 1, position / 5, and one
/// reserved zero.
pub fn state_features(
    problem: &MicroProblem,
    position: usize,
    running: i64,
    emitted: usize,
) -> Vec<f64> {
    let mut f = vec![0.0; STATE_DIM];
    let len = problem.chain_len();
    if position < len {
        let (op, operand) = problem.operand_chain[position];
        f[op.index()] = 1.0;
        f[3 + (operand - 1) as usize] = 1.0;
        f[23] = 1.0;
        f[24] = (len - position) as f64 / 4.0;
    }
    f[25] = (running as f64 / 1000.0).tanh();
    f[26] = emitted as f64 / STEP_CAP as f64;
    f[27] = 1.0;
    f[28] = position as f64 / CHAIN_MAX_LEN as f64;
    f
}

// ---------------------------------------------------------------------------
// The categorical policy
// ---------------------------------------------------------------------------

/// Linear-softmax policy over the `(operation, operand)` menu plus stop,
/// with two shared state-action pair features: "this action matches the
/// scripted entry" and "stop when the script is exhausted". The shared
/// coefficients let one reinforcement generalize across the whole menu
/// instead of training 60 action rows independently. Zero initialization
/// gives the uniform distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    state_dim: usize,
    action_count: usize,
    /// action_count x state_dim, row-major.
    w: Vec<f64>,
    b: Vec<f64>,
    /// [scripted-action match, stop-when-done]; zero when the dimensions
    /// are not the microworld's.
    theta: [f64; 2],
}

/// Gradients with the policy's shapes.
#[derive(Debug, Clone)]
pub struct PolicyGradients {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub theta: [f64; 2],
}

impl PolicyGradients {
    fn zeros(policy: &Policy) -> Self {
        Self {
            w: vec![0.0; policy.w.len()],
            b: vec![0.0; policy.b.len()],
            theta: [0.0; 2],
        }
    }

    fn is_finite(&self) -> bool {
        self.w
            .iter()
            .chain(self.b.iter())
            .chain(self.theta.iter())
            .all(|v| v.is_finite())
    }
}

// state feature block offsets used by the pair features
const OP_BLOCK: usize = 0;
const OPERAND_BLOCK: usize = 3;
const HAS_MORE_IDX: usize = 23;

impl Policy {
    pub fn new_uniform() -> Self {
        Self::zeros(STATE_DIM, ACTION_COUNT)
    }

    pub fn zeros(state_dim: usize, action_count: usize) -> Self {
        Self {
            state_dim,
            action_count,
            w: vec![0.0; action_count * state_dim],
            b: vec![0.0; action_count],
            theta: [0.0; 2],
        }
    }

    fn pair_features_active(&self) -> bool {
        self.state_dim == STATE_DIM && self.action_count == ACTION_COUNT
    }

    /// Shared pair features for (state, action): does the action copy the
    /// scripted chain entry, and is it a stop with the script exhausted.
    fn pair_features(&self, state: &[f64], action: usize) -> (f64, f64) {
        if !self.pair_features_active() {
            return (0.0, 0.0);
        }
        if action == STOP_ACTION {
            (0.0, 1.0 - state[HAS_MORE_IDX])
        } else {
            let op_idx = action / OPERAND_MAX as usize;
            let operand_idx = action % OPERAND_MAX as usize;
            (
                state[OP_BLOCK + op_idx] * state[OPERAND_BLOCK + operand_idx],
                0.0,
            )
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn logits(&self, state: &[f64]) -> Vec<f64> {
        debug_assert_eq!(state.len(), self.state_dim);
        (0..self.action_count)
            .map(|a| {
                let row = &self.w[a * self.state_dim..(a + 1) * self.state_dim];
                let (match_f, stop_f) = self.pair_features(state, a);
                row.iter().zip(state).map(|(w, s)| w * s).sum::<f64>()
                    + self.b[a]
                    + self.theta[0] * match_f
                    + self.theta[1] * stop_f
            })
            .collect()
    }

    /// Log-probabilities over the whole action menu; exp sums to 1.
    pub fn log_probs(&self, state: &[f64]) -> Vec<f64> {
        let logits = self.logits(state);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
        logits.into_iter().map(|l| l - log_norm).collect()
    }

    /// Greedy action: argmax logit, lowest index on ties.
    pub fn act_greedy(&self, state: &[f64]) -> (usize, f64) {
        let log_probs = self.log_probs(state);
        let mut best = 0;
        for (a, lp) in log_probs.iter().enumerate() {
            if *lp > log_probs[best] {
                best = a;
            }
        }
        (best, log_probs[best])
    }

    /// Seeded categorical draw.
    pub fn act_sample(&self, state: &[f64], rng: &mut ChaCha8Rng) -> (usize, f64) {
        let log_probs = self.log_probs(state);
        let u: f64 = rng.gen_range(0.0..1.0);
        let mut cumulative = 0.0;
        for (a, lp) in log_probs.iter().enumerate() {
            cumulative += lp.exp();
            if u < cumulative {
                return (a, *lp);
            }
        }
        let last = self.action_count - 1;
        (last, log_probs[last])
    }

    /// Descent step: `param -= step_size * grad`.
    pub fn apply_gradients(&mut self, grads: &PolicyGradients, step_size: f64) {
        for (w, g) in self.w.iter_mut().zip(&grads.w) {
            *w -= step_size * g;
        }
        for (b, g) in self.b.iter_mut().zip(&grads.b) {
            *b -= step_size * g;
        }
        for (t, g) in self.theta.iter_mut().zip(&grads.theta) {
            *t -= step_size * g;
        }
    }

    /// Accumulate the gradient of a per-logit quantity into parameter
    /// space: `d_logit` is d(quantity)/d(logit of `action`) at `state`.
    fn accumulate_logit_grad(
        &self,
        grads: &mut PolicyGradients,
        state: &[f64],
        action: usize,
        d_logit: f64,
    ) {
        grads.b[action] += d_logit;
        let row = action * self.state_dim;
        for (i, s) in state.iter().enumerate() {
            grads.w[row + i] += d_logit * s;
        }
        let (match_f, stop_f) = self.pair_features(state, action);
        grads.theta[0] += d_logit * match_f;
        grads.theta[1] += d_logit * stop_f;
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len() + 2
    }

    pub fn param(&self, idx: usize) -> f64 {
        if idx < self.w.len() {
            self.w[idx]
        } else if idx < self.w.len() + self.b.len() {
            self.b[idx - self.w.len()]
        } else {
            self.theta[idx - self.w.len() - self.b.len()]
        }
    }

    pub fn set_param(&mut self, idx: usize, value: f64) {
        if idx < self.w.len() {
            self.w[idx] = value;
        } else if idx < self.w.len() + self.b.len() {
            let i = idx - self.w.len();
            self.b[i] = value;
        } else {
            self.theta[idx - self.w.len() - self.b.len()] = value;
        }
    }

    pub fn grad_at(&self, grads: &PolicyGradients, idx: usize) -> f64 {
        if idx < grads.w.len() {
            grads.w[idx]
        } else if idx < grads.w.len() + grads.b.len() {
            grads.b[idx - grads.w.len()]
        } else {
            grads.theta[idx - grads.w.len() - grads.b.len()]
        }
    }

    pub fn to_container(&self) -> ParamContainer {
        let mut params = Vec::with_capacity(self.param_count());
        params.extend(&self.w);
        params.extend(&self.b);
        params.extend(&self.theta);
        ParamContainer {
            format_version: CONTAINER_FORMAT_VERSION,
            featurizer_version: FEATURIZER_VERSION,
            kind: "policy".into(),
            layer_sizes: vec![self.state_dim, self.action_count],
            params,
        }
    }

    pub fn from_container(container: &ParamContainer) -> Result<Self, String> {
        if container.layer_sizes.len() != 2 {
            return Err(format!(
                "expected layer sizes [state, actions], got {:?}",
                container.layer_sizes
            ));
        }
        let (state_dim, action_count) = (container.layer_sizes[0], container.layer_sizes[1]);
        let expected = action_count * state_dim + action_count + 2;
        if container.params.len() != expected {
            return Err(format!(
                "expected {expected} parameters, got {}",
                container.params.len()
            ));
        }
        let mut policy = Self::zeros(state_dim, action_count);
        let w_len = action_count * state_dim;
        policy.w.copy_from_slice(&container.params[..w_len]);
        policy
            .b
            .copy_from_slice(&container.params[w_len..w_len + action_count]);
        policy.theta[0] = container.params[w_len + action_count];
        policy.theta[1] = container.params[w_len + action_count + 1];
        Ok(policy)
    }
}

pub fn save_policy(policy: &Policy, path: impl AsRef<Path>) -> Result<(), RlError> {
    let path = path.as_ref();
    rewards::save_container(&policy.to_container(), path).map_err(RlError::from)
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<Policy, RlError> {
    let path = path.as_ref();
    let container = rewards::load_container(path, "policy")?;
    Policy::from_container(&container).map_err(|message| RlError::Checkpoint {
        path: path.to_path_buf(),
        message,
    })
}

fn action_decode(action: usize) -> Option<(ChainOp, i64)> {
    if action >= STOP_ACTION {
        return None;
    }
    let op = ChainOp::from_index(action / OPERAND_MAX as usize);
    let operand = (action % OPERAND_MAX as usize) as i64 + 1;
    Some((op, operand))
}

/// Menu index of an `(operation, operand)` action.
pub fn action_encode(op: ChainOp, operand: i64) -> usize {
    op.index() * OPERAND_MAX as usize + (operand - 1) as usize
}

// ---------------------------------------------------------------------------
// Trajectories and rollouts
// ---------------------------------------------------------------------------

/// One episode: parallel per-step lists. `values` are filled by the trainer
/// before GAE; `advantages`/`returns` only after [`compute_gae`].
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

fn render_arith_step(k: usize, op: ChainOp, operand: i64, before: i64, after: i64) -> String {
    match op {
        ChainOp::Add => {
            format!(
                "Step {k}: Add {operand}: {before} {} {operand} = {after}.",
                op.symbol()
            )
        }
        ChainOp::Sub => format!(
            "Step {k}: Subtract {operand}: {before} {} {operand} = {after}.",
            op.symbol()
        ),
        ChainOp::Mul => format!(
            "Step {k}: Multiply by {operand}: {before} {} {operand} = {after}.",
            op.symbol()
        ),
    }
}

fn render_stop_step(k: usize, value: i64) -> String {
    format!("Step {k}: The final result is {value}.")
}

/// Run one episode. Greedy mode takes the argmax action; sampled mode draws
/// from the categorical with the given seed. The rendered solution has one
/// `Step k:` line per action and a final answer line, so the grader and
/// PRM consume it unchanged.
pub fn rollout(
    policy: &Policy,
    problem: &MicroProblem,
    greedy: bool,
    seed: u64,
) -> (Trajectory, Solution) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajectory = Trajectory::default();
    let mut running = problem.operand_chain[0].1;
    let mut position = 1usize;
    let mut lines: Vec<String> = Vec::new();

    for t in 0..STEP_CAP {
        let features = state_features(problem, position, running, t);
        let (action, log_prob) = if greedy {
            policy.act_greedy(&features)
        } else {
            policy.act_sample(&features, &mut rng)
        };
        trajectory.states.push(features);
        trajectory.actions.push(action);
        trajectory.log_probs.push(log_prob);

        match action_decode(action) {
            None => {
                lines.push(render_stop_step(t + 1, running));
                break;
            }
            Some((op, operand)) => {
                let after = op.apply(running, operand);
                lines.push(render_arith_step(t + 1, op, operand, running, after));
                running = after;
                position = (position + 1).min(problem.chain_len());
            }
        }
    }

    let raw_text = format!("{}\nThe answer is: {running}.", lines.join("\n"));
    let solution =
        Solution::from_raw(problem.id(), raw_text).expect("rendered rollout always parses");
    (trajectory, solution)
}

// ---------------------------------------------------------------------------
// Rewards and GAE
// ---------------------------------------------------------------------------

/// How step rewards are assigned from the reward models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardMode {
    /// Zero everywhere except the terminal step, which carries
    /// `r_i * r_a` (+ exact-match bonus).
    #[serde(rename = "terminal-product")]
    TerminalProduct,
    /// Every step carries `r_i * sigmoid(prm step score)`; the terminal
    /// step additionally carries the exact-match bonus.
    #[serde(rename = "per-step-prm")]
    PerStepPrm,
}

/// Exact-match bonus added to the terminal reward when the rendered
/// solution grades correct against the gold answer.
pub const EXACT_MATCH_BONUS: f64 = 1.0;

/// Diagnostics from reward assignment.
#[derive(Debug, Clone, Copy)]
pub struct RewardBreakdown {
    pub instruction_reward: f64,
    pub answer_reward: f64,
    pub is_correct: bool,
}

/// Fill `trajectory.rewards` from the reward models and the grader.
pub fn assign_rewards(
    trajectory: &mut Trajectory,
    solution: &Solution,
    problem: &MicroProblem,
    irm_net: &RewardNet,
    prm_net: &RewardNet,
    mode: RewardMode,
) -> Result<RewardBreakdown, RlError> {
    if trajectory.is_empty() {
        return Err(RlError::EmptyTrajectory);
    }
    let t_len = trajectory.len();
    if solution.steps.len() != t_len {
        return Err(RlError::LengthMismatch {
            what: "solution steps vs trajectory",
            expected: t_len,
            got: solution.steps.len(),
        });
    }
    let r_i = rewards::irm_score(irm_net, &problem.instruction_text)?;
    let verdict = grader::grade(&solution.raw_text, &problem.gold_answer.to_string())?;
    let bonus = if verdict.is_correct {
        EXACT_MATCH_BONUS
    } else {
        0.0
    };

    let answer_reward;
    trajectory.rewards = match mode {
        RewardMode::TerminalProduct => {
            let r_a = rewards::prm_answer_reward(prm_net, &problem.instruction_text, solution)?;
            answer_reward = r_a;
            let mut rewards_vec = vec![0.0; t_len];
            rewards_vec[t_len - 1] = r_i * r_a + bonus;
            rewards_vec
        }
        RewardMode::PerStepPrm => {
            let scores = rewards::prm_step_scores(prm_net, &problem.instruction_text, solution)?;
            answer_reward = scores.iter().copied().fold(f64::INFINITY, f64::min);
            let mut rewards_vec: Vec<f64> = scores.iter().map(|s| r_i * s).collect();
            rewards_vec[t_len - 1] += bonus;
            rewards_vec
        }
    };
    Ok(RewardBreakdown {
        instruction_reward: r_i,
        answer_reward,
        is_correct: verdict.is_correct,
    })
}

/// Generalized advantage estimation with terminal bootstrap value zero:
/// `delta_t = r_t + gamma * V_{t+1} - V_t`,
/// `A_t = sum_k (gamma * lam)^k delta_{t+k}`, `returns = A + V`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lam: f64,
) -> Result<(Vec<f64>, Vec<f64>), RlError> {
    if rewards.len() != values.len() {
        return Err(RlError::LengthMismatch {
            what: "rewards vs values",
            expected: rewards.len(),
            got: values.len(),
        });
    }
    let t_len = rewards.len();
    let mut advantages = vec![0.0; t_len];
    let mut acc = 0.0;
    for t in (0..t_len).rev() {
        let next_value = if t + 1 < t_len { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lam * acc;
        advantages[t] = acc;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

// ---------------------------------------------------------------------------
// PPO
// ---------------------------------------------------------------------------

/// PPO hyperparameters. The defaults are conventional; none come from any
/// external source of truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lam: f64,
    pub clip_epsilon: f64,
    pub kl_coefficient: f64,
    pub learning_rate: f64,
    pub epochs_per_batch: usize,
    pub batch_episodes: usize,
    pub seed: u64,
    pub reward_mode: RewardMode,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lam: 0.95,
            clip_epsilon: 0.2,
            kl_coefficient: 0.01,
            learning_rate: 4.0,
            epochs_per_batch: 8,
            batch_episodes: 128,
            seed: 0,
            reward_mode: RewardMode::PerStepPrm,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let fail = |msg: String| Err(RlError::InvalidConfig(msg));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lam) {
            return fail(format!("lam {} outside [0, 1]", self.lam));
        }
        if self.clip_epsilon <= 0.0 {
            return fail(format!(
                "clip_epsilon {} must be positive",
                self.clip_epsilon
            ));
        }
        if self.kl_coefficient < 0.0 {
            return fail(format!(
                "kl_coefficient {} must be non-negative",
                self.kl_coefficient
            ));
        }
        if self.learning_rate <= 0.0 {
            return fail(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            ));
        }
        if self.batch_episodes == 0 {
            return fail("batch_episodes must be at least 1".into());
        }
        if self.epochs_per_batch == 0 {
            return fail("epochs_per_batch must be at least 1".into());
        }
        Ok(())
    }
}

/// The clipped surrogate term for one step:
/// `min(ratio * adv, clamp(ratio, 1 - eps, 1 + eps) * adv)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    (ratio * advantage).min(clipped)
}

/// Aggregate loss terms over a frozen batch.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    /// Mean clipped surrogate (to be maximized).
    pub surrogate: f64,
    /// Mean KL(new || old) over states.
    pub mean_kl: f64,
    /// Mean squared value error.
    pub value_mse: f64,
    /// Fraction of steps with `|ratio - 1| > epsilon`.
    pub clip_fraction: f64,
    /// `-surrogate + kl_coefficient * mean_kl + VALUE_COEF * value_mse`.
    pub total_loss: f64,
}

struct FlatStep<'a> {
    state: &'a [f64],
    action: usize,
    old_log_prob: f64,
    advantage: f64,
    ret: f64,
}

fn flatten(trajectories: &[Trajectory]) -> Result<Vec<FlatStep<'_>>, RlError> {
    let mut steps = Vec::new();
    for trajectory in trajectories {
        if trajectory.is_empty() {
            return Err(RlError::EmptyTrajectory);
        }
        let t_len = trajectory.len();
        if trajectory.advantages.len() != t_len || trajectory.returns.len() != t_len {
            return Err(RlError::MissingAdvantages);
        }
        for t in 0..t_len {
            steps.push(FlatStep {
                state: &trajectory.states[t],
                action: trajectory.actions[t],
                old_log_prob: trajectory.log_probs[t],
                advantage: trajectory.advantages[t],
                ret: trajectory.returns[t],
            });
        }
    }
    Ok(steps)
}

/// Loss terms and analytic gradients of the total loss for one pass over a
/// frozen batch. Exposed for the finite-difference check.
pub fn ppo_loss_and_gradients(
    policy: &Policy,
    old_policy: &Policy,
    value_net: &RewardNet,
    trajectories: &[Trajectory],
    config: &PpoConfig,
) -> Result<(LossTerms, PolicyGradients, NetGradients), RlError> {
    let steps = flatten(trajectories)?;
    let n = steps.len() as f64;
    let mut terms = LossTerms::default();
    let mut policy_grads = PolicyGradients::zeros(policy);
    let mut value_grads = NetGradients {
        w1: vec![0.0; value_net.hidden_dim() * value_net.input_dim()],
        b1: vec![0.0; value_net.hidden_dim()],
        w2: vec![0.0; value_net.hidden_dim()],
        b2: 0.0,
    };

    for step in &steps {
        let log_probs_new = policy.log_probs(step.state);
        let log_probs_old = old_policy.log_probs(step.state);
        let probs_new: Vec<f64> = log_probs_new.iter().map(|lp| lp.exp()).collect();

        let ratio = (log_probs_new[step.action] - step.old_log_prob).exp();
        terms.surrogate += clipped_surrogate(ratio, step.advantage, config.clip_epsilon);
        if (ratio - 1.0).abs() > config.clip_epsilon {
            terms.clip_fraction += 1.0;
        }

        // d(-surrogate)/dlogits, zero when the clipped branch is active
        let unclipped = ratio * step.advantage;
        let clipped =
            ratio.clamp(1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon) * step.advantage;
        if unclipped <= clipped {
            let coeff = -unclipped / n;
            for a in 0..policy.action_count {
                let indicator = if a == step.action { 1.0 } else { 0.0 };
                let d_logit = coeff * (indicator - probs_new[a]);
                policy.accumulate_logit_grad(&mut policy_grads, step.state, a, d_logit);
            }
        }

        // KL(new || old) and its gradient
        let kl: f64 = probs_new
            .iter()
            .zip(log_probs_new.iter().zip(&log_probs_old))
            .map(|(p, (ln_new, ln_old))| p * (ln_new - ln_old))
            .sum();
        terms.mean_kl += kl;
        if config.kl_coefficient > 0.0 {
            let coeff = config.kl_coefficient / n;
            for a in 0..policy.action_count {
                let d_logit = coeff * probs_new[a] * ((log_probs_new[a] - log_probs_old[a]) - kl);
                policy.accumulate_logit_grad(&mut policy_grads, step.state, a, d_logit);
            }
        }

        // value MSE
        let (v, cache) = value_net.forward(step.state)?;
        let err = v - step.ret;
        terms.value_mse += err * err;
        let upstream = VALUE_COEF * 2.0 * err / n;
        let g = value_net.backward(&cache, upstream)?;
        value_grads.add_from(&g);
    }

    terms.surrogate /= n;
    terms.mean_kl /= n;
    terms.value_mse /= n;
    terms.clip_fraction /= n;
    terms.total_loss =
        -terms.surrogate + config.kl_coefficient * terms.mean_kl + VALUE_COEF * terms.value_mse;
    Ok((terms, policy_grads, value_grads))
}

impl NetGradients {
    fn add_from(&mut self, other: &NetGradients) {
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
}

/// Per-update report: the loss terms from the final optimization epoch.
#[derive(Debug, Clone, Copy)]
pub struct PpoReport {
    pub terms: LossTerms,
}

/// One PPO update over a batch of trajectories (advantages already
/// normalized by the caller). Runs `epochs_per_batch` full-batch gradient
/// steps against the frozen old policy.
pub fn ppo_update(
    policy: &mut Policy,
    value_net: &mut RewardNet,
    trajectories: &[Trajectory],
    config: &PpoConfig,
) -> Result<PpoReport, RlError> {
    config.validate()?;
    if trajectories.is_empty() {
        return Err(RlError::EmptyTrajectory);
    }
    let old_policy = policy.clone();
    let mut last_terms = LossTerms::default();
    for epoch in 0..config.epochs_per_batch {
        let (terms, policy_grads, value_grads) =
            ppo_loss_and_gradients(policy, &old_policy, value_net, trajectories, config)?;
        if !terms.total_loss.is_finite() || !policy_grads.is_finite() {
            return Err(RlError::NonFiniteLoss {
                iteration: 0,
                epoch,
            });
        }
        policy.apply_gradients(&policy_grads, config.learning_rate);
        value_net.apply_gradients(&value_grads, config.learning_rate * VALUE_LR_RATIO);
        last_terms = terms;
    }
    Ok(PpoReport { terms: last_terms })
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// One history row per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_reward: f64,
    pub exact_match: f64,
    pub clip_fraction: f64,
    pub mean_kl: f64,
}

pub type TrainingHistory = Vec<IterationStats>;

/// The held-out problem set [`train_ppo`] evaluates against for a given
/// config seed. Exposed so callers can measure the untrained baseline on
/// the same problems.
pub fn training_holdout(seed: u64) -> Vec<MicroProblem> {
    generate_problems(HOLDOUT_COUNT, derive_seed(seed, "holdout", 0))
}

/// Greedy exact-match rate of a policy over a problem set.
pub fn greedy_exact_match(policy: &Policy, problems: &[MicroProblem]) -> f64 {
    if problems.is_empty() {
        return 0.0;
    }
    let verdicts = par::map_ordered(problems, |_, problem| {
        let (_, solution) = rollout(policy, problem, true, 0);
        grader::grade(&solution.raw_text, &problem.gold_answer.to_string())
            .map(|v| v.is_correct)
            .unwrap_or(false)
    });
    verdicts.iter().filter(|c| **c).count() as f64 / problems.len() as f64
}

/// Full PPO training: rollouts -> rewards -> GAE -> update, with a
/// per-iteration greedy exact-match evaluation on an internally generated
/// held-out set. Fully reproducible given the config seed; episode seeds
/// are derived per (iteration, episode), so batch collection order cannot
/// affect results.
pub fn train_ppo(
    policy: &mut Policy,
    value_net: &mut RewardNet,
    problems: &[MicroProblem],
    irm_net: &RewardNet,
    prm_net: &RewardNet,
    config: &PpoConfig,
    iterations: usize,
) -> Result<TrainingHistory, RlError> {
    config.validate()?;
    if problems.is_empty() && iterations > 0 {
        return Err(RlError::InvalidConfig("no training problems".into()));
    }
    let holdout = training_holdout(config.seed);
    let mut history = Vec::with_capacity(iterations);

    for iteration in 0..iterations {
        let episode_indices: Vec<usize> = (0..config.batch_episodes).collect();
        let episodes: Vec<Result<(Trajectory, f64), RlError>> =
            par::map_ordered(&episode_indices, |_, &e| {
                let episode_seed = derive_seed(
                    config.seed,
                    "episode",
                    ((iteration as u64) << 32) | e as u64,
                );
                let problem = &problems[(episode_seed % problems.len() as u64) as usize];
                let (mut trajectory, solution) = rollout(policy, problem, false, episode_seed);
                for state in &trajectory.states {
                    let v = value_net.score(state)?;
                    trajectory.values.push(v);
                }
                assign_rewards(
                    &mut trajectory,
                    &solution,
                    problem,
                    irm_net,
                    prm_net,
                    config.reward_mode,
                )?;
                let (advantages, returns) = compute_gae(
                    &trajectory.rewards,
                    &trajectory.values,
                    config.gamma,
                    config.lam,
                )?;
                trajectory.advantages = advantages;
                trajectory.returns = returns;
                let total_reward = trajectory.rewards.iter().sum::<f64>();
                Ok((trajectory, total_reward))
            });
        let mut trajectories = Vec::with_capacity(config.batch_episodes);
        let mut reward_sum = 0.0;
        for episode in episodes {
            let (trajectory, total) = episode?;
            reward_sum += total;
            trajectories.push(trajectory);
        }
        normalize_advantages(&mut trajectories);
        let report = ppo_update(policy, value_net, &trajectories, config).map_err(|e| match e {
            RlError::NonFiniteLoss { epoch, .. } => RlError::NonFiniteLoss { iteration, epoch },
            other => other,
        })?;
        history.push(IterationStats {
            iteration,
            mean_reward: reward_sum / config.batch_episodes as f64,
            exact_match: greedy_exact_match(policy, &holdout),
            clip_fraction: report.terms.clip_fraction,
            mean_kl: report.terms.mean_kl,
        });
    }
    Ok(history)
}

/// Zero-mean unit-variance normalization across the whole batch, skipped
/// for a single-step batch or zero variance.
fn normalize_advantages(trajectories: &mut [Trajectory]) {
    let mut all: Vec<f64> = trajectories
        .iter()
        .flat_map(|t| t.advantages.iter().copied())
        .collect();
    if all.len() <= 1 {
        return;
    }
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    for v in all.iter_mut() {
        *v -= mean;
    }
    let var = all.iter().map(|v| v * v).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return;
    }
    for trajectory in trajectories.iter_mut() {
        for a in trajectory.advantages.iter_mut() {
            *a = (*a - mean) / std;
        }
    }
}

/// Write the training history as comma-separated text.
pub fn write_history(history: &[IterationStats], path: impl AsRef<Path>) -> Result<(), RlError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| RlError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut writer = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(
            writer,
            "iteration,mean_reward,exact_match,clip_fraction,mean_kl"
        )?;
        for row in history {
            writeln!(
                writer,
                "{},{},{},{},{}",
                row.iteration, row.mean_reward, row.exact_match, row.clip_fraction, row.mean_kl
            )?;
        }
        writer.flush()
    };
    emit().map_err(|e| RlError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

// ---------------------------------------------------------------------------
// PRM training data from the corruption oracle
// ---------------------------------------------------------------------------

/// Which negative examples the corruption oracle produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionMode {
    /// Only arithmetic corruption: a step's result is shifted so its
    /// `a op b = c` equation is false.
    ArithmeticOnly,
    /// Arithmetic corruption plus three harder negative kinds: operand
    /// substitution (internally consistent arithmetic with an operand that
    /// appears nowhere in the instruction), overrun continuation
    /// (arithmetic steps past the point where the solution should have
    /// stopped), and premature stops (a final-result step before the chain
    /// is exhausted). The extended mixture is what the PPO pipeline trains
    /// its PRM on.
    Extended,
}

/// Render the gold solution for a problem exactly the way rollouts render
/// theirs.
pub fn gold_solution(problem: &MicroProblem) -> Solution {
    let mut lines = Vec::with_capacity(problem.chain_len() + 1);
    let mut running = problem.operand_chain[0].1;
    let mut k = 1;
    for (op, operand) in &problem.operand_chain[1..] {
        let after = op.apply(running, *operand);
        lines.push(render_arith_step(k, *op, *operand, running, after));
        running = after;
        k += 1;
    }
    lines.push(render_stop_step(k, running));
    let raw_text = format!("{}\nThe answer is: {running}.", lines.join("\n"));
    Solution::from_raw(problem.id(), raw_text).expect("gold solution always parses")
}

/// Build labeled per-step PRM training data from microworld gold solutions:
/// every gold step is a positive; negatives corrupt one step per problem
/// according to the mode. Deterministic given the seed.
pub fn build_prm_training_set(
    problems: &[MicroProblem],
    seed: u64,
    mode: CorruptionMode,
) -> Result<Vec<(FeatureVector, bool)>, RlError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::new();
    for problem in problems {
        let solution = gold_solution(problem);
        for (idx, step) in solution.steps.iter().enumerate() {
            let features =
                rewards::featurize_step(&problem.instruction_text, &solution.steps[..idx], step)?;
            examples.push((features, true));
        }
        // arithmetic corruption of one step
        let arith_steps = problem.chain_len() - 1;
        if arith_steps > 0 {
            let target = rng.gen_range(0..arith_steps);
            let (op, operand) = problem.operand_chain[target + 1];
            let before = problem.gold_steps[target];
            let truth = problem.gold_steps[target + 1];
            let shift = rng.gen_range(1..=5i64);
            let wrong = if rng.gen_bool(0.5) {
                truth + shift
            } else {
                truth - shift
            };
            let corrupted = render_arith_step(target + 1, op, operand, before, wrong);
            let features = rewards::featurize_step(
                &problem.instruction_text,
                &solution.steps[..target],
                &corrupted,
            )?;
            examples.push((features, false));

            if mode == CorruptionMode::Extended {
                // operand substitution: correct arithmetic, foreign operand
                let mut foreign = rng.gen_range(1..=OPERAND_MAX);
                while problem.operand_chain.iter().any(|(_, o)| *o == foreign) {
                    foreign = foreign % OPERAND_MAX + 1;
                }
                let after = op.apply(before, foreign);
                let substituted = render_arith_step(target + 1, op, foreign, before, after);
                let features = rewards::featurize_step(
                    &problem.instruction_text,
                    &solution.steps[..target],
                    &substituted,
                )?;
                examples.push((features, false));

                // overrun continuation: arithmetic keeps going where the
                // solution should have stopped
                let mut prior: Vec<String> = solution.steps[..solution.steps.len() - 1].to_vec();
                let mut running = problem.gold_answer;
                for k in 0..2 {
                    let (over_op, over_operand) =
                        problem.operand_chain[1 + rng.gen_range(0..arith_steps)];
                    let after = over_op.apply(running, over_operand);
                    let step_no = problem.chain_len() + k;
                    let overrun = render_arith_step(step_no, over_op, over_operand, running, after);
                    let features =
                        rewards::featurize_step(&problem.instruction_text, &prior, &overrun)?;
                    examples.push((features, false));
                    prior.push(overrun);
                    running = after;
                }

                // premature stop: a final-result step while chain entries
                // remain
                let early = rng.gen_range(0..arith_steps);
                let premature = render_stop_step(early + 1, problem.gold_steps[early]);
                let features = rewards::featurize_step(
                    &problem.instruction_text,
                    &solution.steps[..early],
                    &premature,
                )?;
                examples.push((features, false));
            }
        }
    }
    Ok(examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewards::{sigmoid, write_loss_log};
    use proptest::prelude::*;

    fn chain_example() -> MicroProblem {
        MicroProblem::from_chain(vec![
            (ChainOp::Add, 3),
            (ChainOp::Mul, 4),
            (ChainOp::Sub, 5),
        ])
        .unwrap()
    }

    #[test]
    fn chain_folds_to_gold_steps() {
        let p = chain_example();
        assert_eq!(p.gold_steps, vec![3, 12, 7]);
        assert_eq!(p.gold_answer, 7);
        assert_eq!(
            p.instruction_text,
            "Start with 3. Multiply by 4. Subtract 5. What is the result?"
        );
    }

    #[test]
    fn generate_zero_is_empty_and_seeded_is_deterministic() {
        assert!(generate_problems(0, 1).is_empty());
        assert_eq!(generate_problems(20, 7), generate_problems(20, 7));
        assert_ne!(generate_problems(20, 7), generate_problems(20, 8));
    }

    #[test]
    fn generated_problems_satisfy_invariants() {
        for p in generate_problems(200, 3) {
            assert!((CHAIN_MIN_LEN..=CHAIN_MAX_LEN).contains(&p.chain_len()));
            assert_eq!(p.operand_chain[0].0, ChainOp::Add);
            let mut acc = 0;
            for (k, (op, operand)) in p.operand_chain.iter().enumerate() {
                assert!((1..=OPERAND_MAX).contains(operand));
                acc = op.apply(acc, *operand);
                assert_eq!(acc, p.gold_steps[k]);
            }
            assert_eq!(acc, p.gold_answer);
        }
    }

    #[test]
    fn invalid_chains_are_rejected() {
        assert!(MicroProblem::from_chain(vec![(ChainOp::Add, 3)]).is_err());
        assert!(MicroProblem::from_chain(vec![(ChainOp::Mul, 3), (ChainOp::Add, 2)]).is_err());
        assert!(MicroProblem::from_chain(vec![(ChainOp::Add, 0), (ChainOp::Add, 2)]).is_err());
        assert!(MicroProblem::from_chain(vec![(ChainOp::Add, 3), (ChainOp::Add, 21)]).is_err());
    }

    #[test]
    fn action_encoding_roundtrips() {
        for a in 0..STOP_ACTION {
            let (op, operand) = action_decode(a).unwrap();
            assert_eq!(action_encode(op, operand), a);
        }
        assert!(action_decode(STOP_ACTION).is_none());
    }

    #[test]
    fn greedy_rollout_is_deterministic_and_gradable() {
        let policy = Policy::new_uniform();
        let problem = chain_example();
        let (t1, s1) = rollout(&policy, &problem, true, 0);
        let (t2, s2) = rollout(&policy, &problem, true, 99);
        assert_eq!(t1.actions, t2.actions);
        assert_eq!(s1.raw_text, s2.raw_text);
        assert!(grader::extract_final_answer(&s1.raw_text).is_some());
    }

    #[test]
    fn rollout_step_count_matches_split_steps() {
        let policy = Policy::new_uniform();
        for problem in generate_problems(20, 11) {
            let (trajectory, solution) = rollout(&policy, &problem, false, 5);
            let steps = grader::split_steps(&solution.raw_text).unwrap();
            assert_eq!(steps.len(), trajectory.len());
            assert_eq!(solution.steps.len(), trajectory.len());
        }
    }

    #[test]
    fn stop_at_first_action_gives_t1() {
        let mut policy = Policy::new_uniform();
        // a large stop bias makes the argmax stop immediately
        let stop_bias_idx = policy.w.len() + STOP_ACTION;
        policy.set_param(stop_bias_idx, 100.0);
        let problem = chain_example();
        let (trajectory, solution) = rollout(&policy, &problem, true, 0);
        assert_eq!(trajectory.len(), 1);
        assert_eq!(solution.steps.len(), 1);
        // stopping immediately answers with the start value
        let verdict = grader::grade(&solution.raw_text, "3").unwrap();
        assert!(verdict.is_correct);
    }

    #[test]
    fn cap_bounds_episode_length() {
        let mut policy = Policy::new_uniform();
        // strongly prefer a non-stop action so the cap triggers
        policy.set_param(policy.w.len(), 100.0); // bias of action 0 (Add 1)
        let problem = chain_example();
        let (trajectory, solution) = rollout(&policy, &problem, true, 0);
        assert_eq!(trajectory.len(), STEP_CAP);
        assert!(grader::extract_final_answer(&solution.raw_text).is_some());
    }

    #[test]
    fn gae_with_gamma_lambda_one_is_suffix_sums() {
        let rewards = vec![1.0, 2.0, 3.0];
        let values = vec![0.0, 0.0, 0.0];
        let (adv, ret) = compute_gae(&rewards, &values, 1.0, 1.0).unwrap();
        assert_eq!(adv, vec![6.0, 5.0, 3.0]);
        assert_eq!(ret, adv);
    }

    #[test]
    fn gae_single_step_formula() {
        let (adv, ret) = compute_gae(&[2.0], &[0.5], 0.9, 0.95).unwrap();
        assert!((adv[0] - 1.5).abs() < 1e-12);
        assert!((ret[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gae_rejects_length_mismatch() {
        assert!(compute_gae(&[1.0], &[0.0, 0.0], 0.9, 0.9).is_err());
    }

    /// Brute-force double-summation oracle for GAE.
    fn gae_brute_force(rewards: &[f64], values: &[f64], gamma: f64, lam: f64) -> Vec<f64> {
        let t_len = rewards.len();
        let delta = |t: usize| -> f64 {
            let next = if t + 1 < t_len { values[t + 1] } else { 0.0 };
            rewards[t] + gamma * next - values[t]
        };
        (0..t_len)
            .map(|t| {
                (t..t_len)
                    .map(|k| (gamma * lam).powi((k - t) as i32) * delta(k))
                    .sum()
            })
            .collect()
    }

    proptest! {
        #[test]
        fn gae_matches_brute_force(
            data in prop::collection::vec((-5.0f64..5.0, -2.0f64..2.0), 1..10),
            gamma in 0.1f64..1.0,
            lam in 0.0f64..=1.0,
        ) {
            let rewards: Vec<f64> = data.iter().map(|(r, _)| *r).collect();
            let values: Vec<f64> = data.iter().map(|(_, v)| *v).collect();
            let (adv, _) = compute_gae(&rewards, &values, gamma, lam).unwrap();
            let oracle = gae_brute_force(&rewards, &values, gamma, lam);
            for (a, b) in adv.iter().zip(&oracle) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn log_probs_normalize(
            seed in 0u64..1000,
            scale in 0.0f64..3.0,
        ) {
            let mut policy = Policy::new_uniform();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for idx in 0..policy.param_count() {
                policy.set_param(idx, scale * rand::Rng::gen_range(&mut rng, -1.0..1.0));
            }
            let problem = chain_example();
            let state = state_features(&problem, 1, 3, 0);
            let sum: f64 = policy.log_probs(&state).iter().map(|lp| lp.exp()).sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn clip_arithmetic_examples() {
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) - (-0.8)).abs() < 1e-12);
        assert!((clipped_surrogate(1.0, 0.7, 0.2) - 0.7).abs() < 1e-12);
    }

    fn tiny_batch(policy: &Policy, value_net: &RewardNet) -> Vec<Trajectory> {
        let problems = generate_problems(4, 2);
        let irm = RewardNet::zeros(rewards::FEATURE_DIM, 4);
        let prm = RewardNet::zeros(rewards::FEATURE_DIM, 4);
        let mut out = Vec::new();
        for (e, problem) in problems.iter().enumerate() {
            let (mut trajectory, solution) = rollout(policy, problem, false, e as u64);
            for state in &trajectory.states {
                trajectory.values.push(value_net.score(state).unwrap());
            }
            assign_rewards(
                &mut trajectory,
                &solution,
                problem,
                &irm,
                &prm,
                RewardMode::PerStepPrm,
            )
            .unwrap();
            let (adv, ret) =
                compute_gae(&trajectory.rewards, &trajectory.values, 0.99, 0.95).unwrap();
            trajectory.advantages = adv;
            trajectory.returns = ret;
            out.push(trajectory);
        }
        out
    }

    #[test]
    fn identity_policy_has_unit_ratio_zero_kl() {
        let policy = Policy::new_uniform();
        let value_net = RewardNet::zeros(STATE_DIM, VALUE_HIDDEN);
        let batch = tiny_batch(&policy, &value_net);
        let config = PpoConfig::default();
        let (terms, _, _) =
            ppo_loss_and_gradients(&policy, &policy, &value_net, &batch, &config).unwrap();
        let mean_adv: f64 = batch.iter().flat_map(|t| t.advantages.iter()).sum::<f64>()
            / batch.iter().map(|t| t.len()).sum::<usize>() as f64;
        assert!((terms.surrogate - mean_adv).abs() < 1e-12);
        assert!(terms.mean_kl.abs() < 1e-12);
        assert_eq!(terms.clip_fraction, 0.0);
    }

    #[test]
    fn ppo_gradients_match_finite_differences() {
        let mut policy = Policy::new_uniform();
        let mut value_net = RewardNet::new(STATE_DIM, 3, 5);
        // nudge the policy off the old policy so ratios differ from 1 but
        // stay far from the clip boundary
        let old_policy = policy.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for idx in 0..policy.param_count() {
            let v = policy.param(idx) + rand::Rng::gen_range(&mut rng, -0.01..0.01);
            policy.set_param(idx, v);
        }
        let batch = tiny_batch(&old_policy, &value_net);
        let config = PpoConfig {
            clip_epsilon: 0.5,
            kl_coefficient: 0.05,
            ..PpoConfig::default()
        };
        let (_, policy_grads, value_grads) =
            ppo_loss_and_gradients(&policy, &old_policy, &value_net, &batch, &config).unwrap();

        let loss_of = |policy: &Policy, value_net: &RewardNet| -> f64 {
            ppo_loss_and_gradients(policy, &old_policy, value_net, &batch, &config)
                .unwrap()
                .0
                .total_loss
        };
        let h = 1e-5;
        for idx in (0..policy.param_count()).step_by(97) {
            let mut plus = policy.clone();
            plus.set_param(idx, policy.param(idx) + h);
            let mut minus = policy.clone();
            minus.set_param(idx, policy.param(idx) - h);
            let numeric = (loss_of(&plus, &value_net) - loss_of(&minus, &value_net)) / (2.0 * h);
            let analytic = policy.grad_at(&policy_grads, idx);
            assert!(
                (analytic - numeric).abs() / numeric.abs().max(1.0) < 1e-4,
                "policy param {idx}: {analytic} vs {numeric}"
            );
        }
        for idx in (0..value_net.param_count()).step_by(7) {
            let mut plus = value_net.clone();
            plus.set_param(idx, value_net.param(idx) + h);
            let mut minus = value_net.clone();
            minus.set_param(idx, value_net.param(idx) - h);
            let numeric = (loss_of(&policy, &plus) - loss_of(&policy, &minus)) / (2.0 * h);
            let analytic = value_net.grad_at(&value_grads, idx);
            assert!(
                (analytic - numeric).abs() / numeric.abs().max(1.0) < 1e-4,
                "value param {idx}: {analytic} vs {numeric}"
            );
        }
        let _ = &mut value_net;
    }

    #[test]
    fn assign_rewards_terminal_mode() {
        let policy = Policy::new_uniform();
        let problem = chain_example();
        let (mut trajectory, solution) = rollout(&policy, &problem, false, 3);
        trajectory.values = vec![0.0; trajectory.len()];
        let irm = RewardNet::zeros(rewards::FEATURE_DIM, 4);
        let prm = RewardNet::zeros(rewards::FEATURE_DIM, 4);
        let breakdown = assign_rewards(
            &mut trajectory,
            &solution,
            &problem,
            &irm,
            &prm,
            RewardMode::TerminalProduct,
        )
        .unwrap();
        // zero nets give r_i = r_a = 0.5
        assert!((breakdown.instruction_reward - 0.5).abs() < 1e-12);
        assert!((breakdown.answer_reward - 0.5).abs() < 1e-12);
        let t_len = trajectory.len();
        for t in 0..t_len - 1 {
            assert_eq!(trajectory.rewards[t], 0.0);
        }
        let bonus = if breakdown.is_correct { 1.0 } else { 0.0 };
        assert!((trajectory.rewards[t_len - 1] - (0.25 + bonus)).abs() < 1e-12);
    }

    #[test]
    fn assign_rewards_per_step_mode() {
        let policy = Policy::new_uniform();
        let problem = chain_example();
        let (mut trajectory, solution) = rollout(&policy, &problem, false, 3);
        let irm = RewardNet::zeros(rewards::FEATURE_DIM, 4);
        let prm = RewardNet::zeros(rewards::FEATURE_DIM, 4);
        let breakdown = assign_rewards(
            &mut trajectory,
            &solution,
            &problem,
            &irm,
            &prm,
            RewardMode::PerStepPrm,
        )
        .unwrap();
        let bonus = if breakdown.is_correct { 1.0 } else { 0.0 };
        let t_len = trajectory.len();
        for t in 0..t_len - 1 {
            assert!((trajectory.rewards[t] - 0.25).abs() < 1e-12);
        }
        assert!((trajectory.rewards[t_len - 1] - (0.25 + bonus)).abs() < 1e-12);
    }

    #[test]
    fn assign_rewards_rejects_empty() {
        let problem = chain_example();
        let solution = gold_solution(&problem);
        let irm = RewardNet::zeros(rewards::FEATURE_DIM, 4);
        let prm = RewardNet::zeros(rewards::FEATURE_DIM, 4);
        let mut empty = Trajectory::default();
        assert!(matches!(
            assign_rewards(
                &mut empty,
                &solution,
                &problem,
                &irm,
                &prm,
                RewardMode::PerStepPrm
            ),
            Err(RlError::EmptyTrajectory)
        ));
    }

    #[test]
    fn zero_iterations_leaves_policy_unchanged() {
        let mut policy = Policy::new_uniform();
        let mut value_net = RewardNet::zeros(STATE_DIM, VALUE_HIDDEN);
        let before = policy.clone();
        let problems = generate_problems(10, 1);
        let irm = RewardNet::zeros(rewards::FEATURE_DIM, 4);
        let prm = RewardNet::zeros(rewards::FEATURE_DIM, 4);
        let history = train_ppo(
            &mut policy,
            &mut value_net,
            &problems,
            &irm,
            &prm,
            &PpoConfig::default(),
            0,
        )
        .unwrap();
        assert!(history.is_empty());
        assert_eq!(policy, before);
    }

    #[test]
    fn huge_kl_coefficient_pins_the_policy() {
        let problems = generate_problems(20, 4);
        let irm = RewardNet::zeros(rewards::FEATURE_DIM, 4);
        let prm = RewardNet::zeros(rewards::FEATURE_DIM, 4);
        // large enough that the KL penalty dominates the surrogate; the
        // smaller step keeps the fixed-step optimizer in its stable regime
        let config = PpoConfig {
            kl_coefficient: 200.0,
            learning_rate: 0.05,
            batch_episodes: 8,
            ..PpoConfig::default()
        };
        let mut policy = Policy::new_uniform();
        let mut value_net = RewardNet::zeros(STATE_DIM, VALUE_HIDDEN);
        let baseline = greedy_exact_match(&policy, &problems);
        train_ppo(
            &mut policy,
            &mut value_net,
            &problems,
            &irm,
            &prm,
            &config,
            5,
        )
        .unwrap();
        let drift = (0..policy.param_count())
            .map(|i| policy.param(i).abs())
            .fold(0.0f64, f64::max);
        assert!(drift < 0.05, "policy drifted by {drift}");
        let after = greedy_exact_match(&policy, &problems);
        assert!((after - baseline).abs() < 0.2);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let problems = generate_problems(30, 6);
        let irm = RewardNet::zeros(rewards::FEATURE_DIM, 4);
        let prm = RewardNet::zeros(rewards::FEATURE_DIM, 4);
        let config = PpoConfig {
            batch_episodes: 8,
            ..PpoConfig::default()
        };
        let run = || {
            let mut policy = Policy::new_uniform();
            let mut value_net = RewardNet::new(STATE_DIM, VALUE_HIDDEN, config.seed);
            let history = train_ppo(
                &mut policy,
                &mut value_net,
                &problems,
                &irm,
                &prm,
                &config,
                4,
            )
            .unwrap();
            (history, policy)
        };
        let (h1, p1) = run();
        let (h2, p2) = run();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn policy_checkpoint_roundtrips() {
        let mut policy = Policy::new_uniform();
        policy.set_param(5, 1.5);
        policy.set_param(policy.param_count() - 1, -0.5);
        let file = tempfile::NamedTempFile::new().unwrap();
        save_policy(&policy, file.path()).unwrap();
        let loaded = load_policy(file.path()).unwrap();
        assert_eq!(policy, loaded);
    }

    #[test]
    fn history_csv_has_header_and_rows() {
        let history = vec![IterationStats {
            iteration: 0,
            mean_reward: 1.5,
            exact_match: 0.25,
            clip_fraction: 0.1,
            mean_kl: 0.01,
        }];
        let file = tempfile::NamedTempFile::new().unwrap();
        write_history(&history, file.path()).unwrap();
        let text = std::fs::read_to_string(file.path()).unwrap();
        assert!(text.starts_with("iteration,mean_reward,exact_match,clip_fraction,mean_kl\n"));
        assert!(text.contains("0,1.5,0.25,0.1,0.01"));
    }

    #[test]
    fn corruption_oracle_labels_are_learnable() {
        let problems = generate_problems(60, 12);
        let examples =
            build_prm_training_set(&problems, 0, CorruptionMode::ArithmeticOnly).unwrap();
        let positives = examples.iter().filter(|(_, y)| *y).count();
        let negatives = examples.len() - positives;
        assert!(positives > 0 && negatives > 0);
        // corrupted steps have a false equation, so the flag separates them
        for (features, label) in &examples {
            if !label {
                assert_eq!(features.0[0], 0.0);
            }
        }
    }

    #[test]
    fn operand_corruption_keeps_arithmetic_consistent() {
        let problems = generate_problems(40, 13);
        let examples = build_prm_training_set(&problems, 1, CorruptionMode::Extended).unwrap();
        let negatives_with_true_arith = examples
            .iter()
            .filter(|(f, y)| !*y && f.0[0] == 1.0)
            .count();
        assert!(negatives_with_true_arith > 0);
    }

    #[test]
    fn instruction_text_parses_back_to_its_chain() {
        for problem in generate_problems(50, 17) {
            let chain = parse_micro_instruction(&problem.instruction_text).unwrap();
            assert_eq!(chain, problem.operand_chain);
        }
        assert!(parse_micro_instruction("What is 2+2?").is_none());
        assert!(parse_micro_instruction("Multiply by 4. Add 2.").is_none());
    }

    #[test]
    fn gold_solution_grades_correct() {
        for problem in generate_problems(25, 21) {
            let solution = gold_solution(&problem);
            let verdict =
                grader::grade(&solution.raw_text, &problem.gold_answer.to_string()).unwrap();
            assert!(verdict.is_correct);
            assert_eq!(solution.steps.len(), problem.chain_len());
        }
    }

    #[test]
    fn write_loss_log_reexport_compiles() {
        // write_loss_log lives in rewards but is re-exported here for CLI use
        let file = tempfile::NamedTempFile::new().unwrap();
        write_loss_log(&[1.0], file.path()).unwrap();
        let _ = sigmoid(0.0);
    }
}
