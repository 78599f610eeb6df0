//! Generation backends for the harness: a deterministic microworld solver
//! (with a seeded error rate for realistic reports) and a policy-backed
//! generator that rolls the trained policy greedily.

use crate::evolver::{BackendError, GeneratorBackend};
use crate::rl::{self, MicroProblem, Policy};
use crate::seeding::stable_hash;

/// Built-in open-domain conversation pool used when the run configuration
/// does not point at a general-pool file.
pub const DEFAULT_GENERAL_POOL: [(&str, &str); 10] = [
    (
        "How do I keep bread fresh longer?",
        "Store it in a paper bag at room temperature for the first day or two, then freeze slices and toast them as needed.",
    ),
    (
        "What is a good way to start learning the piano?",
        "Begin with short daily sessions on scales and simple pieces, and add a weekly lesson or structured course for feedback.",
    ),
    (
        "Why does the sky look red at sunset?",
        "Sunlight passes through more atmosphere near the horizon, which scatters the short blue wavelengths away and leaves the longer red ones.",
    ),
    (
        "Can you suggest a plan for a three-day city trip?",
        "Spend the first day on the main sights, the second on neighborhoods and markets, and keep the third loose for museums or a day trip.",
    ),
    (
        "What should I look for when buying a used bicycle?",
        "Check the frame for cracks, spin the wheels for wobble, test the brakes and shifting, and ask about the service history.",
    ),
    (
        "How do plants know when to flower?",
        "They track day length and temperature through light-sensitive proteins and hormones that switch on flowering genes at the right season.",
    ),
    (
        "What's a simple dinner I can cook in twenty minutes?",
        "A stir-fry works well: cook rice, fry vegetables and a protein over high heat, and finish with soy sauce, garlic, and ginger.",
    ),
    (
        "How can I make my meetings shorter?",
        "Set an agenda with time boxes, start on time, keep decisions and owners written down, and move open discussion to follow-ups.",
    ),
    (
        "Why do cats knead with their paws?",
        "It is a comfort behavior carried over from kittenhood, associated with nursing and marking familiar places with scent glands.",
    ),
    (
        "What is the difference between weather and climate?",
        "Weather is the state of the atmosphere over hours or days; climate is the statistical pattern of weather over decades.",
    ),
];

/// Pull the instruction text back out of a rendered train/eval prompt.
pub(crate) fn instruction_from_prompt(prompt: &str) -> Option<&str> {
    let start = prompt.find("### Instruction:\n")? + "### Instruction:\n".len();
    let end = prompt[start..].find("\n\n### Response:")? + start;
    Some(&prompt[start..end])
}

/// Deterministic microworld solver. It parses the instruction embedded in
/// the prompt, solves the chain, and renders a step-by-step solution. A
/// non-zero error rate makes a seeded fraction of generations answer
/// wrongly, which keeps pass@1 reports informative.
pub struct MicroSolverBackend {
    name: String,
    error_rate: f64,
}

impl MicroSolverBackend {
    pub fn new(error_rate: f64) -> Self {
        Self {
            name: "micro-solver".into(),
            error_rate: error_rate.clamp(0.0, 1.0),
        }
    }
}

impl GeneratorBackend for MicroSolverBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, prompt: &str, seed: u64) -> Result<String, BackendError> {
        let instruction = instruction_from_prompt(prompt)
            .ok_or_else(|| BackendError::MalformedResponse("prompt has no instruction".into()))?;
        let chain = rl::parse_micro_instruction(instruction).ok_or_else(|| {
            BackendError::MalformedResponse("instruction is not a microworld problem".into())
        })?;
        let problem = MicroProblem::from_chain(chain)
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let solution = rl::gold_solution(&problem);
        let h = stable_hash(&[prompt.as_bytes(), &seed.to_le_bytes()]);
        let flip = (h as f64 / u64::MAX as f64) < self.error_rate;
        if !flip {
            return Ok(solution.raw_text);
        }
        // seeded wrong answer: overshoot the final value by one
        let wrong = problem.gold_answer + 1;
        let mut lines: Vec<String> = solution.raw_text.lines().map(|l| l.to_string()).collect();
        let n = lines.len();
        lines[n - 2] = format!("Step {}: The final result is {wrong}.", n - 1);
        lines[n - 1] = format!("The answer is: {wrong}.");
        Ok(lines.join("\n"))
    }
}

/// Greedy rollouts from a trained policy, rendered as step-by-step
/// solutions. This is how the artifact's own policy is evaluated through
/// the same pass@1 path as any other backend.
pub struct PolicyBackend {
    name: String,
    policy: Policy,
}

impl PolicyBackend {
    pub fn new(policy: Policy) -> Self {
        Self {
            name: "policy".into(),
            policy,
        }
    }
}

impl GeneratorBackend for PolicyBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, prompt: &str, seed: u64) -> Result<String, BackendError> {
        let instruction = instruction_from_prompt(prompt)
            .ok_or_else(|| BackendError::MalformedResponse("prompt has no instruction".into()))?;
        let chain = rl::parse_micro_instruction(instruction).ok_or_else(|| {
            BackendError::MalformedResponse("instruction is not a microworld problem".into())
        })?;
        let problem = MicroProblem::from_chain(chain)
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let (_, solution) = rl::rollout(&self.policy, &problem, true, seed);
        Ok(solution.raw_text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grader;
    use crate::harness::{render_prompt, PromptMode};

    #[test]
    fn instruction_extraction_roundtrips() {
        let prompt = render_prompt("Start with 3. Add 4.", PromptMode::Eval).unwrap();
        assert_eq!(
            instruction_from_prompt(&prompt),
            Some("Start with 3. Add 4.")
        );
    }

    #[test]
    fn solver_answers_correctly_without_errors() {
        let backend = MicroSolverBackend::new(0.0);
        let prompt =
            render_prompt("Start with 3. Multiply by 4. Subtract 5.", PromptMode::Eval).unwrap();
        let out = backend.generate(&prompt, 0).unwrap();
        assert!(grader::grade(&out, "7").unwrap().is_correct);
    }

    #[test]
    fn solver_error_rate_flips_some_answers() {
        let backend = MicroSolverBackend::new(1.0);
        let prompt = render_prompt("Start with 3. Add 4.", PromptMode::Eval).unwrap();
        let out = backend.generate(&prompt, 0).unwrap();
        let verdict = grader::grade(&out, "7").unwrap();
        assert!(!verdict.is_correct);
        // the wrong solution still parses and extracts
        assert!(grader::extract_final_answer(&out).is_some());
    }

    #[test]
    fn solver_rejects_non_micro_instructions() {
        let backend = MicroSolverBackend::new(0.0);
        let prompt = render_prompt("What is the capital of France?", PromptMode::Eval).unwrap();
        assert!(backend.generate(&prompt, 0).is_err());
    }

    #[test]
    fn policy_backend_renders_gradable_solutions() {
        let backend = PolicyBackend::new(Policy::new_uniform());
        let prompt = render_prompt("Start with 3. Add 4.", PromptMode::Eval).unwrap();
        let out = backend.generate(&prompt, 0).unwrap();
        assert!(grader::extract_final_answer(&out).is_some());
    }
}
