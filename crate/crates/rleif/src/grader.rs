//! Final-answer extraction, normalization, and comparison for step-by-step
//! solutions, plus step splitting.
//!
//! This is the correctness oracle used by SFT filtering, PRM label
//! synthesis, PPO rewards, and evaluation. Answers are reduced to a
//! canonical form ([`CanonicalAnswer`]) so that `104`, `104.`, and `$104`
//! compare equal, `\frac{2}{4}` matches `1/2`, and `(15,-11)` is an ordered
//! pair rather than a string.

use std::fmt;
use std::sync::LazyLock;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{Signed, Zero};
use regex::Regex;
use thiserror::Error;

/// Marker that introduces the authoritative answer line.
pub const ANSWER_MARKER: &str = "The answer is:";

/// Relative tolerance applied when a comparison involves a decimal
/// rendering of an exact value (e.g. `1/3` vs `0.333333333`).
const DECIMAL_REL_TOL_DENOM: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum GradeError {
    #[error("answer {raw:?} is empty after stripping adornments")]
    EmptyAnswer { raw: String },
    #[error("solution text is empty")]
    EmptySolution,
    #[error("step {index} is empty after trimming")]
    EmptyStep { index: usize },
}

/// A final answer reduced to canonical form.
///
/// Rationals are fully reduced with a positive denominator and are never
/// integral (those fold to `Integer`). Decimals store an exact
/// `mantissa / 10^scale` with `scale >= 1` and no trailing zero digits
/// (a decimal whose fraction strips away entirely folds to `Integer`).
/// Text is trimmed, lowercased, and free of `$`/`\boxed{}`/`\text{}`
/// wrappers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CanonicalAnswer {
    Integer(BigInt),
    Rational(BigRational),
    Decimal { mantissa: BigInt, scale: u32 },
    Tuple(Vec<CanonicalAnswer>),
    Text(String),
}

impl CanonicalAnswer {
    /// Exact rational value for the numeric kinds.
    pub fn to_rational(&self) -> Option<BigRational> {
        match self {
            CanonicalAnswer::Integer(n) => Some(BigRational::from_integer(n.clone())),
            CanonicalAnswer::Rational(r) => Some(r.clone()),
            CanonicalAnswer::Decimal { mantissa, scale } => {
                let denom = BigInt::from(10u32).pow(*scale);
                Some(BigRational::new(mantissa.clone(), denom))
            }
            _ => None,
        }
    }

    fn is_decimal(&self) -> bool {
        matches!(self, CanonicalAnswer::Decimal { .. })
    }

    /// Canonical string rendering. Normalizing the rendered form gives back
    /// an equal answer (tested as the idempotence property).
    pub fn render(&self) -> String {
        match self {
            CanonicalAnswer::Integer(n) => n.to_string(),
            CanonicalAnswer::Rational(r) => format!("{}/{}", r.numer(), r.denom()),
            CanonicalAnswer::Decimal { mantissa, scale } => {
                let sign = if mantissa.is_negative() { "-" } else { "" };
                let digits = mantissa.abs().to_string();
                let scale = *scale as usize;
                if digits.len() > scale {
                    let (int_part, frac_part) = digits.split_at(digits.len() - scale);
                    format!("{sign}{int_part}.{frac_part}")
                } else {
                    format!("{sign}0.{digits:0>width$}", width = scale)
                }
            }
            CanonicalAnswer::Tuple(elems) => {
                let inner: Vec<String> = elems.iter().map(|e| e.render()).collect();
                format!("({})", inner.join(","))
            }
            CanonicalAnswer::Text(s) => s.clone(),
        }
    }
}

impl fmt::Display for CanonicalAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// An ordered, non-empty list of solution steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepList {
    steps: Vec<String>,
}

impl StepList {
    pub fn new(steps: Vec<String>) -> Result<Self, GradeError> {
        if steps.is_empty() {
            return Err(GradeError::EmptySolution);
        }
        for (index, step) in steps.iter().enumerate() {
            if step.trim().is_empty() {
                return Err(GradeError::EmptyStep { index });
            }
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[String] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn into_steps(self) -> Vec<String> {
        self.steps
    }
}

/// Outcome of grading one solution text against a gold answer.
#[derive(Debug, Clone)]
pub struct GradeResult {
    /// Raw payload of the answer line, if one was found.
    pub extracted_raw: Option<String>,
    /// Canonical form of the extracted answer, if it normalized.
    pub extracted: Option<CanonicalAnswer>,
    /// Canonical form of the gold answer.
    pub gold: CanonicalAnswer,
    pub is_correct: bool,
}

/// Pull the final answer payload out of a solution text.
///
/// The last occurrence of `The answer is:` wins, taking the rest of that
/// line minus a trailing period. When no marker exists, the last
/// brace-balanced `\boxed{...}` payload is used instead. Returns `None`
/// when neither is present; no normalization is applied to the payload.
pub fn extract_final_answer(raw_text: &str) -> Option<String> {
    if let Some(pos) = raw_text.rfind(ANSWER_MARKER) {
        let after = &raw_text[pos + ANSWER_MARKER.len()..];
        let line = after.lines().next().unwrap_or("");
        return Some(trim_payload(line));
    }
    extract_last_boxed(raw_text).map(|s| trim_payload(&s))
}

fn trim_payload(line: &str) -> String {
    let mut payload = line.trim();
    if let Some(stripped) = payload.strip_suffix('.') {
        payload = stripped.trim_end();
    }
    payload.to_string()
}

fn extract_last_boxed(text: &str) -> Option<String> {
    let starts: Vec<usize> = text.match_indices("\\boxed{").map(|(i, _)| i).collect();
    for &start in starts.iter().rev() {
        let body_start = start + "\\boxed{".len();
        let mut depth = 1usize;
        for (off, ch) in text[body_start..].char_indices() {
            match ch {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(text[body_start..body_start + off].to_string());
                    }
                }
                _ => {}
            }
        }
    }
    None
}

/// Normalize a raw answer string into canonical form.
///
/// Strips `$`, a trailing period, whole-string `\boxed{...}` and
/// `\text{...}` wrappers, percent signs, thousands separators in plain
/// digit groups (`95,200` -> `95200`), and trailing unit words after a
/// number (`104 hours` -> `104`). The result is classified as integer,
/// reduced rational (also from `\frac{p}{q}`), exact decimal, parenthesized
/// tuple, or lowercase symbolic text.
pub fn normalize_answer(raw: &str) -> Result<CanonicalAnswer, GradeError> {
    let stripped = strip_adornments(raw);
    if stripped.is_empty() {
        return Err(GradeError::EmptyAnswer {
            raw: raw.to_string(),
        });
    }
    Ok(classify(&stripped))
}

fn strip_adornments(raw: &str) -> String {
    let mut s = raw.trim().to_string();
    loop {
        let before = s.clone();
        s = s.replace('$', "");
        s = s.trim().to_string();
        if let Some(stripped) = s.strip_suffix("\\%") {
            s = stripped.trim_end().to_string();
        } else if let Some(stripped) = s.strip_suffix('%') {
            s = stripped.trim_end().to_string();
        }
        if let Some(stripped) = s.strip_suffix('.') {
            s = stripped.trim_end().to_string();
        }
        s = unwrap_whole(&s, "\\boxed{");
        s = unwrap_whole(&s, "\\text{");
        if s == before {
            return s;
        }
    }
}

fn unwrap_whole(s: &str, prefix: &str) -> String {
    if let Some(inner) = s.strip_prefix(prefix) {
        if let Some(body) = inner.strip_suffix('}') {
            if braces_balanced(body) {
                return body.trim().to_string();
            }
        }
    }
    s.to_string()
}

fn braces_balanced(s: &str) -> bool {
    let mut depth = 0i64;
    for ch in s.chars() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
            _ => {}
        }
    }
    depth == 0
}

static INT_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[+-]?\d+$").unwrap());
static DEC_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^([+-]?)(\d*)\.(\d+)$").unwrap());
static SLASH_FRAC_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([+-]?\d+)\s*/\s*([+-]?\d+)$").unwrap());
static TEX_FRAC_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^([+-]?)\\[dt]?frac\s*\{\s*([+-]?\d+)\s*\}\s*\{\s*([+-]?\d+)\s*\}$").unwrap()
});
static THOUSANDS_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[+-]?\d{1,3}(,\d{3})+(\.\d+)?$").unwrap());

fn classify(s: &str) -> CanonicalAnswer {
    if let Some(ans) = classify_parenthesized(s) {
        return ans;
    }
    if let Some(n) = classify_numeric(s) {
        return n;
    }
    if let Some(head) = classify_numeric_head(s) {
        return head;
    }
    CanonicalAnswer::Text(s.trim().to_lowercase())
}

/// Parenthesized comma-lists become tuples; commas inside parentheses are
/// element separators, never thousands separators. A parenthesized single
/// value unwraps to that value.
fn classify_parenthesized(s: &str) -> Option<CanonicalAnswer> {
    let inner = s.strip_prefix('(')?.strip_suffix(')')?;
    // the wrapping parens must match each other
    let mut depth = 1i64;
    for ch in inner.chars() {
        match ch {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return None;
                }
            }
            _ => {}
        }
    }
    if depth != 1 {
        return None;
    }
    let mut elems = Vec::new();
    let mut start = 0usize;
    let mut level = 0i64;
    for (i, ch) in inner.char_indices() {
        match ch {
            '(' => level += 1,
            ')' => level -= 1,
            ',' if level == 0 => {
                elems.push(&inner[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    elems.push(&inner[start..]);
    if elems.len() == 1 {
        let stripped = strip_adornments(elems[0]);
        if stripped.is_empty() {
            return None;
        }
        return Some(classify(&stripped));
    }
    let mut out = Vec::with_capacity(elems.len());
    for elem in elems {
        let stripped = strip_adornments(elem);
        if stripped.is_empty() {
            return None;
        }
        out.push(classify(&stripped));
    }
    Some(CanonicalAnswer::Tuple(out))
}

fn classify_numeric(s: &str) -> Option<CanonicalAnswer> {
    let candidate = if THOUSANDS_RE.is_match(s) {
        s.replace(',', "")
    } else {
        s.to_string()
    };
    let t = candidate.as_str();
    if INT_RE.is_match(t) {
        return Some(CanonicalAnswer::Integer(t.parse().ok()?));
    }
    if let Some(caps) = SLASH_FRAC_RE.captures(t) {
        let p: BigInt = caps[1].parse().ok()?;
        let q: BigInt = caps[2].parse().ok()?;
        return rational_from_parts(p, q);
    }
    if let Some(caps) = TEX_FRAC_RE.captures(t) {
        let mut p: BigInt = caps[2].parse().ok()?;
        let q: BigInt = caps[3].parse().ok()?;
        if &caps[1] == "-" {
            p = -p;
        }
        return rational_from_parts(p, q);
    }
    if let Some(caps) = DEC_RE.captures(t) {
        let int_digits = if caps[2].is_empty() { "0" } else { &caps[2] };
        let frac_digits = &caps[3];
        let mut mantissa: BigInt = format!("{int_digits}{frac_digits}").parse().ok()?;
        if &caps[1] == "-" {
            mantissa = -mantissa;
        }
        return Some(canonical_decimal(mantissa, frac_digits.len() as u32));
    }
    None
}

fn rational_from_parts(p: BigInt, q: BigInt) -> Option<CanonicalAnswer> {
    if q.is_zero() {
        return None;
    }
    let r = BigRational::new(p, q);
    Some(if r.is_integer() {
        CanonicalAnswer::Integer(r.to_integer())
    } else {
        CanonicalAnswer::Rational(r)
    })
}

fn canonical_decimal(mantissa: BigInt, scale: u32) -> CanonicalAnswer {
    let ten = BigInt::from(10u32);
    let mut m = mantissa;
    let mut sc = scale;
    while sc > 0 && (&m % &ten).is_zero() {
        m /= &ten;
        sc -= 1;
    }
    if sc == 0 {
        CanonicalAnswer::Integer(m)
    } else {
        CanonicalAnswer::Decimal {
            mantissa: m,
            scale: sc,
        }
    }
}

/// `104 hours` -> integer 104: a numeric head followed only by alphabetic
/// unit words is stripped of the units.
fn classify_numeric_head(s: &str) -> Option<CanonicalAnswer> {
    let mut tokens = s.split_whitespace();
    let head = tokens.next()?;
    let mut saw_unit = false;
    for tok in tokens {
        if !tok.chars().all(|c| c.is_alphabetic()) {
            return None;
        }
        saw_unit = true;
    }
    if !saw_unit {
        return None;
    }
    let stripped = strip_adornments(head);
    classify_numeric(&stripped)
}

/// Structural equality on canonical answers.
///
/// Numeric kinds compare by exact rational value; when the comparison
/// involves a decimal (an inexact rendering of something like `1/3`) and
/// exact equality fails, a relative tolerance of 1e-6 applies. Tuples
/// compare elementwise in order; text compares exactly.
pub fn answers_equal(a: &CanonicalAnswer, b: &CanonicalAnswer) -> bool {
    match (a, b) {
        (CanonicalAnswer::Tuple(xs), CanonicalAnswer::Tuple(ys)) => {
            xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| answers_equal(x, y))
        }
        (CanonicalAnswer::Text(x), CanonicalAnswer::Text(y)) => x == y,
        _ => match (a.to_rational(), b.to_rational()) {
            (Some(ra), Some(rb)) => {
                if ra == rb {
                    true
                } else if a.is_decimal() || b.is_decimal() {
                    relatively_close(&ra, &rb)
                } else {
                    false
                }
            }
            _ => false,
        },
    }
}

fn relatively_close(a: &BigRational, b: &BigRational) -> bool {
    let diff = (a - b).abs();
    let scale = a.abs().max(b.abs());
    let tol = BigRational::new(BigInt::from(1u32), BigInt::from(DECIMAL_REL_TOL_DENOM));
    diff <= tol * scale
}

static STEP_LINE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*Step\s+\d+\s*:").unwrap());
static ENUM_LINE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*\d+[.)]\s+").unwrap());

fn is_answer_line(line: &str) -> bool {
    line.trim_start().starts_with(ANSWER_MARKER)
}

/// Split a solution text into its steps.
///
/// `Step <n>:` lines take precedence: each step spans from its marker line
/// to the next, with answer lines excluded. Failing that, enumerated lines
/// (`1.` / `1)`) split the same way, and otherwise blank-line paragraphs
/// are the steps. Non-empty input always yields at least one step.
pub fn split_steps(raw_text: &str) -> Result<StepList, GradeError> {
    if raw_text.trim().is_empty() {
        return Err(GradeError::EmptySolution);
    }
    let lines: Vec<&str> = raw_text.lines().collect();

    let marker_steps = |re: &Regex| -> Vec<String> {
        let marker_idx: Vec<usize> = lines
            .iter()
            .enumerate()
            .filter(|(_, l)| re.is_match(l))
            .map(|(i, _)| i)
            .collect();
        let mut bounds = Vec::new();
        if marker_idx.first().copied() != Some(0) {
            bounds.push(0);
        }
        bounds.extend(&marker_idx);
        bounds.push(lines.len());
        let mut steps = Vec::new();
        for w in bounds.windows(2) {
            let span: Vec<&str> = lines[w[0]..w[1]]
                .iter()
                .copied()
                .filter(|l| !is_answer_line(l))
                .collect();
            let text = span.join("\n").trim().to_string();
            if !text.is_empty() {
                steps.push(text);
            }
        }
        steps
    };

    let mut steps = if lines.iter().any(|l| STEP_LINE_RE.is_match(l)) {
        marker_steps(&STEP_LINE_RE)
    } else if lines.iter().any(|l| ENUM_LINE_RE.is_match(l)) {
        marker_steps(&ENUM_LINE_RE)
    } else {
        let mut paragraphs = Vec::new();
        let mut current: Vec<&str> = Vec::new();
        for line in &lines {
            if line.trim().is_empty() {
                if !current.is_empty() {
                    paragraphs.push(current.join("\n").trim().to_string());
                    current.clear();
                }
            } else {
                current.push(line);
            }
        }
        if !current.is_empty() {
            paragraphs.push(current.join("\n").trim().to_string());
        }
        paragraphs.retain(|p| !p.is_empty());
        paragraphs
    };

    if steps.is_empty() {
        steps.push(raw_text.trim().to_string());
    }
    StepList::new(steps)
}

/// Grade a solution text against a gold answer string.
///
/// The gold answer must normalize (that is the caller's precondition); any
/// failure on the solution side — no answer line, unnormalizable payload —
/// simply grades as incorrect.
pub fn grade(raw_text: &str, gold: &str) -> Result<GradeResult, GradeError> {
    let gold_canonical = normalize_answer(gold)?;
    let extracted_raw = extract_final_answer(raw_text);
    let extracted = extracted_raw
        .as_deref()
        .and_then(|raw| normalize_answer(raw).ok());
    let is_correct = extracted
        .as_ref()
        .is_some_and(|ans| answers_equal(ans, &gold_canonical));
    Ok(GradeResult {
        extracted_raw,
        extracted,
        gold: gold_canonical,
        is_correct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn int(n: i64) -> CanonicalAnswer {
        CanonicalAnswer::Integer(BigInt::from(n))
    }

    #[test]
    fn extracts_marker_payload() {
        let text = "Total hours = 104 hours. The answer is: 104.";
        assert_eq!(extract_final_answer(text).as_deref(), Some("104"));
    }

    #[test]
    fn marker_outranks_boxed() {
        let text = "$(x,y) = \\boxed{(15, -11)}$\nThe answer is: (15,-11).";
        assert_eq!(extract_final_answer(text).as_deref(), Some("(15,-11)"));
    }

    #[test]
    fn no_marker_no_boxed_is_absent() {
        assert_eq!(extract_final_answer("no marker here"), None);
    }

    #[test]
    fn last_marker_occurrence_wins() {
        let text = "The answer is: 2. ... The answer is: 3.";
        assert_eq!(extract_final_answer(text).as_deref(), Some("3"));
    }

    #[test]
    fn boxed_fallback_is_brace_balanced() {
        let text = "so we get \\boxed{\\text{even}} at the end";
        assert_eq!(extract_final_answer(text).as_deref(), Some("\\text{even}"));
    }

    #[test]
    fn normalizes_text_wrapper() {
        assert_eq!(
            normalize_answer("\\text{even}").unwrap(),
            CanonicalAnswer::Text("even".into())
        );
    }

    #[test]
    fn normalizes_tuple() {
        assert_eq!(
            normalize_answer("(15,-11)").unwrap(),
            CanonicalAnswer::Tuple(vec![int(15), int(-11)])
        );
    }

    #[test]
    fn normalizes_tuple_with_spaces_and_dollars() {
        assert_eq!(
            normalize_answer("$\\boxed{(15, -11)}$").unwrap(),
            CanonicalAnswer::Tuple(vec![int(15), int(-11)])
        );
    }

    #[test]
    fn reduces_tex_fraction() {
        // hand reduction: 2/4 = 1/2
        assert_eq!(
            normalize_answer("\\frac{2}{4}").unwrap(),
            CanonicalAnswer::Rational(BigRational::new(1.into(), 2.into()))
        );
    }

    #[test]
    fn strips_trailing_period() {
        assert_eq!(normalize_answer("104.").unwrap(), int(104));
    }

    #[test]
    fn strips_thousands_separators() {
        assert_eq!(normalize_answer("95,200").unwrap(), int(95200));
    }

    #[test]
    fn strips_currency_and_units() {
        assert_eq!(normalize_answer("$40").unwrap(), int(40));
        assert_eq!(normalize_answer("104 hours").unwrap(), int(104));
        assert_eq!(normalize_answer("95\\%").unwrap(), int(95));
    }

    #[test]
    fn integral_fraction_folds_to_integer() {
        assert_eq!(normalize_answer("4/2").unwrap(), int(2));
    }

    #[test]
    fn trailing_zero_decimal_folds_to_integer() {
        assert_eq!(normalize_answer("104.0").unwrap(), int(104));
    }

    #[test]
    fn empty_after_stripping_is_an_error() {
        assert!(normalize_answer("$.").is_err());
        assert!(normalize_answer("   ").is_err());
    }

    #[test]
    fn equal_integer_and_decimal() {
        let a = int(104);
        let b = CanonicalAnswer::Decimal {
            mantissa: BigInt::from(1040),
            scale: 1,
        };
        assert!(answers_equal(&a, &b));
    }

    #[test]
    fn equal_rational_and_decimal() {
        let a = normalize_answer("1/2").unwrap();
        let b = normalize_answer("0.5").unwrap();
        assert!(answers_equal(&a, &b));
    }

    #[test]
    fn tuple_order_matters() {
        let a = normalize_answer("(15,-11)").unwrap();
        let b = normalize_answer("(-11,15)").unwrap();
        assert!(!answers_equal(&a, &b));
    }

    #[test]
    fn decimal_rendering_of_rational_within_tolerance() {
        let third = normalize_answer("1/3").unwrap();
        let close = normalize_answer("0.33333333").unwrap();
        let far = normalize_answer("0.3").unwrap();
        assert!(answers_equal(&third, &close));
        assert!(!answers_equal(&third, &far));
    }

    #[test]
    fn exact_kinds_do_not_get_tolerance() {
        let a = normalize_answer("1000000/1000001").unwrap();
        assert!(!answers_equal(&a, &int(1)));
    }

    #[test]
    fn splits_step_marker_lines() {
        let text = "Step 1: First thing.\nDetail one.\nStep 2: Second thing.\nThe answer is: 7.";
        let steps = split_steps(text).unwrap();
        assert_eq!(steps.len(), 2);
        assert!(steps.steps()[0].starts_with("Step 1:"));
        assert!(steps.steps()[1].starts_with("Step 2:"));
        assert!(!steps.steps()[1].contains("The answer is:"));
    }

    #[test]
    fn splits_enumerated_lines() {
        let steps = split_steps("1. do x\n2. do y\nThe answer is: 3.").unwrap();
        assert_eq!(steps.len(), 2);
        assert_eq!(steps.steps()[0], "1. do x");
        assert_eq!(steps.steps()[1], "2. do y");
    }

    #[test]
    fn single_paragraph_is_one_step() {
        let steps = split_steps("just one block of reasoning with no markers").unwrap();
        assert_eq!(steps.len(), 1);
    }

    #[test]
    fn empty_solution_is_an_error() {
        assert!(split_steps("").is_err());
        assert!(split_steps("  \n ").is_err());
    }

    #[test]
    fn answer_only_text_still_yields_a_step() {
        let steps = split_steps("The answer is: 3.").unwrap();
        assert_eq!(steps.len(), 1);
    }

    #[test]
    fn grade_no_marker_is_incorrect() {
        let result = grade("some text without any marker", "40").unwrap();
        assert!(!result.is_correct);
        assert!(result.extracted_raw.is_none());
    }

    #[test]
    fn grade_requires_normalizable_gold() {
        assert!(grade("The answer is: 3.", " ").is_err());
    }

    #[test]
    fn grade_matches_units_and_formatting() {
        let result = grade("So she makes $18 total. The answer is: 18.", "18").unwrap();
        assert!(result.is_correct);
    }

    // Strategy over canonical answers that stay canonical under rendering.
    fn canonical_answer_strategy() -> impl Strategy<Value = CanonicalAnswer> {
        let leaf = prop_oneof![
            any::<i64>().prop_map(int),
            (any::<i32>(), 1u32..10_000).prop_map(|(p, q)| {
                rational_from_parts(BigInt::from(p), BigInt::from(q)).unwrap()
            }),
            (any::<i32>(), 1u32..6).prop_map(|(m, s)| canonical_decimal(BigInt::from(m), s)),
            "[a-z]{1,8}( [a-z]{1,8})?".prop_map(|s| normalize_answer(&s).unwrap()),
        ];
        leaf.prop_recursive(2, 8, 4, |inner| {
            prop::collection::vec(inner, 2..4).prop_map(CanonicalAnswer::Tuple)
        })
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent_on_rendered_output(ans in canonical_answer_strategy()) {
            let rendered = ans.render();
            let renormalized = normalize_answer(&rendered).unwrap();
            prop_assert_eq!(&renormalized, &ans);
            prop_assert!(answers_equal(&renormalized, &ans));
        }

        #[test]
        fn answers_equal_is_reflexive_and_symmetric(
            a in canonical_answer_strategy(),
            b in canonical_answer_strategy(),
        ) {
            prop_assert!(answers_equal(&a, &a));
            prop_assert_eq!(answers_equal(&a, &b), answers_equal(&b, &a));
        }

        #[test]
        fn grade_never_panics_on_arbitrary_text(text in any::<String>()) {
            let _ = grade(&text, "42").unwrap();
        }

        #[test]
        fn extract_never_panics(text in any::<String>()) {
            let _ = extract_final_answer(&text);
            let _ = split_steps(&text);
        }
    }

    #[test]
    fn answers_equal_is_transitive_on_interesting_pool() {
        let pool: Vec<CanonicalAnswer> = [
            "104",
            "104.0",
            "104.00",
            "1/2",
            "0.5",
            "2/4",
            "even",
            "EVEN",
            "(1,2)",
            "(1.0,2)",
            "3",
            "-3",
            "0",
            "0.0",
            "1/3",
            "0.333333333",
        ]
        .iter()
        .map(|s| normalize_answer(s).unwrap())
        .collect();
        for a in &pool {
            for b in &pool {
                for c in &pool {
                    if answers_equal(a, b) && answers_equal(b, c) {
                        assert!(
                            answers_equal(a, c),
                            "transitivity violated: {a} ~ {b} ~ {c}"
                        );
                    }
                }
            }
        }
    }
}
